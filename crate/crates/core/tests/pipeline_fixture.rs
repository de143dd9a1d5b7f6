mod support;

use bmq_core::corpus::Query;
use bmq_core::llmgate::LlmSettings;
use bmq_core::ontology::{ConceptHit, Cui, OntologyBackend, OntologyError, RawDefinition, RawRelation};
use bmq_core::pipeline::{run_batch, Backends, Fallback, Mode, PipelineConfig, Stage};
use support::{minimed_index, minimed_llm, minimed_ontology, minimed_queries};

fn batch(mode: Mode) -> bmq_core::pipeline::BatchOutcome {
    let llm = minimed_llm();
    let onto = minimed_ontology();
    let settings = LlmSettings::default();
    let backends = Backends {
        llm: Some(&llm),
        ontology: Some(&onto),
        llm_settings: &settings,
    };
    run_batch(&minimed_queries(), &minimed_index(), &PipelineConfig::for_mode(mode), &backends)
}

#[test]
fn repeated_runs_are_identical_across_thread_counts() {
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let a = one.install(|| batch(Mode::Full));
    let b = four.install(|| batch(Mode::Full));
    assert_eq!(a.run.to_trec_string(), b.run.to_trec_string());
    assert_eq!(a.expansions, b.expansions);
}

#[test]
fn mode_contexts_are_projections_of_full() {
    let full = batch(Mode::Full);
    let defs = batch(Mode::DefinitionsOnly);
    let rels = batch(Mode::RelationsOnly);
    let raw = batch(Mode::NoLlm);
    for i in 0..full.expansions.len() {
        let f = &full.expansions[i];
        let (d, r, n) = (&defs.expansions[i], &rels.expansions[i], &raw.expansions[i]);
        assert_eq!(d.terms, f.terms);
        assert_eq!(d.concepts, f.concepts);
        assert_eq!(d.context.definitions_text, f.context.definitions_text);
        assert!(d.context.relations_text.is_empty());
        assert_eq!(r.context.relations_text, f.context.relations_text);
        assert!(r.context.definitions_text.is_empty());
        assert_eq!(n.context, f.context);
        // without the LLM the expansion is the context itself
        if n.fallback.is_none() {
            assert_eq!(n.expansion.as_deref(), Some(n.context.combined().as_str()));
            assert!(n.pseudo_doc.is_none());
            assert_eq!(n.alpha, 50);
        }
    }
}

#[test]
fn every_query_is_expanded_or_falls_back_to_raw_text() {
    for mode in Mode::ALL {
        let out = batch(mode);
        assert_eq!(out.run.queries.len(), minimed_queries().len());
        for e in &out.expansions {
            match &e.fallback {
                None => {
                    let p = e.expansion.as_deref().unwrap();
                    let head = vec![e.original.text.as_str(); e.alpha as usize].join(" ");
                    assert_eq!(e.composed_text, format!("{head} {p}"));
                }
                Some(_) => {
                    assert_eq!(e.composed_text, e.original.text);
                    assert!(e.expansion.is_none());
                }
            }
        }
        assert_eq!(out.failure_count(), 0);
    }
}

#[test]
fn plain_mode_never_expands() {
    let out = batch(Mode::PlainBm25);
    assert!(out.expansions.iter().all(|e| e.fallback == Some(Fallback::NotExpanded)));
}

#[test]
fn unlinkable_query_uses_raw_text() {
    let out = batch(Mode::Full);
    let e = out.expansions.iter().find(|e| e.original.text == "Native Americans").unwrap();
    assert!(matches!(e.fallback, Some(Fallback::NoTerms | Fallback::NoConcepts)));
    assert_eq!(e.composed_text, "Native Americans");
}

#[test]
fn unparseable_extraction_degrades() {
    let out = batch(Mode::Full);
    let e = out.expansions.iter().find(|e| e.original.text == "fatty liver disease").unwrap();
    assert!(e.degraded_extraction);
    assert_eq!(e.fallback, Some(Fallback::NoTerms));
}

#[test]
fn zero_queries_give_an_empty_run() {
    let llm = minimed_llm();
    let settings = LlmSettings::default();
    let backends = Backends {
        llm: Some(&llm),
        ontology: Some(&minimed_ontology()),
        llm_settings: &settings,
    };
    let out = run_batch(&[], &minimed_index(), &PipelineConfig::for_mode(Mode::Full), &backends);
    assert!(out.run.queries.is_empty());
    assert_eq!(out.run.to_trec_string(), "");
}

struct Broken;

impl OntologyBackend for Broken {
    fn search_exact(&self, _: &str) -> Result<Vec<ConceptHit>, OntologyError> {
        Err(OntologyError::BackendUnavailable("connection refused".into()))
    }
    fn definitions(&self, _: &Cui) -> Result<Vec<RawDefinition>, OntologyError> {
        unreachable!()
    }
    fn relations(&self, _: &Cui, _: usize) -> Result<Vec<RawRelation>, OntologyError> {
        unreachable!()
    }
    fn concept_name(&self, _: &Cui) -> Result<Option<String>, OntologyError> {
        unreachable!()
    }
}

#[test]
fn backend_failure_is_isolated_per_query() {
    let llm = minimed_llm();
    let settings = LlmSettings::default();
    let backends = Backends {
        llm: Some(&llm),
        ontology: Some(&Broken),
        llm_settings: &settings,
    };
    let queries = vec![Query::new("a", "breast cancer survival"), Query::new("b", "Native Americans")];
    let out = run_batch(&queries, &minimed_index(), &PipelineConfig::for_mode(Mode::Full), &backends);
    assert_eq!(out.run.queries.len(), 2);
    let (stage, _) = out.expansions[0].failure().unwrap();
    assert_eq!(stage, Stage::Linking);
    assert_eq!(out.expansions[0].composed_text, "breast cancer survival");
}
