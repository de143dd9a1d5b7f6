mod support;

use bmq_core::context::{serialize_definitions, serialize_relations, EDGE_PREFIX};
use bmq_core::ontology::{Concept, Cui, DefinitionEntry, RelationLabel, SemanticGraph, SourceVocabulary};
use support::{golden, minimed_ontology, render_definitions, render_relations};

#[test]
fn filariasis_definitions_are_byte_exact() {
    let store = minimed_ontology();
    assert_eq!(render_definitions(&store, "Lymphatic Filariasis"), golden("definitions_filariasis.txt"));
}

#[test]
fn type1_diabetes_definitions_keep_backend_order() {
    let store = minimed_ontology();
    assert_eq!(render_definitions(&store, "Type 1 Diabetes"), golden("definitions_type1_diabetes.txt"));
}

#[test]
fn breast_carcinoma_relations_are_byte_exact() {
    let store = minimed_ontology();
    let text = render_relations(&store, "Carcinoma of breast");
    assert_eq!(text, golden("relations_breast_carcinoma.txt"));
    // the off-whitelist diagnostic edge is gone
    assert!(!text.contains("Mammography"));
}

#[test]
fn edge_prefix_is_four_spaces_and_corner() {
    assert_eq!(EDGE_PREFIX.as_bytes(), b"    \xE2\x88\x9F ");
}

#[test]
fn multiple_concepts_join_with_newlines() {
    let mk = |cui: &str, name: &str, text: &str| Concept {
        cui: Cui::new(cui).unwrap(),
        preferred_name: name.into(),
        definitions: vec![DefinitionEntry { text: text.into(), source: SourceVocabulary::Msh }],
    };
    let s = serialize_definitions(&[mk("C0000001", "A", "a."), mk("C0000002", "B", "b.")]);
    assert_eq!(s, "A: a. (Source: MeSH);\nB: b. (Source: MeSH);");

    let mut g1 = SemanticGraph::new(Cui::new("C0000001").unwrap(), "A");
    g1.add_edge(Cui::new("C0000003").unwrap(), "X", RelationLabel::bare("CHD"));
    let mut g2 = SemanticGraph::new(Cui::new("C0000002").unwrap(), "B");
    g2.add_edge(Cui::new("C0000004").unwrap(), "Y", RelationLabel::parse("RO:has_associated_morphology"));
    let s = serialize_relations(&[g1, g2]).unwrap();
    assert_eq!(
        s,
        "A:\n    \u{221F} has child: X\nB:\n    \u{221F} has associated morphology: Y"
    );
}

#[test]
fn concepts_without_material_are_skipped() {
    let bare = Concept {
        cui: Cui::new("C0000001").unwrap(),
        preferred_name: "Nothing".into(),
        definitions: vec![],
    };
    assert_eq!(serialize_definitions(&[bare]), "");
    let g = SemanticGraph::new(Cui::new("C0000001").unwrap(), "Lonely");
    assert_eq!(serialize_relations(&[g]).unwrap(), "");
}
