//! Prompt templates. Rendering is pure string assembly; golden tests pin the
//! exact bytes.

use crate::context::SerializedContext;

pub const EXTRACTION_SYSTEM: &str = "You are a biomedical information retrieval assistant.";

pub const EXTRACTION_INSTRUCTION: &str = "Your task: Extract key medical terms from the query. \
If the query lacks significant medical terms, return an empty list.";

pub const FORMAT_SUFFIX: &str = "Strictly follow the output format.\nOutput format:\nTerms: [term1, term2, ...]";

/// The five worked examples shown to the model, as (query, terms).
pub const IN_CONTEXT_EXAMPLES: [(&str, &[&str]); 5] = [
    (
        "Dietary Treatment of Crohn's Disease",
        &["Dietary Treatment", "Crohn's Disease"],
    ),
    (
        "Neurobiology of Artificial Sweeteners",
        &["Neurobiology", "Artificial Sweeteners"],
    ),
    (
        "Boosting Good Bacteria in the Colon Without Probiotics",
        &["Good Bacteria", "Probiotics"],
    ),
    ("Veggies vs. Cancer", &["Cancer"]),
    ("Native Americans", &[]),
];

pub const GENERATION_INSTRUCTION: &str =
    "Given a query, relevant medical definitions and relationships; write an answer to the query.";

pub const COT_SUFFIX: &str = "Give the rationale before answering";

pub const PARAPHRASE_INSTRUCTION: &str = "Paraphrase the following query.";

pub fn render_terms_line(terms: &[&str]) -> String {
    format!("Terms: [{}]", terms.join(", "))
}

pub fn render_extraction_user(query: &str) -> String {
    let mut s = String::new();
    s.push_str(EXTRACTION_INSTRUCTION);
    s.push('\n');
    s.push_str(FORMAT_SUFFIX);
    s.push_str("\n\n");
    for (q, terms) in IN_CONTEXT_EXAMPLES {
        s.push_str("Query: ");
        s.push_str(q);
        s.push('\n');
        s.push_str(&render_terms_line(terms));
        s.push_str("\n\n");
    }
    s.push_str("Query: ");
    s.push_str(query);
    s.push_str("\nTerms:");
    s
}

/// Retry prompt after an unparseable reply: the original prompt with the
/// format constraint repeated at the end.
pub fn render_extraction_retry(query: &str) -> String {
    format!("{}\n\n{}", render_extraction_user(query), FORMAT_SUFFIX)
}

pub fn render_generation_user(query: &str, context: &SerializedContext, cot: bool) -> String {
    let mut s = format!(
        "{GENERATION_INSTRUCTION}\n\nQuery: {query}\n\nDefinitions: {}\n\nRelationships: {}",
        context.definitions_text, context.relations_text
    );
    if cot {
        s.push_str("\n\n");
        s.push_str(COT_SUFFIX);
    }
    s
}

pub fn render_paraphrase_user(query: &str) -> String {
    format!("{PARAPHRASE_INSTRUCTION}\nQuery: {query}\nParaphrased query:")
}
