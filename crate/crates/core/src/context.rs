//! Text rendering of ontology material for the generation prompt.
//!
//! Definitions render as one line per concept:
//!
//! ```text
//! Name: first definition (Source: MeSH); second definition (Source: CRISP Thesaurus);
//! ```
//!
//! Relations render as a header line per concept followed by one indented
//! line per edge:
//!
//! ```text
//! Carcinoma of breast:
//!     ∟ has parent: Infiltrating duct carcinoma
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ontology::{Concept, RelationLabel, SemanticGraph};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ContextError {
    #[error("relation label `{0}` has no phrase; graph was not pruned")]
    UnknownLabel(String),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SerializedContext {
    pub definitions_text: String,
    pub relations_text: String,
}

impl SerializedContext {
    pub fn is_empty(&self) -> bool {
        self.definitions_text.is_empty() && self.relations_text.is_empty()
    }

    /// Both parts joined by a newline, skipping empty ones.
    pub fn combined(&self) -> String {
        [self.definitions_text.as_str(), self.relations_text.as_str()]
            .into_iter()
            .filter(|s| !s.is_empty())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

pub const EDGE_PREFIX: &str = "    \u{221F} ";

pub fn relation_phrase(label: &RelationLabel) -> Result<&'static str, ContextError> {
    match (label.code.as_str(), label.qualifier.as_deref()) {
        ("PAR", None) => Ok("has parent"),
        ("CHD", None) => Ok("has child"),
        ("SY", None) => Ok("is synonymous with"),
        ("RO", None) => Ok("is related to"),
        ("RO", Some("has_associated_morphology")) => Ok("has associated morphology"),
        _ => Err(ContextError::UnknownLabel(label.canonical())),
    }
}

pub fn serialize_definitions(concepts: &[Concept]) -> String {
    let mut blocks = Vec::new();
    for c in concepts.iter().filter(|c| !c.definitions.is_empty()) {
        let mut line = format!("{}:", c.preferred_name);
        for d in &c.definitions {
            line.push(' ');
            line.push_str(&d.text);
            line.push_str(" (Source: ");
            line.push_str(d.source.display_name());
            line.push_str(");");
        }
        blocks.push(line);
    }
    blocks.join("\n")
}

pub fn serialize_relations(graphs: &[SemanticGraph]) -> Result<String, ContextError> {
    let mut blocks = Vec::new();
    for g in graphs.iter().filter(|g| !g.edges.is_empty()) {
        let mut block = format!("{}:", g.center_name());
        for e in &g.edges {
            let phrase = relation_phrase(&e.label)?;
            let neighbour = if e.to == g.center { &e.from } else { &e.to };
            let name = g.node_name(neighbour).unwrap_or(neighbour.as_str());
            block.push('\n');
            block.push_str(EDGE_PREFIX);
            block.push_str(phrase);
            block.push_str(": ");
            block.push_str(name);
        }
        blocks.push(block);
    }
    Ok(blocks.join("\n"))
}
