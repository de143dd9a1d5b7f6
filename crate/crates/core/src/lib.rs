//! Ontology-guided query expansion over a BM25 engine, with the evaluation
//! harness used to measure it.

pub mod context;
pub mod corpus;
pub mod diskcache;
pub mod evalkit;
pub mod index;
pub mod llmgate;
pub mod ontology;
pub mod pipeline;
pub mod runfile;
pub mod throttle;
