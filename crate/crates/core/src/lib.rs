pub mod analyzer_bridge;
pub mod cfg;
pub mod encoding;
pub mod extraction;
pub mod feasibility;
mod jsonx;
pub mod llm_client;
pub mod pipeline;
pub mod solver;
pub mod summaries;
pub mod summary_validation;
mod syntax;
pub mod triage;

pub use syntax::Language;
