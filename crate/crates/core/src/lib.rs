//! Core of the question-answer generation studio.
//!
//! The crate is organised along the workflow a user walks through:
//!
//! - [`corpus`]: document groups, documents and their heading/paragraph elements
//! - [`chunker`]: token-bounded chunks used as generation context
//! - [`llm_gateway`]: chat-completions client with retry and a provider registry
//! - [`promptkit`]: prompt construction, response parsing and the generation run
//! - [`metrics`]: BLEU, ROUGE, METEOR, TF-IDF and count cosine scoring
//! - [`attribution`]: sentence splitting, token highlights and source-sentence selection
//! - [`datastore`]: file-backed workspace persistence and training exports
//! - [`trainjobs`]: external fine-tuning command rendering and supervision
//! - [`explorer`]: side-by-side model comparison

pub mod attribution;
pub mod chunker;
pub mod corpus;
pub mod datastore;
pub mod explorer;
pub mod llm_gateway;
pub mod metrics;
pub mod promptkit;
pub mod text;
pub mod trainjobs;

mod ids;

pub use ids::short_hash;
