//! Data model and file formats: interaction logs, frozen modal embedding
//! tables, id vocabularies, padded batches and the synthetic generator.

mod batch;
mod interactions;
mod memb;
pub mod synthetic;
mod vocab;

pub use batch::{batch_iterator, Batch, BatchIter, PreparedSample};
pub use interactions::{
    load_interactions, parse_interactions, write_interactions, Sample,
};
pub use memb::{load_modal_embeddings, write_modal_embeddings, ModalEmbeddingTable, Modality};
pub use synthetic::{generate_synthetic, SyntheticSpec};
pub use vocab::Vocab;
