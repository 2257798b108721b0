//! Survey preference data: embedding stores, group datasets and
//! question-atomic context/target splits.

mod dataset;
mod embeddings;
mod split;

pub use dataset::{
    build_preference_vector, load_group_dataset, GroupDataset, GroupFile, QuestionBlock,
    QuestionRecord, Viewpoint,
};
pub use embeddings::{EmbeddingStore, EMBEDDING_MAGIC, EMBEDDING_VERSION};
pub use split::{split_context_target, QuestionSample, Split, SplitSpec};
