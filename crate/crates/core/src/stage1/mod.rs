//! Stage 1: two-branch auto-encoder producing query and reference embeddings.

pub mod loss;
pub mod model;
pub mod train;

pub use loss::{
    cosine, make_similarity_label, max_cos_similarity, recon_loss, similarity_loss, stage1_loss,
    stage1_loss_and_grad, Stage1Grad, Stage1Loss,
};
pub use model::{Branch, BranchGrad, EmbeddingPair, Stage1Config, Stage1Model};
pub use train::{
    load_stage1, save_stage1, train_stage1, train_stage1_from, PairSampler, Stage1Report,
    Stage1TrainConfig,
};
