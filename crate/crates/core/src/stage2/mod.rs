//! Stage 2: attention-based re-localization of the query inside a candidate reference video.

pub mod bm;
pub mod loss;
pub mod model;
pub mod train;

pub use bm::{bm_sample, BmFeatureMap, BmGrid};
pub use loss::{grid_instances, gt_label_map, rlm_loss, stage2_loss_and_grad, RlmLoss};
pub use model::{ScoreMaps, Stage2Config, Stage2Grad, Stage2Model};
pub use train::{
    evaluate_pairs, load_stage2, save_stage2, train_stage2, train_stage2_from, Stage2Data,
    Stage2Report, Stage2TrainConfig,
};
