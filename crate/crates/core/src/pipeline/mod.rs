//! Four-stage refinement pipeline: base segmentation training, synthetic
//! error generation, adversarial label-appearance simulation, and refinement
//! training, plus sliding-window inference, the semi-supervised extension,
//! and the error-rate grid search.

mod augment;
mod config;
mod dataset;
mod infer;
mod run;
mod sampling;
mod train;

pub use augment::{apply_transform_mask, apply_transform_tensor, sample_transform, SpatialTransform};
pub use config::{AblationMode, AugmentFlags, ErrorMode, ExperimentConfig};
pub use dataset::{load_cases, CaseData};
pub use infer::{predict_initial, refine, sliding_window_infer, window_origins};
pub use run::{
    grid_search, run_pipeline, run_semi_supervised, GridRow, PipelineArtifacts, VariedRate,
};
pub use sampling::{extract_patch_mask, extract_patch_volume, random_offset, RefinementSample};
pub use train::{train_base, train_lasn, train_refiner, LasnModels, RunLogger, TrainedModel};
