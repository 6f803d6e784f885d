//! Stage-two conditional autoregressive transformer over image tokens,
//! trained on image embeddings only.

mod model;
mod train;

pub use model::{
    GenConfig, GenModel, FULL_SCALE_COCO_D_MODEL, FULL_SCALE_COCO_LAYERS,
    FULL_SCALE_IMAGENET_D_MODEL, FULL_SCALE_IMAGENET_LAYERS, FULL_SCALE_LAMBDA,
};
pub use train::{
    clip_guidance_loss, gen_loss, prepare_examples, sequence_nll, train_gen, GenBatch, GenExample,
    GenLoss, GenLossVars, GenTrainReport, GenTrainer,
};
