//! Multi-head image classifier: one feature extractor (or one per attribute)
//! feeding a small MLP head per attribute, trained with summed cross-entropy.

mod layers;
mod network;
mod tensor;
mod train;

pub use layers::{
    BasicBlock, BatchNorm, Conv2d, Flatten, GlobalAvgPool, Layer, Linear, MaxPool2d, Relu, Sequential,
};
pub use network::{BackboneKind, BackboneSpec, HeadSpec, ModelSpec, ModelState, MultiHeadModel, Variant};
pub use tensor::{gemm, Param, Scalar, Tensor};
pub use train::{
    argmax, cross_entropy, extract_activations, multi_head_loss, select_best_epoch, train, Adam, Checkpoint,
    EpochRecord, ImageSet, TrainConfig, TrainingLog,
};
