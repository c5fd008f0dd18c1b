//! Architectures, loss, optimizer and checkpoints.

mod checkpoint;
mod loss;
mod model;
mod rmsprop;
mod spec;

pub use checkpoint::{
    load_checkpoint, read_checkpoint_manifest, save_checkpoint, CheckpointManifest, TensorEntry,
    CHECKPOINT_FORMAT, CHECKPOINT_MANIFEST,
};
pub use loss::{
    cross_entropy, loss_and_gradient, one_hot, softmax, softmax_ce_gradient,
    weighted_cross_entropy, weighted_softmax_ce_gradient, LossOutput, PROB_FLOOR,
};
pub use model::{ForwardCache, LayerState, Network};
pub use rmsprop::{rmsprop_step, RmsProp};
pub use spec::{
    build_alexnet_scaled, build_arch, build_deep_convnet, build_deep_convnet_with,
    build_vgg16_scaled, default_divisor, ActShape, Arch, DeepConvNetLayout, FcVariant, LayerSpec,
    NetworkSpec, Scale, NUM_CLASSES,
};
