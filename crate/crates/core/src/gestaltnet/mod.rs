pub mod arch;
pub mod network;

pub use arch::{ArchitectureDescriptor, ArchitectureOptions, LayerSpec, PoolWindow};
pub use network::{ForwardTrace, Gradients, LayerState, Network};
pub mod model;
pub mod train;

pub use model::{predict_region, Phase, RegionModel};
pub use train::{
    finetune_default, finetune_region, pretrain_region, top1_accuracy, train_step, transfer, write_metrics,
    EpochMetrics, LabeledCrops, TrainingSchedule,
};
