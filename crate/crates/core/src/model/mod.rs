//! The knowledge-embedded transformer: configuration, parameters, the
//! forward pipeline, and checkpoint persistence.

pub mod checkpoint;
pub mod config;
pub mod forward;
pub mod params;
pub mod repr;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{ClassifierMode, FirstFrameMode, ModelConfig, TemporalRowMode};
pub use forward::{
    aggregation_windows, run_aggregation_window, run_temporal_window, AggWindow, TemporalWindow,
    forward_video, skel_forward, spatial_embedding, temporal_embedding, ForwardOptions,
    FrameActivations, FrozenDecisions, LossBreakdown, TaskMode, VideoForward,
};
pub use params::{ClassifierHead, ModelIds, ModelParams};
pub use repr::{box_to_spatial_map, build_relationship_representation, occupancy_mask};
