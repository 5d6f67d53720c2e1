//! Multi-frame point-cloud pooling and region network forward passes.
//!
//! Proposals from the current frame are propagated backwards along their
//! estimated velocity into cylindrical regions, points are gathered from each
//! region through a voxel hash grid, and the pooled sets are encoded and
//! passed through attention blocks with bidirectional cross-frame
//! aggregation.

pub mod bench;
pub mod encoding;
pub mod io;
pub mod mlp;
pub mod model;
pub mod motion;
pub mod network;
pub mod par;
pub mod pipeline;
pub mod pooling;
pub mod sim;
pub mod tensor;

pub use model::{
    key_points, KeyPoints, ModelError, Point3, PointCloudFrame, Proposal, SequenceWindow,
};
pub use motion::{
    evaluate_recall, point_in_region, propagate, propagate_all, CylindricalRegion, MotionError,
    PropagationConfig, RecallReport,
};
pub use pipeline::{
    run_pipeline, NetworkWeights, PipelineConfig, PipelineError, PipelineOutput, RunOptions,
};
pub use pooling::{
    build_grid, build_grids, pool_naive, pool_optimized, PooledProposal, PoolingError, VoxelGrid,
};
pub use tensor::{Matrix, NnError};
