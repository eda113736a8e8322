//! The perspective grid of one viewpoint and everything defined over it:
//! outpainting order, neighbor sets, equirectangular assembly and the
//! consistency metrics used to validate generated data.

mod assemble;
mod grid;
mod metrics;

pub use assemble::{assemble_equirect, assemble_equirect_with, equirect_direction};
pub use grid::{
    grid_rotation, neighbor_set, traversal_queue, traversal_queue_as_printed, NeighborSet, TraversalQueue, ViewGrid,
};
pub use metrics::{
    directed_seam_error, seam_error, seam_error_with, trajectory_consistency, ConsistencyReport, SeamEdge, SeamReport,
};
