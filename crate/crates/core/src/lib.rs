//! Anchor geometry, label assignment and missed-detection analysis for
//! anchor-based object detectors.

pub mod anchors;
pub mod assignment;
pub mod formats;
pub mod geometry;
pub mod mmd;
pub mod probe;
pub mod synthdet;

pub use anchors::{generate_anchors, Anchor, AnchorSet, NeighborKind, PyramidConfig};
pub use geometry::{iou, AxisWarp, BBox, ImageExtent};
