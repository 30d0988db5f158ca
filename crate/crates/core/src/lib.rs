//! Imagery engine and agent harness for odd-one-out mental-rotation tasks.

pub mod agents;
pub mod dataset;
pub mod eval;
mod font;
pub mod forge;
pub mod geometry;
pub mod probes;
pub mod protocol;
pub mod render;
pub mod report;
pub mod session;

pub use geometry::{
    apply_camera_rotation, canonical_orientations, rotation_equivalent, Axis, EulerAnglesDeg,
    GeometryError, GridRotation, Polycube, Pose, VoxelCoord,
};
pub use protocol::{
    parse_command, parse_sequence, parse_turn_output, Direction, OptionLabel, RotationCommand,
    Target, Turn, TurnContext, TurnOutput,
};
pub use render::{image_diff, render, CameraRig, RasterImage, RenderSettings, SnapshotGrid};
