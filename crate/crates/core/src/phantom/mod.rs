//! Analytic two-segment leg phantom: joint tracks, forward kinematics,
//! forward projection and voxelization.

pub mod kinematics;
pub mod masks;
pub mod model;
pub mod render;
pub mod tracks;

pub use kinematics::{forward_kinematics, segment_frame, SegmentKinematics};
pub use masks::{region_masks, RegionMasks};
pub use model::{Attenuation, LegPhantom, Material, Primitive, Shape};
pub use render::{render_projection, render_stack, voxelize, LegPose};
pub use tracks::{
    leg_pose, load_tracks_csv, read_tracks_csv, save_tracks_csv, synthesize_sway_tracks, write_tracks_csv,
    JointTracks, LengthUnit, SwayParams,
};
