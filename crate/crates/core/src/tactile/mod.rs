//! Geometric tactile and depth-camera simulation: heightmaps, contact masks,
//! depth images, exploration poses and their conversion into surface samples.

mod decimate;
mod depth;
mod poses;
mod records;
mod sensor;

pub use decimate::{voxel_decimate, VoxelPick};
pub use depth::{depthmap_to_samples, render_depthmap, Camera, DepthMap, Intrinsics};
pub use poses::{
    hallucinate_base, lowest_ring, pose_at, sample_sensor_poses, ExplorationPolicy, PolicyMode, DEFAULT_PRESS_DEPTH,
};
pub use records::{read_depth_png, write_depth_png, TouchRecordReader, TouchRecordWriter};
pub use sensor::{render_tactile, tactile_to_samples, SampleConfig, SensorSpec, TactileObservation, CONTACT_THRESHOLD};

use crate::geometry::SurfaceSample;

/// Decimated samples and the voxel size that met the budget.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    pub samples: Vec<SurfaceSample>,
    pub voxel_size: f64,
}

/// Independent stream seed for `(seed, stream, index)` (splitmix64 finaliser).
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(index.wrapping_mul(0xd1b5_4a32_d192_ed03));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
