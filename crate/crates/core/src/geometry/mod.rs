//! Meshes, rigid transforms, ray casting, ground-truth SDF and Chamfer distance.

pub mod bvh;
pub mod chamfer;
pub mod io;
pub mod mesh;
pub mod pose;
pub mod sdf;
pub mod spatial;

pub use bvh::{MeshBvh, RayHit};
pub use chamfer::{chamfer_distance, ChamferReference, DEFAULT_CHAMFER_SAMPLES, M2_TO_MM2};
pub use io::{load_mesh, write_obj, write_ply, PlyFormat};
pub use mesh::{Aabb, TriangleMesh};
pub use pose::{RigidPose, Ray, SurfaceSample};
pub use sdf::{signed_distance, MeshSdf};
pub use spatial::KdTree;
