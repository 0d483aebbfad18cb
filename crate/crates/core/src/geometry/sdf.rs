use nalgebra::{Point3, Vector3};

use super::bvh::MeshBvh;
use super::mesh::TriangleMesh;
use super::pose::Ray;
use crate::error::Result;

/// Ground-truth signed distance for a watertight mesh: negative inside.
///
/// The magnitude comes from a closest-point query; the sign from a majority vote
/// of crossing parity along three fixed skew directions.
#[derive(Clone, Debug)]
pub struct MeshSdf {
    bvh: MeshBvh,
}

const PARITY_DIRECTIONS: [[f64; 3]; 3] = [
    [0.301_511_3, 0.502_518_8, 0.810_279_2],
    [-0.612_372_4, 0.231_454_2, -0.755_928_9],
    [0.113_227_6, -0.832_050_3, 0.543_492_7],
];

impl MeshSdf {
    pub fn new(mesh: TriangleMesh) -> Result<Self> {
        mesh.check_watertight()?;
        Ok(Self {
            bvh: MeshBvh::build(mesh),
        })
    }

    pub fn from_bvh(bvh: MeshBvh) -> Result<Self> {
        bvh.mesh().check_watertight()?;
        Ok(Self { bvh })
    }

    pub fn bvh(&self) -> &MeshBvh {
        &self.bvh
    }

    pub fn mesh(&self) -> &TriangleMesh {
        self.bvh.mesh()
    }

    pub fn unsigned_distance(&self, p: &Point3<f64>) -> f64 {
        self.bvh
            .closest_point(p)
            .map_or(f64::INFINITY, |c| c.distance)
    }

    pub fn is_inside(&self, p: &Point3<f64>) -> bool {
        let votes = PARITY_DIRECTIONS
            .iter()
            .filter(|d| {
                let ray = Ray::new(*p, Vector3::from(**d)).expect("fixed non-zero direction");
                self.bvh.count_crossings(&ray) % 2 == 1
            })
            .count();
        votes >= 2
    }

    pub fn signed_distance(&self, p: &Point3<f64>) -> f64 {
        let d = self.unsigned_distance(p);
        if self.is_inside(p) {
            -d
        } else {
            d
        }
    }
}

/// Convenience wrapper: validates watertightness, then evaluates once.
pub fn signed_distance(mesh: &TriangleMesh, point: &Point3<f64>) -> Result<f64> {
    Ok(MeshSdf::new(mesh.clone())?.signed_distance(point))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn unit_cube_values() {
        let cube = TriangleMesh::cuboid(Vector3::repeat(1.0));
        assert!((signed_distance(&cube, &Point3::origin()).unwrap() + 0.5).abs() < 1e-12);
        assert!((signed_distance(&cube, &Point3::new(0.0, 0.0, 1.5)).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn icosphere_interior_point() {
        let s = TriangleMesh::icosphere(1.0, 3);
        let d = signed_distance(&s, &Point3::new(0.5, 0.0, 0.0)).unwrap();
        assert!((d + 0.5).abs() < 0.01, "{d}");
    }

    #[test]
    fn sign_flips_once_along_radial_sweep() {
        let sdf = MeshSdf::new(TriangleMesh::icosphere(1.0, 3)).unwrap();
        let dir = Vector3::new(0.37, -0.52, 0.77).normalize();
        let mut flips = 0;
        let mut prev = sdf.signed_distance(&Point3::origin());
        assert!(prev < 0.0);
        for k in 1..=400 {
            let p = Point3::from(dir * (k as f64 * 0.005));
            let s = sdf.signed_distance(&p);
            if s.signum() != prev.signum() {
                flips += 1;
                let r = p.coords.norm();
                assert!((0.98..=1.005).contains(&r), "flip at radius {r}");
            }
            prev = s;
        }
        assert_eq!(flips, 1);
    }

    #[test]
    fn open_mesh_rejected() {
        let cube = TriangleMesh::cuboid(Vector3::repeat(1.0));
        let open = TriangleMesh::new(cube.vertices().to_vec(), cube.faces()[2..].to_vec()).unwrap();
        assert!(matches!(MeshSdf::new(open), Err(Error::NotWatertight(..))));
    }
}
