use nalgebra::{Matrix3, Point3, Rotation3, Unit, Vector3};

use crate::error::{Error, Result};

/// Rigid transform in SE(3). Maps points from a local frame into the world.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidPose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl RigidPose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Validates that `rotation` is orthonormal with determinant +1 (within 1e-9).
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let err = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        let det = rotation.determinant();
        if err > 1e-9 || (det - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "rotation not orthonormal (err {err:e}, det {det})"
            )));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn from_rotation(rotation: Rotation3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: *rotation.matrix(),
            translation,
        }
    }

    /// Pose whose local z-axis is `z_axis` and whose origin is `origin`.
    ///
    /// The x-axis is chosen deterministically: world z crossed with the new z,
    /// falling back to world x when the two are (anti)parallel.
    pub fn looking_along(origin: Point3<f64>, z_axis: Vector3<f64>) -> Self {
        let z = z_axis.normalize();
        let mut x = Vector3::z().cross(&z);
        if x.norm() < 1e-6 {
            x = Vector3::x().cross(&z);
            if x.norm() < 1e-6 {
                x = Vector3::y().cross(&z);
            }
        }
        let x = x.normalize();
        let y = z.cross(&x);
        let rotation = Matrix3::from_columns(&[x, y, z]);
        Self {
            rotation,
            translation: origin.coords,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn origin(&self) -> Point3<f64> {
        Point3::from(self.translation)
    }

    pub fn axis_x(&self) -> Vector3<f64> {
        self.rotation.column(0).into()
    }

    pub fn axis_y(&self) -> Vector3<f64> {
        self.rotation.column(1).into()
    }

    pub fn axis_z(&self) -> Vector3<f64> {
        self.rotation.column(2).into()
    }

    pub fn transform_point(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    pub fn inverse_transform_point(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation.transpose() * (p.coords - self.translation))
    }

    /// Row-major 3x4 `[R | t]`.
    pub fn to_row_major(&self) -> [f64; 12] {
        let mut out = [0.0; 12];
        for r in 0..3 {
            for c in 0..3 {
                out[r * 4 + c] = self.rotation[(r, c)];
            }
            out[r * 4 + 3] = self.translation[r];
        }
        out
    }

    pub fn from_row_major(m: &[f64; 12]) -> Result<Self> {
        let rotation = Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
        Self::new(rotation, Vector3::new(m[3], m[7], m[11]))
    }
}

/// Half-line with unit direction.
#[derive(Clone, Copy, Debug)]
pub struct Ray {
    pub origin: Point3<f64>,
    direction: Unit<Vector3<f64>>,
}

impl Ray {
    /// Normalizes `direction`; rejects zero or non-finite vectors.
    pub fn new(origin: Point3<f64>, direction: Vector3<f64>) -> Result<Self> {
        let n = direction.norm();
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::InvalidArgument("ray direction must be non-zero".into()));
        }
        Ok(Self {
            origin,
            direction: Unit::new_unchecked(direction / n),
        })
    }

    pub fn direction(&self) -> &Vector3<f64> {
        self.direction.as_ref()
    }

    pub fn at(&self, t: f64) -> Point3<f64> {
        self.origin + self.direction.as_ref() * t
    }
}

/// A surface point with outward unit normal and the noise level of its source.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurfaceSample {
    pub position: Point3<f64>,
    pub normal: Vector3<f64>,
    pub noise_sigma: f64,
}

impl SurfaceSample {
    pub fn new(position: Point3<f64>, normal: Vector3<f64>, noise_sigma: f64) -> Result<Self> {
        if !(noise_sigma > 0.0) {
            return Err(Error::InvalidArgument("noise_sigma must be positive".into()));
        }
        let n = normal.norm();
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::InvalidArgument("sample normal must be non-zero".into()));
        }
        Ok(Self {
            position,
            normal: normal / n,
            noise_sigma,
        })
    }
}
