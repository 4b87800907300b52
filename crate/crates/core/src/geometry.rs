//! Pose and rotation math: the continuous 6D rotation parameterization,
//! oriented bounding boxes and orthonormal frame construction.

use nalgebra::{Matrix3, Vector3};

use crate::error::{GmtError, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

const MIN_NORM: f64 = 1e-8;
const ROTATION_TOL: f64 = 1e-5;
const PARALLEL_TOL: f64 = 1e-6;

/// The first two columns of a rotation matrix, prior to Gram–Schmidt.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rot6D {
    pub a1: Vec3,
    pub a2: Vec3,
}

impl Rot6D {
    pub const IDENTITY: Rot6D = Rot6D {
        a1: Vector3::new(1.0, 0.0, 0.0),
        a2: Vector3::new(0.0, 1.0, 0.0),
    };

    pub fn new(a1: Vec3, a2: Vec3) -> Self {
        Self { a1, a2 }
    }

    /// Layout is `[a1.x, a1.y, a1.z, a2.x, a2.y, a2.z]`.
    pub fn from_slice(v: &[f64]) -> Self {
        assert_eq!(v.len(), 6, "rot6d needs 6 components");
        Self {
            a1: Vec3::new(v[0], v[1], v[2]),
            a2: Vec3::new(v[3], v[4], v[5]),
        }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.a1.x, self.a1.y, self.a1.z, self.a2.x, self.a2.y, self.a2.z,
        ]
    }

    pub fn to_matrix(&self) -> Result<Mat3> {
        rot6d_to_matrix(self)
    }

    /// Rotation about +z by `yaw` radians.
    pub fn from_yaw(yaw: f64) -> Self {
        let (s, c) = yaw.sin_cos();
        Self {
            a1: Vec3::new(c, s, 0.0),
            a2: Vec3::new(-s, c, 0.0),
        }
    }
}

/// Gram–Schmidt map from the 6D parameterization to SO(3).
pub fn rot6d_to_matrix(r: &Rot6D) -> Result<Mat3> {
    let n1 = r.a1.norm();
    if !(n1 > MIN_NORM) {
        return Err(GmtError::DegenerateRotation("first column has near-zero norm"));
    }
    let b1 = r.a1 / n1;
    let residual = r.a2 - b1 * b1.dot(&r.a2);
    let n2 = residual.norm();
    if !(n2 > MIN_NORM) {
        return Err(GmtError::DegenerateRotation(
            "second column is parallel to the first",
        ));
    }
    let b2 = residual / n2;
    let b3 = b1.cross(&b2);
    Ok(Mat3::from_columns(&[b1, b2, b3]))
}

/// Max-abs entry of `RᵀR − I`.
pub fn orthonormality_residual(m: &Mat3) -> f64 {
    (m.transpose() * m - Mat3::identity()).abs().max()
}

pub fn matrix_to_rot6d(m: &Mat3) -> Result<Rot6D> {
    let residual = orthonormality_residual(m);
    let det = m.determinant();
    if !(residual <= ROTATION_TOL) || !((det - 1.0).abs() <= ROTATION_TOL * 10.0) {
        return Err(GmtError::NotARotation { residual, det });
    }
    Ok(Rot6D {
        a1: m.column(0).into_owned(),
        a2: m.column(1).into_owned(),
    })
}

/// Right-handed frame whose first axis follows `primary_axis` and whose third
/// axis lies on the side of `normal`.
///
/// The second axis is the null direction of the 2×3 system spanned by the two
/// inputs, read off the singular value decomposition.
pub fn frame_from_vectors(primary_axis: &Vec3, normal: &Vec3) -> Result<Mat3> {
    let pn = primary_axis.norm();
    let nn = normal.norm();
    if !(pn > MIN_NORM) || !(nn > MIN_NORM) {
        return Err(GmtError::DegenerateRotation("zero-length frame vector"));
    }
    let x = primary_axis / pn;
    let n = normal / nn;
    if x.cross(&n).norm() < PARALLEL_TOL {
        return Err(GmtError::DegenerateRotation("frame vectors are parallel"));
    }
    let system = Mat3::from_rows(&[x.transpose(), n.transpose(), Vec3::zeros().transpose()]);
    let svd = system.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    // the smallest singular value of a rank-2 system sits at the null direction
    let (null_idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &s)| if s < acc.1 { (i, s) } else { acc });
    let mut y: Vec3 = v_t.row(null_idx).transpose();
    // orient so that z = x × y points along the normal
    if x.cross(&y).dot(&n) < 0.0 {
        y = -y;
    }
    // re-project y to kill SVD round-off along x
    let y = (y - x * x.dot(&y)).normalize();
    let z = x.cross(&y);
    Ok(Mat3::from_columns(&[x, y, z]))
}

/// One trajectory frame: position plus 6D rotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose9 {
    pub position: Vec3,
    pub rotation: Rot6D,
}

impl Pose9 {
    pub fn new(position: Vec3, rotation: Rot6D) -> Self {
        Self { position, rotation }
    }

    pub fn from_slice(v: &[f64]) -> Self {
        assert_eq!(v.len(), 9, "pose needs 9 components");
        Self {
            position: Vec3::new(v[0], v[1], v[2]),
            rotation: Rot6D::from_slice(&v[3..9]),
        }
    }

    pub fn to_array(&self) -> [f64; 9] {
        let r = self.rotation.to_array();
        [
            self.position.x,
            self.position.y,
            self.position.z,
            r[0],
            r[1],
            r[2],
            r[3],
            r[4],
            r[5],
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedBox {
    pub center: Vec3,
    /// Full extents along the box's local axes.
    pub size: Vec3,
    pub rotation: Rot6D,
}

impl OrientedBox {
    pub fn new(center: Vec3, size: Vec3, rotation: Rot6D) -> Result<Self> {
        if !size.iter().all(|&s| s > 0.0 && s.is_finite()) {
            return Err(GmtError::InvalidInput(format!(
                "box extents must be positive, got {size:?}"
            )));
        }
        rot6d_to_matrix(&rotation)?;
        Ok(Self {
            center,
            size,
            rotation,
        })
    }

    pub fn axis_aligned(center: Vec3, size: Vec3) -> Result<Self> {
        Self::new(center, size, Rot6D::IDENTITY)
    }

    /// `[center(3), size(3), rot6d(6)]`
    pub fn to_array(&self) -> [f64; 12] {
        let r = self.rotation.to_array();
        [
            self.center.x,
            self.center.y,
            self.center.z,
            self.size.x,
            self.size.y,
            self.size.z,
            r[0],
            r[1],
            r[2],
            r[3],
            r[4],
            r[5],
        ]
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != 12 {
            return Err(GmtError::InvalidInput(format!(
                "box needs 12 parameters, got {}",
                v.len()
            )));
        }
        Self::new(
            Vec3::new(v[0], v[1], v[2]),
            Vec3::new(v[3], v[4], v[5]),
            Rot6D::from_slice(&v[6..12]),
        )
    }

    pub fn half_extents(&self) -> Vec3 {
        self.size * 0.5
    }

    pub fn rotation_matrix(&self) -> Mat3 {
        rot6d_to_matrix(&self.rotation).expect("validated at construction")
    }

    /// Whether `p` lies inside or on the box.
    pub fn contains(&self, p: &Vec3) -> bool {
        let local = self.rotation_matrix().transpose() * (p - self.center);
        let h = self.half_extents();
        (0..3).all(|i| local[i].abs() <= h[i])
    }
}

/// Box corners. Corner `i` takes sign bit `(i >> 2) & 1` on local x,
/// `(i >> 1) & 1` on y and `i & 1` on z (bit 0 is the negative side), so z
/// varies fastest.
pub fn obb_corners(b: &OrientedBox) -> [Vec3; 8] {
    let r = b.rotation_matrix();
    let h = b.half_extents();
    std::array::from_fn(|i| {
        let sign = |bit: usize| if (i >> bit) & 1 == 1 { 1.0 } else { -1.0 };
        let local = Vec3::new(sign(2) * h.x, sign(1) * h.y, sign(0) * h.z);
        b.center + r * local
    })
}

/// Separating-axis test over the 3 + 3 face normals and 9 edge cross products.
/// Touching boxes count as intersecting.
pub fn obb_intersect(a: &OrientedBox, b: &OrientedBox) -> bool {
    let ra = a.rotation_matrix();
    let rb = b.rotation_matrix();
    let ha = a.half_extents();
    let hb = b.half_extents();
    let t = b.center - a.center;

    let separated_on = |axis: &Vec3| -> bool {
        let proj_a: f64 = (0..3).map(|i| ha[i] * ra.column(i).dot(axis).abs()).sum();
        let proj_b: f64 = (0..3).map(|i| hb[i] * rb.column(i).dot(axis).abs()).sum();
        t.dot(axis).abs() > proj_a + proj_b
    };

    for i in 0..3 {
        if separated_on(&ra.column(i).into_owned()) || separated_on(&rb.column(i).into_owned()) {
            return false;
        }
    }
    for i in 0..3 {
        for j in 0..3 {
            let axis = ra.column(i).cross(&rb.column(j));
            let n = axis.norm();
            // parallel edges: the face axes already cover this direction
            if n < 1e-9 {
                continue;
            }
            if separated_on(&(axis / n)) {
                return false;
            }
        }
    }
    true
}
