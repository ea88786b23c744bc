//! Rotation algebra: unit quaternions, rotation vectors, DCMs, and the
//! charts between them.
//!
//! Scalar-first quaternion convention `[w, v]`. The exponential/log maps are
//! exact; small-angle series only kick in below the chart singularities.

use nalgebra::{Matrix3, Vector3};

/// Below this angle the exact exponential map switches to its series form.
const SMALL_ANGLE: f64 = 1e-8;

/// Skew-symmetric cross-product matrix: `skew(v) * w == v x w`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Unit quaternion, scalar-first: `w` scalar part, `v` vector part.
///
/// Public constructors and operations renormalize, so a `Quat` obtained
/// through the API stays unit-norm to within 1e-9.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quat {
    pub w: f64,
    pub v: Vector3<f64>,
}

/// Rotation vector (axis * angle, radians).
///
/// The canonical chart representative satisfies `norm() <= pi`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RotVec(pub Vector3<f64>);

/// Direction cosine matrix (rotation matrix).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dcm(pub Matrix3<f64>);

/// Quaternion lift of a 3-vector: `[0, d]`, first component exactly zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Vec3Pure(pub Vector3<f64>);

/// Raw Hamilton product on (scalar, vector) pairs; no normalization.
fn qprod(
    (w1, v1): (f64, Vector3<f64>),
    (w2, v2): (f64, Vector3<f64>),
) -> (f64, Vector3<f64>) {
    (w1 * w2 - v1.dot(&v2), w1 * v2 + w2 * v1 + v1.cross(&v2))
}

impl Quat {
    pub fn identity() -> Self {
        Quat { w: 1.0, v: Vector3::zeros() }
    }

    /// Build from components; renormalizes.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quat { w, v: Vector3::new(x, y, z) }.normalized()
    }

    pub fn from_parts(w: f64, v: Vector3<f64>) -> Self {
        Quat { w, v }.normalized()
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.v.norm_squared()).sqrt()
    }

    pub fn normalized(&self) -> Self {
        let n = self.norm();
        Quat { w: self.w / n, v: self.v / n }
    }

    pub fn conjugate(&self) -> Self {
        Quat { w: self.w, v: -self.v }
    }

    /// Canonical hemisphere representative (`w >= 0`); `q` and `-q` encode
    /// the same rotation.
    pub fn canonical(&self) -> Self {
        if self.w < 0.0 {
            Quat { w: -self.w, v: -self.v }
        } else {
            *self
        }
    }

    /// Quaternion product `self (x) rhs`; result renormalized.
    pub fn mul(&self, rhs: &Quat) -> Quat {
        let (w, v) = qprod((self.w, self.v), (rhs.w, rhs.v));
        Quat { w, v }.normalized()
    }

    /// Rotates a vector by the literal sandwich product `q (x) [0,d] (x) q*`.
    pub fn rotate(&self, d: &Vector3<f64>) -> Vector3<f64> {
        let p = qprod((self.w, self.v), (0.0, *d));
        let (_, out) = qprod(p, (self.w, -self.v));
        out
    }

    /// Equivalent DCM, `R d == q (x) [0,d] (x) q*` for all `d`.
    pub fn to_dcm(&self) -> Dcm {
        let q = self.normalized();
        let ww = q.w * q.w;
        let vvt = q.v * q.v.transpose();
        let r = Matrix3::identity() * (ww - q.v.norm_squared())
            + vvt * 2.0
            + skew(&q.v) * (2.0 * q.w);
        Dcm(r)
    }

    /// Shorthand for `to_dcm().0`.
    pub fn matrix(&self) -> Matrix3<f64> {
        self.to_dcm().0
    }

    /// Exact exponential map; series form `[1, phi/2]` below the 0/0 point.
    pub fn from_rotvec(phi: &RotVec) -> Quat {
        let angle = phi.0.norm();
        if angle < SMALL_ANGLE {
            Quat { w: 1.0, v: phi.0 * 0.5 }.normalized()
        } else {
            // (cos, sin * unit axis) is unit to rounding already.
            let half = 0.5 * angle;
            Quat { w: half.cos(), v: phi.0 * (half.sin() / angle) }
        }
    }

    /// Exact log map onto the canonical chart (`norm <= pi`).
    ///
    /// Branches on the vector-part norm, so both chart singularities
    /// (identity and half-turn) are handled. Relies on the unit-norm type
    /// invariant; atan2 absorbs rounding-level deviations.
    pub fn to_rotvec(&self) -> RotVec {
        let q = self.canonical();
        let vn = q.v.norm();
        if vn < SMALL_ANGLE {
            // w ~ 1 here since the quaternion is unit and canonical.
            RotVec(q.v * 2.0)
        } else {
            let angle = 2.0 * vn.atan2(q.w);
            RotVec(q.v * (angle / vn))
        }
    }

    /// Rotation angle between two attitudes (radians, in `[0, pi]`).
    pub fn angle_to(&self, other: &Quat) -> f64 {
        self.mul(&other.conjugate()).to_rotvec().0.norm()
    }

    /// ZYX Euler angles (roll about x, pitch about y, yaw about z), radians.
    pub fn to_euler_zyx(&self) -> (f64, f64, f64) {
        let r = self.matrix();
        let pitch = (-r[(2, 0)]).clamp(-1.0, 1.0).asin();
        let roll = r[(2, 1)].atan2(r[(2, 2)]);
        let yaw = r[(1, 0)].atan2(r[(0, 0)]);
        (roll, pitch, yaw)
    }

    pub fn from_euler_zyx(roll: f64, pitch: f64, yaw: f64) -> Quat {
        let qz = Quat::from_rotvec(&RotVec(Vector3::new(0.0, 0.0, yaw)));
        let qy = Quat::from_rotvec(&RotVec(Vector3::new(0.0, pitch, 0.0)));
        let qx = Quat::from_rotvec(&RotVec(Vector3::new(roll, 0.0, 0.0)));
        qz.mul(&qy).mul(&qx)
    }
}

impl std::ops::Mul for Quat {
    type Output = Quat;
    fn mul(self, rhs: Quat) -> Quat {
        Quat::mul(&self, &rhs)
    }
}

impl RotVec {
    pub fn zero() -> Self {
        RotVec(Vector3::zeros())
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }
}

impl Dcm {
    /// Max absolute entry of `R^T R - I`; 0 for a perfectly orthonormal matrix.
    pub fn orthonormality_error(&self) -> f64 {
        (self.0.transpose() * self.0 - Matrix3::identity()).abs().max()
    }

    pub fn det(&self) -> f64 {
        self.0.determinant()
    }
}

impl Vec3Pure {
    pub fn lift(d: Vector3<f64>) -> Self {
        Vec3Pure(d)
    }

    /// The 4-vector `[0, d]`.
    pub fn components(&self) -> [f64; 4] {
        [0.0, self.0.x, self.0.y, self.0.z]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn random_quat(rng: &mut ChaCha20Rng) -> Quat {
        // Uniform-ish over the sphere is not needed; any nondegenerate draw is fine.
        Quat::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        )
    }

    fn random_vec(rng: &mut ChaCha20Rng, scale: f64) -> Vector3<f64> {
        Vector3::new(
            rng.random_range(-scale..scale),
            rng.random_range(-scale..scale),
            rng.random_range(-scale..scale),
        )
    }

    #[test]
    fn quat_mul_identity() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let q = random_quat(&mut rng);
        let r = Quat::identity().mul(&q);
        assert_abs_diff_eq!(r.w, q.w, epsilon = 1e-15);
        assert_abs_diff_eq!((r.v - q.v).norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn quat_mul_i_times_i() {
        let i = Quat { w: 0.0, v: Vector3::new(1.0, 0.0, 0.0) };
        let r = i.mul(&i);
        assert_abs_diff_eq!(r.w, -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r.v.norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn quat_mul_matches_dcm_composition() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let q1 = random_quat(&mut rng);
            let q2 = random_quat(&mut rng);
            let lhs = q1.mul(&q2).matrix();
            let rhs = q1.matrix() * q2.matrix();
            assert!((lhs - rhs).abs().max() < 1e-12);
        }
    }

    #[test]
    fn dcm_identity_and_z_quarter_turn() {
        assert!((Quat::identity().matrix() - Matrix3::identity()).abs().max() < 1e-15);
        let h = std::f64::consts::FRAC_PI_4;
        let q = Quat::from_parts(h.cos(), Vector3::new(0.0, 0.0, h.sin()));
        let r = q.matrix();
        // +90 degrees about z maps x to y.
        let got = r * Vector3::x();
        assert_abs_diff_eq!((got - Vector3::y()).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn dcm_matches_sandwich_product() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let q = random_quat(&mut rng);
            let d = random_vec(&mut rng, 5.0);
            let by_dcm = q.matrix() * d;
            let by_sandwich = q.rotate(&d);
            assert!((by_dcm - by_sandwich).norm() < 1e-12);
        }
    }

    #[test]
    fn rotvec_chart_basics() {
        let q = Quat::from_rotvec(&RotVec::zero());
        assert_abs_diff_eq!(q.w, 1.0, epsilon = 1e-15);

        let half_turn = Quat::from_rotvec(&RotVec(Vector3::new(std::f64::consts::PI, 0.0, 0.0)));
        assert_abs_diff_eq!(half_turn.w, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(half_turn.v.x, 1.0, epsilon = 1e-15);

        let back = Quat { w: 0.0, v: Vector3::new(0.0, 1.0, 0.0) }.to_rotvec();
        assert_abs_diff_eq!(back.0.y, std::f64::consts::PI, epsilon = 1e-12);
        assert_abs_diff_eq!(back.0.x, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn rotvec_small_angle_series_regime() {
        let phi = Vector3::new(1e-3, 0.0, 0.0);
        let exact = Quat::from_rotvec(&RotVec(phi));
        let approx = Quat::from_parts(1.0, phi * 0.5);
        let diff = ((exact.w - approx.w).powi(2) + (exact.v - approx.v).norm_squared()).sqrt();
        assert!(diff < 1e-7, "series deviation {diff}");
    }

    #[test]
    fn rotvec_round_trip() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let q = random_quat(&mut rng);
            let recon = Quat::from_rotvec(&q.to_rotvec());
            assert!(q.angle_to(&recon) < 1e-9);
        }
    }

    #[test]
    fn skew_basics() {
        assert_eq!(skew(&Vector3::zeros()), Matrix3::zeros());
        let got = skew(&Vector3::x()) * Vector3::y();
        assert_abs_diff_eq!((got - Vector3::z()).norm(), 0.0, epsilon = 1e-15);

        let mut rng = ChaCha20Rng::seed_from_u64(5);
        for _ in 0..100 {
            let v = random_vec(&mut rng, 2.0);
            let w = random_vec(&mut rng, 2.0);
            assert!((skew(&v) * w + skew(&w) * v).norm() < 1e-14);
        }
    }

    #[test]
    fn norm_invariant_after_operations() {
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let mut q = random_quat(&mut rng);
        for _ in 0..10_000 {
            q = q.mul(&random_quat(&mut rng));
            assert!((q.norm() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn euler_round_trip() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        for _ in 0..200 {
            let roll = rng.random_range(-1.5..1.5);
            let pitch = rng.random_range(-1.4..1.4);
            let yaw = rng.random_range(-3.0..3.0);
            let q = Quat::from_euler_zyx(roll, pitch, yaw);
            let (r, p, y) = q.to_euler_zyx();
            assert_abs_diff_eq!(r, roll, epsilon = 1e-10);
            assert_abs_diff_eq!(p, pitch, epsilon = 1e-10);
            assert_abs_diff_eq!(y, yaw, epsilon = 1e-10);
        }
    }

    #[test]
    fn vec3_pure_first_component_zero() {
        let p = Vec3Pure::lift(Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(p.components()[0], 0.0);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            // dcm(exp(phi)) ~ I + skew(phi) for small phi, to second order.
            #[test]
            fn small_angle_dcm_linearization(
                x in -0.01f64..0.01, y in -0.01f64..0.01, z in -0.01f64..0.01
            ) {
                let phi = Vector3::new(x, y, z);
                let r = Quat::from_rotvec(&RotVec(phi)).matrix();
                let lin = Matrix3::identity() + skew(&phi);
                let tol = phi.norm_squared() / 2.0 + 1e-12;
                prop_assert!((r - lin).abs().max() <= tol);
            }

            // The log chart inverts the exponential on the open ball of radius pi.
            #[test]
            fn chart_round_trip(
                x in -1.7f64..1.7, y in -1.7f64..1.7, z in -1.7f64..1.7
            ) {
                let phi = Vector3::new(x, y, z);
                prop_assume!(phi.norm() < std::f64::consts::PI - 1e-6);
                let back = Quat::from_rotvec(&RotVec(phi)).to_rotvec();
                prop_assert!((back.0 - phi).norm() < 1e-9);
            }
        }
    }
}
