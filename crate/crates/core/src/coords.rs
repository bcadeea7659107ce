//! Cartesian, spherical and modified spherical coordinates.
//!
//! The sensor sits at the origin of a fixed Cartesian frame. Azimuth `psi` is
//! measured in the x-y plane from the x axis, elevation `theta` from the x-y
//! plane toward +z. The spherical frame axes are, in order, the line of sight,
//! the azimuth direction and the elevation direction.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use nalgebra::{Matrix3, Vector3};

use crate::dynamics::{ModelId, MscState};
use crate::error::{Error, Result};

/// Elevations closer than this to +-pi/2 are rejected.
pub const POLE_MARGIN: f64 = 1e-9;

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let r = a.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// Sensor-relative target position in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CartesianPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl CartesianPoint {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn norm(&self) -> f64 {
        self.to_vector().norm()
    }

    pub fn to_vector(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }
}

impl From<Vector3<f64>> for CartesianPoint {
    fn from(v: Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphericalPoint {
    /// Azimuth in (-pi, pi].
    pub psi: f64,
    /// Elevation in (-pi/2, pi/2).
    pub theta: f64,
    /// Range in meters.
    pub r: f64,
}

/// Orthonormal 3x3 rotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix3(pub Matrix3<f64>);

impl RotationMatrix3 {
    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }
}

pub fn cart_to_spherical(p: CartesianPoint) -> Result<SphericalPoint> {
    let r = p.norm();
    if r == 0.0 || !r.is_finite() {
        return Err(Error::ZeroVector);
    }
    let rho = p.x.hypot(p.y);
    Ok(SphericalPoint {
        psi: wrap_angle(p.y.atan2(p.x)),
        theta: p.z.atan2(rho),
        r,
    })
}

pub fn spherical_to_cart(s: SphericalPoint) -> CartesianPoint {
    let (st, ct) = s.theta.sin_cos();
    let (sp, cp) = s.psi.sin_cos();
    CartesianPoint::new(s.r * ct * cp, s.r * ct * sp, s.r * st)
}

/// Elementary rotation about the y axis, `C_y(a)`.
fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, -s, 0.0, 1.0, 0.0, s, 0.0, c)
}

/// Elementary rotation about the z axis, `C_z(a)`.
fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, s, 0.0, -s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Rotation from the Cartesian frame to the spherical frame at `(psi, theta)`,
/// composed as `C_y(-theta) * C_z(psi)`. Its rows are the line-of-sight,
/// azimuth and elevation unit vectors expressed in Cartesian coordinates.
pub fn rotation_c_to_s(psi: f64, theta: f64) -> RotationMatrix3 {
    RotationMatrix3(rot_y(-theta) * rot_z(psi))
}

fn check_elevation(theta: f64) -> Result<()> {
    if FRAC_PI_2 - theta.abs() < POLE_MARGIN {
        Err(Error::ElevationSingularity(theta))
    } else {
        Ok(())
    }
}

/// Converts Cartesian position/velocity (plus the model extras) into an MSC state.
///
/// `acc` is required for [`ModelId::Nca`], `turn_rate` for [`ModelId::Ct`];
/// both are ignored otherwise.
pub fn cart_kinematics_to_msc(
    pos: CartesianPoint,
    vel: Vector3<f64>,
    acc: Option<Vector3<f64>>,
    turn_rate: Option<f64>,
    model: ModelId,
) -> Result<MscState> {
    let sph = cart_to_spherical(pos)?;
    check_elevation(sph.theta)?;
    let c = rotation_c_to_s(sph.psi, sph.theta);
    // velocity components along line of sight, azimuth, elevation
    let v_s = c.0 * vel;
    let s = 1.0 / sph.r;
    let tau = v_s.x * s;
    let omega = v_s.y * s;
    let theta_dot = v_s.z * s;

    let mut values = vec![omega, theta_dot, tau, sph.psi, sph.theta, s];
    match model {
        ModelId::Ncv => {}
        ModelId::Nca => {
            let a = acc.ok_or(Error::MissingInput {
                model,
                what: "acceleration",
            })?;
            values.extend([s * a.x, s * a.y, s * a.z]);
        }
        ModelId::Ct => {
            let w = turn_rate.ok_or(Error::MissingInput {
                model,
                what: "turn rate",
            })?;
            values.push(w);
        }
    }
    MscState::new(model, values)
}

/// Recovers Cartesian position and velocity from the six core MSC states.
pub fn msc_to_cart_kinematics(x: &MscState) -> Result<(CartesianPoint, Vector3<f64>)> {
    let s = x.s();
    if !(s > 0.0) {
        return Err(Error::NonpositiveInverseRange(s));
    }
    let r = 1.0 / s;
    let pos = spherical_to_cart(SphericalPoint {
        psi: x.psi(),
        theta: x.theta(),
        r,
    });
    let v_s = Vector3::new(x.tau(), x.omega(), x.theta_dot()) * r;
    let vel = rotation_c_to_s(x.psi(), x.theta()).0.transpose() * v_s;
    Ok((pos, vel))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn on_axis_points() {
        let s = cart_to_spherical(CartesianPoint::new(1000.0, 0.0, 0.0)).unwrap();
        assert_eq!((s.psi, s.theta, s.r), (0.0, 0.0, 1000.0));
        let s = cart_to_spherical(CartesianPoint::new(0.0, 1000.0, 0.0)).unwrap();
        assert_relative_eq!(s.psi, FRAC_PI_2, epsilon = 1e-15);
        assert_eq!(s.theta, 0.0);
        assert_relative_eq!(s.r, 1000.0, epsilon = 1e-12);
    }

    #[test]
    fn scenario_start_point() {
        // scalar evaluation: psi = pi - atan(500/2000), theta = atan(700/sqrt(2000^2+500^2))
        let psi = PI - (500.0f64 / 2000.0).atan();
        let theta = (700.0f64 / (2000.0f64 * 2000.0 + 500.0 * 500.0).sqrt()).atan();
        let r = (2000.0f64 * 2000.0 + 500.0 * 500.0 + 700.0 * 700.0).sqrt();
        let s = cart_to_spherical(CartesianPoint::new(-2000.0, 500.0, 700.0)).unwrap();
        assert_relative_eq!(s.psi, psi, epsilon = 1e-14);
        assert_relative_eq!(s.theta, theta, epsilon = 1e-14);
        assert_relative_eq!(s.r, r, epsilon = 1e-10);
        assert_relative_eq!(s.psi, 2.8966, epsilon = 1e-4);
        assert_relative_eq!(s.theta, 0.3273, epsilon = 1e-4);
        assert_relative_eq!(s.r, 2177.15, epsilon = 1e-2);
    }

    #[test]
    fn zero_vector_rejected() {
        assert_eq!(
            cart_to_spherical(CartesianPoint::new(0.0, 0.0, 0.0)),
            Err(Error::ZeroVector)
        );
    }

    #[test]
    fn negative_zero_y_maps_to_pi() {
        let s = cart_to_spherical(CartesianPoint::new(-5.0, -0.0, 0.0)).unwrap();
        assert_eq!(s.psi, PI);
    }

    #[test]
    fn rotation_examples() {
        assert_eq!(*rotation_c_to_s(0.0, 0.0).matrix(), Matrix3::identity());
        let m = rotation_c_to_s(FRAC_PI_2, 0.0).0;
        let expected = Matrix3::new(0.0, 1.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert!((m - expected).abs().max() < 1e-15);
    }

    #[test]
    fn rotation_rows_are_local_axes() {
        let (psi, theta) = (0.7, -0.4);
        let m = rotation_c_to_s(psi, theta).0;
        let los = spherical_to_cart(SphericalPoint { psi, theta, r: 1.0 }).to_vector();
        assert!((m.row(0).transpose() - los).norm() < 1e-15);
    }

    #[test]
    fn radial_and_tangential_motion() {
        let p = CartesianPoint::new(1000.0, 0.0, 0.0);
        let x = cart_kinematics_to_msc(p, Vector3::new(100.0, 0.0, 0.0), None, None, ModelId::Ncv)
            .unwrap();
        assert_eq!(x.values.as_slice(), &[0.0, 0.0, 0.1, 0.0, 0.0, 0.001]);

        let x = cart_kinematics_to_msc(p, Vector3::new(0.0, 100.0, 0.0), None, None, ModelId::Ncv)
            .unwrap();
        assert_relative_eq!(x.omega(), 0.1, epsilon = 1e-15);
        assert_eq!(x.tau(), 0.0);
        assert_eq!(x.theta_dot(), 0.0);
    }

    #[test]
    fn scenario_initial_state_matches_spherical_derivatives() {
        // Independent route: differentiate psi(t), theta(t), r(t) of the straight line
        // symbolically.
        let (x, y, z) = (-2000.0f64, 500.0f64, 700.0f64);
        let (vx, vy, vz) = (200.0f64, 0.0f64, 50.0f64);
        let rho2 = x * x + y * y;
        let rho = rho2.sqrt();
        let r2 = rho2 + z * z;
        let r = r2.sqrt();
        let r_dot = (x * vx + y * vy + z * vz) / r;
        let psi_dot = (x * vy - y * vx) / rho2;
        let rho_dot = (x * vx + y * vy) / rho;
        let theta_dot = (vz * rho - z * rho_dot) / r2;
        let theta = z.atan2(rho);

        let st = cart_kinematics_to_msc(
            CartesianPoint::new(x, y, z),
            Vector3::new(vx, vy, vz),
            None,
            None,
            ModelId::Ncv,
        )
        .unwrap();
        assert_relative_eq!(st.omega(), psi_dot * theta.cos(), max_relative = 1e-12);
        assert_relative_eq!(st.theta_dot(), theta_dot, max_relative = 1e-12);
        assert_relative_eq!(st.tau(), r_dot / r, max_relative = 1e-12);
        assert_relative_eq!(st.s(), 1.0 / r, max_relative = 1e-14);

        let (p, v) = msc_to_cart_kinematics(&st).unwrap();
        let p0 = Vector3::new(x, y, z);
        let v0 = Vector3::new(vx, vy, vz);
        assert!((p.to_vector() - p0).norm() <= 1e-12 * p0.norm());
        assert!((v - v0).norm() <= 1e-12 * v0.norm());
    }

    #[test]
    fn zero_rate_state_to_cartesian() {
        let st = MscState::new(ModelId::Ncv, vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.001]).unwrap();
        let (p, v) = msc_to_cart_kinematics(&st).unwrap();
        assert_relative_eq!(p.to_vector(), Vector3::new(1000.0, 0.0, 0.0), epsilon = 1e-12);
        assert_eq!(v, Vector3::zeros());
    }

    #[test]
    fn nonpositive_inverse_range_rejected() {
        let mut st = MscState::new(ModelId::Ncv, vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.001]).unwrap();
        st.values[5] = 0.0;
        assert!(matches!(
            msc_to_cart_kinematics(&st),
            Err(Error::NonpositiveInverseRange(_))
        ));
    }

    #[test]
    fn model_extras_required() {
        let p = CartesianPoint::new(1000.0, 10.0, 5.0);
        let v = Vector3::new(1.0, 2.0, 3.0);
        assert!(matches!(
            cart_kinematics_to_msc(p, v, None, None, ModelId::Nca),
            Err(Error::MissingInput { .. })
        ));
        assert!(matches!(
            cart_kinematics_to_msc(p, v, None, None, ModelId::Ct),
            Err(Error::MissingInput { .. })
        ));
        let x = cart_kinematics_to_msc(p, v, Some(Vector3::new(2.0, 0.0, 0.0)), None, ModelId::Nca)
            .unwrap();
        assert_eq!(x.values.len(), 9);
        assert_relative_eq!(x.values[6], 2.0 * x.s());
        let x = cart_kinematics_to_msc(p, v, None, Some(0.3), ModelId::Ct).unwrap();
        assert_eq!(x.values[6], 0.3);
    }

    #[test]
    fn pole_rejected() {
        let r = cart_kinematics_to_msc(
            CartesianPoint::new(0.0, 0.0, 100.0),
            Vector3::zeros(),
            None,
            None,
            ModelId::Ncv,
        );
        assert!(matches!(r, Err(Error::ElevationSingularity(_))));
    }

    #[test]
    fn wrap_edges() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert_relative_eq!(wrap_angle(3.0 * PI + 0.25), -PI + 0.25, epsilon = 1e-12);
        assert_eq!(wrap_angle(0.3), 0.3);
        // 359 deg measured against 1 deg predicted
        let nu = wrap_angle(359f64.to_radians() - 1f64.to_radians());
        assert_relative_eq!(nu.abs(), 2f64.to_radians(), epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn rotation_is_proper_orthonormal(psi in -PI..PI, theta in -1.5f64..1.5) {
            let m = rotation_c_to_s(psi, theta).0;
            prop_assert!((m * m.transpose() - Matrix3::identity()).abs().max() < 1e-12);
            prop_assert!((m.determinant() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn spherical_round_trip(psi in -3.14f64..3.14, theta in -1.5f64..1.5, log_r in 0.0f64..6.0) {
            let r = 10f64.powf(log_r);
            let p = spherical_to_cart(SphericalPoint { psi, theta, r });
            let back = cart_to_spherical(p).unwrap();
            prop_assert!((back.r - r).abs() <= 1e-10 * r);
            prop_assert!(wrap_angle(back.psi - psi).abs() <= 1e-10);
            prop_assert!((back.theta - theta).abs() <= 1e-10);
        }

        #[test]
        fn kinematics_round_trip(
            x in -5000.0f64..5000.0, y in -5000.0f64..5000.0, z in -3000.0f64..3000.0,
            vx in -400.0f64..400.0, vy in -400.0f64..400.0, vz in -400.0f64..400.0,
        ) {
            let p = CartesianPoint::new(x, y, z);
            prop_assume!(x.hypot(y) > 1.0);
            let v = Vector3::new(vx, vy, vz);
            let st = cart_kinematics_to_msc(p, v, None, None, ModelId::Ncv).unwrap();
            let (p2, v2) = msc_to_cart_kinematics(&st).unwrap();
            let pn = p.norm();
            prop_assert!((p2.to_vector() - p.to_vector()).norm() <= 1e-9 * pn);
            prop_assert!((v2 - v).norm() <= 1e-9 * v.norm().max(1e-3));
        }
    }
}
