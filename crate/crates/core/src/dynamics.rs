//! Control-affine agent models, explicit Euler integration, nominal
//! (safety-agnostic) motion and the unicycle tracking law.

use nalgebra::{DMatrix, DVector, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world::{AgentState, Model};
use crate::wrap_angle;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("agent {id} uses the {actual:?} model, expected {expected:?}")]
    ModelMismatch {
        id: usize,
        expected: Model,
        actual: Model,
    },
    #[error("agent is at its target, nominal direction undefined")]
    AtTarget,
}

/// Per-axis input bounds `lo <= u <= hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlBox {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
}

impl Default for ControlBox {
    fn default() -> Self {
        ControlBox::symmetric(3.0, 3.0)
    }
}

impl ControlBox {
    pub fn symmetric(a: f64, b: f64) -> Self {
        ControlBox {
            lo: [-a, -b],
            hi: [a, b],
        }
    }

    /// Nonempty, finite and containing the zero command.
    pub fn is_valid(&self) -> bool {
        (0..2).all(|k| {
            self.lo[k].is_finite() && self.hi[k].is_finite() && self.lo[k] <= 0.0 && 0.0 <= self.hi[k]
        })
    }

    pub fn contains(&self, u: &Vector2<f64>) -> bool {
        (0..2).all(|k| u[k] >= self.lo[k] && u[k] <= self.hi[k])
    }

    pub fn clamp(&self, u: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new(
            u.x.clamp(self.lo[0], self.hi[0]),
            u.y.clamp(self.lo[1], self.hi[1]),
        )
    }

    pub fn lo_vec(&self) -> Vec<f64> {
        self.lo.to_vec()
    }

    pub fn hi_vec(&self) -> Vec<f64> {
        self.hi.to_vec()
    }

    /// Largest speed the box allows along any single axis.
    pub fn max_abs(&self) -> f64 {
        self.lo
            .iter()
            .chain(self.hi.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// `x_dot = f(x) + g(x) u` for the two agent models used here.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineModel {
    pub model: Model,
    pub control_box: ControlBox,
}

impl AffineModel {
    pub fn new(model: Model, control_box: ControlBox) -> Self {
        AffineModel { model, control_box }
    }

    pub fn state_dim(&self) -> usize {
        match self.model {
            Model::Unicycle => 3,
            Model::SingleIntegrator => 2,
        }
    }

    pub fn control_dim(&self) -> usize {
        2
    }

    pub fn state_vector(&self, s: &AgentState) -> DVector<f64> {
        let p = s.pose.position;
        match self.model {
            Model::Unicycle => DVector::from_vec(vec![p.x, p.y, s.pose.heading]),
            Model::SingleIntegrator => DVector::from_vec(vec![p.x, p.y]),
        }
    }

    /// Both models are driftless.
    pub fn drift(&self, _s: &AgentState) -> DVector<f64> {
        DVector::zeros(self.state_dim())
    }

    pub fn actuation(&self, s: &AgentState) -> DMatrix<f64> {
        match self.model {
            Model::Unicycle => {
                let (sn, cs) = s.pose.heading.sin_cos();
                DMatrix::from_row_slice(3, 2, &[cs, 0.0, sn, 0.0, 0.0, 1.0])
            }
            Model::SingleIntegrator => DMatrix::identity(2, 2),
        }
    }

    pub fn derivative(&self, s: &AgentState, u: &Vector2<f64>) -> DVector<f64> {
        self.drift(s) + self.actuation(s) * DVector::from_column_slice(u.as_slice())
    }
}

fn expect_model(s: &AgentState, expected: Model) -> Result<(), DynamicsError> {
    if s.model == expected {
        Ok(())
    } else {
        Err(DynamicsError::ModelMismatch {
            id: s.id,
            expected,
            actual: s.model,
        })
    }
}

/// `(v cos psi, v sin psi, omega)`.
pub fn unicycle_derivative(s: &AgentState, u: &Vector2<f64>) -> Result<Vector3<f64>, DynamicsError> {
    expect_model(s, Model::Unicycle)?;
    let (sn, cs) = s.pose.heading.sin_cos();
    Ok(Vector3::new(u.x * cs, u.x * sn, u.y))
}

pub fn integrator_derivative(s: &AgentState, u: &Vector2<f64>) -> Result<Vector2<f64>, DynamicsError> {
    expect_model(s, Model::SingleIntegrator)?;
    Ok(*u)
}

/// One explicit Euler step. Commands outside the box are clamped.
pub fn euler_step(s: &AgentState, u: &Vector2<f64>, dt: f64) -> AgentState {
    let u = if s.control_box.contains(u) {
        *u
    } else {
        let c = s.control_box.clamp(u);
        log::warn!("agent {}: command {:?} outside control box, clamped to {:?}", s.id, u, c);
        c
    };
    let mut next = s.clone();
    match s.model {
        Model::Unicycle => {
            let (sn, cs) = s.pose.heading.sin_cos();
            next.pose.position += Vector2::new(u.x * cs, u.x * sn) * dt;
            next.pose.heading = wrap_angle(s.pose.heading + u.y * dt);
        }
        Model::SingleIntegrator => {
            next.pose.position += u * dt;
        }
    }
    next.last_command = u;
    next
}

/// Unit vector from `position` toward `target`.
pub fn direction_toward(position: &Vector2<f64>, target: &Vector2<f64>) -> Result<Vector2<f64>, DynamicsError> {
    let e = target - position;
    let n = e.norm();
    if n < 1e-12 {
        Err(DynamicsError::AtTarget)
    } else {
        Ok(e / n)
    }
}

/// Negative normalized gradient of `V = ||p - p_r||^2`.
pub fn nominal_direction(s: &AgentState) -> Result<Vector2<f64>, DynamicsError> {
    direction_toward(&s.pose.position, &s.target)
}

/// Position on the constant-speed straight line from `start` to `target`
/// at time `t`, held at `target` once reached.
pub fn nominal_position_at(start: &Vector2<f64>, target: &Vector2<f64>, speed: f64, t: f64) -> Vector2<f64> {
    let e = target - start;
    let dist = e.norm();
    if dist < 1e-12 {
        return *target;
    }
    let travelled = speed * t.max(0.0);
    if travelled >= dist {
        *target
    } else {
        start + e * (travelled / dist)
    }
}

/// Positions at `t = k dt` for `k = 0..=floor(horizon/dt)`.
pub fn nominal_trajectory(s0: &AgentState, speed: f64, horizon: f64, dt: f64) -> Vec<Vector2<f64>> {
    let steps = step_count(horizon, dt);
    (0..=steps)
        .map(|k| nominal_position_at(&s0.pose.position, &s0.target, speed, k as f64 * dt))
        .collect()
}

/// `floor(horizon / dt)` robust to representation error in the quotient.
pub fn step_count(horizon: f64, dt: f64) -> usize {
    if !(horizon > 0.0) || !(dt > 0.0) {
        return 0;
    }
    (horizon / dt + 1e-9).floor() as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackingGains {
    pub k_s: f64,
    pub k_omega: f64,
}

impl Default for TrackingGains {
    fn default() -> Self {
        TrackingGains { k_s: 2.0, k_omega: 2.0 }
    }
}

/// Unclamped `(v, omega)` of the waypoint tracking law.
pub fn tracking_law(s: &AgentState, waypoint: &Vector2<f64>, gains: &TrackingGains) -> Vector2<f64> {
    let e = waypoint - s.pose.position;
    let dist = e.norm();
    if dist == 0.0 {
        return Vector2::zeros();
    }
    let bearing = e.y.atan2(e.x);
    Vector2::new(gains.k_s * dist, gains.k_omega * wrap_angle(bearing - s.pose.heading))
}

/// Tracking law clamped to the agent's control box.
pub fn track_reference(
    s: &AgentState,
    waypoint: &Vector2<f64>,
    gains: &TrackingGains,
) -> Result<Vector2<f64>, DynamicsError> {
    expect_model(s, Model::Unicycle)?;
    Ok(s.control_box.clamp(&tracking_law(s, waypoint, gains)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{AgentKind, Pose};
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    fn uni(x: f64, y: f64, psi: f64) -> AgentState {
        AgentState::new(0, AgentKind::Intact, Model::Unicycle, Pose::new(x, y, psi), Vector2::new(1.0, 0.0))
    }

    fn integ(x: f64, y: f64) -> AgentState {
        AgentState::new(1, AgentKind::Uncooperative, Model::SingleIntegrator, Pose::new(x, y, 0.0), Vector2::zeros())
    }

    #[test]
    fn unicycle_derivative_cases() {
        let d = unicycle_derivative(&uni(0.0, 0.0, 0.0), &Vector2::new(1.0, 0.0)).unwrap();
        assert_eq!(d, Vector3::new(1.0, 0.0, 0.0));
        let d = unicycle_derivative(&uni(0.0, 0.0, FRAC_PI_2), &Vector2::new(2.0, 0.5)).unwrap();
        assert!((d - Vector3::new(0.0, 2.0, 0.5)).norm() < 1e-15);
        let d = unicycle_derivative(&uni(0.0, 0.0, FRAC_PI_4), &Vector2::new(1.0, 0.0)).unwrap();
        let r = 0.5f64.sqrt();
        assert!((d.x - r).abs() < 1e-15 && (d.y - r).abs() < 1e-15 && d.z == 0.0);
        assert!(matches!(
            unicycle_derivative(&integ(0.0, 0.0), &Vector2::zeros()),
            Err(DynamicsError::ModelMismatch { .. })
        ));
    }

    #[test]
    fn integrator_derivative_cases() {
        let s = integ(0.0, 0.0);
        assert_eq!(integrator_derivative(&s, &Vector2::zeros()).unwrap(), Vector2::zeros());
        assert_eq!(integrator_derivative(&s, &Vector2::new(1.0, -2.0)).unwrap(), Vector2::new(1.0, -2.0));
        let d = integrator_derivative(&s, &Vector2::new(0.3, 0.4)).unwrap();
        assert!((d.norm() - 0.5).abs() < 1e-15);
        assert!(integrator_derivative(&uni(0.0, 0.0, 0.0), &Vector2::zeros()).is_err());
    }

    #[test]
    fn affine_model_matches_closed_forms() {
        let s = uni(1.0, 2.0, 0.7);
        let m = AffineModel::new(Model::Unicycle, ControlBox::default());
        let u = Vector2::new(1.3, -0.4);
        let d = m.derivative(&s, &u);
        let c = unicycle_derivative(&s, &u).unwrap();
        assert!((d[0] - c.x).abs() < 1e-15 && (d[1] - c.y).abs() < 1e-15 && (d[2] - c.z).abs() < 1e-15);
        assert_eq!(m.actuation(&s).ncols(), m.control_dim());
        let m2 = AffineModel::new(Model::SingleIntegrator, ControlBox::default());
        assert_eq!(m2.actuation(&integ(0.0, 0.0)).ncols(), 2);
        assert!(ControlBox::default().is_valid());
        assert!(!ControlBox { lo: [0.5, -1.0], hi: [1.0, 1.0] }.is_valid());
    }

    #[test]
    fn euler_step_cases() {
        let s = euler_step(&uni(0.0, 0.0, 0.0), &Vector2::new(1.0, 0.0), 0.05);
        assert_eq!(s.pose.position, Vector2::new(0.05, 0.0));
        assert_eq!(s.pose.heading, 0.0);

        let start = uni(0.3, -0.2, 1.0);
        let s = euler_step(&start, &Vector2::zeros(), 0.05);
        assert_eq!(s.pose, start.pose);

        let s = euler_step(&uni(0.0, 0.0, 3.13), &Vector2::new(0.0, 1.0), 0.05);
        let expected = 3.13 + 0.05 - 2.0 * PI;
        assert!((s.pose.heading - expected).abs() < 1e-12);
        assert!((s.pose.heading - (-3.103185307179586)).abs() < 1e-12);
    }

    #[test]
    fn euler_step_clamps() {
        let s = euler_step(&integ(0.0, 0.0), &Vector2::new(10.0, -10.0), 0.1);
        assert!((s.pose.position - Vector2::new(0.3, -0.3)).norm() < 1e-15);
        assert_eq!(s.last_command, Vector2::new(3.0, -3.0));
    }

    #[test]
    fn nominal_direction_cases() {
        let mut s = uni(0.0, 0.0, 0.0);
        assert_eq!(nominal_direction(&s).unwrap(), Vector2::new(1.0, 0.0));
        s.target = Vector2::new(3.0, 4.0);
        let n = nominal_direction(&s).unwrap();
        let len = (3.0f64 * 3.0 + 4.0 * 4.0).sqrt();
        assert!((n - Vector2::new(3.0 / len, 4.0 / len)).norm() < 1e-15);
        assert!((n - Vector2::new(0.6, 0.8)).norm() < 1e-15);
        s.target = s.pose.position;
        assert_eq!(nominal_direction(&s), Err(DynamicsError::AtTarget));
    }

    #[test]
    fn nominal_trajectory_straight_line() {
        let s = uni(0.0, 0.0, 0.0);
        let traj = nominal_trajectory(&s, 1.0, 2.0, 0.05);
        assert_eq!(traj.len(), 41);
        for (k, p) in traj.iter().enumerate() {
            let x = (0.05 * k as f64).min(1.0);
            assert!((p - Vector2::new(x, 0.0)).norm() < 1e-12, "k={k} p={p:?}");
        }
        assert_eq!(traj[20], Vector2::new(1.0, 0.0));
        assert_eq!(traj[40], Vector2::new(1.0, 0.0));

        assert_eq!(nominal_trajectory(&s, 1.0, 0.0, 0.05), vec![Vector2::zeros()]);
    }

    #[test]
    fn nominal_trajectory_reach_index() {
        let mut s = uni(0.0, 0.0, 0.0);
        s.target = Vector2::new(3.0, 4.0);
        let traj = nominal_trajectory(&s, 1.0, 8.0, 0.05);
        // 5 m at 1 m/s with 0.05 s steps
        let reach = (5.0f64 / 1.0 / 0.05).round() as usize;
        assert_eq!(reach, 100);
        let first = traj.iter().position(|p| *p == s.target).unwrap();
        assert_eq!(first, reach);
        assert!((traj[99] - s.target).norm() > 0.0);
    }

    #[test]
    fn track_reference_cases() {
        let g = TrackingGains::default();
        let s = uni(0.0, 0.0, 0.0);
        assert_eq!(track_reference(&s, &Vector2::new(1.0, 0.0), &g).unwrap(), Vector2::new(2.0, 0.0));
        assert_eq!(track_reference(&s, &Vector2::zeros(), &g).unwrap(), Vector2::zeros());
        let raw = tracking_law(&s, &Vector2::new(0.0, 1.0), &g);
        assert!((raw.x - 2.0).abs() < 1e-15);
        assert!((raw.y - 2.0 * (FRAC_PI_2 - 0.0)).abs() < 1e-15);
        assert!((raw.y - PI).abs() < 1e-15);
        let clamped = track_reference(&s, &Vector2::new(0.0, 1.0), &g).unwrap();
        assert_eq!(clamped, Vector2::new(2.0, 3.0));
        assert!(track_reference(&integ(0.0, 0.0), &Vector2::zeros(), &g).is_err());
    }

    proptest::proptest! {
        #[test]
        fn integrator_step_is_exact(x in -10.0..10.0f64, y in -10.0..10.0f64,
                                    ux in -3.0..3.0f64, uy in -3.0..3.0f64, dt in 0.001..0.2f64) {
            let s = integ(x, y);
            let n = euler_step(&s, &Vector2::new(ux, uy), dt);
            let d = n.pose.position - s.pose.position;
            proptest::prop_assert!((d.x - ux * dt).abs() <= 1e-14 && (d.y - uy * dt).abs() <= 1e-14);
        }

        #[test]
        fn nominal_direction_is_unit(x in -100.0..100.0f64, y in -100.0..100.0f64,
                                     tx in -100.0..100.0f64, ty in -100.0..100.0f64) {
            let mut s = uni(x, y, 0.0);
            s.target = Vector2::new(tx, ty);
            if let Ok(n) = nominal_direction(&s) {
                proptest::prop_assert!((n.norm() - 1.0).abs() <= 1e-12);
            }
        }

        #[test]
        fn tracking_stops_at_waypoint(x in -10.0..10.0f64, y in -10.0..10.0f64, psi in -3.0..3.0f64) {
            let s = uni(x, y, psi);
            let u = track_reference(&s, &s.pose.position, &TrackingGains::default()).unwrap();
            proptest::prop_assert_eq!(u.x, 0.0);
        }
    }

    #[test]
    fn heading_stays_wrapped_over_long_runs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut s = uni(0.0, 0.0, 0.0);
        for _ in 0..10_000 {
            let u = Vector2::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            s = euler_step(&s, &u, rng.gen_range(0.01..0.5));
            assert!(s.pose.heading > -PI && s.pose.heading <= PI);
        }
    }
}
