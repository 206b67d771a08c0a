//! Trust inference and rate adaptation.
//!
//! For an ordered pair `(i, j)` agent `i` computes how much room `j` has
//! before `i` can no longer satisfy their barrier (the allowed-motion
//! half-space), compares `j`'s worst-case observed motion with that
//! half-space and with `j`'s nominal goal direction, and turns the result
//! into a trust score `rho` in `[-1, 1]`. The score drives `alpha_ij`,
//! subject to a lower bound on its rate that keeps the safety QP feasible.

use std::collections::VecDeque;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::barriers::{own_contribution_coeffs, BarrierEval};
use crate::dynamics::ControlBox;
use crate::solvers::{solve_lp, ConstraintRow, SolveError};
use crate::world::MotionEstimate;

/// Floor on the motion angle used in the direction score (rad).
pub const THETA_FLOOR: f64 = 1e-3;
/// Cap on the nominal/actual angle ratio.
pub const THETA_RATIO_CAP: f64 = 10.0;
/// Direction score assigned when the nominal direction is undefined.
pub const NEUTRAL_RHO_THETA: f64 = 0.5;
/// Barrier value below which the rate floor is undefined.
pub const H_EPS: f64 = 1e-6;
const HISTORY_LEN: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrustError {
    #[error("half-space normal vanishes (agents coincide)")]
    DegenerateNormal,
    #[error("barrier value {0} at or below the boundary, rate floor undefined")]
    BoundaryReached(f64),
}

/// Tunables of the trust pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrustParams {
    pub rho_bar_d: f64,
    pub beta: f64,
    pub k_blend: f64,
    pub gamma_alpha: f64,
    pub alpha0: f64,
    pub alpha_min: f64,
    #[serde(rename = "L_F")]
    pub l_f: f64,
    /// Gain inside the direction score, `tanh(theta_gain * ratio)`.
    pub theta_gain: f64,
}

impl Default for TrustParams {
    fn default() -> Self {
        TrustParams {
            rho_bar_d: 0.5,
            beta: 1.0,
            k_blend: 50.0,
            gamma_alpha: 1.0,
            alpha0: 0.8,
            alpha_min: 0.01,
            l_f: 1.0,
            theta_gain: 2.0,
        }
    }
}

/// `A v >= b` over neighbor velocities `v`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalfSpace {
    pub a: Vector2<f64>,
    pub b: f64,
    pub s_hat: Vector2<f64>,
}

/// One trust evaluation, kept for diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrustSample {
    pub rho: f64,
    pub rho_d: f64,
    pub rho_theta: f64,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrustState {
    pub alpha: f64,
    pub rho: f64,
    pub rho_d: f64,
    pub rho_theta: f64,
    pub margin: f64,
    pub history: VecDeque<TrustSample>,
}

impl TrustState {
    pub fn new(alpha0: f64) -> Self {
        TrustState {
            alpha: alpha0,
            rho: 0.0,
            rho_d: 0.0,
            rho_theta: NEUTRAL_RHO_THETA,
            margin: 0.0,
            history: VecDeque::with_capacity(HISTORY_LEN),
        }
    }

    pub fn record(&mut self, s: TrustSample) {
        self.rho = s.rho;
        self.rho_d = s.rho_d;
        self.rho_theta = s.rho_theta;
        self.margin = s.margin;
        if self.history.len() == HISTORY_LEN {
            self.history.pop_front();
        }
        self.history.push_back(s);
    }
}

/// Best value of `i`'s own barrier-rate contribution `grad_i M_i u` over
/// inputs that keep every other barrier row of `i` satisfied.
pub fn max_own_contribution(
    eval: &BarrierEval,
    other_rows: &[ConstraintRow],
    control_box: &ControlBox,
) -> Result<f64, SolveError> {
    let c = own_contribution_coeffs(eval);
    solve_lp(&c, other_rows, &control_box.lo_vec(), &control_box.hi_vec()).map(|s| s.value)
}

/// Allowed neighbor motions: `grad_j v >= -alpha h - max_contrib`.
pub fn build_halfspace(eval: &BarrierEval, alpha: f64, max_contrib: f64) -> Result<HalfSpace, TrustError> {
    let a = eval.grad_j;
    let n = a.norm();
    if n < 1e-12 {
        return Err(TrustError::DegenerateNormal);
    }
    Ok(HalfSpace {
        a,
        b: -alpha * eval.h - max_contrib,
        s_hat: a / n,
    })
}

/// Point of the estimate ball minimizing `grad_j . v`, and that minimum.
pub fn worst_case_motion(est: &MotionEstimate, grad_j: &Vector2<f64>) -> (Vector2<f64>, f64) {
    let n = grad_j.norm();
    if n == 0.0 {
        return (est.center, 0.0);
    }
    let a_j = est.center - est.radius * grad_j / n;
    (a_j, grad_j.dot(&est.center) - est.radius * n)
}

/// Satisfaction margin `A a_j - b`; negative for incompatible motion.
pub fn margin(hs: &HalfSpace, a_j: &Vector2<f64>) -> f64 {
    hs.a.dot(a_j) - hs.b
}

/// Distance score `tanh(beta * max(d, 0))`.
pub fn rho_d(d: f64, beta: f64) -> f64 {
    (beta * d.max(0.0)).tanh()
}

/// Unsigned angle in `[0, pi]`.
pub fn angle_between(u: &Vector2<f64>, v: &Vector2<f64>) -> f64 {
    let cross = u.x * v.y - u.y * v.x;
    cross.abs().atan2(u.dot(v))
}

/// Direction score `tanh(gain * theta_ns / theta_as)`.
///
/// `n_hat = None` (neighbor at its goal) yields the neutral score. A zero
/// motion vector is treated as orthogonal to the half-space normal.
pub fn rho_theta(n_hat: Option<&Vector2<f64>>, a_j: &Vector2<f64>, s_hat: &Vector2<f64>, gain: f64) -> f64 {
    let Some(n_hat) = n_hat else {
        return NEUTRAL_RHO_THETA;
    };
    let theta_ns = angle_between(n_hat, s_hat);
    let theta_as = if a_j.norm() < 1e-12 {
        std::f64::consts::FRAC_PI_2
    } else {
        angle_between(a_j, s_hat)
    };
    let ratio = (theta_ns / theta_as.max(THETA_FLOOR)).min(THETA_RATIO_CAP);
    (gain * ratio).tanh()
}

/// Trust in `[-1, 1]` from `x = rho_d - rho_bar_d`: `x rho_theta` for
/// `x >= 0`, `x (1 - rho_theta)` below. Each branch is faded in by
/// `tanh(k_blend |x|)`, which keeps the switch smooth and monotone in `rho_d`.
pub fn combine_trust(rho_d: f64, rho_theta: f64, rho_bar_d: f64, k_blend: f64) -> f64 {
    let x = rho_d - rho_bar_d;
    let gate = if k_blend.is_infinite() { 1.0 } else { (k_blend * x.abs()).tanh() };
    let weight = if x >= 0.0 { rho_theta } else { 1.0 - rho_theta };
    (x * weight * gate).clamp(-1.0, 1.0)
}

/// Proposed `alpha_dot = gamma * rho`.
pub fn alpha_rate(rho: f64, gamma_alpha: f64) -> f64 {
    gamma_alpha * rho
}

/// Inputs of the feasibility-preserving bound on `alpha_dot`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FloorInputs {
    /// Constraint margin `h_dot + alpha h` at the best admissible input.
    pub d: f64,
    pub alpha: f64,
    pub h: f64,
    /// Speed bound `||F_hat|| + b_F`.
    pub speed_bound: f64,
    pub l_h: f64,
    pub l_hdot: f64,
    pub l_f: f64,
}

/// `-(d + L_hdot L_F B^2 + alpha L_h B) / h`.
pub fn alpha_rate_floor(f: &FloorInputs) -> Result<f64, TrustError> {
    if f.h <= H_EPS {
        return Err(TrustError::BoundaryReached(f.h));
    }
    let b = f.speed_bound;
    Ok(-(f.d + f.l_hdot * f.l_f * b * b + f.alpha * f.l_h * b) / f.h)
}

/// `(-d + L_hdot L_F B^2 + alpha L_h B) / h`.
///
/// Same ingredients as [`alpha_rate_floor`] with the state-variation terms
/// taken at their worst, so the bound tightens as the margin shrinks.
pub fn alpha_rate_floor_worst_case(f: &FloorInputs) -> Result<f64, TrustError> {
    if f.h <= H_EPS {
        return Err(TrustError::BoundaryReached(f.h));
    }
    let b = f.speed_bound;
    Ok((-f.d + f.l_hdot * f.l_f * b * b + f.alpha * f.l_h * b) / f.h)
}

/// Which form of the `alpha_dot` lower bound the controller enforces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FloorBound {
    /// [`alpha_rate_floor`].
    #[default]
    Published,
    /// [`alpha_rate_floor_worst_case`].
    WorstCase,
}

impl FloorBound {
    pub fn eval(self, f: &FloorInputs) -> Result<f64, TrustError> {
        match self {
            FloorBound::Published => alpha_rate_floor(f),
            FloorBound::WorstCase => alpha_rate_floor_worst_case(f),
        }
    }
}

/// Local Lipschitz constants of the squared-distance barrier over one step.
pub fn local_lipschitz(eval: &BarrierEval, speed_bound: f64, dt: f64) -> (f64, f64) {
    (2.0 * (eval.distance() + speed_bound * dt), 2.0)
}

/// `alpha <- max(alpha + dt * max(rate, floor), alpha_min)`.
///
/// `floor = None` disables the lower bound on the rate.
pub fn update_alpha(
    ts: &TrustState,
    sample: TrustSample,
    gamma_alpha: f64,
    dt: f64,
    floor: Option<f64>,
    alpha_min: f64,
) -> TrustState {
    let proposed = alpha_rate(sample.rho, gamma_alpha);
    let rate = match floor {
        Some(f) => proposed.max(f),
        None => proposed,
    };
    let mut next = ts.clone();
    next.alpha = (ts.alpha + dt * rate).max(alpha_min);
    next.record(sample);
    next
}
