//! Trust-based rate-tunable control barrier functions for multi-agent systems.
//!
//! Each intact agent filters a goal-reaching reference command through a
//! CBF quadratic program. The class-K rate `alpha_ij` of every pairwise
//! barrier is a dynamic state, driven by a trust score computed from the
//! observed motion of neighbor `j` relative to what `i` can tolerate.
//!
//! Module map:
//! - [`world`]: agent states, immutable snapshots, bounded-difference motion estimates
//! - [`dynamics`]: unicycle and single-integrator models, Euler steps, nominal motion, tracking law
//! - [`solvers`]: dense active-set QP, two-phase simplex LP, grid oracle
//! - [`barriers`]: pairwise distance barriers, CLF, constraint-row assembly
//! - [`trust`]: allowed-motion half-space, trust scores, alpha adaptation
//! - [`controller`]: the per-agent two-step (reference + safety filter) loop
//! - [`sim`]: scenario engine, non-cooperative policies, metrics
//! - [`cli`]: scenario files, CSV/JSON/SVG outputs, argument parsing

pub mod barriers;
pub mod cli;
pub mod controller;
pub mod dynamics;
pub mod sim;
pub mod solvers;
pub mod trust;
pub mod world;

pub use barriers::BarrierEval;
pub use controller::{ControlDecision, Fallback};
pub use sim::{Metrics, Scenario, Trace};
pub use solvers::{ConstraintRow, QpProblem, RowTag, SolveError};
pub use world::{AgentKind, AgentState, Model, MotionEstimate, WorldSnapshot};

/// Wrap an angle into `(-pi, pi]`.
pub fn wrap_angle(angle: f64) -> f64 {
    use std::f64::consts::PI;
    let mut a = angle % (2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a
}
