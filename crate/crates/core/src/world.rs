//! Global multi-agent state, immutable observation snapshots and the
//! bounded-difference estimator of neighbor motion.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::ControlBox;
use crate::wrap_angle;

/// Relative radius of the estimate ball: `b_F = 0.1 * ||F_hat||`.
pub const ESTIMATE_RADIUS_FRACTION: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorldError {
    #[error("motion estimate needs two snapshots, got {0}")]
    MissingHistory(usize),
    #[error("agent {0} is not part of the snapshot")]
    UnknownAgent(usize),
    #[error("non-positive time step {0}")]
    BadTimeStep(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AgentKind {
    Intact,
    Uncooperative,
    Adversarial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Model {
    Unicycle,
    SingleIntegrator,
}

/// Position plus heading. Heading is kept at 0 for single integrators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Vector2<f64>,
    pub heading: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Pose {
            position: Vector2::new(x, y),
            heading: wrap_angle(heading),
        }
    }
}

/// Snapshot of one agent.
///
/// `target` is the agent's own reference position. `target_known` says
/// whether observers may use it; when false they assume the worst case
/// (the neighbor heads straight for them).
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub id: usize,
    pub kind: AgentKind,
    pub model: Model,
    pub pose: Pose,
    pub target: Vector2<f64>,
    pub target_known: bool,
    pub last_command: Vector2<f64>,
    pub control_box: ControlBox,
}

impl AgentState {
    pub fn new(id: usize, kind: AgentKind, model: Model, pose: Pose, target: Vector2<f64>) -> Self {
        AgentState {
            id,
            kind,
            model,
            pose,
            target,
            target_known: true,
            last_command: Vector2::zeros(),
            control_box: ControlBox::default(),
        }
    }

    pub fn position(&self) -> Vector2<f64> {
        self.pose.position
    }

    pub fn is_finite(&self) -> bool {
        self.pose.position.iter().all(|v| v.is_finite())
            && self.pose.heading.is_finite()
            && self.target.iter().all(|v| v.is_finite())
    }
}

/// Immutable copy of the whole system state at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldSnapshot {
    time: f64,
    agents: Vec<AgentState>,
}

impl WorldSnapshot {
    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn agents(&self) -> &[AgentState] {
        &self.agents
    }

    pub fn agent(&self, id: usize) -> Option<&AgentState> {
        self.agents.get(id)
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    /// Bitwise digest of every stored float and tag.
    pub fn digest(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.time.to_bits().hash(&mut h);
        for a in &self.agents {
            a.id.hash(&mut h);
            a.kind.hash(&mut h);
            a.model.hash(&mut h);
            a.target_known.hash(&mut h);
            let floats = [
                a.pose.position.x,
                a.pose.position.y,
                a.pose.heading,
                a.target.x,
                a.target.y,
                a.last_command.x,
                a.last_command.y,
            ];
            for f in floats.iter().chain(a.control_box.lo.iter()).chain(a.control_box.hi.iter()) {
                f.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }
}

/// Mutable world store. The simulator is the single writer.
#[derive(Debug, Clone)]
pub struct World {
    pub time: f64,
    pub agents: Vec<AgentState>,
}

impl World {
    /// Agents are re-numbered so that ids are contiguous `0..N`.
    pub fn new(mut agents: Vec<AgentState>) -> Self {
        for (i, a) in agents.iter_mut().enumerate() {
            a.id = i;
        }
        World { time: 0.0, agents }
    }

    pub fn take_snapshot(&self) -> WorldSnapshot {
        WorldSnapshot {
            time: self.time,
            agents: self.agents.clone(),
        }
    }
}

/// Ball-valued estimate of a neighbor's position rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionEstimate {
    pub center: Vector2<f64>,
    /// Heading rate, estimated but not used by position barriers.
    pub heading_rate: f64,
    pub radius: f64,
}

impl MotionEstimate {
    /// Conservative estimate used before any motion has been observed.
    pub fn bootstrap(v_max: f64) -> Self {
        MotionEstimate {
            center: Vector2::zeros(),
            heading_rate: 0.0,
            radius: v_max.max(0.0),
        }
    }

    /// `B = ||F_hat|| + b_F`, the bound on the neighbor's speed.
    pub fn speed_bound(&self) -> f64 {
        self.center.norm() + self.radius
    }

    /// True when `velocity` lies in the estimate ball.
    pub fn contains(&self, velocity: &Vector2<f64>, tol: f64) -> bool {
        (velocity - self.center).norm() <= self.radius + tol
    }
}

/// Finite-difference estimate from the last two snapshots in `history`.
pub fn estimate_motion(
    history: &[WorldSnapshot],
    j: usize,
    dt: f64,
) -> Result<MotionEstimate, WorldError> {
    if history.len() < 2 {
        return Err(WorldError::MissingHistory(history.len()));
    }
    if !(dt > 0.0) {
        return Err(WorldError::BadTimeStep(dt));
    }
    let prev = history[history.len() - 2]
        .agent(j)
        .ok_or(WorldError::UnknownAgent(j))?;
    let cur = history[history.len() - 1]
        .agent(j)
        .ok_or(WorldError::UnknownAgent(j))?;
    let center = (cur.pose.position - prev.pose.position) / dt;
    let heading_rate = wrap_angle(cur.pose.heading - prev.pose.heading) / dt;
    Ok(MotionEstimate {
        center,
        heading_rate,
        radius: ESTIMATE_RADIUS_FRACTION * center.norm(),
    })
}
