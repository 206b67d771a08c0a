//! Scenario engine: world construction, the synchronous fixed-step loop,
//! non-cooperative agent policies and run metrics.

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::barriers::{eval_barrier, DEFAULT_D_MIN, DEFAULT_LOOKAHEAD};
use crate::controller::{agent_step, saturated_clf_reference, AgentPlan, AlphaUpdateOrder, ControllerConfig, Fallback, TrustTable};
use crate::dynamics::{euler_step, nominal_position_at, step_count, ControlBox, TrackingGains};
use crate::trust::{FloorBound, TrustParams};
use crate::world::{AgentKind, AgentState, Model, Pose, World, WorldSnapshot};

/// Distance under which an agent counts as having reached its goal (m).
pub const GOAL_REACH_RADIUS: f64 = 0.2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        field: field.into(),
        message: message.into(),
    }
}

/// Agent goal as written in a scenario file: a point or `"unknown"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TargetSpec {
    Known([f64; 2]),
    Hidden(HiddenTarget),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HiddenTarget {
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub kind: AgentKind,
    pub model: Model,
    /// `[x, y]` or `[x, y, psi]`.
    pub start: Vec<f64>,
    pub target: TargetSpec,
    #[serde(default = "default_d_min")]
    pub d_min: f64,
    #[serde(default, rename = "box")]
    pub control_box: ControlBox,
    /// Agent chased by an adversary.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prey: Option<usize>,
    /// CLF rate of an adversary's chase law.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain: Option<f64>,
    /// Cruise speed of an uncooperative agent, nominal speed of an intact one (m/s).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speed: Option<f64>,
}

fn default_d_min() -> f64 {
    DEFAULT_D_MIN
}

impl AgentSpec {
    pub fn new(kind: AgentKind, model: Model, start: [f64; 3], target: Option<[f64; 2]>) -> Self {
        AgentSpec {
            kind,
            model,
            start: start.to_vec(),
            target: target.map_or(TargetSpec::Hidden(HiddenTarget::Unknown), TargetSpec::Known),
            d_min: DEFAULT_D_MIN,
            control_box: ControlBox::default(),
            prey: None,
            gain: None,
            speed: None,
        }
    }

    fn start_pose(&self) -> Pose {
        let psi = if self.model == Model::Unicycle {
            self.start.get(2).copied().unwrap_or(0.0)
        } else {
            0.0
        };
        Pose::new(self.start[0], self.start[1], psi)
    }

    /// Own goal; agents with a hidden goal hold their start position.
    fn goal(&self) -> Vector2<f64> {
        match self.target {
            TargetSpec::Known([x, y]) => Vector2::new(x, y),
            TargetSpec::Hidden(_) => Vector2::new(self.start[0], self.start[1]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Flags {
    pub fixed_alpha: bool,
    pub alpha_update_order: AlphaUpdateOrder,
    /// Enforce the feasibility-preserving lower bound on `alpha_dot`.
    pub alpha_floor: bool,
    pub floor_bound: FloorBound,
}

impl Default for Flags {
    fn default() -> Self {
        Flags {
            fixed_alpha: false,
            alpha_update_order: AlphaUpdateOrder::UpdateFirst,
            alpha_floor: true,
            floor_bound: FloorBound::Published,
        }
    }
}

/// Controller tunables shared by all intact agents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerSettings {
    pub nominal_speed: f64,
    pub lookahead: f64,
    pub k_s: f64,
    pub k_omega: f64,
    pub lead_time: f64,
    pub clf_rate: f64,
    pub v_max_global: f64,
}

impl Default for ControllerSettings {
    fn default() -> Self {
        let g = TrackingGains::default();
        ControllerSettings {
            nominal_speed: 1.0,
            lookahead: DEFAULT_LOOKAHEAD,
            k_s: g.k_s,
            k_omega: g.k_omega,
            lead_time: 0.5,
            clf_rate: 2.0,
            v_max_global: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub agents: Vec<AgentSpec>,
    pub duration: f64,
    pub dt: f64,
    #[serde(default)]
    pub trust: TrustParams,
    #[serde(default)]
    pub flags: Flags,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub controller: ControllerSettings,
}

const CROSSING: &str = include_str!("../scenarios/crossing.json");
const HEAD_ON_STRESS: &str = include_str!("../scenarios/head_on_stress.json");

impl Scenario {
    pub fn from_json(text: &str) -> Result<Scenario, ScenarioError> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| ScenarioError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// Reconstructed crossing scenario: three intact unicycles, an adversary
    /// chasing agent 0 and two uncooperative agents on horizontal lanes.
    pub fn crossing() -> Scenario {
        Scenario::from_json(CROSSING).expect("bundled scenario is valid")
    }

    /// One intact unicycle met head-on by a fast adversary.
    pub fn head_on_stress() -> Scenario {
        Scenario::from_json(HEAD_ON_STRESS).expect("bundled scenario is valid")
    }

    /// One intact unicycle driving past a static agent from a random start.
    ///
    /// The start pose, goal and obstacle are drawn from `seed`; the initial
    /// barrier value is kept above 0.1.
    pub fn static_obstacle(seed: u64) -> Scenario {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d_min = DEFAULT_D_MIN;
        let obstacle = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let mut spec;
        loop {
            let ang: f64 = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
            let r: f64 = rng.gen_range(1.0..4.0);
            let start = [obstacle[0] + r * ang.cos(), obstacle[1] + r * ang.sin()];
            // goal on the far side, slightly offset so the straight line grazes the obstacle
            let off: f64 = rng.gen_range(-0.4..0.4);
            let goal = [
                obstacle[0] - r * ang.cos() - off * ang.sin(),
                obstacle[1] - r * ang.sin() + off * ang.cos(),
            ];
            let heading = (goal[1] - start[1]).atan2(goal[0] - start[0]) + rng.gen_range(-0.5..0.5);
            spec = AgentSpec::new(AgentKind::Intact, Model::Unicycle, [start[0], start[1], heading], Some(goal));
            let state = AgentState::new(0, AgentKind::Intact, Model::Unicycle, spec.start_pose(), spec.goal());
            let obs = AgentState::new(
                1,
                AgentKind::Uncooperative,
                Model::SingleIntegrator,
                Pose::new(obstacle[0], obstacle[1], 0.0),
                Vector2::new(obstacle[0], obstacle[1]),
            );
            if eval_barrier(&state, &obs, d_min, DEFAULT_LOOKAHEAD).h > 0.1 {
                break;
            }
        }
        let mut static_agent = AgentSpec::new(
            AgentKind::Uncooperative,
            Model::SingleIntegrator,
            [obstacle[0], obstacle[1], 0.0],
            Some(obstacle),
        );
        static_agent.speed = Some(0.0);
        Scenario {
            agents: vec![spec, static_agent],
            duration: 10.0,
            dt: 0.05,
            trust: TrustParams::default(),
            flags: Flags::default(),
            seed,
            controller: ControllerSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(invalid("dt", format!("must be positive, got {}", self.dt)));
        }
        if !(self.duration >= 0.0) || !self.duration.is_finite() {
            return Err(invalid("duration", format!("must be nonnegative, got {}", self.duration)));
        }
        if self.duration > 0.0 && self.duration < self.dt {
            return Err(invalid("duration", "must be zero or at least one time step"));
        }
        if self.agents.is_empty() {
            return Err(invalid("agents", "at least one agent is required"));
        }
        let t = &self.trust;
        if !(t.alpha0 > 0.0) {
            return Err(invalid("trust.alpha0", "must be positive"));
        }
        if !(t.alpha_min > 0.0) || t.alpha_min > t.alpha0 {
            return Err(invalid("trust.alpha_min", "must be positive and not above alpha0"));
        }
        if !(t.rho_bar_d > 0.0 && t.rho_bar_d <= 1.0) {
            return Err(invalid("trust.rho_bar_d", "must lie in (0, 1]"));
        }
        for (name, v) in [
            ("trust.beta", t.beta),
            ("trust.k_blend", t.k_blend),
            ("trust.theta_gain", t.theta_gain),
        ] {
            if !(v > 0.0) {
                return Err(invalid(name, "must be positive"));
            }
        }
        if !(t.gamma_alpha >= 0.0) || !(t.l_f >= 0.0) {
            return Err(invalid("trust", "gamma_alpha and L_F must be nonnegative"));
        }
        let c = &self.controller;
        for (name, v) in [
            ("controller.lookahead", c.lookahead),
            ("controller.k_s", c.k_s),
            ("controller.k_omega", c.k_omega),
            ("controller.clf_rate", c.clf_rate),
            ("controller.nominal_speed", c.nominal_speed),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(invalid(name, "must be positive"));
            }
        }
        if !(c.lead_time >= 0.0) || !(c.v_max_global >= 0.0) {
            return Err(invalid("controller", "lead_time and v_max_global must be nonnegative"));
        }
        let n = self.agents.len();
        for (k, a) in self.agents.iter().enumerate() {
            let f = |name: &str| format!("agents[{k}].{name}");
            if !(a.start.len() == 2 || a.start.len() == 3) || a.start.iter().any(|v| !v.is_finite()) {
                return Err(invalid(f("start"), "expected finite [x, y] or [x, y, psi]"));
            }
            if let TargetSpec::Known(p) = a.target {
                if p.iter().any(|v| !v.is_finite()) {
                    return Err(invalid(f("target"), "must be finite"));
                }
            }
            if !(a.d_min > 0.0) {
                return Err(invalid(f("d_min"), "must be positive"));
            }
            if !a.control_box.is_valid() {
                return Err(invalid(f("box"), "must be finite, nonempty and contain zero"));
            }
            match a.kind {
                AgentKind::Adversarial => {
                    let Some(prey) = a.prey else {
                        return Err(invalid(f("prey"), "required for Adversarial agents"));
                    };
                    if prey >= n || prey == k {
                        return Err(invalid(f("prey"), format!("must name another agent in 0..{n}")));
                    }
                    if a.model != Model::SingleIntegrator {
                        return Err(invalid(f("model"), "Adversarial agents are single integrators"));
                    }
                }
                _ => {
                    if a.prey.is_some() {
                        return Err(invalid(f("prey"), "only Adversarial agents have prey"));
                    }
                }
            }
            if a.kind == AgentKind::Uncooperative && a.model != Model::SingleIntegrator {
                return Err(invalid(f("model"), "Uncooperative agents are single integrators"));
            }
            if let Some(g) = a.gain {
                if !(g > 0.0) {
                    return Err(invalid(f("gain"), "must be positive"));
                }
            }
            if let Some(v) = a.speed {
                if !(v >= 0.0) || !v.is_finite() {
                    return Err(invalid(f("speed"), "must be nonnegative"));
                }
            }
        }
        Ok(())
    }

    pub fn controller_config(&self) -> ControllerConfig {
        let c = &self.controller;
        ControllerConfig {
            dt: self.dt,
            lookahead: c.lookahead,
            gains: TrackingGains {
                k_s: c.k_s,
                k_omega: c.k_omega,
            },
            lead_time: c.lead_time,
            clf_rate: c.clf_rate,
            v_max_global: c.v_max_global,
            fixed_alpha: self.flags.fixed_alpha,
            alpha_floor: self.flags.alpha_floor,
            floor_bound: self.flags.floor_bound,
            alpha_update_order: self.flags.alpha_update_order,
            trust: self.trust,
        }
    }

    pub fn plans(&self) -> Vec<AgentPlan> {
        self.agents
            .iter()
            .map(|a| AgentPlan {
                start: Vector2::new(a.start[0], a.start[1]),
                d_min: a.d_min,
                nominal_speed: a.speed.unwrap_or(self.controller.nominal_speed),
            })
            .collect()
    }

    pub fn initial_world(&self) -> World {
        World::new(
            self.agents
                .iter()
                .enumerate()
                .map(|(k, a)| {
                    let mut s = AgentState::new(k, a.kind, a.model, a.start_pose(), a.goal());
                    s.target_known = matches!(a.target, TargetSpec::Known(_));
                    s.control_box = a.control_box;
                    s
                })
                .collect(),
        )
    }

    pub fn step_count(&self) -> usize {
        step_count(self.duration, self.dt)
    }
}

/// Chase law: CLF-QP toward the prey's current position.
///
/// When the CLF condition cannot be met inside the box the min-norm chase
/// direction is scaled down until it fits.
pub fn adversary_policy(s: &AgentState, snapshot: &WorldSnapshot, prey: usize, k: f64) -> Vector2<f64> {
    let mut chase = s.clone();
    chase.target = snapshot.agents()[prey].pose.position;
    saturated_clf_reference(&chase, k)
}

/// Constant-speed motion toward the agent's own goal, blind to everyone else.
pub fn uncooperative_policy(s: &AgentState, speed: f64, dt: f64) -> Vector2<f64> {
    let e = s.target - s.pose.position;
    let dist = e.norm();
    if dist == 0.0 {
        return Vector2::zeros();
    }
    let v = speed.min(dist / dt);
    s.control_box.clamp(&(e * (v / dist)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentRecord {
    pub pose: Pose,
    pub u_ref: Vector2<f64>,
    pub u_safe: Vector2<f64>,
    pub fallback: Fallback,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairRecord {
    pub i: usize,
    pub j: usize,
    pub h: f64,
    pub alpha: f64,
    pub rho: f64,
    pub rho_d: f64,
    pub rho_theta: f64,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: f64,
    pub agents: Vec<AgentRecord>,
    pub pairs: Vec<PairRecord>,
}

/// A safety QP that had no solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InfeasibleEvent {
    pub step: usize,
    pub agent: usize,
    /// Smallest barrier value of that agent at the time.
    pub min_h: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    pub steps: Vec<StepRecord>,
    pub infeasible: Vec<InfeasibleEvent>,
    /// Ticks where the alpha rate floor overrode the trust-driven rate.
    pub floor_binding: usize,
    /// Observed neighbor velocities that fell outside the previous estimate ball.
    pub estimate_violations: usize,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn emergency_events(&self) -> usize {
        self.steps
            .iter()
            .flat_map(|s| s.agents.iter())
            .filter(|a| a.fallback == Fallback::Emergency)
            .count()
    }

    /// `alpha_ij` over time.
    pub fn alpha_series(&self, i: usize, j: usize) -> Vec<f64> {
        self.steps
            .iter()
            .filter_map(|s| s.pairs.iter().find(|p| p.i == i && p.j == j).map(|p| p.alpha))
            .collect()
    }
}

/// Runs the synchronous loop and records every tick.
pub fn run(s: &Scenario) -> Result<Trace, ScenarioError> {
    s.validate()?;
    let cfg = s.controller_config();
    let plans = s.plans();
    let mut world = s.initial_world();
    let n_agents = world.agents.len();
    let mut table = TrustTable::new(n_agents, s.trust.alpha0);
    let steps = s.step_count();
    let mut history: Vec<WorldSnapshot> = vec![world.take_snapshot()];
    let mut trace = Trace::default();

    for k in 0..=steps {
        let snap = history.last().expect("current snapshot").clone();
        let mut record = StepRecord {
            t: snap.time(),
            agents: Vec::with_capacity(n_agents),
            pairs: Vec::new(),
        };
        let mut commands = Vec::with_capacity(n_agents);
        for (id, spec) in s.agents.iter().enumerate() {
            let state = &snap.agents()[id];
            match spec.kind {
                AgentKind::Intact => {
                    let d = agent_step(id, &history, &plans, &mut table, &cfg);
                    trace.floor_binding += d.pairs.iter().filter(|p| p.floor_binding).count();
                    if !d.feasible {
                        let min_h = d.pairs.iter().map(|p| p.h).fold(f64::INFINITY, f64::min);
                        trace.infeasible.push(InfeasibleEvent { step: k, agent: id, min_h });
                    }
                    record.pairs.extend(d.pairs.iter().map(|p| PairRecord {
                        i: id,
                        j: p.j,
                        h: p.h,
                        alpha: p.alpha,
                        rho: p.sample.rho,
                        rho_d: p.sample.rho_d,
                        rho_theta: p.sample.rho_theta,
                        margin: p.sample.margin,
                    }));
                    record.agents.push(AgentRecord {
                        pose: state.pose,
                        u_ref: d.u_ref,
                        u_safe: d.u_safe,
                        fallback: d.fallback,
                    });
                    commands.push(d.u_safe);
                }
                AgentKind::Adversarial => {
                    let u = adversary_policy(
                        state,
                        &snap,
                        spec.prey.expect("validated"),
                        spec.gain.unwrap_or(s.controller.clf_rate),
                    );
                    record.agents.push(AgentRecord {
                        pose: state.pose,
                        u_ref: u,
                        u_safe: u,
                        fallback: Fallback::None,
                    });
                    commands.push(u);
                }
                AgentKind::Uncooperative => {
                    let u = uncooperative_policy(state, spec.speed.unwrap_or(s.controller.nominal_speed), s.dt);
                    record.agents.push(AgentRecord {
                        pose: state.pose,
                        u_ref: u,
                        u_safe: u,
                        fallback: Fallback::None,
                    });
                    commands.push(u);
                }
            }
        }
        trace.steps.push(record);
        if k == steps {
            break;
        }

        // Jacobi update: every agent steps from the same snapshot.
        for (id, u) in commands.iter().enumerate() {
            world.agents[id] = euler_step(&snap.agents()[id], u, s.dt);
        }
        world.time = (k + 1) as f64 * s.dt;
        let next = world.take_snapshot();

        if history.len() >= 2 {
            for j in 0..n_agents {
                let est = crate::world::estimate_motion(&history, j, s.dt).expect("two snapshots");
                let actual = (next.agents()[j].pose.position - snap.agents()[j].pose.position) / s.dt;
                if !est.contains(&actual, 1e-9) {
                    trace.estimate_violations += 1;
                    log::debug!("t={:.2}: agent {j} left its motion estimate ball", next.time());
                }
            }
            history.remove(0);
        }
        history.push(next);
    }
    Ok(trace)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentMetrics {
    pub id: usize,
    pub min_h: f64,
    pub final_goal_distance: f64,
    pub nominal_deviation: f64,
    /// First time within [`GOAL_REACH_RADIUS`] of the goal; `None` if never.
    pub goal_reach_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub agents: Vec<AgentMetrics>,
    /// Minimum over all recorded intact-agent barriers.
    pub min_h: f64,
    pub infeasible_events: usize,
    pub emergency_events: usize,
    pub floor_binding_events: usize,
    pub estimate_violations: usize,
}

impl Metrics {
    pub fn agent(&self, id: usize) -> Option<&AgentMetrics> {
        self.agents.iter().find(|a| a.id == id)
    }
}

/// Per-intact-agent summary of a run.
pub fn metrics(tr: &Trace, s: &Scenario) -> Metrics {
    let plans = s.plans();
    let mut agents = Vec::new();
    for (id, spec) in s.agents.iter().enumerate() {
        if spec.kind != AgentKind::Intact {
            continue;
        }
        let goal = spec.goal();
        let plan = &plans[id];
        let mut min_h = f64::INFINITY;
        let mut deviation = 0.0f64;
        let mut reach = None;
        for step in &tr.steps {
            for p in step.pairs.iter().filter(|p| p.i == id) {
                min_h = min_h.min(p.h);
            }
            let pos = step.agents[id].pose.position;
            let nominal = nominal_position_at(&plan.start, &goal, plan.nominal_speed, step.t);
            deviation = deviation.max((pos - nominal).norm());
            if reach.is_none() && (pos - goal).norm() < GOAL_REACH_RADIUS {
                reach = Some(step.t);
            }
        }
        let final_goal_distance = tr
            .steps
            .last()
            .map_or(f64::NAN, |st| (st.agents[id].pose.position - goal).norm());
        agents.push(AgentMetrics {
            id,
            min_h,
            final_goal_distance,
            nominal_deviation: deviation,
            goal_reach_time: reach,
        });
    }
    let min_h = agents.iter().map(|a| a.min_h).fold(f64::INFINITY, f64::min);
    Metrics {
        agents,
        min_h,
        infeasible_events: tr.infeasible.len(),
        emergency_events: tr.emergency_events(),
        floor_binding_events: tr.floor_binding,
        estimate_violations: tr.estimate_violations,
    }
}
