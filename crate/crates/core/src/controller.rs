//! Per-agent control synthesis for intact agents.
//!
//! Each tick agent `i` predicts every neighbor's worst-case motion, scores
//! trust for each ordered pair `(i, j)`, adapts `alpha_ij`, builds a
//! reference command and projects it onto the set of inputs satisfying all
//! of its barrier rows.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::barriers::{cbf_row, clf_value, eval_barrier, BarrierEval, DEFAULT_LOOKAHEAD};
use crate::dynamics::{direction_toward, nominal_position_at, track_reference, ControlBox, TrackingGains};
use crate::solvers::{solve_qp, ConstraintRow, QpProblem, RowTag, SolveError};
use crate::trust::{
    build_halfspace, combine_trust, local_lipschitz, margin, max_own_contribution, rho_d,
    rho_theta, update_alpha, worst_case_motion, FloorBound, FloorInputs, TrustError, TrustParams, TrustSample, TrustState,
};
use crate::world::{estimate_motion, AgentState, Model, MotionEstimate, WorldSnapshot};

/// When `alpha_ij` is updated relative to the safety QP of the same tick.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaUpdateOrder {
    /// Update first; the QP uses the new value.
    #[default]
    UpdateFirst,
    /// Solve with the current value, then update.
    ControlFirst,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Fallback {
    #[default]
    None,
    Emergency,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerConfig {
    pub dt: f64,
    pub lookahead: f64,
    pub gains: TrackingGains,
    /// How far ahead on the nominal trajectory the unicycle waypoint is taken (s).
    pub lead_time: f64,
    /// CLF decay rate `k` for integrator agents.
    pub clf_rate: f64,
    /// Radius of the motion estimate before any motion is observed (m/s).
    pub v_max_global: f64,
    pub fixed_alpha: bool,
    pub alpha_floor: bool,
    pub floor_bound: FloorBound,
    pub alpha_update_order: AlphaUpdateOrder,
    pub trust: TrustParams,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            dt: 0.05,
            lookahead: DEFAULT_LOOKAHEAD,
            gains: TrackingGains::default(),
            lead_time: 0.5,
            clf_rate: 2.0,
            v_max_global: 3.0,
            fixed_alpha: false,
            alpha_floor: true,
            floor_bound: FloorBound::Published,
            alpha_update_order: AlphaUpdateOrder::UpdateFirst,
            trust: TrustParams::default(),
        }
    }
}

/// Static per-agent data the controller needs besides the snapshot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentPlan {
    pub start: Vector2<f64>,
    pub d_min: f64,
    pub nominal_speed: f64,
}

/// Trust state of every ordered pair `(i, j)`, `i != j`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrustTable {
    n: usize,
    states: Vec<TrustState>,
}

impl TrustTable {
    pub fn new(n: usize, alpha0: f64) -> Self {
        TrustTable {
            n,
            states: vec![TrustState::new(alpha0); n * n],
        }
    }

    pub fn get(&self, i: usize, j: usize) -> &TrustState {
        &self.states[i * self.n + j]
    }

    pub fn get_mut(&mut self, i: usize, j: usize) -> &mut TrustState {
        &mut self.states[i * self.n + j]
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
}

/// What happened to pair `(i, j)` during one tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairReport {
    pub j: usize,
    pub h: f64,
    /// `alpha_ij` at the start of the tick.
    pub alpha: f64,
    /// Value the safety QP used.
    pub alpha_used: f64,
    pub sample: TrustSample,
    pub floor: Option<f64>,
    pub floor_binding: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlDecision {
    pub u_ref: Vector2<f64>,
    pub u_safe: Vector2<f64>,
    pub rows: Vec<ConstraintRow>,
    pub feasible: bool,
    pub fallback: Fallback,
    pub pairs: Vec<PairReport>,
}

/// Min-norm input satisfying `V_dot <= -k V`.
pub fn clf_qp_reference(s: &AgentState, k: f64) -> Result<Vector2<f64>, SolveError> {
    let (v, grad) = clf_value(s);
    // Position rows of g(x): identity for integrators, heading column for unicycles.
    let a = match s.model {
        Model::SingleIntegrator => vec![-grad.x, -grad.y],
        Model::Unicycle => {
            let (sn, cs) = s.pose.heading.sin_cos();
            vec![-(grad.x * cs + grad.y * sn), 0.0]
        }
    };
    let row = ConstraintRow::new(a, k * v, RowTag::Clf);
    let p = QpProblem::new(vec![0.0, 0.0], vec![row], s.control_box.lo_vec(), s.control_box.hi_vec());
    solve_qp(&p).map(|sol| Vector2::new(sol.u[0], sol.u[1]))
}

/// CLF-QP reference, or the min-norm CLF input scaled into the box when the
/// CLF condition cannot be met with bounded input.
pub fn saturated_clf_reference(s: &AgentState, k: f64) -> Vector2<f64> {
    clf_qp_reference(s, k).unwrap_or_else(|_| {
        let raw = -(k / 2.0) * (s.pose.position - s.target);
        scale_into_box(&raw, &s.control_box)
    })
}

/// Shrinks `u` along its own direction until it lies in `cbox`.
pub fn scale_into_box(u: &Vector2<f64>, cbox: &ControlBox) -> Vector2<f64> {
    let mut scale = 1.0f64;
    for k in 0..2 {
        if u[k] > cbox.hi[k] {
            scale = scale.min(cbox.hi[k] / u[k]);
        } else if u[k] < cbox.lo[k] {
            scale = scale.min(cbox.lo[k] / u[k]);
        }
    }
    u * scale.max(0.0)
}

fn neighbor_estimate(history: &[WorldSnapshot], j: usize, cfg: &ControllerConfig) -> MotionEstimate {
    estimate_motion(history, j, cfg.dt).unwrap_or_else(|_| MotionEstimate::bootstrap(cfg.v_max_global))
}

struct Neighbor {
    j: usize,
    eval: BarrierEval,
    estimate: MotionEstimate,
    worst: Vector2<f64>,
}

/// One tick of the intact-agent controller for agent `i`.
///
/// `history` holds past snapshots, oldest first; its last element is the
/// current one.
pub fn agent_step(
    i: usize,
    history: &[WorldSnapshot],
    plans: &[AgentPlan],
    table: &mut TrustTable,
    cfg: &ControllerConfig,
) -> ControlDecision {
    let snap = history.last().expect("history holds the current snapshot");
    let me = &snap.agents()[i];
    let cbox: ControlBox = me.control_box;
    let tp = &cfg.trust;

    let neighbors: Vec<Neighbor> = snap
        .agents()
        .iter()
        .filter(|other| other.id != i)
        .map(|other| {
            let j = other.id;
            let d_min = plans[i].d_min.max(plans[j].d_min);
            let eval = eval_barrier(me, other, d_min, cfg.lookahead);
            let estimate = neighbor_estimate(history, j, cfg);
            let (worst, _) = worst_case_motion(&estimate, &eval.grad_j);
            Neighbor { j, eval, estimate, worst }
        })
        .collect();

    let current_rows: Vec<ConstraintRow> = neighbors
        .iter()
        .map(|n| cbf_row(&n.eval, &n.worst, table.get(i, n.j).alpha, i, n.j))
        .collect();

    let mut pairs = Vec::with_capacity(neighbors.len());
    // a barrier at h <= H_EPS leaves the alpha floor undefined
    let mut boundary = false;
    for (idx, n) in neighbors.iter().enumerate() {
        let other = &snap.agents()[n.j];
        let ts = table.get(i, n.j).clone();
        let others: Vec<ConstraintRow> = current_rows
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != idx)
            .map(|(_, r)| r.clone())
            .collect();
        let max_contrib = max_own_contribution(&n.eval, &others, &cbox).unwrap_or_else(|e| {
            log::debug!("agent {i}: own-contribution LP for pair ({i},{}) failed ({e}), using box only", n.j);
            max_own_contribution(&n.eval, &[], &cbox).unwrap_or(0.0)
        });

        let mut report = PairReport {
            j: n.j,
            h: n.eval.h,
            alpha: ts.alpha,
            alpha_used: ts.alpha,
            sample: TrustSample {
                rho: ts.rho,
                rho_d: ts.rho_d,
                rho_theta: ts.rho_theta,
                margin: ts.margin,
            },
            floor: None,
            floor_binding: false,
        };

        let hs = match build_halfspace(&n.eval, ts.alpha, max_contrib) {
            Ok(hs) => hs,
            Err(TrustError::DegenerateNormal) | Err(TrustError::BoundaryReached(_)) => {
                log::warn!("agent {i}: degenerate half-space for neighbor {}, trust update skipped", n.j);
                pairs.push(report);
                continue;
            }
        };
        let d = margin(&hs, &n.worst);
        if d < 0.0 {
            log::debug!("agent {i}: neighbor {} motion incompatible (margin {d:.3e})", n.j);
        }
        let score_d = rho_d(d, tp.beta);
        let nominal = if other.target_known {
            direction_toward(&other.pose.position, &other.target).ok()
        } else {
            direction_toward(&other.pose.position, &me.pose.position).ok()
        };
        let score_theta = rho_theta(nominal.as_ref(), &n.worst, &hs.s_hat, tp.theta_gain);
        let rho = combine_trust(score_d, score_theta, tp.rho_bar_d, tp.k_blend);
        let sample = TrustSample {
            rho,
            rho_d: score_d,
            rho_theta: score_theta,
            margin: d,
        };
        report.sample = sample;

        if cfg.fixed_alpha {
            let mut next = ts.clone();
            next.record(sample);
            *table.get_mut(i, n.j) = next;
        } else {
            let floor = if cfg.alpha_floor {
                let b = n.estimate.speed_bound();
                let (l_h, l_hdot) = local_lipschitz(&n.eval, b, cfg.dt);
                let f = cfg.floor_bound.eval(&FloorInputs {
                    d,
                    alpha: ts.alpha,
                    h: n.eval.h,
                    speed_bound: b,
                    l_h,
                    l_hdot,
                    l_f: tp.l_f,
                });
                match f {
                    Ok(f) => Some(f),
                    Err(_) => {
                        log::warn!("agent {i}: barrier with {} at the boundary, emergency stop", n.j);
                        boundary = true;
                        Some(0.0)
                    }
                }
            } else {
                None
            };
            report.floor = floor;
            report.floor_binding = floor.is_some_and(|f| f > tp.gamma_alpha * rho);
            *table.get_mut(i, n.j) = update_alpha(&ts, sample, tp.gamma_alpha, cfg.dt, floor, tp.alpha_min);
        }
        if cfg.alpha_update_order == AlphaUpdateOrder::UpdateFirst {
            report.alpha_used = table.get(i, n.j).alpha;
        }
        pairs.push(report);
    }

    let rows: Vec<ConstraintRow> = neighbors
        .iter()
        .zip(&pairs)
        .map(|(n, rep)| cbf_row(&n.eval, &n.worst, rep.alpha_used, i, n.j))
        .collect();

    let u_ref = match me.model {
        Model::Unicycle => {
            let t = snap.time() + cfg.lead_time;
            let wp = nominal_position_at(&plans[i].start, &me.target, plans[i].nominal_speed, t);
            track_reference(me, &wp, &cfg.gains).expect("unicycle")
        }
        Model::SingleIntegrator => saturated_clf_reference(me, cfg.clf_rate),
    };

    let problem = QpProblem::new(u_ref.as_slice().to_vec(), rows.clone(), cbox.lo_vec(), cbox.hi_vec());
    let (u_safe, feasible, fallback) = match solve_qp(&problem) {
        Ok(_) if boundary => (cbox.clamp(&Vector2::zeros()), true, Fallback::Emergency),
        Ok(sol) => (Vector2::new(sol.u[0], sol.u[1]), true, Fallback::None),
        Err(e) => {
            log::warn!("agent {i} at t={:.3}: safety QP failed ({e}), emergency stop", snap.time());
            (cbox.clamp(&Vector2::zeros()), false, Fallback::Emergency)
        }
    };

    ControlDecision {
        u_ref,
        u_safe,
        rows,
        feasible,
        fallback,
        pairs,
    }
}
