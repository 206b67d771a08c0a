//! Pairwise collision barriers, the goal-reaching CLF, and conversion of
//! barrier data into constraint rows on agent `i`'s input.

use nalgebra::{Matrix2, Vector2};

use crate::dynamics::DynamicsError;
use crate::solvers::{ConstraintRow, RowTag};
use crate::world::{AgentState, Model};

/// Default safety distance between agent reference points (m).
pub const DEFAULT_D_MIN: f64 = 0.5;
/// Default unicycle look-ahead offset (m).
pub const DEFAULT_LOOKAHEAD: f64 = 0.1;

/// `h = ||p_i - p_j||^2 - d_min^2` with its partial gradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierEval {
    pub h: f64,
    pub grad_i: Vector2<f64>,
    pub grad_j: Vector2<f64>,
    pub d_min: f64,
    /// Point of `i` the barrier is evaluated at (look-ahead for unicycles).
    pub point_i: Vector2<f64>,
    pub point_j: Vector2<f64>,
    /// Maps `i`'s input to the velocity of `point_i`.
    pub input_map_i: Matrix2<f64>,
}

impl BarrierEval {
    pub fn distance(&self) -> f64 {
        (self.point_i - self.point_j).norm()
    }
}

/// Offset point `p + l (cos psi, sin psi)` and the matrix `M(psi)` with
/// `d/dt p_tilde = M (v, omega)`.
pub fn lookahead_point(s: &AgentState, l: f64) -> Result<(Vector2<f64>, Matrix2<f64>), DynamicsError> {
    if s.model != Model::Unicycle {
        return Err(DynamicsError::ModelMismatch {
            id: s.id,
            expected: Model::Unicycle,
            actual: s.model,
        });
    }
    let (sn, cs) = s.pose.heading.sin_cos();
    let p = s.pose.position + l * Vector2::new(cs, sn);
    let m = Matrix2::new(cs, -l * sn, sn, l * cs);
    Ok((p, m))
}

/// The point of an agent that its barriers act on, with its input map.
pub fn controlled_point(s: &AgentState, l: f64) -> (Vector2<f64>, Matrix2<f64>) {
    match s.model {
        Model::Unicycle => lookahead_point(s, l).expect("unicycle"),
        Model::SingleIntegrator => (s.pose.position, Matrix2::identity()),
    }
}

/// Barrier value and gradients for two points.
pub fn barrier_from_points(p_i: &Vector2<f64>, p_j: &Vector2<f64>, d_min: f64) -> (f64, Vector2<f64>, Vector2<f64>) {
    let diff = p_i - p_j;
    let h = diff.norm_squared() - d_min * d_min;
    let g = 2.0 * diff;
    (h, g, -g)
}

/// Barrier between `i`'s controlled point and `j`'s position.
pub fn eval_barrier(x_i: &AgentState, x_j: &AgentState, d_min: f64, lookahead: f64) -> BarrierEval {
    let (point_i, input_map_i) = controlled_point(x_i, lookahead);
    let point_j = x_j.pose.position;
    let (h, grad_i, grad_j) = barrier_from_points(&point_i, &point_j, d_min);
    BarrierEval {
        h,
        grad_i,
        grad_j,
        d_min,
        point_i,
        point_j,
        input_map_i,
    }
}

/// `V = ||p - p_r||^2` and `grad V = 2 (p - p_r)`.
pub fn clf_value(s: &AgentState) -> (f64, Vector2<f64>) {
    let e = s.pose.position - s.target;
    (e.norm_squared(), 2.0 * e)
}

/// Row `grad_i M_i u >= -alpha h - grad_i f_i - grad_j a_j`.
///
/// Both models are driftless, so the `grad_i f_i` term is zero.
pub fn cbf_row(eval: &BarrierEval, worst_j_dot: &Vector2<f64>, alpha: f64, i: usize, j: usize) -> ConstraintRow {
    let a = eval.grad_i.transpose() * eval.input_map_i;
    let b = -alpha * eval.h - eval.grad_j.dot(worst_j_dot);
    ConstraintRow::new(vec![a[0], a[1]], b, RowTag::Pair { i, j })
}

/// Coefficient vector `grad_i M_i` of `i`'s contribution to `h_dot`.
pub fn own_contribution_coeffs(eval: &BarrierEval) -> Vec<f64> {
    let a = eval.grad_i.transpose() * eval.input_map_i;
    vec![a[0], a[1]]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::euler_step;
    use crate::world::{AgentKind, Pose};
    use std::f64::consts::FRAC_PI_2;

    fn integ(x: f64, y: f64) -> AgentState {
        AgentState::new(0, AgentKind::Intact, Model::SingleIntegrator, Pose::new(x, y, 0.0), Vector2::zeros())
    }

    fn uni(x: f64, y: f64, psi: f64) -> AgentState {
        AgentState::new(0, AgentKind::Intact, Model::Unicycle, Pose::new(x, y, psi), Vector2::zeros())
    }

    #[test]
    fn barrier_examples() {
        let e = eval_barrier(&integ(0.0, 0.0), &integ(2.0, 0.0), 1.0, 0.1);
        assert_eq!(e.h, 3.0);
        assert_eq!(e.grad_i, Vector2::new(-4.0, 0.0));
        assert_eq!(e.grad_j, Vector2::new(4.0, 0.0));

        let e = eval_barrier(&integ(1.5, -2.0), &integ(1.5, -2.0), 0.5, 0.1);
        assert_eq!(e.h, -0.25);

        let e = eval_barrier(&integ(1.0, 1.0), &integ(0.0, 0.0), 1.0, 0.1);
        assert_eq!(e.h, 1.0);
        let step = 1e-6;
        let h = |x: f64, y: f64| barrier_from_points(&Vector2::new(x, y), &Vector2::zeros(), 1.0).0;
        let gx = (h(1.0 + step, 1.0) - h(1.0 - step, 1.0)) / (2.0 * step);
        let gy = (h(1.0, 1.0 + step) - h(1.0, 1.0 - step)) / (2.0 * step);
        assert!((gx - e.grad_i.x).abs() < 1e-6 && (gy - e.grad_i.y).abs() < 1e-6);
    }

    #[test]
    fn lookahead_examples() {
        let (p, m) = lookahead_point(&uni(0.0, 0.0, 0.0), 0.1).unwrap();
        assert_eq!(p, Vector2::new(0.1, 0.0));
        assert_eq!(m, Matrix2::new(1.0, 0.0, 0.0, 0.1));

        let (_, m) = lookahead_point(&uni(0.0, 0.0, FRAC_PI_2), 0.1).unwrap();
        assert!((m - Matrix2::new(0.0, -0.1, 1.0, 0.0)).norm() < 1e-15);

        assert!(lookahead_point(&integ(0.0, 0.0), 0.1).is_err());
    }

    #[test]
    fn lookahead_map_matches_motion() {
        let s = uni(0.3, -0.7, FRAC_PI_2);
        let u = Vector2::new(0.8, 0.6);
        let dt = 1e-6;
        let (p0, m) = lookahead_point(&s, 0.1).unwrap();
        let (p1, _) = lookahead_point(&euler_step(&s, &u, dt), 0.1).unwrap();
        let fd = (p1 - p0) / dt;
        assert!((fd - m * u).norm() < 1e-5, "{fd:?} vs {:?}", m * u);
    }

    #[test]
    fn lookahead_det_is_offset() {
        for k in 0..64 {
            let psi = -3.1 + 0.1 * k as f64;
            let (_, m) = lookahead_point(&uni(0.0, 0.0, psi), 0.25).unwrap();
            assert!((m.determinant() - 0.25).abs() < 1e-14);
        }
    }

    #[test]
    fn clf_examples() {
        let mut s = integ(0.0, 0.0);
        assert_eq!(clf_value(&s), (0.0, Vector2::zeros()));
        s.pose.position = Vector2::new(1.0, 0.0);
        assert_eq!(clf_value(&s), (1.0, Vector2::new(2.0, 0.0)));
        s.pose.position = Vector2::new(3.0, 4.0);
        let (v, g) = clf_value(&s);
        assert_eq!(v, 25.0);
        let step = 1e-6;
        let vf = |x: f64, y: f64| {
            let mut t = s.clone();
            t.pose.position = Vector2::new(x, y);
            clf_value(&t).0
        };
        let gx = (vf(3.0 + step, 4.0) - vf(3.0 - step, 4.0)) / (2.0 * step);
        let gy = (vf(3.0, 4.0 + step) - vf(3.0, 4.0 - step)) / (2.0 * step);
        assert!((gx - g.x).abs() / g.x.abs() < 1e-6 && (gy - g.y).abs() / g.y.abs() < 1e-6);
    }

    #[test]
    fn cbf_row_static_neighbor() {
        let e = eval_barrier(&integ(0.0, 0.0), &integ(2.0, 0.0), 1.0, 0.1);
        let r = cbf_row(&e, &Vector2::zeros(), 0.8, 0, 1);
        assert_eq!(r.a, vec![-4.0, 0.0]);
        assert!((r.b + 2.4).abs() < 1e-15);
        assert_eq!(r.tag, RowTag::Pair { i: 0, j: 1 });
    }

    #[test]
    fn cbf_row_boundary_and_alpha() {
        // h = 0: only the neighbor term remains
        let e = eval_barrier(&integ(0.0, 0.0), &integ(1.0, 0.0), 1.0, 0.1);
        assert_eq!(e.h, 0.0);
        let aj = Vector2::new(-0.5, 0.2);
        let r = cbf_row(&e, &aj, 5.0, 0, 1);
        assert!((r.b + e.grad_j.dot(&aj)).abs() < 1e-15);

        let e = eval_barrier(&integ(0.0, 0.0), &integ(3.0, 0.0), 1.0, 0.1);
        let b1 = cbf_row(&e, &aj, 0.8, 0, 1).b;
        let b2 = cbf_row(&e, &aj, 1.6, 0, 1).b;
        assert!(b2 < b1);
        assert!(((b2 - b1) + 0.8 * e.h).abs() < 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn gradients_are_antisymmetric(x in -20.0..20.0f64, y in -20.0..20.0f64,
                                       px in -20.0..20.0f64, py in -20.0..20.0f64, psi in -3.1..3.1f64) {
            let e = eval_barrier(&uni(x, y, psi), &integ(px, py), 0.5, 0.1);
            proptest::prop_assert_eq!(e.grad_i + e.grad_j, Vector2::zeros());
            let recomputed = (e.point_i - e.point_j).norm_squared() - 0.25;
            proptest::prop_assert!((recomputed - e.h).abs() <= 1e-12 * (1.0 + e.h.abs()));
        }

        #[test]
        fn row_is_affine_in_alpha(x in -5.0..5.0f64, y in -5.0..5.0f64, a1 in 0.0..10.0f64, a2 in 0.0..10.0f64,
                                  vx in -3.0..3.0f64, vy in -3.0..3.0f64) {
            let e = eval_barrier(&integ(x, y), &integ(0.3, -0.2), 0.5, 0.1);
            let aj = Vector2::new(vx, vy);
            let d = cbf_row(&e, &aj, a2, 0, 1).b - cbf_row(&e, &aj, a1, 0, 1).b;
            proptest::prop_assert!((d + (a2 - a1) * e.h).abs() <= 1e-12 * (1.0 + (a2 * e.h).abs() + (e.grad_j.dot(&aj)).abs()));
        }

        #[test]
        fn unicycle_rows_nonzero(x in -5.0..5.0f64, y in -5.0..5.0f64, psi in -3.1..3.1f64) {
            let e = eval_barrier(&uni(x, y, psi), &integ(0.0, 0.0), 0.5, 0.1);
            if e.grad_i.norm() > 1e-9 {
                let r = cbf_row(&e, &Vector2::zeros(), 1.0, 0, 1);
                proptest::prop_assert!(r.a[0].abs() + r.a[1].abs() > 0.0);
            }
        }
    }
}
