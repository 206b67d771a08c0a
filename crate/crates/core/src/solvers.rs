//! Small dense convex solvers.
//!
//! * [`solve_qp`]: Euclidean projection of a reference point onto a polytope
//!   `{u : a_k . u >= b_k, lo <= u <= hi}` by a primal active-set method.
//!   The starting vertex comes from phase one of the simplex below.
//! * [`solve_lp`]: two-phase dense-tableau simplex with Bland's rule over the
//!   box-extended polytope.
//! * [`qp_oracle`]: brute-force grid search, used to cross-check the QP.
//!
//! Problem sizes are tiny (control dimension 2 or 3, under a dozen rows), so
//! everything is dense and recomputed from scratch each iteration.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Internal feasibility tolerance.
pub const FEAS_TOL: f64 = 1e-9;
/// Rows whose normal is shorter than this are treated as degenerate.
pub const DEGENERATE_NORM: f64 = 1e-12;

const MAX_ACTIVE_SET_ITERS: usize = 500;
const PIVOT_TOL: f64 = 1e-11;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("feasible set is empty")]
    Infeasible,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("control box is empty or not finite")]
    EmptyBox,
    #[error("iteration limit reached")]
    IterationLimit,
}

/// Where a constraint row came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RowTag {
    /// CBF row of ordered pair `(i, j)`.
    Pair { i: usize, j: usize },
    /// CLF decrease condition.
    Clf,
    /// Box face on `axis`; `upper` selects `u <= hi`.
    Bound { axis: usize, upper: bool },
    /// Anything else (tests, FFI callers).
    User(usize),
}

/// One linear inequality `a . u >= b`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintRow {
    pub a: Vec<f64>,
    pub b: f64,
    pub tag: RowTag,
}

impl ConstraintRow {
    pub fn new(a: Vec<f64>, b: f64, tag: RowTag) -> Self {
        ConstraintRow { a, b, tag }
    }

    /// `a . u - b`; nonnegative when the row holds.
    pub fn slack(&self, u: &[f64]) -> f64 {
        dot(&self.a, u) - self.b
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub u_ref: Vec<f64>,
    pub rows: Vec<ConstraintRow>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl QpProblem {
    pub fn new(u_ref: Vec<f64>, rows: Vec<ConstraintRow>, lo: Vec<f64>, hi: Vec<f64>) -> Self {
        QpProblem { u_ref, rows, lo, hi }
    }

    pub fn dim(&self) -> usize {
        self.u_ref.len()
    }

    pub fn objective(&self, u: &[f64]) -> f64 {
        u.iter().zip(&self.u_ref).map(|(x, r)| (x - r) * (x - r)).sum()
    }

    /// Largest violation of any row or box face at `u` (0 when feasible).
    pub fn max_violation(&self, u: &[f64]) -> f64 {
        max_violation(&self.rows, &self.lo, &self.hi, u)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub u: Vec<f64>,
    /// Tags of the constraints in the final working set (rows and box faces).
    pub active: Vec<RowTag>,
    /// Lagrange multipliers aligned with `active`, scaled to the caller's rows.
    pub multipliers: Vec<f64>,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub value: f64,
    pub u: Vec<f64>,
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn max_violation(rows: &[ConstraintRow], lo: &[f64], hi: &[f64], u: &[f64]) -> f64 {
    let mut v = 0.0f64;
    for r in rows {
        v = v.max(-r.slack(u));
    }
    for k in 0..u.len() {
        v = v.max(lo[k] - u[k]).max(u[k] - hi[k]);
    }
    v
}

fn check_dims(n: usize, rows: &[ConstraintRow], lo: &[f64], hi: &[f64]) -> Result<(), SolveError> {
    if lo.len() != n || hi.len() != n {
        return Err(SolveError::DimensionMismatch(format!(
            "box has {}/{} entries for dimension {n}",
            lo.len(),
            hi.len()
        )));
    }
    if let Some(r) = rows.iter().find(|r| r.a.len() != n) {
        return Err(SolveError::DimensionMismatch(format!(
            "row {:?} has {} coefficients for dimension {n}",
            r.tag,
            r.a.len()
        )));
    }
    if (0..n).any(|k| !(lo[k] <= hi[k]) || !lo[k].is_finite() || !hi[k].is_finite()) {
        return Err(SolveError::EmptyBox);
    }
    Ok(())
}

/// Unit-normal copy of a row plus its original scale.
#[derive(Debug, Clone)]
struct NormRow {
    a: Vec<f64>,
    b: f64,
    scale: f64,
    tag: RowTag,
}

/// Normalizes rows, drops vacuous degenerate rows and appends box faces.
fn prepare_rows(rows: &[ConstraintRow], lo: &[f64], hi: &[f64]) -> Result<Vec<NormRow>, SolveError> {
    let n = lo.len();
    let mut out = Vec::with_capacity(rows.len() + 2 * n);
    for r in rows {
        let s = norm(&r.a);
        if !(s >= DEGENERATE_NORM) {
            if r.b > 0.0 || r.b.is_nan() {
                return Err(SolveError::Infeasible);
            }
            continue;
        }
        out.push(NormRow {
            a: r.a.iter().map(|x| x / s).collect(),
            b: r.b / s,
            scale: s,
            tag: r.tag,
        });
    }
    for k in 0..n {
        let mut e = vec![0.0; n];
        e[k] = 1.0;
        out.push(NormRow {
            a: e.clone(),
            b: lo[k],
            scale: 1.0,
            tag: RowTag::Bound { axis: k, upper: false },
        });
        e[k] = -1.0;
        out.push(NormRow {
            a: e,
            b: -hi[k],
            scale: 1.0,
            tag: RowTag::Bound { axis: k, upper: true },
        });
    }
    Ok(out)
}

/// Solves `(A_W A_W^T) z = rhs` for the working-set rows.
fn gram_solve(rows: &[NormRow], work: &[usize], rhs: &[f64]) -> Option<Vec<f64>> {
    let m = work.len();
    let gram = DMatrix::from_fn(m, m, |p, q| dot(&rows[work[p]].a, &rows[work[q]].a));
    let z = gram.lu().solve(&DVector::from_column_slice(rhs))?;
    Some(z.iter().copied().collect())
}

/// True when `a` is (numerically) outside the span of the working-set rows.
fn independent_of(rows: &[NormRow], work: &[usize], a: &[f64]) -> bool {
    if work.is_empty() {
        return norm(a) > 1e-9;
    }
    let rhs: Vec<f64> = work.iter().map(|&k| dot(&rows[k].a, a)).collect();
    match gram_solve(rows, work, &rhs) {
        Some(z) => {
            let mut r = a.to_vec();
            for (c, &k) in z.iter().zip(work) {
                for (ri, ak) in r.iter_mut().zip(&rows[k].a) {
                    *ri -= c * ak;
                }
            }
            norm(&r) > 1e-9
        }
        None => false,
    }
}

/// Euclidean projection of `p.u_ref` onto the feasible polytope.
pub fn solve_qp(p: &QpProblem) -> Result<QpSolution, SolveError> {
    let n = p.dim();
    check_dims(n, &p.rows, &p.lo, &p.hi)?;
    let rows = prepare_rows(&p.rows, &p.lo, &p.hi)?;
    let r = &p.u_ref;
    let slack = |k: usize, u: &[f64]| dot(&rows[k].a, u) - rows[k].b;

    // Already feasible: the projection is the point itself.
    if (0..rows.len()).all(|k| slack(k, r) >= -FEAS_TOL) {
        return Ok(QpSolution {
            u: r.clone(),
            active: Vec::new(),
            multipliers: Vec::new(),
            iterations: 0,
        });
    }

    let user_rows: Vec<ConstraintRow> = rows
        .iter()
        .filter(|nr| !matches!(nr.tag, RowTag::Bound { .. }))
        .map(|nr| ConstraintRow::new(nr.a.clone(), nr.b, nr.tag))
        .collect();
    let start = solve_lp(&vec![0.0; n], &user_rows, &p.lo, &p.hi)?;
    let mut x = start.u;

    let mut work: Vec<usize> = Vec::new();
    for k in 0..rows.len() {
        if work.len() < n && slack(k, &x).abs() <= FEAS_TOL && independent_of(&rows, &work, &rows[k].a) {
            work.push(k);
        }
    }

    for iter in 1..=MAX_ACTIVE_SET_ITERS {
        let g: Vec<f64> = r.iter().zip(&x).map(|(ri, xi)| ri - xi).collect();
        // Step: component of g in the null space of the working rows.
        let mut step = g.clone();
        if !work.is_empty() {
            let rhs: Vec<f64> = work.iter().map(|&k| dot(&rows[k].a, &g)).collect();
            let mu = gram_solve(&rows, &work, &rhs).ok_or(SolveError::IterationLimit)?;
            for (c, &k) in mu.iter().zip(&work) {
                for (si, ak) in step.iter_mut().zip(&rows[k].a) {
                    *si -= c * ak;
                }
            }
        }

        if norm(&step) <= 1e-12 * (1.0 + norm(&g)) {
            // Stationary on the working face: x - r = A_W^T lambda.
            let lambda = if work.is_empty() {
                Vec::new()
            } else {
                let rhs: Vec<f64> = work.iter().map(|&k| -dot(&rows[k].a, &g)).collect();
                gram_solve(&rows, &work, &rhs).ok_or(SolveError::IterationLimit)?
            };
            let mut drop: Option<usize> = None;
            let mut most_negative = -1e-12;
            for (pos, &l) in lambda.iter().enumerate() {
                if l < most_negative {
                    most_negative = l;
                    drop = Some(pos);
                }
            }
            match drop {
                None => {
                    // Re-derive x from the final face so that rounding picked
                    // up on the way from a far-away start does not survive.
                    let mut u = r.clone();
                    let rhs: Vec<f64> = work.iter().map(|&k| rows[k].b - dot(&rows[k].a, r)).collect();
                    let mu = if work.is_empty() { Vec::new() } else { gram_solve(&rows, &work, &rhs).unwrap_or_default() };
                    for (l, &k) in mu.iter().zip(&work) {
                        for (ui, ak) in u.iter_mut().zip(&rows[k].a) {
                            *ui += l * ak;
                        }
                    }
                    let u = if max_violation(&p.rows, &p.lo, &p.hi, &u) <= max_violation(&p.rows, &p.lo, &p.hi, &x) + FEAS_TOL {
                        u
                    } else {
                        x
                    };
                    return Ok(QpSolution {
                        u,
                        active: work.iter().map(|&k| rows[k].tag).collect(),
                        multipliers: work
                            .iter()
                            .zip(&lambda)
                            .map(|(&k, l)| l / rows[k].scale)
                            .collect(),
                        iterations: iter,
                    });
                }
                Some(pos) => {
                    work.remove(pos);
                }
            }
            continue;
        }

        // Longest feasible step along `step`, Bland tie-break on row order.
        let mut t_max = 1.0;
        let mut blocking: Option<usize> = None;
        for k in 0..rows.len() {
            if work.contains(&k) {
                continue;
            }
            let ad = dot(&rows[k].a, &step);
            if ad < -1e-14 {
                let t = (slack(k, &x) / -ad).max(0.0);
                if t < t_max {
                    t_max = t;
                    blocking = Some(k);
                }
            }
        }
        for (xi, si) in x.iter_mut().zip(&step) {
            *xi += t_max * si;
        }
        if let Some(k) = blocking {
            work.push(k);
        }
    }
    Err(SolveError::IterationLimit)
}

/// Dense simplex tableau in canonical form: `rows[i]` holds `B^-1 A` with the
/// right-hand side in the last column.
struct Tableau {
    t: Vec<Vec<f64>>,
    basis: Vec<usize>,
    ncols: usize,
}

impl Tableau {
    fn rhs(&self, i: usize) -> f64 {
        self.t[i][self.ncols]
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let pv = self.t[r][c];
        for v in self.t[r].iter_mut() {
            *v /= pv;
        }
        let prow = self.t[r].clone();
        for (i, row) in self.t.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[c];
            if f != 0.0 {
                for (v, pvv) in row.iter_mut().zip(&prow) {
                    *v -= f * pvv;
                }
                row[c] = 0.0;
            }
        }
        self.basis[r] = c;
    }

    /// Maximizes `obj . z` over columns with `allowed[j]`. Bland's rule.
    fn maximize(&mut self, obj: &[f64], allowed: &[bool]) -> Result<(), SolveError> {
        let max_iter = 50 * (self.ncols + self.t.len()) + 100;
        for _ in 0..max_iter {
            let mut entering = None;
            for j in 0..self.ncols {
                if !allowed[j] || self.basis.contains(&j) {
                    continue;
                }
                let reduced = obj[j]
                    - self
                        .basis
                        .iter()
                        .enumerate()
                        .map(|(i, &bj)| obj[bj] * self.t[i][j])
                        .sum::<f64>();
                if reduced > 1e-12 {
                    entering = Some(j);
                    break;
                }
            }
            let Some(c) = entering else {
                return Ok(());
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.t.len() {
                let a = self.t[i][c];
                if a > PIVOT_TOL {
                    let ratio = self.rhs(i) / a;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((li, lr)) => {
                            if ratio < lr - 1e-14 || (ratio <= lr + 1e-14 && self.basis[i] < self.basis[li]) {
                                Some((i, ratio))
                            } else {
                                Some((li, lr))
                            }
                        }
                    };
                }
            }
            // The box keeps every direction bounded.
            let Some((r, _)) = leave else {
                return Err(SolveError::IterationLimit);
            };
            self.pivot(r, c);
        }
        Err(SolveError::IterationLimit)
    }
}

/// Maximizes `c . u` subject to `rows` and `lo <= u <= hi`.
pub fn solve_lp(c: &[f64], rows: &[ConstraintRow], lo: &[f64], hi: &[f64]) -> Result<LpSolution, SolveError> {
    let n = c.len();
    check_dims(n, rows, lo, hi)?;
    let rows: Vec<NormRow> = prepare_rows(rows, lo, hi)?
        .into_iter()
        .filter(|r| !matches!(r.tag, RowTag::Bound { .. }))
        .collect();
    let m_rows = rows.len();

    // Shift to y = u - lo in [0, w]. Columns: y (n) | surplus (m_rows) |
    // box slack (n) | artificials.
    let w: Vec<f64> = (0..n).map(|k| hi[k] - lo[k]).collect();
    let surplus0 = n;
    let boxslack0 = n + m_rows;
    let art0 = n + m_rows + n;

    let mut needs_art = Vec::new();
    let mut specs = Vec::new();
    for (ri, r) in rows.iter().enumerate() {
        let beta = r.b - dot(&r.a, lo);
        if beta > 0.0 {
            needs_art.push(ri);
        }
        specs.push(beta);
    }
    let n_art = needs_art.len();
    let ncols = art0 + n_art;
    let m = m_rows + n;
    let mut t = vec![vec![0.0; ncols + 1]; m];
    let mut basis = vec![0usize; m];
    let mut art_of_row = vec![None; m_rows];
    for (k, &ri) in needs_art.iter().enumerate() {
        art_of_row[ri] = Some(art0 + k);
    }
    for (ri, r) in rows.iter().enumerate() {
        let beta = specs[ri];
        if let Some(ac) = art_of_row[ri] {
            // a.y - s + art = beta
            t[ri][..n].copy_from_slice(&r.a);
            t[ri][surplus0 + ri] = -1.0;
            t[ri][ac] = 1.0;
            t[ri][ncols] = beta;
            basis[ri] = ac;
        } else {
            // -a.y + s = -beta >= 0
            for k in 0..n {
                t[ri][k] = -r.a[k];
            }
            t[ri][surplus0 + ri] = 1.0;
            t[ri][ncols] = -beta;
            basis[ri] = surplus0 + ri;
        }
    }
    for k in 0..n {
        let row = m_rows + k;
        t[row][k] = 1.0;
        t[row][boxslack0 + k] = 1.0;
        t[row][ncols] = w[k];
        basis[row] = boxslack0 + k;
    }
    let mut tab = Tableau { t, basis, ncols };

    if n_art > 0 {
        let mut obj = vec![0.0; ncols];
        for o in obj.iter_mut().skip(art0) {
            *o = -1.0;
        }
        tab.maximize(&obj, &vec![true; ncols])?;
        let infeas: f64 = (0..m)
            .filter(|&i| tab.basis[i] >= art0)
            .map(|i| tab.rhs(i))
            .sum();
        if infeas > FEAS_TOL {
            return Err(SolveError::Infeasible);
        }
        // Drive remaining (zero-valued) artificials out of the basis.
        for i in 0..m {
            if tab.basis[i] >= art0 {
                if let Some(j) = (0..art0).find(|&j| tab.t[i][j].abs() > 1e-9 && !tab.basis.contains(&j)) {
                    tab.pivot(i, j);
                }
            }
        }
    }

    let mut obj = vec![0.0; ncols];
    obj[..n].copy_from_slice(c);
    let allowed: Vec<bool> = (0..ncols).map(|j| j < art0).collect();
    tab.maximize(&obj, &allowed)?;

    let mut u = lo.to_vec();
    for (i, &bj) in tab.basis.iter().enumerate() {
        if bj < n {
            u[bj] += tab.rhs(i);
        }
    }
    // Clean representation noise at the box faces.
    for k in 0..n {
        u[k] = u[k].clamp(lo[k], hi[k]);
    }
    Ok(LpSolution { value: dot(c, &u), u })
}

/// Brute-force minimizer of `||u - u_ref||^2` over grid points of the box.
///
/// A coarse uniform grid locates the best feasible point, then successively
/// finer local grids around it shrink the step down to `resolution`.
/// Returns `None` when no grid point is feasible.
pub fn qp_oracle(p: &QpProblem, resolution: f64) -> Option<Vec<f64>> {
    let n = p.dim();
    assert!((1..=3).contains(&n), "qp_oracle handles dimensions 1..=3");
    let coarse_pts: usize = match n {
        1 => 4001,
        2 => 401,
        _ => 61,
    };
    let feasible = |u: &[f64]| p.max_violation(u) <= 0.0;

    let mut best: Option<(f64, Vec<f64>)> = None;
    let consider = |u: Vec<f64>, best: &mut Option<(f64, Vec<f64>)>| {
        if feasible(&u) {
            let f = p.objective(&u);
            if best.as_ref().map_or(true, |(bf, _)| f < *bf) {
                *best = Some((f, u));
            }
        }
    };

    let steps: Vec<f64> = (0..n)
        .map(|k| (p.hi[k] - p.lo[k]) / (coarse_pts - 1) as f64)
        .collect();
    for_each_grid_point(n, coarse_pts, |idx| {
        let u: Vec<f64> = (0..n).map(|k| p.lo[k] + steps[k] * idx[k] as f64).collect();
        consider(u, &mut best);
    });
    let (_, mut center) = best.clone()?;

    let mut step = steps.iter().cloned().fold(0.0f64, f64::max);
    const HALF: usize = 12;
    const MAX_RECENTER: usize = 400;
    while step > resolution {
        let fine = (step / 4.0).max(resolution);
        let pts = 2 * HALF + 1;
        let span = fine * HALF as f64;
        // re-center until the local grid stops improving (walks thin wedges)
        for _ in 0..MAX_RECENTER {
            for_each_grid_point(n, pts, |idx| {
                let u: Vec<f64> = (0..n)
                    .map(|k| (center[k] - span + fine * idx[k] as f64).clamp(p.lo[k], p.hi[k]))
                    .collect();
                consider(u, &mut best);
            });
            let next = best.as_ref().map(|b| b.1.clone())?;
            if next == center {
                break;
            }
            center = next;
        }
        step = fine;
    }
    best.map(|b| b.1)
}

fn for_each_grid_point(n: usize, pts: usize, mut f: impl FnMut(&[usize])) {
    let mut idx = vec![0usize; n];
    loop {
        f(&idx);
        let mut k = 0;
        loop {
            idx[k] += 1;
            if idx[k] < pts {
                break;
            }
            idx[k] = 0;
            k += 1;
            if k == n {
                return;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(a: &[f64], b: f64, id: usize) -> ConstraintRow {
        ConstraintRow::new(a.to_vec(), b, RowTag::User(id))
    }

    fn qp(u_ref: &[f64], rows: Vec<ConstraintRow>, bound: f64) -> QpProblem {
        let n = u_ref.len();
        QpProblem::new(u_ref.to_vec(), rows, vec![-bound; n], vec![bound; n])
    }

    #[test]
    fn interior_reference_is_returned() {
        let p = qp(&[2.0, 0.0], vec![row(&[1.0, 0.0], 0.0, 0)], 10.0);
        let s = solve_qp(&p).unwrap();
        assert_eq!(s.u, vec![2.0, 0.0]);
        assert!(s.active.is_empty());
    }

    #[test]
    fn half_space_projection() {
        let p = qp(&[-1.0, 0.0], vec![row(&[1.0, 0.0], 0.0, 0)], 10.0);
        let s = solve_qp(&p).unwrap();
        assert!(s.u[0].abs() < 1e-12 && s.u[1].abs() < 1e-12);
        assert_eq!(s.active, vec![RowTag::User(0)]);
        assert!((s.multipliers[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn contradictory_rows_are_infeasible() {
        let p = qp(
            &[1.0, 1.0],
            vec![row(&[-1.0, 0.0], 0.0, 0), row(&[1.0, 0.0], 1.0, 1)],
            10.0,
        );
        assert_eq!(solve_qp(&p), Err(SolveError::Infeasible));
    }

    #[test]
    fn degenerate_rows() {
        let p = qp(&[1.0, 1.0], vec![row(&[0.0, 0.0], -1.0, 0)], 10.0);
        assert_eq!(solve_qp(&p).unwrap().u, vec![1.0, 1.0]);
        let p = qp(&[1.0, 1.0], vec![row(&[1e-13, 0.0], 0.5, 0)], 10.0);
        assert_eq!(solve_qp(&p), Err(SolveError::Infeasible));
        assert_eq!(
            solve_lp(&[1.0, 0.0], &[row(&[0.0, 0.0], 0.5, 0)], &[-1.0, -1.0], &[1.0, 1.0]),
            Err(SolveError::Infeasible)
        );
    }

    #[test]
    fn bad_inputs() {
        let p = QpProblem::new(vec![0.0, 0.0], vec![], vec![1.0, 0.0], vec![0.0, 1.0]);
        assert_eq!(solve_qp(&p), Err(SolveError::EmptyBox));
        let p = qp(&[0.0, 0.0], vec![row(&[1.0], 0.0, 0)], 1.0);
        assert!(matches!(solve_qp(&p), Err(SolveError::DimensionMismatch(_))));
    }

    #[test]
    fn box_corner_projection() {
        let p = qp(&[5.0, -7.0], vec![], 3.0);
        let s = solve_qp(&p).unwrap();
        assert_eq!(s.u, vec![3.0, -3.0]);
        assert_eq!(s.active.len(), 2);
    }

    #[test]
    fn two_active_rows() {
        // u1 + u2 >= 2 and u1 - u2 >= 0 from the origin: vertex (1, 1).
        let p = qp(&[0.0, 0.0], vec![row(&[1.0, 1.0], 2.0, 0), row(&[1.0, -1.0], 0.0, 1)], 10.0);
        let s = solve_qp(&p).unwrap();
        assert!((s.u[0] - 1.0).abs() < 1e-12 && (s.u[1] - 1.0).abs() < 1e-12);
        // Reference below the kink: only the first row binds.
        let p = qp(&[2.0, -1.0], vec![row(&[1.0, 1.0], 2.0, 0), row(&[1.0, -1.0], 0.0, 1)], 10.0);
        let s = solve_qp(&p).unwrap();
        assert!((s.u[0] - 2.5).abs() < 1e-12 && (s.u[1] + 0.5).abs() < 1e-12);
        assert_eq!(s.active, vec![RowTag::User(0)]);
    }

    #[test]
    fn lp_examples() {
        let s = solve_lp(&[1.0, 0.0], &[], &[-3.0, -3.0], &[3.0, 3.0]).unwrap();
        assert_eq!(s.value, 3.0);
        assert_eq!(s.u[0], 3.0);
        assert!(s.u[1] >= -3.0 && s.u[1] <= 3.0);

        let s = solve_lp(&[1.0, 1.0], &[row(&[1.0, 1.0], -10.0, 0)], &[-1.0, -1.0], &[1.0, 1.0]).unwrap();
        assert!((s.value - 2.0).abs() < 1e-12);
        assert_eq!(s.u, vec![1.0, 1.0]);

        let s = solve_lp(&[2.0, 1.0], &[row(&[-1.0, 0.0], -0.5, 0)], &[-3.0, -3.0], &[3.0, 3.0]).unwrap();
        assert!((s.value - 4.0).abs() < 1e-12);
        assert!((s.u[0] - 0.5).abs() < 1e-12 && (s.u[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn lp_infeasible() {
        let rows = vec![row(&[1.0, 0.0], 2.0, 0)];
        assert_eq!(solve_lp(&[1.0, 0.0], &rows, &[-1.0, -1.0], &[1.0, 1.0]), Err(SolveError::Infeasible));
    }

    #[test]
    fn lp_single_point_feasible_set() {
        // u1 >= 0, -u1 >= 0, u2 >= 0, -u2 >= 0
        let rows = vec![
            row(&[1.0, 0.0], 0.0, 0),
            row(&[-1.0, 0.0], 0.0, 1),
            row(&[0.0, 1.0], 0.0, 2),
            row(&[0.0, -1.0], 0.0, 3),
        ];
        let s = solve_lp(&[-4.0, 1.0], &rows, &[-3.0, -3.0], &[3.0, 3.0]).unwrap();
        assert!(s.value.abs() < 1e-12);
        let q = solve_qp(&qp(&[2.0, 2.0], rows, 3.0)).unwrap();
        assert!(q.u.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn three_dimensional_projection() {
        let p = qp(&[0.0, 0.0, 0.0], vec![row(&[1.0, 1.0, 1.0], 3.0, 0)], 5.0);
        let s = solve_qp(&p).unwrap();
        for v in &s.u {
            assert!((v - 1.0).abs() < 1e-12);
        }
        let o = qp_oracle(&p, 1e-4).unwrap();
        assert!((p.objective(&o) - p.objective(&s.u)).abs() < 1e-3);
    }

    #[test]
    fn oracle_examples() {
        let p = qp(&[-1.0, 0.0], vec![row(&[1.0, 0.0], 0.0, 0)], 10.0);
        let o = qp_oracle(&p, 1e-3).unwrap();
        assert!(o[0].abs() <= 1e-3 && o[1].abs() <= 1e-3);
        let p = qp(&[2.0, 0.3], vec![row(&[1.0, 0.0], 0.0, 0)], 10.0);
        let o = qp_oracle(&p, 1e-3).unwrap();
        assert!((o[0] - 2.0).abs() <= 1e-3 && (o[1] - 0.3).abs() <= 1e-3);
        let p = qp(&[1.0, 1.0], vec![row(&[-1.0, 0.0], 0.0, 0), row(&[1.0, 0.0], 1.0, 1)], 10.0);
        assert!(qp_oracle(&p, 1e-3).is_none());
    }

    #[test]
    fn kkt_residuals_are_small() {
        let rows = vec![
            row(&[1.0, 2.0], 1.0, 0),
            row(&[-0.5, 1.0], 0.2, 1),
            row(&[3.0, -1.0], -4.0, 2),
        ];
        let p = qp(&[-2.0, -2.0], rows, 3.0);
        let s = solve_qp(&p).unwrap();
        assert!(p.max_violation(&s.u) <= 1e-9);
        // stationarity: u - r = sum lambda_k a_k
        let mut res: Vec<f64> = s.u.iter().zip(&p.u_ref).map(|(u, r)| u - r).collect();
        for (tag, l) in s.active.iter().zip(&s.multipliers) {
            assert!(*l >= -1e-12);
            let a = match tag {
                RowTag::User(k) => p.rows[*k].a.clone(),
                RowTag::Bound { axis, upper } => {
                    let mut e = vec![0.0; 2];
                    e[*axis] = if *upper { -1.0 } else { 1.0 };
                    e
                }
                _ => unreachable!(),
            };
            for (ri, ai) in res.iter_mut().zip(&a) {
                *ri -= l * ai;
            }
        }
        assert!(norm(&res) <= 1e-8, "residual {res:?}");
    }
}
