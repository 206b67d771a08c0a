//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// `a . u >= b` in two dimensions.
#[derive(Debug, Clone, Copy)]
pub struct Row2 {
    pub a: [f64; 2],
    pub b: f64,
}

#[derive(Debug, Clone)]
pub struct Problem2 {
    pub u_ref: [f64; 2],
    pub rows: Vec<Row2>,
    pub lo: [f64; 2],
    pub hi: [f64; 2],
}

impl Problem2 {
    pub fn objective(&self, u: [f64; 2]) -> f64 {
        (u[0] - self.u_ref[0]).powi(2) + (u[1] - self.u_ref[1]).powi(2)
    }

    pub fn violation(&self, u: [f64; 2]) -> f64 {
        let mut v: f64 = 0.0;
        for r in &self.rows {
            v = v.max(r.b - (r.a[0] * u[0] + r.a[1] * u[1]));
        }
        for k in 0..2 {
            v = v.max(self.lo[k] - u[k]).max(u[k] - self.hi[k]);
        }
        v
    }

    /// Rows plus the four box faces, all as `a . u >= b`.
    fn all_rows(&self) -> Vec<Row2> {
        let mut all = self.rows.clone();
        all.push(Row2 { a: [1.0, 0.0], b: self.lo[0] });
        all.push(Row2 { a: [-1.0, 0.0], b: -self.hi[0] });
        all.push(Row2 { a: [0.0, 1.0], b: self.lo[1] });
        all.push(Row2 { a: [0.0, -1.0], b: -self.hi[1] });
        all
    }

    /// Intersections of every pair of boundary lines that lie in the feasible set.
    pub fn feasible_vertices(&self, tol: f64) -> Vec<[f64; 2]> {
        let all = self.all_rows();
        let mut out = Vec::new();
        for p in 0..all.len() {
            for q in p + 1..all.len() {
                let (r, s) = (all[p], all[q]);
                let det = r.a[0] * s.a[1] - r.a[1] * s.a[0];
                if det.abs() < 1e-12 {
                    continue;
                }
                let u = [(r.b * s.a[1] - r.a[1] * s.b) / det, (r.a[0] * s.b - r.b * s.a[0]) / det];
                if self.violation(u) <= tol {
                    out.push(u);
                }
            }
        }
        out
    }
}

/// Exact minimizer by enumerating KKT candidates: `u_ref`, its projection on
/// each boundary line, and every vertex. `None` when the set is empty.
pub fn enumerate_qp(p: &Problem2) -> Option<[f64; 2]> {
    let tol = 1e-9;
    let mut cands = vec![p.u_ref];
    for r in p.all_rows() {
        let n2 = r.a[0] * r.a[0] + r.a[1] * r.a[1];
        if n2 < 1e-24 {
            continue;
        }
        let s = (r.b - (r.a[0] * p.u_ref[0] + r.a[1] * p.u_ref[1])) / n2;
        cands.push([p.u_ref[0] + s * r.a[0], p.u_ref[1] + s * r.a[1]]);
    }
    cands.extend(p.feasible_vertices(tol));
    cands
        .into_iter()
        .filter(|u| p.violation(*u) <= tol)
        .min_by(|x, y| p.objective(*x).total_cmp(&p.objective(*y)))
}

/// Best feasible point of a uniform grid over the box, starting at spacing
/// `coarse` and halving it until some grid point is feasible (giving up below
/// `COARSE_FLOOR`, so slivers thinner than that report `None`), then refined
/// locally: a 41x41 grid around the incumbent is re-centred until the
/// incumbent stops moving, and its width shrunk until the spacing is `fine`.
pub const COARSE_FLOOR: f64 = 2e-3;

pub fn grid_qp(p: &Problem2, coarse: f64, fine: f64) -> Option<[f64; 2]> {
    let mut best: Option<[f64; 2]> = None;
    let consider = |u: [f64; 2], best: &mut Option<[f64; 2]>| {
        if p.violation(u) <= 0.0 && best.is_none_or(|b| p.objective(u) < p.objective(b)) {
            *best = Some(u);
        }
    };
    let mut spacing = coarse;
    while best.is_none() {
        if spacing < fine.max(COARSE_FLOOR) {
            return None;
        }
        let n = [
            ((p.hi[0] - p.lo[0]) / spacing).ceil() as usize,
            ((p.hi[1] - p.lo[1]) / spacing).ceil() as usize,
        ];
        for i in 0..=n[0] {
            let x = (p.lo[0] + i as f64 * spacing).min(p.hi[0]);
            for j in 0..=n[1] {
                consider([x, (p.lo[1] + j as f64 * spacing).min(p.hi[1])], &mut best);
            }
        }
        spacing /= 2.0;
    }
    let mut center = best?;
    let mut half = 40.0 * spacing;
    while half / 20.0 > fine {
        for _ in 0..500 {
            let step = half / 20.0;
            for i in -20..=20 {
                for j in -20..=20 {
                    let u = [
                        (center[0] + i as f64 * step).clamp(p.lo[0], p.hi[0]),
                        (center[1] + j as f64 * step).clamp(p.lo[1], p.hi[1]),
                    ];
                    consider(u, &mut best);
                }
            }
            let b = best.expect("incumbent");
            if b == center {
                break;
            }
            center = b;
        }
        half /= 5.0;
    }
    best
}

/// `max c . u` over the polygon by vertex enumeration.
pub fn enumerate_lp(c: [f64; 2], p: &Problem2) -> Option<(f64, [f64; 2])> {
    p.feasible_vertices(1e-9)
        .into_iter()
        .map(|u| (c[0] * u[0] + c[1] * u[1], u))
        .max_by(|x, y| x.0.total_cmp(&y.0))
}

/// Projection of `u_ref` onto the half-plane `a . u >= b`.
pub fn halfplane_projection(u_ref: [f64; 2], a: [f64; 2], b: f64) -> [f64; 2] {
    let s = ((b - (a[0] * u_ref[0] + a[1] * u_ref[1])) / (a[0] * a[0] + a[1] * a[1])).max(0.0);
    [u_ref[0] + s * a[0], u_ref[1] + s * a[1]]
}

/// Random problem with up to four rows.
pub fn random_problem(rng: &mut ChaCha8Rng) -> Problem2 {
    let lo = [rng.gen_range(-5.0..-0.5), rng.gen_range(-5.0..-0.5)];
    let hi = [rng.gen_range(0.5..5.0), rng.gen_range(0.5..5.0)];
    let n = rng.gen_range(0..=4);
    let rows = (0..n)
        .map(|_| Row2 {
            a: [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)],
            b: rng.gen_range(-3.0..1.5),
        })
        .collect();
    Problem2 {
        u_ref: [rng.gen_range(-7.0..7.0), rng.gen_range(-7.0..7.0)],
        rows,
        lo,
        hi,
    }
}

/// Central difference of `f` along each coordinate.
pub fn central_diff<const N: usize>(f: impl Fn([f64; N]) -> f64, x: [f64; N], step: f64) -> [f64; N] {
    let mut g = [0.0; N];
    for k in 0..N {
        let mut xp = x;
        let mut xm = x;
        xp[k] += step;
        xm[k] -= step;
        g[k] = (f(xp) - f(xm)) / (2.0 * step);
    }
    g
}
