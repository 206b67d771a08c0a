//! Command-line front end: argument parsing, scenario loading, and trace,
//! summary and plot emission.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::controller::Fallback;
use crate::sim::{metrics, run, Metrics, Scenario, ScenarioError, Trace};
use crate::solvers::{qp_oracle, solve_lp, solve_qp, ConstraintRow, QpProblem, RowTag};

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 2;
    pub const VALIDATION: i32 = 3;
    pub const IO: i32 = 4;
    pub const STRICT_INFEASIBLE: i32 = 5;
    pub const ORACLE_MISMATCH: i32 = 6;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Validation { path: String, source: ScenarioError },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0} safety QP infeasibility events (strict mode)")]
    StrictInfeasible(usize),
    #[error("{0} solver self-test mismatches")]
    OracleMismatch(usize),
    #[error("malformed CSV: {0}")]
    Csv(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => exit::USAGE,
            CliError::Validation { .. } => exit::VALIDATION,
            CliError::Io { .. } | CliError::Csv(_) => exit::IO,
            CliError::StrictInfeasible(_) => exit::STRICT_INFEASIBLE,
            CliError::OracleMismatch(_) => exit::ORACLE_MISMATCH,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Parser)]
#[command(name = "rtcbf", version, about = "Trust-adaptive CBF-QP multi-agent simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a scenario and write traces, summary and plots.
    Run(RunArgs),
    /// Check a scenario file without running it.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Compare the QP and LP solvers against brute-force oracles.
    Oracle {
        #[arg(long, default_value_t = 200)]
        cases: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long)]
    fixed_alpha: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    rho_bar_d: Option<f64>,
    #[arg(long)]
    no_svg: bool,
    /// Exit with status 5 if any safety QP was infeasible.
    #[arg(long)]
    strict: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scenario: PathBuf,
    pub out: PathBuf,
    pub dt: Option<f64>,
    pub duration: Option<f64>,
    pub fixed_alpha: bool,
    pub seed: Option<u64>,
    pub rho_bar_d: Option<f64>,
    pub emit_csv: bool,
    pub emit_json: bool,
    pub emit_svg: bool,
    pub strict: bool,
}

impl RunConfig {
    pub fn new(scenario: impl Into<PathBuf>, out: impl Into<PathBuf>) -> Self {
        RunConfig {
            scenario: scenario.into(),
            out: out.into(),
            dt: None,
            duration: None,
            fixed_alpha: false,
            seed: None,
            rho_bar_d: None,
            emit_csv: true,
            emit_json: true,
            emit_svg: true,
            strict: false,
        }
    }

    /// Applies command-line overrides to a loaded scenario.
    pub fn apply(&self, s: &mut Scenario) {
        if let Some(dt) = self.dt {
            s.dt = dt;
        }
        if let Some(d) = self.duration {
            s.duration = d;
        }
        if self.fixed_alpha {
            s.flags.fixed_alpha = true;
        }
        if let Some(seed) = self.seed {
            s.seed = seed;
        }
        if let Some(r) = self.rho_bar_d {
            s.trust.rho_bar_d = r;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Invocation {
    Run(RunConfig),
    Validate(PathBuf),
    Oracle { cases: usize, seed: u64 },
}

/// Parses `argv` (including the program name).
pub fn parse_args<I, T>(argv: I) -> Result<Invocation, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv)?;
    Ok(match cli.command {
        Command::Run(a) => Invocation::Run(RunConfig {
            scenario: a.scenario,
            out: a.out,
            dt: a.dt,
            duration: a.duration,
            fixed_alpha: a.fixed_alpha,
            seed: a.seed,
            rho_bar_d: a.rho_bar_d,
            emit_csv: true,
            emit_json: true,
            emit_svg: !a.no_svg,
            strict: a.strict,
        }),
        Command::Validate { scenario } => Invocation::Validate(scenario),
        Command::Oracle { cases, seed } => Invocation::Oracle { cases, seed },
    })
}

pub fn load_scenario(path: &Path) -> Result<Scenario, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Scenario::from_json(&text).map_err(|source| CliError::Validation {
        path: path.display().to_string(),
        source,
    })
}

/// Loads, overrides, runs and writes; returns the run metrics.
pub fn execute(cfg: &RunConfig) -> Result<Metrics, CliError> {
    let mut s = load_scenario(&cfg.scenario)?;
    cfg.apply(&mut s);
    let trace = run(&s).map_err(|source| CliError::Validation {
        path: cfg.scenario.display().to_string(),
        source,
    })?;
    let m = metrics(&trace, &s);
    write_outputs(&cfg.out, &s, &trace, &m, cfg)?;
    if cfg.strict && m.infeasible_events > 0 {
        return Err(CliError::StrictInfeasible(m.infeasible_events));
    }
    Ok(m)
}

/// Runs a command line and returns the process exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let inv = match parse_args(argv) {
        Ok(inv) => inv,
        Err(e) => {
            let code = if e.use_stderr() { exit::USAGE } else { exit::OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match inv {
        Invocation::Run(cfg) => execute(&cfg).map(|m| {
            println!(
                "min h = {:.6e}; infeasible events = {}; emergency stops = {}",
                m.min_h, m.infeasible_events, m.emergency_events
            );
            for a in &m.agents {
                println!(
                    "agent {}: goal distance {:.4} m, deviation {:.4} m, reach time {}",
                    a.id,
                    a.final_goal_distance,
                    a.nominal_deviation,
                    a.goal_reach_time.map_or("never".to_string(), |t| format!("{t:.2} s"))
                );
            }
        }),
        Invocation::Validate(path) => load_scenario(&path).map(|s| {
            println!("{}: ok ({} agents, {} steps)", path.display(), s.agents.len(), s.step_count());
        }),
        Invocation::Oracle { cases, seed } => {
            let r = solver_self_test(cases, seed);
            println!(
                "qp: {} cases, worst excess over grid {:.3e}; lp: {} cases, worst gap {:.3e}",
                r.cases, r.worst_qp_gap, r.cases, r.worst_lp_gap
            );
            if r.failures == 0 {
                Ok(())
            } else {
                Err(CliError::OracleMismatch(r.failures))
            }
        }
    };
    match result {
        Ok(()) => exit::OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Float format used in every CSV: 17 significant digits, exact round trip.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub const TRACE_HEADER: [&str; 10] = ["t", "agent_id", "px", "py", "psi", "u1_ref", "u2_ref", "u1", "u2", "fallback"];
pub const PAIRS_HEADER: [&str; 9] = ["t", "i", "j", "h", "alpha", "rho", "rho_d", "rho_theta", "margin"];

fn fallback_name(f: Fallback) -> &'static str {
    match f {
        Fallback::None => "none",
        Fallback::Emergency => "emergency",
    }
}

pub fn trace_csv(tr: &Trace) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(TRACE_HEADER).expect("in-memory write");
    for st in &tr.steps {
        for (id, a) in st.agents.iter().enumerate() {
            w.write_record([
                fmt_f64(st.t),
                id.to_string(),
                fmt_f64(a.pose.position.x),
                fmt_f64(a.pose.position.y),
                fmt_f64(a.pose.heading),
                fmt_f64(a.u_ref.x),
                fmt_f64(a.u_ref.y),
                fmt_f64(a.u_safe.x),
                fmt_f64(a.u_safe.y),
                fallback_name(a.fallback).to_string(),
            ])
            .expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("ascii")
}

pub fn pairs_csv(tr: &Trace) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(PAIRS_HEADER).expect("in-memory write");
    for st in &tr.steps {
        for p in &st.pairs {
            w.write_record([
                fmt_f64(st.t),
                p.i.to_string(),
                p.j.to_string(),
                fmt_f64(p.h),
                fmt_f64(p.alpha),
                fmt_f64(p.rho),
                fmt_f64(p.rho_d),
                fmt_f64(p.rho_theta),
                fmt_f64(p.margin),
            ])
            .expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("ascii")
}

/// One parsed row of `trace.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub agent_id: usize,
    pub px: f64,
    pub py: f64,
    pub psi: f64,
    pub u_ref: [f64; 2],
    pub u: [f64; 2],
    pub emergency: bool,
}

/// One parsed row of `pairs.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairRow {
    pub t: f64,
    pub i: usize,
    pub j: usize,
    pub h: f64,
    pub alpha: f64,
    pub rho: f64,
    pub rho_d: f64,
    pub rho_theta: f64,
    pub margin: f64,
}

fn read_records(text: &str, header: &[&str]) -> Result<Vec<csv::StringRecord>, CliError> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let h = r.headers().map_err(|e| CliError::Csv(e.to_string()))?;
    if h.iter().ne(header.iter().copied()) {
        return Err(CliError::Csv(format!("unexpected header {h:?}")));
    }
    r.records().map(|rec| rec.map_err(|e| CliError::Csv(e.to_string()))).collect()
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, k: usize) -> Result<T, CliError> {
    rec.get(k)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| CliError::Csv(format!("bad field {k} in {rec:?}")))
}

pub fn parse_trace_csv(text: &str) -> Result<Vec<TraceRow>, CliError> {
    read_records(text, &TRACE_HEADER)?
        .iter()
        .map(|r| {
            Ok(TraceRow {
                t: field(r, 0)?,
                agent_id: field(r, 1)?,
                px: field(r, 2)?,
                py: field(r, 3)?,
                psi: field(r, 4)?,
                u_ref: [field(r, 5)?, field(r, 6)?],
                u: [field(r, 7)?, field(r, 8)?],
                emergency: match r.get(9) {
                    Some("none") => false,
                    Some("emergency") => true,
                    other => return Err(CliError::Csv(format!("bad fallback {other:?}"))),
                },
            })
        })
        .collect()
}

pub fn parse_pairs_csv(text: &str) -> Result<Vec<PairRow>, CliError> {
    read_records(text, &PAIRS_HEADER)?
        .iter()
        .map(|r| {
            Ok(PairRow {
                t: field(r, 0)?,
                i: field(r, 1)?,
                j: field(r, 2)?,
                h: field(r, 3)?,
                alpha: field(r, 4)?,
                rho: field(r, 5)?,
                rho_d: field(r, 6)?,
                rho_theta: field(r, 7)?,
                margin: field(r, 8)?,
            })
        })
        .collect()
}

#[derive(Debug, Serialize)]
struct Summary<'a> {
    scenario: &'a Scenario,
    steps: usize,
    metrics: &'a Metrics,
    infeasible: Vec<InfeasibleJson>,
}

#[derive(Debug, Serialize)]
struct InfeasibleJson {
    t: f64,
    agent: usize,
    min_h: f64,
}

pub fn summary_json(s: &Scenario, tr: &Trace, m: &Metrics) -> String {
    let summary = Summary {
        scenario: s,
        steps: tr.len(),
        metrics: m,
        infeasible: tr
            .infeasible
            .iter()
            .map(|e| InfeasibleJson {
                t: tr.steps[e.step].t,
                agent: e.agent,
                min_h: e.min_h,
            })
            .collect(),
    };
    serde_json::to_string_pretty(&summary).expect("summary serializes")
}

pub fn write_outputs(dir: &Path, s: &Scenario, tr: &Trace, m: &Metrics, cfg: &RunConfig) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut files: Vec<(&str, String)> = Vec::new();
    if cfg.emit_csv {
        files.push(("trace.csv", trace_csv(tr)));
        files.push(("pairs.csv", pairs_csv(tr)));
    }
    if cfg.emit_json {
        files.push(("summary.json", summary_json(s, tr, m)));
    }
    if cfg.emit_svg {
        files.extend(plots(tr));
    }
    for (name, body) in files {
        let path = dir.join(name);
        fs::write(&path, body).map_err(io_err(&path))?;
    }
    Ok(())
}

type Series = (String, Vec<(f64, f64)>);

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

/// Line plot on an 800x600 canvas; the data bounds are stored as attributes.
pub fn svg_plot(title: &str, series: &[Series]) -> String {
    let pts = series.iter().flat_map(|(_, p)| p.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let (sx0, sx1) = if x1 > x0 { (x0, x1) } else { (x0 - 1.0, x0 + 1.0) };
    let (sy0, sy1) = if y1 > y0 { (y0, y1) } else { (y0 - 1.0, y0 + 1.0) };
    let (left, right, top, bottom) = (60.0, 780.0, 40.0, 560.0);
    let px = |x: f64| left + (x - sx0) / (sx1 - sx0) * (right - left);
    let py = |y: f64| bottom - (y - sy0) / (sy1 - sy0) * (bottom - top);

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="800" height="600" viewBox="0 0 800 600" data-xmin="{}" data-xmax="{}" data-ymin="{}" data-ymax="{}">"#,
        fmt_f64(x0),
        fmt_f64(x1),
        fmt_f64(y0),
        fmt_f64(y1)
    );
    let _ = writeln!(out, r#"<rect width="800" height="600" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="400" y="24" text-anchor="middle" font-family="sans-serif" font-size="16">{title}</text>"#);
    let _ = writeln!(
        out,
        r#"<rect x="{left}" y="{top}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        right - left,
        bottom - top
    );
    let _ = writeln!(
        out,
        r#"<text x="{left}" y="580" font-family="sans-serif" font-size="11">{sx0:.3}</text><text x="{right}" y="580" text-anchor="end" font-family="sans-serif" font-size="11">{sx1:.3}</text>"#
    );
    let _ = writeln!(
        out,
        r#"<text x="55" y="{bottom}" text-anchor="end" font-family="sans-serif" font-size="11">{sy0:.3}</text><text x="55" y="{}" text-anchor="end" font-family="sans-serif" font-size="11">{sy1:.3}</text>"#,
        top + 10.0
    );
    for (k, (label, p)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let mut points = String::new();
        for &(x, y) in p {
            let _ = write!(points, "{:.2},{:.2} ", px(x), py(y));
        }
        let _ = writeln!(
            out,
            r#"<polyline data-label="{label}" fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            points.trim_end()
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" fill="{color}">{label}</text>"#,
            right - 90.0,
            top + 14.0 + 14.0 * k as f64
        );
    }
    out.push_str("</svg>\n");
    out
}

fn pair_series(tr: &Trace, value: impl Fn(&crate::sim::PairRecord) -> f64) -> Vec<Series> {
    let mut keys: Vec<(usize, usize)> = Vec::new();
    for st in &tr.steps {
        for p in &st.pairs {
            if !keys.contains(&(p.i, p.j)) {
                keys.push((p.i, p.j));
            }
        }
    }
    keys.iter()
        .map(|&(i, j)| {
            let pts = tr
                .steps
                .iter()
                .filter_map(|st| st.pairs.iter().find(|p| p.i == i && p.j == j).map(|p| (st.t, value(p))))
                .collect();
            (format!("{i}-{j}"), pts)
        })
        .collect()
}

/// `trajectories.svg`, `alphas.svg`, `trust.svg` and `barriers.svg`.
pub fn plots(tr: &Trace) -> Vec<(&'static str, String)> {
    let n = tr.steps.first().map_or(0, |s| s.agents.len());
    let traj: Vec<Series> = (0..n)
        .map(|id| {
            (
                format!("agent {id}"),
                tr.steps
                    .iter()
                    .map(|st| (st.agents[id].pose.position.x, st.agents[id].pose.position.y))
                    .collect(),
            )
        })
        .collect();
    vec![
        ("trajectories.svg", svg_plot("Trajectories (x, y)", &traj)),
        ("alphas.svg", svg_plot("alpha_ij over time", &pair_series(tr, |p| p.alpha))),
        ("trust.svg", svg_plot("rho_ij over time", &pair_series(tr, |p| p.rho))),
        ("barriers.svg", svg_plot("h_ij over time", &pair_series(tr, |p| p.h))),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelfTestReport {
    pub cases: usize,
    pub failures: usize,
    /// Largest amount by which a solver objective exceeds the grid oracle's.
    pub worst_qp_gap: f64,
    /// Largest amount by which a grid point beats the LP optimum.
    pub worst_lp_gap: f64,
}

/// Random 2-D problems: QP against the grid oracle, LP against a grid scan.
pub fn solver_self_test(cases: usize, seed: u64) -> SelfTestReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = SelfTestReport {
        cases,
        failures: 0,
        worst_qp_gap: 0.0,
        worst_lp_gap: 0.0,
    };
    for _ in 0..cases {
        let rows: Vec<ConstraintRow> = (0..rng.gen_range(0..=4))
            .map(|k| {
                ConstraintRow::new(
                    vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)],
                    rng.gen_range(-2.0..0.5),
                    RowTag::User(k),
                )
            })
            .collect();
        let p = QpProblem::new(
            vec![rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0)],
            rows,
            vec![-3.0, -3.0],
            vec![3.0, 3.0],
        );
        // A grid can trail the true optimum in thin wedges, so only a solver
        // that is worse than some feasible grid point counts as a mismatch.
        match (solve_qp(&p), qp_oracle(&p, 1e-5)) {
            (Ok(sol), best) => {
                let gap = best.map_or(0.0, |b| p.objective(&sol.u) - p.objective(&b));
                report.worst_qp_gap = report.worst_qp_gap.max(gap);
                if gap > 1e-6 || p.max_violation(&sol.u) > 1e-6 {
                    report.failures += 1;
                }
            }
            (Err(_), None) => {}
            (Err(_), Some(_)) => report.failures += 1,
        }
        let c = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        if let Ok(lp) = solve_lp(&c, &p.rows, &p.lo, &p.hi) {
            // the LP optimum is a vertex, so no grid point may beat it
            let best = grid_lp_bound(&c, &p);
            let gap = best - lp.value;
            report.worst_lp_gap = report.worst_lp_gap.max(gap.max(0.0));
            if gap > 1e-9 || p.max_violation(&lp.u) > 1e-9 {
                report.failures += 1;
            }
        }
    }
    report
}

fn grid_lp_bound(c: &[f64; 2], p: &QpProblem) -> f64 {
    let n = 200;
    let mut best = f64::NEG_INFINITY;
    for a in 0..=n {
        for b in 0..=n {
            let u = [
                p.lo[0] + (p.hi[0] - p.lo[0]) * a as f64 / n as f64,
                p.lo[1] + (p.hi[1] - p.lo[1]) * b as f64 / n as f64,
            ];
            if p.max_violation(&u) <= 0.0 {
                best = best.max(c[0] * u[0] + c[1] * u[1]);
            }
        }
    }
    best
}
