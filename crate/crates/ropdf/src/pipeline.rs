//! End-to-end experiment runners: marginal and joint failure-probability
//! studies, sample-complexity sweeps, and artifact emission.
//!
//! A marginal run simulates two ensembles (a working ensemble of `m_r`
//! samples that feeds the closure regressions and initial condition, and a
//! larger benchmark ensemble of `m_kde` samples at `seed + 1`), solves the
//! 1D reduced-order PDF equation per recorded line, and compares the
//! predicted density and exceedance probability against the kernel density
//! benchmark and the empirical counts. A joint run does the same for a pair
//! of lines in 2D. Artifacts are written under the configured output
//! directory with deterministic names derived from the case bundle.

use crate::case::{parse_case_bundle, CaseError, LineId};
use crate::closure::{
    coefficient_field, fit_global_linear, fit_local_linear, fit_lowess_2d, ClosureError,
    ClosureKnot, ClosureSet,
};
use crate::config::{ClosureMethod, ExperimentConfig};
use crate::grid::{Grid1D, Grid2D, GridError};
use crate::metrics::{
    ecdf_exceedance, independence_joint, joint_exceedance, kde_1d, kde_2d, l1_error, marginals,
    mutual_information, tail_probability, ComplexityCurve, MetricsError,
};
use crate::record::{
    export_density_1d_csv, export_density_2d_csv, write_density_1d, write_density_2d, RecordError,
};
use crate::sim::{
    build_noise, run_scenario, NoiseModel, ScenarioConfig, SimError, TrajectoryRecord,
};
use crate::solver::{
    solve_ropdf_1d, solve_ropdf_2d, DensityField1, DensityField2, SolverError,
};
use ndarray::Array2;
use serde::Serialize;
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("case stage: {0}")]
    Case(#[from] CaseError),
    #[error("simulation stage: {0}")]
    Sim(#[from] SimError),
    #[error("closure stage: {0}")]
    Closure(#[from] ClosureError),
    #[error("closure stage, line {line} at t = {t}: {source}")]
    ClosureKnotStage {
        line: String,
        t: f64,
        source: ClosureError,
    },
    #[error("grid stage: {0}")]
    Grid(#[from] GridError),
    #[error("solver stage: {0}")]
    Solver(#[from] SolverError),
    #[error("metrics stage: {0}")]
    Metrics(#[from] MetricsError),
    #[error("output stage: {0}")]
    Record(#[from] RecordError),
    #[error("output stage: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    BadRequest(String),
}

/// Everything reported about one line in a marginal study.
#[derive(Debug, Clone, Serialize)]
pub struct MarginalLineSummary {
    pub line: String,
    pub rating: f64,
    pub peak_time: f64,
    /// Exceedance probability from the solved RO-PDF density at the peak.
    pub p_ropdf: f64,
    /// Exceedance probability from the benchmark kernel density.
    pub p_kde: f64,
    /// Empirical exceedance fraction in the benchmark ensemble.
    pub p_empirical: f64,
    /// Space-time L1 distance between the solved and benchmark densities.
    pub l1_vs_kde: f64,
    /// Probability mass lost through the solver's domain boundary.
    pub mass_lost: f64,
    /// Cross-validated bandwidth, when the local closure was used.
    pub bandwidth: Option<f64>,
}

#[derive(Debug)]
pub struct MarginalRun {
    pub summaries: Vec<MarginalLineSummary>,
    pub fields: Vec<DensityField1>,
    pub kde_fields: Vec<DensityField1>,
    pub benchmark: TrajectoryRecord,
}

#[derive(Debug, Clone, Serialize)]
pub struct JointSummary {
    pub lines: [String; 2],
    pub ratings: [f64; 2],
    pub peak_time: f64,
    /// P(either line exceeds its rating) from the solved 2D density.
    pub p_joint_ropdf: f64,
    pub p_joint_kde: f64,
    pub p_joint_empirical: f64,
    /// Joint exceedance a practitioner would quote from two separate
    /// marginal studies under an independence assumption: each line's 1D
    /// equation is solved on its own and its exceedance taken at that
    /// line's own peak time.
    pub p_independent: f64,
    /// Per-line exceedance from the 1D marginal solves, at each line's own
    /// peak time.
    pub p_marginal: [f64; 2],
    pub mutual_information: f64,
    pub mutual_information_kde: f64,
    pub mass_lost: f64,
}

#[derive(Debug)]
pub struct JointRun {
    pub summary: JointSummary,
    pub field: DensityField2,
    pub kde_field: DensityField2,
    /// Mutual information of the solved joint density at every stored time.
    pub mi_curve: Vec<(f64, f64)>,
}

/// Error-versus-ensemble-size curves for one line.
#[derive(Debug, Clone, Serialize)]
pub struct LineComplexity {
    pub line: String,
    pub ropdf_errors: Vec<f64>,
    pub kde_errors: Vec<f64>,
    /// Smallest tested ensemble size whose error falls below gamma.
    pub ropdf_required: Option<usize>,
    pub kde_required: Option<usize>,
    pub ropdf_slope: Option<f64>,
    pub kde_slope: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComplexityReport {
    pub gamma: f64,
    pub sizes: Vec<usize>,
    /// Number of edges in the case network, for cross-case scaling plots.
    pub edges: usize,
    pub lines: Vec<LineComplexity>,
    /// Errors averaged over the studied lines, per ensemble size.
    pub ropdf_errors: Vec<f64>,
    pub kde_errors: Vec<f64>,
    /// Sum of per-line required sizes over the lines that reached gamma;
    /// absent when no line did.
    pub ropdf_aggregate: Option<usize>,
    pub kde_aggregate: Option<usize>,
    /// Lines whose error never fell below gamma at the tested sizes.
    pub ropdf_unresolved: Vec<String>,
    pub kde_unresolved: Vec<String>,
    pub ropdf_slope: Option<f64>,
    pub kde_slope: Option<f64>,
}

/// Log-log slope of aggregate required samples against the edge count,
/// across cases. Needs at least two cases.
pub fn cross_case_slope(points: &[(usize, usize)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let logs: Vec<(f64, f64)> = points
        .iter()
        .map(|&(e, m)| ((e as f64).ln(), (m as f64).ln()))
        .collect();
    let n = logs.len() as f64;
    let (sx, sy): (f64, f64) = logs.iter().fold((0.0, 0.0), |(a, b), &(x, y)| (a + x, b + y));
    let (mx, my) = (sx / n, sy / n);
    let sxx: f64 = logs.iter().map(|&(x, _)| (x - mx).powi(2)).sum();
    let sxy: f64 = logs.iter().map(|&(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        None
    } else {
        Some(sxy / sxx)
    }
}

fn scenario(cfg: &ExperimentConfig, m: usize, seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        dt: cfg.dt,
        burn_in_t: cfg.burn_in_t,
        post_t: cfg.post_t,
        tripped_line: cfg.tripped_line,
        m,
        seed,
        record_lines: cfg.record_lines.clone(),
        record_stride: cfg.record_stride,
    }
}

fn column(a: &Array2<f64>, k: usize) -> Vec<f64> {
    a.column(k).iter().copied().collect()
}

fn knot_stage(line: LineId, t: f64) -> impl Fn(ClosureError) -> PipelineError {
    move |source| PipelineError::ClosureKnotStage {
        line: line.to_string(),
        t,
        source,
    }
}

/// Fits one closure knot per recorded time for a 1D study. The local method
/// cross-validates its bandwidth once, at the middle knot, and reuses it.
fn fit_knots_1d(
    line: LineId,
    times: &[f64],
    u: &Array2<f64>,
    mu: &Array2<f64>,
    method: ClosureMethod,
    fold_seed: u64,
) -> Result<(ClosureSet, Option<f64>), PipelineError> {
    let mut bandwidth = None;
    if method == ClosureMethod::LocalLinear {
        let mid = times.len() / 2;
        match fit_local_linear(&column(u, mid), &column(mu, mid), None, fold_seed)
            .map_err(knot_stage(line, times[mid]))?
        {
            ClosureKnot::LocalLinear { bandwidth: h, .. } => bandwidth = Some(h),
            _ => unreachable!(),
        }
    }
    let mut knots = Vec::with_capacity(times.len());
    for (k, &t) in times.iter().enumerate() {
        let (x, y) = (column(u, k), column(mu, k));
        let knot = match method {
            ClosureMethod::GlobalLinear => {
                fit_global_linear(&[x], &y).map_err(knot_stage(line, t))?
            }
            ClosureMethod::LocalLinear => {
                fit_local_linear(&x, &y, bandwidth, fold_seed).map_err(knot_stage(line, t))?
            }
            ClosureMethod::Lowess => {
                return Err(PipelineError::BadRequest(
                    "the lowess closure is for joint (2D) studies; use global or local".into(),
                ))
            }
        };
        knots.push((t, knot));
    }
    Ok((ClosureSet::new(knots)?, bandwidth))
}

fn fit_knots_2d(
    line: LineId,
    times: &[f64],
    u1: &Array2<f64>,
    u2: &Array2<f64>,
    mu: &Array2<f64>,
    method: ClosureMethod,
    span: f64,
) -> Result<ClosureSet, PipelineError> {
    let mut knots = Vec::with_capacity(times.len());
    for (k, &t) in times.iter().enumerate() {
        let (x1, x2, y) = (column(u1, k), column(u2, k), column(mu, k));
        let knot = match method {
            ClosureMethod::GlobalLinear => {
                fit_global_linear(&[x1, x2], &y).map_err(knot_stage(line, t))?
            }
            ClosureMethod::Lowess => {
                let pts: Vec<[f64; 2]> = x1.iter().zip(&x2).map(|(&a, &b)| [a, b]).collect();
                fit_lowess_2d(&pts, &y, span).map_err(knot_stage(line, t))?
            }
            ClosureMethod::LocalLinear => {
                return Err(PipelineError::BadRequest(
                    "the local closure is for marginal (1D) studies; use global or lowess".into(),
                ))
            }
        };
        knots.push((t, knot));
    }
    Ok(ClosureSet::new(knots)?)
}

/// Clamps a rating onto the grid before a tail integral: a threshold above
/// the upper edge has no grid mass beyond it, and one below the lower edge
/// captures everything, so clamping preserves the exceedance value.
fn clamp_to(grid: &Grid1D, threshold: f64) -> f64 {
    threshold.clamp(grid.lo(), grid.hi())
}

/// Knot index with the largest benchmark-ensemble mean energy.
fn peak_knot(u: &Array2<f64>) -> usize {
    (0..u.ncols())
        .max_by(|&a, &b| {
            let ma = u.column(a).sum();
            let mb = u.column(b).sum();
            ma.total_cmp(&mb)
        })
        .unwrap_or(0)
}

fn kde_field_1d(
    u: &Array2<f64>,
    times: &[f64],
    grid: &Grid1D,
) -> Result<DensityField1, MetricsError> {
    let frames = (0..times.len())
        .map(|k| kde_1d(&column(u, k), grid))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(DensityField1 {
        grid: grid.clone(),
        times: times.to_vec(),
        frames,
        mass_lost: 0.0,
    })
}

struct Prepared {
    case: crate::case::PowerCase,
    noise: NoiseModel,
    benchmark: TrajectoryRecord,
}

fn prepare(cfg: &ExperimentConfig) -> Result<Prepared, PipelineError> {
    let (case, eq) = parse_case_bundle(&cfg.bundle)?;
    let noise = build_noise(case.n(), cfg.r, cfg.theta, cfg.alpha)?;
    let benchmark = run_scenario(&case, &eq, &noise, &scenario(cfg, cfg.m_kde, cfg.seed + 1))?;
    Ok(Prepared {
        case,
        noise,
        benchmark,
    })
}

fn marginal_for_line(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    work: &TrajectoryRecord,
    li: usize,
) -> Result<(MarginalLineSummary, DensityField1, DensityField1), PipelineError> {
    let line = work.lines[li];
    let rating = prep.case.line_rating(line)?;
    let bi = prep
        .benchmark
        .line_index(line)
        .expect("benchmark records the same lines");
    let u = &work.u[li];
    let mu = &work.mu[li];
    let ub = &prep.benchmark.u[bi];

    // Size the grid from both ensembles so the benchmark mass stays on it.
    let mut pooled: Vec<f64> = u.iter().copied().collect();
    pooled.extend(ub.iter().copied());
    let grid = Grid1D::from_samples(&pooled, cfg.n_cells, cfg.padding_stds, true)?;

    let f0 = kde_1d(&column(u, 0), &grid)?;
    let (models, bandwidth) =
        fit_knots_1d(line, &work.times, u, mu, cfg.closure_method, cfg.seed)?;
    // The line-energy diffusion coefficient vanishes identically.
    let diffusion = vec![0.0; grid.n() + 1];
    let field = solve_ropdf_1d(&grid, f0, &models, 1.0, &diffusion, 0.9)?;

    let kde_field = kde_field_1d(ub, &work.times, &grid)?;
    let l1 = l1_error(&field, &kde_field)?;

    let peak = peak_knot(ub);
    let thr = clamp_to(&grid, rating);
    let summary = MarginalLineSummary {
        line: line.to_string(),
        rating,
        peak_time: work.times[peak],
        p_ropdf: tail_probability(&field.frames[peak], &grid, thr)?,
        p_kde: tail_probability(&kde_field.frames[peak], &grid, thr)?,
        p_empirical: ecdf_exceedance(&column(ub, peak), rating),
        l1_vs_kde: l1,
        mass_lost: field.mass_lost,
        bandwidth,
    };
    Ok((summary, field, kde_field))
}

/// Runs the full marginal study for every recorded line.
pub fn run_marginal(cfg: &ExperimentConfig) -> Result<MarginalRun, PipelineError> {
    cfg.validate()
        .map_err(|e| PipelineError::BadRequest(e.to_string()))?;
    let prep = prepare(cfg)?;
    let (case, eq) = parse_case_bundle(&cfg.bundle)?;
    let work = run_scenario(&case, &eq, &prep.noise, &scenario(cfg, cfg.m_r, cfg.seed))?;
    let mut summaries = Vec::new();
    let mut fields = Vec::new();
    let mut kde_fields = Vec::new();
    for li in 0..work.lines.len() {
        let (summary, field, kde_field) = marginal_for_line(cfg, &prep, &work, li)?;
        log::info!(
            "line {}: p_ropdf = {:.4e}, p_kde = {:.4e}, L1 = {:.4e}",
            summary.line,
            summary.p_ropdf,
            summary.p_kde,
            summary.l1_vs_kde
        );
        summaries.push(summary);
        fields.push(field);
        kde_fields.push(kde_field);
    }
    Ok(MarginalRun {
        summaries,
        fields,
        kde_fields,
        benchmark: prep.benchmark,
    })
}

/// Upper bound on cells per axis for 2D solves; a full-resolution tensor
/// grid would dominate the runtime without improving the estimates.
const MAX_CELLS_2D: usize = 200;

/// Runs the joint (2D) study for exactly two recorded lines.
pub fn run_joint(cfg: &ExperimentConfig) -> Result<JointRun, PipelineError> {
    cfg.validate()
        .map_err(|e| PipelineError::BadRequest(e.to_string()))?;
    if cfg.record_lines.len() != 2 {
        return Err(PipelineError::BadRequest(format!(
            "a joint study needs exactly 2 recorded lines, got {}",
            cfg.record_lines.len()
        )));
    }
    let (la, lb) = (cfg.record_lines[0], cfg.record_lines[1]);
    let shares_bus = la.i() == lb.i() || la.i() == lb.j() || la.j() == lb.i() || la.j() == lb.j();
    if !shares_bus {
        log::warn!(
            "lines {la} and {lb} do not share a bus; their energies are \
             usually close to independent and the 2D study adds little"
        );
    }

    let prep = prepare(cfg)?;
    let (case, eq) = parse_case_bundle(&cfg.bundle)?;
    let work = run_scenario(&case, &eq, &prep.noise, &scenario(cfg, cfg.m_r, cfg.seed))?;
    let ratings = [prep.case.line_rating(la)?, prep.case.line_rating(lb)?];

    let n2 = cfg.n_cells.min(MAX_CELLS_2D);
    let (u1, u2) = (&work.u[0], &work.u[1]);
    let (mu1, mu2) = (&work.mu[0], &work.mu[1]);
    let (ub1, ub2) = (&prep.benchmark.u[0], &prep.benchmark.u[1]);
    let mut px: Vec<f64> = u1.iter().copied().collect();
    px.extend(ub1.iter().copied());
    let mut py: Vec<f64> = u2.iter().copied().collect();
    py.extend(ub2.iter().copied());
    let grid = Grid2D::from_samples(&px, &py, n2, n2, cfg.padding_stds, true)?;

    let f0 = kde_2d(&column(u1, 0), &column(u2, 0), &grid)?;
    let mx = fit_knots_2d(la, &work.times, u1, u2, mu1, cfg.closure_method, cfg.span)?;
    let my = fit_knots_2d(lb, &work.times, u1, u2, mu2, cfg.closure_method, cfg.span)?;
    let field = solve_ropdf_2d(&grid, f0, [&mx, &my], [1.0, 1.0], 0.9)?;

    // Peak time of the line with the larger benchmark peak energy.
    let (pa, pb) = (peak_knot(ub1), peak_knot(ub2));
    let peak = if ub1.column(pa).sum() >= ub2.column(pb).sum() {
        pa
    } else {
        pb
    };
    let kde_frame = kde_2d(&column(ub1, peak), &column(ub2, peak), &grid)?;

    let thr = [clamp_to(&grid.x, ratings[0]), clamp_to(&grid.y, ratings[1])];
    let p_joint = joint_exceedance(&field.frames[peak], &grid, thr)?;
    let p_joint_kde = joint_exceedance(&kde_frame, &grid, thr)?;
    let s1 = column(ub1, peak);
    let s2 = column(ub2, peak);
    let p_joint_emp = s1
        .iter()
        .zip(&s2)
        .filter(|(&a, &b)| a > ratings[0] || b > ratings[1])
        .count() as f64
        / s1.len() as f64;

    // The independence comparison runs each line's 1D marginal study on its
    // own and combines the two exceedances, each taken at that line's own
    // peak time — exactly what stitching two separate per-line analyses
    // together would produce.
    let closure_1d = match cfg.closure_method {
        ClosureMethod::Lowess => ClosureMethod::LocalLinear,
        other => other,
    };
    let cfg_1d = ExperimentConfig {
        closure_method: closure_1d,
        n_cells: cfg.n_cells.max(400),
        ..cfg.clone()
    };
    let (sa, _, _) = marginal_for_line(&cfg_1d, &prep, &work, 0)?;
    let (sb, _, _) = marginal_for_line(&cfg_1d, &prep, &work, 1)?;
    let (q1, q2) = (sa.p_ropdf, sb.p_ropdf);

    // Mutual information of the solved density at every stored frame.
    let mut mi_curve = Vec::with_capacity(field.frames.len());
    for (k, fr) in field.frames.iter().enumerate() {
        let (m1, m2) = marginals(fr, &grid);
        mi_curve.push((field.times[k], mutual_information(fr, &m1, &m2, &grid)?));
    }

    let frame = &field.frames[peak];
    let (m1, m2) = marginals(frame, &grid);
    let (k1, k2) = marginals(&kde_frame, &grid);
    let summary = JointSummary {
        lines: [la.to_string(), lb.to_string()],
        ratings,
        peak_time: work.times[peak],
        p_joint_ropdf: p_joint,
        p_joint_kde,
        p_joint_empirical: p_joint_emp,
        p_independent: independence_joint(1.0 - q1, 1.0 - q2),
        p_marginal: [q1, q2],
        mutual_information: mutual_information(frame, &m1, &m2, &grid)?,
        mutual_information_kde: mutual_information(&kde_frame, &k1, &k2, &grid)?,
        mass_lost: field.mass_lost,
    };
    log::info!(
        "joint {}-{}: p = {:.4e} (independent {:.4e}, kde {:.4e}), MI = {:.4e}",
        la,
        lb,
        summary.p_joint_ropdf,
        summary.p_independent,
        summary.p_joint_kde,
        summary.mutual_information
    );

    let kde_field = DensityField2 {
        grid: grid.clone(),
        times: vec![work.times[peak]],
        frames: vec![kde_frame],
        mass_lost: 0.0,
    };
    Ok(JointRun {
        summary,
        field,
        kde_field,
        mi_curve,
    })
}

/// Space-time L1 error of both estimators against the benchmark kernel
/// density, for a ladder of working-ensemble sizes, over every recorded
/// line. The sweep characterizes the intact network, so a tripped line is
/// rejected.
pub fn run_complexity(
    cfg: &ExperimentConfig,
    sizes: &[usize],
    gamma: f64,
) -> Result<ComplexityReport, PipelineError> {
    cfg.validate()
        .map_err(|e| PipelineError::BadRequest(e.to_string()))?;
    if sizes.is_empty() {
        return Err(PipelineError::BadRequest(
            "complexity sweep needs at least one ensemble size".into(),
        ));
    }
    if let Some(l) = cfg.tripped_line {
        return Err(PipelineError::BadRequest(format!(
            "complexity sweeps study the intact network; remove tripped line {l}"
        )));
    }
    let prep = prepare(cfg)?;
    let (case, eq) = parse_case_bundle(&cfg.bundle)?;
    let n_lines = cfg.record_lines.len();

    // errors[line][size]
    let mut ropdf_by_line = vec![Vec::with_capacity(sizes.len()); n_lines];
    let mut kde_by_line = vec![Vec::with_capacity(sizes.len()); n_lines];
    for &m in sizes {
        let work = run_scenario(&case, &eq, &prep.noise, &scenario(cfg, m, cfg.seed))?;
        for (li, &line) in cfg.record_lines.iter().enumerate() {
            let wi = work.line_index(line).unwrap();
            let bi = prep.benchmark.line_index(line).unwrap();
            let u = &work.u[wi];
            let mu = &work.mu[wi];
            let ub = &prep.benchmark.u[bi];

            let mut pooled: Vec<f64> = u.iter().copied().collect();
            pooled.extend(ub.iter().copied());
            let grid = Grid1D::from_samples(&pooled, cfg.n_cells, cfg.padding_stds, true)?;
            let reference = kde_field_1d(ub, &work.times, &grid)?;

            let f0 = kde_1d(&column(u, 0), &grid)?;
            let (models, _) = fit_knots_1d(line, &work.times, u, mu, cfg.closure_method, cfg.seed)?;
            let diffusion = vec![0.0; grid.n() + 1];
            let field = solve_ropdf_1d(&grid, f0, &models, 1.0, &diffusion, 0.9)?;
            ropdf_by_line[li].push(l1_error(&field, &reference)?);

            let small_kde = kde_field_1d(u, &work.times, &grid)?;
            kde_by_line[li].push(l1_error(&small_kde, &reference)?);
            log::info!(
                "line {line}, m = {m}: L1(ropdf) = {:.4e}, L1(kde) = {:.4e}",
                ropdf_by_line[li].last().unwrap(),
                kde_by_line[li].last().unwrap()
            );
        }
    }

    let slope_of = |c: &ComplexityCurve| c.loglog_slope().ok();
    let mut lines = Vec::with_capacity(n_lines);
    let mut ropdf_aggregate = None;
    let mut kde_aggregate = None;
    let mut ropdf_unresolved = Vec::new();
    let mut kde_unresolved = Vec::new();
    for (li, &line) in cfg.record_lines.iter().enumerate() {
        let ropdf = ComplexityCurve::new(sizes.to_vec(), ropdf_by_line[li].clone())?;
        let kde = ComplexityCurve::new(sizes.to_vec(), kde_by_line[li].clone())?;
        let (rr, kr) = (ropdf.required_samples(gamma), kde.required_samples(gamma));
        match rr {
            Some(m) => *ropdf_aggregate.get_or_insert(0) += m,
            None => ropdf_unresolved.push(line.to_string()),
        }
        match kr {
            Some(m) => *kde_aggregate.get_or_insert(0) += m,
            None => kde_unresolved.push(line.to_string()),
        }
        lines.push(LineComplexity {
            line: line.to_string(),
            ropdf_errors: ropdf_by_line[li].clone(),
            kde_errors: kde_by_line[li].clone(),
            ropdf_required: rr,
            kde_required: kr,
            ropdf_slope: slope_of(&ropdf),
            kde_slope: slope_of(&kde),
        });
    }
    if !ropdf_unresolved.is_empty() {
        log::warn!(
            "lines not reaching gamma = {gamma} with the tested sizes: {}",
            ropdf_unresolved.join(", ")
        );
    }

    let mean_over_lines = |per_line: &[Vec<f64>]| -> Vec<f64> {
        (0..sizes.len())
            .map(|k| per_line.iter().map(|c| c[k]).sum::<f64>() / n_lines as f64)
            .collect()
    };
    let ropdf_errors = mean_over_lines(&ropdf_by_line);
    let kde_errors = mean_over_lines(&kde_by_line);
    let ropdf_mean = ComplexityCurve::new(sizes.to_vec(), ropdf_errors.clone())?;
    let kde_mean = ComplexityCurve::new(sizes.to_vec(), kde_errors.clone())?;
    Ok(ComplexityReport {
        gamma,
        sizes: sizes.to_vec(),
        edges: case.edges().len(),
        lines,
        ropdf_errors,
        kde_errors,
        ropdf_aggregate,
        kde_aggregate,
        ropdf_unresolved,
        kde_unresolved,
        ropdf_slope: slope_of(&ropdf_mean),
        kde_slope: slope_of(&kde_mean),
    })
}

fn case_name(cfg: &ExperimentConfig) -> String {
    cfg.bundle
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "case".to_string())
}

fn write_json<T: Serialize>(path: &PathBuf, value: &T) -> Result<(), PipelineError> {
    let text = serde_json::to_string_pretty(value).expect("serializable summary");
    std::fs::write(path, text)?;
    Ok(())
}

/// Writes the marginal-study artifacts and returns the paths created.
pub fn emit_marginal(
    cfg: &ExperimentConfig,
    run: &MarginalRun,
) -> Result<Vec<PathBuf>, PipelineError> {
    std::fs::create_dir_all(&cfg.output_dir)?;
    let case = case_name(cfg);
    let mut paths = Vec::new();
    for (k, summary) in run.summaries.iter().enumerate() {
        let stem = format!("{case}_{}", summary.line);
        let bin = cfg.output_dir.join(format!("{stem}_pdf.bin"));
        write_density_1d(&bin, &run.fields[k])?;
        let csv = cfg.output_dir.join(format!("{stem}_pdf.csv"));
        export_density_1d_csv(&csv, &run.fields[k])?;
        let kde = cfg.output_dir.join(format!("{stem}_kde.csv"));
        export_density_1d_csv(&kde, &run.kde_fields[k])?;
        paths.extend([bin, csv, kde]);
    }
    let summary = cfg.output_dir.join(format!("{case}_summary.json"));
    write_json(&summary, &run.summaries)?;
    paths.push(summary);
    Ok(paths)
}

/// Writes the joint-study artifacts and returns the paths created.
pub fn emit_joint(cfg: &ExperimentConfig, run: &JointRun) -> Result<Vec<PathBuf>, PipelineError> {
    std::fs::create_dir_all(&cfg.output_dir)?;
    let case = case_name(cfg);
    let stem = format!(
        "{case}_{}x{}",
        run.summary.lines[0], run.summary.lines[1]
    );
    let bin = cfg.output_dir.join(format!("{stem}_joint.bin"));
    write_density_2d(&bin, &run.field)?;
    let csv = cfg.output_dir.join(format!("{stem}_joint.csv"));
    export_density_2d_csv(&csv, &run.field)?;
    let kde = cfg.output_dir.join(format!("{stem}_joint_kde.csv"));
    export_density_2d_csv(&kde, &run.kde_field)?;
    let mi = cfg.output_dir.join(format!("{stem}_mi.csv"));
    let mut mi_text = String::from("t,mi\n");
    for &(t, v) in &run.mi_curve {
        mi_text.push_str(&format!("{t},{v}\n"));
    }
    std::fs::write(&mi, mi_text)?;
    let summary = cfg.output_dir.join(format!("{case}_joint_summary.json"));
    write_json(&summary, &run.summary)?;
    Ok(vec![bin, csv, kde, mi, summary])
}

/// Writes the complexity report and returns its path.
pub fn emit_complexity(
    cfg: &ExperimentConfig,
    report: &ComplexityReport,
) -> Result<PathBuf, PipelineError> {
    std::fs::create_dir_all(&cfg.output_dir)?;
    let path = cfg
        .output_dir
        .join(format!("{}_complexity.json", case_name(cfg)));
    write_json(&path, report)?;
    Ok(path)
}

/// Evaluates a fitted closure set on a grid at one time; exposed so callers
/// can inspect the advection field driving a solve.
pub fn closure_on_grid(
    models: &ClosureSet,
    t: f64,
    grid: &Grid1D,
) -> Result<Vec<f64>, ClosureError> {
    coefficient_field(models, t, &grid.centers())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case::{test_support::make_case, write_case_bundle, EquilibriumPoint};
    use ndarray::{array, Array1};
    use std::collections::BTreeMap;

    fn rated_triangle() -> (crate::case::PowerCase, EquilibriumPoint) {
        let n = 3;
        let mut g = Array2::zeros((n, n));
        let mut b = Array2::zeros((n, n));
        let edges = vec![LineId::new(1, 2), LineId::new(1, 3), LineId::new(2, 3)];
        for l in &edges {
            let (i, j) = (l.i() - 1, l.j() - 1);
            g[[i, j]] = 0.2;
            g[[j, i]] = 0.2;
            b[[i, j]] = -4.0;
            b[[j, i]] = -4.0;
        }
        for i in 0..n {
            g[[i, i]] = 0.5;
            b[[i, i]] = 8.0;
        }
        let v_star = array![1.0, 0.98, 1.02];
        let delta_star = array![0.0, -0.06, 0.04];
        let mut p_m = Array1::zeros(n);
        for i in 0..n {
            for j in 0..n {
                let dd: f64 = delta_star[i] - delta_star[j];
                p_m[i] += v_star[i] * v_star[j] * (g[[i, j]] * dd.cos() + b[[i, j]] * dd.sin());
            }
        }
        let mut ratings = BTreeMap::new();
        for l in &edges {
            ratings.insert(*l, 0.12);
        }
        let case = make_case(
            n,
            edges,
            g,
            b,
            Array1::from_elem(n, 1.5),
            Array1::from_elem(n, 0.8),
            p_m,
            1.0,
            ratings,
        );
        (case, EquilibriumPoint { v_star, delta_star })
    }

    fn test_config(dir: &std::path::Path) -> ExperimentConfig {
        let (case, eq) = rated_triangle();
        let bundle = dir.join("tri");
        write_case_bundle(&bundle, &case, &eq).unwrap();
        ExperimentConfig {
            bundle,
            r: 0.2,
            dt: 0.01,
            burn_in_t: 2.0,
            post_t: 0.5,
            tripped_line: None,
            record_lines: vec![LineId::new(1, 2), LineId::new(1, 3)],
            record_stride: 10,
            m_r: 300,
            m_kde: 500,
            seed: 11,
            n_cells: 80,
            padding_stds: 0.75,
            output_dir: dir.join("out"),
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn marginal_study_end_to_end() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = test_config(dir.path());
        let run = run_marginal(&cfg).unwrap();
        assert_eq!(run.summaries.len(), 2);
        for s in &run.summaries {
            assert!((0.0..=1.0).contains(&s.p_ropdf), "p_ropdf {}", s.p_ropdf);
            assert!((0.0..=1.0).contains(&s.p_kde));
            assert!((0.0..=1.0).contains(&s.p_empirical));
            assert!(s.l1_vs_kde.is_finite() && s.l1_vs_kde >= 0.0);
            assert!(s.bandwidth.is_none());
        }
        // Solved mass plus boundary loss accounts for the initial mass.
        let field = &run.fields[0];
        let last = field.frames.len() - 1;
        let residual = field.mass(0) - field.mass(last) - field.mass_lost;
        assert!(residual.abs() < 1e-10, "mass leak {residual}");

        // The whole pipeline is deterministic in the seed.
        let rerun = run_marginal(&cfg).unwrap();
        assert_eq!(rerun.summaries[0].p_ropdf, run.summaries[0].p_ropdf);
        assert_eq!(rerun.summaries[1].l1_vs_kde, run.summaries[1].l1_vs_kde);
    }

    #[test]
    fn joint_study_end_to_end() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = test_config(dir.path());
        cfg.n_cells = 50;
        let run = run_joint(&cfg).unwrap();
        let s = &run.summary;
        assert!((0.0..=1.0).contains(&s.p_joint_ropdf));
        assert!((0.0..=1.0).contains(&s.p_independent));
        assert!(s.mutual_information >= 0.0);
        assert_eq!(
            s.p_independent,
            independence_joint(1.0 - s.p_marginal[0], 1.0 - s.p_marginal[1])
        );
        // One mutual-information value per stored frame, all non-negative.
        assert_eq!(run.mi_curve.len(), run.field.frames.len());
        assert!(run.mi_curve.iter().all(|&(_, v)| v >= 0.0));
    }

    #[test]
    fn complexity_sweep_produces_curves() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = test_config(dir.path());
        cfg.record_lines = vec![LineId::new(1, 2)];
        let report = run_complexity(&cfg, &[100, 200], 0.01).unwrap();
        assert_eq!(report.sizes, vec![100, 200]);
        assert_eq!(report.edges, 3);
        assert_eq!(report.lines.len(), 1);
        assert!(report.ropdf_errors.iter().all(|&e| e > 0.0));
        assert!(report.kde_errors.iter().all(|&e| e > 0.0));
        assert!(report.ropdf_slope.is_some());
        // A tolerance nothing reaches leaves the aggregate empty and flags
        // the line as unresolved.
        assert!(report.lines[0].ropdf_required.is_none() || report.ropdf_aggregate.is_some());

        cfg.tripped_line = Some(LineId::new(2, 3));
        assert!(matches!(
            run_complexity(&cfg, &[100], 0.01),
            Err(PipelineError::BadRequest(_))
        ));
    }

    #[test]
    fn cross_case_slope_fits_loglog_line() {
        // m* = c * E^2 exactly.
        let pts = [(3usize, 9usize), (10, 100), (30, 900)];
        let s = cross_case_slope(&pts).unwrap();
        assert!((s - 2.0).abs() < 1e-12, "slope {s}");
        assert!(cross_case_slope(&pts[..1]).is_none());
    }

    #[test]
    fn artifacts_use_deterministic_names() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = test_config(dir.path());
        cfg.record_lines = vec![LineId::new(1, 2)];
        let run = run_marginal(&cfg).unwrap();
        let paths = emit_marginal(&cfg, &run).unwrap();
        let names: Vec<String> = paths
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect();
        assert_eq!(
            names,
            vec![
                "tri_1-2_pdf.bin",
                "tri_1-2_pdf.csv",
                "tri_1-2_kde.csv",
                "tri_summary.json"
            ]
        );
        for p in &paths {
            assert!(p.exists());
        }
        let text = std::fs::read_to_string(&paths[3]).unwrap();
        let parsed: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(parsed[0]["line"], "1-2");
    }

    #[test]
    fn joint_requires_two_lines_and_methods_match_dimension() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = test_config(dir.path());
        cfg.record_lines = vec![LineId::new(1, 2)];
        assert!(matches!(run_joint(&cfg), Err(PipelineError::BadRequest(_))));

        let mut cfg = test_config(dir.path());
        cfg.closure_method = ClosureMethod::Lowess;
        assert!(matches!(
            run_marginal(&cfg),
            Err(PipelineError::BadRequest(_))
        ));
        cfg.closure_method = ClosureMethod::LocalLinear;
        assert!(matches!(run_joint(&cfg), Err(PipelineError::BadRequest(_))));
    }
}
