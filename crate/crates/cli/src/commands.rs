use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use hypocap::capacity::{solve_equilibrium, CapacityError, CapacitySummary, ProbeStrategy, FEAS_TOL};
use hypocap::estimates::{
    gramian_gap_sweep, norm_sweep, q0_consistency, quadratic_sweep, ratio_bound_sweep, ratio_constant,
    write_estimates_csv, SweepResult,
};
use hypocap::geometry::{
    cone_check, cone_search, flat_compact, g_r_set, shell, solid_box, BaseSet, ConeCheck, ConeSpec, DiscreteCompact,
    DomainSpec, GeometryError,
};
use hypocap::oracle_mc::{density_validation, hitting_estimate, write_mc_csv, DensityReport, DomainTarget, McError};
use hypocap::wiener::{
    capacity_sums, diagnose, gr_probe, series_terms, write_series_csv, DiagnosisPolicy, SeriesConfig, Verdict,
    WienerError,
};
use hypocap::{Kernel, Mat, Operator, OperatorConfig, OperatorError, Point};
use serde::{Deserialize, Serialize};

use crate::{OperatorArgs, PointArgs};

#[derive(Debug)]
pub enum CliError {
    Parse(String),
    Validation(String),
    Kalman(String),
    Invariant(String),
    Runtime(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            Self::Runtime(_) => 1,
            Self::Parse(_) => 2,
            Self::Validation(_) => 3,
            Self::Kalman(_) => 4,
            Self::Invariant(_) => 5,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Parse(m) => write!(f, "parse: {m}"),
            Self::Validation(m) => write!(f, "validation: {m}"),
            Self::Kalman(m) => write!(f, "operator: {m}"),
            Self::Invariant(m) => write!(f, "invariant violated: {m}"),
            Self::Runtime(m) => write!(f, "{m}"),
        }
    }
}

impl From<OperatorError> for CliError {
    fn from(e: OperatorError) -> Self {
        match e {
            OperatorError::KalmanFailure { .. } => Self::Kalman(e.to_string()),
            _ => Self::Validation(format!("operator: {e}")),
        }
    }
}

impl From<GeometryError> for CliError {
    fn from(e: GeometryError) -> Self {
        Self::Validation(format!("geometry: {e}"))
    }
}

impl From<CapacityError> for CliError {
    fn from(e: CapacityError) -> Self {
        match e {
            CapacityError::Geometry(g) => g.into(),
            other => Self::Runtime(format!("capacity: {other}")),
        }
    }
}

impl From<WienerError> for CliError {
    fn from(e: WienerError) -> Self {
        match e {
            WienerError::Geometry(g) => g.into(),
            WienerError::Capacity(c) => c.into(),
            other => Self::Validation(format!("wiener: {other}")),
        }
    }
}

impl From<McError> for CliError {
    fn from(e: McError) -> Self {
        Self::Validation(format!("mc: {e}"))
    }
}

fn io_err(path: &Path, e: impl fmt::Display) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| io_err(path, e))?;
    writeln!(w).map_err(|e| io_err(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?))
}

fn load_kernel(op: &OperatorArgs) -> Result<Kernel, CliError> {
    let cfg: OperatorConfig = read_json(&op.operator)?;
    Ok(Kernel::from_spec(Operator::validate(&cfg)?))
}

fn parse_point(s: &str, dim: usize) -> Result<Point, CliError> {
    let p =
        Point::parse(s).ok_or_else(|| CliError::Parse(format!("z0 '{s}' is not a comma separated list of numbers")))?;
    if p.dim() != dim {
        return Err(CliError::Parse(format!("z0 has {} space coordinates, the operator has {dim}", p.dim())));
    }
    Ok(p)
}

fn check_lambda(lambda: f64) -> Result<(), CliError> {
    if lambda > 0.0 && lambda < 1.0 {
        Ok(())
    } else {
        Err(CliError::Validation(format!("lambda must lie in (0, 1), got {lambda}")))
    }
}

#[derive(Serialize)]
struct Certificate {
    p: Vec<usize>,
    dim: usize,
    depth: usize,
    q: usize,
    c_n: f64,
    c1: Mat,
    c1_inv: Mat,
    sigma: f64,
    sigma_c: f64,
    lambda: f64,
    m: f64,
    q0: f64,
    ratio_c0: f64,
    ratio_c: f64,
    kalman: &'static str,
}

pub fn validate(op: &OperatorArgs, lambda: f64, out: &Path) -> Result<(), CliError> {
    check_lambda(lambda)?;
    let ctx = load_kernel(op)?;
    let spec = ctx.spec();
    let (m, q0) = spec.q0(lambda)?;
    let (c0, c) = ratio_constant(spec);
    let cert = Certificate {
        p: spec.signature().sizes().to_vec(),
        dim: spec.dim(),
        depth: spec.depth(),
        q: spec.hom_dim(),
        c_n: spec.c_n(),
        c1: spec.c1().clone(),
        c1_inv: spec.c1_inv().clone(),
        sigma: spec.sigma(),
        sigma_c: spec.sigma_c(),
        lambda,
        m,
        q0,
        ratio_c0: c0,
        ratio_c: c,
        kalman: "ok",
    };
    write_json(&out.join("certificate.json"), &cert)?;
    println!(
        "Q = {}, c_N = {:.12}, sigma = {}, sigma_C = {:.12}, q0 = {:.12}",
        cert.q, cert.c_n, cert.sigma, cert.sigma_c, cert.q0
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn wiener(
    op: &OperatorArgs,
    at: &PointArgs,
    lambda: f64,
    kmin: usize,
    kmax: usize,
    resolution: usize,
    r_ladder: &str,
    out: &Path,
) -> Result<(), CliError> {
    check_lambda(lambda)?;
    if !(2..=64).contains(&kmin) || !(2..=64).contains(&kmax) || kmin > kmax {
        return Err(CliError::Validation(format!("k range [{kmin}, {kmax}] must lie within [2, 64]")));
    }
    let ctx = load_kernel(op)?;
    let domain: DomainSpec = read_json(&at.domain)?;
    let z0 = parse_point(&at.z0, ctx.dim())?;
    let ladder: Vec<f64> = r_ladder
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Parse(format!("r ladder: {e}")))?;
    let cfg =
        SeriesConfig { lambda, k_min: kmin, k_max: kmax, resolution, r_ladder: ladder, gr_resolution: resolution };
    let strategy = ProbeStrategy::default();
    let mut report = series_terms(&ctx, &domain, &z0, &cfg, &strategy)?;
    capacity_sums(&mut report);
    report.gr = gr_probe(&ctx, &domain, &z0, &cfg.r_ladder, cfg.gr_resolution, &strategy)?;
    report.diagnosis = match diagnose(&report, &DiagnosisPolicy::default()) {
        Ok(d) => Some(d),
        Err(WienerError::InsufficientTerms { needed, got }) => {
            eprintln!("warning: kmax - kmin = {got} < {needed}, verdict is inconclusive");
            None
        }
        Err(e) => return Err(e.into()),
    };
    write_json(&out.join("report.json"), &report)?;
    let csv = out.join("series.csv");
    write_series_csv(&report, create(&csv)?).map_err(|e| io_err(&csv, e))?;
    let verdict = report.diagnosis.as_ref().map_or(Verdict::Inconclusive, |d| d.verdict);
    let name = serde_json::to_value(verdict).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
    println!("verdict: {name}");
    if let Some(t) = report.terms.iter().find(|t| !t.sandwich_ok) {
        return Err(CliError::Invariant(format!("shell k = {} breaks the capacity sandwich", t.k)));
    }
    if let Some(t) = report.terms.iter().find(|t| t.max_potential.is_some_and(|m| m > 1.0 + FEAS_TOL)) {
        return Err(CliError::Invariant(format!("shell k = {} potential exceeds one", t.k)));
    }
    Ok(())
}

#[derive(Serialize)]
struct ConeReport {
    cone: Option<ConeSpec>,
    check: Option<ConeCheck>,
}

pub fn cone(
    op: &OperatorArgs,
    at: &PointArgs,
    cone: Option<&Path>,
    samples: usize,
    out: &Path,
) -> Result<(), CliError> {
    let ctx = load_kernel(op)?;
    let spec = ctx.spec();
    let domain: DomainSpec = read_json(&at.domain)?;
    let z0 = parse_point(&at.z0, ctx.dim())?;
    let report = match cone {
        Some(path) => {
            let c: ConeSpec = read_json(path)?;
            let check = cone_check(spec, &domain, &z0, &c, samples);
            match &check.witness {
                None => println!("cone contained in the complement ({} samples)", check.checked),
                Some(w) => println!("cone leaves the complement at {:?}", w.coords()),
            }
            ConeReport { cone: Some(c), check: Some(check) }
        }
        None => {
            let found = cone_search(spec, &domain, &z0, samples);
            match &found {
                Some(c) => println!("found cone: {}", serde_json::to_string(c).unwrap_or_default()),
                None => println!("no cone found"),
            }
            let check = found.as_ref().map(|c| cone_check(spec, &domain, &z0, c, samples));
            ConeReport { cone: found, check }
        }
    };
    write_json(&out.join("cone.json"), &report)
}

pub fn estimates(op: &OperatorArgs, samples: usize, lambda: f64, seed: u64, out: &Path) -> Result<(), CliError> {
    check_lambda(lambda)?;
    let ctx = load_kernel(op)?;
    let spec = ctx.spec();
    let name = op.operator.file_stem().and_then(|s| s.to_str()).unwrap_or("operator").to_string();
    let mut rows: Vec<SweepResult> = vec![
        gramian_gap_sweep(spec, &name, samples.min(10_000), seed),
        ratio_bound_sweep(&ctx, &name, samples, seed.wrapping_add(1)),
        norm_sweep(spec, &name, samples, seed.wrapping_add(2)),
        quadratic_sweep(&ctx, &name, samples, seed.wrapping_add(3)),
    ];
    let bad_q = q0_consistency(spec, lambda, 1000, 5);
    rows.push(SweepResult { sweep: "q0".into(), spec: name, samples: 6 * 1000, violations: bad_q, extreme: 0.0 });
    let path = out.join("estimates.csv");
    write_estimates_csv(&rows, create(&path)?).map_err(|e| io_err(&path, e))?;
    let total: usize = rows.iter().map(|r| r.violations).sum();
    for r in &rows {
        println!("{:<16} samples {:>7} violations {}", r.sweep, r.samples, r.violations);
    }
    if total > 0 {
        return Err(CliError::Invariant(format!("{total} violations in the estimate sweeps")));
    }
    Ok(())
}

pub struct HitArgs {
    pub domain: PathBuf,
    pub z0: String,
    pub h: f64,
    pub steps: usize,
    pub paths: usize,
}

pub fn mc(
    op: &OperatorArgs,
    t: f64,
    bins: usize,
    samples: usize,
    hit: Option<HitArgs>,
    seed: u64,
    out: &Path,
) -> Result<(), CliError> {
    let ctx = load_kernel(op)?;
    let density: DensityReport = density_validation(&ctx, t, bins, samples, seed)?;
    write_json(&out.join("density.json"), &density)?;
    println!("density L1 = {:.6e}, covariance rel. error = {:.3e}", density.max_l1, density.cov_rel_err);
    let mut rows = Vec::new();
    if let Some(h) = hit {
        let domain: DomainSpec = read_json(&h.domain)?;
        let z0 = parse_point(&h.z0, ctx.dim())?;
        let target = DomainTarget { ctx: &ctx, domain: &domain };
        let mut est = hitting_estimate(&ctx, &target, &z0, h.h, h.steps, h.paths, seed)?;
        est.experiment = "domain".into();
        println!("hitting p = {:.6} +- {:.6}", est.p_hat, est.stderr);
        rows.push(est);
    }
    let path = out.join("mc.csv");
    write_mc_csv(&rows, create(&path)?).map_err(|e| io_err(&path, e))
}

#[derive(Deserialize)]
#[serde(rename_all = "snake_case")]
enum CompactSpec {
    Flat {
        set: BaseSet,
        tau: f64,
        resolution: usize,
    },
    SolidBox {
        lo: Vec<f64>,
        hi: Vec<f64>,
        a: f64,
        b: f64,
        resolution: usize,
    },
    Shell {
        lambda: f64,
        k: usize,
        resolution: usize,
    },
    #[serde(rename = "g_r")]
    GR {
        r: f64,
        resolution: usize,
    },
}

pub fn capacity(
    op: &OperatorArgs,
    compact: &Path,
    domain: Option<&Path>,
    z0: Option<&str>,
    lp_dump: Option<&Path>,
    out: &Path,
) -> Result<(), CliError> {
    let ctx = load_kernel(op)?;
    let spec: CompactSpec = read_json(compact)?;
    let located = || -> Result<(DomainSpec, Point), CliError> {
        let d = domain.ok_or_else(|| CliError::Parse("this compact needs --domain".into()))?;
        let z = z0.ok_or_else(|| CliError::Parse("this compact needs --z0".into()))?;
        Ok((read_json(d)?, parse_point(z, ctx.dim())?))
    };
    let c: DiscreteCompact = match spec {
        CompactSpec::Flat { set, tau, resolution } => {
            if set.dim() != ctx.dim() {
                return Err(CliError::Parse("flat set dimension does not match the operator".into()));
            }
            flat_compact(&set, tau, resolution)?
        }
        CompactSpec::SolidBox { lo, hi, a, b, resolution } => solid_box(&lo, &hi, a, b, resolution)?,
        CompactSpec::Shell { lambda, k, resolution } => {
            let (d, z) = located()?;
            shell(&ctx, &d, &z, lambda, k, resolution)?
        }
        CompactSpec::GR { r, resolution } => {
            let (d, z) = located()?;
            g_r_set(&ctx, &d, &z, r, resolution)?
        }
    };
    let sol = solve_equilibrium(&ctx, &c, &ProbeStrategy::default())?;
    let summary: CapacitySummary = sol.summary();
    write_json(&out.join("capacity.json"), &summary)?;
    if let Some(path) = lp_dump {
        sol.lp.write_text(create(path)?).map_err(|e| io_err(path, e))?;
    }
    println!("cap = {:.12e} ({} atoms, max potential {:.12})", summary.cap_value, summary.atoms, summary.max_potential);
    if summary.max_potential > 1.0 + FEAS_TOL {
        return Err(CliError::Invariant("potential exceeds one on a probe".into()));
    }
    Ok(())
}
