//! Wiener-type series at a boundary point: potentials of the Γ-shells, the
//! two capacity-scaled sums, the measure sum, the `G_r` probe, and a
//! trend-based verdict.

use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::capacity::{solve_equilibrium, CapacityError, ProbeStrategy, SolveStatus};
use crate::geometry::{g_r_set, shell, shell_log_measure_term, DomainSpec, GeometryError};
use crate::kernel::{exp_or_zero, KernelContext};
use crate::operator::alpha;
use crate::point::SpaceTimePoint;

type Point = SpaceTimePoint<f64>;
type Ctx = KernelContext<f64>;

/// Relative slack allowed in the per-term sandwich.
pub const SANDWICH_TOL: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WienerError {
    #[error("need kmin >= 2 and kmin <= kmax, got [{0}, {1}]")]
    BadRange(usize, usize),
    #[error("r ladder must be positive and strictly decreasing")]
    BadLadder,
    #[error("diagnosis needs kmax - kmin >= {needed}, got {got}")]
    InsufficientTerms { needed: usize, got: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Capacity(#[from] CapacityError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesConfig {
    pub lambda: f64,
    pub k_min: usize,
    pub k_max: usize,
    pub resolution: usize,
    pub r_ladder: Vec<f64>,
    pub gr_resolution: usize,
}

impl Default for SeriesConfig {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            k_min: 2,
            k_max: 16,
            resolution: 12,
            r_ladder: vec![1.0, 0.5, 0.25, 0.125],
            gr_resolution: 12,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesTerm {
    pub k: usize,
    pub atoms: usize,
    /// `V_{Ω_k^c}(z₀)`.
    pub v: f64,
    /// Capacity in the shell's normalized frame.
    pub cap_local: f64,
    /// `ln cap(Ω_k^c)`; absent for an empty shell.
    pub log_cap: Option<f64>,
    /// `cap / λ^{α(k)}`.
    pub cap_lower: f64,
    /// `cap / λ^{α(k+1)}`.
    pub cap_upper: f64,
    /// `|Ω_k^c| / λ^{((Q+2)/Q) α(k)}`.
    pub measure: f64,
    pub sandwich_ok: bool,
    pub status: Option<SolveStatus>,
    pub max_potential: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrValue {
    pub r: f64,
    pub value: f64,
    /// Physical time offset above z₀ at which the potential was taken.
    pub eps_r: f64,
    pub atoms: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    RegularEvidence,
    IrregularEvidence,
    Inconclusive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisPolicy {
    pub tail_len: usize,
    pub min_span: usize,
    pub beta_max: f64,
    pub term_floor: f64,
    pub tail_eps: f64,
    pub gr_floor: f64,
}

impl Default for DiagnosisPolicy {
    fn default() -> Self {
        Self { tail_len: 6, min_span: 6, beta_max: 1.0, term_floor: 1e-3, tail_eps: 1e-3, gr_floor: 1e-3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnosis {
    pub verdict: Verdict,
    /// Fit `V_k ≈ c k^{−β}` over the tail; absent if a tail term is zero.
    pub fit_c: Option<f64>,
    pub fit_beta: Option<f64>,
    /// Fitted term at `kmax`.
    pub fit_term_at_kmax: Option<f64>,
    /// Estimate of `Σ_{k > kmax} V_k`; absent when the tail models diverge.
    pub tail_bound: Option<f64>,
    pub gr_last: Option<f64>,
    pub tail_terms: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesReport {
    pub lambda: f64,
    pub k_min: usize,
    pub k_max: usize,
    pub resolution: usize,
    pub z0: Point,
    pub terms: Vec<SeriesTerm>,
    pub partial_v: Vec<f64>,
    pub partial_cap_lower: Vec<f64>,
    pub partial_cap_upper: Vec<f64>,
    pub partial_measure: Vec<f64>,
    pub gr: Vec<GrValue>,
    pub diagnosis: Option<Diagnosis>,
}

fn partial_sums(v: impl Iterator<Item = f64>) -> Vec<f64> {
    v.scan(0.0, |acc, x| {
        *acc += x;
        Some(*acc)
    })
    .collect()
}

/// One term of the series: shell `k`, its equilibrium, `V` at z₀ and the
/// scaled capacities.
pub fn series_term(
    ctx: &Ctx,
    domain: &DomainSpec,
    z0: &Point,
    lambda: f64,
    k: usize,
    resolution: usize,
    strategy: &ProbeStrategy,
) -> Result<SeriesTerm, WienerError> {
    let spec = ctx.spec();
    let sh = shell(ctx, domain, z0, lambda, k, resolution)?;
    let measure = exp_or_zero(shell_log_measure_term(spec, &sh, lambda, k));
    if sh.is_empty() {
        return Ok(SeriesTerm {
            k,
            atoms: 0,
            v: 0.0,
            cap_local: 0.0,
            log_cap: None,
            cap_lower: 0.0,
            cap_upper: 0.0,
            measure,
            sandwich_ok: true,
            status: None,
            max_potential: None,
        });
    }
    let sol = solve_equilibrium(ctx, &sh, strategy)?;
    // In the shell frame z₀ is the origin and Γ-levels are c_N and
    // c_N λ^{α(k)−α(k+1)}.
    let v = sol.potential_at_local(ctx, &Point::origin(ctx.dim()));
    let gap = (alpha(k as f64 + 1.0) - alpha(k as f64)) * (1.0 / lambda).ln();
    let cap_lower = ctx.c_n() * sol.cap_local;
    let cap_upper = cap_lower * gap.exp();
    let sandwich_ok = v >= cap_lower * (1.0 - SANDWICH_TOL) && v <= cap_upper * (1.0 + SANDWICH_TOL);
    Ok(SeriesTerm {
        k,
        atoms: sh.len(),
        v,
        cap_local: sol.cap_local,
        log_cap: sol.log_cap.is_finite().then_some(sol.log_cap),
        cap_lower,
        cap_upper,
        measure,
        sandwich_ok,
        status: Some(sol.status),
        max_potential: Some(sol.max_potential),
    })
}

/// Series terms for `k ∈ [k_min, k_max]` plus partial sums. The `G_r` probe
/// and the diagnosis are left empty.
pub fn series_terms(
    ctx: &Ctx,
    domain: &DomainSpec,
    z0: &Point,
    cfg: &SeriesConfig,
    strategy: &ProbeStrategy,
) -> Result<SeriesReport, WienerError> {
    if cfg.k_min < 2 || cfg.k_min > cfg.k_max {
        return Err(WienerError::BadRange(cfg.k_min, cfg.k_max));
    }
    let terms = (cfg.k_min..=cfg.k_max)
        .into_par_iter()
        .map(|k| series_term(ctx, domain, z0, cfg.lambda, k, cfg.resolution, strategy))
        .collect::<Result<Vec<_>, _>>()?;
    let mut report = SeriesReport {
        lambda: cfg.lambda,
        k_min: cfg.k_min,
        k_max: cfg.k_max,
        resolution: cfg.resolution,
        z0: z0.clone(),
        partial_v: partial_sums(terms.iter().map(|t| t.v)),
        partial_measure: partial_sums(terms.iter().map(|t| t.measure)),
        partial_cap_lower: Vec::new(),
        partial_cap_upper: Vec::new(),
        terms,
        gr: Vec::new(),
        diagnosis: None,
    };
    capacity_sums(&mut report);
    Ok(report)
}

/// Fills the partial sums of the two capacity-scaled series.
pub fn capacity_sums(report: &mut SeriesReport) {
    report.partial_cap_lower = partial_sums(report.terms.iter().map(|t| t.cap_lower));
    report.partial_cap_upper = partial_sums(report.terms.iter().map(|t| t.cap_upper));
}

/// `V_{G_r}` just above z₀ for each `r` of a strictly decreasing ladder.
pub fn gr_probe(
    ctx: &Ctx,
    domain: &DomainSpec,
    z0: &Point,
    ladder: &[f64],
    resolution: usize,
    strategy: &ProbeStrategy,
) -> Result<Vec<GrValue>, WienerError> {
    if ladder.iter().any(|&r| !(r > 0.0)) || ladder.windows(2).any(|w| w[1] >= w[0]) {
        return Err(WienerError::BadLadder);
    }
    ladder
        .par_iter()
        .map(|&r| {
            let g = g_r_set(ctx, domain, z0, r, resolution)?;
            let dt = 1.0 / resolution as f64;
            let eps_r = r * r * dt;
            if g.is_empty() {
                return Ok(GrValue { r, value: 0.0, eps_r, atoms: 0 });
            }
            let sol = solve_equilibrium(ctx, &g, strategy)?;
            let value = sol.potential_at_local(ctx, &Point::new(vec![0.0; ctx.dim()], dt));
            Ok(GrValue { r, value, eps_r, atoms: g.len() })
        })
        .collect()
}

/// Least squares fit of `y = a + b x`.
fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let b = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (my - b * mx, b)
}

/// Trend verdict from the tail of `V_k` and the `G_r` values.
pub fn diagnose(report: &SeriesReport, policy: &DiagnosisPolicy) -> Result<Diagnosis, WienerError> {
    let span = report.k_max.saturating_sub(report.k_min);
    if span < policy.min_span || report.terms.len() < policy.tail_len.max(2) {
        return Err(WienerError::InsufficientTerms { needed: policy.min_span, got: span });
    }
    let tail = &report.terms[report.terms.len() - policy.tail_len.max(2)..];
    let tail_terms: Vec<f64> = tail.iter().map(|t| t.v).collect();
    let k_last = tail.last().expect("non-empty tail").k as f64;
    let v_last = *tail_terms.last().expect("non-empty tail");

    let positive = tail_terms.iter().all(|&v| v > 0.0);
    let (fit_c, fit_beta, fit_term_at_kmax, tail_bound) = if positive {
        let lk: Vec<f64> = tail.iter().map(|t| (t.k as f64).ln()).collect();
        let kk: Vec<f64> = tail.iter().map(|t| t.k as f64).collect();
        let lv: Vec<f64> = tail_terms.iter().map(|v| v.ln()).collect();
        let (a, b) = linear_fit(&lk, &lv);
        let (c, beta) = (a.exp(), -b);
        let power = if beta > 1.0 { Some(c * k_last.powf(1.0 - beta) / (beta - 1.0)) } else { None };
        let (_, slope) = linear_fit(&kk, &lv);
        let ratio = slope.exp();
        let geometric = if ratio < 1.0 { Some(v_last * ratio / (1.0 - ratio)) } else { None };
        let bound = match (power, geometric) {
            (Some(p), Some(g)) => Some(p.min(g)),
            (p, g) => p.or(g),
        };
        (Some(c), Some(beta), Some(c * k_last.powf(-beta)), bound)
    } else if tail_terms.iter().all(|&v| v == 0.0) {
        (None, None, None, Some(0.0))
    } else {
        (None, None, None, None)
    };

    let gr_last = report.gr.last().map(|g| g.value);
    let gr_high = gr_last.is_none_or(|v| v >= policy.gr_floor);
    let gr_low = gr_last.is_none_or(|v| v < policy.gr_floor);
    let regular = matches!((fit_beta, fit_term_at_kmax), (Some(b), Some(t)) if b <= policy.beta_max && t >= policy.term_floor)
        && gr_high;
    let irregular = tail_bound.is_some_and(|b| b < policy.tail_eps) && gr_low;
    let verdict = if regular {
        Verdict::RegularEvidence
    } else if irregular {
        Verdict::IrregularEvidence
    } else {
        Verdict::Inconclusive
    };
    Ok(Diagnosis { verdict, fit_c, fit_beta, fit_term_at_kmax, tail_bound, gr_last, tail_terms })
}

/// Full pipeline: series, `G_r` probe and verdict.
pub fn analyze(
    ctx: &Ctx,
    domain: &DomainSpec,
    z0: &Point,
    cfg: &SeriesConfig,
    strategy: &ProbeStrategy,
    policy: &DiagnosisPolicy,
) -> Result<SeriesReport, WienerError> {
    let mut report = series_terms(ctx, domain, z0, cfg, strategy)?;
    report.gr = gr_probe(ctx, domain, z0, &cfg.r_ladder, cfg.gr_resolution, strategy)?;
    report.diagnosis = match diagnose(&report, policy) {
        Ok(d) => Some(d),
        Err(WienerError::InsufficientTerms { .. }) => None,
        Err(e) => return Err(e),
    };
    Ok(report)
}

/// Writes `series.csv` with 17 significant digits.
pub fn write_series_csv<W: Write>(report: &SeriesReport, mut w: W) -> io::Result<()> {
    writeln!(w, "k,v,cap,cap_lower,cap_upper,measure,partial_v,partial_cap_lower,partial_cap_upper,partial_measure")?;
    for (i, t) in report.terms.iter().enumerate() {
        let cap = t.log_cap.map_or(0.0, f64::exp);
        writeln!(
            w,
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            t.k,
            t.v,
            cap,
            t.cap_lower,
            t.cap_upper,
            t.measure,
            report.partial_v[i],
            report.partial_cap_lower[i],
            report.partial_cap_upper[i],
            report.partial_measure[i]
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::{OperatorConfig, OperatorSpec};

    fn synthetic(values: &[f64]) -> SeriesReport {
        let terms: Vec<SeriesTerm> = values
            .iter()
            .enumerate()
            .map(|(i, &v)| SeriesTerm {
                k: i + 2,
                atoms: 1,
                v,
                cap_local: v,
                log_cap: None,
                cap_lower: v,
                cap_upper: v,
                measure: v,
                sandwich_ok: true,
                status: None,
                max_potential: None,
            })
            .collect();
        SeriesReport {
            lambda: 0.5,
            k_min: 2,
            k_max: values.len() + 1,
            resolution: 1,
            z0: Point::origin(1),
            partial_v: partial_sums(values.iter().cloned()),
            partial_cap_lower: vec![],
            partial_cap_upper: vec![],
            partial_measure: vec![],
            terms,
            gr: vec![],
            diagnosis: None,
        }
    }

    #[test]
    fn verdicts_on_model_series() {
        let p = DiagnosisPolicy::default();
        assert_eq!(diagnose(&synthetic(&[0.0; 15]), &p).unwrap().verdict, Verdict::IrregularEvidence);
        assert_eq!(diagnose(&synthetic(&[0.5; 15]), &p).unwrap().verdict, Verdict::RegularEvidence);
        let geo: Vec<f64> = (2..=16).map(|k| 0.5f64.powi(k)).collect();
        assert_eq!(diagnose(&synthetic(&geo), &p).unwrap().verdict, Verdict::IrregularEvidence);
        assert!(matches!(diagnose(&synthetic(&[0.5; 4]), &p), Err(WienerError::InsufficientTerms { .. })));
    }

    #[test]
    fn empty_shells_give_zero_terms() {
        let ctx = KernelContext::from_spec(OperatorSpec::validate(&OperatorConfig::heat(1)).unwrap());
        let z0 = Point::origin(1);
        let dom = DomainSpec::point_complement(&z0);
        let cfg = SeriesConfig { k_min: 2, k_max: 4, resolution: 8, ..Default::default() };
        let r = series_terms(&ctx, &dom, &z0, &cfg, &ProbeStrategy::default()).unwrap();
        assert!(r.terms.iter().all(|t| t.v == 0.0 && t.cap_lower == 0.0 && t.measure == 0.0));
        assert_eq!(*r.partial_cap_upper.last().unwrap(), 0.0);
    }

    #[test]
    fn half_space_terms_are_sandwiched() {
        let ctx = KernelContext::from_spec(OperatorSpec::validate(&OperatorConfig::heat(1)).unwrap());
        let z0 = Point::origin(1);
        let dom = DomainSpec::past_halfspace_complement(1, 0.0);
        let cfg = SeriesConfig { k_min: 2, k_max: 5, resolution: 12, ..Default::default() };
        let r = series_terms(&ctx, &dom, &z0, &cfg, &ProbeStrategy::default()).unwrap();
        for t in &r.terms {
            assert!(t.sandwich_ok, "{t:?}");
            assert!(t.v > 0.1 && t.v <= 1.0 + 1e-9);
            assert!(t.cap_lower <= t.cap_upper);
        }
        assert!(r.partial_v.windows(2).all(|w| w[1] >= w[0]));
    }
}
