//! Numeric checks of the structural inequalities: the matrix inequality
//! `Eᵀ(t)C⁻¹(t−τ)E(t) ≥ C⁻¹(−τ)`, the ratio bound for `Γ(z,ζ)/Γ(0,ζ)` with
//! its constructive constant, the norm comparison `σ min ≤ ‖x‖ ≤ (n+1) max`,
//! the lower bound `|E(1)x|_C ≥ σ_C |x|`, and the `q₀` growth condition.

use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::KernelContext;
use crate::linalg::{norm2, Matrix};
use crate::operator::{alpha, OperatorSpec};
use crate::point::SpaceTimePoint;
use crate::scalar::Scalar;

/// Relative tolerance for the ratio bound.
pub const RATIO_TOL: f64 = 1e-8;
/// Relative tolerance for eigenvalue gaps and quadratic-form bounds.
pub const GAP_TOL: f64 = 1e-10;
/// Grid size for the maximum defining `C₀`.
pub const C0_GRID: usize = 1000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimateError {
    #[error("need 0 > t > tau, got t = {t}, tau = {tau}")]
    TimeOrderViolation { t: f64, tau: f64 },
}

fn check_order<T: Scalar>(t: T, tau: T) -> Result<(), EstimateError> {
    if t < T::zero() && tau < t {
        Ok(())
    } else {
        Err(EstimateError::TimeOrderViolation { t: t.to_f64_lossy(), tau: tau.to_f64_lossy() })
    }
}

/// `C⁻¹(h) = D_{1/√h} C⁻¹(1) D_{1/√h}`, exact up to rounding of the factors.
pub fn gramian_inverse<T: Scalar>(spec: &OperatorSpec<T>, h: T) -> Matrix<T> {
    let d = spec.dilation_factors(T::one() / h.sqrt());
    spec.c1_inv().sandwich_diag(&d)
}

/// `(λ_min(Eᵀ(t)C⁻¹(t−τ)E(t) − C⁻¹(−τ)), ‖C⁻¹(−τ)‖)`.
pub fn gramian_gap<T: Scalar>(spec: &OperatorSpec<T>, t: T, tau: T) -> Result<(T, T), EstimateError> {
    check_order(t, tau)?;
    let e = spec.mat_exp_e(t);
    let lhs = e.transpose().matmul(&gramian_inverse(spec, t - tau)).matmul(&e);
    let rhs = gramian_inverse(spec, -tau);
    let (min, _) = lhs.sub(&rhs).symmetrized().eig_min_max();
    Ok((min, rhs.op_norm()))
}

/// `(C₀, C)` with `C₀ = max_{μ∈[0,½]} ‖E(1−μ)‖` on a grid and
/// `C = (C₀/2)((n+1)/σ)‖C⁻¹(½)‖`.
pub fn ratio_constant<T: Scalar>(spec: &OperatorSpec<T>) -> (T, T) {
    let c0 = (0..=C0_GRID)
        .map(|i| {
            let mu = T::lit(0.5) * T::from_usize_lossy(i) / T::from_usize_lossy(C0_GRID);
            spec.mat_exp_e(T::one() - mu).op_norm()
        })
        .fold(T::zero(), T::max);
    let n1 = T::from_usize_lossy(spec.depth() + 1);
    let norm_half = gramian_inverse(spec, T::lit(0.5)).op_norm();
    (c0, c0 / T::lit(2.0) * (n1 / spec.sigma()) * norm_half)
}

/// Largest admissible `μ`: `min{½, σ²/(n+1)²}`.
pub fn mu_admissible<T: Scalar>(spec: &OperatorSpec<T>) -> T {
    let n1 = T::from_usize_lossy(spec.depth() + 1);
    let s = spec.sigma() / n1;
    T::lit(0.5).min(s * s)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioBoundCase {
    pub z: SpaceTimePoint<f64>,
    pub zeta: SpaceTimePoint<f64>,
    pub mu: f64,
    pub m_z: f64,
    pub m_zeta: f64,
    pub log_lhs: f64,
    pub log_rhs: f64,
    pub c: f64,
    pub admissible: bool,
    /// `lhs ≤ rhs (1 + RATIO_TOL)`; recorded for every case.
    pub holds: bool,
}

/// Evaluates both sides of the ratio bound in log space.
pub fn ratio_bound_check<T: Scalar>(
    ctx: &KernelContext<T>,
    c: T,
    z: &SpaceTimePoint<T>,
    zeta: &SpaceTimePoint<T>,
) -> Result<RatioBoundCase, EstimateError> {
    check_order(z.t, zeta.t)?;
    let spec = ctx.spec();
    let mu = z.t / zeta.t;
    let m_z = ctx.m_quantity(z).expect("t < 0");
    let m_zeta = ctx.m_quantity(zeta).expect("tau < 0");
    let origin = SpaceTimePoint::origin(ctx.dim());
    let log_lhs = ctx.log_gamma(z, zeta) - ctx.log_gamma(&origin, zeta);
    let log_rhs = -(spec.q() / T::lit(2.0)) * (T::one() - mu).ln() + c * mu.sqrt() * m_z * m_zeta;
    let tol = T::lit(RATIO_TOL).ln_1p();
    let f =
        |p: &SpaceTimePoint<T>| SpaceTimePoint::new(p.x.iter().map(|v| v.to_f64_lossy()).collect(), p.t.to_f64_lossy());
    Ok(RatioBoundCase {
        z: f(z),
        zeta: f(zeta),
        mu: mu.to_f64_lossy(),
        m_z: m_z.to_f64_lossy(),
        m_zeta: m_zeta.to_f64_lossy(),
        log_lhs: log_lhs.to_f64_lossy(),
        log_rhs: log_rhs.to_f64_lossy(),
        c: c.to_f64_lossy(),
        admissible: mu <= mu_admissible(spec),
        holds: log_lhs <= log_rhs + tol,
    })
}

/// `σ min{|x|, |x|^{1/(2n+1)}} ≤ ‖x‖ ≤ (n+1) max{…}`; returns the larger
/// relative violation of the two sides (≤ 0 when both hold).
pub fn norm_comparison<T: Scalar>(spec: &OperatorSpec<T>, x: &[T]) -> T {
    let r = norm2(x);
    if r == T::zero() {
        return T::neg_infinity();
    }
    let root = r.powf(T::one() / T::from_usize_lossy(2 * spec.depth() + 1));
    let h = spec.hom_norm(x);
    let lower = spec.sigma() * r.min(root);
    let upper = T::from_usize_lossy(spec.depth() + 1) * r.max(root);
    ((lower - h) / h).max((h - upper) / upper)
}

/// `(|E(1)x|_C² − σ_C²|x|²) / |x|²`.
pub fn quadratic_margin<T: Scalar>(ctx: &KernelContext<T>, x: &[T]) -> T {
    let spec = ctx.spec();
    let ex = spec.apply_e(T::one(), x);
    let r2 = norm2(x).powi(2);
    (ctx.quad_form_c(&ex) - spec.sigma_c() * spec.sigma_c() * r2) / r2
}

/// Number of `(q, k)` with `q ∈ [⌈q₀⌉, ⌈q₀⌉ + extra_q]`, `1 ≤ k ≤ k_max`
/// violating `α(kq+p) − α(kq) ≥ Q / (2 ln(1/λ))`, `p = 1 + ⌊q/2⌋`.
pub fn q0_consistency<T: Scalar>(spec: &OperatorSpec<T>, lambda: T, k_max: usize, extra_q: usize) -> usize {
    let Ok((_, q0)) = spec.q0(lambda) else { return usize::MAX };
    let need = spec.q() / (T::lit(2.0) * (T::one() / lambda).ln());
    let q_start = q0.ceil().to_usize().unwrap_or(0);
    let mut bad = 0;
    for q in q_start..=q_start + extra_q {
        let p = 1 + q / 2;
        for k in 1..=k_max {
            let a = T::from_usize_lossy(k * q);
            if alpha(a + T::from_usize_lossy(p)) - alpha(a) < need {
                bad += 1;
            }
        }
    }
    bad
}

/// One row of `estimates.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub sweep: String,
    pub spec: String,
    pub samples: usize,
    pub violations: usize,
    /// Sweep-specific extreme: smallest normalized gap, or largest log ratio
    /// `log lhs − log rhs`, or largest relative violation.
    pub extreme: f64,
}

/// `GAP_TOL`, widened for low-precision scalars.
pub fn gap_tol<T: Scalar>() -> f64 {
    GAP_TOL.max(1e3 * T::rel_eps().to_f64_lossy())
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// `samples` pairs with `τ = −e^{U(−3,3)}` and `t = μτ`, `μ` log-uniform in
/// `(10⁻⁶, 1)`.
pub fn gramian_gap_sweep<T: Scalar>(spec: &OperatorSpec<T>, name: &str, samples: usize, seed: u64) -> SweepResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0;
    let mut extreme = f64::INFINITY;
    let tol = gap_tol::<T>();
    for _ in 0..samples {
        let tau = -rng.gen_range(-3.0f64..3.0).exp();
        let mu = 10f64.powf(rng.gen_range(-6.0..0.0)).min(1.0 - 1e-9);
        let (t, tau) = (T::lit(mu * tau), T::lit(tau));
        if check_order(t, tau).is_err() {
            continue;
        }
        let (gap, scale) = gramian_gap(spec, t, tau).expect("ordered times");
        let g = (gap / scale).to_f64_lossy();
        extreme = extreme.min(g);
        if g < -tol {
            violations += 1;
        }
    }
    SweepResult { sweep: "gramian_gap".into(), spec: name.into(), samples, violations, extreme }
}

/// Admissible pairs with `M(z), M(ζ)` log-uniform in `(10⁻², 5)`.
pub fn ratio_bound_sweep<T: Scalar>(ctx: &KernelContext<T>, name: &str, samples: usize, seed: u64) -> SweepResult {
    let spec = ctx.spec();
    let (_, c) = ratio_constant(spec);
    let mu_max = mu_admissible(spec).to_f64_lossy();
    let n = ctx.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0;
    let mut extreme = f64::NEG_INFINITY;
    let point = |rng: &mut ChaCha8Rng, t: f64| {
        let dir = normal_vec(rng, n);
        let len = norm2(&dir).max(1e-300);
        let m = 10f64.powf(rng.gen_range(-2.0..5f64.log10()));
        let y: Vec<T> = dir.iter().map(|v| T::lit(v / len * m)).collect();
        let x = spec.dilate_space(T::lit(t).neg().sqrt(), &y).expect("positive scale");
        SpaceTimePoint::new(x, T::lit(t))
    };
    for _ in 0..samples {
        let tau = -rng.gen_range(-3.0f64..3.0).exp();
        let mu = rng.gen_range(1e-6..mu_max);
        let zeta = point(&mut rng, tau);
        let z = point(&mut rng, mu * tau);
        let Ok(case) = ratio_bound_check(ctx, c, &z, &zeta) else { continue };
        extreme = extreme.max(case.log_lhs - case.log_rhs);
        if case.admissible && !case.holds {
            violations += 1;
        }
    }
    SweepResult { sweep: "ratio_bound".into(), spec: name.into(), samples, violations, extreme }
}

/// Points uniform in the ball of radius 10³ plus points at log-spaced radii
/// in `(10⁻¹², 1)`, half of each.
fn norm_samples(n: usize, samples: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..samples)
        .map(|i| {
            let dir = normal_vec(&mut rng, n);
            let len = norm2(&dir).max(1e-300);
            let r = if i % 2 == 0 {
                1e3 * rng.gen::<f64>().powf(1.0 / n as f64)
            } else {
                10f64.powf(rng.gen_range(-12.0..0.0))
            };
            dir.iter().map(|v| v / len * r).collect()
        })
        .collect()
}

pub fn norm_sweep<T: Scalar>(spec: &OperatorSpec<T>, name: &str, samples: usize, seed: u64) -> SweepResult {
    let mut violations = 0;
    let mut extreme = f64::NEG_INFINITY;
    for x in norm_samples(spec.dim(), samples, seed) {
        let xt: Vec<T> = x.iter().map(|&v| T::lit(v)).collect();
        let v = norm_comparison(spec, &xt).to_f64_lossy();
        extreme = extreme.max(v);
        if v > 1e3 * T::rel_eps().to_f64_lossy() {
            violations += 1;
        }
    }
    SweepResult { sweep: "norm_comparison".into(), spec: name.into(), samples, violations, extreme }
}

pub fn quadratic_sweep<T: Scalar>(ctx: &KernelContext<T>, name: &str, samples: usize, seed: u64) -> SweepResult {
    let mut violations = 0;
    let mut extreme = f64::INFINITY;
    for x in norm_samples(ctx.dim(), samples, seed) {
        let xt: Vec<T> = x.iter().map(|&v| T::lit(v)).collect();
        let m = quadratic_margin(ctx, &xt).to_f64_lossy();
        extreme = extreme.min(m);
        if m < -gap_tol::<T>() {
            violations += 1;
        }
    }
    SweepResult { sweep: "quadratic_bound".into(), spec: name.into(), samples, violations, extreme }
}

pub fn write_estimates_csv<W: Write>(rows: &[SweepResult], mut w: W) -> io::Result<()> {
    writeln!(w, "sweep,spec,samples,violations,extreme")?;
    for r in rows {
        writeln!(w, "{},{},{},{},{:.16e}", r.sweep, r.spec, r.samples, r.violations, r.extreme)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::OperatorConfig;

    fn kolmo() -> OperatorSpec<f64> {
        OperatorSpec::validate(&OperatorConfig::kolmogorov()).unwrap()
    }

    #[test]
    fn heat_gap_closed_form() {
        let spec = OperatorSpec::<f64>::validate(&OperatorConfig::heat(1)).unwrap();
        let (t, tau) = (-0.5, -2.0);
        let (gap, _) = gramian_gap(&spec, t, tau).unwrap();
        assert!((gap - (1.0 / (t - tau) - 1.0 / -tau)).abs() < 1e-12);
        assert!(gramian_gap(&spec, -2.0, -1.0).is_err());
    }

    #[test]
    fn kolmogorov_gap_at_reference_times() {
        let spec = kolmo();
        let (gap, _) = gramian_gap(&spec, -1.0, -2.0).unwrap();
        assert!(gap >= 0.0);
    }

    #[test]
    fn constants() {
        let heat = OperatorSpec::<f64>::validate(&OperatorConfig::heat(2)).unwrap();
        assert!((ratio_constant(&heat).0 - 1.0).abs() < 1e-14);
        let golden = (1.0 + 5f64.sqrt()) / 2.0;
        assert!((ratio_constant(&kolmo()).0 - golden).abs() < 1e-12);
    }

    #[test]
    fn pure_time_shift_case() {
        let ctx = KernelContext::from_spec(kolmo());
        let (_, c) = ratio_constant(ctx.spec());
        let case = ratio_bound_check(
            &ctx,
            c,
            &SpaceTimePoint::new(vec![0.0, 0.0], -0.1),
            &SpaceTimePoint::new(vec![0.3, -0.2], -1.0),
        )
        .unwrap();
        assert_eq!(case.m_z, 0.0);
        assert!(case.holds);
    }

    #[test]
    fn norm_example() {
        let spec = kolmo();
        let v = norm_comparison(&spec, &[0.0, 1e-6]);
        assert!(v <= 1e-12);
        assert!((spec.hom_norm(&[0.0, 1e-6]) - 1e-2).abs() < 1e-14);
    }

    #[test]
    fn q0_condition_holds() {
        let spec = kolmo();
        assert_eq!(q0_consistency(&spec, 0.5, 1000, 5), 0);
    }

    #[test]
    fn f32_sweeps_run() {
        let spec: OperatorSpec<f32> = kolmo().cast();
        assert_eq!(gramian_gap_sweep(&spec, "kolmogorov-f32", 200, 1).violations, 0);
    }
}
