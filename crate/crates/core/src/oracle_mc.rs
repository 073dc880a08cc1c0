//! Exact-in-law sampler of the diffusion behind `L`, used as an independent
//! oracle: endpoint histograms against Γ, two-step composition, and
//! discrete-step hitting probabilities against equilibrium potentials.
//!
//! Backward steps carry time downwards: from `(x, t)` the next point is
//! `(ξ, t − h)` with `ξ ~ N(E(−h)x, 2E(−h)C(h)Eᵀ(−h))`, the law of
//! `ξ ↦ Γ((x,t), (ξ, t−h))`. Forward steps use `N(E(h)ξ, 2C(h))`.

use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gauss::interval_prob;
use crate::geometry::{DiscreteCompact, DomainSpec};
use crate::kernel::KernelContext;
use crate::linalg::Matrix;
use crate::point::SpaceTimePoint;

type Point = SpaceTimePoint<f64>;
type Ctx = KernelContext<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum McError {
    #[error("step duration must be positive, got {0}")]
    NonPositiveDuration(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Backward,
    Forward,
}

/// Gaussian transition `x ↦ N(map·x, root·rootᵀ)` for one step length.
#[derive(Clone, Debug)]
pub struct StepKernel {
    pub h: f64,
    pub direction: Direction,
    pub map: Matrix<f64>,
    pub cov: Matrix<f64>,
    /// Symmetric square root of `cov`.
    pub root: Matrix<f64>,
}

impl StepKernel {
    pub fn new(ctx: &Ctx, h: f64, direction: Direction) -> Result<Self, McError> {
        if !(h > 0.0) {
            return Err(McError::NonPositiveDuration(h));
        }
        let (map, cov) = match direction {
            Direction::Backward => (ctx.spec().mat_exp_e(-h), ctx.backward_cov(h)),
            Direction::Forward => (ctx.spec().mat_exp_e(h), ctx.forward_cov(h)),
        };
        let root = cov.sqrt_psd();
        Ok(Self { h, direction, map, cov, root })
    }

    pub fn mean(&self, x: &[f64]) -> Vec<f64> {
        self.map.mat_vec(x)
    }

    pub fn sample<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Vec<f64> {
        let g: Vec<f64> = (0..x.len()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let noise = self.root.mat_vec(&g);
        self.mean(x).iter().zip(noise).map(|(m, e)| m + e).collect()
    }
}

/// One backward step from `x` over duration `h`.
pub fn step_sample<R: Rng + ?Sized>(ctx: &Ctx, x: &[f64], h: f64, rng: &mut R) -> Result<Vec<f64>, McError> {
    Ok(StepKernel::new(ctx, h, Direction::Backward)?.sample(x, rng))
}

/// RNG of path `index` under a master seed.
pub fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathConfig {
    pub start: Point,
    pub h: f64,
    pub num_steps: usize,
    pub seed: u64,
}

/// Backward path `z₀, z₁, …` with `t_k = t₀ − k h`.
pub fn sample_path(ctx: &Ctx, cfg: &PathConfig, index: u64) -> Result<Vec<Point>, McError> {
    let kernel = StepKernel::new(ctx, cfg.h, Direction::Backward)?;
    let mut rng = path_rng(cfg.seed, index);
    let mut out = vec![cfg.start.clone()];
    for k in 1..=cfg.num_steps {
        let prev = out.last().expect("non-empty path");
        let x = kernel.sample(&prev.x, &mut rng);
        out.push(Point::new(x, cfg.start.t - k as f64 * cfg.h));
    }
    Ok(out)
}

/// Set visited by a discrete path.
pub trait HitTarget: Sync {
    fn hit(&self, z: &Point) -> bool;
}

pub struct EmptyTarget;

impl HitTarget for EmptyTarget {
    fn hit(&self, _: &Point) -> bool {
        false
    }
}

pub struct DomainTarget<'a> {
    pub ctx: &'a Ctx,
    pub domain: &'a DomainSpec,
}

impl HitTarget for DomainTarget<'_> {
    fn hit(&self, z: &Point) -> bool {
        self.domain.contains(self.ctx.spec(), z)
    }
}

/// Union of the compact's cells; flat layers are hit only at their exact
/// time (up to rounding), layered cells over their slab.
pub struct CompactTarget<'a> {
    pub ctx: &'a Ctx,
    pub compact: &'a DiscreteCompact,
}

impl HitTarget for CompactTarget<'_> {
    fn hit(&self, z: &Point) -> bool {
        let w = self.compact.frame.to_local(self.ctx.spec(), z);
        self.compact.atoms.iter().any(|a| {
            let in_time = if a.dt > 0.0 {
                (w.t - a.t).abs() <= 0.5 * a.dt
            } else {
                (w.t - a.t).abs() <= 1e-9 * a.t.abs().max(1.0)
            };
            in_time && a.x.iter().zip(&a.half_width).zip(&w.x).all(|((c, h), v)| (v - c).abs() <= *h)
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HitEstimate {
    pub experiment: String,
    pub p_hat: f64,
    pub stderr: f64,
    pub paths: usize,
    pub hits: usize,
    pub h: f64,
    pub steps: usize,
}

/// Fraction of backward paths from `z0` that visit `target` within
/// `steps` steps; binomial standard error.
pub fn hitting_estimate(
    ctx: &Ctx,
    target: &dyn HitTarget,
    z0: &Point,
    h: f64,
    steps: usize,
    paths: usize,
    seed: u64,
) -> Result<HitEstimate, McError> {
    let kernel = StepKernel::new(ctx, h, Direction::Backward)?;
    let hits: usize = (0..paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(seed, i as u64);
            let mut x = z0.x.clone();
            for k in 1..=steps {
                x = kernel.sample(&x, &mut rng);
                if target.hit(&Point::new(x.clone(), z0.t - k as f64 * h)) {
                    return 1;
                }
            }
            0
        })
        .sum();
    let p = hits as f64 / paths.max(1) as f64;
    Ok(HitEstimate {
        experiment: String::new(),
        p_hat: p,
        stderr: (p * (1.0 - p) / paths.max(1) as f64).sqrt(),
        paths,
        hits,
        h,
        steps,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityReport {
    pub t: f64,
    pub samples: usize,
    pub bins: usize,
    /// L¹ error of each coordinate's marginal histogram.
    pub l1_marginal: Vec<f64>,
    /// Same after whitening with the exact covariance, which also probes
    /// the correlations.
    pub l1_whitened: Vec<f64>,
    pub max_l1: f64,
    /// `‖Σ̂ − 2C(t)‖_F / ‖2C(t)‖_F`.
    pub cov_rel_err: f64,
}

/// L¹ distance between a histogram of `values` on `[−a, a]` (with `a` the
/// 99.9% two-sided quantile times `sd`) and exact `N(0, sd²)` bin masses.
fn marginal_l1(values: &[f64], sd: f64, bins: usize) -> f64 {
    let a = 3.2905267314918945 * sd;
    let width = 2.0 * a / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values {
        if v >= -a && v < a {
            counts[(((v + a) / width) as usize).min(bins - 1)] += 1;
        }
    }
    let n = values.len() as f64;
    counts
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let lo = (-a + i as f64 * width) / sd;
            let hi = (-a + (i + 1) as f64 * width) / sd;
            (c as f64 / n - interval_prob(lo, hi)).abs()
        })
        .sum()
}

/// Samples forward endpoints `X_t` from the origin and compares them with
/// `x ↦ Γ((x, t), 0)`.
pub fn density_validation(ctx: &Ctx, t: f64, bins: usize, samples: usize, seed: u64) -> Result<DensityReport, McError> {
    let kernel = StepKernel::new(ctx, t, Direction::Forward)?;
    let n = ctx.dim();
    let origin = vec![0.0; n];
    let chunk = 4096;
    let draws: Vec<Vec<f64>> = (0..samples.div_ceil(chunk))
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = path_rng(seed, c as u64);
            let count = chunk.min(samples - c * chunk);
            (0..count).map(|_| kernel.sample(&origin, &mut rng)).collect::<Vec<_>>()
        })
        .collect();
    let l_inv = kernel.cov.cholesky().and_then(|l| l.inverse()).expect("Kalman");
    let mut l1_marginal = Vec::with_capacity(n);
    let mut l1_whitened = Vec::with_capacity(n);
    for i in 0..n {
        let col: Vec<f64> = draws.iter().map(|x| x[i]).collect();
        l1_marginal.push(marginal_l1(&col, kernel.cov[(i, i)].sqrt(), bins));
        let white: Vec<f64> = draws.iter().map(|x| (0..n).map(|j| l_inv[(i, j)] * x[j]).sum()).collect();
        l1_whitened.push(marginal_l1(&white, 1.0, bins));
    }
    let emp = empirical_cov(&draws);
    let cov_rel_err = emp.sub(&kernel.cov).frobenius() / kernel.cov.frobenius();
    let max_l1 = l1_marginal.iter().chain(&l1_whitened).cloned().fold(0.0, f64::max);
    Ok(DensityReport { t, samples, bins, l1_marginal, l1_whitened, max_l1, cov_rel_err })
}

fn empirical_mean(draws: &[Vec<f64>]) -> Vec<f64> {
    let n = draws[0].len();
    let mut m = vec![0.0; n];
    for x in draws {
        for i in 0..n {
            m[i] += x[i];
        }
    }
    m.iter().map(|v| v / draws.len() as f64).collect()
}

fn empirical_cov(draws: &[Vec<f64>]) -> Matrix<f64> {
    let n = draws[0].len();
    let m = empirical_mean(draws);
    let mut c = Matrix::zeros(n, n);
    for x in draws {
        for i in 0..n {
            for j in 0..n {
                c[(i, j)] += (x[i] - m[i]) * (x[j] - m[j]);
            }
        }
    }
    c.scale(1.0 / (draws.len() as f64 - 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompositionReport {
    /// `‖E(−h)Σ(h)Eᵀ(−h) + Σ(h) − Σ(2h)‖_F / ‖Σ(2h)‖_F`.
    pub analytic_rel_err: f64,
    /// Largest `|mean̂ − E(−2h)x| / stderr` over coordinates.
    pub mean_z: f64,
    /// `‖Σ̂ − Σ(2h)‖_F / ‖Σ(2h)‖_F` for two-step samples.
    pub cov_rel_err: f64,
}

/// Two backward `h`-steps against one `2h`-step.
pub fn composition_check(
    ctx: &Ctx,
    x: &[f64],
    h: f64,
    samples: usize,
    seed: u64,
) -> Result<CompositionReport, McError> {
    let one = StepKernel::new(ctx, h, Direction::Backward)?;
    let two = StepKernel::new(ctx, 2.0 * h, Direction::Backward)?;
    let composed = one.map.matmul(&one.cov).matmul(&one.map.transpose()).add(&one.cov);
    let analytic_rel_err = composed.sub(&two.cov).frobenius() / two.cov.frobenius();
    let draws: Vec<Vec<f64>> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(seed, i as u64);
            let y = one.sample(x, &mut rng);
            one.sample(&y, &mut rng)
        })
        .collect();
    let mean = empirical_mean(&draws);
    let target = two.mean(x);
    let mean_z = (0..x.len())
        .map(|i| (mean[i] - target[i]).abs() / (two.cov[(i, i)] / samples as f64).sqrt())
        .fold(0.0, f64::max);
    let cov_rel_err = empirical_cov(&draws).sub(&two.cov).frobenius() / two.cov.frobenius();
    Ok(CompositionReport { analytic_rel_err, mean_z, cov_rel_err })
}

pub fn write_mc_csv<W: Write>(rows: &[HitEstimate], mut w: W) -> io::Result<()> {
    writeln!(w, "experiment,p_hat,stderr,paths,hits,h,steps")?;
    for r in rows {
        writeln!(
            w,
            "{},{:.16e},{:.16e},{},{},{:.16e},{}",
            r.experiment, r.p_hat, r.stderr, r.paths, r.hits, r.h, r.steps
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::{OperatorConfig, OperatorSpec};

    fn ctx(cfg: OperatorConfig) -> Ctx {
        KernelContext::from_spec(OperatorSpec::validate(&cfg).unwrap())
    }

    #[test]
    fn step_moments() {
        let heat = ctx(OperatorConfig::heat(1));
        let k = StepKernel::new(&heat, 1.0, Direction::Backward).unwrap();
        assert!((k.cov[(0, 0)] - 2.0).abs() < 1e-12);
        assert_eq!(k.mean(&[0.7]), vec![0.7]);
        let kol = ctx(OperatorConfig::kolmogorov());
        let k = StepKernel::new(&kol, 1.0, Direction::Backward).unwrap();
        let m = k.mean(&[1.0, 0.0]);
        assert!((m[0] - 1.0).abs() < 1e-14 && (m[1] - 1.0).abs() < 1e-14);
        assert!(matches!(StepKernel::new(&kol, 0.0, Direction::Backward), Err(McError::NonPositiveDuration(_))));
    }

    #[test]
    fn seeded_paths_repeat() {
        let kol = ctx(OperatorConfig::kolmogorov());
        let cfg = PathConfig { start: Point::origin(2), h: 0.1, num_steps: 5, seed: 9 };
        assert_eq!(sample_path(&kol, &cfg, 3).unwrap(), sample_path(&kol, &cfg, 3).unwrap());
        assert_ne!(sample_path(&kol, &cfg, 3).unwrap(), sample_path(&kol, &cfg, 4).unwrap());
    }

    #[test]
    fn trivial_targets() {
        let heat = ctx(OperatorConfig::heat(1));
        let z0 = Point::origin(1);
        let e = hitting_estimate(&heat, &EmptyTarget, &z0, 0.1, 10, 200, 1).unwrap();
        assert_eq!(e.p_hat, 0.0);
        let everything = DomainSpec::Everything;
        let t = DomainTarget { ctx: &heat, domain: &everything };
        assert_eq!(hitting_estimate(&heat, &t, &z0, 0.1, 10, 200, 1).unwrap().p_hat, 1.0);
    }

    #[test]
    fn composition_is_exact_in_law() {
        let kol = ctx(OperatorConfig::kolmogorov());
        let r = composition_check(&kol, &[0.5, -0.3], 0.3, 20_000, 5).unwrap();
        assert!(r.analytic_rel_err < 1e-12, "{r:?}");
        assert!(r.mean_z < 5.0 && r.cov_rel_err < 0.05, "{r:?}");
    }
}
