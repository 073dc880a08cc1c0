//! Block structure of the operator `div(A∇) + ⟨Bx,∇⟩ − ∂t`, the shear
//! `E(s) = exp(−sB)`, the Gramian `C(t)`, dilations, the group law and the
//! homogeneous norm.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{dot, Matrix};
use crate::point::SpaceTimePoint;
use crate::scalar::Scalar;

/// Relative positive-definiteness threshold: `λmin > PD_TOL · λmax`.
pub const PD_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OperatorError {
    #[error("invalid block signature: {0}")]
    InvalidSignature(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("A0 is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("A0 is not positive definite (eigenvalues in [{min:e}, {max:e}])")]
    NotPositiveDefinite { min: f64, max: f64 },
    #[error("block B{block} has rank {rank}, expected {expected}")]
    RankDeficient { block: usize, rank: usize, expected: usize },
    #[error("Kalman condition fails: C(1) eigenvalues in [{min:e}, {max:e}]")]
    KalmanFailure { min: f64, max: f64 },
    #[error("non-finite entry in operator data")]
    NonFinite,
    #[error("time must be positive, got {0}")]
    NonPositiveTime(f64),
    #[error("dilation factor must be positive, got {0}")]
    NonPositiveScale(f64),
    #[error("lambda must lie in (0, 1), got {0}")]
    LambdaOutOfRange(f64),
}

/// Block sizes `p0 ≥ p1 ≥ … ≥ pn ≥ 1`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSignature {
    p: Vec<usize>,
}

impl BlockSignature {
    pub fn new(p: Vec<usize>) -> Result<Self, OperatorError> {
        if p.is_empty() {
            return Err(OperatorError::InvalidSignature("empty signature".into()));
        }
        if p.contains(&0) {
            return Err(OperatorError::InvalidSignature(format!("zero block size in {p:?}")));
        }
        if p.windows(2).any(|w| w[1] > w[0]) {
            return Err(OperatorError::InvalidSignature(format!("block sizes must be non-increasing, got {p:?}")));
        }
        Ok(Self { p })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.p
    }

    /// Space dimension N.
    pub fn dim(&self) -> usize {
        self.p.iter().sum()
    }

    /// Number of off-diagonal blocks n (depth of the chain).
    pub fn depth(&self) -> usize {
        self.p.len() - 1
    }

    /// Homogeneous dimension `Q = Σ (2i+1) p_i`.
    pub fn hom_dim(&self) -> usize {
        self.p.iter().enumerate().map(|(i, &pi)| (2 * i + 1) * pi).sum()
    }

    /// Start offset of block `i`.
    pub fn offset(&self, i: usize) -> usize {
        self.p[..i].iter().sum()
    }

    /// Block index of every coordinate.
    pub fn block_of_coord(&self) -> Vec<usize> {
        self.p.iter().enumerate().flat_map(|(i, &pi)| std::iter::repeat_n(i, pi)).collect()
    }

    /// Dilation exponent `2i+1` of every coordinate.
    pub fn coord_exponents(&self) -> Vec<i32> {
        self.block_of_coord().into_iter().map(|i| 2 * i as i32 + 1).collect()
    }
}

/// Raw operator data as read from JSON.
///
/// `B[j-1]` is the block sitting below the diagonal in block row `j`, i.e. the
/// coefficient of `x^(j-1)` in the drift of `x^(j)`. Its natural shape is
/// `p_j × p_{j-1}`; the transposed shape is accepted when it is unambiguous.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatorConfig {
    pub p: Vec<usize>,
    #[serde(rename = "A0")]
    pub a0: Vec<Vec<f64>>,
    #[serde(rename = "B", default)]
    pub b: Vec<Vec<Vec<f64>>>,
}

impl OperatorConfig {
    /// Heat operator `Δ − ∂t` on `R^dim`.
    pub fn heat(dim: usize) -> Self {
        let a0 = (0..dim).map(|i| (0..dim).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
        Self { p: vec![dim], a0, b: vec![] }
    }

    /// Kolmogorov operator `∂²_{x1} + x1 ∂_{x2} − ∂t` on `R^2`.
    pub fn kolmogorov() -> Self {
        Self { p: vec![1, 1], a0: vec![vec![1.0]], b: vec![vec![vec![1.0]]] }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OperatorSpec<T> {
    sig: BlockSignature,
    a0: Matrix<T>,
    b_blocks: Vec<Matrix<T>>,
    a: Matrix<T>,
    b: Matrix<T>,
    q: usize,
    exps: Vec<i32>,
    c1: Matrix<T>,
    c1_inv: Matrix<T>,
    log_det_c1: T,
    log_cn: T,
    c_n: T,
    sigma: T,
    sigma_c: T,
}

fn to_matrix(rows: &[Vec<f64>], what: &str) -> Result<Matrix<f64>, OperatorError> {
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(OperatorError::NonFinite);
    }
    Matrix::from_rows(rows).ok_or_else(|| OperatorError::ShapeMismatch(format!("{what} has ragged rows")))
}

impl<T: Scalar> OperatorSpec<T> {
    /// Validates raw data and fills in all derived constants.
    pub fn validate(cfg: &OperatorConfig) -> Result<Self, OperatorError> {
        let sig = BlockSignature::new(cfg.p.clone())?;
        let a0 = to_matrix(&cfg.a0, "A0")?;
        let p = sig.sizes();
        if a0.rows() != p[0] || a0.cols() != p[0] {
            return Err(OperatorError::ShapeMismatch(format!(
                "A0 is {}x{}, expected {}x{}",
                a0.rows(),
                a0.cols(),
                p[0],
                p[0]
            )));
        }
        if cfg.b.len() != sig.depth() {
            return Err(OperatorError::ShapeMismatch(format!(
                "expected {} B blocks, got {}",
                sig.depth(),
                cfg.b.len()
            )));
        }
        let mut blocks = Vec::with_capacity(cfg.b.len());
        for (j0, raw) in cfg.b.iter().enumerate() {
            let j = j0 + 1;
            let m = to_matrix(raw, &format!("B{j}"))?;
            let (rows, cols) = (p[j], p[j - 1]);
            let m = if m.rows() == rows && m.cols() == cols {
                m
            } else if m.rows() == cols && m.cols() == rows {
                m.transpose()
            } else {
                return Err(OperatorError::ShapeMismatch(format!(
                    "B{j} is {}x{}, expected {rows}x{cols}",
                    m.rows(),
                    m.cols()
                )));
            };
            blocks.push(m.cast());
        }
        Self::from_parts(sig, a0.cast(), blocks)
    }

    /// Builds from typed blocks; `blocks[j-1]` has shape `p_j × p_{j-1}`.
    pub fn from_parts(sig: BlockSignature, a0: Matrix<T>, blocks: Vec<Matrix<T>>) -> Result<Self, OperatorError> {
        let p = sig.sizes().to_vec();
        let n_dim = sig.dim();
        let tol = T::lit(PD_TOL);

        let asym = (0..p[0])
            .flat_map(|i| (0..i).map(move |j| (i, j)))
            .map(|(i, j)| (a0[(i, j)] - a0[(j, i)]).abs())
            .fold(T::zero(), T::max);
        if asym > T::lit(1e-12) * a0.max_abs().max(T::one()) {
            return Err(OperatorError::NotSymmetric(asym.to_f64_lossy()));
        }
        let a0 = a0.symmetrized();
        let (lo, hi) = a0.eig_min_max();
        if !(hi > T::zero() && lo > tol * hi) {
            return Err(OperatorError::NotPositiveDefinite { min: lo.to_f64_lossy(), max: hi.to_f64_lossy() });
        }

        for (j0, blk) in blocks.iter().enumerate() {
            let j = j0 + 1;
            if blk.rows() != p[j] || blk.cols() != p[j - 1] {
                return Err(OperatorError::ShapeMismatch(format!("B{j} has wrong shape")));
            }
            // Full row rank p_j: singular values of Bᵀ (p_{j-1} x p_j).
            let sv = blk.transpose().singular_values();
            let smax = sv.last().copied().unwrap_or_else(T::zero);
            let rank = sv.iter().filter(|&&s| smax > T::zero() && s > smax * T::lit(1e-10)).count();
            if rank < p[j] {
                return Err(OperatorError::RankDeficient { block: j, rank, expected: p[j] });
            }
        }

        let mut a = Matrix::zeros(n_dim, n_dim);
        for i in 0..p[0] {
            for j in 0..p[0] {
                a[(i, j)] = a0[(i, j)];
            }
        }
        let mut b = Matrix::zeros(n_dim, n_dim);
        for (j0, blk) in blocks.iter().enumerate() {
            let j = j0 + 1;
            let (r0, c0) = (sig.offset(j), sig.offset(j - 1));
            for r in 0..blk.rows() {
                for c in 0..blk.cols() {
                    b[(r0 + r, c0 + c)] = blk[(r, c)];
                }
            }
        }

        let q = sig.hom_dim();
        let exps = sig.coord_exponents();
        let mut spec = Self {
            sig,
            a0,
            b_blocks: blocks,
            a,
            b,
            q,
            exps,
            c1: Matrix::zeros(n_dim, n_dim),
            c1_inv: Matrix::zeros(n_dim, n_dim),
            log_det_c1: T::zero(),
            log_cn: T::zero(),
            c_n: T::zero(),
            sigma: T::one(),
            sigma_c: T::zero(),
        };
        debug_assert!(spec.nilpotency_defect() == T::zero());

        let c1 = spec.gramian_quadrature(T::one());
        let (lo, hi) = c1.eig_min_max();
        if !(hi > T::zero() && lo > tol * hi) {
            return Err(OperatorError::KalmanFailure { min: lo.to_f64_lossy(), max: hi.to_f64_lossy() });
        }
        let c1_inv =
            c1.inverse_spd().ok_or(OperatorError::KalmanFailure { min: lo.to_f64_lossy(), max: hi.to_f64_lossy() })?;
        let log_det =
            c1.log_det_spd().ok_or(OperatorError::KalmanFailure { min: lo.to_f64_lossy(), max: hi.to_f64_lossy() })?;
        let four_pi = T::lit(4.0) * T::PI();
        spec.log_cn = -T::lit(0.5) * T::from_usize_lossy(n_dim) * four_pi.ln() - T::lit(0.5) * log_det;
        spec.c_n = spec.log_cn.exp();
        spec.log_det_c1 = log_det;
        spec.c1 = c1;
        spec.c1_inv = c1_inv;
        spec.sigma = T::lit(compute_sigma_for(&spec.sig));
        let e1 = spec.mat_exp_e(T::one());
        let m = e1.transpose().matmul(&spec.c1_inv).matmul(&e1);
        spec.sigma_c = T::lit(0.5) * m.eig_min_max().0.max(T::zero()).sqrt();
        Ok(spec)
    }

    pub fn signature(&self) -> &BlockSignature {
        &self.sig
    }

    /// Space dimension N.
    pub fn dim(&self) -> usize {
        self.sig.dim()
    }

    /// Chain depth n.
    pub fn depth(&self) -> usize {
        self.sig.depth()
    }

    /// Homogeneous dimension Q of `R^N` under `D_r`.
    pub fn hom_dim(&self) -> usize {
        self.q
    }

    pub fn q(&self) -> T {
        T::from_usize_lossy(self.q)
    }

    pub fn coord_exponents(&self) -> &[i32] {
        &self.exps
    }

    pub fn a0(&self) -> &Matrix<T> {
        &self.a0
    }

    pub fn b_blocks(&self) -> &[Matrix<T>] {
        &self.b_blocks
    }

    pub fn a(&self) -> &Matrix<T> {
        &self.a
    }

    pub fn b(&self) -> &Matrix<T> {
        &self.b
    }

    pub fn c1(&self) -> &Matrix<T> {
        &self.c1
    }

    pub fn c1_inv(&self) -> &Matrix<T> {
        &self.c1_inv
    }

    pub fn log_det_c1(&self) -> T {
        self.log_det_c1
    }

    /// `c_N = (4π)^{-N/2} / √det C(1)`.
    pub fn c_n(&self) -> T {
        self.c_n
    }

    pub fn log_c_n(&self) -> T {
        self.log_cn
    }

    /// `σ = min_{|x|=1} ‖x‖`.
    pub fn sigma(&self) -> T {
        self.sigma
    }

    /// `σ_C = ½ √λmin(Eᵀ(1) C⁻¹(1) E(1))`.
    pub fn sigma_c(&self) -> T {
        self.sigma_c
    }

    /// Largest entry of `B^{n+1}`; zero for every valid block pattern.
    pub fn nilpotency_defect(&self) -> T {
        let mut p = Matrix::identity(self.dim());
        for _ in 0..=self.depth() {
            p = p.matmul(&self.b);
        }
        p.max_abs()
    }

    /// `E(s) = exp(−sB) = Σ_{k≤n} (−sB)^k / k!`.
    pub fn mat_exp_e(&self, s: T) -> Matrix<T> {
        let n = self.dim();
        let mut out = Matrix::identity(n);
        let mut term = Matrix::identity(n);
        let msb = self.b.scale(-s);
        for k in 1..=self.depth() {
            term = term.matmul(&msb).scale(T::one() / T::from_usize_lossy(k));
            out = out.add(&term);
        }
        out
    }

    /// `E(s) x` without forming the matrix.
    pub fn apply_e(&self, s: T, x: &[T]) -> Vec<T> {
        let mut out = x.to_vec();
        let mut term = x.to_vec();
        for k in 1..=self.depth() {
            let bt = self.b.mat_vec(&term);
            let f = -s / T::from_usize_lossy(k);
            term = bt.into_iter().map(|v| v * f).collect();
            for (o, t) in out.iter_mut().zip(&term) {
                *o += *t;
            }
        }
        out
    }

    /// `C(t) = D_{√t} C(1) D_{√t}`.
    pub fn gramian_c(&self, t: T) -> Result<Matrix<T>, OperatorError> {
        if !(t > T::zero()) {
            return Err(OperatorError::NonPositiveTime(t.to_f64_lossy()));
        }
        Ok(self.c1.sandwich_diag(&self.dilation_factors(t.sqrt())))
    }

    /// `∫₀ᵗ E(s) A Eᵀ(s) ds` by Gauss–Legendre with enough nodes to be exact
    /// for the degree-2n polynomial integrand.
    pub fn gramian_quadrature(&self, t: T) -> Matrix<T> {
        let nodes = (2 * self.depth() + 2).div_ceil(2) + 1;
        let (xs, ws) = gauss_legendre::<T>(nodes);
        let n = self.dim();
        let half = t * T::lit(0.5);
        let mut acc = Matrix::zeros(n, n);
        for (&x, &w) in xs.iter().zip(&ws) {
            let s = half * (x + T::one());
            let e = self.mat_exp_e(s);
            let term = e.matmul(&self.a).matmul(&e.transpose());
            acc = acc.add(&term.scale(w * half));
        }
        acc.symmetrized()
    }

    /// Per-coordinate factors of `D_r`.
    pub fn dilation_factors(&self, r: T) -> Vec<T> {
        self.exps.iter().map(|&e| r.powi(e)).collect()
    }

    pub fn dilate_space(&self, r: T, x: &[T]) -> Result<Vec<T>, OperatorError> {
        if !(r > T::zero()) {
            return Err(OperatorError::NonPositiveScale(r.to_f64_lossy()));
        }
        Ok(x.iter().zip(self.dilation_factors(r)).map(|(&v, f)| v * f).collect())
    }

    /// `δ_r(x, t) = (D_r x, r² t)`.
    pub fn dilate(&self, r: T, z: &SpaceTimePoint<T>) -> Result<SpaceTimePoint<T>, OperatorError> {
        let x = self.dilate_space(r, &z.x)?;
        Ok(SpaceTimePoint::new(x, r * r * z.t))
    }

    /// `(x,t)∘(ξ,s) = (ξ + E(s)x, t + s)`.
    pub fn compose(&self, z: &SpaceTimePoint<T>, zeta: &SpaceTimePoint<T>) -> SpaceTimePoint<T> {
        let ex = self.apply_e(zeta.t, &z.x);
        SpaceTimePoint::new(zeta.x.iter().zip(ex).map(|(&a, b)| a + b).collect(), z.t + zeta.t)
    }

    /// `z⁻¹ = (−E(−t)x, −t)`.
    pub fn inverse(&self, z: &SpaceTimePoint<T>) -> SpaceTimePoint<T> {
        let ex = self.apply_e(-z.t, &z.x);
        SpaceTimePoint::new(ex.into_iter().map(|v| -v).collect(), -z.t)
    }

    /// `ζ⁻¹∘z = (x − E(t−τ)ξ, t−τ)`, computed directly.
    pub fn relative(&self, z: &SpaceTimePoint<T>, zeta: &SpaceTimePoint<T>) -> SpaceTimePoint<T> {
        let dt = z.t - zeta.t;
        let e = self.apply_e(dt, &zeta.x);
        SpaceTimePoint::new(z.x.iter().zip(e).map(|(&a, b)| a - b).collect(), dt)
    }

    /// `‖x‖ = Σ_i |x^(i)|^{1/(2i+1)}`.
    pub fn hom_norm(&self, x: &[T]) -> T {
        hom_norm_sig(&self.sig, x)
    }

    /// Membership in `𝒞_r(z₀) = z₀∘δ_r({‖x‖≤1}×{|t|≤1})`.
    pub fn cylinder_contains(&self, z0: &SpaceTimePoint<T>, r: T, z: &SpaceTimePoint<T>) -> bool {
        if !(r > T::zero()) {
            return false;
        }
        let w = self.compose(&self.inverse(z0), z);
        let inv = T::one() / r;
        let x = self.dilate_space(inv, &w.x).expect("positive scale");
        (w.t * inv * inv).abs() <= T::one() && self.hom_norm(&x) <= T::one()
    }

    /// `(m, q0)` with `q0 = 4 + m / ln(1/λ)`.
    pub fn q0(&self, lambda: T) -> Result<(T, T), OperatorError> {
        if !(lambda > T::zero() && lambda < T::one()) {
            return Err(OperatorError::LambdaOutOfRange(lambda.to_f64_lossy()));
        }
        let m = q0_m(self.q(), self.sigma_c, T::from_usize_lossy(self.depth()), self.sigma);
        Ok((m, T::lit(4.0) + m / (T::one() / lambda).ln()))
    }

    /// Same operator in another precision (derived constants recomputed).
    pub fn cast<U: Scalar>(&self) -> OperatorSpec<U> {
        OperatorSpec::from_parts(self.sig.clone(), self.a0.cast(), self.b_blocks.iter().map(|b| b.cast()).collect())
            .expect("valid spec stays valid after a cast")
    }

    /// Raw data for serialization.
    pub fn to_config(&self) -> OperatorConfig {
        let f = |m: &Matrix<T>| -> Vec<Vec<f64>> {
            m.to_rows().into_iter().map(|r| r.into_iter().map(|v| v.to_f64_lossy()).collect()).collect()
        };
        OperatorConfig { p: self.sig.sizes().to_vec(), a0: f(&self.a0), b: self.b_blocks.iter().map(f).collect() }
    }
}

/// The five-term maximum `m` entering `q0`.
pub fn q0_m<T: Scalar>(q: T, sigma_c: T, n: T, sigma: T) -> T {
    let (l6, l8, l2) = (T::lit(6.0).ln(), T::lit(8.0).ln(), T::lit(2.0).ln());
    let terms = [
        T::lit(2.0),
        q / l6,
        T::lit(2.0) * sigma_c * sigma_c / l6,
        q * l2 / l8,
        T::lit(2.0) * q * ((n + T::one()) / sigma).ln() / l8,
    ];
    terms.into_iter().fold(T::neg_infinity(), T::max)
}

/// `α(k) = k ln k`.
pub fn alpha<T: Scalar>(k: T) -> T {
    if k == T::zero() {
        T::zero()
    } else {
        k * k.ln()
    }
}

pub fn hom_norm_sig<T: Scalar>(sig: &BlockSignature, x: &[T]) -> T {
    let mut total = T::zero();
    let mut off = 0;
    for (i, &pi) in sig.sizes().iter().enumerate() {
        let blk = &x[off..off + pi];
        let e = dot(blk, blk).sqrt();
        total += e.powf(T::one() / T::from_usize_lossy(2 * i + 1));
        off += pi;
    }
    total
}

/// Gauss–Legendre nodes and weights on [-1, 1] by Newton iteration on `P_n`.
pub fn gauss_legendre<T: Scalar>(n: usize) -> (Vec<T>, Vec<T>) {
    let mut xs = vec![T::zero(); n];
    let mut ws = vec![T::zero(); n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0f64, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = nf * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        xs[i] = T::lit(-x);
        xs[n - 1 - i] = T::lit(x);
        ws[i] = T::lit(w);
        ws[n - 1 - i] = T::lit(w);
    }
    (xs, ws)
}

/// Minimizes `‖x‖` over the Euclidean unit sphere: quasi-random sphere
/// samples plus the coordinate axes, then derivative-free coordinate descent
/// around the best candidate.
pub fn compute_sigma_for(sig: &BlockSignature) -> f64 {
    const SAMPLES: usize = 100_000;
    let n = sig.dim();
    let norm = |x: &[f64]| hom_norm_sig(sig, x);
    let mut best = vec![0.0; n];
    best[0] = 1.0;
    let mut best_val = norm(&best);
    for j in 1..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        let v = norm(&e);
        if v < best_val {
            best_val = v;
            best = e;
        }
    }
    // R_d low-discrepancy sequence in an even number of dimensions, mapped to
    // Gaussian pairs by Box–Muller and projected to the sphere.
    let d = n + n % 2;
    let phi = {
        let mut g = 2.0f64;
        for _ in 0..60 {
            g = (1.0 + g).powf(1.0 / (d as f64 + 1.0));
        }
        g
    };
    let alphas: Vec<f64> = (1..=d).map(|j| (1.0 / phi.powi(j as i32)).fract()).collect();
    let mut x = vec![0.0; d];
    for s in 1..=SAMPLES {
        let u: Vec<f64> = alphas.iter().map(|a| (0.5 + a * s as f64).fract()).collect();
        for k in 0..d / 2 {
            let r = (-2.0 * (1.0 - u[2 * k]).ln()).sqrt();
            let th = std::f64::consts::TAU * u[2 * k + 1];
            x[2 * k] = r * th.cos();
            x[2 * k + 1] = r * th.sin();
        }
        let len = x[..n].iter().map(|v| v * v).sum::<f64>().sqrt();
        if len == 0.0 {
            continue;
        }
        let y: Vec<f64> = x[..n].iter().map(|v| v / len).collect();
        let v = norm(&y);
        if v < best_val {
            best_val = v;
            best = y;
        }
    }
    let mut step = 0.05;
    for _ in 0..50 {
        let mut improved = false;
        for i in 0..n {
            for sgn in [-1.0, 1.0] {
                let mut y = best.clone();
                y[i] += sgn * step;
                let len = y.iter().map(|v| v * v).sum::<f64>().sqrt();
                y.iter_mut().for_each(|v| *v /= len);
                let v = norm(&y);
                if v < best_val {
                    best_val = v;
                    best = y;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
            if step < 1e-6 {
                break;
            }
        }
    }
    best_val
}

#[cfg(test)]
mod tests {
    use super::*;

    type Spec = OperatorSpec<f64>;

    fn kolmo() -> Spec {
        Spec::validate(&OperatorConfig::kolmogorov()).unwrap()
    }

    #[test]
    fn heat_constants() {
        let cfg = OperatorConfig { p: vec![1], a0: vec![vec![2.0]], b: vec![] };
        let s = Spec::validate(&cfg).unwrap();
        assert_eq!(s.hom_dim(), 1);
        assert!((s.c1()[(0, 0)] - 2.0).abs() < 1e-14);
        assert!((s.gramian_c(3.0).unwrap()[(0, 0)] - 6.0).abs() < 1e-13);
        assert_eq!(s.mat_exp_e(7.3), Matrix::identity(1));
    }

    #[test]
    fn kolmogorov_gramian_closed_form() {
        let s = kolmo();
        assert_eq!(s.hom_dim(), 4);
        let c1 = s.c1();
        assert!((c1[(0, 0)] - 1.0).abs() < 1e-14);
        assert!((c1[(0, 1)] + 0.5).abs() < 1e-14);
        assert!((c1[(1, 1)] - 1.0 / 3.0).abs() < 1e-14);
        let c2 = s.gramian_c(2.0).unwrap();
        let want = [[2.0, -2.0], [-2.0, 8.0 / 3.0]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((c2[(i, j)] - want[i][j]).abs() < 1e-13);
            }
        }
        let e = s.mat_exp_e(1.0);
        assert_eq!(e.to_rows(), vec![vec![1.0, 0.0], vec![-1.0, 1.0]]);
    }

    #[test]
    fn rank_deficient_block_is_rejected() {
        let cfg = OperatorConfig { p: vec![1, 1], a0: vec![vec![1.0]], b: vec![vec![vec![0.0]]] };
        assert!(matches!(Spec::validate(&cfg), Err(OperatorError::RankDeficient { block: 1, .. })));
    }

    #[test]
    fn other_rejections() {
        let bad_sym = OperatorConfig { p: vec![2], a0: vec![vec![1.0, 0.5], vec![0.0, 1.0]], b: vec![] };
        assert!(matches!(Spec::validate(&bad_sym), Err(OperatorError::NotSymmetric(_))));
        let not_pd = OperatorConfig { p: vec![1], a0: vec![vec![-1.0]], b: vec![] };
        assert!(matches!(Spec::validate(&not_pd), Err(OperatorError::NotPositiveDefinite { .. })));
        let shape = OperatorConfig { p: vec![1, 1], a0: vec![vec![1.0]], b: vec![] };
        assert!(matches!(Spec::validate(&shape), Err(OperatorError::ShapeMismatch(_))));
        let sig = OperatorConfig { p: vec![1, 2], a0: vec![vec![1.0]], b: vec![vec![vec![1.0, 1.0]]] };
        assert!(matches!(Spec::validate(&sig), Err(OperatorError::InvalidSignature(_))));
        let tiny = OperatorConfig { p: vec![1, 1], a0: vec![vec![1.0]], b: vec![vec![vec![1e-8]]] };
        assert!(matches!(Spec::validate(&tiny), Err(OperatorError::KalmanFailure { .. })));
    }

    #[test]
    fn transposed_block_shape_is_accepted() {
        let natural =
            OperatorConfig { p: vec![2, 1], a0: vec![vec![1.0, 0.0], vec![0.0, 1.0]], b: vec![vec![vec![1.0, 2.0]]] };
        let transposed = OperatorConfig { b: vec![vec![vec![1.0], vec![2.0]]], ..natural.clone() };
        let a = Spec::validate(&natural).unwrap();
        let b = Spec::validate(&transposed).unwrap();
        assert_eq!(a.b(), b.b());
        assert_eq!(a.b()[(2, 0)], 1.0);
        assert_eq!(a.b()[(2, 1)], 2.0);
    }

    #[test]
    fn dilation_group_and_norm_examples() {
        let s = kolmo();
        let z = SpaceTimePoint::new(vec![1.0, 1.0], 1.0);
        let d = s.dilate(2.0, &z).unwrap();
        assert_eq!((d.x.clone(), d.t), (vec![2.0, 8.0], 4.0));
        let back = s.dilate(0.5, &d).unwrap();
        assert_eq!(back, z);
        assert!(s.dilate(0.0, &z).is_err());

        let c = s.compose(&SpaceTimePoint::new(vec![1.0, 0.0], 0.0), &SpaceTimePoint::new(vec![0.0, 0.0], 1.0));
        assert_eq!((c.x, c.t), (vec![1.0, -1.0], 1.0));

        assert!((s.hom_norm(&[3.0, 8.0]) - 5.0).abs() < 1e-14);
        assert!((s.hom_norm(&[6.0, 64.0]) - 10.0).abs() < 1e-14);
        assert_eq!(s.hom_norm(&[0.0, 0.0]), 0.0);
    }

    #[test]
    fn sigma_and_sigma_c() {
        let s = kolmo();
        assert!((s.sigma() - 1.0).abs() < 1e-12);
        let h = Spec::validate(&OperatorConfig::heat(1)).unwrap();
        assert_eq!(h.sigma(), 1.0);
        assert!((h.sigma_c() - 0.5).abs() < 1e-14);
    }

    #[test]
    fn q0_formula() {
        let h = Spec::validate(&OperatorConfig::heat(1)).unwrap();
        let (m, q0) = h.q0((-1.0f64).exp()).unwrap();
        assert!((q0 - 4.0 - m).abs() < 1e-12);
        assert!(h.q0(1.0).is_err());
        assert!(h.q0(0.0).is_err());
        let (_, near_one) = h.q0(1.0 - 1e-9).unwrap();
        assert!(near_one > 1e8);
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre::<f64>(5);
        let int: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(8)).sum();
        assert!((int - 2.0 / 9.0).abs() < 1e-14);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn single_precision_spec() {
        let s = OperatorSpec::<f32>::validate(&OperatorConfig::kolmogorov()).unwrap();
        assert!((s.c_n() - 0.275_664).abs() < 1e-5);
    }
}
