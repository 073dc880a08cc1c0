//! Closed-form fundamental solution Γ and the quantities built on it.

use std::sync::Arc;

use thiserror::Error;

use crate::linalg::Matrix;
use crate::operator::OperatorSpec;
use crate::point::SpaceTimePoint;
use crate::scalar::Scalar;

/// Below this log value Γ is reported as exactly zero.
pub const LOG_UNDERFLOW: f64 = -745.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("time ordering violated: {0}")]
    TimeSignViolation(String),
    #[error("level must be positive, got {0}")]
    NonPositiveLevel(f64),
}

/// Mean and covariance of a Gaussian law on `R^N`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianLaw<T> {
    pub mean: Vec<T>,
    pub cov: Matrix<T>,
}

#[derive(Clone, Debug)]
pub struct KernelContext<T> {
    spec: Arc<OperatorSpec<T>>,
    /// `E(−1) C(1) Eᵀ(−1)`; the backward transition covariance over time `h`
    /// is `2 D_{√h} S̄ D_{√h}`.
    sbar: Matrix<T>,
}

impl<T: Scalar> KernelContext<T> {
    pub fn new(spec: Arc<OperatorSpec<T>>) -> Self {
        let em = spec.mat_exp_e(-T::one());
        let sbar = em.matmul(spec.c1()).matmul(&em.transpose()).symmetrized();
        Self { spec, sbar }
    }

    pub fn from_spec(spec: OperatorSpec<T>) -> Self {
        Self::new(Arc::new(spec))
    }

    pub fn spec(&self) -> &OperatorSpec<T> {
        &self.spec
    }

    pub fn spec_arc(&self) -> Arc<OperatorSpec<T>> {
        Arc::clone(&self.spec)
    }

    pub fn dim(&self) -> usize {
        self.spec.dim()
    }

    pub fn c_n(&self) -> T {
        self.spec.c_n()
    }

    pub fn log_c_n(&self) -> T {
        self.spec.log_c_n()
    }

    /// `|x|_C² = ¼⟨C⁻¹(1)x, x⟩`.
    pub fn quad_form_c(&self, x: &[T]) -> T {
        T::lit(0.25) * self.spec.c1_inv().quad_form(x)
    }

    /// `log Γ(x, t)`; `−∞` for `t ≤ 0`.
    pub fn log_gamma_origin(&self, z: &SpaceTimePoint<T>) -> T {
        if !(z.t > T::zero()) {
            return T::neg_infinity();
        }
        let y = self.spec.dilate_space(T::one() / z.t.sqrt(), &z.x).expect("positive scale");
        self.spec.log_c_n() - T::lit(0.5) * self.spec.q() * z.t.ln() - self.quad_form_c(&y)
    }

    pub fn gamma_origin(&self, z: &SpaceTimePoint<T>) -> T {
        exp_or_zero(self.log_gamma_origin(z))
    }

    /// `log Γ(z, ζ) = log Γ(ζ⁻¹∘z)`.
    pub fn log_gamma(&self, z: &SpaceTimePoint<T>, zeta: &SpaceTimePoint<T>) -> T {
        if !(z.t > zeta.t) {
            return T::neg_infinity();
        }
        self.log_gamma_origin(&self.spec.relative(z, zeta))
    }

    pub fn gamma(&self, z: &SpaceTimePoint<T>, zeta: &SpaceTimePoint<T>) -> T {
        exp_or_zero(self.log_gamma(z, zeta))
    }

    /// `M(z) = |D_{1/√−t} x|`, defined for `t < 0`.
    pub fn m_quantity(&self, z: &SpaceTimePoint<T>) -> Result<T, KernelError> {
        if !(z.t < T::zero()) {
            return Err(KernelError::TimeSignViolation(format!("M(z) needs t < 0, got t = {}", z.t)));
        }
        let y = self.spec.dilate_space(T::one() / (-z.t).sqrt(), &z.x).expect("positive scale");
        Ok(crate::linalg::norm2(&y))
    }

    /// `μ = t/τ` for `0 > t > τ`.
    pub fn mu_ratio(&self, z: &SpaceTimePoint<T>, zeta: &SpaceTimePoint<T>) -> Result<T, KernelError> {
        mu_ratio(z.t, zeta.t)
    }

    /// Time depth `(c_N/level)^{2/Q}` of `{Γ(z₀,·) ≥ level}`.
    pub fn superlevel_depth(&self, level: T) -> Result<T, KernelError> {
        if !(level > T::zero()) {
            return Err(KernelError::NonPositiveLevel(level.to_f64_lossy()));
        }
        Ok(self.log_superlevel_depth(level.ln()).exp())
    }

    /// Log of the superlevel depth, taking `log level`.
    pub fn log_superlevel_depth(&self, log_level: T) -> T {
        T::lit(2.0) / self.spec.q() * (self.spec.log_c_n() - log_level)
    }

    /// `Γ(z₀, z) ≥ level`, compared in log space.
    pub fn superlevel_contains(&self, z0: &SpaceTimePoint<T>, log_level: T, z: &SpaceTimePoint<T>) -> bool {
        self.log_gamma(z0, z) >= log_level
    }

    /// `S̄ = E(−1)C(1)Eᵀ(−1)`.
    pub fn sbar(&self) -> &Matrix<T> {
        &self.sbar
    }

    /// `2E(−h)C(h)Eᵀ(−h)`: covariance of `ξ ↦ Γ((x, t), (ξ, t − h))`.
    pub fn backward_cov(&self, h: T) -> Matrix<T> {
        let d = self.spec.dilation_factors(h.sqrt());
        self.sbar.sandwich_diag(&d).scale(T::lit(2.0))
    }

    /// `2C(h)`: covariance of `x ↦ Γ((x, τ + h), (ξ, τ))`.
    pub fn forward_cov(&self, h: T) -> Matrix<T> {
        let d = self.spec.dilation_factors(h.sqrt());
        self.spec.c1().sandwich_diag(&d).scale(T::lit(2.0))
    }

    /// Law of `ξ` under the density `ξ ↦ Γ(z, (ξ, τ))`, `τ < t`. It has unit
    /// mass since `det E = 1`.
    pub fn backward_law(&self, z: &SpaceTimePoint<T>, tau: T) -> Result<GaussianLaw<T>, KernelError> {
        let h = z.t - tau;
        if !(h > T::zero()) {
            return Err(KernelError::TimeSignViolation(format!("need τ < t, got τ = {tau}, t = {}", z.t)));
        }
        Ok(GaussianLaw { mean: self.spec.apply_e(-h, &z.x), cov: self.backward_cov(h) })
    }

    /// Law of `x` under the density `x ↦ Γ((x, t), ζ)`, `t > τ`.
    pub fn forward_law(&self, zeta: &SpaceTimePoint<T>, t: T) -> Result<GaussianLaw<T>, KernelError> {
        let h = t - zeta.t;
        if !(h > T::zero()) {
            return Err(KernelError::TimeSignViolation(format!("need t > τ, got t = {t}, τ = {}", zeta.t)));
        }
        Ok(GaussianLaw { mean: self.spec.apply_e(h, &zeta.x), cov: self.forward_cov(h) })
    }
}

pub fn mu_ratio<T: Scalar>(t: T, tau: T) -> Result<T, KernelError> {
    if !(T::zero() > t && t > tau) {
        return Err(KernelError::TimeSignViolation(format!("μ needs 0 > t > τ, got t = {t}, τ = {tau}")));
    }
    Ok(t / tau)
}

#[inline]
pub fn exp_or_zero<T: Scalar>(log_v: T) -> T {
    if log_v < T::lit(LOG_UNDERFLOW) {
        T::zero()
    } else {
        log_v.exp()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::OperatorConfig;

    fn ctx(cfg: OperatorConfig) -> KernelContext<f64> {
        KernelContext::from_spec(OperatorSpec::validate(&cfg).unwrap())
    }

    fn pt(x: &[f64], t: f64) -> SpaceTimePoint<f64> {
        SpaceTimePoint::new(x.to_vec(), t)
    }

    #[test]
    fn kolmogorov_value_at_unit_time() {
        let k = ctx(OperatorConfig::kolmogorov());
        let want = 3f64.sqrt() / (2.0 * std::f64::consts::PI);
        assert!((k.gamma_origin(&pt(&[0.0, 0.0], 1.0)) - want).abs() < 1e-14);
        assert!((k.gamma(&pt(&[0.0, 0.0], 1.0), &pt(&[0.0, 0.0], 0.0)) - want).abs() < 1e-14);
        assert!((k.c_n() - want).abs() < 1e-15);
    }

    #[test]
    fn heat_is_gauss_weierstrass() {
        let k = ctx(OperatorConfig::heat(1));
        for t in [0.01, 0.5, 3.0] {
            let want = (4.0 * std::f64::consts::PI * t).powf(-0.5);
            assert!((k.gamma_origin(&pt(&[0.0], t)) / want - 1.0).abs() < 1e-14);
        }
        assert_eq!(k.gamma_origin(&pt(&[0.3], -1.0)), 0.0);
        assert_eq!(k.gamma(&pt(&[0.3], 2.0), &pt(&[0.1], 2.0)), 0.0);
    }

    #[test]
    fn underflow_returns_zero() {
        let k = ctx(OperatorConfig::heat(1));
        assert_eq!(k.gamma_origin(&pt(&[100.0], 1e-3)), 0.0);
        assert!(k.log_gamma_origin(&pt(&[100.0], 1e-3)).is_finite());
    }

    #[test]
    fn quadratic_form_examples() {
        let k = ctx(OperatorConfig::kolmogorov());
        assert!((k.quad_form_c(&[1.0, 0.0]) - 1.0).abs() < 1e-13);
        assert!((k.quad_form_c(&[0.0, 1.0]) - 3.0).abs() < 1e-12);
        assert_eq!(k.quad_form_c(&[0.0, 0.0]), 0.0);
    }

    #[test]
    fn m_and_mu() {
        let k = ctx(OperatorConfig::kolmogorov());
        assert!((k.m_quantity(&pt(&[2.0, 8.0], -4.0)).unwrap() - 2f64.sqrt()).abs() < 1e-14);
        assert_eq!(k.m_quantity(&pt(&[0.0, 0.0], -3.0)).unwrap(), 0.0);
        assert!(k.m_quantity(&pt(&[0.0, 0.0], 0.0)).is_err());
        assert_eq!(mu_ratio(-1.0, -2.0).unwrap(), 0.5);
        assert!(mu_ratio(-2.0, -1.0).is_err());
    }

    #[test]
    fn superlevel_depths() {
        let k = ctx(OperatorConfig::kolmogorov());
        assert!((k.superlevel_depth(k.c_n()).unwrap() - 1.0).abs() < 1e-14);
        let lam: f64 = 0.5;
        let level = k.c_n() * lam.powf(4.0 * 4f64.ln());
        let want = 4f64.powf(4f64.ln());
        assert!((k.superlevel_depth(level).unwrap() / want - 1.0).abs() < 1e-12);
        assert!((want - 6.833_329_631).abs() < 1e-8);
        assert!(k.superlevel_depth(0.0).is_err());
        let h = ctx(OperatorConfig::heat(1));
        assert!(h.superlevel_depth(1e12).unwrap() < 1e-20);
    }

    #[test]
    fn transition_laws() {
        let k = ctx(OperatorConfig::kolmogorov());
        let law = k.backward_law(&pt(&[1.0, 0.0], 1.0), 0.0).unwrap();
        assert_eq!(law.mean, vec![1.0, 1.0]);
        // 2 E(-1) C(1) E(-1)^T = 2 [[1, 1/2], [1/2, 1/3]]
        let c = &law.cov;
        assert!((c[(0, 0)] - 2.0).abs() < 1e-14);
        assert!((c[(0, 1)] - 1.0).abs() < 1e-14);
        assert!((c[(1, 1)] - 2.0 / 3.0).abs() < 1e-14);
        let fwd = k.forward_law(&pt(&[0.0, 0.0], 0.0), 1.0).unwrap();
        assert!((fwd.cov[(1, 1)] - 2.0 / 3.0).abs() < 1e-14);
        assert!(k.backward_law(&pt(&[0.0, 0.0], 0.0), 0.0).is_err());
    }
}
