//! Gaussian probabilities of axis boxes: exact-to-rounding in one and two
//! dimensions, lattice quasi-Monte Carlo separation of variables above.

use libm::erfc;
use statrs::function::erf::erfc_inv;

use crate::linalg::Matrix;
use crate::operator::gauss_legendre;

const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Standard normal CDF.
#[inline]
pub fn phi(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT2)
}

/// Standard normal upper tail `P(Z > x)`.
#[inline]
pub fn phi_upper(x: f64) -> f64 {
    0.5 * erfc(x / SQRT2)
}

/// Inverse standard normal CDF.
pub fn phi_inv(p: f64) -> f64 {
    let p = p.clamp(1e-300, 1.0 - 1e-16);
    let mut x = -SQRT2 * erfc_inv(2.0 * p);
    // One Newton step against the accurate CDF.
    let dens = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    if dens > 0.0 {
        x -= (phi(x) - p) / dens;
    }
    x
}

/// `P(a < Z < b)`, computed on the side of zero that avoids cancellation.
pub fn interval_prob(a: f64, b: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    if a >= 0.0 {
        phi_upper(a) - phi_upper(b)
    } else if b <= 0.0 {
        phi_upper(-b) - phi_upper(-a)
    } else {
        1.0 - phi_upper(b) - phi_upper(-a)
    }
}

struct GlTables {
    n6: (Vec<f64>, Vec<f64>),
    n12: (Vec<f64>, Vec<f64>),
    n20: (Vec<f64>, Vec<f64>),
}

fn gl_tables() -> &'static GlTables {
    static TABLES: std::sync::OnceLock<GlTables> = std::sync::OnceLock::new();
    TABLES.get_or_init(|| GlTables { n6: gauss_legendre(6), n12: gauss_legendre(12), n20: gauss_legendre(20) })
}

/// Bivariate standard normal upper orthant `P(X > h, Y > k)` with correlation
/// `r` (Drezner–Wesolowsky as refined by Genz).
pub fn bvnu(h: f64, k: f64, r: f64) -> f64 {
    if h == f64::INFINITY || k == f64::INFINITY {
        return 0.0;
    }
    if h == f64::NEG_INFINITY {
        return if k == f64::NEG_INFINITY { 1.0 } else { phi_upper(k) };
    }
    if k == f64::NEG_INFINITY {
        return phi_upper(h);
    }
    if r == 0.0 {
        return phi_upper(h) * phi_upper(k);
    }
    let tp = std::f64::consts::TAU;
    let t = gl_tables();
    let (xs, ws) = if r.abs() < 0.3 {
        (&t.n6.0, &t.n6.1)
    } else if r.abs() < 0.75 {
        (&t.n12.0, &t.n12.1)
    } else {
        (&t.n20.0, &t.n20.1)
    };
    let mut hk = h * k;
    let mut bvn = 0.0;
    if r.abs() < 0.925 {
        let hs = (h * h + k * k) / 2.0;
        let asr = r.asin();
        for (&x, &w) in xs.iter().zip(ws) {
            let sn = (asr * (x + 1.0) / 2.0).sin();
            bvn += w * ((sn * hk - hs) / (1.0 - sn * sn)).exp();
        }
        bvn = bvn * asr / (2.0 * tp) + phi_upper(h) * phi_upper(k);
    } else {
        let mut k = k;
        if r < 0.0 {
            k = -k;
            hk = -hk;
        }
        if r.abs() < 1.0 {
            let as_ = (1.0 - r) * (1.0 + r);
            let mut a = as_.sqrt();
            let bs = (h - k) * (h - k);
            let c = (4.0 - hk) / 8.0;
            let d = (12.0 - hk) / 16.0;
            bvn = a
                * (-(bs / as_ + hk) / 2.0).exp()
                * (1.0 - c * (bs - as_) * (1.0 - d * bs / 5.0) / 3.0 + c * d * as_ * as_ / 5.0);
            if hk > -160.0 {
                let b = bs.sqrt();
                bvn -= (-hk / 2.0).exp() * tp.sqrt() * phi(-b / a) * b * (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0);
            }
            a /= 2.0;
            for (&x, &w) in xs.iter().zip(ws) {
                let xs_ = (a * (x + 1.0)).powi(2);
                let rs = (1.0 - xs_).sqrt();
                bvn += a
                    * w
                    * ((-bs / (2.0 * xs_) - hk / (1.0 + rs)).exp() / rs
                        - (-(bs / xs_ + hk) / 2.0).exp() * (1.0 + c * xs_ * (1.0 + d * xs_)));
            }
            bvn = -bvn / tp;
        }
        if r > 0.0 {
            bvn += phi_upper(h.max(k));
        } else {
            bvn = -bvn;
            if k > h {
                if h < 0.0 {
                    bvn += phi(k) - phi(h);
                } else {
                    bvn += phi_upper(h) - phi_upper(k);
                }
            }
        }
    }
    bvn.clamp(0.0, 1.0)
}

/// `P(a1 < X < b1, a2 < Y < b2)` for standard normals with correlation `r`.
pub fn bvn_rect(a1: f64, b1: f64, a2: f64, b2: f64, r: f64) -> f64 {
    if b1 <= a1 || b2 <= a2 {
        return 0.0;
    }
    // Reflect each axis so the interval sits mostly on the positive side,
    // where the upper-orthant differences do not cancel.
    let (mut a1, mut b1, mut a2, mut b2, mut r) = (a1, b1, a2, b2, r);
    if a1 + b1 < 0.0 {
        (a1, b1) = (-b1, -a1);
        r = -r;
    }
    if a2 + b2 < 0.0 {
        (a2, b2) = (-b2, -a2);
        r = -r;
    }
    let p = bvnu(a1, a2, r) - bvnu(b1, a2, r) - bvnu(a1, b2, r) + bvnu(b1, b2, r);
    p.clamp(0.0, 1.0)
}

/// Number of lattice points used for the separation-of-variables integral.
pub const MVN_POINTS: usize = 4096;

/// Shape of a centred Gaussian prepared for repeated box queries.
#[derive(Clone, Debug)]
pub enum GaussShape {
    One { sd: f64 },
    Two { sd: [f64; 2], r: f64 },
    Many { sd: Vec<f64>, chol: Matrix<f64> },
}

impl GaussShape {
    /// `None` if the covariance is not positive definite.
    pub fn from_cov(cov: &Matrix<f64>) -> Option<Self> {
        let n = cov.rows();
        let sd: Vec<f64> = (0..n).map(|i| cov[(i, i)].sqrt()).collect();
        if sd.iter().any(|s| !(*s > 0.0)) {
            return None;
        }
        match n {
            1 => Some(Self::One { sd: sd[0] }),
            2 => {
                let r = (cov[(0, 1)] / (sd[0] * sd[1])).clamp(-1.0, 1.0);
                (r.abs() < 1.0).then_some(Self::Two { sd: [sd[0], sd[1]], r })
            }
            _ => cov.cholesky().map(|chol| Self::Many { sd, chol }),
        }
    }

    pub fn sd(&self, i: usize) -> f64 {
        match self {
            Self::One { sd } => *sd,
            Self::Two { sd, .. } => sd[i],
            Self::Many { sd, .. } => sd[i],
        }
    }

    /// `P(lo < Y < hi)` for `Y ~ N(mean, Σ)`.
    pub fn box_prob(&self, mean: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
        match self {
            Self::One { sd } => interval_prob((lo[0] - mean[0]) / sd, (hi[0] - mean[0]) / sd),
            Self::Two { sd, r } => bvn_rect(
                (lo[0] - mean[0]) / sd[0],
                (hi[0] - mean[0]) / sd[0],
                (lo[1] - mean[1]) / sd[1],
                (hi[1] - mean[1]) / sd[1],
                *r,
            ),
            Self::Many { chol, .. } => {
                let a: Vec<f64> = lo.iter().zip(mean).map(|(l, m)| l - m).collect();
                let b: Vec<f64> = hi.iter().zip(mean).map(|(h, m)| h - m).collect();
                mvn_sov(chol, &a, &b, MVN_POINTS)
            }
        }
    }
}

/// Genz separation of variables for `P(a < L Z < b)` with lower-triangular
/// `L`, integrated over a periodized Richtmyer lattice.
pub fn mvn_sov(l: &Matrix<f64>, a: &[f64], b: &[f64], points: usize) -> f64 {
    let n = a.len();
    let first = interval_prob(a[0] / l[(0, 0)], b[0] / l[(0, 0)]);
    if first == 0.0 || n == 1 {
        return first;
    }
    let primes = [2.0f64, 3.0, 5.0, 7.0, 11.0, 13.0, 17.0, 19.0, 23.0, 29.0, 31.0, 37.0, 41.0, 43.0, 47.0];
    let gen: Vec<f64> = (0..n - 1).map(|i| primes[i % primes.len()].sqrt().fract()).collect();
    let mut total = 0.0;
    let mut y = vec![0.0; n];
    for p in 1..=points {
        let mut f = first;
        let (mut lo_p, mut hi_p) = (phi(a[0] / l[(0, 0)]), phi(b[0] / l[(0, 0)]));
        for i in 1..n {
            let u = (p as f64 * gen[i - 1] + 0.5).fract();
            let w = (2.0 * u - 1.0).abs();
            y[i - 1] = phi_inv(lo_p + w * (hi_p - lo_p));
            let s: f64 = (0..i).map(|j| l[(i, j)] * y[j]).sum();
            let lii = l[(i, i)];
            let (ai, bi) = ((a[i] - s) / lii, (b[i] - s) / lii);
            let pi = interval_prob(ai, bi);
            f *= pi;
            if f == 0.0 {
                break;
            }
            lo_p = phi(ai);
            hi_p = phi(bi);
        }
        total += f;
    }
    total / points as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `P(X > h, Y > k)` by direct Gauss–Legendre integration of
    /// `φ(x) P(Y > k | X = x)` over a truncated range.
    fn bvnu_quadrature(h: f64, k: f64, r: f64) -> f64 {
        let (xs, ws) = gauss_legendre::<f64>(200);
        let lo = h.max(-12.0);
        let hi = 12.0f64.max(lo + 1.0);
        let panels = 400;
        let width = (hi - lo) / panels as f64;
        let sr = (1.0 - r * r).sqrt();
        let mut total = 0.0;
        for p in 0..panels {
            let a = lo + p as f64 * width;
            for (&x, &w) in xs.iter().zip(&ws) {
                let t = a + width * (x + 1.0) / 2.0;
                let dens = (-t * t / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
                total += w * width / 2.0 * dens * phi_upper((k - r * t) / sr);
            }
        }
        total
    }

    #[test]
    fn bvnu_matches_quadrature() {
        for &r in &[-0.99, -0.95, -0.866, -0.5, -0.1, 0.0, 0.2, 0.6, 0.866, 0.93, 0.999] {
            for &(h, k) in &[(0.0, 0.0), (1.0, -0.5), (-2.0, 1.5), (2.5, 2.5), (-1.0, -3.0), (0.3, 4.0)] {
                let got = bvnu(h, k, r);
                let want = bvnu_quadrature(h, k, r);
                assert!((got - want).abs() < 5e-14, "r={r} h={h} k={k}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn bvnu_special_values() {
        // P(X>0, Y>0) = 1/4 + asin(r)/(2π)
        for &r in &[-0.9f64, -0.3, 0.5, 0.95] {
            let want = 0.25 + r.asin() / std::f64::consts::TAU;
            assert!((bvnu(0.0, 0.0, r) - want).abs() < 1e-15);
        }
        assert_eq!(bvnu(f64::INFINITY, 0.0, 0.5), 0.0);
        assert_eq!(bvnu(f64::NEG_INFINITY, f64::NEG_INFINITY, 0.5), 1.0);
    }

    #[test]
    fn rectangle_in_far_tail_keeps_relative_accuracy() {
        let p = bvn_rect(-9.0, -8.0, -9.5, -7.5, 0.866);
        let q = bvn_rect(8.0, 9.0, 7.5, 9.5, 0.866);
        assert!(p > 0.0 && (p - q).abs() <= 1e-12 * q.max(1e-300));
    }

    #[test]
    fn rectangle_probabilities_sum_to_one() {
        let edges = [-f64::INFINITY, -1.0, 0.3, 2.0, f64::INFINITY];
        let mut total = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                total += bvn_rect(edges[i], edges[i + 1], edges[j], edges[j + 1], 0.866);
            }
        }
        assert!((total - 1.0).abs() < 1e-14);
    }

    #[test]
    fn three_dim_product_case() {
        let mut cov = Matrix::zeros(3, 3);
        cov[(0, 0)] = 2.0;
        cov[(1, 1)] = 1.0;
        cov[(0, 1)] = 0.8;
        cov[(1, 0)] = 0.8;
        cov[(2, 2)] = 0.5;
        let shape = GaussShape::from_cov(&cov).unwrap();
        let lo = [-1.0, -0.5, -0.2];
        let hi = [0.7, 1.5, 0.9];
        let got = shape.box_prob(&[0.0; 3], &lo, &hi);
        let r = 0.8 / 2f64.sqrt();
        let s = 0.5f64.sqrt();
        let want =
            bvn_rect(lo[0] / 2f64.sqrt(), hi[0] / 2f64.sqrt(), lo[1], hi[1], r) * interval_prob(lo[2] / s, hi[2] / s);
        assert!((got - want).abs() < 2e-4, "{got} vs {want}");
    }

    #[test]
    fn interval_probability_tails() {
        assert!((interval_prob(-1.0, 1.0) - 0.682_689_492_137_085_9).abs() < 1e-15, "{}", interval_prob(-1.0, 1.0));
        let far = interval_prob(30.0, 31.0);
        assert!(far > 0.0 && far < 1e-190, "{far}");
        assert!((phi_inv(phi(1.3)) - 1.3).abs() < 1e-12, "{}", phi_inv(phi(1.3)));
    }
}
