//! Acceptance suite. Runs without the libtest harness so that every line is
//! printed; exits non-zero if any criterion fails.

use std::time::Instant;

use hypocap::capacity::{capacity_scaling_check, solve_equilibrium, ProbeStrategy, FEAS_TOL};
use hypocap::estimates::{gramian_gap_sweep, norm_sweep, quadratic_sweep, ratio_bound_sweep};
use hypocap::geometry::{flat_compact, solid_box, BaseSet, DomainSpec};
use hypocap::oracle_mc::{
    composition_check, density_validation, hitting_estimate, CompactTarget, Direction, StepKernel,
};
use hypocap::wiener::{analyze, series_term, DiagnosisPolicy, SeriesConfig, Verdict};
use hypocap::{Kernel, Operator, OperatorConfig, Point};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn kernel(cfg: OperatorConfig) -> Kernel {
    Kernel::from_spec(Operator::validate(&cfg).expect("valid operator"))
}

fn heat1() -> Kernel {
    kernel(OperatorConfig::heat(1))
}

fn heat2() -> Kernel {
    kernel(OperatorConfig::heat(2))
}

fn kolmogorov() -> Kernel {
    kernel(OperatorConfig::kolmogorov())
}

/// Closed-form fundamental solution of `∂²_{x1} + x1 ∂_{x2} − ∂t`.
fn kolmogorov_gamma(x: [f64; 2], t: f64, xi: [f64; 2], tau: f64) -> f64 {
    let s = t - tau;
    if s <= 0.0 {
        return 0.0;
    }
    let y1 = x[0] - xi[0];
    let y2 = x[1] - (xi[1] - s * xi[0]);
    let q = y1 * y1 / s + 3.0 * y1 * y2 / (s * s) + 3.0 * y2 * y2 / (s * s * s);
    3f64.sqrt() / (2.0 * std::f64::consts::PI * s * s) * (-q).exp()
}

fn heat_gamma(x: f64, t: f64) -> f64 {
    (-x * x / (4.0 * t)).exp() / (4.0 * std::f64::consts::PI * t).sqrt()
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn flat_cap(ctx: &Kernel, set: &BaseSet, res: usize) -> (f64, f64) {
    let start = Instant::now();
    let c = flat_compact(set, 0.0, res).unwrap();
    let sol = solve_equilibrium(ctx, &c, &ProbeStrategy::default()).unwrap();
    (sol.cap_value, start.elapsed().as_secs_f64())
}

fn ac1() -> Outcome {
    let cases = [
        ("heat N=1", heat1(), BaseSet::Box { lo: vec![0.0], hi: vec![1.0] }),
        ("kolmogorov", kolmogorov(), BaseSet::Box { lo: vec![0.0, 0.0], hi: vec![1.0, 1.0] }),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, ctx, set) in &cases {
        let (c200, t200) = flat_cap(ctx, set, 200);
        let (c400, t400) = flat_cap(ctx, set, 400);
        let (e200, e400) = ((c200 - 1.0).abs(), (c400 - 1.0).abs());
        let ok = e200 <= 0.05 && e400 <= (0.5 * e200).max(1e-9) && t200 < 60.0 && t400 < 60.0;
        pass &= ok;
        parts.push(format!("{name}: cap200={c200:.6} ({t200:.1}s) cap400={c400:.6} ({t400:.1}s)"));
    }
    // Disk of radius 1/2 in the Kolmogorov plane; cells are whole, so the
    // target is the discrete area, not π/4.
    let ctx = kolmogorov();
    let disk = BaseSet::Ball { center: vec![0.5, 0.5], radius: 0.5 };
    let c = flat_compact(&disk, 0.0, 200).unwrap();
    let area: f64 = c.atoms.iter().map(|a| a.volume).sum();
    let sol = solve_equilibrium(&ctx, &c, &ProbeStrategy::default()).unwrap();
    parts.push(format!("disk (info): cap={:.6} area={area:.6}", sol.cap_value));
    outcome(pass, parts.join("; "))
}

fn ac2() -> Outcome {
    let ctx = kolmogorov();
    let c = flat_compact(&BaseSet::Box { lo: vec![0.0, 0.0], hi: vec![1.0, 1.0] }, 0.0, 100).unwrap();
    let (f, d, ratio) = capacity_scaling_check(&ctx, &c, 2.0, &ProbeStrategy::default()).unwrap();
    outcome((ratio / 16.0 - 1.0).abs() <= 0.02, format!("cap F={f:.6} cap d2F={d:.6} ratio={ratio:.4}"))
}

fn ac3() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, ctx, lo, hi, a, b) in [
        ("heat N=1", heat1(), vec![0.0], vec![1.0], 0.0, 1.0),
        ("kolmogorov", kolmogorov(), vec![0.0, 0.0], vec![1.0, 1.0], 0.0, 0.5),
    ] {
        let res = if lo.len() == 1 { 24 } else { 6 };
        let c = solid_box(&lo, &hi, a, b, res).unwrap();
        let sol = solve_equilibrium(&ctx, &c, &ProbeStrategy::default()).unwrap();
        let vol: f64 = lo.iter().zip(&hi).map(|(l, h)| h - l).product::<f64>() * (b - a);
        let bound = vol / (b - a);
        let ok = sol.cap_value >= bound * (1.0 - 0.03);
        pass &= ok;
        parts.push(format!("{name}: cap={:.6} |F|/(b-a)={bound:.6}", sol.cap_value));
    }
    outcome(pass, parts.join("; "))
}

fn ac4() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();

    // Homogeneity of degree −Q.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for ctx in [heat1(), heat2(), kolmogorov()] {
        let spec = ctx.spec();
        for _ in 0..1000 {
            let z = Point::new((0..ctx.dim()).map(|_| rng.gen_range(-2.0..2.0)).collect(), rng.gen_range(0.05..3.0));
            let r: f64 = rng.gen_range(0.2..5.0);
            let g = ctx.gamma_origin(&z);
            if g < 1e-250 {
                continue;
            }
            let gr = ctx.gamma_origin(&spec.dilate(r, &z).unwrap());
            worst = worst.max((gr * r.powf(spec.q()) / g - 1.0).abs());
        }
    }
    pass &= worst <= 1e-10;
    parts.push(format!("homogeneity max rel={worst:.2e}"));

    // Agreement with closed forms away from the origin pole.
    let k = kolmogorov();
    let mut closed = 0.0f64;
    for _ in 0..1000 {
        let x = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
        let xi = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
        let (t, tau) = (rng.gen_range(0.1..2.0), rng.gen_range(-2.0..0.0));
        let want = kolmogorov_gamma(x, t, xi, tau);
        let got = k.gamma(&Point::new(x.to_vec(), t), &Point::new(xi.to_vec(), tau));
        if want > 1e-200 {
            closed = closed.max((got / want - 1.0).abs());
        }
    }
    let h1 = heat1();
    for _ in 0..1000 {
        let (x, t) = (rng.gen_range(-4.0..4.0), rng.gen_range(0.05..3.0));
        let want = heat_gamma(x, t);
        closed = closed.max((h1.gamma_origin(&Point::new(vec![x], t)) / want - 1.0).abs());
    }
    pass &= closed <= 1e-10;
    parts.push(format!("closed form max rel={closed:.2e}"));

    // ∫Γ(x, t) dx = 1 by tensor Simpson quadrature.
    let simpson = |f: &dyn Fn(f64) -> f64, a: f64, b: f64, n: usize| {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    };
    let mut norm_err = 0.0f64;
    for t in [0.3, 1.0] {
        let h1 = heat1();
        let v = simpson(&|x| h1.gamma_origin(&Point::new(vec![x], t)), -12.0, 12.0, 2000);
        norm_err = norm_err.max((v - 1.0).abs());
        let h2 = heat2();
        let v =
            simpson(&|x| simpson(&|y| h2.gamma_origin(&Point::new(vec![x, y], t)), -12.0, 12.0, 600), -12.0, 12.0, 600);
        norm_err = norm_err.max((v - 1.0).abs());
        let v =
            simpson(&|x| simpson(&|y| k.gamma_origin(&Point::new(vec![x, y], t)), -12.0, 12.0, 600), -12.0, 12.0, 600);
        norm_err = norm_err.max((v - 1.0).abs());
    }
    pass &= norm_err <= 1e-3;
    parts.push(format!("normalization max err={norm_err:.2e}"));

    // Chapman–Kolmogorov: Γ(z;ζ) = ∫Γ(z;w)Γ(w;ζ)dw, with w drawn from the
    // law Γ(·, s; ζ) by a sampler written against the closed form.
    let (xi, tau, s) = ([0.3, -0.2], 0.0, 1.0);
    let (z, t) = ([0.5, -0.1], 2.0);
    let (l11, l21, l22) = (2f64.sqrt(), -1.0 / 2f64.sqrt(), (1.0f64 / 6.0).sqrt());
    let n = 200_000;
    let mut acc = 0.0;
    for _ in 0..n {
        let (n1, n2): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
        let w = [xi[0] + l11 * n1, xi[1] - s * xi[0] + l21 * n1 + l22 * n2];
        acc += k.gamma(&Point::new(z.to_vec(), t), &Point::new(w.to_vec(), tau + s));
    }
    let ck = acc / n as f64;
    let direct = k.gamma(&Point::new(z.to_vec(), t), &Point::new(xi.to_vec(), tau));
    let ck_err = (ck / direct - 1.0).abs();
    pass &= ck_err <= 0.01;
    parts.push(format!("Chapman-Kolmogorov rel={ck_err:.2e}"));

    // The library's own two-step sampler against the one-step law.
    let comp = composition_check(&k, &[0.3, -0.2], 0.5, 200_000, 7).unwrap();
    pass &= comp.analytic_rel_err <= 1e-12 && comp.cov_rel_err <= 0.01 && comp.mean_z <= 5.0;
    parts.push(format!("sampler composition cov rel={:.2e}", comp.cov_rel_err));

    // Forward sampler mean against E(h)ξ from the closed form.
    let fwd = StepKernel::new(&k, 0.7, Direction::Forward).unwrap();
    let m = fwd.mean(&[0.3, -0.2]);
    let mean_ok = (m[0] - 0.3).abs() < 1e-12 && (m[1] - (-0.2 - 0.7 * 0.3)).abs() < 1e-12;
    pass &= mean_ok;

    outcome(pass, parts.join("; "))
}

fn ac5() -> Outcome {
    let start = Instant::now();
    let rows = [
        gramian_gap_sweep(heat1().spec(), "heat1", 10_000, 51),
        gramian_gap_sweep(heat2().spec(), "heat2", 10_000, 52),
        gramian_gap_sweep(kolmogorov().spec(), "kolmogorov", 10_000, 53),
    ];
    let secs = start.elapsed().as_secs_f64();
    let bad: usize = rows.iter().map(|r| r.violations).sum();
    let worst = rows.iter().map(|r| r.extreme).fold(f64::INFINITY, f64::min);
    outcome(bad == 0 && secs < 10.0, format!("violations={bad} min scaled gap={worst:.3e} time={secs:.2}s"))
}

fn ac6() -> Outcome {
    let rows = [
        ratio_bound_sweep(&heat1(), "heat1", 100_000, 61),
        ratio_bound_sweep(&heat2(), "heat2", 100_000, 62),
        ratio_bound_sweep(&kolmogorov(), "kolmogorov", 100_000, 63),
    ];
    let bad: usize = rows.iter().map(|r| r.violations).sum();
    let detail = rows.iter().map(|r| format!("{} {}/{}", r.spec, r.violations, r.samples)).collect::<Vec<_>>();
    outcome(bad == 0, detail.join(", "))
}

fn ac7() -> Outcome {
    let mut bad = 0;
    let mut detail = Vec::new();
    for (name, ctx) in [("heat1", heat1()), ("heat2", heat2()), ("kolmogorov", kolmogorov())] {
        let n = norm_sweep(ctx.spec(), name, 100_000, 71);
        let e = quadratic_sweep(&ctx, name, 100_000, 72);
        bad += n.violations + e.violations;
        detail.push(format!("{name} norm {} quadratic {}", n.violations, e.violations));
    }
    outcome(bad == 0, detail.join(", "))
}

fn ac8() -> Outcome {
    let strategy = ProbeStrategy::default();
    let mut pass = true;
    let mut shells = 0;
    let mut worst_ratio = 0.0f64;
    let cases = [
        (heat1(), DomainSpec::past_halfspace_complement(1, 0.0), 2..=9, 12),
        (kolmogorov(), DomainSpec::past_halfspace_complement(2, 0.0), 2..=5, 8),
    ];
    for (ctx, domain, ks, res) in cases {
        let z0 = Point::origin(ctx.dim());
        for k in ks {
            let t = series_term(&ctx, &domain, &z0, 0.5, k, res, &strategy).unwrap();
            if t.atoms == 0 {
                continue;
            }
            shells += 1;
            pass &= t.sandwich_ok && t.max_potential.is_some_and(|m| m <= 1.0 + FEAS_TOL);
            worst_ratio = worst_ratio.max(t.cap_lower / t.v).max(t.v / t.cap_upper);
        }
    }
    pass &= shells > 0;
    outcome(pass, format!("{shells} shells, worst bound/V ratio={worst_ratio:.4}"))
}

fn ac9() -> Outcome {
    let ctx = heat1();
    let z0 = Point::origin(1);
    let strategy = ProbeStrategy::default();
    let policy = DiagnosisPolicy::default();
    let mut pass = true;
    let mut detail = Vec::new();
    for (name, domain, want) in [
        ("past half-space", DomainSpec::past_halfspace_complement(1, 0.0), Verdict::RegularEvidence),
        ("point complement", DomainSpec::point_complement(&z0), Verdict::IrregularEvidence),
    ] {
        let mut seen = Vec::new();
        for lambda in [0.3, 0.5, 0.7] {
            for res in [12, 24] {
                let cfg = SeriesConfig {
                    lambda,
                    k_min: 2,
                    k_max: 9,
                    resolution: res,
                    gr_resolution: res,
                    ..Default::default()
                };
                let report = analyze(&ctx, &domain, &z0, &cfg, &strategy, &policy).unwrap();
                let v = report.diagnosis.map_or(Verdict::Inconclusive, |d| d.verdict);
                pass &= v == want;
                seen.push(v);
            }
        }
        let hits = seen.iter().filter(|v| **v == want).count();
        detail.push(format!("{name}: {hits}/{} {:?}", seen.len(), want));
    }
    outcome(pass, detail.join("; "))
}

fn ac10() -> Outcome {
    let ctx = heat1();
    let f = flat_compact(&BaseSet::Box { lo: vec![-1.0], hi: vec![1.0] }, -1.0, 200).unwrap();
    let sol = solve_equilibrium(&ctx, &f, &ProbeStrategy::default()).unwrap();
    let z0 = Point::origin(1);
    let v = sol.potential_at(&ctx, &z0);
    let target = CompactTarget { ctx: &ctx, compact: &f };
    let est = hitting_estimate(&ctx, &target, &z0, 0.25, 4, 100_000, 42).unwrap();
    let agree = (v - est.p_hat).abs() <= 3.0 * est.stderr + 0.03 * v;

    // The hitting probability of a flat segment at the last step is also a
    // Gaussian interval mass.
    let exact = {
        let sd = (2.0f64).sqrt();
        let cdf = |x: f64| 0.5 * libm::erfc(-x / (sd * 2f64.sqrt()));
        cdf(1.0) - cdf(-1.0)
    };
    let sanity = (est.p_hat - exact).abs() <= 4.0 * est.stderr;

    let d = density_validation(&ctx, 1.0, 40, 1_000_000, 42).unwrap();
    let k = density_validation(&kolmogorov(), 1.0, 40, 1_000_000, 43).unwrap();
    let dens = d.max_l1 < 0.01 && k.max_l1 < 0.01;
    outcome(
        agree && sanity && dens,
        format!(
            "V={v:.5} p={:.5}±{:.5} interval mass={exact:.5}; density L1 heat={:.4} kolmogorov={:.4}",
            est.p_hat, est.stderr, d.max_l1, k.max_l1
        ),
    )
}

type Criterion = (&'static str, &'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        ("AC1", "flat capacity exactness", ac1),
        ("AC2", "capacity scaling", ac2),
        ("AC3", "strip lower bound", ac3),
        ("AC4", "fundamental solution properties", ac4),
        ("AC5", "Gramian eigen-gap", ac5),
        ("AC6", "ratio bound with constructive constant", ac6),
        ("AC7", "norm comparison and quadratic bound", ac7),
        ("AC8", "series sandwich", ac8),
        ("AC9", "regularity verdicts", ac9),
        ("AC10", "Monte Carlo cross-check", ac10),
    ];
    let mut failed = 0;
    for (id, name, run) in criteria {
        let start = Instant::now();
        let o = run();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        failed += usize::from(!o.pass);
        println!("[{tag}] {id} {name}: {} [{:.1}s]", o.detail, start.elapsed().as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
