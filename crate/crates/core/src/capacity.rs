//! L-capacity of discretized compacts as a packing LP.
//!
//! Each cell atom carries a constant density `u_j` on its cell at the atom's
//! time (times its layer thickness for layered sets), so the potential at a
//! probe `z` is `Σ_j u_j dt_j P_z(cell_j)`, where `P_z` is the Gaussian law of
//! `ξ ↦ Γ(z, (ξ, t_j))`. Point atoms (zero width) carry a point mass and
//! contribute `w_j Γ(z, ζ_j)`. The LP maximizes the total mass subject to the
//! potential being at most one at every probe.
//!
//! Probes sit just above each atom. After each solve the potential is
//! evaluated on a larger verification set (sub-cell points, a halo of
//! offsets, mid-scale and far-field points); violated probes are added as
//! rows and the LP is re-solved. The final measure is scaled down by the
//! largest potential seen, so it is feasible on every probe evaluated.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gauss::GaussShape;
use crate::geometry::{DiscreteCompact, GeometryError};
use crate::kernel::KernelContext;
use crate::lp::{LpError, LpStatus, PackingLp};
use crate::point::SpaceTimePoint;

type Point = SpaceTimePoint<f64>;
type Ctx = KernelContext<f64>;

/// Cells farther than this many standard deviations from the law's mean are
/// dropped from a probe's row.
pub const CULL_SIGMAS: f64 = 8.5;
/// Probe offset is chosen so every coordinate's spread is below
/// `half_width / OFFSET_RATIO`.
pub const OFFSET_RATIO: f64 = 48.0;
/// Potentials above `1 + FEAS_TOL` count as violations.
pub const FEAS_TOL: f64 = 1e-9;
/// Point-mass halos stop once Γ at the halo point exceeds this.
const POINT_HALO_GAMMA: f64 = 1e15;
/// Violated probes added per constraint-generation round.
const MAX_NEW_ROWS: usize = 20_000;
/// Verification rows expected to touch more cells than this are not cached.
const CACHE_CELLS: f64 = 4096.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CapacityError {
    #[error("compact has no atoms")]
    EmptyCompact,
    #[error("LP failure: {0}")]
    LpFailure(#[from] LpError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeStrategy {
    /// Verify at the `2^N` points `x ± hw/2` of every cell.
    pub sub_cell: bool,
    /// Extra offsets above every atom centre, as multiples of the base offset.
    pub halo_multiples: Vec<f64>,
    /// Atoms sampled for mid-scale offsets (fractions of the compact's time scale).
    pub mid_samples: usize,
    pub far_field: bool,
    pub max_rounds: usize,
    /// Additional probes in the compact's local frame.
    pub extra: Vec<Point>,
}

impl Default for ProbeStrategy {
    fn default() -> Self {
        Self {
            sub_cell: true,
            halo_multiples: vec![4.0, 16.0, 64.0],
            mid_samples: 64,
            far_field: true,
            max_rounds: 3,
            extra: Vec::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Suboptimal,
}

struct LayerIndex {
    t: f64,
    origin: Vec<f64>,
    cell: Vec<f64>,
    dims: Vec<i64>,
    max_hw: Vec<f64>,
    map: HashMap<Vec<i64>, Vec<usize>>,
    members: Vec<usize>,
}

/// Spatial hash of cell atoms per time layer, plus the list of point atoms.
struct AtomIndex {
    layers: Vec<LayerIndex>,
    points: Vec<usize>,
}

impl AtomIndex {
    fn build(compact: &DiscreteCompact, subset: impl Iterator<Item = usize>) -> Self {
        let mut by_time: HashMap<u64, Vec<usize>> = HashMap::new();
        let mut points = Vec::new();
        for j in subset {
            let a = &compact.atoms[j];
            if a.half_width.iter().all(|&h| h == 0.0) {
                points.push(j);
            } else {
                by_time.entry(a.t.to_bits()).or_default().push(j);
            }
        }
        let mut layers: Vec<LayerIndex> = by_time
            .into_values()
            .map(|members| {
                let n = compact.atoms[members[0]].x.len();
                let mut lo = vec![f64::INFINITY; n];
                let mut hi = vec![f64::NEG_INFINITY; n];
                let mut max_hw = vec![0.0f64; n];
                for &j in &members {
                    let a = &compact.atoms[j];
                    for i in 0..n {
                        lo[i] = lo[i].min(a.x[i]);
                        hi[i] = hi[i].max(a.x[i]);
                        max_hw[i] = max_hw[i].max(a.half_width[i]);
                    }
                }
                let cell: Vec<f64> = max_hw.iter().map(|h| 2.0 * h.max(1e-300)).collect();
                let dims: Vec<i64> = (0..n).map(|i| ((hi[i] - lo[i]) / cell[i]).floor() as i64 + 1).collect();
                let mut map: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
                for &j in &members {
                    let a = &compact.atoms[j];
                    let key: Vec<i64> = (0..n).map(|i| ((a.x[i] - lo[i]) / cell[i]).floor() as i64).collect();
                    map.entry(key).or_default().push(j);
                }
                LayerIndex { t: compact.atoms[members[0]].t, origin: lo, cell, dims, max_hw, map, members }
            })
            .collect();
        layers.sort_by(|a, b| a.t.total_cmp(&b.t));
        Self { layers, points }
    }

    /// Sparse row of coefficients of the potential at `z`.
    fn row(&self, ctx: &Ctx, compact: &DiscreteCompact, z: &Point) -> Vec<(usize, f64)> {
        let spec = ctx.spec();
        let mut row = Vec::new();
        for layer in &self.layers {
            if layer.t >= z.t {
                break;
            }
            let h = z.t - layer.t;
            let mean = spec.apply_e(-h, &z.x);
            let Some(shape) = GaussShape::from_cov(&ctx.backward_cov(h)) else { continue };
            let n = mean.len();
            let reach: Vec<f64> = (0..n).map(|i| CULL_SIGMAS * shape.sd(i)).collect();
            let mut visit = |j: usize| {
                let a = &compact.atoms[j];
                let lo = a.lo();
                let hi = a.hi();
                if (0..n).any(|i| lo[i] > mean[i] + reach[i] || hi[i] < mean[i] - reach[i]) {
                    return;
                }
                let p = shape.box_prob(&mean, &lo, &hi);
                let c = p * if a.dt > 0.0 { a.dt } else { 1.0 };
                if c > 0.0 {
                    row.push((j, c));
                }
            };
            let kmin: Vec<i64> = (0..n)
                .map(|i| {
                    (((mean[i] - reach[i] - layer.max_hw[i] - layer.origin[i]) / layer.cell[i]).floor() as i64).max(0)
                })
                .collect();
            let kmax: Vec<i64> = (0..n)
                .map(|i| {
                    (((mean[i] + reach[i] + layer.max_hw[i] - layer.origin[i]) / layer.cell[i]).floor() as i64)
                        .min(layer.dims[i] - 1)
                })
                .collect();
            if (0..n).any(|i| kmin[i] > kmax[i]) {
                continue;
            }
            let span: f64 = (0..n).map(|i| (kmax[i] - kmin[i] + 1) as f64).product();
            if span > layer.members.len() as f64 {
                layer.members.iter().for_each(|&j| visit(j));
            } else {
                let mut key = kmin.clone();
                'outer: loop {
                    if let Some(list) = layer.map.get(&key) {
                        list.iter().for_each(|&j| visit(j));
                    }
                    let mut i = 0;
                    loop {
                        if i == n {
                            break 'outer;
                        }
                        key[i] += 1;
                        if key[i] <= kmax[i] {
                            break;
                        }
                        key[i] = kmin[i];
                        i += 1;
                    }
                }
            }
        }
        for &j in &self.points {
            let g = ctx.gamma(z, &compact.atoms[j].point());
            if g > 0.0 {
                row.push((j, g));
            }
        }
        row
    }
}

/// Solved equilibrium problem. `weights`, `densities`, `probes` and
/// `max_potential` refer to the compact's local frame; `cap_value` and
/// `dual_bound` are physical (`ρ^Q` times the local values).
#[derive(Clone, Debug)]
pub struct EquilibriumSolution {
    pub compact: DiscreteCompact,
    pub weights: Vec<f64>,
    pub densities: Vec<f64>,
    pub cap_local: f64,
    pub cap_value: f64,
    pub log_cap: f64,
    pub dual_bound: f64,
    pub probes: Vec<Point>,
    pub max_potential: f64,
    /// Largest potential before the final rescaling.
    pub raw_max_potential: f64,
    pub status: SolveStatus,
    pub rounds: usize,
    pub base_offset: f64,
    pub lp: PackingLp,
    support: std::sync::Arc<AtomIndex>,
}

impl std::fmt::Debug for AtomIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "AtomIndex({} layers, {} points)", self.layers.len(), self.points.len())
    }
}

/// Compact summary for JSON output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapacitySummary {
    pub atoms: usize,
    pub cap_value: f64,
    pub log_cap: f64,
    pub cap_local: f64,
    pub dual_bound: f64,
    pub max_potential: f64,
    pub probes: usize,
    pub lp_rows: usize,
    pub rounds: usize,
    pub status: SolveStatus,
}

impl EquilibriumSolution {
    /// `V_F` at a local-frame point.
    pub fn potential_at_local(&self, ctx: &Ctx, w: &Point) -> f64 {
        self.support.row(ctx, &self.compact, w).iter().map(|&(j, c)| self.densities[j] * c).sum()
    }

    /// `V_F(z)` at a physical point; the potential is invariant under the
    /// frame map.
    pub fn potential_at(&self, ctx: &Ctx, z: &Point) -> f64 {
        let w = self.compact.frame.to_local(ctx.spec(), z);
        self.potential_at_local(ctx, &w)
    }

    pub fn summary(&self) -> CapacitySummary {
        CapacitySummary {
            atoms: self.compact.len(),
            cap_value: self.cap_value,
            log_cap: self.log_cap,
            cap_local: self.cap_local,
            dual_bound: self.dual_bound,
            max_potential: self.max_potential,
            probes: self.probes.len(),
            lp_rows: self.lp.rows.len(),
            rounds: self.rounds,
            status: self.status,
        }
    }
}

/// Probe whose backward law at time `t` is centred at `y`: `(y, t)∘(0, s)`.
fn probe_above(ctx: &Ctx, y: &[f64], t: f64, s: f64) -> Point {
    Point::new(ctx.spec().apply_e(s, y), t + s)
}

/// Largest offset keeping each coordinate's spread below `hw / OFFSET_RATIO`.
fn base_offset(ctx: &Ctx, compact: &DiscreteCompact) -> f64 {
    let b1 = ctx.backward_cov(1.0);
    let exps = ctx.spec().coord_exponents();
    let mut s = f64::INFINITY;
    for a in &compact.atoms {
        for i in 0..a.x.len() {
            if a.half_width[i] > 0.0 {
                let si = (a.half_width[i] / (OFFSET_RATIO * b1[(i, i)].sqrt())).powf(2.0 / exps[i] as f64);
                s = s.min(si);
            }
        }
    }
    if s.is_finite() {
        s
    } else {
        1e-3 * time_scale(ctx, compact)
    }
}

/// Natural time scale of the compact: its time extent or the parabolic size
/// of its spatial extent, whichever is larger.
fn time_scale(ctx: &Ctx, compact: &DiscreteCompact) -> f64 {
    let exps = ctx.spec().coord_exponents();
    let n = ctx.dim();
    let mut lo = vec![f64::INFINITY; n];
    let mut hi = vec![f64::NEG_INFINITY; n];
    for a in &compact.atoms {
        for i in 0..n {
            lo[i] = lo[i].min(a.x[i] - a.half_width[i]);
            hi[i] = hi[i].max(a.x[i] + a.half_width[i]);
        }
    }
    let spatial = (0..n).map(|i| (hi[i] - lo[i]).max(0.0).powf(2.0 / exps[i] as f64)).fold(0.0, f64::max);
    let (a, b) = compact.time_span;
    (b - a).max(spatial).max(1e-12)
}

/// Rough count of cells a probe's row would touch, compared with the cache limit.
fn wide_probe(ctx: &Ctx, compact: &DiscreteCompact, z: &Point) -> bool {
    let (t0, _) = compact.time_span;
    let h = z.t - t0;
    if h <= 0.0 || compact.len() as f64 <= CACHE_CELLS {
        return false;
    }
    let cov = ctx.backward_cov(h);
    let a = &compact.atoms[0];
    let cells: f64 = (0..a.x.len())
        .map(|i| (2.0 * CULL_SIGMAS * cov[(i, i)].sqrt() / (2.0 * a.half_width[i].max(1e-300)) + 1.0).max(1.0))
        .product();
    cells > CACHE_CELLS
}

fn main_probes(ctx: &Ctx, compact: &DiscreteCompact, s: f64) -> Vec<Point> {
    compact.atoms.iter().map(|a| probe_above(ctx, &a.x, a.t, s)).collect()
}

fn verification_probes(ctx: &Ctx, compact: &DiscreteCompact, s: f64, strategy: &ProbeStrategy) -> Vec<Point> {
    let n = ctx.dim();
    let scale = time_scale(ctx, compact);
    let mut out = Vec::new();
    for a in &compact.atoms {
        let is_point = a.half_width.iter().all(|&h| h == 0.0);
        if is_point {
            let mut off = scale;
            for _ in 0..2000 {
                let z = probe_above(ctx, &a.x, a.t, off);
                if z.t <= a.t || ctx.gamma(&z, &a.point()) > POINT_HALO_GAMMA {
                    break;
                }
                out.push(z);
                off *= 0.5;
            }
            continue;
        }
        if strategy.sub_cell {
            for c in 0..(1usize << n) {
                let y: Vec<f64> =
                    (0..n).map(|i| a.x[i] + if (c >> i) & 1 == 1 { 0.5 } else { -0.5 } * a.half_width[i]).collect();
                out.push(probe_above(ctx, &y, a.t, s));
            }
        }
        for m in &strategy.halo_multiples {
            out.push(probe_above(ctx, &a.x, a.t, m * s));
        }
    }
    if strategy.mid_samples > 0 && !compact.atoms.is_empty() {
        let stride = (compact.len() / strategy.mid_samples).max(1);
        for a in compact.atoms.iter().step_by(stride) {
            for f in [1e-4, 1e-3, 1e-2, 1e-1] {
                out.push(probe_above(ctx, &a.x, a.t, f * scale));
            }
        }
    }
    if strategy.far_field {
        let mut lo = vec![f64::INFINITY; n];
        let mut hi = vec![f64::NEG_INFINITY; n];
        for a in &compact.atoms {
            for i in 0..n {
                lo[i] = lo[i].min(a.x[i]);
                hi[i] = hi[i].max(a.x[i]);
            }
        }
        let top = compact.time_span.1;
        let mut anchors = vec![(0..n).map(|i| 0.5 * (lo[i] + hi[i])).collect::<Vec<_>>()];
        for c in 0..(1usize << n) {
            anchors.push((0..n).map(|i| if (c >> i) & 1 == 1 { hi[i] } else { lo[i] }).collect());
        }
        for y in &anchors {
            for f in [1.0, 4.0, 16.0] {
                out.push(probe_above(ctx, y, top, f * scale));
            }
        }
    }
    out.extend(strategy.extra.iter().cloned());
    out
}

/// Maximizes the mass of a measure on `compact` whose potential is at most
/// one on the probe set.
pub fn solve_equilibrium(
    ctx: &Ctx,
    compact: &DiscreteCompact,
    strategy: &ProbeStrategy,
) -> Result<EquilibriumSolution, CapacityError> {
    if compact.is_empty() {
        return Err(CapacityError::EmptyCompact);
    }
    let s = base_offset(ctx, compact);
    let full = AtomIndex::build(compact, 0..compact.len());
    let objective: Vec<f64> =
        compact.atoms.iter().map(|a| if a.half_width.iter().all(|&h| h == 0.0) { 1.0 } else { a.volume }).collect();

    let mut probes = main_probes(ctx, compact, s);
    let mut lp = PackingLp::new(objective.clone());
    let rows: Vec<Vec<(usize, f64)>> = probes.par_iter().map(|z| full.row(ctx, compact, z)).collect();
    for r in rows {
        lp.push_row(r);
    }
    // Point atoms see no main-probe mass of their own; their halo keeps them
    // bounded, so seed it into the LP.
    let points: Vec<Point> = verification_probes(
        ctx,
        compact,
        s,
        &ProbeStrategy {
            sub_cell: false,
            halo_multiples: vec![],
            mid_samples: 0,
            far_field: false,
            max_rounds: 0,
            extra: vec![],
        },
    );
    for z in points {
        lp.push_row(full.row(ctx, compact, &z));
        probes.push(z);
    }
    // Columns no probe sees would be unbounded; a probe above the cell with
    // the base offset always sees it unless the cell is degenerate.
    let verify = verification_probes(ctx, compact, s, strategy);

    // Rows of moderate length are computed once against all atoms; wide
    // probes are re-evaluated against the current support each round.
    let cached: Vec<Option<Vec<(usize, f64)>>> = verify
        .par_iter()
        .map(|z| if wide_probe(ctx, compact, z) { None } else { Some(full.row(ctx, compact, z)) })
        .collect();

    let mut rounds = 0;
    let (sol, raw_max) = loop {
        let sol = lp.solve()?;
        let support = AtomIndex::build(compact, (0..compact.len()).filter(|&j| sol.x[j] > 0.0));
        let verify_vals: Vec<f64> = verify
            .par_iter()
            .zip(&cached)
            .map(|(z, row)| match row {
                Some(r) => r.iter().map(|&(j, c)| sol.x[j] * c).sum(),
                None => support.row(ctx, compact, z).iter().map(|&(j, c)| sol.x[j] * c).sum(),
            })
            .collect();
        let lp_vals = lp.row_activity(&sol.x);
        let max_all = verify_vals.iter().chain(&lp_vals).cloned().fold(0.0, f64::max);
        let mut violated: Vec<usize> = (0..verify.len()).filter(|&i| verify_vals[i] > 1.0 + FEAS_TOL).collect();
        if violated.is_empty() || rounds >= strategy.max_rounds {
            break (sol, max_all);
        }
        violated.sort_by(|&a, &b| verify_vals[b].total_cmp(&verify_vals[a]));
        violated.truncate(MAX_NEW_ROWS);
        for i in violated {
            let row = match &cached[i] {
                Some(r) => r.clone(),
                None => full.row(ctx, compact, &verify[i]),
            };
            lp.push_row(row);
            probes.push(verify[i].clone());
        }
        rounds += 1;
    };

    let scale = 1.0 / raw_max.max(1.0);
    let densities: Vec<f64> = sol.x.iter().map(|u| u * scale).collect();
    let weights: Vec<f64> = densities.iter().zip(&objective).map(|(u, c)| u * c).collect();
    let cap_local: f64 = weights.iter().sum();
    let q = ctx.spec().q();
    let log_scale = q * compact.frame.scale.ln();
    let log_cap = if cap_local > 0.0 { cap_local.ln() + log_scale } else { f64::NEG_INFINITY };
    let support = AtomIndex::build(compact, (0..compact.len()).filter(|&j| densities[j] > 0.0));
    probes.extend(verify);
    Ok(EquilibriumSolution {
        compact: compact.clone(),
        weights,
        densities,
        cap_local,
        cap_value: log_cap.exp(),
        log_cap,
        dual_bound: sol.dual_bound * log_scale.exp(),
        probes,
        max_potential: raw_max * scale,
        raw_max_potential: raw_max,
        status: match sol.status {
            LpStatus::Optimal => SolveStatus::Optimal,
            LpStatus::IterationLimit => SolveStatus::Suboptimal,
        },
        rounds,
        base_offset: s,
        lp,
        support: std::sync::Arc::new(support),
    })
}

/// `(cap F, cap δ_r F, ratio)`.
pub fn capacity_scaling_check(
    ctx: &Ctx,
    compact: &DiscreteCompact,
    r: f64,
    strategy: &ProbeStrategy,
) -> Result<(f64, f64, f64), CapacityError> {
    let base = solve_equilibrium(ctx, compact, strategy)?;
    if r == 1.0 {
        return Ok((base.cap_value, base.cap_value, 1.0));
    }
    let dil = solve_equilibrium(ctx, &compact.dilated(ctx.spec(), r)?, strategy)?;
    Ok((base.cap_value, dil.cap_value, dil.cap_value / base.cap_value))
}

/// `(cap F, cap z₀∘F)`.
pub fn translation_invariance_check(
    ctx: &Ctx,
    compact: &DiscreteCompact,
    z0: &Point,
    strategy: &ProbeStrategy,
) -> Result<(f64, f64), CapacityError> {
    let base = solve_equilibrium(ctx, compact, strategy)?;
    let moved = solve_equilibrium(ctx, &compact.translated(ctx.spec(), z0), strategy)?;
    Ok((base.cap_value, moved.cap_value))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{flat_compact, solid_box, Atom, BaseSet, CompactMeta, Frame};
    use crate::operator::{OperatorConfig, OperatorSpec};

    fn heat() -> Ctx {
        KernelContext::from_spec(OperatorSpec::validate(&OperatorConfig::heat(1)).unwrap())
    }

    #[test]
    fn unit_segment_has_unit_capacity() {
        let ctx = heat();
        let seg = flat_compact(&BaseSet::Box { lo: vec![0.0], hi: vec![1.0] }, 0.0, 50).unwrap();
        let sol = solve_equilibrium(&ctx, &seg, &ProbeStrategy::default()).unwrap();
        assert!((sol.cap_value - 1.0).abs() < 0.05, "{}", sol.cap_value);
        assert!(sol.max_potential <= 1.0 + FEAS_TOL);
        assert!(sol.weights.iter().all(|&w| w >= 0.0));
    }

    #[test]
    fn potential_vanishes_below_and_matches_erf_above() {
        let ctx = heat();
        let seg = flat_compact(&BaseSet::Box { lo: vec![-1.0], hi: vec![1.0] }, 0.0, 80).unwrap();
        let sol = solve_equilibrium(&ctx, &seg, &ProbeStrategy::default()).unwrap();
        assert_eq!(sol.potential_at(&ctx, &Point::new(vec![0.3], -0.1)), 0.0);
        let v = sol.potential_at(&ctx, &Point::new(vec![0.0], 1.0));
        assert!((v - libm::erf(0.5)).abs() < 1e-3, "{v}");
    }

    #[test]
    fn single_point_is_polar() {
        let ctx = heat();
        let atom = Atom { x: vec![0.0], t: 0.0, half_width: vec![0.0], dt: 0.0, volume: 0.0 };
        let c = DiscreteCompact::new(vec![atom], Frame::identity(1), CompactMeta::Custom("point".into()));
        let sol = solve_equilibrium(&ctx, &c, &ProbeStrategy::default()).unwrap();
        assert!(sol.cap_value < 1e-12, "{}", sol.cap_value);
    }

    #[test]
    fn strip_lower_bound_holds() {
        let ctx = heat();
        let f = solid_box(&[0.0], &[1.0], 0.0, 2.0, 12).unwrap();
        let sol = solve_equilibrium(&ctx, &f, &ProbeStrategy::default()).unwrap();
        assert!(sol.cap_value >= 1.0 / 2.0 * 0.97, "{}", sol.cap_value);
    }

    #[test]
    fn empty_compact_is_an_error() {
        let ctx = heat();
        let c = DiscreteCompact::new(vec![], Frame::identity(1), CompactMeta::Custom("none".into()));
        assert_eq!(solve_equilibrium(&ctx, &c, &ProbeStrategy::default()).unwrap_err(), CapacityError::EmptyCompact);
    }
}
