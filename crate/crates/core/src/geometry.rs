//! Domains as composable predicates, and compact sets discretized into
//! cell atoms: Γ-shells around a boundary point, the sets `G_r`, flat sets,
//! solid boxes, and L-cones.
//!
//! An atom is an axis-aligned spatial cell at a single time. Layered sets
//! stack such cells; a measure on the compact is piecewise constant on cells.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::KernelContext;
use crate::linalg::Matrix;
use crate::operator::{alpha, OperatorSpec};
use crate::point::SpaceTimePoint;

type Spec = OperatorSpec<f64>;
type Point = SpaceTimePoint<f64>;

/// Boundary cells of a shell are split this many times before being dropped.
pub const SHELL_REFINE_LEVELS: usize = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("lambda must lie in (0, 1), got {0}")]
    LambdaOutOfRange(f64),
    #[error("shell index must be at least 2, got {0}")]
    ShellIndex(usize),
    #[error("z0 is not a boundary point of the domain: {0}")]
    NotBoundaryPoint(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("{0} must be positive")]
    NonPositive(&'static str),
    #[error("compacts live in different frames")]
    FrameMismatch,
}

/// Axis box in `R^N` used as a flat set, a cone base, or a cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl AxisBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        Self { lo, hi }
    }

    pub fn unbounded(dim: usize) -> Self {
        Self { lo: vec![f64::NEG_INFINITY; dim], hi: vec![f64::INFINITY; dim] }
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.iter().zip(self.lo.iter().zip(&self.hi)).all(|(&v, (&l, &h))| v >= l && v <= h)
    }

    pub fn hull(&self, other: &Self) -> Self {
        Self {
            lo: self.lo.iter().zip(&other.lo).map(|(a, b)| a.min(*b)).collect(),
            hi: self.hi.iter().zip(&other.hi).map(|(a, b)| a.max(*b)).collect(),
        }
    }

    pub fn intersect(&self, other: &Self) -> Self {
        Self {
            lo: self.lo.iter().zip(&other.lo).map(|(a, b)| a.max(*b)).collect(),
            hi: self.hi.iter().zip(&other.hi).map(|(a, b)| a.min(*b)).collect(),
        }
    }

    pub fn is_bounded(&self) -> bool {
        self.lo.iter().chain(&self.hi).all(|v| v.is_finite())
    }

    pub fn measure(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(l, h)| (h - l).max(0.0)).product()
    }
}

/// Bounded spatial set with interior, used for flat compacts and cone bases.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseSet {
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
}

impl BaseSet {
    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            Self::Box { lo, hi } => x.iter().zip(lo.iter().zip(hi)).all(|(&v, (&l, &h))| v >= l && v <= h),
            Self::Ball { center, radius } => {
                x.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() <= radius * radius
            }
        }
    }

    pub fn bounding_box(&self) -> AxisBox {
        match self {
            Self::Box { lo, hi } => AxisBox::new(lo.clone(), hi.clone()),
            Self::Ball { center, radius } => {
                AxisBox::new(center.iter().map(|c| c - radius).collect(), center.iter().map(|c| c + radius).collect())
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Box { lo, .. } => lo.len(),
            Self::Ball { center, .. } => center.len(),
        }
    }
}

/// `z₀∘K_R(B)` with `K_R(B) = {(D_r ξ, −r²) : ξ ∈ B, 0 ≤ r ≤ R}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConeSpec {
    pub base: BaseSet,
    #[serde(rename = "R")]
    pub radius: f64,
    /// Vertex as `[x.., t]`.
    pub vertex: Vec<f64>,
}

/// Composable description of an open set Ω in `R^{N+1}`. Points are written
/// as coordinate lists `[x1, …, xN, t]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainSpec {
    /// Closed space-time box.
    Box {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
    /// `{z : normal · z ≤ offset}`.
    Halfspace {
        normal: Vec<f64>,
        offset: f64,
    },
    /// Euclidean ball in `R^{N+1}`.
    Ball {
        center: Vec<f64>,
        radius: f64,
    },
    /// `{z : (z−c)ᵀ M (z−c) ≤ 1}` for a positive definite `M`.
    Ellipsoid {
        center: Vec<f64>,
        shape: Vec<Vec<f64>>,
    },
    /// Homogeneous cylinder `𝒞_r(z₀)`.
    Cylinder {
        center: Vec<f64>,
        radius: f64,
    },
    /// `z₀∘δ_r(S)`.
    Image {
        z0: Vec<f64>,
        r: f64,
        set: Box<DomainSpec>,
    },
    Cone(ConeSpec),
    Point {
        at: Vec<f64>,
    },
    Empty,
    Everything,
    Union(Vec<DomainSpec>),
    Intersection(Vec<DomainSpec>),
    Complement(Box<DomainSpec>),
}

fn split_point(v: &[f64]) -> Point {
    let (t, x) = v.split_last().expect("non-empty coordinate list");
    Point::new(x.to_vec(), *t)
}

impl DomainSpec {
    /// Ω = `{t > t₀}`, whose complement is the closed past half-space.
    pub fn past_halfspace_complement(dim: usize, t0: f64) -> Self {
        let mut normal = vec![0.0; dim + 1];
        normal[dim] = 1.0;
        Self::Complement(Box::new(Self::Halfspace { normal, offset: t0 }))
    }

    /// Ω = `R^{N+1} ∖ {z₀}`.
    pub fn point_complement(z0: &Point) -> Self {
        Self::Complement(Box::new(Self::Point { at: z0.coords() }))
    }

    pub fn contains(&self, spec: &Spec, z: &Point) -> bool {
        match self {
            Self::Box { lo, hi } => {
                let c = z.coords();
                c.iter().zip(lo.iter().zip(hi)).all(|(&v, (&l, &h))| v >= l && v <= h)
            }
            Self::Halfspace { normal, offset } => {
                z.coords().iter().zip(normal).map(|(a, b)| a * b).sum::<f64>() <= *offset
            }
            Self::Ball { center, radius } => {
                z.coords().iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() <= radius * radius
            }
            Self::Ellipsoid { center, shape } => {
                let d: Vec<f64> = z.coords().iter().zip(center).map(|(a, b)| a - b).collect();
                match Matrix::from_rows(shape) {
                    Some(m) if m.rows() == d.len() && m.cols() == d.len() => m.quad_form(&d) <= 1.0,
                    _ => false,
                }
            }
            Self::Cylinder { center, radius } => spec.cylinder_contains(&split_point(center), *radius, z),
            Self::Image { z0, r, set } => {
                if *r <= 0.0 {
                    return false;
                }
                let w = spec.compose(&spec.inverse(&split_point(z0)), z);
                let local = spec.dilate(1.0 / r, &w).expect("positive scale");
                set.contains(spec, &local)
            }
            Self::Cone(cone) => cone_contains_point(spec, cone, z),
            Self::Point { at } => z.coords() == *at,
            Self::Empty => false,
            Self::Everything => true,
            Self::Union(parts) => parts.iter().any(|p| p.contains(spec, z)),
            Self::Intersection(parts) => parts.iter().all(|p| p.contains(spec, z)),
            Self::Complement(inner) => !inner.contains(spec, z),
        }
    }

    /// Axis box in `R^{N+1}` containing the set (possibly unbounded).
    pub fn bounding_box(&self, spec: &Spec) -> AxisBox {
        let d = spec.dim() + 1;
        match self {
            Self::Box { lo, hi } => AxisBox::new(lo.clone(), hi.clone()),
            Self::Halfspace { normal, offset } => {
                let mut b = AxisBox::unbounded(d);
                let nz: Vec<usize> = (0..d).filter(|&i| normal[i] != 0.0).collect();
                if nz.len() == 1 {
                    let i = nz[0];
                    if normal[i] > 0.0 {
                        b.hi[i] = offset / normal[i];
                    } else {
                        b.lo[i] = offset / normal[i];
                    }
                }
                b
            }
            Self::Ball { center, radius } => {
                AxisBox::new(center.iter().map(|c| c - radius).collect(), center.iter().map(|c| c + radius).collect())
            }
            Self::Ellipsoid { center, shape } => {
                let inv = Matrix::from_rows(shape).and_then(|m| m.inverse());
                match inv {
                    Some(inv) => AxisBox::new(
                        (0..d).map(|i| center[i] - inv[(i, i)].max(0.0).sqrt()).collect(),
                        (0..d).map(|i| center[i] + inv[(i, i)].max(0.0).sqrt()).collect(),
                    ),
                    None => AxisBox::unbounded(d),
                }
            }
            Self::Cylinder { center, radius } => {
                let mut lo = vec![-1.0; d];
                let mut hi = vec![1.0; d];
                lo[d - 1] = -1.0;
                hi[d - 1] = 1.0;
                image_box(spec, &split_point(center), *radius, &AxisBox::new(lo, hi))
            }
            Self::Image { z0, r, set } => {
                let inner = set.bounding_box(spec);
                if inner.is_bounded() {
                    image_box(spec, &split_point(z0), *r, &inner)
                } else {
                    AxisBox::unbounded(d)
                }
            }
            Self::Cone(cone) => {
                let bb = cone.base.bounding_box();
                let mut lo = bb.lo.iter().map(|v| v.min(0.0)).collect::<Vec<_>>();
                let mut hi = bb.hi.iter().map(|v| v.max(0.0)).collect::<Vec<_>>();
                lo.push(-1.0);
                hi.push(0.0);
                image_box(spec, &split_point(&cone.vertex), cone.radius, &AxisBox::new(lo, hi))
            }
            Self::Point { at } => AxisBox::new(at.clone(), at.clone()),
            Self::Empty => AxisBox::new(vec![0.0; d], vec![0.0; d]),
            Self::Everything | Self::Complement(_) => AxisBox::unbounded(d),
            Self::Union(parts) => parts
                .iter()
                .map(|p| p.bounding_box(spec))
                .reduce(|a, b| a.hull(&b))
                .unwrap_or_else(|| AxisBox::new(vec![0.0; d], vec![0.0; d])),
            Self::Intersection(parts) => parts
                .iter()
                .map(|p| p.bounding_box(spec))
                .reduce(|a, b| a.intersect(&b))
                .unwrap_or_else(|| AxisBox::unbounded(d)),
        }
    }
}

/// Box around `z₀∘δ_r(box)`, where `box` lives in local `(x, t)` coordinates,
/// padded to cover the shear over the time range.
fn image_box(spec: &Spec, z0: &Point, r: f64, local: &AxisBox) -> AxisBox {
    let d = spec.dim() + 1;
    let n = spec.dim();
    let mut out = AxisBox::new(vec![f64::INFINITY; d], vec![f64::NEG_INFINITY; d]);
    let corners = 1usize << d;
    for c in 0..corners {
        for step in 0..=16 {
            let frac = step as f64 / 16.0;
            let coords: Vec<f64> = (0..d).map(|i| if (c >> i) & 1 == 1 { local.hi[i] } else { local.lo[i] }).collect();
            let mut w = split_point(&coords);
            w.t = local.lo[n] + frac * (local.hi[n] - local.lo[n]);
            let p = spec.compose(z0, &spec.dilate(r, &w).expect("positive scale"));
            for (i, v) in p.coords().into_iter().enumerate() {
                out.lo[i] = out.lo[i].min(v);
                out.hi[i] = out.hi[i].max(v);
            }
        }
    }
    for i in 0..d {
        let pad = 0.05 * (out.hi[i] - out.lo[i]) + 1e-12;
        out.lo[i] -= pad;
        out.hi[i] += pad;
    }
    out
}

/// Membership in the closed cone `z₀∘K_R(B)`.
pub fn cone_contains_point(spec: &Spec, cone: &ConeSpec, z: &Point) -> bool {
    let v = split_point(&cone.vertex);
    let w = spec.compose(&spec.inverse(&v), z);
    if w.t > 0.0 {
        return false;
    }
    let r = (-w.t).sqrt();
    if r > cone.radius {
        return false;
    }
    if r == 0.0 {
        return w.x.iter().all(|&c| c == 0.0);
    }
    let xi = spec.dilate_space(1.0 / r, &w.x).expect("positive scale");
    cone.base.contains(&xi)
}

/// Frame `z ↦ origin∘δ_scale(z)` from local atom coordinates to physical ones.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub origin: Point,
    pub scale: f64,
}

impl Frame {
    pub fn identity(dim: usize) -> Self {
        Self { origin: Point::origin(dim), scale: 1.0 }
    }

    pub fn is_identity(&self) -> bool {
        self.scale == 1.0 && self.origin.t == 0.0 && self.origin.x.iter().all(|&v| v == 0.0)
    }

    pub fn to_physical(&self, spec: &Spec, w: &Point) -> Point {
        if self.is_identity() {
            return w.clone();
        }
        spec.compose(&self.origin, &spec.dilate(self.scale, w).expect("positive scale"))
    }

    pub fn to_local(&self, spec: &Spec, z: &Point) -> Point {
        if self.is_identity() {
            return z.clone();
        }
        let w = spec.compose(&spec.inverse(&self.origin), z);
        spec.dilate(1.0 / self.scale, &w).expect("positive scale")
    }
}

/// A spatial cell at one time; `dt` is the time thickness it stands for
/// (zero for flat sets).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub x: Vec<f64>,
    pub t: f64,
    pub half_width: Vec<f64>,
    pub dt: f64,
    /// Quadrature volume: spatial measure for flat sets, space-time measure
    /// for layered ones.
    pub volume: f64,
}

impl Atom {
    pub fn cell_measure(&self) -> f64 {
        self.half_width.iter().map(|h| 2.0 * h).product()
    }

    pub fn point(&self) -> Point {
        Point::new(self.x.clone(), self.t)
    }

    pub fn lo(&self) -> Vec<f64> {
        self.x.iter().zip(&self.half_width).map(|(c, h)| c - h).collect()
    }

    pub fn hi(&self) -> Vec<f64> {
        self.x.iter().zip(&self.half_width).map(|(c, h)| c + h).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompactMeta {
    Flat { set: BaseSet, tau: f64, resolution: usize },
    SolidBox { lo: Vec<f64>, hi: Vec<f64>, a: f64, b: f64, resolution: usize },
    Shell { k: usize, lambda: f64, resolution: usize, log_rho: f64 },
    GSet { r: f64, resolution: usize },
    Union(Vec<CompactMeta>),
    Custom(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteCompact {
    pub atoms: Vec<Atom>,
    pub frame: Frame,
    pub meta: CompactMeta,
    /// Local time span `[a, b]` of the atoms.
    pub time_span: (f64, f64),
}

impl DiscreteCompact {
    pub fn new(atoms: Vec<Atom>, frame: Frame, meta: CompactMeta) -> Self {
        let time_span = atoms.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), at| (a.min(at.t), b.max(at.t)));
        Self { atoms, frame, meta, time_span }
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Σ volumes in local coordinates.
    pub fn local_measure(&self) -> f64 {
        self.atoms.iter().map(|a| a.volume).sum()
    }

    /// Σ volumes in physical coordinates. Layered sets scale by `ρ^{Q+2}`,
    /// flat ones by `ρ^Q`.
    pub fn measure_estimate(&self, spec: &Spec) -> f64 {
        self.log_measure(spec).exp()
    }

    pub fn log_measure(&self, spec: &Spec) -> f64 {
        let local = self.local_measure();
        if local <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let layered = self.atoms.iter().any(|a| a.dt > 0.0);
        let exp = spec.hom_dim() as f64 + if layered { 2.0 } else { 0.0 };
        local.ln() + exp * self.frame.scale.ln()
    }

    pub fn physical_point(&self, spec: &Spec, i: usize) -> Point {
        self.frame.to_physical(spec, &self.atoms[i].point())
    }

    /// Union of two compacts in the same frame.
    pub fn union(&self, other: &Self) -> Result<Self, GeometryError> {
        if self.frame != other.frame {
            return Err(GeometryError::FrameMismatch);
        }
        let atoms = self.atoms.iter().chain(&other.atoms).cloned().collect();
        Ok(Self::new(atoms, self.frame.clone(), CompactMeta::Union(vec![self.meta.clone(), other.meta.clone()])))
    }

    /// `δ_r(F)`. Atoms are moved themselves when the frame is trivial, so the
    /// result is a genuinely different discretization.
    pub fn dilated(&self, spec: &Spec, r: f64) -> Result<Self, GeometryError> {
        if !(r > 0.0) {
            return Err(GeometryError::NonPositive("dilation factor"));
        }
        if !self.frame.is_identity() {
            let origin = spec.dilate(r, &self.frame.origin).expect("positive scale");
            let frame = Frame { origin, scale: self.frame.scale * r };
            return Ok(Self { frame, ..self.clone() });
        }
        let q = spec.hom_dim() as i32;
        let atoms = self
            .atoms
            .iter()
            .map(|a| {
                let layered = a.dt > 0.0;
                Atom {
                    x: spec.dilate_space(r, &a.x).expect("positive scale"),
                    t: r * r * a.t,
                    half_width: spec.dilate_space(r, &a.half_width).expect("positive scale"),
                    dt: r * r * a.dt,
                    volume: a.volume * r.powi(if layered { q + 2 } else { q }),
                }
            })
            .collect();
        Ok(Self::new(atoms, self.frame.clone(), self.meta.clone()))
    }

    /// `z₀∘F`. Each layer is shifted rigidly by `E(τ) x₀`.
    pub fn translated(&self, spec: &Spec, z0: &Point) -> Self {
        if !self.frame.is_identity() {
            let frame = Frame { origin: spec.compose(z0, &self.frame.origin), scale: self.frame.scale };
            return Self { frame, ..self.clone() };
        }
        let atoms = self
            .atoms
            .iter()
            .map(|a| {
                let p = spec.compose(z0, &a.point());
                Atom { x: p.x, t: p.t, ..a.clone() }
            })
            .collect();
        Self::new(atoms, self.frame.clone(), self.meta.clone())
    }
}

/// Cells of a uniform grid over `set`'s bounding box (`resolution` per axis)
/// whose centres lie in the set, at time `tau`.
pub fn flat_compact(set: &BaseSet, tau: f64, resolution: usize) -> Result<DiscreteCompact, GeometryError> {
    if resolution == 0 {
        return Err(GeometryError::NonPositive("resolution"));
    }
    let bb = set.bounding_box();
    let dim = set.dim();
    let hw: Vec<f64> = (0..dim).map(|i| (bb.hi[i] - bb.lo[i]) / (2.0 * resolution as f64)).collect();
    if hw.iter().any(|h| !(*h > 0.0)) {
        return Err(GeometryError::NonPositive("set width"));
    }
    let measure: f64 = hw.iter().map(|h| 2.0 * h).product();
    let mut atoms = Vec::new();
    for_each_index(&vec![resolution; dim], |idx| {
        let x: Vec<f64> = (0..dim).map(|i| bb.lo[i] + (2 * idx[i] + 1) as f64 * hw[i]).collect();
        if set.contains(&x) {
            atoms.push(Atom { x, t: tau, half_width: hw.clone(), dt: 0.0, volume: measure });
        }
    });
    Ok(DiscreteCompact::new(atoms, Frame::identity(dim), CompactMeta::Flat { set: set.clone(), tau, resolution }))
}

/// Solid box `A × [a, b]` as `resolution` layers of `resolution^N` cells.
pub fn solid_box(lo: &[f64], hi: &[f64], a: f64, b: f64, resolution: usize) -> Result<DiscreteCompact, GeometryError> {
    if resolution == 0 {
        return Err(GeometryError::NonPositive("resolution"));
    }
    if !(b > a) {
        return Err(GeometryError::NonPositive("time extent"));
    }
    let set = BaseSet::Box { lo: lo.to_vec(), hi: hi.to_vec() };
    let flat = flat_compact(&set, 0.0, resolution)?;
    let dt = (b - a) / resolution as f64;
    let mut atoms = Vec::with_capacity(flat.len() * resolution);
    for l in 0..resolution {
        let t = a + (l as f64 + 0.5) * dt;
        for at in &flat.atoms {
            atoms.push(Atom { t, dt, volume: at.volume * dt, ..at.clone() });
        }
    }
    Ok(DiscreteCompact::new(
        atoms,
        Frame::identity(lo.len()),
        CompactMeta::SolidBox { lo: lo.to_vec(), hi: hi.to_vec(), a, b, resolution },
    ))
}

/// Calls `f` on every multi-index in `[0, n_0) × … × [0, n_{d-1})`.
fn for_each_index(n: &[usize], mut f: impl FnMut(&[usize])) {
    if n.contains(&0) {
        return;
    }
    let mut idx = vec![0usize; n.len()];
    loop {
        f(&idx);
        let mut i = 0;
        loop {
            if i == n.len() {
                return;
            }
            idx[i] += 1;
            if idx[i] < n[i] {
                break;
            }
            idx[i] = 0;
            i += 1;
        }
    }
}

/// Minimum of `ξᵀMξ` over a box for positive definite `M`, by enumerating
/// the active sets (each coordinate free, at its lower, or at its upper
/// bound) and keeping the feasible stationary points.
pub fn box_min_quadratic(m: &Matrix<f64>, lo: &[f64], hi: &[f64]) -> f64 {
    let n = lo.len();
    if lo.iter().zip(hi).all(|(&l, &h)| l <= 0.0 && h >= 0.0) {
        return 0.0;
    }
    let mut best = f64::INFINITY;
    let total = 3usize.pow(n as u32);
    let mut state = vec![0u8; n];
    for code in 0..total {
        let mut c = code;
        for s in state.iter_mut() {
            *s = (c % 3) as u8;
            c /= 3;
        }
        let free: Vec<usize> = (0..n).filter(|&i| state[i] == 0).collect();
        let mut x: Vec<f64> = (0..n)
            .map(|i| match state[i] {
                1 => lo[i],
                2 => hi[i],
                _ => 0.0,
            })
            .collect();
        if !free.is_empty() {
            let k = free.len();
            let mut sub = Matrix::zeros(k, k);
            let mut rhs = vec![0.0; k];
            for (a, &i) in free.iter().enumerate() {
                for (b, &j) in free.iter().enumerate() {
                    sub[(a, b)] = m[(i, j)];
                }
                rhs[a] = -(0..n).filter(|j| state[*j] != 0).map(|j| m[(i, j)] * x[j]).sum::<f64>();
            }
            let Some(l) = sub.cholesky() else { continue };
            let sol = crate::linalg::cholesky_solve(&l, &rhs);
            let tol = 1e-12;
            let ok = free.iter().zip(&sol).all(|(&i, &v)| {
                let w = (hi[i] - lo[i]).abs() * tol + tol;
                v >= lo[i] - w && v <= hi[i] + w
            });
            if !ok {
                continue;
            }
            for (&i, v) in free.iter().zip(sol) {
                x[i] = v.clamp(lo[i], hi[i]);
            }
        }
        best = best.min(m.quad_form(&x));
    }
    best
}

fn box_max_quadratic(m: &Matrix<f64>, lo: &[f64], hi: &[f64]) -> f64 {
    let n = lo.len();
    let mut best = 0.0f64;
    for c in 0..(1usize << n) {
        let x: Vec<f64> = (0..n).map(|i| if (c >> i) & 1 == 1 { hi[i] } else { lo[i] }).collect();
        best = best.max(m.quad_form(&x));
    }
    best
}

/// Checks `z₀ ∉ int Ω` and that `𝒞_ε(z₀)` meets Ω, on a sample grid.
pub fn check_boundary_point(spec: &Spec, domain: &DomainSpec, z0: &Point, eps: f64) -> Result<(), GeometryError> {
    if z0.dim() != spec.dim() {
        return Err(GeometryError::DimensionMismatch(format!(
            "z0 has {} space coordinates, operator has {}",
            z0.dim(),
            spec.dim()
        )));
    }
    let levels = [-1.0, -0.5, 0.0, 0.5, 1.0];
    let n = spec.dim();
    let mut outside_seen = !domain.contains(spec, z0);
    let mut inside_seen = false;
    let mut dims = vec![levels.len(); n + 1];
    dims[n] = levels.len();
    for_each_index(&dims, |idx| {
        if outside_seen && inside_seen {
            return;
        }
        let x: Vec<f64> = idx[..n].iter().map(|&i| levels[i]).collect();
        if spec.hom_norm(&x) > 1.0 {
            return;
        }
        let w = Point::new(x, levels[idx[n]]);
        let z = spec.compose(z0, &spec.dilate(eps, &w).expect("positive scale"));
        if domain.contains(spec, &z) {
            inside_seen = true;
        } else {
            outside_seen = true;
        }
    });
    if !outside_seen {
        return Err(GeometryError::NotBoundaryPoint("a neighbourhood of z0 lies inside the domain".into()));
    }
    if !inside_seen {
        return Err(GeometryError::NotBoundaryPoint("the domain does not come near z0".into()));
    }
    Ok(())
}

/// Log scale `ln ρ` of shell `k`: `ρ² = T_k = (c_N λ^{α(k)})^{2/Q}`.
pub fn shell_log_rho(spec: &Spec, lambda: f64, k: usize) -> f64 {
    let log_level = alpha(k as f64) * (1.0 / lambda).ln();
    0.5 * (2.0 / spec.q()) * (spec.log_c_n() - log_level)
}

/// Γ-shell `{z ∈ Ω^c : λ^{−α(k)} ≤ Γ(z₀, z) ≤ λ^{−α(k+1)}}`, discretized in
/// the frame `z₀∘δ_ρ` where the outer superlevel set has unit time depth.
///
/// Grid: `resolution` layers in `s ∈ (0, 1]` (local time `−s`), and per axis
/// `resolution` cells across the widest extent of the outer superlevel set.
/// Cells wholly inside the band are atoms; cells straddling its boundary are
/// split up to [`SHELL_REFINE_LEVELS`] times. An atom is kept when its
/// centre lies in Ω^c.
pub fn shell(
    ctx: &KernelContext<f64>,
    domain: &DomainSpec,
    z0: &Point,
    lambda: f64,
    k: usize,
    resolution: usize,
) -> Result<DiscreteCompact, GeometryError> {
    let spec = ctx.spec();
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(GeometryError::LambdaOutOfRange(lambda));
    }
    if k < 2 {
        return Err(GeometryError::ShellIndex(k));
    }
    if resolution == 0 {
        return Err(GeometryError::NonPositive("resolution"));
    }
    let log_rho = shell_log_rho(spec, lambda, k);
    let rho = log_rho.exp();
    check_boundary_point(spec, domain, z0, rho / resolution as f64)?;
    let frame = Frame { origin: z0.clone(), scale: rho };

    let q = spec.q();
    let n = spec.dim();
    let ln_inv_lambda = (1.0 / lambda).ln();
    // T_{k+1}/T_k in local units.
    let inner_depth = ((2.0 / q) * (alpha(k as f64) - alpha(k as f64 + 1.0)) * ln_inv_lambda).exp();
    let sbar = ctx.sbar();
    let exps = spec.coord_exponents();
    let ext: Vec<f64> =
        (0..n).map(|i| 2.0 * sbar[(i, i)].sqrt() * (q / (2.0 * exps[i] as f64 * std::f64::consts::E)).sqrt()).collect();
    let h: Vec<f64> = ext.iter().map(|e| 2.0 * e / resolution as f64).collect();
    let ds = 1.0 / resolution as f64;

    let layers: Vec<Vec<Atom>> = (0..resolution)
        .into_par_iter()
        .map(|l| {
            let s = (l as f64 + 0.5) * ds;
            let r_out2 = 0.5 * q * (1.0 / s).ln();
            let r_in2 = (0.5 * q * (inner_depth / s).ln()).max(0.0);
            if r_out2 <= r_in2 {
                return Vec::new();
            }
            // q(ξ) = ¼ ξᵀ E(s)ᵀ C(s)⁻¹ E(s) ξ; its inverse is 2·backward_cov(s).
            let e = spec.mat_exp_e(s);
            let c_inv = spec.gramian_c(s).expect("positive time").inverse_spd().expect("Kalman");
            let m = e.transpose().matmul(&c_inv).matmul(&e).scale(0.25).symmetrized();
            let bcov = ctx.backward_cov(s);
            let half_ext: Vec<f64> = (0..n).map(|i| (r_out2 * 2.0 * bcov[(i, i)]).sqrt()).collect();
            let counts: Vec<i64> = (0..n).map(|i| ((half_ext[i] / h[i]) + 0.5).ceil() as i64).collect();
            let dims: Vec<usize> = counts.iter().map(|&c| (2 * c + 1) as usize).collect();
            let mut out = Vec::new();
            for_each_index(&dims, |idx| {
                let centre: Vec<f64> = (0..n).map(|i| (idx[i] as i64 - counts[i]) as f64 * h[i]).collect();
                let hw: Vec<f64> = h.iter().map(|v| 0.5 * v).collect();
                collect_band_cells(&m, r_in2, r_out2, centre, hw, SHELL_REFINE_LEVELS, &mut |c, hw| {
                    let volume = hw.iter().map(|v| 2.0 * v).product::<f64>() * ds;
                    out.push(Atom { x: c, t: -s, half_width: hw, dt: ds, volume });
                });
            });
            out.retain(|a| !domain.contains(spec, &frame.to_physical(spec, &a.point())));
            out
        })
        .collect();
    let atoms = layers.into_iter().flatten().collect();
    Ok(DiscreteCompact::new(atoms, frame, CompactMeta::Shell { k, lambda, resolution, log_rho }))
}

fn collect_band_cells(
    m: &Matrix<f64>,
    r_in2: f64,
    r_out2: f64,
    centre: Vec<f64>,
    hw: Vec<f64>,
    levels_left: usize,
    emit: &mut impl FnMut(Vec<f64>, Vec<f64>),
) {
    let lo: Vec<f64> = centre.iter().zip(&hw).map(|(c, h)| c - h).collect();
    let hi: Vec<f64> = centre.iter().zip(&hw).map(|(c, h)| c + h).collect();
    let qmin = box_min_quadratic(m, &lo, &hi);
    if qmin > r_out2 {
        return;
    }
    let qmax = box_max_quadratic(m, &lo, &hi);
    if qmax < r_in2 {
        return;
    }
    if qmax <= r_out2 && qmin >= r_in2 {
        emit(centre, hw);
        return;
    }
    if levels_left == 0 {
        return;
    }
    let n = centre.len();
    let sub_hw: Vec<f64> = hw.iter().map(|v| 0.5 * v).collect();
    for c in 0..(1usize << n) {
        let sub_c: Vec<f64> =
            (0..n).map(|i| centre[i] + if (c >> i) & 1 == 1 { sub_hw[i] } else { -sub_hw[i] }).collect();
        collect_band_cells(m, r_in2, r_out2, sub_c, sub_hw.clone(), levels_left - 1, emit);
    }
}

/// Number of shell atoms whose centre violates one of the two Γ bounds when
/// rechecked through the kernel (local frame, levels rescaled by `ρ^Q`).
pub fn shell_violations(ctx: &KernelContext<f64>, compact: &DiscreteCompact) -> usize {
    let CompactMeta::Shell { k, lambda, log_rho, .. } = compact.meta else {
        return 0;
    };
    let q = ctx.spec().q();
    let ln_inv = (1.0 / lambda).ln();
    let lo = alpha(k as f64) * ln_inv + q * log_rho;
    let hi = alpha(k as f64 + 1.0) * ln_inv + q * log_rho;
    let origin = Point::origin(ctx.dim());
    compact
        .atoms
        .iter()
        .filter(|a| {
            let g = ctx.log_gamma(&origin, &a.point());
            !(g >= lo - 1e-12 * lo.abs().max(1.0) && g <= hi + 1e-12 * hi.abs().max(1.0))
        })
        .count()
}

/// `G_r = {z ∈ 𝒞_r(z₀) ∖ Ω : t ≤ t₀}` in the frame `z₀∘δ_r`, as
/// `resolution` layers of `resolution^N` cells over `[−1,1]^N`.
pub fn g_r_set(
    ctx: &KernelContext<f64>,
    domain: &DomainSpec,
    z0: &Point,
    r: f64,
    resolution: usize,
) -> Result<DiscreteCompact, GeometryError> {
    let spec = ctx.spec();
    if !(r > 0.0) {
        return Err(GeometryError::NonPositive("cylinder radius"));
    }
    if resolution == 0 {
        return Err(GeometryError::NonPositive("resolution"));
    }
    let n = spec.dim();
    let frame = Frame { origin: z0.clone(), scale: r };
    let h = 2.0 / resolution as f64;
    let ds = 1.0 / resolution as f64;
    let hw = vec![0.5 * h; n];
    let cell = h.powi(n as i32);
    let layers: Vec<Vec<Atom>> = (0..resolution)
        .into_par_iter()
        .map(|l| {
            let t = -(l as f64 + 0.5) * ds;
            let mut out = Vec::new();
            for_each_index(&vec![resolution; n], |idx| {
                let x: Vec<f64> = idx.iter().map(|&i| -1.0 + (i as f64 + 0.5) * h).collect();
                if spec.hom_norm(&x) > 1.0 {
                    return;
                }
                let a = Atom { x, t, half_width: hw.clone(), dt: ds, volume: cell * ds };
                if !domain.contains(spec, &frame.to_physical(spec, &a.point())) {
                    out.push(a);
                }
            });
            out
        })
        .collect();
    Ok(DiscreteCompact::new(layers.into_iter().flatten().collect(), frame, CompactMeta::GSet { r, resolution }))
}

/// Outcome of sampling a cone against Ω^c.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConeCheck {
    pub contained: bool,
    pub witness: Option<Point>,
    pub checked: usize,
}

/// Samples `z₀∘K_R(B)` on a `(ξ, r)` grid, refined geometrically near `r = 0`,
/// and reports whether every sample lies in Ω^c.
pub fn cone_check(spec: &Spec, domain: &DomainSpec, z0: &Point, cone: &ConeSpec, samples: usize) -> ConeCheck {
    let samples = samples.max(2);
    let n = spec.dim();
    let bb = cone.base.bounding_box();
    let mut bases = Vec::new();
    for_each_index(&vec![samples; n], |idx| {
        let xi: Vec<f64> =
            (0..n).map(|i| bb.lo[i] + (bb.hi[i] - bb.lo[i]) * idx[i] as f64 / (samples - 1) as f64).collect();
        if cone.base.contains(&xi) {
            bases.push(xi);
        }
    });
    if let BaseSet::Ball { center, .. } = &cone.base {
        bases.push(center.clone());
    }
    let mut radii: Vec<f64> = (1..=samples).map(|j| cone.radius * j as f64 / samples as f64).collect();
    radii.extend((1..=40).map(|m| cone.radius * 0.5f64.powi(m)));
    let mut checked = 1;
    if domain.contains(spec, z0) {
        return ConeCheck { contained: false, witness: Some(z0.clone()), checked };
    }
    for &r in &radii {
        for xi in &bases {
            let w = Point::new(spec.dilate_space(r, xi).expect("positive scale"), -r * r);
            let z = spec.compose(z0, &w);
            checked += 1;
            if domain.contains(spec, &z) {
                return ConeCheck { contained: false, witness: Some(z), checked };
            }
        }
    }
    ConeCheck { contained: true, witness: None, checked }
}

/// Tries a family of box-based cones of decreasing size and returns the
/// first one found inside Ω^c.
pub fn cone_search(spec: &Spec, domain: &DomainSpec, z0: &Point, samples: usize) -> Option<ConeSpec> {
    let n = spec.dim();
    let centres = [-1.5, -0.5, 0.5, 1.5, 0.0];
    for radius in [1.0, 0.1, 0.01] {
        let mut found = None;
        for_each_index(&vec![centres.len(); n], |idx| {
            if found.is_some() {
                return;
            }
            let c: Vec<f64> = idx.iter().map(|&i| centres[i]).collect();
            let cone = ConeSpec {
                base: BaseSet::Box { lo: c.iter().map(|v| v - 0.5).collect(), hi: c.iter().map(|v| v + 0.5).collect() },
                radius,
                vertex: z0.coords(),
            };
            if cone_check(spec, domain, z0, &cone, samples).contained {
                found = Some(cone);
            }
        });
        if found.is_some() {
            return found;
        }
    }
    None
}

/// `|Ω_k^c| / λ^{((Q+2)/Q) α(k)}` in log space; `−∞` for an empty shell.
pub fn shell_log_measure_term(spec: &Spec, compact: &DiscreteCompact, lambda: f64, k: usize) -> f64 {
    let q = spec.q();
    compact.log_measure(spec) + (q + 2.0) / q * alpha(k as f64) * (1.0 / lambda).ln()
}

/// Measure terms for every `k` in `k_range`.
pub fn shell_measure_sum_terms(
    ctx: &KernelContext<f64>,
    domain: &DomainSpec,
    z0: &Point,
    lambda: f64,
    k_range: std::ops::RangeInclusive<usize>,
    resolution: usize,
) -> Result<Vec<f64>, GeometryError> {
    k_range
        .map(|k| {
            let sh = shell(ctx, domain, z0, lambda, k, resolution)?;
            Ok(super::kernel::exp_or_zero(shell_log_measure_term(ctx.spec(), &sh, lambda, k)))
        })
        .collect()
}
