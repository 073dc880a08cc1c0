use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// A point `z = (x, t)` of `R^{N+1}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimePoint<T> {
    pub x: Vec<T>,
    pub t: T,
}

impl<T: Scalar> SpaceTimePoint<T> {
    pub fn new(x: Vec<T>, t: T) -> Self {
        Self { x, t }
    }

    pub fn origin(dim: usize) -> Self {
        Self { x: vec![T::zero(); dim], t: T::zero() }
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite() && self.x.iter().all(|v| v.is_finite())
    }

    /// Parses `"x1,...,xN,t"`.
    pub fn parse(s: &str) -> Option<Self> {
        let vals: Vec<f64> = s.split(',').map(|p| p.trim().parse().ok()).collect::<Option<_>>()?;
        let (t, x) = vals.split_last()?;
        Some(Self { x: x.iter().map(|&v| T::lit(v)).collect(), t: T::lit(*t) })
    }

    /// Flattened `(x, t)` coordinates.
    pub fn coords(&self) -> Vec<T> {
        let mut v = self.x.clone();
        v.push(self.t);
        v
    }
}
