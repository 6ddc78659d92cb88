//! Uniform sampling grids over an axis-aligned box.

use serde::{Deserialize, Serialize};

/// Axis-aligned box `[lower_d, upper_d]` per coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Domain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        Domain { lower, upper }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    /// Nonempty with finite bounds.
    pub fn is_valid(&self) -> bool {
        self.lower.len() == self.upper.len()
            && !self.lower.is_empty()
            && self
                .lower
                .iter()
                .zip(&self.upper)
                .all(|(l, u)| l.is_finite() && u.is_finite() && l < u)
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (l, u))| *v >= l - tol && *v <= u + tol)
    }

    pub fn diameter(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| (u - l).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Unit outward normals of the box faces that `x` lies on (within `tol`).
    pub fn outward_normals(&self, x: &[f64], tol: f64) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        for d in 0..self.dim() {
            if (x[d] - self.lower[d]).abs() <= tol {
                out.push((d, -1.0));
            }
            if (x[d] - self.upper[d]).abs() <= tol {
                out.push((d, 1.0));
            }
        }
        out
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for d in 0..self.dim() {
            x[d] = x[d].clamp(self.lower[d], self.upper[d]);
        }
    }
}

/// `points` samples per axis, including both endpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub domain: Domain,
    pub points: usize,
    strides: Vec<usize>,
}

impl Grid {
    pub fn new(domain: Domain, points: usize) -> Self {
        let points = points.max(2);
        let n = domain.dim();
        let mut strides = vec![1; n];
        for d in 1..n {
            strides[d] = strides[d - 1] * points;
        }
        Grid {
            domain,
            points,
            strides,
        }
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn len(&self) -> usize {
        self.points.pow(self.dim() as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self, d: usize) -> f64 {
        (self.domain.upper[d] - self.domain.lower[d]) / (self.points - 1) as f64
    }

    pub fn coordinate(&self, d: usize, i: usize) -> f64 {
        if i == self.points - 1 {
            self.domain.upper[d]
        } else {
            self.domain.lower[d] + i as f64 * self.spacing(d)
        }
    }

    pub fn multi_index(&self, mut index: usize) -> Vec<usize> {
        let mut out = vec![0; self.dim()];
        for slot in out.iter_mut() {
            *slot = index % self.points;
            index /= self.points;
        }
        out
    }

    pub fn linear(&self, multi: &[usize]) -> usize {
        multi.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    pub fn point(&self, index: usize) -> Vec<f64> {
        self.multi_index(index)
            .iter()
            .enumerate()
            .map(|(d, &i)| self.coordinate(d, i))
            .collect()
    }

    /// Forward neighbors (`+1` along each axis), so every edge is visited once.
    pub fn forward_neighbors(&self, index: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        let multi = self.multi_index(index);
        (0..self.dim()).filter_map(move |d| {
            (multi[d] + 1 < self.points).then(|| (d, index + self.strides[d]))
        })
    }

    /// All axis neighbors.
    pub fn neighbors(&self, index: usize) -> Vec<usize> {
        let multi = self.multi_index(index);
        let mut out = Vec::with_capacity(2 * self.dim());
        for d in 0..self.dim() {
            if multi[d] > 0 {
                out.push(index - self.strides[d]);
            }
            if multi[d] + 1 < self.points {
                out.push(index + self.strides[d]);
            }
        }
        out
    }

    /// Grid index nearest to `x` (clamped into the box).
    pub fn nearest(&self, x: &[f64]) -> usize {
        let multi: Vec<usize> = (0..self.dim())
            .map(|d| {
                let t = (x[d] - self.domain.lower[d]) / self.spacing(d);
                (t.round().max(0.0) as usize).min(self.points - 1)
            })
            .collect();
        self.linear(&multi)
    }

    /// True when the point lies on the boundary of the box.
    pub fn on_boundary(&self, index: usize) -> bool {
        self.multi_index(index)
            .iter()
            .any(|&i| i == 0 || i + 1 == self.points)
    }
}
