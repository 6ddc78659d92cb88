//! Slices, extended cells, cells and their adjacency.
//!
//! The domain is rasterized on a uniform grid. Every grid point is labeled with the
//! tuple `y` of slice indices (one per family); cells are the connected components of
//! each label class under axis adjacency.

use std::collections::{BTreeMap, VecDeque};

use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::config::Config;
use crate::expr::EvalError;
use crate::grid::{Domain, Grid};
use crate::model::{bisect_level, FamilySamples, Model, PartitioningFamily};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PartitionError {
    #[error(
        "family {family} does not cover the domain: phi = {value} at {point:?} lies outside [{}, {}]",
        range[0], range[1]
    )]
    Coverage {
        family: usize,
        point: Vec<f64>,
        value: f64,
        range: [f64; 2],
    },
    #[error(
        "partition is not resolved by the grid: extended cell {y:?} has {coarse} components at {coarse_points} points per axis but {fine} at {fine_points}"
    )]
    Resolution {
        y: Vec<usize>,
        coarse: usize,
        fine: usize,
        coarse_points: usize,
        fine_points: usize,
    },
    #[error("point {0:?} lies outside the domain")]
    OutOfDomain(Vec<f64>),
    #[error("no cell with slice tuple {y:?} near {point:?}")]
    NoCell { y: Vec<usize>, point: Vec<f64> },
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Slice {
    pub family: usize,
    pub index: usize,
    pub band: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cell {
    pub id: usize,
    /// Slice index per family.
    pub y: Vec<usize>,
    /// Component index among the cells sharing `y`.
    pub z: usize,
    pub representative: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub grid_points: usize,
    /// Grid points whose axis neighbors all belong to this cell.
    pub interior_points: usize,
}

impl Cell {
    pub fn name(&self) -> String {
        format!("c{}", self.id)
    }
}

/// Two cells sharing a level surface of exactly one family.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Adjacency {
    /// Cell ids, smaller first.
    pub cells: [usize; 2],
    /// Families whose slice differs between the two cells.
    pub families: Vec<usize>,
    pub facet_points: Vec<Vec<f64>>,
}

/// Which outermost level a domain-boundary point lies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OuterLevel {
    Lowest,
    Highest,
}

/// A grid point of a cell on the boundary of the domain box.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundarySample {
    pub point: Vec<f64>,
    /// Outward unit normals `(axis, ±1)` of the box faces through the point.
    pub normals: Vec<(usize, f64)>,
    /// Families whose outermost level passes through the point.
    pub outer: Vec<(usize, OuterLevel)>,
}

/// Result of locating a point.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Located {
    Interior(usize),
    /// On a level surface; all cells touching the point.
    Boundary(Vec<usize>),
}

#[derive(Debug, Clone, Serialize)]
pub struct CellComplex {
    pub domain: Domain,
    pub families: Vec<PartitioningFamily>,
    pub slices: Vec<Vec<Slice>>,
    pub cells: Vec<Cell>,
    pub adjacency: Vec<Adjacency>,
    pub boundary: Vec<Vec<BoundarySample>>,
    pub grid_points: usize,
    #[serde(skip)]
    grid: Grid,
    #[serde(skip)]
    labels: Vec<usize>,
    #[serde(skip)]
    eps_face: f64,
}

fn level_tolerance(eps_face: f64, a: f64) -> f64 {
    eps_face * a.abs().max(1.0)
}

/// Slice index of a value, snapping values within tolerance of the outer levels.
fn slice_with_tolerance(fam: &PartitioningFamily, v: f64, eps_face: f64) -> Option<usize> {
    let lo = fam.levels[0];
    let hi = *fam.levels.last().expect("levels");
    let v = if v < lo && lo - v <= level_tolerance(eps_face, lo) {
        lo
    } else if v > hi && v - hi <= level_tolerance(eps_face, hi) {
        hi
    } else {
        v
    };
    fam.slice_of(v)
}

/// Slices of one family that meet the domain. Fails if a grid sample of the domain
/// has `φ` outside `[a_0, a_k]`.
pub fn build_slices(
    fam: &PartitioningFamily,
    family: usize,
    domain: &Domain,
    config: &Config,
) -> Result<Vec<Slice>, PartitionError> {
    let grid = Grid::new(domain.clone(), config.grid);
    let samples = FamilySamples::new(fam, &grid)?;
    slices_from_samples(fam, family, &grid, &samples, config.eps_face)
}

fn slices_from_samples(
    fam: &PartitioningFamily,
    family: usize,
    grid: &Grid,
    samples: &FamilySamples,
    eps_face: f64,
) -> Result<Vec<Slice>, PartitionError> {
    let mut hit = vec![false; fam.slice_count()];
    for (i, &v) in samples.values.iter().enumerate() {
        match slice_with_tolerance(fam, v, eps_face) {
            Some(h) => {
                hit[h] = true;
                // A point on an interior level touches the slice below as well.
                if h > 0 && (v - fam.levels[h]).abs() <= level_tolerance(eps_face, v) {
                    hit[h - 1] = true;
                }
            }
            None => {
                return Err(PartitionError::Coverage {
                    family,
                    point: grid.point(i),
                    value: v,
                    range: [fam.levels[0], *fam.levels.last().expect("levels")],
                })
            }
        }
    }
    // Bands strictly between two consecutive grid values are still met by the domain.
    for i in 0..grid.len() {
        for (_, j) in grid.forward_neighbors(i) {
            let (a, b) = (samples.values[i], samples.values[j]);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            for (h, flag) in hit.iter_mut().enumerate() {
                let [l, u] = fam.band(h);
                if l < hi && u > lo {
                    *flag = true;
                }
            }
        }
    }
    Ok(hit
        .iter()
        .enumerate()
        .filter(|(_, &h)| h)
        .map(|(index, _)| Slice {
            family,
            index,
            band: fam.band(index),
        })
        .collect())
}

struct Labeling {
    tuples: Vec<Vec<usize>>,
    labels: Vec<usize>,
    /// Per cell: (y, z, grid indices).
    components: Vec<(Vec<usize>, usize, Vec<usize>)>,
}

fn label_grid(
    families: &[PartitioningFamily],
    samples: &[FamilySamples],
    grid: &Grid,
    eps_face: f64,
) -> Result<Labeling, PartitionError> {
    let mut tuples = Vec::with_capacity(grid.len());
    for i in 0..grid.len() {
        let mut y = Vec::with_capacity(families.len());
        for (f, fam) in families.iter().enumerate() {
            let v = samples[f].values[i];
            let h = slice_with_tolerance(fam, v, eps_face).ok_or_else(|| {
                PartitionError::Coverage {
                    family: f,
                    point: grid.point(i),
                    value: v,
                    range: [fam.levels[0], *fam.levels.last().expect("levels")],
                }
            })?;
            y.push(h);
        }
        tuples.push(y);
    }
    let mut labels = vec![usize::MAX; grid.len()];
    let mut components = Vec::new();
    let mut per_tuple: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
    let mut queue = VecDeque::new();
    for start in 0..grid.len() {
        if labels[start] != usize::MAX {
            continue;
        }
        let id = components.len();
        let z = per_tuple.entry(tuples[start].clone()).or_insert(0);
        let mut members = Vec::new();
        labels[start] = id;
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            members.push(p);
            for q in grid.neighbors(p) {
                if labels[q] == usize::MAX && tuples[q] == tuples[start] {
                    labels[q] = id;
                    queue.push_back(q);
                }
            }
        }
        members.sort_unstable();
        components.push((tuples[start].clone(), *z, members));
        *z += 1;
    }
    Ok(Labeling {
        tuples,
        labels,
        components,
    })
}

fn component_counts(labeling: &Labeling) -> BTreeMap<Vec<usize>, usize> {
    let mut counts = BTreeMap::new();
    for (y, _, _) in &labeling.components {
        *counts.entry(y.clone()).or_insert(0) += 1;
    }
    counts
}

/// Evenly spaced subsample of at most `cap` items.
fn thin<T: Clone>(items: &[T], cap: usize) -> Vec<T> {
    if items.len() <= cap {
        return items.to_vec();
    }
    (0..cap)
        .map(|k| items[k * (items.len() - 1) / (cap - 1).max(1)].clone())
        .collect()
}

/// Rasterizes the domain and builds cells, adjacency and boundary samples.
pub fn build_cells(model: &Model, config: &Config) -> Result<CellComplex, PartitionError> {
    build_cells_from(&model.families, model.domain(), config)
}

pub fn build_cells_from(
    families: &[PartitioningFamily],
    domain: &Domain,
    config: &Config,
) -> Result<CellComplex, PartitionError> {
    let grid = Grid::new(domain.clone(), config.grid);
    let samples: Vec<FamilySamples> = families
        .iter()
        .map(|f| FamilySamples::new(f, &grid))
        .collect::<Result<_, _>>()?;
    let slices = families
        .iter()
        .enumerate()
        .map(|(i, f)| slices_from_samples(f, i, &grid, &samples[i], config.eps_face))
        .collect::<Result<Vec<_>, _>>()?;
    let labeling = label_grid(families, &samples, &grid, config.eps_face)?;

    if config.check_resolution {
        let fine_points = 2 * config.grid - 1;
        let fine = Grid::new(domain.clone(), fine_points);
        let fine_samples: Vec<FamilySamples> = families
            .iter()
            .map(|f| FamilySamples::new(f, &fine))
            .collect::<Result<_, _>>()?;
        let fine_labeling = label_grid(families, &fine_samples, &fine, config.eps_face)?;
        let coarse_counts = component_counts(&labeling);
        let fine_counts = component_counts(&fine_labeling);
        let keys: std::collections::BTreeSet<&Vec<usize>> =
            coarse_counts.keys().chain(fine_counts.keys()).collect();
        for y in keys {
            let c = coarse_counts.get(y).copied().unwrap_or(0);
            let f = fine_counts.get(y).copied().unwrap_or(0);
            if c != f {
                return Err(PartitionError::Resolution {
                    y: y.clone(),
                    coarse: c,
                    fine: f,
                    coarse_points: config.grid,
                    fine_points,
                });
            }
        }
    }

    let n = domain.dim();
    let mut cells = Vec::with_capacity(labeling.components.len());
    for (id, (y, z, members)) in labeling.components.iter().enumerate() {
        let mut lower = vec![f64::INFINITY; n];
        let mut upper = vec![f64::NEG_INFINITY; n];
        let mut centroid = vec![0.0; n];
        for &p in members {
            let x = grid.point(p);
            for d in 0..n {
                lower[d] = lower[d].min(x[d]);
                upper[d] = upper[d].max(x[d]);
                centroid[d] += x[d] / members.len() as f64;
            }
        }
        let interior: Vec<usize> = members
            .iter()
            .copied()
            .filter(|&p| grid.neighbors(p).iter().all(|&q| labeling.labels[q] == id))
            .collect();
        let pool = if interior.is_empty() { members } else { &interior };
        let representative = pool
            .iter()
            .map(|&p| grid.point(p))
            .min_by(|a, b| dist2(a, &centroid).total_cmp(&dist2(b, &centroid)))
            .expect("nonempty component");
        cells.push(Cell {
            id,
            y: y.clone(),
            z: *z,
            representative,
            lower,
            upper,
            grid_points: members.len(),
            interior_points: interior.len(),
        });
    }

    // Facets between differently labeled neighbors: refine the cell extents and
    // record adjacency where exactly one family differs by exactly one slice.
    let mut facets: BTreeMap<[usize; 2], (Vec<usize>, Vec<Vec<f64>>)> = BTreeMap::new();
    for p in 0..grid.len() {
        for (_, q) in grid.forward_neighbors(p) {
            let (a, b) = (labeling.labels[p], labeling.labels[q]);
            if a == b {
                continue;
            }
            let (ya, yb) = (&labeling.tuples[p], &labeling.tuples[q]);
            let differing: Vec<usize> = (0..families.len()).filter(|&i| ya[i] != yb[i]).collect();
            if differing.len() != 1 {
                continue;
            }
            let i = differing[0];
            if ya[i].abs_diff(yb[i]) != 1 {
                continue;
            }
            let level = families[i].levels[ya[i].max(yb[i])];
            let x = bisect_level(&families[i], &grid.point(p), &grid.point(q), level)?;
            for c in [a, b] {
                for d in 0..n {
                    cells[c].lower[d] = cells[c].lower[d].min(x[d]);
                    cells[c].upper[d] = cells[c].upper[d].max(x[d]);
                }
            }
            let key = [a.min(b), a.max(b)];
            let entry = facets.entry(key).or_insert_with(|| (vec![i], Vec::new()));
            entry.1.push(x);
        }
    }
    let adjacency = facets
        .into_iter()
        .map(|(cells, (families, points))| Adjacency {
            cells,
            families,
            facet_points: thin(&points, config.facet_samples),
        })
        .collect();

    let mut boundary = vec![Vec::new(); cells.len()];
    for p in 0..grid.len() {
        if !grid.on_boundary(p) {
            continue;
        }
        let x = grid.point(p);
        let outer = families
            .iter()
            .enumerate()
            .filter_map(|(i, fam)| {
                let v = samples[i].values[p];
                let lo = fam.levels[0];
                let hi = *fam.levels.last().expect("levels");
                if (v - hi).abs() <= level_tolerance(config.eps_face, hi) {
                    Some((i, OuterLevel::Highest))
                } else if (v - lo).abs() <= level_tolerance(config.eps_face, lo) {
                    Some((i, OuterLevel::Lowest))
                } else {
                    None
                }
            })
            .collect();
        let normals = domain.outward_normals(&x, 0.0);
        boundary[labeling.labels[p]].push(BoundarySample {
            point: x,
            normals,
            outer,
        });
    }
    let boundary = boundary
        .iter()
        .map(|b| thin(b, 4 * config.facet_samples))
        .collect();

    Ok(CellComplex {
        domain: domain.clone(),
        families: families.to_vec(),
        slices,
        cells,
        adjacency,
        boundary,
        grid_points: config.grid,
        grid,
        labels: labeling.labels,
        eps_face: config.eps_face,
    })
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

impl CellComplex {
    pub fn cell(&self, id: usize) -> &Cell {
        &self.cells[id]
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Cells sharing the slice tuple `y`.
    pub fn cells_with_tuple(&self, y: &[usize]) -> Vec<usize> {
        self.cells
            .iter()
            .filter(|c| c.y == y)
            .map(|c| c.id)
            .collect()
    }

    /// Number of connected components of the extended cell `y`.
    pub fn components(&self, y: &[usize]) -> usize {
        self.cells_with_tuple(y).len()
    }

    pub fn adjacent(&self, a: usize, b: usize) -> Option<&Adjacency> {
        let key = [a.min(b), a.max(b)];
        self.adjacency.iter().find(|adj| adj.cells == key)
    }

    /// Neighbors of a cell with the adjacency record.
    pub fn neighbors(&self, cell: usize) -> impl Iterator<Item = (usize, &Adjacency)> {
        self.adjacency.iter().filter_map(move |adj| {
            if adj.cells[0] == cell {
                Some((adj.cells[1], adj))
            } else if adj.cells[1] == cell {
                Some((adj.cells[0], adj))
            } else {
                None
            }
        })
    }

    /// Values of every partitioning function at `x`.
    pub fn phi(&self, x: &[f64]) -> Result<Vec<f64>, EvalError> {
        self.families.iter().map(|f| f.value(x)).collect()
    }

    /// Slice tuple of `x`, or `None` outside the covered range.
    pub fn tuple(&self, x: &[f64]) -> Result<Option<Vec<usize>>, EvalError> {
        let mut y = Vec::with_capacity(self.families.len());
        for fam in &self.families {
            match slice_with_tolerance(fam, fam.value(x)?, self.eps_face) {
                Some(h) => y.push(h),
                None => return Ok(None),
            }
        }
        Ok(Some(y))
    }

    /// The cell with tuple `y` nearest to `x` on the labeled grid.
    pub fn cell_with_tuple(&self, x: &[f64], y: &[usize]) -> Result<usize, PartitionError> {
        let candidates = self.cells_with_tuple(y);
        match candidates.len() {
            0 => Err(PartitionError::NoCell {
                y: y.to_vec(),
                point: x.to_vec(),
            }),
            1 => Ok(candidates[0]),
            _ => self.nearest_labeled(x, &candidates).ok_or(PartitionError::NoCell {
                y: y.to_vec(),
                point: x.to_vec(),
            }),
        }
    }

    fn nearest_labeled(&self, x: &[f64], candidates: &[usize]) -> Option<usize> {
        let center = self.grid.multi_index(self.grid.nearest(x));
        let n = self.grid.dim();
        let points = self.grid.points as isize;
        for radius in 0..self.grid.points as isize {
            let mut best: Option<(f64, usize)> = None;
            let side = (2 * radius + 1) as usize;
            let total = side.pow(n as u32);
            for k in 0..total {
                let mut rem = k;
                let mut multi = Vec::with_capacity(n);
                let mut inside = true;
                for &c in center.iter().take(n) {
                    let off = (rem % side) as isize - radius;
                    rem /= side;
                    let v = c as isize + off;
                    if v < 0 || v >= points {
                        inside = false;
                        break;
                    }
                    multi.push(v as usize);
                }
                if !inside {
                    continue;
                }
                let idx = self.grid.linear(&multi);
                let label = self.labels[idx];
                if candidates.contains(&label) {
                    let d = dist2(&self.grid.point(idx), x);
                    if best.is_none_or(|(bd, _)| d < bd) {
                        best = Some((d, label));
                    }
                }
            }
            if let Some((_, label)) = best {
                return Some(label);
            }
        }
        None
    }

    /// Locates `x`. Points within `eps_face` of an interior level are reported with
    /// every cell they touch.
    pub fn locate(&self, x: &[f64]) -> Result<Located, PartitionError> {
        if x.len() != self.domain.dim() || !self.domain.contains(x, 1e-12) {
            return Err(PartitionError::OutOfDomain(x.to_vec()));
        }
        let mut options: Vec<Vec<usize>> = Vec::with_capacity(self.families.len());
        for (i, fam) in self.families.iter().enumerate() {
            let v = fam.value(x)?;
            let h = slice_with_tolerance(fam, v, self.eps_face).ok_or_else(|| {
                PartitionError::Coverage {
                    family: i,
                    point: x.to_vec(),
                    value: v,
                    range: [fam.levels[0], *fam.levels.last().expect("levels")],
                }
            })?;
            let mut opts = vec![h];
            let k = fam.levels.len() - 1;
            if h > 0 && (v - fam.levels[h]).abs() < level_tolerance(self.eps_face, fam.levels[h]) {
                opts.insert(0, h - 1);
            } else if h + 1 < k
                && (v - fam.levels[h + 1]).abs() < level_tolerance(self.eps_face, fam.levels[h + 1])
            {
                opts.push(h + 1);
            }
            options.push(opts);
        }
        let mut tuples: Vec<Vec<usize>> = vec![Vec::new()];
        for opts in &options {
            tuples = tuples
                .into_iter()
                .flat_map(|t| {
                    opts.iter().map(move |&h| {
                        let mut t = t.clone();
                        t.push(h);
                        t
                    })
                })
                .collect();
        }
        let mut found = Vec::new();
        for y in &tuples {
            if let Ok(c) = self.cell_with_tuple(x, y) {
                if !found.contains(&c) {
                    found.push(c);
                }
            }
        }
        found.sort_unstable();
        match found.len() {
            0 => Err(PartitionError::NoCell {
                y: tuples[0].clone(),
                point: x.to_vec(),
            }),
            1 if tuples.len() == 1 => Ok(Located::Interior(found[0])),
            _ => Ok(Located::Boundary(found)),
        }
    }

    /// Cells whose extent lies inside the box `[lower, upper]` (with tolerance).
    pub fn cells_in_box(&self, lower: &[f64], upper: &[f64], tol: f64) -> Vec<usize> {
        self.cells
            .iter()
            .filter(|c| {
                (0..c.lower.len())
                    .all(|d| c.lower[d] >= lower[d] - tol && c.upper[d] <= upper[d] + tol)
            })
            .map(|c| c.id)
            .collect()
    }

    /// Draws a point uniformly from the cell by rejection inside its bounding box.
    pub fn sample_in_cell<R: Rng + ?Sized>(&self, cell: usize, rng: &mut R) -> Option<Vec<f64>> {
        let c = &self.cells[cell];
        for _ in 0..10_000 {
            let x: Vec<f64> = (0..c.lower.len())
                .map(|d| {
                    if c.upper[d] > c.lower[d] {
                        rng.random_range(c.lower[d]..c.upper[d])
                    } else {
                        c.lower[d]
                    }
                })
                .collect();
            if let Ok(Located::Interior(found)) = self.locate(&x) {
                if found == cell {
                    return Some(x);
                }
            }
        }
        None
    }

    /// Human-readable description: the band of every family.
    pub fn describe(&self, cell: usize) -> String {
        let c = &self.cells[cell];
        let bands: Vec<String> = c
            .y
            .iter()
            .enumerate()
            .map(|(i, &h)| {
                let [a, b] = self.families[i].band(h);
                format!("[{a}, {b}]")
            })
            .collect();
        format!("{} {}", c.name(), bands.join("x"))
    }
}
