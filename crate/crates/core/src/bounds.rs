//! Extremal Lie-derivative magnitudes per (slice, control) and the dwell-time bounds
//! derived from them.

use std::collections::BTreeMap;

use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::config::Config;
use crate::expr::{EvalError, Expr};
use crate::grid::{Domain, Grid};
use crate::model::{slice_points, FamilySamples, Model, PartitioningFamily, Sign, SignTable};

/// Relative outward rounding applied to the sampled extrema.
pub const OUTWARD_ROUNDING: f64 = 1e-3;
/// An infimum of `|φ̇|` below this fraction of the supremum counts as zero (the
/// derivative vanishes somewhere on the closed slice, typically on a level).
pub const NEGLIGIBLE_RATE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BoundsError {
    #[error("slice {slice} of family {family} has no sample points inside the domain")]
    EmptySlice { family: usize, slice: usize },
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Serializes `+∞` as the string `"inf"`, finite values as numbers.
pub fn serialize_time<S: Serializer>(t: &f64, s: S) -> Result<S::Ok, S::Error> {
    if t.is_infinite() {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtremalDerivatives {
    pub family: usize,
    pub slice: usize,
    pub control: String,
    /// Sampled and refined extrema before outward rounding.
    pub raw_inf: f64,
    pub raw_sup: f64,
    /// Outward-rounded extrema used for the bounds.
    pub inf_abs: f64,
    pub sup_abs: f64,
    pub argmin: Vec<f64>,
    pub argmax: Vec<f64>,
    /// A critical point of the closed loop lies in the slice, so `inf_abs = 0`.
    pub critical_in_slice: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingBounds {
    pub family: usize,
    pub slice: usize,
    pub control: usize,
    pub control_name: String,
    pub band: [f64; 2],
    pub delta_a: f64,
    pub inf_abs: f64,
    pub sup_abs: f64,
    pub sign: Option<Sign>,
    /// Lower bound on the time to traverse the slice (guard constant).
    pub t_lo: f64,
    /// Upper bound on the time to traverse the slice (invariant constant), `+∞` when
    /// the derivative can vanish.
    #[serde(serialize_with = "serialize_time")]
    pub t_hi: f64,
}

/// `(t_lo, t_hi) = (Δa / sup, Δa / inf)`, with `t_hi = +∞` when `inf = 0`.
pub fn timing_bounds(inf_abs: f64, sup_abs: f64, delta_a: f64) -> (f64, f64) {
    if delta_a == 0.0 {
        return (0.0, 0.0);
    }
    let t_lo = if sup_abs > 0.0 { delta_a / sup_abs } else { f64::INFINITY };
    let t_hi = if inf_abs > 0.0 { delta_a / inf_abs } else { f64::INFINITY };
    (t_lo, t_hi)
}

struct SliceObjective<'a> {
    fam: &'a PartitioningFamily,
    band: [f64; 2],
    domain: &'a Domain,
    lie: &'a Expr,
    tol: f64,
}

impl SliceObjective<'_> {
    /// `|φ̇(x)|` for feasible points.
    fn value(&self, x: &[f64]) -> Option<f64> {
        if !self.domain.contains(x, 0.0) {
            return None;
        }
        let v = self.fam.value(x).ok()?;
        if v < self.band[0] - self.tol || v > self.band[1] + self.tol {
            return None;
        }
        self.lie.eval_state(x).ok().map(f64::abs)
    }

    /// Coordinate-wise golden-section search starting at `x`. `direction = 1`
    /// minimizes, `-1` maximizes. Returns the best point seen and its value.
    fn refine(
        &self,
        mut x: Vec<f64>,
        mut best: f64,
        direction: f64,
        window: &[f64],
        rounds: usize,
    ) -> (Vec<f64>, f64) {
        const INV_PHI: f64 = 0.618_033_988_749_894_8;
        let score = |x: &[f64]| -> f64 {
            self.value(x)
                .map(|v| direction * v)
                .unwrap_or(f64::INFINITY)
        };
        let mut w = window.to_vec();
        for _ in 0..rounds {
            for d in 0..x.len() {
                let (mut a, mut b) = (x[d] - w[d], x[d] + w[d]);
                let mut probe = x.clone();
                let mut at = |t: f64| {
                    probe[d] = t;
                    score(&probe)
                };
                let mut c = b - INV_PHI * (b - a);
                let mut e = a + INV_PHI * (b - a);
                let (mut fc, mut fe) = (at(c), at(e));
                for _ in 0..40 {
                    if fc < fe {
                        b = e;
                        e = c;
                        fe = fc;
                        c = b - INV_PHI * (b - a);
                        fc = at(c);
                    } else {
                        a = c;
                        c = e;
                        fc = fe;
                        e = a + INV_PHI * (b - a);
                        fe = at(e);
                    }
                }
                let (t, ft) = if fc < fe { (c, fc) } else { (e, fe) };
                if ft < direction * best {
                    best = direction * ft;
                    x[d] = t;
                }
            }
            for wd in w.iter_mut() {
                *wd *= 0.5;
            }
        }
        (x, best)
    }
}

/// Extrema of `|φ̇_g|` over one slice from precomputed sample points.
fn extremal_from_points(
    model: &Model,
    control: usize,
    family: usize,
    slice: usize,
    points: &[Vec<f64>],
    critical: &[Vec<f64>],
    config: &Config,
) -> Result<ExtremalDerivatives, BoundsError> {
    let fam = &model.families[family];
    let lie = model.lie_derivative(control, family);
    let band = fam.band(slice);
    let objective = SliceObjective {
        fam,
        band,
        domain: model.domain(),
        lie: &lie.expr,
        tol: config.eps_face * band[1].abs().max(1.0),
    };
    let mut lo: Option<(f64, &Vec<f64>)> = None;
    let mut hi: Option<(f64, &Vec<f64>)> = None;
    for p in points {
        let v = lie.expr.eval_state(p)?.abs();
        if lo.is_none_or(|(m, _)| v < m) {
            lo = Some((v, p));
        }
        if hi.is_none_or(|(m, _)| v > m) {
            hi = Some((v, p));
        }
    }
    let (Some((grid_inf, at_inf)), Some((grid_sup, at_sup))) = (lo, hi) else {
        return Err(BoundsError::EmptySlice { family, slice });
    };
    let grid = Grid::new(model.domain().clone(), config.grid);
    let window: Vec<f64> = (0..grid.dim()).map(|d| grid.spacing(d)).collect();
    let (mut argmin, refined_inf) =
        objective.refine(at_inf.clone(), grid_inf, 1.0, &window, config.refine_iters);
    let (argmax, refined_sup) =
        objective.refine(at_sup.clone(), grid_sup, -1.0, &window, config.refine_iters);
    let mut raw_inf = grid_inf.min(refined_inf);
    let raw_sup = grid_sup.max(refined_sup);
    let critical_point = critical.iter().find(|c| {
        fam.value(c)
            .is_ok_and(|v| v >= band[0] - objective.tol && v <= band[1] + objective.tol)
    });
    if let Some(c) = critical_point {
        raw_inf = 0.0;
        argmin = c.clone();
    } else if raw_inf <= NEGLIGIBLE_RATE * raw_sup {
        raw_inf = 0.0;
    }
    Ok(ExtremalDerivatives {
        family,
        slice,
        control: lie.control,
        raw_inf,
        raw_sup,
        inf_abs: raw_inf * (1.0 - OUTWARD_ROUNDING),
        sup_abs: raw_sup * (1.0 + OUTWARD_ROUNDING),
        argmin,
        argmax,
        critical_in_slice: critical_point.is_some(),
    })
}

/// Extrema of `|φ̇_g|` over slice `slice` of family `family`, refined and rounded
/// outward.
pub fn extremal_lie_derivative(
    model: &Model,
    control: usize,
    family: usize,
    slice: usize,
    config: &Config,
) -> Result<ExtremalDerivatives, BoundsError> {
    let fam = &model.families[family];
    let grid = Grid::new(model.domain().clone(), config.grid);
    let samples = FamilySamples::new(fam, &grid)?;
    let points = slice_points(fam, &samples, &grid, slice, config.eps_face)?;
    let critical = model
        .closed_loop(control)
        .critical_points(model.domain(), config);
    extremal_from_points(model, control, family, slice, &points, &critical, config)
}

/// Bounds for every (family, slice, control) triple.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundsTable {
    pub entries: Vec<TimingBounds>,
    #[serde(skip)]
    index: BTreeMap<(usize, usize, usize), usize>,
}

impl BoundsTable {
    pub fn from_entries(entries: Vec<TimingBounds>) -> Self {
        let index = entries
            .iter()
            .enumerate()
            .map(|(k, b)| ((b.family, b.slice, b.control), k))
            .collect();
        BoundsTable { entries, index }
    }

    pub fn get(&self, family: usize, slice: usize, control: usize) -> Option<&TimingBounds> {
        self.index
            .get(&(family, slice, control))
            .map(|&k| &self.entries[k])
    }

    pub fn get_mut(
        &mut self,
        family: usize,
        slice: usize,
        control: usize,
    ) -> Option<&mut TimingBounds> {
        self.index
            .get(&(family, slice, control))
            .map(|&k| &mut self.entries[k])
    }
}

/// Computes extrema and timing bounds for every nonempty slice and control.
///
/// `signs[c][i]` is the sign table of control `c` on family `i`; `critical[c]` are
/// the critical points of the closed loop under control `c`.
pub fn compute_bounds(
    model: &Model,
    signs: &[Vec<SignTable>],
    critical: &[Vec<Vec<f64>>],
    config: &Config,
) -> Result<(BoundsTable, Vec<ExtremalDerivatives>), BoundsError> {
    let grid = Grid::new(model.domain().clone(), config.grid);
    let mut points = Vec::with_capacity(model.families.len());
    for fam in &model.families {
        let samples = FamilySamples::new(fam, &grid)?;
        let per_slice = (0..fam.slice_count())
            .map(|h| slice_points(fam, &samples, &grid, h, config.eps_face))
            .collect::<Result<Vec<_>, _>>()?;
        points.push(per_slice);
    }
    let mut jobs = Vec::new();
    for (i, fam) in model.families.iter().enumerate() {
        for h in 0..fam.slice_count() {
            if points[i][h].is_empty() {
                continue;
            }
            for c in 0..model.controls.len() {
                jobs.push((i, h, c));
            }
        }
    }
    let results = config.execution.map(&jobs, |&(i, h, c)| {
        extremal_from_points(model, c, i, h, &points[i][h], &critical[c], config)
    });
    let mut entries = Vec::with_capacity(jobs.len());
    let mut extrema = Vec::with_capacity(jobs.len());
    for (&(i, h, c), ext) in jobs.iter().zip(results) {
        let ext = ext?;
        let band = model.families[i].band(h);
        let delta_a = (band[1] - band[0]).abs();
        let (t_lo, t_hi) = timing_bounds(ext.inf_abs, ext.sup_abs, delta_a);
        entries.push(TimingBounds {
            family: i,
            slice: h,
            control: c,
            control_name: model.controls[c].name.clone(),
            band,
            delta_a,
            inf_abs: ext.inf_abs,
            sup_abs: ext.sup_abs,
            sign: signs.get(c).and_then(|s| s.get(i)).and_then(|t| t.sign(h)),
            t_lo,
            t_hi,
        });
        extrema.push(ext);
    }
    Ok((BoundsTable::from_entries(entries), extrema))
}
