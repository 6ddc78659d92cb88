//! Control systems, control laws, partitioning functions and admissibility checks.

use std::collections::BTreeSet;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::config::Config;
use crate::expr::{eval_all, EvalError, Expr, Var};
use crate::grid::{Domain, Grid};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("{what} has {found} components, expected {expected}")]
    DimensionMismatch {
        what: String,
        expected: usize,
        found: usize,
    },
    #[error("domain must be a nonempty box with finite bounds, one interval per state")]
    InvalidDomain,
    #[error("control `{control}` component {component} references an input variable")]
    ControlUsesInputs { control: String, component: usize },
    #[error("partitioning function {family} references an input variable")]
    PhiUsesInputs { family: usize },
    #[error("duplicate control name `{0}`")]
    DuplicateControl(String),
    #[error("at least one control law is required")]
    NoControls,
    #[error("family {family} needs at least two levels")]
    TooFewLevels { family: usize },
    #[error("levels of family {family} are not strictly increasing and finite")]
    LevelsNotIncreasing { family: usize },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(
        "level {level} of family {family} is not a regular value: gradient norm {gradient_norm:e} at {point:?}"
    )]
    DegenerateLevel {
        family: usize,
        level: f64,
        point: Vec<f64>,
        gradient_norm: f64,
    },
    #[error("{}", describe_violations(.0))]
    Inadmissible(Vec<AdmissibilityViolation>),
    #[error("Lie derivative of family {family} under `{control}` vanishes on slice [{}, {}]", band[0], band[1])]
    VanishingDerivative {
        control: String,
        family: usize,
        slice: usize,
        band: [f64; 2],
    },
}

fn describe_violations(v: &[AdmissibilityViolation]) -> String {
    match v {
        [] => "admissibility violation".to_string(),
        [one] => one.to_string(),
        [first, rest @ ..] => format!("{first} (and {} more)", rest.len()),
    }
}

/// Opposite strict signs of the Lie derivative inside one slice.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdmissibilityViolation {
    pub control: String,
    pub family: usize,
    pub slice: usize,
    pub band: [f64; 2],
    pub x_negative: Vec<f64>,
    pub value_negative: f64,
    pub x_positive: Vec<f64>,
    pub value_positive: f64,
}

impl fmt::Display for AdmissibilityViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "control `{}` is not admissible on slice [{}, {}] of family {}: derivative {} at {:?} but {} at {:?}",
            self.control,
            self.band[0],
            self.band[1],
            self.family,
            self.value_negative,
            self.x_negative,
            self.value_positive,
            self.x_positive
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Sign {
    #[serde(rename = "+")]
    Positive,
    #[serde(rename = "-")]
    Negative,
}

impl Sign {
    pub fn of(v: f64) -> Option<Sign> {
        if v > 0.0 {
            Some(Sign::Positive)
        } else if v < 0.0 {
            Some(Sign::Negative)
        } else {
            None
        }
    }

    pub fn value(self) -> f64 {
        match self {
            Sign::Positive => 1.0,
            Sign::Negative => -1.0,
        }
    }
}

impl fmt::Display for Sign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sign::Positive => "+",
            Sign::Negative => "-",
        })
    }
}

/// `Γ = (X, U, f)` with `ẋ = f(x, u)`.
#[derive(Debug, Clone, Serialize)]
pub struct ControlSystem {
    pub n: usize,
    pub m: usize,
    pub domain: Domain,
    pub f: Vec<Expr>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ControlLaw {
    pub name: String,
    pub g: Vec<Expr>,
}

/// A partitioning function with strictly increasing levels `a_0 < … < a_k`.
///
/// Slice `h` (zero-based) is the band `φ⁻¹([a_h, a_{h+1}])`.
#[derive(Debug, Clone, Serialize)]
pub struct PartitioningFamily {
    pub phi: Expr,
    pub levels: Vec<f64>,
    #[serde(skip)]
    pub gradient: Vec<Expr>,
}

impl PartitioningFamily {
    pub fn new(phi: Expr, levels: Vec<f64>, n: usize) -> Self {
        let gradient = (0..n).map(|j| phi.differentiate(Var::State(j))).collect();
        PartitioningFamily {
            phi,
            levels,
            gradient,
        }
    }

    pub fn slice_count(&self) -> usize {
        self.levels.len().saturating_sub(1)
    }

    pub fn band(&self, slice: usize) -> [f64; 2] {
        [self.levels[slice], self.levels[slice + 1]]
    }

    /// Slice containing the value `v`; a value on an interior level belongs to the
    /// upper slice. `None` outside `[a_0, a_k]`.
    pub fn slice_of(&self, v: f64) -> Option<usize> {
        let k = self.levels.len();
        if v < self.levels[0] || v > self.levels[k - 1] {
            return None;
        }
        let above = self.levels[1..k - 1].partition_point(|a| *a <= v);
        Some(above)
    }

    pub fn value(&self, x: &[f64]) -> Result<f64, EvalError> {
        self.phi.eval_state(x)
    }

    pub fn gradient_norm(&self, x: &[f64]) -> Result<f64, EvalError> {
        Ok(eval_all(&self.gradient, x, &[])?
            .iter()
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt())
    }
}

/// Closed-loop vector field `f_g(x) = f(x, g(x))` with its Jacobian.
#[derive(Debug, Clone)]
pub struct ClosedLoop {
    pub control: String,
    pub field: Vec<Expr>,
    pub jacobian: Vec<Vec<Expr>>,
}

impl ClosedLoop {
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>, EvalError> {
        eval_all(&self.field, x, &[])
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) -> Result<(), EvalError> {
        for (o, e) in out.iter_mut().zip(&self.field) {
            *o = e.eval_state(x)?;
        }
        Ok(())
    }

    /// Zeros of the field inside the domain (critical points of the closed loop).
    pub fn critical_points(&self, domain: &Domain, config: &Config) -> Vec<Vec<f64>> {
        find_zeros(&self.field, &self.jacobian, domain, config)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LieDerivative {
    pub control: String,
    pub family: usize,
    pub expr: Expr,
}

#[derive(Debug, Clone, Serialize)]
pub struct Model {
    pub system: ControlSystem,
    pub controls: Vec<ControlLaw>,
    pub families: Vec<PartitioningFamily>,
}

impl Model {
    /// Checks dimensions, control/partition variable usage and level ordering.
    pub fn new(
        system: ControlSystem,
        controls: Vec<ControlLaw>,
        families: Vec<PartitioningFamily>,
    ) -> Result<Self, ModelError> {
        let n = system.n;
        if system.domain.dim() != n || !system.domain.is_valid() {
            return Err(ModelError::InvalidDomain);
        }
        if system.f.len() != n {
            return Err(ModelError::DimensionMismatch {
                what: "dynamics".into(),
                expected: n,
                found: system.f.len(),
            });
        }
        if controls.is_empty() {
            return Err(ModelError::NoControls);
        }
        let mut names = BTreeSet::new();
        for c in &controls {
            if !names.insert(c.name.clone()) {
                return Err(ModelError::DuplicateControl(c.name.clone()));
            }
            if c.g.len() != system.m {
                return Err(ModelError::DimensionMismatch {
                    what: format!("control `{}`", c.name),
                    expected: system.m,
                    found: c.g.len(),
                });
            }
            if let Some(component) = c.g.iter().position(Expr::has_inputs) {
                return Err(ModelError::ControlUsesInputs {
                    control: c.name.clone(),
                    component,
                });
            }
        }
        for (i, fam) in families.iter().enumerate() {
            if fam.phi.has_inputs() {
                return Err(ModelError::PhiUsesInputs { family: i });
            }
            if fam.levels.len() < 2 {
                return Err(ModelError::TooFewLevels { family: i });
            }
            let increasing = fam.levels.iter().all(|a| a.is_finite())
                && fam.levels.windows(2).all(|w| w[0] < w[1]);
            if !increasing {
                return Err(ModelError::LevelsNotIncreasing { family: i });
            }
        }
        Ok(Model {
            system,
            controls,
            families,
        })
    }

    pub fn n(&self) -> usize {
        self.system.n
    }

    pub fn domain(&self) -> &Domain {
        &self.system.domain
    }

    pub fn control_index(&self, name: &str) -> Option<usize> {
        self.controls.iter().position(|c| c.name == name)
    }

    pub fn closed_loop(&self, control: usize) -> ClosedLoop {
        let law = &self.controls[control];
        let field: Vec<Expr> = self
            .system
            .f
            .iter()
            .map(|fj| fj.substitute_inputs(&law.g))
            .collect();
        let jacobian = field
            .iter()
            .map(|fj| {
                (0..self.n())
                    .map(|k| fj.differentiate(Var::State(k)))
                    .collect()
            })
            .collect();
        ClosedLoop {
            control: law.name.clone(),
            field,
            jacobian,
        }
    }

    pub fn lie_derivative(&self, control: usize, family: usize) -> LieDerivative {
        let fam = &self.families[family];
        let fg = self.closed_loop(control);
        let expr = fam
            .gradient
            .iter()
            .zip(&fg.field)
            .fold(Expr::constant(0.0), |acc, (dphi, fj)| {
                Expr::add(acc, Expr::mul(dphi.clone(), fj.clone()))
            });
        LieDerivative {
            control: fg.control,
            family,
            expr,
        }
    }
}

/// Values of `φ` at every grid point, used to select slice and level samples.
#[derive(Debug, Clone)]
pub struct FamilySamples {
    pub values: Vec<f64>,
}

impl FamilySamples {
    pub fn new(fam: &PartitioningFamily, grid: &Grid) -> Result<Self, EvalError> {
        let values = (0..grid.len())
            .map(|i| fam.value(&grid.point(i)))
            .collect::<Result<_, _>>()?;
        Ok(FamilySamples { values })
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Bisects `φ(p + s(q − p)) = level` for `s ∈ [0, 1]`, assuming a sign change.
pub fn bisect_level(
    fam: &PartitioningFamily,
    p: &[f64],
    q: &[f64],
    level: f64,
) -> Result<Vec<f64>, EvalError> {
    let at = |s: f64| -> Vec<f64> { p.iter().zip(q).map(|(a, b)| a + s * (b - a)).collect() };
    let f0 = fam.value(p)? - level;
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..64 {
        let mid = 0.5 * (lo + hi);
        let fm = fam.value(&at(mid))? - level;
        if (fm < 0.0) == (f0 < 0.0) && fm != 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(at(0.5 * (lo + hi)))
}

/// Points of the level set `φ = level` found on grid edges and at grid points.
pub fn level_points(
    fam: &PartitioningFamily,
    samples: &FamilySamples,
    grid: &Grid,
    level: f64,
    eps_face: f64,
) -> Result<Vec<Vec<f64>>, EvalError> {
    let mut out = Vec::new();
    for i in 0..grid.len() {
        let vi = samples.values[i] - level;
        if vi.abs() <= eps_face {
            out.push(grid.point(i));
            continue;
        }
        for (_, j) in grid.forward_neighbors(i) {
            let vj = samples.values[j] - level;
            if vj.abs() > eps_face && (vi < 0.0) != (vj < 0.0) {
                out.push(bisect_level(fam, &grid.point(i), &grid.point(j), level)?);
            }
        }
    }
    Ok(out)
}

/// Sample points of slice `slice` inside the domain: grid points in the band plus
/// points on its two bounding level surfaces.
pub fn slice_points(
    fam: &PartitioningFamily,
    samples: &FamilySamples,
    grid: &Grid,
    slice: usize,
    eps_face: f64,
) -> Result<Vec<Vec<f64>>, EvalError> {
    let [lo, hi] = fam.band(slice);
    let mut out: Vec<Vec<f64>> = (0..grid.len())
        .filter(|&i| {
            let v = samples.values[i];
            v >= lo - eps_face && v <= hi + eps_face
        })
        .map(|i| grid.point(i))
        .collect();
    for level in [lo, hi] {
        for p in level_points(fam, samples, grid, level, eps_face)? {
            if !out.contains(&p) {
                out.push(p);
            }
        }
    }
    Ok(out)
}

fn solve(jac: &[Vec<f64>], rhs: &[f64]) -> Option<Vec<f64>> {
    let n = rhs.len();
    let a = DMatrix::from_fn(n, n, |r, c| jac[r][c]);
    let b = DVector::from_column_slice(rhs);
    a.lu().solve(&b).map(|x| x.iter().copied().collect())
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Zeros of a vector field inside the domain: discrete local minima of `‖F‖` on the
/// grid, polished by damped Newton steps, accepted when `‖F‖ < 1e-10`.
pub fn find_zeros(
    field: &[Expr],
    jacobian: &[Vec<Expr>],
    domain: &Domain,
    config: &Config,
) -> Vec<Vec<f64>> {
    let grid = Grid::new(domain.clone(), config.grid);
    let norms: Vec<f64> = config.execution.map_range(grid.len(), |i| {
        eval_all(field, &grid.point(i), &[])
            .map(|v| norm(&v))
            .unwrap_or(f64::INFINITY)
    });
    let max = norms
        .iter()
        .copied()
        .filter(|v| v.is_finite())
        .fold(0.0, f64::max);
    if max == 0.0 {
        // The field vanishes on the whole grid; every point is critical and no
        // neighborhood exclusion is meaningful.
        return Vec::new();
    }
    let candidates: Vec<usize> = (0..grid.len())
        .filter(|&i| {
            norms[i] <= 0.1 * max && grid.neighbors(i).iter().all(|&j| norms[i] <= norms[j])
        })
        .take(2000)
        .collect();
    let polished: Vec<Option<Vec<f64>>> = config.execution.map(&candidates, |&i| {
        newton(field, jacobian, grid.point(i), domain)
    });
    let mut out: Vec<Vec<f64>> = Vec::new();
    for p in polished.into_iter().flatten() {
        let dup = out.iter().any(|q| {
            let d: Vec<f64> = p.iter().zip(q).map(|(a, b)| a - b).collect();
            norm(&d) < config.r_crit
        });
        if !dup {
            out.push(p);
        }
    }
    out
}

fn newton(field: &[Expr], jacobian: &[Vec<Expr>], mut x: Vec<f64>, domain: &Domain) -> Option<Vec<f64>> {
    let eval_norm = |x: &[f64]| eval_all(field, x, &[]).ok().map(|v| norm(&v));
    let mut fx = eval_all(field, &x, &[]).ok()?;
    for _ in 0..60 {
        let r = norm(&fx);
        if r < 1e-13 {
            break;
        }
        let jac: Vec<Vec<f64>> = jacobian
            .iter()
            .map(|row| eval_all(row, &x, &[]))
            .collect::<Result<_, _>>()
            .ok()?;
        let step = solve(&jac, &fx)?;
        let mut lambda = 1.0;
        let mut improved = false;
        while lambda > 1e-6 {
            let trial: Vec<f64> = x.iter().zip(&step).map(|(a, s)| a - lambda * s).collect();
            if let Some(rt) = eval_norm(&trial) {
                if rt < r {
                    x = trial;
                    fx = eval_all(field, &x, &[]).ok()?;
                    improved = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !improved {
            break;
        }
    }
    (norm(&fx) < 1e-10 && domain.contains(&x, 1e-9)).then_some(x)
}

/// Per-slice outcome of the sign scan of one Lie derivative.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum SliceVerdict {
    Constant {
        sign: Sign,
        samples: usize,
        excluded: usize,
        zeros: usize,
        witness: Vec<f64>,
    },
    Violation(AdmissibilityViolation),
    Vanishing { band: [f64; 2] },
    /// The band does not meet the domain.
    Empty,
}

/// Sign of `φ̇_g` per slice of one family.
#[derive(Debug, Clone, Serialize)]
pub struct SignTable {
    pub control: String,
    pub family: usize,
    pub slices: Vec<SliceVerdict>,
}

impl SignTable {
    pub fn sign(&self, slice: usize) -> Option<Sign> {
        match self.slices.get(slice)? {
            SliceVerdict::Constant { sign, .. } => Some(*sign),
            _ => None,
        }
    }

    pub fn is_admissible(&self) -> bool {
        self.slices
            .iter()
            .all(|v| matches!(v, SliceVerdict::Constant { .. } | SliceVerdict::Empty))
    }

    /// Converts violations into an error.
    pub fn into_result(self) -> Result<SignTable, ModelError> {
        let mut violations = Vec::new();
        for (slice, v) in self.slices.iter().enumerate() {
            match v {
                SliceVerdict::Violation(viol) => violations.push(viol.clone()),
                SliceVerdict::Vanishing { band } if violations.is_empty() => {
                    return Err(ModelError::VanishingDerivative {
                        control: self.control.clone(),
                        family: self.family,
                        slice,
                        band: *band,
                    })
                }
                _ => {}
            }
        }
        if violations.is_empty() {
            Ok(self)
        } else {
            Err(ModelError::Inadmissible(violations))
        }
    }
}

/// Scans the sign of `φ̇_g` on every slice, ignoring points within `r_crit` of the
/// critical points of `f_g` and points where the derivative vanishes.
pub fn sign_table(
    model: &Model,
    control: usize,
    family: usize,
    critical: &[Vec<f64>],
    config: &Config,
) -> Result<SignTable, ModelError> {
    let fam = &model.families[family];
    let lie = model.lie_derivative(control, family);
    let grid = Grid::new(model.domain().clone(), config.grid);
    let samples = FamilySamples::new(fam, &grid)?;
    let mut slices = Vec::with_capacity(fam.slice_count());
    for h in 0..fam.slice_count() {
        let points = slice_points(fam, &samples, &grid, h, config.eps_face)?;
        if points.is_empty() {
            slices.push(SliceVerdict::Empty);
            continue;
        }
        let mut excluded = 0;
        let mut values = Vec::with_capacity(points.len());
        for p in &points {
            let near = critical.iter().any(|c| {
                let d: Vec<f64> = p.iter().zip(c).map(|(a, b)| a - b).collect();
                norm(&d) < config.r_crit
            });
            if near {
                excluded += 1;
            } else {
                values.push((lie.expr.eval_state(p)?, p));
            }
        }
        let scale = values.iter().map(|(v, _)| v.abs()).fold(0.0, f64::max);
        let zero_tol = 1e-12 * scale;
        let most_negative = values
            .iter()
            .filter(|(v, _)| *v < -zero_tol)
            .min_by(|a, b| a.0.total_cmp(&b.0));
        let most_positive = values
            .iter()
            .filter(|(v, _)| *v > zero_tol)
            .max_by(|a, b| a.0.total_cmp(&b.0));
        let zeros = values.iter().filter(|(v, _)| v.abs() <= zero_tol).count();
        let band = fam.band(h);
        let verdict = match (most_negative, most_positive) {
            (Some(neg), Some(pos)) => SliceVerdict::Violation(AdmissibilityViolation {
                control: lie.control.clone(),
                family,
                slice: h,
                band,
                x_negative: neg.1.clone(),
                value_negative: neg.0,
                x_positive: pos.1.clone(),
                value_positive: pos.0,
            }),
            (Some(w), None) | (None, Some(w)) => SliceVerdict::Constant {
                sign: Sign::of(w.0).expect("strict value"),
                samples: values.len(),
                excluded,
                zeros,
                witness: w.1.clone(),
            },
            (None, None) => SliceVerdict::Vanishing { band },
        };
        slices.push(verdict);
    }
    Ok(SignTable {
        control: lie.control,
        family,
        slices,
    })
}

/// Sign table of one (control, family) pair, or an admissibility error.
pub fn check_admissibility(
    model: &Model,
    control: usize,
    family: usize,
    config: &Config,
) -> Result<SignTable, ModelError> {
    let critical = model
        .closed_loop(control)
        .critical_points(model.domain(), config);
    sign_table(model, control, family, &critical, config)?.into_result()
}

/// Regularity report for one level value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelReport {
    pub level: f64,
    pub samples: usize,
    /// Minimum gradient norm over the sampled level set (`None` if the level set
    /// misses the domain).
    pub min_gradient_norm: Option<f64>,
    pub witness: Option<Vec<f64>>,
    /// A critical point of `φ` lying on the level set.
    pub critical_point: Option<Vec<f64>>,
    pub degenerate: bool,
    /// The level is the minimum of `φ` over the domain (allowed for `a_0`).
    pub floor: bool,
}

/// Samples the level set `φ = a` and reports its minimum gradient norm.
pub fn validate_level(
    fam: &PartitioningFamily,
    level: f64,
    domain: &Domain,
    config: &Config,
) -> Result<LevelReport, EvalError> {
    let grid = Grid::new(domain.clone(), config.grid);
    let samples = FamilySamples::new(fam, &grid)?;
    let mut points = level_points(fam, &samples, &grid, level, config.eps_face)?;
    let hessian: Vec<Vec<Expr>> = fam
        .gradient
        .iter()
        .map(|g| {
            (0..domain.dim())
                .map(|k| g.differentiate(Var::State(k)))
                .collect()
        })
        .collect();
    let critical_point = find_zeros(&fam.gradient, &hessian, domain, config)
        .into_iter()
        .find(|p| {
            fam.value(p)
                .map(|v| (v - level).abs() <= 1e-9 * level.abs().max(1.0))
                .unwrap_or(false)
        });
    if let Some(p) = &critical_point {
        points.push(p.clone());
    }
    let mut min: Option<(f64, Vec<f64>)> = None;
    for p in &points {
        let g = fam.gradient_norm(p)?;
        if min.as_ref().is_none_or(|(m, _)| g < *m) {
            min = Some((g, p.clone()));
        }
    }
    let degenerate = min.as_ref().is_some_and(|(m, _)| *m < config.eps_reg);
    let floor = samples.min() >= level - config.eps_face
        && critical_point
            .as_ref()
            .is_some_and(|p| fam.value(p).is_ok_and(|v| v <= samples.min() + config.eps_face));
    Ok(LevelReport {
        level,
        samples: points.len(),
        min_gradient_norm: min.as_ref().map(|(m, _)| *m),
        witness: min.map(|(_, p)| p),
        critical_point,
        degenerate,
        floor,
    })
}

/// Checks every level of a family. A degenerate `a_0` is accepted when it is the
/// minimum of `φ` over the domain.
pub fn validate_levels(
    fam: &PartitioningFamily,
    family: usize,
    domain: &Domain,
    config: &Config,
) -> Result<Vec<LevelReport>, ModelError> {
    let mut out = Vec::with_capacity(fam.levels.len());
    for (h, &a) in fam.levels.iter().enumerate() {
        let report = validate_level(fam, a, domain, config)?;
        if report.degenerate && !(h == 0 && report.floor) {
            return Err(ModelError::DegenerateLevel {
                family,
                level: a,
                point: report.witness.clone().unwrap_or_default(),
                gradient_norm: report.min_gradient_norm.unwrap_or(0.0),
            });
        }
        out.push(report);
    }
    Ok(out)
}
