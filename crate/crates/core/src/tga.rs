//! Timed game automaton with paired clocks per family and affine clock updates.
//!
//! Locations are (region, control) pairs plus one sink, where a region is a cell
//! (`Mode::Cells`) or an extended cell (`Mode::Extended`). Each family `i` owns a clock
//! pair `(c1, c2)`: `c1` feeds the invariant `c1 ≤ t_hi`, `c2` the guard `c2 ≥ t_lo`.

use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::bounds::{serialize_time, BoundsTable, TimingBounds};
use crate::config::Config;
use crate::expr::{EvalError, Expr};
use crate::model::{Model, Sign};
use crate::partition::{BoundarySample, CellComplex, OuterLevel};

/// Numerical slack for clocks slightly below zero after an update.
pub const CLOCK_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TgaError {
    #[error(
        "facet samples between {from} and {to} disagree in sign for family {family} under `{control}`: {positive} at {at_positive:?}, {negative} at {at_negative:?}"
    )]
    FacetSignConflict {
        control: String,
        family: usize,
        from: String,
        to: String,
        positive: f64,
        at_positive: Vec<f64>,
        negative: f64,
        at_negative: Vec<f64>,
    },
    #[error("no timing bounds for family {family}, slice {slice}, control {control}")]
    MissingBounds {
        family: usize,
        slice: usize,
        control: usize,
    },
    #[error("switch update for family {family} is undefined: {reason}")]
    UnboundedRatio { family: usize, reason: String },
    #[error("clock {clock} of family {family} would become negative ({value})")]
    NegativeClock {
        family: usize,
        clock: usize,
        value: f64,
    },
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Cells,
    Extended,
}

/// A cell or a union of cells sharing one slice tuple.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Region {
    pub id: usize,
    pub name: String,
    pub y: Vec<usize>,
    pub cells: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegionAdjacency {
    pub regions: [usize; 2],
    pub family: usize,
    pub facet_points: Vec<Vec<f64>>,
}

/// Regions of the automaton with their adjacency and domain-boundary samples.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Regions {
    pub mode: Mode,
    pub regions: Vec<Region>,
    pub region_of_cell: Vec<usize>,
    pub adjacency: Vec<RegionAdjacency>,
    #[serde(skip)]
    pub boundary: Vec<Vec<BoundarySample>>,
}

impl Regions {
    pub fn new(complex: &CellComplex, mode: Mode, facet_cap: usize) -> Self {
        let mut regions: Vec<Region> = Vec::new();
        let mut region_of_cell = vec![0; complex.cells.len()];
        for cell in &complex.cells {
            let existing = match mode {
                Mode::Cells => None,
                Mode::Extended => regions.iter().position(|r| r.y == cell.y),
            };
            let r = match existing {
                Some(r) => r,
                None => {
                    let id = regions.len();
                    let name = match mode {
                        Mode::Cells => cell.name(),
                        Mode::Extended => format!(
                            "y{}",
                            cell.y.iter().map(|h| h.to_string()).collect::<Vec<_>>().join(".")
                        ),
                    };
                    regions.push(Region {
                        id,
                        name,
                        y: cell.y.clone(),
                        cells: Vec::new(),
                    });
                    id
                }
            };
            regions[r].cells.push(cell.id);
            region_of_cell[cell.id] = r;
        }
        let mut merged: BTreeMap<([usize; 2], usize), Vec<Vec<f64>>> = BTreeMap::new();
        for adj in &complex.adjacency {
            let a = region_of_cell[adj.cells[0]];
            let b = region_of_cell[adj.cells[1]];
            if a == b {
                continue;
            }
            let key = ([a.min(b), a.max(b)], adj.families[0]);
            merged
                .entry(key)
                .or_default()
                .extend(adj.facet_points.iter().cloned());
        }
        let adjacency = merged
            .into_iter()
            .map(|((regions, family), points)| {
                let facet_points = if points.len() > facet_cap {
                    (0..facet_cap)
                        .map(|k| points[k * (points.len() - 1) / (facet_cap - 1).max(1)].clone())
                        .collect()
                } else {
                    points
                };
                RegionAdjacency {
                    regions,
                    family,
                    facet_points,
                }
            })
            .collect();
        let boundary = regions
            .iter()
            .map(|r| {
                r.cells
                    .iter()
                    .flat_map(|&c| complex.boundary[c].iter().cloned())
                    .collect()
            })
            .collect();
        Regions {
            mode,
            regions,
            region_of_cell,
            adjacency,
            boundary,
        }
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn by_name(&self, name: &str) -> Option<usize> {
        self.regions.iter().position(|r| r.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Location {
    pub id: usize,
    pub name: String,
    /// `None` for the sink.
    pub region: Option<usize>,
    pub control: Option<usize>,
}

impl Location {
    pub fn is_sink(&self) -> bool {
        self.region.is_none()
    }
}

/// `c^family_2 ≥ bound`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Guard {
    pub family: usize,
    pub bound: f64,
}

/// `c^family_1 ≤ bound`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Invariant {
    pub family: usize,
    #[serde(serialize_with = "serialize_time")]
    pub bound: f64,
}

/// Affine map `v ↦ α + β v` on one clock pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairMap {
    pub alpha: [f64; 2],
    pub beta: [[f64; 2]; 2],
}

impl PairMap {
    pub const IDENTITY: PairMap = PairMap {
        alpha: [0.0, 0.0],
        beta: [[1.0, 0.0], [0.0, 1.0]],
    };
    pub const RESET: PairMap = PairMap {
        alpha: [0.0, 0.0],
        beta: [[0.0, 0.0], [0.0, 0.0]],
    };

    pub fn apply(&self, v: [f64; 2]) -> [f64; 2] {
        [
            self.alpha[0] + self.beta[0][0] * v[0] + self.beta[0][1] * v[1],
            self.alpha[1] + self.beta[1][0] * v[0] + self.beta[1][1] * v[1],
        ]
    }

    /// `self ∘ first`: apply `first`, then `self`.
    pub fn after(&self, first: &PairMap) -> PairMap {
        let a = &self.beta;
        let b = &first.beta;
        let mut beta = [[0.0; 2]; 2];
        for (r, row) in beta.iter_mut().enumerate() {
            for (c, slot) in row.iter_mut().enumerate() {
                *slot = a[r][0] * b[0][c] + a[r][1] * b[1][c];
            }
        }
        let shifted = self.apply(first.alpha);
        PairMap {
            alpha: shifted,
            beta,
        }
    }

    /// Image of the box `[lo, hi]` (per component).
    pub fn apply_box(&self, lo: [f64; 2], hi: [f64; 2]) -> ([f64; 2], [f64; 2]) {
        let mut out_lo = self.alpha;
        let mut out_hi = self.alpha;
        for r in 0..2 {
            for c in 0..2 {
                let k = self.beta[r][c];
                if k == 0.0 {
                    continue;
                }
                let (a, b) = (k * lo[c], k * hi[c]);
                out_lo[r] += a.min(b);
                out_hi[r] += a.max(b);
            }
        }
        (out_lo, out_hi)
    }
}

/// One affine map per family.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UpdateMap {
    pub pairs: Vec<PairMap>,
}

impl UpdateMap {
    pub fn identity(families: usize) -> Self {
        UpdateMap {
            pairs: vec![PairMap::IDENTITY; families],
        }
    }

    pub fn reset_pair(families: usize, family: usize) -> Self {
        let mut u = UpdateMap::identity(families);
        u.pairs[family] = PairMap::RESET;
        u
    }

    pub fn after(&self, first: &UpdateMap) -> UpdateMap {
        UpdateMap {
            pairs: self
                .pairs
                .iter()
                .zip(&first.pairs)
                .map(|(a, b)| a.after(b))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Action {
    /// Switch to another control law.
    Controllable { control: usize },
    /// Crossing of a level of `family`; `None` for leaving the domain box elsewhere.
    Uncontrollable { family: Option<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Transition {
    pub id: usize,
    pub source: usize,
    pub target: usize,
    pub action: Action,
    pub guards: Vec<Guard>,
    pub update: UpdateMap,
}

impl Transition {
    pub fn is_controllable(&self) -> bool {
        matches!(self.action, Action::Controllable { .. })
    }
}

/// An edge that was not built because its update map is undefined.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefusedEdge {
    pub source: String,
    pub target: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimedGameAutomaton {
    pub mode: Mode,
    pub families: usize,
    pub controls: Vec<String>,
    pub regions: Regions,
    pub locations: Vec<Location>,
    pub initial: Vec<usize>,
    pub invariants: Vec<Vec<Invariant>>,
    pub transitions: Vec<Transition>,
    pub refused: Vec<RefusedEdge>,
    /// Control fixed per region when the automaton is restricted by a strategy.
    pub strategy: Option<Vec<usize>>,
    #[serde(skip)]
    pub bounds: BoundsTable,
    #[serde(skip)]
    outgoing: Vec<Vec<usize>>,
}

/// Update of one clock pair when switching control inside a slice.
///
/// Same sign: `β = diag(t̄'/t̄, t̲'/t̲)`, `α = 0`. Opposite sign: `α = (t̄', t̲')`,
/// `β = [[0, −t̄'/t̲], [−t̲'/t̄, 0]]`.
pub fn switch_update(
    from: &TimingBounds,
    to: &TimingBounds,
    same_sign: bool,
) -> Result<PairMap, TgaError> {
    let family = from.family;
    let finite_positive = |v: f64| v.is_finite() && v > 0.0;
    let check = |name: &str, v: f64| -> Result<(), TgaError> {
        if finite_positive(v) {
            Ok(())
        } else {
            Err(TgaError::UnboundedRatio {
                family,
                reason: format!("{name} = {v}"),
            })
        }
    };
    check("source t_hi", from.t_hi)?;
    check("source t_lo", from.t_lo)?;
    check("target t_hi", to.t_hi)?;
    check("target t_lo", to.t_lo)?;
    Ok(if same_sign {
        PairMap {
            alpha: [0.0, 0.0],
            beta: [[to.t_hi / from.t_hi, 0.0], [0.0, to.t_lo / from.t_lo]],
        }
    } else {
        PairMap {
            alpha: [to.t_hi, to.t_lo],
            beta: [[0.0, -to.t_hi / from.t_lo], [-to.t_lo / from.t_hi, 0.0]],
        }
    })
}

/// Clock pairs, one per family.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Valuation(pub Vec<[f64; 2]>);

impl Valuation {
    pub fn zero(families: usize) -> Self {
        Valuation(vec![[0.0, 0.0]; families])
    }
}

/// Adds `t` to every clock.
pub fn delay(v: &Valuation, t: f64) -> Valuation {
    Valuation(v.0.iter().map(|[a, b]| [a + t, b + t]).collect())
}

/// Applies an update; components in `[-1e-12, 0)` are clamped to zero.
pub fn apply_update(v: &Valuation, u: &UpdateMap) -> Result<Valuation, TgaError> {
    let mut out = Vec::with_capacity(v.0.len());
    for (family, (pair, map)) in v.0.iter().zip(&u.pairs).enumerate() {
        let mut w = map.apply(*pair);
        for (clock, c) in w.iter_mut().enumerate() {
            if *c < -CLOCK_TOLERANCE {
                return Err(TgaError::NegativeClock {
                    family,
                    clock,
                    value: *c,
                });
            }
            if *c < 0.0 {
                *c = 0.0;
            }
        }
        out.push(w);
    }
    Ok(Valuation(out))
}

struct FacetSigns {
    positive: Option<(f64, Vec<f64>)>,
    negative: Option<(f64, Vec<f64>)>,
}

fn facet_signs(
    lie: &Expr,
    points: &[Vec<f64>],
    critical: &[Vec<f64>],
    r_crit: f64,
) -> Result<FacetSigns, EvalError> {
    let mut values = Vec::with_capacity(points.len());
    for p in points {
        let near = critical.iter().any(|c| {
            p.iter().zip(c).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() < r_crit
        });
        if !near {
            values.push((lie.eval_state(p)?, p));
        }
    }
    let scale = values.iter().map(|(v, _)| v.abs()).fold(1.0, f64::max);
    let tol = 1e-9 * scale;
    let positive = values
        .iter()
        .filter(|(v, _)| *v > tol)
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(v, p)| (*v, (*p).clone()));
    let negative = values
        .iter()
        .filter(|(v, _)| *v < -tol)
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(v, p)| (*v, (*p).clone()));
    Ok(FacetSigns { positive, negative })
}

impl TimedGameAutomaton {
    fn index_edges(&mut self) {
        let mut outgoing = vec![Vec::new(); self.locations.len()];
        for t in &self.transitions {
            outgoing[t.source].push(t.id);
        }
        self.outgoing = outgoing;
    }

    pub fn sink(&self) -> usize {
        self.locations
            .iter()
            .position(Location::is_sink)
            .expect("automaton has a sink")
    }

    /// Location of `(region, control)`; in a restricted automaton the control is
    /// ignored and the region's only location is returned.
    pub fn location(&self, region: usize, control: usize) -> Option<usize> {
        self.locations.iter().position(|l| {
            l.region == Some(region) && (self.strategy.is_some() || l.control == Some(control))
        })
    }

    pub fn outgoing(&self, location: usize) -> impl Iterator<Item = &Transition> {
        self.outgoing[location]
            .iter()
            .map(move |&t| &self.transitions[t])
    }

    /// Uncontrollable successors of a location.
    pub fn successors(&self, location: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .outgoing(location)
            .filter(|t| !t.is_controllable())
            .map(|t| t.target)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    pub fn invariant_holds(&self, location: usize, v: &Valuation, tol: f64) -> bool {
        self.invariants[location]
            .iter()
            .all(|inv| v.0[inv.family][0] <= inv.bound + tol)
    }

    pub fn guards_hold(&self, transition: &Transition, v: &Valuation, tol: f64) -> bool {
        transition
            .guards
            .iter()
            .all(|g| v.0[g.family][1] >= g.bound - tol)
    }

    /// Longest delay allowed by the invariant of `location` from `v`.
    pub fn max_delay(&self, location: usize, v: &Valuation) -> f64 {
        self.invariants[location]
            .iter()
            .map(|inv| (inv.bound - v.0[inv.family][0]).max(0.0))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn non_sink_locations(&self) -> usize {
        self.locations.iter().filter(|l| !l.is_sink()).count()
    }

    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph tga {\n  rankdir=LR;\n  node [shape=box];\n");
        for l in &self.locations {
            let mut label = l.name.clone();
            for inv in &self.invariants[l.id] {
                let _ = write!(label, "\\nc{}_1 <= {}", inv.family + 1, fmt_num(inv.bound));
            }
            let shape = if l.is_sink() { ", shape=doubleoctagon" } else { "" };
            let _ = writeln!(out, "  L{} [label=\"{}\"{}];", l.id, label, shape);
        }
        for t in &self.transitions {
            let (style, action) = match t.action {
                Action::Controllable { control } => {
                    ("solid", format!("sigma_c {}", self.controls[control]))
                }
                Action::Uncontrollable { family: Some(i) } => ("dashed", format!("sigma_u {}", i + 1)),
                Action::Uncontrollable { family: None } => ("dashed", "sigma_u exit".to_string()),
            };
            let mut label = action;
            for g in &t.guards {
                let _ = write!(label, "\\nc{}_2 >= {}", g.family + 1, fmt_num(g.bound));
            }
            let _ = writeln!(
                out,
                "  L{} -> L{} [style={}, label=\"{}\"];",
                t.source, t.target, style, label
            );
        }
        out.push_str("}\n");
        out
    }
}

fn fmt_num(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:.6}")
    }
}

fn bounds_for<'a>(
    bounds: &'a BoundsTable,
    family: usize,
    slice: usize,
    control: usize,
) -> Result<&'a TimingBounds, TgaError> {
    bounds
        .get(family, slice, control)
        .ok_or(TgaError::MissingBounds {
            family,
            slice,
            control,
        })
}

/// Clock-pair updates for switching `from → to` inside a region with tuple `y`.
fn switch_map(
    bounds: &BoundsTable,
    y: &[usize],
    from: usize,
    to: usize,
) -> Result<UpdateMap, TgaError> {
    let mut pairs = Vec::with_capacity(y.len());
    for (i, &h) in y.iter().enumerate() {
        let a = bounds_for(bounds, i, h, from)?;
        let b = bounds_for(bounds, i, h, to)?;
        pairs.push(switch_update(a, b, a.sign == b.sign)?);
    }
    Ok(UpdateMap { pairs })
}

/// Builds the automaton: invariants from `t_hi`, uncontrollable level crossings in the
/// direction of the facet sign with guards from `t_lo`, sink edges for leaving the
/// domain, and controllable switches with their update maps.
pub fn build_tga(
    model: &Model,
    complex: &CellComplex,
    bounds: &BoundsTable,
    critical: &[Vec<Vec<f64>>],
    mode: Mode,
    config: &Config,
) -> Result<TimedGameAutomaton, TgaError> {
    let k = model.families.len();
    let controls: Vec<String> = model.controls.iter().map(|c| c.name.clone()).collect();
    let regions = Regions::new(complex, mode, config.facet_samples);

    let mut locations = Vec::new();
    let mut invariants = Vec::new();
    for r in &regions.regions {
        for (c, name) in controls.iter().enumerate() {
            let id = locations.len();
            locations.push(Location {
                id,
                name: format!("{}/{}", r.name, name),
                region: Some(r.id),
                control: Some(c),
            });
            let mut inv = Vec::new();
            for (i, &h) in r.y.iter().enumerate() {
                let b = bounds_for(bounds, i, h, c)?;
                if b.t_hi.is_finite() {
                    inv.push(Invariant {
                        family: i,
                        bound: b.t_hi,
                    });
                }
            }
            invariants.push(inv);
        }
    }
    let sink = locations.len();
    locations.push(Location {
        id: sink,
        name: "sink".into(),
        region: None,
        control: None,
    });
    invariants.push(Vec::new());
    let loc = |r: usize, c: usize| r * controls.len() + c;

    let lie: Vec<Vec<Expr>> = (0..controls.len())
        .map(|c| (0..k).map(|i| model.lie_derivative(c, i).expr).collect())
        .collect();
    let fields: Vec<Vec<Expr>> = (0..controls.len())
        .map(|c| model.closed_loop(c).field)
        .collect();

    let mut transitions: Vec<Transition> = Vec::new();
    let mut push = |source, target, action, guards, update| {
        let id = transitions.len();
        transitions.push(Transition {
            id,
            source,
            target,
            action,
            guards,
            update,
        });
    };

    // Level crossings between adjacent regions.
    for adj in &regions.adjacency {
        let i = adj.family;
        let [a, b] = adj.regions;
        let (lower, upper) = if regions.regions[a].y[i] < regions.regions[b].y[i] {
            (a, b)
        } else {
            (b, a)
        };
        for c in 0..controls.len() {
            let signs = facet_signs(&lie[c][i], &adj.facet_points, &critical[c], config.r_crit)?;
            let (from, to) = match (&signs.positive, &signs.negative) {
                (Some(p), Some(n)) => {
                    return Err(TgaError::FacetSignConflict {
                        control: controls[c].clone(),
                        family: i,
                        from: regions.regions[lower].name.clone(),
                        to: regions.regions[upper].name.clone(),
                        positive: p.0,
                        at_positive: p.1.clone(),
                        negative: n.0,
                        at_negative: n.1.clone(),
                    })
                }
                (Some(_), None) => (lower, upper),
                (None, Some(_)) => (upper, lower),
                (None, None) => continue,
            };
            let b = bounds_for(bounds, i, regions.regions[from].y[i], c)?;
            push(
                loc(from, c),
                loc(to, c),
                Action::Uncontrollable { family: Some(i) },
                vec![Guard {
                    family: i,
                    bound: b.t_lo,
                }],
                UpdateMap::reset_pair(k, i),
            );
        }
    }

    // Leaving the domain: through an outermost level (guarded) or elsewhere.
    for r in &regions.regions {
        for c in 0..controls.len() {
            let mut exits = vec![false; k];
            let mut box_exit = false;
            for s in &regions.boundary[r.id] {
                let mut through_level = false;
                for &(i, side) in &s.outer {
                    let v = lie[c][i].eval_state(&s.point)?;
                    let scale = 1e-9 * v.abs().max(1.0);
                    let outward = match side {
                        OuterLevel::Highest => v > scale,
                        OuterLevel::Lowest => v < -scale,
                    };
                    if outward {
                        exits[i] = true;
                        through_level = true;
                    }
                }
                if !through_level && !s.normals.is_empty() {
                    let f = crate::expr::eval_all(&fields[c], &s.point, &[])?;
                    let speed = f.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if s
                        .normals
                        .iter()
                        .any(|&(d, n)| n * f[d] > 1e-9 * speed.max(1.0))
                    {
                        box_exit = true;
                    }
                }
            }
            for (i, exits) in exits.iter().enumerate() {
                if *exits {
                    let b = bounds_for(bounds, i, r.y[i], c)?;
                    push(
                        loc(r.id, c),
                        sink,
                        Action::Uncontrollable { family: Some(i) },
                        vec![Guard {
                            family: i,
                            bound: b.t_lo,
                        }],
                        UpdateMap::reset_pair(k, i),
                    );
                }
            }
            if box_exit {
                push(
                    loc(r.id, c),
                    sink,
                    Action::Uncontrollable { family: None },
                    Vec::new(),
                    UpdateMap::identity(k),
                );
            }
        }
    }

    // Control switches.
    let mut refused = Vec::new();
    for r in &regions.regions {
        for from in 0..controls.len() {
            for to in 0..controls.len() {
                if from == to {
                    continue;
                }
                match switch_map(bounds, &r.y, from, to) {
                    Ok(update) => push(
                        loc(r.id, from),
                        loc(r.id, to),
                        Action::Controllable { control: to },
                        Vec::new(),
                        update,
                    ),
                    Err(e) => refused.push(RefusedEdge {
                        source: locations[loc(r.id, from)].name.clone(),
                        target: locations[loc(r.id, to)].name.clone(),
                        reason: e.to_string(),
                    }),
                }
            }
        }
    }

    let initial = (0..sink).collect();
    let mut tga = TimedGameAutomaton {
        mode,
        families: k,
        controls,
        regions,
        locations,
        initial,
        invariants,
        transitions,
        refused,
        strategy: None,
        bounds: bounds.clone(),
        outgoing: Vec::new(),
    };
    tga.index_edges();
    Ok(tga)
}

/// Keeps one location per region (the strategy's control) plus the sink. Each
/// crossing is composed with the immediate switch to the target region's control;
/// crossings whose composed update is undefined are dropped and listed in `refused`.
pub fn restrict(tga: &TimedGameAutomaton, strategy: &[usize]) -> TimedGameAutomaton {
    let k = tga.families;
    let mut locations = Vec::new();
    let mut invariants = Vec::new();
    let mut old_to_new = vec![None; tga.locations.len()];
    for r in &tga.regions.regions {
        let c = strategy[r.id];
        let Some(old) = tga.location(r.id, c) else {
            continue;
        };
        let id = locations.len();
        old_to_new[old] = Some(id);
        locations.push(Location {
            id,
            name: r.name.clone(),
            region: Some(r.id),
            control: Some(c),
        });
        invariants.push(tga.invariants[old].clone());
    }
    let sink = locations.len();
    old_to_new[tga.sink()] = Some(sink);
    locations.push(Location {
        id: sink,
        name: "sink".into(),
        region: None,
        control: None,
    });
    invariants.push(Vec::new());

    let mut transitions = Vec::new();
    let mut refused = Vec::new();
    for t in &tga.transitions {
        if t.is_controllable() {
            continue;
        }
        let Some(source) = old_to_new[t.source] else {
            continue;
        };
        let target_loc = &tga.locations[t.target];
        let (target, update) = match target_loc.region {
            None => (sink, t.update.clone()),
            Some(region) => {
                let c_from = target_loc.control.expect("control");
                let c_to = strategy[region];
                let Some(target) = tga.location(region, c_to).and_then(|l| old_to_new[l]) else {
                    continue;
                };
                if c_from == c_to {
                    (target, t.update.clone())
                } else {
                    match compose_switch(tga, t, region, c_from, c_to) {
                        Ok(u) => (target, u),
                        Err(e) => {
                            refused.push(RefusedEdge {
                                source: locations[source].name.clone(),
                                target: locations[target].name.clone(),
                                reason: e.to_string(),
                            });
                            continue;
                        }
                    }
                }
            }
        };
        let id = transitions.len();
        transitions.push(Transition {
            id,
            source,
            target,
            action: t.action,
            guards: t.guards.clone(),
            update,
        });
    }
    let initial = (0..sink).collect();
    let mut out = TimedGameAutomaton {
        mode: tga.mode,
        families: k,
        controls: tga.controls.clone(),
        regions: tga.regions.clone(),
        locations,
        initial,
        invariants,
        transitions,
        refused,
        strategy: Some(strategy.to_vec()),
        bounds: tga.bounds.clone(),
        outgoing: Vec::new(),
    };
    out.index_edges();
    out
}

/// Crossing update followed by the switch `c_from → c_to` in the target region. The
/// pair reset by the crossing starts from `(0, 0)`, so its switch needs no division.
fn compose_switch(
    tga: &TimedGameAutomaton,
    crossing: &Transition,
    region: usize,
    c_from: usize,
    c_to: usize,
) -> Result<UpdateMap, TgaError> {
    let y = &tga.regions.regions[region].y;
    let reset_family = match crossing.action {
        Action::Uncontrollable { family } => family,
        Action::Controllable { .. } => None,
    };
    let mut pairs = Vec::with_capacity(y.len());
    for (i, &h) in y.iter().enumerate() {
        let a = bounds_for(&tga.bounds, i, h, c_from)?;
        let b = bounds_for(&tga.bounds, i, h, c_to)?;
        let same = a.sign == b.sign;
        if Some(i) == reset_family {
            let alpha = if same {
                [0.0, 0.0]
            } else if b.t_hi.is_finite() {
                [b.t_hi, b.t_lo]
            } else {
                return Err(TgaError::UnboundedRatio {
                    family: i,
                    reason: format!("target t_hi = {} after reversal", b.t_hi),
                });
            };
            pairs.push(PairMap {
                alpha,
                beta: [[0.0; 2]; 2],
            });
        } else {
            pairs.push(switch_update(a, b, same)?.after(&crossing.update.pairs[i]));
        }
    }
    Ok(UpdateMap { pairs })
}

/// Transitions enabled at `(location, v)` and the longest admissible delay.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Enabled {
    pub transitions: Vec<usize>,
    #[serde(serialize_with = "serialize_time")]
    pub max_delay: f64,
}

pub fn enabled(tga: &TimedGameAutomaton, location: usize, v: &Valuation) -> Enabled {
    if !tga.invariant_holds(location, v, 0.0) {
        return Enabled {
            transitions: Vec::new(),
            max_delay: 0.0,
        };
    }
    let transitions = tga
        .outgoing(location)
        .filter(|t| tga.guards_hold(t, v, 0.0))
        .map(|t| t.id)
        .collect();
    Enabled {
        transitions,
        max_delay: tga.max_delay(location, v),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ViolationKind {
    Invariant {
        family: usize,
        clock: f64,
        bound: f64,
    },
    Guard {
        family: usize,
        clock: f64,
        bound: f64,
    },
    NoTransition {
        from: String,
        to: String,
    },
    NegativeClock {
        family: usize,
        value: f64,
    },
    TimeReversal,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunViolation {
    /// Index of the step in the timed sequence.
    pub step: usize,
    pub time: f64,
    pub location: String,
    #[serde(flatten)]
    pub kind: ViolationKind,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Feasibility {
    pub feasible: bool,
    pub steps: usize,
    pub violation: Option<RunViolation>,
    pub final_valuation: Option<Valuation>,
    /// Smallest `clock − bound` over the guards that fired.
    pub guard_margin: f64,
    /// Smallest `bound − clock` over the invariant checks.
    pub invariant_margin: f64,
}

/// Replays a timed location sequence `[(location, entry time)]` from `initial`:
/// every dwell must respect the source invariant and every step must match a
/// transition whose guard holds at the firing time. `end_time` extends the last dwell.
pub fn run_feasible(
    tga: &TimedGameAutomaton,
    sequence: &[(usize, f64)],
    initial: &Valuation,
    end_time: Option<f64>,
    tol: f64,
) -> Feasibility {
    let guard_margin = std::cell::Cell::new(f64::INFINITY);
    let invariant_margin = std::cell::Cell::new(f64::INFINITY);
    let fail = |step: usize, time: f64, location: usize, kind| Feasibility {
        feasible: false,
        steps: step,
        violation: Some(RunViolation {
            step,
            time,
            location: tga.locations[location].name.clone(),
            kind,
        }),
        final_valuation: None,
        guard_margin: guard_margin.get(),
        invariant_margin: invariant_margin.get(),
    };
    let Some(&(first, t0)) = sequence.first() else {
        return Feasibility {
            feasible: true,
            steps: 0,
            violation: None,
            final_valuation: Some(initial.clone()),
            guard_margin: f64::INFINITY,
            invariant_margin: f64::INFINITY,
        };
    };
    let mut v = initial.clone();
    let mut here = first;
    let mut now = t0;
    let check_invariant = |loc: usize, v: &Valuation| {
        for inv in &tga.invariants[loc] {
            let slack = inv.bound - v.0[inv.family][0];
            invariant_margin.set(invariant_margin.get().min(slack));
        }
        tga.invariants[loc]
            .iter()
            .find(|inv| v.0[inv.family][0] > inv.bound + tol)
            .map(|inv| ViolationKind::Invariant {
                family: inv.family,
                clock: v.0[inv.family][0],
                bound: inv.bound,
            })
    };
    if let Some(kind) = check_invariant(here, &v) {
        return fail(0, now, here, kind);
    }
    for (step, &(next, t)) in sequence.iter().enumerate().skip(1) {
        if t < now {
            return fail(step, t, here, ViolationKind::TimeReversal);
        }
        // Clocks grow linearly, so the invariant holds throughout the dwell iff it
        // holds at its end.
        v = delay(&v, t - now);
        now = t;
        if let Some(kind) = check_invariant(here, &v) {
            return fail(step, now, here, kind);
        }
        let candidates: Vec<&Transition> = tga
            .outgoing(here)
            .filter(|tr| tr.target == next && !tr.is_controllable())
            .collect();
        let candidates = if candidates.is_empty() {
            tga.outgoing(here).filter(|tr| tr.target == next).collect()
        } else {
            candidates
        };
        if candidates.is_empty() {
            return fail(
                step,
                now,
                here,
                ViolationKind::NoTransition {
                    from: tga.locations[here].name.clone(),
                    to: tga.locations[next].name.clone(),
                },
            );
        }
        let Some(tr) = candidates.iter().find(|tr| tga.guards_hold(tr, &v, tol)) else {
            let g = candidates[0]
                .guards
                .iter()
                .find(|g| v.0[g.family][1] < g.bound - tol)
                .expect("a guard fails");
            return fail(
                step,
                now,
                here,
                ViolationKind::Guard {
                    family: g.family,
                    clock: v.0[g.family][1],
                    bound: g.bound,
                },
            );
        };
        for g in &tr.guards {
            guard_margin.set(guard_margin.get().min(v.0[g.family][1] - g.bound));
        }
        v = match apply_update(&v, &tr.update) {
            Ok(v) => v,
            Err(TgaError::NegativeClock { family, value, .. }) => {
                return fail(step, now, here, ViolationKind::NegativeClock { family, value })
            }
            Err(_) => unreachable!("apply_update only fails on negative clocks"),
        };
        here = next;
        if let Some(kind) = check_invariant(here, &v) {
            return fail(step, now, here, kind);
        }
    }
    if let Some(end) = end_time {
        if end > now {
            v = delay(&v, end - now);
            if let Some(kind) = check_invariant(here, &v) {
                return fail(sequence.len(), end, here, kind);
            }
        }
    }
    Feasibility {
        feasible: true,
        steps: sequence.len(),
        violation: None,
        final_valuation: Some(v),
        guard_margin: guard_margin.get(),
        invariant_margin: invariant_margin.get(),
    }
}

/// A location with the time window in which it may be occupied.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReachEntry {
    pub location: usize,
    pub name: String,
    pub time: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReachResult {
    pub entries: Vec<ReachEntry>,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct Symbolic {
    entry: [f64; 2],
    lo: Vec<[f64; 2]>,
    hi: Vec<[f64; 2]>,
}

impl Symbolic {
    fn merge(&mut self, other: &Symbolic) -> bool {
        let before = self.clone();
        self.entry[0] = self.entry[0].min(other.entry[0]);
        self.entry[1] = self.entry[1].max(other.entry[1]);
        for i in 0..self.lo.len() {
            for c in 0..2 {
                self.lo[i][c] = self.lo[i][c].min(other.lo[i][c]);
                self.hi[i][c] = self.hi[i][c].max(other.hi[i][c]);
            }
        }
        *self != before
    }
}

/// Forward exploration with interval boxes over entry times and clock pairs.
///
/// Each location carries the hull of its possible entry times and entry valuations.
/// A transition is explored when its guard can hold before the invariant expires;
/// times are capped at `horizon`.
pub fn reach_locations(
    tga: &TimedGameAutomaton,
    initial: &[usize],
    start: &Valuation,
    horizon: f64,
) -> ReachResult {
    const MAX_ITERATIONS: usize = 100_000;
    let k = tga.families;
    let mut states: Vec<Option<Symbolic>> = vec![None; tga.locations.len()];
    let mut occupancy: Vec<Option<[f64; 2]>> = vec![None; tga.locations.len()];
    let mut queue = VecDeque::new();
    for &l in initial {
        states[l] = Some(Symbolic {
            entry: [0.0, 0.0],
            lo: start.0.clone(),
            hi: start.0.clone(),
        });
        queue.push_back(l);
    }
    let mut iterations = 0;
    while let Some(l) = queue.pop_front() {
        iterations += 1;
        if iterations > MAX_ITERATIONS {
            break;
        }
        let s = states[l].clone().expect("queued state");
        // Latest dwell permitted by the invariant, starting from the smallest clocks.
        let mut dmax = f64::INFINITY;
        let mut feasible = true;
        for inv in &tga.invariants[l] {
            let slack = inv.bound - s.lo[inv.family][0];
            if slack < 0.0 {
                feasible = false;
            }
            dmax = dmax.min(slack);
        }
        if !feasible {
            continue;
        }
        dmax = dmax.min(horizon - s.entry[0]).max(0.0);
        let window = [s.entry[0], (s.entry[1] + dmax).min(horizon)];
        occupancy[l] = Some(match occupancy[l] {
            Some(w) => [w[0].min(window[0]), w[1].max(window[1])],
            None => window,
        });
        for t in tga.outgoing(l) {
            let dmin = t
                .guards
                .iter()
                .map(|g| g.bound - s.hi[g.family][1])
                .fold(0.0, f64::max);
            if dmin > dmax || s.entry[0] + dmin > horizon {
                continue;
            }
            let mut next = Symbolic {
                entry: [s.entry[0] + dmin, (s.entry[1] + dmax).min(horizon)],
                lo: Vec::with_capacity(k),
                hi: Vec::with_capacity(k),
            };
            for i in 0..k {
                let lo = [s.lo[i][0] + dmin, s.lo[i][1] + dmin];
                let hi = [s.hi[i][0] + dmax, s.hi[i][1] + dmax];
                let hi = [hi[0].min(f64::MAX), hi[1].min(f64::MAX)];
                let (mut a, b) = t.update.pairs[i].apply_box(lo, hi);
                a[0] = a[0].max(0.0);
                a[1] = a[1].max(0.0);
                next.lo.push(a);
                next.hi.push(b);
            }
            let changed = match &mut states[t.target] {
                Some(existing) => existing.merge(&next),
                slot @ None => {
                    *slot = Some(next);
                    true
                }
            };
            if changed && !queue.contains(&t.target) {
                queue.push_back(t.target);
            }
        }
    }
    let entries = occupancy
        .iter()
        .enumerate()
        .filter_map(|(l, w)| {
            w.map(|time| ReachEntry {
                location: l,
                name: tga.locations[l].name.clone(),
                time,
            })
        })
        .collect();
    ReachResult {
        entries,
        converged: iterations <= MAX_ITERATIONS,
        iterations,
    }
}

/// Sign of the Lie derivative for `(family, slice, control)` from the bounds table.
pub fn slice_sign(bounds: &BoundsTable, family: usize, slice: usize, control: usize) -> Option<Sign> {
    bounds.get(family, slice, control).and_then(|b| b.sign)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tb(t_lo: f64, t_hi: f64, sign: Sign) -> TimingBounds {
        TimingBounds {
            family: 0,
            slice: 0,
            control: 0,
            control_name: "g".into(),
            band: [1.0, 9.0],
            delta_a: 8.0,
            inf_abs: 8.0 / t_hi,
            sup_abs: 8.0 / t_lo,
            sign: Some(sign),
            t_lo,
            t_hi,
        }
    }

    #[test]
    fn opposite_sign_update_matches_hand_computation() {
        let a = tb(4.0 / 9.0, 4.0, Sign::Negative);
        let b = tb(4.0 / 9.0, 4.0, Sign::Positive);
        let m = switch_update(&a, &b, false).unwrap();
        let w = m.apply([0.2, 0.2]);
        assert!((w[0] - 2.2).abs() < 1e-12);
        assert!((w[1] - (4.0 / 9.0 - 0.2 / 9.0)).abs() < 1e-12);
        assert_eq!(m.apply([0.0, 0.0]), [4.0, 4.0 / 9.0]);
    }

    #[test]
    fn same_sign_update_scales() {
        let a = tb(4.0 / 9.0, 4.0, Sign::Negative);
        let b = tb(2.0 / 9.0, 2.0, Sign::Negative);
        let w = switch_update(&a, &b, true).unwrap().apply([1.0, 0.2]);
        assert!((w[0] - 0.5).abs() < 1e-12 && (w[1] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn infinite_bound_is_refused() {
        let a = tb(0.5, f64::INFINITY, Sign::Negative);
        let b = tb(0.5, 4.0, Sign::Negative);
        assert!(matches!(
            switch_update(&a, &b, true),
            Err(TgaError::UnboundedRatio { .. })
        ));
    }

    #[test]
    fn composition_order() {
        let shift = PairMap {
            alpha: [1.0, 1.0],
            beta: [[1.0, 0.0], [0.0, 1.0]],
        };
        let double = PairMap {
            alpha: [0.0, 0.0],
            beta: [[2.0, 0.0], [0.0, 2.0]],
        };
        assert_eq!(double.after(&shift).apply([1.0, 2.0]), [4.0, 6.0]);
        assert_eq!(shift.after(&double).apply([1.0, 2.0]), [3.0, 5.0]);
        assert_eq!(PairMap::RESET.after(&PairMap::RESET), PairMap::RESET);
    }

    #[test]
    fn delay_and_update() {
        let v = Valuation(vec![[0.4, 0.1]]);
        let w = delay(&v, 0.6);
        assert!((w.0[0][0] - 1.0).abs() < 1e-15 && (w.0[0][1] - 0.7).abs() < 1e-15);
        let reset = UpdateMap::reset_pair(1, 0);
        assert_eq!(apply_update(&Valuation(vec![[3.0, 1.0]]), &reset).unwrap().0, vec![[0.0, 0.0]]);
        let neg = UpdateMap {
            pairs: vec![PairMap {
                alpha: [-1.0, 0.0],
                beta: [[1.0, 0.0], [0.0, 1.0]],
            }],
        };
        assert!(apply_update(&Valuation(vec![[0.5, 0.0]]), &neg).is_err());
        let tiny = UpdateMap {
            pairs: vec![PairMap {
                alpha: [-1e-13, 0.0],
                beta: [[1.0, 0.0], [0.0, 1.0]],
            }],
        };
        assert_eq!(apply_update(&Valuation(vec![[0.0, 0.0]]), &tiny).unwrap().0, vec![[0.0, 0.0]]);
    }
}
