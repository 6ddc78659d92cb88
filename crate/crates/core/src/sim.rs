//! Closed-loop simulation with fixed-step RK4 and bisection-localized level crossings.

use std::fmt::Write as _;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::expr::{EvalError, Expr};
use crate::grid::Domain;
use crate::model::Model;
use crate::partition::{CellComplex, Located, PartitionError};

/// Time tolerance of crossing localization.
pub const EVENT_TOLERANCE: f64 = 1e-10;
/// Events allowed inside a window of `10 h` before the run is declared chattering.
pub const CHATTER_EVENTS: usize = 10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("state became non-finite at t = {time}: {state:?}")]
    NonFinite { time: f64, state: Vec<f64> },
    #[error("initial state {0:?} lies outside the domain")]
    OutsideDomain(Vec<f64>),
    #[error("step size must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error(
        "chattering: {events} crossings within {window} time units before t = {time} (partial trace kept)"
    )]
    Chattering {
        time: f64,
        events: usize,
        window: f64,
        trace: Box<HybridTrace>,
    },
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// One fixed-step RK4 step of size `h`.
pub fn rk4_step(field: &[Expr], x: &[f64], h: f64) -> Result<Vec<f64>, EvalError> {
    let n = x.len();
    let eval = |p: &[f64]| crate::expr::eval_all(field, p, &[]);
    let k1 = eval(x)?;
    let shift = |k: &[f64], s: f64| -> Vec<f64> { (0..n).map(|d| x[d] + s * k[d]).collect() };
    let k2 = eval(&shift(&k1, h / 2.0))?;
    let k3 = eval(&shift(&k2, h / 2.0))?;
    let k4 = eval(&shift(&k3, h))?;
    Ok((0..n)
        .map(|d| x[d] + h / 6.0 * (k1[d] + 2.0 * k2[d] + 2.0 * k3[d] + k4[d]))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// Whether the run stopped early by leaving the domain.
    pub exited: bool,
}

impl Trajectory {
    pub fn last(&self) -> (&f64, &Vec<f64>) {
        (
            self.times.last().expect("non-empty"),
            self.states.last().expect("non-empty"),
        )
    }

    /// State at time `t` by linear interpolation between samples.
    pub fn at(&self, t: f64) -> Vec<f64> {
        let k = self.times.partition_point(|&s| s <= t);
        if k == 0 {
            return self.states[0].clone();
        }
        if k >= self.times.len() {
            return self.states.last().expect("non-empty").clone();
        }
        let (t0, t1) = (self.times[k - 1], self.times[k]);
        let w = (t - t0) / (t1 - t0);
        self.states[k - 1]
            .iter()
            .zip(&self.states[k])
            .map(|(a, b)| a + w * (b - a))
            .collect()
    }
}

/// Integrates `ẋ = field(x)` with fixed step `h` until `t_end` or until the state
/// leaves `domain`. The last step is shortened to land exactly on `t_end`.
pub fn integrate(
    field: &[Expr],
    domain: &Domain,
    x0: &[f64],
    t_end: f64,
    h: f64,
) -> Result<Trajectory, SimError> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(SimError::InvalidStep(h));
    }
    if !domain.contains(x0, 1e-12) {
        return Err(SimError::OutsideDomain(x0.to_vec()));
    }
    let mut times = vec![0.0];
    let mut states = vec![x0.to_vec()];
    let mut x = x0.to_vec();
    let mut steps = 0_u64;
    let total = (t_end / h).ceil() as u64;
    while steps < total {
        let t = steps as f64 * h;
        let step = h.min(t_end - t);
        if step <= 0.0 {
            break;
        }
        x = rk4_step(field, &x, step)?;
        steps += 1;
        let t = (steps as f64 * h).min(t_end);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(SimError::NonFinite { time: t, state: x });
        }
        times.push(t);
        states.push(x.clone());
        if !domain.contains(&x, 1e-12) {
            return Ok(Trajectory {
                times,
                states,
                exited: true,
            });
        }
    }
    Ok(Trajectory {
        times,
        states,
        exited: false,
    })
}

/// Chooses the control applied in a cell at the moment the cell is entered.
pub trait Policy {
    fn select(&mut self, cell: usize, time: f64, x: &[f64]) -> usize;
}

/// The same control everywhere.
#[derive(Debug, Clone, Copy)]
pub struct Constant(pub usize);

impl Policy for Constant {
    fn select(&mut self, _: usize, _: f64, _: &[f64]) -> usize {
        self.0
    }
}

/// A memoryless cell strategy.
#[derive(Debug, Clone)]
pub struct CellPolicy(pub Vec<usize>);

impl Policy for CellPolicy {
    fn select(&mut self, cell: usize, _: f64, _: &[f64]) -> usize {
        self.0[cell]
    }
}

/// A uniformly random control from `controls` at every cell entry.
#[derive(Debug, Clone)]
pub struct RandomPolicy {
    pub controls: Vec<usize>,
    pub rng: ChaCha8Rng,
}

impl Policy for RandomPolicy {
    fn select(&mut self, _: usize, _: f64, _: &[f64]) -> usize {
        self.controls[self.rng.random_range(0..self.controls.len())]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Event {
    pub time: f64,
    /// Crossed family; `None` when the domain box was left elsewhere.
    pub family: Option<usize>,
    pub level: Option<f64>,
    pub from: usize,
    /// `None` for the sink.
    pub to: Option<usize>,
    pub state: Vec<f64>,
}

/// Maximal stay in one cell under one control.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Segment {
    pub cell: usize,
    pub y: Vec<usize>,
    pub control: usize,
    pub start: f64,
    pub end: f64,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EndReason {
    Horizon,
    Sink,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HybridTrace {
    pub x0: Vec<f64>,
    pub step: f64,
    pub segments: Vec<Segment>,
    pub events: Vec<Event>,
    pub end: EndReason,
    pub end_time: f64,
}

impl HybridTrace {
    /// Timed location sequence `(cell, entry time)`.
    pub fn cell_sequence(&self) -> Vec<(usize, f64)> {
        self.segments.iter().map(|s| (s.cell, s.start)).collect()
    }

    pub fn visited(&self) -> Vec<usize> {
        let mut cells: Vec<usize> = self.segments.iter().map(|s| s.cell).collect();
        cells.sort_unstable();
        cells.dedup();
        cells
    }

    /// CSV with columns `t, x1..xn, cell, control`.
    pub fn to_csv(&self, complex: &CellComplex, controls: &[String]) -> String {
        let n = self.x0.len();
        let mut out = String::from("t");
        for d in 0..n {
            let _ = write!(out, ",x{}", d + 1);
        }
        out.push_str(",cell,control\n");
        for seg in &self.segments {
            for (t, x) in seg.times.iter().zip(&seg.states) {
                let _ = write!(out, "{t}");
                for v in x {
                    let _ = write!(out, ",{v}");
                }
                let _ = writeln!(out, ",{},{}", complex.cell(seg.cell).name(), controls[seg.control]);
            }
        }
        out
    }
}

/// Default step: `1e-3 · (smallest level gap) / (largest sampled closed-loop speed)`.
pub fn default_step(model: &Model, complex: &CellComplex) -> Result<f64, EvalError> {
    let gap = model
        .families
        .iter()
        .flat_map(|f| f.levels.windows(2).map(|w| w[1] - w[0]))
        .fold(f64::INFINITY, f64::min);
    let mut speed: f64 = 0.0;
    let fields: Vec<Vec<Expr>> = (0..model.controls.len())
        .map(|c| model.closed_loop(c).field)
        .collect();
    let samples: Vec<&Vec<f64>> = complex
        .cells
        .iter()
        .map(|c| &c.representative)
        .chain(complex.boundary.iter().flatten().map(|b| &b.point))
        .collect();
    for field in &fields {
        for x in &samples {
            let f = crate::expr::eval_all(field, x, &[])?;
            speed = speed.max(f.iter().map(|v| v * v).sum::<f64>().sqrt());
        }
    }
    Ok(if speed > 0.0 && gap.is_finite() {
        1e-3 * gap / speed
    } else {
        1e-3
    })
}

struct Tracker<'a> {
    complex: &'a CellComplex,
    fields: Vec<Vec<Expr>>,
    lie: Vec<Vec<Expr>>,
}

impl Tracker<'_> {
    /// Pick among the cells touching `x` the one the flow enters.
    fn initial_cell(&self, x: &[f64], policy: &mut dyn Policy) -> Result<(usize, usize), SimError> {
        match self.complex.locate(x)? {
            Located::Interior(cell) => Ok((cell, policy.select(cell, 0.0, x))),
            Located::Boundary(cells) => {
                let mut fallback = None;
                for &cell in &cells {
                    let c = policy.select(cell, 0.0, x);
                    fallback.get_or_insert((cell, c));
                    if self.consistent(cell, c, x)? {
                        return Ok((cell, c));
                    }
                }
                Ok(fallback.expect("boundary has cells"))
            }
        }
    }

    fn consistent(&self, cell: usize, control: usize, x: &[f64]) -> Result<bool, EvalError> {
        let y = &self.complex.cell(cell).y;
        for (i, fam) in self.complex.families.iter().enumerate() {
            let v = fam.value(x)?;
            let [a, b] = fam.band(y[i]);
            let rate = self.lie[control][i].eval_state(x)?;
            let tol = 1e-9 * (b - a).abs().max(1.0);
            if (v - a).abs() <= tol && rate < 0.0 {
                return Ok(false);
            }
            if (v - b).abs() <= tol && rate > 0.0 {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

/// First crossing inside one step, found by bisection on the step fraction.
struct Crossing {
    dt: f64,
    state: Vec<f64>,
    family: Option<usize>,
    level: Option<f64>,
    upward: bool,
}

fn band_exit(complex: &CellComplex, y: &[usize], x: &[f64]) -> Result<Option<(usize, f64, bool)>, EvalError> {
    let mut worst: Option<(usize, f64, bool, f64)> = None;
    for (i, fam) in complex.families.iter().enumerate() {
        let v = fam.value(x)?;
        let [a, b] = fam.band(y[i]);
        let (excess, level, up) = if v > b {
            (v - b, b, true)
        } else if v < a {
            (a - v, a, false)
        } else {
            continue;
        };
        let scaled = excess / (b - a).abs().max(f64::MIN_POSITIVE);
        if worst.is_none_or(|w| scaled > w.3) {
            worst = Some((i, level, up, scaled));
        }
    }
    Ok(worst.map(|(i, l, u, _)| (i, l, u)))
}

fn locate_crossing(
    complex: &CellComplex,
    field: &[Expr],
    y: &[usize],
    x: &[f64],
    h: f64,
) -> Result<Crossing, SimError> {
    let outside = |p: &[f64]| -> Result<bool, EvalError> {
        Ok(!complex.domain.contains(p, 0.0) || band_exit(complex, y, p)?.is_some())
    };
    let (mut lo, mut hi) = (0.0, h);
    let mut state_hi = rk4_step(field, x, h)?;
    while hi - lo > EVENT_TOLERANCE {
        let mid = 0.5 * (lo + hi);
        let p = rk4_step(field, x, mid)?;
        if outside(&p)? {
            hi = mid;
            state_hi = p;
        } else {
            lo = mid;
        }
    }
    let (family, level, upward) = match band_exit(complex, y, &state_hi)? {
        Some((i, l, u)) => (Some(i), Some(l), u),
        None => (None, None, false),
    };
    Ok(Crossing {
        dt: hi,
        state: state_hi,
        family,
        level,
        upward,
    })
}

/// Simulates the closed loop under `policy` until `t_end`, the sink, or chattering.
///
/// The control is chosen on every cell entry and held inside the cell. Crossings are
/// localized to [`EVENT_TOLERANCE`] and the post-crossing state lies on the new side.
pub fn simulate(
    model: &Model,
    complex: &CellComplex,
    policy: &mut dyn Policy,
    x0: &[f64],
    t_end: f64,
    h: f64,
) -> Result<HybridTrace, SimError> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(SimError::InvalidStep(h));
    }
    if !complex.domain.contains(x0, 1e-12) {
        return Err(SimError::OutsideDomain(x0.to_vec()));
    }
    let tracker = Tracker {
        complex,
        fields: (0..model.controls.len())
            .map(|c| model.closed_loop(c).field)
            .collect(),
        lie: (0..model.controls.len())
            .map(|c| {
                (0..model.families.len())
                    .map(|i| model.lie_derivative(c, i).expr)
                    .collect()
            })
            .collect(),
    };
    let (mut cell, mut control) = tracker.initial_cell(x0, policy)?;
    let mut y = complex.cell(cell).y.clone();
    let mut x = x0.to_vec();
    let mut t = 0.0;
    let mut trace = HybridTrace {
        x0: x0.to_vec(),
        step: h,
        segments: Vec::new(),
        events: Vec::new(),
        end: EndReason::Horizon,
        end_time: t_end,
    };
    let mut seg = Segment {
        cell,
        y: y.clone(),
        control,
        start: 0.0,
        end: 0.0,
        times: vec![0.0],
        states: vec![x.clone()],
    };
    while t < t_end {
        let step = h.min(t_end - t);
        let next = rk4_step(&tracker.fields[control], &x, step)?;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(SimError::NonFinite {
                time: t + step,
                state: next,
            });
        }
        let left = !complex.domain.contains(&next, 0.0) || band_exit(complex, &y, &next)?.is_some();
        if !left {
            t = if t_end - t <= h { t_end } else { t + step };
            x = next;
            seg.times.push(t);
            seg.states.push(x.clone());
            continue;
        }
        let crossing = locate_crossing(complex, &tracker.fields[control], &y, &x, step)?;
        t += crossing.dt;
        x = crossing.state;
        seg.times.push(t);
        seg.states.push(x.clone());
        seg.end = t;
        let target = match crossing.family {
            Some(i) => {
                let k = complex.families[i].slice_count();
                let h_new = if crossing.upward {
                    (y[i] + 1 < k).then_some(y[i] + 1)
                } else {
                    y[i].checked_sub(1)
                };
                match h_new {
                    Some(h_new) if complex.domain.contains(&x, 1e-12) => {
                        let mut y_new = y.clone();
                        y_new[i] = h_new;
                        Some((complex.cell_with_tuple(&x, &y_new)?, y_new))
                    }
                    _ => None,
                }
            }
            None => None,
        };
        trace.events.push(Event {
            time: t,
            family: crossing.family,
            level: crossing.level,
            from: cell,
            to: target.as_ref().map(|(c, _)| *c),
            state: x.clone(),
        });
        trace.segments.push(seg);
        let Some((new_cell, new_y)) = target else {
            trace.end = EndReason::Sink;
            trace.end_time = t;
            return Ok(trace);
        };
        let window = 10.0 * h;
        let recent = trace
            .events
            .iter()
            .rev()
            .take_while(|e| t - e.time <= window)
            .count();
        if recent > CHATTER_EVENTS {
            trace.end_time = t;
            return Err(SimError::Chattering {
                time: t,
                events: recent,
                window,
                trace: Box::new(trace),
            });
        }
        cell = new_cell;
        y = new_y;
        control = policy.select(cell, t, &x);
        seg = Segment {
            cell,
            y: y.clone(),
            control,
            start: t,
            end: t,
            times: vec![t],
            states: vec![x.clone()],
        };
    }
    seg.end = t_end;
    trace.segments.push(seg);
    trace.end_time = t_end;
    Ok(trace)
}
