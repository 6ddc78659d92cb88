//! Checks of simulated behavior against the abstraction: rate envelopes, dwell
//! bounds and embedding of traces into runs of the strategy-restricted automaton.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bounds::{BoundsTable, TimingBounds};
use crate::exec::Execution;
use crate::model::{Model, Sign};
use crate::partition::CellComplex;
use crate::sim::{simulate, CellPolicy, EndReason, HybridTrace};
use crate::tga::{reach_locations, restrict, run_feasible, RunViolation, TimedGameAutomaton, Valuation};

/// Tolerance of the envelope comparison.
pub const SANDWICH_TOLERANCE: f64 = 1e-6;

/// Dwell tolerance for an integration step `h`: `1e-6 + 10 h⁴`.
pub fn dwell_tolerance(h: f64) -> f64 {
    1e-6 + 10.0 * h.powi(4)
}

/// Maximal run of consecutive segments sharing the slice of one family.
#[derive(Debug, Clone, PartialEq)]
struct Stay {
    family: usize,
    slice: usize,
    first: usize,
    last: usize,
    /// Level crossed on entry, if the stay began with a crossing of this family.
    entry_level: Option<f64>,
    exit_level: Option<f64>,
    start: f64,
    end: f64,
}

fn stays(trace: &HybridTrace, family: usize) -> Vec<Stay> {
    let mut out: Vec<Stay> = Vec::new();
    for (j, seg) in trace.segments.iter().enumerate() {
        let slice = seg.y[family];
        match out.last_mut() {
            Some(s) if s.slice == slice => {
                s.last = j;
                s.end = seg.end;
            }
            _ => {
                let entry_level = j
                    .checked_sub(1)
                    .map(|k| &trace.events[k])
                    .filter(|e| e.family == Some(family))
                    .and_then(|e| e.level);
                out.push(Stay {
                    family,
                    slice,
                    first: j,
                    last: j,
                    entry_level,
                    exit_level: None,
                    start: seg.start,
                    end: seg.end,
                });
            }
        }
    }
    for s in &mut out {
        s.exit_level = trace
            .events
            .get(s.last)
            .filter(|e| e.family == Some(family))
            .and_then(|e| e.level);
    }
    out
}

/// Rate interval of `φ_i` under one control on one slice.
fn rate_interval(b: &TimingBounds) -> [f64; 2] {
    match b.sign {
        Some(Sign::Positive) => [b.inf_abs, b.sup_abs],
        Some(Sign::Negative) => [-b.sup_abs, -b.inf_abs],
        None => [-b.sup_abs, b.sup_abs],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SandwichViolation {
    pub family: usize,
    pub slice: usize,
    pub time: f64,
    pub lower: f64,
    pub value: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SandwichReport {
    pub stays: usize,
    pub samples: usize,
    pub violations: Vec<SandwichViolation>,
    /// Smallest `min(value − lower, upper − value)` over all samples.
    pub worst_margin: f64,
    /// Largest spread among the three quantities at the start of a stay.
    pub start_margin: f64,
}

impl SandwichReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    fn empty() -> Self {
        SandwichReport {
            stays: 0,
            samples: 0,
            violations: Vec::new(),
            worst_margin: f64::INFINITY,
            start_margin: 0.0,
        }
    }

    pub fn merge(mut self, other: SandwichReport) -> Self {
        self.stays += other.stays;
        self.samples += other.samples;
        self.violations.extend(other.violations);
        self.worst_margin = self.worst_margin.min(other.worst_margin);
        self.start_margin = self.start_margin.max(other.start_margin);
        self
    }
}

/// Accumulated rate envelopes per slice stay: the change of `φ_i` since entry must lie
/// between the sums of the slowest and fastest admissible rates over the segments so far.
pub fn check_sandwich(
    model: &Model,
    trace: &HybridTrace,
    bounds: &BoundsTable,
) -> SandwichReport {
    let mut report = SandwichReport::empty();
    for (i, fam) in model.families.iter().enumerate() {
        for stay in stays(trace, i) {
            report.stays += 1;
            let entry_state = &trace.segments[stay.first].states[0];
            let Ok(phi0) = fam.value(entry_state) else { continue };
            let (mut lo_acc, mut hi_acc) = (0.0, 0.0);
            let mut first_sample = true;
            for seg in &trace.segments[stay.first..=stay.last] {
                let Some(b) = bounds.get(i, stay.slice, seg.control) else { continue };
                let [r_lo, r_hi] = rate_interval(b);
                for (t, x) in seg.times.iter().zip(&seg.states) {
                    let Ok(v) = fam.value(x) else { continue };
                    let dt = t - seg.start;
                    let lower = lo_acc + r_lo * dt;
                    let upper = hi_acc + r_hi * dt;
                    let value = v - phi0;
                    report.samples += 1;
                    if first_sample {
                        let spread = lower.abs().max(upper.abs()).max(value.abs());
                        report.start_margin = report.start_margin.max(spread);
                        first_sample = false;
                    }
                    let margin = (value - lower).min(upper - value);
                    report.worst_margin = report.worst_margin.min(margin);
                    if margin < -SANDWICH_TOLERANCE {
                        report.violations.push(SandwichViolation {
                            family: i,
                            slice: stay.slice,
                            time: *t,
                            lower,
                            value,
                            upper,
                        });
                    }
                }
                let dt = seg.end - seg.start;
                lo_acc += r_lo * dt;
                hi_acc += r_hi * dt;
            }
        }
    }
    report
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DwellViolation {
    pub family: usize,
    pub slice: usize,
    pub control: Option<String>,
    pub entry: f64,
    pub dwell: f64,
    pub t_lo: f64,
    pub t_hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DwellReport {
    /// Completed single-control traversals checked against `[t_lo, t_hi]`.
    pub traversals: usize,
    /// Completed traversals under several controls, checked by the rate envelope at exit.
    pub mixed: usize,
    pub violations: Vec<DwellViolation>,
    /// Smallest `min(dwell − t_lo, t_hi − dwell)` over single-control traversals.
    pub worst_margin: f64,
    pub tolerance: f64,
}

impl DwellReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    fn empty(tolerance: f64) -> Self {
        DwellReport {
            traversals: 0,
            mixed: 0,
            violations: Vec::new(),
            worst_margin: f64::INFINITY,
            tolerance,
        }
    }

    pub fn merge(mut self, other: DwellReport) -> Self {
        self.traversals += other.traversals;
        self.mixed += other.mixed;
        self.violations.extend(other.violations);
        self.worst_margin = self.worst_margin.min(other.worst_margin);
        self.tolerance = self.tolerance.max(other.tolerance);
        self
    }
}

/// Dwell of every completed slice traversal (entered through one level, left through
/// the other) against the timing bounds of the slice.
pub fn check_dwell(model: &Model, trace: &HybridTrace, bounds: &BoundsTable) -> DwellReport {
    let tol = dwell_tolerance(trace.step);
    let mut report = DwellReport::empty(tol);
    for i in 0..model.families.len() {
        for stay in stays(trace, i) {
            let (Some(a), Some(b)) = (stay.entry_level, stay.exit_level) else { continue };
            if a == b {
                continue;
            }
            let segs = &trace.segments[stay.first..=stay.last];
            let dwell = stay.end - stay.start;
            let control = segs[0].control;
            if segs.iter().all(|s| s.control == control) {
                let Some(tb) = bounds.get(i, stay.slice, control) else { continue };
                report.traversals += 1;
                let margin = (dwell - tb.t_lo).min(tb.t_hi - dwell);
                report.worst_margin = report.worst_margin.min(margin);
                if margin < -tol {
                    report.violations.push(DwellViolation {
                        family: i,
                        slice: stay.slice,
                        control: Some(model.controls[control].name.clone()),
                        entry: stay.start,
                        dwell,
                        t_lo: tb.t_lo,
                        t_hi: tb.t_hi,
                    });
                }
            } else {
                report.mixed += 1;
                let (mut lo, mut hi) = (0.0, 0.0);
                let mut ok = true;
                for s in segs {
                    let Some(tb) = bounds.get(i, stay.slice, s.control) else {
                        ok = false;
                        break;
                    };
                    let [r_lo, r_hi] = rate_interval(tb);
                    lo += r_lo * (s.end - s.start);
                    hi += r_hi * (s.end - s.start);
                }
                let change = b - a;
                let slack = tol * hi.abs().max(lo.abs()).max(1.0);
                if ok && (change < lo - slack || change > hi + slack) {
                    report.violations.push(DwellViolation {
                        family: i,
                        slice: stay.slice,
                        control: None,
                        entry: stay.start,
                        dwell,
                        t_lo: f64::NAN,
                        t_hi: f64::NAN,
                    });
                }
            }
        }
    }
    report
}

/// Valuation for a run starting inside a cell rather than on its entry level.
///
/// For each family the trajectory is treated as if it had entered the slice through
/// the level behind it; the elapsed time is unknown, so the invariant clock gets the
/// shortest and the guard clock the longest time consistent with the rate bounds.
pub fn interior_start_valuation(
    model: &Model,
    complex: &CellComplex,
    bounds: &BoundsTable,
    cell: usize,
    control: usize,
    x: &[f64],
) -> Valuation {
    let y = &complex.cell(cell).y;
    let pairs = model
        .families
        .iter()
        .enumerate()
        .map(|(i, fam)| {
            let Some(b) = bounds.get(i, y[i], control) else {
                return [0.0, 0.0];
            };
            let v = fam.value(x).unwrap_or(f64::NAN);
            let [lo, hi] = b.band;
            let d = match b.sign {
                Some(Sign::Positive) => v - lo,
                Some(Sign::Negative) => hi - v,
                None => return [0.0, b.t_lo],
            };
            let d = d.clamp(0.0, b.delta_a);
            if b.delta_a <= 0.0 || !d.is_finite() {
                return [0.0, b.t_lo];
            }
            let c1 = d * b.t_lo / b.delta_a;
            let c2 = if b.t_hi.is_finite() {
                d * b.t_hi / b.delta_a
            } else {
                b.t_lo
            };
            [c1, c2]
        })
        .collect();
    Valuation(pairs)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceVerdict {
    pub index: usize,
    pub x0: Vec<f64>,
    pub cells: Vec<String>,
    pub feasible: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub violation: Option<RunViolation>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Completeness {
    /// Locations reachable in the restricted automaton within the horizon.
    pub reachable: Vec<String>,
    /// Of those, locations visited by at least one simulated trace.
    pub witnessed: Vec<String>,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SoundnessReport {
    pub samples: usize,
    pub horizon: f64,
    pub seed: u64,
    pub step: f64,
    pub strategy: Vec<String>,
    pub passed: bool,
    pub embedding_violations: usize,
    pub guard_violations: usize,
    pub invariant_violations: usize,
    pub simulation_errors: usize,
    pub sandwich: SandwichReport,
    pub dwell: DwellReport,
    pub worst_guard_margin: f64,
    pub worst_invariant_margin: f64,
    pub completeness: Completeness,
    pub traces: Vec<TraceVerdict>,
}

/// Settings of a soundness run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoundnessSettings {
    pub samples: usize,
    pub horizon: f64,
    pub step: f64,
    pub seed: u64,
    /// Clock tolerance of the replay.
    pub tolerance: f64,
    pub execution: Execution,
}

/// Samples initial states uniformly from `initial` cells, simulates the closed loop
/// under the cell strategy `choice` and replays every trace on the restricted
/// automaton. Also runs the envelope and dwell checks on every trace.
pub fn check_sound(
    model: &Model,
    complex: &CellComplex,
    tga: &TimedGameAutomaton,
    choice: &[usize],
    initial: &[usize],
    settings: &SoundnessSettings,
) -> SoundnessReport {
    let restricted = restrict(tga, choice);
    let bounds = &tga.bounds;
    let samples = if initial.is_empty() { 0 } else { settings.samples };
    let results = settings.execution.map_range(samples, |k| {
        let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
        rng.set_stream(k as u64);
        let cell = initial[rng.random_range(0..initial.len())];
        let x0 = complex.sample_in_cell(cell, &mut rng);
        let Some(x0) = x0 else {
            return (
                TraceVerdict {
                    index: k,
                    x0: Vec::new(),
                    cells: Vec::new(),
                    feasible: false,
                    violation: None,
                    error: Some(format!("could not sample a point in {}", complex.cell(cell).name())),
                },
                None,
            );
        };
        let mut policy = CellPolicy(choice.to_vec());
        match simulate(model, complex, &mut policy, &x0, settings.horizon, settings.step) {
            Ok(trace) => {
                let region = |c: usize| tga.regions.region_of_cell[c];
                let mut seq: Vec<(usize, f64)> = trace
                    .segments
                    .iter()
                    .map(|s| {
                        let r = region(s.cell);
                        (restricted.location(r, choice[r]).expect("kept location"), s.start)
                    })
                    .collect();
                let end = match trace.end {
                    EndReason::Sink => {
                        seq.push((restricted.sink(), trace.end_time));
                        None
                    }
                    EndReason::Horizon => Some(trace.end_time),
                };
                let first = &trace.segments[0];
                let v0 = interior_start_valuation(model, complex, bounds, first.cell, first.control, &x0);
                let feas = run_feasible(&restricted, &seq, &v0, end, settings.tolerance);
                let sandwich = check_sandwich(model, &trace, bounds);
                let dwell = check_dwell(model, &trace, bounds);
                let mut names: Vec<String> =
                    seq.iter().map(|&(l, _)| restricted.locations[l].name.clone()).collect();
                names.dedup();
                let visited: Vec<usize> = seq.iter().map(|&(l, _)| l).collect();
                (
                    TraceVerdict {
                        index: k,
                        x0,
                        cells: names,
                        feasible: feas.feasible,
                        violation: feas.violation.clone(),
                        error: None,
                    },
                    Some((feas, sandwich, dwell, visited)),
                )
            }
            Err(e) => (
                TraceVerdict {
                    index: k,
                    x0,
                    cells: Vec::new(),
                    feasible: false,
                    violation: None,
                    error: Some(e.to_string()),
                },
                None,
            ),
        }
    });

    let mut sandwich = SandwichReport::empty();
    let mut dwell = DwellReport::empty(dwell_tolerance(settings.step));
    let (mut guard, mut invariant, mut embedding, mut errors) = (0, 0, 0, 0);
    let (mut guard_margin, mut invariant_margin) = (f64::INFINITY, f64::INFINITY);
    let mut witnessed = vec![false; restricted.locations.len()];
    let mut traces = Vec::with_capacity(results.len());
    for (verdict, detail) in results {
        match detail {
            Some((feas, s, d, visited)) => {
                if !feas.feasible {
                    embedding += 1;
                    match feas.violation.as_ref().map(|v| &v.kind) {
                        Some(crate::tga::ViolationKind::Guard { .. }) => guard += 1,
                        Some(crate::tga::ViolationKind::Invariant { .. }) => invariant += 1,
                        _ => {}
                    }
                }
                guard_margin = guard_margin.min(feas.guard_margin);
                invariant_margin = invariant_margin.min(feas.invariant_margin);
                sandwich = sandwich.merge(s);
                dwell = dwell.merge(d);
                for l in visited {
                    witnessed[l] = true;
                }
            }
            None => errors += 1,
        }
        traces.push(verdict);
    }

    let initial_locations: Vec<usize> = initial
        .iter()
        .filter_map(|&c| {
            let r = tga.regions.region_of_cell[c];
            restricted.location(r, choice[r])
        })
        .collect();
    let reach = reach_locations(
        &restricted,
        &initial_locations,
        &Valuation(vec![[0.0, 0.0]; restricted.families]),
        settings.horizon,
    );
    let reachable: Vec<usize> = reach.entries.iter().map(|e| e.location).collect();
    let seen: Vec<String> = reachable
        .iter()
        .filter(|&&l| witnessed[l])
        .map(|&l| restricted.locations[l].name.clone())
        .collect();
    let fraction = if reachable.is_empty() {
        1.0
    } else {
        seen.len() as f64 / reachable.len() as f64
    };
    let completeness = Completeness {
        reachable: reachable
            .iter()
            .map(|&l| restricted.locations[l].name.clone())
            .collect(),
        witnessed: seen,
        fraction,
    };
    let passed =
        embedding == 0 && errors == 0 && sandwich.passed() && dwell.passed();
    SoundnessReport {
        samples: settings.samples,
        horizon: settings.horizon,
        seed: settings.seed,
        step: settings.step,
        strategy: tga
            .regions
            .regions
            .iter()
            .map(|r| format!("{}={}", r.name, tga.controls[choice[r.id]]))
            .collect(),
        passed,
        embedding_violations: embedding,
        guard_violations: guard,
        invariant_violations: invariant,
        simulation_errors: errors,
        sandwich,
        dwell,
        worst_guard_margin: guard_margin,
        worst_invariant_margin: invariant_margin,
        completeness,
        traces,
    }
}
