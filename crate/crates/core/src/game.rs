//! Memoryless, clock-independent strategy synthesis (one control per region).
//!
//! Solved as attractor computations on the region graph induced by the automaton's
//! uncontrollable edges. The result is conservative: a region is winning only if the
//! objective holds against every uncontrollable resolution.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::bounds::serialize_time;
use crate::tga::TimedGameAutomaton;

pub const SYNTHESIS_NOTE: &str =
    "conservative cell attractor over uncontrollable successors; clock constraints beyond the forced-exit bound are not used";

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Objective {
    Safety {
        avoid: BTreeSet<usize>,
    },
    Reach {
        goal: BTreeSet<usize>,
        avoid: BTreeSet<usize>,
        horizon: Option<f64>,
    },
}

/// Control chosen per region, plus the analysis behind it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthesisResult {
    pub objective: &'static str,
    pub realizable: bool,
    /// Region name → control name.
    pub strategy: BTreeMap<String, String>,
    /// Worst-case time to the goal per winning region (reach objectives).
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub bounds: BTreeMap<String, TimeBound>,
    pub winning: Vec<String>,
    pub initial: Vec<String>,
    /// Initial regions that are not winning.
    pub losing_initial: Vec<String>,
    pub note: &'static str,
    /// Control index per region, aligned with the automaton's regions.
    #[serde(skip)]
    pub choice: Vec<usize>,
    #[serde(skip)]
    pub winning_set: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(transparent)]
pub struct TimeBound(#[serde(serialize_with = "serialize_time")] pub f64);

impl SynthesisResult {
    pub fn bound(&self, region: &str) -> Option<f64> {
        self.bounds.get(region).map(|b| b.0)
    }
}

/// Uncontrollable successor regions (`None` = sink) per region and control.
struct Moves {
    successors: Vec<Vec<Vec<Option<usize>>>>,
    /// Largest finite `t_hi` over families, if any.
    forced_exit: Vec<Vec<Option<f64>>>,
    order: Vec<usize>,
}

impl Moves {
    fn new(tga: &TimedGameAutomaton) -> Self {
        let regions = tga.regions.len();
        let controls = tga.controls.len();
        let mut successors = vec![vec![Vec::new(); controls]; regions];
        let mut forced_exit = vec![vec![None; controls]; regions];
        for r in 0..regions {
            for c in 0..controls {
                let Some(l) = tga.location(r, c) else { continue };
                let mut s: Vec<Option<usize>> = tga
                    .successors(l)
                    .into_iter()
                    .map(|t| tga.locations[t].region)
                    .collect();
                s.sort_unstable();
                s.dedup();
                successors[r][c] = s;
                forced_exit[r][c] = tga.invariants[l]
                    .iter()
                    .map(|inv| inv.bound)
                    .filter(|b| b.is_finite())
                    .fold(None, |acc: Option<f64>, b| Some(acc.map_or(b, |a| a.max(b))));
            }
        }
        let mut order: Vec<usize> = (0..controls).collect();
        order.sort_by(|&a, &b| tga.controls[a].cmp(&tga.controls[b]));
        Moves {
            successors,
            forced_exit,
            order,
        }
    }

    fn stays_in(&self, r: usize, c: usize, set: &[bool]) -> bool {
        self.successors[r][c]
            .iter()
            .all(|s| s.is_some_and(|s| set[s]))
    }
}

fn names(tga: &TimedGameAutomaton, set: impl IntoIterator<Item = usize>) -> Vec<String> {
    set.into_iter()
        .map(|r| tga.regions.regions[r].name.clone())
        .collect()
}

fn finish(
    tga: &TimedGameAutomaton,
    objective: &'static str,
    choice: Vec<usize>,
    winning_set: Vec<bool>,
    initial: &[usize],
    bounds: BTreeMap<String, TimeBound>,
) -> SynthesisResult {
    let strategy = choice
        .iter()
        .enumerate()
        .map(|(r, &c)| (tga.regions.regions[r].name.clone(), tga.controls[c].clone()))
        .collect();
    let winning = names(tga, (0..winning_set.len()).filter(|&r| winning_set[r]));
    let losing: Vec<usize> = initial.iter().copied().filter(|&r| !winning_set[r]).collect();
    SynthesisResult {
        objective,
        realizable: losing.is_empty(),
        strategy,
        bounds,
        winning,
        initial: names(tga, initial.iter().copied()),
        losing_initial: names(tga, losing),
        note: SYNTHESIS_NOTE,
        choice,
        winning_set,
    }
}

fn default_initial(regions: usize, avoid: &BTreeSet<usize>) -> Vec<usize> {
    (0..regions).filter(|r| !avoid.contains(r)).collect()
}

/// Greatest fixed point: a region stays winning while some control keeps every
/// uncontrollable successor winning. The sink is never winning. Ties go to the
/// lexicographically smallest control name.
pub fn synthesize_safety(
    tga: &TimedGameAutomaton,
    avoid: &BTreeSet<usize>,
    initial: Option<&[usize]>,
) -> SynthesisResult {
    let moves = Moves::new(tga);
    let n = tga.regions.len();
    let mut winning: Vec<bool> = (0..n).map(|r| !avoid.contains(&r)).collect();
    loop {
        let next: Vec<bool> = (0..n)
            .map(|r| winning[r] && moves.order.iter().any(|&c| moves.stays_in(r, c, &winning)))
            .collect();
        if next == winning {
            break;
        }
        winning = next;
    }
    let choice = (0..n)
        .map(|r| {
            moves
                .order
                .iter()
                .copied()
                .find(|&c| moves.stays_in(r, c, &winning))
                .unwrap_or(moves.order[0])
        })
        .collect();
    let initial = initial.map_or_else(|| default_initial(n, avoid), <[usize]>::to_vec);
    finish(tga, "safety", choice, winning, &initial, BTreeMap::new())
}

/// Least fixed point with worst-case time bounds: a region wins under a control whose
/// invariant forces an exit (some finite `t_hi`) and whose uncontrollable successors
/// all win. Its bound is the largest finite `t_hi` plus the worst successor bound.
/// Ties go to the smaller bound, then the control name.
pub fn synthesize_reach(
    tga: &TimedGameAutomaton,
    goal: &BTreeSet<usize>,
    avoid: &BTreeSet<usize>,
    horizon: Option<f64>,
    initial: Option<&[usize]>,
) -> SynthesisResult {
    let moves = Moves::new(tga);
    let n = tga.regions.len();
    let mut value: Vec<f64> = (0..n)
        .map(|r| {
            if goal.contains(&r) && !avoid.contains(&r) {
                0.0
            } else {
                f64::INFINITY
            }
        })
        .collect();
    let mut choice: Vec<Option<usize>> = vec![None; n];
    // Costs are positive, so values settle within `n` rounds.
    for _ in 0..=n {
        let mut changed = false;
        let previous = value.clone();
        for r in 0..n {
            if goal.contains(&r) || avoid.contains(&r) {
                continue;
            }
            let mut best: Option<(f64, usize)> = None;
            for &c in &moves.order {
                let Some(exit) = moves.forced_exit[r][c] else { continue };
                let succ = &moves.successors[r][c];
                if succ.is_empty() {
                    continue;
                }
                let worst = succ.iter().fold(0.0_f64, |acc, s| {
                    acc.max(s.map_or(f64::INFINITY, |s| previous[s]))
                });
                let total = exit + worst;
                if total.is_finite() && best.is_none_or(|(b, _)| total < b) {
                    best = Some((total, c));
                }
            }
            if let Some((v, c)) = best {
                if v < value[r] {
                    value[r] = v;
                    choice[r] = Some(c);
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let mut winning: Vec<bool> = value
        .iter()
        .map(|&v| v.is_finite() && horizon.is_none_or(|h| v <= h))
        .collect();
    for (r, w) in winning.iter_mut().enumerate() {
        if avoid.contains(&r) {
            *w = false;
        }
    }
    let in_goal: Vec<bool> = (0..n).map(|r| goal.contains(&r)).collect();
    let choice: Vec<usize> = (0..n)
        .map(|r| {
            if let Some(c) = choice[r] {
                return c;
            }
            // Goal regions (and losing ones) prefer a control that keeps them in the goal.
            moves
                .order
                .iter()
                .copied()
                .find(|&c| moves.stays_in(r, c, &in_goal))
                .unwrap_or(moves.order[0])
        })
        .collect();
    let bounds = (0..n)
        .filter(|&r| winning[r])
        .map(|r| (tga.regions.regions[r].name.clone(), TimeBound(value[r])))
        .collect();
    let initial = initial.map_or_else(|| default_initial(n, avoid), <[usize]>::to_vec);
    finish(tga, "reach", choice, winning, &initial, bounds)
}

pub fn synthesize(
    tga: &TimedGameAutomaton,
    objective: &Objective,
    initial: Option<&[usize]>,
) -> SynthesisResult {
    match objective {
        Objective::Safety { avoid } => synthesize_safety(tga, avoid, initial),
        Objective::Reach {
            goal,
            avoid,
            horizon,
        } => synthesize_reach(tga, goal, avoid, *horizon, initial),
    }
}
