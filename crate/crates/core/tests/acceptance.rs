//! Acceptance criteria, one PASS/FAIL line each. Runs as a plain binary so the lines
//! always appear in `cargo test` output; exits non-zero if any criterion fails.

mod common;

use std::collections::BTreeSet;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use lyagate_core::conformance::{check_dwell, check_sandwich, check_sound, dwell_tolerance, SoundnessSettings};
use lyagate_core::game::{synthesize_reach, synthesize_safety};
use lyagate_core::sim::{simulate, CellPolicy, Constant, RandomPolicy};
use lyagate_core::tga::{switch_update, Mode};
use lyagate_core::{Analysis, Config, Execution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Relative tolerance on timing bounds against their analytic values.
const BOUND_TOL: f64 = 2e-3;
/// Envelope bracketing tolerance.
const SANDWICH_TOL: f64 = 1e-6;
/// Spread of the three envelope quantities at the start of a stay.
const TANGENCY_TOL: f64 = 1e-9;
/// Cell endpoints against the analytic level crossings.
const CELL_TOL: f64 = 1e-9;
const STEP: f64 = 1e-3;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn rel(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs()
}

fn line_at(grid: usize) -> Analysis {
    let spec = common::spec("example1d");
    Analysis::new(spec.to_model().unwrap(), Config { grid, ..spec.settings.clone() }).unwrap()
}

fn cells_exact() -> Outcome {
    let expected = [(-3.0, -1.0), (-1.0, 1.0), (1.0, 3.0)];
    let mut notes = Vec::new();
    let mut ok = true;
    for grid in [64, 128] {
        let start = Instant::now();
        let a = line_at(grid);
        let tga = a.automaton(Mode::Cells).unwrap();
        let _ = synthesize_safety(&tga, &BTreeSet::new(), None);
        let elapsed = start.elapsed();
        let mut cells: Vec<(f64, f64)> = a.complex.cells.iter().map(|c| (c.lower[0], c.upper[0])).collect();
        cells.sort_by(|p, q| p.0.total_cmp(&q.0));
        let matches = cells.len() == 3
            && cells
                .iter()
                .zip(expected)
                .all(|(g, w)| (g.0 - w.0).abs() <= CELL_TOL && (g.1 - w.1).abs() <= CELL_TOL);
        ok &= matches && elapsed < Duration::from_secs(1);
        notes.push(format!("grid {grid}: {} cells in {:.0?}", cells.len(), elapsed));
    }
    outcome(ok, notes.join("; "))
}

fn timing_bounds() -> Outcome {
    let a = common::example();
    let mut ok = true;
    let mut notes = Vec::new();
    for name in ["g0", "g2x"] {
        let b = a.bounds.get(0, 1, common::control(&a, name)).unwrap();
        let (e_lo, e_hi) = (rel(b.t_lo, 4.0 / 9.0), rel(b.t_hi, 4.0));
        ok &= e_lo <= BOUND_TOL && e_hi <= BOUND_TOL;
        notes.push(format!("{name}: ({:.5}, {:.5}) rel err ({e_lo:.1e}, {e_hi:.1e})", b.t_lo, b.t_hi));
    }
    outcome(ok, notes.join("; "))
}

fn dwell_containment() -> Outcome {
    const PER_PAIR: usize = 1000;
    let start = Instant::now();
    let a = common::example();
    let seed = common::spec("example1d").seed;
    let pairs: Vec<(usize, usize)> = (0..a.complex.len())
        .flat_map(|c| (0..a.model.controls.len()).map(move |g| (c, g)))
        .collect();
    let reports = Execution::default().map_range(pairs.len() * PER_PAIR, |k| {
        let (cell, control) = pairs[k / PER_PAIR];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        let x0 = a.complex.sample_in_cell(cell, &mut rng).unwrap();
        simulate(&a.model, &a.complex, &mut Constant(control), &x0, 10.0, STEP)
            .map(|trace| check_dwell(&a.model, &trace, &a.bounds))
            .map_err(|e| e.to_string())
    });
    let mut errors = 0;
    let mut merged = None;
    for r in reports {
        match r {
            Ok(r) => merged = Some(match merged {
                None => r,
                Some(m) => lyagate_core::conformance::DwellReport::merge(m, r),
            }),
            Err(_) => errors += 1,
        }
    }
    let report = merged.unwrap();
    let elapsed = start.elapsed();
    let ok = errors == 0 && report.passed() && report.traversals > 0 && elapsed < Duration::from_secs(30);
    outcome(
        ok,
        format!(
            "{} runs, {} traversals, {} violations, worst margin {:.3e} (eps_t {:.1e}), {errors} errors, {:.1?}",
            pairs.len() * PER_PAIR,
            report.traversals,
            report.violations.len(),
            report.worst_margin,
            dwell_tolerance(STEP),
            elapsed
        ),
    )
}

fn sandwich() -> Outcome {
    let a = common::example();
    let seed = common::spec("example1d").seed;
    let controls: Vec<usize> = (0..a.model.controls.len()).collect();
    let domain = a.model.domain().clone();
    let mut stays = 0;
    let mut violations = 0;
    let mut worst = f64::INFINITY;
    let mut tangency: f64 = 0.0;
    let mut errors = 0;
    for k in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k);
        let x0 = [rng.random_range(domain.lower[0]..domain.upper[0])];
        let mut policy = RandomPolicy {
            controls: controls.clone(),
            rng: rng.clone(),
        };
        match simulate(&a.model, &a.complex, &mut policy, &x0, 10.0, STEP) {
            Ok(trace) => {
                let r = check_sandwich(&a.model, &trace, &a.bounds);
                stays += r.stays;
                violations += r.violations.len();
                worst = worst.min(r.worst_margin);
                tangency = tangency.max(r.start_margin);
            }
            Err(_) => errors += 1,
        }
    }
    let ok = errors == 0 && violations == 0 && worst >= -SANDWICH_TOL && tangency < TANGENCY_TOL;
    outcome(
        ok,
        format!("100 runs, {stays} stays, {violations} violations, worst margin {worst:.3e}, start margin {tangency:.1e}, {errors} errors"),
    )
}

fn soundness() -> Outcome {
    let a = common::example();
    let seed = common::spec("example1d").seed;
    let tga = a.automaton(Mode::Cells).unwrap();
    let cells: Vec<usize> = (0..a.complex.len()).collect();
    let settings = SoundnessSettings {
        samples: 500,
        horizon: 10.0,
        step: STEP,
        seed,
        tolerance: dwell_tolerance(STEP),
        execution: Execution::default(),
    };
    let violations = |r: &lyagate_core::conformance::SoundnessReport| {
        r.embedding_violations + r.guard_violations + r.invariant_violations + r.simulation_errors
    };
    let mut ok = true;
    let mut notes = Vec::new();
    for name in ["g0", "g2x"] {
        let choice = vec![common::control(&a, name); tga.regions.len()];
        let r = check_sound(&a.model, &a.complex, &tga, &choice, &cells, &settings);
        ok &= r.passed && violations(&r) == 0;
        notes.push(format!("{name}: {} violations", violations(&r)));
    }
    let g0 = common::control(&a, "g0");
    let mut bad = a.bounds.clone();
    bad.get_mut(0, 1, g0).unwrap().t_lo = 2.0;
    let bad_tga = a.automaton_with(&bad, Mode::Cells).unwrap();
    let r = check_sound(&a.model, &a.complex, &bad_tga, &vec![g0; tga.regions.len()], &cells, &settings);
    ok &= !r.passed && violations(&r) >= 1;
    notes.push(format!("corrupted t_lo: {} violations", violations(&r)));
    outcome(ok, notes.join("; "))
}

fn synthesis() -> Outcome {
    let a = common::example();
    let tga = a.automaton(Mode::Cells).unwrap();
    let g0 = common::control(&a, "g0");
    let region = |x: f64| tga.regions.region_of_cell[common::cell_at(&a, x)];
    let (inner, right) = (region(0.0), region(2.0));
    let none = BTreeSet::new();

    let reach = synthesize_reach(&tga, &[inner].into(), &none, None, None);
    let worst = reach.bounds.values().map(|b| b.0).fold(0.0, f64::max);
    let reach_ok = reach.realizable && reach.choice.iter().all(|&c| c == g0) && rel(worst, 4.0) <= BOUND_TOL;

    let back = synthesize_reach(&tga, &[right].into(), &none, None, Some(&[inner]));
    let safety = synthesize_safety(&tga, &none, None);
    let ok = reach_ok && !back.realizable && safety.realizable;
    outcome(
        ok,
        format!(
            "reach inner: realizable={} bound {worst:.4}; reach right from inner: realizable={}; safety: realizable={}",
            reach.realizable, back.realizable, safety.realizable
        ),
    )
}

fn update_maps() -> Outcome {
    let a = common::example();
    let b = a.bounds.get(0, 1, common::control(&a, "g0")).unwrap();
    let up = a.bounds.get(0, 1, common::control(&a, "g2x")).unwrap();
    let same = switch_update(b, b, true).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(common::spec("example1d").seed);
    let identity = (0..1000).all(|_| {
        let v = [rng.random_range(0.0..100.0), rng.random_range(0.0..100.0)];
        same.apply(v) == v
    });
    let opposite = switch_update(b, up, false).unwrap().apply([0.0, 0.0]);
    let exact = opposite == [up.t_hi, up.t_lo];
    outcome(identity && exact, format!("identity on 1000 valuations: {identity}; opposite at zero: {opposite:?}"))
}

fn scenario() -> Outcome {
    const RUNS: u64 = 200;
    let start = Instant::now();
    let spec = common::spec("phase-plane2d");
    let a = Analysis::new(spec.to_model().unwrap(), spec.settings.clone()).unwrap();
    let tga = a.automaton(Mode::Cells).unwrap();
    let cells = &a.complex.cells;
    let goal: BTreeSet<usize> = cells.iter().filter(|c| c.y[0] == 3).map(|c| tga.regions.region_of_cell[c.id]).collect();
    let avoid: BTreeSet<usize> = cells.iter().filter(|c| c.y == [2, 2]).map(|c| tga.regions.region_of_cell[c.id]).collect();
    let initial: Vec<usize> = cells.iter().filter(|c| c.y[0] == 0 && c.y[1] < 2).map(|c| c.id).collect();
    let initial_regions: Vec<usize> = initial.iter().map(|&c| tga.regions.region_of_cell[c]).collect();
    let res = synthesize_reach(&tga, &goal, &avoid, None, Some(&initial_regions));
    if !res.realizable {
        return outcome(false, format!("reach objective not realizable: losing {:?}", res.losing_initial));
    }
    let horizon = initial_regions
        .iter()
        .filter_map(|&r| res.bound(&tga.regions.regions[r].name))
        .fold(0.0, f64::max)
        + 1.0;
    let policy: Vec<usize> = (0..a.complex.len()).map(|c| res.choice[tga.regions.region_of_cell[c]]).collect();
    let outcomes = Execution::default().map_range(RUNS as usize, |k| {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(k as u64);
        let cell = initial[rng.random_range(0..initial.len())];
        let x0 = a.complex.sample_in_cell(cell, &mut rng).unwrap();
        let trace = simulate(&a.model, &a.complex, &mut CellPolicy(policy.clone()), &x0, horizon, STEP).ok()?;
        let regions: Vec<usize> = trace.segments.iter().map(|s| tga.regions.region_of_cell[s.cell]).collect();
        let reached = regions.iter().any(|r| goal.contains(r));
        let entries = regions.iter().filter(|r| avoid.contains(r)).count();
        let dwell = check_dwell(&a.model, &trace, &a.bounds).passed();
        Some((reached, entries, dwell))
    });
    let errors = outcomes.iter().filter(|o| o.is_none()).count();
    let done: Vec<_> = outcomes.into_iter().flatten().collect();
    let reached = done.iter().filter(|o| o.0).count();
    let entries: usize = done.iter().map(|o| o.1).sum();
    let dwell_ok = done.iter().all(|o| o.2);
    let elapsed = start.elapsed();
    let ok = errors == 0 && reached == RUNS as usize && entries == 0 && dwell_ok && elapsed < Duration::from_secs(120);
    outcome(
        ok,
        format!("{reached}/{RUNS} reached the goal, {entries} obstacle entries, dwell ok: {dwell_ok}, {errors} errors, horizon {horizon:.3}, {elapsed:.1?}"),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("1-D cells at grid 64 and 128, runtime < 1 s", cells_exact),
        ("timing bounds of the outer slice within 0.2%", timing_bounds),
        ("dwell containment, runtime < 30 s", dwell_containment),
        ("rate envelope bracketing and start tangency", sandwich),
        ("soundness embedding with negative control", soundness),
        ("synthesis ground truths on the 1-D game", synthesis),
        ("update map identity and opposite-sign entry", update_maps),
        ("phase-plane reach-avoid scenario, runtime < 2 min", scenario),
    ];
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        let tag = if o.passed { "PASS" } else { "FAIL" };
        failed += usize::from(!o.passed);
        println!("{tag} [{}] {name}: {}", k + 1, o.detail);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
