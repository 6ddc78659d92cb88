mod common;

use approx::assert_relative_eq;
use lyagate_core::bounds::{extremal_lie_derivative, timing_bounds, OUTWARD_ROUNDING};
use lyagate_core::Config;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn extrema_on_the_line_example() {
    let a = common::example();
    let g0 = common::control(&a, "g0");
    let g2x = common::control(&a, "g2x");
    // |∓2x²| on |x| ∈ [1, 3] peaks at 3 and bottoms out at 1.
    for c in [g0, g2x] {
        let outer = extremal_lie_derivative(&a.model, c, 0, 1, &a.config).unwrap();
        assert_relative_eq!(outer.raw_inf, 2.0, max_relative = 1e-7);
        assert_relative_eq!(outer.raw_sup, 18.0, max_relative = 1e-7);
        assert!(!outer.critical_in_slice);
    }
    let inner = extremal_lie_derivative(&a.model, g0, 0, 0, &a.config).unwrap();
    assert_eq!(inner.raw_inf, 0.0);
    assert!(inner.critical_in_slice);
    assert_relative_eq!(inner.raw_sup, 2.0, max_relative = 1e-9);
}

#[test]
fn timing_bounds_of_the_line_example() {
    let a = common::example();
    let g0 = common::control(&a, "g0");
    let outer = a.bounds.get(0, 1, g0).unwrap();
    assert_eq!(outer.delta_a, 8.0);
    assert_relative_eq!(outer.t_lo, 4.0 / 9.0, max_relative = 2e-3);
    assert_relative_eq!(outer.t_hi, 4.0, max_relative = 2e-3);
    // Outward rounding only loosens the bounds.
    assert!(outer.t_lo <= 4.0 / 9.0 && outer.t_hi >= 4.0);
    let inner = a.bounds.get(0, 0, g0).unwrap();
    assert_relative_eq!(inner.t_lo, 0.5, max_relative = 2e-3);
    assert!(inner.t_hi.is_infinite());

    assert_eq!(timing_bounds(2.0, 18.0, 8.0), (8.0 / 18.0, 4.0));
    assert_eq!(timing_bounds(0.0, 2.0, 1.0), (0.5, f64::INFINITY));
    assert_eq!(timing_bounds(1.0, 2.0, 0.0), (0.0, 0.0));
}

#[test]
fn bounds_serialize_with_textual_infinity() {
    let a = common::example();
    let json = serde_json::to_value(&a.bounds).unwrap();
    let entries = json["entries"].as_array().unwrap();
    assert!(entries.iter().any(|e| e["t_hi"] == "inf"));
    assert!(entries.iter().all(|e| e["t_lo"].is_number()));
}

#[test]
fn extrema_enclose_random_slice_samples() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for name in ["example1d", "decoupled2d", "phase-plane2d"] {
        let a = common::analysis(name);
        let d = a.model.domain().clone();
        let lies: Vec<Vec<_>> = (0..a.model.controls.len())
            .map(|c| (0..a.model.families.len()).map(|i| a.model.lie_derivative(c, i).expr).collect())
            .collect();
        for _ in 0..10_000 {
            let x: Vec<f64> = (0..d.dim()).map(|k| rng.random_range(d.lower[k]..=d.upper[k])).collect();
            for (i, fam) in a.model.families.iter().enumerate() {
                let Some(h) = fam.slice_of(fam.value(&x).unwrap()) else { continue };
                for (c, lie) in lies.iter().enumerate() {
                    let b = a.bounds.get(i, h, c).unwrap();
                    let v = lie[i].eval_state(&x).unwrap().abs();
                    assert!(v >= b.inf_abs - 1e-9 && v <= b.sup_abs + 1e-9, "{name} {x:?}: {v} vs [{}, {}]", b.inf_abs, b.sup_abs);
                }
            }
        }
    }
}

#[test]
fn refinement_only_widens_grid_extrema() {
    let a = common::analysis("phase-plane2d");
    for e in &a.extrema {
        assert!(e.inf_abs <= e.raw_inf && e.sup_abs >= e.raw_sup);
        assert_relative_eq!(e.sup_abs, e.raw_sup * (1.0 + OUTWARD_ROUNDING), max_relative = 1e-12);
    }
    let coarse = common::analysis_with("phase-plane2d", Config { grid: 25, refine_iters: 0, ..a.config.clone() });
    let refined = common::analysis_with("phase-plane2d", Config { grid: 25, ..a.config.clone() });
    for (c, r) in coarse.extrema.iter().zip(&refined.extrema) {
        assert!(r.raw_inf <= c.raw_inf && r.raw_sup >= c.raw_sup);
    }
}

#[test]
fn sequential_and_parallel_bounds_agree() {
    use lyagate_core::Execution;
    let base = common::spec("decoupled2d");
    let run = |execution| {
        let config = Config { execution, ..base.settings.clone() };
        lyagate_core::Analysis::new(base.to_model().unwrap(), config).unwrap()
    };
    let seq = run(Execution::Sequential);
    let par = run(Execution::Parallel);
    assert_eq!(seq.bounds, par.bounds);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn timing_bounds_are_ordered(inf in 0.0f64..10.0, extra in 0.0f64..10.0, delta in 0.0f64..10.0) {
        let sup = inf + extra + 1e-3;
        let (lo, hi) = timing_bounds(inf, sup, delta);
        prop_assert!(lo >= 0.0);
        prop_assert!(lo <= hi);
        if delta > 0.0 && inf == 0.0 {
            prop_assert!(hi.is_infinite());
        }
    }
}
