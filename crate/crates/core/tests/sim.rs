mod common;

use approx::assert_relative_eq;
use lyagate_core::sim::{
    default_step, integrate, simulate, CellPolicy, Constant, EndReason, RandomPolicy, SimError,
};
use lyagate_core::{Analysis, Config, SystemSpecFile};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn g0(a: &Analysis) -> Constant {
    Constant(common::control(a, "g0"))
}

#[test]
fn integration_examples() {
    let a = common::example();
    let field = a.model.closed_loop(common::control(&a, "g0")).field;
    let traj = integrate(&field, a.model.domain(), &[2.5], 1.0, 1e-4).unwrap();
    let (t, x) = traj.last();
    assert_eq!(*t, 1.0);
    assert_relative_eq!(x[0], 2.5 * (-1.0f64).exp(), epsilon = 1e-12);
    assert_relative_eq!(traj.at(0.5)[0], 2.5 * (-0.5f64).exp(), epsilon = 1e-9);

    let field = a.model.closed_loop(common::control(&a, "g2x")).field;
    let traj = integrate(&field, a.model.domain(), &[0.5], 5.0, 1e-4).unwrap();
    assert!(traj.exited);
    assert!((traj.last().0 - 6f64.ln()).abs() < 1e-3);

    assert!(matches!(integrate(&field, a.model.domain(), &[0.5], 1.0, 0.0), Err(SimError::InvalidStep(_))));
    assert!(matches!(integrate(&field, a.model.domain(), &[4.0], 1.0, 0.1), Err(SimError::OutsideDomain(_))));
}

#[test]
fn rk4_converges_at_fourth_order() {
    let a = common::example();
    let field = a.model.closed_loop(common::control(&a, "g0")).field;
    let exact = 2.5 * (-2.0f64).exp();
    let err = |h: f64| (integrate(&field, a.model.domain(), &[2.5], 2.0, h).unwrap().last().1[0] - exact).abs();
    let (coarse, fine) = (err(0.1), err(0.05));
    let order = (coarse / fine).log2();
    assert!(order >= 3.5, "observed order {order}");
}

#[test]
fn hybrid_simulation_examples() {
    let a = common::example();
    let h = 1e-3;
    let inner = common::cell_at(&a, 0.0);
    let right = common::cell_at(&a, 2.0);

    let trace = simulate(&a.model, &a.complex, &mut g0(&a), &[2.5], 3.0, h).unwrap();
    assert_eq!(trace.events.len(), 1);
    let e = &trace.events[0];
    assert!((e.time - 2.5f64.ln()).abs() <= 1e-8, "{}", e.time);
    assert_eq!((e.from, e.to, e.family, e.level), (right, Some(inner), Some(0), Some(1.0)));
    assert_eq!(trace.cell_sequence(), vec![(right, 0.0), (inner, e.time)]);
    assert_eq!(trace.end, EndReason::Horizon);

    let trace = simulate(&a.model, &a.complex, &mut g0(&a), &[0.0], 3.0, h).unwrap();
    assert!(trace.events.is_empty());
    assert_eq!(trace.visited(), vec![inner]);

    let g2x = common::control(&a, "g2x");
    let trace = simulate(&a.model, &a.complex, &mut Constant(g2x), &[0.5], 3.0, h).unwrap();
    let times: Vec<f64> = trace.events.iter().map(|e| e.time).collect();
    assert_eq!(times.len(), 2);
    assert!((times[0] - 2f64.ln()).abs() <= 1e-8);
    assert!((times[1] - 6f64.ln()).abs() <= 1e-8);
    assert_eq!(trace.events[1].to, None);
    assert_eq!(trace.end, EndReason::Sink);
    assert_eq!(trace.end_time, times[1]);
}

#[test]
fn events_are_localized_on_their_level() {
    let a = common::analysis("phase-plane2d");
    let h = default_step(&a.model, &a.complex).unwrap();
    let controls: Vec<usize> = (0..a.model.controls.len()).collect();
    for seed in 0..8 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cell = (seed as usize) % a.complex.len();
        let x0 = a.complex.sample_in_cell(cell, &mut rng).unwrap();
        let mut policy = RandomPolicy {
            controls: controls.clone(),
            rng: ChaCha8Rng::seed_from_u64(100 + seed),
        };
        let trace = simulate(&a.model, &a.complex, &mut policy, &x0, 6.0, h).unwrap();
        assert_eq!(trace.segments.len(), trace.events.len() + usize::from(trace.end == EndReason::Horizon));
        for (j, e) in trace.events.iter().enumerate() {
            let seg = &trace.segments[j];
            assert_eq!(e.from, seg.cell);
            assert_eq!(seg.end, e.time);
            assert_eq!(seg.states.last().unwrap(), &e.state);
            if let (Some(i), Some(level)) = (e.family, e.level) {
                let v = a.model.families[i].value(&e.state).unwrap();
                assert!((v - level).abs() <= 1e-6 * level.abs().max(1.0), "{v} vs {level}");
            }
            if let Some(to) = e.to {
                let next = &trace.segments[j + 1];
                assert_eq!(next.cell, to);
                assert_eq!(next.start, e.time);
                let adj = a.complex.adjacent(e.from, to).expect("crossings join adjacent cells");
                assert_eq!(adj.families, vec![e.family.unwrap()]);
            }
        }
        for seg in &trace.segments {
            assert!(seg.times.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}

#[test]
fn opposing_controls_across_a_level_chatter() {
    let spec = SystemSpecFile::from_json(
        r#"{
            "state_dim": 1, "input_dim": 1,
            "domain": { "lower": [-1.0], "upper": [1.0] },
            "dynamics": ["u1"],
            "controls": [{ "name": "down", "law": ["-1"] }, { "name": "up", "law": ["1"] }],
            "partitions": [{ "phi": "x1", "levels": [-1, 0, 1] }],
            "settings": { "grid": 33 }
        }"#,
    )
    .unwrap();
    let a = Analysis::new(spec.to_model().unwrap(), Config { grid: 33, ..Config::default() }).unwrap();
    let below = common::cell_at(&a, -0.5);
    let above = common::cell_at(&a, 0.5);
    let mut policy = vec![0; a.complex.len()];
    policy[below] = common::control(&a, "up");
    policy[above] = common::control(&a, "down");
    let err = simulate(&a.model, &a.complex, &mut CellPolicy(policy), &[-0.5], 2.0, 1e-3).unwrap_err();
    let SimError::Chattering { time, events, trace, .. } = err else {
        panic!("expected chattering, got {err:?}");
    };
    assert!(events > 10);
    assert!((time - 0.5).abs() < 0.02, "{time}");
    assert!(trace.events.len() >= events);
}

#[test]
fn csv_export_lists_every_sample() {
    let a = common::example();
    let trace = simulate(&a.model, &a.complex, &mut g0(&a), &[2.5], 1.0, 1e-2).unwrap();
    let names: Vec<String> = a.model.controls.iter().map(|c| c.name.clone()).collect();
    let csv = trace.to_csv(&a.complex, &names);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t,x1,cell,control"));
    let samples: usize = trace.segments.iter().map(|s| s.times.len()).sum();
    assert_eq!(lines.clone().count(), samples);
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(first[0], "0");
    assert_eq!(first[1], "2.5");
    assert_eq!(first[3], "g0");
}
