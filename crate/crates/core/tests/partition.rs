mod common;

use approx::assert_relative_eq;
use lyagate_core::expr::parse_state_expression;
use lyagate_core::grid::{Domain, Grid};
use lyagate_core::model::PartitioningFamily;
use lyagate_core::partition::{build_cells_from, build_slices, Located, PartitionError};
use lyagate_core::Config;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn family(phi: &str, levels: &[f64], n: usize) -> PartitioningFamily {
    PartitioningFamily::new(parse_state_expression(phi, n).unwrap(), levels.to_vec(), n)
}

#[test]
fn slices_cover_the_domain() {
    let config = Config::default();
    let line = Domain::new(vec![-3.0], vec![3.0]);
    let slices = build_slices(&family("x1^2", &[0.0, 1.0, 9.0], 1), 0, &line, &config).unwrap();
    let bands: Vec<[f64; 2]> = slices.iter().map(|s| s.band).collect();
    assert_eq!(bands, vec![[0.0, 1.0], [1.0, 9.0]]);

    let err = build_slices(&family("x1^2", &[0.0, 1.0, 4.0], 1), 0, &line, &config).unwrap_err();
    assert!(matches!(err, PartitionError::Coverage { value, .. } if value == 9.0), "{err}");

    let square = Domain::new(vec![-2.0, -2.0], vec![2.0, 2.0]);
    let disk = family("x1^2 + x2^2", &[0.0, 1.0, 9.0], 2);
    assert_eq!(build_slices(&disk, 0, &square, &config).unwrap().len(), 2);
}

#[test]
fn line_example_has_three_cells_at_two_resolutions() {
    for grid in [64, 128] {
        let a = common::analysis_with(
            "example1d",
            Config {
                grid,
                ..Config::default()
            },
        );
        let mut extents: Vec<(f64, f64)> =
            a.complex.cells.iter().map(|c| (c.lower[0], c.upper[0])).collect();
        extents.sort_by(|p, q| p.0.total_cmp(&q.0));
        let expected = [(-3.0, -1.0), (-1.0, 1.0), (1.0, 3.0)];
        assert_eq!(extents.len(), 3, "grid {grid}");
        for (got, want) in extents.iter().zip(expected) {
            assert!((got.0 - want.0).abs() < 1e-9 && (got.1 - want.1).abs() < 1e-9, "grid {grid}: {extents:?}");
        }
        assert_eq!(a.complex.components(&[1]), 2);
        assert_eq!(a.complex.components(&[0]), 1);
    }
}

#[test]
fn adjacency_of_the_line_example() {
    let a = common::example();
    let inner = common::cell_at(&a, 0.5);
    let right = common::cell_at(&a, 2.0);
    let adj = a.complex.adjacent(inner, right).expect("adjacent");
    assert_eq!(adj.families, vec![0]);
    assert!(adj.facet_points.iter().all(|p| (p[0] - 1.0).abs() < 1e-9));
    let left = common::cell_at(&a, -2.0);
    assert!(a.complex.adjacent(left, right).is_none());
    assert_eq!(a.complex.adjacency.len(), 2);
}

#[test]
fn locate_reports_boundaries() {
    let a = common::example();
    let inner = common::cell_at(&a, 0.5);
    let right = common::cell_at(&a, 2.0);
    assert_eq!(a.complex.locate(&[1.0]).unwrap(), Located::Boundary(sorted(vec![inner, right])));
    assert!(matches!(a.complex.locate(&[3.5]), Err(PartitionError::OutOfDomain(_))));
}

fn sorted(mut v: Vec<usize>) -> Vec<usize> {
    v.sort_unstable();
    v
}

#[test]
fn disconnected_extended_cells_split_into_components() {
    let a = common::analysis("decoupled2d");
    // Corners (|x1|, |x2| > 1) form one extended cell with four components.
    assert_eq!(a.complex.components(&[1, 1]), 4);
    assert_eq!(a.complex.components(&[0, 0]), 1);
    assert_eq!(a.complex.components(&[0, 1]), 2);
    assert_eq!(a.complex.len(), 9);
}

#[test]
fn every_random_point_lies_in_exactly_one_cell() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for name in ["example1d", "decoupled2d", "phase-plane2d"] {
        let a = common::analysis(name);
        let d = a.complex.domain.clone();
        for _ in 0..500 {
            let x: Vec<f64> = (0..d.dim())
                .map(|k| rng.random_range(d.lower[k]..d.upper[k]))
                .collect();
            match a.complex.locate(&x).unwrap() {
                Located::Interior(c) => {
                    let cell = a.complex.cell(c);
                    let y = a.complex.tuple(&x).unwrap().unwrap();
                    assert_eq!(cell.y, y);
                    for k in 0..d.dim() {
                        let slack = 2.0 * Grid::new(d.clone(), a.config.grid).spacing(k);
                        assert!(x[k] >= cell.lower[k] - slack && x[k] <= cell.upper[k] + slack);
                    }
                }
                Located::Boundary(cells) => assert!(cells.len() >= 2),
            }
        }
    }
}

#[test]
fn adjacent_cells_have_interior_points_and_one_differing_slice() {
    for name in ["example1d", "decoupled2d", "phase-plane2d"] {
        let a = common::analysis(name);
        for adj in &a.complex.adjacency {
            let [p, q] = adj.cells;
            assert!(p < q);
            let (cp, cq) = (a.complex.cell(p), a.complex.cell(q));
            assert!(cp.interior_points >= 1 && cq.interior_points >= 1, "{name}");
            let differing: Vec<usize> = (0..cp.y.len()).filter(|&i| cp.y[i] != cq.y[i]).collect();
            assert_eq!(differing, adj.families);
            assert_eq!(differing.len(), 1);
            let i = differing[0];
            assert_eq!(cp.y[i].abs_diff(cq.y[i]), 1);
            assert!(!adj.facet_points.is_empty());
            assert!(adj.facet_points.len() <= a.config.facet_samples);
            // Facet points lie on the shared level.
            let level = a.model.families[i].levels[cp.y[i].max(cq.y[i])];
            for x in &adj.facet_points {
                assert_relative_eq!(a.model.families[i].value(x).unwrap(), level, epsilon = 1e-8, max_relative = 1e-8);
            }
            assert!(a.complex.adjacent(q, p).is_some());
        }
    }
}

#[test]
fn doubling_resolution_preserves_cell_counts() {
    for name in ["example1d", "decoupled2d", "phase-plane2d"] {
        let coarse = common::analysis(name);
        let fine = common::analysis_with(
            name,
            Config {
                grid: 2 * coarse.config.grid - 1,
                ..coarse.config.clone()
            },
        );
        assert_eq!(coarse.complex.len(), fine.complex.len(), "{name}");
    }
}

#[test]
fn sampled_points_stay_in_their_cell() {
    let a = common::analysis("decoupled2d");
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for c in 0..a.complex.len() {
        for _ in 0..20 {
            let x = a.complex.sample_in_cell(c, &mut rng).expect("sample");
            assert_eq!(a.complex.locate(&x).unwrap(), Located::Interior(c));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    /// `φ = (x − c)²` on `[−3, 3]`: the slice `[r², R²]` meets the line in one or two
    /// intervals depending on whether `c ± r` both fall inside the domain.
    #[test]
    fn shifted_parabola_cell_count(c in -1.0f64..1.0, r in 0.3f64..1.5) {
        let domain = Domain::new(vec![-3.0], vec![3.0]);
        let top = (3.0 + c.abs()).powi(2) + 0.5;
        let fam = family(&format!("(x1 - {c})^2"), &[0.0, r * r, top], 1);
        let config = Config { grid: 97, ..Config::default() };
        let complex = build_cells_from(&[fam], &domain, &config).unwrap();
        // Oracle: the inner band is one interval; the outer band has a piece on each
        // side of [c − r, c + r] that still lies inside the domain.
        let left = c - r > -3.0;
        let right = c + r < 3.0;
        let expected = 1 + usize::from(left) + usize::from(right);
        prop_assert_eq!(complex.len(), expected);
        prop_assert_eq!(complex.components(&[0]), 1);
    }
}
