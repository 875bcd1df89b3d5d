//! Property tests: the total-variance split, statistic invariances,
//! matmul associativity, and CSV round trips.

use proptest::prelude::*;

use bvlens::estimators::{
    decompose_variance, estimate_bias, estimate_variance_total, PredictionGrid,
};
use bvlens::numkit::Matrix;
use bvlens::runner::{csv_string, parse_csv, SweepRow};

fn grid_strategy() -> impl Strategy<Value = PredictionGrid> {
    (2usize..5, 2usize..5, 1usize..5, 1usize..3)
        .prop_flat_map(|(n_s, n_o, n_t, k)| {
            let n_values = n_s * n_o * n_t * k;
            (
                Just((n_s, n_o, n_t, k)),
                prop::collection::vec(-100.0..100.0f64, n_values),
                prop::collection::vec(-100.0..100.0f64, n_t * k),
            )
        })
        .prop_map(|((n_s, n_o, n_t, k), values, targets)| {
            PredictionGrid::from_values(
                n_s,
                n_o,
                n_t,
                k,
                values,
                Matrix::new(n_t, k, targets).unwrap(),
            )
            .unwrap()
        })
}

fn rebuild(
    grid: &PredictionGrid,
    order_s: &[usize],
    order_o: &[Vec<usize>],
    order_t: &[usize],
) -> PredictionGrid {
    let (n_s, n_o, n_t, k) = (
        grid.n_replicates(),
        grid.n_seeds(),
        grid.n_test(),
        grid.output_dim(),
    );
    let mut values = Vec::with_capacity(n_s * n_o * n_t * k);
    for (s_new, &s) in order_s.iter().enumerate() {
        for &o in &order_o[s_new] {
            for &t in order_t {
                values.extend_from_slice(grid.value(s, o, t));
            }
        }
    }
    let mut targets = Vec::with_capacity(n_t * k);
    for &t in order_t {
        targets.extend_from_slice(grid.test_targets().row(t));
    }
    PredictionGrid::from_values(
        n_s,
        n_o,
        n_t,
        k,
        values,
        Matrix::new(n_t, k, targets).unwrap(),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn variance_split_is_additive(grid in grid_strategy()) {
        let total = estimate_variance_total(&grid);
        let (var_opt, var_samp) = decompose_variance(&grid).unwrap();
        let err = (var_opt + var_samp - total).abs();
        prop_assert!(err <= 1e-10 * total.max(1.0), "additivity error {err}");
        prop_assert!(var_opt >= 0.0 && var_samp >= 0.0);
    }

    #[test]
    fn statistics_ignore_index_order(grid in grid_strategy()) {
        // Reverse replicates, rotate seeds within each replicate, reverse
        // test points: every statistic must be unchanged to rounding.
        let n_s = grid.n_replicates();
        let n_o = grid.n_seeds();
        let n_t = grid.n_test();
        let order_s: Vec<usize> = (0..n_s).rev().collect();
        let order_o: Vec<Vec<usize>> = (0..n_s)
            .map(|s| (0..n_o).map(|o| (o + s) % n_o).collect())
            .collect();
        let order_t: Vec<usize> = (0..n_t).rev().collect();
        let permuted = rebuild(&grid, &order_s, &order_o, &order_t);

        let scale = estimate_variance_total(&grid).max(estimate_bias(&grid)).max(1.0);
        prop_assert!((estimate_bias(&grid) - estimate_bias(&permuted)).abs() <= 1e-12 * scale);
        prop_assert!(
            (estimate_variance_total(&grid) - estimate_variance_total(&permuted)).abs()
                <= 1e-12 * scale
        );
        let (a_opt, a_samp) = decompose_variance(&grid).unwrap();
        let (b_opt, b_samp) = decompose_variance(&permuted).unwrap();
        prop_assert!((a_opt - b_opt).abs() <= 1e-12 * scale);
        prop_assert!((a_samp - b_samp).abs() <= 1e-12 * scale);
    }

    #[test]
    fn variance_is_shift_invariant(grid in grid_strategy(), shift in -50.0..50.0f64) {
        let (n_s, n_o, n_t, k) = (
            grid.n_replicates(),
            grid.n_seeds(),
            grid.n_test(),
            grid.output_dim(),
        );
        let mut values = Vec::with_capacity(n_s * n_o * n_t * k);
        for s in 0..n_s {
            for o in 0..n_o {
                for t in 0..n_t {
                    values.extend(grid.value(s, o, t).iter().map(|v| v + shift));
                }
            }
        }
        let shifted = PredictionGrid::from_values(
            n_s, n_o, n_t, k, values, grid.test_targets().clone(),
        ).unwrap();
        let a = estimate_variance_total(&grid);
        let b = estimate_variance_total(&shifted);
        prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0), "{a} vs {b}");
    }

    #[test]
    fn matmul_is_associative(
        (m, k1, k2, n) in (1usize..6, 1usize..6, 1usize..6, 1usize..6),
        seed in 0..1_000_000u64,
    ) {
        let mut stream = bvlens::numkit::RngStream::new(seed, "assoc");
        let a = Matrix::new(m, k1, stream.gaussian(m * k1, 0.0, 4.0).unwrap()).unwrap();
        let b = Matrix::new(k1, k2, stream.gaussian(k1 * k2, 0.0, 4.0).unwrap()).unwrap();
        let c = Matrix::new(k2, n, stream.gaussian(k2 * n, 0.0, 4.0).unwrap()).unwrap();
        let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
        let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
        let scale = left.max_abs().max(1.0);
        let diff = left.sub(&right).unwrap().max_abs();
        prop_assert!(diff <= 1e-10 * scale, "associativity gap {diff}");
    }

    #[test]
    fn csv_round_trip(
        width in 1usize..100_000,
        vals in prop::collection::vec(-1e12..1e12f64, 12),
    ) {
        let row = SweepRow {
            width,
            e_bias: vals[0].abs(),
            e_variance: vals[1].abs(),
            var_opt: vals[2].abs(),
            var_samp: vals[3].abs(),
            bias_ci_lo: vals[4],
            bias_ci_hi: vals[5],
            var_ci_lo: vals[6],
            var_ci_hi: vals[7],
            train_error: vals[8],
            test_error: vals[9],
            step_size: vals[10].abs(),
            wall_time_s: vals[11].abs(),
            error: None,
        };
        let parsed = parse_csv(&csv_string(std::slice::from_ref(&row))).unwrap();
        prop_assert_eq!(parsed, vec![row]);
    }
}
