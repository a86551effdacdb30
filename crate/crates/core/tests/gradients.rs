mod common;

use common::{check_case, check_end_to_end, op_cases};

const SEEDS: u64 = 20;

#[test]
fn every_op_matches_central_differences() {
    let names: Vec<&str> = op_cases(0).iter().map(|c| c.name).collect();
    for (i, name) in names.iter().enumerate() {
        let worst = (0..SEEDS)
            .map(|seed| {
                let cases = op_cases(seed);
                check_case(&cases[i], seed).unwrap_or_else(|e| panic!("{name} seed {seed}: {e}"))
            })
            .fold(0.0, f64::max);
        assert!(worst < 1e-4, "{name}: relative error {worst:e}");
    }
}

#[test]
fn full_objective_matches_central_differences() {
    for seed in 0..SEEDS {
        let err = check_end_to_end(seed, 12).unwrap();
        assert!(err < 1e-3, "seed {seed}: relative error {err:e}");
    }
}

#[test]
fn relative_error_edge_cases() {
    assert_eq!(common::rel_error(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
    assert_eq!(common::rel_error(&[1.0], &[1.0]), 0.0);
    assert!((common::rel_error(&[1.0], &[0.0]) - 1.0).abs() < 1e-15);
}
