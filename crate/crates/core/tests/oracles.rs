mod common;

use common::*;
use kgcn::model::Aggregator;

#[test]
fn batched_forward_matches_straight_line_evaluation() {
    for agg in Aggregator::ALL {
        let fx = three_entity_fixture(agg);
        for item in 0..3 {
            let want = straight_line_prediction(&fx, item);
            let got = batched_prediction(&fx, item);
            assert!((want - got).abs() < 1e-12, "{agg:?} item {item}: {got} vs {want}");
        }
    }
}

#[test]
fn analytic_gradients_match_central_differences() {
    for agg in Aggregator::ALL {
        for seed in 0..20 {
            let check = gradient_check(agg, seed);
            assert!(
                check.max_relative_error < 1e-5,
                "{agg:?} seed {seed}: max relative error {:e}",
                check.max_relative_error
            );
        }
    }
}
