mod common;

use std::time::Instant;

#[test]
fn every_layer_matches_finite_differences() {
    let start = Instant::now();
    for seed in [1, 2] {
        for r in common::check_all_layers(seed) {
            assert!(r.shapes >= 5, "{}: only {} shapes", r.layer, r.shapes);
            assert!(
                r.max_rel < common::TOLERANCE,
                "{}: max relative error {:.3e}",
                r.layer,
                r.max_rel
            );
        }
    }
    assert!(start.elapsed().as_secs() < 60);
}
