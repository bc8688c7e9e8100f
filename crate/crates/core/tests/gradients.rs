mod common;

#[test]
fn objectives_match_central_differences() {
    for seed in 0..2 {
        for (name, err) in common::gradient_suite(seed, 4) {
            assert!(err < 1e-4, "{name}: relative error {err:.3e} (seed {seed})");
        }
    }
}
