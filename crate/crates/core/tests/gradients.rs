use pan_core::gradsuite::{format_entry, run_suite};

#[test]
fn every_gradient_matches_central_differences() {
    for seed in [0, 1] {
        let entries = run_suite(seed).unwrap();
        for e in &entries {
            println!("seed {seed}: {}", format_entry(e));
        }
        assert!(entries.iter().all(|e| e.passed()), "seed {seed} failed");
    }
}
