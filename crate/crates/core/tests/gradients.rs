use caggnet::autograd::suites::{corrupted_backward_check, model_suite, run_suite, Scope};
use caggnet::autograd::GradCheckConfig;

#[test]
fn tiny_networks_match_finite_differences() {
    let reps = model_suite(&GradCheckConfig::default()).unwrap();
    assert_eq!(reps.len(), 2);
    for r in &reps {
        assert!(r.passed && r.max_rel_err < 1e-4, "{r:?}");
        assert_eq!(r.coords_checked, 256);
    }
}

#[test]
fn every_scope_passes_under_other_seeds() {
    for seed in [1, 2] {
        let cfg = GradCheckConfig {
            seed,
            ..Default::default()
        };
        for scope in [Scope::Ops, Scope::Blocks] {
            for r in run_suite(scope, &cfg).unwrap() {
                assert!(r.passed, "seed {seed}: {r:?}");
            }
        }
    }
}

#[test]
fn corrupted_rule_is_caught() {
    assert!(!corrupted_backward_check(&GradCheckConfig::default()).unwrap().passed);
}
