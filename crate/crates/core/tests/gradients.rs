use advseg::gradcheck::full_suite;

#[test]
fn full_suite_passes_on_several_seeds() {
    for seed in [0, 1, 17] {
        let outcomes = full_suite(seed).unwrap();
        assert!(outcomes.len() >= 20);
        for o in &outcomes {
            assert!(o.passed(), "seed {seed}: {} error {:.3e} over {:.0e}", o.name, o.max_rel_error, o.tolerance);
            assert!(o.checked > 0, "{} checked nothing", o.name);
        }
    }
}
