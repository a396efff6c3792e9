mod props;

use props::CASES;

macro_rules! property {
    ($($name:ident),* $(,)?) => {
        $(
            #[test]
            fn $name() {
                if let Err(e) = props::$name(CASES) {
                    panic!("{e}");
                }
            }
        )*
    };
}

property!(
    generators_are_deterministic,
    kl_matches_monte_carlo,
    ar1_without_memory_matches_iid,
    exact_posteriors_are_valid,
    tandem_exact_on_markov_chains,
    tandem_telescopes,
    order_zero_is_sum_of_singlets,
    prior_shift_moves_llr_by_minus_delta,
    stopping_is_monotone_in_thresholds,
    decisions_satisfy_invariants,
    collapsed_thresholds_stop_at_once,
    composed_gradient_is_exact,
    posteriors_are_normalised,
    windows_ignore_outside_frames,
    lllr_is_bounded_with_bounded_gradient,
);

#[test]
fn still_running_fraction_decays() {
    let (fracs, slope) = props::stein_termination();
    assert!(slope < 0.0, "slope {slope} over {fracs:?}");
    assert!(fracs.windows(2).all(|w| w[1].1 <= w[0].1));
}

#[test]
fn sat_sweep_is_monotone() {
    props::sat_sweep_is_monotone().unwrap();
}

#[test]
fn multiplet_minimiser_recovers_exact_posteriors() {
    let gap = props::multiplet_minimiser_gap();
    assert!(gap < 1e-4, "gap {gap}");
}

#[test]
fn training_does_not_collapse_features() {
    let run = props::density_ratio_run(0);
    assert!(run.final_feature_norm > 1e-3, "feature norm {}", run.final_feature_norm);
    assert_eq!(run.epochs.len(), 30);
}
