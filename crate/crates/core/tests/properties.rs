mod common;
mod props;

#[test]
fn combine_adds_precision() {
    props::combine_adds_precision();
}

#[test]
fn combine_is_associative_and_order_free() {
    props::combine_is_associative_and_order_free();
}

#[test]
fn flat_prior_is_the_identity() {
    props::flat_prior_is_the_identity();
}

#[test]
fn sandwich_reduces_to_inverse() {
    props::sandwich_reduces_to_inverse();
}

#[test]
fn tail_decreases_in_threshold() {
    props::tail_decreases_in_threshold();
}

#[test]
fn superiority_is_a_distribution() {
    props::superiority_is_a_distribution();
}

#[test]
fn exchangeable_components_are_uniform() {
    props::exchangeable_components_are_uniform();
}

#[test]
fn results_do_not_depend_on_thread_count() {
    props::results_do_not_depend_on_thread_count();
}

#[test]
fn power_increases_with_the_treatment_rate() {
    props::power_increases_with_the_treatment_rate();
}

#[test]
fn stopping_increases_with_the_futility_threshold() {
    props::stopping_increases_with_the_futility_threshold();
}

#[test]
fn sampled_centers_match_simulated_mles() {
    props::sampled_centers_match_simulated_mles();
}

#[test]
fn observed_information_ratio_concentrates() {
    props::observed_information_ratio_concentrates();
}
