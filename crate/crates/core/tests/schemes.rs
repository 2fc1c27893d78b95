use std::f64::consts::{FRAC_PI_3, FRAC_PI_4};

use holorefocus::holonomy::{align_phase, angle_distance, relative_phase, Gate};
use holorefocus::models::ModelId;
use holorefocus::qcore::C64;
use holorefocus::schemes::{
    ideal_gate, run_double_loop_lambda, run_naive_refocus_tripod, run_single_loop,
    run_superposed_loop, SchemeKind, SchemeSpec,
};

fn max_dev(a: &Gate, b: &Gate) -> f64 {
    (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

#[test]
fn tripod_single_loop_is_the_oracle_rotation() {
    let spec = SchemeSpec::new(SchemeKind::Single, 0.0, FRAC_PI_3);
    let report = run_single_loop(&spec, ModelId::TripodFirst).unwrap();
    let (ideal, _) = ideal_gate(&spec, Some(ModelId::TripodFirst)).unwrap();
    let dev = max_dev(&align_phase(&report.normalized_gate, &ideal), &ideal);
    assert!(dev < 5.0 * spec.gamma / spec.omega, "{dev}");
}

#[test]
fn superposed_loop_without_damping_matches_wilson_loop() {
    let spec = SchemeSpec::new(SchemeKind::Superposed, 0.0, FRAC_PI_3);
    let report = run_superposed_loop(&spec).unwrap();
    let (ideal, _) = ideal_gate(&spec, None).unwrap();
    let dev = max_dev(&align_phase(&report.normalized_gate, &ideal), &ideal);
    assert!(dev < 1e-3, "{dev}");
}

#[test]
fn lambda_double_loop_doubles_the_oracle_phase() {
    let spec = SchemeSpec::new(SchemeKind::LambdaDouble, 0.0, FRAC_PI_4);
    let report = run_double_loop_lambda(&spec).unwrap();
    let (_, phi_g) = ideal_gate(&spec, None).unwrap();
    let target = Gate::new(
        C64::from(1.0),
        C64::from(0.0),
        C64::from(0.0),
        C64::from_polar(1.0, 2.0 * phi_g),
    );
    let dev = max_dev(&align_phase(&report.normalized_gate, &target), &target);
    assert!(dev < 1e-3, "{dev}");
    assert!(angle_distance(relative_phase(&report.normalized_gate), 2.0 * phi_g) < 1e-3);
}

#[test]
fn lambda_double_loop_removes_the_damping_distortion() {
    let mut spec = SchemeSpec::new(SchemeKind::LambdaDouble, 0.0, FRAC_PI_4);
    spec.kappa = spec.gamma;
    let double = run_double_loop_lambda(&spec).unwrap();
    let single = run_single_loop(&spec, ModelId::LambdaFirst).unwrap();
    assert!(double.homogeneity < 1e-2, "{}", double.homogeneity);
    assert!(single.homogeneity > 0.3, "{}", single.homogeneity);
}

#[test]
fn naive_refocus_commutes_trivially_at_zero_angle() {
    let mut spec = SchemeSpec::new(SchemeKind::TripodNaiveDouble, 0.0, 0.0);
    spec.kappa = spec.gamma;
    let (_, commutator) = run_naive_refocus_tripod(&spec).unwrap();
    assert!(commutator < 1e-6, "{commutator}");
}

#[test]
fn naive_refocus_gates_commute_when_the_holonomy_is_scalar() {
    // At theta0 = pi/3 each loop's holonomy is -1 on the dark pair.
    let spec = SchemeSpec::new(SchemeKind::TripodNaiveDouble, 0.0, FRAC_PI_3);
    let (_, commutator) = run_naive_refocus_tripod(&spec).unwrap();
    assert!(commutator < 1e-6, "{commutator}");
}
