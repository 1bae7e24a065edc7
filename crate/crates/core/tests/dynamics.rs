mod common;

use backflow::{
    measure, random_pulse, Bounds, DensityMatrix, Integrator, PositivityCheck, PropagationConfig,
    Propagator, Pulse, ReservoirParams,
};

fn params(gamma: f64) -> ReservoirParams {
    ReservoirParams::new(gamma, 1.0, 1.0).unwrap()
}

fn config(substeps: usize) -> PropagationConfig {
    PropagationConfig::new(7.0, 70, substeps).unwrap()
}

fn excited_vs_ground(p: ReservoirParams, c: PropagationConfig, pulse: &Pulse) -> backflow::TrajectoryRecord {
    Propagator::new(p, c)
        .unwrap()
        .propagate_pair(&DensityMatrix::excited(), &DensityMatrix::ground(), pulse)
        .unwrap()
}

#[test]
fn undriven_matches_quadrature_in_both_regimes() {
    for gamma in [0.3, 5.0] {
        let p = params(gamma);
        let poles = common::poles(&p, 7.0);
        assert_eq!(poles.len(), if gamma > 0.5 { 3 } else { 0 });
        let c = config(100);
        let rec = excited_vs_ground(p, c, &Pulse::zeros(70, Bounds::default(), 7.0).unwrap());
        let mut worst: f64 = 0.0;
        for (t, d) in rec.times.iter().zip(&rec.distances) {
            if let Some(oracle) = common::undriven_distance_oracle(&p, &poles, *t) {
                worst = worst.max((d - oracle).abs());
            }
        }
        assert!(worst < 1e-6, "Γ = {gamma}: max deviation {worst:e}");
        assert!(rec.min_eigenvalue > -1e-12);
    }
}

#[test]
fn undriven_markovian_distance_is_monotone() {
    let rec = excited_vs_ground(params(0.3), config(20), &Pulse::zeros(70, Bounds::default(), 7.0).unwrap());
    for w in rec.distances.windows(2) {
        assert!(w[1] <= w[0] + 1e-10);
    }
    assert_eq!(rec.n_total, 0.0);
}

#[test]
fn vanishing_coupling_preserves_distinguishability() {
    let p = ReservoirParams::new(1e-14, 1.0, 1.0).unwrap();
    let rec = excited_vs_ground(p, config(20), &Pulse::zeros(70, Bounds::default(), 7.0).unwrap());
    for d in &rec.distances {
        assert!((d - 1.0).abs() < 1e-12, "{d}");
    }
}

#[test]
fn identical_states_stay_identical() {
    let rho = DensityMatrix::from_bloch(0.3, -0.2, 0.5).unwrap();
    let pulse = random_pulse(4, Bounds::default(), 70, 7.0).unwrap();
    let rec = Propagator::new(params(5.0), config(20)).unwrap().propagate_pair(&rho, &rho, &pulse).unwrap();
    assert!(rec.distances.iter().all(|&d| d == 0.0));
}

#[test]
fn trace_and_hermiticity_preserved_for_random_pulses() {
    for (gamma, seed) in [(0.3, 1), (5.0, 2), (5.0, 3), (1.7, 4)] {
        let prop = Propagator::new(params(gamma), config(20)).unwrap();
        let pulse = random_pulse(seed, Bounds::default(), 70, 7.0).unwrap();
        let mut rho = DensityMatrix::excited();
        for (k, &w) in pulse.amplitudes().iter().enumerate() {
            prop.advance_bin(&mut rho, k, w).unwrap();
            assert!((rho.trace() - 1.0).abs() < 1e-9);
            assert!(rho.matrix().hermiticity_error() < 1e-12);
        }
    }
}

#[test]
fn markovian_driven_dynamics_stay_positive_and_agree_across_integrators() {
    let p = params(0.3);
    let pulse = random_pulse(11, Bounds::default(), 70, 7.0).unwrap();
    let split = excited_vs_ground(p, config(20).with_positivity(PositivityCheck::Strict), &pulse);
    let rk4 = excited_vs_ground(p, config(20).with_integrator(Integrator::ClassicalRk4).with_positivity(PositivityCheck::Strict), &pulse);
    assert!(split.min_eigenvalue > -1e-12);
    for (a, b) in split.distances.iter().zip(&rk4.distances) {
        assert!((a - b).abs() < 1e-7, "{a} vs {b}");
        assert!(*a <= 1.0 + 1e-9);
    }
}

fn convergence_ratio(integrator: Integrator, coarse: usize) -> f64 {
    let p = params(0.3);
    let pulse = random_pulse(21, Bounds::default(), 70, 7.0).unwrap();
    let run = |s: usize| excited_vs_ground(p, config(s).with_integrator(integrator), &pulse).distances;
    let reference = run(coarse * 16);
    let err = |d: Vec<f64>| d.iter().zip(&reference).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    err(run(coarse)) / err(run(2 * coarse))
}

#[test]
fn fourth_order_convergence() {
    // RK4 reaches its asymptotic regime only at finer steps.
    for (integrator, coarse) in [(Integrator::ExactDissipatorSplitting, 4), (Integrator::ClassicalRk4, 16)] {
        let ratio = convergence_ratio(integrator, coarse);
        assert!((12.0..21.0).contains(&ratio), "{integrator:?}: ratio {ratio}");
    }
}

#[test]
fn undriven_splitting_is_exact() {
    let p = params(5.0);
    let zero = Pulse::zeros(70, Bounds::default(), 7.0).unwrap();
    let coarse = excited_vs_ground(p, config(1), &zero);
    for (t, d) in coarse.times.iter().zip(&coarse.distances) {
        let g = backflow::survival_amplitude(&p, *t);
        assert!((d - g * g).abs() < 1e-13);
    }
}

#[test]
fn strict_positivity_flags_driven_backflow_windows() {
    let p = params(5.0);
    let pulse = random_pulse(8, Bounds::default(), 70, 7.0).unwrap();
    let strict = Propagator::new(p, config(20).with_positivity(PositivityCheck::Strict)).unwrap();
    let err = strict.propagate_pair(&DensityMatrix::excited(), &DensityMatrix::ground(), &pulse).unwrap_err();
    assert!(matches!(err, backflow::Error::Positivity { .. }));
    let report = excited_vs_ground(p, config(20), &pulse);
    assert!(report.min_eigenvalue < -1e-6);
    assert!((report.n_total - measure::n_total(&report.distances, 0.1).unwrap()).abs() < 1e-15);
}

#[test]
fn pulse_shape_must_match() {
    let prop = Propagator::new(params(5.0), config(20)).unwrap();
    let short = Pulse::zeros(10, Bounds::default(), 7.0).unwrap();
    assert!(prop.propagate_pair(&DensityMatrix::excited(), &DensityMatrix::ground(), &short).is_err());
}

#[test]
fn amplitude_zeros_are_the_poles_of_the_rate() {
    let p = params(5.0);
    let zeros = backflow::amplitude_zeros(&p, 7.0, 70 * 64);
    let poles = common::poles(&p, 7.0);
    assert_eq!(zeros.len(), poles.len());
    for (z, q) in zeros.iter().zip(&poles) {
        assert!((z - q).abs() < 1e-9, "{z} vs {q}");
    }
    assert!(backflow::amplitude_zeros(&params(0.3), 7.0, 4480).is_empty());
}

#[test]
fn driven_pole_crossings_converge_with_the_step() {
    let p = params(5.0);
    for seed in 0..3 {
        let pulse = random_pulse(seed, Bounds::default(), 70, 7.0).unwrap();
        let coarse = excited_vs_ground(p, config(20), &pulse);
        let fine = excited_vs_ground(p, config(80), &pulse);
        let worst = coarse
            .distances
            .iter()
            .zip(&fine.distances)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-6, "seed {seed}: {worst:e}");
    }
}

proptest::proptest! {
    #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]
    #[test]
    fn driven_states_stay_physical(seed in 0u64..10_000, gamma in 0.1f64..8.0) {
        let p = params(gamma);
        let c = config(10);
        let prop = Propagator::new(p, c).unwrap();
        let pulse = random_pulse(seed, Bounds::default(), 70, 7.0).unwrap();
        let (mut a, mut b) = (DensityMatrix::from_bloch(0.3, -0.2, 0.9).unwrap(), DensityMatrix::ground());
        for (k, &omega) in pulse.amplitudes().iter().enumerate() {
            prop.advance_bin(&mut a, k, omega).unwrap();
            prop.advance_bin(&mut b, k, omega).unwrap();
            proptest::prop_assert!(a.is_valid() && b.is_valid());
            let d = measure::trace_distance(&a, &b);
            proptest::prop_assert!((0.0..=1.0 + 1e-9).contains(&d));
        }
    }
}
