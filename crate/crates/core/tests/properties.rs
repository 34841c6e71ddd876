use approx::assert_relative_eq;
use proptest::prelude::*;

use qrobust::config::{Problem, SigmaMode};
use qrobust::ensemble::{left_std, left_std_with};
use qrobust::io::{read_field_csv, write_field_csv};
use qrobust::landscape::{cost_j, gradient, hessian};
use qrobust::linalg::{symmetric_eigen, unitarity_error, EigenOrder};
use qrobust::noise::{classify_regime, correlation_matrix, noise_spectrum, NoiseModel, Regime, RegimeRule};
use qrobust::robustness::{
    k_additive, k_additive_per_channel, k_multiplicative, k_multiplicative_per_channel,
};
use qrobust::system::{final_unitary, propagate, ControlField};
use qrobust::TimeGrid;

fn field_for(p: &Problem, coeffs: &[(f64, f64, f64)]) -> ControlField {
    let channels = p.system.channel_count();
    let n = p.grid.steps();
    let mut samples = vec![0.0; n * channels];
    for (k, t) in p.grid.sample_times().into_iter().enumerate() {
        for c in 0..channels {
            samples[k * channels + c] =
                coeffs.iter().map(|&(a, w, phi)| a * (w * t + phi + c as f64).sin()).sum::<f64>();
        }
    }
    ControlField::new(p.grid, channels, samples).unwrap()
}

fn coeffs() -> impl Strategy<Value = Vec<(f64, f64, f64)>> {
    prop::collection::vec((-4.0f64..4.0, 0.0f64..60.0, 0.0f64..6.3), 1..5)
}

fn ordinal(r: Regime) -> u8 {
    match r {
        Regime::WhiteLike => 0,
        Regime::MidFrequency => 1,
        Regime::LowFrequency => 2,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn gradient_matches_central_differences(c in coeffs()) {
        let p = Problem::hadamard();
        let field = field_for(&p, &c);
        let g = gradient(&p.target, &propagate(&p.system, &field).unwrap(), 0).unwrap();
        let (h, dt) = (1e-6, p.grid.dt());
        let (mut num, mut den) = (0.0, 0.0);
        for k in (0..g.len()).step_by(7) {
            let cost = |d: f64| {
                let mut s = field.samples().to_vec();
                s[k] += d;
                let f = ControlField::new(p.grid, 1, s).unwrap();
                cost_j(&p.target, &final_unitary(&p.system, &f).unwrap()).unwrap()
            };
            let fd = (cost(h) - cost(-h)) / (2.0 * h * dt);
            num += (fd - g[k]).powi(2);
            den += g[k].powi(2);
        }
        prop_assume!(den > 1e-12);
        prop_assert!((num / den).sqrt() < 1e-4);
    }

    #[test]
    fn propagators_stay_unitary(c in coeffs(), two in any::<bool>()) {
        let p = if two { Problem::cnot() } else { Problem::hadamard() };
        let u = final_unitary(&p.system, &field_for(&p, &c)).unwrap();
        prop_assert!(unitarity_error(&u) < 1e-10);
        let j = cost_j(&p.target, &u).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&j));
    }

    #[test]
    fn hessian_symmetric_bounded_with_trace_identity(c in coeffs()) {
        let p = Problem::hadamard();
        let field = field_for(&p, &c);
        let prop = propagate(&p.system, &field).unwrap();
        let j = cost_j(&p.target, prop.u_final()).unwrap();
        let kern = hessian(&p.target, &prop).unwrap();
        let h = &kern.blocks[0];
        prop_assert!((h - h.transpose()).amax() < 1e-14);
        // |Re Tr[X mu mu]| / 2N <= ||mu||^2 / 2 = 1/8
        prop_assert!(kern.max_abs_entry() <= 0.125 + 1e-12);
        prop_assert!((kern.traces()[0] - 0.125 * (1.0 - 2.0 * j)).abs() < 1e-12);
    }

    #[test]
    fn noise_kernels_psd_and_kl_exact(alpha in 1e-3f64..100.0, a_sq in 1e-6f64..1.0, white in any::<bool>()) {
        let grid = TimeGrid::new(1.0, 0.01).unwrap();
        let m = if white { NoiseModel::white(a_sq) } else { NoiseModel::exponential(alpha, a_sq) }.unwrap();
        let r = correlation_matrix(&m, grid);
        let eig = symmetric_eigen(r.clone(), EigenOrder::DescendingValue).unwrap();
        prop_assert!(*eig.values.last().unwrap() >= -1e-12 * eig.values[0]);
        let spec = noise_spectrum(&m, grid).unwrap();
        prop_assert!((spec.reconstruct() - &r).amax() <= 1e-8 * r.amax());
        prop_assert!(spec.eigenvalues.iter().all(|&g| g > 0.0));
    }

    #[test]
    fn regime_is_monotone_in_alpha(a in -3.5f64..2.5, b in -3.5f64..2.5) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let rule = RegimeRule::default();
        let r = |x: f64| classify_regime(&NoiseModel::exponential(10f64.powf(x), 1e-4).unwrap(), &rule).unwrap();
        prop_assert!(ordinal(r(lo)) <= ordinal(r(hi)));
    }

    #[test]
    fn left_std_properties(v in prop::collection::vec(0.0f64..10.0, 1..40), scale in 0.1f64..10.0, shift in -5.0f64..5.0) {
        let s = left_std(&v).unwrap();
        prop_assert!(s >= 0.0);
        let scaled: Vec<f64> = v.iter().map(|x| x * scale).collect();
        prop_assert!((left_std(&scaled).unwrap() - scale * s).abs() <= 1e-9 * (1.0 + scale * s));
        let shifted: Vec<f64> = v.iter().map(|x| x + shift).collect();
        prop_assert!((left_std(&shifted).unwrap() - s).abs() <= 1e-9 * (1.0 + s));
        prop_assert!(left_std_with(&v, SigmaMode::Total).unwrap() <= s + 1e-15);
    }

    #[test]
    fn robustness_linear_in_strength_and_additive_over_channels(
        c in coeffs(), alpha in 1e-3f64..100.0, a_sq in 1e-6f64..1e-2, factor in 0.5f64..20.0,
    ) {
        let p = Problem::cnot();
        let field = field_for(&p, &c);
        let kern = hessian(&p.target, &propagate(&p.system, &field).unwrap()).unwrap();
        let m = NoiseModel::exponential(alpha, a_sq).unwrap();
        let m2 = m.with_strength(a_sq * factor);
        let ka = k_additive(&kern, &m).unwrap();
        let km = k_multiplicative(&kern, &field, &m).unwrap();
        prop_assert!((k_additive(&kern, &m2).unwrap() - factor * ka).abs() <= 1e-10 * (factor * ka).abs().max(1e-300));
        prop_assert!((k_multiplicative(&kern, &field, &m2).unwrap() - factor * km).abs() <= 1e-10 * (factor * km).abs().max(1e-300));
        let per_a: f64 = k_additive_per_channel(&kern, &m).unwrap().iter().sum();
        let per_m: f64 = k_multiplicative_per_channel(&kern, &field, &m).unwrap().iter().sum();
        prop_assert!((per_a - ka).abs() <= 1e-12 * ka.abs().max(1e-300));
        prop_assert!((per_m - km).abs() <= 1e-12 * km.abs().max(1e-300));
    }

    #[test]
    fn field_csv_round_trip(samples in prop::collection::vec(any::<f64>().prop_filter("finite", |x| x.is_finite()), 40)) {
        let dir = tempfile::tempdir().unwrap();
        let grid = TimeGrid::new(0.2, 0.01).unwrap();
        let field = ControlField::new(grid, 2, samples).unwrap();
        let path = dir.path().join("field.csv");
        write_field_csv(&path, &field).unwrap();
        let back = read_field_csv(&path).unwrap();
        prop_assert_eq!(back.samples(), field.samples());
    }
}

#[test]
fn constant_noise_recovers_quadratic_form() {
    let p = Problem::hadamard();
    let field = field_for(&p, &[(2.0, 20.0, 0.3)]);
    let kern = hessian(&p.target, &propagate(&p.system, &field).unwrap()).unwrap();
    let m = NoiseModel::constant(1e-4).unwrap();
    let dt = p.grid.dt();
    let ones = nalgebra::DVector::from_element(p.grid.steps(), 1.0);
    let expected = 0.5 * dt * dt * 1e-4 * (ones.transpose() * &kern.blocks[0] * &ones)[(0, 0)];
    assert_relative_eq!(k_additive(&kern, &m).unwrap(), expected, max_relative = 1e-12);
}
