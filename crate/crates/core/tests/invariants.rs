//! Property tests of the forward map and the parameter conversions.

use doppler_cqed::params::{strontium_reference, PhysicalParams};
use doppler_cqed::selfconsist::{forward_map, newton_solve, VelocityGrid};
use doppler_cqed::ScaledParams;
use num_complex::Complex64 as C64;
use proptest::prelude::*;

fn params(nc0: f64, d0: f64, l_max: usize) -> ScaledParams {
    ScaledParams {
        nc0,
        delta0_over_gp: d0,
        l_max,
        ..Default::default()
    }
}

fn close(a: C64, b: C64, rel: f64) -> bool {
    (a - b).norm() <= rel * a.norm().max(b.norm()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn physical_round_trip(
        nc0 in 1.0f64..1e4,
        d0 in 0.5f64..500.0,
        y_sq in 1e-2f64..1e5,
    ) {
        let reference = strontium_reference().reference_scales();
        let s = ScaledParams {
            nc0,
            delta0_over_gp: d0,
            y_sq,
            gamma_over_gp: 7.6 / 5.8,
            ..Default::default()
        };
        let back = PhysicalParams::from_scaled(&s, &reference).unwrap().to_scaled().unwrap();
        prop_assert!((back.nc0 / nc0 - 1.0).abs() < 1e-12);
        prop_assert!((back.delta0_over_gp / d0 - 1.0).abs() < 1e-12);
        prop_assert!((back.y_sq / y_sq - 1.0).abs() < 1e-12);
        prop_assert!((back.gamma_over_gp - s.gamma_over_gp).abs() < 1e-12);
    }

    #[test]
    fn forward_map_commutes_with_global_phase(
        nc0 in 1.0f64..2000.0,
        d0 in 1.0f64..100.0,
        amp in 0.1f64..100.0,
        theta in 0.0f64..std::f64::consts::TAU,
        detuning in -20.0f64..20.0,
    ) {
        let s = params(nc0, d0, 6);
        let grid = VelocityGrid::uniform(d0, 12, 3.0);
        let x = C64::new(amp, 0.0);
        let rot = C64::from_polar(1.0, theta);
        let a = forward_map(x * rot, detuning, &s, &grid).unwrap();
        let b = forward_map(x, detuning, &s, &grid).unwrap() * rot;
        prop_assert!(close(a, b, 1e-10), "{a} vs {b}");
    }

    #[test]
    fn detuning_sign_flip_conjugates_the_map(
        nc0 in 1.0f64..2000.0,
        d0 in 1.0f64..100.0,
        re in -50.0f64..50.0,
        im in -50.0f64..50.0,
        detuning in -20.0f64..20.0,
    ) {
        let s = params(nc0, d0, 6);
        let grid = VelocityGrid::uniform(d0, 12, 3.0);
        let x = C64::new(re, im);
        let a = forward_map(x.conj(), -detuning, &s, &grid).unwrap();
        let b = forward_map(x, detuning, &s, &grid).unwrap().conj();
        prop_assert!(close(a, b, 1e-10), "{a} vs {b}");
    }

    #[test]
    fn atoms_only_absorb(
        nc0 in 0.1f64..5000.0,
        d0 in 0.5f64..200.0,
        amp in 1e-3f64..300.0,
        detuning in -30.0f64..30.0,
    ) {
        let s = params(nc0, d0, 8);
        let grid = VelocityGrid::uniform(d0, 16, 3.0);
        let x = C64::new(amp, 0.0);
        let y = forward_map(x, detuning, &s, &grid).unwrap();
        prop_assert!(y.norm() >= amp * (1.0 - 1e-12), "T = {}", (amp / y.norm()).powi(2));
    }

    #[test]
    fn newton_recovers_the_field_that_generated_the_drive(
        nc0 in 1.0f64..300.0,
        d0 in 5.0f64..100.0,
        amp in 0.1f64..50.0,
        detuning in -10.0f64..10.0,
    ) {
        // Thin or warm samples are single valued, so the solution is unique.
        let s = params(nc0, d0.max(nc0 / 8.0), 6);
        let grid = VelocityGrid::uniform(s.delta0_over_gp, 12, 3.0);
        let x = C64::new(amp, 0.0);
        let y = forward_map(x, detuning, &s, &grid).unwrap();
        let ss = newton_solve(y, detuning, &s, &grid, None).unwrap();
        prop_assert!(close(ss.x, x, 1e-6), "{} vs {x}", ss.x);
        prop_assert!(ss.transmission <= 1.0 + 1e-9);
    }
}
