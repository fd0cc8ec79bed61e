use std::f64::consts::PI;

use bloch_dos::decay::verify_gradient_with_step;
use bloch_dos::fibre::{assemble, count_below, eigenpair_near, group_velocity, solve_dense, spectrum};
use bloch_dos::ids::{Quadrature, QuadratureGrid};
use bloch_dos::lattice::Lattice;
use bloch_dos::potential::Potential;
use num_complex::Complex64;
use proptest::prelude::*;

fn lattice_2d() -> impl Strategy<Value = Lattice> {
    (0.5f64..3.0, -1.0f64..1.0, 0.5f64..3.0)
        .prop_filter_map("singular", |(a, b, c)| Lattice::from_row_major(&[a, 0.0, b, c]).ok())
}

/// Hermitian trigonometric polynomial with modes in `[-2, 2]^2`.
fn potential_on(lattice: Lattice) -> impl Strategy<Value = Potential> {
    prop::collection::vec(((-2i64..=2, -2i64..=2), -1.0f64..1.0, -1.0f64..1.0), 1..4).prop_map(move |modes| {
        let mut coeffs = std::collections::BTreeMap::new();
        for ((a, b), re, im) in modes {
            if (a, b) == (0, 0) {
                coeffs.insert(vec![0, 0], Complex64::new(re, 0.0));
                continue;
            }
            let c = Complex64::new(re, im);
            coeffs.insert(vec![a, b], c);
            coeffs.insert(vec![-a, -b], c.conj());
        }
        Potential::new(&lattice, coeffs).unwrap()
    })
}

fn lattice_and_potential() -> impl Strategy<Value = Potential> {
    lattice_2d().prop_flat_map(potential_on)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn decompose_reconstructs_and_lands_in_zone(l in lattice_2d(), x in -20.0f64..20.0, y in -20.0f64..20.0) {
        let dual = l.dual();
        let dec = dual.decompose(&[x, y]);
        let q = dual.brillouin_radius().value;
        for i in 0..2 {
            prop_assert!((dec.integer_part.cart[i] + dec.fractional_part[i] - [x, y][i]).abs() < 1e-9);
        }
        prop_assert!(dual.in_brillouin_zone(&dec.fractional_part, 1e-9));
        let r = dec.fractional_part.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!(r <= q * (1.0 + 1e-9));
    }

    #[test]
    fn ball_counts_are_monotone(l in lattice_2d(), r1 in 0.0f64..6.0, dr in 0.0f64..3.0) {
        let dual = l.dual();
        let small = dual.points_in_ball(r1, false);
        let big = dual.points_in_ball(r1 + dr, false);
        prop_assert!(small.len() <= big.len());
        for p in &small {
            prop_assert!(big.iter().any(|q| q.coords == p.coords));
        }
    }

    #[test]
    fn spectrum_is_periodic_in_k(v in lattice_and_potential(), a in -0.5f64..0.5, b in -0.5f64..0.5, m in (-2i64..=2, -2i64..=2)) {
        let dual = v.dual();
        let k: Vec<f64> = (0..2).map(|c| a * dual.basis()[(0, c)] + b * dual.basis()[(1, c)]).collect();
        let shift = dual.point(&[m.0, m.1]);
        let k2: Vec<f64> = k.iter().zip(&shift).map(|(x, s)| x + s).collect();
        // reach past the parallelepiped corner k sits in, whatever the scale
        let span: f64 = (0..2).map(|i| dual.basis().row(i).norm()).sum();
        let cutoff = span + 4.0;
        let e1 = spectrum(&assemble(&v, &k, cutoff).unwrap()).unwrap();
        let e2 = spectrum(&assemble(&v, &k2, cutoff).unwrap()).unwrap();
        prop_assert_eq!(e1.len(), e2.len());
        for (x, y) in e1.iter().zip(&e2) {
            prop_assert!((x - y).abs() < 1e-9 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn parseval(v in lattice_and_potential()) {
        // a 16-point rule per lattice direction is exact for modes up to 2
        let g = 16;
        let lattice = v.lattice();
        let mut mean = 0.0;
        for i in 0..g {
            for j in 0..g {
                let (s, t) = (i as f64 / g as f64, j as f64 / g as f64);
                let x: Vec<f64> = (0..2).map(|c| s * lattice.basis()[(0, c)] + t * lattice.basis()[(1, c)]).collect();
                mean += v.evaluate(&x).unwrap().powi(2);
            }
        }
        let integral = mean / (g * g) as f64 * v.cell_volume();
        let l2 = v.sobolev_seminorm(0.0).unwrap().powi(2);
        prop_assert!((integral - l2).abs() < 1e-9 * (1.0 + l2));
    }

    #[test]
    fn counts_are_monotone_in_lambda(v in lattice_and_potential(), k in (-0.3f64..0.3, -0.3f64..0.3), l1 in -5.0f64..40.0, dl in 0.0f64..20.0) {
        let m = assemble(&v, &[k.0, k.1], 8.0).unwrap();
        prop_assert!(count_below(&m, l1).unwrap() <= count_below(&m, l1 + dl).unwrap());
    }

    #[test]
    fn constant_shift_moves_counts(v in lattice_and_potential(), c in -3.0f64..3.0, lambda in 0.0f64..30.0) {
        let grid = QuadratureGrid::new(v.dual(), 4).unwrap();
        let shifted = v.shifted(c);
        let a = Quadrature::new(&shifted, &grid, 12.0).counts(&[lambda]).unwrap();
        let b = Quadrature::new(&v, &grid, 12.0).counts(&[lambda - c]).unwrap();
        prop_assert_eq!(a.totals, b.totals);
    }
}

#[test]
fn window_additivity() {
    let l = Lattice::cubic(2, 2.0 * PI).unwrap();
    let v = Potential::cosine_sum(&l, 1.0, &[0, 1]).unwrap();
    let grid = QuadratureGrid::new(v.dual(), 12).unwrap();
    let q = Quadrature::new(&v, &grid, 16.0);
    let (lambda, e1, e2) = (30.0, 1.25, 2.5);
    let t = q.counts(&[lambda, lambda + e1, lambda + e1 + e2]).unwrap().totals;
    let whole = q.window(lambda, e1 + e2).unwrap().window;
    let parts = q.window(lambda, e1).unwrap().window + q.window(lambda + e1, e2).unwrap().window;
    assert_eq!(t[2] - t[0], (t[1] - t[0]) + (t[2] - t[1]));
    assert!((whole - parts).abs() <= 4.0 * f64::EPSILON * whole.abs());
    assert!(whole > 0.0);
}

#[test]
fn free_ids_converges_with_grid() {
    let l = Lattice::cubic(2, 2.0 * PI).unwrap();
    let v = Potential::zero(&l);
    let exact = 30.0 / (4.0 * PI);
    let err = |g: usize| {
        let grid = QuadratureGrid::new(v.dual(), g).unwrap();
        (Quadrature::new(&v, &grid, 9.0).ids(30.0).unwrap().value - exact).abs()
    };
    assert!(err(64) < err(8));
    assert!(err(64) / exact < 0.01);
}

#[test]
fn mathieu_velocity_matches_finite_differences() {
    let l = Lattice::cubic(2, 2.0 * PI).unwrap();
    let v = Potential::cosine_sum(&l, 1.0, &[0]).unwrap();
    let k = [0.1, 0.0];
    let m = assemble(&v, &k, 10.0).unwrap();
    let step = 1e-5;
    let simple: Vec<f64> = solve_dense(&m)
        .unwrap()
        .into_iter()
        .filter(|s| s.gap > 0.1 && s.zeta < 30.0)
        .map(|s| s.zeta)
        .collect();
    assert!(simple.len() >= 3);
    for &target in &simple {
        let s = eigenpair_near(&m, target).unwrap();
        assert!(!s.degenerate);
        let hf = group_velocity(&s, m.basis()).unwrap();
        let plus = eigenpair_near(&assemble(&v, &[k[0] + step, 0.0], 10.0).unwrap(), s.zeta).unwrap();
        let minus = eigenpair_near(&assemble(&v, &[k[0] - step, 0.0], 10.0).unwrap(), s.zeta).unwrap();
        let fd = (plus.zeta - minus.zeta) / (2.0 * step);
        assert!((hf[0] - fd).abs() < 1e-4 * (1.0 + hf[0].abs()), "{target}: {hf:?} vs {fd}");
    }
    // the gradient check refuses energies below zeta_0
    assert!(verify_gradient_with_step(&v, &k, simple[0], 0.9, 10.0, 1e-5).is_err());
}
