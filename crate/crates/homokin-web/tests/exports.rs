use homokin_web::{kernel_curve_values, oscillator_curve_values, toy_profile_values};

#[test]
fn kernel_curve_starts_at_the_variance() {
    let v = kernel_curve_values(0.5, false, 5.0, 100).unwrap();
    assert_eq!(v.len(), 202);
    assert_eq!(v[0], 0.0);
    assert!((v[101] - 0.125).abs() < 1e-12);
    // Two-valued {1, 3}: K(τ) = e^{-2τ}.
    let w = kernel_curve_values(1.0, true, 2.0, 50).unwrap();
    for j in 0..=50 {
        assert!((w[51 + j] - (-2.0 * w[j]).exp()).abs() < 1e-12);
    }
}

#[test]
fn toy_profiles_layout() {
    let v = toy_profile_values(1, false, 0.1, 1.0).unwrap();
    let (n, m) = (v[0] as usize, v[1] as usize);
    assert_eq!(v.len(), 2 + 2 * n + 2 * m);
    assert!(v[2 + n..2 + 2 * n].iter().all(|x| x.is_finite() && *x >= 0.0));
}

#[test]
fn oscillator_curves_follow_the_average() {
    let steps = 400;
    let v = oscillator_curve_values(1.0, 3.0, 4.0, steps).unwrap();
    let n = steps + 1;
    assert_eq!(v.len(), 5 * n);
    for j in 0..n {
        assert!((v[n + j] - v[3 * n + j]).abs() < 1e-3);
        assert!((v[2 * n + j] - v[4 * n + j]).abs() < 1e-3);
    }
}

#[test]
fn bad_inputs_are_errors() {
    assert!(kernel_curve_values(3.0, false, 1.0, 10).is_err());
    assert!(toy_profile_values(1, false, 0.001, 1.0).is_err());
    assert!(toy_profile_values(9, false, 0.1, 1.0).is_err());
    assert!(oscillator_curve_values(1.0, 3.0, 1.0, 0).is_err());
}
