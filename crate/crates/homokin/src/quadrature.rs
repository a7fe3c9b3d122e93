//! One-dimensional quadrature rules and Legendre polynomials.

use std::f64::consts::PI;

/// Gauss–Legendre nodes and weights on [-1, 1], nodes ascending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "gauss_legendre needs at least one node");
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi initial guess, then Newton on P_n.
        let mut z = ((i as f64 + 0.75) / (n as f64 + 0.5) * PI).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, z);
        dp = if d != 0.0 { d } else { dp };
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

fn legendre_with_derivative(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// Composite Gauss–Legendre rule on [a, b] with `panels` equal panels of
/// `per_panel` nodes each. Jumps of the integrand placed on panel boundaries
/// are integrated without loss of order.
pub fn composite_gauss(a: f64, b: f64, panels: usize, per_panel: usize) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(per_panel);
    let width = (b - a) / panels as f64;
    let mut nodes = Vec::with_capacity(panels * per_panel);
    let mut weights = Vec::with_capacity(panels * per_panel);
    for p in 0..panels {
        let lo = a + p as f64 * width;
        for (xi, wi) in x.iter().zip(&w) {
            nodes.push(lo + 0.5 * width * (xi + 1.0));
            weights.push(0.5 * width * wi);
        }
    }
    (nodes, weights)
}

/// Cell-centred midpoint mesh with `n` cells on [a, b].
pub fn midpoint_mesh(a: f64, b: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
    let h = (b - a) / n as f64;
    let nodes = (0..n).map(|i| a + (i as f64 + 0.5) * h).collect();
    (nodes, vec![h; n])
}

/// Values of the shifted Legendre polynomials `ℓ_0..ℓ_{count-1}` at `x`,
/// orthonormal on (a, b).
pub fn orthonormal_legendre(count: usize, x: f64, a: f64, b: f64) -> Vec<f64> {
    let z = (2.0 * x - a - b) / (b - a);
    let mut out = Vec::with_capacity(count);
    let (mut p0, mut p1) = (1.0, z);
    for k in 0..count {
        let pk = match k {
            0 => 1.0,
            1 => z,
            _ => {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
                p2
            }
        };
        out.push(pk * ((2 * k + 1) as f64 / (b - a)).sqrt());
    }
    out
}

/// Trapezoid rule on a uniform grid.
pub fn trapezoid(values: &[f64], dt: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => dt * (0.5 * values[0] + values[1..n - 1].iter().sum::<f64>() + 0.5 * values[n - 1]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_integrates_polynomials_exactly() {
        let (x, w) = gauss_legendre(8);
        for deg in 0..16 {
            let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg)).sum();
            let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
            assert!((q - exact).abs() < 1e-14, "degree {deg}: {q} vs {exact}");
        }
    }

    #[test]
    fn gauss_odd_count_has_zero_node() {
        let (x, w) = gauss_legendre(5);
        assert_eq!(x[2], 0.0);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn composite_rule_handles_panel_jump() {
        let (x, w) = composite_gauss(0.0, 1.0, 2, 4);
        let q: f64 = x.iter().zip(&w).map(|(x, w)| w * if *x <= 0.5 { 2.0 } else { 1.0 }).sum();
        assert!((q - 1.5).abs() < 1e-15);
    }

    #[test]
    fn legendre_orthonormal_under_gauss() {
        let (x, w) = composite_gauss(0.25, 1.0, 1, 12);
        for j in 0..8 {
            for k in 0..8 {
                let ip: f64 = x
                    .iter()
                    .zip(&w)
                    .map(|(x, w)| {
                        let l = orthonormal_legendre(8, *x, 0.25, 1.0);
                        w * l[j] * l[k]
                    })
                    .sum();
                let expect = if j == k { 1.0 } else { 0.0 };
                assert!((ip - expect).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn trapezoid_exact_for_linear() {
        let v: Vec<f64> = (0..=10).map(|i| 3.0 * i as f64 * 0.1 + 1.0).collect();
        assert!((trapezoid(&v, 0.1) - 2.5).abs() < 1e-14);
    }
}
