//! Dense matrix exponential by scaling and squaring with a degree-13 Padé
//! approximant.

use nalgebra::DMatrix;

const B13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

// Largest 1-norm for which the unscaled [13/13] approximant meets double
// precision backward error.
const THETA13: f64 = 5.371920351148152;

fn one_norm(a: &DMatrix<f64>) -> f64 {
    a.column_iter().map(|c| c.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// `exp(a)` for a square matrix.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    assert!(a.is_square(), "expm needs a square matrix");
    let n = a.nrows();
    if n == 0 {
        return a.clone();
    }
    let norm = one_norm(a);
    let s = if norm > THETA13 { (norm / THETA13).log2().ceil() as i32 } else { 0 };
    let a = if s > 0 { a * 2f64.powi(-s) } else { a.clone() };

    let ident = DMatrix::<f64>::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;

    let u_inner = &a6 * (&a6 * B13[13] + &a4 * B13[11] + &a2 * B13[9]);
    let u = &a * (u_inner + &a6 * B13[7] + &a4 * B13[5] + &a2 * B13[3] + &ident * B13[1]);
    let v_inner = &a6 * (&a6 * B13[12] + &a4 * B13[10] + &a2 * B13[8]);
    let v = v_inner + &a6 * B13[6] + &a4 * B13[4] + &a2 * B13[2] + &ident * B13[0];

    let p = &v + &u;
    let q = &v - &u;
    let mut r = q.lu().solve(&p).expect("Padé denominator is nonsingular for scaled input");
    for _ in 0..s {
        r = &r * &r;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_matrix() {
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![-1.0, 0.0, 2.5, -30.0]));
        let e = expm(&a);
        for (i, d) in [-1.0f64, 0.0, 2.5, -30.0].iter().enumerate() {
            assert!((e[(i, i)] - d.exp()).abs() <= 1e-13 * d.exp().max(1.0));
        }
        assert_eq!(e[(0, 1)], 0.0);
    }

    #[test]
    fn rotation_generator() {
        let t = 7.3;
        let a = DMatrix::from_row_slice(2, 2, &[0.0, t, -t, 0.0]);
        let e = expm(&a);
        assert!((e[(0, 0)] - t.cos()).abs() < 1e-13);
        assert!((e[(0, 1)] - t.sin()).abs() < 1e-13);
        assert!((e[(1, 0)] + t.sin()).abs() < 1e-13);
    }

    #[test]
    fn nilpotent_jordan_block() {
        let a = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        let e = expm(&a);
        let expect = DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 0.5, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0]);
        assert!((e - expect).abs().max() < 1e-15);
    }
}
