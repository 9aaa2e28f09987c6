use nalgebra::DMatrix;

use super::{check_finite, check_square, Matrix};
use crate::error::Result;

/// Numerator coefficients of the [13/13] Padé approximant of `exp`.
const PADE13: [f64; 14] = [
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

/// The scaled matrix always satisfies `‖M‖₁ / 2^s <= SCALED_NORM`.
const SCALED_NORM: f64 = 0.5;

pub(crate) fn one_norm(m: &Matrix) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Matrix exponential by scaling and squaring around a degree-13 Padé core.
pub fn expm(m: &Matrix) -> Result<Matrix> {
    check_square(m, "expm")?;
    check_finite(m, "expm input")?;
    Ok(expm_unchecked(m))
}

pub(crate) fn expm_unchecked(m: &Matrix) -> Matrix {
    let n = m.nrows();
    let norm = one_norm(m);
    let squarings = if norm > SCALED_NORM {
        (norm / SCALED_NORM).log2().ceil().max(0.0) as i32
    } else {
        0
    };
    let a = m * 2f64.powi(-squarings);
    let ident = DMatrix::<f64>::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let b = &PADE13;

    let u_high = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9]);
    let u = &a * (u_high + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &ident * b[1]);
    let v_high = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8]);
    let v = v_high + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &ident * b[0];

    let numer = &v + &u;
    let denom = &v - &u;
    // The denominator of the diagonal Padé approximant is nonsingular for ‖A‖ <= 0.5.
    let mut r = denom
        .lu()
        .solve(&numer)
        .expect("Padé denominator is nonsingular for the scaled argument");
    for _ in 0..squarings {
        r = &r * &r;
    }
    r
}

/// Exponential of the block matrix `[[x, e], [0, x]]`, returning
/// `(exp(x), L(x, e))` where `L` is the Fréchet derivative of `exp` at `x`
/// in direction `e`.
pub(crate) fn expm_frechet_block(x: &Matrix, e: &Matrix) -> (Matrix, Matrix) {
    let d = x.nrows();
    let mut big = DMatrix::<f64>::zeros(2 * d, 2 * d);
    big.view_mut((0, 0), (d, d)).copy_from(x);
    big.view_mut((d, d), (d, d)).copy_from(x);
    big.view_mut((0, d), (d, d)).copy_from(e);
    let full = expm_unchecked(&big);
    (
        full.view((0, 0), (d, d)).into_owned(),
        full.view((0, d), (d, d)).into_owned(),
    )
}
