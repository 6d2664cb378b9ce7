//! Matrix exponential by scaling and squaring with a degree-13 Padé approximant.

use ndarray_linalg::Inverse;

use super::{CMat, NumericsError, C64};

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

/// Matrix 1-norm (maximum absolute column sum).
fn one_norm(a: &CMat) -> f64 {
    let (m, n) = a.dim();
    (0..n)
        .map(|j| (0..m).map(|i| a[(i, j)].norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `exp(A)` for a square complex matrix.
pub fn matrix_exp(a: &CMat) -> Result<CMat, NumericsError> {
    let (m, n) = a.dim();
    if m != n {
        return Err(NumericsError::ShapeMismatch {
            expected: "square matrix".into(),
            found: format!("{m}x{n}"),
        });
    }
    // theta_13 from the standard scaling-and-squaring error analysis.
    let theta = 5.371920351148152;
    let norm = one_norm(a);
    let s = if norm > theta {
        (norm / theta).log2().ceil() as i32
    } else {
        0
    };
    let scaled = a.mapv(|z| z / C64::new(2f64.powi(s), 0.0));

    let eye = CMat::eye(n);
    let a2 = scaled.dot(&scaled);
    let a4 = a2.dot(&a2);
    let a6 = a2.dot(&a4);

    let b = &PADE13;
    let u_inner = a6.mapv(|z| z * b[13]) + a4.mapv(|z| z * b[11]) + a2.mapv(|z| z * b[9]);
    let u_poly = a6.dot(&u_inner)
        + a6.mapv(|z| z * b[7])
        + a4.mapv(|z| z * b[5])
        + a2.mapv(|z| z * b[3])
        + eye.mapv(|z| z * b[1]);
    let u = scaled.dot(&u_poly);
    let v_inner = a6.mapv(|z| z * b[12]) + a4.mapv(|z| z * b[10]) + a2.mapv(|z| z * b[8]);
    let v = a6.dot(&v_inner)
        + a6.mapv(|z| z * b[6])
        + a4.mapv(|z| z * b[4])
        + a2.mapv(|z| z * b[2])
        + eye.mapv(|z| z * b[0]);

    let denom = &v - &u;
    let numer = &v + &u;
    let denom_inv = denom.inv().map_err(|_| NumericsError::NoConvergence)?;
    let mut result = denom_inv.dot(&numer);
    for _ in 0..s {
        result = result.dot(&result);
    }
    Ok(result)
}
