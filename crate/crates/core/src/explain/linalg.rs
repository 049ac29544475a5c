use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Minimizes `sum_i w_i (y_i - z_i . beta)^2 + ridge * sum_{j in penalized} beta_j^2`
/// through the Cholesky factor of the normal equations. A singular system is
/// retried once with the ridge raised to `max(10 ridge, 1e-8 trace)`.
pub fn weighted_ridge(z: &[Vec<f64>], y: &[f64], w: &[f64], ridge: f64, penalized: &[bool]) -> Result<Vec<f64>> {
    let p = penalized.len();
    let mut a = DMatrix::<f64>::zeros(p, p);
    let mut b = DVector::<f64>::zeros(p);
    for ((zi, &yi), &wi) in z.iter().zip(y).zip(w) {
        for r in 0..p {
            let wz = wi * zi[r];
            b[r] += wz * yi;
            for c in r..p {
                a[(r, c)] += wz * zi[c];
            }
        }
    }
    for r in 0..p {
        for c in 0..r {
            a[(r, c)] = a[(c, r)];
        }
    }
    let solve = |lambda: f64| {
        let mut m = a.clone();
        for (j, &pen) in penalized.iter().enumerate() {
            if pen {
                m[(j, j)] += lambda;
            }
        }
        m.cholesky().map(|c| c.solve(&b))
    };
    let trace: f64 = (0..p).map(|j| a[(j, j)]).sum();
    let beta = solve(ridge).or_else(|| solve((10.0 * ridge).max(1e-8 * trace.max(1.0)))).ok_or(Error::Singular)?;
    if beta.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular);
    }
    Ok(beta.iter().copied().collect())
}
