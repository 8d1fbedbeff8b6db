use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use super::Matrix;

/// Orthogonal `(rows, cols)` matrix scaled by `gain`.
///
/// The smaller dimension is orthonormal: `W^T W = gain^2 I` when
/// `rows >= cols`, otherwise `W W^T = gain^2 I`. Draws a Gaussian matrix and
/// keeps the sign-corrected Q factor of its QR decomposition.
pub fn orthogonal_init<R: Rng + ?Sized>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Matrix {
    let (tall, short) = (rows.max(cols), rows.min(cols));
    let a = DMatrix::<f64>::from_fn(tall, short, |_, _| rng.sample(StandardNormal));
    let qr = a.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..short {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let mut out = Matrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            out[(i, j)] = gain * if rows >= cols { q[(i, j)] } else { q[(j, i)] };
        }
    }
    out
}
