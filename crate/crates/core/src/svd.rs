//! Singular values by one-sided (Hestenes) Jacobi rotation.
//!
//! The rows of the input are rotated pairwise until mutually orthogonal; the singular
//! values are then the row norms. Only the smaller of the two matrix dimensions is
//! orthogonalized, so an N x d matrix with N << d costs O(N^2 d) per sweep.

use thiserror::Error;

const MAX_SWEEPS: usize = 60;

#[derive(Debug, Error, PartialEq)]
#[error("jacobi SVD did not converge after {sweeps} sweeps")]
pub struct SvdError {
    pub sweeps: usize,
}

/// Singular values of a row-major `rows x cols` matrix, sorted descending.
pub fn singular_values(data: &[f64], rows: usize, cols: usize) -> Result<Vec<f64>, SvdError> {
    assert_eq!(data.len(), rows * cols, "matrix buffer does not match its shape");
    if rows == 0 || cols == 0 {
        return Ok(Vec::new());
    }

    // Work on whichever orientation has fewer vectors.
    let (n, len, mut vecs) = if rows <= cols {
        (rows, cols, data.to_vec())
    } else {
        let mut t = vec![0.0; data.len()];
        for r in 0..rows {
            for c in 0..cols {
                t[c * rows + r] = data[r * cols + c];
            }
        }
        (cols, rows, t)
    };

    let eps = f64::EPSILON;
    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (alpha, beta, gamma) = {
                    let a = &vecs[p * len..(p + 1) * len];
                    let b = &vecs[q * len..(q + 1) * len];
                    let mut alpha = 0.0;
                    let mut beta = 0.0;
                    let mut gamma = 0.0;
                    for (x, y) in a.iter().zip(b) {
                        alpha += x * x;
                        beta += y * y;
                        gamma += x * y;
                    }
                    (alpha, beta, gamma)
                };
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                if gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (head, tail) = vecs.split_at_mut(q * len);
                let a = &mut head[p * len..(p + 1) * len];
                let b = &mut tail[..len];
                for (x, y) in a.iter_mut().zip(b.iter_mut()) {
                    let xv = *x;
                    let yv = *y;
                    *x = c * xv - s * yv;
                    *y = s * xv + c * yv;
                }
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(SvdError { sweeps: MAX_SWEEPS });
    }

    let mut sv: Vec<f64> = vecs.chunks_exact(len).map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    Ok(sv)
}
