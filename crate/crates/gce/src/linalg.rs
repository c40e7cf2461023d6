//! Minimal dense linear algebra for the small systems this crate solves:
//! symmetric positive-definite solves up to a few dozen unknowns (model
//! fitting normal equations) and 2x2 sandwich/quadratic forms (variance
//! assembly). Matrices are row-major `Vec<f64>` or fixed `[[f64; 2]; 2]`;
//! nothing here is meant for large n.

/// Row-major symmetric positive-definite solve of `a * x = b` via Cholesky.
///
/// Consumes `a` (factored in place). Returns `None` when a pivot is not
/// strictly positive, i.e. the matrix is not numerically positive definite;
/// callers decide whether to ridge and retry.
pub fn solve_spd(mut a: Vec<f64>, b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    debug_assert_eq!(a.len(), n * n);
    // Lower Cholesky factor L with a[i*n+j] = L[i][j] for j <= i.
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in (j + 1)..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    // Forward solve L y = b.
    let mut x = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            x[i] -= a[i * n + k] * x[k];
        }
        x[i] /= a[i * n + i];
    }
    // Back solve L^T x = y.
    for i in (0..n).rev() {
        for k in (i + 1)..n {
            x[i] -= a[k * n + i] * x[k];
        }
        x[i] /= a[i * n + i];
    }
    Some(x)
}

/// Add `ridge` to the diagonal of a row-major n x n matrix.
pub fn add_ridge(a: &mut [f64], n: usize, ridge: f64) {
    for i in 0..n {
        a[i * n + i] += ridge;
    }
}

/// 2x2 matrix, row major.
pub type Mat2 = [[f64; 2]; 2];

/// Inverse of a 2x2 matrix; `None` when the determinant is zero or not finite.
pub fn inv2(m: &Mat2) -> Option<Mat2> {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if det == 0.0 || !det.is_finite() {
        return None;
    }
    Some([
        [m[1][1] / det, -m[0][1] / det],
        [-m[1][0] / det, m[0][0] / det],
    ])
}

/// Matrix product of two 2x2 matrices.
pub fn mul2(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut out = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

/// Sandwich form `B^-1 * S * B^-T`; `None` when `B` is singular.
pub fn sandwich2(b: &Mat2, s: &Mat2) -> Option<Mat2> {
    let binv = inv2(b)?;
    let binv_t = [[binv[0][0], binv[1][0]], [binv[0][1], binv[1][1]]];
    Some(mul2(&mul2(&binv, s), &binv_t))
}

/// Quadratic form `g^T * v * g` for a 2-vector gradient.
pub fn quad2(g: [f64; 2], v: &Mat2) -> f64 {
    g[0] * g[0] * v[0][0] + g[0] * g[1] * (v[0][1] + v[1][0]) + g[1] * g[1] * v[1][1]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn spd_solve_recovers_known_solution() {
        // a = L L^T with L = [[2,0,0],[1,3,0],[0.5,-1,1.5]]; x = (1,-2,3).
        let l = [[2.0, 0.0, 0.0], [1.0, 3.0, 0.0], [0.5, -1.0, 1.5]];
        let mut a = vec![0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    a[i * 3 + j] += l[i][k] * l[j][k];
                }
            }
        }
        let x_true = [1.0, -2.0, 3.0];
        let mut b = [0.0; 3];
        for i in 0..3 {
            for j in 0..3 {
                b[i] += a[i * 3 + j] * x_true[j];
            }
        }
        let x = solve_spd(a, &b).unwrap();
        for i in 0..3 {
            assert_relative_eq!(x[i], x_true[i], max_relative = 1e-12);
        }
    }

    #[test]
    fn spd_solve_rejects_indefinite() {
        let a = vec![1.0, 2.0, 2.0, 1.0]; // eigenvalues 3, -1
        assert!(solve_spd(a, &[1.0, 1.0]).is_none());
    }

    #[test]
    fn ridge_restores_solvability() {
        let mut a = vec![1.0, 1.0, 1.0, 1.0]; // rank 1
        assert!(solve_spd(a.clone(), &[1.0, 1.0]).is_none());
        add_ridge(&mut a, 2, 1e-8);
        assert!(solve_spd(a, &[1.0, 1.0]).is_some());
    }

    #[test]
    fn inv2_and_sandwich_match_direct_computation() {
        let b: Mat2 = [[2.0, 0.5], [-1.0, 3.0]];
        let s: Mat2 = [[1.0, 0.2], [0.2, 2.0]];
        let v = sandwich2(&b, &s).unwrap();
        // Check B v B^T = S.
        let bt = [[b[0][0], b[1][0]], [b[0][1], b[1][1]]];
        let back = mul2(&mul2(&b, &v), &bt);
        for i in 0..2 {
            for j in 0..2 {
                assert_relative_eq!(back[i][j], s[i][j], max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn quad2_expands_correctly() {
        let v: Mat2 = [[2.0, 0.5], [0.5, 1.0]];
        let g = [3.0, -1.0];
        assert_relative_eq!(quad2(g, &v), 18.0 - 3.0 + 1.0, max_relative = 1e-15);
    }
}
