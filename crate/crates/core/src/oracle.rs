//! Independent reference computations for the self-check suite and tests.
//!
//! Nothing here shares a code path with the implementations it checks: the
//! Hankel fit goes through an explicit design matrix and a pivoted dense
//! solve rather than anti-diagonal bookkeeping.

use ndarray::{Array2, ArrayView2};

/// Solve `A·x = b` for a small dense system by Gaussian elimination with
/// partial pivoting. Returns `None` if the system is singular.
#[allow(clippy::needless_range_loop)]
pub fn solve_dense(a: &Array2<f64>, b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    assert_eq!(a.dim(), (n, n));
    let mut m = vec![vec![0.0f64; n + 1]; n];
    for i in 0..n {
        for j in 0..n {
            m[i][j] = a[[i, j]];
        }
        m[i][n] = b[i];
    }
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| {
            m[i][col].abs().partial_cmp(&m[j][col].abs()).unwrap()
        })?;
        if m[pivot][col].abs() < 1e-12 {
            return None;
        }
        m.swap(col, pivot);
        for row in col + 1..n {
            let factor = m[row][col] / m[col][col];
            for k in col..=n {
                m[row][k] -= factor * m[col][k];
            }
        }
    }
    let mut x = vec![0.0f64; n];
    for row in (0..n).rev() {
        let mut acc = m[row][n];
        for k in row + 1..n {
            acc -= m[row][k] * x[k];
        }
        x[row] = acc / m[row][row];
    }
    Some(x)
}

/// Least-squares Hankel fit of a square block: minimize `‖B − H(g)‖_F` over
/// all sequence vectors `g` by solving the normal equations `AᵀA·g = Aᵀ·b`
/// for the explicit design matrix `A` that maps `g` to `vec(H(g))`.
///
/// Returns the optimal `g` and the achieved Frobenius error.
pub fn hankel_least_squares(block: &ArrayView2<f64>) -> (Vec<f64>, f64) {
    let (rows, cols) = block.dim();
    assert_eq!(rows, cols, "Hankel fit expects a square block");
    let l = rows;
    let g_len = 2 * l - 1;
    // Design matrix: row per matrix cell, column per sequence entry.
    let mut design = Array2::zeros((l * l, g_len));
    let mut target = vec![0.0f64; l * l];
    for i in 0..l {
        for j in 0..l {
            design[[i * l + j, i + j]] = 1.0;
            target[i * l + j] = block[[i, j]];
        }
    }
    let mut ata = Array2::zeros((g_len, g_len));
    let mut atb = vec![0.0f64; g_len];
    for r in 0..l * l {
        for c1 in 0..g_len {
            if design[[r, c1]] == 0.0 {
                continue;
            }
            atb[c1] += design[[r, c1]] * target[r];
            for c2 in 0..g_len {
                ata[[c1, c2]] += design[[r, c1]] * design[[r, c2]];
            }
        }
    }
    let g = solve_dense(&ata, &atb).expect("normal equations are nonsingular");
    let mut err_sq = 0.0;
    for i in 0..l {
        for j in 0..l {
            let d = block[[i, j]] - g[i + j];
            err_sq += d * d;
        }
    }
    (g, err_sq.sqrt())
}

/// Frobenius distance between a block and the Hankel matrix defined by `g`.
pub fn hankel_fit_error(block: &ArrayView2<f64>, g: &[f64]) -> f64 {
    let (rows, cols) = block.dim();
    assert_eq!(rows, cols);
    assert_eq!(g.len(), 2 * rows - 1);
    let mut err_sq = 0.0;
    for i in 0..rows {
        for j in 0..cols {
            let d = block[[i, j]] - g[i + j];
            err_sq += d * d;
        }
    }
    err_sq.sqrt()
}
