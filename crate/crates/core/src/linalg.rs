//! Dense Gaussian elimination for the 3x3 and 4x4 centerline systems.

use crate::error::{Error, Result};

/// Condition-number ceiling (equilibrated 1-norm) above which a system is
/// treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
pub fn solve<const N: usize>(a: &[[f64; N]; N], b: &[f64; N]) -> Result<[f64; N]> {
    let mut m = *a;
    let mut x = *b;
    for col in 0..N {
        let pivot = (col..N)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .unwrap_or(col);
        if m[pivot][col] == 0.0 || !m[pivot][col].is_finite() {
            return Err(Error::DegenerateState(format!("zero pivot in column {col}")));
        }
        m.swap(col, pivot);
        x.swap(col, pivot);
        for row in col + 1..N {
            let f = m[row][col] / m[col][col];
            if f == 0.0 {
                continue;
            }
            for k in col..N {
                m[row][k] -= f * m[col][k];
            }
            x[row] -= f * x[col];
        }
    }
    for row in (0..N).rev() {
        let mut acc = x[row];
        for k in row + 1..N {
            acc -= m[row][k] * x[k];
        }
        x[row] = acc / m[row][row];
    }
    Ok(x)
}

fn norm1<const N: usize>(a: &[[f64; N]; N]) -> f64 {
    (0..N).map(|j| (0..N).map(|i| a[i][j].abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// 1-norm condition number of `a` after row and column equilibration, which
/// makes the estimate independent of the physical units of each row/unknown.
pub fn condition_estimate<const N: usize>(a: &[[f64; N]; N]) -> Result<f64> {
    let mut m = *a;
    for row in m.iter_mut() {
        let s = row.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        if s == 0.0 {
            return Ok(f64::INFINITY);
        }
        row.iter_mut().for_each(|v| *v /= s);
    }
    for j in 0..N {
        let s = (0..N).fold(0.0f64, |acc, i| acc.max(m[i][j].abs()));
        if s == 0.0 {
            return Ok(f64::INFINITY);
        }
        (0..N).for_each(|i| m[i][j] /= s);
    }
    let mut inv = [[0.0; N]; N];
    for j in 0..N {
        let mut e = [0.0; N];
        e[j] = 1.0;
        let col = match solve(&m, &e) {
            Ok(c) => c,
            Err(_) => return Ok(f64::INFINITY),
        };
        for i in 0..N {
            inv[i][j] = col[i];
        }
    }
    Ok(norm1(&m) * norm1(&inv))
}

/// Solves the system after rejecting ill-conditioned matrices.
pub fn solve_checked<const N: usize>(a: &[[f64; N]; N], b: &[f64; N]) -> Result<[f64; N]> {
    let cond = condition_estimate(a)?;
    if !(cond <= MAX_CONDITION) {
        return Err(Error::DegenerateState(format!("condition estimate {cond:.3e}")));
    }
    solve(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn needs_pivoting() {
        let a = [[0.0, 1.0, 2.0], [1.0, 0.0, 3.0], [4.0, -3.0, 8.0]];
        let b = [5.0, 7.0, 14.0];
        let x = solve(&a, &b).unwrap();
        for i in 0..3 {
            let r: f64 = (0..3).map(|j| a[i][j] * x[j]).sum::<f64>() - b[i];
            assert!(r.abs() < 1e-12);
        }
    }

    #[test]
    fn singular_rejected() {
        let a = [[1.0, 2.0], [2.0, 4.0]];
        assert!(solve_checked(&a, &[1.0, 2.0]).is_err());
        let near = [[1.0, 2.0], [1.0, 2.0 + 1e-14]];
        assert!(solve_checked(&near, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn condition_ignores_units() {
        let a = [[1e-6, 0.0], [0.0, 1e6]];
        assert!(condition_estimate(&a).unwrap() < 1.0 + 1e-12);
    }

    proptest! {
        #[test]
        fn residual_small(v in proptest::collection::vec(-1.0f64..1.0, 20)) {
            let mut a = [[0.0; 4]; 4];
            for i in 0..4 {
                for j in 0..4 {
                    a[i][j] = v[4 * i + j];
                }
                a[i][i] += 4.0;
            }
            let b = [v[16], v[17], v[18], v[19]];
            let x = solve_checked(&a, &b).unwrap();
            for i in 0..4 {
                let r: f64 = (0..4).map(|j| a[i][j] * x[j]).sum::<f64>() - b[i];
                prop_assert!(r.abs() < 1e-12);
            }
        }
    }
}
