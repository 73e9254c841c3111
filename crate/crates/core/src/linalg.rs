//! Dense solves for the tiny (n ≤ 8) systems that arise from frames.

use crate::{Error, Result};

/// Condition-number ceiling above which a frame point is rejected.
pub const COND_LIMIT: f64 = 1e8;

/// LU factorization with partial pivoting of a row-major n×n matrix.
pub struct Lu {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
    norm_inf: f64,
}

impl Lu {
    pub fn factor(a: &[f64], n: usize) -> Result<Lu> {
        assert_eq!(a.len(), n * n);
        let norm_inf = (0..n)
            .map(|i| (0..n).map(|j| a[i * n + j].abs()).sum::<f64>())
            .fold(0.0, f64::max);
        let mut lu = a.to_vec();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let mut p = k;
            let mut best = lu[perm[k] * n + k].abs();
            for r in (k + 1)..n {
                let v = lu[perm[r] * n + k].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best == 0.0 {
                return Err(Error::IllConditioned { cond: f64::INFINITY });
            }
            perm.swap(k, p);
            let pivot = lu[perm[k] * n + k];
            for r in (k + 1)..n {
                let factor = lu[perm[r] * n + k] / pivot;
                lu[perm[r] * n + k] = factor;
                for c in (k + 1)..n {
                    lu[perm[r] * n + c] -= factor * lu[perm[k] * n + c];
                }
            }
        }
        Ok(Lu {
            n,
            lu,
            perm,
            norm_inf,
        })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut s = b[self.perm[i]];
            for j in 0..i {
                s -= self.lu[self.perm[i] * n + j] * y[j];
            }
            y[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for j in (i + 1)..n {
                s -= self.lu[self.perm[i] * n + j] * y[j];
            }
            y[i] = s / self.lu[self.perm[i] * n + i];
        }
        y
    }

    /// ‖A‖∞ · ‖A⁻¹‖∞, with the inverse built column by column.
    pub fn cond_inf(&self) -> f64 {
        let n = self.n;
        let mut inv_norm = 0.0f64;
        let mut row_sums = vec![0.0f64; n];
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            let col = self.solve(&e);
            e[j] = 0.0;
            for (i, v) in col.iter().enumerate() {
                row_sums[i] += v.abs();
            }
        }
        for s in row_sums {
            inv_norm = inv_norm.max(s);
        }
        self.norm_inf * inv_norm
    }
}

/// Solves `A x = b`, rejecting matrices with condition number above
/// [`COND_LIMIT`].
pub fn solve_checked(a: &[f64], b: &[f64], n: usize) -> Result<Vec<f64>> {
    let lu = Lu::factor(a, n)?;
    let cond = lu.cond_inf();
    if !cond.is_finite() || cond > COND_LIMIT {
        return Err(Error::IllConditioned { cond });
    }
    Ok(lu.solve(b))
}

/// Condition estimate alone (used to validate frames at a point).
pub fn cond_inf(a: &[f64], n: usize) -> f64 {
    match Lu::factor(a, n) {
        Ok(lu) => lu.cond_inf(),
        Err(_) => f64::INFINITY,
    }
}
