//! Structure functions of an anholonomic frame and the operators built on
//! them: the curvature commutator `F_ij = [D_i, D_j]`, Qsu contractions,
//! generalized forces, and the u/t tensors with their reciprocal relations.

use crate::expr::ScalarExpr;
use crate::linalg;
use crate::manifold::PoissonWManifold;
use crate::num::{seed, Dual, Num};
use crate::Result;

/// Structure functions `c_ij^k` of the frame at a point:
/// `[E_i, E_j] = c_ij^k E_k`.
#[derive(Clone, Debug)]
pub struct StructureFunctions {
    n: usize,
    /// `c[(i*n + j)*n + k] = c_ij^k`; antisymmetric in (i,j) by construction.
    pub c: Vec<f64>,
    /// Frame condition number at the point.
    pub cond: f64,
}

impl StructureFunctions {
    pub fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.c[(i * self.n + j) * self.n + k]
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn max_abs(&self) -> f64 {
        self.c.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Computes the structure functions by forming the frame commutators with
/// first-order jets and solving `e(x)ᵀ c_ij = [E_i, E_j](x)` for each pair
/// i < j; the antisymmetric counterpart is mirrored exactly.
pub fn structure_functions(m: &PoissonWManifold, x: &[f64]) -> Result<StructureFunctions> {
    let n = m.dim();
    if !m.has_frame() {
        return Ok(StructureFunctions {
            n,
            c: vec![0.0; n * n * n],
            cond: 1.0,
        });
    }
    let e0 = m.frame_at(x)?;
    let cond = linalg::cond_inf(&e0, n);

    // frame entries with coordinate gradients
    let ej = m.frame_at(&seed(x))?;
    // commutator components [E_i,E_j]^b = e_i^a ∂_a e_j^b − e_j^a ∂_a e_i^b
    let comm = |i: usize, j: usize, b: usize| -> f64 {
        let mut s = 0.0;
        for a in 0..n {
            s += ej[i * n + a].re * ej[j * n + b].eps[a] - ej[j * n + a].re * ej[i * n + b].eps[a];
        }
        s
    };

    // e(x)ᵀ as the solve matrix: column k holds the components of E_k.
    let mut mat = vec![0.0; n * n];
    for b in 0..n {
        for k in 0..n {
            mat[b * n + k] = e0[k * n + b];
        }
    }

    let mut c = vec![0.0; n * n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let rhs: Vec<f64> = (0..n).map(|b| comm(i, j, b)).collect();
            let cij = linalg::solve_checked(&mat, &rhs, n)?;
            for k in 0..n {
                c[(i * n + j) * n + k] = cij[k];
                c[(j * n + i) * n + k] = -cij[k];
            }
        }
    }
    Ok(StructureFunctions { n, c, cond })
}

/// Max over (i,j,k,s) of the algebraic Jacobi sum
/// `|c_ij^r c_rk^s + c_jk^r c_ri^s + c_ki^r c_rj^s|`.
///
/// Exact for structure constants; for genuine structure functions the
/// derivative terms missing from the algebraic sum show up here, so the
/// number is diagnostic rather than asserted.
pub fn lemma1_jacobi_residual(m: &PoissonWManifold, x: &[f64]) -> Result<f64> {
    let sf = structure_functions(m, x)?;
    let n = sf.dim();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                for s in 0..n {
                    let mut cyc = 0.0;
                    for r in 0..n {
                        cyc += sf.at(i, j, r) * sf.at(r, k, s)
                            + sf.at(j, k, r) * sf.at(r, i, s)
                            + sf.at(k, i, r) * sf.at(r, j, s);
                    }
                    worst = worst.max(cyc.abs());
                }
            }
        }
    }
    Ok(worst)
}

/// Both routes through the curvature operator applied to `g`:
/// the literal commutator `(D_i D_j - D_j D_i) g` via nested jets, and the
/// structure form `c_ij^k D_k g`. The two agree whenever the structural
/// derivative is the frame gradient of χ.
pub fn curvature_apply(
    m: &PoissonWManifold,
    i: usize,
    j: usize,
    g: &ScalarExpr,
    x: &[f64],
) -> Result<(f64, f64)> {
    let commutator = curvature_commutator(m, i, j, g, x)?;
    let sf = structure_functions(m, x)?;
    let dg = m.covariant_d(g, x)?;
    let structural = (0..m.dim()).map(|k| sf.at(i, j, k) * dg[k]).sum();
    Ok((commutator, structural))
}

/// Literal commutator `(D_i (D_j g) - D_j (D_i g))(x)`.
pub fn curvature_commutator(
    m: &PoissonWManifold,
    i: usize,
    j: usize,
    g: &ScalarExpr,
    x: &[f64],
) -> Result<f64> {
    let d_i_d_j = m.covariant_d_of(x, |y: &[Dual<f64>]| Ok(m.covariant_d_t(g, y)?.remove(j)))?[i];
    let d_j_d_i = m.covariant_d_of(x, |y: &[Dual<f64>]| Ok(m.covariant_d_t(g, y)?.remove(i)))?[j];
    Ok(d_i_d_j - d_j_d_i)
}

/// Qsu contraction `q_i g = w_i^k D_k g` with `w_i^k = v^j c_ij^k`.
pub fn qsu(m: &PoissonWManifold, v: &[f64], i: usize, g: &ScalarExpr, x: &[f64]) -> Result<f64> {
    let sf = structure_functions(m, x)?;
    let dg = m.covariant_d(g, x)?;
    let n = m.dim();
    let mut s = 0.0;
    for k in 0..n {
        let w_ik: f64 = (0..n).map(|j| v[j] * sf.at(i, j, k)).sum();
        s += w_ik * dg[k];
    }
    Ok(s)
}

/// Force field components `F_k = -D_k H`.
pub fn force_t<T: Num>(m: &PoissonWManifold, h: &ScalarExpr, x: &[T]) -> Result<Vec<T>> {
    Ok(m.covariant_d_t(h, x)?.into_iter().map(|d| -d).collect())
}

pub fn force(m: &PoissonWManifold, h: &ScalarExpr, x: &[f64]) -> Result<Vec<f64>> {
    force_t(m, h, x)
}

/// `u_kj = D_j F_k - D_k F_j` by direct differentiation of the force;
/// returned row-major with `u[k*n + j]`.
pub fn u_tensor(m: &PoissonWManifold, h: &ScalarExpr, x: &[f64]) -> Result<Vec<f64>> {
    let n = m.dim();
    // df[j*n + k] = D_j F_k
    let per_component = m.covariant_d_vec_of(x, |y: &[Dual<f64>]| force_t(m, h, y))?;
    let mut df = vec![0.0; n * n];
    for (k, col) in per_component.iter().enumerate() {
        for j in 0..n {
            df[j * n + k] = col[j];
        }
    }
    let mut u = vec![0.0; n * n];
    for k in 0..n {
        for j in 0..n {
            u[k * n + j] = df[j * n + k] - df[k * n + j];
        }
    }
    Ok(u)
}

/// `t_k = -w_k^j F_j` with `w_k^j = v^i c_ki^j`.
pub fn t_quantity(
    m: &PoissonWManifold,
    v: &[f64],
    h: &ScalarExpr,
    x: &[f64],
) -> Result<Vec<f64>> {
    let sf = structure_functions(m, x)?;
    let f = force(m, h, x)?;
    let n = m.dim();
    Ok((0..n)
        .map(|k| {
            -(0..n)
                .map(|j| {
                    let w_kj: f64 = (0..n).map(|i| v[i] * sf.at(k, i, j)).sum();
                    w_kj * f[j]
                })
                .sum::<f64>()
        })
        .collect())
}

/// Residuals of the reciprocal force equations `(u_ji; t_i) = (F_ij; q_i) H`,
/// evaluated under both global sign conventions (max over indices).
#[derive(Clone, Debug)]
pub struct ReciprocalForceResiduals {
    pub u_plus: f64,
    pub u_minus: f64,
    pub t_plus: f64,
    pub t_minus: f64,
}

pub fn reciprocal_force_check(
    m: &PoissonWManifold,
    v: &[f64],
    h: &ScalarExpr,
    x: &[f64],
) -> Result<ReciprocalForceResiduals> {
    let n = m.dim();
    let sf = structure_functions(m, x)?;
    let u = u_tensor(m, h, x)?;
    let dh = m.covariant_d(h, x)?;
    let t = t_quantity(m, v, h, x)?;

    let mut u_plus = 0.0f64;
    let mut u_minus = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            // F_ij H = c_ij^k D_k H
            let fij_h: f64 = (0..n).map(|k| sf.at(i, j, k) * dh[k]).sum();
            let u_ji = u[j * n + i];
            u_plus = u_plus.max((u_ji - fij_h).abs());
            u_minus = u_minus.max((u_ji + fij_h).abs());
        }
    }

    let mut t_plus = 0.0f64;
    let mut t_minus = 0.0f64;
    for i in 0..n {
        let qi_h = qsu(m, v, i, h, x)?;
        t_plus = t_plus.max((t[i] - qi_h).abs());
        t_minus = t_minus.max((t[i] + qi_h).abs());
    }

    Ok(ReciprocalForceResiduals {
        u_plus,
        u_minus,
        t_plus,
        t_minus,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;
    use crate::rng::SplitMix64;

    fn pe(t: &str, n: usize) -> ScalarExpr {
        parse(t, n, None).unwrap()
    }

    fn heisenberg(chi: &str) -> PoissonWManifold {
        let j: Vec<ScalarExpr> = ["0", "1", "0", "-1", "0", "1", "0", "-1", "0"]
            .iter()
            .map(|s| pe(s, 3))
            .collect();
        let frame: Vec<ScalarExpr> = ["1", "0", "0", "0", "1", "0", "0", "x1", "1"]
            .iter()
            .map(|s| pe(s, 3))
            .collect();
        PoissonWManifold::new(3, j, pe(chi, 3))
            .unwrap()
            .with_frame(frame)
            .unwrap()
    }

    #[test]
    fn identity_frame_commutes() {
        let m = PoissonWManifold::canonical(1, pe("q1", 2)).unwrap();
        let sf = structure_functions(&m, &[0.3, 0.7]).unwrap();
        assert!(sf.c.iter().all(|&v| v == 0.0));
        assert_eq!(sf.cond, 1.0);
        assert_eq!(lemma1_jacobi_residual(&m, &[0.3, 0.7]).unwrap(), 0.0);
    }

    #[test]
    fn heisenberg_structure_constants() {
        let m = heisenberg("x2");
        let x = [0.4, -0.1, 0.9];
        let sf = structure_functions(&m, &x).unwrap();
        assert!((sf.at(0, 2, 1) - 1.0).abs() <= 1e-12);
        assert!((sf.at(2, 0, 1) + 1.0).abs() <= 1e-12);
        // all other entries vanish
        let n = 3;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    if (i, j, k) != (0, 2, 1) && (i, j, k) != (2, 0, 1) {
                        assert!(
                            sf.at(i, j, k).abs() <= 1e-12,
                            "c[{i}][{j}][{k}] = {}",
                            sf.at(i, j, k)
                        );
                    }
                }
            }
        }
        // constants, so the algebraic Jacobi sum vanishes
        assert!(lemma1_jacobi_residual(&m, &x).unwrap() <= 1e-12);
        // exact mirror antisymmetry
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    assert_eq!(sf.at(i, j, k) + sf.at(j, i, k), 0.0);
                }
            }
        }
    }

    #[test]
    fn scaling_frame_structure_function() {
        // E1 = ∂1, E2 = x1 ∂2 on x1 > 0: [E1,E2] = ∂2 = (1/x1) E2.
        let j: Vec<ScalarExpr> = ["0", "1", "-1", "0"].iter().map(|s| pe(s, 2)).collect();
        let frame: Vec<ScalarExpr> = ["1", "0", "0", "x1"].iter().map(|s| pe(s, 2)).collect();
        let m = PoissonWManifold::new(2, j, pe("0", 2))
            .unwrap()
            .with_frame(frame)
            .unwrap();
        let sf = structure_functions(&m, &[2.0, 0.3]).unwrap();
        assert!((sf.at(0, 1, 1) - 0.5).abs() <= 1e-12);
        // n = 2 has no nondegenerate triple, so the algebraic sum is ~0
        assert!(lemma1_jacobi_residual(&m, &[2.0, 0.3]).unwrap() <= 1e-12);
    }

    #[test]
    fn curvature_commutator_equals_structure_form() {
        let m = heisenberg("x2");
        let g = pe("x1*x3", 3);
        let mut rng = SplitMix64::new(23);
        for _ in 0..25 {
            let x = [
                rng.uniform(-1.0, 1.0),
                rng.uniform(-1.0, 1.0),
                rng.uniform(-1.0, 1.0),
            ];
            for i in 0..3 {
                for j in 0..3 {
                    let (comm, structural) = curvature_apply(&m, i, j, &g, &x).unwrap();
                    assert!(
                        (comm - structural).abs() <= 1e-8 * (1.0 + comm.abs()),
                        "({i},{j}) at {x:?}: {comm} vs {structural}"
                    );
                    if i == j {
                        assert_eq!(comm, 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn curvature_vanishes_on_identity_frame() {
        let m = PoissonWManifold::canonical(1, pe("q1*p1", 2)).unwrap();
        let g = pe("sin(q1)*p1", 2);
        let (comm, structural) = curvature_apply(&m, 0, 1, &g, &[0.4, -0.8]).unwrap();
        assert!(comm.abs() <= 1e-12);
        assert_eq!(structural, 0.0);
    }

    #[test]
    fn qsu_hand_value() {
        let m = heisenberg("x2");
        let g = pe("x2", 3);
        let x = [0.3, 0.7, -0.2];
        // w_1^2 = v^3 c_13^2 = 1; q_1 g = D_2 g = 1 + x2 A_2 = 1 + x2
        let q = qsu(&m, &[0.0, 0.0, 1.0], 0, &g, &x).unwrap();
        assert!((q - (1.0 + 0.7)).abs() <= 1e-12);
        // v = 0 and the identity frame both collapse to zero
        assert_eq!(qsu(&m, &[0.0; 3], 0, &g, &x).unwrap(), 0.0);
        let id = PoissonWManifold::canonical(1, pe("q1", 2)).unwrap();
        assert_eq!(qsu(&id, &[1.0, 1.0], 0, &pe("q1", 2), &[0.1, 0.2]).unwrap(), 0.0);
    }

    #[test]
    fn qsu_cross_checks_against_commutator_route() {
        let m = heisenberg("x2");
        let g = pe("x1*x3 + x2^2", 3);
        let v = [0.4, -0.2, 1.0];
        let x = [0.5, 0.1, -0.3];
        for i in 0..3 {
            let via_w = qsu(&m, &v, i, &g, &x).unwrap();
            let mut via_commutator = 0.0;
            for j in 0..3 {
                let (comm, _) = curvature_apply(&m, i, j, &g, &x).unwrap();
                via_commutator += v[j] * comm;
            }
            assert!(
                (via_w - via_commutator).abs() <= 1e-8 * (1.0 + via_w.abs()),
                "i={i}: {via_w} vs {via_commutator}"
            );
        }
    }

    #[test]
    fn force_hand_values() {
        let h = pe("0.5*(q1^2+p1^2)", 2);
        let m = PoissonWManifold::canonical(1, pe("0", 2)).unwrap();
        assert_eq!(force(&m, &h, &[1.0, 2.0]).unwrap(), vec![-1.0, -2.0]);

        let m = PoissonWManifold::canonical(1, pe("q1", 2)).unwrap();
        let f = force(&m, &h, &[1.0, 2.0]).unwrap();
        assert!((f[0] + 3.5).abs() < 1e-14);
        assert!((f[1] + 2.0).abs() < 1e-14);

        let m0 = PoissonWManifold::canonical(1, pe("0", 2)).unwrap();
        assert_eq!(force(&m0, &pe("3", 2), &[0.4, 0.5]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn u_tensor_antisymmetry_and_oracle() {
        let m = heisenberg("x2");
        let h = pe("x1*x3", 3);
        let x = [0.6, -0.4, 0.8];
        let u = u_tensor(&m, &h, &x).unwrap();
        let n = 3;
        for k in 0..n {
            for j in 0..n {
                assert!((u[k * n + j] + u[j * n + k]).abs() <= 1e-10);
            }
        }

        // Independent finite-difference oracle for D_j F_k (h = 1e-4):
        // directional derivative along E_j plus the A_j F_k term.
        let fd = 1e-4;
        let e = m.frame_at(x.as_slice()).unwrap();
        let a = m.structural_derivative(&x).unwrap();
        let force_at = |p: &[f64]| force(&m, &h, p).unwrap();
        let mut df_fd = vec![0.0; n * n];
        for j in 0..n {
            let dir: Vec<f64> = (0..n).map(|b| e[j * n + b]).collect();
            let xp: Vec<f64> = x.iter().zip(&dir).map(|(xi, d)| xi + fd * d).collect();
            let xm: Vec<f64> = x.iter().zip(&dir).map(|(xi, d)| xi - fd * d).collect();
            let fp = force_at(&xp);
            let fm = force_at(&xm);
            let f0 = force_at(&x);
            for k in 0..n {
                df_fd[j * n + k] = (fp[k] - fm[k]) / (2.0 * fd) + a[j] * f0[k];
            }
        }
        for k in 0..n {
            for j in 0..n {
                let u_fd = df_fd[j * n + k] - df_fd[k * n + j];
                assert!(
                    (u[k * n + j] - u_fd).abs() <= 1e-5,
                    "u[{k}][{j}] = {} vs fd {}",
                    u[k * n + j],
                    u_fd
                );
            }
        }

        // identity frame with χ = 0: mixed partials commute
        let id = PoissonWManifold::canonical(1, pe("0", 2)).unwrap();
        let u0 = u_tensor(&id, &pe("q1^2*p1", 2), &[0.7, 0.2]).unwrap();
        assert!(u0.iter().all(|v| v.abs() <= 1e-12));
    }

    #[test]
    fn t_quantity_hand_value() {
        // χ = 0, H = x2: t_1 = -w_1^2 F_2 = D_2 H = 1
        let m = heisenberg("0");
        let h = pe("x2", 3);
        let x = [0.2, 0.5, -0.1];
        let t = t_quantity(&m, &[0.0, 0.0, 1.0], &h, &x).unwrap();
        assert!((t[0] - 1.0).abs() <= 1e-12);
        // v = 0 gives zero
        assert_eq!(t_quantity(&m, &[0.0; 3], &h, &x).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn reciprocal_force_signs() {
        let m = heisenberg("x2");
        let h = pe("x1*x3", 3);
        let x = [0.5, -0.2, 0.7];
        let r = reciprocal_force_check(&m, &[0.0, 0.0, 1.0], &h, &x).unwrap();
        // u_ji = -F_ij H holds; the paper's plus sign does not.
        assert!(r.u_minus <= 1e-8, "u_minus = {}", r.u_minus);
        assert!(r.u_plus > 1e-3, "u_plus = {}", r.u_plus);
        // t_i = q_i H holds exactly.
        assert!(r.t_plus <= 1e-10, "t_plus = {}", r.t_plus);

        // identity frame: everything degenerates to zero
        let id = PoissonWManifold::canonical(1, pe("0", 2)).unwrap();
        let r0 = reciprocal_force_check(&id, &[1.0, -1.0], &pe("q1*p1", 2), &[0.3, 0.8]).unwrap();
        assert!(r0.u_plus <= 1e-12 && r0.u_minus <= 1e-12);
        assert!(r0.t_plus <= 1e-12 && r0.t_minus <= 1e-12);
    }
}
