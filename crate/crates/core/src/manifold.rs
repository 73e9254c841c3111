//! The Poisson-W manifold and its bracket machinery.
//!
//! A manifold is an open box in ℝⁿ equipped with an antisymmetric structure
//! matrix `J(x)`, a structure function `χ`, and an optional anholonomic
//! frame `E_i = e_i^a ∂_a` (rows of the frame matrix). The covariant
//! operator is `D_i = E_i + A_i` with the structural derivative `A_i = E_i χ`,
//! and the generalized Poisson-W bracket is `{f,g} = J_ij D_i f D_j g`.
//!
//! Every evaluation here is generic over the jet carrier, so any derived
//! quantity (the bracket, `w`, forces, vector-field components) can itself
//! be differentiated by evaluating it at a seeded point.

use crate::expr::{eval_with, ScalarExpr};
use crate::linalg;
use crate::num::{seed, Dual, Num};
use crate::rng::SplitMix64;
use crate::{Error, Result};

/// Absolute antisymmetry tolerance for the structure matrix.
pub const ANTISYMMETRY_TOL: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct PoissonWManifold {
    n: usize,
    /// Row-major n×n structure matrix entries.
    j: Vec<ScalarExpr>,
    chi: ScalarExpr,
    /// Row-major frame rows `e_i^a`; `None` means the coordinate frame.
    frame: Option<Vec<ScalarExpr>>,
    /// Test fixture: replaces `A_i = E_i χ` with explicit expressions, used
    /// by negative tests that deliberately break `A = ∇χ`.
    a_override: Option<Vec<ScalarExpr>>,
    canonical: bool,
}

/// Point value of a vector field on the coordinate basis.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorFieldValue {
    pub components: Vec<f64>,
}

impl PoissonWManifold {
    /// Builds a manifold from explicit structure-matrix entries.
    ///
    /// Antisymmetry of `J` is validated on a 3ⁿ grid over [-1,1]ⁿ for n ≤ 4
    /// and on 100 seeded random points otherwise, and again at every
    /// evaluation point later on.
    pub fn new(n: usize, j: Vec<ScalarExpr>, chi: ScalarExpr) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("dimension must be at least 1".into()));
        }
        if j.len() != n * n {
            return Err(Error::Dimension(format!(
                "structure matrix needs {} entries, got {}",
                n * n,
                j.len()
            )));
        }
        check_dims(&j, n, "structure matrix")?;
        check_dims(std::slice::from_ref(&chi), n, "chi")?;
        let canonical = is_canonical_matrix(&j, n);
        let m = PoissonWManifold {
            n,
            j,
            chi,
            frame: None,
            a_override: None,
            canonical,
        };
        m.validate_antisymmetry_grid()?;
        Ok(m)
    }

    /// Canonical structure matrix on ℝ²ᵐ: `J[i][m+i] = 1`, `J[m+i][i] = -1`.
    pub fn canonical(m: usize, chi: ScalarExpr) -> Result<Self> {
        let n = 2 * m;
        let mut j = vec![ScalarExpr::Const(0.0); n * n];
        for i in 0..m {
            j[i * n + (m + i)] = ScalarExpr::Const(1.0);
            j[(m + i) * n + i] = ScalarExpr::Const(-1.0);
        }
        Self::new(n, j, chi)
    }

    /// Attaches an anholonomic frame (row i holds the components of `E_i`).
    pub fn with_frame(mut self, frame: Vec<ScalarExpr>) -> Result<Self> {
        if frame.len() != self.n * self.n {
            return Err(Error::Dimension(format!(
                "frame needs {} entries, got {}",
                self.n * self.n,
                frame.len()
            )));
        }
        check_dims(&frame, self.n, "frame")?;
        self.frame = Some(frame);
        Ok(self)
    }

    /// Replaces the structural derivative with explicit expressions.
    ///
    /// This deliberately severs `A = Eχ`; identities that are forced only
    /// under that relation will then fail, which negative tests rely on.
    pub fn with_structural_derivative_override(
        mut self,
        a: Vec<ScalarExpr>,
    ) -> Result<Self> {
        if a.len() != self.n {
            return Err(Error::Dimension(format!(
                "structural-derivative override needs {} entries, got {}",
                self.n,
                a.len()
            )));
        }
        check_dims(&a, self.n, "structural-derivative override")?;
        self.a_override = Some(a);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn chi(&self) -> &ScalarExpr {
        &self.chi
    }

    pub fn has_frame(&self) -> bool {
        self.frame.is_some()
    }

    pub fn has_structural_override(&self) -> bool {
        self.a_override.is_some()
    }

    /// True when `J` is exactly the canonical phase-space matrix.
    pub fn is_canonical(&self) -> bool {
        self.canonical
    }

    fn validate_antisymmetry_grid(&self) -> Result<()> {
        let points = validation_points(self.n);
        for x in &points {
            match self.j_at(x.as_slice()) {
                Ok(_) => {}
                Err(e @ Error::NotAntisymmetric { .. }) => return Err(e),
                // Domain failures on probe points are fine; the matrix is
                // re-checked wherever it is actually used.
                Err(_) => {}
            }
        }
        Ok(())
    }

    /// Structure matrix at a point, with the antisymmetry check applied to
    /// the primal values.
    pub fn j_at<T: Num>(&self, x: &[T]) -> Result<Vec<T>> {
        self.check_point_dim(x)?;
        let n = self.n;
        let mut out = Vec::with_capacity(n * n);
        for entry in &self.j {
            out.push(eval_with(entry, x)?);
        }
        for i in 0..n {
            for jj in (i + 1)..n {
                let v = out[i * n + jj].primal() + out[jj * n + i].primal();
                if v.abs() > ANTISYMMETRY_TOL {
                    return Err(Error::NotAntisymmetric {
                        i,
                        j: jj,
                        violation: v.abs(),
                    });
                }
            }
            if out[i * n + i].primal().abs() > ANTISYMMETRY_TOL {
                return Err(Error::NotAntisymmetric {
                    i,
                    j: i,
                    violation: out[i * n + i].primal().abs(),
                });
            }
        }
        Ok(out)
    }

    /// Frame matrix at a point (identity for the coordinate frame), with
    /// the condition-number gate applied to the primal values.
    pub fn frame_at<T: Num>(&self, x: &[T]) -> Result<Vec<T>> {
        self.check_point_dim(x)?;
        let n = self.n;
        match &self.frame {
            None => {
                let mut out = vec![x[0].lift(0.0); n * n];
                for (i, slot) in out.iter_mut().enumerate().take(n * n) {
                    if i % n == i / n {
                        *slot = x[0].lift(1.0);
                    }
                }
                Ok(out)
            }
            Some(rows) => {
                let mut out = Vec::with_capacity(n * n);
                for entry in rows {
                    out.push(eval_with(entry, x)?);
                }
                let primal: Vec<f64> = out.iter().map(Num::primal).collect();
                let cond = linalg::cond_inf(&primal, n);
                if !cond.is_finite() || cond > linalg::COND_LIMIT {
                    return Err(Error::IllConditioned { cond });
                }
                Ok(out)
            }
        }
    }

    fn check_point_dim<T>(&self, x: &[T]) -> Result<()> {
        if x.len() != self.n {
            return Err(Error::Dimension(format!(
                "point has dimension {}, manifold has {}",
                x.len(),
                self.n
            )));
        }
        Ok(())
    }

    /// Structural derivative `A_i = E_i χ` (or the override when present).
    pub fn structural_derivative_t<T: Num>(&self, x: &[T]) -> Result<Vec<T>> {
        if let Some(a) = &self.a_override {
            return a.iter().map(|e| eval_with(e, x)).collect();
        }
        let e = self.frame_at(x)?;
        let (_, dchi) = grad_expr(&self.chi, x)?;
        Ok(frame_contract(&e, &dchi, self.n))
    }

    pub fn structural_derivative(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.structural_derivative_t(x)
    }

    /// Covariant derivative components `D_i f = E_i f + A_i f`.
    pub fn covariant_d_t<T: Num>(&self, f: &ScalarExpr, x: &[T]) -> Result<Vec<T>> {
        let (fv, df) = grad_expr(f, x)?;
        self.covariant_from_grad(x, &fv, &df)
    }

    pub fn covariant_d(&self, f: &ScalarExpr, x: &[f64]) -> Result<Vec<f64>> {
        self.covariant_d_t(f, x)
    }

    /// Covariant derivative of a computed scalar, differentiating through
    /// the closure with a nested carrier.
    pub fn covariant_d_of<T: Num, F>(&self, x: &[T], q: F) -> Result<Vec<T>>
    where
        F: Fn(&[Dual<T>]) -> Result<Dual<T>>,
    {
        let (qv, dq) = grad_scalar(x, q)?;
        self.covariant_from_grad(x, &qv, &dq)
    }

    fn covariant_from_grad<T: Num>(&self, x: &[T], value: &T, grad: &[T]) -> Result<Vec<T>> {
        let e = self.frame_at(x)?;
        let a = self.structural_derivative_t(x)?;
        let directional = frame_contract(&e, grad, self.n);
        Ok(directional
            .into_iter()
            .zip(a)
            .map(|(ef, ai)| ef + ai * value.clone())
            .collect())
    }

    /// Covariant derivative of every component of a computed vector in one
    /// seeded pass: `out[k][j] = D_j q_k`.
    pub fn covariant_d_vec_of<T: Num, F>(&self, x: &[T], q: F) -> Result<Vec<Vec<T>>>
    where
        F: Fn(&[Dual<T>]) -> Result<Vec<Dual<T>>>,
    {
        let seeded = seed(x);
        let vals = q(&seeded)?;
        let e = self.frame_at(x)?;
        let a = self.structural_derivative_t(x)?;
        let n = self.n;
        let mut out = Vec::with_capacity(vals.len());
        for comp in vals {
            let directional = frame_contract(&e, &comp.eps, n);
            out.push(
                directional
                    .into_iter()
                    .zip(&a)
                    .map(|(eq, ai)| eq + ai.clone() * comp.re.clone())
                    .collect(),
            );
        }
        Ok(out)
    }

    /// Bracket of an expression against a computed scalar:
    /// `J_ij D_i f D_j q`.
    pub fn gpwb_expr_scalar<T: Num, F>(&self, f: &ScalarExpr, q: F, x: &[T]) -> Result<T>
    where
        F: Fn(&[Dual<T>]) -> Result<Dual<T>>,
    {
        let j = self.j_at(x)?;
        let df = self.covariant_d_t(f, x)?;
        let dq = self.covariant_d_of(x, q)?;
        Ok(contract_bilinear(&j, &df, &dq, self.n, &x[0]))
    }

    /// Generalized Poisson-W bracket `{f,g} = J_ij D_i f D_j g`.
    pub fn gpwb_t<T: Num>(&self, f: &ScalarExpr, g: &ScalarExpr, x: &[T]) -> Result<T> {
        let j = self.j_at(x)?;
        let df = self.covariant_d_t(f, x)?;
        let dg = self.covariant_d_t(g, x)?;
        Ok(contract_bilinear(&j, &df, &dg, self.n, &x[0]))
    }

    pub fn gpwb(&self, f: &ScalarExpr, g: &ScalarExpr, x: &[f64]) -> Result<f64> {
        self.gpwb_t(f, g, x)
    }

    /// Bracket split into its frame-directional part `J_ij (E_i f)(E_j g)`
    /// and the structure part `f·X_χ g − g·X_χ f` with
    /// `X_χ q = J_ij A_i E_j q`. Their sum equals [`gpwb`].
    pub fn gpwb_decomposed(
        &self,
        f: &ScalarExpr,
        g: &ScalarExpr,
        x: &[f64],
    ) -> Result<(f64, f64)> {
        let n = self.n;
        let j = self.j_at(x)?;
        let e = self.frame_at(x)?;
        let a = self.structural_derivative_t(x)?;
        let (fv, dfc) = grad_expr(f, x)?;
        let (gv, dgc) = grad_expr(g, x)?;
        let ef = frame_contract(&e, &dfc, n);
        let eg = frame_contract(&e, &dgc, n);
        let ghs = contract_bilinear(&j, &ef, &eg, n, &x[0]);
        let xchi_f = contract_bilinear(&j, &a, &ef, n, &x[0]);
        let xchi_g = contract_bilinear(&j, &a, &eg, n, &x[0]);
        Ok((ghs, fv * xchi_g - gv * xchi_f))
    }

    /// Scalar action `X_χ q = J_ij A_i E_j q` of the structure field.
    pub fn xchi_apply_t<T: Num>(&self, q: &ScalarExpr, x: &[T]) -> Result<T> {
        let j = self.j_at(x)?;
        let e = self.frame_at(x)?;
        let a = self.structural_derivative_t(x)?;
        let (_, dq) = grad_expr(q, x)?;
        let eq = frame_contract(&e, &dq, self.n);
        Ok(contract_bilinear(&j, &a, &eq, self.n, &x[0]))
    }

    /// `w = {H, 1} = J_ij D_i H A_j`: the W-dynamics rate.
    pub fn w_dynamics_t<T: Num>(&self, h: &ScalarExpr, x: &[T]) -> Result<T> {
        let j = self.j_at(x)?;
        let dh = self.covariant_d_t(h, x)?;
        let a = self.structural_derivative_t(x)?;
        Ok(contract_bilinear(&j, &dh, &a, self.n, &x[0]))
    }

    pub fn w_dynamics(&self, h: &ScalarExpr, x: &[f64]) -> Result<f64> {
        self.w_dynamics_t(h, x)
    }

    /// Coordinate components of the Hamiltonian-type vector field of `f`,
    /// i.e. `X_f = Σ_j (Σ_i J_ji E_i f) E_j` pushed onto the coordinate
    /// basis. For the canonical matrix and coordinate frame this is the
    /// classical `(∂H/∂p, -∂H/∂q)` orientation.
    pub fn vec_x_t<T: Num>(&self, f: &ScalarExpr, x: &[T]) -> Result<Vec<T>> {
        self.vec_x_of(x, |y| eval_with(f, y))
    }

    /// Same as [`Self::vec_x_t`] for a computed scalar.
    pub fn vec_x_of<T: Num, F>(&self, x: &[T], q: F) -> Result<Vec<T>>
    where
        F: Fn(&[Dual<T>]) -> Result<Dual<T>>,
    {
        let (_, dq) = grad_scalar(x, q)?;
        let e = self.frame_at(x)?;
        let eq = frame_contract(&e, &dq, self.n);
        self.push_frame_coefficients(x, &e, &eq)
    }

    /// Coordinate components of `X_χ = Σ_j (Σ_i J_ji A_i) E_j`.
    pub fn vec_x_chi_t<T: Num>(&self, x: &[T]) -> Result<Vec<T>> {
        let e = self.frame_at(x)?;
        let a = self.structural_derivative_t(x)?;
        self.push_frame_coefficients(x, &e, &a)
    }

    /// Coordinate components of the non-symplectic field
    /// `X_f^M = X_f + f X_χ`.
    pub fn vec_xm_t<T: Num>(&self, f: &ScalarExpr, x: &[T]) -> Result<Vec<T>> {
        let xf = self.vec_x_t(f, x)?;
        let xchi = self.vec_x_chi_t(x)?;
        let fv = eval_with(f, x)?;
        Ok(xf
            .into_iter()
            .zip(xchi)
            .map(|(v, c)| v + fv.clone() * c)
            .collect())
    }

    pub fn vec_x(&self, f: &ScalarExpr, x: &[f64]) -> Result<VectorFieldValue> {
        Ok(VectorFieldValue {
            components: self.vec_x_t(f, x)?,
        })
    }

    pub fn vec_x_chi(&self, x: &[f64]) -> Result<VectorFieldValue> {
        Ok(VectorFieldValue {
            components: self.vec_x_chi_t(x)?,
        })
    }

    pub fn vec_xm(&self, f: &ScalarExpr, x: &[f64]) -> Result<VectorFieldValue> {
        Ok(VectorFieldValue {
            components: self.vec_xm_t(f, x)?,
        })
    }

    fn push_frame_coefficients<T: Num>(
        &self,
        x: &[T],
        e: &[T],
        directional: &[T],
    ) -> Result<Vec<T>> {
        let n = self.n;
        let j = self.j_at(x)?;
        // coefficient on E_j, summed over the second index of J
        let mut coeff = Vec::with_capacity(n);
        for jj in 0..n {
            let mut s = x[0].lift(0.0);
            for i in 0..n {
                s = s + j[jj * n + i].clone() * directional[i].clone();
            }
            coeff.push(s);
        }
        let mut out = Vec::with_capacity(n);
        for a in 0..n {
            let mut s = x[0].lift(0.0);
            for jj in 0..n {
                s = s + coeff[jj].clone() * e[jj * n + a].clone();
            }
            out.push(s);
        }
        Ok(out)
    }

    /// Canonical two-form pairing `Ω(u,v) = Σ_k (u^{p_k} v^{q_k} - u^{q_k} v^{p_k})`.
    ///
    /// Defined only on even dimensions with the canonical structure matrix.
    pub fn omega_pair(&self, u: &VectorFieldValue, v: &VectorFieldValue) -> Result<f64> {
        if self.n % 2 != 0 {
            return Err(Error::OddDimension {
                op: "omega_pair",
                n: self.n,
            });
        }
        if !self.canonical {
            return Err(Error::NotCanonical { op: "omega_pair" });
        }
        let m = self.n / 2;
        if u.components.len() != self.n || v.components.len() != self.n {
            return Err(Error::Dimension("omega_pair operands".into()));
        }
        let mut s = 0.0;
        for k in 0..m {
            s += u.components[m + k] * v.components[k] - u.components[k] * v.components[m + k];
        }
        Ok(s)
    }

    /// Lie bracket of two vector fields given by component expressions:
    /// `[V,W]^b = V^a ∂_a W^b - W^a ∂_a V^b`.
    pub fn lie_bracket(
        &self,
        v: &[ScalarExpr],
        w: &[ScalarExpr],
        x: &[f64],
    ) -> Result<VectorFieldValue> {
        self.check_point_dim(x)?;
        if v.len() != self.n || w.len() != self.n {
            return Err(Error::Dimension("lie_bracket component count".into()));
        }
        let components = lie_bracket_of(
            x,
            |y| v.iter().map(|c| eval_with(c, y)).collect(),
            |y| w.iter().map(|c| eval_with(c, y)).collect(),
        )?;
        Ok(VectorFieldValue { components })
    }

    /// Evaluates both sides of the Lie-bracket expansion of the
    /// non-symplectic fields applied to a probe function `K`:
    ///
    /// lhs = `([X_f^M, X_g^M] K)(x)` from the assembled component fields;
    /// rhs = `([X_f,X_g] + f[X_χ,X_g] + g[X_f,X_χ] + (2 X_f g + X_χ(f,g)) X_χ) K`.
    pub fn bracket_xm_expansion(
        &self,
        f: &ScalarExpr,
        g: &ScalarExpr,
        k: &ScalarExpr,
        x: &[f64],
    ) -> Result<(f64, f64)> {
        self.check_point_dim(x)?;
        let (_, dk) = grad_expr(k, x)?;

        let bracket_m = lie_bracket_of(
            x,
            |y| self.vec_xm_t(f, y),
            |y| self.vec_xm_t(g, y),
        )?;
        let lhs = dot(&bracket_m, &dk);

        let b_fg = lie_bracket_of(x, |y| self.vec_x_t(f, y), |y| self.vec_x_t(g, y))?;
        let b_cg = lie_bracket_of(x, |y| self.vec_x_chi_t(y), |y| self.vec_x_t(g, y))?;
        let b_fc = lie_bracket_of(x, |y| self.vec_x_t(f, y), |y| self.vec_x_chi_t(y))?;

        let fv = eval_with(f, x)?;
        let gv = eval_with(g, x)?;
        let (_, df) = grad_expr(f, x)?;
        let (_, dg) = grad_expr(g, x)?;
        let xf = self.vec_x_t(f, x)?;
        let xchi = self.vec_x_chi_t(x)?;

        let xf_g = dot(&xf, &dg);
        let xchi_f = dot(&xchi, &df);
        let xchi_g = dot(&xchi, &dg);
        let coeff = 2.0 * xf_g + (fv * xchi_g - gv * xchi_f);

        let rhs = dot(&b_fg, &dk)
            + fv * dot(&b_cg, &dk)
            + gv * dot(&b_fc, &dk)
            + coeff * dot(&xchi, &dk);
        Ok((lhs, rhs))
    }
}

fn check_dims(exprs: &[ScalarExpr], n: usize, what: &str) -> Result<()> {
    for e in exprs {
        if let Some(i) = e.max_var() {
            if i >= n {
                return Err(Error::Dimension(format!(
                    "{what} references variable index {i} but dimension is {n}"
                )));
            }
        }
    }
    Ok(())
}

fn is_canonical_matrix(j: &[ScalarExpr], n: usize) -> bool {
    if n % 2 != 0 {
        return false;
    }
    let m = n / 2;
    for r in 0..n {
        for c in 0..n {
            let expected = if r < m && c == m + r {
                1.0
            } else if r >= m && c == r - m {
                -1.0
            } else {
                0.0
            };
            match &j[r * n + c] {
                ScalarExpr::Const(v) if *v == expected => {}
                _ => return false,
            }
        }
    }
    true
}

fn validation_points(n: usize) -> Vec<Vec<f64>> {
    if n <= 4 {
        let mut pts = vec![vec![]];
        for _ in 0..n {
            let mut next = Vec::new();
            for p in &pts {
                for v in [-1.0, 0.0, 1.0] {
                    let mut q = p.clone();
                    q.push(v);
                    next.push(q);
                }
            }
            pts = next;
        }
        pts
    } else {
        let mut rng = SplitMix64::new(0x6A09_E667_F3BC_C908);
        (0..100)
            .map(|_| (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect())
            .collect()
    }
}

/// Value and coordinate gradient of a computed scalar at a carrier point.
pub fn grad_scalar<T: Num, F>(x: &[T], f: F) -> Result<(T, Vec<T>)>
where
    F: Fn(&[Dual<T>]) -> Result<Dual<T>>,
{
    let seeded = seed(x);
    let r = f(&seeded)?;
    Ok((r.re, r.eps))
}

/// Value and coordinate gradient of an expression at a carrier point.
pub fn grad_expr<T: Num>(f: &ScalarExpr, x: &[T]) -> Result<(T, Vec<T>)> {
    grad_scalar(x, |y| eval_with(f, y))
}

/// Lie bracket of two computed vector fields:
/// `[V,W]^b = V^a ∂_a W^b - W^a ∂_a V^b`.
pub fn lie_bracket_of<T: Num, FV, FW>(x: &[T], v: FV, w: FW) -> Result<Vec<T>>
where
    FV: Fn(&[Dual<T>]) -> Result<Vec<Dual<T>>>,
    FW: Fn(&[Dual<T>]) -> Result<Vec<Dual<T>>>,
{
    let seeded = seed(x);
    let vv = v(&seeded)?;
    let ww = w(&seeded)?;
    let n = x.len();
    if vv.len() != n || ww.len() != n {
        return Err(Error::Dimension("vector field component count".into()));
    }
    let mut out = Vec::with_capacity(n);
    for b in 0..n {
        let mut s = x[0].lift(0.0);
        for a in 0..n {
            s = s + vv[a].re.clone() * ww[b].eps[a].clone()
                - ww[a].re.clone() * vv[b].eps[a].clone();
        }
        out.push(s);
    }
    Ok(out)
}

/// `Σ_i m[i][a] v[i]` for a row-major matrix: directional derivatives
/// `E_i f = Σ_a e_i^a ∂_a f`.
fn frame_contract<T: Num>(e: &[T], grad: &[T], n: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut s = grad[0].lift(0.0);
        for a in 0..n {
            s = s + e[i * n + a].clone() * grad[a].clone();
        }
        out.push(s);
    }
    out
}

/// `Σ_ij J_ij u_i v_j`.
fn contract_bilinear<T: Num>(j: &[T], u: &[T], v: &[T], n: usize, exemplar: &T) -> T {
    let mut s = exemplar.lift(0.0);
    for i in 0..n {
        for jj in 0..n {
            s = s + j[i * n + jj].clone() * u[i].clone() * v[jj].clone();
        }
    }
    s
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
