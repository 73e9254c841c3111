//! Identity registry and sampling audit.
//!
//! Each catalog entry states one equation of the framework. At audit time
//! the entry is classified per scenario:
//!
//! - FORCED: algebraically exact under the adopted conventions. The
//!   normalized residual must stay below the entry's tolerance at every
//!   usable sample point.
//! - REPORTED: the residual is measured and published without assertion.
//!
//! Some entries are forced only when the scenario degenerates (constant χ,
//! commuting frame, ...); the registry carries that condition and the audit
//! probes the scenario to resolve it. Sign-sensitive entries are evaluated
//! under both global signs and the report names the matching one — a pure
//! sign flip is never a failure.

use crate::dynamics::{
    divergence_identity, general_operator_residual, reciprocal_tensor, second_order_point,
    transport_residual, RhsConvention,
};
use crate::expr::{eval_with, ScalarExpr};
use crate::frame::{
    curvature_apply, lemma1_jacobi_residual, qsu, reciprocal_force_check, structure_functions,
    t_quantity, u_tensor,
};
use crate::manifold::{grad_expr, PoissonWManifold};
use crate::num::{Dual, Num};
use crate::rng::SplitMix64;
use crate::{Error, Result};
use rayon::prelude::*;

/// Normalized residual `|lhs - rhs| / (1 + max(|lhs|, |rhs|))`.
pub fn normalized_residual(lhs: f64, rhs: f64) -> f64 {
    (lhs - rhs).abs() / (1.0 + lhs.abs().max(rhs.abs()))
}

/// Cyclic Jacobi sum `|{f,{g,h}} + {g,{h,f}} + {h,{f,g}}|`, inner brackets
/// fed through jets.
pub fn jacobi_residual(
    m: &PoissonWManifold,
    f: &ScalarExpr,
    g: &ScalarExpr,
    h: &ScalarExpr,
    x: &[f64],
) -> Result<f64> {
    let t1 = m.gpwb_expr_scalar(f, |y: &[Dual<f64>]| m.gpwb_t(g, h, y), x)?;
    let t2 = m.gpwb_expr_scalar(g, |y: &[Dual<f64>]| m.gpwb_t(h, f, y), x)?;
    let t3 = m.gpwb_expr_scalar(h, |y: &[Dual<f64>]| m.gpwb_t(f, g, y), x)?;
    Ok((t1 + t2 + t3).abs())
}

/// When an entry counts as FORCED for a given scenario.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ForcedWhen {
    Always,
    /// χ has vanishing frame gradient everywhere.
    ChiConstant,
    /// χ constant and J constant (classical Jacobi reduction).
    ChiConstantConstantJ,
    /// χ constant on the coordinate frame.
    ChiConstantCoordFrame,
    /// Structure functions constant over the box.
    ConstantStructure,
    /// Structure functions identically zero (commuting frame).
    StructureZero,
    /// χ constant and commuting frame.
    ChiConstantStructureZero,
}

#[derive(Clone, Copy, Debug)]
pub struct IdentitySpec {
    pub id: &'static str,
    pub description: &'static str,
    pub forced_when: ForcedWhen,
    /// Pass tolerance for the normalized residual when forced.
    pub tol: f64,
    /// Needs an even dimension (phase-space split).
    pub needs_phase_split: bool,
    /// Needs the canonical structure matrix.
    pub needs_canonical: bool,
    /// Evaluated under both global signs; the report names the match.
    pub sign_audit: bool,
}

const fn entry(
    id: &'static str,
    description: &'static str,
    forced_when: ForcedWhen,
    tol: f64,
) -> IdentitySpec {
    IdentitySpec {
        id,
        description,
        forced_when,
        tol,
        needs_phase_split: false,
        needs_canonical: false,
        sign_audit: false,
    }
}

/// One entry per in-scope equation.
pub const CATALOG: [IdentitySpec; 25] = [
    entry(
        "I01-gpwb-antisym",
        "bracket antisymmetry {f,g} = -{g,f}",
        ForcedWhen::Always,
        1e-10,
    ),
    entry(
        "I02-gpwb-bilinear",
        "bracket bilinearity {a f + b g, h} = a{f,h} + b{g,h}",
        ForcedWhen::Always,
        1e-10,
    ),
    entry(
        "I03-gpwb-gji",
        "generalized Jacobi identity (cyclic bracket sum)",
        ForcedWhen::ChiConstantConstantJ,
        1e-10,
    ),
    entry(
        "I04-thm-le5",
        "bracket decomposition {f,g} = {f,g}_GHS + X_chi(f,g)",
        ForcedWhen::Always,
        1e-10,
    ),
    entry(
        "I05-leibnitz",
        "generalized Leibnitz form {fg,h} = {fg,h}_GHS + X_chi(fg,h)",
        ForcedWhen::Always,
        1e-10,
    ),
    entry(
        "I06-thm-t4",
        "Lie bracket expansion of the non-symplectic fields",
        ForcedWhen::Always,
        1e-8,
    ),
    entry(
        "I07-t4-hamiltonian",
        "Hamiltonian specialization of the field bracket expansion",
        ForcedWhen::ChiConstant,
        1e-10,
    ),
    entry(
        "I08-energy-pairing",
        "energy pairing {H,H} = 0",
        ForcedWhen::Always,
        1e-12,
    ),
    entry(
        "I09-w-form",
        "w = J_ij D_iH A_j equals the gradient form J_ij (E_iH) A_j",
        ForcedWhen::Always,
        1e-10,
    ),
    entry(
        "I10-claim-cc1",
        "curvature commutator [D_i,D_j] equals c_ij^k D_k",
        ForcedWhen::Always,
        1e-8,
    ),
    entry(
        "I11-qsu-consistency",
        "Qsu contraction v^j F_ij g equals w_i^k D_k g",
        ForcedWhen::Always,
        1e-8,
    ),
    entry(
        "I12-le1-antisym",
        "structure functions antisymmetric: c_ij^k + c_ji^k = 0",
        ForcedWhen::Always,
        1e-12,
    ),
    entry(
        "I13-le1-jacobi",
        "algebraic Jacobi sum of the structure functions",
        ForcedWhen::ConstantStructure,
        1e-10,
    ),
    IdentitySpec {
        sign_audit: true,
        ..entry(
            "I14-cor-c2-sign",
            "u_kj against both signs of c_kj^i F_i",
            ForcedWhen::Always,
            1e-8,
        )
    },
    IdentitySpec {
        sign_audit: true,
        ..entry(
            "I15-recip-force-u",
            "reciprocal force equation u_ji = F_ij H (both signs)",
            ForcedWhen::StructureZero,
            1e-10,
        )
    },
    entry(
        "I16-recip-force-t",
        "reciprocal force equation t_i = q_i H",
        ForcedWhen::Always,
        1e-10,
    ),
    entry(
        "I17-thm-t2-derived",
        "flow divergence against its symbolic expansion",
        ForcedWhen::Always,
        1e-8,
    ),
    entry(
        "I18-thm-t2-paper",
        "flow divergence against the claimed rhs with (x·D + 2)w",
        ForcedWhen::ChiConstantCoordFrame,
        1e-10,
    ),
    entry(
        "I19-thm-t6",
        "curvature acting on the flow (theta/w contraction form)",
        ForcedWhen::StructureZero,
        1e-10,
    ),
    entry(
        "I20-general-operator",
        "general operator identity on the bracket: extra w c_ij^k d_k f term",
        ForcedWhen::StructureZero,
        1e-10,
    ),
    IdentitySpec {
        needs_phase_split: true,
        ..entry(
            "I21-reciprocal-tensor-antisym",
            "reciprocal tensor antisymmetry f_kj = -f_jk",
            ForcedWhen::Always,
            1e-10,
        )
    },
    IdentitySpec {
        needs_phase_split: true,
        ..entry(
            "I22-reciprocal-tensor-jk",
            "simplified reciprocal-tensor form at j != k",
            ForcedWhen::ChiConstantStructureZero,
            1e-10,
        )
    },
    IdentitySpec {
        needs_phase_split: true,
        needs_canonical: true,
        sign_audit: true,
        ..entry(
            "I23-omega-pairing",
            "two-form pairing of the non-symplectic fields against ±{H,f}",
            ForcedWhen::Always,
            1e-8,
        )
    },
    entry(
        "I24-transport-law",
        "covariant transport Df/dt = {H,f} under the transport convention",
        ForcedWhen::Always,
        1e-10,
    ),
    entry(
        "I25-cor-t1",
        "second-order operator form equals the chained covariant derivative",
        ForcedWhen::Always,
        1e-8,
    ),
];

pub fn catalog_ids() -> Vec<&'static str> {
    CATALOG.iter().map(|s| s.id).collect()
}

/// Scenario under audit: manifold, Hamiltonian, the fixed test-function
/// pool, and the Qsu contraction vector (`None` uses the NGHS velocity at
/// each point).
#[derive(Clone, Debug)]
pub struct AuditScenario {
    pub name: String,
    pub manifold: PoissonWManifold,
    pub hamiltonian: ScalarExpr,
    pub pool: Vec<ScalarExpr>,
    pub qsu_vector: Option<Vec<f64>>,
}

/// Default fixed pool: six polynomials of degree 1–3 and two transcendental
/// fields, spelled per dimension.
pub fn default_pool(n: usize) -> Vec<ScalarExpr> {
    let texts: Vec<&str> = match n {
        1 => vec![
            "x1",
            "2*x1 - 1",
            "x1^2",
            "x1^2 - x1",
            "x1^3",
            "x1^3 + x1",
            "sin(x1)",
            "exp(0.3*x1)",
        ],
        2 => vec![
            "q1",
            "p1",
            "q1*p1",
            "q1^2 - p1",
            "q1^2*p1",
            "q1^3 + p1",
            "sin(q1)",
            "exp(0.3*p1)",
        ],
        3 => vec![
            "x1",
            "x2 + 2*x3",
            "x1*x2",
            "x1^2 - x3",
            "x1*x2*x3",
            "x1^3 + x2^2",
            "sin(x1)",
            "exp(0.3*x2)",
        ],
        4 => vec![
            "q1",
            "p2 + q2",
            "q1*p1",
            "q2^2 - p1",
            "q1*q2*p2",
            "q1^3 + p2^2",
            "sin(q1)",
            "exp(0.3*p1)",
        ],
        _ => vec![
            "x1",
            "x2",
            "x1*x2",
            "x1^2 - x2",
            "x1^2*x2",
            "x1^3 + x2",
            "sin(x1)",
            "exp(0.3*x2)",
        ],
    };
    texts
        .into_iter()
        .map(|t| crate::expr::parse(t, n, None).expect("default pool parses"))
        .collect()
}

#[derive(Clone, Debug)]
pub struct AuditConfig {
    /// Per-axis sampling intervals; length must match the dimension.
    pub box_: Vec<(f64, f64)>,
    pub samples: usize,
    pub seed: u64,
    /// Worker threads for point evaluation (None = rayon default).
    pub threads: Option<usize>,
    /// Restrict to these identity ids (None = the full catalog).
    pub identities: Option<Vec<String>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
    Reported,
    Skipped,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::Reported => "reported",
            Verdict::Skipped => "skipped",
        }
    }
}

#[derive(Clone, Debug)]
pub struct IdentityResult {
    pub id: String,
    /// Effective class on this scenario: "FORCED" or "REPORTED".
    pub class: String,
    pub samples: usize,
    pub rejected: usize,
    pub max_residual: f64,
    pub mean_residual: f64,
    pub sign_note: String,
    pub verdict: Verdict,
    /// Populated when skipped.
    pub skip_reason: String,
}

impl IdentityResult {
    pub fn verdict_text(&self) -> String {
        if self.verdict == Verdict::Skipped && !self.skip_reason.is_empty() {
            format!("skipped: {}", self.skip_reason)
        } else {
            self.verdict.as_str().to_string()
        }
    }
}

#[derive(Clone, Debug)]
pub struct AuditReport {
    pub scenario: String,
    pub seed: u64,
    pub samples_requested: usize,
    pub results: Vec<IdentityResult>,
    /// Points rejected by the manifold-level canary before any identity ran.
    pub unusable_points: usize,
    pub any_forced_failed: bool,
}

impl AuditReport {
    pub fn result(&self, id: &str) -> Option<&IdentityResult> {
        self.results.iter().find(|r| r.id == id)
    }
}

/// Degeneracies probed from the scenario; they resolve the conditional
/// classifications.
#[derive(Clone, Copy, Debug)]
pub struct ScenarioTraits {
    pub chi_constant: bool,
    pub j_constant: bool,
    pub structure_zero: bool,
    pub structure_constant: bool,
    pub coord_frame: bool,
}

fn probe_traits(scn: &AuditScenario, box_: &[(f64, f64)], seed: u64) -> ScenarioTraits {
    let m = &scn.manifold;
    let mut rng = SplitMix64::new(seed ^ 0xA5A5_A5A5_A5A5_A5A5);
    let mut chi_constant = true;
    let mut j_constant = true;
    let mut structure_zero = true;
    let mut structure_constant = true;
    let mut j_ref: Option<Vec<f64>> = None;
    let mut c_ref: Option<Vec<f64>> = None;
    let mut probed = 0;
    let mut attempts = 0;
    while probed < 12 && attempts < 200 {
        attempts += 1;
        let x = rng.point_in_box(box_);
        let a = match m.structural_derivative(&x) {
            Ok(a) => a,
            Err(_) => continue,
        };
        let j = match m.j_at(x.as_slice()) {
            Ok(j) => j,
            Err(_) => continue,
        };
        let sf = match structure_functions(m, &x) {
            Ok(sf) => sf,
            Err(_) => continue,
        };
        probed += 1;
        if a.iter().any(|v| v.abs() > 1e-12) {
            chi_constant = false;
        }
        match &j_ref {
            None => j_ref = Some(j),
            Some(r) => {
                if r.iter().zip(&j).any(|(a, b)| (a - b).abs() > 1e-12) {
                    j_constant = false;
                }
            }
        }
        if sf.max_abs() > 1e-12 {
            structure_zero = false;
        }
        match &c_ref {
            None => c_ref = Some(sf.c.clone()),
            Some(r) => {
                if r.iter().zip(&sf.c).any(|(a, b)| (a - b).abs() > 1e-9) {
                    structure_constant = false;
                }
            }
        }
    }
    ScenarioTraits {
        chi_constant,
        j_constant,
        structure_zero,
        structure_constant,
        coord_frame: !m.has_frame(),
    }
}

fn is_forced(spec: &IdentitySpec, t: &ScenarioTraits) -> bool {
    match spec.forced_when {
        ForcedWhen::Always => true,
        ForcedWhen::ChiConstant => t.chi_constant,
        ForcedWhen::ChiConstantConstantJ => t.chi_constant && t.j_constant,
        ForcedWhen::ChiConstantCoordFrame => t.chi_constant && t.coord_frame,
        ForcedWhen::ConstantStructure => t.structure_constant,
        ForcedWhen::StructureZero => t.structure_zero,
        ForcedWhen::ChiConstantStructureZero => t.chi_constant && t.structure_zero,
    }
}

/// Per-point evaluation output.
enum PointEval {
    /// (lhs, rhs) pairs, each contributing one normalized residual.
    Pairs(Vec<(f64, f64)>),
    /// (lhs, rhs_plus, rhs_minus) triples for sign audits.
    Signed(Vec<(f64, f64, f64)>),
}

fn rejectable(e: &Error) -> bool {
    matches!(
        e,
        Error::Domain { .. }
            | Error::NonFinite { .. }
            | Error::IllConditioned { .. }
            | Error::NotAntisymmetric { .. }
    )
}

struct PointCtx<'a> {
    scn: &'a AuditScenario,
    x: Vec<f64>,
    f: &'a ScalarExpr,
    g: &'a ScalarExpr,
    h3: &'a ScalarExpr,
    k: &'a ScalarExpr,
    a_const: f64,
    b_const: f64,
}

impl<'a> PointCtx<'a> {
    fn qsu_vector(&self) -> Result<Vec<f64>> {
        match &self.scn.qsu_vector {
            Some(v) => Ok(v.clone()),
            None => crate::dynamics::rhs(
                &self.scn.manifold,
                &self.scn.hamiltonian,
                RhsConvention::NghsLiteral,
                &self.x,
            ),
        }
    }
}

fn evaluate_identity(spec: &IdentitySpec, ctx: &PointCtx) -> Result<PointEval> {
    let m = &ctx.scn.manifold;
    let ham = &ctx.scn.hamiltonian;
    let x = ctx.x.as_slice();
    let n = m.dim();
    match spec.id {
        "I01-gpwb-antisym" => {
            let ab = m.gpwb(ctx.f, ctx.g, x)?;
            let ba = m.gpwb(ctx.g, ctx.f, x)?;
            Ok(PointEval::Pairs(vec![(ab, -ba)]))
        }
        "I02-gpwb-bilinear" => {
            let combo = ScalarExpr::Binary(
                crate::expr::BinOp::Add,
                Box::new(ScalarExpr::product(
                    ScalarExpr::constant(ctx.a_const),
                    ctx.f.clone(),
                )),
                Box::new(ScalarExpr::product(
                    ScalarExpr::constant(ctx.b_const),
                    ctx.g.clone(),
                )),
            );
            let lhs = m.gpwb(&combo, ctx.h3, x)?;
            let rhs = ctx.a_const * m.gpwb(ctx.f, ctx.h3, x)?
                + ctx.b_const * m.gpwb(ctx.g, ctx.h3, x)?;
            Ok(PointEval::Pairs(vec![(lhs, rhs)]))
        }
        "I03-gpwb-gji" => {
            let r = jacobi_residual(m, ctx.f, ctx.g, ctx.h3, x)?;
            Ok(PointEval::Pairs(vec![(r, 0.0)]))
        }
        "I04-thm-le5" => {
            let whole = m.gpwb(ctx.f, ctx.g, x)?;
            let (ghs, xchi) = m.gpwb_decomposed(ctx.f, ctx.g, x)?;
            Ok(PointEval::Pairs(vec![(whole, ghs + xchi)]))
        }
        "I05-leibnitz" => {
            let prod = ScalarExpr::product(ctx.f.clone(), ctx.g.clone());
            let whole = m.gpwb(&prod, ctx.h3, x)?;
            let (ghs, xchi) = m.gpwb_decomposed(&prod, ctx.h3, x)?;
            Ok(PointEval::Pairs(vec![(whole, ghs + xchi)]))
        }
        "I06-thm-t4" => {
            let (lhs, rhs) = m.bracket_xm_expansion(ctx.f, ctx.g, ctx.k, x)?;
            Ok(PointEval::Pairs(vec![(lhs, rhs)]))
        }
        "I07-t4-hamiltonian" => {
            let pair = hamiltonian_specialization(m, ham, ctx.f, ctx.g, x)?;
            Ok(PointEval::Pairs(vec![pair]))
        }
        "I08-energy-pairing" => Ok(PointEval::Pairs(vec![(m.gpwb(ham, ham, x)?, 0.0)])),
        "I09-w-form" => {
            let w = m.w_dynamics(ham, x)?;
            let j = m.j_at(x)?;
            let e = m.frame_at(x)?;
            let a = m.structural_derivative(x)?;
            let (_, dh) = grad_expr(ham, x)?;
            let mut eh = vec![0.0; n];
            for i in 0..n {
                for b in 0..n {
                    eh[i] += e[i * n + b] * dh[b];
                }
            }
            let mut alt = 0.0;
            for i in 0..n {
                for jj in 0..n {
                    alt += j[i * n + jj] * eh[i] * a[jj];
                }
            }
            Ok(PointEval::Pairs(vec![(w, alt)]))
        }
        "I10-claim-cc1" => {
            let mut pairs = Vec::new();
            for i in 0..n {
                for j in (i + 1)..n {
                    pairs.push(curvature_apply(m, i, j, ctx.f, x)?);
                }
            }
            Ok(PointEval::Pairs(pairs))
        }
        "I11-qsu-consistency" => {
            let v = ctx.qsu_vector()?;
            let mut pairs = Vec::new();
            for i in 0..n {
                let via_w = qsu(m, &v, i, ctx.f, x)?;
                let mut via_comm = 0.0;
                for j in 0..n {
                    let (comm, _) = curvature_apply(m, i, j, ctx.f, x)?;
                    via_comm += v[j] * comm;
                }
                pairs.push((via_comm, via_w));
            }
            Ok(PointEval::Pairs(pairs))
        }
        "I12-le1-antisym" => {
            let sf = structure_functions(m, x)?;
            let mut pairs = Vec::new();
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        pairs.push((sf.at(i, j, k), -sf.at(j, i, k)));
                    }
                }
            }
            Ok(PointEval::Pairs(pairs))
        }
        "I13-le1-jacobi" => Ok(PointEval::Pairs(vec![(
            lemma1_jacobi_residual(m, x)?,
            0.0,
        )])),
        "I14-cor-c2-sign" => {
            let sf = structure_functions(m, x)?;
            let u = u_tensor(m, ham, x)?;
            let f = crate::frame::force(m, ham, x)?;
            let mut triples = Vec::new();
            for k in 0..n {
                for j in 0..n {
                    if j == k {
                        continue;
                    }
                    let cf: f64 = (0..n).map(|i| sf.at(k, j, i) * f[i]).sum();
                    triples.push((u[k * n + j], cf, -cf));
                }
            }
            Ok(PointEval::Signed(triples))
        }
        "I15-recip-force-u" => {
            let v = ctx.qsu_vector()?;
            let r = reciprocal_force_check(m, &v, ham, x)?;
            // residuals are already max-over-indices against each sign;
            // fold them into the (lhs, rhs±) shape with lhs = 0
            Ok(PointEval::Signed(vec![(0.0, r.u_plus, r.u_minus)]))
        }
        "I16-recip-force-t" => {
            let v = ctx.qsu_vector()?;
            let t = t_quantity(m, &v, ham, x)?;
            let mut pairs = Vec::new();
            for (i, ti) in t.iter().enumerate() {
                pairs.push((*ti, qsu(m, &v, i, ham, x)?));
            }
            Ok(PointEval::Pairs(pairs))
        }
        "I17-thm-t2-derived" => {
            let d = divergence_identity(m, ham, x)?;
            Ok(PointEval::Pairs(vec![(d.lhs, d.rhs_derived)]))
        }
        "I18-thm-t2-paper" => {
            let d = divergence_identity(m, ham, x)?;
            Ok(PointEval::Pairs(vec![(d.lhs, d.rhs_paper)]))
        }
        "I19-thm-t6" => {
            let t6 = crate::dynamics::t6_identity(m, ham, x)?;
            Ok(PointEval::Pairs(
                t6.lhs.iter().copied().zip(t6.rhs.iter().copied()).collect(),
            ))
        }
        "I20-general-operator" => {
            let res = general_operator_residual(m, ham, ctx.f, x)?;
            Ok(PointEval::Pairs(
                res.into_iter().map(|r| (r, 0.0)).collect(),
            ))
        }
        "I21-reciprocal-tensor-antisym" => {
            let rt = reciprocal_tensor(m, ham, x)?;
            let mut pairs = Vec::new();
            for k in 0..n {
                for j in (k + 1)..n {
                    pairs.push((rt.f[k * n + j], -rt.f[j * n + k]));
                }
            }
            Ok(PointEval::Pairs(pairs))
        }
        "I22-reciprocal-tensor-jk" => {
            let rt = reciprocal_tensor(m, ham, x)?;
            Ok(PointEval::Pairs(
                rt.residual_jk.into_iter().map(|r| (r, 0.0)).collect(),
            ))
        }
        "I23-omega-pairing" => {
            let xh = m.vec_xm(ham, x)?;
            let xf = m.vec_xm(ctx.f, x)?;
            let om = m.omega_pair(&xh, &xf)?;
            let br = m.gpwb(ham, ctx.f, x)?;
            Ok(PointEval::Signed(vec![(om, br, -br)]))
        }
        "I24-transport-law" => {
            let r = transport_residual(m, ham, ctx.f, x, RhsConvention::Transport)?;
            Ok(PointEval::Pairs(vec![(r, 0.0)]))
        }
        "I25-cor-t1" => {
            let (op, ch) = second_order_point(m, ham, ctx.f, x)?;
            Ok(PointEval::Pairs(vec![(op, ch)]))
        }
        other => Err(Error::Config(format!("unknown identity id '{other}'"))),
    }
}

/// `[X_f^M, X_g^M]H - [X_f, X_g]H` paired against the stated expansion
/// `-(2w X_f g + f̂_X(f,g))` with `f̂_X = w X_χ + X_w + X_χ X_H`, operators
/// applied to the pair as `O(f,g) = f·O(g) - g·O(f)`.
fn hamiltonian_specialization(
    m: &PoissonWManifold,
    ham: &ScalarExpr,
    f: &ScalarExpr,
    g: &ScalarExpr,
    x: &[f64],
) -> Result<(f64, f64)> {
    let (_, dh) = grad_expr(ham, x)?;
    let bracket_m =
        crate::manifold::lie_bracket_of(x, |y| m.vec_xm_t(f, y), |y| m.vec_xm_t(g, y))?;
    let bracket_plain =
        crate::manifold::lie_bracket_of(x, |y| m.vec_x_t(f, y), |y| m.vec_x_t(g, y))?;
    let lhs = dot(&bracket_m, &dh) - dot(&bracket_plain, &dh);

    let w = m.w_dynamics(ham, x)?;
    let (_, df) = grad_expr(f, x)?;
    let (_, dg) = grad_expr(g, x)?;
    let xf = m.vec_x_t(f, x)?;
    let xf_g = dot(&xf, &dg);

    let xchi = m.vec_x_chi_t(x)?;
    let xw = m.vec_x_of(x, |y: &[Dual<f64>]| m.w_dynamics_t(ham, y))?;
    // O(q) = w·(X_χ q) + X_w q + X_χ(X_H q)
    let apply_o = |q: &ScalarExpr, dq: &[f64]| -> Result<f64> {
        let xchi_q = dot(&xchi, dq);
        let xw_q = dot(&xw, dq);
        let (_, d_xhq) = crate::manifold::grad_scalar(x, |y: &[Dual<f64>]| {
            let field = m.vec_x_t(ham, y)?;
            let (_, dq_in) = grad_expr(q, y)?;
            let mut s = y[0].lift(0.0);
            for (c, d) in field.into_iter().zip(dq_in) {
                s = s + c * d;
            }
            Ok(s)
        })?;
        let xchi_xh_q = dot(&xchi, &d_xhq);
        Ok(w * xchi_q + xw_q + xchi_xh_q)
    };
    let of = apply_o(f, &df)?;
    let og = apply_o(g, &dg)?;
    let fv = eval_with(f, x)?;
    let gv = eval_with(g, x)?;
    let rhs = 2.0 * w * xf_g + (fv * og - gv * of);
    Ok((lhs, -rhs))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Accum {
    samples: usize,
    rejected: usize,
    max_residual: f64,
    sum_residual: f64,
    count_residual: usize,
    any_forced_violation: bool,
    sign_plus: usize,
    sign_minus: usize,
    sign_degenerate: usize,
    sign_unmatched: usize,
}

impl Accum {
    fn new() -> Self {
        Accum {
            samples: 0,
            rejected: 0,
            max_residual: 0.0,
            sum_residual: 0.0,
            count_residual: 0,
            any_forced_violation: false,
            sign_plus: 0,
            sign_minus: 0,
            sign_degenerate: 0,
            sign_unmatched: 0,
        }
    }

    fn absorb(&mut self, eval: &PointEval, tol: f64, forced: bool) {
        self.samples += 1;
        match eval {
            PointEval::Pairs(pairs) => {
                for &(lhs, rhs) in pairs {
                    let r = normalized_residual(lhs, rhs);
                    self.max_residual = self.max_residual.max(r);
                    self.sum_residual += r;
                    self.count_residual += 1;
                    if forced && r > tol {
                        self.any_forced_violation = true;
                    }
                }
            }
            PointEval::Signed(triples) => {
                let mut point_plus = 0.0f64;
                let mut point_minus = 0.0f64;
                for &(lhs, rhs_plus, rhs_minus) in triples {
                    point_plus = point_plus.max(normalized_residual(lhs, rhs_plus));
                    point_minus = point_minus.max(normalized_residual(lhs, rhs_minus));
                }
                let best = point_plus.min(point_minus);
                self.max_residual = self.max_residual.max(best);
                self.sum_residual += best;
                self.count_residual += 1;
                let plus_ok = point_plus <= tol;
                let minus_ok = point_minus <= tol;
                match (plus_ok, minus_ok) {
                    (true, true) => self.sign_degenerate += 1,
                    (true, false) => self.sign_plus += 1,
                    (false, true) => self.sign_minus += 1,
                    (false, false) => {
                        self.sign_unmatched += 1;
                        if forced {
                            self.any_forced_violation = true;
                        }
                    }
                }
            }
        }
    }

    fn sign_note(&self, is_sign_audit: bool) -> String {
        if !is_sign_audit {
            return String::new();
        }
        match (self.sign_plus > 0, self.sign_minus > 0) {
            (true, true) => "mixed".into(),
            (true, false) => "plus".into(),
            (false, true) => "minus".into(),
            (false, false) => {
                if self.sign_unmatched > 0 {
                    "unmatched".into()
                } else {
                    "degenerate".into()
                }
            }
        }
    }
}

/// Samples the box and evaluates every applicable catalog identity,
/// classifying each as FORCED (pass/fail at its tolerance) or REPORTED.
///
/// Deterministic: the same (scenario, seed, samples) produces the same
/// report regardless of the thread count.
pub fn run_audit(scn: &AuditScenario, cfg: &AuditConfig) -> Result<AuditReport> {
    if cfg.samples == 0 {
        return Err(Error::Config("samples must be at least 1".into()));
    }
    let n = scn.manifold.dim();
    if cfg.box_.len() != n {
        return Err(Error::Dimension(format!(
            "box has {} axes, manifold dimension is {}",
            cfg.box_.len(),
            n
        )));
    }
    if scn.pool.len() < 4 {
        return Err(Error::Config(
            "test-function pool needs at least 4 entries".into(),
        ));
    }
    if let Some(v) = &scn.qsu_vector {
        if v.len() != n {
            return Err(Error::Dimension(format!(
                "qsu vector has {} entries, dimension is {}",
                v.len(),
                n
            )));
        }
    }
    if let Some(filter) = &cfg.identities {
        let known = catalog_ids();
        for id in filter {
            if !known.contains(&id.as_str()) {
                return Err(Error::Config(format!("unknown identity id '{id}'")));
            }
        }
    }

    let traits = probe_traits(scn, &cfg.box_, cfg.seed);
    let active: Vec<&IdentitySpec> = CATALOG
        .iter()
        .filter(|s| {
            cfg.identities
                .as_ref()
                .map(|ids| ids.iter().any(|i| i == s.id))
                .unwrap_or(true)
        })
        .collect();

    let skip: Vec<Option<String>> = active
        .iter()
        .map(|spec| {
            if spec.needs_phase_split && n % 2 != 0 {
                Some(format!("needs even dimension, scenario has n = {n}"))
            } else if spec.needs_canonical && !scn.manifold.is_canonical() {
                Some("needs the canonical structure matrix".into())
            } else {
                None
            }
        })
        .collect();

    let mut rng = SplitMix64::new(cfg.seed);
    let points: Vec<Vec<f64>> = (0..cfg.samples)
        .map(|_| rng.point_in_box(&cfg.box_))
        .collect();

    let pool_len = scn.pool.len();
    let worker = |pair: (usize, &Vec<f64>)| -> (bool, Vec<Option<Result<PointEval>>>) {
        let (index, x) = pair;
        let mut consts = SplitMix64::new(cfg.seed ^ (index as u64).wrapping_mul(0x9E37_79B9));
        let a_const = consts.uniform(-2.0, 2.0);
        let b_const = consts.uniform(-2.0, 2.0);
        let ctx = PointCtx {
            scn,
            x: x.clone(),
            f: &scn.pool[index % pool_len],
            g: &scn.pool[(index + 1 + index / pool_len) % pool_len],
            h3: &scn.pool[(index + 3 + index / (pool_len * pool_len)) % pool_len],
            k: &scn.pool[(index + 5) % pool_len],
            a_const,
            b_const,
        };
        // canary: the base machinery must evaluate at this point at all
        let canary = (|| -> Result<()> {
            let _ = scn.manifold.j_at(x.as_slice())?;
            let _ = scn.manifold.frame_at(x.as_slice())?;
            let _ = scn.manifold.w_dynamics(&scn.hamiltonian, x)?;
            Ok(())
        })();
        if let Err(e) = canary {
            if rejectable(&e) {
                return (false, (0..active.len()).map(|_| None).collect());
            }
        }
        let row = active
            .iter()
            .zip(&skip)
            .map(|(spec, skip_reason)| {
                if skip_reason.is_some() {
                    return None;
                }
                Some(evaluate_identity(spec, &ctx))
            })
            .collect();
        (true, row)
    };

    let rows: Vec<(bool, Vec<Option<Result<PointEval>>>)> = match cfg.threads {
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            pool.install(|| points.par_iter().enumerate().map(worker).collect())
        }
        None => points.par_iter().enumerate().map(worker).collect(),
    };

    // single ordered merge
    let mut unusable = 0usize;
    let mut accums: Vec<Accum> = active.iter().map(|_| Accum::new()).collect();
    for (usable, row) in &rows {
        if !usable {
            unusable += 1;
        }
        for (slot, outcome) in row.iter().enumerate() {
            let spec = active[slot];
            let forced = is_forced(spec, &traits);
            match outcome {
                None => {
                    if skip[slot].is_none() {
                        accums[slot].rejected += 1;
                    }
                }
                Some(Ok(eval)) => accums[slot].absorb(eval, spec.tol, forced),
                Some(Err(e)) if rejectable(e) => accums[slot].rejected += 1,
                Some(Err(e)) => return Err(e.clone()),
            }
        }
    }

    let mut results = Vec::with_capacity(active.len());
    let mut any_forced_failed = false;
    for ((spec, acc), skip_reason) in active.iter().zip(&accums).zip(&skip) {
        let forced = is_forced(spec, &traits);
        let (verdict, skip_text) = if let Some(reason) = skip_reason {
            (Verdict::Skipped, reason.clone())
        } else if acc.samples == 0 {
            (Verdict::Skipped, "no usable sample points".to_string())
        } else if forced {
            let sign_consistent = !(spec.sign_audit && acc.sign_plus > 0 && acc.sign_minus > 0);
            if acc.any_forced_violation || !sign_consistent {
                (Verdict::Fail, String::new())
            } else {
                (Verdict::Pass, String::new())
            }
        } else {
            (Verdict::Reported, String::new())
        };
        if verdict == Verdict::Fail {
            any_forced_failed = true;
        }
        results.push(IdentityResult {
            id: spec.id.to_string(),
            class: if forced { "FORCED" } else { "REPORTED" }.to_string(),
            samples: acc.samples,
            rejected: acc.rejected,
            max_residual: acc.max_residual,
            mean_residual: if acc.count_residual > 0 {
                acc.sum_residual / acc.count_residual as f64
            } else {
                0.0
            },
            sign_note: acc.sign_note(spec.sign_audit),
            verdict,
            skip_reason: skip_text,
        });
    }

    Ok(AuditReport {
        scenario: scn.name.clone(),
        seed: cfg.seed,
        samples_requested: cfg.samples,
        results,
        unusable_points: unusable,
        any_forced_failed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    fn pe(t: &str, n: usize) -> ScalarExpr {
        parse(t, n, None).unwrap()
    }

    fn scenario(chi: &str) -> AuditScenario {
        AuditScenario {
            name: "test".into(),
            manifold: PoissonWManifold::canonical(1, pe(chi, 2)).unwrap(),
            hamiltonian: pe("0.5*(q1^2+p1^2)", 2),
            pool: default_pool(2),
            qsu_vector: None,
        }
    }

    fn config(samples: usize) -> AuditConfig {
        AuditConfig {
            box_: vec![(-1.0, 1.0), (-1.0, 1.0)],
            samples,
            seed: 42,
            threads: None,
            identities: None,
        }
    }

    #[test]
    fn jacobi_residual_reduces_classically() {
        let m = PoissonWManifold::canonical(1, pe("3", 2)).unwrap();
        let f = pe("q1", 2);
        let g = pe("p1", 2);
        let h = pe("q1*p1", 2);
        let r = jacobi_residual(&m, &f, &g, &h, &[0.4, -0.7]).unwrap();
        assert!(r <= 1e-10, "classical Jacobi residual {r}");
        // any equal pair collapses the cyclic sum
        let r = jacobi_residual(&m, &f, &g, &g, &[0.4, -0.7]).unwrap();
        assert!(r <= 1e-10);
    }

    #[test]
    fn jacobi_residual_fd_oracle() {
        // Finite-difference oracle: outer brackets computed with FD
        // gradients of the pointwise inner bracket.
        let m = PoissonWManifold::canonical(1, pe("q1", 2)).unwrap();
        let f = pe("q1", 2);
        let g = pe("p1", 2);
        let h = pe("q1*p1", 2);
        let x = [0.3, 0.6];
        let r = jacobi_residual(&m, &f, &g, &h, &x).unwrap();

        let step = 1e-5;
        let fd_outer = |outer: &ScalarExpr, a: &ScalarExpr, b: &ScalarExpr| -> f64 {
            // {outer, {a,b}} = J_ij D_i outer D_j {a,b}
            let inner = |p: &[f64]| m.gpwb(a, b, p).unwrap();
            let j = m.j_at(x.as_slice()).unwrap();
            let douter = m.covariant_d(outer, &x).unwrap();
            let aa = m.structural_derivative(&x).unwrap();
            let inner0 = inner(&x);
            let mut dinner = vec![0.0; 2];
            for (idx, slot) in dinner.iter_mut().enumerate() {
                let mut xp = x;
                let mut xm = x;
                xp[idx] += step;
                xm[idx] -= step;
                *slot = (inner(&xp) - inner(&xm)) / (2.0 * step) + aa[idx] * inner0;
            }
            let mut s = 0.0;
            for i in 0..2 {
                for jj in 0..2 {
                    s += j[i * 2 + jj] * douter[i] * dinner[jj];
                }
            }
            s
        };
        let r_fd = (fd_outer(&f, &g, &h) + fd_outer(&g, &h, &f) + fd_outer(&h, &f, &g)).abs();
        assert!((r - r_fd).abs() <= 1e-5, "jets {r} vs fd {r_fd}");
    }

    #[test]
    fn gji_vanishes_in_two_dimensions_but_not_four() {
        // On n = 2 with the canonical matrix and coordinate frame the cyclic
        // sum collapses identically (2x2-minor Plücker relation), whatever χ
        // is; in n = 4 the obstruction is real.
        let m2 = PoissonWManifold::canonical(1, pe("0.7*q1 + 0.2*p1", 2)).unwrap();
        let r2 = jacobi_residual(
            &m2,
            &pe("q1^2*p1", 2),
            &pe("p1^2 - q1", 2),
            &pe("sin(q1)*p1", 2),
            &[0.4, -0.6],
        )
        .unwrap();
        assert!(r2 <= 1e-12, "n=2 GJI residual {r2}");

        let m4 = PoissonWManifold::canonical(2, pe("0.3*q1", 4)).unwrap();
        let r4 = jacobi_residual(
            &m4,
            &pe("q1*p2", 4),
            &pe("p1", 4),
            &pe("q2", 4),
            &[0.4, -0.6, 0.3, 0.8],
        )
        .unwrap();
        assert!(r4 > 1e-3, "n=4 GJI residual should be visible, got {r4}");
    }

    #[test]
    fn abelian_scenario_all_pass_tightly() {
        let report = run_audit(&scenario("0"), &config(60)).unwrap();
        assert!(!report.any_forced_failed);
        for r in &report.results {
            if r.verdict == Verdict::Skipped {
                continue;
            }
            assert_eq!(r.verdict, Verdict::Pass, "{}: {:?}", r.id, r);
            assert!(r.max_residual <= 1e-10, "{}: {}", r.id, r.max_residual);
        }
    }

    #[test]
    fn chi_scenario_reports_gji() {
        let report = run_audit(&scenario("0.3*q1"), &config(80)).unwrap();
        assert!(!report.any_forced_failed);
        let gji = report.result("I03-gpwb-gji").unwrap();
        assert_eq!(gji.class, "REPORTED");
        assert_eq!(gji.verdict, Verdict::Reported);
        let forced = report.result("I04-thm-le5").unwrap();
        assert_eq!(forced.verdict, Verdict::Pass);
        // omega pairing is canonical here: minus convention named
        let om = report.result("I23-omega-pairing").unwrap();
        assert_eq!(om.sign_note, "minus");
        assert_eq!(om.verdict, Verdict::Pass);
    }

    #[test]
    fn four_dimensional_scenario_shows_gji_violation() {
        let scn = AuditScenario {
            name: "phase4".into(),
            manifold: PoissonWManifold::canonical(2, pe("0.3*q1 + 0.1*p2", 4)).unwrap(),
            hamiltonian: pe("0.5*(q1^2+p1^2+q2^2+p2^2) + 0.1*q1^2*q2", 4),
            pool: default_pool(4),
            qsu_vector: None,
        };
        let cfg = AuditConfig {
            box_: vec![(-1.0, 1.0); 4],
            samples: 60,
            seed: 7,
            threads: None,
            identities: None,
        };
        let report = run_audit(&scn, &cfg).unwrap();
        assert!(!report.any_forced_failed);
        let gji = report.result("I03-gpwb-gji").unwrap();
        assert_eq!(gji.verdict, Verdict::Reported);
        assert!(
            gji.max_residual > 1e-9,
            "n=4 GJI residual {}",
            gji.max_residual
        );
    }

    #[test]
    fn corrupted_structural_derivative_fails_forced() {
        // The override must carry curl (A = (p1, 0) is no gradient), else
        // the curvature identities stay intact.
        let manifold = PoissonWManifold::canonical(1, pe("0.3*q1", 2))
            .unwrap()
            .with_structural_derivative_override(vec![pe("p1", 2), pe("0", 2)])
            .unwrap();
        let scn = AuditScenario {
            name: "corrupt".into(),
            manifold,
            hamiltonian: pe("0.5*(q1^2+p1^2)", 2),
            pool: default_pool(2),
            qsu_vector: None,
        };
        let report = run_audit(&scn, &config(40)).unwrap();
        assert!(report.any_forced_failed);
        let cc1 = report.result("I10-claim-cc1").unwrap();
        assert_eq!(cc1.verdict, Verdict::Fail);
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let scn = scenario("0.3*q1");
        let mut cfg = config(50);
        cfg.threads = Some(1);
        let a = run_audit(&scn, &cfg).unwrap();
        cfg.threads = Some(4);
        let b = run_audit(&scn, &cfg).unwrap();
        assert_eq!(a.results.len(), b.results.len());
        for (ra, rb) in a.results.iter().zip(&b.results) {
            assert_eq!(ra.id, rb.id);
            assert_eq!(ra.samples, rb.samples);
            assert_eq!(ra.max_residual.to_bits(), rb.max_residual.to_bits());
            assert_eq!(ra.mean_residual.to_bits(), rb.mean_residual.to_bits());
            assert_eq!(ra.verdict, rb.verdict);
        }
    }

    #[test]
    fn zero_samples_rejected() {
        let err = run_audit(&scenario("0"), &config(0)).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn catalog_is_complete_and_unique() {
        let expected = [
            "I01-gpwb-antisym",
            "I02-gpwb-bilinear",
            "I03-gpwb-gji",
            "I04-thm-le5",
            "I05-leibnitz",
            "I06-thm-t4",
            "I07-t4-hamiltonian",
            "I08-energy-pairing",
            "I09-w-form",
            "I10-claim-cc1",
            "I11-qsu-consistency",
            "I12-le1-antisym",
            "I13-le1-jacobi",
            "I14-cor-c2-sign",
            "I15-recip-force-u",
            "I16-recip-force-t",
            "I17-thm-t2-derived",
            "I18-thm-t2-paper",
            "I19-thm-t6",
            "I20-general-operator",
            "I21-reciprocal-tensor-antisym",
            "I22-reciprocal-tensor-jk",
            "I23-omega-pairing",
            "I24-transport-law",
            "I25-cor-t1",
        ];
        let ids = catalog_ids();
        assert_eq!(ids, expected);
        let mut sorted = ids.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), ids.len(), "duplicate identity ids");
    }

    #[test]
    fn identity_filter_restricts_catalog() {
        let mut cfg = config(10);
        cfg.identities = Some(vec![
            "I01-gpwb-antisym".to_string(),
            "I08-energy-pairing".to_string(),
        ]);
        let report = run_audit(&scenario("0.3*q1"), &cfg).unwrap();
        assert_eq!(report.results.len(), 2);
        cfg.identities = Some(vec!["bogus".to_string()]);
        assert!(run_audit(&scenario("0"), &cfg).is_err());
    }
}
