//! Exponential control barrier functions for affine predicates, per-term
//! time-minimum lower bounds, and the β slack decomposition used to certify
//! invariance over whole control intervals.

use milp::{MilpModel, Sense, VarId};
use nalgebra::DVector;

use crate::error::{CstlError, Result};
use crate::lindyn::{FlowExpansion, LinearSystem};
use crate::stl::AffinePredicate;

pub const REL_DEGREE_TOL: f64 = 1e-10;

/// ECBF gain schedule; the relative degree equals the gain count.
#[derive(Debug, Clone)]
pub struct EcbfSpec {
    pub gains: Vec<f64>,
}

impl EcbfSpec {
    pub fn new(gains: Vec<f64>) -> Result<Self> {
        if gains.is_empty() || gains.iter().any(|&k| !(k > 0.0)) {
            return Err(CstlError::Config("ECBF gains must be positive".into()));
        }
        Ok(Self { gains })
    }

    pub fn r_b(&self) -> usize {
        self.gains.len()
    }
}

/// Smallest `r` with `νᵀA^{r-1}B ≠ 0`.
pub fn relative_degree(pred: &AffinePredicate, sys: &LinearSystem) -> Result<usize> {
    let mut row = pred.nu.transpose();
    for r in 1..=sys.n() {
        let cross = &row * &sys.b;
        if cross.iter().any(|v| v.abs() > REL_DEGREE_TOL) {
            return Ok(r);
        }
        row *= &sys.a;
    }
    Err(CstlError::Uncontrollable(format!(
        "predicate direction [{}] never reaches the input within {} derivatives",
        pred.nu
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(", "),
        sys.n()
    )))
}

/// Chain `Ψ_0 .. Ψ_{r_b-1}` as affine state functionals `(w_i, c_i)` with
/// `Ψ_i(x) = w_iᵀx + c_i`; inputs do not appear below the relative degree.
pub fn ecbf_psi_chain(
    pred: &AffinePredicate,
    sys: &LinearSystem,
    spec: &EcbfSpec,
) -> Result<Vec<(DVector<f64>, f64)>> {
    check_degree(pred, sys, spec)?;
    let mut chain = vec![(pred.nu.clone(), pred.gamma)];
    for i in 1..spec.r_b() {
        let (w, c) = chain.last().unwrap();
        // Ψ_i = Ψ̇_{i-1} + k_i Ψ_{i-1}
        let next = (sys.a.transpose() * w + w * spec.gains[i - 1], spec.gains[i - 1] * c);
        chain.push(next);
    }
    Ok(chain)
}

/// Final ECBF condition `Ψ_{r_b} = wᵀx + u_dirᵀu + w0 ≥ 0`.
pub fn build_ecbf_functional(
    pred: &AffinePredicate,
    sys: &LinearSystem,
    spec: &EcbfSpec,
) -> Result<(DVector<f64>, f64, DVector<f64>)> {
    let chain = ecbf_psi_chain(pred, sys, spec)?;
    let (w_prev, c_prev) = chain.last().unwrap();
    let k_last = *spec.gains.last().unwrap();
    let w = sys.a.transpose() * w_prev + w_prev * k_last;
    let u_dir = (w_prev.transpose() * &sys.b).transpose();
    Ok((w, k_last * c_prev, u_dir))
}

fn check_degree(pred: &AffinePredicate, sys: &LinearSystem, spec: &EcbfSpec) -> Result<()> {
    let r = relative_degree(pred, sys)?;
    if r != spec.r_b() {
        return Err(CstlError::Config(format!(
            "{} ECBF gains supplied but the predicate has relative degree {r}",
            spec.r_b()
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Per-term time-minimum bounds
// ---------------------------------------------------------------------------

/// Extremal factors of `g(t) = e^{λt} tʲ` over `[0, τ]`; the minimum of
/// `c·g(t)` is `c·act` for `c ≤ 0` and `c·min` for `c ≥ 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GFactors {
    pub act: f64,
    pub min: f64,
}

pub fn g_factors(lambda: f64, j: usize, tau: f64) -> GFactors {
    let ji = j as i32;
    let act = if lambda >= 0.0 {
        (lambda * tau).exp() * tau.powi(ji)
    } else if j == 0 {
        1.0
    } else {
        let t_star = (-(j as f64) / lambda).min(tau);
        (lambda * t_star).exp() * t_star.powi(ji)
    };
    let min = if j >= 1 {
        0.0
    } else if lambda >= 0.0 {
        1.0
    } else {
        (lambda * tau).exp()
    };
    GFactors { act, min }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    State,
    Input,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignCase {
    /// `cᵀv ≤ 0`; the time minimum scales the worst (largest) value of g.
    Active,
    /// `cᵀv ≥ 0`; the time minimum scales the smallest value of g.
    Inactive,
}

/// One lower-bound case for one term of a flow expansion.
#[derive(Debug, Clone)]
pub struct TermBound {
    pub term: usize,
    pub part: Part,
    pub case: SignCase,
    /// Multiply `cᵀx_k` (resp. `cᵀu_k`) by this to lower-bound
    /// `cᵀv · e^{λt} tʲ` for all `t ∈ [0, τ]` under the case's sign.
    pub factor: f64,
}

pub fn term_lower_bounds(exp: &FlowExpansion, tau: f64) -> Vec<TermBound> {
    let mut out = Vec::new();
    for (idx, tm) in exp.terms.iter().enumerate() {
        let g = g_factors(tm.lambda, tm.j, tau);
        for (part, coeffs) in [(Part::State, &tm.c_x), (Part::Input, &tm.c_u)] {
            if coeffs.iter().any(|&c| c != 0.0) {
                out.push(TermBound {
                    term: idx,
                    part,
                    case: SignCase::Active,
                    factor: g.act,
                });
                out.push(TermBound {
                    term: idx,
                    part,
                    case: SignCase::Inactive,
                    factor: g.min,
                });
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// β split emission
// ---------------------------------------------------------------------------

/// One x- or u-part of a flow-expansion term, expressed over MILP variables.
#[derive(Debug, Clone)]
pub struct SplitTerm {
    /// Linear form `cᵀv` in decision variables.
    pub coeff: Vec<(VarId, f64)>,
    pub g: GFactors,
}

/// Emits β slacks, the budget equality `Σβ = σ`, and the per-term extremal
/// bounds `g·cᵀv + β ≥ 0` for both factors. Because
/// `min_t cᵀv·g(t) = min(g_act·cᵀv, g_min·cᵀv)` for either sign of `cᵀv`,
/// the pair of rows captures the per-term minimum exactly without any sign
/// case split. Rows are relaxed unless every binary in `gates` is 1.
/// Returns the β variable ids.
pub fn beta_split_constraints(
    model: &mut MilpModel,
    terms: &[SplitTerm],
    sigma: f64,
    gates: &[VarId],
    big_m: f64,
    prefix: &str,
) -> Vec<VarId> {
    let betas: Vec<VarId> = (0..terms.len())
        .map(|i| model.add_continuous(&format!("{prefix}_beta{i}"), f64::NEG_INFINITY, f64::INFINITY))
        .collect();
    model.add_constraint(
        &format!("{prefix}_budget"),
        betas.iter().map(|&b| (b, 1.0)).collect(),
        Sense::Eq,
        sigma,
    );
    for (i, term) in terms.iter().enumerate() {
        for (tag, f) in [("cuta", term.g.act), ("cutm", term.g.min)] {
            let mut rows: Vec<(VarId, f64)> =
                term.coeff.iter().map(|&(v, c)| (v, c * f)).collect();
            rows.push((betas[i], 1.0));
            let mut rhs = 0.0;
            for &g in gates {
                rows.push((g, -big_m));
                rhs -= big_m;
            }
            model.add_constraint(&format!("{prefix}_{tag}{i}"), rows, Sense::Ge, rhs);
        }
    }
    betas
}
