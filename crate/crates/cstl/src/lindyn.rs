//! Linear plant model, real Jordan decomposition, exact ZOH discretization,
//! and expansion of affine functionals along the closed-form flow.

use nalgebra::{DMatrix, DVector};

use crate::error::{CstlError, Result};

pub const JORDAN_TOL_DEFAULT: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl LinearSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() {
            return Err(CstlError::Dimension("A must be square".into()));
        }
        if b.nrows() != a.nrows() {
            return Err(CstlError::Dimension(format!(
                "B has {} rows but A is {}x{}",
                b.nrows(),
                a.nrows(),
                a.ncols()
            )));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(CstlError::Dimension("non-finite entry in A or B".into()));
        }
        Ok(Self { a, b })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }
}

/// Real Jordan decomposition `A = V J V^{-1}` with `blocks[i] = (lambda_i, s_i)`.
#[derive(Debug, Clone)]
pub struct JordanForm {
    pub v: DMatrix<f64>,
    pub v_inv: DMatrix<f64>,
    pub blocks: Vec<(f64, usize)>,
}

impl JordanForm {
    /// Builds the form from user-supplied data, validating the reconstruction.
    pub fn from_parts(
        a: &DMatrix<f64>,
        v: DMatrix<f64>,
        blocks: Vec<(f64, usize)>,
        tol: f64,
    ) -> Result<Self> {
        let n = a.nrows();
        if blocks.iter().map(|&(_, s)| s).sum::<usize>() != n {
            return Err(CstlError::Dimension("Jordan block sizes must sum to n".into()));
        }
        let v_inv = v
            .clone()
            .try_inverse()
            .ok_or(CstlError::IllConditioned { cond: f64::INFINITY })?;
        let jf = Self { v, v_inv, blocks };
        let scale = inf_norm(a).max(1.0);
        let residual = inf_norm(&(&jf.v * jf.j_matrix() * &jf.v_inv - a));
        if residual > tol * scale * 1e3 {
            let cond = inf_norm(&jf.v) * inf_norm(&jf.v_inv);
            return Err(CstlError::IllConditioned { cond });
        }
        Ok(jf)
    }

    pub fn n(&self) -> usize {
        self.v.nrows()
    }

    /// Offsets of each block's first row/column.
    pub fn offsets(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.blocks.len());
        let mut o = 0;
        for &(_, s) in &self.blocks {
            out.push(o);
            o += s;
        }
        out
    }

    pub fn j_matrix(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut j = DMatrix::zeros(n, n);
        for (&(lam, s), o) in self.blocks.iter().zip(self.offsets()) {
            for r in 0..s {
                j[(o + r, o + r)] = lam;
                if r + 1 < s {
                    j[(o + r, o + r + 1)] = 1.0;
                }
            }
        }
        j
    }

    /// `e^{Jt}`, closed form per block.
    pub fn exp_j(&self, t: f64) -> DMatrix<f64> {
        let n = self.n();
        let mut e = DMatrix::zeros(n, n);
        for (&(lam, s), o) in self.blocks.iter().zip(self.offsets()) {
            let elt = (lam * t).exp();
            for r in 0..s {
                for q in 0..s - r {
                    e[(o + r, o + r + q)] = elt * t.powi(q as i32) / factorial(q);
                }
            }
        }
        e
    }

    /// `∫₀^t e^{Js} ds`, closed form per block.
    pub fn int_exp_j(&self, t: f64) -> DMatrix<f64> {
        let n = self.n();
        let mut e = DMatrix::zeros(n, n);
        for (&(lam, s), o) in self.blocks.iter().zip(self.offsets()) {
            for r in 0..s {
                for q in 0..s - r {
                    e[(o + r, o + r + q)] = int_exp_poly(lam, t, q);
                }
            }
        }
        e
    }
}

fn factorial(q: usize) -> f64 {
    (1..=q).map(|k| k as f64).product()
}

pub fn inf_norm(m: &DMatrix<f64>) -> f64 {
    (0..m.nrows())
        .map(|r| m.row(r).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `F_q(t) = ∫₀^t e^{λs} s^q / q! ds`.
fn int_exp_poly(lam: f64, t: f64, q: usize) -> f64 {
    if lam == 0.0 {
        return t.powi(q as i32 + 1) / factorial(q + 1);
    }
    let mut f = ((lam * t).exp() - 1.0) / lam;
    for p in 1..=q {
        f = ((lam * t).exp() * t.powi(p as i32) / factorial(p) - f) / lam;
    }
    f
}

// ---------------------------------------------------------------------------
// Decomposition
// ---------------------------------------------------------------------------

fn singular_values(m: &DMatrix<f64>) -> DVector<f64> {
    m.clone().svd(false, false).singular_values
}

fn rank_of(m: &DMatrix<f64>, rtol: f64) -> usize {
    let sv = singular_values(m);
    let smax = sv.max();
    sv.iter().filter(|&&s| s > rtol * smax.max(1.0)).count()
}

fn nullspace(m: &DMatrix<f64>, rtol: f64) -> Vec<DVector<f64>> {
    let svd = m.clone().svd(false, true);
    let v_t = svd.v_t.unwrap();
    let smax = svd.singular_values.max();
    let thresh = rtol * smax.max(1.0);
    let mut out = Vec::new();
    for i in 0..svd.singular_values.len() {
        if svd.singular_values[i] <= thresh {
            out.push(v_t.row(i).transpose());
        }
    }
    out
}

fn extends_span(span: &[DVector<f64>], cand: &DVector<f64>, rtol: f64) -> bool {
    if span.is_empty() {
        return cand.norm() > rtol;
    }
    let n = cand.len();
    let mut m = DMatrix::zeros(n, span.len() + 1);
    for (c, v) in span.iter().enumerate() {
        m.set_column(c, v);
    }
    m.set_column(span.len(), cand);
    rank_of(&m, rtol) == span.len() + 1
}

/// Computes a real Jordan decomposition of `sys.a`.
///
/// Complex spectra are rejected; eigenvalues closer than
/// `tol * max(1, ‖A‖∞)` are clustered into one Jordan structure determined by
/// rank tests of `(A - λI)^p`.
pub fn jordan_decompose(sys: &LinearSystem, tol: f64) -> Result<JordanForm> {
    let a = &sys.a;
    let n = sys.n();
    let scale = inf_norm(a).max(1.0);
    let eigs = a.clone().complex_eigenvalues();
    for e in eigs.iter() {
        if e.im.abs() > tol.sqrt() * scale {
            return Err(CstlError::UnsupportedSpectrum(format!(
                "complex eigenvalue {} + {}i",
                e.re, e.im
            )));
        }
    }
    let mut re: Vec<f64> = eigs.iter().map(|e| e.re).collect();
    re.sort_by(|x, y| x.partial_cmp(y).unwrap());
    // Cluster close eigenvalues; a cluster is represented by its mean.
    let gap = (tol * scale).max(1e-7 * scale);
    let mut clusters: Vec<(f64, usize)> = Vec::new();
    let mut start = 0;
    for i in 1..=re.len() {
        if i == re.len() || re[i] - re[i - 1] > gap {
            let mu = i - start;
            let mean = re[start..i].iter().sum::<f64>() / mu as f64;
            clusters.push((mean, mu));
            start = i;
        }
    }

    let rtol = 1e-7;
    let mut columns: Vec<DVector<f64>> = Vec::new();
    let mut blocks: Vec<(f64, usize)> = Vec::new();
    for &(lam, mu) in &clusters {
        let nmat = a - DMatrix::<f64>::identity(n, n) * lam;
        // Nullspace filtration K_p = ker(N^p) up to dimension mu.
        let mut kers: Vec<Vec<DVector<f64>>> = vec![Vec::new()];
        let mut pow = DMatrix::<f64>::identity(n, n);
        loop {
            pow = &pow * &nmat;
            let k = nullspace(&pow, rtol);
            let done = k.len() >= mu;
            kers.push(k);
            if done {
                break;
            }
            if kers.len() > n {
                return Err(CstlError::UnsupportedSpectrum(format!(
                    "degenerate Jordan structure at eigenvalue {lam}"
                )));
            }
        }
        let pmax = kers.len() - 1;
        // Build chains from the top level down.
        let mut carried: Vec<DVector<f64>> = Vec::new();
        for p in (1..=pmax).rev() {
            let mut span: Vec<DVector<f64>> = kers[p - 1].clone();
            span.extend(carried.iter().cloned());
            let mut tops: Vec<DVector<f64>> = Vec::new();
            for cand in &kers[p] {
                if extends_span(&span, cand, rtol) {
                    span.push(cand.clone());
                    tops.push(cand.clone());
                }
            }
            for top in &tops {
                let mut chain = vec![top.clone()];
                for _ in 1..p {
                    let next = &nmat * chain.last().unwrap();
                    chain.push(next);
                }
                chain.reverse(); // eigenvector first
                columns.extend(chain);
                blocks.push((lam, p));
            }
            carried.extend(tops);
            carried = carried.iter().map(|v| &nmat * v).collect();
        }
    }
    if columns.len() != n {
        return Err(CstlError::IllConditioned { cond: f64::INFINITY });
    }
    let mut v = DMatrix::zeros(n, n);
    for (c, col) in columns.iter().enumerate() {
        v.set_column(c, col);
    }
    let jf = JordanForm::from_parts(a, v, blocks, tol)?;
    let cond = inf_norm(&jf.v) * inf_norm(&jf.v_inv);
    if cond > 1.0 / tol {
        return Err(CstlError::IllConditioned { cond });
    }
    Ok(jf)
}

// ---------------------------------------------------------------------------
// ZOH discretization and propagation
// ---------------------------------------------------------------------------

/// One exact ZOH step: `x[t_{k+1}] = a_k x[t_k] + b_k u[t_k]`.
#[derive(Debug, Clone)]
pub struct ZohStep {
    pub a_k: DMatrix<f64>,
    pub b_k: DMatrix<f64>,
    pub tau: f64,
}

pub fn zoh_discretize(sys: &LinearSystem, jf: &JordanForm, tau: f64) -> Result<ZohStep> {
    if tau <= 0.0 {
        return Err(CstlError::Config(format!("nonpositive step {tau}")));
    }
    let a_k = &jf.v * jf.exp_j(tau) * &jf.v_inv;
    let b_k = &jf.v * jf.int_exp_j(tau) * &jf.v_inv * &sys.b;
    Ok(ZohStep { a_k, b_k, tau })
}

/// Exact state at relative time `t` into a ZOH interval.
pub fn flow_state(
    sys: &LinearSystem,
    jf: &JordanForm,
    x_k: &DVector<f64>,
    u_k: &DVector<f64>,
    t: f64,
) -> DVector<f64> {
    &jf.v * jf.exp_j(t) * &jf.v_inv * x_k + &jf.v * jf.int_exp_j(t) * &jf.v_inv * &sys.b * u_k
}

/// Samples the exact piecewise-ZOH trajectory at resolution `grid_dt`,
/// always including the control breakpoints and `t_end`.
pub fn propagate_dense(
    sys: &LinearSystem,
    jf: &JordanForm,
    x0: &DVector<f64>,
    controls: &[(f64, DVector<f64>)],
    t_end: f64,
    grid_dt: f64,
) -> Result<Vec<(f64, DVector<f64>)>> {
    if grid_dt <= 0.0 {
        return Err(CstlError::Config(format!("nonpositive grid step {grid_dt}")));
    }
    if controls.is_empty() {
        return Err(CstlError::Config("empty control sequence".into()));
    }
    for w in controls.windows(2) {
        if w[1].0 <= w[0].0 {
            return Err(CstlError::Config("control instants must be increasing".into()));
        }
    }
    let mut out = Vec::new();
    let mut x = x0.clone();
    for (k, (t_k, u_k)) in controls.iter().enumerate() {
        let t_next = controls.get(k + 1).map_or(t_end, |c| c.0);
        if t_next <= *t_k {
            break;
        }
        let span = t_next - t_k;
        let steps = (span / grid_dt).ceil().max(1.0) as usize;
        for s in 0..steps {
            let dt = span * s as f64 / steps as f64;
            out.push((t_k + dt, flow_state(sys, jf, &x, u_k, dt)));
        }
        x = flow_state(sys, jf, &x, u_k, span);
        if k + 1 == controls.len() || controls[k + 1].0 >= t_end {
            out.push((t_next, x.clone()));
            break;
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Flow expansion
// ---------------------------------------------------------------------------

/// One exponential-polynomial term `(c_xᵀx_k + c_uᵀu_k) e^{λt} tʲ`.
#[derive(Debug, Clone)]
pub struct FlowTerm {
    pub lambda: f64,
    pub j: usize,
    pub c_x: DVector<f64>,
    pub c_u: DVector<f64>,
}

/// Affine functional expanded along the ZOH flow:
/// `σ + Σ (c_xᵀx_k + c_uᵀu_k) e^{λt} tʲ`, relative time `t ∈ [0, τ]`.
#[derive(Debug, Clone)]
pub struct FlowExpansion {
    pub sigma: f64,
    pub terms: Vec<FlowTerm>,
}

impl FlowExpansion {
    pub fn eval(&self, x_k: &DVector<f64>, u_k: &DVector<f64>, t: f64) -> f64 {
        self.sigma
            + self
                .terms
                .iter()
                .map(|tm| {
                    (tm.c_x.dot(x_k) + tm.c_u.dot(u_k))
                        * (tm.lambda * t).exp()
                        * t.powi(tm.j as i32)
                })
                .sum::<f64>()
    }

    /// Derivative of the expansion with respect to `t`.
    pub fn eval_dot(&self, x_k: &DVector<f64>, u_k: &DVector<f64>, t: f64) -> f64 {
        self.terms
            .iter()
            .map(|tm| {
                let c = tm.c_x.dot(x_k) + tm.c_u.dot(u_k);
                let e = (tm.lambda * t).exp();
                let jf = if tm.j == 0 {
                    0.0
                } else {
                    tm.j as f64 * t.powi(tm.j as i32 - 1)
                };
                c * e * (tm.lambda * t.powi(tm.j as i32) + jf)
            })
            .sum()
    }
}

struct TermAccum {
    n: usize,
    m: usize,
    // keyed by (lambda bits, power) to merge exactly-equal exponents
    map: Vec<((u64, usize), FlowTerm)>,
}

impl TermAccum {
    fn new(n: usize, m: usize) -> Self {
        Self { n, m, map: Vec::new() }
    }

    fn entry(&mut self, lambda: f64, j: usize) -> &mut FlowTerm {
        let key = (lambda.to_bits(), j);
        if let Some(pos) = self.map.iter().position(|(k, _)| *k == key) {
            return &mut self.map[pos].1;
        }
        self.map.push((
            key,
            FlowTerm {
                lambda,
                j,
                c_x: DVector::zeros(self.n),
                c_u: DVector::zeros(self.m),
            },
        ));
        &mut self.map.last_mut().unwrap().1
    }

    fn finish(self) -> Vec<FlowTerm> {
        let mut terms: Vec<FlowTerm> = self
            .map
            .into_iter()
            .map(|(_, t)| t)
            .filter(|t| t.c_x.iter().chain(t.c_u.iter()).any(|&c| c != 0.0))
            .collect();
        terms.sort_by(|a, b| {
            a.lambda
                .partial_cmp(&b.lambda)
                .unwrap()
                .then(a.j.cmp(&b.j))
        });
        terms
    }
}

/// Expands `wᵀx(t) + u_coeffᵀu_k + w0 + u0` along the ZOH flow from
/// `(x_k, u_k)` into exponential-polynomial form.
pub fn expand_along_flow(
    sys: &LinearSystem,
    jf: &JordanForm,
    w: &DVector<f64>,
    w0: f64,
    u_coeff: &DVector<f64>,
    u0: f64,
) -> Result<FlowExpansion> {
    let (n, m) = (sys.n(), sys.m());
    if w.len() != n || u_coeff.len() != m {
        return Err(CstlError::Dimension("functional dimensions mismatch".into()));
    }
    let p = (w.transpose() * &jf.v).transpose(); // p_r = (wᵀV)_r
    let g = &jf.v_inv * &sys.b;
    let mut acc = TermAccum::new(n, m);

    // Direct u_k dependence and constants live in a λ=0, j=0 term / σ.
    if u_coeff.iter().any(|&c| c != 0.0) {
        acc.entry(0.0, 0).c_u += u_coeff;
    }
    for (&(lam, s), o) in jf.blocks.iter().zip(jf.offsets()) {
        for r in 0..s {
            let pr = p[o + r];
            if pr == 0.0 {
                continue;
            }
            for q in 0..s - r {
                // State part: entry (r, r+q) of e^{Jt} is e^{λt} t^q / q!.
                let row = jf.v_inv.row(o + r + q);
                let tm = acc.entry(lam, q);
                for c in 0..n {
                    tm.c_x[c] += pr * row[c] / factorial(q);
                }
                // Input part: F_q(t) expanded on the {e^{λt} t^d, 1} basis.
                let grow = g.row(o + r + q).clone_owned();
                if lam == 0.0 {
                    let tm = acc.entry(0.0, q + 1);
                    for c in 0..m {
                        tm.c_u[c] += pr * grow[c] / factorial(q + 1);
                    }
                } else {
                    for d in 0..=q {
                        let coef = neg_pow(q - d) / (factorial(d) * lam.powi((q - d + 1) as i32));
                        let tm = acc.entry(lam, d);
                        for c in 0..m {
                            tm.c_u[c] += pr * grow[c] * coef;
                        }
                    }
                    let coef = neg_pow(q + 1) / lam.powi((q + 1) as i32);
                    let tm = acc.entry(0.0, 0);
                    for c in 0..m {
                        tm.c_u[c] += pr * grow[c] * coef;
                    }
                }
            }
        }
    }
    Ok(FlowExpansion {
        sigma: w0 + u0,
        terms: acc.finish(),
    })
}

fn neg_pow(k: usize) -> f64 {
    if k % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}
