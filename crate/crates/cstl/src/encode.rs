//! Assembly of the full mixed-integer model: big-M boolean encoding over
//! active instants, ECBF interval constraints for Always, witness lower
//! bounds for Eventually, exact ZOH dynamics, control bounds and L1 cost.

use milp::{MilpModel, Sense, VarId};
use nalgebra::DVector;

use crate::cbf::{
    beta_split_constraints, build_ecbf_functional, ecbf_psi_chain, g_factors, relative_degree,
    EcbfSpec, SplitTerm,
};
use crate::error::{CstlError, Result};
use crate::lindyn::{expand_along_flow, zoh_discretize, FlowExpansion, JordanForm, LinearSystem};
use crate::reach::{eval_poly, lipschitz_bound, taylor_envelopes, witness_times};
use crate::stl::{AffinePredicate, StlFormula, TimeBoundSet};

pub const INSTANT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundMethod {
    Taylor,
    Lipschitz,
}

#[derive(Debug, Clone)]
pub struct EncodingOptions {
    pub big_m: f64,
    /// Gain pool; each Always-predicate takes the first `r_b` entries.
    pub gains: Vec<f64>,
    pub method: BoundMethod,
    pub witness_density: usize,
    pub u_l: DVector<f64>,
    pub u_u: DVector<f64>,
    /// State box, required by the Lipschitz route; also tightens variables.
    pub x_max: Option<DVector<f64>>,
    /// Disables interval CBF constraints and witness bounds (discretization
    /// baseline; solutions are only guaranteed at the active instants).
    pub instant_only: bool,
}

impl EncodingOptions {
    pub fn defaults(u_l: DVector<f64>, u_u: DVector<f64>, gains: Vec<f64>) -> Self {
        Self {
            big_m: 1e5,
            gains,
            method: BoundMethod::Taylor,
            witness_density: 2,
            u_l,
            u_u,
            x_max: None,
            instant_only: false,
        }
    }
}

/// Assembled model plus the variable layout needed to read a plan back.
#[derive(Debug)]
pub struct Encoded {
    pub model: MilpModel,
    /// `x_vars[k][i]`: state i at instant k.
    pub x_vars: Vec<Vec<VarId>>,
    /// `u_vars[k][i]`: input i held on `[t_k, t_{k+1})`.
    pub u_vars: Vec<Vec<VarId>>,
    pub root: VarId,
    /// Linear forms whose magnitude must stay below 0.9·M for the big-M
    /// relaxations to be trustworthy: (label, row, constant, M).
    m_checked: Vec<(String, Vec<(VarId, f64)>, f64, f64)>,
}

impl Encoded {
    /// Controls of a feasible assignment, as `(t_k, u_k)` pairs.
    pub fn extract_controls(&self, instants: &[f64], x: &[f64]) -> Vec<(f64, DVector<f64>)> {
        self.u_vars
            .iter()
            .enumerate()
            .map(|(k, vars)| {
                (
                    instants[k],
                    DVector::from_iterator(vars.len(), vars.iter().map(|&VarId(j)| x[j])),
                )
            })
            .collect()
    }

    pub fn extract_states(&self, x: &[f64]) -> Vec<DVector<f64>> {
        self.x_vars
            .iter()
            .map(|vars| DVector::from_iterator(vars.len(), vars.iter().map(|&VarId(j)| x[j])))
            .collect()
    }

    /// Labels of big-M-relaxed forms whose magnitude exceeds 0.9·M at the
    /// solution (a warning that M should be enlarged).
    pub fn big_m_warnings(&self, x: &[f64]) -> Vec<String> {
        self.m_checked
            .iter()
            .filter_map(|(label, row, c, m)| {
                let v: f64 = row.iter().map(|&(VarId(j), a)| a * x[j]).sum::<f64>() + c;
                (v.abs() > 0.9 * m).then(|| format!("{label}: |{v:.3}| near big-M {m:.3}"))
            })
            .collect()
    }
}

struct Encoder<'a> {
    sys: &'a LinearSystem,
    jf: &'a JordanForm,
    instants: &'a [f64],
    x0: &'a DVector<f64>,
    opts: &'a EncodingOptions,
    model: MilpModel,
    x_vars: Vec<Vec<VarId>>,
    u_vars: Vec<Vec<VarId>>,
    m_checked: Vec<(String, Vec<(VarId, f64)>, f64, f64)>,
    fresh: usize,
    /// Elementwise bound on |x_k| from interval propagation of the input box;
    /// sizes the per-row big-M constants and the state variable bounds.
    xb: Vec<DVector<f64>>,
    /// Elementwise bound on |u_k|.
    ub: DVector<f64>,
}

pub fn assemble(
    sys: &LinearSystem,
    jf: &JordanForm,
    x0: &DVector<f64>,
    formula: &StlFormula,
    instants: &TimeBoundSet,
    opts: &EncodingOptions,
) -> Result<Encoded> {
    let t = instants.as_slice();
    if t.len() < 2 {
        return Err(CstlError::Problem("need at least two active instants".into()));
    }
    if x0.len() != sys.n() {
        return Err(CstlError::Dimension("x0 dimension mismatch".into()));
    }
    if opts.u_l.len() != sys.m()
        || opts.u_u.len() != sys.m()
        || opts.u_l.iter().zip(opts.u_u.iter()).any(|(l, u)| l > u)
    {
        return Err(CstlError::Config("invalid control bounds".into()));
    }
    if opts.method == BoundMethod::Lipschitz && opts.x_max.is_none() && !opts.instant_only {
        return Err(CstlError::Config(
            "lipschitz bound method requires x_max in the problem file".into(),
        ));
    }
    let ub = DVector::from_fn(sys.m(), |r, _| opts.u_l[r].abs().max(opts.u_u[r].abs()));
    let mut xb = vec![x0.abs()];
    for w in t.windows(2) {
        let step = zoh_discretize(sys, jf, w[1] - w[0])?;
        let prev = xb.last().unwrap();
        xb.push(step.a_k.abs() * prev + step.b_k.abs() * &ub);
    }
    let mut enc = Encoder {
        sys,
        jf,
        instants: t,
        x0,
        opts,
        model: MilpModel::default(),
        x_vars: Vec::new(),
        u_vars: Vec::new(),
        m_checked: Vec::new(),
        fresh: 0,
        xb,
        ub,
    };
    enc.declare_variables(x0);
    enc.dynamics()?;
    enc.objective();
    let root = enc.encode_node(formula, 0)?;
    enc.model
        .add_constraint("root", vec![(root, 1.0)], Sense::Ge, 1.0);
    enc.model.validate().map_err(CstlError::Milp)?;
    Ok(Encoded {
        model: enc.model,
        x_vars: enc.x_vars,
        u_vars: enc.u_vars,
        root,
        m_checked: enc.m_checked,
    })
}

impl<'a> Encoder<'a> {
    fn fresh(&mut self, tag: &str) -> String {
        self.fresh += 1;
        format!("{tag}{}", self.fresh)
    }

    fn declare_variables(&mut self, x0: &DVector<f64>) {
        let k_count = self.instants.len();
        for k in 0..k_count {
            let mut row = Vec::new();
            for i in 0..self.sys.n() {
                let (lo, hi) = if k == 0 {
                    (x0[i], x0[i])
                } else {
                    let mut b = self.xb[k][i];
                    if let Some(xm) = &self.opts.x_max {
                        b = b.min(xm[i]);
                    }
                    (-b, b)
                };
                row.push(self.model.add_continuous(format!("x_{k}_{i}"), lo, hi));
            }
            self.x_vars.push(row);
        }
        for k in 0..k_count - 1 {
            let mut row = Vec::new();
            for i in 0..self.sys.m() {
                row.push(self.model.add_continuous(
                    format!("u_{k}_{i}"),
                    self.opts.u_l[i],
                    self.opts.u_u[i],
                ));
            }
            self.u_vars.push(row);
        }
    }

    fn dynamics(&mut self) -> Result<()> {
        for k in 0..self.instants.len() - 1 {
            let tau = self.instants[k + 1] - self.instants[k];
            let step = zoh_discretize(self.sys, self.jf, tau)?;
            for i in 0..self.sys.n() {
                let mut row = vec![(self.x_vars[k + 1][i], 1.0)];
                for j in 0..self.sys.n() {
                    row.push((self.x_vars[k][j], -step.a_k[(i, j)]));
                }
                for j in 0..self.sys.m() {
                    row.push((self.u_vars[k][j], -step.b_k[(i, j)]));
                }
                self.model
                    .add_constraint(format!("dyn_{k}_{i}"), row, Sense::Eq, 0.0);
            }
        }
        Ok(())
    }

    fn objective(&mut self) {
        let mut obj = Vec::new();
        for k in 0..self.u_vars.len() {
            for i in 0..self.sys.m() {
                let s = self
                    .model
                    .add_continuous(format!("abs_u_{k}_{i}"), 0.0, f64::INFINITY);
                let u = self.u_vars[k][i];
                self.model.add_constraint(
                    format!("abs_p_{k}_{i}"),
                    vec![(s, 1.0), (u, -1.0)],
                    Sense::Ge,
                    0.0,
                );
                self.model.add_constraint(
                    format!("abs_n_{k}_{i}"),
                    vec![(s, 1.0), (u, 1.0)],
                    Sense::Ge,
                    0.0,
                );
                obj.push((s, 1.0));
            }
        }
        self.model.set_objective(obj);
    }

    /// Instant indices inside `[lo, hi]`.
    fn covered(&self, lo: f64, hi: f64) -> Vec<usize> {
        (0..self.instants.len())
            .filter(|&j| {
                self.instants[j] >= lo - INSTANT_TOL && self.instants[j] <= hi + INSTANT_TOL
            })
            .collect()
    }

    /// Interval indices whose intersection with `[lo, hi]` has positive length.
    fn overlapping_intervals(&self, lo: f64, hi: f64) -> Vec<usize> {
        (0..self.instants.len() - 1)
            .filter(|&i| {
                self.instants[i].max(lo) + INSTANT_TOL < self.instants[i + 1].min(hi)
            })
            .collect()
    }

    fn pred_row(&self, p: &AffinePredicate, k: usize) -> Vec<(VarId, f64)> {
        p.nu
            .iter()
            .enumerate()
            .filter(|(_, &c)| c != 0.0)
            .map(|(i, &c)| (self.x_vars[k][i], c))
            .collect()
    }

    // -- boolean layer ------------------------------------------------------

    /// Smallest safe relaxation constant for a row whose activity magnitude
    /// never exceeds `bound` at any dynamically consistent point.
    fn row_m(&self, bound: f64) -> f64 {
        (1.0 + 1.25 * bound).min(self.opts.big_m)
    }

    /// Bound on `|c_xᵀx_i + c_uᵀu_i|` over the reachable box.
    fn term_bound(&self, tm: &crate::lindyn::FlowTerm, i: usize) -> f64 {
        let mut b = 0.0;
        for (r, &c) in tm.c_x.iter().enumerate() {
            b += c.abs() * self.xb[i][r];
        }
        for (r, &c) in tm.c_u.iter().enumerate() {
            b += c.abs() * self.ub[r];
        }
        b
    }

    fn encode_node(&mut self, f: &StlFormula, k: usize) -> Result<VarId> {
        match f {
            StlFormula::True => {
                let name = self.fresh("ztrue");
                Ok(self.model.add_fixed_binary(name, 1.0))
            }
            StlFormula::Pred(p) => {
                let name = self.fresh("zp");
                // The initial state is pinned, so its predicate values are
                // data, not decisions.
                if k == 0 {
                    let h = p.eval(self.x0);
                    let v = if h >= 0.0 { 1.0 } else { 0.0 };
                    return Ok(self.model.add_fixed_binary(name, v));
                }
                let z = self.model.add_binary(&name);
                let m = self.row_m(
                    p.nu
                        .iter()
                        .enumerate()
                        .map(|(i, &c)| c.abs() * self.xb[k][i])
                        .sum::<f64>()
                        + p.gamma.abs(),
                );
                // h(x_k) ≤ M z  and  -h(x_k) ≤ M(1-z)
                let row = self.pred_row(p, k);
                let mut le = row.clone();
                le.push((z, -m));
                self.model
                    .add_constraint(format!("{name}_le"), le, Sense::Le, -p.gamma);
                let mut ge: Vec<(VarId, f64)> = row.iter().map(|&(v, c)| (v, -c)).collect();
                ge.push((z, m));
                self.model
                    .add_constraint(format!("{name}_ge"), ge, Sense::Le, p.gamma + m);
                self.m_checked
                    .push((format!("{name} at t={}", self.instants[k]), row, p.gamma, m));
                Ok(z)
            }
            StlFormula::Not(g) => {
                let zc = self.encode_node(g, k)?;
                let name = self.fresh("znot");
                let z = self.model.add_binary(&name);
                self.model
                    .add_constraint(name, vec![(z, 1.0), (zc, 1.0)], Sense::Eq, 1.0);
                Ok(z)
            }
            StlFormula::And(cs) => {
                let zs = cs
                    .iter()
                    .map(|c| self.encode_node(c, k))
                    .collect::<Result<Vec<_>>>()?;
                self.and_gate(&zs)
            }
            StlFormula::Or(cs) => {
                let zs = cs
                    .iter()
                    .map(|c| self.encode_node(c, k))
                    .collect::<Result<Vec<_>>>()?;
                self.or_gate(&zs)
            }
            StlFormula::Eventually { a, b, child } => self.encode_eventually(*a, *b, child, k),
            StlFormula::Always { a, b, child } => self.encode_always(*a, *b, child, k),
            StlFormula::Until { a, b, left, right } => self.encode_until(*a, *b, left, right, k),
        }
    }

    fn and_gate(&mut self, zs: &[VarId]) -> Result<VarId> {
        if zs.is_empty() {
            let name = self.fresh("zand");
            return Ok(self.model.add_fixed_binary(name, 1.0));
        }
        let name = self.fresh("zand");
        let z = self.model.add_binary(&name);
        for (i, &zi) in zs.iter().enumerate() {
            self.model.add_constraint(
                format!("{name}_le{i}"),
                vec![(z, 1.0), (zi, -1.0)],
                Sense::Le,
                0.0,
            );
        }
        let mut row = vec![(z, 1.0)];
        row.extend(zs.iter().map(|&zi| (zi, -1.0)));
        self.model.add_constraint(
            format!("{name}_ge"),
            row,
            Sense::Ge,
            1.0 - zs.len() as f64,
        );
        Ok(z)
    }

    fn or_gate(&mut self, zs: &[VarId]) -> Result<VarId> {
        if zs.is_empty() {
            let name = self.fresh("zor");
            return Ok(self.model.add_fixed_binary(name, 0.0));
        }
        let name = self.fresh("zor");
        let z = self.model.add_binary(&name);
        for (i, &zi) in zs.iter().enumerate() {
            self.model.add_constraint(
                format!("{name}_ge{i}"),
                vec![(z, 1.0), (zi, -1.0)],
                Sense::Ge,
                0.0,
            );
        }
        let mut row = vec![(z, 1.0)];
        row.extend(zs.iter().map(|&zi| (zi, -1.0)));
        self.model.add_constraint(format!("{name}_le"), row, Sense::Le, 0.0);
        Ok(z)
    }

    // -- Eventually ---------------------------------------------------------

    fn encode_eventually(
        &mut self,
        a: f64,
        b: f64,
        child: &StlFormula,
        k: usize,
    ) -> Result<VarId> {
        let (lo, hi) = (self.instants[k] + a, self.instants[k] + b);
        let mut disjuncts = Vec::new();
        for j in self.covered(lo, hi) {
            disjuncts.push(self.encode_node(child, j)?);
        }
        if !self.opts.instant_only {
            if let Some(preds) = conj_preds(child) {
                for i in self.overlapping_intervals(lo, hi) {
                    let z = self.witness_block(&preds, i, lo, hi)?;
                    disjuncts.extend(z);
                }
            }
        }
        if disjuncts.is_empty() {
            return Err(CstlError::EncodingGap(format!(
                "eventually window [{lo}, {hi}] has no active instant or witness"
            )));
        }
        self.or_gate(&disjuncts)
    }

    /// Witness binaries for interval `i` covering `[lo, hi]`: each claims
    /// `h̲_q(s_w) ≥ 0` for every predicate `q` at its witness time.
    fn witness_block(
        &mut self,
        preds: &[&AffinePredicate],
        i: usize,
        lo: f64,
        hi: f64,
    ) -> Result<Vec<VarId>> {
        let tau = self.instants[i + 1] - self.instants[i];
        let times = witness_times(
            (lo, hi),
            (self.instants[i], self.instants[i + 1]),
            self.opts.witness_density,
        );
        let mut out = Vec::new();
        for t_w in times {
            let s = t_w - self.instants[i];
            let wname = self.fresh("zw");
            let z_w = self.model.add_binary(&wname);
            for (qi, p) in preds.iter().enumerate() {
                let exp = expand_along_flow(
                    self.sys,
                    self.jf,
                    &p.nu,
                    p.gamma,
                    &DVector::zeros(self.sys.m()),
                    0.0,
                )?;
                let bound_row = match self.opts.method {
                    BoundMethod::Taylor => self.taylor_rows(&exp, i, s, tau, &wname, qi)?,
                    BoundMethod::Lipschitz => self.lipschitz_row(&exp, i, s, tau)?,
                };
                // Σ bound + σ-part ≥ -M(1-z_w)
                let (mut row, cst, m) = bound_row;
                row.push((z_w, -m));
                self.model.add_constraint(
                    format!("{wname}_q{qi}"),
                    row,
                    Sense::Ge,
                    -cst - m,
                );
            }
            out.push(z_w);
        }
        Ok(out)
    }

    /// Per-term auxiliaries `y ≤` both envelope forms (with per-term sign
    /// binaries); returns the row `Σ y`, the constant `σ`, and the local
    /// relaxation constant sized for these rows.
    fn taylor_rows(
        &mut self,
        exp: &FlowExpansion,
        i: usize,
        s: f64,
        tau: f64,
        prefix: &str,
        qi: usize,
    ) -> Result<(Vec<(VarId, f64)>, f64, f64)> {
        let m = self.row_m(
            exp.sigma.abs()
                + exp
                    .terms
                    .iter()
                    .map(|tm| {
                        let env = taylor_envelopes(tm.lambda, tm.j, tau);
                        let amp = 1.0
                            + eval_poly(&env.upper, s).abs()
                            + eval_poly(&env.lower, s).abs();
                        amp * self.term_bound(tm, i)
                    })
                    .sum::<f64>(),
        );
        let mut row = Vec::new();
        for (ti, tm) in exp.terms.iter().enumerate() {
            let env = taylor_envelopes(tm.lambda, tm.j, tau);
            let up = eval_poly(&env.upper, s);
            let low = eval_poly(&env.lower, s);
            let coeff = self.term_form(tm, i);
            let tag = format!("{prefix}_q{qi}t{ti}");
            let y = self
                .model
                .add_continuous(format!("{tag}_y"), f64::NEG_INFINITY, f64::INFINITY);
            // y ≤ min(φ⁻·cᵀv, φ⁺·cᵀv) is a valid (and tight) lower-bound
            // surrogate for cᵀv·e^{λs}sʲ whichever sign cᵀv takes, so no
            // sign case split is needed.
            for (suffix, factor) in [("ub", up), ("lb", low)] {
                let mut r: Vec<(VarId, f64)> =
                    coeff.iter().map(|&(v, c)| (v, c * factor)).collect();
                r.push((y, -1.0));
                self.model
                    .add_constraint(format!("{tag}_{suffix}"), r, Sense::Ge, 0.0);
            }
            self.m_checked
                .push((format!("{tag} term form"), coeff, 0.0, m));
            row.push((y, 1.0));
        }
        Ok((row, exp.sigma, m))
    }

    fn lipschitz_row(
        &mut self,
        exp: &FlowExpansion,
        i: usize,
        s: f64,
        tau: f64,
    ) -> Result<(Vec<(VarId, f64)>, f64, f64)> {
        let xm = self
            .opts
            .x_max
            .as_ref()
            .ok_or_else(|| CstlError::Config("lipschitz route requires x_max".into()))?;
        let um = DVector::from_fn(self.sys.m(), |r, _| {
            self.opts.u_l[r].abs().max(self.opts.u_u[r].abs())
        });
        let lb = lipschitz_bound(exp, xm, &um, tau)?;
        let mut row = Vec::new();
        let mut mag = 0.0;
        for r in 0..self.sys.n() {
            let c = lb.h0_x[r] + s * lb.hd_x[r];
            mag += c.abs() * self.xb[i][r].min(xm[r]);
            if c != 0.0 {
                row.push((self.x_vars[i][r], c));
            }
        }
        for r in 0..self.sys.m() {
            let c = lb.h0_u[r] + s * lb.hd_u[r];
            mag += c.abs() * self.ub[r];
            if c != 0.0 {
                row.push((self.u_vars[i][r], c));
            }
        }
        let cst = lb.h0_c - 0.5 * s * s * lb.l;
        let m = self.row_m(mag + cst.abs());
        Ok((row, cst, m))
    }

    /// Linear form `c_xᵀx_i + c_uᵀu_i` of one flow term.
    fn term_form(&self, tm: &crate::lindyn::FlowTerm, i: usize) -> Vec<(VarId, f64)> {
        let mut out = Vec::new();
        for (r, &c) in tm.c_x.iter().enumerate() {
            if c != 0.0 {
                out.push((self.x_vars[i][r], c));
            }
        }
        for (r, &c) in tm.c_u.iter().enumerate() {
            if c != 0.0 {
                out.push((self.u_vars[i][r], c));
            }
        }
        out
    }

    // -- Always -------------------------------------------------------------

    fn encode_always(&mut self, a: f64, b: f64, child: &StlFormula, k: usize) -> Result<VarId> {
        let (lo, hi) = (self.instants[k] + a, self.instants[k] + b);
        let covered = self.covered(lo, hi);
        let intervals = self.overlapping_intervals(lo, hi);
        let continuous = !self.opts.instant_only && !intervals.is_empty();
        if covered.is_empty() && !(continuous && conj_preds(child).is_some()) {
            return Err(CstlError::EncodingGap(format!(
                "always window [{lo}, {hi}] has no active instant"
            )));
        }
        let zs = covered
            .iter()
            .map(|&j| self.encode_node(child, j))
            .collect::<Result<Vec<_>>>()?;
        let z_g = self.and_gate(&zs)?;
        if !continuous {
            return Ok(z_g);
        }
        if let Some(preds) = conj_preds(child) {
            for &i in &intervals {
                for p in &preds {
                    self.interval_cbf(p, i, &[z_g])?;
                }
            }
        } else if let Some(disj) = disj_preds(child) {
            for &i in &intervals {
                let name = self.fresh("sel");
                let sels: Vec<VarId> = (0..disj.len())
                    .map(|d| self.model.add_binary(format!("{name}_{d}")))
                    .collect();
                // at least one disjunct's CBF holds whenever z_G = 1
                let mut row: Vec<(VarId, f64)> = sels.iter().map(|&s| (s, 1.0)).collect();
                row.push((z_g, -1.0));
                self.model
                    .add_constraint(format!("{name}_pick"), row, Sense::Ge, 0.0);
                for (d, p) in disj.iter().enumerate() {
                    self.interval_cbf(p, i, &[sels[d]])?;
                }
            }
        }
        // Nested temporal children rely on their own recursive encodings.
        Ok(z_g)
    }

    /// ECBF invariance of predicate `p` over interval `i`: initial chain
    /// conditions at the interval start plus the β-split minimum of Ψ_{r_b}
    /// along the flow, all relaxed unless every gate binary is 1.
    fn interval_cbf(&mut self, p: &AffinePredicate, i: usize, gates: &[VarId]) -> Result<()> {
        let tau = self.instants[i + 1] - self.instants[i];
        let r_b = relative_degree(p, self.sys)?;
        if self.opts.gains.len() < r_b {
            return Err(CstlError::Config(format!(
                "predicate needs {r_b} ECBF gains but only {} provided",
                self.opts.gains.len()
            )));
        }
        let spec = EcbfSpec::new(self.opts.gains[..r_b].to_vec())?;
        let name = self.fresh("cbf");
        for (pidx, (w, c)) in ecbf_psi_chain(p, self.sys, &spec)?.iter().enumerate() {
            let mut row: Vec<(VarId, f64)> = w
                .iter()
                .enumerate()
                .filter(|(_, &cv)| cv != 0.0)
                .map(|(r, &cv)| (self.x_vars[i][r], cv))
                .collect();
            let m = self.row_m(
                w.iter()
                    .enumerate()
                    .map(|(r, &cv)| cv.abs() * self.xb[i][r])
                    .sum::<f64>()
                    + c.abs(),
            );
            let mut rhs = -c;
            for &g in gates {
                row.push((g, -m));
                rhs -= m;
            }
            self.model
                .add_constraint(format!("{name}_psi{pidx}"), row, Sense::Ge, rhs);
        }
        let (w, w0, u_dir) = build_ecbf_functional(p, self.sys, &spec)?;
        let exp = expand_along_flow(self.sys, self.jf, &w, w0, &u_dir, 0.0)?;
        let split: Vec<SplitTerm> = exp
            .terms
            .iter()
            .map(|tm| SplitTerm {
                coeff: self.term_form(tm, i),
                g: g_factors(tm.lambda, tm.j, tau),
            })
            .collect();
        // One local M covers every β-split row: the budget equality couples
        // the β variables, so each row's slack is bounded by the sum of
        // per-term amplitudes rather than any single term's.
        let m = self.row_m(
            exp.sigma.abs()
                + exp
                    .terms
                    .iter()
                    .zip(&split)
                    .map(|(tm, sp)| {
                        (1.0 + sp.g.act.abs() + sp.g.min.abs()) * self.term_bound(tm, i)
                    })
                    .sum::<f64>(),
        );
        for tm in &exp.terms {
            self.m_checked
                .push((format!("{name} flow term"), self.term_form(tm, i), 0.0, m));
        }
        beta_split_constraints(&mut self.model, &split, exp.sigma, gates, m, &name);
        Ok(())
    }

    // -- Until --------------------------------------------------------------

    fn encode_until(
        &mut self,
        a: f64,
        b: f64,
        left: &StlFormula,
        right: &StlFormula,
        k: usize,
    ) -> Result<VarId> {
        let (lo, hi) = (self.instants[k] + a, self.instants[k] + b);
        let window = self.covered(lo, hi);
        if window.is_empty() {
            return Err(CstlError::EncodingGap(format!(
                "until window [{lo}, {hi}] has no active instant"
            )));
        }
        let mut pairs = Vec::new();
        for &j in &window {
            let mut parts = vec![self.encode_node(right, j)?];
            for jj in self.covered(self.instants[k], self.instants[j]) {
                parts.push(self.encode_node(left, jj)?);
            }
            let z_pair = self.and_gate(&parts)?;
            // CBF protection of the prefix [t_k, t_j] when the left operand
            // is a predicate (or conjunction of predicates).
            if !self.opts.instant_only {
                if let Some(preds) = conj_preds(left) {
                    for i in self.overlapping_intervals(self.instants[k], self.instants[j]) {
                        for p in &preds {
                            self.interval_cbf(p, i, &[z_pair])?;
                        }
                    }
                }
            }
            pairs.push(z_pair);
        }
        self.or_gate(&pairs)
    }
}

/// Flattens a conjunction of affine predicates; `True` members are dropped.
pub fn conj_preds(f: &StlFormula) -> Option<Vec<&AffinePredicate>> {
    match f {
        StlFormula::True => Some(vec![]),
        StlFormula::Pred(p) => Some(vec![p]),
        StlFormula::And(cs) => {
            let mut out = Vec::new();
            for c in cs {
                out.extend(conj_preds(c)?);
            }
            Some(out)
        }
        _ => None,
    }
}

/// Flattens a disjunction of affine predicates (at least two members).
pub fn disj_preds(f: &StlFormula) -> Option<Vec<&AffinePredicate>> {
    match f {
        StlFormula::Or(cs) if cs.len() >= 2 => {
            let mut out = Vec::new();
            for c in cs {
                match c {
                    StlFormula::Pred(p) => out.push(p),
                    _ => return None,
                }
            }
            Some(out)
        }
        _ => None,
    }
}
