//! Continuous-time lower bounds h̲(t) ≤ h(x(t)) used for Eventually
//! constraints: a Lipschitz/descent-lemma route and a Taylor/secant route,
//! plus witness-time scheduling.

use nalgebra::DVector;

use crate::error::{CstlError, Result};
use crate::lindyn::FlowExpansion;

/// Sparse polynomial in `t`: list of `(power, coefficient)`.
pub type Poly = Vec<(usize, f64)>;

pub fn eval_poly(p: &Poly, t: f64) -> f64 {
    p.iter().map(|&(j, c)| c * t.powi(j as i32)).sum()
}

/// Polynomial envelopes of `g(t) = e^{λt} tʲ` on `[0, τ]`:
/// `lower(t) ≤ g(t) ≤ upper(t)`. Scaling by `cᵀv` turns `upper` into the
/// term's lower bound when `cᵀv ≤ 0` and `lower` when `cᵀv ≥ 0`.
#[derive(Debug, Clone)]
pub struct TermEnvelopes {
    pub upper: Poly,
    pub lower: Poly,
}

pub fn taylor_envelopes(lambda: f64, j: usize, tau: f64) -> TermEnvelopes {
    let upper = if lambda > 0.0 && j >= 1 {
        // secant through (0,0) and (τ, e^{λτ}τʲ); e^{λt}t^{j-1} is increasing
        vec![(1, (lambda * tau).exp() * tau.powi(j as i32 - 1))]
    } else if lambda > 0.0 {
        // chord over the convex exponential
        vec![(0, 1.0), (1, ((lambda * tau).exp() - 1.0) / tau)]
    } else {
        // alternating-series truncation: 1 + λt + λ²t²/2 ≥ e^{λt} for λ ≤ 0
        vec![(j, 1.0), (j + 1, lambda), (j + 2, lambda * lambda / 2.0)]
    };
    let lower = if lambda <= 0.0 {
        // first-order Taylor under-estimate of the convex exponential
        vec![(j, 1.0), (j + 1, lambda)]
    } else if j == 0 {
        // truncated series lower-bounds e^{λt} for λ ≥ 0
        vec![(0, 1.0), (1, lambda), (2, lambda * lambda / 2.0)]
    } else {
        vec![(j, 1.0)]
    };
    TermEnvelopes { upper, lower }
}

/// Descent-lemma bound `h(0) + t·ḣ(0) − t²L/2 ≤ h(x(t))` on `[0, τ]`.
///
/// `h(0)` and `ḣ(0)` are affine in `(x_k, u_k)`; `L` bounds `|ḧ|` using the
/// box limits `|x| ≤ x_max`, `|u| ≤ u_max`.
#[derive(Debug, Clone)]
pub struct LipschitzBound {
    pub h0_x: DVector<f64>,
    pub h0_u: DVector<f64>,
    pub h0_c: f64,
    pub hd_x: DVector<f64>,
    pub hd_u: DVector<f64>,
    pub l: f64,
}

impl LipschitzBound {
    pub fn eval(&self, x_k: &DVector<f64>, u_k: &DVector<f64>, t: f64) -> f64 {
        self.h0_x.dot(x_k)
            + self.h0_u.dot(u_k)
            + self.h0_c
            + t * (self.hd_x.dot(x_k) + self.hd_u.dot(u_k))
            - 0.5 * t * t * self.l
    }
}

pub fn lipschitz_bound(
    exp: &FlowExpansion,
    x_max: &DVector<f64>,
    u_max: &DVector<f64>,
    tau: f64,
) -> Result<LipschitzBound> {
    if x_max.iter().chain(u_max.iter()).any(|&v| !(v > 0.0)) {
        return Err(CstlError::Config(
            "lipschitz bound requires positive x_max/u_max".into(),
        ));
    }
    let n = x_max.len();
    let m = u_max.len();
    let mut out = LipschitzBound {
        h0_x: DVector::zeros(n),
        h0_u: DVector::zeros(m),
        h0_c: exp.sigma,
        hd_x: DVector::zeros(n),
        hd_u: DVector::zeros(m),
        l: 0.0,
    };
    for tm in &exp.terms {
        if tm.c_x.len() != n || tm.c_u.len() != m {
            return Err(CstlError::Dimension("box bound dimensions mismatch".into()));
        }
        if tm.j == 0 {
            out.h0_x += &tm.c_x;
            out.h0_u += &tm.c_u;
            out.hd_x += &tm.c_x * tm.lambda;
            out.hd_u += &tm.c_u * tm.lambda;
        } else if tm.j == 1 {
            out.hd_x += &tm.c_x;
            out.hd_u += &tm.c_u;
        }
        // |d²/dt² e^{λt}tʲ| ≤ e^{max(0,λτ)}(λ²τʲ + 2|λ|jτ^{j-1} + j(j-1)τ^{j-2})
        let lam = tm.lambda;
        let ji = tm.j as f64;
        let mut env = lam * lam * tau.powi(tm.j as i32);
        if tm.j >= 1 {
            env += 2.0 * lam.abs() * ji * tau.powi(tm.j as i32 - 1);
        }
        if tm.j >= 2 {
            env += ji * (ji - 1.0) * tau.powi(tm.j as i32 - 2);
        }
        env *= (lam.max(0.0) * tau).exp();
        let amp = tm.c_x.amax_dot(x_max) + tm.c_u.amax_dot(u_max);
        out.l += amp * env;
    }
    Ok(out)
}

trait AmaxDot {
    fn amax_dot(&self, bound: &DVector<f64>) -> f64;
}

impl AmaxDot for DVector<f64> {
    fn amax_dot(&self, bound: &DVector<f64>) -> f64 {
        self.iter().zip(bound.iter()).map(|(c, b)| c.abs() * b).sum()
    }
}

/// `W` equally spaced points in `window ∩ interval` (absolute seconds),
/// including the left endpoint; empty when the sets are disjoint.
pub fn witness_times(window: (f64, f64), interval: (f64, f64), w: usize) -> Vec<f64> {
    let lo = window.0.max(interval.0);
    let hi = window.1.min(interval.1);
    if lo > hi + 1e-12 || w == 0 {
        return Vec::new();
    }
    if w == 1 || hi - lo <= 1e-12 {
        return vec![lo];
    }
    (0..w)
        .map(|k| lo + (hi - lo) * k as f64 / (w - 1) as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lindyn::{expand_along_flow, jordan_decompose, LinearSystem};
    use approx::assert_abs_diff_eq;
    use nalgebra::{dmatrix, dvector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn envelope_spot_checks() {
        // c = -1, λ = 1, j = 1, τ = 1: bound -e·t; value at 0.5 below the term
        let env = taylor_envelopes(1.0, 1, 1.0);
        let b = -eval_poly(&env.upper, 0.5);
        let truth = -(0.5f64 * 0.5f64.exp());
        assert_abs_diff_eq!(b, -0.5 * 1f64.exp(), epsilon = 1e-9);
        assert!(b <= truth + 1e-12);

        // c = 1, λ = -1, j = 0: bound 1 - t
        let env = taylor_envelopes(-1.0, 0, 2.0);
        assert_eq!(env.lower, vec![(0, 1.0), (1, -1.0)]);
        for g in 0..=100 {
            let t = 2.0 * g as f64 / 100.0;
            assert!(eval_poly(&env.lower, t) <= (-t as f64).exp() + 1e-12);
        }

        // c = -1, λ = -1, j = 0: bound -(1 - t + t²/2)
        for g in 0..=100 {
            let t = 2.0 * g as f64 / 100.0;
            assert!(-eval_poly(&env.upper, t) <= -(-t as f64).exp() + 1e-12);
        }
    }

    #[test]
    fn envelopes_valid_on_dense_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..2000 {
            let lambda = rng.gen_range(-3.0..3.0);
            let j = rng.gen_range(0..4usize);
            let tau = rng.gen_range(0.05..2.5);
            let env = taylor_envelopes(lambda, j, tau);
            for g in 0..=200 {
                let t = tau * g as f64 / 200.0;
                let truth = (lambda * t).exp() * t.powi(j as i32);
                let tol = 1e-9 * truth.abs().max(1.0);
                assert!(
                    eval_poly(&env.lower, t) <= truth + tol,
                    "lower λ={lambda} j={j} τ={tau} t={t}"
                );
                assert!(
                    eval_poly(&env.upper, t) >= truth - tol,
                    "upper λ={lambda} j={j} τ={tau} t={t}"
                );
            }
            // Exactness at the interval start.
            let at0 = if j == 0 { 1.0 } else { 0.0 };
            assert_abs_diff_eq!(eval_poly(&env.lower, 0.0), at0, epsilon = 1e-12);
            if !(lambda > 0.0 && j >= 1) {
                assert_abs_diff_eq!(eval_poly(&env.upper, 0.0), at0, epsilon = 1e-12);
            }
        }
    }

    fn double_integrator_expansion() -> (LinearSystem, FlowExpansion) {
        let sys =
            LinearSystem::new(dmatrix![0.0, 1.0; 0.0, 0.0], dmatrix![0.0; 1.0]).unwrap();
        let jf = jordan_decompose(&sys, 1e-8).unwrap();
        let exp = expand_along_flow(&sys, &jf, &dvector![1.0, 0.0], 0.0, &dvector![0.0], 0.0)
            .unwrap();
        (sys, exp)
    }

    #[test]
    fn lipschitz_double_integrator() {
        let (_, exp) = double_integrator_expansion();
        let lb = lipschitz_bound(&exp, &dvector![100.0, 100.0], &dvector![10.0], 2.0).unwrap();
        assert_abs_diff_eq!(lb.l, 10.0, epsilon = 1e-12);
        let x = dvector![1.0, 2.0];
        let u = dvector![10.0];
        // bound = x1 + x2 t - 5 t²; flow value = x1 + x2 t + u t²/2
        for g in 0..=50 {
            let t = 2.0 * g as f64 / 50.0;
            let b = lb.eval(&x, &u, t);
            assert_abs_diff_eq!(b, 1.0 + 2.0 * t - 5.0 * t * t, epsilon = 1e-12);
            assert!(b <= exp.eval(&x, &u, t) + 1e-12);
        }
    }

    #[test]
    fn lipschitz_constant_predicate() {
        let exp = FlowExpansion { sigma: 2.5, terms: vec![] };
        let lb = lipschitz_bound(&exp, &dvector![1.0], &dvector![1.0], 1.0).unwrap();
        assert_eq!(lb.l, 0.0);
        assert_abs_diff_eq!(lb.eval(&dvector![0.0], &dvector![0.0], 0.7), 2.5, epsilon = 1e-12);
    }

    #[test]
    fn lipschitz_valid_and_tight_at_origin() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..60 {
            let n = rng.gen_range(2..=3);
            let v = nalgebra::DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
            let Some(vi) = v.clone().try_inverse() else { continue };
            if crate::lindyn::inf_norm(&v) * crate::lindyn::inf_norm(&vi) > 30.0 {
                continue;
            }
            let jf = crate::lindyn::JordanForm {
                v: v.clone(),
                v_inv: vi,
                blocks: (0..n).map(|_| (rng.gen_range(-1.5..1.5), 1)).collect(),
            };
            let a = &jf.v * jf.j_matrix() * &jf.v_inv;
            let b = nalgebra::DMatrix::from_fn(n, 1, |_, _| rng.gen_range(-1.0..1.0));
            let sys = LinearSystem::new(a, b).unwrap();
            let w = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
            let exp = expand_along_flow(&sys, &jf, &w, 0.3, &dvector![0.0], 0.0).unwrap();
            let tau = rng.gen_range(0.2..1.5);
            let xb = DVector::from_element(n, 3.0);
            let ub = dvector![2.0];
            let lb = lipschitz_bound(&exp, &xb, &ub, tau).unwrap();
            let x_k = DVector::from_fn(n, |_, _| rng.gen_range(-3.0..3.0));
            let u_k = dvector![rng.gen_range(-2.0..2.0)];
            assert_abs_diff_eq!(
                lb.eval(&x_k, &u_k, 0.0),
                exp.eval(&x_k, &u_k, 0.0),
                epsilon = 1e-9
            );
            for g in 0..=200 {
                let t = tau * g as f64 / 200.0;
                let hv = exp.eval(&x_k, &u_k, t);
                assert!(
                    lb.eval(&x_k, &u_k, t) <= hv + 1e-9 * hv.abs().max(1.0),
                    "t={t}"
                );
            }
            // Monotone conservatism in the box bounds.
            let lb2 = lipschitz_bound(&exp, &(&xb * 2.0), &(&ub * 2.0), tau).unwrap();
            assert!(lb2.l >= lb.l - 1e-12);
        }
    }

    #[test]
    fn lipschitz_rejects_bad_boxes() {
        let (_, exp) = double_integrator_expansion();
        assert!(matches!(
            lipschitz_bound(&exp, &dvector![1.0, -1.0], &dvector![1.0], 1.0),
            Err(CstlError::Config(_))
        ));
    }

    #[test]
    fn witness_time_examples() {
        assert_eq!(witness_times((0.0, 1.0), (0.0, 1.0), 2), vec![0.0, 1.0]);
        assert_eq!(witness_times((2.0, 4.5), (2.0, 4.5), 1), vec![2.0]);
        assert_eq!(witness_times((0.5, 3.0), (0.0, 1.0), 2), vec![0.5, 1.0]);
        assert!(witness_times((2.0, 3.0), (0.0, 1.0), 2).is_empty());
        // Point intersection collapses to a single witness.
        assert_eq!(witness_times((1.0, 3.0), (0.0, 1.0), 3), vec![1.0]);
        let ws = witness_times((0.0, 2.0), (0.5, 1.5), 4);
        assert_eq!(ws.len(), 4);
        assert_abs_diff_eq!(ws[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(ws[3], 1.5, epsilon = 1e-12);
    }
}
