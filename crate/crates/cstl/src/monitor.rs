//! Continuous-time verification oracle: dense sampling of the planned
//! trajectory and recursive space-robustness evaluation.

use nalgebra::DVector;

use crate::error::{CstlError, Result};
use crate::lindyn::{propagate_dense, JordanForm, LinearSystem};
use crate::stl::StlFormula;

pub const DELTA_DEFAULT: f64 = 1e-3;
pub const EPS_DEFAULT: f64 = 1e-6;

/// Trajectory samples on a dense grid (uniform resolution plus breakpoints).
#[derive(Debug, Clone)]
pub struct SampledSignal {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
}

impl SampledSignal {
    pub fn new(samples: Vec<(f64, DVector<f64>)>) -> Result<Self> {
        if samples.is_empty() {
            return Err(CstlError::Coverage("empty signal".into()));
        }
        for w in samples.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(CstlError::Coverage("sample times must increase".into()));
            }
        }
        let (times, states) = samples.into_iter().unzip();
        Ok(Self { times, states })
    }

    pub fn end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Sample index range covering `[lo, hi]`, snapped outward to the grid.
    fn window(&self, lo: f64, hi: f64) -> Result<(usize, usize)> {
        let tol = 1e-9;
        if hi > self.end() + tol || lo < self.times[0] - tol {
            return Err(CstlError::Coverage(format!(
                "window [{lo}, {hi}] exceeds signal coverage [{}, {}]",
                self.times[0],
                self.end()
            )));
        }
        let mut i0 = self.times.partition_point(|&t| t < lo - tol);
        if i0 > 0 && self.times[i0] > lo + tol {
            i0 -= 1; // snap outward (earlier)
        }
        let mut i1 = self.times.partition_point(|&t| t <= hi + tol);
        if i1 < self.times.len() {
            i1 += 1; // snap outward (later); exclusive end
        }
        Ok((i0.min(self.times.len() - 1), i1.max(i0 + 1)))
    }
}

/// Space robustness of `f` at sample index `k` (standard min/max recursion
/// over the grid).
fn rho(sig: &SampledSignal, f: &StlFormula, k: usize) -> Result<f64> {
    match f {
        StlFormula::True => Ok(f64::INFINITY),
        StlFormula::Pred(p) => Ok(p.eval(&sig.states[k])),
        StlFormula::Not(g) => Ok(-rho(sig, g, k)?),
        StlFormula::And(cs) => {
            let mut v = f64::INFINITY;
            for c in cs {
                v = v.min(rho(sig, c, k)?);
            }
            Ok(v)
        }
        StlFormula::Or(cs) => {
            let mut v = f64::NEG_INFINITY;
            for c in cs {
                v = v.max(rho(sig, c, k)?);
            }
            Ok(v)
        }
        StlFormula::Eventually { a, b, child } => {
            let (i0, i1) = sig.window(sig.times[k] + a, sig.times[k] + b)?;
            let mut v = f64::NEG_INFINITY;
            for j in i0..i1 {
                v = v.max(rho(sig, child, j)?);
            }
            Ok(v)
        }
        StlFormula::Always { a, b, child } => {
            let (i0, i1) = sig.window(sig.times[k] + a, sig.times[k] + b)?;
            let mut v = f64::INFINITY;
            for j in i0..i1 {
                v = v.min(rho(sig, child, j)?);
            }
            Ok(v)
        }
        StlFormula::Until { a, b, left, right } => {
            let (i0, i1) = sig.window(sig.times[k] + a, sig.times[k] + b)?;
            let mut best = f64::NEG_INFINITY;
            let mut prefix = f64::INFINITY;
            // prefix min of left over [t_k, t_j]
            let mut jj = k;
            for j in i0..i1 {
                while jj <= j {
                    prefix = prefix.min(rho(sig, left, jj)?);
                    jj += 1;
                }
                best = best.max(rho(sig, right, j)?.min(prefix));
            }
            Ok(best)
        }
    }
}

/// Robustness at absolute time `t` (snapped to the nearest grid point).
pub fn robustness(sig: &SampledSignal, f: &StlFormula, t: f64) -> Result<f64> {
    let k = sig
        .times
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| {
            (*a - t).abs().partial_cmp(&(*b - t).abs()).unwrap()
        })
        .map(|(i, _)| i)
        .unwrap();
    rho(sig, f, k)
}

#[derive(Debug, Clone, Copy)]
pub struct Verification {
    pub satisfied: bool,
    pub margin: f64,
}

/// Propagates the ZOH plan at resolution `delta` and checks `ρ(f, 0) ≥ -eps`.
pub fn verify(
    sys: &LinearSystem,
    jf: &JordanForm,
    x0: &DVector<f64>,
    controls: &[(f64, DVector<f64>)],
    f: &StlFormula,
    delta: f64,
    eps: f64,
) -> Result<Verification> {
    let t_end = f.horizon().max(controls.last().map_or(0.0, |c| c.0));
    let traj = propagate_dense(sys, jf, x0, controls, t_end, delta)?;
    let sig = SampledSignal::new(traj)?;
    let margin = robustness(&sig, f, 0.0)?;
    Ok(Verification {
        satisfied: margin >= -eps,
        margin,
    })
}

/// Parses an external trajectory CSV: lines `t, x1, ..., xn`; `#` comments and
/// a header line are skipped.
pub fn parse_trajectory_csv(text: &str, n: usize) -> Result<SampledSignal> {
    let mut samples = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if lineno == 0 && fields[0].parse::<f64>().is_err() {
            continue; // header
        }
        if fields.len() < n + 1 {
            return Err(CstlError::Coverage(format!(
                "line {}: expected at least {} columns",
                lineno + 1,
                n + 1
            )));
        }
        let mut vals = Vec::with_capacity(n + 1);
        for f in &fields[..n + 1] {
            vals.push(f.parse::<f64>().map_err(|_| {
                CstlError::Coverage(format!("line {}: bad number {f}", lineno + 1))
            })?);
        }
        samples.push((vals[0], DVector::from_vec(vals[1..].to_vec())));
    }
    SampledSignal::new(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stl::{parse_formula, AffinePredicate};
    use approx::assert_abs_diff_eq;
    use nalgebra::dvector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn constant_signal(value: f64, t_end: f64, dt: f64) -> SampledSignal {
        let steps = (t_end / dt) as usize;
        SampledSignal::new(
            (0..=steps)
                .map(|i| (i as f64 * dt, dvector![value]))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn constant_predicate_margin() {
        let sig = constant_signal(5.0, 2.0, 0.1);
        let f = parse_formula("x1 >= 3", 1).unwrap();
        assert_abs_diff_eq!(robustness(&sig, &f, 0.0).unwrap(), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn always_on_ramp_boundary() {
        let sig = SampledSignal::new(
            (0..=100)
                .map(|i| {
                    let t = i as f64 / 100.0;
                    (t, dvector![t])
                })
                .collect(),
        )
        .unwrap();
        let f = parse_formula("G[0,1](x1 >= 0)", 1).unwrap();
        assert_abs_diff_eq!(robustness(&sig, &f, 0.0).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn coverage_error() {
        let sig = constant_signal(1.0, 1.0, 0.1);
        let f = parse_formula("F[0,2](x1 >= 0)", 1).unwrap();
        assert!(matches!(
            robustness(&sig, &f, 0.0),
            Err(CstlError::Coverage(_))
        ));
    }

    #[test]
    fn negation_duality_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let sig = SampledSignal::new(
                (0..=40)
                    .map(|i| (i as f64 * 0.05, dvector![rng.gen_range(-2.0..2.0)]))
                    .collect(),
            )
            .unwrap();
            let f = parse_formula("F[0,1](x1 >= 0.5) & G[0,2](x1 <= 3)", 1).unwrap();
            let neg = StlFormula::Not(Box::new(f.clone()));
            let a = robustness(&sig, &f, 0.0).unwrap();
            let b = robustness(&sig, &neg, 0.0).unwrap();
            assert_eq!(a, -b);
        }
    }

    /// Sign agreement with a brute-force Boolean evaluator on
    /// piecewise-constant synthetic signals away from the boundary.
    #[test]
    fn sign_matches_boolean_oracle() {
        fn holds(sig: &SampledSignal, f: &StlFormula, k: usize) -> bool {
            match f {
                StlFormula::True => true,
                StlFormula::Pred(p) => p.eval(&sig.states[k]) >= 0.0,
                StlFormula::Not(g) => !holds(sig, g, k),
                StlFormula::And(cs) => cs.iter().all(|c| holds(sig, c, k)),
                StlFormula::Or(cs) => cs.iter().any(|c| holds(sig, c, k)),
                StlFormula::Eventually { a, b, child } => (0..sig.times.len())
                    .filter(|&j| {
                        sig.times[j] >= sig.times[k] + a - 1e-9
                            && sig.times[j] <= sig.times[k] + b + 1e-9
                    })
                    .any(|j| holds(sig, child, j)),
                StlFormula::Always { a, b, child } => (0..sig.times.len())
                    .filter(|&j| {
                        sig.times[j] >= sig.times[k] + a - 1e-9
                            && sig.times[j] <= sig.times[k] + b + 1e-9
                    })
                    .all(|j| holds(sig, child, j)),
                StlFormula::Until { .. } => unreachable!(),
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..100 {
            // piecewise-constant over 4 segments of 0.5 s at δ=0.01
            let levels: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let sig = SampledSignal::new(
                (0..=200)
                    .map(|i| {
                        let t = i as f64 * 0.01;
                        let seg = ((t / 0.5) as usize).min(3);
                        (t, dvector![levels[seg]])
                    })
                    .collect(),
            )
            .unwrap();
            let f = parse_formula("F[0,1](x1 >= 0.3) | G[0,1.5](x1 <= 0.7)", 1).unwrap();
            let r = robustness(&sig, &f, 0.0).unwrap();
            if r.abs() > 0.1 {
                assert_eq!(r >= 0.0, holds(&sig, &f, 0));
            }
        }
    }

    #[test]
    fn delta_refinement_stability() {
        // ρ at δ and δ/2 differ by at most Lipschitz · δ (factor-2 slack).
        let build = |dt: f64| {
            SampledSignal::new(
                (0..=((2.0 / dt) as usize))
                    .map(|i| {
                        let t = i as f64 * dt;
                        (t, dvector![(2.0 * t).sin()])
                    })
                    .collect(),
            )
            .unwrap()
        };
        let f = parse_formula("G[0,2](x1 <= 0.9) | F[0,1](x1 >= 0.99)", 1).unwrap();
        let a = robustness(&build(1e-3), &f, 0.0).unwrap();
        let b = robustness(&build(5e-4), &f, 0.0).unwrap();
        assert!((a - b).abs() <= 2.0 * 2.0 * 1e-3, "|{a} - {b}| too large");
    }

    #[test]
    fn until_robustness() {
        // x1 ramps down, x2 ramps up; left holds until right kicks in.
        let sig = SampledSignal::new(
            (0..=100)
                .map(|i| {
                    let t = i as f64 / 100.0;
                    (t, dvector![1.0 - t, t - 0.5])
                })
                .collect(),
        )
        .unwrap();
        let f = parse_formula("((x1 >= 0) U[0,1](x2 >= 0.2))", 2).unwrap();
        let r = robustness(&sig, &f, 0.0).unwrap();
        // best witness t'=0.7+: min(x2(t')-0.2, min x1 over [0,t']) maximized
        // analytic optimum ≈ max_t min(t-0.7, 1-t) at t=0.85 → 0.15
        assert_abs_diff_eq!(r, 0.15, epsilon = 0.02);
    }

    #[test]
    fn verify_and_counterexample() {
        let sys = LinearSystem::new(
            nalgebra::dmatrix![0.0, 1.0; 0.0, 0.0],
            nalgebra::dmatrix![0.0; 1.0],
        )
        .unwrap();
        let jf = crate::lindyn::jordan_decompose(&sys, 1e-8).unwrap();
        let f = parse_formula("F[0,1](x1 >= 3)", 2).unwrap();
        // u = 8 reaches x1(1) = 4 ≥ 3; u = 0 stays at 0.
        let good = verify(
            &sys,
            &jf,
            &dvector![0.0, 0.0],
            &[(0.0, dvector![8.0])],
            &f,
            1e-3,
            1e-6,
        )
        .unwrap();
        assert!(good.satisfied && good.margin >= 1.0 - 1e-3);
        let bad = verify(
            &sys,
            &jf,
            &dvector![0.0, 0.0],
            &[(0.0, dvector![0.0])],
            &f,
            1e-3,
            1e-6,
        )
        .unwrap();
        assert!(!bad.satisfied && bad.margin < -2.9);
    }

    #[test]
    fn csv_roundtrip() {
        let text = "t,x1,x2\n0,1.0,2.0\n0.5,1.5,2.5\n# comment\n1.0,2.0,3.0\n";
        let sig = parse_trajectory_csv(text, 2).unwrap();
        assert_eq!(sig.times, vec![0.0, 0.5, 1.0]);
        assert_eq!(sig.states[1], dvector![1.5, 2.5]);
        assert!(parse_trajectory_csv("0,1\n", 2).is_err());
        let p = AffinePredicate::new(dvector![1.0, 0.0], 0.0).unwrap();
        assert_abs_diff_eq!(p.eval(&sig.states[2]), 2.0, epsilon = 1e-12);
    }
}
