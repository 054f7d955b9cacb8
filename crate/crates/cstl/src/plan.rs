//! Synthesis loop: encode at the current instant set, solve, and bisect the
//! instants on infeasibility or encoding gaps until the budget is exhausted.

use milp::{solve, SolveParams, SolveStatus};
use nalgebra::DVector;
use serde::Serialize;

use crate::encode::{assemble, EncodingOptions};
use crate::error::{CstlError, Result};
use crate::lindyn::{flow_state, jordan_decompose, JordanForm, LinearSystem, JORDAN_TOL_DEFAULT};
use crate::stl::StlFormula;

pub const N_MAX_DEFAULT: usize = 65;

#[derive(Debug, Clone)]
pub struct PlanProblem {
    pub sys: LinearSystem,
    /// Precomputed Jordan form; computed from `sys` when absent.
    pub jordan: Option<JordanForm>,
    pub x0: DVector<f64>,
    pub formula: StlFormula,
    pub opts: EncodingOptions,
    /// Instant budget: refinement stops once the set would exceed this.
    pub n_max: usize,
    pub solve_params: SolveParams,
}

impl PlanProblem {
    pub fn new(
        sys: LinearSystem,
        x0: DVector<f64>,
        formula: StlFormula,
        opts: EncodingOptions,
    ) -> Self {
        Self {
            sys,
            jordan: None,
            x0,
            formula,
            opts,
            n_max: N_MAX_DEFAULT,
            solve_params: SolveParams {
                // Per-round budget; a limited round with an incumbent still
                // yields a plan, one without falls through to refinement.
                node_limit: 20_000,
                // Plans only need feasibility: every returned plan is
                // re-verified by the continuous-time monitor, so the search
                // stops at the first integral solution.
                first_feasible: true,
                ..SolveParams::default()
            },
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SolverStats {
    pub nodes: usize,
    pub lp_iterations: usize,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PlanResult {
    pub instants: Vec<f64>,
    /// State at each instant, matching the ZOH recursion.
    pub states: Vec<Vec<f64>>,
    /// Control held over each inter-instant interval.
    pub controls: Vec<Vec<f64>>,
    pub objective: f64,
    /// Encode/solve rounds performed (1 = feasible at the initial instants).
    pub iterations: usize,
    pub stats: SolverStats,
    pub big_m_warnings: Vec<String>,
}

impl PlanResult {
    pub fn control_schedule(&self) -> Vec<(f64, DVector<f64>)> {
        self.instants
            .iter()
            .zip(&self.controls)
            .map(|(&t, u)| (t, DVector::from_vec(u.clone())))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub enum PlanOutcome {
    Feasible(PlanResult),
    /// No feasible encoding found within the instant budget.
    Infeasible {
        iterations: usize,
        last_instants: Vec<f64>,
        stats: SolverStats,
    },
}

pub fn plan(p: &PlanProblem) -> Result<PlanOutcome> {
    if p.x0.len() != p.sys.n() {
        return Err(CstlError::Dimension(format!(
            "x0 has dimension {}, system has {}",
            p.x0.len(),
            p.sys.n()
        )));
    }
    let jf = match &p.jordan {
        Some(jf) => jf.clone(),
        None => jordan_decompose(&p.sys, JORDAN_TOL_DEFAULT)?,
    };
    let nnf = p.formula.to_nnf()?;
    let mut instants = nnf.initial_instants();
    let mut iterations = 0;
    let mut stats = SolverStats {
        nodes: 0,
        lp_iterations: 0,
        wall_seconds: 0.0,
    };
    loop {
        iterations += 1;
        let tau_points = instants.clone();
        match assemble(&p.sys, &jf, &p.x0, &nnf, &tau_points, &p.opts) {
            Ok(enc) => {
                let res = solve(&enc.model, &p.solve_params)?;
                stats.nodes += res.nodes;
                stats.lp_iterations += res.lp_iterations;
                stats.wall_seconds += res.wall_seconds;
                match res.status {
                    // A node-limited search that still produced an integral
                    // incumbent yields a valid (if suboptimal) plan.
                    SolveStatus::Optimal | SolveStatus::Limit if !res.assignment.is_empty() => {
                        let controls: Vec<DVector<f64>> = enc
                            .extract_controls(instants.as_slice(), &res.assignment)
                            .into_iter()
                            .map(|(_, u)| u)
                            .collect();
                        let states =
                            replay_states(&p.sys, &jf, &p.x0, instants.as_slice(), &controls);
                        return Ok(PlanOutcome::Feasible(PlanResult {
                            instants: instants.as_slice().to_vec(),
                            states: states.iter().map(|x| x.as_slice().to_vec()).collect(),
                            controls: controls.iter().map(|u| u.as_slice().to_vec()).collect(),
                            objective: res.objective,
                            iterations,
                            stats,
                            big_m_warnings: enc.big_m_warnings(&res.assignment),
                        }));
                    }
                    SolveStatus::Optimal | SolveStatus::Infeasible | SolveStatus::Limit => {}
                    SolveStatus::Unbounded => {
                        return Err(CstlError::Problem(
                            "unbounded relaxation; check input bounds".into(),
                        ))
                    }
                }
            }
            // A window with no instants inside it is cured by refinement,
            // not a hard error.
            Err(CstlError::EncodingGap(_)) => {}
            Err(e) => return Err(e),
        }
        let next = instants.bisect();
        if next.len() > p.n_max {
            return Ok(PlanOutcome::Infeasible {
                iterations,
                last_instants: instants.as_slice().to_vec(),
                stats,
            });
        }
        instants = next;
    }
}

/// Rebuilds the state sequence by exact ZOH propagation, independent of the
/// solver's state variables.
fn replay_states(
    sys: &LinearSystem,
    jf: &JordanForm,
    x0: &DVector<f64>,
    instants: &[f64],
    controls: &[DVector<f64>],
) -> Vec<DVector<f64>> {
    let mut states = vec![x0.clone()];
    for k in 0..controls.len() {
        let tau = instants[k + 1] - instants[k];
        let next = flow_state(sys, jf, &states[k], &controls[k], tau);
        states.push(next);
    }
    states
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::monitor;
    use crate::stl::parse_formula;
    use nalgebra::{dmatrix, dvector};

    fn double_integrator() -> LinearSystem {
        LinearSystem::new(dmatrix![0.0, 1.0; 0.0, 0.0], dmatrix![0.0; 1.0]).unwrap()
    }

    fn example_one() -> PlanProblem {
        let sys = double_integrator();
        let f = parse_formula("F[0,1](x1 >= 3) & F[2,4.5](x1 <= -2)", 2).unwrap();
        let opts = EncodingOptions::defaults(
            dvector![-10.0],
            dvector![10.0],
            vec![30.0, 30.0],
        );
        PlanProblem::new(sys, dvector![0.0, 0.0], f, opts)
    }

    #[test]
    fn example_one_first_iteration() {
        let p = example_one();
        let out = plan(&p).unwrap();
        let PlanOutcome::Feasible(r) = out else {
            panic!("expected feasible plan");
        };
        assert_eq!(r.iterations, 1);
        assert_eq!(r.instants, vec![0.0, 1.0, 2.0, 4.5]);
        assert_eq!(r.controls.len(), 3);
        for u in &r.controls {
            assert!(u[0].abs() <= 10.0 + 1e-9);
        }
        let jf = jordan_decompose(&p.sys, 1e-8).unwrap();
        let v = monitor::verify(
            &p.sys,
            &jf,
            &p.x0,
            &r.control_schedule(),
            &p.formula,
            1e-3,
            1e-6,
        )
        .unwrap();
        assert!(v.satisfied, "margin {}", v.margin);
    }

    #[test]
    fn states_satisfy_recursion() {
        let p = example_one();
        let PlanOutcome::Feasible(r) = plan(&p).unwrap() else {
            panic!()
        };
        // replayed states are exact by construction; cross-check against the
        // discrete step map applied to the solver controls
        let jf = jordan_decompose(&p.sys, 1e-8).unwrap();
        for k in 0..r.controls.len() {
            let tau = r.instants[k + 1] - r.instants[k];
            let step = crate::lindyn::zoh_discretize(&p.sys, &jf, tau).unwrap();
            let xk = DVector::from_vec(r.states[k].clone());
            let uk = DVector::from_vec(r.controls[k].clone());
            let pred = &step.a_k * &xk + &step.b_k * &uk;
            let got = DVector::from_vec(r.states[k + 1].clone());
            assert!((pred - got).amax() < 1e-7);
        }
    }

    #[test]
    fn contradiction_reports_infeasible() {
        let sys = double_integrator();
        let f = parse_formula("G[0,1](x1 >= 1) & G[0,1](x1 <= -1)", 2).unwrap();
        let opts =
            EncodingOptions::defaults(dvector![-10.0], dvector![10.0], vec![30.0, 30.0]);
        let mut p = PlanProblem::new(sys, dvector![0.0, 0.0], f, opts);
        p.n_max = 9;
        match plan(&p).unwrap() {
            PlanOutcome::Infeasible { iterations, .. } => assert!(iterations >= 2),
            PlanOutcome::Feasible(_) => panic!("contradiction must be infeasible"),
        }
    }

    #[test]
    fn refinement_recovers_tight_problem() {
        // Per-term invariance bounds are conservative over the single long
        // interval {0, 2}; the planner must bisect before finding a plan.
        let sys = double_integrator();
        let f = parse_formula("G[0,2](x1 <= 0.5)", 2).unwrap();
        let opts =
            EncodingOptions::defaults(dvector![-10.0], dvector![10.0], vec![30.0, 30.0]);
        let p = PlanProblem::new(sys, dvector![0.0, 1.0], f, opts);
        let PlanOutcome::Feasible(r) = plan(&p).unwrap() else {
            panic!("expected feasible after refinement");
        };
        assert!(r.iterations >= 2, "expected a bisection, got iteration 1");
        let jf = jordan_decompose(&p.sys, 1e-8).unwrap();
        let v = monitor::verify(
            &p.sys,
            &jf,
            &p.x0,
            &r.control_schedule(),
            &p.formula,
            1e-3,
            1e-6,
        )
        .unwrap();
        assert!(v.satisfied, "margin {}", v.margin);
    }

    #[test]
    fn deterministic_replanning() {
        let p = example_one();
        let PlanOutcome::Feasible(a) = plan(&p).unwrap() else {
            panic!()
        };
        let PlanOutcome::Feasible(b) = plan(&p).unwrap() else {
            panic!()
        };
        assert_eq!(a.controls, b.controls);
        assert_eq!(a.states, b.states);
        assert_eq!(a.objective, b.objective);
    }

    #[test]
    fn encoding_gap_triggers_refinement() {
        // Nested F over a disjunction has no witness fallback and its window
        // [t+0.3, t+0.4] contains no initial instant; the planner must bisect
        // instead of aborting.
        let sys = double_integrator();
        let f = parse_formula("G[0,1](F[0.3,0.4](x1 >= 0.1 | x1 <= -5))", 2).unwrap();
        let opts =
            EncodingOptions::defaults(dvector![-10.0], dvector![10.0], vec![30.0, 30.0]);
        let p = PlanProblem::new(sys, dvector![0.0, 0.0], f, opts);
        let PlanOutcome::Feasible(r) = plan(&p).unwrap() else {
            panic!("expected feasible after refinement");
        };
        assert!(r.iterations >= 2);
    }
}
