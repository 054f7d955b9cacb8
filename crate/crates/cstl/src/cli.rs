//! Command-line front end.
//!
//! Exit codes: 0 success, 1 I/O or parse error, 2 infeasible after
//! refinement, 3 internal verification failure on a plan the solver
//! accepted, 4 external trajectory violates the formula.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::encode::{assemble, BoundMethod};
use crate::error::CstlError;
use crate::lindyn::{jordan_decompose, propagate_dense, JORDAN_TOL_DEFAULT};
use crate::monitor;
use crate::plan::{plan, PlanOutcome, PlanResult};
use crate::problem::{parse_problem, ProblemFile};
use crate::stl::{AffinePredicate, StlFormula};
use milp::{MilpModel, Sense, VarKind};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_UNSOUND: i32 = 3;
pub const EXIT_VIOLATED: i32 = 4;

#[derive(Parser, Debug)]
#[command(name = "cstl", about = "Continuous-time STL planning for linear systems")]
pub struct Cli {
    #[command(subcommand)]
    pub cmd: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum MethodArg {
    Taylor,
    Lipschitz,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Synthesize a control plan for a problem file.
    Plan {
        problem: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        eps: Option<f64>,
        /// Instant budget override.
        #[arg(long)]
        max_iters: Option<usize>,
        #[arg(long)]
        method: Option<MethodArg>,
        /// Drop continuous-time constraints (discretization baseline).
        #[arg(long)]
        instant_only: bool,
    },
    /// Check an external trajectory CSV against the problem formula.
    Verify {
        problem: PathBuf,
        trajectory: PathBuf,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        eps: Option<f64>,
    },
    /// Print the optimization model built at the initial instants.
    Export {
        problem: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

pub fn run(cli: Cli) -> i32 {
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_INPUT
        }
    }
}

fn load(path: &PathBuf) -> Result<ProblemFile, CstlError> {
    parse_problem(&fs::read_to_string(path)?)
}

fn dispatch(cli: Cli) -> Result<i32, CstlError> {
    match cli.cmd {
        Command::Plan {
            problem,
            out,
            delta,
            eps,
            max_iters,
            method,
            instant_only,
        } => {
            let mut pf = load(&problem)?;
            if let Some(m) = method {
                pf.opts.method = match m {
                    MethodArg::Taylor => BoundMethod::Taylor,
                    MethodArg::Lipschitz => BoundMethod::Lipschitz,
                };
            }
            pf.opts.instant_only |= instant_only;
            if let Some(k) = max_iters {
                pf.n_max = k;
            }
            let delta = delta.unwrap_or(pf.delta);
            let eps = eps.unwrap_or(pf.eps);
            run_plan(pf, out.unwrap_or_else(|| PathBuf::from(".")), delta, eps)
        }
        Command::Verify {
            problem,
            trajectory,
            delta,
            eps,
        } => {
            let pf = load(&problem)?;
            let eps = eps.unwrap_or(pf.eps);
            let _ = delta; // resolution is fixed by the supplied samples
            let text = fs::read_to_string(&trajectory)?;
            let sig = monitor::parse_trajectory_csv(&text, pf.sys.n())?;
            let margin = monitor::robustness(&sig, &pf.formula, sig.times[0])?;
            println!("margin {margin:.9}");
            Ok(if margin >= -eps { EXIT_OK } else { EXIT_VIOLATED })
        }
        Command::Export { problem, out } => {
            let pf = load(&problem)?;
            let jf = match pf.jordan.clone() {
                Some(jf) => jf,
                None => jordan_decompose(&pf.sys, JORDAN_TOL_DEFAULT)?,
            };
            let nnf = pf.formula.to_nnf()?;
            let instants = nnf.initial_instants();
            let enc = assemble(&pf.sys, &jf, &pf.x0, &nnf, &instants, &pf.opts)?;
            let text = render_model(&enc.model);
            match out {
                Some(path) => fs::write(path, text)?,
                None => print!("{text}"),
            }
            Ok(EXIT_OK)
        }
    }
}

#[derive(Serialize)]
struct PlanDocument<'a> {
    #[serde(flatten)]
    result: &'a PlanResult,
    margin: f64,
    satisfied: bool,
}

fn run_plan(pf: ProblemFile, out: PathBuf, delta: f64, eps: f64) -> Result<i32, CstlError> {
    let p = pf.clone().into_plan_problem();
    let r = match plan(&p)? {
        PlanOutcome::Feasible(r) => r,
        PlanOutcome::Infeasible {
            iterations,
            last_instants,
            ..
        } => {
            eprintln!(
                "infeasible after {iterations} rounds ({} instants)",
                last_instants.len()
            );
            return Ok(EXIT_INFEASIBLE);
        }
    };
    let jf = match pf.jordan.clone() {
        Some(jf) => jf,
        None => jordan_decompose(&pf.sys, JORDAN_TOL_DEFAULT)?,
    };
    let v = monitor::verify(
        &pf.sys,
        &jf,
        &pf.x0,
        &r.control_schedule(),
        &pf.formula,
        delta,
        eps,
    )?;
    for w in &r.big_m_warnings {
        eprintln!("warning: {w}");
    }

    fs::create_dir_all(&out)?;
    let doc = PlanDocument {
        result: &r,
        margin: v.margin,
        satisfied: v.satisfied,
    };
    fs::write(out.join("plan.json"), serde_json::to_string_pretty(&doc)?)?;
    fs::write(
        out.join("trajectory.csv"),
        render_trajectory(&pf, &jf, &r, delta)?,
    )?;
    println!(
        "feasible in {} iteration(s), {} instants, objective {:.6}, margin {:.6}",
        r.iterations,
        r.instants.len(),
        r.objective,
        v.margin
    );
    if !v.satisfied {
        eprintln!("verification failed: margin {} < -{eps}", v.margin);
        return Ok(EXIT_UNSOUND);
    }
    Ok(EXIT_OK)
}

fn collect_predicates(f: &StlFormula, out: &mut Vec<AffinePredicate>) {
    match f {
        StlFormula::True => {}
        StlFormula::Pred(p) => out.push(p.clone()),
        StlFormula::Not(g) => collect_predicates(g, out),
        StlFormula::And(cs) | StlFormula::Or(cs) => {
            cs.iter().for_each(|c| collect_predicates(c, out))
        }
        StlFormula::Eventually { child, .. } | StlFormula::Always { child, .. } => {
            collect_predicates(child, out)
        }
        StlFormula::Until { left, right, .. } => {
            collect_predicates(left, out);
            collect_predicates(right, out);
        }
    }
}

/// Dense trajectory CSV: time, state, ZOH control, and every predicate
/// margin h_i(x(t)).
fn render_trajectory(
    pf: &ProblemFile,
    jf: &crate::lindyn::JordanForm,
    r: &PlanResult,
    delta: f64,
) -> Result<String, CstlError> {
    let controls = r.control_schedule();
    let t_end = *r.instants.last().unwrap();
    let samples = propagate_dense(&pf.sys, jf, &pf.x0, &controls, t_end, delta)?;
    let mut preds = Vec::new();
    collect_predicates(&pf.formula, &mut preds);

    let mut s = String::from("t");
    for i in 1..=pf.sys.n() {
        write!(s, ",x{i}").unwrap();
    }
    for i in 1..=pf.sys.m() {
        write!(s, ",u{i}").unwrap();
    }
    for i in 1..=preds.len() {
        write!(s, ",h{i}").unwrap();
    }
    s.push('\n');
    for (t, x) in &samples {
        let k = controls
            .iter()
            .rposition(|&(tk, _)| tk <= *t + 1e-12)
            .unwrap_or(0);
        write!(s, "{t:.6}").unwrap();
        for v in x.iter() {
            write!(s, ",{v:.9}").unwrap();
        }
        for v in controls[k].1.iter() {
            write!(s, ",{v:.9}").unwrap();
        }
        for p in &preds {
            write!(s, ",{:.9}", p.eval(x)).unwrap();
        }
        s.push('\n');
    }
    Ok(s)
}

/// Deterministic plain-text dump of the optimization model.
pub fn render_model(model: &MilpModel) -> String {
    let mut s = String::new();
    writeln!(
        s,
        "model: {} variables, {} constraints",
        model.variables.len(),
        model.constraints.len()
    )
    .unwrap();
    s.push_str("minimize:");
    for &(milp::VarId(j), c) in &model.objective {
        write!(s, " {:+}*{}", c, model.variables[j].name).unwrap();
    }
    s.push('\n');
    for v in &model.variables {
        let kind = match v.kind {
            VarKind::Continuous => "cont",
            VarKind::Binary => "bin",
        };
        writeln!(s, "var {} {} [{}, {}]", v.name, kind, v.lower, v.upper).unwrap();
    }
    for c in &model.constraints {
        write!(s, "con {}:", c.name).unwrap();
        for &(milp::VarId(j), a) in &c.terms {
            write!(s, " {:+}*{}", a, model.variables[j].name).unwrap();
        }
        let op = match c.sense {
            Sense::Le => "<=",
            Sense::Eq => "=",
            Sense::Ge => ">=",
        };
        writeln!(s, " {op} {}", c.rhs).unwrap();
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    const EX: &str = "\
n 2
m 1
A
0 1
0 0
B
0
1
x0 0 0
u_min -10
u_max 10
gains 30 30
formula F[0,1](x1 >= 3) & F[2,4.5](x1 <= -2)
";

    fn write_problem(dir: &std::path::Path) -> PathBuf {
        let p = dir.join("prob.txt");
        fs::write(&p, EX).unwrap();
        p
    }

    #[test]
    fn plan_writes_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let prob = write_problem(dir.path());
        let out = dir.path().join("out");
        let cli = Cli::parse_from([
            "cstl",
            "plan",
            prob.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(run(cli), EXIT_OK);
        let json = fs::read_to_string(out.join("plan.json")).unwrap();
        assert!(json.contains("\"satisfied\": true"));
        let csv = fs::read_to_string(out.join("trajectory.csv")).unwrap();
        let header = csv.lines().next().unwrap();
        assert_eq!(header, "t,x1,x2,u1,h1,h2");
        assert!(csv.lines().count() > 1000);
    }

    #[test]
    fn plan_outputs_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let prob = write_problem(dir.path());
        let mut blobs = Vec::new();
        for name in ["a", "b"] {
            let out = dir.path().join(name);
            let cli = Cli::parse_from([
                "cstl",
                "plan",
                prob.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
            ]);
            assert_eq!(run(cli), EXIT_OK);
            let mut j: serde_json::Value =
                serde_json::from_str(&fs::read_to_string(out.join("plan.json")).unwrap()).unwrap();
            // wall-clock is the one legitimately nondeterministic field
            j["stats"]["wall_seconds"] = 0.0.into();
            blobs.push((j, fs::read(out.join("trajectory.csv")).unwrap()));
        }
        assert_eq!(blobs[0], blobs[1]);
    }

    #[test]
    fn infeasible_exit_code() {
        let dir = tempfile::tempdir().unwrap();
        let text = EX.replace(
            "formula F[0,1](x1 >= 3) & F[2,4.5](x1 <= -2)",
            "formula G[0,1](x1 >= 1) & G[0,1](x1 <= -1)",
        ) + "n_max 9\n";
        let p = dir.path().join("prob.txt");
        fs::write(&p, text).unwrap();
        let cli = Cli::parse_from(["cstl", "plan", p.to_str().unwrap()]);
        // no --out writes happen before the infeasibility report
        assert_eq!(run(cli), EXIT_INFEASIBLE);
    }

    #[test]
    fn parse_error_exit_code() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("prob.txt");
        fs::write(&p, "nonsense 3\n").unwrap();
        let cli = Cli::parse_from(["cstl", "plan", p.to_str().unwrap()]);
        assert_eq!(run(cli), EXIT_INPUT);
        let cli = Cli::parse_from(["cstl", "plan", "/nonexistent/file"]);
        assert_eq!(run(cli), EXIT_INPUT);
    }

    #[test]
    fn verify_accepts_and_rejects() {
        let dir = tempfile::tempdir().unwrap();
        let prob = write_problem(dir.path());
        // plan first, then verify its own trajectory
        let out = dir.path().join("out");
        let cli = Cli::parse_from([
            "cstl",
            "plan",
            prob.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(run(cli), EXIT_OK);
        let traj = out.join("trajectory.csv");
        let cli = Cli::parse_from([
            "cstl",
            "verify",
            prob.to_str().unwrap(),
            traj.to_str().unwrap(),
        ]);
        assert_eq!(run(cli), EXIT_OK);
        // a flat-zero trajectory violates both reach goals
        let flat: String = std::iter::once("t,x1,x2".to_string())
            .chain((0..=4500).map(|i| format!("{},0,0", i as f64 * 1e-3)))
            .collect::<Vec<_>>()
            .join("\n");
        let bad = dir.path().join("flat.csv");
        fs::write(&bad, flat).unwrap();
        let cli = Cli::parse_from([
            "cstl",
            "verify",
            prob.to_str().unwrap(),
            bad.to_str().unwrap(),
        ]);
        assert_eq!(run(cli), EXIT_VIOLATED);
    }

    #[test]
    fn export_model_text() {
        let dir = tempfile::tempdir().unwrap();
        let prob = write_problem(dir.path());
        let out = dir.path().join("model.txt");
        let cli = Cli::parse_from([
            "cstl",
            "export",
            prob.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(run(cli), EXIT_OK);
        let a = fs::read_to_string(&out).unwrap();
        assert!(a.starts_with("model: "));
        assert!(a.contains("minimize:"));
        let cli = Cli::parse_from([
            "cstl",
            "export",
            prob.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(run(cli), EXIT_OK);
        assert_eq!(a, fs::read_to_string(&out).unwrap());
    }
}
