//! Line-oriented problem file format.
//!
//! Scalar and vector keys sit on one line (`n 2`, `x0 0 0`); matrix keys
//! (`A`, `B`, `jordan_v`) are followed by one line per row. `#` starts a
//! comment. Unknown keys are rejected.

use nalgebra::{DMatrix, DVector};

use crate::encode::{BoundMethod, EncodingOptions};
use crate::error::{CstlError, Result};
use crate::lindyn::{JordanForm, LinearSystem};
use crate::plan::{PlanProblem, N_MAX_DEFAULT};
use crate::stl::{parse_formula, StlFormula};

#[derive(Debug, Clone)]
pub struct ProblemFile {
    pub sys: LinearSystem,
    pub jordan: Option<JordanForm>,
    pub x0: DVector<f64>,
    pub formula: StlFormula,
    pub formula_text: String,
    pub opts: EncodingOptions,
    pub n_max: usize,
    pub delta: f64,
    pub eps: f64,
}

impl ProblemFile {
    pub fn into_plan_problem(self) -> PlanProblem {
        let mut p = PlanProblem::new(self.sys, self.x0, self.formula, self.opts);
        p.jordan = self.jordan;
        p.n_max = self.n_max;
        p
    }
}

fn err(lineno: usize, msg: impl Into<String>) -> CstlError {
    CstlError::Problem(format!("line {}: {}", lineno, msg.into()))
}

fn parse_vec(lineno: usize, fields: &[&str]) -> Result<Vec<f64>> {
    fields
        .iter()
        .map(|f| {
            f.parse::<f64>()
                .map_err(|_| err(lineno, format!("bad number {f:?}")))
        })
        .collect()
}

pub fn parse_problem(text: &str) -> Result<ProblemFile> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty())
        .peekable();

    let mut n = None;
    let mut m = None;
    let mut a_rows: Option<Vec<Vec<f64>>> = None;
    let mut b_rows: Option<Vec<Vec<f64>>> = None;
    let mut v_rows: Option<Vec<Vec<f64>>> = None;
    let mut jordan_blocks: Option<Vec<(f64, usize)>> = None;
    let mut x0 = None;
    let mut formula_text: Option<String> = None;
    let mut u_min = None;
    let mut u_max = None;
    let mut x_max = None;
    let mut gains = None;
    let mut big_m = None;
    let mut method = None;
    let mut witness_density = None;
    let mut n_max = N_MAX_DEFAULT;
    let mut delta = crate::monitor::DELTA_DEFAULT;
    let mut eps = crate::monitor::EPS_DEFAULT;

    while let Some((lineno, line)) = lines.next() {
        let (key, rest) = match line.split_once(char::is_whitespace) {
            Some((k, r)) => (k, r.trim()),
            None => (line, ""),
        };
        let fields: Vec<&str> = rest.split_whitespace().collect();
        match key {
            "n" => n = Some(parse_usize(lineno, rest)?),
            "m" => m = Some(parse_usize(lineno, rest)?),
            "A" | "B" | "jordan_v" => {
                let rows_n = n.ok_or_else(|| err(lineno, "n must come before matrices"))?;
                let mut rows = Vec::with_capacity(rows_n);
                for _ in 0..rows_n {
                    let (rl, row) = lines
                        .next()
                        .ok_or_else(|| err(lineno, format!("{key}: missing matrix rows")))?;
                    rows.push(parse_vec(rl, &row.split_whitespace().collect::<Vec<_>>())?);
                }
                match key {
                    "A" => a_rows = Some(rows),
                    "B" => b_rows = Some(rows),
                    _ => v_rows = Some(rows),
                }
            }
            "jordan_blocks" => {
                let mut blocks = Vec::new();
                for f in &fields {
                    let (l, s) = f
                        .split_once(',')
                        .ok_or_else(|| err(lineno, "jordan_blocks: expected lambda,size pairs"))?;
                    let lam = l
                        .parse::<f64>()
                        .map_err(|_| err(lineno, format!("bad eigenvalue {l:?}")))?;
                    let sz = s
                        .parse::<usize>()
                        .map_err(|_| err(lineno, format!("bad block size {s:?}")))?;
                    blocks.push((lam, sz));
                }
                jordan_blocks = Some(blocks);
            }
            "x0" => x0 = Some(DVector::from_vec(parse_vec(lineno, &fields)?)),
            "u_min" => u_min = Some(DVector::from_vec(parse_vec(lineno, &fields)?)),
            "u_max" => u_max = Some(DVector::from_vec(parse_vec(lineno, &fields)?)),
            "x_max" => x_max = Some(DVector::from_vec(parse_vec(lineno, &fields)?)),
            "gains" => gains = Some(parse_vec(lineno, &fields)?),
            "big_m" => big_m = Some(parse_f64(lineno, rest)?),
            "delta" => delta = parse_f64(lineno, rest)?,
            "eps" => eps = parse_f64(lineno, rest)?,
            "n_max" => n_max = parse_usize(lineno, rest)?,
            "witness_density" => witness_density = Some(parse_usize(lineno, rest)?),
            "method" => {
                method = Some(match rest {
                    "taylor" => BoundMethod::Taylor,
                    "lipschitz" => BoundMethod::Lipschitz,
                    other => return Err(err(lineno, format!("unknown method {other:?}"))),
                })
            }
            "formula" => formula_text = Some(rest.to_string()),
            other => return Err(err(lineno, format!("unknown key {other:?}"))),
        }
    }

    let n = n.ok_or_else(|| CstlError::Problem("missing key n".into()))?;
    let m = m.ok_or_else(|| CstlError::Problem("missing key m".into()))?;
    let a_rows = a_rows.ok_or_else(|| CstlError::Problem("missing matrix A".into()))?;
    let b_rows = b_rows.ok_or_else(|| CstlError::Problem("missing matrix B".into()))?;
    let to_matrix = |rows: Vec<Vec<f64>>, cols: usize, name: &str| -> Result<DMatrix<f64>> {
        if rows.iter().any(|r| r.len() != cols) {
            return Err(CstlError::Problem(format!(
                "{name}: expected {} rows of {} entries",
                n, cols
            )));
        }
        Ok(DMatrix::from_row_iterator(
            rows.len(),
            cols,
            rows.into_iter().flatten(),
        ))
    };
    let sys = LinearSystem::new(to_matrix(a_rows, n, "A")?, to_matrix(b_rows, m, "B")?)?;
    let jordan = match (v_rows, jordan_blocks) {
        (Some(v), Some(blocks)) => Some(JordanForm::from_parts(
            &sys.a,
            to_matrix(v, n, "jordan_v")?,
            blocks,
            crate::lindyn::JORDAN_TOL_DEFAULT,
        )?),
        (None, None) => None,
        _ => {
            return Err(CstlError::Problem(
                "jordan_v and jordan_blocks must be given together".into(),
            ))
        }
    };
    let x0 = x0.ok_or_else(|| CstlError::Problem("missing key x0".into()))?;
    let formula_text =
        formula_text.ok_or_else(|| CstlError::Problem("missing key formula".into()))?;
    let formula = parse_formula(&formula_text, n)?;
    let u_min = u_min.ok_or_else(|| CstlError::Problem("missing key u_min".into()))?;
    let u_max = u_max.ok_or_else(|| CstlError::Problem("missing key u_max".into()))?;
    let gains = gains.ok_or_else(|| CstlError::Problem("missing key gains".into()))?;
    if u_min.len() != m || u_max.len() != m {
        return Err(CstlError::Dimension("u bounds must have length m".into()));
    }

    let mut opts = EncodingOptions::defaults(u_min, u_max, gains);
    if let Some(v) = big_m {
        opts.big_m = v;
    }
    if let Some(v) = method {
        opts.method = v;
    }
    if let Some(v) = witness_density {
        opts.witness_density = v;
    }
    opts.x_max = x_max;
    Ok(ProblemFile {
        sys,
        jordan,
        x0,
        formula,
        formula_text,
        opts,
        n_max,
        delta,
        eps,
    })
}

fn parse_usize(lineno: usize, s: &str) -> Result<usize> {
    s.parse()
        .map_err(|_| err(lineno, format!("bad integer {s:?}")))
}

fn parse_f64(lineno: usize, s: &str) -> Result<f64> {
    s.parse()
        .map_err(|_| err(lineno, format!("bad number {s:?}")))
}
