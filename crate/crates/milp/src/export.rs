//! Deterministic plain-text model format.
//!
//! ```text
//! milp 1
//! var <name> cont <lb> <ub>
//! var <name> bin <lb> <ub>
//! min <name>:<coef> ...
//! row <name> <le|eq|ge> <rhs> <name>:<coef> ...
//! end
//! ```
//!
//! Floats use Rust's shortest round-trip formatting, so
//! export -> import -> export is byte-identical.

use std::fmt::Write as _;

use crate::model::{MilpModel, Sense, VarId, VarKind};
use crate::MilpError;

fn fmt_bound(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".to_string()
    } else if v == f64::NEG_INFINITY {
        "-inf".to_string()
    } else {
        format!("{v}")
    }
}

fn parse_bound(s: &str) -> Result<f64, MilpError> {
    match s {
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        _ => s
            .parse()
            .map_err(|_| MilpError::Parse(format!("bad number `{s}`"))),
    }
}

pub fn export_model(model: &MilpModel) -> String {
    let mut out = String::new();
    out.push_str("milp 1\n");
    for v in &model.variables {
        let kind = match v.kind {
            VarKind::Continuous => "cont",
            VarKind::Binary => "bin",
        };
        writeln!(
            out,
            "var {} {} {} {}",
            v.name,
            kind,
            fmt_bound(v.lower),
            fmt_bound(v.upper)
        )
        .unwrap();
    }
    out.push_str("min");
    for &(VarId(j), c) in &model.objective {
        write!(out, " {}:{}", model.variables[j].name, c).unwrap();
    }
    out.push('\n');
    for c in &model.constraints {
        let sense = match c.sense {
            Sense::Le => "le",
            Sense::Eq => "eq",
            Sense::Ge => "ge",
        };
        write!(out, "row {} {} {}", c.name, sense, c.rhs).unwrap();
        for &(VarId(j), coef) in &c.terms {
            write!(out, " {}:{}", model.variables[j].name, coef).unwrap();
        }
        out.push('\n');
    }
    out.push_str("end\n");
    out
}

pub fn import_model(text: &str) -> Result<MilpModel, MilpError> {
    let mut model = MilpModel::new();
    let mut lines = text.lines();
    match lines.next() {
        Some("milp 1") => {}
        other => {
            return Err(MilpError::Parse(format!(
                "expected header `milp 1`, got {other:?}"
            )))
        }
    }
    let term = |tok: &str| -> Result<(String, f64), MilpError> {
        let (name, coef) = tok
            .rsplit_once(':')
            .ok_or_else(|| MilpError::Parse(format!("bad term `{tok}`")))?;
        Ok((name.to_string(), parse_bound(coef)?))
    };
    for line in lines {
        let mut toks = line.split_whitespace();
        match toks.next() {
            Some("var") => {
                let name = toks
                    .next()
                    .ok_or_else(|| MilpError::Parse("var: missing name".into()))?;
                let kind = toks
                    .next()
                    .ok_or_else(|| MilpError::Parse("var: missing kind".into()))?;
                let lb = parse_bound(
                    toks.next()
                        .ok_or_else(|| MilpError::Parse("var: missing lb".into()))?,
                )?;
                let ub = parse_bound(
                    toks.next()
                        .ok_or_else(|| MilpError::Parse("var: missing ub".into()))?,
                )?;
                match kind {
                    "cont" => {
                        model.add_continuous(name, lb, ub);
                    }
                    "bin" => {
                        let id = model.add_binary(name);
                        model.variables[id.0].lower = lb;
                        model.variables[id.0].upper = ub;
                    }
                    k => return Err(MilpError::Parse(format!("unknown var kind `{k}`"))),
                }
            }
            Some("min") => {
                let mut obj = Vec::new();
                for tok in toks {
                    let (name, coef) = term(tok)?;
                    let id = model
                        .var_by_name(&name)
                        .ok_or_else(|| MilpError::Parse(format!("unknown variable `{name}`")))?;
                    obj.push((id, coef));
                }
                model.set_objective(obj);
            }
            Some("row") => {
                let name = toks
                    .next()
                    .ok_or_else(|| MilpError::Parse("row: missing name".into()))?
                    .to_string();
                let sense = match toks.next() {
                    Some("le") => Sense::Le,
                    Some("eq") => Sense::Eq,
                    Some("ge") => Sense::Ge,
                    s => return Err(MilpError::Parse(format!("bad sense {s:?}"))),
                };
                let rhs = parse_bound(
                    toks.next()
                        .ok_or_else(|| MilpError::Parse("row: missing rhs".into()))?,
                )?;
                let mut terms = Vec::new();
                for tok in toks {
                    let (vname, coef) = term(tok)?;
                    let id = model
                        .var_by_name(&vname)
                        .ok_or_else(|| MilpError::Parse(format!("unknown variable `{vname}`")))?;
                    terms.push((id, coef));
                }
                model.add_constraint(name, terms, sense, rhs);
            }
            Some("end") => break,
            Some(other) => return Err(MilpError::Parse(format!("unknown directive `{other}`"))),
            None => continue,
        }
    }
    model.validate()?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{MilpModel, Sense};

    #[test]
    fn empty_model_header_only() {
        let text = export_model(&MilpModel::new());
        assert_eq!(text, "milp 1\nmin\nend\n");
        let back = import_model(&text).unwrap();
        assert_eq!(back.num_vars(), 0);
    }

    #[test]
    fn one_var_one_constraint_golden() {
        let mut m = MilpModel::new();
        let x = m.add_continuous("x", 0.0, 10.0);
        m.add_constraint("c0", vec![(x, 2.5)], Sense::Ge, 1.0);
        m.set_objective(vec![(x, 1.0)]);
        let text = export_model(&m);
        assert_eq!(text, "milp 1\nvar x cont 0 10\nmin x:1\nrow c0 ge 1 x:2.5\nend\n");
    }

    #[test]
    fn roundtrip_idempotent() {
        let mut m = MilpModel::new();
        let x = m.add_continuous("x", -1.25, f64::INFINITY);
        let z = m.add_binary("z");
        m.add_constraint("c", vec![(x, 0.1), (z, -1e5)], Sense::Le, 3.0e-7);
        m.set_objective(vec![(x, 1.0), (z, 0.5)]);
        let t1 = export_model(&m);
        let t2 = export_model(&import_model(&t1).unwrap());
        assert_eq!(t1, t2);
    }
}
