//! Solver-agnostic linear model intermediate representation.

use std::collections::HashMap;

use crate::MilpError;

/// Index of a variable in a [`MilpModel`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone)]
pub struct Variable {
    pub name: String,
    pub kind: VarKind,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Eq,
    Ge,
}

/// Sparse linear constraint `row (sense) rhs`.
#[derive(Debug, Clone)]
pub struct Constraint {
    pub name: String,
    pub terms: Vec<(VarId, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

/// Variables, linear constraints and a linear minimization objective.
#[derive(Debug, Clone, Default)]
pub struct MilpModel {
    pub variables: Vec<Variable>,
    pub constraints: Vec<Constraint>,
    /// Sparse objective vector; minimized.
    pub objective: Vec<(VarId, f64)>,
}

impl MilpModel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_continuous(&mut self, name: impl Into<String>, lower: f64, upper: f64) -> VarId {
        self.variables.push(Variable {
            name: name.into(),
            kind: VarKind::Continuous,
            lower,
            upper,
        });
        VarId(self.variables.len() - 1)
    }

    pub fn add_binary(&mut self, name: impl Into<String>) -> VarId {
        self.variables.push(Variable {
            name: name.into(),
            kind: VarKind::Binary,
            lower: 0.0,
            upper: 1.0,
        });
        VarId(self.variables.len() - 1)
    }

    /// Binary fixed to a constant value (still branched as integral).
    pub fn add_fixed_binary(&mut self, name: impl Into<String>, value: f64) -> VarId {
        self.variables.push(Variable {
            name: name.into(),
            kind: VarKind::Binary,
            lower: value,
            upper: value,
        });
        VarId(self.variables.len() - 1)
    }

    pub fn add_constraint(
        &mut self,
        name: impl Into<String>,
        terms: Vec<(VarId, f64)>,
        sense: Sense,
        rhs: f64,
    ) {
        self.constraints.push(Constraint {
            name: name.into(),
            terms,
            sense,
            rhs,
        });
    }

    pub fn set_objective(&mut self, terms: Vec<(VarId, f64)>) {
        self.objective = terms;
    }

    pub fn num_vars(&self) -> usize {
        self.variables.len()
    }

    pub fn num_binaries(&self) -> usize {
        self.variables
            .iter()
            .filter(|v| v.kind == VarKind::Binary)
            .count()
    }

    pub fn var_by_name(&self, name: &str) -> Option<VarId> {
        self.variables
            .iter()
            .position(|v| v.name == name)
            .map(VarId)
    }

    /// Structural sanity: referenced variables declared, binary bounds within
    /// [0,1], finite rhs.
    pub fn validate(&self) -> Result<(), MilpError> {
        let n = self.variables.len();
        for v in &self.variables {
            if v.kind == VarKind::Binary && (v.lower < 0.0 || v.upper > 1.0 || v.lower > v.upper) {
                return Err(MilpError::Invalid(format!(
                    "binary `{}` has bounds [{}, {}]",
                    v.name, v.lower, v.upper
                )));
            }
            if v.lower > v.upper {
                return Err(MilpError::Invalid(format!(
                    "variable `{}` has empty bound interval",
                    v.name
                )));
            }
        }
        let mut seen = HashMap::new();
        for c in &self.constraints {
            if !c.rhs.is_finite() {
                return Err(MilpError::Invalid(format!(
                    "constraint `{}` has non-finite rhs",
                    c.name
                )));
            }
            seen.clear();
            for &(VarId(j), coef) in &c.terms {
                if j >= n {
                    return Err(MilpError::Invalid(format!(
                        "constraint `{}` references undeclared variable {}",
                        c.name, j
                    )));
                }
                if !coef.is_finite() {
                    return Err(MilpError::Invalid(format!(
                        "constraint `{}` has non-finite coefficient",
                        c.name
                    )));
                }
                *seen.entry(j).or_insert(0u32) += 1;
            }
        }
        for &(VarId(j), _) in &self.objective {
            if j >= n {
                return Err(MilpError::Invalid(format!(
                    "objective references undeclared variable {}",
                    j
                )));
            }
        }
        Ok(())
    }

    /// Evaluates a sparse linear form at an assignment.
    pub fn eval_terms(terms: &[(VarId, f64)], x: &[f64]) -> f64 {
        terms.iter().map(|&(VarId(j), c)| c * x[j]).sum()
    }

    /// Largest constraint violation of `x` over all rows and bounds.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (j, v) in self.variables.iter().enumerate() {
            worst = worst.max(v.lower - x[j]).max(x[j] - v.upper);
        }
        for c in &self.constraints {
            let lhs = Self::eval_terms(&c.terms, x);
            let viol = match c.sense {
                Sense::Le => lhs - c.rhs,
                Sense::Ge => c.rhs - lhs,
                Sense::Eq => (lhs - c.rhs).abs(),
            };
            worst = worst.max(viol);
        }
        worst
    }
}
