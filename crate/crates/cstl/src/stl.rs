//! STL formula AST, text parser, negation normal form, horizon and
//! active-instant extraction.

use nalgebra::DVector;

use crate::error::{CstlError, Result};

/// Affine predicate `h(x) = nu'x + gamma >= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinePredicate {
    pub nu: DVector<f64>,
    pub gamma: f64,
}

impl AffinePredicate {
    pub fn new(nu: DVector<f64>, gamma: f64) -> Result<Self> {
        if nu.iter().all(|&c| c == 0.0) {
            return Err(CstlError::Dimension(
                "predicate has no state-variable coefficient".into(),
            ));
        }
        Ok(Self { nu, gamma })
    }

    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        self.nu.dot(x) + self.gamma
    }

    /// Complement predicate `-h(x) >= 0` (non-strict; the measure-zero
    /// boundary is collapsed).
    pub fn negated(&self) -> Self {
        Self {
            nu: -&self.nu,
            gamma: -self.gamma,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StlFormula {
    True,
    Pred(AffinePredicate),
    Not(Box<StlFormula>),
    And(Vec<StlFormula>),
    Or(Vec<StlFormula>),
    Eventually {
        a: f64,
        b: f64,
        child: Box<StlFormula>,
    },
    Always {
        a: f64,
        b: f64,
        child: Box<StlFormula>,
    },
    Until {
        a: f64,
        b: f64,
        left: Box<StlFormula>,
        right: Box<StlFormula>,
    },
}

impl StlFormula {
    /// Canonical representation of `false`: an empty disjunction.
    pub fn falsum() -> Self {
        StlFormula::Or(vec![])
    }

    /// Minimum time needed to decide satisfaction.
    pub fn horizon(&self) -> f64 {
        match self {
            StlFormula::True | StlFormula::Pred(_) => 0.0,
            StlFormula::Not(f) => f.horizon(),
            StlFormula::And(cs) | StlFormula::Or(cs) => {
                cs.iter().map(|c| c.horizon()).fold(0.0, f64::max)
            }
            StlFormula::Eventually { b, child, .. } | StlFormula::Always { b, child, .. } => {
                b + child.horizon()
            }
            StlFormula::Until { b, left, right, .. } => {
                b + left.horizon().max(right.horizon())
            }
        }
    }

    /// Negation normal form: negation pushed down onto predicates, where the
    /// negated predicate is replaced by its non-strict complement.
    pub fn to_nnf(&self) -> Result<StlFormula> {
        match self {
            StlFormula::True | StlFormula::Pred(_) => Ok(self.clone()),
            StlFormula::Not(f) => f.negate_nnf(),
            StlFormula::And(cs) => Ok(StlFormula::And(
                cs.iter().map(|c| c.to_nnf()).collect::<Result<_>>()?,
            )),
            StlFormula::Or(cs) => Ok(StlFormula::Or(
                cs.iter().map(|c| c.to_nnf()).collect::<Result<_>>()?,
            )),
            StlFormula::Eventually { a, b, child } => Ok(StlFormula::Eventually {
                a: *a,
                b: *b,
                child: Box::new(child.to_nnf()?),
            }),
            StlFormula::Always { a, b, child } => Ok(StlFormula::Always {
                a: *a,
                b: *b,
                child: Box::new(child.to_nnf()?),
            }),
            StlFormula::Until { a, b, left, right } => Ok(StlFormula::Until {
                a: *a,
                b: *b,
                left: Box::new(left.to_nnf()?),
                right: Box::new(right.to_nnf()?),
            }),
        }
    }

    fn negate_nnf(&self) -> Result<StlFormula> {
        match self {
            StlFormula::True => Ok(StlFormula::falsum()),
            StlFormula::Pred(p) => Ok(StlFormula::Pred(p.negated())),
            StlFormula::Not(f) => f.to_nnf(),
            StlFormula::And(cs) => Ok(StlFormula::Or(
                cs.iter().map(|c| c.negate_nnf()).collect::<Result<_>>()?,
            )),
            StlFormula::Or(cs) => Ok(StlFormula::And(
                cs.iter().map(|c| c.negate_nnf()).collect::<Result<_>>()?,
            )),
            StlFormula::Eventually { a, b, child } => Ok(StlFormula::Always {
                a: *a,
                b: *b,
                child: Box::new(child.negate_nnf()?),
            }),
            StlFormula::Always { a, b, child } => Ok(StlFormula::Eventually {
                a: *a,
                b: *b,
                child: Box::new(child.negate_nnf()?),
            }),
            StlFormula::Until { .. } => Err(CstlError::NegatedUntil),
        }
    }

    /// Active time instants seeded from the interval endpoints of top-level
    /// temporal operators, plus 0 and the horizon.
    pub fn initial_instants(&self) -> TimeBoundSet {
        let mut out = vec![0.0, self.horizon()];
        self.collect_endpoints(&mut out);
        TimeBoundSet::from_values(out)
    }

    fn collect_endpoints(&self, out: &mut Vec<f64>) {
        match self {
            StlFormula::True | StlFormula::Pred(_) => {}
            StlFormula::Not(f) => f.collect_endpoints(out),
            StlFormula::And(cs) | StlFormula::Or(cs) => {
                for c in cs {
                    c.collect_endpoints(out);
                }
            }
            // Outer endpoints only; nested operators are handled through
            // interval constraints.
            StlFormula::Eventually { a, b, .. } | StlFormula::Always { a, b, .. } => {
                out.push(*a);
                out.push(*b);
            }
            StlFormula::Until { a, b, .. } => {
                out.push(*a);
                out.push(*b);
            }
        }
    }
}

/// Sorted, deduplicated set of seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeBoundSet(Vec<f64>);

pub const TIME_MERGE_TOL: f64 = 1e-9;

impl TimeBoundSet {
    pub fn from_values(mut values: Vec<f64>) -> Self {
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut out: Vec<f64> = Vec::with_capacity(values.len());
        for v in values {
            if out.last().map_or(true, |&last| v - last > TIME_MERGE_TOL) {
                out.push(v);
            }
        }
        TimeBoundSet(out)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Inserts midpoints between consecutive instants (|out| = 2|in| - 1).
    pub fn bisect(&self) -> TimeBoundSet {
        let mut values = self.0.clone();
        for w in self.0.windows(2) {
            values.push(0.5 * (w[0] + w[1]));
        }
        TimeBoundSet::from_values(values)
    }
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

struct Parser<'a> {
    text: &'a [u8],
    pos: usize,
    n: usize,
}

pub fn parse_formula(text: &str, n: usize) -> Result<StlFormula> {
    let mut p = Parser {
        text: text.as_bytes(),
        pos: 0,
        n,
    };
    let f = p.parse_or()?;
    p.skip_ws();
    if p.pos != p.text.len() {
        return Err(p.err("unexpected trailing input"));
    }
    Ok(f)
}

impl<'a> Parser<'a> {
    fn err(&self, msg: &str) -> CstlError {
        CstlError::Syntax {
            pos: self.pos,
            msg: msg.into(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.text.len() && self.text[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.text.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.err(&format!("expected `{}`", c as char)))
        }
    }

    fn parse_or(&mut self) -> Result<StlFormula> {
        let first = self.parse_and()?;
        let mut children = vec![first];
        while self.eat(b'|') {
            children.push(self.parse_and()?);
        }
        Ok(if children.len() == 1 {
            children.pop().unwrap()
        } else {
            StlFormula::Or(children)
        })
    }

    fn parse_and(&mut self) -> Result<StlFormula> {
        let first = self.parse_unary()?;
        let mut children = vec![first];
        while self.eat(b'&') {
            children.push(self.parse_unary()?);
        }
        Ok(if children.len() == 1 {
            children.pop().unwrap()
        } else {
            StlFormula::And(children)
        })
    }

    fn parse_interval(&mut self) -> Result<(f64, f64)> {
        self.expect(b'[')?;
        let a = self.parse_number()?;
        self.expect(b',')?;
        let b = self.parse_number()?;
        self.expect(b']')?;
        if a < 0.0 || a > b {
            return Err(CstlError::Interval { a, b });
        }
        Ok((a, b))
    }

    fn parse_unary(&mut self) -> Result<StlFormula> {
        match self.peek() {
            Some(b'!') => {
                self.pos += 1;
                Ok(StlFormula::Not(Box::new(self.parse_unary()?)))
            }
            Some(b'F') if self.text.get(self.pos + 1) == Some(&b'[') => {
                self.pos += 1;
                let (a, b) = self.parse_interval()?;
                Ok(StlFormula::Eventually {
                    a,
                    b,
                    child: Box::new(self.parse_unary()?),
                })
            }
            Some(b'G') if self.text.get(self.pos + 1) == Some(&b'[') => {
                self.pos += 1;
                let (a, b) = self.parse_interval()?;
                Ok(StlFormula::Always {
                    a,
                    b,
                    child: Box::new(self.parse_unary()?),
                })
            }
            Some(b'(') => {
                self.pos += 1;
                let left = self.parse_or()?;
                self.skip_ws();
                if self.peek() == Some(b'U') && self.text.get(self.pos + 1) == Some(&b'[') {
                    self.pos += 1;
                    let (a, b) = self.parse_interval()?;
                    let right = self.parse_or()?;
                    self.expect(b')')?;
                    Ok(StlFormula::Until {
                        a,
                        b,
                        left: Box::new(left),
                        right: Box::new(right),
                    })
                } else {
                    self.expect(b')')?;
                    Ok(left)
                }
            }
            _ => self.parse_atom(),
        }
    }

    fn parse_atom(&mut self) -> Result<StlFormula> {
        self.skip_ws();
        if self.text[self.pos..].starts_with(b"true") {
            self.pos += 4;
            return Ok(StlFormula::True);
        }
        let (coeffs, lhs_const) = self.parse_linexpr()?;
        self.skip_ws();
        let ge = if self.text[self.pos..].starts_with(b">=") {
            self.pos += 2;
            true
        } else if self.text[self.pos..].starts_with(b"<=") {
            self.pos += 2;
            false
        } else {
            return Err(self.err("expected `>=` or `<=`"));
        };
        let rhs = self.parse_signed_number()?;
        // h(x) >= 0 normal form; `expr <= c` becomes `c - expr >= 0`.
        let (nu, gamma) = if ge {
            (DVector::from_vec(coeffs), lhs_const - rhs)
        } else {
            (
                DVector::from_vec(coeffs.iter().map(|&c| -c).collect()),
                rhs - lhs_const,
            )
        };
        Ok(StlFormula::Pred(AffinePredicate::new(nu, gamma)?))
    }

    /// Linear expression over `x1..xn`; returns (coefficients, constant).
    fn parse_linexpr(&mut self) -> Result<(Vec<f64>, f64)> {
        let mut coeffs = vec![0.0; self.n];
        let mut constant = 0.0;
        let mut first = true;
        loop {
            self.skip_ws();
            let sign = if self.eat(b'+') {
                1.0
            } else if self.eat(b'-') {
                -1.0
            } else if first {
                1.0
            } else {
                break;
            };
            self.parse_term(sign, &mut coeffs, &mut constant)?;
            first = false;
            self.skip_ws();
            match self.text.get(self.pos) {
                Some(b'+') | Some(b'-') => continue,
                _ => break,
            }
        }
        Ok((coeffs, constant))
    }

    fn parse_term(&mut self, sign: f64, coeffs: &mut [f64], constant: &mut f64) -> Result<()> {
        self.skip_ws();
        // Allow an extra unary minus after an infix operator ("+ -2*x1").
        let sign = if self.eat(b'-') { -sign } else { sign };
        match self.peek() {
            Some(b'x') => {
                let idx = self.parse_var()?;
                coeffs[idx] += sign;
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => {
                let num = self.parse_number()?;
                self.skip_ws();
                if self.eat(b'*') {
                    let idx = self.parse_var()?;
                    coeffs[idx] += sign * num;
                } else {
                    *constant += sign * num;
                }
            }
            _ => return Err(self.err("expected term")),
        }
        Ok(())
    }

    fn parse_var(&mut self) -> Result<usize> {
        self.skip_ws();
        self.expect(b'x')?;
        let start = self.pos;
        while self.pos < self.text.len() && self.text[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err("expected state index after `x`"));
        }
        let idx: usize = std::str::from_utf8(&self.text[start..self.pos])
            .unwrap()
            .parse()
            .map_err(|_| self.err("bad state index"))?;
        if idx == 0 || idx > self.n {
            return Err(CstlError::Dimension(format!(
                "state variable x{idx} exceeds dimension {}",
                self.n
            )));
        }
        Ok(idx - 1)
    }

    fn parse_signed_number(&mut self) -> Result<f64> {
        self.skip_ws();
        let neg = self.eat(b'-');
        let v = self.parse_number()?;
        Ok(if neg { -v } else { v })
    }

    fn parse_number(&mut self) -> Result<f64> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.text.len() {
            let c = self.text[self.pos];
            if c.is_ascii_digit() || c == b'.' {
                self.pos += 1;
            } else if (c == b'e' || c == b'E')
                && self.pos > start
                && self
                    .text
                    .get(self.pos + 1)
                    .map_or(false, |&d| d.is_ascii_digit() || d == b'+' || d == b'-')
            {
                self.pos += 2;
            } else {
                break;
            }
        }
        if start == self.pos {
            return Err(self.err("expected number"));
        }
        std::str::from_utf8(&self.text[start..self.pos])
            .unwrap()
            .parse()
            .map_err(|_| self.err("bad number"))
    }
}

// ---------------------------------------------------------------------------
// Printer (canonical; parse(print(f)) is structurally identical to f)
// ---------------------------------------------------------------------------

impl std::fmt::Display for StlFormula {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        fn wrap(node: &StlFormula, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
            match node {
                StlFormula::True | StlFormula::Pred(_) | StlFormula::Until { .. } => {
                    write!(f, "{node}")
                }
                _ => write!(f, "({node})"),
            }
        }
        match self {
            StlFormula::True => write!(f, "true"),
            StlFormula::Pred(p) => {
                let mut first = true;
                for (i, &c) in p.nu.iter().enumerate() {
                    if c != 0.0 {
                        if !first {
                            write!(f, " + ")?;
                        }
                        write!(f, "{}*x{}", c, i + 1)?;
                        first = false;
                    }
                }
                write!(f, " >= {}", -p.gamma)
            }
            StlFormula::Not(g) => {
                write!(f, "!")?;
                wrap(g, f)
            }
            StlFormula::And(cs) => {
                for (i, c) in cs.iter().enumerate() {
                    if i > 0 {
                        write!(f, " & ")?;
                    }
                    wrap(c, f)?;
                }
                Ok(())
            }
            StlFormula::Or(cs) => {
                for (i, c) in cs.iter().enumerate() {
                    if i > 0 {
                        write!(f, " | ")?;
                    }
                    wrap(c, f)?;
                }
                Ok(())
            }
            StlFormula::Eventually { a, b, child } => {
                write!(f, "F[{a},{b}]")?;
                wrap(child, f)
            }
            StlFormula::Always { a, b, child } => {
                write!(f, "G[{a},{b}]")?;
                wrap(child, f)
            }
            StlFormula::Until { a, b, left, right } => {
                write!(f, "(")?;
                wrap(left, f)?;
                write!(f, " U[{a},{b}] ")?;
                wrap(right, f)?;
                write!(f, ")")
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    fn pred(nu: Vec<f64>, gamma: f64) -> StlFormula {
        StlFormula::Pred(AffinePredicate::new(DVector::from_vec(nu), gamma).unwrap())
    }

    #[test]
    fn parse_example_one_formula() {
        let f = parse_formula("F[0,1.0](x1 >= 3) & F[2.0,4.5](x1 <= -2)", 2).unwrap();
        let expected = StlFormula::And(vec![
            StlFormula::Eventually {
                a: 0.0,
                b: 1.0,
                child: Box::new(pred(vec![1.0, 0.0], -3.0)),
            },
            StlFormula::Eventually {
                a: 2.0,
                b: 4.5,
                child: Box::new(pred(vec![-1.0, 0.0], -2.0)),
            },
        ]);
        assert_eq!(f, expected);
    }

    #[test]
    fn parse_true() {
        assert_eq!(parse_formula("true", 2).unwrap(), StlFormula::True);
    }

    #[test]
    fn parse_always_disjunction() {
        let f = parse_formula("G[0,1](x1 >= 0 | x3 >= 0)", 4).unwrap();
        match f {
            StlFormula::Always { a, b, child } => {
                assert_eq!((a, b), (0.0, 1.0));
                match *child {
                    StlFormula::Or(cs) => assert_eq!(cs.len(), 2),
                    other => panic!("expected Or, got {other:?}"),
                }
            }
            other => panic!("expected Always, got {other:?}"),
        }
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(
            parse_formula("F[2,1] x1 >= 0", 2),
            Err(CstlError::Interval { .. })
        ));
        assert!(matches!(
            parse_formula("x5 >= 0", 2),
            Err(CstlError::Dimension(_))
        ));
        assert!(matches!(
            parse_formula("x1 >", 2),
            Err(CstlError::Syntax { .. })
        ));
    }

    #[test]
    fn nnf_pushes_negation_onto_predicates() {
        let f = StlFormula::Not(Box::new(StlFormula::Eventually {
            a: 0.5,
            b: 2.0,
            child: Box::new(pred(vec![1.0], -3.0)),
        }));
        let nnf = f.to_nnf().unwrap();
        assert_eq!(
            nnf,
            StlFormula::Always {
                a: 0.5,
                b: 2.0,
                child: Box::new(pred(vec![-1.0], 3.0)),
            }
        );
    }

    #[test]
    fn nnf_de_morgan() {
        let p = pred(vec![1.0], 0.0);
        let q = pred(vec![2.0], 1.0);
        let f = StlFormula::Not(Box::new(StlFormula::And(vec![p.clone(), q.clone()])));
        let nnf = f.to_nnf().unwrap();
        let neg = |g: &StlFormula| match g {
            StlFormula::Pred(p) => StlFormula::Pred(p.negated()),
            _ => unreachable!(),
        };
        assert_eq!(nnf, StlFormula::Or(vec![neg(&p), neg(&q)]));
    }

    #[test]
    fn nnf_idempotent_on_nnf_input() {
        let f = parse_formula("G[0,1](x1 >= 0 | x2 >= 0) & F[0,2] x1 <= 5", 2).unwrap();
        let nnf = f.to_nnf().unwrap();
        assert_eq!(nnf.to_nnf().unwrap(), nnf);
    }

    #[test]
    fn horizon_cases() {
        let phi1 = parse_formula("F[0,1.0](x1 >= 3) & F[2.0,4.5](x1 <= -2)", 2).unwrap();
        assert_eq!(phi1.horizon(), 4.5);
        assert_eq!(pred(vec![1.0], 0.0).horizon(), 0.0);
        let nested = parse_formula("G[0,1] F[0,0.5] x1 >= 0", 1).unwrap();
        assert_eq!(nested.horizon(), 1.5);
    }

    #[test]
    fn initial_instants_examples() {
        let phi1 = parse_formula("F[0,1.0](x1 >= 3) & F[2.0,4.5](x1 <= -2)", 2).unwrap();
        assert_eq!(phi1.initial_instants().as_slice(), &[0.0, 1.0, 2.0, 4.5]);

        let phi2 = parse_formula(
            "F[0.1,0.6](x1 <= -0.5 & x3 >= 0.5) & F[0.7,1](x1 >= 1 & x3 >= 1) & G[0,1](x1 >= 0 | x3 >= 0)",
            4,
        )
        .unwrap();
        assert_eq!(
            phi2.initial_instants().as_slice(),
            &[0.0, 0.1, 0.6, 0.7, 1.0]
        );

        assert_eq!(pred(vec![1.0], 0.0).initial_instants().as_slice(), &[0.0]);
    }

    #[test]
    fn bisect_instants() {
        let t = TimeBoundSet::from_values(vec![0.0, 1.0, 2.0, 4.5]);
        assert_eq!(t.bisect().as_slice(), &[0.0, 0.5, 1.0, 1.5, 2.0, 3.25, 4.5]);
        let two = TimeBoundSet::from_values(vec![0.0, 4.0]);
        assert_eq!(two.bisect().as_slice(), &[0.0, 2.0, 4.0]);
    }

    // Discrete-time brute-force evaluator over sampled states; oracle for the
    // NNF semantics property.
    fn eval_sampled(f: &StlFormula, times: &[f64], states: &[DVector<f64>], k: usize) -> bool {
        match f {
            StlFormula::True => true,
            StlFormula::Pred(p) => p.eval(&states[k]) >= 0.0,
            StlFormula::Not(g) => !eval_sampled(g, times, states, k),
            StlFormula::And(cs) => cs.iter().all(|c| eval_sampled(c, times, states, k)),
            StlFormula::Or(cs) => cs.iter().any(|c| eval_sampled(c, times, states, k)),
            StlFormula::Eventually { a, b, child } => (0..times.len())
                .filter(|&j| times[j] >= times[k] + a - 1e-12 && times[j] <= times[k] + b + 1e-12)
                .any(|j| eval_sampled(child, times, states, j)),
            StlFormula::Always { a, b, child } => (0..times.len())
                .filter(|&j| times[j] >= times[k] + a - 1e-12 && times[j] <= times[k] + b + 1e-12)
                .all(|j| eval_sampled(child, times, states, j)),
            StlFormula::Until { a, b, left, right } => (0..times.len())
                .filter(|&j| times[j] >= times[k] + a - 1e-12 && times[j] <= times[k] + b + 1e-12)
                .any(|j| {
                    eval_sampled(right, times, states, j)
                        && (k..=j).all(|i| eval_sampled(left, times, states, i))
                }),
        }
    }

    fn random_formula(rng: &mut impl rand::Rng, depth: usize, n: usize) -> StlFormula {
        let leaf = depth == 0 || rng.gen_bool(0.3);
        if leaf {
            let mut nu = vec![0.0; n];
            nu[rng.gen_range(0..n)] = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            return pred(nu, rng.gen_range(-2.0..2.0));
        }
        match rng.gen_range(0..5) {
            0 => StlFormula::Not(Box::new(random_formula(rng, depth - 1, n))),
            1 => StlFormula::And(vec![
                random_formula(rng, depth - 1, n),
                random_formula(rng, depth - 1, n),
            ]),
            2 => StlFormula::Or(vec![
                random_formula(rng, depth - 1, n),
                random_formula(rng, depth - 1, n),
            ]),
            3 => {
                let a = rng.gen_range(0.0..1.0);
                StlFormula::Eventually {
                    a,
                    b: a + rng.gen_range(0.0..1.5),
                    child: Box::new(random_formula(rng, depth - 1, n)),
                }
            }
            _ => {
                let a = rng.gen_range(0.0..1.0);
                StlFormula::Always {
                    a,
                    b: a + rng.gen_range(0.0..1.5),
                    child: Box::new(random_formula(rng, depth - 1, n)),
                }
            }
        }
    }

    #[test]
    fn nnf_preserves_sampled_semantics() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..300 {
            let n = 2;
            let f = random_formula(&mut rng, 3, n);
            let nnf = f.to_nnf().unwrap();
            let times: Vec<f64> = (0..9).map(|i| i as f64 * 0.5).collect();
            let states: Vec<DVector<f64>> = times
                .iter()
                .map(|_| dvector![rand::Rng::gen_range(&mut rng, -3.0..3.0), rand::Rng::gen_range(&mut rng, -3.0..3.0)])
                .collect();
            for k in 0..times.len() {
                assert_eq!(
                    eval_sampled(&f, &times, &states, k),
                    eval_sampled(&nnf, &times, &states, k),
                    "formula {f} vs nnf {nnf} at k={k}"
                );
            }
            assert_eq!(f.horizon(), nnf.horizon());
        }
    }

    #[test]
    fn roundtrip_print_parse_random() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..300 {
            let f = random_formula(&mut rng, 3, 2);
            let text = f.to_string();
            let back = parse_formula(&text, 2).unwrap_or_else(|e| panic!("{text}: {e}"));
            assert_eq!(f, back, "text: {text}");
        }
    }

    #[test]
    fn instants_sorted_unique_within_horizon() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let f = random_formula(&mut rng, 3, 2).to_nnf().unwrap();
            let inst = f.initial_instants();
            let s = inst.as_slice();
            for w in s.windows(2) {
                assert!(w[1] > w[0]);
            }
            assert_eq!(s[0], 0.0);
            assert!(*s.last().unwrap() <= f.horizon() + 1e-9);
        }
    }
}
