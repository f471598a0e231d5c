//! Expression trees over `X0, X1, X2` with `+`, `-`, `*` and constants.
//!
//! With only these operators every expression is a polynomial, so
//! simplification and canonical printing go through [`Polynomial`].

use std::collections::BTreeMap;
use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum Expression {
    Const(f64),
    Var(usize),
    Add(Box<Expression>, Box<Expression>),
    Sub(Box<Expression>, Box<Expression>),
    Mul(Box<Expression>, Box<Expression>),
}

pub const VARIABLE_NAMES: [&str; 3] = ["X0", "X1", "X2"];

impl Expression {
    pub fn constant(c: f64) -> Self {
        Expression::Const(c)
    }

    pub fn var(i: usize) -> Self {
        assert!(i < 3, "variable index {i} out of range");
        Expression::Var(i)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn add(a: Expression, b: Expression) -> Self {
        Expression::Add(Box::new(a), Box::new(b))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn sub(a: Expression, b: Expression) -> Self {
        Expression::Sub(Box::new(a), Box::new(b))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn mul(a: Expression, b: Expression) -> Self {
        Expression::Mul(Box::new(a), Box::new(b))
    }

    pub fn eval(&self, x: &[f64; 3]) -> f64 {
        match self {
            Expression::Const(c) => *c,
            Expression::Var(i) => x[*i],
            Expression::Add(a, b) => a.eval(x) + b.eval(x),
            Expression::Sub(a, b) => a.eval(x) - b.eval(x),
            Expression::Mul(a, b) => a.eval(x) * b.eval(x),
        }
    }

    /// Evaluate on every row.
    pub fn eval_rows(&self, rows: &[[f64; 3]]) -> Vec<f64> {
        match self {
            Expression::Const(c) => vec![*c; rows.len()],
            Expression::Var(i) => rows.iter().map(|r| r[*i]).collect(),
            Expression::Add(a, b) | Expression::Sub(a, b) | Expression::Mul(a, b) => {
                let mut lhs = a.eval_rows(rows);
                let rhs = b.eval_rows(rows);
                for (l, r) in lhs.iter_mut().zip(rhs) {
                    *l = match self {
                        Expression::Add(..) => *l + r,
                        Expression::Sub(..) => *l - r,
                        _ => *l * r,
                    };
                }
                lhs
            }
        }
    }

    /// Number of nodes.
    pub fn size(&self) -> usize {
        match self {
            Expression::Const(_) | Expression::Var(_) => 1,
            Expression::Add(a, b) | Expression::Sub(a, b) | Expression::Mul(a, b) => 1 + a.size() + b.size(),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Expression::Const(_) | Expression::Var(_) => 1,
            Expression::Add(a, b) | Expression::Sub(a, b) | Expression::Mul(a, b) => 1 + a.depth().max(b.depth()),
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            Expression::Const(c) => c.is_finite(),
            Expression::Var(_) => true,
            Expression::Add(a, b) | Expression::Sub(a, b) | Expression::Mul(a, b) => a.is_finite() && b.is_finite(),
        }
    }

    /// Constants in pre-order.
    pub fn constants(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit_constants(&mut |c| out.push(*c));
        out
    }

    fn visit_constants(&self, f: &mut dyn FnMut(&f64)) {
        match self {
            Expression::Const(c) => f(c),
            Expression::Var(_) => {}
            Expression::Add(a, b) | Expression::Sub(a, b) | Expression::Mul(a, b) => {
                a.visit_constants(f);
                b.visit_constants(f);
            }
        }
    }

    /// Overwrite constants in pre-order; `values` must hold one per constant.
    pub fn set_constants(&mut self, values: &[f64]) {
        let mut it = values.iter();
        self.set_constants_inner(&mut it);
    }

    fn set_constants_inner(&mut self, it: &mut std::slice::Iter<'_, f64>) {
        match self {
            Expression::Const(c) => *c = *it.next().expect("one value per constant"),
            Expression::Var(_) => {}
            Expression::Add(a, b) | Expression::Sub(a, b) | Expression::Mul(a, b) => {
                a.set_constants_inner(it);
                b.set_constants_inner(it);
            }
        }
    }

    /// Values and derivatives with respect to every constant (pre-order),
    /// on every row. Returns `(values, jacobian)` with `jacobian[k][row]`.
    pub fn eval_with_constant_jacobian(&self, rows: &[[f64; 3]]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let n = rows.len();
        let k = self.constants().len();
        let mut next = 0;
        self.jac_inner(rows, n, k, &mut next)
    }

    fn jac_inner(&self, rows: &[[f64; 3]], n: usize, k: usize, next: &mut usize) -> (Vec<f64>, Vec<Vec<f64>>) {
        match self {
            Expression::Const(c) => {
                let mut jac = vec![Vec::new(); k];
                jac[*next] = vec![1.0; n];
                *next += 1;
                (vec![*c; n], jac)
            }
            Expression::Var(i) => (rows.iter().map(|r| r[*i]).collect(), vec![Vec::new(); k]),
            Expression::Add(a, b) | Expression::Sub(a, b) | Expression::Mul(a, b) => {
                let (va, ja) = a.jac_inner(rows, n, k, next);
                let (vb, jb) = b.jac_inner(rows, n, k, next);
                // Empty vectors stand for identically-zero derivatives.
                let jac = ja
                    .into_iter()
                    .zip(jb)
                    .map(|(da, db)| match self {
                        Expression::Add(..) | Expression::Sub(..) => {
                            let sign = if matches!(self, Expression::Sub(..)) { -1.0 } else { 1.0 };
                            match (da.is_empty(), db.is_empty()) {
                                (true, true) => Vec::new(),
                                (false, true) => da,
                                (true, false) => db.into_iter().map(|d| sign * d).collect(),
                                (false, false) => da.iter().zip(&db).map(|(x, y)| x + sign * y).collect(),
                            }
                        }
                        _ => match (da.is_empty(), db.is_empty()) {
                            (true, true) => Vec::new(),
                            (false, true) => da.iter().zip(&vb).map(|(d, v)| d * v).collect(),
                            (true, false) => db.iter().zip(&va).map(|(d, v)| d * v).collect(),
                            (false, false) => (0..n).map(|r| da[r] * vb[r] + va[r] * db[r]).collect(),
                        },
                    })
                    .collect();
                let vals = match self {
                    Expression::Add(..) => va.iter().zip(&vb).map(|(x, y)| x + y).collect(),
                    Expression::Sub(..) => va.iter().zip(&vb).map(|(x, y)| x - y).collect(),
                    _ => va.iter().zip(&vb).map(|(x, y)| x * y).collect(),
                };
                (vals, jac)
            }
        }
    }

    pub fn to_polynomial(&self) -> Polynomial {
        match self {
            Expression::Const(c) => Polynomial::constant(*c),
            Expression::Var(i) => {
                let mut e = [0; 3];
                e[*i] = 1;
                Polynomial::monomial(e, 1.0)
            }
            Expression::Add(a, b) => a.to_polynomial().add(&b.to_polynomial(), 1.0),
            Expression::Sub(a, b) => a.to_polynomial().add(&b.to_polynomial(), -1.0),
            Expression::Mul(a, b) => a.to_polynomial().mul(&b.to_polynomial()),
        }
    }

    /// Constant folding, identity elimination and flattening, by way of the
    /// canonical polynomial form. The result evaluates to the same value on
    /// every input, up to floating-point reassociation.
    pub fn simplify(&self) -> Expression {
        self.to_polynomial().to_expression()
    }

    /// Canonical infix text with coefficients rounded to `precision`
    /// decimals.
    pub fn to_text(&self, precision: usize) -> String {
        self.to_polynomial().to_text(precision)
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text(f.precision().unwrap_or(1)))
    }
}

/// Exponents of `(X0, X1, X2)`.
pub type Exponents = [u32; 3];

fn degree(e: &Exponents) -> u32 {
    e.iter().sum()
}

/// Canonical term order: higher degree first, then higher powers of X0,
/// then X1.
fn term_order(a: &Exponents, b: &Exponents) -> std::cmp::Ordering {
    degree(b).cmp(&degree(a)).then_with(|| b.cmp(a))
}

/// Sparse polynomial in `X0, X1, X2`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Polynomial {
    terms: BTreeMap<Exponents, f64>,
}

impl Polynomial {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        Self::monomial([0; 3], c)
    }

    pub fn monomial(e: Exponents, c: f64) -> Self {
        let mut p = Self::zero();
        if c != 0.0 {
            p.terms.insert(e, c);
        }
        p
    }

    /// Sum of `coefficient * monomial` terms; repeated exponents accumulate.
    pub fn from_terms(terms: impl IntoIterator<Item = (Exponents, f64)>) -> Self {
        let mut p = Self::zero();
        for (e, c) in terms {
            *p.terms.entry(e).or_insert(0.0) += c;
        }
        p.terms.retain(|_, c| *c != 0.0);
        p
    }

    pub fn coefficient(&self, e: Exponents) -> f64 {
        self.terms.get(&e).copied().unwrap_or(0.0)
    }

    /// Nonzero terms in canonical order.
    pub fn terms(&self) -> Vec<(Exponents, f64)> {
        let mut t: Vec<_> = self.terms.iter().map(|(e, c)| (*e, *c)).collect();
        t.sort_by(|a, b| term_order(&a.0, &b.0));
        t
    }

    pub fn degree(&self) -> u32 {
        self.terms.keys().map(degree).max().unwrap_or(0)
    }

    /// Which variables appear in some nonzero term.
    pub fn support(&self) -> [bool; 3] {
        let mut s = [false; 3];
        for e in self.terms.keys() {
            for i in 0..3 {
                s[i] |= e[i] > 0;
            }
        }
        s
    }

    fn add(&self, other: &Polynomial, sign: f64) -> Polynomial {
        let mut out = self.clone();
        for (e, c) in &other.terms {
            *out.terms.entry(*e).or_insert(0.0) += sign * c;
        }
        out.terms.retain(|_, c| *c != 0.0);
        out
    }

    fn mul(&self, other: &Polynomial) -> Polynomial {
        let mut out = Polynomial::zero();
        for (ea, ca) in &self.terms {
            for (eb, cb) in &other.terms {
                let e = [ea[0] + eb[0], ea[1] + eb[1], ea[2] + eb[2]];
                *out.terms.entry(e).or_insert(0.0) += ca * cb;
            }
        }
        out.terms.retain(|_, c| *c != 0.0);
        out
    }

    pub fn eval(&self, x: &[f64; 3]) -> f64 {
        self.terms
            .iter()
            .map(|(e, c)| c * (0..3).map(|i| x[i].powi(e[i] as i32)).product::<f64>())
            .sum()
    }

    fn monomial_expression(e: &Exponents) -> Option<Expression> {
        let mut factors = (0..3).flat_map(|i| std::iter::repeat_n(i, e[i] as usize)).map(Expression::Var);
        let first = factors.next()?;
        Some(factors.fold(first, Expression::mul))
    }

    /// Sum of `coefficient * monomial` terms in canonical order.
    pub fn to_expression(&self) -> Expression {
        let mut out: Option<Expression> = None;
        for (e, c) in self.terms() {
            let magnitude = c.abs();
            let term = match Self::monomial_expression(&e) {
                None => Expression::Const(magnitude),
                Some(m) if magnitude == 1.0 => m,
                Some(m) => Expression::mul(Expression::Const(magnitude), m),
            };
            out = Some(match out {
                None if c < 0.0 => match term {
                    Expression::Const(v) => Expression::Const(-v),
                    Expression::Mul(a, b) if matches!(*a, Expression::Const(_)) => {
                        Expression::mul(Expression::Const(-magnitude), *b)
                    }
                    other => Expression::mul(Expression::Const(-1.0), other),
                },
                None => term,
                Some(acc) if c < 0.0 => Expression::sub(acc, term),
                Some(acc) => Expression::add(acc, term),
            });
        }
        out.unwrap_or(Expression::Const(0.0))
    }

    pub fn to_text(&self, precision: usize) -> String {
        let mut out = String::new();
        for (e, c) in self.terms() {
            let rounded = format!("{:.*}", precision, c.abs());
            if rounded.parse::<f64>().map_or(true, |v| v == 0.0) {
                continue;
            }
            let monomial = monomial_text(&e);
            let body = match (monomial.is_empty(), rounded.parse::<f64>() == Ok(1.0)) {
                (true, _) => rounded,
                (false, true) => monomial,
                (false, false) => format!("{rounded}*{monomial}"),
            };
            match (out.is_empty(), c < 0.0) {
                (true, true) => out.push_str(&format!("-{body}")),
                (true, false) => out.push_str(&body),
                (false, true) => out.push_str(&format!(" - {body}")),
                (false, false) => out.push_str(&format!(" + {body}")),
            }
        }
        if out.is_empty() {
            out.push('0');
        }
        out
    }
}

/// `X0^2*X1`-style text; empty for the constant monomial.
pub fn monomial_text(e: &Exponents) -> String {
    (0..3)
        .filter(|&i| e[i] > 0)
        .map(|i| match e[i] {
            1 => VARIABLE_NAMES[i].to_string(),
            p => format!("{}^{p}", VARIABLE_NAMES[i]),
        })
        .collect::<Vec<_>>()
        .join("*")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    use Expression as E;

    #[test]
    fn simplify_identities() {
        let e = E::add(E::var(0), E::constant(0.0));
        assert_eq!(e.simplify(), E::var(0));
        let e = E::mul(E::mul(E::constant(2.0), E::constant(3.0)), E::var(1));
        assert_eq!(e.simplify(), E::mul(E::constant(6.0), E::var(1)));
        let e = E::mul(E::constant(1.0), E::sub(E::var(2), E::constant(0.0)));
        assert_eq!(e.simplify(), E::var(2));
    }

    #[test]
    fn text_rendering() {
        assert_eq!(E::mul(E::constant(-1.14), E::var(0)).to_text(1), "-1.1*X0");
        assert_eq!(E::constant(0.0).to_text(1), "0");
        assert_eq!(E::add(E::var(1), E::var(0)).to_text(1), "X0 + X1");
        let quad = E::mul(E::add(E::constant(-0.6), E::var(0)), E::var(0));
        assert_eq!(quad.to_text(1), "X0^2 - 0.6*X0");
        let lin = E::sub(
            E::add(E::mul(E::constant(0.4), E::var(0)), E::mul(E::constant(-3.4), E::var(1))),
            E::mul(E::constant(0.2), E::var(2)),
        );
        assert_eq!(lin.to_text(1), "0.4*X0 - 3.4*X1 - 0.2*X2");
        assert_eq!(format!("{:.3}", E::mul(E::constant(2.5110132), E::var(1))), "2.511*X1");
        assert_eq!(E::sub(E::constant(0.5), E::var(0)).to_text(2), "-X0 + 0.50");
    }

    #[test]
    fn tiny_terms_are_hidden_in_text() {
        let e = E::add(E::var(0), E::mul(E::constant(0.01), E::var(2)));
        assert_eq!(e.to_text(1), "X0");
        assert_eq!(e.to_text(2), "X0 + 0.01*X2");
    }

    #[test]
    fn support_and_degree() {
        let p = E::mul(E::add(E::constant(-0.6), E::var(0)), E::var(0)).to_polynomial();
        assert_eq!(p.support(), [true, false, false]);
        assert_eq!(p.degree(), 2);
        assert_eq!(p.coefficient([1, 0, 0]), -0.6);
    }

    #[test]
    fn constant_jacobian_matches_finite_differences() {
        let e = E::add(
            E::mul(E::constant(1.5), E::mul(E::var(0), E::constant(-0.5))),
            E::sub(E::constant(0.25), E::mul(E::constant(2.0), E::var(2))),
        );
        let rows = [[0.3, 1.0, -0.7], [1.2, 0.0, 0.4]];
        let (vals, jac) = e.eval_with_constant_jacobian(&rows);
        assert_eq!(vals, e.eval_rows(&rows));
        let c0 = e.constants();
        for k in 0..c0.len() {
            for (r, row) in rows.iter().enumerate() {
                let h = 1e-6;
                let mut up = e.clone();
                let mut c = c0.clone();
                c[k] += h;
                up.set_constants(&c);
                let fd = (up.eval(row) - e.eval(row)) / h;
                let d = jac[k].get(r).copied().unwrap_or(0.0);
                assert!((fd - d).abs() < 1e-5, "constant {k} row {r}");
            }
        }
    }

    fn arb_expr() -> impl Strategy<Value = Expression> {
        let leaf = prop_oneof![(-3.0f64..3.0).prop_map(E::Const), (0usize..3).prop_map(E::Var)];
        leaf.prop_recursive(5, 40, 2, |inner| {
            prop_oneof![
                (inner.clone(), inner.clone()).prop_map(|(a, b)| E::add(a, b)),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| E::sub(a, b)),
                (inner.clone(), inner).prop_map(|(a, b)| E::mul(a, b)),
            ]
        })
    }

    proptest! {
        #[test]
        fn simplify_preserves_value(e in arb_expr(), pts in proptest::collection::vec([-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0], 50)) {
            let s = e.simplify();
            for p in &pts {
                prop_assert!((e.eval(p) - s.eval(p)).abs() < 1e-10);
            }
            prop_assert_eq!(s.to_polynomial().terms().len(), e.to_polynomial().terms().len());
        }

        #[test]
        fn simplify_is_idempotent_in_text(e in arb_expr()) {
            prop_assert_eq!(e.simplify().to_text(3), e.to_text(3));
        }
    }
}
