//! Polynomial candidate libraries and sequentially thresholded least squares.

use nalgebra::{DMatrix, DVector};

use super::expr::{monomial_text, Exponents, Expression, Polynomial};
use crate::error::{Error, Result};

/// Ordered monomial basis over `(X0, X1, X2)`.
///
/// Degree 2 gives `[1, X0, X1, X2, X0^2, X0*X1, X0*X2, X1^2, X1*X2, X2^2]`;
/// degree 1 is the first four of those.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateLibrary {
    degree: u32,
    terms: Vec<Exponents>,
}

impl CandidateLibrary {
    pub fn new(degree: u32) -> Result<Self> {
        if !(1..=2).contains(&degree) {
            return Err(Error::InvalidArgument(format!("library degree must be 1 or 2, got {degree}")));
        }
        let mut terms = vec![[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]];
        if degree == 2 {
            for i in 0..3 {
                for j in i..3 {
                    let mut e = [0; 3];
                    e[i] += 1;
                    e[j] += 1;
                    terms.push(e);
                }
            }
        }
        Ok(Self { degree, terms })
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> &[Exponents] {
        &self.terms
    }

    /// Column labels; `"1"` for the constant.
    pub fn names(&self) -> Vec<String> {
        self.terms
            .iter()
            .map(|e| match monomial_text(e) {
                s if s.is_empty() => "1".to_string(),
                s => s,
            })
            .collect()
    }

    /// Design matrix, one row per state.
    pub fn evaluate(&self, states: &[[f64; 3]]) -> Result<DMatrix<f64>> {
        if states.is_empty() {
            return Err(Error::InvalidArgument("no states to build a library from".into()));
        }
        Ok(DMatrix::from_fn(states.len(), self.terms.len(), |r, c| {
            let e = &self.terms[c];
            (0..3).map(|i| states[r][i].powi(e[i] as i32)).product()
        }))
    }
}

/// Design matrix for the degree-`degree` library on `states`.
pub fn build_library(states: &[[f64; 3]], degree: u32) -> Result<DMatrix<f64>> {
    CandidateLibrary::new(degree)?.evaluate(states)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StlsqConfig {
    pub threshold: f64,
    pub max_iter: usize,
    /// Weight of the `|c|^2` penalty on the coefficients in original units;
    /// zero gives plain least squares.
    pub ridge: f64,
}

impl Default for StlsqConfig {
    fn default() -> Self {
        Self {
            threshold: 0.1,
            max_iter: 20,
            ridge: 0.0,
        }
    }
}

/// Minimal ridge weight that keeps near-rank-deficient designs solvable
/// without visibly biasing well-determined coefficients.
pub const DEFAULT_RIDGE: f64 = 1e-8;

impl StlsqConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return Err(Error::InvalidArgument(format!("threshold must be positive, got {}", self.threshold)));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidArgument("max_iter must be at least 1".into()));
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return Err(Error::InvalidArgument(format!("ridge must be nonnegative, got {}", self.ridge)));
        }
        Ok(())
    }
}

/// One sparse coefficient vector per target column.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseModel {
    pub library: CandidateLibrary,
    pub coefficients: Vec<Vec<f64>>,
    pub threshold: f64,
    /// Active support after each iteration, per target.
    pub support_history: Vec<Vec<Vec<bool>>>,
}

impl SparseModel {
    pub fn polynomial(&self, target: usize) -> Polynomial {
        Polynomial::from_terms(self.library.terms().iter().copied().zip(self.coefficients[target].iter().copied()))
    }

    pub fn expression(&self, target: usize) -> Expression {
        self.polynomial(target).to_expression()
    }

    pub fn expressions(&self) -> Vec<Expression> {
        (0..self.coefficients.len()).map(|k| self.expression(k)).collect()
    }
}

/// Least-squares solver over column subsets of a fixed design.
struct Solver {
    design: DMatrix<f64>,
    scale: Vec<f64>,
    ridge: f64,
}

impl Solver {
    fn new(design: &DMatrix<f64>, ridge: f64) -> Result<Self> {
        let (rows, cols) = design.shape();
        if rows < cols && ridge == 0.0 {
            return Err(Error::IllConditioned(format!(
                "{rows} samples for {cols} library functions; enable ridge regularization or add samples"
            )));
        }
        let scale: Vec<f64> = design
            .column_iter()
            .map(|c| match c.norm() {
                n if n > 0.0 => n,
                _ => 1.0,
            })
            .collect();
        let mut normalized = design.clone();
        for (j, mut col) in normalized.column_iter_mut().enumerate() {
            col /= scale[j];
        }
        if ridge == 0.0 {
            let sv = normalized.clone().svd(false, false).singular_values;
            let (hi, lo) = (sv.max(), sv.min());
            let tol = rows.max(cols) as f64 * f64::EPSILON * hi;
            if !(lo > tol) {
                return Err(Error::IllConditioned(format!(
                    "library columns are numerically dependent on these samples (singular values {lo:e} / {hi:e})"
                )));
            }
        }
        Ok(Self {
            design: normalized,
            scale,
            ridge,
        })
    }

    /// Coefficients in original units; zero outside `support`.
    ///
    /// Minimizes `|y - A c|^2 + ridge * |c|^2` with the penalty on the
    /// original-unit coefficients, solved as an augmented least-squares
    /// problem on the normalized columns.
    fn solve(&self, target: &DVector<f64>, support: &[bool]) -> DVector<f64> {
        let cols: Vec<usize> = (0..support.len()).filter(|&j| support[j]).collect();
        let mut out = DVector::zeros(support.len());
        if cols.is_empty() {
            return out;
        }
        let rows = self.design.nrows();
        let k = cols.len();
        let (a, y) = if self.ridge > 0.0 {
            let mut a = DMatrix::zeros(rows + k, k);
            a.view_mut((0, 0), (rows, k)).copy_from(&self.design.select_columns(&cols));
            for (i, &j) in cols.iter().enumerate() {
                a[(rows + i, i)] = self.ridge.sqrt() / self.scale[j];
            }
            let mut y = DVector::zeros(rows + k);
            y.rows_mut(0, rows).copy_from(target);
            (a, y)
        } else {
            (self.design.select_columns(&cols), target.clone())
        };
        let x = a
            .svd(true, true)
            .solve(&y, 0.0)
            .expect("singular vectors were requested");
        for (i, &j) in cols.iter().enumerate() {
            out[j] = x[i] / self.scale[j];
        }
        out
    }
}

/// Sequentially thresholded least squares, independently for each column
/// of `targets`. Least squares runs on column-normalized features; the
/// threshold applies to coefficients in the original units.
pub fn stlsq(design: &DMatrix<f64>, targets: &DMatrix<f64>, config: &StlsqConfig) -> Result<SparseModel> {
    config.validate()?;
    if design.nrows() != targets.nrows() {
        return Err(Error::Shape(format!("{} design rows, {} target rows", design.nrows(), targets.nrows())));
    }
    let library = match design.ncols() {
        4 => CandidateLibrary::new(1)?,
        10 => CandidateLibrary::new(2)?,
        n => return Err(Error::Shape(format!("design has {n} columns; expected a degree-1 or degree-2 library"))),
    };
    let solver = Solver::new(design, config.ridge)?;

    let mut coefficients = Vec::with_capacity(targets.ncols());
    let mut support_history = Vec::with_capacity(targets.ncols());
    for target in targets.column_iter() {
        let target = target.into_owned();
        let mut support = vec![true; design.ncols()];
        let mut coef = solver.solve(&target, &support);
        let mut history = Vec::new();
        for _ in 0..config.max_iter {
            let next: Vec<bool> = support.iter().zip(coef.iter()).map(|(&s, c)| s && c.abs() >= config.threshold).collect();
            history.push(next.clone());
            if next == support {
                break;
            }
            support = next;
            coef = solver.solve(&target, &support);
        }
        let coef: Vec<f64> = coef.iter().map(|&c| if c.abs() >= config.threshold { c } else { 0.0 }).collect();
        coefficients.push(coef);
        support_history.push(history);
    }

    Ok(SparseModel {
        library,
        coefficients,
        threshold: config.threshold,
        support_history,
    })
}
