use std::fmt::Write as _;
use std::str::FromStr;

use nalgebra::DMatrix;

use super::expr::{monomial_text, Expression};
use super::gp::{gp_regress, GpConfig};
use super::library::{stlsq, CandidateLibrary, StlsqConfig};
use crate::error::{Error, Result};
use crate::trainer::PkinnModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Stlsq,
    Gp,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Stlsq => "stlsq",
            Method::Gp => "gp",
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stlsq" => Ok(Method::Stlsq),
            "gp" => Ok(Method::Gp),
            other => Err(Error::InvalidArgument(format!("unknown discovery method '{other}' (expected stlsq or gp)"))),
        }
    }
}

/// What the regressors are asked to reproduce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetSource {
    /// Right-hand-side model outputs `f(t, X)`.
    RhsModel,
    /// Time derivative of the state network.
    StateDerivative,
}

impl TargetSource {
    pub fn name(self) -> &'static str {
        match self {
            TargetSource::RhsModel => "f_predict",
            TargetSource::StateDerivative => "state_derivative",
        }
    }
}

impl FromStr for TargetSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f_predict" => Ok(TargetSource::RhsModel),
            "state_derivative" => Ok(TargetSource::StateDerivative),
            other => Err(Error::InvalidArgument(format!(
                "unknown target source '{other}' (expected f_predict or state_derivative)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscoverySettings {
    pub degree: u32,
    pub stlsq: StlsqConfig,
    /// The seed here is the base; component `k` runs with `seed + k`.
    pub gp: GpConfig,
    pub target: TargetSource,
}

impl Default for DiscoverySettings {
    fn default() -> Self {
        Self {
            degree: 2,
            stlsq: StlsqConfig::default(),
            gp: GpConfig::default(),
            target: TargetSource::RhsModel,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentFit {
    pub expression: Expression,
    /// In-sample mean squared error against the regression targets.
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discovery {
    pub method: Method,
    pub components: Vec<ComponentFit>,
}

impl Discovery {
    pub fn expressions(&self) -> [Expression; 3] {
        std::array::from_fn(|k| self.components[k].expression.clone())
    }
}

/// States and regression targets sampled from `model` on `t_grid`.
pub fn sample_targets(model: &PkinnModel, t_grid: &[f64], source: TargetSource) -> Result<(Vec<[f64; 3]>, Vec<[f64; 3]>)> {
    if t_grid.is_empty() {
        return Err(Error::InsufficientData("empty discovery grid".into()));
    }
    let (states, derivs) = crate::trainer::StateSurrogate::states_and_derivatives(&model.x_net, t_grid)?;
    let targets = match source {
        TargetSource::RhsModel => model.f_predict_batch(t_grid, &states)?,
        TargetSource::StateDerivative => derivs,
    };
    Ok((states, targets))
}

/// Regress each of the three targets on the states.
pub fn regress(states: &[[f64; 3]], targets: &[[f64; 3]], method: Method, settings: &DiscoverySettings) -> Result<Discovery> {
    if states.len() != targets.len() {
        return Err(Error::Shape(format!("{} states, {} targets", states.len(), targets.len())));
    }
    let column = |k: usize| -> Vec<f64> { targets.iter().map(|t| t[k]).collect() };
    let components = match method {
        Method::Stlsq => {
            let design = CandidateLibrary::new(settings.degree)?.evaluate(states)?;
            let y = DMatrix::from_fn(targets.len(), 3, |r, c| targets[r][c]);
            let model = stlsq(&design, &y, &settings.stlsq)?;
            (0..3)
                .map(|k| {
                    let expression = model.expression(k);
                    let mse = in_sample_mse(&expression, states, &column(k));
                    ComponentFit { expression, mse }
                })
                .collect()
        }
        Method::Gp => {
            settings.gp.validate()?;
            // Components are independent; each runs on its own thread with
            // its own seed, so the result does not depend on scheduling.
            std::thread::scope(|scope| {
                let handles: Vec<_> = (0..3)
                    .map(|k| {
                        let cfg = GpConfig {
                            seed: settings.gp.seed.wrapping_add(k as u64),
                            ..settings.gp.clone()
                        };
                        let y = column(k);
                        scope.spawn(move || gp_regress(states, &y, &cfg))
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| {
                        let fit = h.join().expect("regression thread panicked")?;
                        Ok(ComponentFit {
                            expression: fit.expression,
                            mse: fit.mse,
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })?
        }
    };
    Ok(Discovery { method, components })
}

/// Sample `model` on `t_grid` and recover one expression per component.
pub fn discover(model: &PkinnModel, t_grid: &[f64], method: Method, settings: &DiscoverySettings) -> Result<Discovery> {
    let (states, targets) = sample_targets(model, t_grid, settings.target)?;
    regress(&states, &targets, method, settings)
}

fn in_sample_mse(e: &Expression, states: &[[f64; 3]], y: &[f64]) -> f64 {
    e.eval_rows(states).iter().zip(y).map(|(p, y)| (p - y).powi(2)).sum::<f64>() / y.len() as f64
}

fn term_label(e: &[u32; 3]) -> String {
    match monomial_text(e) {
        s if s.is_empty() => "1".to_string(),
        s => s,
    }
}

/// Human-readable listing of one or more discoveries.
pub fn report_text(discoveries: &[Discovery], precision: usize) -> String {
    let mut s = String::new();
    for d in discoveries {
        writeln!(s, "method: {}", d.method.name()).unwrap();
        for (k, c) in d.components.iter().enumerate() {
            writeln!(
                s,
                "  f{}: {}    mse {:e}, size {}",
                k + 1,
                c.expression.to_text(precision),
                c.mse,
                c.expression.simplify().size()
            )
            .unwrap();
            for (e, coef) in c.expression.to_polynomial().terms() {
                writeln!(s, "      {:<8} {coef:e}", term_label(&e)).unwrap();
            }
        }
    }
    s
}

/// `method,component,expression,term,coefficient,mse,size`, one row per
/// term (a zero expression gets a single row with term `1`).
pub fn report_csv(discoveries: &[Discovery], precision: usize) -> String {
    let mut s = String::from("method,component,expression,term,coefficient,mse,size\n");
    for d in discoveries {
        for (k, c) in d.components.iter().enumerate() {
            let text = c.expression.to_text(precision);
            let size = c.expression.simplify().size();
            let mut terms = c.expression.to_polynomial().terms();
            if terms.is_empty() {
                terms.push(([0; 3], 0.0));
            }
            for (e, coef) in terms {
                writeln!(s, "{},f{},{},{},{:e},{:e},{}", d.method.name(), k + 1, text, term_label(&e), coef, c.mse, size)
                    .unwrap();
            }
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pk::{uniform_grid, PkParameters};
    use crate::trainer::Mode;

    fn exact_parametric() -> PkinnModel {
        let mut m = PkinnModel::with_architecture(&[8, 8], &[4], Mode::Parametric, 11).unwrap();
        m.params = PkParameters::default();
        m
    }

    #[test]
    fn parametric_exact_model_recovers_supports() {
        let d = discover(&exact_parametric(), &uniform_grid(0.0, 8.0, 80), Method::Stlsq, &DiscoverySettings::default()).unwrap();
        let supports: Vec<[bool; 3]> = d.components.iter().map(|c| c.expression.to_polynomial().support()).collect();
        assert_eq!(supports, [[true, false, false], [true, true, true], [false, true, true]]);
        for c in &d.components {
            assert_eq!(c.expression.to_polynomial().degree(), 1);
            assert!(c.mse < 1e-12);
        }
    }

    #[test]
    fn small_grid_is_ill_conditioned() {
        let r = discover(&exact_parametric(), &uniform_grid(0.0, 8.0, 9), Method::Stlsq, &DiscoverySettings::default());
        assert!(matches!(r, Err(Error::IllConditioned(_))));
    }

    #[test]
    fn state_derivative_targets() {
        let m = exact_parametric();
        let grid = uniform_grid(0.0, 8.0, 20);
        let (_, dx) = sample_targets(&m, &grid, TargetSource::StateDerivative).unwrap();
        let (_, expected) = m.x_net.forward_with_input_derivative(&grid).unwrap();
        for (r, row) in dx.iter().enumerate() {
            for c in 0..3 {
                assert_eq!(row[c], expected[[r, c]]);
            }
        }
    }

    #[test]
    fn gp_discovery_is_deterministic() {
        let settings = DiscoverySettings {
            gp: GpConfig {
                population_size: 30,
                generations: 5,
                seed: 1,
                ..Default::default()
            },
            ..Default::default()
        };
        let grid = uniform_grid(0.0, 8.0, 40);
        let a = discover(&exact_parametric(), &grid, Method::Gp, &settings).unwrap();
        let b = discover(&exact_parametric(), &grid, Method::Gp, &settings).unwrap();
        assert_eq!(report_csv(&[a.clone()], 1), report_csv(&[b], 1));
        assert_eq!(a.components.len(), 3);
    }

    #[test]
    fn reports() {
        let d = Discovery {
            method: Method::Stlsq,
            components: vec![
                ComponentFit {
                    expression: Expression::mul(Expression::constant(-1.14), Expression::var(0)),
                    mse: 0.0,
                },
                ComponentFit {
                    expression: Expression::constant(0.0),
                    mse: 0.5,
                },
                ComponentFit {
                    expression: Expression::add(Expression::var(1), Expression::var(2)),
                    mse: 0.25,
                },
            ],
        };
        let csv = report_csv(&[d.clone()], 1);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[1], "stlsq,f1,-1.1*X0,X0,-1.14e0,0e0,3");
        assert_eq!(lines[2], "stlsq,f2,0,1,0e0,5e-1,1");
        let text = report_text(&[d], 1);
        assert!(text.contains("f3: X1 + X2"));
        assert!(parse_ok("gp") && parse_ok("stlsq") && !parse_ok("both"));
    }

    fn parse_ok(s: &str) -> bool {
        s.parse::<Method>().is_ok()
    }
}
