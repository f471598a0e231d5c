//! Extrapolation error, derivative agreement, structural comparison of
//! recovered expressions against the true system, and run export.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::pk::{NoisyDataset, PkParameters, Trajectory};
use crate::sr::{report_text, Discovery, Expression};
use crate::trainer::{PkinnModel, StateSurrogate};

pub const COMPONENT_NAMES: [&str; 3] = ["x0", "x1", "x2"];

#[derive(Debug, Clone, PartialEq)]
pub struct ExtrapolationReport {
    /// Against the noisy test data.
    pub mse: [f64; 3],
    /// Against the clean trajectory, for diagnostics.
    pub mse_clean: [f64; 3],
    pub noise_sigma: f64,
    pub seed: u64,
}

impl ExtrapolationReport {
    /// `component,mse,mse_clean,noise_sigma,seed`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("component,mse,mse_clean,noise_sigma,seed\n");
        for c in 0..3 {
            writeln!(s, "{},{},{},{},{}", COMPONENT_NAMES[c], self.mse[c], self.mse_clean[c], self.noise_sigma, self.seed).unwrap();
        }
        s
    }
}

fn component_mse(pred: &Trajectory, truth: &Trajectory) -> [f64; 3] {
    let n = truth.len() as f64;
    let mut out = [0.0; 3];
    for (p, y) in pred.states().iter().zip(truth.states()) {
        let (p, y) = (p.to_array(), y.to_array());
        for c in 0..3 {
            out[c] += (p[c] - y[c]).powi(2);
        }
    }
    out.map(|s| s / n)
}

/// Per-component MSE of `prediction` against the test set.
pub fn extrapolation_mse_of(prediction: &Trajectory, test: &NoisyDataset) -> Result<ExtrapolationReport> {
    if test.is_empty() {
        return Err(Error::InvalidArgument("empty test set".into()));
    }
    if prediction.times() != test.times() {
        return Err(Error::Shape("prediction and test set are on different grids".into()));
    }
    Ok(ExtrapolationReport {
        mse: component_mse(prediction, &test.noisy),
        mse_clean: component_mse(prediction, &test.clean),
        noise_sigma: test.noise_sigma,
        seed: test.seed,
    })
}

/// Per-component MSE of the state network against the test set.
pub fn extrapolation_mse(model: &PkinnModel, test: &NoisyDataset) -> Result<ExtrapolationReport> {
    if test.is_empty() {
        return Err(Error::InvalidArgument("empty test set".into()));
    }
    extrapolation_mse_of(&model.predict(test.times())?, test)
}

/// Pearson correlation; zero when either side has no variance.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    (cov / (va * vb).sqrt()).clamp(-1.0, 1.0)
}

/// Least-squares slope of `y` regressed on `x`; zero when `x` is constant.
pub fn slope(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    let (mut cov, mut vx) = (0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        cov += (a - mx) * (b - my);
        vx += (a - mx).powi(2);
    }
    if vx == 0.0 {
        0.0
    } else {
        cov / vx
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentAgreement {
    pub calculated: Vec<f64>,
    pub predicted: Vec<f64>,
    pub pearson: f64,
    pub slope: f64,
}

impl ComponentAgreement {
    fn new(calculated: Vec<f64>, predicted: Vec<f64>) -> Self {
        Self {
            pearson: pearson(&calculated, &predicted),
            slope: slope(&calculated, &predicted),
            calculated,
            predicted,
        }
    }
}

/// Time derivatives of the state surrogate paired with right-hand-side
/// predictions, per component.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeAgreement {
    pub times: Vec<f64>,
    pub components: [ComponentAgreement; 3],
}

impl DerivativeAgreement {
    fn from_pairs(times: &[f64], calculated: &[[f64; 3]], predicted: &[[f64; 3]]) -> Self {
        let col = |m: &[[f64; 3]], c: usize| m.iter().map(|r| r[c]).collect::<Vec<_>>();
        Self {
            times: times.to_vec(),
            components: std::array::from_fn(|c| ComponentAgreement::new(col(calculated, c), col(predicted, c))),
        }
    }

    /// `t,calculated,predicted` for one component.
    pub fn to_csv(&self, component: usize) -> String {
        let a = &self.components[component];
        let mut s = String::from("t,calculated,predicted\n");
        for ((t, c), p) in self.times.iter().zip(&a.calculated).zip(&a.predicted) {
            writeln!(s, "{t},{c},{p}").unwrap();
        }
        s
    }
}

fn check_agreement_grid(t_grid: &[f64]) -> Result<()> {
    if t_grid.len() < 2 {
        return Err(Error::InsufficientData("derivative agreement needs at least 2 grid points".into()));
    }
    Ok(())
}

/// Autodiff time derivatives of the state network against `f_predict` on
/// the state network's own states.
pub fn derivative_agreement(model: &PkinnModel, t_grid: &[f64]) -> Result<DerivativeAgreement> {
    derivative_agreement_with(model, &model.x_net, t_grid)
}

/// As [`derivative_agreement`], with another state surrogate standing in
/// for the state network.
pub fn derivative_agreement_with(
    model: &PkinnModel,
    states: &dyn StateSurrogate,
    t_grid: &[f64],
) -> Result<DerivativeAgreement> {
    check_agreement_grid(t_grid)?;
    let (x, dx) = states.states_and_derivatives(t_grid)?;
    let f = model.f_predict_batch(t_grid, &x)?;
    Ok(DerivativeAgreement::from_pairs(t_grid, &dx, &f))
}

/// Calculated derivatives taken as finite differences of observed data
/// (second-order central differences inside, one-sided at the ends);
/// predictions from `f_predict` on the state network.
pub fn derivative_agreement_from_data(model: &PkinnModel, data: &Trajectory) -> Result<DerivativeAgreement> {
    let t = data.times();
    check_agreement_grid(t)?;
    let y: Vec<[f64; 3]> = data.states().iter().map(|s| s.to_array()).collect();
    let n = t.len();
    let dydt: Vec<[f64; 3]> = (0..n)
        .map(|i| {
            std::array::from_fn(|c| {
                if i == 0 {
                    (y[1][c] - y[0][c]) / (t[1] - t[0])
                } else if i == n - 1 {
                    (y[n - 1][c] - y[n - 2][c]) / (t[n - 1] - t[n - 2])
                } else {
                    let (h0, h1) = (t[i] - t[i - 1], t[i + 1] - t[i]);
                    (h0 * h0 * y[i + 1][c] + (h1 * h1 - h0 * h0) * y[i][c] - h1 * h1 * y[i - 1][c]) / (h0 * h1 * (h0 + h1))
                }
            })
        })
        .collect();
    let (x, _) = model.x_net.states_and_derivatives(t)?;
    let f = model.f_predict_batch(t, &x)?;
    Ok(DerivativeAgreement::from_pairs(t, &dydt, &f))
}

/// Structural comparison of one recovered component.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentComparison {
    pub linear: bool,
    pub support: [bool; 3],
    pub true_support: [bool; 3],
    /// Recovered minus true coefficient of `X0, X1, X2`.
    pub coefficient_deltas: [f64; 3],
    /// Recovered constant term (zero in the true system).
    pub constant: f64,
    pub matches: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructuralReport {
    pub components: [ComponentComparison; 3],
}

impl StructuralReport {
    pub fn nonlinear_count(&self) -> usize {
        self.components.iter().filter(|c| !c.linear).count()
    }

    pub fn to_text(&self) -> String {
        let set = |s: &[bool; 3]| {
            let v: Vec<&str> = (0..3).filter(|&i| s[i]).map(|i| crate::sr::VARIABLE_NAMES[i]).collect();
            format!("{{{}}}", v.join(", "))
        };
        let mut out = String::new();
        for (k, c) in self.components.iter().enumerate() {
            writeln!(
                out,
                "  f{}: {}, support {} (true {}), {}, deltas [{:.4}, {:.4}, {:.4}], constant {:.4}",
                k + 1,
                if c.linear { "linear" } else { "nonlinear" },
                set(&c.support),
                set(&c.true_support),
                if c.matches { "match" } else { "no match" },
                c.coefficient_deltas[0],
                c.coefficient_deltas[1],
                c.coefficient_deltas[2],
                c.constant
            )
            .unwrap();
        }
        out
    }
}

/// Fixed probe points for the linearity test, inside the unit state cube.
fn probe_points() -> Vec<[f64; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    (0..5).map(|_| std::array::from_fn(|_| rng.random_range(0.0..1.0))).collect()
}

/// True iff every second difference (unit steps, all pairs of variables)
/// vanishes at the probe points, relative to the size of the values.
pub fn is_linear(e: &Expression) -> bool {
    let unit = |i: usize| {
        let mut v = [0.0; 3];
        v[i] = 1.0;
        v
    };
    let shift = |x: &[f64; 3], d: &[f64; 3]| [x[0] + d[0], x[1] + d[1], x[2] + d[2]];
    probe_points().iter().all(|x| {
        (0..3).all(|i| {
            (i..3).all(|j| {
                let (ei, ej) = (unit(i), unit(j));
                let vals = [e.eval(&shift(&shift(x, &ei), &ej)), e.eval(&shift(x, &ei)), e.eval(&shift(x, &ej)), e.eval(x)];
                let scale = 1.0 + vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                let d2 = vals[0] - vals[1] - vals[2] + vals[3];
                d2.is_finite() && d2.abs() <= 1e-8 * scale
            })
        })
    })
}

/// Linearity, support and coefficient deltas of recovered expressions
/// against the true compartment system.
pub fn compare_expressions(recovered: &[Expression; 3], truth: &PkParameters) -> StructuralReport {
    let coef = truth.linear_coefficients();
    StructuralReport {
        components: std::array::from_fn(|k| {
            let poly = recovered[k].to_polynomial();
            let true_support = coef[k].map(|c| c != 0.0);
            let support = poly.support();
            let linear_coef = [[1, 0, 0], [0, 1, 0], [0, 0, 1]].map(|e| poly.coefficient(e));
            ComponentComparison {
                linear: is_linear(&recovered[k]),
                support,
                true_support,
                coefficient_deltas: std::array::from_fn(|i| linear_coef[i] - coef[k][i]),
                constant: poly.coefficient([0, 0, 0]),
                matches: support == true_support,
            }
        }),
    }
}

/// Everything a run can export. Absent parts are skipped.
#[derive(Debug, Clone, Default)]
pub struct RunArtifacts {
    /// Full dataset (train and test) with the state-network prediction on
    /// the same grid and the train/test split time.
    pub curves: Option<(NoisyDataset, Trajectory, f64)>,
    pub derivatives: Option<DerivativeAgreement>,
    pub extrapolation: Option<ExtrapolationReport>,
    pub discoveries: Vec<Discovery>,
    pub truth: Option<PkParameters>,
    /// Files already in the directory, written by other stages, to list in
    /// the manifest. Relative to the export directory.
    pub extra_files: Vec<PathBuf>,
}

pub const MANIFEST_FILE: &str = "manifest.csv";

fn curves_csv(data: &NoisyDataset, pred: &Trajectory, t_split: f64) -> Result<String> {
    if pred.times() != data.times() {
        return Err(Error::Shape("prediction and dataset are on different grids".into()));
    }
    let mut s = String::from("t,x0_clean,x1_clean,x2_clean,x0_noisy,x1_noisy,x2_noisy,x0_pred,x1_pred,x2_pred,split\n");
    for (i, &t) in data.times().iter().enumerate() {
        let (c, n, p) = (data.clean.states()[i], data.noisy.states()[i], pred.states()[i]);
        writeln!(
            s,
            "{t},{},{},{},{},{},{},{},{},{},{}",
            c.x0,
            c.x1,
            c.x2,
            n.x0,
            n.x1,
            n.x2,
            p.x0,
            p.x1,
            p.x2,
            if t < t_split { "train" } else { "test" }
        )
        .unwrap();
    }
    Ok(s)
}

/// Discovery listing, followed by a structure comparison per method when
/// `truth` is given.
pub fn discovery_text(discoveries: &[Discovery], truth: Option<&PkParameters>) -> String {
    let mut s = report_text(discoveries, 1);
    if let Some(truth) = truth {
        for d in discoveries {
            writeln!(s, "structure ({}):", d.method.name()).unwrap();
            s.push_str(&compare_expressions(&d.expressions(), truth).to_text());
        }
    }
    s
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    Ok(PathBuf::from(name))
}

/// Write `file,bytes,sha256` for each file (sorted by name) to the manifest.
pub fn write_manifest(dir: &Path, files: &[PathBuf]) -> Result<PathBuf> {
    let mut files = files.to_vec();
    files.sort();
    files.dedup();
    let mut s = String::from("file,bytes,sha256\n");
    for f in &files {
        let path = dir.join(f);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let digest = Sha256::digest(&bytes);
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        writeln!(s, "{},{},{hex}", f.display(), bytes.len()).unwrap();
    }
    write_file(dir, MANIFEST_FILE, &s)
}

/// Write every present artifact into `dir`, then a manifest of those files
/// and `extra_files`. Returns the written paths relative to `dir`,
/// manifest last.
pub fn export_run(artifacts: &RunArtifacts, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    if let Some((data, pred, t_split)) = &artifacts.curves {
        written.push(write_file(dir, "curves.csv", &curves_csv(data, pred, *t_split)?)?);
    }
    if let Some(d) = &artifacts.derivatives {
        for (c, name) in COMPONENT_NAMES.iter().enumerate() {
            written.push(write_file(dir, &format!("derivatives_{name}.csv"), &d.to_csv(c))?);
        }
    }
    if let Some(r) = &artifacts.extrapolation {
        written.push(write_file(dir, "extrapolation.csv", &r.to_csv())?);
    }
    if !artifacts.discoveries.is_empty() {
        written.push(write_file(dir, "discovery.txt", &discovery_text(&artifacts.discoveries, artifacts.truth.as_ref()))?);
    }
    let listed: Vec<PathBuf> = written.iter().chain(&artifacts.extra_files).cloned().collect();
    written.push(write_manifest(dir, &listed)?);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pk::{add_noise, integrate_substeps, split_train_test, uniform_grid, StateVector};
    use crate::spline::TrajectorySpline;
    use crate::sr::{ComponentFit, Method};
    use crate::trainer::Mode;
    use proptest::prelude::*;

    use Expression as E;

    fn dataset() -> NoisyDataset {
        let grid = uniform_grid(0.0, 10.0, 100);
        let traj = integrate_substeps(&PkParameters::default(), StateVector::unit_dose(), &grid, 10).unwrap();
        add_noise(&traj, 0.01, 4).unwrap()
    }

    fn shifted(t: &Trajectory, d: [f64; 3]) -> Trajectory {
        let states = t.states().iter().map(|s| StateVector::new(s.x0 + d[0], s.x1 + d[1], s.x2 + d[2])).collect();
        Trajectory::new(t.times().to_vec(), states).unwrap()
    }

    #[test]
    fn exact_prediction_has_zero_error() {
        let (_, test) = split_train_test(&dataset(), 8.0).unwrap();
        let r = extrapolation_mse_of(&test.noisy, &test).unwrap();
        assert_eq!(r.mse, [0.0; 3]);
        assert_eq!(r.noise_sigma, 0.01);
        assert_eq!(r.seed, 4);
    }

    #[test]
    fn uniform_offset_on_one_component() {
        let (_, test) = split_train_test(&dataset(), 8.0).unwrap();
        let r = extrapolation_mse_of(&shifted(&test.noisy, [0.01, 0.0, 0.0]), &test).unwrap();
        assert!((r.mse[0] - 1e-4).abs() < 1e-15);
        assert_eq!(&r.mse[1..], &[0.0, 0.0]);
    }

    #[test]
    fn model_mse_matches_hand_summed_oracle() {
        let (_, test) = split_train_test(&dataset(), 8.0).unwrap();
        let m = PkinnModel::with_architecture(&[6, 5], &[3], Mode::Blackbox, 8).unwrap();
        let r = extrapolation_mse(&m, &test).unwrap();
        let pred = m.predict(test.times()).unwrap();
        for c in 0..3 {
            let mut sum = 0.0;
            for i in 0..test.len() {
                let d = pred.states()[i].to_array()[c] - test.noisy.states()[i].to_array()[c];
                sum += d * d;
            }
            assert!((r.mse[c] - sum / test.len() as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_test_set() {
        let ds = dataset();
        let (train, _) = split_train_test(&ds, 0.0).unwrap();
        let m = PkinnModel::with_architecture(&[3], &[3], Mode::Blackbox, 0).unwrap();
        assert!(matches!(extrapolation_mse(&m, &train), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn exact_parametric_model_agrees_with_itself() {
        let grid = uniform_grid(0.0, 8.0, 2000);
        let traj = integrate_substeps(&PkParameters::default(), StateVector::unit_dose(), &grid, 10).unwrap();
        let spline = TrajectorySpline::fit(&traj).unwrap();
        let mut m = PkinnModel::with_architecture(&[3], &[3], Mode::Parametric, 0).unwrap();
        m.params = PkParameters::default();
        let d = derivative_agreement_with(&m, &spline, &uniform_grid(0.0, 8.0, 80)).unwrap();
        for c in &d.components {
            assert!(c.pearson > 0.9999, "{}", c.pearson);
            assert!((c.slope - 1.0).abs() < 1e-3, "{}", c.slope);
        }
    }

    #[test]
    fn zero_rhs_network_gives_zero_slope() {
        let mut m = PkinnModel::with_architecture(&[6, 6], &[4], Mode::Blackbox, 3).unwrap();
        let n = m.f_net.num_params();
        m.f_net.set_flat_params(&vec![0.0; n]).unwrap();
        let d = derivative_agreement(&m, &uniform_grid(0.0, 8.0, 30)).unwrap();
        for c in &d.components {
            assert!(c.predicted.iter().all(|&p| p == 0.0));
            assert_eq!(c.slope, 0.0);
        }
        assert!(matches!(derivative_agreement(&m, &[0.0]), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn data_differences_track_the_true_derivative() {
        let grid = uniform_grid(0.0, 8.0, 2000);
        let traj = integrate_substeps(&PkParameters::default(), StateVector::unit_dose(), &grid, 4).unwrap();
        let mut m = PkinnModel::with_architecture(&[3], &[3], Mode::Parametric, 0).unwrap();
        m.params = PkParameters::default();
        let d = derivative_agreement_from_data(&m, &traj).unwrap();
        // Interior differences against the exact right-hand side.
        for c in 0..3 {
            for i in 1..1999 {
                let exact = crate::pk::rhs(&m.params, &traj.states()[i]).to_array()[c];
                assert!((d.components[c].calculated[i] - exact).abs() < 1e-3, "component {c} at {i}");
            }
        }
    }

    #[test]
    fn pearson_edge_cases() {
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]), 0.0);
        assert!((pearson(&[1.0, 2.0, 3.0], &[-2.0, -4.0, -6.0]) + 1.0).abs() < 1e-15);
        assert!((slope(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]) - 2.0).abs() < 1e-15);
    }

    fn covariance_oracle(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let sa: f64 = a.iter().sum();
        let sb: f64 = b.iter().sum();
        let sab: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let saa: f64 = a.iter().map(|x| x * x).sum();
        let sbb: f64 = b.iter().map(|x| x * x).sum();
        (n * sab - sa * sb) / ((n * saa - sa * sa).sqrt() * (n * sbb - sb * sb).sqrt())
    }

    proptest! {
        #[test]
        fn pearson_matches_covariance_formula(pairs in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 3..60)) {
            let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let r = pearson(&a, &b);
            prop_assert!((-1.0..=1.0).contains(&r));
            prop_assert!((r - covariance_oracle(&a, &b)).abs() < 1e-10);
        }
    }

    fn lin(c: [f64; 3]) -> Expression {
        (0..3).fold(E::constant(0.0), |acc, i| E::add(acc, E::mul(E::constant(c[i]), E::var(i))))
    }

    #[test]
    fn exact_first_component_matches() {
        let truth = PkParameters::default();
        let rec = [E::mul(E::constant(-1.14), E::var(0)), lin(truth.linear_coefficients()[1]), lin(truth.linear_coefficients()[2])];
        let r = compare_expressions(&rec, &truth);
        let c = &r.components[0];
        assert!(c.linear && c.matches);
        assert_eq!(c.support, [true, false, false]);
        assert_eq!(c.coefficient_deltas, [0.0; 3]);
        assert!(r.components.iter().all(|c| c.matches && c.linear));
        assert_eq!(r.nonlinear_count(), 0);
    }

    #[test]
    fn wrong_support_and_quadratic() {
        let truth = PkParameters::default();
        let quad = E::mul(E::add(E::constant(-0.6), E::var(0)), E::var(0));
        let rec = [E::var(0), quad, E::mul(E::constant(0.2), E::var(0))];
        let r = compare_expressions(&rec, &truth);
        assert!(!r.components[1].linear);
        assert_eq!(r.components[2].support, [true, false, false]);
        assert_eq!(r.components[2].true_support, [false, true, true]);
        assert!(!r.components[2].matches);
        assert!(r.components[2].linear);
        assert_eq!(r.nonlinear_count(), 1);
    }

    fn arb_expr() -> impl Strategy<Value = Expression> {
        let leaf = prop_oneof![(-3.0f64..3.0).prop_map(E::Const), (0usize..3).prop_map(E::Var)];
        leaf.prop_recursive(4, 24, 2, |inner| {
            prop_oneof![
                (inner.clone(), inner.clone()).prop_map(|(a, b)| E::add(a, b)),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| E::sub(a, b)),
                (inner.clone(), inner).prop_map(|(a, b)| E::mul(a, b)),
            ]
        })
    }

    proptest! {
        #[test]
        fn comparison_ignores_simplification(a in arb_expr(), b in arb_expr(), c in arb_expr()) {
            let truth = PkParameters::default();
            let raw = compare_expressions(&[a.clone(), b.clone(), c.clone()], &truth);
            let simple = compare_expressions(&[a.simplify(), b.simplify(), c.simplify()], &truth);
            for (x, y) in raw.components.iter().zip(&simple.components) {
                prop_assert_eq!(x.linear, y.linear);
                prop_assert_eq!(x.support, y.support);
                prop_assert_eq!(x.matches, y.matches);
                for i in 0..3 {
                    prop_assert!((x.coefficient_deltas[i] - y.coefficient_deltas[i]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn empty_export_is_manifest_only() {
        let dir = tempfile::tempdir().unwrap();
        let files = export_run(&RunArtifacts::default(), dir.path()).unwrap();
        assert_eq!(files, [PathBuf::from(MANIFEST_FILE)]);
        let text = std::fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(text, "file,bytes,sha256\n");
    }

    fn full_artifacts() -> RunArtifacts {
        let ds = dataset();
        let (_, test) = split_train_test(&ds, 8.0).unwrap();
        let m = PkinnModel::with_architecture(&[6, 5], &[3], Mode::Blackbox, 8).unwrap();
        let pred = m.predict(ds.times()).unwrap();
        RunArtifacts {
            curves: Some((ds.clone(), pred, 8.0)),
            derivatives: Some(derivative_agreement(&m, &ds.times()[..80]).unwrap()),
            extrapolation: Some(extrapolation_mse(&m, &test).unwrap()),
            discoveries: vec![Discovery {
                method: Method::Stlsq,
                components: vec![
                    ComponentFit { expression: E::var(0), mse: 0.0 },
                    ComponentFit { expression: E::var(1), mse: 0.0 },
                    ComponentFit { expression: E::var(2), mse: 0.0 },
                ],
            }],
            truth: Some(PkParameters::default()),
            extra_files: vec![],
        }
    }

    #[test]
    fn full_export_file_set_and_determinism() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let files = export_run(&full_artifacts(), a.path()).unwrap();
        assert_eq!(files.len(), 7);
        export_run(&full_artifacts(), b.path()).unwrap();
        for f in &files {
            assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{}", f.display());
        }
        let curves = std::fs::read_to_string(a.path().join("curves.csv")).unwrap();
        let lines: Vec<&str> = curves.lines().collect();
        assert_eq!(lines.len(), 101);
        assert!(lines[0].ends_with(",split"));
        assert!(lines[80].ends_with(",train") && lines[81].ends_with(",test"));
        let manifest = std::fs::read_to_string(a.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(manifest.lines().count(), 7);
        assert!(manifest.contains("derivatives_x1.csv,"));
    }

    #[test]
    fn export_reports_unwritable_paths() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("occupied");
        std::fs::write(&file, "").unwrap();
        match export_run(&full_artifacts(), &file.join("sub")) {
            Err(Error::Io { path, .. }) => assert!(path.starts_with(&file)),
            other => panic!("expected an I/O error, got {other:?}"),
        }
    }
}
