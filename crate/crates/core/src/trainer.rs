//! The dual-network surrogate: a state network `t -> (x0, x1, x2)`, a
//! right-hand-side network `(t, x0, x1, x2) -> (f1, f2, f3)`, and five
//! learnable physical constants, trained jointly on data, ODE-residual and
//! initial-condition losses.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use ndarray::Array2;

use crate::autodiff::{AdamState, BoundNetwork, DenseNetwork, Graph, NetworkSpec, TextReader, Var};
use crate::error::{Error, Result};
use crate::pk::{rhs, NoisyDataset, PkParameters, StateVector, Trajectory};
use crate::spline::TrajectorySpline;

/// Hidden widths of the state network.
pub const X_NET_HIDDEN: [usize; 2] = [100, 100];
/// Hidden widths of the right-hand-side network.
pub const F_NET_HIDDEN: [usize; 3] = [100, 100, 100];

/// How the right-hand side `f` is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// `f` comes from the f-net on `(t, x0, x1, x2)`.
    Blackbox,
    /// `f` is the two-compartment right-hand side with the learnable constants.
    Parametric,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Blackbox => "blackbox",
            Mode::Parametric => "parametric",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blackbox" => Ok(Mode::Blackbox),
            "parametric" => Ok(Mode::Parametric),
            other => Err(Error::InvalidArgument(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub data: f64,
    pub ode: f64,
    pub ic: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            data: 1.0,
            ode: 2.0,
            ic: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.data, self.ode, self.ic].iter().all(|w| w.is_finite() && *w > 0.0) {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("loss weights must be positive: {self:?}")))
        }
    }
}

/// Anything that provides state values and their time derivatives.
pub trait StateSurrogate {
    /// Values and time derivatives at each of `times`.
    fn states_and_derivatives(&self, times: &[f64]) -> Result<(Vec<[f64; 3]>, Vec<[f64; 3]>)>;
}

fn rows3(a: &Array2<f64>) -> Vec<[f64; 3]> {
    a.rows().into_iter().map(|r| [r[0], r[1], r[2]]).collect()
}

impl StateSurrogate for DenseNetwork {
    fn states_and_derivatives(&self, times: &[f64]) -> Result<(Vec<[f64; 3]>, Vec<[f64; 3]>)> {
        if self.spec().output_dim != 3 {
            return Err(Error::Shape("state surrogate must have three outputs".into()));
        }
        let (x, dx) = self.forward_with_input_derivative(times)?;
        Ok((rows3(&x), rows3(&dx)))
    }
}

impl StateSurrogate for TrajectorySpline {
    fn states_and_derivatives(&self, times: &[f64]) -> Result<(Vec<[f64; 3]>, Vec<[f64; 3]>)> {
        Ok((
            times.iter().map(|&t| self.value(t)).collect(),
            times.iter().map(|&t| self.derivative(t)).collect(),
        ))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PkinnModel {
    pub x_net: DenseNetwork,
    pub f_net: DenseNetwork,
    /// Learnable physical constants; unity at construction.
    pub params: PkParameters,
    pub mode: Mode,
    pub loss_weights: LossWeights,
}

fn unity_params() -> PkParameters {
    PkParameters {
        ka: 1.0,
        cl: 1.0,
        q: 1.0,
        v1: 1.0,
        v2: 1.0,
    }
}

impl PkinnModel {
    /// Full-size model: state net 1 -> [100, 100] -> 3 and right-hand-side
    /// net 4 -> [100, 100, 100] -> 3, tanh hidden layers.
    pub fn new(mode: Mode, seed: u64) -> Result<Self> {
        Self::with_architecture(&X_NET_HIDDEN, &F_NET_HIDDEN, mode, seed)
    }

    pub fn with_architecture(x_hidden: &[usize], f_hidden: &[usize], mode: Mode, seed: u64) -> Result<Self> {
        Ok(Self {
            x_net: DenseNetwork::init(&NetworkSpec::tanh_mlp(1, x_hidden, 3), seed)?,
            f_net: DenseNetwork::init(&NetworkSpec::tanh_mlp(4, f_hidden, 3), seed.wrapping_add(1))?,
            params: unity_params(),
            mode,
            loss_weights: LossWeights::default(),
        })
    }

    pub fn from_config(config: &TrainConfig) -> Result<Self> {
        Self::new(config.mode, config.seed)
    }

    /// Right-hand side at `(t, x)`.
    pub fn f_predict(&self, t: f64, x: StateVector) -> Result<StateVector> {
        Ok(self.f_predict_batch(&[t], &[x.to_array()])?[0].into())
    }

    pub fn f_predict_batch(&self, times: &[f64], states: &[[f64; 3]]) -> Result<Vec<[f64; 3]>> {
        if times.len() != states.len() {
            return Err(Error::Shape(format!("{} times, {} states", times.len(), states.len())));
        }
        match self.mode {
            Mode::Parametric => Ok(states
                .iter()
                .map(|s| rhs(&self.params, &StateVector::from(*s)).to_array())
                .collect()),
            Mode::Blackbox => {
                let mut input = Array2::zeros((times.len(), 4));
                for (i, (t, s)) in times.iter().zip(states).enumerate() {
                    input[[i, 0]] = *t;
                    input[[i, 1]] = s[0];
                    input[[i, 2]] = s[1];
                    input[[i, 3]] = s[2];
                }
                Ok(rows3(&self.f_net.forward_batch(&input)?))
            }
        }
    }

    /// State network evaluated on `t_grid`; valid beyond the training range.
    pub fn predict(&self, t_grid: &[f64]) -> Result<Trajectory> {
        let input = Array2::from_shape_vec((t_grid.len(), 1), t_grid.to_vec())
            .map_err(|e| Error::Shape(e.to_string()))?;
        let out = self.x_net.forward_batch(&input)?;
        Trajectory::new(t_grid.to_vec(), rows3(&out).into_iter().map(StateVector::from).collect())
    }

    /// `dX/dt - f(t, X)` at every collocation time, using the state network.
    pub fn ode_residuals(&self, t_colloc: &[f64]) -> Result<Vec<[f64; 3]>> {
        self.ode_residuals_with(&self.x_net, t_colloc)
    }

    /// Residuals with an arbitrary state surrogate in place of the state net.
    pub fn ode_residuals_with(&self, states: &dyn StateSurrogate, t_colloc: &[f64]) -> Result<Vec<[f64; 3]>> {
        if t_colloc.is_empty() {
            return Err(Error::InvalidArgument("empty collocation set".into()));
        }
        let (x, dx) = states.states_and_derivatives(t_colloc)?;
        let f = self.f_predict_batch(t_colloc, &x)?;
        Ok(dx
            .iter()
            .zip(&f)
            .map(|(d, f)| [d[0] - f[0], d[1] - f[1], d[2] - f[2]])
            .collect())
    }

    pub fn num_params(&self) -> usize {
        self.x_net.num_params() + self.f_net.num_params() + 5
    }

    /// State net, then f-net, then `ka, cl, q, v1, v2`.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = self.x_net.flat_params();
        out.extend(self.f_net.flat_params());
        out.extend(self.params.named().map(|(_, v)| v));
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "{} values for a model with {} parameters",
                flat.len(),
                self.num_params()
            )));
        }
        let nx = self.x_net.num_params();
        let nf = self.f_net.num_params();
        self.x_net.set_flat_params(&flat[..nx])?;
        self.f_net.set_flat_params(&flat[nx..nx + nf])?;
        let p = &flat[nx + nf..];
        self.params = PkParameters {
            ka: p[0],
            cl: p[1],
            q: p[2],
            v1: p[3],
            v2: p[4],
        };
        Ok(())
    }

    /// Checkpoint text: mode, learnable constants, loss weights, then both
    /// networks in the dense-network checkpoint format.
    pub fn to_text(&self) -> String {
        let mut s = String::from("pkinn_checkpoint v1\n");
        writeln!(s, "mode {}", self.mode.name()).unwrap();
        for (name, v) in self.params.named() {
            writeln!(s, "param {name} {v:e}").unwrap();
        }
        let w = self.loss_weights;
        writeln!(s, "loss_weights {:e} {:e} {:e}", w.data, w.ode, w.ic).unwrap();
        s.push_str("x_net\n");
        s.push_str(&self.x_net.to_text());
        s.push_str("f_net\n");
        s.push_str(&self.f_net.to_text());
        s.push_str("end_checkpoint\n");
        s
    }

    pub fn from_text(text: &str, source: &str) -> Result<Self> {
        let mut r = TextReader::new(text, source);
        r.expect_line("pkinn_checkpoint v1")?;
        let mode = match r.keyed("mode")?.as_slice() {
            [m] => m.parse().map_err(|e: Error| r.error(e.to_string()))?,
            _ => return Err(r.error("expected `mode NAME`")),
        };
        let mut values = [0.0; 5];
        for (slot, name) in values.iter_mut().zip(["ka", "cl", "q", "v1", "v2"]) {
            match r.keyed("param")?.as_slice() {
                [n, v] if *n == name => {
                    *slot = v.parse().map_err(|_| r.error(format!("bad value for `{name}`")))?
                }
                _ => return Err(r.error(format!("expected `param {name} VALUE`"))),
            }
        }
        let weights: Vec<f64> = r
            .keyed("loss_weights")?
            .iter()
            .map(|v| v.parse().map_err(|_| r.error("bad loss weight")))
            .collect::<Result<_>>()?;
        let [data, ode, ic] = weights[..] else {
            return Err(r.error("expected three loss weights"));
        };
        r.expect_line("x_net")?;
        let x_net = DenseNetwork::read(&mut r)?;
        r.expect_line("f_net")?;
        let f_net = DenseNetwork::read(&mut r)?;
        r.expect_line("end_checkpoint")?;
        if x_net.spec().input_dim != 1 || x_net.spec().output_dim != 3 {
            return Err(r.error("state network must map 1 input to 3 outputs"));
        }
        if f_net.spec().input_dim != 4 || f_net.spec().output_dim != 3 {
            return Err(r.error("right-hand-side network must map 4 inputs to 3 outputs"));
        }
        Ok(Self {
            x_net,
            f_net,
            params: PkParameters {
                ka: values[0],
                cl: values[1],
                q: values[2],
                v1: values[3],
                v2: values[4],
            },
            mode,
            loss_weights: LossWeights { data, ode, ic },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, &path.display().to_string())
    }
}

/// Mean over collocation points of the summed squared component residuals.
pub fn loss_ode(residuals: &[[f64; 3]]) -> Result<f64> {
    if residuals.is_empty() {
        return Err(Error::InvalidArgument("empty residual matrix".into()));
    }
    let sum: f64 = residuals.iter().flat_map(|r| r.iter()).map(|r| r * r).sum();
    Ok(sum / residuals.len() as f64)
}

/// Euclidean distance between the state net at `t0` and `x_init`.
pub fn loss_ic(model: &PkinnModel, x_init: StateVector, t0: f64) -> Result<f64> {
    let x = model.x_net.forward(&[t0])?;
    let want = x_init.to_array();
    Ok((0..3).map(|i| (x[i] - want[i]).powi(2)).sum::<f64>().sqrt())
}

/// Mean over all points and components of the squared error between the
/// noisy observations and the state net.
pub fn loss_data(model: &PkinnModel, train: &NoisyDataset) -> Result<f64> {
    if train.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let pred = model.predict(train.times())?;
    let sum: f64 = pred
        .states()
        .iter()
        .zip(train.noisy.states())
        .flat_map(|(p, d)| [p.x0 - d.x0, p.x1 - d.x1, p.x2 - d.x2])
        .map(|e| e * e)
        .sum();
    Ok(sum / (3 * train.len()) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub data: f64,
    pub ode: f64,
    pub ic: f64,
}

impl LossBreakdown {
    pub fn combine(data: f64, ode: f64, ic: f64, weights: &LossWeights) -> Self {
        Self {
            total: weights.data * data + weights.ode * ode + weights.ic * ic,
            data,
            ode,
            ic,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Collocation times; `None` means the training grid.
    pub collocation_times: Option<Vec<f64>>,
    pub initial_condition: StateVector,
    pub mode: Mode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1000,
            learning_rate: 1e-2,
            seed: 0,
            collocation_times: None,
            initial_condition: StateVector::unit_dose(),
            mode: Mode::Blackbox,
        }
    }
}

impl TrainConfig {
    fn collocation<'a>(&'a self, train: &'a NoisyDataset) -> &'a [f64] {
        self.collocation_times.as_deref().unwrap_or(train.times())
    }

    pub fn validate(&self, train: &NoisyDataset) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate {}", self.learning_rate)));
        }
        if train.is_empty() {
            return Err(Error::InvalidArgument("empty training set".into()));
        }
        let colloc = self.collocation(train);
        if colloc.is_empty() {
            return Err(Error::InvalidArgument("empty collocation set".into()));
        }
        let (lo, hi) = (train.times()[0], *train.times().last().unwrap());
        if colloc.iter().any(|t| !(lo..=hi).contains(t)) {
            return Err(Error::InvalidArgument(format!(
                "collocation times must lie within the training range [{lo}, {hi}]"
            )));
        }
        Ok(())
    }
}

/// Total loss and its components for `model` on `train`.
pub fn loss_total(model: &PkinnModel, train: &NoisyDataset, config: &TrainConfig) -> Result<LossBreakdown> {
    let data = loss_data(model, train)?;
    let ode = loss_ode(&model.ode_residuals(config.collocation(train))?)?;
    let t0 = *train.times().first().expect("nonempty");
    let ic = loss_ic(model, config.initial_condition, t0)?;
    Ok(LossBreakdown::combine(data, ode, ic, &model.loss_weights))
}

fn column(values: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((values.len(), 1), values.to_vec()).expect("column shape")
}

/// The model's trainable leaves on a graph.
struct BoundModel {
    x: BoundNetwork,
    f: BoundNetwork,
    /// `ka, cl, q, v1, v2`
    params: [Var; 5],
}

impl BoundModel {
    fn bind(model: &PkinnModel, g: &mut Graph) -> Self {
        Self {
            x: model.x_net.bind(g),
            f: model.f_net.bind(g),
            params: model.params.named().map(|(_, v)| g.param_scalar(v)),
        }
    }

    fn f_predict(&self, g: &mut Graph, mode: Mode, t: Var, x: Var) -> Result<Var> {
        match mode {
            Mode::Blackbox => {
                let input = g.concat_cols(&[t, x])?;
                self.f.forward(g, input)
            }
            Mode::Parametric => {
                let [ka, cl, q, v1, v2] = self.params;
                let x0 = g.column(x, 0)?;
                let x1 = g.column(x, 1)?;
                let x2 = g.column(x, 2)?;
                let absorption = g.mul(ka, x0)?;
                let cl_q = g.add(cl, q)?;
                let k10_12 = g.div(cl_q, v1)?;
                let k12 = g.div(q, v1)?;
                let k21 = g.div(q, v2)?;
                let out1 = g.mul(k10_12, x1)?;
                let back = g.mul(k21, x2)?;
                let f1 = g.neg(absorption);
                let f2 = g.sub(absorption, out1)?;
                let f2 = g.add(f2, back)?;
                let to_periph = g.mul(k12, x1)?;
                let f3 = g.sub(to_periph, back)?;
                g.concat_cols(&[f1, f2, f3])
            }
        }
    }

    fn flat_gradient(&self, grads: &crate::autodiff::Gradients) -> Vec<f64> {
        let mut out = self.x.flat_gradient(grads);
        out.extend(self.f.flat_gradient(grads));
        out.extend(self.params.iter().map(|p| grads.get_or_zeros(*p)[[0, 0]]));
        out
    }
}

/// Total loss and its exact gradient in the order of
/// [`PkinnModel::flat_params`].
pub fn loss_and_gradient(
    model: &PkinnModel,
    train: &NoisyDataset,
    config: &TrainConfig,
) -> Result<(LossBreakdown, Vec<f64>)> {
    if train.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let mut g = Graph::new();
    let bound = BoundModel::bind(model, &mut g);
    let data_times = train.times();
    let colloc = config.collocation(train);

    let t_colloc = g.constant(column(colloc));
    let (x_colloc, dx_colloc) = bound.x.forward_with_tangent(&mut g, t_colloc)?;

    // ODE residual term.
    let f = bound.f_predict(&mut g, model.mode, t_colloc, x_colloc)?;
    let res = g.sub(dx_colloc, f)?;
    let res_sq = g.square(res);
    let res_sum = g.sum(res_sq);
    let l_ode = g.scale(res_sum, 1.0 / colloc.len() as f64);

    // Data term, sharing the forward pass when the grids coincide.
    let x_data = if colloc == data_times {
        x_colloc
    } else {
        let t_data = g.constant(column(data_times));
        bound.x.forward(&mut g, t_data)?
    };
    let mut observed = Array2::zeros((train.len(), 3));
    for (i, s) in train.noisy.states().iter().enumerate() {
        observed.row_mut(i).assign(&ndarray::arr1(&s.to_array()));
    }
    let observed = g.constant(observed);
    let err = g.sub(x_data, observed)?;
    let err_sq = g.square(err);
    let l_data = g.mean(err_sq)?;

    // Initial-condition term.
    let t0 = g.constant_scalar(data_times[0]);
    let x0 = bound.x.forward(&mut g, t0)?;
    let init = g.constant(ndarray::arr2(&[config.initial_condition.to_array()]));
    let ic_err = g.sub(x0, init)?;
    let ic_sq = g.square(ic_err);
    let ic_sum = g.sum(ic_sq);
    let l_ic = g.sqrt(ic_sum);

    let w = model.loss_weights;
    let a = g.scale(l_data, w.data);
    let b = g.scale(l_ode, w.ode);
    let c = g.scale(l_ic, w.ic);
    let ab = g.add(a, b)?;
    let total = g.add(ab, c)?;

    let grads = g.backward(total)?;
    let breakdown = LossBreakdown {
        total: g.scalar(total),
        data: g.scalar(l_data),
        ode: g.scalar(l_ode),
        ic: g.scalar(l_ic),
    };
    Ok((breakdown, bound.flat_gradient(&grads)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: LossBreakdown,
    /// Learnable constants at which `loss` was evaluated.
    pub params: PkParameters,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub trace: Vec<EpochRecord>,
    pub final_params: PkParameters,
    pub duration: Duration,
}

impl TrainReport {
    /// `epoch,loss_total,loss_data,loss_ode,loss_ic,ka,cl,q,v1,v2`, one row
    /// per epoch.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss_total,loss_data,loss_ode,loss_ic,ka,cl,q,v1,v2\n");
        for r in &self.trace {
            let p = r.params;
            writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{}",
                r.epoch, r.loss.total, r.loss.data, r.loss.ode, r.loss.ic, p.ka, p.cl, p.q, p.v1, p.v2
            )
            .unwrap();
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(self.to_csv().as_bytes()))
            .map_err(|e| Error::io(path, e))
    }
}

/// Full-batch Adam on the total loss. Every parameter of the model is
/// optimized; parameters the active mode does not reference receive zero
/// gradient and stay put.
pub fn train(model: &PkinnModel, train: &NoisyDataset, config: &TrainConfig) -> Result<(PkinnModel, TrainReport)> {
    config.validate(train)?;
    model.loss_weights.validate()?;
    let started = Instant::now();
    let mut model = model.clone();
    let mut flat = model.flat_params();
    let mut adam = AdamState::new(config.learning_rate, flat.len())?;
    let mut trace = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let (loss, grad) = loss_and_gradient(&model, train, config)?;
        if !loss.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged { epoch });
        }
        trace.push(EpochRecord {
            epoch,
            loss,
            params: model.params,
        });
        adam.step(&mut flat, &grad)?;
        model.set_flat_params(&flat)?;
    }

    let final_params = model.params;
    Ok((
        model,
        TrainReport {
            trace,
            final_params,
            duration: started.elapsed(),
        },
    ))
}
