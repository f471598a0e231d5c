//! Dense feed-forward networks.

use std::fmt::Write as _;

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{Gradients, Graph, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Linear,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Linear => "linear",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "tanh" => Some(Activation::Tanh),
            "linear" => Some(Activation::Linear),
            _ => None,
        }
    }
}

/// Layer layout of a dense network. `activations` has one entry per layer
/// (hidden layers followed by the output layer); the last one is linear.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden_layers: Vec<usize>,
    pub activations: Vec<Activation>,
}

impl NetworkSpec {
    /// Tanh hidden layers followed by a linear output layer.
    pub fn tanh_mlp(input_dim: usize, hidden_layers: &[usize], output_dim: usize) -> Self {
        let mut activations = vec![Activation::Tanh; hidden_layers.len()];
        activations.push(Activation::Linear);
        Self {
            input_dim,
            output_dim,
            hidden_layers: hidden_layers.to_vec(),
            activations,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::InvalidSpec("input and output dimensions must be positive".into()));
        }
        if let Some(i) = self.hidden_layers.iter().position(|&w| w == 0) {
            return Err(Error::InvalidSpec(format!("hidden layer {i} has zero width")));
        }
        if self.activations.len() != self.hidden_layers.len() + 1 {
            return Err(Error::InvalidSpec(format!(
                "{} activations for {} layers",
                self.activations.len(),
                self.hidden_layers.len() + 1
            )));
        }
        if self.activations.last() != Some(&Activation::Linear) {
            return Err(Error::InvalidSpec("output layer must be linear".into()));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut widths = vec![self.input_dim];
        widths.extend(&self.hidden_layers);
        widths.push(self.output_dim);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `fan_out x fan_in`
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNetwork {
    spec: NetworkSpec,
    layers: Vec<DenseLayer>,
}

impl DenseNetwork {
    /// Glorot-uniform weights and zero biases, deterministic in `seed`.
    pub fn init(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = spec
            .layer_dims()
            .into_iter()
            .zip(&spec.activations)
            .map(|((fan_in, fan_out), &activation)| {
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weights =
                    Array2::from_shape_simple_fn((fan_out, fan_in), || rng.random_range(-bound..bound));
                DenseLayer {
                    weights,
                    biases: Array1::zeros(fan_out),
                    activation,
                }
            })
            .collect();
        Ok(Self {
            spec: spec.clone(),
            layers,
        })
    }

    /// Build a network from explicit layers; shapes must agree with `spec`.
    pub fn from_layers(spec: NetworkSpec, layers: Vec<DenseLayer>) -> Result<Self> {
        spec.validate()?;
        let dims = spec.layer_dims();
        if dims.len() != layers.len() {
            return Err(Error::Shape(format!("{} layers for spec with {}", layers.len(), dims.len())));
        }
        for (i, ((fan_in, fan_out), layer)) in dims.iter().zip(&layers).enumerate() {
            if layer.weights.dim() != (*fan_out, *fan_in) || layer.biases.len() != *fan_out {
                return Err(Error::Shape(format!("layer {i} does not match the spec")));
            }
            if layer.activation != spec.activations[i] {
                return Err(Error::Shape(format!("layer {i} activation does not match the spec")));
            }
        }
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    /// Evaluate on a batch: one sample per row.
    pub fn forward_batch(&self, inputs: &Array2<f64>) -> Result<Array2<f64>> {
        if inputs.ncols() != self.spec.input_dim {
            return Err(Error::Shape(format!(
                "network expects {} inputs, got {}",
                self.spec.input_dim,
                inputs.ncols()
            )));
        }
        let mut x = inputs.clone();
        for layer in &self.layers {
            x = x.dot(&layer.weights.t()) + &layer.biases;
            if layer.activation == Activation::Tanh {
                x.mapv_inplace(f64::tanh);
            }
        }
        Ok(x)
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let x = Array2::from_shape_vec((1, input.len()), input.to_vec())
            .map_err(|e| Error::Shape(e.to_string()))?;
        Ok(self.forward_batch(&x)?.row(0).to_vec())
    }

    /// Outputs and their exact derivatives with respect to the scalar input,
    /// for every time in `times` (one row each).
    pub fn forward_with_input_derivative(&self, times: &[f64]) -> Result<(Array2<f64>, Array2<f64>)> {
        if self.spec.input_dim != 1 {
            return Err(Error::Unsupported(format!(
                "input derivative needs a scalar input, network has {}",
                self.spec.input_dim
            )));
        }
        let mut x = Array2::from_shape_vec((times.len(), 1), times.to_vec())
            .map_err(|e| Error::Shape(e.to_string()))?;
        let mut dx = Array2::ones((times.len(), 1));
        for layer in &self.layers {
            x = x.dot(&layer.weights.t()) + &layer.biases;
            dx = dx.dot(&layer.weights.t());
            if layer.activation == Activation::Tanh {
                x.mapv_inplace(f64::tanh);
                dx.zip_mut_with(&x, |d, &y| *d *= 1.0 - y * y);
            }
        }
        Ok((x, dx))
    }

    pub fn input_derivative(&self, t: f64) -> Result<Vec<f64>> {
        Ok(self.forward_with_input_derivative(&[t])?.1.row(0).to_vec())
    }

    /// Register every weight and bias as a trainable leaf of `graph`.
    pub fn bind(&self, graph: &mut Graph) -> BoundNetwork {
        let layers = self
            .layers
            .iter()
            .map(|l| BoundLayer {
                weights: graph.param(l.weights.clone()),
                biases: graph.param(l.biases.clone().insert_axis(Axis(0))),
                activation: l.activation,
            })
            .collect();
        BoundNetwork {
            input_dim: self.spec.input_dim,
            layers,
        }
    }

    /// Parameters in a fixed order: per layer, weights row-major then biases.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend(l.weights.iter());
            out.extend(l.biases.iter());
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "{} values for a network with {} parameters",
                flat.len(),
                self.num_params()
            )));
        }
        let mut it = flat.iter().copied();
        for l in &mut self.layers {
            l.weights.iter_mut().chain(l.biases.iter_mut()).for_each(|w| {
                *w = it.next().expect("length checked");
            });
        }
        Ok(())
    }

    /// Plain-text checkpoint. Floats are written in shortest round-trip form,
    /// so [`DenseNetwork::from_text`] restores the network bit-exactly.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let join = |v: &mut dyn Iterator<Item = String>| v.collect::<Vec<_>>().join(" ");
        writeln!(s, "dense_network v1").unwrap();
        writeln!(s, "input_dim {}", self.spec.input_dim).unwrap();
        writeln!(s, "output_dim {}", self.spec.output_dim).unwrap();
        writeln!(s, "hidden {}", join(&mut self.spec.hidden_layers.iter().map(|w| w.to_string()))).unwrap();
        writeln!(
            s,
            "activations {}",
            join(&mut self.spec.activations.iter().map(|a| a.name().to_string()))
        )
        .unwrap();
        for (i, l) in self.layers.iter().enumerate() {
            writeln!(s, "layer {i}").unwrap();
            writeln!(s, "weights {} {}", l.weights.nrows(), l.weights.ncols()).unwrap();
            for row in l.weights.rows() {
                writeln!(s, "{}", join(&mut row.iter().map(|v| format!("{v:e}")))).unwrap();
            }
            writeln!(s, "biases {}", l.biases.len()).unwrap();
            writeln!(s, "{}", join(&mut l.biases.iter().map(|v| format!("{v:e}")))).unwrap();
        }
        writeln!(s, "end_network").unwrap();
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut reader = TextReader::new(text, "<network>");
        Self::read(&mut reader)
    }

    pub(crate) fn read(r: &mut TextReader<'_>) -> Result<Self> {
        r.expect_line("dense_network v1")?;
        let input_dim = r.keyed_usize("input_dim")?;
        let output_dim = r.keyed_usize("output_dim")?;
        let hidden_layers = r
            .keyed("hidden")?
            .into_iter()
            .map(|w| w.parse().map_err(|_| r.error(format!("bad width `{w}`"))))
            .collect::<Result<Vec<usize>>>()?;
        let activations = r
            .keyed("activations")?
            .into_iter()
            .map(|a| Activation::parse(a).ok_or_else(|| r.error(format!("bad activation `{a}`"))))
            .collect::<Result<Vec<_>>>()?;
        let spec = NetworkSpec {
            input_dim,
            output_dim,
            hidden_layers,
            activations,
        };
        spec.validate().map_err(|e| r.error(e.to_string()))?;

        let mut layers = Vec::new();
        for (i, &activation) in spec.activations.iter().enumerate() {
            r.expect_line(&format!("layer {i}"))?;
            let dims = r.keyed("weights")?;
            let (rows, cols) = match dims.as_slice() {
                [a, b] => (
                    a.parse().map_err(|_| r.error("bad weight rows"))?,
                    b.parse().map_err(|_| r.error("bad weight cols"))?,
                ),
                _ => return Err(r.error("expected `weights ROWS COLS`")),
            };
            let mut values = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                let row = r.floats()?;
                if row.len() != cols {
                    return Err(r.error(format!("expected {cols} weights, got {}", row.len())));
                }
                values.extend(row);
            }
            let weights = Array2::from_shape_vec((rows, cols), values).map_err(|e| r.error(e.to_string()))?;
            let n = r.keyed_usize("biases")?;
            let biases = r.floats()?;
            if biases.len() != n {
                return Err(r.error(format!("expected {n} biases, got {}", biases.len())));
            }
            layers.push(DenseLayer {
                weights,
                biases: Array1::from(biases),
                activation,
            });
        }
        r.expect_line("end_network")?;
        Self::from_layers(spec, layers).map_err(|e| r.error(e.to_string()))
    }
}

#[derive(Debug, Clone)]
struct BoundLayer {
    weights: Var,
    biases: Var,
    activation: Activation,
}

/// A network whose weights live on a [`Graph`] as trainable leaves.
#[derive(Debug, Clone)]
pub struct BoundNetwork {
    input_dim: usize,
    layers: Vec<BoundLayer>,
}

impl BoundNetwork {
    /// Batch forward pass: `x` holds one sample per row.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let mut h = x;
        for l in &self.layers {
            let z = g.matmul_t(h, l.weights)?;
            h = g.add(z, l.biases)?;
            if l.activation == Activation::Tanh {
                h = g.tanh(h);
            }
        }
        Ok(h)
    }

    /// Batch forward pass on a scalar-input column `t`, together with the
    /// derivative of every output with respect to `t`. Both are graph nodes,
    /// so objectives built from the derivative are differentiable too.
    pub fn forward_with_tangent(&self, g: &mut Graph, t: Var) -> Result<(Var, Var)> {
        if self.input_dim != 1 {
            return Err(Error::Unsupported("input tangent needs a scalar input".into()));
        }
        let rows = g.shape(t).0;
        let mut h = t;
        let mut dh = g.constant(Array2::ones((rows, 1)));
        for l in &self.layers {
            let z = g.matmul_t(h, l.weights)?;
            h = g.add(z, l.biases)?;
            dh = g.matmul_t(dh, l.weights)?;
            if l.activation == Activation::Tanh {
                h = g.tanh(h);
                // d tanh(z) = (1 - tanh^2) dz
                let sq = g.square(h);
                let slope = g.neg(sq);
                let slope = g.add_const(slope, 1.0);
                dh = g.mul(slope, dh)?;
            }
        }
        Ok((h, dh))
    }

    /// Gradient in the order of [`DenseNetwork::flat_params`].
    pub fn flat_gradient(&self, grads: &Gradients) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend(grads.get_or_zeros(l.weights).iter());
            out.extend(grads.get_or_zeros(l.biases).iter());
        }
        out
    }
}

/// Line-oriented reader for the plain-text checkpoint formats.
pub(crate) struct TextReader<'a> {
    lines: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
    line: usize,
    source: String,
}

impl<'a> TextReader<'a> {
    pub(crate) fn new(text: &'a str, source: impl Into<String>) -> Self {
        Self {
            lines: text.lines().enumerate().peekable(),
            line: 0,
            source: source.into(),
        }
    }

    pub(crate) fn error(&self, message: impl Into<String>) -> Error {
        Error::parse(&self.source, self.line, message)
    }

    pub(crate) fn next_line(&mut self) -> Result<&'a str> {
        loop {
            let Some((i, l)) = self.lines.next() else {
                return Err(self.error("unexpected end of file"));
            };
            self.line = i + 1;
            if !l.trim().is_empty() {
                return Ok(l.trim());
            }
        }
    }

    pub(crate) fn expect_line(&mut self, want: &str) -> Result<()> {
        let l = self.next_line()?;
        if l != want {
            return Err(self.error(format!("expected `{want}`, found `{l}`")));
        }
        Ok(())
    }

    /// Tokens after `key` on the next line.
    pub(crate) fn keyed(&mut self, key: &str) -> Result<Vec<&'a str>> {
        let l = self.next_line()?;
        let mut tokens = l.split_whitespace();
        if tokens.next() != Some(key) {
            return Err(self.error(format!("expected `{key}`, found `{l}`")));
        }
        Ok(tokens.collect())
    }

    pub(crate) fn keyed_usize(&mut self, key: &str) -> Result<usize> {
        match self.keyed(key)?.as_slice() {
            [v] => v.parse().map_err(|_| self.error(format!("bad integer for `{key}`"))),
            _ => Err(self.error(format!("expected a single value for `{key}`"))),
        }
    }

    pub(crate) fn floats(&mut self) -> Result<Vec<f64>> {
        let l = self.next_line()?;
        l.split_whitespace()
            .map(|v| v.parse().map_err(|_| self.error(format!("not a number: `{v}`"))))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn small_spec() -> NetworkSpec {
        NetworkSpec::tanh_mlp(1, &[5, 4], 3)
    }

    #[test]
    fn init_is_deterministic() {
        let spec = small_spec();
        assert_eq!(DenseNetwork::init(&spec, 3).unwrap(), DenseNetwork::init(&spec, 3).unwrap());
        assert_ne!(DenseNetwork::init(&spec, 3).unwrap(), DenseNetwork::init(&spec, 4).unwrap());
    }

    #[test]
    fn init_shapes_for_x_net() {
        let net = DenseNetwork::init(&NetworkSpec::tanh_mlp(1, &[100, 100], 3), 0).unwrap();
        let shapes: Vec<_> = net.layers().iter().map(|l| l.weights.dim()).collect();
        assert_eq!(shapes, vec![(100, 1), (100, 100), (3, 100)]);
        assert!(net.layers().iter().all(|l| l.biases.iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn init_respects_glorot_bound() {
        let spec = NetworkSpec::tanh_mlp(4, &[100, 100, 100], 3);
        let net = DenseNetwork::init(&spec, 11).unwrap();
        for l in net.layers() {
            let (fan_out, fan_in) = l.weights.dim();
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            assert!(l.weights.iter().all(|w| w.abs() <= bound));
            // The draws should actually use the range.
            let max = l.weights.iter().fold(0.0f64, |m, w| m.max(w.abs()));
            assert!(max > 0.8 * bound);
        }
    }

    #[test]
    fn invalid_specs() {
        let mut spec = small_spec();
        spec.hidden_layers[1] = 0;
        assert!(matches!(DenseNetwork::init(&spec, 0), Err(Error::InvalidSpec(_))));
        let mut spec = small_spec();
        *spec.activations.last_mut().unwrap() = Activation::Tanh;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn zero_network_outputs_zero() {
        let mut net = DenseNetwork::init(&small_spec(), 1).unwrap();
        let n = net.num_params();
        net.set_flat_params(&vec![0.0; n]).unwrap();
        assert_eq!(net.forward(&[0.7]).unwrap(), vec![0.0; 3]);
        assert_eq!(net.input_derivative(0.7).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn identity_linear_layer() {
        let spec = NetworkSpec::tanh_mlp(3, &[], 3);
        let layer = DenseLayer {
            weights: Array2::eye(3),
            biases: Array1::zeros(3),
            activation: Activation::Linear,
        };
        let net = DenseNetwork::from_layers(spec, vec![layer]).unwrap();
        assert_eq!(net.forward(&[0.5, -2.0, 3.25]).unwrap(), vec![0.5, -2.0, 3.25]);
    }

    #[test]
    fn linear_layer_input_derivative_is_weight() {
        let spec = NetworkSpec::tanh_mlp(1, &[], 2);
        let layer = DenseLayer {
            weights: array![[1.5], [-0.25]],
            biases: array![3.0, 1.0],
            activation: Activation::Linear,
        };
        let net = DenseNetwork::from_layers(spec, vec![layer]).unwrap();
        assert_eq!(net.input_derivative(4.0).unwrap(), vec![1.5, -0.25]);
    }

    #[test]
    fn dimension_errors() {
        let net = DenseNetwork::init(&small_spec(), 1).unwrap();
        assert!(matches!(net.forward(&[1.0, 2.0]), Err(Error::Shape(_))));
        let wide = DenseNetwork::init(&NetworkSpec::tanh_mlp(2, &[3], 1), 1).unwrap();
        assert!(matches!(wide.input_derivative(0.1), Err(Error::Unsupported(_))));
    }

    /// Independent forward oracle: explicit loops, no ndarray products.
    fn loop_forward(net: &DenseNetwork, input: &[f64]) -> Vec<f64> {
        let mut x = input.to_vec();
        for l in net.layers() {
            let (rows, cols) = l.weights.dim();
            let mut y = vec![0.0; rows];
            for i in 0..rows {
                let mut acc = l.biases[i];
                for j in 0..cols {
                    acc += l.weights[[i, j]] * x[j];
                }
                y[i] = if l.activation == Activation::Tanh { acc.tanh() } else { acc };
            }
            x = y;
        }
        x
    }

    #[test]
    fn forward_matches_loop_oracle() {
        let net = DenseNetwork::init(&NetworkSpec::tanh_mlp(4, &[7, 6, 5], 3), 9).unwrap();
        let mut net = net;
        for (k, l) in net.layers_mut().iter_mut().enumerate() {
            l.biases.iter_mut().enumerate().for_each(|(i, b)| *b = 0.1 * (i as f64 - k as f64));
        }
        let input = [0.3, -1.2, 0.8, 2.0];
        let got = net.forward(&input).unwrap();
        let want = loop_forward(&net, &input);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn input_derivative_matches_central_difference() {
        let net = DenseNetwork::init(&NetworkSpec::tanh_mlp(1, &[8, 8], 3), 5).unwrap();
        let t = 0.37;
        let h = 1e-5;
        let d = net.input_derivative(t).unwrap();
        let up = net.forward(&[t + h]).unwrap();
        let down = net.forward(&[t - h]).unwrap();
        for i in 0..3 {
            let fd = (up[i] - down[i]) / (2.0 * h);
            assert!((d[i] - fd).abs() <= 1e-4 * fd.abs().max(1e-3), "{i}: {} vs {fd}", d[i]);
        }
    }

    #[test]
    fn scaling_output_layer_scales_input_derivative() {
        let net = DenseNetwork::init(&NetworkSpec::tanh_mlp(1, &[6, 6], 3), 2).unwrap();
        let base = net.input_derivative(1.3).unwrap();
        let mut scaled = net.clone();
        let c = 2.5;
        scaled.layers_mut().last_mut().unwrap().weights.mapv_inplace(|w| c * w);
        let got = scaled.input_derivative(1.3).unwrap();
        for (g, b) in got.iter().zip(&base) {
            assert!((g - c * b).abs() <= 1e-14 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn bound_network_matches_plain_evaluation() {
        let net = DenseNetwork::init(&NetworkSpec::tanh_mlp(1, &[6, 5], 3), 8).unwrap();
        let times = [0.0, 0.4, 2.5];
        let (vals, derivs) = net.forward_with_input_derivative(&times).unwrap();
        let mut g = Graph::new();
        let bound = net.bind(&mut g);
        let t = g.constant(Array2::from_shape_vec((3, 1), times.to_vec()).unwrap());
        let (out, dout) = bound.forward_with_tangent(&mut g, t).unwrap();
        assert!((g.value(out) - &vals).iter().all(|d| d.abs() < 1e-14));
        assert!((g.value(dout) - &derivs).iter().all(|d| d.abs() < 1e-14));
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut net = DenseNetwork::init(&NetworkSpec::tanh_mlp(4, &[3, 2], 3), 21).unwrap();
        net.layers_mut()[0].biases[1] = 1e-300;
        net.layers_mut()[1].biases[0] = -0.1 - 0.2;
        let back = DenseNetwork::from_text(&net.to_text()).unwrap();
        assert_eq!(back, net);
        assert_eq!(back.flat_params().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                   net.flat_params().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn checkpoint_rejects_truncated_input() {
        let net = DenseNetwork::init(&small_spec(), 21).unwrap();
        let text = net.to_text();
        let cut = &text[..text.len() / 2];
        assert!(matches!(DenseNetwork::from_text(cut), Err(Error::Parse { .. })));
    }
}
