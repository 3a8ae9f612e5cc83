//! Dueling Q-network with hand-derived gradients.
//!
//! Topology: a ReLU trunk, then two ReLU streams. The value stream ends in
//! one linear unit `V(s)`, the advantage stream in one linear unit per
//! action `W(s, a)`. Outputs are recombined as
//! `Q(s, a) = V(s) + W(s, a) - mean_a' W(s, a')`.
//!
//! Weights are stored input-major (`in x out`) so a batch of row vectors
//! `X` maps to `X · W + b`.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::error::Error;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub input: usize,
    pub trunk: Vec<usize>,
    pub stream_hidden: usize,
    pub actions: usize,
}

impl Architecture {
    /// Two 64-unit trunk layers and 32-unit value/advantage streams over
    /// two actions.
    pub fn dueling(input: usize) -> Self {
        Architecture {
            input,
            trunk: vec![64, 64],
            stream_hidden: 32,
            actions: 2,
        }
    }

    /// (fan_in, fan_out) of every dense layer in storage order.
    fn shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.trunk.len() + 4);
        let mut prev = self.input;
        for &w in &self.trunk {
            shapes.push((prev, w));
            prev = w;
        }
        shapes.push((prev, self.stream_hidden));
        shapes.push((self.stream_hidden, 1));
        shapes.push((prev, self.stream_hidden));
        shapes.push((self.stream_hidden, self.actions));
        shapes
    }

    fn layer_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (0..self.trunk.len()).map(|i| format!("trunk.{i}")).collect();
        names.extend(["value.hidden", "value.out", "advantage.hidden", "advantage.out"].map(String::from));
        names
    }

    pub fn validate(&self) -> Result<(), Error> {
        if self.input == 0 || self.stream_hidden == 0 || self.actions == 0 || self.trunk.contains(&0) {
            return Err(Error::InvalidInput(format!("degenerate architecture {self:?}")));
        }
        Ok(())
    }
}

/// One fully connected layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Dense {
            weights: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
        }
    }

    fn apply(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.weights) + &self.bias
    }

    fn len(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn slot(&self, i: usize) -> f64 {
        let nw = self.weights.len();
        if i < nw {
            let cols = self.weights.ncols();
            self.weights[[i / cols, i % cols]]
        } else {
            self.bias[i - nw]
        }
    }

    fn slot_mut(&mut self, i: usize) -> &mut f64 {
        let nw = self.weights.len();
        if i < nw {
            let cols = self.weights.ncols();
            &mut self.weights[[i / cols, i % cols]]
        } else {
            &mut self.bias[i - nw]
        }
    }
}

fn relu_in_place(a: &mut Array2<f64>) {
    a.mapv_inplace(|v| v.max(0.0));
}

/// Zeroes gradient entries whose forward activation was clamped by ReLU.
fn relu_mask(grad: &mut Array2<f64>, activation: &Array2<f64>) {
    grad.zip_mut_with(activation, |g, &a| {
        if a <= 0.0 {
            *g = 0.0
        }
    });
}

/// Partial derivatives of a scalar loss, shaped like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    layers: Vec<Dense>,
}

impl GradientSet {
    pub fn zeros(arch: &Architecture) -> Self {
        GradientSet {
            layers: arch.shapes().into_iter().map(|(i, o)| Dense::zeros(i, o)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.layers.iter().map(Dense::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, index: usize) -> f64 {
        let (l, i) = locate(&self.layers, index);
        self.layers[l].slot(i)
    }

    pub fn l2_norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|d| d.weights.iter().chain(d.bias.iter()).map(|g| g * g).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for d in &mut self.layers {
            d.weights *= factor;
            d.bias *= factor;
        }
    }

    /// Rescales the whole set so its L2 norm is at most `max_norm`.
    pub fn clip_norm(&mut self, max_norm: f64) {
        let n = self.l2_norm();
        if n > max_norm {
            self.scale(max_norm / n);
        }
    }
}

fn locate(layers: &[Dense], mut index: usize) -> (usize, usize) {
    for (l, d) in layers.iter().enumerate() {
        if index < d.len() {
            return (l, index);
        }
        index -= d.len();
    }
    panic!("parameter index out of range");
}

/// Activations kept from a batched forward pass.
struct ForwardCache {
    /// Trunk activations; `trunk[0]` is the input batch.
    trunk: Vec<Array2<f64>>,
    value_hidden: Array2<f64>,
    advantage_hidden: Array2<f64>,
    q: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    arch: Architecture,
    layers: Vec<Dense>,
}

impl QNetwork {
    /// Uniform `±1/sqrt(fan_in)` weights and zero biases, drawn layer by
    /// layer in storage order, each weight matrix row-major.
    pub fn new<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Result<Self, Error> {
        arch.validate()?;
        let layers = arch
            .shapes()
            .into_iter()
            .map(|(fan_in, fan_out)| {
                let bound = 1.0 / (fan_in as f64).sqrt();
                let mut d = Dense::zeros(fan_in, fan_out);
                d.weights.iter_mut().for_each(|w| *w = rng.random_range(-bound..bound));
                d
            })
            .collect();
        Ok(QNetwork { arch, layers })
    }

    /// All parameters zero.
    pub fn zeros(arch: Architecture) -> Result<Self, Error> {
        arch.validate()?;
        let layers = GradientSet::zeros(&arch).layers;
        Ok(QNetwork { arch, layers })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::len).sum()
    }

    /// Flat parameter access in storage order (weights then bias per layer).
    pub fn param(&self, index: usize) -> f64 {
        let (l, i) = locate(&self.layers, index);
        self.layers[l].slot(i)
    }

    pub fn set_param(&mut self, index: usize, value: f64) {
        let (l, i) = locate(&self.layers, index);
        *self.layers[l].slot_mut(i) = value;
    }

    fn check_width(&self, width: usize) -> Result<(), Error> {
        if width != self.arch.input {
            return Err(Error::DimensionMismatch {
                expected: self.arch.input,
                actual: width,
            });
        }
        Ok(())
    }

    fn forward_cached(&self, inputs: ArrayView2<f64>) -> ForwardCache {
        let t = self.arch.trunk.len();
        let mut trunk = Vec::with_capacity(t + 1);
        trunk.push(inputs.to_owned());
        for layer in &self.layers[..t] {
            let mut h = layer.apply(&trunk.last().expect("input present").view());
            relu_in_place(&mut h);
            trunk.push(h);
        }
        let top = trunk.last().expect("input present").view();

        let mut value_hidden = self.layers[t].apply(&top);
        relu_in_place(&mut value_hidden);
        let value = self.layers[t + 1].apply(&value_hidden.view());

        let mut advantage_hidden = self.layers[t + 2].apply(&top);
        relu_in_place(&mut advantage_hidden);
        let advantage = self.layers[t + 3].apply(&advantage_hidden.view());

        let mean = advantage.mean_axis(Axis(1)).expect("at least one action");
        let mut q = advantage;
        for (mut row, (v, m)) in q.outer_iter_mut().zip(value.column(0).iter().zip(mean.iter())) {
            row.mapv_inplace(|a| v + a - m);
        }
        ForwardCache {
            trunk,
            value_hidden,
            advantage_hidden,
            q,
        }
    }

    /// Q-values for a batch of encoded states, one row per state.
    pub fn forward_batch(&self, inputs: ArrayView2<f64>) -> Result<Array2<f64>, Error> {
        self.check_width(inputs.ncols())?;
        Ok(self.forward_cached(inputs).q)
    }

    /// Q-values for one encoded state.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, Error> {
        self.check_width(input.len())?;
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row vector");
        Ok(self.forward_cached(x).q.row(0).to_vec())
    }

    /// The state value `V(s)` alone.
    pub fn state_value(&self, input: &[f64]) -> Result<f64, Error> {
        self.check_width(input.len())?;
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row vector");
        let t = self.arch.trunk.len();
        let mut h = x.to_owned();
        for layer in &self.layers[..t] {
            h = layer.apply(&h.view());
            relu_in_place(&mut h);
        }
        let mut vh = self.layers[t].apply(&h.view());
        relu_in_place(&mut vh);
        Ok(self.layers[t + 1].apply(&vh.view())[[0, 0]])
    }

    /// Squared-error loss `(target - Q(s, a))^2` averaged over the batch and
    /// its exact gradient. Only the taken action's output contributes.
    pub fn backward_batch(
        &self,
        inputs: ArrayView2<f64>,
        actions: &[usize],
        targets: &[f64],
    ) -> Result<(f64, GradientSet), Error> {
        self.check_width(inputs.ncols())?;
        let batch = inputs.nrows();
        if actions.len() != batch || targets.len() != batch {
            return Err(Error::DimensionMismatch {
                expected: batch,
                actual: actions.len().min(targets.len()),
            });
        }
        if let Some(&a) = actions.iter().find(|&&a| a >= self.arch.actions) {
            return Err(Error::InvalidInput(format!("action {a} out of range")));
        }
        let cache = self.forward_cached(inputs);
        let t = self.arch.trunk.len();
        let n_actions = self.arch.actions as f64;

        let mut loss = 0.0;
        let mut d_q = Array2::<f64>::zeros((batch, self.arch.actions));
        for (i, (&a, &target)) in actions.iter().zip(targets).enumerate() {
            let err = target - cache.q[[i, a]];
            loss += err * err;
            d_q[[i, a]] = -2.0 * err / batch as f64;
        }
        loss /= batch as f64;

        // Q_a = V + W_a - mean(W): dL/dV = Σ_a dQ_a, dL/dW_k = dQ_k - mean(dQ).
        let d_value = d_q.sum_axis(Axis(1)).insert_axis(Axis(1));
        let row_mean = d_q.sum_axis(Axis(1)) / n_actions;
        let mut d_adv = d_q;
        for (mut row, m) in d_adv.outer_iter_mut().zip(row_mean.iter()) {
            row -= *m;
        }

        let mut grads = GradientSet::zeros(&self.arch);
        let top = &cache.trunk[t];

        grads.layers[t + 3].weights = cache.advantage_hidden.t().dot(&d_adv);
        grads.layers[t + 3].bias = d_adv.sum_axis(Axis(0));
        let mut d_ah = d_adv.dot(&self.layers[t + 3].weights.t());
        relu_mask(&mut d_ah, &cache.advantage_hidden);
        grads.layers[t + 2].weights = top.t().dot(&d_ah);
        grads.layers[t + 2].bias = d_ah.sum_axis(Axis(0));

        grads.layers[t + 1].weights = cache.value_hidden.t().dot(&d_value);
        grads.layers[t + 1].bias = d_value.sum_axis(Axis(0));
        let mut d_vh = d_value.dot(&self.layers[t + 1].weights.t());
        relu_mask(&mut d_vh, &cache.value_hidden);
        grads.layers[t].weights = top.t().dot(&d_vh);
        grads.layers[t].bias = d_vh.sum_axis(Axis(0));

        let mut d_h = d_ah.dot(&self.layers[t + 2].weights.t()) + d_vh.dot(&self.layers[t].weights.t());
        for l in (0..t).rev() {
            relu_mask(&mut d_h, &cache.trunk[l + 1]);
            grads.layers[l].weights = cache.trunk[l].t().dot(&d_h);
            grads.layers[l].bias = d_h.sum_axis(Axis(0));
            if l > 0 {
                d_h = d_h.dot(&self.layers[l].weights.t());
            }
        }
        Ok((loss, grads))
    }

    /// Loss and gradient for a single (state, action, target).
    pub fn backward(&self, input: &[f64], action: usize, target: f64) -> Result<(f64, GradientSet), Error> {
        self.check_width(input.len())?;
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row vector");
        self.backward_batch(x, &[action], &[target])
    }

    /// `θ <- θ - learning_rate * grads`.
    pub fn sgd_step(&mut self, grads: &GradientSet, learning_rate: f64) -> Result<(), Error> {
        if grads.layers.len() != self.layers.len()
            || grads
                .layers
                .iter()
                .zip(&self.layers)
                .any(|(g, p)| g.weights.dim() != p.weights.dim())
        {
            return Err(Error::InvalidInput("gradient set does not match network".into()));
        }
        for (p, g) in self.layers.iter_mut().zip(&grads.layers) {
            p.weights.scaled_add(-learning_rate, &g.weights);
            p.bias.scaled_add(-learning_rate, &g.bias);
        }
        Ok(())
    }

    /// Copies every parameter of `self` into `dst`.
    pub fn clone_into(&self, dst: &mut QNetwork) -> Result<(), Error> {
        if self.arch != dst.arch {
            return Err(Error::InvalidInput(format!(
                "cannot copy {:?} into {:?}",
                self.arch, dst.arch
            )));
        }
        dst.layers.clone_from(&self.layers);
        Ok(())
    }

    /// Plain-text policy format.
    ///
    /// ```text
    /// qnet v1 input=9 trunk=64,64 stream=32 actions=2
    /// trunk.0 9 64 <weights, row-major> | <biases>
    /// ...
    /// ```
    /// Layers appear in storage order; numbers use shortest round-trip
    /// scientific notation.
    pub fn to_text(&self) -> String {
        let trunk: Vec<String> = self.arch.trunk.iter().map(|w| w.to_string()).collect();
        let mut out = format!(
            "qnet v1 input={} trunk={} stream={} actions={}\n",
            self.arch.input,
            trunk.join(","),
            self.arch.stream_hidden,
            self.arch.actions
        );
        for (name, layer) in self.arch.layer_names().iter().zip(&self.layers) {
            let (fan_in, fan_out) = layer.weights.dim();
            write!(out, "{name} {fan_in} {fan_out}").unwrap();
            for w in layer.weights.iter() {
                write!(out, " {w:e}").unwrap();
            }
            out.push_str(" |");
            for b in layer.bias.iter() {
                write!(out, " {b:e}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, Error> {
        let bad = |msg: String| Error::PolicyFormat(msg);
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
        let mut fields = header.split_whitespace();
        if fields.next() != Some("qnet") || fields.next() != Some("v1") {
            return Err(bad(format!("unsupported header {header:?}")));
        }
        let (mut input, mut trunk, mut stream, mut actions) = (None, None, None, None);
        for kv in fields {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| bad(format!("bad header field {kv:?}")))?;
            let num = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| bad(format!("bad number {s:?} in header")))
            };
            match k {
                "input" => input = Some(num(v)?),
                "trunk" => {
                    trunk = Some(if v.is_empty() {
                        Vec::new()
                    } else {
                        v.split(',').map(num).collect::<Result<Vec<_>, _>>()?
                    })
                }
                "stream" => stream = Some(num(v)?),
                "actions" => actions = Some(num(v)?),
                _ => return Err(bad(format!("unknown header field {k:?}"))),
            }
        }
        let arch = Architecture {
            input: input.ok_or_else(|| bad("missing input".into()))?,
            trunk: trunk.ok_or_else(|| bad("missing trunk".into()))?,
            stream_hidden: stream.ok_or_else(|| bad("missing stream".into()))?,
            actions: actions.ok_or_else(|| bad("missing actions".into()))?,
        };
        arch.validate().map_err(|e| bad(e.to_string()))?;

        let mut layers = Vec::new();
        for (name, (fan_in, fan_out)) in arch.layer_names().into_iter().zip(arch.shapes()) {
            let line = lines.next().ok_or_else(|| bad(format!("missing layer {name}")))?;
            let mut tok = line.split_whitespace();
            if tok.next() != Some(name.as_str()) {
                return Err(bad(format!("expected layer {name}")));
            }
            let dims: Vec<usize> = tok
                .by_ref()
                .take(2)
                .map(|s| s.parse().map_err(|_| bad(format!("bad dimension in {name}"))))
                .collect::<Result<_, _>>()?;
            if dims != [fan_in, fan_out] {
                return Err(bad(format!(
                    "layer {name}: expected {fan_in}x{fan_out}, found {dims:?}"
                )));
            }
            let rest: Vec<&str> = tok.collect();
            let split = rest
                .iter()
                .position(|&s| s == "|")
                .ok_or_else(|| bad(format!("layer {name}: missing bias separator")))?;
            let parse = |s: &&str| {
                s.parse::<f64>()
                    .map_err(|_| bad(format!("layer {name}: bad value {s:?}")))
            };
            let w: Vec<f64> = rest[..split].iter().map(parse).collect::<Result<_, _>>()?;
            let b: Vec<f64> = rest[split + 1..].iter().map(parse).collect::<Result<_, _>>()?;
            if w.len() != fan_in * fan_out || b.len() != fan_out {
                return Err(bad(format!(
                    "layer {name}: {} weights and {} biases for {fan_in}x{fan_out}",
                    w.len(),
                    b.len()
                )));
            }
            layers.push(Dense {
                weights: Array2::from_shape_vec((fan_in, fan_out), w).expect("length checked"),
                bias: Array1::from(b),
            });
        }
        if lines.next().is_some() {
            return Err(bad("trailing data after last layer".into()));
        }
        Ok(QNetwork { arch, layers })
    }

    pub fn save(&self, path: &Path) -> Result<(), Error> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng_stream;

    fn tiny_arch() -> Architecture {
        Architecture {
            input: 1,
            trunk: vec![1],
            stream_hidden: 1,
            actions: 2,
        }
    }

    fn random_net(seed: u64) -> QNetwork {
        let mut rng = rng_stream(seed, 9);
        let mut net = QNetwork::new(Architecture::dueling(9), &mut rng).unwrap();
        // non-zero biases so every code path is exercised
        for i in 0..net.param_count() {
            if rng.random::<f64>() < 0.2 {
                net.set_param(i, rng.random_range(-0.3..0.3));
            }
        }
        net
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = QNetwork::zeros(Architecture::dueling(9)).unwrap();
        assert_eq!(net.forward(&[0.5; 9]).unwrap(), vec![0.0, 0.0]);
        let (loss, _) = net.backward(&[0.5; 9], 0, 1.0).unwrap();
        assert_eq!(loss, 1.0);
    }

    #[test]
    fn width_mismatch_is_rejected() {
        let net = random_net(1);
        assert!(matches!(
            net.forward(&[0.0; 8]),
            Err(Error::DimensionMismatch { expected: 9, actual: 8 })
        ));
    }

    #[test]
    fn mean_advantage_is_zero() {
        let net = random_net(2);
        let mut rng = rng_stream(2, 10);
        for _ in 0..100 {
            let x: Vec<f64> = (0..9).map(|_| rng.random()).collect();
            let q = net.forward(&x).unwrap();
            let v = net.state_value(&x).unwrap();
            assert!(((q[0] - v) + (q[1] - v)).abs() < 1e-9);
        }
    }

    #[test]
    fn single_unit_network_matches_scalar_evaluation() {
        let mut net = QNetwork::zeros(tiny_arch()).unwrap();
        // trunk w,b; value.hidden w,b; value.out w,b; advantage.hidden w,b; advantage.out w0,w1,b0,b1
        let params = [0.8, 0.1, -0.5, 0.7, 1.5, -0.2, 0.9, 0.05, 2.0, -1.0, 0.3, 0.4];
        for (i, &p) in params.iter().enumerate() {
            net.set_param(i, p);
        }
        let x = 0.6;
        let relu = |v: f64| v.max(0.0);
        let h = relu(0.8 * x + 0.1);
        let vh = relu(-0.5 * h + 0.7);
        let v = 1.5 * vh - 0.2;
        let ah = relu(0.9 * h + 0.05);
        let (a0, a1) = (2.0 * ah + 0.3, 0.4 - ah);
        let mean = (a0 + a1) / 2.0;
        let q = net.forward(&[x]).unwrap();
        assert!((q[0] - (v + a0 - mean)).abs() < 1e-15);
        assert!((q[1] - (v + a1 - mean)).abs() < 1e-15);
    }

    #[test]
    fn perfect_prediction_has_zero_gradient() {
        let net = random_net(3);
        let x = [0.3; 9];
        let q = net.forward(&x).unwrap();
        let (loss, grads) = net.backward(&x, 1, q[1]).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(grads.l2_norm(), 0.0);
    }

    fn central_difference(net: &QNetwork, x: &[f64], a: usize, target: f64, i: usize, h: f64) -> f64 {
        let mut n = net.clone();
        let p = net.param(i);
        n.set_param(i, p + h);
        let up = (target - n.forward(x).unwrap()[a]).powi(2);
        n.set_param(i, p - h);
        let down = (target - n.forward(x).unwrap()[a]).powi(2);
        (up - down) / (2.0 * h)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let net = random_net(4);
        let x = [0.9, 0.1, 0.4, 0.25, 0.25, 0.25, 0.0, 0.0, 1.0];
        let (_, grads) = net.backward(&x, 0, 3.0).unwrap();
        for i in (0..net.param_count()).step_by(37) {
            let fd = central_difference(&net, &x, 0, 3.0, i, 1e-5);
            let g = grads.get(i);
            assert!(
                (fd - g).abs() <= 1e-4 * fd.abs().max(1e-6) + 1e-8,
                "param {i}: {g} vs {fd}"
            );
        }
    }

    #[test]
    fn batch_gradient_is_mean_of_singles() {
        let net = random_net(5);
        let xs = Array2::from_shape_fn((3, 9), |(i, j)| ((i * 9 + j) as f64 * 0.37).fract());
        let (loss, grads) = net.backward_batch(xs.view(), &[0, 1, 1], &[1.0, -2.0, 0.5]).unwrap();
        let mut mean_loss = 0.0;
        let mut mean = GradientSet::zeros(net.architecture());
        for (i, (a, t)) in [(0, 1.0), (1, -2.0), (1, 0.5)].into_iter().enumerate() {
            let (l, g) = net.backward(xs.row(i).as_slice().unwrap(), a, t).unwrap();
            mean_loss += l / 3.0;
            for (m, g) in mean.layers.iter_mut().zip(&g.layers) {
                m.weights.scaled_add(1.0 / 3.0, &g.weights);
                m.bias.scaled_add(1.0 / 3.0, &g.bias);
            }
        }
        assert!((loss - mean_loss).abs() < 1e-12);
        for i in 0..grads.len() {
            assert!((grads.get(i) - mean.get(i)).abs() < 1e-12);
        }
    }

    #[test]
    fn sgd_update_rule() {
        let mut net = QNetwork::zeros(tiny_arch()).unwrap();
        net.set_param(0, 1.0);
        let mut g = GradientSet::zeros(net.architecture());
        g.layers[0].weights[[0, 0]] = 2.0;
        net.sgd_step(&g, 0.1).unwrap();
        assert!((net.param(0) - 0.8).abs() < 1e-15);

        let before = net.clone();
        net.sgd_step(&GradientSet::zeros(net.architecture()), 0.1).unwrap();
        assert_eq!(net, before);
    }

    #[test]
    fn sgd_converges_on_one_parameter_quadratic() {
        // Q(s,0) = b0 - (b0+b1)/2 + value bias; fit value.out bias to a constant target.
        let mut net = QNetwork::zeros(tiny_arch()).unwrap();
        let bias_index = 2 + 2 + 1; // trunk (w,b), value.hidden (w,b), value.out w
        for _ in 0..2_000 {
            let (_, g) = net.backward(&[0.0], 0, 2.5).unwrap();
            let mut only_bias = GradientSet::zeros(net.architecture());
            only_bias.layers[2].bias[0] = g.get(bias_index);
            net.sgd_step(&only_bias, 0.05).unwrap();
        }
        assert!((net.param(bias_index) - 2.5).abs() < 1e-9);
    }

    #[test]
    fn clip_norm_bounds_gradient() {
        let net = random_net(6);
        let (_, mut g) = net.backward(&[1.0; 9], 1, 50.0).unwrap();
        assert!(g.l2_norm() > 1.0);
        g.clip_norm(1.0);
        assert!((g.l2_norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn clone_into_copies_and_decouples() {
        let src = random_net(7);
        let mut dst = QNetwork::zeros(Architecture::dueling(9)).unwrap();
        src.clone_into(&mut dst).unwrap();
        let x = [0.2; 9];
        assert_eq!(src.forward(&x).unwrap(), dst.forward(&x).unwrap());

        let mut src = src;
        let frozen = dst.forward(&x).unwrap();
        let (_, g) = src.backward(&x, 0, 10.0).unwrap();
        src.sgd_step(&g, 0.1).unwrap();
        assert_ne!(src.forward(&x).unwrap(), frozen);
        assert_eq!(dst.forward(&x).unwrap(), frozen);

        let mut wrong = QNetwork::zeros(Architecture::dueling(8)).unwrap();
        assert!(src.clone_into(&mut wrong).is_err());
    }

    #[test]
    fn initialization_is_documented_scheme() {
        let mut a = rng_stream(8, 1);
        let net = QNetwork::new(Architecture::dueling(9), &mut a).unwrap();
        let mut dst = QNetwork::zeros(Architecture::dueling(9)).unwrap();
        net.clone_into(&mut dst).unwrap();

        let mut b = rng_stream(8, 1);
        for (layer, (fan_in, _)) in dst.layers().iter().zip(net.architecture().shapes()) {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for &w in layer.weights.iter() {
                assert_eq!(w, b.random_range(-bound..bound));
            }
            assert!(layer.bias.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn text_round_trip_is_exact() {
        let net = random_net(9);
        let back = QNetwork::from_text(&net.to_text()).unwrap();
        assert_eq!(back, net);
    }

    #[test]
    fn loader_rejects_bad_dimensions() {
        let text = random_net(10).to_text();
        let broken = text.replacen("trunk.0 9 64", "trunk.0 9 63", 1);
        assert!(matches!(QNetwork::from_text(&broken), Err(Error::PolicyFormat(_))));
        let truncated: String = text.lines().take(3).collect::<Vec<_>>().join("\n");
        assert!(QNetwork::from_text(&truncated).is_err());
        assert!(QNetwork::from_text("qnet v2 input=9").is_err());
    }
}
