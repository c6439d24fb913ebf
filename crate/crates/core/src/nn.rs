//! Minimal dense networks with hand-written backpropagation.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng::Rng;

/// Anything made of `f64` parameter slices visited in a fixed declaration
/// order. Gradients use the same type as the parameters they belong to.
pub trait ParamSet: Clone {
    fn visit(&self, f: &mut dyn FnMut(&[f64]));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64]));

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |s| n += s.len());
        n
    }

    fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.visit(&mut |s| out.extend_from_slice(s));
        out
    }

    /// Overwrites every parameter from `flat`, which must hold exactly
    /// [`ParamSet::num_params`] values.
    fn set_from_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        self.visit_mut(&mut |s| {
            s.copy_from_slice(&flat[offset..offset + s.len()]);
            offset += s.len();
        });
        assert_eq!(offset, flat.len(), "flat parameter length mismatch");
    }

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.visit_mut(&mut |s| s.fill(0.0));
        z
    }

    fn norm_sq(&self) -> f64 {
        let mut acc = 0.0;
        self.visit(&mut |s| acc += s.iter().map(|x| x * x).sum::<f64>());
        acc
    }

    fn scale(&mut self, c: f64) {
        self.visit_mut(&mut |s| s.iter_mut().for_each(|x| *x *= c));
    }

    fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit(&mut |s| ok &= s.iter().all(|x| x.is_finite()));
        ok
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the pre-activation `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Fully connected layer; `weight` is `outputs x inputs`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weight: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    /// Weights and biases uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn init_uniform(inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        let bound = if inputs > 0 {
            1.0 / (inputs as f64).sqrt()
        } else {
            0.0
        };
        let mut draw = || {
            if bound > 0.0 {
                rng.random_range(-bound..bound)
            } else {
                0.0
            }
        };
        let weight = (0..inputs * outputs).map(|_| draw()).collect();
        let bias = (0..outputs).map(|_| draw()).collect();
        Self {
            inputs,
            outputs,
            weight,
            bias,
        }
    }

    fn forward_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.bias.iter().enumerate().map(|(o, b)| {
            let row = &self.weight[o * self.inputs..(o + 1) * self.inputs];
            b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
        }));
    }
}

/// Feed-forward network; `activation` follows every layer but the last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub activation: Activation,
}

/// Per-layer values retained by a forward pass for backpropagation.
#[derive(Debug, Clone, Default)]
pub struct MlpTrace {
    /// Input fed to each layer.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation output of each layer.
    pre: Vec<Vec<f64>>,
}

impl Mlp {
    /// `sizes = [input, hidden..., output]`.
    pub fn init(sizes: &[usize], activation: Activation, rng: &mut Rng) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let layers = sizes
            .windows(2)
            .map(|w| Dense::init_uniform(w[0], w[1], rng))
            .collect();
        Self { layers, activation }
    }

    pub fn zeros(sizes: &[usize], activation: Activation) -> Self {
        let layers = sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect();
        Self { layers, activation }
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(|l| l.outputs));
        s
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let last = self.layers.len() - 1;
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            layer.forward_into(&cur, &mut next);
            if i < last {
                next.iter_mut().for_each(|v| *v = self.activation.apply(*v));
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    pub fn forward_trace(&self, x: &[f64]) -> (Vec<f64>, MlpTrace) {
        let last = self.layers.len() - 1;
        let mut trace = MlpTrace::default();
        let mut cur = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut pre = Vec::with_capacity(layer.outputs);
            layer.forward_into(&cur, &mut pre);
            let out = if i < last {
                pre.iter().map(|v| self.activation.apply(*v)).collect()
            } else {
                pre.clone()
            };
            trace.inputs.push(std::mem::replace(&mut cur, out));
            trace.pre.push(pre);
        }
        (cur, trace)
    }

    /// Accumulates `d loss / d params` into `grads` given `d loss / d output`
    /// and returns `d loss / d input`.
    pub fn backward(&self, trace: &MlpTrace, grad_out: &[f64], grads: &mut Mlp) -> Vec<f64> {
        let last = self.layers.len() - 1;
        let mut delta = grad_out.to_vec();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            if i < last {
                let pre = &trace.pre[i];
                for (d, &x) in delta.iter_mut().zip(pre) {
                    *d *= self.activation.derivative(x, self.activation.apply(x));
                }
            }
            let input = &trace.inputs[i];
            let g = &mut grads.layers[i];
            let mut delta_in = vec![0.0; layer.inputs];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                g.bias[o] += d;
                let row = o * layer.inputs;
                let gw = &mut g.weight[row..row + layer.inputs];
                let w = &layer.weight[row..row + layer.inputs];
                for k in 0..layer.inputs {
                    gw[k] += d * input[k];
                    delta_in[k] += d * w[k];
                }
            }
            delta = delta_in;
        }
        delta
    }
}

impl ParamSet for Mlp {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        for l in &self.layers {
            f(&l.weight);
            f(&l.bias);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        for l in &mut self.layers {
            f(&mut l.weight);
            f(&mut l.bias);
        }
    }
}

/// Stochastic gradient descent with classical momentum:
/// `v <- momentum * v + g; theta <- theta - lr * v`.
#[derive(Debug, Clone)]
pub struct Sgd<P: ParamSet> {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: P,
}

impl<P: ParamSet> Sgd<P> {
    pub fn new(params: &P, learning_rate: f64, momentum: f64) -> Self {
        Self {
            learning_rate,
            momentum,
            velocity: params.zeros_like(),
        }
    }

    pub fn step(&mut self, params: &mut P, grads: &P) {
        let g = grads.to_flat();
        let mu = self.momentum;
        let mut i = 0;
        self.velocity.visit_mut(&mut |s| {
            for v in s.iter_mut() {
                *v = mu * *v + g[i];
                i += 1;
            }
        });
        let v = self.velocity.to_flat();
        let lr = self.learning_rate;
        let mut i = 0;
        params.visit_mut(&mut |s| {
            for p in s.iter_mut() {
                *p -= lr * v[i];
                i += 1;
            }
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    #[test]
    fn identity_layer() {
        let mut m = Mlp::zeros(&[2, 2], Activation::Tanh);
        m.layers[0].weight = vec![1.0, 0.0, 0.0, 1.0];
        assert_eq!(m.forward(&[1.0, 2.0]), vec![1.0, 2.0]);
    }

    #[test]
    fn zero_network_outputs_zero() {
        let m = Mlp::zeros(&[3, 5, 4], Activation::Tanh);
        assert_eq!(m.forward(&[0.3, -1.0, 2.0]), vec![0.0; 4]);
    }

    #[test]
    fn trace_matches_forward() {
        let m = Mlp::init(&[4, 6, 3], Activation::Tanh, &mut substream(1, &[]));
        let x = [0.1, -0.5, 0.9, 0.0];
        assert_eq!(m.forward(&x), m.forward_trace(&x).0);
    }

    fn check_jacobian(activation: Activation) {
        // d(sum_o c_o y_o)/d theta against central differences
        let m = Mlp::init(&[3, 5, 2], activation, &mut substream(2, &[]));
        let x = [0.7, -0.2, 0.4];
        let c = [0.3, -1.1];
        let f = |m: &Mlp| {
            m.forward(&x)
                .iter()
                .zip(&c)
                .map(|(y, c)| y * c)
                .sum::<f64>()
        };
        let (_, trace) = m.forward_trace(&x);
        let mut grads = m.zeros_like();
        let dx = m.backward(&trace, &c, &mut grads);
        let flat = m.to_flat();
        let analytic = grads.to_flat();
        let eps = 1e-6;
        for i in 0..flat.len() {
            let mut p = flat.clone();
            p[i] += eps;
            let mut mp = m.clone();
            mp.set_from_flat(&p);
            p[i] -= 2.0 * eps;
            let mut mm = m.clone();
            mm.set_from_flat(&p);
            let numeric = (f(&mp) - f(&mm)) / (2.0 * eps);
            assert!((numeric - analytic[i]).abs() < 1e-7, "param {i}");
        }
        for k in 0..3 {
            let mut xp = x;
            xp[k] += eps;
            let mut xm = x;
            xm[k] -= eps;
            let fp: f64 = m.forward(&xp).iter().zip(&c).map(|(y, c)| y * c).sum();
            let fm: f64 = m.forward(&xm).iter().zip(&c).map(|(y, c)| y * c).sum();
            assert!(((fp - fm) / (2.0 * eps) - dx[k]).abs() < 1e-7);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        check_jacobian(Activation::Tanh);
        check_jacobian(Activation::Identity);
    }

    #[test]
    fn flat_round_trip_and_zero_width() {
        let m = Mlp::init(&[3, 0, 2], Activation::Tanh, &mut substream(3, &[]));
        assert_eq!(m.layers[0].weight.len(), 0);
        assert_eq!(m.num_params(), 2);
        let mut z = m.zeros_like();
        z.set_from_flat(&m.to_flat());
        assert_eq!(z, m);
    }

    #[test]
    fn sgd_momentum_update() {
        let mut p = Mlp::zeros(&[1, 1], Activation::Identity);
        let mut g = p.zeros_like();
        g.layers[0].weight[0] = 1.0;
        let mut opt = Sgd::new(&p, 0.1, 0.9);
        opt.step(&mut p, &g);
        assert!((p.layers[0].weight[0] + 0.1).abs() < 1e-15);
        opt.step(&mut p, &g);
        // v = 0.9 * 1 + 1 = 1.9
        assert!((p.layers[0].weight[0] + 0.1 + 0.19).abs() < 1e-15);
    }
}
