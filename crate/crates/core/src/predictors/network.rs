//! Differentiable models sharing one layout: a backbone producing a state per timestep and two
//! linear heads (mortality logit, normalized remaining LOS) reading that state.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::sigmoid;
use crate::rng::BenchRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backbone {
    /// The state is the input itself; the heads are linear/logistic regressions.
    Linear,
    /// One tanh hidden layer applied to each timestep independently.
    Perceptron,
    /// Single-layer gated recurrent unit.
    Recurrent,
}

/// Which heads contribute to the loss and to predictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Heads {
    pub outcome: bool,
    pub los: bool,
}

impl Heads {
    pub const BOTH: Heads = Heads {
        outcome: true,
        los: true,
    };
    pub const OUTCOME: Heads = Heads {
        outcome: true,
        los: false,
    };
    pub const LOS: Heads = Heads {
        outcome: false,
        los: true,
    };
}

/// One patient as model input.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Per timestep: dynamic features followed by statics.
    pub inputs: Vec<Vec<f64>>,
    pub outcome: bool,
    /// Normalized remaining LOS per timestep.
    pub los_target: Vec<f64>,
    /// Remaining LOS in days per timestep.
    pub los_days: Vec<f64>,
}

impl Sample {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub backbone: Backbone,
    pub n_inputs: usize,
    pub hidden: usize,
    /// Flat parameters: backbone first, then `[w_outcome, b_outcome, w_los, b_los]`.
    pub params: Vec<f64>,
}

/// Per-timestep cache for the backward pass.
enum Cache {
    None,
    Recurrent(Vec<GruStep>),
}

struct GruStep {
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    n: Vec<f64>,
}

const GATES: usize = 3;
const Z: usize = 0;
const R: usize = 1;
const N: usize = 2;

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Network {
    pub fn n_params(backbone: Backbone, n_inputs: usize, hidden: usize) -> usize {
        let (backbone_len, state) = match backbone {
            Backbone::Linear => (0, n_inputs),
            Backbone::Perceptron => (hidden * n_inputs + hidden, hidden),
            Backbone::Recurrent => (GATES * hidden * (n_inputs + hidden + 1), hidden),
        };
        backbone_len + 2 * state + 2
    }

    /// Weights uniform in `±1/sqrt(fan_in)`, biases zero.
    pub fn init(backbone: Backbone, n_inputs: usize, hidden: usize, rng: &mut BenchRng) -> Result<Self> {
        if n_inputs == 0 {
            return Err(Error::Argument("model needs at least one input feature".into()));
        }
        if backbone != Backbone::Linear && hidden == 0 {
            return Err(Error::Argument("hidden width must be positive".into()));
        }
        let hidden = if backbone == Backbone::Linear { 0 } else { hidden };
        let mut net = Network {
            backbone,
            n_inputs,
            hidden,
            params: vec![0.0; Self::n_params(backbone, n_inputs, hidden)],
        };
        let mut uniform = |slot: &mut [f64], fan_in: usize| {
            let a = 1.0 / (fan_in as f64).sqrt();
            for v in slot {
                *v = rng.gen_range(-a..a);
            }
        };
        let (d, h) = (n_inputs, hidden);
        match backbone {
            Backbone::Linear => {}
            Backbone::Perceptron => uniform(&mut net.params[..h * d], d),
            Backbone::Recurrent => {
                uniform(&mut net.params[..GATES * h * d], d);
                let u0 = GATES * h * d;
                uniform(&mut net.params[u0..u0 + GATES * h * h], h);
            }
        }
        let s = net.state_dim();
        let o = net.head_offset();
        uniform(&mut net.params[o..o + s], s);
        uniform(&mut net.params[o + s + 1..o + 2 * s + 1], s);
        Ok(net)
    }

    pub fn state_dim(&self) -> usize {
        match self.backbone {
            Backbone::Linear => self.n_inputs,
            _ => self.hidden,
        }
    }

    fn head_offset(&self) -> usize {
        self.params.len() - 2 * self.state_dim() - 2
    }

    /// Offsets of (outcome weights, outcome bias, LOS weights, LOS bias).
    fn heads_layout(&self) -> (usize, usize, usize, usize) {
        let o = self.head_offset();
        let s = self.state_dim();
        (o, o + s, o + s + 1, o + 2 * s + 1)
    }

    /// Zeroes the LOS head.
    pub fn zero_los_head(&mut self) {
        let (_, _, wl, bl) = self.heads_layout();
        for v in &mut self.params[wl..=bl] {
            *v = 0.0;
        }
    }

    fn states(&self, inputs: &[Vec<f64>]) -> (Vec<Vec<f64>>, Cache) {
        let (d, h) = (self.n_inputs, self.hidden);
        let p = &self.params;
        match self.backbone {
            Backbone::Linear => (inputs.to_vec(), Cache::None),
            Backbone::Perceptron => {
                let b0 = h * d;
                let states = inputs
                    .iter()
                    .map(|x| {
                        (0..h)
                            .map(|i| {
                                let row = &p[i * d..(i + 1) * d];
                                (p[b0 + i] + dot(row, x)).tanh()
                            })
                            .collect()
                    })
                    .collect();
                (states, Cache::None)
            }
            Backbone::Recurrent => {
                let (u0, b0) = (GATES * h * d, GATES * h * (d + h));
                let w = |g: usize, i: usize| &p[(g * h + i) * d..(g * h + i + 1) * d];
                let u = |g: usize, i: usize| &p[u0 + (g * h + i) * h..u0 + (g * h + i + 1) * h];
                let b = |g: usize, i: usize| p[b0 + g * h + i];
                let mut h_prev = vec![0.0; h];
                let mut states = Vec::with_capacity(inputs.len());
                let mut cache = Vec::with_capacity(inputs.len());
                for x in inputs {
                    let z: Vec<f64> = (0..h)
                        .map(|i| sigmoid(b(Z, i) + dot(w(Z, i), x) + dot(u(Z, i), &h_prev)))
                        .collect();
                    let r: Vec<f64> = (0..h)
                        .map(|i| sigmoid(b(R, i) + dot(w(R, i), x) + dot(u(R, i), &h_prev)))
                        .collect();
                    let rh: Vec<f64> = r.iter().zip(&h_prev).map(|(a, b)| a * b).collect();
                    let n: Vec<f64> = (0..h)
                        .map(|i| (b(N, i) + dot(w(N, i), x) + dot(u(N, i), &rh)).tanh())
                        .collect();
                    let h_new: Vec<f64> = (0..h)
                        .map(|i| (1.0 - z[i]) * n[i] + z[i] * h_prev[i])
                        .collect();
                    states.push(h_new.clone());
                    cache.push(GruStep { h_prev, z, r, n });
                    h_prev = h_new;
                }
                (states, Cache::Recurrent(cache))
            }
        }
    }

    /// Mortality logit and normalized LOS at every timestep.
    pub fn forward(&self, inputs: &[Vec<f64>]) -> Vec<(f64, f64)> {
        let (wo, bo, wl, bl) = self.heads_layout();
        let s = self.state_dim();
        let p = &self.params;
        self.states(inputs)
            .0
            .iter()
            .map(|st| (p[bo] + dot(&p[wo..wo + s], st), p[bl] + dot(&p[wl..wl + s], st)))
            .collect()
    }

    /// Mean per-record loss (cross-entropy for the outcome head plus squared error for the LOS
    /// head, unit weights) and its gradient.
    pub fn loss_and_grad(&self, samples: &[&Sample], heads: Heads) -> (f64, Vec<f64>) {
        let records: usize = samples.iter().map(|s| s.len()).sum();
        let mut grad = vec![0.0; self.params.len()];
        if records == 0 {
            return (0.0, grad);
        }
        let scale = 1.0 / records as f64;
        let (wo, bo, wl, bl) = self.heads_layout();
        let s = self.state_dim();
        let mut loss = 0.0;
        for sample in samples {
            let (states, cache) = self.states(&sample.inputs);
            let mut d_states = vec![vec![0.0; s]; states.len()];
            for (t, st) in states.iter().enumerate() {
                if heads.outcome {
                    let logit = self.params[bo] + dot(&self.params[wo..wo + s], st);
                    let y = if sample.outcome { 1.0 } else { 0.0 };
                    loss += softplus(logit) - y * logit;
                    let dl = (sigmoid(logit) - y) * scale;
                    grad[bo] += dl;
                    for j in 0..s {
                        grad[wo + j] += dl * st[j];
                        d_states[t][j] += dl * self.params[wo + j];
                    }
                }
                if heads.los {
                    let pred = self.params[bl] + dot(&self.params[wl..wl + s], st);
                    let err = pred - sample.los_target[t];
                    loss += err * err;
                    let dl = 2.0 * err * scale;
                    grad[bl] += dl;
                    for j in 0..s {
                        grad[wl + j] += dl * st[j];
                        d_states[t][j] += dl * self.params[wl + j];
                    }
                }
            }
            self.backward(&sample.inputs, &states, &cache, d_states, &mut grad);
        }
        (loss * scale, grad)
    }

    /// Mean per-record loss without the gradient.
    pub fn loss(&self, samples: &[&Sample], heads: Heads) -> f64 {
        let mut total = 0.0;
        let mut records = 0usize;
        for sample in samples {
            for (t, (logit, los)) in self.forward(&sample.inputs).into_iter().enumerate() {
                records += 1;
                if heads.outcome {
                    let y = if sample.outcome { 1.0 } else { 0.0 };
                    total += softplus(logit) - y * logit;
                }
                if heads.los {
                    let err = los - sample.los_target[t];
                    total += err * err;
                }
            }
        }
        if records == 0 {
            0.0
        } else {
            total / records as f64
        }
    }

    fn backward(
        &self,
        inputs: &[Vec<f64>],
        states: &[Vec<f64>],
        cache: &Cache,
        d_states: Vec<Vec<f64>>,
        grad: &mut [f64],
    ) {
        let (d, h) = (self.n_inputs, self.hidden);
        let p = &self.params;
        match (self.backbone, cache) {
            (Backbone::Linear, _) => {}
            (Backbone::Perceptron, _) => {
                let b0 = h * d;
                for ((x, st), ds) in inputs.iter().zip(states).zip(&d_states) {
                    for i in 0..h {
                        let da = ds[i] * (1.0 - st[i] * st[i]);
                        if da == 0.0 {
                            continue;
                        }
                        grad[b0 + i] += da;
                        for (g, xj) in grad[i * d..(i + 1) * d].iter_mut().zip(x) {
                            *g += da * xj;
                        }
                    }
                }
            }
            (Backbone::Recurrent, Cache::Recurrent(steps)) => {
                let (u0, b0) = (GATES * h * d, GATES * h * (d + h));
                let w_at = |g: usize, i: usize| (g * h + i) * d;
                let u_at = |g: usize, i: usize| u0 + (g * h + i) * h;
                let mut dh_next = vec![0.0; h];
                for t in (0..inputs.len()).rev() {
                    let GruStep { h_prev, z, r, n } = &steps[t];
                    let x = &inputs[t];
                    let dh: Vec<f64> = (0..h).map(|i| d_states[t][i] + dh_next[i]).collect();
                    let mut dh_prev: Vec<f64> = (0..h).map(|i| dh[i] * z[i]).collect();
                    let rh: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();

                    let dan: Vec<f64> = (0..h)
                        .map(|i| dh[i] * (1.0 - z[i]) * (1.0 - n[i] * n[i]))
                        .collect();
                    let daz: Vec<f64> = (0..h)
                        .map(|i| dh[i] * (h_prev[i] - n[i]) * z[i] * (1.0 - z[i]))
                        .collect();
                    let mut d_rh = vec![0.0; h];
                    for i in 0..h {
                        let ui = u_at(N, i);
                        for k in 0..h {
                            d_rh[k] += p[ui + k] * dan[i];
                        }
                    }
                    let dar: Vec<f64> = (0..h)
                        .map(|k| d_rh[k] * h_prev[k] * r[k] * (1.0 - r[k]))
                        .collect();
                    for k in 0..h {
                        dh_prev[k] += d_rh[k] * r[k];
                    }

                    for (gate, da, state_in) in [(N, &dan, &rh), (Z, &daz, h_prev), (R, &dar, h_prev)] {
                        for i in 0..h {
                            let a = da[i];
                            if a == 0.0 {
                                continue;
                            }
                            grad[b0 + gate * h + i] += a;
                            let wi = w_at(gate, i);
                            for j in 0..d {
                                grad[wi + j] += a * x[j];
                            }
                            let ui = u_at(gate, i);
                            for k in 0..h {
                                grad[ui + k] += a * state_in[k];
                            }
                            if gate != N {
                                for k in 0..h {
                                    dh_prev[k] += p[ui + k] * a;
                                }
                            }
                        }
                    }
                    dh_next = dh_prev;
                }
            }
            (Backbone::Recurrent, Cache::None) => unreachable!("recurrent states always carry a cache"),
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn random_sample(rng: &mut BenchRng, len: usize, d: usize) -> Sample {
        Sample {
            inputs: (0..len)
                .map(|_| (0..d).map(|_| rng.gen_range(-1.5..1.5)).collect())
                .collect(),
            outcome: rng.gen_bool(0.5),
            los_target: (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            los_days: vec![0.0; len],
        }
    }

    #[test]
    fn parameter_counts() {
        assert_eq!(Network::n_params(Backbone::Linear, 4, 0), 10);
        assert_eq!(Network::n_params(Backbone::Perceptron, 4, 3), 15 + 8);
        assert_eq!(Network::n_params(Backbone::Recurrent, 4, 3), 3 * 3 * 8 + 8);
    }

    #[test]
    fn rejects_degenerate_shapes() {
        let mut rng = seeded(1);
        assert!(matches!(
            Network::init(Backbone::Recurrent, 4, 0, &mut rng),
            Err(Error::Argument(_))
        ));
        assert!(Network::init(Backbone::Linear, 0, 0, &mut rng).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = seeded(5);
        for backbone in [Backbone::Linear, Backbone::Perceptron, Backbone::Recurrent] {
            let net = Network::init(backbone, 4, 3, &mut rng).unwrap();
            let samples: Vec<Sample> = (0..2).map(|_| random_sample(&mut rng, 3, 4)).collect();
            let refs: Vec<&Sample> = samples.iter().collect();
            let (_, grad) = net.loss_and_grad(&refs, Heads::BOTH);
            let h = 1e-6;
            for i in 0..net.params.len() {
                let mut plus = net.clone();
                plus.params[i] += h;
                let mut minus = net.clone();
                minus.params[i] -= h;
                let fd = (plus.loss(&refs, Heads::BOTH) - minus.loss(&refs, Heads::BOTH)) / (2.0 * h);
                let denom = grad[i].abs().max(fd.abs()).max(1e-4);
                assert!((grad[i] - fd).abs() / denom < 1e-5, "{backbone:?} param {i}: {} vs {fd}", grad[i]);
            }
        }
    }

    #[test]
    fn recurrent_outputs_are_causal() {
        let mut rng = seeded(9);
        let net = Network::init(Backbone::Recurrent, 3, 4, &mut rng).unwrap();
        let s = random_sample(&mut rng, 6, 3);
        let full = net.forward(&s.inputs);
        for len in 1..=6 {
            assert_eq!(net.forward(&s.inputs[..len]), full[..len]);
        }
    }

    #[test]
    fn outcome_head_ignores_los_head_parameters() {
        let mut rng = seeded(2);
        let net = Network::init(Backbone::Recurrent, 3, 4, &mut rng).unwrap();
        let s = random_sample(&mut rng, 4, 3);
        let mut zeroed = net.clone();
        zeroed.zero_los_head();
        let a: Vec<f64> = net.forward(&s.inputs).iter().map(|o| o.0).collect();
        let b: Vec<f64> = zeroed.forward(&s.inputs).iter().map(|o| o.0).collect();
        assert_eq!(a, b);
    }
}
