//! The trainable embedding head: a linear map or a one-hidden-layer tanh MLP
//! with hand-written backprop, plain SGD (optional momentum) and cosine
//! learning-rate decay.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::numkit::{FeatureMatrix, SeededRng};
use crate::{Error, Result};

/// Layer sizes. `hidden_dim == 0` means a single linear layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
}

impl Layout {
    pub fn linear(input_dim: usize, output_dim: usize) -> Self {
        Layout {
            input_dim,
            hidden_dim: 0,
            output_dim,
        }
    }

    pub fn mlp(input_dim: usize, hidden_dim: usize, output_dim: usize) -> Self {
        Layout {
            input_dim,
            hidden_dim,
            output_dim,
        }
    }

    /// `(in, out)` for each dense layer, input side first.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        if self.hidden_dim == 0 {
            vec![(self.input_dim, self.output_dim)]
        } else {
            vec![
                (self.input_dim, self.hidden_dim),
                (self.hidden_dim, self.output_dim),
            ]
        }
    }
}

/// Affine layer `y = W x + b` with `W` stored `out x in`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Dense {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    fn apply(&self, x: &FeatureMatrix) -> FeatureMatrix {
        let mut out = FeatureMatrix::zeros(x.rows(), self.out_dim);
        for (i, row) in x.iter_rows().enumerate() {
            let o = out.row_mut(i);
            for (k, ok) in o.iter_mut().enumerate() {
                let w = &self.weight[k * self.in_dim..(k + 1) * self.in_dim];
                *ok = self.bias[k] + crate::numkit::dot(w, row);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingNet {
    layout: Layout,
    layers: Vec<Dense>,
}

/// Activations retained by [`EmbeddingNet::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct Cache {
    input: FeatureMatrix,
    hidden: Option<FeatureMatrix>,
}

/// Gradients in the same layout as the network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub layers: Vec<Dense>,
}

impl ParamGrads {
    pub fn zeros_like(net: &EmbeddingNet) -> Self {
        ParamGrads {
            layers: net
                .layers
                .iter()
                .map(|l| Dense::zeros(l.in_dim, l.out_dim))
                .collect(),
        }
    }

    /// Flat views in [`EmbeddingNet::named_params`] order.
    pub fn slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }
}

impl EmbeddingNet {
    /// Glorot-uniform weights, zero biases.
    pub fn new(layout: Layout, rng: &mut SeededRng) -> Result<Self> {
        validate_layout(&layout)?;
        let layers = layout
            .layer_dims()
            .into_iter()
            .map(|(i, o)| {
                let a = libm::sqrt(6.0 / (i + o) as f64);
                let mut d = Dense::zeros(i, o);
                d.weight.iter_mut().for_each(|w| *w = rng.uniform(-a, a));
                d
            })
            .collect();
        Ok(EmbeddingNet { layout, layers })
    }

    /// Rebuilds a network from explicit parameters (checkpoints, tests).
    pub fn from_layers(layout: Layout, layers: Vec<Dense>) -> Result<Self> {
        validate_layout(&layout)?;
        let dims = layout.layer_dims();
        if dims.len() != layers.len() {
            return Err(Error::Invalid(format!(
                "layout needs {} layers, got {}",
                dims.len(),
                layers.len()
            )));
        }
        for (l, (i, o)) in layers.iter().zip(dims) {
            if l.in_dim != i || l.out_dim != o || l.weight.len() != i * o || l.bias.len() != o {
                return Err(Error::ShapeMismatch {
                    what: "layer parameters",
                    expected: (o, i),
                    found: (l.out_dim, l.in_dim),
                });
            }
        }
        Ok(EmbeddingNet { layout, layers })
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    /// `(name, values)` for every parameter tensor, in a fixed order.
    pub fn named_params(&self) -> Vec<(alloc::string::String, &[f64])> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                [
                    (format!("layer{i}.weight"), l.weight.as_slice()),
                    (format!("layer{i}.bias"), l.bias.as_slice()),
                ]
            })
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn forward(&self, x: &FeatureMatrix) -> Result<(FeatureMatrix, Cache)> {
        if x.cols() != self.layout.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.layout.input_dim,
                found: x.cols(),
            });
        }
        match self.layers.as_slice() {
            [only] => Ok((
                only.apply(x),
                Cache {
                    input: x.clone(),
                    hidden: None,
                },
            )),
            [first, second] => {
                let mut h = first.apply(x);
                h.as_mut_slice().iter_mut().for_each(|v| *v = libm::tanh(*v));
                let out = second.apply(&h);
                Ok((
                    out,
                    Cache {
                        input: x.clone(),
                        hidden: Some(h),
                    },
                ))
            }
            _ => unreachable!("layout validated at construction"),
        }
    }

    /// Embeddings only.
    pub fn embed(&self, x: &FeatureMatrix) -> Result<FeatureMatrix> {
        self.forward(x).map(|(e, _)| e)
    }

    pub fn backward(&self, cache: &Cache, d_out: &FeatureMatrix) -> Result<ParamGrads> {
        let expected = (cache.input.rows(), self.layout.output_dim);
        if d_out.shape() != expected {
            return Err(Error::ShapeMismatch {
                what: "embedding gradient",
                expected,
                found: d_out.shape(),
            });
        }
        let mut grads = ParamGrads::zeros_like(self);
        match (self.layers.as_slice(), &cache.hidden) {
            ([_], None) => {
                accumulate_dense(&mut grads.layers[0], &cache.input, d_out);
            }
            ([first, second], Some(h)) => {
                accumulate_dense(&mut grads.layers[1], h, d_out);
                // back through the second layer and tanh
                let mut d_pre = FeatureMatrix::zeros(h.rows(), first.out_dim);
                for i in 0..h.rows() {
                    let g = d_out.row(i);
                    let hr = h.row(i);
                    let dp = d_pre.row_mut(i);
                    for (k, gk) in g.iter().enumerate() {
                        if *gk == 0.0 {
                            continue;
                        }
                        let w = &second.weight[k * second.in_dim..(k + 1) * second.in_dim];
                        for (j, wj) in w.iter().enumerate() {
                            dp[j] += gk * wj;
                        }
                    }
                    for (dpj, hj) in dp.iter_mut().zip(hr) {
                        *dpj *= 1.0 - hj * hj;
                    }
                }
                accumulate_dense(&mut grads.layers[0], &cache.input, &d_pre);
            }
            _ => {
                return Err(Error::Invalid(
                    "cache does not belong to this network".into(),
                ))
            }
        }
        Ok(grads)
    }
}

fn validate_layout(layout: &Layout) -> Result<()> {
    if layout.input_dim == 0 || layout.output_dim == 0 {
        return Err(Error::Invalid(format!(
            "layout dimensions must be positive: {layout:?}"
        )));
    }
    Ok(())
}

fn accumulate_dense(g: &mut Dense, input: &FeatureMatrix, d_out: &FeatureMatrix) {
    for i in 0..input.rows() {
        let x = input.row(i);
        for (k, gk) in d_out.row(i).iter().enumerate() {
            if *gk == 0.0 {
                continue;
            }
            g.bias[k] += gk;
            let w = &mut g.weight[k * g.in_dim..(k + 1) * g.in_dim];
            for (wj, xj) in w.iter_mut().zip(x) {
                *wj += gk * xj;
            }
        }
    }
}

/// Schedule and regularisation state for SGD.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub base_lr: f64,
    pub min_lr: f64,
    pub total_steps: u64,
    pub step: u64,
    pub weight_decay: f64,
    /// Heavy-ball coefficient; 0 disables momentum.
    pub momentum: f64,
    velocity: Option<Vec<Vec<f64>>>,
}

impl OptState {
    pub fn new(base_lr: f64, min_lr: f64, total_steps: u64, weight_decay: f64) -> Result<Self> {
        if !(base_lr > 0.0) || !(min_lr >= 0.0) || !(weight_decay >= 0.0) {
            return Err(Error::Invalid(format!(
                "bad optimizer settings: base_lr={base_lr} min_lr={min_lr} weight_decay={weight_decay}"
            )));
        }
        if total_steps == 0 {
            return Err(Error::OutOfRange {
                what: "total_steps",
                value: 0.0,
            });
        }
        Ok(OptState {
            base_lr,
            min_lr,
            total_steps,
            step: 0,
            weight_decay,
            momentum: 0.0,
            velocity: None,
        })
    }

    pub fn with_momentum(mut self, momentum: f64) -> Self {
        self.momentum = momentum;
        self
    }

    /// `η_t = min + ½(base − min)(1 + cos(π t / T))`.
    pub fn cosine_lr(&self) -> Result<f64> {
        if self.total_steps == 0 {
            return Err(Error::OutOfRange {
                what: "total_steps",
                value: 0.0,
            });
        }
        if self.step > self.total_steps {
            return Err(Error::OutOfRange {
                what: "optimizer step",
                value: self.step as f64,
            });
        }
        let frac = self.step as f64 / self.total_steps as f64;
        Ok(self.min_lr
            + 0.5 * (self.base_lr - self.min_lr) * (1.0 + libm::cos(core::f64::consts::PI * frac)))
    }

    /// Moves the schedule forward without touching parameters.
    pub fn advance(&mut self) {
        self.step = (self.step + 1).min(self.total_steps);
    }
}

/// `θ ← θ − η_t (g + λθ)` for every parameter, then advances the schedule.
pub fn sgd_step(net: &mut EmbeddingNet, grads: &ParamGrads, opt: &mut OptState) -> Result<()> {
    let names = net.named_params();
    let slices = grads.slices();
    if slices.len() != names.len() {
        return Err(Error::Invalid("gradient does not match network".into()));
    }
    for ((name, p), g) in names.iter().zip(&slices) {
        if g.len() != p.len() {
            return Err(Error::DimensionMismatch {
                expected: p.len(),
                found: g.len(),
            });
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: name.clone() });
        }
    }
    let lr = opt.cosine_lr()?;
    let wd = opt.weight_decay;
    if opt.momentum > 0.0 {
        let mu = opt.momentum;
        let velocity = opt
            .velocity
            .get_or_insert_with(|| slices.iter().map(|g| vec![0.0; g.len()]).collect());
        for ((p, g), v) in net.params_mut().into_iter().zip(&slices).zip(velocity.iter_mut()) {
            for ((pi, gi), vi) in p.iter_mut().zip(g.iter()).zip(v.iter_mut()) {
                *vi = mu * *vi + gi + wd * *pi;
                *pi -= lr * *vi;
            }
        }
    } else {
        for (p, g) in net.params_mut().into_iter().zip(&slices) {
            apply_sgd(p, g, lr, wd);
        }
    }
    opt.advance();
    Ok(())
}

/// Plain decayed SGD update on a flat parameter buffer.
pub fn apply_sgd(params: &mut [f64], grads: &[f64], lr: f64, weight_decay: f64) {
    for (p, g) in params.iter_mut().zip(grads) {
        *p -= lr * (g + weight_decay * *p);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_linear(d: usize) -> EmbeddingNet {
        let mut l = Dense::zeros(d, d);
        for i in 0..d {
            l.weight[i * d + i] = 1.0;
        }
        EmbeddingNet::from_layers(Layout::linear(d, d), vec![l]).unwrap()
    }

    #[test]
    fn identity_forward() {
        let net = identity_linear(3);
        let x = FeatureMatrix::from_rows(3, [[1.0, -2.0, 0.5], [0.0, 4.0, 1.0]]).unwrap();
        assert_eq!(net.embed(&x).unwrap(), x);
    }

    #[test]
    fn zero_weights_give_bias() {
        let mut l = Dense::zeros(2, 3);
        l.bias = vec![0.1, -0.2, 0.3];
        let net = EmbeddingNet::from_layers(Layout::linear(2, 3), vec![l]).unwrap();
        let x = FeatureMatrix::from_rows(2, [[5.0, 6.0], [-1.0, 2.0]]).unwrap();
        let e = net.embed(&x).unwrap();
        for r in e.iter_rows() {
            assert_eq!(r, &[0.1, -0.2, 0.3]);
        }
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let net = identity_linear(3);
        let x = FeatureMatrix::zeros(2, 4);
        assert!(matches!(
            net.forward(&x),
            Err(Error::DimensionMismatch { expected: 3, found: 4 })
        ));
    }

    // straight-line re-evaluation of tanh(W1 x + b1) then W2 h + b2
    #[test]
    fn mlp_forward_matches_reevaluation() {
        let mut rng = SeededRng::new(4);
        let net = EmbeddingNet::new(Layout::mlp(5, 7, 3), &mut rng).unwrap();
        let x: Vec<f64> = (0..5).map(|_| rng.gaussian()).collect();
        let (w1, w2) = (&net.layers()[0], &net.layers()[1]);
        let mut h = [0.0; 7];
        for k in 0..7 {
            let mut s = w1.bias[k];
            for j in 0..5 {
                s += w1.weight[k * 5 + j] * x[j];
            }
            h[k] = libm::tanh(s);
        }
        let e = net
            .embed(&FeatureMatrix::from_vec(1, 5, x.clone()).unwrap())
            .unwrap();
        for k in 0..3 {
            let mut s = w2.bias[k];
            for j in 0..7 {
                s += w2.weight[k * 7 + j] * h[j];
            }
            assert!((e.get(0, k) - s).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_upstream_zero_grads() {
        let mut rng = SeededRng::new(1);
        let net = EmbeddingNet::new(Layout::mlp(4, 5, 2), &mut rng).unwrap();
        let x = FeatureMatrix::from_vec(3, 4, (0..12).map(|_| rng.gaussian()).collect()).unwrap();
        let (_, cache) = net.forward(&x).unwrap();
        let g = net.backward(&cache, &FeatureMatrix::zeros(3, 2)).unwrap();
        assert!(g.slices().iter().all(|s| s.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn linear_single_sample_outer_product() {
        let mut rng = SeededRng::new(2);
        let net = EmbeddingNet::new(Layout::linear(3, 2), &mut rng).unwrap();
        let x = FeatureMatrix::from_rows(3, [[1.0, 2.0, -1.0]]).unwrap();
        let (_, cache) = net.forward(&x).unwrap();
        let d = FeatureMatrix::from_rows(2, [[0.5, -3.0]]).unwrap();
        let g = net.backward(&cache, &d).unwrap();
        assert_eq!(g.layers[0].weight, vec![0.5, 1.0, -0.5, -3.0, -6.0, 3.0]);
        assert_eq!(g.layers[0].bias, vec![0.5, -3.0]);
    }

    #[test]
    fn backward_rejects_shape() {
        let mut rng = SeededRng::new(2);
        let net = EmbeddingNet::new(Layout::linear(3, 2), &mut rng).unwrap();
        let (_, cache) = net.forward(&FeatureMatrix::zeros(2, 3)).unwrap();
        assert!(matches!(
            net.backward(&cache, &FeatureMatrix::zeros(2, 3)),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    // weighted sum of outputs: central differences against backward
    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = SeededRng::new(8);
        let mut net = EmbeddingNet::new(Layout::mlp(4, 6, 3), &mut rng).unwrap();
        let x = FeatureMatrix::from_vec(5, 4, (0..20).map(|_| rng.gaussian()).collect()).unwrap();
        let coef = FeatureMatrix::from_vec(5, 3, (0..15).map(|_| rng.gaussian()).collect()).unwrap();
        let loss = |n: &EmbeddingNet| -> f64 {
            let e = n.embed(&x).unwrap();
            crate::numkit::dot(e.as_slice(), coef.as_slice())
        };
        let (_, cache) = net.forward(&x).unwrap();
        let g = net.backward(&cache, &coef).unwrap();
        let analytic: Vec<Vec<f64>> = g.slices().iter().map(|s| s.to_vec()).collect();
        let eps = 1e-5;
        for (pi, ga) in analytic.iter().enumerate() {
            for k in 0..ga.len() {
                let orig = net.params_mut()[pi][k];
                net.params_mut()[pi][k] = orig + eps;
                let lp = loss(&net);
                net.params_mut()[pi][k] = orig - eps;
                let lm = loss(&net);
                net.params_mut()[pi][k] = orig;
                let num = (lp - lm) / (2.0 * eps);
                let denom = num.abs().max(ga[k].abs()).max(1e-8);
                assert!((num - ga[k]).abs() / denom < 1e-6, "param {pi}[{k}]");
            }
        }
    }

    #[test]
    fn forward_has_no_side_effects() {
        let mut rng = SeededRng::new(3);
        let net = EmbeddingNet::new(Layout::mlp(3, 4, 2), &mut rng).unwrap();
        let before = net.clone();
        let _ = net.forward(&FeatureMatrix::from_rows(3, [[1.0, 2.0, 3.0]]).unwrap());
        assert_eq!(net, before);
    }

    #[test]
    fn sgd_examples() {
        let mut l = Dense::zeros(1, 1);
        l.weight[0] = 1.0;
        let mut net = EmbeddingNet::from_layers(Layout::linear(1, 1), vec![l.clone()]).unwrap();
        let mut g = ParamGrads::zeros_like(&net);
        g.layers[0].weight[0] = 2.0;

        // constant schedule at 0.1
        let mut opt = OptState::new(0.1, 0.1, 10, 0.0).unwrap();
        sgd_step(&mut net, &g, &mut opt).unwrap();
        assert!((net.layers()[0].weight[0] - 0.8).abs() < 1e-15);
        assert_eq!(opt.step, 1);

        // pure decay
        let mut net = EmbeddingNet::from_layers(Layout::linear(1, 1), vec![l.clone()]).unwrap();
        let zero = ParamGrads::zeros_like(&net);
        let mut opt = OptState::new(0.1, 0.1, 10, 0.5).unwrap();
        sgd_step(&mut net, &zero, &mut opt).unwrap();
        assert!((net.layers()[0].weight[0] - (1.0 - 0.1 * 0.5)).abs() < 1e-15);
    }

    #[test]
    fn zero_lr_leaves_params() {
        let mut rng = SeededRng::new(6);
        let mut net = EmbeddingNet::new(Layout::mlp(3, 3, 2), &mut rng).unwrap();
        let before = net.clone();
        let mut g = ParamGrads::zeros_like(&net);
        g.layers[1].weight.iter_mut().for_each(|v| *v = 1.0);
        let mut opt = OptState::new(1.0, 0.0, 1, 0.0).unwrap();
        opt.step = 1; // cosine_lr(T) = min_lr = 0
        sgd_step(&mut net, &g, &mut opt).unwrap();
        assert_eq!(net, before);
    }

    #[test]
    fn sgd_names_nonfinite_param() {
        let mut rng = SeededRng::new(6);
        let mut net = EmbeddingNet::new(Layout::mlp(3, 3, 2), &mut rng).unwrap();
        let mut g = ParamGrads::zeros_like(&net);
        g.layers[1].bias[0] = f64::NAN;
        let mut opt = OptState::new(0.1, 0.0, 10, 0.0).unwrap();
        assert_eq!(
            sgd_step(&mut net, &g, &mut opt),
            Err(Error::NonFinite {
                what: "layer1.bias".into()
            })
        );
    }

    #[test]
    fn cosine_schedule_points() {
        let mut opt = OptState::new(0.5, 0.1, 100, 0.0).unwrap();
        assert!((opt.cosine_lr().unwrap() - 0.5).abs() < 1e-15);
        opt.step = 50;
        assert!((opt.cosine_lr().unwrap() - 0.3).abs() < 1e-15);
        opt.step = 100;
        assert!((opt.cosine_lr().unwrap() - 0.1).abs() < 1e-15);
        opt.step = 101;
        assert!(opt.cosine_lr().is_err());
        assert!(OptState::new(0.5, 0.1, 0, 0.0).is_err());
    }

    #[test]
    fn momentum_accumulates() {
        let mut l = Dense::zeros(1, 1);
        l.weight[0] = 1.0;
        let mut net = EmbeddingNet::from_layers(Layout::linear(1, 1), vec![l]).unwrap();
        let mut g = ParamGrads::zeros_like(&net);
        g.layers[0].weight[0] = 1.0;
        let mut opt = OptState::new(0.1, 0.1, 10, 0.0).unwrap().with_momentum(0.9);
        sgd_step(&mut net, &g, &mut opt).unwrap();
        sgd_step(&mut net, &g, &mut opt).unwrap();
        // v1 = 1, v2 = 1.9
        assert!((net.layers()[0].weight[0] - (1.0 - 0.1 - 0.19)).abs() < 1e-14);
    }
}
