//! Feed-forward encoder producing continuous codes in `[-1, 1]^K`.
//!
//! A stack of dense layers with ReLU or tanh hidden activations, followed by
//! a `K`-unit hash layer squashed by tanh. Backpropagation is written out by
//! hand; parameters are `f64`.
//!
//! Checkpoint format (`PHMD`): magic, `u32` input dim, `u32` hidden layer
//! count, one `u32` per hidden width, `u32` code bits, `u8` activation
//! (0 = relu, 1 = tanh), then every layer's weights (row-major, out x in)
//! followed by its biases as little-endian `f64`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bytes::{put_u32, ByteReader};
use crate::error::{Error, Result};
use crate::loss::CodeBatch;

pub const MODEL_MAGIC: &[u8; 4] = b"PHMD";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation output.
    fn slope_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub code_bits: usize,
    pub activation: Activation,
}

impl EncoderSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidConfig("input dimension must be >= 1".into()));
        }
        if self.code_bits == 0 {
            return Err(Error::InvalidConfig("code bits must be >= 1".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::InvalidConfig("hidden widths must be >= 1".into()));
        }
        Ok(())
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(self.input_dim);
        w.extend_from_slice(&self.hidden);
        w.push(self.code_bits);
        w
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs x inputs`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn affine(&self, x: &[f64], rows: usize) -> Vec<f64> {
        let mut out = vec![0.0; rows * self.outputs];
        for r in 0..rows {
            let xr = &x[r * self.inputs..(r + 1) * self.inputs];
            let or = &mut out[r * self.outputs..(r + 1) * self.outputs];
            for (o, (wrow, b)) in or
                .iter_mut()
                .zip(self.weights.chunks_exact(self.inputs).zip(&self.bias))
            {
                *o = b + wrow.iter().zip(xr).map(|(w, x)| w * x).sum::<f64>();
            }
        }
        out
    }
}

/// Parameter-shaped buffers, used both for gradients and momentum.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

impl Gradients {
    fn zeros_like(encoder: &Encoder) -> Self {
        Self {
            layers: encoder
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }
}

/// Activations kept from the forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    rows: usize,
    /// `outputs[0]` is the input; `outputs[l + 1]` the output of layer `l`.
    outputs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    spec: EncoderSpec,
    layers: Vec<Dense>,
}

/// Builds an encoder with weights and biases drawn from
/// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, deterministic in `seed`.
pub fn init_encoder(spec: &EncoderSpec, seed: u64) -> Result<Encoder> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let widths = spec.widths();
    let layers = widths
        .windows(2)
        .map(|w| {
            let (inputs, outputs) = (w[0], w[1]);
            let limit = 1.0 / (inputs as f64).sqrt();
            let weights = (0..inputs * outputs)
                .map(|_| rng.random_range(-limit..limit))
                .collect();
            let bias = (0..outputs).map(|_| rng.random_range(-limit..limit)).collect();
            Dense {
                inputs,
                outputs,
                weights,
                bias,
            }
        })
        .collect();
    Ok(Encoder {
        spec: spec.clone(),
        layers,
    })
}

impl Encoder {
    pub fn from_layers(spec: EncoderSpec, layers: Vec<Dense>) -> Result<Self> {
        spec.validate()?;
        let widths = spec.widths();
        if layers.len() != widths.len() - 1 {
            return Err(Error::InvalidArgument(format!(
                "expected {} layers, got {}",
                widths.len() - 1,
                layers.len()
            )));
        }
        for (l, w) in layers.iter().zip(widths.windows(2)) {
            if l.inputs != w[0]
                || l.outputs != w[1]
                || l.weights.len() != w[0] * w[1]
                || l.bias.len() != w[1]
            {
                return Err(Error::InvalidArgument("layer shape does not match spec".into()));
            }
        }
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> &EncoderSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Forward pass over a row-major `rows x input_dim` matrix.
    pub fn forward(&self, x: &[f64], rows: usize) -> Result<(CodeBatch, ForwardCache)> {
        let d = self.spec.input_dim;
        if x.len() != rows * d {
            return Err(Error::DimensionMismatch {
                expected: rows * d,
                found: x.len(),
            });
        }
        let mut outputs = Vec::with_capacity(self.layers.len() + 1);
        outputs.push(x.to_vec());
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut a = layer.affine(outputs.last().unwrap(), rows);
            let act = if l == last {
                Activation::Tanh
            } else {
                self.spec.activation
            };
            a.iter_mut().for_each(|v| *v = act.apply(*v));
            outputs.push(a);
        }
        let codes = CodeBatch::new(rows, self.spec.code_bits, outputs[last + 1].clone())?;
        Ok((codes, ForwardCache { rows, outputs }))
    }

    /// Codes only, without keeping the cache.
    pub fn encode(&self, x: &[f64], rows: usize) -> Result<CodeBatch> {
        Ok(self.forward(x, rows)?.0)
    }

    /// Parameter gradients given `dz = d objective / d z` (row-major, same
    /// shape as the codes).
    pub fn backward(&self, cache: &ForwardCache, dz: &[f64]) -> Result<Gradients> {
        let rows = cache.rows;
        let k = self.spec.code_bits;
        if dz.len() != rows * k {
            return Err(Error::DimensionMismatch {
                expected: rows * k,
                found: dz.len(),
            });
        }
        if let Some(idx) = dz.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "code gradient at row {} bit {}",
                idx / k,
                idx % k
            )));
        }
        let mut grads = Gradients::zeros_like(self);
        let last = self.layers.len() - 1;
        let mut upstream = dz.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let act = if l == last {
                Activation::Tanh
            } else {
                self.spec.activation
            };
            let out = &cache.outputs[l + 1];
            let input = &cache.outputs[l];
            // delta = upstream * act'(out)
            let delta: Vec<f64> = upstream
                .iter()
                .zip(out)
                .map(|(g, &y)| g * act.slope_from_output(y))
                .collect();
            let g = &mut grads.layers[l];
            let mut next = vec![0.0; rows * layer.inputs];
            for r in 0..rows {
                let dr = &delta[r * layer.outputs..(r + 1) * layer.outputs];
                let xr = &input[r * layer.inputs..(r + 1) * layer.inputs];
                let nr = &mut next[r * layer.inputs..(r + 1) * layer.inputs];
                for (o, &d) in dr.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    g.bias[o] += d;
                    let wrow = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    let grow = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    for i in 0..layer.inputs {
                        grow[i] += d * xr[i];
                        nr[i] += d * wrow[i];
                    }
                }
            }
            upstream = next;
        }
        Ok(grads)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + self.parameter_count() * 8);
        out.extend_from_slice(MODEL_MAGIC);
        put_u32(&mut out, self.spec.input_dim as u32);
        put_u32(&mut out, self.spec.hidden.len() as u32);
        for &h in &self.spec.hidden {
            put_u32(&mut out, h as u32);
        }
        put_u32(&mut out, self.spec.code_bits as u32);
        out.push(match self.spec.activation {
            Activation::Relu => 0,
            Activation::Tanh => 1,
        });
        for l in &self.layers {
            for v in l.weights.iter().chain(&l.bias) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.expect_magic(MODEL_MAGIC)?;
        let input_dim = r.u32("input dimension")? as usize;
        let n_hidden = r.u32("hidden layer count")? as usize;
        if n_hidden > 1024 {
            return Err(r.error(format!("implausible hidden layer count {n_hidden}")));
        }
        let hidden = (0..n_hidden)
            .map(|_| r.u32("hidden width").map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let code_bits = r.u32("code bits")? as usize;
        let act_offset = r.offset();
        let activation = match r.u8("activation")? {
            0 => Activation::Relu,
            1 => Activation::Tanh,
            other => {
                return Err(Error::Format {
                    offset: act_offset,
                    message: format!("unknown activation tag {other}"),
                })
            }
        };
        let spec = EncoderSpec {
            input_dim,
            hidden,
            code_bits,
            activation,
        };
        spec.validate()
            .map_err(|e| Error::Format { offset: act_offset, message: e.to_string() })?;
        let widths = spec.widths();
        let mut layers = Vec::with_capacity(widths.len() - 1);
        for w in widths.windows(2) {
            let (inputs, outputs) = (w[0], w[1]);
            let weights = (0..inputs * outputs)
                .map(|_| r.f64("weight"))
                .collect::<Result<Vec<_>>>()?;
            let bias = (0..outputs).map(|_| r.f64("bias")).collect::<Result<Vec<_>>>()?;
            layers.push(Dense {
                inputs,
                outputs,
                weights,
                bias,
            });
        }
        r.finish()?;
        Ok(Self { spec, layers })
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Momentum SGD with L2 weight decay on weight matrices (biases are not
/// decayed). The hash layer's learning rate is multiplied by
/// `hash_lr_multiplier`.
///
/// `v <- momentum * v + lr_layer * (g + decay * w)`, then `w <- w - v`.
#[derive(Debug, Clone)]
pub struct MomentumSgd {
    pub momentum: f64,
    pub weight_decay: f64,
    pub hash_lr_multiplier: f64,
    velocity: Gradients,
}

impl MomentumSgd {
    pub fn new(
        encoder: &Encoder,
        momentum: f64,
        weight_decay: f64,
        hash_lr_multiplier: f64,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::InvalidConfig(format!("momentum must be in [0, 1), got {momentum}")));
        }
        if weight_decay.is_nan() || weight_decay < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "weight decay must be >= 0, got {weight_decay}"
            )));
        }
        if hash_lr_multiplier.is_nan() || hash_lr_multiplier <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "hash layer lr multiplier must be > 0, got {hash_lr_multiplier}"
            )));
        }
        Ok(Self {
            momentum,
            weight_decay,
            hash_lr_multiplier,
            velocity: Gradients::zeros_like(encoder),
        })
    }

    pub fn step(&mut self, encoder: &mut Encoder, grads: &Gradients, lr: f64) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::NonFinite("parameter gradient; aborting update".into()));
        }
        if grads.layers.len() != encoder.layers.len() {
            return Err(Error::DimensionMismatch {
                expected: encoder.layers.len(),
                found: grads.layers.len(),
            });
        }
        let last = encoder.layers.len() - 1;
        for (l, (layer, (g, v))) in encoder
            .layers
            .iter_mut()
            .zip(grads.layers.iter().zip(self.velocity.layers.iter_mut()))
            .enumerate()
        {
            let layer_lr = if l == last { lr * self.hash_lr_multiplier } else { lr };
            for ((w, gw), vw) in layer.weights.iter_mut().zip(&g.weights).zip(&mut v.weights) {
                *vw = self.momentum * *vw + layer_lr * (gw + self.weight_decay * *w);
                *w -= *vw;
            }
            for ((b, gb), vb) in layer.bias.iter_mut().zip(&g.bias).zip(&mut v.bias) {
                *vb = self.momentum * *vb + layer_lr * gb;
                *b -= *vb;
            }
        }
        Ok(())
    }
}

/// Backpropagates the gradient held in `batch` and applies one update.
pub fn backward_and_step(
    encoder: &mut Encoder,
    cache: &ForwardCache,
    batch: &CodeBatch,
    optimizer: &mut MomentumSgd,
    lr: f64,
) -> Result<Gradients> {
    let grads = encoder.backward(cache, batch.grad())?;
    optimizer.step(encoder, &grads, lr)?;
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(hidden: Vec<usize>) -> EncoderSpec {
        EncoderSpec {
            input_dim: 8,
            hidden,
            code_bits: 16,
            activation: Activation::Relu,
        }
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_encoder(&spec(vec![12]), 7).unwrap();
        let b = init_encoder(&spec(vec![12]), 7).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        let c = init_encoder(&spec(vec![12]), 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_specs() {
        assert!(init_encoder(&EncoderSpec { code_bits: 0, ..spec(vec![]) }, 0).is_err());
        assert!(init_encoder(&spec(vec![4, 0]), 0).is_err());
        assert!(init_encoder(&EncoderSpec { input_dim: 0, ..spec(vec![]) }, 0).is_err());
    }

    #[test]
    fn no_hidden_layers_is_single_affine_tanh() {
        let enc = init_encoder(&spec(vec![]), 1).unwrap();
        assert_eq!(enc.layers().len(), 1);
        assert_eq!((enc.layers()[0].inputs, enc.layers()[0].outputs), (8, 16));
    }

    #[test]
    fn forward_shape_and_range() {
        let enc = init_encoder(&spec(vec![32, 16]), 3).unwrap();
        let x: Vec<f64> = (0..5 * 8).map(|i| (i as f64 * 0.37).sin() * 20.0).collect();
        let (codes, _) = enc.forward(&x, 5).unwrap();
        assert_eq!((codes.rows(), codes.bits()), (5, 16));
        assert!(codes.values().iter().all(|v| (-1.0..=1.0).contains(v)));
        assert!(matches!(
            enc.forward(&x[..39], 5),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn forward_matches_hand_computation() {
        let s = EncoderSpec {
            input_dim: 2,
            hidden: vec![],
            code_bits: 1,
            activation: Activation::Relu,
        };
        let enc = Encoder::from_layers(
            s,
            vec![Dense {
                inputs: 2,
                outputs: 1,
                weights: vec![0.5, -0.25],
                bias: vec![0.1],
            }],
        )
        .unwrap();
        let z = enc.encode(&[2.0, 4.0], 1).unwrap();
        assert!((z.values()[0] - (0.1f64).tanh()).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut enc = init_encoder(&spec(vec![6]), 2).unwrap();
        let before = enc.clone();
        let mut opt = MomentumSgd::new(&enc, 0.9, 0.0, 10.0).unwrap();
        let zero = Gradients::zeros_like(&enc);
        for _ in 0..3 {
            opt.step(&mut enc, &zero, 0.1).unwrap();
        }
        assert_eq!(enc, before);
    }

    #[test]
    fn single_step_matches_hand_update() {
        // one tanh unit: z = tanh(w x + b), objective gradient dz = 1
        let s = EncoderSpec {
            input_dim: 1,
            hidden: vec![],
            code_bits: 1,
            activation: Activation::Relu,
        };
        let mut enc = Encoder::from_layers(
            s,
            vec![Dense {
                inputs: 1,
                outputs: 1,
                weights: vec![0.5],
                bias: vec![0.2],
            }],
        )
        .unwrap();
        let (codes, cache) = enc.forward(&[2.0], 1).unwrap();
        let z = (0.5f64 * 2.0 + 0.2).tanh();
        assert_eq!(codes.values()[0], z);
        let grads = enc.backward(&cache, &[1.0]).unwrap();
        let dpre = 1.0 - z * z;
        assert!((grads.layers[0].weights[0] - dpre * 2.0).abs() < 1e-15);
        assert!((grads.layers[0].bias[0] - dpre).abs() < 1e-15);

        let (lr, decay, mult) = (0.01, 0.1, 10.0);
        let mut opt = MomentumSgd::new(&enc, 0.0, decay, mult).unwrap();
        opt.step(&mut enc, &grads, lr).unwrap();
        let w = 0.5 - lr * mult * (dpre * 2.0 + decay * 0.5);
        let b = 0.2 - lr * mult * dpre;
        assert!((enc.layers()[0].weights[0] - w).abs() < 1e-15);
        assert!((enc.layers()[0].bias[0] - b).abs() < 1e-15);
    }

    #[test]
    fn momentum_accumulates() {
        let s = EncoderSpec {
            input_dim: 1,
            hidden: vec![],
            code_bits: 1,
            activation: Activation::Relu,
        };
        let mut enc = Encoder::from_layers(
            s,
            vec![Dense { inputs: 1, outputs: 1, weights: vec![0.0], bias: vec![0.0] }],
        )
        .unwrap();
        let g = Gradients {
            layers: vec![LayerGrad { weights: vec![1.0], bias: vec![0.0] }],
        };
        let mut opt = MomentumSgd::new(&enc, 0.9, 0.0, 1.0).unwrap();
        opt.step(&mut enc, &g, 0.1).unwrap();
        opt.step(&mut enc, &g, 0.1).unwrap();
        // v1 = 0.1, v2 = 0.09 + 0.1
        assert!((enc.layers()[0].weights[0] + 0.1 + 0.19).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut enc = init_encoder(&spec(vec![]), 0).unwrap();
        let mut g = Gradients::zeros_like(&enc);
        g.layers[0].bias[3] = f64::NAN;
        let mut opt = MomentumSgd::new(&enc, 0.9, 0.0, 1.0).unwrap();
        let before = enc.clone();
        assert!(matches!(opt.step(&mut enc, &g, 0.1), Err(Error::NonFinite(_))));
        assert_eq!(enc, before);
        let (_, cache) = enc.forward(&[0.0; 8], 1).unwrap();
        let mut dz = vec![0.0; 16];
        dz[2] = f64::INFINITY;
        assert!(enc.backward(&cache, &dz).is_err());
    }

    #[test]
    fn checkpoint_round_trip_and_errors() {
        let enc = init_encoder(
            &EncoderSpec { activation: Activation::Tanh, ..spec(vec![5, 3]) },
            11,
        )
        .unwrap();
        let bytes = enc.to_bytes();
        assert_eq!(&bytes[..4], b"PHMD");
        assert_eq!(Encoder::from_bytes(&bytes).unwrap(), enc);
        let err = Encoder::from_bytes(&bytes[..bytes.len() - 1]).unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Encoder::from_bytes(&extra).is_err());
    }
}
