//! Network definitions for the projector, mapping network, neural decoder
//! and discriminator, plus the named parameter store they share.

mod spec;
mod store;

pub use spec::{Activation, Layer, NetworkSpec};
pub use store::{BoundParams, ParameterStore};

use crate::numcore::{grad_check_report, GradCheckReport, NumError, Tape, Tensor, Var};
use crate::rng::SplitMix64;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid network spec at layer {layer}: {reason}")]
    Spec { layer: usize, reason: String },
    #[error("input width {got} does not match network input {expected}")]
    Width { expected: usize, got: usize },
    #[error(
        "input resolution {got}x{got} does not match network resolution {expected}x{expected}; \
         resize with imaging::resize_bilinear first"
    )]
    Resolution { expected: usize, got: usize },
    #[error("missing parameter {0}")]
    MissingParam(String),
    #[error("duplicate parameter name {0}")]
    DuplicateParam(String),
    #[error(transparent)]
    Num(#[from] NumError),
}

/// Default mapping network F: z (16) -> w (8).
pub const Z_DIM: usize = 16;
pub const W_DIM: usize = 8;
pub const RESOLUTION: usize = 32;

/// Architecture and weights together.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub spec: NetworkSpec,
    pub params: ParameterStore,
}

/// Output of a forward pass: final activation and the post-activation
/// output of each conv layer, in order.
#[derive(Clone, Debug)]
pub struct Forward {
    pub output: Var,
    pub taps: Vec<Var>,
}

/// Glorot-uniform weights `U(-s, s)`, `s = sqrt(6 / (fan_in + fan_out))`,
/// zero biases, drawn from `SplitMix64::new(seed)` in layer order.
pub fn init_network(spec: &NetworkSpec, seed: u64) -> Result<ParameterStore, ModelError> {
    spec.validate()?;
    let mut rng = SplitMix64::new(seed);
    let mut store = ParameterStore::new();
    for (i, layer) in spec.layers.iter().enumerate() {
        let (wshape, fan_in, fan_out, bias_len) = match *layer {
            Layer::Dense { inputs, outputs } => (vec![inputs, outputs], inputs, outputs, outputs),
            Layer::Conv { in_channels, out_channels, .. } => (
                vec![out_channels, in_channels, 3, 3],
                in_channels * 9,
                out_channels * 9,
                out_channels,
            ),
            _ => continue,
        };
        let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let n: usize = wshape.iter().product();
        let w = (0..n).map(|_| rng.uniform(-s, s)).collect();
        store.insert(format!("l{i}.weight"), Tensor::new(wshape, w)?)?;
        store.insert(format!("l{i}.bias"), Tensor::zeros(&[bias_len]))?;
    }
    Ok(store)
}

impl Network {
    pub fn new(spec: NetworkSpec, seed: u64) -> Result<Self, ModelError> {
        let params = init_network(&spec, seed)?;
        Ok(Self { spec, params })
    }

    /// Records the forward pass on `tape` using already bound parameters.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        x: Var,
    ) -> Result<Forward, ModelError> {
        forward(&self.spec, tape, bound, x)
    }

    /// Forward pass with every parameter held constant.
    pub fn eval(&self, x: &Tensor) -> Result<Tensor, ModelError> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let out = self.forward(&mut tape, &bound, xv)?.output;
        Ok(tape.value(out).clone())
    }
}

/// Generic forward pass over a validated spec. The batch dimension is
/// leading and is not part of `spec.input_shape`.
pub fn forward(
    spec: &NetworkSpec,
    tape: &mut Tape,
    bound: &BoundParams,
    x: Var,
) -> Result<Forward, ModelError> {
    check_input(spec, tape.shape(x))?;
    let mut h = x;
    let mut taps = Vec::new();
    let mut after_conv = false;
    for (i, layer) in spec.layers.iter().enumerate() {
        match *layer {
            Layer::Dense { .. } => {
                let w = bound.get(&format!("l{i}.weight"))?;
                let b = bound.get(&format!("l{i}.bias"))?;
                let y = tape.matmul(h, w)?;
                h = tape.bias_add(y, b)?;
                after_conv = false;
            }
            Layer::Conv { stride, .. } => {
                let w = bound.get(&format!("l{i}.weight"))?;
                let b = bound.get(&format!("l{i}.bias"))?;
                let y = tape.conv2d(h, w, stride)?;
                h = tape.bias_add(y, b)?;
                after_conv = true;
            }
            Layer::Activation(a) => {
                h = match a {
                    Activation::Relu => tape.relu(h),
                    Activation::Tanh => tape.tanh(h),
                    Activation::Sigmoid => tape.sigmoid(h),
                };
                if after_conv {
                    taps.push(h);
                    after_conv = false;
                }
            }
            Layer::Flatten => {
                let s = tape.shape(h);
                let flat = [s[0], s[1..].iter().product()];
                h = tape.reshape(h, &flat)?;
            }
            Layer::AvgPool => h = tape.spatial_mean(h)?,
        }
    }
    Ok(Forward { output: h, taps })
}

fn check_input(spec: &NetworkSpec, shape: &[usize]) -> Result<(), ModelError> {
    let want = &spec.input_shape;
    if shape.len() == want.len() + 1 && &shape[1..] == want.as_slice() {
        return Ok(());
    }
    match (want.as_slice(), shape) {
        (&[d], &[_, got]) => Err(ModelError::Width { expected: d, got }),
        (&[_, h, _], &[_, _, got, _]) => Err(ModelError::Resolution { expected: h, got }),
        _ => Err(NumError::shape("network input", want, shape).into()),
    }
}

/// F: dense/tanh alternation on `[batch, z_dim]`.
pub fn mlp_forward(
    net: &Network,
    tape: &mut Tape,
    bound: &BoundParams,
    x: Var,
) -> Result<Var, ModelError> {
    Ok(net.forward(tape, bound, x)?.output)
}

/// P: images `[batch, 1, res, res]` to latent estimates `[batch, w_dim]`.
pub fn projector_forward(
    net: &Network,
    tape: &mut Tape,
    bound: &BoundParams,
    images: Var,
) -> Result<Var, ModelError> {
    Ok(net.forward(tape, bound, images)?.output)
}

/// D: raw logits `[batch, 1]` and the post-relu output of every conv layer.
pub fn discriminator_forward(
    net: &Network,
    tape: &mut Tape,
    bound: &BoundParams,
    images: Var,
) -> Result<(Var, Vec<Var>), ModelError> {
    let f = net.forward(tape, bound, images)?;
    Ok((f.output, f.taps))
}

/// Finite-difference step for the projector loss check. At the default step
/// the roundoff of an O(1) loss, about 1e-16 / eps, swamps weight gradients
/// near 1e-8 that the tail of the dense layer produces.
pub const PROJECTOR_CHECK_EPS: f64 = 1e-4;

/// Gradient check of the latent loss `mean((P(x) - w)^2)` w.r.t. every
/// projector parameter tensor, on random inputs drawn from `seed`.
pub fn projector_loss_grad_check(
    res: usize,
    w_dim: usize,
    seed: u64,
) -> Result<Vec<(String, GradCheckReport)>, ModelError> {
    let mut rng = SplitMix64::new(seed);
    let p = Network::new(NetworkSpec::projector(res, w_dim), rng.next_u64())?;
    let n = 2 * res * res;
    let x = Tensor::new(vec![2, 1, res, res], (0..n).map(|_| rng.next_f64()).collect())?;
    let target = Tensor::new(vec![2, w_dim], (0..2 * w_dim).map(|_| rng.normal()).collect())?;
    let mut out = Vec::new();
    for name in p.params.names() {
        let report = grad_check_report(
            |tape: &mut Tape, v| -> Result<Var, ModelError> {
                let mut bound = p.params.bind(tape, false);
                bound.replace(&name, v);
                let xv = tape.constant(x.clone());
                let pred = projector_forward(&p, tape, &bound, xv)?;
                let t = tape.constant(target.clone());
                let d = tape.sub(pred, t)?;
                let sq = tape.square(d);
                Ok(tape.mean(sq))
            },
            p.params.get(&name).expect("listed name"),
            PROJECTOR_CHECK_EPS,
        )?;
        out.push((name, report));
    }
    Ok(out)
}
