//! Frozen generator backends and the latent sampling that feeds them.

mod image;
pub mod renderer;

pub use image::{Image, ImageError};
pub use renderer::{FaceParams, Style};

use crate::models::{BoundParams, ModelError, Network, NetworkSpec};
use crate::numcore::{NumError, Tape, Tensor, Var};
use crate::rng::SplitMix64;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GenError {
    #[error("latent has {got} entries, expected {expected}")]
    Dim { expected: usize, got: usize },
    #[error("expected a {expected:?} latent, got {got:?}")]
    Kind { expected: LatentKind, got: LatentKind },
    #[error("the OOD variant can only be derived from the procedural backend")]
    NotProcedural,
    #[error("empty latent batch")]
    EmptyBatch,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Image(#[from] ImageError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LatentKind {
    /// Entangled input of the mapping network.
    Z,
    /// Disentangled generator input.
    W,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentVector {
    kind: LatentKind,
    values: Vec<f64>,
}

impl LatentVector {
    pub fn new(kind: LatentKind, values: Vec<f64>) -> Self {
        Self { kind, values }
    }

    pub fn kind(&self) -> LatentKind {
        self.kind
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Stacks same-kind latents into `[n, dim]`.
    pub fn batch_tensor(batch: &[LatentVector]) -> Result<Tensor, GenError> {
        let first = batch.first().ok_or(GenError::EmptyBatch)?;
        let mut data = Vec::with_capacity(batch.len() * first.dim());
        for l in batch {
            if l.dim() != first.dim() {
                return Err(GenError::Dim { expected: first.dim(), got: l.dim() });
            }
            if l.kind != first.kind {
                return Err(GenError::Kind { expected: first.kind, got: l.kind });
            }
            data.extend_from_slice(&l.values);
        }
        Ok(Tensor::new(vec![batch.len(), first.dim()], data)?)
    }

    pub fn from_batch_tensor(kind: LatentKind, t: &Tensor) -> Vec<LatentVector> {
        let n = t.shape()[0];
        (0..n).map(|i| LatentVector::new(kind, t.row(i).to_vec())).collect()
    }
}

impl AsRef<[f64]> for LatentVector {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

/// `count` standard-normal latents of dimension `z_dim`.
pub fn sample_z(rng: &mut SplitMix64, count: usize, z_dim: usize) -> Vec<LatentVector> {
    (0..count)
        .map(|_| LatentVector::new(LatentKind::Z, (0..z_dim).map(|_| rng.normal()).collect()))
        .collect()
}

/// The mapping network F. The constant variant ignores z entirely.
#[derive(Clone, Debug, PartialEq)]
pub enum Mapping {
    Mlp(Network),
    Constant(Vec<f64>),
}

impl Mapping {
    /// Default F: dense(z -> 32) tanh dense(32 -> w), zero biases.
    pub fn mlp(z_dim: usize, w_dim: usize, seed: u64) -> Result<Self, GenError> {
        Ok(Mapping::Mlp(Network::new(NetworkSpec::mapping(z_dim, w_dim), seed)?))
    }

    pub fn z_dim(&self) -> Option<usize> {
        match self {
            Mapping::Mlp(n) => Some(n.spec.input_shape[0]),
            Mapping::Constant(_) => None,
        }
    }

    pub fn checksum(&self) -> u64 {
        match self {
            Mapping::Mlp(n) => n.params.checksum(),
            Mapping::Constant(w) => w.iter().fold(0u64, |h, v| h.rotate_left(7) ^ v.to_bits()),
        }
    }
}

/// `w = F(z)` for each latent in the batch.
pub fn map_f(f: &Mapping, z: &[LatentVector]) -> Result<Vec<LatentVector>, GenError> {
    if let Some(l) = z.iter().find(|l| l.kind != LatentKind::Z) {
        return Err(GenError::Kind { expected: LatentKind::Z, got: l.kind });
    }
    match f {
        Mapping::Constant(w) => Ok(z.iter().map(|_| LatentVector::new(LatentKind::W, w.clone())).collect()),
        Mapping::Mlp(net) => {
            let expected = net.spec.input_shape[0];
            if let Some(l) = z.iter().find(|l| l.dim() != expected) {
                return Err(GenError::Dim { expected, got: l.dim() });
            }
            let out = net.eval(&LatentVector::batch_tensor(z)?)?;
            Ok(LatentVector::from_batch_tensor(LatentKind::W, &out))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Backend {
    Procedural,
    ProceduralOod,
    NeuralDecoder(Network),
}

/// A frozen image generator G: w -> image. Nothing mutates a generator
/// after construction; a trained decoder is a new generator.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    backend: Backend,
    resolution: usize,
    w_dim: usize,
}

impl Generator {
    pub fn procedural(resolution: usize) -> Self {
        Self { backend: Backend::Procedural, resolution, w_dim: renderer::PARAM_RANGES.len() }
    }

    /// Random-init decoder dense(w -> 64) tanh dense(64 -> res^2) with
    /// pixels `sigmoid(2x) = (tanh(x) + 1) / 2`.
    pub fn neural_decoder(w_dim: usize, resolution: usize, seed: u64) -> Result<Self, GenError> {
        let net = Network::new(NetworkSpec::decoder(w_dim, resolution), seed)?;
        Ok(Self { backend: Backend::NeuralDecoder(net), resolution, w_dim })
    }

    /// Same decoder architecture with replacement weights.
    pub fn with_decoder_params(&self, params: crate::models::ParameterStore) -> Result<Self, GenError> {
        match &self.backend {
            Backend::NeuralDecoder(net) => {
                let mut net = net.clone();
                for (name, t) in params.iter() {
                    net.params.set(name, t.clone())?;
                }
                Ok(Self { backend: Backend::NeuralDecoder(net), ..self.clone() })
            }
            _ => Err(ModelError::MissingParam("generator has no decoder".into()).into()),
        }
    }

    /// Sharper edges, a superellipse face and a background ramp; same
    /// latent-to-geometry mapping.
    pub fn make_ood_variant(&self) -> Result<Self, GenError> {
        match self.backend {
            Backend::Procedural => Ok(Self { backend: Backend::ProceduralOod, ..self.clone() }),
            _ => Err(GenError::NotProcedural),
        }
    }

    pub fn backend(&self) -> &Backend {
        &self.backend
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn w_dim(&self) -> usize {
        self.w_dim
    }

    pub fn decoder(&self) -> Option<&Network> {
        match &self.backend {
            Backend::NeuralDecoder(n) => Some(n),
            _ => None,
        }
    }

    pub fn checksum(&self) -> u64 {
        let tag = match &self.backend {
            Backend::Procedural => 1,
            Backend::ProceduralOod => 2,
            Backend::NeuralDecoder(n) => n.params.checksum(),
        };
        tag ^ (self.resolution as u64).rotate_left(32) ^ self.w_dim as u64
    }

    fn style(&self) -> Option<Style> {
        match self.backend {
            Backend::Procedural => Some(Style::IN_DISTRIBUTION),
            Backend::ProceduralOod => Some(Style::OOD),
            Backend::NeuralDecoder(_) => None,
        }
    }

    /// Renders `[n, w_dim]` latents to `[n, 1, res, res]` without a tape
    /// for the procedural backends.
    pub fn render_tensor(&self, w: &Tensor) -> Result<Tensor, GenError> {
        let (n, d) = match *w.shape() {
            [n, d] => (n, d),
            _ => return Err(NumError::shape("render", w.shape(), &[0, self.w_dim]).into()),
        };
        if d != self.w_dim {
            return Err(GenError::Dim { expected: self.w_dim, got: d });
        }
        let res = self.resolution;
        match self.style() {
            Some(style) => {
                let mut data = Vec::with_capacity(n * res * res);
                for i in 0..n {
                    data.extend(renderer::render_pixels(w.row(i), res, &style));
                }
                Ok(Tensor::new(vec![n, 1, res, res], data)?)
            }
            None => {
                let mut tape = Tape::new();
                let wv = tape.constant(w.clone());
                let out = self.render_taped(&mut tape, wv, None)?;
                Ok(tape.value(out).clone())
            }
        }
    }

    /// Differentiable rendering: `w` is `[n, w_dim]`, output `[n, 1, res, res]`.
    /// `decoder` supplies bound decoder weights when G itself is trained;
    /// otherwise the frozen weights are recorded as constants.
    pub fn render_taped(
        &self,
        tape: &mut Tape,
        w: Var,
        decoder: Option<&BoundParams>,
    ) -> Result<Var, GenError> {
        let n = tape.shape(w)[0];
        let res = self.resolution;
        let flat = match &self.backend {
            Backend::NeuralDecoder(net) => {
                let owned;
                let bound = match decoder {
                    Some(b) => b,
                    None => {
                        owned = net.params.bind(tape, false);
                        &owned
                    }
                };
                let x = crate::models::mlp_forward(net, tape, bound, w)?;
                let x = tape.mul_const(x, 2.0);
                tape.sigmoid(x)
            }
            _ => {
                let style = self.style().expect("procedural style");
                let d = tape.shape(w)[1];
                if d != self.w_dim {
                    return Err(GenError::Dim { expected: self.w_dim, got: d });
                }
                renderer::render_taped(tape, w, res, &style)?
            }
        };
        Ok(tape.reshape(flat, &[n, 1, res, res])?)
    }

    pub fn render(&self, w: &[LatentVector]) -> Result<Vec<Image>, GenError> {
        if let Some(l) = w.iter().find(|l| l.kind != LatentKind::W) {
            return Err(GenError::Kind { expected: LatentKind::W, got: l.kind });
        }
        let t = self.render_tensor(&LatentVector::batch_tensor(w)?)?;
        Ok(Image::from_batch_tensor(&t)?)
    }
}

/// `(w, G(w))` with `w = F(z)`, order preserved.
pub fn generate(
    g: &Generator,
    f: &Mapping,
    z: &[LatentVector],
) -> Result<(Vec<LatentVector>, Vec<Image>), GenError> {
    let w = map_f(f, z)?;
    let images = g.render(&w)?;
    Ok((w, images))
}
