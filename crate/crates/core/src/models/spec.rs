use super::ModelError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layer {
    Dense { inputs: usize, outputs: usize },
    /// 3x3 kernel, zero padding 1.
    Conv { in_channels: usize, out_channels: usize, stride: usize },
    Activation(Activation),
    Flatten,
    /// Global average over spatial axes.
    AvgPool,
}

/// Layer list with per-sample input and output shapes (batch axis excluded).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkSpec {
    pub input_shape: Vec<usize>,
    pub layers: Vec<Layer>,
    pub output_shape: Vec<usize>,
}

impl NetworkSpec {
    /// Dense layers of the given widths with `act` between them (none after
    /// the last).
    pub fn mlp(widths: &[usize], act: Activation) -> Self {
        let mut layers = Vec::new();
        for (i, pair) in widths.windows(2).enumerate() {
            if i > 0 {
                layers.push(Layer::Activation(act));
            }
            layers.push(Layer::Dense { inputs: pair[0], outputs: pair[1] });
        }
        Self {
            input_shape: vec![widths[0]],
            layers,
            output_shape: vec![*widths.last().expect("at least one width")],
        }
    }

    /// Mapping network F: dense(z -> 32) tanh dense(32 -> w).
    pub fn mapping(z_dim: usize, w_dim: usize) -> Self {
        Self::mlp(&[z_dim, 32, w_dim], Activation::Tanh)
    }

    /// Neural decoder: dense(w -> 64) tanh dense(64 -> res^2). The pixel
    /// squashing lives in the generator.
    pub fn decoder(w_dim: usize, resolution: usize) -> Self {
        Self::mlp(&[w_dim, 64, resolution * resolution], Activation::Tanh)
    }

    fn conv_stack(resolution: usize, head: usize) -> Self {
        let mut layers = Vec::new();
        let mut c = 1;
        let mut side = resolution;
        for out in [8, 16, 32] {
            layers.push(Layer::Conv { in_channels: c, out_channels: out, stride: 2 });
            layers.push(Layer::Activation(Activation::Relu));
            c = out;
            side = side.div_ceil(2);
        }
        layers.push(Layer::Flatten);
        layers.push(Layer::Dense { inputs: c * side * side, outputs: head });
        Self {
            input_shape: vec![1, resolution, resolution],
            layers,
            output_shape: vec![head],
        }
    }

    /// Projector P: three stride-2 conv/relu stages, flatten, linear head.
    pub fn projector(resolution: usize, w_dim: usize) -> Self {
        Self::conv_stack(resolution, w_dim)
    }

    /// Discriminator D: same downsampling stack with a single logit.
    pub fn discriminator(resolution: usize) -> Self {
        Self::conv_stack(resolution, 1)
    }

    /// Per-layer output shapes; fails on the first layer that does not
    /// compose with its input.
    pub fn validate(&self) -> Result<Vec<Vec<usize>>, ModelError> {
        let mut shape = self.input_shape.clone();
        let mut shapes = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let err = |reason: String| ModelError::Spec { layer: i, reason };
            shape = match (*layer, shape.as_slice()) {
                (Layer::Dense { inputs, outputs }, &[d]) if d == inputs => vec![outputs],
                (Layer::Dense { inputs, .. }, s) => {
                    return Err(err(format!("dense expects [{inputs}], got {s:?}")))
                }
                (Layer::Conv { in_channels, out_channels, stride }, &[c, h, w])
                    if c == in_channels && h >= 3 && w >= 3 && (stride == 1 || stride == 2) =>
                {
                    vec![out_channels, h.div_ceil(stride), w.div_ceil(stride)]
                }
                (Layer::Conv { in_channels, stride, .. }, s) => {
                    return Err(err(format!(
                        "conv expects [{in_channels}, h>=3, w>=3] with stride 1 or 2, \
                         got {s:?} stride {stride}"
                    )))
                }
                (Layer::Activation(_), s) => s.to_vec(),
                (Layer::Flatten, s) => vec![s.iter().product()],
                (Layer::AvgPool, &[c, _, _]) => vec![c],
                (Layer::AvgPool, s) => return Err(err(format!("avg-pool expects [c, h, w], got {s:?}"))),
            };
            shapes.push(shape.clone());
        }
        if shape != self.output_shape {
            return Err(ModelError::Spec {
                layer: self.layers.len().saturating_sub(1),
                reason: format!("declared output {:?} but layers produce {:?}", self.output_shape, shape),
            });
        }
        Ok(shapes)
    }
}
