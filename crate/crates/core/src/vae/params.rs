use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use super::layers::Real;
use super::{VaeConfig, VaeError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
}

/// Placement of one named tensor inside the flat parameter buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
    pub fan_in: usize,
    pub kind: ParamKind,
}

/// Tensor layout, in buffer order: encoder convs, `fc_mu`, `fc_logvar`,
/// `fc_decode`, decoder transposed convs (innermost first).
pub fn param_layout(config: &VaeConfig) -> Vec<ParamSpec> {
    let k = config.kernel;
    let channels = config.encoder_channels();
    let flat = config.flat_features();
    let latent = config.latent_dim;
    let mut specs = Vec::new();
    let mut offset = 0;
    let mut push = |name: String, shape: Vec<usize>, fan_in: usize, kind: ParamKind| {
        let len = shape.iter().product();
        specs.push(ParamSpec {
            name,
            shape,
            offset,
            len,
            fan_in,
            kind,
        });
        offset += len;
    };
    for i in 0..config.depth() {
        let (cin, cout) = (channels[i], channels[i + 1]);
        push(
            format!("encoder.{i}.weight"),
            vec![cout, cin, k, k],
            cin * k * k,
            ParamKind::Weight,
        );
        push(format!("encoder.{i}.bias"), vec![cout], cin * k * k, ParamKind::Bias);
    }
    for head in ["fc_mu", "fc_logvar"] {
        push(format!("{head}.weight"), vec![latent, flat], flat, ParamKind::Weight);
        push(format!("{head}.bias"), vec![latent], flat, ParamKind::Bias);
    }
    push("fc_decode.weight".into(), vec![flat, latent], latent, ParamKind::Weight);
    push("fc_decode.bias".into(), vec![flat], latent, ParamKind::Bias);
    for (i, (cin, cout, _, _)) in config.decoder_stages().into_iter().enumerate() {
        push(
            format!("decoder.{i}.weight"),
            vec![cin, cout, k, k],
            cin * k * k,
            ParamKind::Weight,
        );
        push(format!("decoder.{i}.bias"), vec![cout], cin * k * k, ParamKind::Bias);
    }
    specs
}

/// All trainable tensors of one network, stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct VaeParams<T> {
    config: VaeConfig,
    layout: Vec<ParamSpec>,
    data: Vec<T>,
}

impl<T: Real> VaeParams<T> {
    pub fn zeros(config: &VaeConfig) -> Result<Self, VaeError> {
        config.validate()?;
        let layout = param_layout(config);
        let total = layout.last().map_or(0, |s| s.offset + s.len);
        Ok(VaeParams {
            config: config.clone(),
            layout,
            data: vec![T::zero(); total],
        })
    }

    /// Weights uniform in `±sqrt(1 / fan_in)`, biases zero; deterministic in
    /// `seed`.
    pub fn init(config: &VaeConfig, seed: u64) -> Result<Self, VaeError> {
        let mut params = Self::zeros(config)?;
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        for spec in &params.layout {
            if spec.kind == ParamKind::Bias {
                continue;
            }
            let bound = (1.0 / spec.fan_in as f64).sqrt();
            for v in &mut params.data[spec.offset..spec.offset + spec.len] {
                *v = T::from_f64(rng.gen_range(-bound..bound));
            }
        }
        Ok(params)
    }

    /// Rebuilds parameters from a flat buffer in [`param_layout`] order.
    pub fn from_flat(config: &VaeConfig, data: Vec<T>) -> Result<Self, VaeError> {
        let mut params = Self::zeros(config)?;
        if data.len() != params.data.len() {
            return Err(VaeError::ShapeMismatch {
                expected: params.data.len(),
                actual: data.len(),
            });
        }
        params.data = data;
        Ok(params)
    }

    pub fn config(&self) -> &VaeConfig {
        &self.config
    }

    pub fn layout(&self) -> &[ParamSpec] {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn tensor(&self, index: usize) -> &[T] {
        let s = &self.layout[index];
        &self.data[s.offset..s.offset + s.len]
    }

    pub fn tensor_by_name(&self, name: &str) -> Option<&[T]> {
        self.layout.iter().position(|s| s.name == name).map(|i| self.tensor(i))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Same parameters converted to another precision.
    pub fn cast<U: Real>(&self) -> VaeParams<U> {
        VaeParams {
            config: self.config.clone(),
            layout: self.layout.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }
}

/// Layout indices of each tensor role.
pub(crate) struct Slots {
    depth: usize,
}

impl Slots {
    pub fn new(config: &VaeConfig) -> Self {
        Slots { depth: config.depth() }
    }

    pub fn encoder(&self, i: usize) -> (usize, usize) {
        (2 * i, 2 * i + 1)
    }

    pub fn fc_mu(&self) -> (usize, usize) {
        (2 * self.depth, 2 * self.depth + 1)
    }

    pub fn fc_logvar(&self) -> (usize, usize) {
        (2 * self.depth + 2, 2 * self.depth + 3)
    }

    pub fn fc_decode(&self) -> (usize, usize) {
        (2 * self.depth + 4, 2 * self.depth + 5)
    }

    pub fn decoder(&self, i: usize) -> (usize, usize) {
        (2 * self.depth + 6 + 2 * i, 2 * self.depth + 7 + 2 * i)
    }
}
