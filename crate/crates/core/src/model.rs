//! Context-encoder generator and discriminator.
//!
//! Both networks are built from the same six-unit convolutional stack: each
//! unit is a 3×3 convolution and a 2×2 convolution, each followed by ELU, and
//! every unit except the last ends in 2×2 max pooling. The generator mirrors
//! the stack into a decoder (nearest-neighbor upsampling instead of pooling)
//! and the discriminator ends in a global-average-pool/affine/sigmoid head.

use crate::error::{Error, Result};
use crate::layers::{self, init_params, Bound, Init, Mode, ParamDecl, ParamSet};
use crate::ops::Padding;
use crate::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor};

pub const UNITS: usize = 6;
/// Spatial reduction of the encoder: five 2× poolings.
pub const DOWNSAMPLE: usize = 32;
const ELU_ALPHA: f64 = 1.0;
const UNIT_KERNELS: [usize; 2] = [3, 2];

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub image_size: usize,
    pub channels: [usize; UNITS],
    pub in_channels: usize,
    pub include_mask_channel: bool,
    pub use_batch_norm: bool,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            image_size: 128,
            channels: [32, 64, 128, 256, 256, 256],
            in_channels: 3,
            include_mask_channel: false,
            use_batch_norm: false,
        }
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 || !self.image_size.is_multiple_of(DOWNSAMPLE) {
            return Err(Error::Config(format!(
                "image size {} must be a positive multiple of {DOWNSAMPLE}",
                self.image_size
            )));
        }
        if self.channels.contains(&0) {
            return Err(Error::Config(format!("channel widths must be positive, got {:?}", self.channels)));
        }
        if self.in_channels == 0 {
            return Err(Error::Config("in_channels must be positive".into()));
        }
        Ok(())
    }

    /// Side of the square spatial grid at the bottleneck.
    pub fn latent_size(&self) -> usize {
        self.image_size / DOWNSAMPLE
    }

    pub fn latent_dim(&self) -> usize {
        self.channels[UNITS - 1] * self.latent_size().pow(2)
    }

    /// Channels fed to the generator: the image plus an optional mask plane.
    pub fn generator_in_channels(&self) -> usize {
        self.in_channels + usize::from(self.include_mask_channel)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Generator,
    Discriminator,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Generator => "generator",
            Role::Discriminator => "discriminator",
        }
    }
}

/// Unit prefixes and `(in, out)` widths, in forward order.
fn unit_plan(spec: &ModelSpec, role: Role) -> Vec<(String, usize, usize)> {
    let c = spec.channels;
    match role {
        Role::Discriminator => (0..UNITS)
            .map(|i| (format!("unit{}", i + 1), if i == 0 { spec.in_channels } else { c[i - 1] }, c[i]))
            .collect(),
        Role::Generator => {
            let enc = (0..UNITS).map(|i| {
                let cin = if i == 0 { spec.generator_in_channels() } else { c[i - 1] };
                (format!("enc.unit{}", i + 1), cin, c[i])
            });
            let dec = (0..UNITS).map(|j| {
                let cin = if j == 0 { c[UNITS - 1] } else { c[UNITS - j] };
                (format!("dec.unit{}", j + 1), cin, c[UNITS - 1 - j])
            });
            enc.chain(dec).collect()
        }
    }
}

fn conv_decls(out: &mut Vec<ParamDecl>, prefix: &str, cin: usize, cout: usize, k: usize) {
    out.push(ParamDecl::new(format!("{prefix}.weight"), [cout, cin, k, k], Init::HeNormal { fan_in: cin * k * k }));
    out.push(ParamDecl::new(format!("{prefix}.bias"), [cout], Init::Zeros));
}

/// Every trainable tensor of a network, with shapes and initializers.
pub fn param_decls(spec: &ModelSpec, role: Role) -> Vec<ParamDecl> {
    let mut out = Vec::new();
    for (prefix, cin, cout) in unit_plan(spec, role) {
        let mut width = cin;
        for (j, k) in UNIT_KERNELS.iter().enumerate() {
            conv_decls(&mut out, &format!("{prefix}.conv{}", j + 1), width, cout, *k);
            if spec.use_batch_norm {
                out.push(ParamDecl::new(format!("{prefix}.bn{}.gamma", j + 1), [cout], Init::Ones));
                out.push(ParamDecl::new(format!("{prefix}.bn{}.beta", j + 1), [cout], Init::Zeros));
            }
            width = cout;
        }
    }
    match role {
        Role::Generator => conv_decls(&mut out, "dec.out", spec.channels[0], spec.in_channels, 3),
        Role::Discriminator => {
            let c = spec.channels[UNITS - 1];
            out.push(ParamDecl::new("head.weight", [c, 1], Init::HeNormal { fan_in: c }));
            out.push(ParamDecl::new("head.bias", [1], Init::Zeros));
        }
    }
    out
}

fn buffer_decls(spec: &ModelSpec, role: Role) -> Vec<ParamDecl> {
    if !spec.use_batch_norm {
        return Vec::new();
    }
    let mut out = Vec::new();
    for (prefix, _, cout) in unit_plan(spec, role) {
        for j in 1..=UNIT_KERNELS.len() {
            out.push(ParamDecl::new(format!("{prefix}.bn{j}.running_mean"), [cout], Init::Zeros));
            out.push(ParamDecl::new(format!("{prefix}.bn{j}.running_var"), [cout], Init::Ones));
        }
    }
    out
}

/// Exact number of trainable scalars of a network.
pub fn count_params(spec: &ModelSpec, role: Role) -> usize {
    param_decls(spec, role).iter().map(ParamDecl::numel).sum()
}

/// Output of [`Network::forward`].
pub struct Forward<T> {
    pub output: Var,
    /// New running statistics for batch-norm layers, keyed by buffer name.
    pub stat_updates: Vec<(String, Vec<T>)>,
}

/// A generator or discriminator: architecture, parameters and batch-norm
/// running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct Network<T: Scalar = f32> {
    spec: ModelSpec,
    role: Role,
    pub params: ParamSet<T>,
    pub buffers: ParamSet<T>,
}

pub fn build_generator<T: Scalar>(spec: &ModelSpec, seed: u64) -> Result<Network<T>> {
    Network::build(spec, Role::Generator, seed)
}

pub fn build_discriminator<T: Scalar>(spec: &ModelSpec, seed: u64) -> Result<Network<T>> {
    Network::build(spec, Role::Discriminator, seed)
}

impl<T: Scalar> Network<T> {
    pub fn build(spec: &ModelSpec, role: Role, seed: u64) -> Result<Self> {
        spec.validate()?;
        let params = init_params(&param_decls(spec, role), seed)?;
        let buffers = init_params(&buffer_decls(spec, role), 0)?;
        Ok(Network { spec: spec.clone(), role, params, buffers })
    }

    /// Reassemble a network from stored tensors, checking names and shapes.
    pub fn from_parts(spec: &ModelSpec, role: Role, params: ParamSet<T>, buffers: ParamSet<T>) -> Result<Self> {
        spec.validate()?;
        for (decls, set, what) in [
            (param_decls(spec, role), &params, "parameter"),
            (buffer_decls(spec, role), &buffers, "buffer"),
        ] {
            if decls.len() != set.len() {
                return Err(Error::Config(format!(
                    "{} expects {} {what} tensors, found {}",
                    role.as_str(),
                    decls.len(),
                    set.len()
                )));
            }
            for d in &decls {
                match set.get(&d.name) {
                    Some(t) if t.shape() == d.shape.as_slice() => {}
                    Some(t) => {
                        return Err(Error::Config(format!(
                            "{what} {} has shape {:?}, expected {:?}",
                            d.name,
                            t.shape(),
                            d.shape
                        )))
                    }
                    None => return Err(Error::Config(format!("missing {what} {}", d.name))),
                }
            }
        }
        Ok(Network { spec: spec.clone(), role, params, buffers })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> Bound {
        self.params.bind(tape, trainable)
    }

    pub fn apply_stat_updates(&mut self, updates: Vec<(String, Vec<T>)>) -> Result<()> {
        for (name, data) in updates {
            let buf = self
                .buffers
                .get_mut(&name)
                .ok_or_else(|| Error::Contract(format!("unknown buffer {name}")))?;
            buf.data_mut().copy_from_slice(&data);
        }
        Ok(())
    }

    pub fn forward(&self, tape: &mut Tape<T>, bound: &Bound, input: Var, mode: Mode) -> Result<Forward<T>> {
        let mut updates = Vec::new();
        let plan = unit_plan(&self.spec, self.role);
        let output = match self.role {
            Role::Discriminator => {
                let mut h = input;
                for (i, (prefix, _, _)) in plan.iter().enumerate() {
                    h = self.unit(tape, bound, prefix, h, mode, &mut updates)?;
                    if i + 1 < UNITS {
                        h = tape.maxpool2d(h)?;
                    }
                }
                let pooled = tape.global_avg_pool(h)?;
                let logit = tape.affine(pooled, bound.var("head.weight")?, bound.var("head.bias")?)?;
                tape.sigmoid(logit)?
            }
            Role::Generator => {
                let (encoder, decoder) = plan.split_at(UNITS);
                let mut h = input;
                for (i, (prefix, _, _)) in encoder.iter().enumerate() {
                    h = self.unit(tape, bound, prefix, h, mode, &mut updates)?;
                    if i + 1 < UNITS {
                        h = tape.maxpool2d(h)?;
                    }
                }
                let (n, c, s, _) = tape.value(h).dims4()?;
                let latent = tape.reshape(h, &[n, c * s * s])?;
                h = tape.reshape(latent, &[n, c, s, s])?;
                for (j, (prefix, _, _)) in decoder.iter().enumerate() {
                    if j > 0 {
                        h = tape.upsample2x(h)?;
                    }
                    h = self.unit(tape, bound, prefix, h, mode, &mut updates)?;
                }
                let out = tape.conv2d(h, bound.var("dec.out.weight")?, bound.var("dec.out.bias")?, 1, 1)?;
                tape.sigmoid(out)?
            }
        };
        Ok(Forward { output, stat_updates: updates })
    }

    fn unit(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        prefix: &str,
        input: Var,
        mode: Mode,
        updates: &mut Vec<(String, Vec<T>)>,
    ) -> Result<Var> {
        let mut h = input;
        for (j, &k) in UNIT_KERNELS.iter().enumerate() {
            let conv = format!("{prefix}.conv{}", j + 1);
            let w = bound.var(&format!("{conv}.weight"))?;
            let b = bound.var(&format!("{conv}.bias"))?;
            h = tape.conv2d_padded(h, w, b, 1, Padding::same(k))?;
            if self.spec.use_batch_norm {
                let bn = format!("{prefix}.bn{}", j + 1);
                let (mean_name, var_name) = (format!("{bn}.running_mean"), format!("{bn}.running_var"));
                let missing = |n: &str| Error::Contract(format!("missing buffer {n}"));
                let mean = self.buffers.get(&mean_name).ok_or_else(|| missing(&mean_name))?;
                let var = self.buffers.get(&var_name).ok_or_else(|| missing(&var_name))?;
                let gamma = bound.var(&format!("{bn}.gamma"))?;
                let beta = bound.var(&format!("{bn}.beta"))?;
                let (y, update) = layers::batch_norm(tape, h, gamma, beta, mean.data(), var.data(), mode)?;
                if let Some((m, v)) = update {
                    updates.push((mean_name, m));
                    updates.push((var_name, v));
                }
                h = y;
            }
            h = tape.elu(h, ELU_ALPHA)?;
        }
        Ok(h)
    }

    /// Inference-mode forward pass on a concrete batch.
    pub fn infer(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let x = tape.constant(input.clone());
        let fwd = self.forward(&mut tape, &bound, x, Mode::Eval)?;
        Ok(tape.value(fwd.output).clone())
    }
}
