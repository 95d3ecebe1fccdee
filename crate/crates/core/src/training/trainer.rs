use crate::data::{apply_mask, make_mask, MaskSpec};
use crate::error::{Error, Result};
use crate::layers::{AdamState, Mode};
use crate::loss::{adversarial_loss_d, adversarial_loss_g, reconstruction_loss, total_loss, LossReport};
use crate::model::{build_discriminator, build_generator, ModelSpec, Network};
use crate::seed::{derive_seed, STREAM_DISCRIMINATOR, STREAM_GENERATOR};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

use super::TrainConfig;

/// Both networks, both optimizers and the iteration counter: everything a
/// checkpoint needs to resume a run exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct Trainer {
    pub cfg: TrainConfig,
    pub generator: Network<f32>,
    pub discriminator: Network<f32>,
    pub opt_g: AdamState<f32>,
    pub opt_d: AdamState<f32>,
    /// Completed iterations.
    pub iteration: u64,
}

/// Generator input for a batch: the masked images, followed by the mask as an
/// extra channel when the model asks for it.
pub fn generator_input(spec: &ModelSpec, images: &Tensor<f32>, mask: &Tensor<f32>, fill: f64) -> Result<Tensor<f32>> {
    let masked = apply_mask(images, mask, fill)?;
    if !spec.include_mask_channel {
        return Ok(masked);
    }
    let (n, c, h, w) = masked.dims4()?;
    let plane = h * w;
    let mut data = Vec::with_capacity(n * (c + 1) * plane);
    for img in masked.data().chunks(c * plane) {
        data.extend_from_slice(img);
        data.extend_from_slice(mask.data());
    }
    Tensor::new([n, c + 1, h, w], data)
}

fn at_iteration(iteration: u64) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite(what) => Error::NonFinite(format!("{what} at iteration {iteration}")),
        other => other,
    }
}

fn scalar(tape: &Tape<f32>, v: Var) -> Result<f32> {
    tape.value(v).item()
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let spec = cfg.model_spec();
        Ok(Trainer {
            generator: build_generator(&spec, derive_seed(cfg.seed, STREAM_GENERATOR))?,
            discriminator: build_discriminator(&spec, derive_seed(cfg.seed, STREAM_DISCRIMINATOR))?,
            opt_g: AdamState::new(cfg.lr),
            opt_d: AdamState::new(cfg.lr),
            iteration: 0,
            cfg,
        })
    }

    /// Mask used by the given (1-based) iteration. Random placements draw from
    /// a seed derived from the run seed and the iteration.
    pub fn mask_for(&self, iteration: u64) -> MaskSpec {
        MaskSpec { seed: derive_seed(self.cfg.seed, iteration), ..self.cfg.mask }
    }

    /// One discriminator update followed by one generator update.
    pub fn train_step(&mut self, batch: &Tensor<f32>) -> Result<LossReport> {
        let iteration = self.iteration + 1;
        let (_, c, h, w) = batch.dims4()?;
        let size = self.cfg.image_size;
        if c != 3 || h != size || w != size {
            return Err(Error::dim(
                "train_step",
                format!("batch {:?} does not match model image size {size}", batch.shape()),
            ));
        }
        let spec = self.cfg.model_spec();
        let mask = make_mask::<f32>(&self.mask_for(iteration), h, w)?;
        let input = generator_input(&spec, batch, &mask, self.cfg.mask.fill)?;
        let tag = at_iteration(iteration);

        // Discriminator: real batch against detached fakes.
        let fakes = {
            let mut tape = Tape::new();
            let g = self.generator.bind(&mut tape, false);
            let x = tape.constant(input.clone());
            let out = self.generator.forward(&mut tape, &g, x, Mode::Train { update_stats: false }).map_err(&tag)?;
            tape.value(out.output).clone()
        };
        let l_disc = {
            let mut tape = Tape::new();
            let d = self.discriminator.bind(&mut tape, true);
            let real = tape.constant(batch.clone());
            let fake = tape.constant(fakes);
            let on_real = self.discriminator.forward(&mut tape, &d, real, Mode::Train { update_stats: true }).map_err(&tag)?;
            let on_fake = self.discriminator.forward(&mut tape, &d, fake, Mode::Train { update_stats: false }).map_err(&tag)?;
            let loss = adversarial_loss_d(&mut tape, on_real.output, on_fake.output).map_err(&tag)?;
            tape.backward(loss).map_err(&tag)?;
            self.opt_d.step(&mut self.discriminator.params, &d.grads(&tape))?;
            self.discriminator.apply_stat_updates(on_real.stat_updates)?;
            scalar(&tape, loss)?
        };

        // Generator: fresh forward; the discriminator is a constant here.
        let mut tape = Tape::new();
        let g = self.generator.bind(&mut tape, true);
        let d = self.discriminator.bind(&mut tape, false);
        let x = tape.constant(input);
        let target = tape.constant(batch.clone());
        let out = self.generator.forward(&mut tape, &g, x, Mode::Train { update_stats: true }).map_err(&tag)?;
        let l_rec = reconstruction_loss(&mut tape, out.output, target, Some(&mask), self.cfg.region_weight).map_err(&tag)?;
        let judged = self.discriminator.forward(&mut tape, &d, out.output, Mode::Train { update_stats: false }).map_err(&tag)?;
        let l_adv = adversarial_loss_g(&mut tape, judged.output).map_err(&tag)?;
        let l_total = total_loss(&mut tape, l_rec, l_adv, self.cfg.lambda_adv).map_err(&tag)?;
        tape.backward(l_total).map_err(&tag)?;
        self.opt_g.step(&mut self.generator.params, &g.grads(&tape))?;
        self.generator.apply_stat_updates(out.stat_updates)?;

        self.iteration = iteration;
        Ok(LossReport {
            iteration,
            l_rec: scalar(&tape, l_rec)?,
            l_adv_g: scalar(&tape, l_adv)?,
            l_total: scalar(&tape, l_total)?,
            l_disc,
        })
    }

    /// Generator output for a batch under the run's base mask, in inference mode.
    pub fn inpaint(&self, images: &Tensor<f32>, mask: &MaskSpec) -> Result<Tensor<f32>> {
        let (_, _, h, w) = images.dims4()?;
        let map = make_mask::<f32>(mask, h, w)?;
        let input = generator_input(self.generator.spec(), images, &map, mask.fill)?;
        self.generator.infer(&input)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic_dataset;
    use crate::loss::total_value;

    fn tiny_cfg() -> TrainConfig {
        TrainConfig { image_size: 32, channels: [4, 4, 8, 8, 8, 8], batch_size: 4, seed: 3, ..TrainConfig::default() }
    }

    fn batch() -> Tensor<f32> {
        synthetic_dataset(4, 32, 9).unwrap().to_batch().unwrap()
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let mut t = Trainer::new(tiny_cfg()).unwrap();
        t.opt_g.lr = 0.0;
        t.opt_d.lr = 0.0;
        let (g, d) = (t.generator.params.clone(), t.discriminator.params.clone());
        t.train_step(&batch()).unwrap();
        assert_eq!(t.generator.params, g);
        assert_eq!(t.discriminator.params, d);
    }

    #[test]
    fn step_updates_both_networks_and_reports_consistent_total() {
        let mut t = Trainer::new(tiny_cfg()).unwrap();
        let (g, d) = (t.generator.params.clone(), t.discriminator.params.clone());
        let r = t.train_step(&batch()).unwrap();
        assert_ne!(t.generator.params, g);
        assert_ne!(t.discriminator.params, d);
        assert_eq!(r.iteration, 1);
        assert_eq!(r.l_total.to_bits(), total_value(r.l_rec, r.l_adv_g, 1.0).to_bits());
    }

    #[test]
    fn frozen_generator_optimizer_isolates_discriminator_update() {
        let mut t = Trainer::new(tiny_cfg()).unwrap();
        t.opt_g.lr = 0.0;
        let (g, d) = (t.generator.params.clone(), t.discriminator.params.clone());
        t.train_step(&batch()).unwrap();
        assert_eq!(t.generator.params, g);
        assert_ne!(t.discriminator.params, d);
    }

    #[test]
    fn mask_channel_is_appended() {
        let spec = ModelSpec { include_mask_channel: true, image_size: 32, ..ModelSpec::default() };
        let mask = make_mask::<f32>(&MaskSpec::default(), 32, 32).unwrap();
        let x = generator_input(&spec, &batch(), &mask, 0.0).unwrap();
        assert_eq!(x.shape(), &[4, 4, 32, 32]);
        assert_eq!(&x.data()[3 * 1024..4 * 1024], mask.data());
    }

    #[test]
    fn wrong_resolution_is_rejected() {
        let mut t = Trainer::new(tiny_cfg()).unwrap();
        let small = Tensor::zeros([2, 3, 16, 16]);
        assert!(matches!(t.train_step(&small), Err(Error::Dimension { .. })));
    }
}
