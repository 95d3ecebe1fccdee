//! Central finite-difference verification of every differentiable operation
//! and of the full generator/discriminator losses, in 64-bit precision.

use std::fmt;

use rand::Rng;
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::data::{apply_mask, make_mask, synthetic_dataset, MaskSpec};
use crate::error::Result;
use crate::layers::{Bound, Mode};
use crate::loss::{adversarial_loss_d, adversarial_loss_g, reconstruction_loss, total_loss};
use crate::model::{build_discriminator, build_generator, ModelSpec, Network};
use crate::ops::Padding;
use crate::seed;
use crate::tape::{NormStats, Tape, Var};
use crate::tensor::Tensor;

pub const STEP: f64 = 1e-5;
pub const OP_TOLERANCE: f64 = 1e-4;
pub const END_TO_END_TOLERANCE: f64 = 1e-3;
const DENOM_FLOOR: f64 = 1e-8;

/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(DENOM_FLOOR)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
    /// Number of scalar inputs compared.
    pub checked: usize,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<6} {:<28} max rel error {:.3e} (tolerance {:.0e}, {} inputs)",
            if self.passed() { "ok" } else { "FAIL" },
            self.name,
            self.max_rel_error,
            self.tolerance,
            self.checked
        )
    }
}

type Build<'a> = dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + Sync + 'a;

/// Compare the tape's gradients of the scalar built by `build` against
/// central differences in every element of every input. With `perturb`, the
/// analytic gradient is deliberately corrupted (harness self-test).
pub fn check(name: &str, tolerance: f64, inputs: &[Tensor<f64>], build: &Build<'_>, perturb: bool) -> Result<CheckResult> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = build(&mut tape, &vars)?;
    tape.backward(loss)?;
    let mut analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| tape.grad(v).map_or_else(|| vec![0.0; tape.value(v).numel()], |g| g.data().to_vec()))
        .collect();
    if perturb {
        let g = &mut analytic[0][0];
        *g += 0.1 * (1.0 + g.abs());
    }

    let eval = |which: usize, at: usize, delta: f64| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs
            .iter()
            .enumerate()
            .map(|(i, t)| {
                if i == which {
                    let mut t = t.clone();
                    t.data_mut()[at] += delta;
                    tape.constant(t)
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        let loss = build(&mut tape, &vars)?;
        tape.value(loss).item()
    };
    let probes: Vec<(usize, usize)> =
        inputs.iter().enumerate().flat_map(|(i, t)| (0..t.numel()).map(move |j| (i, j))).collect();
    let errors: Vec<f64> = probes
        .par_iter()
        .map(|&(i, j)| -> Result<f64> {
            let numeric = (eval(i, j, STEP)? - eval(i, j, -STEP)?) / (2.0 * STEP);
            Ok(relative_error(analytic[i][j], numeric))
        })
        .collect::<Result<_>>()?;
    let max_rel_error = errors.into_iter().fold(0.0, f64::max);
    Ok(CheckResult { name: name.to_string(), max_rel_error, tolerance, checked: probes.len() })
}

/// Suite configuration.
#[derive(Clone, Debug, Default)]
pub struct SuiteOptions {
    pub seed: u64,
    /// Name of a case whose analytic gradient is corrupted, to prove the
    /// harness notices.
    pub perturb: Option<String>,
}

struct Gen(rand_chacha::ChaCha8Rng);

impl Gen {
    fn uniform(&mut self, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
        Tensor::from_fn(shape.to_vec(), |_| self.0.random_range(lo..hi))
    }

    /// Values bounded away from zero, for ops with a kink there.
    fn away_from_zero(&mut self, shape: &[usize]) -> Tensor<f64> {
        Tensor::from_fn(shape.to_vec(), |_| {
            let m = self.0.random_range(0.05..2.0);
            if self.0.random_bool(0.5) { m } else { -m }
        })
    }

    /// Distinct values with gaps far above the step size, so every pooling
    /// window has a unique maximum under perturbation.
    fn distinct(&mut self, shape: &[usize]) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        let mut ranks: Vec<usize> = (0..n).collect();
        ranks.shuffle(&mut self.0);
        Tensor::from_fn(shape.to_vec(), |i| ranks[i] as f64 * 0.01 - 0.005 * n as f64)
    }
}

/// `sum(out ⊙ r)` with a fixed random `r`: a scalar whose gradient exercises
/// every output element with a distinct weight.
fn project(tape: &mut Tape<f64>, out: Var, weights: &Tensor<f64>) -> Result<Var> {
    let r = tape.constant(weights.clone());
    let prod = tape.mul(out, r)?;
    tape.sum(prod)
}

struct Case {
    name: &'static str,
    tolerance: f64,
    inputs: Vec<Tensor<f64>>,
    build: Box<Build<'static>>,
}

fn op_cases(g: &mut Gen) -> Vec<Case> {
    let mut cases = Vec::new();
    let mut add = |name, tolerance, inputs, build: Box<Build<'static>>| cases.push(Case { name, tolerance, inputs, build });

    let r = g.uniform(&[1, 3, 6, 6], -1.0, 1.0);
    add(
        "conv2d",
        OP_TOLERANCE,
        vec![g.uniform(&[1, 2, 6, 6], -1.0, 1.0), g.uniform(&[3, 2, 3, 3], -0.5, 0.5), g.uniform(&[3], -0.1, 0.1)],
        Box::new(move |t, v| {
            let y = t.conv2d(v[0], v[1], v[2], 1, 1)?;
            project(t, y, &r)
        }),
    );
    let r = g.uniform(&[2, 2, 3, 3], -1.0, 1.0);
    add(
        "conv2d_stride2",
        OP_TOLERANCE,
        vec![g.uniform(&[2, 2, 7, 7], -1.0, 1.0), g.uniform(&[2, 2, 3, 3], -0.5, 0.5), g.uniform(&[2], -0.1, 0.1)],
        Box::new(move |t, v| {
            let y = t.conv2d(v[0], v[1], v[2], 2, 0)?;
            project(t, y, &r)
        }),
    );
    let r = g.uniform(&[2, 3, 5, 5], -1.0, 1.0);
    add(
        "conv2d_2x2_asymmetric_pad",
        OP_TOLERANCE,
        vec![g.uniform(&[2, 2, 5, 5], -1.0, 1.0), g.uniform(&[3, 2, 2, 2], -0.5, 0.5), g.uniform(&[3], -0.1, 0.1)],
        Box::new(move |t, v| {
            let y = t.conv2d_padded(v[0], v[1], v[2], 1, Padding::same(2))?;
            project(t, y, &r)
        }),
    );
    let r = g.uniform(&[2, 2, 3, 3], -1.0, 1.0);
    add(
        "maxpool2d",
        OP_TOLERANCE,
        vec![g.distinct(&[2, 2, 6, 6])],
        Box::new(move |t, v| {
            let y = t.maxpool2d(v[0])?;
            project(t, y, &r)
        }),
    );
    let r = g.uniform(&[1, 2, 6, 8], -1.0, 1.0);
    add(
        "upsample2x",
        OP_TOLERANCE,
        vec![g.uniform(&[1, 2, 3, 4], -1.0, 1.0)],
        Box::new(move |t, v| {
            let y = t.upsample2x(v[0])?;
            project(t, y, &r)
        }),
    );
    let r = g.uniform(&[2, 3, 4, 4], -1.0, 1.0);
    add(
        "elu",
        OP_TOLERANCE,
        vec![g.away_from_zero(&[2, 3, 4, 4])],
        Box::new(move |t, v| {
            let y = t.elu(v[0], 1.0)?;
            project(t, y, &r)
        }),
    );
    let r = g.uniform(&[2, 3, 4, 4], -1.0, 1.0);
    add(
        "sigmoid",
        OP_TOLERANCE,
        vec![g.uniform(&[2, 3, 4, 4], -4.0, 4.0)],
        Box::new(move |t, v| {
            let y = t.sigmoid(v[0])?;
            project(t, y, &r)
        }),
    );
    let r = g.uniform(&[3, 2], -1.0, 1.0);
    add(
        "affine",
        OP_TOLERANCE,
        vec![g.uniform(&[3, 5], -1.0, 1.0), g.uniform(&[5, 2], -1.0, 1.0), g.uniform(&[2], -1.0, 1.0)],
        Box::new(move |t, v| {
            let y = t.affine(v[0], v[1], v[2])?;
            project(t, y, &r)
        }),
    );
    let r = g.uniform(&[2, 24], -1.0, 1.0);
    add(
        "reshape",
        OP_TOLERANCE,
        vec![g.uniform(&[2, 6, 2, 2], -1.0, 1.0)],
        Box::new(move |t, v| {
            let y = t.reshape(v[0], &[2, 24])?;
            project(t, y, &r)
        }),
    );
    let r = g.uniform(&[2, 3], -1.0, 1.0);
    add(
        "global_avg_pool",
        OP_TOLERANCE,
        vec![g.uniform(&[2, 3, 4, 4], -1.0, 1.0)],
        Box::new(move |t, v| {
            let y = t.global_avg_pool(v[0])?;
            project(t, y, &r)
        }),
    );
    let r = g.uniform(&[2, 3, 4, 4], -1.0, 1.0);
    add(
        "batch_norm_train",
        OP_TOLERANCE,
        vec![g.uniform(&[2, 3, 4, 4], -1.0, 1.0), g.uniform(&[3], 0.5, 1.5), g.uniform(&[3], -0.5, 0.5)],
        Box::new(move |t, v| {
            let (y, _) = t.batch_norm(v[0], v[1], v[2], NormStats::Batch, 1e-5)?;
            project(t, y, &r)
        }),
    );
    let r = g.uniform(&[2, 3, 4, 4], -1.0, 1.0);
    let (mean, var) = (g.uniform(&[3], -0.2, 0.2).into_data(), g.uniform(&[3], 0.5, 1.5).into_data());
    add(
        "batch_norm_eval",
        OP_TOLERANCE,
        vec![g.uniform(&[2, 3, 4, 4], -1.0, 1.0), g.uniform(&[3], 0.5, 1.5), g.uniform(&[3], -0.5, 0.5)],
        Box::new(move |t, v| {
            let stats = NormStats::Running { mean: &mean, var: &var };
            let (y, _) = t.batch_norm(v[0], v[1], v[2], stats, 1e-5)?;
            project(t, y, &r)
        }),
    );
    let r = g.uniform(&[3, 4], -1.0, 1.0);
    add(
        "add",
        OP_TOLERANCE,
        vec![g.uniform(&[3, 4], -1.0, 1.0), g.uniform(&[3, 4], -1.0, 1.0)],
        Box::new(move |t, v| {
            let y = t.add(v[0], v[1])?;
            project(t, y, &r)
        }),
    );
    let r = g.uniform(&[3, 4], -1.0, 1.0);
    add(
        "mul",
        OP_TOLERANCE,
        vec![g.uniform(&[3, 4], -1.0, 1.0), g.uniform(&[3, 4], -1.0, 1.0)],
        Box::new(move |t, v| {
            let y = t.mul(v[0], v[1])?;
            project(t, y, &r)
        }),
    );
    let r = g.uniform(&[3, 4], -1.0, 1.0);
    add(
        "scale",
        OP_TOLERANCE,
        vec![g.uniform(&[3, 4], -1.0, 1.0)],
        Box::new(move |t, v| {
            let y = t.scale(v[0], -0.37)?;
            project(t, y, &r)
        }),
    );
    add("sum", OP_TOLERANCE, vec![g.uniform(&[3, 4], -1.0, 1.0)], Box::new(|t, v| t.sum(v[0])));
    add("mean", OP_TOLERANCE, vec![g.uniform(&[3, 4], -1.0, 1.0)], Box::new(|t, v| t.mean(v[0])));

    let mask = make_mask::<f64>(&MaskSpec::default(), 4, 4).expect("4x4 center mask");
    add(
        "reconstruction_loss",
        OP_TOLERANCE,
        vec![g.uniform(&[2, 3, 4, 4], 0.0, 1.0), g.uniform(&[2, 3, 4, 4], 0.0, 1.0)],
        Box::new(move |t, v| reconstruction_loss(t, v[0], v[1], Some(&mask), 3.0)),
    );
    add(
        "adversarial_loss_d",
        OP_TOLERANCE,
        vec![g.uniform(&[4, 1], 0.05, 0.95), g.uniform(&[4, 1], 0.05, 0.95)],
        Box::new(|t, v| adversarial_loss_d(t, v[0], v[1])),
    );
    add(
        "adversarial_loss_g",
        OP_TOLERANCE,
        vec![g.uniform(&[4, 1], 0.05, 0.95)],
        Box::new(|t, v| adversarial_loss_g(t, v[0])),
    );
    add(
        "total_loss",
        OP_TOLERANCE,
        vec![g.uniform(&[1], 0.0, 1.0), g.uniform(&[1], 0.0, 2.0)],
        Box::new(|t, v| total_loss(t, v[0], v[1], 0.3)),
    );
    cases
}

/// The tiny model used for the end-to-end checks.
pub fn tiny_spec() -> ModelSpec {
    ModelSpec { image_size: 32, channels: [2; 6], ..ModelSpec::default() }
}

fn bound(net: &Network<f64>, vars: &[Var]) -> Bound {
    Bound::from_pairs(net.params.names().map(str::to_string).zip(vars.iter().copied()))
}

fn end_to_end_cases(seed: u64) -> Result<Vec<Case>> {
    let spec = tiny_spec();
    let generator: Network<f64> = build_generator(&spec, seed::derive_seed(seed, 101))?;
    let discriminator: Network<f64> = build_discriminator(&spec, seed::derive_seed(seed, 102))?;
    let images = synthetic_dataset(2, spec.image_size, seed)?.to_batch()?.cast::<f64>();
    let mask = make_mask::<f64>(&MaskSpec::default(), spec.image_size, spec.image_size)?;
    let masked = apply_mask(&images, &mask, 0.0)?;

    let gp: Vec<Tensor<f64>> = generator.params.iter().map(|(_, t)| t.clone()).collect();
    let dp: Vec<Tensor<f64>> = discriminator.params.iter().map(|(_, t)| t.clone()).collect();
    let ng = gp.len();
    let inputs: Vec<Tensor<f64>> = gp.into_iter().chain(dp).collect();
    let train = Mode::Train { update_stats: false };

    let (g1, d1, x1, m1, y1) = (generator.clone(), discriminator.clone(), masked.clone(), mask.clone(), images.clone());
    let generator_step: Box<Build<'static>> = Box::new(move |t, v| {
        let (bg, bd) = (bound(&g1, &v[..ng]), bound(&d1, &v[ng..]));
        let x = t.constant(x1.clone());
        let target = t.constant(y1.clone());
        let out = g1.forward(t, &bg, x, train)?.output;
        let rec = reconstruction_loss(t, out, target, Some(&m1), 2.0)?;
        let judged = d1.forward(t, &bd, out, train)?.output;
        let adv = adversarial_loss_g(t, judged)?;
        total_loss(t, rec, adv, 0.5)
    });
    let (g2, d2) = (generator, discriminator);
    let discriminator_step: Box<Build<'static>> = Box::new(move |t, v| {
        let (bg, bd) = (bound(&g2, &v[..ng]), bound(&d2, &v[ng..]));
        let x = t.constant(masked.clone());
        let real = t.constant(images.clone());
        let fake = g2.forward(t, &bg, x, train)?.output;
        let on_real = d2.forward(t, &bd, real, train)?.output;
        let on_fake = d2.forward(t, &bd, fake, train)?.output;
        adversarial_loss_d(t, on_real, on_fake)
    });
    Ok(vec![
        Case { name: "end_to_end_generator", tolerance: END_TO_END_TOLERANCE, inputs: inputs.clone(), build: generator_step },
        Case { name: "end_to_end_discriminator", tolerance: END_TO_END_TOLERANCE, inputs, build: discriminator_step },
    ])
}

/// Names of every case in the suite, in run order.
pub fn case_names() -> Vec<&'static str> {
    let mut g = Gen(seed::rng(0, 0));
    let mut names: Vec<&'static str> = op_cases(&mut g).iter().map(|c| c.name).collect();
    names.extend(["end_to_end_generator", "end_to_end_discriminator"]);
    names
}

/// Run every case, calling `report` as each finishes.
pub fn run_suite(opts: &SuiteOptions, mut report: impl FnMut(&CheckResult)) -> Result<Vec<CheckResult>> {
    let mut g = Gen(seed::rng(opts.seed, 100));
    let mut cases = op_cases(&mut g);
    cases.extend(end_to_end_cases(opts.seed)?);
    let mut results = Vec::with_capacity(cases.len());
    for case in &cases {
        let perturb = opts.perturb.as_deref() == Some(case.name);
        let r = check(case.name, case.tolerance, &case.inputs, case.build.as_ref(), perturb)?;
        report(&r);
        results.push(r);
    }
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_definition() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!((relative_error(1e-12, 0.0) - 1e-4).abs() < 1e-15);
    }

    #[test]
    fn catches_a_wrong_gradient() {
        let x = vec![Tensor::new([3], vec![0.3, -0.7, 1.1]).unwrap()];
        let square_sum: &Build<'_> = &|t, v| {
            let sq = t.mul(v[0], v[0])?;
            t.sum(sq)
        };
        assert!(check("square", OP_TOLERANCE, &x, square_sum, false).unwrap().passed());
        assert!(!check("square", OP_TOLERANCE, &x, square_sum, true).unwrap().passed());
    }

    #[test]
    fn names_are_unique() {
        let names = case_names();
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len());
    }
}
