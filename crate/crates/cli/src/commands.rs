use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use cegan_core::data::{
    apply_mask, list_pngs, load_dataset, make_mask, read_rgb8, rgb8_to_tensor, save_png, synthetic_dataset,
    tensor_to_rgb8,
};
use cegan_core::gradcheck::{case_names, run_suite, SuiteOptions, STEP};
use cegan_core::training::{checkpoint, evaluate, generator_input, parse_key_values, train_loop, RunOptions, TrainConfig};
use cegan_core::{Error, Result, Tensor};

use crate::{EvalArgs, GradcheckArgs, InpaintArgs, MaskArgs, SynthArgs, TrainArgs};

/// Misconfiguration is a usage error (2); anything else aborts with 1.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        _ => 1,
    }
}

fn apply(cfg: &mut TrainConfig, pairs: &[(String, String)]) -> Result<()> {
    for (k, v) in pairs {
        cfg.set(k, v)?;
    }
    Ok(())
}

fn echo(cfg: &TrainConfig, extra: &[(&str, String)]) {
    println!("resolved configuration:");
    for (k, v) in extra {
        println!("  {k} = {v}");
    }
    for line in cfg.to_string().lines() {
        println!("  {line}");
    }
}

pub fn train(a: TrainArgs) -> Result<ExitCode> {
    let file = match &a.config {
        Some(p) => parse_key_values(&fs::read_to_string(p)?)?,
        None => Vec::new(),
    };
    let resume = a.resume.as_deref().map(checkpoint::load).transpose()?;
    // Precedence: defaults (or the resumed run) < config file < flags.
    let mut cfg = resume.as_ref().map(|t| t.cfg.clone()).unwrap_or_default();
    apply(&mut cfg, &file)?;
    apply(&mut cfg, &a.flag_pairs())?;
    cfg.validate()?;
    let source = match (&a.data, a.synthetic) {
        (Some(dir), _) => format!("{}", dir.display()),
        (None, Some(n)) => format!("synthetic:{n}"),
        (None, None) => unreachable!("clap enforces a data source"),
    };
    let mut extra = vec![("data", source), ("out", a.out.display().to_string())];
    if let Some(r) = &a.resume {
        extra.push(("resume", r.display().to_string()));
    }
    echo(&cfg, &extra);

    let dataset = match (&a.data, a.synthetic) {
        (Some(dir), _) => load_dataset(dir, cfg.image_size)?,
        (None, Some(n)) => synthetic_dataset(n, cfg.image_size, cfg.seed)?,
        (None, None) => unreachable!(),
    };
    if dataset.skipped > 0 {
        println!("skipped {} undecodable file(s)", dataset.skipped);
    }
    let start = Instant::now();
    let out = train_loop(&cfg, &dataset, RunOptions { out_dir: Some(a.out.clone()), resume })?;
    if let Some(last) = out.losses.last() {
        let r = last.report;
        println!(
            "finished iteration {} in {:.1?}: loss_d {:.6} loss_g_adv {:.6} loss_g_rec {:.6} loss_total {:.6}",
            r.iteration,
            start.elapsed(),
            r.l_disc,
            r.l_adv_g,
            r.l_rec,
            r.l_total
        );
    }
    if let Some(p) = out.checkpoints.last() {
        println!("checkpoint: {}", p.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn checkpoint_config(ckpt: &Path, mask: &MaskArgs, seed: Option<u64>) -> Result<(cegan_core::training::Trainer, TrainConfig)> {
    let trainer = checkpoint::load(ckpt)?;
    let mut cfg = trainer.cfg.clone();
    apply(&mut cfg, &mask.pairs())?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok((trainer, cfg))
}

fn single_image(t: &Tensor<f32>, h: usize, w: usize) -> Result<Tensor<f32>> {
    t.clone().reshape([3, h, w])
}

pub fn inpaint(a: InpaintArgs) -> Result<ExitCode> {
    let (trainer, cfg) = checkpoint_config(&a.ckpt, &a.mask, a.seed)?;
    echo(&cfg, &[("ckpt", a.ckpt.display().to_string()), ("input", a.input.display().to_string())]);
    let inputs: Vec<PathBuf> = if a.input.is_dir() { list_pngs(&a.input)? } else { vec![a.input.clone()] };
    if inputs.is_empty() {
        return Err(Error::EmptyDataset(a.input.clone()));
    }
    fs::create_dir_all(&a.out)?;
    let size = cfg.image_size;
    let mask_spec = cfg.mask_spec();
    let map = make_mask::<f32>(&mask_spec, size, size)?;
    for path in inputs {
        let original = read_rgb8(&path)?;
        let (w, h) = (original.width() as usize, original.height() as usize);
        if (h, w) != (size, size) {
            return Err(Error::Dimension {
                op: "inpaint",
                detail: format!("{} is {w}x{h} but the checkpoint expects {size}x{size}", path.display()),
            });
        }
        let batch = rgb8_to_tensor(&original).reshape([1, 3, h, w])?;
        let masked = apply_mask(&batch, &map, mask_spec.fill)?;
        let output = trainer.generator.infer(&generator_input(trainer.generator.spec(), &batch, &map, mask_spec.fill)?)?;
        let generated = tensor_to_rgb8(&single_image(&output, h, w)?)?;
        // Off-mask pixels come straight from the decoded input.
        let mut composite = original.clone();
        for (i, px) in composite.pixels_mut().enumerate() {
            if map.data()[i] > 0.0 {
                *px = *generated.get_pixel((i % w) as u32, (i / w) as u32);
            }
        }
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "image".into());
        save_png(&a.out.join(format!("{stem}_masked.png")), &tensor_to_rgb8(&single_image(&masked, h, w)?)?)?;
        save_png(&a.out.join(format!("{stem}_output.png")), &generated)?;
        save_png(&a.out.join(format!("{stem}_composite.png")), &composite)?;
        println!("{} -> {stem}_{{masked,output,composite}}.png", path.display());
    }
    Ok(ExitCode::SUCCESS)
}

pub fn eval(a: EvalArgs) -> Result<ExitCode> {
    let (trainer, mut cfg) = checkpoint_config(&a.ckpt, &a.mask, a.seed)?;
    if let Some(b) = a.batch {
        cfg.set("batch", &b.to_string())?;
        cfg.validate()?;
    }
    echo(&cfg, &[("ckpt", a.ckpt.display().to_string()), ("data", a.data.display().to_string())]);
    let ds = load_dataset(&a.data, cfg.image_size)?;
    let metrics = evaluate(&trainer.generator, &ds, &cfg.mask_spec(), cfg.batch_size)?;
    print!("{}", metrics.to_lines());
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir)?;
        let path = dir.join("metrics.json");
        fs::write(&path, format!("{:#}\n", metrics.to_json()))?;
        println!("wrote {}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}

pub fn gradcheck(a: GradcheckArgs) -> Result<ExitCode> {
    if let Some(p) = &a.perturb {
        if !case_names().contains(&p.as_str()) {
            return Err(Error::Config(format!("unknown gradient-check case {p:?}")));
        }
    }
    println!("resolved configuration:\n  size = {}\n  seed = {}\n  step = {STEP:e}\n  precision = f64", a.size, a.seed);
    let start = Instant::now();
    let results = run_suite(&SuiteOptions { seed: a.seed, perturb: a.perturb.clone() }, |r| println!("{r}"))?;
    println!("{} cases in {:.1?}", results.len(), start.elapsed());
    let failing: Vec<&str> = results.iter().filter(|r| !r.passed()).map(|r| r.name.as_str()).collect();
    if failing.is_empty() {
        println!("all gradient checks passed");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("failing: {}", failing.join(", "));
        Ok(ExitCode::from(1))
    }
}

pub fn synth(a: SynthArgs) -> Result<ExitCode> {
    println!(
        "resolved configuration:\n  n = {}\n  image-size = {}\n  seed = {}\n  out = {}",
        a.n,
        a.image_size,
        a.seed,
        a.out.display()
    );
    let ds = synthetic_dataset(a.n, a.image_size, a.seed)?;
    fs::create_dir_all(&a.out)?;
    let digits = a.n.saturating_sub(1).to_string().len().max(5);
    for (i, img) in ds.images().iter().enumerate() {
        save_png(&a.out.join(format!("synth_{i:0digits$}.png")), &tensor_to_rgb8(img)?)?;
    }
    println!("wrote {} images", ds.len());
    Ok(ExitCode::SUCCESS)
}
