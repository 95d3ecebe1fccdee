use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cegan_core::data::{list_pngs, read_rgb8, synthetic_dataset};

fn cegan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cegan")).args(args).env("RUST_LOG", "warn").output().expect("spawn cegan")
}

fn ok(args: &[&str]) -> String {
    let out = cegan(args);
    assert!(
        out.status.success(),
        "{args:?} failed with {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn train_small(out: &Path, epochs: &str, extra: &[&str]) -> String {
    let mut args = vec![
        "train", "--synthetic", "64", "--image-size", "32", "--epochs", epochs, "--batch", "8", "--seed", "7",
        "--channels", "2,4,4,8,8,8", "--out", s(out),
    ];
    args.extend_from_slice(extra);
    ok(&args)
}

fn checkpoints(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "cegan"))
        .collect();
    v.sort();
    v
}

#[test]
fn train_example_writes_log_checkpoint_and_sample_deterministically() {
    let root = tempfile::tempdir().unwrap();
    let a = root.path().join("a");
    let b = root.path().join("b");
    train_small(&a, "2", &[]);
    train_small(&b, "2", &[]);
    let csv = fs::read_to_string(a.join("loss.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("iteration,epoch,step,loss_d,loss_g_adv,loss_g_rec,loss_total"));
    assert_eq!(lines.count(), 16);
    assert!(!checkpoints(&a).is_empty());
    assert!(fs::read_dir(&a).unwrap().any(|e| e.unwrap().file_name().to_string_lossy().starts_with("sample_")));
    assert_eq!(fs::read(a.join("loss.csv")).unwrap(), fs::read(b.join("loss.csv")).unwrap());
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = s(dir.path());
    for args in [
        vec!["train", "--synthetic", "8", "--out", out, "--bogus"],
        vec!["train", "--out", out],
        vec!["train", "--synthetic", "8", "--data", out, "--out", out],
        vec!["train", "--synthetic", "8", "--out", out, "--batch", "zero"],
        vec!["train", "--synthetic", "8", "--out", out, "--lr", "-1"],
        vec!["train", "--synthetic", "8", "--out", out, "--image-size", "48"],
        vec!["train", "--synthetic", "8", "--out", out, "--mask", "ring"],
        vec!["gradcheck", "--size", "huge"],
        vec!["frobnicate"],
    ] {
        assert_eq!(cegan(&args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn help_exits_zero_for_every_command() {
    for cmd in [vec!["--help"], vec!["--version"]]
        .into_iter()
        .chain(["train", "inpaint", "eval", "gradcheck", "synth"].map(|c| vec![c, "--help"]))
    {
        let out = cegan(&cmd);
        assert_eq!(out.status.code(), Some(0), "{cmd:?}");
        assert!(!out.stdout.is_empty());
    }
}

#[test]
fn flags_override_config_file_which_overrides_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.conf");
    fs::write(&cfg, "# tuning\nlr = 0.002\nbatch = 4\nlambda-adv = 0.5\n").unwrap();
    let stdout = train_small(&dir.path().join("out"), "1", &["--config", s(&cfg), "--lambda-adv", "0.25"]);
    assert!(stdout.contains("resolved configuration:"));
    assert!(stdout.contains("lr = 0.002"), "{stdout}");
    // --batch 8 from the command line beats batch = 4 in the file.
    assert!(stdout.contains("batch = 8"), "{stdout}");
    assert!(stdout.contains("lambda-adv = 0.25"), "{stdout}");
    assert!(stdout.contains("epochs = 1"), "{stdout}");
    assert!(stdout.contains("coverage = 0.25"), "{stdout}");

    fs::write(&cfg, "learning-rate = 1\n").unwrap();
    let out = cegan(&["train", "--synthetic", "8", "--out", s(dir.path()), "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn synth_is_reproducible_and_reingests() {
    let root = tempfile::tempdir().unwrap();
    let a = root.path().join("a");
    let b = root.path().join("b");
    for d in [&a, &b] {
        ok(&["synth", "--n", "10", "--image-size", "32", "--seed", "3", "--out", s(d)]);
    }
    let files = list_pngs(&a).unwrap();
    assert_eq!(files.len(), 10);
    let truth = synthetic_dataset(10, 32, 3).unwrap();
    for (i, f) in files.iter().enumerate() {
        let name = f.file_name().unwrap();
        assert_eq!(fs::read(f).unwrap(), fs::read(b.join(name)).unwrap());
        let img = read_rgb8(f).unwrap();
        let t = &truth.images()[i];
        let diff = img
            .as_raw()
            .chunks(3)
            .enumerate()
            .flat_map(|(p, px)| (0..3).map(move |c| (p, c, px[c])))
            .map(|(p, c, v)| (v as f32 / 255.0 - t.data()[c * 32 * 32 + p]).abs())
            .fold(0.0, f32::max);
        assert!(diff <= 1.0 / 255.0 + 1e-6, "{name:?}: {diff}");
    }
}

#[test]
fn inpaint_composite_keeps_unmasked_pixels() {
    let root = tempfile::tempdir().unwrap();
    let run = root.path().join("run");
    train_small(&run, "1", &[]);
    let ckpt = checkpoints(&run).pop().unwrap();
    let imgs = root.path().join("imgs");
    ok(&["synth", "--n", "2", "--image-size", "32", "--seed", "99", "--out", s(&imgs)]);
    let input = list_pngs(&imgs).unwrap().remove(0);
    let original = read_rgb8(&input).unwrap();

    let out = root.path().join("filled");
    ok(&["inpaint", "--ckpt", s(&ckpt), "--input", s(&input), "--out", s(&out)]);
    let stem = input.file_stem().unwrap().to_string_lossy().into_owned();
    for kind in ["masked", "output", "composite"] {
        assert!(out.join(format!("{stem}_{kind}.png")).exists(), "{kind}");
    }
    let composite = read_rgb8(&out.join(format!("{stem}_composite.png"))).unwrap();
    // Default centre mask at 25% coverage on 32x32 is the 16x16 block at 8..24.
    let mut changed_inside = false;
    for (x, y, px) in composite.enumerate_pixels() {
        let inside = (8..24).contains(&x) && (8..24).contains(&y);
        if inside {
            changed_inside |= px != original.get_pixel(x, y);
        } else {
            assert_eq!(px, original.get_pixel(x, y), "({x},{y})");
        }
    }
    assert!(changed_inside);

    let zero = root.path().join("zero");
    ok(&["inpaint", "--ckpt", s(&ckpt), "--input", s(&imgs), "--out", s(&zero), "--coverage", "0"]);
    for f in list_pngs(&imgs).unwrap() {
        let stem = f.file_stem().unwrap().to_string_lossy().into_owned();
        let c = read_rgb8(&zero.join(format!("{stem}_composite.png"))).unwrap();
        assert_eq!(read_rgb8(&f).unwrap(), c);
    }

    let big = root.path().join("big");
    ok(&["synth", "--n", "1", "--image-size", "64", "--out", s(&big)]);
    let out = cegan(&["inpaint", "--ckpt", s(&ckpt), "--input", s(&big), "--out", s(&root.path().join("x"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("64x64"));
}

fn metrics(path: &Path) -> serde_json::Map<String, serde_json::Value> {
    serde_json::from_str::<serde_json::Value>(&fs::read_to_string(path).unwrap()).unwrap().as_object().unwrap().clone()
}

#[test]
fn trained_checkpoint_beats_baseline_and_eval_is_stable() {
    let root = tempfile::tempdir().unwrap();
    let run = root.path().join("run");
    ok(&[
        "train", "--synthetic", "64", "--image-size", "32", "--epochs", "25", "--batch", "8", "--seed", "1",
        "--channels", "8,16,32,64,64,64", "--checkpoint-every", "0", "--sample-every", "0", "--out", s(&run),
    ]);
    let ckpt = checkpoints(&run).pop().unwrap();
    let held_out = root.path().join("held_out");
    ok(&["synth", "--n", "12", "--image-size", "32", "--seed", "4242", "--out", s(&held_out)]);

    let (a, b) = (root.path().join("eval_a"), root.path().join("eval_b"));
    let stdout = ok(&["eval", "--ckpt", s(&ckpt), "--data", s(&held_out), "--out", s(&a)]);
    assert!(stdout.contains("mse_masked_region="), "{stdout}");
    ok(&["eval", "--ckpt", s(&ckpt), "--data", s(&held_out), "--out", s(&b)]);
    assert_eq!(fs::read(a.join("metrics.json")).unwrap(), fs::read(b.join("metrics.json")).unwrap());

    let m = metrics(&a.join("metrics.json"));
    let mut keys: Vec<_> = m.keys().cloned().collect();
    keys.sort();
    assert_eq!(keys, ["baseline_mse_masked_region", "mse_full", "mse_masked_region", "psnr"]);
    let mse_full = m["mse_full"].as_f64().unwrap();
    let psnr = m["psnr"].as_f64().unwrap();
    assert!((psnr - 10.0 * (1.0 / mse_full).log10()).abs() < 1e-9);
    let masked = m["mse_masked_region"].as_f64().unwrap();
    let baseline = m["baseline_mse_masked_region"].as_f64().unwrap();
    assert!(masked < baseline, "{masked} vs {baseline}");

    let out = root.path().join("filled");
    let input = list_pngs(&held_out).unwrap().remove(0);
    ok(&["inpaint", "--ckpt", s(&ckpt), "--input", s(&input), "--out", s(&out)]);
    let stem = input.file_stem().unwrap().to_string_lossy().into_owned();
    let truth = read_rgb8(&input).unwrap();
    let region_mse = |img: &Path| {
        let img = read_rgb8(img).unwrap();
        let mut sum = 0.0;
        for y in 8..24 {
            for x in 8..24 {
                for c in 0..3 {
                    let d = img.get_pixel(x, y)[c] as f64 / 255.0 - truth.get_pixel(x, y)[c] as f64 / 255.0;
                    sum += d * d;
                }
            }
        }
        sum / (16.0 * 16.0 * 3.0)
    };
    let filled = region_mse(&out.join(format!("{stem}_composite.png")));
    let zeroed = region_mse(&out.join(format!("{stem}_masked.png")));
    assert!(filled < zeroed, "{filled} vs {zeroed}");
}

#[test]
fn gradcheck_passes_and_detects_a_corrupted_gradient() {
    let stdout = ok(&["gradcheck", "--size", "small"]);
    assert!(stdout.contains("all gradient checks passed"), "{stdout}");

    let out = cegan(&["gradcheck", "--perturb", "elu"]);
    assert_eq!(out.status.code(), Some(1));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.lines().any(|l| l.starts_with("failing:") && l.contains("elu")), "{stdout}");

    assert_eq!(cegan(&["gradcheck", "--perturb", "no_such_case"]).status.code(), Some(2));
}
