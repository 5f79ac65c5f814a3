use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_stegowav");

fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env("STEGOWAV_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Runs the whole workflow in `dir` and returns the written artefacts.
fn workflow(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let data = dir.join("data");
    let model = dir.join("model.ckpt");
    ok(&["synth", "--profile", "desk", "--count", "3", "--seed", "5", "--out", p(&data)]);
    ok(&[
        "train", "--data", p(&data), "--out", p(&model), "--steps", "3", "--seed", "2",
        "--method", "w_replicate", "--set", "batch_size=2",
    ]);
    let stego = dir.join("stego.wav");
    let embed = ok(&[
        "embed", "--model", p(&model), "--image", p(&data.join("pair_0000.ppm")),
        "--audio", p(&data.join("pair_0000.wav")), "--out", p(&stego),
    ]);
    assert!(embed.contains("snr_db="));
    let revealed = dir.join("revealed.ppm");
    let scores = ok(&[
        "reveal", "--model", p(&model), "--audio", p(&stego), "--out", p(&revealed),
        "--secret", p(&data.join("pair_0000.ppm")),
    ]);
    assert!(scores.starts_with("ssim,psnr_db,hist_l1,l1\n"));
    let eval = dir.join("eval.csv");
    ok(&["eval", "--model", p(&model), "--data", p(&data), "--out", p(&eval)]);
    let sweep = dir.join("sweep.csv");
    ok(&[
        "robustness", "--model", p(&model), "--data", p(&data), "--fractions", "1.0,0.5,0.25",
        "--out", p(&sweep),
    ]);
    let cost = dir.join("cost.csv");
    let table = ok(&["cost", "--out", p(&cost)]);
    assert!(table.contains("962128"));
    let spec = dir.join("spec.pgm");
    ok(&["spectrogram", "--model", p(&model), "--audio", p(&stego), "--out", p(&spec)]);

    let mut files = vec![
        model.clone(),
        model.with_extension("csv"),
        stego,
        revealed,
        eval,
        sweep,
        cost,
        spec,
    ];
    for i in 0..3 {
        files.push(data.join(format!("pair_{i:04}.ppm")));
        files.push(data.join(format!("pair_{i:04}.wav")));
    }
    files
        .into_iter()
        .map(|f| (f.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&f).unwrap()))
        .collect()
}

#[test]
fn workflow_outputs_are_well_formed_and_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = workflow(a.path());
    let second = workflow(b.path());
    for ((name, x), (_, y)) in first.iter().zip(&second) {
        assert!(x == y, "{name} differs between runs");
    }
    let text = |name: &str| String::from_utf8(first.iter().find(|f| f.0 == name).unwrap().1.clone()).unwrap();
    let sweep = text("sweep.csv");
    assert_eq!(sweep.lines().count(), 1 + 3 * 2);
    assert!(sweep.starts_with("method,mode,keep_fraction,mean_ssim,mean_psnr_db\n"));
    let eval = text("eval.csv");
    assert_eq!(eval.lines().count(), 2);
    assert!(eval.lines().nth(1).unwrap().starts_with("w_replicate,"));
    assert_eq!(text("model.csv").lines().count(), 1 + 3);
    assert_eq!(text("cost.csv").lines().count(), 1 + 15);
    assert!(first.iter().find(|f| f.0 == "spec.pgm").unwrap().1.starts_with(b"P5"));
}

#[test]
fn help_exits_zero_for_every_subcommand() {
    let top = ok(&["--help"]);
    for sub in ["synth", "train", "embed", "reveal", "eval", "robustness", "cost", "spectrogram"] {
        assert!(top.contains(sub));
        let help = ok(&[sub, "--help"]);
        assert!(help.contains("--"), "{sub}");
    }
    let train = ok(&["train", "--help"]);
    for flag in ["--config", "--set", "--data", "--out", "--log", "--steps", "--seed", "--method"] {
        assert!(train.contains(flag), "{flag}");
    }
}

#[test]
fn missing_input_exits_two_and_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.ckpt");
    let out = run(&["eval", "--model", p(&missing), "--data", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.ckpt"));
}

#[test]
fn bad_configuration_exits_one() {
    let out = run(&["cost", "--set", "no_such_key=1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_key"));
    let out = run(&["cost", "--set", "beta=2"]);
    assert_eq!(out.status.code(), Some(1));
    let out = run(&["synth", "--count"]);
    assert_eq!(out.status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "method = sideways\n").unwrap();
    let out = run(&["cost", "--config", p(&cfg)]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn config_file_and_flags_compose() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# desk run\nmethod = replicate\nunet_depth = 2\n").unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    ok(&["cost", "--config", p(&cfg), "--out", p(&a)]);
    ok(&["cost", "--config", p(&cfg), "--set", "unet_depth=3", "--out", p(&b)]);
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let c = dir.path().join("c.csv");
    ok(&["cost", "--out", p(&c)]);
    assert_eq!(std::fs::read(&b).unwrap(), std::fs::read(&c).unwrap());
}
