mod common;

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use common::ops::{domain_op_errors, op_table, unet_error, worst_op_error};
use common::{dtw_by_enumeration, rng, round_trip_sweep, white};
use rand::Rng;
use stegowav::config::PipelineConfig;
use stegowav::costing::{cost_csv, cost_table, reference_entries, CostRow, REFERENCE_BASELINE_GMAC, REFERENCE_BASELINE_PARAMS};
use stegowav::embeddings::{EmbeddingContext, EmbeddingMethod};
use stegowav::imageops::{pack_grid, rgb_to_ycbcr, shuffle, unpack_grid, unshuffle, ycbcr_to_rgb, RgbImage};
use stegowav::losses::{soft_dtw_value, ContainerKind};
use stegowav::model::ModelBundle;
use stegowav::pipeline::{
    analyse, embed_full, evaluate, evaluate_sample, save_dataset, synth_dataset, train, DatasetProfile, SamplePair,
};
use stegowav::plane::Plane;
use stegowav::robustness::{robustness_sweep, sweep_csv, DropoutMode, SweepRow, DEFAULT_FRACTIONS};

type Outcome = (bool, String);

/// Writes straight to the process stdout so the line survives output capture.
fn emit(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

fn criterion(id: usize, name: &str, budget_s: Option<f64>, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let (ok, detail) = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("panicked: {msg}"))
        }
    };
    let secs = start.elapsed().as_secs_f64();
    let in_time = budget_s.is_none_or(|b| secs < b);
    let budget = budget_s.map_or(String::new(), |b| format!(" / {b:.0}s"));
    let pass = ok && in_time;
    emit(&format!(
        "{} {id:>2} {name}: {detail}{} [{secs:.1}s{budget}]",
        if pass { "PASS" } else { "FAIL" },
        if in_time { "" } else { "; over time budget" }
    ));
    pass
}

fn transforms() -> Outcome {
    let (f, c) = round_trip_sweep(10);
    (f < 1e-8 && c < 1e-8, format!("worst relative L2 stft {f:.2e}, stdct {c:.2e}"))
}

fn autodiff() -> Outcome {
    let mut worst = (0.0f64, String::new());
    let mut note = |name: String, err: f64| {
        if err >= worst.0 {
            worst = (err, name);
        }
    };
    for (kind, shapes, map) in op_table() {
        for seed in 0..10 {
            note(format!("{kind:?}"), worst_op_error(&kind, &shapes, map, seed));
        }
    }
    for seed in 0..10 {
        for (name, err) in domain_op_errors(seed) {
            note(name.to_string(), err);
        }
    }
    let unet = unet_error(0);
    note("unet".into(), unet);
    (worst.0 < 1e-4, format!("worst relative error {:.2e} ({}), unet {unet:.2e}", worst.0, worst.1))
}

fn soft_dtw() -> Outcome {
    let mut enum_err = 0.0f64;
    let mut hard_err = 0.0f64;
    let mut self_max = f64::NEG_INFINITY;
    for n in 1..=6 {
        for m in 1..=6 {
            for seed in 0..3u64 {
                let x = white(n, seed * 100 + n as u64 * 7 + m as u64);
                let y = white(m, seed * 100 + n as u64 * 7 + m as u64 + 50);
                for gamma in [0.1, 1.0] {
                    let (soft, _) = dtw_by_enumeration(&x, &y, gamma);
                    enum_err = enum_err.max((soft_dtw_value(&x, &y, gamma).unwrap() - soft).abs());
                }
                let (_, hard) = dtw_by_enumeration(&x, &y, 1.0);
                hard_err = hard_err.max((soft_dtw_value(&x, &y, 0.001).unwrap() - hard).abs());
                self_max = self_max.max(soft_dtw_value(&x, &x, 1.0).unwrap());
            }
        }
    }
    let mut grad = 0.0f64;
    for seed in 0..10 {
        let mut r = rng(seed + 500);
        let (n, m) = (r.random_range(8..=16), r.random_range(8..=16));
        let leaves = vec![
            stegowav::autodiff::Tensor::new(vec![n], white(n, seed * 2 + 900)).unwrap(),
            stegowav::autodiff::Tensor::new(vec![m], white(m, seed * 2 + 901)).unwrap(),
        ];
        for gamma in [0.1, 1.0] {
            let e = stegowav::autodiff::grad_check(&leaves, |_, v| stegowav::losses::soft_dtw(v[0], v[1], gamma)).unwrap();
            grad = grad.max(e);
        }
    }
    (
        enum_err < 1e-9 && grad < 1e-4 && self_max <= 0.0 && hard_err < 1e-3,
        format!(
            "enumeration {enum_err:.1e}, gradient {grad:.1e}, max self value {self_max:.3}, gamma 0.001 vs hard {hard_err:.1e}"
        ),
    )
}

fn shuffle_luma() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..100u64 {
        let mut r = rng(seed + 7000);
        let (h, w) = (r.random_range(1..20), r.random_range(1..20));
        let img = RgbImage::new(h, w, (0..3 * h * w).map(|_| r.random_range(0.0..1.0)).collect()).unwrap();
        for luma in [false, true] {
            let back = unshuffle(&shuffle(&img, luma), luma).unwrap();
            for (a, b) in back.data().iter().zip(img.data()) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    let mut ycc = 0.0f64;
    let mut r = rng(77);
    for _ in 0..10_000 {
        let px = [r.random_range(0.0..1.0), r.random_range(0.0..1.0), r.random_range(0.0..1.0)];
        let back = ycbcr_to_rgb(rgb_to_ycbcr(px));
        for (a, b) in back.iter().zip(px) {
            ycc = ycc.max((a - b).abs());
        }
    }
    let mut gray_exact = true;
    for i in 0..=1000 {
        let v = i as f64 / 1000.0 + if i % 2 == 1 { 1e-4 * (i as f64).sin() } else { 0.0 };
        let v = v.clamp(0.0, 1.0);
        gray_exact &= rgb_to_ycbcr([v; 3]) == [v, 0.5, 0.5];
        let img = RgbImage::filled(1, 1, [v; 3]);
        gray_exact &= shuffle(&img, true).data().iter().all(|&x| x == v);
        gray_exact &= unshuffle(&shuffle(&img, true), true).unwrap() == img;
    }
    (
        worst < 1e-9 && ycc < 1e-9 && gray_exact,
        format!("shuffle round trip {worst:.1e}, ycbcr round trip {ycc:.1e}, gray fixed point exact: {gray_exact}"),
    )
}

fn geometry() -> Outcome {
    let mut ok = true;
    let mut counts = Vec::new();
    for size in [16usize, 256] {
        for method in EmbeddingMethod::ALL {
            for large in [false, true] {
                let ctx = EmbeddingContext::new(method, large, size, size).unwrap();
                let (f, t) = ctx.container_shape();
                let c = Plane::from_fn(f, t, |y, x| (y * t + x) as f64);
                let parts = unpack_grid(&c, ctx.grid).unwrap();
                let mut seen = vec![0u8; f * t];
                for p in &parts {
                    for &v in p.data() {
                        seen[v as usize] += 1;
                    }
                }
                ok &= seen.iter().all(|&s| s == 1) && pack_grid(&parts, ctx.grid).unwrap() == c;
                if size == 256 && matches!(method, EmbeddingMethod::Replicate | EmbeddingMethod::Multichannel) {
                    counts.push((method, large, ctx.replicas(), ctx.grid.rows, ctx.grid.cols));
                }
            }
        }
    }
    let expect = [
        (EmbeddingMethod::Replicate, false, 2, 2, 1),
        (EmbeddingMethod::Replicate, true, 8, 4, 2),
        (EmbeddingMethod::Multichannel, false, 8, 4, 2),
        (EmbeddingMethod::Multichannel, true, 32, 8, 4),
    ];
    let counts_ok = expect.iter().all(|e| counts.contains(e));
    (
        ok && counts_ok,
        format!(
            "exact partitions: {ok}; replicas plane small/large {}/{}, multichannel small/large {}/{}",
            counts[0].2, counts[1].2, counts[2].2, counts[3].2
        ),
    )
}

fn isolation() -> Outcome {
    let data = synth_dataset(2, DatasetProfile::Desk, 3).unwrap();
    let mut ok = true;
    let mut changed = 0.0f64;
    for (container, kept) in [(ContainerKind::Magnitude, "phase"), (ContainerKind::Phase, "magnitude")] {
        let cfg = PipelineConfig { loss: stegowav::losses::LossConfig { container, ..Default::default() }, ..PipelineConfig::default() };
        let m = ModelBundle::new(&cfg).unwrap();
        for pair in &data {
            let e = embed_full(&pair.secret, &pair.cover, &m).unwrap();
            let cover = analyse(&pair.cover, &m).unwrap();
            let (same, moved) = match kept {
                "phase" => (&e.spectrogram.phase, (&e.spectrogram.magnitude, &cover.magnitude)),
                _ => (&e.spectrogram.magnitude, (&e.spectrogram.phase, &cover.phase)),
            };
            let untouched = if kept == "phase" { &cover.phase } else { &cover.magnitude };
            ok &= same.data().iter().zip(untouched.data()).all(|(a, b)| a.to_bits() == b.to_bits());
            let d = moved.0.data().iter().zip(moved.1.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            changed = changed.max(d);
        }
    }
    (
        ok && changed > 0.0,
        format!("untouched plane bit-identical: {ok}; largest change in the carrying plane {changed:.3e}"),
    )
}

/// L1 error of the best constant gray image (the per-sample median).
fn constant_baseline(data: &[SamplePair]) -> f64 {
    data.iter()
        .map(|p| {
            let mut v = p.secret.data().to_vec();
            v.sort_by(f64::total_cmp);
            let med = v[v.len() / 2];
            v.iter().map(|x| (x - med).abs()).sum::<f64>() / v.len() as f64
        })
        .sum::<f64>()
        / data.len() as f64
}

fn training(models: &mut Vec<(EmbeddingMethod, ModelBundle)>, data: &[SamplePair]) -> Outcome {
    let baseline = constant_baseline(data);
    let mut ok = true;
    let mut parts = Vec::new();
    for method in EmbeddingMethod::ALL {
        let cfg = PipelineConfig { method, steps: 300, seed: 0, ..DatasetProfile::Desk.config() };
        let (m, log) = train(data, &cfg).unwrap();
        let ratio = log.last[0] / log.initial[0];
        let l1 = data.iter().map(|p| evaluate_sample(&m, p).unwrap().image.l1).sum::<f64>() / data.len() as f64;
        ok &= ratio <= 0.5 && l1 < baseline;
        parts.push(format!("{method} loss x{ratio:.3} L1 {l1:.4}"));
        models.push((method, m));
    }
    for container in [ContainerKind::Dual, ContainerKind::Phase] {
        let mut cfg = PipelineConfig { steps: 50, seed: 0, ..DatasetProfile::Desk.config() };
        cfg.loss.container = container;
        match train(data, &cfg) {
            Ok((_, log)) => parts.push(format!("{} 50 steps ok (loss x{:.3})", container.as_str(), log.last[0] / log.initial[0])),
            Err(e) => {
                ok = false;
                parts.push(format!("{} failed: {e}", container.as_str()));
            }
        }
    }
    (ok, format!("constant baseline L1 {baseline:.4}; {}", parts.join("; ")))
}

fn robustness(models: &[(EmbeddingMethod, ModelBundle)], data: &[SamplePair]) -> Outcome {
    if models.is_empty() {
        return (false, "no trained models".into());
    }
    let mut ok = true;
    let mut full_err = 0.0f64;
    let mut notes = Vec::new();
    let mut all: Vec<SweepRow> = Vec::new();
    for (method, m) in models {
        let rows = robustness_sweep(m, data, &DEFAULT_FRACTIONS, &DropoutMode::ALL, 0).unwrap();
        let base = evaluate(m, data).unwrap();
        for r in rows.iter().filter(|r| r.keep_fraction == 1.0) {
            full_err = full_err.max((r.mean_ssim - base.ssim).abs()).max((r.mean_psnr_db - base.psnr_db).abs());
        }
        for mode in DropoutMode::ALL {
            let mut series: Vec<&SweepRow> = rows.iter().filter(|r| r.mode == mode).collect();
            series.sort_by(|a, b| b.keep_fraction.total_cmp(&a.keep_fraction));
            let rises: Vec<f64> = series
                .windows(2)
                .map(|w| w[1].mean_ssim - w[0].mean_ssim)
                .filter(|&d| d > 0.0)
                .collect();
            let monotone = rises.is_empty() || (rises.len() == 1 && rises[0] <= 0.02);
            if !monotone {
                ok = false;
                let ssim: Vec<String> = series.iter().map(|r| format!("{}:{:.4}", r.keep_fraction, r.mean_ssim)).collect();
                notes.push(format!("{method}/{} not monotone ({})", mode.as_str(), ssim.join(" ")));
            }
        }
        all.extend(rows);
    }
    ok &= full_err < 1e-12;
    let at = |method: &str, mode: DropoutMode| {
        all.iter()
            .find(|r| r.method == method && r.mode == mode && r.keep_fraction == 0.5)
            .map(|r| r.mean_ssim)
    };
    for mode in DropoutMode::ALL {
        if let (Some(rep), Some(st)) = (at("replicate", mode), at("stretch", mode)) {
            let gap = rep - st;
            notes.push(format!(
                "replicate-stretch SSIM gap at p=0.5 {}: {gap:+.4} ({})",
                mode.as_str(),
                if gap > 0.0 { "replicate ahead" } else { "stretch ahead" }
            ));
        }
    }
    (ok, format!("{} rows; full-keep deviation {full_err:.1e}; {}", all.len(), notes.join("; ")))
}

fn costs() -> Outcome {
    let rows = cost_table(&reference_entries(&PipelineConfig::default())).unwrap();
    let row = |n: &str| -> &CostRow { rows.iter().find(|r| r.name == n).unwrap() };
    let base = row("baseline");
    let checks = [
        ("replicate +0", row("replicate").param_delta == 0),
        ("w_replicate +4", row("w_replicate").param_delta == 4),
        ("dual 2x+3", row("stft_magnitude_phase").params == 2 * base.params + 3),
        ("luma +0", row("luma").param_delta == 0),
        ("stretch=replicate MACs small", row("l1_loss").macs == row("replicate").macs),
        ("stretch=replicate MACs large", row("stretch_large").macs == row("replicate_large").macs),
        ("large MAC delta > 0", row("stretch_large").mac_delta_pct > 0.0 && row("replicate_large").mac_delta_pct > 0.0),
        (
            "large delta in container stage",
            row("stretch_large").macs.container > row("l1_loss").macs.container
                && row("stretch_large").macs.image == row("l1_loss").macs.image,
        ),
    ];
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    let large = row("stretch_large");
    (
        failed.is_empty(),
        format!(
            "{}; baseline {} params {} MACs (reference {REFERENCE_BASELINE_PARAMS} params, {REFERENCE_BASELINE_GMAC} GMAC, +200.00% large); \
             stretch_large {:+.2}% = container {} + image {}",
            if failed.is_empty() { "all structural deltas hold".to_string() } else { format!("failed: {}", failed.join(", ")) },
            base.params,
            base.macs.total(),
            large.mac_delta_pct,
            large.macs.container,
            large.macs.image
        ),
    )
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn determinism() -> Outcome {
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let data = synth_dataset(4, DatasetProfile::Desk, 11).unwrap();
        save_dataset(dir.path(), &data).unwrap();
        let cfg = PipelineConfig { method: EmbeddingMethod::WReplicate, steps: 5, seed: 3, ..DatasetProfile::Desk.config() };
        let (m, log) = train(&data, &cfg).unwrap();
        let rows = robustness_sweep(&m, &data, &DEFAULT_FRACTIONS, &DropoutMode::ALL, 4).unwrap();
        let cost = cost_csv(&cost_table(&reference_entries(&PipelineConfig::default())).unwrap());
        (
            dir_bytes(dir.path()),
            m.to_bytes(),
            log.to_csv(),
            evaluate(&m, &data).unwrap().to_csv(),
            sweep_csv(&rows),
            cost,
        )
    };
    let (a, b) = (run(), run());
    let same = [a.0 == b.0, a.1 == b.1, a.2 == b.2, a.3 == b.3, a.4 == b.4, a.5 == b.5];
    let names = ["dataset", "checkpoint", "train log", "metrics", "sweep", "cost"];
    let bad: Vec<&str> = names.iter().zip(same).filter(|(_, s)| !s).map(|(n, _)| *n).collect();
    (
        bad.is_empty(),
        if bad.is_empty() {
            format!("byte-identical across two runs: {}", names.join(", "))
        } else {
            format!("differs: {}", bad.join(", "))
        },
    )
}

#[test]
fn acceptance() {
    let mut results = Vec::new();
    results.push(criterion(1, "transform round trips", Some(10.0), transforms));
    results.push(criterion(2, "autodiff gradient checks", Some(60.0), autodiff));
    results.push(criterion(3, "soft-DTW", Some(30.0), soft_dtw));
    results.push(criterion(4, "pixel shuffle and luma", None, shuffle_luma));
    results.push(criterion(5, "embedding geometry", None, geometry));
    results.push(criterion(6, "container isolation", None, isolation));
    let data = synth_dataset(16, DatasetProfile::Desk, 0).unwrap();
    let mut models = Vec::new();
    results.push(criterion(7, "training smoke", Some(600.0), || training(&mut models, &data)));
    results.push(criterion(8, "robustness harness", None, || robustness(&models, &data)));
    results.push(criterion(9, "cost structure", None, costs));
    results.push(criterion(10, "determinism", None, determinism));
    let passed = results.iter().filter(|&&r| r).count();
    emit(&format!("acceptance: {passed}/{} criteria passed", results.len()));
    assert_eq!(passed, results.len(), "acceptance criteria failed");
}
