//! Acceptance suite. Runs every criterion and prints one PASS/FAIL line each;
//! exits non-zero if any fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;

use rand::Rng;
use rtd_forge::config::RunConfig;
use rtd_forge::costmodel::{compare, overall_ratios, param_count, ArchitectureRow, AuxMode, TrainSetup};
use rtd_forge::curriculum::{Level, Schedule};
use rtd_forge::datapack::{read_epoch, write_epoch, EpochHeader, PackedExample};
use rtd_forge::dist::{log_interpolate, Dist};
use rtd_forge::pipeline::{epoch_file_name, Session};
use rtd_forge::rtd::{
    corrupt_example, mlm_loss, rtd_loss, sample_token, sample_with_bits, sample_with_unit, CorruptOptions,
    CorruptedExample, ExampleMeta, MaskPlan, RngKey,
};
use rtd_forge::corpus::Vocab;
use rtd_forge::DistProvider64;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn rel_close(x: f64, target: f64, tol: f64) -> bool {
    ((x - target) / target).abs() <= tol
}

fn c1_compute() -> Outcome {
    let setup = TrainSetup::default();
    let mut detail = Vec::new();
    let rows = [
        ("base", ArchitectureRow::base(), [591.9, 398.6, 132.9], [990.5, 724.8], 0.73),
        ("large", ArchitectureRow::large(), [1407.7, 653.9, 218.0], [2061.6, 1625.6], 0.79),
    ];
    for (name, arch, cells, totals, ratio) in rows {
        let (main, aux) = arch.models();
        let c = compare(&main, &aux, &setup).map_err(|e| e.to_string())?;
        let g = |f: u64| f as f64 / 1e9;
        let got = [g(c.original.main.training_flops), g(c.original.aux.training_flops), g(c.fast.aux.training_flops)];
        for (x, t) in got.iter().zip(cells) {
            ensure!(rel_close(*x, t, 0.005), "{name}: {x:.1} GFLOPs vs {t}");
        }
        let tot = [g(c.original.total.training_flops), g(c.fast.total.training_flops)];
        for (x, t) in tot.iter().zip(totals) {
            ensure!(rel_close(*x, t, 0.005), "{name} total: {x:.1} vs {t}");
        }
        let r = overall_ratios(&c);
        ensure!((r.compute_ratio - ratio).abs() <= 0.01, "{name} ratio {:.4} vs {ratio}", r.compute_ratio);
        ensure!((r.aux_compute_ratio - 0.33).abs() <= 0.01, "{name} aux ratio {:.4}", r.aux_compute_ratio);
        ensure!(c.original.main.training_flops == 3 * c.original.main.forward_flops, "training != 3x forward");
        detail.push(format!(
            "{name} {:.1}/{:.1}/{:.1} totals {:.1}/{:.1} ratio {:.3}",
            got[0], got[1], got[2], tot[0], tot[1], r.compute_ratio
        ));
    }
    Ok(detail.join("; "))
}

fn c2_memory() -> Outcome {
    let mut detail = Vec::new();
    let rows = [
        ("base", ArchitectureRow::base(), [23.0, 7.0, 0.25]),
        ("large", ArchitectureRow::large(), [60.2, 14.4, 0.42]),
    ];
    for (name, arch, cells) in rows {
        let (main, aux) = arch.models();
        let c = compare(&main, &aux, &TrainSetup::default()).map_err(|e| e.to_string())?;
        let gb = |b: u64| b as f64 / 1e9;
        let got = [gb(c.original.main.total_bytes), gb(c.original.aux.total_bytes), gb(c.fast.aux.total_bytes)];
        for (x, t) in got.iter().zip(cells) {
            ensure!(rel_close(*x, t, 0.02), "{name}: {x:.4} GB vs {t}");
        }
        let offline = compare(
            &main,
            &aux,
            &TrainSetup { aux_mode: AuxMode::Offline, ..TrainSetup::default() },
        )
        .map_err(|e| e.to_string())?;
        ensure!(offline.fast.aux.total_bytes == 0 && offline.fast.aux.training_flops == 0, "offline aux not free");
        let r = overall_ratios(&c);
        detail.push(format!("{name} {:.2}/{:.2}/{:.3} GB memory ratio {:.3}", got[0], got[1], got[2], r.memory_ratio));
        if name == "large" {
            ensure!((r.memory_ratio - 0.81).abs() <= 0.01, "large memory ratio {:.4}", r.memory_ratio);
        }
    }
    Ok(detail.join("; "))
}

fn c3_params() -> Outcome {
    let mut detail = Vec::new();
    for (name, arch, cells) in [
        ("base", ArchitectureRow::base(), [184e6, 127e6, 98e6]),
        ("large", ArchitectureRow::large(), [434e6, 208e6, 131e6]),
    ] {
        let (main, aux) = arch.models();
        let got = [
            param_count(&main, true) as f64,
            param_count(&aux, true) as f64,
            main.embedding_params() as f64,
        ];
        for (x, t) in got.iter().zip(cells) {
            ensure!(rel_close(*x, t, 0.01), "{name}: {x} vs {t}");
        }
        detail.push(format!("{name} {:.2}M/{:.2}M/{:.2}M", got[0] / 1e6, got[1] / 1e6, got[2] / 1e6));
    }
    Ok(detail.join("; "))
}

fn c4_schedule() -> Outcome {
    let s = Schedule::<f64>::default();
    let t0 = s.eval_temperature(0.0).map_err(|e| e.to_string())?;
    ensure!(t0 == 2.0, "T(0) = {t0}");
    // 1 + e^-1, 30 digits.
    let expected = 1.367_879_441_171_442_321_595_523_770_161_f64;
    let t = s.eval_temperature(0.1).map_err(|e| e.to_string())?;
    ensure!((t - expected).abs() <= 1e-9, "T(0.1) = {t:.15}");
    let grid: Vec<f64> = (0..1000)
        .map(|i| s.eval_temperature(i as f64 / 999.0).unwrap())
        .collect();
    ensure!(grid.windows(2).all(|w| w[1] < w[0]), "not strictly decreasing on the grid");
    Ok(format!("T(0)=2, T(0.1)={t:.12}, 1000-point grid strictly decreasing"))
}

fn c5_temperature() -> Outcome {
    let mut r = common::rng(5);
    let n_dists = 1200;
    let mut worst = [0f64; 4];
    let mut argmax_checked = 0;
    for k in 0..n_dists {
        let n = r.random_range(2..=1000);
        let probs = common::random_probs(&mut r, n, if k % 3 == 0 { 7 } else { 0 });
        let d = Dist::dense(probs).map_err(|e| e.to_string())?;
        let t1 = 0.3 + 3.0 * r.random::<f64>();
        let t2 = 0.3 + 3.0 * r.random::<f64>();
        let a = d.temperature_scale(t1).unwrap();
        ensure!((a.sum() - 1.0).abs() <= 1e-9, "normalization off by {}", a.sum() - 1.0);
        worst[0] = worst[0].max((a.sum() - 1.0).abs());

        let same = d.temperature_scale(1.0).unwrap();
        let id_err = same.to_dense().iter().zip(d.to_dense()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        ensure!(id_err <= 1e-12, "T=1 changed a probability by {id_err}");
        worst[1] = worst[1].max(id_err);

        let composed = a.temperature_scale(t2).unwrap();
        let direct = d.temperature_scale(t1 * t2).unwrap();
        let comp_err = composed.to_dense().iter().zip(direct.to_dense()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        ensure!(comp_err <= 1e-9, "composition error {comp_err}");
        worst[2] = worst[2].max(comp_err);

        let temps = [0.25, 0.5, 1.0, 1.5, 2.0, 4.0, 10.0];
        let h: Vec<f64> = temps.iter().map(|&t| d.temperature_scale(t).unwrap().entropy()).collect();
        ensure!(h.windows(2).all(|w| w[1] >= w[0] - 1e-12), "entropy not monotone: {h:?}");

        if let Some(am) = d.unique_argmax() {
            argmax_checked += 1;
            for &t in &temps {
                ensure!(d.temperature_scale(t).unwrap().unique_argmax() == Some(am), "argmax moved at T={t}");
            }
        }

        let u = Dist::dense(vec![1.0 / n as f64; n]).unwrap();
        for gamma in [0.25, 0.5, 0.75] {
            let li = log_interpolate(&u, &d, gamma).unwrap();
            let ts = d.temperature_scale(1.0 / (1.0 - gamma)).unwrap();
            let err = li.to_dense().iter().zip(ts.to_dense()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            ensure!(err <= 1e-9, "interp vs temperature error {err} at gamma={gamma}");
            worst[3] = worst[3].max(err);
        }
    }
    Ok(format!(
        "{n_dists} distributions; max errors: norm {:.1e}, identity {:.1e}, composition {:.1e}, interp {:.1e}; argmax checked on {argmax_checked}",
        worst[0], worst[1], worst[2], worst[3]
    ))
}

fn c6_replace_rate() -> Outcome {
    let vocab = Vocab::with_size(200).unwrap();
    let provider = DistProvider64::smoothed_one_hot(0.35, &vocab, false).map_err(|e| e.to_string())?;
    // T0 = 1 keeps the temperature at exactly 1.
    let schedule = Schedule::exp_decay_t(1.0, 0.1).unwrap();
    let opts = CorruptOptions::default();
    let mut r = common::rng(6);
    let (mut masked, mut replaced, mut positions) = (0usize, 0usize, 0usize);
    let mut i = 0u64;
    while masked < 100_000 {
        let seq: Vec<u32> = (0..128).map(|_| common::zipf_token(&mut r, 200)).collect();
        let ex = corrupt_example(&seq, &provider, &schedule, 0.5, RngKey::new(6, 0, i), &opts, &vocab)
            .map_err(|e| e.to_string())?;
        masked += ex.mask.len();
        replaced += ex.replaced_count();
        positions += ex.len();
        i += 1;
    }
    let among = replaced as f64 / masked as f64;
    let overall = replaced as f64 / positions as f64;
    ensure!((0.34..=0.36).contains(&among), "replaced among masked {among:.5}");
    ensure!((0.0505..=0.0545).contains(&overall), "overall replace rate {overall:.5}");
    Ok(format!("{masked} masked positions: replaced among masked {among:.4}, overall {overall:.4}"))
}

/// Which bucket `[c_{k-1}, c_k)` of the positive entries contains `u`.
fn bucket_oracle(probs: &[f64], u: f64) -> u32 {
    let mut lo = 0.0;
    let mut last = None;
    for (id, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        let hi = lo + p;
        if lo <= u && u < hi {
            return id as u32;
        }
        lo = hi;
        last = Some(id as u32);
    }
    last.unwrap()
}

fn c7_sampler() -> Outcome {
    let mut r = common::rng(7);
    let mut checked = 0usize;
    for k in 0..300 {
        let n = r.random_range(2..=6);
        let probs = common::random_probs(&mut r, n, if k % 2 == 0 { 3 } else { 0 });
        let d = Dist::dense(probs.clone()).map_err(|e| e.to_string())?;
        let mut points = vec![0.0, 0.5, f64::from_bits(0x3FEF_FFFF_FFFF_FFFF)];
        let mut c = 0.0;
        for &p in probs.iter().filter(|&&p| p > 0.0) {
            c += p;
            points.extend([c, c.next_down(), c.next_up()]);
        }
        for u in points.into_iter().filter(|u| (0.0..1.0).contains(u)) {
            ensure!(sample_with_unit(&d, u) == bucket_oracle(&probs, u), "dist {k}: mismatch at u={u:e}");
            checked += 1;
            // The 53-bit grid neighbours of u, through the raw-bits path.
            let scaled = u * (1u64 << 53) as f64;
            for g in [scaled.floor(), scaled.ceil()] {
                if g < (1u64 << 53) as f64 {
                    let bits = (g as u64) << 11;
                    let ug = g / (1u64 << 53) as f64;
                    ensure!(sample_with_bits(&d, bits) == bucket_oracle(&probs, ug), "dist {k}: bits mismatch at {ug:e}");
                    checked += 1;
                }
            }
        }
    }

    let draws = 100_000;
    let mut worst_tv = 0f64;
    for k in 0..20u64 {
        let n = r.random_range(2..=10);
        let probs = common::random_probs(&mut r, n, 0);
        let d = Dist::dense(probs.clone()).unwrap();
        let mut hist = vec![0usize; n];
        for i in 0..draws {
            hist[sample_token(&d, RngKey::new(1000 + k, 0, i)) as usize] += 1;
        }
        let tv = 0.5 * hist.iter().zip(&probs).map(|(&h, &p)| (h as f64 / draws as f64 - p).abs()).sum::<f64>();
        ensure!(tv < 0.01, "distribution {k}: TV {tv:.5}");
        worst_tv = worst_tv.max(tv);
    }
    Ok(format!("{checked} boundary points match the bucket oracle; worst TV over 20 distributions {worst_tv:.5}"))
}

fn run_cli(args: &[&str]) -> Result<String, String> {
    let out = Command::new(common::bin()).args(args).env("RTD_FORGE_THREADS", "4").output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{args:?} exited {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr)));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn machine_field(line: &str, key: &str) -> f64 {
    let v: serde_json::Value = serde_json::from_str(line).unwrap();
    v[key].as_f64().unwrap()
}

fn c8_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let corpus_path = common::write_toy_corpus(dir.path(), 10_000, 64, 512, 8);
    let cfg_path = dir.path().join("run.toml");
    std::fs::write(
        &cfg_path,
        "corpus = \"corpus.rtdc\"\nepochs = 3\nseq_len = 64\nseed = 2024\n\n[provider]\nkind = \"smoothed_one_hot\"\nalpha = 0.35\n\n[curriculum]\nkind = \"exp_decay_t\"\nT0 = 2.0\ntau = 0.1\n",
    )
    .map_err(|e| e.to_string())?;
    let cfg = cfg_path.to_str().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let out_a = run_cli(&["dump", "--config", cfg, "--out", a.to_str().unwrap(), "--format", "machine"])?;
    run_cli(&["dump", "--config", cfg, "--out", b.to_str().unwrap(), "--format", "machine"])?;

    let temps: Vec<f64> = out_a.lines().map(|l| machine_field(l, "level")).collect();
    ensure!(temps.len() == 3, "expected 3 epoch lines, got {}", temps.len());
    ensure!(temps.windows(2).all(|w| w[1] < w[0]), "temperatures not decreasing: {temps:?}");
    let mut examples = 0;
    for e in 0..3 {
        let fa = std::fs::read(a.join(epoch_file_name(e))).map_err(|e| e.to_string())?;
        let fb = std::fs::read(b.join(epoch_file_name(e))).map_err(|e| e.to_string())?;
        ensure!(fa == fb, "epoch {e} files differ");
        let (m, it) = read_epoch(&a.join(epoch_file_name(e))).map_err(|e| e.to_string())?;
        ensure!(m.example_count >= 10_000, "only {} examples", m.example_count);
        ensure!(it.count() as u64 == m.example_count, "count mismatch");
        examples = m.example_count;
    }
    let verify = run_cli(&["verify", "--config", cfg, "--out", a.to_str().unwrap(), "--format", "machine"])?;
    ensure!(verify.lines().count() == 3 && verify.contains("\"identical\":true") && !verify.contains("false"), "verify output: {verify}");

    // Dumped records equal freshly generated ones, field for field.
    let run = RunConfig::load(Some(&cfg_path), &Default::default()).map_err(|e| e.to_string())?;
    ensure!(run.corpus == corpus_path, "corpus path resolved to {}", run.corpus.display());
    let session = Session::open(run).map_err(|e| e.to_string())?;
    let mut fresh = Vec::new();
    session.generate_epoch(2024, 1, |ex| {
        fresh.push(PackedExample::from(ex));
        Ok(())
    }).map_err(|e| e.to_string())?;
    let (m1, it) = read_epoch(&a.join(epoch_file_name(1))).map_err(|e| e.to_string())?;
    ensure!(it.collect::<Vec<_>>() == fresh, "dumped epoch 1 differs from regeneration");

    ensure!(session.verify_regeneration(&m1).map_err(|e| e.to_string())?, "verify_regeneration false on unmodified input");
    let mut seed_bumped = m1.clone();
    seed_bumped.global_seed += 1;
    ensure!(!session.verify_regeneration(&seed_bumped).map_err(|e| e.to_string())?, "seed+1 still verifies");
    let mut other_epoch = m1.clone();
    other_epoch.epoch = 2;
    ensure!(!session.verify_regeneration(&other_epoch).map_err(|e| e.to_string())?, "other epoch still verifies");

    // write/read identity on random examples.
    let mut r = common::rng(88);
    let seq_len = 48usize;
    let exs: Vec<CorruptedExample<f64>> = (0..1000u64)
        .map(|i| {
            let original: Vec<u32> = (0..seq_len).map(|_| common::zipf_token(&mut r, 300)).collect();
            let mut positions: Vec<u32> = (0..seq_len as u32).filter(|_| r.random_bool(0.2)).collect();
            if positions.is_empty() {
                positions.push(0);
            }
            let mut corrupted = original.clone();
            for &p in &positions {
                if r.random_bool(0.4) {
                    corrupted[p as usize] = r.random_range(0..300);
                }
            }
            let replaced = corrupted.iter().zip(&original).map(|(c, o)| c != o).collect();
            CorruptedExample {
                original,
                corrupted,
                replaced,
                mask: MaskPlan::new(positions, &vec![9; seq_len], &Vocab::with_size(300).unwrap()).unwrap(),
                meta: ExampleMeta { epoch: 0, example_index: i, level: Level::Temperature(1.0) },
            }
        })
        .collect();
    let header = EpochHeader { global_seed: 1, epoch: 0, total_epochs: 1, vocab_size: 300, seq_len: seq_len as u32, config_hash: 0, provider_hash: 0 };
    let path = dir.path().join("random.rtde");
    let wm = write_epoch(&exs, header, &path, None).map_err(|e| e.to_string())?;
    let (rm, it) = read_epoch(&path).map_err(|e| e.to_string())?;
    ensure!(rm == wm, "manifest changed in round trip");
    let back: Vec<PackedExample> = it.collect();
    let want: Vec<PackedExample> = exs.iter().map(PackedExample::from).collect();
    ensure!(back == want, "round trip changed examples");

    Ok(format!(
        "3 epochs x {examples} examples byte-identical across runs; verify identical; seed/epoch perturbation detected; 1000-example round trip exact"
    ))
}

fn brute_rtd(pred: &[f64], original: &[u32], replaced: &[bool], pad: u32) -> f64 {
    let mut nll = 0.0;
    for i in 0..pred.len() {
        if original[i] == pad {
            continue;
        }
        let p = pred[i].clamp(1e-7, 1.0 - 1e-7);
        let y = if replaced[i] { 1.0 } else { 0.0 };
        nll += -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
    }
    nll
}

fn c9_losses() -> Outcome {
    let vocab = Vocab::with_size(64).unwrap();
    let provider = DistProvider64::smoothed_one_hot(0.35, &vocab, false).unwrap();
    let schedule = Schedule::default();
    let opts = CorruptOptions::default();
    let mut r = common::rng(9);

    let seq: Vec<u32> = (0..512).map(|_| common::zipf_token(&mut r, 64)).collect();
    let ex = corrupt_example(&seq, &provider, &schedule, 0.0, RngKey::new(9, 0, 0), &opts, &vocab).unwrap();
    let half = rtd_loss(&vec![0.5; 512], &ex, 0).map_err(|e| e.to_string())?;
    ensure!((half - 512.0 * std::f64::consts::LN_2).abs() <= 1e-9, "p=0.5 loss {half}");

    let k = ex.mask.len();
    let v = 128_000f64;
    let mlm = mlm_loss(&vec![-v.ln(); k], &ex.mask).map_err(|e| e.to_string())?;
    ensure!((mlm - k as f64 * v.ln()).abs() <= 1e-9, "uniform-guess mlm loss {mlm}");

    let mut worst = 0f64;
    for i in 0..100u64 {
        let n = r.random_range(2..40);
        let mut seq: Vec<u32> = (0..n).map(|_| common::zipf_token(&mut r, 64)).collect();
        let pads = r.random_range(0..n / 2 + 1);
        for t in seq.iter_mut().rev().take(pads) {
            *t = 0;
        }
        if seq.iter().all(|&t| t == 0) {
            seq[0] = 7;
        }
        let ex = corrupt_example(&seq, &provider, &schedule, r.random(), RngKey::new(10, 0, i), &opts, &vocab).unwrap();
        let pred: Vec<f64> = (0..n).map(|_| r.random()).collect();
        let got = rtd_loss(&pred, &ex, 0).unwrap();
        let want = brute_rtd(&pred, &ex.original, &ex.replaced, 0);
        ensure!((got - want).abs() <= 1e-9, "example {i}: rtd {got} vs {want}");
        worst = worst.max((got - want).abs());

        let lps: Vec<f64> = (0..ex.mask.len()).map(|_| -5.0 * r.random::<f64>()).collect();
        let got = mlm_loss(&lps, &ex.mask).unwrap();
        let mut want = 0.0;
        for lp in &lps {
            want -= lp;
        }
        ensure!((got - want).abs() <= 1e-9, "example {i}: mlm {got} vs {want}");
        worst = worst.max((got - want).abs());
    }
    Ok(format!("n ln2 and K ln|V| exact to 1e-9; 100 random examples match brute force (max diff {worst:.1e})"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("compute cost (GFLOPs, totals, ratios)", c1_compute),
        ("memory cost (GB)", c2_memory),
        ("parameter counts", c3_params),
        ("exponential temperature schedule", c4_schedule),
        ("temperature-scaling properties", c5_temperature),
        ("smoothed one-hot replace rate", c6_replace_rate),
        ("inverse-CDF sampler", c7_sampler),
        ("determinism and round trip", c8_determinism),
        ("loss evaluators", c9_losses),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = std::time::Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {}: PASS  {name}: {detail} ({secs:.2}s)", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {}: FAIL  {name}: {why} ({secs:.2}s)", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
