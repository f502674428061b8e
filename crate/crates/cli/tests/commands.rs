use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command as Process;

use clap::Parser;
use wavebridge::denoiser::{Checkpoint, TinyWaveNet};
use wavebridge::dsp::read_wav;
use wavebridge::harness::config::Config;
use wavebridge_cli::*;

const TINY: &str = "seed = 11
[model]
channels = 4
layers = 2
[train]
batch_size = 2
window_len = 1024
steps = 3
lr = 1e-3
log_every = 1
[finetune]
steps = 2
[aux]
resolutions = [256, 512]
[data]
duration_secs = 0.1
input_rate = 8000.0
train_items = 3
";

fn bin() -> Process {
    Process::new(env!("CARGO_BIN_EXE_wavebridge"))
}

fn parse(args: &[&str]) -> Cli {
    Cli::try_parse_from(std::iter::once("wavebridge").chain(args.iter().copied())).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Corpus {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
    pairs: PathBuf,
}

fn corpus() -> Corpus {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let config = root.join("tiny.toml");
    fs::write(&config, TINY).unwrap();
    let Command::Synth(a) = parse(&["synth", "--config", s(&config), "--out", s(&root.join("src"))]).command else {
        unreachable!()
    };
    let manifest = cmd_synth(&a).unwrap();
    let Command::Degrade(a) = parse(&["degrade", "--config", s(&config), "--manifest", s(&manifest), "--out", s(&root.join("deg"))]).command
    else {
        unreachable!()
    };
    let pairs = cmd_degrade(&a).unwrap();
    Corpus {
        _dir: dir,
        root,
        config,
        pairs,
    }
}

fn train(c: &Corpus, out: &str, steps: u64) -> PathBuf {
    let Command::Train(a) = parse(&[
        "train",
        "--config",
        s(&c.config),
        "--pairs",
        s(&c.pairs),
        "--out",
        s(&c.root.join(out)),
        "--steps",
        &steps.to_string(),
    ])
    .command
    else {
        unreachable!()
    };
    cmd_train(&a).unwrap()
}

fn lr_files(c: &Corpus) -> Vec<PathBuf> {
    let mut v: Vec<_> = fs::read_dir(c.root.join("deg/lr")).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    v
}

fn sample(ckpt: &Path, out: &Path, extra: &[&str], inputs: &[PathBuf]) -> Vec<(PathBuf, usize)> {
    let mut args = vec!["sample", "--checkpoint", s(ckpt), "--out", s(out)];
    args.extend_from_slice(extra);
    args.extend(inputs.iter().map(|p| s(p)));
    let Command::Sample(a) = parse(&args).command else { unreachable!() };
    cmd_sample(&a).unwrap()
}

#[test]
fn empty_manifest_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("empty.csv");
    fs::write(&m, "path\n").unwrap();
    let st = bin()
        .args(["degrade", "--manifest", s(&m), "--out", s(&dir.path().join("o"))])
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(3));
}

#[test]
fn exit_codes_for_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[train]\nbogus = 1\n").unwrap();
    let st = bin()
        .args(["inspect-schedule", "--config", s(&cfg), "--out", s(&dir.path().join("x.csv"))])
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(2));
    let st = bin().args(["sample", "--preset", "3", "x.wav"]).status().unwrap();
    assert_eq!(st.code(), Some(2));
}

#[test]
fn degrade_is_deterministic() {
    let a = corpus();
    let b = corpus();
    let read = |c: &Corpus, sub: &str| -> Vec<Vec<u8>> {
        let mut files: Vec<_> = fs::read_dir(c.root.join(sub)).unwrap().map(|e| e.unwrap().path()).collect();
        files.sort();
        files.iter().map(|p| fs::read(p).unwrap()).collect()
    };
    for sub in ["deg/hr", "deg/lr"] {
        assert_eq!(read(&a, sub), read(&b, sub));
    }
    assert_eq!(fs::read(&a.pairs).unwrap(), fs::read(&b.pairs).unwrap());
}

#[test]
fn zero_step_checkpoint_equals_initialization() {
    let c = corpus();
    let ckpt = Checkpoint::load(train(&c, "t0", 0)).unwrap();
    assert_eq!(ckpt.step, 0);
    let cfg = Config::load(&c.config).unwrap();
    let init = TinyWaveNet::new(cfg.model, cfg.seed).unwrap();
    assert_eq!(ckpt.params.len(), init.params().len());
    for (p, q) in ckpt.params.iter().zip(init.params()) {
        assert_eq!(p.name, q.name);
        // parameters live on the f32 grid
        let want: Vec<f64> = q.tensor.data().iter().map(|&v| v as f32 as f64).collect();
        assert_eq!(p.tensor.data(), &want[..]);
    }
}

#[test]
fn train_resume_matches_uninterrupted_run() {
    let c = corpus();
    let full = Checkpoint::load(train(&c, "full", 4)).unwrap();
    let half = train(&c, "half", 2);
    let Command::Train(a) = parse(&[
        "train",
        "--pairs",
        s(&c.pairs),
        "--out",
        s(&c.root.join("half")),
        "--steps",
        "4",
        "--resume",
        s(&half),
    ])
    .command
    else {
        unreachable!()
    };
    let resumed = Checkpoint::load(cmd_train(&a).unwrap()).unwrap();
    assert_eq!(resumed, full);
    let log_full = fs::read_to_string(c.root.join("full").join(LOSS_FILE)).unwrap();
    let log_half = fs::read_to_string(c.root.join("half").join(LOSS_FILE)).unwrap();
    assert_eq!(log_full, log_half);
    assert_eq!(log_full.lines().count(), 5);
    assert!(log_full.starts_with("step,l_bridge,l_mag,l_phase,l_total"));
}

#[test]
fn finetune_requires_checkpoint() {
    let c = corpus();
    let st = bin()
        .args([
            "finetune",
            "--checkpoint",
            s(&c.root.join("missing.bsrk")),
            "--pairs",
            s(&c.pairs),
            "--out",
            s(&c.root.join("ft")),
        ])
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(3));

    let ckpt = train(&c, "t", 2);
    let Command::Finetune(a) = parse(&["finetune", "--checkpoint", s(&ckpt), "--pairs", s(&c.pairs), "--out", s(&c.root.join("ft"))]).command
    else {
        unreachable!()
    };
    let out = Checkpoint::load(cmd_finetune(&a).unwrap()).unwrap();
    assert_eq!(out.step, 4);
    let log = fs::read_to_string(c.root.join("ft").join(LOSS_FILE)).unwrap();
    let last = log.lines().last().unwrap();
    let mag: f64 = last.split(',').nth(2).unwrap().parse().unwrap();
    assert!(mag > 0.0);
}

#[test]
fn presets_cost_their_nfe() {
    let c = corpus();
    let ckpt = train(&c, "t", 1);
    let inputs = lr_files(&c);
    for (preset, nfe) in [("1", 1), ("2", 2), ("4", 4)] {
        let out = sample(&ckpt, &c.root.join(format!("p{preset}")), &["--preset", preset], &inputs);
        assert_eq!(out.len(), inputs.len());
        assert!(out.iter().all(|(_, n)| *n == nfe), "{out:?}");
    }
    let out = sample(&ckpt, &c.root.join("lin"), &["--steps", "5", "--sampler", "sde2"], &inputs[..1]);
    assert_eq!(out[0].1, 10);
}

#[test]
fn ode_sampling_is_bitwise_deterministic_and_keeps_duration() {
    let c = corpus();
    let ckpt = train(&c, "t", 2);
    let inputs = lr_files(&c);
    let a = sample(&ckpt, &c.root.join("a"), &["--steps", "3"], &inputs);
    let b = sample(&ckpt, &c.root.join("b"), &["--steps", "3"], &inputs);
    for ((pa, _), (pb, _)) in a.iter().zip(&b) {
        assert_eq!(fs::read(pa).unwrap(), fs::read(pb).unwrap());
    }
    for (input, (out, _)) in inputs.iter().zip(&a) {
        let x = read_wav(input).unwrap();
        let y = read_wav(out).unwrap();
        assert_eq!((y.len(), y.rate), (x.len(), x.rate));
        assert_eq!(y.duration_secs(), x.duration_secs());
    }
    // SDE paths repeat under the same seed and change with another
    let s1 = sample(&ckpt, &c.root.join("s1"), &["--sampler", "sde1", "--seed", "5"], &inputs[..1]);
    let s2 = sample(&ckpt, &c.root.join("s2"), &["--sampler", "sde1", "--seed", "5"], &inputs[..1]);
    let s3 = sample(&ckpt, &c.root.join("s3"), &["--sampler", "sde1", "--seed", "6"], &inputs[..1]);
    assert_eq!(fs::read(&s1[0].0).unwrap(), fs::read(&s2[0].0).unwrap());
    assert_ne!(fs::read(&s1[0].0).unwrap(), fs::read(&s3[0].0).unwrap());
}

#[test]
fn eval_writes_csv_and_aggregate_json() {
    let c = corpus();
    let csv_path = c.root.join("eval.csv");
    let json_path = c.root.join("eval.json");
    let Command::Eval(a) = parse(&["eval", "--pairs", s(&c.pairs), "--out-csv", s(&csv_path), "--out-json", s(&json_path)]).command else {
        unreachable!()
    };
    let agg = cmd_eval(&a).unwrap();
    assert_eq!(agg.n, 3);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&json_path).unwrap()).unwrap();
    let mut keys: Vec<_> = json.as_object().unwrap().keys().cloned().collect();
    keys.sort();
    assert_eq!(keys, ["lsd", "lsd_hf", "lsd_lf", "n", "si_snr", "ssim"]);
    let text = fs::read_to_string(&csv_path).unwrap();
    assert!(text.starts_with("id,lsd,lsd_lf,lsd_hf,si_snr,ssim,cutoff_hz"));
    assert_eq!(text.lines().count(), 4);

    // a missing prediction is a data error
    let st = bin()
        .args([
            "eval",
            "--pairs",
            s(&c.pairs),
            "--pred-dir",
            s(&c.root.join("nowhere")),
            "--out-csv",
            s(&csv_path),
            "--out-json",
            s(&json_path),
        ])
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(3));
}

#[test]
fn inspect_schedule_writes_default_grid() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sched.csv");
    let st = bin().args(["inspect-schedule", "--out", s(&out)]).status().unwrap();
    assert!(st.success());
    let mut rdr = csv::Reader::from_path(&out).unwrap();
    let headers = rdr.headers().unwrap().clone();
    assert_eq!(
        headers.iter().collect::<Vec<_>>(),
        ["t", "a_t", "b_t", "c_t", "sigma2_t", "sigma_bar2_t", "lf_energy_bridge", "lf_energy_diffusion"]
    );
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 1001);
    for r in &rows {
        let a: f64 = r[1].parse().unwrap();
        let b: f64 = r[2].parse().unwrap();
        assert!((a + b - 1.0).abs() < 1e-12);
    }
    let last: f64 = rows[1000][7].parse().unwrap();
    assert!(last < 0.01);
}

#[test]
fn benchmark_emits_grid() {
    let c = corpus();
    let cfg = c.root.join("bench.toml");
    fs::write(&cfg, format!("{TINY}test_items = 2\n[benchmark]\nsteps = [2]\n")).unwrap();
    let out = bin()
        .args([
            "benchmark",
            "--config",
            s(&cfg),
            "--out-csv",
            s(&c.root.join("b.csv")),
            "--out-json",
            s(&c.root.join("b.json")),
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS") || l.starts_with("FAIL")).count(), 5);
    let text = fs::read_to_string(c.root.join("b.csv")).unwrap();
    assert!(text.starts_with("variant,schedule,steps,nfe,lsd,lsd_lf,lsd_hf,si_snr,ssim,l_mag,n"));
    assert_eq!(text.lines().count(), 5);
}
