use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use aeromamba::dsp::{load_wav, save_wav, AudioBuffer, BitDepth};
use aeromamba::model::{param_count, Checkpoint};
use aeromamba::train::RunConfig;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_aeromamba"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn noise_wav(path: &Path, n: usize) {
    let mut s = 12345u64;
    let x: Vec<f32> = (0..n)
        .map(|_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 40) as f32 / (1u64 << 24) as f32) - 0.5
        })
        .collect();
    save_wav(&AudioBuffer::mono(x, 44100).unwrap(), path, BitDepth::Float32).unwrap();
}

const TINY: &str = "[train]\nmax_steps = 2\nepochs = 0\nbatch_size = 1\nsegment_length = 20480\nval_every = 1\n\n\
[generator]\ndepth = 2\nbase_channels = 8\nmax_channels = 16\n";

/// Corpus plus a two-step training run; returns (data dir, run dir).
fn trained(root: &Path) -> (PathBuf, PathBuf) {
    let data = root.join("data");
    let o = run(&["synth-data", "--seed", "3", "--tracks", "3", "--seconds", "0.6", "--out", p(&data)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let cfg = root.join("run.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let out = root.join("run");
    let o = run(&["train", "--config", p(&cfg), "--data", p(&data), "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    (data, out)
}

#[test]
fn help_lists_commands_and_defaults() {
    let o = run(&["--help"]);
    assert_eq!(code(&o), 0);
    for c in ["degrade", "synth-data", "train", "enhance", "eval", "bench", "inspect-checkpoint"] {
        assert!(stdout(&o).contains(c), "{c}");
    }
    let o = run(&["degrade", "--help"]);
    assert!(stdout(&o).contains("[default: 11025]"));
    let o = run(&["bench", "--help"]);
    assert!(stdout(&o).contains("[default: 1,2,5,10,20]"));
    let o = run(&["enhance", "--help"]);
    assert!(stdout(&o).contains("--chunk-frames") && stdout(&o).contains("[default: 0]"));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&run(&[])), 2);
    assert_eq!(code(&run(&["degrade", "--bogus"])), 2);
    assert_eq!(code(&run(&["frobnicate"])), 2);
    let o = bin().args(["inspect-checkpoint", "x"]).env("AEROMAMBA_THREADS", "lots").output().unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn degrade_rates_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.wav");
    noise_wav(&input, 8000);
    let out = dir.path().join("out.wav");
    assert_eq!(code(&run(&["degrade", "--in", p(&input), "--out", p(&out)])), 0);
    assert_eq!(load_wav::<f32>(&out).unwrap().len(), 8000);
    assert_eq!(code(&run(&["degrade", "--in", p(&input), "--out", p(&out), "--low-rate", "22050"])), 0);
    let o = run(&["degrade", "--in", p(&input), "--out", p(&out), "--low-rate", "30000"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("decimation factor must be an integer"));
    let o = run(&["degrade", "--in", p(&dir.path().join("missing.wav")), "--out", p(&out)]);
    assert_eq!(code(&o), 3);
    std::fs::write(dir.path().join("junk.wav"), b"RIFFjunk").unwrap();
    assert_eq!(code(&run(&["degrade", "--in", p(&dir.path().join("junk.wav")), "--out", p(&out)])), 3);
}

#[test]
fn train_inspect_enhance_eval_bench() {
    let dir = tempfile::tempdir().unwrap();
    let (data, run_dir) = trained(dir.path());
    let metrics = std::fs::read_to_string(run_dir.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().next().unwrap(), "step,L_G,L_adv,L_rec,L_fmap,L_D,val_lsd");
    assert_eq!(metrics.lines().count(), 3);

    let ckpt = run_dir.join("best.amba");
    let o = run(&["inspect-checkpoint", p(&ckpt)]);
    assert_eq!(code(&o), 0);
    let report = param_count(&RunConfig::from_toml(TINY).unwrap().generator);
    assert!(stdout(&o).contains(&format!("tensors: {}\n", report.entries.len())), "{}", stdout(&o));
    assert!(stdout(&o).contains(&format!("parameters: {}\n", report.total)));

    let input = data.join("val").join("degraded");
    let wav = std::fs::read_dir(&input).unwrap().next().unwrap().unwrap().path();
    let (off, st) = (dir.path().join("off.wav"), dir.path().join("st.wav"));
    assert_eq!(code(&run(&["enhance", "--checkpoint", p(&ckpt), "--in", p(&wav), "--out", p(&off)])), 0);
    let o = run(&["enhance", "--checkpoint", p(&ckpt), "--in", p(&wav), "--out", p(&st), "--streaming", "--chunk-frames", "32"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (a, b) = (load_wav::<f64>(&off).unwrap(), load_wav::<f64>(&st).unwrap());
    assert_eq!(a.len(), load_wav::<f64>(&wav).unwrap().len());
    let err = a.channel(0).iter().zip(b.channel(0)).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(err <= 1e-4, "{err}");
    let o = run(&["enhance", "--checkpoint", p(&ckpt), "--in", p(&wav), "--out", p(&st), "--streaming", "--chunk-frames", "5"]);
    assert_eq!(code(&o), 2);

    let clean = data.join("train").join("clean");
    let csv = dir.path().join("eval.csv");
    let o = run(&["eval", "--ref", p(&clean), "--est", p(&clean), "--csv", p(&csv)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "metric,track_id,value");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.starts_with("lsd,") && r.ends_with(",0")), "{rows:?}");

    let degraded = data.join("train").join("degraded");
    let o = run(&["eval", "--ref", p(&clean), "--est", p(&clean), "--est", p(&degraded), "--csv", p(&csv)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("lsd_a,")).count(), 2);
    assert_eq!(text.lines().filter(|l| l.starts_with("lsd_b,")).count(), 2);
    assert!(text.lines().last().unwrap().starts_with("mw_u,"));

    let bench_csv = dir.path().join("bench.csv");
    let o = run(&["bench", "--checkpoint", p(&ckpt), "--csv", p(&bench_csv), "--segments", "0.5,1", "--repeats", "1"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = std::fs::read_to_string(&bench_csv).unwrap();
    assert_eq!(text.lines().next().unwrap(), "mode,segment_s,median_s,state_bytes,rt_factor");
    assert_eq!(text.lines().count(), 7);
}

#[test]
fn checkpoint_errors_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let (data, run_dir) = trained(dir.path());
    let wav = std::fs::read_dir(data.join("train").join("degraded")).unwrap().next().unwrap().unwrap().path();
    let out = dir.path().join("o.wav");

    let mut c = Checkpoint::load(run_dir.join("last.amba")).unwrap();
    c.tensors.remove(3);
    let broken = dir.path().join("broken.amba");
    c.save(&broken).unwrap();
    let o = run(&["enhance", "--checkpoint", p(&broken), "--in", p(&wav), "--out", p(&out)]);
    assert_eq!(code(&o), 4);
    assert!(stderr(&o).contains("missing"), "{}", stderr(&o));

    let junk = dir.path().join("junk.amba");
    std::fs::write(&junk, b"AMBA\x07\0\0\0").unwrap();
    assert_eq!(code(&run(&["inspect-checkpoint", p(&junk)])), 3);
    assert_eq!(code(&run(&["inspect-checkpoint", p(&dir.path().join("none.amba"))])), 3);
}
