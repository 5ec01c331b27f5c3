use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aeromamba::dsp::{degrade, load_wav, lsd, mann_whitney_u, save_wav, write_metric_csv, BitDepth, MetricRow, LOW_RATE};
use aeromamba::infer::{bench, enhance_offline, enhance_streaming, write_bench_csv, BenchConfig};
use aeromamba::model::{fnv1a64, param_count, Checkpoint};
use aeromamba::train::{fit, load_generator, synth_dataset, Dataset, RunConfig};
use aeromamba::Error;
use clap::{Parser, Subcommand};

const EXIT_USAGE: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_NUMERIC: u8 = 4;

/// Audio super-resolution from 11.025 kHz to 44.1 kHz.
#[derive(Parser, Debug)]
#[command(name = "aeromamba", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Band-limit a recording: low-pass, decimate and resample back to its rate.
    Degrade {
        /// Input WAV file.
        #[arg(long = "in")]
        input: PathBuf,
        /// Output WAV file at the input rate.
        #[arg(long)]
        out: PathBuf,
        /// Simulated low sample rate; must divide the input rate.
        #[arg(long, default_value_t = LOW_RATE)]
        low_rate: u32,
        /// Output encoding: 16, 24 or 32 (float).
        #[arg(long, default_value = "32")]
        bits: String,
    },
    /// Write a synthetic piano-like corpus with train/val/test splits.
    SynthData {
        /// Corpus seed.
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Number of tracks before the split.
        #[arg(long, default_value_t = 16)]
        tracks: usize,
        /// Length of each track in seconds.
        #[arg(long, default_value_t = 20.0)]
        seconds: f64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a generator; writes metrics.csv, best.amba and last.amba to --out.
    Train {
        /// TOML file with [train], [generator] and [discriminator] sections.
        #[arg(long)]
        config: PathBuf,
        /// Corpus directory as written by synth-data.
        #[arg(long)]
        data: PathBuf,
        /// Output directory; overrides train.checkpoint_dir.
        #[arg(long)]
        out: PathBuf,
    },
    /// Enhance a recording with a trained generator.
    Enhance {
        /// Generator checkpoint (.amba).
        #[arg(long)]
        checkpoint: PathBuf,
        /// Band-limited input WAV file.
        #[arg(long = "in")]
        input: PathBuf,
        /// Output WAV file.
        #[arg(long)]
        out: PathBuf,
        /// Process in chunks with carried state instead of one pass.
        #[arg(long, default_value_t = false)]
        streaming: bool,
        /// Streaming chunk in STFT frames; 0 picks the smallest aligned chunk.
        #[arg(long, default_value_t = 0)]
        chunk_frames: usize,
        /// Output encoding: 16, 24 or 32 (float).
        #[arg(long, default_value = "32")]
        bits: String,
    },
    /// Log-spectral distance of estimates against references.
    Eval {
        /// Reference file or directory.
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Estimate file or directory; give twice to compare two systems.
        #[arg(long = "est", required = true, num_args = 1)]
        estimates: Vec<PathBuf>,
        /// Output CSV with `metric,track_id,value` rows.
        #[arg(long)]
        csv: PathBuf,
    },
    /// Time offline and streaming enhancement against an attention layer.
    Bench {
        /// Generator checkpoint (.amba).
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output CSV with `mode,segment_s,median_s,state_bytes,rt_factor` rows.
        #[arg(long)]
        csv: PathBuf,
        /// Segment lengths in seconds.
        #[arg(long, value_delimiter = ',', default_value = "1,2,5,10,20")]
        segments: Vec<f64>,
        /// Timed runs per mode and segment; the median is reported.
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        /// Streaming chunk in STFT frames; 0 picks the smallest aligned chunk.
        #[arg(long, default_value_t = 0)]
        chunk_frames: usize,
    },
    /// Print the tensor table and embedded configuration of a checkpoint.
    InspectCheckpoint {
        /// Checkpoint file (.amba).
        file: PathBuf,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Argument(_) => EXIT_USAGE,
        Error::Io(_) | Error::Format { .. } | Error::Unsupported(_) => EXIT_IO,
        Error::Numeric { .. } | Error::Contract(_) => EXIT_NUMERIC,
    }
}

fn configure_threads() -> aeromamba::Result<()> {
    let Ok(v) = std::env::var("AEROMAMBA_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .map_err(|_| Error::Argument(format!("AEROMAMBA_THREADS must be a non-negative integer, got {v:?}")))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Argument(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match configure_threads().and_then(|_| run(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(command: Command) -> aeromamba::Result<()> {
    match command {
        Command::Degrade { input, out, low_rate, bits } => {
            let bits: BitDepth = bits.parse()?;
            let x = load_wav::<f64>(&input)?;
            save_wav(&degrade(&x, low_rate)?, &out, bits)
        }
        Command::SynthData { seed, tracks, seconds, out } => {
            if tracks == 0 {
                return Err(Error::Argument("--tracks must be at least 1".into()));
            }
            let d = Dataset::split(synth_dataset::<f32>(seed, tracks, seconds)?);
            d.save(&out)?;
            println!("wrote {} train, {} val, {} test tracks to {}", d.train.len(), d.val.len(), d.test.len(), out.display());
            Ok(())
        }
        Command::Train { config, data, out } => {
            let mut cfg = RunConfig::load(&config)?;
            cfg.train.checkpoint_dir = out;
            let data = Dataset::<f32>::load(&data)?;
            let o = fit(&cfg, &data)?;
            if let Some((step, v)) = o.best {
                println!("best validation LSD {v} at step {step}");
            }
            println!("checkpoints: {} {}", o.best_checkpoint.display(), o.last_checkpoint.display());
            println!("metrics: {}", o.metrics_csv.display());
            Ok(())
        }
        Command::Enhance { checkpoint, input, out, streaming, chunk_frames, bits } => {
            let bits: BitDepth = bits.parse()?;
            let (g, _) = load_generator::<f32>(&Checkpoint::load(&checkpoint)?)?;
            let x = load_wav::<f32>(&input)?;
            let y = if streaming {
                let chunk = if chunk_frames == 0 { g.config().frame_multiple() } else { chunk_frames };
                enhance_streaming(&g, &x, chunk)?
            } else {
                enhance_offline(&g, &x)?
            };
            save_wav(&y, &out, bits)
        }
        Command::Eval { reference, estimates, csv } => eval(&reference, &estimates, &csv),
        Command::Bench { checkpoint, csv, segments, repeats, chunk_frames } => {
            let (g, _) = load_generator::<f32>(&Checkpoint::load(&checkpoint)?)?;
            let rows = bench(&g, &BenchConfig { segments, repeats, chunk_frames, ..BenchConfig::default() })?;
            write_bench_csv(&csv, &rows)?;
            for r in &rows {
                println!("{:<9} {:>5} s  median {:.4} s  state {} B  rt x{:.2}", r.mode, r.segment_s, r.median_s, r.state_bytes, r.rt_factor);
            }
            Ok(())
        }
        Command::InspectCheckpoint { file } => inspect(&file),
    }
}

/// `(track id, path)` for a file, or every `.wav` in a directory sorted by name.
fn wav_list(path: &Path) -> aeromamba::Result<Vec<(String, PathBuf)>> {
    if path.is_dir() {
        let mut v: Vec<(String, PathBuf)> = std::fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "wav"))
            .map(|p| (p.file_stem().unwrap_or_default().to_string_lossy().into_owned(), p))
            .collect();
        v.sort();
        Ok(v)
    } else {
        let id = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        Ok(vec![(id, path.to_path_buf())])
    }
}

fn eval(reference: &Path, estimates: &[PathBuf], csv: &Path) -> aeromamba::Result<()> {
    if estimates.len() > 2 {
        return Err(Error::Argument("--est accepts at most two systems".into()));
    }
    let refs = wav_list(reference)?;
    if refs.is_empty() {
        return Err(Error::Argument(format!("no .wav files under {}", reference.display())));
    }
    let single_file = !reference.is_dir();
    let mut rows = Vec::new();
    let mut scores: Vec<Vec<f64>> = Vec::new();
    for (k, est) in estimates.iter().enumerate() {
        let metric = match estimates.len() {
            1 => "lsd".to_string(),
            _ => format!("lsd_{}", ['a', 'b'][k]),
        };
        let mut v = Vec::new();
        for (id, rpath) in &refs {
            let epath = if single_file && !est.is_dir() { est.clone() } else { est.join(format!("{id}.wav")) };
            let r = load_wav::<f64>(rpath)?;
            let e = load_wav::<f64>(&epath)?;
            let d = lsd(&r, &e)?;
            rows.push(MetricRow::new(metric.clone(), id.clone(), d));
            v.push(d);
        }
        println!("{metric}: mean {:.4} over {} tracks", v.iter().sum::<f64>() / v.len() as f64, v.len());
        scores.push(v);
    }
    if let [a, b] = scores.as_slice() {
        let mw = mann_whitney_u(a, b)?;
        println!("Mann-Whitney U {} p {}", mw.u, mw.p_two_sided);
        rows.push(MetricRow::new("mw_u", mw.u.to_string(), mw.p_two_sided));
    }
    write_metric_csv(csv, &rows)
}

fn inspect(file: &Path) -> aeromamba::Result<()> {
    let c = Checkpoint::load(file)?;
    println!("{:<48} {:<20} {:>10} checksum", "name", "shape", "elements");
    let mut total = 0;
    for t in &c.tensors {
        let bytes: Vec<u8> = t.data.iter().flat_map(|v| v.to_le_bytes()).collect();
        let shape = format!("{:?}", t.shape);
        println!("{:<48} {:<20} {:>10} {:016x}", t.name, shape, t.data.len(), fnv1a64(&bytes));
        total += t.data.len();
    }
    println!("tensors: {}", c.tensors.len());
    println!("parameters: {total}");
    if let Ok(cfg) = RunConfig::from_toml(&c.config_text) {
        let report = param_count(&cfg.generator);
        println!("configured: {} tensors, {} parameters", report.entries.len(), report.total);
    }
    println!("config:\n{}", c.config_text);
    Ok(())
}
