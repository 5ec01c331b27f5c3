use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsp::{AudioBuffer, HIGH_RATE};
use crate::error::{Error, Result};
use crate::kernels::{matmul_acc, matmul_nt_acc, matmul_tn_acc};
use crate::model::{Generator, GeneratorConfig};
use crate::scalar::{lit, Scalar};

use super::stream::{enhance_streaming, persistent_bytes};

pub const BENCH_HEADER: &str = "mode,segment_s,median_s,state_bytes,rt_factor";

#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    /// Segment lengths in seconds.
    pub segments: Vec<f64>,
    pub repeats: usize,
    /// Streaming chunk in frames; 0 picks the smallest aligned chunk.
    pub chunk_frames: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            segments: vec![1.0, 2.0, 5.0, 10.0, 20.0],
            repeats: 3,
            chunk_frames: 0,
            seed: 0,
        }
    }
}

/// One CSV row. `state_bytes` is the analytic activation footprint for
/// `offline` and `attention`, and the persistent session size for
/// `streaming`.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub mode: String,
    pub segment_s: f64,
    pub median_s: f64,
    pub state_bytes: usize,
    pub rt_factor: f64,
}

/// Seconds of audio processed per second of wall time.
pub fn rt_factor(segment_s: f64, wall_s: f64) -> f64 {
    segment_s / wall_s
}

/// Score matrix plus query, key, value and output activations of one
/// single-head attention pass over `len` steps of width `d`.
pub fn attention_activation_bytes(len: usize, d: usize, elem_bytes: usize) -> usize {
    (len * len + 4 * len * d) * elem_bytes
}

/// Live tensors of one offline generator pass over `samples` samples:
/// input and output spectrograms, one skip per level and each Mamba
/// in-projection.
pub fn offline_activation_bytes(config: &GeneratorConfig, samples: usize, elem_bytes: usize) -> usize {
    let m = config.frame_multiple();
    let mut frames = config.stft.num_frames(samples).div_ceil(m) * m;
    let mut total = 2 * config.spec_channels() * frames;
    for l in 0..=config.depth {
        total += config.width(l) * frames;
        if l > 0 {
            total += 2 * config.expand * config.width(l) * frames;
        }
        frames /= config.stride;
    }
    total * elem_bytes
}

/// Quadratic single-head self-attention used as the memory-growth contrast.
#[derive(Clone, Debug)]
pub struct AttentionLayer<T> {
    pub d: usize,
    /// `wq, wk, wv, wo`, each `d x d`.
    pub weights: [Vec<T>; 4],
}

impl<T: Scalar> AttentionLayer<T> {
    pub fn new(d: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (d as f64).sqrt();
        let mut w = || (0..d * d).map(|_| lit::<T>(rng.random_range(-bound..bound))).collect::<Vec<T>>();
        Self {
            d,
            weights: [w(), w(), w(), w()],
        }
    }

    /// `x` is `[d, len]`; returns `x + Wo · V · softmax(QᵀK / sqrt(d))ᵀ`.
    pub fn forward(&self, x: &[T], len: usize) -> Vec<T> {
        let d = self.d;
        let proj = |w: &[T]| {
            let mut o = vec![T::zero(); d * len];
            matmul_acc(&mut o, w, x, d, d, len);
            o
        };
        let (q, k, v) = (proj(&self.weights[0]), proj(&self.weights[1]), proj(&self.weights[2]));
        let mut scores = vec![T::zero(); len * len];
        matmul_tn_acc(&mut scores, &q, &k, d, len, len);
        let scale = lit::<T>(1.0 / (d as f64).sqrt());
        for row in scores.chunks_exact_mut(len) {
            let max = row.iter().fold(T::neg_infinity(), |m, &s| m.max(s * scale));
            let mut sum = T::zero();
            for s in row.iter_mut() {
                *s = (*s * scale - max).exp();
                sum += *s;
            }
            row.iter_mut().for_each(|s| *s /= sum);
        }
        let mut mixed = vec![T::zero(); d * len];
        matmul_nt_acc(&mut mixed, &v, &scores, d, len, len);
        let mut out = x.to_vec();
        matmul_acc(&mut out, &self.weights[3], &mixed, d, d, len);
        out
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn time_median(repeats: usize, mut f: impl FnMut() -> Result<()>) -> Result<f64> {
    let mut times = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let t0 = Instant::now();
        f()?;
        times.push(t0.elapsed().as_secs_f64());
    }
    Ok(median(times))
}

/// Times offline and streaming enhancement and the attention contrast at
/// each segment length, single-threaded. The contrast runs at the width
/// and frame rate of the first encoder level.
pub fn bench<T: Scalar>(generator: &Generator<T>, config: &BenchConfig) -> Result<Vec<BenchRow>> {
    if config.repeats == 0 || config.segments.is_empty() {
        return Err(Error::arg("bench needs at least one repeat and one segment length"));
    }
    if config.segments.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::arg("segment lengths must be positive"));
    }
    let cfg = generator.config();
    let chunk = if config.chunk_frames == 0 { cfg.frame_multiple() } else { config.chunk_frames };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::arg(format!("bench thread pool: {e}")))?;
    let d = cfg.width(1);
    let attention = AttentionLayer::<T>::new(d, config.seed);
    // tensors are thread-local; the pool thread rebuilds the network from raw data
    let raw: Vec<(String, Vec<usize>, Vec<T>)> =
        generator.named_params().iter().map(|(n, t)| (n.clone(), t.shape().to_vec(), t.to_vec())).collect();
    let gen_config = cfg.clone();
    pool.install(move || {
        let named = raw
            .into_iter()
            .map(|(n, shape, data)| Ok((n, crate::autodiff::Tensor::new(data, &shape)?)))
            .collect::<Result<Vec<_>>>()?;
        let generator = Generator::from_named(gen_config, named)?;
        let generator = &generator;
        let cfg = generator.config();
        let mut rows = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        for &seconds in &config.segments {
            let n = ((seconds * HIGH_RATE as f64).round() as usize).max(cfg.stft.window_size);
            let x: Vec<T> = (0..n).map(|_| lit(rng.random_range(-0.5..0.5))).collect();
            let buffer = AudioBuffer::mono(x, HIGH_RATE)?;
            let mut row = |mode: &str, median_s: f64, state_bytes: usize| {
                rows.push(BenchRow {
                    mode: mode.to_string(),
                    segment_s: seconds,
                    median_s,
                    state_bytes,
                    rt_factor: rt_factor(seconds, median_s),
                })
            };
            let t = time_median(config.repeats, || generator.enhance(&buffer).map(drop))?;
            row("offline", t, offline_activation_bytes(cfg, n, T::BYTES));
            let t = time_median(config.repeats, || enhance_streaming(generator, &buffer, chunk).map(drop))?;
            row("streaming", t, persistent_bytes(cfg, chunk, 1, T::BYTES));
            let len = generator.padded_frames(cfg.stft.num_frames(n)) / cfg.stride;
            let input: Vec<T> = (0..d * len).map(|_| lit(rng.random_range(-1.0..1.0))).collect();
            let t = time_median(config.repeats, || {
                std::hint::black_box(attention.forward(&input, len));
                Ok(())
            })?;
            row("attention", t, attention_activation_bytes(len, d, T::BYTES));
        }
        Ok(rows)
    })
}

pub fn write_bench_csv(path: impl AsRef<Path>, rows: &[BenchRow]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{BENCH_HEADER}")?;
    for r in rows {
        writeln!(f, "{},{},{},{},{}", r.mode, r.segment_s, r.median_s, r.state_bytes, r.rt_factor)?;
    }
    f.flush()?;
    Ok(())
}
