use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsp::{degrade, load_wav, save_wav, AudioBuffer, BitDepth, HIGH_RATE, LOW_RATE};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MAX_PARTIALS: usize = 40;
const MAX_PARTIAL_HZ: f64 = 20_000.0;
/// Envelope level at which a partial is dropped (-40 dB).
const CUTOFF_LEVEL: f64 = 0.01;
const PEAK: f64 = 0.5;

/// A full-band recording and its band-limited counterpart, equal length.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackPair<T> {
    pub id: String,
    pub clean: AudioBuffer<T>,
    pub degraded: AudioBuffer<T>,
}

impl<T: Scalar> TrackPair<T> {
    pub fn new(id: impl Into<String>, clean: AudioBuffer<T>, degraded: AudioBuffer<T>) -> Result<Self> {
        let id = id.into();
        if clean.len() != degraded.len() || clean.num_channels() != degraded.num_channels() {
            return Err(Error::arg(format!("track {id}: clean and degraded shapes differ")));
        }
        Ok(Self { id, clean, degraded })
    }
}

/// Disjoint train / validation / test splits.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset<T> {
    pub train: Vec<TrackPair<T>>,
    pub val: Vec<TrackPair<T>>,
    pub test: Vec<TrackPair<T>>,
}

const SPLITS: [&str; 3] = ["train", "val", "test"];

impl<T: Scalar> Dataset<T> {
    /// Last `n/8` tracks go to test, the `max(1, n/8)` before them to
    /// validation (when `n >= 2`), the rest to training.
    pub fn split(mut tracks: Vec<TrackPair<T>>) -> Self {
        let n = tracks.len();
        let n_test = n / 8;
        let n_val = if n >= 2 { (n / 8).max(1) } else { 0 };
        let test = tracks.split_off(n - n_test);
        let val = tracks.split_off(tracks.len() - n_val);
        Self { train: tracks, val, test }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn splits(&self) -> [&Vec<TrackPair<T>>; 3] {
        [&self.train, &self.val, &self.test]
    }

    /// Writes `<dir>/<split>/{clean,degraded}/<id>.wav` as 32-bit float.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        for (name, tracks) in SPLITS.iter().zip(self.splits()) {
            for kind in ["clean", "degraded"] {
                fs::create_dir_all(dir.as_ref().join(name).join(kind))?;
            }
            for t in tracks {
                let base = dir.as_ref().join(name);
                save_wav(&t.clean, base.join("clean").join(format!("{}.wav", t.id)), BitDepth::Float32)?;
                save_wav(&t.degraded, base.join("degraded").join(format!("{}.wav", t.id)), BitDepth::Float32)?;
            }
        }
        Ok(())
    }

    /// Reads the layout written by [`Dataset::save`]; missing splits are empty.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let mut out = Self::default();
        for (name, slot) in SPLITS.iter().zip([&mut out.train, &mut out.val, &mut out.test]) {
            let clean_dir = dir.as_ref().join(name).join("clean");
            if !clean_dir.is_dir() {
                continue;
            }
            let mut ids: Vec<String> = fs::read_dir(&clean_dir)?
                .filter_map(|e| e.ok())
                .map(|e| e.path())
                .filter(|p| p.extension().is_some_and(|x| x == "wav"))
                .filter_map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
                .collect();
            ids.sort();
            for id in ids {
                let clean = load_wav(clean_dir.join(format!("{id}.wav")))?;
                let degraded = load_wav(dir.as_ref().join(name).join("degraded").join(format!("{id}.wav")))?;
                slot.push(TrackPair::new(id, clean, degraded)?);
            }
        }
        if out.is_empty() {
            return Err(Error::arg(format!("no tracks found under {}", dir.as_ref().display())));
        }
        Ok(out)
    }
}

/// Deterministic piano-like tracks at 44.1 kHz paired with their 11.025 kHz
/// degradations. Track `i` depends only on `(seed, i)`.
pub fn synth_dataset<T: Scalar>(seed: u64, n_tracks: usize, seconds: f64) -> Result<Vec<TrackPair<T>>> {
    if !(seconds > 0.0) {
        return Err(Error::arg(format!("track duration must be positive, got {seconds}")));
    }
    let len = (seconds * HIGH_RATE as f64).round().max(1.0) as usize;
    (0..n_tracks)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let samples = synth_track(&mut rng, len);
            let clean = AudioBuffer::mono(samples.into_iter().map(T::from_f64_lossy).collect(), HIGH_RATE)?;
            let degraded = degrade(&clean, LOW_RATE)?;
            TrackPair::new(format!("track_{i:03}"), clean, degraded)
        })
        .collect()
}

fn synth_track(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    let rate = HIGH_RATE as f64;
    let mut out = vec![0.0; len];
    let mut onset = 0usize;
    while onset < len {
        note(rng, &mut out[onset..], rate);
        onset += (rng.random_range(0.15..0.6) * rate) as usize;
    }
    let bed = rng.random_range(0.05..0.1);
    for (o, p) in out.iter_mut().zip(PinkNoise::default().samples(rng, len)) {
        *o += bed * p;
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        out.iter_mut().for_each(|v| *v *= PEAK / peak);
    }
    out
}

/// Adds one struck note at the start of `out`: stiff-string partials
/// `f_n = n f0 sqrt(1 + B n^2)` with brightness-dependent decay, plus a
/// differentiated noise burst for the hammer.
fn note(rng: &mut ChaCha8Rng, out: &mut [f64], rate: f64) {
    let f0 = 110.0 * 2f64.powf(rng.random_range(0.0..3.0));
    let velocity = rng.random_range(0.3..1.0);
    let stiffness = rng.random_range(1e-4..6e-4);
    let tau1 = rng.random_range(0.4..1.5);
    for n in 1..=MAX_PARTIALS {
        let nf = n as f64;
        let f = nf * f0 * (1.0 + stiffness * nf * nf).sqrt();
        if f >= MAX_PARTIAL_HZ {
            break;
        }
        let amp = velocity / nf.powf(0.3);
        let tau = tau1 / (1.0 + 0.02 * nf);
        let r = (-1.0 / (tau * rate)).exp();
        let steps = ((tau * rate * (1.0 / CUTOFF_LEVEL).ln()) as usize).min(out.len());
        let w = 2.0 * PI * f / rate;
        let phase = rng.random_range(0.0..2.0 * PI);
        // damped resonator y[k] = 2 r cos(w) y[k-1] - r^2 y[k-2]
        let c = 2.0 * r * w.cos();
        let (mut y2, mut y1) = (amp * (phase - w).sin() / r, amp * phase.sin());
        for o in &mut out[..steps] {
            *o += y1;
            let y = c * y1 - r * r * y2;
            y2 = y1;
            y1 = y;
        }
    }
    let hammer = velocity * rng.random_range(0.2..0.5);
    let tau = rng.random_range(0.002..0.006) * rate;
    let steps = ((tau * (1.0 / CUTOFF_LEVEL).ln()) as usize).min(out.len());
    let mut prev = 0.0;
    for (k, o) in out[..steps].iter_mut().enumerate() {
        let white: f64 = rng.random_range(-1.0..1.0);
        *o += hammer * (white - prev) * (-(k as f64) / tau).exp();
        prev = white;
    }
}

/// Paul Kellet's refined pink-noise filter.
#[derive(Default)]
struct PinkNoise {
    b: [f64; 7],
}

impl PinkNoise {
    fn samples(mut self, rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
        (0..len)
            .map(|_| {
                let w: f64 = rng.random_range(-1.0..1.0);
                let b = &mut self.b;
                b[0] = 0.99886 * b[0] + w * 0.0555179;
                b[1] = 0.99332 * b[1] + w * 0.0750759;
                b[2] = 0.96900 * b[2] + w * 0.1538520;
                b[3] = 0.86650 * b[3] + w * 0.3104856;
                b[4] = 0.55000 * b[4] + w * 0.5329522;
                b[5] = -0.7616 * b[5] - w * 0.0168980;
                let p = b.iter().sum::<f64>() + w * 0.5362;
                b[6] = w * 0.115926;
                p
            })
            .collect()
    }
}
