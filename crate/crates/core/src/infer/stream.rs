use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::autodiff::{no_grad, Tensor};
use crate::dsp::{padded_source, AudioBuffer};
use crate::error::{Error, Result};
use crate::model::{Checkpoint, CheckpointTensor, Generator, GeneratorConfig, GeneratorState};
use crate::scalar::Scalar;

/// Incremental enhancement of one multichannel stream.
///
/// Input arrives in chunks of `chunk_frames · hop` samples. STFT frames are
/// analysed as soon as their samples are known, the network body runs on
/// every complete block of [`GeneratorConfig::frame_multiple`] frames with
/// the Mamba state carried over, and synthesised frames are overlap-added.
/// Output samples are emitted once no later frame can touch them, so the
/// output lags the input by half a window until [`finish`](Self::finish).
#[derive(Debug)]
pub struct StreamSession<'g, T: Scalar> {
    generator: &'g Generator<T>,
    channels: usize,
    sample_rate: u32,
    chunk_frames: usize,
    state: GeneratorState<T>,
    /// Per channel, samples from absolute index `input_start` on.
    input: Vec<Vec<T>>,
    input_start: usize,
    /// Per channel, analysed frames not yet run through the body, `frames x bins`.
    pending: Vec<Vec<Complex<T>>>,
    /// Per channel, overlap-add sums from padded position `ola_start` on.
    ola: Vec<Vec<T>>,
    ola_start: usize,
    counters: Counters,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Counters {
    next_index: u64,
    received: usize,
    /// Frames analysed.
    analysed: usize,
    /// Frames synthesised.
    synthesized: usize,
    /// Output samples emitted.
    emitted: usize,
    /// A short chunk was pushed; only `finish` may follow.
    closed: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SessionHeader {
    channels: usize,
    sample_rate: u32,
    chunk_frames: usize,
    input_start: usize,
    ola_start: usize,
    ssm_positions: Vec<u64>,
    counters: Counters,
}

/// Analysed frames still waiting for a complete body block when the
/// session sits on a chunk boundary.
fn steady_pending(config: &GeneratorConfig, chunk_frames: usize) -> usize {
    let (w, h) = (config.stft.window_size, config.stft.hop_length);
    let m = config.frame_multiple();
    let analysed = chunk_frames - (w / 2).div_ceil(h) + 1;
    analysed % m
}

/// Bytes carried between chunks by a session of `channels` channels with
/// `elem_bytes`-byte samples, at any chunk boundary after the first:
/// Mamba convolution histories and scan states, the last window of input,
/// `W - H` overlap-add samples and the frames short of a full body block.
pub fn persistent_bytes(config: &GeneratorConfig, chunk_frames: usize, channels: usize, elem_bytes: usize) -> usize {
    let (w, h) = (config.stft.window_size, config.stft.hop_length);
    let mut mamba = 0;
    for l in 0..config.depth {
        let di = config.expand * config.width(l + 1);
        mamba += channels * di * (config.conv_kernel - 1) * elem_bytes;
        mamba += channels * (di * config.d_state * elem_bytes + std::mem::size_of::<u64>());
    }
    let pending = steady_pending(config, chunk_frames) * config.stft.bins() * 2;
    mamba + channels * (w + (w - h) + pending) * elem_bytes
}

impl<'g, T: Scalar> StreamSession<'g, T> {
    pub fn new(generator: &'g Generator<T>, channels: usize, sample_rate: u32, chunk_frames: usize) -> Result<Self> {
        let cfg = generator.config();
        let (w, h) = (cfg.stft.window_size, cfg.stft.hop_length);
        let m = cfg.frame_multiple();
        if cfg.bidirectional {
            return Err(Error::arg("a bidirectional generator cannot stream"));
        }
        if channels == 0 {
            return Err(Error::arg("stream needs at least one channel"));
        }
        if chunk_frames == 0 || chunk_frames % m != 0 {
            return Err(Error::arg(format!("chunk of {chunk_frames} frames is not a multiple of {m}")));
        }
        if chunk_frames * h < w {
            return Err(Error::arg(format!("chunk of {chunk_frames} frames is shorter than one window")));
        }
        Ok(Self {
            generator,
            channels,
            sample_rate,
            chunk_frames,
            state: generator.new_state(channels),
            input: vec![Vec::new(); channels],
            input_start: 0,
            pending: vec![Vec::new(); channels],
            ola: vec![vec![T::zero(); w - h]; channels],
            ola_start: 0,
            counters: Counters::default(),
        })
    }

    /// Samples per full chunk.
    pub fn chunk_samples(&self) -> usize {
        self.chunk_frames * self.generator.config().stft.hop_length
    }

    pub fn chunk_frames(&self) -> usize {
        self.chunk_frames
    }

    /// Index the next pushed chunk must carry.
    pub fn next_index(&self) -> u64 {
        self.counters.next_index
    }

    pub fn samples_received(&self) -> usize {
        self.counters.received
    }

    pub fn samples_emitted(&self) -> usize {
        self.counters.emitted
    }

    /// Bytes currently carried between chunks.
    pub fn state_bytes(&self) -> usize {
        let bins = self.generator.config().stft.bins();
        let per_channel: usize = (0..self.channels)
            .map(|c| self.input[c].len() + self.ola[c].len() + self.pending[c].len() / bins * bins * 2)
            .sum();
        self.state.memory_bytes() + per_channel * T::BYTES
    }

    /// Processes chunk `index` (0-based, consecutive). Every chunk but the
    /// last must hold exactly [`chunk_samples`](Self::chunk_samples) samples.
    pub fn push(&mut self, index: u64, chunk: &AudioBuffer<T>) -> Result<AudioBuffer<T>> {
        if index != self.counters.next_index {
            return Err(Error::contract(format!(
                "stream chunk {index} arrived, expected {}",
                self.counters.next_index
            )));
        }
        if self.counters.closed {
            return Err(Error::contract("stream chunk after a short final chunk"));
        }
        if chunk.num_channels() != self.channels || chunk.sample_rate() != self.sample_rate {
            return Err(Error::arg(format!(
                "chunk has {} channels at {} Hz, session expects {} at {} Hz",
                chunk.num_channels(),
                chunk.sample_rate(),
                self.channels,
                self.sample_rate
            )));
        }
        if chunk.len() > self.chunk_samples() {
            return Err(Error::arg(format!(
                "chunk of {} samples exceeds the session chunk of {}",
                chunk.len(),
                self.chunk_samples()
            )));
        }
        self.counters.next_index += 1;
        self.counters.closed = chunk.len() < self.chunk_samples();
        for (buf, src) in self.input.iter_mut().zip(chunk.channels()) {
            buf.extend_from_slice(src);
        }
        self.counters.received += chunk.len();

        let (w, h) = self.hw();
        let n = self.counters.received;
        let ready = if n > w / 2 { (n - w / 2) / h + 1 } else { 0 };
        self.analyse(ready, None);
        let m = self.generator.config().frame_multiple();
        let block = (self.pending_frames() / m) * m;
        self.run_body(block, block)?;
        let upto = (self.counters.synthesized * h).saturating_sub(w / 2);
        let out = self.emit(upto, None);
        self.trim_input();
        AudioBuffer::new(out, self.sample_rate)
    }

    /// Flushes the stream: analyses the frames that touch the end of the
    /// signal and emits every remaining output sample.
    pub fn finish(mut self) -> Result<AudioBuffer<T>> {
        let (w, _) = self.hw();
        let n = self.counters.received;
        if n < w {
            return Err(Error::arg(format!("stream of {n} samples is shorter than one {w}-sample STFT frame")));
        }
        let total = self.generator.config().stft.num_frames(n);
        self.analyse(total, Some(n));
        let frames = self.pending_frames();
        if frames > 0 {
            let padded = self.generator.padded_frames(frames);
            self.run_body(frames, padded)?;
        }
        let out = self.emit(n, Some(total));
        AudioBuffer::new(out, self.sample_rate)
    }

    fn hw(&self) -> (usize, usize) {
        let s = self.generator.config().stft;
        (s.window_size, s.hop_length)
    }

    fn pending_frames(&self) -> usize {
        self.pending[0].len() / self.generator.config().stft.bins()
    }

    /// Analyses frames up to `upto`. `length` is the full signal length
    /// once known; before that only frames inside the received samples are
    /// requested.
    fn analyse(&mut self, upto: usize, length: Option<usize>) {
        let (w, h) = self.hw();
        let bins = self.generator.config().stft.bins();
        let plan = self.generator.plan();
        let mut frame = vec![T::zero(); w];
        let mut spec = vec![Complex::new(T::zero(), T::zero()); bins];
        for t in self.counters.analysed..upto {
            for c in 0..self.channels {
                let x = &self.input[c];
                for (i, v) in frame.iter_mut().enumerate() {
                    let p = t * h + i;
                    let src = match length {
                        Some(len) => padded_source(p, w / 2, len),
                        None => Some((p as isize - (w / 2) as isize).unsigned_abs()),
                    };
                    *v = src.map_or(T::zero(), |s| x[s - self.input_start]);
                }
                plan.analyze_frame(&frame, &mut spec);
                self.pending[c].extend_from_slice(&spec);
            }
        }
        self.counters.analysed = self.counters.analysed.max(upto);
    }

    /// Runs the first `frames` pending frames, zero-padded to `padded`,
    /// through the body and overlap-adds their syntheses.
    fn run_body(&mut self, frames: usize, padded: usize) -> Result<()> {
        if frames == 0 {
            return Ok(());
        }
        let cfg = self.generator.config();
        let (w, h) = self.hw();
        let bins = cfg.stft.bins();
        let ch = 2 * bins;
        let mut data = vec![T::zero(); self.channels * ch * padded];
        for c in 0..self.channels {
            let d = &mut data[c * ch * padded..(c + 1) * ch * padded];
            for t in 0..frames {
                for (k, v) in self.pending[c][t * bins..(t + 1) * bins].iter().enumerate() {
                    d[k * padded + t] = v.re;
                    d[(bins + k) * padded + t] = v.im;
                }
            }
        }
        let spec = Tensor::new(data, &[self.channels, ch, padded])?;
        let body = no_grad(|| self.generator.forward_spectrogram(&spec, Some(&mut self.state)))?;
        let body = body.data();
        let input = spec.data();
        let plan = self.generator.plan();
        let mut bins_buf = vec![Complex::new(T::zero(), T::zero()); bins];
        let mut frame = vec![T::zero(); w];
        for c in 0..self.channels {
            let o = &body[c * ch * padded..(c + 1) * ch * padded];
            let s = &input[c * ch * padded..(c + 1) * ch * padded];
            for t in 0..frames {
                for (k, b) in bins_buf.iter_mut().enumerate() {
                    let (re, im) = (o[k * padded + t], o[(bins + k) * padded + t]);
                    *b = if cfg.spectral_residual {
                        Complex::new(re + s[k * padded + t], im + s[(bins + k) * padded + t])
                    } else {
                        Complex::new(re, im)
                    };
                }
                plan.synthesize_frame(&bins_buf, &mut frame);
                let off = (self.counters.synthesized + t) * h - self.ola_start;
                let acc = &mut self.ola[c];
                if acc.len() < off + w {
                    acc.resize(off + w, T::zero());
                }
                for (a, &f) in acc[off..off + w].iter_mut().zip(&frame) {
                    *a += f;
                }
            }
            self.pending[c].drain(..frames * bins);
        }
        self.counters.synthesized += frames;
        Ok(())
    }

    /// Emits output samples `[emitted, upto)`, dividing by the summed
    /// squared window of the frames covering each (all of `[0, total)` or,
    /// mid-stream, all that can exist).
    fn emit(&mut self, upto: usize, total: Option<usize>) -> Vec<Vec<T>> {
        let (w, h) = self.hw();
        let win = self.generator.plan().window();
        let floor = T::epsilon();
        let start = self.counters.emitted;
        let upto = upto.max(start);
        let base = self.ola_start;
        let mut out = vec![Vec::with_capacity(upto - start); self.channels];
        for n in start..upto {
            let p = n + w / 2;
            let last = (p / h).min(total.map_or(usize::MAX, |f| f.saturating_sub(1)));
            let first = (p + 1).saturating_sub(w).div_ceil(h);
            let mut env = T::zero();
            for t in first..=last {
                let v = win[p - t * h];
                env += v * v;
            }
            for (c, o) in out.iter_mut().enumerate() {
                let a = self.ola[c].get(p - base).copied().unwrap_or(T::zero());
                o.push(if env > floor { a / env } else { T::zero() });
            }
        }
        self.counters.emitted = upto;
        // later frames start at or after `synthesized · hop`
        let keep_from = (self.counters.synthesized * h).min(upto + w / 2).max(base);
        let drop = (keep_from - base).min(self.ola[0].len());
        for acc in &mut self.ola {
            acc.drain(..drop);
        }
        self.ola_start += drop;
        out
    }

    /// Drops input samples no future frame (including end reflections)
    /// can reach.
    fn trim_input(&mut self) {
        let (w, h) = self.hw();
        let n = self.counters.received;
        let by_frames = (self.counters.analysed * h).saturating_sub(w / 2);
        let keep_from = by_frames.min(n.saturating_sub(w)).max(self.input_start);
        let drop = keep_from - self.input_start;
        for buf in &mut self.input {
            buf.drain(..drop);
        }
        self.input_start = keep_from;
    }
}

impl<'g, T: Scalar> StreamSession<'g, T> {
    /// Session state in the checkpoint tensor encoding. Buffers are stored
    /// as f32, so restoring is exact for f32 sessions.
    pub fn snapshot(&self) -> Checkpoint {
        let flat = |name: String, data: Vec<f32>| CheckpointTensor {
            shape: vec![data.len()],
            name,
            data,
        };
        let f = |v: &[T]| v.iter().map(|x| x.to_f64_lossy() as f32).collect::<Vec<_>>();
        let mut tensors = Vec::new();
        let mut positions = Vec::new();
        for (l, b) in self.state.blocks.iter().enumerate() {
            tensors.push(flat(format!("block.{l}.conv"), f(&b.conv)));
            for (i, s) in b.ssm.iter().enumerate() {
                tensors.push(flat(format!("block.{l}.ssm.{i}"), f(&s.h)));
                positions.push(s.position);
            }
        }
        for c in 0..self.channels {
            tensors.push(flat(format!("input.{c}"), f(&self.input[c])));
            let pending: Vec<f32> =
                self.pending[c].iter().flat_map(|z| [z.re.to_f64_lossy() as f32, z.im.to_f64_lossy() as f32]).collect();
            tensors.push(flat(format!("pending.{c}"), pending));
            tensors.push(flat(format!("ola.{c}"), f(&self.ola[c])));
        }
        let header = SessionHeader {
            channels: self.channels,
            sample_rate: self.sample_rate,
            chunk_frames: self.chunk_frames,
            input_start: self.input_start,
            ola_start: self.ola_start,
            ssm_positions: positions,
            counters: self.counters,
        };
        Checkpoint {
            tensors,
            config_text: toml::to_string(&header).expect("header is TOML-representable"),
        }
    }

    /// Resumes a session saved by [`snapshot`](Self::snapshot).
    pub fn restore(generator: &'g Generator<T>, snapshot: &Checkpoint) -> Result<Self> {
        let h: SessionHeader = toml::from_str(&snapshot.config_text)
            .map_err(|e| Error::contract(format!("stream snapshot header: {}", e.message())))?;
        let mut s = Self::new(generator, h.channels, h.sample_rate, h.chunk_frames)?;
        s.input_start = h.input_start;
        s.ola_start = h.ola_start;
        s.counters = h.counters;
        let tensors: std::collections::HashMap<&str, &[f32]> =
            snapshot.tensors.iter().map(|t| (t.name.as_str(), t.data.as_slice())).collect();
        let get = |name: String| -> Result<Vec<T>> {
            tensors
                .get(name.as_str())
                .map(|d| d.iter().map(|&v| T::from_f64_lossy(v as f64)).collect())
                .ok_or_else(|| Error::contract(format!("stream snapshot lacks {name}")))
        };
        let mut positions = h.ssm_positions.into_iter();
        for (l, b) in s.state.blocks.iter_mut().enumerate() {
            let conv = get(format!("block.{l}.conv"))?;
            if conv.len() != b.conv.len() {
                return Err(Error::contract(format!("stream snapshot block {l} convolution history has the wrong size")));
            }
            b.conv = conv;
            for (i, st) in b.ssm.iter_mut().enumerate() {
                let hs = get(format!("block.{l}.ssm.{i}"))?;
                if hs.len() != st.h.len() {
                    return Err(Error::contract(format!("stream snapshot block {l} scan state has the wrong size")));
                }
                st.h = hs;
                st.position = positions
                    .next()
                    .ok_or_else(|| Error::contract("stream snapshot lacks scan positions"))?;
            }
        }
        for c in 0..s.channels {
            s.input[c] = get(format!("input.{c}"))?;
            s.pending[c] = get(format!("pending.{c}"))?.chunks_exact(2).map(|z| Complex::new(z[0], z[1])).collect();
            s.ola[c] = get(format!("ola.{c}"))?;
        }
        Ok(s)
    }
}

/// Enhances a whole buffer through a [`StreamSession`] and concatenates
/// the emitted chunks.
pub fn enhance_streaming<T: Scalar>(generator: &Generator<T>, input: &AudioBuffer<T>, chunk_frames: usize) -> Result<AudioBuffer<T>> {
    let mut session = StreamSession::new(generator, input.num_channels(), input.sample_rate(), chunk_frames)?;
    let step = session.chunk_samples();
    let mut out: Vec<Vec<T>> = vec![Vec::with_capacity(input.len()); input.num_channels()];
    let mut append = |b: AudioBuffer<T>| {
        for (o, c) in out.iter_mut().zip(b.into_channels()) {
            o.extend(c);
        }
    };
    let mut start = 0;
    let mut index = 0;
    while start < input.len() {
        let end = (start + step).min(input.len());
        append(session.push(index, &input.slice(start, end)?)?);
        index += 1;
        start = end;
    }
    append(session.finish()?);
    AudioBuffer::new(out, input.sample_rate())
}

/// Whole-signal enhancement.
pub fn enhance_offline<T: Scalar>(generator: &Generator<T>, input: &AudioBuffer<T>) -> Result<AudioBuffer<T>> {
    generator.enhance(input)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small() -> GeneratorConfig {
        GeneratorConfig {
            depth: 2,
            base_channels: 8,
            max_channels: 16,
            ..GeneratorConfig::default()
        }
    }

    fn noise<T: Scalar>(channels: usize, n: usize, seed: u64) -> AudioBuffer<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ch = (0..channels)
            .map(|_| (0..n).map(|_| T::from_f64_lossy(rng.random_range(-0.5..0.5))).collect())
            .collect();
        AudioBuffer::new(ch, 44100).unwrap()
    }

    fn max_abs<T: Scalar>(a: &AudioBuffer<T>, b: &AudioBuffer<T>) -> f64 {
        assert_eq!((a.len(), a.num_channels()), (b.len(), b.num_channels()));
        a.channels()
            .iter()
            .flatten()
            .zip(b.channels().iter().flatten())
            .map(|(x, y)| (x.to_f64_lossy() - y.to_f64_lossy()).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn streaming_matches_offline() {
        let g = Generator::<f64>::new(small(), 4).unwrap();
        for (channels, n, chunk) in [(1, 10_000, 16), (2, 12_288, 32), (1, 512, 16), (1, 4096 * 3, 16), (1, 700, 48)] {
            let x = noise::<f64>(channels, n, n as u64);
            let off = enhance_offline(&g, &x).unwrap();
            let st = enhance_streaming(&g, &x, chunk).unwrap();
            assert_eq!(max_abs(&off, &st), 0.0, "channels {channels} n {n} chunk {chunk}");
        }
        let g = Generator::<f32>::new(small(), 5).unwrap();
        let x = noise::<f32>(1, 20_000, 1);
        assert_eq!(max_abs(&enhance_offline(&g, &x).unwrap(), &enhance_streaming(&g, &x, 16).unwrap()), 0.0);
    }

    #[test]
    fn chunk_outputs_lag_by_half_a_window() {
        let g = Generator::<f32>::new(small(), 4).unwrap();
        let mut s = StreamSession::new(&g, 1, 44100, 16).unwrap();
        let x = noise::<f32>(1, 3 * s.chunk_samples(), 2);
        let c = s.chunk_samples();
        assert_eq!(s.push(0, &x.slice(0, c).unwrap()).unwrap().len(), c - 256);
        assert_eq!(s.push(1, &x.slice(c, 2 * c).unwrap()).unwrap().len(), c);
        assert_eq!(s.finish().unwrap().len(), 256);
    }

    #[test]
    fn persistent_state_is_the_closed_form() {
        for (cfg, chunk) in [(small(), 16), (small(), 48), (GeneratorConfig { stft: crate::dsp::StftConfig::new(512, 128).unwrap(), ..small() }, 16)] {
            let g = Generator::<f32>::new(cfg.clone(), 1).unwrap();
            let mut s = StreamSession::new(&g, 2, 44100, chunk).unwrap();
            let x = noise::<f32>(2, s.chunk_samples(), 3);
            let want = persistent_bytes(&cfg, chunk, 2, 4);
            for i in 0..40 {
                s.push(i, &x).unwrap();
                assert_eq!(s.state_bytes(), want, "chunk {i} of {chunk}");
            }
        }
    }

    #[test]
    fn ordering_is_enforced() {
        let g = Generator::<f32>::new(small(), 1).unwrap();
        let mut s = StreamSession::new(&g, 1, 44100, 16).unwrap();
        let x = noise::<f32>(1, s.chunk_samples(), 3);
        assert!(matches!(s.push(1, &x), Err(Error::Contract(_))));
        s.push(0, &x).unwrap();
        assert!(matches!(s.push(0, &x), Err(Error::Contract(_))));
        s.push(1, &x.slice(0, 100).unwrap()).unwrap();
        assert!(matches!(s.push(2, &x), Err(Error::Contract(_))));
        assert!(matches!(s.push(2, &noise::<f32>(1, s.chunk_samples() + 1, 1)), Err(Error::Contract(_))));
        assert!(StreamSession::new(&g, 1, 44100, 12).is_err());
        let bi = Generator::<f32>::new(GeneratorConfig { bidirectional: true, ..small() }, 1).unwrap();
        assert!(StreamSession::new(&bi, 1, 44100, 16).is_err());
    }

    #[test]
    fn snapshot_resumes_exactly() {
        let g = Generator::<f32>::new(small(), 6).unwrap();
        let x = noise::<f32>(2, 5 * 4096 + 77, 8);
        let whole = enhance_streaming(&g, &x, 16).unwrap();
        let mut s = StreamSession::new(&g, 2, 44100, 16).unwrap();
        let c = s.chunk_samples();
        let mut out: Vec<Vec<f32>> = vec![Vec::new(); 2];
        let mut take = |b: AudioBuffer<f32>| out.iter_mut().zip(b.into_channels()).for_each(|(o, c)| o.extend(c));
        take(s.push(0, &x.slice(0, c).unwrap()).unwrap());
        take(s.push(1, &x.slice(c, 2 * c).unwrap()).unwrap());
        let bytes = s.snapshot().to_bytes().unwrap();
        drop(s);
        let mut s = StreamSession::restore(&g, &Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(s.next_index(), 2);
        let mut i = 2;
        let mut start = 2 * c;
        while start < x.len() {
            let end = (start + c).min(x.len());
            take(s.push(i, &x.slice(start, end).unwrap()).unwrap());
            i += 1;
            start = end;
        }
        take(s.finish().unwrap());
        assert_eq!(AudioBuffer::new(out, 44100).unwrap(), whole);
    }

    #[test]
    fn silence_soak_stays_bounded() {
        let g = Generator::<f32>::new(small(), 2).unwrap();
        let mut s = StreamSession::new(&g, 1, 44100, 16).unwrap();
        let silence = AudioBuffer::<f32>::silence(1, s.chunk_samples(), 44100).unwrap();
        let want = s.chunk_samples();
        let mut peak = 0.0f64;
        for i in 0..1000 {
            let y = s.push(i, &silence).unwrap();
            peak = peak.max(y.channel(0).iter().map(|v| v.abs() as f64).fold(0.0, f64::max));
            assert!(y.is_finite());
            if i > 0 {
                assert_eq!(y.len(), want);
            }
        }
        assert!(peak < 10.0, "peak {peak}");
    }
}
