//! Short-time Fourier transform with reflect padding and its weighted
//! overlap-add inverse.
//!
//! Frame `t` covers padded positions `[t*H, t*H + W)`, where the padded
//! signal is the input with `W/2` reflected samples on each side, followed
//! by zeros up to the last frame. The inverse divides the overlap-added,
//! synthesis-windowed frames by the summed squared-window envelope, so any
//! hop dividing the window with at least 2x overlap reconstructs exactly.

use std::sync::Arc;

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::AudioBuffer;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct StftConfig {
    pub window_size: usize,
    pub hop_length: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            window_size: 512,
            hop_length: 256,
        }
    }
}

impl StftConfig {
    pub fn new(window_size: usize, hop_length: usize) -> Result<Self> {
        let c = Self {
            window_size,
            hop_length,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let (w, h) = (self.window_size, self.hop_length);
        if w < 4 || w % 2 != 0 {
            return Err(Error::arg(format!("window size must be even and >= 4, got {w}")));
        }
        if h == 0 || w % h != 0 || w / h < 2 {
            return Err(Error::arg(format!(
                "hop {h} must divide window {w} with at least 2x overlap"
            )));
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.window_size / 2 + 1
    }

    /// `ceil((len + W) / H)`.
    pub fn num_frames(&self, len: usize) -> usize {
        (len + self.window_size).div_ceil(self.hop_length)
    }

    /// Length of the padded signal the frames are cut from.
    pub fn padded_len(&self, len: usize) -> usize {
        (self.num_frames(len) - 1) * self.hop_length + self.window_size
    }
}

/// Periodic Hann window, `w[n] = 0.5 - 0.5 cos(2πn/W)`.
pub fn hann_periodic<T: Scalar>(size: usize) -> Vec<T> {
    (0..size)
        .map(|n| {
            let phase = 2.0 * std::f64::consts::PI * n as f64 / size as f64;
            T::from_f64_lossy(0.5 - 0.5 * phase.cos())
        })
        .collect()
}

/// Maps a possibly out-of-range sample index onto `[0, len)` by
/// mirror reflection without repeating the edge sample.
pub fn reflect_index(mut i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    i = i.rem_euclid(period);
    if i >= len as isize {
        i = period - i;
    }
    i as usize
}

/// Source sample for padded position `p`, or `None` for trailing zeros.
#[inline]
pub(crate) fn padded_source(p: usize, half: usize, len: usize) -> Option<usize> {
    let n = p as isize - half as isize;
    if n >= (len + half) as isize {
        None
    } else {
        Some(reflect_index(n, len))
    }
}

/// Framed complex spectrum, `frames x bins`, row-major by frame.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexSpectrogram<T> {
    pub frames: usize,
    pub bins: usize,
    pub values: Vec<Complex<T>>,
    pub config: StftConfig,
    pub original_length: Option<usize>,
    pub sample_rate: u32,
}

impl<T: Scalar> ComplexSpectrogram<T> {
    pub fn frame(&self, t: usize) -> &[Complex<T>] {
        &self.values[t * self.bins..(t + 1) * self.bins]
    }

    pub fn check(&self) -> Result<()> {
        self.config.validate()?;
        if self.bins != self.config.bins() {
            return Err(Error::arg(format!(
                "spectrogram has {} bins, config implies {}",
                self.bins,
                self.config.bins()
            )));
        }
        if self.values.len() != self.frames * self.bins {
            return Err(Error::arg("spectrogram value count != frames x bins"));
        }
        Ok(())
    }
}

/// FFT plans and window for one configuration.
///
/// Besides analysis and synthesis of single frames, exposes the adjoint
/// of each, which the differentiable transforms use for their backward
/// pass.
#[derive(Clone)]
pub struct StftPlan<T: Scalar> {
    config: StftConfig,
    window: Vec<T>,
    forward: Arc<dyn Fft<T>>,
    inverse: Arc<dyn Fft<T>>,
}

impl<T: Scalar> std::fmt::Debug for StftPlan<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StftPlan").field("config", &self.config).finish()
    }
}

impl<T: Scalar> StftPlan<T> {
    pub fn new(config: StftConfig) -> Result<Self> {
        config.validate()?;
        let mut planner = FftPlanner::new();
        Ok(Self {
            config,
            window: hann_periodic(config.window_size),
            forward: planner.plan_fft_forward(config.window_size),
            inverse: planner.plan_fft_inverse(config.window_size),
        })
    }

    pub fn config(&self) -> StftConfig {
        self.config
    }

    pub fn window(&self) -> &[T] {
        &self.window
    }

    /// Windowed real FFT of `frame` (W samples) into `out` (W/2+1 bins).
    pub fn analyze_frame(&self, frame: &[T], out: &mut [Complex<T>]) {
        let mut buf: Vec<Complex<T>> = frame
            .iter()
            .zip(&self.window)
            .map(|(&x, &w)| Complex::new(x * w, T::zero()))
            .collect();
        self.forward.process(&mut buf);
        out.copy_from_slice(&buf[..self.config.bins()]);
    }

    /// Inverse real FFT of a half spectrum, multiplied by the synthesis
    /// window. Imaginary parts of the DC and Nyquist bins are ignored.
    pub fn synthesize_frame(&self, bins: &[Complex<T>], out: &mut [T]) {
        let w = self.config.window_size;
        let half = w / 2;
        let mut buf = vec![Complex::new(T::zero(), T::zero()); w];
        buf[0] = Complex::new(bins[0].re, T::zero());
        buf[half] = Complex::new(bins[half].re, T::zero());
        for k in 1..half {
            buf[k] = bins[k];
            buf[w - k] = bins[k].conj();
        }
        self.inverse.process(&mut buf);
        let scale = T::one() / T::from_usize(w).unwrap();
        for ((o, b), &win) in out.iter_mut().zip(&buf).zip(&self.window) {
            *o = b.re * scale * win;
        }
    }

    /// Adjoint of [`analyze_frame`](Self::analyze_frame): maps a gradient
    /// on the (re, im) bin values to a gradient on the frame samples.
    pub fn analyze_frame_adjoint(&self, grad_bins: &[Complex<T>], out: &mut [T]) {
        let w = self.config.window_size;
        let mut buf = vec![Complex::new(T::zero(), T::zero()); w];
        buf[..grad_bins.len()].copy_from_slice(grad_bins);
        // Re(sum_k G_k e^{+i 2pi k n / W}) with G zero above W/2
        self.inverse.process(&mut buf);
        for ((o, b), &win) in out.iter_mut().zip(&buf).zip(&self.window) {
            *o = b.re * win;
        }
    }

    /// Adjoint of [`synthesize_frame`](Self::synthesize_frame).
    pub fn synthesize_frame_adjoint(&self, grad_samples: &[T], out: &mut [Complex<T>]) {
        let w = self.config.window_size;
        let half = w / 2;
        let mut buf: Vec<Complex<T>> = grad_samples
            .iter()
            .zip(&self.window)
            .map(|(&g, &win)| Complex::new(g * win, T::zero()))
            .collect();
        self.forward.process(&mut buf);
        let inv_w = T::one() / T::from_usize(w).unwrap();
        let two = T::one() + T::one();
        for k in 0..=half {
            let c = if k == 0 || k == half { inv_w } else { two * inv_w };
            out[k] = Complex::new(buf[k].re * c, buf[k].im * c);
        }
        out[0].im = T::zero();
        out[half].im = T::zero();
    }

    /// Summed squared-window envelope over a padded signal of `frames`.
    pub fn envelope(&self, frames: usize) -> Vec<T> {
        let (w, h) = (self.config.window_size, self.config.hop_length);
        let mut env = vec![T::zero(); (frames.max(1) - 1) * h + w];
        for t in 0..frames {
            for (n, &win) in self.window.iter().enumerate() {
                env[t * h + n] += win * win;
            }
        }
        env
    }

    /// Spectrogram of a single-channel signal.
    pub fn stft(&self, signal: &[T]) -> Result<ComplexSpectrogram<T>> {
        if signal.is_empty() {
            return Err(Error::arg("stft of an empty signal"));
        }
        let (w, h) = (self.config.window_size, self.config.hop_length);
        let bins = self.config.bins();
        let frames = self.config.num_frames(signal.len());
        let padded: Vec<T> = (0..self.config.padded_len(signal.len()))
            .map(|p| padded_source(p, w / 2, signal.len()).map_or(T::zero(), |i| signal[i]))
            .collect();
        let mut values = vec![Complex::new(T::zero(), T::zero()); frames * bins];
        for (t, out) in values.chunks_exact_mut(bins).enumerate() {
            self.analyze_frame(&padded[t * h..t * h + w], out);
        }
        Ok(ComplexSpectrogram {
            frames,
            bins,
            values,
            config: self.config,
            original_length: Some(signal.len()),
            sample_rate: 0,
        })
    }

    /// Weighted overlap-add inverse, truncated to `length`.
    pub fn istft(&self, values: &[Complex<T>], frames: usize, length: usize) -> Vec<T> {
        let (w, h) = (self.config.window_size, self.config.hop_length);
        let bins = self.config.bins();
        let env = self.envelope(frames);
        let mut acc = vec![T::zero(); env.len()];
        let mut frame = vec![T::zero(); w];
        for t in 0..frames {
            self.synthesize_frame(&values[t * bins..(t + 1) * bins], &mut frame);
            for (a, &f) in acc[t * h..t * h + w].iter_mut().zip(&frame) {
                *a += f;
            }
        }
        let half = w / 2;
        let floor = T::epsilon();
        (0..length)
            .map(|n| {
                let p = n + half;
                if p < acc.len() && env[p] > floor {
                    acc[p] / env[p]
                } else {
                    T::zero()
                }
            })
            .collect()
    }
}

/// Spectrogram of one channel.
pub fn stft_signal<T: Scalar>(signal: &[T], config: StftConfig) -> Result<ComplexSpectrogram<T>> {
    StftPlan::new(config)?.stft(signal)
}

/// Spectrogram of a single-channel buffer.
pub fn stft<T: Scalar>(buffer: &AudioBuffer<T>, config: StftConfig) -> Result<ComplexSpectrogram<T>> {
    if buffer.num_channels() != 1 {
        return Err(Error::arg(format!(
            "stft expects one channel, got {}",
            buffer.num_channels()
        )));
    }
    let mut spec = stft_signal(buffer.channel(0), config)?;
    spec.sample_rate = buffer.sample_rate();
    Ok(spec)
}

pub fn istft_signal<T: Scalar>(spec: &ComplexSpectrogram<T>) -> Result<Vec<T>> {
    spec.check()?;
    let length = spec
        .original_length
        .ok_or_else(|| Error::arg("spectrogram carries no original length"))?;
    Ok(StftPlan::new(spec.config)?.istft(&spec.values, spec.frames, length))
}

pub fn istft<T: Scalar>(spec: &ComplexSpectrogram<T>) -> Result<AudioBuffer<T>> {
    let rate = if spec.sample_rate == 0 {
        super::HIGH_RATE
    } else {
        spec.sample_rate
    };
    AudioBuffer::mono(istft_signal(spec)?, rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_signal(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn bin_and_frame_counts() {
        let spec = stft_signal(&vec![0.0f32; 44100], StftConfig::default()).unwrap();
        assert_eq!(spec.bins, 257);
        assert_eq!(spec.frames, (44100 + 512usize).div_ceil(256));
    }

    #[test]
    fn zero_in_zero_out() {
        let spec = stft_signal(&vec![0.0f64; 3000], StftConfig::default()).unwrap();
        assert!(spec.values.iter().all(|c| c.norm() == 0.0));
        assert!(istft_signal(&spec).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn impulse_gives_flat_magnitude_equal_to_window() {
        let cfg = StftConfig::default();
        let window = hann_periodic::<f64>(512);
        for (t, offset) in [(4usize, 256usize), (6, 100), (7, 300)] {
            // padded position t*H + offset -> sample t*H + offset - W/2
            let mut x = vec![0.0f64; 4096];
            x[t * 256 + offset - 256] = 1.0;
            let spec = stft_signal(&x, cfg).unwrap();
            for c in spec.frame(t) {
                assert!((c.norm() - window[offset]).abs() < 1e-12);
            }
        }
    }

    /// Direct DFT of each padded, windowed frame.
    #[test]
    fn matches_direct_dft() {
        let cfg = StftConfig::new(16, 4).unwrap();
        let x = random_signal(37, 3);
        let spec = stft_signal(&x, cfg).unwrap();
        let window = hann_periodic::<f64>(16);
        for t in 0..spec.frames {
            for k in 0..spec.bins {
                let mut acc = Complex::new(0.0, 0.0);
                for n in 0..16 {
                    let p = t * 4 + n;
                    let v = padded_source(p, 8, x.len()).map_or(0.0, |i| x[i]);
                    let ang = -2.0 * std::f64::consts::PI * (k * n) as f64 / 16.0;
                    acc += Complex::new(ang.cos(), ang.sin()) * v * window[n];
                }
                assert!((acc - spec.frame(t)[k]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn round_trip_random() {
        for seed in 0..5 {
            let x = random_signal(8192, seed);
            let y = istft_signal(&stft_signal(&x, StftConfig::default()).unwrap()).unwrap();
            let err = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err <= 1e-6, "max error {err}");
        }
    }

    #[test]
    fn round_trip_sine_rms() {
        let x: Vec<f64> = (0..8192).map(|n| (0.05 * n as f64).sin()).collect();
        let y = istft_signal(&stft_signal(&x, StftConfig::default()).unwrap()).unwrap();
        let rms = |v: &[f64]| (v.iter().map(|a| a * a).sum::<f64>() / v.len() as f64).sqrt();
        assert!((rms(&x) - rms(&y)).abs() / rms(&x) <= 1e-6);
    }

    #[test]
    fn reflect_indices() {
        assert_eq!(reflect_index(-1, 5), 1);
        assert_eq!(reflect_index(-4, 5), 4);
        assert_eq!(reflect_index(5, 5), 3);
        assert_eq!(reflect_index(-6, 5), 2);
        assert_eq!(reflect_index(3, 1), 0);
    }

    #[test]
    fn argument_errors() {
        assert!(stft_signal::<f32>(&[], StftConfig::default()).is_err());
        assert!(StftConfig::new(512, 512).is_err());
        assert!(StftConfig::new(512, 300).is_err());
        let mut spec = stft_signal(&[1.0f32; 600], StftConfig::default()).unwrap();
        spec.original_length = None;
        assert!(istft_signal(&spec).is_err());
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    /// <A x, g> == <x, A^T g> for both frame transforms.
    #[test]
    fn frame_adjoints() {
        let plan = StftPlan::<f64>::new(StftConfig::new(32, 8).unwrap()).unwrap();
        let x = random_signal(32, 11);
        let g = random_signal(34, 12);
        let g_bins: Vec<Complex<f64>> = g.chunks(2).map(|c| Complex::new(c[0], c[1])).collect();

        let mut ax = vec![Complex::new(0.0, 0.0); 17];
        plan.analyze_frame(&x, &mut ax);
        let lhs: f64 = ax.iter().zip(&g_bins).map(|(a, b)| a.re * b.re + a.im * b.im).sum();
        let mut atg = vec![0.0; 32];
        plan.analyze_frame_adjoint(&g_bins, &mut atg);
        assert!((lhs - dot(&x, &atg)).abs() < 1e-10);

        let mut sx = vec![0.0; 32];
        plan.synthesize_frame(&g_bins, &mut sx);
        let lhs = dot(&sx, &x);
        let mut stx = vec![Complex::new(0.0, 0.0); 17];
        plan.synthesize_frame_adjoint(&x, &mut stx);
        let rhs: f64 = stx.iter().zip(&g_bins).map(|(a, b)| a.re * b.re + a.im * b.im).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
