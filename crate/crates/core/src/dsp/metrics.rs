use std::io::Write;
use std::path::Path;

use num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::stft::{StftConfig, StftPlan};
use super::AudioBuffer;

/// Analysis resolution of the log-spectral distance.
pub const LSD_STFT: StftConfig = StftConfig {
    window_size: 2048,
    hop_length: 512,
};

/// Power floor inside the logarithm.
pub const LSD_EPSILON: f64 = 1e-10;

/// Log-spectral distance between two single-channel signals.
pub fn lsd_signal<T: Scalar>(reference: &[T], estimate: &[T]) -> Result<f64> {
    if reference.len() != estimate.len() {
        return Err(Error::arg(format!(
            "lsd length mismatch: {} vs {}",
            reference.len(),
            estimate.len()
        )));
    }
    let plan = StftPlan::<f64>::new(LSD_STFT)?;
    let to64 = |s: &[T]| s.iter().map(|v| v.to_f64_lossy()).collect::<Vec<_>>();
    let a = plan.stft(&to64(reference))?;
    let b = plan.stft(&to64(estimate))?;
    let total: f64 = (0..a.frames)
        .map(|t| {
            let mean_sq = a
                .frame(t)
                .iter()
                .zip(b.frame(t))
                .map(|(x, y)| {
                    let d = (x.norm_sqr() + LSD_EPSILON).log10() - (y.norm_sqr() + LSD_EPSILON).log10();
                    d * d
                })
                .sum::<f64>()
                / a.bins as f64;
            mean_sq.sqrt()
        })
        .sum();
    Ok(total / a.frames as f64)
}

/// Log-spectral distance averaged over channels.
pub fn lsd<T: Scalar>(reference: &AudioBuffer<T>, estimate: &AudioBuffer<T>) -> Result<f64> {
    if reference.sample_rate() != estimate.sample_rate() {
        return Err(Error::arg(format!(
            "lsd rate mismatch: {} vs {}",
            reference.sample_rate(),
            estimate.sample_rate()
        )));
    }
    if reference.num_channels() != estimate.num_channels() {
        return Err(Error::arg("lsd channel count mismatch"));
    }
    let mut sum = 0.0;
    for (r, e) in reference.channels().iter().zip(estimate.channels()) {
        sum += lsd_signal(r, e)?;
    }
    Ok(sum / reference.num_channels() as f64)
}

/// Whole-signal FFT energy in bins strictly above `hz`, summed over
/// channels.
pub fn band_energy_above<T: Scalar>(buffer: &AudioBuffer<T>, hz: f64) -> f64 {
    let n = buffer.len();
    if n == 0 {
        return 0.0;
    }
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let rate = buffer.sample_rate() as f64;
    buffer
        .channels()
        .iter()
        .map(|c| {
            let mut buf: Vec<Complex<f64>> =
                c.iter().map(|v| Complex::new(v.to_f64_lossy(), 0.0)).collect();
            fft.process(&mut buf);
            (0..=n / 2)
                .filter(|&k| k as f64 * rate / n as f64 > hz)
                .map(|k| buf[k].norm_sqr())
                .sum::<f64>()
        })
        .sum()
}

/// One `metric,track_id,value` row.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub metric: String,
    pub track_id: String,
    pub value: String,
}

impl MetricRow {
    pub fn new(metric: impl Into<String>, track_id: impl Into<String>, value: impl ToString) -> Self {
        Self {
            metric: metric.into(),
            track_id: track_id.into(),
            value: value.to_string(),
        }
    }
}

pub fn write_metric_csv(path: impl AsRef<Path>, rows: &[MetricRow]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "metric,track_id,value")?;
    for r in rows {
        writeln!(f, "{},{},{}", r.metric, r.track_id, r.value)?;
    }
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.random_range(-0.5..0.5)).collect()
    }

    #[test]
    fn identity_is_zero() {
        let x = noise(10_000, 1);
        assert_eq!(lsd_signal(&x, &x).unwrap(), 0.0);
    }

    #[test]
    fn tenfold_power_gives_one() {
        // (len + W) divisible by H: no frame is mostly trailing zeros
        let x = noise(20_480, 2);
        let y: Vec<f64> = x.iter().map(|v| v * 10f64.sqrt()).collect();
        let d = lsd_signal(&x, &y).unwrap();
        assert!((d - 1.0).abs() <= 1e-6, "{d}");
    }

    #[test]
    fn symmetric() {
        let x = noise(5000, 3);
        let y = noise(5000, 4);
        assert_eq!(lsd_signal(&x, &y).unwrap(), lsd_signal(&y, &x).unwrap());
    }

    #[test]
    fn length_mismatch() {
        assert!(lsd_signal(&[0.0f64; 10], &[0.0; 11]).is_err());
    }

    #[test]
    fn band_energy_of_sine() {
        let x: Vec<f64> = (0..44100)
            .map(|n| (2.0 * std::f64::consts::PI * 1000.0 * n as f64 / 44100.0).sin())
            .collect();
        let b = AudioBuffer::mono(x, 44100).unwrap();
        assert!(band_energy_above(&b, 2000.0) < 1e-12 * band_energy_above(&b, 0.0));
        assert!(band_energy_above(&b, 500.0) > 0.99 * band_energy_above(&b, 0.0));
    }
}
