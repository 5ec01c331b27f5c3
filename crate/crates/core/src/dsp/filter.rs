//! Linear-phase FIR design and the band-limiting degradation pipeline.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::AudioBuffer;

/// Rate of the full-band signals.
pub const HIGH_RATE: u32 = 44_100;
/// Default rate of the simulated low-resolution signals.
pub const LOW_RATE: u32 = 11_025;

/// Taps per unit of decimation factor; 4:1 gives 255 taps.
const TAPS_PER_FACTOR: usize = 64;

/// Linear-phase FIR filter with an odd number of symmetric taps.
#[derive(Clone, Debug, PartialEq)]
pub struct FirFilter<T> {
    taps: Vec<T>,
}

impl<T: Scalar> FirFilter<T> {
    pub fn taps(&self) -> &[T] {
        &self.taps
    }

    pub fn num_taps(&self) -> usize {
        self.taps.len()
    }

    /// Delay in samples, `(num_taps - 1) / 2`.
    pub fn group_delay(&self) -> usize {
        (self.taps.len() - 1) / 2
    }

    /// Convolution with the group delay removed: `out[n]` is centred on
    /// `x[n]`, and the signal is zero outside its support.
    pub fn apply_same(&self, x: &[T]) -> Vec<T> {
        let g = self.group_delay() as isize;
        let n = x.len() as isize;
        (0..n)
            .map(|i| {
                let mut acc = T::zero();
                for (k, &h) in self.taps.iter().enumerate() {
                    let j = i + g - k as isize;
                    if j >= 0 && j < n {
                        acc += h * x[j as usize];
                    }
                }
                acc
            })
            .collect()
    }
}

/// Hann-windowed sinc low-pass, normalized to unit DC gain.
///
/// `cutoff` is in cycles per sample.
pub fn design_lowpass<T: Scalar>(cutoff: f64, num_taps: usize) -> Result<FirFilter<T>> {
    if !(cutoff > 0.0 && cutoff < 0.5) {
        return Err(Error::arg(format!(
            "cutoff {cutoff} outside the open interval (0, 0.5)"
        )));
    }
    if num_taps % 2 == 0 || num_taps < 11 {
        return Err(Error::arg(format!(
            "num_taps must be odd and at least 11, got {num_taps}"
        )));
    }
    let m = (num_taps - 1) / 2;
    let mut h = vec![0.0f64; num_taps];
    for i in 0..=m {
        let t = i as f64 - m as f64;
        let sinc = if i == m {
            2.0 * cutoff
        } else {
            (2.0 * PI * cutoff * t).sin() / (PI * t)
        };
        let w = 0.5 - 0.5 * (2.0 * PI * i as f64 / (num_taps - 1) as f64).cos();
        h[i] = sinc * w;
        h[num_taps - 1 - i] = h[i];
    }
    let dc: f64 = h.iter().sum();
    Ok(FirFilter {
        taps: h.iter().map(|&v| T::from_f64_lossy(v / dc)).collect(),
    })
}

/// Simulates a low-resolution recording at the original rate: anti-alias
/// low-pass, decimation by `rate / low_rate`, zero-stuffing back to the
/// original rate and image rejection with the same filter (gain scaled by
/// the factor). Output length equals input length.
pub fn degrade<T: Scalar>(buffer: &AudioBuffer<T>, low_rate: u32) -> Result<AudioBuffer<T>> {
    let rate = buffer.sample_rate();
    if low_rate == 0 || low_rate > rate || rate % low_rate != 0 {
        return Err(Error::arg("decimation factor must be an integer"));
    }
    let factor = (rate / low_rate) as usize;
    if factor == 1 {
        return Ok(buffer.clone());
    }
    let filter = anti_alias_filter::<T>(factor)?;
    buffer.try_map_channels(rate, |x| Ok(resample_through(x, factor, &filter)))
}

/// Filter used by [`degrade`] for a given factor.
///
/// The passband edge sits one Hann main-lobe half-width (2 / num_taps)
/// below the low-rate Nyquist so the transition band ends at it.
pub(crate) fn anti_alias_filter<T: Scalar>(factor: usize) -> Result<FirFilter<T>> {
    let num_taps = TAPS_PER_FACTOR * factor - 1;
    let nyquist = 0.5 / factor as f64;
    design_lowpass(nyquist - 2.0 / num_taps as f64, num_taps)
}

fn resample_through<T: Scalar>(x: &[T], factor: usize, filter: &FirFilter<T>) -> Vec<T> {
    let taps = filter.taps();
    let n = x.len() as isize;
    let g = filter.group_delay() as isize;
    let f = factor as isize;

    // decimated low-rate signal, only the kept phase is evaluated
    let low_len = (x.len() + factor - 1) / factor;
    let low: Vec<T> = (0..low_len as isize)
        .map(|m| {
            let centre = m * f + g;
            let mut acc = T::zero();
            for (k, &h) in taps.iter().enumerate() {
                let j = centre - k as isize;
                if j >= 0 && j < n {
                    acc += h * x[j as usize];
                }
            }
            acc
        })
        .collect();

    // zero-stuff and interpolate; only taps aligned with non-zero samples
    // contribute
    let gain = T::from_usize(factor).unwrap();
    (0..n)
        .map(|i| {
            let centre = i + g;
            // k = centre - m*f must lie in [0, taps)
            let m_hi = centre.div_euclid(f);
            let mut acc = T::zero();
            let mut m = m_hi;
            loop {
                let k = centre - m * f;
                if k >= taps.len() as isize || m < 0 {
                    break;
                }
                if (m as usize) < low.len() {
                    acc += taps[k as usize] * low[m as usize];
                }
                m -= 1;
            }
            acc * gain
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dtft_magnitude(taps: &[f64], f: f64) -> f64 {
        let (mut re, mut im) = (0.0, 0.0);
        for (n, &h) in taps.iter().enumerate() {
            re += h * (2.0 * PI * f * n as f64).cos();
            im -= h * (2.0 * PI * f * n as f64).sin();
        }
        (re * re + im * im).sqrt()
    }

    #[test]
    fn unit_dc_gain() {
        let f = design_lowpass::<f64>(0.25, 101).unwrap();
        let sum: f64 = f.taps().iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        assert!(20.0 * dtft_magnitude(f.taps(), 0.0).log10() < 0.01);
    }

    #[test]
    fn symmetric_taps() {
        let f = design_lowpass::<f64>(0.125, 255).unwrap();
        let t = f.taps();
        for i in 0..t.len() {
            assert!((t[i] - t[t.len() - 1 - i]).abs() <= 1e-12);
        }
        assert_eq!(f.group_delay(), 127);
    }

    #[test]
    fn stopband_attenuation_for_four_to_one() {
        let f = design_lowpass::<f64>(0.125, 255).unwrap();
        let db = 20.0 * dtft_magnitude(f.taps(), 0.2).log10();
        assert!(db <= -44.0, "attenuation at 0.2 is only {db} dB");
    }

    #[test]
    fn argument_errors() {
        assert!(design_lowpass::<f64>(0.25, 100).is_err());
        assert!(design_lowpass::<f64>(0.25, 9).is_err());
        assert!(design_lowpass::<f64>(0.0, 101).is_err());
        assert!(design_lowpass::<f64>(0.5, 101).is_err());
    }

    #[test]
    fn degrade_rejects_fractional_factor() {
        let b = AudioBuffer::<f32>::mono(vec![0.0; 100], 44100).unwrap();
        let err = degrade(&b, 30000).unwrap_err();
        assert!(err.to_string().contains("decimation factor must be an integer"));
        assert!(degrade(&b, 22050).is_ok());
    }

    #[test]
    fn degrade_keeps_length_and_silence() {
        let b = AudioBuffer::<f64>::silence(2, 4410, 44100).unwrap();
        let d = degrade(&b, LOW_RATE).unwrap();
        assert_eq!(d.len(), 4410);
        assert_eq!(d.num_channels(), 2);
        assert!(d.channels().iter().flatten().all(|&v| v == 0.0));
    }

    /// Direct evaluation of filter -> decimate -> zero-stuff -> filter.
    #[test]
    fn polyphase_matches_direct_pipeline() {
        let x: Vec<f64> = (0..600).map(|i| ((i * 7919) % 97) as f64 / 97.0 - 0.5).collect();
        let filter = anti_alias_filter::<f64>(4).unwrap();
        let filtered = filter.apply_same(&x);
        let mut stuffed = vec![0.0; x.len()];
        for i in (0..x.len()).step_by(4) {
            stuffed[i] = filtered[i] * 4.0;
        }
        let direct = filter.apply_same(&stuffed);
        let fast = resample_through(&x, 4, &filter);
        for (a, b) in direct.iter().zip(&fast) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
