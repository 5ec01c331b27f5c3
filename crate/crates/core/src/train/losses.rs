use crate::autodiff::{add, add_scalar, l1, log_magnitude, mean, relu, scale, stft, Tensor};
use crate::dsp::StftPlan;
use crate::error::{Error, Result};
use crate::model::ScaleOutput;
use crate::scalar::{lit, Scalar};

/// Floor inside the log-magnitude of the spectral reconstruction term.
pub const LOG_MAG_EPSILON: f64 = 1e-7;

/// Feature-matching weight in the generator objective.
pub const DEFAULT_LAMBDA: f64 = 100.0;

/// Generator objective components and the discriminator loss of one step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossReport {
    pub l_adv: f64,
    pub l_rec: f64,
    pub l_fmap: f64,
    pub lambda: f64,
    /// `l_adv + l_rec + lambda * l_fmap`.
    pub l_g: f64,
    pub l_d: f64,
}

impl LossReport {
    /// Relative deviation of `l_g` from its defining sum.
    pub fn identity_error(&self) -> f64 {
        let want = self.l_adv + self.l_rec + self.lambda * self.l_fmap;
        (self.l_g - want).abs() / want.abs().max(f64::MIN_POSITIVE)
    }
}

/// `L_G = L_adv + L_rec + λ·L_fmap`. `l_d` is left at 0.
pub fn loss_generator_total(l_adv: f64, l_rec: f64, l_fmap: f64, lambda: f64) -> Result<LossReport> {
    for (name, v) in [("L_adv", l_adv), ("L_rec", l_rec), ("L_fmap", l_fmap), ("lambda", lambda)] {
        if !v.is_finite() {
            return Err(Error::numeric(name, format!("non-finite value {v}")));
        }
    }
    Ok(LossReport {
        l_adv,
        l_rec,
        l_fmap,
        lambda,
        l_g: l_adv + l_rec + lambda * l_fmap,
        l_d: 0.0,
    })
}

/// Mean absolute waveform error plus mean absolute log-magnitude error
/// of the spectrograms, equally weighted. Inputs are `[B, N]`.
pub fn loss_reconstruction<T: Scalar>(estimate: &Tensor<T>, reference: &Tensor<T>, plan: &StftPlan<T>) -> Result<Tensor<T>> {
    if estimate.shape() != reference.shape() {
        return Err(Error::arg(format!(
            "reconstruction loss length mismatch: {:?} vs {:?}",
            estimate.shape(),
            reference.shape()
        )));
    }
    let n = lit::<T>(estimate.numel() as f64);
    let wave = scale(&l1(estimate, reference)?, T::one() / n);
    let eps = lit(LOG_MAG_EPSILON);
    let le = log_magnitude(&stft(estimate, plan)?, eps)?;
    let lr = log_magnitude(&stft(reference, plan)?, eps)?;
    let m = lit::<T>(le.numel() as f64);
    let spec = scale(&l1(&le, &lr)?, T::one() / m);
    add(&wave, &spec)
}

fn check_scales<T: Scalar>(what: &str, a: &[ScaleOutput<T>], b: &[ScaleOutput<T>]) -> Result<()> {
    if a.is_empty() || a.len() != b.len() {
        return Err(Error::contract(format!("{what}: {} vs {} discriminator scales", a.len(), b.len())));
    }
    Ok(())
}

/// `Σ_k Σ_i mean |real_ki - fake_ki|`. Real features are detached, so
/// gradients reach only the generated branch.
pub fn loss_feature_matching<T: Scalar>(real: &[ScaleOutput<T>], fake: &[ScaleOutput<T>]) -> Result<Tensor<T>> {
    check_scales("feature matching", real, fake)?;
    let mut total = Tensor::scalar(T::zero());
    for (r, f) in real.iter().zip(fake) {
        if r.features.len() != f.features.len() {
            return Err(Error::contract(format!(
                "feature matching: {} vs {} feature maps",
                r.features.len(),
                f.features.len()
            )));
        }
        for (rm, fm) in r.features.iter().zip(&f.features) {
            if rm.shape() != fm.shape() {
                return Err(Error::contract(format!(
                    "feature map shapes differ: {:?} vs {:?}",
                    rm.shape(),
                    fm.shape()
                )));
            }
            let n = lit::<T>(fm.numel() as f64);
            total = add(&total, &scale(&l1(&rm.detach(), fm)?, T::one() / n))?;
        }
    }
    Ok(total)
}

fn hinge_mean<T: Scalar>(logits: &Tensor<T>, sign: T) -> Result<Tensor<T>> {
    // mean(max(0, 1 + sign * D))
    mean(&relu(&add_scalar(&scale(logits, sign), T::one())))
}

/// `Σ_k mean(max(0, 1 - D_k(fake)))`.
pub fn loss_adversarial_g<T: Scalar>(fake: &[ScaleOutput<T>], scales: usize) -> Result<Tensor<T>> {
    if fake.len() != scales || scales == 0 {
        return Err(Error::contract(format!("expected logits for {scales} scales, got {}", fake.len())));
    }
    let mut total = Tensor::scalar(T::zero());
    for s in fake {
        total = add(&total, &hinge_mean(&s.logits, -T::one())?)?;
    }
    Ok(total)
}

/// `Σ_k mean(max(0, 1 - D_k(real))) + mean(max(0, 1 + D_k(fake)))`.
pub fn loss_discriminator<T: Scalar>(real: &[ScaleOutput<T>], fake: &[ScaleOutput<T>]) -> Result<Tensor<T>> {
    check_scales("discriminator loss", real, fake)?;
    let mut total = Tensor::scalar(T::zero());
    for (r, f) in real.iter().zip(fake) {
        total = add(&total, &hinge_mean(&r.logits, -T::one())?)?;
        total = add(&total, &hinge_mean(&f.logits, T::one())?)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{StftConfig, StftPlan};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn outputs(logit: f64, feature: f64) -> Vec<ScaleOutput<f64>> {
        (0..3)
            .map(|k| ScaleOutput {
                logits: Tensor::new(vec![logit; 5 + k], &[1, 1, 5 + k]).unwrap(),
                features: (0..6)
                    .map(|i| Tensor::param(vec![feature + i as f64; 4 * (i + 1)], &[1, 4, i + 1]).unwrap())
                    .collect(),
            })
            .collect()
    }

    #[test]
    fn total_examples() {
        assert_eq!(loss_generator_total(2.0, 3.0, 0.01, 100.0).unwrap().l_g, 6.0);
        assert_eq!(loss_generator_total(0.0, 0.0, 0.0, 100.0).unwrap().l_g, 0.0);
        assert_eq!(loss_generator_total(1.5, 2.25, 7.0, 0.0).unwrap().l_g, 3.75);
        match loss_generator_total(1.0, f64::NAN, 0.0, 100.0) {
            Err(Error::Numeric { component, .. }) => assert_eq!(component, "L_rec"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn hinge_examples() {
        assert_eq!(loss_discriminator(&outputs(2.0, 0.0), &outputs(-2.0, 0.0)).unwrap().item().unwrap(), 0.0);
        assert_eq!(loss_adversarial_g(&outputs(0.0, 0.0), 3).unwrap().item().unwrap(), 3.0);
        assert!(matches!(loss_adversarial_g(&outputs(0.0, 0.0)[..2], 3), Err(Error::Contract(_))));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let r = outputs(rng.random_range(-3.0..3.0), 0.0);
            let f = outputs(rng.random_range(-3.0..3.0), 0.0);
            assert!(loss_discriminator(&r, &f).unwrap().item().unwrap() >= 0.0);
            assert!(loss_adversarial_g(&f, 3).unwrap().item().unwrap() >= 0.0);
        }
    }

    #[test]
    fn feature_matching_examples() {
        let real = outputs(0.0, 0.0);
        assert_eq!(loss_feature_matching(&real, &real).unwrap().item().unwrap(), 0.0);
        let fake = outputs(0.0, 1.0);
        let l = loss_feature_matching(&real, &fake).unwrap();
        assert!((l.item().unwrap() - 18.0).abs() < 1e-12);
        l.backward().unwrap();
        assert!(fake.iter().all(|s| s.features.iter().all(|f| f.has_grad())));
        assert!(real.iter().all(|s| s.features.iter().all(|f| !f.has_grad())));
        let mut short = outputs(0.0, 1.0);
        short[1].features.pop();
        assert!(matches!(loss_feature_matching(&real, &short), Err(Error::Contract(_))));
    }

    fn plan() -> StftPlan<f64> {
        StftPlan::new(StftConfig::new(512, 256).unwrap()).unwrap()
    }

    #[test]
    fn reconstruction_identity_and_offset() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let y: Vec<f64> = (0..3000).map(|_| rng.random_range(-0.5..0.5)).collect();
        let yt = Tensor::new(y.clone(), &[1, 3000]).unwrap();
        assert_eq!(loss_reconstruction(&yt, &yt, &plan()).unwrap().item().unwrap(), 0.0);
        let shifted = Tensor::new(y.iter().map(|v| v + 0.1).collect(), &[1, 3000]).unwrap();
        let wave = l1(&shifted, &yt).unwrap().item().unwrap() / 3000.0;
        assert!((wave - 0.1).abs() < 1e-12);
        assert!(loss_reconstruction(&yt, &Tensor::zeros(&[1, 2999]), &plan()).is_err());
    }

    /// Direct-DFT recomputation of the reconstruction loss.
    fn naive(est: &[f64], reference: &[f64]) -> f64 {
        let (w, h) = (512usize, 256usize);
        let n = est.len();
        let wave = est.iter().zip(reference).map(|(a, b)| (a - b).abs()).sum::<f64>() / n as f64;
        let frames = (n + w).div_ceil(h);
        let window: Vec<f64> = (0..w).map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / w as f64).cos()).collect();
        let padded = |x: &[f64], p: usize| -> f64 {
            let i = p as isize - (w / 2) as isize;
            let len = x.len() as isize;
            if i >= len + (w / 2) as isize {
                return 0.0;
            }
            let j = if i < 0 { -i } else if i >= len { 2 * (len - 1) - i } else { i };
            x[j as usize]
        };
        let logmag = |x: &[f64], t: usize, k: usize| -> f64 {
            let (mut re, mut im) = (0.0, 0.0);
            for m in 0..w {
                let v = padded(x, t * h + m) * window[m];
                let ang = -2.0 * std::f64::consts::PI * (k * m) as f64 / w as f64;
                re += v * ang.cos();
                im += v * ang.sin();
            }
            0.5 * (re * re + im * im + 1e-14).ln()
        };
        let bins = w / 2 + 1;
        let mut spec = 0.0;
        for t in 0..frames {
            for k in 0..bins {
                spec += (logmag(est, t, k) - logmag(reference, t, k)).abs();
            }
        }
        wave + spec / (frames * bins) as f64
    }

    #[test]
    fn reconstruction_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 1100;
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(-0.5..0.5)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-0.5..0.5)).collect();
        let fast = loss_reconstruction(
            &Tensor::new(a.clone(), &[1, n]).unwrap(),
            &Tensor::new(b.clone(), &[1, n]).unwrap(),
            &plan(),
        )
        .unwrap()
        .item()
        .unwrap();
        let slow = naive(&a, &b);
        assert!((fast - slow).abs() <= 1e-9 * slow, "{fast} vs {slow}");
    }
}
