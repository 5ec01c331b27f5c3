use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{avg_pool1d, conv1d, leaky_relu, reshape, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::config::{DiscLayer, DiscriminatorConfig};
use super::{uniform_tensor, ParamMap};

/// Patch logits and intermediate activations of one scale.
#[derive(Clone, Debug)]
pub struct ScaleOutput<T: Scalar> {
    pub logits: Tensor<T>,
    pub features: Vec<Tensor<T>>,
}

pub type DiscOutput<T> = Vec<ScaleOutput<T>>;

/// Sub-discriminators at successively average-pooled input rates.
#[derive(Clone, Debug)]
pub struct Discriminator<T: Scalar> {
    config: DiscriminatorConfig,
    named: Vec<(String, Tensor<T>)>,
    layers: Vec<DiscLayer>,
    /// `[scale][layer] -> (weight, bias)`.
    weights: Vec<Vec<(Tensor<T>, Tensor<T>)>>,
}

impl<T: Scalar> Discriminator<T> {
    pub fn new(config: DiscriminatorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let named = config
            .param_shapes()
            .into_iter()
            .map(|(name, shape)| {
                let t = if name.ends_with(".bias") {
                    Tensor::param(vec![T::zero(); shape.iter().product()], &shape).expect("length matches")
                } else {
                    uniform_tensor(&shape, &mut rng)
                };
                (name, t)
            })
            .collect();
        Self::from_named(config, named)
    }

    pub fn from_named(config: DiscriminatorConfig, named: Vec<(String, Tensor<T>)>) -> Result<Self> {
        config.validate()?;
        let layers = config.layers();
        let map = ParamMap::new(named);
        let mut weights = Vec::with_capacity(config.scales);
        for s in 0..config.scales {
            let mut per = Vec::with_capacity(layers.len());
            for (i, l) in layers.iter().enumerate() {
                per.push((
                    map.take(&format!("scale.{s}.layer.{i}.weight"), &[l.c_out, l.c_in / l.groups, l.kernel])?,
                    map.take(&format!("scale.{s}.layer.{i}.bias"), &[l.c_out])?,
                ));
            }
            weights.push(per);
        }
        map.finish()?;
        let named = config
            .param_shapes()
            .into_iter()
            .map(|(name, shape)| Ok((name.clone(), map.take(&name, &shape)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config,
            named,
            layers,
            weights,
        })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.config
    }

    pub fn named_params(&self) -> &[(String, Tensor<T>)] {
        &self.named
    }

    pub fn params(&self) -> Vec<Tensor<T>> {
        self.named.iter().map(|(_, t)| t.clone()).collect()
    }

    /// Input seen by each scale, `[B, 1, N_k]`: the waveform, then
    /// repeated average pooling (kernel 4, stride 2, padding 1, padded
    /// positions not counted).
    pub fn scale_inputs(&self, wave: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let &[b, n] = wave.shape() else {
            return Err(Error::arg(format!("discriminator expects [batch, samples], got {:?}", wave.shape())));
        };
        let rf = self.config.receptive_field();
        if n < rf {
            return Err(Error::arg(format!(
                "discriminator input of {n} samples is shorter than its receptive field of {rf}"
            )));
        }
        let mut x = reshape(wave, &[b, 1, n])?;
        let mut out = vec![x.clone()];
        for _ in 1..self.config.scales {
            x = avg_pool1d(&x, 4, 2, 1)?;
            out.push(x.clone());
        }
        Ok(out)
    }

    pub fn forward(&self, wave: &Tensor<T>) -> Result<DiscOutput<T>> {
        let slope = T::from_f64_lossy(self.config.slope);
        let last = self.layers.len() - 1;
        self.scale_inputs(wave)?
            .into_iter()
            .zip(&self.weights)
            .map(|(mut x, ws)| {
                let mut features = Vec::with_capacity(last);
                for (l, (w, b)) in self.layers.iter().zip(ws) {
                    x = conv1d(&x, w, Some(b), l.stride, l.padding, l.groups)?;
                    if features.len() < last {
                        x = leaky_relu(&x, slope);
                        features.push(x.clone());
                    }
                }
                Ok(ScaleOutput { logits: x, features })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::no_grad;
    use rand::Rng;

    fn wave(n: usize, seed: u64) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new((0..n).map(|_| rng.random_range(-1.0..1.0)).collect(), &[1, n]).unwrap()
    }

    #[test]
    fn eighteen_feature_maps_and_finite_logits() {
        let d = Discriminator::<f32>::new(DiscriminatorConfig::default(), 1).unwrap();
        let n = d.config().receptive_field();
        let out = no_grad(|| d.forward(&wave(n, 2))).unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(out.iter().map(|s| s.features.len()).sum::<usize>(), 18);
        for s in &out {
            assert!(s.logits.numel() >= 1);
            assert!(s.logits.data().iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn second_scale_is_average_pool_of_first() {
        let d = Discriminator::<f32>::new(DiscriminatorConfig::default(), 1).unwrap();
        let n = d.config().receptive_field() + 3;
        let x = wave(n, 3);
        let ins = d.scale_inputs(&x).unwrap();
        let src = x.to_vec();
        let pooled = ins[1].to_vec();
        assert_eq!(pooled.len(), (n + 2 - 4) / 2 + 1);
        for (j, &v) in pooled.iter().enumerate() {
            let lo = (2 * j).saturating_sub(1);
            let hi = (2 * j + 3).min(n);
            let want = src[lo..hi].iter().sum::<f32>() / (hi - lo) as f32;
            assert_eq!(v, want);
        }
    }

    #[test]
    fn too_short_is_argument_error() {
        let d = Discriminator::<f32>::new(DiscriminatorConfig::default(), 1).unwrap();
        let n = d.config().receptive_field() - 1;
        assert!(matches!(d.forward(&wave(n, 4)), Err(Error::Argument(_))));
    }
}
