use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{add, conv1d, conv_transpose1d, glu, istft, no_grad, pad, reshape, slice, stft, Tensor};
use crate::dsp::{AudioBuffer, StftPlan};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::config::GeneratorConfig;
use super::mamba::{MambaBlock, MambaState};
use super::{uniform_tensor, ParamMap};

#[derive(Clone, Debug)]
struct Level<T: Scalar> {
    conv_w: Tensor<T>,
    conv_b: Tensor<T>,
}

/// Spectral U-Net: stacked real/imaginary STFT channels, strided
/// convolution + GLU + Mamba per encoder level, transposed convolution +
/// GLU per decoder level with additive skips.
#[derive(Clone, Debug)]
pub struct Generator<T: Scalar> {
    config: GeneratorConfig,
    plan: StftPlan<T>,
    named: Vec<(String, Tensor<T>)>,
    in_w: Tensor<T>,
    in_b: Tensor<T>,
    encoders: Vec<(Level<T>, MambaBlock<T>)>,
    /// Indexed by level; applied from the deepest.
    decoders: Vec<Level<T>>,
    out_w: Tensor<T>,
    out_b: Tensor<T>,
}

/// Streaming state: one [`MambaState`] per encoder level.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorState<T> {
    pub blocks: Vec<MambaState<T>>,
}

impl<T: Scalar> GeneratorState<T> {
    pub fn memory_bytes(&self) -> usize {
        self.blocks.iter().map(MambaState::memory_bytes).sum()
    }
}

impl<T: Scalar> Generator<T> {
    /// Randomly initialised generator; deterministic in `seed`.
    pub fn new(config: GeneratorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut named = Vec::new();
        for (name, shape) in config.param_shapes() {
            if name.contains(".mamba.") {
                continue;
            }
            let t = if name.ends_with(".bias") {
                Tensor::param(vec![T::zero(); shape.iter().product()], &shape)?
            } else {
                uniform_tensor(&shape, &mut rng)
            };
            named.push((name, t));
        }
        for l in 0..config.depth {
            for (name, t) in MambaBlock::<T>::init_params(config.width(l + 1), &config, &mut rng) {
                named.push((format!("encoder.{l}.mamba.{name}"), t));
            }
        }
        Self::from_named(config, named)
    }

    /// Binds named parameters (as produced by
    /// [`named_params`](Self::named_params)) to a network of `config`.
    pub fn from_named(config: GeneratorConfig, named: Vec<(String, Tensor<T>)>) -> Result<Self> {
        config.validate()?;
        let map = ParamMap::new(named);
        let shapes: std::collections::HashMap<String, Vec<usize>> = config.param_shapes().into_iter().collect();
        let get = |name: &str| map.take(name, &shapes[name]);
        let in_w = get("in_conv.weight")?;
        let in_b = get("in_conv.bias")?;
        let mut encoders = Vec::with_capacity(config.depth);
        let mut decoders = Vec::with_capacity(config.depth);
        for l in 0..config.depth {
            let level = Level {
                conv_w: get(&format!("encoder.{l}.conv.weight"))?,
                conv_b: get(&format!("encoder.{l}.conv.bias"))?,
            };
            let block = MambaBlock::from_map(&map, &format!("encoder.{l}.mamba."), config.width(l + 1), &config)?;
            encoders.push((level, block));
            decoders.push(Level {
                conv_w: get(&format!("decoder.{l}.conv.weight"))?,
                conv_b: get(&format!("decoder.{l}.conv.bias"))?,
            });
        }
        let out_w = get("out_conv.weight")?;
        let out_b = get("out_conv.bias")?;
        map.finish()?;
        let named = config
            .param_shapes()
            .into_iter()
            .map(|(name, shape)| {
                let t = map.take(&name, &shape)?;
                Ok((name, t))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            plan: StftPlan::new(config.stft)?,
            config,
            named,
            in_w,
            in_b,
            encoders,
            decoders,
            out_w,
            out_b,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn plan(&self) -> &StftPlan<T> {
        &self.plan
    }

    /// Parameters in checkpoint order.
    pub fn named_params(&self) -> &[(String, Tensor<T>)] {
        &self.named
    }

    pub fn params(&self) -> Vec<Tensor<T>> {
        self.named.iter().map(|(_, t)| t.clone()).collect()
    }

    pub fn blocks(&self) -> impl Iterator<Item = &MambaBlock<T>> {
        self.encoders.iter().map(|(_, b)| b)
    }

    pub fn new_state(&self, batch: usize) -> GeneratorState<T> {
        GeneratorState {
            blocks: self.blocks().map(|b| b.new_state(batch)).collect(),
        }
    }

    /// Encoder outputs for a padded spectrogram `[B, 2·bins, F]`: the input
    /// projection followed by each level. With `with_mamba` false the
    /// Mamba blocks are skipped.
    pub fn encode(&self, spec: &Tensor<T>, with_mamba: bool) -> Result<Vec<Tensor<T>>> {
        self.encode_inner(spec, with_mamba, None)
    }

    fn encode_inner(
        &self,
        spec: &Tensor<T>,
        with_mamba: bool,
        mut state: Option<&mut GeneratorState<T>>,
    ) -> Result<Vec<Tensor<T>>> {
        let mut h = conv1d(spec, &self.in_w, Some(&self.in_b), 1, 0, 1)?;
        let mut skips = vec![h.clone()];
        for (l, (level, block)) in self.encoders.iter().enumerate() {
            let s = self.config.stride;
            h = glu(&conv1d(&h, &level.conv_w, Some(&level.conv_b), s, 0, 1)?)?;
            if with_mamba {
                h = match state.as_deref_mut() {
                    Some(st) => block.forward_streaming(&h, &mut st.blocks[l])?,
                    None => block.forward(&h)?,
                };
            }
            skips.push(h.clone());
        }
        Ok(skips)
    }

    /// Network body on a spectrogram whose frame count is a multiple of
    /// [`GeneratorConfig::frame_multiple`]. With `state`, continues a
    /// stream; chunk boundaries on that multiple give the same result as
    /// one whole pass.
    pub fn forward_spectrogram(&self, spec: &Tensor<T>, state: Option<&mut GeneratorState<T>>) -> Result<Tensor<T>> {
        let f = spec.shape().get(2).copied().unwrap_or(0);
        if f == 0 || f % self.config.frame_multiple() != 0 || spec.shape()[1] != self.config.spec_channels() {
            return Err(Error::arg(format!(
                "generator body needs [batch, {}, k·{}] input, got {:?}",
                self.config.spec_channels(),
                self.config.frame_multiple(),
                spec.shape()
            )));
        }
        let skips = self.encode_inner(spec, true, state)?;
        let mut z = skips[self.config.depth].clone();
        for l in (0..self.config.depth).rev() {
            let d = &self.decoders[l];
            let s = self.config.stride;
            z = glu(&conv_transpose1d(&z, &d.conv_w, Some(&d.conv_b), s, 0)?)?;
            z = add(&z, &skips[l])?;
        }
        conv1d(&z, &self.out_w, Some(&self.out_b), 1, 0, 1)
    }

    /// Padded frame count for `frames` analysis frames.
    pub fn padded_frames(&self, frames: usize) -> usize {
        frames.div_ceil(self.config.frame_multiple()) * self.config.frame_multiple()
    }

    /// Output spectrogram for an input spectrogram of `frames` frames.
    pub fn forward_frames(&self, spec: &Tensor<T>, state: Option<&mut GeneratorState<T>>) -> Result<Tensor<T>> {
        let frames = spec.shape()[2];
        let padded = pad(spec, 2, 0, self.padded_frames(frames) - frames)?;
        let out = slice(&self.forward_spectrogram(&padded, state)?, 2, 0, frames)?;
        if self.config.spectral_residual {
            add(&out, spec)
        } else {
            Ok(out)
        }
    }

    /// Waveforms `[B, N]` in, full-band estimates `[B, N]` out.
    pub fn forward(&self, wave: &Tensor<T>) -> Result<Tensor<T>> {
        let &[_, n] = wave.shape() else {
            return Err(Error::arg(format!("generator expects [batch, samples], got {:?}", wave.shape())));
        };
        if n < self.config.stft.window_size {
            return Err(Error::arg(format!(
                "input of {n} samples is shorter than one {}-sample STFT frame",
                self.config.stft.window_size
            )));
        }
        let spec = stft(wave, &self.plan)?;
        istft(&self.forward_frames(&spec, None)?, &self.plan, n)
    }

    /// Inference on every channel of a buffer, without recording gradients.
    pub fn enhance(&self, input: &AudioBuffer<T>) -> Result<AudioBuffer<T>> {
        let n = input.len();
        let channels = no_grad(|| -> Result<Vec<Vec<T>>> {
            input
                .channels()
                .iter()
                .map(|c| {
                    let x = Tensor::new(c.clone(), &[1, n])?;
                    Ok(self.forward(&x)?.to_vec())
                })
                .collect()
        })?;
        AudioBuffer::new(channels, input.sample_rate())
    }

    /// Reshapes `[B, N]` to `[B, 1, N]`; convenience for callers feeding
    /// the discriminator.
    pub fn as_channels(wave: &Tensor<T>) -> Result<Tensor<T>> {
        let s = wave.shape().to_vec();
        reshape(wave, &[s[0], 1, s[1]])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{mean, mul, sum};
    use crate::dsp::StftConfig;
    use rand::{Rng, SeedableRng};

    fn small() -> GeneratorConfig {
        GeneratorConfig {
            stft: StftConfig::new(64, 32).unwrap(),
            depth: 2,
            base_channels: 8,
            max_channels: 16,
            d_state: 4,
            ..Default::default()
        }
    }

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-0.5..0.5)).collect()
    }

    #[test]
    fn output_length_matches_input() {
        let g = Generator::<f32>::new(GeneratorConfig::default(), 1).unwrap();
        for n in [8192usize, 44100] {
            let x = Tensor::new(noise(n, n as u64).iter().map(|&v| v as f32).collect(), &[1, n]).unwrap();
            let y = no_grad(|| g.forward(&x)).unwrap();
            assert_eq!(y.shape(), &[1, n]);
            assert!(y.data().iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn too_short_is_argument_error() {
        let g = Generator::<f64>::new(small(), 1).unwrap();
        assert!(matches!(g.forward(&Tensor::zeros(&[1, 63])), Err(Error::Argument(_))));
    }

    #[test]
    fn deterministic() {
        let x = Tensor::new(noise(1000, 2), &[1, 1000]).unwrap();
        let a = Generator::<f64>::new(small(), 3).unwrap().forward(&x).unwrap().to_vec();
        let b = Generator::<f64>::new(small(), 3).unwrap().forward(&x).unwrap().to_vec();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_out_proj_makes_encoder_mamba_free() {
        let g = Generator::<f64>::new(small(), 4).unwrap();
        for b in g.blocks() {
            b.out_proj.set_data(vec![0.0; b.out_proj.numel()]).unwrap();
        }
        let x = Tensor::new(noise(2000, 5), &[1, 2000]).unwrap();
        let spec = stft(&x, g.plan()).unwrap();
        let spec = pad(&spec, 2, 0, g.padded_frames(spec.shape()[2]) - spec.shape()[2]).unwrap();
        let with = g.encode(&spec, true).unwrap();
        let without = g.encode(&spec, false).unwrap();
        for (a, b) in with.iter().zip(&without) {
            assert_eq!(a.to_vec(), b.to_vec());
        }
    }

    #[test]
    fn every_parameter_receives_a_gradient() {
        let g = Generator::<f64>::new(small(), 6).unwrap();
        let x = Tensor::new(noise(2 * 700, 7), &[2, 700]).unwrap();
        let w = Tensor::new(noise(2 * 700, 8), &[2, 700]).unwrap();
        sum(&mul(&g.forward(&x).unwrap(), &w).unwrap()).backward().unwrap();
        for (name, p) in g.named_params() {
            assert!(p.has_grad(), "{name} has no gradient");
        }
    }

    #[test]
    fn rebinding_named_params_is_exact() {
        let g = Generator::<f64>::new(small(), 9).unwrap();
        let named: Vec<_> = g.named_params().iter().map(|(n, t)| (n.clone(), t.detach())).collect();
        let h = Generator::from_named(small(), named).unwrap();
        let x = Tensor::new(noise(900, 10), &[1, 900]).unwrap();
        let a = mean(&g.forward(&x).unwrap()).unwrap().item().unwrap();
        let b = mean(&h.forward(&x).unwrap()).unwrap().item().unwrap();
        assert_eq!(a, b);
        let mut named: Vec<_> = g.named_params().to_vec();
        named.pop();
        assert!(matches!(Generator::from_named(small(), named), Err(Error::Contract(_))));
    }
}
