use rand::Rng;

use crate::autodiff::{
    add, conv1d, depthwise_causal_conv1d, depthwise_causal_conv1d_with_history, mul, reverse, rms_norm,
    selective_scan, selective_scan_with_state, silu, slice, ssm_params_from, Tensor,
};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::ssm::{SsmParams, SsmState};

use super::config::{mamba_shapes, GeneratorConfig, SSM_NAMES};
use super::{uniform_tensor, ParamMap};

/// Gated selective-SSM block with a residual connection, over
/// `[batch, d_model, time]`.
#[derive(Clone, Debug)]
pub struct MambaBlock<T: Scalar> {
    pub d_model: usize,
    pub d_inner: usize,
    pub bidirectional: bool,
    pub norm: Tensor<T>,
    pub in_proj: Tensor<T>,
    pub conv_w: Tensor<T>,
    pub conv_b: Tensor<T>,
    pub ssm: [Tensor<T>; 7],
    pub out_proj: Tensor<T>,
}

/// Recurrent state carried between streamed chunks.
#[derive(Clone, Debug, PartialEq)]
pub struct MambaState<T> {
    /// Last `K-1` inputs of the causal convolution, `[batch, d_inner, K-1]`.
    pub conv: Vec<T>,
    pub ssm: Vec<SsmState<T>>,
}

impl<T: Scalar> MambaState<T> {
    pub fn memory_bytes(&self) -> usize {
        self.conv.len() * T::BYTES + self.ssm.iter().map(SsmState::memory_bytes).sum::<usize>()
    }
}

impl<T: Scalar> MambaBlock<T> {
    /// Freshly initialised parameters, named relative to the block.
    pub(crate) fn init_params<R: Rng + ?Sized>(d_model: usize, cfg: &GeneratorConfig, rng: &mut R) -> Vec<(String, Tensor<T>)> {
        let di = cfg.expand * d_model;
        let ssm = SsmParams::<T>::init(di, cfg.d_state, cfg.d_rank_for(di), rng);
        mamba_shapes(d_model, cfg)
            .into_iter()
            .map(|(name, shape)| {
                let t = if name == "norm.weight" {
                    Tensor::param(vec![T::one(); d_model], &shape)
                } else if name == "conv.bias" {
                    Tensor::param(vec![T::zero(); di], &shape)
                } else if let Some(which) = SSM_NAMES.iter().position(|s| name == format!("ssm.{s}")) {
                    Tensor::param(ssm.arrays()[which].clone(), &shape)
                } else {
                    Ok(uniform_tensor(&shape, rng))
                };
                (name, t.expect("shapes match their data"))
            })
            .collect()
    }

    pub fn new<R: Rng + ?Sized>(d_model: usize, cfg: &GeneratorConfig, rng: &mut R) -> Result<Self> {
        let map = ParamMap::new(Self::init_params(d_model, cfg, rng));
        Self::from_map(&map, "", d_model, cfg)
    }

    pub(crate) fn from_map(map: &ParamMap<T>, prefix: &str, d_model: usize, cfg: &GeneratorConfig) -> Result<Self> {
        let shapes = mamba_shapes(d_model, cfg);
        let get = |i: usize| map.take(&format!("{prefix}{}", shapes[i].0), &shapes[i].1);
        Ok(Self {
            d_model,
            d_inner: cfg.expand * d_model,
            bidirectional: cfg.bidirectional,
            norm: get(0)?,
            in_proj: get(1)?,
            conv_w: get(2)?,
            conv_b: get(3)?,
            ssm: [get(4)?, get(5)?, get(6)?, get(7)?, get(8)?, get(9)?, get(10)?],
            out_proj: get(11)?,
        })
    }

    pub fn named_params(&self) -> Vec<(String, Tensor<T>)> {
        let mut v = vec![
            ("norm.weight".to_string(), self.norm.clone()),
            ("in_proj.weight".to_string(), self.in_proj.clone()),
            ("conv.weight".to_string(), self.conv_w.clone()),
            ("conv.bias".to_string(), self.conv_b.clone()),
        ];
        for (name, t) in SSM_NAMES.iter().zip(&self.ssm) {
            v.push((format!("ssm.{name}"), t.clone()));
        }
        v.push(("out_proj.weight".to_string(), self.out_proj.clone()));
        v
    }

    pub fn ssm_params(&self) -> Result<SsmParams<T>> {
        let s = &self.ssm;
        ssm_params_from(&[&s[0], &s[1], &s[2], &s[3], &s[4], &s[5], &s[6]])
    }

    pub fn new_state(&self, batch: usize) -> MambaState<T> {
        let k = self.conv_w.shape()[1];
        let ds = self.ssm[0].shape()[1];
        MambaState {
            conv: vec![T::zero(); batch * self.d_inner * (k - 1)],
            ssm: (0..batch).map(|_| SsmState::zeros(self.d_inner, ds)).collect(),
        }
    }

    /// `x + out_proj(scan(silu(conv(x_branch))) * silu(z_branch))` with
    /// both branches split from `in_proj(rms_norm(x))`.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.run(x, None)
    }

    /// [`forward`](Self::forward) continuing from `state`, which is
    /// advanced past `x`. Matches the whole-sequence forward bit for bit.
    pub fn forward_streaming(&self, x: &Tensor<T>, state: &mut MambaState<T>) -> Result<Tensor<T>> {
        if self.bidirectional {
            return Err(Error::arg("bidirectional Mamba blocks cannot stream"));
        }
        self.run(x, Some(state))
    }

    fn run(&self, x: &Tensor<T>, state: Option<&mut MambaState<T>>) -> Result<Tensor<T>> {
        match x.shape() {
            &[_, c, l] if c == self.d_model && l >= 1 => {}
            s => {
                return Err(Error::arg(format!(
                    "mamba block of width {} got input of shape {s:?}",
                    self.d_model
                )))
            }
        }
        let di = self.d_inner;
        let n = rms_norm(x, &self.norm)?;
        let xz = conv1d(&n, &self.in_proj, None, 1, 0, 1)?;
        let xb = slice(&xz, 1, 0, di)?;
        let z = slice(&xz, 1, di, 2 * di)?;
        let y = match state {
            None => {
                let u = silu(&depthwise_causal_conv1d(&xb, &self.conv_w, Some(&self.conv_b))?);
                let s = &self.ssm;
                let refs = [&s[0], &s[1], &s[2], &s[3], &s[4], &s[5], &s[6]];
                let y = selective_scan(&u, &refs)?;
                if self.bidirectional {
                    let back = selective_scan(&reverse(&u, 2)?, &refs)?;
                    add(&y, &reverse(&back, 2)?)?
                } else {
                    y
                }
            }
            Some(st) => {
                let u = silu(&depthwise_causal_conv1d_with_history(&xb, &self.conv_w, Some(&self.conv_b), &mut st.conv)?);
                selective_scan_with_state(&u, &self.ssm_params()?, &mut st.ssm)?
            }
        };
        let g = mul(&y, &silu(&z))?;
        let o = conv1d(&g, &self.out_proj, None, 1, 0, 1)?;
        add(x, &o)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::no_grad;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn block(seed: u64) -> MambaBlock<f64> {
        let cfg = GeneratorConfig { d_state: 4, ..Default::default() };
        MambaBlock::new(6, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn input(len: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new((0..6 * len).map(|_| rng.random_range(-1.0..1.0)).collect(), &[1, 6, len]).unwrap()
    }

    #[test]
    fn shape_is_preserved() {
        let b = block(1);
        for len in [1, 7, 256] {
            assert_eq!(b.forward(&input(len, len as u64)).unwrap().shape(), &[1, 6, len]);
        }
    }

    #[test]
    fn zero_out_proj_is_identity() {
        let b = block(2);
        b.out_proj.set_data(vec![0.0; b.out_proj.numel()]).unwrap();
        let x = input(33, 3);
        assert_eq!(b.forward(&x).unwrap().to_vec(), x.to_vec());
    }

    #[test]
    fn step_fold_matches_batch_bitwise() {
        let b = block(4);
        let x = input(300, 5);
        let whole = no_grad(|| b.forward(&x)).unwrap().to_vec();
        let mut st = b.new_state(1);
        let mut folded = vec![0.0; whole.len()];
        for t in 0..300 {
            let step = no_grad(|| b.forward_streaming(&slice(&x, 2, t, t + 1).unwrap(), &mut st)).unwrap();
            for (c, v) in step.to_vec().into_iter().enumerate() {
                folded[c * 300 + t] = v;
            }
        }
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&folded), bits(&whole));
    }

    #[test]
    fn recorded_forward_matches_untracked() {
        let b = block(6);
        let x = input(20, 7);
        assert_eq!(b.forward(&x).unwrap().to_vec(), no_grad(|| b.forward(&x)).unwrap().to_vec());
    }

    #[test]
    fn width_mismatch_is_argument_error() {
        let x = Tensor::<f64>::zeros(&[1, 5, 4]);
        assert!(matches!(block(8).forward(&x), Err(Error::Argument(_))));
    }

    #[test]
    fn bidirectional_refuses_to_stream() {
        let cfg = GeneratorConfig { d_state: 4, bidirectional: true, ..Default::default() };
        let b = MambaBlock::<f64>::new(6, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let mut st = b.new_state(1);
        assert!(b.forward(&input(5, 1)).is_ok());
        assert!(b.forward_streaming(&input(5, 1), &mut st).is_err());
    }
}
