use serde::{Deserialize, Serialize};

use crate::dsp::StftConfig;
use crate::error::{Error, Result};
use crate::ssm::{default_rank, DEFAULT_D_STATE};

/// Shape of the spectral U-Net generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub stft: StftConfig,
    /// Encoder/decoder levels.
    pub depth: usize,
    /// Width after the input projection; doubles per level up to `max_channels`.
    pub base_channels: usize,
    pub max_channels: usize,
    /// Time downsampling per level (kernel size equals stride).
    pub stride: usize,
    /// `d_inner = expand * d_model` inside each Mamba block.
    pub expand: usize,
    pub d_state: usize,
    /// Low-rank width of the step-size projection; 0 picks `d_inner / 16`.
    pub d_rank: usize,
    pub conv_kernel: usize,
    /// Adds a time-reversed scan to each Mamba block. Not streamable.
    pub bidirectional: bool,
    /// Adds the input spectrogram to the network output.
    pub spectral_residual: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            stft: StftConfig::default(),
            depth: 4,
            base_channels: 32,
            max_channels: 256,
            stride: 4,
            expand: 2,
            d_state: DEFAULT_D_STATE,
            d_rank: 0,
            conv_kernel: 4,
            bidirectional: false,
            spectral_residual: true,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        self.stft.validate()?;
        if self.depth == 0 {
            return Err(Error::arg("generator depth must be at least 1"));
        }
        if self.base_channels == 0 || self.max_channels < self.base_channels {
            return Err(Error::arg(format!(
                "channel schedule base {} / max {} is not non-decreasing",
                self.base_channels, self.max_channels
            )));
        }
        if self.stride < 2 || self.expand == 0 || self.d_state == 0 || self.conv_kernel == 0 {
            return Err(Error::arg("stride must be >= 2; expand, d_state and conv_kernel positive"));
        }
        Ok(())
    }

    /// Width of level `l`; level 0 is the input projection.
    pub fn width(&self, level: usize) -> usize {
        let doubled = self.base_channels.saturating_mul(1usize << level.min(40));
        doubled.min(self.max_channels)
    }

    pub fn spec_channels(&self) -> usize {
        2 * self.stft.bins()
    }

    pub fn d_rank_for(&self, d_inner: usize) -> usize {
        if self.d_rank == 0 {
            default_rank(d_inner)
        } else {
            self.d_rank
        }
    }

    /// Frames are processed in groups of this many; the total downsampling.
    pub fn frame_multiple(&self) -> usize {
        self.stride.pow(self.depth as u32)
    }

    /// Name and shape of every parameter, in checkpoint order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let sc = self.spec_channels();
        let c0 = self.width(0);
        out.push(("in_conv.weight".into(), vec![c0, sc, 1]));
        out.push(("in_conv.bias".into(), vec![c0]));
        for l in 0..self.depth {
            let (cin, cout) = (self.width(l), self.width(l + 1));
            out.push((format!("encoder.{l}.conv.weight"), vec![2 * cout, cin, self.stride]));
            out.push((format!("encoder.{l}.conv.bias"), vec![2 * cout]));
            for (name, shape) in mamba_shapes(cout, self) {
                out.push((format!("encoder.{l}.mamba.{name}"), shape));
            }
        }
        for l in (0..self.depth).rev() {
            let (cin, cout) = (self.width(l + 1), self.width(l));
            out.push((format!("decoder.{l}.conv.weight"), vec![cin, 2 * cout, self.stride]));
            out.push((format!("decoder.{l}.conv.bias"), vec![2 * cout]));
        }
        out.push(("out_conv.weight".into(), vec![sc, c0, 1]));
        out.push(("out_conv.bias".into(), vec![sc]));
        out
    }
}

pub(crate) const SSM_NAMES: [&str; 7] = ["a_log", "d_skip", "w_b", "w_c", "w_dt_down", "w_dt_up", "b_dt"];

pub(crate) fn mamba_shapes(d_model: usize, cfg: &GeneratorConfig) -> Vec<(String, Vec<usize>)> {
    let di = cfg.expand * d_model;
    let (ds, dr) = (cfg.d_state, cfg.d_rank_for(di));
    let mut v = vec![
        ("norm.weight".to_string(), vec![d_model]),
        ("in_proj.weight".to_string(), vec![2 * di, d_model, 1]),
        ("conv.weight".to_string(), vec![di, cfg.conv_kernel]),
        ("conv.bias".to_string(), vec![di]),
    ];
    let ssm: [Vec<usize>; 7] = [vec![di, ds], vec![di], vec![ds, di], vec![ds, di], vec![dr, di], vec![di, dr], vec![di]];
    for (name, shape) in SSM_NAMES.iter().zip(ssm) {
        v.push((format!("ssm.{name}"), shape));
    }
    v.push(("out_proj.weight".to_string(), vec![d_model, di, 1]));
    v
}

/// Multi-scale discriminator widths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscriminatorConfig {
    pub scales: usize,
    /// Width of the first layer; doubles per downsampling layer up to `max_channels`.
    pub base_channels: usize,
    pub max_channels: usize,
    /// Downsampling layers between the input and output convolutions.
    pub downsample_layers: usize,
    pub slope: f64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            scales: 3,
            base_channels: 8,
            max_channels: 64,
            downsample_layers: 4,
            slope: 0.2,
        }
    }
}

/// One convolution of a sub-discriminator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DiscLayer {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scales == 0 || self.base_channels < 4 || self.max_channels < self.base_channels {
            return Err(Error::arg("discriminator needs >= 1 scale and widths base >= 4, max >= base"));
        }
        if self.base_channels % 4 != 0 || self.max_channels % 4 != 0 {
            return Err(Error::arg("discriminator widths must be multiples of 4"));
        }
        Ok(())
    }

    /// Layers of one sub-discriminator; all but the last emit a feature map.
    pub fn layers(&self) -> Vec<DiscLayer> {
        let mut v = vec![DiscLayer { c_in: 1, c_out: self.base_channels, kernel: 15, stride: 1, padding: 7, groups: 1 }];
        let mut c = self.base_channels;
        for _ in 0..self.downsample_layers {
            let next = (c * 2).min(self.max_channels);
            v.push(DiscLayer { c_in: c, c_out: next, kernel: 41, stride: 4, padding: 20, groups: c / 4 });
            c = next;
        }
        v.push(DiscLayer { c_in: c, c_out: c, kernel: 5, stride: 1, padding: 2, groups: 1 });
        v.push(DiscLayer { c_in: c, c_out: 1, kernel: 3, stride: 1, padding: 1, groups: 1 });
        v
    }

    pub fn feature_maps_per_scale(&self) -> usize {
        self.layers().len() - 1
    }

    /// Receptive field in input samples of one logit of the coarsest scale.
    pub fn receptive_field(&self) -> usize {
        let (mut rf, mut jump) = (1usize, 1usize);
        for l in self.layers() {
            rf += (l.kernel - 1) * jump;
            jump *= l.stride;
        }
        // each average pool (kernel 4, stride 2) in front of a scale
        for _ in 1..self.scales {
            rf = 4 + (rf - 1) * 2;
        }
        rf
    }

    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for s in 0..self.scales {
            for (i, l) in self.layers().iter().enumerate() {
                out.push((format!("scale.{s}.layer.{i}.weight"), vec![l.c_out, l.c_in / l.groups, l.kernel]));
                out.push((format!("scale.{s}.layer.{i}.bias"), vec![l.c_out]));
            }
        }
        out
    }
}
