use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{add, clip_grad_norm, no_grad, scale, Adam, Tensor};
use crate::dsp::lsd;
use crate::error::{Error, Result};
use crate::model::{Checkpoint, Discriminator, Generator};
use crate::scalar::{lit, Scalar};

use super::{
    loss_adversarial_g, loss_discriminator, loss_feature_matching, loss_generator_total, loss_reconstruction,
    Dataset, LossReport, RunConfig, TrackPair,
};

pub const METRICS_HEADER: &str = "step,L_G,L_adv,L_rec,L_fmap,L_D,val_lsd";
pub const METRICS_FILE: &str = "metrics.csv";
pub const BEST_CHECKPOINT: &str = "best.amba";
pub const LAST_CHECKPOINT: &str = "last.amba";

/// Seed offsets so the two networks and the crop sampler draw from
/// unrelated streams.
const DISC_SEED: u64 = 0x5eed_d15c;
const DATA_STREAM: u64 = 1;

/// One logged optimiser step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    /// 1-based.
    pub step: usize,
    pub report: LossReport,
    pub val_lsd: Option<f64>,
}

impl StepRecord {
    pub fn csv_row(&self) -> String {
        let r = &self.report;
        let val = self.val_lsd.map(|v| v.to_string()).unwrap_or_default();
        format!("{},{},{},{},{},{},{}", self.step, r.l_g, r.l_adv, r.l_rec, r.l_fmap, r.l_d, val)
    }
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub best_checkpoint: PathBuf,
    pub last_checkpoint: PathBuf,
    pub metrics_csv: PathBuf,
    /// Lowest validation LSD and the step it was measured at.
    pub best: Option<(usize, f64)>,
    pub history: Vec<StepRecord>,
}

/// Number of optimiser steps a run takes on `n_train` tracks.
pub fn total_steps(config: &RunConfig, n_train: usize) -> usize {
    let t = &config.train;
    let per_epoch = n_train.div_ceil(t.batch_size).max(1);
    match (t.epochs, t.max_steps) {
        (0, m) => m,
        (e, 0) => e * per_epoch,
        (e, m) => (e * per_epoch).min(m),
    }
}

/// Mean LSD of the generator's estimates against the clean references.
pub fn evaluate_lsd<T: Scalar>(generator: &Generator<T>, tracks: &[TrackPair<T>]) -> Result<f64> {
    if tracks.is_empty() {
        return Err(Error::arg("no tracks to evaluate"));
    }
    let mut sum = 0.0;
    for t in tracks {
        sum += lsd(&t.clean, &generator.enhance(&t.degraded)?)?;
    }
    Ok(sum / tracks.len() as f64)
}

/// Generator weights plus the run configuration as TOML.
pub fn generator_checkpoint<T: Scalar>(generator: &Generator<T>, config: &RunConfig) -> Checkpoint {
    let mut c = Checkpoint {
        tensors: Vec::new(),
        config_text: config.to_toml(),
    };
    c.push_named("", generator.named_params());
    c
}

/// Rebuilds a generator from a checkpoint written by [`fit`].
pub fn load_generator<T: Scalar>(checkpoint: &Checkpoint) -> Result<(Generator<T>, RunConfig)> {
    let config = RunConfig::from_toml(&checkpoint.config_text)
        .map_err(|e| Error::contract(format!("checkpoint config: {e}")))?;
    checkpoint.check_shapes("", &config.generator.param_shapes())?;
    let g = Generator::from_named(config.generator.clone(), checkpoint.named_params("")?)?;
    Ok((g, config))
}

/// Seeded crops: each epoch visits the training tracks in a fresh random
/// order, one crop per visit.
struct Sampler {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
}

impl Sampler {
    fn new(seed: u64, n: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(DATA_STREAM);
        Self {
            rng,
            order: (0..n).collect(),
            cursor: n,
        }
    }

    /// `[B, N]` degraded inputs and clean targets; short tracks are zero-padded.
    fn batch<T: Scalar>(&mut self, tracks: &[TrackPair<T>], batch: usize, len: usize) -> Result<(Tensor<T>, Tensor<T>)> {
        let mut x = Vec::with_capacity(batch * len);
        let mut y = Vec::with_capacity(batch * len);
        for _ in 0..batch {
            if self.cursor == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            let t = &tracks[self.order[self.cursor]];
            self.cursor += 1;
            let channel = self.rng.random_range(0..t.clean.num_channels());
            let start = self.rng.random_range(0..=t.clean.len().saturating_sub(len));
            let end = (start + len).min(t.clean.len());
            for (dst, src) in [(&mut x, t.degraded.channel(channel)), (&mut y, t.clean.channel(channel))] {
                dst.extend_from_slice(&src[start..end]);
                dst.resize(dst.len() + len - (end - start), T::zero());
            }
        }
        Ok((Tensor::new(x, &[batch, len])?, Tensor::new(y, &[batch, len])?))
    }
}

fn value<T: Scalar>(t: &Tensor<T>) -> Result<f64> {
    Ok(t.item()?.to_f64_lossy())
}

fn finite(component: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::numeric(component, format!("non-finite value {v}")))
    }
}

fn clip(params: &[Tensor<impl Scalar>], max: f64, net: &str, step: usize) -> Result<()> {
    let norm = finite(&format!("{net} gradient norm"), clip_grad_norm(params, max))?;
    if norm > max {
        log::info!("step {step}: clipped {net} gradient norm {norm:.4} to {max}");
    }
    Ok(())
}

/// Adversarial training with one discriminator step per generator step.
/// Writes `metrics.csv`, `best.amba` (lowest validation LSD) and
/// `last.amba` into the configured checkpoint directory.
pub fn fit<T: Scalar>(config: &RunConfig, dataset: &Dataset<T>) -> Result<FitOutcome> {
    config.validate()?;
    if dataset.train.is_empty() {
        return Err(Error::arg("training split is empty"));
    }
    let t = &config.train;
    let dir = &t.checkpoint_dir;
    fs::create_dir_all(dir)?;
    let generator = Generator::<T>::new(config.generator.clone(), t.seed)?;
    let discriminator = Discriminator::<T>::new(config.discriminator.clone(), t.seed ^ DISC_SEED)?;
    let g_params = generator.params();
    let d_params = discriminator.params();
    let mut adam_g = Adam::new(t.adam(), &g_params)?;
    let mut adam_d = Adam::new(t.adam(), &d_params)?;
    let mut sampler = Sampler::new(t.seed, dataset.train.len());
    let lambda = lit::<T>(t.lambda_fmap);
    let scales = config.discriminator.scales;

    let metrics_csv = dir.join(METRICS_FILE);
    let mut csv = BufWriter::new(fs::File::create(&metrics_csv)?);
    writeln!(csv, "{METRICS_HEADER}")?;

    let steps = total_steps(config, dataset.train.len());
    let mut history = Vec::with_capacity(steps);
    let mut best: Option<(usize, f64)> = None;
    let best_path = dir.join(BEST_CHECKPOINT);
    let last_path = dir.join(LAST_CHECKPOINT);

    for step in 1..=steps {
        let (x, y) = sampler.batch(&dataset.train, t.batch_size, t.segment_length)?;
        let y_hat = generator.forward(&x)?;

        let l_d = if t.freeze_discriminator {
            no_grad(|| -> Result<f64> {
                value(&loss_discriminator(&discriminator.forward(&y)?, &discriminator.forward(&y_hat)?)?)
            })?
        } else {
            let fake = y_hat.detach();
            let loss = loss_discriminator(&discriminator.forward(&y)?, &discriminator.forward(&fake)?)?;
            let v = finite("L_D", value(&loss)?)?;
            loss.backward()?;
            clip(&d_params, t.grad_clip, "discriminator", step)?;
            adam_d.step(&d_params)?;
            v
        };
        let l_d = finite("L_D", l_d)?;

        // generator step sees the discriminator as a constant
        let frozen = Discriminator::from_named(
            config.discriminator.clone(),
            discriminator.named_params().iter().map(|(n, p)| (n.clone(), p.detach())).collect(),
        )?;
        let real = no_grad(|| frozen.forward(&y))?;
        let fake = frozen.forward(&y_hat)?;
        let adv = loss_adversarial_g(&fake, scales)?;
        let fmap = loss_feature_matching(&real, &fake)?;
        let rec = loss_reconstruction(&y_hat, &y, generator.plan())?;
        let mut report = loss_generator_total(value(&adv)?, value(&rec)?, value(&fmap)?, t.lambda_fmap)?;
        report.l_d = l_d;
        let total = add(&add(&adv, &rec)?, &scale(&fmap, lambda))?;
        finite("L_G", value(&total)?)?;
        total.backward()?;
        clip(&g_params, t.grad_clip, "generator", step)?;
        adam_g.step(&g_params)?;

        let validate = step == steps || (t.val_every > 0 && step % t.val_every == 0);
        let val_lsd = if validate && !dataset.val.is_empty() {
            let v = finite("validation LSD", evaluate_lsd(&generator, &dataset.val)?)?;
            log::info!("step {step}: validation LSD {v:.4}");
            if best.is_none_or(|(_, b)| v < b) {
                best = Some((step, v));
                generator_checkpoint(&generator, config).save(&best_path)?;
            }
            Some(v)
        } else {
            None
        };
        let record = StepRecord { step, report, val_lsd };
        writeln!(csv, "{}", record.csv_row())?;
        history.push(record);
    }
    csv.flush()?;
    let last = generator_checkpoint(&generator, config);
    last.save(&last_path)?;
    if best.is_none() {
        last.save(&best_path)?;
    }
    Ok(FitOutcome {
        best_checkpoint: best_path,
        last_checkpoint: last_path,
        metrics_csv,
        best,
        history,
    })
}

/// Reads the lowest `val_lsd` recorded in a metrics file.
pub fn best_val_lsd(metrics_csv: impl AsRef<Path>) -> Result<Option<(usize, f64)>> {
    let text = fs::read_to_string(metrics_csv)?;
    let mut best: Option<(usize, f64)> = None;
    for line in text.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 7 {
            return Err(Error::arg(format!("metrics row has {} columns: {line}", cols.len())));
        }
        if cols[6].is_empty() {
            continue;
        }
        let step = cols[0].parse().map_err(|_| Error::arg(format!("bad step in {line}")))?;
        let v: f64 = cols[6].parse().map_err(|_| Error::arg(format!("bad val_lsd in {line}")))?;
        if best.is_none_or(|(_, b)| v < b) {
            best = Some((step, v));
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GeneratorConfig;
    use crate::train::synth_dataset;

    fn small(dir: &Path) -> RunConfig {
        let mut c = RunConfig::default();
        c.generator = GeneratorConfig {
            depth: 2,
            base_channels: 8,
            max_channels: 16,
            ..GeneratorConfig::default()
        };
        c.train.batch_size = 1;
        c.train.segment_length = 20480;
        c.train.checkpoint_dir = dir.to_path_buf();
        c
    }

    fn one_track(seconds: f64) -> Dataset<f32> {
        let mut d = Dataset::split(synth_dataset(5, 2, seconds).unwrap());
        d.train.truncate(1);
        d
    }

    #[test]
    fn same_seed_same_metrics() {
        let data = Dataset::split(synth_dataset::<f32>(1, 3, 0.6).unwrap());
        let runs: Vec<String> = (0..2)
            .map(|_| {
                let dir = tempfile::tempdir().unwrap();
                let mut c = small(dir.path());
                c.train.max_steps = 3;
                c.train.epochs = 0;
                c.train.val_every = 2;
                let out = fit(&c, &data).unwrap();
                assert_eq!(out.history.len(), 3);
                for r in &out.history {
                    assert!(r.report.identity_error() <= 1e-9);
                    assert!(r.report.l_d >= 0.0 && r.report.l_adv >= 0.0);
                }
                assert!(out.history[1].val_lsd.is_some() && out.history[0].val_lsd.is_none());
                fs::read_to_string(out.metrics_csv).unwrap()
            })
            .collect();
        assert_eq!(runs[0], runs[1]);
        assert!(runs[0].starts_with(METRICS_HEADER));
        assert_eq!(runs[0].lines().count(), 4);
    }

    #[test]
    fn frozen_discriminator_overfit_decreases_reconstruction() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = small(dir.path());
        c.train.freeze_discriminator = true;
        c.train.lambda_fmap = 0.0;
        c.train.max_steps = 50;
        c.train.epochs = 0;
        c.train.val_every = 0;
        let data = one_track(20480.0 / 44100.0);
        let out = fit(&c, &data).unwrap();
        let rec: Vec<f64> = out.history.iter().map(|r| r.report.l_rec).collect();
        for w in rec.windows(2) {
            assert!(w[1] <= w[0], "L_rec rose: {rec:?}");
        }
    }

    #[test]
    fn best_checkpoint_reproduces_val_lsd() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = small(dir.path());
        c.train.max_steps = 4;
        c.train.epochs = 0;
        c.train.val_every = 2;
        let data = Dataset::split(synth_dataset::<f32>(2, 3, 0.6).unwrap());
        let out = fit(&c, &data).unwrap();
        let (step, v) = out.best.unwrap();
        assert_eq!(best_val_lsd(&out.metrics_csv).unwrap().unwrap().0, step);
        let (g, cfg) = load_generator::<f32>(&Checkpoint::load(&out.best_checkpoint).unwrap()).unwrap();
        assert_eq!(cfg, c);
        assert!((evaluate_lsd(&g, &data.val).unwrap() - v).abs() <= 1e-6);
        let bytes = fs::read(&out.last_checkpoint).unwrap();
        let again = dir.path().join("again.amba");
        Checkpoint::from_bytes(&bytes).unwrap().save(&again).unwrap();
        assert_eq!(fs::read(again).unwrap(), bytes);
    }

    #[test]
    fn rejects_empty_training_split() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = small(dir.path());
        c.train.max_steps = 1;
        assert!(fit(&c, &Dataset::<f32>::default()).is_err());
    }
}
