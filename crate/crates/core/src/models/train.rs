use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_pcg::Pcg32;
use serde::{Deserialize, Serialize};

use super::{Inputs, Network, Prediction};
use crate::autodiff::{AdamConfig, AdamState, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::eval::{self, DEPTH_VALID_MIN};
use crate::render::{DepthMap, NormalMap};

#[derive(Debug, Clone)]
pub enum Target {
    /// `[1, H, W]` metres.
    Depth(Arc<Tensor<f32>>),
    /// `[4, H, W]`: xyz plus a 0/1 validity channel.
    Normals(Arc<Tensor<f32>>),
    Class(usize),
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub rgb: Option<Arc<Tensor<f32>>>,
    pub spec: Option<Arc<Tensor<f32>>>,
    pub target: Target,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub schedule: LrSchedule,
}

/// Learning rate over the run. `Cosine` anneals from `adam.lr` to zero
/// across all steps, so the final weights do not depend on where the last
/// noisy update happened to land.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    #[default]
    Cosine,
}

impl LrSchedule {
    /// Learning-rate multiplier at `progress` in [0, 1].
    pub fn factor(self, progress: f64) -> f64 {
        match self {
            LrSchedule::Constant => 1.0,
            LrSchedule::Cosine => 0.5 * (1.0 + (std::f64::consts::PI * progress.clamp(0.0, 1.0)).cos()),
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 8,
            adam: AdamConfig::default(),
            schedule: LrSchedule::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.adam.lr > 0.0) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.adam.lr)));
        }
        Ok(())
    }
}

/// One log line. `metric` is accuracy for classifiers, RMS in metres for
/// depth, and mean angular error in degrees for normals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub metric: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<EpochLog>,
}

impl TrainLog {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn last(&self, split: &str) -> Option<&EpochLog> {
        self.rows.iter().rev().find(|r| r.split == split)
    }
}

fn stack(items: Vec<&Tensor<f32>>) -> Result<Tensor<f32>> {
    Tensor::stack(&items)
}

struct Batch {
    rgb: Option<Tensor<f32>>,
    spec: Option<Tensor<f32>>,
}

fn assemble(net: &Network<f32>, batch: &[&Sample]) -> Result<Batch> {
    let grab = |pick: fn(&Sample) -> Option<&Arc<Tensor<f32>>>, what: &str| -> Result<Tensor<f32>> {
        let items = batch
            .iter()
            .map(|s| pick(s).map(|t| &**t).ok_or_else(|| Error::Dataset(format!("sample lacks {what} input"))))
            .collect::<Result<Vec<_>>>()?;
        stack(items)
    };
    Ok(Batch {
        rgb: if net.kind.uses_rgb() { Some(grab(|s| s.rgb.as_ref(), "rgb")?) } else { None },
        spec: if net.kind.uses_audio() { Some(grab(|s| s.spec.as_ref(), "spectrogram")?) } else { None },
    })
}

/// Records the forward pass and the task loss. Returns `None` when the batch
/// has no supervised pixels.
fn batch_loss(
    net: &Network<f32>,
    tape: &mut Tape<'_, f32>,
    batch: &[&Sample],
    data: &Batch,
) -> Result<Option<(Var, Var)>> {
    let inputs = Inputs {
        rgb: data.rgb.clone().map(|t| tape.input(t)),
        spec: data.spec.clone().map(|t| tape.input(t)),
    };
    let out = net.forward(tape, inputs)?;
    let loss = match &batch[0].target {
        Target::Class(_) => {
            let labels = batch
                .iter()
                .map(|s| match s.target {
                    Target::Class(c) => Ok(c),
                    _ => Err(Error::Dataset("mixed targets in batch".into())),
                })
                .collect::<Result<Vec<_>>>()?;
            tape.softmax_cross_entropy(out, &labels)?
        }
        Target::Depth(_) => {
            let maps = batch
                .iter()
                .map(|s| match &s.target {
                    Target::Depth(d) => Ok(&**d),
                    _ => Err(Error::Dataset("mixed targets in batch".into())),
                })
                .collect::<Result<Vec<_>>>()?;
            let gt = stack(maps)?;
            let mask: Vec<bool> = gt.data().iter().map(|&g| g > DEPTH_VALID_MIN).collect();
            if !mask.contains(&true) {
                return Ok(None);
            }
            let inv = 1.0 / net.config.max_depth;
            let scaled = Tensor::new(gt.shape(), gt.data().iter().map(|&g| g * inv as f32).collect())?;
            let norm = tape.scale(out, inv)?;
            tape.l1_loss(norm, &scaled, Some(&mask))?
        }
        Target::Normals(_) => {
            let maps = batch
                .iter()
                .map(|s| match &s.target {
                    Target::Normals(n) => Ok(&**n),
                    _ => Err(Error::Dataset("mixed targets in batch".into())),
                })
                .collect::<Result<Vec<_>>>()?;
            let (xyz, mask) = split_normals(&maps)?;
            if !mask.contains(&true) {
                return Ok(None);
            }
            tape.cosine_loss(out, &xyz, &mask)?
        }
    };
    Ok(Some((out, loss)))
}

fn split_normals(maps: &[&Tensor<f32>]) -> Result<(Tensor<f32>, Vec<bool>)> {
    let [_, h, w] = match maps[0].shape() {
        &[4, h, w] => [4, h, w],
        s => return Err(Error::shape("normals target", format!("expected [4,H,W], got {s:?}"))),
    };
    let hw = h * w;
    let mut xyz = Vec::with_capacity(maps.len() * 3 * hw);
    let mut mask = Vec::with_capacity(maps.len() * hw);
    for m in maps {
        xyz.extend_from_slice(&m.data()[..3 * hw]);
        mask.extend(m.data()[3 * hw..].iter().map(|&v| v > 0.5));
    }
    Ok((Tensor::new(&[maps.len(), 3, h, w], xyz)?, mask))
}

fn normal_map(t: &Tensor<f32>) -> NormalMap {
    let (h, w) = (t.shape()[1], t.shape()[2]);
    let hw = h * w;
    NormalMap {
        width: w,
        height: h,
        data: t.data()[..3 * hw].to_vec(),
        valid: t.data()[3 * hw..].iter().map(|&v| v > 0.5).collect(),
    }
}

/// Mean loss and task metric of `net` over `samples`.
pub fn evaluate(net: &Network<f32>, samples: &[Sample], batch_size: usize) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::Dataset("evaluation set is empty".into()));
    }
    let mut loss_sum = 0.0;
    let mut counted = 0usize;
    let mut depth = (Vec::new(), Vec::new());
    let mut normals = (Vec::new(), Vec::new());
    let mut logits = (Vec::new(), Vec::new());
    let refs: Vec<&Sample> = samples.iter().collect();
    for chunk in refs.chunks(batch_size.max(1)) {
        let data = assemble(net, chunk)?;
        let mut tape = Tape::new(&net.params);
        let Some((out, loss)) = batch_loss(net, &mut tape, chunk, &data)? else {
            continue;
        };
        loss_sum += tape.value(loss).item() as f64 * chunk.len() as f64;
        counted += chunk.len();
        let pred = tape.value(out);
        let per = pred.numel() / chunk.len();
        for (i, s) in chunk.iter().enumerate() {
            let p = &pred.data()[i * per..(i + 1) * per];
            match &s.target {
                Target::Class(c) => {
                    logits.0.push(p.to_vec());
                    logits.1.push(*c);
                }
                Target::Depth(d) => {
                    let (h, w) = (d.shape()[1], d.shape()[2]);
                    depth.0.push(DepthMap { width: w, height: h, data: p.to_vec() });
                    depth.1.push(DepthMap { width: w, height: h, data: d.data().to_vec() });
                }
                Target::Normals(n) => {
                    let g = normal_map(n);
                    normals.0.push(NormalMap {
                        width: g.width,
                        height: g.height,
                        data: p.to_vec(),
                        valid: vec![true; g.width * g.height],
                    });
                    normals.1.push(g);
                }
            }
        }
    }
    if counted == 0 {
        return Err(Error::Metric("no supervised pixels in evaluation set".into()));
    }
    let metric = match &samples[0].target {
        Target::Class(_) => eval::classification_accuracy(&logits.0, &logits.1)?,
        Target::Depth(_) => eval::depth_metrics(&depth.0, &depth.1)?.rms,
        Target::Normals(_) => eval::normal_metrics(&normals.0, &normals.1)?.mean_deg,
    };
    Ok((loss_sum / counted as f64, metric))
}

/// Predictions for `samples` in order.
pub fn predict_samples(net: &Network<f32>, samples: &[Sample], batch_size: usize) -> Result<Vec<Prediction>> {
    let refs: Vec<&Sample> = samples.iter().collect();
    refs.chunks(batch_size.max(1))
        .map(|chunk| {
            let data = assemble(net, chunk)?;
            net.predict(data.rgb.as_ref(), data.spec.as_ref())
        })
        .collect()
}

/// Mini-batch Adam. `epoch_samples(e, rng)` supplies the training samples of
/// epoch `e` (pretext tasks redraw offsets each epoch); they are shuffled
/// with the same seeded stream. Epoch 0 rows hold the loss of the very first
/// batch before any update and the untrained validation figures.
pub fn train(
    net: &mut Network<f32>,
    cfg: &TrainConfig,
    seed: u64,
    mut epoch_samples: impl FnMut(usize, &mut Pcg32) -> Result<Vec<Sample>>,
    val: &[Sample],
) -> Result<TrainLog> {
    cfg.validate()?;
    let mut rng = Pcg32::seed_from_u64(seed);
    let mut adam = AdamState::new(&net.params, cfg.adam);
    let mut log = TrainLog::default();
    if !val.is_empty() {
        let (loss, metric) = evaluate(net, val, cfg.batch_size)?;
        log.rows.push(EpochLog { epoch: 0, split: "val".into(), loss, metric: Some(metric) });
    }
    for epoch in 1..=cfg.epochs {
        let mut samples = epoch_samples(epoch, &mut rng)?;
        if samples.is_empty() {
            return Err(Error::Dataset("training set is empty".into()));
        }
        samples.shuffle(&mut rng);
        let refs: Vec<&Sample> = samples.iter().collect();
        let (mut sum, mut count) = (0.0, 0usize);
        let batches = refs.len().div_ceil(cfg.batch_size);
        for (b, chunk) in refs.chunks(cfg.batch_size).enumerate() {
            let progress = ((epoch - 1) * batches + b) as f64 / (cfg.epochs * batches) as f64;
            adam.config.lr = cfg.adam.lr * cfg.schedule.factor(progress);
            let data = assemble(net, chunk)?;
            let grads = {
                let mut tape = Tape::new(&net.params);
                let Some((_, loss)) = batch_loss(net, &mut tape, chunk, &data)? else {
                    continue;
                };
                let l = tape.value(loss).item() as f64;
                if !l.is_finite() {
                    return Err(Error::Graph(format!("non-finite loss at epoch {epoch}")));
                }
                if epoch == 1 && count == 0 {
                    log.rows.push(EpochLog { epoch: 0, split: "train".into(), loss: l, metric: None });
                }
                sum += l * chunk.len() as f64;
                count += chunk.len();
                tape.backward(loss)?.param_grads()
            };
            adam.apply(&mut net.params, &grads);
        }
        let train_loss = if count > 0 { sum / count as f64 } else { f64::NAN };
        log.rows.push(EpochLog { epoch, split: "train".into(), loss: train_loss, metric: None });
        if !val.is_empty() {
            let (loss, metric) = evaluate(net, val, cfg.batch_size)?;
            log.rows.push(EpochLog { epoch, split: "val".into(), loss, metric: Some(metric) });
        }
    }
    Ok(log)
}
