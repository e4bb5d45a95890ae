//! Experiment orchestration: trains, caches and evaluates every network an
//! experiment table needs.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_pcg::Pcg32;

use super::blob::{read_checkpoint, write_checkpoint};
use super::config::ExperimentConfig;
use super::dataset::{gen_dataset, Dataset, GroupData, SplitName};
use crate::error::{Error, Result};
use crate::eval::{
    average_baseline, classification_accuracy, depth_metrics, normal_metrics, write_reports_csv,
    write_reports_json, MetricReport, Metrics,
};
use crate::models::{
    build_model, make_pretext_sample, match_label, predict_samples, train, ModelConfig, ModelKind, Network,
    OrientationOffset, PoseGroup, Prediction, Sample, Target, TrainLog,
};
use crate::autodiff::Tensor;
use crate::render::{DepthMap, NormalMap};
use crate::scene::Orientation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExperimentName {
    CaseStudy,
    Pretext,
    TransferDepth,
    TransferNormals,
    Ablations,
}

impl ExperimentName {
    /// Dependency order: pretext checkpoints come first.
    pub const ALL: [ExperimentName; 5] = [
        ExperimentName::Pretext,
        ExperimentName::CaseStudy,
        ExperimentName::TransferDepth,
        ExperimentName::TransferNormals,
        ExperimentName::Ablations,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentName::CaseStudy => "case_study",
            ExperimentName::Pretext => "pretext",
            ExperimentName::TransferDepth => "transfer_depth",
            ExperimentName::TransferNormals => "transfer_normals",
            ExperimentName::Ablations => "ablations",
        }
    }
}

impl fmt::Display for ExperimentName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|e| e.name() == s).ok_or_else(|| {
            Error::Config(format!(
                "unknown experiment '{s}' (case_study, pretext, transfer_depth, transfer_normals, ablations)"
            ))
        })
    }
}

/// How a network's visual encoder starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Init {
    Scratch,
    /// From the visual encoder of a pretext network of this kind.
    Pretrained(ModelKind),
}

impl Init {
    pub fn label(self) -> String {
        match self {
            Init::Scratch => "scratch".into(),
            Init::Pretrained(k) => format!("from_{k}"),
        }
    }
}

/// Table label of a pretext kind.
pub fn condition_name(init: Init) -> &'static str {
    match init {
        Init::Scratch => "Scratch",
        Init::Pretrained(ModelKind::PretextSimple) => "SimpleVisualEchoes",
        Init::Pretrained(ModelKind::BinaryMatch) => "BinaryMatching",
        Init::Pretrained(_) => "VisualEchoes",
    }
}

fn depth_condition(kind: ModelKind) -> &'static str {
    match kind {
        ModelKind::Echo2Depth => "Echo2Depth",
        ModelKind::RgbEcho2Depth => "RGB+Echo2Depth",
        _ => "RGB2Depth",
    }
}

#[derive(Debug)]
pub struct Trained {
    pub net: Network<f32>,
    pub log: TrainLog,
    pub checkpoint: PathBuf,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub name: ExperimentName,
    /// The experiment's table.
    pub rows: Vec<MetricReport>,
    /// Per-seed rows when the table itself only holds means.
    pub seed_rows: Vec<MetricReport>,
}

impl ExperimentReport {
    pub fn row(&self, condition: &str) -> Option<&MetricReport> {
        self.rows.iter().find(|r| r.condition == condition && r.seed.is_none())
    }
}

const VAL_DRAWS: u64 = 0x7661_6c00;
const TEST_DRAWS: u64 = 0x7465_7374;

/// Shared state of a sequence of experiments over one dataset. Trained
/// networks are cached by (kind, init, seed) and also saved as checkpoints.
pub struct Lab<'d> {
    pub cfg: ExperimentConfig,
    pub data: &'d Dataset,
    pub out: PathBuf,
    pub verbose: bool,
    model_cfg: ModelConfig,
    train_groups: Vec<GroupData>,
    val_groups: Vec<GroupData>,
    test_groups: Option<Vec<GroupData>>,
    cache: HashMap<(ModelKind, Init, u64), Arc<Trained>>,
}

impl<'d> Lab<'d> {
    /// Loads the train and val scenes. Test scenes are only read by evaluation.
    pub fn new(cfg: &ExperimentConfig, data: &'d Dataset, out: &Path) -> Result<Lab<'d>> {
        cfg.validate()?;
        if data.split.test.is_empty() {
            return Err(Error::Dataset("experiments need at least one test scene".into()));
        }
        let mut model_cfg = cfg.model_config();
        let dc = data.config.model_config();
        model_cfg.image_height = dc.image_height;
        model_cfg.image_width = dc.image_width;
        model_cfg.spec_bins = dc.spec_bins;
        model_cfg.spec_frames = dc.spec_frames;
        model_cfg.max_depth = dc.max_depth;
        model_cfg.validate()?;
        data.set_phase("train");
        let train_groups = data.load_groups(SplitName::Train)?;
        let val_groups = data.load_groups(SplitName::Val)?;
        if train_groups.is_empty() {
            return Err(Error::Dataset("train split has no navigable positions".into()));
        }
        Ok(Lab {
            cfg: cfg.clone(),
            data,
            out: out.to_path_buf(),
            verbose: false,
            model_cfg,
            train_groups,
            val_groups,
            test_groups: None,
            cache: HashMap::new(),
        })
    }

    pub fn model_config(&self) -> &ModelConfig {
        &self.model_cfg
    }

    fn note(&self, msg: impl AsRef<str>) {
        if self.verbose {
            eprintln!("[lab] {}", msg.as_ref());
        }
    }

    fn test_groups(&mut self) -> Result<&[GroupData]> {
        if self.test_groups.is_none() {
            self.data.set_phase("eval");
            let g = self.data.load_groups(SplitName::Test)?;
            self.data.set_phase("train");
            if g.is_empty() {
                return Err(Error::Dataset("test split has no navigable positions".into()));
            }
            self.test_groups = Some(g);
        }
        Ok(self.test_groups.as_deref().expect("loaded"))
    }

    pub fn checkpoint_path(&self, kind: ModelKind, init: Init, seed: u64) -> PathBuf {
        self.out
            .join("checkpoints")
            .join(format!("{kind}_{}_seed{seed}.veck", init.label()))
    }

    fn epochs(&self, kind: ModelKind) -> usize {
        if kind.classes().is_some() {
            self.cfg.train.epochs_pretext
        } else {
            self.cfg.train.epochs_downstream
        }
    }

    /// A trained network, from the cache or by training it now. Pretrained
    /// inits need the pretext checkpoint to exist already.
    pub fn model(&mut self, kind: ModelKind, init: Init, seed: u64) -> Result<Arc<Trained>> {
        if let Some(t) = self.cache.get(&(kind, init, seed)) {
            return Ok(t.clone());
        }
        let encoder = match init {
            Init::Scratch => None,
            Init::Pretrained(pk) => Some(self.pretext(pk, seed, false)?.net.params.to_named()),
        };
        self.note(format!("training {kind} ({}) seed {seed}", init.label()));
        let t = Arc::new(self.train_model(kind, seed, encoder.as_deref(), &self.checkpoint_path(kind, init, seed))?);
        self.cache.insert((kind, init, seed), t.clone());
        Ok(t)
    }

    /// Trains one network on the train split, optionally starting its visual
    /// encoder from `encoder`, and writes the checkpoint and its log.
    pub fn train_model(
        &self,
        kind: ModelKind,
        seed: u64,
        encoder: Option<&[(String, Tensor<f32>)]>,
        checkpoint: &Path,
    ) -> Result<Trained> {
        let mut net = build_model::<f32>(kind, &self.model_cfg, seed)?;
        if let Some(entries) = encoder {
            net.load_visual_encoder(entries)?;
        }
        let val = build_samples(kind, &self.val_groups, &mut Pcg32::seed_from_u64(seed ^ VAL_DRAWS))?;
        let tc = self.cfg.train_config(self.epochs(kind));
        let groups = &self.train_groups;
        let log = train(&mut net, &tc, seed, |_, rng| build_samples(kind, groups, rng), &val)?;
        write_checkpoint(checkpoint, &net.params.to_named())?;
        log.write_csv(&checkpoint.with_extension("log.csv"))?;
        if let Some(r) = log.last("val") {
            self.note(format!("  final val loss {:.4} metric {:.4}", r.loss, r.metric.unwrap_or(f64::NAN)));
        }
        Ok(Trained {
            net,
            log,
            checkpoint: checkpoint.to_path_buf(),
        })
    }

    /// A network of `kind` with every parameter read from `path`.
    pub fn load_model(&self, kind: ModelKind, path: &Path) -> Result<Network<f32>> {
        let mut net = build_model::<f32>(kind, &self.model_cfg, 0)?;
        net.params.load_prefix(&read_checkpoint(path)?, "")?;
        Ok(net)
    }

    /// A pretext network: cached, else loaded from its checkpoint, else
    /// trained when `train_if_missing`.
    pub fn pretext(&mut self, kind: ModelKind, seed: u64, train_if_missing: bool) -> Result<Arc<Trained>> {
        if kind.classes().is_none() {
            return Err(Error::Config(format!("{kind} is not a pretext network")));
        }
        if let Some(t) = self.cache.get(&(kind, Init::Scratch, seed)) {
            return Ok(t.clone());
        }
        let path = self.checkpoint_path(kind, Init::Scratch, seed);
        if path.exists() {
            let net = self.load_model(kind, &path)?;
            let t = Arc::new(Trained {
                net,
                log: TrainLog::default(),
                checkpoint: path,
            });
            self.cache.insert((kind, Init::Scratch, seed), t.clone());
            return Ok(t);
        }
        if !train_if_missing {
            return Err(Error::MissingArtifact(format!(
                "{kind} checkpoint {} (run the pretext experiment first)",
                path.display()
            )));
        }
        self.model(kind, Init::Scratch, seed)
    }

    /// Test-split metrics of a trained network.
    pub fn evaluate(&mut self, net: &Network<f32>) -> Result<(Metrics, usize)> {
        self.test_groups()?;
        let groups = self.test_groups.as_deref().expect("loaded");
        self.metrics_on(net, groups)
    }

    /// Metrics on any split. Val and train are already in memory.
    pub fn evaluate_split(&mut self, net: &Network<f32>, split: SplitName) -> Result<(Metrics, usize)> {
        match split {
            SplitName::Test => self.evaluate(net),
            SplitName::Val => self.metrics_on(net, &self.val_groups),
            SplitName::Train => self.metrics_on(net, &self.train_groups),
        }
    }

    fn metrics_on(&self, net: &Network<f32>, groups: &[GroupData]) -> Result<(Metrics, usize)> {
        if groups.is_empty() {
            return Err(Error::Dataset("split has no navigable positions".into()));
        }
        let kind = net.kind;
        let batch = self.cfg.train.batch_size;
        let seed = self.cfg.seed ^ TEST_DRAWS;
        let samples = build_samples(kind, groups, &mut Pcg32::seed_from_u64(seed))?;
        let preds = predict_samples(net, &samples, batch)?;
        let n = samples.len();
        let metrics = match kind {
            k if k.classes().is_some() => {
                let logits: Vec<Vec<f32>> = preds
                    .into_iter()
                    .flat_map(|p| match p {
                        Prediction::Logits(l) => l,
                        _ => unreachable!("classifier"),
                    })
                    .collect();
                let labels: Vec<usize> = samples
                    .iter()
                    .map(|s| match s.target {
                        Target::Class(c) => c,
                        _ => unreachable!("class targets"),
                    })
                    .collect();
                Metrics::Accuracy {
                    accuracy: classification_accuracy(&logits, &labels)?,
                }
            }
            ModelKind::Normals => {
                let pred: Vec<NormalMap> = preds
                    .into_iter()
                    .flat_map(|p| match p {
                        Prediction::Normals(n) => n,
                        _ => unreachable!("normals"),
                    })
                    .collect();
                let gt: Vec<NormalMap> = groups.iter().flat_map(|g| g.views.iter().map(|v| normal_map(&v.normals))).collect();
                Metrics::Normals(normal_metrics(&pred, &gt)?)
            }
            _ => {
                let pred: Vec<DepthMap> = preds
                    .into_iter()
                    .flat_map(|p| match p {
                        Prediction::Depth(d) => d,
                        _ => unreachable!("depth"),
                    })
                    .collect();
                Metrics::Depth(depth_metrics(&pred, &test_depths(groups))?)
            }
        };
        Ok((metrics, n))
    }

    fn report(&mut self, task: &str, condition: &str, seed: u64, net: &Network<f32>) -> Result<MetricReport> {
        let (metrics, samples) = self.evaluate(net)?;
        self.note(format!("  {task} / {condition} / seed {seed}: {:.4}", metrics.headline()));
        Ok(MetricReport {
            task: task.into(),
            split: "test".into(),
            condition: condition.into(),
            seed: Some(seed),
            metrics,
            samples,
        })
    }

    /// Runs one experiment and writes `<out>/<name>.csv` and `.json`.
    pub fn run(&mut self, name: ExperimentName) -> Result<ExperimentReport> {
        let seeds = self.cfg.seeds.clone();
        let task = name.name();
        let mut per_seed: Vec<MetricReport> = Vec::new();
        let mut order: Vec<String> = Vec::new();
        let push = |r: MetricReport, order: &mut Vec<String>, rows: &mut Vec<MetricReport>| {
            if !order.contains(&r.condition) {
                order.push(r.condition.clone());
            }
            rows.push(r);
        };
        let mut leading = Vec::new();
        match name {
            ExperimentName::CaseStudy => {
                let train_depths: Vec<DepthMap> = self
                    .train_groups
                    .iter()
                    .flat_map(|g| g.views.iter().map(|v| depth_map(&v.depth)))
                    .collect();
                let base = average_baseline(&train_depths)?;
                let groups = self.test_groups()?;
                let gt = test_depths(groups);
                let pred = vec![base; gt.len()];
                leading.push(MetricReport {
                    task: task.into(),
                    split: "test".into(),
                    condition: "Average".into(),
                    seed: None,
                    metrics: Metrics::Depth(depth_metrics(&pred, &gt)?),
                    samples: gt.len(),
                });
                for &seed in &seeds {
                    for kind in [ModelKind::Echo2Depth, ModelKind::Rgb2Depth, ModelKind::RgbEcho2Depth] {
                        let t = self.model(kind, Init::Scratch, seed)?;
                        let r = self.report(task, depth_condition(kind), seed, &t.net)?;
                        push(r, &mut order, &mut per_seed);
                    }
                }
            }
            ExperimentName::Pretext => {
                for &seed in &seeds {
                    let t = self.pretext(ModelKind::Pretext, seed, true)?;
                    let r = self.report(task, "VisualEchoes", seed, &t.net)?;
                    push(r, &mut order, &mut per_seed);
                }
            }
            ExperimentName::TransferDepth | ExperimentName::TransferNormals => {
                let kind = if name == ExperimentName::TransferDepth {
                    ModelKind::Rgb2Depth
                } else {
                    ModelKind::Normals
                };
                for &seed in &seeds {
                    for init in [Init::Scratch, Init::Pretrained(ModelKind::Pretext)] {
                        let t = self.model(kind, init, seed)?;
                        let r = self.report(task, condition_name(init), seed, &t.net)?;
                        push(r, &mut order, &mut per_seed);
                    }
                }
            }
            ExperimentName::Ablations => {
                for &seed in &seeds {
                    self.pretext(ModelKind::Pretext, seed, false)?;
                    self.pretext(ModelKind::PretextSimple, seed, true)?;
                    self.pretext(ModelKind::BinaryMatch, seed, true)?;
                }
                for &seed in &seeds {
                    for init in [
                        Init::Scratch,
                        Init::Pretrained(ModelKind::PretextSimple),
                        Init::Pretrained(ModelKind::BinaryMatch),
                        Init::Pretrained(ModelKind::Pretext),
                    ] {
                        let t = self.model(ModelKind::Rgb2Depth, init, seed)?;
                        let r = self.report(task, condition_name(init), seed, &t.net)?;
                        push(r, &mut order, &mut per_seed);
                    }
                }
            }
        }
        let mut means = Vec::new();
        for c in &order {
            let group: Vec<&MetricReport> = per_seed.iter().filter(|r| &r.condition == c).collect();
            means.push(MetricReport::mean(&group)?);
        }
        let report = if name == ExperimentName::CaseStudy {
            ExperimentReport {
                name,
                rows: leading.into_iter().chain(means).collect(),
                seed_rows: per_seed,
            }
        } else {
            ExperimentReport {
                name,
                rows: per_seed.into_iter().chain(means).collect(),
                seed_rows: Vec::new(),
            }
        };
        write_reports_csv(&self.out.join(format!("{task}.csv")), &report.rows)?;
        write_reports_json(&self.out.join(format!("{task}.json")), &report.rows)?;
        if !report.seed_rows.is_empty() {
            write_reports_csv(&self.out.join(format!("{task}_seeds.csv")), &report.seed_rows)?;
        }
        Ok(report)
    }
}

fn depth_map(t: &Tensor<f32>) -> DepthMap {
    DepthMap {
        width: t.shape()[2],
        height: t.shape()[1],
        data: t.data().to_vec(),
    }
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

fn test_depths(groups: &[GroupData]) -> Vec<DepthMap> {
    groups.iter().flat_map(|g| g.views.iter().map(|v| depth_map(&v.depth))).collect()
}

/// Samples for one pass over `groups`, one per view. Classification tasks
/// draw their pairing from `rng`; the others are fixed.
pub fn build_samples(kind: ModelKind, groups: &[GroupData], rng: &mut Pcg32) -> Result<Vec<Sample>> {
    let mut out = Vec::with_capacity(groups.len() * 4);
    let pose_groups: Vec<PoseGroup> = if kind.classes().is_some() {
        groups.iter().map(GroupData::pose_group).collect()
    } else {
        Vec::new()
    };
    for (gi, g) in groups.iter().enumerate() {
        for o in Orientation::ALL {
            let v = &g.views[o.index()];
            let (spec, target) = match kind {
                ModelKind::Pretext => {
                    let s = make_pretext_sample(&pose_groups[gi], o, None, rng)?;
                    (s.spec, Target::Class(s.offset.index()))
                }
                ModelKind::PretextSimple => {
                    let offset = if rng.random_bool(0.5) {
                        OrientationOffset::Same
                    } else {
                        OrientationOffset::Opposite
                    };
                    let s = make_pretext_sample(&pose_groups[gi], o, Some(offset), rng)?;
                    (s.spec, Target::Class(usize::from(offset == OrientationOffset::Opposite)))
                }
                ModelKind::BinaryMatch => {
                    if rng.random_bool(0.5) {
                        (v.spec.clone(), Target::Class(match_label(true)))
                    } else {
                        let others: Vec<usize> =
                            (0..groups.len()).filter(|&j| groups[j].scene != g.scene).collect();
                        if others.is_empty() {
                            return Err(Error::Dataset("binary matching needs at least two scenes".into()));
                        }
                        let j = others[rng.random_range(0..others.len())];
                        let eo = Orientation::from_index(rng.random_range(0..4));
                        (pose_groups[j].spec_at(eo)?, Target::Class(match_label(false)))
                    }
                }
                ModelKind::Normals => (v.spec.clone(), Target::Normals(v.normals.clone())),
                _ => (v.spec.clone(), Target::Depth(v.depth.clone())),
            };
            out.push(Sample {
                rgb: Some(v.rgb.clone()),
                spec: Some(spec),
                target,
            });
        }
    }
    Ok(out)
}

/// Opens the dataset named by `cfg`, generating it first when absent.
pub fn open_or_generate(cfg: &ExperimentConfig, verbose: bool) -> Result<Dataset> {
    let dir = &cfg.dataset_dir;
    if !dir.join(super::dataset::MANIFEST_FILE).exists() {
        if verbose {
            eprintln!("[lab] generating dataset in {}", dir.display());
        }
        gen_dataset(cfg, dir)?;
    }
    Dataset::open(dir)
}

/// One experiment end to end, writing reports under `cfg.output_dir`.
pub fn run_experiment(name: ExperimentName, cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let data = open_or_generate(cfg, false)?;
    let mut lab = Lab::new(cfg, &data, &cfg.output_dir)?;
    lab.run(name)
}
