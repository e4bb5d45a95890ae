//! Dataset generation, the on-disk layout, and audited loading.
//!
//! ```text
//! <root>/config.toml
//! <root>/manifest.jsonl           one position per line
//! <root>/split.json
//! <root>/norm_stats.json          spectrogram mean/std from the train scenes
//! <root>/scenes/scene_000.json
//! <root>/blobs/scene_000/p0000_090_rgb.vets   (rgb, depth, normals, echo, spec)
//! ```

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_pcg::Pcg32;
use serde::{Deserialize, Serialize};

use super::blob::{read_blob, write_blob};
use super::config::{ExperimentConfig, SplitSpec};
use crate::acoustics::simulate_echo;
use crate::autodiff::Tensor;
use crate::dsp::stft_log_magnitude;
use crate::error::{Error, Result};
use crate::models::PoseGroup;
use crate::render::{depth_to_normals, render_rgbd};
use crate::scene::{generate_scene, navigable_poses, Orientation, Scene};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const SPLIT_FILE: &str = "split.json";
pub const NORM_FILE: &str = "norm_stats.json";
pub const CONFIG_FILE: &str = "config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewRecord {
    pub orientation: Orientation,
    pub rgb: String,
    pub depth: String,
    pub normals: String,
    pub echo: String,
    pub spec: String,
}

/// One navigable position with its four views.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PositionRecord {
    pub scene: usize,
    pub position: usize,
    pub location: [f64; 3],
    pub views: Vec<ViewRecord>,
}

impl PositionRecord {
    pub fn validate(&self, line: usize) -> Result<()> {
        let got: BTreeSet<_> = self.views.iter().map(|v| v.orientation).collect();
        if self.views.len() != 4 || got.len() != 4 {
            return Err(Error::Dataset(format!(
                "manifest line {line}: scene {} position {} needs all 4 orientations",
                self.scene, self.position
            )));
        }
        Ok(())
    }

    pub fn view(&self, o: Orientation) -> Option<&ViewRecord> {
        self.views.iter().find(|v| v.orientation == o)
    }
}

pub fn write_manifest(path: &Path, records: &[PositionRecord]) -> Result<()> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
        out.push(b'\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<PositionRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: PositionRecord = serde_json::from_str(line)
            .map_err(|e| Error::Dataset(format!("{} line {}: {e}", path.display(), i + 1)))?;
        rec.validate(i + 1)?;
        out.push(rec);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub seed: u64,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl SplitName {
    pub fn name(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Val => "val",
            SplitName::Test => "test",
        }
    }
}

impl std::str::FromStr for SplitName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitName::Train),
            "val" => Ok(SplitName::Val),
            "test" => Ok(SplitName::Test),
            _ => Err(Error::Config(format!("unknown split '{s}' (train, val or test)"))),
        }
    }
}

impl Split {
    pub fn scenes(&self, which: SplitName) -> &[usize] {
        match which {
            SplitName::Train => &self.train,
            SplitName::Val => &self.val,
            SplitName::Test => &self.test,
        }
    }

    pub fn of_scene(&self, scene: usize) -> Option<SplitName> {
        [SplitName::Train, SplitName::Val, SplitName::Test]
            .into_iter()
            .find(|&s| self.scenes(s).contains(&scene))
    }
}

/// Seeded scene-level shuffle into disjoint train/val/test lists.
pub fn split_dataset(scenes: &[usize], spec: &SplitSpec, seed: u64) -> Result<Split> {
    let unique: BTreeSet<_> = scenes.iter().copied().collect();
    if unique.len() != scenes.len() {
        return Err(Error::Dataset("scene list contains duplicates".into()));
    }
    let need = spec.train + spec.val + spec.test;
    if need > scenes.len() {
        return Err(Error::Dataset(format!(
            "split needs {need} scenes but only {} are available",
            scenes.len()
        )));
    }
    let mut order: Vec<usize> = unique.into_iter().collect();
    order.shuffle(&mut Pcg32::seed_from_u64(seed));
    let mut take = |n: usize| {
        let mut part: Vec<usize> = order.drain(..n).collect();
        part.sort_unstable();
        part
    };
    Ok(Split {
        seed,
        train: take(spec.train),
        val: take(spec.val),
        test: take(spec.test),
    })
}

/// Per-channel spectrogram statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: [f64; 2],
    pub std: [f64; 2],
}

#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: [f64; 2],
    sum: [f64; 2],
    sq: [f64; 2],
}

impl Moments {
    fn add(&mut self, spec: &Tensor<f32>) {
        let per = spec.numel() / 2;
        for ch in 0..2 {
            for &v in &spec.data()[ch * per..(ch + 1) * per] {
                self.n[ch] += 1.0;
                self.sum[ch] += v as f64;
                self.sq[ch] += (v as f64).powi(2);
            }
        }
    }

    fn merge(&mut self, o: &Moments) {
        for ch in 0..2 {
            self.n[ch] += o.n[ch];
            self.sum[ch] += o.sum[ch];
            self.sq[ch] += o.sq[ch];
        }
    }

    fn stats(&self) -> Result<NormStats> {
        if self.n[0] == 0.0 {
            return Err(Error::Dataset("train split has no spectrograms".into()));
        }
        let mean = [self.sum[0] / self.n[0], self.sum[1] / self.n[1]];
        let std = [0, 1].map(|c| (self.sq[c] / self.n[c] - mean[c].powi(2)).max(0.0).sqrt().max(1e-6));
        Ok(NormStats { mean, std })
    }
}

/// Seed of scene `i` derived from the dataset seed.
pub fn scene_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(i as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetSummary {
    pub scenes: usize,
    pub positions: usize,
    pub views: usize,
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(v).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })
}

fn scene_file(i: usize) -> String {
    format!("scenes/scene_{i:03}.json")
}

/// Renders and simulates every view of every generated scene under `out`.
pub fn gen_dataset(cfg: &ExperimentConfig, out: &Path) -> Result<DatasetSummary> {
    cfg.validate()?;
    fs::create_dir_all(out.join("scenes")).map_err(|e| Error::io(out, e))?;
    let chirp = cfg.acoustics.chirp()?;
    let clip = cfg.acoustics.clip;
    let mut records = Vec::new();
    let mut moments = Vec::with_capacity(cfg.scenes);
    for s in 0..cfg.scenes {
        let scene = generate_scene(scene_seed(cfg.seed, s), &cfg.scene_gen)?;
        write_json(&out.join(scene_file(s)), &scene)?;
        let mut m = Moments::default();
        let poses = navigable_poses(&scene, &cfg.grid);
        for (p, group) in poses.chunks(4).enumerate() {
            let mut views = Vec::with_capacity(4);
            for pose in group {
                let (rgb, depth) = render_rgbd(&scene, pose, &cfg.camera)?;
                let normals = depth_to_normals(&depth, &cfg.camera);
                let echo = simulate_echo(&scene, pose, &chirp, clip, &cfg.acoustics)?;
                let spec = stft_log_magnitude(&echo, &cfg.stft)?;
                let (h, w) = (cfg.camera.height, cfg.camera.width);
                let mut nd = normals.data.clone();
                nd.extend(normals.valid.iter().map(|&v| if v { 1.0f32 } else { 0.0 }));
                let ed: Vec<f32> = echo.left.iter().chain(&echo.right).map(|&v| v as f32).collect();
                let tensors = [
                    ("rgb", Tensor::new(&[3, h, w], rgb.data)?),
                    ("depth", Tensor::new(&[1, h, w], depth.data)?),
                    ("normals", Tensor::new(&[4, h, w], nd)?),
                    ("echo", Tensor::new(&[2, echo.left.len()], ed)?),
                    ("spec", Tensor::new(&[2, spec.freq_bins, spec.time_frames], spec.data)?),
                ];
                m.add(&tensors[4].1);
                let stem = format!("blobs/scene_{s:03}/p{p:04}_{:03}", pose.orientation.azimuth_deg());
                let mut refs = Vec::with_capacity(5);
                for (kind, t) in &tensors {
                    let rel = format!("{stem}_{kind}.vets");
                    write_blob(&out.join(&rel), t)?;
                    refs.push(rel);
                }
                let mut it = refs.into_iter();
                let mut next = || it.next().expect("five blobs");
                views.push(ViewRecord {
                    orientation: pose.orientation,
                    rgb: next(),
                    depth: next(),
                    normals: next(),
                    echo: next(),
                    spec: next(),
                });
            }
            let loc = group[0].position;
            records.push(PositionRecord {
                scene: s,
                position: p,
                location: [loc.x, loc.y, loc.z],
                views,
            });
        }
        moments.push(m);
    }
    let ids: Vec<usize> = (0..cfg.scenes).collect();
    let split = split_dataset(&ids, &cfg.split, cfg.seed)?;
    let mut train = Moments::default();
    for &s in &split.train {
        train.merge(&moments[s]);
    }
    write_manifest(&out.join(MANIFEST_FILE), &records)?;
    write_json(&out.join(SPLIT_FILE), &split)?;
    write_json(&out.join(NORM_FILE), &train.stats()?)?;
    let cfg_path = out.join(CONFIG_FILE);
    fs::write(&cfg_path, cfg.to_toml()).map_err(|e| Error::io(&cfg_path, e))?;
    Ok(DatasetSummary {
        scenes: cfg.scenes,
        positions: records.len(),
        views: records.len() * 4,
    })
}

/// Tensors of one view, ready for the networks: rgb in `[-1, 1]`, depth in
/// metres, normals `[4,H,W]`, spectrogram normalized with the train stats.
#[derive(Debug, Clone)]
pub struct ViewData {
    pub rgb: Arc<Tensor<f32>>,
    pub depth: Arc<Tensor<f32>>,
    pub normals: Arc<Tensor<f32>>,
    pub spec: Arc<Tensor<f32>>,
}

#[derive(Debug, Clone)]
pub struct GroupData {
    pub scene: usize,
    pub position: usize,
    /// Indexed by `Orientation::index`.
    pub views: Vec<ViewData>,
}

impl GroupData {
    pub fn pose_group(&self) -> PoseGroup {
        PoseGroup {
            scene: self.scene,
            position: self.position,
            rgb: std::array::from_fn(|i| Some(self.views[i].rgb.clone())),
            spec: std::array::from_fn(|i| Some(self.views[i].spec.clone())),
        }
    }
}

/// An opened dataset directory. Every scene read is recorded against the
/// current phase label so tests can prove test scenes stay unseen in training.
#[derive(Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub config: ExperimentConfig,
    pub records: Vec<PositionRecord>,
    pub split: Split,
    pub norm: NormStats,
    phase: Mutex<String>,
    audit: Mutex<BTreeSet<(String, usize)>>,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Dataset> {
        let manifest = root.join(MANIFEST_FILE);
        if !manifest.exists() {
            return Err(Error::MissingArtifact(format!("dataset manifest {}", manifest.display())));
        }
        let config = ExperimentConfig::load(&root.join(CONFIG_FILE))?;
        let records = read_manifest(&manifest)?;
        let split: Split = read_json(&root.join(SPLIT_FILE))?;
        let norm: NormStats = read_json(&root.join(NORM_FILE))?;
        for r in &records {
            if split.of_scene(r.scene).is_none() {
                return Err(Error::Dataset(format!("scene {} is in no split", r.scene)));
            }
        }
        Ok(Dataset {
            root: root.to_path_buf(),
            config,
            records,
            split,
            norm,
            phase: Mutex::new("unspecified".into()),
            audit: Mutex::new(BTreeSet::new()),
        })
    }

    pub fn set_phase(&self, phase: &str) {
        *self.phase.lock().expect("phase lock") = phase.to_string();
    }

    /// Distinct (phase, scene) pairs read so far.
    pub fn audit(&self) -> Vec<(String, usize)> {
        self.audit.lock().expect("audit lock").iter().cloned().collect()
    }

    fn touch(&self, scene: usize) {
        let phase = self.phase.lock().expect("phase lock").clone();
        self.audit.lock().expect("audit lock").insert((phase, scene));
    }

    pub fn scene(&self, id: usize) -> Result<Scene> {
        self.touch(id);
        read_json(&self.root.join(scene_file(id)))
    }

    pub fn records_in(&self, which: SplitName) -> Vec<&PositionRecord> {
        let scenes = self.split.scenes(which);
        self.records.iter().filter(|r| scenes.contains(&r.scene)).collect()
    }

    pub fn read_tensor(&self, scene: usize, rel: &str) -> Result<Tensor<f32>> {
        self.touch(scene);
        read_blob(&self.root.join(rel))
    }

    fn load_view(&self, scene: usize, v: &ViewRecord) -> Result<ViewData> {
        let mut rgb = self.read_tensor(scene, &v.rgb)?;
        rgb.data_mut().iter_mut().for_each(|x| *x = 2.0 * *x - 1.0);
        let mut spec = self.read_tensor(scene, &v.spec)?;
        let per = spec.numel() / 2;
        for (ch, chunk) in spec.data_mut().chunks_mut(per).enumerate() {
            let (m, s) = (self.norm.mean[ch] as f32, self.norm.std[ch] as f32);
            chunk.iter_mut().for_each(|x| *x = (*x - m) / s);
        }
        Ok(ViewData {
            rgb: Arc::new(rgb),
            depth: Arc::new(self.read_tensor(scene, &v.depth)?),
            normals: Arc::new(self.read_tensor(scene, &v.normals)?),
            spec: Arc::new(spec),
        })
    }

    /// All positions of one split with their four views loaded.
    pub fn load_groups(&self, which: SplitName) -> Result<Vec<GroupData>> {
        self.records_in(which)
            .into_iter()
            .map(|r| {
                let views = Orientation::ALL
                    .iter()
                    .map(|&o| {
                        let v = r.view(o).ok_or_else(|| {
                            Error::Dataset(format!("scene {} position {} lacks {}", r.scene, r.position, o.azimuth_deg()))
                        })?;
                        self.load_view(r.scene, v)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(GroupData {
                    scene: r.scene,
                    position: r.position,
                    views,
                })
            })
            .collect()
    }
}
