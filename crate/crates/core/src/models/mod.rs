//! The depth, normal and pretext networks, built on the autodiff tape.

mod pretext;
mod train;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_pcg::Pcg32;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Conv2d, Float, Linear, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::render::{DepthMap, NormalMap};

pub use pretext::{make_pretext_sample, match_label, OrientationOffset, PoseGroup, PretextSample};
pub use train::{evaluate, predict_samples, train, EpochLog, LrSchedule, Sample, Target, TrainConfig, TrainLog};

const SLOPE: f64 = 0.2;
/// Parameter-name prefix shared by every network with a visual stream.
pub const VISUAL_PREFIX: &str = "visual_encoder.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Rgb2Depth,
    Echo2Depth,
    RgbEcho2Depth,
    Pretext,
    PretextSimple,
    BinaryMatch,
    Normals,
}

impl ModelKind {
    pub const ALL: [ModelKind; 7] = [
        ModelKind::Rgb2Depth,
        ModelKind::Echo2Depth,
        ModelKind::RgbEcho2Depth,
        ModelKind::Pretext,
        ModelKind::PretextSimple,
        ModelKind::BinaryMatch,
        ModelKind::Normals,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Rgb2Depth => "rgb2depth",
            ModelKind::Echo2Depth => "echo2depth",
            ModelKind::RgbEcho2Depth => "rgbecho2depth",
            ModelKind::Pretext => "pretext",
            ModelKind::PretextSimple => "pretext_simple",
            ModelKind::BinaryMatch => "binary_match",
            ModelKind::Normals => "normals",
        }
    }

    pub fn uses_rgb(self) -> bool {
        self != ModelKind::Echo2Depth
    }

    pub fn uses_audio(self) -> bool {
        !matches!(self, ModelKind::Rgb2Depth | ModelKind::Normals)
    }

    pub fn is_depth(self) -> bool {
        matches!(self, ModelKind::Rgb2Depth | ModelKind::Echo2Depth | ModelKind::RgbEcho2Depth)
    }

    /// Number of classes for the classification kinds.
    pub fn classes(self) -> Option<usize> {
        match self {
            ModelKind::Pretext => Some(4),
            ModelKind::PretextSimple | ModelKind::BinaryMatch => Some(2),
            _ => None,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = ModelKind::ALL.iter().map(|k| k.name()).collect();
                Error::Config(format!("unknown model kind '{s}' (expected one of {})", names.join(", ")))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub image_height: usize,
    pub image_width: usize,
    pub visual_widths: [usize; 4],
    pub audio_widths: Vec<usize>,
    pub audio_dim: usize,
    pub fusion_dim: usize,
    pub max_depth: f64,
    pub spec_bins: usize,
    pub spec_frames: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            image_height: 64,
            image_width: 64,
            visual_widths: [16, 32, 64, 128],
            audio_widths: vec![8, 16, 32, 64],
            audio_dim: 128,
            fusion_dim: 128,
            max_depth: 10.0,
            spec_bins: 257,
            spec_frames: 162,
        }
    }
}

fn halve(n: usize) -> usize {
    // k4 s2 p1
    (n + 2 - 4) / 2 + 1
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = (self.image_height, self.image_width);
        if h < 16 || w < 16 || h % 16 != 0 || w % 16 != 0 {
            return Err(Error::Config(format!("model image size {h}x{w} must be a multiple of 16")));
        }
        if self.visual_widths.contains(&0) || self.audio_widths.contains(&0) || self.audio_widths.is_empty() {
            return Err(Error::Config("model channel widths must be positive".into()));
        }
        if self.audio_dim == 0 || self.fusion_dim == 0 {
            return Err(Error::Config("model feature sizes must be positive".into()));
        }
        if !(self.max_depth > 0.0) {
            return Err(Error::Config(format!("max_depth {} must be positive", self.max_depth)));
        }
        let (mut b, mut t) = (self.spec_bins, self.spec_frames);
        for _ in &self.audio_widths {
            if b < 2 || t < 2 {
                return Err(Error::Config(format!(
                    "spectrogram {}x{} too small for {} audio conv blocks",
                    self.spec_bins,
                    self.spec_frames,
                    self.audio_widths.len()
                )));
            }
            b = halve(b);
            t = halve(t);
        }
        Ok(())
    }

    fn bottleneck(&self) -> (usize, usize) {
        (self.image_height / 16, self.image_width / 16)
    }
}

/// Four stride-2 conv blocks; the fourth output is the bottleneck.
#[derive(Debug, Clone)]
pub struct VisualEncoder {
    blocks: [Conv2d; 4],
}

impl VisualEncoder {
    fn new<T: Float>(store: &mut ParamStore<T>, widths: [usize; 4], rng: &mut Pcg32) -> Self {
        let mut in_ch = 3;
        let blocks = std::array::from_fn(|i| {
            let c = Conv2d::new(store, &format!("{VISUAL_PREFIX}conv{i}"), in_ch, widths[i], 4, 2, 1, rng);
            in_ch = widths[i];
            c
        });
        VisualEncoder { blocks }
    }

    /// Features after each block, finest first.
    pub fn forward<T: Float>(&self, tape: &mut Tape<'_, T>, rgb: Var) -> Result<[Var; 4]> {
        let mut x = rgb;
        let mut feats = [x; 4];
        for (i, b) in self.blocks.iter().enumerate() {
            x = b.forward(tape, x)?;
            x = tape.leaky_relu(x, SLOPE)?;
            feats[i] = x;
        }
        Ok(feats)
    }
}

#[derive(Debug, Clone)]
pub struct AudioEncoder {
    blocks: Vec<Conv2d>,
    fc: Linear,
}

impl AudioEncoder {
    fn new<T: Float>(store: &mut ParamStore<T>, cfg: &ModelConfig, rng: &mut Pcg32) -> Self {
        let mut in_ch = 2;
        let mut blocks = Vec::new();
        for (i, &w) in cfg.audio_widths.iter().enumerate() {
            blocks.push(Conv2d::new(store, &format!("audio_encoder.conv{i}"), in_ch, w, 4, 2, 1, rng));
            in_ch = w;
        }
        let fc = Linear::new(store, "audio_encoder.fc", in_ch, cfg.audio_dim, rng);
        AudioEncoder { blocks, fc }
    }

    /// `[N, 2, F, T]` spectrograms to `[N, audio_dim]` features.
    pub fn forward<T: Float>(&self, tape: &mut Tape<'_, T>, spec: Var) -> Result<Var> {
        let mut x = spec;
        for b in &self.blocks {
            x = b.forward(tape, x)?;
            x = tape.leaky_relu(x, SLOPE)?;
        }
        let pooled = tape.global_avg_pool(x)?;
        let f = self.fc.forward(tape, pooled)?;
        tape.leaky_relu(f, SLOPE)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Head {
    Depth,
    Normals,
}

/// Nearest-neighbour x2 upsampling followed by 3x3 conv, four times.
#[derive(Debug, Clone)]
pub struct Decoder {
    bridge: Option<Linear>,
    ups: [Conv2d; 4],
    out: Conv2d,
    skips: bool,
    head: Head,
}

impl Decoder {
    fn new<T: Float>(
        store: &mut ParamStore<T>,
        cfg: &ModelConfig,
        in_ch: usize,
        skips: bool,
        head: Head,
        bridge_from: Option<usize>,
        rng: &mut Pcg32,
    ) -> Self {
        let (bh, bw) = cfg.bottleneck();
        let bridge = bridge_from.map(|d| Linear::new(store, "decoder.bridge", d, in_ch * bh * bw, rng));
        let vw = cfg.visual_widths;
        let outs = [vw[2], vw[1], vw[0], vw[0]];
        let skip_ch = [vw[2], vw[1], vw[0], 0];
        let mut prev = in_ch;
        let ups = std::array::from_fn(|i| {
            let cin = prev + if skips { skip_ch[i] } else { 0 };
            prev = outs[i];
            Conv2d::new(store, &format!("decoder.up{i}"), cin, outs[i], 3, 1, 1, rng)
        });
        let out_ch = if head == Head::Depth { 1 } else { 3 };
        let out = Conv2d::new(store, "decoder.out", prev, out_ch, 3, 1, 1, rng);
        Decoder { bridge, ups, out, skips, head }
    }

    fn forward<T: Float>(
        &self,
        tape: &mut Tape<'_, T>,
        mut x: Var,
        skips: Option<&[Var; 4]>,
        max_depth: f64,
    ) -> Result<Var> {
        for (i, up) in self.ups.iter().enumerate() {
            x = tape.upsample2(x)?;
            if let (true, Some(s), true) = (self.skips, skips, i < 3) {
                x = tape.concat(&[x, s[2 - i]])?;
            }
            x = up.forward(tape, x)?;
            x = tape.leaky_relu(x, SLOPE)?;
        }
        let y = self.out.forward(tape, x)?;
        match self.head {
            Head::Depth => {
                let s = tape.sigmoid(y)?;
                tape.scale(s, max_depth)
            }
            Head::Normals => tape.normalize_channels(y),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PretextHead {
    fuse: Linear,
    classify: Linear,
}

impl PretextHead {
    fn new<T: Float>(store: &mut ParamStore<T>, cfg: &ModelConfig, classes: usize, rng: &mut Pcg32) -> Self {
        let fan_in = cfg.visual_widths[3] + cfg.audio_dim;
        PretextHead {
            fuse: Linear::new(store, "pretext_head.fuse", fan_in, cfg.fusion_dim, rng),
            classify: Linear::new(store, "pretext_head.classify", cfg.fusion_dim, classes, rng),
        }
    }

    fn forward<T: Float>(&self, tape: &mut Tape<'_, T>, visual: Var, audio: Var) -> Result<Var> {
        let v = tape.global_avg_pool(visual)?;
        let joint = tape.concat(&[v, audio])?;
        let f = self.fuse.forward(tape, joint)?;
        let f = tape.leaky_relu(f, SLOPE)?;
        self.classify.forward(tape, f)
    }
}

/// Network inputs. Images are `[N, 3, H, W]` in `[-1, 1]`; spectrograms are
/// normalized `[N, 2, F, T]`.
#[derive(Debug, Clone, Copy)]
pub struct Inputs {
    pub rgb: Option<Var>,
    pub spec: Option<Var>,
}

#[derive(Debug, Clone)]
pub enum Prediction {
    Depth(Vec<DepthMap>),
    Normals(Vec<NormalMap>),
    Logits(Vec<Vec<f32>>),
}

#[derive(Debug, Clone)]
pub struct Network<T> {
    pub kind: ModelKind,
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    visual: Option<VisualEncoder>,
    audio: Option<AudioEncoder>,
    decoder: Option<Decoder>,
    head: Option<PretextHead>,
}

/// A freshly initialized network; weights come from `Pcg32::seed_from_u64(seed)`.
pub fn build_model<T: Float>(kind: ModelKind, cfg: &ModelConfig, seed: u64) -> Result<Network<T>> {
    cfg.validate()?;
    let mut rng = Pcg32::seed_from_u64(seed);
    let mut params = ParamStore::new();
    let visual = kind.uses_rgb().then(|| VisualEncoder::new(&mut params, cfg.visual_widths, &mut rng));
    let audio = kind.uses_audio().then(|| AudioEncoder::new(&mut params, cfg, &mut rng));
    let c4 = cfg.visual_widths[3];
    let decoder = match kind {
        ModelKind::Rgb2Depth => Some(Decoder::new(&mut params, cfg, c4, true, Head::Depth, None, &mut rng)),
        ModelKind::Echo2Depth => Some(Decoder::new(
            &mut params,
            cfg,
            c4,
            false,
            Head::Depth,
            Some(cfg.audio_dim),
            &mut rng,
        )),
        ModelKind::RgbEcho2Depth => Some(Decoder::new(
            &mut params,
            cfg,
            c4 + cfg.audio_dim,
            true,
            Head::Depth,
            None,
            &mut rng,
        )),
        ModelKind::Normals => Some(Decoder::new(&mut params, cfg, c4, true, Head::Normals, None, &mut rng)),
        _ => None,
    };
    let head = kind.classes().map(|n| PretextHead::new(&mut params, cfg, n, &mut rng));
    Ok(Network {
        kind,
        config: cfg.clone(),
        params,
        visual,
        audio,
        decoder,
        head,
    })
}

fn need(v: Option<Var>, what: &str, kind: ModelKind) -> Result<Var> {
    v.ok_or_else(|| Error::shape("input", format!("{kind} needs {what} input")))
}

impl<T: Float> Network<T> {
    /// Records the network on `tape`. Depth comes out in metres `[N,1,H,W]`,
    /// normals as unit vectors `[N,3,H,W]`, classifiers as logits `[N,C]`.
    pub fn forward(&self, tape: &mut Tape<'_, T>, inputs: Inputs) -> Result<Var> {
        let cfg = &self.config;
        let visual = match &self.visual {
            Some(enc) => {
                let rgb = need(inputs.rgb, "rgb", self.kind)?;
                let s = tape.get(rgb)?.shape().to_vec();
                if s.len() != 4 || s[1] != 3 || s[2] != cfg.image_height || s[3] != cfg.image_width {
                    return Err(Error::shape(
                        "visual_encoder",
                        format!("expected [N,3,{},{}], got {s:?}", cfg.image_height, cfg.image_width),
                    ));
                }
                Some(enc.forward(tape, rgb)?)
            }
            None => None,
        };
        let audio = match &self.audio {
            Some(enc) => {
                let spec = need(inputs.spec, "spectrogram", self.kind)?;
                let s = tape.get(spec)?.shape().to_vec();
                if s.len() != 4 || s[1] != 2 {
                    return Err(Error::shape("audio_encoder", format!("expected [N,2,F,T], got {s:?}")));
                }
                Some(enc.forward(tape, spec)?)
            }
            None => None,
        };
        if let Some(head) = &self.head {
            let (v, a) = (visual.expect("visual stream"), audio.expect("audio stream"));
            return head.forward(tape, v[3], a);
        }
        let dec = self.decoder.as_ref().expect("decoder");
        let (bh, bw) = cfg.bottleneck();
        let (x, skips) = match (self.kind, &visual, audio) {
            (ModelKind::Echo2Depth, _, Some(a)) => {
                let bridge = dec.bridge.as_ref().expect("bridge");
                let n = tape.value(a).shape()[0];
                let z = bridge.forward(tape, a)?;
                let z = tape.leaky_relu(z, SLOPE)?;
                (tape.reshape(z, &[n, cfg.visual_widths[3], bh, bw])?, None)
            }
            (ModelKind::RgbEcho2Depth, Some(v), Some(a)) => {
                let tiled = tape.tile(a, bh, bw)?;
                (tape.concat(&[v[3], tiled])?, Some(v))
            }
            (_, Some(v), _) => (v[3], Some(v)),
            _ => unreachable!("stream layout fixed by build_model"),
        };
        dec.forward(tape, x, skips, cfg.max_depth)
    }

    /// Forward pass on a fresh tape, returning the raw output tensor.
    pub fn predict_tensor(&self, rgb: Option<&Tensor<T>>, spec: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        let mut tape = Tape::new(&self.params);
        let inputs = Inputs {
            rgb: rgb.map(|t| tape.input(t.clone())),
            spec: spec.map(|t| tape.input(t.clone())),
        };
        let y = self.forward(&mut tape, inputs)?;
        Ok(tape.value(y).clone())
    }

    /// Forward pass decoded into depth maps, normal maps, or logit rows.
    pub fn predict(&self, rgb: Option<&Tensor<T>>, spec: Option<&Tensor<T>>) -> Result<Prediction> {
        let out = self.predict_tensor(rgb, spec)?;
        let f32s: Vec<f32> = out.data().iter().map(|v| v.to_f32().unwrap_or(f32::NAN)).collect();
        let n = out.shape()[0];
        let per = f32s.len() / n;
        let chunks = f32s.chunks(per);
        let (h, w) = (self.config.image_height, self.config.image_width);
        Ok(if self.kind.classes().is_some() {
            Prediction::Logits(chunks.map(<[f32]>::to_vec).collect())
        } else if self.kind.is_depth() {
            Prediction::Depth(
                chunks
                    .map(|c| DepthMap {
                        width: w,
                        height: h,
                        data: c.to_vec(),
                    })
                    .collect(),
            )
        } else {
            Prediction::Normals(
                chunks
                    .map(|c| NormalMap {
                        width: w,
                        height: h,
                        data: c.to_vec(),
                        valid: vec![true; h * w],
                    })
                    .collect(),
            )
        })
    }

    /// Copies the visual encoder weights out of a checkpoint.
    pub fn load_visual_encoder(&mut self, checkpoint: &[(String, Tensor<T>)]) -> Result<usize> {
        if self.visual.is_none() {
            return Err(Error::Config(format!("{} has no visual encoder to initialize", self.kind)));
        }
        self.params.load_prefix(checkpoint, VISUAL_PREFIX)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::{self, randn};

    fn tiny() -> ModelConfig {
        ModelConfig {
            image_height: 16,
            image_width: 16,
            visual_widths: [2, 3, 3, 4],
            audio_widths: vec![2, 3],
            audio_dim: 3,
            fusion_dim: 4,
            max_depth: 5.0,
            spec_bins: 9,
            spec_frames: 6,
        }
    }

    fn inputs(cfg: &ModelConfig, n: usize, seed: u64) -> (Tensor<f64>, Tensor<f64>) {
        let mut rng = Pcg32::seed_from_u64(seed);
        (
            randn(&[n, 3, cfg.image_height, cfg.image_width], &mut rng),
            randn(&[n, 2, cfg.spec_bins, cfg.spec_frames], &mut rng),
        )
    }

    #[test]
    fn unknown_kind_is_an_error() {
        assert!("depthnet".parse::<ModelKind>().is_err());
        for k in ModelKind::ALL {
            assert_eq!(k.name().parse::<ModelKind>().unwrap(), k);
        }
    }

    #[test]
    fn depth_shapes_and_range() {
        let cfg = ModelConfig::default();
        let (rgb, spec) = {
            let mut rng = Pcg32::seed_from_u64(1);
            (
                randn(&[1, 3, 64, 64], &mut rng).cast::<f32>(),
                randn(&[1, 2, 257, 162], &mut rng).cast::<f32>(),
            )
        };
        let mut shapes = Vec::new();
        for kind in [ModelKind::Rgb2Depth, ModelKind::Echo2Depth, ModelKind::RgbEcho2Depth] {
            let net = build_model::<f32>(kind, &cfg, 3).unwrap();
            let out = net.predict_tensor(Some(&rgb), Some(&spec)).unwrap();
            assert!(out.data().iter().all(|&d| d > 0.0 && d < cfg.max_depth as f32));
            shapes.push(out.shape().to_vec());
        }
        assert_eq!(shapes[0], vec![1, 1, 64, 64]);
        assert!(shapes.iter().all(|s| *s == shapes[0]));
    }

    #[test]
    fn pretext_logits_softmax_to_one() {
        let cfg = tiny();
        let (rgb, spec) = inputs(&cfg, 3, 2);
        for (kind, c) in [(ModelKind::Pretext, 4), (ModelKind::PretextSimple, 2), (ModelKind::BinaryMatch, 2)] {
            let net = build_model::<f64>(kind, &cfg, 0).unwrap();
            let Prediction::Logits(rows) = net.predict(Some(&rgb), Some(&spec)).unwrap() else {
                panic!("logits expected")
            };
            assert_eq!(rows.len(), 3);
            for r in rows {
                assert_eq!(r.len(), c);
                let m = r.iter().cloned().fold(f32::MIN, f32::max);
                let z: f32 = r.iter().map(|v| (v - m).exp()).sum();
                let p: f32 = r.iter().map(|v| (v - m).exp() / z).sum();
                assert!((p - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn normals_are_unit_length() {
        let cfg = tiny();
        let (rgb, _) = inputs(&cfg, 2, 3);
        let net = build_model::<f64>(ModelKind::Normals, &cfg, 0).unwrap();
        let Prediction::Normals(maps) = net.predict(Some(&rgb), None).unwrap() else { panic!() };
        for m in maps {
            for v in 0..16 {
                for u in 0..16 {
                    let n = m.normal(u, v);
                    let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
                    assert!((len - 1.0).abs() < 1e-4);
                }
            }
        }
    }

    #[test]
    fn missing_input_is_an_error() {
        let cfg = tiny();
        let (rgb, _) = inputs(&cfg, 1, 4);
        let net = build_model::<f64>(ModelKind::RgbEcho2Depth, &cfg, 0).unwrap();
        assert!(net.predict_tensor(Some(&rgb), None).is_err());
        let bad = Tensor::zeros(&[1, 3, 8, 8]);
        assert!(net.predict_tensor(Some(&bad), None).is_err());
    }

    #[test]
    fn visual_encoder_names_match_across_kinds() {
        let cfg = tiny();
        let names = |k| {
            let net = build_model::<f32>(k, &cfg, 0).unwrap();
            net.params
                .iter()
                .filter(|(n, _)| n.starts_with(VISUAL_PREFIX))
                .map(|(n, t)| (n.to_string(), t.shape().to_vec()))
                .collect::<Vec<_>>()
        };
        let p = names(ModelKind::Pretext);
        assert_eq!(p.len(), 8);
        for k in [ModelKind::Rgb2Depth, ModelKind::Normals, ModelKind::PretextSimple, ModelKind::BinaryMatch] {
            assert_eq!(names(k), p);
        }
    }

    #[test]
    fn checkpoint_loads_into_downstream_nets() {
        let cfg = tiny();
        let pre = build_model::<f32>(ModelKind::Pretext, &cfg, 9).unwrap();
        let ckpt = pre.params.to_named();
        let mut depth = build_model::<f32>(ModelKind::Rgb2Depth, &cfg, 1).unwrap();
        assert_eq!(depth.load_visual_encoder(&ckpt).unwrap(), 8);
        let id = depth.params.id("visual_encoder.conv0.weight").unwrap();
        assert_eq!(depth.params.get(id), pre.params.get(pre.params.id("visual_encoder.conv0.weight").unwrap()));

        let mut other = tiny();
        other.visual_widths = [2, 3, 3, 5];
        let mut wrong = build_model::<f32>(ModelKind::Rgb2Depth, &other, 1).unwrap();
        let err = wrong.load_visual_encoder(&ckpt).unwrap_err().to_string();
        assert!(err.contains("visual_encoder.conv3.weight"), "{err}");
        let mut echo = build_model::<f32>(ModelKind::Echo2Depth, &cfg, 1).unwrap();
        assert!(echo.load_visual_encoder(&ckpt).is_err());
    }

    #[test]
    fn predict_is_deterministic() {
        let cfg = tiny();
        let (rgb, spec) = inputs(&cfg, 2, 5);
        let a = build_model::<f64>(ModelKind::RgbEcho2Depth, &cfg, 7).unwrap();
        let b = build_model::<f64>(ModelKind::RgbEcho2Depth, &cfg, 7).unwrap();
        let x = a.predict_tensor(Some(&rgb), Some(&spec)).unwrap();
        assert_eq!(x, a.predict_tensor(Some(&rgb), Some(&spec)).unwrap());
        assert_eq!(x, b.predict_tensor(Some(&rgb), Some(&spec)).unwrap());
    }

    #[test]
    fn every_network_passes_finite_differences() {
        let cfg = tiny();
        for kind in ModelKind::ALL {
            let mut net = build_model::<f64>(kind, &cfg, 11).unwrap();
            let (rgb, spec) = inputs(&cfg, 2, 12);
            let mut rng = Pcg32::seed_from_u64(13);
            let target = randn(&[2, 3, 16, 16], &mut rng);
            let net_view = net.clone();
            let report = gradcheck::check(kind.name(), &mut net.params, &mut [rgb, spec], 12, |tape, v| {
                let inputs = Inputs {
                    rgb: Some(v[0]),
                    spec: Some(v[1]),
                };
                let y = net_view.forward(tape, inputs)?;
                match kind.classes() {
                    Some(_) => tape.softmax_cross_entropy(y, &[1, 0]),
                    None if kind == ModelKind::Normals => {
                        let mask = vec![true; 2 * 256];
                        let mut t = target.clone();
                        for p in 0..2 * 256 {
                            let (b, k) = (p / 256, p % 256);
                            let idx = |c: usize| (b * 3 + c) * 256 + k;
                            let n = (0..3).map(|c| t.data()[idx(c)].powi(2)).sum::<f64>().sqrt();
                            for c in 0..3 {
                                t.data_mut()[idx(c)] /= n;
                            }
                        }
                        tape.cosine_loss(y, &t, &mask)
                    }
                    None => {
                        let t = Tensor::from_fn(&[2, 1, 16, 16], |i| 0.5 + (i % 7) as f64 * 0.6);
                        tape.l1_loss(y, &t, None)
                    }
                }
            })
            .unwrap();
            assert!(report.passed, "{report}");
        }
    }
}
