//! Independent reference implementations shared by the integration tests
//! and the acceptance runner. Written as plain loops on purpose.
#![allow(dead_code)]

use std::f64::consts::PI;

use num_complex::Complex64;

use echolab::acoustics::{simulate_echo, AcousticsConfig, BinauralWaveform};
use echolab::geom::{Aabb, Vec3};
use echolab::render::{DepthMap, NormalMap};
use echolab::scene::{AgentPose, Material, Orientation, Scene};

pub fn dft(x: &[Complex64]) -> Vec<Complex64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (t, v) in x.iter().enumerate() {
                let ang = -2.0 * PI * (k * t) as f64 / n as f64;
                acc += v * Complex64::new(ang.cos(), ang.sin());
            }
            acc
        })
        .collect()
}

pub struct DepthOracle {
    pub rms: f64,
    pub rel: f64,
    pub log10: f64,
    pub delta: [f64; 3],
}

pub fn depth_oracle(pred: &[DepthMap], gt: &[DepthMap]) -> DepthOracle {
    let (mut n, mut se, mut rel, mut lg) = (0usize, 0.0, 0.0, 0.0);
    let mut hits = [0usize; 3];
    for (p, g) in pred.iter().zip(gt) {
        for i in 0..g.data.len() {
            let gv = g.data[i] as f64;
            if gv <= 1e-3 {
                continue;
            }
            let pv = p.data[i] as f64;
            n += 1;
            se += (pv - gv) * (pv - gv);
            rel += (pv - gv).abs() / gv;
            lg += (pv.log10() - gv.log10()).abs();
            let ratio = if pv / gv > gv / pv { pv / gv } else { gv / pv };
            for (k, h) in hits.iter_mut().enumerate() {
                if ratio < 1.25f64.powi(k as i32 + 1) {
                    *h += 1;
                }
            }
        }
    }
    let nf = n as f64;
    DepthOracle {
        rms: (se / nf).sqrt(),
        rel: rel / nf,
        log10: lg / nf,
        delta: [hits[0] as f64 / nf, hits[1] as f64 / nf, hits[2] as f64 / nf],
    }
}

pub struct NormalOracle {
    pub mean: f64,
    pub median: f64,
    pub pct: [f64; 3],
}

pub fn normal_oracle(pred: &[NormalMap], gt: &[NormalMap]) -> NormalOracle {
    let mut angles = Vec::new();
    for (p, g) in pred.iter().zip(gt) {
        let plane = g.width * g.height;
        for i in 0..plane {
            if !(p.valid[i] && g.valid[i]) {
                continue;
            }
            let (mut dot, mut pp, mut gg) = (0.0, 0.0, 0.0);
            for c in 0..3 {
                let (a, b) = (p.data[c * plane + i] as f64, g.data[c * plane + i] as f64);
                dot += a * b;
                pp += a * a;
                gg += b * b;
            }
            // stored f32 vectors are unit only to f32 precision
            dot /= (pp * gg).sqrt();
            angles.push(dot.clamp(-1.0, 1.0).acos() * 180.0 / PI);
        }
    }
    let n = angles.len() as f64;
    let mean = angles.iter().sum::<f64>() / n;
    let mut sorted = angles.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = sorted.len();
    let median = if m % 2 == 1 {
        sorted[m / 2]
    } else {
        (sorted[m / 2 - 1] + sorted[m / 2]) / 2.0
    };
    let frac = |t: f64| angles.iter().filter(|&&a| a < t).count() as f64 / n;
    NormalOracle {
        mean,
        median,
        pct: [frac(11.25), frac(22.5), frac(30.0)],
    }
}

/// Slab-method distance along `dir` from `origin` to the nearest surface:
/// the inside of the room box or the outside of any obstacle.
pub fn ray_oracle(scene: &Scene, origin: Vec3, dir: Vec3) -> f64 {
    let o = origin.to_array();
    let d = dir.to_array();
    let e = scene.extents.to_array();
    let mut best = f64::INFINITY;
    for a in 0..3 {
        if d[a] > 0.0 {
            best = best.min((e[a] - o[a]) / d[a]);
        } else if d[a] < 0.0 {
            best = best.min(-o[a] / d[a]);
        }
    }
    for ob in &scene.obstacles {
        if let Some(t) = slab(&ob.bounds, o, d) {
            best = best.min(t);
        }
    }
    best
}

fn slab(b: &Aabb, o: [f64; 3], d: [f64; 3]) -> Option<f64> {
    let (lo, hi) = (b.min.to_array(), b.max.to_array());
    let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
    for a in 0..3 {
        if d[a] == 0.0 {
            if o[a] < lo[a] || o[a] > hi[a] {
                return None;
            }
            continue;
        }
        let (ta, tb) = ((lo[a] - o[a]) / d[a], (hi[a] - o[a]) / d[a]);
        t0 = t0.max(ta.min(tb));
        t1 = t1.min(ta.max(tb));
    }
    (t0 <= t1 && t0 > 0.0).then_some(t0)
}

/// Grid positions by direct scan: every multiple of `spacing` in the room
/// footprint, kept when it is at least `clearance` from each wall and from
/// the plan footprint of each obstacle.
pub fn brute_force_positions(scene: &Scene, spacing: f64, clearance: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let (ex, ey) = (scene.extents.x, scene.extents.y);
    let mut i = 0;
    while i as f64 * spacing <= ex + 1e-9 {
        let x = i as f64 * spacing;
        let mut j = 0;
        while j as f64 * spacing <= ey + 1e-9 {
            let y = j as f64 * spacing;
            let walls = x >= clearance - 1e-9
                && y >= clearance - 1e-9
                && ex - x >= clearance - 1e-9
                && ey - y >= clearance - 1e-9;
            let obstacles = scene.obstacles.iter().all(|o| {
                let dx = (o.bounds.min.x - x).max(x - o.bounds.max.x).max(0.0);
                let dy = (o.bounds.min.y - y).max(y - o.bounds.max.y).max(0.0);
                (dx * dx + dy * dy).sqrt() >= clearance - 1e-9
            });
            if walls && obstacles {
                out.push((x, y));
            }
            j += 1;
        }
        i += 1;
    }
    out
}

/// Empty room in which only the +x wall reflects (beta = 1).
pub fn single_wall_room(extents: Vec3) -> Scene {
    let absorb = Material { id: 0, reflection: 0.0, albedo: [0.5; 3] };
    let mirror = Material { id: 1, reflection: 1.0, albedo: [0.5; 3] };
    let mut s = Scene::shoebox(extents, absorb);
    s.materials.push(mirror);
    s.wall_materials[1] = 1;
    s
}

pub fn scaled_room(extents: Vec3, beta: f64) -> Scene {
    Scene::shoebox(extents, Material { id: 0, reflection: beta, albedo: [0.5; 3] })
}

/// Reflection-only part of the echo: the echo minus the same pose in a
/// fully absorbing room of the same size.
pub fn reflections(scene: &Scene, pose: &AgentPose, cfg: &AcousticsConfig) -> BinauralWaveform {
    let chirp = cfg.chirp().unwrap();
    let full = simulate_echo(scene, pose, &chirp, cfg.clip, cfg).unwrap();
    let dry = simulate_echo(&scaled_room(scene.extents, 0.0), pose, &chirp, cfg.clip, cfg).unwrap();
    BinauralWaveform {
        left: full.left.iter().zip(&dry.left).map(|(a, b)| a - b).collect(),
        right: full.right.iter().zip(&dry.right).map(|(a, b)| a - b).collect(),
        sample_rate: full.sample_rate,
    }
}

/// Lag maximizing the cross-correlation of `signal` with `template`.
pub fn xcorr_peak(signal: &[f64], template: &[f64]) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for lag in 0..signal.len() {
        let mut acc = 0.0;
        for (k, t) in template.iter().enumerate() {
            if lag + k < signal.len() {
                acc += signal[lag + k] * t;
            }
        }
        if acc > best.1 {
            best = (lag, acc);
        }
    }
    best.0
}

/// Echo delay (samples) off a single reflecting wall `d` metres ahead, as
/// measured from the simulated waveform, alongside the analytic 2d/c*sr.
pub fn single_wall_delay(extents: Vec3, d: f64, cfg: &AcousticsConfig) -> (usize, f64) {
    let scene = single_wall_room(extents);
    let pose = AgentPose {
        position: Vec3::new(extents.x - d, extents.y / 2.0, extents.z / 2.0),
        orientation: Orientation::Deg0,
    };
    let r = reflections(&scene, &pose, cfg);
    let chirp = cfg.chirp().unwrap();
    let measured = xcorr_peak(&r.left, &chirp.samples);
    let expected = 2.0 * d / cfg.listener.speed_of_sound * cfg.sample_rate;
    (measured, expected)
}

pub fn energy(w: &BinauralWaveform) -> f64 {
    w.left.iter().chain(&w.right).map(|v| v * v).sum()
}

/// Trains RGB2Depth on a single rendered view for `steps` Adam steps and
/// returns the per-step normalized L1 losses.
pub fn one_sample_losses(steps: usize) -> Vec<f64> {
    use std::sync::Arc;

    use echolab::autodiff::{AdamConfig, Tensor};
    use echolab::models::{build_model, train, LrSchedule, ModelConfig, ModelKind, Sample, Target, TrainConfig};
    use echolab::render::{render_rgbd, Camera};
    use echolab::scene::default_palette;

    let cam = Camera { width: 16, height: 16, ..Camera::default() };
    let mut scene = Scene::shoebox(Vec3::new(4.0, 5.0, 3.0), default_palette()[2]);
    scene.obstacles.push(echolab::scene::Obstacle {
        bounds: Aabb::new(Vec3::new(2.5, 1.5, 0.0), Vec3::new(3.2, 2.6, 1.2)),
        material: 2,
    });
    let pose = AgentPose { position: Vec3::new(1.0, 2.0, 1.5), orientation: Orientation::Deg0 };
    let (rgb, depth) = render_rgbd(&scene, &pose, &cam).unwrap();
    let rgb: Vec<f32> = rgb.data.iter().map(|v| 2.0 * v - 1.0).collect();
    let sample = Sample {
        rgb: Some(Arc::new(Tensor::new(&[3, 16, 16], rgb).unwrap())),
        spec: None,
        target: Target::Depth(Arc::new(Tensor::new(&[1, 16, 16], depth.data).unwrap())),
    };
    let mcfg = ModelConfig { image_height: 16, image_width: 16, ..ModelConfig::default() };
    let mut net = build_model::<f32>(ModelKind::Rgb2Depth, &mcfg, 0).unwrap();
    let cfg = TrainConfig {
        epochs: steps,
        batch_size: 1,
        adam: AdamConfig::default(),
        schedule: LrSchedule::Constant,
    };
    let log = train(&mut net, &cfg, 0, |_, _| Ok(vec![sample.clone()]), &[]).unwrap();
    log.rows.iter().filter(|r| r.split == "train" && r.epoch > 0).map(|r| r.loss).collect()
}

/// Seven nested loops over `[N,C,H,W]` input and `[O,C,K,K]` weights.
pub fn direct_conv(
    x: &[f64],
    xs: [usize; 4],
    w: &[f64],
    o: usize,
    k: usize,
    b: &[f64],
    stride: usize,
    pad: usize,
) -> (Vec<f64>, [usize; 4]) {
    let [n, c, h, wd] = xs;
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (wd + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; n * o * ho * wo];
    for bi in 0..n {
        for oc in 0..o {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = b[oc];
                    for ic in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += x[((bi * c + ic) * h + iy as usize) * wd + ix as usize]
                                    * w[((oc * c + ic) * k + ky) * k + kx];
                            }
                        }
                    }
                    out[((bi * o + oc) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    (out, [n, o, ho, wo])
}
