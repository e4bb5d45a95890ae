//! Binaural echoes of a chirp emitted at the listener's head.
//!
//! Specular reflections off the six room walls come from the image-source
//! expansion of the shoebox. Obstacles do not reflect; they only remove
//! arrivals whose final straight leg to an ear passes through them. Each ear
//! receives every surviving arrival with a spherical-spreading gain, a
//! fractional propagation delay and a cardioid-like head-shadow gain.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::dsp::convolve_fft;
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::scene::{AgentPose, Scene, Wall};

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinauralWaveform {
    pub left: Vec<f64>,
    pub right: Vec<f64>,
    pub sample_rate: f64,
}

impl BinauralWaveform {
    pub fn zeros(len: usize, sample_rate: f64) -> Self {
        BinauralWaveform {
            left: vec![0.0; len],
            right: vec![0.0; len],
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.left.len()
    }

    pub fn is_empty(&self) -> bool {
        self.left.is_empty()
    }

    pub fn channel(&self, ear: Ear) -> &[f64] {
        match ear {
            Ear::Left => &self.left,
            Ear::Right => &self.right,
        }
    }
}

/// Linear sweep `sin(2 pi (f0 t + (f1 - f0) t^2 / 2T))`.
pub fn make_chirp(f0: f64, f1: f64, duration: f64, sample_rate: f64) -> Result<Waveform> {
    let nyquist = sample_rate / 2.0;
    if f1 >= nyquist {
        return Err(Error::Aliasing { f1, nyquist });
    }
    if !(f0 > 0.0 && f0 < f1 && duration > 0.0) {
        return Err(Error::Signal(format!(
            "chirp needs 0 < f0 < f1 and duration > 0, got f0={f0}, f1={f1}, T={duration}"
        )));
    }
    let len = (duration * sample_rate).round() as usize;
    let samples = (0..len)
        .map(|k| {
            let t = k as f64 / sample_rate;
            (2.0 * PI * (f0 * t + (f1 - f0) * t * t / (2.0 * duration))).sin()
        })
        .collect();
    Ok(Waveform { samples, sample_rate })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageSourceArrival {
    pub virtual_position: Vec3,
    pub order: u32,
    /// Product of the reflection coefficients of every wall on the path.
    pub amplitude: f64,
}

/// Image coordinate along one axis for lattice index `i`, and how many
/// reflections off the low and high walls it takes.
fn mirror(i: i64, extent: f64, src: f64) -> (f64, u32, u32) {
    let pos = if i % 2 == 0 {
        i as f64 * extent + src
    } else {
        i as f64 * extent + (extent - src)
    };
    let n = i.unsigned_abs() as u32;
    let (major, minor) = (n.div_ceil(2), n / 2);
    // positive indices hit the high wall first
    if i >= 0 {
        (pos, minor, major)
    } else {
        (pos, major, minor)
    }
}

/// Image sources up to `max_order` reflections, minus any whose straight
/// path to one of `receivers` crosses an obstacle. Sorted by order, then
/// lexicographically by position.
pub fn compute_image_sources(
    scene: &Scene,
    source: Vec3,
    receivers: &[Vec3],
    max_order: i64,
) -> Result<Vec<ImageSourceArrival>> {
    if max_order < 0 {
        return Err(Error::Config(format!("max_order must be >= 0, got {max_order}")));
    }
    let e = scene.extents;
    if !(0..3).all(|a| source[a] > 0.0 && source[a] < e[a]) {
        return Err(Error::Geometry(format!("source {source:?} is not strictly inside the room")));
    }
    let beta = |axis: usize, high: bool| scene.wall_material(Wall::on(axis, high)).reflection;
    let n = max_order;
    let mut out = Vec::new();
    for i in -n..=n {
        let (x, xl, xh) = mirror(i, e.x, source.x);
        for j in -(n - i.abs())..=(n - i.abs()) {
            let (y, yl, yh) = mirror(j, e.y, source.y);
            let rest = n - i.abs() - j.abs();
            for k in -rest..=rest {
                let (z, zl, zh) = mirror(k, e.z, source.z);
                let amplitude = beta(0, false).powi(xl as i32)
                    * beta(0, true).powi(xh as i32)
                    * beta(1, false).powi(yl as i32)
                    * beta(1, true).powi(yh as i32)
                    * beta(2, false).powi(zl as i32)
                    * beta(2, true).powi(zh as i32);
                let virtual_position = Vec3::new(x, y, z);
                let occluded = receivers.iter().any(|&ear| {
                    scene
                        .obstacles
                        .iter()
                        .any(|o| o.bounds.blocks_segment(virtual_position, ear))
                });
                if !occluded {
                    out.push(ImageSourceArrival {
                        virtual_position,
                        order: (i.abs() + j.abs() + k.abs()) as u32,
                        amplitude,
                    });
                }
            }
        }
    }
    out.sort_by(|a, b| {
        a.order.cmp(&b.order).then_with(|| {
            let (p, q) = (a.virtual_position, b.virtual_position);
            p.x.total_cmp(&q.x)
                .then(p.y.total_cmp(&q.y))
                .then(p.z.total_cmp(&q.z))
        })
    });
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ear {
    Left,
    Right,
}

/// Two point ears on a rigid head with an analytic shadow term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ListenerModel {
    pub head_radius: f64,
    /// Gain for sound arriving from directly opposite an ear.
    pub shadow_floor: f64,
    pub speed_of_sound: f64,
}

impl Default for ListenerModel {
    fn default() -> Self {
        ListenerModel {
            head_radius: 0.0875,
            shadow_floor: 0.6,
            speed_of_sound: 343.0,
        }
    }
}

impl ListenerModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.head_radius > 0.0) || !(self.shadow_floor > 0.0 && self.shadow_floor <= 1.0) || !(self.speed_of_sound > 0.0) {
            return Err(Error::Config(format!("invalid listener model {self:?}")));
        }
        Ok(())
    }

    /// Ear position and outward axis.
    pub fn ear(&self, pose: &AgentPose, ear: Ear) -> (Vec3, Vec3) {
        let right = pose.orientation.right();
        let axis = match ear {
            Ear::Left => -right,
            Ear::Right => right,
        };
        (pose.position + axis * self.head_radius, axis)
    }

    pub fn ears(&self, pose: &AgentPose) -> [Vec3; 2] {
        [self.ear(pose, Ear::Left).0, self.ear(pose, Ear::Right).0]
    }

    /// Shadow gain for an arrival whose direction makes cosine `cos_phi` with the ear axis.
    pub fn shadow(&self, cos_phi: f64) -> f64 {
        self.shadow_floor + (1.0 - self.shadow_floor) * (1.0 + cos_phi) / 2.0
    }

    /// (delay in samples, gain) of one arrival at one ear.
    pub fn response(&self, arrival: &ImageSourceArrival, pose: &AgentPose, ear: Ear, sample_rate: f64) -> (f64, f64) {
        let (pos, axis) = self.ear(pose, ear);
        let offset = arrival.virtual_position - pos;
        let r = offset.norm().max(self.head_radius);
        let cos_phi = if offset.norm() > 0.0 { offset.normalized().dot(axis) } else { 0.0 };
        let delay = r / self.speed_of_sound * sample_rate;
        (delay, arrival.amplitude / r * self.shadow(cos_phi))
    }
}

/// Stereo impulse response with linear-interpolation fractional delays.
pub fn synthesize_binaural_rir(
    arrivals: &[ImageSourceArrival],
    listener: &ListenerModel,
    pose: &AgentPose,
    sample_rate: f64,
    length: usize,
) -> BinauralWaveform {
    let mut out = BinauralWaveform::zeros(length, sample_rate);
    for arrival in arrivals {
        for ear in [Ear::Left, Ear::Right] {
            let (delay, gain) = listener.response(arrival, pose, ear, sample_rate);
            let buf = match ear {
                Ear::Left => &mut out.left,
                Ear::Right => &mut out.right,
            };
            let base = delay.floor();
            let frac = delay - base;
            let i = base as usize;
            if i < length {
                buf[i] += gain * (1.0 - frac);
            }
            if i + 1 < length {
                buf[i + 1] += gain * frac;
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcousticsConfig {
    pub sample_rate: f64,
    pub chirp_f0: f64,
    pub chirp_f1: f64,
    pub chirp_duration: f64,
    /// Length of the received clip, measured from emission.
    pub clip: f64,
    pub max_order: i64,
    pub listener: ListenerModel,
}

impl Default for AcousticsConfig {
    fn default() -> Self {
        AcousticsConfig {
            sample_rate: 44100.0,
            chirp_f0: 20.0,
            chirp_f1: 20000.0,
            chirp_duration: 0.003,
            clip: 0.060,
            max_order: 3,
            listener: ListenerModel::default(),
        }
    }
}

impl AcousticsConfig {
    pub fn validate(&self) -> Result<()> {
        self.listener.validate()?;
        if self.max_order < 0 || !(self.clip > 0.0) {
            return Err(Error::Config("max_order must be >= 0 and clip > 0".into()));
        }
        self.chirp().map(|_| ())
    }

    pub fn chirp(&self) -> Result<Waveform> {
        make_chirp(self.chirp_f0, self.chirp_f1, self.chirp_duration, self.sample_rate)
    }

    pub fn clip_samples(&self) -> usize {
        (self.clip * self.sample_rate).round() as usize
    }
}

/// Echo heard at `pose` after emitting `chirp` from the head centre.
pub fn simulate_echo(
    scene: &Scene,
    pose: &AgentPose,
    chirp: &Waveform,
    clip: f64,
    cfg: &AcousticsConfig,
) -> Result<BinauralWaveform> {
    let sr = chirp.sample_rate;
    let len = (clip * sr).round() as usize;
    let ears = cfg.listener.ears(pose);
    let arrivals = compute_image_sources(scene, pose.position, &ears, cfg.max_order)?;
    let rir = synthesize_binaural_rir(&arrivals, &cfg.listener, pose, sr, len);
    let render = |ch: &[f64]| {
        let mut y = convolve_fft(ch, &chirp.samples);
        y.truncate(len);
        y
    };
    Ok(BinauralWaveform {
        left: render(&rir.left),
        right: render(&rir.right),
        sample_rate: sr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{default_palette, Material, Orientation};

    fn shoebox(beta: f64) -> Scene {
        let m = Material { id: 0, reflection: beta, albedo: [0.5; 3] };
        Scene::shoebox(Vec3::new(4.0, 5.0, 3.0), m)
    }

    #[test]
    fn chirp_length_and_start() {
        let c = make_chirp(20.0, 20000.0, 0.003, 44100.0).unwrap();
        assert_eq!(c.samples.len(), 132);
        assert_eq!(c.samples[0], 0.0);
    }

    #[test]
    fn chirp_above_nyquist_is_rejected() {
        assert!(matches!(
            make_chirp(20.0, 22050.0, 0.003, 44100.0),
            Err(Error::Aliasing { .. })
        ));
    }

    #[test]
    fn arrival_counts() {
        let s = shoebox(0.9);
        let src = Vec3::new(1.0, 2.0, 1.5);
        assert_eq!(compute_image_sources(&s, src, &[], 1).unwrap().len(), 7);
        let zero = compute_image_sources(&s, src, &[], 0).unwrap();
        assert_eq!(zero.len(), 1);
        assert_eq!(zero[0].virtual_position, src);
        assert_eq!(zero[0].order, 0);
        // octahedral lattice sizes 1, 7, 25, 63
        assert_eq!(compute_image_sources(&s, src, &[], 2).unwrap().len(), 25);
        assert_eq!(compute_image_sources(&s, src, &[], 3).unwrap().len(), 63);
        assert!(compute_image_sources(&s, src, &[], -1).is_err());
    }

    #[test]
    fn absorbing_walls_silence_reflections() {
        let s = shoebox(0.0);
        let arr = compute_image_sources(&s, Vec3::new(1.0, 2.0, 1.5), &[], 3).unwrap();
        for a in arr {
            assert_eq!(a.amplitude, if a.order == 0 { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn first_order_images_mirror_walls() {
        let s = shoebox(0.5);
        let arr = compute_image_sources(&s, Vec3::new(1.0, 2.0, 1.5), &[], 1).unwrap();
        let xs: Vec<f64> = arr.iter().filter(|a| a.virtual_position.y == 2.0 && a.virtual_position.z == 1.5).map(|a| a.virtual_position.x).collect();
        assert_eq!(xs, vec![1.0, -1.0, 7.0]);
        assert!(arr[1..].iter().all(|a| a.amplitude == 0.5 && a.order == 1));
    }

    #[test]
    fn frontal_arrival_is_symmetric() {
        let l = ListenerModel::default();
        let pose = AgentPose { position: Vec3::new(2.0, 2.0, 1.5), orientation: Orientation::Deg0 };
        let a = ImageSourceArrival { virtual_position: Vec3::new(5.0, 2.0, 1.5), order: 1, amplitude: 1.0 };
        let (dl, gl) = l.response(&a, &pose, Ear::Left, 44100.0);
        let (dr, gr) = l.response(&a, &pose, Ear::Right, 44100.0);
        assert!((dl - dr).abs() < 1e-12 && (gl - gr).abs() < 1e-12);
    }

    #[test]
    fn lateral_arrival_favours_near_ear() {
        let l = ListenerModel::default();
        let pose = AgentPose { position: Vec3::new(2.0, 2.0, 1.5), orientation: Orientation::Deg0 };
        let a = ImageSourceArrival {
            virtual_position: pose.position + pose.orientation.right() * 3.0,
            order: 1,
            amplitude: 1.0,
        };
        let (dl, gl) = l.response(&a, &pose, Ear::Left, 44100.0);
        let (dr, gr) = l.response(&a, &pose, Ear::Right, 44100.0);
        assert!(dr < dl);
        assert!(gr > gl);
    }

    #[test]
    fn echo_clip_length() {
        let cfg = AcousticsConfig::default();
        let chirp = cfg.chirp().unwrap();
        let scene = Scene::shoebox(Vec3::new(4.0, 5.0, 3.0), default_palette()[0]);
        let pose = AgentPose { position: Vec3::new(1.5, 2.0, 1.5), orientation: Orientation::Deg0 };
        let echo = simulate_echo(&scene, &pose, &chirp, cfg.clip, &cfg).unwrap();
        assert_eq!(echo.left.len(), 2646);
        assert_eq!(echo.right.len(), 2646);
    }
}
