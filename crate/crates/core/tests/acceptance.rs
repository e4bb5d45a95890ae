//! Acceptance runner: one line per criterion, nonzero exit if any fails.
//!
//! Criteria 1-5 train the full experiment ladder on `configs/acceptance.toml`
//! (roughly an hour on one core). The generated dataset is kept under the
//! cargo target directory and reused while its config is unchanged.

mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_pcg::Pcg32;

use echolab::acoustics::{compute_image_sources, synthesize_binaural_rir, AcousticsConfig, ImageSourceArrival, ListenerModel};
use echolab::autodiff::gradcheck::{layer_suite, randn};
use echolab::autodiff::{ParamStore, Tape};
use echolab::dsp::{fft, stft_magnitude, StftParams};
use echolab::eval::{depth_metrics, normal_metrics, Metrics};
use echolab::geom::Vec3;
use echolab::models::ModelKind;
use echolab::pipeline::blob::encode_checkpoint;
use echolab::pipeline::{gen_dataset, Dataset, ExperimentConfig, ExperimentName, ExperimentReport, Lab, SplitSpec};
use echolab::render::{DepthMap, NormalMap};
use echolab::scene::{AgentPose, Orientation, Span};

use common::{depth_oracle, dft, direct_conv, energy, normal_oracle, one_sample_losses, reflections, scaled_room, single_wall_delay};

type Outcome = Result<String, String>;

fn ensure(ok: bool, pass: String, fail: String) -> Outcome {
    if ok {
        Ok(pass)
    } else {
        Err(fail)
    }
}

fn rel_gain(worse: f64, better: f64) -> f64 {
    (worse - better) / worse
}

fn mean_value(report: &ExperimentReport, condition: &str) -> Result<f64, String> {
    let row = report.row(condition).ok_or_else(|| format!("no mean row for {condition}"))?;
    Ok(match row.metrics {
        Metrics::Depth(d) => d.rms,
        Metrics::Normals(n) => n.mean_deg,
        Metrics::Accuracy { accuracy } => accuracy,
    })
}

struct Ladder {
    case_study: ExperimentReport,
    pretext: ExperimentReport,
    transfer_depth: ExperimentReport,
    transfer_normals: ExperimentReport,
    ablations: ExperimentReport,
}

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn run_ladder() -> Result<Ladder, String> {
    let e = |x: echolab::Error| x.to_string();
    let mut cfg = ExperimentConfig::load(&workspace_root().join("configs/acceptance.toml")).map_err(e)?;
    let base = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    cfg.dataset_dir = base.join("data");
    cfg.output_dir = base.join("runs");

    let reuse = Dataset::open(&cfg.dataset_dir).is_ok_and(|d| d.config.to_toml() == cfg.to_toml());
    if !reuse {
        let _ = fs::remove_dir_all(&cfg.dataset_dir);
        let t = Instant::now();
        eprintln!("[acceptance] generating {} scenes", cfg.scenes);
        gen_dataset(&cfg, &cfg.dataset_dir).map_err(e)?;
        eprintln!("[acceptance] dataset ready in {:.0} s", t.elapsed().as_secs_f64());
    }
    let data = Dataset::open(&cfg.dataset_dir).map_err(e)?;
    let mut lab = Lab::new(&cfg, &data, &cfg.output_dir).map_err(e)?;
    lab.verbose = true;
    let mut run = |name: ExperimentName| {
        let t = Instant::now();
        let r = lab.run(name).map_err(e);
        eprintln!("[acceptance] {} finished in {:.0} s", name.name(), t.elapsed().as_secs_f64());
        r
    };
    Ok(Ladder {
        case_study: run(ExperimentName::CaseStudy)?,
        pretext: run(ExperimentName::Pretext)?,
        transfer_depth: run(ExperimentName::TransferDepth)?,
        transfer_normals: run(ExperimentName::TransferNormals)?,
        ablations: run(ExperimentName::Ablations)?,
    })
}

fn case_study_ordering(l: &Ladder) -> Outcome {
    let r = &l.case_study;
    let names = ["RGB+Echo2Depth", "RGB2Depth", "Echo2Depth", "Average"];
    let v = names.iter().map(|n| mean_value(r, n)).collect::<Result<Vec<_>, _>>()?;
    let gaps: Vec<f64> = (0..3).map(|i| rel_gain(v[i + 1], v[i])).collect();
    let detail = format!(
        "RMS {:.3} < {:.3} < {:.3} < {:.3}, gaps {:.1}% / {:.1}% / {:.1}%",
        v[0], v[1], v[2], v[3], 100.0 * gaps[0], 100.0 * gaps[1], 100.0 * gaps[2]
    );
    ensure(gaps.iter().all(|&g| g > 0.02), detail.clone(), detail)
}

fn pretext_learnability(l: &Ladder) -> Outcome {
    let acc = mean_value(&l.pretext, "VisualEchoes")?;
    let d = format!("test accuracy {:.1}% (chance 25%, need > 40%)", 100.0 * acc);
    ensure(acc > 0.40, d.clone(), d)
}

fn transfer_gain(l: &Ladder) -> Outcome {
    let (s, p) = (mean_value(&l.transfer_depth, "Scratch")?, mean_value(&l.transfer_depth, "VisualEchoes")?);
    let g = rel_gain(s, p);
    let d = format!("RMS scratch {s:.4} vs pretrained {p:.4}, gain {:.2}% (need >= 2%)", 100.0 * g);
    ensure(g >= 0.02, d.clone(), d)
}

fn ablation_ordering(l: &Ladder) -> Outcome {
    let r = &l.ablations;
    let ve = mean_value(r, "VisualEchoes")?;
    let sve = mean_value(r, "SimpleVisualEchoes")?;
    let bm = mean_value(r, "BinaryMatching")?;
    let d = format!("RMS VisualEchoes {ve:.4}, SimpleVisualEchoes {sve:.4}, BinaryMatching {bm:.4}");
    ensure(ve <= sve && ve <= bm, d.clone(), d)
}

fn normal_transfer(l: &Ladder) -> Outcome {
    let (s, p) = (mean_value(&l.transfer_normals, "Scratch")?, mean_value(&l.transfer_normals, "VisualEchoes")?);
    let g = rel_gain(s, p);
    let d = format!("mean angle scratch {s:.2} deg vs pretrained {p:.2} deg, gain {:.2}% (need >= 2%)", 100.0 * g);
    ensure(g >= 0.02, d.clone(), d)
}

fn acoustics_suite() -> Outcome {
    let cfg = AcousticsConfig::default();
    let mut rng = Pcg32::seed_from_u64(6);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let ext = Vec3::new(rng.random_range(4.0..8.0), rng.random_range(3.0..8.0), rng.random_range(2.4..3.5));
        let d = rng.random_range(1.0..3.5);
        let (m, want) = single_wall_delay(ext, d, &cfg);
        worst = worst.max((m as f64 - want).abs());
    }
    if worst > 1.0 {
        return Err(format!("single-wall delay off by {worst:.2} samples"));
    }

    let listener = ListenerModel::default();
    let pose = AgentPose { position: Vec3::new(2.0, 2.5, 1.5), orientation: Orientation::Deg180 };
    let mut gain_err = 0.0f64;
    let mut delay_err = 0.0f64;
    for _ in 0..10 {
        let src = Vec3::new(rng.random_range(0.5..5.0), rng.random_range(0.5..5.0), rng.random_range(0.5..2.5));
        let arr = ImageSourceArrival { virtual_position: src, order: 0, amplitude: 1.0 };
        let rir = synthesize_binaural_rir(&[arr], &listener, &pose, cfg.sample_rate, 2048);
        for (buf, axis) in [(&rir.left, -pose.orientation.right()), (&rir.right, pose.orientation.right())] {
            let ear = pose.position + axis * listener.head_radius;
            let r = src.distance(ear);
            let cos = (src - ear).normalized().dot(axis);
            let gain = (listener.shadow_floor + (1.0 - listener.shadow_floor) * (1.0 + cos) / 2.0) / r;
            let delay = r / listener.speed_of_sound * cfg.sample_rate;
            let total: f64 = buf.iter().sum();
            let centroid = buf.iter().enumerate().map(|(k, v)| k as f64 * v).sum::<f64>() / total;
            gain_err = gain_err.max((total - gain).abs());
            delay_err = delay_err.max((centroid - delay).abs());
        }
    }
    if gain_err > 1e-6 || delay_err > 1e-6 {
        return Err(format!("free-field gain error {gain_err:.2e}, delay error {delay_err:.2e}"));
    }

    let room = scaled_room(Vec3::new(4.0, 5.0, 3.0), 0.9);
    let p = Vec3::new(1.3, 2.2, 1.5);
    let count = compute_image_sources(&room, p, &[p], 1).map_err(|e| e.to_string())?.len();
    if count != 7 {
        return Err(format!("order-1 arrival count {count}"));
    }

    let pose = AgentPose { position: Vec3::new(1.7, 2.2, 1.5), orientation: Orientation::Deg0 };
    let mut prev = f64::INFINITY;
    for beta in [1.0, 0.8, 0.6, 0.4, 0.2, 0.0] {
        let en = energy(&reflections(&scaled_room(Vec3::new(4.5, 5.5, 2.8), beta), &pose, &cfg));
        if en > prev + 1e-12 {
            return Err(format!("reflected energy rose to {en} at beta {beta}"));
        }
        prev = en;
    }
    Ok(format!(
        "worst single-wall error {worst:.2} samples, free-field gain {gain_err:.1e} delay {delay_err:.1e}, 7 order-1 arrivals, energy monotone in beta"
    ))
}

fn dsp_suite() -> Outcome {
    let mut rng = Pcg32::seed_from_u64(7);
    let mut fft_err = 0.0f64;
    for n in [1usize, 2, 4, 8, 16, 32, 64] {
        let x: Vec<Complex64> =
            (0..n).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        let a = fft(&x).map_err(|e| e.to_string())?;
        let b = dft(&x);
        fft_err = a.iter().zip(&b).map(|(p, q)| (p - q).norm()).fold(fft_err, f64::max);
    }
    if fft_err > 1e-10 {
        return Err(format!("FFT vs DFT error {fft_err:.2e}"));
    }
    for _ in 0..200 {
        let win = rng.random_range(1..300usize);
        let p = StftParams { win, hop: rng.random_range(1..100), nfft: win.next_power_of_two() };
        let n = rng.random_range(win..3000);
        let want = (n - win) / p.hop + 1;
        let got = stft_magnitude(&vec![0.5; n], &p).map_err(|e| e.to_string())?[0].len();
        if p.frames(n) != want || got != want {
            return Err(format!("frames for n={n} {p:?}: {got} vs {want}"));
        }
    }
    let mut parseval = 0.0f64;
    for n in [8usize, 256, 4096] {
        let x: Vec<Complex64> =
            (0..n).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        let time: f64 = x.iter().map(|v| v.norm_sqr()).sum();
        let freq = fft(&x).map_err(|e| e.to_string())?.iter().map(|v| v.norm_sqr()).sum::<f64>() / n as f64;
        parseval = parseval.max((time - freq).abs() / time);
    }
    ensure(
        parseval <= 1e-9,
        format!("FFT vs DFT {fft_err:.1e}, 200 frame counts exact, Parseval {parseval:.1e}"),
        format!("Parseval relative error {parseval:.2e}"),
    )
}

fn autodiff_suite() -> Outcome {
    let reports = layer_suite(0).map_err(|e| e.to_string())?;
    let worst = reports.iter().max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error)).ok_or("no layers")?;
    if worst.max_rel_error >= 1e-4 {
        return Err(format!("{} gradient rel error {:.2e}", worst.name, worst.max_rel_error));
    }

    let mut rng = Pcg32::seed_from_u64(8);
    let mut conv_err = 0.0f64;
    for (k, stride, pad, h) in [(3, 1, 1, 9), (4, 2, 1, 8), (3, 2, 0, 11), (1, 1, 0, 5)] {
        let x = randn(&[2, 3, h, h + 2], &mut rng);
        let w = randn(&[5, 3, k, k], &mut rng);
        let b = randn(&[5], &mut rng);
        let store = ParamStore::<f64>::new();
        let mut tape = Tape::new(&store);
        let (xv, wv, bv) = (tape.input(x.clone()), tape.input(w.clone()), tape.input(b.clone()));
        let y = tape.conv2d(xv, wv, bv, stride, pad).map_err(|e| e.to_string())?;
        let (want, shape) = direct_conv(x.data(), [2, 3, h, h + 2], w.data(), 5, k, b.data(), stride, pad);
        if tape.value(y).shape() != shape {
            return Err(format!("conv output shape {:?} vs {shape:?}", tape.value(y).shape()));
        }
        conv_err = tape.value(y).data().iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(conv_err, f64::max);
    }
    if conv_err > 1e-5 {
        return Err(format!("conv vs direct loops error {conv_err:.2e}"));
    }

    let losses = one_sample_losses(2000);
    let hit = losses.iter().position(|&l| l < 0.01);
    let best = losses.iter().cloned().fold(f64::INFINITY, f64::min);
    match hit {
        Some(step) => Ok(format!(
            "{} layers within {:.1e} (worst {}), conv error {conv_err:.1e}, one-sample L1 < 0.01 after {} steps",
            reports.len(),
            worst.max_rel_error,
            worst.name,
            step + 1
        )),
        None => Err(format!("one-sample L1 only reached {best:.4} in 2000 steps")),
    }
}

fn metric_fixtures() -> Outcome {
    let mut rng = Pcg32::seed_from_u64(9);
    let depth = |rng: &mut Pcg32| DepthMap {
        width: 4,
        height: 4,
        data: (0..16).map(|_| rng.random_range(0.3f32..6.0)).collect(),
    };
    let gt = vec![depth(&mut rng), depth(&mut rng)];
    let m = depth_metrics(&gt, &gt).map_err(|e| e.to_string())?;
    if (m.rms, m.rel, m.log10, m.delta1, m.delta2, m.delta3) != (0.0, 0.0, 0.0, 1.0, 1.0, 1.0) {
        return Err(format!("depth identity gave {m:?}"));
    }
    let scaled: Vec<DepthMap> =
        gt.iter().map(|g| DepthMap { data: g.data.iter().map(|v| v * 1.3).collect(), ..g.clone() }).collect();
    let m = depth_metrics(&scaled, &gt).map_err(|e| e.to_string())?;
    if (m.rel - 0.3).abs() > 1e-6 || (m.delta1, m.delta2, m.delta3) != (0.0, 1.0, 1.0) {
        return Err(format!("x1.3 scaling gave {m:?}"));
    }
    for _ in 0..10 {
        let (p, g) = (vec![depth(&mut rng)], vec![depth(&mut rng)]);
        let (m, o) = (depth_metrics(&p, &g).map_err(|e| e.to_string())?, depth_oracle(&p, &g));
        let err = [(m.rms, o.rms), (m.rel, o.rel), (m.log10, o.log10)].iter().map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if err > 1e-7 || [m.delta1, m.delta2, m.delta3] != o.delta {
            return Err(format!("depth fixture off by {err:.2e}"));
        }
    }

    let unit = |rng: &mut Pcg32| loop {
        let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        if v.norm() > 0.2 && v.norm() < 1.0 {
            break v.normalized();
        }
    };
    let to_map = |vs: &[Vec3]| {
        let n = vs.len();
        let mut data = vec![0f32; 3 * n];
        for (i, v) in vs.iter().enumerate() {
            data[i] = v.x as f32;
            data[n + i] = v.y as f32;
            data[2 * n + i] = v.z as f32;
        }
        NormalMap { width: n, height: 1, data, valid: vec![true; n] }
    };
    let g: Vec<Vec3> = (0..16).map(|_| unit(&mut rng)).collect();
    let m = normal_metrics(&[to_map(&g)], &[to_map(&g)]).map_err(|e| e.to_string())?;
    if (m.mean_deg, m.median_deg, m.pct_11_25, m.pct_22_5, m.pct_30) != (0.0, 0.0, 1.0, 1.0, 1.0) {
        return Err(format!("normal identity gave {m:?}"));
    }
    let t = 20f64.to_radians();
    let rotated: Vec<Vec3> = g
        .iter()
        .map(|&v| {
            let k = v.cross(unit(&mut rng)).normalized();
            v * t.cos() + k.cross(v) * t.sin()
        })
        .collect();
    let m = normal_metrics(&[to_map(&rotated)], &[to_map(&g)]).map_err(|e| e.to_string())?;
    if (m.mean_deg - 20.0).abs() > 1e-3 || (m.pct_11_25, m.pct_22_5, m.pct_30) != (0.0, 1.0, 1.0) {
        return Err(format!("20 degree rotation gave {m:?}"));
    }
    for _ in 0..10 {
        let p: Vec<Vec3> = (0..16).map(|_| unit(&mut rng)).collect();
        let q: Vec<Vec3> = (0..16).map(|_| unit(&mut rng)).collect();
        let (pm, qm) = ([to_map(&p)], [to_map(&q)]);
        let (m, o) = (normal_metrics(&pm, &qm).map_err(|e| e.to_string())?, normal_oracle(&pm, &qm));
        if (m.mean_deg - o.mean).abs() > 1e-6 || (m.median_deg - o.median).abs() > 1e-6 || [m.pct_11_25, m.pct_22_5, m.pct_30] != o.pct {
            return Err("normal fixture disagrees with the scalar oracle".into());
        }
    }
    Ok("identity, x1.3 scaling, 20 degree rotation and 20 random fixtures match".into())
}

fn small_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.scenes = 4;
    cfg.seeds = vec![0];
    cfg.scene_gen.room_x = Span(3.0, 4.5);
    cfg.scene_gen.room_y = Span(3.0, 4.5);
    cfg.grid.spacing = 1.0;
    cfg.camera.width = 16;
    cfg.camera.height = 16;
    cfg.split = SplitSpec { train: 2, val: 1, test: 1 };
    cfg.train.epochs_downstream = 2;
    cfg
}

fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Outcome {
    let e = |x: echolab::Error| x.to_string();
    let cfg = small_config();
    let tmp = tempfile::tempdir().map_err(|x| x.to_string())?;
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    gen_dataset(&cfg, &a).map_err(e)?;
    gen_dataset(&cfg, &b).map_err(e)?;
    let (ta, tb) = (tree(&a), tree(&b));
    if ta != tb {
        return Err("two dataset generations differ".into());
    }
    let data = Dataset::open(&a).map_err(e)?;
    let lab = Lab::new(&cfg, &data, &tmp.path().join("out")).map_err(e)?;
    let mut ckpts = Vec::new();
    for run in 0..2 {
        let path = tmp.path().join(format!("run{run}.veck"));
        lab.train_model(ModelKind::Rgb2Depth, 5, None, &path).map_err(e)?;
        ckpts.push(fs::read(&path).map_err(|x| x.to_string())?);
    }
    let t = lab.train_model(ModelKind::Rgb2Depth, 5, None, &tmp.path().join("run2.veck")).map_err(e)?;
    if encode_checkpoint(&t.net.params.to_named()) != ckpts[0] {
        return Err("written checkpoint does not match the trained weights".into());
    }
    ensure(
        ckpts[0] == ckpts[1],
        format!("{} dataset files byte-identical, two trainings give identical checkpoints", ta.len()),
        "two trainings with one seed gave different checkpoints".into(),
    )
}

fn main() -> ExitCode {
    let mut failed = 0;
    let mut report = |n: usize, name: &str, outcome: Outcome| {
        match &outcome {
            Ok(d) => println!("criterion {n:>2} PASS  {name}: {d}"),
            Err(d) => {
                failed += 1;
                println!("criterion {n:>2} FAIL  {name}: {d}")
            }
        }
    };
    let quick: [(usize, &str, fn() -> Outcome); 5] = [
        (6, "acoustics oracles", acoustics_suite),
        (7, "dsp oracles", dsp_suite),
        (8, "autodiff", autodiff_suite),
        (9, "metric fixtures", metric_fixtures),
        (10, "determinism", determinism),
    ];
    for (n, name, f) in quick {
        let t = Instant::now();
        let r = f();
        eprintln!("[acceptance] criterion {n} took {:.1} s", t.elapsed().as_secs_f64());
        report(n, name, r);
    }

    let t = Instant::now();
    let ladder = run_ladder();
    eprintln!("[acceptance] experiment ladder took {:.0} s", t.elapsed().as_secs_f64());
    let checks: [(usize, &str, fn(&Ladder) -> Outcome); 5] = [
        (1, "case-study ordering", case_study_ordering),
        (2, "pretext learnability", pretext_learnability),
        (3, "depth transfer gain", transfer_gain),
        (4, "ablation ordering", ablation_ordering),
        (5, "normal transfer gain", normal_transfer),
    ];
    for (n, name, f) in checks {
        let r = match &ladder {
            Ok(l) => f(l),
            Err(e) => Err(format!("experiments failed: {e}")),
        };
        report(n, name, r);
    }
    if failed == 0 {
        println!("acceptance: all 10 criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failed} of 10 criteria fail");
        ExitCode::FAILURE
    }
}
