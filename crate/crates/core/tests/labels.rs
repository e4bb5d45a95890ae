use std::sync::Arc;

use rand::SeedableRng;
use rand_pcg::Pcg32;

use echolab::autodiff::Tensor;
use echolab::models::{make_pretext_sample, OrientationOffset, PoseGroup};
use echolab::scene::Orientation;

fn tagged_group() -> PoseGroup {
    PoseGroup {
        scene: 0,
        position: 0,
        rgb: std::array::from_fn(|i| Some(Arc::new(Tensor::full(&[1], i as f32)))),
        spec: std::array::from_fn(|i| Some(Arc::new(Tensor::full(&[1], 10.0 + i as f32)))),
    }
}

#[test]
fn label_depends_only_on_relative_turn() {
    for view in Orientation::ALL {
        for echo in Orientation::ALL {
            let label = OrientationOffset::between(view, echo);
            let turned = OrientationOffset::between(
                Orientation::from_index(view.index() + 1),
                Orientation::from_index(echo.index() + 1),
            );
            assert_eq!(label, turned, "view {view:?} echo {echo:?}");
            assert_eq!(label.index(), (echo.index() + 4 - view.index()) % 4);
            assert_eq!(label.echo_orientation(view), echo);
        }
    }
}

#[test]
fn sample_pairs_view_with_turned_echo() {
    let g = tagged_group();
    let mut rng = Pcg32::seed_from_u64(0);
    for view in Orientation::ALL {
        for off in OrientationOffset::ALL {
            let s = make_pretext_sample(&g, view, Some(off), &mut rng).unwrap();
            assert_eq!(s.rgb.data()[0] as usize, view.index());
            assert_eq!(s.spec.data()[0] as usize - 10, (view.index() + off.index()) % 4);
            assert_eq!(s.offset, off);
        }
    }
}

#[test]
fn missing_echo_is_an_error() {
    let mut g = tagged_group();
    g.spec[2] = None;
    let mut rng = Pcg32::seed_from_u64(0);
    assert!(make_pretext_sample(&g, Orientation::Deg0, Some(OrientationOffset::Opposite), &mut rng).is_err());
}

#[test]
fn drawn_offsets_are_uniform() {
    let g = tagged_group();
    let mut rng = Pcg32::seed_from_u64(42);
    let mut counts = [0usize; 4];
    let n = 10_000;
    for k in 0..n {
        let s = make_pretext_sample(&g, Orientation::from_index(k), None, &mut rng).unwrap();
        counts[s.offset.index()] += 1;
    }
    for c in counts {
        let frac = c as f64 / n as f64;
        assert!((frac - 0.25).abs() <= 0.02, "{counts:?}");
    }
}
