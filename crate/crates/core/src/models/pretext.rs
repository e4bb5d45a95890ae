use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::scene::Orientation;

/// How far the echo's orientation is turned from the view's, clockwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OrientationOffset {
    Same = 0,
    Right = 1,
    Opposite = 2,
    Left = 3,
}

impl OrientationOffset {
    pub const ALL: [OrientationOffset; 4] = [
        OrientationOffset::Same,
        OrientationOffset::Right,
        OrientationOffset::Opposite,
        OrientationOffset::Left,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn between(view: Orientation, echo: Orientation) -> Self {
        Self::ALL[(echo.index() + 4 - view.index()) % 4]
    }

    pub fn echo_orientation(self, view: Orientation) -> Orientation {
        Orientation::from_index((view.index() + self.index()) % 4)
    }

    pub fn sample(rng: &mut impl Rng) -> Self {
        Self::ALL[rng.random_range(0..4)]
    }
}

/// Binary matching label: 0 when view and echo come from the same place.
pub fn match_label(same: bool) -> usize {
    if same {
        0
    } else {
        1
    }
}

/// Views and spectrograms of one position, indexed by orientation.
#[derive(Debug, Clone, Default)]
pub struct PoseGroup {
    pub scene: usize,
    pub position: usize,
    pub rgb: [Option<Arc<Tensor<f32>>>; 4],
    pub spec: [Option<Arc<Tensor<f32>>>; 4],
}

impl PoseGroup {
    pub fn rgb_at(&self, o: Orientation) -> Result<Arc<Tensor<f32>>> {
        self.rgb[o.index()].clone().ok_or_else(|| self.missing("rgb", o))
    }

    pub fn spec_at(&self, o: Orientation) -> Result<Arc<Tensor<f32>>> {
        self.spec[o.index()].clone().ok_or_else(|| self.missing("echo", o))
    }

    fn missing(&self, what: &str, o: Orientation) -> Error {
        Error::Dataset(format!(
            "scene {} position {}: no {what} record for orientation {}",
            self.scene,
            self.position,
            o.azimuth_deg()
        ))
    }
}

#[derive(Debug, Clone)]
pub struct PretextSample {
    pub rgb: Arc<Tensor<f32>>,
    pub spec: Arc<Tensor<f32>>,
    pub offset: OrientationOffset,
}

/// The view at `view` paired with the echo heard after turning by `offset`
/// (drawn uniformly when `None`).
pub fn make_pretext_sample(
    group: &PoseGroup,
    view: Orientation,
    offset: Option<OrientationOffset>,
    rng: &mut impl Rng,
) -> Result<PretextSample> {
    let offset = offset.unwrap_or_else(|| OrientationOffset::sample(rng));
    Ok(PretextSample {
        rgb: group.rgb_at(view)?,
        spec: group.spec_at(offset.echo_orientation(view))?,
        offset,
    })
}
