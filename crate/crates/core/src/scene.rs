//! Procedural shoebox rooms and the grid of agent poses inside them.

use rand::{Rng, SeedableRng};
use rand_pcg::Pcg32;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Aabb, Vec3};

/// Surface material: acoustic amplitude reflection coefficient and diffuse colour.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub id: u8,
    pub reflection: f64,
    pub albedo: [f64; 3],
}

impl Material {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        if !in_unit(self.reflection) || !self.albedo.iter().all(|&a| in_unit(a)) {
            return Err(Error::Config(format!(
                "material {} has reflection/albedo outside [0, 1]",
                self.id
            )));
        }
        Ok(())
    }
}

/// Wall slots in `Scene::wall_materials`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Wall {
    MinX = 0,
    MaxX = 1,
    MinY = 2,
    MaxY = 3,
    Floor = 4,
    Ceiling = 5,
}

impl Wall {
    /// Wall on the `axis` side given by `high`.
    pub fn on(axis: usize, high: bool) -> Wall {
        match (axis, high) {
            (0, false) => Wall::MinX,
            (0, true) => Wall::MaxX,
            (1, false) => Wall::MinY,
            (1, true) => Wall::MaxY,
            (2, false) => Wall::Floor,
            _ => Wall::Ceiling,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub bounds: Aabb,
    pub material: u8,
}

/// A shoebox room spanning `[0, extents]` with box obstacles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub extents: Vec3,
    pub materials: Vec<Material>,
    /// Material ids for -x, +x, -y, +y, floor, ceiling.
    pub wall_materials: [u8; 6],
    pub obstacles: Vec<Obstacle>,
    pub seed: u64,
}

impl Scene {
    /// Empty room with one material on every wall.
    pub fn shoebox(extents: Vec3, material: Material) -> Scene {
        Scene {
            extents,
            materials: vec![material],
            wall_materials: [material.id; 6],
            obstacles: Vec::new(),
            seed: 0,
        }
    }

    pub fn material(&self, id: u8) -> &Material {
        self.materials
            .iter()
            .find(|m| m.id == id)
            .expect("material id resolved by Scene::validate")
    }

    pub fn wall_material(&self, wall: Wall) -> &Material {
        self.material(self.wall_materials[wall as usize])
    }

    pub fn bounds(&self) -> Aabb {
        Aabb::new(Vec3::ZERO, self.extents)
    }

    pub fn validate(&self) -> Result<()> {
        let e = self.extents;
        if !(e.x > 0.0 && e.y > 0.0 && e.z > 0.0) {
            return Err(Error::Geometry(format!("room extents must be positive, got {e:?}")));
        }
        for m in &self.materials {
            m.validate()?;
        }
        let known = |id: u8| self.materials.iter().any(|m| m.id == id);
        if let Some(id) = self.wall_materials.iter().find(|&&id| !known(id)) {
            return Err(Error::Geometry(format!("unknown wall material {id}")));
        }
        for (i, o) in self.obstacles.iter().enumerate() {
            if !known(o.material) {
                return Err(Error::Geometry(format!("obstacle {i}: unknown material {}", o.material)));
            }
            let b = o.bounds;
            let inside = b.min.x > 0.0
                && b.min.y > 0.0
                && b.min.z >= 0.0
                && b.max.x < e.x
                && b.max.y < e.y
                && b.max.z < e.z
                && (0..3).all(|a| b.min[a] < b.max[a]);
            if !inside {
                return Err(Error::Geometry(format!("obstacle {i} is not inside the room")));
            }
            for (j, p) in self.obstacles.iter().enumerate().skip(i + 1) {
                if b.overlaps(&p.bounds) {
                    return Err(Error::Geometry(format!("obstacles {i} and {j} overlap")));
                }
            }
        }
        Ok(())
    }

    /// True when `p` lies inside the room and outside every obstacle.
    pub fn is_free(&self, p: Vec3) -> bool {
        let e = self.extents;
        let in_room = p.x > 0.0 && p.y > 0.0 && p.z > 0.0 && p.x < e.x && p.y < e.y && p.z < e.z;
        in_room && !self.obstacles.iter().any(|o| o.bounds.contains(p))
    }
}

/// Closed interval `[lo, hi]`, written as a two-element array in config files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Span(pub f64, pub f64);

impl Span {
    fn check(&self, what: &str) -> Result<()> {
        if !(self.0.is_finite() && self.1.is_finite()) || self.0 > self.1 {
            return Err(Error::Config(format!("{what}: range [{}, {}] is empty or inverted", self.0, self.1)));
        }
        Ok(())
    }

    fn sample(&self, rng: &mut Pcg32) -> f64 {
        if self.0 == self.1 {
            self.0
        } else {
            rng.random_range(self.0..self.1)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneGenConfig {
    pub room_x: Span,
    pub room_y: Span,
    pub room_z: Span,
    /// Inclusive obstacle count range.
    pub obstacle_count: [u32; 2],
    /// Footprint side length range of each obstacle.
    pub obstacle_size: Span,
    pub obstacle_height: Span,
    /// Minimum gap between obstacles and walls or other obstacles.
    pub obstacle_gap: f64,
    pub palette: Vec<Material>,
}

impl Default for SceneGenConfig {
    fn default() -> Self {
        SceneGenConfig {
            room_x: Span(3.0, 7.0),
            room_y: Span(3.0, 7.0),
            room_z: Span(2.4, 3.2),
            obstacle_count: [0, 3],
            obstacle_size: Span(0.5, 1.4),
            obstacle_height: Span(0.4, 2.0),
            obstacle_gap: 0.3,
            palette: default_palette(),
        }
    }
}

pub fn default_palette() -> Vec<Material> {
    let m = |id, reflection, albedo| Material { id, reflection, albedo };
    vec![
        m(0, 0.90, [0.85, 0.82, 0.75]), // plaster
        m(1, 0.95, [0.55, 0.55, 0.58]), // concrete
        m(2, 0.70, [0.60, 0.40, 0.25]), // wood
        m(3, 0.50, [0.30, 0.35, 0.55]), // carpet
        m(4, 0.85, [0.75, 0.80, 0.85]), // tile
        m(5, 0.60, [0.45, 0.60, 0.40]), // fabric
    ]
}

impl SceneGenConfig {
    pub fn validate(&self) -> Result<()> {
        self.room_x.check("room_x")?;
        self.room_y.check("room_y")?;
        self.room_z.check("room_z")?;
        self.obstacle_size.check("obstacle_size")?;
        self.obstacle_height.check("obstacle_height")?;
        if self.room_x.0 <= 0.0 || self.room_y.0 <= 0.0 || self.room_z.0 <= 0.0 {
            return Err(Error::Config("room dimensions must be positive".into()));
        }
        if self.obstacle_count[0] > self.obstacle_count[1] {
            return Err(Error::Config(format!(
                "obstacle_count: range [{}, {}] is inverted",
                self.obstacle_count[0], self.obstacle_count[1]
            )));
        }
        if self.obstacle_size.0 <= 0.0 || self.obstacle_height.0 <= 0.0 || self.obstacle_gap < 0.0 {
            return Err(Error::Config("obstacle sizes must be positive and gap non-negative".into()));
        }
        if self.palette.is_empty() {
            return Err(Error::Config("material palette is empty".into()));
        }
        for m in &self.palette {
            m.validate()?;
        }
        Ok(())
    }
}

const PLACEMENT_ATTEMPTS: usize = 64;

/// Deterministic scene from `(seed, cfg)`. Obstacles rest on the floor.
pub fn generate_scene(seed: u64, cfg: &SceneGenConfig) -> Result<Scene> {
    cfg.validate()?;
    let mut rng = Pcg32::seed_from_u64(seed);
    let extents = Vec3::new(
        cfg.room_x.sample(&mut rng),
        cfg.room_y.sample(&mut rng),
        cfg.room_z.sample(&mut rng),
    );
    let pick = |rng: &mut Pcg32| cfg.palette[rng.random_range(0..cfg.palette.len())].id;
    let mut wall_materials = [0u8; 6];
    for w in wall_materials.iter_mut() {
        *w = pick(&mut rng);
    }

    let [lo, hi] = cfg.obstacle_count;
    let count = rng.random_range(lo..=hi);
    let gap = cfg.obstacle_gap;
    let mut obstacles: Vec<Obstacle> = Vec::new();
    for _ in 0..count {
        for _ in 0..PLACEMENT_ATTEMPTS {
            let w = cfg.obstacle_size.sample(&mut rng);
            let d = cfg.obstacle_size.sample(&mut rng);
            let h = cfg.obstacle_height.sample(&mut rng).min(extents.z - gap.max(0.05));
            let free_x = extents.x - 2.0 * gap - w;
            let free_y = extents.y - 2.0 * gap - d;
            if free_x <= 0.0 || free_y <= 0.0 || h <= 0.0 {
                continue;
            }
            let x0 = gap + rng.random::<f64>() * free_x;
            let y0 = gap + rng.random::<f64>() * free_y;
            let bounds = Aabb::new(Vec3::new(x0, y0, 0.0), Vec3::new(x0 + w, y0 + d, h));
            let grown = Aabb::new(
                bounds.min - Vec3::new(gap, gap, 0.0),
                bounds.max + Vec3::new(gap, gap, 0.0),
            );
            if obstacles.iter().any(|o| o.bounds.overlaps(&grown)) {
                continue;
            }
            let material = pick(&mut rng);
            obstacles.push(Obstacle { bounds, material });
            break;
        }
    }

    let scene = Scene {
        extents,
        materials: cfg.palette.clone(),
        wall_materials,
        obstacles,
        seed,
    };
    scene.validate()?;
    Ok(scene)
}

/// One of the four cardinal headings. Azimuth grows clockwise seen from
/// above, so turning right adds 90 degrees; 0 faces +x and 90 faces -y.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Orientation {
    #[serde(rename = "0")]
    Deg0 = 0,
    #[serde(rename = "90")]
    Deg90 = 1,
    #[serde(rename = "180")]
    Deg180 = 2,
    #[serde(rename = "270")]
    Deg270 = 3,
}

impl Orientation {
    pub const ALL: [Orientation; 4] = [
        Orientation::Deg0,
        Orientation::Deg90,
        Orientation::Deg180,
        Orientation::Deg270,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Orientation {
        Self::ALL[i % 4]
    }

    pub fn azimuth_deg(self) -> u32 {
        self.index() as u32 * 90
    }

    pub fn from_azimuth(deg: u32) -> Option<Orientation> {
        (deg % 90 == 0).then(|| Self::from_index((deg / 90) as usize))
    }

    /// Unit heading in the horizontal plane.
    pub fn forward(self) -> Vec3 {
        match self {
            Orientation::Deg0 => Vec3::new(1.0, 0.0, 0.0),
            Orientation::Deg90 => Vec3::new(0.0, -1.0, 0.0),
            Orientation::Deg180 => Vec3::new(-1.0, 0.0, 0.0),
            Orientation::Deg270 => Vec3::new(0.0, 1.0, 0.0),
        }
    }

    /// Unit vector toward the agent's right ear.
    pub fn right(self) -> Vec3 {
        Self::from_index(self.index() + 1).forward()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentPose {
    pub position: Vec3,
    pub orientation: Orientation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub spacing: f64,
    pub clearance: f64,
    pub sensor_height: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            spacing: 0.5,
            clearance: 0.5,
            sensor_height: 1.5,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.spacing > 0.0) || !(self.clearance >= 0.0) || !(self.sensor_height > 0.0) {
            return Err(Error::Config(format!(
                "grid needs spacing > 0, clearance >= 0, sensor_height > 0; got {self:?}"
            )));
        }
        Ok(())
    }
}

const GRID_EPS: f64 = 1e-9;

/// Grid coordinates `k * spacing` (k >= 0) lying in `[clearance, extent - clearance]`.
fn axis_points(extent: f64, grid: &GridSpec) -> Vec<f64> {
    let last = ((extent - grid.clearance) / grid.spacing + GRID_EPS).floor();
    if last < 0.0 {
        return Vec::new();
    }
    (0..=last as usize)
        .map(|k| k as f64 * grid.spacing)
        .filter(|&v| v >= grid.clearance - GRID_EPS && v <= extent - grid.clearance + GRID_EPS)
        .collect()
}

/// Navigable grid positions, each expanded into four poses. Ordered by x,
/// then y, then orientation.
pub fn navigable_poses(scene: &Scene, grid: &GridSpec) -> Vec<AgentPose> {
    let z = grid.sensor_height;
    if z < grid.clearance - GRID_EPS || z > scene.extents.z - grid.clearance + GRID_EPS {
        return Vec::new();
    }
    let ys = axis_points(scene.extents.y, grid);
    let mut poses = Vec::new();
    for x in axis_points(scene.extents.x, grid) {
        for &y in &ys {
            let p = Vec3::new(x, y, z);
            let clear = scene
                .obstacles
                .iter()
                .all(|o| o.bounds.plan_distance(p) >= grid.clearance - GRID_EPS && !o.bounds.contains(p));
            if clear {
                poses.extend(Orientation::ALL.iter().map(|&orientation| AgentPose {
                    position: p,
                    orientation,
                }));
            }
        }
    }
    poses
}
