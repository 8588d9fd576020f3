//! Synthetic multi-agent scenes, pose-noise and delay models, and collaboration messages.
//!
//! Objects move with constant velocity; a message captured `delay` seconds ago sees every
//! object rolled back along its velocity. Sender poses are static, so the reported pose
//! refers to capture time and current time alike.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{rotated_iou, DetectedBox, Pose2};
use crate::tensor::Tensor3;

pub const SCENE_SCHEMA_VERSION: u32 = 1;

/// Lower bound on the σ reported in a box so its information matrix stays finite
/// when detection noise is disabled.
pub const MIN_REPORTED_SIGMA: f64 = 1e-3;

/// Standard deviation of the additive noise on detection confidence.
pub const CONFIDENCE_NOISE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Agent {
    pub id: u32,
    pub true_pose: Pose2,
    pub sensing_range: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneObject {
    pub id: u32,
    pub pose: Pose2,
    /// World-frame velocity `(vx, vy)` in m/s.
    pub velocity: [f64; 2],
    pub half_length: f64,
    pub half_width: f64,
}

impl SceneObject {
    /// Ground-truth footprint as a box in the world frame.
    pub fn footprint(&self) -> DetectedBox {
        DetectedBox {
            center: self.pose,
            half_length: self.half_length,
            half_width: self.half_width,
            sigma: [MIN_REPORTED_SIGMA; 3],
            confidence: 1.0,
        }
    }

    /// Pose after `dt` seconds of constant-velocity motion (negative `dt` rolls back).
    pub fn advanced(&self, dt: f64) -> SceneObject {
        SceneObject {
            pose: Pose2::new(
                self.pose.x + self.velocity[0] * dt,
                self.pose.y + self.velocity[1] * dt,
                self.pose.theta,
            ),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scene {
    pub schema_version: u32,
    pub seed: u64,
    pub timestamp: f64,
    pub agents: Vec<Agent>,
    pub objects: Vec<SceneObject>,
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCENE_SCHEMA_VERSION {
            return Err(Error::config(
                "schema_version",
                format!("expected {SCENE_SCHEMA_VERSION}, got {}", self.schema_version),
            ));
        }
        if self.agents.is_empty() {
            return Err(Error::config("agents", "scene needs at least one agent"));
        }
        let mut ids = HashSet::new();
        for a in &self.agents {
            if !ids.insert(a.id) {
                return Err(Error::config("agents.id", format!("duplicate agent id {}", a.id)));
            }
            if !(a.sensing_range > 0.0 && a.sensing_range.is_finite()) {
                return Err(Error::config("agents.sensing_range", "must be positive"));
            }
        }
        let mut ids = HashSet::new();
        for o in &self.objects {
            if !ids.insert(o.id) {
                return Err(Error::config("objects.id", format!("duplicate object id {}", o.id)));
            }
            if !(o.half_length > 0.0 && o.half_width > 0.0) {
                return Err(Error::config("objects.half_length", "extents must be positive"));
            }
            if !(o.velocity[0].is_finite() && o.velocity[1].is_finite()) {
                return Err(Error::config("objects.velocity", "must be finite"));
            }
        }
        if !self.timestamp.is_finite() {
            return Err(Error::config("timestamp", "must be finite"));
        }
        Ok(())
    }

    pub fn agent(&self, id: u32) -> Result<&Agent> {
        self.agents.iter().find(|a| a.id == id).ok_or(Error::UnknownAgent(id))
    }

    pub fn object(&self, id: u32) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.id == id)
    }

    /// The scene as it was `dt` seconds ago.
    pub fn rolled_back(&self, dt: f64) -> Scene {
        Scene {
            timestamp: self.timestamp - dt,
            objects: self.objects.iter().map(|o| o.advanced(-dt)).collect(),
            ..self.clone()
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Scene> {
        let scene: Scene = serde_json::from_str(s)?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = self.to_json()?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Scene> {
        Scene::from_json(&fs::read_to_string(path)?)
    }
}

/// Controls for [`generate_scene`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneParams {
    pub n_agents: usize,
    pub n_objects: usize,
    /// Side length of the square region objects are placed in, meters.
    pub extent: f64,
    /// Side length of the central square agents are placed in, meters.
    pub agent_spread: f64,
    pub sensing_range: f64,
    /// Fraction of objects that move; the rest are parked.
    pub moving_fraction: f64,
    pub max_speed: f64,
    pub half_length_range: [f64; 2],
    pub half_width_range: [f64; 2],
    /// Placement attempts per object before giving up.
    pub max_retries: usize,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            n_agents: 2,
            n_objects: 30,
            extent: 100.0,
            agent_spread: 30.0,
            sensing_range: 50.0,
            moving_fraction: 0.3,
            max_speed: 5.0,
            half_length_range: [1.8, 2.6],
            half_width_range: [0.8, 1.1],
            max_retries: 1000,
        }
    }
}

impl SceneParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_agents < 1 {
            return Err(Error::config("scene.n_agents", "must be at least 1"));
        }
        for (name, v) in [
            ("scene.extent", self.extent),
            ("scene.sensing_range", self.sensing_range),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(name, format!("must be positive, got {v}")));
            }
        }
        if !(self.agent_spread >= 0.0 && self.agent_spread.is_finite()) {
            return Err(Error::config("scene.agent_spread", "must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.moving_fraction) {
            return Err(Error::config("scene.moving_fraction", "must lie in [0, 1]"));
        }
        if !(self.max_speed >= 0.0 && self.max_speed.is_finite()) {
            return Err(Error::config("scene.max_speed", "must be non-negative"));
        }
        for (name, r) in [
            ("scene.half_length_range", self.half_length_range),
            ("scene.half_width_range", self.half_width_range),
        ] {
            if !(r[0] > 0.0 && r[0] <= r[1] && r[1].is_finite()) {
                return Err(Error::config(name, format!("need 0 < min <= max, got {r:?}")));
            }
        }
        Ok(())
    }
}

fn uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

pub fn gaussian(rng: &mut impl Rng, sigma: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    sigma * z
}

/// Generates a deterministic scene: agents near the center, non-overlapping objects in the extent.
pub fn generate_scene(params: &SceneParams, seed: u64) -> Result<Scene> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half_spread = params.agent_spread / 2.0;
    let agents = (0..params.n_agents)
        .map(|i| Agent {
            id: i as u32,
            true_pose: Pose2::new(
                uniform(&mut rng, -half_spread, half_spread),
                uniform(&mut rng, -half_spread, half_spread),
                uniform(&mut rng, -std::f64::consts::PI, std::f64::consts::PI),
            ),
            sensing_range: params.sensing_range,
        })
        .collect();

    let half = params.extent / 2.0;
    let mut objects: Vec<SceneObject> = Vec::with_capacity(params.n_objects);
    for i in 0..params.n_objects {
        let mut placed = None;
        for _ in 0..params.max_retries.max(1) {
            let candidate = SceneObject {
                id: i as u32,
                pose: Pose2::new(
                    uniform(&mut rng, -half, half),
                    uniform(&mut rng, -half, half),
                    uniform(&mut rng, -std::f64::consts::PI, std::f64::consts::PI),
                ),
                velocity: [0.0, 0.0],
                half_length: uniform(&mut rng, params.half_length_range[0], params.half_length_range[1]),
                half_width: uniform(&mut rng, params.half_width_range[0], params.half_width_range[1]),
            };
            let fp = candidate.footprint();
            if objects.iter().all(|o| rotated_iou(&o.footprint(), &fp) == 0.0) {
                placed = Some(candidate);
                break;
            }
        }
        let mut obj = placed.ok_or(Error::InfeasibleScene {
            placed: i,
            requested: params.n_objects,
            retries: params.max_retries,
        })?;
        if rng.random::<f64>() < params.moving_fraction {
            let speed = uniform(&mut rng, 0.0, params.max_speed);
            let (s, c) = obj.pose.theta.sin_cos();
            obj.velocity = [speed * c, speed * s];
        }
        objects.push(obj);
    }

    Ok(Scene {
        schema_version: SCENE_SCHEMA_VERSION,
        seed,
        timestamp: 0.0,
        agents,
        objects,
    })
}

/// Pose-noise, delay and detection-noise settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    /// Translation noise std on x and y, meters.
    pub sigma_t: f64,
    /// Heading noise std, degrees.
    pub sigma_r: f64,
    /// Communication delay, seconds.
    pub delay: f64,
    /// Detection noise std `(σ_x, σ_y, σ_θ)` in meters, meters, radians.
    pub detection_sigma: [f64; 3],
    pub rng_seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            sigma_t: 0.2,
            sigma_r: 0.2,
            delay: 0.1,
            detection_sigma: [0.1, 0.1, 0.01],
            rng_seed: 0,
        }
    }
}

impl NoiseConfig {
    pub fn noiseless() -> Self {
        Self {
            sigma_t: 0.0,
            sigma_r: 0.0,
            delay: 0.0,
            detection_sigma: [0.0; 3],
            rng_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("noise.sigma_t", self.sigma_t),
            ("noise.sigma_r", self.sigma_r),
            ("noise.delay", self.delay),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(name, format!("must be >= 0, got {v}")));
            }
        }
        if self.detection_sigma.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(Error::config(
                "noise.detection_sigma",
                format!("must be >= 0, got {:?}", self.detection_sigma),
            ));
        }
        Ok(())
    }

    pub fn sigma_r_rad(&self) -> f64 {
        self.sigma_r.to_radians()
    }

    /// Sigma written into each detected box.
    pub fn reported_sigma(&self) -> [f64; 3] {
        self.detection_sigma.map(|s| s.max(MIN_REPORTED_SIGMA))
    }
}

/// Adds `N(0, σ_t²)` to x and y and `N(0, σ_r²)` (converted to radians) to θ.
pub fn perturb_pose(p: &Pose2, cfg: &NoiseConfig, rng: &mut impl Rng) -> Pose2 {
    let dx = gaussian(rng, cfg.sigma_t);
    let dy = gaussian(rng, cfg.sigma_t);
    let dtheta = gaussian(rng, cfg.sigma_r_rad());
    Pose2::new(p.x + dx, p.y + dy, p.theta + dtheta)
}

/// Boxes seen by one agent, with the ids of the objects that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detections {
    pub boxes: Vec<DetectedBox>,
    /// Ground-truth object id per box; used only for evaluation.
    pub object_ids: Vec<u32>,
}

/// Detects every object within the agent's sensing range, in the agent frame.
pub fn observe(scene: &Scene, agent_id: u32, cfg: &NoiseConfig, rng: &mut impl Rng) -> Result<Detections> {
    let agent = scene.agent(agent_id)?;
    let reported = cfg.reported_sigma();
    let mut boxes = Vec::new();
    let mut object_ids = Vec::new();
    for obj in &scene.objects {
        let range = agent.true_pose.distance(&obj.pose);
        if range > agent.sensing_range {
            continue;
        }
        let local = agent.true_pose.relative(&obj.pose);
        let center = Pose2::new(
            local.x + gaussian(rng, cfg.detection_sigma[0]),
            local.y + gaussian(rng, cfg.detection_sigma[1]),
            local.theta + gaussian(rng, cfg.detection_sigma[2]),
        );
        let confidence = (1.0 - range / agent.sensing_range + gaussian(rng, CONFIDENCE_NOISE)).clamp(0.0, 1.0);
        boxes.push(DetectedBox {
            center,
            half_length: obj.half_length,
            half_width: obj.half_width,
            sigma: reported,
            confidence,
        });
        object_ids.push(obj.id);
    }
    Ok(Detections { boxes, object_ids })
}

/// BEV grid geometry for synthetic feature maps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Meters per cell.
    pub resolution: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            channels: 64,
            resolution: 1.6,
        }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.channels == 0 {
            return Err(Error::config("grid", "dimensions must be positive"));
        }
        if !(self.resolution > 0.0 && self.resolution.is_finite()) {
            return Err(Error::config("grid.resolution", "must be positive"));
        }
        Ok(())
    }

    /// Cell `(row, col)` containing frame point `(x, y)`, if inside the grid.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let col = (x / self.resolution + self.width as f64 / 2.0).floor();
        let row = (y / self.resolution + self.height as f64 / 2.0).floor();
        if col < 0.0 || row < 0.0 || col >= self.width as f64 || row >= self.height as f64 {
            return None;
        }
        Some((row as usize, col as usize))
    }

    /// Frame coordinates of a cell center.
    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            (col as f64 + 0.5 - self.width as f64 / 2.0) * self.resolution,
            (row as f64 + 0.5 - self.height as f64 / 2.0) * self.resolution,
        )
    }
}

/// Dense BEV feature grid centered on `origin`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub grid: Tensor3,
    pub resolution: f64,
    pub origin: Pose2,
}

impl FeatureMap {
    pub fn new(grid: Tensor3, resolution: f64, origin: Pose2) -> Result<Self> {
        let (h, w, c) = grid.shape();
        if h == 0 || w == 0 || c == 0 {
            return Err(Error::ShapeMismatch {
                expected: (1, 1, 1),
                got: (h, w, c),
            });
        }
        if !grid.is_finite() {
            return Err(Error::NonFinite("feature map"));
        }
        Ok(Self {
            grid,
            resolution,
            origin,
        })
    }

    /// Elementwise maximum of two maps on the same grid.
    pub fn max_with(&self, other: &FeatureMap) -> Result<FeatureMap> {
        self.grid.ensure_same_shape(&other.grid)?;
        let (h, w, c) = self.grid.shape();
        let data = self
            .grid
            .as_slice()
            .iter()
            .zip(other.grid.as_slice())
            .map(|(a, b)| a.max(*b))
            .collect();
        Ok(FeatureMap {
            grid: Tensor3::from_vec(h, w, c, data)?,
            ..self.clone()
        })
    }
}

/// Renders boxes as Gaussian bumps centered on the cell holding each box.
///
/// Channel `k` uses width `half_diagonal · (1 + k / C)`, so channel 0 has exactly the box
/// half-diagonal and every channel peaks at 1.0. Overlapping bumps combine by maximum.
pub fn synthesize_feature(boxes: &[DetectedBox], grid: &GridConfig) -> Result<FeatureMap> {
    grid.validate()?;
    let (h, w, c) = (grid.height, grid.width, grid.channels);
    let mut out = Tensor3::zeros(h, w, c);
    for b in boxes {
        let Some((row, col)) = grid.cell_of(b.center.x, b.center.y) else {
            continue;
        };
        let (cx, cy) = grid.cell_center(row, col);
        let base = b.half_diagonal();
        let max_width = base * 2.0;
        let reach = (4.0 * max_width / grid.resolution).ceil() as isize;
        for dr in -reach..=reach {
            let r = row as isize + dr;
            if r < 0 || r >= h as isize {
                continue;
            }
            for dc in -reach..=reach {
                let cc = col as isize + dc;
                if cc < 0 || cc >= w as isize {
                    continue;
                }
                let (x, y) = grid.cell_center(r as usize, cc as usize);
                let d2 = (x - cx).powi(2) + (y - cy).powi(2);
                for k in 0..c {
                    let width = base * (1.0 + k as f64 / c as f64);
                    let v = (-d2 / (2.0 * width * width)).exp();
                    if v > out.get(r as usize, cc as usize, k) {
                        out.set(r as usize, cc as usize, k, v);
                    }
                }
            }
        }
    }
    FeatureMap::new(out, grid.resolution, Pose2::identity())
}

/// What an agent sends the ego agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollabMessage {
    pub sender_id: u32,
    /// Boxes in the sender frame, observed at `capture_time`.
    pub boxes: Vec<DetectedBox>,
    /// Ground-truth object ids per box; evaluation only.
    pub object_ids: Vec<u32>,
    /// Noisy sender pose.
    pub reported_pose: Pose2,
    pub feature: FeatureMap,
    pub capture_time: f64,
}

/// Builds the message `sender_id` transmits: delayed detections, noisy pose and feature map.
///
/// RNG draw order is pose noise first, then detections.
pub fn build_message(
    scene: &Scene,
    sender_id: u32,
    cfg: &NoiseConfig,
    grid: &GridConfig,
    rng: &mut impl Rng,
) -> Result<CollabMessage> {
    let sender = scene.agent(sender_id)?;
    let reported_pose = perturb_pose(&sender.true_pose, cfg, rng);
    let captured = scene.rolled_back(cfg.delay);
    let det = observe(&captured, sender_id, cfg, rng)?;
    let feature = synthesize_feature(&det.boxes, grid)?;
    Ok(CollabMessage {
        sender_id,
        boxes: det.boxes,
        object_ids: det.object_ids,
        reported_pose,
        feature,
        capture_time: captured.timestamp,
    })
}

/// Deterministic RNG used throughout the crate.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
