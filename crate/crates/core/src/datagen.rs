//! Synthetic rooms and pick-and-place motions, plus the preprocessing
//! pipeline for any raw pose stream.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::data::{SceneContext, Trajectory, TrajectorySample};
use crate::error::{GmtError, Result};
use crate::geometry::{matrix_to_rot6d, obb_intersect, rot6d_to_matrix, OrientedBox, Pose9, Rot6D, Vec3};
use crate::pointscene::{extract_local_cloud, fit_to_budget, nearest_fixtures, Fixture, FixtureSet, PointCloud};

/// Capture rate of generated raw motion.
pub const RAW_RATE_HZ: f64 = 30.0;
/// Frames at or below this speed are static.
pub const STATIC_SPEED: f64 = 0.05;
/// Longest static run that survives the motion filter.
pub const MAX_STATIC_RUN: usize = 3;
/// Waypoint resamples before giving up on a clear path.
pub const MAX_PATH_ATTEMPTS: usize = 50;

/// Timestamped poses before preprocessing.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTrajectory {
    pub timestamps: Vec<f64>,
    pub poses: Vec<Pose9>,
}

impl RawTrajectory {
    pub fn new(timestamps: Vec<f64>, poses: Vec<Pose9>) -> Result<Self> {
        if timestamps.len() != poses.len() {
            return Err(GmtError::LengthMismatch {
                what: "timestamps vs poses",
                left: timestamps.len(),
                right: poses.len(),
            });
        }
        if timestamps.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(GmtError::InvalidInput("timestamps must be strictly increasing".into()));
        }
        Ok(Self { timestamps, poses })
    }

    /// Valid frames of a trajectory at a fixed frame period.
    pub fn from_trajectory(traj: &Trajectory, period: f64) -> Result<Self> {
        let poses: Vec<Pose9> = traj.valid_indices().into_iter().map(|i| traj.poses[i]).collect();
        let timestamps = (0..poses.len()).map(|i| i as f64 * period).collect();
        Self::new(timestamps, poses)
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    fn select(&self, idx: &[usize]) -> Self {
        Self {
            timestamps: idx.iter().map(|&i| self.timestamps[i]).collect(),
            poses: idx.iter().map(|&i| self.poses[i]).collect(),
        }
    }
}

/// Keep frames 0, stride, 2·stride, … and always the final frame.
pub fn downsample(raw: &RawTrajectory, stride: usize) -> Result<RawTrajectory> {
    if stride == 0 {
        return Err(GmtError::InvalidInput("stride must be at least 1".into()));
    }
    let n = raw.len();
    let mut idx: Vec<usize> = (0..n).step_by(stride).collect();
    if n > 0 && idx.last() != Some(&(n - 1)) {
        idx.push(n - 1);
    }
    Ok(raw.select(&idx))
}

/// Finite-difference speed per frame: forward for frame 0, backward after.
pub fn frame_speeds(raw: &RawTrajectory) -> Vec<f64> {
    let n = raw.len();
    let step = |a: usize, b: usize| {
        (raw.poses[b].position - raw.poses[a].position).norm() / (raw.timestamps[b] - raw.timestamps[a])
    };
    (0..n)
        .map(|i| match (i, n) {
            (_, 1) => 0.0,
            (0, _) => step(0, 1),
            _ => step(i - 1, i),
        })
        .collect()
}

/// Drop runs of more than three consecutive static frames.
pub fn motion_filter(raw: &RawTrajectory) -> Result<RawTrajectory> {
    if raw.len() < 2 {
        return Err(GmtError::TooShort {
            valid: raw.len(),
            needed: 2,
        });
    }
    let speeds = frame_speeds(raw);
    let n = speeds.len();
    let mut keep = Vec::with_capacity(n);
    let mut i = 0;
    while i < n {
        if speeds[i] > STATIC_SPEED {
            keep.push(i);
            i += 1;
            continue;
        }
        let start = i;
        while i < n && speeds[i] <= STATIC_SPEED {
            i += 1;
        }
        if i - start <= MAX_STATIC_RUN {
            keep.extend(start..i);
        }
    }
    if keep.is_empty() {
        return Err(GmtError::AllStatic);
    }
    Ok(raw.select(&keep))
}

fn reorthonormalize(r: &Rot6D) -> Result<Rot6D> {
    matrix_to_rot6d(&rot6d_to_matrix(r)?)
}

/// Fix the frame count at `t`: index-space linear interpolation when longer,
/// tail padding with the final pose (masked out) when shorter.
pub fn resample_to_length(raw: &RawTrajectory, t: usize) -> Result<Trajectory> {
    let n = raw.len();
    if n < 2 {
        return Err(GmtError::TooShort { valid: n, needed: 2 });
    }
    if t < 2 {
        return Err(GmtError::InvalidInput(format!("target length must be >= 2, got {t}")));
    }
    if n <= t {
        let last = raw.poses[n - 1];
        let poses = raw.poses.iter().copied().chain(std::iter::repeat_n(last, t - n)).collect();
        let mask = (0..t).map(|i| i < n).collect();
        return Trajectory::new(poses, mask);
    }
    let mut poses = Vec::with_capacity(t);
    for j in 0..t {
        let u = j as f64 * (n - 1) as f64 / (t - 1) as f64;
        let i0 = (u.floor() as usize).min(n - 2);
        let f = u - i0 as f64;
        let (a, b) = (&raw.poses[i0], &raw.poses[i0 + 1]);
        let lerp = |x: &Vec3, y: &Vec3| x * (1.0 - f) + y * f;
        let rot = Rot6D::new(lerp(&a.rotation.a1, &b.rotation.a1), lerp(&a.rotation.a2, &b.rotation.a2));
        poses.push(Pose9::new(lerp(&a.position, &b.position), reorthonormalize(&rot)?));
    }
    Ok(Trajectory::dense(poses))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub seq_len: usize,
    pub stride: usize,
    pub radius: f64,
    pub max_fixtures: usize,
    pub point_budget: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            seq_len: 200,
            stride: 5,
            radius: 1.0,
            max_fixtures: 8,
            point_budget: 1024,
        }
    }
}

/// Object identity carried through preprocessing unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectInfo {
    pub category: String,
    pub size: Vec3,
    pub description: String,
}

/// Downsample, drop static runs, fix the length, crop the scene around the
/// path and keep the nearest fixtures. The goal is the final valid pose.
pub fn preprocess(
    raw: &RawTrajectory,
    scene: &SceneContext,
    object: &ObjectInfo,
    cfg: &PreprocessConfig,
    seed: u64,
) -> Result<TrajectorySample> {
    let thinned = downsample(raw, cfg.stride)?;
    let moving = motion_filter(&thinned)?;
    let trajectory = resample_to_length(&moving, cfg.seq_len)?;
    let local = extract_local_cloud(&scene.cloud, &trajectory, cfg.radius)?;
    let cloud = fit_to_budget(&local, cfg.point_budget, seed)?;
    let fixtures = if scene.fixtures.is_empty() {
        FixtureSet::default()
    } else {
        nearest_fixtures(&scene.fixtures, &trajectory, cfg.max_fixtures)?
    };
    let last = trajectory.last_valid_index().ok_or(GmtError::EmptySequence)?;
    let goal = trajectory.poses[last];
    Ok(TrajectorySample {
        trajectory,
        category: object.category.clone(),
        object_size: object.size,
        description: object.description.clone(),
        scene: SceneContext { cloud, fixtures },
        goal,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub room_size: f64,
    pub fixtures_min: usize,
    pub fixtures_max: usize,
    /// Surface sampling density, points per square meter.
    pub point_density: f64,
    /// Motion duration range in seconds.
    pub duration: (f64, f64),
    /// Height of the waypoint above the tallest fixture.
    pub clearance: (f64, f64),
    /// Horizontal waypoint offset from the start-goal midpoint.
    pub waypoint_jitter: f64,
    pub preprocess: PreprocessConfig,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            room_size: 4.5,
            fixtures_min: 2,
            fixtures_max: 4,
            point_density: 500.0,
            duration: (3.0, 6.0),
            clearance: (0.15, 0.6),
            waypoint_jitter: 1.0,
            preprocess: PreprocessConfig::default(),
        }
    }
}

impl GenConfig {
    /// Generator settings whose output matches a model's frame count, point
    /// budget, fixture count and crop radius. Motions last between 40% and
    /// 100% of what fits in `seq_len` frames, capped at 8 s.
    pub fn for_model(model: &ModelConfig) -> Self {
        let preprocess = PreprocessConfig {
            seq_len: model.seq_len,
            radius: model.local_radius,
            max_fixtures: model.max_fixtures,
            point_budget: model.point_budget,
            ..PreprocessConfig::default()
        };
        let longest = ((model.seq_len - 1) as f64 * sample_period(&preprocess)).min(8.0);
        Self {
            duration: (0.4 * longest, longest),
            preprocess,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(GmtError::ConfigMismatch(m.to_string()));
        if self.fixtures_min == 0 || self.fixtures_min > self.fixtures_max {
            return bad("fixture count range must satisfy 1 <= min <= max");
        }
        if !(self.duration.0 > 0.0 && self.duration.0 <= self.duration.1) {
            return bad("duration range must be positive and ordered");
        }
        if !(self.clearance.0 >= 0.0 && self.clearance.0 <= self.clearance.1) {
            return bad("clearance range must be non-negative and ordered");
        }
        if !(self.room_size > 2.5 && self.point_density > 0.0) {
            return bad("room_size must exceed 2.5 m and point_density must be positive");
        }
        let frames = ((self.duration.1 * RAW_RATE_HZ).round() as usize).div_ceil(self.preprocess.stride.max(1)) + 1;
        if frames > self.preprocess.seq_len {
            return bad("longest motion would exceed seq_len frames after downsampling");
        }
        Ok(())
    }
}

struct FixtureKind {
    label: &'static str,
    x: (f64, f64),
    y: (f64, f64),
    z: (f64, f64),
}

const FIXTURE_KINDS: [FixtureKind; 4] = [
    FixtureKind { label: "table", x: (0.8, 1.6), y: (0.6, 1.0), z: (0.7, 0.8) },
    FixtureKind { label: "shelf", x: (0.4, 1.0), y: (0.4, 0.5), z: (1.0, 2.0) },
    FixtureKind { label: "counter", x: (1.0, 2.0), y: (0.5, 0.7), z: (0.85, 0.95) },
    FixtureKind { label: "bed", x: (1.4, 2.0), y: (0.9, 1.6), z: (0.4, 0.6) },
];

const OBJECT_KINDS: [(&str, [f64; 3]); 5] = [
    ("cup", [0.08, 0.08, 0.10]),
    ("bowl", [0.16, 0.16, 0.07]),
    ("book", [0.22, 0.16, 0.04]),
    ("box", [0.25, 0.20, 0.15]),
    ("bottle", [0.07, 0.07, 0.25]),
];

/// Gap kept between fixtures so objects can pass between them.
const FIXTURE_GAP: f64 = 0.3;
/// Height of a resting object's base above its support.
const REST_GAP: f64 = 0.02;

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn sample_rect(rng: &mut ChaCha8Rng, origin: Vec3, u: Vec3, v: Vec3, density: f64, out: &mut Vec<Vec3>) {
    let count = (u.norm() * v.norm() * density).round() as usize;
    for _ in 0..count {
        let (a, b): (f64, f64) = (rng.random(), rng.random());
        out.push(origin + u * a + v * b);
    }
}

/// Room with a floor at z = 0 and axis-aligned fixtures standing on it.
pub fn generate_scene(seed: u64, cfg: &GenConfig) -> Result<SceneContext> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = cfg.room_size / 2.0;
    let count = rng.random_range(cfg.fixtures_min..=cfg.fixtures_max);
    let mut boxes: Vec<(String, OrientedBox)> = Vec::with_capacity(count);
    let mut attempts = 0;
    while boxes.len() < count && attempts < 200 {
        attempts += 1;
        let kind = &FIXTURE_KINDS[rng.random_range(0..FIXTURE_KINDS.len())];
        let mut size = Vec3::new(uniform(&mut rng, kind.x), uniform(&mut rng, kind.y), uniform(&mut rng, kind.z));
        if rng.random_bool(0.5) {
            size = Vec3::new(size.y, size.x, size.z);
        }
        let cx = uniform(&mut rng, (-half + size.x / 2.0, half - size.x / 2.0));
        let cy = uniform(&mut rng, (-half + size.y / 2.0, half - size.y / 2.0));
        let bbox = OrientedBox::axis_aligned(Vec3::new(cx, cy, size.z / 2.0), size)?;
        let clear = boxes.iter().all(|(_, b)| {
            let d = (b.center - bbox.center).abs();
            let reach = (b.size + bbox.size) / 2.0;
            d.x >= reach.x + FIXTURE_GAP || d.y >= reach.y + FIXTURE_GAP
        });
        if clear {
            boxes.push((kind.label.to_string(), bbox));
        }
    }
    if boxes.len() < cfg.fixtures_min {
        return Err(GmtError::InvalidInput(format!(
            "could only place {} of {} fixtures",
            boxes.len(),
            cfg.fixtures_min
        )));
    }

    let mut points = Vec::new();
    let ex = Vec3::x();
    let ey = Vec3::y();
    let ez = Vec3::z();
    sample_rect(
        &mut rng,
        Vec3::new(-half, -half, 0.0),
        ex * cfg.room_size,
        ey * cfg.room_size,
        cfg.point_density,
        &mut points,
    );
    for (_, b) in &boxes {
        let lo = b.center - b.size / 2.0;
        let (sx, sy, sz) = (ex * b.size.x, ey * b.size.y, ez * b.size.z);
        sample_rect(&mut rng, lo + sz, sx, sy, cfg.point_density, &mut points);
        sample_rect(&mut rng, lo, sx, sz, cfg.point_density, &mut points);
        sample_rect(&mut rng, lo + sy, sx, sz, cfg.point_density, &mut points);
        sample_rect(&mut rng, lo, sy, sz, cfg.point_density, &mut points);
        sample_rect(&mut rng, lo + sx, sy, sz, cfg.point_density, &mut points);
    }
    let fixtures = FixtureSet::new(
        boxes
            .into_iter()
            .map(|(label, bbox)| Fixture { label, bbox })
            .collect(),
    )?;
    Ok(SceneContext {
        cloud: PointCloud::new(points),
        fixtures,
    })
}

/// Minimum-jerk time scaling on [0, 1].
pub fn min_jerk(tau: f64) -> f64 {
    let t = tau.clamp(0.0, 1.0);
    t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
}

/// Quadratic Bézier from `p0` to `p2` that passes through `w` at s = 0.5.
fn bezier_through(p0: Vec3, w: Vec3, p2: Vec3, s: f64) -> Vec3 {
    let c = w * 2.0 - (p0 + p2) / 2.0;
    p0 * ((1.0 - s) * (1.0 - s)) + c * (2.0 * s * (1.0 - s)) + p2 * (s * s)
}

fn resting_pose(rng: &mut ChaCha8Rng, support: &OrientedBox, size: Vec3, yaw: f64) -> Vec3 {
    let top = support.center.z + support.size.z / 2.0;
    // keep the yawed footprint inside the top surface
    let reach = (size.x * size.x + size.y * size.y).sqrt() / 2.0 + 0.02;
    let span = |extent: f64| (extent / 2.0 - reach).max(0.0);
    let _ = yaw;
    let dx = uniform(rng, (-span(support.size.x), span(support.size.x)));
    let dy = uniform(rng, (-span(support.size.y), span(support.size.y)));
    Vec3::new(support.center.x + dx, support.center.y + dy, top + REST_GAP + size.z / 2.0)
}

fn path_is_clear(poses: &[Pose9], size: Vec3, fixtures: &FixtureSet) -> Result<bool> {
    for p in poses {
        let obj = OrientedBox::new(p.position, size, p.rotation)?;
        if fixtures.boxes().any(|b| obb_intersect(&obj, b)) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Raw 30 Hz motion of an object lifted from one fixture and placed on
/// another, plus the object it moves.
pub fn generate_raw_motion(scene: &SceneContext, seed: u64, cfg: &GenConfig) -> Result<(RawTrajectory, ObjectInfo)> {
    let entries = &scene.fixtures.entries;
    if entries.is_empty() {
        return Err(GmtError::InvalidInput("scene has no fixtures".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (category, base) = OBJECT_KINDS[rng.random_range(0..OBJECT_KINDS.len())];
    let size = Vec3::from(base).map(|v| v * rng.random_range(0.8..1.2));
    let from = rng.random_range(0..entries.len());
    let to = if entries.len() > 1 {
        (from + rng.random_range(1..entries.len())) % entries.len()
    } else {
        from
    };
    let yaw0 = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    let yaw1 = yaw0 + rng.random_range(-std::f64::consts::FRAC_PI_2..std::f64::consts::FRAC_PI_2);
    let start = resting_pose(&mut rng, &entries[from].bbox, size, yaw0);
    let end = resting_pose(&mut rng, &entries[to].bbox, size, yaw1);
    let duration = uniform(&mut rng, cfg.duration);
    let n = (duration * RAW_RATE_HZ).round() as usize + 1;
    let tallest = entries
        .iter()
        .map(|f| f.bbox.center.z + f.bbox.size.z / 2.0)
        .fold(start.z.max(end.z) - size.z / 2.0, f64::max);
    let mid = (start + end) / 2.0;

    for attempt in 0..MAX_PATH_ATTEMPTS {
        let grow = attempt as f64 * 0.05;
        let w = Vec3::new(
            mid.x + rng.random_range(-1.0..1.0) * cfg.waypoint_jitter,
            mid.y + rng.random_range(-1.0..1.0) * cfg.waypoint_jitter,
            tallest + size.z / 2.0 + uniform(&mut rng, cfg.clearance) + grow,
        );
        let poses: Vec<Pose9> = (0..n)
            .map(|i| {
                let s = min_jerk(i as f64 / (n - 1) as f64);
                Pose9::new(bezier_through(start, w, end, s), Rot6D::from_yaw(yaw0 + s * (yaw1 - yaw0)))
            })
            .collect();
        if path_is_clear(&poses, size, &scene.fixtures)? {
            let timestamps = (0..n).map(|i| i as f64 / RAW_RATE_HZ).collect();
            let description = format!(
                "move the {category} from the {} to the {}",
                entries[from].label, entries[to].label
            );
            let object = ObjectInfo {
                category: category.to_string(),
                size,
                description,
            };
            return Ok((RawTrajectory::new(timestamps, poses)?, object));
        }
    }
    Err(GmtError::NoClearPath {
        attempts: MAX_PATH_ATTEMPTS,
    })
}

/// One preprocessed sample moving an object across `scene`.
pub fn generate_trajectory(scene: &SceneContext, seed: u64, cfg: &GenConfig) -> Result<TrajectorySample> {
    let (raw, object) = generate_raw_motion(scene, seed, cfg)?;
    preprocess(&raw, scene, &object, &cfg.preprocess, seed)
}

/// Frame period of generated samples.
pub fn sample_period(cfg: &PreprocessConfig) -> f64 {
    cfg.stride as f64 / RAW_RATE_HZ
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Independent seed for item `index` of a run seeded with `seed`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    splitmix(seed ^ splitmix(index))
}

/// Sample `index` of a generated dataset. Each sample gets its own room; a
/// room without a clear path is replaced by the next candidate.
pub fn generate_sample(seed: u64, index: u64, cfg: &GenConfig) -> Result<TrajectorySample> {
    let base = derive_seed(seed, index);
    let mut last_err = None;
    for attempt in 0..16u64 {
        let s = derive_seed(base, attempt);
        let scene = generate_scene(s, cfg)?;
        match generate_trajectory(&scene, splitmix(s), cfg) {
            Ok(sample) => return Ok(sample),
            Err(e @ (GmtError::NoClearPath { .. } | GmtError::AllStatic | GmtError::EmptyRegion { .. })) => {
                last_err = Some(e)
            }
            Err(e) => return Err(e),
        }
    }
    Err(last_err.unwrap_or(GmtError::NoClearPath {
        attempts: MAX_PATH_ATTEMPTS,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{collision_rate, CollisionCase};

    fn pose_at(x: f64) -> Pose9 {
        Pose9::new(Vec3::new(x, 0.0, 0.0), Rot6D::IDENTITY)
    }

    fn raw_from_x(xs: &[f64], dt: f64) -> RawTrajectory {
        RawTrajectory::new(
            (0..xs.len()).map(|i| i as f64 * dt).collect(),
            xs.iter().map(|&x| pose_at(x)).collect(),
        )
        .unwrap()
    }

    fn small_cfg() -> GenConfig {
        GenConfig {
            duration: (2.0, 3.0),
            preprocess: PreprocessConfig {
                seq_len: 24,
                point_budget: 128,
                max_fixtures: 4,
                ..PreprocessConfig::default()
            },
            ..GenConfig::default()
        }
    }

    #[test]
    fn downsample_examples() {
        let xs: Vec<f64> = (0..12).map(|i| i as f64).collect();
        let r = raw_from_x(&xs[..11], 0.1);
        assert_eq!(downsample(&r, 1).unwrap(), r);
        let picked: Vec<f64> = downsample(&r, 5).unwrap().poses.iter().map(|p| p.position.x).collect();
        assert_eq!(picked, vec![0.0, 5.0, 10.0]);
        let r = raw_from_x(&xs, 0.1);
        let picked: Vec<f64> = downsample(&r, 5).unwrap().poses.iter().map(|p| p.position.x).collect();
        assert_eq!(picked, vec![0.0, 5.0, 10.0, 11.0]);
    }

    #[test]
    fn motion_filter_examples() {
        let xs: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        let r = raw_from_x(&xs, 0.1);
        assert_eq!(motion_filter(&r).unwrap(), r);
        assert!(matches!(motion_filter(&raw_from_x(&[1.0; 10], 0.1)), Err(GmtError::AllStatic)));
        // moving, two-frame pause, moving
        let xs = [0.0, 0.1, 0.2, 0.2, 0.2, 0.3, 0.4];
        assert_eq!(motion_filter(&raw_from_x(&xs, 0.1)).unwrap().len(), 7);
        // a four-frame pause is dropped
        let xs = [0.0, 0.1, 0.2, 0.2, 0.2, 0.2, 0.2, 0.3, 0.4];
        let kept: Vec<f64> = motion_filter(&raw_from_x(&xs, 0.1)).unwrap().poses.iter().map(|p| p.position.x).collect();
        assert_eq!(kept, vec![0.0, 0.1, 0.2, 0.3, 0.4]);
    }

    #[test]
    fn resample_examples() {
        let r = raw_from_x(&(0..10).map(|i| i as f64).collect::<Vec<_>>(), 0.1);
        let same = resample_to_length(&r, 10).unwrap();
        assert!(same.mask.iter().all(|&m| m));
        assert_eq!(same.poses, r.poses);

        let r50 = raw_from_x(&(0..50).map(|i| i as f64).collect::<Vec<_>>(), 0.1);
        let padded = resample_to_length(&r50, 200).unwrap();
        assert_eq!(padded.valid_count(), 50);
        assert!(padded.mask[..50].iter().all(|&m| m) && padded.mask[50..].iter().all(|&m| !m));
        assert_eq!(padded.poses[199], r50.poses[49]);

        let line: Vec<Pose9> = (0..400)
            .map(|i| {
                let s = i as f64 / 399.0;
                Pose9::new(Vec3::new(1.0, 2.0, 0.5) * s + Vec3::new(-1.0, 0.0, 0.2), Rot6D::from_yaw(s))
            })
            .collect();
        let raw = RawTrajectory::new((0..400).map(|i| i as f64).collect(), line).unwrap();
        let out = resample_to_length(&raw, 200).unwrap();
        assert_eq!(out.valid_count(), 200);
        let a = out.poses[0].position;
        let dir = (out.poses[199].position - a).normalize();
        for p in &out.poses {
            let d = p.position - a;
            assert!((d - dir * d.dot(&dir)).norm() < 1e-6);
            let m = p.rotation.to_matrix().unwrap();
            assert!(crate::geometry::orthonormality_residual(&m) < 1e-9);
        }
    }

    #[test]
    fn long_fast_trajectory_fills_the_sequence() {
        // 2000 frames at 1 m/s and 30 Hz
        let n = 2000;
        let poses: Vec<Pose9> = (0..n).map(|i| pose_at(i as f64 / RAW_RATE_HZ)).collect();
        let raw = RawTrajectory::new((0..n).map(|i| i as f64 / RAW_RATE_HZ).collect(), poses).unwrap();
        let mut pts = vec![Vec3::new(0.5, 0.0, 0.0), Vec3::new(30.0, 0.5, 0.0)];
        pts.push(Vec3::new(0.0, 50.0, 0.0));
        let scene = SceneContext {
            cloud: PointCloud::new(pts),
            fixtures: FixtureSet::default(),
        };
        let object = ObjectInfo {
            category: "cup".into(),
            size: Vec3::new(0.1, 0.1, 0.1),
            description: "move the cup".into(),
        };
        let cfg = PreprocessConfig { point_budget: 2, ..PreprocessConfig::default() };
        let s = preprocess(&raw, &scene, &object, &cfg, 0).unwrap();
        assert_eq!(s.trajectory.valid_count(), 200);
        // the far point is dropped by the 1 m crop
        assert!(s.scene.cloud.points.iter().all(|p| p.y < 1.0));
        assert_eq!(s.goal, *s.trajectory.poses.last().unwrap());
    }

    #[test]
    fn min_jerk_profile() {
        assert_eq!(min_jerk(0.0), 0.0);
        assert_eq!(min_jerk(1.0), 1.0);
        assert!((min_jerk(0.5) - 0.5).abs() < 1e-12);
        let speed = |t: f64| (min_jerk(t + 1e-6) - min_jerk(t - 1e-6)) / 2e-6;
        assert!(speed(0.5) > speed(0.25) && speed(0.25) > speed(0.05));
        assert!(speed(1e-3) < 1e-4);
    }

    #[test]
    fn scenes_are_reproducible_and_points_lie_on_surfaces() {
        let cfg = GenConfig::default();
        let a = generate_scene(7, &cfg).unwrap();
        assert_eq!(a, generate_scene(7, &cfg).unwrap());
        assert!((2..=4).contains(&a.fixtures.len()));
        for b in a.fixtures.boxes() {
            assert!(b.size.iter().all(|&s| s > 0.0));
        }
        for p in &a.cloud.points {
            let on_floor = p.z.abs() < 1e-6;
            let on_fixture = a.fixtures.boxes().any(|b| {
                let d = (p - b.center).abs() - b.size / 2.0;
                d.iter().all(|&c| c <= 1e-6) && d.iter().any(|&c| c.abs() <= 1e-6)
            });
            assert!(on_floor || on_fixture, "{p:?}");
        }
    }

    #[test]
    fn generated_samples_are_clean() {
        let cfg = small_cfg();
        cfg.validate().unwrap();
        for i in 0..6 {
            let s = generate_sample(11, i, &cfg).unwrap();
            assert_eq!(s, generate_sample(11, i, &cfg).unwrap());
            assert_eq!(s.seq_len(), 24);
            let last = s.trajectory.last_valid_index().unwrap();
            assert_eq!(s.goal, s.trajectory.poses[last]);
            let mask = s.trajectory.mask.clone();
            let cr = collision_rate(&[CollisionCase {
                predicted: &s.trajectory.poses,
                future_mask: &mask,
                object_size: s.object_size,
                fixtures: &s.scene.fixtures,
            }])
            .unwrap();
            assert_eq!(cr, 0.0);
            assert_eq!(s.scene.cloud.len(), 128);

            // preprocessing a generated sample again changes nothing
            let raw = RawTrajectory::from_trajectory(&s.trajectory, sample_period(&cfg.preprocess)).unwrap();
            let object = ObjectInfo {
                category: s.category.clone(),
                size: s.object_size,
                description: s.description.clone(),
            };
            let again_cfg = PreprocessConfig { stride: 1, ..cfg.preprocess.clone() };
            let again = preprocess(&raw, &s.scene, &object, &again_cfg, 99).unwrap();
            assert_eq!(again, s);
        }
    }
}
