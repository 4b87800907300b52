//! Scene geometry: point clouds, fixtures, local-region extraction and the
//! sampling/grouping/interpolation primitives behind the point encoder.

use ndarray::{Array1, Array2, Axis};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Trajectory;
use crate::error::{GmtError, Result};
use crate::geometry::{OrientedBox, Vec3};

/// Distance below which a query snaps to the coincident point's feature.
pub const SNAP_DISTANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    /// `N × C`, one row per point.
    pub features: Option<Array2<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Self {
        Self {
            points,
            features: None,
        }
    }

    pub fn with_features(points: Vec<Vec3>, features: Array2<f64>) -> Result<Self> {
        if features.nrows() != points.len() {
            return Err(GmtError::LengthMismatch {
                what: "feature rows vs points",
                left: features.nrows(),
                right: points.len(),
            });
        }
        Ok(Self {
            points,
            features: Some(features),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> PointCloud {
        PointCloud {
            points: idx.iter().map(|&i| self.points[i]).collect(),
            features: self.features.as_ref().map(|f| f.select(Axis(0), idx)),
        }
    }

    pub fn to_matrix(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.len(), 3), |(i, j)| self.points[i][j])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fixture {
    pub label: String,
    pub bbox: OrientedBox,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FixtureSet {
    pub entries: Vec<Fixture>,
}

impl FixtureSet {
    pub fn new(entries: Vec<Fixture>) -> Result<Self> {
        if let Some(f) = entries.iter().find(|f| f.label.is_empty()) {
            return Err(GmtError::InvalidInput(format!(
                "fixture at {:?} has an empty label",
                f.bbox.center
            )));
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn boxes(&self) -> impl Iterator<Item = &OrientedBox> {
        self.entries.iter().map(|f| &f.bbox)
    }
}

/// Scene points within `radius` of any valid trajectory position, in scene order.
pub fn extract_local_cloud(
    scene: &PointCloud,
    trajectory: &Trajectory,
    radius: f64,
) -> Result<PointCloud> {
    if !(radius > 0.0) {
        return Err(GmtError::InvalidInput(format!("radius must be positive, got {radius}")));
    }
    let centers = trajectory.valid_positions();
    if centers.is_empty() {
        return Err(GmtError::TooShort { valid: 0, needed: 1 });
    }
    let r2 = radius * radius;
    let keep: Vec<usize> = scene
        .points
        .iter()
        .enumerate()
        .filter(|(_, p)| centers.iter().any(|c| (*p - c).norm_squared() <= r2))
        .map(|(i, _)| i)
        .collect();
    if keep.is_empty() {
        return Err(GmtError::EmptyRegion { radius });
    }
    Ok(scene.select(&keep))
}

/// Greedy farthest-point sampling starting from index `seed mod N`. Ties go
/// to the lowest index.
pub fn farthest_point_sampling(cloud: &PointCloud, m: usize, seed: u64) -> Result<Vec<usize>> {
    farthest_point_sampling_points(&cloud.points, m, seed)
}

pub(crate) fn farthest_point_sampling_points(
    points: &[Vec3],
    m: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    let n = points.len();
    if m == 0 || m > n {
        return Err(GmtError::BadCount {
            requested: m,
            available: n,
        });
    }
    let start = (seed % n as u64) as usize;
    let mut chosen = Vec::with_capacity(m);
    chosen.push(start);
    let mut min_d2: Vec<f64> = points
        .iter()
        .map(|p| (p - points[start]).norm_squared())
        .collect();
    while chosen.len() < m {
        let mut best = 0;
        let mut best_d = f64::NEG_INFINITY;
        for (i, &d) in min_d2.iter().enumerate() {
            if d > best_d {
                best = i;
                best_d = d;
            }
        }
        chosen.push(best);
        let pb = points[best];
        for (d, p) in min_d2.iter_mut().zip(points) {
            let nd = (p - pb).norm_squared();
            if nd < *d {
                *d = nd;
            }
        }
    }
    Ok(chosen)
}

/// For every center, the points within `radius`, nearest first (ties by
/// index), truncated to `max_k`.
pub fn ball_query(
    cloud: &PointCloud,
    centers: &[Vec3],
    radius: f64,
    max_k: usize,
) -> Result<Vec<Vec<usize>>> {
    ball_query_points(&cloud.points, centers, radius, max_k)
}

pub(crate) fn ball_query_points(
    points: &[Vec3],
    centers: &[Vec3],
    radius: f64,
    max_k: usize,
) -> Result<Vec<Vec<usize>>> {
    if !(radius > 0.0) || max_k == 0 {
        return Err(GmtError::InvalidInput(format!(
            "ball query needs radius > 0 and max_k >= 1 (got {radius}, {max_k})"
        )));
    }
    let r2 = radius * radius;
    Ok(centers
        .iter()
        .map(|c| {
            let mut hits: Vec<(f64, usize)> = points
                .iter()
                .enumerate()
                .filter_map(|(i, p)| {
                    let d = (p - c).norm_squared();
                    (d <= r2).then_some((d, i))
                })
                .collect();
            hits.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            hits.truncate(max_k);
            hits.into_iter().map(|(_, i)| i).collect()
        })
        .collect())
}

/// Normalized interpolation weights `(index, weight)` for a query over the
/// `k` nearest points, with inverse-squared-distance weights. A query within
/// [`SNAP_DISTANCE`] of a point returns that point with weight one.
pub fn interpolation_weights(points: &[Vec3], query: &Vec3, k: usize) -> Vec<(usize, f64)> {
    assert!(!points.is_empty(), "interpolation over an empty cloud");
    let k = k.clamp(1, points.len());
    let nearest = k_nearest(points, query, k);
    let (closest_d2, closest) = nearest[0];
    if closest_d2.sqrt() < SNAP_DISTANCE {
        return vec![(closest, 1.0)];
    }
    let w: Vec<f64> = nearest.iter().map(|(d2, _)| 1.0 / d2).collect();
    let total: f64 = w.iter().sum();
    nearest
        .iter()
        .zip(w)
        .map(|(&(_, i), wi)| (i, wi / total))
        .collect()
}

/// `k` smallest squared distances, ascending, ties by index.
fn k_nearest(points: &[Vec3], query: &Vec3, k: usize) -> Vec<(f64, usize)> {
    let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
    for (i, p) in points.iter().enumerate() {
        let d = (p - query).norm_squared();
        if best.len() == k && d >= best[k - 1].0 {
            continue;
        }
        let pos = best.partition_point(|&(bd, _)| bd <= d);
        best.insert(pos, (d, i));
        best.truncate(k);
    }
    best
}

/// Inverse-squared-distance interpolation of per-point features at `query`.
pub fn propagate_features(cloud: &PointCloud, query: &Vec3, k: usize) -> Result<Array1<f64>> {
    let features = cloud.features.as_ref().ok_or(GmtError::MissingFeatures)?;
    if cloud.is_empty() {
        return Err(GmtError::EmptyCloud);
    }
    if k == 0 {
        return Err(GmtError::BadCount {
            requested: 0,
            available: cloud.len(),
        });
    }
    let mut out = Array1::zeros(features.ncols());
    for (i, w) in interpolation_weights(&cloud.points, query, k) {
        out.scaled_add(w, &features.row(i));
    }
    Ok(out)
}

/// Up to `k` fixtures closest to the trajectory, measured from each box
/// center to the nearest valid trajectory position. Nearest first, ties by
/// original index.
pub fn nearest_fixtures(fixtures: &FixtureSet, trajectory: &Trajectory, k: usize) -> Result<FixtureSet> {
    if k == 0 {
        return Err(GmtError::BadCount {
            requested: 0,
            available: fixtures.len(),
        });
    }
    let positions = trajectory.valid_positions();
    if positions.is_empty() {
        return Err(GmtError::TooShort { valid: 0, needed: 1 });
    }
    let mut ranked: Vec<(f64, usize)> = fixtures
        .entries
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let d = positions
                .iter()
                .map(|p| (p - f.bbox.center).norm())
                .fold(f64::INFINITY, f64::min);
            (d, i)
        })
        .collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    ranked.truncate(k);
    Ok(FixtureSet {
        entries: ranked
            .into_iter()
            .map(|(_, i)| fixtures.entries[i].clone())
            .collect(),
    })
}

/// Bring a cloud to exactly `budget` points: a seeded subsample without
/// replacement (kept in cloud order) when larger, the full cloud followed by
/// seeded draws with replacement when smaller.
pub fn fit_to_budget(cloud: &PointCloud, budget: usize, seed: u64) -> Result<PointCloud> {
    let n = cloud.len();
    if n == 0 {
        return Err(GmtError::EmptyCloud);
    }
    if budget == 0 {
        return Err(GmtError::BadCount {
            requested: 0,
            available: n,
        });
    }
    if n == budget {
        return Ok(cloud.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx: Vec<usize> = if n > budget {
        let mut picked = index::sample(&mut rng, n, budget).into_vec();
        picked.sort_unstable();
        picked
    } else {
        (0..n)
            .chain((n..budget).map(|_| rng.random_range(0..n)))
            .collect()
    };
    Ok(cloud.select(&idx))
}
