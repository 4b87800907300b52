//! On-disk dataset: one JSON document per sample (schema `gmt-sample/1`),
//! one directory per split and an `index.json` listing sample paths.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{SceneContext, Trajectory, TrajectorySample};
use crate::error::{GmtError, Result};
use crate::geometry::{OrientedBox, Pose9, Vec3};
use crate::pointscene::{Fixture, FixtureSet, PointCloud};

pub const SAMPLE_SCHEMA: &str = "gmt-sample/1";
pub const INDEX_SCHEMA: &str = "gmt-index/1";
pub const INDEX_FILE: &str = "index.json";
pub const SPLITS: [&str; 3] = ["train", "val", "test"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureDoc {
    pub label: String,
    /// Center, size, then the 6D rotation.
    #[serde(rename = "box")]
    pub bbox: [f64; 12],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleDoc {
    pub schema: String,
    pub trajectory: Vec<[f64; 9]>,
    pub mask: Vec<bool>,
    pub category: String,
    pub object_size: [f64; 3],
    pub description: String,
    pub goal: [f64; 9],
    pub points: Vec<[f64; 3]>,
    pub fixtures: Vec<FixtureDoc>,
}

impl From<&TrajectorySample> for SampleDoc {
    fn from(s: &TrajectorySample) -> Self {
        Self {
            schema: SAMPLE_SCHEMA.to_string(),
            trajectory: s.trajectory.poses.iter().map(Pose9::to_array).collect(),
            mask: s.trajectory.mask.clone(),
            category: s.category.clone(),
            object_size: s.object_size.into(),
            description: s.description.clone(),
            goal: s.goal.to_array(),
            points: s.scene.cloud.points.iter().map(|&p| p.into()).collect(),
            fixtures: s
                .scene
                .fixtures
                .entries
                .iter()
                .map(|f| FixtureDoc {
                    label: f.label.clone(),
                    bbox: f.bbox.to_array(),
                })
                .collect(),
        }
    }
}

impl SampleDoc {
    /// Validate and convert. `path` only labels errors.
    pub fn into_sample(self, path: &Path) -> Result<TrajectorySample> {
        let bad = |m: String| GmtError::schema(path, m);
        if self.schema != SAMPLE_SCHEMA {
            return Err(bad(format!("expected schema {SAMPLE_SCHEMA}, found {:?}", self.schema)));
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !self.trajectory.iter().all(|r| finite(r)) || !finite(&self.goal) || !finite(&self.object_size) {
            return Err(bad("non-finite pose or size value".into()));
        }
        if !self.points.iter().all(|p| finite(p)) {
            return Err(bad("non-finite point".into()));
        }
        let poses: Vec<Pose9> = self.trajectory.iter().map(|r| Pose9::from_slice(r)).collect();
        let trajectory = Trajectory::new(poses, self.mask).map_err(|e| bad(e.to_string()))?;
        if trajectory.valid_count() < 2 {
            return Err(bad("trajectory needs at least two valid frames".into()));
        }
        for i in trajectory.valid_indices() {
            trajectory.poses[i]
                .rotation
                .to_matrix()
                .map_err(|e| bad(format!("frame {i}: {e}")))?;
        }
        let object_size = Vec3::from(self.object_size);
        if object_size.iter().any(|&s| s <= 0.0) {
            return Err(bad("object_size must be positive".into()));
        }
        if self.description.trim().is_empty() {
            return Err(bad("description is empty".into()));
        }
        if self.points.is_empty() {
            return Err(bad("point cloud is empty".into()));
        }
        let fixtures = self
            .fixtures
            .into_iter()
            .map(|f| {
                Ok(Fixture {
                    label: f.label,
                    bbox: OrientedBox::from_slice(&f.bbox).map_err(|e| bad(e.to_string()))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let fixtures = FixtureSet::new(fixtures).map_err(|e| bad(e.to_string()))?;
        Ok(TrajectorySample {
            trajectory,
            category: self.category,
            object_size,
            description: self.description,
            scene: SceneContext {
                cloud: PointCloud::new(self.points.into_iter().map(Vec3::from).collect()),
                fixtures,
            },
            goal: Pose9::from_slice(&self.goal),
        })
    }
}

fn to_json_line<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec(value).expect("plain data always serializes");
    bytes.push(b'\n');
    bytes
}

pub fn write_sample(path: &Path, sample: &TrajectorySample) -> Result<()> {
    fs::write(path, to_json_line(&SampleDoc::from(sample))).map_err(|e| GmtError::io(path, e))
}

pub fn read_sample(path: &Path) -> Result<TrajectorySample> {
    let text = fs::read_to_string(path).map_err(|e| GmtError::io(path, e))?;
    let doc: SampleDoc = serde_json::from_str(&text).map_err(|e| GmtError::schema(path, e.to_string()))?;
    doc.into_sample(path)
}

/// Sample paths per split, relative to the dataset root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetIndex {
    pub schema: String,
    pub splits: BTreeMap<String, Vec<String>>,
}

impl DatasetIndex {
    pub fn split(&self, name: &str) -> Result<&[String]> {
        self.splits
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| GmtError::InvalidInput(format!("dataset has no split {name:?}")))
    }
}

/// Write `dir/{split}/{i:06}.json` for each split plus the index.
pub fn write_dataset(dir: &Path, splits: &[(&str, &[TrajectorySample])]) -> Result<DatasetIndex> {
    let mut index = DatasetIndex {
        schema: INDEX_SCHEMA.to_string(),
        splits: BTreeMap::new(),
    };
    for (name, samples) in splits {
        let sub = dir.join(name);
        fs::create_dir_all(&sub).map_err(|e| GmtError::io(&sub, e))?;
        let mut paths = Vec::with_capacity(samples.len());
        for (i, s) in samples.iter().enumerate() {
            let rel = format!("{name}/{i:06}.json");
            write_sample(&dir.join(&rel), s)?;
            paths.push(rel);
        }
        index.splits.insert(name.to_string(), paths);
    }
    let path = dir.join(INDEX_FILE);
    fs::write(&path, to_json_line(&index)).map_err(|e| GmtError::io(&path, e))?;
    Ok(index)
}

pub fn read_index(dir: &Path) -> Result<DatasetIndex> {
    let path = dir.join(INDEX_FILE);
    let text = fs::read_to_string(&path).map_err(|e| GmtError::io(&path, e))?;
    let index: DatasetIndex = serde_json::from_str(&text).map_err(|e| GmtError::schema(&path, e.to_string()))?;
    if index.schema != INDEX_SCHEMA {
        return Err(GmtError::schema(&path, format!("expected schema {INDEX_SCHEMA}")));
    }
    Ok(index)
}

/// All samples of one split, with their paths, in index order.
pub fn load_split(dir: &Path, split: &str) -> Result<Vec<(PathBuf, TrajectorySample)>> {
    let index = read_index(dir)?;
    index
        .split(split)?
        .iter()
        .map(|rel| {
            let p = dir.join(rel);
            read_sample(&p).map(|s| (p, s))
        })
        .collect()
}
