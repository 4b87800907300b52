//! Trajectory and sample containers.

use ndarray::Array2;

use crate::error::{GmtError, Result};
use crate::geometry::{Pose9, Vec3};
use crate::pointscene::{FixtureSet, PointCloud};

/// Fixed-length pose sequence with a validity mask. Valid frames need not be
/// contiguous, but generated and preprocessed data always form a prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub poses: Vec<Pose9>,
    pub mask: Vec<bool>,
}

impl Trajectory {
    pub fn new(poses: Vec<Pose9>, mask: Vec<bool>) -> Result<Self> {
        if poses.len() != mask.len() {
            return Err(GmtError::LengthMismatch {
                what: "poses vs mask",
                left: poses.len(),
                right: mask.len(),
            });
        }
        Ok(Self { poses, mask })
    }

    /// All frames valid.
    pub fn dense(poses: Vec<Pose9>) -> Self {
        let mask = vec![true; poses.len()];
        Self { poses, mask }
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn valid_indices(&self) -> Vec<usize> {
        self.mask
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
            .collect()
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn last_valid_index(&self) -> Option<usize> {
        self.mask.iter().rposition(|&m| m)
    }

    pub fn valid_positions(&self) -> Vec<Vec3> {
        self.poses
            .iter()
            .zip(&self.mask)
            .filter_map(|(p, &m)| m.then_some(p.position))
            .collect()
    }

    /// `T × 9` matrix of every frame, padded or not.
    pub fn to_matrix(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.len(), 9));
        for (i, p) in self.poses.iter().enumerate() {
            for (j, v) in p.to_array().into_iter().enumerate() {
                out[(i, j)] = v;
            }
        }
        out
    }

    pub fn from_matrix(m: &Array2<f64>, mask: Vec<bool>) -> Result<Self> {
        if m.ncols() != 9 {
            return Err(GmtError::InvalidInput(format!(
                "trajectory matrix needs 9 columns, got {}",
                m.ncols()
            )));
        }
        let poses = m
            .outer_iter()
            .map(|row| Pose9::from_slice(row.as_slice().expect("standard layout")))
            .collect();
        Self::new(poses, mask)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneContext {
    pub cloud: PointCloud,
    pub fixtures: FixtureSet,
}

/// One training record.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySample {
    pub trajectory: Trajectory,
    pub category: String,
    /// Full extents of the moved object's box (meters).
    pub object_size: Vec3,
    pub description: String,
    pub scene: SceneContext,
    pub goal: Pose9,
}

impl TrajectorySample {
    pub fn seq_len(&self) -> usize {
        self.trajectory.len()
    }
}

/// History/future partition of a trajectory's valid frames.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameSplit {
    pub history: Vec<usize>,
    pub future: Vec<usize>,
}

impl FrameSplit {
    pub fn last_valid(&self) -> usize {
        *self
            .future
            .last()
            .or(self.history.last())
            .expect("split holds at least two frames")
    }

    pub fn history_mask(&self, len: usize) -> Vec<bool> {
        index_mask(&self.history, len)
    }

    pub fn future_mask(&self, len: usize) -> Vec<bool> {
        index_mask(&self.future, len)
    }
}

fn index_mask(idx: &[usize], len: usize) -> Vec<bool> {
    let mut m = vec![false; len];
    for &i in idx {
        m[i] = true;
    }
    m
}

/// History length for `valid` frames: `ceil(ratio · valid)`.
pub fn history_len(valid: usize, input_ratio: f64) -> usize {
    // guard against 0.3 * 200 = 60.00000000000001 rounding up to 61
    let raw = input_ratio * valid as f64;
    let rounded = raw.round();
    if (raw - rounded).abs() < 1e-9 {
        rounded as usize
    } else {
        raw.ceil() as usize
    }
}

/// First `ceil(ratio · T_valid)` valid frames are history, the rest future.
pub fn split_history_future(traj: &Trajectory, input_ratio: f64) -> Result<FrameSplit> {
    if !(input_ratio > 0.0 && input_ratio < 1.0) {
        return Err(GmtError::InvalidInput(format!(
            "input ratio must lie in (0, 1), got {input_ratio}"
        )));
    }
    let valid = traj.valid_indices();
    if valid.len() < 2 {
        return Err(GmtError::TooShort {
            valid: valid.len(),
            needed: 2,
        });
    }
    // keep at least one future frame
    let h = history_len(valid.len(), input_ratio).clamp(1, valid.len() - 1);
    Ok(FrameSplit {
        history: valid[..h].to_vec(),
        future: valid[h..].to_vec(),
    })
}
