//! Modality encoders producing the token sets consumed by the fusion
//! transformer: trajectory tokens, global and per-point scene features,
//! fixture box and label tokens, the description embedding and the goal
//! feature.

use ndarray::{Array2, Axis};

use crate::autograd::{Graph, Var};
use crate::config::{ModelConfig, PointEncoderConfig};
use crate::data::Trajectory;
use crate::error::{GmtError, Result};
use crate::geometry::{Pose9, Vec3};
use crate::nn::{sinusoidal_encoding, Linear, MultiHeadAttention, PointMlp};
use crate::params::{Initializer, ParamStore};
use crate::pointscene::{
    ball_query_points, farthest_point_sampling_points, interpolation_weights, FixtureSet,
    PointCloud,
};
use crate::text::TextEmbedder;

/// Materialized token matrix with its validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTokens {
    pub tokens: Array2<f64>,
    pub valid_mask: Vec<bool>,
}

impl FeatureTokens {
    pub fn len(&self) -> usize {
        self.valid_mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.valid_mask.is_empty()
    }
}

/// Token set living on a tape.
#[derive(Debug, Clone)]
pub struct TokenSet {
    pub tokens: Var,
    pub mask: Vec<bool>,
}

impl TokenSet {
    pub fn materialize(&self, g: &Graph) -> FeatureTokens {
        FeatureTokens {
            tokens: g.value(self.tokens).to_owned(),
            valid_mask: self.mask.clone(),
        }
    }
}

fn poses_matrix<'a>(poses: impl Iterator<Item = &'a Pose9>, rows: usize) -> Array2<f64> {
    let mut m = Array2::zeros((rows, 9));
    for (i, p) in poses.enumerate() {
        for (j, v) in p.to_array().into_iter().enumerate() {
            m[(i, j)] = v;
        }
    }
    m
}

/// Lexicographic order on coordinates, so sampling does not depend on the
/// order points arrive in.
fn lexicographic_order(points: &[Vec3]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..points.len()).collect();
    idx.sort_by(|&a, &b| {
        let (p, q) = (points[a], points[b]);
        p.x.total_cmp(&q.x)
            .then(p.y.total_cmp(&q.y))
            .then(p.z.total_cmp(&q.z))
            .then(a.cmp(&b))
    });
    idx
}

/// Parameter-free geometry of the point encoder for one cloud: sampled
/// centers, neighbourhood groups and relative coordinates. Depends only on
/// the cloud and the encoder configuration, so it can be computed once per
/// sample and reused across training steps.
#[derive(Debug, Clone)]
pub struct PointPlan {
    sorted: Vec<Vec3>,
    /// `order[i]` is the original index of sorted point `i`.
    order: Vec<usize>,
    /// Per group member: `[(p − c)/r, p]`.
    sa1_input: Array2<f64>,
    sa1_groups: Vec<Vec<usize>>,
    sa2_centers: Vec<Vec3>,
    sa2_rel: Array2<f64>,
    /// Level-1 center index feeding each level-2 group member row.
    sa2_members: Vec<usize>,
    sa2_groups: Vec<Vec<usize>>,
    fp_k: usize,
}

impl PointPlan {
    pub fn new(cloud: &PointCloud, cfg: &PointEncoderConfig) -> Result<Self> {
        if cloud.is_empty() {
            return Err(GmtError::EmptyCloud);
        }
        if let Some(p) = cloud.points.iter().find(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(GmtError::InvalidInput(format!("non-finite point {p:?}")));
        }
        let order = lexicographic_order(&cloud.points);
        let sorted: Vec<Vec3> = order.iter().map(|&i| cloud.points[i]).collect();

        let m1 = cfg.sa1.centers.min(sorted.len());
        let c1_idx = farthest_point_sampling_points(&sorted, m1, cfg.fps_seed)?;
        let sa1_centers: Vec<Vec3> = c1_idx.iter().map(|&i| sorted[i]).collect();
        let groups1 = ball_query_points(&sorted, &sa1_centers, cfg.sa1.radius, cfg.sa1.max_k)?;
        let rows1: usize = groups1.iter().map(Vec::len).sum();
        let mut sa1_input = Array2::zeros((rows1, 6));
        let mut sa1_groups = Vec::with_capacity(m1);
        let mut row = 0;
        for (c, members) in sa1_centers.iter().zip(&groups1) {
            let mut rows = Vec::with_capacity(members.len());
            for &j in members {
                let p = sorted[j];
                let rel = (p - c) / cfg.sa1.radius;
                for k in 0..3 {
                    sa1_input[(row, k)] = rel[k];
                    sa1_input[(row, 3 + k)] = p[k];
                }
                rows.push(row);
                row += 1;
            }
            sa1_groups.push(rows);
        }

        let m2 = cfg.sa2.centers.min(m1);
        let c2_idx = farthest_point_sampling_points(&sa1_centers, m2, cfg.fps_seed)?;
        let sa2_centers: Vec<Vec3> = c2_idx.iter().map(|&i| sa1_centers[i]).collect();
        let groups2 = ball_query_points(&sa1_centers, &sa2_centers, cfg.sa2.radius, cfg.sa2.max_k)?;
        let rows2: usize = groups2.iter().map(Vec::len).sum();
        let mut sa2_rel = Array2::zeros((rows2, 3));
        let mut sa2_members = Vec::with_capacity(rows2);
        let mut sa2_groups = Vec::with_capacity(m2);
        let mut row = 0;
        for (c, members) in sa2_centers.iter().zip(&groups2) {
            let mut rows = Vec::with_capacity(members.len());
            for &j in members {
                let rel = (sa1_centers[j] - c) / cfg.sa2.radius;
                for k in 0..3 {
                    sa2_rel[(row, k)] = rel[k];
                }
                sa2_members.push(j);
                rows.push(row);
                row += 1;
            }
            sa2_groups.push(rows);
        }

        Ok(Self {
            sorted,
            order,
            sa1_input,
            sa1_groups,
            sa2_centers,
            sa2_rel,
            sa2_members,
            sa2_groups,
            fp_k: cfg.fp_k,
        })
    }

    pub fn num_points(&self) -> usize {
        self.sorted.len()
    }

    /// Sparse interpolation weights over the (sorted) cloud for each query;
    /// `None` queries produce an empty row.
    fn query_weights(&self, queries: &[Option<Vec3>]) -> (Vec<usize>, Array2<f64>) {
        let per_query: Vec<Vec<(usize, f64)>> = queries
            .iter()
            .map(|q| {
                q.map(|q| interpolation_weights(&self.sorted, &q, self.fp_k))
                    .unwrap_or_default()
            })
            .collect();
        let mut rows: Vec<usize> = per_query.iter().flatten().map(|&(i, _)| i).collect();
        rows.sort_unstable();
        rows.dedup();
        let mut w = Array2::zeros((queries.len(), rows.len()));
        for (qi, weights) in per_query.iter().enumerate() {
            for &(i, wi) in weights {
                let col = rows.binary_search(&i).expect("row collected above");
                w[(qi, col)] += wi;
            }
        }
        (rows, w)
    }
}

/// Two set-abstraction levels, a global max-pool and one feature
/// propagation pass back to the input points.
#[derive(Debug, Clone)]
pub struct PointEncoder {
    sa1: PointMlp,
    sa2: PointMlp,
    fp: PointMlp,
    fp_k: usize,
}

impl PointEncoder {
    pub fn new(store: &mut ParamStore, init: &mut Initializer, cfg: &PointEncoderConfig) -> Self {
        let sa1 = PointMlp::new(store, init, "encoders.points.sa1", 6, &cfg.sa1.widths);
        let sa2 = PointMlp::new(
            store,
            init,
            "encoders.points.sa2",
            3 + sa1.d_out(),
            &cfg.sa2.widths,
        );
        let fp = PointMlp::new(store, init, "encoders.points.fp", sa2.d_out() + 3, &cfg.fp_widths);
        Self {
            sa1,
            sa2,
            fp,
            fp_k: cfg.fp_k,
        }
    }

    /// Level-2 center features, `m2 × d_global`.
    pub fn abstract_features(&self, g: &mut Graph, plan: &PointPlan) -> Var {
        let x1 = g.input(plan.sa1_input.clone());
        let h1 = self.sa1.apply(g, x1);
        let l1 = g.group_max(h1, &plan.sa1_groups);
        let gathered = g.gather_rows(l1, &plan.sa2_members);
        let rel = g.input(plan.sa2_rel.clone());
        let x2 = g.concat_cols(&[rel, gathered]);
        let h2 = self.sa2.apply(g, x2);
        g.group_max(h2, &plan.sa2_groups)
    }

    pub fn global_feature(&self, g: &mut Graph, level2: Var) -> Var {
        let rows = g.shape(level2).0;
        g.group_max(level2, &[(0..rows).collect()])
    }

    /// Per-point features for sorted point indices `rows`.
    fn per_point_rows(&self, g: &mut Graph, plan: &PointPlan, level2: Var, rows: &[usize]) -> Var {
        let mut w = Array2::zeros((rows.len(), plan.sa2_centers.len()));
        let mut xyz = Array2::zeros((rows.len(), 3));
        for (r, &i) in rows.iter().enumerate() {
            let p = plan.sorted[i];
            for (c, wc) in interpolation_weights(&plan.sa2_centers, &p, self.fp_k) {
                w[(r, c)] += wc;
            }
            for k in 0..3 {
                xyz[(r, k)] = p[k];
            }
        }
        let interp = g.const_matmul(w, level2);
        let xyz = g.input(xyz);
        let x = g.concat_cols(&[interp, xyz]);
        self.fp.apply(g, x)
    }

    /// Local features interpolated at each query position; `None` rows are zero.
    pub fn local_features(
        &self,
        g: &mut Graph,
        plan: &PointPlan,
        level2: Var,
        queries: &[Option<Vec3>],
    ) -> Var {
        let (rows, w) = plan.query_weights(queries);
        if rows.is_empty() {
            let d = self.fp.d_out();
            return g.input(Array2::zeros((queries.len(), d)));
        }
        let per_point = self.per_point_rows(g, plan, level2, &rows);
        g.const_matmul(w, per_point)
    }

    /// Global feature and per-point features for every input point, in the
    /// cloud's original order.
    pub fn encode(&self, params: &ParamStore, cloud: &PointCloud, cfg: &PointEncoderConfig)
        -> Result<(Vec<f64>, Array2<f64>)> {
        let plan = PointPlan::new(cloud, cfg)?;
        let mut g = Graph::new(params);
        let level2 = self.abstract_features(&mut g, &plan);
        let global = self.global_feature(&mut g, level2);
        let all: Vec<usize> = (0..plan.num_points()).collect();
        let per_point = self.per_point_rows(&mut g, &plan, level2, &all);
        let sorted_rows = g.value(per_point);
        let mut out = Array2::zeros(sorted_rows.dim());
        for (sorted_i, &orig) in plan.order.iter().enumerate() {
            out.row_mut(orig).assign(&sorted_rows.row(sorted_i));
        }
        Ok((g.value(global).row(0).to_vec(), out))
    }
}

/// Every modality encoder of the model.
#[derive(Debug, Clone)]
pub struct Encoders {
    traj: Linear,
    pub points: PointEncoder,
    fixture_in: Linear,
    fixture_attn: MultiHeadAttention,
    label_proj: Linear,
    desc_proj: Linear,
    goal_in: Linear,
    goal_proj: Linear,
    goal_null: usize,
    d_traj: usize,
    d_fixture: usize,
    d_text: usize,
}

impl Encoders {
    pub fn new(store: &mut ParamStore, init: &mut Initializer, cfg: &ModelConfig) -> Self {
        Self {
            traj: Linear::new(store, init, "encoders.trajectory", 9, cfg.d_traj, true),
            points: PointEncoder::new(store, init, &cfg.point_encoder),
            fixture_in: Linear::new(store, init, "encoders.fixtures.in", 12, cfg.d_fixture, true),
            fixture_attn: MultiHeadAttention::new(
                store,
                init,
                "encoders.fixtures.attn",
                cfg.d_fixture,
                cfg.d_fixture,
                cfg.d_fixture,
                cfg.fixture_heads,
            ),
            label_proj: Linear::new(store, init, "encoders.labels", cfg.text_dim, cfg.d_text, true),
            desc_proj: Linear::new(
                store,
                init,
                "encoders.description",
                cfg.text_dim,
                cfg.d_text,
                true,
            ),
            goal_in: Linear::new(store, init, "encoders.goal.in", 9, cfg.d_goal, true),
            goal_proj: Linear::new(store, init, "encoders.goal.proj", cfg.d_goal, cfg.d_goal, true),
            goal_null: store.insert("encoders.goal.null", init.normal(1, cfg.d_goal, 0.02)),
            d_traj: cfg.d_traj,
            d_fixture: cfg.d_fixture,
            d_text: cfg.d_text,
        }
    }

    /// One token per row of `poses` (`H × 9`): linear map plus a sinusoidal
    /// encoding of `frame_index`, masked rows zeroed.
    pub fn trajectory_tokens(
        &self,
        g: &mut Graph,
        poses: Var,
        frame_index: &[usize],
        mask: &[bool],
    ) -> Result<TokenSet> {
        if !mask.iter().any(|&m| m) {
            return Err(GmtError::EmptyHistory);
        }
        let rows = g.shape(poses).0;
        assert_eq!(rows, frame_index.len());
        let h = self.traj.apply(g, poses);
        let max_index = frame_index.iter().copied().max().unwrap_or(0);
        let table = sinusoidal_encoding(max_index + 1, self.d_traj);
        let pe = table.select(Axis(0), frame_index);
        let h = g.add_const(h, &pe);
        let tokens = g.mask_rows(h, mask);
        Ok(TokenSet {
            tokens,
            mask: mask.to_vec(),
        })
    }

    /// Box tokens (self-attention over projected 12-D boxes, no positional
    /// encoding) and label tokens, aligned by index.
    pub fn fixture_tokens(
        &self,
        g: &mut Graph,
        boxes: Var,
        label_embeddings: Var,
    ) -> Result<(TokenSet, TokenSet)> {
        let k = g.shape(boxes).0;
        if k == 0 {
            let b = g.input(Array2::zeros((0, self.d_fixture)));
            let f = g.input(Array2::zeros((0, self.d_text)));
            return Ok((
                TokenSet { tokens: b, mask: vec![] },
                TokenSet { tokens: f, mask: vec![] },
            ));
        }
        let x = self.fixture_in.apply(g, boxes);
        let b = self.fixture_attn.apply(g, x, x, None)?;
        let f = self.label_proj.apply(g, label_embeddings);
        Ok((
            TokenSet { tokens: b, mask: vec![true; k] },
            TokenSet { tokens: f, mask: vec![true; k] },
        ))
    }

    pub fn description_feature(&self, g: &mut Graph, embedding: Var) -> Var {
        self.desc_proj.apply(g, embedding)
    }

    pub fn goal_feature(&self, g: &mut Graph, goal: Var) -> Var {
        let h = self.goal_in.apply(g, goal);
        self.goal_proj.apply(g, h)
    }

    /// Learned stand-in for the goal feature when goal conditioning is ablated.
    pub fn goal_null_token(&self, g: &mut Graph) -> Var {
        g.param(self.goal_null)
    }

    // Materialized entry points.

    pub fn encode_trajectory(&self, params: &ParamStore, history: &Trajectory) -> Result<FeatureTokens> {
        let mut g = Graph::new(params);
        let poses = poses_matrix(history.poses.iter(), history.len());
        let poses = g.input(poses);
        let idx: Vec<usize> = (0..history.len()).collect();
        let t = self.trajectory_tokens(&mut g, poses, &idx, &history.mask)?;
        Ok(t.materialize(&g))
    }

    /// Returns `(box tokens, label tokens)`.
    pub fn encode_fixtures(
        &self,
        params: &ParamStore,
        fixtures: &FixtureSet,
        embedder: &dyn TextEmbedder,
    ) -> Result<(FeatureTokens, FeatureTokens)> {
        let mut g = Graph::new(params);
        let (boxes, labels) = fixture_inputs(fixtures, embedder)?;
        let boxes = g.input(boxes);
        let labels = g.input(labels);
        let (b, f) = self.fixture_tokens(&mut g, boxes, labels)?;
        Ok((b.materialize(&g), f.materialize(&g)))
    }

    pub fn embed_description(
        &self,
        params: &ParamStore,
        description: &str,
        embedder: &dyn TextEmbedder,
    ) -> Result<Vec<f64>> {
        let e = description_input(description, embedder)?;
        let mut g = Graph::new(params);
        let e = g.input(e);
        let d = self.description_feature(&mut g, e);
        Ok(g.value(d).row(0).to_vec())
    }

    pub fn encode_goal(&self, params: &ParamStore, goal: &Pose9) -> Result<Vec<f64>> {
        let mut g = Graph::new(params);
        let x = g.input(poses_matrix(std::iter::once(goal), 1));
        let f = self.goal_feature(&mut g, x);
        Ok(g.value(f).row(0).to_vec())
    }
}

/// `K × 12` box parameters and `K × text_dim` label embeddings.
pub fn fixture_inputs(
    fixtures: &FixtureSet,
    embedder: &dyn TextEmbedder,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let k = fixtures.len();
    let mut boxes = Array2::zeros((k, 12));
    let mut labels = Array2::zeros((k, embedder.dim()));
    for (i, f) in fixtures.entries.iter().enumerate() {
        for (j, v) in f.bbox.to_array().into_iter().enumerate() {
            boxes[(i, j)] = v;
        }
        for (j, v) in embedder.embed(&f.label)?.into_iter().enumerate() {
            labels[(i, j)] = v;
        }
    }
    Ok((boxes, labels))
}

pub fn description_input(description: &str, embedder: &dyn TextEmbedder) -> Result<Array2<f64>> {
    if description.trim().is_empty() {
        return Err(GmtError::EmptyDescription);
    }
    let v = embedder.embed(description)?;
    Ok(Array2::from_shape_vec((1, v.len()), v).expect("row vector"))
}

pub fn pose_row(p: &Pose9) -> Array2<f64> {
    poses_matrix(std::iter::once(p), 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SetAbstractionConfig;
    use crate::geometry::{OrientedBox, Rot6D};
    use crate::pointscene::Fixture;
    use crate::text::HashingEmbedder;

    fn small_cfg() -> ModelConfig {
        ModelConfig {
            d_traj: 16,
            d_fixture: 16,
            d_text: 16,
            d_goal: 16,
            fixture_heads: 2,
            text_dim: 32,
            point_encoder: PointEncoderConfig {
                sa1: SetAbstractionConfig { centers: 16, radius: 0.3, max_k: 8, widths: vec![8, 8] },
                sa2: SetAbstractionConfig { centers: 4, radius: 0.6, max_k: 8, widths: vec![12] },
                fp_widths: vec![6],
                fp_k: 3,
                fps_seed: 0,
            },
            ..ModelConfig::default()
        }
    }

    fn build(cfg: &ModelConfig) -> (Encoders, ParamStore) {
        let mut store = ParamStore::default();
        let mut init = Initializer::new(7);
        let enc = Encoders::new(&mut store, &mut init, cfg);
        (enc, store)
    }

    fn cloud(n: usize) -> PointCloud {
        PointCloud::new(
            (0..n)
                .map(|i| {
                    let t = i as f64;
                    Vec3::new((t * 0.37).sin(), (t * 0.91).cos(), (t * 0.13).sin() * 0.5)
                })
                .collect(),
        )
    }

    fn fixture(x: f64, label: &str) -> Fixture {
        Fixture {
            label: label.into(),
            bbox: OrientedBox::new(
                Vec3::new(x, 0.5 * x, 0.4),
                Vec3::new(1.0, 0.6, 0.8),
                Rot6D::from_yaw(x),
            )
            .unwrap(),
        }
    }

    #[test]
    fn trajectory_tokens_shape_and_mask() {
        let cfg = ModelConfig::default();
        let (enc, store) = build(&cfg);
        let h = cfg.history_tokens();
        assert_eq!(h, 60);
        let poses: Vec<Pose9> = (0..h)
            .map(|i| Pose9::new(Vec3::new(i as f64 * 0.01, 0.0, 0.0), Rot6D::IDENTITY))
            .collect();
        let mut traj = Trajectory::dense(poses);
        for m in traj.mask[50..].iter_mut() {
            *m = false;
        }
        let t = enc.encode_trajectory(&store, &traj).unwrap();
        assert_eq!(t.tokens.dim(), (60, 128));
        assert!(t.tokens.row(55).iter().all(|&v| v == 0.0));
        let none = Trajectory::new(traj.poses.clone(), vec![false; h]).unwrap();
        assert!(matches!(enc.encode_trajectory(&store, &none), Err(GmtError::EmptyHistory)));
    }

    #[test]
    fn zero_weights_give_positional_encoding() {
        let cfg = small_cfg();
        let (enc, mut store) = build(&cfg);
        store.get_mut("encoders.trajectory.weight").unwrap().fill(0.0);
        let traj = Trajectory::dense(vec![Pose9::new(Vec3::zeros(), Rot6D::IDENTITY); 4]);
        let t = enc.encode_trajectory(&store, &traj).unwrap();
        assert_eq!(t.tokens, sinusoidal_encoding(4, cfg.d_traj));
    }

    #[test]
    fn swapping_frames_swaps_only_their_tokens() {
        let cfg = small_cfg();
        let (enc, store) = build(&cfg);
        let poses: Vec<Pose9> = (0..5)
            .map(|i| Pose9::new(Vec3::new(i as f64, 1.0 - i as f64, 0.5), Rot6D::from_yaw(i as f64)))
            .collect();
        let a = enc.encode_trajectory(&store, &Trajectory::dense(poses.clone())).unwrap();
        let mut swapped = poses;
        swapped.swap(1, 3);
        let b = enc.encode_trajectory(&store, &Trajectory::dense(swapped)).unwrap();
        for r in [0, 2, 4] {
            assert_eq!(a.tokens.row(r), b.tokens.row(r));
        }
        for r in [1, 3] {
            assert_ne!(a.tokens.row(r), b.tokens.row(r));
        }
    }

    #[test]
    fn point_encoder_permutation_invariant() {
        let cfg = small_cfg();
        let (enc, store) = build(&cfg);
        let c = cloud(64);
        let (g1, p1) = enc.points.encode(&store, &c, &cfg.point_encoder).unwrap();
        let mut rev = c.clone();
        rev.points.reverse();
        let (g2, p2) = enc.points.encode(&store, &rev, &cfg.point_encoder).unwrap();
        for (a, b) in g1.iter().zip(&g2) {
            assert!((a - b).abs() < 1e-6);
        }
        assert_eq!(p1.nrows(), 64);
        for i in 0..64 {
            let diff = (&p1.row(i) - &p2.row(63 - i)).mapv(f64::abs).sum();
            assert!(diff < 1e-9);
        }
    }

    #[test]
    fn repeated_point_gives_identical_rows() {
        let cfg = small_cfg();
        let (enc, store) = build(&cfg);
        let c = PointCloud::new(vec![Vec3::new(0.2, -0.1, 0.3); 32]);
        let (_, per_point) = enc.points.encode(&store, &c, &cfg.point_encoder).unwrap();
        for r in 1..32 {
            assert_eq!(per_point.row(0), per_point.row(r));
        }
        assert!(matches!(
            enc.points.encode(&store, &PointCloud::new(vec![]), &cfg.point_encoder),
            Err(GmtError::EmptyCloud)
        ));
    }

    #[test]
    fn translation_changes_global_feature() {
        let cfg = small_cfg();
        let (enc, store) = build(&cfg);
        let c = cloud(48);
        let (g1, _) = enc.points.encode(&store, &c, &cfg.point_encoder).unwrap();
        let shifted = PointCloud::new(c.points.iter().map(|p| p + Vec3::new(10.0, 0.0, 0.0)).collect());
        let (g2, _) = enc.points.encode(&store, &shifted, &cfg.point_encoder).unwrap();
        let diff: f64 = g1.iter().zip(&g2).map(|(a, b)| (a - b).abs()).sum();
        assert!(diff > 1e-3, "global feature unchanged under translation");
    }

    #[test]
    fn single_fixture_attends_to_itself() {
        let cfg = small_cfg();
        let (enc, store) = build(&cfg);
        let emb = HashingEmbedder::new(cfg.text_dim);
        let set = FixtureSet::new(vec![fixture(0.3, "table")]).unwrap();
        let (b, f) = enc.encode_fixtures(&store, &set, &emb).unwrap();
        assert_eq!(b.tokens.dim(), (1, 16));
        assert_eq!(f.tokens.dim(), (1, 16));
        // value projection followed by the output projection
        let x = fixture_inputs(&set, &emb).unwrap().0;
        let x = x.dot(store.get("encoders.fixtures.in.weight").unwrap())
            + store.get("encoders.fixtures.in.bias").unwrap();
        let v = x
            .dot(store.get("encoders.fixtures.attn.v.weight").unwrap())
            .dot(store.get("encoders.fixtures.attn.out.weight").unwrap());
        assert!((&v - &b.tokens).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn fixture_encoding_is_permutation_equivariant() {
        let cfg = small_cfg();
        let (enc, store) = build(&cfg);
        let emb = HashingEmbedder::new(cfg.text_dim);
        let set = FixtureSet::new(vec![fixture(0.3, "table"), fixture(1.1, "shelf"), fixture(-0.7, "bed")])
            .unwrap();
        let perm = [2, 0, 1];
        let permuted = FixtureSet::new(perm.iter().map(|&i| set.entries[i].clone()).collect()).unwrap();
        let (b1, f1) = enc.encode_fixtures(&store, &set, &emb).unwrap();
        let (b2, f2) = enc.encode_fixtures(&store, &permuted, &emb).unwrap();
        for (new_row, &old_row) in perm.iter().enumerate() {
            let db = (&b2.tokens.row(new_row) - &b1.tokens.row(old_row)).mapv(f64::abs).sum();
            let df = (&f2.tokens.row(new_row) - &f1.tokens.row(old_row)).mapv(f64::abs).sum();
            assert!(db < 1e-6 && df < 1e-12);
        }
    }

    #[test]
    fn identical_boxes_identical_tokens_and_empty_set() {
        let cfg = small_cfg();
        let (enc, store) = build(&cfg);
        let emb = HashingEmbedder::new(cfg.text_dim);
        let set = FixtureSet::new(vec![fixture(0.3, "table"), fixture(0.3, "table")]).unwrap();
        let (b, _) = enc.encode_fixtures(&store, &set, &emb).unwrap();
        assert_eq!(b.tokens.row(0), b.tokens.row(1));
        let (b, f) = enc.encode_fixtures(&store, &FixtureSet::default(), &emb).unwrap();
        assert!(b.is_empty() && f.is_empty());
    }

    #[test]
    fn description_and_goal() {
        let cfg = ModelConfig::default();
        let (enc, store) = build(&cfg);
        let emb = HashingEmbedder::new(cfg.text_dim);
        let d1 = enc.embed_description(&store, "pick up the cup", &emb).unwrap();
        assert_eq!(d1.len(), 128);
        assert_eq!(d1, enc.embed_description(&store, "pick up the cup", &emb).unwrap());
        assert!(matches!(
            enc.embed_description(&store, "  ", &emb),
            Err(GmtError::EmptyDescription)
        ));
        let zero = Pose9::from_slice(&[0.0; 9]);
        let g0 = enc.encode_goal(&store, &zero).unwrap();
        assert_eq!(g0.len(), 128);
        assert!(g0.iter().all(|&v| v == 0.0));
        let ga = enc.encode_goal(&store, &Pose9::new(Vec3::new(1.0, 0.0, 0.5), Rot6D::IDENTITY)).unwrap();
        let gb = enc.encode_goal(&store, &Pose9::new(Vec3::new(0.0, 1.0, 0.5), Rot6D::IDENTITY)).unwrap();
        assert_ne!(ga, gb);
    }

    #[test]
    fn extreme_inputs_stay_finite() {
        let cfg = small_cfg();
        let (enc, store) = build(&cfg);
        let emb = HashingEmbedder::new(cfg.text_dim);
        let big = Pose9::from_slice(&[1e3, -1e3, 1e3, 1e3, 0.0, 0.0, 0.0, -1e3, 0.0]);
        let t = enc.encode_trajectory(&store, &Trajectory::dense(vec![big; 3])).unwrap();
        assert!(t.tokens.iter().all(|v| v.is_finite()));
        assert!(enc.encode_goal(&store, &big).unwrap().iter().all(|v| v.is_finite()));
        let far = PointCloud::new(cloud(20).points.iter().map(|p| p * 1e3).collect());
        let (gf, pf) = enc.points.encode(&store, &far, &cfg.point_encoder).unwrap();
        assert!(gf.iter().all(|v| v.is_finite()) && pf.iter().all(|v| v.is_finite()));
        let huge = FixtureSet::new(vec![
            Fixture {
                label: "counter".into(),
                bbox: OrientedBox::axis_aligned(Vec3::new(1e3, -1e3, 1e3), Vec3::new(1e3, 1e3, 1e3))
                    .unwrap(),
            },
            fixture(0.0, "bed"),
        ])
        .unwrap();
        let (b, _) = enc.encode_fixtures(&store, &huge, &emb).unwrap();
        assert!(b.tokens.iter().all(|v| v.is_finite()));
    }
}
