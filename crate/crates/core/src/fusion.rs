//! The latent-array fusion transformer and the full prediction model.
//!
//! A learnable latent array repeatedly cross-attends to modality tokens and
//! then mixes among its own slots. One such stack fuses trajectory tokens
//! with local scene geometry; a second, with one slot per output frame,
//! reads the assembled multimodal context and feeds a linear pose head.

use std::sync::Arc;

use ndarray::Array2;

use crate::autograd::{Graph, Var};
use crate::config::{Ablation, FusionConfig, ModelConfig};
use crate::data::{split_history_future, FrameSplit, TrajectorySample};
use crate::encoders::{
    description_input, fixture_inputs, pose_row, Encoders, PointPlan, TokenSet,
};
use crate::error::{GmtError, Result};
use crate::geometry::{Pose9, Vec3};
use crate::nn::{FeedForward, LayerNorm, Linear, MultiHeadAttention};
use crate::params::{Initializer, ParamStore};
use crate::text::{build_embedder, TextEmbedder};

/// One cross-attention + latent self-attention + feed-forward layer, all
/// pre-norm residual.
#[derive(Debug, Clone)]
pub struct LatentLayer {
    ln_query: LayerNorm,
    ln_tokens: LayerNorm,
    cross: MultiHeadAttention,
    ln_self: LayerNorm,
    self_attn: MultiHeadAttention,
    ln_ffn: LayerNorm,
    ffn: FeedForward,
}

impl LatentLayer {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Initializer,
        name: &str,
        d_tokens: usize,
        cfg: &FusionConfig,
    ) -> Self {
        let d = cfg.d_latent;
        Self {
            ln_query: LayerNorm::new(store, &format!("{name}.cross.ln_query"), d),
            ln_tokens: LayerNorm::new(store, &format!("{name}.cross.ln_tokens"), d_tokens),
            cross: MultiHeadAttention::new(
                store,
                init,
                &format!("{name}.cross.attn"),
                d,
                d_tokens,
                d,
                cfg.heads,
            ),
            ln_self: LayerNorm::new(store, &format!("{name}.self.ln"), d),
            self_attn: MultiHeadAttention::new(
                store,
                init,
                &format!("{name}.self.attn"),
                d,
                d,
                d,
                cfg.heads,
            ),
            ln_ffn: LayerNorm::new(store, &format!("{name}.ffn.ln"), d),
            ffn: FeedForward::new(store, init, &format!("{name}.ffn"), d, cfg.ffn_hidden),
        }
    }

    /// `Z + CrossAttn(LN(Z), LN(X))` with masked key tokens excluded.
    pub fn cross_attend(&self, g: &mut Graph, z: Var, tokens: Var, mask: &[bool]) -> Result<Var> {
        if !mask.iter().any(|&m| m) {
            return Err(GmtError::AllTokensMasked);
        }
        let q = self.ln_query.apply(g, z);
        let kv = self.ln_tokens.apply(g, tokens);
        let attended = self.cross.apply(g, q, kv, Some(mask))?;
        Ok(g.add(z, attended))
    }

    /// Latent self-attention then feed-forward, each with a residual.
    pub fn latent_block(&self, g: &mut Graph, z: Var) -> Var {
        let s = self.ln_self.apply(g, z);
        let attended = self
            .self_attn
            .apply(g, s, s, None)
            .expect("unmasked self-attention");
        let z = g.add(z, attended);
        let f = self.ln_ffn.apply(g, z);
        let f = self.ffn.apply(g, f);
        g.add(z, f)
    }

    pub fn apply(&self, g: &mut Graph, z: Var, tokens: Var, mask: &[bool]) -> Result<Var> {
        let z = self.cross_attend(g, z, tokens, mask)?;
        Ok(self.latent_block(g, z))
    }
}

/// Learnable latent array plus a stack of [`LatentLayer`]s.
#[derive(Debug, Clone)]
pub struct LatentTransformer {
    latents: usize,
    layers: Vec<LatentLayer>,
    n_latent: usize,
}

impl LatentTransformer {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Initializer,
        name: &str,
        n_latent: usize,
        d_tokens: usize,
        depth: usize,
        cfg: &FusionConfig,
    ) -> Self {
        let latents = store.insert(format!("{name}.latents"), init.normal(n_latent, cfg.d_latent, 0.02));
        let layers = (0..depth)
            .map(|i| LatentLayer::new(store, init, &format!("{name}.layers.{i}"), d_tokens, cfg))
            .collect();
        Self {
            latents,
            layers,
            n_latent,
        }
    }

    pub fn n_latent(&self) -> usize {
        self.n_latent
    }

    pub fn layers(&self) -> &[LatentLayer] {
        &self.layers
    }

    pub fn initial_latents(&self, g: &mut Graph) -> Var {
        g.param(self.latents)
    }

    pub fn apply(&self, g: &mut Graph, tokens: Var, mask: &[bool]) -> Result<Var> {
        let mut z = self.initial_latents(g);
        for layer in &self.layers {
            z = layer.apply(g, z, tokens, mask)?;
        }
        Ok(z)
    }
}

/// Token-type order of the assembled context.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    TrajectorySpatial = 0,
    FixtureBoxes = 1,
    FixtureLabels = 2,
    Description = 3,
    GlobalScene = 4,
    Goal = 5,
}

/// Layer layout of the full model. Holds parameter ids, not values.
#[derive(Debug, Clone)]
pub struct Network {
    pub encoders: Encoders,
    pub spatial: LatentTransformer,
    proj: [Linear; 6],
    modality: [usize; 6],
    pub main: LatentTransformer,
    final_ln: LayerNorm,
    head: Linear,
}

impl Network {
    /// Registers every parameter in a fixed order; the same config always
    /// yields the same names, shapes and initial values.
    pub fn build(cfg: &ModelConfig) -> Result<(Self, ParamStore)> {
        cfg.validate()?;
        let mut store = ParamStore::default();
        let mut init = Initializer::new(cfg.init_seed);
        let f = &cfg.fusion;
        let encoders = Encoders::new(&mut store, &mut init, cfg);
        let spatial = LatentTransformer::new(
            &mut store,
            &mut init,
            "fusion.spatial",
            cfg.history_tokens(),
            cfg.d_traj + cfg.d_point(),
            f.spatial_layers,
            f,
        );
        let sources = [
            ("trajectory_spatial", f.d_latent),
            ("fixture_boxes", cfg.d_fixture),
            ("fixture_labels", cfg.d_text),
            ("description", cfg.d_text),
            ("global_scene", cfg.d_global()),
            ("goal", cfg.d_goal),
        ];
        let proj = sources.map(|(name, d)| {
            Linear::new(&mut store, &mut init, &format!("fusion.proj.{name}"), d, f.d_in, true)
        });
        let modality = sources.map(|(name, _)| {
            store.insert(format!("fusion.modality.{name}"), init.normal(1, f.d_in, 0.02))
        });
        let main = LatentTransformer::new(
            &mut store,
            &mut init,
            "fusion.main",
            cfg.seq_len,
            f.d_in,
            f.layers,
            f,
        );
        let final_ln = LayerNorm::new(&mut store, "head.ln", f.d_latent);
        let head = Linear::new(&mut store, &mut init, "head.out", f.d_latent, 9, true);
        Ok((
            Self {
                encoders,
                spatial,
                proj,
                modality,
                main,
                final_ln,
                head,
            },
            store,
        ))
    }

    fn project(&self, g: &mut Graph, kind: Modality, x: Var) -> Var {
        let i = kind as usize;
        let h = self.proj[i].apply(g, x);
        let m = g.param(self.modality[i]);
        g.add_row(h, m)
    }
}

/// Parameter-free inputs derived from one sample. Building this once per
/// sample keeps point sampling and text hashing out of the training loop.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    pub seq_len: usize,
    pub split: FrameSplit,
    /// Ground truth, `T × 9`.
    pub target: Array2<f64>,
    history_poses: Array2<f64>,
    history_frames: Vec<usize>,
    history_mask: Vec<bool>,
    history_positions: Vec<Vec3>,
    plan: PointPlan,
    fixture_boxes: Array2<f64>,
    fixture_labels: Array2<f64>,
    description: Array2<f64>,
    goal: Array2<f64>,
}

impl PreparedSample {
    pub fn history_mask(&self) -> &[bool] {
        &self.history_mask
    }

    pub fn num_fixtures(&self) -> usize {
        self.fixture_boxes.nrows()
    }

    pub fn set_goal(&mut self, goal: &Pose9) {
        self.goal = pose_row(goal);
    }

    fn effective_history_mask(&self, ablation: Ablation) -> Vec<bool> {
        match ablation {
            Ablation::FirstFrame => {
                let mut m = vec![false; self.history_mask.len()];
                m[0] = self.history_mask[0];
                m
            }
            _ => self.history_mask.clone(),
        }
    }
}

/// Model layout, configuration, learnable parameters and text embedder.
pub struct GmtModel {
    pub config: ModelConfig,
    pub network: Network,
    pub params: ParamStore,
    embedder: Arc<dyn TextEmbedder>,
}

impl Clone for GmtModel {
    fn clone(&self) -> Self {
        Self {
            config: self.config.clone(),
            network: self.network.clone(),
            params: self.params.clone(),
            embedder: Arc::clone(&self.embedder),
        }
    }
}

impl std::fmt::Debug for GmtModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GmtModel")
            .field("config", &self.config)
            .field("parameters", &self.params.num_scalars())
            .finish()
    }
}

impl GmtModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        let embedder: Arc<dyn TextEmbedder> =
            Arc::from(build_embedder(&config.embedder, config.text_dim)?);
        Self::with_embedder(config, embedder)
    }

    pub fn with_embedder(config: ModelConfig, embedder: Arc<dyn TextEmbedder>) -> Result<Self> {
        if embedder.dim() != config.text_dim {
            return Err(GmtError::ConfigMismatch(format!(
                "embedder dimension {} differs from text_dim {}",
                embedder.dim(),
                config.text_dim
            )));
        }
        let (network, params) = Network::build(&config)?;
        Ok(Self {
            config,
            network,
            params,
            embedder,
        })
    }

    pub fn embedder(&self) -> &dyn TextEmbedder {
        self.embedder.as_ref()
    }

    /// Replace parameter values, checking names and shapes against the layout.
    pub fn load_params(&mut self, params: ParamStore) -> Result<()> {
        if params.names() != self.params.names() {
            return Err(GmtError::ConfigMismatch(
                "parameter names differ from the configured architecture".into(),
            ));
        }
        for (id, (name, value)) in params.iter().enumerate() {
            if value.dim() != self.params.value(id).dim() {
                return Err(GmtError::ConfigMismatch(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    value.dim(),
                    self.params.value(id).dim()
                )));
            }
        }
        self.params = params;
        Ok(())
    }

    pub fn prepare(&self, sample: &TrajectorySample) -> Result<PreparedSample> {
        let cfg = &self.config;
        let t = sample.seq_len();
        if t != cfg.seq_len {
            return Err(GmtError::ConfigMismatch(format!(
                "sample has {t} frames, model expects {}",
                cfg.seq_len
            )));
        }
        let split = split_history_future(&sample.trajectory, cfg.input_ratio)?;
        let h_tokens = cfg.history_tokens();
        if split.history.len() > h_tokens {
            return Err(GmtError::ConfigMismatch(format!(
                "{} history frames exceed the {h_tokens} history tokens",
                split.history.len()
            )));
        }
        let mut history_poses = Array2::zeros((h_tokens, 9));
        let mut history_frames: Vec<usize> = (0..h_tokens).collect();
        let mut history_mask = vec![false; h_tokens];
        let mut history_positions = Vec::with_capacity(split.history.len());
        for (tok, &frame) in split.history.iter().enumerate() {
            let pose = &sample.trajectory.poses[frame];
            history_poses
                .row_mut(tok)
                .assign(&ndarray::aview1(&pose.to_array()));
            history_frames[tok] = frame;
            history_mask[tok] = true;
            history_positions.push(pose.position);
        }
        let plan = PointPlan::new(&sample.scene.cloud, &cfg.point_encoder)?;
        let (fixture_boxes, fixture_labels) = fixture_inputs(&sample.scene.fixtures, self.embedder())?;
        let description = description_input(&sample.description, self.embedder())?;
        Ok(PreparedSample {
            seq_len: t,
            target: sample.trajectory.to_matrix(),
            split,
            history_poses,
            history_frames,
            history_mask,
            history_positions,
            plan,
            fixture_boxes,
            fixture_labels,
            description,
            goal: pose_row(&sample.goal),
        })
    }

    /// Scene-aware trajectory tokens: trajectory features concatenated with
    /// interpolated local geometry, fused by the spatial latent stack.
    pub fn trajectory_spatial_tokens(
        &self,
        g: &mut Graph,
        prepared: &PreparedSample,
        ablation: Ablation,
    ) -> Result<(TokenSet, Option<Var>)> {
        let net = &self.network;
        let mask = prepared.effective_history_mask(ablation);
        let poses = g.input(prepared.history_poses.clone());
        let traj = net
            .encoders
            .trajectory_tokens(g, poses, &prepared.history_frames, &mask)?;
        let (local, level2) = if ablation == Ablation::NoPointcloud {
            let z = g.input(Array2::zeros((mask.len(), self.config.d_point())));
            (z, None)
        } else {
            let level2 = net.encoders.points.abstract_features(g, &prepared.plan);
            let queries: Vec<Option<Vec3>> = (0..mask.len())
                .map(|i| mask[i].then(|| prepared.history_positions[i]))
                .collect();
            let local = net
                .encoders
                .points
                .local_features(g, &prepared.plan, level2, &queries);
            (local, Some(level2))
        };
        let joined = g.concat_cols(&[traj.tokens, local]);
        let fused = net.spatial.apply(g, joined, &mask)?;
        let fused = g.mask_rows(fused, &mask);
        Ok((TokenSet { tokens: fused, mask }, level2))
    }

    /// The assembled context `[traj-spatial | boxes | labels | description |
    /// global scene | goal]`, every token projected to `d_in`, tagged with
    /// its modality embedding and masked.
    pub fn context_tokens(
        &self,
        g: &mut Graph,
        prepared: &PreparedSample,
        ablation: Ablation,
    ) -> Result<TokenSet> {
        let net = &self.network;
        let (tp, level2) = self.trajectory_spatial_tokens(g, prepared, ablation)?;

        let boxes = g.input(prepared.fixture_boxes.clone());
        let labels = g.input(prepared.fixture_labels.clone());
        let (fb, ff) = net.encoders.fixture_tokens(g, boxes, labels)?;

        let desc = g.input(prepared.description.clone());
        let fd = net.encoders.description_feature(g, desc);

        let fo = match level2 {
            Some(l2) => net.encoders.points.global_feature(g, l2),
            None => g.input(Array2::zeros((1, self.config.d_global()))),
        };

        let fg = if ablation == Ablation::NoGoal {
            net.encoders.goal_null_token(g)
        } else {
            let goal = g.input(prepared.goal.clone());
            net.encoders.goal_feature(g, goal)
        };

        let semantic = ablation != Ablation::NoSemantic;
        let scene = ablation != Ablation::NoPointcloud;
        let k = fb.mask.len();
        let parts = [
            (Modality::TrajectorySpatial, tp.tokens, tp.mask.clone()),
            (Modality::FixtureBoxes, fb.tokens, fb.mask.clone()),
            (Modality::FixtureLabels, ff.tokens, vec![semantic; k]),
            (Modality::Description, fd, vec![semantic]),
            (Modality::GlobalScene, fo, vec![scene]),
            (Modality::Goal, fg, vec![true]),
        ];
        let mut vars = Vec::with_capacity(parts.len());
        let mut mask = Vec::new();
        for (kind, x, m) in parts {
            vars.push(net.project(g, kind, x));
            mask.extend(m);
        }
        let tokens = g.concat_rows(&vars);
        let tokens = g.mask_rows(tokens, &mask);
        Ok(TokenSet { tokens, mask })
    }

    /// Full forward pass to a `T × 9` pose sequence on the given tape.
    pub fn forward(&self, g: &mut Graph, prepared: &PreparedSample, ablation: Ablation) -> Result<Var> {
        if prepared.seq_len != self.config.seq_len {
            return Err(GmtError::ConfigMismatch(format!(
                "prepared sample has {} frames, model expects {}",
                prepared.seq_len, self.config.seq_len
            )));
        }
        let ctx = self.context_tokens(g, prepared, ablation)?;
        let net = &self.network;
        let z = net.main.apply(g, ctx.tokens, &ctx.mask)?;
        let z = net.final_ln.apply(g, z);
        Ok(net.head.apply(g, z))
    }

    pub fn predict_prepared(&self, prepared: &PreparedSample, ablation: Ablation) -> Result<Array2<f64>> {
        let mut g = Graph::new(&self.params);
        let out = self.forward(&mut g, prepared, ablation)?;
        Ok(g.value(out).to_owned())
    }

    pub fn predict(&self, sample: &TrajectorySample, ablation: Ablation) -> Result<Array2<f64>> {
        let prepared = self.prepare(sample)?;
        self.predict_prepared(&prepared, ablation)
    }
}
