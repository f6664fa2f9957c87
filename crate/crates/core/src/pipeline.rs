//! End-to-end scene processing and hyper-parameter sweeps.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clam::clam_forward;
use crate::error::{CatnError, Result};
use crate::evaluator::{role_map, ApMethod, EvalImage, Partition, DEFAULT_IOU_THRESHOLD};
use crate::matcher::{assign_labels, Assignment, CostWeights, DEFAULT_V};
use crate::postprocess::{apply_nms, decode_triplets, HoiTriplet, NmsMode, DEFAULT_SIGMA};
use crate::priors::{
    build_caq, embed_priors, filter_detections, oracle_priors, score_categories, select_priors, CategoryRef,
    EmbeddingTable, PriorCategories,
};
use crate::scene::Scene;
use crate::tensor::{Matrix, Rng};
use crate::transformer::{
    decoder_forward, encoder_forward, predict_heads, spatial_pe, HoiPrediction, ModelConfig, ModelParams,
};

pub const PREDICTION_VERSION: u32 = 1;

/// How the decoder's first-layer queries are filled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryInit {
    Zeros,
    /// Repeated prior embeddings from detector priors.
    #[default]
    Caq,
    /// Repeated prior embeddings from ground-truth priors.
    Oracle,
    UniformRandom,
    GaussianRandom,
}

impl QueryInit {
    /// Whether queries carry a prior slot usable by the category-aware cost.
    pub fn has_priors(self) -> bool {
        matches!(self, QueryInit::Caq | QueryInit::Oracle)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub t_det: f64,
    pub t_can: f64,
    pub n_c: usize,
    pub v: f64,
    pub weights: CostWeights,
    pub drop_category: Option<u32>,
    pub clam: bool,
    pub query_init: QueryInit,
    pub score_threshold: f64,
    pub nms_mode: NmsMode,
    pub t_iou: f64,
    pub sigma: f64,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            t_det: 0.15,
            t_can: 0.3,
            n_c: 4,
            v: DEFAULT_V,
            weights: CostWeights::default(),
            drop_category: None,
            clam: true,
            query_init: QueryInit::Caq,
            score_threshold: 0.0,
            nms_mode: NmsMode::None,
            t_iou: 0.6,
            sigma: DEFAULT_SIGMA,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.weights.validate()?;
        for (name, t) in [
            ("t_det", self.t_det),
            ("t_iou", self.t_iou),
            ("score_threshold", self.score_threshold),
        ] {
            if !(0.0..=1.0).contains(&t) {
                return Err(CatnError::Config(format!("{name}={t} outside [0, 1]")));
            }
        }
        // presence scores reach up to 1 + n/2, so t_can is only bounded below
        if !(self.t_can.is_finite() && self.t_can >= 0.0) {
            return Err(CatnError::Config(format!("t_can={} must be >= 0", self.t_can)));
        }
        if self.n_c < 2 || self.n_c > self.model.n_q {
            return Err(CatnError::Config(format!(
                "n_c={} must be in [2, n_q={}]",
                self.n_c, self.model.n_q
            )));
        }
        if !(self.v.is_finite() && self.v > 0.0) {
            return Err(CatnError::Config(format!("v={} must be > 0", self.v)));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(CatnError::Config(format!("sigma={} must be > 0", self.sigma)));
        }
        Ok(())
    }
}

/// Decoded output of one scene. Deterministic given scene, table, config and parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionFile {
    pub version: u32,
    pub scene_id: String,
    pub query_init: QueryInit,
    pub priors: PriorCategories,
    pub prior_of_query: Option<Vec<CategoryRef>>,
    pub triplets: Vec<HoiTriplet>,
    pub assignment: Option<Assignment>,
}

/// Raw per-query head outputs, as written by `forward` and read by `match`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForwardFile {
    pub version: u32,
    pub scene_id: String,
    pub predictions: Vec<HoiPrediction>,
    pub prior_of_query: Option<Vec<CategoryRef>>,
}

/// Wall-clock seconds per stage.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub priors: f64,
    pub clam: f64,
    pub encoder: f64,
    pub decoder: f64,
    pub heads: f64,
    pub postprocess: f64,
    pub matching: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub prediction: PredictionFile,
    pub raw: Vec<HoiPrediction>,
    /// Triplets before suppression.
    pub decoded: Vec<HoiTriplet>,
    pub timings: StageTimings,
}

impl RunOutput {
    pub fn forward_file(&self) -> ForwardFile {
        ForwardFile {
            version: PREDICTION_VERSION,
            scene_id: self.prediction.scene_id.clone(),
            predictions: self.raw.clone(),
            prior_of_query: self.prediction.prior_of_query.clone(),
        }
    }
}

/// Prior slots for a scene under the configured thresholds, or from its
/// ground truth in oracle mode.
pub fn scene_priors(scene: &Scene, cfg: &RunConfig) -> Result<PriorCategories> {
    if cfg.query_init == QueryInit::Oracle {
        return oracle_priors(&scene.gts, cfg.n_c);
    }
    let kept = filter_detections(&scene.detections, cfg.t_det, cfg.drop_category);
    select_priors(&score_categories(&kept), cfg.t_can, cfg.n_c)
}

fn check_compatible(scene: &Scene, table: &EmbeddingTable, model: &ModelConfig) -> Result<()> {
    if scene.feature_grid.dim() != model.d_model {
        return Err(CatnError::Shape(format!(
            "scene feature width {} != d_model {}",
            scene.feature_grid.dim(),
            model.d_model
        )));
    }
    if table.dim != model.d_word {
        return Err(CatnError::Shape(format!(
            "embedding dim {} != d_word {}",
            table.dim, model.d_word
        )));
    }
    if scene.k_obj as usize > model.k_obj || scene.k_verb as usize > model.k_verb {
        return Err(CatnError::Shape(format!(
            "scene has {}/{} object/verb classes, model {}/{}",
            scene.k_obj, scene.k_verb, model.k_obj, model.k_verb
        )));
    }
    Ok(())
}

/// Runs priors, optional CLAM, encoder, decoder, heads, decoding, optional
/// suppression, and, when the scene has ground truth, label assignment.
pub fn run_pipeline(scene: &Scene, table: &EmbeddingTable, cfg: &RunConfig, params: &ModelParams) -> Result<RunOutput> {
    cfg.validate()?;
    if params.config != cfg.model {
        return Err(CatnError::Config(
            "model parameters were built for a different config".into(),
        ));
    }
    check_compatible(scene, table, &cfg.model)?;
    let m = &cfg.model;
    let mut timings = StageTimings::default();

    let t = Instant::now();
    let priors = scene_priors(scene, cfg)?;
    let embeddings = embed_priors(&priors, table, &params.prior_proj)?;
    timings.priors = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let grid = if cfg.clam {
        clam_forward(&scene.feature_grid, &embeddings, &params.clam)?
    } else {
        scene.feature_grid.clone()
    };
    timings.clam = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let s_pe = spatial_pe(grid.h, grid.w, m.d_model)?;
    let memory = encoder_forward(&grid, &s_pe, &params.encoder, m.n_heads)?;
    timings.encoder = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let mut rng = Rng::new(cfg.seed ^ 0x5155_4552_5949_4E49);
    let random = |rng: &mut Rng, f: &dyn Fn(&mut Rng) -> f64| {
        Matrix::new(m.n_q, m.d_model, (0..m.n_q * m.d_model).map(|_| f(rng)).collect())
    };
    let (queries, prior_of_query) = match cfg.query_init {
        QueryInit::Zeros => (Matrix::zeros(m.n_q, m.d_model), None),
        QueryInit::Caq | QueryInit::Oracle => {
            let caq = build_caq(&embeddings, m.n_q)?;
            (caq.q, Some(caq.prior_of_query))
        }
        QueryInit::UniformRandom => (random(&mut rng, &|r| r.uniform(-1.0, 1.0))?, None),
        QueryInit::GaussianRandom => {
            let std = 1.0 / (m.d_model as f64).sqrt();
            (random(&mut rng, &|r| std * r.normal())?, None)
        }
    };
    let q_out = decoder_forward(&queries, &params.query_pe, &memory, &s_pe, &params.decoder, m.n_heads)?;
    timings.decoder = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let raw = predict_heads(&q_out, &params.heads)?;
    timings.heads = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let decoded = decode_triplets(&raw, cfg.score_threshold);
    let triplets = apply_nms(&decoded, cfg.nms_mode, cfg.t_iou, cfg.sigma)?;
    timings.postprocess = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let assignment = if scene.gts.is_empty() {
        None
    } else {
        Some(assign_labels(
            &raw,
            &scene.gts,
            prior_of_query.as_deref(),
            &cfg.weights,
            cfg.v,
        )?)
    };
    timings.matching = t.elapsed().as_secs_f64();

    Ok(RunOutput {
        prediction: PredictionFile {
            version: PREDICTION_VERSION,
            scene_id: scene.id.clone(),
            query_init: cfg.query_init,
            priors,
            prior_of_query,
            triplets,
            assignment,
        },
        raw,
        decoded,
        timings,
    })
}

/// Runs many scenes on the worker pool; results keep input order.
pub fn run_batch(
    scenes: &[Scene],
    table: &EmbeddingTable,
    cfg: &RunConfig,
    params: &ModelParams,
) -> Result<Vec<RunOutput>> {
    scenes.par_iter().map(|s| run_pipeline(s, table, cfg, params)).collect()
}

/// Image-level prior quality: fraction of ground-truth categories present
/// among the real slots (recall) and fraction of real slots that are
/// ground-truth categories (precision). `None` when undefined.
pub fn prior_quality(priors: &PriorCategories, gt_categories: &[u32]) -> (Option<f64>, Option<f64>) {
    let real: Vec<u32> = priors.real_ids().collect();
    let hits = real.iter().filter(|c| gt_categories.contains(c)).count();
    let recall = (!gt_categories.is_empty())
        .then(|| gt_categories.iter().filter(|c| real.contains(c)).count() as f64 / gt_categories.len() as f64);
    let precision = (!real.is_empty()).then(|| hits as f64 / real.len() as f64);
    (recall, precision)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    TDet,
    TCan,
    NC,
    TIou,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::TDet => "t_det",
            SweepParam::TCan => "t_can",
            SweepParam::NC => "n_c",
            SweepParam::TIou => "t_iou",
        }
    }

    pub fn apply(self, cfg: &mut RunConfig, value: f64) -> Result<()> {
        match self {
            SweepParam::TDet => cfg.t_det = value,
            SweepParam::TCan => cfg.t_can = value,
            SweepParam::NC => {
                if value.fract() != 0.0 || value < 0.0 {
                    return Err(CatnError::Config(format!("n_c value {value} is not a count")));
                }
                cfg.n_c = value as usize;
            }
            SweepParam::TIou => cfg.t_iou = value,
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param: String,
    pub value: f64,
    pub prior_recall: f64,
    pub prior_precision: f64,
    /// Fraction of ground truths assigned to a query whose prior has their category.
    pub assign_accuracy: f64,
    pub n_decoded: usize,
    /// Hard mode: triplets removed. Soft mode: triplets whose score decayed.
    pub n_suppressed: usize,
    pub map_full: f64,
}

fn count_suppressed(out: &RunOutput, mode: NmsMode) -> usize {
    match mode {
        NmsMode::None => 0,
        NmsMode::Hard => out.decoded.len() - out.prediction.triplets.len(),
        NmsMode::Soft => {
            let mut before: Vec<f64> = out.decoded.iter().map(|t| t.score).collect();
            let mut after: Vec<f64> = out.prediction.triplets.iter().map(|t| t.score).collect();
            before.sort_by(f64::total_cmp);
            after.sort_by(f64::total_cmp);
            // scores only decrease, so compare as multisets via a merge count
            let mut unchanged = 0;
            let (mut i, mut j) = (0, 0);
            while i < before.len() && j < after.len() {
                match before[i].total_cmp(&after[j]) {
                    std::cmp::Ordering::Equal => {
                        unchanged += 1;
                        i += 1;
                        j += 1;
                    }
                    std::cmp::Ordering::Less => i += 1,
                    std::cmp::Ordering::Greater => j += 1,
                }
            }
            before.len() - unchanged
        }
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Evaluates every value of `param` on every scene.
pub fn sweep(
    param: SweepParam,
    values: &[f64],
    scenes: &[Scene],
    table: &EmbeddingTable,
    base: &RunConfig,
    params: &ModelParams,
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(CatnError::Config("sweep needs at least one value".into()));
    }
    let mut rows = Vec::with_capacity(values.len());
    for &value in values {
        let mut cfg = base.clone();
        param.apply(&mut cfg, value)?;
        let outs = run_batch(scenes, table, &cfg, params)?;

        let mut recalls = Vec::new();
        let mut precisions = Vec::new();
        let (mut matched_same, mut n_gt) = (0usize, 0usize);
        let mut images = Vec::with_capacity(scenes.len());
        for (scene, out) in scenes.iter().zip(&outs) {
            let (r, p) = prior_quality(&out.prediction.priors, &scene.gt_categories());
            recalls.extend(r);
            precisions.extend(p);
            if let (Some(a), Some(pq)) = (&out.prediction.assignment, &out.prediction.prior_of_query) {
                for &(g, q) in &a.pairs {
                    if pq[q] == CategoryRef::Real(scene.gts[g].object_category) {
                        matched_same += 1;
                    }
                }
            }
            n_gt += scene.gts.len();
            images.push(EvalImage {
                preds: out.prediction.triplets.clone(),
                gts: scene.gts.iter().flat_map(HoiTriplet::from_ground_truth).collect(),
            });
        }
        let partition = Partition::all_nonrare(images.iter().flat_map(|i| &i.gts));
        let eval = role_map(&images, &partition, DEFAULT_IOU_THRESHOLD, ApMethod::AllPoint)?;
        rows.push(SweepRow {
            param: param.name().into(),
            value,
            prior_recall: mean(recalls.into_iter()),
            prior_precision: mean(precisions.into_iter()),
            assign_accuracy: if n_gt == 0 {
                0.0
            } else {
                matched_same as f64 / n_gt as f64
            },
            n_decoded: outs.iter().map(|o| o.decoded.len()).sum(),
            n_suppressed: outs.iter().map(|o| count_suppressed(o, cfg.nms_mode)).sum(),
            map_full: eval.map_full,
        });
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s =
        String::from("param,value,prior_recall,prior_precision,assign_accuracy,n_decoded,n_suppressed,map_full\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.param,
            r.value,
            r.prior_recall,
            r.prior_precision,
            r.assign_accuracy,
            r.n_decoded,
            r.n_suppressed,
            r.map_full
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{synth_embedding_table, synth_scene, SynthParams};

    pub(crate) fn tiny() -> RunConfig {
        RunConfig {
            model: ModelConfig {
                d_model: 16,
                n_heads: 2,
                n_enc: 1,
                n_dec: 2,
                n_q: 12,
                ffn_dim: 32,
                k_obj: 6,
                k_verb: 4,
                d_word: 8,
            },
            ..RunConfig::default()
        }
    }

    fn fixture(seed: u64) -> (Scene, EmbeddingTable, RunConfig, ModelParams) {
        let cfg = tiny();
        let scene = synth_scene(
            seed,
            &SynthParams {
                k_obj: 6,
                k_verb: 4,
                n_gt: 3,
                h: 3,
                w: 3,
                d_feat: 16,
                ..SynthParams::default()
            },
        )
        .unwrap();
        let table = synth_embedding_table(1, 6, 8).unwrap();
        let params = ModelParams::init(&cfg.model, 7).unwrap();
        (scene, table, cfg, params)
    }

    #[test]
    fn zeros_mode_has_no_query_priors() {
        let (scene, table, mut cfg, params) = fixture(1);
        cfg.query_init = QueryInit::Zeros;
        cfg.clam = false;
        let out = run_pipeline(&scene, &table, &cfg, &params).unwrap();
        assert!(out.prediction.prior_of_query.is_none());
        assert_eq!(out.raw.len(), cfg.model.n_q);
        assert_eq!(out.prediction.assignment.unwrap().pairs.len(), scene.gts.len());
    }

    #[test]
    fn oracle_priors_cover_ground_truth() {
        let (scene, table, mut cfg, params) = fixture(2);
        cfg.query_init = QueryInit::Oracle;
        let out = run_pipeline(&scene, &table, &cfg, &params).unwrap();
        let real: Vec<u32> = out.prediction.priors.real_ids().collect();
        for c in scene.gt_categories() {
            assert!(real.contains(&c));
        }
    }

    #[test]
    fn every_mode_runs_and_is_deterministic() {
        let (scene, table, mut cfg, params) = fixture(3);
        for mode in [
            QueryInit::Zeros,
            QueryInit::Caq,
            QueryInit::Oracle,
            QueryInit::UniformRandom,
            QueryInit::GaussianRandom,
        ] {
            cfg.query_init = mode;
            let a = run_pipeline(&scene, &table, &cfg, &params).unwrap();
            let b = run_pipeline(&scene, &table, &cfg, &params).unwrap();
            assert_eq!(a.prediction, b.prediction, "{mode:?}");
        }
    }

    #[test]
    fn mismatched_dims_are_rejected() {
        let (scene, _, cfg, params) = fixture(4);
        let wrong = synth_embedding_table(1, 6, 5).unwrap();
        assert!(matches!(
            run_pipeline(&scene, &wrong, &cfg, &params),
            Err(CatnError::Shape(_))
        ));
    }

    #[test]
    fn too_many_ground_truths_is_infeasible() {
        let (mut scene, table, cfg, params) = fixture(5);
        let g = scene.gts[0].clone();
        scene.gts = vec![g; cfg.model.n_q + 1];
        let err = run_pipeline(&scene, &table, &cfg, &params).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn prior_quality_definitions() {
        let p = PriorCategories {
            slots: vec![CategoryRef::Real(1), CategoryRef::Real(2), CategoryRef::Background],
        };
        assert_eq!(prior_quality(&p, &[1, 5]), (Some(0.5), Some(0.5)));
        assert_eq!(prior_quality(&p, &[]), (None, Some(0.0)));
    }

    #[test]
    fn n_c_sweep_keeps_one_background() {
        let (scene, table, cfg, params) = fixture(6);
        for n_c in 2..=6 {
            let mut c = cfg.clone();
            c.n_c = n_c;
            let out = run_pipeline(&scene, &table, &c, &params).unwrap();
            let bg = out
                .prediction
                .priors
                .slots
                .iter()
                .filter(|s| **s == CategoryRef::Background)
                .count();
            assert_eq!(bg, 1);
            assert_eq!(out.prediction.priors.len(), n_c);
        }
        let rows = sweep(SweepParam::NC, &[2.0, 3.0], &[scene], &table, &cfg, &params).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(sweep(SweepParam::NC, &[2.5], &[], &table, &cfg, &params).is_err());
    }
}
