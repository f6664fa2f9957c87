//! Scene documents, seeded synthetic scenes and embedding tables, and
//! canonical JSON I/O.
//!
//! Canonical JSON has lexicographically sorted object keys, two-space
//! indentation, a trailing newline, and floats in shortest round-trip form,
//! so `save(load(bytes)) == bytes` for any canonical document.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::clam::FeatureGrid;
use crate::error::{CatnError, Result};
use crate::geometry::{cxcywh_to_xyxy, is_valid_corners, Corners};
use crate::matcher::GroundTruthTriplet;
use crate::priors::{DetectionRecord, EmbeddingTable};
use crate::tensor::{Matrix, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scene {
    pub id: String,
    pub k_obj: u32,
    pub k_verb: u32,
    pub feature_grid: FeatureGrid,
    pub detections: Vec<DetectionRecord>,
    pub gts: Vec<GroundTruthTriplet>,
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        if self.k_obj == 0 || self.k_verb == 0 {
            return Err(CatnError::Validation("scene needs k_obj, k_verb >= 1".into()));
        }
        self.feature_grid.validate()?;
        for d in &self.detections {
            d.validate(None)?;
        }
        for g in &self.gts {
            g.validate(Some(self.k_obj), Some(self.k_verb))?;
        }
        Ok(())
    }

    /// Distinct ground-truth object categories, ascending.
    pub fn gt_categories(&self) -> Vec<u32> {
        let mut c: Vec<u32> = self.gts.iter().map(|g| g.object_category).collect();
        c.sort_unstable();
        c.dedup();
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthParams {
    pub k_obj: u32,
    pub k_verb: u32,
    pub n_gt: usize,
    pub h: usize,
    pub w: usize,
    /// Feature width; must equal the model's `d_model` to be runnable.
    pub d_feat: usize,
    /// 0 gives confidence-1, un-jittered detections for every ground truth.
    pub detector_noise: f64,
    pub n_spurious: usize,
    /// When set, also emit a detection of this category for every human box.
    pub human_category: Option<u32>,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            k_obj: 10,
            k_verb: 6,
            n_gt: 4,
            h: 4,
            w: 4,
            d_feat: 32,
            detector_noise: 0.2,
            n_spurious: 2,
            human_category: None,
        }
    }
}

/// Upper bound of spurious detection confidences.
pub const SPURIOUS_MAX_CONFIDENCE: f64 = 0.2;

fn random_center_box(rng: &mut Rng) -> [f64; 4] {
    [
        rng.uniform(0.2, 0.8),
        rng.uniform(0.2, 0.8),
        rng.uniform(0.1, 0.4),
        rng.uniform(0.1, 0.4),
    ]
}

fn jitter(rng: &mut Rng, b: &Corners, amount: f64) -> Corners {
    let moved = b.map(|v| (v + amount * rng.uniform(-1.0, 1.0)).clamp(0.0, 1.0));
    if is_valid_corners(&moved) {
        moved
    } else {
        *b
    }
}

pub fn synth_scene(seed: u64, p: &SynthParams) -> Result<Scene> {
    if p.k_obj == 0 || p.k_verb == 0 || p.h == 0 || p.w == 0 || p.d_feat == 0 {
        return Err(CatnError::Config("synthetic scene counts must be >= 1".into()));
    }
    if !(0.0..=1.0).contains(&p.detector_noise) {
        return Err(CatnError::Config("detector_noise must be in [0, 1]".into()));
    }
    let mut root = Rng::new(seed);
    let mut rng = root.fork(1);
    let mut gts = Vec::with_capacity(p.n_gt);
    for _ in 0..p.n_gt {
        let b_h = random_center_box(&mut rng);
        let b_o = random_center_box(&mut rng);
        let object_category = rng.below(p.k_obj as u64) as u32;
        let n_verbs = 1 + rng.below(2.min(p.k_verb as u64)) as usize;
        let mut verbs = Vec::with_capacity(n_verbs);
        while verbs.len() < n_verbs {
            let v = rng.below(p.k_verb as u64) as u32;
            if !verbs.contains(&v) {
                verbs.push(v);
            }
        }
        verbs.sort_unstable();
        gts.push(GroundTruthTriplet {
            b_h,
            b_o,
            object_category,
            verbs,
        });
    }

    let mut rng = root.fork(2);
    let noise = p.detector_noise;
    let mut detections = Vec::new();
    let mut emit = |rng: &mut Rng, category_id: u32, b: &[f64; 4]| {
        let confidence = (1.0 - noise * rng.next_f64()).clamp(0.0, 1.0);
        let bbox = jitter(rng, &cxcywh_to_xyxy(b), 0.05 * noise);
        detections.push(DetectionRecord {
            category_id,
            confidence,
            bbox,
        });
    };
    for g in &gts {
        emit(&mut rng, g.object_category, &g.b_o);
        if let Some(hc) = p.human_category {
            emit(&mut rng, hc, &g.b_h);
        }
    }
    for _ in 0..p.n_spurious {
        let category_id = rng.below(p.k_obj as u64) as u32;
        let confidence = rng.uniform(0.0, SPURIOUS_MAX_CONFIDENCE);
        let bbox = cxcywh_to_xyxy(&random_center_box(&mut rng));
        detections.push(DetectionRecord {
            category_id,
            confidence,
            bbox,
        });
    }

    let mut rng = root.fork(3);
    let n = p.h * p.w * p.d_feat;
    let data = (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let feature_grid = FeatureGrid::new(p.h, p.w, Matrix::new(p.h * p.w, p.d_feat, data)?)?;

    Ok(Scene {
        id: format!("synth-{seed}"),
        k_obj: p.k_obj,
        k_verb: p.k_verb,
        feature_grid,
        detections,
        gts,
    })
}

fn unit_vector(rng: &mut Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Unit-norm pseudo-random word vectors for categories `0..k_obj` and background.
pub fn synth_embedding_table(seed: u64, k_obj: u32, d_w: usize) -> Result<EmbeddingTable> {
    if d_w < 2 {
        return Err(CatnError::Config(format!("embedding dim must be >= 2, got {d_w}")));
    }
    let mut rng = Rng::new(seed);
    let entries = (0..k_obj).map(|id| (id, unit_vector(&mut rng, d_w))).collect();
    let background = unit_vector(&mut rng, d_w);
    Ok(EmbeddingTable {
        dim: d_w,
        background,
        entries,
    })
}

pub fn to_canonical_json<T: Serialize>(value: &T) -> Result<String> {
    // Value maps are BTreeMaps, so keys come out sorted
    let v = serde_json::to_value(value)?;
    let mut s = serde_json::to_string_pretty(&v)?;
    s.push('\n');
    Ok(s)
}

pub fn from_json_str<T: DeserializeOwned>(s: &str) -> Result<T> {
    serde_json::from_str(s).map_err(|e| CatnError::Validation(e.to_string()))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let s = fs::read_to_string(path)?;
    from_json_str(&s).map_err(|e| CatnError::Validation(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, to_canonical_json(value)?)?;
    Ok(())
}

pub fn load_scene(path: &Path) -> Result<Scene> {
    let scene: Scene = read_json(path)?;
    scene.validate()?;
    Ok(scene)
}

pub fn load_table(path: &Path) -> Result<EmbeddingTable> {
    let table: EmbeddingTable = read_json(path)?;
    table.validate()?;
    Ok(table)
}
