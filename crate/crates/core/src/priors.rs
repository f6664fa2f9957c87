//! Category priors: turns external detector output into the ordered prior
//! slots of an image, projects them to the model width, and repeats them
//! into the decoder's initial query set.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{CatnError, Result};
use crate::geometry::{self, Corners};
use crate::matcher::GroundTruthTriplet;
use crate::tensor::{LinearLayer, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionRecord {
    pub category_id: u32,
    pub confidence: f64,
    #[serde(rename = "box")]
    pub bbox: Corners,
}

impl DetectionRecord {
    pub fn validate(&self, k_obj: Option<u32>) -> Result<()> {
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(CatnError::Validation(format!(
                "detection confidence {} outside [0, 1]",
                self.confidence
            )));
        }
        if !geometry::is_valid_corners(&self.bbox) {
            return Err(CatnError::Validation(format!(
                "detection box {:?} is not x1<x2, y1<y2",
                self.bbox
            )));
        }
        if let Some(k) = k_obj {
            if self.category_id >= k {
                return Err(CatnError::Validation(format!(
                    "detection category {} >= K={k}",
                    self.category_id
                )));
            }
        }
        Ok(())
    }
}

/// One prior slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CategoryRef {
    Real(u32),
    Background,
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorCategories {
    pub slots: Vec<CategoryRef>,
}

impl PriorCategories {
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn real_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.slots.iter().filter_map(|s| match s {
            CategoryRef::Real(id) => Some(*id),
            _ => None,
        })
    }

    /// Real slots, then exactly one Background, then None padding.
    pub fn validate(&self) -> Result<()> {
        let bg = self
            .slots
            .iter()
            .position(|s| *s == CategoryRef::Background)
            .ok_or_else(|| CatnError::Validation("priors have no background slot".into()))?;
        let ok_head = self.slots[..bg].iter().all(|s| matches!(s, CategoryRef::Real(_)));
        let ok_tail = self.slots[bg + 1..].iter().all(|s| *s == CategoryRef::None);
        if !ok_head || !ok_tail {
            return Err(CatnError::Validation(format!("malformed prior slots {:?}", self.slots)));
        }
        Ok(())
    }

    /// Fills `[real..., Background, None...]` up to `n_c` slots.
    fn from_ranked(real: impl IntoIterator<Item = u32>, n_c: usize) -> Self {
        let mut slots: Vec<CategoryRef> = real.into_iter().take(n_c - 1).map(CategoryRef::Real).collect();
        slots.push(CategoryRef::Background);
        slots.resize(n_c, CategoryRef::None);
        Self { slots }
    }
}

/// Word-vector lookup table, one row per object category plus background.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub background: Vec<f64>,
    pub entries: BTreeMap<u32, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn validate(&self) -> Result<()> {
        let check = |name: String, v: &[f64]| {
            if v.len() != self.dim {
                return Err(CatnError::Validation(format!(
                    "embedding {name} has length {} != dim {}",
                    v.len(),
                    self.dim
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(CatnError::Validation(format!("embedding {name} non-finite")));
            }
            Ok(())
        };
        check("background".into(), &self.background)?;
        for (id, v) in &self.entries {
            check(id.to_string(), v)?;
        }
        Ok(())
    }

    pub fn lookup(&self, slot: CategoryRef) -> Result<Option<&[f64]>> {
        match slot {
            CategoryRef::Real(id) => self
                .entries
                .get(&id)
                .map(|v| Some(v.as_slice()))
                .ok_or(CatnError::MissingEmbedding(id)),
            CategoryRef::Background => Ok(Some(&self.background)),
            CategoryRef::None => Ok(None),
        }
    }
}

/// Prior slots together with their projected embedding rows (`N_c x D_d`).
#[derive(Debug, Clone, PartialEq)]
pub struct PriorEmbeddings {
    pub matrix: Matrix,
    pub source: PriorCategories,
}

/// The decoder's initial queries and the prior slot each one was copied from.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryAwareQuery {
    pub q: Matrix,
    pub prior_of_query: Vec<CategoryRef>,
}

/// Keeps detections at or above `t_det`, optionally dropping one category.
pub fn filter_detections(dets: &[DetectionRecord], t_det: f64, drop_category: Option<u32>) -> Vec<DetectionRecord> {
    dets.iter()
        .filter(|d| d.confidence >= t_det && Some(d.category_id) != drop_category)
        .cloned()
        .collect()
}

/// Per-category presence score `max + (|set| / 2) * mean` over detection confidences.
/// Categories without detections are absent from the map (score 0).
pub fn score_categories(dets: &[DetectionRecord]) -> BTreeMap<u32, f64> {
    let mut groups: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for d in dets {
        groups.entry(d.category_id).or_default().push(d.confidence);
    }
    groups
        .into_iter()
        .map(|(id, confs)| {
            let n = confs.len() as f64;
            let max = confs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mean = confs.iter().sum::<f64>() / n;
            (id, max + n / 2.0 * mean)
        })
        .collect()
}

fn check_n_c(n_c: usize) -> Result<()> {
    if n_c < 2 {
        return Err(CatnError::Config(format!("n_c must be >= 2, got {n_c}")));
    }
    Ok(())
}

/// Candidates are categories scoring at least `t_can`, ranked by descending
/// score (ascending id on ties). The top `n_c - 1` are followed by Background
/// and padded with None.
pub fn select_priors(scores: &BTreeMap<u32, f64>, t_can: f64, n_c: usize) -> Result<PriorCategories> {
    check_n_c(n_c)?;
    let mut candidates: Vec<(u32, f64)> = scores
        .iter()
        .filter(|(_, &s)| s >= t_can)
        .map(|(&id, &s)| (id, s))
        .collect();
    candidates.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(PriorCategories::from_ranked(
        candidates.into_iter().map(|(id, _)| id),
        n_c,
    ))
}

/// Priors taken from ground-truth object categories instead of a detector.
///
/// When there are more distinct categories than `n_c - 1`, the most frequent
/// ones are kept (ascending id on ties). Kept categories appear in order of
/// first appearance.
pub fn oracle_priors(gts: &[GroundTruthTriplet], n_c: usize) -> Result<PriorCategories> {
    check_n_c(n_c)?;
    // (id, count, first index)
    let mut seen: Vec<(u32, usize, usize)> = Vec::new();
    for (i, gt) in gts.iter().enumerate() {
        match seen.iter_mut().find(|e| e.0 == gt.object_category) {
            Some(e) => e.1 += 1,
            None => seen.push((gt.object_category, 1, i)),
        }
    }
    if seen.len() > n_c - 1 {
        seen.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        seen.truncate(n_c - 1);
        seen.sort_by_key(|e| e.2);
    }
    Ok(PriorCategories::from_ranked(seen.into_iter().map(|e| e.0), n_c))
}

/// Projects each slot's word vector through `proj`. None slots become zero
/// rows without passing through the projection.
pub fn embed_priors(c_star: &PriorCategories, table: &EmbeddingTable, proj: &LinearLayer) -> Result<PriorEmbeddings> {
    if proj.in_dim() != table.dim {
        return Err(CatnError::Shape(format!(
            "projection input {} != embedding dim {}",
            proj.in_dim(),
            table.dim
        )));
    }
    let d = proj.out_dim();
    let mut matrix = Matrix::zeros(c_star.len(), d);
    for (i, &slot) in c_star.slots.iter().enumerate() {
        if let Some(v) = table.lookup(slot)? {
            let row = proj.forward_vec(v)?;
            matrix.row_mut(i).copy_from_slice(&row);
        }
    }
    Ok(PriorEmbeddings {
        matrix,
        source: c_star.clone(),
    })
}

/// Repeats prior rows to fill `n_q` queries: query `j` copies slot `j mod N_c`.
pub fn build_caq(e: &PriorEmbeddings, n_q: usize) -> Result<CategoryAwareQuery> {
    let n_c = e.matrix.rows();
    if n_c == 0 || n_q < n_c {
        return Err(CatnError::Config(format!("n_q={n_q} must be >= N_c={n_c} > 0")));
    }
    let idx: Vec<usize> = (0..n_q).map(|j| j % n_c).collect();
    Ok(CategoryAwareQuery {
        q: e.matrix.select_rows(&idx),
        prior_of_query: idx.iter().map(|&i| e.source.slots[i]).collect(),
    })
}
