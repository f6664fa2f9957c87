//! Role mAP over (object, verb) categories.
//!
//! A prediction is a true positive when its object and verb match an
//! unclaimed ground truth and both its human and object boxes overlap that
//! ground truth with IoU strictly above the threshold.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{CatnError, Result};
use crate::geometry::iou;
use crate::postprocess::HoiTriplet;

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HoiCategory {
    pub object_category: u32,
    pub verb: u32,
}

impl HoiCategory {
    pub fn of(t: &HoiTriplet) -> Self {
        Self {
            object_category: t.object_category,
            verb: t.verb,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    /// Counted in the full mean only.
    Full,
    Rare,
    NonRare,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionEntry {
    pub object_category: u32,
    pub verb: u32,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Partition {
    pub entries: Vec<PartitionEntry>,
}

impl Partition {
    pub fn to_map(&self) -> Result<BTreeMap<HoiCategory, Split>> {
        let mut map = BTreeMap::new();
        for e in &self.entries {
            let key = HoiCategory {
                object_category: e.object_category,
                verb: e.verb,
            };
            if let Some(prev) = map.insert(key, e.split) {
                if prev != e.split {
                    return Err(CatnError::Config(format!(
                        "category {key:?} listed as both {prev:?} and {:?}",
                        e.split
                    )));
                }
            }
        }
        Ok(map)
    }

    /// Every category seen in `gts`, marked non-rare.
    pub fn all_nonrare<'a>(gts: impl IntoIterator<Item = &'a HoiTriplet>) -> Self {
        let cats: std::collections::BTreeSet<HoiCategory> = gts.into_iter().map(HoiCategory::of).collect();
        Self {
            entries: cats
                .into_iter()
                .map(|c| PartitionEntry {
                    object_category: c.object_category,
                    verb: c.verb,
                    split: Split::NonRare,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApMethod {
    /// Area under the monotone precision envelope at every recall step.
    #[default]
    AllPoint,
    /// Mean of the envelope at recall 0, 0.1, ..., 1.
    ElevenPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryAp {
    pub object_category: u32,
    pub verb: u32,
    pub ap: f64,
    pub n_gt: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub per_category_ap: Vec<CategoryAp>,
    pub map_full: f64,
    pub map_rare: f64,
    pub map_nonrare: f64,
}

/// Predictions and ground truth of one image.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalImage {
    pub preds: Vec<HoiTriplet>,
    pub gts: Vec<HoiTriplet>,
}

/// Indices of `preds` by descending score; ties keep input order.
pub fn rank_by_score(preds: &[HoiTriplet]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].score.total_cmp(&preds[a].score));
    order
}

/// TP/FP flag for each prediction (indexed like `preds`). Predictions are
/// visited by descending score; each claims the eligible unclaimed ground
/// truth with the highest min-IoU (lowest index on ties).
pub fn match_predictions(preds: &[HoiTriplet], gts: &[HoiTriplet], iou_thresh: f64) -> Result<Vec<bool>> {
    if !(iou_thresh > 0.0 && iou_thresh <= 1.0) {
        return Err(CatnError::Config(format!("iou threshold {iou_thresh} outside (0, 1]")));
    }
    let mut claimed = vec![false; gts.len()];
    let mut flags = vec![false; preds.len()];
    for i in rank_by_score(preds) {
        let p = &preds[i];
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if claimed[g] || gt.object_category != p.object_category || gt.verb != p.verb {
                continue;
            }
            let o = iou(&p.human_box, &gt.human_box).min(iou(&p.object_box, &gt.object_box));
            if o > iou_thresh && best.is_none_or(|(_, b)| o > b) {
                best = Some((g, o));
            }
        }
        if let Some((g, _)) = best {
            claimed[g] = true;
            flags[i] = true;
        }
    }
    Ok(flags)
}

/// AP of a ranked TP/FP sequence against `n_gt` ground truths. Returns 0 when `n_gt == 0`.
pub fn average_precision(flags: &[bool], n_gt: usize, method: ApMethod) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    let mut recall = Vec::with_capacity(flags.len());
    let mut precision = Vec::with_capacity(flags.len());
    let mut tp = 0usize;
    for (k, &f) in flags.iter().enumerate() {
        if f {
            tp += 1;
        }
        recall.push(tp as f64 / n_gt as f64);
        precision.push(tp as f64 / (k + 1) as f64);
    }
    // envelope: best precision at this rank or later
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    match method {
        ApMethod::AllPoint => {
            let mut ap = 0.0;
            let mut prev_recall = 0.0;
            for (r, p) in recall.iter().zip(&precision) {
                if *r > prev_recall {
                    ap += (r - prev_recall) * p;
                    prev_recall = *r;
                }
            }
            ap
        }
        ApMethod::ElevenPoint => {
            let mut ap = 0.0;
            for t in 0..=10 {
                let level = t as f64 / 10.0;
                let p = recall.iter().position(|&r| r >= level).map_or(0.0, |k| precision[k]);
                ap += p;
            }
            ap / 11.0
        }
    }
}

/// Per-category AP pooled over images, then unweighted means per split.
/// Categories without ground truth are skipped; every category with ground
/// truth must be listed in `partition`.
pub fn role_map(images: &[EvalImage], partition: &Partition, iou_thresh: f64, method: ApMethod) -> Result<EvalResult> {
    let splits = partition.to_map()?;
    let mut n_gt: BTreeMap<HoiCategory, usize> = BTreeMap::new();
    // (score, image, index, tp)
    let mut ranked: BTreeMap<HoiCategory, Vec<(f64, usize, usize, bool)>> = BTreeMap::new();
    for (img, image) in images.iter().enumerate() {
        for gt in &image.gts {
            *n_gt.entry(HoiCategory::of(gt)).or_default() += 1;
        }
        let flags = match_predictions(&image.preds, &image.gts, iou_thresh)?;
        for (i, (p, tp)) in image.preds.iter().zip(flags).enumerate() {
            ranked
                .entry(HoiCategory::of(p))
                .or_default()
                .push((p.score, img, i, tp));
        }
    }
    let mut per_category_ap = Vec::new();
    let mut sums: BTreeMap<&'static str, (f64, usize)> = BTreeMap::new();
    for (cat, &count) in &n_gt {
        let split = *splits
            .get(cat)
            .ok_or_else(|| CatnError::Config(format!("partition does not list category {cat:?}")))?;
        let mut list = ranked.remove(cat).unwrap_or_default();
        list.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
        let flags: Vec<bool> = list.iter().map(|e| e.3).collect();
        let ap = average_precision(&flags, count, method);
        per_category_ap.push(CategoryAp {
            object_category: cat.object_category,
            verb: cat.verb,
            ap,
            n_gt: count,
        });
        let mut add = |key: &'static str| {
            let e = sums.entry(key).or_insert((0.0, 0));
            e.0 += ap;
            e.1 += 1;
        };
        add("full");
        match split {
            Split::Rare => add("rare"),
            Split::NonRare => add("nonrare"),
            Split::Full => {}
        }
    }
    let mean = |key: &str| sums.get(key).map_or(0.0, |&(s, n)| s / n as f64);
    Ok(EvalResult {
        per_category_ap,
        map_full: mean("full"),
        map_rare: mean("rare"),
        map_nonrare: mean("nonrare"),
    })
}
