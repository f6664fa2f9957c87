//! Decoding raw query outputs into scored single-verb triplets, and
//! pair-wise duplicate suppression.
//!
//! Two triplets overlap by the smaller of their human-box and object-box
//! IoUs, and not at all when object or verb categories differ. Hard
//! suppression drops overlapping triplets; soft suppression multiplies their
//! score by `exp(-overlap^2 / sigma)`.

use serde::{Deserialize, Serialize};

use crate::error::{CatnError, Result};
use crate::geometry::{self, clamp_unit, cxcywh_to_xyxy, Corners};
use crate::matcher::GroundTruthTriplet;
use crate::transformer::HoiPrediction;

pub const DEFAULT_SIGMA: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HoiTriplet {
    pub human_box: Corners,
    pub object_box: Corners,
    pub object_category: u32,
    pub verb: u32,
    pub score: f64,
}

impl HoiTriplet {
    pub fn validate(&self) -> Result<()> {
        if !geometry::is_valid_corners(&self.human_box) || !geometry::is_valid_corners(&self.object_box) {
            return Err(CatnError::Validation(format!(
                "triplet boxes {:?} / {:?} are not x1<x2, y1<y2",
                self.human_box, self.object_box
            )));
        }
        if !(0.0..=1.0).contains(&self.score) {
            return Err(CatnError::Validation(format!(
                "triplet score {} outside [0, 1]",
                self.score
            )));
        }
        Ok(())
    }

    /// One triplet per ground-truth verb, in corner form with score 1.
    pub fn from_ground_truth(gt: &GroundTruthTriplet) -> Vec<HoiTriplet> {
        gt.verbs
            .iter()
            .map(|&verb| HoiTriplet {
                human_box: cxcywh_to_xyxy(&gt.b_h),
                object_box: cxcywh_to_xyxy(&gt.b_o),
                object_category: gt.object_category,
                verb,
                score: 1.0,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NmsMode {
    #[default]
    None,
    Hard,
    Soft,
}

/// Expands every query into single-verb triplets scored `p(object) * p(verb)`,
/// keeping those at or above `score_threshold`. The object class is the
/// argmax over real classes (no-object excluded; lowest index on ties).
pub fn decode_triplets(preds: &[HoiPrediction], score_threshold: f64) -> Vec<HoiTriplet> {
    let mut out = Vec::new();
    for p in preds {
        let k = p.k_obj();
        let Some((obj, &p_obj)) = p.c_o[..k]
            .iter()
            .enumerate()
            .reduce(|best, cur| if cur.1 > best.1 { cur } else { best })
        else {
            continue;
        };
        let human_box = clamp_unit(&cxcywh_to_xyxy(&p.b_h));
        let object_box = clamp_unit(&cxcywh_to_xyxy(&p.b_o));
        for (verb, &p_verb) in p.c_v.iter().enumerate() {
            let score = p_obj * p_verb;
            if score >= score_threshold {
                out.push(HoiTriplet {
                    human_box,
                    object_box,
                    object_category: obj as u32,
                    verb: verb as u32,
                    score,
                });
            }
        }
    }
    out
}

pub fn iou(a: &Corners, b: &Corners) -> f64 {
    geometry::iou(a, b)
}

/// Pair overlap: 0 on any category mismatch, else the minimum of the two box IoUs.
pub fn iou_hoi(a: &HoiTriplet, b: &HoiTriplet) -> f64 {
    if a.object_category != b.object_category || a.verb != b.verb {
        return 0.0;
    }
    iou(&a.human_box, &b.human_box).min(iou(&a.object_box, &b.object_box))
}

/// Index of the highest score, lowest index on ties.
fn argmax(scores: &[f64], alive: &[bool]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if alive[i] && best.is_none_or(|b| s > scores[b]) {
            best = Some(i);
        }
    }
    best
}

fn check_t_iou(t_iou: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t_iou) {
        return Err(CatnError::Config(format!("t_iou {t_iou} outside [0, 1]")));
    }
    Ok(())
}

/// Greedy hard suppression. Returns survivors in selection order.
pub fn hoi_nms(triplets: &[HoiTriplet], t_iou: f64) -> Result<Vec<HoiTriplet>> {
    check_t_iou(t_iou)?;
    let scores: Vec<f64> = triplets.iter().map(|t| t.score).collect();
    let mut alive = vec![true; triplets.len()];
    let mut kept = Vec::new();
    while let Some(m) = argmax(&scores, &alive) {
        alive[m] = false;
        for i in 0..triplets.len() {
            if alive[i] && iou_hoi(&triplets[i], &triplets[m]) > t_iou {
                alive[i] = false;
            }
        }
        kept.push(triplets[m].clone());
    }
    Ok(kept)
}

/// Gaussian soft suppression. Every triplet survives; overlapping ones are
/// decayed against each selected triplet. Returned in selection order, which
/// is non-increasing in score.
pub fn hoi_softnms(triplets: &[HoiTriplet], t_iou: f64, sigma: f64) -> Result<Vec<HoiTriplet>> {
    check_t_iou(t_iou)?;
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(CatnError::Config(format!("sigma must be > 0, got {sigma}")));
    }
    let mut scores: Vec<f64> = triplets.iter().map(|t| t.score).collect();
    let mut alive = vec![true; triplets.len()];
    let mut out = Vec::with_capacity(triplets.len());
    while let Some(m) = argmax(&scores, &alive) {
        alive[m] = false;
        for i in 0..triplets.len() {
            if !alive[i] {
                continue;
            }
            let o = iou_hoi(&triplets[i], &triplets[m]);
            if o > t_iou {
                scores[i] *= (-o * o / sigma).exp();
            }
        }
        out.push(HoiTriplet {
            score: scores[m],
            ..triplets[m].clone()
        });
    }
    Ok(out)
}

pub fn apply_nms(triplets: &[HoiTriplet], mode: NmsMode, t_iou: f64, sigma: f64) -> Result<Vec<HoiTriplet>> {
    match mode {
        NmsMode::None => Ok(triplets.to_vec()),
        NmsMode::Hard => hoi_nms(triplets, t_iou),
        NmsMode::Soft => hoi_softnms(triplets, t_iou, sigma),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trip(cat: u32, verb: u32, score: f64) -> HoiTriplet {
        HoiTriplet {
            human_box: [0.1, 0.1, 0.4, 0.6],
            object_box: [0.5, 0.2, 0.9, 0.7],
            object_category: cat,
            verb,
            score,
        }
    }

    fn pred(c_o: Vec<f64>, c_v: Vec<f64>) -> HoiPrediction {
        HoiPrediction {
            b_h: [0.3, 0.3, 0.2, 0.2],
            b_o: [0.95, 0.5, 0.2, 0.2],
            c_o,
            c_v,
        }
    }

    #[test]
    fn decode_examples() {
        let one = decode_triplets(&[pred(vec![1.0, 0.0, 0.0], vec![1.0])], 0.0);
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].score, 1.0);
        assert_eq!(one[0].object_category, 0);
        // object box is clamped at the right edge
        assert_eq!(one[0].object_box[2], 1.0);

        assert!(decode_triplets(&[pred(vec![1.0, 0.0], vec![1.0])], 1.1).is_empty());

        let t = decode_triplets(&[pred(vec![0.1, 0.8, 0.1], vec![0.5, 0.9])], 0.45);
        assert_eq!(t.len(), 1);
        assert_eq!((t[0].object_category, t[0].verb), (1, 1));
        assert!((t[0].score - 0.72).abs() < 1e-15);
    }

    #[test]
    fn decode_ignores_no_object_slot() {
        let t = decode_triplets(&[pred(vec![0.2, 0.1, 0.7], vec![1.0])], 0.0);
        assert_eq!(t[0].object_category, 0);
        assert!((t[0].score - 0.2).abs() < 1e-15);
    }

    #[test]
    fn iou_hoi_examples() {
        let a = trip(1, 2, 0.9);
        assert_eq!(iou_hoi(&a, &trip(3, 2, 0.9)), 0.0);
        assert_eq!(iou_hoi(&a, &trip(1, 0, 0.9)), 0.0);
        assert_eq!(iou_hoi(&a, &a.clone()), 1.0);

        // human IoU 0.8 (area 0.8 inside 1.0), object IoU 0.4
        let base = HoiTriplet {
            human_box: [0.0, 0.0, 1.0, 1.0],
            object_box: [0.0, 0.0, 1.0, 0.5],
            ..a.clone()
        };
        let other = HoiTriplet {
            human_box: [0.0, 0.0, 0.8, 1.0],
            object_box: [0.0, 0.0, 1.0, 0.2],
            ..a
        };
        assert!((iou(&base.human_box, &other.human_box) - 0.8).abs() < 1e-15);
        assert!((iou_hoi(&base, &other) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn nms_examples() {
        let kept = hoi_nms(&[trip(1, 0, 0.8), trip(1, 0, 0.9)], 0.6).unwrap();
        assert_eq!(kept, vec![trip(1, 0, 0.9)]);

        let kept = hoi_nms(&[trip(1, 0, 0.9), trip(2, 0, 0.8)], 0.6).unwrap();
        assert_eq!(kept.len(), 2);

        let kept = hoi_nms(&[trip(1, 0, 0.9), trip(1, 0, 0.8)], 1.0).unwrap();
        assert_eq!(kept.len(), 2);

        assert!(hoi_nms(&[], 1.5).is_err());
    }

    #[test]
    fn softnms_decay() {
        // object IoU 0.5, human IoU 1
        let a = HoiTriplet {
            human_box: [0.0, 0.0, 1.0, 1.0],
            object_box: [0.0, 0.0, 1.0, 1.0],
            ..trip(1, 0, 1.0)
        };
        let b = HoiTriplet {
            object_box: [0.0, 0.0, 1.0, 0.5],
            ..a.clone()
        };
        let out = hoi_softnms(&[a.clone(), b.clone()], 0.4, DEFAULT_SIGMA).unwrap();
        assert_eq!(out[0].score, 1.0);
        assert!((out[1].score - (-0.5f64).exp()).abs() < 1e-12);
        assert!((out[1].score - 0.606_530_66).abs() < 1e-8);

        let out = hoi_softnms(&[a.clone(), b.clone()], 0.5, DEFAULT_SIGMA).unwrap();
        assert_eq!(out[1].score, 1.0);

        let c = HoiTriplet { verb: 3, ..b };
        let out = hoi_softnms(&[a, c], 0.0, DEFAULT_SIGMA).unwrap();
        assert!(out.iter().all(|t| t.score == 1.0));
    }

    #[test]
    fn ground_truth_expansion() {
        let gt = GroundTruthTriplet {
            b_h: [0.5, 0.5, 0.2, 0.4],
            b_o: [0.2, 0.2, 0.2, 0.2],
            object_category: 4,
            verbs: vec![1, 6],
        };
        let t = HoiTriplet::from_ground_truth(&gt);
        assert_eq!(t.len(), 2);
        assert_eq!(t[1].verb, 6);
        assert!((t[0].human_box[0] - 0.4).abs() < 1e-15);
        t[0].validate().unwrap();
    }
}
