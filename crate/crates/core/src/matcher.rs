//! Label assignment between ground-truth triplets and decoder queries.
//!
//! The base cost is the usual set-prediction mix of class, verb, L1 box and
//! GIoU terms. The category-aware term adds `0` when a query's prior slot has
//! the ground truth's category, `v` for a Background slot and `2v` otherwise,
//! so matching is steered towards queries seeded with the right category.

use serde::{Deserialize, Serialize};

use crate::error::{CatnError, Result};
use crate::geometry::{cxcywh_to_xyxy, giou, CenterBox};
use crate::priors::CategoryRef;
use crate::tensor::Matrix;
use crate::transformer::HoiPrediction;

pub const DEFAULT_V: f64 = 500.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthTriplet {
    /// Human box `(cx, cy, w, h)`.
    pub b_h: CenterBox,
    pub b_o: CenterBox,
    pub object_category: u32,
    pub verbs: Vec<u32>,
}

impl GroundTruthTriplet {
    pub fn validate(&self, k_obj: Option<u32>, k_verb: Option<u32>) -> Result<()> {
        for b in [&self.b_h, &self.b_o] {
            if !b.iter().all(|v| v.is_finite()) || b[2] <= 0.0 || b[3] <= 0.0 {
                return Err(CatnError::Validation(format!("ground-truth box {b:?} invalid")));
            }
        }
        if self.verbs.is_empty() {
            return Err(CatnError::Validation("ground truth has no verbs".into()));
        }
        if let Some(k) = k_obj {
            if self.object_category >= k {
                return Err(CatnError::Validation(format!(
                    "ground-truth category {} >= K={k}",
                    self.object_category
                )));
            }
        }
        if let Some(k) = k_verb {
            if let Some(v) = self.verbs.iter().find(|&&v| v >= k) {
                return Err(CatnError::Validation(format!("verb {v} >= {k}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostWeights {
    pub w_obj: f64,
    pub w_verb: f64,
    pub w_box: f64,
    pub w_giou: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            w_obj: 1.0,
            w_verb: 1.0,
            w_box: 2.5,
            w_giou: 1.0,
        }
    }
}

impl CostWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.w_obj, self.w_verb, self.w_box, self.w_giou]
            .iter()
            .any(|w| !(w.is_finite() && *w >= 0.0))
        {
            return Err(CatnError::Config(format!("cost weights must be >= 0: {self:?}")));
        }
        Ok(())
    }
}

/// `N_gt x N_q` matching cost.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    pub values: Matrix,
}

impl CostMatrix {
    pub fn n_gt(&self) -> usize {
        self.values.rows()
    }

    pub fn n_q(&self) -> usize {
        self.values.cols()
    }
}

/// Optimal pairing of every ground truth to a distinct query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Assignment {
    /// `(gt_index, query_index)`, sorted by ground truth.
    pub pairs: Vec<(usize, usize)>,
    pub total: f64,
}

impl Assignment {
    /// For each query, the ground truth it is assigned to; `None` marks a negative.
    pub fn query_labels(&self, n_q: usize) -> Vec<Option<usize>> {
        let mut labels = vec![None; n_q];
        for &(g, q) in &self.pairs {
            labels[q] = Some(g);
        }
        labels
    }
}

/// Unweighted components of the base cost for one (ground truth, query) pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostTerms {
    pub obj: f64,
    pub verb: f64,
    pub l1: f64,
    pub giou: f64,
}

impl CostTerms {
    pub fn weighted(&self, w: &CostWeights) -> f64 {
        w.w_obj * self.obj + w.w_verb * self.verb + w.w_box * self.l1 + w.w_giou * self.giou
    }
}

/// Mean miss on ground-truth verbs and mean false alarm on the rest,
/// averaged so the result lies in `[0, 1]`.
pub fn verb_cost(c_v: &[f64], verbs: &[u32]) -> f64 {
    let mut pos = 0.0;
    let mut n_pos = 0usize;
    let mut neg = 0.0;
    let mut n_neg = 0usize;
    for (i, &p) in c_v.iter().enumerate() {
        if verbs.contains(&(i as u32)) {
            pos += 1.0 - p;
            n_pos += 1;
        } else {
            neg += p;
            n_neg += 1;
        }
    }
    let pos = if n_pos > 0 { pos / n_pos as f64 } else { 0.0 };
    if n_neg == 0 {
        pos
    } else {
        0.5 * (pos + neg / n_neg as f64)
    }
}

fn l1(a: &CenterBox, b: &CenterBox) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

pub fn pair_terms(pred: &HoiPrediction, gt: &GroundTruthTriplet) -> Result<CostTerms> {
    let cat = gt.object_category as usize;
    if cat >= pred.k_obj() {
        return Err(CatnError::Shape(format!(
            "ground-truth category {cat} outside prediction's {} classes",
            pred.k_obj()
        )));
    }
    if let Some(v) = gt.verbs.iter().find(|&&v| v as usize >= pred.c_v.len()) {
        return Err(CatnError::Shape(format!(
            "ground-truth verb {v} outside prediction's {} verbs",
            pred.c_v.len()
        )));
    }
    let g = |p: &CenterBox, t: &CenterBox| 1.0 - giou(&cxcywh_to_xyxy(p), &cxcywh_to_xyxy(t));
    Ok(CostTerms {
        obj: 1.0 - pred.c_o[cat],
        verb: verb_cost(&pred.c_v, &gt.verbs),
        l1: l1(&pred.b_h, &gt.b_h) + l1(&pred.b_o, &gt.b_o),
        giou: g(&pred.b_h, &gt.b_h) + g(&pred.b_o, &gt.b_o),
    })
}

pub fn base_cost(preds: &[HoiPrediction], gts: &[GroundTruthTriplet], weights: &CostWeights) -> Result<CostMatrix> {
    weights.validate()?;
    let mut values = Matrix::zeros(gts.len(), preds.len());
    for (i, gt) in gts.iter().enumerate() {
        for (j, p) in preds.iter().enumerate() {
            values.set(i, j, pair_terms(p, gt)?.weighted(weights));
        }
    }
    Ok(CostMatrix { values })
}

/// Category-aware penalty for one pair.
pub fn external_term(prior: CategoryRef, gt_category: u32, v: f64) -> f64 {
    match prior {
        CategoryRef::Real(c) if c == gt_category => 0.0,
        CategoryRef::Background => v,
        CategoryRef::None => 2.0 * v,
        CategoryRef::Real(_) => 2.0 * v,
    }
}

pub fn external_cost(prior_of_query: &[CategoryRef], gts: &[GroundTruthTriplet], v: f64) -> Result<CostMatrix> {
    if !(v.is_finite() && v > 0.0) {
        return Err(CatnError::Config(format!("external cost v must be > 0, got {v}")));
    }
    let mut values = Matrix::zeros(gts.len(), prior_of_query.len());
    for (i, gt) in gts.iter().enumerate() {
        for (j, &p) in prior_of_query.iter().enumerate() {
            values.set(i, j, external_term(p, gt.object_category, v));
        }
    }
    Ok(CostMatrix { values })
}

/// Exact minimum-cost assignment of every row to a distinct column
/// (shortest augmenting paths with potentials, `O(n^2 m)`).
///
/// Rows must not outnumber columns. Among equally cheap augmenting steps the
/// lowest column index wins, which makes tie resolution reproducible.
pub fn hungarian(cost: &CostMatrix) -> Result<Assignment> {
    let n = cost.n_gt();
    let m = cost.n_q();
    if n > m {
        return Err(CatnError::Infeasible { n_gt: n, n_q: m });
    }
    if cost.values.data().iter().any(|v| !v.is_finite()) {
        return Err(CatnError::NonFinite("cost matrix".into()));
    }
    if n == 0 {
        return Ok(Assignment {
            pairs: Vec::new(),
            total: 0.0,
        });
    }
    let a = |i: usize, j: usize| cost.values.get(i - 1, j - 1);
    // 1-based; column 0 is the virtual source
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut row_of = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = a(i0, j) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut pairs: Vec<(usize, usize)> = (1..=m)
        .filter(|&j| row_of[j] != 0)
        .map(|j| (row_of[j] - 1, j - 1))
        .collect();
    pairs.sort_unstable();
    let total = pairs.iter().map(|&(i, j)| cost.values.get(i, j)).sum();
    Ok(Assignment { pairs, total })
}

/// Hungarian assignment on base cost plus, when query priors are given, the
/// category-aware penalty.
pub fn assign_labels(
    preds: &[HoiPrediction],
    gts: &[GroundTruthTriplet],
    prior_of_query: Option<&[CategoryRef]>,
    weights: &CostWeights,
    v: f64,
) -> Result<Assignment> {
    if gts.len() > preds.len() {
        return Err(CatnError::Infeasible {
            n_gt: gts.len(),
            n_q: preds.len(),
        });
    }
    let mut total = base_cost(preds, gts, weights)?;
    if let Some(priors) = prior_of_query {
        if priors.len() != preds.len() {
            return Err(CatnError::Shape(format!(
                "{} query priors for {} predictions",
                priors.len(),
                preds.len()
            )));
        }
        let ext = external_cost(priors, gts, v)?;
        total.values = total.values.add(&ext.values)?;
    }
    hungarian(&total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;

    fn cm(rows: &[Vec<f64>]) -> CostMatrix {
        CostMatrix {
            values: Matrix::from_rows(rows).unwrap(),
        }
    }

    fn gt(cat: u32, verbs: Vec<u32>) -> GroundTruthTriplet {
        GroundTruthTriplet {
            b_h: [0.3, 0.4, 0.2, 0.3],
            b_o: [0.6, 0.5, 0.1, 0.2],
            object_category: cat,
            verbs,
        }
    }

    fn perfect(gt: &GroundTruthTriplet, k_obj: usize, k_verb: usize) -> HoiPrediction {
        let mut c_o = vec![0.0; k_obj + 1];
        c_o[gt.object_category as usize] = 1.0;
        let mut c_v = vec![0.0; k_verb];
        for &v in &gt.verbs {
            c_v[v as usize] = 1.0;
        }
        HoiPrediction {
            b_h: gt.b_h,
            b_o: gt.b_o,
            c_o,
            c_v,
        }
    }

    #[test]
    fn perfect_prediction_has_zero_cost() {
        let g = gt(2, vec![0, 3]);
        let p = perfect(&g, 4, 5);
        let c = base_cost(
            std::slice::from_ref(&p),
            std::slice::from_ref(&g),
            &CostWeights::default(),
        )
        .unwrap();
        assert_eq!(c.values.get(0, 0), 0.0);

        let zero = CostWeights {
            w_obj: 0.0,
            w_verb: 0.0,
            w_box: 0.0,
            w_giou: 0.0,
        };
        let mut other = p;
        other.b_h = [0.9, 0.9, 0.1, 0.1];
        let c = base_cost(&[other], &[g], &zero).unwrap();
        assert_eq!(c.values.get(0, 0), 0.0);
    }

    #[test]
    fn verb_cost_bounds() {
        assert_eq!(verb_cost(&[1.0, 0.0], &[0]), 0.0);
        assert_eq!(verb_cost(&[0.0, 1.0], &[0]), 1.0);
        assert_eq!(verb_cost(&[0.25], &[0]), 0.75);
    }

    #[test]
    fn base_cost_rejects_out_of_range_category() {
        let g = gt(9, vec![0]);
        let p = perfect(&gt(0, vec![0]), 3, 2);
        assert!(matches!(
            base_cost(&[p], &[g], &CostWeights::default()),
            Err(CatnError::Shape(_))
        ));
    }

    #[test]
    fn external_cost_branches() {
        let priors = [
            CategoryRef::Real(4),
            CategoryRef::Background,
            CategoryRef::None,
            CategoryRef::Real(1),
        ];
        let c = external_cost(&priors, &[gt(4, vec![0])], DEFAULT_V).unwrap();
        assert_eq!(c.values.row(0), &[0.0, 500.0, 1000.0, 1000.0]);
        assert!(external_cost(&priors, &[], 0.0).is_err());
    }

    #[test]
    fn hungarian_examples() {
        let a = hungarian(&cm(&[vec![1.0, 2.0], vec![2.0, 1.0]])).unwrap();
        assert_eq!(a.pairs, vec![(0, 0), (1, 1)]);
        assert_eq!(a.total, 2.0);

        let a = hungarian(&cm(&[vec![4.0, 3.0, 0.5, 7.0]])).unwrap();
        assert_eq!(a.pairs, vec![(0, 2)]);

        // ties go to the lowest column
        let a = hungarian(&cm(&[vec![1.0, 1.0, 1.0]])).unwrap();
        assert_eq!(a.pairs, vec![(0, 0)]);

        let err = hungarian(&cm(&[vec![1.0], vec![2.0]])).unwrap_err();
        assert!(matches!(err, CatnError::Infeasible { n_gt: 2, n_q: 1 }));
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn hungarian_constructed_diagonal() {
        // off-diagonal entries exceed every diagonal entry
        let mut rng = Rng::new(3);
        let rows: Vec<Vec<f64>> = (0..5)
            .map(|i| {
                (0..5)
                    .map(|j| {
                        if i == j {
                            rng.uniform(0.0, 1.0)
                        } else {
                            rng.uniform(2.0, 10.0)
                        }
                    })
                    .collect()
            })
            .collect();
        let a = hungarian(&cm(&rows)).unwrap();
        assert_eq!(a.pairs, (0..5).map(|i| (i, i)).collect::<Vec<_>>());
    }

    #[test]
    fn assign_prefers_prior_category_then_background() {
        let gts = vec![gt(1, vec![0]), gt(7, vec![1])];
        let preds: Vec<_> = (0..4).map(|_| perfect(&gt(0, vec![0]), 8, 2)).collect();
        let priors = [
            CategoryRef::None,
            CategoryRef::Real(1),
            CategoryRef::Background,
            CategoryRef::Real(3),
        ];
        let a = assign_labels(&preds, &gts, Some(&priors), &CostWeights::default(), DEFAULT_V).unwrap();
        assert_eq!(a.pairs, vec![(0, 1), (1, 2)]);
        let labels = a.query_labels(4);
        assert_eq!(labels, vec![None, Some(0), Some(1), None]);

        let empty = assign_labels(&preds, &[], Some(&priors), &CostWeights::default(), DEFAULT_V).unwrap();
        assert!(empty.pairs.is_empty());
    }
}
