//! Category-level attention: every feature location attends over the prior
//! embeddings and gets their attention-weighted sum added back.

use serde::{Deserialize, Serialize};

use crate::error::{CatnError, Result};
use crate::priors::PriorEmbeddings;
use crate::tensor::{canonical_sum, softmax_into, LinearLayer, Matrix};

/// Flattened `h x w` feature map, one row per location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureGrid {
    pub h: usize,
    pub w: usize,
    pub features: Matrix,
}

impl FeatureGrid {
    pub fn new(h: usize, w: usize, features: Matrix) -> Result<Self> {
        let grid = Self { h, w, features };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        self.features.validate()?;
        if self.features.rows() != self.h * self.w {
            return Err(CatnError::Validation(format!(
                "feature grid {}x{} has {} rows",
                self.h,
                self.w,
                self.features.rows()
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }
}

/// Visual-to-word projection, a single affine map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClamParams {
    pub mlp: LinearLayer,
}

fn check_dims(grid: &FeatureGrid, e: &PriorEmbeddings) -> Result<()> {
    if e.matrix.cols() != grid.dim() {
        return Err(CatnError::Shape(format!(
            "prior embeddings width {} != feature width {}",
            e.matrix.cols(),
            grid.dim()
        )));
    }
    Ok(())
}

/// Softmax over dot products between projected features and prior rows (`hw x N_c`).
pub fn attention_weights(grid: &FeatureGrid, e: &PriorEmbeddings, params: &ClamParams) -> Result<Matrix> {
    check_dims(grid, e)?;
    if params.mlp.in_dim() != grid.dim() || params.mlp.out_dim() != grid.dim() {
        return Err(CatnError::Shape(format!(
            "CLAM projection {}->{} for feature width {}",
            params.mlp.in_dim(),
            params.mlp.out_dim(),
            grid.dim()
        )));
    }
    let projected = params.mlp.forward(&grid.features)?;
    let n_c = e.matrix.rows();
    let mut logits = vec![0.0; n_c];
    let mut out = Matrix::zeros(projected.rows(), n_c);
    for r in 0..projected.rows() {
        let x = projected.row(r);
        for (l, er) in logits.iter_mut().zip(e.matrix.row_iter()) {
            *l = x.iter().zip(er).map(|(a, b)| a * b).sum();
        }
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(CatnError::NonFinite("CLAM similarity overflow".into()));
        }
        softmax_into(&logits, out.row_mut(r));
    }
    Ok(out)
}

/// Adds the `w_att`-weighted sum of prior rows onto each feature row.
pub fn enhance(grid: &FeatureGrid, w_att: &Matrix, e: &PriorEmbeddings) -> Result<FeatureGrid> {
    check_dims(grid, e)?;
    if w_att.rows() != grid.features.rows() || w_att.cols() != e.matrix.rows() {
        return Err(CatnError::Shape(format!(
            "attention {}x{} for {} locations and {} priors",
            w_att.rows(),
            w_att.cols(),
            grid.features.rows(),
            e.matrix.rows()
        )));
    }
    let d = grid.dim();
    let n_c = e.matrix.rows();
    let mut features = grid.features.clone();
    let mut terms = vec![0.0; n_c];
    for r in 0..features.rows() {
        let weights = w_att.row(r);
        let row = features.row_mut(r);
        for (c, x) in row.iter_mut().enumerate().take(d) {
            for (j, t) in terms.iter_mut().enumerate() {
                *t = weights[j] * e.matrix.get(j, c);
            }
            *x += canonical_sum(&mut terms);
        }
    }
    Ok(FeatureGrid {
        h: grid.h,
        w: grid.w,
        features,
    })
}

pub fn clam_forward(grid: &FeatureGrid, e: &PriorEmbeddings, params: &ClamParams) -> Result<FeatureGrid> {
    let w_att = attention_weights(grid, e, params)?;
    enhance(grid, &w_att, e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::priors::{CategoryRef, PriorCategories};

    fn prior(rows: &[Vec<f64>]) -> PriorEmbeddings {
        let n = rows.len();
        let mut slots = vec![CategoryRef::None; n];
        slots[0] = CategoryRef::Background;
        PriorEmbeddings {
            matrix: Matrix::from_rows(rows).unwrap(),
            source: PriorCategories { slots },
        }
    }

    fn grid() -> FeatureGrid {
        FeatureGrid::new(
            1,
            2,
            Matrix::from_rows(&[vec![0.5, -1.0, 2.0], vec![3.0, 0.0, 1.0]]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn zero_embeddings_give_uniform_weights_and_identity() {
        let e = prior(&[vec![0.0; 3], vec![0.0; 3], vec![0.0; 3], vec![0.0; 3]]);
        let params = ClamParams {
            mlp: LinearLayer::identity(3),
        };
        let w = attention_weights(&grid(), &e, &params).unwrap();
        assert!(w.data().iter().all(|&v| v == 0.25));
        assert_eq!(clam_forward(&grid(), &e, &params).unwrap(), grid());
    }

    #[test]
    fn large_aligned_projection_is_one_hot() {
        let e = prior(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]);
        let g = FeatureGrid::new(1, 1, Matrix::from_rows(&[vec![0.0, 1.0, 0.0]]).unwrap()).unwrap();
        let mut mlp = LinearLayer::identity(3);
        mlp.weight = mlp.weight.scale(50.0);
        let w = attention_weights(&g, &e, &ClamParams { mlp }).unwrap();
        assert!((w.get(0, 1) - 1.0).abs() < 1e-15);
        assert!(w.get(0, 0) < 1e-21);
    }

    #[test]
    fn enhance_endpoints() {
        let e = prior(&[vec![1.0, 2.0, 3.0], vec![-1.0, 0.0, 4.0]]);
        let one_hot = Matrix::from_rows(&[vec![0.0, 1.0], vec![0.0, 1.0]]).unwrap();
        let out = enhance(&grid(), &one_hot, &e).unwrap();
        assert_eq!(out.features.row(0), &[-0.5, -1.0, 6.0]);

        let uniform = Matrix::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let out = enhance(&grid(), &uniform, &e).unwrap();
        // mean of the two prior rows is [0, 1, 3.5]
        assert_eq!(out.features.row(1), &[3.0, 1.0, 4.5]);
        assert_eq!((out.h, out.w), (1, 2));
    }

    #[test]
    fn shape_errors() {
        let e = prior(&[vec![1.0, 2.0], vec![0.0, 1.0]]);
        let params = ClamParams {
            mlp: LinearLayer::identity(3),
        };
        assert!(matches!(
            attention_weights(&grid(), &e, &params),
            Err(CatnError::Shape(_))
        ));
        let e3 = prior(&[vec![1.0, 2.0, 3.0], vec![0.0, 1.0, 0.0]]);
        assert!(enhance(&grid(), &Matrix::zeros(2, 3), &e3).is_err());
    }
}
