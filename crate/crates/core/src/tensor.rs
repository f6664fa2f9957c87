//! Dense row-major `f64` matrices and the handful of kernels the pipeline needs.
//!
//! Everything here is deterministic. Reductions that run over a set whose
//! order is not semantically meaningful (softmax denominators, attention
//! weighted sums) go through [`canonical_sum`], which sums terms in ascending
//! total order so the result does not depend on the order the set was
//! presented in.

use rand_xoshiro::rand_core::{Rng as _, SeedableRng};
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};

use crate::error::{CatnError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from row-major data, rejecting wrong lengths and non-finite values.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(CatnError::Shape(format!(
                "matrix data length {} != {rows}x{cols}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(CatnError::NonFinite(format!("matrix element {pos}")));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(CatnError::Shape("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    /// Re-checks the invariants; used after deserialization.
    pub fn validate(&self) -> Result<()> {
        if self.data.len() != self.rows * self.cols {
            return Err(CatnError::Validation(format!(
                "matrix data length {} != {}x{}",
                self.data.len(),
                self.rows,
                self.cols
            )));
        }
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(CatnError::Validation("matrix contains non-finite values".into()));
        }
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact panics on a zero chunk size
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// Selects rows by index, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    /// Takes the column block `[start, start + width)`.
    pub fn col_block(&self, start: usize, width: usize) -> Matrix {
        let mut data = Vec::with_capacity(self.rows * width);
        for r in 0..self.rows {
            data.extend_from_slice(&self.row(r)[start..start + width]);
        }
        Matrix {
            rows: self.rows,
            cols: width,
            data,
        }
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, k: f64) -> Matrix {
        self.map(|v| v * k)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip_with(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(CatnError::Shape(format!(
                "elementwise op on {}x{} and {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Standard matrix product. Fails on inner-dimension mismatch or if the result overflows.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(CatnError::Shape(format!(
            "matmul {}x{} by {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let arow = a.row(i);
        let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for (k, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b.data[k * b.cols..(k + 1) * b.cols];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    if out.data.iter().any(|v| !v.is_finite()) {
        return Err(CatnError::NonFinite("matmul overflow".into()));
    }
    Ok(out)
}

/// Sums `terms` in ascending total order; the result is invariant to any
/// permutation of the input. Reorders `terms` in place.
pub fn canonical_sum(terms: &mut [f64]) -> f64 {
    terms.sort_unstable_by(f64::total_cmp);
    terms.iter().sum()
}

/// Writes the max-stabilized softmax of `logits` into `out`.
pub fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
    }
    let mut scratch = out.to_vec();
    let denom = canonical_sum(&mut scratch);
    for o in out.iter_mut() {
        *o /= denom;
    }
}

pub fn softmax_rows(m: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(m.rows, m.cols);
    for r in 0..m.rows {
        softmax_into(m.row(r), out.row_mut(r));
    }
    out
}

fn sigmoid_scalar(x: f64) -> f64 {
    // branch keeps exp() from overflowing for large |x|
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(m: &Matrix) -> Matrix {
    m.map(sigmoid_scalar)
}

pub fn relu(m: &Matrix) -> Matrix {
    m.map(|v| v.max(0.0))
}

/// Row-wise layer normalization followed by the affine `gain * x + bias`.
pub fn layer_norm(m: &Matrix, gain: &[f64], bias: &[f64], eps: f64) -> Result<Matrix> {
    if gain.len() != m.cols || bias.len() != m.cols {
        return Err(CatnError::Shape(format!(
            "layer_norm gain/bias {}/{} for {} columns",
            gain.len(),
            bias.len(),
            m.cols
        )));
    }
    let n = m.cols as f64;
    let mut out = Matrix::zeros(m.rows, m.cols);
    for r in 0..m.rows {
        let row = m.row(r);
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + eps).sqrt();
        for (c, o) in out.row_mut(r).iter_mut().enumerate() {
            *o = (row[c] - mean) * inv * gain[c] + bias[c];
        }
    }
    Ok(out)
}

/// Affine map `y = W x + b`, weight stored `out x in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearLayer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl LinearLayer {
    pub fn new(weight: Matrix, bias: Vec<f64>) -> Result<Self> {
        let layer = Self { weight, bias };
        layer.validate()?;
        Ok(layer)
    }

    pub fn identity(n: usize) -> Self {
        Self {
            weight: Matrix::identity(n),
            bias: vec![0.0; n],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn validate(&self) -> Result<()> {
        self.weight.validate()?;
        if self.bias.len() != self.weight.rows() {
            return Err(CatnError::Validation(format!(
                "linear bias length {} != out dim {}",
                self.bias.len(),
                self.weight.rows()
            )));
        }
        if self.bias.iter().any(|v| !v.is_finite()) {
            return Err(CatnError::Validation("linear bias non-finite".into()));
        }
        Ok(())
    }

    /// Applies the layer to every row of `x` (`n x in` -> `n x out`).
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.in_dim() {
            return Err(CatnError::Shape(format!(
                "linear {} -> {} applied to {} columns",
                self.in_dim(),
                self.out_dim(),
                x.cols()
            )));
        }
        let mut out = Matrix::zeros(x.rows(), self.out_dim());
        for r in 0..x.rows() {
            let xr = x.row(r);
            for (o, orow) in out.row_mut(r).iter_mut().enumerate() {
                let w = self.weight.row(o);
                *orow = w.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>() + self.bias[o];
            }
        }
        if out.data().iter().any(|v| !v.is_finite()) {
            return Err(CatnError::NonFinite("linear overflow".into()));
        }
        Ok(out)
    }

    pub fn forward_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        let m = Matrix::new(1, x.len(), x.to_vec())?;
        Ok(self.forward(&m)?.data)
    }
}

/// SplitMix64 generator (the `rand_xoshiro` implementation).
///
/// Each step adds `0x9E3779B97F4A7C15` to the state and returns
/// `z ^ (z >> 31)` where `z` is the new state passed through
/// `(z ^ (z >> 30)) * 0xBF58476D1CE4E5B9` then `(z ^ (z >> 27)) * 0x94D049BB133111EB`
/// (wrapping); the seed is the initial state. Uniform doubles take the top
/// 53 bits: `(x >> 11) * 2^-53`. Normals use Box-Muller on two successive uniforms.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rng {
    inner: SplitMix64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: SplitMix64::seed_from_u64(seed),
        }
    }

    /// Derives an independent stream for a labelled sub-task.
    pub fn fork(&mut self, label: u64) -> Rng {
        let base = self.next_u64();
        Rng::new(base ^ label.wrapping_mul(0xD1B5_4A32_D192_ED03))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `[0, n)`; `n` must be positive.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "Rng::below(0)");
        // multiply-shift keeps the bias below 2^-64 * n
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64(); // (0, 1]
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

/// Draws an `out x in` layer with weights uniform in `[-scale, scale]` and zero bias.
pub fn init_linear(rng: &mut Rng, out: usize, inp: usize, scale: f64) -> LinearLayer {
    let data = (0..out * inp).map(|_| rng.uniform(-scale, scale)).collect();
    LinearLayer {
        weight: Matrix {
            rows: out,
            cols: inp,
            data,
        },
        bias: vec![0.0; out],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_examples() {
        let x = Matrix::from_rows(&[vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        assert_eq!(matmul(&Matrix::identity(2), &x).unwrap(), x);

        let a = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![3.0], vec![4.0]]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().data(), &[11.0]);

        let z = matmul(&Matrix::zeros(2, 2), &x).unwrap();
        assert_eq!(z, Matrix::zeros(2, 2));
    }

    #[test]
    fn matmul_shape_error() {
        let a = Matrix::zeros(2, 3);
        assert!(matches!(matmul(&a, &a), Err(CatnError::Shape(_))));
    }

    #[test]
    fn matrix_rejects_nan_and_bad_length() {
        assert!(Matrix::new(1, 2, vec![1.0, f64::NAN]).is_err());
        assert!(Matrix::new(2, 2, vec![1.0]).is_err());
    }

    #[test]
    fn softmax_examples() {
        let m = Matrix::from_rows(&[vec![0.0, 0.0, 0.0], vec![2f64.ln(), 0.0, f64::MIN / 4.0]]).unwrap();
        let s = softmax_rows(&m);
        for &v in s.row(0) {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!((s.get(1, 0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((s.get(1, 1) - 1.0 / 3.0).abs() < 1e-15);

        let big = softmax_rows(&Matrix::from_rows(&[vec![1000.0, 0.0]]).unwrap());
        assert!(big.data().iter().all(|v| v.is_finite()));
        assert!((big.get(0, 0) - 1.0).abs() < 1e-12);
        assert!(big.get(0, 1) < 1e-300);
    }

    #[test]
    fn sigmoid_examples() {
        let m = Matrix::from_rows(&[vec![0.0, -800.0, 800.0, -3.0, 3.0]]).unwrap();
        let s = sigmoid(&m);
        assert_eq!(s.get(0, 0), 0.5);
        assert!(s.get(0, 1) >= 0.0 && s.get(0, 1) < 1e-300);
        assert_eq!(s.get(0, 2), 1.0);
        assert!((s.get(0, 3) + s.get(0, 4) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn layer_norm_examples() {
        let ones = vec![1.0; 3];
        let zeros = vec![0.0; 3];
        let c = Matrix::from_rows(&[vec![5.0, 5.0, 5.0]]).unwrap();
        let out = layer_norm(&c, &ones, &zeros, 1e-5).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));

        let m = Matrix::from_rows(&[vec![1.0, -1.0]]).unwrap();
        let out = layer_norm(&m, &[1.0, 1.0], &[0.0, 0.0], 0.0).unwrap();
        assert_eq!(out.data(), &[1.0, -1.0]);

        let m = Matrix::from_rows(&[vec![0.3, 2.0, -7.0]]).unwrap();
        let bias = [0.5, -1.0, 2.0];
        let out = layer_norm(&m, &ones, &bias, 1e-9).unwrap();
        let mean: f64 = out.row(0).iter().sum::<f64>() / 3.0;
        assert!((mean - bias.iter().sum::<f64>() / 3.0).abs() < 1e-12);

        assert!(layer_norm(&m, &[1.0], &[0.0], 1e-5).is_err());
    }

    #[test]
    fn init_linear_determinism() {
        let a = init_linear(&mut Rng::new(7), 4, 3, 0.5);
        let b = init_linear(&mut Rng::new(7), 4, 3, 0.5);
        assert_eq!(a, b);
        assert!(a.weight.data().iter().all(|v| v.abs() <= 0.5));
        assert!(a.bias.iter().all(|&v| v == 0.0));

        let z = init_linear(&mut Rng::new(7), 4, 3, 0.0);
        assert!(z.weight.data().iter().all(|&v| v == 0.0));

        let c = init_linear(&mut Rng::new(8), 4, 3, 0.5);
        assert_ne!(a.weight, c.weight);
    }

    #[test]
    fn splitmix_reference_values() {
        // first outputs of the reference splitmix64 with seed 0
        let mut r = Rng::new(0);
        assert_eq!(r.next_u64(), 0xE220_A839_7B1D_CDAF);
        assert_eq!(r.next_u64(), 0x6E78_9E6A_A1B9_65F4);
        assert_eq!(r.next_u64(), 0x06C4_5D18_8009_454F);
    }

    #[test]
    fn rng_uniform_range_and_mean() {
        let mut r = Rng::new(42);
        let n = 20_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let v = r.next_f64();
            assert!((0.0..1.0).contains(&v));
            sum += v;
        }
        assert!((sum / n as f64 - 0.5).abs() < 0.01);
        for _ in 0..1000 {
            assert!(r.below(7) < 7);
        }
    }

    #[test]
    fn canonical_sum_is_order_free() {
        let mut a = vec![1e16, 1.0, -1e16, 3.5, 1e-3];
        let mut b = vec![3.5, -1e16, 1e-3, 1.0, 1e16];
        assert_eq!(canonical_sum(&mut a).to_bits(), canonical_sum(&mut b).to_bits());
    }
}
