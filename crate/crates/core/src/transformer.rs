//! Toy-scale post-norm encoder/decoder with sinusoidal spatial encodings and
//! the four per-query prediction heads.
//!
//! Positional encodings are added to attention queries and keys but never to
//! values. Attention reductions over keys are computed in a canonical order
//! so that permuting tokens permutes outputs bit-for-bit.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::clam::{ClamParams, FeatureGrid};
use crate::error::{CatnError, Result};
use crate::tensor::{init_linear, layer_norm, relu, sigmoid, softmax_into, LinearLayer, Matrix, Rng};

pub const MODEL_FORMAT: &str = "catn-model";
pub const MODEL_VERSION: u32 = 1;
const LN_EPS: f64 = 1e-5;
const PE_TEMPERATURE: f64 = 10_000.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_enc: usize,
    pub n_dec: usize,
    pub n_q: usize,
    pub ffn_dim: usize,
    /// Object categories, excluding the trailing no-object class.
    pub k_obj: usize,
    pub k_verb: usize,
    /// Width of the ingested word vectors, projected to `d_model`.
    pub d_word: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 256,
            n_heads: 8,
            n_enc: 6,
            n_dec: 6,
            n_q: 100,
            ffn_dim: 512,
            k_obj: 80,
            k_verb: 117,
            d_word: 300,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("n_q", self.n_q),
            ("ffn_dim", self.ffn_dim),
            ("k_obj", self.k_obj),
            ("k_verb", self.k_verb),
            ("d_word", self.d_word),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(CatnError::Config(format!("{name} must be >= 1")));
            }
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(CatnError::Config(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !self.d_model.is_multiple_of(4) {
            return Err(CatnError::Config(format!(
                "d_model {} not divisible by 4",
                self.d_model
            )));
        }
        Ok(())
    }
}

/// Fixed 2-D sinusoidal encoding, `h*w x d`. The first `d/2` columns encode
/// the row coordinate and the rest the column coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialPE {
    pub pe: Matrix,
}

/// Learned per-query positional embedding, `n_q x d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryPE {
    pub pe: Matrix,
}

/// Raw head outputs for one query. Boxes are `(cx, cy, w, h)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HoiPrediction {
    pub b_h: [f64; 4],
    pub b_o: [f64; 4],
    /// Distribution over `k_obj + 1` classes; the last is no-object.
    pub c_o: Vec<f64>,
    pub c_v: Vec<f64>,
}

impl HoiPrediction {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: &f64| (0.0..=1.0).contains(v);
        if !self.b_h.iter().chain(&self.b_o).all(in_unit) {
            return Err(CatnError::Validation("prediction box outside [0, 1]".into()));
        }
        if self.c_o.len() < 2 || !self.c_o.iter().all(in_unit) {
            return Err(CatnError::Validation("prediction c_o malformed".into()));
        }
        if (self.c_o.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(CatnError::Validation("prediction c_o does not sum to 1".into()));
        }
        if !self.c_v.iter().all(in_unit) {
            return Err(CatnError::Validation("prediction c_v outside [0, 1]".into()));
        }
        Ok(())
    }

    /// Number of real object classes (excludes no-object).
    pub fn k_obj(&self) -> usize {
        self.c_o.len() - 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttentionParams {
    pub q: LinearLayer,
    pub k: LinearLayer,
    pub v: LinearLayer,
    pub o: LinearLayer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormParams {
    pub gain: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FfnParams {
    pub up: LinearLayer,
    pub down: LinearLayer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderLayer {
    pub self_attn: AttentionParams,
    pub norm1: NormParams,
    pub ffn: FfnParams,
    pub norm2: NormParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoderLayer {
    pub self_attn: AttentionParams,
    pub norm1: NormParams,
    pub cross_attn: AttentionParams,
    pub norm2: NormParams,
    pub ffn: FfnParams,
    pub norm3: NormParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadParams {
    /// Three layers, ReLU between them.
    pub human_box: Vec<LinearLayer>,
    pub object_box: Vec<LinearLayer>,
    pub object_class: LinearLayer,
    pub verb: LinearLayer,
}

/// Every learned tensor of the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub config: ModelConfig,
    /// Word-vector projection applied to prior categories.
    pub prior_proj: LinearLayer,
    pub clam: ClamParams,
    pub query_pe: QueryPE,
    pub encoder: Vec<EncoderLayer>,
    pub decoder: Vec<DecoderLayer>,
    pub heads: HeadParams,
}

/// On-disk model document: a header, the config, and the parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub params: ModelParams,
}

fn xavier(rng: &mut Rng, out: usize, inp: usize) -> LinearLayer {
    init_linear(rng, out, inp, (6.0 / (out + inp) as f64).sqrt())
}

fn unit_norm(d: usize) -> NormParams {
    NormParams {
        gain: vec![1.0; d],
        bias: vec![0.0; d],
    }
}

impl AttentionParams {
    fn init(rng: &mut Rng, d: usize) -> Self {
        Self {
            q: xavier(rng, d, d),
            k: xavier(rng, d, d),
            v: xavier(rng, d, d),
            o: xavier(rng, d, d),
        }
    }
}

impl FfnParams {
    fn init(rng: &mut Rng, d: usize, hidden: usize) -> Self {
        Self {
            up: xavier(rng, hidden, d),
            down: xavier(rng, d, hidden),
        }
    }

    fn forward(&self, x: &Matrix) -> Result<Matrix> {
        self.down.forward(&relu(&self.up.forward(x)?))
    }
}

impl NormParams {
    fn forward(&self, x: &Matrix) -> Result<Matrix> {
        layer_norm(x, &self.gain, &self.bias, LN_EPS)
    }
}

impl ModelParams {
    /// Seeded initialization: Xavier-uniform linears with zero bias, unit
    /// layer norms, standard-normal query embeddings.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let mut rng = Rng::new(seed);
        let prior_proj = xavier(&mut rng, d, config.d_word);
        let clam = ClamParams {
            mlp: xavier(&mut rng, d, d),
        };
        let pe_data = (0..config.n_q * d).map(|_| rng.normal()).collect();
        let query_pe = QueryPE {
            pe: Matrix::new(config.n_q, d, pe_data)?,
        };
        let encoder = (0..config.n_enc)
            .map(|_| EncoderLayer {
                self_attn: AttentionParams::init(&mut rng, d),
                norm1: unit_norm(d),
                ffn: FfnParams::init(&mut rng, d, config.ffn_dim),
                norm2: unit_norm(d),
            })
            .collect();
        let decoder = (0..config.n_dec)
            .map(|_| DecoderLayer {
                self_attn: AttentionParams::init(&mut rng, d),
                norm1: unit_norm(d),
                cross_attn: AttentionParams::init(&mut rng, d),
                norm2: unit_norm(d),
                ffn: FfnParams::init(&mut rng, d, config.ffn_dim),
                norm3: unit_norm(d),
            })
            .collect();
        let box_mlp = |rng: &mut Rng| vec![xavier(rng, d, d), xavier(rng, d, d), xavier(rng, 4, d)];
        let heads = HeadParams {
            human_box: box_mlp(&mut rng),
            object_box: box_mlp(&mut rng),
            object_class: xavier(&mut rng, config.k_obj + 1, d),
            verb: xavier(&mut rng, config.k_verb, d),
        };
        Ok(Self {
            config: config.clone(),
            prior_proj,
            clam,
            query_pe,
            encoder,
            decoder,
            heads,
        })
    }

    /// Checks every tensor against the config.
    pub fn validate(&self) -> Result<()> {
        let c = &self.config;
        c.validate()?;
        let d = c.d_model;
        let expect = |name: &str, l: &LinearLayer, out: usize, inp: usize| -> Result<()> {
            l.validate()?;
            if l.out_dim() != out || l.in_dim() != inp {
                return Err(CatnError::Validation(format!(
                    "{name} is {}x{}, expected {out}x{inp}",
                    l.out_dim(),
                    l.in_dim()
                )));
            }
            Ok(())
        };
        let norm = |name: &str, n: &NormParams| -> Result<()> {
            if n.gain.len() != d || n.bias.len() != d {
                return Err(CatnError::Validation(format!("{name} has wrong width")));
            }
            Ok(())
        };
        let attn = |name: &str, a: &AttentionParams| -> Result<()> {
            for (part, l) in [("q", &a.q), ("k", &a.k), ("v", &a.v), ("o", &a.o)] {
                expect(&format!("{name}.{part}"), l, d, d)?;
            }
            Ok(())
        };
        let ffn = |name: &str, f: &FfnParams| -> Result<()> {
            expect(&format!("{name}.up"), &f.up, c.ffn_dim, d)?;
            expect(&format!("{name}.down"), &f.down, d, c.ffn_dim)
        };
        expect("prior_proj", &self.prior_proj, d, c.d_word)?;
        expect("clam.mlp", &self.clam.mlp, d, d)?;
        self.query_pe.pe.validate()?;
        if self.query_pe.pe.rows() != c.n_q || self.query_pe.pe.cols() != d {
            return Err(CatnError::Validation("query_pe has wrong shape".into()));
        }
        if self.encoder.len() != c.n_enc || self.decoder.len() != c.n_dec {
            return Err(CatnError::Validation("layer count does not match config".into()));
        }
        for (i, l) in self.encoder.iter().enumerate() {
            attn(&format!("encoder[{i}].self_attn"), &l.self_attn)?;
            norm("encoder norm1", &l.norm1)?;
            ffn(&format!("encoder[{i}].ffn"), &l.ffn)?;
            norm("encoder norm2", &l.norm2)?;
        }
        for (i, l) in self.decoder.iter().enumerate() {
            attn(&format!("decoder[{i}].self_attn"), &l.self_attn)?;
            attn(&format!("decoder[{i}].cross_attn"), &l.cross_attn)?;
            ffn(&format!("decoder[{i}].ffn"), &l.ffn)?;
            for n in [&l.norm1, &l.norm2, &l.norm3] {
                norm("decoder norm", n)?;
            }
        }
        for (name, mlp) in [
            ("human_box", &self.heads.human_box),
            ("object_box", &self.heads.object_box),
        ] {
            if mlp.len() != 3 {
                return Err(CatnError::Validation(format!("{name} must have 3 layers")));
            }
            expect(name, &mlp[0], d, d)?;
            expect(name, &mlp[1], d, d)?;
            expect(name, &mlp[2], 4, d)?;
        }
        expect("object_class", &self.heads.object_class, c.k_obj + 1, d)?;
        expect("verb", &self.heads.verb, c.k_verb, d)?;
        Ok(())
    }

    pub fn to_file(&self) -> ModelFile {
        ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            params: self.clone(),
        }
    }

    pub fn from_file(file: ModelFile) -> Result<Self> {
        if file.format != MODEL_FORMAT {
            return Err(CatnError::Validation(format!("unknown model format {:?}", file.format)));
        }
        if file.version != MODEL_VERSION {
            return Err(CatnError::Validation(format!(
                "unsupported model version {}",
                file.version
            )));
        }
        file.params.validate()?;
        Ok(file.params)
    }
}

pub fn spatial_pe(h: usize, w: usize, d: usize) -> Result<SpatialPE> {
    if d == 0 || !d.is_multiple_of(4) {
        return Err(CatnError::Config(format!(
            "spatial encoding width {d} must be a positive multiple of 4"
        )));
    }
    let half = d / 2;
    let freq: Vec<f64> = (0..half)
        .map(|k| PE_TEMPERATURE.powf((2 * (k / 2)) as f64 / half as f64))
        .collect();
    let encode = |pos: f64, out: &mut [f64]| {
        for (k, o) in out.iter_mut().enumerate() {
            let a = pos / freq[k];
            *o = if k % 2 == 0 { a.sin() } else { a.cos() };
        }
    };
    let mut pe = Matrix::zeros(h * w, d);
    for i in 0..h {
        let y = (i + 1) as f64 / (h as f64 + 1e-6) * TAU;
        for j in 0..w {
            let x = (j + 1) as f64 / (w as f64 + 1e-6) * TAU;
            let row = pe.row_mut(i * w + j);
            let (ry, rx) = row.split_at_mut(half);
            encode(y, ry);
            encode(x, rx);
        }
    }
    Ok(SpatialPE { pe })
}

/// Scaled dot-product attention for one head block.
///
/// Softmax denominators use [`canonical_sum`]; the weighted value sum visits
/// keys sorted by `(weight, value row)` in total order. Both orders depend only
/// on the multiset of keys, so permuting keys leaves each output bit-identical.
fn attend(q: &Matrix, k: &Matrix, v: &Matrix, scale: f64) -> Matrix {
    let n_k = k.rows();
    let dv = v.cols();
    let mut out = Matrix::zeros(q.rows(), dv);
    let mut logits = vec![0.0; n_k];
    let mut weights = vec![0.0; n_k];
    let mut order: Vec<usize> = (0..n_k).collect();
    for i in 0..q.rows() {
        let qi = q.row(i);
        for (l, kj) in logits.iter_mut().zip(k.row_iter()) {
            *l = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
        }
        softmax_into(&logits, &mut weights);
        order.sort_unstable_by(|&a, &b| {
            weights[a].total_cmp(&weights[b]).then_with(|| {
                v.row(a)
                    .iter()
                    .zip(v.row(b))
                    .map(|(x, y)| x.total_cmp(y))
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
        });
        let orow = out.row_mut(i);
        for &j in &order {
            let wj = weights[j];
            for (o, &vv) in orow.iter_mut().zip(v.row(j)) {
                *o += wj * vv;
            }
        }
    }
    out
}

/// Multi-head attention. `query_in`/`key_in` already carry positional
/// encodings; `value_in` does not.
pub fn multi_head_attention(
    p: &AttentionParams,
    n_heads: usize,
    query_in: &Matrix,
    key_in: &Matrix,
    value_in: &Matrix,
) -> Result<Matrix> {
    if key_in.rows() != value_in.rows() {
        return Err(CatnError::Shape(format!(
            "{} keys but {} values",
            key_in.rows(),
            value_in.rows()
        )));
    }
    let q = p.q.forward(query_in)?;
    let k = p.k.forward(key_in)?;
    let v = p.v.forward(value_in)?;
    let d = q.cols();
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut concat = Matrix::zeros(q.rows(), d);
    for h in 0..n_heads {
        let start = h * dh;
        let head = attend(
            &q.col_block(start, dh),
            &k.col_block(start, dh),
            &v.col_block(start, dh),
            scale,
        );
        for r in 0..q.rows() {
            concat.row_mut(r)[start..start + dh].copy_from_slice(head.row(r));
        }
    }
    p.o.forward(&concat)
}

fn check_width(name: &str, m: &Matrix, rows: usize, cols: usize) -> Result<()> {
    if m.rows() != rows || m.cols() != cols {
        return Err(CatnError::Shape(format!(
            "{name} is {}x{}, expected {rows}x{cols}",
            m.rows(),
            m.cols()
        )));
    }
    Ok(())
}

pub fn encoder_forward(grid: &FeatureGrid, pe: &SpatialPE, layers: &[EncoderLayer], n_heads: usize) -> Result<Matrix> {
    let (n, d) = (grid.features.rows(), grid.dim());
    check_width("spatial encoding", &pe.pe, n, d)?;
    let mut x = grid.features.clone();
    for layer in layers {
        let qk = x.add(&pe.pe)?;
        let attn = multi_head_attention(&layer.self_attn, n_heads, &qk, &qk, &x)?;
        x = layer.norm1.forward(&x.add(&attn)?)?;
        let ff = layer.ffn.forward(&x)?;
        x = layer.norm2.forward(&x.add(&ff)?)?;
    }
    Ok(x)
}

pub fn decoder_forward(
    queries: &Matrix,
    q_pe: &QueryPE,
    i_enc: &Matrix,
    s_pe: &SpatialPE,
    layers: &[DecoderLayer],
    n_heads: usize,
) -> Result<Matrix> {
    check_width("query positional embedding", &q_pe.pe, queries.rows(), queries.cols())?;
    check_width("spatial encoding", &s_pe.pe, i_enc.rows(), queries.cols())?;
    let memory_k = i_enc.add(&s_pe.pe)?;
    let mut t = queries.clone();
    for layer in layers {
        let qk = t.add(&q_pe.pe)?;
        let sa = multi_head_attention(&layer.self_attn, n_heads, &qk, &qk, &t)?;
        t = layer.norm1.forward(&t.add(&sa)?)?;
        let cq = t.add(&q_pe.pe)?;
        let ca = multi_head_attention(&layer.cross_attn, n_heads, &cq, &memory_k, i_enc)?;
        t = layer.norm2.forward(&t.add(&ca)?)?;
        let ff = layer.ffn.forward(&t)?;
        t = layer.norm3.forward(&t.add(&ff)?)?;
    }
    Ok(t)
}

fn box_mlp(layers: &[LinearLayer], x: &Matrix) -> Result<Matrix> {
    let mut h = x.clone();
    for (i, l) in layers.iter().enumerate() {
        h = l.forward(&h)?;
        if i + 1 < layers.len() {
            h = relu(&h);
        }
    }
    Ok(sigmoid(&h))
}

pub fn predict_heads(q_out: &Matrix, heads: &HeadParams) -> Result<Vec<HoiPrediction>> {
    let b_h = box_mlp(&heads.human_box, q_out)?;
    let b_o = box_mlp(&heads.object_box, q_out)?;
    let logits = heads.object_class.forward(q_out)?;
    let c_v = sigmoid(&heads.verb.forward(q_out)?);
    let as4 = |r: &[f64]| [r[0], r[1], r[2], r[3]];
    Ok((0..q_out.rows())
        .map(|i| {
            let mut c_o = vec![0.0; logits.cols()];
            softmax_into(logits.row(i), &mut c_o);
            HoiPrediction {
                b_h: as4(b_h.row(i)),
                b_o: as4(b_o.row(i)),
                c_o,
                c_v: c_v.row(i).to_vec(),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig {
            d_model: 8,
            n_heads: 2,
            n_enc: 2,
            n_dec: 2,
            n_q: 6,
            ffn_dim: 16,
            k_obj: 3,
            k_verb: 4,
            d_word: 5,
        }
    }

    fn random_grid(rng: &mut Rng, h: usize, w: usize, d: usize) -> FeatureGrid {
        let data = (0..h * w * d).map(|_| rng.uniform(-1.0, 1.0)).collect();
        FeatureGrid::new(h, w, Matrix::new(h * w, d, data).unwrap()).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::default().validate().is_ok());
        let mut c = small();
        c.n_heads = 3;
        assert!(c.validate().is_err());
        let mut c = small();
        c.n_q = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn spatial_pe_properties() {
        let a = spatial_pe(3, 4, 8).unwrap();
        assert_eq!(a, spatial_pe(3, 4, 8).unwrap());
        assert!(a.pe.data().iter().all(|v| v.abs() <= 1.0));
        assert_eq!(spatial_pe(1, 1, 8).unwrap().pe.rows(), 1);
        for i in 0..12 {
            for j in i + 1..12 {
                assert_ne!(a.pe.row(i), a.pe.row(j), "rows {i} and {j}");
            }
        }
        let diff: f64 = a.pe.row(0).iter().zip(a.pe.row(11)).map(|(x, y)| (x - y).powi(2)).sum();
        assert!(diff > 0.0);
        assert!(matches!(spatial_pe(2, 2, 6), Err(CatnError::Config(_))));
    }

    #[test]
    fn encoder_shape_and_zero_layers() {
        let cfg = small();
        let params = ModelParams::init(&cfg, 1).unwrap();
        let mut rng = Rng::new(5);
        let grid = random_grid(&mut rng, 2, 3, cfg.d_model);
        let pe = spatial_pe(2, 3, cfg.d_model).unwrap();
        let out = encoder_forward(&grid, &pe, &params.encoder, cfg.n_heads).unwrap();
        assert_eq!((out.rows(), out.cols()), (6, 8));
        let same = encoder_forward(&grid, &pe, &[], cfg.n_heads).unwrap();
        assert_eq!(same, grid.features);
    }

    #[test]
    fn decoder_zero_queries_differ_from_filled() {
        let cfg = small();
        let params = ModelParams::init(&cfg, 2).unwrap();
        let mut rng = Rng::new(9);
        let grid = random_grid(&mut rng, 2, 2, cfg.d_model);
        let pe = spatial_pe(2, 2, cfg.d_model).unwrap();
        let enc = encoder_forward(&grid, &pe, &params.encoder, cfg.n_heads).unwrap();
        let zeros = Matrix::zeros(cfg.n_q, cfg.d_model);
        let filled = Matrix::new(
            cfg.n_q,
            cfg.d_model,
            (0..cfg.n_q * cfg.d_model).map(|_| rng.uniform(-1.0, 1.0)).collect(),
        )
        .unwrap();
        let a = decoder_forward(&zeros, &params.query_pe, &enc, &pe, &params.decoder, 2).unwrap();
        let b = decoder_forward(&filled, &params.query_pe, &enc, &pe, &params.decoder, 2).unwrap();
        assert_eq!((a.rows(), a.cols()), (cfg.n_q, cfg.d_model));
        assert!(a.max_abs_diff(&b) > 1e-6);
    }

    #[test]
    fn heads_ranges() {
        let cfg = small();
        let params = ModelParams::init(&cfg, 3).unwrap();
        let mut rng = Rng::new(4);
        let mut q = Matrix::zeros(cfg.n_q, cfg.d_model);
        for r in 0..cfg.n_q - 1 {
            for c in 0..cfg.d_model {
                q.set(r, c, rng.uniform(-2.0, 2.0));
            }
        }
        let last = q.row(0).to_vec();
        q.row_mut(cfg.n_q - 1).copy_from_slice(&last);
        let preds = predict_heads(&q, &params.heads).unwrap();
        assert_eq!(preds.len(), cfg.n_q);
        for p in &preds {
            p.validate().unwrap();
            assert_eq!(p.c_o.len(), cfg.k_obj + 1);
            assert!(p.b_h.iter().chain(&p.b_o).all(|&v| v > 0.0 && v < 1.0));
        }
        assert_eq!(preds[0], preds[cfg.n_q - 1]);
    }

    #[test]
    fn model_file_round_trip_and_header_checks() {
        let params = ModelParams::init(&small(), 11).unwrap();
        let json = serde_json::to_string(&params.to_file()).unwrap();
        let back: ModelFile = serde_json::from_str(&json).unwrap();
        assert_eq!(ModelParams::from_file(back.clone()).unwrap(), params);

        let mut bad = back.clone();
        bad.version = 99;
        assert!(ModelParams::from_file(bad).is_err());
        let mut bad = back;
        bad.params.heads.verb.bias.pop();
        assert!(ModelParams::from_file(bad).is_err());
    }
}
