//! Two-branch auto-encoder: independent query and reference encoders/decoders built from
//! concept-wise temporal convolutions.
//!
//! Encoder: three CTC layers (filters 1 → 1 → 32 → 1, ReLU), a pointwise `C_o → d_e` projection
//! and temporal average pooling (to length 1 for queries, `T_emb` for references).
//! Decoder: linear upsampling back to the input length, a pointwise `d_e → C_o` projection (ReLU)
//! and three CTC layers (1 → 32 → 1 → 1, the last one linear).

use rand_chacha::ChaCha8Rng;

use crate::config::KvConfig;
use crate::data::FeatureSequence;
use crate::error::{Error, Result};
use crate::nn::layers::{Conv1dCache, CtcCache};
use crate::nn::{
    avg_pool_temporal, avg_pool_temporal_backward, seeded_rng, Conv1d, CtcLayer, HasParams,
    LayerGrad, Mat, Param, ResizePlan, Tensor3,
};

#[derive(Debug, Clone, PartialEq)]
pub struct Stage1Config {
    /// Input feature channels `C_o`.
    pub channels: usize,
    pub query_len: usize,
    pub ref_len: usize,
    pub embed_dim: usize,
    pub t_emb: usize,
    /// Filters produced by the three encoder CTC layers.
    pub ctc_filters: [usize; 3],
    /// Weight of the similarity term in the total loss.
    pub lambda: f64,
    /// Minimum fraction of a window covered by the query class for a positive label.
    pub rho: f64,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Self {
            channels: 64,
            query_len: 4,
            ref_len: 100,
            embed_dim: 512,
            t_emb: 4,
            ctc_filters: [1, 32, 1],
            lambda: 2.0,
            rho: 0.5,
        }
    }
}

impl Stage1Config {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("stage1: {m}")));
        if self.channels == 0 || self.embed_dim == 0 {
            return bad("channels and embed_dim must be >= 1".into());
        }
        if self.query_len == 0 || self.t_emb == 0 || self.t_emb > self.ref_len {
            return bad(format!(
                "need query_len >= 1 and 1 <= t_emb ({}) <= ref_len ({})",
                self.t_emb, self.ref_len
            ));
        }
        if self.ctc_filters.iter().any(|&f| f == 0) || self.ctc_filters[2] != 1 {
            return bad("ctc filters must be >= 1 and end with a single filter".into());
        }
        if !(self.lambda >= 0.0) || !(0.0..=1.0).contains(&self.rho) {
            return bad("lambda must be >= 0 and rho in [0, 1]".into());
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::new();
        kv.set("stage1.channels", self.channels);
        kv.set("stage1.query_len", self.query_len);
        kv.set("stage1.ref_len", self.ref_len);
        kv.set("stage1.embed_dim", self.embed_dim);
        kv.set("stage1.t_emb", self.t_emb);
        kv.set(
            "stage1.ctc_filters",
            format!(
                "{},{},{}",
                self.ctc_filters[0], self.ctc_filters[1], self.ctc_filters[2]
            ),
        );
        kv.set("stage1.lambda", self.lambda);
        kv.set("stage1.rho", self.rho);
        kv
    }

    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let d = Self::default();
        let filters = match kv.raw("stage1.ctc_filters") {
            None => d.ctc_filters,
            Some(s) => {
                let parts: Vec<usize> = s
                    .split(',')
                    .map(|p| p.trim().parse())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::Config(format!("stage1.ctc_filters: {e}")))?;
                parts.try_into().map_err(|_| {
                    Error::Config("stage1.ctc_filters needs three comma-separated values".into())
                })?
            }
        };
        let cfg = Self {
            channels: kv.get_or("stage1.channels", d.channels)?,
            query_len: kv.get_or("stage1.query_len", d.query_len)?,
            ref_len: kv.get_or("stage1.ref_len", d.ref_len)?,
            embed_dim: kv.get_or("stage1.embed_dim", d.embed_dim)?,
            t_emb: kv.get_or("stage1.t_emb", d.t_emb)?,
            ctc_filters: filters,
            lambda: kv.get_or("stage1.lambda", d.lambda)?,
            rho: kv.get_or("stage1.rho", d.rho)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One encoder/decoder branch.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub input_len: usize,
    pub pooled_len: usize,
    pub enc_ctc: [CtcLayer; 3],
    pub enc_proj: Conv1d,
    pub dec_proj: Conv1d,
    pub dec_ctc: [CtcLayer; 3],
}

#[derive(Debug, Clone)]
pub struct EncodeCache {
    ctc: Vec<CtcCache>,
    proj: Conv1dCache,
}

#[derive(Debug, Clone)]
pub struct DecodeCache {
    plan: ResizePlan,
    proj: Conv1dCache,
    ctc: Vec<CtcCache>,
}

/// Gradients of a [`Branch`], one [`LayerGrad`] per layer in parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchGrad {
    pub layers: Vec<LayerGrad>,
}

impl BranchGrad {
    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend_from_slice(&l.weight);
            out.extend_from_slice(&l.bias);
        }
    }

    pub fn add_assign(&mut self, other: &BranchGrad) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.add_assign(b);
        }
    }
}

impl Branch {
    pub fn new(
        name: &str,
        cfg: &Stage1Config,
        input_len: usize,
        pooled_len: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let [f1, f2, f3] = cfg.ctc_filters;
        Self {
            input_len,
            pooled_len,
            enc_ctc: [
                CtcLayer::new(&format!("{name}.enc.ctc1"), 1, f1, true, rng),
                CtcLayer::new(&format!("{name}.enc.ctc2"), f1, f2, true, rng),
                // linear: feeds the embedding projection
                CtcLayer::new(&format!("{name}.enc.ctc3"), f2, f3, false, rng),
            ],
            enc_proj: Conv1d::new(
                &format!("{name}.enc.proj"),
                cfg.channels,
                cfg.embed_dim,
                1,
                false,
                rng,
            ),
            dec_proj: Conv1d::new(
                &format!("{name}.dec.proj"),
                cfg.embed_dim,
                cfg.channels,
                1,
                true,
                rng,
            ),
            dec_ctc: [
                CtcLayer::new(&format!("{name}.dec.ctc1"), 1, f2, true, rng),
                CtcLayer::new(&format!("{name}.dec.ctc2"), f2, f1, true, rng),
                CtcLayer::new(&format!("{name}.dec.ctc3"), f1, 1, false, rng),
            ],
        }
    }

    pub fn channels(&self) -> usize {
        self.enc_proj.c_in
    }

    pub fn embed_dim(&self) -> usize {
        self.enc_proj.c_out
    }

    fn check_input(&self, x: &Mat) -> Result<()> {
        if x.rows() != self.channels() {
            return Err(Error::shape(format!(
                "expected {} input channels, got {}",
                self.channels(),
                x.rows()
            )));
        }
        if x.cols() != self.input_len {
            return Err(Error::shape(format!(
                "expected input length {} (resize first), got {}",
                self.input_len,
                x.cols()
            )));
        }
        Ok(())
    }

    /// `C_o × input_len` features to a `d_e × pooled_len` embedding.
    pub fn encode(&self, x: &Mat) -> Result<(Mat, EncodeCache)> {
        self.check_input(x)?;
        let mut t = Tensor3::from_mat(x);
        let mut ctc = Vec::with_capacity(3);
        for layer in &self.enc_ctc {
            let (y, c) = layer.forward(&t)?;
            ctc.push(c);
            t = y;
        }
        let (h, proj) = self.enc_proj.forward(&t.to_mat()?)?;
        let e = avg_pool_temporal(&h, self.pooled_len)?;
        Ok((e, EncodeCache { ctc, proj }))
    }

    /// `d_e × pooled_len` embedding back to `C_o × input_len` features.
    pub fn decode(&self, e: &Mat) -> Result<(Mat, DecodeCache)> {
        if e.rows() != self.embed_dim() || e.cols() != self.pooled_len {
            return Err(Error::shape(format!(
                "expected a {}x{} embedding, got {}x{}",
                self.embed_dim(),
                self.pooled_len,
                e.rows(),
                e.cols()
            )));
        }
        let plan = ResizePlan::new(self.pooled_len, self.input_len)?;
        let up = plan.apply(e);
        let (h, proj) = self.dec_proj.forward(&up)?;
        let mut t = Tensor3::from_mat(&h);
        let mut ctc = Vec::with_capacity(3);
        for layer in &self.dec_ctc {
            let (y, c) = layer.forward(&t)?;
            ctc.push(c);
            t = y;
        }
        Ok((t.to_mat()?, DecodeCache { plan, proj, ctc }))
    }

    pub fn zero_grad(&self) -> BranchGrad {
        let mut layers = Vec::with_capacity(8);
        layers.extend(self.enc_ctc.iter().map(CtcLayer::zero_grad));
        layers.push(self.enc_proj.zero_grad());
        layers.push(self.dec_proj.zero_grad());
        layers.extend(self.dec_ctc.iter().map(CtcLayer::zero_grad));
        BranchGrad { layers }
    }

    /// Backpropagates through the decoder; returns the gradient w.r.t. the embedding.
    pub fn decode_backward(&self, cache: &DecodeCache, d_out: &Mat, grad: &mut BranchGrad) -> Mat {
        let mut dt = Tensor3::from_mat(d_out);
        for (i, layer) in self.dec_ctc.iter().enumerate().rev() {
            dt = layer.backward(&cache.ctc[i], &dt, &mut grad.layers[5 + i]);
        }
        let dh = dt.to_mat().expect("single filter");
        let dup = self
            .dec_proj
            .backward(&cache.proj, &dh, &mut grad.layers[4]);
        cache.plan.backward(&dup)
    }

    /// Backpropagates through the encoder; returns the gradient w.r.t. the input features.
    pub fn encode_backward(&self, cache: &EncodeCache, d_emb: &Mat, grad: &mut BranchGrad) -> Mat {
        let dh = avg_pool_temporal_backward(d_emb, self.input_len);
        let dproj = self
            .enc_proj
            .backward(&cache.proj, &dh, &mut grad.layers[3]);
        let mut dt = Tensor3::from_mat(&dproj);
        for (i, layer) in self.enc_ctc.iter().enumerate().rev() {
            dt = layer.backward(&cache.ctc[i], &dt, &mut grad.layers[i]);
        }
        dt.to_mat().expect("single filter")
    }
}

impl HasParams for Branch {
    fn params(&self) -> Vec<&Param> {
        let mut v = Vec::with_capacity(16);
        for l in &self.enc_ctc {
            v.push(&l.weight);
            v.push(&l.bias);
        }
        v.push(&self.enc_proj.weight);
        v.push(&self.enc_proj.bias);
        v.push(&self.dec_proj.weight);
        v.push(&self.dec_proj.bias);
        for l in &self.dec_ctc {
            v.push(&l.weight);
            v.push(&l.bias);
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = Vec::with_capacity(16);
        for l in &mut self.enc_ctc {
            v.push(&mut l.weight);
            v.push(&mut l.bias);
        }
        v.push(&mut self.enc_proj.weight);
        v.push(&mut self.enc_proj.bias);
        v.push(&mut self.dec_proj.weight);
        v.push(&mut self.dec_proj.bias);
        for l in &mut self.dec_ctc {
            v.push(&mut l.weight);
            v.push(&mut l.bias);
        }
        v
    }
}

/// Query embedding `e_q` (length `d_e`) and reference embedding `e_r` (`d_e × T_emb`).
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingPair {
    pub query: Vec<f64>,
    pub reference: Mat,
}

/// The full stage-1 model. The two branches share no weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage1Model {
    pub config: Stage1Config,
    pub init_seed: u64,
    pub query: Branch,
    pub reference: Branch,
}

impl Stage1Model {
    pub fn new(config: Stage1Config, seed: u64) -> Result<Self> {
        config.validate()?;
        // both branches start from the same draws; training moves them apart
        let rng = seeded_rng(seed);
        let query = Branch::new("query", &config, config.query_len, 1, &mut rng.clone());
        let reference = Branch::new("reference", &config, config.ref_len, config.t_emb, &mut rng.clone());
        Ok(Self {
            config,
            init_seed: seed,
            query,
            reference,
        })
    }

    /// Resizes a query clip to `l_q` snippets.
    pub fn prepare_query(&self, seq: &FeatureSequence) -> Result<Mat> {
        crate::nn::linear_resize(&seq.to_mat(), self.config.query_len)
    }

    /// Resizes a reference video to `l_r` snippets.
    pub fn prepare_reference(&self, seq: &FeatureSequence) -> Result<Mat> {
        crate::nn::linear_resize(&seq.to_mat(), self.config.ref_len)
    }

    pub fn encode_query(&self, f_q: &Mat) -> Result<Vec<f64>> {
        Ok(self.query.encode(f_q)?.0.into_vec())
    }

    pub fn encode_reference(&self, f_r: &Mat) -> Result<Mat> {
        Ok(self.reference.encode(f_r)?.0)
    }

    pub fn decode_query(&self, e_q: &[f64]) -> Result<Mat> {
        let e = Mat::from_vec(e_q.len(), 1, e_q.to_vec())?;
        Ok(self.query.decode(&e)?.0)
    }

    pub fn decode_reference(&self, e_r: &Mat) -> Result<Mat> {
        Ok(self.reference.decode(e_r)?.0)
    }

    pub fn embed_query_clip(&self, seq: &FeatureSequence) -> Result<Vec<f64>> {
        self.encode_query(&self.prepare_query(seq)?)
    }

    pub fn embed_reference_video(&self, seq: &FeatureSequence) -> Result<Mat> {
        self.encode_reference(&self.prepare_reference(seq)?)
    }
}

impl HasParams for Stage1Model {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.query.params();
        v.extend(self.reference.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.query.params_mut();
        v.extend(self.reference.params_mut());
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn small() -> Stage1Config {
        Stage1Config {
            channels: 6,
            query_len: 4,
            ref_len: 12,
            embed_dim: 8,
            t_emb: 4,
            ctc_filters: [1, 5, 1],
            ..Stage1Config::default()
        }
    }

    fn random(rows: usize, cols: usize, seed: u64) -> Mat {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        Mat::from_vec(rows, cols, (0..rows * cols).map(|_| r.gen_range(-1.0..1.0)).collect())
            .unwrap()
    }

    #[test]
    fn default_shapes() {
        let model = Stage1Model::new(Stage1Config::default(), 0).unwrap();
        let e_q = model.encode_query(&random(64, 4, 1)).unwrap();
        let e_r = model.encode_reference(&random(64, 100, 2)).unwrap();
        assert_eq!(e_q.len(), 512);
        assert_eq!(e_r.shape(), (512, 4));
        assert_eq!(model.decode_query(&e_q).unwrap().shape(), (64, 4));
        assert_eq!(model.decode_reference(&e_r).unwrap().shape(), (64, 100));
    }

    #[test]
    fn zero_input_zero_bias_gives_zero_embedding() {
        let mut model = Stage1Model::new(small(), 3).unwrap();
        model.zero_biases();
        let e = model.encode_reference(&Mat::zeros(6, 12)).unwrap();
        assert!(e.as_slice().iter().all(|&v| v == 0.0));
        let r = model.decode_reference(&Mat::zeros(8, 4)).unwrap();
        assert!(r.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn deterministic_and_input_sensitive() {
        let model = Stage1Model::new(small(), 3).unwrap();
        let a = random(6, 12, 1);
        let b = random(6, 12, 2);
        assert_eq!(
            model.encode_reference(&a).unwrap(),
            model.encode_reference(&a).unwrap()
        );
        assert_ne!(
            model.encode_reference(&a).unwrap(),
            model.encode_reference(&b).unwrap()
        );
    }

    #[test]
    fn wrong_channel_count_rejected() {
        let model = Stage1Model::new(small(), 3).unwrap();
        assert!(model.encode_query(&random(5, 4, 1)).is_err());
        assert!(model.decode_reference(&Mat::zeros(8, 3)).is_err());
    }

    #[test]
    fn branches_are_independent() {
        let mut model = Stage1Model::new(small(), 3).unwrap();
        let x = random(6, 12, 1);
        let before = model.encode_reference(&x).unwrap();
        for p in model.query.params_mut() {
            p.value.iter_mut().for_each(|v| *v += 0.3);
        }
        assert_eq!(model.encode_reference(&x).unwrap(), before);
    }

    #[test]
    fn config_kv_round_trip() {
        let cfg = small();
        assert_eq!(Stage1Config::from_kv(&cfg.to_kv()).unwrap(), cfg);
    }
}
