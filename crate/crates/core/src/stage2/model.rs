//! Attention-based re-localization network: shared base module, boundary-matching sampling,
//! query-conditioned attention and the score-map head.

use rand_chacha::ChaCha8Rng;

use super::bm::{bm_sample, bm_sample_backward, BmFeatureMap, BmGrid};
use crate::config::KvConfig;
use crate::data::FeatureSequence;
use crate::error::{Error, Result};
use crate::nn::layers::{Conv1dCache, Conv2dCache};
use crate::nn::{relu, seeded_rng, sigmoid, Conv1d, Conv2d, HasParams, LayerGrad, Mat, Param};

#[derive(Debug, Clone, PartialEq)]
pub struct Stage2Config {
    /// Input feature channels `C_o`.
    pub channels: usize,
    pub query_len: usize,
    pub ref_len: usize,
    /// Width of the first base-module layer.
    pub hidden: usize,
    /// Base-module output channels `C`.
    pub feat: usize,
    /// Samples per candidate `N`.
    pub samples: usize,
    /// Channels of the score-map head.
    pub head: usize,
    /// When false, attention and Hadamard fusion are replaced by the identity.
    pub query_branch: bool,
    pub theta_pos: f64,
    pub theta_neg: f64,
    pub log_eps: f64,
    /// Weight of the regression term.
    pub lambda: f64,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Self {
            channels: 64,
            query_len: 4,
            ref_len: 100,
            hidden: 256,
            feat: 128,
            samples: 32,
            head: 128,
            query_branch: true,
            theta_pos: 0.6,
            theta_neg: 0.2,
            log_eps: 1e-6,
            lambda: 10.0,
        }
    }
}

impl Stage2Config {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("stage2: {m}")));
        if [self.channels, self.query_len, self.ref_len, self.hidden, self.feat, self.head]
            .contains(&0)
        {
            return bad("all sizes must be >= 1");
        }
        if self.samples < 2 {
            return bad("samples must be >= 2");
        }
        if !(0.0 <= self.theta_neg && self.theta_neg <= self.theta_pos && self.theta_pos <= 1.0) {
            return bad("need 0 <= theta_neg <= theta_pos <= 1");
        }
        if !(self.log_eps > 0.0 && self.log_eps < 0.5) || !(self.lambda >= 0.0) {
            return bad("log_eps must be in (0, 0.5) and lambda >= 0");
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::new();
        kv.set("stage2.channels", self.channels);
        kv.set("stage2.query_len", self.query_len);
        kv.set("stage2.ref_len", self.ref_len);
        kv.set("stage2.hidden", self.hidden);
        kv.set("stage2.feat", self.feat);
        kv.set("stage2.samples", self.samples);
        kv.set("stage2.head", self.head);
        kv.set("stage2.query_branch", self.query_branch);
        kv.set("stage2.theta_pos", self.theta_pos);
        kv.set("stage2.theta_neg", self.theta_neg);
        kv.set("stage2.log_eps", self.log_eps);
        kv.set("stage2.lambda", self.lambda);
        kv
    }

    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let d = Self::default();
        let cfg = Self {
            channels: kv.get_or("stage2.channels", d.channels)?,
            query_len: kv.get_or("stage2.query_len", d.query_len)?,
            ref_len: kv.get_or("stage2.ref_len", d.ref_len)?,
            hidden: kv.get_or("stage2.hidden", d.hidden)?,
            feat: kv.get_or("stage2.feat", d.feat)?,
            samples: kv.get_or("stage2.samples", d.samples)?,
            head: kv.get_or("stage2.head", d.head)?,
            query_branch: kv.get_or("stage2.query_branch", d.query_branch)?,
            theta_pos: kv.get_or("stage2.theta_pos", d.theta_pos)?,
            theta_neg: kv.get_or("stage2.theta_neg", d.theta_neg)?,
            log_eps: kv.get_or("stage2.log_eps", d.log_eps)?,
            lambda: kv.get_or("stage2.lambda", d.lambda)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// A per-cell linear map from a `c_in × n` cell feature to `c_out` values.
#[derive(Debug, Clone, PartialEq)]
pub struct CellLinear {
    pub c_in: usize,
    pub n: usize,
    pub c_out: usize,
    pub relu: bool,
    /// Shape `[c_out, c_in, n]`.
    pub weight: Param,
    pub bias: Param,
}

impl CellLinear {
    pub fn new(
        name: &str,
        c_in: usize,
        n: usize,
        c_out: usize,
        relu: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self {
            c_in,
            n,
            c_out,
            relu,
            weight: Param::kaiming_uniform(format!("{name}.weight"), &[c_out, c_in, n], c_in * n, rng),
            bias: Param::zeros(format!("{name}.bias"), &[c_out]),
        }
    }

    /// Copies each output's weights across the input channels, so that on the fused query
    /// features the layer starts as a function of per-sample query/candidate inner products.
    pub fn tie_channels(mut self) -> Self {
        let (c_in, n) = (self.c_in, self.n);
        for o in 0..self.c_out {
            let row = &mut self.weight.value[o * c_in * n..(o + 1) * c_in * n];
            let first = row[..n].to_vec();
            for chunk in row.chunks_mut(n) {
                chunk.copy_from_slice(&first);
            }
        }
        self
    }

    /// `x` holds `cells` rows of length `c_in·n`; returns `(output, pre-activation)`.
    pub fn forward(&self, x: &[f64], cells: usize) -> (Vec<f64>, Vec<f64>) {
        let m = self.c_in * self.n;
        let mut pre = vec![0.0; cells * self.c_out];
        for k in 0..cells {
            let xk = &x[k * m..(k + 1) * m];
            for o in 0..self.c_out {
                let w = &self.weight.value[o * m..(o + 1) * m];
                pre[k * self.c_out + o] =
                    self.bias.value[o] + w.iter().zip(xk).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        let y = if self.relu {
            pre.iter().map(|&v| relu(v)).collect()
        } else {
            pre.clone()
        };
        (y, pre)
    }

    pub fn backward(&self, x: &[f64], pre: &[f64], dy: &[f64], grad: &mut LayerGrad) -> Vec<f64> {
        let m = self.c_in * self.n;
        let cells = pre.len() / self.c_out;
        let mut dx = vec![0.0; cells * m];
        for k in 0..cells {
            let xk = &x[k * m..(k + 1) * m];
            for o in 0..self.c_out {
                let idx = k * self.c_out + o;
                let g = if self.relu && pre[idx] <= 0.0 { 0.0 } else { dy[idx] };
                if g == 0.0 {
                    continue;
                }
                grad.bias[o] += g;
                let w = &self.weight.value[o * m..(o + 1) * m];
                let gw = &mut grad.weight[o * m..(o + 1) * m];
                let dxk = &mut dx[k * m..(k + 1) * m];
                for i in 0..m {
                    gw[i] += g * xk[i];
                    dxk[i] += g * w[i];
                }
            }
        }
        dx
    }

    pub fn zero_grad(&self) -> LayerGrad {
        LayerGrad::zeros(self.weight.len(), self.bias.len())
    }
}

/// Classification and regression score maps, dense `l_r × l_r`, zero at invalid cells.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMaps {
    pub len: usize,
    pub m_c: Vec<f64>,
    pub m_r: Vec<f64>,
}

impl ScoreMaps {
    pub fn get(&self, s: usize, d: usize) -> (f64, f64) {
        (self.m_c[s * self.len + d], self.m_r[s * self.len + d])
    }
}

/// Intermediate tensors kept for inspection and backpropagation.
#[derive(Debug, Clone)]
pub struct Stage2Cache {
    q_base: [Conv1dCache; 2],
    r_base: [Conv1dCache; 2],
    /// Query feature `f_c` (length `C`).
    pub f_c: Vec<f64>,
    /// Reference feature `f_r` (`C × l_r`).
    pub f_r: Mat,
    pub bm: BmFeatureMap,
    attn_out: Vec<f64>,
    attn_pre: Vec<f64>,
    /// Attention per valid cell (empty when the query branch is disabled).
    pub attention: Vec<f64>,
    /// Fused features per valid cell, `[cell][C][N]`.
    pub fused: Vec<f64>,
    reduce_pre: Vec<f64>,
    conv: Conv2dCache,
    out: Conv2dCache,
}

impl Stage2Cache {
    /// Dense `C × N × l_r × l_r` fused map with invalid cells zero.
    pub fn fused_dense(&self) -> Vec<f64> {
        BmFeatureMap {
            data: self.fused.clone(),
            ..self.bm.clone()
        }
        .to_dense()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage2Grad {
    pub layers: Vec<LayerGrad>,
}

impl Stage2Grad {
    pub fn add_assign(&mut self, other: &Stage2Grad) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.add_assign(b);
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(&l.weight);
            out.extend_from_slice(&l.bias);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage2Model {
    pub config: Stage2Config,
    pub grid: BmGrid,
    pub base1: Conv1d,
    pub base2: Conv1d,
    pub attn: CellLinear,
    pub reduce: CellLinear,
    pub conv: Conv2d,
    pub out: Conv2d,
}

impl Stage2Model {
    pub fn new(config: Stage2Config, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded_rng(seed);
        let c = &config;
        Ok(Self {
            grid: BmGrid::new(c.ref_len),
            base1: Conv1d::new("base.conv1", c.channels, c.hidden, 3, true, &mut rng),
            base2: Conv1d::new("base.conv2", c.hidden, c.feat, 3, true, &mut rng),
            attn: CellLinear::new("attn.down", c.feat, c.samples, c.feat, false, &mut rng),
            reduce: CellLinear::new("head.reduce", c.feat, c.samples, c.head, true, &mut rng)
                .tie_channels(),
            conv: Conv2d::new("head.conv", c.head, c.head, 3, true, &mut rng),
            out: Conv2d::new("head.out", c.head, 2, 1, false, &mut rng),
            config,
        })
    }

    pub fn prepare_query(&self, seq: &FeatureSequence) -> Result<Mat> {
        crate::nn::linear_resize(&seq.to_mat(), self.config.query_len)
    }

    pub fn prepare_reference(&self, seq: &FeatureSequence) -> Result<Mat> {
        crate::nn::linear_resize(&seq.to_mat(), self.config.ref_len)
    }

    fn check(&self, x: &Mat, len: usize, what: &str) -> Result<()> {
        if x.shape() != (self.config.channels, len) {
            return Err(Error::shape(format!(
                "{what} must be {}x{len}, got {:?}",
                self.config.channels,
                x.shape()
            )));
        }
        Ok(())
    }

    /// Shared base module: `(f_c: C, f_r: C × l_r)`.
    pub fn base_module(&self, f_q: &Mat, f_r: &Mat) -> Result<(Vec<f64>, Mat)> {
        self.check(f_q, self.config.query_len, "query")?;
        self.check(f_r, self.config.ref_len, "reference")?;
        let (hq, _) = self.base2.forward(&self.base1.forward(f_q)?.0)?;
        let (hr, _) = self.base2.forward(&self.base1.forward(f_r)?.0)?;
        Ok((temporal_mean(&hq), hr))
    }

    pub fn forward(&self, f_q: &Mat, f_r: &Mat) -> Result<(ScoreMaps, Stage2Cache)> {
        self.check(f_q, self.config.query_len, "query")?;
        self.check(f_r, self.config.ref_len, "reference")?;
        let (h1q, q1) = self.base1.forward(f_q)?;
        let (hq, q2) = self.base2.forward(&h1q)?;
        let (h1r, r1) = self.base1.forward(f_r)?;
        let (hr, r2) = self.base2.forward(&h1r)?;
        let f_c = temporal_mean(&hq);
        let bm = bm_sample(&hr, self.config.samples)?;
        let cells = self.grid.num_cells();
        let (c_n, n) = (self.config.feat, self.config.samples);

        let (attn_out, attn_pre, attention, fused) = if self.config.query_branch {
            let (down, pre) = self.attn.forward(&bm.data, cells);
            let attention: Vec<f64> = (0..cells)
                .map(|k| {
                    let row = &down[k * c_n..(k + 1) * c_n];
                    sigmoid(row.iter().zip(&f_c).map(|(a, b)| a * b).sum())
                })
                .collect();
            let mut fused = bm.data.clone();
            for k in 0..cells {
                for c in 0..c_n {
                    let scale = attention[k] * f_c[c];
                    for v in &mut fused[(k * c_n + c) * n..(k * c_n + c + 1) * n] {
                        *v *= scale;
                    }
                }
            }
            (down, pre, attention, fused)
        } else {
            (Vec::new(), Vec::new(), Vec::new(), bm.data.clone())
        };

        let (h, reduce_pre) = self.reduce.forward(&fused, cells);
        let l = self.config.ref_len;
        let ch = self.config.head;
        let mut dense = vec![0.0; ch * l * l];
        for (k, &(s, d)) in self.grid.cells().iter().enumerate() {
            for o in 0..ch {
                dense[o * l * l + s * l + d] = h[k * ch + o];
            }
        }
        let mask = self.grid.mask();
        let (h2, conv) = self.conv.forward(&dense, l, l, mask)?;
        let (o, out) = self.out.forward(&h2, l, l, mask)?;
        let ll = l * l;
        let act = |off: usize| -> Vec<f64> {
            (0..ll)
                .map(|p| if mask[p] { sigmoid(o[off + p]) } else { 0.0 })
                .collect()
        };
        let maps = ScoreMaps {
            len: l,
            m_c: act(0),
            m_r: act(ll),
        };
        Ok((
            maps,
            Stage2Cache {
                q_base: [q1, q2],
                r_base: [r1, r2],
                f_c,
                f_r: hr,
                bm,
                attn_out,
                attn_pre,
                attention,
                fused,
                reduce_pre,
                conv,
                out,
            },
        ))
    }

    pub fn predict(&self, f_q: &Mat, f_r: &Mat) -> Result<ScoreMaps> {
        Ok(self.forward(f_q, f_r)?.0)
    }

    pub fn zero_grad(&self) -> Stage2Grad {
        Stage2Grad {
            layers: vec![
                self.base1.zero_grad(),
                self.base2.zero_grad(),
                self.attn.zero_grad(),
                self.reduce.zero_grad(),
                self.conv.zero_grad(),
                self.out.zero_grad(),
            ],
        }
    }

    /// Accumulates parameter gradients given `∂L/∂M_C` and `∂L/∂M_R` (dense maps).
    pub fn backward(
        &self,
        maps: &ScoreMaps,
        cache: &Stage2Cache,
        d_mc: &[f64],
        d_mr: &[f64],
        grad: &mut Stage2Grad,
    ) {
        let l = self.config.ref_len;
        let ll = l * l;
        let mask = self.grid.mask();
        let mut d_o = vec![0.0; 2 * ll];
        for p in 0..ll {
            if mask[p] {
                let (c, r) = (maps.m_c[p], maps.m_r[p]);
                d_o[p] = d_mc[p] * c * (1.0 - c);
                d_o[ll + p] = d_mr[p] * r * (1.0 - r);
            }
        }
        let d_h2 = self
            .out
            .backward(&cache.out, &d_o, l, l, mask, &mut grad.layers[5]);
        let d_dense = self
            .conv
            .backward(&cache.conv, &d_h2, l, l, mask, &mut grad.layers[4]);
        let ch = self.config.head;
        let cells = self.grid.num_cells();
        let mut d_h = vec![0.0; cells * ch];
        for (k, &(s, d)) in self.grid.cells().iter().enumerate() {
            for o in 0..ch {
                d_h[k * ch + o] = d_dense[o * ll + s * l + d];
            }
        }
        let d_fused = self.reduce.backward(
            &cache.fused,
            &cache.reduce_pre,
            &d_h,
            &mut grad.layers[3],
        );

        let (c_n, n) = (self.config.feat, self.config.samples);
        let mut d_fc = vec![0.0; c_n];
        let d_bm = if self.config.query_branch {
            let f = &cache.bm.data;
            let mut d_f = vec![0.0; f.len()];
            let mut d_down = vec![0.0; cells * c_n];
            for k in 0..cells {
                let a = cache.attention[k];
                let mut d_att = 0.0;
                for c in 0..c_n {
                    let base = (k * c_n + c) * n;
                    let mut s_gf = 0.0;
                    for j in 0..n {
                        let g = d_fused[base + j];
                        s_gf += g * f[base + j];
                        d_f[base + j] = g * a * cache.f_c[c];
                    }
                    d_att += s_gf * cache.f_c[c];
                    d_fc[c] += s_gf * a;
                }
                let d_logit = d_att * a * (1.0 - a);
                for c in 0..c_n {
                    d_down[k * c_n + c] = d_logit * cache.f_c[c];
                    d_fc[c] += d_logit * cache.attn_out[k * c_n + c];
                }
            }
            let d_from_attn =
                self.attn
                    .backward(f, &cache.attn_pre, &d_down, &mut grad.layers[2]);
            for (a, b) in d_f.iter_mut().zip(d_from_attn) {
                *a += b;
            }
            d_f
        } else {
            d_fused
        };

        let d_fr = bm_sample_backward(&cache.bm, &d_bm);
        let d_h1r = self
            .base2
            .backward(&cache.r_base[1], &d_fr, &mut grad.layers[1]);
        self.base1
            .backward(&cache.r_base[0], &d_h1r, &mut grad.layers[0]);

        let lq = self.config.query_len;
        let mut d_hq = Mat::zeros(c_n, lq);
        for c in 0..c_n {
            for t in 0..lq {
                d_hq.set(c, t, d_fc[c] / lq as f64);
            }
        }
        let d_h1q = self
            .base2
            .backward(&cache.q_base[1], &d_hq, &mut grad.layers[1]);
        self.base1
            .backward(&cache.q_base[0], &d_h1q, &mut grad.layers[0]);
    }
}

fn temporal_mean(x: &Mat) -> Vec<f64> {
    (0..x.rows())
        .map(|r| x.row(r).iter().sum::<f64>() / x.cols() as f64)
        .collect()
}

impl HasParams for Stage2Model {
    fn params(&self) -> Vec<&Param> {
        vec![
            &self.base1.weight,
            &self.base1.bias,
            &self.base2.weight,
            &self.base2.bias,
            &self.attn.weight,
            &self.attn.bias,
            &self.reduce.weight,
            &self.reduce.bias,
            &self.conv.weight,
            &self.conv.bias,
            &self.out.weight,
            &self.out.bias,
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![
            &mut self.base1.weight,
            &mut self.base1.bias,
            &mut self.base2.weight,
            &mut self.base2.bias,
            &mut self.attn.weight,
            &mut self.attn.bias,
            &mut self.reduce.weight,
            &mut self.reduce.bias,
            &mut self.conv.weight,
            &mut self.conv.bias,
            &mut self.out.weight,
            &mut self.out.bias,
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::projection_weights;

    pub(crate) fn small(query_branch: bool) -> Stage2Config {
        Stage2Config {
            channels: 3,
            query_len: 4,
            ref_len: 6,
            hidden: 5,
            feat: 4,
            samples: 4,
            head: 4,
            query_branch,
            ..Stage2Config::default()
        }
    }

    fn inputs(seed: u64) -> (Mat, Mat) {
        (
            Mat::from_vec(3, 4, projection_weights(12, seed)).unwrap(),
            Mat::from_vec(3, 6, projection_weights(18, seed + 100)).unwrap(),
        )
    }

    #[test]
    fn default_shapes() {
        let cfg = Stage2Config {
            ref_len: 20,
            samples: 4,
            hidden: 16,
            feat: 8,
            head: 8,
            ..Stage2Config::default()
        };
        let m = Stage2Model::new(cfg, 0).unwrap();
        let f_q = Mat::filled(64, 4, 0.1);
        let f_r = Mat::filled(64, 20, 0.2);
        let (f_c, f_r2) = m.base_module(&f_q, &f_r).unwrap();
        assert_eq!(f_c.len(), 8);
        assert_eq!(f_r2.shape(), (8, 20));
        let maps = m.predict(&f_q, &f_r).unwrap();
        assert_eq!(maps.m_c.len(), 400);
    }

    #[test]
    fn zero_inputs_zero_biases_give_zero_base_outputs() {
        let m = Stage2Model::new(small(true), 1).unwrap();
        let (f_c, f_r) = m.base_module(&Mat::zeros(3, 4), &Mat::zeros(3, 6)).unwrap();
        assert!(f_c.iter().all(|&v| v == 0.0));
        assert!(f_r.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_query_feature_gives_half_attention_and_zero_fusion() {
        let m = Stage2Model::new(small(true), 1).unwrap();
        let (_, f_r) = inputs(2);
        let (_, cache) = m.forward(&Mat::zeros(3, 4), &f_r).unwrap();
        assert!(cache.attention.iter().all(|&a| a == 0.5));
        assert!(cache.fused.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_weights_give_half_on_valid_cells() {
        let mut m = Stage2Model::new(small(true), 1).unwrap();
        for p in m.params_mut() {
            p.fill(0.0);
        }
        let (f_q, f_r) = inputs(3);
        let maps = m.predict(&f_q, &f_r).unwrap();
        for s in 0..6 {
            for d in 0..6 {
                let want = if s + d < 6 { 0.5 } else { 0.0 };
                assert_eq!(maps.get(s, d), (want, want));
            }
        }
    }

    #[test]
    fn hand_computed_attention() {
        // C = 2, N = 2 (minimum), l_r = 2 with an identity base module
        let cfg = Stage2Config {
            channels: 2,
            query_len: 1,
            ref_len: 2,
            hidden: 2,
            feat: 2,
            samples: 2,
            head: 1,
            ..Stage2Config::default()
        };
        let mut m = Stage2Model::new(cfg, 0).unwrap();
        m.base1.set_identity();
        m.base2.set_identity();
        m.attn.weight.value = vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.5, 0.5];
        m.attn.bias.value = vec![0.0, 0.1];
        let f_q = Mat::from_rows(&[vec![1.0], vec![2.0]]);
        let f_r = Mat::from_rows(&[vec![1.0, 3.0], vec![2.0, 0.0]]);
        let (_, cache) = m.forward(&f_q, &f_r).unwrap();
        // cells (0,0)=[0,1), (0,1)=[0,2), (1,0)=[1,2)
        let cells = [
            ([1.0, 1.0], [2.0, 2.0]),
            ([1.0, 3.0], [2.0, 0.0]),
            ([3.0, 3.0], [0.0, 0.0]),
        ];
        for (k, (c0, c1)) in cells.iter().enumerate() {
            let d0 = c0[0];
            let d1 = 0.5 * (c1[0] + c1[1]) + 0.1;
            let att = 1.0 / (1.0 + (-(d0 * 1.0 + d1 * 2.0) as f64).exp());
            assert!((cache.attention[k] - att).abs() < 1e-12);
            let want = [att * c0[0], att * c0[1], 2.0 * att * c1[0], 2.0 * att * c1[1]];
            for (i, w) in want.iter().enumerate() {
                assert!((cache.fused[k * 4 + i] - w).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn control_skips_attention() {
        let m = Stage2Model::new(small(false), 1).unwrap();
        let (f_q, f_r) = inputs(4);
        let (_, cache) = m.forward(&f_q, &f_r).unwrap();
        assert!(cache.attention.is_empty());
        assert_eq!(cache.fused, cache.bm.data);
    }
}
