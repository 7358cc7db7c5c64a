//! Finite-difference checks over every trainable operator and both training losses.
//!
//! Each tensor-valued operator is reduced to a scalar by a fixed random projection of its
//! output; the variables are its weights, biases and input, concatenated.

use crate::error::Result;
use crate::nn::gradcheck::{grad_check, projection_weights};
use crate::nn::{
    avg_pool_temporal, avg_pool_temporal_backward, seeded_rng, Conv1d, Conv2d, CtcLayer,
    HasParams, LayerGrad, Mat, Param, ResizePlan, Tensor3,
};
use crate::stage1::loss::cosine_grad;
use crate::stage1::{cosine, stage1_loss_and_grad, Stage1Config, Stage1Grad, Stage1Model};
use crate::stage2::bm::bm_sample_backward;
use crate::stage2::model::CellLinear;
use crate::stage2::{
    bm_sample, gt_label_map, rlm_loss, stage2_loss_and_grad, BmGrid, ScoreMaps, Stage2Config,
    Stage2Model,
};

/// Tolerance for single linear operators.
pub const LINEAR_TOL: f64 = 1e-4;
/// Tolerance for nonlinear operators and full losses.
pub const LOSS_TOL: f64 = 1e-3;
pub const DEFAULT_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub name: &'static str,
    pub seed: u64,
    pub rel_err: f64,
    pub tol: f64,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.rel_err <= self.tol
    }
}

/// Runs every check once per seed.
pub fn run_suite(seeds: &[u64]) -> Result<Vec<GradCheck>> {
    type Check = (&'static str, f64, fn(u64) -> Result<f64>);
    let checks: [Check; 16] = [
        ("conv1d", LINEAR_TOL, |s| conv1d(s, false)),
        ("conv1d_relu", LOSS_TOL, |s| conv1d(s, true)),
        ("ctc", LINEAR_TOL, |s| ctc(s, false)),
        ("ctc_relu", LOSS_TOL, |s| ctc(s, true)),
        ("conv2d", LINEAR_TOL, |s| conv2d(s, false)),
        ("conv2d_relu", LOSS_TOL, |s| conv2d(s, true)),
        ("cell_linear", LINEAR_TOL, |s| cell_linear(s, false)),
        ("cell_linear_relu", LOSS_TOL, |s| cell_linear(s, true)),
        ("avg_pool", LINEAR_TOL, avg_pool),
        ("linear_resize", LINEAR_TOL, resize),
        ("bm_sample", LINEAR_TOL, bm),
        ("cosine", LOSS_TOL, cos),
        ("stage1_loss", LOSS_TOL, stage1),
        ("rlm_loss", LOSS_TOL, rlm),
        ("stage2_loss", LOSS_TOL, |s| stage2(s, true)),
        ("stage2_loss_control", LOSS_TOL, |s| stage2(s, false)),
    ];
    let mut out = Vec::with_capacity(checks.len() * seeds.len());
    for &seed in seeds {
        for (name, tol, f) in checks {
            out.push(GradCheck {
                name,
                seed,
                rel_err: f(seed)?,
                tol,
            });
        }
    }
    Ok(out)
}

fn proj(n: usize, seed: u64, tag: u64) -> Vec<f64> {
    projection_weights(n, seed.wrapping_mul(1000).wrapping_add(tag))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Weights, small non-zero biases and an input, flattened in that order.
fn layer_vars(weight: &Param, bias_len: usize, input_len: usize, seed: u64) -> Vec<f64> {
    let mut x = weight.value.clone();
    x.extend(proj(bias_len, seed, 1).iter().map(|v| 0.1 * v));
    x.extend(proj(input_len, seed, 2));
    x
}

fn layer_grad(grad: LayerGrad, dx: Vec<f64>) -> Vec<f64> {
    let mut g = grad.weight;
    g.extend(grad.bias);
    g.extend(dx);
    g
}

fn conv1d(seed: u64, relu: bool) -> Result<f64> {
    let (c_in, c_out, len) = (5, 4, 12);
    let base = Conv1d::new("c", c_in, c_out, 3, relu, &mut seeded_rng(seed));
    let (nw, nb) = (base.weight.len(), c_out);
    let w = proj(c_out * len, seed, 3);
    grad_check(&layer_vars(&base.weight, nb, c_in * len, seed), EPS, |x| {
        let mut l = base.clone();
        l.weight.value.copy_from_slice(&x[..nw]);
        l.bias.value.copy_from_slice(&x[nw..nw + nb]);
        let input = Mat::from_vec(c_in, len, x[nw + nb..].to_vec())?;
        let (y, cache) = l.forward(&input)?;
        let mut grad = l.zero_grad();
        let dx = l.backward(&cache, &Mat::from_vec(c_out, len, w.clone())?, &mut grad);
        Ok((dot(y.as_slice(), &w), layer_grad(grad, dx.into_vec())))
    })
}

fn ctc(seed: u64, relu: bool) -> Result<f64> {
    let (c, len, f_in, f_out) = (6, 12, 2, 3);
    let base = CtcLayer::new("t", f_in, f_out, relu, &mut seeded_rng(seed));
    let (nw, nb) = (base.weight.len(), f_out);
    let w = proj(c * len * f_out, seed, 3);
    grad_check(&layer_vars(&base.weight, nb, c * len * f_in, seed), EPS, |x| {
        let mut l = base.clone();
        l.weight.value.copy_from_slice(&x[..nw]);
        l.bias.value.copy_from_slice(&x[nw..nw + nb]);
        let input = Tensor3::from_vec(c, len, f_in, x[nw + nb..].to_vec())?;
        let (y, cache) = l.forward(&input)?;
        let mut grad = l.zero_grad();
        let dy = Tensor3::from_vec(c, len, f_out, w.clone())?;
        let dx = l.backward(&cache, &dy, &mut grad);
        Ok((dot(y.as_slice(), &w), layer_grad(grad, dx.as_slice().to_vec())))
    })
}

fn conv2d(seed: u64, relu: bool) -> Result<f64> {
    let (c_in, c_out, side) = (3, 2, 5);
    let base = Conv2d::new("k", c_in, c_out, 3, relu, &mut seeded_rng(seed));
    let grid = BmGrid::new(side);
    let mask = grid.mask();
    let (nw, nb) = (base.weight.len(), c_out);
    let w = proj(c_out * side * side, seed, 3);
    grad_check(&layer_vars(&base.weight, nb, c_in * side * side, seed), EPS, |x| {
        let mut l = base.clone();
        l.weight.value.copy_from_slice(&x[..nw]);
        l.bias.value.copy_from_slice(&x[nw..nw + nb]);
        let (y, cache) = l.forward(&x[nw + nb..], side, side, &mask)?;
        let mut grad = l.zero_grad();
        let dx = l.backward(&cache, &w, side, side, &mask, &mut grad);
        Ok((dot(&y, &w), layer_grad(grad, dx)))
    })
}

fn cell_linear(seed: u64, relu: bool) -> Result<f64> {
    let (c_in, n, c_out, cells) = (3, 4, 2, 6);
    let base = CellLinear::new("cl", c_in, n, c_out, relu, &mut seeded_rng(seed));
    let (nw, nb) = (base.weight.len(), c_out);
    let w = proj(cells * c_out, seed, 3);
    grad_check(&layer_vars(&base.weight, nb, cells * c_in * n, seed), EPS, |x| {
        let mut l = base.clone();
        l.weight.value.copy_from_slice(&x[..nw]);
        l.bias.value.copy_from_slice(&x[nw..nw + nb]);
        let input = &x[nw + nb..];
        let (y, pre) = l.forward(input, cells);
        let mut grad = LayerGrad::zeros(nw, nb);
        let dx = l.backward(input, &pre, &w, &mut grad);
        Ok((dot(&y, &w), layer_grad(grad, dx)))
    })
}

fn avg_pool(seed: u64) -> Result<f64> {
    let (c, len, target) = (4, 12, 5);
    let w = proj(c * target, seed, 3);
    grad_check(&proj(c * len, seed, 2), EPS, |x| {
        let y = avg_pool_temporal(&Mat::from_vec(c, len, x.to_vec())?, target)?;
        let dx = avg_pool_temporal_backward(&Mat::from_vec(c, target, w.clone())?, len);
        Ok((dot(y.as_slice(), &w), dx.into_vec()))
    })
}

fn resize(seed: u64) -> Result<f64> {
    let (c, len, target) = (3, 7, 12);
    let plan = ResizePlan::new(len, target)?;
    let w = proj(c * target, seed, 3);
    grad_check(&proj(c * len, seed, 2), EPS, |x| {
        let y = plan.apply(&Mat::from_vec(c, len, x.to_vec())?);
        let dx = plan.backward(&Mat::from_vec(c, target, w.clone())?);
        Ok((dot(y.as_slice(), &w), dx.into_vec()))
    })
}

fn bm(seed: u64) -> Result<f64> {
    let (c, len, n) = (3, 6, 4);
    let cells = BmGrid::new(len).num_cells();
    let w = proj(cells * c * n, seed, 3);
    grad_check(&proj(c * len, seed, 2), EPS, |x| {
        let map = bm_sample(&Mat::from_vec(c, len, x.to_vec())?, n)?;
        let dx = bm_sample_backward(&map, &w);
        Ok((dot(&map.data, &w), dx.into_vec()))
    })
}

fn cos(seed: u64) -> Result<f64> {
    let d = 8;
    grad_check(&proj(2 * d, seed, 2), EPS, |x| {
        let (a, b) = x.split_at(d);
        let (da, db) = cosine_grad(a, b);
        Ok((cosine(a, b), [da, db].concat()))
    })
}

fn nonzero_biases<M: HasParams>(model: &mut M, seed: u64) {
    for (i, p) in model.params_mut().into_iter().enumerate() {
        if p.name.ends_with(".bias") {
            let v = proj(p.len(), seed, 100 + i as u64);
            p.value.iter_mut().zip(v).for_each(|(b, x)| *b = 0.1 * x);
        }
    }
}

fn stage1(seed: u64) -> Result<f64> {
    let cfg = Stage1Config {
        channels: 6,
        query_len: 4,
        ref_len: 12,
        embed_dim: 5,
        t_emb: 4,
        ctc_filters: [2, 3, 1],
        ..Stage1Config::default()
    };
    let mut model = Stage1Model::new(cfg, seed)?;
    nonzero_biases(&mut model, seed);
    let np = model.num_values();
    let (nq, nr) = (6 * 4, 6 * 12);
    let g = [1.0, -1.0, -1.0, 1.0];
    let mut x = model.flatten();
    x.extend(proj(nq + nr, seed, 2));
    grad_check(&x, EPS, |x| {
        let mut m = model.clone();
        m.unflatten(&x[..np]);
        let q = Mat::from_vec(6, 4, x[np..np + nq].to_vec())?;
        let r = Mat::from_vec(6, 12, x[np + nq..].to_vec())?;
        let mut grad = Stage1Grad::zeros(&m);
        let (loss, dx) = stage1_loss_and_grad(&m, &q, &r, &g, &mut grad)?;
        let mut d = grad.flatten();
        d.extend(dx.query.into_vec());
        d.extend(dx.reference.into_vec());
        Ok((loss.total, d))
    })
}

fn rlm(seed: u64) -> Result<f64> {
    let len = 6;
    let cfg = Stage2Config::default();
    let g = gt_label_map(&[(0.5, 2.0), (3.0, 5.5)], len);
    let x: Vec<f64> = proj(2 * len * len, seed, 2)
        .into_iter()
        .map(|v| 0.5 + 0.45 * v)
        .collect();
    grad_check(&x, EPS, |x| {
        let (m_c, m_r) = x.split_at(len * len);
        let maps = ScoreMaps {
            len,
            m_c: m_c.to_vec(),
            m_r: m_r.to_vec(),
        };
        let r = rlm_loss(&maps, &g, &cfg)?;
        Ok((r.loss.total, [r.d_mc, r.d_mr].concat()))
    })
}

fn stage2(seed: u64, query_branch: bool) -> Result<f64> {
    let cfg = Stage2Config {
        channels: 4,
        query_len: 4,
        ref_len: 6,
        hidden: 5,
        feat: 4,
        samples: 4,
        head: 4,
        query_branch,
        ..Stage2Config::default()
    };
    let mut model = Stage2Model::new(cfg, seed)?;
    nonzero_biases(&mut model, seed);
    let f_q = Mat::from_vec(4, 4, proj(16, seed, 2))?;
    let f_r = Mat::from_vec(4, 6, proj(24, seed, 3))?;
    let g = gt_label_map(&[(1.0, 3.5)], 6);
    grad_check(&model.flatten(), EPS, |flat| {
        let mut m = model.clone();
        m.unflatten(flat);
        let mut grad = m.zero_grad();
        let loss = stage2_loss_and_grad(&m, &f_q, &f_r, &g, &mut grad)?;
        Ok((loss.total, grad.flatten()))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_on_one_seed() {
        let results = run_suite(&[0]).unwrap();
        assert_eq!(results.len(), 16);
        for r in &results {
            assert!(r.passed(), "{} seed {}: {:e} > {:e}", r.name, r.seed, r.rel_err, r.tol);
        }
    }
}
