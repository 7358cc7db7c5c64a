//! Ground-truth label maps and the re-localization loss.

use super::bm::BmGrid;
use super::model::{ScoreMaps, Stage2Config, Stage2Grad, Stage2Model};
use crate::data::{AnnotatedVideo, ClassId};
use crate::error::{Error, Result};
use crate::metrics::tiou_unchecked;
use crate::nn::Mat;

/// Dense `l_r × l_r` map: `G[s][d]` is the best tIoU of `[s, s+d+1)` with any instance
/// (grid units); invalid cells are 0.
pub fn gt_label_map(instances: &[(f64, f64)], len: usize) -> Vec<f64> {
    let mut g = vec![0.0; len * len];
    for s in 0..len {
        for d in 0..len - s {
            let cand = (s as f64, (s + d + 1) as f64);
            g[s * len + d] = instances
                .iter()
                .map(|&iv| tiou_unchecked(cand, iv))
                .fold(0.0, f64::max);
        }
    }
    g
}

/// Instances of `class` in `video`, converted from seconds to grid units.
pub fn grid_instances(video: &AnnotatedVideo, class: ClassId, len: usize) -> Vec<(f64, f64)> {
    let scale = len as f64 / video.duration_sec();
    video
        .instances_of(class)
        .map(|i| (i.t_start * scale, i.t_end * scale))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RlmLoss {
    pub classification: f64,
    pub regression: f64,
    pub total: f64,
}

/// Loss and its gradients with respect to the dense `M_C` and `M_R` maps.
#[derive(Debug, Clone, PartialEq)]
pub struct RlmLossGrad {
    pub loss: RlmLoss,
    pub d_mc: Vec<f64>,
    pub d_mr: Vec<f64>,
}

/// `L_C + λ·L_R` over valid cells.
///
/// `L_C` weighs the mean positive (`G > θ_pos`) and mean negative (`G < θ_neg`) logistic terms
/// equally, which is the expectation of 1:1 positive/negative sampling; with only one side present
/// it gets all the weight. `L_R` averages the squared error of each non-empty band
/// (`G > 0.7`, `0.3 ≤ G ≤ 0.7`, `G < 0.3`) and then averages the bands.
pub fn rlm_loss(maps: &ScoreMaps, g: &[f64], cfg: &Stage2Config) -> Result<RlmLossGrad> {
    let ll = maps.len * maps.len;
    if maps.m_c.len() != ll || maps.m_r.len() != ll || g.len() != ll {
        return Err(Error::shape(format!(
            "score maps {}/{} and label map {} vs {}x{}",
            maps.m_c.len(),
            maps.m_r.len(),
            g.len(),
            maps.len,
            maps.len
        )));
    }
    let grid = BmGrid::new(maps.len);
    let mask = grid.mask();
    let eps = cfg.log_eps;

    let pos: Vec<usize> = (0..ll).filter(|&p| mask[p] && g[p] > cfg.theta_pos).collect();
    let neg: Vec<usize> = (0..ll).filter(|&p| mask[p] && g[p] < cfg.theta_neg).collect();
    let (w_pos, w_neg) = match (pos.is_empty(), neg.is_empty()) {
        (false, false) => (0.5 / pos.len() as f64, 0.5 / neg.len() as f64),
        (false, true) => (1.0 / pos.len() as f64, 0.0),
        (true, false) => (0.0, 1.0 / neg.len() as f64),
        (true, true) => (0.0, 0.0),
    };
    let mut d_mc = vec![0.0; ll];
    let mut l_c = 0.0;
    for &p in &pos {
        let m = maps.m_c[p];
        l_c -= w_pos * m.max(eps).ln();
        if m > eps {
            d_mc[p] = -w_pos / m;
        }
    }
    for &p in &neg {
        let q = 1.0 - maps.m_c[p];
        l_c -= w_neg * q.max(eps).ln();
        if q > eps {
            d_mc[p] = w_neg / q;
        }
    }

    let mut bands: [Vec<usize>; 3] = Default::default();
    for p in (0..ll).filter(|&p| mask[p]) {
        let b = if g[p] > 0.7 {
            0
        } else if g[p] >= 0.3 {
            1
        } else {
            2
        };
        bands[b].push(p);
    }
    let used = bands.iter().filter(|b| !b.is_empty()).count().max(1) as f64;
    let mut d_mr = vec![0.0; ll];
    let mut l_r = 0.0;
    for band in bands.iter().filter(|b| !b.is_empty()) {
        let w = 1.0 / (used * band.len() as f64);
        for &p in band {
            let e = maps.m_r[p] - g[p];
            l_r += w * e * e;
            d_mr[p] = cfg.lambda * 2.0 * w * e;
        }
    }
    let loss = RlmLoss {
        classification: l_c,
        regression: l_r,
        total: l_c + cfg.lambda * l_r,
    };
    if !loss.total.is_finite() {
        return Err(Error::NonFinite("re-localization loss".into()));
    }
    Ok(RlmLossGrad { loss, d_mc, d_mr })
}

/// Forward, loss and backward for one pair; parameter gradients accumulate into `grad`.
pub fn stage2_loss_and_grad(
    model: &Stage2Model,
    f_q: &Mat,
    f_r: &Mat,
    g: &[f64],
    grad: &mut Stage2Grad,
) -> Result<RlmLoss> {
    let (maps, cache) = model.forward(f_q, f_r)?;
    let r = rlm_loss(&maps, g, &model.config)?;
    model.backward(&maps, &cache, &r.d_mc, &r.d_mr, grad);
    Ok(r.loss)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn maps(len: usize, m_c: Vec<f64>, m_r: Vec<f64>) -> ScoreMaps {
        ScoreMaps { len, m_c, m_r }
    }

    #[test]
    fn label_map_examples() {
        assert!(gt_label_map(&[], 4).iter().all(|&v| v == 0.0));
        let g = gt_label_map(&[(0.0, 2.0)], 4);
        assert_eq!(g[1], 1.0);
        assert_eq!(g[3], 0.5);
        assert_eq!(g[3 * 4 + 1], 0.0);
        let a = gt_label_map(&[(0.0, 2.0), (2.5, 4.0)], 4);
        let b = gt_label_map(&[(2.5, 4.0), (0.0, 2.0)], 4);
        assert_eq!(a, b);
    }

    #[test]
    fn single_positive_cell_half_gives_ln2() {
        let cfg = Stage2Config::default();
        let r = rlm_loss(&maps(1, vec![0.5], vec![1.0]), &[1.0], &cfg).unwrap();
        assert!((r.loss.classification - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(r.loss.regression, 0.0);
    }

    #[test]
    fn perfect_maps_give_zero() {
        let cfg = Stage2Config::default();
        let g = gt_label_map(&[(0.0, 2.0)], 4);
        let m_c: Vec<f64> = g.iter().map(|&v| if v > 0.6 { 1.0 } else { 0.0 }).collect();
        let r = rlm_loss(&maps(4, m_c, g.clone()), &g, &cfg).unwrap();
        assert!(r.loss.classification < 1e-12);
        assert_eq!(r.loss.regression, 0.0);
        assert!(rlm_loss(&maps(3, vec![0.0; 9], vec![0.0; 9]), &g, &cfg).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        use crate::nn::gradcheck::{grad_check, projection_weights};
        let cfg = Stage2Config::default();
        let len = 5;
        let g = gt_label_map(&[(0.5, 2.0), (3.0, 5.0)], len);
        let x: Vec<f64> = projection_weights(2 * len * len, 4)
            .into_iter()
            .map(|v| 0.5 + 0.4 * v)
            .collect();
        let err = grad_check(&x, 1e-6, |x| {
            let r = rlm_loss(
                &maps(len, x[..25].to_vec(), x[25..].to_vec()),
                &g,
                &cfg,
            )?;
            let mut d = r.d_mc;
            d.extend(r.d_mr);
            Ok((r.loss.total, d))
        })
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    fn full_check(query_branch: bool, seed: u64) -> f64 {
        use crate::nn::gradcheck::{grad_check, projection_weights};
        use crate::nn::HasParams;
        let cfg = Stage2Config {
            channels: 3,
            query_len: 4,
            ref_len: 6,
            hidden: 5,
            feat: 4,
            samples: 4,
            head: 4,
            query_branch,
            ..Stage2Config::default()
        };
        let mut model = Stage2Model::new(cfg, seed).unwrap();
        for (i, p) in model.params_mut().into_iter().enumerate() {
            if p.name.ends_with(".bias") {
                let w = projection_weights(p.len(), seed + i as u64);
                p.value.iter_mut().zip(w).for_each(|(v, x)| *v = 0.1 * x);
            }
        }
        let f_q = Mat::from_vec(3, 4, projection_weights(12, seed + 50)).unwrap();
        let f_r = Mat::from_vec(3, 6, projection_weights(18, seed + 60)).unwrap();
        let g = gt_label_map(&[(1.0, 3.5)], 6);
        grad_check(&model.flatten(), 1e-6, |flat| {
            let mut m = model.clone();
            m.unflatten(flat);
            let mut grad = m.zero_grad();
            let loss = stage2_loss_and_grad(&m, &f_q, &f_r, &g, &mut grad)?;
            Ok((loss.total, grad.flatten()))
        })
        .unwrap()
    }

    #[test]
    fn full_stage2_gradient() {
        for seed in 0..2 {
            let err = full_check(true, seed);
            assert!(err < 1e-3, "seed {seed}: {err}");
        }
        let err = full_check(false, 7);
        assert!(err < 1e-3, "control: {err}");
    }
}
