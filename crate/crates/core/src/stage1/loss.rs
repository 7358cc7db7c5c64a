//! Similarity, labels and losses for the two-branch auto-encoder.

use super::model::{BranchGrad, Stage1Model};
use crate::data::{AnnotatedVideo, ClassId};
use crate::error::{Error, Result};
use crate::nn::Mat;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity; defined as 0 when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

/// Gradients of `cosine(a, b)` with respect to `a` and `b` (zero for zero vectors).
pub fn cosine_grad(a: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return (vec![0.0; a.len()], vec![0.0; b.len()]);
    }
    let c = dot(a, b) / (na * nb);
    let ga = a
        .iter()
        .zip(b)
        .map(|(x, y)| y / (na * nb) - c * x / (na * na))
        .collect();
    let gb = a
        .iter()
        .zip(b)
        .map(|(x, y)| x / (na * nb) - c * y / (nb * nb))
        .collect();
    (ga, gb)
}

/// Cosine of `e_q` against every column of `e_r`.
pub fn column_cosines(e_q: &[f64], e_r: &Mat) -> Vec<f64> {
    (0..e_r.cols())
        .map(|i| cosine(e_q, &e_r.column(i)))
        .collect()
}

/// Maximum cosine similarity between a query embedding and the columns of a reference embedding.
pub fn max_cos_similarity(e_q: &[f64], e_r: &Mat) -> Result<f64> {
    if e_q.len() != e_r.rows() {
        return Err(Error::shape(format!(
            "query embedding length {} vs reference embedding rows {}",
            e_q.len(),
            e_r.rows()
        )));
    }
    if e_q.iter().all(|&v| v == 0.0) {
        return Err(Error::DegenerateQuery);
    }
    if e_q.iter().any(|v| !v.is_finite()) || !e_r.is_finite() {
        return Err(Error::NonFinite("embedding".into()));
    }
    Ok(column_cosines(e_q, e_r)
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Per-window labels: `+1` when instances of `query_class` cover at least `rho` of window `i`
/// (the `i`-th of `t_emb` equal partitions of the video), `−1` otherwise.
pub fn make_similarity_label(
    video: &AnnotatedVideo,
    query_class: ClassId,
    t_emb: usize,
    rho: f64,
) -> Vec<f64> {
    let duration = video.duration_sec();
    let mut spans: Vec<(f64, f64)> = video
        .instances_of(query_class)
        .map(|i| (i.t_start, i.t_end))
        .collect();
    spans.sort_by(|a, b| a.0.total_cmp(&b.0));
    (0..t_emb)
        .map(|i| {
            let w0 = i as f64 / t_emb as f64 * duration;
            let w1 = (i + 1) as f64 / t_emb as f64 * duration;
            let covered = union_overlap(&spans, w0, w1);
            if covered >= rho * (w1 - w0) - 1e-12 {
                1.0
            } else {
                -1.0
            }
        })
        .collect()
}

/// Length of `[w0, w1]` covered by the union of sorted spans.
fn union_overlap(spans: &[(f64, f64)], w0: f64, w1: f64) -> f64 {
    let mut covered = 0.0;
    let mut cursor = w0;
    for &(a, b) in spans {
        let a = a.max(cursor);
        let b = b.min(w1);
        if b > a {
            covered += b - a;
            cursor = b;
        }
    }
    covered
}

/// Mean squared elementwise reconstruction error.
pub fn recon_loss(f: &Mat, f_rec: &Mat) -> Result<f64> {
    if f.shape() != f_rec.shape() {
        return Err(Error::shape(format!(
            "reconstruction shape {:?} vs input {:?}",
            f_rec.shape(),
            f.shape()
        )));
    }
    let n = f.as_slice().len() as f64;
    let loss = f
        .as_slice()
        .iter()
        .zip(f_rec.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n;
    if !loss.is_finite() {
        return Err(Error::NonFinite("reconstruction loss".into()));
    }
    Ok(loss)
}

fn recon_grad(f: &Mat, f_rec: &Mat) -> Mat {
    let n = f.as_slice().len() as f64;
    let data = f
        .as_slice()
        .iter()
        .zip(f_rec.as_slice())
        .map(|(a, b)| 2.0 * (b - a) / n)
        .collect();
    Mat::from_vec(f.rows(), f.cols(), data).expect("same shape")
}

/// `(1/T_emb) Σ_i (cos(e_q, e_r[i]) − g_i)²`.
pub fn similarity_loss(e_q: &[f64], e_r: &Mat, g: &[f64]) -> Result<f64> {
    if g.len() != e_r.cols() {
        return Err(Error::shape(format!(
            "label length {} vs {} reference columns",
            g.len(),
            e_r.cols()
        )));
    }
    if g.iter().any(|&v| v != 1.0 && v != -1.0) {
        return Err(Error::InvalidArgument("labels must be ±1".into()));
    }
    let cos = column_cosines(e_q, e_r);
    let loss = cos
        .iter()
        .zip(g)
        .map(|(c, gi)| (c - gi) * (c - gi))
        .sum::<f64>()
        / g.len() as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite("similarity loss".into()));
    }
    Ok(loss)
}

/// The three loss terms and their weighted total.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stage1Loss {
    pub recon_query: f64,
    pub recon_reference: f64,
    pub similarity: f64,
    pub total: f64,
}

impl Stage1Loss {
    pub fn combine(recon_query: f64, recon_reference: f64, similarity: f64, lambda: f64) -> Self {
        Self {
            recon_query,
            recon_reference,
            similarity,
            total: recon_query + recon_reference + lambda * similarity,
        }
    }
}

/// Gradients of the full model, in parameter order (query branch, then reference branch).
#[derive(Debug, Clone, PartialEq)]
pub struct Stage1Grad {
    pub query: BranchGrad,
    pub reference: BranchGrad,
}

impl Stage1Grad {
    pub fn zeros(model: &Stage1Model) -> Self {
        Self {
            query: model.query.zero_grad(),
            reference: model.reference.zero_grad(),
        }
    }

    pub fn add_assign(&mut self, other: &Stage1Grad) {
        self.query.add_assign(&other.query);
        self.reference.add_assign(&other.reference);
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.query.flatten_into(&mut out);
        self.reference.flatten_into(&mut out);
        out
    }
}

/// Gradients with respect to the inputs, returned alongside parameter gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage1InputGrad {
    pub query: Mat,
    pub reference: Mat,
}

/// Forward pass of the full stage-1 loss for one pair.
pub fn stage1_loss(model: &Stage1Model, f_q: &Mat, f_r: &Mat, g: &[f64]) -> Result<Stage1Loss> {
    let (e_q, _) = model.query.encode(f_q)?;
    let (e_r, _) = model.reference.encode(f_r)?;
    let (rq, _) = model.query.decode(&e_q)?;
    let (rr, _) = model.reference.decode(&e_r)?;
    Ok(Stage1Loss::combine(
        recon_loss(f_q, &rq)?,
        recon_loss(f_r, &rr)?,
        similarity_loss(e_q.as_slice(), &e_r, g)?,
        model.config.lambda,
    ))
}

/// Loss and gradients for one pair; parameter gradients are accumulated into `grad`.
pub fn stage1_loss_and_grad(
    model: &Stage1Model,
    f_q: &Mat,
    f_r: &Mat,
    g: &[f64],
    grad: &mut Stage1Grad,
) -> Result<(Stage1Loss, Stage1InputGrad)> {
    let (e_q, enc_q) = model.query.encode(f_q)?;
    let (e_r, enc_r) = model.reference.encode(f_r)?;
    let (rq, dec_q) = model.query.decode(&e_q)?;
    let (rr, dec_r) = model.reference.decode(&e_r)?;
    let loss = Stage1Loss::combine(
        recon_loss(f_q, &rq)?,
        recon_loss(f_r, &rr)?,
        similarity_loss(e_q.as_slice(), &e_r, g)?,
        model.config.lambda,
    );

    let d_rq = recon_grad(f_q, &rq);
    let d_rr = recon_grad(f_r, &rr);
    let mut d_eq = model.query.decode_backward(&dec_q, &d_rq, &mut grad.query);
    let mut d_er = model
        .reference
        .decode_backward(&dec_r, &d_rr, &mut grad.reference);

    let t = g.len() as f64;
    let q = e_q.as_slice();
    for (i, &gi) in g.iter().enumerate() {
        let col = e_r.column(i);
        let c = cosine(q, &col);
        let scale = model.config.lambda * 2.0 * (c - gi) / t;
        let (ga, gb) = cosine_grad(q, &col);
        for (k, v) in ga.iter().enumerate() {
            d_eq.add_at(k, 0, scale * v);
        }
        for (k, v) in gb.iter().enumerate() {
            d_er.add_at(k, i, scale * v);
        }
    }

    let mut dq = model.query.encode_backward(&enc_q, &d_eq, &mut grad.query);
    let mut dr = model
        .reference
        .encode_backward(&enc_r, &d_er, &mut grad.reference);
    // the inputs are also the reconstruction targets
    for (d, g) in dq.as_mut_slice().iter_mut().zip(d_rq.as_slice()) {
        *d -= g;
    }
    for (d, g) in dr.as_mut_slice().iter_mut().zip(d_rr.as_slice()) {
        *d -= g;
    }
    Ok((
        loss,
        Stage1InputGrad {
            query: dq,
            reference: dr,
        },
    ))
}
