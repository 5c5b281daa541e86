//! The three probe objectives and their closed-form gradients with respect
//! to the probe matrix.
//!
//! Non-differentiable points contribute a zero subgradient: a projected
//! difference with norm below [`ZERO_NORM`], and the hinge kink `q = r`.
//! Cosine pairs with a near-zero projection are skipped and counted.

use super::{dot, norm, Embeddings, ProbeError, ProbeMatrix};
use crate::store::{ClassPair, LabelSet, NliClass, StsPair, Triplet};

/// Norms below this are treated as zero.
pub const ZERO_NORM: f64 = 1e-12;

/// Projected premise–entailment (`q`) and premise–contradiction (`r`)
/// distances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TripletScore {
    pub q: f64,
    pub r: f64,
}

/// `(‖Mxᵢ − Mxⱼ‖ − l)²`
pub fn sts_loss(probe: &ProbeMatrix, xi: &[f64], xj: &[f64], label: f64) -> Result<f64, ProbeError> {
    let dist = probe.projected_distance(xi, xj)?;
    Ok((dist - label).powi(2))
}

pub fn triplet_score(
    probe: &ProbeMatrix,
    p: &[f64],
    e: &[f64],
    c: &[f64],
) -> Result<TripletScore, ProbeError> {
    Ok(TripletScore {
        q: probe.projected_distance(p, e)?,
        r: probe.projected_distance(p, c)?,
    })
}

/// `max(0, q − r)`
pub fn triplet_loss(probe: &ProbeMatrix, p: &[f64], e: &[f64], c: &[f64]) -> Result<f64, ProbeError> {
    let TripletScore { q, r } = triplet_score(probe, p, e, c)?;
    Ok((q - r).max(0.0))
}

/// `(t − cos(Mp, Mh))²` with `t = +1` for entailment and `−1` for
/// contradiction. `None` when either projection is degenerate.
pub fn cosine_pair_loss(
    probe: &ProbeMatrix,
    p: &[f64],
    h: &[f64],
    class: NliClass,
) -> Result<Option<f64>, ProbeError> {
    let a = probe.project(p)?;
    let b = probe.project(h)?;
    let (na, nb) = (norm(&a), norm(&b));
    if na < ZERO_NORM || nb < ZERO_NORM {
        return Ok(None);
    }
    let cos = (dot(&a, &b) / (na * nb)).clamp(-1.0, 1.0);
    Ok(Some((class.target_cosine() - cos).powi(2)))
}

/// Mean loss over a batch and its gradient `∂loss/∂M` (row-major, same
/// shape as the probe).
#[derive(Debug, Clone, PartialEq)]
pub struct LossGradient {
    pub loss: f64,
    pub gradient: Vec<f64>,
    /// Items that entered the mean.
    pub used: usize,
    /// Degenerate cosine pairs left out of the mean.
    pub skipped: usize,
}

struct Scratch {
    diff_a: Vec<f64>,
    diff_b: Vec<f64>,
    proj_a: Vec<f64>,
    proj_b: Vec<f64>,
    grad_a: Vec<f64>,
    grad_b: Vec<f64>,
}

impl Scratch {
    fn new(k: usize, d: usize) -> Self {
        Scratch {
            diff_a: vec![0.0; d],
            diff_b: vec![0.0; d],
            proj_a: vec![0.0; k],
            proj_b: vec![0.0; k],
            grad_a: vec![0.0; k],
            grad_b: vec![0.0; k],
        }
    }
}

/// `grad += scale · u ⊗ x`
fn add_outer(grad: &mut [f64], scale: f64, u: &[f64], x: &[f64]) {
    let d = x.len();
    for (r, &ur) in u.iter().enumerate() {
        let coef = scale * ur;
        if coef == 0.0 {
            continue;
        }
        for (g, &xc) in grad[r * d..(r + 1) * d].iter_mut().zip(x) {
            *g += coef * xc;
        }
    }
}

/// Mean batch loss and its gradient. Items are reduced in slice order.
pub fn loss_gradient(
    probe: &ProbeMatrix,
    embeddings: &Embeddings,
    batch: &LabelSet,
) -> Result<LossGradient, ProbeError> {
    if batch.is_empty() {
        return Err(ProbeError::EmptySet("batch"));
    }
    if embeddings.dim() != probe.cols() {
        return Err(ProbeError::DimensionMismatch {
            expected: probe.cols(),
            actual: embeddings.dim(),
        });
    }
    let mut grad = vec![0.0; probe.rows() * probe.cols()];
    let mut s = Scratch::new(probe.rows(), probe.cols());
    let mut total = 0.0;
    let mut used = 0;
    let mut skipped = 0;

    match batch {
        LabelSet::Sts(pairs) => {
            for pair in pairs {
                total += sts_item(probe, embeddings, pair, &mut s, &mut grad);
                used += 1;
            }
        }
        LabelSet::Triplets(triples) => {
            for t in triples {
                total += triplet_item(probe, embeddings, t, &mut s, &mut grad);
                used += 1;
            }
        }
        LabelSet::Pairs(pairs) => {
            for pair in pairs {
                match cosine_item(probe, embeddings, pair, &mut s, &mut grad) {
                    Some(loss) => {
                        total += loss;
                        used += 1;
                    }
                    None => skipped += 1,
                }
            }
        }
    }

    if used > 0 {
        let inv = 1.0 / used as f64;
        grad.iter_mut().for_each(|g| *g *= inv);
        total *= inv;
    }
    Ok(LossGradient {
        loss: total,
        gradient: grad,
        used,
        skipped,
    })
}

// d/dM (‖u‖ − l)² = 2(‖u‖ − l) · (u/‖u‖) · δᵀ,  u = Mδ, δ = xᵢ − xⱼ
fn sts_item(
    probe: &ProbeMatrix,
    emb: &Embeddings,
    pair: &StsPair,
    s: &mut Scratch,
    grad: &mut [f64],
) -> f64 {
    probe.project_difference(emb.row(pair.a), emb.row(pair.b), &mut s.diff_a, &mut s.proj_a);
    let dist = norm(&s.proj_a);
    let resid = dist - pair.difference;
    if dist >= ZERO_NORM {
        add_outer(grad, 2.0 * resid / dist, &s.proj_a, &s.diff_a);
    }
    resid * resid
}

fn triplet_item(
    probe: &ProbeMatrix,
    emb: &Embeddings,
    t: &Triplet,
    s: &mut Scratch,
    grad: &mut [f64],
) -> f64 {
    let p = emb.row(t.premise);
    probe.project_difference(p, emb.row(t.entailment), &mut s.diff_a, &mut s.proj_a);
    probe.project_difference(p, emb.row(t.contradiction), &mut s.diff_b, &mut s.proj_b);
    let q = norm(&s.proj_a);
    let r = norm(&s.proj_b);
    let margin = q - r;
    // Inactive hinge and the kink both give a zero subgradient.
    if margin > 0.0 {
        if q >= ZERO_NORM {
            add_outer(grad, 1.0 / q, &s.proj_a, &s.diff_a);
        }
        if r >= ZERO_NORM {
            add_outer(grad, -1.0 / r, &s.proj_b, &s.diff_b);
        }
    }
    margin.max(0.0)
}

// With a = Mp, b = Mh, c = cos(a, b):
//   ∂c/∂a = b/(‖a‖‖b‖) − c·a/‖a‖²,  ∂c/∂b = a/(‖a‖‖b‖) − c·b/‖b‖²
//   ∂L/∂M = −2(t − c) · (∂c/∂a · pᵀ + ∂c/∂b · hᵀ)
fn cosine_item(
    probe: &ProbeMatrix,
    emb: &Embeddings,
    pair: &ClassPair,
    s: &mut Scratch,
    grad: &mut [f64],
) -> Option<f64> {
    let p = emb.row(pair.premise);
    let h = emb.row(pair.hypothesis);
    probe.project_into(p, &mut s.proj_a);
    probe.project_into(h, &mut s.proj_b);
    let na = norm(&s.proj_a);
    let nb = norm(&s.proj_b);
    if na < ZERO_NORM || nb < ZERO_NORM {
        return None;
    }
    let inv_ab = 1.0 / (na * nb);
    let cos = dot(&s.proj_a, &s.proj_b) * inv_ab;
    let resid = pair.class.target_cosine() - cos;
    let outer = -2.0 * resid;

    for i in 0..s.proj_a.len() {
        let (ai, bi) = (s.proj_a[i], s.proj_b[i]);
        s.grad_a[i] = bi * inv_ab - cos * ai / (na * na);
        s.grad_b[i] = ai * inv_ab - cos * bi / (nb * nb);
    }
    add_outer(grad, outer, &s.grad_a, p);
    add_outer(grad, outer, &s.grad_b, h);
    Some(resid * resid)
}
