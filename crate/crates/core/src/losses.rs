//! Training objectives.
//!
//! The functions taking an `O: Ops` build differentiable graphs when `O` is
//! a [`Tape`](crate::numerics::Tape) and plain values with
//! [`Eval`](crate::numerics::Eval). Discrete choices (label permutation, head
//! selection, mask assignment) are made on forward values and held fixed
//! during backpropagation.

use crate::error::{Error, Result};
use crate::model::Model;
use crate::numerics::{bce_sum_tensor, bce_value, Eval, Ops, ParamStore, Tensor};
use crate::perm::permutations;

/// `α` as stated in the training-setup prose.
pub const ALPHA_DEFAULT: f64 = 0.008;
/// `α` as printed in the results table.
pub const ALPHA_TABLE: f64 = 0.08;
pub const BETA_DEFAULT: f64 = 1.0;

/// Binary cross-entropy `-y ln p - (1-y) ln(1-p)` with `p` clamped to
/// `[1e-7, 1 - 1e-7]`.
pub fn bce(y_true: f64, y_pred: f64) -> f64 {
    bce_value(y_true, y_pred)
}

fn permute_rows(t: &Tensor, phi: &[usize]) -> Tensor {
    let rows: Vec<Vec<f64>> = phi.iter().map(|&r| t.row(r).to_vec()).collect();
    Tensor::from_rows(&rows)
}

/// Permutation-invariant diarization loss. Row `c` of the prediction is
/// compared with reference row `φ[c]`; the result is the mean BCE for the
/// best `φ` (lexicographically first among ties).
pub fn pit_diar_loss<O: Ops>(o: &mut O, y_true: &Tensor, y_pred: &O::V) -> Result<(O::V, Vec<usize>)> {
    let pred = o.value(y_pred);
    if pred.shape() != y_true.shape() || pred.shape().len() != 2 {
        return Err(Error::dim(
            "pit_diar_loss",
            format!("labels {:?} vs predictions {:?}", y_true.shape(), pred.shape()),
        ));
    }
    let (c, t) = (pred.rows(), pred.cols());
    if c == 0 || t == 0 {
        return Err(Error::dim("pit_diar_loss", "empty activity matrix".to_string()));
    }
    let mut best: Option<(f64, Vec<usize>, Tensor)> = None;
    for phi in permutations(c) {
        let target = permute_rows(y_true, &phi);
        let v = bce_sum_tensor(pred, &target)?;
        if best.as_ref().is_none_or(|b| v < b.0) {
            best = Some((v, phi, target));
        }
    }
    let (_, phi, target) = best.expect("at least one permutation");
    let sum = o.bce_sum(y_pred, &target)?;
    Ok((o.scale(&sum, 1.0 / (c * t) as f64), phi))
}

/// `M[i][j] = y_i · y_j` for a binary activity row.
pub fn target_mask(y_row: &[f64]) -> Result<Tensor> {
    if let Some(v) = y_row.iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(Error::Input(format!("target mask needs a binary row, found {v}")));
    }
    let t = y_row.len();
    let mut m = Tensor::zeros(&[t, t]);
    for (i, &yi) in y_row.iter().enumerate() {
        for (j, &yj) in y_row.iter().enumerate() {
            m.set(i, j, yi * yj);
        }
    }
    Ok(m)
}

/// Ranks heads by the trace of their attention matrix, highest first (ties:
/// lower index first), and keeps the top `k` as `(head, trace)`.
pub fn select_heads_by_trace(weights: &[Tensor], k: usize) -> Result<Vec<(usize, f64)>> {
    if k > weights.len() {
        return Err(Error::Config(format!(
            "cannot select {k} heads out of {}",
            weights.len()
        )));
    }
    let mut ranked: Vec<(usize, f64)> = weights.iter().map(Tensor::trace).enumerate().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(k);
    Ok(ranked)
}

/// Attention auxiliary loss: `Σ_c (1/T²) Σ_ij BCE(M_c[i][j], W_{σ(c)}[i][j])`
/// minimized over assignments `σ` of masks to heads. Returns the loss and the
/// chosen assignment (`σ[c]` is the position in `heads` serving mask `c`).
pub fn vad_aux_loss<O: Ops>(o: &mut O, masks: &[Tensor], heads: &[O::V]) -> Result<(O::V, Vec<usize>)> {
    if masks.len() != heads.len() || masks.is_empty() {
        return Err(Error::dim(
            "vad_aux_loss",
            format!("{} masks for {} heads", masks.len(), heads.len()),
        ));
    }
    let t = masks[0].rows();
    let norm = 1.0 / (t * t) as f64;
    let mut best: Option<(f64, Vec<usize>)> = None;
    for sigma in permutations(masks.len()) {
        let mut v = 0.0;
        for (c, m) in masks.iter().enumerate() {
            v += norm * bce_sum_tensor(o.value(&heads[sigma[c]]), m)?;
        }
        if best.as_ref().is_none_or(|b| v < b.0) {
            best = Some((v, sigma));
        }
    }
    let (_, sigma) = best.expect("at least one assignment");
    let mut total: Option<O::V> = None;
    for (c, m) in masks.iter().enumerate() {
        let s = o.bce_sum(&heads[sigma[c]], m)?;
        let s = o.scale(&s, norm);
        total = Some(match total {
            None => s,
            Some(acc) => o.add(&acc, &s)?,
        });
    }
    Ok((total.expect("non-empty"), sigma))
}

/// Mean BCE of `sigmoid(logits)` against `[1, …, 1, 0]` (`C` ones).
pub fn existence_loss<O: Ops>(o: &mut O, logits: &O::V) -> Result<O::V> {
    let n = o.value(logits).len();
    if n < 1 {
        return Err(Error::dim("existence_loss", "no logits".to_string()));
    }
    let target = Tensor::new(
        o.value(logits).shape().to_vec(),
        (0..n).map(|k| if k + 1 < n { 1.0 } else { 0.0 }).collect(),
    )?;
    let p = o.sigmoid(logits);
    let s = o.bce_sum(&p, &target)?;
    Ok(o.scale(&s, 1.0 / n as f64))
}

/// `diar + α·vad + β·exist`.
pub fn total_loss(diar: f64, vad: f64, exist: f64, alpha: f64, beta: f64) -> f64 {
    diar + alpha * vad + beta * exist
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub alpha: f64,
    pub beta: f64,
    /// 1-based encoder layer whose heads feed the auxiliary loss.
    pub head_layer: Option<usize>,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: ALPHA_DEFAULT,
            beta: BETA_DEFAULT,
            head_layer: None,
        }
    }
}

impl LossConfig {
    pub fn validate(&self, n_layers: usize) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::Config(format!(
                "loss weights must be >= 0, got alpha {} beta {}",
                self.alpha, self.beta
            )));
        }
        if let Some(l) = self.head_layer {
            if l == 0 || l > n_layers {
                return Err(Error::Config(format!("head layer {l} outside 1..={n_layers}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub diar: f64,
    pub vad: f64,
    pub exist: f64,
    pub total: f64,
    pub best_perm: Vec<usize>,
    /// `(head index, trace)` in selection order.
    pub selected_heads: Vec<(usize, f64)>,
}

/// Forward pass plus every loss term for one chunk. `labels` is `C × T`.
///
/// The auxiliary term is always evaluated for logging, but with `α = 0` it
/// is computed off the graph so the returned total carries no gradient from
/// it.
pub fn model_loss<O: Ops>(
    o: &mut O,
    model: &Model,
    params: &ParamStore,
    x: &Tensor,
    labels: &Tensor,
    cfg: &LossConfig,
) -> Result<(O::V, LossBreakdown)> {
    let n_layers = model.config.n_layers;
    cfg.validate(n_layers)?;
    let c = model.config.n_speakers;
    if labels.shape() != [c, x.rows()] {
        return Err(Error::dim(
            "model_loss",
            format!("labels {:?} for {} frames and {c} speakers", labels.shape(), x.rows()),
        ));
    }
    let out = model.forward_with(o, params, x, true)?;
    let (diar, phi) = pit_diar_loss(o, labels, &out.posteriors)?;
    let exist = existence_loss(o, &out.attractors.exist_logits)?;

    let layer = cfg.head_layer.unwrap_or(n_layers) - 1;
    let head_values: Vec<Tensor> = out.attention[layer].iter().map(|w| o.value(w).clone()).collect();
    let selected = select_heads_by_trace(&head_values, c)?;
    let masks = phi
        .iter()
        .map(|&r| target_mask(labels.row(r)))
        .collect::<Result<Vec<_>>>()?;

    let diar_v = o.scalar(&diar);
    let exist_v = o.scalar(&exist);
    let exist_term = o.scale(&exist, cfg.beta);
    let (total, vad_v) = if cfg.alpha > 0.0 {
        let heads: Vec<O::V> = selected.iter().map(|&(h, _)| out.attention[layer][h].clone()).collect();
        let (vad, _) = vad_aux_loss(o, &masks, &heads)?;
        let vad_v = o.scalar(&vad);
        let vad_term = o.scale(&vad, cfg.alpha);
        let partial = o.add(&diar, &vad_term)?;
        (o.add(&partial, &exist_term)?, vad_v)
    } else {
        let mut e = Eval;
        let heads: Vec<_> = selected
            .iter()
            .map(|&(h, _)| e.constant(head_values[h].clone()))
            .collect();
        let (vad, _) = vad_aux_loss(&mut e, &masks, &heads)?;
        (o.add(&diar, &exist_term)?, vad.item())
    };
    let total_v = o.scalar(&total);
    if !total_v.is_finite() {
        return Err(Error::NonFinite(format!(
            "loss (diar {diar_v}, vad {vad_v}, exist {exist_v})"
        )));
    }
    Ok((
        total,
        LossBreakdown {
            diar: diar_v,
            vad: vad_v,
            exist: exist_v,
            total: total_v,
            best_perm: phi,
            selected_heads: selected,
        },
    ))
}
