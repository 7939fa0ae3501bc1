//! Training objectives: the reparameterized variational bottleneck loss,
//! the per-modality imputation loss and their weighted sum.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::model::ForwardOutputs;
use crate::tensor::Tensor;

/// Which classification heads contribute cross-entropy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Heads {
    /// Every per-modality head plus the joint head.
    All,
    /// Only the joint head.
    JointOnly,
}

/// KL of each modality over its available rows, plus `gamma` times the
/// cross-entropy of the supervised heads.
pub fn vib_loss(
    tape: &mut Tape,
    out: &ForwardOutputs,
    labels: &[usize],
    gamma: f64,
    heads: Heads,
) -> Result<Var> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::config(format!("gamma must be positive, got {gamma}")));
    }
    let mut terms = Vec::new();
    for m in 0..out.mu.len() {
        let rows = &out.available[m];
        if rows.is_empty() {
            continue;
        }
        let (mu, lv) = if rows.len() == out.presence.n_samples() {
            (out.mu[m], out.log_var[m])
        } else {
            (tape.select_rows(out.mu[m], rows)?, tape.select_rows(out.log_var[m], rows)?)
        };
        terms.push(tape.gaussian_kl(mu, lv)?);
    }
    let mut heads_used: Vec<Var> = match heads {
        Heads::All => out.logits.clone(),
        Heads::JointOnly => Vec::new(),
    };
    heads_used.push(out.joint_logits);
    for logits in heads_used {
        let ce = tape.softmax_cross_entropy(logits, labels)?;
        terms.push(tape.scale(ce, gamma)?);
    }
    sum_scalars(tape, &terms)
}

/// Mean squared distance between the detached self-encoding and the
/// cross-modal imputation of modality `m`, over rows where it is present.
pub fn mse_loss(tape: &mut Tape, out: &ForwardOutputs, m: usize) -> Result<Var> {
    mse_against(tape, out, m, None)
}

/// [`mse_loss`] with the target taken from `target` (a full `[batch, d]`
/// tensor) instead of the current self-encoding. Used to evaluate the
/// stop-gradient objective at perturbed parameters.
pub fn mse_loss_against(tape: &mut Tape, out: &ForwardOutputs, m: usize, target: &Tensor) -> Result<Var> {
    mse_against(tape, out, m, Some(target))
}

fn mse_against(tape: &mut Tape, out: &ForwardOutputs, m: usize, target: Option<&Tensor>) -> Result<Var> {
    if m >= out.z_bar.len() {
        return Err(Error::config(format!(
            "modality index {m} out of range for {} modalities",
            out.z_bar.len()
        )));
    }
    let rows = &out.available[m];
    if rows.is_empty() {
        return Err(Error::AbsentInBatch(m));
    }
    let target = match target {
        None => tape.detach(out.z_bar[m]),
        Some(t) => {
            if t.shape() != tape.value(out.z_bar[m]).shape() {
                return Err(Error::shape(format!(
                    "imputation target has shape {:?}, expected {:?}",
                    t.shape(),
                    tape.value(out.z_bar[m]).shape()
                )));
            }
            tape.var(t.clone())?
        }
    };
    let target = tape.select_rows(target, rows)?;
    let pred = tape.select_rows(out.z_hat[m], rows)?;
    let diff = tape.sub(target, pred)?;
    let sq = tape.mul_elem(diff, diff)?;
    let total = tape.sum(sq);
    tape.scale(total, 1.0 / rows.len() as f64)
}

#[derive(Debug, Clone)]
pub struct TotalLoss {
    pub total: Var,
    pub vib: Var,
    /// Per-modality imputation loss, `None` where the modality is absent
    /// from the batch.
    pub mse: Vec<Option<f64>>,
}

/// `vib + sum_m eta[m] * mse_m`, skipping modalities absent from the batch.
pub fn total_loss(
    tape: &mut Tape,
    out: &ForwardOutputs,
    labels: &[usize],
    gamma: f64,
    eta: &[f64],
    heads: Heads,
) -> Result<TotalLoss> {
    total_impl(tape, out, labels, gamma, eta, heads, None)
}

/// [`total_loss`] with fixed imputation targets, one `[batch, d]` tensor
/// per modality.
pub fn total_loss_against(
    tape: &mut Tape,
    out: &ForwardOutputs,
    labels: &[usize],
    gamma: f64,
    eta: &[f64],
    heads: Heads,
    targets: &[Tensor],
) -> Result<TotalLoss> {
    if targets.len() != out.z_bar.len() {
        return Err(Error::shape("one imputation target per modality is required"));
    }
    total_impl(tape, out, labels, gamma, eta, heads, Some(targets))
}

fn total_impl(
    tape: &mut Tape,
    out: &ForwardOutputs,
    labels: &[usize],
    gamma: f64,
    eta: &[f64],
    heads: Heads,
    targets: Option<&[Tensor]>,
) -> Result<TotalLoss> {
    let m_count = out.z_bar.len();
    if eta.len() != m_count {
        return Err(Error::config(format!(
            "eta has {} entries for {m_count} modalities",
            eta.len()
        )));
    }
    if let Some(bad) = eta.iter().find(|e| !(**e >= 0.0 && e.is_finite())) {
        return Err(Error::config(format!("eta entries must be non-negative, got {bad}")));
    }
    let vib = vib_loss(tape, out, labels, gamma, heads)?;
    let mut terms = vec![vib];
    let mut mse = Vec::with_capacity(m_count);
    for (m, &e) in eta.iter().enumerate() {
        match mse_against(tape, out, m, targets.map(|t| &t[m])) {
            Ok(l) => {
                mse.push(Some(tape.value(l).item()));
                terms.push(tape.scale(l, e)?);
            }
            Err(Error::AbsentInBatch(_)) => mse.push(None),
            Err(e) => return Err(e),
        }
    }
    let total = sum_scalars(tape, &terms)?;
    Ok(TotalLoss { total, vib, mse })
}

fn sum_scalars(tape: &mut Tape, terms: &[Var]) -> Result<Var> {
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = tape.add(acc, t)?;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::Presence;
    use crate::model::{forward_all, ArchConfig, ModelParams, NoiseSource};

    fn setup(presence: &Presence) -> (ModelParams, Vec<Tensor>) {
        let arch = ArchConfig {
            modality_dims: vec![2, 3, 2],
            n_classes: 3,
            repr_dim: 2,
            senc_hidden: 4,
            xenc_blocks: vec![3],
            dec_hidden: 3,
        };
        let model = ModelParams::init(&arch, 11).unwrap();
        let n = presence.n_samples();
        let feats = arch
            .modality_dims
            .iter()
            .map(|&d| {
                Tensor::new(vec![n, d], (0..n * d).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap()
            })
            .collect();
        (model, feats)
    }

    #[test]
    fn mse_hand_value() {
        let presence = Presence::new(3, vec![true, true, true, false, true, true]).unwrap();
        let (model, feats) = setup(&presence);
        let mut tape = Tape::new();
        let p = model.bind(&mut tape);
        let out = forward_all(&mut tape, &p, &model.arch, &feats, &presence, &NoiseSource::Zero).unwrap();
        let l = mse_loss(&mut tape, &out, 0).unwrap();
        let zb = tape.value(out.z_bar[0]);
        let zh = tape.value(out.z_hat[0]);
        let expect: f64 = zb.row(0).iter().zip(zh.row(0)).map(|(a, b)| (a - b) * (a - b)).sum();
        assert_eq!(tape.value(l).item(), expect);
    }

    #[test]
    fn mse_absent_column() {
        let presence = Presence::new(3, vec![false, true, true, false, true, false]).unwrap();
        let (model, feats) = setup(&presence);
        let mut tape = Tape::new();
        let p = model.bind(&mut tape);
        let out = forward_all(&mut tape, &p, &model.arch, &feats, &presence, &NoiseSource::Zero).unwrap();
        assert!(matches!(mse_loss(&mut tape, &out, 0), Err(Error::AbsentInBatch(0))));
        let t = total_loss(&mut tape, &out, &[0, 1], 0.5, &[1.0, 1.0, 1.0], Heads::All).unwrap();
        assert_eq!(t.mse[0], None);
        assert!(t.mse[1].is_some());
    }

    #[test]
    fn rejects_bad_gamma_and_eta() {
        let presence = Presence::all_present(2, 3);
        let (model, feats) = setup(&presence);
        let mut tape = Tape::new();
        let p = model.bind(&mut tape);
        let out = forward_all(&mut tape, &p, &model.arch, &feats, &presence, &NoiseSource::Zero).unwrap();
        assert!(matches!(vib_loss(&mut tape, &out, &[0, 1], 0.0, Heads::All), Err(Error::Config(_))));
        assert!(matches!(
            total_loss(&mut tape, &out, &[0, 1], 0.1, &[0.1, -0.1, 0.1], Heads::All),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn joint_only_drops_modality_heads() {
        let presence = Presence::all_present(3, 3);
        let (model, feats) = setup(&presence);
        let mut tape = Tape::new();
        let p = model.bind(&mut tape);
        let out = forward_all(&mut tape, &p, &model.arch, &feats, &presence, &NoiseSource::Zero).unwrap();
        let labels = [0, 1, 2];
        let all = vib_loss(&mut tape, &out, &labels, 1.0, Heads::All).unwrap();
        let joint = vib_loss(&mut tape, &out, &labels, 1.0, Heads::JointOnly).unwrap();
        let mut ces = 0.0;
        for &l in &out.logits {
            let ce = tape.softmax_cross_entropy(l, &labels).unwrap();
            ces += tape.value(ce).item();
        }
        let diff = tape.value(all).item() - tape.value(joint).item();
        assert!((diff - ces).abs() < 1e-12);
    }
}
