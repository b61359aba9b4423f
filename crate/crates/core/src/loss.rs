//! Composite objective: prediction BCE, heteroscedastic uncertainty term and
//! the KL regularizer.

use mpnp_autodiff::{Tape, Var};

use crate::error::Result;
use crate::model::{sigmoid, Forward};

/// Host-side values of one loss evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub pred: f64,
    pub unc: f64,
    pub kl: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn combine(pred: f64, unc: f64, kl: f64, lambda_unc: f64, lambda_kl: f64) -> Self {
        LossBreakdown {
            pred,
            unc,
            kl,
            total: pred + lambda_unc * unc + lambda_kl * kl,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.pred.is_finite() && self.unc.is_finite() && self.kl.is_finite() && self.total.is_finite()
    }
}

/// Stable `max(μ,0) − yμ + ln(1 + e^{−|μ|})`.
pub fn bce_with_logits(mu: f64, y: f64) -> f64 {
    mu.max(0.0) - y * mu + (-mu.abs()).exp().ln_1p()
}

/// `(σ(μ) − y)² e^{−s} + s`.
pub fn uncertainty_term(mu: f64, s: f64, y: f64) -> f64 {
    let e = sigmoid(mu) - y;
    e * e * (-s).exp() + s
}

/// `½ Σ (μ² + σ² − 1 − ln σ²)` for a diagonal Gaussian given by its log-variance.
pub fn gaussian_kl(mean: &[f64], log_var: &[f64]) -> f64 {
    0.5 * mean
        .iter()
        .zip(log_var)
        .map(|(m, lv)| m * m + lv.exp() - 1.0 - lv)
        .sum::<f64>()
}

/// Tape handles of the loss terms (all rank-0).
pub struct LossVars {
    pub pred: Var,
    pub unc: Var,
    pub kl: Var,
    pub total: Var,
}

/// Mean BCE over the batch; `labels` has one entry per logit.
pub fn bce_loss(tape: &mut Tape, mu: Var, labels: &[f64]) -> Result<Var> {
    let y = tape.constant(vec![labels.len()], labels.to_vec())?;
    // softplus(μ) − yμ equals the stable form above
    let sp = tape.softplus(mu);
    let ymu = tape.mul(y, mu)?;
    let per = tape.sub(sp, ymu)?;
    Ok(tape.mean(per)?)
}

/// Mean of `(σ(μ) − y)² e^{−s} + s`.
pub fn uncertainty_loss(tape: &mut Tape, mu: Var, log_var: Var, labels: &[f64]) -> Result<Var> {
    let y = tape.constant(vec![labels.len()], labels.to_vec())?;
    let p = tape.sigmoid(mu);
    let err = tape.sub(p, y)?;
    let sq = tape.square(err);
    let neg = tape.neg(log_var);
    let precision = tape.exp(neg);
    let weighted = tape.mul(sq, precision)?;
    let per = tape.add(weighted, log_var)?;
    Ok(tape.mean(per)?)
}

/// `pred + λ_unc·unc + λ_kl·(mean KL_i + mean KL_j)` for a recorded forward.
pub fn composite_loss(tape: &mut Tape, f: &Forward, labels: &[f64], lambda_unc: f64, lambda_kl: f64) -> Result<LossVars> {
    let pred = bce_loss(tape, f.mu, labels)?;
    let unc = uncertainty_loss(tape, f.mu, f.log_var, labels)?;
    let kl_l = tape.mean(f.kl_left)?;
    let kl_r = tape.mean(f.kl_right)?;
    let kl = tape.add(kl_l, kl_r)?;
    let a = tape.scale(unc, lambda_unc);
    let c = tape.scale(kl, lambda_kl);
    let total = tape.add(pred, a)?;
    let total = tape.add(total, c)?;
    Ok(LossVars { pred, unc, kl, total })
}

impl LossVars {
    pub fn values(&self, tape: &Tape) -> LossBreakdown {
        LossBreakdown {
            pred: tape.value(self.pred).item(),
            unc: tape.value(self.unc).item(),
            kl: tape.value(self.kl).item(),
            total: tape.value(self.total).item(),
        }
    }
}
