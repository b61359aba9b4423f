//! Pair-level heads: co-attention over scales, bilinear relation scoring and
//! the log-variance head. Every function handles `B` pairs at once; row `b`
//! of each argument belongs to pair `b`.

use mpnp_autodiff::{Tape, Var};

use crate::error::{CoreError, Result};

/// Output of [`co_attention`].
pub struct Fused {
    /// `B × d_h`.
    pub left: Var,
    pub right: Var,
    /// `B × K` weights over scales.
    pub alpha_left: Var,
    pub alpha_right: Var,
}

/// `A_kl = h_i⁽ᵏ⁾ᵀ W h_j⁽ˡ⁾`; `α_i = softmax_k(mean_l A_kl)`,
/// `α_j = softmax_l(mean_k A_kl)`; fused vectors are the α-weighted sums.
pub fn co_attention(tape: &mut Tape, left: &[Var], right: &[Var], w: Var) -> Result<Fused> {
    let k = left.len();
    if k != right.len() {
        return Err(CoreError::ScaleMismatch {
            left: k,
            right: right.len(),
        });
    }
    if k == 0 {
        return Err(CoreError::Config("co-attention needs at least one scale".into()));
    }
    let rows = tape.shape(left[0])[0];
    let projected: Vec<Var> = left.iter().map(|&h| tape.matmul(h, w)).collect::<mpnp_autodiff::Result<_>>()?;

    // affinity[k][l] is a length-B vector
    let mut affinity = Vec::with_capacity(k);
    for p in &projected {
        let mut row = Vec::with_capacity(k);
        for &hj in right {
            let prod = tape.mul(*p, hj)?;
            row.push(tape.sum_axis(prod, 1)?);
        }
        affinity.push(row);
    }
    let mean_of = |tape: &mut Tape, items: Vec<Var>| -> Result<Var> {
        let mut acc = items[0];
        for &v in &items[1..] {
            acc = tape.add(acc, v)?;
        }
        let acc = tape.scale(acc, 1.0 / items.len() as f64);
        Ok(tape.reshape(acc, &[rows, 1])?)
    };
    let mut row_means = Vec::with_capacity(k);
    let mut col_means = Vec::with_capacity(k);
    for a in 0..k {
        row_means.push(mean_of(tape, affinity[a].clone())?);
        col_means.push(mean_of(tape, affinity.iter().map(|r| r[a]).collect())?);
    }
    let row_logits = tape.concat(&row_means, 1)?;
    let col_logits = tape.concat(&col_means, 1)?;
    let alpha_left = tape.softmax(row_logits, 1)?;
    let alpha_right = tape.softmax(col_logits, 1)?;
    let fused_left = weighted_sum(tape, left, alpha_left)?;
    let fused_right = weighted_sum(tape, right, alpha_right)?;
    Ok(Fused {
        left: fused_left,
        right: fused_right,
        alpha_left,
        alpha_right,
    })
}

fn weighted_sum(tape: &mut Tape, scales: &[Var], alpha: Var) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for (k, &h) in scales.iter().enumerate() {
        let a = tape.slice_cols(alpha, k, 1)?;
        let term = tape.mul_col(h, a)?;
        acc = Some(match acc {
            None => term,
            Some(s) => tape.add(s, term)?,
        });
    }
    Ok(acc.expect("non-empty scales"))
}

/// `μ_b = h_iᵀ M_{r_b} h_j` with all relation matrices stacked row-wise in
/// `relations` (`R·d_h × d_h`).
pub fn rescal_score(tape: &mut Tape, left: Var, right: Var, relations: Var, relation_ids: &[usize]) -> Result<Var> {
    let (b, d) = (tape.shape(left)[0], tape.shape(left)[1]);
    let count = tape.shape(relations)[0] / d;
    if let Some(&bad) = relation_ids.iter().find(|&&r| r >= count) {
        return Err(CoreError::UnknownRelation { id: bad, count });
    }
    if relation_ids.len() != b {
        return Err(CoreError::Config(format!("{} relation ids for {b} pairs", relation_ids.len())));
    }
    // Row (b, p) of `stacked` is row p of M_{r_b}.
    let rows: Vec<usize> = relation_ids.iter().flat_map(|&r| (r * d)..(r * d + d)).collect();
    let stacked = tape.gather_rows(relations, &rows)?;
    let owner: Vec<usize> = (0..b).flat_map(|i| std::iter::repeat_n(i, d)).collect();
    let right_rep = tape.gather_rows(right, &owner)?;
    let prod = tape.mul(stacked, right_rep)?;
    let m_hj = tape.sum_axis(prod, 1)?;
    let m_hj = tape.reshape(m_hj, &[b, d])?;
    let prod = tape.mul(left, m_hj)?;
    Ok(tape.sum_axis(prod, 1)?)
}

/// `μ_b = h_iᵀ M h_j` with a single matrix for every pair.
pub fn shared_bilinear(tape: &mut Tape, left: Var, right: Var, m: Var) -> Result<Var> {
    let lm = tape.matmul(left, m)?;
    let prod = tape.mul(lm, right)?;
    Ok(tape.sum_axis(prod, 1)?)
}

#[derive(Clone, Copy, Debug)]
pub struct UncertaintyVars {
    /// `2d_h × d_h`.
    pub w1: Var,
    pub b1: Var,
    pub slope: Var,
    /// `d_h × 1`.
    pub w2: Var,
    pub b2: Var,
}

/// `s = W₂ PReLU(W₁[h_i; h_j] + b₁) + b₂`, one scalar per pair.
pub fn uncertainty_head(tape: &mut Tape, left: Var, right: Var, p: &UncertaintyVars) -> Result<Var> {
    let b = tape.shape(left)[0];
    let joined = tape.concat(&[left, right], 1)?;
    let hidden = tape.linear(joined, p.w1, Some(p.b1))?;
    let hidden = tape.prelu(hidden, p.slope)?;
    let out = tape.linear(hidden, p.w2, Some(p.b2))?;
    Ok(tape.reshape(out, &[b])?)
}

/// Unweighted mean of the scale vectors.
pub fn mean_of_scales(tape: &mut Tape, scales: &[Var]) -> Result<Var> {
    let mut acc = scales[0];
    for &v in &scales[1..] {
        acc = tape.add(acc, v)?;
    }
    Ok(tape.scale(acc, 1.0 / scales.len() as f64))
}
