//! Training losses over LLR trajectories and posterior tables.
//!
//! All three losses return their value together with exact gradients: LLLR and
//! KLIEP with respect to each `lambda_t`, the multiplet cross-entropy with
//! respect to each table entry. Reductions run sequentially in batch order so
//! results do not depend on scheduling.

use crate::error::{invalid, Result, TandemError};
use crate::tandem::{PosteriorTable, TableGrad};

/// `log(1e5 / 1e-5)`: clamp matching ratio bounds of `1e-5 .. 1e5` on numerator and denominator.
pub const DEFAULT_KLIEP_CLAMP: f64 = 23.025_850_929_940_457;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Relative weights of the three loss components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lllr: f64,
    pub multiplet: f64,
    pub kliep: f64,
}

impl LossWeights {
    /// `L_total = L_LLR + L_multiplet`.
    pub const DEFAULT: LossWeights = LossWeights { lllr: 1.0, multiplet: 1.0, kliep: 0.0 };
    pub const LLLR_ONLY: LossWeights = LossWeights { lllr: 1.0, multiplet: 0.0, kliep: 0.0 };
    pub const MULTIPLET_ONLY: LossWeights = LossWeights { lllr: 0.0, multiplet: 1.0, kliep: 0.0 };
    pub const KLIEP_MULTIPLET: LossWeights = LossWeights { lllr: 0.0, multiplet: 1.0, kliep: 1.0 };

    pub fn validate(&self) -> Result<()> {
        let w = [self.lllr, self.multiplet, self.kliep];
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(invalid(format!("loss weights must be finite and >= 0, got {w:?}")));
        }
        if w.iter().all(|&v| v == 0.0) {
            return Err(invalid("at least one loss weight must be positive"));
        }
        Ok(())
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::DEFAULT
    }
}

/// A loss over LLR values with `d loss / d lambda` per sample and timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct LlrLoss {
    pub value: f64,
    pub grads: Vec<Vec<f64>>,
}

/// Multiplet cross-entropy with per-k components and table-entry gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct MultipletLoss {
    pub value: f64,
    /// `per_k[k-1]` is the k-let term.
    pub per_k: Vec<f64>,
    pub grads: Vec<TableGrad>,
}

fn check_batch<T: AsRef<[f64]>>(llrs: &[T], labels: &[u8]) -> Result<usize> {
    if llrs.is_empty() {
        return Err(TandemError::Empty("batch"));
    }
    if llrs.len() != labels.len() {
        return Err(TandemError::DimensionMismatch { expected: llrs.len(), got: labels.len() });
    }
    let t_len = llrs[0].as_ref().len();
    if t_len == 0 {
        return Err(TandemError::Empty("LLR trajectory"));
    }
    if let Some(bad) = llrs.iter().find(|l| l.as_ref().len() != t_len) {
        return Err(TandemError::DimensionMismatch { expected: t_len, got: bad.as_ref().len() });
    }
    if let Some(&y) = labels.iter().find(|&&y| y > 1) {
        return Err(invalid(format!("label {y} is not binary")));
    }
    Ok(t_len)
}

/// `(1/(M T)) sum_i sum_t |y_i - sigmoid(lambda_t^(i))|`.
pub fn lllr<T: AsRef<[f64]>>(llrs: &[T], labels: &[u8]) -> Result<LlrLoss> {
    let t_len = check_batch(llrs, labels)?;
    let scale = 1.0 / (llrs.len() * t_len) as f64;
    let mut value = 0.0;
    let grads = llrs
        .iter()
        .zip(labels)
        .map(|(l, &y)| {
            l.as_ref()
                .iter()
                .map(|&lam| {
                    let p = sigmoid(lam);
                    let dp = p * (1.0 - p);
                    if y == 1 {
                        value += sigmoid(-lam);
                        -dp * scale
                    } else {
                        value += p;
                        dp * scale
                    }
                })
                .collect()
        })
        .collect();
    Ok(LlrLoss { value: value * scale, grads })
}

/// Sum over `k = 1..=N+1` of the k-let cross-entropy, each averaged over the
/// `T - N` windows `t = k..=T-(N+1-k)` and the batch.
pub fn multiplet_ce(tables: &[PosteriorTable], labels: &[u8]) -> Result<MultipletLoss> {
    let first = tables.first().ok_or(TandemError::Empty("batch"))?;
    if tables.len() != labels.len() {
        return Err(TandemError::DimensionMismatch { expected: tables.len(), got: labels.len() });
    }
    let (n, t_len) = (first.order(), first.len());
    if t_len <= n {
        return Err(invalid(format!("multiplet loss needs T > N, got T={t_len}, N={n}")));
    }
    if let Some(bad) = tables.iter().find(|t| t.order() != n || t.len() != t_len) {
        return Err(TandemError::Structural(format!(
            "table (N={}, T={}) does not match batch (N={n}, T={t_len})",
            bad.order(),
            bad.len()
        )));
    }
    let scale = 1.0 / (tables.len() * (t_len - n)) as f64;
    let mut per_k = vec![0.0; n + 1];
    let mut grads = Vec::with_capacity(tables.len());
    for (tab, &y) in tables.iter().zip(labels) {
        if y > 1 {
            return Err(invalid(format!("label {y} is not binary")));
        }
        let mut g = TableGrad::zeros_like(tab);
        for k in 1..=n + 1 {
            let row = tab.row(k);
            let grow = &mut g.rows[k - 1];
            for t in k..=t_len - (n + 1 - k) {
                let logit = row[t - k];
                // -log p(y | window) from the log-odds, via softplus
                let (loss, d) = if y == 1 {
                    (softplus(-logit), sigmoid(logit) - 1.0)
                } else {
                    (softplus(logit), sigmoid(logit))
                };
                per_k[k - 1] += loss;
                grow[t - k] = d * scale;
            }
        }
        grads.push(g);
    }
    per_k.iter_mut().for_each(|v| *v *= scale);
    Ok(MultipletLoss { value: per_k.iter().sum(), per_k, grads })
}

/// Symmetrised KLIEP objective on clamped LLRs, averaged over timestamps:
/// `(1/T) sum_t [ (1/M1) sum_{y=1} -clamp(lambda) + (1/M0) sum_{y=0} clamp(lambda) ]`.
pub fn kliep_sym_bounded<T: AsRef<[f64]>>(llrs: &[T], labels: &[u8], clamp: f64) -> Result<LlrLoss> {
    let t_len = check_batch(llrs, labels)?;
    if !(clamp > 0.0) {
        return Err(invalid(format!("clamp must be positive, got {clamp}")));
    }
    let m1 = labels.iter().filter(|&&y| y == 1).count();
    let m0 = labels.len() - m1;
    if m1 == 0 || m0 == 0 {
        return Err(TandemError::SingleClass);
    }
    let mut value = 0.0;
    let grads = llrs
        .iter()
        .zip(labels)
        .map(|(l, &y)| {
            let w = if y == 1 { -1.0 / m1 as f64 } else { 1.0 / m0 as f64 } / t_len as f64;
            l.as_ref()
                .iter()
                .map(|&lam| {
                    value += w * lam.clamp(-clamp, clamp);
                    if lam.abs() < clamp {
                        w
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    Ok(LlrLoss { value, grads })
}

/// Enabled loss components, each already evaluated on the same batch.
#[derive(Debug, Clone, Default)]
pub struct LossComponents {
    pub lllr: Option<LlrLoss>,
    pub multiplet: Option<MultipletLoss>,
    pub kliep: Option<LlrLoss>,
}

/// Weighted total and the combined gradient handle.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub lllr: f64,
    pub multiplet: f64,
    pub multiplet_per_k: Vec<f64>,
    pub kliep: f64,
    /// Weighted `d total / d lambda` per sample (empty when no LLR loss is enabled).
    pub llr_grads: Vec<Vec<f64>>,
    /// Weighted `d total / d L[k][s]` per sample from the multiplet term.
    pub table_grads: Vec<TableGrad>,
}

fn add_scaled(dst: &mut Vec<Vec<f64>>, src: &[Vec<f64>], w: f64) {
    if dst.is_empty() {
        *dst = src.iter().map(|r| r.iter().map(|v| v * w).collect()).collect();
    } else {
        for (a, b) in dst.iter_mut().zip(src) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += w * y;
            }
        }
    }
}

/// Weighted sum of the components enabled by `weights`.
pub fn total_loss(components: &LossComponents, weights: LossWeights) -> Result<LossBreakdown> {
    weights.validate()?;
    let mut out = LossBreakdown {
        total: 0.0,
        lllr: 0.0,
        multiplet: 0.0,
        multiplet_per_k: Vec::new(),
        kliep: 0.0,
        llr_grads: Vec::new(),
        table_grads: Vec::new(),
    };
    let missing = |name: &str| invalid(format!("{name} weight is positive but the component was not evaluated"));
    if weights.lllr > 0.0 {
        let c = components.lllr.as_ref().ok_or_else(|| missing("lllr"))?;
        out.lllr = c.value;
        out.total += weights.lllr * c.value;
        add_scaled(&mut out.llr_grads, &c.grads, weights.lllr);
    }
    if weights.kliep > 0.0 {
        let c = components.kliep.as_ref().ok_or_else(|| missing("kliep"))?;
        out.kliep = c.value;
        out.total += weights.kliep * c.value;
        add_scaled(&mut out.llr_grads, &c.grads, weights.kliep);
    }
    if weights.multiplet > 0.0 {
        let c = components.multiplet.as_ref().ok_or_else(|| missing("multiplet"))?;
        out.multiplet = c.value;
        out.multiplet_per_k = c.per_k.clone();
        out.total += weights.multiplet * c.value;
        out.table_grads = c
            .grads
            .iter()
            .map(|g| TableGrad {
                prior: g.prior * weights.multiplet,
                rows: g.rows.iter().map(|r| r.iter().map(|v| v * weights.multiplet).collect()).collect(),
            })
            .collect();
    }
    Ok(out)
}

/// Evaluate every component enabled by `weights` on one batch and combine them.
///
/// KLIEP needs both classes; on a single-class batch it contributes nothing.
pub fn evaluate<T: AsRef<[f64]>>(
    tables: &[PosteriorTable],
    llrs: &[T],
    labels: &[u8],
    weights: LossWeights,
    clamp: f64,
) -> Result<LossBreakdown> {
    weights.validate()?;
    let mut c = LossComponents::default();
    if weights.lllr > 0.0 {
        c.lllr = Some(lllr(llrs, labels)?);
    }
    if weights.multiplet > 0.0 {
        c.multiplet = Some(multiplet_ce(tables, labels)?);
    }
    let mut w = weights;
    if weights.kliep > 0.0 {
        match kliep_sym_bounded(llrs, labels, clamp) {
            Ok(k) => c.kliep = Some(k),
            Err(TandemError::SingleClass) => w.kliep = 0.0,
            Err(e) => return Err(e),
        }
    }
    if w.lllr == 0.0 && w.multiplet == 0.0 && w.kliep == 0.0 {
        // kliep-only weights on a single-class batch: nothing to learn from
        let zeros = llrs.iter().map(|l| vec![0.0; l.as_ref().len()]).collect();
        return Ok(LossBreakdown {
            total: 0.0,
            lllr: 0.0,
            multiplet: 0.0,
            multiplet_per_k: Vec::new(),
            kliep: 0.0,
            llr_grads: zeros,
            table_grads: Vec::new(),
        });
    }
    total_loss(&c, w)
}
