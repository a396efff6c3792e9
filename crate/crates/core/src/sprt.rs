//! Sequential probability ratio test and the fixed-sample Neyman-Pearson test.

use crate::error::{invalid, Result, TandemError};

/// Magnitudes of the lower (`-a0`) and upper (`a1`) decision thresholds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    pub a0: f64,
    pub a1: f64,
}

impl Thresholds {
    pub fn new(a0: f64, a1: f64) -> Result<Self> {
        if !(a0 >= 0.0 && a1 >= 0.0) {
            return Err(invalid(format!("thresholds must be >= 0, got a0={a0}, a1={a1}")));
        }
        Ok(Self { a0, a1 })
    }

    pub fn symmetric(a: f64) -> Result<Self> {
        Self::new(a, a)
    }
}

/// Wald's thresholds for target error rates: `a1 = log((1-beta)/alpha)`,
/// `a0 = log((1-alpha)/beta)`.
pub fn thresholds_from_error_rates(alpha: f64, beta: f64) -> Result<Thresholds> {
    if !(alpha > 0.0 && alpha < 1.0 && beta > 0.0 && beta < 1.0) {
        return Err(invalid(format!("error rates must lie in (0,1), got alpha={alpha}, beta={beta}")));
    }
    if alpha + beta >= 1.0 {
        return Err(invalid(format!("alpha + beta must be < 1, got {}", alpha + beta)));
    }
    Thresholds::new(((1.0 - alpha) / beta).ln(), ((1.0 - beta) / alpha).ln())
}

/// A terminal SPRT decision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecisionOutcome {
    pub label: u8,
    /// Stopping time, 1-based.
    pub tau: usize,
    pub terminal_llr: f64,
    /// Threshold overshoot; 0 for forced decisions.
    pub overshoot: f64,
    pub forced: bool,
}

/// Result of an untruncated run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SprtState {
    Decided(DecisionOutcome),
    /// No threshold was crossed within the trajectory.
    Running,
}

impl SprtState {
    pub fn decided(self) -> Option<DecisionOutcome> {
        match self {
            SprtState::Decided(d) => Some(d),
            SprtState::Running => None,
        }
    }
}

/// Check a single LLR value against the thresholds; upper wins ties at `a0 = a1 = 0`.
pub fn check_exit(llr: f64, t: usize, thr: Thresholds) -> Option<DecisionOutcome> {
    if llr >= thr.a1 {
        Some(DecisionOutcome { label: 1, tau: t, terminal_llr: llr, overshoot: llr - thr.a1, forced: false })
    } else if llr <= -thr.a0 {
        Some(DecisionOutcome { label: 0, tau: t, terminal_llr: llr, overshoot: -(llr + thr.a0), forced: false })
    } else {
        None
    }
}

fn validate(llr: &[f64]) -> Result<()> {
    if llr.is_empty() {
        return Err(TandemError::Empty("LLR trajectory"));
    }
    if let Some(t) = llr.iter().position(|v| v.is_nan()) {
        return Err(TandemError::NonFinite(format!("NaN LLR at t={}", t + 1)));
    }
    Ok(())
}

/// Stop at the first `t` with `lambda_t` outside `(-a0, a1)`.
pub fn run_sprt(llr: &[f64], thr: Thresholds) -> Result<SprtState> {
    validate(llr)?;
    Ok(llr
        .iter()
        .enumerate()
        .find_map(|(i, &v)| check_exit(v, i + 1, thr))
        .map_or(SprtState::Running, SprtState::Decided))
}

/// SPRT over the first `horizon` frames, forcing a decision at the horizon
/// (`label = 1` iff `lambda_T >= 0`) when no threshold was crossed.
pub fn run_sprt_truncated(llr: &[f64], thr: Thresholds, horizon: usize) -> Result<DecisionOutcome> {
    if horizon == 0 || horizon > llr.len() {
        return Err(invalid(format!("horizon {horizon} outside 1..={}", llr.len())));
    }
    let llr = &llr[..horizon];
    match run_sprt(llr, thr)? {
        SprtState::Decided(d) => Ok(d),
        SprtState::Running => {
            let last = llr[horizon - 1];
            Ok(DecisionOutcome {
                label: u8::from(last >= 0.0),
                tau: horizon,
                terminal_llr: last,
                overshoot: 0.0,
                forced: true,
            })
        }
    }
}

/// Fixed-sample test on `lambda_n`: label 1 iff `lambda_n >= h`.
pub fn neyman_pearson(llr: &[f64], n: usize, h: f64) -> Result<u8> {
    if n == 0 || n > llr.len() {
        return Err(invalid(format!("sample count {n} outside 1..={}", llr.len())));
    }
    let v = llr[n - 1];
    if v.is_nan() {
        return Err(TandemError::NonFinite(format!("NaN LLR at t={n}")));
    }
    Ok(u8::from(v >= h))
}
