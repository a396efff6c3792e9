//! Monte Carlo evaluation: speed-accuracy tradeoff curves, error rates,
//! hitting-time theory, Neyman-Pearson efficiency, NMSE and overshoots.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{invalid, Result, TandemError};
use crate::rng;
use crate::sprt::{check_exit, neyman_pearson, run_sprt_truncated, DecisionOutcome, Thresholds};
use crate::synthdata::GaussPairSpec;

fn check_labels(preds: &[u8], labels: &[u8]) -> Result<(usize, usize)> {
    if preds.len() != labels.len() {
        return Err(TandemError::DimensionMismatch { expected: labels.len(), got: preds.len() });
    }
    if labels.is_empty() {
        return Err(TandemError::Empty("evaluation set"));
    }
    let n1 = labels.iter().filter(|&&y| y == 1).count();
    let n0 = labels.len() - n1;
    if n0 == 0 || n1 == 0 {
        return Err(TandemError::SingleClass);
    }
    Ok((n0, n1))
}

/// Balanced accuracy with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Accuracy {
    pub value: f64,
    pub sem: f64,
}

/// `(TPR + TNR) / 2`.
pub fn balanced_accuracy(preds: &[u8], labels: &[u8]) -> Result<f64> {
    Ok(balanced_accuracy_sem(preds, labels)?.value)
}

/// Balanced accuracy and its binomial standard error.
pub fn balanced_accuracy_sem(preds: &[u8], labels: &[u8]) -> Result<Accuracy> {
    let (n0, n1) = check_labels(preds, labels)?;
    let tp = preds.iter().zip(labels).filter(|&(&p, &y)| y == 1 && p == 1).count();
    let tn = preds.iter().zip(labels).filter(|&(&p, &y)| y == 0 && p == 0).count();
    let tpr = tp as f64 / n1 as f64;
    let tnr = tn as f64 / n0 as f64;
    let var = tpr * (1.0 - tpr) / n1 as f64 + tnr * (1.0 - tnr) / n0 as f64;
    Ok(Accuracy { value: 0.5 * (tpr + tnr), sem: 0.5 * var.sqrt() })
}

/// One point of a speed-accuracy tradeoff curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SatPoint {
    pub a0: f64,
    pub a1: f64,
    pub mean_hitting_time: f64,
    pub balanced_accuracy: f64,
    pub n_trials: usize,
    /// Standard error of the balanced accuracy.
    pub sem: f64,
    pub hitting_time_sem: f64,
}

/// Symmetric threshold magnitudes `{0} ∪ logspace(-2, 2, 17)`.
pub fn default_threshold_grid() -> Vec<f64> {
    std::iter::once(0.0).chain((0..17).map(|i| 10f64.powf(-2.0 + 0.25 * i as f64))).collect()
}

/// Truncated SPRT decisions for every trajectory.
pub fn sprt_decisions<T: AsRef<[f64]> + Sync>(llrs: &[T], thr: Thresholds, horizon: usize) -> Result<Vec<DecisionOutcome>> {
    llrs.par_iter().map(|l| run_sprt_truncated(l.as_ref(), thr, horizon)).collect()
}

fn mean_sem(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    if n == 0.0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.clone().sum::<f64>() / n;
    if n < 2.0 {
        return (mean, 0.0);
    }
    let var = xs.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// One [`SatPoint`] per threshold pair, truncating every run at `horizon`.
pub fn sat_curve<T: AsRef<[f64]> + Sync>(
    llrs: &[T],
    labels: &[u8],
    thresholds: &[Thresholds],
    horizon: usize,
) -> Result<Vec<SatPoint>> {
    if thresholds.is_empty() {
        return Err(TandemError::Empty("threshold list"));
    }
    if llrs.len() != labels.len() {
        return Err(TandemError::DimensionMismatch { expected: labels.len(), got: llrs.len() });
    }
    thresholds
        .iter()
        .map(|&thr| {
            let out = sprt_decisions(llrs, thr, horizon)?;
            let preds: Vec<u8> = out.iter().map(|d| d.label).collect();
            let acc = balanced_accuracy_sem(&preds, labels)?;
            let (mht, mht_sem) = mean_sem(out.iter().map(|d| d.tau as f64));
            Ok(SatPoint {
                a0: thr.a0,
                a1: thr.a1,
                mean_hitting_time: mht,
                balanced_accuracy: acc.value,
                n_trials: out.len(),
                sem: acc.sem,
                hitting_time_sem: mht_sem,
            })
        })
        .collect()
}

/// Linear interpolation of `(mean_hitting_time, balanced_accuracy, sem)` at
/// the requested hitting times. Points are sorted by hitting time; targets
/// outside the covered range are skipped.
pub fn interpolate_sat(points: &[SatPoint], targets: &[f64]) -> Vec<(f64, f64, f64)> {
    let mut pts: Vec<&SatPoint> = points.iter().collect();
    pts.sort_by(|a, b| a.mean_hitting_time.total_cmp(&b.mean_hitting_time));
    targets
        .iter()
        .filter_map(|&t| {
            let j = pts.iter().position(|p| p.mean_hitting_time >= t)?;
            let hi = pts[j];
            if hi.mean_hitting_time == t || j == 0 {
                return (hi.mean_hitting_time == t).then_some((t, hi.balanced_accuracy, hi.sem));
            }
            let lo = pts[j - 1];
            let w = (t - lo.mean_hitting_time) / (hi.mean_hitting_time - lo.mean_hitting_time);
            Some((
                t,
                lo.balanced_accuracy + w * (hi.balanced_accuracy - lo.balanced_accuracy),
                lo.sem.max(hi.sem),
            ))
        })
        .collect()
}

/// Balanced accuracy of the fixed-sample test at `n` frames with threshold `h`.
pub fn np_accuracy<T: AsRef<[f64]>>(llrs: &[T], labels: &[u8], n: usize, h: f64) -> Result<Accuracy> {
    let preds: Vec<u8> = llrs.iter().map(|l| neyman_pearson(l.as_ref(), n, h)).collect::<Result<_>>()?;
    balanced_accuracy_sem(&preds, labels)
}

/// Empirical false positive (`alpha0`) and false negative (`alpha1`) rates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorRates {
    pub alpha0: f64,
    pub alpha1: f64,
    pub sem0: f64,
    pub sem1: f64,
    pub n0: usize,
    pub n1: usize,
}

pub fn error_rates(preds: &[u8], labels: &[u8]) -> Result<ErrorRates> {
    let (n0, n1) = check_labels(preds, labels)?;
    let fp = preds.iter().zip(labels).filter(|&(&p, &y)| y == 0 && p == 1).count();
    let fneg = preds.iter().zip(labels).filter(|&(&p, &y)| y == 1 && p == 0).count();
    let a0 = fp as f64 / n0 as f64;
    let a1 = fneg as f64 / n1 as f64;
    Ok(ErrorRates {
        alpha0: a0,
        alpha1: a1,
        sem0: (a0 * (1.0 - a0) / n0 as f64).sqrt(),
        sem1: (a1 * (1.0 - a1) / n1 as f64).sqrt(),
        n0,
        n1,
    })
}

/// Outcome of checking Wald's error inequalities on measured rates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaldReport {
    /// `alpha1 <= exp(-a0) (1 - alpha0)` within `3 SEM`.
    pub lower_bound_holds: bool,
    /// `alpha0 <= exp(-a1) (1 - alpha1)` within `3 SEM`.
    pub upper_bound_holds: bool,
    pub bound_alpha1: f64,
    pub bound_alpha0: f64,
    /// `alpha0 exp(a1)`, which should not exceed 1.
    pub asymptotic_ratio: f64,
    pub asymptotic_ratio_sem: f64,
}

pub fn wald_bound_check(rates: &ErrorRates, thr: Thresholds) -> WaldReport {
    let bound_alpha1 = (-thr.a0).exp() * (1.0 - rates.alpha0);
    let bound_alpha0 = (-thr.a1).exp() * (1.0 - rates.alpha1);
    // slack also covers the noise in the bound's own (1 - alpha) factor
    let slack1 = 3.0 * (rates.sem1 + (-thr.a0).exp() * rates.sem0);
    let slack0 = 3.0 * (rates.sem0 + (-thr.a1).exp() * rates.sem1);
    WaldReport {
        lower_bound_holds: rates.alpha1 <= bound_alpha1 + slack1,
        upper_bound_holds: rates.alpha0 <= bound_alpha0 + slack0,
        bound_alpha1,
        bound_alpha0,
        asymptotic_ratio: rates.alpha0 * thr.a1.exp(),
        asymptotic_ratio_sem: rates.sem0 * thr.a1.exp(),
    }
}

/// `gamma(x, y) = (1-x) log((1-x)/y) - x log((1-y)/x)`.
pub fn gamma(x: f64, y: f64) -> f64 {
    (1.0 - x) * ((1.0 - x) / y).ln() - x * ((1.0 - y) / x).ln()
}

/// Mean hitting times `(E0[tau], E1[tau])` of the SPRT ignoring overshoots.
pub fn mean_hitting_time_theory(alpha0: f64, alpha1: f64, i0: f64, i1: f64) -> Result<(f64, f64)> {
    let open = |a: f64| a > 0.0 && a < 1.0;
    if !open(alpha0) || !open(alpha1) {
        return Err(invalid(format!("error rates must lie in (0,1), got {alpha0}, {alpha1}")));
    }
    if !(i0 > 0.0 && i1 > 0.0) {
        return Err(invalid(format!("KL divergences must be > 0, got {i0}, {i1}")));
    }
    Ok((gamma(alpha0, alpha1) / i0, gamma(alpha1, alpha0) / i1))
}

/// `E1[tau]` including the measured mean overshoots `E1[kappa1 | upper]`
/// and `E1[kappa0 | lower]`.
pub fn mean_hitting_time_with_overshoot(alpha1: f64, thr: Thresholds, kappa1: f64, kappa0: f64, i1: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha1) || !(i1 > 0.0) {
        return Err(invalid(format!("need alpha1 in [0,1] and I1 > 0, got {alpha1}, {i1}")));
    }
    Ok(((1.0 - alpha1) * (thr.a1 + kappa1) - alpha1 * (thr.a0 + kappa0)) / i1)
}

/// A completed Monte Carlo trial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Trial {
    pub label: u8,
    pub outcome: DecisionOutcome,
}

/// Stream i.i.d. Gaussian frames into the analytic-LLR SPRT without storing
/// trajectories. Trial `i` has label `i % 2` and its own random substream;
/// runs still open after `max_steps` frames are forced.
pub fn simulate_iid_sprt(spec: &GaussPairSpec, thr: Thresholds, n_trials: usize, max_steps: usize, seed: u64) -> Result<Vec<Trial>> {
    spec.validate()?;
    if max_steps == 0 {
        return Err(invalid("max_steps must be >= 1"));
    }
    let d = spec.dim();
    let trials = (0..n_trials)
        .into_par_iter()
        .map(|i| {
            let label = (i % 2) as u8;
            let mut r = rng::substream(seed, i as u64);
            let mu = spec.mean(label);
            let mut x = vec![0.0; d];
            let mut llr = 0.0;
            for t in 1..=max_steps {
                for (xi, m) in x.iter_mut().zip(mu) {
                    let z: f64 = StandardNormal.sample(&mut r);
                    *xi = m + z;
                }
                llr += spec.llr_increment(&x);
                if let Some(outcome) = check_exit(llr, t, thr) {
                    return Trial { label, outcome };
                }
            }
            let outcome = DecisionOutcome {
                label: u8::from(llr >= 0.0),
                tau: max_steps,
                terminal_llr: llr,
                overshoot: 0.0,
                forced: true,
            };
            Trial { label, outcome }
        })
        .collect();
    Ok(trials)
}

/// Per-class mean stopping times with SEMs, `[(mean0, sem0), (mean1, sem1)]`.
pub fn mean_tau_by_class(trials: &[Trial]) -> [(f64, f64); 2] {
    [0u8, 1].map(|y| mean_sem(trials.iter().filter(move |t| t.label == y).map(|t| t.outcome.tau as f64)))
}

/// Error rates of a set of trials.
pub fn trial_error_rates(trials: &[Trial]) -> Result<ErrorRates> {
    let preds: Vec<u8> = trials.iter().map(|t| t.outcome.label).collect();
    let labels: Vec<u8> = trials.iter().map(|t| t.label).collect();
    error_rates(&preds, &labels)
}

/// Fixed sample size of the Gaussian Neyman-Pearson test meeting false
/// positive rate `alpha` and false negative rate `beta`, rounded up.
///
/// Under class `y` the LLR after `n` frames is `N(±nI, 2nI)`; solving the two
/// quantile conditions gives `n = (z_{1-alpha} + z_{1-beta})^2 / (2I)`.
pub fn np_sample_size(spec: &GaussPairSpec, alpha: f64, beta: f64) -> Result<usize> {
    spec.validate()?;
    if !(alpha > 0.0 && alpha < 0.5 && beta > 0.0 && beta < 0.5) {
        return Err(invalid(format!("error rates must lie in (0, 0.5), got alpha={alpha}, beta={beta}")));
    }
    let std = Normal::standard();
    let z = std.inverse_cdf(1.0 - alpha) + std.inverse_cdf(1.0 - beta);
    let n = (z * z / (2.0 * spec.kl())).ceil();
    if !n.is_finite() || n > 1e12 {
        return Err(TandemError::Infeasible { size: u128::MAX, cap: 1_000_000_000_000 });
    }
    Ok((n as usize).max(1))
}

/// SPRT-versus-NP sample efficiency at matched error rates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NpEfficiency {
    pub alpha: f64,
    pub beta: f64,
    pub np_n: usize,
    pub sprt_mean_tau_0: f64,
    pub sprt_mean_tau_1: f64,
    pub ratio_0: f64,
    pub ratio_1: f64,
    pub sem_0: f64,
    pub sem_1: f64,
    /// Measured SPRT error rates at Wald's thresholds.
    pub rates: ErrorRates,
}

/// Run the analytic-LLR SPRT at Wald's thresholds for `(alpha, beta)` and
/// compare its mean stopping times with the NP sample size. SEMs are those of the ratios.
pub fn np_efficiency(spec: &GaussPairSpec, alpha: f64, beta: f64, n_trials: usize, seed: u64) -> Result<NpEfficiency> {
    let n = np_sample_size(spec, alpha, beta)?;
    let thr = crate::sprt::thresholds_from_error_rates(alpha, beta)?;
    let trials = simulate_iid_sprt(spec, thr, n_trials, 100 * n, seed)?;
    let [(m0, s0), (m1, s1)] = mean_tau_by_class(&trials);
    let nf = n as f64;
    Ok(NpEfficiency {
        alpha,
        beta,
        np_n: n,
        sprt_mean_tau_0: m0,
        sprt_mean_tau_1: m1,
        ratio_0: m0 / nf,
        ratio_1: m1 / nf,
        sem_0: s0 / nf,
        sem_1: s1 / nf,
        rates: trial_error_rates(&trials)?,
    })
}

/// Normalised mean squared error between two positive ratio vectors:
/// `mean_i (est_i / sum(est) - truth_i / sum(truth))^2`.
pub fn nmse(estimated: &[f64], truth: &[f64]) -> Result<f64> {
    if estimated.len() != truth.len() {
        return Err(TandemError::DimensionMismatch { expected: truth.len(), got: estimated.len() });
    }
    if truth.is_empty() {
        return Err(TandemError::Empty("ratio vector"));
    }
    let se: f64 = estimated.iter().sum();
    let st: f64 = truth.iter().sum();
    if !(se > 0.0 && st > 0.0 && se.is_finite() && st.is_finite()) {
        return Err(invalid(format!("ratio sums must be positive and finite, got {se} and {st}")));
    }
    let sq: f64 = estimated.iter().zip(truth).map(|(e, t)| (e / se - t / st).powi(2)).sum();
    Ok(sq / truth.len() as f64)
}

/// Overshoot summary over unforced decisions.
#[derive(Debug, Clone, PartialEq)]
pub struct OvershootStats {
    /// `E[kappa0 | lower threshold hit]`.
    pub mean_kappa0: f64,
    /// `E[kappa1 | upper threshold hit]`.
    pub mean_kappa1: f64,
    pub n_lower: usize,
    pub n_upper: usize,
    pub max: f64,
    /// Histogram edges and counts per side, `bins` equal-width bins on `[0, max]`.
    pub edges: Vec<f64>,
    pub counts0: Vec<usize>,
    pub counts1: Vec<usize>,
}

pub fn overshoot_stats(outcomes: &[DecisionOutcome], bins: usize) -> Result<OvershootStats> {
    let hits: Vec<&DecisionOutcome> = outcomes.iter().filter(|d| !d.forced).collect();
    if hits.is_empty() {
        return Err(TandemError::Empty("unforced outcomes"));
    }
    let bins = bins.max(1);
    let side = |y: u8| hits.iter().filter(move |d| d.label == y).map(|d| d.overshoot);
    let mean = |y: u8| {
        let n = side(y).count();
        if n == 0 {
            f64::NAN
        } else {
            side(y).sum::<f64>() / n as f64
        }
    };
    let max = hits.iter().map(|d| d.overshoot).fold(0.0, f64::max);
    let width = if max > 0.0 { max / bins as f64 } else { 1.0 };
    let edges = (0..=bins).map(|i| i as f64 * width).collect();
    let hist = |y: u8| {
        let mut c = vec![0usize; bins];
        for k in side(y) {
            c[((k / width) as usize).min(bins - 1)] += 1;
        }
        c
    };
    Ok(OvershootStats {
        mean_kappa0: mean(0),
        mean_kappa1: mean(1),
        n_lower: side(0).count(),
        n_upper: side(1).count(),
        max,
        edges,
        counts0: hist(0),
        counts1: hist(1),
    })
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(TandemError::DimensionMismatch { expected: xs.len(), got: ys.len() });
    }
    if xs.len() < 2 {
        return Err(invalid("need at least two points"));
    }
    let (rx, ry) = (ranks(xs), ranks(ys));
    let m = (xs.len() as f64 + 1.0) / 2.0;
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - m) * (b - m)).sum();
    let vx: f64 = rx.iter().map(|a| (a - m).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - m).powi(2)).sum();
    Ok(cov / (vx * vy).sqrt())
}
