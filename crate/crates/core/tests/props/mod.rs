//! Property checks shared by the property test target and the acceptance suite.
//!
//! Every generative property runs under a deterministic proptest runner so a
//! pass or failure is reproducible. Statistical properties use fixed seeds and
//! SEM-based slack.

#![allow(dead_code)]

use std::collections::HashMap;

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};
use rand::Rng;

use tandem_core::eval::{self, nmse, spearman};
use tandem_core::losses::{self, LossWeights};
use tandem_core::nnet::{batch_gradient, train_with_observer, AdamConfig, RecurrentEstimator, TrainConfig};
use tandem_core::rng;
use tandem_core::sprt::{run_sprt_truncated, Thresholds};
use tandem_core::synthdata::{
    analytic_llr_ar1, analytic_llr_iid, brute_force_llr_discrete, exact_posteriors_discrete, gen_ar1_gauss,
    gen_discrete_markov, gen_iid_gauss, gen_ramp_gauss, Ar1Spec, DiscreteMarkovSpec, GaussPairSpec, LabeledSequence,
    DEFAULT_ENUMERATION_CAP,
};
use tandem_core::tandem::{tandem_llr, PosteriorTable};

pub const CASES: u32 = 100;

fn runner(cases: u32) -> TestRunner {
    let cfg = Config { cases, failure_persistence: None, ..Config::default() };
    TestRunner::new_with_rng(cfg, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

fn check<S: Strategy>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    runner(cases).run(&strategy, test).map_err(|e| e.to_string())
}

fn fail(msg: String) -> TestCaseError {
    TestCaseError::fail(msg)
}

fn ok<T, E: std::fmt::Display>(r: std::result::Result<T, E>) -> Result<T, TestCaseError> {
    r.map_err(|e| fail(e.to_string()))
}

/// A random discrete chain spec with a sequence drawn from it.
#[derive(Debug, Clone)]
pub struct ChainCase {
    pub spec: DiscreteMarkovSpec,
    pub seq: LabeledSequence,
}

pub fn chain_case(order: usize, alphabet: usize, t_len: usize, prior: f64, seed: u64) -> ChainCase {
    let spec = DiscreteMarkovSpec::random(order, alphabet, prior, &mut rng::stream(seed)).unwrap();
    let seq = gen_discrete_markov(&spec, 1, t_len, seed ^ 0xA5A5).unwrap().remove(0);
    ChainCase { spec, seq }
}

fn chain_strategy() -> impl Strategy<Value = ChainCase> {
    (0usize..=3, 2usize..=3, 0.1f64..0.9, any::<u64>())
        .prop_flat_map(|(order, alphabet, prior, seed)| (Just((order, alphabet, prior, seed)), order.max(1)..=8usize))
        .prop_map(|((order, alphabet, prior, seed), t_len)| chain_case(order, alphabet, t_len, prior, seed))
}

fn random_table(order: usize, len: usize, prior: f64, seed: u64) -> PosteriorTable {
    let mut r = rng::stream(seed);
    let rows = (1..=order + 1).map(|k| (k..=len).map(|_| r.random_range(-5.0..5.0)).collect()).collect();
    PosteriorTable::from_rows(order, len, prior, rows).unwrap()
}

fn table_strategy() -> impl Strategy<Value = PosteriorTable> {
    (0usize..=4, 1usize..=12, -3.0f64..3.0, any::<u64>()).prop_map(|(n, t, p, s)| random_table(n, t, p, s))
}

fn traj_strategy() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, 1..40).prop_map(|inc| {
        inc.iter()
            .scan(0.0, |acc, d| {
                *acc += d;
                Some(*acc)
            })
            .collect()
    })
}

fn gauss_spec_strategy() -> impl Strategy<Value = GaussPairSpec> {
    (1usize..=3)
        .prop_flat_map(|d| (prop::collection::vec(-1.0f64..1.0, d), prop::collection::vec(-1.0f64..1.0, d)))
        .prop_filter("means must be separated", |(a, b)| {
            a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() > 0.01
        })
        .prop_map(|(a, b)| GaussPairSpec::new(a, b).unwrap())
}

// --- synthetic data ---

pub fn generators_are_deterministic(cases: u32) -> Result<(), String> {
    check(cases, (any::<u64>(), 0usize..6, 1usize..8, 0.05f64..0.95), |(seed, n, t, prior)| {
        let g = GaussPairSpec::two_bumps(2).unwrap();
        prop_assert_eq!(gen_iid_gauss(&g, n, t, prior, seed).unwrap(), gen_iid_gauss(&g, n, t, prior, seed).unwrap());
        prop_assert_eq!(gen_ramp_gauss(&g, n, t, prior, seed).unwrap(), gen_ramp_gauss(&g, n, t, prior, seed).unwrap());
        let a = Ar1Spec::new(0.6, vec![0.5], vec![-0.5], 1.0).unwrap();
        prop_assert_eq!(gen_ar1_gauss(&a, n, t, prior, seed).unwrap(), gen_ar1_gauss(&a, n, t, prior, seed).unwrap());
        let d = DiscreteMarkovSpec::random(1, 3, prior, &mut rng::stream(seed)).unwrap();
        prop_assert_eq!(gen_discrete_markov(&d, n, t, seed).unwrap(), gen_discrete_markov(&d, n, t, seed).unwrap());
        Ok(())
    })
}

/// Each case compares the Monte Carlo mean increment with the KL at 3 SEM.
/// Across 100 independent cases an exact implementation exceeds 3 SEM about
/// 0.27 times on average, so up to 3 exceedances are tolerated
/// (`P(>= 4) ~ 2e-4`); any case beyond 5 SEM fails outright.
pub fn kl_matches_monte_carlo(cases: u32) -> Result<(), String> {
    let exceed = std::sync::atomic::AtomicUsize::new(0);
    check(cases, (gauss_spec_strategy(), any::<u64>()), |(spec, seed)| {
        let data = ok(gen_iid_gauss(&spec, 40, 200, 0.5, seed))?;
        let incs: Vec<f64> =
            data.iter().filter(|s| s.label == 1).flat_map(|s| s.frames()).map(|x| spec.llr_increment(x)).collect();
        let n = incs.len() as f64;
        let mean = incs.iter().sum::<f64>() / n;
        let var = incs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let z = (mean - spec.kl()).abs() / (var / n).sqrt();
        prop_assert!(spec.kl() > 0.0);
        prop_assert!(z <= 5.0, "mean {} vs KL {} ({} SEM)", mean, spec.kl(), z);
        if z > 3.0 {
            exceed.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        }
        Ok(())
    })?;
    let k = exceed.into_inner();
    if k > 3 {
        return Err(format!("{k} of {cases} cases beyond 3 SEM"));
    }
    Ok(())
}

pub fn ar1_without_memory_matches_iid(cases: u32) -> Result<(), String> {
    check(cases, (gauss_spec_strategy(), 1usize..12, any::<u64>()), |(g, t, seed)| {
        let a = ok(Ar1Spec::new(0.0, g.mu0.clone(), g.mu1.clone(), 1.0))?;
        for s in ok(gen_iid_gauss(&g, 2, t, 0.5, seed))? {
            let x = ok(analytic_llr_iid(&s, &g))?.values;
            let y = ok(analytic_llr_ar1(&s, &a))?.values;
            for (p, q) in x.iter().zip(&y) {
                prop_assert!((p - q).abs() <= 1e-12, "{} vs {}", p, q);
            }
        }
        Ok(())
    })
}

pub fn exact_posteriors_are_valid(cases: u32) -> Result<(), String> {
    check(cases, chain_strategy(), |c| {
        let tab = ok(exact_posteriors_discrete(&c.seq, &c.spec, 3, DEFAULT_ENUMERATION_CAP))?;
        for k in 1..=4.min(c.seq.len()) {
            for &v in tab.row(k) {
                prop_assert!(v.is_finite(), "non-finite log-odds {}", v);
                let p = 1.0 / (1.0 + (-v).exp());
                prop_assert!(p > 0.0 && p < 1.0 || v.abs() > 30.0);
            }
        }
        Ok(())
    })
}

// --- TANDEM ---

pub fn tandem_exact_on_markov_chains(cases: u32) -> Result<(), String> {
    check(cases, chain_strategy(), |c| {
        let truth = ok(brute_force_llr_discrete(&c.seq, &c.spec))?.values;
        for n in c.spec.order..=3 {
            let tab = ok(exact_posteriors_discrete(&c.seq, &c.spec, n, DEFAULT_ENUMERATION_CAP))?;
            let est = ok(tandem_llr(&tab))?.values;
            for (t, (a, b)) in est.iter().zip(&truth).enumerate() {
                prop_assert!((a - b).abs() < 1e-9, "N={} t={}: {} vs {}", n, t + 1, a, b);
            }
        }
        Ok(())
    })
}

pub fn tandem_telescopes(cases: u32) -> Result<(), String> {
    check(cases, table_strategy(), |tab| {
        let n = tab.order();
        let l = ok(tandem_llr(&tab))?.values;
        for t in (n + 2)..=tab.len() {
            let want = tab.get(n + 1, t) - tab.get(n, t - 1);
            let got = l[t - 1] - l[t - 2];
            prop_assert!((got - want).abs() < 1e-9, "t={}: {} vs {}", t, got, want);
        }
        Ok(())
    })
}

pub fn order_zero_is_sum_of_singlets(cases: u32) -> Result<(), String> {
    check(cases, (1usize..=30, -3.0f64..3.0, any::<u64>()), |(t_len, prior, seed)| {
        let tab = random_table(0, t_len, prior, seed);
        let l = ok(tandem_llr(&tab))?.values;
        let mut acc = 0.0;
        for t in 1..=t_len {
            acc += tab.get(1, t);
            let want = acc - t as f64 * prior;
            prop_assert!((l[t - 1] - want).abs() <= 1e-12 * want.abs().max(1.0));
        }
        Ok(())
    })
}

pub fn prior_shift_moves_llr_by_minus_delta(cases: u32) -> Result<(), String> {
    check(cases, (table_strategy(), -2.0f64..2.0), |(tab, delta)| {
        let base = ok(tandem_llr(&tab))?.values;
        let mut shifted = tab.clone();
        shifted.prior_logodds += delta;
        let moved = ok(tandem_llr(&shifted))?.values;
        for (t, (a, b)) in base.iter().zip(&moved).enumerate() {
            // with N = 0 the zeroth-order row is the prior itself, so every step picks up -delta
            let want = if tab.order() == 0 { -delta * (t + 1) as f64 } else { -delta };
            prop_assert!((b - a - want).abs() < 1e-9, "t={}: {} vs {}", t + 1, b - a, want);
        }
        Ok(())
    })
}

// --- SPRT ---

pub fn stopping_is_monotone_in_thresholds(cases: u32) -> Result<(), String> {
    check(cases, (traj_strategy(), 0.0f64..3.0, 0.0f64..3.0, 0.0f64..2.0, 0.0f64..2.0), |(l, a0, a1, d0, d1)| {
        let t = l.len();
        let small = run_sprt_truncated(&l, Thresholds::new(a0, a1).unwrap(), t).unwrap();
        let big = run_sprt_truncated(&l, Thresholds::new(a0 + d0, a1 + d1).unwrap(), t).unwrap();
        prop_assert!(big.tau >= small.tau);
        if big.tau == small.tau {
            prop_assert_eq!(big.label, small.label);
        }
        Ok(())
    })
}

pub fn decisions_satisfy_invariants(cases: u32) -> Result<(), String> {
    check(cases, (traj_strategy(), 0.0f64..3.0, 0.0f64..3.0), |(l, a0, a1)| {
        let thr = Thresholds::new(a0, a1).unwrap();
        let d = run_sprt_truncated(&l, thr, l.len()).unwrap();
        prop_assert!(d.label <= 1 && d.tau >= 1 && d.tau <= l.len());
        prop_assert_eq!(d.terminal_llr, l[d.tau - 1]);
        for &v in &l[..d.tau - 1] {
            prop_assert!(v < a1 && v > -a0, "earlier value {} already outside", v);
        }
        if d.forced {
            prop_assert_eq!(d.tau, l.len());
            prop_assert_eq!(d.overshoot, 0.0);
            prop_assert_eq!(d.label, u8::from(d.terminal_llr >= 0.0));
        } else if d.label == 1 {
            prop_assert!(d.terminal_llr >= a1 && d.overshoot >= 0.0);
            prop_assert!((d.overshoot - (d.terminal_llr - a1)).abs() < 1e-12);
        } else {
            prop_assert!(d.terminal_llr <= -a0 && d.overshoot >= 0.0);
            prop_assert!((d.overshoot - (-a0 - d.terminal_llr)).abs() < 1e-12);
        }
        Ok(())
    })
}

pub fn collapsed_thresholds_stop_at_once(cases: u32) -> Result<(), String> {
    check(cases, traj_strategy(), |l| {
        let d = run_sprt_truncated(&l, Thresholds::symmetric(0.0).unwrap(), l.len()).unwrap();
        prop_assert_eq!(d.tau, 1);
        prop_assert!(!d.forced);
        Ok(())
    })
}

// --- network ---

/// Max relative error between the composed backprop gradient (network,
/// TANDEM and all three losses) and central finite differences.
pub fn composed_gradient_error(seed: u64, hidden: usize, order: usize, t_len: usize, batch: usize) -> f64 {
    let spec = GaussPairSpec::two_bumps(2).unwrap().scaled(0.5).unwrap();
    let mut data = gen_iid_gauss(&spec, batch, t_len, 0.5, seed).unwrap();
    // both classes present so the KLIEP term is active
    data[0].label = 0;
    data[1].label = 1;
    let model = RecurrentEstimator::new(2, hidden, order, seed ^ 0x5eed).unwrap();
    let weights = LossWeights { lllr: 1.0, multiplet: 1.0, kliep: 1.0 };
    let clamp = losses::DEFAULT_KLIEP_CLAMP;
    let refs: Vec<&LabeledSequence> = data.iter().collect();
    let an = batch_gradient(&model, &refs, weights, clamp).unwrap().grad;
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for i in 0..an.len() {
        let mut p = model.clone();
        p.params_mut()[i] += h;
        let mut m = model.clone();
        m.params_mut()[i] -= h;
        let fp = batch_gradient(&p, &refs, weights, clamp).unwrap().loss.total;
        let fm = batch_gradient(&m, &refs, weights, clamp).unwrap().loss.total;
        let fd = (fp - fm) / (2.0 * h);
        let rel = (fd - an[i]).abs() / fd.abs().max(an[i].abs()).max(1e-6);
        worst = worst.max(rel);
    }
    worst
}

pub fn composed_gradient_is_exact(cases: u32) -> Result<(), String> {
    check(cases, (any::<u64>(), 1usize..=4, 0usize..=2, 0usize..=3, 2usize..=4), |(seed, hd, n, extra, b)| {
        let err = composed_gradient_error(seed, hd, n, n + 1 + extra, b);
        prop_assert!(err < 1e-5, "relative error {}", err);
        Ok(())
    })
}

pub fn posteriors_are_normalised(cases: u32) -> Result<(), String> {
    check(cases, (1usize..=6, any::<u64>(), prop::collection::vec(-1.0f64..1.0, 6)), |(hd, seed, h)| {
        let m = RecurrentEstimator::new(2, hd, 1, seed).unwrap();
        let p = m.posterior(&h[..hd]);
        prop_assert!((p[0] + p[1] - 1.0).abs() < 1e-15);
        let z = m.logits(&h[..hd]);
        prop_assert!(((p[1] / p[0]).ln() - (z[1] - z[0])).abs() < 1e-9);
        Ok(())
    })
}

pub fn windows_ignore_outside_frames(cases: u32) -> Result<(), String> {
    check(cases, (any::<u64>(), 0usize..=3, 1usize..=9, any::<prop::sample::Index>(), -5.0f64..5.0), |(seed, n, t, j, v)| {
        let m = RecurrentEstimator::new(2, 3, n, seed).unwrap();
        let spec = GaussPairSpec::two_bumps(2).unwrap();
        let s = gen_iid_gauss(&spec, 1, t, 0.5, seed).unwrap().remove(0);
        let j = j.index(t) + 1;
        let mut changed = s.clone();
        changed.frame_mut(j - 1)[0] += v + 0.5;
        let (a, _) = ok(m.posterior_table(&s))?;
        let (b, _) = ok(m.posterior_table(&changed))?;
        for k in 1..=(n + 1).min(t) {
            for end in k..=t {
                let inside = j + k > end && j <= end;
                if !inside {
                    prop_assert_eq!(a.get(k, end).to_bits(), b.get(k, end).to_bits(), "k={} s={} frame {}", k, end, j);
                }
            }
        }
        Ok(())
    })
}

// --- losses ---

pub fn lllr_is_bounded_with_bounded_gradient(cases: u32) -> Result<(), String> {
    let strat = (1usize..6, 1usize..10).prop_flat_map(|(m, t)| {
        (prop::collection::vec(prop::collection::vec(-50.0f64..50.0, t), m), prop::collection::vec(0u8..=1, m))
    });
    check(cases, strat, |(llrs, labels)| {
        let l = ok(losses::lllr(&llrs, &labels))?;
        prop_assert!((0.0..=1.0).contains(&l.value));
        let bound = 1.0 / (4.0 * (llrs.len() * llrs[0].len()) as f64);
        for g in l.grads.iter().flatten() {
            prop_assert!(g.abs() <= bound * (1.0 + 1e-12), "{} > {}", g, bound);
        }
        Ok(())
    })
}

/// All generative properties, in a fixed order.
pub const PROPERTIES: &[(&str, fn(u32) -> Result<(), String>)] = &[
    ("generators are deterministic", generators_are_deterministic),
    ("per-step KL matches Monte Carlo", kl_matches_monte_carlo),
    ("memoryless AR(1) matches i.i.d. oracle", ar1_without_memory_matches_iid),
    ("exact window posteriors are finite log-odds", exact_posteriors_are_valid),
    ("TANDEM exact on Markov chains for N >= order", tandem_exact_on_markov_chains),
    ("TANDEM telescoping increments", tandem_telescopes),
    ("order 0 equals sum of singlets", order_zero_is_sum_of_singlets),
    ("prior shift moves LLR by -delta", prior_shift_moves_llr_by_minus_delta),
    ("stopping monotone in thresholds", stopping_is_monotone_in_thresholds),
    ("decision outcome invariants", decisions_satisfy_invariants),
    ("collapsed thresholds stop at t=1", collapsed_thresholds_stop_at_once),
    ("composed gradient matches finite differences", composed_gradient_is_exact),
    ("softmax posteriors normalised", posteriors_are_normalised),
    ("windows ignore outside frames", windows_ignore_outside_frames),
    ("LLLR bounded with bounded gradient", lllr_is_bounded_with_bounded_gradient),
];

// --- statistical and optimisation properties ---

/// Still-running fraction at each horizon for the analytic-LLR SPRT, and the
/// fitted slope of its logarithm against the horizon.
pub fn stein_termination() -> (Vec<(usize, f64)>, f64) {
    let spec = GaussPairSpec::two_bumps(2).unwrap().scaled(0.25).unwrap();
    let thr = Thresholds::symmetric(19f64.ln()).unwrap();
    let trials = eval::simulate_iid_sprt(&spec, thr, 20_000, 60, 11).unwrap();
    let horizons: Vec<usize> = (1..=6).map(|i| 5 * i).collect();
    let fracs: Vec<(usize, f64)> = horizons
        .iter()
        .map(|&h| (h, trials.iter().filter(|t| t.outcome.tau > h).count() as f64 / trials.len() as f64))
        .collect();
    let pts: Vec<(f64, f64)> = fracs.iter().filter(|f| f.1 > 0.0).map(|&(h, f)| (h as f64, f.ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    (fracs, slope)
}

/// Symmetric sweep over analytic LLRs: mean hitting time must be
/// nondecreasing and balanced accuracy nondecreasing within 2 SEM.
pub fn sat_sweep_is_monotone() -> Result<(), String> {
    let spec = GaussPairSpec::two_bumps(2).unwrap().scaled(0.25).unwrap();
    let data = gen_iid_gauss(&spec, 4000, 40, 0.5, 21).unwrap();
    let llrs: Vec<Vec<f64>> = data.iter().map(|s| analytic_llr_iid(s, &spec).unwrap().values).collect();
    let labels: Vec<u8> = data.iter().map(|s| s.label).collect();
    let thr: Vec<Thresholds> = eval::default_threshold_grid().into_iter().map(|a| Thresholds::symmetric(a).unwrap()).collect();
    let pts = eval::sat_curve(&llrs, &labels, &thr, 40).map_err(|e| e.to_string())?;
    for w in pts.windows(2) {
        if w[1].mean_hitting_time < w[0].mean_hitting_time {
            return Err(format!("hitting time fell from {} to {}", w[0].mean_hitting_time, w[1].mean_hitting_time));
        }
        let slack = 2.0 * w[0].sem.max(w[1].sem);
        if w[1].balanced_accuracy < w[0].balanced_accuracy - slack {
            return Err(format!("accuracy fell from {} to {}", w[0].balanced_accuracy, w[1].balanced_accuracy));
        }
    }
    Ok(())
}

/// One run of the single-frame Gaussian density-ratio experiment.
#[derive(Debug, Clone)]
pub struct RatioRun {
    pub seed: u64,
    pub initial_nmse: f64,
    pub final_nmse: f64,
    /// `(lllr, nmse)` after each epoch.
    pub epochs: Vec<(f64, f64)>,
    pub final_feature_norm: f64,
}

/// LLLR-only training of the estimator on single frames from the two-bump
/// Gaussian pair; NMSE is measured on held-out frames from the same mixture.
pub fn density_ratio_run(seed: u64) -> RatioRun {
    let spec = GaussPairSpec::two_bumps(2).unwrap();
    let train = gen_iid_gauss(&spec, 5000, 1, 0.5, 100 + seed).unwrap();
    let test = gen_iid_gauss(&spec, 2000, 1, 0.5, 200 + seed).unwrap();
    let truth: Vec<f64> = test.iter().map(|s| analytic_llr_iid(s, &spec).unwrap().values[0].exp()).collect();
    let score = |m: &RecurrentEstimator| {
        let est: Vec<f64> = m.llrs(&test).unwrap().iter().map(|l| l.values[0].exp()).collect();
        nmse(&est, &truth).unwrap()
    };
    let mut model = RecurrentEstimator::new(2, 32, 0, seed).unwrap();
    let initial_nmse = score(&model);
    let cfg = TrainConfig {
        weights: LossWeights::LLLR_ONLY,
        epochs: 30,
        batch_size: 64,
        adam: AdamConfig::default(),
        seed,
        ..Default::default()
    };
    let mut epochs = Vec::new();
    let mut norm = 0.0;
    train_with_observer(&mut model, &train, &test, &cfg, |r, m| {
        epochs.push((r.lllr, score(m)));
        norm = r.feature_norm;
    })
    .unwrap();
    RatioRun { seed, initial_nmse, final_nmse: score(&model), epochs, final_feature_norm: norm }
}

/// Median over runs of the Spearman correlation between epoch index and NMSE.
pub fn kl_direction(runs: &[RatioRun]) -> (f64, f64) {
    let mut by_epoch = Vec::new();
    let mut by_lllr = Vec::new();
    for r in runs {
        let idx: Vec<f64> = (1..=r.epochs.len()).map(|i| i as f64).collect();
        let l: Vec<f64> = r.epochs.iter().map(|e| e.0).collect();
        let n: Vec<f64> = r.epochs.iter().map(|e| e.1).collect();
        by_epoch.push(spearman(&idx, &n).unwrap());
        by_lllr.push(spearman(&l, &n).unwrap());
    }
    (median(&mut by_epoch), median(&mut by_lllr))
}

pub fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Class-conditional probability of a symbol sequence, straight from the chain rule.
fn chain_prob(spec: &DiscreteMarkovSpec, x: &[usize], y: usize) -> f64 {
    let n = spec.order;
    let enc = |w: &[usize]| w.iter().fold(0usize, |acc, &s| acc * spec.alphabet + s);
    let head = n.min(x.len());
    // marginal of the first `head` symbols under the initial law
    let mut p = 0.0;
    let states = spec.alphabet.pow(n as u32);
    for st in 0..states {
        let mut digits = vec![0usize; n];
        let mut v = st;
        for d in digits.iter_mut().rev() {
            *d = v % spec.alphabet;
            v /= spec.alphabet;
        }
        if digits[..head] == x[..head] {
            p += spec.init[y][st];
        }
    }
    for t in n..x.len() {
        p *= spec.cond[y][enc(&x[t - n..=t])];
    }
    p
}

/// Minimise the population multiplet loss over free table entries (one
/// parameter per window position and content) and return the largest gap to
/// the exact window posteriors.
pub fn multiplet_minimiser_gap() -> f64 {
    let (order, alphabet, t_len, prior) = (1usize, 2usize, 4usize, 0.3);
    let spec = DiscreteMarkovSpec::random(order, alphabet, prior, &mut rng::stream(2024)).unwrap();
    let mut population: Vec<(LabeledSequence, f64)> = Vec::new();
    for code in 0..alphabet.pow(t_len as u32) {
        let x: Vec<usize> = (0..t_len).map(|i| code / alphabet.pow((t_len - 1 - i) as u32) % alphabet).collect();
        for y in 0..2u8 {
            let py = if y == 1 { prior } else { 1.0 - prior };
            let w = py * chain_prob(&spec, &x, y as usize);
            let frames = x.iter().map(|&s| vec![s as f64]).collect();
            population.push((LabeledSequence::new(frames, y, 0).unwrap(), w));
        }
    }
    let total: f64 = population.iter().map(|p| p.1).sum();
    assert!((total - 1.0).abs() < 1e-12, "population mass {total}");

    type Key = (usize, usize, Vec<usize>);
    let key = |s: &LabeledSequence, k: usize, end: usize| -> Key {
        let sym = s.symbols().unwrap();
        (k, end, sym[end - k..end].to_vec())
    };
    let mut theta: HashMap<Key, f64> = HashMap::new();
    let grads = |theta: &HashMap<Key, f64>, shift: f64| -> HashMap<Key, f64> {
        let mut g: HashMap<Key, f64> = HashMap::new();
        for (s, w) in &population {
            let mut tab = PosteriorTable::new(order, t_len, spec.prior_logodds());
            for k in 1..=order + 1 {
                for end in k..=t_len {
                    tab.set(k, end, theta.get(&key(s, k, end)).copied().unwrap_or(0.0) + shift);
                }
            }
            let m = losses::multiplet_ce(&[tab], &[s.label]).unwrap();
            for k in 1..=order + 1 {
                for end in k..=t_len {
                    *g.entry(key(s, k, end)).or_default() += w * m.grads[0].get(k, end);
                }
            }
        }
        g
    };
    // the loss is separable across entries, so a uniform shift probes each diagonal curvature
    let eps = 1e-4;
    for _ in 0..60 {
        let g = grads(&theta, 0.0);
        let gp = grads(&theta, eps);
        let gm = grads(&theta, -eps);
        for (k, gv) in &g {
            let hess = (gp[k] - gm[k]) / (2.0 * eps);
            if hess > 1e-14 {
                *theta.entry(k.clone()).or_default() -= (gv / hess).clamp(-5.0, 5.0);
            }
        }
    }
    let gp = grads(&theta, eps);
    let gm = grads(&theta, -eps);
    let mut worst: f64 = 0.0;
    for (s, _) in &population {
        let exact = exact_posteriors_discrete(s, &spec, order, DEFAULT_ENUMERATION_CAP).unwrap();
        for k in 1..=order + 1 {
            for end in k..=t_len {
                let kk = key(s, k, end);
                // entries outside every multiplet term have zero curvature
                if (gp[&kk] - gm[&kk]) / (2.0 * eps) > 1e-14 {
                    worst = worst.max((theta[&kk] - exact.get(k, end)).abs());
                }
            }
        }
    }
    worst
}
