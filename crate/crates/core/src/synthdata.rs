//! Labelled sequential datasets with exactly known class-conditional laws.
//!
//! Four generators are provided: i.i.d. Gaussian pairs, a "ramp" whose class
//! means grow linearly in time, a stationary Gaussian AR(1) process, and
//! discrete N-th order Markov chains. Each comes with an oracle for the exact
//! log-likelihood ratio; the discrete chain additionally exposes exact window
//! posteriors, which is what makes the TANDEM decomposition testable to
//! machine precision.
//!
//! Sequence `i` of a dataset draws from its own random substream (see
//! [`crate::rng`]), so every generator is a pure function of its arguments.

use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::error::{invalid, Result, TandemError};
use crate::rng;
use crate::tandem::{LlrSource, LlrTrajectory, PosteriorTable};

/// Default cap on `alphabet^(order+1)`, the per-step work of the exact
/// window-marginal recursion.
pub const DEFAULT_ENUMERATION_CAP: u128 = 1 << 22;

/// One time series `x(1..T)` with its binary label.
///
/// Frames are stored flat; frame `i` (0-based) is the observation at time
/// `t = i + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSequence {
    dim: usize,
    values: Vec<f64>,
    pub label: u8,
    pub seed: u64,
}

impl LabeledSequence {
    pub fn new(frames: Vec<Vec<f64>>, label: u8, seed: u64) -> Result<Self> {
        let dim = frames.first().map(Vec::len).ok_or(TandemError::Empty("frames"))?;
        let mut values = Vec::with_capacity(dim * frames.len());
        for f in &frames {
            if f.len() != dim {
                return Err(TandemError::DimensionMismatch { expected: dim, got: f.len() });
            }
            values.extend_from_slice(f);
        }
        Self::from_flat(dim, values, label, seed)
    }

    pub fn from_flat(dim: usize, values: Vec<f64>, label: u8, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("frame dimension must be >= 1"));
        }
        if values.is_empty() || !values.len().is_multiple_of(dim) {
            return Err(invalid(format!(
                "{} values cannot be split into frames of dimension {dim}",
                values.len()
            )));
        }
        if label > 1 {
            return Err(invalid(format!("label must be 0 or 1, got {label}")));
        }
        Ok(Self { dim, values, label, seed })
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Frame at 0-based index `i` (time `i + 1`).
    pub fn frame(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.dim)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn frame_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.dim..(i + 1) * self.dim]
    }

    /// Symbol indices of a discrete sequence (`dim == 1`).
    pub fn symbols(&self) -> Result<Vec<usize>> {
        if self.dim != 1 {
            return Err(TandemError::DimensionMismatch { expected: 1, got: self.dim });
        }
        self.values
            .iter()
            .map(|&v| {
                if v >= 0.0 && v.fract() == 0.0 {
                    Ok(v as usize)
                } else {
                    Err(invalid(format!("{v} is not a symbol index")))
                }
            })
            .collect()
    }
}

/// Pair of unit-covariance Gaussians `N(mu0, I)` / `N(mu1, I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussPairSpec {
    pub mu0: Vec<f64>,
    pub mu1: Vec<f64>,
}

impl GaussPairSpec {
    pub fn new(mu0: Vec<f64>, mu1: Vec<f64>) -> Result<Self> {
        let spec = Self { mu0, mu1 };
        spec.validate()?;
        Ok(spec)
    }

    /// `mu0 = (2, 0, ..., 0)`, `mu1 = (0, 2, 0, ..., 0)` in `d >= 2` dimensions.
    pub fn two_bumps(d: usize) -> Result<Self> {
        if d < 2 {
            return Err(invalid("two_bumps needs d >= 2"));
        }
        let mut mu0 = vec![0.0; d];
        let mut mu1 = vec![0.0; d];
        mu0[0] = 2.0;
        mu1[1] = 2.0;
        Self::new(mu0, mu1)
    }

    /// Both means multiplied by `factor`; the per-step KL scales by `factor^2`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.mu0.iter().map(|m| m * factor).collect(),
            self.mu1.iter().map(|m| m * factor).collect(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.mu0.is_empty() {
            return Err(TandemError::InvalidSpec("dimension must be >= 1".into()));
        }
        if self.mu0.len() != self.mu1.len() {
            return Err(TandemError::DimensionMismatch { expected: self.mu0.len(), got: self.mu1.len() });
        }
        if self.mu0.iter().chain(&self.mu1).any(|m| !m.is_finite()) {
            return Err(TandemError::InvalidSpec("means must be finite".into()));
        }
        if self.mu0 == self.mu1 {
            return Err(TandemError::InvalidSpec("class means must differ".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.mu0.len()
    }

    pub fn mean(&self, label: u8) -> &[f64] {
        if label == 1 {
            &self.mu1
        } else {
            &self.mu0
        }
    }

    /// Per-frame KL divergence `||mu1 - mu0||^2 / 2` (identical in both directions).
    pub fn kl(&self) -> f64 {
        0.5 * sq_dist(&self.mu0, &self.mu1)
    }

    /// `log N(x; mu1, I) - log N(x; mu0, I)`.
    pub fn llr_increment(&self, x: &[f64]) -> f64 {
        gauss_increment(&self.mu0, &self.mu1, 1.0, x)
    }
}

/// Stationary Gaussian AR(1) process, independent across coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Ar1Spec {
    pub rho: f64,
    pub mu0: Vec<f64>,
    pub mu1: Vec<f64>,
    pub sigma: f64,
}

impl Ar1Spec {
    pub fn new(rho: f64, mu0: Vec<f64>, mu1: Vec<f64>, sigma: f64) -> Result<Self> {
        let spec = Self { rho, mu0, mu1, sigma };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho.abs() < 1.0) {
            return Err(invalid(format!("|rho| must be < 1, got {}", self.rho)));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(invalid(format!("sigma must be positive, got {}", self.sigma)));
        }
        if self.mu0.is_empty() || self.mu0.len() != self.mu1.len() {
            return Err(TandemError::DimensionMismatch { expected: self.mu0.len(), got: self.mu1.len() });
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.mu0.len()
    }

    pub fn mean(&self, label: u8) -> &[f64] {
        if label == 1 {
            &self.mu1
        } else {
            &self.mu0
        }
    }

    pub fn stationary_variance(&self) -> f64 {
        self.sigma * self.sigma / (1.0 - self.rho * self.rho)
    }
}

/// Discrete N-th order Markov chain per class.
///
/// Histories are encoded base `alphabet` with the oldest symbol most
/// significant. `cond[y]` has `alphabet^order` rows of `alphabet` entries;
/// `init[y]` is the joint pmf of the first `order` symbols (a single `1.0`
/// when `order == 0`).
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMarkovSpec {
    pub order: usize,
    pub alphabet: usize,
    pub cond: [Vec<f64>; 2],
    pub init: [Vec<f64>; 2],
    pub prior: f64,
}

impl DiscreteMarkovSpec {
    pub fn new(
        order: usize,
        alphabet: usize,
        cond: [Vec<f64>; 2],
        init: [Vec<f64>; 2],
        prior: f64,
    ) -> Result<Self> {
        let spec = Self { order, alphabet, cond, init, prior };
        spec.validate()?;
        Ok(spec)
    }

    /// Random spec with strictly positive Dirichlet(1) rows.
    pub fn random<R: Rng + ?Sized>(order: usize, alphabet: usize, prior: f64, rng: &mut R) -> Result<Self> {
        let states = checked_pow(alphabet, order)?;
        let mut draw = |len: usize, row: usize| -> Vec<f64> {
            let mut out = Vec::with_capacity(len * row);
            for _ in 0..len {
                let raw: Vec<f64> = (0..row).map(|_| Distribution::<f64>::sample(&Exp1, rng) + 1e-3).collect();
                let total: f64 = raw.iter().sum();
                out.extend(raw.iter().map(|v| v / total));
            }
            out
        };
        let cond = [draw(states, alphabet), draw(states, alphabet)];
        let init = [draw(1, states), draw(1, states)];
        Self::new(order, alphabet, cond, init, prior)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TandemError::InvalidSpec(m));
        if self.alphabet < 2 {
            return bad(format!("alphabet must be >= 2, got {}", self.alphabet));
        }
        if !(self.prior > 0.0 && self.prior < 1.0) {
            return bad(format!("prior must lie in (0,1), got {}", self.prior));
        }
        let states = checked_pow(self.alphabet, self.order)?;
        for y in 0..2 {
            if self.cond[y].len() != states * self.alphabet {
                return bad(format!(
                    "class {y} conditional table has {} entries, expected {}",
                    self.cond[y].len(),
                    states * self.alphabet
                ));
            }
            if self.init[y].len() != states {
                return bad(format!(
                    "class {y} initial pmf has {} entries, expected {states}",
                    self.init[y].len()
                ));
            }
            for (r, row) in self.cond[y].chunks_exact(self.alphabet).enumerate() {
                check_pmf(row).map_err(|m| TandemError::InvalidSpec(format!("class {y} row {r}: {m}")))?;
            }
            check_pmf(&self.init[y]).map_err(|m| TandemError::InvalidSpec(format!("class {y} init: {m}")))?;
        }
        Ok(())
    }

    pub fn states(&self) -> usize {
        self.alphabet.pow(self.order as u32)
    }

    pub fn prior_logodds(&self) -> f64 {
        (self.prior / (1.0 - self.prior)).ln()
    }

    fn cond_prob(&self, y: usize, state: usize, sym: usize) -> f64 {
        self.cond[y][state * self.alphabet + sym]
    }

    fn shift(&self, state: usize, sym: usize) -> usize {
        (state * self.alphabet + sym) % self.states()
    }

    /// Encode `syms` (oldest first) as a history index.
    fn encode(&self, syms: &[usize]) -> usize {
        syms.iter().fold(0, |acc, &s| acc * self.alphabet + s)
    }

    /// `log p(x(1..t) | y)` for every prefix `t = 1..=len`, by the chain rule.
    fn prefix_log_probs(&self, syms: &[usize], y: usize) -> Vec<f64> {
        let n = self.order;
        let mut out = Vec::with_capacity(syms.len());
        for t in 1..=syms.len().min(n) {
            // marginal of the initial block over its unobserved tail
            let width = self.alphabet.pow((n - t) as u32);
            let start = self.encode(&syms[..t]) * width;
            let mass: f64 = self.init[y][start..start + width].iter().sum();
            out.push(mass.ln());
        }
        if syms.len() >= n {
            let mut lp = self.init[y][self.encode(&syms[..n])].ln();
            let mut state = self.encode(&syms[..n]);
            for &s in &syms[n..] {
                lp += self.cond_prob(y, state, s).ln();
                state = self.shift(state, s);
                out.push(lp);
            }
        }
        out
    }

    /// `log p(x(a..=b) | y)` for the window of 1-based positions `a..=b`,
    /// marginalising all unobserved history exactly.
    fn window_log_prob(&self, syms: &[usize], a: usize, b: usize, y: usize) -> f64 {
        let n = self.order;
        let observed = |t: usize| (a..=b).contains(&t);
        let states = self.states();
        let mut alpha = vec![0.0; states];
        let mut log_scale = 0.0;
        for (state, w) in alpha.iter_mut().enumerate() {
            // position j (1-based) of the initial block holds digit j-1 of `state`
            let consistent = (1..=n.min(b)).all(|j| {
                !observed(j) || (state / self.alphabet.pow((n - j) as u32)) % self.alphabet == syms[j - 1]
            });
            if consistent {
                *w = self.init[y][state];
            }
        }
        if !normalise(&mut alpha, &mut log_scale) {
            return f64::NEG_INFINITY;
        }
        let mut next = vec![0.0; states];
        for t in (n + 1)..=b {
            next.iter_mut().for_each(|v| *v = 0.0);
            for (state, &w) in alpha.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                if observed(t) {
                    let s = syms[t - 1];
                    next[self.shift(state, s)] += w * self.cond_prob(y, state, s);
                } else {
                    for s in 0..self.alphabet {
                        next[self.shift(state, s)] += w * self.cond_prob(y, state, s);
                    }
                }
            }
            std::mem::swap(&mut alpha, &mut next);
            if !normalise(&mut alpha, &mut log_scale) {
                return f64::NEG_INFINITY;
            }
        }
        log_scale
    }
}

fn normalise(alpha: &mut [f64], log_scale: &mut f64) -> bool {
    let total: f64 = alpha.iter().sum();
    if total <= 0.0 {
        return false;
    }
    alpha.iter_mut().for_each(|v| *v /= total);
    *log_scale += total.ln();
    true
}

fn check_pmf(row: &[f64]) -> std::result::Result<(), String> {
    if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err("entries must be finite and nonnegative".into());
    }
    let total: f64 = row.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(format!("sums to {total}, not 1"));
    }
    Ok(())
}

fn checked_pow(base: usize, exp: usize) -> Result<usize> {
    u32::try_from(exp)
        .ok()
        .and_then(|e| base.checked_pow(e))
        .ok_or_else(|| TandemError::InvalidSpec(format!("{base}^{exp} overflows")))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `log N(x; m1, var I) - log N(x; m0, var I)`.
fn gauss_increment(m0: &[f64], m1: &[f64], var: f64, x: &[f64]) -> f64 {
    (sq_dist(x, m0) - sq_dist(x, m1)) / (2.0 * var)
}

fn check_counts(t_len: usize, prior: f64) -> Result<()> {
    if t_len == 0 {
        return Err(invalid("sequence length T must be >= 1"));
    }
    if !(prior > 0.0 && prior < 1.0) {
        return Err(invalid(format!("prior must lie in (0,1), got {prior}")));
    }
    Ok(())
}

fn gaussian_frame<R: Rng + ?Sized>(mean: &[f64], scale: f64, std: f64, rng: &mut R, out: &mut Vec<f64>) {
    for m in mean {
        let z: f64 = StandardNormal.sample(rng);
        out.push(scale * m + std * z);
    }
}

fn generate<F>(n: usize, t_len: usize, dim: usize, prior: f64, seed: u64, mut fill: F) -> Vec<LabeledSequence>
where
    F: FnMut(u8, &mut rand_chacha::ChaCha8Rng, &mut Vec<f64>),
{
    (0..n)
        .map(|i| {
            let sub = rng::substream_seed(seed, i as u64);
            let mut r = rng::stream(sub);
            let label = u8::from(r.random::<f64>() < prior);
            let mut values = Vec::with_capacity(t_len * dim);
            fill(label, &mut r, &mut values);
            LabeledSequence { dim, values, label, seed: sub }
        })
        .collect()
}

/// i.i.d. frames `x(t) ~ N(mu_y, I)` with `y ~ Bernoulli(prior)`.
pub fn gen_iid_gauss(spec: &GaussPairSpec, n: usize, t_len: usize, prior: f64, seed: u64) -> Result<Vec<LabeledSequence>> {
    spec.validate()?;
    check_counts(t_len, prior)?;
    Ok(generate(n, t_len, spec.dim(), prior, seed, |y, r, out| {
        for _ in 0..t_len {
            gaussian_frame(spec.mean(y), 1.0, 1.0, r, out);
        }
    }))
}

/// Independent frames `x(t) ~ N((t/T) mu_y, I)`: evidence grows over time.
pub fn gen_ramp_gauss(spec: &GaussPairSpec, n: usize, t_len: usize, prior: f64, seed: u64) -> Result<Vec<LabeledSequence>> {
    spec.validate()?;
    check_counts(t_len, prior)?;
    Ok(generate(n, t_len, spec.dim(), prior, seed, |y, r, out| {
        for t in 1..=t_len {
            gaussian_frame(spec.mean(y), t as f64 / t_len as f64, 1.0, r, out);
        }
    }))
}

/// Stationary AR(1): `x(1) ~ N(mu_y, sigma^2/(1-rho^2))`,
/// `x(t) = mu_y + rho (x(t-1) - mu_y) + sigma xi(t)`.
pub fn gen_ar1_gauss(spec: &Ar1Spec, n: usize, t_len: usize, prior: f64, seed: u64) -> Result<Vec<LabeledSequence>> {
    spec.validate()?;
    check_counts(t_len, prior)?;
    let d = spec.dim();
    let stat_std = spec.stationary_variance().sqrt();
    Ok(generate(n, t_len, d, prior, seed, |y, r, out| {
        let mu = spec.mean(y);
        gaussian_frame(mu, 1.0, stat_std, r, out);
        for t in 1..t_len {
            for j in 0..d {
                let z: f64 = StandardNormal.sample(r);
                let prev = out[(t - 1) * d + j];
                out.push(mu[j] + spec.rho * (prev - mu[j]) + spec.sigma * z);
            }
        }
    }))
}

fn sample_categorical<R: Rng + ?Sized>(pmf: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in pmf.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding slack: last symbol with positive mass
    pmf.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Discrete chain sequences, symbols stored as indices in 1-dimensional frames.
pub fn gen_discrete_markov(spec: &DiscreteMarkovSpec, n: usize, t_len: usize, seed: u64) -> Result<Vec<LabeledSequence>> {
    spec.validate()?;
    check_counts(t_len, spec.prior)?;
    if t_len < spec.order {
        return Err(invalid(format!("T={t_len} is shorter than the chain order {}", spec.order)));
    }
    let a = spec.alphabet;
    let nord = spec.order;
    Ok(generate(n, t_len, 1, spec.prior, seed, |y, r, out| {
        let y = y as usize;
        let mut state = sample_categorical(&spec.init[y], r);
        for j in 1..=nord {
            out.push(((state / a.pow((nord - j) as u32)) % a) as f64);
        }
        for _ in nord..t_len {
            let s = sample_categorical(&spec.cond[y][state * a..(state + 1) * a], r);
            out.push(s as f64);
            state = spec.shift(state, s);
        }
    }))
}

fn check_dim(seq: &LabeledSequence, d: usize) -> Result<()> {
    if seq.dim() != d {
        return Err(TandemError::DimensionMismatch { expected: d, got: seq.dim() });
    }
    Ok(())
}

fn cumulative(increments: impl Iterator<Item = f64>, source: LlrSource) -> LlrTrajectory {
    let values = increments
        .scan(0.0, |acc, inc| {
            *acc += inc;
            Some(*acc)
        })
        .collect();
    LlrTrajectory::new(values, source)
}

/// Exact LLR of an i.i.d. Gaussian sequence.
pub fn analytic_llr_iid(seq: &LabeledSequence, spec: &GaussPairSpec) -> Result<LlrTrajectory> {
    check_dim(seq, spec.dim())?;
    Ok(cumulative(seq.frames().map(|x| spec.llr_increment(x)), LlrSource::Analytic))
}

/// Exact LLR of a ramp sequence of the given total length `T = seq.len()`.
pub fn analytic_llr_ramp(seq: &LabeledSequence, spec: &GaussPairSpec) -> Result<LlrTrajectory> {
    check_dim(seq, spec.dim())?;
    let t_len = seq.len() as f64;
    Ok(cumulative(
        seq.frames().enumerate().map(|(i, x)| {
            let c = (i + 1) as f64 / t_len;
            let m0: Vec<f64> = spec.mu0.iter().map(|m| c * m).collect();
            let m1: Vec<f64> = spec.mu1.iter().map(|m| c * m).collect();
            gauss_increment(&m0, &m1, 1.0, x)
        }),
        LlrSource::Analytic,
    ))
}

/// Exact LLR of a stationary AR(1) sequence via the conditional-Gaussian chain rule.
pub fn analytic_llr_ar1(seq: &LabeledSequence, spec: &Ar1Spec) -> Result<LlrTrajectory> {
    check_dim(seq, spec.dim())?;
    let var1 = spec.stationary_variance();
    let var = spec.sigma * spec.sigma;
    let (mu0, mu1, rho) = (&spec.mu0, &spec.mu1, spec.rho);
    let incs = (0..seq.len()).map(|i| {
        let x = seq.frame(i);
        if i == 0 {
            gauss_increment(mu0, mu1, var1, x)
        } else {
            let prev = seq.frame(i - 1);
            let cm = |mu: &[f64]| -> Vec<f64> { mu.iter().zip(prev).map(|(m, p)| m + rho * (p - m)).collect() };
            gauss_increment(&cm(mu0), &cm(mu1), var, x)
        }
    });
    Ok(cumulative(incs, LlrSource::Analytic))
}

fn check_symbols(syms: &[usize], spec: &DiscreteMarkovSpec) -> Result<()> {
    match syms.iter().find(|&&s| s >= spec.alphabet) {
        Some(s) => Err(invalid(format!("symbol {s} outside alphabet of size {}", spec.alphabet))),
        None => Ok(()),
    }
}

fn check_cap(spec: &DiscreteMarkovSpec, cap: u128) -> Result<()> {
    let size = (spec.alphabet as u128).checked_pow(spec.order as u32 + 1).unwrap_or(u128::MAX);
    if size > cap {
        return Err(TandemError::Infeasible { size, cap });
    }
    Ok(())
}

/// `log p1 - log p0` with explicit sentinels for support mismatch.
fn log_ratio(lp1: f64, lp0: f64) -> Result<f64> {
    match (lp1 == f64::NEG_INFINITY, lp0 == f64::NEG_INFINITY) {
        (true, true) => Err(TandemError::ImpossibleObservation),
        (false, true) => Ok(f64::INFINITY),
        (true, false) => Ok(f64::NEG_INFINITY),
        (false, false) => Ok(lp1 - lp0),
    }
}

/// Exact window posteriors `L[k][s] = log p(y=1|x(s-k+1..s)) - log p(y=0|...)`
/// for `k = 1..=order_out+1` and every admissible end time `s`.
pub fn exact_posteriors_discrete(
    seq: &LabeledSequence,
    spec: &DiscreteMarkovSpec,
    order_out: usize,
    cap: u128,
) -> Result<PosteriorTable> {
    let syms = seq.symbols()?;
    check_symbols(&syms, spec)?;
    check_cap(spec, cap)?;
    let t_len = syms.len();
    let prior = spec.prior_logodds();
    let mut table = PosteriorTable::new(order_out, t_len, prior);
    for k in 1..=(order_out + 1).min(t_len) {
        for s in k..=t_len {
            let a = s + 1 - k;
            let lp1 = spec.window_log_prob(&syms, a, s, 1);
            let lp0 = spec.window_log_prob(&syms, a, s, 0);
            table.set(k, s, prior + log_ratio(lp1, lp0)?);
        }
    }
    Ok(table)
}

/// Joint LLR `log p(x(1..t)|1) - log p(x(1..t)|0)` by the chain rule.
pub fn brute_force_llr_discrete(seq: &LabeledSequence, spec: &DiscreteMarkovSpec) -> Result<LlrTrajectory> {
    let syms = seq.symbols()?;
    check_symbols(&syms, spec)?;
    let lp1 = spec.prefix_log_probs(&syms, 1);
    let lp0 = spec.prefix_log_probs(&syms, 0);
    let values = lp1.iter().zip(&lp0).map(|(&a, &b)| log_ratio(a, b)).collect::<Result<Vec<_>>>()?;
    Ok(LlrTrajectory::new(values, LlrSource::BruteForce))
}

const DATASET_MAGIC: &str = "tandem-dataset v1";

/// Write `seqs` in the `tandem-dataset v1` CSV format.
pub fn write_dataset<W: Write>(mut w: W, seqs: &[LabeledSequence]) -> Result<()> {
    let (t_len, d) = seqs.first().map_or((0, 0), |s| (s.len(), s.dim()));
    if let Some(bad) = seqs.iter().find(|s| s.len() != t_len || s.dim() != d) {
        return Err(invalid(format!(
            "all sequences must share T={t_len}, d={d}; found T={}, d={}",
            bad.len(),
            bad.dim()
        )));
    }
    writeln!(w, "{DATASET_MAGIC}, T={t_len}, d={d}, n={}", seqs.len())?;
    for s in seqs {
        write!(w, "{},{}", s.label, s.seed)?;
        for v in s.values() {
            write!(w, ",{v:?}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

fn header_field(part: Option<&str>, key: &str) -> Result<usize> {
    part.and_then(|p| p.trim().strip_prefix(key))
        .and_then(|p| p.strip_prefix('='))
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| TandemError::Parse { line: 1, msg: format!("missing or malformed `{key}=` header field") })
}

/// Read a `tandem-dataset v1` file.
pub fn read_dataset<R: BufRead>(r: R) -> Result<Vec<LabeledSequence>> {
    let mut lines = r.lines();
    let header = lines.next().ok_or(TandemError::Empty("dataset file"))??;
    let mut parts = header.split(',');
    if parts.next().map(str::trim) != Some(DATASET_MAGIC) {
        return Err(TandemError::Parse { line: 1, msg: format!("expected `{DATASET_MAGIC}` header") });
    }
    let t_len = header_field(parts.next(), "T")?;
    let d = header_field(parts.next(), "d")?;
    let n = header_field(parts.next(), "n")?;
    let mut out = Vec::with_capacity(n);
    for (i, line) in lines.enumerate() {
        let line = line?;
        let lineno = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let perr = |msg: String| TandemError::Parse { line: lineno, msg };
        let mut fields = line.split(',');
        let label: u8 = fields
            .next()
            .and_then(|f| f.trim().parse().ok())
            .ok_or_else(|| perr("bad label".into()))?;
        let seed: u64 = fields
            .next()
            .and_then(|f| f.trim().parse().ok())
            .ok_or_else(|| perr("bad seed".into()))?;
        let values = fields
            .map(|f| f.trim().parse::<f64>().map_err(|e| perr(format!("bad value `{f}`: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if values.len() != t_len * d {
            return Err(perr(format!("expected {} values, found {}", t_len * d, values.len())));
        }
        out.push(LabeledSequence::from_flat(d, values, label, seed).map_err(|e| perr(e.to_string()))?);
    }
    if out.len() != n {
        return Err(TandemError::Parse { line: 1, msg: format!("header declares n={n}, found {}", out.len()) });
    }
    Ok(out)
}
