//! N-th order TANDEM decomposition of the sequential log-likelihood ratio.
//!
//! Under an N-th order Markov assumption the joint LLR of `x(1..t)` is a sum
//! of (N+1)-let posterior log-odds minus N-let posterior log-odds minus the
//! prior log-odds:
//!
//! ```text
//! t <= N+1:  lambda_t = L[t][t] - prior
//! t >= N+2:  lambda_t = sum_{s=N+1..t} L[N+1][s] - sum_{s=N+2..t} L[N][s-1] - prior
//! ```
//!
//! where `L[k][s]` is the log-odds of class 1 given the `k` frames ending at
//! `s`, and the `k = 0` row is the prior itself. With that convention `N = 0`
//! reduces to `sum_s L[1][s] - t * prior`.

use crate::error::{Result, TandemError};

/// Where an LLR trajectory came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LlrSource {
    Analytic,
    BruteForce,
    Tandem,
}

/// `lambda_t` for `t = 1..=T` (index `t - 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct LlrTrajectory {
    pub values: Vec<f64>,
    pub source: LlrSource,
    /// Set when any value is an infinite support-mismatch sentinel.
    pub sentinel: bool,
}

impl LlrTrajectory {
    pub fn new(values: Vec<f64>, source: LlrSource) -> Self {
        let sentinel = values.iter().any(|v| v.is_infinite());
        Self { values, source, sentinel }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `lambda_t`, 1-based.
    pub fn at(&self, t: usize) -> f64 {
        self.values[t - 1]
    }
}

/// Posterior log-odds of every k-let window, `k = 0..=N+1`.
///
/// Row `k >= 1` holds entries for end times `s = k..=T`; row 0 is implicit and
/// equals `prior_logodds` everywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorTable {
    order: usize,
    len: usize,
    pub prior_logodds: f64,
    rows: Vec<Vec<f64>>,
}

impl PosteriorTable {
    /// Zero-filled table of order `order` for a length-`len` sequence.
    pub fn new(order: usize, len: usize, prior_logodds: f64) -> Self {
        let rows = (1..=order + 1).map(|k| vec![0.0; (len + 1).saturating_sub(k)]).collect();
        Self { order, len, prior_logodds, rows }
    }

    /// Build from explicit rows `k = 1..=order+1`, checking every shape.
    pub fn from_rows(order: usize, len: usize, prior_logodds: f64, rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.len() != order + 1 {
            return Err(TandemError::Structural(format!("expected {} rows, got {}", order + 1, rows.len())));
        }
        for (i, row) in rows.iter().enumerate() {
            let k = i + 1;
            let want = (len + 1).saturating_sub(k);
            if row.len() != want {
                return Err(TandemError::Structural(format!("row k={k} has {} entries, expected {want}", row.len())));
            }
        }
        Ok(Self { order, len, prior_logodds, rows })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// `L[k][s]` for `0 <= k <= N+1`, `max(k,1) <= s <= T`.
    pub fn get(&self, k: usize, s: usize) -> f64 {
        assert!(k <= self.order + 1 && s >= k.max(1) && s <= self.len, "L[{k}][{s}] out of range");
        if k == 0 {
            self.prior_logodds
        } else {
            self.rows[k - 1][s - k]
        }
    }

    /// Set `L[k][s]` for `k >= 1`.
    pub fn set(&mut self, k: usize, s: usize, v: f64) {
        assert!(k >= 1 && k <= self.order + 1 && s >= k && s <= self.len, "L[{k}][{s}] out of range");
        self.rows[k - 1][s - k] = v;
    }

    /// Row `k >= 1`, indexed by `s - k`.
    pub fn row(&self, k: usize) -> &[f64] {
        &self.rows[k - 1]
    }

    pub fn row_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.rows[k - 1]
    }
}

/// Gradient of a scalar with respect to every free entry of a [`PosteriorTable`].
///
/// Row 0 is tied to the prior, so its contributions are folded into `prior`.
#[derive(Debug, Clone, PartialEq)]
pub struct TableGrad {
    pub prior: f64,
    pub rows: Vec<Vec<f64>>,
}

impl TableGrad {
    pub fn zeros_like(table: &PosteriorTable) -> Self {
        Self { prior: 0.0, rows: table.rows.iter().map(|r| vec![0.0; r.len()]).collect() }
    }

    /// `d/dL[k][s]` for `k >= 1`.
    pub fn get(&self, k: usize, s: usize) -> f64 {
        self.rows[k - 1][s - k]
    }

    fn add(&mut self, k: usize, s: usize, v: f64) {
        if k == 0 {
            self.prior += v;
        } else {
            self.rows[k - 1][s - k] += v;
        }
    }

    pub fn accumulate(&mut self, other: &TableGrad) {
        self.prior += other.prior;
        for (a, b) in self.rows.iter_mut().zip(&other.rows) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

fn checked(v: f64, t: usize) -> Result<f64> {
    if v.is_nan() {
        Err(TandemError::IndeterminateSentinel { t })
    } else {
        Ok(v)
    }
}

/// LLR trajectory from a posterior table.
pub fn tandem_llr(table: &PosteriorTable) -> Result<LlrTrajectory> {
    let n = table.order;
    let prior = table.prior_logodds;
    if !prior.is_finite() {
        return Err(TandemError::Structural(format!("prior log-odds must be finite, got {prior}")));
    }
    if table.rows.iter().flatten().any(|v| v.is_nan()) {
        return Err(TandemError::Structural("NaN entry".into()));
    }
    let mut out = Vec::with_capacity(table.len);
    let mut plus = 0.0;
    let mut minus = 0.0;
    for t in 1..=table.len {
        let v = if t <= n + 1 {
            table.get(t, t) - prior
        } else {
            if t == n + 2 {
                plus = table.get(n + 1, n + 1);
            }
            plus = checked(plus + table.get(n + 1, t), t)?;
            minus = checked(minus + table.get(n, t - 1), t)?;
            plus - minus - prior
        };
        out.push(checked(v, t)?);
    }
    Ok(LlrTrajectory::new(out, LlrSource::Tandem))
}

/// Vector-Jacobian product of [`tandem_llr`]: given `upstream[t-1] = dF/dlambda_t`,
/// returns `dF/dL[k][s]` for every entry and `dF/dprior`.
pub fn tandem_llr_grad(table: &PosteriorTable, upstream: &[f64]) -> Result<TableGrad> {
    let t_len = table.len;
    if upstream.len() != t_len {
        return Err(TandemError::DimensionMismatch { expected: t_len, got: upstream.len() });
    }
    let n = table.order;
    let mut g = TableGrad::zeros_like(table);
    // every lambda_t carries -prior
    g.prior -= upstream.iter().sum::<f64>();
    // boundary: lambda_t = L[t][t] - prior for t <= N (t = N+1 is covered below)
    for t in 1..=t_len.min(n) {
        g.add(t, t, upstream[t - 1]);
    }
    if t_len > n {
        // suffix[s] = sum_{t >= s} upstream[t-1]
        let mut suffix = vec![0.0; t_len + 2];
        for s in (1..=t_len).rev() {
            suffix[s] = suffix[s + 1] + upstream[s - 1];
        }
        for s in (n + 1)..=t_len {
            g.add(n + 1, s, suffix[s]);
        }
        for s in (n + 2)..=t_len {
            g.add(n, s - 1, -suffix[s]);
        }
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::synthdata::{
        brute_force_llr_discrete, exact_posteriors_discrete, gen_discrete_markov, DiscreteMarkovSpec,
        DEFAULT_ENUMERATION_CAP,
    };
    use rand::Rng;

    fn random_table(order: usize, len: usize, seed: u64) -> PosteriorTable {
        let mut r = rng::stream(seed);
        let mut tab = PosteriorTable::new(order, len, r.random_range(-1.0..1.0));
        for k in 1..=order + 1 {
            for v in tab.row_mut(k) {
                *v = r.random_range(-3.0..3.0);
            }
        }
        tab
    }

    #[test]
    fn constant_singlets() {
        let mut tab = PosteriorTable::new(0, 5, 0.0);
        tab.row_mut(1).fill(0.7);
        let l = tandem_llr(&tab).unwrap();
        for t in 1..=5 {
            assert!((l.at(t) - 0.7 * t as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn first_order_doublet_minus_singlet() {
        let (a, b, c) = (0.4, -1.3, 0.25);
        let mut tab = PosteriorTable::new(1, 3, 0.0);
        tab.set(2, 2, a);
        tab.set(2, 3, b);
        tab.set(1, 2, c);
        tab.set(1, 1, 9.0);
        let l = tandem_llr(&tab).unwrap();
        assert_eq!(l.at(1), 9.0);
        assert_eq!(l.at(2), a);
        assert!((l.at(3) - (a + b - c)).abs() < 1e-15);
    }

    #[test]
    fn matches_brute_force_on_markov_chains() {
        let mut r = rng::stream(1);
        for order in 0..=2 {
            let spec = DiscreteMarkovSpec::random(order, 2, 0.4, &mut r).unwrap();
            for seq in gen_discrete_markov(&spec, 3, 7, 5).unwrap() {
                let bf = brute_force_llr_discrete(&seq, &spec).unwrap();
                for n_out in order..=3 {
                    let tab = exact_posteriors_discrete(&seq, &spec, n_out, DEFAULT_ENUMERATION_CAP).unwrap();
                    let l = tandem_llr(&tab).unwrap();
                    for (x, y) in l.values.iter().zip(&bf.values) {
                        assert!((x - y).abs() < 1e-9, "order {order} N {n_out}: {x} vs {y}");
                    }
                }
            }
        }
    }

    #[test]
    fn structural_errors() {
        assert!(PosteriorTable::from_rows(1, 3, 0.0, vec![vec![0.0; 3]]).is_err());
        assert!(PosteriorTable::from_rows(1, 3, 0.0, vec![vec![0.0; 3], vec![0.0; 3]]).is_err());
        assert!(PosteriorTable::from_rows(1, 3, 0.0, vec![vec![0.0; 3], vec![0.0; 2]]).is_ok());
        let tab = PosteriorTable::new(0, 3, 0.0);
        assert!(tandem_llr_grad(&tab, &[1.0]).is_err());
    }

    #[test]
    fn sentinels_propagate_or_fail() {
        let mut tab = PosteriorTable::new(0, 3, 0.0);
        tab.set(1, 2, f64::INFINITY);
        let l = tandem_llr(&tab).unwrap();
        assert!(l.sentinel);
        assert_eq!(l.at(3), f64::INFINITY);
        tab.set(1, 3, f64::NEG_INFINITY);
        assert!(matches!(tandem_llr(&tab), Err(TandemError::IndeterminateSentinel { t: 3 })));
        // first order: the +inf singlet is subtracted after entering a doublet
        let mut tab = PosteriorTable::new(1, 3, 0.0);
        tab.set(2, 2, f64::INFINITY);
        tab.set(2, 3, f64::INFINITY);
        tab.set(1, 2, f64::INFINITY);
        assert!(matches!(tandem_llr(&tab), Err(TandemError::IndeterminateSentinel { t: 3 })));
    }

    #[test]
    fn zero_upstream_zero_grad() {
        let tab = random_table(2, 6, 3);
        let g = tandem_llr_grad(&tab, &[0.0; 6]).unwrap();
        assert_eq!(g.prior, 0.0);
        assert!(g.rows.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn order_zero_one_hot_upstream() {
        let tab = random_table(0, 6, 4);
        let mut u = vec![0.0; 6];
        u[3] = 1.0;
        let g = tandem_llr_grad(&tab, &u).unwrap();
        for s in 1..=6 {
            assert_eq!(g.get(1, s), if s <= 4 { 1.0 } else { 0.0 });
        }
        assert_eq!(g.prior, -4.0);
    }

    #[test]
    fn grad_matches_finite_differences() {
        for (seed, order) in [(10u64, 0usize), (11, 1), (12, 2), (13, 3), (14, 6)] {
            let tab = random_table(order, 6, seed);
            let mut r = rng::stream(seed + 100);
            let u: Vec<f64> = (0..6).map(|_| r.random_range(-1.0..1.0)).collect();
            let f = |t: &PosteriorTable| -> f64 {
                tandem_llr(t).unwrap().values.iter().zip(&u).map(|(a, b)| a * b).sum()
            };
            let g = tandem_llr_grad(&tab, &u).unwrap();
            let h = 1e-5;
            for k in 1..=order + 1 {
                for s in k..=6 {
                    let mut p = tab.clone();
                    p.set(k, s, tab.get(k, s) + h);
                    let mut m = tab.clone();
                    m.set(k, s, tab.get(k, s) - h);
                    let fd = (f(&p) - f(&m)) / (2.0 * h);
                    let an = g.get(k, s);
                    assert!((fd - an).abs() <= 1e-6 * an.abs().max(1.0), "k={k} s={s}: {fd} vs {an}");
                }
            }
            let mut p = tab.clone();
            p.prior_logodds += h;
            let mut m = tab.clone();
            m.prior_logodds -= h;
            let fd = (f(&p) - f(&m)) / (2.0 * h);
            assert!((fd - g.prior).abs() <= 1e-6 * g.prior.abs().max(1.0));
        }
    }
}
