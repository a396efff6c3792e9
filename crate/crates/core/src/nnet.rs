//! Sliding-window recurrent posterior estimator.
//!
//! A single tanh recurrent layer followed by a two-way affine readout. For
//! every start position the cell is run from a zero hidden state over at most
//! `N+1` frames; after `k` steps the logit difference is the k-let posterior
//! log-odds for the window ending `k - 1` frames later. Each table entry is
//! therefore a pure function of its own window.
//!
//! Forward and backward passes are written out by hand; parameters live in a
//! single flat vector so the optimiser and gradient checks treat them uniformly.

use std::io::{BufRead, Write};
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rayon::prelude::*;

use crate::error::{invalid, Result, TandemError};
use crate::eval::balanced_accuracy;
use crate::losses::{self, LossWeights, DEFAULT_KLIEP_CLAMP};
use crate::rng;
use crate::synthdata::LabeledSequence;
use crate::tandem::{tandem_llr, tandem_llr_grad, LlrTrajectory, PosteriorTable, TableGrad};

static NEXT_MODEL_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_MODEL_ID.fetch_add(1, Ordering::Relaxed)
}

/// How raw frames become network inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputEncoding {
    Identity,
    /// Symbol indices in 1-dimensional frames, expanded to one-hot vectors.
    OneHot { alphabet: usize },
}

impl InputEncoding {
    fn encode(&self, seq: &LabeledSequence, d_in: usize) -> Result<Vec<f64>> {
        match *self {
            InputEncoding::Identity => {
                if seq.dim() != d_in {
                    return Err(TandemError::DimensionMismatch { expected: d_in, got: seq.dim() });
                }
                Ok(seq.values().to_vec())
            }
            InputEncoding::OneHot { alphabet } => {
                let syms = seq.symbols()?;
                let mut out = vec![0.0; syms.len() * alphabet];
                for (t, &s) in syms.iter().enumerate() {
                    if s >= alphabet {
                        return Err(invalid(format!("symbol {s} outside alphabet {alphabet}")));
                    }
                    out[t * alphabet + s] = 1.0;
                }
                Ok(out)
            }
        }
    }
}

/// Offsets of the parameter blocks inside the flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub d_in: usize,
    pub hidden: usize,
}

impl Layout {
    pub fn w_in(&self) -> std::ops::Range<usize> {
        0..self.d_in * self.hidden
    }
    pub fn w_rec(&self) -> std::ops::Range<usize> {
        let s = self.w_in().end;
        s..s + self.hidden * self.hidden
    }
    pub fn b_h(&self) -> std::ops::Range<usize> {
        let s = self.w_rec().end;
        s..s + self.hidden
    }
    pub fn w_out(&self) -> std::ops::Range<usize> {
        let s = self.b_h().end;
        s..s + 2 * self.hidden
    }
    pub fn b_out(&self) -> std::ops::Range<usize> {
        let s = self.w_out().end;
        s..s + 2
    }
    pub fn len(&self) -> usize {
        self.b_out().end
    }
    pub fn is_empty(&self) -> bool {
        false
    }
}

/// The estimator. `params` layout: `w_in (d_in x H)`, `w_rec (H x H)`,
/// `b_h (H)`, `w_out (H x 2)`, `b_out (2)`, all row-major.
#[derive(Debug)]
pub struct RecurrentEstimator {
    pub order: usize,
    pub encoding: InputEncoding,
    pub prior_logodds: f64,
    layout: Layout,
    params: Vec<f64>,
    id: u64,
    version: u64,
}

impl Clone for RecurrentEstimator {
    fn clone(&self) -> Self {
        Self { params: self.params.clone(), id: fresh_id(), version: 0, ..*self }
    }
}

impl PartialEq for RecurrentEstimator {
    fn eq(&self, other: &Self) -> bool {
        self.order == other.order
            && self.encoding == other.encoding
            && self.prior_logodds.to_bits() == other.prior_logodds.to_bits()
            && self.layout == other.layout
            && self.params.iter().zip(&other.params).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl RecurrentEstimator {
    /// All-zero parameters.
    pub fn zeros(d_in: usize, hidden: usize, order: usize) -> Result<Self> {
        if d_in == 0 || hidden == 0 {
            return Err(invalid(format!("d_in and H must be >= 1, got d_in={d_in}, H={hidden}")));
        }
        let layout = Layout { d_in, hidden };
        Ok(Self {
            order,
            encoding: InputEncoding::Identity,
            prior_logodds: 0.0,
            layout,
            params: vec![0.0; layout.len()],
            id: fresh_id(),
            version: 0,
        })
    }

    /// Uniform fan-in initialisation of the weights; biases start at zero.
    pub fn new(d_in: usize, hidden: usize, order: usize, seed: u64) -> Result<Self> {
        let mut m = Self::zeros(d_in, hidden, order)?;
        let mut r = rng::stream(seed);
        let l = m.layout;
        let fill = |p: &mut [f64], bound: f64, r: &mut rand_chacha::ChaCha8Rng| {
            p.iter_mut().for_each(|v| *v = r.random_range(-bound..bound));
        };
        fill(&mut m.params[l.w_in()], 1.0 / (d_in as f64).sqrt(), &mut r);
        fill(&mut m.params[l.w_rec()], 1.0 / (hidden as f64).sqrt(), &mut r);
        fill(&mut m.params[l.w_out()], 1.0 / (hidden as f64).sqrt(), &mut r);
        Ok(m)
    }

    pub fn with_encoding(mut self, encoding: InputEncoding) -> Result<Self> {
        if let InputEncoding::OneHot { alphabet } = encoding {
            if alphabet != self.layout.d_in {
                return Err(TandemError::DimensionMismatch { expected: self.layout.d_in, got: alphabet });
            }
        }
        self.encoding = encoding;
        Ok(self)
    }

    pub fn d_in(&self) -> usize {
        self.layout.d_in
    }

    pub fn hidden(&self) -> usize {
        self.layout.hidden
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable parameter access; invalidates outstanding forward caches.
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.version += 1;
        &mut self.params
    }

    /// Hidden step `h' = tanh(x W_in + h W_rec + b_h)`; `h = None` is the zero state.
    fn step(&self, x: &[f64], h: Option<&[f64]>, out: &mut [f64]) {
        let l = self.layout;
        let hd = l.hidden;
        out.copy_from_slice(&self.params[l.b_h()]);
        let w_in = &self.params[l.w_in()];
        for (p, &xv) in x.iter().enumerate() {
            if xv != 0.0 {
                for (o, w) in out.iter_mut().zip(&w_in[p * hd..(p + 1) * hd]) {
                    *o += xv * w;
                }
            }
        }
        if let Some(h) = h {
            let w_rec = &self.params[l.w_rec()];
            for (q, &hv) in h.iter().enumerate() {
                for (o, w) in out.iter_mut().zip(&w_rec[q * hd..(q + 1) * hd]) {
                    *o += hv * w;
                }
            }
        }
        out.iter_mut().for_each(|v| *v = v.tanh());
    }

    /// Logits `h W_out + b_out`.
    pub fn logits(&self, h: &[f64]) -> [f64; 2] {
        let l = self.layout;
        let w = &self.params[l.w_out()];
        let b = &self.params[l.b_out()];
        let mut z = [b[0], b[1]];
        for (i, &hv) in h.iter().enumerate() {
            z[0] += hv * w[2 * i];
            z[1] += hv * w[2 * i + 1];
        }
        z
    }

    /// Softmax posterior `(p(y=0), p(y=1))` for a hidden state.
    pub fn posterior(&self, h: &[f64]) -> [f64; 2] {
        let z = self.logits(h);
        let m = z[0].max(z[1]);
        let e = [(z[0] - m).exp(), (z[1] - m).exp()];
        let s = e[0] + e[1];
        [e[0] / s, e[1] / s]
    }

    /// Posterior table of every k-let (`k = 1..=N+1`) plus the forward cache.
    pub fn posterior_table(&self, seq: &LabeledSequence) -> Result<(PosteriorTable, ForwardCache)> {
        let x = self.encoding.encode(seq, self.layout.d_in)?;
        let t_len = seq.len();
        let hd = self.layout.hidden;
        let d = self.layout.d_in;
        let mut table = PosteriorTable::new(self.order, t_len, self.prior_logodds);
        let mut chains = Vec::with_capacity(t_len);
        for a in 1..=t_len {
            let steps = (self.order + 1).min(t_len - a + 1);
            let mut hs = vec![0.0; steps * hd];
            for j in 1..=steps {
                let s = a + j - 1;
                let (done, rest) = hs.split_at_mut((j - 1) * hd);
                let prev = (j > 1).then(|| &done[(j - 2) * hd..]);
                let cur = &mut rest[..hd];
                self.step(&x[(s - 1) * d..s * d], prev, cur);
                let z = self.logits(cur);
                table.set(j, s, z[1] - z[0]);
            }
            chains.push(hs);
        }
        let cache = ForwardCache { model_id: self.id, version: self.version, len: t_len, inputs: x, chains };
        Ok((table, cache))
    }

    /// TANDEM LLR trajectory of one sequence.
    pub fn llr(&self, seq: &LabeledSequence) -> Result<LlrTrajectory> {
        tandem_llr(&self.posterior_table(seq)?.0)
    }

    /// LLR trajectories of many sequences, evaluated in parallel.
    pub fn llrs(&self, seqs: &[LabeledSequence]) -> Result<Vec<LlrTrajectory>> {
        seqs.par_iter().map(|s| self.llr(s)).collect()
    }

    /// Gradient of a scalar loss with respect to `params`, given the loss
    /// gradient with respect to every entry of the table produced alongside `cache`.
    pub fn backward(&self, cache: &ForwardCache, table_grad: &TableGrad) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; self.params.len()];
        self.backward_into(cache, table_grad, &mut grad)?;
        Ok(grad)
    }

    /// Like [`Self::backward`] but accumulates into `grad`.
    pub fn backward_into(&self, cache: &ForwardCache, table_grad: &TableGrad, grad: &mut [f64]) -> Result<()> {
        if cache.model_id != self.id || cache.version != self.version {
            return Err(TandemError::StaleCache);
        }
        if grad.len() != self.params.len() {
            return Err(TandemError::DimensionMismatch { expected: self.params.len(), got: grad.len() });
        }
        if table_grad.rows.len() != self.order + 1 {
            return Err(TandemError::DimensionMismatch { expected: self.order + 1, got: table_grad.rows.len() });
        }
        let l = self.layout;
        let (hd, d) = (l.hidden, l.d_in);
        let w_out = &self.params[l.w_out()];
        let w_rec = &self.params[l.w_rec()];
        // dz1 - dz0 direction of the logit difference
        let readout: Vec<f64> = (0..hd).map(|i| w_out[2 * i + 1] - w_out[2 * i]).collect();
        let mut dh = vec![0.0; hd];
        let mut da = vec![0.0; hd];
        for (ai, hs) in cache.chains.iter().enumerate() {
            let a = ai + 1;
            let steps = hs.len() / hd;
            dh.iter_mut().for_each(|v| *v = 0.0);
            for j in (1..=steps).rev() {
                let s = a + j - 1;
                let h = &hs[(j - 1) * hd..j * hd];
                let g = table_grad.get(j, s);
                if g != 0.0 {
                    let gw = &mut grad[l.w_out()];
                    for (i, &hv) in h.iter().enumerate() {
                        gw[2 * i] -= g * hv;
                        gw[2 * i + 1] += g * hv;
                    }
                    let gb = &mut grad[l.b_out()];
                    gb[0] -= g;
                    gb[1] += g;
                    for (v, r) in dh.iter_mut().zip(&readout) {
                        *v += g * r;
                    }
                }
                for i in 0..hd {
                    da[i] = dh[i] * (1.0 - h[i] * h[i]);
                }
                let x = &cache.inputs[(s - 1) * d..s * d];
                {
                    let gw = &mut grad[l.w_in()];
                    for (p, &xv) in x.iter().enumerate() {
                        if xv != 0.0 {
                            for (g, a) in gw[p * hd..(p + 1) * hd].iter_mut().zip(&da) {
                                *g += xv * a;
                            }
                        }
                    }
                }
                for (g, a) in grad[l.b_h()].iter_mut().zip(&da) {
                    *g += a;
                }
                if j > 1 {
                    let hp = &hs[(j - 2) * hd..(j - 1) * hd];
                    let gw = &mut grad[l.w_rec()];
                    for (q, &hv) in hp.iter().enumerate() {
                        for (g, a) in gw[q * hd..(q + 1) * hd].iter_mut().zip(&da) {
                            *g += hv * a;
                        }
                    }
                    for q in 0..hd {
                        dh[q] = w_rec[q * hd..(q + 1) * hd].iter().zip(&da).map(|(w, a)| w * a).sum();
                    }
                }
            }
        }
        Ok(())
    }

    /// Write a `tandem-model v1` snapshot. Floats use shortest round-trip formatting.
    pub fn write_snapshot<W: Write>(&self, mut w: W) -> Result<()> {
        let l = self.layout;
        writeln!(w, "tandem-model v1, d_in={}, H={}, N={}", l.d_in, l.hidden, self.order)?;
        match self.encoding {
            InputEncoding::Identity => writeln!(w, "encoding,identity")?,
            InputEncoding::OneHot { alphabet } => writeln!(w, "encoding,onehot,{alphabet}")?,
        }
        writeln!(w, "prior_logodds,{:?}", self.prior_logodds)?;
        for (name, range) in [("w_in", l.w_in()), ("w_rec", l.w_rec()), ("b_h", l.b_h()), ("w_out", l.w_out()), ("b_out", l.b_out())] {
            write!(w, "{name}")?;
            for v in &self.params[range] {
                write!(w, ",{v:?}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Read a snapshot written by [`Self::write_snapshot`].
    pub fn read_snapshot<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let perr = |line: usize, msg: String| TandemError::Parse { line, msg };
        let header = lines.next().ok_or(TandemError::Empty("model snapshot"))??;
        let mut parts = header.split(',').map(str::trim);
        if parts.next() != Some("tandem-model v1") {
            return Err(perr(1, "expected `tandem-model v1` header".into()));
        }
        let mut field = |key: &str| -> Result<usize> {
            parts
                .next()
                .and_then(|p| p.strip_prefix(key))
                .and_then(|p| p.strip_prefix('='))
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| perr(1, format!("missing `{key}=` header field")))
        };
        let (d_in, hidden, order) = (field("d_in")?, field("H")?, field("N")?);
        let mut m = Self::zeros(d_in, hidden, order)?;
        let l = m.layout;
        let mut seen = 0;
        for (i, line) in lines.enumerate() {
            let lineno = i + 2;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut cells = line.split(',');
            let name = cells.next().unwrap_or_default();
            let rest: Vec<&str> = cells.collect();
            let floats = || -> Result<Vec<f64>> {
                rest.iter()
                    .map(|c| c.trim().parse::<f64>().map_err(|e| perr(lineno, format!("bad value `{c}`: {e}"))))
                    .collect()
            };
            match name {
                "encoding" => {
                    m.encoding = match rest.as_slice() {
                        ["identity"] => InputEncoding::Identity,
                        ["onehot", a] => InputEncoding::OneHot {
                            alphabet: a.parse().map_err(|_| perr(lineno, format!("bad alphabet `{a}`")))?,
                        },
                        _ => return Err(perr(lineno, "unknown encoding".into())),
                    }
                }
                "prior_logodds" => {
                    m.prior_logodds =
                        *floats()?.first().ok_or_else(|| perr(lineno, "missing prior value".into()))?
                }
                block => {
                    let range = match block {
                        "w_in" => l.w_in(),
                        "w_rec" => l.w_rec(),
                        "b_h" => l.b_h(),
                        "w_out" => l.w_out(),
                        "b_out" => l.b_out(),
                        other => return Err(perr(lineno, format!("unknown block `{other}`"))),
                    };
                    let vals = floats()?;
                    if vals.len() != range.len() {
                        return Err(perr(lineno, format!("{block}: expected {} values, got {}", range.len(), vals.len())));
                    }
                    m.params[range].copy_from_slice(&vals);
                    seen += 1;
                }
            }
        }
        if seen != 5 {
            return Err(perr(0, format!("expected 5 parameter blocks, found {seen}")));
        }
        Ok(m)
    }

    /// Short content hash of the parameters, used as a snapshot id.
    pub fn fingerprint(&self) -> String {
        // FNV-1a over the raw bits
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in &self.params {
            for b in v.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        format!("{h:016x}")
    }
}

/// Hidden states of every window chain from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    model_id: u64,
    version: u64,
    len: usize,
    inputs: Vec<f64>,
    /// `chains[a-1]` holds the hidden states of the chain starting at frame `a`.
    chains: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Sum of hidden-state (bottleneck feature) norms and their count.
    pub fn feature_norm_sum(&self, hidden: usize) -> (f64, usize) {
        let mut total = 0.0;
        let mut count = 0;
        for hs in &self.chains {
            for h in hs.chunks_exact(hidden) {
                total += h.iter().map(|v| v * v).sum::<f64>().sqrt();
                count += 1;
            }
        }
        (total, count)
    }
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second moment estimates and the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], step: 0 }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    let n = params.len();
    if grads.len() != n || state.m.len() != n || state.v.len() != n {
        return Err(TandemError::DimensionMismatch { expected: n, got: grads.len() });
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(TandemError::NonFinite(format!("gradient entry {i} is {}", grads[i])));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..n {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub weights: LossWeights,
    pub clamp: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::DEFAULT,
            clamp: DEFAULT_KLIEP_CLAMP,
            epochs: 50,
            batch_size: 64,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

/// Per-epoch training diagnostics. Loss values are means over the epoch's batches.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub total: f64,
    pub lllr: f64,
    pub multiplet: f64,
    pub kliep: f64,
    pub val_balanced_acc: f64,
    pub feature_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub records: Vec<EpochRecord>,
    /// Fingerprint of the final parameters.
    pub snapshot_id: String,
}

/// Loss, gradient and feature statistics of one batch.
pub struct BatchGradient {
    pub loss: losses::LossBreakdown,
    pub grad: Vec<f64>,
}

/// Loss and full parameter gradient over a batch (composition of the network,
/// the TANDEM formula and the weighted losses).
pub fn batch_gradient(
    model: &RecurrentEstimator,
    batch: &[&LabeledSequence],
    weights: LossWeights,
    clamp: f64,
) -> Result<BatchGradient> {
    let forwards: Vec<(PosteriorTable, ForwardCache, Vec<f64>)> = batch
        .par_iter()
        .map(|s| {
            let (tab, cache) = model.posterior_table(s)?;
            let llr = tandem_llr(&tab)?.values;
            Ok((tab, cache, llr))
        })
        .collect::<Result<_>>()?;
    let labels: Vec<u8> = batch.iter().map(|s| s.label).collect();
    let tables: Vec<PosteriorTable> = forwards.iter().map(|f| f.0.clone()).collect();
    let llrs: Vec<&[f64]> = forwards.iter().map(|f| f.2.as_slice()).collect();
    let loss = losses::evaluate(&tables, &llrs, &labels, weights, clamp)?;
    if !loss.total.is_finite() {
        return Err(TandemError::NonFinite(format!("batch loss {}", loss.total)));
    }
    let per_seq: Vec<Vec<f64>> = forwards
        .par_iter()
        .enumerate()
        .map(|(i, (tab, cache, _))| {
            let mut g = match loss.llr_grads.get(i) {
                Some(u) => tandem_llr_grad(tab, u)?,
                None => TableGrad::zeros_like(tab),
            };
            if let Some(tg) = loss.table_grads.get(i) {
                g.accumulate(tg);
            }
            model.backward(cache, &g)
        })
        .collect::<Result<_>>()?;
    let mut grad = vec![0.0; model.params().len()];
    for g in &per_seq {
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    Ok(BatchGradient { loss, grad })
}

/// Balanced accuracy of the forced decision `lambda_T >= 0` and the mean
/// bottleneck-feature norm over `seqs`.
pub fn validation_metrics(model: &RecurrentEstimator, seqs: &[LabeledSequence]) -> Result<(f64, f64)> {
    let res: Vec<(u8, f64, usize)> = seqs
        .par_iter()
        .map(|s| {
            let (tab, cache) = model.posterior_table(s)?;
            let llr = tandem_llr(&tab)?;
            let last = *llr.values.last().ok_or(TandemError::Empty("sequence"))?;
            let (norm, count) = cache.feature_norm_sum(model.hidden());
            Ok((u8::from(last >= 0.0), norm, count))
        })
        .collect::<Result<_>>()?;
    let preds: Vec<u8> = res.iter().map(|r| r.0).collect();
    let labels: Vec<u8> = seqs.iter().map(|s| s.label).collect();
    let acc = balanced_accuracy(&preds, &labels).unwrap_or(f64::NAN);
    let (norm, count) = res.iter().fold((0.0, 0usize), |(a, c), r| (a + r.1, c + r.2));
    Ok((acc, if count == 0 { 0.0 } else { norm / count as f64 }))
}

/// Train in place. Deterministic given `cfg.seed`.
pub fn train(
    model: &mut RecurrentEstimator,
    train_set: &[LabeledSequence],
    val_set: &[LabeledSequence],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    train_with_observer(model, train_set, val_set, cfg, |_, _| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with_observer<F>(
    model: &mut RecurrentEstimator,
    train_set: &[LabeledSequence],
    val_set: &[LabeledSequence],
    cfg: &TrainConfig,
    mut observer: F,
) -> Result<TrainReport>
where
    F: FnMut(&EpochRecord, &RecurrentEstimator),
{
    if train_set.is_empty() {
        return Err(TandemError::Empty("training set"));
    }
    if cfg.batch_size == 0 {
        return Err(invalid("batch size must be >= 1"));
    }
    cfg.weights.validate()?;
    let t_len = train_set[0].len();
    if let Some(bad) = train_set.iter().find(|s| s.len() != t_len) {
        return Err(invalid(format!("training sequences must share T={t_len}, found T={}", bad.len())));
    }
    if cfg.weights.multiplet > 0.0 && t_len <= model.order {
        return Err(invalid(format!("multiplet loss needs T > N, got T={t_len}, N={}", model.order)));
    }
    let monitor = if val_set.is_empty() { train_set } else { val_set };
    let mut state = AdamState::new(model.params().len());
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut records = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut r = rng::substream(cfg.seed, epoch as u64);
        // Fisher-Yates with the epoch's own stream
        for i in (1..order.len()).rev() {
            order.swap(i, r.random_range(0..=i));
        }
        let mut sums = [0.0; 4];
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&LabeledSequence> = chunk.iter().map(|&i| &train_set[i]).collect();
            let bg = batch_gradient(model, &batch, cfg.weights, cfg.clamp)?;
            adam_step(model.params_mut(), &bg.grad, &mut state, &cfg.adam)?;
            sums[0] += bg.loss.total;
            sums[1] += bg.loss.lllr;
            sums[2] += bg.loss.multiplet;
            sums[3] += bg.loss.kliep;
            batches += 1;
        }
        let (val_acc, norm) = validation_metrics(model, monitor)?;
        let nb = batches as f64;
        let rec = EpochRecord {
            epoch: epoch + 1,
            total: sums[0] / nb,
            lllr: sums[1] / nb,
            multiplet: sums[2] / nb,
            kliep: sums[3] / nb,
            val_balanced_acc: val_acc,
            feature_norm: norm,
        };
        observer(&rec, model);
        records.push(rec);
    }
    Ok(TrainReport { records, snapshot_id: model.fingerprint() })
}
