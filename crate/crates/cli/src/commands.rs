use std::fs::File;
use std::io::BufReader;

use anyhow::{bail, ensure, Context, Result};
use log::{info, warn};

use tandem_core::eval::{self, SatPoint};
use tandem_core::losses::LossWeights;
use tandem_core::nnet::{self, AdamConfig, InputEncoding, RecurrentEstimator, TrainConfig};
use tandem_core::rng::substream_seed;
use tandem_core::sprt::{self, DecisionOutcome, Thresholds};
use tandem_core::synthdata::{self as sd, GaussPairSpec, LabeledSequence, DEFAULT_ENUMERATION_CAP};
use tandem_core::tandem::{tandem_llr, LlrTrajectory};

use crate::cells;
use crate::config::{DataSpec, ExperimentConfig, LlrSourceConfig};
use crate::output::{svg_lines, write_atomic, Csv, OutputDir};

pub const SAT_HEADER: &[&str] = &["a0", "a1", "mean_hitting_time", "balanced_accuracy", "n_trials", "sem"];
pub const TRAIN_HEADER: &[&str] = &["epoch", "total", "lllr", "multiplet", "kliep", "val_balanced_acc", "feature_norm"];
pub const NP_HEADER: &[&str] =
    &["alpha", "beta", "np_n", "sprt_mean_tau_0", "sprt_mean_tau_1", "ratio_0", "ratio_1", "sem_0", "sem_1"];
pub const ORACLE_HEADER: &[&str] = &["check", "status", "detail"];
pub const ERROR_RATES_HEADER: &[&str] = &["a0", "a1", "alpha0", "alpha1", "sem0", "sem1", "n0", "n1"];
pub const DECISIONS_HEADER: &[&str] =
    &["a0", "a1", "sequence", "label", "decision", "tau", "terminal_llr", "overshoot", "forced"];
pub const ABLATION_HEADER: &[&str] =
    &["loss", "a0", "a1", "mean_hitting_time", "balanced_accuracy", "n_trials", "sem"];

/// Loss configurations compared by `ablation`.
pub const ABLATIONS: [(&str, LossWeights); 4] = [
    ("lllr_multiplet", LossWeights { lllr: 1.0, multiplet: 1.0, kliep: 0.0 }),
    ("multiplet", LossWeights { lllr: 0.0, multiplet: 1.0, kliep: 0.0 }),
    ("lllr", LossWeights { lllr: 1.0, multiplet: 0.0, kliep: 0.0 }),
    ("kliep_multiplet", LossWeights { lllr: 0.0, multiplet: 1.0, kliep: 1.0 }),
];

const SPLITS: [&str; 3] = ["train", "val", "test"];
const TANDEM_TOL: f64 = 1e-9;
const GRAD_TOL: f64 = 1e-5;

// seed streams derived from the dataset seed
const MODEL_STREAM: u64 = 10;
const SHUFFLE_STREAM: u64 = 11;
const MC_STREAM: u64 = 12;

/// A command invocation: validated config plus a locked output directory.
pub struct Run {
    pub cfg: ExperimentConfig,
    pub spec: DataSpec,
    pub out: OutputDir,
    pub plots: bool,
}

impl Run {
    pub fn new(cfg: ExperimentConfig, plots: bool) -> Result<Self> {
        let spec = cfg.data_spec()?;
        let out = OutputDir::acquire(&cfg.output_dir)?;
        Ok(Self { cfg, spec, out, plots })
    }

    fn seed(&self, stream: u64) -> u64 {
        substream_seed(self.cfg.dataset.seed, stream)
    }

    fn n_split(&self, split: usize) -> usize {
        let d = &self.cfg.dataset;
        [d.n_train, d.n_val, d.n_test][split]
    }

    fn generate_split(&self, split: usize) -> Result<Vec<LabeledSequence>> {
        let d = &self.cfg.dataset;
        let (n, t, p, seed) = (self.n_split(split), d.t_len, d.prior, self.seed(split as u64));
        Ok(match &self.spec {
            DataSpec::Iid(g) => sd::gen_iid_gauss(g, n, t, p, seed)?,
            DataSpec::Ramp(g) => sd::gen_ramp_gauss(g, n, t, p, seed)?,
            DataSpec::Ar1(a) => sd::gen_ar1_gauss(a, n, t, p, seed)?,
            DataSpec::Discrete(m) => sd::gen_discrete_markov(m, n, t, seed)?,
        })
    }

    /// Read `<split>.csv` from the output directory if `generate` wrote it, else regenerate.
    fn split(&self, split: usize) -> Result<Vec<LabeledSequence>> {
        let path = self.out.path(format!("{}.csv", SPLITS[split]));
        if !path.exists() {
            return self.generate_split(split);
        }
        let f = File::open(&path).with_context(|| format!("opening {}", path.display()))?;
        let seqs = sd::read_dataset(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))?;
        if let Some(s) = seqs.first() {
            ensure!(
                s.len() == self.cfg.dataset.t_len && s.dim() == self.spec.frame_dim(),
                "{}: T={}, d={} does not match the config (T={}, d={})",
                path.display(),
                s.len(),
                s.dim(),
                self.cfg.dataset.t_len,
                self.spec.frame_dim()
            );
        }
        Ok(seqs)
    }

    fn fresh_model(&self) -> Result<RecurrentEstimator> {
        let m = &self.cfg.model;
        let mut model = RecurrentEstimator::new(self.spec.input_dim(), m.hidden, m.order, self.seed(MODEL_STREAM))?;
        if let DataSpec::Discrete(d) = &self.spec {
            model = model.with_encoding(InputEncoding::OneHot { alphabet: d.alphabet })?;
        }
        let p = self.cfg.dataset.prior;
        model.prior_logodds = (p / (1.0 - p)).ln();
        Ok(model)
    }

    fn train_config(&self, weights: LossWeights) -> TrainConfig {
        let t = &self.cfg.train;
        TrainConfig {
            weights,
            clamp: self.cfg.loss.clamp,
            epochs: t.epochs,
            batch_size: t.batch,
            adam: AdamConfig { lr: t.lr, ..AdamConfig::default() },
            seed: self.seed(SHUFFLE_STREAM),
        }
    }

    fn fit(&self, weights: LossWeights, tag: &str) -> Result<(RecurrentEstimator, nnet::TrainReport)> {
        let train = self.split(0)?;
        let val = self.split(1)?;
        let mut model = self.fresh_model()?;
        let report = nnet::train_with_observer(&mut model, &train, &val, &self.train_config(weights), |r, _| {
            info!(
                "{tag} epoch {}: loss {:.5} (lllr {:.5}, multiplet {:.5}, kliep {:.5}) val BA {:.4}",
                r.epoch, r.total, r.lllr, r.multiplet, r.kliep, r.val_balanced_acc
            );
        })?;
        Ok((model, report))
    }

    fn oracle_llrs(&self, seqs: &[LabeledSequence]) -> Result<Vec<LlrTrajectory>> {
        seqs.iter()
            .map(|s| {
                Ok(match &self.spec {
                    DataSpec::Iid(g) => sd::analytic_llr_iid(s, g)?,
                    DataSpec::Ramp(g) => sd::analytic_llr_ramp(s, g)?,
                    DataSpec::Ar1(a) => sd::analytic_llr_ar1(s, a)?,
                    DataSpec::Discrete(m) => sd::brute_force_llr_discrete(s, m)?,
                })
            })
            .collect()
    }

    fn load_model(&self) -> Result<RecurrentEstimator> {
        let path = self.cfg.snapshot_path();
        let f = File::open(&path)
            .with_context(|| format!("model.snapshot: cannot open {} (run `train` first)", path.display()))?;
        let model = RecurrentEstimator::read_snapshot(BufReader::new(f))
            .with_context(|| format!("reading snapshot {}", path.display()))?;
        ensure!(
            model.d_in() == self.spec.input_dim() && model.order == self.cfg.model.order,
            "snapshot {} has d_in={}, N={} but the config implies d_in={}, N={}",
            path.display(),
            model.d_in(),
            model.order,
            self.spec.input_dim(),
            self.cfg.model.order
        );
        Ok(model)
    }

    fn thresholds(&self) -> Result<Vec<Thresholds>> {
        Ok(self.cfg.thresholds().into_iter().map(Thresholds::symmetric).collect::<Result<_, _>>()?)
    }

    fn plot(&self, name: &str, title: &str, x: &str, y: &str, series: &[(String, Vec<(f64, f64)>)]) -> Result<()> {
        if self.plots {
            self.out.write(name, svg_lines(title, x, y, series).as_bytes())?;
        }
        Ok(())
    }
}

fn sat_series(points: &[SatPoint]) -> Vec<(f64, f64)> {
    let mut p: Vec<(f64, f64)> = points.iter().map(|p| (p.mean_hitting_time, p.balanced_accuracy)).collect();
    p.sort_by(|a, b| a.0.total_cmp(&b.0));
    p
}

pub fn generate(run: &Run) -> Result<()> {
    for (i, name) in SPLITS.iter().enumerate() {
        let seqs = run.generate_split(i)?;
        let mut buf = Vec::new();
        sd::write_dataset(&mut buf, &seqs)?;
        let path = run.out.write(format!("{name}.csv"), &buf)?;
        info!("wrote {} sequences to {}", seqs.len(), path.display());
    }
    Ok(())
}

pub fn train(run: &Run) -> Result<()> {
    let (model, report) = run.fit(run.cfg.loss.weights.into(), "train")?;
    let mut snap = Vec::new();
    model.write_snapshot(&mut snap)?;
    write_atomic(&run.cfg.snapshot_path(), &snap)?;
    info!("snapshot {} written to {}", report.snapshot_id, run.cfg.snapshot_path().display());

    let mut csv = Csv::new(TRAIN_HEADER);
    for r in &report.records {
        csv.row(cells![r.epoch, r.total, r.lllr, r.multiplet, r.kliep, r.val_balanced_acc, r.feature_norm]);
    }
    run.out.write("train_report.csv", csv.as_bytes())?;
    let losses = report.records.iter().map(|r| (r.epoch as f64, r.total)).collect();
    run.plot("train_loss.svg", "training loss", "epoch", "loss", &[("total".into(), losses)])
}

pub fn evaluate(run: &Run) -> Result<()> {
    let test = run.split(2)?;
    ensure!(!test.is_empty(), "dataset.n_test: evaluation needs at least one test sequence");
    let llrs = match run.cfg.eval.llr_source {
        LlrSourceConfig::Model => run.load_model()?.llrs(&test)?,
        LlrSourceConfig::Analytic => run.oracle_llrs(&test)?,
    };
    let labels: Vec<u8> = test.iter().map(|s| s.label).collect();
    let values: Vec<&[f64]> = llrs.iter().map(|l| l.values.as_slice()).collect();
    let horizon = run.cfg.dataset.t_len;
    let thresholds = run.thresholds()?;

    let mut sat = Csv::new(SAT_HEADER);
    let mut rates = Csv::new(ERROR_RATES_HEADER);
    let mut decisions = Csv::new(DECISIONS_HEADER);
    let single_class = labels.iter().all(|&y| y == labels[0]);
    if single_class {
        warn!("test set holds one class only; balanced accuracy and error rates are undefined");
    }
    let mut points = Vec::new();
    for &thr in &thresholds {
        let out: Vec<DecisionOutcome> = eval::sprt_decisions(&values, thr, horizon)?;
        for (i, (d, &y)) in out.iter().zip(&labels).enumerate() {
            decisions.row(cells![thr.a0, thr.a1, i, y, d.label, d.tau, d.terminal_llr, d.overshoot, d.forced]);
        }
        if single_class {
            continue;
        }
        let preds: Vec<u8> = out.iter().map(|d| d.label).collect();
        let r = eval::error_rates(&preds, &labels)?;
        rates.row(cells![thr.a0, thr.a1, r.alpha0, r.alpha1, r.sem0, r.sem1, r.n0, r.n1]);
        let p = eval::sat_curve(&values, &labels, &[thr], horizon)?[0];
        sat.row(cells![p.a0, p.a1, p.mean_hitting_time, p.balanced_accuracy, p.n_trials, p.sem]);
        points.push(p);
    }
    run.out.write("sat_curve.csv", sat.as_bytes())?;
    run.out.write("error_rates.csv", rates.as_bytes())?;
    run.out.write("decisions.csv", decisions.as_bytes())?;
    info!("evaluated {} sequences at {} thresholds", test.len(), thresholds.len());
    run.plot("sat_curve.svg", "speed-accuracy tradeoff", "mean hitting time", "balanced accuracy", &[(
        format!("{:?}", run.cfg.eval.llr_source).to_lowercase(),
        sat_series(&points),
    )])
}

pub fn np_compare(run: &Run) -> Result<()> {
    let DataSpec::Iid(spec) = &run.spec else {
        bail!("dataset.generator: np-compare needs kind \"iid_gauss\"");
    };
    ensure!(!run.cfg.eval.np_alphas.is_empty(), "eval.np_alphas: nothing to compare");
    let mut csv = Csv::new(NP_HEADER);
    let mut series = vec![(String::from("ratio_0"), Vec::new()), (String::from("ratio_1"), Vec::new())];
    for (i, &alpha) in run.cfg.eval.np_alphas.iter().enumerate() {
        let seed = substream_seed(run.seed(MC_STREAM), i as u64);
        let e = eval::np_efficiency(spec, alpha, alpha, run.cfg.eval.trials, seed)?;
        info!("alpha {alpha}: NP n={}, SPRT E0 {:.3} E1 {:.3}", e.np_n, e.sprt_mean_tau_0, e.sprt_mean_tau_1);
        csv.row(cells![e.alpha, e.beta, e.np_n, e.sprt_mean_tau_0, e.sprt_mean_tau_1, e.ratio_0, e.ratio_1, e.sem_0, e.sem_1]);
        series[0].1.push((alpha.log10(), e.ratio_0));
        series[1].1.push((alpha.log10(), e.ratio_1));
    }
    run.out.write("np_efficiency.csv", csv.as_bytes())?;
    run.plot("np_efficiency.svg", "SPRT / NP sample ratio", "log10 alpha", "E[tau] / n", &series)
}

/// Outcome of one oracle check.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleRow {
    pub check: &'static str,
    pub status: &'static str,
    pub detail: String,
}

fn row(check: &'static str, ok: bool, pass_detail: String, fail_detail: String) -> OracleRow {
    if ok {
        OracleRow { check, status: "pass", detail: pass_detail }
    } else {
        OracleRow { check, status: "fail", detail: fail_detail }
    }
}

fn tandem_check(run: &Run) -> Result<OracleRow> {
    let DataSpec::Discrete(spec) = &run.spec else {
        return Ok(OracleRow {
            check: "tandem_exactness",
            status: "skip",
            detail: "needs a discrete_markov generator".into(),
        });
    };
    let order = spec.order.max(run.cfg.model.order);
    let seqs = run.generate_split(2)?;
    let mut worst: f64 = 0.0;
    for s in seqs.iter().take(500) {
        let table = sd::exact_posteriors_discrete(s, spec, order, DEFAULT_ENUMERATION_CAP)?;
        let got = tandem_llr(&table)?;
        let want = sd::brute_force_llr_discrete(s, spec)?;
        for (a, b) in got.values.iter().zip(&want.values) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(row("tandem_exactness", worst < TANDEM_TOL, format!("max_abs_err<{TANDEM_TOL:e}"), format!("max_abs_err={worst:e}")))
}

fn gradient_check(run: &Run) -> Result<OracleRow> {
    let t_len = run.cfg.dataset.t_len.min(run.cfg.model.order + 3);
    let mut seqs = run.generate_split(2)?;
    if seqs.len() < 4 {
        seqs = run.generate_split(0)?;
    }
    let seqs: Vec<LabeledSequence> = seqs
        .iter()
        .take(4)
        .map(|s| LabeledSequence::from_flat(s.dim(), s.values()[..t_len * s.dim()].to_vec(), s.label, s.seed))
        .collect::<Result<_, _>>()?;
    if seqs.is_empty() {
        return Ok(OracleRow { check: "gradient_check", status: "skip", detail: "no sequences".into() });
    }
    let m = &run.cfg.model;
    let mut model = RecurrentEstimator::new(run.spec.input_dim(), m.hidden.min(4), m.order, run.seed(MODEL_STREAM))?;
    model.encoding = run.fresh_model()?.encoding;
    let refs: Vec<&LabeledSequence> = seqs.iter().collect();
    let weights = LossWeights { lllr: 1.0, multiplet: 1.0, kliep: 1.0 };
    let clamp = run.cfg.loss.clamp;
    let an = nnet::batch_gradient(&model, &refs, weights, clamp)?.grad;
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for i in 0..an.len() {
        let mut p = model.clone();
        p.params_mut()[i] += h;
        let mut q = model.clone();
        q.params_mut()[i] -= h;
        let fp = nnet::batch_gradient(&p, &refs, weights, clamp)?.loss.total;
        let fq = nnet::batch_gradient(&q, &refs, weights, clamp)?.loss.total;
        let fd = (fp - fq) / (2.0 * h);
        worst = worst.max((fd - an[i]).abs() / fd.abs().max(an[i].abs()).max(1e-6));
    }
    Ok(row("gradient_check", worst < GRAD_TOL, format!("max_rel_err<{GRAD_TOL:e}"), format!("max_rel_err={worst:e}")))
}

/// Wald's error inequalities and the hitting-time identity on streamed i.i.d. Gaussian trials.
fn sprt_checks(run: &Run) -> Result<[OracleRow; 2]> {
    let spec = match &run.spec {
        DataSpec::Iid(g) => g.clone(),
        _ => GaussPairSpec::two_bumps(2)?.scaled(0.5)?,
    };
    let trials_n = run.cfg.eval.trials.max(2);
    let thr = sprt::thresholds_from_error_rates(0.05, 0.05)?;
    let trials = eval::simulate_iid_sprt(&spec, thr, trials_n, 100_000, run.seed(MC_STREAM))?;
    let rates = eval::trial_error_rates(&trials)?;
    let w = eval::wald_bound_check(&rates, thr);
    let wald = row(
        "wald_bounds",
        w.lower_bound_holds && w.upper_bound_holds,
        format!(
            "alpha1={:.4}<={:.4}; alpha0={:.4}<={:.4}",
            rates.alpha1, w.bound_alpha1, rates.alpha0, w.bound_alpha0
        ),
        format!(
            "alpha1={:.4} vs {:.4}; alpha0={:.4} vs {:.4}",
            rates.alpha1, w.bound_alpha1, rates.alpha0, w.bound_alpha0
        ),
    );

    let ones: Vec<&DecisionOutcome> = trials.iter().filter(|t| t.label == 1).map(|t| &t.outcome).collect();
    let mean_over = |label: u8| {
        let v: Vec<f64> = ones.iter().filter(|d| d.label == label && !d.forced).map(|d| d.overshoot).collect();
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    let [_, (e1, sem1)] = eval::mean_tau_by_class(&trials);
    let theory = eval::mean_hitting_time_with_overshoot(rates.alpha1, thr, mean_over(1), mean_over(0), spec.kl())?;
    let tol = 0.02 * theory + 3.0 * sem1;
    let hitting = row(
        "hitting_time_theory",
        (e1 - theory).abs() <= tol,
        format!("E1_tau={e1:.4}; theory={theory:.4}; tol={tol:.4}"),
        format!("E1_tau={e1:.4}; theory={theory:.4}; tol={tol:.4}"),
    );
    Ok([wald, hitting])
}

pub fn oracle_checks(run: &Run) -> Result<Vec<OracleRow>> {
    let mut rows = vec![tandem_check(run)?, gradient_check(run)?];
    rows.extend(sprt_checks(run)?);
    Ok(rows)
}

pub fn oracle_check(run: &Run) -> Result<()> {
    let rows = oracle_checks(run)?;
    let mut csv = Csv::new(ORACLE_HEADER);
    for r in &rows {
        info!("{}: {} ({})", r.check, r.status, r.detail);
        csv.row(cells![r.check, r.status, r.detail.as_str()]);
    }
    run.out.write("oracle_report.csv", csv.as_bytes())?;
    let failed: Vec<&str> = rows.iter().filter(|r| r.status == "fail").map(|r| r.check).collect();
    ensure!(failed.is_empty(), "oracle checks failed: {}", failed.join(", "));
    Ok(())
}

pub fn ablation(run: &Run) -> Result<()> {
    let test = run.split(2)?;
    let labels: Vec<u8> = test.iter().map(|s| s.label).collect();
    let thresholds = run.thresholds()?;
    let mut csv = Csv::new(ABLATION_HEADER);
    let mut series = Vec::new();
    for (name, weights) in ABLATIONS {
        let (model, _) = run.fit(weights, name)?;
        let llrs = model.llrs(&test)?;
        let values: Vec<&[f64]> = llrs.iter().map(|l| l.values.as_slice()).collect();
        let points = eval::sat_curve(&values, &labels, &thresholds, run.cfg.dataset.t_len)
            .with_context(|| format!("SAT curve for {name}"))?;
        for p in &points {
            csv.row(cells![name, p.a0, p.a1, p.mean_hitting_time, p.balanced_accuracy, p.n_trials, p.sem]);
        }
        series.push((name.to_string(), sat_series(&points)));
    }
    run.out.write("ablation.csv", csv.as_bytes())?;
    run.plot("ablation.svg", "loss ablation", "mean hitting time", "balanced accuracy", &series)
}
