//! The double training loop: every outer step updates `eta` from the
//! moving-average relative advantage, then takes `K` Adam steps on the total
//! loss. Also evaluation over modality combinations and CSV emission.

use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::datagen::{Batch, BatchStream, MultimodalDataset, Presence};
use crate::error::{Error, Result};
use crate::losses::{total_loss, Heads};
use crate::metrics::{accuracy, argmax_rows, weighted_f1};
use crate::model::{forward_batch, predict_logits, ArchConfig, ModelParams, NoiseSource};
use crate::regulator::{trace_rows, RegulatorConfig, SupervisionState, TraceRow};
use crate::tensor::Tensor;

/// Ablation variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Cross-modal learning and supervision regulation.
    Redcore,
    /// Cross-modal learning with `eta` frozen at its initial value.
    Core,
    /// Regulation with only the joint head supervised.
    Red,
}

impl Mode {
    pub fn heads(self) -> Heads {
        match self {
            Mode::Red => Heads::JointOnly,
            _ => Heads::All,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Redcore => "redcore",
            Mode::Core => "core",
            Mode::Red => "red",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "redcore" => Ok(Mode::Redcore),
            "core" => Ok(Mode::Core),
            "red" => Ok(Mode::Red),
            other => Err(Error::config(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EtaInit {
    #[default]
    Symmetric,
    Random,
}

/// Layer widths; the modality dimensions and class count come from data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchOptions {
    pub repr_dim: usize,
    pub senc_hidden: usize,
    pub xenc_blocks: Vec<usize>,
    pub dec_hidden: usize,
}

impl Default for ArchOptions {
    fn default() -> Self {
        let a = ArchConfig::new(vec![1, 1], 2);
        ArchOptions {
            repr_dim: a.repr_dim,
            senc_hidden: a.senc_hidden,
            xenc_blocks: a.xenc_blocks,
            dec_hidden: a.dec_hidden,
        }
    }
}

impl ArchOptions {
    pub fn for_dataset(&self, ds: &MultimodalDataset) -> ArchConfig {
        ArchConfig {
            modality_dims: ds.modality_dims(),
            n_classes: ds.n_classes,
            repr_dim: self.repr_dim,
            senc_hidden: self.senc_hidden,
            xenc_blocks: self.xenc_blocks.clone(),
            dec_hidden: self.dec_hidden,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub mode: Mode,
    pub gamma: f64,
    pub adam_lr: f64,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    pub batch_size: usize,
    /// Inner parameter steps per outer step.
    pub k_inner: usize,
    /// Number of outer steps.
    pub outer_steps: usize,
    pub alpha1: f64,
    pub beta: f64,
    pub xi1: f64,
    pub xi2: f64,
    pub eta_init: EtaInit,
    pub seed: u64,
    pub arch: ArchOptions,
    /// Evaluate after every this many outer steps, and after the last one.
    pub eval_every: usize,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let r = RegulatorConfig::default();
        TrainConfig {
            mode: Mode::Redcore,
            gamma: 0.008,
            adam_lr: 2e-4,
            adam_betas: (0.9, 0.999),
            adam_eps: 1e-8,
            batch_size: 128,
            k_inner: 3,
            outer_steps: 100,
            alpha1: r.alpha1,
            beta: r.beta,
            xi1: r.xi1,
            xi2: r.xi2,
            eta_init: EtaInit::Symmetric,
            seed: 0,
            arch: ArchOptions::default(),
            eval_every: 10,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_inner == 0 || self.outer_steps == 0 {
            return Err(Error::config("k_inner and outer_steps must be at least 1"));
        }
        if self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::config("batch_size and eval_every must be at least 1"));
        }
        if !(self.gamma > 0.0) {
            return Err(Error::config("gamma must be positive"));
        }
        let (b1, b2) = self.adam_betas;
        if !(self.adam_lr > 0.0 && (0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2) && self.adam_eps > 0.0) {
            return Err(Error::config("invalid Adam hyperparameters"));
        }
        Ok(())
    }

    /// Regulator settings with the mode applied: `core` freezes `eta`.
    pub fn regulator(&self) -> RegulatorConfig {
        RegulatorConfig {
            alpha1: if self.mode == Mode::Core { 0.0 } else { self.alpha1 },
            beta: self.beta,
            xi1: self.xi1,
            xi2: self.xi2,
        }
    }
}

/// First and second moment estimates, one per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl AdamState {
    pub fn new(shapes: &[&Tensor]) -> Self {
        AdamState {
            m: shapes.iter().map(|t| Tensor::zeros(t.shape())).collect(),
            v: shapes.iter().map(|t| Tensor::zeros(t.shape())).collect(),
            step: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub betas: (f64, f64),
    pub eps: f64,
}

/// One bias-corrected Adam update. Parameters with `trainable[i] == false`
/// are left untouched, moments included.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    hp: AdamHyper,
    trainable: Option<&[bool]>,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::shape(format!(
            "adam_step: {} parameters, {} gradients, {} moment tensors",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.m[i].shape() {
            return Err(Error::shape(format!(
                "adam_step: parameter {i} has shape {:?}, gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
    }
    state.step += 1;
    let (b1, b2) = hp.betas;
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    for (i, p) in params.iter_mut().enumerate() {
        if trainable.is_some_and(|t| !t[i]) {
            continue;
        }
        let g = grads[i].data();
        let m = state.m[i].data_mut();
        for (mj, gj) in m.iter_mut().zip(g) {
            *mj = b1 * *mj + (1.0 - b1) * gj;
        }
        let v = state.v[i].data_mut();
        for (vj, gj) in v.iter_mut().zip(g) {
            *vj = b2 * *vj + (1.0 - b2) * gj * gj;
        }
        let (m, v) = (state.m[i].data(), state.v[i].data());
        for ((pj, mj), vj) in p.data_mut().iter_mut().zip(m).zip(v) {
            *pj -= hp.lr * (mj / c1) / ((vj / c2).sqrt() + hp.eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalScore {
    pub f1_weighted: f64,
    pub accuracy: f64,
}

/// Scores joint-head predictions with only the modalities in `subset`
/// present for every sample and noise switched off.
pub fn evaluate(model: &ModelParams, ds: &MultimodalDataset, subset: &[usize]) -> Result<EvalScore> {
    let m_count = ds.n_modalities();
    if subset.is_empty() {
        return Err(Error::config("evaluation needs a non-empty modality subset"));
    }
    if let Some(&bad) = subset.iter().find(|&&m| m >= m_count) {
        return Err(Error::config(format!("modality {bad} out of range")));
    }
    if ds.is_empty() {
        return Err(Error::config("cannot evaluate an empty dataset"));
    }
    let presence = Presence::only(ds.len(), m_count, subset);
    let logits = predict_logits(model, &ds.features, &presence)?;
    let pred = argmax_rows(logits.data(), logits.cols());
    Ok(EvalScore {
        f1_weighted: weighted_f1(&ds.labels, &pred, ds.n_classes)?,
        accuracy: accuracy(&ds.labels, &pred)?,
    })
}

/// Every non-empty subset of the modalities, singletons first, then by size
/// and lexicographically.
pub fn combinations(n_modalities: usize) -> Vec<Vec<usize>> {
    let mut all: Vec<Vec<usize>> = (1u32..(1 << n_modalities))
        .map(|bits| (0..n_modalities).filter(|m| bits & (1 << m) != 0).collect())
        .collect();
    all.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    all
}

/// `A`, `V`, `L` style names for three modalities, `m1+m2` otherwise.
pub fn combo_name(subset: &[usize], n_modalities: usize) -> String {
    if n_modalities == 3 {
        subset.iter().map(|&m| ["A", "V", "L"][m]).collect()
    } else {
        subset
            .iter()
            .map(|m| format!("m{}", m + 1))
            .collect::<Vec<_>>()
            .join("+")
    }
}

pub fn evaluate_combinations(model: &ModelParams, ds: &MultimodalDataset) -> Result<Vec<(String, EvalScore)>> {
    let m = ds.n_modalities();
    combinations(m)
        .iter()
        .map(|s| Ok((combo_name(s, m), evaluate(model, ds, s)?)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub outer_step: u64,
    pub split: String,
    pub modality_combo: String,
    pub f1_weighted: f64,
    pub accuracy: f64,
    pub total_loss: f64,
    pub vib_loss: f64,
    pub mse: Vec<Option<f64>>,
    pub eta: Vec<f64>,
    pub ra: Option<Vec<f64>>,
}

/// Loop counters, kept for accounting checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counters {
    pub outer_step: u64,
    pub adam_steps: u64,
    pub eta_updates: u64,
}

/// Training state that can be checkpointed and resumed between outer steps.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    pub model: ModelParams,
    pub adam: AdamState,
    pub supervision: SupervisionState,
    pub counters: Counters,
    pub last_ra: Option<Vec<f64>>,
    pub metrics: Vec<MetricsRow>,
    pub trace: Vec<TraceRow>,
    stream: BatchStream,
    trainable: Vec<bool>,
}

/// Final model together with everything the run logged.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: ModelParams,
    pub supervision: SupervisionState,
    pub metrics: Vec<MetricsRow>,
    pub trace: Vec<TraceRow>,
    pub counters: Counters,
}

fn check_dataset(cfg: &TrainConfig, arch: &ArchConfig, ds: &MultimodalDataset) -> Result<()> {
    ds.validate()?;
    if ds.is_empty() {
        return Err(Error::config("training set is empty"));
    }
    if ds.modality_dims() != arch.modality_dims || ds.n_classes != arch.n_classes {
        return Err(Error::config(format!(
            "dataset has modality dims {:?} and {} classes, model expects {:?} and {}",
            ds.modality_dims(),
            ds.n_classes,
            arch.modality_dims,
            arch.n_classes
        )));
    }
    cfg.regulator().validate(ds.n_modalities())
}

fn trainable_mask(model: &ModelParams, mode: Mode) -> Vec<bool> {
    model
        .params
        .named()
        .iter()
        .map(|(name, _)| !(mode == Mode::Red && name.starts_with('m') && name.contains(".dec.")))
        .collect()
}

impl Trainer {
    pub fn new(cfg: &TrainConfig, train: &MultimodalDataset) -> Result<Self> {
        cfg.validate()?;
        let arch = cfg.arch.for_dataset(train);
        arch.validate()?;
        check_dataset(cfg, &arch, train)?;
        let model = ModelParams::init(&arch, cfg.seed)?;
        let m = train.n_modalities();
        let supervision = match cfg.eta_init {
            EtaInit::Symmetric => SupervisionState::new(m, cfg.regulator())?,
            EtaInit::Random => SupervisionState::random(m, cfg.regulator(), cfg.seed)?,
        };
        let adam = AdamState::new(&model.params.leaves());
        let trainable = trainable_mask(&model, cfg.mode);
        Ok(Trainer {
            config: cfg.clone(),
            stream: BatchStream::new(train.len(), cfg.batch_size, cfg.seed, cfg.shuffle),
            model,
            adam,
            supervision,
            counters: Counters::default(),
            last_ra: None,
            metrics: Vec::new(),
            trace: Vec::new(),
            trainable,
        })
    }

    /// Reassembles a trainer from checkpointed parts.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        config: TrainConfig,
        model: ModelParams,
        adam: AdamState,
        supervision: SupervisionState,
        counters: Counters,
        last_ra: Option<Vec<f64>>,
        metrics: Vec<MetricsRow>,
        trace: Vec<TraceRow>,
        stream_position: (u64, usize),
        n_train: usize,
    ) -> Result<Self> {
        config.validate()?;
        if adam.m.len() != model.params.leaves().len() {
            return Err(Error::Checkpoint("optimizer state does not match the model".into()));
        }
        let (epoch, offset) = stream_position;
        if offset > n_train {
            return Err(Error::Checkpoint(format!(
                "stream offset {offset} beyond {n_train} training samples"
            )));
        }
        let trainable = trainable_mask(&model, config.mode);
        Ok(Trainer {
            stream: BatchStream::at(n_train, config.batch_size, config.seed, config.shuffle, epoch, offset),
            config,
            model,
            adam,
            supervision,
            counters,
            last_ra,
            metrics,
            trace,
            trainable,
        })
    }

    pub fn stream_position(&self) -> (u64, usize) {
        self.stream.position()
    }

    pub fn is_done(&self) -> bool {
        self.counters.outer_step >= self.config.outer_steps as u64
    }

    /// One parameter update on the next mini-batch. Returns the total loss,
    /// the VIB loss and the per-modality imputation losses.
    fn inner_step(&mut self, train: &MultimodalDataset) -> Result<(f64, f64, Vec<Option<f64>>)> {
        let batch = Batch::from_indices(train, self.stream.next_indices());
        let mut tape = Tape::new();
        let bound = self.model.bind(&mut tape);
        let noise = NoiseSource::Seeded {
            seed: self.config.seed,
            step: self.counters.adam_steps,
        };
        let out = forward_batch(&mut tape, &bound, &self.model.arch, &batch, &noise)?;
        let loss = total_loss(
            &mut tape,
            &out,
            &batch.labels,
            self.config.gamma,
            &self.supervision.eta,
            self.config.mode.heads(),
        )?;
        let grads = tape.backward(loss.total)?;
        let grad_tensors: Vec<Tensor> = bound
            .leaves()
            .iter()
            .map(|&&v| {
                grads
                    .get(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(tape.value(v).shape()))
            })
            .collect();
        let hp = AdamHyper {
            lr: self.config.adam_lr,
            betas: self.config.adam_betas,
            eps: self.config.adam_eps,
        };
        let mut params = self.model.params.leaves_mut();
        adam_step(&mut params, &grad_tensors, &mut self.adam, hp, Some(&self.trainable))?;
        self.counters.adam_steps += 1;

        let observed: Vec<(usize, f64)> = loss
            .mse
            .iter()
            .enumerate()
            .filter_map(|(m, l)| l.filter(|v| *v > 0.0).map(|v| (m, v)))
            .collect();
        self.supervision.update_mal(&observed)?;
        Ok((tape.value(loss.total).item(), tape.value(loss.vib).item(), loss.mse))
    }

    /// One `eta` update followed by `K` parameter steps; evaluates when due.
    pub fn outer_step(&mut self, train: &MultimodalDataset, eval: Option<&MultimodalDataset>) -> Result<()> {
        let s = self.counters.outer_step;
        let ra = self.supervision.relative_advantage().transpose()?;
        let step_ra = ra.clone().unwrap_or_else(|| vec![0.0; self.supervision.n_modalities()]);
        self.supervision.step_eta(&step_ra)?;
        self.counters.eta_updates += 1;
        self.trace.extend(trace_rows(s, &self.supervision, ra.as_deref()));
        if ra.is_some() {
            self.last_ra = ra;
        }

        let k = self.config.k_inner;
        let m = self.supervision.n_modalities();
        let (mut total, mut vib) = (0.0, 0.0);
        let mut mse_sum = vec![0.0; m];
        let mut mse_n = vec![0usize; m];
        for _ in 0..k {
            let (t, v, mse) = self.inner_step(train)?;
            total += t;
            vib += v;
            for (i, l) in mse.iter().enumerate() {
                if let Some(l) = l {
                    mse_sum[i] += l;
                    mse_n[i] += 1;
                }
            }
        }
        self.counters.outer_step += 1;

        let done = self.counters.outer_step;
        if done % self.config.eval_every as u64 == 0 || done == self.config.outer_steps as u64 {
            let (split, ds) = match eval {
                Some(e) => ("test", e),
                None => ("train", train),
            };
            let mse: Vec<Option<f64>> = mse_sum
                .iter()
                .zip(&mse_n)
                .map(|(s, &n)| (n > 0).then(|| s / n as f64))
                .collect();
            for (combo, score) in evaluate_combinations(&self.model, ds)? {
                self.metrics.push(MetricsRow {
                    outer_step: done,
                    split: split.to_string(),
                    modality_combo: combo,
                    f1_weighted: score.f1_weighted,
                    accuracy: score.accuracy,
                    total_loss: total / k as f64,
                    vib_loss: vib / k as f64,
                    mse: mse.clone(),
                    eta: self.supervision.eta.clone(),
                    ra: self.last_ra.clone(),
                });
            }
        }
        Ok(())
    }

    /// Runs outer steps until `outer_steps` is reached.
    pub fn run(&mut self, train: &MultimodalDataset, eval: Option<&MultimodalDataset>) -> Result<()> {
        self.run_until(train, eval, self.config.outer_steps as u64)
    }

    /// Runs outer steps until the counter reaches `stop` (capped at the
    /// configured total).
    pub fn run_until(&mut self, train: &MultimodalDataset, eval: Option<&MultimodalDataset>, stop: u64) -> Result<()> {
        let stop = stop.min(self.config.outer_steps as u64);
        if train.len() != self.n_train() {
            return Err(Error::config("training set does not match the trainer"));
        }
        while self.counters.outer_step < stop {
            self.outer_step(train, eval)?;
            log::debug!(
                "outer step {} eta {:?}",
                self.counters.outer_step,
                self.supervision.eta
            );
        }
        Ok(())
    }

    pub fn n_train(&self) -> usize {
        self.stream.len()
    }

    pub fn into_output(self) -> TrainOutput {
        TrainOutput {
            model: self.model,
            supervision: self.supervision,
            metrics: self.metrics,
            trace: self.trace,
            counters: self.counters,
        }
    }
}

/// Full training run from scratch.
pub fn run_training(
    cfg: &TrainConfig,
    train: &MultimodalDataset,
    eval: Option<&MultimodalDataset>,
) -> Result<TrainOutput> {
    let mut trainer = Trainer::new(cfg, train)?;
    trainer.run(train, eval)?;
    Ok(trainer.into_output())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn to_csv(header: Vec<String>, rows: Vec<Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    // Writing into a Vec cannot fail.
    w.write_record(&header).expect("in-memory csv");
    for r in rows {
        w.write_record(&r).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv is utf-8")
}

pub fn metrics_header(n_modalities: usize) -> Vec<String> {
    let mut h: Vec<String> = [
        "outer_step",
        "split",
        "modality_combo",
        "f1_weighted",
        "accuracy",
        "total_loss",
        "vib_loss",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for prefix in ["mse", "eta", "ra"] {
        h.extend((1..=n_modalities).map(|m| format!("{prefix}_{m}")));
    }
    h
}

pub fn metrics_csv(rows: &[MetricsRow], n_modalities: usize) -> String {
    let body = rows
        .iter()
        .map(|r| {
            let mut out = vec![
                r.outer_step.to_string(),
                r.split.clone(),
                r.modality_combo.clone(),
                r.f1_weighted.to_string(),
                r.accuracy.to_string(),
                r.total_loss.to_string(),
                r.vib_loss.to_string(),
            ];
            out.extend(r.mse.iter().map(|v| fmt_opt(*v)));
            out.extend(r.eta.iter().map(f64::to_string));
            match &r.ra {
                Some(ra) => out.extend(ra.iter().map(f64::to_string)),
                None => out.extend(std::iter::repeat_n(String::new(), n_modalities)),
            }
            out
        })
        .collect();
    to_csv(metrics_header(n_modalities), body)
}

pub fn trace_csv(rows: &[TraceRow]) -> String {
    let header = ["step", "m", "eta_m", "mal_m", "ra_m"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let body = rows
        .iter()
        .map(|r| {
            vec![
                r.step.to_string(),
                r.m.to_string(),
                r.eta_m.to_string(),
                fmt_opt(r.mal_m),
                fmt_opt(r.ra_m),
            ]
        })
        .collect();
    to_csv(header, body)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let mut p = Tensor::vector(vec![1.0, -2.0]).unwrap();
        let before = p.clone();
        let mut st = AdamState::new(&[&p]);
        let hp = AdamHyper { lr: 0.1, betas: (0.9, 0.999), eps: 1e-8 };
        adam_step(&mut [&mut p], &[Tensor::zeros(&[2])], &mut st, hp, None).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn adam_first_step_is_about_lr() {
        let mut p = Tensor::vector(vec![0.0, 0.0, 0.0]).unwrap();
        let mut st = AdamState::new(&[&p]);
        let g = Tensor::vector(vec![0.5, -3.0, 1e-9]).unwrap();
        let hp = AdamHyper { lr: 0.01, betas: (0.9, 0.999), eps: 1e-8 };
        adam_step(&mut [&mut p], &[g.clone()], &mut st, hp, None).unwrap();
        for (d, gi) in p.data().iter().zip(g.data()) {
            let lo = hp.lr * gi.abs() / (gi.abs() + hp.eps);
            assert!(d.abs() <= hp.lr + 1e-15 && d.abs() >= lo - 1e-15);
            assert_eq!(d.signum(), -gi.signum());
        }
    }

    #[test]
    fn adam_checks_shapes_and_respects_frozen() {
        let mut a = Tensor::vector(vec![1.0]).unwrap();
        let mut b = Tensor::vector(vec![1.0]).unwrap();
        let mut st = AdamState::new(&[&a, &b]);
        let hp = AdamHyper { lr: 0.1, betas: (0.9, 0.999), eps: 1e-8 };
        let g = [Tensor::vector(vec![1.0]).unwrap(), Tensor::vector(vec![1.0]).unwrap()];
        adam_step(&mut [&mut a, &mut b], &g, &mut st, hp, Some(&[true, false])).unwrap();
        assert!(a.data()[0] < 1.0);
        assert_eq!(b.data()[0], 1.0);
        assert_eq!(st.m[1].data()[0], 0.0);
        let bad = [Tensor::zeros(&[2]), Tensor::zeros(&[1])];
        assert!(matches!(
            adam_step(&mut [&mut a, &mut b], &bad, &mut st, hp, None),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn combination_order() {
        let c = combinations(3);
        let names: Vec<String> = c.iter().map(|s| combo_name(s, 3)).collect();
        assert_eq!(names, ["A", "V", "L", "AV", "AL", "VL", "AVL"]);
        assert_eq!(combinations(4).len(), 15);
        assert_eq!(combo_name(&[0, 2], 4), "m1+m3");
    }

    #[test]
    fn modes_parse() {
        assert_eq!("core".parse::<Mode>().unwrap(), Mode::Core);
        assert!("full".parse::<Mode>().is_err());
        let cfg = TrainConfig { mode: Mode::Core, ..TrainConfig::default() };
        assert_eq!(cfg.regulator().alpha1, 0.0);
    }
}
