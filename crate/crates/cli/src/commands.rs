use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use redcore::checkpoint::{load_checkpoint, resume, save_checkpoint};
use redcore::datagen::{gen_dataset, load_csv, missing_rate, save_csv, MultimodalDataset};
use redcore::model::ModelParams;
use redcore::trainer::{evaluate, metrics_csv, trace_csv, Trainer};
use redcore::verify::{self, Hooks, Options, Suite, SuiteReport};

use crate::config::ExperimentConfig;
use crate::exit::{CliResult, Failure};

pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const AVERAGE_ROW: &str = "Ave.";

pub fn write(path: &Path, body: &str) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Failure::io(parent, e))?;
    }
    fs::write(path, body).map_err(|e| Failure::io(path, e))
}

fn require_out(out: Option<PathBuf>) -> CliResult<PathBuf> {
    out.ok_or_else(|| Failure::config("an output directory is required (--out or \"out\" in the config)"))
}

pub fn gen_data(cfg: &ExperimentConfig, out: Option<PathBuf>) -> CliResult<()> {
    let out = require_out(out)?;
    let ds = gen_dataset(&cfg.data)?;
    save_csv(&ds, &out)?;
    println!("wrote {} samples to {}", ds.len(), out.display());
    println!("modality  declared  realized");
    for (m, declared) in ds.declared_rates.iter().enumerate() {
        let realized = missing_rate(&ds.presence, m)?;
        println!("m{:<8}{declared:>8.3}  {realized:>8.3}", m + 1);
    }
    Ok(())
}

/// The training part and, unless `test_fraction` is zero, the held-out part
/// of a dataset. The split depends only on the dataset's own seed.
pub fn split(cfg: &ExperimentConfig, ds: MultimodalDataset) -> CliResult<(MultimodalDataset, Option<MultimodalDataset>)> {
    cfg.check_test_fraction()?;
    if cfg.test_fraction == 0.0 {
        return Ok((ds, None));
    }
    let seed = ds.seed;
    let (train, test) = ds.split(cfg.test_fraction, seed)?;
    Ok((train, Some(test)))
}

pub struct TrainArgs {
    pub data: PathBuf,
    pub out: Option<PathBuf>,
    pub resume: Option<PathBuf>,
    pub stop_after: Option<u64>,
}

pub fn train(cfg: &ExperimentConfig, args: TrainArgs) -> CliResult<()> {
    let out = require_out(args.out)?;
    let (train, test) = split(cfg, load_csv(&args.data)?)?;
    let mut trainer = match &args.resume {
        Some(dir) => {
            let t = resume(dir, &train)?;
            info!("resumed from {} at outer step {}", dir.display(), t.counters.outer_step);
            t
        }
        None => Trainer::new(&cfg.train_config(), &train)?,
    };
    let total = trainer.config.outer_steps as u64;
    let stop = args.stop_after.map_or(total, |s| s.min(total));
    let every = if cfg.checkpoint_every == 0 {
        total
    } else {
        cfg.checkpoint_every as u64
    };
    let ckpt = out.join(CHECKPOINT_DIR);
    let mut saved = false;
    while trainer.counters.outer_step < stop {
        let next = ((trainer.counters.outer_step / every + 1) * every).min(stop);
        trainer.run_until(&train, test.as_ref(), next)?;
        save_checkpoint(&trainer, &ckpt)?;
        saved = true;
        info!("checkpoint at outer step {next}");
    }
    if !saved {
        save_checkpoint(&trainer, &ckpt)?;
    }
    let m = trainer.model.arch.n_modalities();
    write(&out.join("metrics.csv"), &metrics_csv(&trainer.metrics, m))?;
    write(&out.join("trace.csv"), &trace_csv(&trainer.trace))?;
    let mut record = cfg.clone();
    record.train = trainer.config.clone();
    record.mode = None;
    let json = serde_json::to_string_pretty(&record).expect("config serializes");
    write(&out.join("config.json"), &(json + "\n"))?;
    println!(
        "{} mode: {} outer steps, {} Adam steps, {} eta updates; final eta {:?}",
        trainer.config.mode.name(),
        trainer.counters.outer_step,
        trainer.counters.adam_steps,
        trainer.counters.eta_updates,
        trainer.supervision.eta
    );
    println!("wrote {}", out.display());
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub combo: String,
    pub f1_weighted: f64,
    pub accuracy: f64,
}

/// One row per combination followed by their mean.
pub fn eval_table(cfg: &ExperimentConfig, model: &ModelParams, ds: &MultimodalDataset) -> CliResult<Vec<EvalRow>> {
    let combos = cfg.eval_combos(ds.n_modalities())?;
    let mut rows = Vec::with_capacity(combos.len() + 1);
    for (name, subset) in combos {
        let s = evaluate(model, ds, &subset)?;
        rows.push(EvalRow {
            combo: name,
            f1_weighted: s.f1_weighted,
            accuracy: s.accuracy,
        });
    }
    let n = rows.len() as f64;
    rows.push(EvalRow {
        combo: AVERAGE_ROW.into(),
        f1_weighted: rows.iter().map(|r| r.f1_weighted).sum::<f64>() / n,
        accuracy: rows.iter().map(|r| r.accuracy).sum::<f64>() / n,
    });
    Ok(rows)
}

pub fn eval_csv(rows: &[EvalRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["combo", "f1_weighted", "accuracy"]).expect("in-memory csv");
    for r in rows {
        w.write_record([r.combo.clone(), r.f1_weighted.to_string(), r.accuracy.to_string()])
            .expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv is utf-8")
}

fn eval_text(rows: &[EvalRow]) -> String {
    let width = rows.iter().map(|r| r.combo.len()).max().unwrap_or(0).max(5);
    let mut s = format!("{:<width$}  {:>8}  {:>8}\n", "combo", "F1", "acc");
    for r in rows {
        s += &format!("{:<width$}  {:>8.4}  {:>8.4}\n", r.combo, r.f1_weighted, r.accuracy);
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum EvalSplit {
    Test,
    Train,
    All,
}

pub fn eval(cfg: &ExperimentConfig, checkpoint: &Path, data: &Path, which: EvalSplit, out: Option<PathBuf>) -> CliResult<()> {
    let ck = load_checkpoint(checkpoint)?;
    let ds = load_csv(data)?;
    if ck.model.arch.modality_dims != ds.modality_dims() || ck.model.arch.n_classes != ds.n_classes {
        return Err(Failure::config("dataset does not match the checkpointed architecture"));
    }
    let ds = match which {
        EvalSplit::All => ds,
        EvalSplit::Train => split(cfg, ds)?.0,
        EvalSplit::Test => match split(cfg, ds)? {
            (_, Some(test)) => test,
            (train, None) => train,
        },
    };
    let rows = eval_table(cfg, &ck.model, &ds)?;
    print!("{}", eval_text(&rows));
    if let Some(out) = out {
        write(&out.join("eval.csv"), &eval_csv(&rows))?;
    }
    Ok(())
}

pub fn verify(suites: &[Suite], trials: Option<usize>, seed: u64, sign_flip: bool) -> CliResult<()> {
    let mut opts = Options {
        seed,
        ..Options::default()
    };
    if sign_flip {
        opts.hooks = Hooks {
            eta_update: verify::sign_flipped_eta_update,
        };
    }
    let mut reports: Vec<SuiteReport> = Vec::new();
    for &suite in suites {
        reports.push(verify::run_suite(suite, trials.unwrap_or(suite.default_trials()), &opts)?);
    }
    println!("{:<11} {:>7} {:>8} {:>11} {:>10}  status", "suite", "trials", "failed", "worst", "threshold");
    for r in &reports {
        println!(
            "{:<11} {:>7} {:>8} {:>11.3e} {:>10.0e}  {}",
            r.suite.name(),
            r.trials,
            r.failures,
            r.worst,
            r.threshold,
            if r.passed() { "pass" } else { "FAIL" }
        );
        if let Some(f) = &r.first_failure {
            println!("    first failure: {f}");
        }
    }
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed()).map(|r| r.suite.name()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::property(format!("failed suites: {}", failed.join(", "))))
    }
}
