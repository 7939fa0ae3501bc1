//! Grid runs over missing-rate settings, modes and seeds. Each cell trains
//! in its own directory and leaves `result.csv` once it has succeeded, so a
//! rerun skips finished cells.

use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use redcore::datagen::{gen_dataset, GenConfig};
use redcore::trainer::{run_training, Mode};

use crate::commands::{eval_csv, eval_table, split, write, EvalRow};
use crate::config::ExperimentConfig;
use crate::exit::{CliResult, Failure};

pub const RESULT_FILE: &str = "result.csv";
pub const ERROR_FILE: &str = "error.txt";
pub const SWEEP_FILE: &str = "sweep.csv";

#[derive(Debug, Clone)]
pub struct Cell {
    pub rates: Vec<f64>,
    pub mode: Mode,
    pub seed: u64,
}

impl Cell {
    fn dir_name(&self) -> String {
        let rates: Vec<String> = self.rates.iter().map(|r| r.to_string()).collect();
        format!("mr{}-{}-s{}", rates.join("_"), self.mode.name(), self.seed)
    }
}

/// Cells in grid order: rates, then mode, then seed.
pub fn cells(cfg: &ExperimentConfig) -> CliResult<Vec<Cell>> {
    let g = &cfg.sweep;
    if g.missing_rates.is_empty() || g.modes.is_empty() || g.seeds.is_empty() {
        return Err(Failure::config("sweep grid needs missing_rates, modes and seeds"));
    }
    let m = cfg.data.modality_dims.len();
    if let Some(bad) = g.missing_rates.iter().find(|r| r.len() != m) {
        return Err(Failure::config(format!(
            "missing-rate setting {bad:?} does not have {m} entries"
        )));
    }
    let mut out = Vec::new();
    for rates in &g.missing_rates {
        for &mode in &g.modes {
            for &seed in &g.seeds {
                out.push(Cell {
                    rates: rates.clone(),
                    mode,
                    seed,
                });
            }
        }
    }
    Ok(out)
}

fn run_cell(cfg: &ExperimentConfig, cell: &Cell) -> CliResult<Vec<EvalRow>> {
    let data = GenConfig {
        missing_rates: cell.rates.clone(),
        seed: cell.seed,
        ..cfg.data.clone()
    };
    let (train, test) = split(cfg, gen_dataset(&data)?)?;
    let mut tc = cfg.train.clone();
    tc.mode = cell.mode;
    tc.seed = cell.seed;
    let out = run_training(&tc, &train, test.as_ref())?;
    eval_table(cfg, &out.model, test.as_ref().unwrap_or(&train))
}

enum Outcome {
    Done,
    Skipped,
    Failed(Failure),
}

fn process(cfg: &ExperimentConfig, cell: &Cell, dir: &Path) -> Outcome {
    if dir.join(RESULT_FILE).is_file() {
        return Outcome::Skipped;
    }
    match run_cell(cfg, cell) {
        Ok(rows) => {
            // Written under a temporary name so an interrupted write is not
            // mistaken for a finished cell.
            let tmp = dir.join(format!("{RESULT_FILE}.tmp"));
            let done = write(&tmp, &eval_csv(&rows))
                .and_then(|_| fs::rename(&tmp, dir.join(RESULT_FILE)).map_err(|e| Failure::io(dir, e)));
            match done {
                Ok(()) => {
                    let _ = fs::remove_file(dir.join(ERROR_FILE));
                    Outcome::Done
                }
                Err(e) => Outcome::Failed(e),
            }
        }
        Err(e) => {
            let _ = write(&dir.join(ERROR_FILE), &format!("{e}\n"));
            Outcome::Failed(e)
        }
    }
}

fn read_result(path: &Path) -> CliResult<Vec<(String, String)>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Failure::io(path, e))?;
    r.records()
        .map(|rec| {
            let rec = rec.map_err(|e| Failure::io(path, e))?;
            match (rec.get(0), rec.get(1)) {
                (Some(c), Some(f)) => Ok((c.to_string(), f.to_string())),
                _ => Err(Failure::io(path, "malformed result row")),
            }
        })
        .collect()
}

pub fn sweep(cfg: &ExperimentConfig, out: PathBuf, jobs: usize) -> CliResult<()> {
    let cells = cells(cfg)?;
    cfg.eval_combos(cfg.data.modality_dims.len())?;
    let dirs: Vec<PathBuf> = cells.iter().map(|c| out.join("cells").join(c.dir_name())).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Failure::config(format!("cannot start {jobs} workers: {e}")))?;
    let outcomes: Vec<Outcome> = pool.install(|| {
        cells
            .par_iter()
            .zip(dirs.par_iter())
            .map(|(c, d)| {
                info!("cell {}", c.dir_name());
                process(cfg, c, d)
            })
            .collect()
    });

    let m = cfg.data.modality_dims.len();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = (1..=m).map(|i| format!("rate_{i}")).collect();
    header.extend(["mode", "seed", "combo", "f1_weighted"].map(String::from));
    w.write_record(&header).expect("in-memory csv");
    let (mut done, mut skipped, mut failed) = (0, 0, 0);
    let mut first_failure = None;
    for ((cell, dir), outcome) in cells.iter().zip(&dirs).zip(outcomes) {
        match outcome {
            Outcome::Done => done += 1,
            Outcome::Skipped => skipped += 1,
            Outcome::Failed(e) => {
                warn!("cell {} failed: {e}", cell.dir_name());
                eprintln!("cell {} failed: {e}", cell.dir_name());
                failed += 1;
                first_failure.get_or_insert(e);
                continue;
            }
        }
        for (combo, f1) in read_result(&dir.join(RESULT_FILE))? {
            let mut row: Vec<String> = cell.rates.iter().map(|r| r.to_string()).collect();
            row.extend([cell.mode.name().to_string(), cell.seed.to_string(), combo, f1]);
            w.write_record(&row).expect("in-memory csv");
        }
    }
    let body = String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv is utf-8");
    write(&out.join(SWEEP_FILE), &body)?;
    println!(
        "{} cells: {done} run, {skipped} already complete, {failed} failed; wrote {}",
        cells.len(),
        out.join(SWEEP_FILE).display()
    );
    match first_failure {
        Some(e) if done + skipped == 0 => Err(e),
        _ => Ok(()),
    }
}
