//! Oracle-backed self-checks: finite-difference gradients of the training
//! losses, exact projection against a brute-force grid, the convex
//! relaxation of the supervision problem, relative-advantage identities and
//! the direction of the `eta` update.
//!
//! The `eta` update used by the direction suite is injectable through
//! [`Hooks`] so that a deliberately broken rule can be shown to fail.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{check_gradients_many, Tape, Var};
use crate::datagen::Presence;
use crate::error::{Error, Result};
use crate::losses::{total_loss_against, vib_loss, Heads};
use crate::model::{forward_all, ArchConfig, ModelParams, NoiseSource};
use crate::regulator::{
    eta_update, lemma1_verify, project_gamma1, relative_advantage, RegulatorConfig, SupervisionState,
};
use crate::rng::{self, Stream};
use crate::tensor::Tensor;

pub const GRAD_TOL: f64 = 1e-4;
pub const PROJ_TOL: f64 = 2e-4;
pub const GRID_RESOLUTION: f64 = 1e-4;
pub const RA_TOL: f64 = 1e-12;
const FD_STEP: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Gradients,
    Projection,
    Lemma1,
    Ra,
    Direction,
}

impl Suite {
    pub const ALL: [Suite; 5] = [
        Suite::Gradients,
        Suite::Projection,
        Suite::Lemma1,
        Suite::Ra,
        Suite::Direction,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Gradients => "gradients",
            Suite::Projection => "projection",
            Suite::Lemma1 => "lemma1",
            Suite::Ra => "ra",
            Suite::Direction => "direction",
        }
    }

    pub fn default_trials(self) -> usize {
        match self {
            Suite::Gradients => 50,
            Suite::Projection => 200,
            Suite::Lemma1 => 100,
            Suite::Ra | Suite::Direction => 1000,
        }
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::config(format!("unknown suite {s:?}")))
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub type EtaRule = fn(&SupervisionState, &[f64]) -> Result<Vec<f64>>;

#[derive(Debug, Clone, Copy)]
pub struct Hooks {
    pub eta_update: EtaRule,
}

impl Default for Hooks {
    fn default() -> Self {
        Hooks { eta_update }
    }
}

/// Ascent instead of descent: the update with the sign of `r` flipped.
pub fn sign_flipped_eta_update(state: &SupervisionState, ra: &[f64]) -> Result<Vec<f64>> {
    let flipped: Vec<f64> = ra.iter().map(|r| -r).collect();
    eta_update(state, &flipped)
}

#[derive(Debug, Clone, Copy)]
pub struct Options {
    pub seed: u64,
    pub grid_resolution: f64,
    pub hooks: Hooks,
}

impl Default for Options {
    fn default() -> Self {
        Options {
            seed: 0,
            grid_resolution: GRID_RESOLUTION,
            hooks: Hooks::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub suite: Suite,
    pub trials: usize,
    pub failures: usize,
    /// Largest observed error measure, compared against `threshold`.
    pub worst: f64,
    pub threshold: f64,
    pub first_failure: Option<String>,
}

impl SuiteReport {
    fn new(suite: Suite, threshold: f64) -> Self {
        SuiteReport {
            suite,
            trials: 0,
            failures: 0,
            worst: 0.0,
            threshold,
            first_failure: None,
        }
    }

    pub fn passed(&self) -> bool {
        self.failures == 0
    }

    fn record(&mut self, ok: bool, measure: f64, detail: impl FnOnce() -> String) {
        self.trials += 1;
        self.worst = self.worst.max(measure);
        if !ok {
            self.failures += 1;
            if self.first_failure.is_none() {
                self.first_failure = Some(detail());
            }
        }
    }
}

pub fn run_suite(suite: Suite, trials: usize, opts: &Options) -> Result<SuiteReport> {
    match suite {
        Suite::Gradients => gradient_suite(trials, opts.seed),
        Suite::Projection => projection_suite(trials, opts.seed, opts.grid_resolution),
        Suite::Lemma1 => lemma1_suite(trials, opts.seed),
        Suite::Ra => ra_suite(trials, opts.seed),
        Suite::Direction => direction_suite(trials, opts.seed, opts.hooks.eta_update),
    }
}

fn suite_rng(seed: u64, suite: Suite) -> ChaCha8Rng {
    rng::derived(seed, Stream::Verify, suite as u64)
}

fn random_tensor(rng: &mut impl Rng, shape: &[usize], std: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_parts(
        shape.to_vec(),
        (0..n).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect(),
    )
}

/// A random presence matrix where every row keeps at least one modality.
fn random_presence(rng: &mut impl Rng, n: usize, m: usize) -> Presence {
    let mut cells = Vec::with_capacity(n * m);
    for _ in 0..n {
        let mut row: Vec<bool> = (0..m).map(|_| rng.random_bool(0.7)).collect();
        if !row.iter().any(|&c| c) {
            row[rng.random_range(0..m)] = true;
        }
        cells.extend(row);
    }
    Presence::new(m, cells).expect("rows are complete")
}

/// Rebuilds a parameter structure from the flat list of leaves.
fn rebind(model: &ModelParams, vars: &[Var]) -> crate::model::Params<Var> {
    let mut it = vars.iter();
    model.params.map(|_| *it.next().expect("one var per leaf"))
}

fn gradient_suite(trials: usize, seed: u64) -> Result<SuiteReport> {
    let mut report = SuiteReport::new(Suite::Gradients, GRAD_TOL);
    let mut rng = suite_rng(seed, Suite::Gradients);
    for trial in 0..trials {
        let d = rng.random_range(2..=8);
        let batch = rng.random_range(2..=8);
        let arch = ArchConfig {
            modality_dims: (0..3).map(|_| rng.random_range(2..=4)).collect(),
            n_classes: rng.random_range(2..=4),
            repr_dim: d,
            senc_hidden: rng.random_range(2..=5),
            xenc_blocks: vec![rng.random_range(2..=6), rng.random_range(2..=4)],
            dec_hidden: rng.random_range(2..=4),
        };
        let model = ModelParams::init(&arch, rng.random())?;
        let features: Vec<Tensor> = arch
            .modality_dims
            .iter()
            .map(|&dm| random_tensor(&mut rng, &[batch, dm], 1.0))
            .collect();
        let presence = if trial % 5 == 0 {
            Presence::all_present(batch, 3)
        } else {
            random_presence(&mut rng, batch, 3)
        };
        let labels: Vec<usize> = (0..batch).map(|_| rng.random_range(0..arch.n_classes)).collect();
        let noise = NoiseSource::Fixed((0..3).map(|_| random_tensor(&mut rng, &[batch, d], 1.0)).collect());
        let gamma = rng.random_range(0.005..1.0);
        let eta: Vec<f64> = (0..3).map(|_| rng.random_range(0.015..0.15)).collect();
        let heads = if trial % 2 == 0 { Heads::All } else { Heads::JointOnly };
        let inputs: Vec<Tensor> = model.params.leaves().into_iter().cloned().collect();

        // The imputation target is a stop-gradient, so the numerical side
        // must hold it at its value under the unperturbed parameters.
        let targets = {
            let mut tape = Tape::new();
            let p = model.bind(&mut tape);
            let out = forward_all(&mut tape, &p, &arch, &features, &presence, &noise)?;
            out.z_bar.iter().map(|&z| tape.value(z).clone()).collect::<Vec<_>>()
        };
        let errs = check_gradients_many(
            |tape: &mut Tape, vars: &[Var]| {
                let p = rebind(&model, vars);
                let out = forward_all(tape, &p, &arch, &features, &presence, &noise)?;
                let vib = vib_loss(tape, &out, &labels, gamma, heads)?;
                let total = total_loss_against(tape, &out, &labels, gamma, &eta, heads, &targets)?.total;
                Ok(vec![vib, total])
            },
            &inputs,
            FD_STEP,
        )?;
        let (vib_err, total_err) = (errs[0], errs[1]);
        let err = vib_err.max(total_err);
        report.record(err < GRAD_TOL, err, || {
            format!("trial {trial}: vib error {vib_err:.3e}, total error {total_err:.3e}")
        });
    }
    Ok(report)
}

/// Brute-force nearest points of `{eta >= xi1, ||eta||_2 = xi2}` for a batch
/// of queries, over an angular grid whose spacing on the sphere is at most
/// `resolution`. Supports two and three coordinates.
///
/// On the sphere `||w - v||^2 = xi2^2 + ||v||^2 - 2 v.w`, so the nearest
/// grid point is the one maximizing `v.w`.
pub fn grid_nearest(queries: &[Vec<f64>], xi1: f64, xi2: f64, resolution: f64) -> Result<Vec<Vec<f64>>> {
    let m = queries.first().map_or(0, Vec::len);
    if queries.iter().any(|q| q.len() != m) || !(m == 2 || m == 3) {
        return Err(Error::config("grid oracle supports batches of 2- or 3-vectors"));
    }
    let mut best_score = vec![f64::NEG_INFINITY; queries.len()];
    let mut best = vec![vec![0.0; m]; queries.len()];
    // Edge points are built on the boundary and may round just below it.
    let floor = xi1 * (1.0 - 1e-12);
    let mut visit = |w: &[f64]| {
        if w.iter().any(|&x| x < floor) {
            return;
        }
        for (q, (score, slot)) in queries.iter().zip(best_score.iter_mut().zip(best.iter_mut())) {
            let s: f64 = q.iter().zip(w).map(|(a, b)| a * b).sum();
            if s > *score {
                *score = s;
                slot.copy_from_slice(w);
            }
        }
    };
    let step = resolution / xi2;
    if m == 2 {
        let lo = (xi1 / xi2).asin();
        let hi = (xi1 / xi2).acos();
        let n = ((hi - lo) / step).ceil() as usize;
        for i in 0..=n {
            let a = lo + (hi - lo) * i as f64 / n as f64;
            visit(&[xi2 * a.cos(), xi2 * a.sin()]);
        }
    } else {
        // Polar angle from the third axis; the third coordinate needs
        // cos(phi) >= xi1 / xi2.
        let phi_max = (xi1 / xi2).acos();
        let n_phi = (phi_max / step).ceil() as usize;
        for i in 0..=n_phi {
            let phi = phi_max * i as f64 / n_phi as f64;
            let (sp, cp) = phi.sin_cos();
            let ring = xi2 * sp;
            if ring < xi1 {
                continue;
            }
            let lo = (xi1 / ring).asin();
            let hi = (xi1 / ring).acos();
            let n_theta = ((hi - lo) * ring / resolution).ceil().max(1.0) as usize;
            for j in 0..=n_theta {
                let theta = lo + (hi - lo) * j as f64 / n_theta as f64;
                let (st, ct) = theta.sin_cos();
                visit(&[ring * ct, ring * st, xi2 * cp]);
            }
        }
    }
    if best_score.iter().any(|s| !s.is_finite()) {
        return Err(Error::config("grid resolution too coarse for the feasible set"));
    }
    Ok(best)
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn projection_suite(trials: usize, seed: u64, resolution: f64) -> Result<SuiteReport> {
    let cfg = RegulatorConfig::default();
    let (xi1, xi2) = (cfg.xi1, cfg.xi2);
    let mut report = SuiteReport::new(Suite::Projection, PROJ_TOL);
    let mut rng = suite_rng(seed, Suite::Projection);
    let queries: Vec<Vec<f64>> = (0..trials)
        .map(|i| {
            let m = 2 + i % 2;
            (0..m).map(|_| rng.random_range(-0.3..0.5)).collect()
        })
        .collect();
    let (twos, threes): (Vec<_>, Vec<_>) = queries.iter().cloned().partition(|q| q.len() == 2);
    let mut oracle2 = if twos.is_empty() { Vec::new() } else { grid_nearest(&twos, xi1, xi2, resolution)? }.into_iter();
    let mut oracle3 = if threes.is_empty() { Vec::new() } else { grid_nearest(&threes, xi1, xi2, resolution)? }
        .into_iter();

    for (i, v) in queries.iter().enumerate() {
        let w = if v.len() == 2 { oracle2.next() } else { oracle3.next() }.expect("oracle per query");
        let p = project_gamma1(v, xi1, xi2)?;
        let norm = p.iter().map(|x| x * x).sum::<f64>().sqrt();
        let feasible = p.iter().all(|&x| x >= xi1 - 1e-12) && (norm - xi2).abs() <= 1e-10;
        let idempotent = project_gamma1(&p, xi1, xi2)? == p;
        let gap = dist(&p, v) - dist(&w, v);
        let offset = dist(&p, &w);
        let ok = feasible && idempotent && gap <= PROJ_TOL && offset <= PROJ_TOL;
        report.record(ok, offset.max(gap), || {
            format!(
                "query {i} {v:?}: projection {p:?}, grid {w:?}, feasible {feasible}, idempotent {idempotent}"
            )
        });
    }
    Ok(report)
}

fn random_zero_sum(rng: &mut impl Rng, m: usize) -> Vec<f64> {
    loop {
        let mut r: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mean = r.iter().sum::<f64>() / m as f64;
        for x in &mut r {
            *x -= mean;
        }
        if r.iter().any(|x| x.abs() > 1e-3) {
            return r;
        }
    }
}

fn lemma1_suite(trials: usize, seed: u64) -> Result<SuiteReport> {
    let cfg = RegulatorConfig::default();
    let mut report = SuiteReport::new(Suite::Lemma1, crate::regulator::LEMMA1_SPHERE_TOL);
    let mut rng = suite_rng(seed, Suite::Lemma1);
    for i in 0..trials {
        let m = [2, 3, 5][i % 3];
        let r = random_zero_sum(&mut rng, m);
        let rep = lemma1_verify(&r, cfg.xi1, cfg.xi2, 1_000_000)?;
        let off = (rep.norm - cfg.xi2).abs();
        report.record(rep.on_sphere, off, || {
            format!(
                "r = {r:?}: minimizer {:?} has norm {} after {} iterations (stationarity {:.2e})",
                rep.eta, rep.norm, rep.iterations, rep.stationarity
            )
        });
    }
    Ok(report)
}

fn ra_suite(trials: usize, seed: u64) -> Result<SuiteReport> {
    let mut report = SuiteReport::new(Suite::Ra, RA_TOL);
    let mut rng = suite_rng(seed, Suite::Ra);
    for i in 0..trials {
        let m = rng.random_range(2..=6);
        let losses: Vec<f64> = (0..m).map(|_| 10f64.powf(rng.random_range(-2.0..1.0))).collect();
        let c = 10f64.powf(rng.random_range(-3.0..3.0));
        let scaled: Vec<f64> = losses.iter().map(|l| c * l).collect();
        let r = relative_advantage(&losses)?;
        let rc = relative_advantage(&scaled)?;
        let sum = r.iter().sum::<f64>().abs();
        let drift = r.iter().zip(&rc).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let err = sum.max(drift);
        report.record(err <= RA_TOL, err, || {
            format!("trial {i}: losses {losses:?}, scale {c}, sum {sum:.3e}, drift {drift:.3e}")
        });
    }
    Ok(report)
}

/// A random feasible state: `eta` is the projection of a random vector, so
/// some coordinates sit at the lower bound.
fn random_state(rng: &mut impl Rng, m: usize, cfg: RegulatorConfig) -> Result<SupervisionState> {
    let mut state = SupervisionState::new(m, cfg)?;
    let v: Vec<f64> = (0..m).map(|_| rng.random_range(-0.05..0.2)).collect();
    state.eta = project_gamma1(&v, cfg.xi1, cfg.xi2)?;
    state.mal = (0..m).map(|_| Some(10f64.powf(rng.random_range(-2.0..0.5)))).collect();
    Ok(state)
}

fn direction_suite(trials: usize, seed: u64, rule: EtaRule) -> Result<SuiteReport> {
    let cfg = RegulatorConfig::default();
    let mut report = SuiteReport::new(Suite::Direction, 0.0);
    let mut rng = suite_rng(seed, Suite::Direction);
    for i in 0..trials {
        let m = rng.random_range(2..=5);
        let state = random_state(&mut rng, m, cfg)?;
        let ra = state.relative_advantage().expect("all observed")?;
        let next = rule(&state, &ra)?;
        let top = (0..m).fold(0, |b, j| if ra[j] > ra[b] { j } else { b });
        let before = state.eta[top];
        let clamped = before <= cfg.xi1;
        let rise = (next[top] - before).max(0.0);
        let ok = clamped || next[top] <= before;
        report.record(ok, if clamped { 0.0 } else { rise }, || {
            format!(
                "trial {i}: eta {:?}, ra {ra:?}, next {next:?}: modality {} rose by {rise:.3e}",
                state.eta,
                top + 1
            )
        });
    }
    Ok(report)
}
