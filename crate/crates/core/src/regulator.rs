//! Supervision regulation: relative advantage of each modality's imputation
//! loss, moving-average smoothing, and the projected-gradient update of the
//! supervision weights `eta` on
//! `{eta >= xi1, ||eta||_2 = xi2}`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Stream};

/// Relative tolerance for treating a vector as already on the sphere.
const ON_SPHERE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegulatorConfig {
    pub alpha1: f64,
    pub beta: f64,
    pub xi1: f64,
    pub xi2: f64,
}

impl Default for RegulatorConfig {
    fn default() -> Self {
        RegulatorConfig {
            alpha1: 0.1,
            beta: 0.7,
            xi1: 0.015,
            xi2: 0.15,
        }
    }
}

impl RegulatorConfig {
    pub fn validate(&self, n_modalities: usize) -> Result<()> {
        if !(self.alpha1 >= 0.0 && self.alpha1.is_finite()) {
            return Err(Error::config("alpha1 must be non-negative"));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::config("beta must lie in (0, 1]"));
        }
        check_feasible(n_modalities, self.xi1, self.xi2)
    }
}

fn check_feasible(m: usize, xi1: f64, xi2: f64) -> Result<()> {
    if m == 0 {
        return Err(Error::config("need at least one modality"));
    }
    if !(xi1 > 0.0 && xi2.is_finite() && xi1 * (m as f64).sqrt() < xi2) {
        return Err(Error::config(format!(
            "infeasible bounds: xi1 * sqrt({m}) must be below xi2 (xi1 = {xi1}, xi2 = {xi2})"
        )));
    }
    Ok(())
}

/// `eta`, the moving-average losses and the regulator hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisionState {
    pub eta: Vec<f64>,
    /// `None` until the modality's first loss has been observed.
    pub mal: Vec<Option<f64>>,
    pub config: RegulatorConfig,
}

impl SupervisionState {
    /// Starts at the symmetric point `(xi2 / sqrt(M)) * 1`.
    pub fn new(n_modalities: usize, config: RegulatorConfig) -> Result<Self> {
        config.validate(n_modalities)?;
        let v = config.xi2 / (n_modalities as f64).sqrt();
        Ok(SupervisionState {
            eta: vec![v; n_modalities],
            mal: vec![None; n_modalities],
            config,
        })
    }

    /// Starts at a seeded random feasible point.
    pub fn random(n_modalities: usize, config: RegulatorConfig, seed: u64) -> Result<Self> {
        let mut state = SupervisionState::new(n_modalities, config)?;
        let mut rng = rng::derived(seed, Stream::EtaInit, 0);
        let v: Vec<f64> = (0..n_modalities).map(|_| rng.random_range(0.0..1.0)).collect();
        state.eta = project_gamma1(&v, config.xi1, config.xi2)?;
        Ok(state)
    }

    pub fn n_modalities(&self) -> usize {
        self.eta.len()
    }

    /// Folds the losses reported by one batch into the moving averages.
    pub fn update_mal(&mut self, batch_losses: &[(usize, f64)]) -> Result<()> {
        for &(m, value) in batch_losses {
            if m >= self.mal.len() {
                return Err(Error::config(format!("modality index {m} out of range")));
            }
            self.mal[m] = Some(mal_update(self.mal[m], value, self.config.beta)?);
        }
        Ok(())
    }

    /// Relative advantage of the current moving averages, or `None` while
    /// any modality is still unobserved.
    pub fn relative_advantage(&self) -> Option<Result<Vec<f64>>> {
        let mal: Option<Vec<f64>> = self.mal.iter().copied().collect();
        mal.map(|l| relative_advantage(&l))
    }

    /// One projected-gradient step on `eta`.
    pub fn step_eta(&mut self, ra: &[f64]) -> Result<()> {
        self.eta = eta_update(self, ra)?;
        Ok(())
    }
}

/// `RA_m = (mean(L) - L_m) / mean(L)`.
pub fn relative_advantage(losses: &[f64]) -> Result<Vec<f64>> {
    if losses.is_empty() {
        return Err(Error::Domain("no losses".into()));
    }
    if let Some(bad) = losses.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
        return Err(Error::Domain(format!("losses must be positive, got {bad}")));
    }
    if losses.iter().all(|&l| l == losses[0]) {
        return Ok(vec![0.0; losses.len()]);
    }
    let mean = losses.iter().sum::<f64>() / losses.len() as f64;
    Ok(losses.iter().map(|&l| (mean - l) / mean).collect())
}

/// `(1 - beta) * prev + beta * new`; the first observation seeds the average.
pub fn mal_update(prev: Option<f64>, new: f64, beta: f64) -> Result<f64> {
    if !(new > 0.0 && new.is_finite()) {
        return Err(Error::Domain(format!("loss must be positive, got {new}")));
    }
    Ok(match prev {
        None => new,
        Some(p) => (1.0 - beta) * p + beta * new,
    })
}

fn is_in_gamma1(v: &[f64], xi1: f64, xi2: f64) -> bool {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().all(|&x| x >= xi1) && (norm - xi2).abs() <= ON_SPHERE_TOL * xi2
}

/// Euclidean projection onto `{eta >= xi1, ||eta||_2 = xi2}`.
///
/// Points already in the set are returned unchanged. Ties between equally
/// near points go to the lowest index.
pub fn project_gamma1(v: &[f64], xi1: f64, xi2: f64) -> Result<Vec<f64>> {
    let m = v.len();
    check_feasible(m, xi1, xi2)?;
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("projection input is not finite".into()));
    }
    if is_in_gamma1(v, xi1, xi2) {
        return Ok(v.to_vec());
    }
    let mut out = vec![xi1; m];
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max <= 0.0 {
        let top = v.iter().position(|&x| x == max).unwrap_or(0);
        out[top] = (xi2 * xi2 - (m - 1) as f64 * xi1 * xi1).sqrt();
        return Ok(out);
    }

    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut k = m - 1;
    let mut scale = 0.0;
    for clamped in 0..m {
        let free = &order[clamped..];
        let sumsq: f64 = free.iter().map(|&i| v[i] * v[i]).sum();
        if sumsq == 0.0 {
            continue;
        }
        let t = ((xi2 * xi2 - clamped as f64 * xi1 * xi1) / sumsq).sqrt();
        if t * v[free[0]] >= xi1 || clamped == m - 1 {
            k = clamped;
            scale = t;
            break;
        }
    }
    for &i in &order[k..] {
        out[i] = scale * v[i];
    }
    Ok(out)
}

/// `Pro[eta - alpha1 * ra]`.
pub fn eta_update(state: &SupervisionState, ra: &[f64]) -> Result<Vec<f64>> {
    if ra.len() != state.eta.len() {
        return Err(Error::config(format!(
            "{} advantages for {} modalities",
            ra.len(),
            state.eta.len()
        )));
    }
    let c = &state.config;
    let stepped: Vec<f64> = state
        .eta
        .iter()
        .zip(ra)
        .map(|(e, r)| e - c.alpha1 * r)
        .collect();
    project_gamma1(&stepped, c.xi1, c.xi2)
}

/// Projection onto the convex set `{eta >= xi1, ||eta||_2 <= xi2}`.
///
/// The solution is `max(xi1, s * v)` for the largest `s` in `(0, 1]` that
/// keeps the norm within `xi2`, found by bisection.
pub fn project_gamma2(v: &[f64], xi1: f64, xi2: f64) -> Result<Vec<f64>> {
    check_feasible(v.len(), xi1, xi2)?;
    let clip = |s: f64| -> Vec<f64> { v.iter().map(|&x| (s * x).max(xi1)).collect() };
    let norm = |w: &[f64]| w.iter().map(|x| x * x).sum::<f64>().sqrt();
    let full = clip(1.0);
    if norm(&full) <= xi2 {
        return Ok(full);
    }
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if norm(&clip(mid)) > xi2 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(clip(lo))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lemma1Report {
    pub eta: Vec<f64>,
    pub norm: f64,
    pub iterations: usize,
    /// Norm of the final projected-gradient mapping.
    pub stationarity: f64,
    pub on_sphere: bool,
}

pub const LEMMA1_STATIONARITY: f64 = 1e-8;
pub const LEMMA1_SPHERE_TOL: f64 = 1e-6;

/// Minimizes `r . eta` over `{eta >= xi1, ||eta||_2 <= xi2}` by projected
/// gradient and reports whether the minimizer lies on the sphere.
pub fn lemma1_verify(r: &[f64], xi1: f64, xi2: f64, max_iters: usize) -> Result<Lemma1Report> {
    check_feasible(r.len(), xi1, xi2)?;
    let scale = r.iter().map(|x| x.abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        return Err(Error::Domain("r must be nonzero".into()));
    }
    let sum: f64 = r.iter().sum();
    if sum.abs() > 1e-9 * scale * r.len() as f64 {
        return Err(Error::Domain(format!("r must sum to zero, got {sum}")));
    }
    let r_norm = r.iter().map(|x| x * x).sum::<f64>().sqrt();
    let step = xi2 / r_norm;
    let m = r.len() as f64;
    let mut eta = vec![xi2 / m.sqrt().max(1.0) * 0.5; r.len()];
    for e in &mut eta {
        *e = e.max(xi1);
    }
    let mut stationarity = f64::INFINITY;
    let mut iterations = 0;
    while iterations < max_iters {
        iterations += 1;
        let moved: Vec<f64> = eta.iter().zip(r).map(|(e, g)| e - step * g).collect();
        let next = project_gamma2(&moved, xi1, xi2)?;
        stationarity = next
            .iter()
            .zip(&eta)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
            / step;
        eta = next;
        if stationarity < LEMMA1_STATIONARITY {
            break;
        }
    }
    let norm = eta.iter().map(|x| x * x).sum::<f64>().sqrt();
    Ok(Lemma1Report {
        on_sphere: (norm - xi2).abs() < LEMMA1_SPHERE_TOL && stationarity < LEMMA1_STATIONARITY,
        eta,
        norm,
        iterations,
        stationarity,
    })
}

/// One row of the regulator trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: u64,
    pub m: usize,
    pub eta_m: f64,
    pub mal_m: Option<f64>,
    pub ra_m: Option<f64>,
}

/// Trace rows for every modality at one outer step.
pub fn trace_rows(step: u64, state: &SupervisionState, ra: Option<&[f64]>) -> Vec<TraceRow> {
    (0..state.n_modalities())
        .map(|m| TraceRow {
            step,
            m: m + 1,
            eta_m: state.eta[m],
            mal_m: state.mal[m],
            ra_m: ra.map(|r| r[m]),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const XI1: f64 = 0.015;
    const XI2: f64 = 0.15;

    #[test]
    fn relative_advantage_examples() {
        assert_eq!(relative_advantage(&[1.0, 1.0, 1.0]).unwrap(), vec![0.0; 3]);
        let r = relative_advantage(&[0.5, 1.0, 1.5]).unwrap();
        for (a, b) in r.iter().zip([0.5, 0.0, -0.5]) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(matches!(relative_advantage(&[1.0, 0.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn mal_examples() {
        assert!((mal_update(Some(1.0), 0.5, 0.7).unwrap() - 0.65).abs() < 1e-15);
        assert_eq!(mal_update(None, 0.5, 0.7).unwrap(), 0.5);
        assert_eq!(mal_update(Some(2.0), 0.5, 1.0).unwrap(), 0.5);
        assert_eq!(mal_update(Some(0.3), 0.3, 0.7).unwrap(), 0.3);
    }

    #[test]
    fn absent_modalities_keep_stale_average() {
        let mut s = SupervisionState::new(3, RegulatorConfig::default()).unwrap();
        s.update_mal(&[(0, 1.0), (2, 2.0)]).unwrap();
        assert!(s.relative_advantage().is_none());
        s.update_mal(&[(1, 1.0), (0, 0.5)]).unwrap();
        assert!((s.mal[0].unwrap() - 0.65).abs() < 1e-15);
        assert_eq!(s.mal[1..], [Some(1.0), Some(2.0)]);
    }

    #[test]
    fn projection_examples() {
        let p = project_gamma1(&[0.3, 0.3], XI1, XI2).unwrap();
        for x in &p {
            assert!((x - 0.106066).abs() < 1e-6);
        }
        let p = project_gamma1(&[0.3, 0.0], XI1, XI2).unwrap();
        assert!((p[0] - 0.149249).abs() < 1e-6);
        assert_eq!(p[1], XI1);
        let inside = project_gamma1(&[0.3, 0.0], XI1, XI2).unwrap();
        assert_eq!(project_gamma1(&inside, XI1, XI2).unwrap(), inside);
    }

    #[test]
    fn projection_nonpositive_input() {
        let p = project_gamma1(&[-1.0, -0.5, -0.5], XI1, XI2).unwrap();
        assert_eq!(p[0], XI1);
        assert_eq!(p[2], XI1);
        assert!((p[1] - (XI2 * XI2 - 2.0 * XI1 * XI1).sqrt()).abs() < 1e-15);
        let p = project_gamma1(&[0.0, 0.0], XI1, XI2).unwrap();
        assert!(p[0] > p[1]);
    }

    #[test]
    fn projection_rejects_infeasible_bounds() {
        assert!(matches!(project_gamma1(&[1.0, 1.0], 0.2, 0.15), Err(Error::Config(_))));
        assert!(matches!(
            SupervisionState::new(100, RegulatorConfig::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn eta_update_examples() {
        let state = SupervisionState::new(2, RegulatorConfig::default()).unwrap();
        assert_eq!(eta_update(&state, &[0.0, 0.0]).unwrap(), state.eta);
        let next = eta_update(&state, &[0.5, -0.5]).unwrap();
        assert!((next[0] - 0.050714).abs() < 1e-4, "{next:?}");
        assert!((next[1] - 0.141174).abs() < 1e-4, "{next:?}");
    }

    #[test]
    fn lemma1_examples() {
        let rep = lemma1_verify(&[0.5, 0.0, -0.5], XI1, XI2, 1_000_000).unwrap();
        assert!(rep.on_sphere, "{rep:?}");
        let rep = lemma1_verify(&[1.0, -1.0], XI1, XI2, 1_000_000).unwrap();
        assert!((rep.eta[0] - XI1).abs() < 1e-9);
        assert!((rep.eta[1] - (XI2 * XI2 - XI1 * XI1).sqrt()).abs() < 1e-7);
        assert!(matches!(lemma1_verify(&[0.0, 0.0], XI1, XI2, 10), Err(Error::Domain(_))));
        assert!(matches!(lemma1_verify(&[1.0, 0.5], XI1, XI2, 10), Err(Error::Domain(_))));
    }

    #[test]
    fn gamma2_projection_inside_is_clip() {
        assert_eq!(project_gamma2(&[0.05, -1.0], XI1, XI2).unwrap(), vec![0.05, XI1]);
    }
}
