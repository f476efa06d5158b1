//! Monte Carlo engine for large rings.
//!
//! Runs the chain with O(1) zero sampling, estimates the stationary ones
//! fraction with batch-means confidence intervals, probes the conditional
//! drift on `{M >= 8, i_t in E_t}`, and scans (n, p) grids for the empirical
//! critical region.

use crate::drift::{self, DriftError};
use crate::model::{
    detect_flip, potential, zero_span, ModelError, PotentialParams, RingConfig, ZeroSpan,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum McError {
    #[error("invalid simulation plan: {0}")]
    Plan(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Drift(#[from] DriftError),
}

/// Everything needed to reproduce one trajectory bit-for-bit.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SimulationPlan {
    pub n: usize,
    pub p: f64,
    pub total_steps: u64,
    pub burn_in_steps: u64,
    pub seed: u64,
    /// Sub-stream of the seeded generator; grid points get distinct streams.
    pub stream: u64,
    pub batch_count: usize,
    /// If nonzero, keep a downsampled zero-fraction series of about this size.
    pub series_points: usize,
}

impl SimulationPlan {
    /// Defaults: 10% burn-in, 30 batches, no series.
    pub fn new(n: usize, p: f64, total_steps: u64, seed: u64) -> Result<Self, McError> {
        let plan = SimulationPlan {
            n,
            p,
            total_steps,
            burn_in_steps: total_steps / 10,
            seed,
            stream: 0,
            batch_count: 30,
            series_points: 0,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<(), McError> {
        if self.n < 3 {
            return Err(McError::Plan(format!("n = {} < 3", self.n)));
        }
        if !(0.0..=1.0).contains(&self.p) {
            return Err(McError::Plan(format!("p = {} outside [0, 1]", self.p)));
        }
        if self.burn_in_steps >= self.total_steps {
            return Err(McError::Plan("burn-in must be shorter than the run".into()));
        }
        if self.batch_count < 10 {
            return Err(McError::Plan("need at least 10 batches".into()));
        }
        if self.total_steps - self.burn_in_steps < self.batch_count as u64 {
            return Err(McError::Plan("fewer measured steps than batches".into()));
        }
        Ok(())
    }
}

/// What one step looked like, for renewal/drift bookkeeping.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct StepView {
    pub chosen: usize,
    pub draws: (u8, u8, u8),
    pub all_ones_fallback: bool,
    pub in_end_set: bool,
    pub flip: bool,
    pub d_before: usize,
    pub d_after: usize,
    pub m_before: f64,
    pub m_after: f64,
}

impl StepView {
    /// Renewal in the sense of the stopping times: the chosen index lies in
    /// the end set or the endpoints flip.
    pub fn renewal(&self) -> bool {
        self.in_end_set || self.flip
    }
}

/// Sequential chain driver: bit vector plus a swap-remove zero list so that
/// sampling a uniform zero and applying a replacement are O(1); the span and
/// potential are refreshed once per step.
pub struct Simulator {
    config: RingConfig,
    zeros: Vec<u32>,
    pos: Vec<u32>,
    span: ZeroSpan,
    p: f64,
    rng: ChaCha8Rng,
}

const NOT_A_ZERO: u32 = u32::MAX;

impl Simulator {
    /// Starts from the all-zeros configuration for reproducibility.
    pub fn new(n: usize, p: f64, seed: u64, stream: u64) -> Result<Self, McError> {
        if !(0.0..=1.0).contains(&p) {
            return Err(McError::Plan(format!("p = {p} outside [0, 1]")));
        }
        let config = RingConfig::all_zeros(n)?;
        let span = zero_span(&config, None);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Ok(Simulator {
            zeros: (0..n as u32).collect(),
            pos: (0..n as u32).collect(),
            config,
            span,
            p,
            rng,
        })
    }

    pub fn config(&self) -> &RingConfig {
        &self.config
    }

    pub fn span(&self) -> &ZeroSpan {
        &self.span
    }

    pub fn zero_count(&self) -> usize {
        self.zeros.len()
    }

    pub fn ones_fraction(&self) -> f64 {
        1.0 - self.zeros.len() as f64 / self.config.len() as f64
    }

    fn set_bit(&mut self, j: usize, value: u8) {
        let old = self.config.bits()[j];
        if old == value {
            return;
        }
        self.config.set(j as isize, value);
        if value == 1 {
            let k = self.pos[j] as usize;
            let last = self.zeros.pop().expect("zero list nonempty");
            if k < self.zeros.len() {
                self.zeros[k] = last;
                self.pos[last as usize] = k as u32;
            }
            self.pos[j] = NOT_A_ZERO;
        } else {
            self.pos[j] = self.zeros.len() as u32;
            self.zeros.push(j as u32);
        }
    }

    /// One transition with full span/potential bookkeeping.
    pub fn step(&mut self, params: &PotentialParams) -> StepView {
        let n = self.config.len();
        let prev = self.span;
        let m_before = potential(&self.config, &prev, params);
        let (chosen, fallback) = if self.zeros.is_empty() {
            (self.rng.random_range(0..n), true)
        } else {
            (
                self.zeros[self.rng.random_range(0..self.zeros.len())] as usize,
                false,
            )
        };
        let in_end_set = prev.in_end_set(n, chosen);
        let draws = (
            u8::from(self.rng.random::<f64>() < self.p),
            u8::from(self.rng.random::<f64>() < self.p),
            u8::from(self.rng.random::<f64>() < self.p),
        );
        self.set_bit((chosen + n - 1) % n, draws.0);
        self.set_bit(chosen, draws.1);
        self.set_bit((chosen + 1) % n, draws.2);
        self.span = zero_span(&self.config, Some(&prev));
        StepView {
            chosen,
            draws,
            all_ones_fallback: fallback,
            in_end_set,
            flip: detect_flip(&prev, &self.span),
            d_before: prev.diameter,
            d_after: self.span.diameter,
            m_before,
            m_after: potential(&self.config, &self.span, params),
        }
    }

    /// True when the chain can never leave the current state.
    pub fn absorbed(&self) -> bool {
        (self.p == 0.0 && self.zeros.len() == self.config.len())
            || (self.p == 1.0 && self.zeros.is_empty())
    }

    /// Full consistency check of the incremental zero list; used by tests
    /// and debug audits.
    pub fn audit(&self) -> bool {
        let by_scan = self.config.zeros();
        let mut by_list: Vec<usize> = self.zeros.iter().map(|&z| z as usize).collect();
        by_list.sort_unstable();
        by_scan == by_list
            && self
                .zeros
                .iter()
                .enumerate()
                .all(|(k, &z)| self.pos[z as usize] == k as u32)
    }
}

/// Mean, batch-means standard error and 95% interval.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub std_err: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

fn batch_estimate(batch_means: &[f64]) -> Estimate {
    let b = batch_means.len() as f64;
    let mean = batch_means.iter().sum::<f64>() / b;
    let var = batch_means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (b - 1.0);
    let std_err = (var / b).sqrt();
    Estimate {
        mean,
        std_err,
        ci_low: mean - 1.96 * std_err,
        ci_high: mean + 1.96 * std_err,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryStats {
    pub plan: SimulationPlan,
    pub nu_hat: Estimate,
    pub mean_potential: f64,
    /// Conditional drift samples on `{M >= 8, chosen in end set}`.
    pub drift: Option<Estimate>,
    pub drift_samples: u64,
    pub flip_count: u64,
    pub renewal_count: u64,
    pub zero_fraction_series: Option<Vec<f64>>,
}

/// Runs one trajectory and accumulates the measurement pass described by the
/// plan. At p in {0, 1} the absorbing state is detected and the remaining
/// steps are filled in without touching the generator.
pub fn simulate(plan: &SimulationPlan, params: &PotentialParams) -> Result<TrajectoryStats, McError> {
    plan.validate()?;
    let mut sim = Simulator::new(plan.n, plan.p, plan.seed, plan.stream)?;
    let measured = plan.total_steps - plan.burn_in_steps;
    let batch_len = measured / plan.batch_count as u64;
    // Measure exactly batch_count * batch_len steps so every batch is full.
    let measured = batch_len * plan.batch_count as u64;
    let total = plan.burn_in_steps + measured;

    let mut nu_batches = Vec::with_capacity(plan.batch_count);
    let mut drift_batches: Vec<(f64, u64)> = Vec::with_capacity(plan.batch_count);
    let mut batch_nu_sum = 0.0;
    let mut batch_drift_sum = 0.0;
    let mut batch_drift_n = 0u64;
    let mut in_batch = 0u64;
    let mut m_sum = 0.0;
    let mut flip_count = 0u64;
    let mut renewal_count = 0u64;
    let mut series = Vec::new();
    let series_every = if plan.series_points > 0 {
        (measured / plan.series_points as u64).max(1)
    } else {
        0
    };

    let mut t = 0u64;
    while t < total {
        if sim.absorbed() {
            break;
        }
        let view = sim.step(params);
        t += 1;
        if t <= plan.burn_in_steps {
            continue;
        }
        batch_nu_sum += sim.ones_fraction();
        m_sum += view.m_after;
        if view.flip {
            flip_count += 1;
        }
        if view.renewal() {
            renewal_count += 1;
        }
        if view.m_before >= 8.0 && view.in_end_set {
            batch_drift_sum += view.m_after - view.m_before;
            batch_drift_n += 1;
        }
        if series_every > 0 && (t - plan.burn_in_steps) % series_every == 0 {
            series.push(1.0 - sim.ones_fraction());
        }
        in_batch += 1;
        if in_batch == batch_len {
            nu_batches.push(batch_nu_sum / batch_len as f64);
            drift_batches.push((batch_drift_sum, batch_drift_n));
            batch_nu_sum = 0.0;
            batch_drift_sum = 0.0;
            batch_drift_n = 0;
            in_batch = 0;
        }
    }

    if t < total {
        // Absorbed: every remaining measurement is the current constant.
        let nu_now = sim.ones_fraction();
        let m_now = potential(sim.config(), sim.span(), params);
        let measured_done = t.saturating_sub(plan.burn_in_steps);
        let remaining = measured - measured_done;
        m_sum += m_now * remaining as f64;
        batch_nu_sum += nu_now * ((batch_len - in_batch) % batch_len) as f64;
        if in_batch > 0 {
            nu_batches.push(batch_nu_sum / batch_len as f64);
            drift_batches.push((batch_drift_sum, batch_drift_n));
        }
        while nu_batches.len() < plan.batch_count {
            nu_batches.push(nu_now);
            drift_batches.push((0.0, 0));
        }
    }

    let drift_total: u64 = drift_batches.iter().map(|&(_, k)| k).sum();
    let drift = if drift_total >= plan.batch_count as u64 {
        let means: Vec<f64> = drift_batches
            .iter()
            .filter(|&&(_, k)| k > 0)
            .map(|&(s, k)| s / k as f64)
            .collect();
        if means.len() >= 2 {
            Some(batch_estimate(&means))
        } else {
            None
        }
    } else {
        None
    };

    Ok(TrajectoryStats {
        plan: *plan,
        nu_hat: batch_estimate(&nu_batches),
        mean_potential: m_sum / measured as f64,
        drift,
        drift_samples: drift_total,
        flip_count,
        renewal_count,
        zero_fraction_series: if series.is_empty() { None } else { Some(series) },
    })
}

/// Point estimate of the stationary ones fraction with a 95% interval.
pub fn estimate_nu(n: usize, p: f64, budget: u64, seed: u64) -> Result<Estimate, McError> {
    if budget < 100_000 {
        return Err(McError::Plan(format!("budget {budget} < 1e5 steps")));
    }
    let plan = SimulationPlan::new(n, p, budget, seed)?;
    let params = PotentialParams::new(0.3)?;
    Ok(simulate(&plan, &params)?.nu_hat)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DriftProbe {
    pub estimate: Option<Estimate>,
    pub samples: u64,
    pub underpowered: bool,
    /// The closed-form guarantee -margin at these parameters, for reference.
    pub epsilon_reference: f64,
}

/// Empirical mean of M_{t+1} - M_t over steps with M >= 8 and the chosen
/// index in the end set, against the closed-form worst-case drift.
pub fn conditional_drift_probe(
    n: usize,
    p: f64,
    params: &PotentialParams,
    budget: u64,
    seed: u64,
) -> Result<DriftProbe, McError> {
    let plan = SimulationPlan {
        burn_in_steps: budget / 20,
        ..SimulationPlan::new(n, p, budget, seed)?
    };
    let stats = simulate(&plan, params)?;
    let margin = if p > 0.0 && p < 1.0 {
        drift::worst_drift(p, params.beta)?.margin
    } else {
        f64::NAN
    };
    Ok(DriftProbe {
        underpowered: stats.drift_samples < 1_000,
        estimate: stats.drift,
        samples: stats.drift_samples,
        epsilon_reference: -margin,
    })
}

/// One (n, p) grid point of a critical scan; mirrors the CSV row layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScanRow {
    pub n: usize,
    pub p: f64,
    pub seed: u64,
    pub steps: u64,
    pub nu_hat: f64,
    pub std_err: f64,
    pub mean_potential: f64,
    pub flip_count: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScanReport {
    pub rows: Vec<ScanRow>,
    /// First grid p where n(1 - nu) stops growing from the smallest to the
    /// largest n (ratio <= 2), i.e. the empirical critical region.
    pub crossing_estimate: Option<f64>,
    /// Soft monotonicity-in-p violations (warnings, not failures).
    pub warnings: Vec<String>,
}

/// Simulates every (n, p) grid point on its own deterministic generator
/// stream; points run in parallel, aggregation order is fixed.
pub fn scan_critical(
    n_list: &[usize],
    p_grid: &[f64],
    budget: u64,
    seed: u64,
) -> Result<ScanReport, McError> {
    let params = PotentialParams::new(0.3)?;
    let points: Vec<(usize, f64)> = n_list
        .iter()
        .flat_map(|&n| p_grid.iter().map(move |&p| (n, p)))
        .collect();
    let rows: Vec<ScanRow> = points
        .par_iter()
        .enumerate()
        .map(|(k, &(n, p))| {
            let plan = SimulationPlan {
                stream: k as u64 + 1,
                ..SimulationPlan::new(n, p, budget, seed)?
            };
            let stats = simulate(&plan, &params)?;
            Ok(ScanRow {
                n,
                p,
                seed,
                steps: budget,
                nu_hat: stats.nu_hat.mean,
                std_err: stats.nu_hat.std_err,
                mean_potential: stats.mean_potential,
                flip_count: stats.flip_count,
            })
        })
        .collect::<Result<_, McError>>()?;

    let mut warnings = Vec::new();
    for &n in n_list {
        let mut along_p: Vec<&ScanRow> = rows.iter().filter(|r| r.n == n).collect();
        along_p.sort_by(|a, b| a.p.total_cmp(&b.p));
        for w in along_p.windows(2) {
            let slack = 3.0 * (w[0].std_err.hypot(w[1].std_err));
            if w[1].nu_hat < w[0].nu_hat - slack {
                warnings.push(format!(
                    "nu not monotone in p at n={n}: nu({}) = {:.4} > nu({}) = {:.4}",
                    w[0].p, w[0].nu_hat, w[1].p, w[1].nu_hat
                ));
            }
        }
    }

    let crossing_estimate = if n_list.len() >= 2 {
        let n_min = *n_list.iter().min().expect("nonempty");
        let n_max = *n_list.iter().max().expect("nonempty");
        let mut ps: Vec<f64> = p_grid.to_vec();
        ps.sort_by(f64::total_cmp);
        ps.into_iter().find(|&p| {
            let scaled = |n: usize| {
                rows.iter()
                    .find(|r| r.n == n && r.p == p)
                    .map(|r| n as f64 * (1.0 - r.nu_hat))
            };
            match (scaled(n_min), scaled(n_max)) {
                (Some(lo), Some(hi)) if lo > 0.0 => hi / lo <= 2.0,
                _ => false,
            }
        })
    } else {
        None
    };

    Ok(ScanReport {
        rows,
        crossing_estimate,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::{build_kernel, stationary};

    fn params() -> PotentialParams {
        PotentialParams::new(0.3).unwrap()
    }

    #[test]
    fn zero_list_stays_consistent() {
        let mut sim = Simulator::new(17, 0.45, 7, 0).unwrap();
        let p = params();
        for t in 0..5_000 {
            let view = sim.step(&p);
            if t % 50 == 0 {
                assert!(sim.audit(), "zero list diverged at step {t}");
            }
            // span bookkeeping matches a from-scratch recompute
            assert_eq!(view.d_after, sim.span().diameter);
            assert!(view.m_after >= 0.0);
        }
    }

    #[test]
    fn absorbing_endpoints() {
        let p = params();
        let plan = SimulationPlan::new(12, 0.0, 200_000, 1).unwrap();
        let stats = simulate(&plan, &p).unwrap();
        assert_eq!(stats.nu_hat.mean, 0.0);
        assert_eq!(stats.nu_hat.std_err, 0.0);

        let plan = SimulationPlan::new(12, 1.0, 200_000, 1).unwrap();
        let stats = simulate(&plan, &p).unwrap();
        assert_eq!(stats.nu_hat.mean, 1.0);
        assert_eq!(stats.mean_potential, 0.0);
    }

    #[test]
    fn deterministic_replay() {
        let plan = SimulationPlan::new(64, 0.6, 150_000, 42).unwrap();
        let a = simulate(&plan, &params()).unwrap();
        let b = simulate(&plan, &params()).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn matches_exact_solver_at_n10() {
        let kernel = build_kernel(10, 0.5).unwrap();
        let exact_nu = stationary(&kernel).unwrap().nu;
        let est = estimate_nu(10, 0.5, 400_000, 3).unwrap();
        assert!(
            (est.mean - exact_nu).abs() <= 3.0 * est.std_err,
            "nu_hat {} vs exact {} (se {})",
            est.mean,
            exact_nu,
            est.std_err
        );
    }

    #[test]
    fn drift_probe_negative_at_p1() {
        // At p = 1 every qualifying step writes three ones, so each sampled
        // increment is strictly negative until absorption.
        let plan = SimulationPlan {
            burn_in_steps: 0,
            batch_count: 10,
            ..SimulationPlan::new(400, 1.0, 100_000, 5).unwrap()
        };
        let stats = simulate(&plan, &params()).unwrap();
        assert!(stats.drift_samples > 0);
        if let Some(d) = stats.drift {
            assert!(d.mean < 0.0);
        }
    }

    #[test]
    fn drift_probe_supercritical() {
        let probe = conditional_drift_probe(128, 0.6, &params(), 300_000, 11).unwrap();
        assert!(!probe.underpowered);
        let est = probe.estimate.expect("enough samples");
        assert!(
            est.mean + 2.0 * est.std_err < 0.0,
            "drift {} +- {}",
            est.mean,
            est.std_err
        );
    }

    #[test]
    fn scan_produces_rows_and_bracket() {
        let report = scan_critical(&[16, 32], &[0.2, 0.4, 0.6, 0.8], 120_000, 9).unwrap();
        assert_eq!(report.rows.len(), 8);
        for row in &report.rows {
            assert!((0.0..=1.0).contains(&row.nu_hat));
        }
        if let Some(p) = report.crossing_estimate {
            assert!((0.0..=1.0).contains(&p));
        }
    }
}
