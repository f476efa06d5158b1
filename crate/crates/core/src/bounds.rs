//! Renewal structure and moment-bound machinery.
//!
//! Extracts the stopping times where the chosen index lies in the end set or
//! the endpoints flip, checks that the potential is exactly constant between
//! them, verifies the geometric domination of inter-renewal gaps, computes
//! the exponential-moment constants, and validates them on synthetic walks
//! and on the chain itself.

use crate::mc::{McError, SimulationPlan, Simulator, StepView};
use crate::model::{PotentialParams, RingConfig, ZeroSpan};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BoundError {
    #[error("invalid constants: {0}")]
    Constants(String),
    #[error("empty trajectory")]
    EmptyTrajectory,
    #[error(transparent)]
    Mc(#[from] McError),
}

/// Stopping times tau_0 = 0 < tau_1 < ... at which the chosen index lies in
/// the end set or the endpoints flip, together with the sampled potential.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RenewalTrace {
    pub taus: Vec<u64>,
    /// Y_k: the potential at time tau_k, i.e. just before that step.
    pub sampled_values: Vec<f64>,
    /// The potential prevailing on (tau_k, tau_{k+1}]; it is this level that
    /// controls the hazard of the next renewal.
    pub level_after: Vec<f64>,
    pub steps: u64,
    /// Steps outside the renewal set where the potential changed (must be 0).
    pub constancy_violations: u64,
    /// Largest potential increase over steps starting at D >= 6, where the
    /// truncation is inactive and the up-step bound of 2 applies.
    pub max_up_step: f64,
    /// Largest potential increase over all steps. Crossing D = 5 -> 6 jumps
    /// the truncated potential from 0 to about 6, so this can exceed 2.
    pub max_up_step_any: f64,
    /// d -> (steps observed with diameter d, renewals among them); the
    /// all-ones state (d = 0) is excluded, its hazard bound is vacuous.
    pub hazard_tallies: BTreeMap<usize, (u64, u64)>,
}

impl RenewalTrace {
    /// N(t) = max{k : tau_k <= t}.
    pub fn count_at(&self, t: u64) -> usize {
        self.taus.partition_point(|&tau| tau <= t) - 1
    }
}

/// Builds the renewal trace from a replayed trajectory, asserting along the
/// way that the potential only moves at renewal steps.
pub fn renewal_times<I>(views: I) -> Result<RenewalTrace, BoundError>
where
    I: IntoIterator<Item = StepView>,
{
    let mut trace = RenewalTrace {
        taus: vec![0],
        sampled_values: Vec::new(),
        level_after: Vec::new(),
        steps: 0,
        constancy_violations: 0,
        max_up_step: f64::NEG_INFINITY,
        max_up_step_any: f64::NEG_INFINITY,
        hazard_tallies: BTreeMap::new(),
    };
    // The gap level: the hazard argument runs through the diameter, so in
    // the truncation band D < 6 the controlling level is D - 1, not the
    // (zeroed) potential. The all-ones state has no zeros to choose from and
    // no hazard bound; such stretches are marked with -1 and left unbinned.
    let level = |m: f64, d: usize| -> f64 {
        if d >= 6 {
            m
        } else if d == 0 {
            -1.0
        } else {
            (d - 1) as f64
        }
    };
    let mut first = true;
    for view in views {
        trace.steps += 1;
        if first {
            trace.sampled_values.push(view.m_before);
            trace.level_after.push(level(view.m_before, view.d_before));
            first = false;
        }
        if view.d_before >= 1 {
            let tally = trace.hazard_tallies.entry(view.d_before).or_insert((0, 0));
            tally.0 += 1;
            if view.renewal() {
                tally.1 += 1;
            }
        }
        let delta = view.m_after - view.m_before;
        trace.max_up_step_any = trace.max_up_step_any.max(delta);
        if view.d_before >= 6 {
            trace.max_up_step = trace.max_up_step.max(delta);
        }
        if view.renewal() {
            trace.taus.push(trace.steps);
            trace.sampled_values.push(view.m_before);
            trace.level_after.push(level(view.m_after, view.d_after));
        } else if delta != 0.0 {
            trace.constancy_violations += 1;
        }
    }
    if trace.steps == 0 {
        return Err(BoundError::EmptyTrajectory);
    }
    Ok(trace)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GapBin {
    /// floor of the potential level prevailing during the gaps in this bin.
    pub m_level: usize,
    pub count: u64,
    pub mean_gap: f64,
    pub std_err: f64,
    /// 1 + mean prevailing potential: the geometric-domination target.
    pub bound: f64,
    pub underpowered: bool,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HazardBin {
    pub d: usize,
    pub samples: u64,
    pub hazard: f64,
    pub std_err: f64,
    pub bound: f64,
    pub underpowered: bool,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DominationReport {
    pub gap_bins: Vec<GapBin>,
    pub hazard_bins: Vec<HazardBin>,
    pub constancy_violations: u64,
    pub max_up_step: f64,
    pub max_up_step_any: f64,
    pub renewals: usize,
}

impl DominationReport {
    pub fn passed(&self) -> bool {
        self.constancy_violations == 0
            && self.max_up_step <= 2.0 + 1e-12
            && self.gap_bins.iter().all(|b| b.pass || b.underpowered)
            && self.hazard_bins.iter().all(|b| b.pass || b.underpowered)
    }
}

const GAP_BIN_MIN: u64 = 100;
const HAZARD_BIN_MIN: u64 = 10_000;

/// Bins inter-renewal gaps by the prevailing potential and checks the mean
/// gap against 1 + m with a 3-standard-error allowance; also checks the
/// per-step renewal hazard at diameter d against 1/d.
pub fn check_geometric_domination(trace: &RenewalTrace) -> DominationReport {
    let mut bins: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
    for k in 0..trace.taus.len() - 1 {
        let gap = (trace.taus[k + 1] - trace.taus[k]) as f64;
        let level = trace.level_after[k];
        if level < 0.0 {
            continue;
        }
        bins.entry(level as usize).or_default().push((gap, level));
    }
    let gap_bins = bins
        .into_iter()
        .map(|(m_level, gaps)| {
            let count = gaps.len() as u64;
            let mean_gap = gaps.iter().map(|&(g, _)| g).sum::<f64>() / count as f64;
            let mean_level = gaps.iter().map(|&(_, l)| l).sum::<f64>() / count as f64;
            let var = gaps
                .iter()
                .map(|&(g, _)| (g - mean_gap).powi(2))
                .sum::<f64>()
                / (count.max(2) - 1) as f64;
            let std_err = (var / count as f64).sqrt();
            let bound = 1.0 + mean_level;
            GapBin {
                m_level,
                count,
                mean_gap,
                std_err,
                bound,
                underpowered: count < GAP_BIN_MIN,
                pass: mean_gap <= bound + 3.0 * std_err,
            }
        })
        .collect();
    let hazard_bins = trace
        .hazard_tallies
        .iter()
        .map(|(&d, &(samples, renewals))| {
            let hazard = renewals as f64 / samples as f64;
            let std_err = (hazard * (1.0 - hazard) / samples as f64).sqrt();
            let bound = 1.0 / d.max(1) as f64;
            HazardBin {
                d,
                samples,
                hazard,
                std_err,
                bound,
                underpowered: samples < HAZARD_BIN_MIN,
                pass: hazard + 3.0 * std_err >= bound,
            }
        })
        .collect();
    DominationReport {
        gap_bins,
        hazard_bins,
        constancy_violations: trace.constancy_violations,
        max_up_step: trace.max_up_step,
        max_up_step_any: trace.max_up_step_any,
        renewals: trace.taus.len(),
    }
}

/// Constants of the exponential-moment lemma and the renewal bound.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MomentBoundConstants {
    pub c: f64,
    pub b: f64,
    pub r: f64,
    pub epsilon: f64,
    pub p_order: u32,
    pub h: f64,
    pub contraction: f64,
    pub r_p: f64,
    pub r_tilde: f64,
}

fn factorial(k: u32) -> f64 {
    (1..=k).map(f64::from).product()
}

fn r_moment(p_order: u32, h: f64, c: f64, b: f64, epsilon: f64) -> f64 {
    2.0 * factorial(p_order) * (h * (c + b)).exp() / (epsilon * h.powi(p_order as i32 + 1))
}

/// Fixes h = min(1/(2b), eps/(4b^2)) — strictly inside both printed
/// constraints h < 1/b and h b^2 < eps/2 — and evaluates the closed forms.
pub fn moment_bound_constants(
    c: f64,
    b: f64,
    epsilon: f64,
    p_order: u32,
) -> Result<MomentBoundConstants, BoundError> {
    let h = (1.0 / (2.0 * b)).min(epsilon / (4.0 * b * b));
    moment_bound_constants_with_h(c, b, epsilon, p_order, h)
}

/// Same closed forms at a caller-chosen h.
pub fn moment_bound_constants_with_h(
    c: f64,
    b: f64,
    epsilon: f64,
    p_order: u32,
    h: f64,
) -> Result<MomentBoundConstants, BoundError> {
    if c <= 0.0 || b <= 0.0 || epsilon <= 0.0 || p_order == 0 {
        return Err(BoundError::Constants(
            "need C, b, eps > 0 and p_order >= 1".into(),
        ));
    }
    if h <= 0.0 || h >= 1.0 / b || h * b * b >= epsilon / 2.0 {
        return Err(BoundError::Constants(format!(
            "h = {h} violates 0 < h < 1/b and h b^2 < eps/2"
        )));
    }
    let r = 1.0;
    let r_1 = r_moment(1, h, c, b, epsilon);
    let r_2 = r_moment(2, h, c, b, epsilon);
    Ok(MomentBoundConstants {
        c,
        b,
        r,
        epsilon,
        p_order,
        h,
        contraction: 1.0 - h * epsilon / 2.0,
        r_p: r_moment(p_order, h, c, b, epsilon),
        r_tilde: r * (r_1 + r_2),
    })
}

/// Synthetic processes satisfying the lemma's conditions by construction.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub enum WalkSpec {
    /// Y_{t+1} = max(Y_t + xi, 0) with xi = +1 w.p. up_prob, else -1.
    Reflected { up_prob: f64, y0: f64 },
    /// Y_{t+1} = max(Y_t - 1, 0).
    DeterministicDecreasing { y0: f64 },
}

impl WalkSpec {
    fn y0(&self) -> f64 {
        match *self {
            WalkSpec::Reflected { y0, .. } => y0,
            WalkSpec::DeterministicDecreasing { y0 } => y0,
        }
    }

    fn step<R: Rng + ?Sized>(&self, y: f64, rng: &mut R) -> f64 {
        match *self {
            WalkSpec::Reflected { up_prob, .. } => {
                let xi = if rng.random::<f64>() < up_prob { 1.0 } else { -1.0 };
                (y + xi).max(0.0)
            }
            WalkSpec::DeterministicDecreasing { .. } => (y - 1.0).max(0.0),
        }
    }

    /// Literal check of the lemma's conditions: up-steps bounded by b, and
    /// the truncated drift E[delta 1_{delta >= -b}] at most -eps above C.
    fn satisfies(&self, k: &MomentBoundConstants) -> Result<(), BoundError> {
        let (up_step, truncated_drift) = match *self {
            WalkSpec::Reflected { up_prob, .. } => {
                let down = if 1.0 <= k.b { -(1.0 - up_prob) } else { 0.0 };
                (1.0, up_prob + down)
            }
            WalkSpec::DeterministicDecreasing { .. } => {
                (0.0, if 1.0 <= k.b { -1.0 } else { 0.0 })
            }
        };
        if up_step > k.b {
            return Err(BoundError::Constants(format!(
                "walk up-step {up_step} exceeds b = {}",
                k.b
            )));
        }
        if truncated_drift > -k.epsilon + 1e-12 {
            return Err(BoundError::Constants(format!(
                "walk truncated drift {truncated_drift} above -eps = {}",
                -k.epsilon
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WalkReport {
    pub constants: MomentBoundConstants,
    pub mean_moment: f64,
    pub moment_std_err: f64,
    pub moment_bound: f64,
    pub mean_exp: f64,
    pub exp_std_err: f64,
    pub exp_bound: f64,
    pub moment_pass: bool,
    pub exp_pass: bool,
}

impl WalkReport {
    pub fn passed(&self) -> bool {
        self.moment_pass && self.exp_pass
    }
}

const WALK_BATCHES: usize = 30;

/// Long-run Monte Carlo estimates of E[Y^p] and E[e^{hY}] against the
/// printed bounds R_p and e^{h(C+b)} / (1 - gamma).
pub fn verify_fmm_on_walk(
    walk: WalkSpec,
    constants: &MomentBoundConstants,
    budget: u64,
    seed: u64,
) -> Result<WalkReport, BoundError> {
    walk.satisfies(constants)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut y = walk.y0();
    let burn_in = budget / 10;
    for _ in 0..burn_in {
        y = walk.step(y, &mut rng);
    }
    let batch_len = ((budget - burn_in) / WALK_BATCHES as u64).max(1);
    let mut moment_means = Vec::with_capacity(WALK_BATCHES);
    let mut exp_means = Vec::with_capacity(WALK_BATCHES);
    for _ in 0..WALK_BATCHES {
        let mut moment_sum = 0.0;
        let mut exp_sum = 0.0;
        for _ in 0..batch_len {
            y = walk.step(y, &mut rng);
            moment_sum += y.powi(constants.p_order as i32);
            exp_sum += (constants.h * y).exp();
        }
        moment_means.push(moment_sum / batch_len as f64);
        exp_means.push(exp_sum / batch_len as f64);
    }
    let stats = |means: &[f64]| {
        let b = means.len() as f64;
        let mean = means.iter().sum::<f64>() / b;
        let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (b - 1.0);
        (mean, (var / b).sqrt())
    };
    let (mean_moment, moment_std_err) = stats(&moment_means);
    let (mean_exp, exp_std_err) = stats(&exp_means);
    let exp_bound =
        (constants.h * (constants.c + constants.b)).exp() / (1.0 - constants.contraction);
    Ok(WalkReport {
        constants: *constants,
        mean_moment,
        moment_std_err,
        moment_bound: constants.r_p,
        mean_exp,
        exp_std_err,
        exp_bound,
        moment_pass: mean_moment <= constants.r_p + 3.0 * moment_std_err,
        exp_pass: mean_exp <= exp_bound + 3.0 * exp_std_err,
    })
}

/// The potential without the small-diameter truncation: D - beta(..) for any
/// configuration with at least one one. Cesaro averages need this form,
/// since the number of zeros is bounded by it plus one pointwise.
fn untruncated_potential(config: &RingConfig, span: &ZeroSpan, params: &PotentialParams) -> f64 {
    let n = config.len();
    if span.all_one {
        return 0.0;
    }
    if span.all_zero {
        return n as f64 - 2.0 * params.beta;
    }
    let left = f64::from(config.get(span.l as isize + 1) == 0);
    let right = f64::from(config.get(span.r as isize - 1) == 0);
    span.diameter as f64 - params.beta * (left + right)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CesaroRow {
    pub n: usize,
    pub nu_hat: f64,
    pub nu_std_err: f64,
    /// Time average of the truncated potential.
    pub mean_potential: f64,
    /// Time average of D - beta(..): the observed witness for the renewal
    /// bound in the Cesaro inequality.
    pub mean_untruncated: f64,
    pub scaled_deficit: f64,
    pub deficit_ok: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CesaroReport {
    pub p: f64,
    pub rows: Vec<CesaroRow>,
    /// max/min of the time-averaged potential across the n list.
    pub potential_ratio: f64,
    pub bounded: bool,
    pub warning: Option<String>,
}

impl CesaroReport {
    pub fn passed(&self) -> bool {
        self.bounded && self.rows.iter().all(|r| r.deficit_ok)
    }
}

/// Time-averaged potential across ring sizes: checks that it stays bounded
/// in n and that n(1 - nu_hat) <= observed mean untruncated potential + 1
/// within a 3-standard-error allowance.
pub fn cesaro_bound_check(
    n_list: &[usize],
    p: f64,
    params: &PotentialParams,
    budget: u64,
    seed: u64,
) -> Result<CesaroReport, BoundError> {
    let warning = {
        let p_diamond = crate::drift::solve_threshold(1e-12).p_diamond;
        (p <= p_diamond).then(|| {
            format!("p = {p} is not above the threshold {p_diamond:.4}; the bound need not hold")
        })
    };
    let rows: Vec<CesaroRow> = n_list
        .par_iter()
        .enumerate()
        .map(|(k, &n)| {
            let plan = SimulationPlan {
                stream: k as u64 + 1,
                ..SimulationPlan::new(n, p, budget, seed)?
            };
            let mut sim = Simulator::new(plan.n, plan.p, plan.seed, plan.stream)?;
            let mut ones_sum = 0.0;
            let mut m_sum = 0.0;
            let mut raw_sum = 0.0;
            let mut batch_means = Vec::with_capacity(plan.batch_count);
            let batch_len = (plan.total_steps - plan.burn_in_steps) / plan.batch_count as u64;
            let mut batch_sum = 0.0;
            let mut in_batch = 0u64;
            let mut measured = 0u64;
            for t in 0..plan.burn_in_steps + batch_len * plan.batch_count as u64 {
                if sim.absorbed() {
                    break;
                }
                let view = sim.step(params);
                if t < plan.burn_in_steps {
                    continue;
                }
                measured += 1;
                ones_sum += sim.ones_fraction();
                batch_sum += sim.ones_fraction();
                m_sum += view.m_after;
                raw_sum += untruncated_potential(sim.config(), sim.span(), params);
                in_batch += 1;
                if in_batch == batch_len {
                    batch_means.push(batch_sum / batch_len as f64);
                    batch_sum = 0.0;
                    in_batch = 0;
                }
            }
            let total_measured = batch_len * plan.batch_count as u64;
            if measured < total_measured {
                // Absorbed: the rest of the run repeats the current state.
                let frac = sim.ones_fraction();
                let m_now = crate::model::potential(sim.config(), sim.span(), params);
                let raw_now = untruncated_potential(sim.config(), sim.span(), params);
                let rest = total_measured - measured;
                ones_sum += frac * rest as f64;
                m_sum += m_now * rest as f64;
                raw_sum += raw_now * rest as f64;
                if in_batch > 0 {
                    batch_sum += frac * (batch_len - in_batch) as f64;
                    batch_means.push(batch_sum / batch_len as f64);
                }
                while batch_means.len() < plan.batch_count {
                    batch_means.push(frac);
                }
            }
            let nu_hat = ones_sum / total_measured as f64;
            let bcount = batch_means.len() as f64;
            let var = batch_means
                .iter()
                .map(|m| (m - nu_hat).powi(2))
                .sum::<f64>()
                / (bcount - 1.0);
            let nu_std_err = (var / bcount).sqrt();
            let mean_untruncated = raw_sum / total_measured as f64;
            let scaled_deficit = n as f64 * (1.0 - nu_hat);
            Ok(CesaroRow {
                n,
                nu_hat,
                nu_std_err,
                mean_potential: m_sum / total_measured as f64,
                mean_untruncated,
                scaled_deficit,
                deficit_ok: scaled_deficit
                    <= mean_untruncated + 1.0 + 3.0 * n as f64 * nu_std_err,
            })
        })
        .collect::<Result<_, BoundError>>()?;
    let (min_m, max_m) = rows.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), r| {
        (lo.min(r.mean_potential), hi.max(r.mean_potential))
    });
    let potential_ratio = if min_m > 0.0 { max_m / min_m } else { f64::INFINITY };
    Ok(CesaroReport {
        p,
        rows,
        bounded: potential_ratio <= 2.0,
        potential_ratio,
        warning,
    })
}

/// Replays a fresh trajectory and collects its renewal trace.
pub fn trace_chain(
    n: usize,
    p: f64,
    params: &PotentialParams,
    steps: u64,
    seed: u64,
) -> Result<RenewalTrace, BoundError> {
    let mut sim = Simulator::new(n, p, seed, 0)?;
    renewal_times((0..steps).map(move |_| sim.step(params)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> PotentialParams {
        PotentialParams::new(0.3).unwrap()
    }

    #[test]
    fn constants_match_printed_examples() {
        let k = moment_bound_constants(8.0, 2.0, 0.1, 1).unwrap();
        assert!((k.h - 0.00625).abs() < 1e-15);
        assert!((k.contraction - 0.9996875).abs() < 1e-12);
        assert!(k.contraction > 0.0 && k.contraction < 1.0);
        // closed form at a caller-supplied h
        let k = moment_bound_constants_with_h(8.0, 2.0, 0.1, 1, 0.01).unwrap();
        let expect = 2.0 * (0.1f64).exp() / (0.1 * 0.01f64.powi(2));
        assert!((k.r_p - expect).abs() / expect < 1e-14);
        assert!((k.r_tilde - (k.r_p + r_moment(2, 0.01, 8.0, 2.0, 0.1))).abs() < 1e-9);
    }

    #[test]
    fn constants_reject_bad_h() {
        assert!(moment_bound_constants_with_h(8.0, 2.0, 0.1, 1, 0.2).is_err());
        assert!(moment_bound_constants_with_h(8.0, 2.0, 0.1, 0, 0.001).is_err());
    }

    #[test]
    fn every_step_renewal_gives_unit_gaps() {
        let views: Vec<StepView> = (0..5)
            .map(|k| StepView {
                chosen: 0,
                draws: (0, 0, 0),
                all_ones_fallback: false,
                in_end_set: true,
                flip: false,
                d_before: 8,
                d_after: 8,
                m_before: 8.0 - 0.1 * k as f64,
                m_after: 8.0 - 0.1 * (k + 1) as f64,
            })
            .collect();
        let trace = renewal_times(views).unwrap();
        assert_eq!(trace.taus, vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(trace.constancy_violations, 0);
        assert_eq!(trace.count_at(3), 3);
        let report = check_geometric_domination(&trace);
        assert!(report.gap_bins.iter().all(|b| b.mean_gap == 1.0 && b.pass));
    }

    #[test]
    fn chain_potential_constant_between_renewals() {
        let trace = trace_chain(64, 0.6, &params(), 100_000, 17).unwrap();
        assert_eq!(trace.constancy_violations, 0);
        assert!(trace.max_up_step <= 2.0 + 1e-12);
        // renewals strictly sparser than steps for n > 6
        assert!((trace.taus.len() as u64) < trace.steps);
        assert!(trace.taus.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn chain_domination_holds() {
        let trace = trace_chain(48, 0.55, &params(), 400_000, 23).unwrap();
        let report = check_geometric_domination(&trace);
        assert!(report.passed(), "{report:?}");
        assert!(report.hazard_bins.iter().any(|b| !b.underpowered));
    }

    #[test]
    fn reflected_walk_respects_bounds() {
        let k = moment_bound_constants(8.0, 1.0, 0.4, 1).unwrap();
        let walk = WalkSpec::Reflected { up_prob: 0.3, y0: 0.0 };
        let report = verify_fmm_on_walk(walk, &k, 500_000, 7).unwrap();
        assert!(report.passed(), "{report:?}");
        // the reflected walk sits far below the printed ceiling
        assert!(report.mean_moment < report.moment_bound);
    }

    #[test]
    fn deterministic_walk_trivial() {
        let k = moment_bound_constants(8.0, 1.0, 0.4, 1).unwrap();
        let walk = WalkSpec::DeterministicDecreasing { y0: 100.0 };
        let report = verify_fmm_on_walk(walk, &k, 100_000, 1).unwrap();
        assert!(report.passed());
        assert_eq!(report.mean_moment, 0.0);
    }

    #[test]
    fn walk_preconditions_enforced() {
        let k = moment_bound_constants(8.0, 1.0, 0.4, 1).unwrap();
        // drift -0.2 is not <= -0.4: rejected
        let walk = WalkSpec::Reflected { up_prob: 0.4, y0: 0.0 };
        assert!(verify_fmm_on_walk(walk, &k, 10_000, 1).is_err());
    }

    #[test]
    fn renewal_values_respect_moment_bound() {
        // the chain's own Y_k = M_{tau_k} at supercritical p
        let trace = trace_chain(64, 0.6, &params(), 200_000, 31).unwrap();
        let k = moment_bound_constants(8.0, 2.0, 0.01, 1).unwrap();
        let mean_y: f64 =
            trace.sampled_values.iter().sum::<f64>() / trace.sampled_values.len() as f64;
        assert!(mean_y <= k.r_p);
    }

    #[test]
    fn cesaro_bounded_supercritical() {
        let report = cesaro_bound_check(&[24, 48], 0.7, &params(), 300_000, 3).unwrap();
        assert!(report.warning.is_none());
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn cesaro_subcritical_contrast() {
        let report = cesaro_bound_check(&[16, 64], 0.2, &params(), 200_000, 5).unwrap();
        assert!(report.warning.is_some());
        // the potential grows roughly linearly in n below the threshold
        assert!(report.potential_ratio > 2.0);
    }

    #[test]
    fn cesaro_all_ones_absorbing() {
        let report = cesaro_bound_check(&[16], 1.0, &params(), 150_000, 2).unwrap();
        assert!(report.rows[0].mean_potential < 1e-3);
    }
}
