//! Ring configurations, the one-step transition kernel, span/diameter
//! bookkeeping with tie-breaking, flip detection and the potential functions.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("ring length must be at least 3, got {0}")]
    RingTooShort(usize),
    #[error("bit values must be 0 or 1")]
    InvalidBit,
    #[error("parameter {name} = {value} outside {range}")]
    ParamOutOfRange {
        name: &'static str,
        value: f64,
        range: &'static str,
    },
}

/// A state of the chain: `n` binary values on a circle (1 = fit, 0 = unfit).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RingConfig {
    bits: Vec<u8>,
}

impl RingConfig {
    pub fn new(bits: Vec<u8>) -> Result<Self, ModelError> {
        if bits.len() < 3 {
            return Err(ModelError::RingTooShort(bits.len()));
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(ModelError::InvalidBit);
        }
        Ok(Self { bits })
    }

    pub fn all_ones(n: usize) -> Result<Self, ModelError> {
        Self::new(vec![1; n])
    }

    pub fn all_zeros(n: usize) -> Result<Self, ModelError> {
        Self::new(vec![0; n])
    }

    /// Decodes an `n`-bit mask where bit `i` is the value of vertex `i`.
    pub fn from_mask(n: usize, mask: u64) -> Result<Self, ModelError> {
        Self::new((0..n).map(|i| ((mask >> i) & 1) as u8).collect())
    }

    pub fn mask(&self) -> u64 {
        debug_assert!(self.len() <= 64);
        self.bits
            .iter()
            .enumerate()
            .fold(0u64, |m, (i, &b)| m | ((b as u64) << i))
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Value at index `i`, reduced modulo `n`.
    pub fn get(&self, i: isize) -> u8 {
        let n = self.bits.len() as isize;
        self.bits[(i.rem_euclid(n)) as usize]
    }

    pub fn set(&mut self, i: isize, value: u8) {
        let n = self.bits.len() as isize;
        self.bits[(i.rem_euclid(n)) as usize] = value & 1;
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn zero_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b == 0).count()
    }

    pub fn zeros(&self) -> Vec<usize> {
        (0..self.bits.len()).filter(|&i| self.bits[i] == 0).collect()
    }
}

/// Record of a single transition: the chosen vertex and the three draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub chosen_index: usize,
    /// `(eta_L, eta, eta_R)` applied to indices `i-1`, `i`, `i+1`.
    pub draws: (u8, u8, u8),
    /// True iff the pre-step configuration had no zeros.
    pub all_ones_fallback: bool,
}

/// Writes the three draws around `i` into `config`. The deterministic part of
/// the transition rule, shared by the sampler and the exact kernel builder.
pub fn apply_replacement(config: &mut RingConfig, i: usize, draws: (u8, u8, u8)) {
    let i = i as isize;
    config.set(i - 1, draws.0);
    config.set(i, draws.1);
    config.set(i + 1, draws.2);
}

/// One step of the chain: pick a uniform zero (uniform over all vertices if
/// none) and replace it together with both neighbours by Bernoulli(p) draws.
pub fn step<R: Rng + ?Sized>(
    config: &RingConfig,
    p: f64,
    rng: &mut R,
) -> (RingConfig, StepOutcome) {
    let zeros = config.zeros();
    let (i, fallback) = if zeros.is_empty() {
        (rng.random_range(0..config.len()), true)
    } else {
        (zeros[rng.random_range(0..zeros.len())], false)
    };
    let draws = (
        u8::from(rng.random::<f64>() < p),
        u8::from(rng.random::<f64>() < p),
        u8::from(rng.random::<f64>() < p),
    );
    let mut next = config.clone();
    apply_replacement(&mut next, i, draws);
    (
        next,
        StepOutcome {
            chosen_index: i,
            draws,
            all_ones_fallback: fallback,
        },
    )
}

/// The shortest circular arc covering all zeros, plus derived bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZeroSpan {
    pub l: usize,
    pub r: usize,
    /// `D` = number of indices in the arc.
    pub diameter: usize,
    /// `X` = number of zeros in the configuration.
    pub zero_count: usize,
    pub all_zero: bool,
    pub all_one: bool,
}

impl ZeroSpan {
    /// Arc membership test for index `idx` in a ring of length `n`.
    pub fn contains(&self, n: usize, idx: usize) -> bool {
        if self.all_one {
            return false;
        }
        let offset = (idx + n - self.l) % n;
        offset < self.diameter
    }

    /// The indices of the arc, from `l` to `r`.
    pub fn members(&self, n: usize) -> Vec<usize> {
        (0..self.diameter).map(|k| (self.l + k) % n).collect()
    }

    /// The three+three indices at both ends of the zero area.
    pub fn end_set(&self, n: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(6);
        let depth = self.diameter.min(3);
        for k in 0..depth {
            out.push((self.l + k) % n);
        }
        for k in 0..depth {
            let idx = (self.r + n - k) % n;
            if !out.contains(&idx) {
                out.push(idx);
            }
        }
        out
    }

    /// Membership in the end set without allocating.
    pub fn in_end_set(&self, n: usize, idx: usize) -> bool {
        if self.all_one {
            return false;
        }
        let from_l = (idx + n - self.l) % n;
        let from_r = (self.r + n - idx) % n;
        (from_l < 3 || from_r < 3) && from_l < self.diameter
    }
}

/// All minimal-cardinality covering arcs as `(l, r)` pairs, sorted by `l`.
/// Empty for the all-ones configuration; `(0, n-1)` for the all-zeros one.
pub fn minimal_spans(config: &RingConfig) -> Vec<(usize, usize)> {
    let n = config.len();
    let bits = config.bits();
    let ones = bits.iter().filter(|&&b| b == 1).count();
    if ones == n {
        return Vec::new();
    }
    if ones == 0 {
        return vec![(0, n - 1)];
    }
    // Each maximal circular run of ones is the complement of a candidate arc;
    // the minimal arcs correspond to the longest runs.
    let mut runs: Vec<(usize, usize)> = Vec::new(); // (start, len)
    for s in 0..n {
        if bits[s] == 1 && bits[(s + n - 1) % n] == 0 {
            let mut len = 1;
            while bits[(s + len) % n] == 1 {
                len += 1;
            }
            runs.push((s, len));
        }
    }
    let max_len = runs.iter().map(|&(_, len)| len).max().unwrap();
    let mut spans: Vec<(usize, usize)> = runs
        .iter()
        .filter(|&&(_, len)| len == max_len)
        .map(|&(s, len)| (((s + len) % n), (s + n - 1) % n))
        .collect();
    spans.sort_unstable();
    spans
}

/// Computes the span for `config`. Among ties, prefers a span sharing `l` or
/// `r` with `previous`; without a previous span (or when no tie qualifies)
/// picks the smallest `l` in the canonical order `0..n-1`.
pub fn zero_span(config: &RingConfig, previous: Option<&ZeroSpan>) -> ZeroSpan {
    let n = config.len();
    let zero_count = config.zero_count();
    if zero_count == 0 {
        return ZeroSpan {
            l: 0,
            r: 0,
            diameter: 0,
            zero_count: 0,
            all_zero: false,
            all_one: true,
        };
    }
    if zero_count == n {
        return ZeroSpan {
            l: 0,
            r: n - 1,
            diameter: n,
            zero_count,
            all_zero: true,
            all_one: false,
        };
    }
    let spans = minimal_spans(config);
    let chosen = previous
        .filter(|prev| !prev.all_one)
        .and_then(|prev| {
            spans
                .iter()
                .find(|&&(l, r)| l == prev.l || r == prev.r)
                .copied()
        })
        .unwrap_or(spans[0]);
    let (l, r) = chosen;
    ZeroSpan {
        l,
        r,
        diameter: (r + n - l) % n + 1,
        zero_count,
        all_zero: false,
        all_one: false,
    }
}

/// True iff neither endpoint of the span is preserved across the transition.
pub fn detect_flip(previous: &ZeroSpan, current: &ZeroSpan) -> bool {
    previous.l != current.l && previous.r != current.r
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PotentialParams {
    pub beta: f64,
}

impl PotentialParams {
    pub fn new(beta: f64) -> Result<Self, ModelError> {
        if !(beta > 0.0 && beta < 0.5) {
            return Err(ModelError::ParamOutOfRange {
                name: "beta",
                value: beta,
                range: "(0, 1/2)",
            });
        }
        Ok(Self { beta })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefinedParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl RefinedParams {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self, ModelError> {
        for (name, value) in [("alpha", alpha), ("beta", beta), ("gamma", gamma)] {
            if !(value > 0.0 && value < 1.0) {
                return Err(ModelError::ParamOutOfRange {
                    name,
                    value,
                    range: "(0, 1)",
                });
            }
        }
        Ok(Self { alpha, beta, gamma })
    }

    /// The tuned values reported alongside the 0.419533 threshold.
    pub fn reference() -> Self {
        Self {
            alpha: 0.376_428_7,
            beta: 0.078_811,
            gamma: 0.423_494,
        }
    }
}

/// The potential `M = D - beta(1_{x_{l+1}=0} + 1_{x_{r-1}=0})`, with `M = 0`
/// for `D < 6` and `M = n - 2 beta` on the all-zeros circle.
pub fn potential(config: &RingConfig, span: &ZeroSpan, params: &PotentialParams) -> f64 {
    if span.all_one {
        return 0.0;
    }
    if span.all_zero {
        return config.len() as f64 - 2.0 * params.beta;
    }
    if span.diameter < 6 {
        return 0.0;
    }
    let left = u8::from(config.get(span.l as isize + 1) == 0);
    let right = u8::from(config.get(span.r as isize - 1) == 0);
    span.diameter as f64 - params.beta * f64::from(left + right)
}

/// Deduction weight for an end pattern read inward from the span boundary.
/// `first` is the bit adjacent to the endpoint, `second` the next one in.
/// The two ends use the printed pattern assignments, which differ: at the
/// left end `(0,1)` maps to gamma, at the right end `(0,1)` maps to beta.
pub fn refined_end_weight(params: &RefinedParams, first: u8, second: u8, left_end: bool) -> f64 {
    match (first, second) {
        (0, 0) => params.alpha,
        (1, 0) if left_end => params.beta,
        (0, 1) if left_end => params.gamma,
        (0, 1) => params.beta,
        (1, 0) => params.gamma,
        _ => 0.0,
    }
}

/// The refined potential of the tuned supermartingale: `D` minus per-end
/// deductions keyed on the two bits inward of each endpoint. Zero when
/// `D < 8`; `n - 2 alpha` on the all-zeros circle.
pub fn refined_potential(config: &RingConfig, span: &ZeroSpan, params: &RefinedParams) -> f64 {
    if span.all_one {
        return 0.0;
    }
    if span.all_zero {
        return config.len() as f64 - 2.0 * params.alpha;
    }
    if span.diameter < 8 {
        return 0.0;
    }
    let l = span.l as isize;
    let r = span.r as isize;
    let left = refined_end_weight(params, config.get(l + 1), config.get(l + 2), true);
    let right = refined_end_weight(params, config.get(r - 1), config.get(r - 2), false);
    span.diameter as f64 - left - right
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(bits: &[u8]) -> RingConfig {
        RingConfig::new(bits.to_vec()).unwrap()
    }

    #[test]
    fn replacement_examples() {
        // n=3 replaces the whole ring
        let mut c = cfg(&[0, 0, 0]);
        apply_replacement(&mut c, 1, (1, 0, 1));
        assert_eq!(c.bits(), &[1, 0, 1]);
        // direct application of the rule
        let mut c = cfg(&[1, 0, 1, 1, 1]);
        apply_replacement(&mut c, 1, (0, 0, 0));
        assert_eq!(c.bits(), &[0, 0, 0, 1, 1]);
        // wraparound at the seam
        let mut c = cfg(&[0, 1, 1, 1, 0]);
        apply_replacement(&mut c, 0, (1, 1, 0));
        assert_eq!(c.bits(), &[1, 0, 1, 1, 1]);
    }

    #[test]
    fn all_ones_absorbing_at_p_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let c = RingConfig::all_ones(4).unwrap();
        let (next, outcome) = step(&c, 1.0, &mut rng);
        assert_eq!(next, c);
        assert!(outcome.all_ones_fallback);
    }

    #[test]
    fn step_chooses_a_zero_when_one_exists() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let c = cfg(&[1, 0, 1, 0, 1, 1]);
        for _ in 0..50 {
            let (_, outcome) = step(&c, 0.4, &mut rng);
            assert!(c.get(outcome.chosen_index as isize) == 0);
            assert!(!outcome.all_ones_fallback);
        }
    }

    #[test]
    fn zero_choice_is_uniform() {
        // chi-square over the three zeros of a fixed configuration
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = cfg(&[1, 0, 1, 0, 0, 1, 1, 1]);
        let zeros = c.zeros();
        let trials = 30_000usize;
        let mut counts = vec![0usize; zeros.len()];
        for _ in 0..trials {
            let (_, outcome) = step(&c, 0.5, &mut rng);
            let k = zeros.iter().position(|&z| z == outcome.chosen_index).unwrap();
            counts[k] += 1;
        }
        let expected = trials as f64 / zeros.len() as f64;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        // 2 degrees of freedom, 99.9% quantile ~ 13.8
        assert!(chi2 < 13.8, "chi2 = {chi2}, counts = {counts:?}");
    }

    #[test]
    fn span_tie_at_t0_picks_smallest_l() {
        let c = cfg(&[1, 0, 0, 1, 0, 0]);
        assert_eq!(minimal_spans(&c), vec![(1, 5), (4, 2)]);
        let s = zero_span(&c, None);
        assert_eq!((s.l, s.r, s.diameter), (1, 5, 5));
        assert_eq!(s.zero_count, 4);
    }

    #[test]
    fn span_degenerate_configs() {
        let s = zero_span(&cfg(&[1, 1, 1, 1, 1]), None);
        assert!(s.all_one);
        assert_eq!((s.l, s.r, s.diameter, s.zero_count), (0, 0, 0, 0));
        let s = zero_span(&cfg(&[0, 0, 0, 0]), None);
        assert!(s.all_zero);
        assert_eq!((s.l, s.r, s.diameter, s.zero_count), (0, 3, 4, 4));
    }

    #[test]
    fn span_flip_example() {
        // middle zero of (1,0,0,0,0,0,1) replaced by ones
        let prev = zero_span(&cfg(&[1, 0, 0, 0, 0, 0, 1]), None);
        assert_eq!((prev.l, prev.r, prev.diameter), (1, 5, 5));
        let cur = zero_span(&cfg(&[1, 0, 1, 1, 1, 0, 1]), Some(&prev));
        assert_eq!((cur.l, cur.r, cur.diameter), (5, 1, 4));
        assert!(detect_flip(&prev, &cur));
    }

    #[test]
    fn flip_detection() {
        let mk = |l, r, d| ZeroSpan {
            l,
            r,
            diameter: d,
            zero_count: 2,
            all_zero: false,
            all_one: false,
        };
        assert!(!detect_flip(&mk(1, 5, 5), &mk(1, 4, 4)));
        assert!(detect_flip(&mk(1, 5, 5), &mk(5, 1, 4)));
        assert!(!detect_flip(&mk(1, 5, 5), &mk(1, 5, 5)));
    }

    #[test]
    fn tie_rule_prefers_shared_endpoint() {
        // two minimal spans; previous shares r with the second one
        let c = cfg(&[1, 0, 0, 1, 0, 0]);
        let prev = ZeroSpan {
            l: 4,
            r: 2,
            diameter: 5,
            zero_count: 4,
            all_zero: false,
            all_one: false,
        };
        let s = zero_span(&c, Some(&prev));
        assert_eq!((s.l, s.r), (4, 2));
    }

    #[test]
    fn potential_examples() {
        let beta = PotentialParams::new(0.3).unwrap();
        let mut bits = vec![1u8; 12];
        for z in [2, 3, 5, 7, 8] {
            bits[z] = 0;
        }
        let c = cfg(&bits);
        let s = zero_span(&c, None);
        assert_eq!((s.l, s.r, s.diameter), (2, 8, 7));
        assert!((potential(&c, &s, &beta) - 6.4).abs() < 1e-12);

        // D = 5 -> M = 0
        let c = cfg(&[0, 0, 0, 0, 0, 1, 1, 1]);
        let s = zero_span(&c, None);
        assert_eq!(s.diameter, 5);
        assert_eq!(potential(&c, &s, &beta), 0.0);

        // all-zeros convention
        let c = RingConfig::all_zeros(10).unwrap();
        let s = zero_span(&c, None);
        assert!((potential(&c, &s, &beta) - 9.4).abs() < 1e-12);
    }

    #[test]
    fn refined_potential_examples() {
        let params = RefinedParams::reference();
        // both ends (0,0), D = 10
        let mut bits = vec![1u8; 14];
        for z in 2..12 {
            bits[z] = 0;
        }
        let c = cfg(&bits);
        let s = zero_span(&c, None);
        assert_eq!(s.diameter, 10);
        let expect = 10.0 - 2.0 * params.alpha;
        assert!((refined_potential(&c, &s, &params) - expect).abs() < 1e-12);
        assert!((expect - 9.247_142_6).abs() < 1e-7);

        // both ends (1,1): no deduction
        let c = cfg(&[1, 1, 0, 1, 1, 0, 0, 1, 1, 0, 1, 1, 1]);
        let s = zero_span(&c, None);
        assert_eq!((s.l, s.r, s.diameter), (2, 9, 8));
        assert_eq!(refined_potential(&c, &s, &params), 8.0);

        // left (0,1) and right (1,0): gamma at both ends, D = 9
        let mut bits = vec![1u8; 13];
        for z in [2, 3, 8, 10] {
            bits[z] = 0;
        }
        let c = cfg(&bits);
        let s = zero_span(&c, None);
        assert_eq!((s.l, s.r, s.diameter), (2, 10, 9));
        let expect = 9.0 - 2.0 * params.gamma;
        assert!((refined_potential(&c, &s, &params) - expect).abs() < 1e-12);
        assert!((expect - 8.153_012).abs() < 1e-7);
    }

    #[test]
    fn end_set_membership() {
        let s = ZeroSpan {
            l: 10,
            r: 3,
            diameter: 6,
            zero_count: 3,
            all_zero: false,
            all_one: false,
        };
        let n = 12;
        let set = s.end_set(n);
        assert_eq!(set.len(), 6);
        for idx in 0..n {
            assert_eq!(s.in_end_set(n, idx), set.contains(&idx), "idx {idx}");
        }
    }

    proptest! {
        #[test]
        fn span_is_minimal_and_covers(bits in proptest::collection::vec(0u8..=1, 3..=16)) {
            let c = RingConfig::new(bits).unwrap();
            let n = c.len();
            let s = zero_span(&c, None);
            if s.all_one {
                prop_assert_eq!(c.zero_count(), 0);
                return Ok(());
            }
            // covers every zero
            for z in c.zeros() {
                prop_assert!(s.contains(n, z));
            }
            // everything outside carries value 1
            for idx in 0..n {
                if !s.contains(n, idx) {
                    prop_assert_eq!(c.get(idx as isize), 1);
                }
            }
            // brute force: no strictly shorter covering arc
            for l in 0..n {
                for d in 1..s.diameter {
                    let covers = c.zeros().iter().all(|&z| (z + n - l) % n < d);
                    prop_assert!(!covers, "shorter arc l={} d={}", l, d);
                }
            }
            // boundary zeros for proper spans
            if !s.all_zero {
                prop_assert_eq!(c.get(s.l as isize), 0);
                prop_assert_eq!(c.get(s.r as isize), 0);
                prop_assert_eq!(c.get(s.l as isize - 1), 1);
                prop_assert_eq!(c.get(s.r as isize + 1), 1);
            }
        }

        #[test]
        fn potential_nonnegative(bits in proptest::collection::vec(0u8..=1, 3..=16),
                                 beta in 0.01f64..0.49) {
            let c = RingConfig::new(bits).unwrap();
            let s = zero_span(&c, None);
            let params = PotentialParams::new(beta).unwrap();
            prop_assert!(potential(&c, &s, &params) >= 0.0);
            let refined = RefinedParams::new(0.4, 0.1, 0.45).unwrap();
            prop_assert!(refined_potential(&c, &s, &refined) >= 0.0);
        }
    }
}
