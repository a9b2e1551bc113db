//! Steady-state analysis of the deferral buffer.
//!
//! Applying `(s, r)` cyclically, the relative buffer occupancy evolves as
//! `b_j = max(b_{j-1} + s_k - r_k, 0)` with `k` the slot of step `j`. Whatever
//! slot the recurrence starts from, it settles within one cycle into the same
//! repeated pattern. The pattern is read off from the *starting index*, the
//! slot from which the recurrence returns to an empty buffer at the end of the
//! cycle. From it follow the capacity `C = alpha * max_j b_j` and, for
//! uniformly random extraction, the distribution of the number of slots a
//! stored message waits.
//!
//! Indices in the public API are 1-based, as slots are.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::metrics::critical_rate;
use crate::solver::DeferralStrategy;
use crate::ZERO_SNAP;

/// Slack allowed when comparing cumulative sums and occupancies.
const CUMULATIVE_TOL: f64 = 1e-12;

/// Recurrence step with exact zeros for values below [`ZERO_SNAP`].
#[inline]
fn step(prev: f64, a: f64) -> f64 {
    let b = (prev + a).max(0.0);
    if b < ZERO_SNAP {
        0.0
    } else {
        b
    }
}

fn net_flow(strat: &DeferralStrategy) -> Vec<f64> {
    strat.s.iter().zip(&strat.r).map(|(s, r)| s - r).collect()
}

/// Relative occupancy over `steps` slots when `strat` is applied cyclically
/// from slot `start` (1-based) with an empty buffer.
pub fn occupancy_sequence(strat: &DeferralStrategy, start: usize, steps: usize) -> Vec<f64> {
    let a = net_flow(strat);
    let n = a.len();
    assert!((1..=n).contains(&start), "start index {start} outside 1..={n}");
    let mut b = 0.0;
    (0..steps)
        .map(|j| {
            b = step(b, a[(start - 1 + j) % n]);
            b
        })
        .collect()
}

/// Offset `l` after which the recurrence started at slot `j` repeats the
/// steady pattern of the recurrence started at slot `i + 1`, where `i` is an
/// index with `b_{i+1,n} = 0` (`i = n` stands for starting slot 1). Modular
/// form of `i + 1 - j + n * H(j - i - 1)` with `H` the unit step.
pub fn convergence_offset(i: usize, j: usize, n: usize) -> usize {
    (i + n - j) % n + 1
}

/// Smallest slot from which the cyclic recurrence ends the cycle empty.
///
/// The recurrence from slot `m` ends at zero exactly when every partial sum of
/// `s - r` taken from `m` is nonnegative, i.e. when the cumulative sum
/// `w_{m-1}` over slots `1..m-1` is a global minimum of `w`.
pub fn find_starting_index(strat: &DeferralStrategy) -> usize {
    let a = net_flow(strat);
    let n = a.len();
    let mut w = Vec::with_capacity(n);
    let mut acc = 0.0;
    for x in &a {
        acc += x;
        w.push(acc);
    }
    let w_min = w.iter().copied().fold(f64::INFINITY, f64::min);
    (1..=n)
        .filter(|&i| w[i - 1] <= w_min + CUMULATIVE_TOL)
        .map(|i| i % n + 1)
        .min()
        .unwrap_or(1)
}

/// The repeated occupancy pattern together with the strategy rotated to
/// begin at the starting index.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SteadyStatePattern {
    /// 1-based slot at which the pattern starts; the buffer is empty after the
    /// pattern's last step.
    pub start_index: usize,
    /// `b_1..b_n`, relative occupancy at the end of each reordered slot.
    pub b: Vec<f64>,
    pub s_prime: Vec<f64>,
    pub r_prime: Vec<f64>,
    /// Messages per cycle.
    pub alpha: f64,
    pub phi: f64,
    pub phi_crit: f64,
    /// Seconds per slot.
    pub slot_duration: f64,
}

impl SteadyStatePattern {
    pub fn n(&self) -> usize {
        self.b.len()
    }

    /// Cumulative sums of `s' - r'`.
    pub fn prefix_sums(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.s_prime
            .iter()
            .zip(&self.r_prime)
            .map(|(s, r)| {
                acc += s - r;
                acc
            })
            .collect()
    }

    /// Original slot (1-based) of reordered position `k` (1-based).
    pub fn slot_of_position(&self, k: usize) -> usize {
        (self.start_index - 1 + k - 1) % self.n() + 1
    }
}

/// Builds the steady pattern for `strat` and verifies that the recurrence
/// from every slot joins it after the offset given by
/// [`convergence_offset`], bit for bit.
pub fn steady_state(strat: &DeferralStrategy, alpha: f64) -> Result<SteadyStatePattern> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::InvalidParameter(format!("alpha must be positive, got {alpha}")));
    }
    let n = strat.n();
    let start = find_starting_index(strat);
    let b = occupancy_sequence(strat, start, n);
    if b[n - 1] != 0.0 {
        return Err(Error::Inconsistent(format!(
            "recurrence from starting index {start} ends at {} instead of 0",
            b[n - 1]
        )));
    }
    let i = if start == 1 { n } else { start - 1 };
    for j in 1..=n {
        let l = convergence_offset(i, j, n);
        let seq = occupancy_sequence(strat, j, l + n);
        if seq[l..] != b[..] {
            return Err(Error::Inconsistent(format!(
                "recurrence from slot {j} does not repeat the steady pattern after {l} steps"
            )));
        }
    }
    let rotate = |v: &[f64]| -> Vec<f64> { (0..n).map(|k| v[(start - 1 + k) % n]).collect() };
    Ok(SteadyStatePattern {
        start_index: start,
        b,
        s_prime: rotate(&strat.s),
        r_prime: rotate(&strat.r),
        alpha,
        phi: strat.phi,
        phi_crit: critical_rate(&strat.q_ref),
        slot_duration: strat.q_ref.scheme().slot_duration() as f64,
    })
}

/// Buffer capacity in messages, `alpha * max_j b_j`.
pub fn capacity(pattern: &SteadyStatePattern) -> f64 {
    pattern.alpha * pattern.b.iter().copied().fold(0.0, f64::max)
}

/// Distribution of the delay of a message under uniformly random extraction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DelayDistribution {
    /// `pmf[d - 1] = P{delay = d, delayed}` for `d = 1..=n`; sums to `phi`.
    pub pmf: Vec<f64>,
    /// Mean delay over all messages (undelayed ones count as 0), in slots.
    pub expected_unconditional: f64,
    /// Mean delay of delayed messages, in slots; 0 when `phi = 0`.
    pub expected_conditional: f64,
    pub phi: f64,
    /// Seconds per slot.
    pub slot_duration: f64,
}

impl DelayDistribution {
    /// Conditional PMF `P{delay = d | delayed}`; all zeros when `phi = 0`.
    pub fn conditional_pmf(&self) -> Vec<f64> {
        let mass: f64 = self.pmf.iter().sum();
        if self.phi > 0.0 && mass > 0.0 {
            self.pmf.iter().map(|p| p / mass).collect()
        } else {
            vec![0.0; self.pmf.len()]
        }
    }

    pub fn expected_unconditional_hours(&self) -> f64 {
        self.expected_unconditional * self.slot_duration / 3600.0
    }

    pub fn expected_conditional_hours(&self) -> f64 {
        self.expected_conditional * self.slot_duration / 3600.0
    }
}

/// Delay distribution for uniformly random extraction.
///
/// A message stored at reordered slot `k` survives each later forwarding slot
/// `l` with probability `1 - r'_l / b_{l-1}` and leaves at slot `j` with
/// probability `r'_j / b_{j-1}`; arrivals are distributed as `s'_k`. Only
/// content present at the end of the previous slot can be forwarded.
pub fn delay_distribution(pattern: &SteadyStatePattern) -> Result<DelayDistribution> {
    if pattern.phi > pattern.phi_crit + CUMULATIVE_TOL {
        return Err(Error::AboveCriticalRate {
            phi: pattern.phi,
            phi_crit: pattern.phi_crit,
        });
    }
    let n = pattern.n();
    let (s, r, b) = (&pattern.s_prime, &pattern.r_prime, &pattern.b);
    // extraction probability at each reordered position
    let mut hazard = vec![0.0; n];
    for j in 0..n {
        if r[j] <= 0.0 {
            continue;
        }
        let before = b[(j + n - 1) % n];
        if before <= 0.0 || r[j] > before * (1.0 + 1e-9) + CUMULATIVE_TOL {
            return Err(Error::NonCausal {
                slot: j + 1,
                forward: r[j],
                occupancy: before,
            });
        }
        hazard[j] = if b[j] == 0.0 { 1.0 } else { (r[j] / before).min(1.0) };
    }

    let mut pmf = vec![0.0; n];
    for k in 0..n {
        if s[k] <= 0.0 {
            continue;
        }
        let mut survive = s[k];
        for delay in 1..=n {
            let j = (k + delay) % n;
            let h = hazard[j];
            if h > 0.0 {
                pmf[delay - 1] += survive * h;
                survive *= 1.0 - h;
                if survive == 0.0 {
                    break;
                }
            }
        }
        if survive > CUMULATIVE_TOL {
            return Err(Error::Inconsistent(format!(
                "mass {survive} stored at reordered slot {} never leaves the buffer",
                k + 1
            )));
        }
    }
    let expected_unconditional: f64 = pmf.iter().enumerate().map(|(i, p)| (i + 1) as f64 * p).sum();
    let phi = pattern.phi;
    let delayed_mass: f64 = pmf.iter().sum();
    Ok(DelayDistribution {
        // normalized by the delayed mass itself so a single-delay PMF gives
        // that delay exactly
        expected_conditional: if phi > 0.0 && delayed_mass > 0.0 {
            pmf.iter().enumerate().map(|(i, p)| (i + 1) as f64 * (p / delayed_mass)).sum()
        } else {
            0.0
        },
        expected_unconditional,
        pmf,
        phi,
        slot_duration: pattern.slot_duration,
    })
}
