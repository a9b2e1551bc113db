//! Seeded Monte Carlo simulation of the storage and forwarding selectors.
//!
//! Each cycle draws `alpha` messages multinomially over the slots. A message
//! arriving in slot `i` is stored with probability `s_i / q_i` and posted
//! immediately otherwise. At the start of each slot the forwarding selector
//! releases messages that were already buffered; messages stored during the
//! slot join the buffer afterwards, so every delay is at least one slot.
//!
//! Two outflow policies are available:
//!
//! * [`OutflowPolicy::Hazard`] (default) releases each buffered message with
//!   probability `r_i / b_{i-1}`, where `b` is the simulator's own fluid
//!   occupancy. In expectation this forwards `alpha * r_i` messages and the
//!   buffer is flushed completely once per cycle, so it cannot accumulate a
//!   backlog from arrival noise.
//! * [`OutflowPolicy::Quota`] forwards `floor(alpha * r_i + carry)` messages,
//!   carrying the fractional remainder and any shortfall (fewer messages
//!   buffered than due) to later slots. Shortfalls are counted in
//!   [`SimReport::deficit_events`].
//!
//! Statistics cover messages that arrive after the warm-up cycles; one extra
//! drain cycle is simulated so those messages can leave.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::buffer::{capacity, delay_distribution, steady_state};
use crate::error::{Error, Result};
use crate::solver::DeferralStrategy;
use crate::stats::{chi_square_gof, nearest_rank, ChiSquare};
use crate::ZERO_SNAP;

pub const RNG_ALGORITHM: &str = "ChaCha8";

/// Order in which buffered messages are released.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Discipline {
    UniformRandom,
    Fifo,
    Lifo,
}

/// How many messages the forwarding selector releases per slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutflowPolicy {
    Hazard,
    Quota,
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    /// Strategy to apply; its reference profile drives the arrivals.
    pub strategy: DeferralStrategy,
    /// Messages per cycle.
    pub alpha: u64,
    /// Cycles simulated, warm-up included.
    pub cycles: u64,
    pub warmup_cycles: u64,
    pub discipline: Discipline,
    pub outflow: OutflowPolicy,
    pub seed: u64,
}

impl SimConfig {
    /// Uniform-random extraction, hazard outflow, two warm-up cycles.
    pub fn new(strategy: DeferralStrategy, alpha: u64, cycles: u64, seed: u64) -> Self {
        Self {
            strategy,
            alpha,
            cycles,
            warmup_cycles: 2,
            discipline: Discipline::UniformRandom,
            outflow: OutflowPolicy::Hazard,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha < 1 {
            return Err(Error::InvalidParameter("alpha must be at least 1".into()));
        }
        if self.warmup_cycles >= self.cycles {
            return Err(Error::InvalidParameter(format!(
                "warm-up ({}) must be shorter than the run ({} cycles)",
                self.warmup_cycles, self.cycles
            )));
        }
        self.strategy.check_feasible(&self.strategy.q_ref)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    /// `delay_histogram[d - 1]` counts tracked messages delayed `d` slots.
    pub delay_histogram: Vec<u64>,
    /// Tracked messages delayed more than `n` slots.
    pub overflow_delays: u64,
    pub delayed_count: u64,
    pub total_count: u64,
    pub delayed_fraction: f64,
    pub mean_conditional_delay: f64,
    pub conditional_delay_std_error: f64,
    pub max_delay: u64,
    /// Largest end-of-slot occupancy after warm-up.
    pub peak_occupancy: u64,
    /// Median over post-warm-up cycles of the per-cycle peak occupancy.
    pub median_cycle_peak: u64,
    /// Mean end-of-slot occupancy per slot after warm-up.
    pub mean_occupancy: Vec<f64>,
    /// Messages posted per slot after warm-up (direct posts plus forwards).
    pub per_slot_posted: Vec<u64>,
    pub deficit_events: u64,
    /// Tracked messages still buffered when the run ended.
    pub censored_count: u64,
    pub generated_total: u64,
    pub posted_total: u64,
    pub residue: u64,
    pub seed_echo: u64,
    pub stream: u64,
    pub rng_algorithm: String,
    pub discipline: Discipline,
    pub outflow: OutflowPolicy,
}

/// Exact integer moments of the observed delays.
#[derive(Default)]
struct DelayMoments {
    count: u128,
    sum: u128,
    sum_sq: u128,
}

impl DelayMoments {
    fn push(&mut self, d: u64) {
        self.count += 1;
        self.sum += d as u128;
        self.sum_sq += (d as u128) * (d as u128);
    }

    fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum as f64 / self.count as f64
        }
    }

    fn std_error(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        let n = self.count;
        // n * sum_sq - sum^2 is exact and nonnegative
        let numer = (n * self.sum_sq - self.sum * self.sum) as f64;
        (numer / (n * (n - 1)) as f64 / n as f64).sqrt()
    }
}

/// Release probabilities per slot from the fluid occupancy, iterated from an
/// empty buffer until the end-of-cycle level repeats.
fn forwarding_hazards(s: &[f64], r: &[f64]) -> Vec<f64> {
    let n = s.len();
    let mut level = 0.0;
    let mut hazard = vec![0.0; n];
    for _ in 0..(4 * n + 4) {
        let start_level = level;
        for i in 0..n {
            let before = level;
            let mut after = (before - r[i]).max(0.0);
            if after < ZERO_SNAP {
                after = 0.0;
            }
            hazard[i] = if r[i] <= 0.0 {
                0.0
            } else if after == 0.0 || before <= 0.0 {
                1.0
            } else {
                (r[i] / before).min(1.0)
            };
            level = after + s[i];
        }
        if level == start_level {
            break;
        }
    }
    hazard
}

pub(crate) fn multinomial(rng: &mut ChaCha8Rng, total: u64, probs: &[f64], out: &mut [u64]) {
    let last = probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1);
    let mut remaining = total;
    let mut mass_left = 1.0;
    for (i, (&p, o)) in probs.iter().zip(out.iter_mut()).enumerate() {
        if i == last {
            *o = remaining;
            remaining = 0;
            continue;
        }
        if remaining == 0 || p <= 0.0 {
            *o = 0;
            mass_left -= p;
            continue;
        }
        let c = binomial(rng, remaining, (p / mass_left).clamp(0.0, 1.0));
        *o = c;
        remaining -= c;
        mass_left -= p;
    }
}

fn binomial(rng: &mut ChaCha8Rng, n: u64, p: f64) -> u64 {
    if n == 0 || p <= 0.0 {
        0
    } else if p >= 1.0 {
        n
    } else {
        Binomial::new(n, p).expect("probability in (0, 1)").sample(rng)
    }
}

/// Runs one replication on RNG stream 0.
pub fn run_simulation(cfg: &SimConfig) -> Result<SimReport> {
    run_simulation_stream(cfg, 0)
}

/// Runs one replication on the given RNG stream of `cfg.seed`.
pub fn run_simulation_stream(cfg: &SimConfig, stream: u64) -> Result<SimReport> {
    cfg.validate()?;
    let strat = &cfg.strategy;
    let q = strat.q_ref.q();
    let n = q.len();
    let store_prob: Vec<f64> = q
        .iter()
        .zip(&strat.s)
        .map(|(&qi, &si)| if qi > 0.0 { (si / qi).min(1.0) } else { 0.0 })
        .collect();
    let hazard = forwarding_hazards(&strat.s, &strat.r);
    let quota: Vec<f64> = strat.r.iter().map(|&ri| cfg.alpha as f64 * ri).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);

    let window = cfg.warmup_cycles..cfg.cycles;
    let n64 = n as u64;
    let mut buffer: VecDeque<u64> = VecDeque::new();
    let mut counts = vec![0u64; n];
    let mut owed = 0.0f64;

    let mut delay_histogram = vec![0u64; n];
    let mut overflow_delays = 0;
    let mut delays = DelayMoments::default();
    let mut max_delay = 0;
    let (mut delayed_count, mut total_count) = (0u64, 0u64);
    let mut per_slot_posted = vec![0u64; n];
    let mut occupancy_sum = vec![0u64; n];
    let mut cycle_peaks = Vec::with_capacity((cfg.cycles - cfg.warmup_cycles) as usize);
    let mut peak_occupancy = 0u64;
    let mut deficit_events = 0;
    let (mut generated_total, mut posted_total) = (0u64, 0u64);

    // the last cycle only drains tracked messages
    for cycle in 0..=cfg.cycles {
        let tracked = window.contains(&cycle);
        multinomial(&mut rng, cfg.alpha, q, &mut counts);
        let mut cycle_peak = 0u64;
        for i in 0..n {
            let now = cycle * n64 + i as u64;
            let held = buffer.len() as u64;
            let release = match cfg.outflow {
                OutflowPolicy::Hazard => binomial(&mut rng, held, hazard[i]),
                OutflowPolicy::Quota => {
                    owed += quota[i];
                    let due = owed.floor() as u64;
                    if due > held {
                        deficit_events += 1;
                    }
                    let k = due.min(held);
                    owed -= k as f64;
                    k
                }
            };
            for _ in 0..release {
                let arrival = match cfg.discipline {
                    Discipline::Fifo => buffer.pop_front(),
                    Discipline::Lifo => buffer.pop_back(),
                    Discipline::UniformRandom => {
                        let idx = rng.random_range(0..buffer.len());
                        buffer.swap_remove_back(idx)
                    }
                }
                .expect("release never exceeds buffer content");
                if window.contains(&(arrival / n64)) {
                    let delay = now - arrival;
                    delays.push(delay);
                    max_delay = max_delay.max(delay);
                    if delay as usize <= n {
                        delay_histogram[delay as usize - 1] += 1;
                    } else {
                        overflow_delays += 1;
                    }
                }
            }

            let arrivals = counts[i];
            let stored = binomial(&mut rng, arrivals, store_prob[i]);
            buffer.extend(std::iter::repeat_n(now, stored as usize));
            let posted = release + arrivals - stored;
            generated_total += arrivals;
            posted_total += posted;

            if tracked {
                total_count += arrivals;
                delayed_count += stored;
                per_slot_posted[i] += posted;
                let occ = buffer.len() as u64;
                occupancy_sum[i] += occ;
                cycle_peak = cycle_peak.max(occ);
            }
        }
        if tracked {
            peak_occupancy = peak_occupancy.max(cycle_peak);
            cycle_peaks.push(cycle_peak as f64);
        }
    }

    let censored_count = buffer.iter().filter(|&&a| window.contains(&(a / n64))).count() as u64;
    cycle_peaks.sort_by(f64::total_cmp);
    let window_cycles = (cfg.cycles - cfg.warmup_cycles) as f64;
    Ok(SimReport {
        delay_histogram,
        overflow_delays,
        delayed_count,
        total_count,
        delayed_fraction: if total_count > 0 {
            delayed_count as f64 / total_count as f64
        } else {
            0.0
        },
        mean_conditional_delay: delays.mean(),
        conditional_delay_std_error: delays.std_error(),
        max_delay,
        peak_occupancy,
        median_cycle_peak: nearest_rank(&cycle_peaks, 50.0).unwrap_or(0.0) as u64,
        mean_occupancy: occupancy_sum.iter().map(|&o| o as f64 / window_cycles).collect(),
        per_slot_posted,
        deficit_events,
        censored_count,
        generated_total,
        posted_total,
        residue: buffer.len() as u64,
        seed_echo: cfg.seed,
        stream,
        rng_algorithm: RNG_ALGORITHM.to_string(),
        discipline: cfg.discipline,
        outflow: cfg.outflow,
    })
}

/// Independent replications on streams `0..replications`, in stream order.
pub fn run_replications(cfg: &SimConfig, replications: u64) -> Result<Vec<SimReport>> {
    (0..replications)
        .into_par_iter()
        .map(|stream| run_simulation_stream(cfg, stream))
        .collect()
}

/// Analytic buffer figures next to their simulated estimates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub phi: f64,
    pub analytic_expected_delay: f64,
    pub analytic_conditional_delay: f64,
    pub analytic_capacity: f64,
    pub analytic_delay_pmf: Vec<f64>,
    pub empirical_conditional_delay: f64,
    pub conditional_delay_std_error: f64,
    pub empirical_expected_delay: f64,
    pub empirical_delayed_fraction: f64,
    pub delayed_fraction_std_error: f64,
    /// Goodness of fit of the simulated delays to the analytic PMF.
    pub delay_chi_square: Option<ChiSquare>,
    pub median_cycle_peak: u64,
    pub peak_occupancy: u64,
    /// Half-width `3 sqrt(C)` of the accepted band around the capacity.
    pub capacity_band: f64,
    /// Names of the checks that disagree beyond tolerance.
    pub flags: Vec<String>,
    pub report: SimReport,
}

/// Simulates `cfg` and compares it with the analytic delay distribution and
/// capacity. Disagreements beyond 3 standard errors (or a chi-square
/// rejection at the 1% level) are listed in `flags`.
pub fn empirical_vs_analytic(cfg: &SimConfig) -> Result<Comparison> {
    if cfg.discipline != Discipline::UniformRandom {
        return Err(Error::InvalidParameter(
            "analytic comparison requires uniform random extraction".into(),
        ));
    }
    let pattern = steady_state(&cfg.strategy, cfg.alpha as f64)?;
    let dist = delay_distribution(&pattern)?;
    let cap = capacity(&pattern);
    let report = run_simulation(cfg)?;
    let phi = dist.phi;
    let mut flags = Vec::new();

    let (emp, se) = (report.mean_conditional_delay, report.conditional_delay_std_error);
    if phi == 0.0 {
        if report.delayed_count > 0 {
            flags.push("conditional_delay".to_string());
        }
    } else if report.delayed_count == 0
        || (se == 0.0 && (emp - dist.expected_conditional).abs() > 1e-9)
        || (se > 0.0 && (emp - dist.expected_conditional).abs() > 3.0 * se)
    {
        flags.push("conditional_delay".to_string());
    }

    let total = report.total_count as f64;
    let frac_se = (phi * (1.0 - phi) / total).sqrt();
    if (report.delayed_fraction - phi).abs() > 3.0 * frac_se + 1e-12 {
        flags.push("delayed_fraction".to_string());
    }

    let delay_chi_square = if report.delayed_count > 0 && phi > 0.0 {
        let c = chi_square_gof(&report.delay_histogram, &dist.pmf)?;
        if c.rejected_at(0.01) || report.overflow_delays > 0 {
            flags.push("delay_pmf".to_string());
        }
        Some(c)
    } else {
        None
    };

    let band = 3.0 * cap.sqrt();
    if (report.median_cycle_peak as f64 - cap).abs() > band {
        flags.push("capacity".to_string());
    }

    // mean over all tracked messages, undelayed ones contributing 0
    let delayed_sum = report.mean_conditional_delay * report.delayed_count as f64;
    let empirical_expected_delay = if total > 0.0 { delayed_sum / total } else { 0.0 };

    Ok(Comparison {
        phi,
        analytic_expected_delay: dist.expected_unconditional,
        analytic_conditional_delay: dist.expected_conditional,
        analytic_capacity: cap,
        analytic_delay_pmf: dist.pmf,
        empirical_conditional_delay: emp,
        conditional_delay_std_error: se,
        empirical_expected_delay,
        empirical_delayed_fraction: report.delayed_fraction,
        delayed_fraction_std_error: frac_se,
        delay_chi_square,
        median_cycle_peak: report.median_cycle_peak,
        peak_occupancy: report.peak_occupancy,
        capacity_band: band,
        flags,
        report,
    })
}
