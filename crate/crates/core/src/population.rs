//! Synthetic populations and population-wide studies.
//!
//! A study runs every user through the solver on a common grid of rates
//! (each user clamped at their own critical rate) and summarizes:
//!
//! * the distribution of critical rates,
//! * nearest-rank percentiles of the relative privacy gain per rate,
//! * each user's analytic delay and relative buffer capacity at the critical
//!   rate,
//! * the aggregate profile `p` before and `p'` after deferral.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::buffer::{delay_distribution, steady_state};
use crate::error::{Error, Result};
use crate::ingest::UserProfile;
use crate::metrics::{critical_rate, entropy};
use crate::profile::{ActivityProfile, SlotScheme};
use crate::solver::{relative_gain, solve_optimal};
use crate::stats::{nearest_rank, Histogram};

/// Mean number of messages per user in the reference population.
pub const DEFAULT_MEAN_MESSAGES: f64 = 1879.42;

/// Default observation window of synthetic users, in cycles.
pub const DEFAULT_PERIODS: f64 = 30.0;

pub const PHI_CRIT_BINS: usize = 50;
pub const CAPACITY_BINS: usize = 50;

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub n_users: usize,
    pub scheme: SlotScheme,
    /// Dirichlet concentration per slot; large values give near-uniform
    /// profiles, small values spiky ones.
    pub concentration: f64,
    pub mean_messages: f64,
    /// Cycles each synthetic user is observed for; sets messages per cycle.
    pub periods: f64,
    /// Optional mean profile; the Dirichlet parameters become
    /// `concentration * n * base`.
    pub base: Option<Vec<f64>>,
    pub seed: u64,
}

impl SynthConfig {
    pub fn new(n_users: usize, scheme: SlotScheme, seed: u64) -> Self {
        Self {
            n_users,
            scheme,
            concentration: 1.0,
            mean_messages: DEFAULT_MEAN_MESSAGES,
            periods: DEFAULT_PERIODS,
            base: None,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParameter(what.to_string()));
        if self.n_users == 0 {
            return bad("population needs at least one user");
        }
        if !(self.concentration.is_finite() && self.concentration > 0.0) {
            return bad("concentration must be positive and finite");
        }
        if !(self.mean_messages.is_finite() && self.mean_messages > 0.0) {
            return bad("mean message count must be positive");
        }
        if !(self.periods.is_finite() && self.periods >= 1.0) {
            return bad("observation window must be at least one period");
        }
        if let Some(base) = &self.base {
            if base.len() != self.scheme.n() {
                return Err(Error::LengthMismatch(base.len(), self.scheme.n()));
            }
            crate::metrics::check_pmf(base)?;
            if base.iter().any(|&b| b <= 0.0) {
                return bad("base profile must be strictly positive");
            }
        }
        Ok(())
    }
}

fn synth_user(cfg: &SynthConfig, shapes: &[Gamma<f64>], idx: usize) -> Result<UserProfile> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(idx as u64);
    let n = cfg.scheme.n();
    let poisson = Poisson::new(cfg.mean_messages)
        .map_err(|e| Error::InvalidParameter(format!("message count distribution: {e}")))?;

    // Dirichlet through normalized gamma draws; an all-zero draw (possible
    // in floating point for tiny concentrations) is redrawn
    let q = loop {
        let g: Vec<f64> = shapes.iter().map(|d| d.sample(&mut rng)).collect();
        let total: f64 = g.iter().sum();
        if total > 0.0 && total.is_finite() {
            break g.into_iter().map(|x| x / total).collect::<Vec<_>>();
        }
    };
    let count = loop {
        let c = poisson.sample(&mut rng) as u64;
        if c > 0 {
            break c;
        }
    };
    let mut counts = vec![0u64; n];
    crate::sim::multinomial(&mut rng, count, &q, &mut counts);
    Ok(UserProfile {
        user_id: format!("synth-{idx:05}"),
        profile: ActivityProfile::from_counts(cfg.scheme, &counts)?,
        periods_observed: cfg.periods,
    })
}

/// Draws a population; user `i` uses stream `i` of the seed, so the result
/// does not depend on thread scheduling or on `n_users`.
pub fn synth_population(cfg: &SynthConfig) -> Result<Vec<UserProfile>> {
    cfg.validate()?;
    let n = cfg.scheme.n();
    let shapes = (0..n)
        .map(|i| {
            let a = match &cfg.base {
                Some(base) => cfg.concentration * n as f64 * base[i],
                None => cfg.concentration,
            };
            Gamma::new(a, 1.0).map_err(|e| Error::InvalidParameter(format!("gamma shape {a}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    (0..cfg.n_users)
        .into_par_iter()
        .map(|i| synth_user(cfg, &shapes, i))
        .collect()
}

/// SHA-256 over user ids, message counts and profile bits, in order.
pub fn fingerprint(users: &[UserProfile]) -> String {
    let mut h = Sha256::new();
    for u in users {
        h.update(u.user_id.as_bytes());
        h.update([0]);
        h.update(u.profile.count().to_le_bytes());
        for x in u.profile.q() {
            h.update(x.to_bits().to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// Per-user study results.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UserResult {
    pub user_id: String,
    pub count: u64,
    pub messages_per_period: f64,
    pub phi_crit: f64,
    pub entropy_bits: f64,
    /// Maximum apparent entropy at each grid rate (clamped at `phi_crit`).
    pub entropies: Vec<f64>,
    /// Relative privacy gain in percent; `None` for a zero-entropy profile.
    pub gains: Option<Vec<f64>>,
    /// Mean delay of deferred messages at `phi_crit`, in hours.
    pub conditional_delay_hours: f64,
    /// Mean delay over all messages at `phi_crit`, in hours.
    pub expected_delay_hours: f64,
    /// Buffer capacity at `phi_crit` as a percentage of the messages per cycle.
    pub relative_capacity_pct: f64,
    #[serde(skip)]
    apparent: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GainPercentiles {
    pub phi: f64,
    pub p10: f64,
    pub p50: f64,
    pub p90: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PopulationStudy {
    pub scheme_slots: usize,
    pub slot_hours: f64,
    pub phi_grid: Vec<f64>,
    pub users: Vec<UserResult>,
    pub phi_crit_histogram: Histogram,
    /// Empty when every user has a zero-entropy profile.
    pub gain_percentiles: Vec<GainPercentiles>,
    /// Conditional delay at the critical rate, one bin per slot, in slots.
    pub delay_histogram: Histogram,
    /// Relative capacity at the critical rate, in percent.
    pub capacity_histogram: Histogram,
    /// Population profile `p`, weighted by message count.
    pub aggregate_before: Vec<f64>,
    /// `p'` at each grid rate.
    pub aggregate_after: Vec<Vec<f64>>,
    /// Users left out of the gain percentiles (zero entropy).
    pub excluded_from_gains: Vec<String>,
}

impl PopulationStudy {
    pub fn max_phi_crit(&self) -> f64 {
        self.users.iter().map(|u| u.phi_crit).fold(0.0, f64::max)
    }
}

fn analyze_user(user: &UserProfile, phi_grid: &[f64]) -> Result<UserResult> {
    let q = &user.profile;
    let phi_crit = critical_rate(q);
    let h0 = entropy(q.q())?;
    let mut entropies = Vec::with_capacity(phi_grid.len());
    let mut apparent = Vec::with_capacity(phi_grid.len());
    for &phi in phi_grid {
        let strat = solve_optimal(q, phi)?;
        entropies.push(strat.entropy_bits());
        apparent.push(strat.apparent());
    }
    let gains = if h0 > 0.0 {
        Some(entropies.iter().map(|&h| relative_gain(h, h0)).collect::<Result<Vec<_>>>()?)
    } else {
        None
    };

    let alpha = user.messages_per_period();
    let pattern = steady_state(&solve_optimal(q, phi_crit)?, alpha)?;
    let dist = delay_distribution(&pattern)?;
    let max_b = pattern.b.iter().copied().fold(0.0, f64::max);
    Ok(UserResult {
        user_id: user.user_id.clone(),
        count: q.count(),
        messages_per_period: alpha,
        phi_crit,
        entropy_bits: h0,
        entropies,
        gains,
        conditional_delay_hours: dist.expected_conditional_hours(),
        expected_delay_hours: dist.expected_unconditional_hours(),
        relative_capacity_pct: 100.0 * max_b,
        apparent,
    })
}

fn weighted_mean(rows: impl Iterator<Item = (f64, Vec<f64>)>, n: usize) -> Vec<f64> {
    let mut acc = vec![0.0; n];
    let mut weight = 0.0;
    for (w, row) in rows {
        weight += w;
        for (a, x) in acc.iter_mut().zip(row) {
            *a += w * x;
        }
    }
    acc.iter().map(|a| a / weight).collect()
}

/// Runs the per-user analyses in parallel and aggregates them. All users
/// must share one slot scheme.
pub fn study(users: &[UserProfile], phi_grid: &[f64]) -> Result<PopulationStudy> {
    let first = users.first().ok_or(Error::NoValidUsers)?;
    let scheme = *first.profile.scheme();
    if let Some(u) = users.iter().find(|u| *u.profile.scheme() != scheme) {
        return Err(Error::InvalidScheme(format!(
            "user {} uses {} slots over {} s, expected {} over {} s",
            u.user_id,
            u.profile.n(),
            u.profile.scheme().period_seconds(),
            scheme.n(),
            scheme.period_seconds()
        )));
    }
    let n = scheme.n();
    let results: Vec<UserResult> = users.par_iter().map(|u| analyze_user(u, phi_grid)).collect::<Result<_>>()?;

    let mut phi_crit_histogram = Histogram::new(0.0, 1.0, PHI_CRIT_BINS);
    let mut delay_histogram = Histogram::new(0.0, n as f64, n);
    let mut capacity_histogram = Histogram::new(0.0, 100.0, CAPACITY_BINS);
    let slot_hours = scheme.slot_duration() as f64 / 3600.0;
    for r in &results {
        phi_crit_histogram.add(r.phi_crit);
        delay_histogram.add(r.conditional_delay_hours / slot_hours);
        capacity_histogram.add(r.relative_capacity_pct);
    }

    let excluded_from_gains: Vec<String> =
        results.iter().filter(|r| r.gains.is_none()).map(|r| r.user_id.clone()).collect();
    for id in &excluded_from_gains {
        log::warn!("user {id} has a zero-entropy profile; left out of the gain percentiles");
    }
    let mut gain_percentiles = Vec::new();
    if excluded_from_gains.len() < results.len() {
        for (k, &phi) in phi_grid.iter().enumerate() {
            let mut g: Vec<f64> = results.iter().filter_map(|r| r.gains.as_ref().map(|g| g[k])).collect();
            g.sort_by(f64::total_cmp);
            let pct = |p| nearest_rank(&g, p).expect("nonempty");
            gain_percentiles.push(GainPercentiles {
                phi,
                p10: pct(10.0),
                p50: pct(50.0),
                p90: pct(90.0),
            });
        }
    }

    let weights: Vec<f64> = results.iter().map(|r| r.count.max(1) as f64).collect();
    let aggregate_before = weighted_mean(users.iter().zip(&weights).map(|(u, &w)| (w, u.profile.q().to_vec())), n);
    let aggregate_after = (0..phi_grid.len())
        .map(|k| weighted_mean(results.iter().zip(&weights).map(|(r, &w)| (w, r.apparent[k].clone())), n))
        .collect();

    Ok(PopulationStudy {
        scheme_slots: n,
        slot_hours,
        phi_grid: phi_grid.to_vec(),
        users: results,
        phi_crit_histogram,
        gain_percentiles,
        delay_histogram,
        capacity_histogram,
        aggregate_before,
        aggregate_after,
        excluded_from_gains,
    })
}

/// Variance of a vector's components around their mean.
pub fn slot_variance(p: &[f64]) -> f64 {
    let mean = p.iter().sum::<f64>() / p.len() as f64;
    p.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / p.len() as f64
}

fn histogram_csv(h: &Histogram, scale: f64, lo_name: &str, hi_name: &str) -> String {
    let mut out = format!("{lo_name},{hi_name},count,pmf\n");
    for ((i, c), p) in h.counts.iter().enumerate().zip(h.pmf()) {
        let (lo, hi) = h.edges(i);
        out.push_str(&format!("{},{},{c},{p}\n", lo * scale, hi * scale));
    }
    out
}

impl PopulationStudy {
    /// CSV tables keyed by file name, in a fixed order.
    pub fn tables(&self) -> Vec<(&'static str, String)> {
        let mut tables = vec![
            ("phicrit_hist.csv", histogram_csv(&self.phi_crit_histogram, 1.0, "phi_lo", "phi_hi")),
            ("delay_pmf.csv", histogram_csv(&self.delay_histogram, self.slot_hours, "delay_hours_lo", "delay_hours_hi")),
            ("capacity_pmf.csv", histogram_csv(&self.capacity_histogram, 1.0, "capacity_pct_lo", "capacity_pct_hi")),
        ];

        let mut gains = String::from("phi,p10,p50,p90\n");
        for g in &self.gain_percentiles {
            gains.push_str(&format!("{},{},{},{}\n", g.phi, g.p10, g.p50, g.p90));
        }
        tables.push(("gain_percentiles.csv", gains));

        let mut agg = String::from("slot,p");
        for phi in &self.phi_grid {
            agg.push_str(&format!(",p_prime_{phi}"));
        }
        agg.push('\n');
        for i in 0..self.scheme_slots {
            agg.push_str(&format!("{},{}", i + 1, self.aggregate_before[i]));
            for after in &self.aggregate_after {
                agg.push_str(&format!(",{}", after[i]));
            }
            agg.push('\n');
        }
        tables.push(("aggregate_profiles.csv", agg));

        let mut per_user = String::from(
            "user_id,count,messages_per_period,phi_crit,entropy_bits,conditional_delay_hours,expected_delay_hours,relative_capacity_pct\n",
        );
        for r in &self.users {
            per_user.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.user_id,
                r.count,
                r.messages_per_period,
                r.phi_crit,
                r.entropy_bits,
                r.conditional_delay_hours,
                r.expected_delay_hours,
                r.relative_capacity_pct
            ));
        }
        tables.push(("per_user.csv", per_user));
        tables
    }

    /// Writes all tables into `dir` (created if needed). Each file is written
    /// to a temporary name and renamed, so readers never see partial output.
    pub fn write(&self, dir: &Path) -> Result<Vec<String>> {
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        for (name, body) in self.tables() {
            let tmp = dir.join(format!(".{name}.tmp"));
            let mut f = fs::File::create(&tmp)?;
            f.write_all(body.as_bytes())?;
            f.sync_all()?;
            fs::rename(&tmp, dir.join(name))?;
            written.push(name.to_string());
        }
        Ok(written)
    }
}
