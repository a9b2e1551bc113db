//! Optimal storing/forwarding strategies and the privacy-deferral curve.
//!
//! For a deferral rate `phi`, the apparent profile `t = q - s + r` of maximum
//! entropy is found by water-filling from both ends: the largest components of
//! `q` are lowered to a common level `theta_hi` (the removed mass is `s`) and
//! the smallest are raised to a level `theta_lo` (the added mass is `r`), each
//! side moving exactly `phi`. Components between the two levels are left
//! untouched. At the critical rate both levels meet at `1/n` and `t` is
//! uniform.
//!
//! The maximum entropy `P(phi)` equals `log2 n - R(phi, phi)` for the
//! divergence-based formulation with a uniform reference profile.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::metrics::{critical_rate, entropy, entropy_unchecked};
use crate::profile::ActivityProfile;
use crate::{PMF_TOL, ZERO_SNAP};

/// A storing tuple `s` and forwarding tuple `r` for one profile.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeferralStrategy {
    pub s: Vec<f64>,
    pub r: Vec<f64>,
    /// Realized rate, `sum(s) == sum(r) == phi`.
    pub phi: f64,
    /// Rate asked for before clamping at the critical rate.
    pub phi_requested: f64,
    /// True when `phi_requested` exceeded the critical rate.
    pub clamped: bool,
    #[serde(skip)]
    pub q_ref: ActivityProfile,
}

fn snap(x: f64) -> f64 {
    if x.abs() < ZERO_SNAP {
        0.0
    } else {
        x
    }
}

impl DeferralStrategy {
    /// Validates an arbitrary `(s, r)` pair against `q_ref`: nonnegative
    /// entries, `s <= q`, and equal sums below 1.
    pub fn new(q_ref: &ActivityProfile, s: Vec<f64>, r: Vec<f64>) -> Result<Self> {
        let phi = s.iter().sum::<f64>();
        let strat = Self {
            s: s.into_iter().map(snap).collect(),
            r: r.into_iter().map(snap).collect(),
            phi,
            phi_requested: phi,
            clamped: false,
            q_ref: q_ref.clone(),
        };
        strat.check_feasible(q_ref)?;
        Ok(strat)
    }

    /// Zero strategy: nothing is deferred.
    pub fn identity(q_ref: &ActivityProfile) -> Self {
        let n = q_ref.n();
        Self {
            s: vec![0.0; n],
            r: vec![0.0; n],
            phi: 0.0,
            phi_requested: 0.0,
            clamped: false,
            q_ref: q_ref.clone(),
        }
    }

    pub fn n(&self) -> usize {
        self.s.len()
    }

    /// Checks every constraint of the feasible set for profile `q`.
    pub fn check_feasible(&self, q: &ActivityProfile) -> Result<()> {
        let n = q.n();
        if self.s.len() != n || self.r.len() != n {
            return Err(Error::Infeasible(format!(
                "strategy has {}/{} entries, profile has {n}",
                self.s.len(),
                self.r.len()
            )));
        }
        for (i, ((&si, &ri), &qi)) in self.s.iter().zip(&self.r).zip(q.q()).enumerate() {
            if !(si.is_finite() && ri.is_finite()) {
                return Err(Error::Infeasible(format!("non-finite entry at slot {}", i + 1)));
            }
            if si < 0.0 {
                return Err(Error::Infeasible(format!("s_{} = {si} < 0", i + 1)));
            }
            if ri < 0.0 {
                return Err(Error::Infeasible(format!("r_{} = {ri} < 0", i + 1)));
            }
            if si > qi + ZERO_SNAP {
                return Err(Error::Infeasible(format!("s_{} = {si} exceeds q_{} = {qi}", i + 1, i + 1)));
            }
        }
        let (ss, rs) = (self.s.iter().sum::<f64>(), self.r.iter().sum::<f64>());
        if (ss - rs).abs() > PMF_TOL {
            return Err(Error::Infeasible(format!("sum(s) = {ss} differs from sum(r) = {rs}")));
        }
        if (ss - self.phi).abs() > PMF_TOL {
            return Err(Error::Infeasible(format!("sum(s) = {ss} differs from phi = {}", self.phi)));
        }
        if !(0.0..1.0).contains(&self.phi) {
            return Err(Error::InvalidRate(self.phi));
        }
        Ok(())
    }

    /// `t = q - s + r` for the profile this strategy was built against.
    pub fn apparent(&self) -> Vec<f64> {
        self.q_ref
            .q()
            .iter()
            .zip(&self.s)
            .zip(&self.r)
            .map(|((q, s), r)| snap(q - s + r).max(0.0))
            .collect()
    }

    /// Entropy of the apparent profile, in bits.
    pub fn entropy_bits(&self) -> f64 {
        entropy_unchecked(&self.apparent())
    }
}

/// Apparent profile `t = q - s + r`; errors if `strat` is infeasible for `q`.
pub fn apparent_profile(q: &ActivityProfile, strat: &DeferralStrategy) -> Result<Vec<f64>> {
    strat.check_feasible(q)?;
    let t: Vec<f64> = q
        .q()
        .iter()
        .zip(&strat.s)
        .zip(&strat.r)
        .map(|((q, s), r)| snap(q - s + r))
        .collect();
    if let Some(i) = t.iter().position(|&x| x < 0.0) {
        return Err(Error::Infeasible(format!("t_{} = {} < 0", i + 1, t[i])));
    }
    Ok(t)
}

fn check_rate(phi: f64) -> Result<()> {
    if phi.is_finite() && (0.0..1.0).contains(&phi) {
        Ok(())
    } else {
        Err(Error::InvalidRate(phi))
    }
}

/// Level `theta` with `sum(max(q_i - theta, 0)) == phi`.
fn upper_level(q: &[f64], phi: f64) -> f64 {
    let mut v = q.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    let mut prefix = 0.0;
    for k in 1..=v.len() {
        prefix += v[k - 1];
        let theta = (prefix - phi) / k as f64;
        if k == v.len() || theta >= v[k] {
            return theta;
        }
    }
    unreachable!("loop returns at k == n")
}

/// Level `theta` with `sum(max(theta - q_i, 0)) == phi`.
fn lower_level(q: &[f64], phi: f64) -> f64 {
    let mut v = q.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let mut prefix = 0.0;
    for k in 1..=v.len() {
        prefix += v[k - 1];
        let theta = (prefix + phi) / k as f64;
        if k == v.len() || theta <= v[k] {
            return theta;
        }
    }
    unreachable!("loop returns at k == n")
}

/// Water levels `(theta_lo, theta_hi)` of the optimal apparent profile at
/// rate `phi` (after clamping at the critical rate).
pub fn water_levels(q: &ActivityProfile, phi: f64) -> Result<(f64, f64)> {
    check_rate(phi)?;
    let phi_crit = critical_rate(q);
    if phi >= phi_crit {
        let u = 1.0 / q.n() as f64;
        return Ok((u, u));
    }
    Ok((lower_level(q.q(), phi), upper_level(q.q(), phi)))
}

/// Entropy-maximizing strategy at rate `phi`. Rates above the critical rate
/// are clamped to it and the result is flagged `clamped`.
pub fn solve_optimal(q: &ActivityProfile, phi: f64) -> Result<DeferralStrategy> {
    check_rate(phi)?;
    let phi_crit = critical_rate(q);
    let clamped = phi > phi_crit;
    let phi_eff = phi.min(phi_crit);
    if phi_eff == 0.0 {
        let mut strat = DeferralStrategy::identity(q);
        strat.phi_requested = phi;
        strat.clamped = clamped;
        return Ok(strat);
    }
    let (lo, hi) = water_levels(q, phi_eff)?;
    let s = q.q().iter().map(|&x| snap((x - hi).max(0.0))).collect();
    let r = q.q().iter().map(|&x| snap((lo - x).max(0.0))).collect();
    let strat = DeferralStrategy {
        s,
        r,
        phi: phi_eff,
        phi_requested: phi,
        clamped,
        q_ref: q.clone(),
    };
    strat.check_feasible(q)?;
    Ok(strat)
}

/// One point of the privacy-deferral function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrivacyCurvePoint {
    pub phi: f64,
    /// `P(phi)`, the maximum apparent-profile entropy.
    pub entropy_bits: f64,
    /// `100 (P(phi) - P(0)) / P(0)`.
    pub gain_pct: f64,
}

/// Relative privacy gain in percent over the undisturbed entropy `h0`.
pub fn relative_gain(entropy_bits: f64, h0: f64) -> Result<f64> {
    if h0 <= 0.0 {
        return Err(Error::UndefinedGain);
    }
    Ok(100.0 * (entropy_bits - h0) / h0)
}

/// `P(phi)` at each grid point.
pub fn privacy_deferral_curve(q: &ActivityProfile, phis: &[f64]) -> Result<Vec<PrivacyCurvePoint>> {
    let h0 = entropy(q.q())?;
    phis.iter()
        .map(|&phi| {
            let strat = solve_optimal(q, phi)?;
            let h = strat.entropy_bits();
            Ok(PrivacyCurvePoint {
                phi,
                entropy_bits: h,
                gain_pct: relative_gain(h, h0)?,
            })
        })
        .collect()
}
