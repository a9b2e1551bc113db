//! Generic solvers for the deferral problem that know nothing about its
//! water-filling structure. They exist to cross-check [`crate::solve_optimal`].
//!
//! [`solve_numerical_oracle`] runs projected gradient ascent of `H(q - s + r)`
//! over the polytope `{0 <= s <= q, r >= 0, sum s = sum r = phi}` and stops
//! once the Frank-Wolfe duality gap, an upper bound on the distance to the
//! optimum for a concave objective, falls below the tolerance.
//!
//! [`grid_search`] enumerates every apparent profile on a lattice of the
//! simplex and keeps the best feasible one.

use crate::error::{Error, Result};
use crate::metrics::{critical_rate, entropy_unchecked};
use crate::profile::ActivityProfile;
use crate::solver::DeferralStrategy;

const MAX_ITERATIONS: usize = 200_000;
const LN2: f64 = std::f64::consts::LN_2;

/// Euclidean projection of `v` onto `{0 <= x <= cap, sum x = total}` by
/// bisection on the shift. Requires `sum(cap) >= total`.
fn project_capped(v: &[f64], cap: &[f64], total: f64, out: &mut [f64]) {
    let eval = |tau: f64, out: &mut [f64]| -> f64 {
        let mut sum = 0.0;
        for ((o, &x), &c) in out.iter_mut().zip(v).zip(cap) {
            *o = (x - tau).clamp(0.0, c);
            sum += *o;
        }
        sum
    };
    let vmin = v.iter().copied().fold(f64::INFINITY, f64::min);
    let vmax = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut lo, mut hi) = (vmin - total - 1.0, vmax);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if eval(mid, out) > total {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let sum = eval(hi, out);
    // spread the last rounding residue over the free coordinates
    let residue = total - sum;
    if residue != 0.0 {
        let free: Vec<usize> = (0..out.len())
            .filter(|&i| out[i] + residue >= 0.0 && out[i] + residue <= cap[i] && out[i] > 0.0)
            .collect();
        if let Some(&i) = free.first() {
            out[i] += residue;
        }
    }
}

fn apparent(q: &[f64], s: &[f64], r: &[f64], t: &mut [f64]) {
    for i in 0..q.len() {
        t[i] = (q[i] - s[i] + r[i]).max(0.0);
    }
}

/// Entropy gradient; zero components get a large finite slope.
fn gradient(t: &[f64], g: &mut [f64]) {
    for (gi, &ti) in g.iter_mut().zip(t) {
        *gi = -(ti.max(1e-300).log2() + 1.0 / LN2);
    }
}

/// Frank-Wolfe gap at `(s, r)` for gradient `g` of `H` with respect to `t`.
fn fw_gap(q: &[f64], s: &[f64], r: &[f64], g: &[f64], phi: f64) -> f64 {
    // best s: fill the slots with the smallest gradient first, up to q_i
    let mut order: Vec<usize> = (0..q.len()).collect();
    order.sort_by(|&a, &b| g[a].total_cmp(&g[b]));
    let mut left = phi;
    let mut best_s = 0.0;
    for &i in &order {
        let take = left.min(q[i]);
        best_s -= g[i] * take;
        left -= take;
        if left <= 0.0 {
            break;
        }
    }
    let gmax = g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let best = best_s + gmax * phi;
    let current: f64 = g.iter().zip(s).zip(r).map(|((gi, si), ri)| gi * (ri - si)).sum();
    (best - current).max(0.0)
}

/// Entropy-maximizing strategy by projected gradient ascent. The returned
/// strategy's entropy is within `tol` bits of the optimum.
pub fn solve_numerical_oracle(q: &ActivityProfile, phi: f64, tol: f64) -> Result<DeferralStrategy> {
    if !(phi.is_finite() && (0.0..1.0).contains(&phi)) {
        return Err(Error::InvalidRate(phi));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance must be positive, got {tol}")));
    }
    let phi_crit = critical_rate(q);
    let phi_eff = phi.min(phi_crit);
    let qv = q.q();
    let n = qv.len();
    if phi_eff == 0.0 {
        let mut st = DeferralStrategy::identity(q);
        st.phi_requested = phi;
        st.clamped = phi > phi_crit;
        return Ok(st);
    }

    let mut s: Vec<f64> = qv.iter().map(|&x| x * phi_eff).collect();
    let mut r = vec![phi_eff / n as f64; n];
    let inf_cap = vec![f64::INFINITY; n];
    let mut t = vec![0.0; n];
    let mut g = vec![0.0; n];
    let (mut s_new, mut r_new, mut t_new) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let (mut v_s, mut v_r) = (vec![0.0; n], vec![0.0; n]);

    apparent(qv, &s, &r, &mut t);
    let mut f = entropy_unchecked(&t);
    let mut step = 0.1;
    let mut gap = f64::INFINITY;
    for _ in 0..MAX_ITERATIONS {
        gradient(&t, &mut g);
        gap = fw_gap(qv, &s, &r, &g, phi_eff);
        if gap <= tol {
            let mut st = DeferralStrategy::new(q, s, r)?;
            st.phi = phi_eff;
            st.phi_requested = phi;
            st.clamped = phi > phi_crit;
            return Ok(st);
        }
        loop {
            for i in 0..n {
                v_s[i] = s[i] - step * g[i];
                v_r[i] = r[i] + step * g[i];
            }
            project_capped(&v_s, qv, phi_eff, &mut s_new);
            project_capped(&v_r, &inf_cap, phi_eff, &mut r_new);
            apparent(qv, &s_new, &r_new, &mut t_new);
            let f_new = entropy_unchecked(&t_new);
            let mut lin = 0.0;
            let mut dist2 = 0.0;
            for i in 0..n {
                let (ds, dr) = (s_new[i] - s[i], r_new[i] - r[i]);
                lin += g[i] * (dr - ds);
                dist2 += ds * ds + dr * dr;
            }
            if f_new >= f + lin - dist2 / (2.0 * step) - 1e-15 || step < 1e-18 {
                std::mem::swap(&mut s, &mut s_new);
                std::mem::swap(&mut r, &mut r_new);
                std::mem::swap(&mut t, &mut t_new);
                f = f_new;
                break;
            }
            step *= 0.5;
        }
        step *= 1.5;
    }
    Err(Error::NonConvergence {
        iterations: MAX_ITERATIONS,
        best_entropy: f,
        gap,
    })
}

/// Best lattice point found by [`grid_search`].
#[derive(Debug, Clone)]
pub struct GridOptimum {
    pub t: Vec<f64>,
    pub entropy_bits: f64,
    pub strategy: DeferralStrategy,
    pub points_visited: u64,
}

/// Exhaustive search over apparent profiles whose entries are multiples of
/// `step`. A lattice point `t` is feasible when `sum(max(q - t, 0)) <= phi`;
/// the returned strategy pads `s` and `r` equally so both sum to `phi`.
/// Limited to `n <= 4`.
pub fn grid_search(q: &ActivityProfile, phi: f64, step: f64) -> Result<GridOptimum> {
    if !(phi.is_finite() && (0.0..1.0).contains(&phi)) {
        return Err(Error::InvalidRate(phi));
    }
    let n = q.n();
    if n > 4 {
        return Err(Error::InvalidParameter(format!("grid search supports n <= 4, got {n}")));
    }
    let k_total = (1.0 / step).round() as usize;
    if !(step > 0.0) || ((k_total as f64) * step - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParameter(format!("grid step {step} must divide 1")));
    }
    let phi = phi.min(critical_rate(q));
    let qv = q.q();
    let h_table: Vec<f64> = (0..=k_total)
        .map(|k| {
            let x = k as f64 / k_total as f64;
            if k == 0 {
                0.0
            } else {
                -x * x.log2()
            }
        })
        .collect();

    struct Search<'a> {
        q: &'a [f64],
        phi: f64,
        k_total: usize,
        h: &'a [f64],
        cur: Vec<usize>,
        best: Option<(f64, Vec<usize>)>,
        visited: u64,
    }
    impl Search<'_> {
        fn walk(&mut self, i: usize, left: usize, removed: f64, h: f64) {
            let n = self.q.len();
            if i == n - 1 {
                self.cur[i] = left;
                let ti = left as f64 / self.k_total as f64;
                let removed = removed + (self.q[i] - ti).max(0.0);
                self.visited += 1;
                if removed <= self.phi + 1e-12 {
                    let h = h + self.h[left];
                    if self.best.as_ref().is_none_or(|(bh, _)| h > *bh) {
                        self.best = Some((h, self.cur.clone()));
                    }
                }
                return;
            }
            for k in 0..=left {
                let ti = k as f64 / self.k_total as f64;
                let rem = removed + (self.q[i] - ti).max(0.0);
                if rem > self.phi + 1e-12 {
                    continue;
                }
                self.cur[i] = k;
                self.walk(i + 1, left - k, rem, h + self.h[k]);
            }
        }
    }
    let mut search = Search {
        q: qv,
        phi,
        k_total,
        h: &h_table,
        cur: vec![0; n],
        best: None,
        visited: 0,
    };
    search.walk(0, k_total, 0.0, 0.0);
    let (entropy_bits, ks) = search
        .best
        .ok_or_else(|| Error::Inconsistent("no feasible lattice point".into()))?;
    let t: Vec<f64> = ks.iter().map(|&k| k as f64 / k_total as f64).collect();

    let mut s: Vec<f64> = qv.iter().zip(&t).map(|(a, b)| (a - b).max(0.0)).collect();
    let mut r: Vec<f64> = qv.iter().zip(&t).map(|(a, b)| (b - a).max(0.0)).collect();
    let pad = (phi - s.iter().sum::<f64>()).max(0.0);
    let slack: Vec<f64> = qv.iter().zip(&s).map(|(a, b)| a - b).collect();
    let slack_total: f64 = slack.iter().sum();
    if pad > 0.0 && slack_total > 0.0 {
        for i in 0..n {
            let c = pad * slack[i] / slack_total;
            s[i] += c;
            r[i] += c;
        }
    }
    let r_total: f64 = r.iter().sum();
    let s_total: f64 = s.iter().sum();
    // the lattice t need not sum r exactly to s; fold the rounding into r
    if let Some(i) = (0..n).max_by(|&a, &b| r[a].total_cmp(&r[b])) {
        r[i] += s_total - r_total;
    }
    let strategy = DeferralStrategy::new(q, s, r)?;
    Ok(GridOptimum {
        t,
        entropy_bits,
        strategy,
        points_visited: search.visited,
    })
}
