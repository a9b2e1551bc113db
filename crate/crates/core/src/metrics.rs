//! Information-theoretic metrics on PMFs. All logarithms are base 2.

use crate::error::{Error, Result};
use crate::profile::ActivityProfile;
use crate::PMF_TOL;

/// Rejects vectors that are empty, contain negative or non-finite entries, or
/// do not sum to 1 within [`PMF_TOL`].
pub fn check_pmf(p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(Error::NotPmf("empty vector".into()));
    }
    if let Some((i, &x)) = p.iter().enumerate().find(|(_, x)| !x.is_finite() || **x < 0.0) {
        return Err(Error::NotPmf(format!("entry {i} is {x}")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > PMF_TOL {
        return Err(Error::NotPmf(format!("sums to {sum}")));
    }
    Ok(())
}

fn check_same_alphabet(p: &[f64], q: &[f64]) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch(p.len(), q.len()));
    }
    Ok(())
}

pub fn uniform(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

/// `-sum x log2 x` with `0 log 0 = 0`; no validation.
pub(crate) fn entropy_unchecked(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| x * x.log2())
        .sum::<f64>()
}

/// Shannon entropy in bits.
pub fn entropy(p: &[f64]) -> Result<f64> {
    check_pmf(p)?;
    Ok(entropy_unchecked(p).max(0.0))
}

/// `D(t || p)` in bits. Infinite divergence (mass of `t` where `p` is zero) is
/// an error.
pub fn kl_divergence(t: &[f64], p: &[f64]) -> Result<f64> {
    check_same_alphabet(t, p)?;
    check_pmf(t)?;
    check_pmf(p)?;
    let mut d = 0.0;
    for (i, (&ti, &pi)) in t.iter().zip(p).enumerate() {
        if ti <= 0.0 {
            continue;
        }
        if pi <= 0.0 {
            return Err(Error::DivergenceInfinite { slot: i + 1, mass: ti });
        }
        d += ti * (ti / pi).log2();
    }
    Ok(d.max(0.0))
}

/// Variational distance `0.5 * sum |p_i - q_i|`.
pub fn total_variation(p: &[f64], q: &[f64]) -> Result<f64> {
    check_same_alphabet(p, q)?;
    check_pmf(p)?;
    check_pmf(q)?;
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// Smallest deferral rate at which the apparent profile can be made uniform:
/// the variational distance between the uniform PMF and `q`. Profiles within
/// [`PMF_TOL`] of uniform in every slot are reported as exactly 0.
pub fn critical_rate(profile: &ActivityProfile) -> f64 {
    let u = 1.0 / profile.n() as f64;
    let max_dev = profile.q().iter().map(|&x| (x - u).abs()).fold(0.0, f64::max);
    if max_dev < PMF_TOL {
        return 0.0;
    }
    0.5 * profile.q().iter().map(|&x| (x - u).abs()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::SlotScheme;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn profile(q: &[f64]) -> ActivityProfile {
        let scheme = SlotScheme::new(q.len(), crate::Period::Custom(3600 * q.len() as u64)).unwrap();
        ActivityProfile::from_pmf(scheme, q.to_vec(), 0).unwrap()
    }

    #[test]
    fn entropy_examples() {
        assert_abs_diff_eq!(entropy(&uniform(24)).unwrap(), 24f64.log2(), epsilon = 1e-12);
        assert_abs_diff_eq!(entropy(&uniform(24)).unwrap(), 4.5850, epsilon = 5e-5);
        assert_eq!(entropy(&[1.0, 0.0, 0.0, 0.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(entropy(&[0.5, 0.25, 0.25]).unwrap(), 1.5, epsilon = 1e-15);
        let err = entropy(&[0.5, 0.6]).unwrap_err();
        assert!(err.to_string().contains("not a PMF"));
        assert!(entropy(&[1.5, -0.5]).is_err());
    }

    #[test]
    fn kl_examples() {
        let t = [0.1, 0.2, 0.3, 0.4];
        assert_eq!(kl_divergence(&t, &t).unwrap(), 0.0);
        assert_abs_diff_eq!(
            kl_divergence(&[0.5, 0.5, 0.0, 0.0], &uniform(4)).unwrap(),
            1.0,
            epsilon = 1e-15
        );
        let err = kl_divergence(&[0.5, 0.5], &[1.0, 0.0]).unwrap_err();
        assert!(err.to_string().contains("divergence infinite"));
        assert!(matches!(
            kl_divergence(&[1.0], &[0.5, 0.5]),
            Err(Error::LengthMismatch(1, 2))
        ));
        // support of t inside support of p is fine
        assert_abs_diff_eq!(kl_divergence(&[1.0, 0.0], &[0.5, 0.5]).unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn tv_examples() {
        assert_eq!(total_variation(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert_eq!(total_variation(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert_abs_diff_eq!(
            total_variation(&uniform(4), &[0.5, 0.5, 0.0, 0.0]).unwrap(),
            0.5,
            epsilon = 1e-15
        );
        assert!(total_variation(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn critical_rate_examples() {
        assert_eq!(critical_rate(&profile(&uniform(7))), 0.0);
        assert_abs_diff_eq!(critical_rate(&profile(&[1.0, 0.0, 0.0, 0.0])), 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(critical_rate(&profile(&[0.5, 0.3, 0.2])), 1.0 / 6.0, epsilon = 1e-15);
    }

    fn pmf_strategy() -> impl Strategy<Value = Vec<f64>> {
        (2usize..40)
            .prop_flat_map(|n| proptest::collection::vec(0.0f64..1.0, n))
            .prop_filter("nonzero mass", |w| w.iter().sum::<f64>() > 1e-6)
            .prop_map(|w| {
                let s: f64 = w.iter().sum();
                w.into_iter().map(|x| x / s).collect()
            })
    }

    proptest! {
        #[test]
        fn entropy_bounded_by_log_n(p in pmf_strategy()) {
            let h = entropy(&p).unwrap();
            prop_assert!(h >= 0.0);
            prop_assert!(h <= (p.len() as f64).log2() + 1e-9);
        }

        #[test]
        fn kl_to_uniform_identity(p in pmf_strategy()) {
            let n = p.len();
            let d = kl_divergence(&p, &uniform(n)).unwrap();
            prop_assert!((d + entropy(&p).unwrap() - (n as f64).log2()).abs() < 1e-9);
        }

        #[test]
        fn critical_rate_zero_iff_uniform(p in pmf_strategy(), flat in proptest::bool::ANY) {
            let p = if flat { uniform(p.len()) } else { p };
            let n = p.len();
            let dev = p.iter().map(|x| (x - 1.0 / n as f64).abs()).fold(0.0, f64::max);
            let phi = critical_rate(&profile(&p));
            prop_assert_eq!(phi == 0.0, dev < 1e-9);
            prop_assert!((0.0..=1.0).contains(&phi));
        }
    }
}
