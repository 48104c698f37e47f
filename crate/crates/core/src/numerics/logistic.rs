//! Scalar logistic math shared by the autodiff kernels and the coder.
//!
//! The discrete logistic puts mass `σ((z+½−μ)/s) − σ((z−½−μ)/s)` on each
//! integer `z`. In log space this difference factors exactly as
//! `log σ(a) + log σ(−b) + log(1 − e^{−1/s})`, which stays finite far into
//! either tail.

/// Lower clamp for the log scale of every logistic component.
pub const LOG_SCALE_MIN: f64 = -7.0;
/// Upper clamp for the log scale of every logistic component.
pub const LOG_SCALE_MAX: f64 = 5.0;

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Logistic CDF at `x`.
pub fn logistic_cdf(x: f64, mu: f64, log_s: f64) -> f64 {
    let s = clamp_log_scale(log_s).exp();
    sigmoid((x - mu) / s)
}

pub fn clamp_log_scale(log_s: f64) -> f64 {
    log_s.clamp(LOG_SCALE_MIN, LOG_SCALE_MAX)
}

/// Value and partial derivatives of a discrete logistic log-pmf.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogisticEval {
    pub log_p: f64,
    pub d_z: f64,
    pub d_mu: f64,
    pub d_log_s: f64,
}

/// Log-pmf of the discrete logistic at `z`, optionally with its tails folded
/// into the support endpoints `lo`/`hi`.
///
/// `z` may be real-valued; the derivative with respect to `z` is that of the
/// continuous relaxation, which is what straight-through training needs.
pub fn discrete_logistic(
    z: f64,
    mu: f64,
    log_s: f64,
    lo: Option<f64>,
    hi: Option<f64>,
) -> LogisticEval {
    let clamped = !(LOG_SCALE_MIN..=LOG_SCALE_MAX).contains(&log_s);
    let ls = clamp_log_scale(log_s);
    let inv_s = (-ls).exp();
    let a = (z + 0.5 - mu) * inv_s;
    let b = (z - 0.5 - mu) * inv_s;
    let at_lo = lo.is_some_and(|l| z <= l);
    let at_hi = hi.is_some_and(|h| z >= h);

    let (log_p, d_a, d_b, d_c) = match (at_lo, at_hi) {
        (true, true) => (0.0, 0.0, 0.0, 0.0),
        // P(Z <= z) = σ(a)
        (true, false) => (-softplus(-a), sigmoid(-a), 0.0, 0.0),
        // P(Z >= z) = σ(−b)
        (false, true) => (-softplus(b), 0.0, -sigmoid(b), 0.0),
        (false, false) => {
            let c = (-(-inv_s).exp_m1()).ln();
            let d_c = -inv_s / inv_s.exp_m1();
            (
                -softplus(-a) - softplus(b) + c,
                sigmoid(-a),
                -sigmoid(b),
                d_c,
            )
        }
    };

    let d_z = (d_a + d_b) * inv_s;
    let d_log_s = if clamped {
        0.0
    } else {
        -a * d_a - b * d_b + d_c
    };
    LogisticEval {
        log_p,
        d_z,
        d_mu: -d_z,
        d_log_s,
    }
}

/// Value and gradients of a K-component discrete logistic mixture.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureEval {
    pub log_p: f64,
    pub d_z: f64,
    pub d_mu: Vec<f64>,
    pub d_log_s: Vec<f64>,
    pub d_logits: Vec<f64>,
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|l| l - lse).collect()
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn discrete_logistic_mixture(
    z: f64,
    mu: &[f64],
    log_s: &[f64],
    logits: &[f64],
    lo: Option<f64>,
    hi: Option<f64>,
) -> MixtureEval {
    let k = mu.len();
    debug_assert!(log_s.len() == k && logits.len() == k && k > 0);
    let log_pi = log_softmax(logits);
    let comps: Vec<LogisticEval> = (0..k)
        .map(|j| discrete_logistic(z, mu[j], log_s[j], lo, hi))
        .collect();
    let joint: Vec<f64> = (0..k).map(|j| log_pi[j] + comps[j].log_p).collect();
    let log_p = log_sum_exp(&joint);
    let resp: Vec<f64> = joint.iter().map(|t| (t - log_p).exp()).collect();
    MixtureEval {
        log_p,
        d_z: (0..k).map(|j| resp[j] * comps[j].d_z).sum(),
        d_mu: (0..k).map(|j| resp[j] * comps[j].d_mu).collect(),
        d_log_s: (0..k).map(|j| resp[j] * comps[j].d_log_s).collect(),
        d_logits: (0..k).map(|j| resp[j] - log_pi[j].exp()).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Direct CDF differences, no log-space factoring.
    fn naive_pmf(z: f64, mu: f64, log_s: f64) -> f64 {
        let s = log_s.exp();
        sigmoid((z + 0.5 - mu) / s) - sigmoid((z - 0.5 - mu) / s)
    }

    #[test]
    fn factored_form_matches_cdf_difference() {
        for &(z, mu, ls) in &[
            (0.0, 0.0, 0.0),
            (3.0, -1.5, 1.2),
            (-7.0, 2.0, -0.5),
            (40.0, 0.0, 2.0),
        ] {
            let got = discrete_logistic(z, mu, ls, None, None).log_p.exp();
            let want = naive_pmf(z, mu, ls);
            assert!(
                (got - want).abs() < 1e-12 * want.max(1e-300) + 1e-15,
                "{z} {mu} {ls}"
            );
        }
    }

    #[test]
    fn unit_scale_at_zero() {
        let p = discrete_logistic(0.0, 0.0, 0.0, None, None).log_p.exp();
        let want = sigmoid(0.5) - sigmoid(-0.5);
        assert!((p - want).abs() < 1e-15);
        assert!((p - 0.244918662).abs() < 1e-8);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let (z, mu, ls) = (1.3, 0.4, 0.7);
        let e = discrete_logistic(z, mu, ls, None, None);
        let h = 1e-6;
        let f = |z: f64, mu: f64, ls: f64| discrete_logistic(z, mu, ls, None, None).log_p;
        let fd_z = (f(z + h, mu, ls) - f(z - h, mu, ls)) / (2.0 * h);
        let fd_mu = (f(z, mu + h, ls) - f(z, mu - h, ls)) / (2.0 * h);
        let fd_ls = (f(z, mu, ls + h) - f(z, mu, ls - h)) / (2.0 * h);
        assert!((e.d_z - fd_z).abs() < 1e-7);
        assert!((e.d_mu - fd_mu).abs() < 1e-7);
        assert!((e.d_log_s - fd_ls).abs() < 1e-7);
    }

    #[test]
    fn folded_tails_derivatives() {
        for (lo, hi, z) in [(Some(-3.0), None, -3.0), (None, Some(4.0), 4.0)] {
            let e = discrete_logistic(z, 0.3, 0.2, lo, hi);
            let h = 1e-6;
            let f = |mu: f64, ls: f64| discrete_logistic(z, mu, ls, lo, hi).log_p;
            assert!((e.d_mu - (f(0.3 + h, 0.2) - f(0.3 - h, 0.2)) / (2.0 * h)).abs() < 1e-7);
            assert!((e.d_log_s - (f(0.3, 0.2 + h) - f(0.3, 0.2 - h)) / (2.0 * h)).abs() < 1e-7);
        }
    }

    #[test]
    fn mixture_gradients_match_finite_differences() {
        let mu = [1.0, -2.0, 5.0];
        let ls = [0.1, 0.9, -0.3];
        let lg = [0.2, -0.4, 1.0];
        let z = 0.7;
        let e = discrete_logistic_mixture(z, &mu, &ls, &lg, None, None);
        let h = 1e-6;
        for j in 0..3 {
            let mut m2 = mu;
            m2[j] += h;
            let up = discrete_logistic_mixture(z, &m2, &ls, &lg, None, None).log_p;
            m2[j] -= 2.0 * h;
            let dn = discrete_logistic_mixture(z, &m2, &ls, &lg, None, None).log_p;
            assert!((e.d_mu[j] - (up - dn) / (2.0 * h)).abs() < 1e-7);

            let mut l2 = lg;
            l2[j] += h;
            let up = discrete_logistic_mixture(z, &mu, &ls, &l2, None, None).log_p;
            l2[j] -= 2.0 * h;
            let dn = discrete_logistic_mixture(z, &mu, &ls, &l2, None, None).log_p;
            assert!((e.d_logits[j] - (up - dn) / (2.0 * h)).abs() < 1e-7);
        }
    }

    #[test]
    fn clamped_scale_has_zero_gradient() {
        let e = discrete_logistic(0.0, 0.0, 9.0, None, None);
        assert_eq!(e.d_log_s, 0.0);
        let same = discrete_logistic(0.0, 0.0, LOG_SCALE_MAX, None, None);
        assert_eq!(e.log_p, same.log_p);
    }
}
