//! Small statistical helpers shared by tests and reports.

/// `P(X >= count)` for `X ~ Binomial(n, p)`, summed exactly in log space.
pub fn binomial_upper_tail(count: u64, n: u64, p: f64) -> f64 {
    if count == 0 {
        return 1.0;
    }
    if count > n {
        return 0.0;
    }
    if p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return 1.0;
    }
    // 1 - P(X <= count - 1)
    let log_odds = (p / (1.0 - p)).ln();
    let mut log_pmf = n as f64 * (1.0 - p).ln();
    let mut cdf = 0.0;
    for k in 0..count {
        cdf += log_pmf.exp();
        log_pmf += ((n - k) as f64 / (k + 1) as f64).ln() + log_odds;
    }
    (1.0 - cdf).max(0.0)
}

/// One-sided binomial test of `H0: rate <= p`. Returns `true` when `count`
/// events out of `n` are consistent with `H0` at the given confidence.
pub fn binomial_upper_ok(count: u64, n: u64, p: f64, confidence: f64) -> bool {
    binomial_upper_tail(count, n, p) > 1.0 - confidence
}

/// Standard error of an empirical frequency.
pub fn proportion_se(count: u64, n: u64) -> f64 {
    if n == 0 {
        return f64::NAN;
    }
    let p = count as f64 / n as f64;
    (p * (1.0 - p) / n as f64).sqrt()
}
