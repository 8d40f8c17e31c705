//! Closed-form quantities: universal lower bounds on the expected detection
//! and termination times, threshold calibration for familywise error control,
//! and the max-min allocation over the probability simplex.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::llr::Thresholds;
use crate::stream_models::{GroundTruth, StreamModel};

/// `d(x, y) = x log(x/(1-y)) + (1-x) log((1-x)/y)`, the divergence of
/// Bernoulli(x) against Bernoulli(1-y).
pub fn bernoulli_kl(x: f64, y: f64) -> Result<f64> {
    if !(x > 0.0 && x < 1.0 && y > 0.0 && y < 1.0) {
        return Err(Error::Domain(format!("d(x, y) needs x, y in (0,1), got ({x}, {y})")));
    }
    Ok(x * (x / (1.0 - y)).ln() + (1.0 - x) * ((1.0 - x) / y).ln())
}

/// Lower bounds on `E[T_k ∧ T_stop]` (index `k-1`) and `E[T_stop]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundReport {
    pub per_k_bounds: Vec<f64>,
    pub t_stop_bound: f64,
    pub asymptotic_per_k: Vec<f64>,
    pub asymptotic_t_stop: f64,
}

/// Bounds valid for every procedure whose familywise type-I and type-II error
/// probabilities are at most `alpha` and `beta`.
pub fn lower_bounds(models: &[StreamModel], truth: &GroundTruth, alpha: f64, beta: f64) -> Result<LowerBoundReport> {
    if alpha + beta >= 1.0 {
        return Err(Error::Domain(format!("need alpha + beta < 1, got {alpha} + {beta}")));
    }
    let signal_cost = bernoulli_kl(beta, alpha)?;
    let noise_cost = bernoulli_kl(alpha, beta)?;
    if let Some(bad) = truth.signals().iter().find(|i| **i >= models.len()) {
        return Err(Error::Domain(format!(
            "signal index {bad} out of range for {} streams",
            models.len()
        )));
    }
    let (log_alpha, log_beta) = (alpha.ln().abs(), beta.ln().abs());

    let mut signal_kls: Vec<f64> = truth.signals().iter().map(|i| models[*i].signal_kl()).collect();
    signal_kls.sort_by(|x, y| y.total_cmp(x));
    let signal_sum: f64 = signal_kls.iter().map(|kl| 1.0 / kl).sum();
    let noise_sum: f64 = (0..models.len())
        .filter(|i| !truth.is_signal(*i))
        .map(|i| 1.0 / models[i].noise_kl())
        .sum();

    let t_stop_bound = signal_cost * signal_sum + noise_cost * noise_sum;
    let asymptotic_t_stop = log_alpha * signal_sum + log_beta * noise_sum;

    let mut per_k_bounds = Vec::with_capacity(models.len());
    let mut asymptotic_per_k = Vec::with_capacity(models.len());
    let mut partial = 0.0;
    for k in 0..models.len() {
        if let Some(kl) = signal_kls.get(k) {
            partial += 1.0 / kl;
            per_k_bounds.push(signal_cost * partial);
            asymptotic_per_k.push(log_alpha * partial);
        } else {
            per_k_bounds.push(t_stop_bound);
            asymptotic_per_k.push(asymptotic_t_stop);
        }
    }
    Ok(LowerBoundReport {
        per_k_bounds,
        t_stop_bound,
        asymptotic_per_k,
        asymptotic_t_stop,
    })
}

/// Thresholds `a = |log alpha| + log K`, `b = |log beta| + log K` with the
/// default `b' = log a` clamped to `[0, b]`.
pub fn calibrate_thresholds(alpha: f64, beta: f64, streams: usize) -> Result<Thresholds> {
    for (name, v) in [("alpha", alpha), ("beta", beta)] {
        if !(v > 0.0 && v < 1.0) {
            return Err(Error::Domain(format!("{name} must lie in (0,1), got {v}")));
        }
    }
    if streams == 0 {
        return Err(Error::Domain("at least one stream is required".into()));
    }
    let log_k = (streams as f64).ln();
    Thresholds::calibrated(alpha.ln().abs() + log_k, beta.ln().abs() + log_k, alpha, beta)
}

/// Optimal value and weights of `sup_w min_{|C| = k} sum_{i in C} w_i kls_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationResult {
    pub value: f64,
    pub weights: Vec<f64>,
}

/// Closed-form max-min allocation for non-increasing positive `kls` and
/// `1 <= k <= K`: the mass goes to the first `K - k + 1` entries in
/// proportion to `1/kls[i]`.
///
/// This is exact for `k = 1` and `k = K` but only a lower value in between
/// (for `kls = (1, 1, 1)`, `k = 2` it gives 1/2 while uniform weights reach
/// 2/3); [`maxmin_allocation_exact`] returns the true optimum.
pub fn maxmin_allocation(kls: &[f64], k: usize) -> Result<AllocationResult> {
    check_allocation_input(kls, k)?;
    Ok(equalised(kls, kls.len() - k + 1, 1.0))
}

/// True optimum of the max-min problem.
///
/// An optimal `w` zeroes the `z` streams with the smallest KLs for some
/// `0 <= z < k` and equalises `w_i kls_i` on the rest, which gives the value
/// `max_z (k - z) / sum_{i <= K - z} 1/kls[i]`. Ties go to the smallest `z`.
pub fn maxmin_allocation_exact(kls: &[f64], k: usize) -> Result<AllocationResult> {
    check_allocation_input(kls, k)?;
    let n = kls.len();
    (0..k)
        .map(|z| equalised(kls, n - z, (k - z) as f64))
        .reduce(|best, cand| if cand.value > best.value { cand } else { best })
        .ok_or_else(|| Error::Domain("k must be positive".into()))
}

fn check_allocation_input(kls: &[f64], k: usize) -> Result<()> {
    if kls.is_empty() {
        return Err(Error::Domain("kls is empty".into()));
    }
    if let Some(bad) = kls.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(Error::Domain(format!("kls must be positive and finite, got {bad}")));
    }
    if kls.windows(2).any(|w| w[0] < w[1]) {
        return Err(Error::Domain("kls must be sorted non-increasingly".into()));
    }
    if k == 0 || k > kls.len() {
        return Err(Error::Domain(format!("k must lie in [1, {}], got {k}", kls.len())));
    }
    Ok(())
}

/// Weights proportional to `1/kls[i]` on the first `support` entries; the
/// objective is `multiplicity` times the common level `w_i kls_i`.
fn equalised(kls: &[f64], support: usize, multiplicity: f64) -> AllocationResult {
    let inv_sum: f64 = kls[..support].iter().map(|v| 1.0 / v).sum();
    let weights = kls
        .iter()
        .enumerate()
        .map(|(i, v)| if i < support { (1.0 / v) / inv_sum } else { 0.0 })
        .collect();
    AllocationResult {
        value: multiplicity / inv_sum,
        weights,
    }
}

/// Brute-force evaluation of the max-min problem, independent of the closed
/// form: the inner minimum enumerates every size-`k` subset and the outer
/// supremum is a linear program over the simplex.
#[cfg(any(test, feature = "oracles"))]
pub mod oracle {
    /// `min` over all `k`-subsets `C` of `sum_{i in C} w_i kls_i`.
    pub fn inner_min(weights: &[f64], kls: &[f64], k: usize) -> f64 {
        let n = kls.len();
        let mut best = f64::INFINITY;
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize != k {
                continue;
            }
            let s: f64 = (0..n)
                .filter(|i| mask & (1 << i) != 0)
                .map(|i| weights[i] * kls[i])
                .sum();
            best = best.min(s);
        }
        best
    }

    /// Visit every point of `{w : w_i = lo_i + j_i * step, j_i >= 0, sum w = 1}`
    /// with `0 <= w_i <= 1` and `|w_i - center_i| <= radius`.
    fn visit_grid(center: &[f64], radius: f64, step: f64, f: &mut impl FnMut(&[f64])) {
        let n = center.len();
        let mut w = vec![0.0; n];
        fn rec(
            i: usize,
            used: f64,
            center: &[f64],
            radius: f64,
            step: f64,
            w: &mut Vec<f64>,
            f: &mut impl FnMut(&[f64]),
        ) {
            let n = center.len();
            if i == n - 1 {
                let last = 1.0 - used;
                if last >= -1e-12 && (last - center[i]).abs() <= radius + 1e-12 {
                    w[i] = last.max(0.0);
                    f(w);
                }
                return;
            }
            let lo = (center[i] - radius).max(0.0);
            let hi = (center[i] + radius).min(1.0 - used);
            let mut j = 0;
            loop {
                let v = lo + j as f64 * step;
                if v > hi + 1e-12 {
                    break;
                }
                w[i] = v;
                rec(i + 1, used + v, center, radius, step, w, f);
                j += 1;
            }
        }
        rec(0, 0.0, center, radius, step, &mut w, f);
    }

    /// Sup of the inner minimum by a uniform grid of spacing `step` over the
    /// whole simplex.
    pub fn grid_sup(kls: &[f64], k: usize, step: f64) -> (f64, Vec<f64>) {
        let n = kls.len();
        let center = vec![0.5; n];
        let mut best = (f64::NEG_INFINITY, vec![0.0; n]);
        visit_grid(&center, 0.5, step, &mut |w| {
            let v = inner_min(w, kls, k);
            if v > best.0 {
                best = (v, w.to_vec());
            }
        });
        best
    }

    /// Exact sup of the inner minimum, as the linear program
    /// `max t  s.t.  t <= sum_{i in C} w_i kls_i  for every k-subset C,
    /// w >= 0, sum w = 1`, solved by enumerating every basic solution.
    pub fn vertex_sup(kls: &[f64], k: usize) -> (f64, Vec<f64>) {
        let n = kls.len();
        // Rows over (w_0..w_{n-1}, t): `row . x >= 0` for inequalities.
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize == k {
                let mut r: Vec<f64> = (0..n)
                    .map(|i| if mask & (1 << i) != 0 { kls[i] } else { 0.0 })
                    .collect();
                r.push(-1.0);
                rows.push(r);
            }
        }
        for i in 0..n {
            let mut r = vec![0.0; n + 1];
            r[i] = 1.0;
            rows.push(r);
        }
        let mut best = (f64::NEG_INFINITY, vec![0.0; n]);
        let mut pick = Vec::with_capacity(n);
        choose(&rows, n, 0, &mut pick, &mut |active| {
            let mut m: Vec<Vec<f64>> = active
                .iter()
                .map(|&r| {
                    let mut row = rows[r].clone();
                    row.push(0.0);
                    row
                })
                .collect();
            let mut eq = vec![1.0; n];
            eq.extend([0.0, 1.0]);
            m.push(eq);
            let Some(x) = solve(m) else { return };
            let feasible = rows
                .iter()
                .all(|r| r.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() >= -1e-9);
            if feasible && x[n] > best.0 {
                best = (x[n], x[..n].to_vec());
            }
        });
        best
    }

    fn choose(rows: &[Vec<f64>], left: usize, from: usize, pick: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
        if left == 0 {
            f(pick);
            return;
        }
        for r in from..rows.len() {
            pick.push(r);
            choose(rows, left - 1, r + 1, pick, f);
            pick.pop();
        }
    }

    /// Gaussian elimination with partial pivoting on an augmented square
    /// system. `None` when singular.
    fn solve(mut m: Vec<Vec<f64>>) -> Option<Vec<f64>> {
        let n = m.len();
        for c in 0..n {
            let p = (c..n).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs()))?;
            if m[p][c].abs() < 1e-12 {
                return None;
            }
            m.swap(c, p);
            let pivot = m[c].clone();
            for (r, row) in m.iter_mut().enumerate() {
                if r != c {
                    let factor = row[c] / pivot[c];
                    for (x, p) in row[c..].iter_mut().zip(&pivot[c..]) {
                        *x -= factor * p;
                    }
                }
            }
        }
        Some((0..n).map(|i| m[i][n] / m[i][i]).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::oracle::*;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn reference_models() -> Vec<StreamModel> {
        [1.5, 1.5, 1.25, 1.25, 1.0, 1.0, 0.75, 0.75, 0.5, 0.5]
            .iter()
            .map(|d| StreamModel::gaussian(*d).unwrap())
            .collect()
    }

    #[test]
    fn d_at_symmetric_points() {
        assert_eq!(bernoulli_kl(0.5, 0.5).unwrap(), 0.0);
        // mpmath, 30 digits
        assert!((bernoulli_kl(0.01, 0.01).unwrap() - 4.503_217_453_131_898).abs() < 1e-12);
    }

    #[test]
    fn d_matches_log_y_near_zero() {
        let mut last_gap = f64::INFINITY;
        for e in [1e-3, 1e-6, 1e-9] {
            let ratio = bernoulli_kl(e, e).unwrap() / e.ln().abs();
            let gap = (ratio - 1.0).abs();
            assert!(gap < last_gap);
            last_gap = gap;
        }
        assert!(last_gap < 1e-8);
    }

    #[test]
    fn d_domain() {
        assert!(bernoulli_kl(0.0, 0.5).is_err());
        assert!(bernoulli_kl(0.5, 1.0).is_err());
    }

    #[test]
    fn d_is_nonnegative_with_zero_on_the_anti_diagonal() {
        let grid: Vec<f64> = (1..50).map(|i| i as f64 / 50.0).collect();
        for &x in &grid {
            for &y in &grid {
                let d = bernoulli_kl(x, y).unwrap();
                assert!(d >= -1e-15);
                if ((x + y) - 1.0).abs() < 1e-12 {
                    assert!(d.abs() < 1e-12);
                } else {
                    assert!(d > 0.0);
                }
            }
        }
    }

    #[test]
    fn empty_signal_set_gives_noise_only_bounds() {
        let models = reference_models();
        let r = lower_bounds(&models, &GroundTruth::empty(), 0.05, 0.1).unwrap();
        let expected: f64 = models
            .iter()
            .map(|m| bernoulli_kl(0.05, 0.1).unwrap() / m.noise_kl())
            .sum();
        for b in &r.per_k_bounds {
            assert!((b - expected).abs() < 1e-12);
        }
        assert!((r.t_stop_bound - expected).abs() < 1e-12);
    }

    #[test]
    fn reference_configuration_asymptotic_bounds() {
        let models = reference_models();
        let truth = GroundTruth::new([1, 3, 5, 7, 9], 10).unwrap();
        let alpha = 0.01;
        let r = lower_bounds(&models, &truth, alpha, alpha).unwrap();
        let ordered = [1.125, 0.78125, 0.5, 0.28125, 0.125];
        let a = alpha.ln().abs();
        let mut partial = 0.0;
        for (k, kl) in ordered.iter().enumerate() {
            partial += 1.0 / kl;
            assert!((r.asymptotic_per_k[k] - a * partial).abs() < 1e-9);
        }
        let total = 2.0 * partial * a;
        assert!((r.asymptotic_t_stop - total).abs() < 1e-9);
        for k in 5..10 {
            assert_eq!(r.per_k_bounds[k], r.t_stop_bound);
        }
        assert!(r.per_k_bounds.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn bounds_grow_as_error_budgets_shrink() {
        let models = reference_models();
        let truth = GroundTruth::new([1, 3, 5, 7, 9], 10).unwrap();
        let grid = [0.1, 0.01, 0.001];
        for wa in grid.windows(2) {
            for &beta in &grid {
                let loose = lower_bounds(&models, &truth, wa[0], beta).unwrap();
                let tight = lower_bounds(&models, &truth, wa[1], beta).unwrap();
                assert!(loose.per_k_bounds.iter().zip(&tight.per_k_bounds).all(|(l, t)| l <= t));
                let loose = lower_bounds(&models, &truth, beta, wa[0]).unwrap();
                let tight = lower_bounds(&models, &truth, beta, wa[1]).unwrap();
                assert!(loose.per_k_bounds.iter().zip(&tight.per_k_bounds).all(|(l, t)| l <= t));
            }
        }
    }

    #[test]
    fn lower_bounds_need_alpha_plus_beta_below_one() {
        let models = reference_models();
        assert!(lower_bounds(&models, &GroundTruth::empty(), 0.5, 0.5).is_err());
    }

    #[test]
    fn calibration_arithmetic() {
        let t = calibrate_thresholds(0.01, 0.01, 10).unwrap();
        assert!((t.a() - 1000f64.ln()).abs() < 1e-12);
        assert!((t.a() - 6.9078).abs() < 1e-4);
        assert_eq!(t.a(), t.b());
        assert!((t.b_prime() - 1.9326).abs() < 1e-3);
        assert_eq!(t.alpha(), Some(0.01));

        let t = calibrate_thresholds((-5f64).exp(), (-5f64).exp(), 1).unwrap();
        assert!((t.a() - 5.0).abs() < 1e-12);
        assert!((t.b() - 5.0).abs() < 1e-12);
        assert!(calibrate_thresholds(0.0, 0.1, 3).is_err());
    }

    #[test]
    fn allocation_two_streams() {
        let r = maxmin_allocation(&[2.0, 1.0], 1).unwrap();
        assert!((r.value - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.weights[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((r.weights[1] - 2.0 / 3.0).abs() < 1e-15);
        let (brute, _) = grid_sup(&[2.0, 1.0], 1, 1e-4);
        assert!((brute - r.value).abs() < 1e-3);
    }

    #[test]
    fn allocation_three_streams() {
        let r = maxmin_allocation(&[3.0, 2.0, 1.0], 2).unwrap();
        assert!((r.value - 1.2).abs() < 1e-12);
        assert!((r.weights[0] - 0.4).abs() < 1e-12);
        assert!((r.weights[1] - 0.6).abs() < 1e-12);
        assert_eq!(r.weights[2], 0.0);
        let (brute, _) = grid_sup(&[3.0, 2.0, 1.0], 2, 1e-3);
        assert!((brute - r.value).abs() < 1e-3);
    }

    #[test]
    fn allocation_with_equal_kls_is_uniform_on_the_support() {
        for k in 1..=4 {
            let r = maxmin_allocation(&[0.7; 4], k).unwrap();
            let support = 4 - k + 1;
            assert!((r.value - 0.7 / support as f64).abs() < 1e-15);
            for (i, w) in r.weights.iter().enumerate() {
                let expected = if i < support { 1.0 / support as f64 } else { 0.0 };
                assert!((w - expected).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn closed_form_is_exact_at_the_ends() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let n = rng.random_range(1..=4);
            let mut kls: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..5.0)).collect();
            kls.sort_by(|a, b| b.total_cmp(a));
            for k in [1, n] {
                let closed = maxmin_allocation(&kls, k).unwrap();
                let (brute, _) = vertex_sup(&kls, k);
                assert!((brute - closed.value).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn closed_form_falls_short_in_the_middle() {
        let kls = [1.0; 3];
        let closed = maxmin_allocation(&kls, 2).unwrap();
        let uniform = inner_min(&[1.0 / 3.0; 3], &kls, 2);
        assert!((closed.value - 0.5).abs() < 1e-15);
        assert!((uniform - 2.0 / 3.0).abs() < 1e-15);
        let exact = maxmin_allocation_exact(&kls, 2).unwrap();
        assert!((exact.value - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn allocation_domain_errors() {
        assert!(maxmin_allocation(&[1.0, 2.0], 1).is_err());
        assert!(maxmin_allocation(&[1.0, 0.0], 1).is_err());
        assert!(maxmin_allocation(&[1.0], 2).is_err());
        assert!(maxmin_allocation(&[], 1).is_err());
    }

    #[test]
    fn exact_allocation_fuzz_against_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..25 {
            let n = rng.random_range(1..=4);
            let mut kls: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..5.0)).collect();
            kls.sort_by(|a, b| b.total_cmp(a));
            for k in 1..=n {
                let exact = maxmin_allocation_exact(&kls, k).unwrap();
                let total: f64 = exact.weights.iter().sum();
                assert!((total - 1.0).abs() < 1e-12);
                assert!((inner_min(&exact.weights, &kls, k) - exact.value).abs() < 1e-12);
                let (brute, _) = vertex_sup(&kls, k);
                assert!(
                    (brute - exact.value).abs() < 1e-9,
                    "{kls:?} k={k}: {brute} vs {}",
                    exact.value
                );
                assert!(maxmin_allocation(&kls, k).unwrap().value <= exact.value + 1e-12);
            }
        }
    }
}
