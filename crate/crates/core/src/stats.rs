//! Rank-based statistics for comparing repeated experiment runs: the
//! two-sided Mann-Whitney U test (mid-ranks, tie-corrected variance,
//! continuity correction, normal approximation) and the Vargha-Delaney
//! A-measure effect size, plus Spearman rank correlation for trend checks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Outcome of comparing two samples: the U statistic (smaller of the two
/// one-sided statistics, so swapping the samples changes nothing), its
/// two-sided p-value, and the probability-of-superiority effect size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatTestResult {
    pub u: f64,
    pub p_value: f64,
    pub a12: f64,
    pub n_a: usize,
    pub n_b: usize,
}

/// Probability that a draw from `a` exceeds a draw from `b`, ties counted
/// half: `(#{a_i > b_j} + 0.5 #{a_i = b_j}) / (|a| |b|)`. 0.5 means no
/// difference, 1.0 means every `a` beats every `b`.
pub fn a12(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Stats("effect size needs non-empty samples".into()));
    }
    check_finite(a)?;
    check_finite(b)?;
    let mut wins = 0.0;
    for &x in a {
        for &y in b {
            if x > y {
                wins += 1.0;
            } else if x == y {
                wins += 0.5;
            }
        }
    }
    Ok(wins / (a.len() as f64 * b.len() as f64))
}

/// Two-sided Mann-Whitney U test under the normal approximation.
///
/// Ranks use mid-ranks for ties, the variance carries the tie correction
/// `(n1 n2 / 12) (N + 1 - sum(t^3 - t) / (N (N - 1)))`, and |U - mean| is
/// shrunk by 0.5 (continuity) before standardizing. When every value in both
/// samples is identical the statistic is degenerate and p = 1.
pub fn mann_whitney(a: &[f64], b: &[f64]) -> Result<StatTestResult> {
    if a.len() < 3 || b.len() < 3 {
        return Err(Error::Stats(format!(
            "mann-whitney needs at least 3 values per sample, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    check_finite(a)?;
    check_finite(b)?;
    let n1 = a.len() as f64;
    let n2 = b.len() as f64;
    let n = n1 + n2;

    // Rank the pooled sample; remember which sample each value came from.
    let mut pooled: Vec<(f64, bool)> = a
        .iter()
        .map(|&v| (v, true))
        .chain(b.iter().map(|&v| (v, false)))
        .collect();
    pooled.sort_by(|x, y| x.0.total_cmp(&y.0));

    let mut rank_sum_a = 0.0;
    let mut tie_term = 0.0; // sum of t^3 - t over tie groups
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i + 1;
        while j < pooled.len() && pooled[j].0 == pooled[i].0 {
            j += 1;
        }
        // Positions i+1 ..= j share the mid-rank (i + 1 + j) / 2.
        let mid_rank = (i + 1 + j) as f64 / 2.0;
        let t = (j - i) as f64;
        tie_term += t * t * t - t;
        for item in &pooled[i..j] {
            if item.1 {
                rank_sum_a += mid_rank;
            }
        }
        i = j;
    }

    let u1 = rank_sum_a - n1 * (n1 + 1.0) / 2.0;
    let u2 = n1 * n2 - u1;
    let u = u1.min(u2);
    let mean = n1 * n2 / 2.0;
    let variance = (n1 * n2 / 12.0) * ((n + 1.0) - tie_term / (n * (n - 1.0)));

    let p_value = if variance <= 0.0 {
        1.0 // one giant tie group: no ordering information at all
    } else {
        let z = ((u - mean).abs() - 0.5).max(0.0) / variance.sqrt();
        erfc(z / std::f64::consts::SQRT_2).clamp(f64::MIN_POSITIVE, 1.0)
    };

    Ok(StatTestResult {
        u,
        p_value,
        a12: a12(a, b)?,
        n_a: a.len(),
        n_b: b.len(),
    })
}

/// Spearman rank correlation: Pearson correlation of the mid-ranked values.
/// Errors when either input has no rank variation (correlation undefined).
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Stats(format!(
            "spearman needs paired samples, got lengths {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 3 {
        return Err(Error::Stats(format!(
            "spearman needs at least 3 pairs, got {}",
            x.len()
        )));
    }
    check_finite(x)?;
    check_finite(y)?;
    let rx = midranks(x);
    let ry = midranks(y);
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return Err(Error::Stats(
            "spearman undefined for a constant sample".into(),
        ));
    }
    Ok(cov / (vx * vy).sqrt())
}

/// Mid-ranks (1-based) of a sample; tied values share the average of the
/// positions they occupy.
fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let mid = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = mid;
        }
        i = j;
    }
    ranks
}

fn check_finite(values: &[f64]) -> Result<()> {
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::Stats(format!("non-finite sample value {v}")));
    }
    Ok(())
}

/// Complementary error function, rational Chebyshev approximation with
/// fractional error below 1.2e-7 everywhere — ample for p-values compared
/// against thresholds like 0.05.
pub fn erfc(x: f64) -> f64 {
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let poly = -z * z - 1.26551223
        + t * (1.00002368
            + t * (0.37409196
                + t * (0.09678418
                    + t * (-0.18628806
                        + t * (0.27886807
                            + t * (-1.13520398
                                + t * (1.48851587
                                    + t * (-0.82215223 + t * 0.17087277))))))));
    let ans = t * poly.exp();
    if x >= 0.0 {
        ans
    } else {
        2.0 - ans
    }
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const TOL: f64 = 1e-6; // erfc approximation error is below 1.2e-7

    #[test]
    fn erfc_matches_reference_values() {
        // Reference values from an independent erfc implementation.
        let cases = [
            (0.0, 1.0),
            (0.1, 8.875370839817e-1),
            (0.5, 4.795001221870e-1),
            (1.0, 1.572992070503e-1),
            (2.0, 4.677734981047e-3),
            (2.64585, 1.827091136486e-4),
            (4.0, 1.541725790028e-8),
            (-0.7, 1.677801193837),
            (-2.0, 1.995322265019),
        ];
        for (x, want) in cases {
            let got = erfc(x);
            assert!(
                (got - want).abs() <= TOL * want.abs().max(1.0),
                "erfc({x}) = {got}, want {want}"
            );
        }
    }

    #[test]
    fn normal_cdf_matches_reference_values() {
        let cases = [
            (0.0, 0.5),
            (0.5, 0.691462461274),
            (1.0, 0.841344746069),
            (1.959964, 0.975000000904),
            (-1.644854, 0.049999961525),
        ];
        for (z, want) in cases {
            assert!((normal_cdf(z) - want).abs() <= TOL);
        }
    }

    #[test]
    fn a12_fixtures() {
        assert_eq!(a12(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.5);
        assert_eq!(a12(&[3.0, 4.0, 5.0], &[1.0, 2.0]).unwrap(), 1.0);
        assert_eq!(a12(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), 0.0);
        // (#{a > b} + 0.5 #{a = b}) / 4 = (1 + 0.5) / 4
        assert_eq!(a12(&[1.0, 2.0], &[1.0, 3.0]).unwrap(), 0.375);
        assert_eq!(a12(&[7.0], &[7.0]).unwrap(), 0.5);
        assert!(a12(&[], &[1.0]).is_err());
        assert!(a12(&[f64::NAN], &[1.0]).is_err());
    }

    proptest! {
        #[test]
        fn a12_complements_sum_to_one(
            a in proptest::collection::vec(0..100i32, 1..20),
            b in proptest::collection::vec(0..100i32, 1..20),
        ) {
            let a: Vec<f64> = a.into_iter().map(f64::from).collect();
            let b: Vec<f64> = b.into_iter().map(f64::from).collect();
            let fwd = a12(&a, &b).unwrap();
            let rev = a12(&b, &a).unwrap();
            prop_assert!((fwd + rev - 1.0).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&fwd));
        }
    }

    #[test]
    fn mann_whitney_separated_samples() {
        let a: Vec<f64> = (1..=10).map(f64::from).collect();
        let b: Vec<f64> = (11..=20).map(f64::from).collect();
        let r = mann_whitney(&a, &b).unwrap();
        // Hand-ranked: R1 = 55, U1 = 0, U2 = 100, sigma^2 = 175,
        // z = 49.5 / sqrt(175), p = erfc(z / sqrt 2).
        assert_eq!(r.u, 0.0);
        assert!((r.p_value - 1.826717911e-4).abs() < 1e-9, "p = {}", r.p_value);
        assert!(r.p_value < 0.05);
        assert_eq!(r.a12, 0.0);
        // Two-sidedness: swapping the samples preserves U and p.
        let s = mann_whitney(&b, &a).unwrap();
        assert_eq!(s.u, r.u);
        assert_eq!(s.p_value, r.p_value);
        assert_eq!(s.a12, 1.0);
    }

    #[test]
    fn mann_whitney_identical_samples() {
        let a: Vec<f64> = (1..=10).map(f64::from).collect();
        let r = mann_whitney(&a, &a).unwrap();
        // U1 = U2 = 50 exactly; the continuity-corrected z is 0.
        assert_eq!(r.u, 50.0);
        assert!(r.p_value > 0.9);
        assert_eq!(r.a12, 0.5);
    }

    #[test]
    fn mann_whitney_degenerate_constant() {
        let a = [3.0; 5];
        let b = [3.0; 6];
        let r = mann_whitney(&a, &b).unwrap();
        assert_eq!(r.p_value, 1.0);
        assert_eq!(r.a12, 0.5);
    }

    #[test]
    fn mann_whitney_rejects_tiny_samples() {
        assert!(mann_whitney(&[1.0, 2.0], &[1.0, 2.0, 3.0]).is_err());
        assert!(mann_whitney(&[1.0, 2.0, 3.0], &[]).is_err());
    }

    #[test]
    fn mann_whitney_handles_ties_between_groups() {
        // Mixed ties across the two samples exercise the mid-rank path and
        // the tie-corrected variance; sanity: p in (0, 1], symmetric.
        let a = [1.0, 2.0, 2.0, 3.0, 5.0];
        let b = [2.0, 3.0, 3.0, 4.0, 4.0];
        let r = mann_whitney(&a, &b).unwrap();
        assert!(r.p_value > 0.0 && r.p_value <= 1.0);
        let s = mann_whitney(&b, &a).unwrap();
        assert!((r.p_value - s.p_value).abs() < 1e-12);
        assert!((r.u - s.u).abs() < 1e-12);
    }

    #[test]
    fn null_distribution_false_positive_rate_is_calibrated() {
        // Split one pooled sample into random halves 200 times: the fraction
        // of p < 0.05 should sit near the nominal rate.
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let pool: Vec<f64> = (0..40).map(|_| rng.gen_range(0.0..1.0)).collect();
        let mut rejections = 0;
        for _ in 0..200 {
            let mut shuffled = pool.clone();
            for i in (1..shuffled.len()).rev() {
                let j = rng.gen_range(0..=i);
                shuffled.swap(i, j);
            }
            let (a, b) = shuffled.split_at(20);
            if mann_whitney(a, b).unwrap().p_value < 0.05 {
                rejections += 1;
            }
        }
        let rate = rejections as f64 / 200.0;
        assert!(
            (0.01..=0.12).contains(&rate),
            "false positive rate {rate} outside [0.01, 0.12]"
        );
    }

    #[test]
    fn spearman_fixtures() {
        let inc: Vec<f64> = vec![1.0, 2.0, 3.0, 4.0, 5.0];
        let dec: Vec<f64> = inc.iter().rev().copied().collect();
        assert!((spearman(&inc, &inc).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&inc, &dec).unwrap() + 1.0).abs() < 1e-12);
        // Tie-free case matches 1 - 6 sum(d^2) / (n (n^2 - 1)) = 0.8.
        let y = vec![2.0, 1.0, 4.0, 3.0, 5.0];
        assert!((spearman(&inc, &y).unwrap() - 0.8).abs() < 1e-12);
        // Monotone but nonlinear is still a perfect rank correlation.
        let exp: Vec<f64> = inc.iter().map(|v| v.exp()).collect();
        assert!((spearman(&inc, &exp).unwrap() - 1.0).abs() < 1e-12);
        assert!(spearman(&inc, &[1.0, 1.0, 1.0, 1.0, 1.0]).is_err());
        assert!(spearman(&inc, &dec[..3]).is_err());
        assert!(spearman(&[1.0, 2.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn midranks_average_tied_positions() {
        assert_eq!(midranks(&[10.0, 20.0, 30.0]), vec![1.0, 2.0, 3.0]);
        // 5 appears at sorted positions 2 and 3 -> mid-rank 2.5.
        assert_eq!(midranks(&[5.0, 1.0, 5.0, 9.0]), vec![2.5, 1.0, 2.5, 4.0]);
        assert_eq!(midranks(&[7.0, 7.0, 7.0]), vec![2.0, 2.0, 2.0]);
    }
}
