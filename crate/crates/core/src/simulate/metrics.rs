/// Kendall's τ between two score vectors over all `C(n, 2)` pairs.
///
/// Ties contribute zero. Vectors of length below 2 give 0.
pub fn kendall_tau(estimate: &[f64], truth: &[f64]) -> f64 {
    assert_eq!(estimate.len(), truth.len(), "kendall_tau: length mismatch");
    let n = estimate.len();
    if n < 2 {
        return 0.0;
    }
    let sign = |x: f64| {
        if x > 0.0 {
            1i64
        } else if x < 0.0 {
            -1
        } else {
            0
        }
    };
    let mut sum = 0i64;
    for i in 0..n {
        for j in (i + 1)..n {
            sum += sign(estimate[i] - estimate[j]) * sign(truth[i] - truth[j]);
        }
    }
    sum as f64 / (n * (n - 1) / 2) as f64
}

/// Mean and standard error of the mean.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identities() {
        let v = [0.0, 1.5, -0.3, 2.2];
        assert_eq!(kendall_tau(&v, &v), 1.0);
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        assert_eq!(kendall_tau(&v, &neg), -1.0);
    }

    /// Counts concordant minus discordant pairs via a sorted order.
    fn by_ranks(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&i, &j| a[i].total_cmp(&a[j]));
        let mut c = 0i64;
        let mut d = 0i64;
        for x in 0..n {
            for y in (x + 1)..n {
                let (i, j) = (idx[x], idx[y]);
                if a[i] == a[j] || b[i] == b[j] {
                    continue;
                }
                if b[j] > b[i] {
                    c += 1;
                } else {
                    d += 1;
                }
            }
        }
        (c - d) as f64 / (n * (n - 1) / 2) as f64
    }

    #[test]
    fn matches_rank_based_reimplementation() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let n = rng.random_range(2..30);
            let a: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            assert_eq!(kendall_tau(&a, &b), by_ranks(&a, &b));
        }
    }

    #[test]
    fn mean_stderr_basics() {
        assert_eq!(mean_stderr(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_stderr(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
    }
}
