//! Kolmogorov-Smirnov statistics and sample moments.

#![allow(dead_code)]

/// `sup |F_n(x) - x|` against the uniform law on `[lo, hi]`.
pub fn ks_uniform(values: &[f64], lo: f64, hi: f64) -> f64 {
    let mut x: Vec<f64> = values.iter().map(|v| (v - lo) / (hi - lo)).collect();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    x.iter()
        .enumerate()
        .map(|(i, &v)| (v - i as f64 / n).abs().max(((i + 1) as f64 / n - v).abs()))
        .fold(0.0, f64::max)
}

/// Two-sample statistic `sup |F_a(x) - F_b(x)|`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Critical value of the two-sample statistic at α = 0.01.
pub fn ks_two_sample_critical(na: usize, nb: usize) -> f64 {
    1.63 * ((na + nb) as f64 / (na * nb) as f64).sqrt()
}

pub fn column(samples: &[Vec<f64>], d: usize) -> Vec<f64> {
    samples.iter().map(|x| x[d]).collect()
}

/// Mean and population variance.
pub fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (m, x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n)
}
