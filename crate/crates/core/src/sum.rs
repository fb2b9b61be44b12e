//! Order-fixed summation.

/// Pairwise summation over a fixed binary tree with error compensation;
/// the result depends only on the order of `values`.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    let (s, c) = pairwise(values);
    s + c
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn pairwise(values: &[f64]) -> (f64, f64) {
    const LEAF: usize = 32;
    if values.len() <= LEAF {
        let mut s = 0.0;
        let mut c = 0.0;
        for &v in values {
            let (t, e) = two_sum(s, v);
            s = t;
            c += e;
        }
        return (s, c);
    }
    let mid = values.len() / 2;
    let (s1, c1) = pairwise(&values[..mid]);
    let (s2, c2) = pairwise(&values[mid..]);
    let (s, e) = two_sum(s1, s2);
    (s, c1 + c2 + e)
}

/// Sample mean and standard error of the mean.
pub fn mean_and_std_error(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = pairwise_sum(values) / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let dev: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = pairwise_sum(&dev) / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}
