//! Paired significance tests over per-seed results.

use statrs::distribution::{ContinuousCDF, StudentsT};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedTest {
    pub n: usize,
    pub mean_diff: f64,
    pub t: f64,
    /// One-sided p-value for `mean(a - b) > 0`.
    pub p: f64,
}

/// One-sided paired t-test of `a > b`.
///
/// With zero variance in the differences the result is decided by the sign
/// of the mean difference alone.
pub fn paired_t_greater(a: &[f64], b: &[f64]) -> PairedTest {
    assert_eq!(a.len(), b.len(), "paired samples differ in length");
    let n = a.len();
    assert!(n >= 2, "a paired test needs at least two pairs");
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 {
        let p = if mean > 0.0 { 0.0 } else { 1.0 };
        let t = if mean > 0.0 { f64::INFINITY } else { 0.0 };
        return PairedTest { n, mean_diff: mean, t, p };
    }
    let t = mean / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("positive degrees of freedom");
    PairedTest {
        n,
        mean_diff: mean,
        t,
        p: 1.0 - dist.cdf(t),
    }
}
