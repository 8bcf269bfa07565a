use crate::scalar::Scalar;

/// Probability mass over distances `1..T-1` plus an overflow bin.
///
/// Index `t - 1` holds `p(D = t)`; the last index holds the overflow mass,
/// which stands for both `D >= T` and `D = inf`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceHistogram<F> {
    probs: Vec<F>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum HistogramError {
    #[error("histogram needs at least 2 bins, got {0}")]
    TooFewBins(usize),
    #[error("bin {0} is negative or not finite")]
    BadEntry(usize),
    #[error("mass sums to {0}, expected 1")]
    NotNormalized(f64),
}

/// Normalization tolerance for validated histograms.
pub const NORM_TOL: f64 = 1e-9;

impl<F: Scalar> DistanceHistogram<F> {
    pub fn new(probs: Vec<F>) -> Result<Self, HistogramError> {
        if probs.len() < 2 {
            return Err(HistogramError::TooFewBins(probs.len()));
        }
        if let Some(i) = probs.iter().position(|p| !p.is_finite() || *p < F::zero()) {
            return Err(HistogramError::BadEntry(i));
        }
        let total: f64 = probs.iter().map(|p| p.as_f64()).sum();
        if (total - 1.0).abs() > NORM_TOL {
            return Err(HistogramError::NotNormalized(total));
        }
        Ok(Self { probs })
    }

    /// Wraps probabilities already known to be a distribution.
    pub(crate) fn from_vec(probs: Vec<F>) -> Self {
        debug_assert!(probs.len() >= 2);
        Self { probs }
    }

    pub fn uniform(t_bins: usize) -> Self {
        assert!(t_bins >= 2);
        Self {
            probs: vec![F::one() / F::of_usize(t_bins); t_bins],
        }
    }

    /// All mass at distance `d` (`1 <= d <= T-1`).
    pub fn point(t_bins: usize, d: usize) -> Self {
        assert!(t_bins >= 2 && (1..t_bins).contains(&d), "distance out of support");
        let mut probs = vec![F::zero(); t_bins];
        probs[d - 1] = F::one();
        Self { probs }
    }

    pub fn overflow_only(t_bins: usize) -> Self {
        assert!(t_bins >= 2);
        let mut probs = vec![F::zero(); t_bins];
        probs[t_bins - 1] = F::one();
        Self { probs }
    }

    /// Number of bins `T`.
    pub fn t_bins(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[F] {
        &self.probs
    }

    pub fn into_vec(self) -> Vec<F> {
        self.probs
    }

    /// `p(D = d)` for `1 <= d <= T-1`.
    pub fn p(&self, d: usize) -> F {
        self.probs[d - 1]
    }

    pub fn overflow(&self) -> F {
        self.probs[self.probs.len() - 1]
    }

    /// `p(D <= tau)`.
    pub fn tau_feasibility(&self, tau: usize) -> F {
        assert!(
            (1..self.t_bins()).contains(&tau),
            "tau must lie in 1..=T-1"
        );
        self.probs[..tau].iter().copied().sum()
    }

    /// Expected cumulative discount: the histogram read on supports
    /// `gamma^min(t, tau)`, with overflow at `gamma^tau`.
    pub fn expected_discount(&self, gamma: F, tau: usize) -> F {
        assert!(gamma > F::zero() && gamma <= F::one(), "gamma must lie in (0, 1]");
        assert!(
            (1..self.t_bins()).contains(&tau),
            "tau must lie in 1..=T-1"
        );
        let mut acc = F::zero();
        let mut g = F::one();
        let last = self.t_bins() - 1;
        for (i, &p) in self.probs[..last].iter().enumerate() {
            if i < tau {
                g *= gamma;
            }
            acc += p * g;
        }
        acc + self.probs[last] * gamma.powi(tau as i32)
    }

    /// `sum_t t p(t)` with the overflow bin valued `T`.
    pub fn expected_distance(&self) -> F {
        self.probs
            .iter()
            .enumerate()
            .map(|(i, &p)| F::of_usize(i + 1) * p)
            .sum()
    }

    /// True iff `p(D <= tau) < threshold`.
    pub fn reject(&self, tau: usize, threshold: F) -> bool {
        self.tau_feasibility(tau) < threshold
    }

    /// The distribution of `1 + D`: every bin moves up by one and the mass of
    /// `T-1` folds into overflow.
    pub fn shifted(&self) -> Self {
        let t = self.t_bins();
        let mut probs = vec![F::zero(); t];
        probs[1..t].copy_from_slice(&self.probs[..t - 1]);
        probs[t - 1] += self.probs[t - 1];
        Self { probs }
    }

    pub fn l1(&self, other: &Self) -> F {
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(&a, &b)| (a - b).abs())
            .sum()
    }

    /// Mixture `sum_i w_i h_i`; weights are assumed to sum to one.
    pub fn mixture<'a>(parts: impl IntoIterator<Item = (F, &'a Self)>, t_bins: usize) -> Self
    where
        F: 'a,
    {
        let mut probs = vec![F::zero(); t_bins];
        for (w, h) in parts {
            for (acc, &p) in probs.iter_mut().zip(&h.probs) {
                *acc += w * p;
            }
        }
        Self { probs }
    }

    pub fn sum(&self) -> F {
        self.probs.iter().copied().sum()
    }

    pub fn is_normalized(&self, tol: f64) -> bool {
        self.probs.iter().all(|p| p.is_finite() && *p >= F::zero())
            && (self.sum().as_f64() - 1.0).abs() <= tol
    }
}

/// The learning target for one transition.
///
/// `hit` short-circuits to distance one; a terminal successor that misses the
/// target can never reach it; otherwise the successor's histogram shifts by
/// one step.
pub fn backup_target<F: Scalar>(
    t_bins: usize,
    hit: bool,
    terminal: bool,
    successor: Option<&DistanceHistogram<F>>,
) -> DistanceHistogram<F> {
    if hit {
        DistanceHistogram::point(t_bins, 1)
    } else if terminal {
        DistanceHistogram::overflow_only(t_bins)
    } else {
        successor
            .expect("non-terminal backup needs a successor histogram")
            .shifted()
    }
}
