//! Randomized invariant suites runnable from the command line.

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::envs::{generate_task, Family, StateSpace, Target};
use crate::evaluator::{backup_target, DistanceHistogram, NORM_TOL};
use crate::generator::HallucinationInjector;
use crate::oracle::{target_table, removal_invariance, Category, PolicySpec, categorize_with};

/// Outcome of one suite.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub cases: usize,
    /// One message per failing case.
    pub failures: Vec<String>,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.cases > 0
    }
}

/// A normalized histogram with random mass, some bins forced to zero.
pub fn random_histogram<R: Rng + ?Sized>(t_bins: usize, rng: &mut R) -> DistanceHistogram<f64> {
    loop {
        let raw: Vec<f64> = (0..t_bins)
            .map(|_| if rng.random_bool(0.3) { 0.0 } else { rng.random::<f64>() })
            .collect();
        let total: f64 = raw.iter().sum();
        if total > 0.0 {
            if let Ok(h) = DistanceHistogram::new(raw.iter().map(|p| p / total).collect()) {
                return h;
            }
        }
    }
}

/// Three backup branches checked bit for bit on `n` random successors.
pub fn backup_shift_suite<R: Rng + ?Sized>(n: usize, rng: &mut R) -> SuiteResult {
    let mut failures = Vec::new();
    for case in 0..n {
        let t = rng.random_range(2..=32);
        let h = random_histogram(t, rng);
        let p = h.probs();
        let hit = backup_target(t, true, rng.random(), Some(&h));
        if hit.probs().iter().enumerate().any(|(i, &q)| q != if i == 0 { 1.0 } else { 0.0 }) {
            failures.push(format!("case {case}: hit branch is not a point mass at 1"));
        }
        let term = backup_target(t, false, true, Some(&h));
        if term.probs().iter().enumerate().any(|(i, &q)| q != if i == t - 1 { 1.0 } else { 0.0 }) {
            failures.push(format!("case {case}: terminal branch is not all overflow"));
        }
        let shift = backup_target(t, false, false, Some(&h));
        let q = shift.probs();
        let mut ok = q[0] == 0.0;
        for k in 1..t - 1 {
            ok &= q[k].to_bits() == p[k - 1].to_bits();
        }
        ok &= q[t - 1].to_bits() == (p[t - 2] + p[t - 1]).to_bits();
        if !ok {
            failures.push(format!("case {case}: shift branch differs (T = {t})"));
        }
    }
    SuiteResult {
        name: "backup_shift",
        cases: n,
        failures,
    }
}

/// One random (task, source, mixed target set) tuple.
#[derive(Debug, Clone)]
pub struct MixedTargetTuple {
    pub space: StateSpace,
    pub source: usize,
    pub members: Vec<Target>,
    pub tau: usize,
    pub policy: PolicySpec<f64>,
}

/// Alternates families, sizes and policies; each set holds up to three G0
/// members, one or two G1 members and, where the source allows it, a G2
/// member.
pub fn mixed_target_tuple<R: Rng + ?Sized>(k: usize, seed: u64, rng: &mut R) -> MixedTargetTuple {
    let family = if k.is_multiple_of(2) { Family::Ssm } else { Family::Rds };
    let size = 5 + k % 3;
    let delta = 0.1 + 0.05 * (k % 4) as f64;
    let task = generate_task(family, size, size, delta, seed.wrapping_mul(1_000_003) + k as u64)
        .expect("small tasks generate");
    let space = StateSpace::new(&task);
    let live: Vec<usize> = space.nonterminal().collect();
    let source = *live.choose(rng).expect("solvable tasks have live states");
    let reach = space.reachable_from(source);
    let radius = rng.random_range(0..=1u8);
    let reachable: Vec<usize> = (0..space.len()).filter(|&i| reach[i]).collect();
    let mut members = Vec::new();
    for _ in 0..rng.random_range(0..=3) {
        let i = *reachable.choose(rng).expect("source reaches itself");
        members.push(Target::new(space.state(i).embedding(), radius));
    }
    let base = Target::new(space.state(source).embedding(), radius);
    let g1 = HallucinationInjector::g1_candidates_all(&space, &base);
    for _ in 0..rng.random_range(1..=2) {
        if let Some(t) = g1.choose(rng) {
            members.push(*t);
        }
    }
    let g2 = HallucinationInjector::g2_candidates(&space, source, &base, &reach);
    if let Some(t) = g2.choose(rng) {
        members.push(*t);
    }
    let policy = if k % 3 == 2 {
        PolicySpec::GreedyToTarget
    } else {
        PolicySpec::UniformRandom
    };
    MixedTargetTuple {
        tau: rng.random_range(1..16),
        space,
        source,
        members,
        policy,
    }
}

/// Feasibility of each mixed set equals that of its pruned set, exactly.
pub fn removal_invariance_suite<R: Rng + ?Sized>(n: usize, seed: u64, rng: &mut R) -> SuiteResult {
    let mut failures = Vec::new();
    for k in 0..n {
        let tup = mixed_target_tuple(k, seed, rng);
        let r = removal_invariance(&tup.space, tup.source, &tup.members, tup.tau, 16, &tup.policy);
        let infeasible = tup
            .members
            .iter()
            .filter(|m| {
                categorize_with(&tup.space.hit_mask(*m), &tup.space.reachable_from(tup.source)) != Category::G0
            })
            .count();
        if !r.holds() || r.removed != infeasible {
            failures.push(format!(
                "tuple {k}: mixed {} vs pruned {} (removed {})",
                r.feasibility_mixed, r.feasibility_pruned, r.removed
            ));
        }
    }
    SuiteResult {
        name: "removal_invariance",
        cases: n,
        failures,
    }
}

/// Every oracle histogram and every backup of a random histogram sums to one.
pub fn normalization_suite<R: Rng + ?Sized>(n: usize, seed: u64, rng: &mut R) -> SuiteResult {
    let mut failures = Vec::new();
    let mut cases = 0;
    for k in 0..n {
        let family = if k.is_multiple_of(2) { Family::Ssm } else { Family::Rds };
        let task = generate_task(family, 5, 5, 0.2, seed.wrapping_add(k as u64)).expect("small tasks generate");
        let space = StateSpace::new(&task);
        let i = rng.random_range(0..space.len());
        let target = Target::new(space.state(i).embedding(), rng.random_range(0..=1));
        let table = target_table(&space, &PolicySpec::<f64>::UniformRandom, &target, 16);
        for s in 0..table.len() {
            cases += 1;
            if !table.row(s).is_normalized(NORM_TOL) {
                failures.push(format!("task {k} state {s}: oracle row sums to {}", table.row(s).sum()));
            }
        }
        let h = random_histogram(16, rng);
        cases += 1;
        if !backup_target(16, false, false, Some(&h)).is_normalized(NORM_TOL) {
            failures.push(format!("task {k}: shifted backup is not normalized"));
        }
    }
    SuiteResult {
        name: "normalization",
        cases,
        failures,
    }
}

/// All suites at their default sizes.
pub fn run_all(seed: u64) -> Vec<SuiteResult> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    vec![
        backup_shift_suite(10_000, &mut rng),
        removal_invariance_suite(100, seed, &mut rng),
        normalization_suite(20, seed, &mut rng),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn small_suites_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert!(backup_shift_suite(200, &mut rng).passed());
        assert!(removal_invariance_suite(12, 5, &mut rng).passed());
        assert!(normalization_suite(4, 5, &mut rng).passed());
    }

    #[test]
    fn tuples_mix_categories() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut saw_g2 = false;
        for k in 0..20 {
            let t = mixed_target_tuple(k, 2, &mut rng);
            let reach = t.space.reachable_from(t.source);
            let cats: Vec<Category> = t.members.iter().map(|m| categorize_with(&t.space.hit_mask(m), &reach)).collect();
            assert!(cats.contains(&Category::G1));
            saw_g2 |= cats.contains(&Category::G2);
        }
        assert!(saw_g2);
    }
}
