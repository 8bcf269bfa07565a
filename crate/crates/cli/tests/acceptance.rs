//! End-to-end acceptance checks, one line per criterion.
//!
//! Runs without the libtest harness so that every line is printed; the
//! process fails when any criterion fails.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use feaslab::experiments::{
    dyna_comparison, dyna_rejection, non_singleton, oracle_convergence, planner_delusion, relabel_ablation,
    AblationConfig, ConvergenceConfig, DynaConfig, NonSingletonConfig, PlannerConfig, RejectionConfig,
};
use feaslab::selftest::{backup_shift_suite, random_histogram, removal_invariance_suite};
use feaslab::stats::paired_t_greater;
use feaslab::Histogram64;

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn backup_shift() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let r = backup_shift_suite(10_000, &mut rng);
    outcome(r.passed(), format!("{} histograms, {} mismatches", r.cases, r.failures.len()))
}

fn oracle_equivalence() -> Outcome {
    let r = oracle_convergence(&ConvergenceConfig::default()).expect("convergence run");
    outcome(
        r.mean_l1 <= 0.05 && r.seconds <= 300.0,
        format!("mean L1 {:.4} over {} cells, {:.0}s", r.mean_l1, r.cells, r.seconds),
    )
}

fn removal_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let r = removal_invariance_suite(100, 12, &mut rng);
    outcome(r.passed(), format!("{} tuples, {} violations", r.cases, r.failures.len()))
}

/// Hand sum written out term by term, independent of the library loop.
fn hand_discount(p: &[f64], gamma: f64, tau: usize) -> f64 {
    let t_bins = p.len();
    let mut total = 0.0;
    for t in 1..t_bins {
        total += p[t - 1] * gamma.powi(t.min(tau) as i32);
    }
    total + p[t_bins - 1] * gamma.powi(tau as i32)
}

fn support_swap() -> Outcome {
    let mut worst: f64 = 0.0;
    let fixtures: [(&[f64], f64, usize, f64); 3] = [
        (&[1.0, 0.0, 0.0, 0.0], 0.9, 2, 0.9),
        (&[0.0, 0.0, 0.0, 1.0], 0.9, 2, 0.81),
        (&[0.25, 0.25, 0.25, 0.25], 0.5, 3, 0.25 * (0.5 + 0.25 + 0.125 + 0.125)),
    ];
    for (p, g, tau, want) in fixtures {
        let h = Histogram64::new(p.to_vec()).unwrap();
        worst = worst.max((h.expected_discount(g, tau) - want).abs());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..2_000 {
        let t_bins = rng.random_range(2..=32);
        let h = random_histogram(t_bins, &mut rng);
        let gamma = rng.random_range(0.5..=1.0);
        let tau = rng.random_range(1..t_bins);
        worst = worst.max((h.expected_discount(gamma, tau) - hand_discount(h.probs(), gamma, tau)).abs());
    }
    outcome(worst <= 1e-12, format!("max deviation {worst:.2e}"))
}

fn dyna_gate() -> Outcome {
    let r = dyna_rejection(&RejectionConfig::default()).expect("rejection run");
    let t = r.tally;
    let total = t.infeasible + t.feasible + r.terminal + r.abstained;
    let tpr = t.true_reject_rate().unwrap_or(0.0);
    let fpr = t.false_reject_rate().unwrap_or(1.0);
    outcome(
        tpr >= 0.8 && fpr <= 0.1 && total == 10_000,
        format!(
            "{} of {} infeasible rejected ({tpr:.3}), {} of {} feasible rejected ({fpr:.3}), {total} simulated",
            t.infeasible_rejected, t.infeasible, t.feasible_rejected, t.feasible
        ),
    )
}

fn dyna_plus() -> Outcome {
    let start = Instant::now();
    let seeds: Vec<u64> = (0..20).collect();
    let runs = dyna_comparison(&DynaConfig::default(), &seeds).expect("dyna runs");
    let secs = start.elapsed().as_secs_f64();
    let q_plain: Vec<f64> = runs.iter().map(|(a, _)| a.final_q_error).collect();
    let q_plus: Vec<f64> = runs.iter().map(|(_, b)| b.final_q_error).collect();
    let r_plain: Vec<f64> = runs.iter().map(|(a, _)| a.final_return).collect();
    let r_plus: Vec<f64> = runs.iter().map(|(_, b)| b.final_return).collect();
    let q_test = paired_t_greater(&q_plain, &q_plus);
    let r_test = paired_t_greater(&r_plus, &r_plain);
    outcome(
        mean(&q_plus) <= mean(&q_plain)
            && mean(&r_plus) >= mean(&r_plain)
            && q_test.p < 0.05
            && r_test.p < 0.05
            && secs <= 3600.0,
        format!(
            "q_error {:.4} vs {:.4} (p {:.2e}), return {:.4} vs {:.4} (p {:.2e}), {} seeds, {secs:.0}s",
            mean(&q_plus),
            mean(&q_plain),
            q_test.p,
            mean(&r_plus),
            mean(&r_plain),
            r_test.p,
            runs.len()
        ),
    )
}

fn ablation() -> Outcome {
    let runs = relabel_ablation(&AblationConfig::default()).expect("ablation runs");
    let ep: Vec<f64> = runs.iter().map(|r| r.e2_episode).collect();
    let mixed: Vec<f64> = runs.iter().map(|r| r.e2_mixed).collect();
    let test = paired_t_greater(&ep, &mixed);
    outcome(
        runs.len() >= 10 && mean(&ep) > mean(&mixed) && test.p < 0.05,
        format!(
            "E2 episode-only {:.3} vs episode+pertask {:.3}, p {:.2e}, {} seeds",
            mean(&ep),
            mean(&mixed),
            test.p,
            runs.len()
        ),
    )
}

fn planner() -> Outcome {
    let runs = planner_delusion(&PlannerConfig::default()).expect("planner runs");
    let base: Vec<f64> = runs.iter().map(|r| r.baseline).collect();
    let plus: Vec<f64> = runs.iter().map(|r| r.plus).collect();
    let oracle_zero = runs.iter().all(|r| r.oracle == 0.0);
    let wins = runs.iter().filter(|r| r.plus < r.baseline).count();
    outcome(
        runs.len() >= 10 && mean(&plus) < mean(&base) && oracle_zero,
        format!(
            "delusion baseline {:.4}, plus {:.4} (lower on {wins}/{} seeds), oracle all zero: {oracle_zero}",
            mean(&base),
            mean(&plus),
            runs.len()
        ),
    )
}

fn nonsingleton() -> Outcome {
    /// Rise between consecutive snapshots still read as a decrease.
    const BAND: f64 = 0.05;
    let r = non_singleton(&NonSingletonConfig::default()).expect("non-singleton run");
    let series = |f: fn(&feaslab::experiments::ErrorSnapshot) -> Option<f64>| -> Vec<f64> {
        r.curve.iter().map(|s| f(s).expect("every category has pairs")).collect()
    };
    let curves = [series(|s| s.e0), series(|s| s.e1), series(|s| s.e2)];
    let monotone = curves.iter().all(|c| {
        c.windows(2).all(|w| w[1] <= w[0] + BAND) && c.last() < c.first()
    });
    let last = |c: &Vec<f64>| *c.last().unwrap();
    outcome(
        monotone && last(&curves[1]) <= 1.0,
        format!(
            "final E0 {:.4}, E1 {:.4}, E2 {:.4} after {} snapshots, monotone: {monotone}",
            last(&curves[0]),
            last(&curves[1]),
            last(&curves[2]),
            r.curve.len() - 1
        ),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().expect("temp dir");
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        "schema_version = 1\nwidth = 6\nheight = 6\nn_train_tasks = 4\ninteractions = 4000\n\
         snapshot_every = 1000\nseeds = [0, 1, 2]\n\n[evaluator]\nbackend = \"tabular\"\n",
    )
    .expect("config written");
    let run = |out: &str| -> Vec<u8> {
        let status = Command::new(env!("CARGO_BIN_EXE_feaslab"))
            .args(["train", "--config", cfg.to_str().unwrap(), "--out", out])
            .current_dir(dir.path())
            .env("RUST_LOG", "warn")
            .status()
            .expect("binary runs");
        assert!(status.success());
        std::fs::read(dir.path().join(Path::new(out)).join("metrics.csv")).expect("metrics written")
    };
    let (a, b) = (run("first"), run("second"));
    let rows = a.iter().filter(|&&c| c == b'\n').count().saturating_sub(1);
    outcome(!a.is_empty() && a == b, format!("{rows} rows, byte-identical: {}", a == b))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("backup-shift exactness", backup_shift),
        ("tabular oracle equivalence", oracle_equivalence),
        ("infeasible-member removal", removal_invariance),
        ("support-swap identity", support_swap),
        ("dyna rejection (controlled)", dyna_gate),
        ("dyna+ directional improvement", dyna_plus),
        ("relabeling ablation", ablation),
        ("planner delusion reduction", planner),
        ("non-singleton convergence", nonsingleton),
        ("train determinism", determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let o = check();
        let status = if o.pass { "PASS" } else { "FAIL" };
        println!("{status} {name}: {} [{:.1}s]", o.detail, start.elapsed().as_secs_f64());
        failed += (!o.pass) as usize;
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
