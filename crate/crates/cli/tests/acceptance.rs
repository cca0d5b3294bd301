//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use kcfg_cli::{cmd_score, cmd_train, TrainRequest, CHECKPOINT_FILE, CURVE_FILE};
use kcfg_core::config_space::{Answer, ConfigGroup};
use kcfg_core::dataset::{read_dataset, write_dataset};
use kcfg_core::env::KnowledgeBase;
use kcfg_core::policy::{ActionSpace, PolicyParams};
use kcfg_core::response::{format_reward, parse_response};
use kcfg_core::reward::{
    answer_reward, normalize_group, perf_reward, warmup_reward, PerfObservation, PerfTerm, WarmupTerm, Weights,
};
use kcfg_core::score::{ratio, unixbench_score, BenchEntry};
use kcfg_core::trainer::{batch_gradient, batch_objective, evaluate_greedy, run_exploration, Objective, Task, TrainConfig};
use rand::Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn reward_oracles() -> Verdict {
    let space = common::oracle_space();
    let mut cases = 0usize;
    let mut mismatches = 0usize;
    for kind in common::KINDS {
        let universe = common::answer_universe(kind);
        for cand in common::candidate_sets(kind) {
            let g = ConfigGroup {
                group_type: kind,
                candidate: cand.clone(),
                question: "q".into(),
                answer: Answer::Choice(String::new()),
            };
            for given in &universe {
                cases += 1;
                if answer_reward(&g, given.as_ref(), &space) != common::answer_oracle(&space, kind, &cand, given.as_ref()) {
                    mismatches += 1;
                }
            }
        }
    }

    let term = |p_base, p_new, lambda, c_config, c_max| PerfTerm {
        p_base,
        p_new,
        lambda,
        c_config,
        c_max,
    };
    let perf = |t| perf_reward(&PerfObservation::single(t)).unwrap();
    let two = PerfObservation {
        terms: vec![term(100.0, 110.0, 0.0, 0.0, 1.0), term(100.0, 95.0, 0.0, 0.0, 1.0)],
    };
    let warm = |r_answer, r_format, alpha, beta| WarmupTerm {
        r_answer,
        r_format,
        alpha,
        beta,
    };
    let adv_close = |rewards: &[f64], want: &[f64]| {
        let s = normalize_group(rewards).unwrap();
        s.advantages.iter().zip(want).all(|(a, b)| (a - b).abs() <= 1e-12)
    };
    let examples = [
        (perf(term(100.0, 110.0, 0.0, 0.0, 1.0)) - 0.1).abs() < 1e-15,
        (perf(term(100.0, 110.0, 1.0, 2.0, 4.0)) - 0.15).abs() < 1e-15,
        perf(term(7.0, 7.0, 3.0, 1.0, 2.0)) == 0.0,
        (perf_reward(&two).unwrap() - 0.05).abs() < 1e-15,
        warmup_reward(&[warm(1.0, 1.0, 1.0, 1.0)]) == 2.0,
        warmup_reward(&[warm(1.0, 0.0, 2.0, 1.0), warm(0.0, 1.0, 2.0, 1.0)]) == 3.0,
        adv_close(&[2.0, 0.0], &[1.0, -1.0]),
        adv_close(&[1.0, 0.0, 1.0, 0.0], &[1.0, -1.0, 1.0, -1.0]),
        // μ = 2, σ = √(2/3): advantages are ±√(3/2) and 0.
        adv_close(&[1.0, 2.0, 3.0], &[-(1.5f64.sqrt()), 0.0, 1.5f64.sqrt()]),
        adv_close(&[4.0, 4.0, 4.0], &[0.0; 3]),
    ];
    let failed = examples.iter().filter(|ok| !**ok).count();
    verdict(
        mismatches == 0 && failed == 0,
        format!("{cases} oracle cases, {mismatches} mismatches; {failed} of {} examples off", examples.len()),
    )
}

fn normalization() -> Verdict {
    let mut r = common::rng(2);
    let mut worst_mean = 0f64;
    let mut worst_std = 0f64;
    let mut checked = 0;
    while checked < 1000 {
        let g = r.gen_range(2..=64);
        let scale = 10f64.powi(r.gen_range(-2..4));
        let rewards: Vec<f64> = (0..g).map(|_| r.gen_range(-1.0..1.0) * scale).collect();
        let s = normalize_group(&rewards).unwrap();
        if s.sigma == 0.0 {
            continue;
        }
        let n = g as f64;
        let mean = s.advantages.iter().sum::<f64>() / n;
        let std = (s.advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
        worst_mean = worst_mean.max(mean.abs());
        worst_std = worst_std.max((std - 1.0).abs());
        checked += 1;
    }
    let flat_ok = (2..=64).all(|g| {
        let c = r.gen_range(-50.0..50.0);
        normalize_group(&vec![c; g]).unwrap().advantages.iter().all(|a| *a == 0.0)
    });
    verdict(
        worst_mean <= 1e-12 && worst_std <= 1e-9 && flat_ok,
        format!("|mean| ≤ {worst_mean:.1e}, |std-1| ≤ {worst_std:.1e}, constant groups zero: {flat_ok}"),
    )
}

fn gradient_check() -> Verdict {
    let mut r = common::rng(3);
    let mut worst = 0f64;
    for i in 0..50 {
        let form = if i % 2 == 0 { Objective::Literal } else { Objective::TwoSided };
        let (params, traj) = common::random_batch(&mut r, 0.2);
        let analytic = batch_gradient(&params, &traj, 0.2, form).unwrap();
        let mut probe = params.clone();
        let numeric = common::central_diff(&params.theta, |x| {
            probe.theta.copy_from_slice(x);
            batch_objective(&probe, &traj, 0.2, form).unwrap()
        });
        worst = worst.max(common::max_rel_err(&analytic, &numeric));
    }
    verdict(worst <= 1e-5, format!("50 configurations, worst relative error {worst:.2e}"))
}

struct ChainRun {
    converged: bool,
    rising: bool,
    validity: f64,
    gain: f64,
}

fn train_chain(seed: u64, config: &TrainConfig) -> ChainRun {
    let space = common::chain_space(8);
    let groups = common::chain_groups(8);
    let actions = ActionSpace::new(&space, &groups);
    let kb = KnowledgeBase::from_space(&space);
    let task = Task {
        space: &space,
        groups: &groups,
        actions: &actions,
        kb: Some(&kb),
    };
    let bench = common::planted_chain(&space, 2, seed);
    let idx: Vec<usize> = (0..groups.len()).collect();
    let out = run_exploration(&task, &idx, &bench, None, PolicyParams::init(&actions, seed), config, seed).unwrap();
    let eval = evaluate_greedy(&task, &idx, &out.params, &bench, "unixbench").unwrap();
    let window = |at: usize| out.curve[at..at + 20].iter().map(|c| c.mean_reward).sum::<f64>() / 20.0;
    ChainRun {
        converged: common::complete(&space, &eval.assignment) == common::complete(&space, &bench.planted_assignment()),
        rising: out.curve.len() >= 420 && window(400) > window(0),
        validity: eval.validity_rate,
        gain: eval.perf_gain,
    }
}

fn planted_convergence() -> Verdict {
    let config = TrainConfig::default();
    let runs: Vec<ChainRun> = (0..100).map(|seed| train_chain(seed, &config)).collect();
    let converged = runs.iter().filter(|r| r.converged).count();
    let rising = runs.iter().filter(|r| r.rising).count();
    verdict(
        converged >= 95,
        format!("{converged}/100 seeds reach the planted optimum; reward trend up in {rising}/100"),
    )
}

fn ablation_trend() -> Verdict {
    let with = |w: Weights| TrainConfig {
        weights: w,
        format_noise: 0.3,
        steps_per_episode: Some(16),
        eval_every: 0,
        ..TrainConfig::default()
    };
    let settings = [
        with(Weights::new(0.0, 1.0, 0.0)),
        with(Weights::new(1.0, 1.0, 0.0)),
        with(Weights::new(1.0, 1.0, 1.0)),
    ];
    let mut validity_up = 0;
    let mut gain_up = 0;
    let mut means = [(0.0, 0.0); 3];
    for seed in 0..100 {
        let runs: Vec<ChainRun> = settings.iter().map(|c| train_chain(seed, c)).collect();
        validity_up += usize::from(runs[0].validity < runs[1].validity);
        gain_up += usize::from(runs[1].gain < runs[2].gain);
        for (m, r) in means.iter_mut().zip(&runs) {
            m.0 += r.validity / 100.0;
            m.1 += r.gain / 100.0;
        }
    }
    verdict(
        validity_up >= 90 && gain_up >= 90,
        format!(
            "validity format-only < format+answer in {validity_up}/100 ({:.3} vs {:.3}); \
             gain format+answer < full in {gain_up}/100 ({:+.1}% vs {:+.1}%)",
            means[0].0, means[1].0, means[1].1, means[2].1
        ),
    )
}

fn format_exactness() -> Verdict {
    let corpus = common::format_corpus();
    let wrong = corpus
        .iter()
        .filter(|c| format_reward(&parse_response(&c.text)) != if c.valid { 1.0 } else { 0.0 })
        .count();
    verdict(corpus.len() == 200 && wrong == 0, format!("{} cases, {wrong} mismatches", corpus.len()))
}

fn unixbench_aggregation() -> Verdict {
    let single = unixbench_score(&[BenchEntry::new("dhrystone", 116_700.0, 116_700.0)]).unwrap();
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/metrics.csv");
    // Product of the five measured/reference indices, reduced by hand.
    let hand = 100.0 * (278_670_000_000_000f64 / 3421.0).powf(0.2);
    let got = cmd_score(&fixture).unwrap().aggregate;
    let accuracy = ratio("configuration_accuracy", 781.0, 1000.0).unwrap();
    verdict(
        single == 100.0 && (got - hand).abs() <= 1e-9 * hand && accuracy == 0.781,
        format!("identity {single}, fixture {got} vs {hand}, accuracy {accuracy}"),
    )
}

fn determinism() -> Verdict {
    let fixture = |name: &str| Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name);
    let req = TrainRequest {
        space: fixture("space.jsonl"),
        dataset: fixture("dataset.jsonl"),
        kb: None,
        checkpoint: None,
        from_scratch: true,
        seed: 11,
        split: None,
        lambda: 0.5,
        eval_workload: None,
        config: TrainConfig {
            episodes: 100,
            format_noise: 0.2,
            ..TrainConfig::default()
        },
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    cmd_train(&req, a.path()).unwrap();
    cmd_train(&req, b.path()).unwrap();
    let same = [CHECKPOINT_FILE, CURVE_FILE]
        .iter()
        .all(|f| fs::read(a.path().join(f)).unwrap() == fs::read(b.path().join(f)).unwrap());
    verdict(same, "checkpoint and reward curve compared byte for byte")
}

fn dataset_round_trip() -> Verdict {
    let mut r = common::rng(9);
    let mut failures = 0;
    let mut samples = 0;
    for _ in 0..500 {
        let n = r.gen_range(1..=30);
        let space = common::random_space(&mut r, n);
        let len = r.gen_range(1..40);
        let ds = common::random_dataset(&mut r, &space, len);
        samples += ds.len();
        let text = write_dataset(&ds);
        let ok = match read_dataset(&text, &space) {
            Ok((back, warnings)) => warnings.is_empty() && back == ds && write_dataset(&back) == text,
            Err(_) => false,
        };
        failures += usize::from(!ok);
    }
    verdict(failures == 0, format!("500 datasets ({samples} groups), {failures} failures"))
}

type Criterion = (&'static str, Duration, fn() -> Verdict);

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("reward oracles", Duration::from_secs(5), reward_oracles),
        ("advantage normalization", Duration::from_secs(5), normalization),
        ("clipped-objective gradient", Duration::from_secs(30), gradient_check),
        ("planted-optimum convergence", Duration::from_secs(180), planted_convergence),
        ("reward ablation trend", Duration::from_secs(300), ablation_trend),
        ("format reward exactness", Duration::from_secs(1), format_exactness),
        ("unixbench aggregation", Duration::from_secs(1), unixbench_aggregation),
        ("training determinism", Duration::from_secs(60), determinism),
        ("dataset round trip", Duration::from_secs(5), dataset_round_trip),
    ];
    let mut all = true;
    for (i, (name, budget, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let v = run();
        let took = start.elapsed();
        let pass = v.pass && took <= *budget;
        all &= pass;
        println!(
            "{} criterion {} {name}: {} [{:.2}s of {}s]",
            if pass { "PASS" } else { "FAIL" },
            i + 1,
            v.detail,
            took.as_secs_f64(),
            budget.as_secs()
        );
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
