//! Generators and independent oracles shared by the integration suites.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use kcfg_core::config_space::{
    Answer, Assignment, ConfigGroup, ConfigSpace, ConfigSymbol, Domain, Kind, Literal, Toggle,
};
use kcfg_core::dataset::{Dataset, Provenance, Sample};
use kcfg_core::env::SyntheticBenchmark;
use kcfg_core::policy::PolicyParams;
use kcfg_core::trainer::{ActionRecord, Trajectory};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub const KINDS: [Kind; 4] = [Kind::Bool, Kind::Choice, Kind::Menu, Kind::Value];

// ---------------------------------------------------------------------------
// The 8-symbol Bool chain: S{i} may only be Yes when S{i-1} is Yes.

pub fn chain_names(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("S{i}")).collect()
}

pub fn chain_space(n: usize) -> ConfigSpace {
    let names = chain_names(n);
    let symbols = names
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let s = ConfigSymbol::bool(name);
            if i == 0 {
                s
            } else {
                s.depends(&names[i - 1], "Yes")
            }
        })
        .collect();
    ConfigSpace::from_symbols(symbols).unwrap()
}

/// One single-symbol Bool group per chain symbol, in chain order.
pub fn chain_groups(n: usize) -> Vec<ConfigGroup> {
    chain_names(n)
        .into_iter()
        .map(|name| ConfigGroup {
            group_type: Kind::Bool,
            answer: Answer::bool1(&name, Toggle::Yes),
            candidate: vec![name],
            question: "raise overall throughput".into(),
        })
        .collect()
}

/// Benchmark whose optimum switches on the first `k` chain symbols.
pub fn planted_chain(space: &ConfigSpace, k: usize, seed: u64) -> SyntheticBenchmark {
    let mut planted = Assignment::new();
    for name in chain_names(space.len()).iter().take(k) {
        planted.set(name, Literal::yes());
    }
    SyntheticBenchmark::with_planted(space, &planted, seed, "unixbench")
}

/// Every symbol mapped to its effective value, so assignments that differ
/// only by explicit defaults compare equal.
pub fn complete(space: &ConfigSpace, a: &Assignment) -> BTreeMap<String, Literal> {
    space
        .symbols()
        .map(|s| (s.name.clone(), a.effective(s)))
        .collect()
}

// ---------------------------------------------------------------------------
// Random spaces and datasets.

fn random_domain(r: &mut ChaCha8Rng, kind: Kind) -> Domain {
    match kind {
        Kind::Bool => Domain::Bool,
        Kind::Choice | Kind::Menu => {
            let pool = ["n", "m", "y", "off", "on"];
            let k = r.gen_range(1..=4);
            Domain::Options(pool[..k].iter().map(|s| s.to_string()).collect())
        }
        Kind::Value => {
            if r.gen_bool(0.5) {
                let lo = r.gen_range(-64..64);
                Domain::Range {
                    lo,
                    hi: lo + r.gen_range(0..2048),
                }
            } else {
                let mut items: Vec<Literal> = (0..r.gen_range(1..5))
                    .map(|i| {
                        if r.gen_bool(0.5) {
                            Literal::Int(i * 100 + r.gen_range(0..100))
                        } else {
                            Literal::text(format!("mode{i}"))
                        }
                    })
                    .collect();
                items.dedup();
                Domain::Set(items)
            }
        }
    }
}

/// Random acyclic space of `n` symbols. Each symbol may depend on earlier ones.
pub fn random_space(r: &mut ChaCha8Rng, n: usize) -> ConfigSpace {
    let mut symbols: Vec<ConfigSymbol> = Vec::with_capacity(n);
    for i in 0..n {
        let kind = KINDS[r.gen_range(0..4)];
        let mut sym = ConfigSymbol::with_domain(&format!("CONFIG_{i:03}"), kind, random_domain(r, kind));
        if i > 0 {
            for _ in 0..r.gen_range(0..3) {
                let parent = &symbols[r.gen_range(0..i)];
                if sym.depends_on.iter().any(|d| d.symbol == parent.name) {
                    continue;
                }
                let values = parent.domain.canonical_values();
                let v = values.choose(r).unwrap().clone();
                sym = sym.depends(&parent.name.clone(), v);
            }
        }
        if r.gen_bool(0.3) {
            sym.help = Some(format!("help for symbol {i}: \"quoted\" \\ é"));
        }
        symbols.push(sym);
    }
    ConfigSpace::from_symbols(symbols).unwrap()
}

pub fn random_answer(r: &mut ChaCha8Rng, space: &ConfigSpace, kind: Kind, candidate: &[String]) -> Answer {
    match kind {
        Kind::Bool => Answer::Bool(
            candidate
                .iter()
                .map(|c| (c.clone(), if r.gen_bool(0.5) { Toggle::Yes } else { Toggle::No }))
                .collect(),
        ),
        Kind::Choice => Answer::Choice(candidate.choose(r).unwrap().clone()),
        Kind::Menu => {
            let mut sel: BTreeSet<String> = candidate.iter().filter(|_| r.gen_bool(0.5)).cloned().collect();
            if sel.is_empty() {
                sel.insert(candidate.choose(r).unwrap().clone());
            }
            Answer::Menu(sel)
        }
        Kind::Value => Answer::Value(
            candidate
                .iter()
                .map(|c| {
                    let v = match &space.get(c).unwrap().domain {
                        Domain::Range { lo, hi } => Literal::Int(r.gen_range(*lo..=*hi)),
                        Domain::Set(items) => items.choose(r).unwrap().clone(),
                        other => panic!("not a Value domain: {other:?}"),
                    };
                    (c.clone(), v)
                })
                .collect(),
        ),
    }
}

const QUESTIONS: [&str; 5] = [
    "maximize file copy throughput",
    "lower p99 latency for \"redis\"",
    "tune for a 2-socket box\twith NUMA",
    "réduire la latence",
    "back\\slash and newline\nin text",
];

/// A random valid group drawn from `space`, or `None` if `kind` is absent.
pub fn random_group(r: &mut ChaCha8Rng, space: &ConfigSpace, kind: Kind) -> Option<ConfigGroup> {
    let pool: Vec<String> = space
        .symbols()
        .filter(|s| s.kind == kind)
        .map(|s| s.name.clone())
        .collect();
    if pool.is_empty() {
        return None;
    }
    let k = r.gen_range(1..=pool.len().min(4));
    let mut candidate: Vec<String> = pool.choose_multiple(r, k).cloned().collect();
    candidate.sort();
    let answer = random_answer(r, space, kind, &candidate);
    Some(ConfigGroup {
        group_type: kind,
        candidate,
        question: QUESTIONS.choose(r).unwrap().to_string(),
        answer,
    })
}

pub fn random_dataset(r: &mut ChaCha8Rng, space: &ConfigSpace, len: usize) -> Dataset {
    let provenances = [
        Provenance::Official,
        Provenance::Historical,
        Provenance::Expert,
        Provenance::Benchmark,
        Provenance::Other,
    ];
    let mut samples = Vec::with_capacity(len);
    while samples.len() < len {
        let kind = KINDS[r.gen_range(0..4)];
        if let Some(group) = random_group(r, space, kind) {
            samples.push(Sample {
                group,
                provenance: *provenances.choose(r).unwrap(),
            });
        }
    }
    Dataset { samples }
}

// ---------------------------------------------------------------------------
// Answer-validity oracle, written from the reward rules alone.

/// 1 when `given` is a valid modification of a group of `kind` over
/// `candidate`, from first principles.
pub fn answer_oracle(space: &ConfigSpace, kind: Kind, candidate: &[String], given: Option<&Answer>) -> f64 {
    let cand: BTreeSet<&str> = candidate.iter().map(String::as_str).collect();
    let ok = match (kind, given) {
        (_, None) => false,
        (Kind::Bool, Some(Answer::Bool(m))) => m.keys().map(String::as_str).collect::<BTreeSet<_>>() == cand,
        (Kind::Menu, Some(Answer::Menu(s))) => !s.is_empty() && s.iter().all(|x| cand.contains(x.as_str())),
        (Kind::Choice, Some(Answer::Choice(c))) => cand.contains(c.as_str()),
        (Kind::Value, Some(Answer::Value(m))) => {
            m.keys().map(String::as_str).collect::<BTreeSet<_>>() == cand
                && m.iter().all(|(k, v)| match (&space.get(k).unwrap().domain, v) {
                    (Domain::Range { lo, hi }, Literal::Int(i)) => lo <= i && i <= hi,
                    (Domain::Set(items), v) => items.iter().any(|x| x == v),
                    _ => false,
                })
        }
        _ => false,
    };
    if ok {
        1.0
    } else {
        0.0
    }
}

/// Pools of six symbols per kind plus one outsider per kind.
pub fn oracle_space() -> ConfigSpace {
    let mut symbols = Vec::new();
    for i in 0..7 {
        symbols.push(ConfigSymbol::bool(&format!("B{i}")));
        let opts = Domain::Options(vec!["n".into(), "y".into()]);
        symbols.push(ConfigSymbol::with_domain(&format!("C{i}"), Kind::Choice, opts.clone()));
        symbols.push(ConfigSymbol::with_domain(&format!("M{i}"), Kind::Menu, opts));
        let domain = if i % 2 == 0 {
            Domain::Range { lo: 0, hi: 1024 }
        } else {
            Domain::Set(vec![Literal::Int(100), Literal::Int(250), Literal::text("auto")])
        };
        symbols.push(ConfigSymbol::with_domain(&format!("V{i}"), Kind::Value, domain));
    }
    ConfigSpace::from_symbols(symbols).unwrap()
}

pub fn prefix(kind: Kind) -> &'static str {
    match kind {
        Kind::Bool => "B",
        Kind::Choice => "C",
        Kind::Menu => "M",
        Kind::Value => "V",
    }
}

/// Every non-empty candidate subset of the six pool symbols of `kind`.
pub fn candidate_sets(kind: Kind) -> Vec<Vec<String>> {
    (1u32..64)
        .map(|mask| {
            (0..6)
                .filter(|i| mask & (1 << i) != 0)
                .map(|i| format!("{}{i}", prefix(kind)))
                .collect()
        })
        .collect()
}

/// Exhaustive answers over the seven symbols of `kind` (the pool plus the
/// outsider), together with a few answers of every other shape.
pub fn answer_universe(kind: Kind) -> Vec<Option<Answer>> {
    let names: Vec<String> = (0..7).map(|i| format!("{}{i}", prefix(kind))).collect();
    let mut out = vec![None];
    match kind {
        Kind::Bool => {
            // each symbol absent, Yes or No
            for code in 0..3usize.pow(7) {
                let mut m = BTreeMap::new();
                let mut c = code;
                for n in &names {
                    match c % 3 {
                        1 => {
                            m.insert(n.clone(), Toggle::Yes);
                        }
                        2 => {
                            m.insert(n.clone(), Toggle::No);
                        }
                        _ => {}
                    }
                    c /= 3;
                }
                out.push(Some(Answer::Bool(m)));
            }
        }
        Kind::Menu => {
            for mask in 0u32..128 {
                out.push(Some(Answer::menu(
                    (0..7).filter(|i| mask & (1 << i) != 0).map(|i| names[i].clone()),
                )));
            }
        }
        Kind::Choice => {
            for n in &names {
                out.push(Some(Answer::Choice(n.clone())));
            }
            out.push(Some(Answer::Choice(String::new())));
            out.push(Some(Answer::menu([names[0].clone()])));
            out.push(Some(Answer::menu([names[0].clone(), names[1].clone()])));
        }
        Kind::Value => {
            // each symbol absent, in its domain, or just outside it
            for code in 0..3usize.pow(7) {
                let mut m = BTreeMap::new();
                let mut c = code;
                for (i, n) in names.iter().enumerate() {
                    let (inside, outside) = if i % 2 == 0 {
                        (Literal::Int(512), Literal::Int(2048))
                    } else {
                        (Literal::text("auto"), Literal::Int(300))
                    };
                    match c % 3 {
                        1 => {
                            m.insert(n.clone(), inside);
                        }
                        2 => {
                            m.insert(n.clone(), outside);
                        }
                        _ => {}
                    }
                    c /= 3;
                }
                out.push(Some(Answer::Value(m)));
            }
        }
    }
    // wrong shapes
    out.push(Some(Answer::bool1(&names[0], Toggle::Yes)));
    out.push(Some(Answer::Choice(names[0].clone())));
    out.push(Some(Answer::menu([names[0].clone()])));
    out.push(Some(Answer::value1(&names[0], 1)));
    out
}

// ---------------------------------------------------------------------------
// Format corpus: emissions whose validity is fixed by how they are built.

pub struct FormatCase {
    pub text: String,
    pub valid: bool,
    pub note: &'static str,
}

fn block(tag: &str, body: &str) -> String {
    format!("<{tag}>{body}</{tag}>")
}

const BODIES: [&str; 6] = [
    "enable SMP for throughput",
    "a < b and c > d",
    "",
    "  spaced  ",
    "multi\nline\nreasoning",
    "uses <br> and </p> markup",
];

const SEPARATORS: [&str; 4] = ["", " ", "\n", "\n\n  "];

/// 100 well-formed emissions followed by 100 deliberately broken ones.
pub fn format_corpus() -> Vec<FormatCase> {
    let mut cases = Vec::with_capacity(200);
    for i in 0..100 {
        let think = block("think", BODIES[i % BODIES.len()]);
        let answer = block("answer", ["{\"CONFIG_SMP\":\"Yes\"}", "[\"A\",\"B\"]", "\"A\"", " x "][i % 4]);
        let tools: Vec<String> = (0..i % 4)
            .map(|k| block("tool_call", ["CONFIG_SMP", "CONFIG_HZ help", "", "q<1"][k]))
            .collect();
        let s = SEPARATORS[i % SEPARATORS.len()];
        let mut parts = vec![think];
        parts.extend(tools);
        parts.push(answer);
        let text = format!("{s}{}{s}", parts.join(s));
        cases.push(FormatCase {
            text,
            valid: true,
            note: "well formed",
        });
    }
    let mutations: [(&str, fn(&str, &str, &str) -> String); 20] = [
        ("empty", |_, _, _| String::new()),
        ("whitespace only", |_, _, _| "  \n ".into()),
        ("missing answer close", |t, q, a| format!("{t}{q}<answer>{a}")),
        ("missing answer open", |t, q, a| format!("{t}{q}{a}</answer>")),
        ("missing think close", |t, q, _| format!("<think>{t}{q}")),
        ("missing think open", |t, q, a| format!("reasoning</think>{q}<answer>{a}</answer>{t}")),
        ("answer before think", |t, _, a| format!("<answer>{a}</answer>{t}")),
        ("duplicate think", |t, q, a| format!("{t}{t}{q}<answer>{a}</answer>")),
        ("duplicate answer", |t, q, a| format!("{t}{q}<answer>{a}</answer><answer>{a}</answer>")),
        ("no think", |_, q, a| format!("{q}<answer>{a}</answer>")),
        ("no answer", |t, q, _| format!("{t}{q}")),
        ("tool call before think", |t, _, a| format!("<tool_call>kb</tool_call>{t}<answer>{a}</answer>")),
        ("tool call after answer", |t, _, a| format!("{t}<answer>{a}</answer><tool_call>kb</tool_call>")),
        ("prefix text", |t, q, a| format!("Sure. {t}{q}<answer>{a}</answer>")),
        ("suffix text", |t, q, a| format!("{t}{q}<answer>{a}</answer> done")),
        ("text between blocks", |t, q, a| format!("{t} so {q}<answer>{a}</answer>")),
        ("nested tag", |_, q, a| format!("<think>x<answer>{a}</answer></think>{q}<answer>{a}</answer>")),
        ("unclosed tool call", |t, _, a| format!("{t}<tool_call>kb<answer>{a}</answer>")),
        ("uppercase tags", |_, _, a| format!("<THINK>x</THINK><ANSWER>{a}</ANSWER>")),
        ("closing tags swapped", |_, _, a| format!("<think>x</answer><answer>{a}</think>")),
    ];
    for i in 0..100 {
        let (note, f) = mutations[i % mutations.len()];
        let think = block("think", BODIES[i % BODIES.len()]);
        let tool = if i % 3 == 0 {
            block("tool_call", "CONFIG_SMP")
        } else {
            String::new()
        };
        let answer = ["{\"CONFIG_SMP\":\"No\"}", "\"B\"", "[\"A\"]"][i % 3];
        cases.push(FormatCase {
            text: f(&think, &tool, answer),
            valid: false,
            note,
        });
    }
    cases
}

// ---------------------------------------------------------------------------
// Finite differences.

pub const FD_STEP: f64 = 1e-5;

/// Central-difference gradient of `f` at `x`.
pub fn central_diff(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + FD_STEP;
            let up = f(&probe);
            probe[i] = x[i] - FD_STEP;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

/// Largest componentwise relative error, with an absolute floor for
/// components that are zero on both sides.
pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

/// Random parameters with a perturbed snapshot and a trajectory of G-sized
/// groups whose ratios stay clear of the clip boundary.
pub fn random_batch(r: &mut ChaCha8Rng, clip_eps: f64) -> (PolicyParams, Trajectory) {
    let groups = r.gen_range(1..4);
    let sizes: Vec<usize> = (0..groups).map(|_| r.gen_range(2..7)).collect();
    let dim: usize = sizes.iter().sum();
    let theta: Vec<f64> = (0..dim).map(|_| r.gen_range(-2.0..2.0)).collect();
    let snapshot: Vec<f64> = theta.iter().map(|t| t + r.gen_range(-0.3..0.3)).collect();
    let mut params = PolicyParams::from_theta(&sizes, theta).unwrap();
    params.snapshot = Some(snapshot.clone());
    let old = PolicyParams::from_theta(&sizes, snapshot).unwrap();
    let g = r.gen_range(2..9);
    let mut records = Vec::new();
    for _ in 0..r.gen_range(1..4) {
        let group = r.gen_range(0..groups);
        let p_old = old.action_probs(group).unwrap().probs;
        let p_new = params.action_probs(group).unwrap().probs;
        for _ in 0..g {
            let index = loop {
                let i = r.gen_range(0..sizes[group]);
                let ratio = p_new[i] / p_old[i];
                if (ratio - (1.0 + clip_eps)).abs() > 1e-3 && (ratio - (1.0 - clip_eps)).abs() > 1e-3 {
                    break i;
                }
            };
            records.push(ActionRecord {
                group,
                index,
                prob_old: p_old[index],
                reward: 0.0,
                advantage: r.gen_range(-2.0..2.0),
            });
        }
    }
    (
        params,
        Trajectory {
            group_size: g,
            records,
            path: Vec::new(),
        },
    )
}
