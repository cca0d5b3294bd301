//! Shared fixtures for the benchmarks.

use kcfg_core::config_space::{Answer, Assignment, ConfigGroup, ConfigSpace, ConfigSymbol, Kind, Literal, Toggle};
use kcfg_core::env::SyntheticBenchmark;

/// Bool chain `S1..Sn` where each symbol depends on its predecessor being on.
pub fn chain(n: usize) -> (ConfigSpace, Vec<ConfigGroup>) {
    let names: Vec<String> = (1..=n).map(|i| format!("S{i}")).collect();
    let symbols = names
        .iter()
        .enumerate()
        .map(|(i, name)| match i {
            0 => ConfigSymbol::bool(name),
            _ => ConfigSymbol::bool(name).depends(&names[i - 1], "Yes"),
        })
        .collect();
    let groups = names
        .iter()
        .map(|name| ConfigGroup {
            group_type: Kind::Bool,
            candidate: vec![name.clone()],
            question: "raise overall throughput".into(),
            answer: Answer::bool1(name, Toggle::Yes),
        })
        .collect();
    (ConfigSpace::from_symbols(symbols).unwrap(), groups)
}

/// Benchmark whose optimum switches on the first `k` symbols of the chain.
pub fn planted(space: &ConfigSpace, k: usize, seed: u64) -> SyntheticBenchmark {
    let mut a = Assignment::new();
    for s in space.symbols().take(k) {
        a.set(&s.name, Literal::yes());
    }
    SyntheticBenchmark::with_planted(space, &a, seed, "unixbench")
}
