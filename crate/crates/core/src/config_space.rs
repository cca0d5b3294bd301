//! Kernel configuration space: symbols, value domains, conjunctive
//! dependencies and the four typed group shapes that make up the action space.
//!
//! Dependency semantics follow Kconfig's fallback rule: a symbol's
//! requirements bind only while the symbol holds a non-default value. A
//! symbol left at its default never violates anything, so the all-default
//! assignment is always dependency-valid.
//!
//! Choice and Menu symbols carry an ordered option list. The first option is
//! the deselected (default) state and the last option is the state a symbol
//! takes when a group answer selects it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;
use thiserror::Error;

/// A configuration value: either an integer or a text literal.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Literal {
    Int(i64),
    Text(String),
}

impl Literal {
    pub fn text(s: impl Into<String>) -> Self {
        Literal::Text(s.into())
    }

    pub fn yes() -> Self {
        Literal::text("Yes")
    }

    pub fn no() -> Self {
        Literal::text("No")
    }

    pub(crate) fn from_json(v: &Json) -> Option<Literal> {
        match v {
            Json::String(s) => Some(Literal::Text(s.clone())),
            Json::Number(n) => n.as_i64().map(Literal::Int),
            _ => None,
        }
    }

    pub fn to_json(&self) -> Json {
        match self {
            Literal::Int(i) => Json::from(*i),
            Literal::Text(s) => Json::from(s.as_str()),
        }
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Int(i) => write!(f, "{i}"),
            Literal::Text(s) => write!(f, "{s:?}"),
        }
    }
}

impl From<i64> for Literal {
    fn from(v: i64) -> Self {
        Literal::Int(v)
    }
}

impl From<&str> for Literal {
    fn from(v: &str) -> Self {
        Literal::text(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Kind {
    Bool,
    Choice,
    Menu,
    Value,
}

impl Kind {
    pub const ALL: [Kind; 4] = [Kind::Bool, Kind::Choice, Kind::Menu, Kind::Value];

    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Bool => "Bool",
            Kind::Choice => "Choice",
            Kind::Menu => "Menu",
            Kind::Value => "Value",
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Value domain of a symbol.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Domain {
    /// Exactly `{"Yes", "No"}`.
    Bool,
    /// Ordered option list of a Choice or Menu symbol.
    Options(Vec<String>),
    /// Inclusive integer range.
    Range { lo: i64, hi: i64 },
    /// Finite literal set.
    Set(Vec<Literal>),
}

impl Domain {
    pub fn contains(&self, v: &Literal) -> bool {
        match (self, v) {
            (Domain::Bool, Literal::Text(s)) => s == "Yes" || s == "No",
            (Domain::Options(opts), Literal::Text(s)) => opts.iter().any(|o| o == s),
            (Domain::Range { lo, hi }, Literal::Int(i)) => lo <= i && i <= hi,
            (Domain::Set(items), v) => items.contains(v),
            _ => false,
        }
    }

    /// The conservative default used for reset and dependency fallback.
    pub fn default_value(&self) -> Literal {
        match self {
            Domain::Bool => Literal::no(),
            Domain::Options(opts) => Literal::Text(opts[0].clone()),
            Domain::Range { lo, .. } => Literal::Int(*lo),
            Domain::Set(items) => items[0].clone(),
        }
    }

    /// Value a Choice/Menu symbol takes when selected.
    pub fn selected_value(&self) -> Literal {
        match self {
            Domain::Options(opts) => Literal::Text(opts[opts.len() - 1].clone()),
            Domain::Bool => Literal::yes(),
            other => other.default_value(),
        }
    }

    /// Finite, ordered sample of the domain used to enumerate answers.
    /// Ranges contribute their endpoints and midpoint.
    pub fn canonical_values(&self) -> Vec<Literal> {
        match self {
            Domain::Bool => vec![Literal::yes(), Literal::no()],
            Domain::Options(opts) => opts.iter().cloned().map(Literal::Text).collect(),
            Domain::Range { lo, hi } => {
                let mid = lo + (hi - lo) / 2;
                let mut out = vec![Literal::Int(*lo)];
                for v in [mid, *hi] {
                    if !out.contains(&Literal::Int(v)) {
                        out.push(Literal::Int(v));
                    }
                }
                out
            }
            Domain::Set(items) => items.clone(),
        }
    }

    fn to_json(&self) -> Json {
        match self {
            Domain::Bool => serde_json::json!(["Yes", "No"]),
            Domain::Options(opts) => serde_json::json!(opts),
            Domain::Range { lo, hi } => serde_json::json!({ "range": [lo, hi] }),
            Domain::Set(items) => {
                serde_json::json!({ "set": items.iter().map(Literal::to_json).collect::<Vec<_>>() })
            }
        }
    }
}

/// One conjunctive `(symbol, value)` dependency.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Requirement {
    pub symbol: String,
    pub value: Literal,
}

impl fmt::Display for Requirement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}={}", self.symbol, self.value)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigSymbol {
    pub name: String,
    pub kind: Kind,
    pub domain: Domain,
    pub depends_on: Vec<Requirement>,
    pub help: Option<String>,
}

impl ConfigSymbol {
    pub fn bool(name: &str) -> Self {
        ConfigSymbol {
            name: name.to_string(),
            kind: Kind::Bool,
            domain: Domain::Bool,
            depends_on: Vec::new(),
            help: None,
        }
    }

    pub fn with_domain(name: &str, kind: Kind, domain: Domain) -> Self {
        ConfigSymbol {
            name: name.to_string(),
            kind,
            domain,
            depends_on: Vec::new(),
            help: None,
        }
    }

    pub fn depends(mut self, symbol: &str, value: impl Into<Literal>) -> Self {
        self.depends_on.push(Requirement {
            symbol: symbol.to_string(),
            value: value.into(),
        });
        self
    }

    /// Serialize as one JSONL record.
    pub fn to_record(&self) -> String {
        let mut obj = serde_json::Map::new();
        obj.insert("name".into(), Json::from(self.name.as_str()));
        obj.insert("kind".into(), Json::from(self.kind.as_str()));
        obj.insert("domain".into(), self.domain.to_json());
        obj.insert(
            "depends_on".into(),
            Json::Array(
                self.depends_on
                    .iter()
                    .map(|r| serde_json::json!({ "symbol": r.symbol, "value": r.value.to_json() }))
                    .collect(),
            ),
        );
        if let Some(help) = &self.help {
            obj.insert("help".into(), Json::from(help.as_str()));
        }
        Json::Object(obj).to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SpaceError {
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: duplicate symbol `{name}` (first defined on line {first})")]
    DuplicateSymbol {
        line: usize,
        first: usize,
        name: String,
    },
    #[error("line {line}: symbol `{name}`: {reason}")]
    Domain {
        line: usize,
        name: String,
        reason: String,
    },
    #[error("line {line}: symbol `{symbol}` depends on unknown symbol `{target}`")]
    UnknownDependency {
        line: usize,
        symbol: String,
        target: String,
    },
    #[error("line {line}: symbol `{symbol}` requires {requirement}, outside the target's domain")]
    RequirementOutOfDomain {
        line: usize,
        symbol: String,
        requirement: Requirement,
    },
    #[error("dependency cycle among {}", .0.join(", "))]
    Cycle(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AssignmentError {
    #[error("unknown symbol `{0}`")]
    UnknownSymbol(String),
    #[error("value {value} outside the domain of `{symbol}`")]
    OutOfDomain { symbol: String, value: Literal },
}

/// Validated set of symbols with an acyclic dependency graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigSpace {
    symbols: BTreeMap<String, ConfigSymbol>,
    topo: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SymbolRecord {
    name: String,
    kind: Kind,
    #[serde(default)]
    domain: Option<Json>,
    #[serde(default)]
    depends_on: Vec<RequirementRecord>,
    #[serde(default)]
    help: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RequirementRecord {
    symbol: String,
    value: Json,
}

fn parse_domain(kind: Kind, raw: Option<&Json>) -> Result<Domain, String> {
    match kind {
        Kind::Bool => match raw {
            None | Some(Json::Null) => Ok(Domain::Bool),
            Some(Json::Array(items)) => {
                let set: BTreeSet<&str> = items.iter().filter_map(Json::as_str).collect();
                if items.len() == 2 && set == BTreeSet::from(["No", "Yes"]) {
                    Ok(Domain::Bool)
                } else {
                    Err("Bool domain must be exactly [\"Yes\", \"No\"]".into())
                }
            }
            Some(_) => Err("Bool domain must be exactly [\"Yes\", \"No\"]".into()),
        },
        Kind::Choice | Kind::Menu => {
            let items = raw
                .and_then(Json::as_array)
                .ok_or_else(|| format!("{kind} domain must be an option list"))?;
            let mut opts = Vec::with_capacity(items.len());
            for item in items {
                let s = item
                    .as_str()
                    .ok_or_else(|| format!("{kind} options must be strings"))?;
                if opts.iter().any(|o| o == s) {
                    return Err(format!("duplicate option {s:?}"));
                }
                opts.push(s.to_string());
            }
            if opts.is_empty() {
                return Err(format!("{kind} domain has no options"));
            }
            Ok(Domain::Options(opts))
        }
        Kind::Value => {
            let obj = raw
                .and_then(Json::as_object)
                .ok_or("Value domain must be {\"range\":[lo,hi]} or {\"set\":[...]}")?;
            if obj.len() != 1 {
                return Err("Value domain must have exactly one of `range`, `set`".into());
            }
            if let Some(range) = obj.get("range") {
                let bounds: Vec<i64> = range
                    .as_array()
                    .map(|a| a.iter().filter_map(Json::as_i64).collect())
                    .unwrap_or_default();
                match bounds.as_slice() {
                    [lo, hi] if range.as_array().map(Vec::len) == Some(2) => {
                        if lo > hi {
                            Err(format!("empty range [{lo}, {hi}]"))
                        } else {
                            Ok(Domain::Range { lo: *lo, hi: *hi })
                        }
                    }
                    _ => Err("range must be two integers".into()),
                }
            } else if let Some(set) = obj.get("set") {
                let items = set.as_array().ok_or("set must be a list")?;
                let mut lits = Vec::with_capacity(items.len());
                for item in items {
                    let lit = Literal::from_json(item)
                        .ok_or("set items must be integers or strings")?;
                    if lits.contains(&lit) {
                        return Err(format!("duplicate literal {lit}"));
                    }
                    lits.push(lit);
                }
                if lits.is_empty() {
                    return Err("empty literal set".into());
                }
                Ok(Domain::Set(lits))
            } else {
                Err("Value domain must have `range` or `set`".into())
            }
        }
    }
}

fn check_symbol(sym: &ConfigSymbol) -> Result<(), String> {
    if sym.name.trim().is_empty() {
        return Err("empty symbol name".into());
    }
    let ok = matches!(
        (sym.kind, &sym.domain),
        (Kind::Bool, Domain::Bool)
            | (Kind::Choice | Kind::Menu, Domain::Options(_))
            | (Kind::Value, Domain::Range { .. } | Domain::Set(_))
    );
    if !ok {
        return Err(format!("domain does not fit kind {}", sym.kind));
    }
    match &sym.domain {
        Domain::Options(o) if o.is_empty() => Err("no options".into()),
        Domain::Set(s) if s.is_empty() => Err("empty literal set".into()),
        Domain::Range { lo, hi } if lo > hi => Err(format!("empty range [{lo}, {hi}]")),
        _ => Ok(()),
    }
}

impl ConfigSpace {
    /// Parse the symbol JSONL format. Blank lines and `#` comments are skipped.
    pub fn load(source: &str) -> Result<Self, SpaceError> {
        let mut entries: Vec<(usize, ConfigSymbol)> = Vec::new();
        for (idx, raw) in source.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let rec: SymbolRecord =
                serde_json::from_str(trimmed).map_err(|e| SpaceError::Malformed {
                    line,
                    message: e.to_string(),
                })?;
            let domain =
                parse_domain(rec.kind, rec.domain.as_ref()).map_err(|reason| SpaceError::Domain {
                    line,
                    name: rec.name.clone(),
                    reason,
                })?;
            let mut depends_on = Vec::with_capacity(rec.depends_on.len());
            for r in rec.depends_on {
                let value = Literal::from_json(&r.value).ok_or_else(|| SpaceError::Malformed {
                    line,
                    message: format!("requirement value for `{}` must be an integer or string", r.symbol),
                })?;
                depends_on.push(Requirement {
                    symbol: r.symbol,
                    value,
                });
            }
            entries.push((
                line,
                ConfigSymbol {
                    name: rec.name,
                    kind: rec.kind,
                    domain,
                    depends_on,
                    help: rec.help,
                },
            ));
        }
        Self::build(entries)
    }

    /// Build from already-typed symbols; positions stand in for line numbers.
    pub fn from_symbols(symbols: Vec<ConfigSymbol>) -> Result<Self, SpaceError> {
        Self::build(symbols.into_iter().enumerate().map(|(i, s)| (i + 1, s)).collect())
    }

    fn build(entries: Vec<(usize, ConfigSymbol)>) -> Result<Self, SpaceError> {
        let mut lines: BTreeMap<String, usize> = BTreeMap::new();
        let mut symbols = BTreeMap::new();
        for (line, sym) in &entries {
            check_symbol(sym).map_err(|reason| SpaceError::Domain {
                line: *line,
                name: sym.name.clone(),
                reason,
            })?;
            if let Some(first) = lines.get(&sym.name) {
                return Err(SpaceError::DuplicateSymbol {
                    line: *line,
                    first: *first,
                    name: sym.name.clone(),
                });
            }
            lines.insert(sym.name.clone(), *line);
            symbols.insert(sym.name.clone(), sym.clone());
        }
        for (line, sym) in &entries {
            for req in &sym.depends_on {
                let Some(target) = symbols.get(&req.symbol) else {
                    return Err(SpaceError::UnknownDependency {
                        line: *line,
                        symbol: sym.name.clone(),
                        target: req.symbol.clone(),
                    });
                };
                if !target.domain.contains(&req.value) {
                    return Err(SpaceError::RequirementOutOfDomain {
                        line: *line,
                        symbol: sym.name.clone(),
                        requirement: req.clone(),
                    });
                }
            }
        }
        let topo = topological_order(&symbols)?;
        Ok(ConfigSpace { symbols, topo })
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&ConfigSymbol> {
        self.symbols.get(name)
    }

    /// Symbols in name order.
    pub fn symbols(&self) -> impl Iterator<Item = &ConfigSymbol> {
        self.symbols.values()
    }

    /// Parents before children, ties broken by name.
    pub fn topological_order(&self) -> &[String] {
        &self.topo
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for name in &self.topo {
            out.push_str(&self.symbols[name].to_record());
            out.push('\n');
        }
        out
    }

    /// Every symbol at its domain default.
    pub fn default_assignment(&self) -> Assignment {
        Assignment {
            values: self
                .symbols
                .values()
                .map(|s| (s.name.clone(), s.domain.default_value()))
                .collect(),
        }
    }
}

/// Kahn's algorithm with a name-ordered ready set.
fn topological_order(symbols: &BTreeMap<String, ConfigSymbol>) -> Result<Vec<String>, SpaceError> {
    let mut indegree: BTreeMap<&str, usize> = symbols.keys().map(|k| (k.as_str(), 0)).collect();
    let mut children: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for sym in symbols.values() {
        let parents: BTreeSet<&str> = sym.depends_on.iter().map(|r| r.symbol.as_str()).collect();
        for p in parents {
            children.entry(p).or_default().insert(sym.name.as_str());
            *indegree.get_mut(sym.name.as_str()).expect("known symbol") += 1;
        }
    }
    let mut ready: BTreeSet<&str> = indegree
        .iter()
        .filter(|(_, d)| **d == 0)
        .map(|(k, _)| *k)
        .collect();
    let mut order = Vec::with_capacity(symbols.len());
    while let Some(next) = ready.pop_first() {
        order.push(next.to_string());
        if let Some(kids) = children.get(next) {
            for kid in kids {
                let d = indegree.get_mut(kid).expect("known symbol");
                *d -= 1;
                if *d == 0 {
                    ready.insert(kid);
                }
            }
        }
    }
    if order.len() == symbols.len() {
        return Ok(order);
    }
    let placed: BTreeSet<&str> = order.iter().map(String::as_str).collect();
    let stuck: BTreeSet<&str> = symbols
        .keys()
        .map(String::as_str)
        .filter(|k| !placed.contains(k))
        .collect();
    Err(SpaceError::Cycle(find_cycle(symbols, &stuck)))
}

/// Walk parent edges inside the unsorted remainder until a node repeats.
fn find_cycle(symbols: &BTreeMap<String, ConfigSymbol>, stuck: &BTreeSet<&str>) -> Vec<String> {
    let start = *stuck.iter().next().expect("non-empty remainder");
    let mut path: Vec<&str> = vec![start];
    let mut current = start;
    loop {
        let next = symbols[current]
            .depends_on
            .iter()
            .map(|r| r.symbol.as_str())
            .filter(|p| stuck.contains(p))
            .min()
            .expect("every stuck node has a stuck parent");
        if let Some(pos) = path.iter().position(|p| *p == next) {
            let mut cycle: Vec<String> = path[pos..].iter().map(|s| s.to_string()).collect();
            cycle.sort();
            return cycle;
        }
        path.push(next);
        current = next;
    }
}

/// `Yes`/`No` as used in Bool answers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Toggle {
    Yes,
    No,
}

impl Toggle {
    pub fn as_str(self) -> &'static str {
        match self {
            Toggle::Yes => "Yes",
            Toggle::No => "No",
        }
    }

    pub fn literal(self) -> Literal {
        Literal::text(self.as_str())
    }
}

/// Typed answer; the shape depends on the group type.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Answer {
    Bool(BTreeMap<String, Toggle>),
    Menu(BTreeSet<String>),
    Choice(String),
    Value(BTreeMap<String, Literal>),
}

impl Answer {
    pub fn kind(&self) -> Kind {
        match self {
            Answer::Bool(_) => Kind::Bool,
            Answer::Menu(_) => Kind::Menu,
            Answer::Choice(_) => Kind::Choice,
            Answer::Value(_) => Kind::Value,
        }
    }

    pub fn bool1(symbol: &str, v: Toggle) -> Self {
        Answer::Bool(BTreeMap::from([(symbol.to_string(), v)]))
    }

    pub fn value1(symbol: &str, v: impl Into<Literal>) -> Self {
        Answer::Value(BTreeMap::from([(symbol.to_string(), v.into())]))
    }

    pub fn menu<I, S>(items: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Answer::Menu(items.into_iter().map(Into::into).collect())
    }

    pub fn to_json(&self) -> Json {
        match self {
            Answer::Bool(m) => Json::Object(
                m.iter()
                    .map(|(k, v)| (k.clone(), Json::from(v.as_str())))
                    .collect(),
            ),
            Answer::Menu(s) => Json::Array(s.iter().map(|x| Json::from(x.as_str())).collect()),
            Answer::Choice(c) => Json::from(c.as_str()),
            Answer::Value(m) => {
                Json::Object(m.iter().map(|(k, v)| (k.clone(), v.to_json())).collect())
            }
        }
    }

    /// Decode the JSON shape prescribed by `kind`.
    pub fn from_json(kind: Kind, v: &Json) -> Result<Answer, Violation> {
        let mismatch = |what: &str| Violation::AnswerShape {
            expected: kind,
            found: what.to_string(),
        };
        match kind {
            Kind::Bool => {
                let obj = v.as_object().ok_or_else(|| mismatch(json_kind(v)))?;
                let mut out = BTreeMap::new();
                for (k, val) in obj {
                    let t = match val.as_str() {
                        Some("Yes") => Toggle::Yes,
                        Some("No") => Toggle::No,
                        _ => {
                            return Err(Violation::NotYesNo {
                                symbol: k.clone(),
                                found: val.to_string(),
                            })
                        }
                    };
                    out.insert(k.clone(), t);
                }
                Ok(Answer::Bool(out))
            }
            Kind::Menu => {
                let arr = v.as_array().ok_or_else(|| mismatch(json_kind(v)))?;
                let mut out = BTreeSet::new();
                for item in arr {
                    let s = item.as_str().ok_or_else(|| mismatch("non-string item"))?;
                    if !out.insert(s.to_string()) {
                        return Err(Violation::DuplicateSelection(s.to_string()));
                    }
                }
                Ok(Answer::Menu(out))
            }
            Kind::Choice => match v {
                Json::String(s) => Ok(Answer::Choice(s.clone())),
                Json::Array(items) if items.len() == 1 && items[0].is_string() => {
                    Ok(Answer::Choice(items[0].as_str().unwrap_or_default().to_string()))
                }
                Json::Array(items) => Err(Violation::ChoiceArity(items.len())),
                other => Err(mismatch(json_kind(other))),
            },
            Kind::Value => {
                let obj = v.as_object().ok_or_else(|| mismatch(json_kind(v)))?;
                let mut out = BTreeMap::new();
                for (k, val) in obj {
                    let lit = Literal::from_json(val).ok_or_else(|| mismatch("non-literal value"))?;
                    out.insert(k.clone(), lit);
                }
                Ok(Answer::Value(out))
            }
        }
    }
}

fn json_kind(v: &Json) -> &'static str {
    match v {
        Json::Null => "null",
        Json::Bool(_) => "boolean",
        Json::Number(_) => "number",
        Json::String(_) => "string",
        Json::Array(_) => "list",
        Json::Object(_) => "object",
    }
}

/// A single schema violation. Violations are data, not failures.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Violation {
    #[error("candidate list is empty")]
    EmptyCandidate,
    #[error("candidate `{0}` listed twice")]
    DuplicateCandidate(String),
    #[error("candidate `{0}` is not a known symbol")]
    UnknownCandidate(String),
    #[error("candidate `{symbol}` has kind {kind}, incompatible with a {group_type} group")]
    KindMismatch {
        symbol: String,
        kind: Kind,
        group_type: Kind,
    },
    #[error("{expected} answer has the wrong shape ({found})")]
    AnswerShape { expected: Kind, found: String },
    #[error("Choice requires exactly one option, got {0}")]
    ChoiceArity(usize),
    #[error("answer `{0}` is not a candidate")]
    NotACandidate(String),
    #[error("answer ⊄ candidate: `{0}` is not a candidate")]
    NotSubset(String),
    #[error("Menu answer selects nothing")]
    EmptySelection,
    #[error("`{0}` selected twice")]
    DuplicateSelection(String),
    #[error("`{symbol}` must be \"Yes\" or \"No\", got {found}")]
    NotYesNo { symbol: String, found: String },
    #[error("candidate `{0}` has no assigned value")]
    Unassigned(String),
    #[error("value {value} outside the domain of `{symbol}`")]
    OutOfDomain { symbol: String, value: Literal },
}

/// One training sample: typed group of candidate symbols with its expected answer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigGroup {
    pub group_type: Kind,
    /// Sorted, duplicate-free.
    pub candidate: Vec<String>,
    pub question: String,
    pub answer: Answer,
}

/// A group without question or answer, as produced by dependency batching.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GroupSkeleton {
    pub group_type: Kind,
    pub candidate: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return f.write_str("ok");
        }
        let msgs: Vec<String> = self.violations.iter().map(ToString::to_string).collect();
        f.write_str(&msgs.join("; "))
    }
}

/// Check an answer against a group's type, candidates and symbol domains.
/// Empty iff the answer is a valid modification for that group.
pub fn answer_violations(
    space: &ConfigSpace,
    group_type: Kind,
    candidate: &[String],
    answer: &Answer,
) -> Vec<Violation> {
    let mut out = Vec::new();
    let is_candidate = |s: &str| candidate.iter().any(|c| c == s);
    match (group_type, answer) {
        (Kind::Bool, Answer::Bool(map)) => {
            for k in map.keys().filter(|k| !is_candidate(k)) {
                out.push(Violation::NotACandidate(k.clone()));
            }
            for c in candidate.iter().filter(|c| !map.contains_key(*c)) {
                out.push(Violation::Unassigned(c.clone()));
            }
        }
        (Kind::Menu, Answer::Menu(sel)) => {
            if sel.is_empty() {
                out.push(Violation::EmptySelection);
            }
            for s in sel.iter().filter(|s| !is_candidate(s)) {
                out.push(Violation::NotSubset(s.clone()));
            }
        }
        (Kind::Choice, Answer::Choice(c)) => {
            if !is_candidate(c) {
                out.push(Violation::NotACandidate(c.clone()));
            }
        }
        (Kind::Choice, Answer::Menu(sel)) if sel.len() != 1 => {
            out.push(Violation::ChoiceArity(sel.len()));
        }
        (Kind::Value, Answer::Value(map)) => {
            for (k, v) in map {
                if !is_candidate(k) {
                    out.push(Violation::NotACandidate(k.clone()));
                } else if let Some(sym) = space.get(k) {
                    if !sym.domain.contains(v) {
                        out.push(Violation::OutOfDomain {
                            symbol: k.clone(),
                            value: v.clone(),
                        });
                    }
                } else {
                    out.push(Violation::UnknownCandidate(k.clone()));
                }
            }
            for c in candidate.iter().filter(|c| !map.contains_key(*c)) {
                out.push(Violation::Unassigned(c.clone()));
            }
        }
        (expected, other) => out.push(Violation::AnswerShape {
            expected,
            found: format!("{} answer", other.kind()),
        }),
    }
    out
}

fn candidate_violations(space: &ConfigSpace, group_type: Kind, candidate: &[String]) -> Vec<Violation> {
    let mut out = Vec::new();
    if candidate.is_empty() {
        out.push(Violation::EmptyCandidate);
    }
    let mut seen = BTreeSet::new();
    for c in candidate {
        if !seen.insert(c) {
            out.push(Violation::DuplicateCandidate(c.clone()));
            continue;
        }
        match space.get(c) {
            None => out.push(Violation::UnknownCandidate(c.clone())),
            Some(sym) if sym.kind != group_type => out.push(Violation::KindMismatch {
                symbol: c.clone(),
                kind: sym.kind,
                group_type,
            }),
            Some(_) => {}
        }
    }
    out
}

/// Check every group invariant against `space`.
pub fn validate_group(space: &ConfigSpace, group: &ConfigGroup) -> ValidationReport {
    let mut violations = candidate_violations(space, group.group_type, &group.candidate);
    violations.extend(answer_violations(
        space,
        group.group_type,
        &group.candidate,
        &group.answer,
    ));
    ValidationReport { violations }
}

/// A concrete value per symbol. Unassigned symbols read as their default.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Assignment {
    pub values: BTreeMap<String, Literal>,
}

impl Assignment {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, symbol: &str, value: impl Into<Literal>) -> Self {
        self.values.insert(symbol.to_string(), value.into());
        self
    }

    pub fn get(&self, symbol: &str) -> Option<&Literal> {
        self.values.get(symbol)
    }

    pub fn set(&mut self, symbol: &str, value: Literal) {
        self.values.insert(symbol.to_string(), value);
    }

    /// Assigned value, or the domain default when unassigned.
    pub fn effective(&self, sym: &ConfigSymbol) -> Literal {
        self.values
            .get(&sym.name)
            .cloned()
            .unwrap_or_else(|| sym.domain.default_value())
    }

    pub fn check_domains(&self, space: &ConfigSpace) -> Result<(), AssignmentError> {
        for (name, value) in &self.values {
            let sym = space
                .get(name)
                .ok_or_else(|| AssignmentError::UnknownSymbol(name.clone()))?;
            if !sym.domain.contains(value) {
                return Err(AssignmentError::OutOfDomain {
                    symbol: name.clone(),
                    value: value.clone(),
                });
            }
        }
        Ok(())
    }

    /// Apply a group answer, returning the symbols whose value changed.
    /// The answer must already be valid for the group.
    pub fn apply(&mut self, space: &ConfigSpace, group_candidates: &[String], answer: &Answer) -> Vec<String> {
        let mut updates: Vec<(String, Literal)> = Vec::new();
        match answer {
            Answer::Bool(map) => {
                updates.extend(map.iter().map(|(k, v)| (k.clone(), v.literal())));
            }
            Answer::Value(map) => updates.extend(map.iter().map(|(k, v)| (k.clone(), v.clone()))),
            Answer::Choice(sel) => {
                for c in group_candidates {
                    if let Some(sym) = space.get(c) {
                        let v = if c == sel {
                            sym.domain.selected_value()
                        } else {
                            sym.domain.default_value()
                        };
                        updates.push((c.clone(), v));
                    }
                }
            }
            Answer::Menu(sel) => {
                for c in group_candidates {
                    if let Some(sym) = space.get(c) {
                        let v = if sel.contains(c) {
                            sym.domain.selected_value()
                        } else {
                            sym.domain.default_value()
                        };
                        updates.push((c.clone(), v));
                    }
                }
            }
        }
        let mut changed = Vec::new();
        for (k, v) in updates {
            let before = space.get(&k).map(|s| self.effective(s));
            if before.as_ref() != Some(&v) {
                changed.push(k.clone());
            }
            self.values.insert(k, v);
        }
        changed.sort();
        changed
    }
}

/// A violated dependency: `symbol` is active but `requirement` does not hold.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct DependencyViolation {
    pub symbol: String,
    pub requirement: Requirement,
}

impl fmt::Display for DependencyViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} requires {}", self.symbol, self.requirement)
    }
}

/// Violated requirements of assigned, non-default symbols, sorted by symbol name.
pub fn check_dependencies(
    space: &ConfigSpace,
    assignment: &Assignment,
) -> Result<Vec<DependencyViolation>, AssignmentError> {
    let mut out = Vec::new();
    for (name, value) in &assignment.values {
        let sym = space
            .get(name)
            .ok_or_else(|| AssignmentError::UnknownSymbol(name.clone()))?;
        if *value == sym.domain.default_value() {
            continue;
        }
        for req in &sym.depends_on {
            let parent = space.get(&req.symbol).expect("validated at load");
            if assignment.effective(parent) != req.value {
                out.push(DependencyViolation {
                    symbol: name.clone(),
                    requirement: req.clone(),
                });
            }
        }
    }
    Ok(out)
}

/// Hierarchical, dependency-based batching of symbols into group skeletons.
///
/// Symbols are partitioned by kind. Within a kind, components of the
/// undirected same-kind dependency graph are packed next-fit into groups of
/// at most `max_group_size` symbols, in order of each component's smallest
/// name. A component larger than the limit is cut into consecutive chunks of
/// its topological order, so parents land before children. A
/// `max_group_size` of zero is treated as one.
pub fn group_by_dependency(space: &ConfigSpace, max_group_size: usize) -> Vec<GroupSkeleton> {
    let cap = max_group_size.max(1);
    let rank: BTreeMap<&str, usize> = space
        .topological_order()
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();
    let mut out = Vec::new();
    for kind in Kind::ALL {
        let members: Vec<&ConfigSymbol> = space.symbols().filter(|s| s.kind == kind).collect();
        if members.is_empty() {
            continue;
        }
        // union-find over same-kind edges
        let index: BTreeMap<&str, usize> = members
            .iter()
            .enumerate()
            .map(|(i, s)| (s.name.as_str(), i))
            .collect();
        let mut parent: Vec<usize> = (0..members.len()).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for (i, sym) in members.iter().enumerate() {
            for req in &sym.depends_on {
                if let Some(&j) = index.get(req.symbol.as_str()) {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    if a != b {
                        parent[a.max(b)] = a.min(b);
                    }
                }
            }
        }
        let mut components: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
        for i in 0..members.len() {
            let root = find(&mut parent, i);
            components.entry(root).or_default().push(members[i].name.as_str());
        }
        // members are name-sorted, so the smallest root index is the smallest name
        let mut current: Vec<String> = Vec::new();
        let flush = |current: &mut Vec<String>, out: &mut Vec<GroupSkeleton>| {
            if !current.is_empty() {
                let mut candidate = std::mem::take(current);
                candidate.sort();
                out.push(GroupSkeleton {
                    group_type: kind,
                    candidate,
                });
            }
        };
        for (_, mut comp) in components {
            comp.sort_by_key(|n| rank[n]);
            if comp.len() <= cap {
                if current.len() + comp.len() > cap {
                    flush(&mut current, &mut out);
                }
                current.extend(comp.iter().map(|s| s.to_string()));
            } else {
                flush(&mut current, &mut out);
                let mut chunks = comp.chunks(cap).peekable();
                while let Some(chunk) = chunks.next() {
                    current.extend(chunk.iter().map(|s| s.to_string()));
                    if chunks.peek().is_some() {
                        flush(&mut current, &mut out);
                    }
                }
            }
            if current.len() == cap {
                flush(&mut current, &mut out);
            }
        }
        flush(&mut current, &mut out);
    }
    out
}
