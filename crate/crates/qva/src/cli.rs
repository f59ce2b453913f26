//! Configuration loading, suite orchestration and report output.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use serde::Deserialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::algebra::{QMatrix, Word};
use crate::checks::{
    check_d_and_skew, check_generator_relations, check_pbw_confluence, check_relation_fidelity, check_relation_transfer,
    check_s_jacobi, check_virasoro, check_weak_assoc, measured_central_charge, sample_triples, test_states, CheckOptions,
    CheckReport, JacobiForm, SMapRelation,
};
use crate::fock::StateVector;
use crate::scalar::{CycloContext, Scalar};
use crate::vertex::{central_charge, Engine};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("malformed config: {0}")]
    Json(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl ConfigError {
    pub fn exit_code(&self) -> i32 {
        2
    }
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawScalar {
    Expr(String),
    Coords(Vec<String>),
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSuite {
    depth: Option<usize>,
    floor: Option<i64>,
    window: Option<[i64; 2]>,
    m_range: Option<[i64; 2]>,
    seed: Option<u64>,
    samples: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(rename = "N")]
    n: i64,
    r: i64,
    #[serde(rename = "M")]
    m: i64,
    #[serde(rename = "Q")]
    q: Vec<Vec<RawScalar>>,
    #[serde(default)]
    suite: RawSuite,
    /// Negative control: the checkers expect −q_ij for this (i, j).
    #[serde(default)]
    flip_relation: Option<[usize; 2]>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuiteOptions {
    pub checks: CheckOptions,
    pub m_range: (i64, i64),
    /// Sampled triples for weak associativity.
    pub samples: usize,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions {
            checks: CheckOptions::default(),
            m_range: (-3, 3),
            samples: 50,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub n: u32,
    pub r: usize,
    pub m: u32,
    /// The structure constants of the algebra and module.
    pub q: Arc<QMatrix>,
    /// The relations the checkers test against; equal to `q` unless a
    /// relation was deliberately flipped.
    pub expected: Arc<QMatrix>,
    pub options: SuiteOptions,
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

pub fn parse_config_str(text: &str) -> Result<EngineConfig, ConfigError> {
    let raw: RawConfig = serde_json::from_str(text).map_err(|e| ConfigError::Json(e.to_string()))?;
    if raw.n < 1 {
        return Err(invalid("N must be a positive integer"));
    }
    if raw.r < 1 {
        return Err(invalid("r must be a positive integer"));
    }
    if raw.m < 1 {
        return Err(invalid("M must be a positive integer"));
    }
    if raw.m % raw.n != 0 {
        return Err(invalid(format!("N = {} does not divide M = {}", raw.n, raw.m)));
    }
    let r = raw.r as usize;
    if raw.q.len() != r || raw.q.iter().any(|row| row.len() != r) {
        return Err(invalid(format!("Q must be {r}x{r}")));
    }
    let ctx = CycloContext::new(raw.m as u32);
    let mut rows = Vec::with_capacity(r);
    for (i, row) in raw.q.iter().enumerate() {
        let mut parsed = Vec::with_capacity(r);
        for (j, entry) in row.iter().enumerate() {
            let value = match entry {
                RawScalar::Expr(s) => Scalar::parse_expr(&ctx, s),
                RawScalar::Coords(c) => Scalar::from_literal(&ctx, c),
            }
            .map_err(|e| invalid(format!("q[{}][{}]: {e}", i + 1, j + 1)))?;
            parsed.push(value);
        }
        rows.push(parsed);
    }
    let q = QMatrix::new(&ctx, rows.clone()).map_err(|e| invalid(e.to_string()))?;
    let expected = match raw.flip_relation {
        None => q.clone(),
        Some([i, j]) => {
            if i == 0 || j == 0 || i > r || j > r {
                return Err(invalid(format!("flip_relation index ({i}, {j}) out of range")));
            }
            let mut flipped = rows;
            flipped[i - 1][j - 1] = -&flipped[i - 1][j - 1];
            QMatrix::new_unchecked(&ctx, flipped).map_err(|e| invalid(e.to_string()))?
        }
    };
    let mut options = SuiteOptions::default();
    let s = &raw.suite;
    if let Some(d) = s.depth {
        options.checks.depth = d;
    }
    if let Some(f) = s.floor {
        options.checks.floor = f;
    }
    if let Some([lo, hi]) = s.window {
        if lo > hi {
            return Err(invalid("window must have lo <= hi"));
        }
        options.checks.lo = lo;
        options.checks.hi = hi;
    }
    if let Some([lo, hi]) = s.m_range {
        if lo > hi {
            return Err(invalid("m_range must have lo <= hi"));
        }
        options.m_range = (lo, hi);
    }
    if let Some(seed) = s.seed {
        options.checks.seed = seed;
    }
    if let Some(n) = s.samples {
        options.samples = n;
    }
    Ok(EngineConfig {
        n: raw.n as u32,
        r,
        m: raw.m as u32,
        q: Arc::new(q),
        expected: Arc::new(expected),
        options,
    })
}

pub fn parse_config(path: &Path) -> Result<EngineConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    parse_config_str(&text)
}

/// Parses "LO..HI".
pub fn parse_range(text: &str) -> Result<(i64, i64), String> {
    let (lo, hi) = text.split_once("..").ok_or_else(|| format!("expected LO..HI, got {text:?}"))?;
    let lo: i64 = lo.trim().parse().map_err(|_| format!("bad lower bound in {text:?}"))?;
    let hi: i64 = hi.trim().parse().map_err(|_| format!("bad upper bound in {text:?}"))?;
    if lo > hi {
        return Err(format!("empty range {text:?}"));
    }
    Ok((lo, hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Untwisted,
    Twisted,
    All,
}

impl FromStr for Suite {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "untwisted" => Ok(Suite::Untwisted),
            "twisted" => Ok(Suite::Twisted),
            "all" => Ok(Suite::All),
            _ => Err(format!("unknown suite {s:?} (expected untwisted, twisted or all)")),
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Suite::Untwisted => "untwisted",
            Suite::Twisted => "twisted",
            Suite::All => "all",
        })
    }
}

#[derive(Debug, Clone)]
pub struct SuiteRun {
    pub suite: Suite,
    pub reports: Vec<CheckReport>,
}

impl SuiteRun {
    pub fn passed(&self) -> bool {
        self.reports.iter().all(|r| r.pass)
    }

    pub fn exit_code(&self) -> i32 {
        if self.passed() {
            0
        } else {
            1
        }
    }

    pub fn to_json(&self, config: &EngineConfig) -> Value {
        let failed: Vec<Value> = self.reports.iter().filter(|r| !r.pass).map(|r| r.to_json()).collect();
        json!({
            "suite": self.suite.to_string(),
            "N": config.n,
            "r": config.r,
            "M": config.m,
            "seed": config.options.checks.seed,
            "counts": {
                "checks": self.reports.len(),
                "passed": self.reports.len() - failed.len(),
                "failed": failed.len(),
            },
            "failing": failed,
            "reports": self.reports.iter().map(|r| r.to_json()).collect::<Vec<_>>(),
        })
    }
}

/// All checks for one module: V_Q itself when `n` is 1, the twisted module otherwise.
fn module_checks(config: &EngineConfig, n: u32) -> Vec<CheckReport> {
    let opts = &config.options.checks;
    let engine = Engine::new(config.q.clone(), n);
    let expected = &config.expected;
    let states = test_states(engine.module(), opts.depth, opts.floor);
    let rels = SMapRelation::generator_pairs(&engine, expected);
    let form = if n == 1 { JacobiForm::Untwisted } else { JacobiForm::Twisted };
    let triples = sample_triples(&engine, config.options.samples, 2, opts.seed);
    let vir_states = test_states(engine.module(), opts.depth.min(2), opts.floor.max(-2));
    let (m_lo, m_hi) = config.options.m_range;
    vec![
        check_generator_relations(&engine, expected, opts),
        check_d_and_skew(&engine, expected, opts),
        check_s_jacobi(&engine, &rels, &states, form, opts),
        check_weak_assoc(&engine, &triples, 0, opts),
        check_virasoro(&engine, &central_charge(expected), m_lo, m_hi, &vir_states),
        check_relation_transfer(&engine, &rels, &states, opts),
        check_pbw_confluence(expected, n as i64, 300, 8, opts.seed),
        check_relation_fidelity(engine.module(), expected, 200, opts.seed),
    ]
}

pub fn run_suite(config: &EngineConfig, suite: Suite, mut emit: impl FnMut(&CheckReport)) -> SuiteRun {
    let mut reports = Vec::new();
    let mut twists = Vec::new();
    if matches!(suite, Suite::Untwisted | Suite::All) {
        twists.push(1);
    }
    if matches!(suite, Suite::Twisted | Suite::All) {
        twists.push(config.n);
    }
    twists.dedup();
    for n in twists {
        for report in module_checks(config, n) {
            emit(&report);
            reports.push(report);
        }
    }
    SuiteRun { suite, reports }
}

/// Virasoro bracket on the configured module for m, n in `m_range`, plus the
/// central charge measured on the module vacuum.
pub fn run_virasoro(config: &EngineConfig, m_range: (i64, i64)) -> (CheckReport, Option<Scalar>) {
    let opts = &config.options.checks;
    let engine = Engine::new(config.q.clone(), config.n);
    let states = test_states(engine.module(), opts.depth.min(2), opts.floor.max(-2));
    let c = central_charge(&config.expected);
    let report = check_virasoro(&engine, &c, m_range.0, m_range.1, &states);
    (report, measured_central_charge(&engine))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructureEntry {
    pub a: Word,
    pub n: i64,
    pub b: Word,
    pub result: StateVector,
}

/// a_n b in V_Q for monomials with at most `depth` creators of mode ≥ −depth,
/// n from −1 up to the first index where the products vanish for good.
pub fn structure_constants(config: &EngineConfig, depth: usize) -> Vec<StructureEntry> {
    let engine = Engine::new(config.q.clone(), 1);
    let basis = engine.module().basis_up_to(depth, (-(depth as i64)).into());
    let one = Scalar::one(engine.module().context());
    let mut entries = Vec::new();
    for a in &basis {
        for b in &basis {
            let pole = (-engine.e_min(a, b)).max(0);
            for n in -1..=pole {
                let result = engine.coefficient_on(
                    &StateVector::monomial(a.clone(), one.clone()),
                    &StateVector::monomial(b.clone(), one.clone()),
                    -n - 1,
                );
                entries.push(StructureEntry {
                    a: a.clone(),
                    n,
                    b: b.clone(),
                    result,
                });
            }
        }
    }
    entries.sort_by(|x, y| (&x.a, &x.b, x.n).cmp(&(&y.a, &y.b, y.n)));
    entries
}

pub fn structure_table_json(entries: &[StructureEntry]) -> Value {
    let literal = |w: &Word| if w.is_empty() { "|0>".to_string() } else { format!("{w} |0>") };
    json!({
        "entries": entries
            .iter()
            .map(|e| json!({
                "a": literal(&e.a),
                "n": e.n,
                "b": literal(&e.b),
                "result": e.result.to_string(),
            }))
            .collect::<Vec<_>>(),
    })
}

pub fn emit_structure_constants(config: &EngineConfig, depth: usize, out: &Path) -> std::io::Result<Vec<StructureEntry>> {
    let entries = structure_constants(config, depth);
    let text = serde_json::to_string_pretty(&structure_table_json(&entries)).expect("json");
    std::fs::write(out, text + "\n")?;
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_examples() {
        let weyl = parse_config_str(r#"{"N":1,"r":1,"M":1,"Q":[["1"]]}"#).unwrap();
        assert!(weyl.q.q(1, 1).is_one());
        let clifford = parse_config_str(r#"{"N":2,"r":1,"M":2,"Q":[["-1"]]}"#).unwrap();
        assert_eq!(clifford.n, 2);
        let coords = parse_config_str(r#"{"N":2,"r":1,"M":4,"Q":[[["-1","0"]]]}"#).unwrap();
        assert_eq!(coords.q.q(1, 1).to_string(), "-1");
        let zero = parse_config_str(r#"{"N":2,"r":1,"M":4,"Q":[["0"]]}"#).unwrap_err();
        assert!(zero.to_string().contains("== 0"), "{zero}");
        let asym = parse_config_str(r#"{"N":1,"r":2,"M":1,"Q":[["1","2"],["1","1"]]}"#).unwrap_err();
        assert!(asym.to_string().contains("q[1][2]*q[2][1] != 1"), "{asym}");
        assert_eq!(asym.exit_code(), 2);
        let fourth_root = parse_config_str(r#"{"N":2,"r":1,"M":4,"Q":[["ζ"]]}"#).unwrap_err();
        assert!(fourth_root.to_string().contains("q[1][1]*q[1][1] != 1"), "{fourth_root}");
        assert!(parse_config_str(r#"{"N":3,"r":1,"M":4,"Q":[["-1"]]}"#).is_err());
        assert!(parse_config_str(r#"{"N":1,"r":2,"M":1,"Q":[["1"]]}"#).is_err());
    }

    #[test]
    fn flipped_relation_only_changes_expectations() {
        let c = parse_config_str(r#"{"N":2,"r":1,"M":2,"Q":[["-1"]],"flip_relation":[1,1]}"#).unwrap();
        assert_eq!(c.q.q(1, 1), &-c.expected.q(1, 1));
    }

    #[test]
    fn ranges() {
        assert_eq!(parse_range("-6..6"), Ok((-6, 6)));
        assert!(parse_range("3..1").is_err());
        assert!(parse_range("3").is_err());
    }

    #[test]
    fn structure_table_examples() {
        let c = parse_config_str(r#"{"N":1,"r":1,"M":1,"Q":[["-1"]]}"#).unwrap();
        let entries = structure_constants(&c, 1);
        let find = |a: &str, n: i64, b: &str| {
            let (a, b): (Word, Word) = (a.parse().unwrap(), b.parse().unwrap());
            entries.iter().find(|e| e.a == a && e.b == b && e.n == n).map(|e| e.result.to_string())
        };
        assert_eq!(find("X[1,-1]", 0, "Y[1,-1]").as_deref(), Some("|0>"));
        assert_eq!(find("X[1,-1]", 1, "Y[1,-1]").as_deref(), Some("0"));
        assert_eq!(find("", -1, "Y[1,-1]").as_deref(), Some("Y[1,-1] |0>"));
        assert_eq!(entries, structure_constants(&c, 1));
    }
}
