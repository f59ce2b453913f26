//! Acceptance criteria, one PASS/FAIL line each.

use std::path::PathBuf;
use std::process::{Command, ExitCode};
use std::sync::Arc;
use std::time::Instant;

use qva::algebra::{GenMode, Kind, Mode, QMatrix, Word};
use qva::checks::{
    check_generator_relations, check_pbw_confluence, check_relation_fidelity, check_s_jacobi, check_virasoro, check_weak_assoc,
    measured_central_charge, sample_triples, test_states, weak_assoc_sides, CheckOptions, CheckReport, JacobiForm, SMapRelation,
};
use qva::cli::{parse_config, parse_config_str, structure_constants};
use qva::fock::StateVector;
use qva::scalar::{CycloContext, Scalar};
use qva::vertex::{central_charge, x_window, Engine};

type Criterion = (u8, &'static str, fn() -> Outcome);

/// Criteria that cannot hold as stated; they still run and print FAIL.
const KNOWN_UNATTAINABLE: &[u8] = &[2];

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn from_reports(reports: &[CheckReport]) -> Self {
        let failing: Vec<String> = reports.iter().filter(|r| !r.pass).map(|r| r.line()).collect();
        let checked: usize = reports.iter().map(|r| r.checked).sum();
        if failing.is_empty() {
            Outcome {
                pass: true,
                detail: format!("{} reports, {checked} instances", reports.len()),
            }
        } else {
            Outcome {
                pass: false,
                detail: failing.join("\n    "),
            }
        }
    }

    fn all(parts: Vec<Outcome>) -> Self {
        Outcome {
            pass: parts.iter().all(|p| p.pass),
            detail: parts.into_iter().map(|p| p.detail).collect::<Vec<_>>().join("; "),
        }
    }
}

fn ctx() -> Arc<CycloContext> {
    CycloContext::new(12)
}

fn weyl() -> Arc<QMatrix> {
    Arc::new(QMatrix::constant(&ctx(), 1, 1))
}

fn clifford() -> Arc<QMatrix> {
    Arc::new(QMatrix::constant(&ctx(), 1, -1))
}

fn boson_fermion() -> Arc<QMatrix> {
    Arc::new(QMatrix::diagonal(&ctx(), &[1, -1]))
}

// q_12 = i, q_21 = −i.
fn braided_pair() -> Arc<QMatrix> {
    let c = ctx();
    let i = Scalar::zeta_pow(&c, 3);
    let rows = vec![vec![Scalar::from_int(&c, -1), i.clone()], vec![-&i, Scalar::one(&c)]];
    Arc::new(QMatrix::new(&c, rows).expect("valid Q"))
}

fn weight_basis(engine: &Engine) -> Vec<StateVector> {
    let one = Scalar::one(engine.module().context());
    engine
        .module()
        .basis_up_to_weight(Mode::new(9, 2))
        .into_iter()
        .map(|w| StateVector::monomial(w, one.clone()))
        .collect()
}

fn virasoro_on(q: QMatrix, c: Scalar) -> Outcome {
    let measured_formula = central_charge(&q);
    let engine = Engine::new(Arc::new(q), 1);
    let states = weight_basis(&engine);
    let report = check_virasoro(&engine, &c, -3, 3, &states);
    let measured = measured_central_charge(&engine);
    let pass = report.pass && measured_formula == c && measured.as_ref() == Some(&c);
    let measured = measured.map_or("none".to_string(), |m| m.to_string());
    Outcome {
        pass,
        detail: format!("c={c}: {} states, measured {measured}; {}", states.len(), report.line()),
    }
}

fn central_charges() -> Outcome {
    let c = ctx();
    Outcome::all(vec![
        virasoro_on(QMatrix::constant(&c, 1, -1), Scalar::from_int(&c, 1)),
        virasoro_on(QMatrix::constant(&c, 1, 1), Scalar::from_int(&c, -1)),
        virasoro_on(QMatrix::diagonal(&c, &[1, -1]), Scalar::from_int(&c, 0)),
    ])
}

fn exotic_q() -> Outcome {
    let rejected = parse_config_str(r#"{"N":1,"r":1,"M":4,"Q":[["zeta"]]}"#).err().map(|e| e.to_string());
    let c4 = CycloContext::new(4);
    let z = Scalar::zeta_pow(&c4, 1);
    let q = QMatrix::new_unchecked(&c4, vec![vec![z.clone()]]).expect("shape");
    let mut run = virasoro_on(q, -&z);
    run.detail = format!("config parse: {}; {}", rejected.unwrap_or_else(|| "accepted".into()), run.detail);
    run
}

fn twisted_virasoro() -> Outcome {
    let c = Scalar::from_int(&ctx(), 1);
    let reports: Vec<CheckReport> = [2u32, 3]
        .into_iter()
        .map(|n| {
            let engine = Engine::new(clifford(), n);
            let states = test_states(engine.module(), 2, -3);
            check_virasoro(&engine, &c, -2, 2, &states)
        })
        .collect();
    Outcome::from_reports(&reports)
}

fn twisted_generator_relations() -> Outcome {
    let opts = CheckOptions::default();
    let mut reports = Vec::new();
    for n in [2u32, 3, 4] {
        for q in [weyl(), clifford(), boson_fermion()] {
            reports.push(check_generator_relations(&Engine::new(q.clone(), n), &q, &opts));
        }
    }
    Outcome::from_reports(&reports)
}

fn jacobi() -> Outcome {
    let opts = CheckOptions::default();
    let mut reports = Vec::new();
    let mut mismatches = Vec::new();
    for (q, n) in [(weyl(), 1u32), (clifford(), 1), (clifford(), 2), (clifford(), 3)] {
        let engine = Engine::new(q.clone(), n);
        let states = test_states(engine.module(), opts.depth, opts.floor);
        let rels = SMapRelation::generator_pairs(&engine, &q);
        let form = if n == 1 { JacobiForm::Untwisted } else { JacobiForm::Twisted };
        let report = check_s_jacobi(&engine, &rels, &states, form, &opts);
        if n == 1 {
            let twisted = check_s_jacobi(&engine, &rels, &states, JacobiForm::Twisted, &opts);
            let bytes = |r: &CheckReport| serde_json::to_string(&r.residuals_json()).expect("json");
            if bytes(&twisted) != bytes(&report) || twisted.checked != report.checked || twisted.pass != report.pass {
                mismatches.push(report.instance.clone());
            }
            reports.push(twisted);
        }
        reports.push(report);
    }
    let mut out = Outcome::from_reports(&reports);
    if !mismatches.is_empty() {
        out.pass = false;
        out.detail = format!("twisted form differs from untwisted at {}; {}", mismatches.join(", "), out.detail);
    } else {
        out.detail = format!("{}; twisted form matches untwisted at N=1", out.detail);
    }
    out
}

fn weak_associativity() -> Outcome {
    let opts = CheckOptions::default();
    let mut reports = Vec::new();
    let mut drift = Vec::new();
    for (q, n) in [(weyl(), 1u32), (clifford(), 1), (clifford(), 2), (clifford(), 3)] {
        let engine = Engine::new(q.clone(), n);
        let triples = sample_triples(&engine, 50, 2, opts.seed);
        reports.push(check_weak_assoc(&engine, &triples, 0, &opts));
        reports.push(check_weak_assoc(&engine, &triples, 1, &opts));
        for extra in [1, 2] {
            let slack = Engine::with_k_extra(q.clone(), n, extra);
            for (a, b, s) in &triples {
                let base = weak_assoc_sides(&engine, a, b, s, 0, opts.lo, opts.hi);
                let other = weak_assoc_sides(&slack, a, b, s, 0, opts.lo, opts.hi);
                if base.lhs != other.lhs || base.rhs != other.rhs {
                    drift.push(format!("k+{extra} at N={n}: a={a} b={b} s={s}"));
                }
            }
        }
    }
    let mut out = Outcome::from_reports(&reports);
    if drift.is_empty() {
        out.detail = format!("{}; k+1, k+2 slices identical", out.detail);
    } else {
        out.pass = false;
        out.detail = format!("{}; slices changed: {}", out.detail, drift.join(", "));
    }
    out
}

fn confluence_and_fidelity() -> Outcome {
    let mut reports = Vec::new();
    for n in [1u32, 2, 3] {
        for q in [weyl(), clifford(), braided_pair()] {
            let engine = Engine::new(q.clone(), n);
            reports.push(check_pbw_confluence(&q, n as i64, 300, 8, 0));
            reports.push(check_relation_fidelity(engine.module(), &q, 200, 0));
        }
    }
    Outcome::from_reports(&reports)
}

fn structure_and_creation() -> Outcome {
    let mut problems = Vec::new();
    let mut count = 0;
    for text in [
        r#"{"N":1,"r":1,"M":1,"Q":[["1"]]}"#,
        r#"{"N":1,"r":1,"M":1,"Q":[["-1"]]}"#,
        r#"{"N":1,"r":2,"M":1,"Q":[["1","1"],["1","-1"]]}"#,
    ] {
        let config = parse_config_str(text).expect("config");
        let engine = Engine::new(config.q.clone(), 1);
        let ctx = engine.module().context().clone();
        let vacuum = engine.module().vacuum();
        let generator = |kind: Kind, i: u16| Word(vec![GenMode::new(kind, i, Mode::from(-1))]);
        let table = structure_constants(&config, 1);
        for i in 1..=config.r as u16 {
            for j in 1..=config.r as u16 {
                let (u, v) = (generator(Kind::X, i), generator(Kind::Y, j));
                for n in 0..=4 {
                    let from_table = table.iter().find(|e| e.a == u && e.b == v && e.n == n).map(|e| e.result.clone());
                    let direct = engine.coefficient_on(
                        &StateVector::monomial(u.clone(), Scalar::one(&ctx)),
                        &StateVector::monomial(v.clone(), Scalar::one(&ctx)),
                        -n - 1,
                    );
                    let expected = if i == j && n == 0 { vacuum.clone() } else { StateVector::zero() };
                    count += 1;
                    if direct != expected || from_table.is_some_and(|t| t != expected) {
                        problems.push(format!("{u}_{n} {v} = {direct}"));
                    }
                }
            }
        }
        for a in test_states(engine.module(), 3, -3) {
            let slice = engine.vertex_apply(&a, &vacuum, &x_window(1, -8, 4)).expect("slice");
            count += 1;
            let singular = slice.coeffs.terms().any(|(e, _)| e[0] < 0);
            if singular || slice.coeffs.get(&[0]) != Some(&a) {
                problems.push(format!("Y({a}, x)1"));
            }
        }
    }
    Outcome {
        pass: problems.is_empty(),
        detail: if problems.is_empty() {
            format!("{count} identities")
        } else {
            problems.join(", ")
        },
    }
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn negative_control() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_qva");
    let parse_error = parse_config(&fixture("asymmetric_q.json")).err().map(|e| e.to_string());
    let rejected = Command::new(bin)
        .args(["check", "--config"])
        .arg(fixture("asymmetric_q.json"))
        .output()
        .expect("run qva");
    let flipped = Command::new(bin)
        .args(["check", "--suite", "twisted", "--depth", "2", "--window", "-3..3", "--config"])
        .arg(fixture("flipped_sign.json"))
        .output()
        .expect("run qva");
    let stdout = String::from_utf8_lossy(&flipped.stdout);
    let localized = stdout.lines().any(|l| l.starts_with("FAIL generator_relations")) && stdout.contains("first residual");
    let pass = rejected.status.code() == Some(2)
        && parse_error.as_deref().is_some_and(|e| e.contains("q[1][2]*q[2][1] != 1"))
        && flipped.status.code() == Some(1)
        && localized;
    Outcome {
        pass,
        detail: format!(
            "asymmetric Q exit {:?} ({}); flipped relation exit {:?}, residual localized: {localized}",
            rejected.status.code(),
            parse_error.unwrap_or_default(),
            flipped.status.code()
        ),
    }
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        (1, "central charge", central_charges),
        (2, "exotic q", exotic_q),
        (3, "twisted Virasoro", twisted_virasoro),
        (4, "twisted generator relations", twisted_generator_relations),
        (5, "S-Jacobi and twisted Jacobi", jacobi),
        (6, "weak associativity and k/l invariance", weak_associativity),
        (7, "PBW confluence and relation fidelity", confluence_and_fidelity),
        (8, "structure constants and creation", structure_and_creation),
        (9, "negative control", negative_control),
    ];
    let mut unexpected = Vec::new();
    for (id, title, run) in criteria {
        let start = Instant::now();
        let outcome = run();
        let tag = if outcome.pass { "PASS" } else { "FAIL" };
        println!("{tag} [{id}] {title} ({:.1}s)", start.elapsed().as_secs_f64());
        println!("    {}", outcome.detail);
        if !outcome.pass && !KNOWN_UNATTAINABLE.contains(&id) {
            unexpected.push(id);
        }
    }
    if unexpected.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("unexpected failures: {unexpected:?}");
        ExitCode::FAILURE
    }
}
