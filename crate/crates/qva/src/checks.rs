//! Axiom checks. Each identity is compared coefficient by coefficient inside
//! a finite window; whatever fails to cancel is kept as a residual series.

use std::cell::RefCell;
use std::rc::Rc;
use std::collections::HashMap;
use std::time::{Duration, Instant};

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::algebra::{normal_order_by, theta_scale, GenMode, Kind, Mode, QMatrix, Strategy, Word};
use crate::fock::{FockModule, StateVector};
use crate::scalar::{binomial, Scalar};
use crate::series::{delta_coeff, twisted_delta_derivative_coeff, Coeff, DeltaKind, FracSeries, Var, VarSet, Window};
use crate::vertex::{conformal_vector, Engine};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckOptions {
    /// Test states have at most `depth` creators, all of mode ≥ `floor`.
    pub depth: usize,
    pub floor: i64,
    /// Exponent window [lo, hi] per variable.
    pub lo: i64,
    pub hi: i64,
    pub seed: u64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions {
            depth: 3,
            floor: -3,
            lo: -6,
            hi: 6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Residual {
    pub instance: String,
    pub series: FracSeries<StateVector>,
}

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: String,
    pub instance: String,
    pub window: Window,
    /// Number of instances compared.
    pub checked: usize,
    /// Only the instances with a nonzero residual.
    pub residuals: Vec<Residual>,
    pub pass: bool,
    pub elapsed: Duration,
}

impl CheckReport {
    fn build(name: &str, instance: String, window: Window, results: Vec<Residual>, start: Instant) -> Self {
        let checked = results.len();
        let residuals: Vec<Residual> = results.into_iter().filter(|r| !r.series.is_empty()).collect();
        CheckReport {
            name: name.to_string(),
            instance,
            window,
            checked,
            pass: residuals.is_empty(),
            residuals,
            elapsed: start.elapsed(),
        }
    }

    pub fn residuals_json(&self) -> Value {
        Value::Array(
            self.residuals
                .iter()
                .map(|r| json!({ "instance": r.instance, "series": r.series.export() }))
                .collect(),
        )
    }

    pub fn to_json(&self) -> Value {
        json!({
            "name": self.name,
            "instance": self.instance,
            "window": self.window.to_string(),
            "checked": self.checked,
            "pass": self.pass,
            "residuals": self.residuals_json(),
        })
    }

    pub fn line(&self) -> String {
        let verdict = if self.pass { "PASS" } else { "FAIL" };
        let mut line = format!(
            "{verdict} {} [{}] {} instances, {} failing ({:.2}s)",
            self.name,
            self.instance,
            self.checked,
            self.residuals.len(),
            self.elapsed.as_secs_f64()
        );
        if let Some(first) = self.residuals.first() {
            if let Some((exps, c)) = first.series.terms().next() {
                line.push_str(&format!("\n    first residual: {} at {:?}: {}", first.instance, exps, c));
            }
        }
        line
    }
}

fn rat(p: i64, q: i64) -> BigRational {
    BigRational::new(BigInt::from(p), BigInt::from(q))
}

fn signed(c: BigRational, odd: bool) -> BigRational {
    if odd {
        -c
    } else {
        c
    }
}

pub fn describe(engine: &Engine) -> String {
    let q = engine.module().q();
    let rows: Vec<String> = (1..=q.rank() as u16)
        .map(|i| {
            let row: Vec<String> = (1..=q.rank() as u16).map(|j| q.q(i, j).to_string()).collect();
            format!("[{}]", row.join(", "))
        })
        .collect();
    format!("N={} Q=[{}]", engine.denom(), rows.join(", "))
}

fn monomial(engine: &Engine, w: &Word) -> StateVector {
    StateVector::monomial(w.clone(), Scalar::one(engine.module().context()))
}

pub fn test_states(module: &FockModule, depth: usize, floor: i64) -> Vec<StateVector> {
    let one = Scalar::one(module.context());
    module
        .basis_up_to(depth, Mode::from(floor))
        .into_iter()
        .map(|w| StateVector::monomial(w, one.clone()))
        .collect()
}

/// X_{i,-1}|0> or Y_{i,-1}|0> in V_Q.
pub fn generator_state(engine: &Engine, kind: Kind, color: u16) -> StateVector {
    monomial(engine, &Word(vec![GenMode::new(kind, color, Mode::from(-1))]))
}

fn generators(rank: usize) -> Vec<(Kind, u16)> {
    (1..=rank as u16).flat_map(|c| [(Kind::X, c), (Kind::Y, c)]).collect()
}

fn lead_word(s: &StateVector) -> Word {
    s.terms().next().map(|(w, _)| w.clone()).unwrap_or_else(Word::empty)
}

/// Exponent numerators in [lo, hi]·N on the class of `a`'s field.
fn class_range(engine: &Engine, a: &StateVector, lo: i64, hi: i64) -> Vec<i64> {
    let n = engine.denom();
    let class = engine.exponent_class(&lead_word(a));
    (lo * n..=hi * n).filter(|e| (e - class).rem_euclid(n) == 0).collect()
}

fn field_label(kind: Kind, color: u16) -> String {
    format!("{kind:?}{color}")
}

/// A braided-commutativity relation
///   (x1 − x2)^k Y(u,x1)Y(v,x2) = (x1 − x2)^k Σ f_i Y(v_i,x2)Y(u_i,x1)
/// with constant f_i, which is all V_Q needs.
#[derive(Debug, Clone, PartialEq)]
pub struct SMapRelation {
    pub label: String,
    pub u: StateVector,
    pub v: StateVector,
    pub terms: Vec<(Scalar, StateVector, StateVector)>,
    pub k: i64,
}

impl SMapRelation {
    pub fn generator_pair(engine: &Engine, expected: &QMatrix, a: (Kind, u16), b: (Kind, u16)) -> Self {
        let vq = engine.untwisted();
        let u = generator_state(engine, a.0, a.1);
        let v = generator_state(engine, b.0, b.1);
        let eps = expected.braiding(&lead_word(&u), &lead_word(&v));
        let k = (-vq.e_min_states(&u, &v)).max(0);
        SMapRelation {
            label: format!("{}(x1) {}(x2)", field_label(a.0, a.1), field_label(b.0, b.1)),
            terms: vec![(eps, v.clone(), u.clone())],
            u,
            v,
            k,
        }
    }

    pub fn generator_pairs(engine: &Engine, expected: &QMatrix) -> Vec<Self> {
        let gens = generators(expected.rank());
        gens.iter()
            .flat_map(|&a| gens.iter().map(move |&b| (a, b)))
            .map(|(a, b)| SMapRelation::generator_pair(engine, expected, a, b))
            .collect()
    }
}

/// Per-instance memo of a two-variable coefficient table.
struct Table<'a> {
    memo: RefCell<HashMap<(i64, i64), Rc<StateVector>>>,
    f: Box<dyn Fn(i64, i64) -> StateVector + 'a>,
}

impl<'a> Table<'a> {
    fn new(f: impl Fn(i64, i64) -> StateVector + 'a) -> Self {
        Table {
            memo: RefCell::new(HashMap::new()),
            f: Box::new(f),
        }
    }

    fn get(&self, a: i64, b: i64) -> Rc<StateVector> {
        if let Some(v) = self.memo.borrow().get(&(a, b)) {
            return v.clone();
        }
        let v = Rc::new((self.f)(a, b));
        self.memo.borrow_mut().insert((a, b), v.clone());
        v
    }
}

struct Column<'a> {
    memo: RefCell<HashMap<i64, Rc<StateVector>>>,
    f: Box<dyn Fn(i64) -> StateVector + 'a>,
}

impl<'a> Column<'a> {
    fn new(f: impl Fn(i64) -> StateVector + 'a) -> Self {
        Column {
            memo: RefCell::new(HashMap::new()),
            f: Box::new(f),
        }
    }

    fn get(&self, a: i64) -> Rc<StateVector> {
        if let Some(v) = self.memo.borrow().get(&a) {
            return v.clone();
        }
        let v = Rc::new((self.f)(a));
        self.memo.borrow_mut().insert(a, v.clone());
        v
    }
}

/// Coefficients of x1^b x2^c in Y(u,x1)Y(v,x2)s.
fn ordered_product<'a>(engine: &'a Engine, u: &'a StateVector, v: &'a StateVector, s: &'a StateVector) -> Table<'a> {
    let inner = Column::new(move |c| engine.coefficient_on(v, s, c));
    Table::new(move |b, c| engine.coefficient_on(u, &inner.get(c), b))
}

/// Coefficients of x1^b x2^c in Y(v,x2)Y(u,x1)s.
fn reversed_product<'a>(engine: &'a Engine, u: &'a StateVector, v: &'a StateVector, s: &'a StateVector) -> Table<'a> {
    let inner = Column::new(move |b| engine.coefficient_on(u, s, b));
    Table::new(move |b, c| engine.coefficient_on(v, &inner.get(b), c))
}

pub fn check_generator_relations(engine: &Engine, expected: &QMatrix, opts: &CheckOptions) -> CheckReport {
    let start = Instant::now();
    let n = engine.denom();
    let vars = VarSet::new(&[Var::X1, Var::X2], n);
    let window = Window::uniform(vars.clone(), opts.lo, opts.hi);
    let states = test_states(engine.module(), opts.depth, opts.floor);
    let r = expected.rank() as u16;
    let mut pairs = Vec::new();
    for i in 1..=r {
        for j in 1..=r {
            for kinds in [(Kind::X, Kind::Y), (Kind::X, Kind::X), (Kind::Y, Kind::Y)] {
                pairs.push((kinds, i, j));
            }
        }
    }
    let jobs: Vec<_> = pairs.iter().flat_map(|p| states.iter().map(move |s| (*p, s))).collect();
    let results = jobs
        .par_iter()
        .map(|&(((ka, kb), i, j), s)| {
            let scale = match (ka, kb) {
                (Kind::X, Kind::Y) => expected.q(j, i).clone(),
                _ => expected.q(i, j).clone(),
            };
            let with_delta = ka != kb && i == j;
            let ga = generator_state(engine, ka, i);
            let gb = generator_state(engine, kb, j);
            let bs = class_range(engine, &ga, opts.lo, opts.hi);
            let cs = class_range(engine, &gb, opts.lo, opts.hi);
            let b_on_s: Vec<StateVector> = cs.iter().map(|&c| engine.generator_coefficient(kb, j, c, s)).collect();
            let a_on_s: Vec<StateVector> = bs.iter().map(|&b| engine.generator_coefficient(ka, i, b, s)).collect();
            let mut terms = Vec::new();
            for (bi, &b) in bs.iter().enumerate() {
                for (ci, &c) in cs.iter().enumerate() {
                    let mut v = engine.generator_coefficient(ka, i, b, &b_on_s[ci]);
                    v = v.sub(&engine.generator_coefficient(kb, j, c, &a_on_s[bi]).scale(&scale));
                    if with_delta {
                        let k = twisted_delta_derivative_coeff(n, 1, 0, b, c);
                        if !k.is_zero() {
                            v = v.sub(&s.scaled_rational(&k));
                        }
                    }
                    if !v.is_empty() {
                        terms.push((vec![b, c], v));
                    }
                }
            }
            Residual {
                instance: format!("{}(x1) {}(x2) on {}", field_label(ka, i), field_label(kb, j), s),
                series: FracSeries::from_terms(vars.clone(), terms),
            }
        })
        .collect();
    CheckReport::build("generator_relations", describe(engine), window, results, start)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JacobiForm {
    /// x2^{-1}δ((x1 − x0)/x2) Y(Y(u,x0)v, x2); only meaningful for N = 1.
    Untwisted,
    /// (1/N) Σ_j x2^{-1}δ(ω^{j}((x1 − x0)/x2)^{1/N}) Y_W(Y(σ^j u,x0)v, x2).
    Twisted,
}

/// Residual of the three-term Jacobi identity for `rel` on the state `s`.
pub fn s_jacobi_residual(engine: &Engine, rel: &SMapRelation, s: &StateVector, form: JacobiForm, lo: i64, hi: i64) -> FracSeries<StateVector> {
    let n = engine.denom();
    let vq = engine.untwisted();
    let ctx = engine.module().context();
    let vars = VarSet::new(&[Var::X0, Var::X1, Var::X2], n);
    let ordered = ordered_product(engine, &rel.u, &rel.v, s);
    let swapped: Vec<(Scalar, Table)> = rel
        .terms
        .iter()
        .map(|(f, vi, ui)| (-f, reversed_product(engine, ui, vi, s)))
        .collect();
    let floor_v = engine.e_min_states(&rel.v, s);
    let floors_u: Vec<i64> = rel.terms.iter().map(|(_, _, ui)| engine.e_min_states(ui, s)).collect();
    let products = Column::new(|m| vq.coefficient_on(&rel.u, &rel.v, -m - 1));
    let iterated = Table::new(|m, gamma| {
        let state = products.get(m);
        if state.is_empty() {
            StateVector::zero()
        } else {
            engine.coefficient_on(&state, s, gamma)
        }
    });
    let eigen = theta_scale(ctx, &lead_word(&rel.u), n as u32).expect("root of unity");
    let eigen_powers: Vec<Scalar> = (0..n).map(|j| eigen.pow(j).expect("power")).collect();
    let bs = class_range(engine, &rel.u, lo, hi);
    let cs = class_range(engine, &rel.v, lo, hi);
    let longest = (hi - lo + 1) + (hi * n - floor_v.min(floors_u.iter().copied().min().unwrap_or(floor_v))) / n + 2;
    let mut terms = Vec::new();
    for a in (lo..=hi).map(|t| t * n) {
        let p0 = -a / n - 1;
        // (−1)^i C(p0, i)
        let mut kernel = vec![BigRational::one()];
        for i in 0..longest {
            let next = -(&kernel[i as usize] * rat(p0 - i, i + 1));
            kernel.push(next);
        }
        let odd_p0 = p0.rem_euclid(2) == 1;
        for &b in &bs {
            for &c in &cs {
                let mut total = StateVector::zero();
                // x0^{-1}δ((x1 − x2)/x0) Y(u,x1)Y(v,x2)
                let mut i = 0;
                while c - i * n >= floor_v && (p0 < 0 || i <= p0) {
                    total.add_scaled_rational(&ordered.get(b - (p0 - i) * n, c - i * n), &kernel[i as usize]);
                    i += 1;
                }
                // x0^{-1}δ((x2 − x1)/(−x0)) Σ f_i Y(v_i,x2)Y(u_i,x1)
                for ((f, table), &floor_u) in swapped.iter().zip(&floors_u) {
                    let mut part = StateVector::zero();
                    let mut i = 0;
                    while b - i * n >= floor_u && (p0 < 0 || i <= p0) {
                        part.add_scaled_rational(&table.get(b - i * n, c - (p0 - i) * n), &signed(kernel[i as usize].clone(), odd_p0));
                        i += 1;
                    }
                    total.add_scaled(&part, f);
                }
                // The x2-delta term.
                let a_int = a / n;
                let mut i = 0;
                while i <= rel.k + a_int {
                    let p = b + i * n;
                    let m = i - a_int - 1;
                    let k = match form {
                        JacobiForm::Untwisted => {
                            let c = signed(binomial(&BigRational::from_integer(p.into()), i as u64), i % 2 == 1);
                            Scalar::from_rational(ctx, -c)
                        }
                        JacobiForm::Twisted => {
                            let mut acc = Scalar::zero(ctx);
                            for j in 0..n {
                                if let Some(d) = delta_coeff(ctx, n, DeltaKind::K3, -j, [i * n, b, -n - p]).expect("delta kernel") {
                                    acc += &(&d * &eigen_powers[j as usize]);
                                }
                            }
                            acc.scale_rational(&rat(-1, n))
                        }
                    };
                    if !k.is_zero() {
                        total.add_scaled(&iterated.get(m, c + n + p), &k);
                    }
                    i += 1;
                }
                if !total.is_empty() {
                    terms.push((vec![a, b, c], total));
                }
            }
        }
    }
    FracSeries::from_terms(vars, terms)
}

pub fn check_s_jacobi(
    engine: &Engine,
    rels: &[SMapRelation],
    states: &[StateVector],
    form: JacobiForm,
    opts: &CheckOptions,
) -> CheckReport {
    let start = Instant::now();
    let n = engine.denom();
    let window = Window::uniform(VarSet::new(&[Var::X0, Var::X1, Var::X2], n), opts.lo, opts.hi);
    let jobs: Vec<_> = rels.iter().flat_map(|r| states.iter().map(move |s| (r, s))).collect();
    let results = jobs
        .par_iter()
        .map(|(rel, s)| Residual {
            instance: format!("{} on {}", rel.label, s),
            series: s_jacobi_residual(engine, rel, s, form, opts.lo, opts.hi),
        })
        .collect();
    let name = match form {
        JacobiForm::Untwisted => "s_jacobi",
        JacobiForm::Twisted => "twisted_jacobi",
    };
    CheckReport::build(name, describe(engine), window, results, start)
}

/// Both sides of the weak associativity identity in (x0, x2), and the
/// exponent l + r/N (numerator) used.
#[derive(Debug, Clone, PartialEq)]
pub struct WeakAssocSides {
    pub lhs: FracSeries<StateVector>,
    pub rhs: FracSeries<StateVector>,
    pub power: i64,
}

/// The smallest l with x^{l + r/N} Y_W(a, x)s a power series, plus `l_extra`.
pub fn weak_assoc_power(engine: &Engine, a: &StateVector, s: &StateVector, l_extra: i64) -> i64 {
    let n = engine.denom();
    let r = lead_word(a).charge().rem_euclid(n);
    let floor = engine.e_min_states(a, s);
    let l = Integer::div_ceil(&(-floor - r), &n).max(0) + l_extra;
    l * n + r
}

pub fn weak_assoc_sides(engine: &Engine, a: &StateVector, b: &StateVector, s: &StateVector, l_extra: i64, lo: i64, hi: i64) -> WeakAssocSides {
    let n = engine.denom();
    let vq = engine.untwisted();
    let vars = VarSet::new(&[Var::X0, Var::X2], n);
    let power = weak_assoc_power(engine, a, s, l_extra);
    let big_l = rat(power, n);
    let floor_ab = vq.e_min_states(a, b) * n;
    let floor_bs = engine.e_min_states(b, s);
    let products = Column::new(|alpha| vq.coefficient_on(a, b, alpha / n));
    let iterated = Table::new(|alpha, gamma| {
        let st = products.get(alpha);
        if st.is_empty() {
            StateVector::zero()
        } else {
            engine.coefficient_on(&st, s, gamma)
        }
    });
    let b_on_s = Column::new(|gamma| engine.coefficient_on(b, s, gamma));
    let (mut lhs, mut rhs) = (Vec::new(), Vec::new());
    for alpha in (lo..=hi).map(|t| t * n) {
        for gamma in lo * n..=hi * n {
            let mut left = StateVector::zero();
            let mut i = 0;
            while alpha - i * n >= floor_ab {
                let k = binomial(&big_l, i as u64);
                if !k.is_zero() {
                    let v = iterated.get(alpha - i * n, gamma - power + i * n);
                    left.add_scaled_rational(&v, &k);
                }
                i += 1;
            }
            let mut right = StateVector::zero();
            let mut i = 0;
            while gamma - i * n >= floor_bs {
                let k = binomial(&rat(alpha + i * n, n), i as u64);
                if !k.is_zero() {
                    let inner = b_on_s.get(gamma - i * n);
                    if !inner.is_empty() {
                        let v = engine.coefficient_on(a, &inner, alpha - power + i * n);
                        right.add_scaled_rational(&v, &k);
                    }
                }
                i += 1;
            }
            if !left.is_empty() {
                lhs.push((vec![alpha, gamma], left));
            }
            if !right.is_empty() {
                rhs.push((vec![alpha, gamma], right));
            }
        }
    }
    WeakAssocSides {
        lhs: FracSeries::from_terms(vars.clone(), lhs),
        rhs: FracSeries::from_terms(vars, rhs),
        power,
    }
}

pub type Triple = (StateVector, StateVector, StateVector);

/// `count` random (a, b, s): a, b monomials of V_Q, s a monomial of the module,
/// all with at most `depth` creators of mode ≥ −depth.
pub fn sample_triples(engine: &Engine, count: usize, depth: usize, seed: u64) -> Vec<Triple> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let floor = -(depth as i64);
    let ops = test_states(engine.untwisted().module(), depth, floor);
    let targets = test_states(engine.module(), depth, floor);
    (0..count)
        .map(|_| {
            let a = ops[rng.gen_range(0..ops.len())].clone();
            let b = ops[rng.gen_range(0..ops.len())].clone();
            let s = targets[rng.gen_range(0..targets.len())].clone();
            (a, b, s)
        })
        .collect()
}

pub fn check_weak_assoc(engine: &Engine, triples: &[Triple], l_extra: i64, opts: &CheckOptions) -> CheckReport {
    let start = Instant::now();
    let window = Window::uniform(VarSet::new(&[Var::X0, Var::X2], engine.denom()), opts.lo, opts.hi);
    let results = triples
        .par_iter()
        .map(|(a, b, s)| {
            let sides = weak_assoc_sides(engine, a, b, s, l_extra, opts.lo, opts.hi);
            Residual {
                instance: format!("a = {a}, b = {b}, s = {s}, l + r/N = {}/{}", sides.power, engine.denom()),
                series: sides.lhs.sub(&sides.rhs).expect("same variables"),
            }
        })
        .collect();
    CheckReport::build("weak_assoc", describe(engine), window, results, start)
}

fn x_window(engine: &Engine, opts: &CheckOptions) -> Window {
    Window::uniform(VarSet::new(&[Var::X], engine.denom()), opts.lo, opts.hi)
}

/// Y_W(Dv, x)s − d/dx Y_W(v, x)s.
pub fn derivative_residual(engine: &Engine, v: &StateVector, s: &StateVector, lo: i64, hi: i64) -> FracSeries<StateVector> {
    let n = engine.denom();
    let dv = engine.d_operator(v);
    let mut terms = Vec::new();
    for e in lo * n..=hi * n {
        let lhs = engine.coefficient_on(&dv, s, e);
        let rhs = engine.coefficient_on(v, s, e + n).scaled_rational(&rat(e + n, n));
        let diff = lhs.sub(&rhs);
        if !diff.is_empty() {
            terms.push((vec![e], diff));
        }
    }
    FracSeries::from_terms(VarSet::new(&[Var::X], n), terms)
}

/// Y(u, x)v − ε e^{xD} Y(v, −x)u on V_Q.
pub fn skew_residual(vq: &Engine, u: &StateVector, v: &StateVector, eps: &Scalar, lo: i64, hi: i64) -> FracSeries<StateVector> {
    assert_eq!(vq.denom(), 1, "skew symmetry is a statement inside V_Q");
    let floor = vq.e_min_states(v, u);
    let mut terms = Vec::new();
    for e in lo..=hi {
        let lhs = vq.coefficient_on(u, v, e);
        let mut rhs = StateVector::zero();
        for j in 0..=(e - floor).max(-1) {
            let base = vq.coefficient_on(v, u, e - j);
            if base.is_empty() {
                continue;
            }
            let mut d = base;
            for _ in 0..j {
                d = vq.d_operator(&d);
            }
            let fact: BigInt = (1..=j).map(BigInt::from).product();
            let k = signed(BigRational::new(BigInt::one(), fact), (e - j).rem_euclid(2) == 1);
            rhs = rhs.add(&d.scaled_rational(&k));
        }
        let diff = lhs.sub(&rhs.scale(eps));
        if !diff.is_empty() {
            terms.push((vec![e], diff));
        }
    }
    FracSeries::from_terms(VarSet::new(&[Var::X], 1), terms)
}

/// The D-derivative property on V_Q states of depth ≤ 2 against the module's
/// test states, and skew symmetry for generator pairs when N = 1.
pub fn check_d_and_skew(engine: &Engine, expected: &QMatrix, opts: &CheckOptions) -> CheckReport {
    let start = Instant::now();
    let vs = test_states(engine.untwisted().module(), 2, -2);
    let ss = test_states(engine.module(), opts.depth.min(2), opts.floor.max(-2));
    let jobs: Vec<_> = vs.iter().flat_map(|v| ss.iter().map(move |s| (v, s))).collect();
    let mut results: Vec<Residual> = jobs
        .par_iter()
        .map(|(v, s)| Residual {
            instance: format!("D on {v} against {s}"),
            series: derivative_residual(engine, v, s, opts.lo, opts.hi),
        })
        .collect();
    if engine.denom() == 1 {
        let gens = generators(expected.rank());
        for &a in &gens {
            for &b in &gens {
                let u = generator_state(engine, a.0, a.1);
                let v = generator_state(engine, b.0, b.1);
                let eps = expected.braiding(&lead_word(&u), &lead_word(&v));
                results.push(Residual {
                    instance: format!("skew {} {}", field_label(a.0, a.1), field_label(b.0, b.1)),
                    series: skew_residual(engine, &u, &v, &eps, opts.lo, opts.hi),
                });
            }
        }
    }
    CheckReport::build("d_and_skew", describe(engine), x_window(engine, opts), results, start)
}

/// Residual of [L(m), L(n)]s = (m − n)L(m+n)s + (m³ − m)/12 δ_{m+n,0} c s,
/// at exponents (−m−2, −n−2) in (x1, x2).
pub fn check_virasoro(engine: &Engine, c: &Scalar, m_lo: i64, m_hi: i64, states: &[StateVector]) -> CheckReport {
    let start = Instant::now();
    let n = engine.denom();
    let omega = conformal_vector(engine.untwisted().module());
    let vars = VarSet::new(&[Var::X1, Var::X2], n);
    let window = Window::new(vars.clone(), vec![((-m_hi - 2) * n, (-m_lo - 2) * n); 2]).expect("window");
    let ctx = engine.module().context();
    let results = states
        .par_iter()
        .map(|s| {
            let ls: HashMap<i64, StateVector> = (2 * m_lo..=2 * m_hi).map(|m| (m, engine.virasoro_mode(&omega, m, s))).collect();
            let mut terms = Vec::new();
            for m in m_lo..=m_hi {
                for k in m_lo..=m_hi {
                    let lhs = engine
                        .virasoro_mode(&omega, m, &ls[&k])
                        .sub(&engine.virasoro_mode(&omega, k, &ls[&m]));
                    let mut rhs = ls[&(m + k)].scale(&Scalar::from_int(ctx, m - k));
                    if m + k == 0 {
                        let anomaly = c.scale_rational(&rat(m * m * m - m, 12));
                        rhs = rhs.add(&s.scale(&anomaly));
                    }
                    let diff = lhs.sub(&rhs);
                    if !diff.is_empty() {
                        terms.push((vec![(-m - 2) * n, (-k - 2) * n], diff));
                    }
                }
            }
            Residual {
                instance: format!("on {s}"),
                series: FracSeries::from_terms(vars.clone(), terms),
            }
        })
        .collect();
    CheckReport::build("virasoro", format!("{} c={}", describe(engine), c), window, results, start)
}

/// c read off the module vacuum: [L(2), L(−2)]w = 4L(0)w + (c/2)w.
pub fn measured_central_charge(engine: &Engine) -> Option<Scalar> {
    let omega = conformal_vector(engine.untwisted().module());
    let w = engine.module().vacuum();
    let l = |m: i64, s: &StateVector| engine.virasoro_mode(&omega, m, s);
    let bracket = l(2, &l(-2, &w)).sub(&l(-2, &l(2, &w)));
    let rest = bracket.sub(&l(0, &w).scale(&Scalar::from_int(engine.module().context(), 4)));
    if rest.terms().any(|(word, _)| !word.is_empty()) {
        return None;
    }
    let half = rest.get(&Word::empty()).cloned().unwrap_or_else(|| Scalar::zero(engine.module().context()));
    Some(half.scale_rational(&rat(2, 1)))
}

fn invert(mut m: Vec<Vec<BigRational>>) -> Option<Vec<Vec<BigRational>>> {
    let size = m.len();
    let mut inv: Vec<Vec<BigRational>> = (0..size)
        .map(|i| (0..size).map(|j| if i == j { BigRational::one() } else { BigRational::zero() }).collect())
        .collect();
    for col in 0..size {
        let pivot = (col..size).find(|&r| !m[r][col].is_zero())?;
        m.swap(col, pivot);
        inv.swap(col, pivot);
        let p = m[col][col].clone();
        for j in 0..size {
            m[col][j] = &m[col][j] / &p;
            inv[col][j] = &inv[col][j] / &p;
        }
        for r in 0..size {
            if r != col && !m[r][col].is_zero() {
                let f = m[r][col].clone();
                for j in 0..size {
                    let (a, b) = (&m[col][j] * &f, &inv[col][j] * &f);
                    m[r][j] -= a;
                    inv[r][j] -= b;
                }
            }
        }
    }
    Some(inv)
}

/// The module-side commutator identity
///   Y_W(u,x1)Y_W(v,x2) − ε Y_W(v,x2)Y_W(u,x1)
///     = Σ_j Y_W(u_j v, x2) (1/j!)∂_{x2}^j [x1^{-1}δ(x2/x1)(x2/x1)^{k/N}]
/// for u of θ-degree k, and its converse: the fields Y_W(c_j, x2)s are
/// solved for from module data alone and compared with Y_W(u_j v, x2)s.
/// Returns (forward residual, converse residual).
pub fn relation_transfer_residuals(
    engine: &Engine,
    rel: &SMapRelation,
    s: &StateVector,
    lo: i64,
    hi: i64,
) -> (FracSeries<StateVector>, FracSeries<StateVector>) {
    let n = engine.denom();
    let vq = engine.untwisted();
    let vars = VarSet::new(&[Var::X1, Var::X2], n);
    let k = lead_word(&rel.u).charge().rem_euclid(n);
    let poles = rel.k.max(0);
    let tails: Vec<StateVector> = (0..poles).map(|j| vq.coefficient_on(&rel.u, &rel.v, -j - 1)).collect();
    let tail_fields: Vec<Column> = tails.iter().map(|c| Column::new(move |g| engine.coefficient_on(c, s, g))).collect();
    let ordered = ordered_product(engine, &rel.u, &rel.v, s);
    let reversed: Vec<(Scalar, Table)> = rel
        .terms
        .iter()
        .map(|(f, vi, ui)| (f.clone(), reversed_product(engine, ui, vi, s)))
        .collect();
    let commutator = |b: i64, c: i64| {
        let mut out = (*ordered.get(b, c)).clone();
        for (f, t) in &reversed {
            out.add_scaled(&t.get(b, c), &-f);
        }
        out
    };
    let bs = class_range(engine, &rel.u, lo, hi);
    let cs = class_range(engine, &rel.v, lo, hi);
    let mut forward = Vec::new();
    for &b in &bs {
        for &c in &cs {
            let mut diff = commutator(b, c);
            for (j, field) in tail_fields.iter().enumerate() {
                let j = j as i64;
                let c_kernel = -n - j * n - b;
                let kappa = twisted_delta_derivative_coeff(n, k, j as u64, b, c_kernel);
                if !kappa.is_zero() {
                    diff.add_scaled_rational(&field.get(c - c_kernel), &-kappa);
                }
            }
            if !diff.is_empty() {
                forward.push((vec![b, c], diff));
            }
        }
    }
    let mut converse = Vec::new();
    if poles > 0 {
        let base = (-k).rem_euclid(n) - n;
        let rows: Vec<i64> = (0..poles).map(|t| base - t * n).collect();
        let matrix: Vec<Vec<BigRational>> = rows
            .iter()
            .map(|&b| (0..poles).map(|j| binomial(&rat(-n - b, n), j as u64)).collect())
            .collect();
        let inverse = invert(matrix).expect("interpolation matrix is invertible");
        let class = (engine.exponent_class(&lead_word(&rel.u)) + engine.exponent_class(&lead_word(&rel.v))).rem_euclid(n);
        for total in (lo * n - n..=hi * n).filter(|t| (t - class).rem_euclid(n) == 0) {
            let data: Vec<StateVector> = rows.iter().map(|&b| commutator(b, total - b)).collect();
            for j in 0..poles {
                let mut solved = StateVector::zero();
                for (t, d) in data.iter().enumerate() {
                    solved.add_scaled_rational(d, &inverse[j as usize][t]);
                }
                let gamma = total + n + j * n;
                solved.add_scaled_rational(&tail_fields[j as usize].get(gamma), &-BigRational::one());
                let diff = solved;
                if !diff.is_empty() {
                    converse.push((vec![(-j - 1) * n, gamma], diff));
                }
            }
        }
    }
    (FracSeries::from_terms(vars.clone(), forward), FracSeries::from_terms(vars, converse))
}

pub fn check_relation_transfer(engine: &Engine, rels: &[SMapRelation], states: &[StateVector], opts: &CheckOptions) -> CheckReport {
    let start = Instant::now();
    let window = Window::uniform(VarSet::new(&[Var::X1, Var::X2], engine.denom()), opts.lo, opts.hi);
    let jobs: Vec<_> = rels.iter().flat_map(|r| states.iter().map(move |s| (r, s))).collect();
    let results: Vec<Residual> = jobs
        .par_iter()
        .flat_map_iter(|(rel, s)| {
            let (forward, converse) = relation_transfer_residuals(engine, rel, s, opts.lo, opts.hi);
            [
                Residual {
                    instance: format!("{} on {}", rel.label, s),
                    series: forward,
                },
                Residual {
                    instance: format!("converse {} on {}", rel.label, s),
                    series: converse,
                },
            ]
        })
        .collect();
    CheckReport::build("relation_transfer", describe(engine), window, results, start)
}

fn random_generator(rng: &mut ChaCha8Rng, rank: usize, n: i64, span: i64) -> GenMode {
    let kind = if rng.gen_bool(0.5) { Kind::X } else { Kind::Y };
    let color = rng.gen_range(1..=rank as u16);
    let offset = match kind {
        Kind::X => Mode::new(1, n),
        Kind::Y => Mode::new(-1, n),
    };
    GenMode::new(kind, color, offset + Mode::from(rng.gen_range(-span..=span)))
}

/// Random words normalize to the same sum whichever end is rewritten first.
pub fn check_pbw_confluence(q: &QMatrix, n: i64, count: usize, max_len: usize, seed: u64) -> CheckReport {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let words: Vec<Word> = (0..count)
        .map(|_| {
            let len = rng.gen_range(0..=max_len);
            Word((0..len).map(|_| random_generator(&mut rng, q.rank(), n, 4)).collect())
        })
        .collect();
    let vars = VarSet::new(&[Var::X], 1);
    let results = words
        .par_iter()
        .enumerate()
        .map(|(idx, w)| {
            let left = normal_order_by(w, q, Strategy::Leftmost, |g| *g);
            let right = normal_order_by(w, q, Strategy::Rightmost, |g| *g);
            let mut diff = StateVector::zero();
            for (word, c) in left.terms() {
                diff.add_term(word.clone(), c);
            }
            for (word, c) in right.terms() {
                diff.add_term(word.clone(), &-c);
            }
            let series = if diff.is_empty() {
                FracSeries::zero(vars.clone())
            } else {
                FracSeries::from_terms(vars.clone(), [(vec![idx as i64], diff)])
            };
            Residual {
                instance: format!("word {w}"),
                series,
            }
        })
        .collect();
    let window = Window::new(vars, vec![(0, count as i64 - 1)]).expect("window");
    CheckReport::build("pbw_confluence", format!("N={n} seed={seed}"), window, results, start)
}

/// g(h s) − σ h(g s) − δ s on random module states, with (σ, δ) taken from
/// the expected relations.
pub fn check_relation_fidelity(module: &FockModule, expected: &QMatrix, count: usize, seed: u64) -> CheckReport {
    let start = Instant::now();
    let n = module.twist();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let states = test_states(module, 3, -3);
    let jobs: Vec<(GenMode, GenMode, StateVector)> = (0..count)
        .map(|_| {
            let g = random_generator(&mut rng, expected.rank(), n, 3);
            let h = random_generator(&mut rng, expected.rank(), n, 3);
            (g, h, states[rng.gen_range(0..states.len())].clone())
        })
        .collect();
    let vars = VarSet::new(&[Var::X1, Var::X2], n);
    let results = jobs
        .par_iter()
        .map(|(g, h, s)| {
            let apply = |m: &GenMode, v: &StateVector| module.apply_mode(m, v).expect("mode on lattice");
            let (sigma, delta) = expected.swap_rule(g, h);
            let mut diff = apply(g, &apply(h, s)).sub(&apply(h, &apply(g, s)).scale(&sigma));
            if let Some(d) = delta {
                diff = diff.sub(&s.scale(&d));
            }
            let exps = vec![(g.mode * n).to_integer(), (h.mode * n).to_integer()];
            let series = if diff.is_empty() {
                FracSeries::zero(vars.clone())
            } else {
                FracSeries::from_terms(vars.clone(), [(exps, diff)])
            };
            Residual {
                instance: format!("{g} {h} on {s}"),
                series,
            }
        })
        .collect();
    let window = Window::uniform(vars, -4, 4);
    CheckReport::build("relation_fidelity", format!("N={n} seed={seed}"), window, results, start)
}
