//! Sparse formal series in up to three variables with exponents in (1/N)Z.
//!
//! Exponents are stored as integer numerators over the common denominator N.
//! Besides its terms, every series records
//!   * `extent`: per-variable bounds on the true (possibly infinite) support,
//!   * `valid`: the box inside which the stored terms are complete.
//!
//! Products and substitutions use both to decide whether the coefficients
//! they return are exact, and fail loudly when they would not be.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Zero;
use serde::Serialize;
use thiserror::Error;

use crate::scalar::{binomial, root_of_unity, CycloContext, Scalar, ScalarError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SeriesError {
    #[error("variable sets differ: {0}")]
    VarMismatch(String),
    #[error("ill-defined operation: {0}")]
    IllDefined(String),
    #[error("window too small to determine coefficients in {0}")]
    WindowInsufficient(Var),
    #[error("support class {found:?} not admissible here (need {need})")]
    SupportClass { found: SupportClass, need: &'static str },
    #[error("exponent {0}/{1} is off the lattice")]
    Lattice(i64, i64),
    #[error(transparent)]
    Scalar(#[from] ScalarError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Var {
    X,
    X0,
    X1,
    X2,
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Var::X => "x",
            Var::X0 => "x0",
            Var::X1 => "x1",
            Var::X2 => "x2",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct VarSet {
    names: Vec<Var>,
    denom: i64,
}

impl VarSet {
    /// Variables are kept in canonical order (x, x0, x1, x2).
    pub fn new(names: &[Var], denom: i64) -> Self {
        assert!(denom >= 1, "denominator must be positive");
        assert!(names.len() <= 3, "at most three variables");
        let mut names = names.to_vec();
        names.sort();
        names.dedup();
        VarSet { names, denom }
    }

    pub fn names(&self) -> &[Var] {
        &self.names
    }

    pub fn denom(&self) -> i64 {
        self.denom
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn position(&self, v: Var) -> Option<usize> {
        self.names.iter().position(|&n| n == v)
    }

    fn index(&self, v: Var) -> Result<usize, SeriesError> {
        self.position(v)
            .ok_or_else(|| SeriesError::VarMismatch(format!("{v} not in {:?}", self.names)))
    }
}

/// Closed interval with optionally infinite ends, in numerator units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct Bound {
    pub lo: Option<i64>,
    pub hi: Option<i64>,
}

impl Bound {
    pub const FULL: Bound = Bound { lo: None, hi: None };

    pub fn between(lo: i64, hi: i64) -> Self {
        Bound { lo: Some(lo), hi: Some(hi) }
    }

    pub fn at_least(lo: i64) -> Self {
        Bound { lo: Some(lo), hi: None }
    }

    pub fn at_most(hi: i64) -> Self {
        Bound { lo: None, hi: Some(hi) }
    }

    pub fn contains(&self, x: i64) -> bool {
        self.lo.is_none_or(|l| l <= x) && self.hi.is_none_or(|h| x <= h)
    }

    /// Whether `self` contains every point of `inner`.
    pub fn covers(&self, inner: &Bound) -> bool {
        let lo_ok = match (self.lo, inner.lo) {
            (None, _) => true,
            (Some(_), None) => false,
            (Some(a), Some(b)) => a <= b,
        };
        let hi_ok = match (self.hi, inner.hi) {
            (None, _) => true,
            (Some(_), None) => false,
            (Some(a), Some(b)) => b <= a,
        };
        lo_ok && hi_ok
    }

    pub fn is_empty(&self) -> bool {
        matches!((self.lo, self.hi), (Some(l), Some(h)) if l > h)
    }

    pub fn intersect(&self, other: &Bound) -> Bound {
        Bound {
            lo: max_opt(self.lo, other.lo),
            hi: min_opt(self.hi, other.hi),
        }
    }

    pub fn hull(&self, other: &Bound) -> Bound {
        Bound {
            lo: self.lo.zip(other.lo).map(|(a, b)| a.min(b)),
            hi: self.hi.zip(other.hi).map(|(a, b)| a.max(b)),
        }
    }

    fn sum(&self, other: &Bound) -> Bound {
        Bound {
            lo: self.lo.zip(other.lo).map(|(a, b)| a + b),
            hi: self.hi.zip(other.hi).map(|(a, b)| a + b),
        }
    }
}

fn max_opt(a: Option<i64>, b: Option<i64>) -> Option<i64> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x.max(y)),
        (x, None) => x,
        (None, y) => y,
    }
}

fn min_opt(a: Option<i64>, b: Option<i64>) -> Option<i64> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x.min(y)),
        (x, None) => x,
        (None, y) => y,
    }
}

/// A finite box of exponents, one closed interval per variable.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Window {
    vars: VarSet,
    ranges: Vec<(i64, i64)>,
}

impl Window {
    /// `ranges` are numerator intervals in the order of `vars`.
    pub fn new(vars: VarSet, ranges: Vec<(i64, i64)>) -> Result<Self, SeriesError> {
        if ranges.len() != vars.len() {
            return Err(SeriesError::VarMismatch("window arity".into()));
        }
        if ranges.iter().any(|(l, h)| l > h) {
            return Err(SeriesError::IllDefined("window with lo > hi".into()));
        }
        Ok(Window { vars, ranges })
    }

    /// The same integer interval [lo, hi] for every variable.
    pub fn uniform(vars: VarSet, lo: i64, hi: i64) -> Self {
        let d = vars.denom;
        let ranges = vec![(lo * d, hi * d); vars.len()];
        Window::new(vars, ranges).expect("uniform window")
    }

    pub fn vars(&self) -> &VarSet {
        &self.vars
    }

    pub fn range(&self, v: Var) -> Option<(i64, i64)> {
        self.vars.position(v).map(|i| self.ranges[i])
    }

    pub fn ranges(&self) -> &[(i64, i64)] {
        &self.ranges
    }

    pub fn contains(&self, exps: &[i64]) -> bool {
        exps.iter().zip(&self.ranges).all(|(e, (l, h))| l <= e && e <= h)
    }

    fn bounds(&self) -> Vec<Bound> {
        self.ranges.iter().map(|&(l, h)| Bound::between(l, h)).collect()
    }
}

impl fmt::Display for Window {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let d = self.vars.denom;
        let parts: Vec<String> = self
            .vars
            .names
            .iter()
            .zip(&self.ranges)
            .map(|(v, (l, h))| format!("{v}:[{}, {}]", frac(*l, d), frac(*h, d)))
            .collect();
        write!(f, "{}", parts.join(" "))
    }
}

fn frac(num: i64, den: i64) -> String {
    let q = BigRational::new(num.into(), den.into());
    q.to_string()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum SupportClass {
    Finite,
    /// Iterated Laurent: lower-bounded in the last variable, and in each
    /// earlier variable for every fixed value of the later ones.
    LowerBoundedPerVariable,
    /// One lower bound shared by all variables.
    JointlyLowerBounded,
    /// Anything else (binomial expansions, delta distributions); only the
    /// recorded extent can be relied upon.
    General,
}

/// Coefficients a series may carry.
pub trait Coeff: Clone + fmt::Debug + PartialEq + Send + Sync {
    fn is_zero(&self) -> bool;
    fn accumulate(&mut self, other: &Self);
    fn negated(&self) -> Self;
    fn scaled(&self, s: &Scalar) -> Self;
    fn scaled_rational(&self, q: &BigRational) -> Self;
    fn to_json(&self) -> serde_json::Value;
}

impl Coeff for Scalar {
    fn is_zero(&self) -> bool {
        Scalar::is_zero(self)
    }
    fn accumulate(&mut self, other: &Self) {
        *self += other;
    }
    fn negated(&self) -> Self {
        -self
    }
    fn scaled(&self, s: &Scalar) -> Self {
        self * s
    }
    fn scaled_rational(&self, q: &BigRational) -> Self {
        self.scale_rational(q)
    }
    fn to_json(&self) -> serde_json::Value {
        serde_json::json!(self.to_literal())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FracSeries<C> {
    vars: VarSet,
    support: SupportClass,
    extent: Vec<Bound>,
    valid: Vec<Bound>,
    terms: BTreeMap<Vec<i64>, C>,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct TermExport {
    pub exponents: Vec<i64>,
    pub coeff: serde_json::Value,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct SeriesExport {
    pub denominator: i64,
    pub vars: Vec<String>,
    pub terms: Vec<TermExport>,
}

impl<C: Coeff> FracSeries<C> {
    pub fn zero(vars: VarSet) -> Self {
        let n = vars.len();
        FracSeries {
            vars,
            support: SupportClass::Finite,
            extent: vec![Bound::FULL; n],
            valid: vec![Bound::FULL; n],
            terms: BTreeMap::new(),
        }
    }

    /// A finite series; it is exact everywhere.
    pub fn from_terms(vars: VarSet, terms: impl IntoIterator<Item = (Vec<i64>, C)>) -> Self {
        let mut s = Self::zero(vars);
        for (e, c) in terms {
            s.add_term(e, &c);
        }
        s
    }

    /// Terms of a possibly infinite series, complete inside `valid`.
    pub fn truncated(
        vars: VarSet,
        support: SupportClass,
        extent: Vec<Bound>,
        valid: Vec<Bound>,
        terms: impl IntoIterator<Item = (Vec<i64>, C)>,
    ) -> Self {
        assert_eq!(extent.len(), vars.len());
        assert_eq!(valid.len(), vars.len());
        let mut s = FracSeries {
            vars,
            support,
            extent,
            valid,
            terms: BTreeMap::new(),
        };
        for (e, c) in terms {
            s.add_term(e, &c);
        }
        s
    }

    pub fn vars(&self) -> &VarSet {
        &self.vars
    }

    pub fn denom(&self) -> i64 {
        self.vars.denom
    }

    pub fn support_class(&self) -> SupportClass {
        self.support
    }

    pub fn valid(&self) -> &[Bound] {
        &self.valid
    }

    /// Bounds on the true support; for finite series computed from the terms.
    pub fn extent(&self) -> Vec<Bound> {
        if self.support != SupportClass::Finite {
            return self.extent.clone();
        }
        (0..self.vars.len())
            .map(|i| {
                let lo = self.terms.keys().map(|e| e[i]).min().unwrap_or(0);
                let hi = self.terms.keys().map(|e| e[i]).max().unwrap_or(0);
                Bound::between(lo, hi)
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Vec<i64>, &C)> {
        self.terms.iter()
    }

    pub fn get(&self, exps: &[i64]) -> Option<&C> {
        self.terms.get(exps)
    }

    /// Adds `c` at `exps`, removing the entry if it cancels.
    pub fn add_term(&mut self, exps: Vec<i64>, c: &C) {
        assert_eq!(exps.len(), self.vars.len(), "exponent arity");
        if c.is_zero() {
            return;
        }
        match self.terms.get_mut(&exps) {
            Some(existing) => {
                existing.accumulate(c);
                if existing.is_zero() {
                    self.terms.remove(&exps);
                }
            }
            None => {
                self.terms.insert(exps, c.clone());
            }
        }
    }

    fn same_vars(&self, other: &Self) -> Result<(), SeriesError> {
        if self.vars != other.vars {
            return Err(SeriesError::VarMismatch(format!(
                "{:?}/{} vs {:?}/{}",
                self.vars.names, self.vars.denom, other.vars.names, other.vars.denom
            )));
        }
        Ok(())
    }

    fn combine(&self, other: &Self, negate: bool) -> Result<Self, SeriesError> {
        self.same_vars(other)?;
        let mut out = self.clone();
        out.support = weaker(self.support, other.support);
        let (ea, eb) = (self.extent(), other.extent());
        out.extent = ea.iter().zip(&eb).map(|(a, b)| a.hull(b)).collect();
        out.valid = self.valid.iter().zip(&other.valid).map(|(a, b)| a.intersect(b)).collect();
        for (e, c) in &other.terms {
            let c = if negate { c.negated() } else { c.clone() };
            out.add_term(e.clone(), &c);
        }
        Ok(out)
    }

    pub fn add(&self, other: &Self) -> Result<Self, SeriesError> {
        self.combine(other, false)
    }

    pub fn sub(&self, other: &Self) -> Result<Self, SeriesError> {
        self.combine(other, true)
    }

    pub fn scale(&self, s: &Scalar) -> Self {
        let mut out = self.clone();
        out.terms = self
            .terms
            .iter()
            .map(|(e, c)| (e.clone(), c.scaled(s)))
            .filter(|(_, c)| !c.is_zero())
            .collect();
        out
    }

    /// Multiplication by the monomial with exponent numerators `shift`.
    pub fn shift(&self, shift: &[i64]) -> Self {
        let mut out = self.clone();
        let mv = |b: &Bound, s: i64| Bound {
            lo: b.lo.map(|x| x + s),
            hi: b.hi.map(|x| x + s),
        };
        out.extent = self.extent.iter().zip(shift).map(|(b, &s)| mv(b, s)).collect();
        out.valid = self.valid.iter().zip(shift).map(|(b, &s)| mv(b, s)).collect();
        out.terms = self
            .terms
            .iter()
            .map(|(e, c)| (e.iter().zip(shift).map(|(a, b)| a + b).collect(), c.clone()))
            .collect();
        out
    }

    /// Keeps only the terms inside `w` and records `w` as the validity box.
    pub fn restrict(&self, w: &Window) -> Result<Self, SeriesError> {
        if *w.vars() != self.vars {
            return Err(SeriesError::VarMismatch("restrict".into()));
        }
        let mut out = self.clone();
        out.extent = self.extent();
        out.terms.retain(|e, _| w.contains(e));
        out.valid = self.valid.iter().zip(w.bounds()).map(|(a, b)| a.intersect(&b)).collect();
        if out.support == SupportClass::Finite && out.terms.len() != self.terms.len() {
            out.support = SupportClass::General;
        }
        Ok(out)
    }

    /// Equality of the coefficients inside `w`, which both series must determine.
    pub fn agrees_on(&self, other: &Self, w: &Window) -> Result<bool, SeriesError> {
        self.same_vars(other)?;
        for s in [self, other] {
            for (i, b) in w.bounds().iter().enumerate() {
                if !s.valid[i].covers(b) {
                    return Err(SeriesError::WindowInsufficient(s.vars.names[i]));
                }
            }
        }
        let inside = |s: &Self| -> BTreeMap<Vec<i64>, C> {
            s.terms.iter().filter(|(e, _)| w.contains(e)).map(|(e, c)| (e.clone(), c.clone())).collect()
        };
        Ok(inside(self) == inside(other))
    }

    /// Adds variables absent from `self` with exponent 0.
    pub fn embed(&self, vars: &VarSet) -> Result<Self, SeriesError> {
        if vars.denom != self.vars.denom {
            return Err(SeriesError::VarMismatch("denominators differ".into()));
        }
        let map: Vec<Option<usize>> = vars.names.iter().map(|&v| self.vars.position(v)).collect();
        if self.vars.names.iter().any(|&v| vars.position(v).is_none()) {
            return Err(SeriesError::VarMismatch("embed target lacks a variable".into()));
        }
        let pick = |src: &[Bound], fill: Bound| -> Vec<Bound> {
            map.iter().map(|m| m.map_or(fill, |i| src[i])).collect()
        };
        let ext = self.extent();
        Ok(FracSeries {
            vars: vars.clone(),
            support: self.support,
            extent: pick(&ext, Bound::between(0, 0)),
            valid: pick(&self.valid, Bound::FULL),
            terms: self
                .terms
                .iter()
                .map(|(e, c)| (map.iter().map(|m| m.map_or(0, |i| e[i])).collect(), c.clone()))
                .collect(),
        })
    }

    pub fn export(&self) -> SeriesExport {
        SeriesExport {
            denominator: self.vars.denom,
            vars: self.vars.names.iter().map(|v| v.to_string()).collect(),
            terms: self
                .terms
                .iter()
                .map(|(e, c)| TermExport {
                    exponents: e.clone(),
                    coeff: c.to_json(),
                })
                .collect(),
        }
    }
}

fn weaker(a: SupportClass, b: SupportClass) -> SupportClass {
    use SupportClass::*;
    match (a, b) {
        (Finite, x) | (x, Finite) => x,
        (General, _) | (_, General) => General,
        (JointlyLowerBounded, JointlyLowerBounded) => JointlyLowerBounded,
        _ => LowerBoundedPerVariable,
    }
}

/// Cauchy product restricted to `w`, exact at every exponent of `w`.
pub fn series_mul<C: Coeff>(a: &FracSeries<Scalar>, b: &FracSeries<C>, w: &Window) -> Result<FracSeries<C>, SeriesError> {
    if a.vars != b.vars || *w.vars() != a.vars {
        return Err(SeriesError::VarMismatch("series_mul operands".into()));
    }
    let (ea, eb) = (a.extent(), b.extent());
    for (i, &(lo, hi)) in w.ranges.iter().enumerate() {
        let v = a.vars.names[i];
        let (la, ua, lb, ub) = (ea[i].lo, ea[i].hi, eb[i].lo, eb[i].hi);
        if (la.is_none() && ub.is_none()) || (ua.is_none() && lb.is_none()) {
            return Err(SeriesError::IllDefined(format!("opposite infinite supports in {v}")));
        }
        // Source exponents feeding targets in [lo, hi].
        let need_a = Bound {
            lo: max_opt(la, ub.map(|u| lo - u)),
            hi: min_opt(ua, lb.map(|l| hi - l)),
        };
        let need_b = Bound {
            lo: max_opt(lb, ua.map(|u| lo - u)),
            hi: min_opt(ub, la.map(|l| hi - l)),
        };
        if (!need_a.is_empty() && !a.valid[i].covers(&need_a)) || (!need_b.is_empty() && !b.valid[i].covers(&need_b)) {
            return Err(SeriesError::WindowInsufficient(v));
        }
    }
    let mut terms: BTreeMap<Vec<i64>, C> = BTreeMap::new();
    for (e1, c1) in &a.terms {
        for (e2, c2) in &b.terms {
            let e: Vec<i64> = e1.iter().zip(e2).map(|(x, y)| x + y).collect();
            if !w.contains(&e) {
                continue;
            }
            let c = c2.scaled(c1);
            match terms.get_mut(&e) {
                Some(acc) => acc.accumulate(&c),
                None => {
                    terms.insert(e, c);
                }
            }
        }
    }
    terms.retain(|_, c| !c.is_zero());
    let support = if a.support == SupportClass::Finite && b.support == SupportClass::Finite {
        SupportClass::General
    } else {
        weaker(a.support, b.support)
    };
    Ok(FracSeries {
        vars: a.vars.clone(),
        support,
        extent: ea.iter().zip(&eb).map(|(x, y)| x.sum(y)).collect(),
        valid: w.bounds(),
        terms,
    })
}

fn rat(num: i64, den: i64) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

/// `(u ± v)^α` expanded in nonnegative powers of `v`, restricted to `w`.
pub fn binom_expand(
    ctx: &Arc<CycloContext>,
    u: Var,
    v: Var,
    sign: i8,
    alpha: &BigRational,
    w: &Window,
) -> Result<FracSeries<Scalar>, SeriesError> {
    let vars = w.vars().clone();
    let d = vars.denom;
    let (iu, iv) = (vars.index(u)?, vars.index(v)?);
    let scaled = alpha * BigRational::from_integer(d.into());
    if !scaled.is_integer() {
        return Err(SeriesError::Lattice(scaled.numer().try_into().unwrap_or(0), d));
    }
    let a_num: i64 = scaled.to_integer().try_into().map_err(|_| SeriesError::IllDefined("exponent overflow".into()))?;
    let (ulo, uhi) = w.ranges[iu];
    let (vlo, vhi) = w.ranges[iv];
    // i ranges over nonnegative integers with i*d ≤ vhi and a_num - i*d ≥ ulo.
    let imax = (vhi.div_euclid(d)).min((a_num - ulo).div_euclid(d));
    let mut out = FracSeries::truncated(
        vars.clone(),
        SupportClass::General,
        {
            let mut e = vec![Bound::between(0, 0); vars.len()];
            e[iu] = Bound::at_most(a_num);
            e[iv] = Bound::at_least(0);
            e
        },
        {
            let mut val = vec![Bound::FULL; vars.len()];
            val[iu] = Bound::at_least(a_num - imax.max(-1) * d);
            val[iv] = Bound::at_most(imax.max(-1) * d);
            val
        },
        std::iter::empty(),
    );
    let sign_q = rat(sign as i64, 1);
    for i in 0..=imax.max(-1) {
        let (eu, ev) = (a_num - i * d, i * d);
        if eu > uhi || ev < vlo {
            continue;
        }
        let c = binomial(alpha, i as u64) * num_traits::pow(sign_q.clone(), i as usize);
        let mut e = vec![0; vars.len()];
        e[iu] = eu;
        e[iv] = ev;
        out.add_term(e, &Scalar::from_rational(ctx, c));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    /// x1 ↦ x2 + x0, expanded in nonnegative powers of x0.
    X2PlusX0,
    /// x1 ↦ x0 + x2, expanded in nonnegative powers of x2.
    X0PlusX2,
}

/// `F(x1, x2)` with `x1` replaced by a two-term sum, as a series in (x0, x2).
pub fn subst_to_sum<C: Coeff>(f: &FracSeries<C>, orientation: Orientation, w: &Window) -> Result<FracSeries<C>, SeriesError> {
    if f.vars.names != [Var::X1, Var::X2] {
        return Err(SeriesError::VarMismatch("subst_to_sum expects (x1, x2)".into()));
    }
    use SupportClass::*;
    let (lead, tail, need_ok, need) = match orientation {
        Orientation::X2PlusX0 => (
            Var::X2,
            Var::X0,
            matches!(f.support, Finite | JointlyLowerBounded),
            "jointly lower-bounded",
        ),
        Orientation::X0PlusX2 => (
            Var::X0,
            Var::X2,
            matches!(f.support, Finite | JointlyLowerBounded | LowerBoundedPerVariable),
            "iterated lower-bounded",
        ),
    };
    if !need_ok {
        return Err(SeriesError::SupportClass { found: f.support, need });
    }
    substitute(f, Var::X1, lead, tail, 1, w)
}

/// `F(x1, x2)` with `x2 ↦ x1 − x0`, expanded in nonnegative powers of x0.
pub fn subst_x2_to_difference<C: Coeff>(f: &FracSeries<C>, w: &Window) -> Result<FracSeries<C>, SeriesError> {
    if f.vars.names != [Var::X1, Var::X2] {
        return Err(SeriesError::VarMismatch("expects (x1, x2)".into()));
    }
    substitute(f, Var::X2, Var::X1, Var::X0, -1, w)
}

/// Replaces `var` by `lead ± tail`, `(lead ± tail)^γ = Σ_i C(γ,i)(±1)^i lead^{γ-i} tail^i`.
/// The output variables are those of `f` without `var`, plus `lead` and `tail`.
pub fn substitute<C: Coeff>(f: &FracSeries<C>, var: Var, lead: Var, tail: Var, sign: i8, w: &Window) -> Result<FracSeries<C>, SeriesError> {
    let d = f.vars.denom;
    let src = &f.vars;
    let iv = src.index(var)?;
    let (il, it) = (src.position(lead), src.position(tail));
    let mut out_names: Vec<Var> = src.names.iter().copied().filter(|&v| v != var).collect();
    out_names.extend([lead, tail]);
    let out_vars = VarSet::new(&out_names, d);
    if *w.vars() != out_vars {
        return Err(SeriesError::VarMismatch("substitution window".into()));
    }
    let (ol, ot) = (out_vars.index(lead)?, out_vars.index(tail)?);
    let (plo, phi) = w.ranges[ol];
    let (qlo, qhi) = w.ranges[ot];
    let ext = f.extent();

    // Source boxes that can feed the window.
    let zero = Bound::between(0, 0);
    let eb = it.map_or(zero, |i| ext[i]);
    let ea = il.map_or(zero, |i| ext[i]);
    let eg = ext[iv];
    let b_rng = Bound {
        lo: eb.lo,
        hi: min_opt(eb.hi, Some(qhi)),
    };
    let Some(b_lo) = b_rng.lo else {
        return Err(SeriesError::IllDefined(format!("{tail} unbounded below")));
    };
    let b_hi = b_rng.hi.unwrap();
    let (s_lo, s_hi) = (plo + qlo - b_hi, phi + qhi - b_lo);
    let a_rng = Bound {
        lo: max_opt(ea.lo, eg.hi.map(|u| s_lo - u)),
        hi: min_opt(ea.hi, eg.lo.map(|l| s_hi - l)),
    };
    let (Some(a_lo), Some(a_hi)) = (a_rng.lo, a_rng.hi) else {
        return Err(SeriesError::IllDefined(format!("{var} and {lead} not jointly bounded")));
    };
    let g_rng = Bound {
        lo: max_opt(eg.lo, Some(s_lo - a_hi)),
        hi: min_opt(eg.hi, Some(s_hi - a_lo)),
    };
    let mut required = vec![None; src.len()];
    required[iv] = Some(g_rng);
    if let Some(i) = il {
        required[i] = Some(a_rng);
    }
    if let Some(i) = it {
        required[i] = Some(b_rng);
    }
    for (i, r) in required.iter_mut().enumerate() {
        if r.is_none() {
            let (lo, hi) = w.range(src.names[i]).unwrap();
            *r = Some(Bound::between(lo, hi).intersect(&ext[i]));
        }
    }
    for (i, r) in required.iter().enumerate() {
        let r = r.unwrap();
        if !r.is_empty() && !f.valid[i].covers(&r) {
            return Err(SeriesError::WindowInsufficient(src.names[i]));
        }
    }

    // Tail exponents only grow; lead exponents are capped by var + lead.
    let extent: Vec<Bound> = out_vars
        .names
        .iter()
        .map(|&v| {
            if v == tail {
                Bound { lo: eb.lo, hi: None }
            } else if v == lead {
                Bound {
                    lo: None,
                    hi: ea.hi.zip(eg.hi).map(|(x, y)| x + y),
                }
            } else {
                src.position(v).map_or(Bound::FULL, |i| ext[i])
            }
        })
        .collect();
    let mut out: FracSeries<C> = FracSeries::truncated(
        out_vars.clone(),
        SupportClass::General,
        extent,
        w.bounds(),
        std::iter::empty(),
    );
    let sign_q = rat(sign as i64, 1);
    for (e, c) in &f.terms {
        let g = e[iv];
        let a = il.map_or(0, |i| e[i]);
        let b = it.map_or(0, |i| e[i]);
        let mut target = vec![0; out_vars.len()];
        for (k, &v) in src.names.iter().enumerate() {
            if v != var && v != lead && v != tail {
                target[out_vars.index(v)?] = e[k];
            }
        }
        if !w.contains(&{
            let mut t = target.clone();
            t[ol] = plo;
            t[ot] = qlo;
            t
        }) {
            continue;
        }
        let i_lo = (qlo - b).div_euclid(d) + i64::from((qlo - b).rem_euclid(d) != 0);
        let i_lo = i_lo.max(0);
        let i_hi = (qhi - b).div_euclid(d).min((g + a - plo).div_euclid(d));
        let gamma = rat(g, d);
        for i in i_lo..=i_hi {
            let p = g + a - i * d;
            if p > phi {
                continue;
            }
            target[ol] = p;
            target[ot] = b + i * d;
            let k = binomial(&gamma, i as u64) * num_traits::pow(sign_q.clone(), i as usize);
            if !k.is_zero() {
                out.add_term(target.clone(), &c.scaled_rational(&k));
            }
        }
    }
    Ok(out)
}

/// Coefficient of `v^{-1}` as a series in the remaining variables.
pub fn residue<C: Coeff>(f: &FracSeries<C>, v: Var) -> Result<FracSeries<C>, SeriesError> {
    let i = f.vars.index(v)?;
    let d = f.vars.denom;
    if !f.valid[i].contains(-d) {
        return Err(SeriesError::WindowInsufficient(v));
    }
    let rest: Vec<Var> = f.vars.names.iter().copied().filter(|&x| x != v).collect();
    let drop = |b: &[Bound]| -> Vec<Bound> {
        b.iter().enumerate().filter(|(k, _)| *k != i).map(|(_, x)| *x).collect()
    };
    let ext = f.extent();
    Ok(FracSeries::truncated(
        VarSet::new(&rest, d),
        if f.support == SupportClass::Finite {
            SupportClass::Finite
        } else {
            SupportClass::General
        },
        drop(&ext),
        drop(&f.valid),
        f.terms.iter().filter(|(e, _)| e[i] == -d).map(|(e, c)| {
            let mut e = e.clone();
            e.remove(i);
            (e, c.clone())
        }),
    ))
}

/// Formal derivative in `v`; fractional exponents included.
pub fn derivative<C: Coeff>(f: &FracSeries<C>, v: Var) -> Result<FracSeries<C>, SeriesError> {
    let i = f.vars.index(v)?;
    let d = f.vars.denom;
    let mut ext = f.extent();
    let mut valid = f.valid.clone();
    for b in [&mut ext[i], &mut valid[i]] {
        b.lo = b.lo.map(|x| x - d);
        b.hi = b.hi.map(|x| x - d);
    }
    Ok(FracSeries::truncated(
        f.vars.clone(),
        if f.support == SupportClass::Finite {
            SupportClass::Finite
        } else {
            f.support
        },
        ext,
        valid,
        f.terms.iter().map(|(e, c)| {
            let mut e2 = e.clone();
            e2[i] -= d;
            (e2, c.scaled_rational(&rat(e[i], d)))
        }),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DeltaKind {
    /// x0^{-1} δ((x1 − x2)/x0)
    K1,
    /// x0^{-1} δ((x2 − x1)/(−x0))
    K2,
    /// x2^{-1} δ(ω_N^{-j}((x1 − x0)/x2)^{1/N})
    K3,
}

/// Coefficient of `x0^a x1^b x2^c` (numerators over `n`) in a delta kernel.
pub fn delta_coeff(
    ctx: &Arc<CycloContext>,
    n: i64,
    kind: DeltaKind,
    j: i64,
    [a, b, c]: [i64; 3],
) -> Result<Option<Scalar>, SeriesError> {
    let sgn = |k: i64| if k.rem_euclid(2) == 0 { 1 } else { -1 };
    match kind {
        DeltaKind::K1 | DeltaKind::K2 => {
            if a % n != 0 || b % n != 0 || c % n != 0 {
                return Ok(None);
            }
            let (a, b, c) = (a / n, b / n, c / n);
            if a + b + c != -1 {
                return Ok(None);
            }
            let p = -a - 1;
            let (i, extra) = match kind {
                DeltaKind::K1 => (c, 1),
                _ => (b, sgn(p)),
            };
            if i < 0 {
                return Ok(None);
            }
            let k = binomial(&rat(p, 1), i as u64) * rat(sgn(i) * extra, 1);
            Ok((!k.is_zero()).then(|| Scalar::from_rational(ctx, k)))
        }
        DeltaKind::K3 => {
            if a % n != 0 || a < 0 {
                return Ok(None);
            }
            let i = a / n;
            let p = -c - n;
            if b != p - i * n {
                return Ok(None);
            }
            let k = binomial(&rat(p, n), i as u64) * rat(sgn(i), 1);
            if k.is_zero() {
                return Ok(None);
            }
            let w = root_of_unity(ctx, n as u32, -j * p)?;
            Ok(Some(w.scale_rational(&k)))
        }
    }
}

/// A delta kernel in (x0, x1, x2) restricted to `w`.
pub fn delta_expand(ctx: &Arc<CycloContext>, kind: DeltaKind, j: i64, w: &Window) -> Result<FracSeries<Scalar>, SeriesError> {
    let vars = w.vars().clone();
    if vars.names != [Var::X0, Var::X1, Var::X2] {
        return Err(SeriesError::VarMismatch("delta kernels live in (x0, x1, x2)".into()));
    }
    let n = vars.denom;
    let [(alo, ahi), (blo, bhi), (clo, chi)] = [w.ranges[0], w.ranges[1], w.ranges[2]];
    let mut out = FracSeries::truncated(
        vars.clone(),
        SupportClass::General,
        vec![Bound::FULL; 3],
        w.bounds(),
        std::iter::empty(),
    );
    for a in alo..=ahi {
        // Every kernel is homogeneous of total degree −1.
        for c in clo..=chi {
            let b = -n - a - c;
            if b < blo || b > bhi {
                continue;
            }
            if let Some(k) = delta_coeff(ctx, n, kind, j, [a, b, c])? {
                out.add_term(vec![a, b, c], &k);
            }
        }
    }
    Ok(out)
}

/// `(x2/x1)^{k/N} x1^{-1} δ(x2/x1)` and its `x2`-derivatives, coefficient at
/// `x1^{b} x2^{c}` (numerators), after applying `(1/j!)(∂/∂x2)^j`.
pub fn twisted_delta_derivative_coeff(n: i64, k: i64, j: u64, b: i64, c: i64) -> BigRational {
    // Terms: x1^{-1-m-k/N} x2^{m+k/N}, m ∈ Z; derivative lowers x2 by j.
    let e2 = c + j as i64 * n;
    if b + e2 != -n || (e2 - k).rem_euclid(n) != 0 {
        return BigRational::zero();
    }
    binomial(&rat(e2, n), j)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx() -> Arc<CycloContext> {
        CycloContext::new(12)
    }

    fn s(c: &Arc<CycloContext>, p: i64, q: i64) -> Scalar {
        Scalar::from_rational(c, rat(p, q))
    }

    fn x() -> VarSet {
        VarSet::new(&[Var::X], 1)
    }

    #[test]
    fn product_of_polynomials() {
        let c = ctx();
        let a = FracSeries::from_terms(x(), [(vec![0], s(&c, 1, 1)), (vec![1], s(&c, 1, 1))]);
        let b = FracSeries::from_terms(x(), [(vec![0], s(&c, 1, 1)), (vec![1], s(&c, -1, 1))]);
        let p = series_mul(&a, &b, &Window::uniform(x(), -2, 2)).unwrap();
        let expected = FracSeries::from_terms(x(), [(vec![0], s(&c, 1, 1)), (vec![2], s(&c, -1, 1))]);
        assert_eq!(p.terms().collect::<Vec<_>>(), expected.terms().collect::<Vec<_>>());
    }

    #[test]
    fn geometric_series_times_one_minus_x() {
        let c = ctx();
        let geo = FracSeries::truncated(
            x(),
            SupportClass::LowerBoundedPerVariable,
            vec![Bound::at_least(0)],
            vec![Bound::at_most(10)],
            (0..=10).map(|n| (vec![n], s(&c, 1, 1))),
        );
        let b = FracSeries::from_terms(x(), [(vec![0], s(&c, 1, 1)), (vec![1], s(&c, -1, 1))]);
        let p = series_mul(&geo, &b, &Window::uniform(x(), 0, 10)).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p.get(&[0]), Some(&s(&c, 1, 1)));
        // One step further would need the unknown x^11 term.
        assert_eq!(
            series_mul(&geo, &b, &Window::uniform(x(), 0, 11)).unwrap_err(),
            SeriesError::WindowInsufficient(Var::X)
        );
    }

    #[test]
    fn opposite_infinite_supports_are_rejected() {
        let c = ctx();
        let up = FracSeries::truncated(x(), SupportClass::General, vec![Bound::at_least(0)], vec![Bound::FULL], [(vec![0], s(&c, 1, 1))]);
        let down = FracSeries::truncated(x(), SupportClass::General, vec![Bound::at_most(0)], vec![Bound::FULL], [(vec![0], s(&c, 1, 1))]);
        assert!(matches!(
            series_mul(&up, &down, &Window::uniform(x(), 0, 0)),
            Err(SeriesError::IllDefined(_))
        ));
    }

    #[test]
    fn delta_times_difference_vanishes() {
        let c = ctx();
        let v = VarSet::new(&[Var::X1, Var::X2], 1);
        let delta = FracSeries::truncated(
            v.clone(),
            SupportClass::General,
            vec![Bound::FULL; 2],
            vec![Bound::between(-12, 12); 2],
            (-12..=12).map(|m| (vec![m, -m], s(&c, 1, 1))),
        );
        let diff = FracSeries::from_terms(v.clone(), [(vec![1, 0], s(&c, 1, 1)), (vec![0, 1], s(&c, -1, 1))]);
        let p = series_mul(&delta, &diff, &Window::uniform(v, -5, 5)).unwrap();
        assert!(p.is_empty());
    }

    #[test]
    fn binomial_half_power() {
        let c = ctx();
        let v = VarSet::new(&[Var::X0, Var::X2], 2);
        let w = Window::new(v.clone(), vec![(0, 4), (-10, 10)]).unwrap();
        let b = binom_expand(&c, Var::X2, Var::X0, 1, &rat(1, 2), &w).unwrap();
        assert_eq!(b.get(&[0, 1]), Some(&s(&c, 1, 1)));
        assert_eq!(b.get(&[2, -1]), Some(&s(&c, 1, 2)));
        assert_eq!(b.get(&[4, -3]), Some(&s(&c, -1, 8)));
        assert_eq!(b.len(), 3);
        let one = binom_expand(&c, Var::X2, Var::X0, 1, &rat(1, 1), &w).unwrap();
        assert_eq!(one.len(), 2);
        assert_eq!(one.get(&[0, 2]), Some(&s(&c, 1, 1)));
        assert_eq!(one.get(&[2, 0]), Some(&s(&c, 1, 1)));
    }

    #[test]
    fn binomial_inverse_powers_cancel() {
        let c = ctx();
        let v = VarSet::new(&[Var::X0, Var::X2], 1);
        let wide = Window::new(v.clone(), vec![(0, 8), (-30, 30)]).unwrap();
        let a = binom_expand(&c, Var::X2, Var::X0, 1, &rat(-3, 1), &wide).unwrap();
        let b = binom_expand(&c, Var::X2, Var::X0, 1, &rat(3, 1), &wide).unwrap();
        let target = Window::new(v, vec![(0, 8), (-8, 8)]).unwrap();
        let p = series_mul(&a, &b, &target).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p.get(&[0, 0]), Some(&s(&c, 1, 1)));
    }

    #[test]
    fn substitution_examples() {
        let c = ctx();
        let v12 = VarSet::new(&[Var::X1, Var::X2], 1);
        let f = FracSeries::from_terms(v12, [(vec![1, 0], s(&c, 1, 1)), (vec![0, 1], s(&c, -1, 1))]);
        let w = Window::uniform(VarSet::new(&[Var::X0, Var::X2], 1), -4, 4);
        let g = subst_to_sum(&f, Orientation::X2PlusX0, &w).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g.get(&[1, 0]), Some(&s(&c, 1, 1)));

        let v12 = VarSet::new(&[Var::X1, Var::X2], 2);
        let f = FracSeries::from_terms(v12, [(vec![1, 0], s(&c, 1, 1))]);
        let w = Window::new(VarSet::new(&[Var::X0, Var::X2], 2), vec![(0, 4), (-6, 6)]).unwrap();
        let g = subst_to_sum(&f, Orientation::X2PlusX0, &w).unwrap();
        assert_eq!(g.get(&[0, 1]), Some(&s(&c, 1, 1)));
        assert_eq!(g.get(&[2, -1]), Some(&s(&c, 1, 2)));
        assert_eq!(g.get(&[4, -3]), Some(&s(&c, -1, 8)));
    }

    #[test]
    fn substitution_requires_support_class() {
        let c = ctx();
        let v12 = VarSet::new(&[Var::X1, Var::X2], 1);
        let f = FracSeries::truncated(
            v12,
            SupportClass::LowerBoundedPerVariable,
            vec![Bound::FULL, Bound::at_least(0)],
            vec![Bound::FULL; 2],
            [(vec![0, 0], s(&c, 1, 1))],
        );
        let w = Window::uniform(VarSet::new(&[Var::X0, Var::X2], 1), -2, 2);
        assert!(matches!(
            subst_to_sum(&f, Orientation::X2PlusX0, &w),
            Err(SeriesError::SupportClass { .. })
        ));
        assert!(subst_to_sum(&f, Orientation::X0PlusX2, &w).is_ok());
    }

    #[test]
    fn residues_and_derivatives() {
        let c = ctx();
        let f = FracSeries::from_terms(x(), [(vec![-1], s(&c, 3, 1)), (vec![2], s(&c, 1, 1))]);
        let r = residue(&f, Var::X).unwrap();
        assert_eq!(r.get(&[]), Some(&s(&c, 3, 1)));
        let g = FracSeries::from_terms(x(), [(vec![2], s(&c, 1, 1))]);
        assert!(residue(&g, Var::X).unwrap().is_empty());

        let half = VarSet::new(&[Var::X], 2);
        let f = FracSeries::from_terms(half.clone(), [(vec![1], s(&c, 1, 1)), (vec![0], s(&c, 5, 1))]);
        let df = derivative(&f, Var::X).unwrap();
        assert_eq!(df.len(), 1);
        assert_eq!(df.get(&[-1]), Some(&s(&c, 1, 2)));
    }

    #[test]
    fn delta_kernels() {
        let c = ctx();
        let v = VarSet::new(&[Var::X0, Var::X1, Var::X2], 1);
        let w = Window::uniform(v.clone(), -4, 4);
        let k1 = delta_expand(&c, DeltaKind::K1, 0, &w).unwrap();
        // n = 0 term of K1 is x0^{-1}.
        assert_eq!(k1.get(&[-1, 0, 0]), Some(&s(&c, 1, 1)));
        // x0^{-2}(x1 - x2)^1.
        assert_eq!(k1.get(&[-2, 1, 0]), Some(&s(&c, 1, 1)));
        assert_eq!(k1.get(&[-2, 0, 1]), Some(&s(&c, -1, 1)));
        // x0^{-1}δ((x2 − x1)/(−x0)) agrees with K1 on nonnegative powers of (x1 − x2).
        let k2 = delta_expand(&c, DeltaKind::K2, 0, &w).unwrap();
        for e in [[-1, 0, 0], [-2, 1, 0], [-2, 0, 1], [-3, 1, 1]] {
            assert_eq!(k2.get(&e), k1.get(&e));
        }
        // x0^{0}: −(x2 − x1)^{-1} = −x2^{-1} − x1 x2^{-2} − …
        assert_eq!(k2.get(&[0, 0, -1]), Some(&s(&c, -1, 1)));
        assert_eq!(k2.get(&[0, 1, -2]), Some(&s(&c, -1, 1)));
        assert_eq!(k2.get(&[0, -1, 0]), None);
        let k3 = delta_expand(&c, DeltaKind::K3, 0, &w).unwrap();
        // N = 1: x2^{-1} δ((x1 − x0)/x2) = Σ_n x2^{-1-n}(x1-x0)^n.
        assert_eq!(k3.get(&[0, 0, -1]), Some(&s(&c, 1, 1)));
        assert_eq!(k3.get(&[1, 1, -3]), Some(&s(&c, -2, 1)));
    }

    #[test]
    fn k3_average_projects_to_multiples_of_n() {
        let c = ctx();
        for n in [2i64, 3, 4] {
            let v = VarSet::new(&[Var::X0, Var::X1, Var::X2], n);
            let w = Window::uniform(v.clone(), -3, 3);
            let mut avg = FracSeries::zero(v.clone());
            for j in 0..n {
                avg = avg.add(&delta_expand(&c, DeltaKind::K3, j, &w).unwrap()).unwrap();
            }
            let avg = avg.scale(&s(&c, 1, n));
            for (e, coeff) in avg.terms() {
                let p = -e[2] - n;
                assert_eq!(p.rem_euclid(n), 0);
                assert_eq!(Some(coeff), delta_expand(&c, DeltaKind::K3, 0, &w).unwrap().get(e));
            }
            assert!(!avg.is_empty());
        }
    }
}
