//! Vacuum modules: V_Q (N = 1) and the twisted Fock module over A_Q[θ_N].
//!
//! Basis states are canonical words of creators (mode < 0) applied to the
//! vacuum |0>; modes ≥ 0 annihilate |0>. Two gradings are used:
//!   * weight, Σ(−m − 1/2) over factors,
//!   * grade, X: −m − 1 + 1/N and Y: −m − 1/N. It is a nonnegative integer on
//!     basis states, additive, and preserved by the relations, so it bounds
//!     which modes can act nontrivially.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use num_rational::{BigRational, Rational64};
use num_traits::{One, Zero};
use thiserror::Error;

use crate::algebra::{normal_order_by, top_creator_mode, theta_scale, AlgebraError, GenMode, Kind, Mode, QMatrix, Strategy, Word};
use crate::scalar::{CycloContext, Scalar, ScalarError};
use crate::series::Coeff;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FockError {
    #[error("{g} is not on the mode lattice for N = {n}")]
    Lattice { g: GenMode, n: i64 },
    #[error("{0} is not a basis monomial")]
    NotBasis(Word),
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
    #[error(transparent)]
    Scalar(#[from] ScalarError),
}

/// A finite combination of basis monomials.
#[derive(Clone, PartialEq, Default)]
pub struct StateVector {
    terms: BTreeMap<Word, Scalar>,
}

impl StateVector {
    pub fn zero() -> Self {
        StateVector::default()
    }

    pub fn monomial(w: Word, c: Scalar) -> Self {
        let mut s = StateVector::zero();
        s.add_term(w, &c);
        s
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Word, &Scalar)> {
        self.terms.iter()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn get(&self, w: &Word) -> Option<&Scalar> {
        self.terms.get(w)
    }

    pub fn add_term(&mut self, w: Word, c: &Scalar) {
        if c.is_zero() {
            return;
        }
        match self.terms.get_mut(&w) {
            Some(acc) => {
                *acc += c;
                if acc.is_zero() {
                    self.terms.remove(&w);
                }
            }
            None => {
                self.terms.insert(w, c.clone());
            }
        }
    }

    pub fn add_scaled(&mut self, other: &StateVector, c: &Scalar) {
        if c.is_zero() {
            return;
        }
        for (w, x) in &other.terms {
            if c.is_one() {
                self.add_term(w.clone(), x);
            } else {
                self.add_term(w.clone(), &(x * c));
            }
        }
    }

    pub fn add_scaled_rational(&mut self, other: &StateVector, c: &BigRational) {
        if c.is_zero() {
            return;
        }
        for (w, x) in &other.terms {
            self.add_term(w.clone(), &x.scale_rational(c));
        }
    }

    pub fn add(&self, other: &StateVector) -> StateVector {
        let mut out = self.clone();
        out.accumulate(other);
        out
    }

    pub fn sub(&self, other: &StateVector) -> StateVector {
        let mut out = self.clone();
        for (w, x) in &other.terms {
            out.add_term(w.clone(), &-x);
        }
        out
    }

    pub fn scale(&self, c: &Scalar) -> StateVector {
        if c.is_zero() {
            return StateVector::zero();
        }
        StateVector {
            terms: self.terms.iter().map(|(w, x)| (w.clone(), x * c)).collect(),
        }
    }

    /// Parses `"X[1,-1] Y[2,-3/2] |0>"`, optionally prefixed by `"(c)*"`.
    pub fn parse(ctx: &Arc<CycloContext>, text: &str) -> Result<StateVector, FockError> {
        let err = || AlgebraError::Parse(text.to_string());
        let t = text.trim();
        if t == "0" {
            return Ok(StateVector::zero());
        }
        let (coeff, rest) = match t.strip_prefix('(') {
            Some(r) => {
                let (c, rest) = r.split_once(")*").ok_or_else(err)?;
                (Scalar::parse_expr(ctx, c)?, rest)
            }
            None => (Scalar::one(ctx), t),
        };
        let body = rest.trim().strip_suffix("|0>").ok_or_else(err)?;
        let w: Word = body.parse()?;
        Ok(StateVector::monomial(w, coeff))
    }
}

impl fmt::Display for StateVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let parts: Vec<String> = self
            .terms
            .iter()
            .map(|(w, c)| {
                let ket = if w.is_empty() { "|0>".to_string() } else { format!("{w} |0>") };
                if c.is_one() {
                    ket
                } else {
                    format!("({c})*{ket}")
                }
            })
            .collect();
        write!(f, "{}", parts.join(" + "))
    }
}

impl fmt::Debug for StateVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl Coeff for StateVector {
    fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }
    fn accumulate(&mut self, other: &Self) {
        for (w, x) in &other.terms {
            self.add_term(w.clone(), x);
        }
    }
    fn negated(&self) -> Self {
        StateVector {
            terms: self.terms.iter().map(|(w, x)| (w.clone(), -x)).collect(),
        }
    }
    fn scaled(&self, s: &Scalar) -> Self {
        self.scale(s)
    }
    fn scaled_rational(&self, q: &BigRational) -> Self {
        StateVector {
            terms: self
                .terms
                .iter()
                .map(|(w, x)| (w.clone(), x.scale_rational(q)))
                .filter(|(_, x)| !x.is_zero())
                .collect(),
        }
    }
    fn to_json(&self) -> serde_json::Value {
        serde_json::Value::String(self.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Weight {
    Homogeneous(Rational64),
    Mixed,
    /// The zero vector has every weight.
    Zero,
}

/// The vacuum module of A_Q (N = 1) or A_Q[θ_N] (N ≥ 2).
#[derive(Debug, Clone)]
pub struct FockModule {
    q: Arc<QMatrix>,
    n: i64,
}

impl FockModule {
    pub fn new(q: Arc<QMatrix>, n: u32) -> Self {
        assert!(n >= 1);
        FockModule { q, n: n as i64 }
    }

    pub fn q(&self) -> &QMatrix {
        &self.q
    }

    pub fn q_arc(&self) -> &Arc<QMatrix> {
        &self.q
    }

    pub fn twist(&self) -> i64 {
        self.n
    }

    pub fn context(&self) -> &Arc<CycloContext> {
        self.q.context()
    }

    pub fn vacuum(&self) -> StateVector {
        StateVector::monomial(Word::empty(), Scalar::one(self.context()))
    }

    pub fn check_mode(&self, g: &GenMode) -> Result<(), FockError> {
        self.q.check_color(g)?;
        if !g.on_lattice(self.n) {
            return Err(FockError::Lattice { g: *g, n: self.n });
        }
        Ok(())
    }

    /// The basis state for a canonical creator word.
    pub fn basis_state(&self, w: &Word) -> Result<StateVector, FockError> {
        for g in w.factors() {
            self.check_mode(g)?;
        }
        let canonical = w.factors().windows(2).all(|p| p[0] < p[1] || (p[0] == p[1] && !self.q.square_vanishes(p[0].color)));
        if !canonical || w.factors().iter().any(|g| !g.is_creator()) {
            return Err(FockError::NotBasis(w.clone()));
        }
        Ok(StateVector::monomial(w.clone(), Scalar::one(self.context())))
    }

    /// `factors[0] · factors[1] ⋯ |0>`, reduced to the basis.
    pub fn state_of_word(&self, w: &Word) -> Result<StateVector, FockError> {
        let mut s = self.vacuum();
        for g in w.factors().iter().rev() {
            s = self.apply_mode(g, &s)?;
        }
        Ok(s)
    }

    pub fn apply_mode(&self, g: &GenMode, s: &StateVector) -> Result<StateVector, FockError> {
        self.check_mode(g)?;
        let mut out = StateVector::zero();
        for (w, c) in s.terms() {
            self.insert(g, w, c, &mut out);
        }
        Ok(out)
    }

    /// Adds `c · g · w|0>` to `out`; `w` is a basis monomial.
    fn insert(&self, g: &GenMode, w: &Word, c: &Scalar, out: &mut StateVector) {
        let f = w.factors();
        let mut prefix = c.clone();
        for (p, h) in f.iter().enumerate() {
            let stop = g.is_creator() && h >= g;
            if stop {
                if h == g && self.q.square_vanishes(g.color) {
                    return;
                }
                break;
            }
            let (s, d) = self.q.swap_rule(g, h);
            if let Some(d) = d {
                let mut rest = f.to_vec();
                rest.remove(p);
                out.add_term(Word(rest), &(&prefix * &d));
            }
            prefix = prefix * s;
            if prefix.is_zero() {
                return;
            }
        }
        if g.is_creator() {
            let pos = f.partition_point(|h| h < g);
            let mut v = f.to_vec();
            v.insert(pos, *g);
            out.add_term(Word(v), &prefix);
        }
    }

    /// Reference implementation through generic rewriting: creators sorted
    /// canonically to the left, annihilators to the right where they meet |0>.
    pub fn apply_mode_by_rewriting(&self, g: &GenMode, s: &StateVector, strategy: Strategy) -> Result<StateVector, FockError> {
        self.check_mode(g)?;
        let mut out = StateVector::zero();
        for (w, c) in s.terms() {
            let word = Word(std::iter::once(*g).chain(w.factors().iter().copied()).collect());
            let sum = normal_order_by(&word, &self.q, strategy, |h| (!h.is_creator(), *h));
            for (nw, x) in sum.terms() {
                if nw.factors().iter().all(GenMode::is_creator) {
                    out.add_term(nw.clone(), &(x * c));
                }
            }
        }
        Ok(out)
    }

    pub fn theta(&self, s: &StateVector) -> Result<StateVector, FockError> {
        let mut out = StateVector::zero();
        for (w, c) in s.terms() {
            out.add_term(w.clone(), &(c * &theta_scale(self.context(), w, self.n as u32)?));
        }
        Ok(out)
    }

    pub fn weight(&self, s: &StateVector) -> Weight {
        let mut seen: Option<Rational64> = None;
        for (w, _) in s.terms() {
            let wt = word_weight(w);
            match seen {
                None => seen = Some(wt),
                Some(x) if x != wt => return Weight::Mixed,
                _ => {}
            }
        }
        seen.map_or(Weight::Zero, Weight::Homogeneous)
    }

    /// A mode bound B(s): every generator mode m > B annihilates s.
    pub fn annihilation_bound(&self, s: &StateVector) -> Mode {
        s.terms()
            .flat_map(|(w, _)| w.factors().iter().map(|h| -h.mode - 1))
            .fold(Mode::zero(), |acc, m| acc.max(m))
    }

    /// Largest mode of `kind`/`color` that can act nontrivially on the basis
    /// monomial `w`, by contraction or creation.
    pub fn top_active_mode(&self, kind: Kind, color: u16, w: &Word) -> Mode {
        w.factors()
            .iter()
            .filter(|h| h.color == color && h.kind == kind.partner())
            .map(|h| -h.mode - 1)
            .fold(top_creator_mode(kind, self.n), |acc, m| acc.max(m))
    }

    /// Grade of a single factor.
    pub fn factor_grade(&self, g: &GenMode) -> Mode {
        let inv = Mode::new(1, self.n);
        match g.kind {
            Kind::X => -g.mode - 1 + inv,
            Kind::Y => -g.mode - inv,
        }
    }

    pub fn grade(&self, w: &Word) -> i64 {
        let total: Mode = w.factors().iter().map(|g| self.factor_grade(g)).sum();
        debug_assert!(total.is_integer());
        total.to_integer()
    }

    pub fn max_grade(&self, s: &StateVector) -> i64 {
        s.terms().map(|(w, _)| self.grade(w)).max().unwrap_or(0)
    }

    /// All basis monomials with at most `depth` creators, all of mode ≥ `floor`.
    pub fn basis_up_to(&self, depth: usize, floor: Mode) -> Vec<Word> {
        let mut gens = Vec::new();
        for color in 1..=self.q.rank() as u16 {
            for kind in [Kind::X, Kind::Y] {
                let mut m = top_creator_mode(kind, self.n);
                while m >= floor {
                    gens.push(GenMode::new(kind, color, m));
                    m -= Mode::one();
                }
            }
        }
        gens.sort();
        let mut out = vec![Word::empty()];
        let mut frontier = vec![Word::empty()];
        for _ in 0..depth {
            let mut next = Vec::new();
            for w in &frontier {
                for g in &gens {
                    let ok = match w.factors().last() {
                        None => true,
                        Some(last) => last < g || (last == g && !self.q.square_vanishes(g.color)),
                    };
                    if ok {
                        let mut v = w.factors().to_vec();
                        v.push(*g);
                        next.push(Word(v));
                    }
                }
            }
            out.extend(next.iter().cloned());
            frontier = next;
        }
        out
    }

    /// All basis monomials of weight at most `max_weight`. Needs positive
    /// creator weights, i.e. the untwisted module.
    pub fn basis_up_to_weight(&self, max_weight: Rational64) -> Vec<Word> {
        assert_eq!(self.n, 1, "weight-bounded enumeration needs positive creator weights");
        let half = Rational64::new(1, 2);
        let mut gens = Vec::new();
        for color in 1..=self.q.rank() as u16 {
            for kind in [Kind::X, Kind::Y] {
                let mut m = -Mode::one();
                while -m - half <= max_weight {
                    gens.push(GenMode::new(kind, color, m));
                    m -= Mode::one();
                }
            }
        }
        gens.sort();
        let mut out = Vec::new();
        let mut stack = vec![(Vec::<GenMode>::new(), Rational64::zero())];
        while let Some((word, wt)) = stack.pop() {
            for g in &gens {
                let ok = match word.last() {
                    None => true,
                    Some(last) => last < g || (last == g && !self.q.square_vanishes(g.color)),
                };
                let next = wt - g.mode - half;
                if ok && next <= max_weight {
                    let mut v = word.clone();
                    v.push(*g);
                    stack.push((v, next));
                }
            }
            out.push(Word(word));
        }
        out.sort();
        out
    }
}

pub fn word_weight(w: &Word) -> Rational64 {
    w.factors().iter().map(|g| -g.mode - Rational64::new(1, 2)).sum()
}
