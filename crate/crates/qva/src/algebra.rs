//! Generators, words and PBW normal ordering for the algebras A_Q and A_Q[θ_N].
//!
//! Defining relations, for colors i, j and modes m, n:
//!   X_{i,m} X_{j,n} = q_ij X_{j,n} X_{i,m}
//!   Y_{i,m} Y_{j,n} = q_ij Y_{j,n} Y_{i,m}
//!   X_{i,m} Y_{j,n} − q_ji Y_{j,n} X_{i,m} = δ_ij δ_{m+n+1,0}
//! The canonical order puts every X before every Y and sorts each kind by
//! (color, mode). Squares of a generator vanish whenever q_ii ≠ 1.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use num_integer::Integer;
use num_rational::Rational64;
use num_traits::{One, Signed, Zero};
use serde::Serialize;
use thiserror::Error;

use crate::scalar::{root_of_unity, CycloContext, Scalar, ScalarError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AlgebraError {
    #[error("cannot parse {0:?}")]
    Parse(String),
    #[error("{0}")]
    InvalidQ(String),
    #[error("color {0} outside 1..={1}")]
    Color(u16, usize),
    #[error(transparent)]
    Scalar(#[from] ScalarError),
}

pub type Mode = Rational64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Kind {
    X,
    Y,
}

impl Kind {
    pub fn partner(self) -> Kind {
        match self {
            Kind::X => Kind::Y,
            Kind::Y => Kind::X,
        }
    }
}

/// A generator mode X_{color, mode} or Y_{color, mode}. The derived order
/// is the canonical PBW order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GenMode {
    pub kind: Kind,
    pub color: u16,
    pub mode: Mode,
}

impl GenMode {
    pub fn new(kind: Kind, color: u16, mode: Mode) -> Self {
        GenMode { kind, color, mode }
    }

    pub fn x(color: u16, num: i64, den: i64) -> Self {
        GenMode::new(Kind::X, color, Mode::new(num, den))
    }

    pub fn y(color: u16, num: i64, den: i64) -> Self {
        GenMode::new(Kind::Y, color, Mode::new(num, den))
    }

    pub fn is_creator(&self) -> bool {
        self.mode.is_negative()
    }

    pub fn with_mode(&self, mode: Mode) -> Self {
        GenMode { mode, ..*self }
    }

    /// Whether the mode lies on the lattice 1/N + Z (X) or −1/N + Z (Y).
    pub fn on_lattice(&self, n: i64) -> bool {
        let offset = match self.kind {
            Kind::X => Mode::new(1, n),
            Kind::Y => Mode::new(-1, n),
        };
        (self.mode - offset).is_integer()
    }

    /// Whether `self · other` has a nonzero contraction term.
    pub fn contracts_with(&self, other: &GenMode) -> bool {
        self.color == other.color && self.kind != other.kind && (self.mode + other.mode + 1).is_zero()
    }
}

impl fmt::Display for GenMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let k = match self.kind {
            Kind::X => 'X',
            Kind::Y => 'Y',
        };
        write!(f, "{k}[{},{}]", self.color, self.mode)
    }
}

impl std::str::FromStr for GenMode {
    type Err = AlgebraError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || AlgebraError::Parse(s.to_string());
        let s = s.trim();
        let kind = match s.chars().next() {
            Some('X') => Kind::X,
            Some('Y') => Kind::Y,
            _ => return Err(err()),
        };
        let inner = s[1..].strip_prefix('[').and_then(|r| r.strip_suffix(']')).ok_or_else(err)?;
        let (c, m) = inner.split_once(',').ok_or_else(err)?;
        let color: u16 = c.trim().parse().map_err(|_| err())?;
        let mode: Mode = m.trim().parse().map_err(|_| err())?;
        if color == 0 {
            return Err(err());
        }
        Ok(GenMode::new(kind, color, mode))
    }
}

/// A product of generator modes, leftmost factor first.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Word(pub Vec<GenMode>);

impl Word {
    pub fn empty() -> Self {
        Word(Vec::new())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn factors(&self) -> &[GenMode] {
        &self.0
    }

    pub fn concat(&self, other: &Word) -> Word {
        Word(self.0.iter().chain(&other.0).copied().collect())
    }

    /// #X − #Y.
    pub fn charge(&self) -> i64 {
        self.0
            .iter()
            .map(|g| match g.kind {
                Kind::X => 1,
                Kind::Y => -1,
            })
            .sum()
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|g| g.to_string()).collect();
        write!(f, "{}", parts.join(" "))
    }
}

impl std::str::FromStr for Word {
    type Err = AlgebraError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.split_whitespace().map(str::parse).collect::<Result<Vec<_>, _>>().map(Word)
    }
}

/// The structure constants q_ij, with q_ji^{-1} cached.
#[derive(Debug, Clone, PartialEq)]
pub struct QMatrix {
    r: usize,
    ctx: Arc<CycloContext>,
    entries: Vec<Scalar>,
    inverse_transpose: Vec<Scalar>,
    diagonal_is_one: Vec<bool>,
}

impl QMatrix {
    /// Validates q_ij q_ji = 1 and nonzero entries.
    pub fn new(ctx: &Arc<CycloContext>, rows: Vec<Vec<Scalar>>) -> Result<Self, AlgebraError> {
        let m = Self::new_unchecked(ctx, rows)?;
        for i in 1..=m.r {
            for j in 1..=m.r {
                if m.q(i as u16, j as u16).is_zero() {
                    return Err(AlgebraError::InvalidQ(format!("q[{i}][{j}] == 0")));
                }
                if !(m.q(i as u16, j as u16) * m.q(j as u16, i as u16)).is_one() {
                    return Err(AlgebraError::InvalidQ(format!("q[{i}][{j}]*q[{j}][{i}] != 1")));
                }
            }
        }
        Ok(m)
    }

    /// Skips the q_ij q_ji = 1 check; entries must still be nonzero.
    pub fn new_unchecked(ctx: &Arc<CycloContext>, rows: Vec<Vec<Scalar>>) -> Result<Self, AlgebraError> {
        let r = rows.len();
        if r == 0 || rows.iter().any(|row| row.len() != r) {
            return Err(AlgebraError::InvalidQ("Q must be a nonempty square matrix".into()));
        }
        let entries: Vec<Scalar> = rows.into_iter().flatten().collect();
        let mut inverse_transpose = Vec::with_capacity(r * r);
        for i in 0..r {
            for j in 0..r {
                let qji = &entries[j * r + i];
                inverse_transpose.push(
                    qji.inv()
                        .map_err(|_| AlgebraError::InvalidQ(format!("q[{}][{}] == 0", j + 1, i + 1)))?,
                );
            }
        }
        let diagonal_is_one = (0..r).map(|i| entries[i * r + i].is_one()).collect();
        Ok(QMatrix {
            r,
            ctx: ctx.clone(),
            entries,
            inverse_transpose,
            diagonal_is_one,
        })
    }

    /// Every entry equal to `value`.
    pub fn constant(ctx: &Arc<CycloContext>, r: usize, value: i64) -> Self {
        let s = Scalar::from_int(ctx, value);
        QMatrix::new(ctx, vec![vec![s; r]; r]).expect("±1 matrices are valid")
    }

    pub fn diagonal(ctx: &Arc<CycloContext>, diag: &[i64]) -> Self {
        let r = diag.len();
        let rows = (0..r)
            .map(|i| (0..r).map(|j| Scalar::from_int(ctx, if i == j { diag[i] } else { 1 })).collect())
            .collect();
        QMatrix::new(ctx, rows).expect("±1 diagonal matrices are valid")
    }

    pub fn rank(&self) -> usize {
        self.r
    }

    pub fn context(&self) -> &Arc<CycloContext> {
        &self.ctx
    }

    /// q_ij with 1-based colors.
    pub fn q(&self, i: u16, j: u16) -> &Scalar {
        &self.entries[(i as usize - 1) * self.r + (j as usize - 1)]
    }

    fn q_ji_inv(&self, i: u16, j: u16) -> &Scalar {
        &self.inverse_transpose[(i as usize - 1) * self.r + (j as usize - 1)]
    }

    pub fn square_vanishes(&self, color: u16) -> bool {
        !self.diagonal_is_one[color as usize - 1]
    }

    pub fn check_color(&self, g: &GenMode) -> Result<(), AlgebraError> {
        if g.color == 0 || g.color as usize > self.r {
            return Err(AlgebraError::Color(g.color, self.r));
        }
        Ok(())
    }

    /// `a·b = s·b·a + d`; returns `(s, d)`.
    pub fn swap_rule(&self, a: &GenMode, b: &GenMode) -> (Scalar, Option<Scalar>) {
        match (a.kind, b.kind) {
            (Kind::X, Kind::X) | (Kind::Y, Kind::Y) => (self.q(a.color, b.color).clone(), None),
            (Kind::X, Kind::Y) => {
                let s = self.q(b.color, a.color).clone();
                let d = a.contracts_with(b).then(|| Scalar::one(&self.ctx));
                (s, d)
            }
            (Kind::Y, Kind::X) => {
                // Y_j X_i = q_ji^{-1} (X_i Y_j − δ).
                let s = self.q_ji_inv(b.color, a.color).clone();
                let d = a.contracts_with(b).then(|| -&s);
                (s, d)
            }
        }
    }

    /// The braiding scalar of two words: the product of swap scalars over all
    /// factor pairs (a-factor, b-factor).
    pub fn braiding(&self, a: &Word, b: &Word) -> Scalar {
        let mut acc = Scalar::one(&self.ctx);
        for f in &a.0 {
            for g in &b.0 {
                acc = acc * self.swap_rule(f, g).0;
            }
        }
        acc
    }
}

/// A linear combination of words in normal form.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NormalSum {
    terms: BTreeMap<Word, Scalar>,
}

impl NormalSum {
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

    pub fn add(&mut self, other: &NormalSum, scale: &Scalar) {
        for (w, c) in &other.terms {
            self.add_term(w.clone(), &(c * scale));
        }
    }
}

impl fmt::Display for NormalSum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let parts: Vec<String> = self.terms.iter().map(|(w, c)| format!("({c})*[{w}]")).collect();
        write!(f, "{}", parts.join(" + "))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Leftmost,
    Rightmost,
}

/// Rewrites `w` into canonical PBW order.
pub fn normal_order(w: &Word, q: &QMatrix) -> NormalSum {
    normal_order_by(w, q, Strategy::Leftmost, |g| *g)
}

/// Rewrites `w` until adjacent factors are sorted by `key`; a pair of equal
/// adjacent factors with q_ii ≠ 1 kills the term.
pub fn normal_order_by<K: Ord>(w: &Word, q: &QMatrix, strategy: Strategy, key: impl Fn(&GenMode) -> K) -> NormalSum {
    let ctx = q.context();
    let mut out = NormalSum::default();
    let mut stack = vec![(w.0.clone(), Scalar::one(ctx))];
    while let Some((word, c)) = stack.pop() {
        let bad = |i: &usize| {
            let (a, b) = (&word[*i], &word[*i + 1]);
            match key(a).cmp(&key(b)) {
                std::cmp::Ordering::Greater => true,
                std::cmp::Ordering::Equal => a == b && q.square_vanishes(a.color),
                std::cmp::Ordering::Less => false,
            }
        };
        let pairs = 0..word.len().saturating_sub(1);
        let pos = match strategy {
            Strategy::Leftmost => pairs.clone().find(bad),
            Strategy::Rightmost => pairs.rev().find(bad),
        };
        let Some(i) = pos else {
            out.add_term(Word(word), &c);
            continue;
        };
        let (a, b) = (word[i], word[i + 1]);
        if a == b {
            continue;
        }
        let (s, d) = q.swap_rule(&a, &b);
        if let Some(d) = d {
            let mut shorter = word.clone();
            shorter.drain(i..i + 2);
            stack.push((shorter, &c * &d));
        }
        let mut swapped = word;
        swapped.swap(i, i + 1);
        stack.push((swapped, &c * &s));
    }
    out
}

/// ω_N^{(#X − #Y) mod N}, the θ_N-eigenvalue of `w`.
pub fn theta_scale(ctx: &Arc<CycloContext>, w: &Word, n: u32) -> Result<Scalar, ScalarError> {
    root_of_unity(ctx, n, w.charge().mod_floor(&(n as i64)))
}

pub fn lattice_check(w: &Word, n: i64) -> bool {
    w.0.iter().all(|g| g.on_lattice(n))
}

/// The largest creator mode on the lattice of `kind`.
pub fn top_creator_mode(kind: Kind, n: i64) -> Mode {
    match kind {
        Kind::X if n == 1 => -Mode::one(),
        Kind::X => Mode::new(1, n) - Mode::one(),
        Kind::Y => Mode::new(-1, n),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx() -> Arc<CycloContext> {
        CycloContext::new(12)
    }

    fn word(s: &str) -> Word {
        s.parse().unwrap()
    }

    #[test]
    fn parse_and_print() {
        let w = word("X[1,-1] Y[2,-3/2]");
        assert_eq!(w.0[1], GenMode::y(2, -3, 2));
        assert_eq!(w.to_string(), "X[1,-1] Y[2,-3/2]");
        assert!("Z[1,0]".parse::<Word>().is_err());
        assert!("X[0,1]".parse::<Word>().is_err());
    }

    #[test]
    fn reversed_pair_produces_delta_term() {
        for qv in [1, -1] {
            let c = ctx();
            let q = QMatrix::constant(&c, 1, qv);
            let canonical = normal_order(&word("X[1,0] Y[1,-1]"), &q);
            assert_eq!(canonical.len(), 1);
            assert!(canonical.get(&word("X[1,0] Y[1,-1]")).unwrap().is_one());
            let rev = normal_order(&word("Y[1,-1] X[1,0]"), &q);
            let inv = Scalar::from_int(&c, qv).inv().unwrap();
            assert_eq!(rev.get(&word("X[1,0] Y[1,-1]")), Some(&inv));
            assert_eq!(rev.get(&Word::empty()), Some(&-&inv));
        }
    }

    #[test]
    fn empty_word_and_squares() {
        let c = ctx();
        let q = QMatrix::constant(&c, 1, -1);
        let e = normal_order(&Word::empty(), &q);
        assert!(e.get(&Word::empty()).unwrap().is_one());
        assert!(normal_order(&word("X[1,5] X[1,5]"), &q).is_empty());
        let bosonic = QMatrix::constant(&c, 1, 1);
        assert_eq!(normal_order(&word("X[1,5] X[1,5]"), &bosonic).len(), 1);
    }

    #[test]
    fn q_validation() {
        let c = CycloContext::new(4);
        let z = Scalar::zeta_pow(&c, 1);
        let err = QMatrix::new(&c, vec![vec![z.clone()]]).unwrap_err();
        assert_eq!(err, AlgebraError::InvalidQ("q[1][1]*q[1][1] != 1".into()));
        let zero = QMatrix::new(&c, vec![vec![Scalar::zero(&c)]]).unwrap_err();
        assert!(matches!(zero, AlgebraError::InvalidQ(_)));
        let off = vec![
            vec![Scalar::one(&c), z.clone()],
            vec![z.inv().unwrap(), Scalar::one(&c)],
        ];
        assert!(QMatrix::new(&c, off).is_ok());
        let bad = vec![vec![Scalar::one(&c), z.clone()], vec![z.clone(), Scalar::one(&c)]];
        assert_eq!(
            QMatrix::new(&c, bad).unwrap_err(),
            AlgebraError::InvalidQ("q[1][2]*q[2][1] != 1".into())
        );
    }

    #[test]
    fn theta_eigenvalues() {
        let c = ctx();
        assert!(theta_scale(&c, &Word::empty(), 3).unwrap().is_one());
        assert_eq!(
            theta_scale(&c, &word("X[1,-1]"), 3).unwrap(),
            root_of_unity(&c, 3, 1).unwrap()
        );
        assert!(theta_scale(&c, &word("X[1,-1] Y[2,-3]"), 4).unwrap().is_one());
    }

    #[test]
    fn lattices() {
        assert!(lattice_check(&word("X[1,1/2]"), 2));
        assert!(!lattice_check(&word("X[1,0]"), 2));
        assert!(lattice_check(&word("Y[1,7]"), 1));
        assert!(lattice_check(&word("Y[1,-4/3] X[1,1/3]"), 3));
        assert!(!lattice_check(&word("Y[1,1/3]"), 3));
    }

    #[test]
    fn weyl_and_clifford_specializations() {
        let c = ctx();
        for (qv, sign) in [(1, -1), (-1, 1)] {
            let q = QMatrix::constant(&c, 1, qv);
            // X_m Y_n ∓ Y_n X_m = δ: commutator for q = 1, anticommutator for q = −1.
            let xy = normal_order(&word("X[1,2] Y[1,-3]"), &q);
            let mut combo = xy.clone();
            combo.add(&normal_order(&word("Y[1,-3] X[1,2]"), &q), &Scalar::from_int(&c, sign));
            assert_eq!(combo.len(), 1);
            assert!(combo.get(&Word::empty()).unwrap().is_one());
        }
    }
}
