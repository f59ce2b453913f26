//! Exact arithmetic in the cyclotomic field Q(ζ_M).
//!
//! Elements live in the power basis `1, ζ, …, ζ^{d-1}` with `d = φ(M)`,
//! always reduced modulo the M-th cyclotomic polynomial. Representations are
//! canonical, so equality and the zero test are coordinate comparisons.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};
use std::sync::Arc;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScalarError {
    #[error("scalars from Q(zeta_{0}) and Q(zeta_{1}) cannot be combined")]
    ContextMismatch(u32, u32),
    #[error("division by zero")]
    DivisionByZero,
    #[error("{n} does not divide the cyclotomic order {m}")]
    OrderMismatch { n: u32, m: u32 },
    #[error("expected {expected} coordinates, got {got}")]
    Arity { expected: usize, got: usize },
    #[error("cannot parse scalar literal {0:?}")]
    Parse(String),
}

/// Dense rational polynomial, lowest degree first, no trailing zeros.
type Poly = Vec<BigRational>;

fn trim(p: &mut Poly) {
    while p.last().is_some_and(|c| c.is_zero()) {
        p.pop();
    }
}

fn poly_mul(a: &[BigRational], b: &[BigRational]) -> Poly {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![BigRational::zero(); a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        if x.is_zero() {
            continue;
        }
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    trim(&mut out);
    out
}

fn poly_sub(a: &[BigRational], b: &[BigRational]) -> Poly {
    let n = a.len().max(b.len());
    let mut out: Poly = (0..n)
        .map(|i| {
            let x = a.get(i).cloned().unwrap_or_else(BigRational::zero);
            match b.get(i) {
                Some(y) => x - y,
                None => x,
            }
        })
        .collect();
    trim(&mut out);
    out
}

/// Quotient and remainder; `b` must be nonzero.
fn poly_divrem(a: &[BigRational], b: &[BigRational]) -> (Poly, Poly) {
    let mut rem: Poly = a.to_vec();
    trim(&mut rem);
    let db = b.len() - 1;
    let lead = b[db].clone();
    if rem.len() < b.len() {
        return (Vec::new(), rem);
    }
    let mut quot = vec![BigRational::zero(); rem.len() - db];
    while rem.len() >= b.len() {
        let shift = rem.len() - b.len();
        let c = rem.last().unwrap() / &lead;
        for (i, y) in b.iter().enumerate() {
            rem[shift + i] -= &c * y;
        }
        quot[shift] = c;
        trim(&mut rem);
    }
    trim(&mut quot);
    (quot, rem)
}

fn divisors(m: u32) -> Vec<u32> {
    (1..=m).filter(|d| m.is_multiple_of(*d)).collect()
}

/// Cyclotomic polynomial Φ_m by exact division of x^m − 1 by Φ_d, d | m, d < m.
fn cyclotomic_poly(m: u32) -> Poly {
    let mut p: Poly = vec![BigRational::zero(); m as usize + 1];
    p[0] = -BigRational::one();
    p[m as usize] = BigRational::one();
    for d in divisors(m) {
        if d < m {
            let (q, r) = poly_divrem(&p, &cyclotomic_poly(d));
            debug_assert!(r.is_empty());
            p = q;
        }
    }
    p
}

/// The field Q(ζ_M) together with its defining polynomial.
#[derive(Debug, PartialEq, Eq)]
pub struct CycloContext {
    order: u32,
    phi: Poly,
}

impl CycloContext {
    pub fn new(order: u32) -> Arc<Self> {
        assert!(order >= 1, "cyclotomic order must be positive");
        Arc::new(CycloContext {
            order,
            phi: cyclotomic_poly(order),
        })
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    /// φ(M), the dimension over Q.
    pub fn degree(&self) -> usize {
        self.phi.len() - 1
    }

    /// Coefficients of Φ_M, lowest degree first.
    pub fn phi(&self) -> &[BigRational] {
        &self.phi
    }

    fn reduce(&self, p: Poly) -> Vec<BigRational> {
        let mut r = if p.len() > self.degree() {
            poly_divrem(&p, &self.phi).1
        } else {
            let mut p = p;
            trim(&mut p);
            p
        };
        r.resize(self.degree(), BigRational::zero());
        r
    }
}

/// An element of Q(ζ_M).
#[derive(Clone)]
pub struct Scalar {
    ctx: Arc<CycloContext>,
    coeffs: Vec<BigRational>,
}

impl PartialEq for Scalar {
    fn eq(&self, other: &Self) -> bool {
        self.ctx.order == other.ctx.order && self.coeffs == other.coeffs
    }
}

impl Eq for Scalar {}

impl Scalar {
    pub fn zero(ctx: &Arc<CycloContext>) -> Self {
        Scalar {
            ctx: ctx.clone(),
            coeffs: vec![BigRational::zero(); ctx.degree()],
        }
    }

    pub fn one(ctx: &Arc<CycloContext>) -> Self {
        Self::from_rational(ctx, BigRational::one())
    }

    pub fn from_int(ctx: &Arc<CycloContext>, n: i64) -> Self {
        Self::from_rational(ctx, BigRational::from_integer(BigInt::from(n)))
    }

    pub fn from_rational(ctx: &Arc<CycloContext>, q: BigRational) -> Self {
        let mut s = Self::zero(ctx);
        s.coeffs[0] = q;
        s
    }

    pub fn from_coords(ctx: &Arc<CycloContext>, coeffs: Vec<BigRational>) -> Result<Self, ScalarError> {
        if coeffs.len() != ctx.degree() {
            return Err(ScalarError::Arity {
                expected: ctx.degree(),
                got: coeffs.len(),
            });
        }
        Ok(Scalar { ctx: ctx.clone(), coeffs })
    }

    /// ζ^e for any integer e.
    pub fn zeta_pow(ctx: &Arc<CycloContext>, e: i64) -> Self {
        let m = ctx.order as i64;
        let e = e.rem_euclid(m) as usize;
        let mut p = vec![BigRational::zero(); e + 1];
        p[e] = BigRational::one();
        Scalar {
            ctx: ctx.clone(),
            coeffs: ctx.reduce(p),
        }
    }

    pub fn context(&self) -> &Arc<CycloContext> {
        &self.ctx
    }

    pub fn coords(&self) -> &[BigRational] {
        &self.coeffs
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_zero())
    }

    pub fn is_one(&self) -> bool {
        self.coeffs[0].is_one() && self.coeffs[1..].iter().all(|c| c.is_zero())
    }

    /// The rational value, if the element lies in Q.
    pub fn as_rational(&self) -> Option<&BigRational> {
        self.coeffs[1..]
            .iter()
            .all(|c| c.is_zero())
            .then(|| &self.coeffs[0])
    }

    fn check(&self, other: &Self) -> Result<(), ScalarError> {
        if Arc::ptr_eq(&self.ctx, &other.ctx) || self.ctx.order == other.ctx.order {
            Ok(())
        } else {
            Err(ScalarError::ContextMismatch(self.ctx.order, other.ctx.order))
        }
    }

    pub fn try_add(&self, other: &Self) -> Result<Self, ScalarError> {
        self.check(other)?;
        let coeffs = self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a + b).collect();
        Ok(Scalar { ctx: self.ctx.clone(), coeffs })
    }

    pub fn try_sub(&self, other: &Self) -> Result<Self, ScalarError> {
        self.check(other)?;
        let coeffs = self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a - b).collect();
        Ok(Scalar { ctx: self.ctx.clone(), coeffs })
    }

    pub fn try_mul(&self, other: &Self) -> Result<Self, ScalarError> {
        self.check(other)?;
        if self.ctx.degree() == 1 {
            return Ok(Self::from_rational(&self.ctx, &self.coeffs[0] * &other.coeffs[0]));
        }
        if let Some(q) = self.as_rational() {
            return Ok(other.scale_rational(q));
        }
        if let Some(q) = other.as_rational() {
            return Ok(self.scale_rational(q));
        }
        let prod = poly_mul(&self.coeffs, &other.coeffs);
        Ok(Scalar {
            ctx: self.ctx.clone(),
            coeffs: self.ctx.reduce(prod),
        })
    }

    pub fn scale_rational(&self, q: &BigRational) -> Self {
        Scalar {
            ctx: self.ctx.clone(),
            coeffs: self.coeffs.iter().map(|c| c * q).collect(),
        }
    }

    /// Multiplicative inverse via the extended Euclidean algorithm against Φ_M.
    pub fn inv(&self) -> Result<Self, ScalarError> {
        if self.is_zero() {
            return Err(ScalarError::DivisionByZero);
        }
        if let Some(q) = self.as_rational() {
            return Ok(Self::from_rational(&self.ctx, q.recip()));
        }
        // Invariant: s_i * a ≡ r_i (mod Φ).
        let mut r0: Poly = self.ctx.phi.clone();
        let mut r1: Poly = self.coeffs.clone();
        trim(&mut r1);
        let mut s0: Poly = Vec::new();
        let mut s1: Poly = vec![BigRational::one()];
        while r1.len() > 1 {
            let (q, r) = poly_divrem(&r0, &r1);
            let s = poly_sub(&s0, &poly_mul(&q, &s1));
            r0 = std::mem::replace(&mut r1, r);
            s0 = std::mem::replace(&mut s1, s);
        }
        // r1 is a nonzero constant since Φ_M is irreducible.
        let c = r1[0].recip();
        let s: Poly = s1.iter().map(|x| x * &c).collect();
        Ok(Scalar {
            ctx: self.ctx.clone(),
            coeffs: self.ctx.reduce(s),
        })
    }

    pub fn pow(&self, e: i64) -> Result<Self, ScalarError> {
        let base = if e < 0 { self.inv()? } else { self.clone() };
        let mut acc = Scalar::one(&self.ctx);
        for _ in 0..e.unsigned_abs() {
            acc = &acc * &base;
        }
        Ok(acc)
    }

    /// Coordinates as `"p/q"` strings, lowest power first.
    pub fn to_literal(&self) -> Vec<String> {
        self.coeffs.iter().map(|c| c.to_string()).collect()
    }

    pub fn from_literal(ctx: &Arc<CycloContext>, coords: &[String]) -> Result<Self, ScalarError> {
        let parsed = coords
            .iter()
            .map(|s| parse_rational(s.trim()).ok_or_else(|| ScalarError::Parse(s.clone())))
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_coords(ctx, parsed)
    }

    /// Parses expressions like `"-1"`, `"1/2"`, `"zeta"`, `"-3/2*ζ^3 + 1"`.
    pub fn parse_expr(ctx: &Arc<CycloContext>, text: &str) -> Result<Self, ScalarError> {
        let err = || ScalarError::Parse(text.to_string());
        let compact: String = text.chars().filter(|c| !c.is_whitespace()).collect();
        if compact.is_empty() {
            return Err(err());
        }
        let mut acc = Scalar::zero(ctx);
        let mut start = 0;
        let bytes: Vec<char> = compact.chars().collect();
        let mut pieces = Vec::new();
        for i in 1..=bytes.len() {
            let at_end = i == bytes.len();
            if at_end || ((bytes[i] == '+' || bytes[i] == '-') && bytes[i - 1] != '^') {
                pieces.push(bytes[start..i].iter().collect::<String>());
                start = i;
            }
        }
        for piece in pieces {
            let (sign, body) = match piece.chars().next() {
                Some('+') => (1, &piece[1..]),
                Some('-') => (-1, &piece['-'.len_utf8()..]),
                _ => (1, piece.as_str()),
            };
            let term = parse_term(ctx, body).ok_or_else(err)?;
            acc = if sign < 0 { &acc - &term } else { &acc + &term };
        }
        Ok(acc)
    }
}

fn parse_rational(s: &str) -> Option<BigRational> {
    match s.split_once('/') {
        Some((p, q)) => {
            let p: BigInt = p.parse().ok()?;
            let q: BigInt = q.parse().ok()?;
            (!q.is_zero()).then(|| BigRational::new(p, q))
        }
        None => s.parse::<BigInt>().ok().map(BigRational::from_integer),
    }
}

fn parse_term(ctx: &Arc<CycloContext>, body: &str) -> Option<Scalar> {
    let zeta_at = ["ζ", "zeta", "z"].iter().find_map(|name| body.find(name).map(|i| (i, name.len())));
    let Some((at, len)) = zeta_at else {
        return parse_rational(body).map(|q| Scalar::from_rational(ctx, q));
    };
    let coeff_part = body[..at].trim_end_matches('*');
    let coeff = if coeff_part.is_empty() {
        BigRational::one()
    } else {
        parse_rational(coeff_part)?
    };
    let rest = &body[at + len..];
    let exp = if rest.is_empty() {
        1
    } else {
        rest.strip_prefix('^')?.parse::<i64>().ok()?
    };
    Some(Scalar::zeta_pow(ctx, exp).scale_rational(&coeff))
}

/// ω_N^j = ζ_M^{jM/N}.
pub fn root_of_unity(ctx: &Arc<CycloContext>, n: u32, j: i64) -> Result<Scalar, ScalarError> {
    if n == 0 || !ctx.order.is_multiple_of(n) {
        return Err(ScalarError::OrderMismatch { n, m: ctx.order });
    }
    Ok(Scalar::zeta_pow(ctx, j * (ctx.order / n) as i64))
}

impl fmt::Debug for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (i, c) in self.coeffs.iter().enumerate() {
            if c.is_zero() {
                continue;
            }
            let mag = c.abs();
            if first {
                if c.is_negative() {
                    write!(f, "-")?;
                }
            } else {
                write!(f, "{}", if c.is_negative() { " - " } else { " + " })?;
            }
            first = false;
            match i {
                0 => write!(f, "{mag}")?,
                _ => {
                    if !mag.is_one() {
                        write!(f, "{mag}*")?;
                    }
                    if i == 1 {
                        write!(f, "zeta")?;
                    } else {
                        write!(f, "zeta^{i}")?;
                    }
                }
            }
        }
        if first {
            write!(f, "0")?;
        }
        Ok(())
    }
}

macro_rules! binop {
    ($tr:ident, $method:ident, $try:ident) => {
        impl $tr<&Scalar> for &Scalar {
            type Output = Scalar;
            fn $method(self, rhs: &Scalar) -> Scalar {
                self.$try(rhs).expect("scalar context mismatch")
            }
        }
        impl $tr<Scalar> for Scalar {
            type Output = Scalar;
            fn $method(self, rhs: Scalar) -> Scalar {
                self.$try(&rhs).expect("scalar context mismatch")
            }
        }
        impl $tr<&Scalar> for Scalar {
            type Output = Scalar;
            fn $method(self, rhs: &Scalar) -> Scalar {
                self.$try(rhs).expect("scalar context mismatch")
            }
        }
    };
}

binop!(Add, add, try_add);
binop!(Sub, sub, try_sub);
binop!(Mul, mul, try_mul);

impl AddAssign<&Scalar> for Scalar {
    fn add_assign(&mut self, rhs: &Scalar) {
        self.check(rhs).expect("scalar context mismatch");
        for (a, b) in self.coeffs.iter_mut().zip(&rhs.coeffs) {
            *a += b;
        }
    }
}

impl SubAssign<&Scalar> for Scalar {
    fn sub_assign(&mut self, rhs: &Scalar) {
        self.check(rhs).expect("scalar context mismatch");
        for (a, b) in self.coeffs.iter_mut().zip(&rhs.coeffs) {
            *a -= b;
        }
    }
}

impl Neg for &Scalar {
    type Output = Scalar;
    fn neg(self) -> Scalar {
        Scalar {
            ctx: self.ctx.clone(),
            coeffs: self.coeffs.iter().map(|c| -c).collect(),
        }
    }
}

impl Neg for Scalar {
    type Output = Scalar;
    fn neg(self) -> Scalar {
        -&self
    }
}

/// Generalized binomial coefficient C(α, i) for rational α.
pub fn binomial(alpha: &BigRational, i: u64) -> BigRational {
    let mut acc = BigRational::one();
    for t in 0..i {
        acc = acc * (alpha - BigRational::from_integer(BigInt::from(t))) / BigRational::from_integer(BigInt::from(t + 1));
    }
    acc
}
