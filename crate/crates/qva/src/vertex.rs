//! Vertex operators Y_W(a, x)s for states a of V_Q acting on a (twisted) Fock
//! module W, computed coefficient by coefficient.
//!
//! For a = g_{-n} b with g a generator, the associativity identity
//!   x0^k Y_W(Y(g, x0) b, x2) = ((x1 − x2)^k Y_W(g, x1) Y_W(b, x2))|_{x1 = x2 + x0}
//! gives the coefficient of x2^γ in Y_W(a, x2)s as
//!   Σ_α C(α, n+k−1) Σ_t (−1)^t C(k, t) g_{k−t−1−α} [Y_W(b, x2)s]_{β−t},
//! with β = γ + n + k − 1 − α. The α-sum is finite: below the S-locality
//! bound of g on s every term cancels, and above it the b-coefficients vanish.
//!
//! Exponents are numerators over N throughout.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Zero;
use thiserror::Error;

use crate::algebra::{GenMode, Kind, Mode, QMatrix, Word};
use crate::fock::{FockError, FockModule, StateVector};
use crate::scalar::{binomial, Scalar};
use crate::series::{Bound, FracSeries, SeriesError, SupportClass, Var, VarSet, Window};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VertexError {
    #[error("operator state must lie in the untwisted algebra: {0}")]
    NotUntwisted(Word),
    #[error("window must be in the single variable x")]
    WindowShape,
    #[error(transparent)]
    Fock(#[from] FockError),
    #[error(transparent)]
    Series(#[from] SeriesError),
}

/// A window of Y_W(a, x)s.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexSlice {
    pub a: StateVector,
    pub s: StateVector,
    pub window: Window,
    pub coeffs: FracSeries<StateVector>,
}

/// Formal fields generated from X_i(x), Y_i(x) by the products a(x)_n b(x).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum LazyField {
    Identity,
    Generator(Kind, u16),
    Product(Arc<LazyField>, i64, Arc<LazyField>),
}

pub fn field_product(f: &LazyField, n: i64, g: &LazyField) -> LazyField {
    LazyField::Product(Arc::new(f.clone()), n, Arc::new(g.clone()))
}

type CoeffKey = (Word, Word, i64);

/// Evaluates vertex operators of V_Q on a Fock module; caches coefficients.
pub struct Engine {
    module: FockModule,
    /// V_Q itself, needed to form the states of products of fields.
    untwisted: Option<Box<Engine>>,
    k_extra: i64,
    cache: RwLock<HashMap<CoeffKey, Arc<StateVector>>>,
}

impl Engine {
    pub fn new(q: Arc<QMatrix>, n: u32) -> Self {
        Self::with_k_extra(q, n, 0)
    }

    /// Uses pole-order bounds `k + k_extra` everywhere; results must not change.
    pub fn with_k_extra(q: Arc<QMatrix>, n: u32, k_extra: i64) -> Self {
        let untwisted = (n > 1).then(|| Box::new(Engine::with_k_extra(q.clone(), 1, k_extra)));
        Engine {
            module: FockModule::new(q, n),
            untwisted,
            k_extra,
            cache: RwLock::new(HashMap::new()),
        }
    }

    pub fn module(&self) -> &FockModule {
        &self.module
    }

    /// The engine of V_Q acting on itself.
    pub fn untwisted(&self) -> &Engine {
        self.untwisted.as_deref().unwrap_or(self)
    }

    pub fn denom(&self) -> i64 {
        self.module.twist()
    }

    fn one(&self) -> Scalar {
        Scalar::one(self.module.context())
    }

    fn rat(&self, num: i64) -> BigRational {
        BigRational::new(BigInt::from(num), BigInt::from(self.denom()))
    }

    /// Grade shift of the x^0 coefficient of Y_W(a, x), times N.
    fn field_shift(&self, a: &Word) -> i64 {
        let n = self.denom();
        let mut total = Mode::zero();
        for g in a.factors() {
            total += match g.kind {
                Kind::X => -g.mode - 1,
                Kind::Y => -g.mode,
            };
        }
        debug_assert!(total.is_integer());
        total.to_integer() * n + a.charge()
    }

    /// Lower bound on the exponents of Y_W(a, x)s (numerators).
    pub fn e_min(&self, a: &Word, s: &Word) -> i64 {
        -self.denom() * self.module.grade(s) - self.field_shift(a)
    }

    pub fn e_min_states(&self, a: &StateVector, s: &StateVector) -> i64 {
        let mut lo = i64::MAX;
        for (wa, _) in a.terms() {
            for (ws, _) in s.terms() {
                lo = lo.min(self.e_min(wa, ws));
            }
        }
        if lo == i64::MAX {
            0
        } else {
            lo
        }
    }

    /// Exponents of Y_W(a, x) lie in −charge(a)/N + Z.
    pub fn exponent_class(&self, a: &Word) -> i64 {
        (-a.charge()).rem_euclid(self.denom())
    }

    fn on_class(&self, a: &Word, e: i64) -> bool {
        (e - self.exponent_class(a)).rem_euclid(self.denom()) == 0
    }

    /// Pole order of Y(g, x1) Y(b, x2): depth of the deepest partner of g in b.
    pub fn pole_order(&self, g: &GenMode, b: &Word) -> i64 {
        b.factors()
            .iter()
            .filter(|h| h.color == g.color && h.kind != g.kind)
            .map(|h| (-h.mode).to_integer())
            .max()
            .unwrap_or(0)
    }

    /// Lowest x-exponent of Y_W(g, x)s allowed by contractions with s.
    fn generator_floor(&self, kind: Kind, color: u16, s: &StateVector) -> i64 {
        let n = self.denom();
        let top = s
            .terms()
            .map(|(w, _)| self.module.top_active_mode(kind, color, w))
            .max()
            .unwrap_or_else(|| self.module.top_active_mode(kind, color, &Word::empty()));
        let m = top * n;
        debug_assert!(m.is_integer());
        -m.to_integer() - n
    }

    /// g_{m} s for the generator (kind, color) at the field exponent `e`,
    /// i.e. m = −e/N − 1.
    pub fn generator_coefficient(&self, kind: Kind, color: u16, e: i64, s: &StateVector) -> StateVector {
        let n = self.denom();
        let mode = Mode::new(-e - n, n);
        let g = GenMode::new(kind, color, mode);
        if !g.on_lattice(n) {
            return StateVector::zero();
        }
        self.module.apply_mode(&g, s).expect("generator mode on lattice")
    }

    /// The shared substitution core:
    ///   Σ_α C(α, p) Σ_{t=0}^{k} (−1)^t C(k, t) left(α − (k−t), right(β − t)),
    /// with β = e + p − α, α ≥ `alpha_lo` on the class `alpha_class` mod N,
    /// and right(β') = 0 for β' < `beta_lo`.
    #[allow(clippy::too_many_arguments)]
    fn substitution_coefficient(
        &self,
        k: i64,
        p: i64,
        e: i64,
        alpha_lo: i64,
        alpha_class: i64,
        beta_lo: i64,
        left: &dyn Fn(i64, &StateVector) -> StateVector,
        right: &dyn Fn(i64) -> Arc<StateVector>,
    ) -> StateVector {
        let n = self.denom();
        let mut out = StateVector::zero();
        if p < 0 {
            return out;
        }
        let first = alpha_lo + (alpha_class - alpha_lo).rem_euclid(n);
        let alpha_hi = e + p * n - beta_lo;
        let signs: Vec<BigRational> = (0..=k)
            .map(|t| {
                let c = binomial(&BigRational::from_integer(k.into()), t as u64);
                if t % 2 == 0 {
                    c
                } else {
                    -c
                }
            })
            .collect();
        let mut alpha = first;
        while alpha <= alpha_hi {
            let weight = binomial(&self.rat(alpha), p as u64);
            if !weight.is_zero() {
                let beta = e + p * n - alpha;
                let mut inner = StateVector::zero();
                for t in 0..=k {
                    let b_exp = beta - t * n;
                    if b_exp < beta_lo {
                        break;
                    }
                    let b = right(b_exp);
                    if b.is_empty() {
                        continue;
                    }
                    let term = left(alpha - (k - t) * n, &b);
                    add_rational(&mut inner, &term, &signs[t as usize]);
                }
                add_rational(&mut out, &inner, &weight);
            }
            alpha += n;
        }
        out
    }

    /// Coefficient of x^{e/N} in Y_W(a, x)s for basis monomials a (of V_Q) and s.
    pub fn coefficient(&self, a: &Word, s: &Word, e: i64) -> Arc<StateVector> {
        if e < self.e_min(a, s) || !self.on_class(a, e) {
            return Arc::new(StateVector::zero());
        }
        if a.len() <= 1 {
            return Arc::new(self.compute(a, s, e));
        }
        let key = (a.clone(), s.clone(), e);
        if let Some(hit) = self.cache.read().unwrap().get(&key) {
            return hit.clone();
        }
        let value = Arc::new(self.compute(a, s, e));
        self.cache.write().unwrap().insert(key, value.clone());
        value
    }

    fn compute(&self, a: &Word, s: &Word, e: i64) -> StateVector {
        let n = self.denom();
        let s_state = StateVector::monomial(s.clone(), self.one());
        let Some((g, rest)) = a.factors().split_first() else {
            return if e == 0 { s_state } else { StateVector::zero() };
        };
        let depth = (-g.mode).to_integer();
        if rest.is_empty() {
            // Y(g_{-d} 1, x) is the (d−1)-th divided derivative of g(x).
            let c = binomial(&(self.rat(e) + BigRational::from_integer((depth - 1).into())), (depth - 1) as u64);
            let v = self.generator_coefficient(g.kind, g.color, e + (depth - 1) * n, &s_state);
            let mut out = StateVector::zero();
            add_rational(&mut out, &v, &c);
            return out;
        }
        let b = Word(rest.to_vec());
        let k = self.pole_order(g, &b) + self.k_extra;
        let p = depth + k - 1;
        let (kind, color) = (g.kind, g.color);
        let left = |alpha: i64, state: &StateVector| self.generator_coefficient(kind, color, alpha, state);
        let right = |beta: i64| self.coefficient(&b, s, beta);
        let g_word = Word(vec![*g]);
        self.substitution_coefficient(
            k,
            p,
            e,
            self.generator_floor(kind, color, &s_state),
            self.exponent_class(&g_word),
            self.e_min(&b, s),
            &left,
            &right,
        )
    }

    /// Coefficient of x^{e/N} in Y_W(a, x)s, extended linearly.
    pub fn coefficient_on(&self, a: &StateVector, s: &StateVector, e: i64) -> StateVector {
        let mut out = StateVector::zero();
        for (wa, ca) in a.terms() {
            if !wa.factors().iter().all(|g| g.mode.is_integer()) {
                continue;
            }
            for (ws, cs) in s.terms() {
                let v = self.coefficient(wa, ws, e);
                out.add_scaled(&v, &(ca * cs));
            }
        }
        out
    }

    pub fn vertex_apply(&self, a: &StateVector, s: &StateVector, w: &Window) -> Result<VertexSlice, VertexError> {
        if w.vars().names() != [Var::X] || w.vars().denom() != self.denom() {
            return Err(VertexError::WindowShape);
        }
        for (wa, _) in a.terms() {
            if !wa.factors().iter().all(|g| g.mode.is_integer()) {
                return Err(VertexError::NotUntwisted(wa.clone()));
            }
        }
        let (lo, hi) = w.ranges()[0];
        let floor = self.e_min_states(a, s);
        let mut coeffs = FracSeries::truncated(
            w.vars().clone(),
            SupportClass::LowerBoundedPerVariable,
            vec![Bound::at_least(floor)],
            vec![Bound::between(lo.min(floor), hi)],
            std::iter::empty(),
        );
        for e in lo.max(floor)..=hi {
            let v = self.coefficient_on(a, s, e);
            coeffs.add_term(vec![e], &v);
        }
        Ok(VertexSlice {
            a: a.clone(),
            s: s.clone(),
            window: w.clone(),
            coeffs,
        })
    }

    /// The state a(x) corresponds to, a(x)1 at x = 0, in V_Q.
    pub fn field_state(&self, f: &LazyField) -> StateVector {
        let vq = self.untwisted();
        let m = vq.module();
        match f {
            LazyField::Identity => m.vacuum(),
            LazyField::Generator(kind, color) => {
                StateVector::monomial(Word(vec![GenMode::new(*kind, *color, Mode::from(-1))]), vq.one())
            }
            LazyField::Product(l, n, r) => {
                let (u, v) = (vq.field_state(l), vq.field_state(r));
                vq.coefficient_on(&u, &v, -n - 1)
            }
        }
    }

    /// Coefficient of x^{e/N} in f(x)s.
    pub fn field_coefficient(&self, f: &LazyField, s: &StateVector, e: i64) -> StateVector {
        match f {
            LazyField::Identity => {
                if e == 0 {
                    s.clone()
                } else {
                    StateVector::zero()
                }
            }
            LazyField::Generator(kind, color) => self.generator_coefficient(*kind, *color, e, s),
            LazyField::Product(l, n, r) => {
                let (u, v) = (self.field_state(l), self.field_state(r));
                if u.is_empty() || v.is_empty() || s.is_empty() {
                    return StateVector::zero();
                }
                let vq = self.untwisted();
                let k = (-vq.e_min_states(&u, &v)).max(0) + self.k_extra;
                let class = u.terms().next().map_or(0, |(w, _)| self.exponent_class(w));
                let left = |alpha: i64, state: &StateVector| self.field_coefficient(l, state, alpha);
                let right = |beta: i64| {
                    if beta < self.e_min_states(&v, s) {
                        Arc::new(StateVector::zero())
                    } else {
                        Arc::new(self.field_coefficient(r, s, beta))
                    }
                };
                self.substitution_coefficient(
                    k,
                    k - n - 1,
                    e,
                    self.e_min_states(&u, s),
                    class,
                    self.e_min_states(&v, s),
                    &left,
                    &right,
                )
            }
        }
    }

    pub fn field_eval(&self, f: &LazyField, s: &StateVector, w: &Window) -> Result<VertexSlice, VertexError> {
        if w.vars().names() != [Var::X] || w.vars().denom() != self.denom() {
            return Err(VertexError::WindowShape);
        }
        let a = self.field_state(f);
        let (lo, hi) = w.ranges()[0];
        let floor = self.e_min_states(&a, s);
        let mut coeffs = FracSeries::truncated(
            w.vars().clone(),
            SupportClass::LowerBoundedPerVariable,
            vec![Bound::at_least(floor)],
            vec![Bound::between(lo.min(floor), hi)],
            std::iter::empty(),
        );
        for e in lo.max(floor)..=hi {
            coeffs.add_term(vec![e], &self.field_coefficient(f, s, e));
        }
        Ok(VertexSlice {
            a,
            s: s.clone(),
            window: w.clone(),
            coeffs,
        })
    }

    /// The field tree whose state is the monomial `a`.
    pub fn field_of_monomial(a: &Word) -> LazyField {
        match a.factors().split_first() {
            None => LazyField::Identity,
            Some((g, rest)) => field_product(
                &LazyField::Generator(g.kind, g.color),
                g.mode.to_integer(),
                &Engine::field_of_monomial(&Word(rest.to_vec())),
            ),
        }
    }

    /// D v, the x^1 coefficient of Y(v, x)1 on V_Q.
    pub fn d_operator(&self, v: &StateVector) -> StateVector {
        let vq = self.untwisted();
        vq.coefficient_on(v, &vq.module().vacuum(), 1)
    }

    /// L(m)s, the coefficient of x^{−m−2} in Y_W(ω, x)s.
    pub fn virasoro_mode(&self, omega: &StateVector, m: i64, s: &StateVector) -> StateVector {
        self.coefficient_on(omega, s, (-m - 2) * self.denom())
    }
}

fn add_rational(acc: &mut StateVector, v: &StateVector, c: &BigRational) {
    if c.is_zero() {
        return;
    }
    for (w, x) in v.terms() {
        acc.add_term(w.clone(), &x.scale_rational(c));
    }
}

/// ω = (1/2) Σ_i (Y_{i,−2} X_{i,−1} − q_ii X_{i,−2} Y_{i,−1}) |0> in V_Q.
pub fn conformal_vector(vq: &FockModule) -> StateVector {
    let ctx = vq.context();
    let half = Scalar::from_rational(ctx, BigRational::new(1.into(), 2.into()));
    let mut out = StateVector::zero();
    for i in 1..=vq.q().rank() as u16 {
        let word = |a: GenMode, b: GenMode| vq.state_of_word(&Word(vec![a, b])).expect("integer modes");
        let first = word(GenMode::y(i, -2, 1), GenMode::x(i, -1, 1));
        let second = word(GenMode::x(i, -2, 1), GenMode::y(i, -1, 1));
        out.add_scaled(&first, &half);
        out.add_scaled(&second, &-(&half * vq.q().q(i, i)));
    }
    out
}

/// c = −Σ_i q_ii.
pub fn central_charge(q: &QMatrix) -> Scalar {
    let mut c = Scalar::zero(q.context());
    for i in 1..=q.rank() as u16 {
        c -= q.q(i, i);
    }
    c
}

/// A window in the single variable x with integer bounds.
pub fn x_window(n: i64, lo: i64, hi: i64) -> Window {
    Window::uniform(VarSet::new(&[Var::X], n), lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::CycloContext;

    fn engine(qv: i64, n: u32) -> Engine {
        let ctx = CycloContext::new(12);
        Engine::new(Arc::new(QMatrix::constant(&ctx, 1, qv)), n)
    }

    fn st(e: &Engine, s: &str) -> StateVector {
        StateVector::parse(e.module().context(), s).unwrap()
    }

    #[test]
    fn vacuum_gives_identity() {
        let e = engine(1, 1);
        let s = st(&e, "X[1,-2] Y[1,-1] |0>");
        let slice = e.vertex_apply(&e.module().vacuum(), &s, &x_window(1, -4, 4)).unwrap();
        assert_eq!(slice.coeffs.len(), 1);
        assert_eq!(slice.coeffs.get(&[0]), Some(&s));
    }

    #[test]
    fn generator_pair_singular_part() {
        for qv in [1, -1] {
            let e = engine(qv, 1);
            let u = st(&e, "X[1,-1] |0>");
            let v = st(&e, "Y[1,-1] |0>");
            let slice = e.vertex_apply(&u, &v, &x_window(1, -3, 1)).unwrap();
            assert_eq!(slice.coeffs.get(&[-1]), Some(&e.module().vacuum()));
            assert_eq!(slice.coeffs.get(&[0]), Some(&st(&e, "X[1,-1] Y[1,-1] |0>")));
            assert!(slice.coeffs.get(&[-2]).is_none());
        }
    }

    #[test]
    fn twisted_generator_on_vacuum() {
        let e = engine(-1, 2);
        let u = st(&e, "X[1,-1] |0>");
        let slice = e.vertex_apply(&u, &e.module().vacuum(), &x_window(2, -2, 2)).unwrap();
        // Lowest term: X_{-1/2}|0> x^{-1/2}.
        let (lo, v) = slice.coeffs.terms().next().unwrap();
        assert_eq!(lo, &vec![-1]);
        assert_eq!(v, &st(&e, "X[1,-1/2] |0>"));
        for (exp, _) in slice.coeffs.terms() {
            assert_eq!((exp[0] + 1).rem_euclid(2), 0);
        }
    }

    #[test]
    fn derivative_state() {
        let e = engine(1, 1);
        let u = st(&e, "X[1,-1] |0>");
        assert_eq!(e.d_operator(&u), st(&e, "X[1,-2] |0>"));
        assert!(e.d_operator(&e.module().vacuum()).is_empty());
        // Y(u, x)1 = Σ X_{-k-1}1 x^k.
        for k in 0..4 {
            assert_eq!(
                e.coefficient_on(&u, &e.module().vacuum(), k),
                st(&e, &format!("X[1,{}] |0>", -k - 1))
            );
        }
    }

    #[test]
    fn composite_state_from_derivative_rule() {
        // Y(X_{-2}1, x) = d/dx X(x): coefficient at x^γ is (γ+1) X_{-γ-2}.
        let e = engine(1, 1);
        let a = st(&e, "X[1,-2] |0>");
        let s = st(&e, "Y[1,-3] |0>");
        for gamma in -4..3 {
            let got = e.coefficient_on(&a, &s, gamma);
            let g = GenMode::x(1, -gamma - 2, 1);
            let expected = e.module().apply_mode(&g, &s).unwrap().scale(&Scalar::from_int(e.module().context(), gamma + 1));
            assert_eq!(got, expected, "γ = {gamma}");
        }
    }

    #[test]
    fn conformal_vector_shape() {
        let e = engine(1, 1);
        let omega = conformal_vector(e.module());
        let half = BigRational::new(1.into(), 2.into());
        let ctx = e.module().context();
        let expected = st(&e, "X[1,-1] Y[1,-2] |0>")
            .sub(&st(&e, "X[1,-2] Y[1,-1] |0>"))
            .scale(&Scalar::from_rational(ctx, half));
        assert_eq!(omega, expected);
        assert_eq!(e.module().weight(&omega), crate::fock::Weight::Homogeneous(Mode::from(2)));
        let e3 = engine(-1, 3);
        let omega3 = conformal_vector(e3.untwisted().module());
        assert_eq!(e3.module().theta(&omega3).unwrap(), omega3);
    }

    #[test]
    fn virasoro_zero_mode_and_translation() {
        for qv in [1, -1] {
            let e = engine(qv, 1);
            let omega = conformal_vector(e.module());
            let ctx = e.module().context();
            let u = st(&e, "X[1,-1] |0>");
            let half = Scalar::from_rational(ctx, BigRational::new(1.into(), 2.into()));
            assert_eq!(e.virasoro_mode(&omega, 0, &u), u.scale(&half));
            assert_eq!(e.virasoro_mode(&omega, 0, &omega), omega.scale(&Scalar::from_int(ctx, 2)));
            for s in ["X[1,-2] Y[1,-1] |0>", "Y[1,-3] |0>"] {
                let s = st(&e, s);
                assert_eq!(e.virasoro_mode(&omega, -1, &s), e.d_operator(&s));
            }
        }
    }

    #[test]
    fn lazy_fields_match_vertex_operators() {
        for (qv, n) in [(1, 1), (-1, 1), (-1, 2), (1, 3)] {
            let e = engine(qv, n);
            let states = e.module().basis_up_to(2, Mode::from(-2));
            let vq_states = e.untwisted().module().basis_up_to(2, Mode::from(-2));
            for a in vq_states.iter().filter(|w| w.len() == 2) {
                let f = Engine::field_of_monomial(a);
                let a_state = StateVector::monomial(a.clone(), e.one());
                assert_eq!(e.field_state(&f), a_state);
                for s in states.iter().take(6) {
                    let s = StateVector::monomial(s.clone(), e.one());
                    let w = x_window(n as i64, -4, 3);
                    let lazy = e.field_eval(&f, &s, &w).unwrap();
                    let direct = e.vertex_apply(&a_state, &s, &w).unwrap();
                    assert_eq!(lazy.coeffs.terms().collect::<Vec<_>>(), direct.coeffs.terms().collect::<Vec<_>>());
                }
            }
        }
    }

    #[test]
    fn identity_field_products() {
        let e = engine(-1, 2);
        let g = LazyField::Generator(Kind::X, 1);
        let s = st(&e, "Y[1,-3/2] |0>");
        let w = x_window(2, -3, 3);
        let plain = e.field_eval(&g, &s, &w).unwrap();
        for n in 0..3 {
            let p = field_product(&LazyField::Identity, n, &g);
            assert!(e.field_eval(&p, &s, &w).unwrap().coeffs.is_empty());
        }
        let p = field_product(&LazyField::Identity, -1, &g);
        assert_eq!(e.field_eval(&p, &s, &w).unwrap().coeffs, plain.coeffs);
        let q = field_product(&g, -1, &LazyField::Identity);
        assert_eq!(e.field_eval(&q, &s, &w).unwrap().coeffs, plain.coeffs);
    }
}
