//! Canonical expressions over the closed function class
//! `polynomial × trig(affine) × exp(affine)` with exact rational coefficients.
//!
//! Every value is kept in a canonical form: a map from [`Atom`] to a nonzero
//! coefficient. Products of trigonometric factors are rewritten eagerly with the
//! product-to-sum identities, so each atom carries at most one `sin`/`cos` and at
//! most one `exp` factor, and two expressions denote the same function exactly when
//! their term maps coincide.

use std::collections::BTreeMap;
use std::fmt;

use num_bigint::BigInt;
use num_traits::{One, Signed, ToPrimitive, Zero};

use super::{Rational, SymbolicError};

/// Converts an exact rational to the nearest `f64`.
pub fn rational_to_f64(q: &Rational) -> f64 {
    q.to_f64().unwrap_or_else(|| {
        // Extremely large numerators/denominators; fall back to a ratio of floats.
        let n = q.numer().to_f64().unwrap_or(f64::NAN);
        let d = q.denom().to_f64().unwrap_or(f64::NAN);
        n / d
    })
}

pub(crate) fn rat(n: i64) -> Rational {
    Rational::from_integer(BigInt::from(n))
}

pub(crate) fn half() -> Rational {
    Rational::new(BigInt::from(1), BigInt::from(2))
}

/// `a·x + c` with rational coefficients.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AffineForm {
    pub linear: Vec<Rational>,
    pub offset: Rational,
}

impl AffineForm {
    pub fn zero(n: usize) -> Self {
        AffineForm {
            linear: vec![Rational::zero(); n],
            offset: Rational::zero(),
        }
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn is_zero(&self) -> bool {
        self.offset.is_zero() && self.linear.iter().all(Zero::is_zero)
    }

    fn leading_is_negative(&self) -> bool {
        match self.linear.iter().find(|c| !c.is_zero()) {
            Some(c) => c.is_negative(),
            None => self.offset.is_negative(),
        }
    }

    fn neg(&self) -> Self {
        AffineForm {
            linear: self.linear.iter().map(|c| -c).collect(),
            offset: -&self.offset,
        }
    }

    fn add(&self, other: &Self) -> Self {
        AffineForm {
            linear: self
                .linear
                .iter()
                .zip(&other.linear)
                .map(|(a, b)| a + b)
                .collect(),
            offset: &self.offset + &other.offset,
        }
    }

    fn sub(&self, other: &Self) -> Self {
        self.add(&other.neg())
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.linear
            .iter()
            .zip(x)
            .map(|(c, xi)| rational_to_f64(c) * xi)
            .sum::<f64>()
            + rational_to_f64(&self.offset)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TrigKind {
    Cos,
    Sin,
}

/// One canonical basis function: `x^monomial · trig(arg) · exp(arg)`.
///
/// Trig arguments are sign-normalized (leading nonzero coefficient positive) and
/// neither argument is ever the zero form.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Atom {
    pub monomial: Vec<u32>,
    pub trig: Option<(TrigKind, AffineForm)>,
    pub expo: Option<AffineForm>,
}

impl Atom {
    pub fn one(n: usize) -> Self {
        Atom {
            monomial: vec![0; n],
            trig: None,
            expo: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.monomial.len()
    }

    pub fn is_constant(&self) -> bool {
        self.trig.is_none() && self.expo.is_none() && self.monomial.iter().all(|&e| e == 0)
    }

    pub fn degree(&self) -> u32 {
        self.monomial.iter().sum()
    }

    /// Product of two atoms. Returns the canonical terms of the result with their
    /// rational weights (one term, or two after product-to-sum).
    fn mul(&self, other: &Atom) -> Vec<(Atom, Rational)> {
        let monomial: Vec<u32> = self
            .monomial
            .iter()
            .zip(&other.monomial)
            .map(|(a, b)| a + b)
            .collect();
        let expo = match (&self.expo, &other.expo) {
            (None, None) => None,
            (Some(a), None) | (None, Some(a)) => Some(a.clone()),
            (Some(a), Some(b)) => {
                let s = a.add(b);
                if s.is_zero() {
                    None
                } else {
                    Some(s)
                }
            }
        };
        let trig_terms: Vec<(Option<(TrigKind, AffineForm)>, Rational)> =
            match (&self.trig, &other.trig) {
                (None, None) => vec![(None, Rational::one())],
                (Some(t), None) | (None, Some(t)) => vec![(Some(t.clone()), Rational::one())],
                (Some((ka, a)), Some((kb, b))) => product_to_sum(*ka, a, *kb, b),
            };
        trig_terms
            .into_iter()
            .map(|(trig, w)| {
                (
                    Atom {
                        monomial: monomial.clone(),
                        trig,
                        expo: expo.clone(),
                    },
                    w,
                )
            })
            .collect()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut v = 1.0;
        for (xi, &e) in x.iter().zip(&self.monomial) {
            if e > 0 {
                v *= xi.powi(e as i32);
            }
        }
        if let Some((kind, arg)) = &self.trig {
            let a = arg.eval(x);
            v *= match kind {
                TrigKind::Sin => a.sin(),
                TrigKind::Cos => a.cos(),
            };
        }
        if let Some(arg) = &self.expo {
            v *= arg.eval(x).exp();
        }
        v
    }
}

/// Normalizes `kind(arg)` into `weight · kind(arg')` with a canonical argument.
/// `None` in the returned trig slot means the factor folded to the constant 1.
fn normalize_trig(kind: TrigKind, arg: AffineForm) -> Option<(Option<(TrigKind, AffineForm)>, Rational)> {
    if arg.is_zero() {
        return match kind {
            TrigKind::Sin => None,
            TrigKind::Cos => Some((None, Rational::one())),
        };
    }
    if arg.leading_is_negative() {
        let flipped = arg.neg();
        match kind {
            TrigKind::Sin => Some((Some((kind, flipped)), -Rational::one())),
            TrigKind::Cos => Some((Some((kind, flipped)), Rational::one())),
        }
    } else {
        Some((Some((kind, arg)), Rational::one()))
    }
}

fn product_to_sum(
    ka: TrigKind,
    a: &AffineForm,
    kb: TrigKind,
    b: &AffineForm,
) -> Vec<(Option<(TrigKind, AffineForm)>, Rational)> {
    use TrigKind::*;
    let h = half();
    let diff = a.sub(b);
    let sum = a.add(b);
    // (kind, argument, weight) before normalization
    let raw: [(TrigKind, AffineForm, Rational); 2] = match (ka, kb) {
        // sin a sin b = ½cos(a−b) − ½cos(a+b)
        (Sin, Sin) => [(Cos, diff, h.clone()), (Cos, sum, -h)],
        // cos a cos b = ½cos(a−b) + ½cos(a+b)
        (Cos, Cos) => [(Cos, diff, h.clone()), (Cos, sum, h)],
        // sin a cos b = ½sin(a+b) + ½sin(a−b)
        (Sin, Cos) => [(Sin, sum, h.clone()), (Sin, diff, h)],
        (Cos, Sin) => [(Sin, sum, h.clone()), (Sin, b.sub(a), h)],
    };
    let mut out: Vec<(Option<(TrigKind, AffineForm)>, Rational)> = Vec::with_capacity(2);
    for (kind, arg, w) in raw {
        if let Some((t, s)) = normalize_trig(kind, arg) {
            let w = w * s;
            if let Some(existing) = out.iter_mut().find(|(et, _)| *et == t) {
                existing.1 += w;
            } else {
                out.push((t, w));
            }
        }
    }
    out.retain(|(_, w)| !w.is_zero());
    out
}

/// An exact, canonical smooth function on ℝⁿ.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CanonicalExpr {
    n: usize,
    terms: BTreeMap<Atom, Rational>,
}

impl CanonicalExpr {
    pub fn zero(n: usize) -> Self {
        CanonicalExpr {
            n,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(n: usize, c: Rational) -> Self {
        let mut e = Self::zero(n);
        if !c.is_zero() {
            e.terms.insert(Atom::one(n), c);
        }
        e
    }

    pub fn one(n: usize) -> Self {
        Self::constant(n, Rational::one())
    }

    /// The coordinate function `x_{i+1}` (zero-based index).
    pub fn var(n: usize, i: usize) -> Result<Self, SymbolicError> {
        if i >= n {
            return Err(SymbolicError::IndexOutOfRange { index: i + 1, n });
        }
        let mut atom = Atom::one(n);
        atom.monomial[i] = 1;
        Ok(Self::from_atom(atom, Rational::one()))
    }

    pub fn from_atom(atom: Atom, coeff: Rational) -> Self {
        let n = atom.dim();
        let mut e = Self::zero(n);
        if !coeff.is_zero() {
            e.terms.insert(atom, coeff);
        }
        e
    }

    /// `kind(arg)` for an affine argument, canonicalized.
    pub fn trig(kind: TrigKind, arg: AffineForm) -> Self {
        let n = arg.dim();
        match normalize_trig(kind, arg) {
            None => Self::zero(n),
            Some((t, w)) => Self::from_atom(
                Atom {
                    monomial: vec![0; n],
                    trig: t,
                    expo: None,
                },
                w,
            ),
        }
    }

    pub fn exp(arg: AffineForm) -> Self {
        let n = arg.dim();
        if arg.is_zero() {
            return Self::one(n);
        }
        Self::from_atom(
            Atom {
                monomial: vec![0; n],
                trig: None,
                expo: Some(arg),
            },
            Rational::one(),
        )
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn terms(&self) -> &BTreeMap<Atom, Rational> {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coeff(&self, atom: &Atom) -> Option<&Rational> {
        self.terms.get(atom)
    }

    /// Coefficient of the constant atom `1`.
    pub fn constant_term(&self) -> Rational {
        self.terms
            .get(&Atom::one(self.n))
            .cloned()
            .unwrap_or_else(Rational::zero)
    }

    pub fn without_constant(&self) -> Self {
        let mut e = self.clone();
        e.terms.remove(&Atom::one(self.n));
        e
    }

    /// If the expression is a constant, returns it.
    pub fn as_constant(&self) -> Option<Rational> {
        match self.terms.len() {
            0 => Some(Rational::zero()),
            1 => {
                let (a, c) = self.terms.iter().next().unwrap();
                a.is_constant().then(|| c.clone())
            }
            _ => None,
        }
    }

    /// If the expression is affine in x (degree ≤ 1 polynomial), returns it.
    pub fn as_affine(&self) -> Option<AffineForm> {
        let mut form = AffineForm::zero(self.n);
        for (atom, c) in &self.terms {
            if atom.trig.is_some() || atom.expo.is_some() {
                return None;
            }
            match atom.degree() {
                0 => form.offset = c.clone(),
                1 => {
                    let i = atom.monomial.iter().position(|&e| e == 1).unwrap();
                    form.linear[i] = c.clone();
                }
                _ => return None,
            }
        }
        Some(form)
    }

    fn check_dim(&self, other: &Self) -> Result<(), SymbolicError> {
        if self.n != other.n {
            return Err(SymbolicError::DimensionMismatch {
                expected: self.n,
                found: other.n,
            });
        }
        Ok(())
    }

    fn accumulate(&mut self, atom: Atom, c: Rational) {
        if c.is_zero() {
            return;
        }
        use std::collections::btree_map::Entry;
        match self.terms.entry(atom) {
            Entry::Vacant(v) => {
                v.insert(c);
            }
            Entry::Occupied(mut o) => {
                *o.get_mut() += c;
                if o.get().is_zero() {
                    o.remove();
                }
            }
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self, SymbolicError> {
        self.check_dim(other)?;
        let mut out = self.clone();
        for (a, c) in &other.terms {
            out.accumulate(a.clone(), c.clone());
        }
        Ok(out)
    }

    pub fn sub(&self, other: &Self) -> Result<Self, SymbolicError> {
        self.add(&other.neg())
    }

    pub fn neg(&self) -> Self {
        CanonicalExpr {
            n: self.n,
            terms: self.terms.iter().map(|(a, c)| (a.clone(), -c)).collect(),
        }
    }

    pub fn scale(&self, k: &Rational) -> Self {
        if k.is_zero() {
            return Self::zero(self.n);
        }
        CanonicalExpr {
            n: self.n,
            terms: self.terms.iter().map(|(a, c)| (a.clone(), c * k)).collect(),
        }
    }

    pub fn mul(&self, other: &Self) -> Result<Self, SymbolicError> {
        self.check_dim(other)?;
        let mut out = Self::zero(self.n);
        for (a, ca) in &self.terms {
            for (b, cb) in &other.terms {
                let w = ca * cb;
                for (atom, k) in a.mul(b) {
                    out.accumulate(atom, &w * k);
                }
            }
        }
        Ok(out)
    }

    pub fn pow(&self, mut k: u32) -> Self {
        let mut base = self.clone();
        let mut acc = Self::one(self.n);
        while k > 0 {
            if k & 1 == 1 {
                acc = acc.mul(&base).expect("same dimension");
            }
            k >>= 1;
            if k > 0 {
                base = base.mul(&base).expect("same dimension");
            }
        }
        acc
    }

    /// Exact partial derivative with respect to `x_{i+1}` (zero-based `i`).
    pub fn partial(&self, i: usize) -> Result<Self, SymbolicError> {
        if i >= self.n {
            return Err(SymbolicError::IndexOutOfRange {
                index: i + 1,
                n: self.n,
            });
        }
        let mut out = Self::zero(self.n);
        for (atom, c) in &self.terms {
            let e = atom.monomial[i];
            if e > 0 {
                let mut a = atom.clone();
                a.monomial[i] -= 1;
                out.accumulate(a, c * rat(e as i64));
            }
            if let Some((kind, arg)) = &atom.trig {
                let slope = &arg.linear[i];
                if !slope.is_zero() {
                    let (dkind, sign) = match kind {
                        TrigKind::Sin => (TrigKind::Cos, rat(1)),
                        TrigKind::Cos => (TrigKind::Sin, rat(-1)),
                    };
                    let mut a = atom.clone();
                    a.trig = Some((dkind, arg.clone()));
                    out.accumulate(a, c * slope * sign);
                }
            }
            if let Some(arg) = &atom.expo {
                let slope = &arg.linear[i];
                if !slope.is_zero() {
                    out.accumulate(atom.clone(), c * slope);
                }
            }
        }
        Ok(out)
    }

    pub fn gradient(&self) -> Vec<CanonicalExpr> {
        (0..self.n)
            .map(|i| self.partial(i).expect("index in range"))
            .collect()
    }

    /// `L_τ γ = Σ_l τ_l ∂γ/∂x_l`.
    pub fn lie_derivative(&self, field: &VectorField) -> Result<Self, SymbolicError> {
        if field.dim() != self.n {
            return Err(SymbolicError::DimensionMismatch {
                expected: self.n,
                found: field.dim(),
            });
        }
        let mut out = Self::zero(self.n);
        for (l, comp) in field.components().iter().enumerate() {
            if comp.is_zero() {
                continue;
            }
            let d = self.partial(l)?;
            if d.is_zero() {
                continue;
            }
            out = out.add(&d.mul(comp)?)?;
        }
        Ok(out)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(a, c)| rational_to_f64(c) * a.eval(x))
            .sum()
    }

    /// Floating-point form for repeated evaluation.
    pub fn compile(&self) -> NumericExpr {
        NumericExpr {
            terms: self
                .terms
                .iter()
                .map(|(a, c)| NumericTerm {
                    coeff: rational_to_f64(c),
                    powers: a
                        .monomial
                        .iter()
                        .enumerate()
                        .filter(|(_, &e)| e > 0)
                        .map(|(i, &e)| (i, e as i32))
                        .collect(),
                    trig: a.trig.as_ref().map(|(k, arg)| (*k, compile_affine(arg))),
                    expo: a.expo.as_ref().map(compile_affine),
                })
                .collect(),
        }
    }
}

fn compile_affine(arg: &AffineForm) -> (Vec<(usize, f64)>, f64) {
    (
        arg.linear
            .iter()
            .enumerate()
            .filter(|(_, c)| !c.is_zero())
            .map(|(i, c)| (i, rational_to_f64(c)))
            .collect(),
        rational_to_f64(&arg.offset),
    )
}

/// Sparse affine argument `Σ cᵢ xᵢ + c₀`.
type NumericAffine = (Vec<(usize, f64)>, f64);

#[derive(Clone, Debug)]
struct NumericTerm {
    coeff: f64,
    powers: Vec<(usize, i32)>,
    trig: Option<(TrigKind, NumericAffine)>,
    expo: Option<NumericAffine>,
}

/// Floating-point image of a [`CanonicalExpr`].
#[derive(Clone, Debug)]
pub struct NumericExpr {
    terms: Vec<NumericTerm>,
}

impl NumericExpr {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let affine = |(lin, off): &(Vec<(usize, f64)>, f64)| -> f64 {
            lin.iter().map(|&(i, c)| c * x[i]).sum::<f64>() + off
        };
        self.terms
            .iter()
            .map(|t| {
                let mut v = t.coeff;
                for &(i, e) in &t.powers {
                    v *= x[i].powi(e);
                }
                if let Some((kind, arg)) = &t.trig {
                    let a = affine(arg);
                    v *= match kind {
                        TrigKind::Sin => a.sin(),
                        TrigKind::Cos => a.cos(),
                    };
                }
                if let Some(arg) = &t.expo {
                    v *= affine(arg).exp();
                }
                v
            })
            .sum()
    }
}

/// A vector field on ℝⁿ with canonical components.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct VectorField {
    components: Vec<CanonicalExpr>,
}

impl VectorField {
    pub fn new(components: Vec<CanonicalExpr>) -> Result<Self, SymbolicError> {
        let n = components.len();
        for c in &components {
            if c.dim() != n {
                return Err(SymbolicError::DimensionMismatch {
                    expected: n,
                    found: c.dim(),
                });
            }
        }
        Ok(VectorField { components })
    }

    pub fn zero(n: usize) -> Self {
        VectorField {
            components: vec![CanonicalExpr::zero(n); n],
        }
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[CanonicalExpr] {
        &self.components
    }

    pub fn is_zero(&self) -> bool {
        self.components.iter().all(CanonicalExpr::is_zero)
    }

    pub fn neg(&self) -> Self {
        VectorField {
            components: self.components.iter().map(CanonicalExpr::neg).collect(),
        }
    }

    /// Jacobi–Lie bracket `[self, other] = (∂other/∂x)·self − (∂self/∂x)·other`.
    pub fn bracket(&self, other: &VectorField) -> Result<VectorField, SymbolicError> {
        if self.dim() != other.dim() {
            return Err(SymbolicError::DimensionMismatch {
                expected: self.dim(),
                found: other.dim(),
            });
        }
        let components = self
            .components
            .iter()
            .zip(&other.components)
            .map(|(a, b)| b.lie_derivative(self)?.sub(&a.lie_derivative(other)?))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(VectorField { components })
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.components.iter().map(|c| c.eval(x)).collect()
    }

    pub fn compile(&self) -> Vec<NumericExpr> {
        self.components.iter().map(CanonicalExpr::compile).collect()
    }
}

fn fmt_affine(f: &mut fmt::Formatter<'_>, arg: &AffineForm) -> fmt::Result {
    let mut first = true;
    let mut write_term = |f: &mut fmt::Formatter<'_>, c: &Rational, var: Option<usize>| -> fmt::Result {
        let neg = c.is_negative();
        let mag = c.abs();
        if first {
            if neg {
                write!(f, "-")?;
            }
        } else {
            write!(f, "{}", if neg { " - " } else { " + " })?;
        }
        first = false;
        match var {
            Some(i) if mag.is_one() => write!(f, "x{}", i + 1),
            Some(i) => write!(f, "{}*x{}", mag, i + 1),
            None => write!(f, "{}", mag),
        }
    };
    for (i, c) in arg.linear.iter().enumerate() {
        if !c.is_zero() {
            write_term(f, c, Some(i))?;
        }
    }
    if !arg.offset.is_zero() {
        write_term(f, &arg.offset, None)?;
    }
    if first {
        write!(f, "0")?;
    }
    Ok(())
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut factors = 0;
        for (i, &e) in self.monomial.iter().enumerate() {
            if e == 0 {
                continue;
            }
            if factors > 0 {
                write!(f, "*")?;
            }
            if e == 1 {
                write!(f, "x{}", i + 1)?;
            } else {
                write!(f, "x{}^{}", i + 1, e)?;
            }
            factors += 1;
        }
        if let Some((kind, arg)) = &self.trig {
            if factors > 0 {
                write!(f, "*")?;
            }
            write!(f, "{}(", if *kind == TrigKind::Sin { "sin" } else { "cos" })?;
            fmt_affine(f, arg)?;
            write!(f, ")")?;
            factors += 1;
        }
        if let Some(arg) = &self.expo {
            if factors > 0 {
                write!(f, "*")?;
            }
            write!(f, "exp(")?;
            fmt_affine(f, arg)?;
            write!(f, ")")?;
            factors += 1;
        }
        if factors == 0 {
            write!(f, "1")?;
        }
        Ok(())
    }
}

impl fmt::Display for CanonicalExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (k, (atom, c)) in self.terms.iter().enumerate() {
            let neg = c.is_negative();
            let mag = c.abs();
            if k == 0 {
                if neg {
                    write!(f, "-")?;
                }
            } else {
                write!(f, "{}", if neg { " - " } else { " + " })?;
            }
            if atom.is_constant() {
                write!(f, "{}", mag)?;
            } else if mag.is_one() {
                write!(f, "{}", atom)?;
            } else {
                write!(f, "{}*{}", mag, atom)?;
            }
        }
        Ok(())
    }
}

impl fmt::Display for VectorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.components.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{}", c)?;
        }
        write!(f, ")")
    }
}
