//! Finite-dimensional spaces of canonical expressions.
//!
//! Basis elements are kept in insertion order. Alongside them the space keeps a
//! fully reduced row-echelon form of their coefficient vectors over the atom index,
//! where each row also records which combination of basis elements produced it. That
//! second record is what turns a membership test into exact basis coordinates.

use std::collections::{BTreeMap, HashMap};

use num_traits::{One, Zero};

use super::expr::{Atom, CanonicalExpr};
use super::{Rational, SymbolicError};

type Sparse = BTreeMap<usize, Rational>;

#[derive(Clone, Debug)]
struct Row {
    pivot: usize,
    /// atom index → coefficient; coefficient at `pivot` is 1
    coeffs: Sparse,
    /// basis index → weight, so that Σ weight·basis = this row as a function
    combo: Sparse,
}

/// Span of a finite list of [`CanonicalExpr`]s.
///
/// With `modulo_constants` set, the constant atom is ignored by every linear-algebra
/// operation: membership then means membership up to an additive constant.
#[derive(Clone, Debug)]
pub struct FunctionSpace {
    n: usize,
    modulo_constants: bool,
    basis: Vec<CanonicalExpr>,
    atoms: Vec<Atom>,
    atom_pos: HashMap<Atom, usize>,
    rows: Vec<Row>,
}

fn axpy(target: &mut Sparse, k: &Rational, src: &Sparse) {
    for (i, v) in src {
        let entry = target.entry(*i).or_insert_with(Rational::zero);
        *entry += k * v;
        if entry.is_zero() {
            target.remove(i);
        }
    }
}

impl FunctionSpace {
    pub fn new(n: usize) -> Self {
        Self::with_mode(n, false)
    }

    pub fn with_mode(n: usize, modulo_constants: bool) -> Self {
        FunctionSpace {
            n,
            modulo_constants,
            basis: Vec::new(),
            atoms: Vec::new(),
            atom_pos: HashMap::new(),
            rows: Vec::new(),
        }
    }

    /// Reduces a generator list to a basis of its span (`space_reduce`).
    pub fn reduce(n: usize, gens: &[CanonicalExpr]) -> Result<Self, SymbolicError> {
        let mut s = Self::new(n);
        for g in gens {
            s.insert(g)?;
        }
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn ambient_dim(&self) -> usize {
        self.n
    }

    pub fn is_modulo_constants(&self) -> bool {
        self.modulo_constants
    }

    pub fn basis(&self) -> &[CanonicalExpr] {
        &self.basis
    }

    /// Every atom that appears in some basis element, in order of first appearance.
    pub fn atom_index(&self) -> &[Atom] {
        &self.atoms
    }

    /// Dense reduced row-echelon coefficient matrix (rows × atom index).
    pub fn coeff_matrix(&self) -> Vec<Vec<Rational>> {
        self.rows
            .iter()
            .map(|r| {
                (0..self.atoms.len())
                    .map(|j| r.coeffs.get(&j).cloned().unwrap_or_else(Rational::zero))
                    .collect()
            })
            .collect()
    }

    fn check_dim(&self, e: &CanonicalExpr) -> Result<(), SymbolicError> {
        if e.dim() != self.n {
            return Err(SymbolicError::DimensionMismatch {
                expected: self.n,
                found: e.dim(),
            });
        }
        Ok(())
    }

    fn relevant<'a>(&self, e: &'a CanonicalExpr) -> impl Iterator<Item = (&'a Atom, &'a Rational)> {
        let skip_const = self.modulo_constants;
        e.terms()
            .iter()
            .filter(move |(a, _)| !(skip_const && a.is_constant()))
    }

    /// Coordinates of `e` over the atom index, or `None` if `e` uses an unknown atom.
    fn known_vector(&self, e: &CanonicalExpr) -> Option<Sparse> {
        let mut v = Sparse::new();
        for (a, c) in self.relevant(e) {
            v.insert(*self.atom_pos.get(a)?, c.clone());
        }
        Some(v)
    }

    fn vector_registering(&mut self, e: &CanonicalExpr) -> Sparse {
        let mut v = Sparse::new();
        let terms: Vec<(Atom, Rational)> = self
            .relevant(e)
            .map(|(a, c)| (a.clone(), c.clone()))
            .collect();
        for (a, c) in terms {
            let idx = match self.atom_pos.get(&a) {
                Some(&i) => i,
                None => {
                    self.atoms.push(a.clone());
                    self.atom_pos.insert(a, self.atoms.len() - 1);
                    self.atoms.len() - 1
                }
            };
            v.insert(idx, c);
        }
        v
    }

    /// Eliminates the current pivots from `v`; returns the residual and the
    /// basis combination that was subtracted.
    fn eliminate(&self, mut v: Sparse) -> (Sparse, Sparse) {
        let mut used = Sparse::new();
        for row in &self.rows {
            if let Some(c) = v.get(&row.pivot).cloned() {
                let neg = -c.clone();
                axpy(&mut v, &neg, &row.coeffs);
                axpy(&mut used, &c, &row.combo);
            }
        }
        (v, used)
    }

    fn push_row(&mut self, residual: Sparse, combo: Sparse) {
        let pivot = *residual.keys().next().expect("nonzero residual");
        let inv = Rational::one() / &residual[&pivot];
        let coeffs: Sparse = residual.into_iter().map(|(k, v)| (k, v * &inv)).collect();
        let combo: Sparse = combo.into_iter().map(|(k, v)| (k, v * &inv)).collect();
        for row in &mut self.rows {
            if let Some(c) = row.coeffs.get(&pivot).cloned() {
                let neg = -c;
                axpy(&mut row.coeffs, &neg, &coeffs);
                axpy(&mut row.combo, &neg, &combo);
            }
        }
        self.rows.push(Row {
            pivot,
            coeffs,
            combo,
        });
    }

    /// Adds `e` to the basis if it is not already in the span. Returns whether the
    /// dimension grew.
    pub fn insert(&mut self, e: &CanonicalExpr) -> Result<bool, SymbolicError> {
        self.check_dim(e)?;
        let v = self.vector_registering(e);
        let (residual, used) = self.eliminate(v);
        if residual.is_empty() {
            return Ok(false);
        }
        let idx = self.basis.len();
        self.basis.push(e.clone());
        let mut combo = Sparse::new();
        combo.insert(idx, Rational::one());
        axpy(&mut combo, &-Rational::one(), &used);
        self.push_row(residual, combo);
        Ok(true)
    }

    /// Adds the part of `e` not already spanned, rescaled so that its coefficient on
    /// its earliest-indexed atom is 1. Returns the admitted element, if any.
    ///
    /// In constant-modulo mode the admitted element carries no constant term.
    pub fn insert_normalized(&mut self, e: &CanonicalExpr) -> Result<Option<CanonicalExpr>, SymbolicError> {
        self.check_dim(e)?;
        let v = self.vector_registering(e);
        let (residual, _) = self.eliminate(v);
        if residual.is_empty() {
            return Ok(None);
        }
        let pivot = *residual.keys().next().unwrap();
        let inv = Rational::one() / &residual[&pivot];
        let mut admitted = CanonicalExpr::zero(self.n);
        for (k, c) in &residual {
            admitted = admitted.add(&CanonicalExpr::from_atom(self.atoms[*k].clone(), c * &inv))?;
        }
        let idx = self.basis.len();
        self.basis.push(admitted.clone());
        let mut combo = Sparse::new();
        combo.insert(idx, Rational::one());
        // residual·inv is exactly the admitted element
        let scaled: Sparse = residual.into_iter().map(|(k, v)| (k, v * &inv)).collect();
        self.push_row(scaled, combo);
        Ok(Some(admitted))
    }

    /// Exact basis coordinates of `e`, or `None` if `e` is outside the span
    /// (`space_contains`). In constant-modulo mode the constant part is ignored.
    pub fn contains(&self, e: &CanonicalExpr) -> Result<Option<Vec<Rational>>, SymbolicError> {
        self.check_dim(e)?;
        let Some(v) = self.known_vector(e) else {
            return Ok(None);
        };
        let (residual, used) = self.eliminate(v);
        if !residual.is_empty() {
            return Ok(None);
        }
        let mut coords = vec![Rational::zero(); self.basis.len()];
        for (k, c) in used {
            coords[k] = c;
        }
        Ok(Some(coords))
    }

    pub fn contains_all(&self, other: &FunctionSpace) -> Result<bool, SymbolicError> {
        for b in other.basis() {
            if self.contains(b)?.is_none() {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// `space_sum`: span of the union, keeping `self`'s basis first.
    pub fn sum(&self, other: &FunctionSpace) -> Result<FunctionSpace, SymbolicError> {
        if self.n != other.n {
            return Err(SymbolicError::DimensionMismatch {
                expected: self.n,
                found: other.n,
            });
        }
        let mut s = self.clone();
        for b in other.basis() {
            s.insert(b)?;
        }
        Ok(s)
    }
}
