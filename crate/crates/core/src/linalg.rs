//! Small dense numeric helpers shared by the numeric modules.

use nalgebra::{DMatrix, DVector};

use crate::symbolic::{rational_to_f64, Rational};

pub fn to_dmatrix(rows: &[Vec<Rational>], ncols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), ncols, |i, j| rational_to_f64(&rows[i][j]))
}

pub fn to_dvector(v: &[Rational]) -> DVector<f64> {
    DVector::from_iterator(v.len(), v.iter().map(rational_to_f64))
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Numeric rank with threshold `rel_tol · max|entry|` on the singular values.
pub fn numeric_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let scale = max_abs(m);
    if scale == 0.0 {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    sv.iter().filter(|&&s| s > rel_tol * scale).count()
}

/// Rank of a set of column vectors.
pub fn rank_of_columns(cols: &[DVector<f64>], rel_tol: f64) -> usize {
    if cols.is_empty() {
        return 0;
    }
    numeric_rank(&DMatrix::from_columns(cols), rel_tol)
}

/// Incrementally built orthonormal basis used for greedy independence tests.
#[derive(Clone, Debug, Default)]
pub struct GreedyBasis {
    q: Vec<DVector<f64>>,
}

impl GreedyBasis {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    /// Residual of `v` after projection onto the current span (two Gram–Schmidt passes).
    pub fn residual(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut r = v.clone();
        for _ in 0..2 {
            for q in &self.q {
                let c = q.dot(&r);
                r.axpy(-c, q, 1.0);
            }
        }
        r
    }

    /// Adds `v` if its residual exceeds `rel_tol · max|v|`. Returns whether it was added.
    pub fn try_add(&mut self, v: &DVector<f64>, rel_tol: f64) -> bool {
        let scale = v.amax();
        if scale == 0.0 {
            return false;
        }
        let r = self.residual(v);
        if r.amax() <= rel_tol * scale {
            return false;
        }
        let norm = r.norm();
        self.q.push(r / norm);
        true
    }
}

pub fn vectorize(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// Smallest and largest eigenvalues of the symmetric part of `m`.
pub fn sym_eig_range(m: &DMatrix<f64>) -> (f64, f64) {
    let s = (m + m.transpose()) * 0.5;
    let ev = s.symmetric_eigenvalues();
    let lo = ev.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = ev.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

pub fn is_positive_definite(m: &DMatrix<f64>, min_eig: f64) -> bool {
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return false;
    }
    let asym = (m - m.transpose()).amax();
    if asym > 1e-9 * (1.0 + m.amax()) {
        return false;
    }
    sym_eig_range(m).0 > min_eig
}
