use nalgebra::{DMatrix, DVector};

use crate::engine::{BilinearRealization, NonlinearSystem};
use crate::error::{ReachError, SymbolicError};
use crate::linalg::rank_of_columns;
use crate::par::Execution;
use crate::symbolic::VectorField;

/// Upper bound on the number of new brackets kept per nesting level.
const LEVEL_CAP: usize = 256;

/// Jacobi–Lie bracket `(∂τ₂/∂x)τ₁ − (∂τ₁/∂x)τ₂`.
pub fn vf_bracket(t1: &VectorField, t2: &VectorField) -> Result<VectorField, SymbolicError> {
    t1.bracket(t2)
}

/// Bracket of the linear fields `z ↦ Mz` and `z ↦ Nz`, which is `z ↦ (NM − MN)z`.
pub fn matrix_field_bracket(m: &DMatrix<f64>, n: &DMatrix<f64>) -> DMatrix<f64> {
    n * m - m * n
}

/// Generic level-by-level bracket generation with early exit at full rank.
///
/// `eval` maps an element to its value at the point; elements that evaluate to
/// zero everywhere symbolically are skipped by `is_zero`.
fn bracket_rank<T, B, E, Z>(
    level1: Vec<T>,
    depth: usize,
    full: usize,
    rank_tol: f64,
    bracket: B,
    eval: E,
    is_zero: Z,
) -> Result<usize, ReachError>
where
    T: Clone + PartialEq,
    B: Fn(&T, &T) -> Result<T, ReachError>,
    E: Fn(&T) -> DVector<f64>,
    Z: Fn(&T) -> bool,
{
    let base: Vec<T> = level1.into_iter().filter(|t| !is_zero(t)).collect();
    let mut values: Vec<DVector<f64>> = base.iter().map(&eval).collect();
    let mut rank = rank_of_columns(&values, rank_tol);
    let mut previous = base.clone();
    let mut seen = base.clone();
    for _ in 1..depth {
        if rank >= full || previous.is_empty() {
            break;
        }
        let mut next = Vec::new();
        'outer: for x in &base {
            for y in &previous {
                if x == y {
                    continue;
                }
                let b = bracket(x, y)?;
                if is_zero(&b) || seen.contains(&b) {
                    continue;
                }
                seen.push(b.clone());
                next.push(b);
                if next.len() >= LEVEL_CAP {
                    break 'outer;
                }
            }
        }
        values.extend(next.iter().map(&eval));
        rank = rank_of_columns(&values, rank_tol);
        previous = next;
    }
    Ok(rank.min(full))
}

/// Rank at `x` of the Lie algebra generated by `f, g_1, …, g_m`, using brackets up to
/// nesting `depth`.
pub fn lie_rank_nonlinear(sys: &NonlinearSystem, x: &[f64], depth: usize, rank_tol: f64) -> Result<usize, ReachError> {
    if x.len() != sys.n {
        return Err(ReachError::DimensionMismatch {
            expected: sys.n,
            found: x.len(),
        });
    }
    let level1: Vec<VectorField> = sys.fields().into_iter().cloned().collect();
    bracket_rank(
        level1,
        depth.max(1),
        sys.n,
        rank_tol,
        |a, b| Ok(a.bracket(b)?),
        |v| DVector::from_vec(v.eval(x)),
        |v| v.is_zero(),
    )
}

/// Rank at `z` (an r-vector) of the Lie algebra generated by the linear fields of the
/// augmented bilinear system.
pub fn lie_rank_bilinear(real: &BilinearRealization, z: &DVector<f64>, depth: usize, rank_tol: f64) -> Result<usize, ReachError> {
    if z.len() != real.r() {
        return Err(ReachError::DimensionMismatch {
            expected: real.r(),
            found: z.len(),
        });
    }
    let mut za = DVector::zeros(real.r() + 1);
    za.rows_mut(0, real.r()).copy_from(z);
    za[real.r()] = 1.0;
    let mut level1 = vec![real.augmented_a()];
    level1.extend((0..real.m()).map(|i| real.augmented_b(i)));
    bracket_rank(
        level1,
        depth.max(1),
        real.r(),
        rank_tol,
        |a, b| Ok(matrix_field_bracket(a, b)),
        |m| m * &za,
        |m| m.iter().all(|v| *v == 0.0),
    )
}

/// Whether the two ranks agree at every sample point (bilinear side evaluated at `Ψ(x)`).
pub fn dim_equivalence(
    sys: &NonlinearSystem,
    real: &BilinearRealization,
    points: &[Vec<f64>],
    depth: usize,
    rank_tol: f64,
    exec: Execution,
) -> Result<bool, ReachError> {
    let pairs = exec.map(points.len(), |i| -> Result<(usize, usize), ReachError> {
        let x = &points[i];
        let a = lie_rank_nonlinear(sys, x, depth, rank_tol)?;
        let b = lie_rank_bilinear(real, &real.lift(x), depth, rank_tol)?;
        Ok((a, b))
    });
    for p in pairs {
        let (a, b) = p?;
        if a != b {
            return Ok(false);
        }
    }
    Ok(true)
}
