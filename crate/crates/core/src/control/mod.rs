//! Lyapunov feedback `u = −K S(z)′ P z` with the gain bound, closed-loop checks,
//! optimal steering by single shooting, and the quadratic-cost costate solution.

mod optimal;
mod steer;

use nalgebra::{DMatrix, DVector};

use crate::engine::{BilinearRealization, NonlinearSystem};
use crate::error::ControlError;
use crate::linalg::{is_positive_definite, sym_eig_range};
use crate::sim::{rk4_step, StateSpace, Trajectory};

pub use optimal::{
    bolza_objective, costate_control, costate_control_lifted, fbsm_solve, FbsmOptions, FbsmResult, QuadraticCost,
};
pub use steer::{
    minimize_multistart, steer_objective, steer_optimize, FlowEvaluator, MinimizeResult, SteerOptions, SteerResult,
    SteeringProblem,
};

/// Minimum eigenvalue accepted as positive for P and K.
pub const PD_MIN_EIG: f64 = 1e-12;

/// Lower limit on the feedback gain when the gain bound is vacuous.
pub const DEFAULT_GAIN_FLOOR: f64 = 1.0;

/// Eigenvalues of `A` all have negative real part.
pub fn is_hurwitz(a: &DMatrix<f64>) -> bool {
    a.nrows() > 0 && a.complex_eigenvalues().iter().all(|l| l.re < 0.0)
}

/// Solves `A′P + PA = −Q_d` through the Kronecker-vectorized system.
pub fn solve_lyapunov(a: &DMatrix<f64>, qd: &DMatrix<f64>) -> Result<DMatrix<f64>, ControlError> {
    let n = a.nrows();
    if a.ncols() != n || qd.nrows() != n || qd.ncols() != n {
        return Err(ControlError::DimensionMismatch {
            expected: n,
            found: qd.nrows(),
        });
    }
    let eig = a.complex_eigenvalues();
    let scale = eig.iter().map(|l| l.norm()).fold(1.0, f64::max);
    for li in eig.iter() {
        for lj in eig.iter() {
            if (li + lj).norm() <= 1e-10 * scale {
                return Err(ControlError::SingularSylvester);
            }
        }
    }
    // vec(A′P + PA) = (I ⊗ A′ + A′ ⊗ I) vec(P) in column-major order
    let at = a.transpose();
    let id = DMatrix::<f64>::identity(n, n);
    let op = id.kronecker(&at) + at.kronecker(&id);
    let rhs = -DVector::from_column_slice(qd.as_slice());
    let sol = op.lu().solve(&rhs).ok_or(ControlError::SingularSylvester)?;
    let p = DMatrix::from_column_slice(n, n, sol.as_slice());
    Ok((&p + p.transpose()) * 0.5)
}

#[derive(Clone, Debug)]
pub struct StabilizerConfig {
    pub p: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub epsilon: f64,
}

impl StabilizerConfig {
    pub fn new(p: DMatrix<f64>, k: DMatrix<f64>, epsilon: f64) -> Result<Self, ControlError> {
        if !is_positive_definite(&p, PD_MIN_EIG) {
            return Err(ControlError::NotPositiveDefinite("P"));
        }
        if !is_positive_definite(&k, PD_MIN_EIG) {
            return Err(ControlError::NotPositiveDefinite("K"));
        }
        if !(epsilon > 0.0) {
            return Err(ControlError::InvalidProblem("epsilon must be positive".into()));
        }
        Ok(StabilizerConfig { p, k, epsilon })
    }
}

/// How a default stabilizer was chosen.
#[derive(Clone, Debug)]
pub struct StabilizerChoice {
    pub config: StabilizerConfig,
    pub a_hurwitz: bool,
    pub bound: f64,
    pub gain: f64,
}

/// `S(z) = [B₁z + D₁, …, B_mz + D_m]` (r × m).
pub fn s_matrix(real: &BilinearRealization, z: &DVector<f64>) -> DMatrix<f64> {
    let cols: Vec<DVector<f64>> = (0..real.m()).map(|i| &real.b()[i] * z + &real.d()[i]).collect();
    if cols.is_empty() {
        DMatrix::zeros(real.r(), 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

/// `u = −K S(z)′ P z`.
pub fn stabilizing_control(real: &BilinearRealization, cfg: &StabilizerConfig, z: &DVector<f64>) -> DVector<f64> {
    let s = s_matrix(real, z);
    -(&cfg.k * (s.transpose() * (&cfg.p * z)))
}

/// Lower bound on `‖√K‖` from the gain lemma:
/// `sqrt(λ_min(Q) / (2 m λ_max(P̄_ℓ)² ε²))`, or 0 when `λ_min(Q) ≤ 0`.
pub fn gain_bound(q: &DMatrix<f64>, p: &DMatrix<f64>, bs: &[DMatrix<f64>], ds: &[DVector<f64>], epsilon: f64) -> f64 {
    let m = bs.len();
    let (lmin_q, _) = sym_eig_range(q);
    if lmin_q <= 0.0 || m == 0 {
        return 0.0;
    }
    let r = p.nrows();
    let mut lmax = f64::NEG_INFINITY;
    for (b, d) in bs.iter().zip(ds) {
        let mut pbar = DMatrix::zeros(r + 1, r + 1);
        pbar.view_mut((0, 0), (r, r)).copy_from(&(p * b));
        let pd = p * d * 0.5;
        pbar.view_mut((0, r), (r, 1)).copy_from(&pd);
        pbar.view_mut((r, 0), (1, r)).copy_from(&pd.transpose());
        pbar[(r, r)] = 1.0;
        lmax = lmax.max(sym_eig_range(&pbar).1);
    }
    (lmin_q / (2.0 * m as f64 * lmax * lmax * epsilon * epsilon)).sqrt()
}

/// Default `(P, K)`: `P` solves `A′P + PA = −I` when `A` is Hurwitz, otherwise `P = I`;
/// `K = cI` with `c = 2·bound²` (a factor 2 above the threshold `‖√K‖ > bound`),
/// floored at `gain_floor` when the bound is vacuous or small.
pub fn default_stabilizer(real: &BilinearRealization, epsilon: f64, gain_floor: f64) -> Result<StabilizerChoice, ControlError> {
    let r = real.r();
    let a = real.a();
    let hurwitz = is_hurwitz(a);
    let p = if hurwitz {
        solve_lyapunov(a, &DMatrix::identity(r, r))?
    } else {
        DMatrix::identity(r, r)
    };
    let q = a.transpose() * &p + &p * a;
    let bound = gain_bound(&q, &p, real.b(), real.d(), epsilon);
    let gain = (2.0 * bound * bound).max(gain_floor);
    let m = real.m();
    let config = StabilizerConfig::new(p, DMatrix::identity(m, m) * gain, epsilon)?;
    Ok(StabilizerChoice {
        config,
        a_hurwitz: hurwitz,
        bound,
        gain,
    })
}

#[derive(Clone, Debug)]
pub struct ClosedLoopResult {
    pub trajectory: Trajectory,
    pub controls: Vec<Vec<f64>>,
    pub v: Vec<f64>,
    pub v_non_increasing: bool,
    pub final_error: Option<f64>,
}

/// Per-step tolerance on increases of `V`.
pub const V_STEP_TOL: f64 = 1e-9;

/// RK4 on the nonlinear system under `u = −K S(Ψ(x))′ P Ψ(x)`, recording
/// `V = Ψ(x)′ P Ψ(x)` at every step.
#[allow(clippy::too_many_arguments)]
pub fn closed_loop_simulate(
    sys: &NonlinearSystem,
    real: &BilinearRealization,
    cfg: &StabilizerConfig,
    x0: &[f64],
    horizon: f64,
    dt: f64,
    x_e: Option<&[f64]>,
) -> Result<ClosedLoopResult, ControlError> {
    if x0.len() != sys.n {
        return Err(ControlError::DimensionMismatch {
            expected: sys.n,
            found: x0.len(),
        });
    }
    if !(dt > 0.0) || !(horizon >= 0.0) {
        return Err(ControlError::InvalidProblem("dt must be positive and T non-negative".into()));
    }
    let compiled = sys.compile();
    let steps = if horizon == 0.0 { 0 } else { ((horizon / dt).round() as usize).max(1) };
    let h = if steps == 0 { 0.0 } else { horizon / steps as f64 };
    let feedback = |x: &[f64]| -> Vec<f64> {
        let z = real.lift(x);
        stabilizing_control(real, cfg, &z).iter().cloned().collect()
    };
    let lyap = |x: &[f64]| -> f64 {
        let z = real.lift(x);
        z.dot(&(&cfg.p * &z))
    };
    let mut rhs = |y: &[f64], out: &mut [f64]| {
        let u = feedback(y);
        compiled.rhs_into(y, &u, out);
    };
    let mut x = x0.to_vec();
    let mut times = vec![0.0];
    let mut states = vec![x.clone()];
    let mut controls = vec![feedback(&x)];
    let mut v = vec![lyap(&x)];
    for k in 1..=steps {
        rk4_step(&mut rhs, &mut x, h);
        let t = h * k as f64;
        if x.iter().any(|c| !c.is_finite()) {
            return Err(ControlError::NonFiniteState(t));
        }
        times.push(t);
        states.push(x.clone());
        controls.push(feedback(&x));
        v.push(lyap(&x));
    }
    let v_non_increasing = v.windows(2).all(|w| w[1] <= w[0] + V_STEP_TOL);
    let final_error = x_e.map(|xe| {
        x.iter()
            .zip(xe)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    });
    Ok(ClosedLoopResult {
        trajectory: Trajectory {
            times,
            states,
            space: StateSpace::Original,
        },
        controls,
        v,
        v_non_increasing,
        final_error,
    })
}
