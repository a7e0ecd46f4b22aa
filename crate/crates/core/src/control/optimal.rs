use nalgebra::{DMatrix, DVector};

use super::steer::FlowEvaluator;
use crate::engine::BilinearRealization;
use crate::error::ControlError;
use crate::linalg::{is_positive_definite, sym_eig_range};
use crate::sim::expm;

/// `J = ∫₀ᵀ (x′Kx + u′Ru) dt + x(T)′Q x(T)` in original coordinates.
#[derive(Clone, Debug)]
pub struct QuadraticCost {
    pub k: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub q_terminal: DMatrix<f64>,
}

impl QuadraticCost {
    pub fn new(k: DMatrix<f64>, r: DMatrix<f64>, q_terminal: DMatrix<f64>) -> Result<Self, ControlError> {
        for (name, mat) in [("K", &k), ("Q", &q_terminal)] {
            if !mat.is_square() || (mat - mat.transpose()).amax() > 1e-12 || sym_eig_range(mat).0 < -1e-12 {
                return Err(ControlError::InvalidProblem(format!(
                    "{} must be symmetric positive semidefinite",
                    name
                )));
            }
        }
        if !is_positive_definite(&r, 0.0) {
            return Err(ControlError::NotPositiveDefinite("R"));
        }
        if k.nrows() != q_terminal.nrows() {
            return Err(ControlError::DimensionMismatch {
                expected: k.nrows(),
                found: q_terminal.nrows(),
            });
        }
        Ok(QuadraticCost { k, r, q_terminal })
    }

    fn check(&self, real: &BilinearRealization) -> Result<(), ControlError> {
        if self.k.nrows() != real.n() {
            return Err(ControlError::DimensionMismatch {
                expected: real.n(),
                found: self.k.nrows(),
            });
        }
        if self.r.nrows() != real.m() {
            return Err(ControlError::DimensionMismatch {
                expected: real.m(),
                found: self.r.nrows(),
            });
        }
        Ok(())
    }
}

/// Pulls an `n × n` weight back to the augmented lifted state: `P̄′WP̄` with `P̄ = [P_n, 0]`.
fn lifted_weight(proj: &DMatrix<f64>, w: &DMatrix<f64>) -> DMatrix<f64> {
    proj.transpose() * w * proj
}

/// Exact Bolza cost of a piecewise-constant control on the lifted system. Each segment
/// integral `∫₀^δ e^{G′s} W e^{Gs} ds` comes from one exponential of the block matrix
/// `[[−G′, W], [0, G]]δ` (Van Loan).
pub fn bolza_objective(
    real: &BilinearRealization,
    cost: &QuadraticCost,
    x0: &[f64],
    values: &[f64],
    horizon: f64,
    segments: usize,
) -> Result<f64, ControlError> {
    cost.check(real)?;
    let eval = FlowEvaluator::new(real, x0)?;
    bolza_with(&eval, cost, values, horizon, segments)
}

pub(crate) fn bolza_with(
    eval: &FlowEvaluator,
    cost: &QuadraticCost,
    values: &[f64],
    horizon: f64,
    segments: usize,
) -> Result<f64, ControlError> {
    let m = eval.m();
    if segments == 0 || values.len() != segments * m {
        return Err(ControlError::DimensionMismatch {
            expected: segments * m,
            found: values.len(),
        });
    }
    let w = lifted_weight(eval.projection(), &cost.k);
    let q = lifted_weight(eval.projection(), &cost.q_terminal);
    let ra = w.nrows();
    let delta = horizon / segments as f64;
    let mut z = eval.initial_state().clone();
    let mut total = 0.0;
    for k in 0..segments {
        let u = DVector::from_column_slice(&values[k * m..(k + 1) * m]);
        let g = eval.generator(u.as_slice());
        let mut block = DMatrix::zeros(2 * ra, 2 * ra);
        block.view_mut((0, 0), (ra, ra)).copy_from(&(-g.transpose()));
        block.view_mut((0, ra), (ra, ra)).copy_from(&w);
        block.view_mut((ra, ra), (ra, ra)).copy_from(&g);
        let e = expm(&(block * delta))?;
        let f22 = e.view((ra, ra), (ra, ra)).into_owned();
        let f12 = e.view((0, ra), (ra, ra)).into_owned();
        let integral = f22.transpose() * f12;
        total += z.dot(&(integral * &z)) + u.dot(&(&cost.r * &u)) * delta;
        z = f22 * z;
    }
    Ok(total + z.dot(&(q * &z)))
}

fn r_solve(r: &DMatrix<f64>, w: DVector<f64>) -> Result<DVector<f64>, ControlError> {
    if !r.is_square() || r.nrows() != w.len() {
        return Err(ControlError::DimensionMismatch {
            expected: w.len(),
            found: r.nrows(),
        });
    }
    let sol = r.clone().lu().solve(&w).ok_or(ControlError::SingularR)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(ControlError::SingularR);
    }
    Ok(sol)
}

/// `u = ½R⁻¹ S(z)′λ̄` with `S(z) = [B₁z + D₁, …]`, the stationary point of the
/// Hamiltonian `λ̄′F − L`.
pub fn costate_control_lifted(
    real: &BilinearRealization,
    lambda: &DVector<f64>,
    z: &DVector<f64>,
    r: &DMatrix<f64>,
) -> Result<DVector<f64>, ControlError> {
    if lambda.len() != real.r() || z.len() != real.r() {
        return Err(ControlError::DimensionMismatch {
            expected: real.r(),
            found: lambda.len().min(z.len()),
        });
    }
    let s = super::s_matrix(real, z);
    Ok(r_solve(r, s.transpose() * lambda)? * 0.5)
}

/// Costate control evaluated at `z = Ψ(x)`.
pub fn costate_control(
    real: &BilinearRealization,
    lambda: &DVector<f64>,
    x: &[f64],
    r: &DMatrix<f64>,
) -> Result<DVector<f64>, ControlError> {
    if x.len() != real.n() {
        return Err(ControlError::DimensionMismatch {
            expected: real.n(),
            found: x.len(),
        });
    }
    costate_control_lifted(real, lambda, &real.lift(x), r)
}

#[derive(Clone, Debug)]
pub struct FbsmOptions {
    pub relaxation: f64,
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for FbsmOptions {
    fn default() -> Self {
        FbsmOptions {
            relaxation: 0.5,
            tol: 1e-6,
            max_sweeps: 1000,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FbsmResult {
    pub times: Vec<f64>,
    /// Control held on `[t_k, t_{k+1})`.
    pub controls: Vec<Vec<f64>>,
    pub states: Vec<Vec<f64>>,
    pub cost: f64,
    pub sweeps: usize,
    pub converged: bool,
}

/// Forward–backward sweep on the lifted system: RK4 forward for `z`, RK4 backward
/// for `λ̇ = −(A + Σuᵢ Bᵢ)′λ + 2K̄z` from `λ(T) = −2Q̄z(T)`, then a relaxed update
/// towards the costate control.
pub fn fbsm_solve(
    real: &BilinearRealization,
    cost: &QuadraticCost,
    x0: &[f64],
    horizon: f64,
    dt: f64,
    opts: &FbsmOptions,
) -> Result<FbsmResult, ControlError> {
    cost.check(real)?;
    if x0.len() != real.n() {
        return Err(ControlError::DimensionMismatch {
            expected: real.n(),
            found: x0.len(),
        });
    }
    if !(dt > 0.0) || !(horizon >= 0.0) {
        return Err(ControlError::InvalidProblem("dt must be positive and T non-negative".into()));
    }
    let eval = FlowEvaluator::new(real, x0)?;
    let m = real.m();
    let r = real.r();
    let p = real.projection_matrix()?.clone();
    let z0 = real.lift(x0);
    if horizon == 0.0 {
        let c = x0_cost(&cost.q_terminal, x0);
        return Ok(FbsmResult {
            times: vec![0.0],
            controls: Vec::new(),
            states: vec![x0.to_vec()],
            cost: c,
            sweeps: 0,
            converged: true,
        });
    }
    let steps = ((horizon / dt).round() as usize).max(1);
    let h = horizon / steps as f64;
    let kbar = p.transpose() * &cost.k * &p;
    let qbar = p.transpose() * &cost.q_terminal * &p;
    let at = real.a().transpose();
    let bt: Vec<DMatrix<f64>> = real.b().iter().map(|b| b.transpose()).collect();

    let mut u = vec![DVector::<f64>::zeros(m); steps];
    let mut zs = vec![z0.clone(); steps + 1];
    let mut lambdas = vec![DVector::<f64>::zeros(r); steps + 1];
    let mut sweeps = 0;
    let mut converged = false;
    while sweeps < opts.max_sweeps {
        sweeps += 1;
        // forward
        zs[0] = z0.clone();
        for k in 0..steps {
            let uk = u[k].as_slice();
            let f = |z: &DVector<f64>| real.bilinear_rhs(z, uk);
            let z = &zs[k];
            let k1 = f(z);
            let k2 = f(&(z + &k1 * (h / 2.0)));
            let k3 = f(&(z + &k2 * (h / 2.0)));
            let k4 = f(&(z + &k3 * h));
            let next = z + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            if next.iter().any(|v| !v.is_finite()) {
                return Err(ControlError::NonFiniteState(h * (k + 1) as f64));
            }
            zs[k + 1] = next;
        }
        // backward
        lambdas[steps] = -(&qbar * &zs[steps]) * 2.0;
        for k in (0..steps).rev() {
            let mut mt = at.clone();
            for (b, ui) in bt.iter().zip(u[k].iter()) {
                mt += b * *ui;
            }
            let g = |l: &DVector<f64>, z: &DVector<f64>| -(&mt * l) + &kbar * z * 2.0;
            let (z_hi, z_lo) = (&zs[k + 1], &zs[k]);
            let z_mid = (z_hi + z_lo) * 0.5;
            let l = &lambdas[k + 1];
            let k1 = g(l, z_hi);
            let k2 = g(&(l - &k1 * (h / 2.0)), &z_mid);
            let k3 = g(&(l - &k2 * (h / 2.0)), &z_mid);
            let k4 = g(&(l - &k3 * h), z_lo);
            lambdas[k] = l - (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        }
        // update
        let mut change = 0.0f64;
        let mut largest = 0.0f64;
        for k in 0..steps {
            let zbar = (&zs[k] + &zs[k + 1]) * 0.5;
            let lbar = (&lambdas[k] + &lambdas[k + 1]) * 0.5;
            let target = costate_control_lifted(real, &lbar, &zbar, &cost.r)?;
            let new = &u[k] * (1.0 - opts.relaxation) + target * opts.relaxation;
            change = change.max((&new - &u[k]).amax());
            largest = largest.max(new.amax());
            if new.iter().any(|v| !v.is_finite()) {
                largest = f64::INFINITY;
            }
            u[k] = new;
        }
        if largest > 1e6 {
            return Err(ControlError::SweepDiverged(largest));
        }
        if change < opts.tol {
            converged = true;
            break;
        }
    }
    let flat: Vec<f64> = u.iter().flat_map(|v| v.iter().cloned()).collect();
    let total = bolza_with(&eval, cost, &flat, horizon, steps)?;
    let states = zs.iter().map(|z| (&p * z).iter().cloned().collect()).collect();
    Ok(FbsmResult {
        times: (0..=steps).map(|k| h * k as f64).collect(),
        controls: u.iter().map(|v| v.iter().cloned().collect()).collect(),
        states,
        cost: total,
        sweeps,
        converged,
    })
}

fn x0_cost(q: &DMatrix<f64>, x0: &[f64]) -> f64 {
    let x = DVector::from_column_slice(x0);
    x.dot(&(q * &x))
}
