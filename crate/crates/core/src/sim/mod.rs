//! Simulation of both representations: matrix-exponential flows for the bilinear
//! side, classical RK4 for the nonlinear side, and their cross-check.

mod expm;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::engine::{BilinearRealization, NonlinearSystem};
use crate::error::SimError;

pub use expm::expm;

/// Piecewise-constant control: value `values[k]` on `[breakpoints[k], breakpoints[k+1])`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlSchedule {
    pub breakpoints: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl ControlSchedule {
    pub fn new(breakpoints: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self, SimError> {
        let s = ControlSchedule { breakpoints, values };
        s.check_shape()?;
        Ok(s)
    }

    /// `s = values.len()` segments of equal length on `[0, t_final]`.
    pub fn uniform(t_final: f64, values: Vec<Vec<f64>>) -> Result<Self, SimError> {
        let s = values.len();
        if s == 0 {
            return Self::new(vec![t_final], values);
        }
        let breakpoints = (0..=s).map(|k| t_final * k as f64 / s as f64).collect();
        Self::new(breakpoints, values)
    }

    /// A single constant value on `[0, t_final]`.
    pub fn constant(t_final: f64, u: Vec<f64>) -> Result<Self, SimError> {
        Self::new(vec![0.0, t_final], vec![u])
    }

    fn check_shape(&self) -> Result<(), SimError> {
        if self.breakpoints.len() != self.values.len() + 1 {
            return Err(SimError::ScheduleInvalid(format!(
                "{} breakpoints for {} values",
                self.breakpoints.len(),
                self.values.len()
            )));
        }
        if self.breakpoints.iter().any(|t| !t.is_finite()) {
            return Err(SimError::ScheduleInvalid("non-finite breakpoint".into()));
        }
        if self.breakpoints.windows(2).any(|w| w[1] <= w[0]) {
            return Err(SimError::ScheduleInvalid("breakpoints must be strictly increasing".into()));
        }
        Ok(())
    }

    /// Validates shape and that every value has `m` components.
    pub fn validate(&self, m: usize) -> Result<(), SimError> {
        self.check_shape()?;
        for v in &self.values {
            if v.len() != m {
                return Err(SimError::ScheduleInvalid(format!(
                    "control value has {} components, system has {}",
                    v.len(),
                    m
                )));
            }
            if v.iter().any(|c| !c.is_finite()) {
                return Err(SimError::ScheduleInvalid("non-finite control value".into()));
            }
        }
        Ok(())
    }

    pub fn t0(&self) -> f64 {
        self.breakpoints[0]
    }

    pub fn t_final(&self) -> f64 {
        *self.breakpoints.last().unwrap()
    }

    pub fn segments(&self) -> impl Iterator<Item = (f64, f64, &[f64])> {
        self.values
            .iter()
            .enumerate()
            .map(|(k, v)| (self.breakpoints[k], self.breakpoints[k + 1] - self.breakpoints[k], v.as_slice()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StateSpace {
    Original,
    Lifted,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub space: StateSpace,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last_state(&self) -> &[f64] {
        self.states.last().expect("trajectory has at least one sample")
    }
}

/// `exp(δ(Ā + Σ uᵢB̄ᵢ))` on the augmented state `(z, 1)`.
///
/// The augmented form carries the offsets `D₀, Dᵢ`; when they vanish the last row
/// and column are those of the identity.
pub fn segment_flow(real: &BilinearRealization, u: &[f64], delta: f64) -> Result<DMatrix<f64>, SimError> {
    if u.len() != real.m() {
        return Err(SimError::DimensionMismatch {
            expected: real.m(),
            found: u.len(),
        });
    }
    if !(delta >= 0.0) {
        return Err(SimError::InvalidStep(format!("negative duration {}", delta)));
    }
    expm(&(real.generator(u) * delta))
}

fn check_x0(n: usize, x0: &[f64]) -> Result<(), SimError> {
    if x0.len() != n {
        return Err(SimError::DimensionMismatch {
            expected: n,
            found: x0.len(),
        });
    }
    Ok(())
}

/// Lifted trajectory `z(t)` under a piecewise-constant schedule, `samples_per_segment`
/// samples per segment, each computed by a flow from the segment start.
pub fn simulate_piecewise(
    real: &BilinearRealization,
    sched: &ControlSchedule,
    x0: &[f64],
    samples_per_segment: usize,
) -> Result<Trajectory, SimError> {
    sched.validate(real.m())?;
    check_x0(real.n(), x0)?;
    if samples_per_segment == 0 {
        return Err(SimError::InvalidStep("samples per segment must be at least 1".into()));
    }
    let r = real.r();
    let mut z = real.lift_augmented(x0);
    let mut times = vec![sched.t0()];
    let mut states = vec![z.rows(0, r).iter().cloned().collect::<Vec<_>>()];
    for (t, delta, u) in sched.segments() {
        let g = real.generator(u);
        for j in 1..samples_per_segment {
            let tau = delta * j as f64 / samples_per_segment as f64;
            let zj = expm(&(&g * tau))? * &z;
            times.push(t + tau);
            states.push(zj.rows(0, r).iter().cloned().collect());
        }
        z = expm(&(&g * delta))? * &z;
        times.push(t + delta);
        states.push(z.rows(0, r).iter().cloned().collect());
    }
    Ok(Trajectory {
        times,
        states,
        space: StateSpace::Lifted,
    })
}

/// One classical RK4 step of `ẋ = rhs(x)` in place.
pub fn rk4_step<F>(rhs: &mut F, x: &mut [f64], h: f64)
where
    F: FnMut(&[f64], &mut [f64]),
{
    let n = x.len();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    rhs(x, &mut k1);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * h * k1[i];
    }
    rhs(&tmp, &mut k2);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * h * k2[i];
    }
    rhs(&tmp, &mut k3);
    for i in 0..n {
        tmp[i] = x[i] + h * k3[i];
    }
    rhs(&tmp, &mut k4);
    for i in 0..n {
        x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

/// Number of RK4 steps covering a segment of length `delta` with nominal step `dt`.
pub(crate) fn step_count(delta: f64, dt: f64) -> usize {
    ((delta / dt).round() as usize).max(1)
}

/// Classical RK4 on `ẋ = f(x) + Σ uᵢgᵢ(x)`; segment boundaries are step boundaries.
pub fn simulate_nonlinear_rk4(
    sys: &NonlinearSystem,
    sched: &ControlSchedule,
    x0: &[f64],
    dt: f64,
) -> Result<Trajectory, SimError> {
    sched.validate(sys.m())?;
    check_x0(sys.n, x0)?;
    if !(dt > 0.0) {
        return Err(SimError::InvalidStep(format!("dt must be positive, got {}", dt)));
    }
    let compiled = sys.compile();
    let mut x = x0.to_vec();
    let mut times = vec![sched.t0()];
    let mut states = vec![x.clone()];
    for (t, delta, u) in sched.segments() {
        let steps = step_count(delta, dt);
        let h = delta / steps as f64;
        let mut rhs = |y: &[f64], out: &mut [f64]| compiled.rhs_into(y, u, out);
        for j in 1..=steps {
            rk4_step(&mut rhs, &mut x, h);
            times.push(t + h * j as f64);
            states.push(x.clone());
        }
    }
    Ok(Trajectory {
        times,
        states,
        space: StateSpace::Original,
    })
}

/// Maps a lifted trajectory back to the original coordinates.
pub fn project_trajectory(real: &BilinearRealization, traj: &Trajectory) -> Result<Trajectory, SimError> {
    let states = traj
        .states
        .iter()
        .map(|z| Ok(real.project(&DVector::from_column_slice(z))?.iter().cloned().collect()))
        .collect::<Result<Vec<Vec<f64>>, SimError>>()?;
    Ok(Trajectory {
        times: traj.times.clone(),
        states,
        space: StateSpace::Original,
    })
}

/// Bilinear trajectory sampled at the RK4 step instants of the same schedule.
pub fn simulate_piecewise_on_grid(
    real: &BilinearRealization,
    sched: &ControlSchedule,
    x0: &[f64],
    dt: f64,
) -> Result<Trajectory, SimError> {
    sched.validate(real.m())?;
    check_x0(real.n(), x0)?;
    if !(dt > 0.0) {
        return Err(SimError::InvalidStep(format!("dt must be positive, got {}", dt)));
    }
    let r = real.r();
    let mut z = real.lift_augmented(x0);
    let mut times = vec![sched.t0()];
    let mut states = vec![z.rows(0, r).iter().cloned().collect::<Vec<_>>()];
    for (t, delta, u) in sched.segments() {
        let steps = step_count(delta, dt);
        let h = delta / steps as f64;
        let g = real.generator(u);
        for j in 1..steps {
            let zj = expm(&(&g * (h * j as f64)))? * &z;
            times.push(t + h * j as f64);
            states.push(zj.rows(0, r).iter().cloned().collect());
        }
        z = expm(&(&g * delta))? * &z;
        times.push(t + delta);
        states.push(z.rows(0, r).iter().cloned().collect());
    }
    Ok(Trajectory {
        times,
        states,
        space: StateSpace::Lifted,
    })
}

/// `max_t ‖P_n z(t) − x_RK4(t)‖∞` over the RK4 step instants.
pub fn consistency_error(
    sys: &NonlinearSystem,
    real: &BilinearRealization,
    sched: &ControlSchedule,
    x0: &[f64],
    dt: f64,
) -> Result<f64, SimError> {
    let xs = simulate_nonlinear_rk4(sys, sched, x0, dt)?;
    let zs = simulate_piecewise_on_grid(real, sched, x0, dt)?;
    let proj = real.projection_matrix()?;
    let mut worst = 0.0_f64;
    for (x, z) in xs.states.iter().zip(&zs.states) {
        let p = proj * DVector::from_column_slice(z);
        for (a, b) in p.iter().zip(x) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(worst)
}
