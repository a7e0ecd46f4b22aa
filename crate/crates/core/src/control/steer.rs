use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::engine::BilinearRealization;
use crate::error::ControlError;
use crate::par::Execution;
use crate::sim::{expm, ControlSchedule};

/// Steer `x0` towards `target` over `[0, horizon]` with `segments` equal
/// piecewise-constant control segments.
#[derive(Clone, Debug)]
pub struct SteeringProblem {
    pub x0: Vec<f64>,
    pub target: Vec<f64>,
    pub horizon: f64,
    pub segments: usize,
    pub u_bound: Option<f64>,
}

impl SteeringProblem {
    pub(crate) fn validate(&self, real: &BilinearRealization) -> Result<(), ControlError> {
        for v in [&self.x0, &self.target] {
            if v.len() != real.n() {
                return Err(ControlError::DimensionMismatch {
                    expected: real.n(),
                    found: v.len(),
                });
            }
        }
        if self.segments == 0 {
            return Err(ControlError::InvalidProblem("at least one segment is required".into()));
        }
        if !(self.horizon > 0.0) {
            return Err(ControlError::InvalidProblem("horizon must be positive".into()));
        }
        if let Some(b) = self.u_bound {
            if !(b > 0.0) {
                return Err(ControlError::InvalidProblem("control bound must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Cached augmented matrices and the projected lift for repeated endpoint evaluation.
#[derive(Clone, Debug)]
pub struct FlowEvaluator {
    abar: DMatrix<f64>,
    bbar: Vec<DMatrix<f64>>,
    proj: DMatrix<f64>,
    z0: DVector<f64>,
}

impl FlowEvaluator {
    pub fn new(real: &BilinearRealization, x0: &[f64]) -> Result<Self, ControlError> {
        let p = real.projection_matrix()?;
        let r = real.r();
        let mut proj = DMatrix::zeros(real.n(), r + 1);
        proj.view_mut((0, 0), (real.n(), r)).copy_from(p);
        Ok(FlowEvaluator {
            abar: real.augmented_a(),
            bbar: (0..real.m()).map(|i| real.augmented_b(i)).collect(),
            proj,
            z0: real.lift_augmented(x0),
        })
    }

    pub fn m(&self) -> usize {
        self.bbar.len()
    }

    /// `[P_n, 0]`, mapping the augmented state to `x`.
    pub fn projection(&self) -> &DMatrix<f64> {
        &self.proj
    }

    pub fn initial_state(&self) -> &DVector<f64> {
        &self.z0
    }

    pub fn generator(&self, u: &[f64]) -> DMatrix<f64> {
        let mut g = self.abar.clone();
        for (b, ui) in self.bbar.iter().zip(u) {
            if *ui != 0.0 {
                g += b * *ui;
            }
        }
        g
    }

    /// Augmented state at the horizon; `values` holds `segments × m` controls, segment-major.
    pub fn final_state(&self, values: &[f64], horizon: f64, segments: usize) -> Result<DVector<f64>, ControlError> {
        let m = self.m();
        if values.len() != segments * m {
            return Err(ControlError::DimensionMismatch {
                expected: segments * m,
                found: values.len(),
            });
        }
        let delta = horizon / segments as f64;
        let mut z = self.z0.clone();
        for k in 0..segments {
            let u = &values[k * m..(k + 1) * m];
            z = expm(&(self.generator(u) * delta))? * z;
        }
        Ok(z)
    }

    pub fn endpoint(&self, values: &[f64], horizon: f64, segments: usize) -> Result<DVector<f64>, ControlError> {
        Ok(&self.proj * self.final_state(values, horizon, segments)?)
    }
}

/// `J(u) = ‖P_n z(T) − x_F‖²` for the piecewise-constant controls in `values`.
pub fn steer_objective(real: &BilinearRealization, prob: &SteeringProblem, values: &[f64]) -> Result<f64, ControlError> {
    prob.validate(real)?;
    let eval = FlowEvaluator::new(real, &prob.x0)?;
    let x = eval.endpoint(values, prob.horizon, prob.segments)?;
    Ok(squared_distance(&x, &prob.target))
}

fn squared_distance(x: &DVector<f64>, target: &[f64]) -> f64 {
    x.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum()
}

#[derive(Clone, Debug)]
pub struct SteerOptions {
    pub starts: usize,
    pub max_iter: usize,
    pub grad_tol: f64,
    pub cost_tol: f64,
    pub start_scale: f64,
    pub seed: u64,
    pub exec: Execution,
}

impl Default for SteerOptions {
    fn default() -> Self {
        SteerOptions {
            starts: 8,
            max_iter: 500,
            grad_tol: 1e-8,
            cost_tol: 1e-14,
            start_scale: 1.0,
            seed: 42,
            exec: Execution::Parallel,
        }
    }
}

#[derive(Clone, Debug)]
pub struct MinimizeResult {
    pub x: Vec<f64>,
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    pub best_start: usize,
    pub start_costs: Vec<f64>,
    /// No start improved on its own initial cost.
    pub no_improvement: bool,
}

struct Run {
    x: Vec<f64>,
    cost: f64,
    initial: f64,
    iterations: usize,
    converged: bool,
}

fn clip(x: &mut [f64], bound: Option<f64>) {
    if let Some(b) = bound {
        for v in x.iter_mut() {
            *v = v.clamp(-b, b);
        }
    }
}

fn fd_gradient<F: Fn(&[f64]) -> f64>(obj: &F, x: &[f64]) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = 1e-6 * (1.0 + x[i].abs());
            probe[i] = x[i] + h;
            let fp = obj(&probe);
            probe[i] = x[i] - h;
            let fm = obj(&probe);
            probe[i] = x[i];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Projected gradient descent with Barzilai–Borwein steps and Armijo backtracking.
fn descend<F: Fn(&[f64]) -> f64>(obj: &F, start: Vec<f64>, bound: Option<f64>, opts: &SteerOptions) -> Run {
    let mut x = start;
    clip(&mut x, bound);
    let mut f = obj(&x);
    let initial = f;
    let mut g = fd_gradient(obj, &x);
    let ginf = |g: &[f64]| g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut alpha = 1.0 / ginf(&g).max(1e-12);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        if !f.is_finite() {
            break;
        }
        if f < opts.cost_tol || ginf(&g) < opts.grad_tol {
            converged = true;
            break;
        }
        iterations += 1;
        let mut step = alpha;
        let mut accepted = None;
        for _ in 0..60 {
            let mut xn: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - step * gi).collect();
            clip(&mut xn, bound);
            let moved: Vec<f64> = x.iter().zip(&xn).map(|(a, b)| a - b).collect();
            let fnew = obj(&xn);
            if fnew.is_finite() && fnew <= f - 1e-4 * dot(&g, &moved) && fnew < f {
                accepted = Some((xn, fnew));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fnew)) = accepted else {
            break;
        };
        let gn = fd_gradient(obj, &xn);
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        alpha = if sy > 0.0 { dot(&s, &s) / sy } else { 2.0 * step };
        alpha = alpha.clamp(1e-12, 1e8);
        x = xn;
        f = fnew;
        g = gn;
    }
    if !converged && (f < opts.cost_tol || ginf(&g) < opts.grad_tol) {
        converged = true;
    }
    Run {
        x,
        cost: f,
        initial,
        iterations,
        converged,
    }
}

/// Minimizes `obj` over `dim` variables from `opts.starts` starting points: start 0 is
/// zero, the rest are uniform in `[−start_scale, start_scale]` from a per-start ChaCha
/// stream. Ties on the final cost go to the lowest start index.
pub fn minimize_multistart<F>(obj: F, dim: usize, bound: Option<f64>, opts: &SteerOptions) -> MinimizeResult
where
    F: Fn(&[f64]) -> f64 + Sync + Send,
{
    let starts = opts.starts.max(1);
    let runs = opts.exec.map(starts, |k| {
        let start = if k == 0 {
            vec![0.0; dim]
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(k as u64);
            (0..dim)
                .map(|_| rng.random_range(-opts.start_scale..=opts.start_scale))
                .collect()
        };
        descend(&obj, start, bound, opts)
    });
    let mut best = 0;
    for (k, run) in runs.iter().enumerate() {
        if run.cost < runs[best].cost || (!runs[best].cost.is_finite() && run.cost.is_finite()) {
            best = k;
        }
    }
    let no_improvement = runs.iter().all(|r| !(r.cost < r.initial));
    let start_costs = runs.iter().map(|r| r.cost).collect();
    let run = &runs[best];
    MinimizeResult {
        x: run.x.clone(),
        cost: run.cost,
        iterations: run.iterations,
        converged: run.converged,
        best_start: best,
        start_costs,
        no_improvement: no_improvement && run.cost >= opts.cost_tol,
    }
}

#[derive(Clone, Debug)]
pub struct SteerResult {
    pub schedule: ControlSchedule,
    pub cost: f64,
    pub endpoint: Vec<f64>,
    pub optimizer: MinimizeResult,
}

/// Single-shooting steering on the lifted system with exact segment flows.
pub fn steer_optimize(real: &BilinearRealization, prob: &SteeringProblem, opts: &SteerOptions) -> Result<SteerResult, ControlError> {
    prob.validate(real)?;
    let eval = FlowEvaluator::new(real, &prob.x0)?;
    let m = real.m();
    let dim = prob.segments * m;
    let objective = |v: &[f64]| match eval.endpoint(v, prob.horizon, prob.segments) {
        Ok(x) => squared_distance(&x, &prob.target),
        Err(_) => f64::INFINITY,
    };
    let res = minimize_multistart(objective, dim, prob.u_bound, opts);
    let x = eval.endpoint(&res.x, prob.horizon, prob.segments)?;
    let values: Vec<Vec<f64>> = if m == 0 {
        vec![Vec::new(); prob.segments]
    } else {
        res.x.chunks(m).map(|c| c.to_vec()).collect()
    };
    let schedule = ControlSchedule::uniform(prob.horizon, values)?;
    Ok(SteerResult {
        schedule,
        cost: squared_distance(&x, &prob.target),
        endpoint: x.iter().cloned().collect(),
        optimizer: res,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{ebif_run, extract_bilinear, tests::unicycle, ConstantMode, EbifConfig};

    fn unicycle_real() -> BilinearRealization {
        let sys = unicycle();
        let cfg = EbifConfig::coordinates(3).with_mode(ConstantMode::Augment);
        extract_bilinear(&sys, &ebif_run(&sys, &cfg).unwrap(), &cfg).unwrap()
    }

    #[test]
    fn objective_at_start_is_distance_of_free_motion() {
        let real = unicycle_real();
        let prob = SteeringProblem {
            x0: vec![0.0, 0.0, 0.0],
            target: vec![1.0, 1.0, 0.5],
            horizon: 2.0,
            segments: 2,
            u_bound: None,
        };
        let j = steer_objective(&real, &prob, &[0.0; 4]).unwrap();
        assert!((j - 2.25).abs() < 1e-12);
        // drive forward at speed 1/2 for the whole horizon
        let j = steer_objective(&real, &prob, &[0.5, 0.0, 0.5, 0.0]).unwrap();
        assert!((j - 1.25).abs() < 1e-10);
    }

    #[test]
    fn quadratic_minimum() {
        let opts = SteerOptions {
            exec: Execution::Sequential,
            ..Default::default()
        };
        let res = minimize_multistart(|x: &[f64]| (x[0] - 1.0).powi(2) + 10.0 * (x[1] + 0.5).powi(2), 2, None, &opts);
        assert!(res.cost < 1e-12);
        assert!((res.x[0] - 1.0).abs() < 1e-6 && (res.x[1] + 0.5).abs() < 1e-6);
        let bounded = minimize_multistart(|x: &[f64]| (x[0] - 3.0).powi(2), 1, Some(1.0), &opts);
        assert!((bounded.x[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn multistart_deterministic_across_execution_modes() {
        let real = unicycle_real();
        let prob = SteeringProblem {
            x0: vec![0.0, 0.0, 0.0],
            target: vec![0.5, 0.2, 0.3],
            horizon: 1.0,
            segments: 2,
            u_bound: None,
        };
        let seq = SteerOptions {
            exec: Execution::Sequential,
            max_iter: 50,
            ..Default::default()
        };
        let par = SteerOptions {
            exec: Execution::Parallel,
            ..seq.clone()
        };
        let a = steer_optimize(&real, &prob, &seq).unwrap();
        let b = steer_optimize(&real, &prob, &par).unwrap();
        assert_eq!(a.optimizer.x, b.optimizer.x);
        assert_eq!(a.optimizer.best_start, b.optimizer.best_start);
    }

    #[test]
    fn rejects_bad_problems() {
        let real = unicycle_real();
        let mut prob = SteeringProblem {
            x0: vec![0.0, 0.0, 0.0],
            target: vec![0.0, 0.0, 0.0],
            horizon: 1.0,
            segments: 0,
            u_bound: None,
        };
        assert!(steer_objective(&real, &prob, &[]).is_err());
        prob.segments = 1;
        prob.target.pop();
        assert!(steer_objective(&real, &prob, &[0.0, 0.0]).is_err());
    }
}
