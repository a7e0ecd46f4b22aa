//! Reachable sets through the bilinear semigroup `e^{ĀT} e^{H}`, `H ∈ span{ad_Ā^k B̄ᵢ}`,
//! and Lie-algebra rank comparisons between the two representations.
//!
//! All matrix computations use the augmented homogeneous form `(z, 1)` so that offset
//! terms need no special casing.

mod lie;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::engine::BilinearRealization;
use crate::error::ReachError;
use crate::linalg::{max_abs, vectorize, GreedyBasis};
use crate::par::Execution;
use crate::sim::expm;

pub use lie::{
    dim_equivalence, lie_rank_bilinear, lie_rank_nonlinear, matrix_field_bracket, vf_bracket,
};

/// Relative numeric rank tolerance used throughout this module.
pub const DEFAULT_RANK_TOL: f64 = 1e-9;

/// `𝔥 = span{ad_A^k Bᵢ}` with an independent subset.
#[derive(Clone, Debug)]
pub struct AdjointSpan {
    /// Chain elements, each rescaled to unit max-abs entry.
    pub generators: Vec<DMatrix<f64>>,
    /// Independent subset of `generators`, rescaled to unit Frobenius norm.
    pub basis: Vec<DMatrix<f64>>,
    pub hypothesis_holds: bool,
    pub rank_tol: f64,
}

impl AdjointSpan {
    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    /// `Σ h_k basis_k`.
    pub fn combine(&self, h: &[f64]) -> DMatrix<f64> {
        let n = self.basis.first().map_or(0, |b| b.nrows());
        let mut out = DMatrix::zeros(n, n);
        for (c, b) in h.iter().zip(&self.basis) {
            out += b * *c;
        }
        out
    }
}

fn check_square(m: &DMatrix<f64>, r: usize) -> Result<(), ReachError> {
    if m.nrows() != r || m.ncols() != r {
        return Err(ReachError::NonSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    Ok(())
}

/// Builds the chains `ad_A^k Bᵢ`, `k = 0, …, r²−1`.
///
/// A chain is cut as soon as its newest element depends on its own earlier elements:
/// from then on every further element stays in the same span, so the truncated chain
/// spans the same space as the full one.
pub fn adjoint_chain(a: &DMatrix<f64>, bs: &[DMatrix<f64>], rank_tol: f64) -> Result<AdjointSpan, ReachError> {
    let r = a.nrows();
    check_square(a, r)?;
    for b in bs {
        check_square(b, r)?;
    }
    let mut generators = Vec::new();
    let mut global = GreedyBasis::new();
    let mut basis = Vec::new();
    for b in bs {
        let mut own = GreedyBasis::new();
        let mut g = b.clone();
        for _ in 0..(r * r).max(1) {
            let scale = max_abs(&g);
            if scale == 0.0 {
                break;
            }
            g /= scale;
            generators.push(g.clone());
            let v = vectorize(&g);
            if global.try_add(&v, rank_tol) {
                basis.push(&g / g.norm());
            }
            if !own.try_add(&v, rank_tol) {
                break;
            }
            let next = a * &g - &g * a;
            // g has unit max entry; anything at roundoff level of ‖A‖ is zero
            if max_abs(&next) <= rank_tol * (r as f64) * max_abs(a) {
                break;
            }
            g = next;
        }
    }
    let mut span = AdjointSpan {
        generators,
        basis,
        hypothesis_holds: false,
        rank_tol,
    };
    span.hypothesis_holds = commutation_check(&span, bs);
    Ok(span)
}

/// The chain of a realization, on its augmented matrices.
pub fn adjoint_chain_for(real: &BilinearRealization, rank_tol: f64) -> Result<AdjointSpan, ReachError> {
    let bs: Vec<_> = (0..real.m()).map(|i| real.augmented_b(i)).collect();
    adjoint_chain(&real.augmented_a(), &bs, rank_tol)
}

/// Whether `[G, B_j] = 0` (to tolerance) for every chain element `G` and every `B_j`.
pub fn commutation_check(span: &AdjointSpan, bs: &[DMatrix<f64>]) -> bool {
    for g in &span.generators {
        let gs = max_abs(g);
        for b in bs {
            let bsc = max_abs(b);
            if bsc == 0.0 || gs == 0.0 {
                continue;
            }
            let c = g * b - b * g;
            if max_abs(&c) > span.rank_tol * gs * bsc {
                return false;
            }
        }
    }
    true
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReachSample {
    pub h: Vec<f64>,
    pub x: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct ReachSampleSet {
    pub horizon: f64,
    pub coeff_box: f64,
    /// Set when the commutation hypothesis failed, so the samples are only an inner
    /// approximation by words of the form `e^{ĀT}e^H`.
    pub heuristic: bool,
    pub samples: Vec<ReachSample>,
}

/// Evaluates `P_n e^{ĀT} e^{H} (Ψ(x₀), 1)` for fixed drift flow and lifted start.
#[derive(Clone, Debug)]
pub struct ImageMap<'a> {
    real: &'a BilinearRealization,
    span: &'a AdjointSpan,
    drift: DMatrix<f64>,
    z0: DVector<f64>,
    proj: DMatrix<f64>,
}

impl<'a> ImageMap<'a> {
    pub fn new(
        real: &'a BilinearRealization,
        span: &'a AdjointSpan,
        x0: &[f64],
        horizon: f64,
    ) -> Result<Self, ReachError> {
        if x0.len() != real.n() {
            return Err(ReachError::DimensionMismatch {
                expected: real.n(),
                found: x0.len(),
            });
        }
        let drift = expm(&(real.augmented_a() * horizon))?;
        let p = real.projection_matrix()?;
        let mut proj = DMatrix::zeros(real.n(), real.r() + 1);
        proj.view_mut((0, 0), (real.n(), real.r())).copy_from(p);
        Ok(ImageMap {
            real,
            span,
            drift,
            z0: real.lift_augmented(x0),
            proj,
        })
    }

    pub fn dim(&self) -> usize {
        self.span.dim()
    }

    pub fn realization(&self) -> &BilinearRealization {
        self.real
    }

    pub fn eval(&self, h: &[f64]) -> Result<DVector<f64>, ReachError> {
        let e = expm(&self.span.combine(h))?;
        Ok(&self.proj * (&self.drift * (e * &self.z0)))
    }
}

fn sample_coeffs(seed: u64, index: usize, d: usize, coeff_box: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    (0..d).map(|_| rng.random_range(-coeff_box..=coeff_box)).collect()
}

/// Samples `N` coefficient vectors uniformly in `[−box, box]^{dim 𝔥}` and maps each
/// through `P_n e^{ĀT} e^{H}`. Sample `i` depends only on `(seed, i)`.
#[allow(clippy::too_many_arguments)]
pub fn reach_sample(
    real: &BilinearRealization,
    span: &AdjointSpan,
    x0: &[f64],
    horizon: f64,
    coeff_box: f64,
    count: usize,
    seed: u64,
    exec: Execution,
) -> Result<ReachSampleSet, ReachError> {
    if span.dim() == 0 && (0..real.m()).any(|i| max_abs(&real.augmented_b(i)) > 0.0) {
        return Err(ReachError::EmptySpan);
    }
    let map = ImageMap::new(real, span, x0, horizon)?;
    let d = span.dim();
    let samples = exec
        .map(count, |i| {
            let h = sample_coeffs(seed, i, d, coeff_box);
            map.eval(&h).map(|x| ReachSample {
                h,
                x: x.iter().cloned().collect(),
            })
        })
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ReachSampleSet {
        horizon,
        coeff_box,
        heuristic: !span.hypothesis_holds,
        samples,
    })
}

/// Doubles the coefficient box, starting from `start`, until the bounding box of a
/// trial sample of the image covers the bounding box of `targets` (or `max_doublings`
/// is reached). Returns the chosen box.
#[allow(clippy::too_many_arguments)]
pub fn tune_coeff_box(
    real: &BilinearRealization,
    span: &AdjointSpan,
    x0: &[f64],
    horizon: f64,
    targets: &[Vec<f64>],
    start: f64,
    max_doublings: usize,
    trial: usize,
    seed: u64,
    exec: Execution,
) -> Result<f64, ReachError> {
    let n = real.n();
    let mut lo_t = vec![f64::INFINITY; n];
    let mut hi_t = vec![f64::NEG_INFINITY; n];
    for t in targets {
        for i in 0..n {
            lo_t[i] = lo_t[i].min(t[i]);
            hi_t[i] = hi_t[i].max(t[i]);
        }
    }
    let mut b = start;
    for _ in 0..=max_doublings {
        let set = reach_sample(real, span, x0, horizon, b, trial, seed, exec)?;
        let mut lo = vec![f64::INFINITY; n];
        let mut hi = vec![f64::NEG_INFINITY; n];
        for s in &set.samples {
            for i in 0..n {
                lo[i] = lo[i].min(s.x[i]);
                hi[i] = hi[i].max(s.x[i]);
            }
        }
        if (0..n).all(|i| lo[i] <= lo_t[i] && hi[i] >= hi_t[i]) {
            return Ok(b);
        }
        b *= 2.0;
    }
    Ok(b / 2.0)
}

/// A point of the image `{P_n e^{ĀT}e^H Ψ(x₀)}` close to a target.
#[derive(Clone, Debug)]
pub struct Witness {
    pub h: Vec<f64>,
    pub x: Vec<f64>,
    pub distance: f64,
    /// Distance of the best raw sample before refinement.
    pub sample_distance: f64,
}

/// Finds the sample nearest to `target`, then refines its coefficients with a
/// damped Gauss–Newton iteration on `‖image(h) − target‖²`. The result is an exact
/// member of the image set (up to floating point), not an interpolant.
pub fn refine_witness(
    map: &ImageMap<'_>,
    set: &ReachSampleSet,
    target: &[f64],
    max_iter: usize,
) -> Result<Witness, ReachError> {
    let dist = |x: &[f64]| -> f64 {
        x.iter()
            .zip(target)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    };
    let best = set
        .samples
        .iter()
        .min_by(|a, b| dist(&a.x).total_cmp(&dist(&b.x)));
    let (mut h, sample_distance) = match best {
        Some(s) => (s.h.clone(), dist(&s.x)),
        None => {
            let h = vec![0.0; map.dim()];
            let x = map.eval(&h)?;
            let d = dist(x.as_slice());
            (h, d)
        }
    };
    let t = DVector::from_column_slice(target);
    let mut x = map.eval(&h)?;
    let mut res = &x - &t;
    let mut mu = 1e-3;
    let d = h.len();
    for _ in 0..max_iter {
        if res.norm() < 1e-13 || d == 0 {
            break;
        }
        let mut jac = DMatrix::zeros(x.len(), d);
        for k in 0..d {
            let step = 1e-7 * (1.0 + h[k].abs());
            let mut hp = h.clone();
            hp[k] += step;
            let mut hm = h.clone();
            hm[k] -= step;
            let col = (map.eval(&hp)? - map.eval(&hm)?) / (2.0 * step);
            jac.set_column(k, &col);
        }
        let jt = jac.transpose();
        let g = &jt * &res;
        let mut improved = false;
        for _ in 0..30 {
            let mut lhs = &jt * &jac;
            for k in 0..d {
                lhs[(k, k)] += mu * (1.0 + lhs[(k, k)]);
            }
            let Some(delta) = lhs.lu().solve(&(-&g)) else {
                mu *= 10.0;
                continue;
            };
            let cand: Vec<f64> = h.iter().zip(delta.iter()).map(|(a, b)| a + b).collect();
            let xc = map.eval(&cand)?;
            let rc = &xc - &t;
            if rc.norm() < res.norm() {
                h = cand;
                x = xc;
                res = rc;
                mu = (mu * 0.3).max(1e-12);
                improved = true;
                break;
            }
            mu *= 10.0;
        }
        if !improved {
            break;
        }
    }
    Ok(Witness {
        distance: res.norm(),
        x: x.iter().cloned().collect(),
        h,
        sample_distance,
    })
}

/// Under the commutation hypothesis, reconstructs a piecewise-constant control on `s`
/// equal segments whose flow equals `e^{ĀT}e^H`, by least squares on
/// `H = Σ_{k,i} u_{ik} ∫_{t_k}^{t_{k+1}} e^{−Ās} B̄ᵢ e^{Ās} ds`.
///
/// Returns the control values and the relative residual of the fit.
pub fn reconstruct_control(
    real: &BilinearRealization,
    span: &AdjointSpan,
    h: &[f64],
    horizon: f64,
    segments: usize,
) -> Result<(Vec<Vec<f64>>, f64), ReachError> {
    let a = real.augmented_a();
    let m = real.m();
    let target = vectorize(&span.combine(h));
    let quad = 64;
    let delta = horizon / segments as f64;
    let mut cols = Vec::with_capacity(segments * m);
    for k in 0..segments {
        for i in 0..m {
            let b = real.augmented_b(i);
            // composite Simpson on [t_k, t_{k+1}]
            let mut acc = DMatrix::zeros(b.nrows(), b.ncols());
            for j in 0..=quad {
                let s = delta * (k as f64 + j as f64 / quad as f64);
                let w = if j == 0 || j == quad {
                    1.0
                } else if j % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                let e_pos = expm(&(&a * s))?;
                let e_neg = expm(&(&a * -s))?;
                acc += (e_neg * &b * e_pos) * w;
            }
            acc *= delta / quad as f64 / 3.0;
            cols.push(vectorize(&acc));
        }
    }
    if cols.is_empty() {
        return Ok((vec![vec![]; segments], if target.norm() == 0.0 { 0.0 } else { 1.0 }));
    }
    let mat = DMatrix::from_columns(&cols);
    let svd = mat.clone().svd(true, true);
    let u = svd
        .solve(&target, 1e-12 * max_abs(&mat).max(1e-300))
        .map_err(|_| ReachError::EmptySpan)?;
    let fit = &mat * &u;
    let rel = (&fit - &target).norm() / target.norm().max(1e-300);
    let values = (0..segments)
        .map(|k| (0..m).map(|i| u[k * m + i]).collect())
        .collect();
    Ok((values, rel))
}
