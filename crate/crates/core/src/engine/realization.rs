use nalgebra::{DMatrix, DVector};
use num_traits::Zero;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ConstantMode, EbifConfig, EbifOutcome, EbifStatus, NonlinearSystem};
use crate::error::EngineError;
use crate::linalg::{numeric_rank, to_dmatrix, to_dvector};
use crate::symbolic::{AffineForm, CanonicalExpr, FunctionSpace, NumericExpr, Rational, VectorField};

type RatMatrix = Vec<Vec<Rational>>;

/// `ż = Az + D₀ + Σ uᵢ (Bᵢz + Dᵢ)` together with the embedding `z = Ψ(x)`.
///
/// Matrices are stored exactly; floating-point copies are built once at construction.
#[derive(Clone, Debug)]
pub struct BilinearRealization {
    n: usize,
    psi: Vec<CanonicalExpr>,
    a: RatMatrix,
    b: Vec<RatMatrix>,
    d0: Vec<Rational>,
    d: Vec<Vec<Rational>>,
    proj_rows: Vec<Option<Vec<Rational>>>,
    chain_dims: Vec<usize>,
    k_star: Option<usize>,
    constant_mode: ConstantMode,
    num: Numeric,
}

#[derive(Clone, Debug)]
struct Numeric {
    psi: Vec<NumericExpr>,
    jacobian: Vec<Vec<NumericExpr>>,
    a: DMatrix<f64>,
    b: Vec<DMatrix<f64>>,
    d0: DVector<f64>,
    d: Vec<DVector<f64>>,
    proj: Option<DMatrix<f64>>,
}

impl BilinearRealization {
    /// Assembles a realization from exact parts; projection rows are derived from `psi`.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        n: usize,
        psi: Vec<CanonicalExpr>,
        a: RatMatrix,
        b: Vec<RatMatrix>,
        d0: Vec<Rational>,
        d: Vec<Vec<Rational>>,
        chain_dims: Vec<usize>,
        k_star: Option<usize>,
        constant_mode: ConstantMode,
    ) -> Result<Self, EngineError> {
        let r = psi.len();
        let mismatch = |expected, found| EngineError::DimensionMismatch { expected, found };
        for p in &psi {
            if p.dim() != n {
                return Err(mismatch(n, p.dim()));
            }
        }
        let square = |m: &RatMatrix| -> Result<(), EngineError> {
            if m.len() != r {
                return Err(mismatch(r, m.len()));
            }
            for row in m {
                if row.len() != r {
                    return Err(mismatch(r, row.len()));
                }
            }
            Ok(())
        };
        square(&a)?;
        for bi in &b {
            square(bi)?;
        }
        if d0.len() != r {
            return Err(mismatch(r, d0.len()));
        }
        if d.len() != b.len() {
            return Err(mismatch(b.len(), d.len()));
        }
        for di in &d {
            if di.len() != r {
                return Err(mismatch(r, di.len()));
            }
        }

        let full = FunctionSpace::reduce(n, &psi)?;
        if full.dim() != r {
            return Err(EngineError::InvalidSystem(
                "embedding components are linearly dependent".into(),
            ));
        }
        let proj_rows = (0..n)
            .map(|i| full.contains(&CanonicalExpr::var(n, i).expect("index in range")))
            .collect::<Result<Vec<_>, _>>()?;

        let proj = if proj_rows.iter().all(Option::is_some) {
            let rows: Vec<Vec<Rational>> = proj_rows.iter().map(|p| p.clone().unwrap()).collect();
            Some(to_dmatrix(&rows, r))
        } else {
            None
        };
        let num = Numeric {
            psi: psi.iter().map(CanonicalExpr::compile).collect(),
            jacobian: psi
                .iter()
                .map(|p| p.gradient().iter().map(CanonicalExpr::compile).collect())
                .collect(),
            a: to_dmatrix(&a, r),
            b: b.iter().map(|bi| to_dmatrix(bi, r)).collect(),
            d0: to_dvector(&d0),
            d: d.iter().map(|di| to_dvector(di)).collect(),
            proj,
        };
        Ok(BilinearRealization {
            n,
            psi,
            a,
            b,
            d0,
            d,
            proj_rows,
            chain_dims,
            k_star,
            constant_mode,
            num,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn r(&self) -> usize {
        self.psi.len()
    }

    pub fn m(&self) -> usize {
        self.b.len()
    }

    pub fn psi(&self) -> &[CanonicalExpr] {
        &self.psi
    }

    pub fn a_exact(&self) -> &RatMatrix {
        &self.a
    }

    pub fn b_exact(&self) -> &[RatMatrix] {
        &self.b
    }

    pub fn d0_exact(&self) -> &[Rational] {
        &self.d0
    }

    pub fn d_exact(&self) -> &[Vec<Rational>] {
        &self.d
    }

    pub fn proj_rows(&self) -> &[Option<Vec<Rational>>] {
        &self.proj_rows
    }

    pub fn chain_dims(&self) -> &[usize] {
        &self.chain_dims
    }

    pub fn k_star(&self) -> Option<usize> {
        self.k_star
    }

    pub fn constant_mode(&self) -> ConstantMode {
        self.constant_mode
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.num.a
    }

    pub fn b(&self) -> &[DMatrix<f64>] {
        &self.num.b
    }

    pub fn d0(&self) -> &DVector<f64> {
        &self.num.d0
    }

    pub fn d(&self) -> &[DVector<f64>] {
        &self.num.d
    }

    pub fn has_offsets(&self) -> bool {
        self.d0.iter().chain(self.d.iter().flatten()).any(|c| !c.is_zero())
    }

    /// The `n × r` matrix `P_n` with `P_n Ψ(x) = x`.
    pub fn projection_matrix(&self) -> Result<&DMatrix<f64>, EngineError> {
        match &self.num.proj {
            Some(p) => Ok(p),
            None => {
                let i = self.proj_rows.iter().position(Option::is_none).unwrap();
                Err(EngineError::MissingProjection(i + 1))
            }
        }
    }

    /// `z = Ψ(x)`.
    pub fn lift(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.r(), self.num.psi.iter().map(|p| p.eval(x)))
    }

    /// `(Ψ(x), 1)`, the state of the homogeneous augmented system.
    pub fn lift_augmented(&self, x: &[f64]) -> DVector<f64> {
        let z = self.lift(x);
        augment_state(&z)
    }

    /// `x = P_n z`.
    pub fn project(&self, z: &DVector<f64>) -> Result<DVector<f64>, EngineError> {
        let p = self.projection_matrix()?;
        Ok(p * z.rows(0, self.r()))
    }

    /// Numeric Jacobian `∂Ψ/∂x` (r × n) evaluated from the symbolic gradient.
    pub fn psi_jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(self.r(), self.n, |i, j| self.num.jacobian[i][j].eval(x))
    }

    /// `[[A, D₀], [0, 0]]` of size r+1.
    pub fn augmented_a(&self) -> DMatrix<f64> {
        augment(&self.num.a, &self.num.d0)
    }

    /// `[[Bᵢ, Dᵢ], [0, 0]]` of size r+1.
    pub fn augmented_b(&self, i: usize) -> DMatrix<f64> {
        augment(&self.num.b[i], &self.num.d[i])
    }

    /// `Ā + Σ uᵢ B̄ᵢ` on the augmented state.
    pub fn generator(&self, u: &[f64]) -> DMatrix<f64> {
        let mut g = self.augmented_a();
        for (i, ui) in u.iter().enumerate() {
            if *ui != 0.0 {
                g += self.augmented_b(i) * *ui;
            }
        }
        g
    }

    /// Right-hand side of the bilinear system at `z`.
    pub fn bilinear_rhs(&self, z: &DVector<f64>, u: &[f64]) -> DVector<f64> {
        let mut out = &self.num.a * z + &self.num.d0;
        for (i, ui) in u.iter().enumerate() {
            if *ui != 0.0 {
                out += (&self.num.b[i] * z + &self.num.d[i]) * *ui;
            }
        }
        out
    }
}

pub(crate) fn augment(m: &DMatrix<f64>, col: &DVector<f64>) -> DMatrix<f64> {
    let r = m.nrows();
    let mut out = DMatrix::zeros(r + 1, r + 1);
    out.view_mut((0, 0), (r, r)).copy_from(m);
    out.view_mut((0, r), (r, 1)).copy_from(col);
    out
}

pub(crate) fn augment_state(z: &DVector<f64>) -> DVector<f64> {
    let r = z.len();
    let mut out = DVector::zeros(r + 1);
    out.rows_mut(0, r).copy_from(z);
    out[r] = 1.0;
    out
}

/// Reads off `A, Bᵢ, D₀, Dᵢ` from a stabilized EBIF outcome.
pub fn extract_bilinear(
    sys: &NonlinearSystem,
    outcome: &EbifOutcome,
    cfg: &EbifConfig,
) -> Result<BilinearRealization, EngineError> {
    if outcome.status != EbifStatus::Stabilized {
        return Err(EngineError::NotStabilized);
    }
    let space = &outcome.gamma_star;
    let basis = space.basis();
    let r = basis.len();
    let offset = cfg.constant_mode == ConstantMode::Offset;
    let basis_consts: Vec<Rational> = basis.iter().map(CanonicalExpr::constant_term).collect();

    let rows_for = |tau: &VectorField, label: String| -> Result<(RatMatrix, Vec<Rational>), EngineError> {
        let mut mat = Vec::with_capacity(r);
        let mut off = Vec::with_capacity(r);
        for (j, gamma) in basis.iter().enumerate() {
            let lie = gamma.lie_derivative(tau)?;
            let coords = space.contains(&lie)?.ok_or(EngineError::NotInvariant {
                field: label.clone(),
                index: j + 1,
            })?;
            let c = if offset {
                let spanned: Rational = coords
                    .iter()
                    .zip(&basis_consts)
                    .map(|(a, b)| a * b)
                    .fold(Rational::zero(), |acc, v| acc + v);
                lie.constant_term() - spanned
            } else {
                Rational::zero()
            };
            mat.push(coords);
            off.push(c);
        }
        Ok((mat, off))
    };

    let (a, d0) = rows_for(&sys.f, "f".into())?;
    let mut b = Vec::with_capacity(sys.m());
    let mut d = Vec::with_capacity(sys.m());
    for (i, gi) in sys.g.iter().enumerate() {
        let (bi, di) = rows_for(gi, format!("g{}", i + 1))?;
        b.push(bi);
        d.push(di);
    }
    BilinearRealization::from_parts(
        sys.n,
        basis.to_vec(),
        a,
        b,
        d0,
        d,
        outcome.chain_dims.clone(),
        outcome.k_star,
        cfg.constant_mode,
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmbeddingVerdict {
    Embedding,
    NotVerified,
}

#[derive(Clone, Debug)]
pub struct EmbeddingReport {
    pub is_graph_over_coordinates: bool,
    pub jacobian_rank_samples: Vec<(Vec<f64>, usize)>,
    pub verdict: EmbeddingVerdict,
}

/// `count` points uniform in `[−2, 2]ⁿ` from a seeded generator.
pub fn default_sample_points(n: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| (0..n).map(|_| rng.random_range(-2.0..=2.0)).collect())
        .collect()
}

/// Checks whether `Ψ` is an embedding: exactly via the graph criterion, otherwise by
/// Jacobian rank at the given points.
pub fn verify_embedding(real: &BilinearRealization, sample_points: &[Vec<f64>]) -> EmbeddingReport {
    let is_graph = real.proj_rows.iter().all(Option::is_some);
    let samples: Vec<(Vec<f64>, usize)> = sample_points
        .iter()
        .map(|x| (x.clone(), numeric_rank(&real.psi_jacobian(x), 1e-9)))
        .collect();
    let full_rank = !samples.is_empty() && samples.iter().all(|(_, k)| *k == real.n);
    EmbeddingReport {
        is_graph_over_coordinates: is_graph,
        jacobian_rank_samples: samples,
        verdict: if is_graph || full_rank {
            EmbeddingVerdict::Embedding
        } else {
            EmbeddingVerdict::NotVerified
        },
    }
}

/// `‖(∂Ψ/∂x)(f + Σuᵢgᵢ) − (AΨ + D₀ + Σuᵢ(BᵢΨ + Dᵢ))‖∞` at `(x, u)`.
pub fn psi_related_residual(sys: &NonlinearSystem, real: &BilinearRealization, x: &[f64], u: &[f64]) -> f64 {
    let rhs = DVector::from_vec(sys.compile().rhs(x, u));
    let pushed = real.psi_jacobian(x) * rhs;
    let z = real.lift(x);
    (pushed - real.bilinear_rhs(&z, u)).amax()
}

/// The realization read back as a control-affine system on ℝʳ with linear (or affine)
/// fields `Az + D₀`, `Bᵢz + Dᵢ`.
pub fn bilinear_system(real: &BilinearRealization) -> Result<NonlinearSystem, EngineError> {
    let r = real.r();
    let field = |m: &RatMatrix, c: &[Rational]| -> Result<VectorField, EngineError> {
        let comps = (0..r)
            .map(|j| {
                let form = AffineForm {
                    linear: m[j].clone(),
                    offset: c[j].clone(),
                };
                affine_expr(&form)
            })
            .collect();
        Ok(VectorField::new(comps)?)
    };
    let f = field(&real.a, &real.d0)?;
    let g = real
        .b
        .iter()
        .zip(&real.d)
        .map(|(bi, di)| field(bi, di))
        .collect::<Result<Vec<_>, _>>()?;
    NonlinearSystem::new("bilinear", f, g)
}

fn affine_expr(form: &AffineForm) -> CanonicalExpr {
    let n = form.dim();
    let mut e = CanonicalExpr::constant(n, form.offset.clone());
    for (i, c) in form.linear.iter().enumerate() {
        if !c.is_zero() {
            let v = CanonicalExpr::var(n, i).expect("index in range").scale(c);
            e = e.add(&v).expect("same dimension");
        }
    }
    e
}
