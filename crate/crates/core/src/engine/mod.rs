//! The EBIF iteration `Γ_k = Γ_{k−1} + Σ_τ L_τ Γ_{k−1}` over `T = {f, g_1, …, g_m}`
//! and extraction of the bilinear realization from its fixed point.

mod realization;

use serde::{Deserialize, Serialize};

use crate::error::EngineError;
use crate::symbolic::{parse_expr, CanonicalExpr, FunctionSpace, NumericExpr, VectorField};

pub use realization::{
    bilinear_system, default_sample_points, extract_bilinear, psi_related_residual,
    verify_embedding, BilinearRealization, EmbeddingReport, EmbeddingVerdict,
};

/// `ẋ = f(x) + Σ uᵢ gᵢ(x)` on ℝⁿ.
#[derive(Clone, Debug)]
pub struct NonlinearSystem {
    pub name: String,
    pub n: usize,
    pub f: VectorField,
    pub g: Vec<VectorField>,
}

impl NonlinearSystem {
    pub fn new(name: impl Into<String>, f: VectorField, g: Vec<VectorField>) -> Result<Self, EngineError> {
        let n = f.dim();
        if n == 0 {
            return Err(EngineError::InvalidSystem("state dimension must be positive".into()));
        }
        for gi in &g {
            if gi.dim() != n {
                return Err(EngineError::DimensionMismatch {
                    expected: n,
                    found: gi.dim(),
                });
            }
        }
        Ok(NonlinearSystem {
            name: name.into(),
            n,
            f,
            g,
        })
    }

    /// Builds a system from expression strings (drift components, then one list per control).
    pub fn parse<S: AsRef<str>>(
        name: &str,
        n: usize,
        drift: &[S],
        controls: &[Vec<S>],
    ) -> Result<Self, EngineError> {
        let field = |comps: &[S]| -> Result<VectorField, EngineError> {
            if comps.len() != n {
                return Err(EngineError::DimensionMismatch {
                    expected: n,
                    found: comps.len(),
                });
            }
            let c = comps
                .iter()
                .map(|s| parse_expr(s.as_ref(), n))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(VectorField::new(c)?)
        };
        let f = field(drift)?;
        let g = controls.iter().map(|c| field(c)).collect::<Result<Vec<_>, _>>()?;
        Self::new(name, f, g)
    }

    pub fn m(&self) -> usize {
        self.g.len()
    }

    /// `f, g_1, …, g_m` in that order.
    pub fn fields(&self) -> Vec<&VectorField> {
        std::iter::once(&self.f).chain(self.g.iter()).collect()
    }

    pub fn compile(&self) -> CompiledSystem {
        CompiledSystem {
            n: self.n,
            f: self.f.compile(),
            g: self.g.iter().map(VectorField::compile).collect(),
        }
    }
}

/// Floating-point right-hand side of a [`NonlinearSystem`].
#[derive(Clone, Debug)]
pub struct CompiledSystem {
    n: usize,
    f: Vec<NumericExpr>,
    g: Vec<Vec<NumericExpr>>,
}

impl CompiledSystem {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.g.len()
    }

    /// `f(x) + Σ uᵢ gᵢ(x)` written into `out`.
    pub fn rhs_into(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        for (o, c) in out.iter_mut().zip(&self.f) {
            *o = c.eval(x);
        }
        for (ui, gi) in u.iter().zip(&self.g) {
            if *ui == 0.0 {
                continue;
            }
            for (o, c) in out.iter_mut().zip(gi) {
                *o += ui * c.eval(x);
            }
        }
    }

    pub fn rhs(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.rhs_into(x, u, &mut out);
        out
    }
}

/// How constant parts of Lie derivatives are treated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstantMode {
    /// Work modulo constants; constants become the offsets `D_0, D_i`.
    #[default]
    Offset,
    /// Admit the constant function into the space; offsets are always zero.
    Augment,
}

impl std::str::FromStr for ConstantMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "offset" => Ok(ConstantMode::Offset),
            "augment" => Ok(ConstantMode::Augment),
            other => Err(format!("unknown constant mode `{}`", other)),
        }
    }
}

impl std::fmt::Display for ConstantMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ConstantMode::Offset => "offset",
            ConstantMode::Augment => "augment",
        })
    }
}

#[derive(Clone, Debug)]
pub struct EbifConfig {
    pub gamma0: Vec<CanonicalExpr>,
    pub max_dim: usize,
    pub max_iter: usize,
    pub constant_mode: ConstantMode,
}

pub const DEFAULT_MAX_DIM: usize = 200;
pub const DEFAULT_MAX_ITER: usize = 50;

impl EbifConfig {
    /// Seed `x_1, …, x_n` with default caps and offset mode.
    pub fn coordinates(n: usize) -> Self {
        let gamma0 = (0..n)
            .map(|i| CanonicalExpr::var(n, i).expect("index in range"))
            .collect();
        Self::with_seed(gamma0)
    }

    pub fn with_seed(gamma0: Vec<CanonicalExpr>) -> Self {
        EbifConfig {
            gamma0,
            max_dim: DEFAULT_MAX_DIM,
            max_iter: DEFAULT_MAX_ITER,
            constant_mode: ConstantMode::Offset,
        }
    }

    /// Parses seed generators from expression strings.
    pub fn parse_seed<S: AsRef<str>>(n: usize, gens: &[S]) -> Result<Self, EngineError> {
        let g = gens
            .iter()
            .map(|s| parse_expr(s.as_ref(), n))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::with_seed(g))
    }

    pub fn with_mode(mut self, mode: ConstantMode) -> Self {
        self.constant_mode = mode;
        self
    }

    pub fn with_caps(mut self, max_dim: usize, max_iter: usize) -> Self {
        self.max_dim = max_dim;
        self.max_iter = max_iter;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EbifStatus {
    Stabilized,
    DimCapExceeded,
    IterCapExceeded,
}

#[derive(Clone, Debug)]
pub struct EbifOutcome {
    pub status: EbifStatus,
    /// `dim Γ_0, dim Γ_1, …`; on stabilization the last two entries are equal.
    pub chain_dims: Vec<usize>,
    /// Smallest `k` with `Γ_k = Γ_{k+1}`.
    pub k_star: Option<usize>,
    /// The last space computed (`Γ*` when stabilized).
    pub gamma_star: FunctionSpace,
}

/// `L_τ S`: span of the Lie derivatives of the basis of `S`.
pub fn lie_derivation_space(s: &FunctionSpace, tau: &VectorField) -> Result<FunctionSpace, EngineError> {
    if tau.dim() != s.ambient_dim() {
        return Err(EngineError::DimensionMismatch {
            expected: s.ambient_dim(),
            found: tau.dim(),
        });
    }
    let mut out = FunctionSpace::with_mode(s.ambient_dim(), s.is_modulo_constants());
    for b in s.basis() {
        out.insert(&b.lie_derivative(tau)?)?;
    }
    Ok(out)
}

/// One EBIF step without a dimension cap.
pub fn ebif_step(prev: &FunctionSpace, fields: &[&VectorField]) -> Result<FunctionSpace, EngineError> {
    Ok(step_capped(prev, fields, usize::MAX)?.0)
}

/// Returns the next space and whether the cap was hit part-way through.
fn step_capped(
    prev: &FunctionSpace,
    fields: &[&VectorField],
    cap: usize,
) -> Result<(FunctionSpace, bool), EngineError> {
    let mut next = prev.clone();
    for tau in fields {
        if tau.dim() != prev.ambient_dim() {
            return Err(EngineError::DimensionMismatch {
                expected: prev.ambient_dim(),
                found: tau.dim(),
            });
        }
        for b in prev.basis() {
            let d = b.lie_derivative(tau)?;
            if next.insert_normalized(&d)?.is_some() && next.dim() > cap {
                return Ok((next, true));
            }
        }
    }
    Ok((next, false))
}

/// Runs the EBIF iteration from `cfg.gamma0` until the chain stabilizes or a cap fires.
pub fn ebif_run(sys: &NonlinearSystem, cfg: &EbifConfig) -> Result<EbifOutcome, EngineError> {
    if cfg.gamma0.is_empty() {
        return Err(EngineError::EmptySeed);
    }
    let modulo = cfg.constant_mode == ConstantMode::Offset;
    let mut gamma = FunctionSpace::with_mode(sys.n, modulo);
    for g in &cfg.gamma0 {
        gamma.insert(g)?;
    }
    let fields = sys.fields();
    let mut chain_dims = vec![gamma.dim()];
    if gamma.dim() > cfg.max_dim {
        return Ok(EbifOutcome {
            status: EbifStatus::DimCapExceeded,
            chain_dims,
            k_star: None,
            gamma_star: gamma,
        });
    }
    for k in 1..=cfg.max_iter {
        let (next, capped) = step_capped(&gamma, &fields, cfg.max_dim)?;
        chain_dims.push(next.dim());
        if capped {
            return Ok(EbifOutcome {
                status: EbifStatus::DimCapExceeded,
                chain_dims,
                k_star: None,
                gamma_star: next,
            });
        }
        // next ⊇ gamma by construction, so equal dimension means equal span
        if next.dim() == gamma.dim() {
            return Ok(EbifOutcome {
                status: EbifStatus::Stabilized,
                chain_dims,
                k_star: Some(k - 1),
                gamma_star: gamma,
            });
        }
        gamma = next;
    }
    Ok(EbifOutcome {
        status: EbifStatus::IterCapExceeded,
        chain_dims,
        k_star: None,
        gamma_star: gamma,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::symbolic::parse_expr;

    pub(crate) fn unicycle() -> NonlinearSystem {
        NonlinearSystem::parse(
            "unicycle",
            3,
            &["0", "0", "0"],
            &[vec!["cos(x3)", "sin(x3)", "0"], vec!["0", "0", "1"]],
        )
        .unwrap()
    }

    fn scalar_xsq() -> NonlinearSystem {
        NonlinearSystem::parse("xsq", 1, &["0"], &[vec!["-x1^2"]]).unwrap()
    }

    #[test]
    fn lie_derivation_space_examples() {
        let sys = unicycle();
        let s = FunctionSpace::reduce(3, &EbifConfig::coordinates(3).gamma0).unwrap();
        let l = lie_derivation_space(&s, &sys.g[0]).unwrap();
        assert_eq!(l.dim(), 2);
        assert!(l.contains(&parse_expr("cos(x3)", 3).unwrap()).unwrap().is_some());
        assert!(l.contains(&parse_expr("sin(x3)", 3).unwrap()).unwrap().is_some());
        assert_eq!(lie_derivation_space(&FunctionSpace::new(3), &sys.g[0]).unwrap().dim(), 0);

        let x = scalar_xsq();
        let s = FunctionSpace::reduce(1, &[parse_expr("x1", 1).unwrap()]).unwrap();
        let l = lie_derivation_space(&s, &x.g[0]).unwrap();
        assert_eq!(l.dim(), 1);
        assert!(l.contains(&parse_expr("x1^2", 1).unwrap()).unwrap().is_some());
    }

    #[test]
    fn step_examples() {
        let sys = unicycle();
        let g0 = FunctionSpace::reduce(3, &EbifConfig::coordinates(3).gamma0).unwrap();
        let g1 = ebif_step(&g0, &sys.fields()).unwrap();
        assert_eq!(g1.dim(), 6);
        for s in ["cos(x3)", "sin(x3)", "1"] {
            assert!(g1.contains(&parse_expr(s, 3).unwrap()).unwrap().is_some());
        }
        let g2 = ebif_step(&g1, &sys.fields()).unwrap();
        assert_eq!(g2.dim(), 6);

        let x = scalar_xsq();
        let s = FunctionSpace::reduce(1, &[parse_expr("x1", 1).unwrap()]).unwrap();
        let s1 = ebif_step(&s, &x.fields()).unwrap();
        assert_eq!(s1.basis(), &[parse_expr("x1", 1).unwrap(), parse_expr("x1^2", 1).unwrap()]);
    }

    #[test]
    fn unicycle_run_augment() {
        let cfg = EbifConfig::coordinates(3).with_mode(ConstantMode::Augment);
        let out = ebif_run(&unicycle(), &cfg).unwrap();
        assert_eq!(out.status, EbifStatus::Stabilized);
        assert_eq!(out.k_star, Some(1));
        assert_eq!(out.chain_dims, vec![3, 6, 6]);
    }

    #[test]
    fn scalar_xsq_diverges() {
        let cfg = EbifConfig::coordinates(1).with_caps(20, 50);
        let out = ebif_run(&scalar_xsq(), &cfg).unwrap();
        assert_eq!(out.status, EbifStatus::DimCapExceeded);
        assert_eq!(out.chain_dims, (1..=21).collect::<Vec<_>>());
        let cfg = EbifConfig::coordinates(1).with_caps(200, 5);
        let out = ebif_run(&scalar_xsq(), &cfg).unwrap();
        assert_eq!(out.status, EbifStatus::IterCapExceeded);
        assert_eq!(out.chain_dims, vec![1, 2, 3, 4, 5, 6]);
    }

    #[test]
    fn empty_seed_rejected() {
        let cfg = EbifConfig::with_seed(vec![]);
        assert!(matches!(ebif_run(&unicycle(), &cfg), Err(EngineError::EmptySeed)));
    }
}
