//! Fitting the normal/abnormal loading matrices.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::eigen::sym_eigen;
use crate::error::{Error, Result};
use crate::global_opt::{self, GlobalOptConfig, GlobalOptReport};
use crate::matrix::{l11_norm, Matrix};
use crate::sdp::{
    self, extract_leading_vector, rayleigh, sparsify_loading, ConstraintViolation, SdpProblem,
    Sense, SolverConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Pca,
    #[serde(rename = "f")]
    AspcaF,
    #[serde(rename = "b")]
    AspcaB,
    #[serde(rename = "fg")]
    AspcaFG,
    #[serde(rename = "bg")]
    AspcaBG,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Pca,
        Variant::AspcaF,
        Variant::AspcaB,
        Variant::AspcaFG,
        Variant::AspcaBG,
    ];

    pub fn short_name(self) -> &'static str {
        match self {
            Variant::Pca => "pca",
            Variant::AspcaF => "f",
            Variant::AspcaB => "b",
            Variant::AspcaFG => "fg",
            Variant::AspcaBG => "bg",
        }
    }

    pub fn uses_global_opt(self) -> bool {
        matches!(self, Variant::AspcaFG | Variant::AspcaBG)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Variant::Pca => "PCA",
            Variant::AspcaF => "ASPCA-F",
            Variant::AspcaB => "ASPCA-B",
            Variant::AspcaFG => "ASPCA-FG",
            Variant::AspcaBG => "ASPCA-BG",
        };
        f.write_str(s)
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pca" => Ok(Variant::Pca),
            "f" | "aspca-f" => Ok(Variant::AspcaF),
            "b" | "aspca-b" => Ok(Variant::AspcaB),
            "fg" | "aspca-fg" => Ok(Variant::AspcaFG),
            "bg" | "aspca-bg" => Ok(Variant::AspcaBG),
            other => Err(Error::InvalidParameter(format!(
                "unknown variant '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitConfig {
    pub variant: Variant,
    /// Number of abnormal components.
    pub d: usize,
    pub lambda: f64,
    pub solver: SolverConfig,
    pub global_opt: GlobalOptConfig,
    /// Loading entries below this magnitude are zeroed after rounding.
    pub sparsify_cutoff: f64,
    /// Treat a component whose solve hit `max_iter` as a fit failure.
    pub require_convergence: bool,
}

impl FitConfig {
    pub fn new(variant: Variant, d: usize, lambda: f64) -> Self {
        Self {
            variant,
            d,
            lambda,
            solver: SolverConfig::default(),
            global_opt: GlobalOptConfig::default(),
            sparsify_cutoff: 1e-4,
            require_convergence: true,
        }
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        if self.d == 0 || self.d + 1 > p {
            return Err(Error::InvalidParameter(format!(
                "number of abnormal components must satisfy 1 <= d <= p-1 = {}, got {}",
                p.saturating_sub(1),
                self.d
            )));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        self.solver.validate()?;
        self.global_opt.validate()
    }
}

/// Per-component diagnostics from the relaxed solves.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComponentFit {
    /// 1-based extraction order.
    pub index: usize,
    pub iterations: usize,
    pub converged: bool,
    pub primal_residual: f64,
    pub violation: ConstraintViolation,
    /// Relaxed objective at the solver iterate.
    pub relaxed_objective: f64,
    /// Same objective evaluated at the rounded `vvᵀ`.
    pub rounded_objective: f64,
    /// `vᵀAv` of the rounded loading.
    pub variance: f64,
}

impl ComponentFit {
    /// Objective lost (or gained) by rank-1 rounding.
    pub fn rounding_gap(&self) -> f64 {
        (self.relaxed_objective - self.rounded_objective).abs()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubspaceModel {
    pub variant: Variant,
    /// `p × (p − d)` basis of the normal subspace.
    pub v_normal: Matrix,
    /// `p × d` orthonormal abnormal loadings.
    pub v_abnormal: Matrix,
    /// `Σ vᵢᵀAvᵢ` over the abnormal columns.
    pub variance_abnormal: f64,
    pub diagnostics: Vec<ComponentFit>,
    pub global_opt: Option<GlobalOptReport>,
}

impl SubspaceModel {
    pub fn p(&self) -> usize {
        self.v_abnormal.rows()
    }

    pub fn d(&self) -> usize {
        self.v_abnormal.cols()
    }

    pub fn l11(&self) -> f64 {
        l11_norm(&self.v_abnormal)
    }

    /// `V₂V₂ᵀ`.
    pub fn abnormal_projector(&self) -> Matrix {
        self.v_abnormal.projector()
    }
}

fn check_cov(a: &Matrix, d: usize) -> Result<usize> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "covariance must be square, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    let p = a.rows();
    if d == 0 || d > p {
        return Err(Error::InvalidParameter(format!(
            "number of abnormal components d = {d} out of range 1..={p}"
        )));
    }
    Ok(p)
}

fn total_variance(a: &Matrix, v: &Matrix) -> f64 {
    v.columns().iter().map(|c| rayleigh(a, c)).sum()
}

/// Plain PCA split: top `p − d` eigenvectors normal, bottom `d` abnormal.
pub fn fit_pca(a: &Matrix, d: usize) -> Result<SubspaceModel> {
    let p = check_cov(a, d)?;
    let eig = sym_eigen(a)?;
    let abnormal: Vec<usize> = (0..d).collect();
    let normal: Vec<usize> = (d..p).rev().collect();
    let v_abnormal = eig.vectors.select_columns(&abnormal);
    Ok(SubspaceModel {
        variant: Variant::Pca,
        v_normal: eig.vectors.select_columns(&normal),
        variance_abnormal: eig.values[..d].iter().sum(),
        v_abnormal,
        diagnostics: Vec::new(),
        global_opt: None,
    })
}

/// Extracts `count` deflated sparse components with the given sense.
fn extract_components(
    a: &Matrix,
    count: usize,
    sense: Sense,
    cfg: &FitConfig,
) -> Result<(Vec<Vec<f64>>, Vec<ComponentFit>)> {
    let p = a.rows();
    let mut vectors: Vec<Vec<f64>> = Vec::with_capacity(count);
    let mut diags = Vec::with_capacity(count);
    for i in 0..count {
        let r = if vectors.is_empty() {
            Matrix::zeros(p, p)
        } else {
            Matrix::from_columns(&vectors)?.projector()
        };
        let problem = SdpProblem::new(a.clone(), r.clone(), cfg.lambda, sense)?;
        let sol = sdp::solve(&problem, &cfg.solver)?;
        if !sol.converged && cfg.require_convergence {
            return Err(Error::NotConverged {
                component: i + 1,
                iterations: sol.iterations,
                violation: sol.violation.max(),
            });
        }
        let relabel = |e: Error| match e {
            Error::DegenerateRounding(_) => Error::DegenerateRounding(i + 1),
            other => other,
        };
        let u = extract_leading_vector(&sol.x, &r).map_err(relabel)?;
        let v = sparsify_loading(&u, &r, cfg.sparsify_cutoff).map_err(relabel)?;
        let rounded = problem.objective(&Matrix::outer(&v, &v));
        diags.push(ComponentFit {
            index: i + 1,
            iterations: sol.iterations,
            converged: sol.converged,
            primal_residual: sol.primal_residual,
            violation: sol.violation,
            relaxed_objective: sol.objective,
            rounded_objective: rounded,
            variance: rayleigh(a, &v),
        });
        vectors.push(v);
    }
    Ok((vectors, diags))
}

/// Forward extraction: all `p` components by decreasing significance, the last `d` form the abnormal subspace.
pub fn fit_aspca_forward(a: &Matrix, cfg: &FitConfig) -> Result<SubspaceModel> {
    let p = check_cov(a, cfg.d)?;
    let (vectors, diagnostics) = extract_components(a, p, Sense::Maximize, cfg)?;
    let v_normal = if p == cfg.d {
        Matrix::zeros(p, 0)
    } else {
        Matrix::from_columns(&vectors[..p - cfg.d])?
    };
    let v_abnormal = Matrix::from_columns(&vectors[p - cfg.d..])?;
    Ok(SubspaceModel {
        variant: Variant::AspcaF,
        variance_abnormal: total_variance(a, &v_abnormal),
        v_normal,
        v_abnormal,
        diagnostics,
        global_opt: None,
    })
}

/// Backward extraction: the `d` least significant sparse components first.
pub fn fit_aspca_backward(a: &Matrix, cfg: &FitConfig) -> Result<SubspaceModel> {
    let p = check_cov(a, cfg.d)?;
    let (vectors, diagnostics) = extract_components(a, cfg.d, Sense::Minimize, cfg)?;
    let v_abnormal = Matrix::from_columns(&vectors)?;
    let v_normal = complement_basis(&v_abnormal)?;
    debug_assert_eq!(v_normal.cols(), p - cfg.d);
    Ok(SubspaceModel {
        variant: Variant::AspcaB,
        variance_abnormal: total_variance(a, &v_abnormal),
        v_normal,
        v_abnormal,
        diagnostics,
        global_opt: None,
    })
}

/// Orthonormal basis of `span(V)^⊥` from the eigenvectors of `I − VVᵀ` with eigenvalue one.
pub fn complement_basis(v: &Matrix) -> Result<Matrix> {
    let (p, d) = v.shape();
    if d == p {
        return Ok(Matrix::zeros(p, 0));
    }
    let comp = Matrix::identity(p).sub(&v.projector());
    let eig = sym_eigen(&comp)?;
    let idx: Vec<usize> = (d..p).rev().collect();
    Ok(eig.vectors.select_columns(&idx))
}

/// Fits the configured variant, running global sparsity optimisation for the `-G` variants.
pub fn fit(a: &Matrix, cfg: &FitConfig) -> Result<SubspaceModel> {
    cfg.validate(a.rows())?;
    let mut model = match cfg.variant {
        Variant::Pca => return fit_pca(a, cfg.d),
        Variant::AspcaF | Variant::AspcaFG => fit_aspca_forward(a, cfg)?,
        Variant::AspcaB | Variant::AspcaBG => fit_aspca_backward(a, cfg)?,
    };
    model.variant = cfg.variant;
    if cfg.variant.uses_global_opt() {
        let out = global_opt::optimize(&model.v_abnormal, &cfg.global_opt)?;
        model.v_abnormal = out.basis;
        model.variance_abnormal = total_variance(a, &model.v_abnormal);
        model.global_opt = Some(out.report);
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pca_diagonal_ordering() {
        let m = fit_pca(&Matrix::diag(&[5.0, 3.0, 1.0]), 1).unwrap();
        assert_eq!(m.v_abnormal.column(0), vec![0.0, 0.0, 1.0]);
        assert_eq!(m.v_normal.cols(), 2);
        assert_eq!(m.variance_abnormal, 1.0);
    }

    #[test]
    fn pca_degenerate_spectrum_projector_trace() {
        let m = fit_pca(&Matrix::identity(4), 2).unwrap();
        assert!((m.abnormal_projector().trace() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn d_out_of_range() {
        assert!(fit_pca(&Matrix::identity(3), 0).is_err());
        assert!(fit_pca(&Matrix::identity(3), 4).is_err());
        let cfg = FitConfig::new(Variant::AspcaB, 3, 1.0);
        assert!(matches!(
            fit(&Matrix::identity(3), &cfg),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn forward_already_sparse_eigenbasis() {
        let a = Matrix::diag(&[4.0, 2.0, 1.0, 1.0]);
        let cfg = FitConfig::new(Variant::AspcaF, 2, 0.01);
        let m = fit_aspca_forward(&a, &cfg).unwrap();
        let proj = m.abnormal_projector();
        let expected = Matrix::diag(&[0.0, 0.0, 1.0, 1.0]);
        assert!(proj.max_abs_diff(&expected) < 1e-4, "{proj:?}");
    }

    #[test]
    fn backward_full_basis_preserves_trace() {
        let a = Matrix::from_rows(&[
            vec![2.0, 0.5, 0.0],
            vec![0.5, 1.0, 0.2],
            vec![0.0, 0.2, 3.0],
        ])
        .unwrap();
        let cfg = FitConfig::new(Variant::AspcaB, 3, 0.0);
        let m = fit_aspca_backward(&a, &cfg).unwrap();
        assert_eq!(m.v_normal.cols(), 0);
        assert!((m.variance_abnormal - a.trace()).abs() < 1e-6);
    }

    #[test]
    fn variant_parsing() {
        assert_eq!("bg".parse::<Variant>().unwrap(), Variant::AspcaBG);
        assert_eq!("PCA".parse::<Variant>().unwrap(), Variant::Pca);
        assert!("x".parse::<Variant>().is_err());
        assert_eq!(Variant::AspcaFG.to_string(), "ASPCA-FG");
    }
}
