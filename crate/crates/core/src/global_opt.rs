//! Rotating a fixed orthonormal basis towards fewer non-zeros while keeping its span.
//!
//! Alternates a soft-threshold step on `C` with an orthogonal Procrustes step
//! on `X` for the surrogate `‖V − CXᵀ‖²_F + 2μ‖C‖₁,₁`, shrinking `μ`
//! geometrically. The returned basis is `V · polar(VᵀC)`, which is
//! orthonormal and lies exactly in `span(V)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::eigen::{canonical_sign, polar_factor, svd_thin};
use crate::error::{Error, Result};
use crate::matrix::{frobenius, l11_norm, soft_threshold, Matrix};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GlobalOptConfig {
    pub max_iter: usize,
    pub mu_decay: f64,
    pub mu_min: f64,
    pub tol: f64,
    /// Random orthogonal starting rotations tried in addition to the identity.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for GlobalOptConfig {
    fn default() -> Self {
        Self {
            max_iter: 200,
            mu_decay: 0.9,
            mu_min: 1e-6,
            tol: 1e-8,
            restarts: 8,
            seed: 0,
        }
    }
}

impl GlobalOptConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(Error::InvalidParameter(
                "global-opt max_iter must be >= 1".into(),
            ));
        }
        if !(self.mu_decay > 0.0 && self.mu_decay < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "mu_decay must lie in (0, 1), got {}",
                self.mu_decay
            )));
        }
        if !(self.mu_min > 0.0) {
            return Err(Error::InvalidParameter("mu_min must be > 0".into()));
        }
        Ok(())
    }
}

/// Iterate of the alternating scheme.
#[derive(Debug, Clone)]
pub struct GlobalOptState {
    pub c: Matrix,
    pub x: Matrix,
    pub mu: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GlobalOptStatus {
    Improved,
    /// No rotation beat the input; the input basis is returned.
    NoImprovement,
    /// `VᵀC` lost rank at the polar step; the input basis is returned.
    Degenerate,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GlobalOptReport {
    pub status: GlobalOptStatus,
    pub l11_before: f64,
    pub l11_after: f64,
    /// `‖BBᵀ − VVᵀ‖_F`.
    pub projector_error: f64,
    pub iterations: usize,
    /// Alternations where the surrogate objective rose at fixed μ (expected 0).
    pub monotone_violations: usize,
}

#[derive(Debug, Clone)]
pub struct GlobalOptOutcome {
    pub basis: Matrix,
    pub report: GlobalOptReport,
}

/// `‖V − CXᵀ‖²_F + 2μ‖C‖₁,₁`.
pub fn surrogate_objective(v: &Matrix, c: &Matrix, x: &Matrix, mu: f64) -> f64 {
    let cxt = c.matmul(&x.transpose()).expect("shapes checked by caller");
    let r = v.sub(&cxt);
    r.inner(&r) + 2.0 * mu * l11_norm(c)
}

/// Closed-form minimiser over `C`: `soft_threshold(V X, μ)`.
pub fn c_step(v: &Matrix, x: &Matrix, mu: f64) -> Result<Matrix> {
    Ok(v.matmul(x)?.map(|e| soft_threshold(e, mu)))
}

/// Orthogonal Procrustes: the orthogonal `X` minimising `‖V − CXᵀ‖_F` is the polar factor of `VᵀC`.
pub fn x_step(v: &Matrix, c: &Matrix) -> Result<Matrix> {
    let m = v.t_matmul(c)?;
    let svd = svd_thin(&m)?;
    svd.u.matmul(&svd.w.transpose())
}

pub fn optimize(v: &Matrix, cfg: &GlobalOptConfig) -> Result<GlobalOptOutcome> {
    cfg.validate()?;
    let (p, d) = v.shape();
    if d == 0 || d > p {
        return Err(Error::DimensionMismatch(format!("basis of shape {p}x{d}")));
    }
    let vtv = v.t_matmul(v)?;
    if vtv.max_abs_diff(&Matrix::identity(d)) > 1e-6 {
        return Err(Error::InvalidParameter(
            "global optimisation needs an orthonormal basis".into(),
        ));
    }

    let l11_before = l11_norm(v);
    let v_proj = v.projector();
    let mut starts = vec![Matrix::identity(d)];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for _ in 0..cfg.restarts {
        starts.push(random_orthogonal(d, &mut rng)?);
    }

    let mut best: Option<(Matrix, f64)> = None;
    let mut iterations = 0;
    let mut monotone_violations = 0;
    let mut degenerate = false;
    for x0 in starts {
        let run = alternate(v, x0, cfg)?;
        iterations += run.iterations;
        monotone_violations += run.monotone_violations;
        let m = v.t_matmul(&run.state.c)?;
        let (q, smin) = polar_factor(&m)?;
        if smin <= 1e-10 {
            degenerate = true;
            continue;
        }
        let mut b = v.matmul(&q)?;
        for j in 0..d {
            let mut col = b.column(j);
            canonical_sign(&mut col);
            b.set_column(j, &col);
        }
        let l11 = l11_norm(&b);
        if best.as_ref().is_none_or(|(_, bl)| l11 < *bl) {
            best = Some((b, l11));
        }
    }

    let (basis, status) = match best {
        Some((b, l11)) if l11 < l11_before => {
            let err = frobenius(&b.projector().sub(&v_proj));
            if err <= 1e-4 {
                (b, GlobalOptStatus::Improved)
            } else {
                (v.clone(), GlobalOptStatus::NoImprovement)
            }
        }
        Some(_) => (v.clone(), GlobalOptStatus::NoImprovement),
        None if degenerate => (v.clone(), GlobalOptStatus::Degenerate),
        None => (v.clone(), GlobalOptStatus::NoImprovement),
    };
    let projector_error = frobenius(&basis.projector().sub(&v_proj));
    Ok(GlobalOptOutcome {
        report: GlobalOptReport {
            status,
            l11_before,
            l11_after: l11_norm(&basis),
            projector_error,
            iterations,
            monotone_violations,
        },
        basis,
    })
}

struct Run {
    state: GlobalOptState,
    iterations: usize,
    monotone_violations: usize,
}

fn alternate(v: &Matrix, x0: Matrix, cfg: &GlobalOptConfig) -> Result<Run> {
    let vx = v.matmul(&x0)?;
    let mut mu = frobenius(v) / l11_norm(&vx).max(1e-300);
    let mut x = x0;
    let mut c = vx;
    let mut violations = 0;
    let mut iterations = 0;
    for it in 1..=cfg.max_iter {
        iterations = it;
        let before = surrogate_objective(v, &c, &x, mu);
        let c_new = c_step(v, &x, mu)?;
        let mid = surrogate_objective(v, &c_new, &x, mu);
        let x_new = x_step(v, &c_new)?;
        let after = surrogate_objective(v, &c_new, &x_new, mu);
        let slack = 1e-10 * (1.0 + before.abs());
        if mid > before + slack || after > mid + slack {
            violations += 1;
        }
        let change = frobenius(&c_new.sub(&c));
        c = c_new;
        x = x_new;
        let at_floor = mu <= cfg.mu_min;
        mu = (mu * cfg.mu_decay).max(cfg.mu_min);
        if at_floor && change <= cfg.tol {
            break;
        }
    }
    let objective = surrogate_objective(v, &c, &x, mu);
    Ok(Run {
        state: GlobalOptState {
            c,
            x,
            mu,
            objective,
        },
        iterations,
        monotone_violations: violations,
    })
}

fn random_orthogonal(d: usize, rng: &mut ChaCha8Rng) -> Result<Matrix> {
    let data: Vec<f64> = (0..d * d).map(|_| StandardNormal.sample(rng)).collect();
    let g = Matrix::from_vec(d, d, data)?;
    Ok(polar_factor(&g)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rotated_plane() -> Matrix {
        let s = 0.5f64.sqrt();
        Matrix::from_rows(&[vec![s, s], vec![s, -s], vec![0.0, 0.0]]).unwrap()
    }

    #[test]
    fn c_step_limits() {
        let v = rotated_plane();
        let x = Matrix::identity(2);
        assert_eq!(c_step(&v, &x, 0.0).unwrap(), v);
        assert_eq!(l11_norm(&c_step(&v, &x, 0.8).unwrap()), 0.0);
    }

    #[test]
    fn x_step_recovers_rotation() {
        let v = rotated_plane();
        assert!(x_step(&v, &v).unwrap().max_abs_diff(&Matrix::identity(2)) < 1e-12);
        let (c, s) = (0.3f64.cos(), 0.3f64.sin());
        let q = Matrix::from_rows(&[vec![c, -s], vec![s, c]]).unwrap();
        let cv = v.matmul(&q).unwrap();
        assert!(x_step(&v, &cv).unwrap().max_abs_diff(&q) < 1e-8);
    }

    #[test]
    fn coordinate_basis_is_left_alone() {
        let v = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let out = optimize(&v, &GlobalOptConfig::default()).unwrap();
        assert!((l11_norm(&out.basis) - 2.0).abs() < 1e-6);
        assert!(out.report.projector_error < 1e-10);
    }

    #[test]
    fn rejects_non_orthonormal_input() {
        let v = Matrix::from_rows(&[vec![1.0, 1.0], vec![0.0, 1.0]]).unwrap();
        assert!(optimize(&v, &GlobalOptConfig::default()).is_err());
    }
}
