//! ADMM for the trace-constrained, L1-penalised SDP solved once per
//! extracted component:
//!
//! ```text
//!   maximise   Tr(A X) − λ‖X‖₁,₁      (forward)
//!   minimise   Tr(A X) + λ‖X‖₁,₁      (backward)
//!   subject to X ⪰ 0,  Tr X = 1,  Tr(R X) = 0
//! ```
//!
//! Two blocks alternate. `X` is the exact projection onto the feasible set
//! after a gradient step (eigenvalues of the reduced matrix projected onto the
//! simplex), so every reported iterate is feasible. `Z` is the entrywise soft
//! threshold of the L1 term. Scaled duals tie the two together.

use serde::{Deserialize, Serialize};

use crate::eigen::{canonical_sign, sym_eigen};
use crate::error::{Error, Result};
use crate::matrix::{dot, frobenius, l11_norm, norm2, soft_threshold, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Maximize,
    Minimize,
}

#[derive(Debug, Clone)]
pub struct SdpProblem {
    pub a: Matrix,
    /// Projector onto the span of already extracted components.
    pub r: Matrix,
    pub lambda: f64,
    pub sense: Sense,
}

impl SdpProblem {
    pub fn new(a: Matrix, r: Matrix, lambda: f64, sense: Sense) -> Result<Self> {
        let p = a.rows();
        if !a.is_square() || r.shape() != (p, p) {
            return Err(Error::DimensionMismatch(format!(
                "A is {}x{}, R is {}x{}",
                a.rows(),
                a.cols(),
                r.rows(),
                r.cols()
            )));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lambda must be >= 0, got {lambda}"
            )));
        }
        let scale = a.max_abs().max(1.0);
        if !a.is_symmetric(1e-9 * scale) {
            return Err(Error::NotSymmetric(a.max_abs_diff(&a.transpose())));
        }
        if !r.is_symmetric(1e-9) {
            return Err(Error::NotSymmetric(r.max_abs_diff(&r.transpose())));
        }
        let r2 = r.matmul(&r)?;
        if r2.max_abs_diff(&r) > 1e-8 {
            return Err(Error::InvalidParameter(
                "deflation matrix R is not idempotent".into(),
            ));
        }
        Ok(Self {
            a: a.symmetrize(),
            r: r.symmetrize(),
            lambda,
            sense,
        })
    }

    /// Objective value of the relaxed problem at `x`.
    pub fn objective(&self, x: &Matrix) -> f64 {
        let lin = self.a.inner(x);
        let pen = self.lambda * l11_norm(x);
        match self.sense {
            Sense::Maximize => lin - pen,
            Sense::Minimize => lin + pen,
        }
    }

    pub fn dim(&self) -> usize {
        self.a.rows()
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SolverConfig {
    pub rho: f64,
    pub max_iter: usize,
    pub tol: f64,
    /// Reserved for randomised starts; the default zero start ignores it.
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            rho: 1.0,
            max_iter: 5000,
            tol: 1e-6,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "rho must be > 0, got {}",
                self.rho
            )));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "tol must be > 0, got {}",
                self.tol
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidParameter("max_iter must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct ConstraintViolation {
    /// `|Tr X − 1|`
    pub trace_err: f64,
    /// `|Tr(R X)|`
    pub orth_err: f64,
    pub min_eig: f64,
}

impl ConstraintViolation {
    pub fn of(x: &Matrix, r: &Matrix) -> Result<Self> {
        let min_eig = sym_eigen(&x.symmetrize())?.min_value();
        Ok(Self {
            trace_err: (x.trace() - 1.0).abs(),
            orth_err: r.inner(x).abs(),
            min_eig,
        })
    }

    pub fn max(&self) -> f64 {
        self.trace_err.max(self.orth_err).max(-self.min_eig)
    }
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub x: Matrix,
    pub objective: f64,
    /// `‖X − Z‖_F` at the last iteration.
    pub primal_residual: f64,
    pub violation: ConstraintViolation,
    pub iterations: usize,
    pub converged: bool,
    /// Max constraint violation over the final iterations, oldest first.
    pub violation_tail: Vec<f64>,
}

/// Euclidean projection onto `{Y : Tr Y = 1, Tr(R Y) = 0}`.
///
/// The correction lies in `span{I, R}`, so the result is `S + aI + bR` with
/// `(a, b)` solving a 2×2 normal system.
pub fn affine_project(s: &Matrix, r: &Matrix) -> Result<Matrix> {
    let p = s.rows();
    if !s.is_square() || r.shape() != s.shape() {
        return Err(Error::DimensionMismatch("affine_project shapes".into()));
    }
    let pf = p as f64;
    let tr_r = r.trace();
    let rr = r.inner(r);
    let rhs_trace = 1.0 - s.trace();
    let mut out = s.clone();
    if rr <= 1e-14 {
        let a = rhs_trace / pf;
        for i in 0..p {
            out[(i, i)] += a;
        }
        return Ok(out);
    }
    let rhs_orth = -r.inner(s);
    let det = pf * rr - tr_r * tr_r;
    if det.abs() <= 1e-10 * pf * rr {
        return Err(Error::OverDeflated);
    }
    let a = (rhs_trace * rr - tr_r * rhs_orth) / det;
    let b = (pf * rhs_orth - tr_r * rhs_trace) / det;
    out.add_assign_scaled(r, b);
    for i in 0..p {
        out[(i, i)] += a;
    }
    Ok(out)
}

/// Orthonormal basis of `range(I − R)`, the directions left after deflation.
pub fn feasible_basis(r: &Matrix) -> Result<Matrix> {
    let p = r.rows();
    let eig = sym_eigen(&Matrix::identity(p).sub(r).symmetrize())?;
    let idx: Vec<usize> = (0..p).filter(|&i| eig.values[i] > 0.5).collect();
    if idx.is_empty() {
        return Err(Error::OverDeflated);
    }
    Ok(eig.vectors.select_columns(&idx))
}

/// Euclidean projection of `v` onto the probability simplex.
pub fn simplex_project(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (k, &x) in sorted.iter().enumerate() {
        cum += x;
        let t = (cum - 1.0) / (k + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

/// Nearest point of `{X ⪰ 0, Tr X = 1, Tr(R X) = 0}` to symmetric `S`, given
/// `W = feasible_basis(R)`.
///
/// With `X ⪰ 0`, `Tr(RX) = 0` forces `X = W Y Wᵀ`, so the set is an isometric
/// image of the unit-trace PSD matrices in the reduced space. Its projection is
/// an eigendecomposition of `WᵀSW` followed by a simplex projection of the eigenvalues.
pub fn spectraplex_project(s: &Matrix, w: &Matrix) -> Result<Matrix> {
    let reduced = w.t_matmul(&s.matmul(w)?)?.symmetrize();
    let eig = sym_eigen(&reduced)?;
    let lam = simplex_project(&eig.values);
    let m = w.matmul(&eig.vectors)?;
    let mut out = Matrix::zeros(s.rows(), s.cols());
    for (k, &l) in lam.iter().enumerate() {
        if l > 0.0 {
            let col = m.column(k);
            out.add_assign_scaled(&Matrix::outer(&col, &col), l);
        }
    }
    Ok(out.symmetrize())
}

const TAIL_LEN: usize = 10;

const RHO_UPDATE_EVERY: usize = 10;

const GAP_CHECK_EVERY: usize = 10;

/// Gap between the scaled objective at feasible `x` and the bound
/// `λ_max(Wᵀ(Â − Y)W)`, valid for any `|Y|ᵢⱼ ≤ λ̂`. `Y` is the clipped scaled dual `ρu`.
fn duality_gap(
    x: &Matrix,
    u: &Matrix,
    rho: f64,
    a_hat: &Matrix,
    lambda_hat: f64,
    w: &Matrix,
) -> Result<f64> {
    let y = u.map(|v| (rho * v).clamp(-lambda_hat, lambda_hat));
    let reduced = w.t_matmul(&a_hat.sub(&y).matmul(w)?)?.symmetrize();
    let bound = sym_eigen(&reduced)?.max_value();
    let value = a_hat.inner(x) - lambda_hat * l11_norm(x);
    Ok(bound - value)
}

/// Restart when the combined residual fails to shrink by this factor.
const RESTART_RATIO: f64 = 0.999;

pub fn solve(problem: &SdpProblem, cfg: &SolverConfig) -> Result<SdpSolution> {
    cfg.validate()?;
    let p = problem.dim();
    if p == 0 {
        return Err(Error::DimensionMismatch("empty problem".into()));
    }
    let w = feasible_basis(&problem.r)?;
    // Rescale so the linear term is O(1) against a unit-trace iterate; the
    // minimiser is unchanged when A and λ share the factor.
    let scale = frobenius(&problem.a).max(problem.lambda).max(1e-300);
    let grad_sign = match problem.sense {
        Sense::Maximize => 1.0,
        Sense::Minimize => -1.0,
    };
    let a_hat = problem.a.scale(grad_sign / scale);
    let lambda_hat = problem.lambda / scale;
    let mut rho = cfg.rho;

    let mut x = Matrix::zeros(p, p);
    let mut z = x.clone();
    let mut u = x.clone();
    // extrapolated points the next step starts from
    let mut z_hat = z.clone();
    let mut u_hat = u.clone();
    let mut momentum: f64 = 1.0;
    let mut rho_interval = RHO_UPDATE_EVERY;
    let mut next_rho_update = RHO_UPDATE_EVERY;
    let mut last_combined = f64::INFINITY;
    let mut tail: Vec<f64> = Vec::with_capacity(TAIL_LEN + 1);
    let mut primal_residual = f64::INFINITY;
    let mut violation = ConstraintViolation::default();
    let mut converged = false;
    let mut iterations = 0;

    for it in 1..=cfg.max_iter {
        iterations = it;
        x = spectraplex_project(&z_hat.sub(&u_hat).add(&a_hat.scale(1.0 / rho)), &w)?;
        let z_new = x.add(&u_hat).map(|v| soft_threshold(v, lambda_hat / rho));
        if z_new.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged(it));
        }
        let u_new = u_hat.add(&x).sub(&z_new);
        primal_residual = frobenius(&x.sub(&z_new));
        let change = frobenius(&z_new.sub(&z));

        violation = ConstraintViolation::of(&x, &problem.r)?;
        if tail.len() == TAIL_LEN {
            tail.remove(0);
        }
        tail.push(violation.max());
        let settled = primal_residual <= cfg.tol && change <= cfg.tol;
        if violation.max() <= cfg.tol
            && (settled
                || (it % GAP_CHECK_EVERY == 0
                    && duality_gap(&x, &u_new, rho, &a_hat, lambda_hat, &w)? <= cfg.tol))
        {
            converged = true;
            break;
        }

        // Nesterov momentum on (Z, U), restarted whenever the combined
        // residual grows
        let combined = frobenius(&u_new.sub(&u_hat)).powi(2) + frobenius(&z_new.sub(&z_hat)).powi(2);
        if combined < RESTART_RATIO * last_combined {
            let next = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
            let beta = (momentum - 1.0) / next;
            z_hat = z_new.add(&z_new.sub(&z).scale(beta));
            u_hat = u_new.add(&u_new.sub(&u).scale(beta));
            momentum = next;
            last_combined = combined;
            z = z_new;
            u = u_new;
        } else {
            momentum = 1.0;
            z_hat = z.clone();
            u_hat = u.clone();
            last_combined /= RESTART_RATIO;
        }

        // residual balancing, at doubling intervals so ρ eventually settles
        let dual_residual = rho * change;
        let factor = if primal_residual > 10.0 * dual_residual {
            2.0
        } else if dual_residual > 10.0 * primal_residual {
            0.5
        } else {
            1.0
        };
        if factor != 1.0 && it >= next_rho_update {
            next_rho_update = it + rho_interval;
            rho_interval *= 2;
            rho *= factor;
            u = u.scale(1.0 / factor);
            z_hat = z.clone();
            u_hat = u.clone();
            momentum = 1.0;
            last_combined = f64::INFINITY;
        }
    }

    Ok(SdpSolution {
        objective: problem.objective(&x),
        x,
        primal_residual,
        violation,
        iterations,
        converged,
        violation_tail: tail,
    })
}

/// Dominant eigenvector of `x`, projected off the span of `r` and renormalised.
pub fn extract_leading_vector(x: &Matrix, r: &Matrix) -> Result<Vec<f64>> {
    let eig = sym_eigen(&x.symmetrize())?;
    let top = eig.top_vector();
    let mut v = deflate(&top, r)?;
    let nrm = norm2(&v);
    if nrm < 1e-8 {
        return Err(Error::DegenerateRounding(0));
    }
    v.iter_mut().for_each(|e| *e /= nrm);
    canonical_sign(&mut v);
    Ok(v)
}

/// `(I − R) v`.
fn deflate(v: &[f64], r: &Matrix) -> Result<Vec<f64>> {
    let rv = r.matvec(v)?;
    Ok(v.iter().zip(&rv).map(|(a, b)| a - b).collect())
}

/// Zeroes entries below `cutoff` in magnitude, renormalises, and projects off `r` once more.
pub fn sparsify_loading(v: &[f64], r: &Matrix, cutoff: f64) -> Result<Vec<f64>> {
    let mut w: Vec<f64> = v
        .iter()
        .map(|&e| if e.abs() < cutoff { 0.0 } else { e })
        .collect();
    if norm2(&w) < 1e-12 {
        w = v.to_vec();
    }
    let mut w = deflate(&w, r)?;
    // second pass removes the rounding error left by the first
    let w2 = deflate(&w, r)?;
    w = w2;
    let nrm = norm2(&w);
    if nrm < 1e-8 {
        return Err(Error::DegenerateRounding(0));
    }
    w.iter_mut().for_each(|e| *e /= nrm);
    canonical_sign(&mut w);
    Ok(w)
}

/// `Tr(A vvᵀ) = vᵀAv`.
pub fn rayleigh(a: &Matrix, v: &[f64]) -> f64 {
    a.matvec(v).map(|av| dot(v, &av)).unwrap_or(f64::NAN)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simplex_projection_examples() {
        assert_eq!(simplex_project(&[0.2, 0.8]), vec![0.2, 0.8]);
        assert_eq!(simplex_project(&[2.0, 0.0]), vec![1.0, 0.0]);
        let y = simplex_project(&[0.0, 0.0, 0.0]);
        assert!(y.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn spectraplex_projection_stays_off_deflated_span() {
        let r = Matrix::diag(&[1.0, 0.0, 0.0]);
        let w = feasible_basis(&r).unwrap();
        assert_eq!(w.cols(), 2);
        let s = Matrix::from_rows(&[
            vec![2.0, 1.0, 0.0],
            vec![1.0, -1.0, 0.5],
            vec![0.0, 0.5, 3.0],
        ])
        .unwrap();
        let z = spectraplex_project(&s, &w).unwrap();
        let v = ConstraintViolation::of(&z, &r).unwrap();
        assert!(v.max() < 1e-12);
        assert!(z.row(0).iter().all(|&x| x.abs() < 1e-15));
        // 2×2 block [[-1, .5], [.5, 3]]: the top eigenvalue exceeds the next by
        // more than 1, so all mass lands on its eigenvector
        let top = sym_eigen(&Matrix::from_rows(&[vec![-1.0, 0.5], vec![0.5, 3.0]]).unwrap())
            .unwrap()
            .top_vector();
        for i in 0..2 {
            for j in 0..2 {
                assert!((z[(i + 1, j + 1)] - top[i] * top[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn spectraplex_projection_fixes_feasible_points() {
        let w = feasible_basis(&Matrix::zeros(3, 3)).unwrap();
        let s = Matrix::diag(&[0.2, 0.3, 0.5]);
        assert!(spectraplex_project(&s, &w).unwrap().max_abs_diff(&s) < 1e-12);
    }

    fn e(p: usize, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; p];
        v[i] = 1.0;
        v
    }

    #[test]
    fn affine_project_splits_trace_budget() {
        let y = affine_project(&Matrix::zeros(3, 3), &Matrix::zeros(3, 3)).unwrap();
        assert!(y.max_abs_diff(&Matrix::identity(3).scale(1.0 / 3.0)) < 1e-15);
    }

    #[test]
    fn affine_project_fixed_point() {
        let r = Matrix::outer(&e(3, 0), &e(3, 0));
        let s = Matrix::diag(&[0.0, 0.25, 0.75]);
        assert!(affine_project(&s, &r).unwrap().max_abs_diff(&s) < 1e-12);
    }

    #[test]
    fn affine_project_against_least_squares_oracle() {
        // Oracle: for S = I₃, R = e₁e₁ᵀ the feasible set is an affine
        // subspace; its nearest point is found by projecting on each
        // coordinate block independently: the (0,0) entry must become 0 and
        // the remaining diagonal must sum to 1 with equal shifts.
        let r = Matrix::outer(&e(3, 0), &e(3, 0));
        let y = affine_project(&Matrix::identity(3), &r).unwrap();
        let expected = Matrix::diag(&[0.0, 0.5, 0.5]);
        assert!(y.max_abs_diff(&expected) < 1e-12);
        assert!((y.trace() - 1.0).abs() < 1e-12);
        assert!(r.inner(&y).abs() < 1e-12);
    }

    #[test]
    fn affine_project_rejects_full_deflation() {
        let r = Matrix::identity(2);
        assert!(matches!(
            affine_project(&Matrix::zeros(2, 2), &r),
            Err(Error::OverDeflated)
        ));
    }

    #[test]
    fn solve_diag_max_and_min() {
        let a = Matrix::diag(&[3.0, 1.0]);
        let r = Matrix::zeros(2, 2);
        let cfg = SolverConfig::default();
        let max = solve(
            &SdpProblem::new(a.clone(), r.clone(), 0.0, Sense::Maximize).unwrap(),
            &cfg,
        )
        .unwrap();
        assert!(max.converged);
        assert!((max.objective - 3.0).abs() < 1e-4);
        assert!(max.x.max_abs_diff(&Matrix::diag(&[1.0, 0.0])) < 1e-4);
        let min = solve(&SdpProblem::new(a, r, 0.0, Sense::Minimize).unwrap(), &cfg).unwrap();
        assert!(min.converged);
        assert!((min.objective - 1.0).abs() < 1e-4);
        assert!(min.x.max_abs_diff(&Matrix::diag(&[0.0, 1.0])) < 1e-4);
    }

    #[test]
    fn solve_identity_objective_is_one_minus_lambda() {
        for lambda in [0.0, 0.3, 2.0] {
            let prob = SdpProblem::new(
                Matrix::identity(4),
                Matrix::zeros(4, 4),
                lambda,
                Sense::Maximize,
            )
            .unwrap();
            let sol = solve(&prob, &SolverConfig::default()).unwrap();
            assert!(sol.converged, "lambda {lambda}");
            assert!(
                (sol.objective - (1.0 - lambda)).abs() < 1e-4,
                "lambda {lambda}: {}",
                sol.objective
            );
        }
    }

    #[test]
    fn leading_vector_rank_one_and_dominant_mix() {
        let x = Matrix::outer(&e(3, 0), &e(3, 0));
        assert_eq!(
            extract_leading_vector(&x, &Matrix::zeros(3, 3)).unwrap(),
            e(3, 0)
        );

        let s = 0.5f64.sqrt();
        let u = vec![s, s, 0.0];
        let w = vec![s, -s, 0.0];
        let x = Matrix::outer(&u, &u)
            .scale(0.9)
            .add(&Matrix::outer(&w, &w).scale(0.1));
        let v = extract_leading_vector(&x, &Matrix::zeros(3, 3)).unwrap();
        for (a, b) in v.iter().zip(&u) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn leading_vector_inside_deflated_span_is_degenerate() {
        let x = Matrix::outer(&e(2, 0), &e(2, 0));
        let r = x.clone();
        assert!(matches!(
            extract_leading_vector(&x, &r),
            Err(Error::DegenerateRounding(_))
        ));
    }

    #[test]
    fn problem_rejects_non_idempotent_r() {
        let r = Matrix::diag(&[0.5, 0.0]);
        assert!(SdpProblem::new(Matrix::identity(2), r, 0.0, Sense::Maximize).is_err());
    }
}
