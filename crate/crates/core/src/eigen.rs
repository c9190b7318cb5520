//! Symmetric eigendecomposition, PSD projection and thin SVD.
//!
//! The symmetric solver is Householder tridiagonalisation followed by the
//! implicit QL iteration (the classic `tred2`/`tql2` pair). The SVD is a
//! one-sided Jacobi sweep, which stays accurate for the small, nearly
//! orthogonal matrices the Procrustes and polar steps feed it.

use crate::error::{Error, Result};
use crate::matrix::{dot, norm2, Matrix};

/// Full spectral decomposition of a symmetric matrix, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: Vec<f64>,
    /// Column `i` is the unit eigenvector for `values[i]`.
    pub vectors: Matrix,
}

impl SymEigen {
    /// `V · diag(values) · Vᵀ`.
    pub fn reconstruct(&self) -> Matrix {
        reconstruct_with(&self.vectors, &self.values)
    }

    pub fn min_value(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }

    pub fn max_value(&self) -> f64 {
        self.values.last().copied().unwrap_or(0.0)
    }

    /// Eigenvector for the largest eigenvalue.
    pub fn top_vector(&self) -> Vec<f64> {
        self.vectors.column(self.values.len() - 1)
    }
}

fn reconstruct_with(vectors: &Matrix, values: &[f64]) -> Matrix {
    let n = vectors.rows();
    let mut out = Matrix::zeros(n, n);
    for (k, &lam) in values.iter().enumerate() {
        if lam == 0.0 {
            continue;
        }
        for i in 0..n {
            let vik = lam * vectors[(i, k)];
            if vik == 0.0 {
                continue;
            }
            for j in i..n {
                out[(i, j)] += vik * vectors[(j, k)];
            }
        }
    }
    for i in 0..n {
        for j in 0..i {
            out[(i, j)] = out[(j, i)];
        }
    }
    out
}

/// Flips `v` so its largest-magnitude entry (first one on ties) is positive.
pub fn canonical_sign(v: &mut [f64]) {
    let mut best = 0usize;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() + 1e-12 {
            best = i;
        }
    }
    if v.get(best).is_some_and(|&x| x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

const SYMMETRY_TOL: f64 = 1e-9;

pub fn sym_eigen(a: &Matrix) -> Result<SymEigen> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "eigendecomposition of a {}x{} matrix",
            a.rows(),
            a.cols()
        )));
    }
    let n = a.rows();
    let asym = max_asymmetry(a);
    if asym > SYMMETRY_TOL * a.max_abs().max(1.0) {
        return Err(Error::NotSymmetric(asym));
    }
    if n == 0 {
        return Ok(SymEigen {
            values: vec![],
            vectors: Matrix::zeros(0, 0),
        });
    }

    let sym = a.symmetrize();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| sym.row(i).to_vec()).collect();
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    tred2(&mut v, &mut d, &mut e);
    tql2(&mut v, &mut d, &mut e)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| d[i].total_cmp(&d[j]));
    let values: Vec<f64> = order.iter().map(|&i| d[i]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col: Vec<f64> = (0..n).map(|r| v[r][src]).collect();
        canonical_sign(&mut col);
        vectors.set_column(dst, &col);
    }
    Ok(SymEigen { values, vectors })
}

fn max_asymmetry(a: &Matrix) -> f64 {
    let n = a.rows();
    let mut m = 0.0f64;
    for i in 0..n {
        for j in i + 1..n {
            m = m.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    m
}

/// Householder reduction to tridiagonal form; `v` ends up holding the accumulated transform.
fn tred2(v: &mut [Vec<f64>], d: &mut [f64], e: &mut [f64]) {
    let n = d.len();
    for j in 0..n {
        d[j] = v[n - 1][j];
    }
    for i in (1..n).rev() {
        let mut scale = 0.0;
        let mut h = 0.0;
        for k in 0..i {
            scale += d[k].abs();
        }
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[i - 1][j];
                v[i][j] = 0.0;
                v[j][i] = 0.0;
            }
        } else {
            for k in 0..i {
                d[k] /= scale;
                h += d[k] * d[k];
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for ej in e.iter_mut().take(i) {
                *ej = 0.0;
            }
            for j in 0..i {
                f = d[j];
                v[j][i] = f;
                g = e[j] + v[j][j] * f;
                for k in j + 1..i {
                    g += v[k][j] * d[k];
                    e[k] += v[k][j] * f;
                }
                e[j] = g;
            }
            f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                for k in j..i {
                    v[k][j] -= f * e[k] + g * d[k];
                }
                d[j] = v[i - 1][j];
                v[i][j] = 0.0;
            }
        }
        d[i] = h;
    }

    for i in 0..n - 1 {
        v[n - 1][i] = v[i][i];
        v[i][i] = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = v[k][i + 1] / h;
            }
            for j in 0..=i {
                let mut g = 0.0;
                for k in 0..=i {
                    g += v[k][i + 1] * v[k][j];
                }
                for k in 0..=i {
                    v[k][j] -= g * d[k];
                }
            }
        }
        for row in v.iter_mut().take(i + 1) {
            row[i + 1] = 0.0;
        }
    }
    for j in 0..n {
        d[j] = v[n - 1][j];
        v[n - 1][j] = 0.0;
    }
    v[n - 1][n - 1] = 1.0;
    e[0] = 0.0;
}

/// Implicit QL on the tridiagonal `(d, e)`, rotating the columns of `v`.
fn tql2(v: &mut [Vec<f64>], d: &mut [f64], e: &mut [f64]) -> Result<()> {
    let n = d.len();
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;

    let max_iter = 30 * n.max(1);
    let mut total_iter = 0usize;
    let mut f = 0.0;
    let mut tst1 = 0.0f64;
    let eps = f64::EPSILON;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m > l {
            loop {
                total_iter += 1;
                if total_iter > max_iter {
                    return Err(Error::EigenNoConvergence {
                        iterations: total_iter,
                        residual: e[l].abs(),
                    });
                }
                let g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().take(n).skip(l + 2) {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    let g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    for row in v.iter_mut() {
                        let h = row[i + 1];
                        row[i + 1] = s * row[i] + c * h;
                        row[i] = c * row[i] - s * h;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if !p.is_finite() || !d[l].is_finite() {
                    return Err(Error::EigenNoConvergence {
                        iterations: total_iter,
                        residual: f64::NAN,
                    });
                }
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    Ok(())
}

/// Nearest positive semidefinite matrix in Frobenius norm (negative eigenvalues clipped to zero).
pub fn psd_project(s: &Matrix) -> Result<Matrix> {
    let eig = sym_eigen(s)?;
    if eig.min_value() >= 0.0 {
        return Ok(s.symmetrize());
    }
    let clipped: Vec<f64> = eig.values.iter().map(|&v| v.max(0.0)).collect();
    Ok(reconstruct_with(&eig.vectors, &clipped))
}

/// Thin singular value decomposition `M = U · diag(σ) · Wᵀ` of an `m × n` matrix.
#[derive(Debug, Clone)]
pub struct Svd {
    /// `m × k` with `k = min(m, n)`; columns for zero singular values are an
    /// arbitrary orthonormal completion.
    pub u: Matrix,
    /// Descending.
    pub sigma: Vec<f64>,
    /// `n × k`.
    pub w: Matrix,
}

pub fn svd_thin(m: &Matrix) -> Result<Svd> {
    if m.rows() < m.cols() {
        let t = svd_thin(&m.transpose())?;
        return Ok(Svd {
            u: t.w,
            sigma: t.sigma,
            w: t.u,
        });
    }
    let (rows, cols) = m.shape();
    let mut u = m.columns();
    let mut w: Vec<Vec<f64>> = Matrix::identity(cols).columns();

    let max_sweeps = 60;
    let mut converged = false;
    for _ in 0..max_sweeps {
        let mut rotated = false;
        for i in 0..cols {
            for j in i + 1..cols {
                let alpha = dot(&u[i], &u[i]);
                let beta = dot(&u[j], &u[j]);
                let gamma = dot(&u[i], &u[j]);
                if gamma.abs() <= 1e-15 * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_pair(&mut u, i, j, c, s);
                rotate_pair(&mut w, i, j, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::EigenNoConvergence {
            iterations: max_sweeps,
            residual: f64::NAN,
        });
    }

    let mut sigma: Vec<f64> = u.iter().map(|c| norm2(c)).collect();
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]));
    let smax = order.first().map_or(0.0, |&i| sigma[i]);
    let cutoff = smax * 1e-13 * (rows.max(cols) as f64);

    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(cols);
    let mut w_cols = Vec::with_capacity(cols);
    let mut sig_sorted = Vec::with_capacity(cols);
    let mut pending = Vec::new();
    for &k in &order {
        if sigma[k] > cutoff && sigma[k] > 0.0 {
            u_cols.push(u[k].iter().map(|x| x / sigma[k]).collect());
        } else {
            sigma[k] = 0.0;
            pending.push(u_cols.len());
            u_cols.push(vec![0.0; rows]);
        }
        w_cols.push(w[k].clone());
        sig_sorted.push(sigma[k]);
    }
    for slot in pending {
        u_cols[slot] = orthogonal_completion(&u_cols, slot, rows);
    }
    Ok(Svd {
        u: Matrix::from_columns(&u_cols)?,
        sigma: sig_sorted,
        w: Matrix::from_columns(&w_cols)?,
    })
}

fn rotate_pair(cols: &mut [Vec<f64>], i: usize, j: usize, c: f64, s: f64) {
    let (left, right) = cols.split_at_mut(j);
    let (ci, cj) = (&mut left[i], &mut right[0]);
    for (a, b) in ci.iter_mut().zip(cj.iter_mut()) {
        let x = *a;
        let y = *b;
        *a = c * x - s * y;
        *b = s * x + c * y;
    }
}

/// Unit vector orthogonal to every non-zero column in `cols` except `skip`.
fn orthogonal_completion(cols: &[Vec<f64>], skip: usize, dim: usize) -> Vec<f64> {
    for e in 0..dim {
        let mut cand = vec![0.0; dim];
        cand[e] = 1.0;
        for _ in 0..2 {
            for (k, c) in cols.iter().enumerate() {
                if k == skip || norm2(c) == 0.0 {
                    continue;
                }
                let proj = dot(&cand, c);
                for (x, y) in cand.iter_mut().zip(c) {
                    *x -= proj * y;
                }
            }
        }
        let nrm = norm2(&cand);
        if nrm > 1e-6 {
            return cand.into_iter().map(|x| x / nrm).collect();
        }
    }
    vec![0.0; dim]
}

/// Closest matrix with orthonormal columns, `U Wᵀ` from the thin SVD.
///
/// Returns the factor and the smallest singular value so callers can detect
/// rank deficiency.
pub fn polar_factor(m: &Matrix) -> Result<(Matrix, f64)> {
    let svd = svd_thin(m)?;
    let q = svd.u.matmul(&svd.w.transpose())?;
    let smin = svd.sigma.last().copied().unwrap_or(0.0);
    Ok((q, smin))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_symmetric(n: usize, rng: &mut ChaCha8Rng) -> Matrix {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v: f64 = rng.random_range(-1.0..1.0);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }

    #[test]
    fn diagonal_case() {
        let eig = sym_eigen(&Matrix::diag(&[3.0, 1.0, 2.0])).unwrap();
        assert_eq!(eig.values, vec![1.0, 2.0, 3.0]);
        assert_eq!(eig.vectors.column(0), vec![0.0, 1.0, 0.0]);
        assert_eq!(eig.vectors.column(1), vec![0.0, 0.0, 1.0]);
        assert_eq!(eig.vectors.column(2), vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn two_by_two_symmetry_forced() {
        let a = Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let eig = sym_eigen(&a).unwrap();
        assert!((eig.values[0] - 1.0).abs() < 1e-14);
        assert!((eig.values[1] - 3.0).abs() < 1e-14);
        let r = 0.5f64.sqrt();
        let v0 = eig.vectors.column(0);
        // (1, -1)/√2 up to the sign convention on ties
        assert!((v0[0].abs() - r).abs() < 1e-14 && (v0[0] + v0[1]).abs() < 1e-14);
        let v1 = eig.vectors.column(1);
        assert!((v1[0] - r).abs() < 1e-14 && (v1[1] - r).abs() < 1e-14);
    }

    #[test]
    fn random_reconstruction_and_orthonormality() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [1, 2, 5, 9, 24] {
            let a = random_symmetric(n, &mut rng);
            let eig = sym_eigen(&a).unwrap();
            let err = eig.reconstruct().sub(&a);
            assert!(crate::frobenius(&err) <= 1e-8 * crate::frobenius(&a).max(1.0));
            let vtv = eig.vectors.t_matmul(&eig.vectors).unwrap();
            assert!(vtv.max_abs_diff(&Matrix::identity(n)) < 1e-10);
            assert!(eig.values.windows(2).all(|w| w[0] <= w[1]));
            for i in 0..n {
                let col = eig.vectors.column(i);
                let av = a.matvec(&col).unwrap();
                for (x, y) in av.iter().zip(&col) {
                    assert!((x - eig.values[i] * y).abs() <= 1e-8 * eig.values[i].abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn rejects_asymmetric() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(sym_eigen(&a), Err(Error::NotSymmetric(_))));
    }

    #[test]
    fn psd_projection_clips_and_fixes() {
        let p = psd_project(&Matrix::diag(&[-1.0, 2.0])).unwrap();
        assert!(p.max_abs_diff(&Matrix::diag(&[0.0, 2.0])) < 1e-15);
        let b = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.5, -1.0], vec![0.0, 3.0]]).unwrap();
        let psd = b.t_matmul(&b).unwrap();
        assert!(psd_project(&psd).unwrap().max_abs_diff(&psd) < 1e-10);
    }

    #[test]
    fn svd_rank_deficient_polar_is_orthonormal() {
        let m = Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0], vec![0.0, 0.0]]).unwrap();
        let svd = svd_thin(&m).unwrap();
        assert!((svd.sigma[0] - 2.0).abs() < 1e-12);
        assert_eq!(svd.sigma[1], 0.0);
        let (q, smin) = polar_factor(&m).unwrap();
        assert_eq!(smin, 0.0);
        let qtq = q.t_matmul(&q).unwrap();
        assert!(qtq.max_abs_diff(&Matrix::identity(2)) < 1e-12);
    }

    #[test]
    fn svd_reconstructs_wide_and_tall() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (r, c) in [(6, 3), (3, 6), (4, 4)] {
            let data: Vec<f64> = (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect();
            let m = Matrix::from_vec(r, c, data).unwrap();
            let svd = svd_thin(&m).unwrap();
            let k = svd.sigma.len();
            let mut us = svd.u.clone();
            for j in 0..k {
                let col: Vec<f64> = us.column(j).iter().map(|x| x * svd.sigma[j]).collect();
                us.set_column(j, &col);
            }
            let back = us.matmul(&svd.w.transpose()).unwrap();
            assert!(back.max_abs_diff(&m) < 1e-12);
        }
    }
}
