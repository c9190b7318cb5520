#![allow(dead_code)]

use aspca::data::{apply_numeric, fit_numeric};
use aspca::{covariance, gen_synthetic, DataTable, Matrix, PreprocessSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| StandardNormal.sample(rng))
        .collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

pub fn random_vec(p: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..p).map(|_| StandardNormal.sample(rng)).collect()
}

/// Gram–Schmidt on a Gaussian matrix: an independent route to a random orthonormal basis.
pub fn random_orthonormal(p: usize, d: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(d);
    while cols.len() < d {
        let mut v = random_vec(p, rng);
        for _ in 0..2 {
            for c in &cols {
                let proj: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(c).for_each(|(x, y)| *x -= proj * y);
            }
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            cols.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    Matrix::from_columns(&cols).unwrap()
}

/// `BᵀB` for a Gaussian `B`, with `n` rows.
pub fn random_psd(p: usize, n: usize, rng: &mut ChaCha8Rng) -> Matrix {
    covariance(&gaussian(n, p, rng)).unwrap()
}

/// PSD matrix with the given spectrum in a random basis.
pub fn psd_with_spectrum(values: &[f64], rng: &mut ChaCha8Rng) -> Matrix {
    let p = values.len();
    let q = random_orthonormal(p, p, rng);
    let mut out = Matrix::zeros(p, p);
    for (k, &lam) in values.iter().enumerate() {
        let c = q.column(k);
        out.add_assign_scaled(&Matrix::outer(&c, &c), lam);
    }
    out.symmetrize()
}

pub fn uniform(lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> f64 {
    rng.random_range(lo..hi)
}

/// Synthetic data centered on its normal rows, plus the normal-row covariance.
pub struct Synthetic {
    pub raw: DataTable,
    pub table: DataTable,
    pub spec: PreprocessSpec,
    pub cov: Matrix,
    pub labels: Vec<bool>,
    pub categories: Vec<String>,
}

pub fn synthetic(seed: u64) -> Synthetic {
    let raw = gen_synthetic(seed);
    let normal = raw.normal_rows();
    let spec = fit_numeric(&raw, &normal, false).unwrap();
    let table = apply_numeric(&spec, &raw).unwrap();
    let cov = covariance(&table.subset(&normal).matrix).unwrap();
    Synthetic {
        labels: table.labels.clone().unwrap(),
        categories: table.category.clone().unwrap(),
        raw,
        table,
        spec,
        cov,
    }
}

pub fn projector_distance(a: &Matrix, b: &Matrix) -> f64 {
    aspca::frobenius(&a.projector().sub(&b.projector()))
}
