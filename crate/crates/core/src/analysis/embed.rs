use std::cmp::Ordering;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numcore::Tensor;

fn check_rows(x: &Tensor<f64>, op: &'static str) -> Result<(usize, usize)> {
    if x.rank() != 2 {
        return Err(Error::shape(op, x.shape(), &[0, 0]));
    }
    Ok((x.dim(0), x.dim(1)))
}

/// Indices of the `k` nearest other rows of `x` for every row, sorted.
/// Equal distances go to the lower index.
pub fn knn_sets(x: &Tensor<f64>, k: usize) -> Result<Vec<Vec<usize>>> {
    let (n, d) = check_rows(x, "knn")?;
    if n <= k {
        return Err(Error::invalid(format!(
            "nearest neighbours need more than k = {k} points, got {n}"
        )));
    }
    let data = x.data();
    Ok((0..n)
        .into_par_iter()
        .map(|i| {
            let p = &data[i * d..(i + 1) * d];
            let mut dist: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let q = &data[j * d..(j + 1) * d];
                    (
                        p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(),
                        j,
                    )
                })
                .collect();
            let cmp = |a: &(f64, usize), b: &(f64, usize)| {
                a.0.partial_cmp(&b.0)
                    .unwrap_or(Ordering::Equal)
                    .then(a.1.cmp(&b.1))
            };
            dist.select_nth_unstable_by(k - 1, cmp);
            let mut nn: Vec<usize> = dist[..k].iter().map(|e| e.1).collect();
            nn.sort_unstable();
            nn
        })
        .collect())
}

/// Mean percentage of each point's `k` nearest neighbours in `original`
/// that are also among its `k` nearest in `hidden`. Rows correspond.
pub fn nn_overlap(original: &Tensor<f64>, hidden: &Tensor<f64>, k: usize) -> Result<f64> {
    let (n, _) = check_rows(original, "nn_overlap")?;
    let (m, _) = check_rows(hidden, "nn_overlap")?;
    if n != m {
        return Err(Error::shape("nn_overlap", original.shape(), hidden.shape()));
    }
    if k == 0 {
        return Err(Error::invalid("k must be positive"));
    }
    let a = knn_sets(original, k)?;
    let b = knn_sets(hidden, k)?;
    let shared: usize = a
        .iter()
        .zip(&b)
        .map(|(x, y)| x.iter().filter(|i| y.binary_search(i).is_ok()).count())
        .sum();
    Ok(100.0 * shared as f64 / (n * k) as f64)
}

#[derive(Debug, Clone)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// `(n_components, D)`, unit rows.
    pub components: Tensor<f64>,
    /// Eigenvalues of the covariance, descending.
    pub explained_variance: Vec<f64>,
    /// `explained_variance` over the total variance.
    pub explained_ratio: Vec<f64>,
    /// `(N, n_components)`.
    pub projections: Tensor<f64>,
}

/// Principal components of the rows of `x` via the covariance
/// eigendecomposition.
pub fn pca(x: &Tensor<f64>, n_components: usize) -> Result<Pca> {
    let (n, d) = check_rows(x, "pca")?;
    if n < 2 {
        return Err(Error::invalid(format!(
            "PCA needs at least 2 rows, got {n}"
        )));
    }
    if n_components == 0 || n_components > d {
        return Err(Error::invalid(format!(
            "n_components must be in 1..={d}, got {n_components}"
        )));
    }
    let m = DMatrix::from_row_slice(n, d, x.data());
    let mean: Vec<f64> = (0..d).map(|j| m.column(j).mean()).collect();
    let mut c = m;
    for j in 0..d {
        c.column_mut(j).add_scalar_mut(-mean[j]);
    }
    let cov = c.transpose() * &c / (n - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(Ordering::Equal)
    });
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let total: f64 = values.iter().sum();
    let comps: Vec<usize> = order[..n_components].to_vec();
    let components = Tensor::from_fn(&[n_components, d], |i| {
        eig.eigenvectors[(i % d, comps[i / d])]
    });
    let basis = DMatrix::from_fn(d, n_components, |r, col| eig.eigenvectors[(r, comps[col])]);
    let proj = c * basis;
    let projections = Tensor::from_fn(&[n, n_components], |i| {
        proj[(i / n_components, i % n_components)]
    });
    Ok(Pca {
        mean,
        components,
        explained_ratio: values[..n_components]
            .iter()
            .map(|v| if total > 0.0 { v / total } else { 0.0 })
            .collect(),
        explained_variance: values[..n_components].to_vec(),
        projections,
    })
}

/// Affine map `x -> x W + b` fitted by ridge regression.
#[derive(Debug, Clone)]
pub struct Ridge {
    /// `(D_in, D_out)`.
    pub weight: DMatrix<f64>,
    pub bias: Vec<f64>,
}

impl Ridge {
    pub fn predict(&self, x: &Tensor<f64>) -> Result<Tensor<f64>> {
        let (n, d) = check_rows(x, "ridge predict")?;
        if d != self.weight.nrows() {
            return Err(Error::shape(
                "ridge predict",
                x.shape(),
                &[n, self.weight.nrows()],
            ));
        }
        let y = DMatrix::from_row_slice(n, d, x.data()) * &self.weight;
        let o = self.bias.len();
        Ok(Tensor::from_fn(&[n, o], |i| {
            y[(i / o, i % o)] + self.bias[i % o]
        }))
    }
}

/// Least squares with penalty `lambda ||W||^2` on centered data; the bias
/// is unpenalized.
pub fn fit_ridge(x: &Tensor<f64>, y: &Tensor<f64>, lambda: f64) -> Result<Ridge> {
    let (n, d) = check_rows(x, "ridge")?;
    let (m, o) = check_rows(y, "ridge")?;
    if n != m || n == 0 {
        return Err(Error::shape("ridge", x.shape(), y.shape()));
    }
    let center = |t: &Tensor<f64>, cols: usize| {
        let mut a = DMatrix::from_row_slice(n, cols, t.data());
        let means: Vec<f64> = (0..cols).map(|j| a.column(j).mean()).collect();
        for j in 0..cols {
            a.column_mut(j).add_scalar_mut(-means[j]);
        }
        (a, means)
    };
    let (xc, xm) = center(x, d);
    let (yc, ym) = center(y, o);
    let mut gram = xc.transpose() * &xc;
    for i in 0..d {
        gram[(i, i)] += lambda * n as f64;
    }
    let rhs = xc.transpose() * yc;
    let weight = match gram.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => gram.lu().solve(&rhs).ok_or_else(|| {
            Error::Numerical("ridge system is singular; increase the penalty".into())
        })?,
    };
    let bias = (0..o)
        .map(|k| ym[k] - (0..d).map(|j| xm[j] * weight[(j, k)]).sum::<f64>())
        .collect();
    Ok(Ridge { weight, bias })
}
