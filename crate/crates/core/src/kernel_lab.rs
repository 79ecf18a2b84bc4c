//! Degree-1 arc-cosine kernel (the infinite-width limit of ReLU random
//! features) and extraction of a task eigenstructure from labeled data.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scaling_laws::KernelProvider;
use crate::simulator::LabeledData;
use crate::spectra::TaskEigenstructure;

/// Default cap on the number of samples used for a dense eigendecomposition.
pub const DEFAULT_SAMPLE_CAP: usize = 4000;

/// Modes below this fraction of the top eigenvalue get no target weight.
pub const EIGENVALUE_FLOOR: f64 = 1e-12;

/// Smallest eigenvalue of `H / P` accepted, relative to the largest.
pub const PSD_TOLERANCE: f64 = 1e-10;

const SYMMETRY_TOLERANCE: f64 = 1e-12;

/// Symmetric kernel matrix over `P` samples.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelMatrix {
    values: DMatrix<f64>,
}

impl KernelMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        let (rows, cols) = values.shape();
        if rows != cols || rows == 0 {
            return Err(Error::Shape(format!(
                "kernel matrix must be square and non-empty, got {rows} x {cols}"
            )));
        }
        let scale = values.amax().max(f64::MIN_POSITIVE);
        for i in 0..rows {
            if !(values[(i, i)] >= 0.0) {
                return Err(Error::Domain(format!("diagonal entry {i} is {}", values[(i, i)])));
            }
            for j in 0..i {
                if (values[(i, j)] - values[(j, i)]).abs() > SYMMETRY_TOLERANCE * scale {
                    return Err(Error::Domain(format!("kernel not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(KernelMatrix { values })
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn sample_count(&self) -> usize {
        self.values.nrows()
    }
}

fn column_norms(x: &DMatrix<f64>) -> Result<Vec<f64>> {
    x.column_iter()
        .enumerate()
        .map(|(j, c)| {
            let n = c.norm();
            if n > 0.0 && n.is_finite() {
                Ok(n)
            } else {
                Err(Error::Domain(format!("column {j} has norm {n}")))
            }
        })
        .collect()
}

/// Arc-cosine kernel between the columns of `x` (`D x P`) and `y` (`D x Q`):
/// `|x| |y| (sin t + (pi - t) cos t) / (pi D)` with `t` the angle between
/// them. Equals `E[relu(v.x) relu(v.y)]` for `v ~ N(0, 2/D)`.
pub fn arccos_kernel(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = x.nrows();
    if y.nrows() != d {
        return Err(Error::Shape(format!("inputs have dimensions {d} and {}", y.nrows())));
    }
    if d == 0 {
        return Err(Error::Domain("inputs have dimension 0".into()));
    }
    let (nx, ny) = (column_norms(x)?, column_norms(y)?);
    let dots = x.tr_mul(y);
    let (p, q) = dots.shape();
    // Column-major: fill each output column in parallel.
    let mut out = DMatrix::zeros(p, q);
    out.as_mut_slice().par_chunks_mut(p).enumerate().for_each(|(j, col)| {
        for (i, v) in col.iter_mut().enumerate() {
            let norms = nx[i] * ny[j];
            let cos = (dots[(i, j)] / norms).clamp(-1.0, 1.0);
            let theta = cos.acos();
            *v = norms * (theta.sin() + (PI - theta) * cos) / (PI * d as f64);
        }
    });
    Ok(out)
}

/// Symmetric arc-cosine Gram matrix of the columns of `x`.
pub fn arccos_gram(x: &DMatrix<f64>) -> Result<KernelMatrix> {
    let mut h = arccos_kernel(x, x)?;
    // Exact symmetry: the two triangles can differ in the last ulp.
    for j in 0..h.ncols() {
        for i in 0..j {
            h[(j, i)] = h[(i, j)];
        }
    }
    KernelMatrix::new(h)
}

/// Eigendecomposes `H / P`, keeps modes above `EIGENVALUE_FLOOR * eta_1` and
/// assigns `wbar_t = u_t . y / sqrt(P eta_t)`.
pub fn empirical_eigenstructure(h: &KernelMatrix, labels: &DVector<f64>, noise_var: f64) -> Result<TaskEigenstructure> {
    let p = h.sample_count();
    if labels.len() != p {
        return Err(Error::Shape(format!("{p} x {p} kernel but {} labels", labels.len())));
    }
    let eig = SymmetricEigen::new(h.values() / p as f64);
    let top = eig.eigenvalues.max();
    let bottom = eig.eigenvalues.min();
    if !(top > 0.0) {
        return Err(Error::Domain("kernel has no positive eigenvalue".into()));
    }
    if bottom < -PSD_TOLERANCE * top {
        return Err(Error::Domain(format!(
            "kernel is not positive semidefinite: smallest eigenvalue {bottom:e} vs largest {top:e}"
        )));
    }
    let floor = EIGENVALUE_FLOOR * top;
    let pairs: Vec<(f64, f64)> = eig
        .eigenvalues
        .iter()
        .zip(eig.eigenvectors.column_iter())
        .filter(|(&eta, _)| eta >= floor)
        .map(|(&eta, u)| (eta, u.dot(labels) / (p as f64 * eta).sqrt()))
        .collect();
    TaskEigenstructure::from_unsorted_pairs(pairs, noise_var)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(h: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(h.clone()).eigenvalues.min()
}

/// Draws `p` samples `theta ~ N(0, diag(eta))` and returns `Theta^T Theta`.
#[derive(Clone, Debug)]
pub struct PlantedGaussianKernel {
    pub spec: TaskEigenstructure,
}

impl KernelProvider for PlantedGaussianKernel {
    fn kernel(&self, p: usize, rng: &mut ChaCha8Rng) -> Result<DMatrix<f64>> {
        use rand::Rng;
        use rand_distr::StandardNormal;
        let roots: Vec<f64> = self.spec.eigenvalues().iter().map(|e| e.sqrt()).collect();
        let theta = DMatrix::from_fn(roots.len(), p, |t, _| roots[t] * rng.sample::<f64, _>(StandardNormal));
        Ok(theta.tr_mul(&theta))
    }
}

/// Arc-cosine Gram matrix of `p` columns drawn without replacement.
#[derive(Clone, Debug)]
pub struct DatasetKernel {
    pub inputs: DMatrix<f64>,
}

impl KernelProvider for DatasetKernel {
    fn kernel(&self, p: usize, rng: &mut ChaCha8Rng) -> Result<DMatrix<f64>> {
        let total = self.inputs.ncols();
        if p > total {
            return Err(Error::InvalidParameter(format!(
                "requested {p} samples from a dataset of {total}"
            )));
        }
        let idx = sample(rng, total, p).into_vec();
        let sub = self.inputs.select_columns(&idx);
        Ok(arccos_gram(&sub)?.values)
    }
}

/// Empirical eigenstructure of a labeled dataset under the arc-cosine
/// kernel, using at most `cap` leading samples.
pub fn dataset_eigenstructure(data: &LabeledData, cap: usize, noise_var: f64) -> Result<TaskEigenstructure> {
    let used = data.head(cap);
    let h = arccos_gram(&used.inputs)?;
    empirical_eigenstructure(&h, &used.labels, noise_var)
}

/// Test mean squared error of arc-cosine kernel ridge regression trained on
/// `p` samples drawn without replacement from `train`, averaged over
/// `trials` draws. Draw `j` at size `p` uses the stream `(seed, p, j)`.
pub fn dataset_krr_curve(
    train: &LabeledData,
    test: &LabeledData,
    p_grid: &[usize],
    lambda: f64,
    trials: usize,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    use crate::rng::{substream, StreamTag};
    use crate::simulator::krr_dual;
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be >= 1".into()));
    }
    p_grid
        .iter()
        .map(|&p| {
            if p > train.len() || p == 0 {
                return Err(Error::InvalidParameter(format!("size {p} outside 1..={}", train.len())));
            }
            let errors = (0..trials)
                .into_par_iter()
                .map(|j| {
                    let mut rng = substream(seed, StreamTag::Dataset, &[p as u64, j as u64]);
                    let idx = sample(&mut rng, train.len(), p).into_vec();
                    let x = train.inputs.select_columns(&idx);
                    let y = DVector::from_iterator(p, idx.iter().map(|&i| train.labels[i]));
                    let h = arccos_gram(&x)?;
                    let cross = arccos_kernel(&test.inputs, &x)?;
                    let pred = krr_dual(h.values(), &cross, &y, lambda)?;
                    Ok((pred - &test.labels).norm_squared() / test.len() as f64)
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok((p as f64, errors.iter().sum::<f64>() / trials as f64))
        })
        .collect()
}
