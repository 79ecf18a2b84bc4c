//! Monte Carlo oracle: linear Gaussian random-feature ensembles in the kernel
//! eigenbasis, ReLU random features on raw inputs, ridge solvers, exact
//! population risk and classification losses.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::NeumaierSum;
use crate::rng::{substream, StreamTag};
use crate::spectra::TaskEigenstructure;

/// How the columns of a [`DatasetSample`] are represented.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SampleMode {
    /// Columns are `theta(x_p)` in the kernel eigenbasis (`T x P`).
    GaussianEigenbasis,
    /// Columns are raw inputs (`D x P`).
    RawInput,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSample {
    pub features: DMatrix<f64>,
    pub labels: DVector<f64>,
    pub mode: SampleMode,
}

impl DatasetSample {
    pub fn new(features: DMatrix<f64>, labels: DVector<f64>, mode: SampleMode) -> Result<Self> {
        if features.ncols() != labels.len() {
            return Err(Error::Shape(format!(
                "{} feature columns but {} labels",
                features.ncols(),
                labels.len()
            )));
        }
        Ok(DatasetSample { features, labels, mode })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

fn gaussian_matrix(rows: usize, cols: usize, scale: f64, rng: &mut impl Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

/// Draws `P` samples `theta ~ N(0, diag(eta))` with labels
/// `y = theta . wbar + eps`, `eps ~ N(0, noise_var)`.
pub fn sample_gaussian_task(spec: &TaskEigenstructure, p: usize, seed: u64) -> Result<DatasetSample> {
    if p == 0 {
        return Err(Error::InvalidParameter("P must be >= 1".into()));
    }
    let mut rng = substream(seed, StreamTag::Dataset, &[]);
    let mut theta = gaussian_matrix(spec.len(), p, 1.0, &mut rng);
    for (mut row, &e) in theta.row_iter_mut().zip(spec.eigenvalues()) {
        row *= e.sqrt();
    }
    let wbar = DVector::from_column_slice(spec.target_weights());
    let mut labels = theta.tr_mul(&wbar);
    let sigma = spec.noise_var().sqrt();
    if sigma > 0.0 {
        let mut noise_rng = substream(seed, StreamTag::Noise, &[]);
        for y in labels.iter_mut() {
            *y += sigma * noise_rng.sample::<f64, _>(StandardNormal);
        }
    }
    DatasetSample::new(theta, labels, SampleMode::GaussianEigenbasis)
}

/// Solves `(A + lambda I) x = b` for symmetric positive semidefinite `A`.
fn ridge_solve(mut a: DMatrix<f64>, lambda: f64, b: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    for i in 0..n {
        a[(i, i)] += lambda;
    }
    if let Some(chol) = a.clone().cholesky() {
        let x = chol.solve(&b);
        if x.iter().all(|v| v.is_finite()) {
            return Ok(x);
        }
    }
    let lu = a.lu();
    lu.solve(&b)
        .filter(|x| x.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Singular(format!("{n} x {n} ridge system with lambda = {lambda:e}")))
}

fn check_ridge(lambda: f64) -> Result<()> {
    if lambda >= 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "ridge {lambda} must be finite and >= 0"
        )))
    }
}

/// Readout weights of ridge regression on features `psi` (`N x P`) for every
/// label column and ridge. Uses the `N x N` normal equations when `N < P`
/// and the `P x P` dual system otherwise. Result is indexed
/// `[ridge][label column]`, each an `N`-vector.
fn readout_weights(psi: &DMatrix<f64>, labels: &DMatrix<f64>, ridges: &[f64]) -> Result<Vec<DMatrix<f64>>> {
    let (n, p) = psi.shape();
    if n < p {
        let gram = psi * psi.transpose();
        let rhs = psi * labels;
        ridges
            .iter()
            .map(|&l| ridge_solve(gram.clone(), l, rhs.clone()))
            .collect()
    } else {
        let gram = psi.tr_mul(psi);
        ridges
            .iter()
            .map(|&l| ridge_solve(gram.clone(), l, labels.clone()).map(|a| psi * a))
            .collect()
    }
}

/// Forces the primal or dual path; used to cross-check the two.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolvePath {
    Auto,
    Primal,
    Dual,
}

/// Ridge readout `w` on features `psi` (`N x P`).
pub fn ridge_readout(psi: &DMatrix<f64>, labels: &DVector<f64>, lambda: f64, path: SolvePath) -> Result<DVector<f64>> {
    check_ridge(lambda)?;
    if psi.ncols() != labels.len() {
        return Err(Error::Shape(format!(
            "{} samples but {} labels",
            psi.ncols(),
            labels.len()
        )));
    }
    let y = DMatrix::from_column_slice(labels.len(), 1, labels.as_slice());
    let w = match path {
        SolvePath::Auto => readout_weights(psi, &y, &[lambda])?.remove(0),
        SolvePath::Primal => ridge_solve(psi * psi.transpose(), lambda, psi * &y)?,
        SolvePath::Dual => psi * ridge_solve(psi.tr_mul(psi), lambda, y)?,
    };
    Ok(w.column(0).into_owned())
}

/// Member coefficients of a linear random-feature ensemble, expressed in the
/// kernel eigenbasis: member `k` predicts `beta_k . theta(x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsemblePredictor {
    member_coeffs: Vec<DVector<f64>>,
    ridge: f64,
}

impl EnsemblePredictor {
    pub fn new(member_coeffs: Vec<DVector<f64>>, ridge: f64) -> Result<Self> {
        let first = member_coeffs
            .first()
            .ok_or_else(|| Error::InvalidParameter("ensemble needs at least one member".into()))?;
        if member_coeffs.iter().any(|b| b.len() != first.len()) {
            return Err(Error::Shape("members have different lengths".into()));
        }
        Ok(EnsemblePredictor { member_coeffs, ridge })
    }

    pub fn member_coeffs(&self) -> &[DVector<f64>] {
        &self.member_coeffs
    }

    pub fn member_count(&self) -> usize {
        self.member_coeffs.len()
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    /// Arithmetic mean of the member coefficients.
    pub fn ensemble_coeffs(&self) -> DVector<f64> {
        mean_of(&self.member_coeffs)
    }
}

fn mean_of(vs: &[DVector<f64>]) -> DVector<f64> {
    let mut acc = DVector::zeros(vs[0].len());
    for v in vs {
        acc += v;
    }
    acc / vs.len() as f64
}

/// Projection `Z` for member `member` with i.i.d. `N(0, 1/N)` entries.
fn projection(n: usize, t: usize, seed: u64, path: &[u64]) -> DMatrix<f64> {
    let mut rng = substream(seed, StreamTag::Projection, path);
    gaussian_matrix(n, t, 1.0 / (n as f64).sqrt(), &mut rng)
}

fn check_eigenbasis(data: &DatasetSample) -> Result<()> {
    if data.mode != SampleMode::GaussianEigenbasis {
        return Err(Error::InvalidParameter(
            "linear random-feature fit needs eigenbasis samples".into(),
        ));
    }
    Ok(())
}

/// Fits `K` linear random-feature members of width `N`. Member `k` draws its
/// projection from the substream `(seed, k)`.
pub fn fit_rf_ensemble(data: &DatasetSample, n: usize, k: usize, lambda: f64, seed: u64) -> Result<EnsemblePredictor> {
    check_eigenbasis(data)?;
    check_ridge(lambda)?;
    if n == 0 || k == 0 {
        return Err(Error::InvalidParameter("N and K must be >= 1".into()));
    }
    let t = data.features.nrows();
    let members = (0..k)
        .into_par_iter()
        .map(|member| {
            let z = projection(n, t, seed, &[member as u64]);
            let psi = &z * &data.features;
            let w = ridge_readout(&psi, &data.labels, lambda, SolvePath::Auto)?;
            Ok(z.tr_mul(&w))
        })
        .collect::<Result<Vec<_>>>()?;
    EnsemblePredictor::new(members, lambda)
}

/// `(beta - wbar)^T Lambda (beta - wbar) + noise_var`.
pub fn coefficient_risk(beta: &DVector<f64>, spec: &TaskEigenstructure) -> Result<f64> {
    if beta.len() != spec.len() {
        return Err(Error::Shape(format!(
            "{} coefficients for a spectrum of length {}",
            beta.len(),
            spec.len()
        )));
    }
    let mut acc = NeumaierSum::new();
    for ((b, w), e) in beta.iter().zip(spec.target_weights()).zip(spec.eigenvalues()) {
        let d = b - w;
        acc.add(e * d * d);
    }
    Ok(acc.value() + spec.noise_var())
}

/// Exact test risk of the ensemble mean under Gaussian universality.
pub fn population_risk(pred: &EnsemblePredictor, spec: &TaskEigenstructure) -> Result<f64> {
    coefficient_risk(&pred.ensemble_coeffs(), spec)
}

/// Mean squared error of `beta` on fresh Gaussian test points, with its
/// standard error. Used to cross-check [`population_risk`].
pub fn sampled_test_risk(
    beta: &DVector<f64>,
    spec: &TaskEigenstructure,
    points: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if beta.len() != spec.len() {
        return Err(Error::Shape(format!(
            "{} coefficients for a spectrum of length {}",
            beta.len(),
            spec.len()
        )));
    }
    if points < 2 {
        return Err(Error::InvalidParameter("need at least 2 test points".into()));
    }
    let test = sample_gaussian_task(spec, points, seed)?;
    let pred = test.features.tr_mul(beta);
    let sq: Vec<f64> = pred
        .iter()
        .zip(test.labels.iter())
        .map(|(f, y)| (f - y) * (f - y))
        .collect();
    Ok(mean_and_se(&sq))
}

/// Sample mean and its standard error.
pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Empirical bias and variance over random projections for one dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasVariance {
    /// Population risk of the trial-mean coefficients (includes the noise).
    pub bias_sq: f64,
    /// Mean `Lambda`-weighted squared deviation from the trial mean, scaled
    /// by `trials / (trials - 1)`.
    pub var: f64,
    /// Population risk of each single trial.
    pub trial_risks: Vec<f64>,
}

/// Bias and variance over `trials` independent projections of one dataset
/// drawn from `(seed)`.
pub fn empirical_bias_variance(
    spec: &TaskEigenstructure,
    p: usize,
    n: usize,
    lambda: f64,
    trials: usize,
    seed: u64,
) -> Result<BiasVariance> {
    if trials < 2 {
        return Err(Error::Domain(format!("need at least 2 trials, got {trials}")));
    }
    let data = sample_gaussian_task(spec, p, seed)?;
    let pred = fit_rf_ensemble(&data, n, trials, lambda, seed)?;
    let mean = pred.ensemble_coeffs();
    let bias_sq = coefficient_risk(&mean, spec)?;
    let mut acc = NeumaierSum::new();
    for b in pred.member_coeffs() {
        for ((x, m), e) in b.iter().zip(mean.iter()).zip(spec.eigenvalues()) {
            acc.add(e * (x - m) * (x - m));
        }
    }
    let t = trials as f64;
    let var = acc.value() / t * t / (t - 1.0);
    let trial_risks = pred
        .member_coeffs()
        .iter()
        .map(|b| coefficient_risk(b, spec))
        .collect::<Result<_>>()?;
    Ok(BiasVariance {
        bias_sq,
        var,
        trial_risks,
    })
}

/// Monte Carlo estimate of the ensemble risk over independent datasets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub p: usize,
    pub n: usize,
    /// Ensemble sizes; size `k` averages members `0..k` of each trial.
    pub ensemble_sizes: Vec<usize>,
    pub ridges: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
}

impl SimulationConfig {
    fn validate(&self) -> Result<()> {
        if self.p == 0 || self.n == 0 || self.trials == 0 {
            return Err(Error::InvalidParameter("P, N and trials must be >= 1".into()));
        }
        if self.ensemble_sizes.is_empty() || self.ensemble_sizes.contains(&0) {
            return Err(Error::InvalidParameter("ensemble sizes must be >= 1".into()));
        }
        if self.ridges.is_empty() {
            return Err(Error::InvalidParameter("at least one ridge required".into()));
        }
        self.ridges.iter().try_for_each(|&l| check_ridge(l))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationResult {
    pub ridges: Vec<f64>,
    pub ensemble_sizes: Vec<usize>,
    /// Population risk indexed `[ridge][size][trial]`.
    pub risks: Vec<Vec<Vec<f64>>>,
}

impl SimulationResult {
    /// Mean and standard error over trials.
    pub fn summary(&self, ridge_index: usize, size_index: usize) -> (f64, f64) {
        mean_and_se(&self.risks[ridge_index][size_index])
    }
}

/// Trial `j` samples its dataset from `(seed, j)` and member `m` its
/// projection from `(seed, j, m)`. Projections are shared across ridges.
pub fn simulate_ensemble_risk(spec: &TaskEigenstructure, cfg: &SimulationConfig) -> Result<SimulationResult> {
    cfg.validate()?;
    let kmax = *cfg.ensemble_sizes.iter().max().expect("non-empty");
    let t = spec.len();
    let per_trial: Vec<Vec<Vec<f64>>> = (0..cfg.trials)
        .into_par_iter()
        .map(|j| -> Result<Vec<Vec<f64>>> {
            let data = sample_gaussian_task(spec, cfg.p, seed_for_trial(cfg.seed, j))?;
            let y = DMatrix::from_column_slice(cfg.p, 1, data.labels.as_slice());
            // betas[ridge][member]
            let mut betas: Vec<Vec<DVector<f64>>> = vec![Vec::with_capacity(kmax); cfg.ridges.len()];
            for m in 0..kmax {
                let z = projection(cfg.n, t, cfg.seed, &[j as u64, m as u64]);
                let psi = &z * &data.features;
                for (slot, w) in betas.iter_mut().zip(readout_weights(&psi, &y, &cfg.ridges)?) {
                    slot.push(z.tr_mul(&w).column(0).into_owned());
                }
            }
            betas
                .iter()
                .map(|members| {
                    cfg.ensemble_sizes
                        .iter()
                        .map(|&k| coefficient_risk(&mean_of(&members[..k]), spec))
                        .collect()
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let risks = (0..cfg.ridges.len())
        .map(|r| {
            (0..cfg.ensemble_sizes.len())
                .map(|s| per_trial.iter().map(|trial| trial[r][s]).collect())
                .collect()
        })
        .collect();
    Ok(SimulationResult {
        ridges: cfg.ridges.clone(),
        ensemble_sizes: cfg.ensemble_sizes.clone(),
        risks,
    })
}

fn seed_for_trial(seed: u64, trial: usize) -> u64 {
    use rand::RngCore;
    substream(seed, StreamTag::Dataset, &[trial as u64]).next_u64()
}

/// ReLU random features `relu(V^T x) / sqrt(N)` with `V` entries drawn
/// i.i.d. from `N(0, 2/D)`. `inputs` is `D x P`; the result is `N x P`.
pub fn relu_features(inputs: &DMatrix<f64>, n: usize, seed: u64) -> Result<DMatrix<f64>> {
    let d = inputs.nrows();
    if d == 0 || n == 0 {
        return Err(Error::InvalidParameter("input dimension and N must be >= 1".into()));
    }
    let mut rng = substream(seed, StreamTag::Features, &[]);
    let v = gaussian_matrix(n, d, (2.0 / d as f64).sqrt(), &mut rng);
    let scale = 1.0 / (n as f64).sqrt();
    Ok((v * inputs).map(|a| a.max(0.0) * scale))
}

/// Test-set scores of a ReLU random-feature ensemble, one row per member.
/// Member `k` uses the feature stream `(seed, k)`.
pub fn relu_ensemble_scores(
    train: &LabeledData,
    test: &DMatrix<f64>,
    n: usize,
    k: usize,
    lambda: f64,
    seed: u64,
) -> Result<DMatrix<f64>> {
    check_ridge(lambda)?;
    if test.nrows() != train.inputs.nrows() {
        return Err(Error::Shape(format!(
            "train inputs have dimension {} but test inputs {}",
            train.inputs.nrows(),
            test.nrows()
        )));
    }
    if k == 0 {
        return Err(Error::InvalidParameter("K must be >= 1".into()));
    }
    let rows = (0..k)
        .into_par_iter()
        .map(|member| {
            let member_seed = {
                use rand::RngCore;
                substream(seed, StreamTag::Features, &[member as u64]).next_u64()
            };
            let joined = DMatrix::from_fn(train.inputs.nrows(), train.len() + test.ncols(), |i, j| {
                if j < train.len() {
                    train.inputs[(i, j)]
                } else {
                    test[(i, j - train.len())]
                }
            });
            let feats = relu_features(&joined, n, member_seed)?;
            let psi_train = feats.columns(0, train.len()).into_owned();
            let psi_test = feats.columns(train.len(), test.ncols()).into_owned();
            let w = ridge_readout(&psi_train, &train.labels, lambda, SolvePath::Auto)?;
            Ok(psi_test.tr_mul(&w))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DMatrix::from_fn(k, test.ncols(), |i, j| rows[i][j]))
}

/// Population risk of kernel ridge regression with the exact linear kernel
/// `theta . theta'` on a planted Gaussian task of `P` samples.
pub fn planted_krr_risk(spec: &TaskEigenstructure, p: usize, lambda: f64, seed: u64) -> Result<f64> {
    check_ridge(lambda)?;
    let data = sample_gaussian_task(spec, p, seed)?;
    let gram = data.features.tr_mul(&data.features);
    let y = DMatrix::from_column_slice(p, 1, data.labels.as_slice());
    let dual = ridge_solve(gram, lambda, y)?;
    let beta = (&data.features * dual).column(0).into_owned();
    coefficient_risk(&beta, spec)
}

/// Mean planted kernel ridge risk over `trials` datasets at each size.
/// Trial `j` at size `p` uses the dataset stream `(seed, p, j)`.
pub fn planted_krr_curve(
    spec: &TaskEigenstructure,
    p_grid: &[usize],
    lambda: f64,
    trials: usize,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be >= 1".into()));
    }
    p_grid
        .iter()
        .map(|&p| {
            let risks = (0..trials)
                .into_par_iter()
                .map(|j| {
                    use rand::RngCore;
                    let s = substream(seed, StreamTag::Dataset, &[p as u64, j as u64]).next_u64();
                    planted_krr_risk(spec, p, lambda, s)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((p as f64, mean_and_se(&risks).0))
        })
        .collect()
}

/// Sign with `sign(0) = +1`.
fn sign(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Error rates of score averaging and majority vote for `K x Q` member
/// scores and `+-1` labels.
pub fn classification_losses(member_scores: &DMatrix<f64>, labels: &[f64]) -> Result<(f64, f64)> {
    let (k, q) = member_scores.shape();
    if k == 0 || q == 0 {
        return Err(Error::Domain(
            "classification needs at least one member and one point".into(),
        ));
    }
    if labels.len() != q {
        return Err(Error::Shape(format!("{q} scored points but {} labels", labels.len())));
    }
    if let Some(bad) = labels.iter().find(|&&y| y != 1.0 && y != -1.0) {
        return Err(Error::Domain(format!("label {bad} is not +1 or -1")));
    }
    let (mut sa_wrong, mut mv_wrong) = (0usize, 0usize);
    for (j, &y) in labels.iter().enumerate() {
        let col = member_scores.column(j);
        let score_sum: f64 = col.iter().sum();
        let votes: f64 = col.iter().map(|&s| sign(s)).sum();
        sa_wrong += usize::from(sign(score_sum) != y);
        mv_wrong += usize::from(sign(votes) != y);
    }
    Ok((sa_wrong as f64 / q as f64, mv_wrong as f64 / q as f64))
}

/// Kernel ridge predictions `cross (train + lambda I)^{-1} labels`.
pub fn krr_dual(
    train_kernel: &DMatrix<f64>,
    cross_kernel: &DMatrix<f64>,
    labels: &DVector<f64>,
    lambda: f64,
) -> Result<DVector<f64>> {
    check_ridge(lambda)?;
    let p = train_kernel.nrows();
    if train_kernel.ncols() != p || cross_kernel.ncols() != p || labels.len() != p {
        return Err(Error::Shape(format!(
            "train kernel {:?}, cross kernel {:?}, {} labels",
            train_kernel.shape(),
            cross_kernel.shape(),
            labels.len()
        )));
    }
    let y = DMatrix::from_column_slice(p, 1, labels.as_slice());
    let a = ridge_solve(train_kernel.clone(), lambda, y)?;
    Ok((cross_kernel * a).column(0).into_owned())
}

/// Inputs (`D x P`) with one label per column.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledData {
    pub inputs: DMatrix<f64>,
    pub labels: DVector<f64>,
}

impl LabeledData {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// First `p` columns.
    pub fn head(&self, p: usize) -> LabeledData {
        let p = p.min(self.len());
        LabeledData {
            inputs: self.inputs.columns(0, p).into_owned(),
            labels: self.labels.rows(0, p).into_owned(),
        }
    }
}

/// Reads a dataset CSV with header `label,x_1,...,x_D`.
pub fn load_dataset(path: &Path) -> Result<LabeledData> {
    let text = fs::read_to_string(path)?;
    parse_dataset(&text, path)
}

pub(crate) fn parse_dataset(text: &str, path: &Path) -> Result<LabeledData> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| Error::format(path, 1, "empty file"))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let d = cols.len().saturating_sub(1);
    if cols.first() != Some(&"label")
        || d == 0
        || cols[1..].iter().enumerate().any(|(i, c)| *c != format!("x_{}", i + 1))
    {
        return Err(Error::format(path, 1, "header must be label,x_1,...,x_D"));
    }
    let mut labels = Vec::new();
    let mut values = Vec::new();
    for (i, line) in lines {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != d + 1 {
            return Err(Error::format(
                path,
                i + 1,
                format!("expected {} fields, found {}", d + 1, fields.len()),
            ));
        }
        for (c, f) in fields.iter().enumerate() {
            let v: f64 = f
                .parse()
                .map_err(|_| Error::format(path, i + 1, format!("cannot parse {f:?} as a number")))?;
            if !v.is_finite() {
                return Err(Error::format(path, i + 1, format!("non-finite value {f}")));
            }
            if c == 0 {
                labels.push(v);
            } else {
                values.push(v);
            }
        }
    }
    if labels.is_empty() {
        return Err(Error::format(path, 1, "no data rows"));
    }
    let p = labels.len();
    Ok(LabeledData {
        inputs: DMatrix::from_column_slice(d, p, &values),
        labels: DVector::from_vec(labels),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectra::{power_law_spectrum, PowerLawParams};

    fn rank5() -> TaskEigenstructure {
        TaskEigenstructure::new(vec![0.4, 0.25, 0.15, 0.12, 0.08], vec![1.0, -0.7, 0.5, 0.9, -0.3], 0.0).unwrap()
    }

    #[test]
    fn zero_target_zero_labels() {
        let s = TaskEigenstructure::new(vec![0.5, 0.5], vec![0.0, 0.0], 0.0).unwrap();
        let d = sample_gaussian_task(&s, 20, 3).unwrap();
        assert!(d.labels.iter().all(|&y| y == 0.0));
    }

    #[test]
    fn sampling_is_deterministic_and_has_right_covariance() {
        let s = power_law_spectrum(&PowerLawParams::new(1.5, 0.8, 8, 0.1)).unwrap();
        let a = sample_gaussian_task(&s, 100_000, 11).unwrap();
        let b = sample_gaussian_task(&s, 100_000, 11).unwrap();
        assert_eq!(a, b);
        for t in 0..4 {
            let var = a.features.row(t).iter().map(|x| x * x).sum::<f64>() / 100_000.0;
            let eta = s.eigenvalues()[t];
            assert!((var / eta - 1.0).abs() < 0.05, "mode {t}: {var} vs {eta}");
        }
    }

    #[test]
    fn primal_and_dual_agree() {
        let s = power_law_spectrum(&PowerLawParams::new(1.5, 0.8, 40, 0.1)).unwrap();
        let d = sample_gaussian_task(&s, 15, 5).unwrap();
        for n in [8, 15, 30] {
            let z = projection(n, s.len(), 9, &[0]);
            let psi = &z * &d.features;
            let wp = ridge_readout(&psi, &d.labels, 1e-2, SolvePath::Primal).unwrap();
            let wd = ridge_readout(&psi, &d.labels, 1e-2, SolvePath::Dual).unwrap();
            assert!((&wp - &wd).amax() < 1e-10 * wp.amax().max(1.0), "N = {n}");
        }
    }

    #[test]
    fn huge_ridge_shrinks_to_zero() {
        let s = power_law_spectrum(&PowerLawParams::new(1.5, 0.8, 50, 0.2)).unwrap();
        let d = sample_gaussian_task(&s, 30, 1).unwrap();
        let pred = fit_rf_ensemble(&d, 20, 3, 1e12, 2).unwrap();
        assert!(pred.member_coeffs().iter().all(|b| b.amax() < 1e-9));
        let r = population_risk(&pred, &s).unwrap();
        assert!((r - (1.0 + 0.2)).abs() < 1e-8);
    }

    #[test]
    fn ensemble_is_member_mean() {
        let s = power_law_spectrum(&PowerLawParams::new(1.5, 0.8, 50, 0.0)).unwrap();
        let d = sample_gaussian_task(&s, 30, 1).unwrap();
        let pred = fit_rf_ensemble(&d, 10, 3, 1e-3, 2).unwrap();
        let m = pred.ensemble_coeffs();
        let b = pred.member_coeffs();
        for t in 0..s.len() {
            assert_eq!(m[t], (b[0][t] + b[1][t] + b[2][t]) / 3.0);
        }
    }

    #[test]
    fn wide_features_recover_kernel_regression() {
        let s = rank5();
        let d = sample_gaussian_task(&s, 50, 4).unwrap();
        let lambda = 1e-8;
        // Exact-kernel regression on theta: beta = Theta (Theta^T Theta + lambda)^-1 y.
        let gram = d.features.tr_mul(&d.features);
        let y = DMatrix::from_column_slice(50, 1, d.labels.as_slice());
        let a = ridge_solve(gram, lambda, y).unwrap();
        let exact = (&d.features * a).column(0).into_owned();
        let pred = fit_rf_ensemble(&d, 100_000, 1, lambda, 8).unwrap();
        let beta = &pred.member_coeffs()[0];
        let rel = (beta - &exact).norm() / exact.norm();
        assert!(rel < 0.01, "relative deviation {rel}");
    }

    #[test]
    fn population_risk_known_values() {
        let s = power_law_spectrum(&PowerLawParams::new(1.5, 0.8, 100, 0.3)).unwrap();
        let w = DVector::from_column_slice(s.target_weights());
        let exact = EnsemblePredictor::new(vec![w], 0.0).unwrap();
        assert!((population_risk(&exact, &s).unwrap() - 0.3).abs() < 1e-15);
        let zero = EnsemblePredictor::new(vec![DVector::zeros(100)], 0.0).unwrap();
        assert!((population_risk(&zero, &s).unwrap() - 1.3).abs() < 1e-12);
        let short = EnsemblePredictor::new(vec![DVector::zeros(5)], 0.0).unwrap();
        assert!(matches!(population_risk(&short, &s), Err(Error::Shape(_))));
    }

    #[test]
    fn population_risk_matches_sampled_test_error() {
        let s = power_law_spectrum(&PowerLawParams::new(1.5, 0.8, 200, 0.1)).unwrap();
        let d = sample_gaussian_task(&s, 64, 21).unwrap();
        let pred = fit_rf_ensemble(&d, 32, 2, 1e-3, 22).unwrap();
        let exact = population_risk(&pred, &s).unwrap();
        let (mc, se) = sampled_test_risk(&pred.ensemble_coeffs(), &s, 100_000, 23).unwrap();
        assert!((mc - exact).abs() < 3.0 * se, "{mc} +- {se} vs {exact}");
    }

    #[test]
    fn interpolation_at_zero_ridge() {
        // N + P above the rank of a 40-mode spectrum, N < P and N > P both.
        let s = power_law_spectrum(&PowerLawParams::new(1.5, 0.8, 40, 0.0)).unwrap();
        let d = sample_gaussian_task(&s, 20, 2).unwrap();
        for n in [30, 60] {
            let z = projection(n, s.len(), 3, &[0]);
            let psi = &z * &d.features;
            let w = ridge_readout(&psi, &d.labels, 0.0, SolvePath::Dual).unwrap();
            let resid = (psi.tr_mul(&w) - &d.labels).amax();
            assert!(resid < 1e-8, "N = {n}: residual {resid}");
        }
    }

    #[test]
    fn zero_ridge_singular_system() {
        let psi = DMatrix::from_row_slice(1, 3, &[1.0, 2.0, 3.0]);
        let y = DVector::from_vec(vec![1.0, 0.0, 1.0]);
        assert!(matches!(
            ridge_readout(&psi, &y, 0.0, SolvePath::Dual),
            Err(Error::Singular(_))
        ));
    }

    #[test]
    fn bias_variance_trials_checked() {
        let s = rank5();
        assert!(matches!(
            empirical_bias_variance(&s, 10, 5, 1e-3, 1, 0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn wide_members_have_small_variance() {
        let s = rank5();
        let bv = empirical_bias_variance(&s, 20, 5_000, 1e-6, 8, 3).unwrap();
        assert!(bv.var < 1e-3 * bv.bias_sq.max(1e-6) + 1e-6, "{bv:?}");
    }

    #[test]
    fn relu_features_shape_and_sign() {
        let x = DMatrix::from_column_slice(3, 2, &[1.0, 0.5, -0.2, 0.0, 1.0, 2.0]);
        let f = relu_features(&x, 50, 4).unwrap();
        assert_eq!(f.shape(), (50, 2));
        assert!(f.iter().all(|&v| v >= 0.0));
        assert_eq!(f, relu_features(&x, 50, 4).unwrap());
        // x and -x never share an active unit.
        let pair = DMatrix::from_column_slice(3, 2, &[1.0, 0.5, -0.2, -1.0, -0.5, 0.2]);
        let g = relu_features(&pair, 200, 6).unwrap();
        assert!(g.column(0).iter().zip(g.column(1).iter()).all(|(a, b)| a * b == 0.0));
    }

    #[test]
    fn relu_feature_norm_moment() {
        let d = 20;
        let x = DMatrix::from_fn(d, 1, |i, _| ((i as f64) * 0.37).sin() + 0.2);
        let norm_sq = x.norm_squared();
        let f = relu_features(&x, 10_000, 9).unwrap();
        let got = f.norm_squared();
        assert!(
            (got / (norm_sq / d as f64) - 1.0).abs() < 0.02,
            "{got} vs {}",
            norm_sq / d as f64
        );
    }

    #[test]
    fn classification_examples() {
        // Score sum 0.1 > 0 but two of three votes are negative.
        let scores = DMatrix::from_column_slice(3, 1, &[0.6, -0.2, -0.3]);
        assert_eq!(classification_losses(&scores, &[1.0]).unwrap(), (0.0, 1.0));
        let single = DMatrix::from_row_slice(1, 4, &[0.3, -1.0, 0.0, 2.0]);
        let (sa, mv) = classification_losses(&single, &[1.0, 1.0, -1.0, 1.0]).unwrap();
        assert_eq!(sa, mv);
        let good = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 0.5, -0.5]);
        assert_eq!(classification_losses(&good, &[1.0, -1.0]).unwrap(), (0.0, 0.0));
        assert!(classification_losses(&DMatrix::zeros(0, 0), &[]).is_err());
    }

    #[test]
    fn planted_krr_learning_curve_decreases() {
        let s = power_law_spectrum(&PowerLawParams::new(1.5, 0.4, 2000, 0.0)).unwrap();
        let curve = planted_krr_curve(&s, &[16, 64, 256], 1e-8, 4, 3).unwrap();
        assert!(curve.windows(2).all(|w| w[1].1 < w[0].1), "{curve:?}");
        assert_eq!(curve, planted_krr_curve(&s, &[16, 64, 256], 1e-8, 4, 3).unwrap());
    }

    #[test]
    fn krr_dual_cases() {
        let s = power_law_spectrum(&PowerLawParams::new(1.5, 0.8, 30, 0.0)).unwrap();
        let d = sample_gaussian_task(&s, 10, 1).unwrap();
        let k = d.features.tr_mul(&d.features);
        let pred = krr_dual(&k, &k, &d.labels, 0.0).unwrap();
        assert!((&pred - &d.labels).amax() < 1e-8);
        let far = krr_dual(&k, &k, &d.labels, 1e12).unwrap();
        assert!(far.amax() < 1e-9);
    }

    #[test]
    fn krr_matches_primal_ridge() {
        // 20 samples, 15 features: kernel X^T X against the primal solution.
        let s = power_law_spectrum(&PowerLawParams::new(1.5, 0.8, 15, 0.1)).unwrap();
        let d = sample_gaussian_task(&s, 20, 7).unwrap();
        let q = sample_gaussian_task(&s, 6, 8).unwrap();
        let lambda = 0.05;
        let k = d.features.tr_mul(&d.features);
        let cross = q.features.tr_mul(&d.features);
        let dual = krr_dual(&k, &cross, &d.labels, lambda).unwrap();
        let w = ridge_readout(&d.features, &d.labels, lambda, SolvePath::Primal).unwrap();
        let primal = q.features.tr_mul(&w);
        assert!((&dual - &primal).amax() < 1e-10);
    }

    #[test]
    fn dataset_parsing() {
        let p = Path::new("mem.csv");
        let ok = parse_dataset("label,x_1,x_2\n1,0.5,2\n-1,1e-3,-4\n", p).unwrap();
        assert_eq!(ok.inputs.shape(), (2, 2));
        assert_eq!(ok.inputs[(1, 1)], -4.0);
        assert_eq!(ok.labels.as_slice(), &[1.0, -1.0]);
        assert!(matches!(
            parse_dataset("y,x_1\n1,2\n", p),
            Err(Error::Format { line: 1, .. })
        ));
        assert!(matches!(
            parse_dataset("label,x_1\n1,2\n1\n", p),
            Err(Error::Format { line: 3, .. })
        ));
        assert!(matches!(parse_dataset("label,x_1\n", p), Err(Error::Format { .. })));
    }

    #[test]
    fn simulation_independent_of_thread_count() {
        let s = power_law_spectrum(&PowerLawParams::new(1.5, 0.8, 64, 0.1)).unwrap();
        let cfg = SimulationConfig {
            p: 24,
            n: 12,
            ensemble_sizes: vec![1, 2],
            ridges: vec![1e-3, 1e-1],
            trials: 6,
            seed: 5,
        };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| simulate_ensemble_risk(&s, &cfg).unwrap())
        };
        assert_eq!(run(1), run(3));
    }
}
