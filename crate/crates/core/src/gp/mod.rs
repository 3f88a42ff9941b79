//! Gaussian-process regression with a squared-exponential ARD kernel.
//!
//! A [`GpModel`] is fitted once on an archive and is read-only afterwards.
//! Inputs are expected in internal (unit-cube) coordinates. Targets are
//! standardized before fitting by default, so kernel hyperparameters are
//! expressed in standardized units; every public query converts back to
//! objective units.

mod calibrate;

pub use calibrate::{calibrate_hyperparameters, maximize_likelihood, CalibrationOptions, ParamBounds};

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::archive::Archive;
use crate::error::{ensure_dim, Error, Result};

/// First diagonal jitter tried when a Cholesky factorization fails.
pub const JITTER_START: f64 = 1e-10;
/// Largest diagonal jitter tried before giving up.
pub const JITTER_MAX: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub lengthscales: Vec<f64>,
    pub signal_variance: f64,
    /// Observation-noise variance added to the kernel diagonal.
    pub nugget: f64,
}

impl KernelParams {
    pub fn new(lengthscales: Vec<f64>, signal_variance: f64, nugget: f64) -> Result<Self> {
        let p = KernelParams { lengthscales, signal_variance, nugget };
        p.validate()?;
        Ok(p)
    }

    pub fn isotropic(dim: usize, lengthscale: f64, signal_variance: f64, nugget: f64) -> Result<Self> {
        KernelParams::new(vec![lengthscale; dim], signal_variance, nugget)
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.lengthscales.is_empty() {
            return Err(Error::InvalidInput("kernel needs at least one lengthscale".into()));
        }
        if self.lengthscales.iter().any(|&l| !(l.is_finite() && l > 0.0)) {
            return Err(Error::InvalidInput(format!(
                "lengthscales must be positive, got {:?}",
                self.lengthscales
            )));
        }
        if !(self.signal_variance.is_finite() && self.signal_variance > 0.0) {
            return Err(Error::InvalidInput(format!(
                "signal variance must be positive, got {}",
                self.signal_variance
            )));
        }
        if !(self.nugget.is_finite() && self.nugget >= 0.0) {
            return Err(Error::InvalidInput(format!("nugget must be non-negative, got {}", self.nugget)));
        }
        Ok(())
    }
}

/// Squared-exponential covariance between the rows of `x` and the rows of `y`.
pub fn kernel_matrix(x: &DMatrix<f64>, y: &DMatrix<f64>, params: &KernelParams) -> Result<DMatrix<f64>> {
    let d = params.dim();
    ensure_dim(d, x.ncols())?;
    ensure_dim(d, y.ncols())?;
    let inv: Vec<f64> = params.lengthscales.iter().map(|l| 1.0 / l).collect();
    let xs = DMatrix::from_fn(x.nrows(), d, |i, l| x[(i, l)] * inv[l]);
    let ys = DMatrix::from_fn(y.nrows(), d, |i, l| y[(i, l)] * inv[l]);
    let mut k = DMatrix::<f64>::zeros(x.nrows(), y.nrows());
    for j in 0..ys.nrows() {
        let mut col = k.column_mut(j);
        for l in 0..d {
            let yl = ys[(j, l)];
            for (c, &xv) in col.iter_mut().zip(xs.column(l).iter()) {
                let diff = xv - yl;
                *c += diff * diff;
            }
        }
        for c in col.iter_mut() {
            *c = params.signal_variance * (-0.5 * *c).exp();
        }
    }
    Ok(k)
}

/// Cholesky factor of `a`, adding diagonal jitter (×10 per retry from
/// [`JITTER_START`] up to [`JITTER_MAX`]) when the plain factorization fails.
/// Returns the lower factor and the jitter that was needed.
pub fn jittered_cholesky(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    if let Some(c) = Cholesky::new(a.clone()) {
        return Ok((c.unpack(), 0.0));
    }
    let mut jitter = JITTER_START;
    while jitter <= JITTER_MAX * (1.0 + 1e-9) {
        let mut b = a.clone();
        for i in 0..b.nrows() {
            b[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(b) {
            return Ok((c.unpack(), jitter));
        }
        jitter *= 10.0;
    }
    Err(Error::Numerical(format!(
        "matrix of size {} is not positive definite even with jitter {JITTER_MAX}",
        a.nrows()
    )))
}

/// Affine map between objective units and the standardized units the kernel
/// works in: `y = offset + scale · z`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetScaling {
    pub offset: f64,
    pub scale: f64,
}

impl TargetScaling {
    pub const IDENTITY: TargetScaling = TargetScaling { offset: 0.0, scale: 1.0 };

    /// Mean and (population) standard deviation of `y`; a degenerate spread
    /// falls back to unit scale.
    pub fn standardizing(y: &[f64]) -> Self {
        if y.is_empty() {
            return Self::IDENTITY;
        }
        let n = y.len() as f64;
        let mean = y.iter().sum::<f64>() / n;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        TargetScaling { offset: mean, scale: if sd > 1e-12 { sd } else { 1.0 } }
    }

    pub fn forward(&self, y: f64) -> f64 {
        (y - self.offset) / self.scale
    }

    pub fn inverse(&self, z: f64) -> f64 {
        self.offset + self.scale * z
    }
}

/// How training targets are mapped before fitting.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TargetTransform {
    Identity,
    Standardize,
    Fixed(TargetScaling),
}

/// Posterior covariance returned by [`GpModel::predict`].
#[derive(Clone, Debug, PartialEq)]
pub enum Covariance {
    Marginal(DVector<f64>),
    Full(DMatrix<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub mean: DVector<f64>,
    pub covariance: Covariance,
}

impl Prediction {
    pub fn variances(&self) -> DVector<f64> {
        match &self.covariance {
            Covariance::Marginal(v) => v.clone(),
            Covariance::Full(m) => m.diagonal(),
        }
    }
}

/// Immutable fitted GP surrogate (zero prior mean in standardized units).
#[derive(Clone, Debug)]
pub struct GpModel {
    inputs: DMatrix<f64>,
    targets: DVector<f64>,
    params: KernelParams,
    scaling: TargetScaling,
    chol: DMatrix<f64>,
    alpha: DVector<f64>,
    jitter: f64,
}

impl GpModel {
    /// Fits on an archive with standardized targets.
    pub fn fit(archive: &Archive, params: &KernelParams) -> Result<Self> {
        GpModel::fit_with(archive, params, TargetTransform::Standardize)
    }

    pub fn fit_with(archive: &Archive, params: &KernelParams, transform: TargetTransform) -> Result<Self> {
        if archive.is_empty() {
            return Err(Error::InvalidInput("cannot fit a GP on an empty archive".into()));
        }
        GpModel::fit_data(archive.inputs(), archive.targets(), params, transform)
    }

    /// Fits on raw matrices: `inputs` is `T × d`, `targets` has length `T`.
    pub fn fit_data(
        inputs: DMatrix<f64>,
        targets: DVector<f64>,
        params: &KernelParams,
        transform: TargetTransform,
    ) -> Result<Self> {
        params.validate()?;
        ensure_dim(params.dim(), inputs.ncols())?;
        ensure_dim(inputs.nrows(), targets.len())?;
        if inputs.nrows() == 0 {
            return Err(Error::InvalidInput("cannot fit a GP without data".into()));
        }
        let scaling = match transform {
            TargetTransform::Identity => TargetScaling::IDENTITY,
            TargetTransform::Standardize => TargetScaling::standardizing(targets.as_slice()),
            TargetTransform::Fixed(s) => s,
        };
        let z = targets.map(|y| scaling.forward(y));
        let (chol, jitter) = noisy_gram_cholesky(&inputs, params)?;
        let alpha = chol_solve(&chol, &z);
        Ok(GpModel { inputs, targets, params: params.clone(), scaling, chol, alpha, jitter })
    }

    pub fn dim(&self) -> usize {
        self.params.dim()
    }

    pub fn n_train(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn scaling(&self) -> TargetScaling {
        self.scaling
    }

    pub fn train_inputs(&self) -> &DMatrix<f64> {
        &self.inputs
    }

    pub fn train_targets(&self) -> &DVector<f64> {
        &self.targets
    }

    /// Lower Cholesky factor of `K + (nugget + jitter)·I`.
    pub fn cholesky(&self) -> &DMatrix<f64> {
        &self.chol
    }

    /// Diagonal jitter that was needed on top of the nugget.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    fn solve_lower(&self, mut b: DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve_lower_triangular_mut(&mut b);
        b
    }

    /// Posterior mean and latent variance in standardized units.
    pub(crate) fn standardized_marginal(&self, xq: &DMatrix<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        let kx = kernel_matrix(&self.inputs, xq, &self.params)?;
        let mean = kx.tr_mul(&self.alpha);
        let v = self.solve_lower(kx);
        let sv = self.params.signal_variance;
        let var = DVector::from_iterator(
            v.ncols(),
            v.column_iter().map(|c| (sv - c.norm_squared()).max(0.0)),
        );
        Ok((mean, var))
    }

    fn standardized_joint(&self, xq: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let kx = kernel_matrix(&self.inputs, xq, &self.params)?;
        let mean = kx.tr_mul(&self.alpha);
        let v = self.solve_lower(kx);
        let mut cov = kernel_matrix(xq, xq, &self.params)? - v.tr_mul(&v);
        symmetrize(&mut cov);
        for i in 0..cov.nrows() {
            cov[(i, i)] = cov[(i, i)].max(0.0);
        }
        Ok((mean, cov))
    }

    /// Posterior mean and either marginal variances or the full covariance
    /// at the rows of `xq`, in objective units.
    pub fn predict(&self, xq: &DMatrix<f64>, full_cov: bool) -> Result<Prediction> {
        let s2 = self.scaling.scale * self.scaling.scale;
        if full_cov {
            let (mean, cov) = self.standardized_joint(xq)?;
            Ok(Prediction {
                mean: mean.map(|m| self.scaling.inverse(m)),
                covariance: Covariance::Full(cov * s2),
            })
        } else {
            let (mean, var) = self.standardized_marginal(xq)?;
            Ok(Prediction {
                mean: mean.map(|m| self.scaling.inverse(m)),
                covariance: Covariance::Marginal(var * s2),
            })
        }
    }

    /// Posterior means and marginal variances in objective units.
    pub fn predict_marginal(&self, xq: &DMatrix<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        let p = self.predict(xq, false)?;
        let var = p.variances();
        Ok((p.mean, var))
    }

    /// `n_samples` joint draws of the latent function at the rows of `xs`;
    /// one draw per row of the returned matrix.
    pub fn sample_posterior<R: Rng + ?Sized>(
        &self,
        xs: &DMatrix<f64>,
        n_samples: usize,
        rng: &mut R,
    ) -> Result<DMatrix<f64>> {
        if xs.nrows() == 0 {
            return Err(Error::InvalidInput("need at least one sample location".into()));
        }
        let (mean, cov) = self.standardized_joint(xs)?;
        let (l, _) = jittered_cholesky(&cov)?;
        let s = xs.nrows();
        let z = DMatrix::from_fn(s, n_samples, |_, _| rng.sample::<f64, _>(StandardNormal));
        let draws = l * z;
        Ok(DMatrix::from_fn(n_samples, s, |r, c| {
            self.scaling.inverse(mean[c] + draws[(c, r)])
        }))
    }

    /// Posterior variance at `xq` of the GP additionally conditioned on
    /// observations at `extra` (with the same nugget), in objective units.
    ///
    /// Gaussian conditional variances depend only on where observations are
    /// made, never on their values, so no values are needed for `extra`.
    pub fn conditioned_variance(&self, extra: &DMatrix<f64>, xq: &DMatrix<f64>) -> Result<DVector<f64>> {
        let s2 = self.scaling.scale * self.scaling.scale;
        let (_, cond) = self.standardized_conditioned(extra, xq)?;
        Ok(cond * s2)
    }

    /// Standardized variances at `xq` before and after conditioning on `extra`.
    pub(crate) fn standardized_conditioned(
        &self,
        extra: &DMatrix<f64>,
        xq: &DMatrix<f64>,
    ) -> Result<(DVector<f64>, DVector<f64>)> {
        ensure_dim(self.dim(), extra.ncols())?;
        let (_, prior) = self.standardized_marginal(xq)?;
        if extra.nrows() == 0 {
            return Ok((prior.clone(), prior));
        }
        // Block Cholesky of the augmented gram matrix: the trailing block is
        // the Cholesky factor of the posterior covariance at `extra`.
        let v_p = self.solve_lower(kernel_matrix(&self.inputs, extra, &self.params)?);
        let mut schur = kernel_matrix(extra, extra, &self.params)? - v_p.tr_mul(&v_p);
        symmetrize(&mut schur);
        for i in 0..schur.nrows() {
            schur[(i, i)] += self.params.nugget + self.jitter;
        }
        let (l_s, _) = jittered_cholesky(&schur)?;
        let v_x = self.solve_lower(kernel_matrix(&self.inputs, xq, &self.params)?);
        let mut cross = kernel_matrix(extra, xq, &self.params)? - v_p.tr_mul(&v_x);
        l_s.solve_lower_triangular_mut(&mut cross);
        let cond = DVector::from_iterator(
            xq.nrows(),
            cross.column_iter().zip(prior.iter()).map(|(c, &p)| (p - c.norm_squared()).max(0.0)),
        );
        Ok((prior, cond))
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

fn noisy_gram_cholesky(inputs: &DMatrix<f64>, params: &KernelParams) -> Result<(DMatrix<f64>, f64)> {
    let mut k = kernel_matrix(inputs, inputs, params)?;
    for i in 0..k.nrows() {
        k[(i, i)] += params.nugget;
    }
    jittered_cholesky(&k)
}

fn chol_solve(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut x = b.clone();
    l.solve_lower_triangular_mut(&mut x);
    l.tr_solve_lower_triangular_mut(&mut x);
    x
}

/// Log marginal likelihood of the archive's raw targets under a zero-mean GP:
/// `−½ yᵀα − Σ log Lᵢᵢ − (T/2) log 2π`.
pub fn log_marginal_likelihood(archive: &Archive, params: &KernelParams) -> Result<f64> {
    if archive.is_empty() {
        return Err(Error::InvalidInput("log likelihood of an empty archive".into()));
    }
    params.validate()?;
    lml_from_parts(&archive.inputs(), &archive.targets(), params)
}

pub(crate) fn lml_from_parts(inputs: &DMatrix<f64>, y: &DVector<f64>, params: &KernelParams) -> Result<f64> {
    ensure_dim(params.dim(), inputs.ncols())?;
    let (l, _) = noisy_gram_cholesky(inputs, params)?;
    let alpha = chol_solve(&l, y);
    let log_det_half: f64 = l.diagonal().iter().map(|v| v.ln()).sum();
    let n = y.len() as f64;
    Ok(-0.5 * y.dot(&alpha) - log_det_half - 0.5 * n * (2.0 * std::f64::consts::PI).ln())
}
