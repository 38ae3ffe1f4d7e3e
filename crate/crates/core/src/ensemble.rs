//! Gaussian Hermitian ensemble with a two-level external source.
//!
//! A trial draws `M = A + H`, where `A` is diagonal with eigenvalue
//! `+(1 + rho / (2 sqrt n))` on the first `n/2` slots and the negative on
//! the rest, and `H` is a Hermitian Gaussian matrix with `H_ii ~ N(0, 1/n)`
//! and off-diagonal real/imaginary parts `~ N(0, 1/(2n))`. Eigenvalues are
//! rescaled by `n^(3/4)` and folded to magnitudes, which is the point
//! configuration every statistic downstream consumes.

use nalgebra::{Complex, DMatrix, RealField};
use num_traits::Float;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::{r64, three_quarter_power, Real};
use crate::scaling::ModelParams;

/// Everything needed to reproduce one Monte Carlo trial exactly.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig<R> {
    n: usize,
    params: ModelParams<R>,
    trial_seed: u64,
}

impl<R: Real> EnsembleConfig<R> {
    /// `n` must be even and positive so the source can split `+/-` evenly.
    pub fn new(n: usize, params: ModelParams<R>, trial_seed: u64) -> Result<Self> {
        if n == 0 || !n.is_multiple_of(2) {
            return Err(Error::config(format!(
                "matrix dimension must be even and positive, got {n}"
            )));
        }
        Ok(EnsembleConfig {
            n,
            params,
            trial_seed,
        })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn params(&self) -> &ModelParams<R> {
        &self.params
    }

    #[inline]
    pub fn trial_seed(&self) -> u64 {
        self.trial_seed
    }

    /// Source strength `1 + rho / (2 sqrt n)`.
    pub fn source_level(&self) -> R {
        R::one() + self.params.rho() / (r64::<R>(2.0) * r64::<R>(self.n as f64).sqrt())
    }
}

/// Draws one matrix `M = A + H` from `rng`.
///
/// Draw order is part of the reproducibility contract: the `n` diagonal
/// entries first (one standard normal each), then the strict upper triangle
/// in row-major order (real part, then imaginary part). Changing this order
/// changes every seeded result.
pub fn sample_matrix<R>(config: &EnsembleConfig<R>, rng: &mut impl Rng) -> DMatrix<Complex<R>>
where
    R: Real,
    StandardNormal: Distribution<R>,
{
    let n = config.n;
    let level = config.source_level();
    let diag_std = R::one() / r64::<R>(n as f64).sqrt();
    let off_std = R::one() / (r64::<R>(2.0) * r64::<R>(n as f64)).sqrt();

    let mut m = DMatrix::<Complex<R>>::zeros(n, n);
    for i in 0..n {
        let z: R = rng.sample(StandardNormal);
        let source = if i < n / 2 { level } else { -level };
        m[(i, i)] = Complex::new(source + z * diag_std, R::zero());
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let re: R = rng.sample(StandardNormal);
            let im: R = rng.sample(StandardNormal);
            let v = Complex::new(re * off_std, im * off_std);
            m[(i, j)] = v;
            m[(j, i)] = v.conj();
        }
    }
    m
}

/// Eigenvalues of a Hermitian matrix, sorted ascending.
///
/// Rejects matrices whose asymmetry `max |M_ij - conj(M_ji)|` exceeds
/// `1e-12 * max(1, max |M_ij|)`, and any non-finite output.
pub fn eigenvalues<R>(m: &DMatrix<Complex<R>>) -> Result<Vec<R>>
where
    R: Real + RealField,
{
    check_hermitian(m)?;
    let eigs = m.symmetric_eigenvalues();
    let mut out: Vec<R> = eigs.iter().copied().collect();
    if out.iter().any(|x| !Float::is_finite(*x)) {
        return Err(Error::input(
            "eigenvalue solve produced a non-finite value".to_string(),
        ));
    }
    out.sort_by(|a, b| a.partial_cmp(b).expect("finite eigenvalues are ordered"));
    Ok(out)
}

/// Eigenvalues with an explicit residual check `||Mv - lambda v|| <= 1e-10 ||M||`
/// on every eigenpair. Slower than [`eigenvalues`]; intended for validation.
pub fn validate_eigenpairs<R>(m: &DMatrix<Complex<R>>) -> Result<Vec<R>>
where
    R: Real + RealField,
{
    check_hermitian(m)?;
    let decomp = m.clone().symmetric_eigen();
    let norm = m.norm();
    let tol = r64::<R>(1e-10) * RealField::max(norm, R::one());
    for (idx, lambda) in decomp.eigenvalues.iter().enumerate() {
        let v = decomp.eigenvectors.column(idx);
        let residual = (m * v - v * Complex::new(*lambda, R::zero())).norm();
        if !(residual <= tol) {
            return Err(Error::Convergence {
                what: format!("eigenpair {idx} residual check"),
                spread: residual.to_f64().unwrap_or(f64::NAN),
                tolerance: tol.to_f64().unwrap_or(f64::NAN),
            });
        }
    }
    let mut out: Vec<R> = decomp.eigenvalues.iter().copied().collect();
    if out.iter().any(|x| !Float::is_finite(*x)) {
        return Err(Error::input(
            "eigenvalue solve produced a non-finite value".to_string(),
        ));
    }
    out.sort_by(|a, b| a.partial_cmp(b).expect("finite eigenvalues are ordered"));
    Ok(out)
}

fn check_hermitian<R>(m: &DMatrix<Complex<R>>) -> Result<()>
where
    R: Real + RealField,
{
    if !m.is_square() {
        return Err(Error::input(format!(
            "matrix must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let n = m.nrows();
    let mut max_asym_sq = R::zero();
    let mut max_mag_sq = R::zero();
    for i in 0..n {
        for j in i..n {
            let d = m[(i, j)] - m[(j, i)].conj();
            max_asym_sq = Float::max(max_asym_sq, d.norm_sqr());
            max_mag_sq = Float::max(max_mag_sq, m[(i, j)].norm_sqr());
        }
    }
    let scale = Float::max(Float::sqrt(max_mag_sq), R::one());
    if !(Float::sqrt(max_asym_sq) <= r64::<R>(1e-12) * scale) {
        return Err(Error::input(format!(
            "matrix is not Hermitian: asymmetry {:e} exceeds 1e-12 relative",
            Float::sqrt(max_asym_sq)
        )));
    }
    Ok(())
}

/// A rescaled spectrum: both the signed points `n^(3/4) lambda` and their
/// magnitudes, each sorted ascending.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSample<R> {
    signed_points: Vec<R>,
    magnitudes: Vec<R>,
}

impl<R: Real> SpectrumSample<R> {
    /// Builds a sample directly from already-rescaled signed points, e.g.
    /// synthetic configurations in tests or externally produced spectra.
    pub fn from_points(mut signed: Vec<R>) -> Result<Self> {
        if signed.iter().any(|x| !x.is_finite()) {
            return Err(Error::input("points must be finite".to_string()));
        }
        signed.sort_by(|a, b| a.partial_cmp(b).expect("finite values are ordered"));
        let mut magnitudes: Vec<R> = signed.iter().map(|&x| x.abs()).collect();
        magnitudes.sort_by(|a, b| a.partial_cmp(b).expect("finite values are ordered"));
        Ok(SpectrumSample {
            signed_points: signed,
            magnitudes,
        })
    }

    /// Signed rescaled eigenvalues, ascending.
    pub fn signed_points(&self) -> &[R] {
        &self.signed_points
    }

    /// Magnitudes of the rescaled eigenvalues, ascending. The `k`-th point
    /// of the folded process is `magnitudes[k - 1]`.
    pub fn magnitudes(&self) -> &[R] {
        &self.magnitudes
    }

    pub fn len(&self) -> usize {
        self.magnitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.magnitudes.is_empty()
    }

    /// True when two magnitudes coincide exactly, which would merge jumps of
    /// the counting function.
    pub fn is_degenerate(&self) -> bool {
        self.magnitudes.windows(2).any(|w| w[0] == w[1])
    }

    /// Number of magnitudes in the closed interval `[0, x]`.
    pub fn count_in(&self, x: R) -> Result<usize> {
        if !x.is_finite() {
            return Err(Error::domain(format!(
                "count_in: threshold must be finite, got {x}"
            )));
        }
        Ok(self.magnitudes.partition_point(|&m| m <= x))
    }
}

/// Rescales raw eigenvalues by `n^(3/4)` and folds them to magnitudes.
///
/// The scale is computed as `sqrt(n * sqrt(n))`, which is exact on perfect
/// fourth powers.
pub fn rescale<R: Real>(eigs: &[R], n: usize) -> Result<SpectrumSample<R>> {
    if eigs.len() != n {
        return Err(Error::input(format!(
            "expected {n} eigenvalues, got {}",
            eigs.len()
        )));
    }
    if eigs.iter().any(|x| !x.is_finite()) {
        return Err(Error::input("eigenvalues must be finite".to_string()));
    }
    let scale = three_quarter_power::<R>(n);
    let mut signed: Vec<R> = eigs.iter().map(|&l| scale * l).collect();
    signed.sort_by(|a, b| a.partial_cmp(b).expect("finite values are ordered"));
    let mut magnitudes: Vec<R> = signed.iter().map(|&x| x.abs()).collect();
    magnitudes.sort_by(|a, b| a.partial_cmp(b).expect("finite values are ordered"));
    Ok(SpectrumSample {
        signed_points: signed,
        magnitudes,
    })
}

/// Runs one full trial: seed the generator, draw the matrix, solve, rescale.
pub fn sample_spectrum<R>(config: &EnsembleConfig<R>) -> Result<SpectrumSample<R>>
where
    R: Real + RealField,
    StandardNormal: Distribution<R>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(config.trial_seed);
    let m = sample_matrix(config, &mut rng);
    let eigs = eigenvalues(&m)?;
    rescale(&eigs, config.n())
}

/// Runs a batch of trials in parallel, preserving order.
///
/// Any failure is reported with the position in the batch and the seed of
/// the failing trial so it can be replayed alone.
pub fn sample_many<R>(configs: &[EnsembleConfig<R>]) -> Result<Vec<SpectrumSample<R>>>
where
    R: Real + RealField,
    StandardNormal: Distribution<R>,
{
    configs
        .par_iter()
        .enumerate()
        .map(|(idx, cfg)| {
            sample_spectrum(cfg).map_err(|e| e.in_trial(idx, cfg.trial_seed()))
        })
        .collect()
}
