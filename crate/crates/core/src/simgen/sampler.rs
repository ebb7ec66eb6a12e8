use ndarray::{Array1, Array2, Array3, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{from_dmatrix, to_dmatrix, LatentSpec, Regime, SimTruth};
use crate::error::{Error, Result};
use crate::family::sigmoid;
use crate::model::{Family, ReplicateDataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GibbsSettings {
    pub burn_in: usize,
    /// Sweeps between collected samples.
    pub thin: usize,
    /// Repeat the burn-in at every replicate, not only the first.
    pub burn_in_each_replicate: bool,
}

impl Default for GibbsSettings {
    fn default() -> Self {
        Self {
            burn_in: 10_000,
            thin: 1_000,
            burn_in_each_replicate: true,
        }
    }
}

/// Independent stream for subject `i` under a common seed.
pub fn subject_rng(seed: u64, i: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64);
    rng
}

fn cholesky(a: &Array2<f64>, what: &str) -> Result<Array2<f64>> {
    let chol = to_dmatrix(a)
        .cholesky()
        .ok_or_else(|| Error::Construction(format!("{what} is not positive definite")))?;
    Ok(from_dmatrix(&chol.l()))
}

fn gaussian_draw<R: Rng>(rng: &mut R, chol: &Array2<f64>) -> Array1<f64> {
    let z = Array1::from_iter((0..chol.nrows()).map(|_| rng.sample::<f64, _>(StandardNormal)));
    chol.dot(&z)
}

/// Latent values for one subject, one row per replicate.
fn draw_latent<R: Rng>(
    rng: &mut R,
    chol_uu: Option<&Array2<f64>>,
    q: usize,
    t: usize,
    regime: Regime,
    changepoint: usize,
) -> Array2<f64> {
    let mut u = Array2::zeros((t, q));
    let Some(chol) = chol_uu else {
        return u;
    };
    match regime {
        Regime::None => {}
        Regime::Constant => {
            let v = gaussian_draw(rng, chol);
            for mut row in u.rows_mut() {
                row.assign(&v);
            }
        }
        Regime::Piecewise => {
            let first = gaussian_draw(rng, chol);
            let second = gaussian_draw(rng, chol);
            for (s, mut row) in u.rows_mut().into_iter().enumerate() {
                row.assign(if s < changepoint { &first } else { &second });
            }
        }
    }
    u
}

fn latent_factor(truth: &SimTruth, latent: &LatentSpec) -> Result<Option<Array2<f64>>> {
    if latent.regime != Regime::None && truth.q == 0 {
        return Err(Error::Precondition(
            "latent regime requested but the truth has no latent variables".into(),
        ));
    }
    if truth.q == 0 {
        return Ok(None);
    }
    Ok(Some(cholesky(&truth.sigma_uu(), "latent covariance")?))
}

fn check_sizes(n: usize, t: usize, truth: &SimTruth) -> Result<()> {
    let p = truth.p;
    if n == 0 || t == 0 || p == 0 {
        return Err(Error::InvalidDimension("n, T and p must be positive".into()));
    }
    if truth.transition.dim() != (p, p) || truth.theta.dim() != (p + truth.q, p + truth.q) {
        return Err(Error::InvalidDimension("truth matrices inconsistent with p, q".into()));
    }
    Ok(())
}

fn assemble(
    blocks: Vec<(Array2<f64>, Array2<f64>)>,
    t: usize,
    p: usize,
    q: usize,
) -> (Array3<f64>, Array3<f64>) {
    let n = blocks.len();
    let mut x = Array3::zeros((n, t, p));
    let mut u = Array3::zeros((n, t, q));
    for (i, (xi, ui)) in blocks.into_iter().enumerate() {
        x.index_axis_mut(Axis(0), i).assign(&xi);
        u.index_axis_mut(Axis(0), i).assign(&ui);
    }
    (x, u)
}

/// Gaussian replicates: `X_t | X_{t-1}, U_t ~ N(A X_{t-1} + B U_t, S)` with
/// `B = Sigma_XU Sigma_UU⁻¹`, `S = Sigma_XX - B Sigma_UX` and `X_0 = 0`.
pub fn gen_gaussian(
    n: usize,
    t: usize,
    truth: &SimTruth,
    latent: &LatentSpec,
    seed: u64,
) -> Result<(ReplicateDataset, SimTruth)> {
    check_sizes(n, t, truth)?;
    let (p, q) = (truth.p, truth.q);
    let chol_uu = latent_factor(truth, latent)?;
    let changepoint = latent.changepoint_for(t)?;
    let (loading, cond) = if q > 0 {
        let suu_inv = from_dmatrix(
            &to_dmatrix(&truth.sigma_uu())
                .try_inverse()
                .ok_or_else(|| Error::Construction("latent covariance is singular".into()))?,
        );
        let b = truth.sigma_xu().dot(&suu_inv);
        let cond = truth.sigma_xx() - b.dot(&truth.sigma_xu().t());
        (Some(b), cond)
    } else {
        (None, truth.sigma_xx())
    };
    // symmetrize against rounding before factoring
    let cond = (&cond + &cond.t()) * 0.5;
    let chol = cholesky(&cond, "conditional covariance")?;
    let a = &truth.transition;

    let blocks: Vec<(Array2<f64>, Array2<f64>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = subject_rng(seed, i);
            let u = draw_latent(&mut rng, chol_uu.as_ref(), q, t, latent.regime, changepoint);
            let mut x = Array2::zeros((t, p));
            let mut prev = Array1::zeros(p);
            for s in 0..t {
                let mut mean = a.dot(&prev);
                if let Some(b) = &loading {
                    mean += &b.dot(&u.row(s));
                }
                let cur = mean + gaussian_draw(&mut rng, &chol);
                x.row_mut(s).assign(&cur);
                prev = cur;
            }
            (x, u)
        })
        .collect();

    let (values, u) = assemble(blocks, t, p, q);
    let mut out = truth.clone();
    out.latent = (q > 0).then_some(u);
    Ok((ReplicateDataset::new(values, Family::Gaussian)?, out))
}

/// One systematic-scan sweep over `x` (entries 0/1). Node `j` is redrawn as
/// Bernoulli(sigmoid(field_j + sum_{k != j} theta_jk x_k)), comparing one
/// uniform draw per node against that probability.
pub fn gibbs_sweep<R: Rng>(x: &mut [f64], field: &[f64], theta: ArrayView2<'_, f64>, rng: &mut R) {
    let p = x.len();
    for j in 0..p {
        let mut eta = field[j];
        for k in 0..p {
            if k != j {
                eta += theta[[j, k]] * x[k];
            }
        }
        let u: f64 = rng.random();
        x[j] = if u < sigmoid(eta) { 1.0 } else { 0.0 };
    }
}

/// Binary replicates from a Gibbs sampler. Node fields combine the diagonal
/// of `theta`, the latent couplings and, from the second replicate on, the
/// lagged observation through the transition matrix. One chain per subject
/// continues across replicates.
pub fn gen_ising_gibbs(
    n: usize,
    t: usize,
    truth: &SimTruth,
    latent: &LatentSpec,
    settings: &GibbsSettings,
    seed: u64,
) -> Result<(ReplicateDataset, SimTruth)> {
    check_sizes(n, t, truth)?;
    if truth.theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidData("ising parameters must be finite".into()));
    }
    if settings.thin == 0 {
        return Err(Error::Precondition("thin must be at least 1".into()));
    }
    let (p, q) = (truth.p, truth.q);
    let chol_uu = latent_factor(truth, latent)?;
    let changepoint = latent.changepoint_for(t)?;
    let theta_xx = truth.theta_xx();
    let a = &truth.transition;

    let blocks: Vec<(Array2<f64>, Array2<f64>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = subject_rng(seed, i);
            let u = draw_latent(&mut rng, chol_uu.as_ref(), q, t, latent.regime, changepoint);
            let mut state: Vec<f64> = (0..p).map(|_| f64::from(rng.random_bool(0.5))).collect();
            let mut x = Array2::zeros((t, p));
            let mut field = vec![0.0; p];
            for s in 0..t {
                for (j, f) in field.iter_mut().enumerate() {
                    let mut v = truth.theta[[j, j]];
                    for m in 0..q {
                        v += truth.theta[[j, p + m]] * u[[s, m]];
                    }
                    if s > 0 {
                        v += a.row(j).dot(&x.row(s - 1));
                    }
                    *f = v;
                }
                let burn = if s == 0 || settings.burn_in_each_replicate {
                    settings.burn_in
                } else {
                    0
                };
                for _ in 0..burn + settings.thin {
                    gibbs_sweep(&mut state, &field, theta_xx.view(), &mut rng);
                }
                for (j, &v) in state.iter().enumerate() {
                    x[[s, j]] = v;
                }
            }
            (x, u)
        })
        .collect();

    let (values, u) = assemble(blocks, t, p, q);
    let mut out = truth.clone();
    out.latent = (q > 0).then_some(u);
    Ok((ReplicateDataset::new(values, Family::Ising)?, out))
}
