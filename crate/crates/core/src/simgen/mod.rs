//! Seeded data generators: sparse precision matrices, transition matrices,
//! Gaussian autoregressive replicates with optional latent confounders, and
//! an Ising Gibbs sampler.

mod precision;
mod sampler;

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use ndarray::{s, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ReplicateDataset;

pub use precision::{
    gen_ising_precision, gen_partitioned, gen_partitioned_with, gen_precision, gen_transition,
    PartitionSpec, Precision, PARTITION_DIAG_BOOST, PARTITION_LATENT_DENSITY,
};
pub use sampler::{gen_gaussian, gen_ising_gibbs, gibbs_sweep, subject_rng, GibbsSettings};

/// Value placed in the selected off-diagonal positions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Fill {
    Constant { value: f64 },
    /// Magnitude uniform on `[lo, hi]` with a uniformly random sign.
    SignedUniform { lo: f64, hi: f64 },
}

impl Fill {
    pub(crate) fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            Fill::Constant { value } => value,
            Fill::SignedUniform { lo, hi } => {
                let mag = rng.random_range(lo..=hi);
                if rng.random_bool(0.5) {
                    -mag
                } else {
                    mag
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionSpec {
    pub p: usize,
    /// Fraction of unordered off-diagonal pairs made nonzero.
    pub density: f64,
    pub fill: Fill,
    /// Added to `|lambda_min|` of the off-diagonal part to form the diagonal.
    pub diag_boost: f64,
    pub seed: u64,
}

impl PrecisionSpec {
    pub fn new(p: usize, density: f64, fill: f64, diag_boost: f64, seed: u64) -> Self {
        Self {
            p,
            density,
            fill: Fill::Constant { value: fill },
            diag_boost,
            seed,
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.p < 2 {
            return Err(Error::InvalidDimension(format!("need p >= 2, got {}", self.p)));
        }
        if !(0.0..=1.0).contains(&self.density) {
            return Err(Error::Precondition(format!(
                "density must lie in [0, 1], got {}",
                self.density
            )));
        }
        if !(self.diag_boost > 0.0 && self.diag_boost.is_finite()) {
            return Err(Error::Precondition(format!(
                "diag_boost must be positive, got {}",
                self.diag_boost
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    None,
    Constant,
    Piecewise,
}

/// How latent confounder values evolve over replicates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentSpec {
    pub regime: Regime,
    /// Last replicate (1-based) of the first segment; `floor(T/2)` when unset.
    pub changepoint: Option<usize>,
}

impl LatentSpec {
    pub fn none() -> Self {
        Self {
            regime: Regime::None,
            changepoint: None,
        }
    }

    pub fn constant() -> Self {
        Self {
            regime: Regime::Constant,
            changepoint: None,
        }
    }

    pub fn piecewise() -> Self {
        Self {
            regime: Regime::Piecewise,
            changepoint: None,
        }
    }

    /// Resolved changepoint for `t` replicates.
    pub fn changepoint_for(&self, t: usize) -> Result<usize> {
        let c = self.changepoint.unwrap_or(t / 2);
        if self.regime == Regime::Piecewise && !(c >= 1 && c < t) {
            return Err(Error::Precondition(format!(
                "changepoint {c} must satisfy 1 <= c < T={t}"
            )));
        }
        Ok(c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransitionKind {
    None,
    Diagonal,
    Sparse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionSpec {
    pub kind: TransitionKind,
    pub diag_value: f64,
    /// Fraction of all `p²` entries made nonzero.
    pub sparse_density: f64,
    pub sparse_value: f64,
    pub seed: u64,
}

impl TransitionSpec {
    pub fn new(kind: TransitionKind, seed: u64) -> Self {
        Self {
            kind,
            diag_value: 0.9,
            sparse_density: 0.05,
            sparse_value: 0.3,
            seed,
        }
    }
}

/// Ground truth behind a simulated dataset. `theta` and `sigma` are the full
/// `(p+q)`-dimensional matrices with the observed block first.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTruth {
    pub p: usize,
    pub q: usize,
    pub theta: Array2<f64>,
    pub sigma: Array2<f64>,
    pub transition: Array2<f64>,
    /// Latent values per `(subject, replicate, confounder)` once sampled.
    pub latent: Option<Array3<f64>>,
}

impl SimTruth {
    pub fn from_precision(prec: Precision, transition: Array2<f64>) -> Self {
        Self {
            p: prec.p,
            q: prec.q,
            theta: prec.theta,
            sigma: prec.sigma,
            transition,
            latent: None,
        }
    }

    pub fn theta_xx(&self) -> Array2<f64> {
        self.theta.slice(s![..self.p, ..self.p]).to_owned()
    }

    pub fn sigma_xx(&self) -> Array2<f64> {
        self.sigma.slice(s![..self.p, ..self.p]).to_owned()
    }

    pub fn sigma_xu(&self) -> Array2<f64> {
        self.sigma.slice(s![..self.p, self.p..]).to_owned()
    }

    pub fn sigma_uu(&self) -> Array2<f64> {
        self.sigma.slice(s![self.p.., self.p..]).to_owned()
    }

    /// True edges `(j, k)`, 0-based with `j < k`: the off-diagonal support of
    /// the observed precision block.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for j in 0..self.p {
            for k in j + 1..self.p {
                if self.theta[[j, k]] != 0.0 {
                    out.push((j, k));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    Ar1Diagonal,
    Ar1Sparse,
    LatentConstant,
    LatentPiecewise,
    CombinedConstant,
    CombinedPiecewise,
    Ising,
}

impl Scenario {
    pub const ALL: [Scenario; 7] = [
        Scenario::Ar1Diagonal,
        Scenario::Ar1Sparse,
        Scenario::LatentConstant,
        Scenario::LatentPiecewise,
        Scenario::CombinedConstant,
        Scenario::CombinedPiecewise,
        Scenario::Ising,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Scenario::Ar1Diagonal => "ar1-diagonal",
            Scenario::Ar1Sparse => "ar1-sparse",
            Scenario::LatentConstant => "latent-constant",
            Scenario::LatentPiecewise => "latent-piecewise",
            Scenario::CombinedConstant => "combined-constant",
            Scenario::CombinedPiecewise => "combined-piecewise",
            Scenario::Ising => "ising",
        }
    }

    pub fn has_latent(&self) -> bool {
        !matches!(self, Scenario::Ar1Diagonal | Scenario::Ar1Sparse)
    }

    pub fn transition_kind(&self) -> TransitionKind {
        match self {
            Scenario::Ar1Diagonal | Scenario::Ising => TransitionKind::Diagonal,
            Scenario::Ar1Sparse | Scenario::CombinedConstant | Scenario::CombinedPiecewise => {
                TransitionKind::Sparse
            }
            Scenario::LatentConstant | Scenario::LatentPiecewise => TransitionKind::None,
        }
    }

    pub fn latent_spec(&self) -> LatentSpec {
        match self {
            Scenario::Ar1Diagonal | Scenario::Ar1Sparse => LatentSpec::none(),
            Scenario::LatentConstant | Scenario::CombinedConstant => LatentSpec::constant(),
            Scenario::LatentPiecewise | Scenario::CombinedPiecewise | Scenario::Ising => {
                LatentSpec::piecewise()
            }
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown scenario '{s}'")))
    }
}

/// Sizes and sampler settings for [`simulate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub scenario: Scenario,
    pub n: usize,
    pub t: usize,
    pub p: usize,
    pub q: usize,
    pub seed: u64,
    pub gibbs: GibbsSettings,
}

impl SimConfig {
    pub fn new(scenario: Scenario, n: usize, t: usize, p: usize, q: usize, seed: u64) -> Self {
        Self {
            scenario,
            n,
            t,
            p,
            q,
            seed,
            gibbs: GibbsSettings::default(),
        }
    }
}

/// Generates the structure and then the data of a named scenario. The
/// precision, transition and sampling stages draw from independent seeds
/// derived from `cfg.seed`.
pub fn simulate(cfg: &SimConfig) -> Result<(ReplicateDataset, SimTruth)> {
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (prec_seed, trans_seed, data_seed): (u64, u64, u64) =
        (master.random(), master.random(), master.random());
    let sc = cfg.scenario;
    let q = if sc.has_latent() { cfg.q } else { 0 };
    if sc.has_latent() && q == 0 {
        return Err(Error::Precondition(format!(
            "scenario {sc} needs at least one latent variable"
        )));
    }
    let prec = match sc {
        Scenario::Ising => gen_ising_precision(cfg.p, q, prec_seed)?,
        _ if q > 0 => gen_partitioned(&PrecisionSpec::new(cfg.p, 0.1, 0.3, 0.2, prec_seed), q)?,
        _ => gen_precision(&PrecisionSpec::new(cfg.p, 0.1, 0.3, 0.1, prec_seed))?,
    };
    let transition = gen_transition(&TransitionSpec::new(sc.transition_kind(), trans_seed), cfg.p)?;
    let truth = SimTruth::from_precision(prec, transition);
    let latent = sc.latent_spec();
    match sc {
        Scenario::Ising => gen_ising_gibbs(cfg.n, cfg.t, &truth, &latent, &cfg.gibbs, data_seed),
        _ => gen_gaussian(cfg.n, cfg.t, &truth, &latent, data_seed),
    }
}

pub(crate) fn to_dmatrix(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |r, c| a[[r, c]])
}

pub(crate) fn from_dmatrix(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(r, c)| m[(r, c)])
}

pub(crate) fn min_eigenvalue(a: &Array2<f64>) -> f64 {
    to_dmatrix(a).symmetric_eigenvalues().min()
}
