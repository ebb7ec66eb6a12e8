//! Shared domain types: replicate datasets, node families, penalty
//! configurations and per-node fit results.

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pooled means below this magnitude count as centered.
pub const CENTERING_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Gaussian,
    Ising,
    Poisson,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Family::Gaussian => "gaussian",
            Family::Ising => "ising",
            Family::Poisson => "poisson",
        };
        f.write_str(name)
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gaussian" => Ok(Family::Gaussian),
            "ising" => Ok(Family::Ising),
            "poisson" => Ok(Family::Poisson),
            other => Err(Error::Parse(format!("unknown family '{other}'"))),
        }
    }
}

/// `n` subjects observed at `t` replicates each, on `p` variables.
///
/// Values are stored as an `(n, t, p)` array. Every length-`nT` vector in the
/// crate uses subject-major, time-minor order: index `i * t + s` is subject
/// `i`, replicate `s` (both 0-based).
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateDataset {
    values: Array3<f64>,
    family: Family,
    centered: bool,
}

impl ReplicateDataset {
    pub fn new(values: Array3<f64>, family: Family) -> Result<Self> {
        let (n, t, p) = values.dim();
        if n == 0 || t == 0 || p == 0 {
            return Err(Error::InvalidDimension(format!(
                "dataset must be non-empty, got n={n}, T={t}, p={p}"
            )));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!("non-finite value {bad}")));
        }
        match family {
            Family::Gaussian => {}
            Family::Ising => {
                if let Some(bad) = values.iter().find(|&&v| v != 0.0 && v != 1.0) {
                    return Err(Error::InvalidData(format!(
                        "ising data must be 0/1, found {bad}"
                    )));
                }
            }
            Family::Poisson => {
                if let Some(bad) = values.iter().find(|&&v| v < 0.0 || v.fract() != 0.0) {
                    return Err(Error::InvalidData(format!(
                        "poisson data must be nonnegative integers, found {bad}"
                    )));
                }
            }
        }
        let values = if values.is_standard_layout() {
            values
        } else {
            values.as_standard_layout().into_owned()
        };
        Ok(Self {
            values,
            family,
            centered: false,
        })
    }

    pub fn n(&self) -> usize {
        self.values.dim().0
    }

    pub fn t(&self) -> usize {
        self.values.dim().1
    }

    pub fn p(&self) -> usize {
        self.values.dim().2
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn is_centered(&self) -> bool {
        self.centered
    }

    pub fn values(&self) -> &Array3<f64> {
        &self.values
    }

    pub fn value(&self, i: usize, t: usize, j: usize) -> f64 {
        self.values[[i, t, j]]
    }

    /// Per-variable mean pooled over all subjects and replicates.
    pub fn pooled_means(&self) -> Array1<f64> {
        let rows = self.n() * self.t();
        self.stacked()
            .sum_axis(Axis(0))
            .mapv(|s| s / rows as f64)
    }

    /// Subtracts the pooled per-variable mean. Gaussian data only.
    pub fn center(&self) -> Result<Self> {
        if self.family != Family::Gaussian {
            return Err(Error::FamilyMismatch {
                expected: Family::Gaussian,
                found: self.family,
            });
        }
        if self.centered {
            return Ok(self.clone());
        }
        let means = self.pooled_means();
        let mut values = self.values.clone();
        for mut row in values.lanes_mut(Axis(2)) {
            row -= &means;
        }
        Ok(Self {
            values,
            family: self.family,
            centered: true,
        })
    }

    /// Observations stacked into an `nT x p` matrix.
    pub fn stacked(&self) -> ArrayView2<'_, f64> {
        let (n, t, p) = self.values.dim();
        self.values
            .view()
            .into_shape_with_order((n * t, p))
            .expect("standard layout")
    }

    /// Lag design for subject `i` (0-based): row `s` holds the observation at
    /// replicate `s - 1`; row 0 is the zero vector.
    pub fn lag_design(&self, i: usize) -> Array2<f64> {
        let (t, p) = (self.t(), self.p());
        let mut out = Array2::zeros((t, p));
        if t > 1 {
            out.slice_mut(s![1.., ..])
                .assign(&self.values.slice(s![i, ..t - 1, ..]));
        }
        out
    }

    /// All subjects' lag designs stacked into `nT x p`.
    pub fn stacked_lags(&self) -> Array2<f64> {
        let (n, t, p) = self.values.dim();
        let mut out = Array2::zeros((n * t, p));
        for i in 0..n {
            out.slice_mut(s![i * t..(i + 1) * t, ..])
                .assign(&self.lag_design(i));
        }
        out
    }

    /// Response vector of node `j` in subject-major order.
    pub fn node_response(&self, j: usize) -> Array1<f64> {
        self.stacked().column(j).to_owned()
    }

    /// The dataset restricted to the given subjects, in the given order.
    pub fn subset(&self, subjects: &[usize]) -> Result<Self> {
        if subjects.is_empty() {
            return Err(Error::InvalidDimension("empty subject subset".into()));
        }
        if let Some(&bad) = subjects.iter().find(|&&i| i >= self.n()) {
            return Err(Error::InvalidDimension(format!(
                "subject {bad} out of range for n={}",
                self.n()
            )));
        }
        let values = self.values.select(Axis(0), subjects);
        Ok(Self {
            values,
            family: self.family,
            // Keep the parent's centering convention; subsets are not re-centered.
            centered: self.centered,
        })
    }
}

/// Penalty levels for the graph, lag and fused blocks plus the baseline
/// switches that remove a block from the model entirely.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyConfig {
    pub lambda: f64,
    pub beta: f64,
    pub gamma: f64,
    #[serde(default)]
    pub drop_alpha: bool,
    #[serde(default)]
    pub drop_delta: bool,
}

impl PenaltyConfig {
    pub fn new(lambda: f64, beta: f64, gamma: f64) -> Self {
        Self {
            lambda,
            beta,
            gamma,
            drop_alpha: false,
            drop_delta: false,
        }
    }

    pub fn with_drop_alpha(mut self, drop: bool) -> Self {
        self.drop_alpha = drop;
        self
    }

    pub fn with_drop_delta(mut self, drop: bool) -> Self {
        self.drop_delta = drop;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda", self.lambda),
            ("beta", self.beta),
            ("gamma", self.gamma),
        ] {
            if !(v >= 0.0) || v.is_nan() {
                return Err(Error::Precondition(format!(
                    "{name} must be a nonnegative number, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Estimates for one node together with convergence diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeFit {
    /// 0-based node index.
    pub j: usize,
    /// Graph coefficients on the other `p - 1` nodes, in increasing node order.
    pub theta: Array1<f64>,
    /// Lag coefficients on all `p` nodes.
    pub alpha: Array1<f64>,
    /// Latent effects, subject-major.
    pub delta: Array1<f64>,
    /// Transformed latent effects (differences, then per-subject sums).
    pub h: Array1<f64>,
    /// Unpenalized scalar intercept (GLM fits only; zero otherwise).
    #[serde(default)]
    pub intercept: f64,
    pub iterations: usize,
    pub final_objective: f64,
    pub converged: bool,
    /// First outer iteration at which the min-of-block-changes rule would
    /// have stopped.
    pub min_rule_iteration: Option<usize>,
    /// Objective after each outer iteration.
    #[serde(default)]
    pub objective_path: Vec<f64>,
}

impl NodeFit {
    /// Coefficient of node `k` in this node's graph regression.
    pub fn theta_for(&self, k: usize) -> f64 {
        assert_ne!(k, self.j, "no self coefficient");
        if k < self.j {
            self.theta[k]
        } else {
            self.theta[k - 1]
        }
    }

    /// Graph coefficients expanded to length `p` with a zero at `j`.
    pub fn theta_full(&self) -> Array1<f64> {
        let p = self.theta.len() + 1;
        Array1::from_iter((0..p).map(|k| if k == self.j { 0.0 } else { self.theta_for(k) }))
    }
}
