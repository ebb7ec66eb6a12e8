//! Node-conditional exponential families: log-partition `D`, its derivative
//! (the conditional mean) and a curvature bound `L >= sup D''` used by the
//! quadratic majorizer.

use serde::{Deserialize, Serialize};

use crate::model::Family;

/// Default admissible cap on the Poisson linear predictor.
pub const DEFAULT_POISSON_ETA_CAP: f64 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeFamily {
    pub family: Family,
    pub lipschitz: f64,
    /// Largest admissible linear predictor; `None` when unbounded.
    pub eta_cap: Option<f64>,
}

pub fn family_gaussian() -> NodeFamily {
    NodeFamily {
        family: Family::Gaussian,
        lipschitz: 1.0,
        eta_cap: None,
    }
}

/// Logistic node with `L = 1` (the true bound is 1/4).
pub fn family_ising() -> NodeFamily {
    NodeFamily {
        family: Family::Ising,
        lipschitz: 1.0,
        eta_cap: None,
    }
}

/// Poisson node restricted to `eta <= cap`, with `L = exp(cap)`.
pub fn family_poisson(cap: f64) -> NodeFamily {
    NodeFamily {
        family: Family::Poisson,
        lipschitz: cap.exp(),
        eta_cap: Some(cap),
    }
}

impl NodeFamily {
    pub fn for_family(family: Family) -> Self {
        match family {
            Family::Gaussian => family_gaussian(),
            Family::Ising => family_ising(),
            Family::Poisson => family_poisson(DEFAULT_POISSON_ETA_CAP),
        }
    }

    pub fn name(&self) -> String {
        self.family.to_string()
    }

    pub fn with_lipschitz(mut self, l: f64) -> Self {
        self.lipschitz = l;
        self
    }

    pub fn log_partition(&self, eta: f64) -> f64 {
        match self.family {
            Family::Gaussian => 0.5 * eta * eta + 0.5 * (2.0 * std::f64::consts::PI).ln(),
            Family::Ising => softplus(eta),
            Family::Poisson => eta.exp(),
        }
    }

    pub fn mean(&self, eta: f64) -> f64 {
        match self.family {
            Family::Gaussian => eta,
            Family::Ising => sigmoid(eta),
            Family::Poisson => eta.exp(),
        }
    }

    pub fn curvature(&self, eta: f64) -> f64 {
        match self.family {
            Family::Gaussian => 1.0,
            Family::Ising => {
                let s = sigmoid(eta);
                s * (1.0 - s)
            }
            Family::Poisson => eta.exp(),
        }
    }
}

/// `log(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> impl Iterator<Item = f64> {
        (0..=120).map(|k| -6.0 + 0.1 * k as f64)
    }

    #[test]
    fn point_values() {
        let ising = family_ising();
        assert!((ising.log_partition(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(ising.mean(0.0), 0.5);
        let g = family_gaussian();
        for eta in [-1.0, 0.0, 2.0] {
            assert_eq!(g.mean(eta), eta);
        }
        assert_eq!(family_poisson(6.0).mean(0.0), 1.0);
        assert!((family_poisson(6.0).lipschitz - 6f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn mean_matches_finite_difference() {
        let h = 1e-5;
        for fam in [family_gaussian(), family_ising(), family_poisson(6.0)] {
            for eta in grid() {
                let fd = (fam.log_partition(eta + h) - fam.log_partition(eta - h)) / (2.0 * h);
                assert!((fd - fam.mean(eta)).abs() < 1e-6, "{} at {eta}", fam.name());
            }
        }
    }

    #[test]
    fn quadratic_majorization_on_grid() {
        for fam in [family_gaussian(), family_ising(), family_poisson(6.0)] {
            for a in grid() {
                for b in grid() {
                    let upper = fam.log_partition(a)
                        + fam.mean(a) * (b - a)
                        + 0.5 * fam.lipschitz * (b - a) * (b - a);
                    let tol = 1e-12 * (1.0 + upper.abs());
                    assert!(fam.log_partition(b) <= upper + tol, "{} {a} {b}", fam.name());
                }
            }
        }
    }

    #[test]
    fn lipschitz_dominates_curvature() {
        for fam in [family_gaussian(), family_ising(), family_poisson(6.0)] {
            for eta in grid() {
                assert!(fam.curvature(eta) <= fam.lipschitz * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn softplus_stable_at_extremes() {
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
        assert!(softplus(-800.0) >= 0.0 && softplus(-800.0) < 1e-300);
        assert_eq!(sigmoid(-800.0), 0.0);
        assert_eq!(sigmoid(800.0), 1.0);
    }
}
