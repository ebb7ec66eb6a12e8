//! Per-node regression designs, block state and the full-problem
//! optimality check shared by both solvers.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ShapeBuilder};

use crate::error::{Error, Result};
use crate::family::NodeFamily;
use crate::fused::FusedBasis;
use crate::lasso::{self, LsSettings, LsSolution, PenalizedLsProblem};
use crate::model::{NodeFit, PenaltyConfig, ReplicateDataset};

/// Column-major copies of the stacked observation and lag matrices, shared
/// by every node of a dataset.
#[derive(Debug, Clone)]
pub struct DatasetDesign {
    n: usize,
    t: usize,
    stacked: Array2<f64>,
    lags: Array2<f64>,
}

impl DatasetDesign {
    pub fn new(d: &ReplicateDataset) -> Self {
        let (n, t, p) = (d.n(), d.t(), d.p());
        let mut stacked = Array2::zeros((n * t, p).f());
        stacked.assign(&d.stacked());
        let mut lags = Array2::zeros((n * t, p).f());
        lags.assign(&d.stacked_lags());
        Self {
            n,
            t,
            stacked,
            lags,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn p(&self) -> usize {
        self.stacked.ncols()
    }

    pub fn rows(&self) -> usize {
        self.stacked.nrows()
    }

    pub fn node(&self, j: usize) -> Result<NodeDesign<'_>> {
        let p = self.p();
        if j >= p {
            return Err(Error::InvalidDimension(format!(
                "node {j} out of range for p={p}"
            )));
        }
        let mut others = Array2::zeros((self.rows(), p - 1).f());
        for (dst, k) in (0..p).filter(|&k| k != j).enumerate() {
            others.column_mut(dst).assign(&self.stacked.column(k));
        }
        Ok(NodeDesign {
            j,
            n: self.n,
            t: self.t,
            response: self.stacked.column(j),
            others,
            lags: self.lags.view(),
        })
    }
}

/// Response and predictors of a single node regression.
#[derive(Debug, Clone)]
pub struct NodeDesign<'a> {
    pub j: usize,
    pub n: usize,
    pub t: usize,
    pub response: ArrayView1<'a, f64>,
    /// The other `p - 1` current-replicate variables.
    pub others: Array2<f64>,
    /// All `p` variables at the previous replicate (zero at the first).
    pub lags: ArrayView2<'a, f64>,
}

impl NodeDesign<'_> {
    pub fn rows(&self) -> usize {
        self.response.len()
    }

    pub fn p(&self) -> usize {
        self.lags.ncols()
    }
}

/// Current iterate of the three coefficient blocks plus an optional
/// intercept, with cached partial linear predictors.
#[derive(Debug, Clone)]
pub struct NodeState {
    pub theta: Array1<f64>,
    pub alpha: Array1<f64>,
    pub h: Array1<f64>,
    pub intercept: f64,
    pub fit_theta: Array1<f64>,
    pub fit_alpha: Array1<f64>,
    pub delta: Array1<f64>,
}

impl NodeState {
    pub fn zeros(design: &NodeDesign<'_>) -> Self {
        let rows = design.rows();
        Self {
            theta: Array1::zeros(design.p() - 1),
            alpha: Array1::zeros(design.p()),
            h: Array1::zeros(rows),
            intercept: 0.0,
            fit_theta: Array1::zeros(rows),
            fit_alpha: Array1::zeros(rows),
            delta: Array1::zeros(rows),
        }
    }

    /// State seeded from an earlier fit, honoring the drop switches.
    pub fn from_fit(
        design: &NodeDesign<'_>,
        basis: &FusedBasis,
        cfg: &PenaltyConfig,
        fit: &NodeFit,
    ) -> Result<Self> {
        let mut st = Self::zeros(design);
        if fit.theta.len() != st.theta.len() || fit.alpha.len() != st.alpha.len() {
            return Err(Error::LengthMismatch {
                expected: st.theta.len(),
                got: fit.theta.len(),
            });
        }
        if fit.h.len() != st.h.len() {
            return Err(Error::LengthMismatch {
                expected: st.h.len(),
                got: fit.h.len(),
            });
        }
        st.theta.assign(&fit.theta);
        if !cfg.drop_alpha {
            st.alpha.assign(&fit.alpha);
        }
        if !cfg.drop_delta {
            st.h.assign(&fit.h);
        }
        st.intercept = fit.intercept;
        st.refresh(design, basis)?;
        Ok(st)
    }

    pub fn refresh(&mut self, design: &NodeDesign<'_>, basis: &FusedBasis) -> Result<()> {
        self.fit_theta = design.others.dot(&self.theta);
        self.fit_alpha = design.lags.dot(&self.alpha);
        self.delta = basis.from_h(self.h.view())?;
        Ok(())
    }

    pub fn linear_predictor(&self) -> Array1<f64> {
        let mut eta = &self.fit_theta + &self.fit_alpha + &self.delta;
        if self.intercept != 0.0 {
            eta += self.intercept;
        }
        eta
    }
}

/// Which blocks an outer iteration updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockPlan {
    pub theta: bool,
    pub alpha: bool,
    pub delta: bool,
    pub intercept: bool,
}

impl BlockPlan {
    pub fn for_config(cfg: &PenaltyConfig, intercept: bool) -> Self {
        Self {
            theta: true,
            alpha: !cfg.drop_alpha,
            delta: !cfg.drop_delta,
            intercept,
        }
    }

    /// Only the latent block, with the coefficient blocks frozen.
    pub fn delta_only() -> Self {
        Self {
            theta: false,
            alpha: false,
            delta: true,
            intercept: false,
        }
    }
}

pub fn penalty_value(state: &NodeState, cfg: &PenaltyConfig, basis: &FusedBasis) -> f64 {
    let l1 = |v: &Array1<f64>| v.iter().map(|x| x.abs()).sum::<f64>();
    cfg.lambda * l1(&state.theta)
        + cfg.beta * l1(&state.alpha)
        + cfg.gamma * basis.difference_norm(state.h.view())
}

/// Subject `i`'s slice of a stacked length-`nT` vector.
pub fn subject_slice(resid: &Array1<f64>, t: usize, i: usize) -> ArrayView1<'_, f64> {
    resid.slice(s![i * t..(i + 1) * t])
}

/// Largest violation of the subgradient optimality conditions of the full
/// node problem at `fit`, using the exact conditional mean of `family`.
///
/// The smooth part is `(1/nT) sum (D(eta) - x eta)`, whose gradient in
/// `eta` is `(D'(eta) - x) / nT`; for the Gaussian family this coincides
/// with the squared-error form.
pub fn full_kkt_residual(
    design: &NodeDesign<'_>,
    family: &NodeFamily,
    cfg: &PenaltyConfig,
    basis: &FusedBasis,
    fit: &NodeFit,
    with_intercept: bool,
) -> Result<f64> {
    let state = NodeState::from_fit(design, basis, cfg, fit)?;
    let eta = state.linear_predictor();
    let rows = design.rows() as f64;
    let grad = Array1::from_iter(
        eta.iter()
            .zip(design.response.iter())
            .map(|(&e, &x)| (family.mean(e) - x) / rows),
    );
    let coord = |g: f64, b: f64, pen: f64| -> f64 {
        if b == 0.0 {
            (g.abs() - pen).max(0.0)
        } else {
            (g + pen * b.signum()).abs()
        }
    };
    let mut worst = 0.0f64;
    for (k, col) in design.others.columns().into_iter().enumerate() {
        worst = worst.max(coord(col.dot(&grad), state.theta[k], cfg.lambda));
    }
    if !cfg.drop_alpha {
        for (k, col) in design.lags.columns().into_iter().enumerate() {
            worst = worst.max(coord(col.dot(&grad), state.alpha[k], cfg.beta));
        }
    }
    if !cfg.drop_delta {
        let minv = basis.block_inverse();
        let t = design.t;
        for i in 0..design.n {
            let g_i = minv.t().dot(&subject_slice(&grad, t, i));
            for r in 0..t {
                let b = state.h[basis.h_index(i, r)];
                let v = if r + 1 < t {
                    coord(g_i[r], b, cfg.gamma)
                } else {
                    g_i[r].abs()
                };
                worst = worst.max(v);
            }
        }
    }
    if with_intercept {
        worst = worst.max(grad.sum().abs());
    }
    Ok(worst)
}

/// Solves one coefficient block: `(L / 2N) ||resp - X b||² + penalty ||b||_1`
/// warm-started at `warm`.
pub(crate) fn coefficient_block(
    x: ArrayView2<'_, f64>,
    resp: ArrayView1<'_, f64>,
    lipschitz: f64,
    penalty: f64,
    warm: ArrayView1<'_, f64>,
    inner: &LsSettings,
) -> Result<LsSolution> {
    let problem = PenalizedLsProblem::new(x, resp, lipschitz, penalty).with_warm_start(warm);
    lasso::solve(&problem, inner)
}

/// Solves the latent block subject by subject. The stacked problem
/// `(L / 2nT) ||resp - C̃⁻¹ h||² + gamma ||h_diff||_1` separates over
/// subjects, each a `T x T` lasso whose sum coordinate is unpenalized.
/// Returns the new `h`, the matching latent effects, and whether every
/// subject problem converged.
pub(crate) fn latent_block(
    basis: &FusedBasis,
    resp: &Array1<f64>,
    lipschitz: f64,
    gamma: f64,
    warm_h: &Array1<f64>,
    inner: &LsSettings,
) -> Result<(Array1<f64>, Array1<f64>, bool)> {
    let (n, t) = (basis.n(), basis.t());
    let minv = basis.block_inverse();
    let weights = basis.block_weights();
    // c = L / (nT) with N = T rows per subject
    let scale = lipschitz / n as f64;
    let mut h = warm_h.clone();
    let mut delta = Array1::zeros(n * t);
    let mut converged = true;
    for i in 0..n {
        let warm = basis.subject_block(warm_h.view(), i);
        let problem = PenalizedLsProblem::new(minv.view(), subject_slice(resp, t, i), scale, gamma)
            .with_weights(weights.clone())
            .with_warm_start(warm.view());
        let sol = lasso::solve(&problem, inner)?;
        converged &= sol.converged;
        basis.set_subject_block(&mut h, i, sol.coef.view());
        delta
            .slice_mut(s![i * t..(i + 1) * t])
            .assign(&minv.dot(&sol.coef));
    }
    Ok((h, delta, converged))
}

/// Squared Euclidean distance between two iterates of a block.
pub(crate) fn sq_change(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
