//! Block coordinate descent for the Gaussian node problem
//!
//! `(1/2nT) ||x_j - eta||² + lambda ||theta||_1 + beta ||alpha||_1 + gamma ||H_diff||_1`
//!
//! with `eta = X_{-j} theta + X_lag alpha + C̃⁻¹ H`. Each block is an exact
//! lasso minimization given the other two.

use ndarray::Array1;

use crate::design::{
    coefficient_block, latent_block, penalty_value, sq_change, BlockPlan, DatasetDesign,
    NodeDesign, NodeState,
};
use crate::error::{Error, Result};
use crate::fused::FusedBasis;
use crate::lasso::LsSettings;
use crate::model::{Family, NodeFit, PenaltyConfig, ReplicateDataset};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BcdSettings {
    /// Stop once every block's squared change over one outer iteration is
    /// at most this.
    pub tol: f64,
    pub max_outer: usize,
    pub inner: LsSettings,
}

impl Default for BcdSettings {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_outer: 5_000,
            inner: LsSettings::default(),
        }
    }
}

pub(crate) fn check_inputs(
    d: &ReplicateDataset,
    basis: &FusedBasis,
    cfg: &PenaltyConfig,
) -> Result<()> {
    cfg.validate()?;
    if basis.n() != d.n() || basis.t() != d.t() {
        return Err(Error::InvalidDimension(format!(
            "basis built for n={}, T={} but dataset has n={}, T={}",
            basis.n(),
            basis.t(),
            d.n(),
            d.t()
        )));
    }
    if d.p() < 2 {
        return Err(Error::InvalidDimension("need at least two variables".into()));
    }
    Ok(())
}

pub fn fit_node_gaussian(
    d: &ReplicateDataset,
    j: usize,
    cfg: &PenaltyConfig,
    basis: &FusedBasis,
    settings: &BcdSettings,
) -> Result<NodeFit> {
    if d.family() != Family::Gaussian {
        return Err(Error::FamilyMismatch {
            expected: Family::Gaussian,
            found: d.family(),
        });
    }
    if !d.is_centered() {
        return Err(Error::Precondition(
            "gaussian fits require centered data".into(),
        ));
    }
    check_inputs(d, basis, cfg)?;
    let dd = DatasetDesign::new(d);
    let design = dd.node(j)?;
    fit_design_gaussian(&design, cfg, basis, settings, None, BlockPlan::for_config(cfg, false))
}

/// Runs the block iteration on a prepared design, optionally from an initial
/// state and updating only the blocks in `plan`.
pub fn fit_design_gaussian(
    design: &NodeDesign<'_>,
    cfg: &PenaltyConfig,
    basis: &FusedBasis,
    settings: &BcdSettings,
    init: Option<NodeState>,
    plan: BlockPlan,
) -> Result<NodeFit> {
    let mut st = init.unwrap_or_else(|| NodeState::zeros(design));
    let x = design.response;
    let mut objective_path = Vec::new();
    let mut min_rule_iteration = None;
    let mut converged = false;
    let mut inner_ok = true;
    let mut iterations = 0;

    while iterations < settings.max_outer {
        iterations += 1;
        let mut changes: Vec<f64> = Vec::with_capacity(3);

        if plan.theta {
            let resp = &x - &st.fit_alpha - &st.delta;
            let sol = coefficient_block(
                design.others.view(),
                resp.view(),
                1.0,
                cfg.lambda,
                st.theta.view(),
                &settings.inner,
            )?;
            inner_ok &= sol.converged;
            changes.push(sq_change(&sol.coef, &st.theta));
            st.theta = sol.coef;
            st.fit_theta = design.others.dot(&st.theta);
        }
        if plan.alpha {
            let resp = &x - &st.fit_theta - &st.delta;
            let sol = coefficient_block(
                design.lags,
                resp.view(),
                1.0,
                cfg.beta,
                st.alpha.view(),
                &settings.inner,
            )?;
            inner_ok &= sol.converged;
            changes.push(sq_change(&sol.coef, &st.alpha));
            st.alpha = sol.coef;
            st.fit_alpha = design.lags.dot(&st.alpha);
        }
        if plan.delta {
            let resp = &x - &st.fit_theta - &st.fit_alpha;
            let (h, delta, ok) =
                latent_block(basis, &resp, 1.0, cfg.gamma, &st.h, &settings.inner)?;
            inner_ok &= ok;
            changes.push(sq_change(&h, &st.h));
            st.h = h;
            st.delta = delta;
        }

        objective_path.push(state_objective(design, &st, cfg, basis));

        let max_change = changes.iter().copied().fold(0.0, f64::max);
        let min_change = changes.iter().copied().fold(f64::INFINITY, f64::min);
        if min_rule_iteration.is_none() && min_change <= settings.tol {
            min_rule_iteration = Some(iterations);
        }
        if max_change <= settings.tol {
            converged = true;
            break;
        }
    }

    Ok(NodeFit {
        j: design.j,
        theta: st.theta,
        alpha: st.alpha,
        delta: st.delta,
        h: st.h,
        intercept: 0.0,
        iterations,
        final_objective: objective_path.last().copied().unwrap_or(f64::NAN),
        converged: converged && inner_ok,
        min_rule_iteration,
        objective_path,
    })
}

fn state_objective(
    design: &NodeDesign<'_>,
    st: &NodeState,
    cfg: &PenaltyConfig,
    basis: &FusedBasis,
) -> f64 {
    let resid = &design.response - &st.linear_predictor();
    resid.dot(&resid) / (2.0 * design.rows() as f64) + penalty_value(st, cfg, basis)
}

/// Exact Gaussian node objective at the given coefficients.
pub fn objective_gaussian(
    d: &ReplicateDataset,
    j: usize,
    theta: &Array1<f64>,
    alpha: &Array1<f64>,
    h: &Array1<f64>,
    cfg: &PenaltyConfig,
    basis: &FusedBasis,
) -> Result<f64> {
    check_inputs(d, basis, cfg)?;
    let dd = DatasetDesign::new(d);
    let design = dd.node(j)?;
    let p = d.p();
    if theta.len() != p - 1 {
        return Err(Error::LengthMismatch {
            expected: p - 1,
            got: theta.len(),
        });
    }
    if alpha.len() != p {
        return Err(Error::LengthMismatch {
            expected: p,
            got: alpha.len(),
        });
    }
    let mut st = NodeState::zeros(&design);
    st.theta.assign(theta);
    st.alpha.assign(alpha);
    if h.len() != st.h.len() {
        return Err(Error::LengthMismatch {
            expected: st.h.len(),
            got: h.len(),
        });
    }
    st.h.assign(h);
    st.refresh(&design, basis)?;
    Ok(state_objective(&design, &st, cfg, basis))
}
