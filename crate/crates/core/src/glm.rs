//! Majorize-minimize solver for exponential-family nodes.
//!
//! Each outer iteration replaces the smooth loss by its quadratic upper bound
//! with curvature `L` around the current predictor and runs one pass of
//! block updates on the surrogate. Every block step is a penalized least
//! squares problem on the working response `x/L + own fit - D'(eta)/L`.

use ndarray::{Array1, ArrayView1};

use crate::design::{
    coefficient_block, latent_block, penalty_value, sq_change, BlockPlan, DatasetDesign,
    NodeDesign, NodeState,
};
use crate::error::{Error, Result};
use crate::family::NodeFamily;
use crate::fused::FusedBasis;
use crate::gaussian::check_inputs;
use crate::lasso::LsSettings;
use crate::model::{NodeFit, PenaltyConfig, ReplicateDataset};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GgdSettings {
    /// Majorization constant; the family default when `None`.
    pub lipschitz: Option<f64>,
    pub tol: f64,
    pub max_outer: usize,
    pub inner: LsSettings,
    /// Fit an unpenalized common intercept alongside the blocks.
    pub fit_intercept: bool,
}

impl Default for GgdSettings {
    fn default() -> Self {
        Self {
            lipschitz: None,
            tol: 1e-8,
            max_outer: 20_000,
            inner: LsSettings::default(),
            fit_intercept: false,
        }
    }
}

impl GgdSettings {
    pub fn resolve_lipschitz(&self, family: &NodeFamily) -> Result<f64> {
        let l = self.lipschitz.unwrap_or(family.lipschitz);
        if !(l.is_finite() && l > 0.0) {
            return Err(Error::Precondition(format!(
                "majorization constant must be positive and finite, got {l}"
            )));
        }
        Ok(l)
    }
}

/// Working response `x/L + own - D'(eta)/L` for one block.
pub fn surrogate_response(
    x: ArrayView1<'_, f64>,
    own_fit: ArrayView1<'_, f64>,
    eta: ArrayView1<'_, f64>,
    family: &NodeFamily,
    lipschitz: f64,
) -> Array1<f64> {
    Array1::from_iter(
        x.iter()
            .zip(own_fit.iter())
            .zip(eta.iter())
            .map(|((&xv, &f), &e)| xv / lipschitz + f - family.mean(e) / lipschitz),
    )
}

fn check_cap(eta: &Array1<f64>, family: &NodeFamily) -> Result<()> {
    if let Some(cap) = family.eta_cap {
        let top = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if top > cap {
            return Err(Error::Divergence { cap, observed: top });
        }
    }
    Ok(())
}

fn smooth_loss(x: ArrayView1<'_, f64>, eta: &Array1<f64>, family: &NodeFamily) -> f64 {
    let total: f64 = x
        .iter()
        .zip(eta.iter())
        .map(|(&xv, &e)| family.log_partition(e) - xv * e)
        .sum();
    total / x.len() as f64
}

fn state_objective(
    design: &NodeDesign<'_>,
    st: &NodeState,
    family: &NodeFamily,
    cfg: &PenaltyConfig,
    basis: &FusedBasis,
) -> f64 {
    smooth_loss(design.response, &st.linear_predictor(), family) + penalty_value(st, cfg, basis)
}

pub fn fit_node_glm(
    d: &ReplicateDataset,
    j: usize,
    family: &NodeFamily,
    cfg: &PenaltyConfig,
    basis: &FusedBasis,
    settings: &GgdSettings,
) -> Result<NodeFit> {
    if d.family() != family.family {
        return Err(Error::FamilyMismatch {
            expected: family.family,
            found: d.family(),
        });
    }
    check_inputs(d, basis, cfg)?;
    let dd = DatasetDesign::new(d);
    let design = dd.node(j)?;
    let plan = BlockPlan::for_config(cfg, settings.fit_intercept);
    fit_design_glm(&design, family, cfg, basis, settings, None, plan)
}

pub fn fit_design_glm(
    design: &NodeDesign<'_>,
    family: &NodeFamily,
    cfg: &PenaltyConfig,
    basis: &FusedBasis,
    settings: &GgdSettings,
    init: Option<NodeState>,
    plan: BlockPlan,
) -> Result<NodeFit> {
    let l = settings.resolve_lipschitz(family)?;
    let x = design.response;
    let mut st = init.unwrap_or_else(|| NodeState::zeros(design));
    let mut eta = st.linear_predictor();
    check_cap(&eta, family)?;

    let mut objective_path = Vec::new();
    let mut min_rule_iteration = None;
    let mut converged = false;
    let mut inner_ok = true;
    let mut iterations = 0;

    while iterations < settings.max_outer {
        iterations += 1;
        let mut changes: Vec<f64> = Vec::with_capacity(4);

        if plan.theta {
            let resp = surrogate_response(x, st.fit_theta.view(), eta.view(), family, l);
            let sol = coefficient_block(
                design.others.view(),
                resp.view(),
                l,
                cfg.lambda,
                st.theta.view(),
                &settings.inner,
            )?;
            inner_ok &= sol.converged;
            changes.push(sq_change(&sol.coef, &st.theta));
            st.theta = sol.coef;
            st.fit_theta = design.others.dot(&st.theta);
            eta = st.linear_predictor();
            check_cap(&eta, family)?;
        }
        if plan.alpha {
            let resp = surrogate_response(x, st.fit_alpha.view(), eta.view(), family, l);
            let sol = coefficient_block(
                design.lags,
                resp.view(),
                l,
                cfg.beta,
                st.alpha.view(),
                &settings.inner,
            )?;
            inner_ok &= sol.converged;
            changes.push(sq_change(&sol.coef, &st.alpha));
            st.alpha = sol.coef;
            st.fit_alpha = design.lags.dot(&st.alpha);
            eta = st.linear_predictor();
            check_cap(&eta, family)?;
        }
        if plan.delta {
            let resp = surrogate_response(x, st.delta.view(), eta.view(), family, l);
            let (h, delta, ok) = latent_block(basis, &resp, l, cfg.gamma, &st.h, &settings.inner)?;
            inner_ok &= ok;
            changes.push(sq_change(&h, &st.h));
            st.h = h;
            st.delta = delta;
            eta = st.linear_predictor();
            check_cap(&eta, family)?;
        }
        if plan.intercept {
            let step = x
                .iter()
                .zip(eta.iter())
                .map(|(&xv, &e)| xv - family.mean(e))
                .sum::<f64>()
                / (x.len() as f64 * l);
            st.intercept += step;
            changes.push(step * step);
            eta = st.linear_predictor();
            check_cap(&eta, family)?;
        }

        objective_path.push(state_objective(design, &st, family, cfg, basis));

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
        intercept: st.intercept,
        iterations,
        final_objective: objective_path.last().copied().unwrap_or(f64::NAN),
        converged: converged && inner_ok,
        min_rule_iteration,
        objective_path,
    })
}

/// Penalized negative log-likelihood `(1/nT) sum (D(eta) - x eta) + penalties`.
#[allow(clippy::too_many_arguments)]
pub fn objective_glm(
    d: &ReplicateDataset,
    j: usize,
    family: &NodeFamily,
    theta: &Array1<f64>,
    alpha: &Array1<f64>,
    h: &Array1<f64>,
    intercept: f64,
    cfg: &PenaltyConfig,
    basis: &FusedBasis,
) -> Result<f64> {
    check_inputs(d, basis, cfg)?;
    let dd = DatasetDesign::new(d);
    let design = dd.node(j)?;
    let mut st = NodeState::zeros(&design);
    for (dst, src) in [(&mut st.theta, theta), (&mut st.alpha, alpha), (&mut st.h, h)] {
        if dst.len() != src.len() {
            return Err(Error::LengthMismatch {
                expected: dst.len(),
                got: src.len(),
            });
        }
        dst.assign(src);
    }
    st.intercept = intercept;
    st.refresh(&design, basis)?;
    Ok(state_objective(&design, &st, family, cfg, basis))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::full_kkt_residual;
    use crate::family::{family_gaussian, family_ising, family_poisson, sigmoid};
    use crate::gaussian::{fit_node_gaussian, objective_gaussian, BcdSettings};
    use crate::model::Family;
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_binary(n: usize, t: usize, p: usize, seed: u64) -> ReplicateDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = Array3::from_shape_fn((n, t, p), |_| f64::from(rng.random_bool(0.4)));
        ReplicateDataset::new(values, Family::Ising).unwrap()
    }

    fn tight() -> GgdSettings {
        GgdSettings {
            tol: 1e-22,
            max_outer: 200_000,
            inner: LsSettings {
                tol: 1e-13,
                max_sweeps: 1_000_000,
            },
            ..GgdSettings::default()
        }
    }

    #[test]
    fn first_ising_residual_is_centered_response() {
        let d = random_binary(2, 3, 3, 4);
        let x = d.node_response(0);
        let zeros = Array1::zeros(x.len());
        let r = surrogate_response(x.view(), zeros.view(), zeros.view(), &family_ising(), 1.0);
        for (rv, xv) in r.iter().zip(x.iter()) {
            assert_eq!(*rv, xv - 0.5);
        }
    }

    #[test]
    fn gaussian_family_matches_block_solver() {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let values = Array3::from_shape_fn((3, 5, 4), |_| rng.sample::<f64, _>(StandardNormal));
            let d = ReplicateDataset::new(values, Family::Gaussian)
                .unwrap()
                .center()
                .unwrap();
            let basis = FusedBasis::build(3, 5).unwrap();
            let cfg = PenaltyConfig::new(0.05, 0.1, 0.1);
            let glm = fit_node_glm(&d, 1, &family_gaussian(), &cfg, &basis, &tight()).unwrap();
            let bcd_settings = BcdSettings {
                tol: 1e-22,
                max_outer: 200_000,
                inner: tight().inner,
            };
            let bcd = fit_node_gaussian(&d, 1, &cfg, &basis, &bcd_settings).unwrap();
            let a = objective_gaussian(&d, 1, &glm.theta, &glm.alpha, &glm.h, &cfg, &basis).unwrap();
            let b = objective_gaussian(&d, 1, &bcd.theta, &bcd.alpha, &bcd.h, &cfg, &basis).unwrap();
            assert!((a - b).abs() < 1e-6, "seed {seed}: {a} vs {b}");
        }
    }

    /// Scalar logistic MLE by bisection: sigmoid(s) = target.
    fn bisect_logit(target: f64) -> f64 {
        let (mut lo, mut hi) = (-50.0, 50.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if sigmoid(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn huge_penalties_give_subject_logits() {
        let (n, t) = (3, 4);
        // each subject's node-0 mean strictly inside (0, 1)
        let mut values = Array3::zeros((n, t, 2));
        let ones = [1, 2, 3];
        for i in 0..n {
            for s in 0..ones[i] {
                values[[i, s, 0]] = 1.0;
            }
            values[[i, i % t, 1]] = 1.0;
        }
        let d = ReplicateDataset::new(values, Family::Ising).unwrap();
        let basis = FusedBasis::build(n, t).unwrap();
        let cfg = PenaltyConfig::new(1e6, 1e6, 1e6);
        let fit = fit_node_glm(&d, 0, &family_ising(), &cfg, &basis, &tight()).unwrap();
        assert!(fit.converged);
        assert!(fit.theta.iter().all(|&v| v == 0.0));
        assert!(fit.alpha.iter().all(|&v| v == 0.0));
        assert!(fit.h.iter().take(basis.n_differences()).all(|&v| v == 0.0));
        for i in 0..n {
            let level = bisect_logit(ones[i] as f64 / t as f64);
            let s = fit.h[basis.h_index(i, t - 1)];
            assert!((s / t as f64 - level).abs() < 1e-6, "subject {i}");
        }
    }

    #[test]
    fn ising_monotone_and_stationary() {
        for seed in 0..6 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (n, t, p) = (rng.random_range(1..5), rng.random_range(2..6), rng.random_range(2..6));
            let d = random_binary(n, t, p, 50 + seed);
            let basis = FusedBasis::build(n, t).unwrap();
            let cfg = PenaltyConfig::new(0.05, 0.05, 0.1);
            let j = rng.random_range(0..p);
            let settings = GgdSettings {
                tol: 1e-14,
                ..GgdSettings::default()
            };
            let fit = fit_node_glm(&d, j, &family_ising(), &cfg, &basis, &settings).unwrap();
            for w in fit.objective_path.windows(2) {
                assert!(w[1] <= w[0] + 1e-10);
            }
            let dd = DatasetDesign::new(&d);
            let design = dd.node(j).unwrap();
            let kkt = full_kkt_residual(&design, &family_ising(), &cfg, &basis, &fit, false).unwrap();
            assert!(kkt < 1e-4, "seed {seed}: {kkt}");
        }
    }

    #[test]
    fn intercept_absorbs_overall_rate() {
        let d = random_binary(2, 3, 3, 9);
        let basis = FusedBasis::build(2, 3).unwrap();
        let cfg = PenaltyConfig::new(1e6, 1e6, 0.0).with_drop_delta(true);
        let settings = GgdSettings {
            fit_intercept: true,
            ..tight()
        };
        let fit = fit_node_glm(&d, 2, &family_ising(), &cfg, &basis, &settings).unwrap();
        let x = d.node_response(2);
        let rate = x.sum() / x.len() as f64;
        assert!((fit.intercept - bisect_logit(rate)).abs() < 1e-6);
    }

    #[test]
    fn poisson_breach_reports_cap() {
        let mut values = Array3::zeros((1, 3, 2));
        values[[0, 0, 0]] = 5000.0;
        values[[0, 1, 0]] = 5000.0;
        values[[0, 2, 0]] = 5000.0;
        let d = ReplicateDataset::new(values, Family::Poisson).unwrap();
        let basis = FusedBasis::build(1, 3).unwrap();
        let cfg = PenaltyConfig::new(1.0, 1.0, 1.0);
        let err = fit_node_glm(&d, 0, &family_poisson(6.0), &cfg, &basis, &GgdSettings::default())
            .unwrap_err();
        assert!(matches!(err, Error::Divergence { cap, .. } if cap == 6.0));
    }

    #[test]
    fn family_must_match() {
        let d = random_binary(1, 3, 2, 1);
        let basis = FusedBasis::build(1, 3).unwrap();
        let cfg = PenaltyConfig::new(1.0, 1.0, 1.0);
        assert!(matches!(
            fit_node_glm(&d, 0, &family_poisson(6.0), &cfg, &basis, &GgdSettings::default()),
            Err(Error::FamilyMismatch { .. })
        ));
    }
}
