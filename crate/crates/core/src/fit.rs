//! Family dispatch and all-node fitting.

use rayon::prelude::*;

use crate::design::{BlockPlan, DatasetDesign, NodeState};
use crate::error::{Error, Result};
use crate::family::NodeFamily;
use crate::fused::FusedBasis;
use crate::gaussian::{check_inputs, fit_design_gaussian, BcdSettings};
use crate::glm::{fit_design_glm, GgdSettings};
use crate::model::{Family, NodeFit, PenaltyConfig, ReplicateDataset};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub family: NodeFamily,
    pub bcd: BcdSettings,
    pub ggd: GgdSettings,
}

impl FitOptions {
    pub fn for_family(family: Family) -> Self {
        Self {
            family: NodeFamily::for_family(family),
            bcd: BcdSettings::default(),
            ggd: GgdSettings::default(),
        }
    }

    /// Sets the outer stopping constant of whichever solver runs.
    pub fn with_tol(mut self, tol: f64) -> Self {
        self.bcd.tol = tol;
        self.ggd.tol = tol;
        self
    }

    fn intercept(&self) -> bool {
        self.family.family != Family::Gaussian && self.ggd.fit_intercept
    }
}

fn validate(d: &ReplicateDataset, cfg: &PenaltyConfig, basis: &FusedBasis, opts: &FitOptions) -> Result<()> {
    if d.family() != opts.family.family {
        return Err(Error::FamilyMismatch {
            expected: opts.family.family,
            found: d.family(),
        });
    }
    if d.family() == Family::Gaussian && !d.is_centered() {
        return Err(Error::Precondition(
            "gaussian fits require centered data".into(),
        ));
    }
    check_inputs(d, basis, cfg)
}

fn run_node(
    dd: &DatasetDesign,
    j: usize,
    cfg: &PenaltyConfig,
    basis: &FusedBasis,
    opts: &FitOptions,
    init: Option<&NodeFit>,
    plan: BlockPlan,
) -> Result<NodeFit> {
    let design = dd.node(j)?;
    let state = match init {
        Some(fit) => Some(NodeState::from_fit(&design, basis, cfg, fit)?),
        None => None,
    };
    match opts.family.family {
        Family::Gaussian => fit_design_gaussian(&design, cfg, basis, &opts.bcd, state, plan),
        _ => fit_design_glm(&design, &opts.family, cfg, basis, &opts.ggd, state, plan),
    }
}

/// Fits node `j`, optionally warm-started from an earlier fit of the same node.
pub fn fit_node(
    d: &ReplicateDataset,
    j: usize,
    cfg: &PenaltyConfig,
    basis: &FusedBasis,
    opts: &FitOptions,
    warm: Option<&NodeFit>,
) -> Result<NodeFit> {
    validate(d, cfg, basis, opts)?;
    let dd = DatasetDesign::new(d);
    run_node(&dd, j, cfg, basis, opts, warm, BlockPlan::for_config(cfg, opts.intercept()))
}

fn collect_ordered(results: Vec<Result<NodeFit>>) -> Result<Vec<NodeFit>> {
    results.into_iter().collect()
}

/// Fits every node in parallel. Results are in node order and do not depend
/// on the thread count.
pub fn fit_all_nodes(
    d: &ReplicateDataset,
    cfg: &PenaltyConfig,
    basis: &FusedBasis,
    opts: &FitOptions,
    warm: Option<&[NodeFit]>,
) -> Result<Vec<NodeFit>> {
    validate(d, cfg, basis, opts)?;
    if let Some(w) = warm {
        if w.len() != d.p() {
            return Err(Error::LengthMismatch {
                expected: d.p(),
                got: w.len(),
            });
        }
    }
    let dd = DatasetDesign::new(d);
    let plan = BlockPlan::for_config(cfg, opts.intercept());
    let results: Vec<Result<NodeFit>> = (0..d.p())
        .into_par_iter()
        .map(|j| run_node(&dd, j, cfg, basis, opts, warm.map(|w| &w[j]), plan))
        .collect();
    collect_ordered(results)
}

/// Re-estimates only the latent block of every node on `d` with the graph
/// and lag coefficients (and intercept) of `fits` held fixed.
pub fn refit_latent(
    d: &ReplicateDataset,
    cfg: &PenaltyConfig,
    basis: &FusedBasis,
    opts: &FitOptions,
    fits: &[NodeFit],
) -> Result<Vec<NodeFit>> {
    validate(d, cfg, basis, opts)?;
    if fits.len() != d.p() {
        return Err(Error::LengthMismatch {
            expected: d.p(),
            got: fits.len(),
        });
    }
    let dd = DatasetDesign::new(d);
    let results: Vec<Result<NodeFit>> = (0..d.p())
        .into_par_iter()
        .map(|j| {
            let design = dd.node(j)?;
            let src = &fits[j];
            let mut st = NodeState::zeros(&design);
            if src.theta.len() != st.theta.len() || src.alpha.len() != st.alpha.len() {
                return Err(Error::LengthMismatch {
                    expected: st.theta.len(),
                    got: src.theta.len(),
                });
            }
            st.theta.assign(&src.theta);
            if !cfg.drop_alpha {
                st.alpha.assign(&src.alpha);
            }
            st.intercept = src.intercept;
            st.refresh(&design, basis)?;
            if cfg.drop_delta {
                let mut fit = src.clone();
                fit.delta = st.delta;
                fit.h = st.h;
                return Ok(fit);
            }
            let plan = BlockPlan::delta_only();
            match opts.family.family {
                Family::Gaussian => {
                    fit_design_gaussian(&design, cfg, basis, &opts.bcd, Some(st), plan)
                }
                _ => fit_design_glm(&design, &opts.family, cfg, basis, &opts.ggd, Some(st), plan),
            }
        })
        .collect();
    collect_ordered(results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn data(seed: u64) -> ReplicateDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = Array3::from_shape_fn((4, 5, 5), |_| rng.sample::<f64, _>(StandardNormal));
        ReplicateDataset::new(values, Family::Gaussian)
            .unwrap()
            .center()
            .unwrap()
    }

    #[test]
    fn all_nodes_match_single_node_fits() {
        let d = data(1);
        let basis = FusedBasis::build(4, 5).unwrap();
        let cfg = PenaltyConfig::new(0.05, 0.05, 0.1);
        let opts = FitOptions::for_family(Family::Gaussian);
        let all = fit_all_nodes(&d, &cfg, &basis, &opts, None).unwrap();
        for (j, fit) in all.iter().enumerate() {
            let single = fit_node(&d, j, &cfg, &basis, &opts, None).unwrap();
            assert_eq!(fit.theta, single.theta);
            assert_eq!(fit.delta, single.delta);
        }
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let d = data(2);
        let basis = FusedBasis::build(4, 5).unwrap();
        let cfg = PenaltyConfig::new(0.02, 0.05, 0.1);
        let opts = FitOptions::for_family(Family::Gaussian);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| fit_all_nodes(&d, &cfg, &basis, &opts, None).unwrap())
        };
        let a = run(1);
        let b = run(4);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.theta, y.theta);
            assert_eq!(x.alpha, y.alpha);
            assert_eq!(x.h, y.h);
        }
    }

    #[test]
    fn latent_refit_reproduces_converged_latent_block() {
        let d = data(3);
        let basis = FusedBasis::build(4, 5).unwrap();
        let cfg = PenaltyConfig::new(0.05, 0.05, 0.1);
        let opts = FitOptions::for_family(Family::Gaussian).with_tol(1e-20);
        let fits = fit_all_nodes(&d, &cfg, &basis, &opts, None).unwrap();
        let again = refit_latent(&d, &cfg, &basis, &opts, &fits).unwrap();
        for (a, b) in fits.iter().zip(&again) {
            assert_eq!(a.theta, b.theta);
            for (x, y) in a.delta.iter().zip(b.delta.iter()) {
                assert!((x - y).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn rejects_mismatched_family() {
        let d = data(4);
        let basis = FusedBasis::build(4, 5).unwrap();
        let cfg = PenaltyConfig::new(0.1, 0.1, 0.1);
        let opts = FitOptions::for_family(Family::Ising);
        assert!(matches!(
            fit_all_nodes(&d, &cfg, &basis, &opts, None),
            Err(Error::FamilyMismatch { .. })
        ));
    }
}
