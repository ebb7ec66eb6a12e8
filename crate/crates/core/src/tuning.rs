//! Tuning-parameter selection: reference values from the error-bound
//! theory and the estimation-stability (ES) selector.

use std::f64::consts::PI;

use ndarray::Array1;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{DatasetDesign, NodeState};
use crate::error::{Error, Result};
use crate::fit::{fit_all_nodes, refit_latent, FitOptions};
use crate::fused::FusedBasis;
use crate::model::{NodeFit, PenaltyConfig, ReplicateDataset};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryInputs {
    pub n: usize,
    pub t: usize,
    pub p: usize,
    /// Noise scale bound.
    pub sigma_m: f64,
    /// Largest latent jump plus one.
    pub delta_max: f64,
    /// Largest number of jumps in a latent path.
    pub tau_knots: f64,
    /// Generic multiplier of the fused penalty.
    pub c1_const: f64,
}

impl TheoryInputs {
    pub fn new(n: usize, t: usize, p: usize) -> Self {
        Self {
            n,
            t,
            p,
            sigma_m: 1.0,
            delta_max: 1.0,
            tau_knots: 1.0,
            c1_const: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TheoryMode {
    /// Pick the many-replicates or many-subjects regime from `T` vs `c4² n`.
    Auto,
    /// Rates for data without latent confounding.
    NoConfounder,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GammaMode {
    /// `C1 sigma sqrt(log T / i0) / (n sqrt(T))`.
    Generic,
    /// `2 sigma D / (nT)` with `D = 8 sqrt(T log T / (pi² i0))`.
    Pinned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TheoryBranch {
    ManyReplicates,
    ManySubjects,
    NoConfounder,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryDefaults {
    pub config: PenaltyConfig,
    pub branch: TheoryBranch,
    pub c4: f64,
    pub i0: usize,
}

/// `c4 = (4 log(T) Δmax² τ² / π²)^{1/4}`, natural logarithm.
pub fn c4(inp: &TheoryInputs) -> f64 {
    let t = inp.t as f64;
    (4.0 * t.ln() * inp.delta_max.powi(2) * inp.tau_knots.powi(2) / (PI * PI)).powf(0.25)
}

pub fn theory_defaults(
    inp: &TheoryInputs,
    mode: TheoryMode,
    gamma_mode: GammaMode,
) -> Result<TheoryDefaults> {
    if inp.n < 2 || inp.t < 2 || inp.p < 2 {
        return Err(Error::Precondition("theory defaults need n, T, p >= 2".into()));
    }
    for (name, v) in [
        ("sigma_m", inp.sigma_m),
        ("delta_max", inp.delta_max),
        ("tau", inp.tau_knots),
        ("c1", inp.c1_const),
    ] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::Precondition(format!("{name} must be positive, got {v}")));
        }
    }
    let (n, t, p) = (inp.n as f64, inp.t as f64, inp.p as f64);
    let c4 = c4(inp);
    let logs = 2.0 * t.ln() * (n * t * p).ln();
    let (branch, lambda, i0) = match mode {
        TheoryMode::NoConfounder => (
            TheoryBranch::NoConfounder,
            logs / (n * t).sqrt(),
            (t.ln().floor() as usize).max(1),
        ),
        TheoryMode::Auto if t > c4 * c4 * n => {
            let i0 = ((c4 * t.powf(0.25) * n.sqrt()).powf(4.0 / 3.0).floor() as usize).max(1);
            (
                TheoryBranch::ManyReplicates,
                logs * n.powf(-1.0 / 6.0) * t.powf(-1.0 / 3.0),
                i0,
            )
        }
        TheoryMode::Auto => (TheoryBranch::ManySubjects, logs / t.sqrt(), inp.t - 1),
    };
    let i0f = i0 as f64;
    let gamma = match gamma_mode {
        GammaMode::Generic => inp.c1_const * inp.sigma_m * (t.ln() / i0f).sqrt() / (n * t.sqrt()),
        GammaMode::Pinned => {
            let d = 8.0 * (t * t.ln() / (PI * PI * i0f)).sqrt();
            2.0 * inp.sigma_m * d / (n * t)
        }
    };
    Ok(TheoryDefaults {
        config: PenaltyConfig::new(lambda, lambda, gamma),
        branch,
        c4,
        i0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EsEvaluation {
    /// Predictors on every subject; held-out subjects get a latent-only refit.
    Full,
    /// Predictors only on the subjects each fit was trained on.
    FoldSubjects,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EsSettings {
    pub folds: usize,
    pub seed: u64,
    pub evaluation: EsEvaluation,
    /// Keep every fold's fitted predictors in the result.
    pub keep_predictors: bool,
}

impl Default for EsSettings {
    fn default() -> Self {
        Self {
            folds: 5,
            seed: 0,
            evaluation: EsEvaluation::Full,
            keep_predictors: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EsResult {
    pub grid: Vec<PenaltyConfig>,
    /// Mean of the per-node values for each config.
    pub es: Vec<f64>,
    /// `es_nodes[c][j]`.
    pub es_nodes: Vec<Vec<f64>>,
    pub selected: usize,
    /// Held-out subjects of each fold (0-based, ascending).
    pub held_out: Vec<Vec<usize>>,
    /// `predictors[c][l][j]`, stacked over all `nT` rows; rows a fold does not
    /// cover are NaN. Empty unless requested.
    pub predictors: Vec<Vec<Vec<Array1<f64>>>>,
    pub diagnostics: Vec<String>,
    pub converged: bool,
}

impl EsResult {
    pub fn selected_config(&self) -> PenaltyConfig {
        self.grid[self.selected]
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        let finite = |v: f64| if v.is_finite() { serde_json::json!(v) } else { serde_json::Value::Null };
        serde_json::json!({
            "grid": self.grid,
            "es": self.es.iter().map(|&v| finite(v)).collect::<Vec<_>>(),
            "es_nodes": self
                .es_nodes
                .iter()
                .map(|row| row.iter().map(|&v| finite(v)).collect::<Vec<_>>())
                .collect::<Vec<_>>(),
            "selected_index": self.selected,
            "selected": self.grid[self.selected],
            "held_out": self
                .held_out
                .iter()
                .map(|f| f.iter().map(|i| i + 1).collect::<Vec<_>>())
                .collect::<Vec<_>>(),
            "diagnostics": self.diagnostics,
            "converged": self.converged,
        })
    }
}

/// Splits `n` subjects into `folds` disjoint held-out groups after a seeded
/// shuffle.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    (0..folds)
        .map(|l| {
            let mut part = perm[l * n / folds..(l + 1) * n / folds].to_vec();
            part.sort_unstable();
            part
        })
        .collect()
}

/// Linear predictors of every node on `d` under `fits`, one vector per node.
fn predictors_on(d: &ReplicateDataset, basis: &FusedBasis, cfg: &PenaltyConfig, fits: &[NodeFit]) -> Result<Vec<Array1<f64>>> {
    let dd = DatasetDesign::new(d);
    (0..d.p())
        .map(|j| {
            let design = dd.node(j)?;
            Ok(NodeState::from_fit(&design, basis, cfg, &fits[j])?.linear_predictor())
        })
        .collect()
}

/// Copies per-subject rows of `local` (ordered as `subjects`) into a
/// length-`nT` vector.
fn scatter(target: &mut Array1<f64>, local: &Array1<f64>, subjects: &[usize], t: usize) {
    for (r, &i) in subjects.iter().enumerate() {
        for s in 0..t {
            target[i * t + s] = local[r * t + s];
        }
    }
}

struct FoldOutcome {
    predictors: Vec<Array1<f64>>,
    converged: bool,
}

fn fold_predictors(
    d: &ReplicateDataset,
    cfg: &PenaltyConfig,
    opts: &FitOptions,
    held: &[usize],
    evaluation: EsEvaluation,
) -> Result<FoldOutcome> {
    let (n, t, p) = (d.n(), d.t(), d.p());
    let kept: Vec<usize> = (0..n).filter(|i| !held.contains(i)).collect();
    let train = d.subset(&kept)?;
    let basis = FusedBasis::build(kept.len(), t)?;
    let fits = fit_all_nodes(&train, cfg, &basis, opts, None)?;
    let mut converged = fits.iter().all(|f| f.converged);
    let local = predictors_on(&train, &basis, cfg, &fits)?;
    let mut out = vec![Array1::from_elem(n * t, f64::NAN); p];
    for j in 0..p {
        scatter(&mut out[j], &local[j], &kept, t);
    }
    if evaluation == EsEvaluation::Full && !held.is_empty() {
        let test = d.subset(held)?;
        let test_basis = FusedBasis::build(held.len(), t)?;
        let refits = refit_latent(&test, cfg, &test_basis, opts, &fits)?;
        converged &= refits.iter().all(|f| f.converged);
        let local = predictors_on(&test, &test_basis, cfg, &refits)?;
        for j in 0..p {
            scatter(&mut out[j], &local[j], held, t);
        }
    }
    Ok(FoldOutcome {
        predictors: out,
        converged,
    })
}

/// ES of one node from its fold predictors. Rows that are NaN in a fold are
/// excluded from that fold's deviation and from the mean at that row.
/// Returns `+inf` when the mean predictor is identically zero.
pub fn es_node(preds: &[&Array1<f64>]) -> f64 {
    let len = preds[0].len();
    let mut mean = Array1::zeros(len);
    for r in 0..len {
        let (sum, cnt) = preds
            .iter()
            .map(|v| v[r])
            .filter(|v| !v.is_nan())
            .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
        mean[r] = if cnt > 0 { sum / cnt as f64 } else { 0.0 };
    }
    let norm: f64 = mean.iter().map(|v| v * v).sum();
    if norm == 0.0 {
        return f64::INFINITY;
    }
    let spread: f64 = preds
        .iter()
        .map(|v| {
            v.iter()
                .zip(mean.iter())
                .filter(|(a, _)| !a.is_nan())
                .map(|(a, m)| (a - m) * (a - m))
                .sum::<f64>()
        })
        .sum();
    spread / preds.len() as f64 / norm
}

fn key_less(a: &PenaltyConfig, b: &PenaltyConfig) -> bool {
    (a.lambda, a.gamma, a.beta) < (b.lambda, b.gamma, b.beta)
}

/// Fits every config on each leave-one-fold-out subject subset and picks the
/// config with minimum mean ES. Ties go to the smallest `(lambda, gamma)`.
pub fn es_select(
    d: &ReplicateDataset,
    grid: &[PenaltyConfig],
    opts: &FitOptions,
    settings: &EsSettings,
) -> Result<EsResult> {
    if grid.is_empty() {
        return Err(Error::Precondition("empty tuning grid".into()));
    }
    if settings.folds < 2 || d.n() < settings.folds {
        return Err(Error::Precondition(format!(
            "need 2 <= folds <= n, got folds={} with n={}",
            settings.folds,
            d.n()
        )));
    }
    let held_out = fold_assignment(d.n(), settings.folds, settings.seed);
    let jobs: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|c| (0..settings.folds).map(move |l| (c, l)))
        .collect();
    let outcomes: Vec<Result<FoldOutcome>> = jobs
        .par_iter()
        .map(|&(c, l)| fold_predictors(d, &grid[c], opts, &held_out[l], settings.evaluation))
        .collect();
    let mut outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?.into_iter();

    let p = d.p();
    let mut es = Vec::with_capacity(grid.len());
    let mut es_nodes = Vec::with_capacity(grid.len());
    let mut predictors = Vec::new();
    let mut diagnostics = Vec::new();
    let mut converged = true;
    for (c, cfg) in grid.iter().enumerate() {
        let folds: Vec<FoldOutcome> = outcomes.by_ref().take(settings.folds).collect();
        converged &= folds.iter().all(|f| f.converged);
        let per_node: Vec<f64> = (0..p)
            .map(|j| {
                let preds: Vec<&Array1<f64>> = folds.iter().map(|f| &f.predictors[j]).collect();
                es_node(&preds)
            })
            .collect();
        for (j, v) in per_node.iter().enumerate() {
            if v.is_infinite() {
                diagnostics.push(format!(
                    "config {} (lambda={}, beta={}, gamma={}): node {} has an all-zero mean predictor",
                    c + 1,
                    cfg.lambda,
                    cfg.beta,
                    cfg.gamma,
                    j + 1
                ));
            }
        }
        es.push(per_node.iter().sum::<f64>() / p as f64);
        es_nodes.push(per_node);
        if settings.keep_predictors {
            predictors.push(folds.into_iter().map(|f| f.predictors).collect());
        }
    }

    let score = |v: f64| if v.is_nan() { f64::INFINITY } else { v };
    let mut selected = 0;
    for c in 1..grid.len() {
        let (a, b) = (score(es[c]), score(es[selected]));
        if a < b || (a == b && key_less(&grid[c], &grid[selected])) {
            selected = c;
        }
    }
    Ok(EsResult {
        grid: grid.to_vec(),
        es,
        es_nodes,
        selected,
        held_out,
        predictors,
        diagnostics,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Family;
    use ndarray::Array3;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn many_subjects_reference_values() {
        let inp = TheoryInputs::new(50, 20, 100);
        let out = theory_defaults(&inp, TheoryMode::Auto, GammaMode::Generic).unwrap();
        assert_eq!(out.branch, TheoryBranch::ManySubjects);
        let l20 = 20f64.ln();
        let lambda = 2.0 * l20 * 100_000f64.ln() / 20f64.sqrt();
        assert!(rel(out.config.lambda, lambda) < 1e-12);
        assert!((out.config.lambda - 15.42).abs() < 0.005);
        assert_eq!(out.config.beta, out.config.lambda);
        let gamma = (l20 / 19.0).sqrt() / (50.0 * 20f64.sqrt());
        assert!(rel(out.config.gamma, gamma) < 1e-12);
        assert_eq!(out.i0, 19);
        // c4 = (4 ln 20 / pi^2)^(1/4)
        assert!(rel(out.c4, (4.0 * l20 / (PI * PI)).powf(0.25)) < 1e-12);
        assert!(out.c4 * out.c4 * 50.0 > 20.0);
    }

    #[test]
    fn many_replicates_branch() {
        let inp = TheoryInputs::new(2, 1000, 10);
        let out = theory_defaults(&inp, TheoryMode::Auto, GammaMode::Generic).unwrap();
        assert_eq!(out.branch, TheoryBranch::ManyReplicates);
        let (n, t) = (2f64, 1000f64);
        let lambda = 2.0 * t.ln() * (n * t * 10.0).ln() * n.powf(-1.0 / 6.0) * t.powf(-1.0 / 3.0);
        assert!(rel(out.config.lambda, lambda) < 1e-12);
        let c4 = out.c4;
        let i0 = (c4.powf(4.0 / 3.0) * t.powf(1.0 / 3.0) * n.powf(2.0 / 3.0)).floor();
        assert_eq!(out.i0 as f64, i0);
        assert!(rel(out.config.gamma, (t.ln() / i0).sqrt() / (n * t.sqrt())) < 1e-12);
    }

    #[test]
    fn no_confounder_rates() {
        let inp = TheoryInputs::new(50, 20, 100);
        let out = theory_defaults(&inp, TheoryMode::NoConfounder, GammaMode::Generic).unwrap();
        let lambda = 2.0 * 20f64.ln() * 100_000f64.ln() / 1000f64.sqrt();
        assert!(rel(out.config.lambda, lambda) < 1e-12);
        assert_eq!(out.i0, 2);
    }

    #[test]
    fn pinned_gamma_is_generic_with_fixed_multiplier() {
        for (n, t) in [(50, 20), (2, 1000), (10, 3)] {
            let mut inp = TheoryInputs::new(n, t, 7);
            let pinned = theory_defaults(&inp, TheoryMode::Auto, GammaMode::Pinned).unwrap();
            inp.c1_const = 16.0 / PI;
            let generic = theory_defaults(&inp, TheoryMode::Auto, GammaMode::Generic).unwrap();
            assert!(rel(pinned.config.gamma, generic.config.gamma) < 1e-12);
        }
    }

    #[test]
    fn lambda_decreases_in_t_within_a_branch() {
        // the log factors grow with T, so the decrease only holds once
        // 1/log T + 1/log(nTp) is below the power of T
        for n in [2, 5, 50] {
            let mut prev: Option<TheoryDefaults> = None;
            for t in (500..5000).step_by(50) {
                let out = theory_defaults(&TheoryInputs::new(n, t, 20), TheoryMode::Auto, GammaMode::Generic)
                    .unwrap();
                if let Some(prev) = prev.filter(|p| p.branch == out.branch) {
                    assert!(out.config.lambda < prev.config.lambda, "n={n} T={t}");
                }
                prev = Some(out);
            }
        }
    }

    #[test]
    fn folds_partition_subjects() {
        let folds = fold_assignment(23, 5, 4);
        let mut all: Vec<usize> = folds.iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..23).collect::<Vec<_>>());
        for f in &folds {
            assert!(f.len() == 4 || f.len() == 5);
        }
    }

    #[test]
    fn es_node_cases() {
        let a = Array1::from(vec![1.0, 2.0]);
        assert_eq!(es_node(&[&a, &a, &a]), 0.0);
        let z = Array1::zeros(2);
        assert!(es_node(&[&z, &z]).is_infinite());
        let b = Array1::from(vec![3.0, 2.0]);
        // mean (2, 2); deviations 1 and 1 -> (1/2)(1 + 1) / 8
        assert!((es_node(&[&a, &b]) - 0.125).abs() < 1e-15);
    }

    fn small_data(seed: u64) -> ReplicateDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = Array3::from_shape_fn((10, 4, 3), |_| rng.sample::<f64, _>(StandardNormal));
        ReplicateDataset::new(values, Family::Gaussian)
            .unwrap()
            .center()
            .unwrap()
    }

    #[test]
    fn single_config_selected_and_order_invariant() {
        let d = small_data(1);
        let opts = FitOptions::for_family(Family::Gaussian);
        let grid = vec![
            PenaltyConfig::new(0.1, 0.1, 0.5),
            PenaltyConfig::new(0.05, 0.1, 0.5),
            PenaltyConfig::new(0.2, 0.1, 0.2),
        ];
        let one = es_select(&d, &grid[..1], &opts, &EsSettings::default()).unwrap();
        assert_eq!(one.selected, 0);
        let fwd = es_select(&d, &grid, &opts, &EsSettings::default()).unwrap();
        let mut rev_grid = grid.clone();
        rev_grid.reverse();
        let rev = es_select(&d, &rev_grid, &opts, &EsSettings::default()).unwrap();
        assert_eq!(fwd.selected_config(), rev.selected_config());
        for c in 0..3 {
            assert_eq!(fwd.es[c], rev.es[2 - c]);
        }
    }

    #[test]
    fn fold_subject_evaluation_runs() {
        let d = small_data(2);
        let opts = FitOptions::for_family(Family::Gaussian);
        let settings = EsSettings {
            evaluation: EsEvaluation::FoldSubjects,
            ..EsSettings::default()
        };
        let res = es_select(&d, &[PenaltyConfig::new(0.1, 0.1, 0.5)], &opts, &settings).unwrap();
        assert!(res.es[0].is_finite() && res.es[0] >= 0.0);
    }
}
