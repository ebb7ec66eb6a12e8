use ndarray::Array2;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{from_dmatrix, min_eigenvalue, to_dmatrix, Fill, PrecisionSpec, TransitionKind, TransitionSpec};
use crate::error::{Error, Result};

/// Off-diagonal density of the observed-latent and latent-latent blocks.
pub const PARTITION_LATENT_DENSITY: f64 = 0.8;
pub const PARTITION_DIAG_BOOST: f64 = 0.2;

/// A positive definite precision matrix over `p` observed and `q` latent
/// variables together with its inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct Precision {
    pub p: usize,
    pub q: usize,
    pub theta: Array2<f64>,
    pub sigma: Array2<f64>,
    /// Set when a positive density rounded to zero nonzero pairs.
    pub warning: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartitionSpec {
    pub p: usize,
    pub q: usize,
    pub oo_density: f64,
    pub oh_density: f64,
    pub hh_density: f64,
    pub fill: Fill,
    pub diag_boost: f64,
    pub seed: u64,
}

fn count_for(density: f64, pairs: usize) -> usize {
    (density * pairs as f64).round() as usize
}

/// Picks `round(density * len)` of `pairs` uniformly without replacement and
/// fills both symmetric positions.
fn fill_pairs(
    theta: &mut Array2<f64>,
    pairs: &[(usize, usize)],
    density: f64,
    fill: &Fill,
    rng: &mut ChaCha8Rng,
    warnings: &mut Vec<String>,
) {
    let count = count_for(density, pairs.len());
    if count == 0 {
        if density > 0.0 && !pairs.is_empty() {
            warnings.push(format!(
                "density {density} over {} pairs rounds to zero nonzeros",
                pairs.len()
            ));
        }
        return;
    }
    let mut chosen = index::sample(rng, pairs.len(), count).into_vec();
    chosen.sort_unstable();
    for idx in chosen {
        let (a, b) = pairs[idx];
        let v = fill.draw(rng);
        theta[[a, b]] = v;
        theta[[b, a]] = v;
    }
}

/// Sets the diagonal to `|lambda_min|` of the off-diagonal part plus `boost`
/// and inverts.
fn finish(theta: &mut Array2<f64>, boost: f64) -> Result<Array2<f64>> {
    let shift = min_eigenvalue(theta).abs() + boost;
    for j in 0..theta.nrows() {
        theta[[j, j]] = shift;
    }
    let chol = to_dmatrix(theta)
        .cholesky()
        .ok_or_else(|| Error::Construction("precision matrix is not positive definite".into()))?;
    Ok(from_dmatrix(&chol.inverse()))
}

pub fn gen_precision(spec: &PrecisionSpec) -> Result<Precision> {
    spec.validate()?;
    let p = spec.p;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let pairs: Vec<(usize, usize)> = (0..p)
        .flat_map(|j| (j + 1..p).map(move |k| (j, k)))
        .collect();
    let mut theta = Array2::zeros((p, p));
    let mut warnings = Vec::new();
    fill_pairs(&mut theta, &pairs, spec.density, &spec.fill, &mut rng, &mut warnings);
    let sigma = finish(&mut theta, spec.diag_boost)?;
    Ok(Precision {
        p,
        q: 0,
        theta,
        sigma,
        warning: warnings.pop(),
    })
}

/// Observed-block settings from `spec_x`; the latent blocks use density
/// [`PARTITION_LATENT_DENSITY`] with the same fill.
pub fn gen_partitioned(spec_x: &PrecisionSpec, q: usize) -> Result<Precision> {
    if q == 0 {
        return Err(Error::InvalidDimension("need at least one latent variable".into()));
    }
    gen_partitioned_with(&PartitionSpec {
        p: spec_x.p,
        q,
        oo_density: spec_x.density,
        oh_density: PARTITION_LATENT_DENSITY,
        hh_density: PARTITION_LATENT_DENSITY,
        fill: spec_x.fill,
        diag_boost: spec_x.diag_boost,
        seed: spec_x.seed,
    })
}

pub fn gen_partitioned_with(spec: &PartitionSpec) -> Result<Precision> {
    PrecisionSpec {
        p: spec.p,
        density: spec.oo_density,
        fill: spec.fill,
        diag_boost: spec.diag_boost,
        seed: spec.seed,
    }
    .validate()?;
    for d in [spec.oh_density, spec.hh_density] {
        if !(0.0..=1.0).contains(&d) {
            return Err(Error::Precondition(format!("density must lie in [0, 1], got {d}")));
        }
    }
    let (p, q) = (spec.p, spec.q);
    let dim = p + q;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let oo: Vec<_> = (0..p).flat_map(|j| (j + 1..p).map(move |k| (j, k))).collect();
    let oh: Vec<_> = (0..p).flat_map(|j| (p..dim).map(move |m| (j, m))).collect();
    let hh: Vec<_> = (p..dim).flat_map(|a| (a + 1..dim).map(move |b| (a, b))).collect();
    let mut theta = Array2::zeros((dim, dim));
    let mut warnings = Vec::new();
    for (pairs, density) in [(&oo, spec.oo_density), (&oh, spec.oh_density), (&hh, spec.hh_density)] {
        fill_pairs(&mut theta, pairs, density, &spec.fill, &mut rng, &mut warnings);
    }
    let sigma = finish(&mut theta, spec.diag_boost)?;
    Ok(Precision {
        p,
        q,
        theta,
        sigma,
        warning: warnings.into_iter().next(),
    })
}

/// Ising parameters: the partitioned sparsity pattern with magnitudes uniform
/// on `[0.25, 0.5]` and random signs.
pub fn gen_ising_precision(p: usize, q: usize, seed: u64) -> Result<Precision> {
    gen_partitioned_with(&PartitionSpec {
        p,
        q,
        oo_density: 0.1,
        oh_density: PARTITION_LATENT_DENSITY,
        hh_density: PARTITION_LATENT_DENSITY,
        fill: Fill::SignedUniform { lo: 0.25, hi: 0.5 },
        diag_boost: PARTITION_DIAG_BOOST,
        seed,
    })
}

pub fn gen_transition(spec: &TransitionSpec, p: usize) -> Result<Array2<f64>> {
    for v in [spec.diag_value, spec.sparse_density, spec.sparse_value] {
        if !v.is_finite() {
            return Err(Error::Precondition("transition settings must be finite".into()));
        }
    }
    let mut a = Array2::zeros((p, p));
    match spec.kind {
        TransitionKind::None => {}
        TransitionKind::Diagonal => a.diag_mut().fill(spec.diag_value),
        TransitionKind::Sparse => {
            if !(0.0..=1.0).contains(&spec.sparse_density) {
                return Err(Error::Precondition("sparse density must lie in [0, 1]".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            let count = count_for(spec.sparse_density, p * p);
            for idx in index::sample(&mut rng, p * p, count) {
                a[[idx / p, idx % p]] = spec.sparse_value;
            }
        }
    }
    Ok(a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simgen::min_eigenvalue;

    fn off_diagonal_pairs(theta: &Array2<f64>, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> usize {
        let mut c = 0;
        for j in rows.clone() {
            for k in cols.clone() {
                if j != k && theta[[j, k]] != 0.0 {
                    c += 1;
                }
            }
        }
        c
    }

    #[test]
    fn empty_graph_diagonal() {
        let prec = gen_precision(&PrecisionSpec::new(5, 0.0, 0.3, 0.1, 1)).unwrap();
        for j in 0..5 {
            for k in 0..5 {
                let want = if j == k { 0.1 } else { 0.0 };
                assert_eq!(prec.theta[[j, k]], want);
                let inv = if j == k { 10.0 } else { 0.0 };
                assert!((prec.sigma[[j, k]] - inv).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn full_scale_counts_and_definiteness() {
        let prec = gen_precision(&PrecisionSpec::new(100, 0.1, 0.3, 0.1, 7)).unwrap();
        assert_eq!(off_diagonal_pairs(&prec.theta, 0..100, 0..100), 2 * 495);
        assert!(prec.theta.iter().all(|&v| v == 0.0 || v == 0.3 || v > 0.3));
        assert!(min_eigenvalue(&prec.theta) >= 0.1 - 1e-9);
        assert_eq!(prec.theta, prec.theta.t());
    }

    #[test]
    fn inverse_is_accurate() {
        let prec = gen_precision(&PrecisionSpec::new(20, 0.2, 0.3, 0.1, 3)).unwrap();
        let prod = prec.theta.dot(&prec.sigma);
        for j in 0..20 {
            for k in 0..20 {
                let e = if j == k { 1.0 } else { 0.0 };
                assert!((prod[[j, k]] - e).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn rounding_to_zero_warns() {
        let prec = gen_precision(&PrecisionSpec::new(3, 0.1, 0.3, 0.1, 3)).unwrap();
        assert!(prec.warning.is_some());
    }

    #[test]
    fn partitioned_blocks() {
        let prec = gen_partitioned(&PrecisionSpec::new(2, 0.1, 0.3, 0.2, 1), 1).unwrap();
        assert_eq!(prec.theta[[0, 2]], 0.3);
        assert_eq!(prec.theta[[1, 2]], 0.3);

        let big = gen_partitioned(&PrecisionSpec::new(20, 0.1, 0.3, 0.2, 9), 5).unwrap();
        assert!(min_eigenvalue(&big.theta) >= 0.2 - 1e-9);
        assert_eq!(off_diagonal_pairs(&big.theta, 0..20, 0..20), 2 * 19);
        assert_eq!(off_diagonal_pairs(&big.theta, 0..20, 20..25), 80);
        assert_eq!(off_diagonal_pairs(&big.theta, 20..25, 20..25), 2 * 8);
        for j in 0..20 {
            for m in 20..25 {
                assert_eq!(big.theta[[j, m]], big.theta[[m, j]]);
            }
        }
    }

    #[test]
    fn ising_support_and_signs() {
        let mut neg = 0;
        let mut total = 0;
        let mut seed = 0;
        while total < 500 {
            let prec = gen_ising_precision(20, 5, seed).unwrap();
            assert_eq!(prec.theta, prec.theta.t());
            for j in 0..25 {
                for k in j + 1..25 {
                    let v = prec.theta[[j, k]];
                    if v != 0.0 {
                        assert!((0.25..=0.5).contains(&v.abs()));
                        total += 1;
                        neg += usize::from(v < 0.0);
                    }
                }
            }
            seed += 1;
        }
        let frac = neg as f64 / total as f64;
        assert!((0.4..=0.6).contains(&frac), "{frac}");
    }

    #[test]
    fn transitions() {
        let diag = gen_transition(&TransitionSpec::new(TransitionKind::Diagonal, 0), 3).unwrap();
        assert_eq!(diag, Array2::<f64>::eye(3) * 0.9);
        let sparse = gen_transition(&TransitionSpec::new(TransitionKind::Sparse, 4), 10).unwrap();
        assert_eq!(sparse.iter().filter(|&&v| v == 0.3).count(), 5);
        assert_eq!(sparse.iter().filter(|&&v| v != 0.0).count(), 5);
        let none = gen_transition(&TransitionSpec::new(TransitionKind::None, 4), 4).unwrap();
        assert!(none.iter().all(|&v| v == 0.0));
    }
}
