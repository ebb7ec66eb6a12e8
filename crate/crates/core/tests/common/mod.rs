#![allow(dead_code)]

use ndarray::{Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use repgraph::{Family, PenaltyConfig, ReplicateDataset};

pub const PENALTY_LEVELS: [f64; 3] = [0.01, 0.1, 1.0];

/// A small random instance: sizes, data, node and penalties.
pub struct Instance {
    pub data: ReplicateDataset,
    pub j: usize,
    pub cfg: PenaltyConfig,
}

/// Gaussian data with a lag effect and a subject-level step, centered.
pub fn random_instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=6);
    let t = rng.random_range(2..=8);
    let p = rng.random_range(2..=10);
    let mut v = Array3::zeros((n, t, p));
    for i in 0..n {
        let step: f64 = rng.random_range(-1.0..1.0);
        let knot = rng.random_range(1..t.max(2));
        for s in 0..t {
            for k in 0..p {
                let lag = if s > 0 { 0.4 * v[[i, s - 1, k]] } else { 0.0 };
                let shift = if s >= knot { step } else { 0.0 };
                v[[i, s, k]] = lag + shift + rng.random_range(-1.0..1.0);
            }
        }
    }
    let data = ReplicateDataset::new(v, Family::Gaussian).unwrap().center().unwrap();
    let pick = |rng: &mut ChaCha8Rng| PENALTY_LEVELS[rng.random_range(0..3)];
    let cfg = PenaltyConfig::new(pick(&mut rng), pick(&mut rng), pick(&mut rng));
    let j = rng.random_range(0..p);
    Instance { data, j, cfg }
}

/// The same instance with entries replaced by `1{x > 0}`.
pub fn binarized(inst: &Instance) -> ReplicateDataset {
    let v = inst.data.values().mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
    ReplicateDataset::new(v, Family::Ising).unwrap()
}

/// Node regression written out directly from the array: response, the
/// other variables, and the previous replicate (zero before the first).
pub struct Regression {
    pub n: usize,
    pub t: usize,
    pub x: Array1<f64>,
    pub others: Array2<f64>,
    pub lags: Array2<f64>,
}

pub fn regression(d: &ReplicateDataset, j: usize) -> Regression {
    let (n, t, p) = (d.n(), d.t(), d.p());
    let rows = n * t;
    let mut x = Array1::zeros(rows);
    let mut others = Array2::zeros((rows, p - 1));
    let mut lags = Array2::zeros((rows, p));
    for i in 0..n {
        for s in 0..t {
            let r = i * t + s;
            x[r] = d.value(i, s, j);
            let mut c = 0;
            for k in 0..p {
                if k != j {
                    others[[r, c]] = d.value(i, s, k);
                    c += 1;
                }
                if s > 0 {
                    lags[[r, k]] = d.value(i, s - 1, k);
                }
            }
        }
    }
    Regression { n, t, x, others, lags }
}

fn l1(v: &Array1<f64>) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

fn fused(delta: &Array1<f64>, n: usize, t: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..n {
        for r in 1..t {
            s += (delta[i * t + r] - delta[i * t + r - 1]).abs();
        }
    }
    s
}

pub fn predictor(reg: &Regression, theta: &Array1<f64>, alpha: &Array1<f64>, delta: &Array1<f64>) -> Array1<f64> {
    reg.others.dot(theta) + reg.lags.dot(alpha) + delta
}

/// Squared-error node objective evaluated from scratch.
pub fn gaussian_objective(
    reg: &Regression,
    cfg: &PenaltyConfig,
    theta: &Array1<f64>,
    alpha: &Array1<f64>,
    delta: &Array1<f64>,
) -> f64 {
    let r = &reg.x - &predictor(reg, theta, alpha, delta);
    r.dot(&r) / (2.0 * reg.x.len() as f64)
        + cfg.lambda * l1(theta)
        + cfg.beta * l1(alpha)
        + cfg.gamma * fused(delta, reg.n, reg.t)
}

/// Logistic node objective `(1/N) sum (log(1 + e^eta) - x eta)` plus penalties.
pub fn ising_objective(
    reg: &Regression,
    cfg: &PenaltyConfig,
    theta: &Array1<f64>,
    alpha: &Array1<f64>,
    delta: &Array1<f64>,
) -> f64 {
    let eta = predictor(reg, theta, alpha, delta);
    let nll: f64 = eta
        .iter()
        .zip(reg.x.iter())
        .map(|(&e, &x)| e.max(0.0) + (-e.abs()).exp().ln_1p() - x * e)
        .sum();
    nll / reg.x.len() as f64
        + cfg.lambda * l1(theta)
        + cfg.beta * l1(alpha)
        + cfg.gamma * fused(delta, reg.n, reg.t)
}

/// Full design in the level-plus-increments parametrization: per subject,
/// `delta_t = c + sum_{s < t} d_s`, with the increments penalized.
struct Stacked {
    a: Array2<f64>,
    weights: Array1<f64>,
    p_theta: usize,
    p_alpha: usize,
}

fn stacked(reg: &Regression, cfg: &PenaltyConfig) -> Stacked {
    let (n, t) = (reg.n, reg.t);
    let rows = n * t;
    let pt = reg.others.ncols();
    let pa = if cfg.drop_alpha { 0 } else { reg.lags.ncols() };
    let pd = if cfg.drop_delta { 0 } else { n * t };
    let mut a = Array2::zeros((rows, pt + pa + pd));
    let mut w = Array1::zeros(pt + pa + pd);
    for r in 0..rows {
        for c in 0..pt {
            a[[r, c]] = reg.others[[r, c]];
        }
        for c in 0..pa {
            a[[r, pt + c]] = reg.lags[[r, c]];
        }
    }
    w.slice_mut(ndarray::s![..pt]).fill(cfg.lambda);
    w.slice_mut(ndarray::s![pt..pt + pa]).fill(cfg.beta);
    if pd > 0 {
        for i in 0..n {
            let base = pt + pa + i * t;
            // column base: level; base + s (s >= 1): increment entering at s
            for s in 0..t {
                for c in 0..=s {
                    a[[i * t + s, base + c]] = 1.0;
                }
            }
            for s in 1..t {
                w[base + s] = cfg.gamma;
            }
        }
    }
    Stacked {
        a,
        weights: w,
        p_theta: pt,
        p_alpha: pa,
    }
}

fn split(st: &Stacked, reg: &Regression, z: &Array1<f64>) -> (Array1<f64>, Array1<f64>, Array1<f64>) {
    let (pt, pa) = (st.p_theta, st.p_alpha);
    let theta = z.slice(ndarray::s![..pt]).to_owned();
    let alpha = if pa > 0 {
        z.slice(ndarray::s![pt..pt + pa]).to_owned()
    } else {
        Array1::zeros(reg.lags.ncols())
    };
    let delta = if z.len() > pt + pa {
        st.a.slice(ndarray::s![.., pt + pa..]).dot(&z.slice(ndarray::s![pt + pa..]))
    } else {
        Array1::zeros(reg.x.len())
    };
    (theta, alpha, delta)
}

fn spectral_sq(a: &Array2<f64>) -> f64 {
    let mut v = Array1::from_elem(a.ncols(), 1.0);
    let mut est = 0.0;
    for _ in 0..500 {
        let w = a.t().dot(&a.dot(&v));
        let norm = w.dot(&w).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        est = norm / v.dot(&v).sqrt();
        v = w / norm;
    }
    est
}

pub struct OracleSolution {
    pub theta: Array1<f64>,
    pub alpha: Array1<f64>,
    pub delta: Array1<f64>,
    pub objective: f64,
}

pub fn fista_gaussian(reg: &Regression, cfg: &PenaltyConfig) -> OracleSolution {
    fista(reg, cfg, false)
}

pub fn fista_ising(reg: &Regression, cfg: &PenaltyConfig) -> OracleSolution {
    fista(reg, cfg, true)
}

fn logistic(e: f64) -> f64 {
    if e >= 0.0 {
        1.0 / (1.0 + (-e).exp())
    } else {
        let z = e.exp();
        z / (1.0 + z)
    }
}

/// Accelerated proximal gradient with adaptive restart, run to a tight
/// fixed point.
fn fista(reg: &Regression, cfg: &PenaltyConfig, binary: bool) -> OracleSolution {
    let st = stacked(reg, cfg);
    let rows = reg.x.len() as f64;
    let curv = if binary { 0.25 } else { 1.0 };
    let lip = curv * spectral_sq(&st.a) / rows * 1.01 + 1e-12;
    let step = 1.0 / lip;
    let dim = st.a.ncols();
    let prox = |v: &Array1<f64>| -> Array1<f64> {
        Array1::from_iter(v.iter().zip(st.weights.iter()).map(|(&x, &w)| {
            let th = w * step;
            x.signum() * (x.abs() - th).max(0.0)
        }))
    };
    let grad = |z: &Array1<f64>| -> Array1<f64> {
        let mut eta = st.a.dot(z);
        if binary {
            eta.mapv_inplace(logistic);
        }
        st.a.t().dot(&(eta - &reg.x)) / rows
    };
    let mut x = Array1::zeros(dim);
    let mut y = x.clone();
    let mut tk = 1.0f64;
    for _ in 0..400_000 {
        let x_new = prox(&(&y - &(grad(&y) * step)));
        let moved = &x_new - &x;
        // restart momentum when it points uphill
        if (&y - &x_new).dot(&moved) > 0.0 {
            tk = 1.0;
            y = x.clone();
            continue;
        }
        let gm = (&y - &x_new).iter().fold(0.0f64, |m, v| m.max(v.abs())) * lip;
        let t_new = 0.5 * (1.0 + (1.0 + 4.0 * tk * tk).sqrt());
        y = &x_new + &(moved * ((tk - 1.0) / t_new));
        tk = t_new;
        x = x_new;
        if gm < 1e-13 {
            break;
        }
    }
    let (theta, alpha, delta) = split(&st, reg, &x);
    let objective = if binary {
        ising_objective(reg, cfg, &theta, &alpha, &delta)
    } else {
        gaussian_objective(reg, cfg, &theta, &alpha, &delta)
    };
    OracleSolution {
        theta,
        alpha,
        delta,
        objective,
    }
}

/// Largest subgradient violation of the squared-error problem at the given
/// coefficients, in the level-plus-increments coordinates.
pub fn gaussian_kkt(
    reg: &Regression,
    cfg: &PenaltyConfig,
    theta: &Array1<f64>,
    alpha: &Array1<f64>,
    delta: &Array1<f64>,
) -> f64 {
    let st = stacked(reg, cfg);
    let rows = reg.x.len() as f64;
    let g = st.a.t().dot(&((predictor(reg, theta, alpha, delta) - &reg.x) / rows));
    let (n, t) = (reg.n, reg.t);
    let mut z = Vec::with_capacity(st.a.ncols());
    z.extend(theta.iter().copied());
    if !cfg.drop_alpha {
        z.extend(alpha.iter().copied());
    }
    if !cfg.drop_delta {
        // increments at rounding level count as exact fusions
        let scale = delta.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for i in 0..n {
            z.push(delta[i * t]);
            for s in 1..t {
                let inc = delta[i * t + s] - delta[i * t + s - 1];
                z.push(if inc.abs() <= 1e-12 * scale { 0.0 } else { inc });
            }
        }
    }
    let mut worst = 0.0f64;
    for ((&gk, &bk), &w) in g.iter().zip(z.iter()).zip(st.weights.iter()) {
        let v = if bk == 0.0 {
            (gk.abs() - w).max(0.0)
        } else {
            (gk + w * bk.signum()).abs()
        };
        worst = worst.max(v);
    }
    worst
}

/// Objective path check: every step may rise by at most `slack`.
pub fn max_rise(path: &[f64]) -> f64 {
    path.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max)
}
