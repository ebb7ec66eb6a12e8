//! Coordinate descent for a partially penalized least-squares lasso.
//!
//! Minimizes `(c/2) ||y - X b||² + penalty * sum_k w_k |b_k|` with
//! `c = scale / N` and `w_k ∈ {0, 1}`. Every block update of both node
//! solvers reduces to this problem.

use ndarray::{Array1, ArrayView1, ArrayView2, Zip};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LsSettings {
    /// Stop once a full sweep moves no coordinate by more than this.
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for LsSettings {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_sweeps: 100_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PenalizedLsProblem<'a> {
    pub design: ArrayView2<'a, f64>,
    pub response: ArrayView1<'a, f64>,
    pub scale: f64,
    pub penalty: f64,
    /// `true` where the coordinate carries the l1 penalty.
    pub weights: Vec<bool>,
    pub warm_start: Option<ArrayView1<'a, f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LsSolution {
    pub coef: Array1<f64>,
    pub sweeps: usize,
    pub converged: bool,
}

#[inline]
pub fn soft_threshold(z: f64, threshold: f64) -> f64 {
    if z > threshold {
        z - threshold
    } else if z < -threshold {
        z + threshold
    } else {
        0.0
    }
}

impl<'a> PenalizedLsProblem<'a> {
    /// Fully penalized problem with no warm start.
    pub fn new(
        design: ArrayView2<'a, f64>,
        response: ArrayView1<'a, f64>,
        scale: f64,
        penalty: f64,
    ) -> Self {
        let k = design.ncols();
        Self {
            design,
            response,
            scale,
            penalty,
            weights: vec![true; k],
            warm_start: None,
        }
    }

    pub fn with_weights(mut self, weights: Vec<bool>) -> Self {
        self.weights = weights;
        self
    }

    pub fn with_warm_start(mut self, start: ArrayView1<'a, f64>) -> Self {
        self.warm_start = Some(start);
        self
    }

    /// The loss curvature `c = scale / N`.
    pub fn curvature(&self) -> f64 {
        self.scale / self.design.nrows() as f64
    }

    fn validate(&self) -> Result<()> {
        let (rows, cols) = self.design.dim();
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidDimension(format!(
                "design must be non-empty, got {rows}x{cols}"
            )));
        }
        if self.response.len() != rows {
            return Err(Error::LengthMismatch {
                expected: rows,
                got: self.response.len(),
            });
        }
        if self.weights.len() != cols {
            return Err(Error::LengthMismatch {
                expected: cols,
                got: self.weights.len(),
            });
        }
        if let Some(w) = &self.warm_start {
            if w.len() != cols {
                return Err(Error::LengthMismatch {
                    expected: cols,
                    got: w.len(),
                });
            }
        }
        if !(self.scale > 0.0) || !self.scale.is_finite() {
            return Err(Error::Precondition(format!(
                "scale must be positive, got {}",
                self.scale
            )));
        }
        if !(self.penalty >= 0.0) {
            return Err(Error::Precondition(format!(
                "penalty must be nonnegative, got {}",
                self.penalty
            )));
        }
        if self.design.iter().chain(self.response.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Degenerate("non-finite design or response".into()));
        }
        Ok(())
    }

    pub fn residual(&self, b: ArrayView1<'_, f64>) -> Array1<f64> {
        &self.response - &self.design.dot(&b)
    }

    pub fn objective(&self, b: ArrayView1<'_, f64>) -> f64 {
        let r = self.residual(b);
        let l1: f64 = b
            .iter()
            .zip(&self.weights)
            .filter(|(_, &w)| w)
            .map(|(v, _)| v.abs())
            .sum();
        0.5 * self.curvature() * r.dot(&r) + self.penalty * l1
    }

    /// Largest coordinatewise violation of the subgradient optimality
    /// conditions at `b`.
    pub fn kkt_residual(&self, b: ArrayView1<'_, f64>) -> f64 {
        let c = self.curvature();
        let r = self.residual(b);
        let mut worst = 0.0f64;
        for (k, col) in self.design.columns().into_iter().enumerate() {
            let g = c * col.dot(&r);
            let v = if !self.weights[k] {
                g.abs()
            } else if b[k] == 0.0 {
                (g.abs() - self.penalty).max(0.0)
            } else {
                (g - self.penalty * b[k].signum()).abs()
            };
            worst = worst.max(v);
        }
        worst
    }

    /// Smallest penalty at which the zero vector is optimal (all weights 1).
    pub fn zero_threshold(&self) -> f64 {
        let c = self.curvature();
        self.design
            .columns()
            .into_iter()
            .map(|col| (c * col.dot(&self.response)).abs())
            .fold(0.0, f64::max)
    }
}

pub fn solve(problem: &PenalizedLsProblem<'_>, settings: &LsSettings) -> Result<LsSolution> {
    run(problem, settings, None)
}

/// As [`solve`], also returning the objective after every sweep.
pub fn solve_traced(
    problem: &PenalizedLsProblem<'_>,
    settings: &LsSettings,
) -> Result<(LsSolution, Vec<f64>)> {
    let mut trace = Vec::new();
    let sol = run(problem, settings, Some(&mut trace))?;
    Ok((sol, trace))
}

fn run(
    problem: &PenalizedLsProblem<'_>,
    settings: &LsSettings,
    mut trace: Option<&mut Vec<f64>>,
) -> Result<LsSolution> {
    problem.validate()?;
    let x = &problem.design;
    let k_total = x.ncols();
    let c = problem.curvature();
    let norms: Vec<f64> = x.columns().into_iter().map(|col| col.dot(&col)).collect();

    let mut b = match &problem.warm_start {
        Some(w) => w.to_owned(),
        None => Array1::zeros(k_total),
    };
    for k in 0..k_total {
        if norms[k] == 0.0 {
            b[k] = 0.0;
        }
    }
    let mut r = problem.residual(b.view());

    let update = |k: usize, b: &mut Array1<f64>, r: &mut Array1<f64>| -> f64 {
        if norms[k] == 0.0 {
            return 0.0;
        }
        let col = x.column(k);
        let old = b[k];
        let z = c * (col.dot(r) + norms[k] * old);
        let thresh = if problem.weights[k] { problem.penalty } else { 0.0 };
        let new = soft_threshold(z, thresh) / (c * norms[k]);
        let delta = new - old;
        if delta != 0.0 {
            Zip::from(&mut *r).and(&col).for_each(|ri, &xi| *ri -= xi * delta);
            b[k] = new;
        }
        delta.abs()
    };

    let mut sweeps = 0;
    let mut converged = false;
    while sweeps < settings.max_sweeps {
        let mut max_change = 0.0f64;
        for k in 0..k_total {
            max_change = max_change.max(update(k, &mut b, &mut r));
        }
        sweeps += 1;
        if let Some(t) = trace.as_deref_mut() {
            t.push(problem.objective(b.view()));
        }
        if max_change < settings.tol {
            converged = true;
            break;
        }
        // Iterate on the active set until it settles, then confirm with a
        // full sweep.
        loop {
            if sweeps >= settings.max_sweeps {
                break;
            }
            let active: Vec<usize> = (0..k_total)
                .filter(|&k| b[k] != 0.0 || !problem.weights[k])
                .collect();
            let mut change = 0.0f64;
            for &k in &active {
                change = change.max(update(k, &mut b, &mut r));
            }
            sweeps += 1;
            if let Some(t) = trace.as_deref_mut() {
                t.push(problem.objective(b.view()));
            }
            if change < settings.tol {
                break;
            }
        }
    }
    Ok(LsSolution {
        coef: b,
        sweeps,
        converged,
    })
}
