//! Symmetrized graph estimates from per-node fits.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{fit_all_nodes, FitOptions};
use crate::fused::FusedBasis;
use crate::model::{NodeFit, PenaltyConfig, ReplicateDataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rule {
    /// Edge when both directed coefficients are nonzero.
    #[default]
    Intersection,
    /// Edge when either is.
    Union,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Rule::Intersection => "intersection",
            Rule::Union => "union",
        })
    }
}

impl FromStr for Rule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "intersection" | "and" => Ok(Rule::Intersection),
            "union" | "or" => Ok(Rule::Union),
            other => Err(Error::Parse(format!("unknown rule '{other}'"))),
        }
    }
}

/// Undirected graph over `p` nodes. Edges are 0-based `(j, k)` with `j < k`,
/// each carrying the pair `(theta_jk, theta_kj)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphEstimate {
    pub p: usize,
    pub rule: Rule,
    pub edges: BTreeMap<(usize, usize), (f64, f64)>,
}

#[derive(Serialize, Deserialize)]
struct GraphJson {
    p: usize,
    rule: Rule,
    edges: Vec<[usize; 2]>,
    coefficients: BTreeMap<String, [f64; 2]>,
}

impl GraphEstimate {
    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, j: usize, k: usize) -> bool {
        let key = if j < k { (j, k) } else { (k, j) };
        self.edges.contains_key(&key)
    }

    pub fn edge_list(&self) -> Vec<(usize, usize)> {
        self.edges.keys().copied().collect()
    }

    /// JSON form with 1-based node labels.
    pub fn to_json_value(&self) -> serde_json::Value {
        let edges = self.edges.keys().map(|&(j, k)| [j + 1, k + 1]).collect();
        let coefficients = self
            .edges
            .iter()
            .map(|(&(j, k), &(a, b))| (format!("{},{}", j + 1, k + 1), [a, b]))
            .collect();
        serde_json::to_value(GraphJson {
            p: self.p,
            rule: self.rule,
            edges,
            coefficients,
        })
        .expect("graph serializes")
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let raw: GraphJson = serde_json::from_str(s)?;
        let mut edges = BTreeMap::new();
        for [a, b] in raw.edges {
            if a == 0 || b == 0 || a > raw.p || b > raw.p || a == b {
                return Err(Error::Parse(format!("invalid edge ({a},{b}) for p={}", raw.p)));
            }
            let (j, k) = if a < b { (a, b) } else { (b, a) };
            let c = raw
                .coefficients
                .get(&format!("{j},{k}"))
                .copied()
                .unwrap_or([f64::NAN, f64::NAN]);
            edges.insert((j - 1, k - 1), (c[0], c[1]));
        }
        Ok(Self {
            p: raw.p,
            rule: raw.rule,
            edges,
        })
    }
}

/// Combines one fit per node into an undirected graph. A coefficient counts
/// as nonzero when its magnitude exceeds `zero_tol`.
pub fn symmetrize(fits: &[NodeFit], rule: Rule, zero_tol: f64) -> Result<GraphEstimate> {
    let p = fits.len();
    let mut by_node: Vec<Option<&NodeFit>> = vec![None; p];
    for fit in fits {
        if fit.j >= p || fit.theta.len() + 1 != p {
            return Err(Error::InvalidDimension(format!(
                "fit for node {} inconsistent with p={p}",
                fit.j
            )));
        }
        by_node[fit.j] = Some(fit);
    }
    let by_node: Vec<&NodeFit> = by_node
        .into_iter()
        .enumerate()
        .map(|(j, f)| f.ok_or_else(|| Error::Precondition(format!("missing fit for node {}", j + 1))))
        .collect::<Result<_>>()?;

    let mut edges = BTreeMap::new();
    for j in 0..p {
        for k in j + 1..p {
            let a = by_node[j].theta_for(k);
            let b = by_node[k].theta_for(j);
            let (nz_a, nz_b) = (a.abs() > zero_tol, b.abs() > zero_tol);
            let keep = match rule {
                Rule::Intersection => nz_a && nz_b,
                Rule::Union => nz_a || nz_b,
            };
            if keep {
                edges.insert((j, k), (a, b));
            }
        }
    }
    Ok(GraphEstimate { p, rule, edges })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathPoint {
    pub config: PenaltyConfig,
    pub graph: GraphEstimate,
    pub converged: bool,
}

impl PathPoint {
    pub fn edges(&self) -> usize {
        self.graph.edge_count()
    }
}

/// Fits all nodes at each config in turn, warm-starting each from the
/// previous one, and symmetrizes.
pub fn edge_count_path(
    d: &ReplicateDataset,
    grid: &[PenaltyConfig],
    basis: &FusedBasis,
    opts: &FitOptions,
    rule: Rule,
) -> Result<Vec<PathPoint>> {
    if grid.is_empty() {
        return Err(Error::Precondition("empty tuning grid".into()));
    }
    let mut out = Vec::with_capacity(grid.len());
    let mut warm: Option<Vec<NodeFit>> = None;
    for cfg in grid {
        let fits = fit_all_nodes(d, cfg, basis, opts, warm.as_deref())?;
        let graph = symmetrize(&fits, rule, 0.0)?;
        out.push(PathPoint {
            config: *cfg,
            converged: fits.iter().all(|f| f.converged),
            graph,
        });
        warm = Some(fits);
    }
    Ok(out)
}
