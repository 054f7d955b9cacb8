//! Branch-and-bound over the LP relaxation.
//!
//! Best-bound node selection with depth-preferred tie-breaking (dives after a
//! branching), branching on the most fractional binary, and a
//! round-and-fix heuristic to pull integral incumbents out of fractional
//! relaxations early.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::Instant;

use crate::model::{MilpModel, VarKind};
use crate::simplex::{lp_solve, LpStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    Limit,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub status: SolveStatus,
    pub assignment: Vec<f64>,
    pub objective: f64,
    pub nodes: usize,
    pub lp_iterations: usize,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct SolveParams {
    pub int_tol: f64,
    pub gap_tol: f64,
    pub node_limit: usize,
    pub time_limit_seconds: f64,
    /// Stop at the first integral incumbent instead of proving optimality.
    pub first_feasible: bool,
}

impl Default for SolveParams {
    fn default() -> Self {
        Self {
            int_tol: 1e-6,
            gap_tol: 1e-6,
            node_limit: 200_000,
            time_limit_seconds: f64::INFINITY,
            first_feasible: false,
        }
    }
}

struct Node {
    bound: f64,
    depth: usize,
    id: usize,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp_key() == other.cmp_key()
    }
}
impl Eq for Node {}
impl Node {
    fn cmp_key(&self) -> (f64, usize, usize) {
        (self.bound, self.depth, self.id)
    }
}
impl Ord for Node {
    fn cmp(&self, other: &Self) -> Ordering {
        // BinaryHeap is a max-heap; we want the lowest bound first, then the
        // deepest node, then the lowest id for determinism.
        other
            .bound
            .partial_cmp(&self.bound)
            .unwrap_or(Ordering::Equal)
            .then_with(|| self.depth.cmp(&other.depth))
            .then_with(|| other.id.cmp(&self.id))
    }
}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn binary_indices(model: &MilpModel) -> Vec<usize> {
    model
        .variables
        .iter()
        .enumerate()
        .filter(|(_, v)| v.kind == VarKind::Binary)
        .map(|(j, _)| j)
        .collect()
}

fn most_fractional(x: &[f64], binaries: &[usize], lo: &[f64], hi: &[f64], tol: f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for &j in binaries {
        if lo[j] == hi[j] {
            continue;
        }
        let frac = (x[j] - x[j].round()).abs();
        if frac > tol {
            let score = (x[j] - 0.5).abs(); // lower = more fractional
            match best {
                Some((_, s)) if s <= score => {}
                _ => best = Some((j, score)),
            }
        }
    }
    best.map(|(j, _)| j)
}

/// Branch-and-bound MILP solve.
pub fn solve(model: &MilpModel, params: &SolveParams) -> Result<SolveResult, crate::MilpError> {
    model.validate()?;
    let start = Instant::now();
    let binaries = binary_indices(model);
    let lo0: Vec<f64> = model.variables.iter().map(|v| v.lower).collect();
    let hi0: Vec<f64> = model.variables.iter().map(|v| v.upper).collect();

    let mut nodes = 0usize;
    let mut lp_iterations = 0usize;
    let mut next_id = 0usize;
    let mut incumbent: Option<(f64, Vec<f64>)> = None;
    let mut heap = BinaryHeap::new();
    heap.push(Node {
        bound: f64::NEG_INFINITY,
        depth: 0,
        id: 0,
        lo: lo0,
        hi: hi0,
    });
    next_id += 1;
    let mut hit_limit = false;
    let mut root_unbounded = false;

    while let Some(node) = heap.pop() {
        if let Some((obj, _)) = &incumbent {
            if params.first_feasible {
                break;
            }
            if node.bound >= obj - params.gap_tol {
                continue;
            }
        }
        if nodes >= params.node_limit || start.elapsed().as_secs_f64() > params.time_limit_seconds {
            hit_limit = true;
            break;
        }
        nodes += 1;
        let rel = lp_solve(model, &node.lo, &node.hi);
        lp_iterations += rel.iterations;
        match rel.status {
            LpStatus::Infeasible => continue,
            LpStatus::Unbounded => {
                if node.depth == 0 {
                    root_unbounded = true;
                    break;
                }
                // An unbounded subproblem with binaries fixed means the MILP
                // is unbounded as soon as any leaf is feasible; treat as such.
                root_unbounded = true;
                break;
            }
            LpStatus::IterationLimit => {
                hit_limit = true;
                continue;
            }
            LpStatus::Optimal => {}
        }
        if let Some((obj, _)) = &incumbent {
            if rel.objective >= obj - params.gap_tol {
                continue;
            }
        }
        match most_fractional(&rel.x, &binaries, &node.lo, &node.hi, params.int_tol) {
            None => {
                // Near-integral values scaled by big-M coefficients can hide
                // real violations; polish by pinning binaries to exact 0/1
                // and re-solving before accepting an incumbent.
                let mut plo = node.lo.clone();
                let mut phi = node.hi.clone();
                let mut exact = true;
                for &b in &binaries {
                    let v = rel.x[b].round().clamp(node.lo[b], node.hi[b]);
                    if rel.x[b] != v {
                        exact = false;
                    }
                    plo[b] = v;
                    phi[b] = v;
                }
                if exact {
                    incumbent = Some((rel.objective, rel.x));
                } else {
                    let pol = lp_solve(model, &plo, &phi);
                    lp_iterations += pol.iterations;
                    if pol.status == LpStatus::Optimal {
                        let better = incumbent
                            .as_ref()
                            .map(|(obj, _)| pol.objective < obj - params.gap_tol)
                            .unwrap_or(true);
                        if better {
                            incumbent = Some((pol.objective, pol.x));
                        }
                    } else if let Some(j) =
                        most_fractional(&rel.x, &binaries, &node.lo, &node.hi, 0.0)
                    {
                        // The rounding was infeasible: the tiny fraction was
                        // load-bearing, so branch on it exactly.
                        for fix in [0.0, 1.0] {
                            let mut lo = node.lo.clone();
                            let mut hi = node.hi.clone();
                            lo[j] = fix;
                            hi[j] = fix;
                            heap.push(Node {
                                bound: rel.objective,
                                depth: node.depth + 1,
                                id: next_id,
                                lo,
                                hi,
                            });
                            next_id += 1;
                        }
                    }
                }
            }
            Some(j) => {
                // Round-and-fix heuristic: one extra LP with every binary
                // pinned to its rounded relaxation value. Throttled once an
                // incumbent exists; the LP is as costly as a node.
                if incumbent.is_none() || nodes % 8 == 0 {
                    let mut hlo = node.lo.clone();
                    let mut hhi = node.hi.clone();
                    for &b in &binaries {
                        let v = rel.x[b].round().clamp(node.lo[b], node.hi[b]);
                        hlo[b] = v;
                        hhi[b] = v;
                    }
                    let heur = lp_solve(model, &hlo, &hhi);
                    lp_iterations += heur.iterations;
                    if heur.status == LpStatus::Optimal {
                        let better = incumbent
                            .as_ref()
                            .map(|(obj, _)| heur.objective < obj - params.gap_tol)
                            .unwrap_or(true);
                        if better {
                            incumbent = Some((heur.objective, heur.x));
                            if heur.objective <= rel.objective + params.gap_tol && node.depth == 0 {
                                // Root bound met; nothing left to prove.
                                break;
                            }
                        }
                    }
                }
                for fix in [0.0, 1.0] {
                    let mut lo = node.lo.clone();
                    let mut hi = node.hi.clone();
                    lo[j] = fix;
                    hi[j] = fix;
                    heap.push(Node {
                        bound: rel.objective,
                        depth: node.depth + 1,
                        id: next_id,
                        lo,
                        hi,
                    });
                    next_id += 1;
                }
            }
        }
    }

    let wall = start.elapsed().as_secs_f64();
    if root_unbounded {
        return Ok(SolveResult {
            status: SolveStatus::Unbounded,
            assignment: vec![],
            objective: f64::NEG_INFINITY,
            nodes,
            lp_iterations,
            wall_seconds: wall,
        });
    }
    match incumbent {
        Some((obj, x)) => Ok(SolveResult {
            status: if hit_limit {
                SolveStatus::Limit
            } else {
                SolveStatus::Optimal
            },
            assignment: x,
            objective: obj,
            nodes,
            lp_iterations,
            wall_seconds: wall,
        }),
        None => Ok(SolveResult {
            status: if hit_limit {
                SolveStatus::Limit
            } else {
                SolveStatus::Infeasible
            },
            assignment: vec![],
            objective: f64::INFINITY,
            nodes,
            lp_iterations,
            wall_seconds: wall,
        }),
    }
}
