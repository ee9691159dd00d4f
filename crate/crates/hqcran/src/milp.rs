//! Small dense MILP engine: best-first branch and bound on LP relaxations.
//!
//! Nodes are ordered by their parent relaxation value with FIFO tie-break,
//! branching picks the most-fractional masked variable (lowest index on
//! ties), and a node is pruned when its relaxation cannot beat the
//! incumbent by more than 1e-9. Deterministic by construction.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::lp::{solve_lp, LpProblem, LpStatus, Sense};
use crate::{Error, Result};

/// An LP plus an integrality mask; masked variables are binary.
#[derive(Clone, Debug)]
pub struct MilpProblem {
    pub lp: LpProblem,
    pub binary: Vec<bool>,
}

impl MilpProblem {
    /// Clamps masked variables into [0, 1].
    pub fn new(mut lp: LpProblem, binary: Vec<bool>) -> Result<Self> {
        if binary.len() != lp.n() {
            return Err(Error::InvalidArgument(
                "mask length does not match variables".into(),
            ));
        }
        for (j, &is_bin) in binary.iter().enumerate() {
            if is_bin {
                lp.lo[j] = lp.lo[j].max(0.0);
                lp.hi[j] = lp.hi[j].min(1.0);
            }
        }
        Ok(MilpProblem { lp, binary })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MilpStatus {
    Optimal,
    Infeasible,
    NodeLimit,
}

#[derive(Clone, Debug)]
pub struct MilpSolution {
    pub status: MilpStatus,
    pub objective: f64,
    pub primal: Vec<f64>,
    pub nodes: usize,
    /// Proven bound on the optimum (equals `objective` when optimal).
    pub best_bound: f64,
}

const INT_TOL: f64 = 1e-6;
const PRUNE_TOL: f64 = 1e-9;

struct OpenNode {
    bound: f64,
    id: u64,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl PartialEq for OpenNode {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id
    }
}
impl Eq for OpenNode {}

impl Ord for OpenNode {
    // BinaryHeap pops the maximum; invert so the smallest bound (then the
    // oldest node) comes out first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then_with(|| other.id.cmp(&self.id))
    }
}
impl PartialOrd for OpenNode {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Solves the MILP by best-first branch and bound, counting one node per
/// LP relaxation solved.
pub fn solve_milp(p: &MilpProblem, node_limit: usize) -> Result<MilpSolution> {
    // Work in min space internally.
    let maximize = p.lp.sense == Sense::Max;
    let mut base = p.lp.clone();
    base.sense = Sense::Min;
    if maximize {
        for c in &mut base.c {
            *c = -*c;
        }
    }

    let mut heap = BinaryHeap::new();
    let mut next_id = 0u64;
    heap.push(OpenNode {
        bound: f64::NEG_INFINITY,
        id: next_id,
        lo: base.lo.clone(),
        hi: base.hi.clone(),
    });
    next_id += 1;

    let mut incumbent: Option<(f64, Vec<f64>)> = None;
    let mut nodes = 0usize;

    while let Some(node) = heap.pop() {
        if let Some((best, _)) = &incumbent {
            if node.bound >= best - PRUNE_TOL {
                continue;
            }
        }
        if nodes >= node_limit {
            heap.push(node);
            break;
        }
        nodes += 1;

        let mut lp = base.clone();
        lp.lo = node.lo;
        lp.hi = node.hi;
        let sol = solve_lp(&lp)?;
        match sol.status {
            LpStatus::Infeasible => continue,
            LpStatus::Unbounded => return Err(Error::Unbounded),
            LpStatus::IterationLimit => return Err(Error::IterationLimit),
            LpStatus::Optimal => {}
        }
        if let Some((best, _)) = &incumbent {
            if sol.objective >= best - PRUNE_TOL {
                continue;
            }
        }

        // Most-fractional masked variable, lowest index on ties.
        let mut branch: Option<(usize, f64)> = None;
        for (j, &is_bin) in p.binary.iter().enumerate() {
            if !is_bin {
                continue;
            }
            let x = sol.primal[j];
            let frac_dist = (x - x.round()).abs();
            if frac_dist <= INT_TOL {
                continue;
            }
            let score = (x - 0.5).abs();
            match branch {
                Some((_, s)) if s <= score => {}
                _ => branch = Some((j, score)),
            }
        }

        match branch {
            None => {
                incumbent = Some((sol.objective, sol.primal));
            }
            Some((j, _)) => {
                let mut down = OpenNode {
                    bound: sol.objective,
                    id: next_id,
                    lo: lp.lo.clone(),
                    hi: lp.hi.clone(),
                };
                next_id += 1;
                down.hi[j] = 0.0;
                let mut up = OpenNode {
                    bound: sol.objective,
                    id: next_id,
                    lo: lp.lo,
                    hi: lp.hi,
                };
                next_id += 1;
                up.lo[j] = 1.0;
                heap.push(down);
                heap.push(up);
            }
        }
    }

    let open_bound = heap.iter().map(|n| n.bound).fold(f64::INFINITY, f64::min);
    let exhausted = heap.is_empty();
    let sign = if maximize { -1.0 } else { 1.0 };
    match incumbent {
        Some((obj, primal)) => {
            let status = if exhausted || open_bound >= obj - PRUNE_TOL {
                MilpStatus::Optimal
            } else {
                MilpStatus::NodeLimit
            };
            let bound = if status == MilpStatus::Optimal {
                obj
            } else {
                open_bound
            };
            Ok(MilpSolution {
                status,
                objective: sign * obj,
                primal,
                nodes,
                best_bound: sign * bound,
            })
        }
        None if exhausted => Ok(MilpSolution {
            status: MilpStatus::Infeasible,
            objective: f64::NAN,
            primal: Vec::new(),
            nodes,
            best_bound: f64::NAN,
        }),
        None => Ok(MilpSolution {
            status: MilpStatus::NodeLimit,
            objective: f64::NAN,
            primal: Vec::new(),
            nodes,
            best_bound: sign * open_bound,
        }),
    }
}
