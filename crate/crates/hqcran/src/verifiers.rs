//! The two comparison verifiers: complete MIP verification by branch and
//! bound, and the incomplete triangle-relaxation LP. Also hosts the
//! phase-enumeration reference used to cross-check the exact path.

use crate::bounds::{BoundsStack, Stability, StabilityMap};
use crate::encode::MipProblem;
use crate::lp::{solve_lp, LpProblem, LpStatus};
use crate::milp::{solve_milp, MilpProblem, MilpStatus};
use crate::model::Network;
use crate::{Error, Result};

pub const DEFAULT_NODE_LIMIT: usize = 1 << 20;

/// Strict certification rule: a margin bound certifies only when positive.
pub fn certifies(bound: f64) -> bool {
    bound > 0.0
}

/// Builds the MILP over (z, y) for a target-set problem.
fn milp_of(mp: &MipProblem) -> Result<MilpProblem> {
    let n = mp.n_z + mp.n_y;
    let mut c = mp.g.clone();
    c.resize(n, 0.0);
    let mut lp = LpProblem::minimize(c);
    for j in 0..mp.n_z {
        lp.set_bounds(j, mp.z_lower[j], mp.z_upper[j]);
    }
    for j in mp.n_z..n {
        lp.set_bounds(j, 0.0, 1.0);
    }
    for r in 0..mp.m_b {
        let mut row = mp.a.row(r).to_vec();
        row.extend_from_slice(mp.b.row(r));
        lp.add_ge(row, mp.b_rhs[r]);
    }
    for r in 0..mp.m_d {
        let mut row = mp.c.row(r).to_vec();
        row.resize(n, 0.0);
        lp.add_ge(row, mp.d_rhs[r]);
    }
    let mask: Vec<bool> = (0..n).map(|j| j >= mp.n_z).collect();
    MilpProblem::new(lp, mask)
}

/// Complete verification: m* = min gᵀz over the exact MIP, or `None` when
/// the constraint system is infeasible.
pub fn verify_exact(mp: &MipProblem) -> Result<Option<f64>> {
    if mp.target.is_none() {
        return Err(Error::InvalidArgument("no target class set".into()));
    }
    let milp = milp_of(mp)?;
    let sol = solve_milp(&milp, DEFAULT_NODE_LIMIT)?;
    match sol.status {
        MilpStatus::Optimal => Ok(Some(sol.objective)),
        MilpStatus::Infeasible => Ok(None),
        MilpStatus::NodeLimit => Err(Error::NodeLimit {
            incumbent: if sol.primal.is_empty() {
                None
            } else {
                Some(sol.objective)
            },
            bound: sol.best_bound,
        }),
    }
}

/// The fixed-phase LP q(y): the MIP with y frozen to a binary vector.
/// Returns `None` when that LP is infeasible.
pub fn fixed_phase_value(mp: &MipProblem, y: &[u8]) -> Result<Option<f64>> {
    let mut lp = LpProblem::minimize(mp.g.clone());
    for j in 0..mp.n_z {
        lp.set_bounds(j, mp.z_lower[j], mp.z_upper[j]);
    }
    let rhs = mp.b_minus_by(y);
    for (r, &b) in rhs.iter().enumerate() {
        lp.add_ge(mp.a.row(r).to_vec(), b);
    }
    for (r, &d) in mp.d_rhs.iter().enumerate() {
        lp.add_ge(mp.c.row(r).to_vec(), d);
    }
    let sol = solve_lp(&lp)?;
    match sol.status {
        LpStatus::Optimal => Ok(Some(sol.objective)),
        LpStatus::Infeasible => Ok(None),
        LpStatus::Unbounded => Err(Error::Unbounded),
        LpStatus::IterationLimit => Err(Error::IterationLimit),
    }
}

/// Reference route: enumerate all 2^n_y ReLU phase patterns, solve the LP
/// of each on the raw matrices (no variable boxes) and take the minimum.
/// Independent of both the branch-and-bound and the Benders paths.
pub fn enumerate_exact(mp: &MipProblem) -> Result<Option<f64>> {
    if mp.n_y > 24 {
        return Err(Error::InvalidArgument(format!(
            "{} unstable neurons is too many to enumerate",
            mp.n_y
        )));
    }
    let mut best: Option<f64> = None;
    for mask in 0u32..(1u32 << mp.n_y) {
        let y: Vec<u8> = (0..mp.n_y).map(|k| ((mask >> k) & 1) as u8).collect();
        let mut lp = LpProblem::minimize(mp.g.clone());
        let rhs = mp.b_minus_by(&y);
        for (r, &b) in rhs.iter().enumerate() {
            lp.add_ge(mp.a.row(r).to_vec(), b);
        }
        for (r, &d) in mp.d_rhs.iter().enumerate() {
            lp.add_ge(mp.c.row(r).to_vec(), d);
        }
        let sol = solve_lp(&lp)?;
        match sol.status {
            LpStatus::Optimal => {
                best = Some(best.map_or(sol.objective, |b: f64| b.min(sol.objective)));
            }
            LpStatus::Infeasible => {}
            LpStatus::Unbounded => return Err(Error::Unbounded),
            LpStatus::IterationLimit => return Err(Error::IterationLimit),
        }
    }
    Ok(best)
}

/// Incomplete verification: each unstable ReLU is replaced by its triangle
/// envelope {z ≥ 0, z ≥ ẑ, (u−ℓ)z − u·ẑ ≤ −u·ℓ}, stable neurons by the
/// identity or zero. Returns a lower bound on the exact margin.
pub fn verify_convex(
    net: &Network,
    bs: &BoundsStack,
    sm: &StabilityMap,
    class_c: usize,
    target: usize,
) -> Result<f64> {
    let dims = net.dims();
    let n_z: usize = dims.iter().sum();
    let mut off = vec![0usize];
    for &d in &dims {
        off.push(off.last().unwrap() + d);
    }
    let out_off = n_z - net.output_dim();

    let mut c_vec = vec![0.0; n_z];
    c_vec[out_off + class_c] = 1.0;
    c_vec[out_off + target] = -1.0;
    let mut lp = LpProblem::minimize(c_vec);
    for k in 0..dims[0] {
        lp.set_bounds(k, bs.input_lower[k], bs.input_upper[k]);
    }
    for (i, lb) in bs.layers.iter().enumerate() {
        for j in 0..dims[i + 1] {
            lp.set_bounds(off[i + 1] + j, lb.post_lower[j], lb.post_upper[j]);
        }
    }

    for (i, layer) in net.layers.iter().enumerate() {
        for j in 0..dims[i + 1] {
            let own = off[i + 1] + j;
            let v = layer.bias[j];
            // Row template for z_j − ẑ_j over z.
            let m_row = |scale_z: f64, scale_w: f64| {
                let mut row = vec![0.0; n_z];
                for (k, &w) in layer.weights.row(j).iter().enumerate() {
                    row[off[i] + k] = scale_w * w;
                }
                row[own] += scale_z;
                row
            };
            match sm.tags[i][j] {
                Stability::StableActive | Stability::Linear => {
                    // z = ẑ
                    lp.add_eq(m_row(1.0, -1.0), v);
                }
                Stability::StableInactive => {
                    lp.add_eq(m_row(1.0, 0.0), 0.0);
                }
                Stability::Unstable => {
                    let l = bs.layers[i].pre_lower[j];
                    let u = bs.layers[i].pre_upper[j];
                    // z ≥ ẑ  (z ≥ 0 is already a variable bound)
                    lp.add_ge(m_row(1.0, -1.0), v);
                    // (u−ℓ)z ≤ u(ẑ − ℓ)  ⇔  u·ẑ − (u−ℓ)z ≥ u·ℓ
                    lp.add_ge(m_row(-(u - l), u), u * l - u * v);
                }
            }
        }
    }

    let sol = solve_lp(&lp)?;
    match sol.status {
        LpStatus::Optimal => Ok(sol.objective),
        LpStatus::Infeasible => Err(Error::InvalidArgument(
            "relaxation infeasible; bounds and network are inconsistent".into(),
        )),
        LpStatus::Unbounded => Err(Error::Unbounded),
        LpStatus::IterationLimit => Err(Error::IterationLimit),
    }
}
