//! The HQ-CRAN engine: bounded dual sub problem, Pareto-cut additional
//! problem with core-point tracking, FIFO cut pool, master solves over
//! three interchangeable backends, and the per-target driver loop.
//!
//! One iteration prices the current binary point y through the bounded dual
//!
//! ```text
//! max α(b − By) + βd   s.t.  αA + βC = gᵀ,  0 ≤ α ≤ ᾱ,  0 ≤ β ≤ β̄,
//! ```
//!
//! turns the optimizer into a cut (an extreme ray whenever a component
//! lands on its box bound, an extreme point otherwise), and re-solves the
//! master `min η` subject to all point cuts `α(b−By) + βd ≤ η` and ray cuts
//! `… ≤ 0`. The v2 variant replaces the sub cut by a Pareto-optimal cut:
//! the additional problem re-optimizes toward the running core point over
//! the optimal face of the sub problem, and the master breaks η ties
//! toward the previous iterate in Hamming distance. The loop stops once ŝ − master ≤ ξ
//! (or the master overtakes ŝ) and the fixed-phase LP at the master's y is
//! feasible; its value is the reported bound m_t.

use std::collections::VecDeque;
use std::time::Instant;

use crate::encode::MipProblem;
use crate::lp::{solve_lp, LpProblem, LpStatus};
use crate::milp::{solve_milp, MilpProblem, MilpStatus};
use crate::model::{Ball, Network};
use crate::qubo::{
    assemble_qubo, eta_bar, qubo_to_ising, size_eta_bits, size_slack_bits, solve_exhaustive,
    solve_sa, BitLayout, QuboModel,
};
use crate::verifiers::fixed_phase_value;
use crate::{Error, Result};

/// Dual solutions within this distance of their box bound mark a cut as an
/// extreme ray.
pub const RAY_TOL: f64 = 1e-6;

const MASTER_NODE_LIMIT: usize = 1 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CutKind {
    ExtremePoint,
    ExtremeRay,
}

impl CutKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CutKind::ExtremePoint => "point",
            CutKind::ExtremeRay => "ray",
        }
    }
}

/// One Benders cut: the dual pair (α, β), its scalar e = αb + βd and the
/// cached row αB, so the cut value at y is e − (αB)·y.
#[derive(Clone, Debug)]
pub struct Cut {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub kind: CutKind,
    pub e_k: f64,
    pub row: Vec<f64>,
    pub birth: usize,
    pub slack_bits: usize,
}

impl Cut {
    pub fn value_at(&self, y: &[u8]) -> f64 {
        self.e_k
            - self
                .row
                .iter()
                .zip(y)
                .map(|(r, &yi)| r * f64::from(yi))
                .sum::<f64>()
    }

    pub fn row_l1(&self) -> f64 {
        self.row.iter().map(|v| v.abs()).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    V1,
    V2,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::V1 => "v1",
            Variant::V2 => "v2",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MasterBackend {
    Milp,
    Sa,
    Exhaustive,
}

impl MasterBackend {
    pub fn as_str(self) -> &'static str {
        match self {
            MasterBackend::Milp => "milp",
            MasterBackend::Sa => "sa",
            MasterBackend::Exhaustive => "exhaustive",
        }
    }
}

/// `Paper` certifies on m_t > 0 alone; `Sound` additionally requires the
/// final master objective to be positive, which guards against suboptimal
/// annealing masters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CertifyMode {
    Paper,
    Sound,
}

/// All knobs of the decomposition loop.
#[derive(Clone, Debug)]
pub struct HqcranConfig {
    /// Iteration cap T.
    pub max_iterations: usize,
    /// Target gap ξ between ŝ and the master objective.
    pub target_gap: f64,
    /// Dual box bounds ᾱ and β̄, broadcast over all components.
    pub alpha_bound: f64,
    pub beta_bound: f64,
    /// Fixed-point resolutions ω_p (η) and ω_a (slacks).
    pub omega_p: f64,
    pub omega_a: f64,
    /// Point-cut pool capacity φ; `None` keeps every cut. Ray cuts are
    /// always kept.
    pub cut_capacity: Option<usize>,
    pub variant: Variant,
    pub backend: MasterBackend,
    pub certify_mode: CertifyMode,
    /// Stop as soon as the master objective turns positive or ŝ goes
    /// negative.
    pub early_stop: bool,
    pub sa_reads: usize,
    pub sa_sweeps: usize,
    pub seed: u64,
    /// Optional coupling-prune fraction applied to annealing masters.
    pub prune_threshold: Option<f64>,
    /// Keep verifying the remaining targets after the first failure.
    pub all_targets: bool,
    /// Record the assembled master model of every iteration.
    pub keep_master_models: bool,
}

impl HqcranConfig {
    /// Baseline variant: sub-problem cuts only, unbounded cut pool.
    pub fn v1() -> Self {
        HqcranConfig {
            variant: Variant::V1,
            cut_capacity: None,
            ..Self::v2()
        }
    }

    /// Improved variant: Pareto cuts, Hamming regularizer, pool capacity 5.
    pub fn v2() -> Self {
        HqcranConfig {
            max_iterations: 500,
            target_gap: 1.0,
            alpha_bound: 5.0,
            beta_bound: 5.0,
            omega_p: 0.01,
            omega_a: 0.1,
            cut_capacity: Some(5),
            variant: Variant::V2,
            backend: MasterBackend::Milp,
            certify_mode: CertifyMode::Paper,
            early_stop: false,
            sa_reads: 100,
            sa_sweeps: 50_000,
            seed: 0,
            prune_threshold: None,
            all_targets: false,
            keep_master_models: false,
        }
    }

    /// The annealing-oriented setting: 15 iterations, gap 1.
    pub fn quantum_style(variant: Variant) -> Self {
        let base = match variant {
            Variant::V1 => Self::v1(),
            Variant::V2 => Self::v2(),
        };
        HqcranConfig {
            max_iterations: 15,
            ..base
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iterations < 1 {
            return Err(Error::InvalidArgument("need at least one iteration".into()));
        }
        if self.target_gap.is_nan() || self.target_gap <= 0.0 {
            return Err(Error::InvalidArgument("target gap must be positive".into()));
        }
        if [self.alpha_bound, self.beta_bound]
            .iter()
            .any(|b| b.is_nan() || *b <= 0.0)
        {
            return Err(Error::InvalidArgument(
                "dual bounds must be positive".into(),
            ));
        }
        for (name, w) in [("omega_p", self.omega_p), ("omega_a", self.omega_a)] {
            if w.is_nan() || w <= 0.0 || w > 1.0 {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be in (0, 1], got {w}"
                )));
            }
        }
        if self.cut_capacity == Some(0) {
            return Err(Error::InvalidArgument(
                "cut capacity must be at least 1".into(),
            ));
        }
        if self.sa_reads < 1 || self.sa_sweeps < 1 {
            return Err(Error::InvalidArgument(
                "reads and sweeps must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

impl Default for HqcranConfig {
    fn default() -> Self {
        Self::v2()
    }
}

/// Mutable loop state for one target.
#[derive(Clone, Debug)]
pub struct MasterState {
    pub cuts: VecDeque<Cut>,
    /// The iterate y^[t−1]: the phase pattern the sub problem prices next.
    pub y_prev: Vec<u8>,
    /// The phase pattern behind ŝ. The Hamming regularizer anchors here —
    /// the serious-step center of regularized decomposition — rather than
    /// on the raw last iterate, which can drag the master toward stale
    /// regions.
    pub incumbent_y: Vec<u8>,
    pub core_point: Vec<f64>,
    /// ŝ, the best (lowest) sub value seen so far.
    pub best_sub: f64,
    pub iteration: usize,
}

impl MasterState {
    pub fn new(n_y: usize) -> Self {
        MasterState {
            cuts: VecDeque::new(),
            y_prev: vec![0; n_y],
            incumbent_y: vec![0; n_y],
            core_point: vec![0.0; n_y],
            best_sub: f64::INFINITY,
            iteration: 0,
        }
    }
}

/// Solves the bounded dual at a binary y. Returns the cut and its
/// objective value s_t.
pub fn solve_sub(
    mp: &MipProblem,
    y: &[u8],
    alpha_bound: f64,
    beta_bound: f64,
) -> Result<(Cut, f64)> {
    let obj: Vec<f64> = y.iter().map(|&b| f64::from(b)).collect();
    solve_dual(mp, &mp.b_minus_by_real(&obj), None, alpha_bound, beta_bound)
}

/// Solves the additional (Pareto-cut) problem: the sub problem's objective
/// evaluated at the core point, restricted to the optimal face of the sub
/// problem just solved at `y` (whose value was `sub_value`). The face
/// restriction keeps the cut tight at the priced iterate, so the gap
/// closes at least as fast as with the plain sub cut, while the core-point
/// objective picks a Pareto-optimal member of that face.
pub fn solve_additional(
    mp: &MipProblem,
    core_point: &[f64],
    y: &[u8],
    sub_value: f64,
    alpha_bound: f64,
    beta_bound: f64,
) -> Result<Cut> {
    let y_real: Vec<f64> = y.iter().map(|&b| f64::from(b)).collect();
    let face = (mp.b_minus_by_real(&y_real), sub_value);
    let (cut, _) = solve_dual(
        mp,
        &mp.b_minus_by_real(core_point),
        Some(&face),
        alpha_bound,
        beta_bound,
    )?;
    Ok(cut)
}

fn solve_dual(
    mp: &MipProblem,
    alpha_obj: &[f64],
    face: Option<&(Vec<f64>, f64)>,
    alpha_bound: f64,
    beta_bound: f64,
) -> Result<(Cut, f64)> {
    let n = mp.m_b + mp.m_d;
    let mut obj = alpha_obj.to_vec();
    obj.extend_from_slice(&mp.d_rhs);
    let mut lp = LpProblem::maximize(obj);
    for j in 0..mp.m_b {
        lp.set_bounds(j, 0.0, alpha_bound);
    }
    for j in mp.m_b..n {
        lp.set_bounds(j, 0.0, beta_bound);
    }
    for col in 0..mp.n_z {
        let mut row = Vec::with_capacity(n);
        for r in 0..mp.m_b {
            row.push(mp.a[(r, col)]);
        }
        for r in 0..mp.m_d {
            row.push(mp.c[(r, col)]);
        }
        lp.add_eq(row, mp.g[col]);
    }
    if let Some((alpha_coeffs, value)) = face {
        let mut row = alpha_coeffs.clone();
        row.extend_from_slice(&mp.d_rhs);
        lp.add_eq(row, *value);
    }
    let sol = solve_lp(&lp)?;
    match sol.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => return Err(Error::SubInfeasible),
        LpStatus::Unbounded => return Err(Error::Unbounded),
        LpStatus::IterationLimit => return Err(Error::IterationLimit),
    }
    let alpha = sol.primal[..mp.m_b].to_vec();
    let beta = sol.primal[mp.m_b..].to_vec();
    let at_bound = alpha.iter().any(|&a| a >= alpha_bound - RAY_TOL)
        || beta.iter().any(|&b| b >= beta_bound - RAY_TOL);
    let kind = if at_bound {
        CutKind::ExtremeRay
    } else {
        CutKind::ExtremePoint
    };
    let e_k: f64 = alpha.iter().zip(&mp.b_rhs).map(|(a, b)| a * b).sum::<f64>()
        + beta.iter().zip(&mp.d_rhs).map(|(a, b)| a * b).sum::<f64>();
    let row = mp.b.vecmat(&alpha);
    Ok((
        Cut {
            alpha,
            beta,
            kind,
            e_k,
            row,
            birth: 0,
            slack_bits: 0,
        },
        sol.objective,
    ))
}

/// ȳ ← ½ȳ + ½y.
pub fn update_core_point(core_point: &[f64], y: &[u8]) -> Vec<f64> {
    core_point
        .iter()
        .zip(y)
        .map(|(c, &yi)| 0.5 * c + 0.5 * f64::from(yi))
        .collect()
}

/// FIFO insert with capacity φ on the optimality cuts: when a new point
/// cut arrives at a full pool, the oldest point cut leaves. Ray cuts fence
/// off infeasible phase patterns and are never evicted — dropping one lets
/// the master wander back into excluded regions and cycle.
pub fn push_cut(state: &mut MasterState, cut: Cut, capacity: Option<usize>) {
    if let Some(cap) = capacity {
        if cut.kind == CutKind::ExtremePoint {
            let points = state
                .cuts
                .iter()
                .filter(|c| c.kind == CutKind::ExtremePoint)
                .count();
            if points >= cap {
                if let Some(pos) = state
                    .cuts
                    .iter()
                    .position(|c| c.kind == CutKind::ExtremePoint)
                {
                    state.cuts.remove(pos);
                }
            }
        }
    }
    state.cuts.push_back(cut);
}

/// The η inputs for the fixed-point range rule. Post-activation upper
/// bounds under a final ReLU; with a linear final layer the magnitude of
/// either side of the interval, clamped non-negative.
fn eta_inputs(mp: &MipProblem) -> Result<(f64, f64)> {
    let t = mp
        .target
        .ok_or_else(|| Error::InvalidArgument("no target class set".into()))?;
    let u = |k: usize| mp.out_upper[k].max(-mp.out_lower[k]).max(0.0);
    Ok((u(mp.class_c), u(t)))
}

/// Exact master: min η subject to the pooled cuts, binary y and the
/// fixed-point box on η. Returns (η, y).
///
/// Under v2 the Hamming distance ½‖y − y_prev‖² acts as an exact secondary
/// objective: a second solve picks, among the η-optimal points, the y
/// closest to the previous iterate. Folding the distance into the primary
/// objective instead would let the regularizer outbid small margin gaps,
/// pin y to its anchor and report master values above the true optimum —
/// the returned η must stay a valid lower bound for the stopping rule and
/// the certificate.
pub fn solve_master_exact(
    state: &MasterState,
    mp: &MipProblem,
    config: &HqcranConfig,
) -> Result<Option<(f64, Vec<u8>)>> {
    let (u_c, u_t) = eta_inputs(mp)?;
    let n_p = size_eta_bits(u_c, u_t, config.omega_p);
    let eta_hi = eta_bar(n_p, config.omega_p);
    let eta_lo = -config.omega_p * f64::powi(2.0, (n_p - 1) as i32);
    let n_y = mp.n_y;

    let mut lp = LpProblem::minimize({
        let mut c = vec![0.0; 1 + n_y];
        c[0] = 1.0;
        c
    });
    lp.set_bounds(0, eta_lo, eta_hi);
    for cut in &state.cuts {
        let mut row = vec![0.0; 1 + n_y];
        if cut.kind == CutKind::ExtremePoint {
            row[0] = 1.0;
        }
        row[1..].copy_from_slice(&cut.row);
        lp.add_ge(row, cut.e_k);
    }
    let mask: Vec<bool> = (0..=n_y).map(|j| j > 0).collect();
    let milp = MilpProblem::new(lp.clone(), mask.clone())?;
    let sol = solve_milp(&milp, MASTER_NODE_LIMIT)?;
    let (eta, y) = match sol.status {
        MilpStatus::Optimal => {
            let y: Vec<u8> = sol.primal[1..]
                .iter()
                .map(|&v| u8::from(v >= 0.5))
                .collect();
            (sol.primal[0], y)
        }
        // Ray cuts from an undersized dual box can empty the master; the
        // target then stays unknown.
        MilpStatus::Infeasible => return Ok(None),
        MilpStatus::NodeLimit => {
            return Err(Error::NodeLimit {
                incumbent: if sol.primal.is_empty() {
                    None
                } else {
                    Some(sol.objective)
                },
                bound: sol.best_bound,
            })
        }
    };
    if config.variant == Variant::V1 {
        return Ok(Some((eta, y)));
    }

    // Stage two: min ½‖y − incumbent‖² over the η-optimal set.
    let mut tie = lp;
    tie.c[0] = 0.0;
    for (i, &yp) in state.incumbent_y.iter().enumerate() {
        tie.c[1 + i] = 0.5 - f64::from(yp);
    }
    tie.hi[0] = eta + 1e-9;
    let milp = MilpProblem::new(tie, mask)?;
    let sol = solve_milp(&milp, MASTER_NODE_LIMIT)?;
    match sol.status {
        MilpStatus::Optimal => {
            let y = sol.primal[1..]
                .iter()
                .map(|&v| u8::from(v >= 0.5))
                .collect();
            Ok(Some((eta, y)))
        }
        // Numerical slack can starve the tie-break stage; the stage-one
        // point is already optimal, keep it.
        MilpStatus::Infeasible => Ok(Some((eta, y))),
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

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TargetStatus {
    Certified,
    Unknown,
    IterationCap,
    SubInfeasible,
}

impl TargetStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            TargetStatus::Certified => "certified",
            TargetStatus::Unknown => "unknown",
            TargetStatus::IterationCap => "iteration_cap",
            TargetStatus::SubInfeasible => "sub_infeasible",
        }
    }
}

/// One row of the per-iteration trace.
#[derive(Clone, Debug)]
pub struct IterationTrace {
    pub iter: usize,
    pub master_obj: f64,
    pub sub_obj: f64,
    pub gap: f64,
    pub qubits: usize,
    pub cut_kind: Option<CutKind>,
}

/// Sizing record of one master solve, for qubit accounting and model dumps.
#[derive(Clone, Debug)]
pub struct MasterSnapshot {
    pub layout: BitLayout,
    pub cuts: Vec<CutMeta>,
    pub model: Option<QuboModel>,
}

#[derive(Clone, Copy, Debug)]
pub struct CutMeta {
    pub e_k: f64,
    pub row_l1: f64,
    pub slack_bits: usize,
    pub kind: CutKind,
}

/// Verification result for one target class.
#[derive(Clone, Debug)]
pub struct TargetOutcome {
    pub target: usize,
    pub status: TargetStatus,
    /// Fixed-phase bound q(y) at the stopping point, when one was reached.
    pub m_t: Option<f64>,
    /// Master objective at the stopping iteration (NaN before any solve).
    pub master_bound: f64,
    pub iterations: usize,
    pub trace: Vec<IterationTrace>,
    pub snapshots: Vec<MasterSnapshot>,
    pub wall_secs: f64,
}

/// Whole-sample verdict: robust only if every target certified.
#[derive(Clone, Debug)]
pub struct VerifyOutcome {
    pub predicted: usize,
    pub robust: bool,
    pub targets: Vec<TargetOutcome>,
    pub wall_secs: f64,
}

fn sa_seed(base: u64, target: usize, iter: usize) -> u64 {
    base.wrapping_mul(0x100_0000_01b3)
        .wrapping_add((target as u64) << 32)
        .wrapping_add(iter as u64)
}

/// Runs the decomposition for a single target class; `mp` must already
/// have that target set.
pub fn verify_target(mp: &MipProblem, config: &HqcranConfig) -> Result<TargetOutcome> {
    config.validate()?;
    let target = mp
        .target
        .ok_or_else(|| Error::InvalidArgument("no target class set".into()))?;
    let start = Instant::now();
    let n_y = mp.n_y;

    let certify = |m_t: Option<f64>, master_bound: f64| -> TargetStatus {
        let value_ok = m_t.is_some_and(|v| v > 0.0);
        let ok = match config.certify_mode {
            CertifyMode::Paper => value_ok,
            CertifyMode::Sound => value_ok && master_bound > 0.0,
        };
        if ok {
            TargetStatus::Certified
        } else {
            TargetStatus::Unknown
        }
    };

    // No unstable neurons: the problem is a plain LP.
    if n_y == 0 {
        let m_t = fixed_phase_value(mp, &[])?;
        let bound = m_t.unwrap_or(f64::NAN);
        let status = match m_t {
            Some(_) => certify(m_t, bound),
            None => TargetStatus::Unknown,
        };
        return Ok(TargetOutcome {
            target,
            status,
            m_t,
            master_bound: bound,
            iterations: 1,
            trace: vec![IterationTrace {
                iter: 1,
                master_obj: bound,
                sub_obj: bound,
                gap: 0.0,
                qubits: 0,
                cut_kind: None,
            }],
            snapshots: Vec::new(),
            wall_secs: start.elapsed().as_secs_f64(),
        });
    }

    let (u_c, u_t) = eta_inputs(mp)?;
    let n_p = size_eta_bits(u_c, u_t, config.omega_p);
    let eta_hi = eta_bar(n_p, config.omega_p);

    let mut state = MasterState::new(n_y);
    let mut trace = Vec::new();
    let mut snapshots = Vec::new();
    let mut master_bound = f64::NAN;
    let mut m_t: Option<f64> = None;
    let mut status: Option<TargetStatus> = None;

    for iter in 1..=config.max_iterations {
        state.iteration = iter;
        let (sub_cut, s_t) =
            match solve_sub(mp, &state.y_prev, config.alpha_bound, config.beta_bound) {
                Ok(v) => v,
                Err(Error::SubInfeasible) => {
                    // The iteration never completed; keep the count aligned
                    // with the trace.
                    state.iteration = iter - 1;
                    status = Some(TargetStatus::SubInfeasible);
                    break;
                }
                Err(e) => return Err(e),
            };
        if s_t < state.best_sub {
            state.best_sub = s_t;
            state.incumbent_y = state.y_prev.clone();
        }

        let mut cut = match config.variant {
            Variant::V1 => sub_cut,
            Variant::V2 => {
                state.core_point = update_core_point(&state.core_point, &state.y_prev);
                solve_additional(
                    mp,
                    &state.core_point,
                    &state.y_prev,
                    s_t,
                    config.alpha_bound,
                    config.beta_bound,
                )?
            }
        };
        cut.birth = iter;
        cut.slack_bits = size_slack_bits(cut.e_k, eta_hi, cut.row_l1(), config.omega_a);
        let cut_kind = cut.kind;
        push_cut(&mut state, cut, config.cut_capacity);

        let layout = BitLayout::new(
            n_p,
            n_y,
            state.cuts.iter().map(|c| c.slack_bits).collect(),
            config.omega_p,
            config.omega_a,
        );
        let qubits = layout.total();

        let cut_slice: Vec<Cut> = state.cuts.iter().cloned().collect();
        let hamming_ref = match config.variant {
            Variant::V2 => Some(state.incumbent_y.clone()),
            Variant::V1 => None,
        };
        let model_needed = config.keep_master_models || config.backend != MasterBackend::Milp;
        let model = if model_needed {
            Some(assemble_qubo(&cut_slice, hamming_ref.as_deref(), &layout)?)
        } else {
            None
        };

        let solved = match config.backend {
            MasterBackend::Milp => solve_master_exact(&state, mp, config)?,
            MasterBackend::Exhaustive => {
                let (x, _) = solve_exhaustive(model.as_ref().unwrap())?;
                let (eta, y, _) = layout.decode(&x);
                Some((eta, y))
            }
            MasterBackend::Sa => {
                let ising = qubo_to_ising(model.as_ref().unwrap(), config.prune_threshold);
                let (x, _) = solve_sa(
                    &ising,
                    config.sa_reads,
                    config.sa_sweeps,
                    sa_seed(config.seed, target, iter),
                );
                let (eta, y, _) = layout.decode(&x);
                Some((eta, y))
            }
        };
        snapshots.push(MasterSnapshot {
            layout: layout.clone(),
            cuts: state
                .cuts
                .iter()
                .map(|c| CutMeta {
                    e_k: c.e_k,
                    row_l1: c.row_l1(),
                    slack_bits: c.slack_bits,
                    kind: c.kind,
                })
                .collect(),
            model: if config.keep_master_models {
                model.clone()
            } else {
                None
            },
        });
        let Some((master_obj, y_new)) = solved else {
            status = Some(TargetStatus::Unknown);
            trace.push(IterationTrace {
                iter,
                master_obj: f64::NAN,
                sub_obj: s_t,
                gap: f64::NAN,
                qubits,
                cut_kind: Some(cut_kind),
            });
            break;
        };
        state.y_prev = y_new;
        master_bound = master_obj;
        let gap = state.best_sub - master_obj;
        trace.push(IterationTrace {
            iter,
            master_obj,
            sub_obj: s_t,
            gap,
            qubits,
            cut_kind: Some(cut_kind),
        });

        if gap <= config.target_gap || master_obj > state.best_sub {
            if let Some(v) = fixed_phase_value(mp, &state.y_prev)? {
                // A genuine phase value bounds the optimum from above.
                if v < state.best_sub {
                    state.best_sub = v;
                    state.incumbent_y = state.y_prev.clone();
                }
                if v - master_obj <= config.target_gap {
                    m_t = Some(v);
                    status = Some(certify(m_t, master_bound));
                    break;
                }
                // The candidate itself does not close the gap yet: its
                // phase is unpriced, so keep cutting.
            }
            // Infeasible fixed-phase LP: keep cutting.
        }
        if config.early_stop {
            if master_obj > 0.0 {
                status = Some(TargetStatus::Certified);
                break;
            }
            if state.best_sub < 0.0 {
                status = Some(TargetStatus::Unknown);
                break;
            }
        }
    }

    let status = status.unwrap_or_else(|| {
        // Gap never closed: report the last attempt and stay unknown.
        if let Ok(v) = fixed_phase_value(mp, &state.y_prev) {
            m_t = v;
        }
        TargetStatus::IterationCap
    });

    Ok(TargetOutcome {
        target,
        status,
        m_t,
        master_bound,
        iterations: state.iteration,
        trace,
        snapshots,
        wall_secs: start.elapsed().as_secs_f64(),
    })
}

/// Full verification of one sample: every target class other than the
/// prediction, stopping at the first failure unless `all_targets` is set.
pub fn run_hqcran(net: &Network, ball: &Ball, config: &HqcranConfig) -> Result<VerifyOutcome> {
    let (_, predicted) = net.forward(&ball.center)?;
    let bs = crate::bounds::propagate_interval(net, ball)?;
    let sm = crate::bounds::classify_neurons(&bs, net.final_relu);
    let mp = crate::encode::build_mip(net, ball, &bs, &sm, predicted)?;
    run_hqcran_on_problem(&mp, config)
}

/// Target loop over an already-encoded problem.
pub fn run_hqcran_on_problem(mp: &MipProblem, config: &HqcranConfig) -> Result<VerifyOutcome> {
    config.validate()?;
    let start = Instant::now();
    let predicted = mp.class_c;
    let mut mp = mp.clone();
    let mut targets = Vec::new();
    let mut robust = true;
    for t in 0..mp.output_dim() {
        if t == predicted {
            continue;
        }
        mp.set_target(t)?;
        let outcome = verify_target(&mp, config)?;
        let certified = outcome.status == TargetStatus::Certified;
        targets.push(outcome);
        if !certified {
            robust = false;
            if !config.all_targets {
                break;
            }
        }
    }
    Ok(VerifyOutcome {
        predicted,
        robust,
        targets,
        wall_secs: start.elapsed().as_secs_f64(),
    })
}

/// Writes a per-iteration trace as `iter,master_obj,sub_obj,gap,qubits,cut_kind`.
pub fn write_trace_csv(
    trace: &[IterationTrace],
    w: &mut dyn std::io::Write,
) -> std::io::Result<()> {
    writeln!(w, "iter,master_obj,sub_obj,gap,qubits,cut_kind")?;
    for t in trace {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            t.iter,
            t.master_obj,
            t.sub_obj,
            t.gap,
            t.qubits,
            t.cut_kind.map_or("", CutKind::as_str)
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::{classify_neurons, propagate_interval};
    use crate::encode::build_mip;
    use crate::mat::Mat;
    use crate::model::{generate_random_network, Layer};
    use crate::verifiers::verify_exact;

    fn tn1() -> Network {
        Network {
            name: "tn1".into(),
            layers: vec![
                Layer {
                    weights: Mat::from_rows(vec![vec![1.0]]),
                    bias: vec![-0.5],
                },
                Layer {
                    weights: Mat::from_rows(vec![vec![1.0], vec![0.0]]),
                    bias: vec![0.0, 0.25],
                },
            ],
            final_relu: true,
        }
    }

    fn problem(net: &Network, center: Vec<f64>, eps: f64, target: usize) -> MipProblem {
        let ball = Ball::new(center, eps).unwrap();
        let bs = propagate_interval(net, &ball).unwrap();
        let sm = classify_neurons(&bs, net.final_relu);
        let (_, c) = net.forward(&ball.center).unwrap();
        let mut mp = build_mip(net, &ball, &bs, &sm, c).unwrap();
        mp.set_target(target).unwrap();
        mp
    }

    #[test]
    fn sub_matches_primal_under_strong_duality() {
        let net = tn1();
        let mp = problem(&net, vec![0.5], 0.1, 0);
        for y in [vec![0u8], vec![1u8]] {
            let (cut, s) = solve_sub(&mp, &y, 1e6, 1e6).unwrap();
            let q = fixed_phase_value(&mp, &y).unwrap().unwrap();
            assert_eq!(cut.kind, CutKind::ExtremePoint);
            assert!((s - q).abs() < 1e-6, "y {y:?}: dual {s} vs primal {q}");
            // The cut reproduces its own generation point.
            assert!((cut.value_at(&y) - q).abs() < 1e-6);
        }
    }

    #[test]
    fn tight_dual_box_forces_a_ray() {
        let net = tn1();
        let mp = problem(&net, vec![0.5], 0.1, 0);
        // Covering the +1 objective entry needs two dual components that
        // sum to one, so a box at 0.5 pins both to their bound.
        let (cut, _) = solve_sub(&mp, &[0], 0.5, 0.5).unwrap();
        assert_eq!(cut.kind, CutKind::ExtremeRay);
        // And an infeasible box reports the dedicated error.
        match solve_sub(&mp, &[0], 1e-3, 1e-3) {
            Err(Error::SubInfeasible) => {}
            other => panic!("expected sub infeasibility, got {other:?}"),
        }
    }

    #[test]
    fn additional_problem_feasibility() {
        let net = tn1();
        let mp = problem(&net, vec![0.5], 0.1, 0);
        // ȳ = y: the additional problem optimizes the same objective over
        // the sub problem's optimal face, so the cut value at y matches.
        let (sub_cut, s) = solve_sub(&mp, &[1], 500.0, 500.0).unwrap();
        let add_cut = solve_additional(&mp, &[1.0], &[1], s, 500.0, 500.0).unwrap();
        assert!((sub_cut.value_at(&[1]) - add_cut.value_at(&[1])).abs() < 1e-6);

        // Any core point still yields a dual-feasible pair, tight at the
        // anchor y.
        let (_, s0) = solve_sub(&mp, &[0], 500.0, 500.0).unwrap();
        let cut = solve_additional(&mp, &[0.5], &[0], s0, 500.0, 500.0).unwrap();
        assert!((cut.value_at(&[0]) - s0).abs() < 1e-6);
        for col in 0..mp.n_z {
            let mut lhs = 0.0;
            for r in 0..mp.m_b {
                lhs += cut.alpha[r] * mp.a[(r, col)];
            }
            for r in 0..mp.m_d {
                lhs += cut.beta[r] * mp.c[(r, col)];
            }
            assert!((lhs - mp.g[col]).abs() < 1e-7);
        }
    }

    #[test]
    fn core_point_updates() {
        assert_eq!(update_core_point(&[0.0, 0.0], &[1, 1]), vec![0.5, 0.5]);
        assert_eq!(update_core_point(&[1.0], &[1]), vec![1.0]);
        let mut c = vec![0.0];
        for k in 1..=6 {
            c = update_core_point(&c, &[1]);
            let want = 1.0 - f64::powi(0.5, k);
            assert!((c[0] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn cut_pool_is_fifo() {
        let mk = |e: f64| Cut {
            alpha: vec![],
            beta: vec![],
            kind: CutKind::ExtremePoint,
            e_k: e,
            row: vec![],
            birth: 0,
            slack_bits: 1,
        };
        let mut state = MasterState::new(0);
        for e in [1.0, 2.0, 3.0] {
            push_cut(&mut state, mk(e), Some(2));
        }
        let kept: Vec<f64> = state.cuts.iter().map(|c| c.e_k).collect();
        assert_eq!(kept, vec![2.0, 3.0]);

        let mut state = MasterState::new(0);
        for e in [1.0, 2.0, 3.0] {
            push_cut(&mut state, mk(e), None);
        }
        assert_eq!(state.cuts.len(), 3);

        let mut state = MasterState::new(0);
        for e in [1.0, 2.0, 3.0] {
            push_cut(&mut state, mk(e), Some(1));
        }
        assert_eq!(state.cuts.len(), 1);
        assert_eq!(state.cuts[0].e_k, 3.0);
    }

    /// Master example on a scaled two-logit net whose η box covers the cut.
    #[test]
    fn master_hand_example() {
        let net = Network {
            name: "wide".into(),
            layers: vec![
                Layer {
                    weights: Mat::from_rows(vec![vec![1.0]]),
                    bias: vec![-0.5],
                },
                Layer {
                    weights: Mat::from_rows(vec![vec![4.0], vec![0.0]]),
                    bias: vec![0.0, 2.5],
                },
            ],
            final_relu: true,
        };
        let mp = problem(&net, vec![0.5], 0.1, 0);
        let cut = Cut {
            alpha: vec![],
            beta: vec![],
            kind: CutKind::ExtremePoint,
            e_k: 2.0,
            row: vec![1.0],
            birth: 1,
            slack_bits: 1,
        };
        // v1: min η s.t. η ≥ 2 − y → y = 1, η = 1.
        let mut config = HqcranConfig::v1();
        config.omega_p = 1.0;
        let mut state = MasterState::new(1);
        push_cut(&mut state, cut.clone(), None);
        let (eta, y) = solve_master_exact(&state, &mp, &config).unwrap().unwrap();
        assert!((eta - 1.0).abs() < 1e-6);
        assert_eq!(y, vec![1]);

        // v2: the η-optimal set only contains y = 1 (y = 0 would need
        // η ≥ 2), so the Hamming tie-break returns the same point.
        let mut config = HqcranConfig::v2();
        config.omega_p = 1.0;
        let (eta, y) = solve_master_exact(&state, &mp, &config).unwrap().unwrap();
        assert!((eta - 1.0).abs() < 1e-6);
        assert_eq!(y, vec![1]);
    }

    /// Across random instances, the Pareto cut should dominate the plain
    /// sub cut on most of the binary grid; checked in aggregate rather
    /// than per instance.
    #[test]
    fn pareto_cuts_dominate_statistically() {
        let mut dominated = 0usize;
        let mut total = 0usize;
        for seed in 0..30u64 {
            let net = generate_random_network(&[2, 4, 2], 1.0, 2_000 + seed).unwrap();
            let ball = Ball::new(vec![0.45, 0.55], 0.08).unwrap();
            let bs = propagate_interval(&net, &ball).unwrap();
            let sm = classify_neurons(&bs, net.final_relu);
            if sm.n_unstable == 0 || sm.n_unstable > 8 {
                continue;
            }
            let (_, c) = net.forward(&ball.center).unwrap();
            let t = if c == 0 { 1 } else { 0 };
            let mut mp = build_mip(&net, &ball, &bs, &sm, c).unwrap();
            mp.set_target(t).unwrap();
            let y0 = vec![0u8; sm.n_unstable];
            let Ok((sub_cut, s)) = solve_sub(&mp, &y0, 500.0, 500.0) else {
                continue;
            };
            if sub_cut.kind != CutKind::ExtremePoint {
                continue;
            }
            let core = vec![0.5; sm.n_unstable];
            let add_cut = solve_additional(&mp, &core, &y0, s, 500.0, 500.0).unwrap();
            if add_cut.kind != CutKind::ExtremePoint {
                continue;
            }
            for mask in 0u32..(1 << sm.n_unstable) {
                let y: Vec<u8> = (0..sm.n_unstable)
                    .map(|k| ((mask >> k) & 1) as u8)
                    .collect();
                total += 1;
                if add_cut.value_at(&y) >= sub_cut.value_at(&y) - 1e-9 {
                    dominated += 1;
                }
            }
        }
        assert!(total > 0);
        let frac = dominated as f64 / total as f64;
        assert!(
            frac >= 0.8,
            "Pareto cut dominated on only {:.1}% of the grid",
            100.0 * frac
        );
    }

    #[test]
    fn early_stop_denies_on_negative_sub() {
        let net = tn1();
        let ball = Ball::new(vec![0.5], 0.5).unwrap();
        let mut config = HqcranConfig::v2();
        config.early_stop = true;
        config.target_gap = 1e-9; // keep the gap rule quiet
        config.alpha_bound = 500.0;
        config.beta_bound = 500.0;
        let out = run_hqcran(&net, &ball, &config).unwrap();
        assert!(!out.robust);
    }

    #[test]
    fn early_stop_certifies_on_positive_master() {
        let net = tn1();
        let ball = Ball::new(vec![0.5], 0.1).unwrap();
        let mut config = HqcranConfig::v2();
        config.early_stop = true;
        config.target_gap = 1e-9;
        config.alpha_bound = 500.0;
        config.beta_bound = 500.0;
        let out = run_hqcran(&net, &ball, &config).unwrap();
        assert!(out.robust);
        assert_eq!(out.targets[0].status, TargetStatus::Certified);
    }

    #[test]
    fn undersized_dual_box_reports_sub_infeasible() {
        let net = tn1();
        let ball = Ball::new(vec![0.5], 0.1).unwrap();
        let mut config = HqcranConfig::v2();
        config.alpha_bound = 1e-3;
        config.beta_bound = 1e-3;
        let out = run_hqcran(&net, &ball, &config).unwrap();
        assert!(!out.robust);
        assert_eq!(out.targets[0].status, TargetStatus::SubInfeasible);
    }

    #[test]
    fn sound_mode_still_certifies_converged_runs() {
        let net = tn1();
        let ball = Ball::new(vec![0.5], 0.1).unwrap();
        let mut config = HqcranConfig::v2();
        config.target_gap = 0.01;
        config.alpha_bound = 500.0;
        config.beta_bound = 500.0;
        config.certify_mode = CertifyMode::Sound;
        let out = run_hqcran(&net, &ball, &config).unwrap();
        assert!(out.robust);
        assert!(out.targets[0].master_bound > 0.0);
    }

    #[test]
    fn tn1_verifies_robust_at_small_epsilon() {
        let net = tn1();
        let ball = Ball::new(vec![0.5], 0.1).unwrap();
        let mut config = HqcranConfig::v2();
        config.target_gap = 0.01;
        config.alpha_bound = 500.0;
        config.beta_bound = 500.0;
        let out = run_hqcran(&net, &ball, &config).unwrap();
        assert!(out.robust);
        let m_t = out.targets[0].m_t.unwrap();
        assert!((m_t - 0.15).abs() <= 0.01, "m_t {m_t}");
    }

    #[test]
    fn tn1_unknown_at_large_epsilon() {
        let net = tn1();
        let ball = Ball::new(vec![0.5], 0.5).unwrap();
        let mut config = HqcranConfig::v2();
        config.target_gap = 0.01;
        config.alpha_bound = 500.0;
        config.beta_bound = 500.0;
        let out = run_hqcran(&net, &ball, &config).unwrap();
        assert!(!out.robust);
        let m_t = out.targets[0].m_t.unwrap();
        assert!(m_t < 0.0, "m_t {m_t}");
    }

    #[test]
    fn degenerate_no_unstable_short_circuits() {
        let net = tn1();
        let ball = Ball::new(vec![0.5], 0.0).unwrap();
        let out = run_hqcran(&net, &ball, &HqcranConfig::v2()).unwrap();
        assert!(out.robust);
        assert_eq!(out.targets[0].iterations, 1);
        assert_eq!(out.targets[0].trace[0].qubits, 0);
        let m_t = out.targets[0].m_t.unwrap();
        assert!((m_t - 0.25).abs() < 1e-6);
    }

    #[test]
    fn master_stays_below_exact_optimum_with_milp_backend() {
        for seed in 0..10u64 {
            let net = generate_random_network(&[2, 4, 2], 1.0, 700 + seed).unwrap();
            let ball = Ball::new(vec![0.4, 0.6], 0.08).unwrap();
            let bs = propagate_interval(&net, &ball).unwrap();
            let sm = classify_neurons(&bs, net.final_relu);
            let (_, c) = net.forward(&ball.center).unwrap();
            if sm.n_unstable == 0 {
                continue;
            }
            let t = if c == 0 { 1 } else { 0 };
            let mut mp = build_mip(&net, &ball, &bs, &sm, c).unwrap();
            mp.set_target(t).unwrap();
            let m_star = verify_exact(&mp).unwrap().unwrap();
            let mut config = HqcranConfig::v2();
            config.target_gap = 0.01;
            config.alpha_bound = 500.0;
            config.beta_bound = 500.0;
            let out = verify_target(&mp, &config).unwrap();
            for rec in &out.trace {
                assert!(
                    rec.master_obj <= m_star + 1e-6,
                    "seed {seed}: master {} above m* {}",
                    rec.master_obj,
                    m_star
                );
                assert!(rec.sub_obj >= m_star - 1e-6, "seed {seed}: sub below m*");
            }
            if let Some(m_t) = out.m_t {
                assert!(m_t >= m_star - 1e-6);
            }
        }
    }

    #[test]
    fn deterministic_traces_with_sa_backend() {
        let net = generate_random_network(&[2, 3, 2], 1.0, 44).unwrap();
        let ball = Ball::new(vec![0.5, 0.5], 0.1).unwrap();
        let mut config = HqcranConfig::v2();
        config.backend = MasterBackend::Sa;
        config.sa_reads = 5;
        config.sa_sweeps = 500;
        config.max_iterations = 6;
        config.seed = 11;
        let a = run_hqcran(&net, &ball, &config).unwrap();
        let b = run_hqcran(&net, &ball, &config).unwrap();
        assert_eq!(a.robust, b.robust);
        assert_eq!(a.targets.len(), b.targets.len());
        for (x, y) in a.targets.iter().zip(&b.targets) {
            assert_eq!(x.iterations, y.iterations);
            for (p, q) in x.trace.iter().zip(&y.trace) {
                assert_eq!(p.master_obj, q.master_obj);
                assert_eq!(p.sub_obj, q.sub_obj);
                assert_eq!(p.qubits, q.qubits);
            }
        }
    }

    #[test]
    fn exhaustive_backend_agrees_with_milp_on_tn1() {
        let net = tn1();
        let ball = Ball::new(vec![0.5], 0.1).unwrap();
        let mut config = HqcranConfig::v2();
        config.backend = MasterBackend::Exhaustive;
        config.alpha_bound = 500.0;
        config.beta_bound = 500.0;
        let out = run_hqcran(&net, &ball, &config).unwrap();
        assert!(out.robust);
        let m_t = out.targets[0].m_t.unwrap();
        assert!((m_t - 0.15).abs() <= 1.0);
    }

    #[test]
    fn capacity_bound_on_qubits() {
        let net = generate_random_network(&[3, 6, 6, 3], 1.0, 50).unwrap();
        let ball = Ball::new(vec![0.4, 0.5, 0.6], 0.05).unwrap();
        let mut config = HqcranConfig::v2();
        config.max_iterations = 12;
        config.target_gap = 1e-9; // force long runs
        config.alpha_bound = 500.0;
        config.beta_bound = 500.0;
        config.keep_master_models = true;
        config.all_targets = true;
        let out = run_hqcran(&net, &ball, &config).unwrap();
        for t in &out.targets {
            for snap in &t.snapshots {
                let points = snap
                    .cuts
                    .iter()
                    .filter(|c| c.kind == CutKind::ExtremePoint)
                    .count();
                assert!(points <= 5);
                let expect: usize = snap.layout.n_p
                    + snap.layout.n_y
                    + snap.layout.slack_bits.iter().sum::<usize>();
                assert_eq!(snap.layout.total(), expect);
            }
        }
    }
}
