//! Self-contained dense LP solver: a two-phase simplex over box-bounded
//! variables.
//!
//! Geometry: `min/max cᵀx` subject to `G x ≥ h`, `E x = f` and per-variable
//! bounds `lo ≤ x ≤ hi` (±∞ allowed). Internally every variable is shifted
//! or flipped to a lower bound of zero, free variables are split, and
//! inequality rows get surplus columns; finite upper bounds stay implicit
//! in the ratio test instead of becoming rows. Phase 1 minimizes artificial
//! variables; rows whose surplus can start basic skip the artificial.
//!
//! Pricing is Dantzig with a permanent switch to Bland's rule after
//! 3·(n+m) consecutive degenerate pivots. Tolerances: pivot 1e-9,
//! feasibility 1e-7. Pivoting is capped at 50·(n+m) by default; hitting the
//! cap is reported as its own status, never as optimal.

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sense {
    Min,
    Max,
}

/// Dense LP in inequality/equality/bound form.
#[derive(Clone, Debug)]
pub struct LpProblem {
    pub sense: Sense,
    pub c: Vec<f64>,
    pub a_ineq: Vec<Vec<f64>>,
    pub b_ineq: Vec<f64>,
    pub a_eq: Vec<Vec<f64>>,
    pub b_eq: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    /// Pivot cap override; `None` uses 50·(n+m).
    pub max_pivots: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

/// Which bound a variable sits on in the returned point.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundFlag {
    AtLower,
    AtUpper,
    Interior,
}

#[derive(Clone, Debug)]
pub struct LpSolution {
    pub status: LpStatus,
    pub objective: f64,
    pub primal: Vec<f64>,
    pub flags: Vec<BoundFlag>,
}

impl LpProblem {
    pub fn new(sense: Sense, n: usize) -> Self {
        LpProblem {
            sense,
            c: vec![0.0; n],
            a_ineq: Vec::new(),
            b_ineq: Vec::new(),
            a_eq: Vec::new(),
            b_eq: Vec::new(),
            lo: vec![f64::NEG_INFINITY; n],
            hi: vec![f64::INFINITY; n],
            max_pivots: None,
        }
    }

    pub fn minimize(c: Vec<f64>) -> Self {
        let n = c.len();
        let mut p = Self::new(Sense::Min, n);
        p.c = c;
        p
    }

    pub fn maximize(c: Vec<f64>) -> Self {
        let n = c.len();
        let mut p = Self::new(Sense::Max, n);
        p.c = c;
        p
    }

    pub fn n(&self) -> usize {
        self.c.len()
    }

    /// Adds `coeffs · x ≥ rhs`.
    pub fn add_ge(&mut self, coeffs: Vec<f64>, rhs: f64) {
        debug_assert_eq!(coeffs.len(), self.n());
        self.a_ineq.push(coeffs);
        self.b_ineq.push(rhs);
    }

    /// Adds `coeffs · x = rhs`.
    pub fn add_eq(&mut self, coeffs: Vec<f64>, rhs: f64) {
        debug_assert_eq!(coeffs.len(), self.n());
        self.a_eq.push(coeffs);
        self.b_eq.push(rhs);
    }

    pub fn set_bounds(&mut self, j: usize, lo: f64, hi: f64) {
        self.lo[j] = lo;
        self.hi[j] = hi;
    }

    fn validate(&self) -> Result<()> {
        let n = self.n();
        if self.lo.len() != n || self.hi.len() != n {
            return Err(Error::InvalidArgument(
                "bound vectors do not match variable count".into(),
            ));
        }
        if self.a_ineq.len() != self.b_ineq.len() || self.a_eq.len() != self.b_eq.len() {
            return Err(Error::InvalidArgument("row/rhs count mismatch".into()));
        }
        if self.a_ineq.iter().chain(&self.a_eq).any(|r| r.len() != n) {
            return Err(Error::InvalidArgument(
                "row length does not match variable count".into(),
            ));
        }
        Ok(())
    }
}

pub const FEAS_TOL: f64 = 1e-7;
const PIVOT_TOL: f64 = 1e-9;
const DEGEN_TOL: f64 = 1e-11;
const REFRESH_EVERY: usize = 64;

/// Solves the LP. Statuses other than `Optimal` carry no point.
pub fn solve_lp(p: &LpProblem) -> Result<LpSolution> {
    p.validate()?;
    let mut s = match Simplex::build(p) {
        Built::Ready(s) => *s,
        Built::TriviallyInfeasible => return Ok(infeasible()),
    };
    if s.needs_phase1() {
        match s.run() {
            Outcome::IterLimit => return Ok(iteration_limit()),
            Outcome::Unbounded => return Ok(iteration_limit()), // numerical breakdown
            Outcome::Done => {}
        }
        if s.phase1_objective() >= FEAS_TOL {
            return Ok(infeasible());
        }
        s.seal_artificials();
    }
    s.load_phase2_costs();
    match s.run() {
        Outcome::IterLimit => Ok(iteration_limit()),
        Outcome::Unbounded => Ok(LpSolution {
            status: LpStatus::Unbounded,
            objective: match p.sense {
                Sense::Min => f64::NEG_INFINITY,
                Sense::Max => f64::INFINITY,
            },
            primal: Vec::new(),
            flags: Vec::new(),
        }),
        Outcome::Done => Ok(s.extract(p)),
    }
}

/// Phase-1 feasibility test only.
pub fn check_feasible(p: &LpProblem) -> Result<bool> {
    p.validate()?;
    let mut s = match Simplex::build(p) {
        Built::Ready(s) => *s,
        Built::TriviallyInfeasible => return Ok(false),
    };
    if !s.needs_phase1() {
        return Ok(true);
    }
    match s.run() {
        Outcome::Done => Ok(s.phase1_objective() < FEAS_TOL),
        _ => Err(Error::IterationLimit),
    }
}

fn infeasible() -> LpSolution {
    LpSolution {
        status: LpStatus::Infeasible,
        objective: f64::NAN,
        primal: Vec::new(),
        flags: Vec::new(),
    }
}

fn iteration_limit() -> LpSolution {
    LpSolution {
        status: LpStatus::IterationLimit,
        objective: f64::NAN,
        primal: Vec::new(),
        flags: Vec::new(),
    }
}

enum Outcome {
    Done,
    Unbounded,
    IterLimit,
}

#[derive(Clone, Copy)]
enum VarMap {
    Shifted { col: usize, lo: f64 },
    Flipped { col: usize, hi: f64 },
    Split { pos: usize, neg: usize },
    Fixed { value: f64 },
}

enum Built {
    Ready(Box<Simplex>),
    TriviallyInfeasible,
}

struct Simplex {
    nrows: usize,
    ncols: usize,
    n_art: usize,
    /// nrows × (ncols + 1); the extra column is the transformed rhs.
    tab: Vec<f64>,
    hi: Vec<f64>,
    cost2: Vec<f64>,
    cost: Vec<f64>,
    dual: Vec<f64>,
    basis: Vec<usize>,
    in_basis: Vec<bool>,
    at_upper: Vec<bool>,
    val: Vec<f64>,
    var_map: Vec<VarMap>,
    art_start: usize,
    pivots: usize,
    limit: usize,
    degen_streak: usize,
    bland: bool,
}

impl Simplex {
    fn build(p: &LpProblem) -> Built {
        let n = p.n();
        let mut var_map = Vec::with_capacity(n);
        let mut n_struct = 0usize;
        let mut hi_t: Vec<f64> = Vec::new();
        for j in 0..n {
            let (lo, hi) = (p.lo[j], p.hi[j]);
            if lo > hi {
                return Built::TriviallyInfeasible;
            }
            let m = if lo.is_finite() && lo == hi {
                VarMap::Fixed { value: lo }
            } else if lo.is_finite() {
                hi_t.push(if hi.is_finite() {
                    hi - lo
                } else {
                    f64::INFINITY
                });
                n_struct += 1;
                VarMap::Shifted {
                    col: n_struct - 1,
                    lo,
                }
            } else if hi.is_finite() {
                hi_t.push(f64::INFINITY);
                n_struct += 1;
                VarMap::Flipped {
                    col: n_struct - 1,
                    hi,
                }
            } else {
                hi_t.push(f64::INFINITY);
                hi_t.push(f64::INFINITY);
                n_struct += 2;
                VarMap::Split {
                    pos: n_struct - 2,
                    neg: n_struct - 1,
                }
            };
            var_map.push(m);
        }

        // Transform a row over original variables into structural columns
        // plus an rhs correction.
        let transform = |coeffs: &[f64], rhs: f64| -> (Vec<f64>, f64) {
            let mut row = vec![0.0; n_struct];
            let mut r = rhs;
            for (j, &a) in coeffs.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                match var_map[j] {
                    VarMap::Shifted { col, lo } => {
                        row[col] += a;
                        r -= a * lo;
                    }
                    VarMap::Flipped { col, hi } => {
                        row[col] -= a;
                        r -= a * hi;
                    }
                    VarMap::Split { pos, neg } => {
                        row[pos] += a;
                        row[neg] -= a;
                    }
                    VarMap::Fixed { value } => r -= a * value,
                }
            }
            (row, r)
        };

        let m_ineq = p.a_ineq.len();
        let m_eq = p.a_eq.len();
        let nrows = m_ineq + m_eq;
        struct RowSpec {
            coeffs: Vec<f64>,
            rhs: f64,
            surplus: Option<usize>,
            flipped: bool,
        }
        let mut specs = Vec::with_capacity(nrows);
        for (i, (coeffs, &rhs)) in p.a_ineq.iter().zip(&p.b_ineq).enumerate() {
            let (row, r) = transform(coeffs, rhs);
            specs.push(RowSpec {
                coeffs: row,
                rhs: r,
                surplus: Some(n_struct + i),
                flipped: false,
            });
        }
        for (coeffs, &rhs) in p.a_eq.iter().zip(&p.b_eq) {
            let (row, r) = transform(coeffs, rhs);
            specs.push(RowSpec {
                coeffs: row,
                rhs: r,
                surplus: None,
                flipped: false,
            });
        }

        // Surplus columns start basic where the start point allows it
        // (rhs ≤ 0 after the row is negated); everything else gets an
        // artificial.
        let mut n_art = 0usize;
        let mut needs_art = vec![false; nrows];
        for (i, spec) in specs.iter_mut().enumerate() {
            if spec.surplus.is_some() && spec.rhs <= 0.0 {
                // −coeffs·t + s = −rhs ≥ 0 with s basic.
                spec.flipped = true;
            } else {
                if spec.rhs < 0.0 {
                    spec.flipped = true;
                }
                needs_art[i] = true;
                n_art += 1;
            }
        }

        let art_start = n_struct + m_ineq;
        let ncols = art_start + n_art;
        let width = ncols + 1;
        let mut tab = vec![0.0; nrows * width];
        let mut basis = vec![0usize; nrows];
        let mut art_idx = art_start;
        for (i, spec) in specs.iter().enumerate() {
            let sign = if spec.flipped { -1.0 } else { 1.0 };
            let row = &mut tab[i * width..(i + 1) * width];
            for (k, &a) in spec.coeffs.iter().enumerate() {
                row[k] = sign * a;
            }
            if let Some(s) = spec.surplus {
                row[s] = -sign;
            }
            row[ncols] = sign * spec.rhs;
            if needs_art[i] {
                row[art_idx] = 1.0;
                basis[i] = art_idx;
                art_idx += 1;
            } else {
                basis[i] = spec.surplus.unwrap();
            }
        }

        let mut hi = hi_t;
        hi.extend(std::iter::repeat_n(f64::INFINITY, m_ineq + n_art));

        // Phase-2 costs over transformed columns (min sense).
        let sense_mul = match p.sense {
            Sense::Min => 1.0,
            Sense::Max => -1.0,
        };
        let mut cost2 = vec![0.0; ncols];
        for (j, &cj) in p.c.iter().enumerate() {
            let cj = sense_mul * cj;
            match var_map[j] {
                VarMap::Shifted { col, .. } => cost2[col] += cj,
                VarMap::Flipped { col, .. } => cost2[col] -= cj,
                VarMap::Split { pos, neg } => {
                    cost2[pos] += cj;
                    cost2[neg] -= cj;
                }
                VarMap::Fixed { .. } => {}
            }
        }

        let mut cost = vec![0.0; ncols];
        for c in cost.iter_mut().skip(art_start) {
            *c = 1.0;
        }

        let limit = p.max_pivots.unwrap_or(50 * (ncols + nrows).max(1));
        let mut in_basis = vec![false; ncols];
        for &b in &basis {
            in_basis[b] = true;
        }

        let mut s = Simplex {
            nrows,
            ncols,
            n_art,
            tab,
            hi,
            cost2,
            cost,
            dual: vec![0.0; ncols],
            basis,
            in_basis,
            at_upper: vec![false; ncols],
            val: vec![0.0; ncols],
            var_map,
            art_start,
            pivots: 0,
            limit,
            degen_streak: 0,
            bland: false,
        };
        s.refresh_values();
        Built::Ready(Box::new(s))
    }

    fn needs_phase1(&self) -> bool {
        self.n_art > 0
    }

    fn phase1_objective(&self) -> f64 {
        self.val[self.art_start..].iter().sum()
    }

    /// Pins artificials at zero so phase 2 can never reuse them.
    fn seal_artificials(&mut self) {
        for j in self.art_start..self.ncols {
            self.hi[j] = 0.0;
            if !self.in_basis[j] {
                self.at_upper[j] = false;
                self.val[j] = 0.0;
            }
        }
    }

    fn load_phase2_costs(&mut self) {
        self.cost = self.cost2.clone();
        for c in self.cost.iter_mut().skip(self.art_start) {
            *c = 0.0;
        }
    }

    fn refresh_duals(&mut self) {
        let width = self.ncols + 1;
        let cb: Vec<f64> = self.basis.iter().map(|&b| self.cost[b]).collect();
        for j in 0..self.ncols {
            let mut d = self.cost[j];
            if self.in_basis[j] {
                self.dual[j] = 0.0;
                continue;
            }
            for (i, &c) in cb.iter().enumerate() {
                if c != 0.0 {
                    d -= c * self.tab[i * width + j];
                }
            }
            self.dual[j] = d;
        }
    }

    fn refresh_values(&mut self) {
        let width = self.ncols + 1;
        let mut xb: Vec<f64> = (0..self.nrows)
            .map(|i| self.tab[i * width + self.ncols])
            .collect();
        for j in 0..self.ncols {
            if !self.in_basis[j] && self.at_upper[j] && self.hi[j].is_finite() && self.hi[j] != 0.0
            {
                let hj = self.hi[j];
                for (i, x) in xb.iter_mut().enumerate() {
                    *x -= self.tab[i * width + j] * hj;
                }
            }
        }
        for j in 0..self.ncols {
            if !self.in_basis[j] {
                self.val[j] = if self.at_upper[j] && self.hi[j].is_finite() {
                    self.hi[j]
                } else {
                    0.0
                };
            }
        }
        for (i, &b) in self.basis.iter().enumerate() {
            self.val[b] = xb[i];
        }
    }

    fn run(&mut self) -> Outcome {
        self.refresh_duals();
        self.refresh_values();
        let mut since_refresh = 0usize;
        loop {
            if self.pivots >= self.limit {
                return Outcome::IterLimit;
            }
            if since_refresh >= REFRESH_EVERY {
                self.refresh_duals();
                self.refresh_values();
                since_refresh = 0;
            }

            let Some((e, dir)) = self.choose_entering() else {
                self.refresh_values();
                return Outcome::Done;
            };

            // Ratio test: how far can column e move in direction `dir`.
            let width = self.ncols + 1;
            let mut best_t = f64::INFINITY;
            let mut best_row: Option<(usize, bool)> = None; // (row, leaves at upper)
            for i in 0..self.nrows {
                let alpha = self.tab[i * width + e];
                let a = dir * alpha;
                let bvar = self.basis[i];
                if a > PIVOT_TOL {
                    let t = (self.val[bvar].max(0.0)) / a;
                    if t < best_t - DEGEN_TOL
                        || (t < best_t + DEGEN_TOL && self.better_leaving(best_row, i))
                    {
                        best_t = t.max(0.0).min(best_t);
                        best_row = Some((i, false));
                    }
                } else if a < -PIVOT_TOL && self.hi[bvar].is_finite() {
                    let slack = (self.hi[bvar] - self.val[bvar]).max(0.0);
                    let t = slack / (-a);
                    if t < best_t - DEGEN_TOL
                        || (t < best_t + DEGEN_TOL && self.better_leaving(best_row, i))
                    {
                        best_t = t.max(0.0).min(best_t);
                        best_row = Some((i, true));
                    }
                }
            }
            let flip_t = self.hi[e]; // f64::INFINITY when unbounded above
            let step = if best_row.is_some() {
                best_t.min(flip_t)
            } else {
                flip_t
            };
            if !step.is_finite() {
                // A bounded phase-1 objective can never take this path.
                return Outcome::Unbounded;
            }

            let use_pivot = best_row.is_some() && best_t <= flip_t;
            let t_star = if use_pivot { best_t } else { flip_t };

            // Apply the move to the stored point.
            let alpha_col: Vec<f64> = (0..self.nrows).map(|i| self.tab[i * width + e]).collect();
            self.val[e] += dir * t_star;
            for (i, &a) in alpha_col.iter().enumerate() {
                if a != 0.0 {
                    self.val[self.basis[i]] -= dir * t_star * a;
                }
            }

            if use_pivot {
                let (r, leaves_upper) = best_row.unwrap();
                let leaving = self.basis[r];
                self.val[leaving] = if leaves_upper { self.hi[leaving] } else { 0.0 };
                self.at_upper[leaving] = leaves_upper;
                self.in_basis[leaving] = false;
                self.pivot(r, e);
                self.in_basis[e] = true;
                self.at_upper[e] = false;
            } else {
                // Bound flip: no basis change.
                self.at_upper[e] = !self.at_upper[e];
                self.val[e] = if self.at_upper[e] { self.hi[e] } else { 0.0 };
            }

            self.pivots += 1;
            since_refresh += 1;
            if t_star <= DEGEN_TOL {
                self.degen_streak += 1;
                if !self.bland && self.degen_streak > 3 * (self.ncols + self.nrows) {
                    self.bland = true;
                }
            } else {
                self.degen_streak = 0;
            }
        }
    }

    /// Row tie-break: Bland wants the lowest basic variable index,
    /// otherwise take the lowest row.
    fn better_leaving(&self, current: Option<(usize, bool)>, candidate_row: usize) -> bool {
        match current {
            None => true,
            Some((row, _)) => {
                if self.bland {
                    self.basis[candidate_row] < self.basis[row]
                } else {
                    candidate_row < row
                }
            }
        }
    }

    fn choose_entering(&self) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64, f64)> = None; // (col, dir, score)
        for j in 0..self.ncols {
            if self.in_basis[j] || self.hi[j] == 0.0 {
                continue;
            }
            let d = self.dual[j];
            let (eligible, dir) = if !self.at_upper[j] {
                (d < -PIVOT_TOL, 1.0)
            } else {
                (d > PIVOT_TOL, -1.0)
            };
            if !eligible {
                continue;
            }
            if self.bland {
                return Some((j, dir));
            }
            let score = d.abs();
            match best {
                Some((_, _, s)) if s >= score => {}
                _ => best = Some((j, dir, score)),
            }
        }
        best.map(|(j, dir, _)| (j, dir))
    }

    fn pivot(&mut self, r: usize, e: usize) {
        let width = self.ncols + 1;
        let piv = self.tab[r * width + e];
        debug_assert!(piv.abs() > PIVOT_TOL);
        let inv = 1.0 / piv;
        for v in &mut self.tab[r * width..(r + 1) * width] {
            *v *= inv;
        }
        for i in 0..self.nrows {
            if i == r {
                continue;
            }
            let factor = self.tab[i * width + e];
            if factor == 0.0 {
                continue;
            }
            for k in 0..width {
                let delta = factor * self.tab[r * width + k];
                self.tab[i * width + k] -= delta;
            }
            self.tab[i * width + e] = 0.0;
        }
        let dfac = self.dual[e];
        if dfac != 0.0 {
            for k in 0..self.ncols {
                self.dual[k] -= dfac * self.tab[r * width + k];
            }
            self.dual[e] = 0.0;
        }
        self.basis[r] = e;
    }

    fn extract(&self, p: &LpProblem) -> LpSolution {
        let n = p.n();
        let mut primal = vec![0.0; n];
        for (j, m) in self.var_map.iter().enumerate() {
            primal[j] = match *m {
                VarMap::Shifted { col, lo } => lo + self.val[col],
                VarMap::Flipped { col, hi } => hi - self.val[col],
                VarMap::Split { pos, neg } => self.val[pos] - self.val[neg],
                VarMap::Fixed { value } => value,
            };
        }
        let objective: f64 = primal.iter().zip(&p.c).map(|(x, c)| x * c).sum();
        let flags = primal
            .iter()
            .enumerate()
            .map(|(j, &x)| {
                if p.lo[j].is_finite() && (x - p.lo[j]).abs() <= FEAS_TOL {
                    BoundFlag::AtLower
                } else if p.hi[j].is_finite() && (x - p.hi[j]).abs() <= FEAS_TOL {
                    BoundFlag::AtUpper
                } else {
                    BoundFlag::Interior
                }
            })
            .collect();
        LpSolution {
            status: LpStatus::Optimal,
            objective,
            primal,
            flags,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn box_minimum_sits_at_lower() {
        let mut p = LpProblem::minimize(vec![1.0]);
        p.set_bounds(0, 1.0, 5.0);
        let s = solve_lp(&p).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.objective - 1.0).abs() < 1e-9);
        assert!((s.primal[0] - 1.0).abs() < 1e-9);
        assert_eq!(s.flags[0], BoundFlag::AtLower);
    }

    #[test]
    fn crossed_bounds_are_infeasible() {
        let mut p = LpProblem::minimize(vec![1.0]);
        p.set_bounds(0, 2.0, 1.0);
        assert_eq!(solve_lp(&p).unwrap().status, LpStatus::Infeasible);

        // Same via rows.
        let mut p = LpProblem::minimize(vec![1.0]);
        p.set_bounds(0, f64::NEG_INFINITY, 1.0);
        p.add_ge(vec![1.0], 2.0);
        assert_eq!(solve_lp(&p).unwrap().status, LpStatus::Infeasible);
    }

    #[test]
    fn unbounded_above() {
        let mut p = LpProblem::maximize(vec![1.0]);
        p.set_bounds(0, 0.0, f64::INFINITY);
        assert_eq!(solve_lp(&p).unwrap().status, LpStatus::Unbounded);
    }

    #[test]
    fn equality_with_free_variable() {
        // min x + y s.t. x + y = 3, x free, y in [0, 1].
        let mut p = LpProblem::minimize(vec![1.0, 1.0]);
        p.set_bounds(1, 0.0, 1.0);
        p.add_eq(vec![1.0, 1.0], 3.0);
        let s = solve_lp(&p).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.objective - 3.0).abs() < 1e-9);
    }

    #[test]
    fn two_variable_vertex() {
        // max x + y s.t. x + 2y ≤ 4, 3x + y ≤ 6, x,y ≥ 0 → (8/5, 6/5), obj 14/5.
        let mut p = LpProblem::maximize(vec![1.0, 1.0]);
        p.set_bounds(0, 0.0, f64::INFINITY);
        p.set_bounds(1, 0.0, f64::INFINITY);
        p.add_ge(vec![-1.0, -2.0], -4.0);
        p.add_ge(vec![-3.0, -1.0], -6.0);
        let s = solve_lp(&p).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.objective - 14.0 / 5.0).abs() < 1e-9);
        assert!((s.primal[0] - 8.0 / 5.0).abs() < 1e-9);
        assert!((s.primal[1] - 6.0 / 5.0).abs() < 1e-9);
    }

    #[test]
    fn feasibility_probe() {
        let mut p = LpProblem::minimize(vec![0.0]);
        p.set_bounds(0, 1.0, 5.0);
        assert!(check_feasible(&p).unwrap());

        let mut p = LpProblem::minimize(vec![0.0]);
        p.set_bounds(0, f64::NEG_INFINITY, 1.0);
        p.add_ge(vec![1.0], 2.0);
        assert!(!check_feasible(&p).unwrap());

        // Empty constraint set, free variable.
        let p = LpProblem::minimize(vec![0.0]);
        assert!(check_feasible(&p).unwrap());
    }

    /// Plant a vertex with known multipliers and check the solver recovers
    /// its objective: c = Σ λᵢ gᵢ over the active rows makes x* optimal for
    /// min cᵀx over {Gx ≥ h}.
    #[test]
    fn planted_vertex_recovery() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..40 {
            let n = rng.gen_range(2..6);
            let m_extra = rng.gen_range(1..5);
            let xstar: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
            let mut p = LpProblem::minimize(vec![0.0; n]);
            for j in 0..n {
                p.set_bounds(j, -10.0, 10.0);
            }
            let mut c = vec![0.0; n];
            for _ in 0..n {
                let g: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let h: f64 = g.iter().zip(&xstar).map(|(a, b)| a * b).sum();
                let lambda = rng.gen_range(0.1..2.0);
                for (ck, gk) in c.iter_mut().zip(&g) {
                    *ck += lambda * gk;
                }
                p.add_ge(g, h);
            }
            for _ in 0..m_extra {
                let g: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let h: f64 =
                    g.iter().zip(&xstar).map(|(a, b)| a * b).sum::<f64>() - rng.gen_range(0.1..1.0);
                p.add_ge(g, h);
            }
            p.c = c.clone();
            let planted: f64 = c.iter().zip(&xstar).map(|(a, b)| a * b).sum();
            let s = solve_lp(&p).unwrap();
            assert_eq!(s.status, LpStatus::Optimal);
            assert!(
                (s.objective - planted).abs() < 1e-6,
                "objective {} vs planted {}",
                s.objective,
                planted
            );
        }
    }

    #[test]
    fn deterministic_resolve() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 6;
        let mut p = LpProblem::minimize((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect());
        for j in 0..n {
            p.set_bounds(j, 0.0, rng.gen_range(0.5..2.0));
        }
        for _ in 0..4 {
            let g: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            p.add_ge(g, -0.5);
        }
        let a = solve_lp(&p).unwrap();
        let b = solve_lp(&p).unwrap();
        assert_eq!(a.status, b.status);
        assert_eq!(a.primal, b.primal);
        assert_eq!(a.objective, b.objective);
    }

    #[test]
    fn at_upper_flag_matches_value() {
        let mut p = LpProblem::maximize(vec![1.0, 0.0]);
        p.set_bounds(0, 0.0, 2.5);
        p.set_bounds(1, 0.0, 1.0);
        let s = solve_lp(&p).unwrap();
        assert_eq!(s.flags[0], BoundFlag::AtUpper);
        assert!((s.primal[0] - 2.5).abs() < 1e-7);
    }

    #[test]
    fn iteration_limit_is_reported() {
        let mut p = LpProblem::maximize(vec![1.0, 1.0]);
        p.set_bounds(0, 0.0, f64::INFINITY);
        p.set_bounds(1, 0.0, f64::INFINITY);
        p.add_ge(vec![-1.0, -2.0], -4.0);
        p.add_ge(vec![-3.0, -1.0], -6.0);
        p.max_pivots = Some(1);
        let s = solve_lp(&p).unwrap();
        assert_eq!(s.status, LpStatus::IterationLimit);
    }
}
