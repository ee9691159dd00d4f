//! Binary fixed-point encodings for the master problem, QUBO assembly,
//! Ising conversion and the two master solvers that work on them
//! (exhaustive enumeration and simulated annealing).
//!
//! Bit layout of the master vector x = (p, y, a¹, …, aᵗ): the η segment p
//! is LSB-first with the sign bit last, decoding to
//! ω_p·(−2^{n_p−1} p_{n_p−1} + Σ 2^i p_i); each slack segment aᵏ decodes to
//! ω_a·Σ 2^i aᵏ_i. One penalized cut contributes the row
//! h = (−w_p, −αB, 0, …, w_a, …, 0) and the scalar e = αb + βd, and the
//! whole objective is
//!
//! ```text
//! w_p·p + ½‖y − y_prev‖² + Σ_k (e_k + h^[k]·x)²
//! ```
//!
//! which expands to the quadratic form Q = Σ h⊗h + diag(0, ½·1, 0),
//! q = 2Σ e_k h^[k] + (w_p, −y_prev, 0), κ = Σ e_k² + ½Σ y_prev. Ray cuts
//! carry no η term, so their h rows have a zero p segment.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::benders::{Cut, CutKind};
use crate::mat::Mat;
use crate::{Error, Result};

/// Segment layout of the master bit vector.
#[derive(Clone, Debug, PartialEq)]
pub struct BitLayout {
    pub n_p: usize,
    pub n_y: usize,
    pub slack_bits: Vec<usize>,
    pub omega_p: f64,
    pub omega_a: f64,
}

impl BitLayout {
    pub fn new(n_p: usize, n_y: usize, slack_bits: Vec<usize>, omega_p: f64, omega_a: f64) -> Self {
        debug_assert!(n_p >= 2);
        debug_assert!(slack_bits.iter().all(|&b| b >= 1));
        BitLayout {
            n_p,
            n_y,
            slack_bits,
            omega_p,
            omega_a,
        }
    }

    /// Total number of master variables (qubits).
    pub fn total(&self) -> usize {
        self.n_p + self.n_y + self.slack_bits.iter().sum::<usize>()
    }

    pub fn y_offset(&self) -> usize {
        self.n_p
    }

    pub fn slack_offset(&self, k: usize) -> usize {
        self.n_p + self.n_y + self.slack_bits[..k].iter().sum::<usize>()
    }

    /// Signed two's-complement weights of the η segment.
    pub fn eta_weights(&self) -> Vec<f64> {
        let mut w: Vec<f64> = (0..self.n_p - 1)
            .map(|i| self.omega_p * f64::powi(2.0, i as i32))
            .collect();
        w.push(-self.omega_p * f64::powi(2.0, (self.n_p - 1) as i32));
        w
    }

    pub fn slack_weights(&self, k: usize) -> Vec<f64> {
        (0..self.slack_bits[k])
            .map(|i| self.omega_a * f64::powi(2.0, i as i32))
            .collect()
    }

    /// Largest encodable η.
    pub fn eta_bar(&self) -> f64 {
        eta_bar(self.n_p, self.omega_p)
    }

    /// Smallest encodable η.
    pub fn eta_min(&self) -> f64 {
        -self.omega_p * f64::powi(2.0, (self.n_p - 1) as i32)
    }

    /// Splits a master vector into (η, y, slack values).
    pub fn decode(&self, x: &[u8]) -> (f64, Vec<u8>, Vec<f64>) {
        debug_assert_eq!(x.len(), self.total());
        let eta = decode_eta(&x[..self.n_p], self.omega_p);
        let y = x[self.y_offset()..self.y_offset() + self.n_y].to_vec();
        let slacks = (0..self.slack_bits.len())
            .map(|k| {
                let off = self.slack_offset(k);
                decode_slack(&x[off..off + self.slack_bits[k]], self.omega_a)
            })
            .collect();
        (eta, y, slacks)
    }
}

/// Smallest power-of-two exponent with 2^k ≥ v.
fn ceil_log2(v: f64) -> usize {
    debug_assert!(v >= 1.0);
    let mut k = v.log2().ceil() as usize;
    // Guard the float against boundary cases.
    while f64::powi(2.0, k as i32) < v {
        k += 1;
    }
    while k > 0 && f64::powi(2.0, k as i32 - 1) >= v {
        k -= 1;
    }
    k
}

/// Number of η bits (sign included) so the decoded range covers
/// ±(u_c + u_t) at resolution ω_p. Never below 2.
pub fn size_eta_bits(u_c: f64, u_t: f64, omega_p: f64) -> usize {
    debug_assert!(u_c >= 0.0 && u_t >= 0.0 && omega_p > 0.0);
    let n = 1 + ceil_log2(1.0 + (u_c + u_t) / omega_p);
    n.max(2)
}

/// Largest decodable η for a layout of `n_p` bits: ω_p·(2^{n_p−1} − 1).
pub fn eta_bar(n_p: usize, omega_p: f64) -> f64 {
    omega_p * (f64::powi(2.0, (n_p - 1) as i32) - 1.0)
}

/// Number of slack bits so ω_a·(2^n − 1) reaches |e_k| + η̄ + ‖αB‖₁.
/// Never below 1.
pub fn size_slack_bits(e_k: f64, eta_bar: f64, row_l1: f64, omega_a: f64) -> usize {
    debug_assert!(omega_a > 0.0);
    let reach = (e_k.abs() + eta_bar + row_l1) / omega_a + 1.0;
    ceil_log2(reach).max(1)
}

/// Decodes the two's-complement η segment (LSB first, sign bit last).
pub fn decode_eta(p: &[u8], omega_p: f64) -> f64 {
    let n = p.len();
    let mut v = 0.0;
    for (i, &bit) in p.iter().enumerate().take(n - 1) {
        v += f64::from(bit) * f64::powi(2.0, i as i32);
    }
    v -= f64::from(p[n - 1]) * f64::powi(2.0, (n - 1) as i32);
    omega_p * v
}

/// Decodes an unsigned slack segment (LSB first).
pub fn decode_slack(a: &[u8], omega_a: f64) -> f64 {
    omega_a
        * a.iter()
            .enumerate()
            .map(|(i, &bit)| f64::from(bit) * f64::powi(2.0, i as i32))
            .sum::<f64>()
}

/// The quadratic form x'Qx + q·x + κ over binary x.
#[derive(Clone, Debug)]
pub struct QuboModel {
    pub q: Mat,
    pub linear: Vec<f64>,
    pub offset: f64,
    pub layout: BitLayout,
}

impl QuboModel {
    pub fn n(&self) -> usize {
        self.linear.len()
    }

    pub fn evaluate(&self, x: &[u8]) -> f64 {
        debug_assert_eq!(x.len(), self.n());
        let mut v = self.offset;
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0 {
                continue;
            }
            v += self.linear[i];
            let row = self.q.row(i);
            for (j, &xj) in x.iter().enumerate() {
                if xj != 0 {
                    v += row[j];
                }
            }
        }
        v
    }

    /// Writes the model as an edge list `i,j,value` (diagonal entries fold
    /// the linear term, off-diagonal pairs are combined) plus an offset
    /// line — the interchange format for external annealers.
    pub fn write_edge_list(&self, w: &mut dyn std::io::Write) -> std::io::Result<()> {
        let n = self.n();
        for i in 0..n {
            let v = self.q[(i, i)] + self.linear[i];
            if v != 0.0 {
                writeln!(w, "{i},{i},{v}")?;
            }
            for j in i + 1..n {
                let v = self.q[(i, j)] + self.q[(j, i)];
                if v != 0.0 {
                    writeln!(w, "{i},{j},{v}")?;
                }
            }
        }
        writeln!(w, "offset,{}", self.offset)
    }
}

/// Spin model with fields h, strictly upper-triangular couplings J and a
/// constant offset; energy(s) = −Σ hᵢsᵢ − Σ Jᵢⱼsᵢsⱼ + offset.
#[derive(Clone, Debug)]
pub struct IsingModel {
    pub h: Vec<f64>,
    pub j: Mat,
    pub offset: f64,
}

impl IsingModel {
    pub fn n(&self) -> usize {
        self.h.len()
    }

    pub fn energy(&self, s: &[i8]) -> f64 {
        debug_assert_eq!(s.len(), self.n());
        let mut e = self.offset;
        for (i, &si) in s.iter().enumerate() {
            e -= self.h[i] * f64::from(si);
            let row = self.j.row(i);
            for (j, &sj) in s.iter().enumerate().skip(i + 1) {
                if row[j] != 0.0 {
                    e -= row[j] * f64::from(si) * f64::from(sj);
                }
            }
        }
        e
    }
}

/// Builds the penalized master QUBO from the active cuts. `y_prev = None`
/// drops the Hamming regularizer entirely (the v1 master).
pub fn assemble_qubo(cuts: &[Cut], y_prev: Option<&[u8]>, layout: &BitLayout) -> Result<QuboModel> {
    if cuts.len() != layout.slack_bits.len() {
        return Err(Error::InvalidArgument(format!(
            "layout has {} slack segments for {} cuts",
            layout.slack_bits.len(),
            cuts.len()
        )));
    }
    if let Some(yp) = y_prev {
        if yp.len() != layout.n_y {
            return Err(Error::InvalidArgument(
                "y_prev length does not match layout".into(),
            ));
        }
    }
    let n = layout.total();
    let w_p = layout.eta_weights();
    let mut q = Mat::zeros(n, n);
    let mut linear = vec![0.0; n];
    let mut offset = 0.0;

    // Base objective: the η term, plus the Hamming distance to y_prev.
    for (i, &w) in w_p.iter().enumerate() {
        linear[i] += w;
    }
    if let Some(yp) = y_prev {
        let y0 = layout.y_offset();
        for (i, &ypi) in yp.iter().enumerate() {
            q[(y0 + i, y0 + i)] += 0.5;
            linear[y0 + i] -= f64::from(ypi);
            offset += 0.5 * f64::from(ypi);
        }
    }

    // One squared penalty per cut.
    for (k, cut) in cuts.iter().enumerate() {
        if cut.row.len() != layout.n_y {
            return Err(Error::InvalidArgument(
                "cut row length does not match layout".into(),
            ));
        }
        let mut h = vec![0.0; n];
        if cut.kind == CutKind::ExtremePoint {
            for (i, &w) in w_p.iter().enumerate() {
                h[i] = -w;
            }
        }
        let y0 = layout.y_offset();
        for (i, &r) in cut.row.iter().enumerate() {
            h[y0 + i] = -r;
        }
        let a0 = layout.slack_offset(k);
        for (i, w) in layout.slack_weights(k).into_iter().enumerate() {
            h[a0 + i] = w;
        }

        for (i, &hi) in h.iter().enumerate() {
            if hi == 0.0 {
                continue;
            }
            linear[i] += 2.0 * cut.e_k * hi;
            for (j, &hj) in h.iter().enumerate() {
                if hj != 0.0 {
                    q[(i, j)] += hi * hj;
                }
            }
        }
        offset += cut.e_k * cut.e_k;
    }

    Ok(QuboModel {
        q,
        linear,
        offset,
        layout: layout.clone(),
    })
}

/// Folds the linear term into the diagonal (x² = x) and substitutes
/// s = 2x − 1. If `prune_threshold` is set, couplings with
/// |J| ≤ threshold·max|J| are zeroed after the conversion.
pub fn qubo_to_ising(m: &QuboModel, prune_threshold: Option<f64>) -> IsingModel {
    let n = m.n();
    // Q' = sym(Q) + diag(q); evaluate(x) = xᵀQ'x + κ for binary x. Under
    // x = (1+s)/2 this expands to
    //   κ + ¼(ΣᵢⱼQ' + tr Q') − Σᵢ(−½ rᵢ)sᵢ − Σ_{i<j}(−½ Q'ᵢⱼ)sᵢsⱼ
    // with rᵢ the row sums.
    let mut qp = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            qp[(i, j)] = 0.5 * (m.q[(i, j)] + m.q[(j, i)]);
        }
        qp[(i, i)] += m.linear[i];
    }
    let mut h = vec![0.0; n];
    let mut j_mat = Mat::zeros(n, n);
    let mut total = 0.0;
    let mut trace = 0.0;
    for i in 0..n {
        let mut row_sum = 0.0;
        for j in 0..n {
            row_sum += qp[(i, j)];
            if j > i {
                j_mat[(i, j)] = -0.5 * qp[(i, j)];
            }
        }
        total += row_sum;
        trace += qp[(i, i)];
        h[i] = -0.5 * row_sum;
    }
    let offset = m.offset + 0.25 * (total + trace);

    if let Some(t) = prune_threshold {
        let max_j = (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .map(|(i, j)| j_mat[(i, j)].abs())
            .fold(0.0f64, f64::max);
        for i in 0..n {
            for j in (i + 1)..n {
                if j_mat[(i, j)].abs() <= t * max_j {
                    j_mat[(i, j)] = 0.0;
                }
            }
        }
    }

    IsingModel {
        h,
        j: j_mat,
        offset,
    }
}

/// Global minimum by Gray-code enumeration; ties resolve to the
/// lexicographically smallest bit vector. Guarded at 24 bits.
pub fn solve_exhaustive(m: &QuboModel) -> Result<(Vec<u8>, f64)> {
    let n = m.n();
    if n > 24 {
        return Err(Error::InvalidArgument(format!(
            "{n} bits is too many to enumerate"
        )));
    }
    if n == 0 {
        return Ok((Vec::new(), m.offset));
    }
    let mut x = vec![0u8; n];
    // g[i] = Σ_{j≠i} Q_ij x_j, maintained incrementally.
    let mut g = vec![0.0; n];
    let mut energy = m.offset;
    let mut best_e = energy;
    let mut best_x = x.clone();
    for step in 1u64..(1u64 << n) {
        let i = step.trailing_zeros() as usize;
        let delta = (1.0 - 2.0 * f64::from(x[i])) * (m.linear[i] + m.q[(i, i)] + 2.0 * g[i]);
        energy += delta;
        let dx = 1.0 - 2.0 * f64::from(x[i]);
        x[i] ^= 1;
        for (j, gj) in g.iter_mut().enumerate() {
            if j != i {
                let qij = 0.5 * (m.q[(i, j)] + m.q[(j, i)]);
                if qij != 0.0 {
                    *gj += qij * dx;
                }
            }
        }
        if energy < best_e + 1e-9 {
            let exact = m.evaluate(&x);
            if exact < best_e || (exact == best_e && x < best_x) {
                best_e = exact;
                best_x = x.clone();
            }
        }
    }
    Ok((best_x, best_e))
}

/// Metropolis single-spin-flip annealing with a geometric inverse
/// temperature schedule. Reads run independently with per-read generators
/// seeded `seed + read`; the best read wins, lowest read index on ties.
/// Deterministic for a fixed seed.
pub fn solve_sa(m: &IsingModel, reads: usize, sweeps: usize, seed: u64) -> (Vec<u8>, f64) {
    let n = m.n();
    if n == 0 || reads == 0 || sweeps == 0 {
        return (vec![0; n], m.offset);
    }
    // Dense symmetric couplings for the local-field updates.
    let mut coupling = Mat::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = m.j[(i, j)];
            coupling[(i, j)] = v;
            coupling[(j, i)] = v;
        }
    }
    // Scale-free schedule endpoints from the model's energy scales.
    let mut delta_max = 0.0f64;
    for i in 0..n {
        let r: f64 = m.h[i].abs() + coupling.row(i).iter().map(|v| v.abs()).sum::<f64>();
        delta_max = delta_max.max(r);
    }
    if delta_max <= 0.0 {
        delta_max = 1.0;
    }
    let delta_min =
        m.h.iter()
            .map(|v| v.abs())
            .filter(|v| *v > 0.0)
            .fold(f64::INFINITY, f64::min);
    let delta_min = if delta_min.is_finite() {
        delta_min.max(1e-3)
    } else {
        1e-3
    };
    let beta_cold = 8.0 / delta_min;
    let beta_hot = (0.1 / delta_max).min(beta_cold);
    let ratio = beta_cold / beta_hot;
    let denom = (sweeps - 1).max(1) as f64;

    let best = (0..reads as u64)
        .into_par_iter()
        .map(|read| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(read));
            let mut s: Vec<i8> = (0..n)
                .map(|_| if rng.gen::<bool>() { 1 } else { -1 })
                .collect();
            let mut field: Vec<f64> = (0..n)
                .map(|i| {
                    m.h[i]
                        + coupling
                            .row(i)
                            .iter()
                            .zip(&s)
                            .map(|(j, &sj)| j * f64::from(sj))
                            .sum::<f64>()
                })
                .collect();
            let mut energy = m.energy(&s);
            let mut best_e = energy;
            let mut best_s = s.clone();
            for sweep in 0..sweeps {
                let beta = beta_hot * ratio.powf(sweep as f64 / denom);
                for i in 0..n {
                    let delta = 2.0 * f64::from(s[i]) * field[i];
                    let accept = delta <= 0.0 || rng.gen::<f64>() < (-beta * delta).exp();
                    if accept {
                        let ds = -2.0 * f64::from(s[i]);
                        s[i] = -s[i];
                        energy += delta;
                        let row = coupling.row(i);
                        for (j, fj) in field.iter_mut().enumerate() {
                            if j != i && row[j] != 0.0 {
                                *fj += row[j] * ds;
                            }
                        }
                        if energy < best_e {
                            best_e = energy;
                            best_s.copy_from_slice(&s);
                        }
                    }
                }
            }
            (m.energy(&best_s), read, best_s)
        })
        .reduce_with(|a, b| match a.0.total_cmp(&b.0) {
            std::cmp::Ordering::Less => a,
            std::cmp::Ordering::Greater => b,
            std::cmp::Ordering::Equal => {
                if a.1 <= b.1 {
                    a
                } else {
                    b
                }
            }
        })
        .expect("at least one read");

    let x = best.2.iter().map(|&si| u8::from(si > 0)).collect();
    (x, best.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benders::{Cut, CutKind};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn point_cut(e_k: f64, row: Vec<f64>) -> Cut {
        Cut {
            alpha: Vec::new(),
            beta: Vec::new(),
            kind: CutKind::ExtremePoint,
            e_k,
            row,
            birth: 0,
            slack_bits: 0,
        }
    }

    #[test]
    fn eta_sizing_examples() {
        assert_eq!(size_eta_bits(3.0, 4.0, 1.0), 4);
        assert!((eta_bar(4, 1.0) - 7.0).abs() < 1e-12);
        assert_eq!(size_eta_bits(0.0, 0.0, 1.0), 2);
        assert_eq!(size_eta_bits(3.0, 4.0, 0.01), 11);
    }

    #[test]
    fn slack_sizing_examples() {
        assert_eq!(size_slack_bits(2.0, 7.0, 1.0, 1.0), 4);
        assert!(1.0 * (f64::powi(2.0, 4) - 1.0) >= 10.0);
        assert_eq!(size_slack_bits(0.0, 0.0, 0.0, 1.0), 1);
        assert_eq!(size_slack_bits(-2.0, 7.0, 1.0, 1.0), 4);
    }

    #[test]
    fn decode_examples() {
        assert_eq!(decode_eta(&[1, 0, 1, 0], 1.0), 5.0);
        assert_eq!(decode_eta(&[0, 0, 0, 1], 1.0), -8.0);
        assert!((decode_slack(&[1, 1], 0.1) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn eta_range_covers_the_class_budget() {
        for (uc, ut, wp) in [(3.0, 4.0, 1.0), (0.7, 0.2, 0.01), (10.0, 0.0, 0.1)] {
            let n_p = size_eta_bits(uc, ut, wp);
            assert!(eta_bar(n_p, wp) >= uc + ut);
            assert!(-wp * f64::powi(2.0, (n_p - 1) as i32) <= -(uc + ut));
        }
    }

    /// Direct evaluation of the penalized master objective.
    fn direct_objective(cuts: &[Cut], y_prev: Option<&[u8]>, layout: &BitLayout, x: &[u8]) -> f64 {
        let (eta, y, slacks) = layout.decode(x);
        let mut v = eta;
        if let Some(yp) = y_prev {
            v += 0.5
                * y.iter()
                    .zip(yp)
                    .map(|(&a, &b)| (f64::from(a) - f64::from(b)).powi(2))
                    .sum::<f64>();
        }
        for (k, cut) in cuts.iter().enumerate() {
            let row_dot: f64 = cut
                .row
                .iter()
                .zip(&y)
                .map(|(r, &yi)| r * f64::from(yi))
                .sum();
            let eta_term = if cut.kind == CutKind::ExtremePoint {
                eta
            } else {
                0.0
            };
            v += (cut.e_k - row_dot - eta_term + slacks[k]).powi(2);
        }
        v
    }

    #[test]
    fn four_bit_hand_example() {
        // n_p=2 (w_p = (1,−2)), one y with αB = 1, one slack bit, e = 0.5.
        let layout = BitLayout::new(2, 1, vec![1], 1.0, 1.0);
        let cuts = vec![point_cut(0.5, vec![1.0])];
        let y_prev = vec![0u8];
        let m = assemble_qubo(&cuts, Some(&y_prev), &layout).unwrap();
        assert!((m.evaluate(&[0, 0, 0, 0]) - 0.25).abs() < 1e-12);
        assert!((m.evaluate(&[0, 0, 1, 0]) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn zero_cuts_is_objective_plus_hamming() {
        let layout = BitLayout::new(3, 2, vec![], 0.5, 1.0);
        let y_prev = vec![0u8, 0];
        let m = assemble_qubo(&[], Some(&y_prev), &layout).unwrap();
        for x in 0u8..32 {
            let bits: Vec<u8> = (0..5).map(|i| (x >> i) & 1).collect();
            let (eta, y, _) = layout.decode(&bits);
            let want = eta + 0.5 * y.iter().map(|&b| f64::from(b)).sum::<f64>();
            assert!((m.evaluate(&bits) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn qubo_matches_direct_expression() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..30 {
            let n_y = rng.gen_range(1..4);
            let n_cuts = rng.gen_range(0..4);
            let cuts: Vec<Cut> = (0..n_cuts)
                .map(|_| {
                    let mut c = point_cut(
                        rng.gen_range(-3.0..3.0),
                        (0..n_y).map(|_| rng.gen_range(-2.0..2.0)).collect(),
                    );
                    if rng.gen_bool(0.3) {
                        c.kind = CutKind::ExtremeRay;
                    }
                    c
                })
                .collect();
            let layout = BitLayout::new(
                rng.gen_range(2..5),
                n_y,
                (0..n_cuts).map(|_| rng.gen_range(1..4)).collect(),
                0.25,
                0.5,
            );
            let y_prev: Option<Vec<u8>> = if rng.gen_bool(0.5) {
                Some((0..n_y).map(|_| u8::from(rng.gen_bool(0.5))).collect())
            } else {
                None
            };
            let m = assemble_qubo(&cuts, y_prev.as_deref(), &layout).unwrap();
            // Q is symmetric by construction.
            for i in 0..m.n() {
                for j in 0..m.n() {
                    assert!((m.q[(i, j)] - m.q[(j, i)]).abs() < 1e-12);
                }
            }
            for _ in 0..40 {
                let x: Vec<u8> = (0..layout.total())
                    .map(|_| u8::from(rng.gen_bool(0.5)))
                    .collect();
                let got = m.evaluate(&x);
                let want = direct_objective(&cuts, y_prev.as_deref(), &layout, &x);
                assert!((got - want).abs() < 1e-9, "{got} vs {want}");
            }
        }
    }

    #[test]
    fn ising_identity_exhaustive() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..10 {
            let n = rng.gen_range(1..9);
            let layout = BitLayout::new(2, n.max(2) - 2, vec![], 1.0, 1.0);
            let total = layout.total();
            let mut q = Mat::zeros(total, total);
            for i in 0..total {
                for j in i..total {
                    let v = rng.gen_range(-1.0..1.0);
                    q[(i, j)] = v;
                    q[(j, i)] = v;
                }
            }
            let m = QuboModel {
                q,
                linear: (0..total).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                offset: rng.gen_range(-1.0..1.0),
                layout,
            };
            let ising = qubo_to_ising(&m, None);
            for mask in 0u32..(1 << total) {
                let x: Vec<u8> = (0..total).map(|i| ((mask >> i) & 1) as u8).collect();
                let s: Vec<i8> = x.iter().map(|&b| if b == 1 { 1 } else { -1 }).collect();
                assert!((m.evaluate(&x) - ising.energy(&s)).abs() < 1e-9);
            }
        }
    }

    proptest! {
        /// The spin substitution preserves energies for arbitrary
        /// symmetric quadratic forms and assignments.
        #[test]
        fn spin_energy_identity(
            entries in proptest::collection::vec(-2.0f64..2.0, 21),
            linear in proptest::collection::vec(-2.0f64..2.0, 6),
            offset in -3.0f64..3.0,
            assignment in 0u32..64,
        ) {
            let n = 6;
            let mut q = Mat::zeros(n, n);
            let mut it = entries.into_iter();
            for i in 0..n {
                for j in i..n {
                    let v = it.next().unwrap();
                    q[(i, j)] = v;
                    q[(j, i)] = v;
                }
            }
            let layout = BitLayout::new(2, 4, vec![], 1.0, 1.0);
            let m = QuboModel { q, linear, offset, layout };
            let ising = qubo_to_ising(&m, None);
            let x: Vec<u8> = (0..n).map(|i| ((assignment >> i) & 1) as u8).collect();
            let s: Vec<i8> = x.iter().map(|&b| if b == 1 { 1 } else { -1 }).collect();
            prop_assert!((m.evaluate(&x) - ising.energy(&s)).abs() <= 1e-9);
        }
    }

    #[test]
    fn ising_linear_only_example() {
        let layout = BitLayout::new(2, 0, vec![], 1.0, 1.0);
        let m = QuboModel {
            q: Mat::zeros(2, 2),
            linear: vec![1.0, -1.0],
            offset: 0.0,
            layout,
        };
        let ising = qubo_to_ising(&m, None);
        // evaluate(x) = x_0 − x_1, minimal at x = (0, 1) with value −1.
        assert!((ising.energy(&[-1, 1]) + 1.0).abs() < 1e-12);
        let (x, v) = solve_exhaustive(&m).unwrap();
        assert_eq!(x, vec![0, 1]);
        assert!((v + 1.0).abs() < 1e-12);
    }

    #[test]
    fn prune_extremes() {
        let layout = BitLayout::new(2, 2, vec![], 1.0, 1.0);
        let mut q = Mat::zeros(4, 4);
        q[(0, 1)] = 1.0;
        q[(1, 0)] = 1.0;
        q[(2, 3)] = 0.1;
        q[(3, 2)] = 0.1;
        let m = QuboModel {
            q,
            linear: vec![0.5; 4],
            offset: 0.0,
            layout,
        };
        let full = qubo_to_ising(&m, Some(1.0));
        for i in 0..4 {
            for j in (i + 1)..4 {
                assert_eq!(full.j[(i, j)], 0.0);
            }
        }
        assert!(full.h.iter().any(|&v| v != 0.0));
        let partial = qubo_to_ising(&m, Some(0.5));
        assert!(partial.j[(0, 1)] != 0.0);
        assert_eq!(partial.j[(2, 3)], 0.0);
    }

    #[test]
    fn exhaustive_trivial_cases() {
        let layout = BitLayout::new(2, 0, vec![], 1.0, 1.0);
        let mut q = Mat::zeros(3, 3);
        for i in 0..3 {
            q[(i, i)] = 1.0;
        }
        let m = QuboModel {
            q,
            linear: vec![0.0; 3],
            offset: 2.5,
            layout: layout.clone(),
        };
        let (x, v) = solve_exhaustive(&m).unwrap();
        assert_eq!(x, vec![0, 0, 0]);
        assert!((v - 2.5).abs() < 1e-12);

        let m = QuboModel {
            q: Mat::zeros(1, 1),
            linear: vec![-1.0],
            offset: 0.0,
            layout,
        };
        let (x, v) = solve_exhaustive(&m).unwrap();
        assert_eq!(x, vec![1]);
        assert!((v + 1.0).abs() < 1e-12);
    }

    #[test]
    fn sa_independent_spins() {
        let ising = IsingModel {
            h: vec![1.0, -1.0],
            j: Mat::zeros(2, 2),
            offset: 0.0,
        };
        let (x, v) = solve_sa(&ising, 4, 200, 3);
        assert_eq!(x, vec![1, 0]); // s = (+1, −1)
        assert!((v + 2.0).abs() < 1e-12);
    }

    #[test]
    fn sa_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 8;
        let mut j = Mat::zeros(n, n);
        for i in 0..n {
            for k in (i + 1)..n {
                j[(i, k)] = rng.gen_range(-1.0..1.0);
            }
        }
        let ising = IsingModel {
            h: (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            j,
            offset: 0.3,
        };
        let a = solve_sa(&ising, 8, 300, 42);
        let b = solve_sa(&ising, 8, 300, 42);
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn sa_finds_small_optima() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut hits = 0;
        let total = 20;
        for trial in 0..total {
            let layout = BitLayout::new(2, 6, vec![], 1.0, 1.0);
            let n = layout.total();
            let mut q = Mat::zeros(n, n);
            for i in 0..n {
                for j in i..n {
                    let v = rng.gen_range(-1.0..1.0);
                    q[(i, j)] = v;
                    q[(j, i)] = v;
                }
            }
            let m = QuboModel {
                q,
                linear: (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                offset: 0.0,
                layout,
            };
            let (_, truth) = solve_exhaustive(&m).unwrap();
            let ising = qubo_to_ising(&m, None);
            let (_, sa_v) = solve_sa(&ising, 20, 2000, 100 + trial);
            if (sa_v - truth).abs() <= 1e-9 {
                hits += 1;
            }
        }
        assert!(hits >= total * 9 / 10, "SA hit only {hits}/{total}");
    }

    #[test]
    fn quantization_grid_spacing() {
        let n_p = size_eta_bits(1.5, 1.0, 0.25);
        let layout = BitLayout::new(n_p, 0, vec![], 0.25, 1.0);
        let mut grid: Vec<f64> = (0u32..(1 << n_p))
            .map(|mask| {
                let bits: Vec<u8> = (0..n_p).map(|i| ((mask >> i) & 1) as u8).collect();
                decode_eta(&bits, 0.25)
            })
            .collect();
        grid.sort_by(f64::total_cmp);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let eta = rng.gen_range(layout.eta_min()..layout.eta_bar());
            let nearest = grid
                .iter()
                .map(|g| (g - eta).abs())
                .fold(f64::INFINITY, f64::min);
            assert!(nearest <= 0.25, "gap {nearest} exceeds the grid spacing");
        }
    }
}
