//! Builds the concise matrix form of the verification MIP:
//!
//! ```text
//! min gᵀz   s.t.   A z + B y ≥ b,   C z ≥ d,   y ∈ {0,1}^n_y
//! ```
//!
//! with z the concatenation of all layer activations (input block first)
//! and one binary per unstable neuron. The A-block carries the two upper
//! ReLU faces per neuron, specialized by stability class; C carries the
//! input box, the lower faces z ≥ ẑ and z ≥ 0. Stable neurons keep their z
//! columns — only their constraint rows specialize.

use std::io::Write;

use crate::bounds::{BoundsStack, Stability, StabilityMap};
use crate::mat::Mat;
use crate::model::{Ball, Network};
use crate::{Error, Result};

/// The assembled verification MIP plus the index maps the verifiers need.
#[derive(Clone, Debug)]
pub struct MipProblem {
    pub a: Mat,
    pub b: Mat,
    pub c: Mat,
    pub b_rhs: Vec<f64>,
    pub d_rhs: Vec<f64>,
    pub g: Vec<f64>,
    pub n_z: usize,
    pub n_y: usize,
    pub m_b: usize,
    pub m_d: usize,
    /// Offset of each layer's block inside z (length L+1, input first).
    pub layer_offsets: Vec<usize>,
    pub output_offset: usize,
    pub class_c: usize,
    pub target: Option<usize>,
    pub stability: StabilityMap,
    /// Box implied by the propagated bounds, one entry per z variable.
    pub z_lower: Vec<f64>,
    pub z_upper: Vec<f64>,
    /// Post-activation bounds of the final layer, for sizing the master
    /// objective encoding.
    pub out_lower: Vec<f64>,
    pub out_upper: Vec<f64>,
}

/// Assembles the constraint matrices for `(net, ball)` given propagated
/// bounds and stability tags. `class_c` is the predicted class.
pub fn build_mip(
    net: &Network,
    ball: &Ball,
    bs: &BoundsStack,
    sm: &StabilityMap,
    class_c: usize,
) -> Result<MipProblem> {
    if ball.epsilon.is_nan() || ball.epsilon < 0.0 {
        return Err(Error::InvalidArgument("epsilon must be >= 0".into()));
    }
    let dims = net.dims();
    if sm.tags.len() != net.num_layers()
        || sm
            .tags
            .iter()
            .zip(dims.iter().skip(1))
            .any(|(t, &n)| t.len() != n)
        || bs.layers.len() != net.num_layers()
    {
        return Err(Error::InvalidArgument(
            "stability map or bounds do not match the network".into(),
        ));
    }
    if class_c >= net.output_dim() {
        return Err(Error::InvalidArgument(format!(
            "class {class_c} out of range"
        )));
    }

    let n_z: usize = dims.iter().sum();
    let n_y = sm.n_unstable;
    let mut layer_offsets = Vec::with_capacity(dims.len());
    let mut acc = 0;
    for &d in &dims {
        layer_offsets.push(acc);
        acc += d;
    }
    let output_offset = n_z - net.output_dim();

    let last = net.num_layers() - 1;
    let is_relu = |i: usize| i < last || net.final_relu;
    let relu_count: usize = (0..net.num_layers())
        .filter(|&i| is_relu(i))
        .map(|i| dims[i + 1])
        .sum();
    let m_b = 2 * relu_count;
    let mut m_d = 2 * dims[0] + (n_z - dims[0]) + relu_count;
    if !net.final_relu {
        m_d += net.output_dim(); // the −M face of the final equality pair
    }

    let mut a = Mat::zeros(m_b, n_z);
    let mut b = Mat::zeros(m_b, n_y);
    let mut b_rhs = vec![0.0; m_b];
    let mut c = Mat::zeros(m_d, n_z);
    let mut d_rhs = vec![0.0; m_d];

    // row = −M_j over z: +W_i[j,:] on the previous block, −1 on the neuron.
    let fill_neg_m = |row: &mut [f64], i: usize, j: usize| {
        let prev = layer_offsets[i];
        for (k, &w) in net.layers[i].weights.row(j).iter().enumerate() {
            row[prev + k] = w;
        }
        row[layer_offsets[i + 1] + j] = -1.0;
    };

    // A-block: upper ReLU faces, two rows per neuron of every ReLU layer.
    let mut row_hat = 0; // first half: z ≤ ẑ − ℓ(1−y) variants
    let mut row_check = relu_count; // second half: z ≤ u·y variants
    for i in 0..net.num_layers() {
        if !is_relu(i) {
            continue;
        }
        let lb = &bs.layers[i];
        for j in 0..dims[i + 1] {
            let v = net.layers[i].bias[j];
            let own = layer_offsets[i + 1] + j;
            match sm.tags[i][j] {
                Stability::StableActive => {
                    fill_neg_m(a.row_mut(row_hat), i, j);
                    b_rhs[row_hat] = -v;
                    a[(row_check, own)] = -1.0;
                    b_rhs[row_check] = -lb.pre_upper[j];
                }
                Stability::StableInactive => {
                    // z ≤ ẑ − ℓ is slack once z is pinned to zero; the row
                    // stays void to keep the block shape.
                    a[(row_check, own)] = -1.0;
                    b_rhs[row_check] = 0.0;
                }
                Stability::Unstable => {
                    let slot = sm.slots[i][j].unwrap();
                    fill_neg_m(a.row_mut(row_hat), i, j);
                    b[(row_hat, slot)] = lb.pre_lower[j];
                    b_rhs[row_hat] = lb.pre_lower[j] - v;
                    a[(row_check, own)] = -1.0;
                    b[(row_check, slot)] = lb.pre_upper[j];
                    b_rhs[row_check] = 0.0;
                }
                Stability::Linear => unreachable!("linear tag on a ReLU layer"),
            }
            row_hat += 1;
            row_check += 1;
        }
    }

    // C-block: input box, then z ≥ ẑ for every layer, the −M face of a
    // linear final layer, then z ≥ 0 for ReLU layers.
    let mut row = 0;
    for k in 0..dims[0] {
        c[(row, k)] = 1.0;
        d_rhs[row] = bs.input_lower[k];
        row += 1;
    }
    for k in 0..dims[0] {
        c[(row, k)] = -1.0;
        d_rhs[row] = -bs.input_upper[k];
        row += 1;
    }
    for i in 0..net.num_layers() {
        for j in 0..dims[i + 1] {
            // +M_j: −W on the previous block, +1 on the neuron.
            let prev = layer_offsets[i];
            for (k, &w) in net.layers[i].weights.row(j).iter().enumerate() {
                c[(row, prev + k)] = -w;
            }
            c[(row, layer_offsets[i + 1] + j)] = 1.0;
            d_rhs[row] = net.layers[i].bias[j];
            row += 1;
        }
    }
    if !net.final_relu {
        for j in 0..net.output_dim() {
            fill_neg_m(c.row_mut(row), last, j);
            d_rhs[row] = -net.layers[last].bias[j];
            row += 1;
        }
    }
    for i in 0..net.num_layers() {
        if !is_relu(i) {
            continue;
        }
        for j in 0..dims[i + 1] {
            c[(row, layer_offsets[i + 1] + j)] = 1.0;
            d_rhs[row] = 0.0;
            row += 1;
        }
    }
    debug_assert_eq!(row, m_d);

    let mut g = vec![0.0; n_z];
    g[output_offset + class_c] = 1.0;

    let mut z_lower = bs.input_lower.clone();
    let mut z_upper = bs.input_upper.clone();
    for lb in &bs.layers {
        z_lower.extend_from_slice(&lb.post_lower);
        z_upper.extend_from_slice(&lb.post_upper);
    }

    let out = &bs.layers[last];
    Ok(MipProblem {
        a,
        b,
        c,
        b_rhs,
        d_rhs,
        g,
        n_z,
        n_y,
        m_b,
        m_d,
        layer_offsets,
        output_offset,
        class_c,
        target: None,
        stability: sm.clone(),
        z_lower,
        z_upper,
        out_lower: out.post_lower.clone(),
        out_upper: out.post_upper.clone(),
    })
}

impl MipProblem {
    /// Points g at the (c, t) margin: +1 on the predicted class, −1 on the
    /// target, zeros elsewhere. Idempotent per target.
    pub fn set_target(&mut self, t: usize) -> Result<()> {
        let n_out = self.n_z - self.output_offset;
        if t >= n_out {
            return Err(Error::InvalidArgument(format!("target {t} out of range")));
        }
        if t == self.class_c {
            return Err(Error::InvalidArgument(
                "target equals the predicted class".into(),
            ));
        }
        for gk in &mut self.g[self.output_offset..] {
            *gk = 0.0;
        }
        self.g[self.output_offset + self.class_c] = 1.0;
        self.g[self.output_offset + t] = -1.0;
        self.target = Some(t);
        Ok(())
    }

    pub fn output_dim(&self) -> usize {
        self.n_z - self.output_offset
    }

    /// b − B y for a binary y.
    pub fn b_minus_by(&self, y: &[u8]) -> Vec<f64> {
        let y: Vec<f64> = y.iter().map(|&b| f64::from(b)).collect();
        self.b_minus_by_real(&y)
    }

    /// b − B y for a real-valued y (core points).
    pub fn b_minus_by_real(&self, y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(y.len(), self.n_y);
        let mut out = self.b_rhs.clone();
        for (slot, &yi) in y.iter().enumerate() {
            if yi != 0.0 {
                for (r, o) in out.iter_mut().enumerate() {
                    *o -= yi * self.b[(r, slot)];
                }
            }
        }
        out
    }

    /// Writes A, B, C, b, d, g as CSV blocks with dimension headers.
    pub fn write_dump(&self, w: &mut dyn Write) -> std::io::Result<()> {
        let mat = |w: &mut dyn Write, name: &str, m: &Mat| -> std::io::Result<()> {
            writeln!(w, "# {name} {} {}", m.rows(), m.cols())?;
            for r in 0..m.rows() {
                let line: Vec<String> = m.row(r).iter().map(|v| format!("{v}")).collect();
                writeln!(w, "{}", line.join(","))?;
            }
            Ok(())
        };
        let vec = |w: &mut dyn Write, name: &str, v: &[f64]| -> std::io::Result<()> {
            writeln!(w, "# {name} {}", v.len())?;
            let line: Vec<String> = v.iter().map(|x| format!("{x}")).collect();
            writeln!(w, "{}", line.join(","))
        };
        mat(w, "A", &self.a)?;
        mat(w, "B", &self.b)?;
        vec(w, "b", &self.b_rhs)?;
        mat(w, "C", &self.c)?;
        vec(w, "d", &self.d_rhs)?;
        vec(w, "g", &self.g)
    }
}
