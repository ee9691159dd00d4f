//! Interval-arithmetic propagation of pre-activation bounds and per-neuron
//! stability classification.
//!
//! The affine step splits each weight by sign: with W⁺ = max(W, 0) and
//! W⁻ = min(W, 0),
//!
//! ```text
//! ℓ̂ᵢ = W⁻ uᵢ₋₁ + W⁺ ℓᵢ₋₁ + vᵢ,    ûᵢ = W⁺ uᵢ₋₁ + W⁻ ℓᵢ₋₁ + vᵢ.
//! ```
//!
//! Between layers the bounds are clipped to [max(0, ℓ̂), max(0, û)] because
//! the post-activation is z = max(0, ẑ); without the clip the next affine
//! step would not be sound.

use crate::model::{Ball, Network};
use crate::{Error, Result};

/// Per-layer interval bounds, pre- and post-activation.
#[derive(Clone, Debug)]
pub struct LayerBounds {
    pub pre_lower: Vec<f64>,
    pub pre_upper: Vec<f64>,
    pub post_lower: Vec<f64>,
    pub post_upper: Vec<f64>,
}

/// Bounds for the input box and every layer of a network.
#[derive(Clone, Debug)]
pub struct BoundsStack {
    pub input_lower: Vec<f64>,
    pub input_upper: Vec<f64>,
    pub layers: Vec<LayerBounds>,
}

impl BoundsStack {
    /// Post-activation bounds feeding layer `i` (0 = the input box).
    pub fn post(&self, i: usize) -> (&[f64], &[f64]) {
        if i == 0 {
            (&self.input_lower, &self.input_upper)
        } else {
            (
                &self.layers[i - 1].post_lower,
                &self.layers[i - 1].post_upper,
            )
        }
    }
}

/// Stability class of a non-input neuron.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stability {
    /// ℓ̂ ≥ 0: the ReLU is the identity.
    StableActive,
    /// û ≤ 0: the ReLU is constantly zero.
    StableInactive,
    /// ℓ̂ < 0 < û: needs a binary phase variable.
    Unstable,
    /// Final layer of a network without a trailing ReLU.
    Linear,
}

/// Stability tags for every non-input neuron plus the slot map from
/// unstable neurons to their binary-variable index.
#[derive(Clone, Debug)]
pub struct StabilityMap {
    pub tags: Vec<Vec<Stability>>,
    /// For each neuron, its index among the unstable ones (scan order:
    /// layers first, then neurons).
    pub slots: Vec<Vec<Option<usize>>>,
    pub n_unstable: usize,
}

/// Propagates the ball through the network with interval arithmetic.
pub fn propagate_interval(net: &Network, ball: &Ball) -> Result<BoundsStack> {
    if ball.center.len() != net.input_dim() {
        return Err(Error::DimensionMismatch {
            layer: 0,
            detail: format!(
                "center length {} vs n_0 {}",
                ball.center.len(),
                net.input_dim()
            ),
        });
    }
    if ball.epsilon.is_nan() || ball.epsilon < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be >= 0, got {}",
            ball.epsilon
        )));
    }
    let input_lower: Vec<f64> = ball.center.iter().map(|c| c - ball.epsilon).collect();
    let input_upper: Vec<f64> = ball.center.iter().map(|c| c + ball.epsilon).collect();

    let mut layers = Vec::with_capacity(net.num_layers());
    let (mut lo, mut hi) = (input_lower.clone(), input_upper.clone());
    for (i, layer) in net.layers.iter().enumerate() {
        let n = layer.out_dim();
        let mut pre_lower = Vec::with_capacity(n);
        let mut pre_upper = Vec::with_capacity(n);
        for j in 0..n {
            let mut l = layer.bias[j];
            let mut u = layer.bias[j];
            for (k, &w) in layer.weights.row(j).iter().enumerate() {
                if w >= 0.0 {
                    l += w * lo[k];
                    u += w * hi[k];
                } else {
                    l += w * hi[k];
                    u += w * lo[k];
                }
            }
            pre_lower.push(l);
            pre_upper.push(u);
        }
        let relu = i + 1 < net.num_layers() || net.final_relu;
        let (post_lower, post_upper): (Vec<f64>, Vec<f64>) = if relu {
            (
                pre_lower.iter().map(|v| v.max(0.0)).collect(),
                pre_upper.iter().map(|v| v.max(0.0)).collect(),
            )
        } else {
            (pre_lower.clone(), pre_upper.clone())
        };
        lo = post_lower.clone();
        hi = post_upper.clone();
        layers.push(LayerBounds {
            pre_lower,
            pre_upper,
            post_lower,
            post_upper,
        });
    }
    Ok(BoundsStack {
        input_lower,
        input_upper,
        layers,
    })
}

/// Tags every neuron. The active test (ℓ̂ ≥ 0) runs before the inactive
/// one, so a degenerate ℓ̂ = û = 0 neuron is tagged stable-active.
pub fn classify_neurons(bs: &BoundsStack, final_relu: bool) -> StabilityMap {
    let mut tags = Vec::with_capacity(bs.layers.len());
    let mut slots = Vec::with_capacity(bs.layers.len());
    let mut n_unstable = 0;
    let last = bs.layers.len() - 1;
    for (i, lb) in bs.layers.iter().enumerate() {
        let mut layer_tags = Vec::with_capacity(lb.pre_lower.len());
        let mut layer_slots = Vec::with_capacity(lb.pre_lower.len());
        for (&l, &u) in lb.pre_lower.iter().zip(&lb.pre_upper) {
            let tag = if i == last && !final_relu {
                Stability::Linear
            } else if l >= 0.0 {
                Stability::StableActive
            } else if u <= 0.0 {
                Stability::StableInactive
            } else {
                Stability::Unstable
            };
            layer_slots.push(if tag == Stability::Unstable {
                n_unstable += 1;
                Some(n_unstable - 1)
            } else {
                None
            });
            layer_tags.push(tag);
        }
        tags.push(layer_tags);
        slots.push(layer_slots);
    }
    StabilityMap {
        tags,
        slots,
        n_unstable,
    }
}

impl Stability {
    pub fn as_str(self) -> &'static str {
        match self {
            Stability::StableActive => "stable_active",
            Stability::StableInactive => "stable_inactive",
            Stability::Unstable => "unstable",
            Stability::Linear => "linear",
        }
    }
}
