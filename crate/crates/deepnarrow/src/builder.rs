//! Fixed-width slot-program builder.
//!
//! Deep narrow nets are easiest to describe in "value space": every hidden
//! layer has the same slots, and each slot either carries a value forward,
//! or applies the genuine activation to an affine combination of the
//! previous layer's slot values. Physically a carried value is stored in an
//! encoded form (for example `softplus(v + C)` stores `v + C`), so every
//! consumer weight has to be rewritten against the stored encoding. The
//! builder tracks one affine decode per slot and performs that rewriting,
//! which keeps the construction code free of compensation bookkeeping.

use crate::activation::ActivationSpec;
use crate::error::{Error, Result};
use crate::net::Layer;
use serde::{Deserialize, Serialize};

/// Affine decode of a stored slot: value = a * stored + b.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decode {
    pub a: f64,
    pub b: f64,
}

impl Decode {
    pub fn raw() -> Self {
        Decode { a: 1.0, b: 0.0 }
    }
}

/// How identity carries are realized for the target activation.
#[derive(Debug, Clone, PartialEq)]
pub enum CarryKind {
    /// relu(v + C) - C with C a power of two clearing the range: bit-exact.
    ReluShift,
    /// softplus(v + C) - C with C a power of two deep in the linear tail:
    /// exact to the last bit for |v| in range (the tail term e^{-C} rounds
    /// away against ulp(C)).
    SoftplusShift,
    /// (sigma(alpha + h v) - sigma(alpha)) / (h sigma'(alpha)): first-order
    /// identity gadget for activations without a saturating shift. The
    /// caller picks h to balance the O(h) bias against cancellation noise.
    Anchored {
        act: ActivationSpec,
        alpha: f64,
        h: f64,
    },
}

impl CarryKind {
    /// Decode a consumer would use to read a value carried with this kind.
    pub fn decode_at(&self, lo: f64) -> Result<Decode> {
        Ok(self.realize(lo)?.3)
    }

    /// (weight scale s, bias shift t, activation, decode) realizing
    /// stored = act(s*z + t), value z = decode(stored), for pre-activation
    /// values z >= lo.
    fn realize(&self, lo: f64) -> Result<(f64, f64, ActivationSpec, Decode)> {
        match self {
            CarryKind::ReluShift => {
                let c = shift_for(lo, 0.0);
                Ok((1.0, c, ActivationSpec::relu(), Decode { a: 1.0, b: -c }))
            }
            CarryKind::SoftplusShift => {
                // need s*z + t >= 37 so the softplus tail underflows
                let c = shift_for(lo, 40.0);
                Ok((
                    1.0,
                    c,
                    ActivationSpec::softplus(),
                    Decode { a: 1.0, b: -c },
                ))
            }
            CarryKind::Anchored { act, alpha, h } => {
                let d1 = act.d1(*alpha);
                if !(h.is_finite() && *h > 0.0) || d1.abs() < 1e-12 {
                    return Err(Error::AnchorCondition(format!(
                        "carry anchor alpha={alpha} has derivative {d1}"
                    )));
                }
                let s0 = act.eval(*alpha);
                Ok((
                    *h,
                    *alpha,
                    act.clone(),
                    Decode {
                        a: 1.0 / (h * d1),
                        b: -s0 / (h * d1),
                    },
                ))
            }
        }
    }
}

/// Smallest power of two C with lo + C >= floor (and C >= 64 for headroom).
fn shift_for(lo: f64, floor: f64) -> f64 {
    let need = (floor - lo).max(0.0);
    let mut c = 64.0f64;
    while c < need {
        c *= 2.0;
    }
    c
}

/// One slot of one layer, in value space.
#[derive(Debug, Clone)]
pub enum Row {
    /// Carry an affine combination of previous slot values forward through
    /// the builder's identity encoding. `lo` is a lower bound on the carried
    /// value (used to size the shift).
    Carry {
        terms: Vec<(usize, f64)>,
        bias: f64,
        lo: f64,
    },
    /// Apply a genuine activation to an affine combination of previous slot
    /// values; the caller declares how consumers decode the stored output.
    Genuine {
        terms: Vec<(usize, f64)>,
        bias: f64,
        act: ActivationSpec,
        decode: Decode,
    },
}

impl Row {
    pub fn carry1(slot: usize, lo: f64) -> Row {
        Row::Carry {
            terms: vec![(slot, 1.0)],
            bias: 0.0,
            lo,
        }
    }

    /// Inert slot: carries the constant zero.
    pub fn idle() -> Row {
        Row::Carry {
            terms: Vec::new(),
            bias: 0.0,
            lo: 0.0,
        }
    }
}

pub struct SlotBuilder {
    input_dim: usize,
    width: usize,
    carry: CarryKind,
    decode: Vec<Decode>,
    layers: Vec<Layer>,
}

impl SlotBuilder {
    pub fn new(input_dim: usize, width: usize, carry: CarryKind) -> Self {
        SlotBuilder {
            input_dim,
            width,
            carry,
            decode: vec![Decode::raw(); input_dim],
            layers: Vec::new(),
        }
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    /// Current per-slot decodes: how a consumer (or an auditor reading an
    /// evaluation trace) recovers slot values after the last pushed layer.
    pub fn decodes(&self) -> &[Decode] {
        &self.decode
    }

    /// Decoded affine form (weights over stored slots, bias) of a value-space
    /// affine combination against the current decodes.
    fn lower(&self, terms: &[(usize, f64)], bias: f64) -> Result<(Vec<f64>, f64)> {
        let in_dim = self.decode.len();
        let mut w = vec![0.0; in_dim];
        let mut b = bias;
        for &(slot, coef) in terms {
            if slot >= in_dim {
                return Err(Error::IndexOutOfRange(format!(
                    "slot {slot} out of range {in_dim}"
                )));
            }
            let d = self.decode[slot];
            w[slot] += coef * d.a;
            b += coef * d.b;
        }
        Ok((w, b))
    }

    pub fn layer(&mut self, rows: Vec<Row>) -> Result<()> {
        if rows.len() != self.width {
            return Err(Error::DimensionMismatch(format!(
                "layer has {} rows, builder width is {}",
                rows.len(),
                self.width
            )));
        }
        let mut weights = Vec::with_capacity(self.width);
        let mut biases = Vec::with_capacity(self.width);
        let mut acts = Vec::with_capacity(self.width);
        let mut next_decode = Vec::with_capacity(self.width);
        for row in rows {
            match row {
                Row::Carry { terms, bias, lo } => {
                    let (mut w, b) = self.lower(&terms, bias)?;
                    let (s, t, act, dec) = self.carry.realize(lo)?;
                    for v in &mut w {
                        *v *= s;
                    }
                    weights.push(w);
                    biases.push(s * b + t);
                    acts.push(act);
                    next_decode.push(dec);
                }
                Row::Genuine {
                    terms,
                    bias,
                    act,
                    decode,
                } => {
                    let (w, b) = self.lower(&terms, bias)?;
                    weights.push(w);
                    biases.push(b);
                    acts.push(act);
                    next_decode.push(decode);
                }
            }
        }
        self.layers.push(Layer::from_rows(weights, biases, acts));
        self.decode = next_decode;
        Ok(())
    }

    /// Append an identity output layer computing the given value-space
    /// combinations, and return all layers.
    pub fn finish(mut self, outputs: Vec<(Vec<(usize, f64)>, f64)>) -> Result<Vec<Layer>> {
        let mut weights = Vec::with_capacity(outputs.len());
        let mut biases = Vec::with_capacity(outputs.len());
        let mut acts = Vec::with_capacity(outputs.len());
        for (terms, bias) in &outputs {
            let (w, b) = self.lower(terms, *bias)?;
            weights.push(w);
            biases.push(b);
            acts.push(ActivationSpec::identity());
        }
        self.layers.push(Layer::from_rows(weights, biases, acts));
        Ok(self.layers)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }
}
