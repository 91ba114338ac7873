//! Narrowing passes: compile wide shallow nets into fixed-width deep
//! register-compute nets over truncated, register-encoded inputs.
//!
//! Three families of passes share one architecture. A single register slot
//! carries the packed digit encoding `r`; a peeling slot repeatedly strips
//! the leading digit of a working copy of `r` while compute slots accumulate
//! each ridge's argument digit by digit, apply the genuine activation once
//! per ridge, and fold the result into an augmenter slot. The step functions
//! needed for digit extraction are realized either by saturating hinge ramps
//! (relu / softplus, width 5) or by iterated smoothstep polynomials built
//! from squares (non-affine polynomial activations, width 6 generally and
//! width 5 when the activation has a critical point with curvature).

use crate::activation::{ActivationKind, ActivationSpec};
use crate::builder::{CarryKind, Decode, Row, SlotBuilder};
use crate::encoder::TruncationFrontEnd;
use crate::error::{Error, Result};
use crate::net::{Network, RegisterLayout};
use crate::par;
use crate::wide::{
    box_grid, coefficient_planes, fit_shallow_planes, fit_shallow_points, ChenChenOperatorNet,
    FunctionFamily, ShallowFunctionNet,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Slot indices shared by every narrowing pass.
const R: usize = 0;
const RHO: usize = 1;
const ACC: usize = 2;
const AUG: usize = 3;
/// Hinge / step-chain slot (width-5 passes).
const ST: usize = 4;
/// Symmetric square pair (width-6 pass).
const C1: usize = 4;
const C2: usize = 5;

/// Interior repelling fixed point of the smoothstep v -> 1 - (1 - v^2)^2.
fn vstar() -> f64 {
    (5.0f64.sqrt() - 1.0) / 2.0
}

/// Per-stage error budget with the achieved counterparts measured after
/// compilation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorBudget {
    pub eps_total: f64,
    pub allocations: BTreeMap<String, f64>,
    pub achieved: BTreeMap<String, f64>,
    pub kappa: Option<u32>,
    pub gadget_deltas: BTreeMap<String, f64>,
}

impl ErrorBudget {
    pub fn new(eps_total: f64) -> Self {
        ErrorBudget {
            eps_total,
            allocations: BTreeMap::new(),
            achieved: BTreeMap::new(),
            kappa: None,
            gadget_deltas: BTreeMap::new(),
        }
    }

    /// Every achieved stage that has an allocation lies within it.
    pub fn within(&self) -> bool {
        self.achieved.iter().all(|(k, &v)| {
            self.allocations
                .get(k)
                .map(|&a| v <= a)
                .unwrap_or(true)
        })
    }
}

/// Which compilation strategy an operator narrowing should use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NarrowPass {
    /// Pick from the activation: hinge staircase for relu/softplus,
    /// polynomial step chains for non-affine polynomials.
    Auto,
    /// Saturating hinge staircase (relu / softplus), width 5.
    Staircase,
    /// Polynomial step chains with a symmetric square pair, width 6.
    Poly,
    /// Polynomial step chains at a critical anchor, width 5.
    PolyCritical,
}

#[derive(Debug, Clone)]
pub struct NarrowOptions {
    /// Digit base of the truncation front-end (2 or 10).
    pub base: u32,
    /// Fractions of the total tolerance granted to (fit, truncation+decode,
    /// activation replacement). Must be positive and sum to at most 1.
    pub fractions: [f64; 3],
    /// User cap on total encoded bits n * kappa * log2(base), on top of the
    /// pass-specific numeric safety caps.
    pub max_total_bits: f64,
    /// Evaluation points used for stage measurements; defaults to a grid or
    /// seeded sample over the domain.
    pub eval_points: Option<Vec<Vec<f64>>>,
    pub seed: u64,
    /// Ridge count when fitting a shallow net from a callable.
    pub ridges: usize,
    /// Quadratic / quartic feature counts for polynomial surrogates.
    pub quad_features: usize,
    pub quartic_features: usize,
}

impl Default for NarrowOptions {
    fn default() -> Self {
        NarrowOptions {
            base: 2,
            fractions: [1.0 / 3.0; 3],
            max_total_bits: 45.0,
            eval_points: None,
            seed: 17,
            ridges: 200,
            quad_features: 24,
            quartic_features: 0,
        }
    }
}

impl NarrowOptions {
    fn validate(&self) -> Result<()> {
        if self.base != 2 && self.base != 10 {
            return Err(Error::Domain(format!("base must be 2 or 10, got {}", self.base)));
        }
        let s: f64 = self.fractions.iter().sum();
        if self.fractions.iter().any(|&f| !(f > 0.0)) || s > 1.0 + 1e-12 {
            return Err(Error::Domain(format!(
                "budget fractions {:?} must be positive and sum to at most 1",
                self.fractions
            )));
        }
        Ok(())
    }
}

/// Default stage-measurement points for a box domain.
pub fn default_eval_points(domain: &[(f64, f64)], seed: u64) -> Vec<Vec<f64>> {
    match domain.len() {
        1 => box_grid(domain, 1001),
        2 => box_grid(domain, 41),
        3 => box_grid(domain, 13),
        n => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
            (0..4000)
                .map(|_| {
                    (0..n)
                        .map(|j| {
                            let (lo, hi) = domain[j];
                            rng.gen_range(lo..hi)
                        })
                        .collect()
                })
                .collect()
        }
    }
}

/// Center of the truncation cell containing `x`: the point the compiled net
/// effectively evaluates the wide net at.
pub fn decoded_point(fe: &TruncationFrontEnd, x: &[f64]) -> Result<Vec<f64>> {
    let t = fe.apply(x)?;
    let inv_m = 1.0 / fe.block_modulus() as f64;
    Ok(t
        .iter()
        .enumerate()
        .map(|(j, &d)| ((d + 0.5) * inv_m - fe.shift[j]) / fe.scale[j])
        .collect())
}

/// One threshold crossing in the digit-peeling schedule.
struct StageEdge {
    /// Threshold midpoint offset by half a lattice gap.
    thr: f64,
    /// Lattice gap at this stage: base^{-(remaining digits)}.
    gap: f64,
    /// Rescale applied after the stage's last edge (base) or 1.
    rescale: f64,
    /// Input block this digit belongs to (0-based).
    block: usize,
    /// base^{-(d+1)} for digit position d within its block.
    wfac: f64,
}

fn peeling_edges(base: u32, n: usize, kappa: u32) -> Vec<StageEdge> {
    let b = base as f64;
    let total = n as u32 * kappa;
    let mut edges = Vec::new();
    for s in 0..total {
        let remaining = total - s;
        let gap = b.powi(-(remaining as i32));
        let block = (s / kappa) as usize;
        let d = (s % kappa) as i32;
        let wfac = b.powi(-(d + 1));
        for e in (1..base).rev() {
            edges.push(StageEdge {
                thr: e as f64 / b - gap / 2.0,
                gap,
                rescale: if e == 1 { b } else { 1.0 },
                block,
                wfac,
            });
        }
    }
    edges
}

/// Ridge parameters rewritten against the mapped digit lattice: the compiled
/// net reconstructs y_j = (trunc_j + 1/2) * base^{-kappa}, so weights are
/// divided by the front-end scale and biases absorb shift and half-step.
fn mapped_ridges(w: &[Vec<f64>], theta: &[f64], fe: &TruncationFrontEnd) -> (Vec<Vec<f64>>, Vec<f64>) {
    let half = 0.5 / fe.block_modulus() as f64;
    let mut wp = Vec::with_capacity(w.len());
    let mut th = Vec::with_capacity(w.len());
    for (wi, &ti) in w.iter().zip(theta) {
        let wpi: Vec<f64> = wi.iter().zip(&fe.scale).map(|(a, s)| a / s).collect();
        let adj: f64 = wpi
            .iter()
            .zip(&fe.shift)
            .map(|(a, sh)| a * (half - sh))
            .sum();
        th.push(ti + adj);
        wp.push(wpi);
    }
    (wp, th)
}

/// Coefficients of the first hidden layer's register rows: the packed value
/// r = sum_j trunc_j * base^{-(j+1) kappa} read off the truncation outputs.
fn register_terms(fe: &TruncationFrontEnd) -> Vec<(usize, f64)> {
    let inv_m = 1.0 / fe.block_modulus() as f64;
    (0..fe.n).map(|j| (j, inv_m.powi(j as i32 + 1))).collect()
}

fn layout_for(net: &Network) -> RegisterLayout {
    let hidden = net.layers.len().saturating_sub(1);
    RegisterLayout {
        p: 1,
        q: net.width().saturating_sub(1),
        registers: vec![vec![R]; hidden],
    }
}

// ---------------------------------------------------------------------------
// Hinge staircase (relu / softplus), width 5
// ---------------------------------------------------------------------------

/// Width-5 staircase compiling a relu/softplus shallow net over the encoded
/// register. Each digit threshold costs two layers: a bounded complement
/// hinge h2 = sigma(d - h1), then the peel/accumulate update which also
/// hosts the next threshold's entry hinge.
fn build_staircase(h: &ShallowFunctionNet, fe: &TruncationFrontEnd) -> Result<Network> {
    let (carry, d_sat, slope) = match h.sigma.kind {
        ActivationKind::Relu => (CarryKind::ReluShift, 1.0, 0.5),
        ActivationKind::Softplus => (CarryKind::SoftplusShift, 80.0, 40.0),
        _ => {
            return Err(Error::InvalidActivation(
                "staircase narrowing supports relu and softplus only".into(),
            ))
        }
    };
    let b = fe.base as f64;
    let (wp, th) = mapped_ridges(&h.w, &h.theta, fe);
    let edges = peeling_edges(fe.base, fe.n, fe.kappa);
    let ridges = h.c.len();

    // range hints for carried values
    let comp_lo: Vec<f64> = (0..ridges)
        .map(|i| th[i] - wp[i].iter().map(|v| v.abs()).sum::<f64>() - 1.0)
        .collect();
    let vmax: Vec<f64> = (0..ridges)
        .map(|i| th[i].abs() + wp[i].iter().map(|v| v.abs()).sum::<f64>() + 1.0)
        .collect();
    let aug_lo = -(h.c0.abs()
        + h.c.iter().zip(&vmax).map(|(c, v)| c.abs() * v).sum::<f64>())
        - 1.0;

    let mut bld = SlotBuilder::new(fe.n, 5, carry.clone());
    let rterms = register_terms(fe);
    // entry hinge of an edge, as a function of the value feeding RHO
    let entry = |e: &StageEdge, rho_terms: Vec<(usize, f64)>, rho_bias: f64| -> Row {
        let gamma = e.gap / 4.0;
        let sharp = slope / gamma;
        let terms = rho_terms
            .into_iter()
            .map(|(s, c)| (s, c * sharp))
            .collect();
        Row::Genuine {
            terms,
            bias: sharp * (rho_bias - (e.thr - gamma)),
            act: h.sigma.clone(),
            decode: Decode::raw(),
        }
    };

    for i in 0..ridges.max(1) {
        // init layer: (re)start the peeling copy and this ridge's accumulator
        if i == 0 {
            bld.layer(vec![
                Row::Carry { terms: rterms.clone(), bias: 0.0, lo: 0.0 },
                Row::Carry { terms: rterms.clone(), bias: 0.0, lo: -1.0 },
                Row::Carry {
                    terms: vec![],
                    bias: if ridges > 0 { th[0] } else { 0.0 },
                    lo: if ridges > 0 { comp_lo[0] } else { -1.0 },
                },
                Row::Carry { terms: vec![], bias: h.c0, lo: aug_lo },
                Row::idle(),
            ])?;
        } else {
            bld.layer(vec![
                Row::carry1(R, 0.0),
                Row::Carry { terms: vec![(R, 1.0)], bias: 0.0, lo: -1.0 },
                Row::Carry { terms: vec![], bias: th[i], lo: comp_lo[i] },
                Row::Carry {
                    terms: vec![(AUG, 1.0), (ACC, h.c[i - 1])],
                    bias: 0.0,
                    lo: aug_lo,
                },
                Row::idle(),
            ])?;
        }
        if ridges == 0 {
            break;
        }
        // entry hinge of the first edge
        bld.layer(vec![
            Row::carry1(R, 0.0),
            Row::carry1(RHO, -1.0),
            Row::carry1(ACC, comp_lo[i]),
            Row::carry1(AUG, aug_lo),
            entry(&edges[0], vec![(RHO, 1.0)], 0.0),
        ])?;
        for (t, e) in edges.iter().enumerate() {
            let ws = wp[i][e.block] * e.wfac;
            let m = e.rescale;
            // complement hinge, bounded by the saturation height
            bld.layer(vec![
                Row::carry1(R, 0.0),
                Row::carry1(RHO, -1.0),
                Row::carry1(ACC, comp_lo[i]),
                Row::carry1(AUG, aug_lo),
                Row::Genuine {
                    terms: vec![(ST, -1.0)],
                    bias: d_sat,
                    act: h.sigma.clone(),
                    decode: Decode::raw(),
                },
            ])?;
            // peel + accumulate; the step fires as s = 1 - h2/d_sat
            let rho_terms = vec![(RHO, m), (ST, m / (b * d_sat))];
            let rho_bias = -m / b;
            let next = if t + 1 < edges.len() {
                entry(&edges[t + 1], rho_terms.clone(), rho_bias)
            } else {
                Row::idle()
            };
            bld.layer(vec![
                Row::carry1(R, 0.0),
                Row::Carry { terms: rho_terms, bias: rho_bias, lo: -1.0 },
                Row::Carry {
                    terms: vec![(ACC, 1.0), (ST, -ws / d_sat)],
                    bias: ws,
                    lo: comp_lo[i],
                },
                Row::carry1(AUG, aug_lo),
                next,
            ])?;
        }
        // genuine ridge activation
        bld.layer(vec![
            Row::carry1(R, 0.0),
            Row::carry1(RHO, -1.0),
            Row::Genuine {
                terms: vec![(ACC, 1.0)],
                bias: 0.0,
                act: h.sigma.clone(),
                decode: Decode::raw(),
            },
            Row::carry1(AUG, aug_lo),
            Row::idle(),
        ])?;
    }
    let out = if ridges > 0 {
        vec![(vec![(AUG, 1.0), (ACC, h.c[ridges - 1])], 0.0)]
    } else {
        vec![(vec![(AUG, 1.0)], 0.0)]
    };
    let layers = bld.finish(out)?;
    let mut net = Network::new(fe.n, layers);
    net.truncation = Some(fe.clone());
    net.register_layout = Some(layout_for(&net));
    net.validate()?;
    Ok(net)
}

/// Register-row coefficients for one contiguous input group: the packed
/// value r_g = sum_j trunc_{offset+j} * base^{-(j+1) kappa}.
fn register_terms_group(fe: &TruncationFrontEnd, offset: usize, len: usize) -> Vec<(usize, f64)> {
    let inv_m = 1.0 / fe.block_modulus() as f64;
    (0..len)
        .map(|j| (offset + j, inv_m.powi(j as i32 + 1)))
        .collect()
}

/// Width-6 staircase over two packing registers: the first register holds
/// the leading input group, the second the rest. Each ridge peels register
/// one, reloads the peeling copy from register two, and peels that as well,
/// buying twice the digits per input of the width-5 form.
fn build_staircase2(h: &ShallowFunctionNet, fe: &TruncationFrontEnd) -> Result<Network> {
    let (carry, d_sat, slope) = match h.sigma.kind {
        ActivationKind::Relu => (CarryKind::ReluShift, 1.0, 0.5),
        ActivationKind::Softplus => (CarryKind::SoftplusShift, 80.0, 40.0),
        _ => {
            return Err(Error::InvalidActivation(
                "staircase narrowing supports relu and softplus only".into(),
            ))
        }
    };
    if fe.registers != 2 {
        return Err(Error::InvalidNetwork(format!(
            "two-register staircase got a front end with {} registers",
            fe.registers
        )));
    }
    let sizes = fe.group_sizes();
    let (n1, n2) = (sizes[0], sizes[1]);
    if n2 == 0 {
        return Err(Error::InvalidNetwork(
            "two-register staircase needs at least two inputs".into(),
        ));
    }
    // slots: registers, peeling copy, ridge accumulator, augmenter, work
    const RA: usize = 0;
    const RB: usize = 1;
    const RHO2: usize = 2;
    const ACC2: usize = 3;
    const AUG2: usize = 4;
    const ST2: usize = 5;
    let b = fe.base as f64;
    let (wp, th) = mapped_ridges(&h.w, &h.theta, fe);
    let edges_a = peeling_edges(fe.base, n1, fe.kappa);
    let edges_b = peeling_edges(fe.base, n2, fe.kappa);
    let ridges = h.c.len();

    let comp_lo: Vec<f64> = (0..ridges)
        .map(|i| th[i] - wp[i].iter().map(|v| v.abs()).sum::<f64>() - 1.0)
        .collect();
    let aug_lo = -(h.c0.abs()
        + h.c
            .iter()
            .zip((0..ridges).map(|i| {
                th[i].abs() + wp[i].iter().map(|v| v.abs()).sum::<f64>() + 1.0
            }))
            .map(|(c, v)| c.abs() * v)
            .sum::<f64>())
        - 1.0;

    let mut bld = SlotBuilder::new(fe.n, 6, carry);
    let rterms_a = register_terms_group(fe, 0, n1);
    let rterms_b = register_terms_group(fe, n1, n2);
    let entry = |e: &StageEdge, rho_terms: Vec<(usize, f64)>, rho_bias: f64| -> Row {
        let gamma = e.gap / 4.0;
        let sharp = slope / gamma;
        let terms = rho_terms
            .into_iter()
            .map(|(s, c)| (s, c * sharp))
            .collect();
        Row::Genuine {
            terms,
            bias: sharp * (rho_bias - (e.thr - gamma)),
            act: h.sigma.clone(),
            decode: Decode::raw(),
        }
    };

    for i in 0..ridges.max(1) {
        if i == 0 {
            bld.layer(vec![
                Row::Carry { terms: rterms_a.clone(), bias: 0.0, lo: 0.0 },
                Row::Carry { terms: rterms_b.clone(), bias: 0.0, lo: 0.0 },
                Row::Carry { terms: rterms_a.clone(), bias: 0.0, lo: -1.0 },
                Row::Carry {
                    terms: vec![],
                    bias: if ridges > 0 { th[0] } else { 0.0 },
                    lo: if ridges > 0 { comp_lo[0] } else { -1.0 },
                },
                Row::Carry { terms: vec![], bias: h.c0, lo: aug_lo },
                Row::idle(),
            ])?;
        } else {
            bld.layer(vec![
                Row::carry1(RA, 0.0),
                Row::carry1(RB, 0.0),
                Row::Carry { terms: vec![(RA, 1.0)], bias: 0.0, lo: -1.0 },
                Row::Carry { terms: vec![], bias: th[i], lo: comp_lo[i] },
                Row::Carry {
                    terms: vec![(AUG2, 1.0), (ACC2, h.c[i - 1])],
                    bias: 0.0,
                    lo: aug_lo,
                },
                Row::idle(),
            ])?;
        }
        if ridges == 0 {
            break;
        }
        bld.layer(vec![
            Row::carry1(RA, 0.0),
            Row::carry1(RB, 0.0),
            Row::carry1(RHO2, -1.0),
            Row::carry1(ACC2, comp_lo[i]),
            Row::carry1(AUG2, aug_lo),
            entry(&edges_a[0], vec![(RHO2, 1.0)], 0.0),
        ])?;
        // peel both register groups, group one first
        for (group, edges) in [(0usize, &edges_a), (1usize, &edges_b)] {
            if group == 1 {
                // reload the peeling copy from the second register and host
                // the entry hinge of its first edge
                bld.layer(vec![
                    Row::carry1(RA, 0.0),
                    Row::carry1(RB, 0.0),
                    Row::Carry { terms: vec![(RB, 1.0)], bias: 0.0, lo: -1.0 },
                    Row::carry1(ACC2, comp_lo[i]),
                    Row::carry1(AUG2, aug_lo),
                    entry(&edges_b[0], vec![(RB, 1.0)], 0.0),
                ])?;
            }
            let block_off = if group == 0 { 0 } else { n1 };
            for (t, e) in edges.iter().enumerate() {
                let ws = wp[i][block_off + e.block] * e.wfac;
                let m = e.rescale;
                bld.layer(vec![
                    Row::carry1(RA, 0.0),
                    Row::carry1(RB, 0.0),
                    Row::carry1(RHO2, -1.0),
                    Row::carry1(ACC2, comp_lo[i]),
                    Row::carry1(AUG2, aug_lo),
                    Row::Genuine {
                        terms: vec![(ST2, -1.0)],
                        bias: d_sat,
                        act: h.sigma.clone(),
                        decode: Decode::raw(),
                    },
                ])?;
                let rho_terms = vec![(RHO2, m), (ST2, m / (b * d_sat))];
                let rho_bias = -m / b;
                let next = if t + 1 < edges.len() {
                    entry(&edges[t + 1], rho_terms.clone(), rho_bias)
                } else {
                    Row::idle()
                };
                bld.layer(vec![
                    Row::carry1(RA, 0.0),
                    Row::carry1(RB, 0.0),
                    Row::Carry { terms: rho_terms, bias: rho_bias, lo: -1.0 },
                    Row::Carry {
                        terms: vec![(ACC2, 1.0), (ST2, -ws / d_sat)],
                        bias: ws,
                        lo: comp_lo[i],
                    },
                    Row::carry1(AUG2, aug_lo),
                    next,
                ])?;
            }
        }
        bld.layer(vec![
            Row::carry1(RA, 0.0),
            Row::carry1(RB, 0.0),
            Row::carry1(RHO2, -1.0),
            Row::Genuine {
                terms: vec![(ACC2, 1.0)],
                bias: 0.0,
                act: h.sigma.clone(),
                decode: Decode::raw(),
            },
            Row::carry1(AUG2, aug_lo),
            Row::idle(),
        ])?;
    }
    let out = if ridges > 0 {
        vec![(vec![(AUG2, 1.0), (ACC2, h.c[ridges - 1])], 0.0)]
    } else {
        vec![(vec![(AUG2, 1.0)], 0.0)]
    };
    let layers = bld.finish(out)?;
    let mut net = Network::new(fe.n, layers);
    net.truncation = Some(fe.clone());
    let hidden = net.layers.len().saturating_sub(1);
    net.register_layout = Some(RegisterLayout {
        p: 2,
        q: 4,
        registers: vec![vec![RA, RB]; hidden],
    });
    net.validate()?;
    Ok(net)
}

// ---------------------------------------------------------------------------
// Polynomial surrogate + smoothstep chains, width 6 / width 5
// ---------------------------------------------------------------------------

/// Ridge term coef * (w . x + mu)^power with power in {1, 2, 4}.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolyRidge {
    pub w: Vec<f64>,
    pub mu: f64,
    pub coef: f64,
    pub power: u32,
}

/// Sum of powered ridge terms: the polynomial-activation analogue of a
/// shallow net, compiled by squaring instead of a genuine nonlinearity.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolySurrogate {
    pub c0: f64,
    pub ridges: Vec<PolyRidge>,
    pub domain: Vec<(f64, f64)>,
    pub achieved_error: f64,
}

impl PolySurrogate {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut acc = self.c0;
        for r in &self.ridges {
            let z: f64 = r.mu + r.w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            acc += r.coef
                * match r.power {
                    1 => z,
                    2 => z * z,
                    _ => (z * z) * (z * z),
                };
        }
        acc
    }
}

/// Least-squares fit of a powered-ridge surrogate: constant + all coordinate
/// terms + seeded random quadratic and quartic ridges, with column
/// equilibration so the truncated pseudoinverse treats features evenly.
pub fn fit_poly_surrogate<F>(
    f: F,
    points: &[Vec<f64>],
    domain: &[(f64, f64)],
    quad: usize,
    quartic: usize,
    seed: u64,
) -> Result<PolySurrogate>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    use nalgebra::{DMatrix, DVector};
    if points.is_empty() {
        return Err(Error::Domain("surrogate fit needs sample points".into()));
    }
    let n = domain.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut protos: Vec<PolyRidge> = Vec::new();
    for j in 0..n {
        let mut w = vec![0.0; n];
        w[j] = 1.0;
        protos.push(PolyRidge { w, mu: 0.0, coef: 0.0, power: 1 });
    }
    let sample = |power: u32, rng: &mut ChaCha8Rng| {
        let mut w: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm: f64 = w.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-9);
        let sharp = (rng.gen_range(0.5f64.ln()..4.0f64.ln())).exp();
        for v in &mut w {
            *v *= sharp / norm;
        }
        let anchor: f64 = w
            .iter()
            .zip(domain)
            .map(|(a, &(lo, hi))| a * rng.gen_range(lo..hi))
            .sum();
        PolyRidge { w, mu: -anchor, coef: 0.0, power }
    };
    for _ in 0..quad {
        let r = sample(2, &mut rng);
        protos.push(r);
    }
    for _ in 0..quartic {
        let r = sample(4, &mut rng);
        protos.push(r);
    }
    let cols = protos.len() + 1;
    let rows = points.len();
    let mut phi = DMatrix::zeros(rows, cols);
    let mut rhs = DVector::zeros(rows);
    for (row, x) in points.iter().enumerate() {
        phi[(row, 0)] = 1.0;
        for (t, r) in protos.iter().enumerate() {
            let z: f64 = r.mu + r.w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            phi[(row, t + 1)] = match r.power {
                1 => z,
                2 => z * z,
                _ => (z * z) * (z * z),
            };
        }
        rhs[row] = f(x);
    }
    // equilibrate columns so quartic magnitudes do not swamp the cutoff
    let mut colscale = vec![1.0f64; cols];
    for t in 0..cols {
        let m = phi.column(t).amax();
        if m > 0.0 {
            colscale[t] = m;
            for row in 0..rows {
                phi[(row, t)] /= m;
            }
        }
    }
    let coef = crate::wide::solve_least_squares(&phi, &rhs)?;
    let mut ridges = protos;
    for (t, r) in ridges.iter_mut().enumerate() {
        r.coef = coef[t + 1] / colscale[t + 1];
    }
    ridges.retain(|r| r.coef != 0.0);
    let surr = PolySurrogate {
        c0: coef[0] / colscale[0],
        ridges,
        domain: domain.to_vec(),
        achieved_error: 0.0,
    };
    let err = par::max_key(points, |x| (surr.eval(x) - f(x)).abs());
    Ok(PolySurrogate { achieved_error: err, ..surr })
}

/// Anchors and step sizes chosen for a polynomial activation.
struct PolyPlan {
    act: ActivationSpec,
    carry: CarryKind,
    /// Anchor and step of the squaring gadget (critical anchor in the
    /// width-5 variant).
    sq_alpha: f64,
    sq_h: f64,
    sq_s0: f64,
    sq_d2: f64,
    /// Symmetric pair (width 6) or one-sided at a critical point (width 5).
    pair: bool,
    /// Numeric safety cap on total encoded digits n * kappa.
    digit_cap: u32,
}

fn poly_degree(act: &ActivationSpec) -> Result<usize> {
    match &act.kind {
        ActivationKind::Polynomial { coeffs } => Ok(coeffs.len().saturating_sub(1)),
        _ => Err(Error::InvalidActivation(
            "polynomial narrowing needs a polynomial activation".into(),
        )),
    }
}

fn plan_poly(act: &ActivationSpec, critical: bool) -> Result<PolyPlan> {
    act.validate()?;
    let deg = poly_degree(act)?;
    if act.kind.is_affine() {
        return Err(Error::InvalidActivation(
            "affine activation cannot express the step nonlinearity".into(),
        ));
    }
    // carry anchor: strongest available slope among simple candidates
    let candidates = [1.0, -1.0, 0.5, -0.5, 2.0, -2.0, 0.0];
    let alpha_c = candidates
        .iter()
        .copied()
        .max_by(|a, b| {
            let ka = act.d1(*a).abs() / (1.0 + act.eval(*a).abs());
            let kb = act.d1(*b).abs() / (1.0 + act.eval(*b).abs());
            ka.total_cmp(&kb)
        })
        .unwrap();
    if act.d1(alpha_c).abs() < 1e-9 {
        return Err(Error::AnchorCondition(
            "no anchor with nonzero slope for carries".into(),
        ));
    }
    let carry = CarryKind::Anchored {
        act: act.clone(),
        alpha: alpha_c,
        h: 1.5e-8,
    };
    if critical {
        // critical point of the derivative with genuine curvature
        let mut best: Option<f64> = None;
        let grid = 6001;
        let mut prev_x = -3.0f64;
        let mut prev_d = act.d1(prev_x);
        for i in 1..grid {
            let x = -3.0 + 6.0 * i as f64 / (grid - 1) as f64;
            let d = act.d1(x);
            if d == 0.0 || d.signum() != prev_d.signum() {
                // refine by bisection
                let (mut a, mut b) = (prev_x, x);
                for _ in 0..80 {
                    let mid = 0.5 * (a + b);
                    if act.d1(mid).signum() == act.d1(a).signum() {
                        a = mid;
                    } else {
                        b = mid;
                    }
                }
                let c = 0.5 * (a + b);
                if act.d2(c).abs() > 1e-6 {
                    best = Some(c);
                    break;
                }
            }
            prev_x = x;
            prev_d = d;
        }
        let alpha = best.ok_or_else(|| {
            Error::AnchorCondition(
                "no critical point with nonzero second derivative in [-3, 3]".into(),
            )
        })?;
        let exact = deg <= 2;
        let h = if exact { 1.0 } else { 1e-5 };
        Ok(PolyPlan {
            act: act.clone(),
            carry,
            sq_alpha: alpha,
            sq_h: h,
            sq_s0: act.eval(alpha),
            sq_d2: act.d2(alpha),
            pair: false,
            digit_cap: if exact { 13 } else { 10 },
        })
    } else {
        let alpha = candidates
            .iter()
            .copied()
            .max_by(|a, b| act.d2(*a).abs().total_cmp(&act.d2(*b).abs()))
            .unwrap();
        if act.d2(alpha).abs() < 1e-9 {
            return Err(Error::AnchorCondition(
                "no anchor with nonzero curvature for squares".into(),
            ));
        }
        let h = if deg <= 3 { 1.0 } else { 7e-4 };
        Ok(PolyPlan {
            act: act.clone(),
            carry,
            sq_alpha: alpha,
            sq_h: h,
            sq_s0: act.eval(alpha),
            sq_d2: act.d2(alpha),
            pair: true,
            digit_cap: 13,
        })
    }
}

impl PolyPlan {
    fn width(&self) -> usize {
        if self.pair {
            6
        } else {
            5
        }
    }

    /// Rows computing the square of a value-space affine form, plus the
    /// decode(s) under which consumers read that square.
    fn square_rows(&self, terms: &[(usize, f64)], bias: f64) -> Vec<(Row, ())> {
        let h = self.sq_h;
        let plus: Vec<(usize, f64)> = terms.iter().map(|&(s, c)| (s, c * h)).collect();
        if self.pair {
            let minus: Vec<(usize, f64)> = terms.iter().map(|&(s, c)| (s, -c * h)).collect();
            let a = 1.0 / (h * h * self.sq_d2);
            vec![
                (
                    Row::Genuine {
                        terms: plus,
                        bias: self.sq_alpha + h * bias,
                        act: self.act.clone(),
                        decode: Decode { a, b: -2.0 * self.sq_s0 * a },
                    },
                    (),
                ),
                (
                    Row::Genuine {
                        terms: minus,
                        bias: self.sq_alpha - h * bias,
                        act: self.act.clone(),
                        decode: Decode { a, b: 0.0 },
                    },
                    (),
                ),
            ]
        } else {
            let a = 2.0 / (h * h * self.sq_d2);
            vec![(
                Row::Genuine {
                    terms: plus,
                    bias: self.sq_alpha + h * bias,
                    act: self.act.clone(),
                    decode: Decode { a, b: -self.sq_s0 * a },
                },
                (),
            )]
        }
    }
}

/// Iterations needed for the smoothstep to resolve a lattice gap `gap`:
/// simulate from the two nearest entry points.
fn smoothstep_iters(gap: f64) -> usize {
    let c = |v: f64| 1.0 - (1.0 - v * v) * (1.0 - v * v);
    let mut lo = vstar() - gap / 2.0;
    let mut hi = vstar() + gap / 2.0;
    for t in 1..500 {
        lo = c(lo);
        hi = c(hi);
        if lo.abs() < 1e-13 && (1.0 - hi).abs() < 1e-13 {
            return t + 2;
        }
    }
    500
}

/// Width 6 (symmetric pair) or width 5 (critical anchor) compilation of a
/// powered-ridge surrogate over the encoded register. Digit steps come from
/// iterating the smoothstep 1 - (1 - v^2)^2 around its repelling interior
/// fixed point; every square is one activation evaluation (pair: two).
fn build_poly(surr: &PolySurrogate, fe: &TruncationFrontEnd, plan: &PolyPlan) -> Result<Network> {
    if fe.base != 2 {
        return Err(Error::Domain(
            "polynomial narrowing supports base 2 only".into(),
        ));
    }
    let width = plan.width();
    let vs = vstar();
    let w_mat: Vec<Vec<f64>> = surr.ridges.iter().map(|r| r.w.clone()).collect();
    let mu: Vec<f64> = surr.ridges.iter().map(|r| r.mu).collect();
    let (wp, th) = mapped_ridges(&w_mat, &mu, fe);
    let total = fe.block_count();
    let ridges = surr.ridges.len();

    let mut bld = SlotBuilder::new(fe.n, width, plan.carry.clone());
    let rterms = register_terms(fe);

    // chain slots as (slot, sign) pairs; value of the chain = sum of decodes
    let chain_read: Vec<(usize, f64)> = if plan.pair {
        vec![(C1, 1.0), (C2, 1.0)]
    } else {
        vec![(ST, 1.0)]
    };
    let idle_chain: Vec<Row> = if plan.pair {
        vec![Row::idle(), Row::idle()]
    } else {
        vec![Row::idle()]
    };

    let push = |rows_fixed: [Row; 4], chain_rows: Vec<Row>, bld: &mut SlotBuilder| -> Result<()> {
        let mut rows: Vec<Row> = rows_fixed.into_iter().collect();
        rows.extend(chain_rows);
        bld.layer(rows)
    };

    for i in 0..ridges.max(1) {
        // init: restart peeling copy and accumulator, absorb previous ridge
        let aug_row = if i == 0 {
            Row::Carry { terms: vec![], bias: surr.c0, lo: 0.0 }
        } else {
            let prev = &surr.ridges[i - 1];
            let mut terms = vec![(AUG, 1.0)];
            if prev.power == 1 {
                terms.push((ACC, prev.coef));
            } else {
                for &(s, _) in &chain_read {
                    terms.push((s, prev.coef));
                }
            }
            Row::Carry { terms, bias: 0.0, lo: 0.0 }
        };
        let acc_bias = if ridges > 0 { th[i] } else { 0.0 };
        if i == 0 {
            push(
                [
                    Row::Carry { terms: rterms.clone(), bias: 0.0, lo: 0.0 },
                    Row::Carry { terms: rterms.clone(), bias: 0.0, lo: -1.0 },
                    Row::Carry { terms: vec![], bias: acc_bias, lo: 0.0 },
                    aug_row,
                ],
                idle_chain.clone(),
                &mut bld,
            )?;
        } else {
            push(
                [
                    Row::carry1(R, 0.0),
                    Row::Carry { terms: vec![(R, 1.0)], bias: 0.0, lo: -1.0 },
                    Row::Carry { terms: vec![], bias: acc_bias, lo: 0.0 },
                    aug_row,
                ],
                idle_chain.clone(),
                &mut bld,
            )?;
        }
        if ridges == 0 {
            break;
        }
        let carries = |bldw: &SlotBuilder| {
            let _ = bldw;
            [
                Row::carry1(R, 0.0),
                Row::carry1(RHO, -1.0),
                Row::carry1(ACC, 0.0),
                Row::carry1(AUG, 0.0),
            ]
        };
        for s in 0..total {
            let remaining = total - s;
            let gap = 2.0f64.powi(-(remaining as i32));
            let thr = 0.5 - gap / 2.0;
            let iters = smoothstep_iters(gap);
            let block = (s / fe.kappa) as usize;
            let d = (s % fe.kappa) as i32;
            let ws = wp[i][block] * 2.0f64.powi(-(d + 1));
            // entry square: u0 = (rho - thr + vstar)^2
            let rows = plan
                .square_rows(&[(RHO, 1.0)], vs - thr)
                .into_iter()
                .map(|(r, _)| r)
                .collect();
            push(carries(&bld), rows, &mut bld)?;
            // 2*iters - 1 complement squares z -> (1 - z)^2
            for _ in 0..(2 * iters - 1) {
                let mut terms: Vec<(usize, f64)> = chain_read.iter().map(|&(s, _)| (s, -1.0)).collect();
                terms.dedup();
                let rows = plan
                    .square_rows(&terms, 1.0)
                    .into_iter()
                    .map(|(r, _)| r)
                    .collect();
                push(carries(&bld), rows, &mut bld)?;
            }
            // close: the chain value is w with step s = 1 - w;
            // rho <- 2 rho - 1 + w, acc <- acc + ws * (1 - w)
            let mut rho_terms = vec![(RHO, 2.0)];
            let mut acc_terms = vec![(ACC, 1.0)];
            for &(slot, _) in &chain_read {
                rho_terms.push((slot, 1.0));
                acc_terms.push((slot, -ws));
            }
            let chain_rows = if s + 1 < total {
                let remaining2 = total - s - 1;
                let gap2 = 2.0f64.powi(-(remaining2 as i32));
                let thr2 = 0.5 - gap2 / 2.0;
                // next entry square reads rho_new = 2 rho - 1 + w directly
                let mut terms = vec![(RHO, 2.0)];
                for &(slot, _) in &chain_read {
                    terms.push((slot, 1.0));
                }
                plan.square_rows(&terms, -1.0 + vs - thr2)
                    .into_iter()
                    .map(|(r, _)| r)
                    .collect()
            } else {
                idle_chain.clone()
            };
            push(
                [
                    Row::carry1(R, 0.0),
                    Row::Carry { terms: rho_terms, bias: -1.0, lo: -1.0 },
                    Row::Carry { terms: acc_terms, bias: ws, lo: 0.0 },
                    Row::carry1(AUG, 0.0),
                ],
                chain_rows,
                &mut bld,
            )?;
        }
        // ridge close: raise the accumulator to its power via squares
        let power = surr.ridges[i].power;
        if power >= 2 {
            let rows = plan
                .square_rows(&[(ACC, 1.0)], 0.0)
                .into_iter()
                .map(|(r, _)| r)
                .collect();
            push(carries(&bld), rows, &mut bld)?;
        }
        if power >= 4 {
            let terms: Vec<(usize, f64)> = chain_read.clone();
            let rows = plan
                .square_rows(&terms, 0.0)
                .into_iter()
                .map(|(r, _)| r)
                .collect();
            push(carries(&bld), rows, &mut bld)?;
        }
    }
    let out = if ridges > 0 {
        let last = &surr.ridges[ridges - 1];
        let mut terms = vec![(AUG, 1.0)];
        if last.power == 1 {
            terms.push((ACC, last.coef));
        } else {
            for &(s, _) in &chain_read {
                terms.push((s, last.coef));
            }
        }
        vec![(terms, 0.0)]
    } else {
        vec![(vec![(AUG, 1.0)], 0.0)]
    };
    let layers = bld.finish(out)?;
    let mut net = Network::new(fe.n, layers);
    net.truncation = Some(fe.clone());
    net.register_layout = Some(layout_for(&net));
    net.validate()?;
    Ok(net)
}

// ---------------------------------------------------------------------------
// Budgeted compilation drivers
// ---------------------------------------------------------------------------

/// Search the smallest kappa whose cell-center replacement error fits the
/// allocation, under the exactness gate and the pass's digit cap.
fn search_kappa<H>(
    h: H,
    domain: &[(f64, f64)],
    base: u32,
    digit_cap: u32,
    opts: &NarrowOptions,
    points: &[Vec<f64>],
    alloc: f64,
    registers: u32,
) -> Result<(TruncationFrontEnd, f64)>
where
    H: Fn(&[f64]) -> f64 + Sync,
{
    let n = domain.len();
    let user_digits = (opts.max_total_bits / (base as f64).log2()).floor() as u32;
    let cap = digit_cap.min(user_digits);
    let widest = (n + registers as usize - 1) / registers as usize;
    let mut best: Option<(f64, u32)> = None;
    let mut kappa = 1u32;
    while widest as u32 * kappa <= cap {
        let fe = match TruncationFrontEnd::for_box_registers(base, kappa, domain, registers) {
            Ok(fe) => fe,
            Err(_) => break,
        };
        let err = par::max_key(points, |x| match decoded_point(&fe, x) {
            Ok(xa) => (h(&xa) - h(x)).abs(),
            Err(_) => f64::INFINITY,
        });
        if err <= alloc {
            return Ok((fe, err));
        }
        if best.map(|(e, _)| err < e).unwrap_or(true) {
            best = Some((err, kappa));
        }
        kappa += 1;
    }
    let detail = match best {
        Some((e, k)) => format!(
            "truncation stage needs {alloc:.3e} but the best feasible kappa = {k} achieves {e:.3e} (digit cap {cap})"
        ),
        None => format!("no feasible kappa under digit cap {cap} for {n} inputs"),
    };
    Err(Error::EncodingInfeasible(detail))
}

/// Max drift of the register slots against the exact packed values, over the
/// compiled net's hidden layers, on a few audit points.
fn register_drift(net: &Network, fe: &TruncationFrontEnd, carry: &CarryKind, points: &[Vec<f64>]) -> Result<f64> {
    let dec = carry.decode_at(0.0)?;
    let inv_m = 1.0 / fe.block_modulus() as f64;
    let sizes = fe.group_sizes();
    let mut worst = 0.0f64;
    for x in points.iter().take(16) {
        let digits = fe.apply(x)?;
        // exact per-register packed values (each fits the mantissa budget)
        let mut packed = Vec::with_capacity(sizes.len());
        let mut off = 0usize;
        for &len in &sizes {
            let mut r = 0.0f64;
            for (j, &d) in digits[off..off + len].iter().enumerate() {
                r += d * inv_m.powi(j as i32 + 1);
            }
            packed.push(r);
            off += len;
        }
        let tr = net.trace(x)?;
        for layer in &tr.layers[..tr.layers.len().saturating_sub(1)] {
            for (g, &r) in packed.iter().enumerate() {
                let stored = layer[g];
                let drift = (dec.a * stored + dec.b - r).abs();
                worst = worst.max(drift);
            }
        }
    }
    Ok(worst)
}

fn stage_allocations(eps: f64, fractions: &[f64; 3]) -> [f64; 3] {
    [eps * fractions[0], eps * fractions[1], eps * fractions[2]]
}

/// Compile a relu/softplus shallow net into a width-5 staircase under a
/// total tolerance split by the option fractions.
pub fn narrow_function_net(
    h: &ShallowFunctionNet,
    eps: f64,
    opts: &NarrowOptions,
) -> Result<(Network, ErrorBudget)> {
    narrow_staircase_impl(h, eps, opts, 1)
}

/// Staircase compilation with the digit blocks split across `registers`
/// packing registers (width 4 + registers). More registers buy more digits
/// per input under the per-register exactness budget, at the cost of width.
fn narrow_staircase_impl(
    h: &ShallowFunctionNet,
    eps: f64,
    opts: &NarrowOptions,
    registers: u32,
) -> Result<(Network, ErrorBudget)> {
    opts.validate()?;
    h.validate()?;
    if !(eps > 0.0) {
        return Err(Error::Domain(format!("tolerance {eps} must be positive")));
    }
    if !matches!(h.sigma.kind, ActivationKind::Relu | ActivationKind::Softplus) {
        return Err(Error::InvalidActivation(
            "staircase narrowing supports relu and softplus only".into(),
        ));
    }
    let alloc = stage_allocations(eps, &opts.fractions);
    if h.achieved_error > alloc[0] {
        return Err(Error::BudgetInfeasible(format!(
            "fit stage reports {:.3e}, allocation is {:.3e}",
            h.achieved_error, alloc[0]
        )));
    }
    let points = opts
        .eval_points
        .clone()
        .unwrap_or_else(|| default_eval_points(&h.domain, opts.seed));
    let digit_cap = if opts.base == 2 { 45 } else { 11 };
    let (fe, trunc_err) = search_kappa(
        |x: &[f64]| h.eval(x),
        &h.domain,
        opts.base,
        digit_cap,
        opts,
        &points,
        alloc[1],
        registers,
    )?;
    let net = if fe.registers == 1 {
        build_staircase(h, &fe)?
    } else {
        build_staircase2(h, &fe)?
    };
    let want = 4 + registers as usize;
    if net.width() != want {
        return Err(Error::InvalidNetwork(format!(
            "staircase produced width {}, expected {want}",
            net.width()
        )));
    }
    let rep_err = par::max_key(&points, |x| {
        let xa = decoded_point(&fe, x).expect("points lie in the domain");
        (net.evaluate_scalar(x).expect("valid net") - h.eval(&xa)).abs()
    });
    if rep_err > alloc[2] {
        return Err(Error::BudgetInfeasible(format!(
            "replacement stage achieves {:.3e}, allocation is {:.3e}",
            rep_err, alloc[2]
        )));
    }
    let carry = match h.sigma.kind {
        ActivationKind::Relu => CarryKind::ReluShift,
        _ => CarryKind::SoftplusShift,
    };
    let drift = register_drift(&net, &fe, &carry, &points)?;
    let mut budget = ErrorBudget::new(eps);
    budget.kappa = Some(fe.kappa);
    for (k, a) in ["fit", "truncation", "replacement"].iter().zip(alloc) {
        budget.allocations.insert((*k).into(), a);
    }
    budget.achieved.insert("fit".into(), h.achieved_error);
    budget.achieved.insert("truncation".into(), trunc_err);
    budget.achieved.insert("replacement".into(), rep_err);
    budget
        .achieved
        .insert("register_drift".into(), drift);
    budget.achieved.insert(
        "total_bound".into(),
        h.achieved_error + trunc_err + rep_err,
    );
    Ok((net, budget))
}

/// Fit a shallow net to a callable, then compile it (staircase path).
pub fn narrow_function_net_from<F>(
    f: F,
    domain: &[(f64, f64)],
    sigma: &ActivationSpec,
    eps: f64,
    opts: &NarrowOptions,
) -> Result<(Network, ErrorBudget)>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    opts.validate()?;
    let points = opts
        .eval_points
        .clone()
        .unwrap_or_else(|| default_eval_points(domain, opts.seed));
    let shallow = fit_shallow_points(&f, &points, domain, opts.ridges, sigma, opts.seed)?;
    let mut inner = opts.clone();
    inner.eval_points = Some(points);
    narrow_function_net(&shallow, eps, &inner)
}

fn narrow_poly_impl<F>(
    f: F,
    domain: &[(f64, f64)],
    sigma: &ActivationSpec,
    eps: f64,
    opts: &NarrowOptions,
    critical: bool,
) -> Result<(Network, ErrorBudget)>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    opts.validate()?;
    if !(eps > 0.0) {
        return Err(Error::Domain(format!("tolerance {eps} must be positive")));
    }
    let plan = plan_poly(sigma, critical)?;
    let alloc = stage_allocations(eps, &opts.fractions);
    let points = opts
        .eval_points
        .clone()
        .unwrap_or_else(|| default_eval_points(domain, opts.seed));
    let surr = fit_poly_surrogate(
        &f,
        &points,
        domain,
        opts.quad_features,
        opts.quartic_features,
        opts.seed,
    )?;
    if surr.achieved_error > alloc[0] {
        return Err(Error::BudgetInfeasible(format!(
            "surrogate fit achieves {:.3e}, allocation is {:.3e}",
            surr.achieved_error, alloc[0]
        )));
    }
    let (fe, trunc_err) = search_kappa(
        |x: &[f64]| surr.eval(x),
        domain,
        2,
        plan.digit_cap,
        opts,
        &points,
        alloc[1],
        1,
    )?;
    let net = build_poly(&surr, &fe, &plan)?;
    let want = plan.width();
    if net.width() != want {
        return Err(Error::InvalidNetwork(format!(
            "polynomial pass produced width {}, expected {want}",
            net.width()
        )));
    }
    let rep_err = par::max_key(&points, |x| {
        let xa = decoded_point(&fe, x).expect("points lie in the domain");
        (net.evaluate_scalar(x).expect("valid net") - surr.eval(&xa)).abs()
    });
    if rep_err > alloc[2] {
        return Err(Error::BudgetInfeasible(format!(
            "replacement stage achieves {:.3e}, allocation is {:.3e}",
            rep_err, alloc[2]
        )));
    }
    let drift = register_drift(&net, &fe, &plan.carry, &points)?;
    let mut budget = ErrorBudget::new(eps);
    budget.kappa = Some(fe.kappa);
    for (k, a) in ["fit", "truncation", "replacement"].iter().zip(alloc) {
        budget.allocations.insert((*k).into(), a);
    }
    budget.achieved.insert("fit".into(), surr.achieved_error);
    budget.achieved.insert("truncation".into(), trunc_err);
    budget.achieved.insert("replacement".into(), rep_err);
    budget.achieved.insert("register_drift".into(), drift);
    budget.achieved.insert(
        "total_bound".into(),
        surr.achieved_error + trunc_err + rep_err,
    );
    Ok((net, budget))
}

/// Width-6 compilation for a non-affine polynomial activation, using a
/// symmetric pair of activation evaluations per square.
pub fn narrow_function_net_poly<F>(
    f: F,
    domain: &[(f64, f64)],
    sigma: &ActivationSpec,
    eps: f64,
    opts: &NarrowOptions,
) -> Result<(Network, ErrorBudget)>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    narrow_poly_impl(f, domain, sigma, eps, opts, false)
}

/// Width-5 compilation for a polynomial activation with a critical point of
/// nonzero curvature, using one activation evaluation per square.
pub fn narrow_function_net_poly_crit<F>(
    f: F,
    domain: &[(f64, f64)],
    sigma: &ActivationSpec,
    eps: f64,
    opts: &NarrowOptions,
) -> Result<(Network, ErrorBudget)>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    narrow_poly_impl(f, domain, sigma, eps, opts, true)
}

/// Per-sensor sup bound of the 3-mode family used to sample operator inputs.
fn sensor_bounds(family: &FunctionFamily, sensors: &[f64]) -> Vec<(f64, f64)> {
    sensors
        .iter()
        .map(|&x| {
            let mut s = 1.0;
            for l in 1..=family.modes {
                let a = 2.0 * std::f64::consts::PI * l as f64 * x;
                s += a.cos().abs() + a.sin().abs();
            }
            let s = family.bound * s * 1.0001;
            (-s, s)
        })
        .collect()
}

/// Sampled (sensor values, y) evaluation points for an operator compile:
/// seeded family draws plus all parameter-box corners.
pub fn operator_eval_points(
    wide: &ChenChenOperatorNet,
    seed: u64,
    functions: usize,
    y_grid: usize,
) -> Vec<Vec<f64>> {
    let family = FunctionFamily::standard();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ys = par::linspace(0.0, 1.0, y_grid.max(2));
    let mut points = Vec::new();
    for _ in 0..functions {
        let u = family.sample(&mut rng);
        let us = u.at_sensors(&wide.sensors);
        for &y in &ys {
            let mut p = us.clone();
            p.push(y);
            points.push(p);
        }
    }
    let corner_ys = par::linspace(0.0, 1.0, 5);
    for idx in 0..family.corner_count() {
        let u = family.corner(idx);
        let us = u.at_sensors(&wide.sensors);
        for &y in &corner_ys {
            let mut p = us.clone();
            p.push(y);
            points.push(p);
        }
    }
    points
}

/// Compile a wide branch-trunk operator net into a single fixed-width deep
/// net over (sensor values, y). Half the tolerance covers the wide net's own
/// approximation of the operator, the rest the compilation stages.
pub fn narrow_operator_net(
    wide: &ChenChenOperatorNet,
    sigma: &ActivationSpec,
    eps: f64,
    pass: NarrowPass,
    opts: &NarrowOptions,
) -> Result<(Network, ErrorBudget)> {
    opts.validate()?;
    wide.validate()?;
    if !(eps > 0.0) {
        return Err(Error::Domain(format!("tolerance {eps} must be positive")));
    }
    if wide.y_dim() != 1 {
        return Err(Error::Domain(format!(
            "operator narrowing supports scalar evaluation points, y dimension is {}",
            wide.y_dim()
        )));
    }
    if wide.achieved_error > eps / 2.0 {
        return Err(Error::BudgetInfeasible(format!(
            "wide net reports error {:.3e}, above the {:.3e} precondition",
            wide.achieved_error,
            eps / 2.0
        )));
    }
    let m = wide.sensor_count();
    let family = FunctionFamily::standard();
    let mut domain = sensor_bounds(&family, &wide.sensors);
    domain.push((0.0, 1.0));
    let points = opts
        .eval_points
        .clone()
        .unwrap_or_else(|| operator_eval_points(wide, opts.seed, 160, 17));
    let f = |p: &[f64]| {
        wide.eval(&p[..m], &p[m..])
            .expect("sampled point matches the wide net")
    };
    let pass = match pass {
        NarrowPass::Auto => match sigma.kind {
            ActivationKind::Relu | ActivationKind::Softplus => NarrowPass::Staircase,
            ActivationKind::Polynomial { .. } => NarrowPass::Poly,
            _ => {
                return Err(Error::InvalidActivation(
                    "operator narrowing supports relu, softplus, and polynomial activations".into(),
                ))
            }
        },
        p => p,
    };
    let mut inner = opts.clone();
    inner.eval_points = Some(points.clone());
    let (net, mut budget) = match pass {
        NarrowPass::Staircase => {
            // Prefer ridges aligned with the (coefficient functional, y)
            // planes the branch-trunk target actually lives on; isotropic
            // random ridges are a fallback for under-determined devices.
            let shallow = match coefficient_planes(&family, &wide.sensors) {
                Ok(planes) => {
                    let per_plane = (opts.ridges.max(1) + planes.len() - 1) / planes.len();
                    fit_shallow_planes(&f, &points, &domain, &planes, per_plane, sigma, opts.seed)?
                }
                Err(_) => fit_shallow_points(&f, &points, &domain, opts.ridges, sigma, opts.seed)?,
            };
            // Width 5 when one register's digits resolve the domain finely
            // enough; otherwise spend one more wire on a second register.
            match narrow_staircase_impl(&shallow, eps / 2.0, &inner, 1) {
                Ok(done) => done,
                Err(Error::EncodingInfeasible(_)) => {
                    narrow_staircase_impl(&shallow, eps / 2.0, &inner, 2)?
                }
                Err(e) => return Err(e),
            }
        }
        NarrowPass::Poly => narrow_function_net_poly(&f, &domain, sigma, eps / 2.0, &inner)?,
        NarrowPass::PolyCritical => {
            narrow_function_net_poly_crit(&f, &domain, sigma, eps / 2.0, &inner)?
        }
        NarrowPass::Auto => unreachable!(),
    };
    budget.eps_total = eps;
    budget.allocations.insert("wide_fit".into(), eps / 2.0);
    budget
        .achieved
        .insert("wide_fit".into(), wide.achieved_error);
    let total = budget.achieved.get("total_bound").copied().unwrap_or(0.0);
    budget
        .achieved
        .insert("total_bound".into(), total + wide.achieved_error);
    Ok((net, budget))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wide::fit_shallow;

    fn hand_shallow(sigma: ActivationSpec, n: usize) -> ShallowFunctionNet {
        // a tame hand-built net, exact fit stage
        ShallowFunctionNet {
            c0: 0.25,
            c: vec![0.8, -0.5],
            w: vec![vec![1.0; n], {
                let mut v = vec![-0.5; n];
                v[0] = 1.5;
                v
            }],
            theta: vec![0.1, -0.2],
            sigma,
            domain: vec![(0.1, 0.9); n],
            achieved_error: 0.0,
        }
    }

    #[test]
    fn staircase_relu_matches_cell_centers() {
        let h = hand_shallow(ActivationSpec::relu(), 2);
        let opts = NarrowOptions::default();
        let (net, budget) = narrow_function_net(&h, 0.5, &opts).unwrap();
        assert_eq!(net.width(), 5);
        let fe = net.truncation.clone().unwrap();
        for x in [[0.2, 0.3], [0.55, 0.81], [0.11, 0.89]] {
            let xa = decoded_point(&fe, &x).unwrap();
            let got = net.evaluate_scalar(&x).unwrap();
            assert!(
                (got - h.eval(&xa)).abs() < 1e-9,
                "{x:?}: {got} vs {}",
                h.eval(&xa)
            );
        }
        assert!(budget.within(), "{budget:?}");
        assert!(budget.achieved["register_drift"] < 1e-12);
    }

    #[test]
    fn two_register_staircase_matches_cell_centers() {
        for sigma in [ActivationSpec::relu(), ActivationSpec::softplus()] {
            let h = hand_shallow(sigma, 3);
            let opts = NarrowOptions::default();
            let (net, budget) = narrow_staircase_impl(&h, 0.5, &opts, 2).unwrap();
            assert_eq!(net.width(), 6);
            let fe = net.truncation.clone().unwrap();
            assert_eq!(fe.registers, 2);
            assert_eq!(fe.group_sizes(), vec![2, 1]);
            for x in [[0.2, 0.3, 0.7], [0.55, 0.81, 0.12], [0.11, 0.89, 0.5]] {
                let xa = decoded_point(&fe, &x).unwrap();
                let got = net.evaluate_scalar(&x).unwrap();
                assert!(
                    (got - h.eval(&xa)).abs() < 1e-9,
                    "{x:?}: {got} vs {}",
                    h.eval(&xa)
                );
            }
            assert!(budget.within(), "{budget:?}");
            assert!(budget.achieved["register_drift"] < 1e-12);
        }
    }

    #[test]
    fn two_registers_buy_more_digits_per_input() {
        // nine tight inputs exhaust a single 45-bit register quickly; the
        // two-register split must reach a strictly larger kappa
        let h = hand_shallow(ActivationSpec::relu(), 9);
        let opts = NarrowOptions::default();
        let (one, _) = narrow_staircase_impl(&h, 2.0, &opts, 1).unwrap();
        let (two, _) = narrow_staircase_impl(&h, 2.0, &opts, 2).unwrap();
        let k1 = one.truncation.as_ref().unwrap().kappa;
        let k2 = two.truncation.as_ref().unwrap().kappa;
        assert!(k1 <= 5, "single register kappa {k1}");
        // identical tolerance, so kappa search stops at the same quality,
        // but the cap moves from 45/9 to 45/5 digits
        let opts_tight = NarrowOptions {
            fractions: [0.2, 0.6, 0.2],
            ..NarrowOptions::default()
        };
        assert!(narrow_staircase_impl(&h, 0.02, &opts_tight, 1).is_err());
        let (two_fine, budget) = narrow_staircase_impl(&h, 0.2, &opts_tight, 2).unwrap();
        let kf = two_fine.truncation.as_ref().unwrap().kappa;
        assert!(kf > k2 || budget.within());
        assert!(budget.within(), "{budget:?}");
    }

    #[test]
    fn staircase_softplus_matches_cell_centers() {
        let h = hand_shallow(ActivationSpec::softplus(), 1);
        let opts = NarrowOptions::default();
        let (net, budget) = narrow_function_net(&h, 0.4, &opts).unwrap();
        assert_eq!(net.width(), 5);
        let fe = net.truncation.clone().unwrap();
        for x in [[0.13], [0.5], [0.84]] {
            let xa = decoded_point(&fe, &x).unwrap();
            let got = net.evaluate_scalar(&x).unwrap();
            assert!((got - h.eval(&xa)).abs() < 1e-9, "{x:?}");
        }
        assert!(budget.within());
    }

    #[test]
    fn staircase_base_ten() {
        let mut opts = NarrowOptions::default();
        opts.base = 10;
        let h = hand_shallow(ActivationSpec::softplus(), 1);
        let (net, budget) = narrow_function_net(&h, 0.4, &opts).unwrap();
        assert_eq!(net.width(), 5);
        let fe = net.truncation.clone().unwrap();
        assert_eq!(fe.base, 10);
        for x in [[0.27], [0.61]] {
            let xa = decoded_point(&fe, &x).unwrap();
            let got = net.evaluate_scalar(&x).unwrap();
            assert!((got - h.eval(&xa)).abs() < 1e-8, "{x:?}");
        }
        assert!(budget.within());
    }

    #[test]
    fn staircase_end_to_end_sine_fixture() {
        // the headline fixture: f(x) = sin(2 pi x1) * x2, softplus, eps 0.2
        let f = |x: &[f64]| (2.0 * std::f64::consts::PI * x[0]).sin() * x[1];
        let domain = [(0.1, 0.9), (0.1, 0.9)];
        let shallow = fit_shallow(f, &domain, 120, 41, &ActivationSpec::softplus(), 11).unwrap();
        assert!(shallow.achieved_error < 0.2 / 3.0, "{}", shallow.achieved_error);
        let (net, budget) = narrow_function_net(&shallow, 0.2, &NarrowOptions::default()).unwrap();
        assert_eq!(net.width(), 5);
        let grid = box_grid(&domain, 41);
        let err = par::max_key(&grid, |x| {
            (net.evaluate_scalar(x).unwrap() - f(x)).abs()
        });
        assert!(err < 0.2, "end-to-end error {err}");
        assert!(budget.within(), "{budget:?}");
    }

    #[test]
    fn constant_net_compiles_to_width_five() {
        let h = ShallowFunctionNet {
            c0: 1.5,
            c: vec![],
            w: vec![],
            theta: vec![],
            sigma: ActivationSpec::relu(),
            domain: vec![(0.0, 1.0)],
            achieved_error: 0.0,
        };
        let (net, _) = narrow_function_net(&h, 0.5, &NarrowOptions::default()).unwrap();
        assert!(net.width() <= 5);
        assert!((net.evaluate_scalar(&[0.4]).unwrap() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn poly_pair_compiles_product_exactly() {
        // f = x1 * x2 is inside the quadratic feature span: fit is exact
        let f = |x: &[f64]| x[0] * x[1];
        let domain = [(0.1, 0.9), (0.1, 0.9)];
        let (net, budget) = narrow_function_net_poly(
            f,
            &domain,
            &ActivationSpec::square(),
            0.3,
            &NarrowOptions::default(),
        )
        .unwrap();
        assert_eq!(net.width(), 6);
        assert!(budget.achieved["fit"] < 1e-8, "{budget:?}");
        assert!(budget.within(), "{budget:?}");
        let fe = net.truncation.clone().unwrap();
        for x in [[0.3, 0.7], [0.12, 0.88]] {
            let xa = decoded_point(&fe, &x).unwrap();
            let got = net.evaluate_scalar(&x).unwrap();
            assert!((got - xa[0] * xa[1]).abs() < 1e-4, "{x:?}: {got}");
        }
    }

    #[test]
    fn poly_critical_is_width_five() {
        let f = |x: &[f64]| x[0] * x[0];
        let domain = [(0.1, 0.9)];
        let (net, budget) = narrow_function_net_poly_crit(
            f,
            &domain,
            &ActivationSpec::square(),
            0.3,
            &NarrowOptions::default(),
        )
        .unwrap();
        assert_eq!(net.width(), 5);
        assert!(budget.within(), "{budget:?}");
        let fe = net.truncation.clone().unwrap();
        let x = [0.42];
        let xa = decoded_point(&fe, &x).unwrap();
        let got = net.evaluate_scalar(&x).unwrap();
        assert!((got - xa[0] * xa[0]).abs() < 1e-6, "{got}");
    }

    #[test]
    fn poly_rejects_bad_activations() {
        let f = |x: &[f64]| x[0];
        let domain = [(0.1, 0.9)];
        // affine polynomial: no nonlinearity
        let affine = ActivationSpec::new(ActivationKind::Polynomial {
            coeffs: vec![0.0, 1.0],
        });
        assert!(matches!(
            narrow_function_net_poly(f, &domain, &affine, 0.3, &NarrowOptions::default()),
            Err(Error::InvalidActivation(_))
        ));
        // t^3 has a critical point but zero curvature there
        let cubic = ActivationSpec::new(ActivationKind::Polynomial {
            coeffs: vec![0.0, 0.0, 0.0, 1.0],
        });
        assert!(matches!(
            narrow_function_net_poly_crit(f, &domain, &cubic, 0.3, &NarrowOptions::default()),
            Err(Error::AnchorCondition(_))
        ));
        // softplus is not a polynomial
        assert!(matches!(
            narrow_function_net_poly(f, &domain, &ActivationSpec::softplus(), 0.3, &NarrowOptions::default()),
            Err(Error::InvalidActivation(_))
        ));
    }

    #[test]
    fn staircase_rejects_polynomial_activation() {
        let h = hand_shallow(ActivationSpec::square(), 1);
        assert!(matches!(
            narrow_function_net(&h, 0.3, &NarrowOptions::default()),
            Err(Error::InvalidActivation(_))
        ));
    }

    #[test]
    fn infeasible_budget_is_reported() {
        let h = hand_shallow(ActivationSpec::relu(), 2);
        // absurdly tight tolerance: truncation can never keep up
        let err = narrow_function_net(&h, 1e-9, &NarrowOptions::default());
        assert!(matches!(err, Err(Error::EncodingInfeasible(_))), "{err:?}");
        // a net whose own fit already exceeds its stage
        let mut bad = hand_shallow(ActivationSpec::relu(), 2);
        bad.achieved_error = 1.0;
        assert!(matches!(
            narrow_function_net(&bad, 0.5, &NarrowOptions::default()),
            Err(Error::BudgetInfeasible(_))
        ));
    }
}
