//! Reconnection pass: rewrite a wide branch-trunk operator net into a
//! register-compute network of width m+n+5 whose hidden layers run the
//! branches one after another. All m sensor values and the n evaluation
//! coordinates ride along as pass-through registers; five compute slots per
//! layer evaluate one branch's inner neurons, close the branch sum, multiply
//! it with the trunk value, and fold the product into an output augmenter.

use crate::activation::{ActivationKind, ActivationSpec};
use crate::builder::{CarryKind, Decode, Row, SlotBuilder};
use crate::error::{Error, Result};
use crate::narrow::{operator_eval_points, ErrorBudget};
use crate::net::{Layer, Network, RegisterLayout};
use crate::par;
use crate::wide::ChenChenOperatorNet;
use serde::{Deserialize, Serialize};

/// What one hidden layer of the reconnected net is doing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerRole {
    /// Inner branch neuron `index` of `section` (0-based).
    Inner { section: usize, index: usize },
    /// Trunk evaluation + branch-sum close of `section`.
    BranchClose { section: usize },
    /// Multiplication step `step` (0-based within the block) of `section`.
    Mult { section: usize, step: usize },
}

/// Value-space read-out of one hidden layer's audit-relevant slots: applying
/// `value = a * stored + b` to the traced activations recovers the carried
/// quantity (registers, the running branch adder, the output augmenter).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerProbes {
    pub registers: Vec<Decode>,
    pub adder: Decode,
    pub augmenter: Decode,
}

/// Layout bookkeeping of the sectioned schedule: N sections of uniform
/// length M + L + 1 where L is the multiplication block depth.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScheduleInfo {
    pub sections: usize,
    pub section_length: usize,
    pub l_mult: usize,
    pub roles: Vec<LayerRole>,
    /// One probe set per hidden layer, aligned with `roles`.
    pub probes: Vec<LayerProbes>,
}

impl ScheduleInfo {
    /// Hidden-layer index where section k starts.
    pub fn section_start(&self, k: usize) -> usize {
        k * self.section_length
    }

    pub fn validate(&self) -> Result<()> {
        if self.roles.len() != self.sections * self.section_length {
            return Err(Error::InvalidNetwork(format!(
                "schedule covers {} layers, expected {} sections of {}",
                self.roles.len(),
                self.sections,
                self.section_length
            )));
        }
        if self.probes.len() != self.roles.len() {
            return Err(Error::InvalidNetwork(format!(
                "schedule has {} probe sets for {} layers",
                self.probes.len(),
                self.roles.len()
            )));
        }
        Ok(())
    }
}

/// Multiplication block strategy chosen for the activation.
enum MultPlan {
    /// Symmetric second difference at an anchor with curvature: each square
    /// costs two activation evaluations, the block is 3 layers deep.
    PairSquare { alpha: f64, s0: f64, d2: f64, hm: Vec<f64> },
    /// Sawtooth squaring: S exact relu teeth per square, block 2S+3 deep.
    Sawtooth { teeth: usize },
}

impl MultPlan {
    fn depth(&self) -> usize {
        match self {
            MultPlan::PairSquare { .. } => 3,
            MultPlan::Sawtooth { teeth } => 2 * teeth + 3,
        }
    }
}

/// Measured sup error of the pair-square read-out for step `hm` over
/// arguments up to `vmax`, exactly as the compiled rows will compute it.
fn pair_square_error(act: &ActivationSpec, alpha: f64, s0: f64, d2: f64, hm: f64, vmax: f64) -> f64 {
    let a = 1.0 / (hm * hm * d2);
    let grid: Vec<f64> = (0..=200)
        .map(|i| -vmax + 2.0 * vmax * i as f64 / 200.0)
        .collect();
    par::max_key(&grid, |&v| {
        let got = (act.eval(alpha + hm * v) + act.eval(alpha - hm * v) - 2.0 * s0) * a;
        (got - v * v).abs()
    })
}

fn search_pair_hm(act: &ActivationSpec, alpha: f64, s0: f64, d2: f64, vmax: f64, delta: f64) -> Result<(f64, f64)> {
    let mut best = (f64::INFINITY, 0.0);
    for i in 0..56 {
        let hm = 10.0f64.powf(-6.0 + 5.5 * i as f64 / 55.0);
        let err = pair_square_error(act, alpha, s0, d2, hm, vmax);
        if err < best.0 {
            best = (err, hm);
        }
    }
    // one product costs two squares scaled by 1/4 each
    let prod_err = best.0 / 2.0;
    if prod_err > delta {
        return Err(Error::BudgetInfeasible(format!(
            "multiplication needs {delta:.3e} per section but the pair square bottoms out at {prod_err:.3e} (operand range {vmax:.2})"
        )));
    }
    Ok((best.1, prod_err))
}

fn carry_for(sigma: &ActivationSpec) -> Result<CarryKind> {
    match sigma.kind {
        ActivationKind::Relu => Ok(CarryKind::ReluShift),
        ActivationKind::Softplus => Ok(CarryKind::SoftplusShift),
        ActivationKind::Sigmoid | ActivationKind::ShiftedTanh | ActivationKind::Exponential => {
            let candidates = [0.0, 1.0, -1.0, 0.5, -0.5, 2.0, -2.0];
            let alpha = candidates
                .iter()
                .copied()
                .max_by(|a, b| sigma.d1(*a).abs().total_cmp(&sigma.d1(*b).abs()))
                .unwrap();
            Ok(CarryKind::Anchored { act: sigma.clone(), alpha, h: 1.5e-8 })
        }
        _ => Err(Error::InvalidActivation(
            "reconnection needs relu or a smooth activation".into(),
        )),
    }
}

/// Instrumented value ranges of the wide net on sampled inputs.
struct Ranges {
    /// Per-input lower bound (registers).
    reg_lo: Vec<f64>,
    /// Per-section bound on |r| + |q| (multiplication operands).
    vmax: Vec<f64>,
    /// Lower bound for the running branch sum.
    adder_lo: f64,
    /// Lower bound for the output augmenter.
    aug_lo: f64,
}

fn instrument(wide: &ChenChenOperatorNet, points: &[Vec<f64>]) -> Ranges {
    let m = wide.sensor_count();
    let n_sec = wide.branches;
    let mut reg_lo = vec![f64::INFINITY; m + wide.y_dim()];
    let mut rmax = vec![0.0f64; n_sec];
    let mut qmax = vec![0.0f64; n_sec];
    let mut adder = 0.0f64;
    for p in points {
        for (j, &v) in p.iter().enumerate() {
            reg_lo[j] = reg_lo[j].min(v);
        }
        let (u, y) = p.split_at(m);
        for k in 0..n_sec {
            rmax[k] = rmax[k].max(wide.trunk(k, y).abs());
            // partial branch sums, matching the running accumulator
            let mut acc = 0.0;
            for i in 0..wide.inner {
                let z: f64 = wide.theta[k][i]
                    + wide.xi[k][i].iter().zip(u).map(|(a, b)| a * b).sum::<f64>();
                acc += wide.c[k][i] * wide.sigma.eval(z);
                qmax[k] = qmax[k].max(acc.abs());
            }
        }
    }
    let vmax: Vec<f64> = (0..n_sec)
        .map(|k| 1.25 * (rmax[k] + qmax[k]) + 1.0)
        .collect();
    for k in 0..n_sec {
        adder = adder.max(qmax[k]);
    }
    let aug: f64 = (0..n_sec).map(|k| rmax[k] * qmax[k] * 1.25 + 1.0).sum();
    Ranges {
        reg_lo: reg_lo.iter().map(|v| v.min(0.0) - 1.0).collect(),
        vmax,
        adder_lo: -adder - 1.0,
        aug_lo: -aug - 1.0,
    }
}

/// Reconnect a wide branch-trunk net into an (m+n, 5) register-compute net
/// of width exactly m+n+5, with an eps/5 allocation per stage.
pub fn reconnect_operator_net(
    wide: &ChenChenOperatorNet,
    sigma: &ActivationSpec,
    eps: f64,
) -> Result<(Network, ScheduleInfo, ErrorBudget)> {
    wide.validate()?;
    if !(eps > 0.0) {
        return Err(Error::Domain(format!("tolerance {eps} must be positive")));
    }
    if sigma.kind != wide.sigma.kind {
        return Err(Error::Domain(
            "reconnection reuses the wide net's neurons: activations must match".into(),
        ));
    }
    if wide.achieved_error > eps / 5.0 {
        return Err(Error::BudgetInfeasible(format!(
            "wide net reports error {:.3e}, above the eps/5 = {:.3e} allocation",
            wide.achieved_error,
            eps / 5.0
        )));
    }
    let m = wide.sensor_count();
    let n = wide.y_dim();
    let d = m + n;
    let n_sec = wide.branches;
    let n_inner = wide.inner;
    let carry = carry_for(sigma)?;
    let points = operator_eval_points(wide, 23, 48, 9);
    let ranges = instrument(wide, &points);
    let delta_sec = eps / 5.0 / n_sec as f64;

    // choose the multiplication block
    let mut mult_achieved = 0.0f64;
    let plan = match sigma.kind {
        ActivationKind::Relu => {
            let vworst = ranges.vmax.iter().cloned().fold(1.0, f64::max);
            // truncated sawtooth square remainder: V^2 4^{-S} / 3 per square
            let need = (2.0 * vworst * vworst / (3.0 * delta_sec)).max(1.0);
            let teeth = (need.log2() / 2.0).ceil().max(1.0) as usize;
            if teeth > 26 {
                return Err(Error::BudgetInfeasible(format!(
                    "multiplication needs {delta_sec:.3e} per section; 26 sawtooth teeth reach only {:.3e}",
                    2.0 * vworst * vworst / 3.0 * 4.0f64.powi(-26)
                )));
            }
            for &v in &ranges.vmax {
                mult_achieved += 2.0 * v * v / 3.0 * 4.0f64.powi(-(teeth as i32));
            }
            MultPlan::Sawtooth { teeth }
        }
        _ => {
            let candidates = [0.0, 1.0, -1.0, 0.5, -0.5, 2.0, -2.0];
            let alpha = candidates
                .iter()
                .copied()
                .max_by(|a, b| sigma.d2(*a).abs().total_cmp(&sigma.d2(*b).abs()))
                .unwrap();
            let d2 = sigma.d2(alpha);
            if d2.abs() < 1e-9 {
                return Err(Error::AnchorCondition(
                    "activation has no anchor with curvature for multiplication".into(),
                ));
            }
            let s0 = sigma.eval(alpha);
            let mut hms = Vec::with_capacity(n_sec);
            for &v in &ranges.vmax {
                let (hm, err) = search_pair_hm(sigma, alpha, s0, d2, v, delta_sec)?;
                hms.push(hm);
                mult_achieved += err;
            }
            MultPlan::PairSquare { alpha, s0, d2, hm: hms }
        }
    };
    let l_mult = plan.depth();

    let mut bld = SlotBuilder::new(d, d + 5, carry.clone());
    let mut roles = Vec::new();
    let mut probes: Vec<LayerProbes> = Vec::new();
    // slot indices
    let aug = d;
    let a1 = d + 1;
    let a2 = d + 2;
    let b1 = d + 3;
    let b2 = d + 4;
    let snap = |b: &SlotBuilder| LayerProbes {
        registers: b.decodes()[..d].to_vec(),
        adder: b.decodes()[a2],
        augmenter: b.decodes()[aug],
    };
    let reg_rows = |bldr: &SlotBuilder, first: bool| -> Vec<Row> {
        let _ = bldr;
        (0..d)
            .map(|j| {
                if first {
                    Row::Carry { terms: vec![(j, 1.0)], bias: 0.0, lo: ranges.reg_lo[j] }
                } else {
                    Row::carry1(j, ranges.reg_lo[j])
                }
            })
            .collect()
    };

    for k in 0..n_sec {
        let first_section = k == 0;
        // inner branch neurons
        for i in 0..n_inner {
            let mut rows = reg_rows(&bld, first_section && i == 0);
            rows.push(if first_section && i == 0 {
                Row::idle()
            } else {
                Row::carry1(aug, ranges.aug_lo)
            });
            let mut terms: Vec<(usize, f64)> =
                wide.xi[k][i].iter().enumerate().map(|(j, &w)| (j, w)).collect();
            terms.retain(|&(_, w)| w != 0.0);
            rows.push(Row::Genuine {
                terms,
                bias: wide.theta[k][i],
                act: sigma.clone(),
                decode: Decode::raw(),
            });
            rows.push(if i == 0 {
                Row::idle()
            } else {
                Row::Carry {
                    terms: vec![(a2, 1.0), (a1, wide.c[k][i - 1])],
                    bias: 0.0,
                    lo: ranges.adder_lo,
                }
            });
            rows.push(Row::idle());
            rows.push(Row::idle());
            bld.layer(rows)?;
            roles.push(LayerRole::Inner { section: k, index: i });
            probes.push(snap(&bld));
        }
        // trunk + branch close
        {
            let mut rows = reg_rows(&bld, false);
            rows.push(Row::carry1(aug, ranges.aug_lo));
            let mut terms: Vec<(usize, f64)> = wide.omega[k]
                .iter()
                .enumerate()
                .map(|(j, &w)| (m + j, w))
                .collect();
            terms.retain(|&(_, w)| w != 0.0);
            rows.push(Row::Genuine {
                terms,
                bias: wide.zeta[k],
                act: sigma.clone(),
                decode: Decode::raw(),
            });
            rows.push(Row::Carry {
                terms: vec![(a2, 1.0), (a1, wide.c[k][n_inner - 1])],
                bias: 0.0,
                lo: ranges.adder_lo,
            });
            rows.push(Row::idle());
            rows.push(Row::idle());
            bld.layer(rows)?;
            roles.push(LayerRole::BranchClose { section: k });
            probes.push(snap(&bld));
        }
        // multiplication block: fold r * q into the augmenter
        match &plan {
            MultPlan::PairSquare { alpha, s0, d2, hm } => {
                let hm = hm[k];
                let a_dec = 1.0 / (hm * hm * d2);
                let full = Decode { a: a_dec, b: -2.0 * s0 * a_dec };
                let half = Decode { a: a_dec, b: 0.0 };
                let v = ranges.vmax[k];
                // step 0: squares of (r + q); keep d = r - q in a1
                let mut rows = reg_rows(&bld, false);
                rows.push(Row::carry1(aug, ranges.aug_lo));
                rows.push(Row::Carry {
                    terms: vec![(a1, 1.0), (a2, -1.0)],
                    bias: 0.0,
                    lo: -v - 1.0,
                });
                rows.push(Row::idle());
                rows.push(Row::Genuine {
                    terms: vec![(a1, hm), (a2, hm)],
                    bias: *alpha,
                    act: sigma.clone(),
                    decode: full,
                });
                rows.push(Row::Genuine {
                    terms: vec![(a1, -hm), (a2, -hm)],
                    bias: *alpha,
                    act: sigma.clone(),
                    decode: half,
                });
                bld.layer(rows)?;
                roles.push(LayerRole::Mult { section: k, step: 0 });
                probes.push(snap(&bld));
                // step 1: carry (r+q)^2 in b1, squares of d into b2 and a1
                let mut rows = reg_rows(&bld, false);
                rows.push(Row::carry1(aug, ranges.aug_lo));
                rows.push(Row::Genuine {
                    terms: vec![(a1, -hm)],
                    bias: *alpha,
                    act: sigma.clone(),
                    decode: half,
                });
                rows.push(Row::idle());
                rows.push(Row::Carry {
                    terms: vec![(b1, 1.0), (b2, 1.0)],
                    bias: 0.0,
                    lo: -1.0,
                });
                rows.push(Row::Genuine {
                    terms: vec![(a1, hm)],
                    bias: *alpha,
                    act: sigma.clone(),
                    decode: full,
                });
                bld.layer(rows)?;
                roles.push(LayerRole::Mult { section: k, step: 1 });
                probes.push(snap(&bld));
                // step 2: augmenter += ((r+q)^2 - (r-q)^2) / 4
                let mut rows = reg_rows(&bld, false);
                rows.push(Row::Carry {
                    terms: vec![(aug, 1.0), (b1, 0.25), (b2, -0.25), (a1, -0.25)],
                    bias: 0.0,
                    lo: ranges.aug_lo,
                });
                rows.push(Row::idle());
                rows.push(Row::idle());
                rows.push(Row::idle());
                rows.push(Row::idle());
                bld.layer(rows)?;
                roles.push(LayerRole::Mult { section: k, step: 2 });
                probes.push(snap(&bld));
            }
            MultPlan::Sawtooth { teeth } => {
                let s_count = *teeth;
                let v = ranges.vmax[k];
                let relu = ActivationSpec::relu();
                let mut step = 0usize;
                // two phases: x1 from r+q, then x2 from r-q; the linear parts
                // of the two scaled squares cancel, leaving only teeth sums
                for (phase, sign, orient) in [(0, 1.0f64, -1.0f64), (1, -1.0, 1.0)] {
                    // setup: x = (r ± q)/(2V) + 1/2 in b2, shifted copy in b1;
                    // phase 1 also absorbs phase 0's last tooth
                    let mut rows = reg_rows(&bld, false);
                    rows.push(if phase == 0 {
                        Row::carry1(aug, ranges.aug_lo)
                    } else {
                        Row::Carry {
                            terms: vec![
                                (aug, 1.0),
                                (b2, -v * v * 4.0f64.powi(-(s_count as i32))),
                            ],
                            bias: 0.0,
                            lo: ranges.aug_lo,
                        }
                    });
                    rows.push(Row::carry1(a1, -v - 1.0));
                    rows.push(Row::carry1(a2, ranges.adder_lo));
                    rows.push(Row::Genuine {
                        terms: vec![(a1, 1.0 / (2.0 * v)), (a2, sign / (2.0 * v))],
                        bias: 0.0,
                        act: relu.clone(),
                        decode: Decode::raw(),
                    });
                    rows.push(Row::Genuine {
                        terms: vec![(a1, 1.0 / (2.0 * v)), (a2, sign / (2.0 * v))],
                        bias: 0.5,
                        act: relu.clone(),
                        decode: Decode::raw(),
                    });
                    bld.layer(rows)?;
                    roles.push(LayerRole::Mult { section: k, step });
                    probes.push(snap(&bld));
                    step += 1;
                    // teeth: t_{j+1} = 2 t_j - 4 relu(t_j - 1/2), absorbing
                    // t_j with coefficient orient * V^2 / 4^j
                    for j in 1..=s_count {
                        let mut rows = reg_rows(&bld, false);
                        let absorb = if j == 1 {
                            // nothing to absorb yet in this phase beyond what
                            // the setup layer already handled
                            Row::carry1(aug, ranges.aug_lo)
                        } else {
                            Row::Carry {
                                terms: vec![
                                    (aug, 1.0),
                                    (b2, orient * v * v * 4.0f64.powi(-(j as i32 - 1))),
                                ],
                                bias: 0.0,
                                lo: ranges.aug_lo,
                            }
                        };
                        rows.push(absorb);
                        rows.push(Row::carry1(a1, -v - 1.0));
                        rows.push(Row::carry1(a2, ranges.adder_lo));
                        rows.push(Row::Genuine {
                            terms: vec![(b2, 2.0), (b1, -4.0)],
                            bias: 0.0,
                            act: relu.clone(),
                            decode: Decode::raw(),
                        });
                        rows.push(Row::Genuine {
                            terms: vec![(b2, 2.0), (b1, -4.0)],
                            bias: -0.5,
                            act: relu.clone(),
                            decode: Decode::raw(),
                        });
                        bld.layer(rows)?;
                        roles.push(LayerRole::Mult { section: k, step });
                        probes.push(snap(&bld));
                        step += 1;
                    }
                }
                // close: absorb the final tooth of phase 1
                let mut rows = reg_rows(&bld, false);
                rows.push(Row::Carry {
                    terms: vec![(aug, 1.0), (b2, v * v * 4.0f64.powi(-(s_count as i32)))],
                    bias: 0.0,
                    lo: ranges.aug_lo,
                });
                rows.push(Row::idle());
                rows.push(Row::idle());
                rows.push(Row::idle());
                rows.push(Row::idle());
                bld.layer(rows)?;
                roles.push(LayerRole::Mult { section: k, step });
                probes.push(snap(&bld));
            }
        }
    }
    let layers = bld.finish(vec![(vec![(aug, 1.0)], 0.0)])?;
    let mut net = Network::new(d, layers);
    let hidden = net.layers.len() - 1;
    net.register_layout = Some(RegisterLayout {
        p: d,
        q: 5,
        registers: vec![(0..d).collect(); hidden],
    });
    net.validate()?;
    if net.width() != d + 5 {
        return Err(Error::InvalidNetwork(format!(
            "reconnection produced width {}, expected {}",
            net.width(),
            d + 5
        )));
    }
    let schedule = ScheduleInfo {
        sections: n_sec,
        section_length: n_inner + l_mult + 1,
        l_mult,
        roles,
        probes,
    };
    schedule.validate()?;
    if net.depth() != schedule.sections * schedule.section_length + 1 {
        return Err(Error::InvalidNetwork(format!(
            "depth {} disagrees with schedule {} x {} + 1",
            net.depth(),
            schedule.sections,
            schedule.section_length
        )));
    }

    let mut budget = ErrorBudget::new(eps);
    for key in [
        "eps1_augmenter",
        "eps2_multiplication",
        "eps3_adder",
        "eps4_register",
        "eps_fit",
    ] {
        budget.allocations.insert(key.into(), eps / 5.0);
    }
    budget.achieved.insert("eps_fit".into(), wide.achieved_error);
    budget
        .achieved
        .insert("eps2_multiplication".into(), mult_achieved);
    match &plan {
        MultPlan::PairSquare { hm, .. } => {
            for (k, &h) in hm.iter().enumerate() {
                budget.gadget_deltas.insert(format!("mult_h_section_{k}"), h);
            }
        }
        MultPlan::Sawtooth { teeth } => {
            budget
                .gadget_deltas
                .insert("mult_teeth".into(), *teeth as f64);
        }
    }
    Ok((net, schedule, budget))
}

/// Expand every computation neuron that reads more than one register into a
/// run of layers accumulating the partial sums, so each layer reads at most
/// one register. Exact: only identity-activated affine algebra is
/// rearranged.
pub fn restructure_single_read(h: &Network) -> Result<Network> {
    let layout = h
        .register_layout
        .clone()
        .ok_or_else(|| Error::InvalidNetwork("input lacks a register layout".into()))?;
    for (i, layer) in h.layers.iter().enumerate() {
        if layer
            .activations
            .iter()
            .any(|a| a.kind != ActivationKind::Identity)
        {
            return Err(Error::InvalidActivation(format!(
                "layer {i} is not identity-activated"
            )));
        }
    }
    let hidden = h.layers.len().saturating_sub(1);
    let mut new_layers: Vec<Layer> = Vec::new();
    let mut new_regs: Vec<Vec<usize>> = Vec::new();
    for (i, layer) in h.layers.iter().enumerate() {
        let regs: Vec<usize> = if i < hidden {
            layout.registers[i].clone()
        } else {
            Vec::new()
        };
        let prev_regs: Vec<usize> = if i == 0 {
            Vec::new()
        } else {
            layout.registers[i - 1].clone()
        };
        let is_reg_row = |s: usize| regs.contains(&s);
        // per compute row: register columns it reads
        let reads: Vec<Vec<usize>> = (0..layer.out_dim)
            .map(|s| {
                if i == 0 || is_reg_row(s) {
                    Vec::new()
                } else {
                    prev_regs
                        .iter()
                        .copied()
                        .filter(|&c| layer.row(s)[c] != 0.0)
                        .collect()
                }
            })
            .collect();
        let steps = reads.iter().map(|r| r.len()).max().unwrap_or(0).max(1);
        if steps == 1 {
            new_layers.push(layer.clone());
            if i < hidden {
                new_regs.push(regs);
            }
            continue;
        }
        if layer.in_dim != layer.out_dim {
            return Err(Error::InvalidNetwork(format!(
                "layer {i} reads multiple registers but is not square ({} -> {})",
                layer.in_dim, layer.out_dim
            )));
        }
        if regs != prev_regs && i < hidden {
            return Err(Error::InvalidNetwork(format!(
                "layer {i}: register slots move during a multi-read layer"
            )));
        }
        for &s in &regs {
            let row = layer.row(s);
            let pure = layer.biases[s] == 0.0
                && row[s] == 1.0
                && row.iter().enumerate().all(|(c, &w)| c == s || w == 0.0);
            if !pure {
                return Err(Error::InvalidNetwork(format!(
                    "layer {i}: register slot {s} is not an identity carry; \
                     later sub-layers would read a drifted value"
                )));
            }
        }
        for t in 0..steps {
            let mut rows = Vec::with_capacity(layer.out_dim);
            let mut biases = Vec::with_capacity(layer.out_dim);
            for s in 0..layer.out_dim {
                let mut row = vec![0.0; layer.in_dim];
                let mut bias = 0.0;
                if t == 0 {
                    // all non-register reads plus the first register term
                    row.copy_from_slice(layer.row(s));
                    bias = layer.biases[s];
                    for &c in reads[s].iter().skip(1) {
                        row[c] = 0.0;
                    }
                } else {
                    row[s] = 1.0;
                    if let Some(&c) = reads[s].get(t) {
                        row[c] = layer.row(s)[c];
                    }
                }
                rows.push(row);
                biases.push(bias);
            }
            let acts = vec![ActivationSpec::identity(); layer.out_dim];
            new_layers.push(Layer::from_rows(rows, biases, acts));
            let _ = t;
            if i < hidden || t + 1 < steps {
                new_regs.push(regs.clone());
            }
        }
    }
    let mut out = Network::new(h.input_dim, new_layers);
    out.truncation = h.truncation.clone();
    let hidden_new = out.layers.len().saturating_sub(1);
    new_regs.truncate(hidden_new);
    while new_regs.len() < hidden_new {
        new_regs.push(Vec::new());
    }
    out.register_layout = Some(RegisterLayout {
        p: layout.p,
        q: layout.q,
        registers: new_regs,
    });
    out.validate()?;
    Ok(out)
}

#[cfg(test)]
pub(crate) mod tests_support {
    use super::*;
    use crate::wide::sample_device;

    /// Small deterministic wide operator net with harmless magnitudes.
    pub(crate) fn tiny_wide_for_tests(
        sigma: ActivationSpec,
        m: usize,
        inner: usize,
        branches: usize,
    ) -> ChenChenOperatorNet {
        let sensors = sample_device(m);
        let mut c = Vec::new();
        let mut xi = Vec::new();
        let mut theta = Vec::new();
        let mut omega = Vec::new();
        let mut zeta = Vec::new();
        for k in 0..branches {
            let mut ck = Vec::new();
            let mut xk = Vec::new();
            let mut tk = Vec::new();
            for i in 0..inner {
                ck.push(0.3 * ((k + 2 * i) as f64 * 0.7).sin());
                xk.push(
                    (0..m)
                        .map(|j| 0.4 * ((i + j + k) as f64 * 1.3).cos())
                        .collect(),
                );
                tk.push(0.2 * (i as f64 - 1.0));
            }
            c.push(ck);
            xi.push(xk);
            theta.push(tk);
            omega.push(vec![1.0 + 0.5 * k as f64]);
            zeta.push(-0.3 * k as f64);
        }
        ChenChenOperatorNet {
            branches,
            inner,
            sensors,
            c,
            xi,
            theta,
            omega,
            zeta,
            sigma,
            achieved_error: 0.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::tests_support::tiny_wide_for_tests as tiny_wide;
    use super::*;
    use crate::wide::FunctionFamily;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample_inputs(wide: &ChenChenOperatorNet, count: usize, seed: u64) -> Vec<Vec<f64>> {
        let family = FunctionFamily::standard();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                let u = family.sample(&mut rng);
                let mut p = u.at_sensors(&wide.sensors);
                p.push(rng.gen::<f64>());
                p
            })
            .collect()
    }

    #[test]
    fn relu_reconnect_matches_wide_closely() {
        let wide = tiny_wide(ActivationSpec::relu(), 3, 1, 1);
        let (net, sched, budget) =
            reconnect_operator_net(&wide, &ActivationSpec::relu(), 5e-9).unwrap();
        assert_eq!(net.width(), 3 + 1 + 5);
        assert_eq!(net.depth(), sched.sections * sched.section_length + 1);
        for p in sample_inputs(&wide, 100, 3) {
            let (u, y) = p.split_at(3);
            let a = wide.eval(u, y).unwrap();
            let b = net.evaluate_scalar(&p).unwrap();
            assert!((a - b).abs() < 1e-9, "|{a} - {b}|");
        }
        assert!(budget.within(), "{budget:?}");
    }

    #[test]
    fn softplus_reconnect_matches_wide() {
        let wide = tiny_wide(ActivationSpec::softplus(), 4, 3, 2);
        let (net, sched, _) =
            reconnect_operator_net(&wide, &ActivationSpec::softplus(), 0.05).unwrap();
        assert_eq!(net.width(), 4 + 1 + 5);
        assert_eq!(sched.l_mult, 3);
        assert_eq!(sched.section_length, 3 + 3 + 1);
        for p in sample_inputs(&wide, 50, 5) {
            let (u, y) = p.split_at(4);
            let a = wide.eval(u, y).unwrap();
            let b = net.evaluate_scalar(&p).unwrap();
            assert!((a - b).abs() < 1e-4, "|{a} - {b}|");
        }
    }

    #[test]
    fn sigmoid_reconnect_works_via_anchored_carries() {
        let sigma = ActivationSpec::new(ActivationKind::Sigmoid);
        let wide = tiny_wide(sigma.clone(), 3, 2, 2);
        let (net, _, _) = reconnect_operator_net(&wide, &sigma, 0.05).unwrap();
        assert_eq!(net.width(), 3 + 1 + 5);
        for p in sample_inputs(&wide, 30, 7) {
            let (u, y) = p.split_at(3);
            let a = wide.eval(u, y).unwrap();
            let b = net.evaluate_scalar(&p).unwrap();
            assert!((a - b).abs() < 1e-3, "|{a} - {b}|");
        }
    }

    #[test]
    fn reconnect_rejects_mismatch_and_tight_budget() {
        let wide = tiny_wide(ActivationSpec::softplus(), 3, 2, 2);
        assert!(matches!(
            reconnect_operator_net(&wide, &ActivationSpec::relu(), 0.1),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            reconnect_operator_net(&wide, &ActivationSpec::softplus(), 1e-11),
            Err(Error::BudgetInfeasible(_))
        ));
        let mut unfit = wide.clone();
        unfit.achieved_error = 1.0;
        assert!(matches!(
            reconnect_operator_net(&unfit, &ActivationSpec::softplus(), 0.1),
            Err(Error::BudgetInfeasible(_))
        ));
    }

    #[test]
    fn restructure_expands_multi_register_reads() {
        // width 4: registers in slots 0..2, one compute slot reading all 3
        let id = ActivationSpec::identity;
        let l1 = Layer::from_rows(
            vec![
                vec![1.0, 0.0, 0.0],
                vec![0.0, 1.0, 0.0],
                vec![0.0, 0.0, 1.0],
                vec![0.5, 0.5, 0.5],
            ],
            vec![0.0; 4],
            vec![id(); 4],
        );
        let l2 = Layer::from_rows(
            vec![
                vec![1.0, 0.0, 0.0, 0.0],
                vec![0.0, 1.0, 0.0, 0.0],
                vec![0.0, 0.0, 1.0, 0.0],
                vec![2.0, -1.0, 3.0, 1.0],
            ],
            vec![0.0, 0.0, 0.0, 0.25],
            vec![id(); 4],
        );
        let out = Layer::from_rows(
            vec![vec![0.0, 0.0, 0.0, 1.0]],
            vec![0.0],
            vec![id()],
        );
        let mut net = Network::new(3, vec![l1, l2, out]);
        net.register_layout = Some(RegisterLayout {
            p: 3,
            q: 1,
            registers: vec![vec![0, 1, 2]; 2],
        });
        net.validate().unwrap();
        let expanded = restructure_single_read(&net).unwrap();
        // the 3-register read becomes 3 layers
        assert_eq!(expanded.depth(), net.depth() + 2);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            // dyadic inputs keep every intermediate sum exact, so the
            // reordered accumulation must agree to the last bit
            let x: Vec<f64> = (0..3)
                .map(|_| rng.gen_range(-512i32..512) as f64 / 256.0)
                .collect();
            let a = net.evaluate_scalar(&x).unwrap();
            let b = expanded.evaluate_scalar(&x).unwrap();
            assert_eq!(a, b);
        }
        // single-register reads stay untouched
        let again = restructure_single_read(&expanded).unwrap();
        assert_eq!(again.depth(), expanded.depth());
    }

    #[test]
    fn restructure_requires_layout() {
        let net = Network::identity(2);
        assert!(matches!(
            restructure_single_read(&net),
            Err(Error::InvalidNetwork(_))
        ));
    }
}
