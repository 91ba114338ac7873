//! Uniform-error and L1 verification harness plus error-budget auditing,
//! shared by all compiler passes. Reports are deterministic under fixed
//! seeds and serialize to JSON and CSV.

use crate::error::{Error, Result};
use crate::narrow::ErrorBudget;
use crate::net::Network;
use crate::par;
use crate::reconnect::{LayerRole, ScheduleInfo};
use crate::wide::{ChenChenOperatorNet, FunctionFamily, ReferenceOperator};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReportMode {
    GridSup,
    MonteCarloL1,
    OperatorSampledSup,
    BudgetAudit,
}

/// One stage of an error-budget audit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageAudit {
    pub stage: String,
    pub allocation: f64,
    pub measured: f64,
    pub within: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerificationReport {
    pub mode: ReportMode,
    pub resolution: usize,
    pub samples: usize,
    pub seed: u64,
    pub max_error: f64,
    pub argmax: Vec<f64>,
    pub mean_error: f64,
    pub stages: Vec<StageAudit>,
}

impl VerificationReport {
    pub fn all_stages_within(&self) -> bool {
        self.stages.iter().all(|s| s.within)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(Error::from)
    }

    /// Stage rows as CSV (header + one row per stage).
    pub fn stages_csv(&self) -> String {
        let mut out = String::from("stage,allocation,measured,within\n");
        for s in &self.stages {
            out.push_str(&format!(
                "{},{:e},{:e},{}\n",
                s.stage, s.allocation, s.measured, s.within
            ));
        }
        out
    }
}

/// Tensor grid over a box: `resolution` points per axis, endpoints included.
pub fn tensor_grid(domain: &[(f64, f64)], resolution: usize) -> Vec<Vec<f64>> {
    let axes: Vec<Vec<f64>> = domain
        .iter()
        .map(|&(lo, hi)| par::linspace(lo, hi, resolution))
        .collect();
    let mut points = vec![Vec::new()];
    for axis in &axes {
        let mut next = Vec::with_capacity(points.len() * axis.len());
        for p in &points {
            for &v in axis {
                let mut q = p.clone();
                q.push(v);
                next.push(q);
            }
        }
        points = next;
    }
    points
}

fn summarize(
    mode: ReportMode,
    resolution: usize,
    samples: usize,
    seed: u64,
    points: &[Vec<f64>],
    errors: &[f64],
) -> Result<VerificationReport> {
    let mut max_error = 0.0;
    let mut argmax = points.first().cloned().unwrap_or_default();
    let mut total = 0.0;
    for (p, &e) in points.iter().zip(errors) {
        if !e.is_finite() {
            return Err(Error::NonFinite {
                layer: 0,
                detail: format!("nonfinite discrepancy at {p:?}"),
            });
        }
        if e > max_error {
            max_error = e;
            argmax = p.clone();
        }
        total += e;
    }
    Ok(VerificationReport {
        mode,
        resolution,
        samples,
        seed,
        max_error,
        argmax,
        mean_error: if errors.is_empty() { 0.0 } else { total / errors.len() as f64 },
        stages: Vec::new(),
    })
}

/// Max |a - b| over a tensor grid on the box.
pub fn sup_error_grid<A, B>(
    a: A,
    b: B,
    domain: &[(f64, f64)],
    resolution: usize,
) -> Result<VerificationReport>
where
    A: Fn(&[f64]) -> Result<f64> + Sync,
    B: Fn(&[f64]) -> Result<f64> + Sync,
{
    let points = tensor_grid(domain, resolution);
    let errors: Vec<Result<f64>> =
        par::map(&points, |p| Ok((a(p)? - b(p)?).abs()));
    let errors: Vec<f64> = errors.into_iter().collect::<Result<_>>()?;
    summarize(ReportMode::GridSup, resolution, 0, 0, &points, &errors)
}

/// Convenience adapter: a network as a scalar callable.
pub fn net_fn(net: &Network) -> impl Fn(&[f64]) -> Result<f64> + Sync + '_ {
    move |x: &[f64]| net.evaluate_scalar(x)
}

/// Monte-Carlo L1 distance over a box under the uniform measure.
pub fn l1_error_mc<A, B>(
    a: A,
    b: B,
    domain: &[(f64, f64)],
    samples: usize,
    seed: u64,
) -> Result<VerificationReport>
where
    A: Fn(&[f64]) -> Result<f64> + Sync,
    B: Fn(&[f64]) -> Result<f64> + Sync,
{
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<Vec<f64>> = (0..samples)
        .map(|_| domain.iter().map(|&(lo, hi)| rng.gen_range(lo..hi)).collect())
        .collect();
    let errors: Vec<Result<f64>> =
        par::map(&points, |p| Ok((a(p)? - b(p)?).abs()));
    let errors: Vec<f64> = errors.into_iter().collect::<Result<_>>()?;
    summarize(ReportMode::MonteCarloL1, 0, samples, seed, &points, &errors)
}

/// Max over sampled device functions (family corners plus seeded interior
/// draws) and an equispaced y-grid of |G(u)(y) - F(u(x_1..x_m), y)|.
pub fn operator_sup_error(
    deep: &Network,
    reference: &ReferenceOperator,
    family: &FunctionFamily,
    sensors: &[f64],
    y_resolution: usize,
    samples: usize,
    seed: u64,
) -> Result<VerificationReport> {
    let m = sensors.len();
    if deep.effective_input_dim() != m + 1 {
        return Err(Error::DimensionMismatch(format!(
            "operator net consumes {} inputs, sensors give {}",
            deep.effective_input_dim(),
            m + 1
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut devices = Vec::with_capacity(samples + family.corner_count());
    for _ in 0..samples {
        devices.push(family.sample(&mut rng));
    }
    for c in 0..family.corner_count() {
        devices.push(family.corner(c));
    }
    let ys = par::linspace(0.0, 1.0, y_resolution);
    let mut points = Vec::with_capacity(devices.len() * ys.len());
    for u in &devices {
        let sensed = u.at_sensors(sensors);
        for &y in &ys {
            let mut p = sensed.clone();
            p.push(y);
            points.push((u.clone(), p, y));
        }
    }
    let errors: Vec<Result<f64>> = par::map(&points, |(u, p, y)| {
        Ok((reference.apply(u, *y) - deep.evaluate_scalar(p)?).abs())
    });
    let errors: Vec<f64> = errors.into_iter().collect::<Result<_>>()?;
    let locs: Vec<Vec<f64>> = points.iter().map(|(_, p, _)| p.clone()).collect();
    summarize(
        ReportMode::OperatorSampledSup,
        y_resolution,
        samples,
        seed,
        &locs,
        &errors,
    )
}

/// Restate a compiled pass's recorded per-stage errors against its
/// allocations (the pass measured them on its own evaluation points).
pub fn audit_budget(budget: &ErrorBudget) -> VerificationReport {
    let mut stages = Vec::new();
    let mut max_error = 0.0f64;
    for (stage, &alloc) in &budget.allocations {
        let measured = budget.achieved.get(stage).copied().unwrap_or(0.0);
        max_error = max_error.max(measured);
        stages.push(StageAudit {
            stage: stage.clone(),
            allocation: alloc,
            measured,
            within: measured <= alloc,
        });
    }
    VerificationReport {
        mode: ReportMode::BudgetAudit,
        resolution: 0,
        samples: 0,
        seed: 0,
        max_error,
        argmax: Vec::new(),
        mean_error: 0.0,
        stages,
    }
}

/// Instrumented audit of a reconnected operator net: evaluate the deep net
/// with a trace on each sample, decode the probed slots, and measure the
/// four stage discrepancies against the wide net's exact intermediate
/// quantities: register drift, branch-adder error at each close, cumulative
/// multiplication error in the augmenter at section ends, and the final
/// augmenter-to-output hop. The wide net's own fit error is restated from
/// the budget.
pub fn audit_reconnect(
    wide: &ChenChenOperatorNet,
    deep: &Network,
    schedule: &ScheduleInfo,
    budget: &ErrorBudget,
    inputs: &[Vec<f64>],
) -> Result<VerificationReport> {
    schedule.validate()?;
    if deep.depth() != schedule.roles.len() + 1 {
        return Err(Error::InvalidNetwork(
            "schedule does not match the network's layer count".into(),
        ));
    }
    let m = wide.sensor_count();
    let per_sample: Vec<Result<[f64; 4]>> = par::map(inputs, |x| {
        let (u, y) = x.split_at(m);
        let trace = deep.trace(x)?;
        let mut reg_err = 0.0f64;
        let mut adder_err = 0.0f64;
        let mut mult_err = 0.0f64;
        let mut running = 0.0f64; // exact sum of branch * trunk so far
        for (l, role) in schedule.roles.iter().enumerate() {
            let probes = &schedule.probes[l];
            let stored = &trace.layers[l];
            for (j, dec) in probes.registers.iter().enumerate() {
                let v = dec.a * stored[j] + dec.b;
                reg_err = reg_err.max((v - x[j]).abs());
            }
            match role {
                LayerRole::BranchClose { section } => {
                    let dec = &probes.adder;
                    let v = dec.a * stored[probes.registers.len() + 2] + dec.b;
                    adder_err = adder_err.max((v - wide.branch(*section, u)).abs());
                }
                LayerRole::Mult { section, step } => {
                    if *step == schedule.l_mult - 1 {
                        running += wide.branch(*section, u) * wide.trunk(*section, &y[0..1]);
                        let dec = &probes.augmenter;
                        let v = dec.a * stored[probes.registers.len()] + dec.b;
                        mult_err = mult_err.max((v - running).abs());
                    }
                }
                LayerRole::Inner { .. } => {}
            }
        }
        let out = deep.evaluate_scalar(x)?;
        let last = schedule.roles.len() - 1;
        let dec = &schedule.probes[last].augmenter;
        let final_aug = dec.a * trace.layers[last][schedule.probes[last].registers.len()] + dec.b;
        let out_err = (out - final_aug).abs();
        Ok([reg_err, adder_err, mult_err, out_err])
    });
    let mut maxes = [0.0f64; 4];
    for r in per_sample {
        let r = r?;
        for (m, v) in maxes.iter_mut().zip(r) {
            *m = (*m).max(v);
        }
    }
    let eps5 = budget.eps_total / 5.0;
    let fit = budget
        .achieved
        .get("eps_fit")
        .copied()
        .unwrap_or(wide.achieved_error);
    let rows = [
        ("eps1_augmenter", maxes[3]),
        ("eps2_multiplication", maxes[2]),
        ("eps3_adder", maxes[1]),
        ("eps4_register", maxes[0]),
        ("eps_fit", fit),
    ];
    let stages: Vec<StageAudit> = rows
        .iter()
        .map(|&(stage, measured)| StageAudit {
            stage: stage.to_string(),
            allocation: budget.allocations.get(stage).copied().unwrap_or(eps5),
            measured,
            within: measured
                <= budget.allocations.get(stage).copied().unwrap_or(eps5),
        })
        .collect();
    let max_error = stages.iter().map(|s| s.measured).fold(0.0, f64::max);
    Ok(VerificationReport {
        mode: ReportMode::BudgetAudit,
        resolution: 0,
        samples: inputs.len(),
        seed: 0,
        max_error,
        argmax: Vec::new(),
        mean_error: 0.0,
        stages,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::ActivationSpec;
    use crate::narrow::operator_eval_points;
    use crate::reconnect::reconnect_operator_net;
    use crate::wide::{fit_shallow, sample_device};

    #[test]
    fn sup_error_of_function_with_itself_is_zero() {
        let f = |x: &[f64]| Ok(x[0].sin() + x[1]);
        let rep = sup_error_grid(f, f, &[(0.0, 1.0), (0.0, 1.0)], 21).unwrap();
        assert_eq!(rep.max_error, 0.0);
        assert_eq!(rep.mean_error, 0.0);
    }

    #[test]
    fn sup_error_matches_fitter_report() {
        let f = |x: &[f64]| (2.0 * x[0]).sin();
        let domain = vec![(0.0, 1.0)];
        let wide = fit_shallow(
            |x: &[f64]| f(x),
            &domain,
            40,
            101,
            &ActivationSpec::softplus(),
            7,
        )
        .unwrap();
        let rep = sup_error_grid(
            |x: &[f64]| Ok(f(x)),
            |x: &[f64]| wide.to_network().evaluate_scalar(x),
            &domain,
            101,
        )
        .unwrap();
        assert!((rep.max_error - wide.achieved_error).abs() < 1e-10);
    }

    #[test]
    fn grid_refinement_is_monotone_on_nested_grids() {
        let f = |x: &[f64]| Ok((7.3 * x[0]).sin());
        let g = |_: &[f64]| Ok(0.0);
        let coarse = sup_error_grid(f, g, &[(0.0, 1.0)], 11).unwrap();
        let fine = sup_error_grid(f, g, &[(0.0, 1.0)], 21).unwrap();
        assert!(fine.max_error >= coarse.max_error);
    }

    #[test]
    fn nonfinite_is_reported_with_location() {
        let f = |x: &[f64]| Ok(1.0 / (x[0] - 0.5));
        let g = |_: &[f64]| Ok(0.0);
        let err = sup_error_grid(f, g, &[(0.0, 1.0)], 11);
        assert!(matches!(err, Err(Error::NonFinite { .. })));
    }

    #[test]
    fn zero_operator_against_zero_net_is_zero() {
        let sensors = sample_device(4);
        let net = {
            use crate::net::Layer;
            Network::new(
                5,
                vec![Layer::from_rows(
                    vec![vec![0.0; 5]],
                    vec![0.0],
                    vec![ActivationSpec::identity()],
                )],
            )
        };
        let rep = operator_sup_error(
            &net,
            &ReferenceOperator::Zero,
            &FunctionFamily::standard(),
            &sensors,
            11,
            10,
            42,
        )
        .unwrap();
        assert_eq!(rep.max_error, 0.0);
    }

    #[test]
    fn operator_report_is_deterministic() {
        let sensors = sample_device(3);
        let net = Network::identity(4).append_layer(crate::net::Layer::from_rows(
            vec![vec![0.25, 0.25, 0.25, 0.25]],
            vec![0.0],
            vec![ActivationSpec::identity()],
        )).unwrap();
        let a = operator_sup_error(
            &net,
            &ReferenceOperator::Antiderivative,
            &FunctionFamily::standard(),
            &sensors,
            21,
            20,
            9,
        )
        .unwrap();
        let b = operator_sup_error(
            &net,
            &ReferenceOperator::Antiderivative,
            &FunctionFamily::standard(),
            &sensors,
            21,
            20,
            9,
        )
        .unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    }

    #[test]
    fn budget_restatement_flags_overruns() {
        let mut budget = ErrorBudget::new(0.5);
        budget.allocations.insert("fit".into(), 0.1);
        budget.achieved.insert("fit".into(), 0.05);
        budget.allocations.insert("truncation".into(), 0.1);
        budget.achieved.insert("truncation".into(), 0.2);
        let rep = audit_budget(&budget);
        assert!(!rep.all_stages_within());
        let csv = rep.stages_csv();
        assert!(csv.lines().count() == 3);
        assert!(csv.contains("truncation"));
    }

    #[test]
    fn reconnect_audit_stays_within_allocations() {
        use crate::reconnect::tests_support::tiny_wide_for_tests;
        let wide = tiny_wide_for_tests(ActivationSpec::softplus(), 4, 2, 2);
        let eps = 0.05;
        let (net, sched, budget) =
            reconnect_operator_net(&wide, &ActivationSpec::softplus(), eps).unwrap();
        let points = operator_eval_points(&wide, 77, 24, 5);
        let rep = audit_reconnect(&wide, &net, &sched, &budget, &points).unwrap();
        assert!(rep.all_stages_within(), "{}", rep.stages_csv());
        assert_eq!(rep.stages.len(), 5);
    }
}
