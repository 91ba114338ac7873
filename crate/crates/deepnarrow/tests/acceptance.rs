//! Gate suite: one test per release criterion, each printing a single
//! PASS/FAIL line and enforcing its own wall-clock budget. Expensive
//! fixtures are shared through `OnceLock` so later criteria (determinism)
//! can rerun them and compare bytes without paying twice in the criterion
//! that first builds them.

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use deepnarrow::activation::ActivationSpec;
use deepnarrow::encoder::{decoder_grid_spec, encode, decode_oracle, TruncationFrontEnd};
use deepnarrow::gadgets::{identity_gadget, mult_gadget};
use deepnarrow::narrow::{
    narrow_function_net, narrow_function_net_from, narrow_function_net_poly,
    narrow_function_net_poly_crit, narrow_operator_net, ErrorBudget, NarrowOptions, NarrowPass,
};
use deepnarrow::pl::{rat, rat_int, PiecewiseLinear, Rat};
use deepnarrow::reconnect::reconnect_operator_net;
use deepnarrow::separation::{
    build_hard_net, claim2_report, count_pieces, dp_oracle_minima, lower_bound_certificate,
    relu_piece_bound, seeded_candidates, tooth_block, tooth_power_pl, Slice,
};
use deepnarrow::verify::{audit_budget, audit_reconnect, net_fn, operator_sup_error, sup_error_grid};
use deepnarrow::wide::{
    fit_chenchen, sample_device, ChenChenFitConfig, ChenChenOperatorNet, FunctionFamily,
    ReferenceOperator, ShallowFunctionNet,
};
use deepnarrow::Network;
use num_traits::{Signed, ToPrimitive};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------------------
// reporting
// ---------------------------------------------------------------------------

fn gate(idx: u32, label: &str, budget: Duration, body: impl FnOnce() -> bool) {
    let t = Instant::now();
    let ok = body();
    let elapsed = t.elapsed();
    let within = elapsed <= budget;
    println!(
        "criterion {idx:>2} ({label}): {} [{elapsed:.2?} / {budget:?}]",
        if ok && within { "PASS" } else { "FAIL" }
    );
    assert!(ok, "criterion {idx} ({label}) failed");
    assert!(
        within,
        "criterion {idx} ({label}) took {elapsed:?}, budget {budget:?}"
    );
}

// ---------------------------------------------------------------------------
// fixtures
// ---------------------------------------------------------------------------

fn sine2d(x: &[f64]) -> f64 {
    (2.0 * std::f64::consts::PI * x[0]).sin() * x[1]
}

const SINE_DOMAIN: [(f64, f64); 2] = [(0.1, 0.9), (0.1, 0.9)];

/// Small deterministic wide operator net with harmless magnitudes.
fn tiny_wide(sigma: ActivationSpec, m: usize, inner: usize, branches: usize) -> ChenChenOperatorNet {
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

fn hand_shallow(sigma: ActivationSpec, n: usize) -> ShallowFunctionNet {
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

static BIG_WIDE: OnceLock<ChenChenOperatorNet> = OnceLock::new();

fn big_wide() -> &'static ChenChenOperatorNet {
    BIG_WIDE.get_or_init(|| {
        fit_chenchen(
            ReferenceOperator::Antiderivative,
            &FunctionFamily::standard(),
            8,
            64,
            16,
            &ActivationSpec::softplus(),
            11,
            &ChenChenFitConfig::default(),
        )
        .expect("reference operator fixture fits")
    })
}

fn compile_sine() -> (Network, ErrorBudget) {
    narrow_function_net_from(
        sine2d,
        &SINE_DOMAIN,
        &ActivationSpec::softplus(),
        0.2,
        &NarrowOptions::default(),
    )
    .expect("sine fixture compiles")
}

static SINE_NARROW: OnceLock<(Network, ErrorBudget)> = OnceLock::new();

fn sine_narrow() -> &'static (Network, ErrorBudget) {
    SINE_NARROW.get_or_init(compile_sine)
}

fn compile_big_narrow() -> (Network, ErrorBudget) {
    let opts = NarrowOptions {
        ridges: 448,
        ..NarrowOptions::default()
    };
    narrow_operator_net(
        big_wide(),
        &ActivationSpec::softplus(),
        0.4,
        NarrowPass::Staircase,
        &opts,
    )
    .expect("operator fixture narrows")
}

static BIG_NARROW: OnceLock<(Network, ErrorBudget)> = OnceLock::new();

fn big_narrow() -> &'static (Network, ErrorBudget) {
    BIG_NARROW.get_or_init(compile_big_narrow)
}

fn tiny_operator_narrow(m: usize, inner: usize, branches: usize) -> (Network, ErrorBudget) {
    let wide = tiny_wide(ActivationSpec::softplus(), m, inner, branches);
    let opts = NarrowOptions {
        ridges: 21,
        ..NarrowOptions::default()
    };
    narrow_operator_net(
        &wide,
        &ActivationSpec::softplus(),
        3.0,
        NarrowPass::Staircase,
        &opts,
    )
    .expect("tiny operator fixture narrows")
}

// ---------------------------------------------------------------------------
// criteria
// ---------------------------------------------------------------------------

#[test]
fn criterion_01_structural_widths() {
    gate(1, "structural width equalities", Duration::from_secs(5), || {
        let softplus = ActivationSpec::softplus();
        let mut ok = true;

        // reconnection pass: width m + n + 5 with n = 1 evaluation coordinate
        for m in [3usize, 4, 5] {
            let wide = tiny_wide(softplus.clone(), m, 2, 2);
            let (net, _, _) = reconnect_operator_net(&wide, &softplus, 0.5).unwrap();
            ok &= net.width() == m + 1 + 5;
        }

        // function staircase: width 5
        for (n, sigma) in [
            (1usize, ActivationSpec::relu()),
            (2, ActivationSpec::softplus()),
            (3, ActivationSpec::relu()),
        ] {
            let h = hand_shallow(sigma, n);
            let (net, _) = narrow_function_net(&h, 0.5, &NarrowOptions::default()).unwrap();
            ok &= net.width() == 5;
        }

        // polynomial pair-square pass: width 6
        let square = ActivationSpec::square();
        let poly_targets: [(fn(&[f64]) -> f64, usize); 3] = [
            (|x| x[0] * x[1], 2),
            (|x| x[0] * x[0], 1),
            (|x| 0.5 * x[0] * x[1] + 0.2, 2),
        ];
        for (f, n) in poly_targets {
            let domain = vec![(0.1, 0.9); n];
            let (net, _) =
                narrow_function_net_poly(f, &domain, &square, 0.3, &NarrowOptions::default())
                    .unwrap();
            ok &= net.width() == 6;
        }

        // one-sided square pass at a critical anchor: width 5
        let crit_targets: [fn(&[f64]) -> f64; 3] = [
            |x| x[0] * x[0],
            |x| 0.7 * x[0] * x[0] + 0.1,
            |x| (0.8 * x[0] + 0.1) * (0.8 * x[0] + 0.1),
        ];
        for f in crit_targets {
            let domain = vec![(0.1, 0.9)];
            let (net, _) =
                narrow_function_net_poly_crit(f, &domain, &square, 0.3, &NarrowOptions::default())
                    .unwrap();
            ok &= net.width() == 5;
        }

        // operator staircase: width 5 with one packing register, 6 with two
        for (m, inner, branches) in [(3usize, 1usize, 1usize), (4, 2, 2), (5, 2, 1)] {
            let (net, _) = tiny_operator_narrow(m, inner, branches);
            ok &= net.width() == 5 || net.width() == 6;
        }
        ok
    });
}

#[test]
fn criterion_02_hard_net_depth() {
    gate(2, "hard net depth 2k^3 + 8", Duration::from_secs(1), || {
        let mut ok = true;
        for (k, want) in [(1u32, 10usize), (2, 24), (3, 62)] {
            let spec = build_hard_net(k, 1).unwrap();
            ok &= spec.net.depth() == want;
            ok &= spec.net.depth() == 2 * (k as usize).pow(3) + 8;
        }
        ok
    });
}

#[test]
fn criterion_03_encoder_exactness() {
    gate(3, "encoder exactness and plateaus", Duration::from_secs(5), || {
        let mut ok = true;
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for fe in [
            TruncationFrontEnd::unit(10, 3, 4),
            TruncationFrontEnd::unit(2, 11, 4),
        ] {
            let m = fe.block_modulus() as f64;
            for _ in 0..50_000 {
                let x: Vec<f64> = (0..fe.n).map(|_| rng.gen_range(1e-9..1.0 - 1e-9)).collect();
                let enc = encode(&x, &fe).unwrap();
                let digits = fe.apply(&x).unwrap();
                for j in 1..=fe.n {
                    // bit-level equality against the independent truncation
                    if decode_oracle(&enc, j).unwrap() != digits[j - 1] / m {
                        ok = false;
                    }
                }
            }
        }

        // plateau preservation: the continuous decoder is constant under
        // perturbations smaller than the plateau half-width
        // (base^{-n kappa - 1}; one extra halving in base 2, where the
        // nominal width would leave no room for a continuous ramp)
        for (fe, delta) in [
            (TruncationFrontEnd::unit(10, 2, 2), rat(9, 1_000_000)),
            (TruncationFrontEnd::unit(2, 5, 2), rat(3, 1 << 14)),
        ] {
            let total = fe.grid_size() as i64;
            let m = fe.block_modulus() as i64;
            for j in 1..=fe.n {
                let spec = decoder_grid_spec(j, &fe).unwrap();
                for _ in 0..40 {
                    let x: Vec<f64> =
                        (0..fe.n).map(|_| rng.gen_range(1e-9..1.0 - 1e-9)).collect();
                    let enc = encode(&x, &fe).unwrap();
                    let r = rat(enc.r_exact as i64, total);
                    let at = spec.eval(&r).unwrap();
                    let zero = rat(0, 1);
                    let lo = spec
                        .eval(std::cmp::max(&(r.clone() - delta.clone()), &zero))
                        .unwrap();
                    let hi = spec.eval(&(r.clone() + delta.clone())).unwrap();
                    let truth = rat(
                        ((enc.r_exact as i64) / m.pow((fe.n - j) as u32)) % m,
                        m,
                    );
                    ok &= at == truth && lo == truth && hi == truth;
                }
            }
        }
        ok
    });
}

#[test]
fn criterion_04_gadget_tolerances() {
    gate(4, "gadget tolerances", Duration::from_secs(10), || {
        let softplus = ActivationSpec::softplus();
        let ident = identity_gadget(&softplus, (-1.0, 1.0), 1e-6).unwrap();
        let mult = mult_gadget(&softplus, (-1.0, 1.0), (-1.0, 1.0), 1e-3).unwrap();
        ident.achieved_error <= 1e-6
            && ident.grid_resolution == 10_000
            && mult.achieved_error <= 1e-3
            && mult.grid_resolution == 201
    });
}

#[test]
fn criterion_05_function_end_to_end() {
    gate(5, "function compile end to end", Duration::from_secs(60), || {
        let (net, budget) = sine_narrow();
        let report = sup_error_grid(
            net_fn(net),
            |x: &[f64]| Ok(sine2d(x)),
            &SINE_DOMAIN,
            101,
        )
        .unwrap();
        net.width() == 5 && budget.within() && report.max_error < 0.2
    });
}

#[test]
fn criterion_06_operator_end_to_end() {
    gate(6, "operator compile end to end", Duration::from_secs(120), || {
        let family = FunctionFamily::standard();
        let wide = big_wide();
        let mut ok = wide.achieved_error < 0.3 / 5.0;

        // reconnection at eps = 0.3 with an eps/5 stage audit
        let sigma = ActivationSpec::softplus();
        let (rnet, sched, rbudget) = reconnect_operator_net(wide, &sigma, 0.3).unwrap();
        ok &= rnet.width() == wide.sensor_count() + 1 + 5;
        ok &= rbudget.within();
        let audit_points = deepnarrow::narrow::operator_eval_points(wide, 77, 24, 5);
        let audit = audit_reconnect(wide, &rnet, &sched, &rbudget, &audit_points).unwrap();
        ok &= audit.all_stages_within();
        let rsup = operator_sup_error(
            &rnet,
            &ReferenceOperator::Antiderivative,
            &family,
            &wide.sensors,
            5,
            20,
            5,
        )
        .unwrap();
        ok &= rsup.max_error < 0.3;

        // narrow staircase at eps = 0.4
        let (nnet, nbudget) = big_narrow();
        ok &= nnet.width() == 5 || nnet.width() == 6;
        ok &= nbudget.within();
        ok &= audit_budget(nbudget).all_stages_within();
        let nsup = operator_sup_error(
            &nnet,
            &ReferenceOperator::Antiderivative,
            &family,
            &wide.sensors,
            5,
            20,
            5,
        )
        .unwrap();
        ok &= nsup.max_error < 0.4;
        ok
    });
}

#[test]
fn criterion_07_pl_calculus() {
    gate(7, "exact piecewise-linear calculus", Duration::from_secs(5), || {
        let mut ok = true;
        let slice = Slice::axis(1, 0).unwrap();
        for c in 1..=14u32 {
            let mut layers = Vec::new();
            for _ in 0..c {
                let [a, b] = tooth_block();
                layers.push(a);
                layers.push(b);
            }
            let net = Network::new(1, layers);
            ok &= count_pieces(&net, &slice).unwrap() == 1 << c;
        }
        let t3 = tooth_power_pl(3).unwrap();
        let zero = PiecewiseLinear::constant(rat_int(0), rat_int(1), rat_int(0)).unwrap();
        ok &= t3.l1_distance(&zero).unwrap() == rat(1, 2);
        ok
    });
}

#[test]
fn criterion_08_certificate_soundness() {
    gate(8, "certificate soundness", Duration::from_secs(60), || {
        let mut ok = true;
        for t in [4usize, 8, 16] {
            let minima = dp_oracle_minima(t, 2 * t).unwrap();
            for p in 1..=2 * t {
                let cert = lower_bound_certificate(t as u64, p as u64)
                    .unwrap()
                    .to_f64()
                    .unwrap();
                ok &= cert <= minima[p - 1] + 1e-9;
            }
        }
        for k in [2u32, 3] {
            let t = 1u64 << (k * k * k + 3);
            let p = relu_piece_bound(k, 1 << k);
            let cert = lower_bound_certificate(t, p).unwrap();
            ok &= cert >= rat(1, 64);
        }
        ok
    });
}

#[test]
fn criterion_09_candidate_suite() {
    gate(9, "candidate suite at k = 2", Duration::from_secs(30), || {
        let rows = candidate_rows();
        let mut ok = !rows.is_empty();
        for row in rows {
            ok &= row.skipped.is_none();
            ok &= row.meets_threshold && row.meets_certificate;
            // l1 >= 1/64 holds in exact arithmetic, not just in floats
            let l1: Rat = row.l1_exact.parse::<Rat>().unwrap();
            ok &= l1 >= rat(1, 64) && !l1.is_negative();
        }
        ok
    });
}

fn candidate_rows() -> Vec<deepnarrow::separation::Claim2Row> {
    let candidates = seeded_candidates(10, 2, 4, 5);
    let slices = [Slice::axis(1, 0).unwrap()];
    claim2_report(2, &candidates, &[0.25, -0.5], &slices).unwrap()
}

#[test]
fn criterion_10_determinism() {
    gate(10, "determinism", Duration::from_secs(60), || {
        let mut ok = true;

        // function fixture: recompile and compare serialized bytes
        let (sine_a, sine_budget_a) = sine_narrow();
        let (sine_b, sine_budget_b) = compile_sine();
        ok &= deepnarrow::json::to_json_string(sine_a).unwrap()
            == deepnarrow::json::to_json_string(&sine_b).unwrap();
        ok &= serde_json::to_string(sine_budget_a).unwrap()
            == serde_json::to_string(&sine_budget_b).unwrap();

        // operator fixture: the full narrow pipeline is rerun from the same
        // wide net and compared structurally
        let (big_a, big_budget_a) = big_narrow();
        let (big_b, big_budget_b) = compile_big_narrow();
        ok &= *big_a == big_b;
        ok &= serde_json::to_string(big_budget_a).unwrap()
            == serde_json::to_string(&big_budget_b).unwrap();

        // reconnection
        let sigma = ActivationSpec::softplus();
        let (ra, _, rba) = reconnect_operator_net(big_wide(), &sigma, 0.3).unwrap();
        let (rb, _, rbb) = reconnect_operator_net(big_wide(), &sigma, 0.3).unwrap();
        ok &= ra == rb;
        ok &= serde_json::to_string(&rba).unwrap() == serde_json::to_string(&rbb).unwrap();

        // tiny operator fixture, gadgets, candidate suite, oracle, encoder
        let (ta, _) = tiny_operator_narrow(4, 2, 2);
        let (tb, _) = tiny_operator_narrow(4, 2, 2);
        ok &= ta == tb;
        let ga = identity_gadget(&sigma, (-1.0, 1.0), 1e-6).unwrap();
        let gb = identity_gadget(&sigma, (-1.0, 1.0), 1e-6).unwrap();
        ok &= ga.net == gb.net && ga.achieved_error == gb.achieved_error;
        ok &= format!("{:?}", candidate_rows()) == format!("{:?}", candidate_rows());
        ok &= dp_oracle_minima(8, 16).unwrap() == dp_oracle_minima(8, 16).unwrap();
        let fe = TruncationFrontEnd::unit(2, 11, 4);
        let x = [0.371, 0.512, 0.093, 0.777];
        ok &= encode(&x, &fe).unwrap() == encode(&x, &fe).unwrap();
        ok &= build_hard_net(2, 1).unwrap().net == build_hard_net(2, 1).unwrap().net;
        ok
    });
}
