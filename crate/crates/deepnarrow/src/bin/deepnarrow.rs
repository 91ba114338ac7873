//! Batch command-line front door: fitting, narrowing/reconnection passes,
//! verification, the depth-separation suite, and encoding demos, all
//! reproducible from flags and seeds alone.
//!
//! Exit codes: 0 success, 2 budget/encoding infeasibility, 1 usage or any
//! other error.

use clap::{Parser, Subcommand};
use deepnarrow::activation::{ActivationKind, ActivationSpec};
use deepnarrow::encoder::{encode, decode_oracle, TruncationFrontEnd};
use deepnarrow::error::Error;
use deepnarrow::json;
use deepnarrow::narrow::{
    narrow_function_net, narrow_function_net_poly, narrow_function_net_poly_crit,
    narrow_operator_net, NarrowOptions, NarrowPass,
};
use deepnarrow::net::Network;
use deepnarrow::reconnect::reconnect_operator_net;
use deepnarrow::separation::{
    build_hard_net, claim2_report, count_pieces, dp_oracle_minima, lower_bound_certificate,
    relu_piece_bound, seeded_candidates, sawtooth_pl, Slice,
};
use deepnarrow::verify::{audit_budget, net_fn, operator_sup_error, sup_error_grid};
use deepnarrow::wide::{
    fit_chenchen, fit_shallow, sample_device, ChenChenFitConfig, ChenChenOperatorNet,
    FunctionFamily, ReferenceOperator, ShallowFunctionNet,
};
use num_traits::ToPrimitive;
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "deepnarrow", version, about = "deep narrow network compiler")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fit a wide shallow net (function or operator) to a built-in target.
    Fit {
        /// Target: "sine2d" (function) or "antiderivative" (operator).
        #[arg(long)]
        target: String,
        #[arg(long, default_value = "softplus")]
        sigma: String,
        #[arg(long, default_value_t = 120)]
        ridges: usize,
        #[arg(long, default_value_t = 41)]
        grid: usize,
        #[arg(long, default_value_t = 11)]
        seed: u64,
        /// Sensor count for operator targets.
        #[arg(long, default_value_t = 8)]
        sensors: usize,
        /// Inner neurons per branch for operator targets.
        #[arg(long, default_value_t = 64)]
        inner: usize,
        /// Branch count for operator targets.
        #[arg(long, default_value_t = 16)]
        branches: usize,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Compile a wide net into a deep narrow one.
    Narrow {
        /// Pass: staircase | poly | poly-critical | operator | reconnect.
        #[arg(long)]
        pass: String,
        #[arg(long, default_value = "softplus")]
        sigma: String,
        #[arg(long)]
        eps: f64,
        #[arg(long, default_value_t = 2)]
        base: u32,
        #[arg(long, default_value_t = 17)]
        seed: u64,
        /// Wide-net JSON produced by `fit`.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Verify a compiled network against its target.
    Verify {
        /// Deep-net JSON.
        #[arg(long = "in")]
        input: PathBuf,
        /// Target: "sine2d" or "antiderivative".
        #[arg(long)]
        target: String,
        #[arg(long, default_value_t = 101)]
        grid: usize,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long, default_value_t = 5)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Depth-separation suite: hard net, piece counts, certificates, report.
    Separation {
        #[arg(long)]
        k: u32,
        /// Print the exact piece count of the hard net and exit.
        #[arg(long, default_value_t = false)]
        pieces: bool,
        #[arg(long, default_value_t = 10)]
        candidates: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Also run the brute-force oracle sweep (slower).
        #[arg(long, default_value_t = false)]
        oracle: bool,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Show the block digit encoding of a point.
    EncodeDemo {
        #[arg(long, default_value_t = 10)]
        base: u32,
        #[arg(long)]
        kappa: u32,
        /// Comma-separated coordinates in [0, 1).
        #[arg(long)]
        x: String,
    },
    /// Re-emit a network file in canonical form plus a layer summary.
    Export {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
}

fn parse_sigma(name: &str) -> Result<ActivationSpec, Error> {
    let kind = match name {
        "relu" => ActivationKind::Relu,
        "softplus" => ActivationKind::Softplus,
        "sigmoid" => ActivationKind::Sigmoid,
        "tanh" => ActivationKind::ShiftedTanh,
        "exp" => ActivationKind::Exponential,
        "square" => return Ok(ActivationSpec::square()),
        other => {
            return Err(Error::Domain(format!(
                "unknown activation {other:?}; use relu|softplus|sigmoid|tanh|exp|square"
            )))
        }
    };
    Ok(ActivationSpec::new(kind))
}

fn sine2d(x: &[f64]) -> f64 {
    (2.0 * std::f64::consts::PI * x[0]).sin() * x[1]
}

fn sine2d_domain() -> Vec<(f64, f64)> {
    vec![(0.1, 0.9), (0.1, 0.9)]
}

fn write(path: &Path, content: &str) -> Result<(), Error> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, content)?;
    Ok(())
}

fn load_wide_function(path: &Path) -> Result<ShallowFunctionNet, Error> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

fn load_wide_operator(path: &Path) -> Result<ChenChenOperatorNet, Error> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.cmd {
        Cmd::Fit {
            target,
            sigma,
            ridges,
            grid,
            seed,
            sensors,
            inner,
            branches,
            out_dir,
        } => {
            let sigma = parse_sigma(&sigma)?;
            match target.as_str() {
                "sine2d" => {
                    let wide =
                        fit_shallow(sine2d, &sine2d_domain(), ridges, grid, &sigma, seed)?;
                    write(
                        &out_dir.join("wide.json"),
                        &serde_json::to_string_pretty(&wide)?,
                    )?;
                    println!(
                        "fit sine2d: ridges {} achieved_error {:.6e}",
                        wide.ridge_count(),
                        wide.achieved_error
                    );
                }
                "antiderivative" => {
                    let family = FunctionFamily::standard();
                    let wide = fit_chenchen(
                        ReferenceOperator::Antiderivative,
                        &family,
                        sensors,
                        inner,
                        branches,
                        &sigma,
                        seed,
                        &ChenChenFitConfig::default(),
                    )?;
                    write(
                        &out_dir.join("wide.json"),
                        &serde_json::to_string_pretty(&wide)?,
                    )?;
                    println!(
                        "fit antiderivative: sensors {} branches {} achieved_error {:.6e}",
                        wide.sensor_count(),
                        wide.branches,
                        wide.achieved_error
                    );
                }
                other => {
                    return Err(Error::Domain(format!(
                        "unknown target {other:?}; use sine2d|antiderivative"
                    )))
                }
            }
        }
        Cmd::Narrow {
            pass,
            sigma,
            eps,
            base,
            seed,
            input,
            out_dir,
        } => {
            let sigma = parse_sigma(&sigma)?;
            let opts = NarrowOptions {
                base,
                seed,
                ..NarrowOptions::default()
            };
            let (net, budget, schedule_json) = match pass.as_str() {
                "staircase" => {
                    let wide = load_wide_function(&input)?;
                    let (net, budget) = narrow_function_net(&wide, eps, &opts)?;
                    (net, budget, None)
                }
                "poly" => {
                    let wide = load_wide_function(&input)?;
                    let domain = wide.domain.clone();
                    let (net, budget) = narrow_function_net_poly(
                        |x: &[f64]| wide.eval(x),
                        &domain,
                        &sigma,
                        eps,
                        &opts,
                    )?;
                    (net, budget, None)
                }
                "poly-critical" => {
                    let wide = load_wide_function(&input)?;
                    let domain = wide.domain.clone();
                    let (net, budget) = narrow_function_net_poly_crit(
                        |x: &[f64]| wide.eval(x),
                        &domain,
                        &sigma,
                        eps,
                        &opts,
                    )?;
                    (net, budget, None)
                }
                "operator" => {
                    let wide = load_wide_operator(&input)?;
                    let (net, budget) =
                        narrow_operator_net(&wide, &sigma, eps, NarrowPass::Auto, &opts)?;
                    (net, budget, None)
                }
                "reconnect" => {
                    let wide = load_wide_operator(&input)?;
                    let (net, schedule, budget) = reconnect_operator_net(&wide, &sigma, eps)?;
                    (net, budget, Some(serde_json::to_string_pretty(&schedule)?))
                }
                other => {
                    return Err(Error::Domain(format!(
                        "unknown pass {other:?}; use staircase|poly|poly-critical|operator|reconnect"
                    )))
                }
            };
            write(&out_dir.join("deep.json"), &json::to_json_string(&net)?)?;
            write(
                &out_dir.join("budget.json"),
                &serde_json::to_string_pretty(&budget)?,
            )?;
            let audit = audit_budget(&budget);
            write(&out_dir.join("budget_audit.csv"), &audit.stages_csv())?;
            if let Some(s) = schedule_json {
                write(&out_dir.join("schedule.json"), &s)?;
            }
            println!(
                "narrow {}: width {} depth {} within_budget {}",
                pass,
                net.width(),
                net.depth(),
                budget.within()
            );
        }
        Cmd::Verify {
            input,
            target,
            grid,
            samples,
            seed,
            out_dir,
        } => {
            let text = fs::read_to_string(&input)?;
            let net = json::from_json_str(&text)?;
            let report = match target.as_str() {
                "sine2d" => sup_error_grid(
                    |x: &[f64]| Ok(sine2d(x)),
                    net_fn(&net),
                    &sine2d_domain(),
                    grid,
                )?,
                "antiderivative" => {
                    let m = net.effective_input_dim() - 1;
                    operator_sup_error(
                        &net,
                        &ReferenceOperator::Antiderivative,
                        &FunctionFamily::standard(),
                        &sample_device(m),
                        grid.min(101),
                        samples,
                        seed,
                    )?
                }
                other => {
                    return Err(Error::Domain(format!(
                        "unknown target {other:?}; use sine2d|antiderivative"
                    )))
                }
            };
            write(&out_dir.join("report.json"), &report.to_json()?)?;
            println!(
                "verify {}: max_error {:.6e} mean_error {:.6e}",
                target, report.max_error, report.mean_error
            );
        }
        Cmd::Separation {
            k,
            pieces,
            candidates,
            seed,
            oracle,
            out_dir,
        } => {
            let spec = build_hard_net(k, 1)?;
            if pieces {
                let slice = Slice::axis(1, 0)?;
                println!("{}", count_pieces(&spec.net, &slice)?);
                return Ok(());
            }
            write(&out_dir.join("hard_net.json"), &json::to_json_string(&spec.net)?)?;
            // certificate table
            let mut cert_csv = String::from("teeth,pieces,certificate,certificate_float\n");
            for t in [4u64, 8, 16] {
                for p in 1..=2 * t {
                    let c = lower_bound_certificate(t, p)?;
                    cert_csv.push_str(&format!(
                        "{t},{p},{c},{}\n",
                        c.to_f64().unwrap_or(f64::NAN)
                    ));
                }
            }
            write(&out_dir.join("certificates.csv"), &cert_csv)?;
            if oracle {
                let mut csv = String::from("teeth,pieces,oracle_min\n");
                for t in [4usize, 8, 16] {
                    let minima = dp_oracle_minima(t, 2 * t)?;
                    for (p, v) in minima.iter().enumerate() {
                        csv.push_str(&format!("{t},{},{v:e}\n", p + 1));
                    }
                }
                write(&out_dir.join("oracle.csv"), &csv)?;
            }
            // L1 table of composed tooth maps against simple references
            let mut l1_csv = String::from("compositions,pieces,l1_vs_zero,l1_vs_half\n");
            let zero = deepnarrow::pl::PiecewiseLinear::constant(
                deepnarrow::pl::rat_int(0),
                deepnarrow::pl::rat_int(1),
                deepnarrow::pl::rat_int(0),
            )?;
            let half = deepnarrow::pl::PiecewiseLinear::constant(
                deepnarrow::pl::rat_int(0),
                deepnarrow::pl::rat_int(1),
                deepnarrow::pl::rat(1, 2),
            )?;
            for c in 1..=8u32 {
                let f = sawtooth_pl(1usize << (c - 1))?;
                l1_csv.push_str(&format!(
                    "{c},{},{},{}\n",
                    f.pieces(),
                    f.l1_distance(&zero)?,
                    f.l1_distance(&half)?
                ));
            }
            write(&out_dir.join("l1_table.csv"), &l1_csv)?;
            // candidate report
            let m = 2;
            let cands = seeded_candidates(candidates, m, 1 << k, seed);
            let u = vec![0.25; m];
            let slice = Slice::axis(1, 0)?;
            let rows = claim2_report(k, &cands, &u, &[slice])?;
            let mut csv = String::from(
                "candidate,depth,nodes,pieces,slice,l1_exact,l1,certificate_exact,certificate,meets_threshold,meets_certificate,skipped\n",
            );
            for r in &rows {
                csv.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{},{},{},{}\n",
                    r.candidate,
                    r.depth,
                    r.nodes,
                    r.pieces,
                    r.slice,
                    r.l1_exact,
                    r.l1,
                    r.certificate_exact,
                    r.certificate,
                    r.meets_threshold,
                    r.meets_certificate,
                    r.skipped.clone().unwrap_or_default()
                ));
            }
            write(&out_dir.join("claim2_report.csv"), &csv)?;
            println!(
                "separation k={k}: depth {} piece_bound {} candidates {}",
                spec.net.depth(),
                relu_piece_bound(k, 1 << k),
                rows.len()
            );
        }
        Cmd::EncodeDemo { base, kappa, x } => {
            let coords: Vec<f64> = x
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Malformed(format!("bad coordinate {s:?}: {e}")))
                })
                .collect::<Result<_, _>>()?;
            let fe = TruncationFrontEnd::unit(base, kappa, coords.len());
            let enc = encode(&coords, &fe)?;
            println!("x = {coords:?}");
            println!("base = {base}, kappa = {kappa}");
            for (j, &v) in coords.iter().enumerate() {
                let t = fe.truncate(v)?;
                let d = decode_oracle(&enc, j + 1)?;
                println!("  coordinate {}: digits {:0width$} decoded {}", j + 1, t, d,
                    width = kappa as usize);
            }
            println!("r_exact = {}", enc.r_exact);
            println!("r = {}", enc.r);
        }
        Cmd::Export { input, out_dir } => {
            let text = fs::read_to_string(&input)?;
            let net: Network = json::from_json_str(&text)?;
            write(&out_dir.join("canonical.json"), &json::to_json_string(&net)?)?;
            let mut csv = String::from("layer,in_dim,out_dim\n");
            for (i, l) in net.layers.iter().enumerate() {
                csv.push_str(&format!("{i},{},{}\n", l.in_dim, l.out_dim));
            }
            write(&out_dir.join("layers.csv"), &csv)?;
            println!(
                "export: input_dim {} width {} depth {}",
                net.input_dim,
                net.width(),
                net.depth()
            );
        }
    }
    Ok(())
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // clap prints its own help/version output with success status
            if e.use_stderr() {
                eprint!("{e}");
                std::process::exit(1);
            } else {
                print!("{e}");
                std::process::exit(0);
            }
        }
    };
    if let Err(err) = run(cli) {
        eprintln!("error: {err}");
        let code = match err {
            Error::BudgetInfeasible(_) | Error::EncodingInfeasible(_) => 2,
            _ => 1,
        };
        std::process::exit(code);
    }
}
