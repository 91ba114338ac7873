//! Small sigma-activated subnetworks approximating identity, squaring,
//! multiplication and univariate functions, with grid-certified sup error.

use crate::activation::{ActivationKind, ActivationSpec, DERIV_ZERO_TOL};
use crate::error::{Error, Result};
use crate::net::{Layer, Network};
use crate::par;
use crate::pl::PiecewiseLinear;
use num_traits::ToPrimitive;
use serde::Serialize;

/// Verification grid sizes: points per axis.
pub const GRID_1D: usize = 10_000;
pub const GRID_2D: usize = 201;
/// Geometric h-search budget.
pub const H_SEARCH_STEPS: u32 = 60;

#[derive(Debug, Clone, PartialEq)]
pub enum GadgetTarget {
    Identity,
    Square,
    Multiply,
    Univariate(String),
}

impl GadgetTarget {
    fn label(&self) -> String {
        match self {
            GadgetTarget::Identity => "identity".into(),
            GadgetTarget::Square => "square".into(),
            GadgetTarget::Multiply => "multiply".into(),
            GadgetTarget::Univariate(name) => format!("univariate({name})"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Gadget {
    pub net: Network,
    /// One (lo, hi) pair per input axis.
    pub domain: Vec<(f64, f64)>,
    pub target: GadgetTarget,
    pub delta_requested: f64,
    pub achieved_error: f64,
    pub grid_resolution: usize,
    /// Hidden-layer count, the L of the compiler schedule.
    pub depth_l: usize,
}

/// JSON sidecar accompanying a serialized gadget network.
#[derive(Debug, Clone, Serialize)]
pub struct GadgetSidecar {
    pub target: String,
    pub domain: Vec<(f64, f64)>,
    pub delta_requested: f64,
    pub delta_achieved: f64,
    pub grid_resolution: usize,
    pub depth_l: usize,
}

impl Gadget {
    pub fn sidecar(&self) -> GadgetSidecar {
        GadgetSidecar {
            target: self.target.label(),
            domain: self.domain.clone(),
            delta_requested: self.delta_requested,
            delta_achieved: self.achieved_error,
            grid_resolution: self.grid_resolution,
            depth_l: self.depth_l,
        }
    }
}

fn require_positive_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0) {
        return Err(Error::Domain(format!(
            "tolerance must be strictly positive, got {delta}"
        )));
    }
    Ok(())
}

fn sup_error_1d<F>(net: &Network, target: F, lo: f64, hi: f64, points: usize) -> f64
where
    F: Fn(f64) -> f64 + Sync + Send,
{
    let grid = par::linspace(lo, hi, points);
    par::max_key(&grid, |&x| {
        match net.evaluate_scalar(&[x]) {
            Ok(v) => (v - target(x)).abs(),
            Err(_) => f64::INFINITY,
        }
    })
}

fn sup_error_2d<F>(net: &Network, target: F, bx: (f64, f64), by: (f64, f64), points: usize) -> f64
where
    F: Fn(f64, f64) -> f64 + Sync + Send,
{
    let grid = par::grid2(bx, by, points);
    par::max_key(&grid, |&[a, b]| {
        match net.evaluate_scalar(&[a, b]) {
            Ok(v) => (v - target(a, b)).abs(),
            Err(_) => f64::INFINITY,
        }
    })
}

/// One sigma neuron rescaled to approximate the identity:
/// x -> (sigma(alpha + h x) - sigma(alpha)) / (h sigma'(alpha)).
fn identity_net(sigma: &ActivationSpec, alpha: f64, h: f64) -> Network {
    let d1 = sigma.d1(alpha);
    let hidden = Layer::from_rows(vec![vec![h]], vec![alpha], vec![sigma.clone()]);
    let out = Layer::from_rows(
        vec![vec![1.0 / (h * d1)]],
        vec![-sigma.eval(alpha) / (h * d1)],
        vec![ActivationSpec::identity()],
    );
    Network::new(1, vec![hidden, out])
}

pub fn identity_gadget(sigma: &ActivationSpec, domain: (f64, f64), delta: f64) -> Result<Gadget> {
    require_positive_delta(delta)?;
    sigma.validate()?;
    let (lo, hi) = domain;
    if sigma.kind == ActivationKind::Relu {
        // relu(x + c) - c is exact for x >= -c
        let c = (-lo).max(0.0);
        let hidden = Layer::from_rows(vec![vec![1.0]], vec![c], vec![ActivationSpec::relu()]);
        let out = Layer::from_rows(
            vec![vec![1.0]],
            vec![-c],
            vec![ActivationSpec::identity()],
        );
        let net = Network::new(1, vec![hidden, out]);
        let err = sup_error_1d(&net, |x| x, lo, hi, GRID_1D);
        return Ok(Gadget {
            net,
            domain: vec![domain],
            target: GadgetTarget::Identity,
            delta_requested: delta,
            achieved_error: err,
            grid_resolution: GRID_1D,
            depth_l: 1,
        });
    }
    let alpha = sigma.anchor_or_err()?;
    if sigma.d1(alpha).abs() < DERIV_ZERO_TOL {
        return Err(Error::AnchorCondition(format!(
            "sigma'({alpha}) is numerically zero; identity gadget needs a sloped anchor"
        )));
    }
    let mut best = f64::INFINITY;
    let mut h = 1.0;
    for _ in 0..H_SEARCH_STEPS {
        let net = identity_net(sigma, alpha, h);
        let err = sup_error_1d(&net, |x| x, lo, hi, GRID_1D);
        if err <= delta {
            return Ok(Gadget {
                net,
                domain: vec![domain],
                target: GadgetTarget::Identity,
                delta_requested: delta,
                achieved_error: err,
                grid_resolution: GRID_1D,
                depth_l: 1,
            });
        }
        best = best.min(err);
        h *= 0.5;
    }
    Err(Error::ToleranceUnreachable {
        requested: delta,
        achieved: best,
        detail: "identity gadget h-search exhausted".into(),
    })
}

/// Symmetric second difference:
/// x^2 ~ (sigma(alpha + h x) - 2 sigma(alpha) + sigma(alpha - h x)) / (h^2 sigma''(alpha)).
fn square_net(sigma: &ActivationSpec, alpha: f64, h: f64) -> Network {
    let d2 = sigma.d2(alpha);
    let hidden = Layer::from_rows(
        vec![vec![h], vec![-h]],
        vec![alpha, alpha],
        vec![sigma.clone(), sigma.clone()],
    );
    let s = 1.0 / (h * h * d2);
    let out = Layer::from_rows(
        vec![vec![s, s]],
        vec![-2.0 * sigma.eval(alpha) * s],
        vec![ActivationSpec::identity()],
    );
    Network::new(1, vec![hidden, out])
}

/// One-sided second-order gadget, valid when sigma'(alpha) = 0:
/// x^2 ~ (sigma(alpha + h x) - sigma(alpha)) * 2 / (h^2 sigma''(alpha)).
/// Uses a single sigma neuron.
fn one_sided_square_net(sigma: &ActivationSpec, alpha: f64, h: f64) -> Network {
    let d2 = sigma.d2(alpha);
    let hidden = Layer::from_rows(vec![vec![h]], vec![alpha], vec![sigma.clone()]);
    let s = 2.0 / (h * h * d2);
    let out = Layer::from_rows(
        vec![vec![s]],
        vec![-sigma.eval(alpha) * s],
        vec![ActivationSpec::identity()],
    );
    Network::new(1, vec![hidden, out])
}

fn square_anchor(sigma: &ActivationSpec) -> Result<f64> {
    sigma.validate()?;
    if sigma.kind == ActivationKind::Relu {
        return Err(Error::AnchorCondition(
            "relu has no second-order anchor; squaring needs sigma''(alpha) != 0".into(),
        ));
    }
    let alpha = sigma.anchor_or_err()?;
    if sigma.d2(alpha).abs() < DERIV_ZERO_TOL {
        return Err(Error::AnchorCondition(format!(
            "sigma''({alpha}) is numerically zero; square gadget needs curvature"
        )));
    }
    Ok(alpha)
}

fn square_search<B>(
    sigma: &ActivationSpec,
    alpha: f64,
    domain: (f64, f64),
    delta: f64,
    build: B,
) -> Result<Gadget>
where
    B: Fn(&ActivationSpec, f64, f64) -> Network,
{
    let (lo, hi) = domain;
    let mut best = f64::INFINITY;
    let mut h = 1.0;
    for _ in 0..H_SEARCH_STEPS {
        let net = build(sigma, alpha, h);
        let err = sup_error_1d(&net, |x| x * x, lo, hi, GRID_1D);
        if err <= delta {
            return Ok(Gadget {
                net,
                domain: vec![domain],
                target: GadgetTarget::Square,
                delta_requested: delta,
                achieved_error: err,
                grid_resolution: GRID_1D,
                depth_l: 1,
            });
        }
        if err < best {
            best = err;
        } else if err > 10.0 * best && best.is_finite() {
            // cancellation regime: smaller h only loses precision
            break;
        }
        h *= 0.5;
    }
    Err(Error::ToleranceUnreachable {
        requested: delta,
        achieved: best,
        detail: "square gadget h-search exhausted (float cancellation bound)".into(),
    })
}

pub fn square_gadget(sigma: &ActivationSpec, domain: (f64, f64), delta: f64) -> Result<Gadget> {
    require_positive_delta(delta)?;
    let alpha = square_anchor(sigma)?;
    square_search(sigma, alpha, domain, delta, square_net)
}

pub fn one_sided_square_gadget(
    sigma: &ActivationSpec,
    domain: (f64, f64),
    delta: f64,
) -> Result<Gadget> {
    require_positive_delta(delta)?;
    let alpha = square_anchor(sigma)?;
    if sigma.d1(alpha).abs() >= DERIV_ZERO_TOL {
        return Err(Error::AnchorCondition(format!(
            "one-sided square needs sigma'({alpha}) = 0, got {}",
            sigma.d1(alpha)
        )));
    }
    square_search(sigma, alpha, domain, delta, one_sided_square_net)
}

/// Polarization multiply for smooth sigma, peak width 3, depth L = 3:
/// ab = ((a+b)^2 - (a-b)^2) / 4 with the two second differences sequenced
/// through an identity-carried accumulator.
fn smooth_mult_net(sigma: &ActivationSpec, alpha: f64, h: f64) -> Network {
    let d2 = sigma.d2(alpha);
    let s = 1.0 / (h * h * d2);
    let sig0 = sigma.eval(alpha);
    // layer 1: sigma(alpha +- h(a+b)), carry d = a - b
    let l1 = Layer::from_rows(
        vec![vec![h, h], vec![-h, -h], vec![1.0, -1.0]],
        vec![alpha, alpha, 0.0],
        vec![sigma.clone(), sigma.clone(), ActivationSpec::identity()],
    );
    // layer 2: acc = (a+b)^2 approx, sigma(alpha +- h d)
    let l2 = Layer::from_rows(
        vec![vec![s, s, 0.0], vec![0.0, 0.0, h], vec![0.0, 0.0, -h]],
        vec![-2.0 * sig0 * s, alpha, alpha],
        vec![ActivationSpec::identity(), sigma.clone(), sigma.clone()],
    );
    // output: (acc - (a-b)^2 approx) / 4
    let l3 = Layer::from_rows(
        vec![vec![0.25, -0.25 * s, -0.25 * s]],
        vec![0.5 * sig0 * s],
        vec![ActivationSpec::identity()],
    );
    Network::new(2, vec![l1, l2, l3])
}

/// Sawtooth (tooth-composition) squaring for relu, via the bump series
/// x^2 ~ x - sum_{s<=m} t^{compose s}(x) / 4^s on [0,1]. The polarization
/// needs a carried second operand, so the peak width here is 4, not 3; this
/// deviation from the smooth-sigma budget is recorded in the sidecar depth/width.
fn relu_mult_net(bx: (f64, f64), by: (f64, f64), teeth: u32) -> Network {
    let id = ActivationSpec::identity;
    let re = ActivationSpec::relu;
    let c = bx.0.abs().max(bx.1.abs()) + by.0.abs().max(by.1.abs());
    let mut layers = Vec::new();
    // init: g = ((a+b)+c)/(2c), d = ((a-b)+c)/(2c), both in [0,1]; acc = 0
    let k = 1.0 / (2.0 * c);
    layers.push(Layer::from_rows(
        vec![vec![k, k], vec![k, -k], vec![0.0, 0.0]],
        vec![0.5, 0.5, 0.0],
        vec![re(), re(), re()],
    ));
    // two tooth phases: first over g (carrying d), then over d (carrying acc1)
    let build_phase = |layers: &mut Vec<Layer>| {
        for s in 1..=teeth {
            let pow = 0.25f64.powi(s as i32);
            // slot order in: [g, carry1, acc]; out A: [r, g, carry1, acc]
            layers.push(Layer::from_rows(
                vec![
                    vec![1.0, 0.0, 0.0],
                    vec![1.0, 0.0, 0.0],
                    vec![0.0, 1.0, 0.0],
                    vec![0.0, 0.0, 1.0],
                ],
                vec![-0.5, 0.0, 0.0, 0.0],
                vec![re(), re(), re(), re()],
            ));
            // out B: [g' = 2g - 4r, carry1, acc + (2g - 4r)/4^s]
            layers.push(Layer::from_rows(
                vec![
                    vec![-4.0, 2.0, 0.0, 0.0],
                    vec![0.0, 0.0, 1.0, 0.0],
                    vec![-4.0 * pow, 2.0 * pow, 0.0, 1.0],
                ],
                vec![0.0, 0.0, 0.0],
                vec![re(), re(), re()],
            ));
        }
    };
    build_phase(&mut layers);
    // transition: new tooth state is the carried d; keep acc1, reset acc2
    layers.push(Layer::from_rows(
        vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0], vec![0.0, 0.0, 0.0]],
        vec![0.0, 0.0, 0.0],
        vec![re(), re(), re()],
    ));
    build_phase(&mut layers);
    // With x = (v + c)/(2c): v^2 = 4c^2 (x - 1/2)^2 ~ 4c^2 (1/4 - bump(x)),
    // so ab = (S1^2 - S2^2)/4 = c^2 (bump2 - bump1).
    let c2 = c * c;
    layers.push(Layer::from_rows(
        vec![vec![0.0, -c2, c2]],
        vec![0.0],
        vec![id()],
    ));
    Network::new(2, layers)
}

pub fn mult_gadget(
    sigma: &ActivationSpec,
    bx: (f64, f64),
    by: (f64, f64),
    delta: f64,
) -> Result<Gadget> {
    require_positive_delta(delta)?;
    sigma.validate()?;
    if sigma.kind == ActivationKind::Relu {
        let mut best = f64::INFINITY;
        for teeth in 2..=16u32 {
            let net = relu_mult_net(bx, by, teeth);
            let err = sup_error_2d(&net, |a, b| a * b, bx, by, GRID_2D);
            if err <= delta {
                let depth_l = net.layers.len() - 1;
                return Ok(Gadget {
                    net,
                    domain: vec![bx, by],
                    target: GadgetTarget::Multiply,
                    delta_requested: delta,
                    achieved_error: err,
                    grid_resolution: GRID_2D,
                    depth_l,
                });
            }
            best = best.min(err);
        }
        return Err(Error::ToleranceUnreachable {
            requested: delta,
            achieved: best,
            detail: "relu multiply tooth budget exhausted".into(),
        });
    }
    let alpha = square_anchor(sigma)?;
    let mut best = f64::INFINITY;
    let mut h = 1.0;
    for _ in 0..H_SEARCH_STEPS {
        let net = smooth_mult_net(sigma, alpha, h);
        let err = sup_error_2d(&net, |a, b| a * b, bx, by, GRID_2D);
        if err <= delta {
            return Ok(Gadget {
                net,
                domain: vec![bx, by],
                target: GadgetTarget::Multiply,
                delta_requested: delta,
                achieved_error: err,
                grid_resolution: GRID_2D,
                depth_l: 3,
            });
        }
        if err < best {
            best = err;
        } else if err > 10.0 * best && best.is_finite() {
            break;
        }
        h *= 0.5;
    }
    Err(Error::ToleranceUnreachable {
        requested: delta,
        achieved: best,
        detail: "multiply gadget h-search exhausted".into(),
    })
}

/// Hinge decomposition of a piecewise-linear target:
/// f(x) = f(x_0) + sum_k c_k relu(x - x_k), hinges at all interior breakpoints
/// plus the left endpoint.
fn hinge_decomposition(target: &PiecewiseLinear) -> Result<(f64, Vec<(f64, f64)>)> {
    let to_f = |r: &crate::pl::Rat| -> Result<f64> {
        r.to_f64()
            .ok_or_else(|| Error::Domain("breakpoint does not fit in f64".into()))
    };
    let n = target.xs.len();
    let mut hinges = Vec::with_capacity(n - 1);
    let mut prev_slope = 0.0;
    for i in 0..n - 1 {
        let x0 = to_f(&target.xs[i])?;
        let x1 = to_f(&target.xs[i + 1])?;
        let y0 = to_f(&target.ys[i])?;
        let y1 = to_f(&target.ys[i + 1])?;
        let slope = (y1 - y0) / (x1 - x0);
        hinges.push((x0, slope - prev_slope));
        prev_slope = slope;
    }
    Ok((to_f(&target.ys[0])?, hinges))
}

/// Width-3 register-compute realization of a 1-D piecewise-linear function:
/// one register carrying x, one hinge neuron per layer, one accumulator.
/// Exact for relu; for softplus the hinges are sharpened softplus kinks.
fn hinge_chain_net(
    base_value: f64,
    hinges: &[(f64, f64)],
    sigma: &ActivationSpec,
    sharpness: f64,
) -> Network {
    let id = ActivationSpec::identity;
    let relu_hinges = sigma.kind == ActivationKind::Relu;
    let s = if relu_hinges { 1.0 } else { sharpness };
    let mut layers = Vec::new();
    let b = hinges.len();
    // layer 0: [reg = x, h_0]
    layers.push(Layer::from_rows(
        vec![vec![1.0], vec![s]],
        vec![0.0, -s * hinges[0].0],
        vec![id(), sigma.clone()],
    ));
    // layer i: [reg, h_i, acc += c_{i-1} h_{i-1} / s]
    for i in 1..b {
        let rows = if i == 1 {
            vec![
                vec![1.0, 0.0],
                vec![s, 0.0],
                vec![0.0, hinges[0].1 / s],
            ]
        } else {
            vec![
                vec![1.0, 0.0, 0.0],
                vec![s, 0.0, 0.0],
                vec![0.0, hinges[i - 1].1 / s, 1.0],
            ]
        };
        layers.push(Layer::from_rows(
            rows,
            vec![0.0, -s * hinges[i].0, 0.0],
            vec![id(), sigma.clone(), id()],
        ));
    }
    // output: base + acc + c_{b-1} h_{b-1} / s
    let out = if b == 1 {
        Layer::from_rows(
            vec![vec![0.0, hinges[0].1 / s]],
            vec![base_value],
            vec![id()],
        )
    } else {
        Layer::from_rows(
            vec![vec![0.0, hinges[b - 1].1 / s, 1.0]],
            vec![base_value],
            vec![id()],
        )
    };
    layers.push(out);
    Network::new(1, layers)
}

/// Approximate a piecewise-linear target on its own domain by a width-3
/// register-compute subnet, within `delta` on the 1-D verification grid.
pub fn approx_1d(
    target: &PiecewiseLinear,
    sigma: &ActivationSpec,
    delta: f64,
) -> Result<Gadget> {
    require_positive_delta(delta)?;
    sigma.validate()?;
    let supported = matches!(
        sigma.kind,
        ActivationKind::Relu | ActivationKind::Softplus
    );
    if !supported {
        return Err(Error::InvalidActivation(
            "univariate hinge chains are built for relu and softplus".into(),
        ));
    }
    let (lo, hi) = {
        let (l, h) = target.domain();
        (
            l.to_f64().ok_or_else(|| Error::Domain("domain endpoint".into()))?,
            h.to_f64().ok_or_else(|| Error::Domain("domain endpoint".into()))?,
        )
    };
    let (base_value, hinges) = hinge_decomposition(target)?;
    let total_jump: f64 = hinges.iter().map(|&(_, c)| c.abs()).sum();
    // sup_v |softplus(s v)/s - relu(v)| = ln 2 / s
    let mut sharpness = (std::f64::consts::LN_2 * total_jump / (0.5 * delta)).max(1.0);
    let mut best = f64::INFINITY;
    let mut best_gadget: Option<Gadget> = None;
    for _ in 0..20 {
        let net = hinge_chain_net(base_value, &hinges, sigma, sharpness);
        let err = sup_error_1d(
            &net,
            |x| target.eval_f64(x.clamp(lo, hi)).unwrap_or(f64::NAN),
            lo,
            hi,
            GRID_1D,
        );
        if err < best {
            best = err;
            let depth_l = net.layers.len() - 1;
            best_gadget = Some(Gadget {
                net,
                domain: vec![(lo, hi)],
                target: GadgetTarget::Univariate(format!("{}-piece", target.pieces())),
                delta_requested: delta,
                achieved_error: err,
                grid_resolution: GRID_1D,
                depth_l,
            });
        }
        if best <= delta {
            return Ok(best_gadget.unwrap());
        }
        if sigma.kind == ActivationKind::Relu {
            break; // exact path: no sharpness to tune
        }
        sharpness *= 2.0;
    }
    Err(Error::ToleranceUnreachable {
        requested: delta,
        achieved: best,
        detail: "univariate hinge chain sharpness search exhausted".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pl::{rat, rat_int};

    #[test]
    fn identity_relu_exact() {
        let g = identity_gadget(&ActivationSpec::relu(), (0.0, 2.0), 1e-12).unwrap();
        assert_eq!(g.achieved_error, 0.0);
        let g = identity_gadget(&ActivationSpec::relu(), (-3.0, 2.0), 1e-12).unwrap();
        assert_eq!(g.achieved_error, 0.0);
        assert_eq!(g.net.width(), 1);
    }

    #[test]
    fn identity_softplus_meets_tolerance() {
        let g = identity_gadget(&ActivationSpec::softplus(), (-1.0, 1.0), 1e-6).unwrap();
        assert!(g.achieved_error <= 1e-6);
        assert_eq!(g.net.width(), 1);
        assert!((g.net.evaluate_scalar(&[0.37]).unwrap() - 0.37).abs() <= 1e-6);
    }

    #[test]
    fn identity_zero_delta_rejected() {
        assert!(identity_gadget(&ActivationSpec::softplus(), (-1.0, 1.0), 0.0).is_err());
    }

    #[test]
    fn square_polynomial_exact() {
        let g = square_gadget(&ActivationSpec::square(), (-1.0, 1.0), 1e-12).unwrap();
        assert!(g.achieved_error <= 1e-12);
    }

    #[test]
    fn square_softplus() {
        let g = square_gadget(&ActivationSpec::softplus(), (-1.0, 1.0), 1e-3).unwrap();
        assert!(g.achieved_error <= 1e-3);
        assert_eq!(g.net.width(), 2);
    }

    #[test]
    fn square_relu_rejected() {
        assert!(square_gadget(&ActivationSpec::relu(), (-1.0, 1.0), 1e-3).is_err());
    }

    #[test]
    fn one_sided_square_needs_flat_anchor() {
        let g = one_sided_square_gadget(&ActivationSpec::square(), (-1.0, 1.0), 1e-9).unwrap();
        assert!(g.achieved_error <= 1e-9);
        assert_eq!(g.net.width(), 1);
        // softplus has sigma'(0) = 1/2: rejected
        assert!(one_sided_square_gadget(&ActivationSpec::softplus(), (-1.0, 1.0), 1e-3).is_err());
    }

    #[test]
    fn mult_softplus_grid() {
        let g = mult_gadget(
            &ActivationSpec::softplus(),
            (-1.0, 1.0),
            (-1.0, 1.0),
            1e-3,
        )
        .unwrap();
        assert!(g.achieved_error <= 1e-3);
        assert_eq!(g.net.width(), 3);
        assert_eq!(g.depth_l, 3);
        let v = g.net.evaluate_scalar(&[0.5, -0.5]).unwrap();
        assert!((v + 0.25).abs() <= 1e-3);
        // annihilator and symmetry spot checks
        assert!(g.net.evaluate_scalar(&[0.0, 0.7]).unwrap().abs() <= 1e-3);
        let ab = g.net.evaluate_scalar(&[0.3, 0.8]).unwrap();
        let ba = g.net.evaluate_scalar(&[0.8, 0.3]).unwrap();
        assert!((ab - ba).abs() <= 2e-3);
    }

    #[test]
    fn mult_relu_tooth_series() {
        let g = mult_gadget(&ActivationSpec::relu(), (-1.0, 1.0), (-1.0, 1.0), 1e-3).unwrap();
        assert!(g.achieved_error <= 1e-3);
        assert!(g.net.width() <= 4);
        let v = g.net.evaluate_scalar(&[0.5, -0.5]).unwrap();
        assert!((v + 0.25).abs() <= 1e-3);
    }

    #[test]
    fn approx_tooth_composition_relu_exact() {
        // 8-piece sawtooth: t composed three times
        let t = PiecewiseLinear::tooth();
        let mut f = t.clone();
        for _ in 0..2 {
            f = compose_tooth(&f);
        }
        assert_eq!(f.pieces(), 8);
        let g = approx_1d(&f, &ActivationSpec::relu(), 1e-12).unwrap();
        assert!(g.achieved_error <= 1e-12);
        assert!(g.net.width() <= 3);
    }

    #[test]
    fn approx_decoder_softplus() {
        let fe = crate::encoder::TruncationFrontEnd::unit(10, 1, 2);
        let phi = crate::encoder::decoder_grid_spec(1, &fe).unwrap();
        let g = approx_1d(&phi, &ActivationSpec::softplus(), 1e-3).unwrap();
        assert!(g.achieved_error <= 1e-3);
        // plateau centers decode exactly within delta
        for k in 0..100u32 {
            let r = k as f64 / 100.0;
            let want = (k / 10) as f64 / 10.0;
            assert!((g.net.evaluate_scalar(&[r]).unwrap() - want).abs() <= 1e-3);
        }
    }

    /// Composition t(f(x)) of the tooth with a PL map into [0,1], exact.
    fn compose_tooth(f: &PiecewiseLinear) -> PiecewiseLinear {
        // split every segment of f at preimages of 1/2, then map values
        let half = rat(1, 2);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..f.xs.len() {
            if i > 0 {
                let (y0, y1) = (&f.ys[i - 1], &f.ys[i]);
                let crosses = (y0 < &half && y1 > &half) || (y0 > &half && y1 < &half);
                if crosses {
                    let t = (&half - y0) / (y1 - y0);
                    xs.push(&f.xs[i - 1] + t * (&f.xs[i] - &f.xs[i - 1]));
                    ys.push(rat_int(1));
                }
            }
            xs.push(f.xs[i].clone());
            let v = &f.ys[i];
            ys.push(if v <= &half {
                rat_int(2) * v
            } else {
                rat_int(2) * (rat_int(1) - v)
            });
        }
        PiecewiseLinear::new(xs, ys).unwrap()
    }
}
