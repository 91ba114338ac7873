//! Wide input material: one-hidden-layer function nets, the four-layer
//! branch-trunk operator net, a sampleable Fourier function family, and
//! reference operators with analytic oracles.

use crate::activation::ActivationSpec;
use crate::error::{Error, Result};
use crate::gadgets;
use crate::net::{Layer, Network};
use crate::par;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// x -> c0 + sum_i c_i sigma(w_i . x + theta_i) on a box domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShallowFunctionNet {
    pub c0: f64,
    pub c: Vec<f64>,
    pub w: Vec<Vec<f64>>,
    pub theta: Vec<f64>,
    pub sigma: ActivationSpec,
    pub domain: Vec<(f64, f64)>,
    /// Sup error against the fit target, measured on the fitting point set.
    pub achieved_error: f64,
}

impl ShallowFunctionNet {
    pub fn input_dim(&self) -> usize {
        self.domain.len()
    }

    pub fn ridge_count(&self) -> usize {
        self.c.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.c.len();
        if self.w.len() != m || self.theta.len() != m {
            return Err(Error::DimensionMismatch(format!(
                "ridge counts disagree: c {}, w {}, theta {}",
                m,
                self.w.len(),
                self.theta.len()
            )));
        }
        let n = self.input_dim();
        if self.w.iter().any(|row| row.len() != n) {
            return Err(Error::DimensionMismatch(
                "inner weight row does not match input dimension".into(),
            ));
        }
        self.sigma.validate()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut acc = self.c0;
        for i in 0..self.c.len() {
            let mut z = self.theta[i];
            for (wj, xj) in self.w[i].iter().zip(x) {
                z += wj * xj;
            }
            acc += self.c[i] * self.sigma.eval(z);
        }
        acc
    }

    /// Explicit one-hidden-layer Network form.
    pub fn to_network(&self) -> Network {
        let hidden = Layer::from_rows(
            self.w.clone(),
            self.theta.clone(),
            vec![self.sigma.clone(); self.c.len()],
        );
        let out = Layer::from_rows(
            vec![self.c.clone()],
            vec![self.c0],
            vec![ActivationSpec::identity()],
        );
        Network::new(self.input_dim(), vec![hidden, out])
    }
}

/// Tensor grid over a box, `per_axis` points per axis, row-major.
pub fn box_grid(domain: &[(f64, f64)], per_axis: usize) -> Vec<Vec<f64>> {
    let mut points = vec![Vec::new()];
    for &(lo, hi) in domain {
        let axis = par::linspace(lo, hi, per_axis);
        let mut next = Vec::with_capacity(points.len() * per_axis);
        for p in &points {
            for &v in &axis {
                let mut q = p.clone();
                q.push(v);
                next.push(q);
            }
        }
        points = next;
    }
    points
}

fn uniform_in(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>()
}

/// Random ridge direction with log-uniform sharpness, kink at a random
/// anchor point of the domain.
fn random_ridge(rng: &mut ChaCha8Rng, domain: &[(f64, f64)]) -> (Vec<f64>, f64) {
    let n = domain.len();
    let mut d: Vec<f64> = (0..n).map(|_| uniform_in(rng, -1.0, 1.0)).collect();
    let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-9);
    let sharp = (uniform_in(rng, 0.5f64.ln(), 8.0f64.ln())).exp();
    for v in &mut d {
        *v *= sharp / norm;
    }
    let anchor: Vec<f64> = domain
        .iter()
        .map(|&(lo, hi)| uniform_in(rng, lo, hi))
        .collect();
    let theta = -d.iter().zip(&anchor).map(|(a, b)| a * b).sum::<f64>();
    (d, theta)
}

/// Least squares via the normal equations, solved with a truncated
/// eigendecomposition pseudoinverse so collinear feature sets stay stable
/// without a bias-introducing ridge term.
pub(crate) fn solve_least_squares(phi: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let ata = phi.transpose() * phi;
    let atb = phi.transpose() * rhs;
    let eig = ata.symmetric_eigen();
    let lmax = eig
        .eigenvalues
        .iter()
        .fold(0.0f64, |m, &l| m.max(l.abs()));
    if !(lmax.is_finite() && lmax > 0.0) {
        return Err(Error::Domain(
            "normal equations are degenerate: zero or non-finite spectrum".into(),
        ));
    }
    let cutoff = lmax * 1e-11;
    let proj = eig.eigenvectors.transpose() * atb;
    let scaled = DVector::from_iterator(
        proj.len(),
        proj.iter()
            .zip(eig.eigenvalues.iter())
            .map(|(&p, &l)| if l > cutoff { p / l } else { 0.0 }),
    );
    Ok(&eig.eigenvectors * scaled)
}

/// Fit a shallow sigma-net to `f` by seeded random features + least squares
/// on a supplied point set. Reports the sup error over those points.
pub fn fit_shallow_points<F>(
    f: F,
    points: &[Vec<f64>],
    domain: &[(f64, f64)],
    ridges: usize,
    sigma: &ActivationSpec,
    seed: u64,
) -> Result<ShallowFunctionNet>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if ridges == 0 || points.is_empty() {
        return Err(Error::Domain("fit needs ridges and sample points".into()));
    }
    sigma.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = Vec::with_capacity(ridges);
    let mut theta = Vec::with_capacity(ridges);
    for _ in 0..ridges {
        let (wi, ti) = random_ridge(&mut rng, domain);
        w.push(wi);
        theta.push(ti);
    }
    fit_from_features(f, points, domain, w, theta, sigma)
}

/// A 2-D fitting plane inside the input space: ridge directions are sampled
/// in the span of the two axis vectors (over the given scalar ranges) and
/// lifted back to the full input dimension, so a fit can spend its features
/// where the target actually varies.
#[derive(Debug, Clone)]
pub struct RidgePlane {
    pub axes: [Vec<f64>; 2],
    pub ranges: [(f64, f64); 2],
}

/// Shallow fit with ridges sampled inside the supplied planes instead of
/// isotropically. Each plane contributes `ridges_per_plane` features.
pub fn fit_shallow_planes<F>(
    f: F,
    points: &[Vec<f64>],
    domain: &[(f64, f64)],
    planes: &[RidgePlane],
    ridges_per_plane: usize,
    sigma: &ActivationSpec,
    seed: u64,
) -> Result<ShallowFunctionNet>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if ridges_per_plane == 0 || planes.is_empty() || points.is_empty() {
        return Err(Error::Domain(
            "plane fit needs planes, ridges, and sample points".into(),
        ));
    }
    sigma.validate()?;
    let n = domain.len();
    for plane in planes {
        if plane.axes[0].len() != n || plane.axes[1].len() != n {
            return Err(Error::Domain(format!(
                "plane axis dimension does not match the {n}-dimensional domain"
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = Vec::with_capacity(planes.len() * ridges_per_plane);
    let mut theta = Vec::with_capacity(planes.len() * ridges_per_plane);
    for plane in planes {
        for _ in 0..ridges_per_plane {
            let (d, t) = random_ridge(&mut rng, &plane.ranges);
            let lifted: Vec<f64> = (0..n)
                .map(|i| d[0] * plane.axes[0][i] + d[1] * plane.axes[1][i])
                .collect();
            w.push(lifted);
            theta.push(t);
        }
    }
    fit_from_features_minimax(f, points, domain, w, theta, sigma, 8)
}

fn fit_from_features<F>(
    f: F,
    points: &[Vec<f64>],
    domain: &[(f64, f64)],
    w: Vec<Vec<f64>>,
    theta: Vec<f64>,
    sigma: &ActivationSpec,
) -> Result<ShallowFunctionNet>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    fit_from_features_minimax(f, points, domain, w, theta, sigma, 0)
}

/// Least-squares fit on fixed features, optionally sharpened towards a
/// minimax fit by Lawson-style residual reweighting. Keeps the iterate with
/// the smallest sup error over the sample points.
fn fit_from_features_minimax<F>(
    f: F,
    points: &[Vec<f64>],
    domain: &[(f64, f64)],
    w: Vec<Vec<f64>>,
    theta: Vec<f64>,
    sigma: &ActivationSpec,
    reweight_iters: usize,
) -> Result<ShallowFunctionNet>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let ridges = w.len();
    let p = points.len();
    let mut phi = DMatrix::zeros(p, ridges + 1);
    let mut rhs = DVector::zeros(p);
    for (row, x) in points.iter().enumerate() {
        phi[(row, 0)] = 1.0;
        for i in 0..ridges {
            let z: f64 = theta[i] + w[i].iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            phi[(row, i + 1)] = sigma.eval(z);
        }
        rhs[row] = f(x);
    }
    // The reweighted (plane) path solves the rectangular system by SVD so
    // the conditioning is not squared by the normal equations; the plain
    // path keeps the historical eigendecomposition solve.
    let solve = |a: &DMatrix<f64>, b: &DVector<f64>| -> Result<DVector<f64>> {
        if reweight_iters == 0 {
            return solve_least_squares(a, b);
        }
        let svd = a.clone().svd(true, true);
        svd.solve(b, 1e-9)
            .map_err(|e| Error::Domain(format!("svd least squares: {e}")))
    };
    let mut coef = solve(&phi, &rhs)?;
    if reweight_iters > 0 {
        let sup_of = |c: &DVector<f64>| {
            let res = &phi * c - &rhs;
            res.iter().fold(0.0f64, |m, r| m.max(r.abs()))
        };
        let mut best_sup = sup_of(&coef);
        let mut weight = DVector::from_element(p, 1.0f64);
        let mut current = coef.clone();
        for _ in 0..reweight_iters {
            let res = &phi * &current - &rhs;
            for i in 0..p {
                weight[i] *= res[i].abs() + 1e-9;
            }
            let mean = weight.iter().sum::<f64>() / p as f64;
            if !(mean.is_finite() && mean > 0.0) {
                break;
            }
            for i in 0..p {
                weight[i] /= mean;
            }
            let mut phiw = phi.clone();
            let mut rhsw = rhs.clone();
            for i in 0..p {
                let s = weight[i].sqrt();
                for j in 0..=ridges {
                    phiw[(i, j)] *= s;
                }
                rhsw[i] *= s;
            }
            current = solve(&phiw, &rhsw)?;
            let sup = sup_of(&current);
            if sup < best_sup {
                best_sup = sup;
                coef = current.clone();
            }
        }
    }
    let net = ShallowFunctionNet {
        c0: coef[0],
        c: coef.iter().skip(1).copied().collect(),
        w,
        theta,
        sigma: sigma.clone(),
        domain: domain.to_vec(),
        achieved_error: 0.0,
    };
    let err = par::max_key(points, |x| (net.eval(x) - f(x)).abs());
    Ok(ShallowFunctionNet {
        achieved_error: err,
        ..net
    })
}

/// Grid-based shallow fit (tensor grid with `grid_per_axis` points per axis).
pub fn fit_shallow<F>(
    f: F,
    domain: &[(f64, f64)],
    ridges: usize,
    grid_per_axis: usize,
    sigma: &ActivationSpec,
    seed: u64,
) -> Result<ShallowFunctionNet>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let points = box_grid(domain, grid_per_axis);
    fit_shallow_points(f, &points, domain, ridges, sigma, seed)
}

/// Truncated Fourier series on [0,1]:
/// u(t) = a0 + sum_l a_l cos(2 pi l t) + b_l sin(2 pi l t).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierFn {
    pub a0: f64,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl FourierFn {
    pub fn eval(&self, t: f64) -> f64 {
        let mut acc = self.a0;
        for (l, (al, bl)) in self.a.iter().zip(&self.b).enumerate() {
            let om = 2.0 * std::f64::consts::PI * (l + 1) as f64;
            acc += al * (om * t).cos() + bl * (om * t).sin();
        }
        acc
    }

    /// Exact antiderivative from 0: int_0^y u(t) dt.
    pub fn antiderivative(&self, y: f64) -> f64 {
        let mut acc = self.a0 * y;
        for (l, (al, bl)) in self.a.iter().zip(&self.b).enumerate() {
            let om = 2.0 * std::f64::consts::PI * (l + 1) as f64;
            acc += al * (om * y).sin() / om + bl * (1.0 - (om * y).cos()) / om;
        }
        acc
    }

    pub fn at_sensors(&self, sensors: &[f64]) -> Vec<f64> {
        sensors.iter().map(|&x| self.eval(x)).collect()
    }
}

/// Compact family surrogate: Fourier series with `modes` modes and all
/// coefficients in [-bound, bound].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionFamily {
    pub modes: usize,
    pub bound: f64,
}

impl FunctionFamily {
    pub fn standard() -> Self {
        FunctionFamily {
            modes: 3,
            bound: 1.0,
        }
    }

    pub fn parameter_count(&self) -> usize {
        1 + 2 * self.modes
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> FourierFn {
        let mut draw = || uniform_in(rng, -self.bound, self.bound);
        let a0 = draw();
        let a: Vec<f64> = (0..self.modes).map(|_| draw()).collect();
        let b: Vec<f64> = (0..self.modes).map(|_| draw()).collect();
        FourierFn { a0, a, b }
    }

    /// The idx-th corner of the coefficient box (idx < 2^(2 modes + 1)).
    pub fn corner(&self, idx: usize) -> FourierFn {
        let p = self.parameter_count();
        let coeff = |bit: usize| {
            if (idx >> bit) & 1 == 1 {
                self.bound
            } else {
                -self.bound
            }
        };
        let vals: Vec<f64> = (0..p).map(coeff).collect();
        FourierFn {
            a0: vals[0],
            a: vals[1..1 + self.modes].to_vec(),
            b: vals[1 + self.modes..].to_vec(),
        }
    }

    pub fn corner_count(&self) -> usize {
        1 << self.parameter_count()
    }

    /// Uniform bound on |u| over the family.
    pub fn sup_bound(&self) -> f64 {
        self.bound * (1.0 + 2.0 * self.modes as f64)
    }
}

/// Fitting planes for a sampled-function target: the family coefficients
/// are linear functionals of the sensor values (via the pseudoinverse of
/// the sensor design matrix), and the target restricted to in-family inputs
/// is a sum of terms depending only on (one coefficient, y). Each plane
/// pairs one reconstruction functional with the trailing y coordinate.
pub fn coefficient_planes(family: &FunctionFamily, sensors: &[f64]) -> Result<Vec<RidgePlane>> {
    let m = sensors.len();
    let p = family.parameter_count();
    if m == 0 {
        return Err(Error::Domain("coefficient planes need sensors".into()));
    }
    let mut design = DMatrix::zeros(m, p);
    for (i, &x) in sensors.iter().enumerate() {
        design[(i, 0)] = 1.0;
        for l in 1..=family.modes {
            let a = 2.0 * std::f64::consts::PI * l as f64 * x;
            design[(i, l)] = a.cos();
            design[(i, family.modes + l)] = a.sin();
        }
    }
    let pinv = design
        .pseudo_inverse(1e-10)
        .map_err(|e| Error::Domain(format!("sensor design matrix pseudoinverse: {e}")))?;
    let n = m + 1;
    let mut y_axis = vec![0.0; n];
    y_axis[n - 1] = 1.0;
    let s = family.bound * 1.05;
    let mut planes = Vec::with_capacity(p);
    for j in 0..p {
        let mut axis = vec![0.0; n];
        for i in 0..m {
            axis[i] = pinv[(j, i)];
        }
        planes.push(RidgePlane {
            axes: [axis, y_axis.clone()],
            ranges: [(-s, s), (0.0, 1.0)],
        });
    }
    Ok(planes)
}

/// Equispaced-interior sensors x_j = j/(m+1).
pub fn sample_device(m: usize) -> Vec<f64> {
    (1..=m).map(|j| j as f64 / (m + 1) as f64).collect()
}

/// Ground-truth operators with closed-form evaluation on Fourier inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReferenceOperator {
    Zero,
    Antiderivative,
    PointwiseSquare,
}

impl ReferenceOperator {
    pub fn apply(&self, u: &FourierFn, y: f64) -> f64 {
        match self {
            ReferenceOperator::Zero => 0.0,
            ReferenceOperator::Antiderivative => u.antiderivative(y),
            ReferenceOperator::PointwiseSquare => {
                let v = u.eval(y);
                v * v
            }
        }
    }
}

/// Four-layer branch-trunk operator net:
/// (u(x_1..x_m), y) -> sum_k [sum_i c_i^k sigma(xi_i^k . u + theta_i^k)] sigma(omega_k . y + zeta_k).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChenChenOperatorNet {
    /// N branches.
    pub branches: usize,
    /// M inner neurons per branch.
    pub inner: usize,
    pub sensors: Vec<f64>,
    /// c[k][i]
    pub c: Vec<Vec<f64>>,
    /// xi[k][i][j]
    pub xi: Vec<Vec<Vec<f64>>>,
    /// theta[k][i]
    pub theta: Vec<Vec<f64>>,
    /// omega[k] (y is scalar at desk scale, but kept as a vector)
    pub omega: Vec<Vec<f64>>,
    pub zeta: Vec<f64>,
    pub sigma: ActivationSpec,
    pub achieved_error: f64,
}

impl ChenChenOperatorNet {
    pub fn sensor_count(&self) -> usize {
        self.sensors.len()
    }

    pub fn y_dim(&self) -> usize {
        self.omega.first().map(|o| o.len()).unwrap_or(1)
    }

    pub fn validate(&self) -> Result<()> {
        let (nn, mm, m) = (self.branches, self.inner, self.sensor_count());
        let shapes_ok = self.c.len() == nn
            && self.xi.len() == nn
            && self.theta.len() == nn
            && self.omega.len() == nn
            && self.zeta.len() == nn
            && self.c.iter().all(|v| v.len() == mm)
            && self.theta.iter().all(|v| v.len() == mm)
            && self
                .xi
                .iter()
                .all(|b| b.len() == mm && b.iter().all(|r| r.len() == m));
        if !shapes_ok {
            return Err(Error::DimensionMismatch(
                "branch-trunk parameter shapes are inconsistent".into(),
            ));
        }
        self.sigma.validate()
    }

    /// Branch value sum_i c_i^k sigma(xi_i^k . u + theta_i^k) for branch k.
    pub fn branch(&self, k: usize, u: &[f64]) -> f64 {
        let mut q = 0.0;
        for i in 0..self.inner {
            let z: f64 = self.theta[k][i]
                + self.xi[k][i].iter().zip(u).map(|(a, b)| a * b).sum::<f64>();
            q += self.c[k][i] * self.sigma.eval(z);
        }
        q
    }

    /// Trunk value sigma(omega_k . y + zeta_k).
    pub fn trunk(&self, k: usize, y: &[f64]) -> f64 {
        let z: f64 = self.zeta[k] + self.omega[k].iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
        self.sigma.eval(z)
    }

    pub fn eval(&self, u: &[f64], y: &[f64]) -> Result<f64> {
        if u.len() != self.sensor_count() || y.len() != self.y_dim() {
            return Err(Error::DimensionMismatch(format!(
                "operator net expects {} sensor values and {} trunk inputs, got {} and {}",
                self.sensor_count(),
                self.y_dim(),
                u.len(),
                y.len()
            )));
        }
        Ok((0..self.branches)
            .map(|k| self.branch(k, u) * self.trunk(k, y))
            .sum())
    }

    /// Hidden widths of the four-layer structural form: (M N, 2 N, N)
    /// branch-inner / (r, q) pairs / multiplication neurons, carries aside.
    pub fn stage_widths(&self) -> (usize, usize, usize) {
        (self.inner * self.branches, 2 * self.branches, self.branches)
    }

    /// Export as a generic Network with the multiplications realized by
    /// explicit width-3 gadgets (smooth sigma only). Evaluation agrees with
    /// `eval` within the gadget tolerance times the branch magnitudes.
    pub fn to_network(&self, delta: f64) -> Result<Network> {
        self.validate()?;
        let (mn, _, nb) = self.stage_widths();
        let m = self.sensor_count();
        let yd = self.y_dim();
        let id = ActivationSpec::identity;
        // instrument (r, q) ranges crudely from parameter magnitudes
        let qmax = (0..self.branches)
            .map(|k| {
                self.c[k]
                    .iter()
                    .map(|c| c.abs())
                    .sum::<f64>()
                    * (1.0 + self.sigma.eval(8.0).abs())
            })
            .fold(1.0f64, f64::max);
        let probe = gadgets::mult_gadget(&self.sigma, (-qmax, qmax), (-qmax, qmax), delta)?;
        let mult = &probe.net;
        // layer 1: all M N branch-inner neurons + y carries
        let mut rows1 = Vec::with_capacity(mn + yd);
        let mut b1 = Vec::with_capacity(mn + yd);
        let mut a1 = Vec::with_capacity(mn + yd);
        for k in 0..self.branches {
            for i in 0..self.inner {
                let mut row = vec![0.0; m + yd];
                row[..m].copy_from_slice(&self.xi[k][i]);
                rows1.push(row);
                b1.push(self.theta[k][i]);
                a1.push(self.sigma.clone());
            }
        }
        for d in 0..yd {
            let mut row = vec![0.0; m + yd];
            row[m + d] = 1.0;
            rows1.push(row);
            b1.push(0.0);
            a1.push(id());
        }
        // layer 2: r^k = sum_i c_i^k p_i^k (identity), q^k = sigma(omega_k y + zeta_k)
        let mut rows2 = Vec::with_capacity(2 * nb);
        let mut b2 = Vec::with_capacity(2 * nb);
        let mut a2 = Vec::with_capacity(2 * nb);
        for k in 0..self.branches {
            let mut row = vec![0.0; mn + yd];
            row[k * self.inner..(k + 1) * self.inner].copy_from_slice(&self.c[k]);
            rows2.push(row);
            b2.push(0.0);
            a2.push(id());
            let mut row = vec![0.0; mn + yd];
            row[mn..].copy_from_slice(&self.omega[k]);
            rows2.push(row);
            b2.push(self.zeta[k]);
            a2.push(self.sigma.clone());
        }
        let mut layers = vec![
            Layer::from_rows(rows1, b1, a1),
            Layer::from_rows(rows2, b2, a2),
        ];
        // multiplication stage: run the width-3 gadget for each branch in
        // parallel slots, then sum the gadget outputs in the output layer
        for (li, g) in mult.layers.iter().enumerate() {
            let gin = g.in_dim;
            let gout = g.out_dim;
            let in_dim = if li == 0 { 2 * nb } else { gin * nb };
            let mut rows = Vec::with_capacity(gout * nb);
            let mut biases = Vec::with_capacity(gout * nb);
            let mut acts = Vec::with_capacity(gout * nb);
            for k in 0..nb {
                for r in 0..gout {
                    let mut row = vec![0.0; in_dim];
                    let src = g.row(r);
                    let off = if li == 0 { 2 * k } else { gin * k };
                    row[off..off + gin].copy_from_slice(src);
                    rows.push(row);
                    biases.push(g.biases[r]);
                    acts.push(g.activations[r].clone());
                }
            }
            layers.push(Layer::from_rows(rows, biases, acts));
        }
        // final summation
        let last = layers.last().unwrap().out_dim;
        layers.push(Layer::from_rows(
            vec![vec![1.0; last]],
            vec![0.0],
            vec![id()],
        ));
        let net = Network::new(m + yd, layers);
        net.validate()?;
        Ok(net)
    }
}

/// Random-feature + least-squares fit of a reference operator: branch and
/// trunk parameters are seeded random ridges, the outer coefficients c are a
/// single linear least-squares solve over sampled (u, y) pairs.
pub struct ChenChenFitConfig {
    pub train_functions: usize,
    pub y_grid: usize,
    pub report_functions: usize,
    pub report_y_grid: usize,
}

impl Default for ChenChenFitConfig {
    fn default() -> Self {
        ChenChenFitConfig {
            train_functions: 400,
            y_grid: 65,
            report_functions: 100,
            report_y_grid: 65,
        }
    }
}

pub fn fit_chenchen(
    op: ReferenceOperator,
    family: &FunctionFamily,
    m: usize,
    inner: usize,
    branches: usize,
    sigma: &ActivationSpec,
    seed: u64,
    cfg: &ChenChenFitConfig,
) -> Result<ChenChenOperatorNet> {
    if m == 0 || inner == 0 || branches == 0 {
        return Err(Error::Domain("operator fit needs m, M, N >= 1".into()));
    }
    sigma.validate()?;
    let sensors = sample_device(m);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ubound = family.sup_bound();
    let udomain: Vec<(f64, f64)> = vec![(-ubound, ubound); m];

    // Branch ridges in antisymmetric pairs: sigma(z) - sigma(-z) is exactly
    // affine for softplus-like sigma, so least squares can recover linear
    // functionals of the sensor values without approximation error.
    let mut xi = Vec::with_capacity(branches);
    let mut theta = Vec::with_capacity(branches);
    for _ in 0..branches {
        let mut xk: Vec<Vec<f64>> = Vec::with_capacity(inner);
        let mut tk: Vec<f64> = Vec::with_capacity(inner);
        for i in 0..inner {
            if i % 2 == 1 {
                let d: Vec<f64> = xk[i - 1].iter().map(|v| -v).collect();
                let t = -tk[i - 1];
                xk.push(d);
                tk.push(t);
                continue;
            }
            let (mut d, _) = random_ridge(&mut rng, &udomain);
            // rescale sharpness to the sensor-value magnitude
            for v in &mut d {
                *v /= ubound;
            }
            let anchor = family.sample(&mut rng).at_sensors(&sensors);
            let t = -d.iter().zip(&anchor).map(|(a, b)| a * b).sum::<f64>();
            xk.push(d);
            tk.push(t);
        }
        xi.push(xk);
        theta.push(tk);
    }
    // Trunk neurons as sharp hinges with equispaced kinks: together they act
    // as a piecewise-linear basis in y shared across all branches.
    let mut omega = Vec::with_capacity(branches);
    let mut zeta = Vec::with_capacity(branches);
    for k in 0..branches {
        let knot = k as f64 / branches as f64;
        let sharp = if k % 2 == 0 { 48.0 } else { 80.0 };
        omega.push(vec![sharp]);
        zeta.push(-sharp * knot);
    }

    let mut proto = ChenChenOperatorNet {
        branches,
        inner,
        sensors: sensors.clone(),
        c: vec![vec![0.0; inner]; branches],
        xi,
        theta,
        omega,
        zeta,
        sigma: sigma.clone(),
        achieved_error: 0.0,
    };

    // training samples
    let train_u: Vec<FourierFn> = (0..cfg.train_functions).map(|_| family.sample(&mut rng)).collect();
    let ys = par::linspace(0.0, 1.0, cfg.y_grid);
    let rows = train_u.len() * ys.len();
    let cols = branches * inner;
    let mut phi = DMatrix::zeros(rows, cols);
    let mut rhs = DVector::zeros(rows);
    for (su, u) in train_u.iter().enumerate() {
        let uv = u.at_sensors(&sensors);
        // inner-feature values depend on u only
        let mut feats = vec![0.0; cols];
        for k in 0..branches {
            for i in 0..inner {
                let z: f64 = proto.theta[k][i]
                    + proto.xi[k][i].iter().zip(&uv).map(|(a, b)| a * b).sum::<f64>();
                feats[k * inner + i] = sigma.eval(z);
            }
        }
        for (sy, &y) in ys.iter().enumerate() {
            let row = su * ys.len() + sy;
            for k in 0..branches {
                let tk = proto.trunk(k, &[y]);
                for i in 0..inner {
                    phi[(row, k * inner + i)] = feats[k * inner + i] * tk;
                }
            }
            rhs[row] = op.apply(u, y);
        }
    }
    let coef = solve_least_squares(&phi, &rhs)?;
    for k in 0..branches {
        for i in 0..inner {
            proto.c[k][i] = coef[k * inner + i];
        }
    }

    // report sup error over fresh samples
    let report_u: Vec<FourierFn> = (0..cfg.report_functions).map(|_| family.sample(&mut rng)).collect();
    let ys = par::linspace(0.0, 1.0, cfg.report_y_grid);
    let pairs: Vec<(usize, f64)> = report_u
        .iter()
        .enumerate()
        .flat_map(|(i, _)| ys.iter().map(move |&y| (i, y)))
        .collect();
    let err = par::max_key(&pairs, |&(i, y)| {
        let u = &report_u[i];
        let got = proto.eval(&u.at_sensors(&sensors), &[y]).unwrap_or(f64::NAN);
        (got - op.apply(u, y)).abs()
    });
    proto.achieved_error = err;
    Ok(proto)
}
