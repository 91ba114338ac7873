//! Exact piecewise-linear calculus over rationals: evaluation, affine
//! combination, relu clipping, piece counting and exact L1 integration.

use crate::error::{Error, Result};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive, Zero};

pub type Rat = BigRational;

pub fn rat(n: i64, d: i64) -> Rat {
    Rat::new(BigInt::from(n), BigInt::from(d))
}

pub fn rat_int(n: i64) -> Rat {
    Rat::from_integer(BigInt::from(n))
}

/// Exact conversion; every finite f64 is a dyadic rational.
pub fn rat_from_f64(x: f64) -> Result<Rat> {
    Rat::from_float(x).ok_or_else(|| Error::Domain(format!("cannot convert {x} to a rational")))
}

/// Continuous piecewise-linear function on `[xs[0], xs[last]]`, affine between
/// consecutive breakpoints. Canonical form: no collinear interior breakpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinear {
    pub xs: Vec<Rat>,
    pub ys: Vec<Rat>,
}

impl PiecewiseLinear {
    pub fn new(xs: Vec<Rat>, ys: Vec<Rat>) -> Result<Self> {
        if xs.len() != ys.len() || xs.len() < 2 {
            return Err(Error::Malformed(
                "piecewise-linear function needs matching xs/ys with at least two breakpoints"
                    .into(),
            ));
        }
        for w in xs.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::Malformed(
                    "piecewise-linear breakpoints must be strictly increasing".into(),
                ));
            }
        }
        let mut f = PiecewiseLinear { xs, ys };
        f.canonicalize();
        Ok(f)
    }

    pub fn constant(lo: Rat, hi: Rat, value: Rat) -> Result<Self> {
        Self::new(vec![lo, hi], vec![value.clone(), value])
    }

    /// The affine map `a + b*x` restricted to `[lo, hi]`.
    pub fn affine(lo: Rat, hi: Rat, a: Rat, b: Rat) -> Result<Self> {
        let y0 = &a + &b * &lo;
        let y1 = &a + &b * &hi;
        Self::new(vec![lo, hi], vec![y0, y1])
    }

    /// The tooth map: 2x on [0, 1/2], 2(1-x) on [1/2, 1].
    pub fn tooth() -> Self {
        PiecewiseLinear {
            xs: vec![rat_int(0), rat(1, 2), rat_int(1)],
            ys: vec![rat_int(0), rat_int(1), rat_int(0)],
        }
    }

    fn canonicalize(&mut self) {
        if self.xs.len() <= 2 {
            return;
        }
        let mut keep = vec![true; self.xs.len()];
        for i in 1..self.xs.len() - 1 {
            let dx0 = &self.xs[i] - &self.xs[i - 1];
            let dy0 = &self.ys[i] - &self.ys[i - 1];
            let dx1 = &self.xs[i + 1] - &self.xs[i];
            let dy1 = &self.ys[i + 1] - &self.ys[i];
            if dy0 * dx1 == dy1 * dx0 {
                keep[i] = false;
            }
        }
        // Collinear runs: removing interior points of a straight run is safe
        // in one pass because slope equality is transitive along the run.
        let mut xs = Vec::with_capacity(self.xs.len());
        let mut ys = Vec::with_capacity(self.ys.len());
        for i in 0..self.xs.len() {
            if keep[i] {
                xs.push(self.xs[i].clone());
                ys.push(self.ys[i].clone());
            }
        }
        self.xs = xs;
        self.ys = ys;
    }

    pub fn domain(&self) -> (&Rat, &Rat) {
        (self.xs.first().unwrap(), self.xs.last().unwrap())
    }

    /// Number of maximal affine segments (canonical form).
    pub fn pieces(&self) -> usize {
        self.xs.len() - 1
    }

    pub fn eval(&self, x: &Rat) -> Result<Rat> {
        let (lo, hi) = self.domain();
        if x < lo || x > hi {
            return Err(Error::Domain(format!(
                "argument outside piecewise-linear domain [{lo}, {hi}]"
            )));
        }
        let i = match self.xs.binary_search_by(|p| p.cmp(x)) {
            Ok(i) => return Ok(self.ys[i].clone()),
            Err(i) => i - 1,
        };
        let t = (x - &self.xs[i]) / (&self.xs[i + 1] - &self.xs[i]);
        Ok(&self.ys[i] + t * (&self.ys[i + 1] - &self.ys[i]))
    }

    pub fn eval_f64(&self, x: f64) -> Result<f64> {
        let v = self.eval(&rat_from_f64(x)?)?;
        v.to_f64()
            .ok_or_else(|| Error::Domain("rational does not fit in f64".into()))
    }

    /// Merged, sorted breakpoint set of several functions over a shared domain.
    fn merged_breakpoints(fns: &[&PiecewiseLinear]) -> Result<Vec<Rat>> {
        let (lo, hi) = fns[0].domain();
        for f in fns.iter().skip(1) {
            if f.domain() != (lo, hi) {
                return Err(Error::Domain(
                    "piecewise-linear functions have different domains".into(),
                ));
            }
        }
        let mut xs: Vec<Rat> = fns.iter().flat_map(|f| f.xs.iter().cloned()).collect();
        xs.sort();
        xs.dedup();
        Ok(xs)
    }

    /// `constant + sum coeff_i * f_i`, exact.
    pub fn affine_combination(terms: &[(Rat, &PiecewiseLinear)], constant: Rat) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::Malformed("empty affine combination".into()));
        }
        let fns: Vec<&PiecewiseLinear> = terms.iter().map(|(_, f)| *f).collect();
        let xs = Self::merged_breakpoints(&fns)?;
        let mut ys = Vec::with_capacity(xs.len());
        for x in &xs {
            let mut acc = constant.clone();
            for (c, f) in terms {
                acc += c * f.eval(x)?;
            }
            ys.push(acc);
        }
        Self::new(xs, ys)
    }

    /// Pointwise max(f, 0), with breakpoints inserted at zero crossings.
    pub fn relu(&self) -> Self {
        let zero = Rat::zero();
        let mut xs = Vec::with_capacity(self.xs.len() + 4);
        let mut ys = Vec::with_capacity(self.ys.len() + 4);
        for i in 0..self.xs.len() {
            if i > 0 {
                let (y0, y1) = (&self.ys[i - 1], &self.ys[i]);
                if (y0 < &zero && y1 > &zero) || (y0 > &zero && y1 < &zero) {
                    // crossing strictly inside the segment
                    let t = -y0 / (y1 - y0);
                    let x = &self.xs[i - 1] + t * (&self.xs[i] - &self.xs[i - 1]);
                    xs.push(x);
                    ys.push(zero.clone());
                }
            }
            xs.push(self.xs[i].clone());
            ys.push(if self.ys[i] < zero {
                zero.clone()
            } else {
                self.ys[i].clone()
            });
        }
        let mut f = PiecewiseLinear { xs, ys };
        f.canonicalize();
        f
    }

    /// Exact integral of |f - g| over the shared domain.
    pub fn l1_distance(&self, other: &PiecewiseLinear) -> Result<Rat> {
        let xs = Self::merged_breakpoints(&[self, other])?;
        let mut total = Rat::zero();
        let mut prev_x = xs[0].clone();
        let mut prev_d = self.eval(&prev_x)? - other.eval(&prev_x)?;
        for x in xs.iter().skip(1) {
            let d = self.eval(x)? - other.eval(x)?;
            let w = x - &prev_x;
            let opposite = (prev_d.is_negative() && d.is_positive())
                || (prev_d.is_positive() && d.is_negative());
            if opposite {
                // split at the sign crossing: two triangles
                let a0 = prev_d.abs();
                let a1 = d.abs();
                total += &w * (&a0 * &a0 + &a1 * &a1) / (Rat::from_integer(BigInt::from(2)) * (a0 + a1));
            } else {
                total += &w * (prev_d.abs() + d.abs()) / Rat::from_integer(BigInt::from(2));
            }
            prev_x = x.clone();
            prev_d = d;
        }
        Ok(total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tooth_values() {
        let t = PiecewiseLinear::tooth();
        assert_eq!(t.eval(&rat_int(0)).unwrap(), rat_int(0));
        assert_eq!(t.eval(&rat(1, 2)).unwrap(), rat_int(1));
        assert_eq!(t.eval(&rat_int(1)).unwrap(), rat_int(0));
        assert_eq!(t.eval(&rat(1, 4)).unwrap(), rat(1, 2));
        assert_eq!(t.pieces(), 2);
    }

    #[test]
    fn canonical_removes_collinear() {
        let f = PiecewiseLinear::new(
            vec![rat_int(0), rat(1, 2), rat_int(1)],
            vec![rat_int(0), rat(1, 2), rat_int(1)],
        )
        .unwrap();
        assert_eq!(f.pieces(), 1);
    }

    #[test]
    fn relu_splits_crossings() {
        // f(x) = 2x - 1 on [0,1]: relu has a breakpoint at 1/2
        let f = PiecewiseLinear::affine(rat_int(0), rat_int(1), rat_int(-1), rat_int(2)).unwrap();
        let r = f.relu();
        assert_eq!(r.pieces(), 2);
        assert_eq!(r.eval(&rat(1, 4)).unwrap(), rat_int(0));
        assert_eq!(r.eval(&rat(3, 4)).unwrap(), rat(1, 2));
    }

    #[test]
    fn l1_triangle_vs_zero() {
        let t = PiecewiseLinear::tooth();
        let z = PiecewiseLinear::constant(rat_int(0), rat_int(1), rat_int(0)).unwrap();
        assert_eq!(t.l1_distance(&z).unwrap(), rat(1, 2));
    }

    #[test]
    fn l1_tooth_vs_half() {
        let t = PiecewiseLinear::tooth();
        let h = PiecewiseLinear::constant(rat_int(0), rat_int(1), rat(1, 2)).unwrap();
        assert_eq!(t.l1_distance(&h).unwrap(), rat(1, 4));
    }

    #[test]
    fn l1_self_is_zero() {
        let t = PiecewiseLinear::tooth();
        assert_eq!(t.l1_distance(&t).unwrap(), rat_int(0));
    }
}
