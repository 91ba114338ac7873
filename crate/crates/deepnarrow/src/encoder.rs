//! Input truncation, single-register digit-block encoding, exact decoder
//! oracles and their continuous piecewise-linear extensions.

use crate::error::{Error, Result};
use crate::pl::{rat_int, PiecewiseLinear, Rat};
use num_bigint::BigInt;
use serde::{Deserialize, Serialize};
use std::fmt;

/// Largest exactly representable integer budget in binary64.
const MANTISSA_BITS: u32 = 52;

/// Cap on explicitly materialized decoder plateaus. Larger grids are decoded
/// exactly by `decode_oracle`; the full piecewise-linear extension is only
/// needed at desk scale.
const MAX_PLATEAUS: u128 = 1 << 21;

fn pow_u128(base: u128, exp: u32) -> Option<u128> {
    let mut acc: u128 = 1;
    for _ in 0..exp {
        acc = acc.checked_mul(base)?;
    }
    Some(acc)
}

/// Truncation front-end: per input, an affine map into (0,1) followed by the
/// digit truncation x -> floor(base^kappa * x).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncationFrontEnd {
    pub base: u32,
    pub kappa: u32,
    pub n: usize,
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
    /// Number of packing registers the digit blocks are split across.
    /// Inputs are partitioned contiguously and as evenly as possible; the
    /// exactness budget applies per register rather than to the whole tuple.
    #[serde(default = "default_registers")]
    pub registers: u32,
}

fn default_registers() -> u32 {
    1
}

impl TruncationFrontEnd {
    /// Front-end for inputs already lying strictly inside (0,1)^n.
    pub fn unit(base: u32, kappa: u32, n: usize) -> Self {
        TruncationFrontEnd {
            base,
            kappa,
            n,
            scale: vec![1.0; n],
            shift: vec![0.0; n],
            registers: 1,
        }
    }

    /// Front-end mapping the box with per-axis bounds `(lo, hi)` strictly into
    /// (0,1)^n with a small safety margin.
    pub fn for_box(base: u32, kappa: u32, bounds: &[(f64, f64)]) -> Result<Self> {
        Self::for_box_registers(base, kappa, bounds, 1)
    }

    /// `for_box` with the digit blocks split across `registers` packing
    /// registers, validated under the per-register exactness budget.
    pub fn for_box_registers(
        base: u32,
        kappa: u32,
        bounds: &[(f64, f64)],
        registers: u32,
    ) -> Result<Self> {
        let n = bounds.len();
        let mut scale = Vec::with_capacity(n);
        let mut shift = Vec::with_capacity(n);
        for &(lo, hi) in bounds {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::Domain(format!("bad box axis [{lo}, {hi}]")));
            }
            // map [lo, hi] onto [margin, 1 - margin]
            let margin = 1.0 / 64.0;
            let s = (1.0 - 2.0 * margin) / (hi - lo);
            scale.push(s);
            shift.push(margin - s * lo);
        }
        let fe = TruncationFrontEnd {
            base,
            kappa,
            n,
            scale,
            shift,
            registers,
        };
        fe.validate()?;
        Ok(fe)
    }

    /// The same front end with the digit blocks split across `registers`
    /// packing registers (contiguous, balanced partition of the inputs).
    pub fn with_registers(mut self, registers: u32) -> Result<Self> {
        self.registers = registers;
        self.validate()?;
        Ok(self)
    }

    /// Sizes of the contiguous input groups, one per register. The first
    /// `n % registers` groups take the extra input.
    pub fn group_sizes(&self) -> Vec<usize> {
        let g = (self.registers.max(1)) as usize;
        let q = self.n / g;
        let r = self.n % g;
        (0..g).map(|i| q + usize::from(i < r)).collect()
    }

    pub fn block_count(&self) -> u32 {
        self.n as u32 * self.kappa
    }

    /// base^kappa, exact.
    pub fn block_modulus(&self) -> u128 {
        pow_u128(self.base as u128, self.kappa).expect("validated front-end")
    }

    /// base^{n*kappa}, exact.
    pub fn grid_size(&self) -> u128 {
        pow_u128(self.base as u128, self.block_count()).expect("validated front-end")
    }

    pub fn validate(&self) -> Result<()> {
        if self.base != 2 && self.base != 10 {
            return Err(Error::EncodingInfeasible(format!(
                "base must be 2 or 10, got {}",
                self.base
            )));
        }
        if self.kappa == 0 || self.n == 0 {
            return Err(Error::EncodingInfeasible(
                "kappa and n must be positive".into(),
            ));
        }
        if self.registers == 0 || self.registers as usize > self.n {
            return Err(Error::EncodingInfeasible(format!(
                "register count {} outside 1..={}",
                self.registers, self.n
            )));
        }
        let widest = *self.group_sizes().iter().max().expect("registers >= 1") as u32;
        let total = pow_u128(self.base as u128, widest * self.kappa)
            .filter(|&g| g <= 1u128 << MANTISSA_BITS)
            .ok_or_else(|| {
                Error::EncodingInfeasible(format!(
                    "per-register digits {}^{} exceed the 52-bit exactness budget",
                    self.base,
                    widest * self.kappa
                ))
            })?;
        debug_assert!(total >= 1);
        if self.scale.len() != self.n || self.shift.len() != self.n {
            return Err(Error::EncodingInfeasible(format!(
                "scale/shift length {}/{} != n = {}",
                self.scale.len(),
                self.shift.len(),
                self.n
            )));
        }
        if self
            .scale
            .iter()
            .chain(self.shift.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::EncodingInfeasible(
                "nonfinite scale/shift entry".into(),
            ));
        }
        if self.scale.iter().any(|&s| s == 0.0) {
            return Err(Error::EncodingInfeasible("zero scale entry".into()));
        }
        Ok(())
    }

    fn mapped(&self, j: usize, x: f64) -> Result<f64> {
        let y = self.scale[j] * x + self.shift[j];
        if !(y > 0.0 && y < 1.0) {
            return Err(Error::Domain(format!(
                "input {x} maps to {y} outside the open unit interval (axis {j})"
            )));
        }
        Ok(y)
    }

    /// Truncate one already-mapped coordinate: floor(base^kappa * y).
    pub fn truncate(&self, y: f64) -> Result<u64> {
        if !(y > 0.0 && y < 1.0) {
            return Err(Error::Domain(format!(
                "truncation argument {y} outside the open unit interval"
            )));
        }
        let m = self.block_modulus() as f64;
        let t = (m * y).floor();
        Ok(t as u64)
    }

    /// Truncated integer values of all inputs, as exactly representable floats.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n {
            return Err(Error::DimensionMismatch(format!(
                "front-end expects {} inputs, got {}",
                self.n,
                x.len()
            )));
        }
        let mut out = Vec::with_capacity(self.n);
        for (j, &v) in x.iter().enumerate() {
            let y = self.mapped(j, v)?;
            out.push(self.truncate(y)? as f64);
        }
        Ok(out)
    }
}

/// The packed register value `r` with its exact integer side channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoding {
    pub r: f64,
    pub r_exact: u64,
    pub params: TruncationFrontEnd,
}

impl fmt::Display for Encoding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{{base: {}, kappa: {}, n: {}, r_exact: {}, r: {}}}",
            self.params.base,
            self.params.kappa,
            self.params.n,
            self.r_exact,
            crate::json::f64_to_hex(self.r)
        )
    }
}

/// Pack all truncated inputs into the single register value
/// r = sum_j base^{-j*kappa} * trunc(x_j), computed exactly.
pub fn encode(x: &[f64], fe: &TruncationFrontEnd) -> Result<Encoding> {
    fe.validate()?;
    if fe.registers != 1 {
        return Err(Error::EncodingInfeasible(format!(
            "packing into a single value needs a one-register front end, this one has {}",
            fe.registers
        )));
    }
    let digits = fe.apply(x)?;
    let m = fe.block_modulus();
    let mut r_exact: u128 = 0;
    for &d in &digits {
        r_exact = r_exact * m + d as u128;
    }
    let total = fe.grid_size();
    // r_exact < 2^52 and total <= 2^52, so the quotient is one correctly
    // rounded division of exactly representable integers.
    let r = r_exact as f64 / total as f64;
    Ok(Encoding {
        r,
        r_exact: r_exact as u64,
        params: fe.clone(),
    })
}

/// Exact digit-block extraction: base^{-kappa} * (j-th block of r_exact),
/// for 1-based j.
pub fn decode_oracle(e: &Encoding, j: usize) -> Result<f64> {
    let fe = &e.params;
    if j == 0 || j > fe.n {
        return Err(Error::IndexOutOfRange(format!(
            "decoder index {j} outside 1..={}",
            fe.n
        )));
    }
    let m = fe.block_modulus();
    let below = pow_u128(m, (fe.n - j) as u32).expect("validated front-end");
    let block = (e.r_exact as u128 / below) % m;
    Ok(block as f64 / m as f64)
}

/// The continuous plateau-and-ramp extension of the j-th decoder to [0,1]:
/// constant plateaus of half-width base^{-n*kappa-1} centered at every grid
/// value, linear ramps in between, exact rational breakpoints.
pub fn decoder_grid_spec(j: usize, fe: &TruncationFrontEnd) -> Result<PiecewiseLinear> {
    fe.validate()?;
    if j == 0 || j > fe.n {
        return Err(Error::IndexOutOfRange(format!(
            "decoder index {j} outside 1..={}",
            fe.n
        )));
    }
    let grid = fe.grid_size();
    if grid > MAX_PLATEAUS {
        return Err(Error::Domain(format!(
            "decoder grid has {grid} plateaus, beyond the materialization cap"
        )));
    }
    let grid = grid as i64;
    let m = fe.block_modulus() as i64;
    let below = pow_u128(fe.block_modulus(), (fe.n - j) as u32).unwrap() as i64;
    // Plateau half-width base^{-n*kappa-1}, except in base 2 where that
    // equals half the grid spacing: adjacent plateaus would touch and the
    // continuous extension would need a jump. Base 2 uses half of it,
    // base^{-n*kappa-2}, leaving ramps of half the spacing.
    let ramp_div = if fe.base == 2 { 4u32 } else { fe.base };
    let half = Rat::new(BigInt::from(1), BigInt::from(grid) * BigInt::from(ramp_div));
    let mut xs = Vec::with_capacity(2 * grid as usize + 2);
    let mut ys = Vec::with_capacity(2 * grid as usize + 2);
    for k in 0..grid {
        let center = Rat::new(BigInt::from(k), BigInt::from(grid));
        let value = Rat::new(BigInt::from((k / below) % m), BigInt::from(m));
        let left = if k == 0 { rat_int(0) } else { &center - &half };
        xs.push(left);
        ys.push(value.clone());
        xs.push(&center + &half);
        ys.push(value);
    }
    // extend the last plateau constantly to 1
    xs.push(rat_int(1));
    ys.push(ys.last().unwrap().clone());
    PiecewiseLinear::new(xs, ys)
}

/// Width-3 subnetwork (register + hinge + accumulator) realizing the j-th
/// decoder's plateau-and-ramp extension within `delta` at every plateau center.
pub fn build_decoder_subnet(
    j: usize,
    fe: &TruncationFrontEnd,
    sigma: &crate::activation::ActivationSpec,
    delta: f64,
) -> Result<crate::gadgets::Gadget> {
    let half_block = 0.5 / fe.block_modulus() as f64;
    if !(delta > 0.0 && delta < half_block) {
        return Err(Error::Domain(format!(
            "decoder tolerance {delta} must lie in (0, base^-kappa / 2 = {half_block})"
        )));
    }
    let spec = decoder_grid_spec(j, fe)?;
    crate::gadgets::approx_1d(&spec, sigma, delta)
}
