//! Network file format: versioned JSON with bit-exact real serialization.
//!
//! Reals are written as C99 hex-float strings; on input, plain JSON numbers,
//! decimal strings and hex-float strings are all accepted.

use crate::activation::{ActivationKind, ActivationSpec};
use crate::encoder::TruncationFrontEnd;
use crate::error::{Error, Result};
use crate::net::{Layer, Network, RegisterLayout};
use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::fmt;
use std::path::Path;

pub const FORMAT_VERSION: u32 = 1;

/// Render a binary64 value as a C99 hex-float literal (round-trip exact).
pub fn f64_to_hex(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x < 0.0 { "-inf" } else { "inf" }.into();
    }
    let bits = x.to_bits();
    let sign = if bits >> 63 == 1 { "-" } else { "" };
    let exp = ((bits >> 52) & 0x7ff) as i64;
    let frac = bits & ((1u64 << 52) - 1);
    if exp == 0 && frac == 0 {
        return format!("{sign}0x0p+0");
    }
    let mut digits = format!("{frac:013x}");
    while digits.len() > 1 && digits.ends_with('0') {
        digits.pop();
    }
    if exp == 0 {
        format!("{sign}0x0.{digits}p-1022")
    } else if frac == 0 {
        format!("{sign}0x1p{:+}", exp - 1023)
    } else {
        format!("{sign}0x1.{digits}p{:+}", exp - 1023)
    }
}

fn ldexp(m: f64, e: i32) -> f64 {
    // two-step scaling keeps intermediate powers in normal range
    if (-1021..=1021).contains(&e) {
        m * 2f64.powi(e)
    } else if e > 0 {
        m * 2f64.powi(1021) * 2f64.powi(e - 1021)
    } else {
        m * 2f64.powi(-1021) * 2f64.powi(e + 1021)
    }
}

/// Parse a C99 hex-float literal.
pub fn hex_to_f64(s: &str) -> Result<f64> {
    let bad = || Error::Malformed(format!("bad hex-float literal: {s}"));
    let (sign, body) = match s.strip_prefix('-') {
        Some(rest) => (-1.0, rest),
        None => (1.0, s.strip_prefix('+').unwrap_or(s)),
    };
    let body = body
        .strip_prefix("0x")
        .or_else(|| body.strip_prefix("0X"))
        .ok_or_else(bad)?;
    let (mant_str, exp_str) = body
        .split_once(['p', 'P'])
        .ok_or_else(bad)?;
    let exp: i32 = exp_str.parse().map_err(|_| bad())?;
    let (int_str, frac_str) = match mant_str.split_once('.') {
        Some((a, b)) => (a, b),
        None => (mant_str, ""),
    };
    if int_str.is_empty() && frac_str.is_empty() {
        return Err(bad());
    }
    let mut mant: u64 = if int_str.is_empty() {
        0
    } else {
        u64::from_str_radix(int_str, 16).map_err(|_| bad())?
    };
    let mut shift: i32 = 0;
    for c in frac_str.chars() {
        let d = c.to_digit(16).ok_or_else(bad)? as u64;
        mant = mant.checked_mul(16).and_then(|m| m.checked_add(d)).ok_or_else(bad)?;
        shift += 4;
    }
    Ok(sign * ldexp(mant as f64, exp - shift))
}

/// A binary64 value with exact textual round-trip.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Real(pub f64);

impl Serialize for Real {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&f64_to_hex(self.0))
    }
}

impl<'de> Deserialize<'de> for Real {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct RealVisitor;
        impl Visitor<'_> for RealVisitor {
            type Value = Real;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a number, a decimal string, or a hex-float string")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Real, E> {
                Ok(Real(v))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Real, E> {
                Ok(Real(v as f64))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Real, E> {
                Ok(Real(v as f64))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Real, E> {
                let t = v.trim();
                if t.starts_with("0x")
                    || t.starts_with("0X")
                    || t.starts_with("-0x")
                    || t.starts_with("-0X")
                    || t.starts_with("+0x")
                {
                    hex_to_f64(t).map(Real).map_err(E::custom)
                } else {
                    t.parse::<f64>()
                        .map(Real)
                        .map_err(|_| E::custom(format!("bad real literal: {v}")))
                }
            }
        }
        d.deserialize_any(RealVisitor)
    }
}

fn wrap(v: &[f64]) -> Vec<Real> {
    v.iter().map(|&x| Real(x)).collect()
}

fn unwrap(v: Vec<Real>) -> Vec<f64> {
    v.into_iter().map(|r| r.0).collect()
}

#[derive(Serialize, Deserialize)]
struct TruncationDto {
    base: u32,
    kappa: u32,
    n: usize,
    scale: Vec<Real>,
    shift: Vec<Real>,
    #[serde(default = "one_register")]
    registers: u32,
}

fn one_register() -> u32 {
    1
}

#[derive(Serialize, Deserialize)]
struct ActivationDto {
    kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    coeffs: Option<Vec<Real>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    anchor: Option<Real>,
}

#[derive(Serialize, Deserialize)]
struct LayerDto {
    in_dim: usize,
    out_dim: usize,
    weights: Vec<Real>,
    biases: Vec<Real>,
    activations: Vec<ActivationDto>,
}

#[derive(Serialize, Deserialize)]
struct NetworkDto {
    version: u32,
    input_dim: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    truncation: Option<TruncationDto>,
    layers: Vec<LayerDto>,
    #[serde(skip_serializing_if = "Option::is_none")]
    register_layout: Option<RegisterLayout>,
}

fn activation_to_dto(a: &ActivationSpec) -> ActivationDto {
    let (kind, coeffs) = match &a.kind {
        ActivationKind::Identity => ("identity", None),
        ActivationKind::Relu => ("relu", None),
        ActivationKind::Softplus => ("softplus", None),
        ActivationKind::Sigmoid => ("sigmoid", None),
        ActivationKind::ShiftedTanh => ("shifted-tanh", None),
        ActivationKind::Exponential => ("exponential", None),
        ActivationKind::Polynomial { coeffs } => ("polynomial", Some(wrap(coeffs))),
    };
    ActivationDto {
        kind: kind.into(),
        coeffs,
        anchor: a.anchor.map(Real),
    }
}

fn activation_from_dto(d: ActivationDto) -> Result<ActivationSpec> {
    let kind = match d.kind.as_str() {
        "identity" => ActivationKind::Identity,
        "relu" => ActivationKind::Relu,
        "softplus" => ActivationKind::Softplus,
        "sigmoid" => ActivationKind::Sigmoid,
        "shifted-tanh" => ActivationKind::ShiftedTanh,
        "exponential" => ActivationKind::Exponential,
        "polynomial" => ActivationKind::Polynomial {
            coeffs: unwrap(d.coeffs.ok_or_else(|| {
                Error::Malformed("polynomial activation without coefficients".into())
            })?),
        },
        other => {
            return Err(Error::Malformed(format!("unknown activation kind: {other}")));
        }
    };
    let spec = ActivationSpec {
        kind,
        anchor: d.anchor.map(|r| r.0),
    };
    spec.validate()?;
    Ok(spec)
}

fn network_to_dto(net: &Network) -> NetworkDto {
    NetworkDto {
        version: FORMAT_VERSION,
        input_dim: net.input_dim,
        truncation: net.truncation.as_ref().map(|fe| TruncationDto {
            base: fe.base,
            kappa: fe.kappa,
            n: fe.n,
            scale: wrap(&fe.scale),
            shift: wrap(&fe.shift),
            registers: fe.registers,
        }),
        layers: net
            .layers
            .iter()
            .map(|l| LayerDto {
                in_dim: l.in_dim,
                out_dim: l.out_dim,
                weights: wrap(&l.weights),
                biases: wrap(&l.biases),
                activations: l.activations.iter().map(activation_to_dto).collect(),
            })
            .collect(),
        register_layout: net.register_layout.clone(),
    }
}

fn network_from_dto(dto: NetworkDto) -> Result<Network> {
    if dto.version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: dto.version,
            expected: FORMAT_VERSION,
        });
    }
    let mut layers = Vec::with_capacity(dto.layers.len());
    for l in dto.layers {
        let activations = l
            .activations
            .into_iter()
            .map(activation_from_dto)
            .collect::<Result<Vec<_>>>()?;
        layers.push(Layer {
            in_dim: l.in_dim,
            out_dim: l.out_dim,
            weights: unwrap(l.weights),
            biases: unwrap(l.biases),
            activations,
        });
    }
    let net = Network {
        input_dim: dto.input_dim,
        layers,
        truncation: dto.truncation.map(|t| TruncationFrontEnd {
            base: t.base,
            kappa: t.kappa,
            n: t.n,
            scale: unwrap(t.scale),
            shift: unwrap(t.shift),
            registers: t.registers,
        }),
        register_layout: dto.register_layout,
    };
    net.validate()?;
    Ok(net)
}

pub fn to_json_string(net: &Network) -> Result<String> {
    Ok(serde_json::to_string_pretty(&network_to_dto(net))?)
}

pub fn from_json_str(s: &str) -> Result<Network> {
    network_from_dto(serde_json::from_str(s)?)
}

pub fn save_network(net: &Network, path: &Path) -> Result<()> {
    std::fs::write(path, to_json_string(net)?)?;
    Ok(())
}

pub fn load_network(path: &Path) -> Result<Network> {
    from_json_str(&std::fs::read_to_string(path)?)
}
