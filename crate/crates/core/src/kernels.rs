//! Radial kernels expressed in the scaled squared distance `u = Σ Cᵢ²(xᵢ − x̄ᵢ)²`.
//!
//! Every kernel satisfies `φ(0) = 1` and is strictly decreasing on `u ≥ 0`.
//! The derivatives are taken with respect to `u`, so the same chain rule
//! serves scalar and per-dimension shape parameters alike.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    /// `e^{-u}`
    Gaussian,
    /// `1 / (1 + u)`
    InverseQuadratic,
    /// `1 / sqrt(1 + u)`
    InverseMultiquadric,
}

impl KernelKind {
    pub const ALL: [KernelKind; 3] = [
        KernelKind::Gaussian,
        KernelKind::InverseQuadratic,
        KernelKind::InverseMultiquadric,
    ];

    pub fn name(self) -> &'static str {
        match self {
            KernelKind::Gaussian => "gaussian",
            KernelKind::InverseQuadratic => "inverse_quadratic",
            KernelKind::InverseMultiquadric => "inverse_multiquadric",
        }
    }

    /// `[φ, φ', φ'']` at `u`, unchecked.
    #[inline(always)]
    pub(crate) fn eval2(self, u: f64) -> [f64; 3] {
        match self {
            KernelKind::Gaussian => Gaussian::d2(u),
            KernelKind::InverseQuadratic => InverseQuadratic::d2(u),
            KernelKind::InverseMultiquadric => InverseMultiquadric::d2(u),
        }
    }

    /// `[φ, φ', φ'', φ''']` at `u`, unchecked.
    #[inline(always)]
    pub(crate) fn eval3(self, u: f64) -> [f64; 4] {
        match self {
            KernelKind::Gaussian => Gaussian::d3(u),
            KernelKind::InverseQuadratic => InverseQuadratic::d3(u),
            KernelKind::InverseMultiquadric => InverseMultiquadric::d3(u),
        }
    }
}

/// A kernel known at compile time, for the blocked evaluation loops.
pub(crate) trait Rbf {
    fn d0(u: f64) -> f64;
    fn d2(u: f64) -> [f64; 3];
    fn d3(u: f64) -> [f64; 4];
}

pub(crate) struct Gaussian;
pub(crate) struct InverseQuadratic;
pub(crate) struct InverseMultiquadric;

impl Rbf for Gaussian {
    #[inline(always)]
    fn d0(u: f64) -> f64 {
        exp_neg(u)
    }

    #[inline(always)]
    fn d2(u: f64) -> [f64; 3] {
        let e = exp_neg(u);
        [e, -e, e]
    }

    #[inline(always)]
    fn d3(u: f64) -> [f64; 4] {
        let e = exp_neg(u);
        [e, -e, e, -e]
    }
}

impl Rbf for InverseQuadratic {
    #[inline(always)]
    fn d0(u: f64) -> f64 {
        1.0 / (1.0 + u)
    }

    #[inline(always)]
    fn d2(u: f64) -> [f64; 3] {
        let a = 1.0 / (1.0 + u);
        let a2 = a * a;
        [a, -a2, 2.0 * a2 * a]
    }

    #[inline(always)]
    fn d3(u: f64) -> [f64; 4] {
        let a = 1.0 / (1.0 + u);
        let a2 = a * a;
        [a, -a2, 2.0 * a2 * a, -6.0 * a2 * a2]
    }
}

impl Rbf for InverseMultiquadric {
    #[inline(always)]
    fn d0(u: f64) -> f64 {
        (1.0 / (1.0 + u)).sqrt()
    }

    #[inline(always)]
    fn d2(u: f64) -> [f64; 3] {
        let a = 1.0 / (1.0 + u);
        let s = a.sqrt();
        [s, -0.5 * a * s, 0.75 * a * a * s]
    }

    #[inline(always)]
    fn d3(u: f64) -> [f64; 4] {
        let a = 1.0 / (1.0 + u);
        let s = a.sqrt();
        let a2 = a * a;
        [s, -0.5 * a * s, 0.75 * a2 * s, -1.875 * a2 * a * s]
    }
}

/// `e^{-u}` for `u ≥ 0` without branches, so lane loops vectorize.
///
/// Cody-Waite reduction `-u = k ln2 + r`, `|r| ≤ ln2/2`, then a degree-13
/// Taylor polynomial. Results that would be subnormal (`u > 708`) flush to 0.
#[inline(always)]
pub(crate) fn exp_neg(u: f64) -> f64 {
    const LOG2E: f64 = std::f64::consts::LOG2_E;
    const LN2_HI: f64 = f64::from_bits(0x3fe6_2e42_fee0_0000);
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
    // adding 1.5·2^52 rounds to an integer held in the low mantissa bits
    const SHIFT: f64 = 6_755_399_441_055_744.0;
    const CUT: f64 = 708.0;
    let x = -u.min(CUT);
    let shifted = x * LOG2E + SHIFT;
    let k = shifted - SHIFT;
    let r = (x - k * LN2_HI) - k * LN2_LO;
    let mut p = 1.0 / 6_227_020_800.0;
    p = p * r + 1.0 / 479_001_600.0;
    p = p * r + 1.0 / 39_916_800.0;
    p = p * r + 1.0 / 3_628_800.0;
    p = p * r + 1.0 / 362_880.0;
    p = p * r + 1.0 / 40_320.0;
    p = p * r + 1.0 / 5_040.0;
    p = p * r + 1.0 / 720.0;
    p = p * r + 1.0 / 120.0;
    p = p * r + 1.0 / 24.0;
    p = p * r + 1.0 / 6.0;
    p = p * r + 0.5;
    p = p * r + 1.0;
    p = p * r + 1.0;
    // low mantissa bits of `shifted` hold k; move them into the exponent
    let scale = f64::from_bits(shifted.to_bits().wrapping_add(1023u64.wrapping_sub(SHIFT.to_bits() & 0xfff_ffff_ffff_f)) << 52);
    let keep = f64::from_bits(((u <= CUT) as u64).wrapping_neg() & 0x3ff0_0000_0000_0000);
    p * scale * keep
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(KernelKind::Gaussian),
            "inverse_quadratic" => Ok(KernelKind::InverseQuadratic),
            "inverse_multiquadric" => Ok(KernelKind::InverseMultiquadric),
            other => Err(Error::InvalidConfig(format!(
                "kernel: unknown kernel `{other}` (expected gaussian, inverse_quadratic or inverse_multiquadric)"
            ))),
        }
    }
}

fn check_u(u: f64) -> Result<()> {
    if !u.is_finite() || u < 0.0 {
        return Err(Error::Domain(format!(
            "kernel argument must be finite and non-negative, got {u}"
        )));
    }
    Ok(())
}

pub fn kernel_value(kind: KernelKind, u: f64) -> Result<f64> {
    check_u(u)?;
    Ok(kind.eval2(u)[0])
}

pub fn kernel_d1(kind: KernelKind, u: f64) -> Result<f64> {
    check_u(u)?;
    Ok(kind.eval2(u)[1])
}

pub fn kernel_d2(kind: KernelKind, u: f64) -> Result<f64> {
    check_u(u)?;
    Ok(kind.eval2(u)[2])
}

/// Third derivative; enters the parameter gradient of the PDE residual.
pub fn kernel_d3(kind: KernelKind, u: f64) -> Result<f64> {
    check_u(u)?;
    Ok(kind.eval3(u)[3])
}
