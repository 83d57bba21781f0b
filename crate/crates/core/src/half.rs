//! IEEE 754 binary16 words and the bit-exact arithmetic the datapath uses.
//!
//! Every finite binary16 product or sum is exactly representable in an
//! `f64` (11x11 significand bits for products, a 40-bit aligned window for
//! sums), so each operation is evaluated exactly in `f64` and rounded once
//! with round-to-nearest-even. The rounding step is done on raw bits here
//! rather than through the platform's conversion instructions.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::NumericsError;

/// A raw IEEE binary16 bit pattern (1 sign, 5 exponent, 10 mantissa bits).
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Fp16(pub u16);

/// How subnormal operands and results are treated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Subnormals {
    #[default]
    Preserve,
    /// Subnormal inputs and outputs become zero of the same sign.
    FlushToZero,
}

const SIGN_MASK: u16 = 0x8000;
const EXP_MASK: u16 = 0x7C00;
const MANT_MASK: u16 = 0x03FF;

impl Fp16 {
    pub const ZERO: Fp16 = Fp16(0x0000);
    pub const NEG_ZERO: Fp16 = Fp16(0x8000);
    pub const ONE: Fp16 = Fp16(0x3C00);
    pub const INFINITY: Fp16 = Fp16(0x7C00);
    pub const NEG_INFINITY: Fp16 = Fp16(0xFC00);
    /// The quiet NaN produced by arithmetic.
    pub const NAN: Fp16 = Fp16(0x7E00);
    pub const MAX: Fp16 = Fp16(0x7BFF);
    pub const MIN_POSITIVE_SUBNORMAL: Fp16 = Fp16(0x0001);
    pub const MIN_POSITIVE_NORMAL: Fp16 = Fp16(0x0400);
    pub const BITS: u32 = 16;

    #[inline]
    pub const fn from_bits(bits: u16) -> Self {
        Fp16(bits)
    }

    #[inline]
    pub const fn to_bits(self) -> u16 {
        self.0
    }

    #[inline]
    pub fn is_nan(self) -> bool {
        self.0 & EXP_MASK == EXP_MASK && self.0 & MANT_MASK != 0
    }

    #[inline]
    pub fn is_infinite(self) -> bool {
        self.0 & !SIGN_MASK == EXP_MASK
    }

    #[inline]
    pub fn is_finite(self) -> bool {
        self.0 & EXP_MASK != EXP_MASK
    }

    #[inline]
    pub fn is_zero(self) -> bool {
        self.0 & !SIGN_MASK == 0
    }

    #[inline]
    pub fn is_subnormal(self) -> bool {
        self.0 & EXP_MASK == 0 && self.0 & MANT_MASK != 0
    }

    #[inline]
    pub fn is_sign_negative(self) -> bool {
        self.0 & SIGN_MASK != 0
    }

    /// Biased exponent field (0..=31).
    #[inline]
    pub fn exponent_field(self) -> u16 {
        (self.0 & EXP_MASK) >> 10
    }

    #[inline]
    pub fn mantissa_field(self) -> u16 {
        self.0 & MANT_MASK
    }

    /// Exact decode. NaN payloads decode to an `f64` NaN.
    pub fn to_f64(self) -> f64 {
        let sign = ((self.0 & SIGN_MASK) as u64) << 48;
        let exp = self.exponent_field() as u64;
        let mant = self.mantissa_field() as u64;
        match exp {
            0 => {
                let m = mant as f64 / 16_777_216.0;
                if sign != 0 {
                    -m
                } else {
                    m
                }
            }
            31 if mant != 0 => f64::NAN,
            31 => f64::from_bits(sign | (0x7FFu64 << 52)),
            _ => f64::from_bits(sign | ((exp + 1023 - 15) << 52) | (mant << 42)),
        }
    }

    /// Round-to-nearest-even encoding of `x`. Overflow saturates to
    /// infinity and magnitudes below half the smallest subnormal become zero.
    pub fn from_f64(x: f64) -> Self {
        if x.is_nan() {
            return Fp16::NAN;
        }
        let sign: u16 = if x.is_sign_negative() { SIGN_MASK } else { 0 };
        let a = x.abs();
        if a.is_infinite() {
            return Fp16(sign | EXP_MASK);
        }
        let bits = a.to_bits();
        let biased = ((bits >> 52) & 0x7FF) as i32;
        if biased == 0 {
            // f64 zero or subnormal: far below 2^-25
            return Fp16(sign);
        }
        let e = biased - 1023;
        let sig: u64 = (bits & ((1u64 << 52) - 1)) | (1u64 << 52);
        // weight of the result's last mantissa bit
        let lsb_exp = if e >= -14 { e - 10 } else { -24 };
        let rshift = (lsb_exp - (e - 52)) as u32;
        if rshift >= 54 {
            return Fp16(sign);
        }
        let mut q = sig >> rshift;
        let rem = sig & ((1u64 << rshift) - 1);
        let half = 1u64 << (rshift - 1);
        if rem > half || (rem == half && q & 1 == 1) {
            q += 1;
        }
        if e < -14 {
            // subnormal; q == 1024 carries into the smallest normal
            return Fp16(sign | q as u16);
        }
        let mut biased16 = e + 15;
        if q >= 2048 {
            q >>= 1;
            biased16 += 1;
        }
        if biased16 >= 31 {
            return Fp16(sign | EXP_MASK);
        }
        Fp16(sign | ((biased16 as u16) << 10) | (q as u16 & MANT_MASK))
    }

    #[inline]
    pub fn from_f32(x: f32) -> Self {
        Self::from_f64(x as f64)
    }

    #[inline]
    pub fn neg(self) -> Self {
        Fp16(self.0 ^ SIGN_MASK)
    }

    #[inline]
    pub fn abs(self) -> Self {
        Fp16(self.0 & !SIGN_MASK)
    }

    fn flush(self, mode: Subnormals) -> Self {
        match mode {
            Subnormals::FlushToZero if self.is_subnormal() => Fp16(self.0 & SIGN_MASK),
            _ => self,
        }
    }

    pub fn add_with(self, rhs: Fp16, mode: Subnormals) -> Fp16 {
        let (a, b) = (self.flush(mode), rhs.flush(mode));
        if a.is_nan() || b.is_nan() {
            return Fp16::NAN;
        }
        Fp16::from_f64(a.to_f64() + b.to_f64()).flush(mode)
    }

    pub fn mul_with(self, rhs: Fp16, mode: Subnormals) -> Fp16 {
        let (a, b) = (self.flush(mode), rhs.flush(mode));
        if a.is_nan() || b.is_nan() {
            return Fp16::NAN;
        }
        Fp16::from_f64(a.to_f64() * b.to_f64()).flush(mode)
    }

    #[inline]
    pub fn add(self, rhs: Fp16) -> Fp16 {
        self.add_with(rhs, Subnormals::Preserve)
    }

    #[inline]
    pub fn mul(self, rhs: Fp16) -> Fp16 {
        self.mul_with(rhs, Subnormals::Preserve)
    }

    /// Inverts exactly one bit. Positions above 15 are rejected.
    pub fn flip_bit(self, pos: u32) -> Result<Fp16, NumericsError> {
        if pos >= Self::BITS {
            return Err(NumericsError::BitPosition(pos));
        }
        Ok(Fp16(self.0 ^ (1u16 << pos)))
    }

    /// `decode(flip_bit(w, pos)) - decode(w)`, or `None` when either side
    /// is NaN.
    pub fn value_delta(self, pos: u32) -> Result<Option<f64>, NumericsError> {
        let flipped = self.flip_bit(pos)?;
        if self.is_nan() || flipped.is_nan() {
            return Ok(None);
        }
        let (before, after) = (self.to_f64(), flipped.to_f64());
        if before.is_infinite() && after.is_infinite() {
            // only the sign flipped; the difference is not a real number
            return Ok(None);
        }
        Ok(Some(after - before))
    }
}

impl fmt::Debug for Fp16 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fp16({:#06x} = {})", self.0, self.to_f64())
    }
}

impl fmt::Display for Fp16 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_f64())
    }
}

impl From<Fp16> for f64 {
    fn from(w: Fp16) -> f64 {
        w.to_f64()
    }
}

pub fn fp16_from_real(x: f64) -> Fp16 {
    Fp16::from_f64(x)
}

pub fn fp16_add(a: Fp16, b: Fp16) -> Fp16 {
    a.add(b)
}

pub fn fp16_mul(a: Fp16, b: Fp16) -> Fp16 {
    a.mul(b)
}

pub fn flip_bit(w: Fp16, pos: u32) -> Result<Fp16, NumericsError> {
    w.flip_bit(pos)
}

pub fn fp16_value_delta(w: Fp16, pos: u32) -> Result<Option<f64>, NumericsError> {
    w.value_delta(pos)
}

/// Quantize a slice of reals.
pub fn quantize(xs: &[f64]) -> Vec<Fp16> {
    xs.iter().map(|&x| Fp16::from_f64(x)).collect()
}

pub fn dequantize(ws: &[Fp16]) -> Vec<f64> {
    ws.iter().map(|w| w.to_f64()).collect()
}
