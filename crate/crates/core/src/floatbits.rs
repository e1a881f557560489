//! Bit-level view of IEEE-754 binary32 parameters and single-bit fault injection.
//!
//! Bit positions are numbered from the most significant end of the word:
//!
//! | index  | field                    |
//! |--------|--------------------------|
//! | 0      | sign                     |
//! | 1..=8  | exponent, MSB first      |
//! | 9..=31 | fraction, MSB first      |
//!
//! so index 1 is the "first exponent bit" and index 31 is the fraction LSB.
//! Decoding follows full binary32 semantics (zero, subnormal, infinities and
//! NaN are all representable) because an injected flip can produce any pattern.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const SIGN_MASK: u32 = 0x8000_0000;
const EXPONENT_MASK: u32 = 0x7F80_0000;
const FRACTION_MASK: u32 = 0x007F_FFFF;
const EXPONENT_BIAS: i32 = 127;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FloatBitsError {
    #[error("bit position {0} out of range 0..=31")]
    PositionOutOfRange(u32),
    #[error("exponent index {0} out of range 1..=8")]
    ExponentIndexOutOfRange(u8),
    #[error("flip factor not applicable: {0}")]
    NotApplicable(&'static str),
    #[error("bit average over an empty parameter set")]
    Empty,
    #[error("invalid bit position `{0}`")]
    Parse(String),
}

/// Raw 32-bit pattern of a float32 parameter.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BitWord32(pub u32);

impl BitWord32 {
    pub const fn from_raw(raw: u32) -> Self {
        Self(raw)
    }

    /// Reassembles a word from its three fields. Out-of-range field bits are masked off.
    pub const fn from_fields(sign: u32, exponent: u32, fraction: u32) -> Self {
        Self(((sign & 1) << 31) | ((exponent & 0xFF) << 23) | (fraction & FRACTION_MASK))
    }

    pub const fn raw(self) -> u32 {
        self.0
    }

    pub const fn sign(self) -> u32 {
        (self.0 & SIGN_MASK) >> 31
    }

    pub const fn exponent(self) -> u32 {
        (self.0 & EXPONENT_MASK) >> 23
    }

    pub const fn fraction(self) -> u32 {
        self.0 & FRACTION_MASK
    }

    pub fn bit(self, pos: BitPosition) -> bool {
        self.0 & pos.mask() != 0
    }

    /// Normal numbers: exponent field in 1..=254.
    pub const fn is_normal(self) -> bool {
        let e = self.exponent();
        e != 0 && e != 0xFF
    }
}

impl fmt::Debug for BitWord32 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitWord32({:#010x})", self.0)
    }
}

impl fmt::Display for BitWord32 {
    /// Grouped as `s eeeeeeee fffffffffffffffffffffff`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:01b} {:08b} {:023b}",
            self.sign(),
            self.exponent(),
            self.fraction()
        )
    }
}

/// Bit index in MSB-first order, see the module docs.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct BitPosition(u8);

impl BitPosition {
    pub const SIGN: BitPosition = BitPosition(0);
    pub const FRACTION_LSB: BitPosition = BitPosition(31);

    pub fn new(index: u32) -> Result<Self, FloatBitsError> {
        if index < 32 {
            Ok(Self(index as u8))
        } else {
            Err(FloatBitsError::PositionOutOfRange(index))
        }
    }

    /// The `i`-th exponent bit, `i` in 1..=8 with 1 the most significant.
    pub fn exponent(i: u8) -> Result<Self, FloatBitsError> {
        if (1..=8).contains(&i) {
            Ok(Self(i))
        } else {
            Err(FloatBitsError::ExponentIndexOutOfRange(i))
        }
    }

    pub const fn index(self) -> u8 {
        self.0
    }

    /// All 32 positions in ascending index order.
    pub fn all() -> impl Iterator<Item = BitPosition> {
        (0u8..32).map(BitPosition)
    }

    pub const fn is_sign(self) -> bool {
        self.0 == 0
    }

    pub const fn is_exponent(self) -> bool {
        self.0 >= 1 && self.0 <= 8
    }

    pub const fn is_fraction(self) -> bool {
        self.0 >= 9
    }

    /// Mask of this position in the machine word (LSB = machine bit 0).
    pub const fn mask(self) -> u32 {
        1u32 << (31 - self.0 as u32)
    }
}

impl TryFrom<u8> for BitPosition {
    type Error = FloatBitsError;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        BitPosition::new(v as u32)
    }
}

impl From<BitPosition> for u8 {
    fn from(p: BitPosition) -> u8 {
        p.0
    }
}

impl fmt::Debug for BitPosition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitPosition({})", self.0)
    }
}

impl fmt::Display for BitPosition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl FromStr for BitPosition {
    type Err = FloatBitsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let idx: u32 = s
            .trim()
            .parse()
            .map_err(|_| FloatBitsError::Parse(s.to_string()))?;
        BitPosition::new(idx)
    }
}

pub fn encode(value: f32) -> BitWord32 {
    BitWord32(value.to_bits())
}

/// Total decoding of any bit pattern. `f32::from_bits` preserves NaN payloads,
/// so `encode(decode(w)) == w` holds for every pattern including NaNs.
pub fn decode(bits: BitWord32) -> f32 {
    f32::from_bits(bits.0)
}

/// Reference decoding of a normal pattern straight from the field formula
/// `(-1)^sign * 2^(exponent-127) * (1 + fraction/2^23)`, evaluated in f64.
/// Returns `None` for zero, subnormal, infinite and NaN patterns.
pub fn decode_normal_formula(bits: BitWord32) -> Option<f64> {
    if !bits.is_normal() {
        return None;
    }
    let sign = if bits.sign() == 1 { -1.0 } else { 1.0 };
    let scale = 2f64.powi(bits.exponent() as i32 - EXPONENT_BIAS);
    let mantissa = 1.0 + bits.fraction() as f64 / (1u32 << 23) as f64;
    Some(sign * scale * mantissa)
}

pub fn flip_bit(bits: BitWord32, pos: BitPosition) -> BitWord32 {
    BitWord32(bits.0 ^ pos.mask())
}

/// Magnitude multiplier caused by a 0→1 flip of exponent bit `exp_index`
/// (1 = MSB). Adding `2^(8-i)` to the biased exponent scales the value by
/// `2^(2^(8-i))`, so index 1 gives `2^128` and index 8 gives `2`.
pub fn flip_factor(bits: BitWord32, exp_index: u8) -> Result<f64, FloatBitsError> {
    let pos = BitPosition::exponent(exp_index)?;
    if bits.bit(pos) {
        return Err(FloatBitsError::NotApplicable("exponent bit already set"));
    }
    if !bits.is_normal() {
        return Err(FloatBitsError::NotApplicable("value is not a normal number"));
    }
    let flipped = flip_bit(bits, pos);
    if flipped.exponent() == 0xFF {
        return Err(FloatBitsError::NotApplicable("flipped pattern is not finite"));
    }
    Ok(2f64.powi(1i32 << (8 - exp_index)))
}

/// Fraction of `params` whose bit at `pos` is set.
pub fn bit_average(params: &[f32], pos: BitPosition) -> Result<f64, FloatBitsError> {
    if params.is_empty() {
        return Err(FloatBitsError::Empty);
    }
    let ones = params.iter().filter(|v| encode(**v).bit(pos)).count();
    Ok(ones as f64 / params.len() as f64)
}

/// `bit_average` for all 32 positions at once.
pub fn bit_profile(params: &[f32]) -> Result<[f64; 32], FloatBitsError> {
    if params.is_empty() {
        return Err(FloatBitsError::Empty);
    }
    let mut counts = [0usize; 32];
    for v in params {
        let w = encode(*v);
        for pos in BitPosition::all() {
            if w.bit(pos) {
                counts[pos.index() as usize] += 1;
            }
        }
    }
    let n = params.len() as f64;
    Ok(counts.map(|c| c as f64 / n))
}
