//! Fixed-point encoding of reals as residues modulo a (Paillier) modulus.
//!
//! A real `x` becomes `round(x * 2^fraction_bits) mod n`. Negative values
//! wrap into the upper half of the ring, so homomorphic subtraction needs no
//! special casing. Every residue carries the power-of-two scale currently
//! applied: multiplying two encoded values adds their scales, and the scale is
//! brought back down only on plaintexts (ciphertexts cannot be rescaled).

use num_bigint::{BigInt, BigUint, Sign};
use num_traits::{ToPrimitive, Zero};
use thiserror::Error;

use crate::arith;

pub const DEFAULT_INTEGER_BITS: u32 = 17;
pub const DEFAULT_FRACTION_BITS: u32 = 27;

/// Largest scale a residue may carry and still be decoded to an `f64`.
pub const MAX_SCALE_EXP: i32 = 1000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FixedPointError {
    #[error("value {value} does not fit in {integer_bits} integer bits")]
    Overflow { value: f64, integer_bits: u32 },
    #[error("value is not finite")]
    NotFinite,
    #[error("scale exponent {0} is outside the representable range")]
    ScaleOutOfRange(i32),
    #[error("cannot rescale from 2^{from} up to 2^{to}")]
    ScaleIncrease { from: i32, to: i32 },
    #[error("{payload_bits} payload bits plus {slack_bits} bits of slack exceed the {modulus_bits}-bit modulus")]
    InsufficientModulus {
        payload_bits: u32,
        slack_bits: u32,
        modulus_bits: u64,
    },
}

/// A residue in `[0, modulus)` together with its power-of-two scale.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ScaledResidue {
    pub value: BigUint,
    pub scale_exp: i32,
}

impl ScaledResidue {
    pub fn new(value: BigUint, scale_exp: i32) -> Self {
        Self { value, scale_exp }
    }

    pub fn zero(scale_exp: i32) -> Self {
        Self::new(BigUint::zero(), scale_exp)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixedPointCodec {
    integer_bits: u32,
    fraction_bits: u32,
    modulus: BigUint,
}

impl FixedPointCodec {
    /// Codec requiring only that the signed payload fits below `modulus / 2`.
    pub fn new(
        integer_bits: u32,
        fraction_bits: u32,
        modulus: BigUint,
    ) -> Result<Self, FixedPointError> {
        Self::with_slack(integer_bits, fraction_bits, modulus, 1)
    }

    /// Codec with enough spare bits for `kappa`-bit statistical masks and
    /// sums over `max_summands` values of products of two encodings.
    pub fn with_headroom(
        integer_bits: u32,
        fraction_bits: u32,
        modulus: BigUint,
        kappa: u32,
        max_summands: usize,
    ) -> Result<Self, FixedPointError> {
        let sum_bits = usize::BITS - max_summands.max(1).saturating_sub(1).leading_zeros();
        Self::with_slack(
            integer_bits,
            fraction_bits,
            modulus,
            kappa + sum_bits + fraction_bits,
        )
    }

    fn with_slack(
        integer_bits: u32,
        fraction_bits: u32,
        modulus: BigUint,
        slack_bits: u32,
    ) -> Result<Self, FixedPointError> {
        let payload_bits = integer_bits + fraction_bits;
        if u64::from(payload_bits + slack_bits) > modulus.bits() {
            return Err(FixedPointError::InsufficientModulus {
                payload_bits,
                slack_bits,
                modulus_bits: modulus.bits(),
            });
        }
        Ok(Self {
            integer_bits,
            fraction_bits,
            modulus,
        })
    }

    /// 17 integer bits and 27 fractional bits.
    pub fn standard(modulus: BigUint) -> Result<Self, FixedPointError> {
        Self::new(DEFAULT_INTEGER_BITS, DEFAULT_FRACTION_BITS, modulus)
    }

    pub fn integer_bits(&self) -> u32 {
        self.integer_bits
    }

    pub fn fraction_bits(&self) -> u32 {
        self.fraction_bits
    }

    pub fn scale(&self) -> i32 {
        self.fraction_bits as i32
    }

    pub fn modulus(&self) -> &BigUint {
        &self.modulus
    }

    /// Same bit layout over a different modulus.
    pub fn with_modulus(&self, modulus: BigUint) -> Result<Self, FixedPointError> {
        Self::new(self.integer_bits, self.fraction_bits, modulus)
    }

    pub fn encode(&self, x: f64) -> Result<ScaledResidue, FixedPointError> {
        if !x.is_finite() {
            return Err(FixedPointError::NotFinite);
        }
        if libm::fabs(x) >= libm::ldexp(1.0, self.integer_bits as i32) {
            return Err(FixedPointError::Overflow {
                value: x,
                integer_bits: self.integer_bits,
            });
        }
        let scaled = libm::round(libm::ldexp(x, self.fraction_bits as i32)) as i64;
        Ok(ScaledResidue::new(
            arith::to_residue(&BigInt::from(scaled), &self.modulus),
            self.scale(),
        ))
    }

    /// Encodes an arbitrary real at an arbitrary scale without the
    /// integer-bit range check; used for constants and protocol offsets.
    pub fn encode_at(&self, x: f64, scale_exp: i32) -> Result<ScaledResidue, FixedPointError> {
        Ok(ScaledResidue::new(
            arith::to_residue(&real_to_scaled_int(x, scale_exp)?, &self.modulus),
            scale_exp,
        ))
    }

    /// Integers (labels, counts) are carried at scale 0.
    pub fn encode_integer(&self, v: i64) -> ScaledResidue {
        ScaledResidue::new(arith::to_residue(&BigInt::from(v), &self.modulus), 0)
    }

    pub fn decode(&self, r: &ScaledResidue) -> Result<f64, FixedPointError> {
        decode_signed(&arith::centered(&r.value, &self.modulus), r.scale_exp)
    }

    /// Signed integer view of a residue.
    pub fn signed(&self, r: &ScaledResidue) -> BigInt {
        arith::centered(&r.value, &self.modulus)
    }

    pub fn from_signed(&self, v: &BigInt, scale_exp: i32) -> ScaledResidue {
        ScaledResidue::new(arith::to_residue(v, &self.modulus), scale_exp)
    }

    /// Divides the signed value by `2^(scale_exp - target_scale)` with rounding.
    pub fn rescale(
        &self,
        r: &ScaledResidue,
        target_scale: i32,
    ) -> Result<ScaledResidue, FixedPointError> {
        if target_scale > r.scale_exp {
            return Err(FixedPointError::ScaleIncrease {
                from: r.scale_exp,
                to: target_scale,
            });
        }
        let shift = (r.scale_exp - target_scale) as u32;
        let v = arith::round_shift(&self.signed(r), shift);
        Ok(self.from_signed(&v, target_scale))
    }
}

/// `round(x * 2^scale_exp)` as an exact integer.
pub fn real_to_scaled_int(x: f64, scale_exp: i32) -> Result<BigInt, FixedPointError> {
    if !x.is_finite() {
        return Err(FixedPointError::NotFinite);
    }
    if !(0..=MAX_SCALE_EXP).contains(&scale_exp) {
        return Err(FixedPointError::ScaleOutOfRange(scale_exp));
    }
    // Below 2^60 the product is exact in f64 before rounding; above, round at
    // 2^60 and shift the remaining bits in exactly.
    const DIRECT: i32 = 60;
    let direct = scale_exp.min(DIRECT);
    let rounded = libm::round(libm::ldexp(x, direct));
    let base = float_to_bigint(rounded);
    Ok(base << ((scale_exp - direct) as usize))
}

/// Signed scaled integer back to a real.
pub fn decode_signed(v: &BigInt, scale_exp: i32) -> Result<f64, FixedPointError> {
    if !(0..=MAX_SCALE_EXP).contains(&scale_exp) {
        return Err(FixedPointError::ScaleOutOfRange(scale_exp));
    }
    // Keep the top 64 bits so the f64 conversion never overflows.
    let bits = v.bits();
    let drop = bits.saturating_sub(64);
    let top = (v.magnitude() >> drop).to_f64().unwrap_or(0.0);
    let signed = if v.sign() == Sign::Minus { -top } else { top };
    Ok(libm::ldexp(signed, drop as i32 - scale_exp))
}

fn float_to_bigint(x: f64) -> BigInt {
    // x is integral here
    let neg = x < 0.0;
    let mag = libm::fabs(x);
    if mag < 1.0 {
        return BigInt::zero();
    }
    let bits = mag.to_bits();
    let exp = ((bits >> 52) & 0x7ff) as i32 - 1075;
    let mantissa = (bits & ((1u64 << 52) - 1)) | (1u64 << 52);
    let m = BigInt::from(mantissa);
    let v = if exp >= 0 {
        m << (exp as usize)
    } else {
        m >> ((-exp) as usize)
    };
    if neg {
        -v
    } else {
        v
    }
}
