//! t-out-of-n Shamir secret sharing over a prime field.
//!
//! The default field is GF(2^127 - 1). Any prime below 2^64 is also accepted,
//! which keeps exhaustive tests over tiny fields cheap.

use alloc::vec::Vec;

use num_bigint::BigUint;
use rand_core::RngCore;
use thiserror::Error;

use crate::arith;

/// 2^127 - 1.
pub const MERSENNE_127: u128 = (1u128 << 127) - 1;

pub const SHARE_BYTES: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ShamirError {
    #[error("field modulus {0} is not a supported prime")]
    UnsupportedField(u128),
    #[error("threshold must be at least 1")]
    ZeroThreshold,
    #[error("threshold {t} exceeds share count {n}")]
    ThresholdTooLarge { t: usize, n: usize },
    #[error("share count {0} does not fit in the field")]
    TooManyShares(usize),
    #[error("secret is not a field element")]
    SecretOutOfField,
    #[error("need {needed} shares, got {got}")]
    InsufficientShares { needed: usize, got: usize },
    #[error("share index {0} is repeated")]
    DuplicateIndex(u32),
    #[error("share index must be positive")]
    ZeroIndex,
    #[error("malformed share encoding")]
    Malformed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PrimeField {
    p: u128,
}

impl PrimeField {
    pub const fn mersenne127() -> Self {
        Self { p: MERSENNE_127 }
    }

    pub fn new(p: u128) -> Result<Self, ShamirError> {
        if p == MERSENNE_127 {
            return Ok(Self::mersenne127());
        }
        if p > u64::MAX as u128 || !arith::is_prime_deterministic_bases(&BigUint::from(p)) {
            return Err(ShamirError::UnsupportedField(p));
        }
        Ok(Self { p })
    }

    pub fn modulus(&self) -> u128 {
        self.p
    }

    pub fn add(&self, a: u128, b: u128) -> u128 {
        // a, b < p < 2^127, so the sum cannot overflow.
        let s = a + b;
        if s >= self.p {
            s - self.p
        } else {
            s
        }
    }

    pub fn sub(&self, a: u128, b: u128) -> u128 {
        if a >= b {
            a - b
        } else {
            self.p - (b - a)
        }
    }

    pub fn neg(&self, a: u128) -> u128 {
        if a == 0 {
            0
        } else {
            self.p - a
        }
    }

    pub fn mul(&self, a: u128, b: u128) -> u128 {
        if self.p == MERSENNE_127 {
            mersenne_mul(a, b)
        } else {
            a * b % self.p
        }
    }

    pub fn pow(&self, mut base: u128, mut exp: u128) -> u128 {
        let mut acc = 1 % self.p;
        while exp > 0 {
            if exp & 1 == 1 {
                acc = self.mul(acc, base);
            }
            base = self.mul(base, base);
            exp >>= 1;
        }
        acc
    }

    /// Multiplicative inverse by Fermat; `a` must be non-zero.
    pub fn inv(&self, a: u128) -> u128 {
        debug_assert!(a != 0);
        self.pow(a, self.p - 2)
    }

    /// Uniform field element by rejection sampling.
    pub fn random<R: RngCore + ?Sized>(&self, rng: &mut R) -> u128 {
        let bits = 128 - self.p.leading_zeros();
        let mask = if bits == 128 {
            u128::MAX
        } else {
            (1u128 << bits) - 1
        };
        loop {
            let mut buf = [0u8; 16];
            rng.fill_bytes(&mut buf);
            let v = u128::from_be_bytes(buf) & mask;
            if v < self.p {
                return v;
            }
        }
    }
}

fn mersenne_reduce(x: u128) -> u128 {
    let r = (x & MERSENNE_127) + (x >> 127);
    if r >= MERSENNE_127 {
        r - MERSENNE_127
    } else {
        r
    }
}

fn mersenne_mul(a: u128, b: u128) -> u128 {
    let (a1, a0) = (a >> 64, a & u64::MAX as u128);
    let (b1, b0) = (b >> 64, b & u64::MAX as u128);
    // 2^128 = 2 (mod p)
    let high = mersenne_reduce((a1 * b1) << 1);
    let mid = a1 * b0 + a0 * b1;
    let (mh, ml) = (mid >> 64, mid & u64::MAX as u128);
    let mid = mersenne_reduce(mersenne_reduce(mh << 1) + mersenne_reduce(ml << 64));
    let low = mersenne_reduce(a0 * b0);
    mersenne_reduce(mersenne_reduce(high + mid) + low)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Share {
    pub index: u32,
    pub value: u128,
}

impl Share {
    pub fn to_bytes(&self) -> [u8; SHARE_BYTES] {
        let mut out = [0u8; SHARE_BYTES];
        out[..4].copy_from_slice(&self.index.to_be_bytes());
        out[4..].copy_from_slice(&self.value.to_be_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ShamirError> {
        if bytes.len() != SHARE_BYTES {
            return Err(ShamirError::Malformed);
        }
        let mut index = [0u8; 4];
        index.copy_from_slice(&bytes[..4]);
        let mut value = [0u8; 16];
        value.copy_from_slice(&bytes[4..]);
        Ok(Self {
            index: u32::from_be_bytes(index),
            value: u128::from_be_bytes(value),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shamir {
    pub field: PrimeField,
    pub threshold: usize,
}

impl Shamir {
    pub fn new(field: PrimeField, threshold: usize) -> Result<Self, ShamirError> {
        if threshold == 0 {
            return Err(ShamirError::ZeroThreshold);
        }
        Ok(Self { field, threshold })
    }

    /// Scheme over GF(2^127 - 1).
    pub fn with_threshold(threshold: usize) -> Result<Self, ShamirError> {
        Self::new(PrimeField::mersenne127(), threshold)
    }

    pub fn share<R: RngCore + ?Sized>(
        &self,
        secret: u128,
        n: usize,
        rng: &mut R,
    ) -> Result<Vec<Share>, ShamirError> {
        let coeffs: Vec<u128> = (1..self.threshold)
            .map(|_| self.field.random(rng))
            .collect();
        self.share_with_coefficients(secret, &coeffs, n)
    }

    /// Evaluates `secret + c_1 x + ... + c_(t-1) x^(t-1)` at `x = 1..=n`.
    pub fn share_with_coefficients(
        &self,
        secret: u128,
        coeffs: &[u128],
        n: usize,
    ) -> Result<Vec<Share>, ShamirError> {
        let t = self.threshold;
        if t > n {
            return Err(ShamirError::ThresholdTooLarge { t, n });
        }
        if n as u128 >= self.field.p || n > u32::MAX as usize {
            return Err(ShamirError::TooManyShares(n));
        }
        if secret >= self.field.p || coeffs.iter().any(|&c| c >= self.field.p) {
            return Err(ShamirError::SecretOutOfField);
        }
        assert_eq!(coeffs.len(), t - 1, "polynomial degree must be t - 1");
        Ok((1..=n as u32)
            .map(|x| {
                let xf = x as u128;
                let mut acc = 0;
                for &c in coeffs.iter().rev() {
                    acc = self.field.add(self.field.mul(acc, xf), c);
                }
                acc = self.field.add(self.field.mul(acc, xf), secret);
                Share {
                    index: x,
                    value: acc,
                }
            })
            .collect())
    }

    /// Lagrange interpolation at zero over the first `t` shares.
    pub fn reconstruct(&self, shares: &[Share]) -> Result<u128, ShamirError> {
        let t = self.threshold;
        if shares.len() < t {
            return Err(ShamirError::InsufficientShares {
                needed: t,
                got: shares.len(),
            });
        }
        for (i, s) in shares.iter().enumerate() {
            if s.index == 0 {
                return Err(ShamirError::ZeroIndex);
            }
            if shares[..i].iter().any(|o| o.index == s.index) {
                return Err(ShamirError::DuplicateIndex(s.index));
            }
        }
        let f = &self.field;
        let used = &shares[..t];
        let mut secret = 0;
        for (j, sj) in used.iter().enumerate() {
            let xj = sj.index as u128 % f.p;
            let mut num = 1;
            let mut den = 1;
            for (m, sm) in used.iter().enumerate() {
                if m == j {
                    continue;
                }
                let xm = sm.index as u128 % f.p;
                num = f.mul(num, xm);
                den = f.mul(den, f.sub(xm, xj));
            }
            let basis = f.mul(num, f.inv(den));
            secret = f.add(secret, f.mul(sj.value % f.p, basis));
        }
        Ok(secret)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn gf(p: u128) -> PrimeField {
        PrimeField::new(p).unwrap()
    }

    #[test]
    fn worked_example_gf97() {
        let s = Shamir::new(gf(97), 2).unwrap();
        let shares = s.share_with_coefficients(5, &[3], 3).unwrap();
        let pairs: Vec<(u32, u128)> = shares.iter().map(|s| (s.index, s.value)).collect();
        assert_eq!(pairs, [(1, 8), (2, 11), (3, 14)]);
        assert_eq!(s.reconstruct(&[shares[0], shares[2]]).unwrap(), 5);
    }

    #[test]
    fn constant_polynomial() {
        let s = Shamir::with_threshold(1).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let shares = s.share(12345, 3, &mut rng).unwrap();
        assert!(shares.iter().all(|sh| sh.value == 12345));
    }

    #[test]
    fn parameter_errors() {
        let s = Shamir::with_threshold(4).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        assert_eq!(
            s.share(1, 3, &mut rng).unwrap_err(),
            ShamirError::ThresholdTooLarge { t: 4, n: 3 }
        );
        assert_eq!(
            Shamir::with_threshold(0).unwrap_err(),
            ShamirError::ZeroThreshold
        );
        assert_eq!(
            s.share(MERSENNE_127, 5, &mut rng).unwrap_err(),
            ShamirError::SecretOutOfField
        );
        let small = Shamir::new(gf(5), 2).unwrap();
        assert_eq!(
            small.share(1, 5, &mut rng).unwrap_err(),
            ShamirError::TooManyShares(5)
        );
        assert_eq!(
            PrimeField::new(91).unwrap_err(),
            ShamirError::UnsupportedField(91)
        );
    }

    #[test]
    fn insufficient_and_duplicate_shares() {
        let s = Shamir::with_threshold(3).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let shares = s.share(99, 5, &mut rng).unwrap();
        assert_eq!(
            s.reconstruct(&shares[..2]).unwrap_err(),
            ShamirError::InsufficientShares { needed: 3, got: 2 }
        );
        assert_eq!(
            s.reconstruct(&[shares[0], shares[1], shares[0]])
                .unwrap_err(),
            ShamirError::DuplicateIndex(1)
        );
        let zero = Share { index: 0, value: 1 };
        assert_eq!(
            s.reconstruct(&[zero, shares[1], shares[2]]).unwrap_err(),
            ShamirError::ZeroIndex
        );
    }

    #[test]
    fn mersenne_mul_matches_bignum() {
        let f = PrimeField::mersenne127();
        let p = BigUint::from(MERSENNE_127);
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let mut cases = alloc::vec![
            (0, 0),
            (1, MERSENNE_127 - 1),
            (MERSENNE_127 - 1, MERSENNE_127 - 1)
        ];
        for _ in 0..2000 {
            cases.push((f.random(&mut rng), f.random(&mut rng)));
        }
        for (a, b) in cases {
            let expected = BigUint::from(a) * BigUint::from(b) % &p;
            assert_eq!(BigUint::from(f.mul(a, b)), expected, "{a} * {b}");
        }
    }

    #[test]
    fn inverse() {
        for f in [gf(97), PrimeField::mersenne127()] {
            for a in [1u128, 2, 3, 96, 12345 % f.modulus()] {
                assert_eq!(f.mul(a, f.inv(a)), 1);
            }
        }
    }

    #[test]
    fn order_invariance() {
        let s = Shamir::with_threshold(3).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let secret = PrimeField::mersenne127().random(&mut rng);
        let shares = s.share(secret, 5, &mut rng).unwrap();
        let mut rev = shares.clone();
        rev.reverse();
        assert_eq!(s.reconstruct(&rev).unwrap(), secret);
        assert_eq!(s.reconstruct(&shares).unwrap(), secret);
    }

    #[test]
    fn serialization() {
        let sh = Share {
            index: 7,
            value: MERSENNE_127 - 3,
        };
        let bytes = sh.to_bytes();
        assert_eq!(&bytes[..4], &[0, 0, 0, 7]);
        assert_eq!(Share::from_bytes(&bytes).unwrap(), sh);
        assert_eq!(
            Share::from_bytes(&bytes[..19]).unwrap_err(),
            ShamirError::Malformed
        );
    }
}
