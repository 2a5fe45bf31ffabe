//! Big-integer helpers shared by the cryptographic modules.

use alloc::vec;
use alloc::vec::Vec;

use num_bigint::{BigInt, BigUint, Sign};
use num_integer::Integer;
use num_traits::{One, Zero};
use rand_core::RngCore;

const SMALL_PRIMES: [u32; 54] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97,
    101, 103, 107, 109, 113, 127, 131, 137, 139, 149, 151, 157, 163, 167, 173, 179, 181, 191, 193,
    197, 199, 211, 223, 227, 229, 233, 239, 241, 251,
];

/// Uniform sample from `[0, bound)` by rejection.
pub fn random_below<R: RngCore + ?Sized>(bound: &BigUint, rng: &mut R) -> BigUint {
    assert!(!bound.is_zero(), "empty sampling range");
    let bits = bound.bits();
    let bytes = bits.div_ceil(8) as usize;
    let top_mask = match bits % 8 {
        0 => 0xff,
        r => (1u8 << r) - 1,
    };
    let mut buf = vec![0u8; bytes];
    loop {
        rng.fill_bytes(&mut buf);
        buf[0] &= top_mask;
        let candidate = BigUint::from_bytes_be(&buf);
        if &candidate < bound {
            return candidate;
        }
    }
}

/// Uniform sample of `bits` random bits, i.e. from `[0, 2^bits)`.
pub fn random_bits<R: RngCore + ?Sized>(bits: u64, rng: &mut R) -> BigUint {
    if bits == 0 {
        return BigUint::zero();
    }
    random_below(&(BigUint::one() << bits), rng)
}

/// Uniform sample from the units of `Z_n`.
pub fn random_unit<R: RngCore + ?Sized>(n: &BigUint, rng: &mut R) -> BigUint {
    loop {
        let r = random_below(n, rng);
        if !r.is_zero() && r.gcd(n).is_one() {
            return r;
        }
    }
}

pub fn mod_inverse(a: &BigUint, m: &BigUint) -> Option<BigUint> {
    if m.is_one() {
        return Some(BigUint::zero());
    }
    a.modinv(m)
}

pub fn lcm(a: &BigUint, b: &BigUint) -> BigUint {
    a.lcm(b)
}

/// Maps a signed integer into `[0, modulus)`; negatives land in the upper half.
pub fn to_residue(value: &BigInt, modulus: &BigUint) -> BigUint {
    let m = BigInt::from_biguint(Sign::Plus, modulus.clone());
    let r = value.mod_floor(&m);
    r.to_biguint().expect("mod_floor is non-negative")
}

/// Inverse of [`to_residue`]: residues above `modulus / 2` are read as negative.
pub fn centered(value: &BigUint, modulus: &BigUint) -> BigInt {
    let v = value % modulus;
    if &v << 1usize > *modulus {
        BigInt::from_biguint(Sign::Minus, modulus - &v)
    } else {
        BigInt::from_biguint(Sign::Plus, v)
    }
}

/// Division by `2^shift` rounding half away from zero.
pub fn round_shift(value: &BigInt, shift: u32) -> BigInt {
    if shift == 0 {
        return value.clone();
    }
    let half = BigInt::one() << (shift - 1);
    let mag = value.magnitude().clone();
    let rounded = (BigInt::from(mag) + half) >> shift;
    if value.sign() == Sign::Minus {
        -rounded
    } else {
        rounded
    }
}

/// Miller-Rabin with `rounds` random bases after trial division.
pub fn is_probable_prime<R: RngCore + ?Sized>(n: &BigUint, rounds: usize, rng: &mut R) -> bool {
    if let Some(verdict) = trial_division(n) {
        return verdict;
    }
    let two = BigUint::from(2u32);
    let n_minus_three = n - 3u32;
    let witnesses = (0..rounds).map(|_| random_below(&n_minus_three, rng) + &two);
    miller_rabin(n, witnesses)
}

/// Miller-Rabin with the fixed small-prime bases; used to validate caller-supplied primes.
pub fn is_prime_deterministic_bases(n: &BigUint) -> bool {
    if let Some(verdict) = trial_division(n) {
        return verdict;
    }
    miller_rabin(n, SMALL_PRIMES[..20].iter().map(|&p| BigUint::from(p)))
}

fn trial_division(n: &BigUint) -> Option<bool> {
    if n < &BigUint::from(2u32) {
        return Some(false);
    }
    for &p in SMALL_PRIMES.iter() {
        let p = BigUint::from(p);
        if *n == p {
            return Some(true);
        }
        if (n % &p).is_zero() {
            return Some(false);
        }
    }
    if n < &BigUint::from(251u32 * 251) {
        return Some(true);
    }
    None
}

fn miller_rabin(n: &BigUint, witnesses: impl Iterator<Item = BigUint>) -> bool {
    let one = BigUint::one();
    let n_minus_one = n - &one;
    let s = n_minus_one.trailing_zeros().unwrap_or(0);
    let d = &n_minus_one >> s;
    'witness: for a in witnesses {
        let a = a % n;
        if a.is_zero() || a == one || a == n_minus_one {
            continue;
        }
        let mut x = a.modpow(&d, n);
        if x == one || x == n_minus_one {
            continue;
        }
        for _ in 1..s {
            x = x.modpow(&BigUint::from(2u32), n);
            if x == n_minus_one {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// Random prime with exactly `bits` bits; the top two bits are set so that a
/// product of two such primes has exactly `2 * bits` bits.
pub fn generate_prime<R: RngCore + ?Sized>(bits: u64, rounds: usize, rng: &mut R) -> BigUint {
    assert!(bits >= 3, "prime size too small");
    let top = (BigUint::one() << (bits - 1)) | (BigUint::one() << (bits - 2));
    loop {
        let candidate = random_bits(bits, rng) | &top | BigUint::one();
        if is_probable_prime(&candidate, rounds, rng) {
            return candidate;
        }
    }
}

/// Appends `4-byte big-endian length || magnitude` to `out`.
pub fn put_biguint(out: &mut Vec<u8>, value: &BigUint) {
    let bytes = if value.is_zero() {
        Vec::new()
    } else {
        value.to_bytes_be()
    };
    out.extend_from_slice(&(bytes.len() as u32).to_be_bytes());
    out.extend_from_slice(&bytes);
}

/// Reads a length-prefixed magnitude, returning it and the remaining input.
pub fn take_biguint(input: &[u8]) -> Option<(BigUint, &[u8])> {
    if input.len() < 4 {
        return None;
    }
    let len = u32::from_be_bytes([input[0], input[1], input[2], input[3]]) as usize;
    let rest = &input[4..];
    if rest.len() < len {
        return None;
    }
    Some((BigUint::from_bytes_be(&rest[..len]), &rest[len..]))
}
