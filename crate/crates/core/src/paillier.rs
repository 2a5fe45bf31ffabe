//! Paillier additively homomorphic encryption.
//!
//! `Enc(m, r) = g^m r^n mod n^2`, `Dec(c) = L(c^λ mod n^2) / L(g^λ mod n^2) mod n`
//! with `L(x) = (x - 1) / n`. Ciphertexts carry the fixed-point scale of the
//! plaintext they encrypt so that homomorphic sums of mismatched scales are
//! rejected instead of silently producing garbage.

use alloc::vec::Vec;

use num_bigint::BigUint;
use num_integer::Integer;
use num_traits::{One, Zero};
use rand_core::RngCore;
use thiserror::Error;

use crate::arith;
use crate::fixedpoint::ScaledResidue;

/// Miller-Rabin rounds used for key generation.
pub const PRIMALITY_ROUNDS: usize = 64;
/// Default modulus size.
pub const DEFAULT_KEY_BITS: u64 = 1024;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PaillierError {
    #[error("p and q must be distinct")]
    EqualPrimes,
    #[error("{0} is not prime")]
    NotPrime(BigUint),
    #[error("gcd(pq, (p-1)(q-1)) != 1")]
    InvalidPrimes,
    #[error("generator does not satisfy gcd(n, L(g^lambda mod n^2)) = 1")]
    InvalidGenerator,
    #[error("plaintext is not in [0, n)")]
    PlaintextOutOfRange,
    #[error("encryption randomness is not a unit mod n")]
    RandomnessNotUnit,
    #[error("ciphertext is not a unit of Z_(n^2)")]
    InvalidCiphertext,
    #[error("scale mismatch: 2^{0} vs 2^{1}")]
    ScaleMismatch(i32, i32),
    #[error("vector lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("malformed serialized value")]
    Malformed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PublicKey {
    n: BigUint,
    g: BigUint,
    n_squared: BigUint,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SecretKey {
    p: BigUint,
    q: BigUint,
    lambda: BigUint,
    mu: BigUint,
    phi: BigUint,
    /// `n^(-1) mod φ(n)`, extracts `r` from `r^n mod n`.
    d: BigUint,
    p_squared: BigUint,
    q_squared: BigUint,
    h_p: BigUint,
    h_q: BigUint,
    q_inv_p: BigUint,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Keypair {
    pub public: PublicKey,
    pub secret: SecretKey,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Ciphertext {
    pub value: BigUint,
    pub scale_exp: i32,
}

impl Ciphertext {
    pub fn new(value: BigUint, scale_exp: i32) -> Self {
        Self { value, scale_exp }
    }

    /// Length-prefixed big-endian magnitude; the scale is public protocol
    /// metadata and is not serialized.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out);
        out
    }

    pub fn write_to(&self, out: &mut Vec<u8>) {
        arith::put_biguint(out, &self.value);
    }

    pub fn from_bytes(bytes: &[u8], scale_exp: i32) -> Result<Self, PaillierError> {
        match arith::take_biguint(bytes) {
            Some((value, rest)) if rest.is_empty() => Ok(Self::new(value, scale_exp)),
            _ => Err(PaillierError::Malformed),
        }
    }
}

fn l_function(x: &BigUint, n: &BigUint) -> BigUint {
    (x - 1u32) / n
}

/// Key pair with the default generator `g = n + 1`.
pub fn keygen(p: &BigUint, q: &BigUint) -> Result<Keypair, PaillierError> {
    let n = p * q;
    let g = &n + 1u32;
    keygen_with_generator(p, q, &g)
}

/// Key pair with a caller-chosen generator `g ∈ Z_(n^2)^*`.
pub fn keygen_with_generator(
    p: &BigUint,
    q: &BigUint,
    g: &BigUint,
) -> Result<Keypair, PaillierError> {
    if p == q {
        return Err(PaillierError::EqualPrimes);
    }
    for prime in [p, q] {
        if !arith::is_prime_deterministic_bases(prime) {
            return Err(PaillierError::NotPrime(prime.clone()));
        }
    }
    let one = BigUint::one();
    let n = p * q;
    let p1 = p - &one;
    let q1 = q - &one;
    let phi = &p1 * &q1;
    if !n.gcd(&phi).is_one() {
        return Err(PaillierError::InvalidPrimes);
    }
    let n_squared = &n * &n;
    if g.is_zero() || g >= &n_squared || !g.gcd(&n).is_one() {
        return Err(PaillierError::InvalidGenerator);
    }
    let lambda = arith::lcm(&p1, &q1);
    let mu = arith::mod_inverse(&l_function(&g.modpow(&lambda, &n_squared), &n), &n)
        .ok_or(PaillierError::InvalidGenerator)?;
    let d = arith::mod_inverse(&(&n % &phi), &phi).ok_or(PaillierError::InvalidPrimes)?;

    let p_squared = p * p;
    let q_squared = q * q;
    let h_p = arith::mod_inverse(&l_function(&(g % &p_squared).modpow(&p1, &p_squared), p), p)
        .ok_or(PaillierError::InvalidGenerator)?;
    let h_q = arith::mod_inverse(&l_function(&(g % &q_squared).modpow(&q1, &q_squared), q), q)
        .ok_or(PaillierError::InvalidGenerator)?;
    let q_inv_p = arith::mod_inverse(&(q % p), p).ok_or(PaillierError::InvalidPrimes)?;

    Ok(Keypair {
        public: PublicKey {
            n: n.clone(),
            g: g.clone(),
            n_squared,
        },
        secret: SecretKey {
            p: p.clone(),
            q: q.clone(),
            lambda,
            mu,
            phi,
            d,
            p_squared,
            q_squared,
            h_p,
            h_q,
            q_inv_p,
        },
    })
}

/// Fresh key pair whose modulus has exactly `modulus_bits` bits.
pub fn generate_keypair<R: RngCore + ?Sized>(modulus_bits: u64, rng: &mut R) -> Keypair {
    let half = modulus_bits / 2;
    loop {
        let p = arith::generate_prime(half, PRIMALITY_ROUNDS, rng);
        let q = arith::generate_prime(modulus_bits - half, PRIMALITY_ROUNDS, rng);
        if let Ok(kp) = keygen(&p, &q) {
            return kp;
        }
    }
}

impl PublicKey {
    pub fn n(&self) -> &BigUint {
        &self.n
    }

    pub fn g(&self) -> &BigUint {
        &self.g
    }

    pub fn n_squared(&self) -> &BigUint {
        &self.n_squared
    }

    fn has_standard_generator(&self) -> bool {
        self.g == &self.n + 1u32
    }

    /// `g^m mod n^2`; with `g = n + 1` this is `1 + m n`.
    fn g_pow(&self, m: &BigUint) -> BigUint {
        if self.has_standard_generator() {
            (BigUint::one() + m * &self.n) % &self.n_squared
        } else {
            self.g.modpow(m, &self.n_squared)
        }
    }

    /// `HE.Enc(pk, m, r)`.
    pub fn encrypt_with(
        &self,
        m: &BigUint,
        r: &BigUint,
        scale_exp: i32,
    ) -> Result<Ciphertext, PaillierError> {
        if m >= &self.n {
            return Err(PaillierError::PlaintextOutOfRange);
        }
        if r.is_zero() || r >= &self.n || !r.gcd(&self.n).is_one() {
            return Err(PaillierError::RandomnessNotUnit);
        }
        let c = self.g_pow(m) * r.modpow(&self.n, &self.n_squared) % &self.n_squared;
        Ok(Ciphertext::new(c, scale_exp))
    }

    pub fn encrypt<R: RngCore + ?Sized>(
        &self,
        m: &BigUint,
        scale_exp: i32,
        rng: &mut R,
    ) -> Result<Ciphertext, PaillierError> {
        let r = arith::random_unit(&self.n, rng);
        self.encrypt_with(m, &r, scale_exp)
    }

    pub fn encrypt_residue<R: RngCore + ?Sized>(
        &self,
        m: &ScaledResidue,
        rng: &mut R,
    ) -> Result<Ciphertext, PaillierError> {
        self.encrypt(&m.value, m.scale_exp, rng)
    }

    pub fn is_valid(&self, c: &Ciphertext) -> bool {
        !c.value.is_zero() && c.value < self.n_squared && c.value.gcd(&self.n).is_one()
    }

    fn check(&self, c: &Ciphertext) -> Result<(), PaillierError> {
        if self.is_valid(c) {
            Ok(())
        } else {
            Err(PaillierError::InvalidCiphertext)
        }
    }

    /// `a ⊞ b`.
    pub fn add(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext, PaillierError> {
        if a.scale_exp != b.scale_exp {
            return Err(PaillierError::ScaleMismatch(a.scale_exp, b.scale_exp));
        }
        Ok(Ciphertext::new(
            &a.value * &b.value % &self.n_squared,
            a.scale_exp,
        ))
    }

    /// Homomorphic subtraction `a · b^(-1) mod n^2`.
    pub fn sub(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext, PaillierError> {
        if a.scale_exp != b.scale_exp {
            return Err(PaillierError::ScaleMismatch(a.scale_exp, b.scale_exp));
        }
        let inv = self.invert(b)?;
        Ok(Ciphertext::new(
            &a.value * inv % &self.n_squared,
            a.scale_exp,
        ))
    }

    /// `c^(-1) mod n^2`, an encryption of `-m`.
    pub fn invert(&self, c: &Ciphertext) -> Result<BigUint, PaillierError> {
        arith::mod_inverse(&c.value, &self.n_squared).ok_or(PaillierError::InvalidCiphertext)
    }

    pub fn negate(&self, c: &Ciphertext) -> Result<Ciphertext, PaillierError> {
        Ok(Ciphertext::new(self.invert(c)?, c.scale_exp))
    }

    /// Adds a public plaintext without fresh randomness: `c · g^m`.
    pub fn add_plain(
        &self,
        c: &Ciphertext,
        m: &ScaledResidue,
    ) -> Result<Ciphertext, PaillierError> {
        if c.scale_exp != m.scale_exp {
            return Err(PaillierError::ScaleMismatch(c.scale_exp, m.scale_exp));
        }
        Ok(Ciphertext::new(
            &c.value * self.g_pow(&(&m.value % &self.n)) % &self.n_squared,
            c.scale_exp,
        ))
    }

    /// `c ⊠ k`: the plaintext becomes `m·k mod n` at scale `c.scale + k.scale`.
    pub fn scalar_mul(&self, c: &Ciphertext, k: &ScaledResidue) -> Ciphertext {
        Ciphertext::new(
            c.value.modpow(&(&k.value % &self.n), &self.n_squared),
            c.scale_exp + k.scale_exp,
        )
    }

    /// Raises the plaintext scale by multiplying with a power of two.
    pub fn upscale(&self, c: &Ciphertext, target_scale: i32) -> Result<Ciphertext, PaillierError> {
        if target_scale < c.scale_exp {
            return Err(PaillierError::ScaleMismatch(c.scale_exp, target_scale));
        }
        let shift = (target_scale - c.scale_exp) as usize;
        Ok(self.scalar_mul(
            c,
            &ScaledResidue::new(BigUint::one() << shift, shift as i32),
        ))
    }

    pub fn encrypt_vector<R: RngCore + ?Sized>(
        &self,
        ms: &[ScaledResidue],
        rng: &mut R,
    ) -> Result<Vec<Ciphertext>, PaillierError> {
        ms.iter().map(|m| self.encrypt_residue(m, rng)).collect()
    }

    pub fn add_vector(
        &self,
        a: &[Ciphertext],
        b: &[Ciphertext],
    ) -> Result<Vec<Ciphertext>, PaillierError> {
        if a.len() != b.len() {
            return Err(PaillierError::LengthMismatch(a.len(), b.len()));
        }
        a.iter().zip(b).map(|(x, y)| self.add(x, y)).collect()
    }

    /// Multiplies every element by the same scalar.
    pub fn scalar_mul_vector(&self, cs: &[Ciphertext], k: &ScaledResidue) -> Vec<Ciphertext> {
        cs.iter().map(|c| self.scalar_mul(c, k)).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        arith::put_biguint(&mut out, &self.n);
        arith::put_biguint(&mut out, &self.g);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PaillierError> {
        let (n, rest) = arith::take_biguint(bytes).ok_or(PaillierError::Malformed)?;
        let (g, rest) = arith::take_biguint(rest).ok_or(PaillierError::Malformed)?;
        if !rest.is_empty() || n.is_zero() {
            return Err(PaillierError::Malformed);
        }
        let n_squared = &n * &n;
        Ok(Self { n, g, n_squared })
    }
}

impl SecretKey {
    pub fn lambda(&self) -> &BigUint {
        &self.lambda
    }

    pub fn mu(&self) -> &BigUint {
        &self.mu
    }

    pub fn phi(&self) -> &BigUint {
        &self.phi
    }

    pub fn d(&self) -> &BigUint {
        &self.d
    }

    pub fn primes(&self) -> (&BigUint, &BigUint) {
        (&self.p, &self.q)
    }
}

impl Keypair {
    pub fn n(&self) -> &BigUint {
        self.public.n()
    }

    /// `HE.Dec` via the Chinese remainder theorem.
    pub fn decrypt(&self, c: &Ciphertext) -> Result<BigUint, PaillierError> {
        self.public.check(c)?;
        let sk = &self.secret;
        let one = BigUint::one();
        let cp = (&c.value % &sk.p_squared).modpow(&(&sk.p - &one), &sk.p_squared);
        let mp = l_function(&cp, &sk.p) * &sk.h_p % &sk.p;
        let cq = (&c.value % &sk.q_squared).modpow(&(&sk.q - &one), &sk.q_squared);
        let mq = l_function(&cq, &sk.q) * &sk.h_q % &sk.q;
        // m = mq + q * ((mp - mq) * q^-1 mod p)
        let diff = (&mp + &sk.p - (&mq % &sk.p)) % &sk.p;
        Ok(&mq + &sk.q * (diff * &sk.q_inv_p % &sk.p))
    }

    /// `L(c^λ mod n^2) · μ mod n`, kept as the reference for the CRT path.
    pub fn decrypt_textbook(&self, c: &Ciphertext) -> Result<BigUint, PaillierError> {
        self.public.check(c)?;
        let pk = &self.public;
        let u = c.value.modpow(&self.secret.lambda, &pk.n_squared);
        Ok(l_function(&u, &pk.n) * &self.secret.mu % &pk.n)
    }

    pub fn decrypt_residue(&self, c: &Ciphertext) -> Result<ScaledResidue, PaillierError> {
        Ok(ScaledResidue::new(self.decrypt(c)?, c.scale_exp))
    }

    pub fn decrypt_vector(&self, cs: &[Ciphertext]) -> Result<Vec<ScaledResidue>, PaillierError> {
        cs.iter().map(|c| self.decrypt_residue(c)).collect()
    }

    /// `r` such that `c = r^n mod n^2`, for a ciphertext of zero.
    pub fn zero_witness(&self, c: &BigUint) -> BigUint {
        let n = self.public.n();
        (c % n).modpow(&self.secret.d, n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn toy() -> Keypair {
        keygen(&BigUint::from(7u32), &BigUint::from(11u32)).unwrap()
    }

    fn big(v: u64) -> BigUint {
        BigUint::from(v)
    }

    #[test]
    fn toy_key_parameters() {
        let kp = toy();
        assert_eq!(kp.public.n(), &big(77));
        assert_eq!(kp.secret.lambda(), &big(30));
        assert_eq!(kp.public.g(), &big(78));
        // 17 * 53 = 901 = 15 * 60 + 1
        assert_eq!(kp.secret.d(), &big(53));
    }

    #[test]
    fn equal_primes_rejected() {
        assert_eq!(keygen(&big(7), &big(7)), Err(PaillierError::EqualPrimes));
    }

    #[test]
    fn composite_rejected() {
        assert!(matches!(
            keygen(&big(9), &big(11)),
            Err(PaillierError::NotPrime(_))
        ));
    }

    #[test]
    fn gcd_condition_enforced() {
        // p = 3, q = 7: (p-1)(q-1) = 12 shares the factor 3 with n = 21.
        assert_eq!(keygen(&big(3), &big(7)), Err(PaillierError::InvalidPrimes));
    }

    #[test]
    fn zero_with_unit_randomness_is_one() {
        let kp = toy();
        let c = kp.public.encrypt_with(&big(0), &big(1), 0).unwrap();
        assert_eq!(c.value, big(1));
        assert_eq!(kp.decrypt(&c).unwrap(), big(0));
    }

    #[test]
    fn toy_encryption_by_hand() {
        // (1 + 5*77) * 2^77 mod 5929
        let kp = toy();
        let c = kp.public.encrypt_with(&big(5), &big(2), 0).unwrap();
        let expected = (big(386) * big(2).modpow(&big(77), &big(5929))) % big(5929);
        assert_eq!(c.value, expected);
        assert_eq!(kp.decrypt(&c).unwrap(), big(5));
    }

    #[test]
    fn randomness_must_be_unit() {
        let kp = toy();
        assert_eq!(
            kp.public.encrypt_with(&big(5), &big(7), 0),
            Err(PaillierError::RandomnessNotUnit)
        );
        assert_eq!(
            kp.public.encrypt_with(&big(77), &big(2), 0),
            Err(PaillierError::PlaintextOutOfRange)
        );
    }

    #[test]
    fn probabilistic_encryption() {
        let kp = toy();
        let a = kp.public.encrypt_with(&big(5), &big(2), 0).unwrap();
        let b = kp.public.encrypt_with(&big(5), &big(3), 0).unwrap();
        assert_ne!(a, b);
        assert_eq!(kp.decrypt(&a).unwrap(), kp.decrypt(&b).unwrap());
    }

    #[test]
    fn invalid_ciphertext_rejected() {
        let kp = toy();
        let c = Ciphertext::new(big(7), 0);
        assert_eq!(kp.decrypt(&c), Err(PaillierError::InvalidCiphertext));
    }

    #[test]
    fn homomorphic_ops_on_toy_key() {
        let kp = toy();
        let pk = &kp.public;
        let enc = |m: u64, r: u64| pk.encrypt_with(&big(m), &big(r), 0).unwrap();
        assert_eq!(
            kp.decrypt(&pk.add(&enc(3, 2), &enc(4, 3)).unwrap())
                .unwrap(),
            big(7)
        );
        assert_eq!(
            kp.decrypt(&pk.add(&enc(70, 2), &enc(10, 5)).unwrap())
                .unwrap(),
            big(3)
        );
        let c = enc(3, 4);
        let k = |v: u64| ScaledResidue::new(big(v), 0);
        assert_eq!(kp.decrypt(&pk.scalar_mul(&c, &k(5))).unwrap(), big(15));
        assert_eq!(kp.decrypt(&pk.scalar_mul(&c, &k(1))).unwrap(), big(3));
        assert_eq!(kp.decrypt(&pk.scalar_mul(&c, &k(0))).unwrap(), big(0));
        assert_eq!(
            kp.decrypt(&pk.add(&c, &enc(0, 9)).unwrap()).unwrap(),
            big(3)
        );
        assert_eq!(
            kp.decrypt(&pk.sub(&enc(3, 2), &enc(4, 3)).unwrap())
                .unwrap(),
            big(76)
        );
    }

    #[test]
    fn scale_tracking() {
        let kp = toy();
        let pk = &kp.public;
        let a = pk.encrypt_with(&big(1), &big(2), 27).unwrap();
        let b = pk.encrypt_with(&big(1), &big(2), 54).unwrap();
        assert_eq!(pk.add(&a, &b), Err(PaillierError::ScaleMismatch(27, 54)));
        let prod = pk.scalar_mul(&a, &ScaledResidue::new(big(2), 27));
        assert_eq!(prod.scale_exp, 54);
        let up = pk.upscale(&a, 30).unwrap();
        assert_eq!(up.scale_exp, 30);
        assert_eq!(kp.decrypt(&up).unwrap(), big(8));
    }

    #[test]
    fn vectors() {
        let kp = toy();
        let pk = &kp.public;
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        assert!(pk.encrypt_vector(&[], &mut rng).unwrap().is_empty());
        let v = |xs: &[u64]| -> Vec<ScaledResidue> {
            xs.iter().map(|&x| ScaledResidue::new(big(x), 0)).collect()
        };
        let a = pk.encrypt_vector(&v(&[1, 2]), &mut rng).unwrap();
        let b = pk.encrypt_vector(&v(&[3, 4]), &mut rng).unwrap();
        let sum = kp.decrypt_vector(&pk.add_vector(&a, &b).unwrap()).unwrap();
        assert_eq!(sum, v(&[4, 6]));
        let c = pk.encrypt_vector(&v(&[2, 3]), &mut rng).unwrap();
        let doubled = kp
            .decrypt_vector(&pk.scalar_mul_vector(&c, &ScaledResidue::new(big(2), 0)))
            .unwrap();
        assert_eq!(doubled, v(&[4, 6]));
        assert_eq!(
            pk.add_vector(&a, &c[..1]),
            Err(PaillierError::LengthMismatch(2, 1))
        );
    }

    #[test]
    fn general_generator_path() {
        let p = big(7);
        let q = big(11);
        let kp = keygen_with_generator(&p, &q, &big(2)).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        for m in 0..77u64 {
            let c = kp.public.encrypt(&big(m), 0, &mut rng).unwrap();
            assert_eq!(kp.decrypt(&c).unwrap(), big(m));
            assert_eq!(kp.decrypt_textbook(&c).unwrap(), big(m));
        }
        // g = 1 has L(g^λ) = 0, which is not invertible.
        assert_eq!(
            keygen_with_generator(&p, &q, &big(1)),
            Err(PaillierError::InvalidGenerator)
        );
    }

    #[test]
    fn crt_matches_textbook() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let kp = generate_keypair(256, &mut rng);
        for _ in 0..50 {
            let m = arith::random_below(kp.n(), &mut rng);
            let c = kp.public.encrypt(&m, 0, &mut rng).unwrap();
            assert_eq!(kp.decrypt(&c).unwrap(), kp.decrypt_textbook(&c).unwrap());
            assert_eq!(kp.decrypt(&c).unwrap(), m);
        }
    }

    #[test]
    fn zero_witness_recovers_randomness() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let kp = generate_keypair(128, &mut rng);
        let r = arith::random_unit(kp.n(), &mut rng);
        let c = kp.public.encrypt_with(&BigUint::zero(), &r, 0).unwrap();
        assert_eq!(kp.zero_witness(&c.value), r);
    }

    #[test]
    fn serialization() {
        let kp = toy();
        let bytes = kp.public.to_bytes();
        assert_eq!(PublicKey::from_bytes(&bytes).unwrap(), kp.public);
        let c = kp.public.encrypt_with(&big(5), &big(2), 27).unwrap();
        let raw = c.to_bytes();
        assert_eq!(&raw[..4], &(raw.len() as u32 - 4).to_be_bytes());
        assert_eq!(Ciphertext::from_bytes(&raw, 27).unwrap(), c);
        assert_eq!(
            Ciphertext::from_bytes(&raw[..raw.len() - 1], 27),
            Err(PaillierError::Malformed)
        );
    }
}
