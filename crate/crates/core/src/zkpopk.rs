//! Zero-knowledge proofs over Paillier ciphertexts.
//!
//! [`ZeroProver`] and [`ZeroVerifier`] run the three-move proof that a
//! ciphertext `u` encrypts zero: the prover sends `a = r^n`, receives a
//! challenge `e`, and answers `z = r v^e mod n`; the verifier accepts iff
//! `u, a, z` are units mod `n` and `z^n = a u^e (mod n^2)`.
//!
//! Plaintext knowledge of `m` for a ciphertext `c` reduces to the zero proof on
//! `c' = c · Enc(m, r_s)^(-1)`, see [`PpopkServer`] and [`ppopk_witness`].

use alloc::vec::Vec;

use num_bigint::BigUint;
use num_integer::Integer;
use num_traits::{One, Zero};
use rand_core::RngCore;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::arith;
use crate::paillier::{Ciphertext, Keypair, PaillierError, PublicKey};

/// Challenge length in bits.
pub const CHALLENGE_BITS: u64 = 80;

const FIAT_SHAMIR_DOMAIN: &[u8] = b"fedwagg/zero-proof/v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Commit,
    Challenge,
    Respond,
    Done,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ZkError {
    #[error("message arrived in phase {actual:?}, expected {expected:?}")]
    OutOfPhase { expected: Phase, actual: Phase },
    #[error("vector lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error(transparent)]
    Paillier(#[from] PaillierError),
}

fn expect_phase(actual: Phase, expected: Phase) -> Result<(), ZkError> {
    if actual == expected {
        Ok(())
    } else {
        Err(ZkError::OutOfPhase { expected, actual })
    }
}

/// How challenges are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ChallengeMode {
    #[default]
    Interactive,
    /// Challenge derived by hashing `(n, u, a)`; allows transcript replay.
    FiatShamir,
}

/// The three proof messages, kept for byte accounting and replay.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProofTranscript {
    pub a: BigUint,
    pub e: BigUint,
    pub z: BigUint,
}

impl ProofTranscript {
    pub fn commit_bytes(&self) -> Vec<u8> {
        encode(&self.a)
    }

    pub fn challenge_bytes(&self) -> Vec<u8> {
        encode(&self.e)
    }

    pub fn response_bytes(&self) -> Vec<u8> {
        encode(&self.z)
    }
}

fn encode(v: &BigUint) -> Vec<u8> {
    let mut out = Vec::new();
    arith::put_biguint(&mut out, v);
    out
}

/// Prover side of the zero proof. Implementations other than
/// [`HonestZeroProver`] exist to exercise soundness.
pub trait ZeroProver {
    fn commit(&mut self, rng: &mut dyn RngCore) -> Result<BigUint, ZkError>;
    fn respond(&mut self, e: &BigUint) -> Result<BigUint, ZkError>;
}

/// Prover holding a witness `v` with `u = v^n mod n^2`.
#[derive(Debug, Clone)]
pub struct HonestZeroProver {
    n: BigUint,
    n_squared: BigUint,
    v: BigUint,
    r: Option<BigUint>,
    phase: Phase,
}

impl HonestZeroProver {
    pub fn new(pk: &PublicKey, v: BigUint) -> Self {
        Self {
            n: pk.n().clone(),
            n_squared: pk.n_squared().clone(),
            v,
            r: None,
            phase: Phase::Commit,
        }
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }
}

impl ZeroProver for HonestZeroProver {
    fn commit(&mut self, rng: &mut dyn RngCore) -> Result<BigUint, ZkError> {
        expect_phase(self.phase, Phase::Commit)?;
        let r = arith::random_unit(&self.n, rng);
        let a = r.modpow(&self.n, &self.n_squared);
        self.r = Some(r);
        self.phase = Phase::Respond;
        Ok(a)
    }

    fn respond(&mut self, e: &BigUint) -> Result<BigUint, ZkError> {
        expect_phase(self.phase, Phase::Respond)?;
        let r = self.r.take().expect("commitment randomness set in commit");
        self.phase = Phase::Done;
        Ok(r * self.v.modpow(e, &self.n) % &self.n)
    }
}

#[derive(Debug, Clone)]
pub struct ZeroVerifier {
    n: BigUint,
    n_squared: BigUint,
    u: BigUint,
    a: Option<BigUint>,
    e: Option<BigUint>,
    phase: Phase,
}

impl ZeroVerifier {
    pub fn new(pk: &PublicKey, u: &BigUint) -> Self {
        Self {
            n: pk.n().clone(),
            n_squared: pk.n_squared().clone(),
            u: u.clone(),
            a: None,
            e: None,
            phase: Phase::Commit,
        }
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn receive_commitment(&mut self, a: BigUint) -> Result<(), ZkError> {
        expect_phase(self.phase, Phase::Commit)?;
        self.a = Some(a);
        self.phase = Phase::Challenge;
        Ok(())
    }

    /// Fresh uniform challenge in `[0, 2^80)`.
    pub fn challenge(&mut self, rng: &mut dyn RngCore) -> Result<BigUint, ZkError> {
        expect_phase(self.phase, Phase::Challenge)?;
        let e = arith::random_bits(CHALLENGE_BITS, rng);
        self.set_challenge(e)
    }

    pub fn challenge_fiat_shamir(&mut self) -> Result<BigUint, ZkError> {
        expect_phase(self.phase, Phase::Challenge)?;
        let a = self.a.as_ref().expect("commitment received");
        let e = fiat_shamir_challenge(&self.n, &self.u, a);
        self.set_challenge(e)
    }

    fn set_challenge(&mut self, e: BigUint) -> Result<BigUint, ZkError> {
        self.e = Some(e.clone());
        self.phase = Phase::Respond;
        Ok(e)
    }

    /// Final check; returns the verdict bit as a bool.
    pub fn verify(&mut self, z: &BigUint) -> Result<bool, ZkError> {
        expect_phase(self.phase, Phase::Respond)?;
        self.phase = Phase::Done;
        let a = self.a.as_ref().expect("commitment received");
        let e = self.e.as_ref().expect("challenge issued");
        Ok(check_zero_proof(&self.n, &self.n_squared, &self.u, a, e, z))
    }
}

fn is_unit(x: &BigUint, n: &BigUint) -> bool {
    let r = x % n;
    !r.is_zero() && r.gcd(n).is_one()
}

fn check_zero_proof(
    n: &BigUint,
    n_squared: &BigUint,
    u: &BigUint,
    a: &BigUint,
    e: &BigUint,
    z: &BigUint,
) -> bool {
    if !(is_unit(u, n) && is_unit(a, n) && is_unit(z, n)) {
        return false;
    }
    if u >= n_squared || a >= n_squared || z >= n {
        return false;
    }
    z.modpow(n, n_squared) == a * u.modpow(e, n_squared) % n_squared
}

/// Verifies a complete transcript against `u` without running the interaction.
pub fn verify_transcript(pk: &PublicKey, u: &BigUint, t: &ProofTranscript) -> bool {
    check_zero_proof(pk.n(), pk.n_squared(), u, &t.a, &t.e, &t.z)
}

pub fn fiat_shamir_challenge(n: &BigUint, u: &BigUint, a: &BigUint) -> BigUint {
    let mut h = Sha256::new();
    h.update(FIAT_SHAMIR_DOMAIN);
    for v in [n, u, a] {
        let bytes = v.to_bytes_be();
        h.update((bytes.len() as u32).to_be_bytes());
        h.update(&bytes);
    }
    let digest = h.finalize();
    BigUint::from_bytes_be(&digest[..(CHALLENGE_BITS / 8) as usize])
}

/// Drives one zero proof between `prover` and a fresh verifier.
pub fn run_zero_proof(
    pk: &PublicKey,
    u: &BigUint,
    prover: &mut dyn ZeroProver,
    mode: ChallengeMode,
    prover_rng: &mut dyn RngCore,
    verifier_rng: &mut dyn RngCore,
) -> Result<(bool, ProofTranscript), ZkError> {
    let mut verifier = ZeroVerifier::new(pk, u);
    let a = prover.commit(prover_rng)?;
    verifier.receive_commitment(a.clone())?;
    let e = match mode {
        ChallengeMode::Interactive => verifier.challenge(verifier_rng)?,
        ChallengeMode::FiatShamir => verifier.challenge_fiat_shamir()?,
    };
    let z = prover.respond(&e)?;
    let beta = verifier.verify(&z)?;
    Ok((beta, ProofTranscript { a, e, z }))
}

/// `PZKPoPKoZ(n, u, pk, sk, v)` with an honest prover.
pub fn zkpopk_zero(
    pk: &PublicKey,
    u: &BigUint,
    v: &BigUint,
    prover_rng: &mut dyn RngCore,
    verifier_rng: &mut dyn RngCore,
) -> Result<bool, ZkError> {
    let mut prover = HonestZeroProver::new(pk, v.clone());
    run_zero_proof(
        pk,
        u,
        &mut prover,
        ChallengeMode::Interactive,
        prover_rng,
        verifier_rng,
    )
    .map(|(beta, _)| beta)
}

/// Produces an accepting transcript without a witness by choosing `e, z`
/// first and solving for `a = z^n u^(-e)`.
pub fn simulate_transcript<R: RngCore + ?Sized>(
    pk: &PublicKey,
    u: &BigUint,
    rng: &mut R,
) -> Result<ProofTranscript, ZkError> {
    let n = pk.n();
    let n_squared = pk.n_squared();
    let e = arith::random_bits(CHALLENGE_BITS, rng);
    let z = arith::random_unit(n, rng);
    let u_inv = arith::mod_inverse(u, n_squared).ok_or(PaillierError::InvalidCiphertext)?;
    let a = z.modpow(n, n_squared) * u_inv.modpow(&e, n_squared) % n_squared;
    Ok(ProofTranscript { a, e, z })
}

/// Server side of the plaintext-knowledge proof.
#[derive(Debug, Clone)]
pub struct PpopkServer {
    c_prime: Ciphertext,
}

impl PpopkServer {
    /// `c' = c · Enc(m, r_s)^(-1) mod n^2` for a fresh unit `r_s`.
    pub fn new<R: RngCore + ?Sized>(
        pk: &PublicKey,
        c: &Ciphertext,
        m: &BigUint,
        rng: &mut R,
    ) -> Result<Self, ZkError> {
        let m = m % pk.n();
        let enc_m = pk.encrypt(&m, c.scale_exp, rng)?;
        Ok(Self {
            c_prime: pk.sub(c, &enc_m)?,
        })
    }

    pub fn c_prime(&self) -> &Ciphertext {
        &self.c_prime
    }
}

/// User side: derives the witness `r' = c'^d mod n` from its secret key.
///
/// The witness is computed whether or not `c'` actually encrypts zero; a wrong
/// claim is caught by the verifier.
pub fn ppopk_witness(keys: &Keypair, c_prime: &Ciphertext) -> BigUint {
    keys.zero_witness(&c_prime.value)
}

/// Outcome of one plaintext-knowledge proof, with the messages exchanged.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PpopkRun {
    pub beta: bool,
    pub c_prime: Ciphertext,
    pub proof: ProofTranscript,
}

impl PpopkRun {
    /// Server-to-user payload bytes (`c'` and the challenge).
    pub fn server_bytes(&self) -> usize {
        self.c_prime.to_bytes().len() + self.proof.challenge_bytes().len()
    }

    /// User-to-server payload bytes (commitment and response).
    pub fn user_bytes(&self) -> usize {
        self.proof.commit_bytes().len() + self.proof.response_bytes().len()
    }
}

/// Randomness sources of the two parties.
pub struct Parties<'a> {
    pub server_rng: &'a mut dyn RngCore,
    pub user_rng: &'a mut dyn RngCore,
}

/// `PPoPK(c, m, pk, sk)`: the user proves that `m` is the decryption of `c`.
pub fn ppopk(
    keys: &Keypair,
    c: &Ciphertext,
    m: &BigUint,
    mode: ChallengeMode,
    parties: &mut Parties<'_>,
) -> Result<PpopkRun, ZkError> {
    let pk = &keys.public;
    let server = PpopkServer::new(pk, c, m, parties.server_rng)?;
    let witness = ppopk_witness(keys, server.c_prime());
    let mut prover = HonestZeroProver::new(pk, witness);
    let (beta, proof) = run_zero_proof(
        pk,
        &server.c_prime().value,
        &mut prover,
        mode,
        parties.user_rng,
        parties.server_rng,
    )?;
    Ok(PpopkRun {
        beta,
        c_prime: server.c_prime,
        proof,
    })
}

/// AND-composition of elementwise proofs. Every element is proven so that the
/// exchanged messages do not depend on where a failure occurs.
pub fn ppopk_vector(
    keys: &Keypair,
    cs: &[Ciphertext],
    ms: &[BigUint],
    mode: ChallengeMode,
    parties: &mut Parties<'_>,
) -> Result<(bool, Vec<PpopkRun>), ZkError> {
    if cs.len() != ms.len() {
        return Err(ZkError::LengthMismatch(cs.len(), ms.len()));
    }
    let mut runs = Vec::with_capacity(cs.len());
    let mut all = true;
    for (c, m) in cs.iter().zip(ms) {
        let run = ppopk(keys, c, m, mode, parties)?;
        all &= run.beta;
        runs.push(run);
    }
    Ok((all, runs))
}
