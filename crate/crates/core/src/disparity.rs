//! Mutual cross-entropy of a client over ciphertexts, and the weights derived
//! from it.
//!
//! `E_i = LS_i + LL_i`, where `LS_i` is the loss of the client's encrypted
//! model on the server's benchmark and `LL_i` the loss of the server's model
//! on the client's encrypted data. Losses use the cubic surrogates of
//! `-ln σ` (and `-ln(1 - σ)` for full binary cross-entropy), evaluated through
//! masked rounds with the key holder.

use alloc::vec::Vec;

use num_bigint::BigUint;
use num_traits::Zero;
use rand_core::RngCore;
use thiserror::Error;

use crate::data::Dataset;
use crate::fixedpoint::{FixedPointCodec, FixedPointError, ScaledResidue};
use crate::logreg::{
    self, CubicReply, CubicSession, CubicTarget, FixedCubic, LinearReply, LogRegError, LogRegModel,
};
use crate::paillier::{Ciphertext, Keypair, PaillierError, PublicKey};
use crate::secagg::UserId;
use crate::zkpopk::{self, ChallengeMode, Parties, ZkError};

/// Lower clamp for `E_i` before taking `1 / E_i`.
pub const ENTROPY_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DisparityError {
    #[error("model has {model} parameters, data has {features} features")]
    DimensionMismatch { model: usize, features: usize },
    #[error("proof of the decrypted h for sample {sample} failed")]
    HProofFailed { sample: usize },
    #[error("no weight records for the alive set")]
    EmptyAliveSet,
    #[error("user {0} is not among the evaluated users")]
    UnknownUser(UserId),
    #[error("E of user {user} is not a finite number")]
    NonFiniteEntropy { user: UserId },
    #[error("user {user}: {source}")]
    Peer { user: UserId, source: LogRegError },
    #[error(transparent)]
    LogReg(#[from] LogRegError),
    #[error(transparent)]
    Paillier(#[from] PaillierError),
    #[error(transparent)]
    FixedPoint(#[from] FixedPointError),
    #[error(transparent)]
    Zk(#[from] ZkError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DisparityConfig {
    pub kappa: u32,
    pub fraction_bits: u32,
    /// Adds the `(1 - y)(-ln(1 - σ))` term to both losses.
    pub binary_cross_entropy: bool,
    /// Plaintext proof on the user's `h + r` in the LL round.
    pub verify_h: bool,
    pub cubics: CubicSet,
}

impl DisparityConfig {
    pub fn new(kappa: u32, fraction_bits: u32) -> Result<Self, FixedPointError> {
        Ok(Self {
            kappa,
            fraction_bits,
            binary_cross_entropy: false,
            verify_h: true,
            cubics: CubicSet::frozen(fraction_bits)?,
        })
    }

    /// Scale of `θ·x`: two fixed-point factors.
    pub fn linear_scale(&self) -> u32 {
        2 * self.fraction_bits
    }

    /// Scale of every loss term and of `E`.
    pub fn loss_scale(&self) -> i32 {
        self.cubics
            .neg_log_sigmoid
            .output_scale(self.linear_scale())
    }

    fn round_cubics(&self) -> Vec<FixedCubic> {
        let mut out = alloc::vec![self.cubics.neg_log_sigmoid.clone()];
        if self.binary_cross_entropy {
            out.push(self.cubics.neg_log_one_minus_sigmoid.clone());
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CubicSet {
    pub neg_log_sigmoid: FixedCubic,
    pub neg_log_one_minus_sigmoid: FixedCubic,
}

impl CubicSet {
    /// The frozen surrogates with coefficients at `coeff_scale`.
    pub fn frozen(coeff_scale: u32) -> Result<Self, FixedPointError> {
        Ok(Self {
            neg_log_sigmoid: FixedCubic::from_poly(
                logreg::frozen_cubic(CubicTarget::NegLogSigmoid),
                coeff_scale,
            )?,
            neg_log_one_minus_sigmoid: FixedCubic::from_poly(
                logreg::frozen_cubic(CubicTarget::NegLogOneMinusSigmoid),
                coeff_scale,
            )?,
        })
    }
}

/// One encrypted sample: features at the fraction scale, label at scale 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncryptedSample {
    pub x: Vec<Ciphertext>,
    pub y: Ciphertext,
}

impl EncryptedSample {
    pub fn byte_len(&self) -> usize {
        self.x
            .iter()
            .chain([&self.y])
            .map(|c| c.to_bytes().len())
            .sum()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for c in self.x.iter().chain([&self.y]) {
            c.write_to(&mut out);
        }
        out
    }
}

pub fn encrypt_dataset<R: RngCore + ?Sized>(
    pk: &PublicKey,
    codec: &FixedPointCodec,
    data: &Dataset,
    rng: &mut R,
) -> Result<Vec<EncryptedSample>, DisparityError> {
    data.iter()
        .map(|(x, y)| {
            let x = x
                .iter()
                .map(|&v| Ok(pk.encrypt_residue(&codec.encode(v)?, rng)?))
                .collect::<Result<Vec<_>, DisparityError>>()?;
            let y = pk.encrypt_residue(&codec.encode_integer(i64::from(y)), rng)?;
            Ok(EncryptedSample { x, y })
        })
        .collect()
}

pub fn encrypt_model<R: RngCore + ?Sized>(
    pk: &PublicKey,
    codec: &FixedPointCodec,
    model: &LogRegModel,
    rng: &mut R,
) -> Result<Vec<Ciphertext>, DisparityError> {
    model
        .theta
        .iter()
        .map(|&t| Ok(pk.encrypt_residue(&codec.encode(t)?, rng)?))
        .collect()
}

/// The key holder's side of the evaluation rounds.
pub trait DisparityPeer {
    /// Decrypts `Enc(z)` and returns `Enc(z^2)`, `Enc(P(z))` per cubic.
    fn cubic_round(
        &mut self,
        z: &Ciphertext,
        cubics: &[FixedCubic],
    ) -> Result<CubicReply, LogRegError>;

    /// Decrypts `Enc(h)` for the sample at `index` of the peer's own data and
    /// returns `h + r`, `Enc(y r)`, `Enc(r)`.
    fn linear_round(&mut self, h: &Ciphertext, index: usize) -> Result<LinearReply, LogRegError>;

    /// Runs the plaintext-knowledge proof that `m` decrypts `c`.
    fn prove_plaintext(
        &mut self,
        c: &Ciphertext,
        m: &BigUint,
        server_rng: &mut dyn RngCore,
    ) -> Result<bool, ZkError>;
}

/// In-process peer holding the key pair and its own labels.
pub struct LocalPeer<'a> {
    pub keys: &'a Keypair,
    pub labels: &'a [u8],
    pub linear_mask_bits: u64,
    pub rng: &'a mut dyn RngCore,
}

impl DisparityPeer for LocalPeer<'_> {
    fn cubic_round(
        &mut self,
        z: &Ciphertext,
        cubics: &[FixedCubic],
    ) -> Result<CubicReply, LogRegError> {
        logreg::cubic_reply(self.keys, z, cubics, self.rng)
    }

    fn linear_round(&mut self, h: &Ciphertext, index: usize) -> Result<LinearReply, LogRegError> {
        logreg::linear_reply(
            self.keys,
            h,
            self.labels[index],
            self.linear_mask_bits,
            self.rng,
        )
    }

    fn prove_plaintext(
        &mut self,
        c: &Ciphertext,
        m: &BigUint,
        server_rng: &mut dyn RngCore,
    ) -> Result<bool, ZkError> {
        let mut parties = Parties {
            server_rng,
            user_rng: self.rng,
        };
        Ok(zkpopk::ppopk(self.keys, c, m, ChallengeMode::Interactive, &mut parties)?.beta)
    }
}

fn zero_at<R: RngCore + ?Sized>(
    pk: &PublicKey,
    scale: i32,
    rng: &mut R,
) -> Result<Ciphertext, DisparityError> {
    Ok(pk.encrypt(&BigUint::zero(), scale, rng)?)
}

fn accumulate(
    pk: &PublicKey,
    acc: Option<Ciphertext>,
    term: Ciphertext,
) -> Result<Option<Ciphertext>, DisparityError> {
    Ok(Some(match acc {
        Some(a) => pk.add(&a, &term)?,
        None => term,
    }))
}

fn masked_cubics<R: RngCore + ?Sized>(
    pk: &PublicKey,
    l: &Ciphertext,
    cfg: &DisparityConfig,
    peer: &mut dyn DisparityPeer,
    rng: &mut R,
) -> Result<Vec<Ciphertext>, DisparityError> {
    let cubics = cfg.round_cubics();
    let bits = logreg::mask_bits(cfg.kappa, cfg.linear_scale(), cfg.fraction_bits);
    let (session, z) = CubicSession::start(pk, l, bits, rng)?;
    let reply = peer.cubic_round(&z, &cubics)?;
    Ok(session.finish(pk, &cubics, &reply)?)
}

/// `Enc(LS_i) = Σ_s y_s ⊠ Enc(-ln σ(θ_i·x_s))` over the server's benchmark,
/// with the client model `θ_i` encrypted.
pub fn compute_ls<R: RngCore + ?Sized>(
    pk: &PublicKey,
    enc_model: &[Ciphertext],
    benchmark: &Dataset,
    cfg: &DisparityConfig,
    peer: &mut dyn DisparityPeer,
    rng: &mut R,
) -> Result<Ciphertext, DisparityError> {
    if enc_model.len() != benchmark.dim() + 1 {
        return Err(DisparityError::DimensionMismatch {
            model: enc_model.len(),
            features: benchmark.dim(),
        });
    }
    let codec = FixedPointCodec::new(0, cfg.fraction_bits, pk.n().clone())?;
    let lin = cfg.linear_scale() as i32;
    let bias = pk.upscale(&enc_model[0], lin)?;
    let mut acc = None;
    for (x, y) in benchmark.iter() {
        if y == 0 && !cfg.binary_cross_entropy {
            continue;
        }
        let mut l = bias.clone();
        for (theta, &xk) in enc_model[1..].iter().zip(x) {
            let xk = codec.encode_at(xk, cfg.fraction_bits as i32)?;
            l = pk.add(&l, &pk.scalar_mul(theta, &xk))?;
        }
        let losses = masked_cubics(pk, &l, cfg, peer, rng)?;
        let term = if y == 1 {
            losses[0].clone()
        } else {
            losses[1].clone()
        };
        acc = accumulate(pk, acc, term)?;
    }
    match acc {
        Some(c) => Ok(c),
        None => zero_at(pk, cfg.loss_scale(), rng),
    }
}

/// `Enc(LL_i) = Σ_u Enc(y_u) ⊠ (-ln σ(θ_s·Enc(x_u)))` over the client's
/// encrypted data, with the server model `θ_s` in the clear.
pub fn compute_ll<R: RngCore + ?Sized>(
    pk: &PublicKey,
    enc_data: &[EncryptedSample],
    server_model: &LogRegModel,
    cfg: &DisparityConfig,
    peer: &mut dyn DisparityPeer,
    rng: &mut R,
) -> Result<Ciphertext, DisparityError> {
    let codec = FixedPointCodec::new(17, cfg.fraction_bits, pk.n().clone())?;
    let lin = cfg.linear_scale() as i32;
    let theta: Vec<ScaledResidue> = server_model
        .theta
        .iter()
        .map(|&t| codec.encode(t))
        .collect::<Result<_, _>>()?;
    let bias = codec.encode_at(server_model.theta[0], lin)?;
    let mut acc = None;
    for (index, sample) in enc_data.iter().enumerate() {
        if sample.x.len() + 1 != theta.len() {
            return Err(DisparityError::DimensionMismatch {
                model: theta.len(),
                features: sample.x.len(),
            });
        }
        let mut l: Option<Ciphertext> = None;
        for (xk, tk) in sample.x.iter().zip(&theta[1..]) {
            l = accumulate(pk, l, pk.scalar_mul(xk, tk))?;
        }
        let l = match l {
            Some(l) => pk.add_plain(&l, &bias)?,
            None => pk.encrypt_residue(&bias, rng)?,
        };
        let losses = masked_cubics(pk, &l, cfg, peer, rng)?;
        // With both surrogates, y h + (1 - y) h' = h' + y (h - h').
        let (base, target) = if cfg.binary_cross_entropy {
            (Some(losses[1].clone()), pk.sub(&losses[0], &losses[1])?)
        } else {
            (None, losses[0].clone())
        };
        let reply = peer.linear_round(&target, index)?;
        if cfg.verify_h {
            let claimed = pk.add(&target, &reply.r)?;
            let mut server_rng = &mut *rng;
            if !peer.prove_plaintext(&claimed, &reply.h_plus_r.value, &mut server_rng)? {
                return Err(DisparityError::HProofFailed { sample: index });
            }
        }
        let yh = logreg::masked_linear_open(pk, &sample.y, &reply)?;
        let term = match base {
            Some(b) => pk.add(&b, &yh)?,
            None => yh,
        };
        acc = accumulate(pk, acc, term)?;
    }
    match acc {
        Some(c) => Ok(c),
        None => zero_at(pk, cfg.loss_scale(), rng),
    }
}

/// `Enc(E_i) = Enc(LS_i) ⊞ Enc(LL_i)`.
pub fn compute_e(
    pk: &PublicKey,
    ls: &Ciphertext,
    ll: &Ciphertext,
) -> Result<Ciphertext, DisparityError> {
    Ok(pk.add(ls, ll)?)
}

/// Plaintext counterpart of `compute_ls + compute_ll` on the same quantized
/// inputs and surrogates.
pub fn plaintext_entropy(
    client_model: &LogRegModel,
    server_model: &LogRegModel,
    benchmark: &Dataset,
    local: &Dataset,
    cfg: &DisparityConfig,
) -> f64 {
    let q = |v: f64| libm::round(libm::ldexp(v, cfg.fraction_bits as i32));
    let scale = libm::ldexp(1.0, -(cfg.fraction_bits as i32));
    let quantize = |m: &LogRegModel| LogRegModel {
        theta: m.theta.iter().map(|&t| q(t) * scale).collect(),
    };
    let client = quantize(client_model);
    let server = quantize(server_model);
    let loss = |model: &LogRegModel, x: &[f64], y: u8| -> f64 {
        let xq: Vec<f64> = x.iter().map(|&v| q(v) * scale).collect();
        let l = model.linear(&xq);
        let c = &cfg.cubics;
        if y == 1 {
            c.neg_log_sigmoid.eval(l)
        } else if cfg.binary_cross_entropy {
            c.neg_log_one_minus_sigmoid.eval(l)
        } else {
            0.0
        }
    };
    let ls: f64 = benchmark.iter().map(|(x, y)| loss(&client, x, y)).sum();
    let ll: f64 = local.iter().map(|(x, y)| loss(&server, x, y)).sum();
    ls + ll
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightRecord {
    pub user: UserId,
    pub entropy: f64,
    pub relative_entropy: f64,
    pub credibility: f64,
    pub omega: f64,
    pub weight: f64,
    pub samples: usize,
    pub alpha: f64,
    /// `E_i` was at or below [`ENTROPY_FLOOR`] and was clamped.
    pub clamped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightInput {
    pub user: UserId,
    pub entropy: f64,
    pub samples: usize,
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    max + libm::log(values.map(|v| libm::exp(v - max)).sum::<f64>())
}

/// `RE_i = 1/E_i`, `C_i = e^(α RE_i) / Σ_k e^(α RE_k)`, `ω_i = n_i e^(α RE_i)`,
/// `w_i = ω_i / Σ_k ω_k`. Normalizations go through log-sum-exp.
pub fn compute_weights(
    inputs: &[WeightInput],
    alpha: f64,
) -> Result<Vec<WeightRecord>, DisparityError> {
    if inputs.is_empty() {
        return Err(DisparityError::EmptyAliveSet);
    }
    let mut re = Vec::with_capacity(inputs.len());
    for inp in inputs {
        if !inp.entropy.is_finite() {
            return Err(DisparityError::NonFiniteEntropy { user: inp.user });
        }
        re.push(1.0 / libm::fmax(inp.entropy, ENTROPY_FLOOR));
    }
    let log_c: Vec<f64> = re.iter().map(|r| alpha * r).collect();
    let log_omega: Vec<f64> = inputs
        .iter()
        .zip(&log_c)
        .map(|(inp, lc)| libm::log(inp.samples as f64) + lc)
        .collect();
    let c_norm = log_sum_exp(log_c.iter().copied());
    let w_norm = log_sum_exp(log_omega.iter().copied());
    Ok(inputs
        .iter()
        .enumerate()
        .map(|(i, inp)| WeightRecord {
            user: inp.user,
            entropy: inp.entropy,
            relative_entropy: re[i],
            credibility: libm::exp(log_c[i] - c_norm),
            omega: libm::exp(log_omega[i]),
            weight: libm::exp(log_omega[i] - w_norm),
            samples: inp.samples,
            alpha,
            clamped: inp.entropy <= ENTROPY_FLOOR,
        })
        .collect())
}

/// `w_i' = ω_i / Σ_{j ∈ alive} ω_j`.
pub fn renormalize_for_dropout(
    records: &[WeightRecord],
    alive: &[UserId],
) -> Result<Vec<(UserId, f64)>, DisparityError> {
    if alive.is_empty() {
        return Err(DisparityError::EmptyAliveSet);
    }
    let chosen: Vec<&WeightRecord> = alive
        .iter()
        .map(|u| {
            records
                .iter()
                .find(|r| r.user == *u)
                .ok_or(DisparityError::UnknownUser(*u))
        })
        .collect::<Result<_, _>>()?;
    let log_omega: Vec<f64> = chosen
        .iter()
        .map(|r| libm::log(r.samples as f64) + r.alpha * r.relative_entropy)
        .collect();
    let norm = log_sum_exp(log_omega.iter().copied());
    Ok(chosen
        .iter()
        .zip(log_omega)
        .map(|(r, lo)| (r.user, libm::exp(lo - norm)))
        .collect())
}
