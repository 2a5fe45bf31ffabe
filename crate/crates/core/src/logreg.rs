//! Logistic regression, cubic surrogates of its non-linear pieces, and the
//! masked rounds that evaluate those surrogates on Paillier ciphertexts.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Add, Mul, Neg, Sub};

use num_bigint::BigInt;
use num_traits::{One, Zero};
use rand_core::RngCore;
use thiserror::Error;

use crate::arith;
use crate::data::Dataset;
use crate::fixedpoint::{self, FixedPointError, ScaledResidue};
use crate::paillier::{Ciphertext, Keypair, PaillierError, PublicKey};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LogRegError {
    #[error("model has {model} parameters but samples have {features} features")]
    DimensionMismatch { model: usize, features: usize },
    #[error("learning rate must be positive, got {0}")]
    BadLearningRate(f64),
    #[error("expected {expected} cubic outputs, got {got}")]
    ReplyShape { expected: usize, got: usize },
    #[error(transparent)]
    Paillier(#[from] PaillierError),
    #[error(transparent)]
    FixedPoint(#[from] FixedPointError),
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + libm::log1p(libm::exp(-x))
    } else {
        libm::log1p(libm::exp(x))
    }
}

/// `-ln σ(x)`.
pub fn neg_log_sigmoid(x: f64) -> f64 {
    softplus(-x)
}

/// `-ln(1 - σ(x))`.
pub fn neg_log_one_minus_sigmoid(x: f64) -> f64 {
    softplus(x)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRegModel {
    /// Bias first.
    pub theta: Vec<f64>,
}

impl LogRegModel {
    pub fn zeros(features: usize) -> Self {
        Self {
            theta: vec![0.0; features + 1],
        }
    }

    pub fn linear(&self, x: &[f64]) -> f64 {
        self.theta[0]
            + self.theta[1..]
                .iter()
                .zip(x)
                .map(|(t, v)| t * v)
                .sum::<f64>()
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        sigmoid(self.linear(x))
    }

    fn check(&self, data: &Dataset) -> Result<(), LogRegError> {
        if data.dim() + 1 != self.theta.len() {
            return Err(LogRegError::DimensionMismatch {
                model: self.theta.len(),
                features: data.dim(),
            });
        }
        Ok(())
    }

    /// Mean binary cross-entropy `J(θ)`.
    pub fn cost(&self, data: &Dataset) -> Result<f64, LogRegError> {
        self.check(data)?;
        if data.is_empty() {
            return Ok(0.0);
        }
        let total: f64 = data
            .iter()
            .map(|(x, y)| {
                let l = self.linear(x);
                if y == 1 {
                    neg_log_sigmoid(l)
                } else {
                    neg_log_one_minus_sigmoid(l)
                }
            })
            .sum();
        Ok(total / data.len() as f64)
    }

    /// `∇J(θ) = (1/m) Σ (σ(θ·x) - y) (1, x)`.
    pub fn gradient(&self, data: &Dataset) -> Result<Vec<f64>, LogRegError> {
        self.check(data)?;
        let mut g = vec![0.0; self.theta.len()];
        if data.is_empty() {
            return Ok(g);
        }
        for (x, y) in data.iter() {
            let err = self.predict(x) - f64::from(y);
            g[0] += err;
            for (gk, xk) in g[1..].iter_mut().zip(x) {
                *gk += err * xk;
            }
        }
        let m = data.len() as f64;
        g.iter_mut().for_each(|v| *v /= m);
        Ok(g)
    }

    pub fn accuracy(&self, data: &Dataset) -> f64 {
        if data.is_empty() {
            return 1.0;
        }
        let hits = data
            .iter()
            .filter(|(x, y)| u8::from(self.predict(x) >= 0.5) == *y)
            .count();
        hits as f64 / data.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Mini-batch size; `None` is full-batch gradient descent.
    pub batch: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            epochs: 100,
            batch: None,
        }
    }
}

/// Gradient descent from the all-zero model.
pub fn train(data: &Dataset, config: &TrainConfig) -> Result<LogRegModel, LogRegError> {
    train_from(LogRegModel::zeros(data.dim()), data, config)
}

/// Gradient descent starting at `model`; batches are taken in order.
pub fn train_from(
    mut model: LogRegModel,
    data: &Dataset,
    config: &TrainConfig,
) -> Result<LogRegModel, LogRegError> {
    if config.learning_rate.is_nan() || config.learning_rate <= 0.0 {
        return Err(LogRegError::BadLearningRate(config.learning_rate));
    }
    model.check(data)?;
    if data.is_empty() {
        return Ok(model);
    }
    let batch = config.batch.unwrap_or(data.len()).clamp(1, data.len());
    let indices: Vec<usize> = (0..data.len()).collect();
    for _ in 0..config.epochs {
        for chunk in indices.chunks(batch) {
            let part;
            let view = if batch == data.len() {
                data
            } else {
                part = data.subset(chunk);
                &part
            };
            let g = model.gradient(view)?;
            for (t, gk) in model.theta.iter_mut().zip(g) {
                *t -= config.learning_rate * gk;
            }
        }
    }
    Ok(model)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CubicTarget {
    Sigmoid,
    NegLogSigmoid,
    NegLogOneMinusSigmoid,
}

impl CubicTarget {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            CubicTarget::Sigmoid => sigmoid(x),
            CubicTarget::NegLogSigmoid => neg_log_sigmoid(x),
            CubicTarget::NegLogOneMinusSigmoid => neg_log_one_minus_sigmoid(x),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CubicTarget::Sigmoid => "sigmoid",
            CubicTarget::NegLogSigmoid => "neg_log_sigmoid",
            CubicTarget::NegLogOneMinusSigmoid => "neg_log_one_minus_sigmoid",
        }
    }
}

/// `s0 + s1 x + s2 x^2 + s3 x^3` with a bound on its error over `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CubicPoly {
    pub coeffs: [f64; 4],
    pub lo: f64,
    pub hi: f64,
    pub max_error: f64,
}

impl CubicPoly {
    pub fn eval(&self, x: f64) -> f64 {
        horner(&self.coeffs, x)
    }
}

fn horner(c: &[f64; 4], x: f64) -> f64 {
    ((c[3] * x + c[2]) * x + c[1]) * x + c[0]
}

pub const FIT_NODES: usize = 1000;
/// Grid used to measure the declared error bound.
pub const BOUND_NODES: usize = 100_001;
pub const DEFAULT_INTERVAL: (f64, f64) = (-6.0, 6.0);

/// Least-squares cubic on `FIT_NODES` uniform nodes of `[lo, hi]`.
///
/// For the sigmoid the fit is constrained to `s0 = 1/2, s2 = 0`.
pub fn fit_cubic(target: CubicTarget, lo: f64, hi: f64) -> CubicPoly {
    assert!(lo < hi, "degenerate interval");
    let nodes: Vec<f64> = (0..FIT_NODES)
        .map(|i| lo + (hi - lo) * i as f64 / (FIT_NODES - 1) as f64)
        .collect();
    // Fit in u = x / h to keep the normal equations well conditioned.
    let h = libm::fmax(libm::fabs(lo), libm::fabs(hi));
    let coeffs = match target {
        CubicTarget::Sigmoid => {
            let c = least_squares(&nodes, &[1, 3], h, |x| sigmoid(x) - 0.5);
            [0.5, c[0] / h, 0.0, c[1] / (h * h * h)]
        }
        _ => {
            let c = least_squares(&nodes, &[0, 1, 2, 3], h, |x| target.eval(x));
            [c[0], c[1] / h, c[2] / (h * h), c[3] / (h * h * h)]
        }
    };
    let max_error = (0..BOUND_NODES)
        .map(|i| {
            let x = lo + (hi - lo) * i as f64 / (BOUND_NODES - 1) as f64;
            libm::fabs(horner(&coeffs, x) - target.eval(x))
        })
        .fold(0.0, f64::max);
    CubicPoly {
        coeffs,
        lo,
        hi,
        // Small margin so that other grids of the interval stay inside the bound.
        max_error: max_error * (1.0 + 1e-3) + 1e-9,
    }
}

fn least_squares(nodes: &[f64], powers: &[i32], h: f64, f: impl Fn(f64) -> f64) -> Vec<f64> {
    let k = powers.len();
    let mut ata = vec![vec![0.0; k]; k];
    let mut atb = vec![0.0; k];
    for &x in nodes {
        let u = x / h;
        let row: Vec<f64> = powers.iter().map(|&p| libm::pow(u, f64::from(p))).collect();
        let y = f(x);
        for i in 0..k {
            atb[i] += row[i] * y;
            for j in 0..k {
                ata[i][j] += row[i] * row[j];
            }
        }
    }
    solve(ata, atb)
}

/// Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| libm::fabs(a[i][col]).total_cmp(&libm::fabs(a[j][col])))
            .expect("non-empty system");
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            for c in col..n {
                a[row][c] -= factor * a[col][c];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|c| a[row][c] * x[c]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// Frozen output of [`fit_cubic`] on [`DEFAULT_INTERVAL`]; regenerate with
/// `fedwagg fit-cubics`.
pub const SIGMOID_CUBIC: CubicPoly = CubicPoly {
    coeffs: [0.5, 0.18050489917825754, 0.0, -0.003085492951087875],
    lo: -6.0,
    hi: 6.0,
    max_error: 0.08104542466800993,
};

pub const NEG_LOG_SIGMOID_CUBIC: CubicPoly = CubicPoly {
    coeffs: [
        0.8396069006828732,
        -0.5000000000000024,
        0.06640246840467091,
        5.290616367355962e-17,
    ],
    lo: -6.0,
    hi: 6.0,
    max_error: 0.22784769919141304,
};

pub const NEG_LOG_ONE_MINUS_SIGMOID_CUBIC: CubicPoly = CubicPoly {
    coeffs: [
        0.8396069006828705,
        0.5000000000000026,
        0.06640246840467118,
        -8.44299496643162e-17,
    ],
    lo: -6.0,
    hi: 6.0,
    max_error: 0.22784769919141903,
};

pub fn frozen_cubic(target: CubicTarget) -> &'static CubicPoly {
    match target {
        CubicTarget::Sigmoid => &SIGMOID_CUBIC,
        CubicTarget::NegLogSigmoid => &NEG_LOG_SIGMOID_CUBIC,
        CubicTarget::NegLogOneMinusSigmoid => &NEG_LOG_ONE_MINUS_SIGMOID_CUBIC,
    }
}

/// Correction terms of the masked cubic identity. For `z = l + r`:
///
/// `p(l) = p(z) + constant + z2_factor·z² + l_factor·l`
///
/// with `constant = s0 − p(r) + 3 s3 r³`, `z2_factor = −3 s3 r` and
/// `l_factor = 3 s3 r² − 2 s2 r`. Generic so the identity can be checked in
/// exact rational arithmetic as well as over `Z_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskTerms<T> {
    pub constant: T,
    pub z2_factor: T,
    pub l_factor: T,
}

pub fn cubic_eval<T>(c: &[T; 4], x: &T) -> T
where
    T: Clone + Add<Output = T> + Mul<Output = T>,
{
    ((c[3].clone() * x.clone() + c[2].clone()) * x.clone() + c[1].clone()) * x.clone()
        + c[0].clone()
}

pub fn mask_terms<T>(c: &[T; 4], r: &T) -> MaskTerms<T>
where
    T: Clone + Add<Output = T> + Sub<Output = T> + Mul<Output = T> + Neg<Output = T> + One,
{
    let two = T::one() + T::one();
    let three = two.clone() + T::one();
    let r2 = r.clone() * r.clone();
    let r3 = r2.clone() * r.clone();
    MaskTerms {
        constant: c[0].clone() - cubic_eval(c, r) + three.clone() * c[3].clone() * r3,
        z2_factor: -(three.clone() * c[3].clone() * r.clone()),
        l_factor: three * c[3].clone() * r2 - two * c[2].clone() * r.clone(),
    }
}

/// `p(z) + constant + z2_factor·z² + l_factor·l`.
pub fn assemble<T>(terms: &MaskTerms<T>, p_z: &T, z2: &T, l: &T) -> T
where
    T: Clone + Add<Output = T> + Mul<Output = T>,
{
    p_z.clone()
        + terms.constant.clone()
        + terms.z2_factor.clone() * z2.clone()
        + terms.l_factor.clone() * l.clone()
}

/// Cubic with integer coefficients `S_k = round(s_k 2^f)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixedCubic {
    pub coeffs: [BigInt; 4],
    pub coeff_scale: u32,
}

impl FixedCubic {
    pub fn from_poly(p: &CubicPoly, coeff_scale: u32) -> Result<Self, FixedPointError> {
        let mut coeffs: [BigInt; 4] = Default::default();
        for (dst, &s) in coeffs.iter_mut().zip(&p.coeffs) {
            *dst = fixedpoint::real_to_scaled_int(s, coeff_scale as i32)?;
        }
        Ok(Self {
            coeffs,
            coeff_scale,
        })
    }

    /// Coefficients of the integer cubic in `X = x 2^F`:
    /// `S0 2^3F + S1 2^2F X + S2 2^F X^2 + S3 X^3`, valued at scale `f + 3F`.
    pub fn for_input_scale(&self, input_scale: u32) -> [BigInt; 4] {
        let f = input_scale as usize;
        [
            &self.coeffs[0] << (3 * f),
            &self.coeffs[1] << (2 * f),
            &self.coeffs[2] << f,
            self.coeffs[3].clone(),
        ]
    }

    pub fn output_scale(&self, input_scale: u32) -> i32 {
        (self.coeff_scale + 3 * input_scale) as i32
    }

    /// The quantized real coefficients.
    pub fn real_coeffs(&self) -> [f64; 4] {
        let mut out = [0.0; 4];
        for (o, c) in out.iter_mut().zip(&self.coeffs) {
            *o = fixedpoint::decode_signed(c, self.coeff_scale as i32).unwrap_or(f64::NAN);
        }
        out
    }

    /// Plaintext evaluation with the quantized coefficients.
    pub fn eval(&self, x: f64) -> f64 {
        horner(&self.real_coeffs(), x)
    }
}

/// Bit length of the additive mask for an input at `input_scale`: a real
/// mask in `[0, 2^(kappa - fraction_bits))`.
pub fn mask_bits(kappa: u32, input_scale: u32, fraction_bits: u32) -> u64 {
    u64::from(kappa + input_scale).saturating_sub(u64::from(fraction_bits))
}

/// Server state of one masked cubic round.
#[derive(Debug, Clone)]
pub struct CubicSession {
    l: Ciphertext,
    r: BigInt,
    input_scale: u32,
}

/// Plaintexts the user encrypts after decrypting `Enc(z)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CubicReply {
    pub z2: Ciphertext,
    pub values: Vec<Ciphertext>,
}

impl CubicSession {
    /// Draws `r` uniformly from `[0, 2^mask_bits)` and returns `Enc(l + r)`.
    pub fn start<R: RngCore + ?Sized>(
        pk: &PublicKey,
        l: &Ciphertext,
        mask_bits: u64,
        rng: &mut R,
    ) -> Result<(Self, Ciphertext), LogRegError> {
        let r = BigInt::from(arith::random_bits(mask_bits, rng));
        Self::with_mask(pk, l, r)
    }

    /// Deterministic mask; `r = 0` disables masking.
    pub fn with_mask(
        pk: &PublicKey,
        l: &Ciphertext,
        r: BigInt,
    ) -> Result<(Self, Ciphertext), LogRegError> {
        let input_scale = u32::try_from(l.scale_exp)
            .map_err(|_| FixedPointError::ScaleOutOfRange(l.scale_exp))?;
        let shift = ScaledResidue::new(arith::to_residue(&r, pk.n()), l.scale_exp);
        let z = pk.add_plain(l, &shift)?;
        Ok((
            Self {
                l: l.clone(),
                r,
                input_scale,
            },
            z,
        ))
    }

    pub fn mask(&self) -> &BigInt {
        &self.r
    }

    /// `Enc(p(l))` for each cubic, all at scale `f + 3F`.
    pub fn finish(
        &self,
        pk: &PublicKey,
        cubics: &[FixedCubic],
        reply: &CubicReply,
    ) -> Result<Vec<Ciphertext>, LogRegError> {
        if reply.values.len() != cubics.len() {
            return Err(LogRegError::ReplyShape {
                expected: cubics.len(),
                got: reply.values.len(),
            });
        }
        let n = pk.n();
        let fs = self.input_scale as i32;
        cubics
            .iter()
            .zip(&reply.values)
            .map(|(cubic, p_z)| {
                let c = cubic.for_input_scale(self.input_scale);
                let out_scale = cubic.output_scale(self.input_scale);
                let terms = mask_terms(&c, &self.r);
                let k = |v: &BigInt, scale: i32| ScaledResidue::new(arith::to_residue(v, n), scale);
                let z2_term = pk.scalar_mul(&reply.z2, &k(&terms.z2_factor, out_scale - 2 * fs));
                let l_term = pk.scalar_mul(&self.l, &k(&terms.l_factor, out_scale - fs));
                let acc = pk.add(p_z, &z2_term)?;
                let acc = pk.add(&acc, &l_term)?;
                Ok(pk.add_plain(&acc, &k(&terms.constant, out_scale))?)
            })
            .collect()
    }
}

/// User side: decrypts `z`, returns `Enc(z^2)` and `Enc(P(z))` per cubic.
pub fn cubic_reply<R: RngCore + ?Sized>(
    keys: &Keypair,
    z: &Ciphertext,
    cubics: &[FixedCubic],
    rng: &mut R,
) -> Result<CubicReply, LogRegError> {
    let pk = &keys.public;
    let n = pk.n();
    let input_scale =
        u32::try_from(z.scale_exp).map_err(|_| FixedPointError::ScaleOutOfRange(z.scale_exp))?;
    let z_val = arith::centered(&keys.decrypt(z)?, n);
    let z2 = &z_val * &z_val;
    let enc_z2 = pk.encrypt(&arith::to_residue(&z2, n), 2 * z.scale_exp, rng)?;
    let values = cubics
        .iter()
        .map(|cubic| {
            let c = cubic.for_input_scale(input_scale);
            let p = cubic_eval(&c, &z_val);
            pk.encrypt(
                &arith::to_residue(&p, n),
                cubic.output_scale(input_scale),
                rng,
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CubicReply { z2: enc_z2, values })
}

/// One full masked cubic round run in-process.
pub fn masked_cubic_open<R: RngCore + ?Sized>(
    keys: &Keypair,
    l: &Ciphertext,
    r: Option<BigInt>,
    mask_bits: u64,
    cubics: &[FixedCubic],
    rng: &mut R,
) -> Result<Vec<Ciphertext>, LogRegError> {
    let pk = &keys.public;
    let (session, z) = match r {
        Some(r) => CubicSession::with_mask(pk, l, r)?,
        None => CubicSession::start(pk, l, mask_bits, rng)?,
    };
    let reply = cubic_reply(keys, &z, cubics, rng)?;
    session.finish(pk, cubics, &reply)
}

/// The user's answer in the masked linear round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinearReply {
    /// `h + r` as a residue at the scale of `h`.
    pub h_plus_r: ScaledResidue,
    pub y_r: Ciphertext,
    /// `Enc(r)`, lets the server check `h + r` with a plaintext proof.
    pub r: Ciphertext,
}

/// User side: decrypts `Enc(h)`, masks it with `r` from `[0, 2^mask_bits)`.
pub fn linear_reply<R: RngCore + ?Sized>(
    keys: &Keypair,
    h: &Ciphertext,
    y: u8,
    mask_bits: u64,
    rng: &mut R,
) -> Result<LinearReply, LogRegError> {
    let r = arith::random_bits(mask_bits, rng);
    linear_reply_with_mask(keys, h, y, &r, rng)
}

pub fn linear_reply_with_mask<R: RngCore + ?Sized>(
    keys: &Keypair,
    h: &Ciphertext,
    y: u8,
    r: &num_bigint::BigUint,
    rng: &mut R,
) -> Result<LinearReply, LogRegError> {
    let pk = &keys.public;
    let n = pk.n();
    let r = r % n;
    let h_val = keys.decrypt(h)?;
    let h_plus_r = ScaledResidue::new((h_val + &r) % n, h.scale_exp);
    let y_r = if y == 0 {
        num_bigint::BigUint::zero()
    } else {
        r.clone()
    };
    Ok(LinearReply {
        h_plus_r,
        y_r: pk.encrypt(&y_r, h.scale_exp, rng)?,
        r: pk.encrypt(&r, h.scale_exp, rng)?,
    })
}

/// Server side: `Enc(y h) = Enc(y) ⊠ (h + r) ⊞ Enc(y r)^(-1)`.
pub fn masked_linear_open(
    pk: &PublicKey,
    enc_y: &Ciphertext,
    reply: &LinearReply,
) -> Result<Ciphertext, LogRegError> {
    let scaled = pk.scalar_mul(enc_y, &reply.h_plus_r);
    Ok(pk.sub(&scaled, &reply.y_r)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixedpoint::FixedPointCodec;
    use crate::paillier::{generate_keypair, keygen};
    use num_bigint::BigUint;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(2.0) - 0.880_797_077_977_882_3).abs() < 1e-15);
        for x in [-30.0, -2.5, 0.1, 7.0] {
            assert!((sigmoid(x) + sigmoid(-x) - 1.0).abs() < 1e-15);
        }
        assert!((neg_log_sigmoid(0.0) - core::f64::consts::LN_2).abs() < 1e-15);
        assert!((neg_log_sigmoid(800.0)).abs() < 1e-300);
        assert!((neg_log_one_minus_sigmoid(800.0) - 800.0).abs() < 1e-9);
    }

    #[test]
    fn zero_epochs_keep_zero_model() {
        let d = Dataset::new(vec![vec![1.0], vec![0.0]], vec![1, 0]).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert_eq!(train(&d, &cfg).unwrap().theta, [0.0, 0.0]);
    }

    #[test]
    fn separable_pair() {
        let d = Dataset::new(vec![vec![1.0], vec![-1.0]], vec![1, 0]).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.5,
            epochs: 200,
            batch: None,
        };
        let m = train(&d, &cfg).unwrap();
        assert_eq!(m.accuracy(&d), 1.0);
    }

    #[test]
    fn single_class() {
        let d = Dataset::new(vec![vec![0.2], vec![0.7], vec![0.9]], vec![1, 1, 1]).unwrap();
        let m = train(&d, &TrainConfig::default()).unwrap();
        assert!(d.iter().all(|(x, _)| m.predict(x) >= 0.5));
    }

    #[test]
    fn bad_inputs() {
        let d = Dataset::new(vec![vec![0.2, 0.1]], vec![1]).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        assert_eq!(
            train(&d, &cfg).unwrap_err(),
            LogRegError::BadLearningRate(0.0)
        );
        let m = LogRegModel::zeros(1);
        assert!(matches!(
            m.cost(&d),
            Err(LogRegError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn cost_decreases_full_batch() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let d = crate::data::synthetic(100, &[0.5, -2.0, 3.0], &mut rng);
        let mut m = LogRegModel::zeros(2);
        let cfg = TrainConfig {
            learning_rate: 0.5,
            epochs: 1,
            batch: None,
        };
        let mut last = m.cost(&d).unwrap();
        for _ in 0..100 {
            m = train_from(m, &d, &cfg).unwrap();
            let c = m.cost(&d).unwrap();
            assert!(c <= last + 1e-15);
            last = c;
        }
    }

    #[test]
    fn minibatch_runs() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let d = crate::data::synthetic(50, &[0.0, 4.0], &mut rng);
        let cfg = TrainConfig {
            learning_rate: 0.5,
            epochs: 20,
            batch: Some(7),
        };
        let m = train(&d, &cfg).unwrap();
        assert!(m.accuracy(&d) > 0.6);
    }

    #[test]
    fn sigmoid_fit_constraints() {
        let p = fit_cubic(CubicTarget::Sigmoid, -6.0, 6.0);
        assert!((p.coeffs[0] - 0.5).abs() < 1e-6);
        assert_eq!(p.coeffs[2], 0.0);
        let grid = (0..10_000).map(|i| -6.0 + 12.0 * i as f64 / 9999.0);
        let worst = grid
            .map(|x| (p.eval(x) - sigmoid(x)).abs())
            .fold(0.0, f64::max);
        assert!(worst <= p.max_error);
        assert!(p.max_error < 0.082, "{}", p.max_error);
    }

    #[test]
    fn odd_cubic_error_floor() {
        // The error of this odd cubic alternates in sign at three points of
        // (0, 6] with magnitude above 0.056, so no s1 x + s3 x^3 gets the
        // sigmoid within 0.056 on [-6, 6].
        let p = |x: f64| 0.5 + 0.181_799_22 * x - 0.003_006_37 * x * x * x;
        let errs: Vec<f64> = [1.324, 4.328, 6.0]
            .iter()
            .map(|&x| p(x) - sigmoid(x))
            .collect();
        assert!(errs[0] < 0.0 && errs[1] > 0.0 && errs[2] < 0.0);
        assert!(errs.iter().all(|e| e.abs() > 0.056), "{errs:?}");
    }

    #[test]
    fn frozen_constants_match_fit() {
        for t in [
            CubicTarget::Sigmoid,
            CubicTarget::NegLogSigmoid,
            CubicTarget::NegLogOneMinusSigmoid,
        ] {
            let fresh = fit_cubic(t, DEFAULT_INTERVAL.0, DEFAULT_INTERVAL.1);
            let frozen = frozen_cubic(t);
            for (a, b) in fresh.coeffs.iter().zip(&frozen.coeffs) {
                assert!(
                    (a - b).abs() <= 1e-12 * a.abs().max(1.0),
                    "{t:?}: {a} vs {b}"
                );
            }
            assert!((fresh.max_error - frozen.max_error).abs() < 1e-12);
        }
    }

    #[test]
    fn mask_identity_in_floats() {
        let c: [f64; 4] = [0.5, 0.197, 0.0, -0.004];
        let (l, r) = (1.0f64, 2.0f64);
        let terms = mask_terms(&c, &r);
        let z = l + r;
        let got = assemble(&terms, &cubic_eval(&c, &z), &(z * z), &l);
        assert!((got - cubic_eval(&c, &l)).abs() < 1e-12);
        assert!((got - 0.693).abs() < 1e-12);
    }

    fn sigmoid_fixed() -> FixedCubic {
        let p = CubicPoly {
            coeffs: [0.5, 0.197, 0.0, -0.004],
            lo: -6.0,
            hi: 6.0,
            max_error: 0.0,
        };
        FixedCubic::from_poly(&p, 27).unwrap()
    }

    #[test]
    fn masked_cubic_round_trip() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let kp = generate_keypair(512, &mut rng);
        let codec = FixedPointCodec::standard(kp.n().clone()).unwrap();
        let cubic = sigmoid_fixed();
        let cubics = [cubic.clone()];
        for (l, r) in [
            (0.0, Some(0i64)),
            (1.0, Some(2)),
            (-3.7, None),
            (5.25, None),
        ] {
            let enc_l = kp
                .public
                .encrypt_residue(&codec.encode(l).unwrap(), &mut rng)
                .unwrap();
            let r = r.map(|v| BigInt::from(v) << 27usize);
            let bits = mask_bits(80, 27, 27);
            let out = masked_cubic_open(&kp, &enc_l, r, bits, &cubics, &mut rng).unwrap();
            assert_eq!(out[0].scale_exp, 27 + 81);
            let got = codec.decode(&kp.decrypt_residue(&out[0]).unwrap()).unwrap();
            assert!((got - cubic.eval(l)).abs() < 1e-6, "l = {l}: {got}");
        }
    }

    #[test]
    fn masked_linear_round() {
        let kp = keygen(&BigUint::from(1_000_003u32), &BigUint::from(1_000_033u32)).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let pk = &kp.public;
        let h = pk.encrypt(&BigUint::from(3u32), 0, &mut rng).unwrap();
        for (y, expected) in [(1u8, 3u32), (0, 0)] {
            let enc_y = pk.encrypt(&BigUint::from(y), 0, &mut rng).unwrap();
            let reply = linear_reply_with_mask(&kp, &h, y, &BigUint::from(5u32), &mut rng).unwrap();
            assert_eq!(reply.h_plus_r.value, BigUint::from(8u32));
            let out = masked_linear_open(pk, &enc_y, &reply).unwrap();
            assert_eq!(kp.decrypt(&out).unwrap(), BigUint::from(expected));
        }
        let enc_y = pk.encrypt(&BigUint::from(1u32), 0, &mut rng).unwrap();
        let reply = linear_reply_with_mask(&kp, &h, 1, &BigUint::zero(), &mut rng).unwrap();
        assert_eq!(
            kp.decrypt(&masked_linear_open(pk, &enc_y, &reply).unwrap())
                .unwrap(),
            BigUint::from(3u32)
        );
    }

    #[test]
    fn reply_shape_checked() {
        let kp = keygen(&BigUint::from(1_000_003u32), &BigUint::from(1_000_033u32)).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let l = kp
            .public
            .encrypt(&BigUint::from(1u32), 0, &mut rng)
            .unwrap();
        let (session, z) = CubicSession::with_mask(&kp.public, &l, BigInt::zero()).unwrap();
        let reply = cubic_reply(&kp, &z, &[], &mut rng).unwrap();
        assert_eq!(
            session
                .finish(&kp.public, &[sigmoid_fixed()], &reply)
                .unwrap_err(),
            LogRegError::ReplyShape {
                expected: 1,
                got: 0
            }
        );
    }
}
