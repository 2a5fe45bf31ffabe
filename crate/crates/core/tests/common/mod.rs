#![allow(dead_code)]

use fedwagg_core::data::{synthetic, Dataset};
use fedwagg_core::logreg::{LogRegModel, NEG_LOG_ONE_MINUS_SIGMOID_CUBIC, NEG_LOG_SIGMOID_CUBIC};
use fedwagg_core::protocol::{party_rng, ProtocolConfig};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::ToPrimitive;

pub const THETA: [f64; 3] = [-0.5, 2.0, -1.0];

pub fn datasets(n: usize, per_client: usize, bench: usize, seed: u64) -> (Vec<Dataset>, Dataset) {
    let mut rng = party_rng(seed, b"test-data", 0);
    let clients = (0..n)
        .map(|_| synthetic(per_client, &THETA, &mut rng))
        .collect();
    (clients, synthetic(bench, &THETA, &mut rng))
}

pub fn toy_config(n: usize, seed: u64) -> ProtocolConfig {
    let mut c = ProtocolConfig::new(n);
    c.paillier_bits = 256;
    c.seed = seed;
    c.train.epochs = 20;
    c
}

fn quantize(x: f64, bits: u32) -> BigRational {
    let scaled = (x * 2f64.powi(bits as i32)).round();
    BigRational::new(
        BigInt::from(scaled as i128),
        BigInt::from(1u8) << bits as usize,
    )
}

fn cubic(coeffs: &[f64; 4], l: &BigRational) -> BigRational {
    coeffs
        .iter()
        .rev()
        .fold(BigRational::from_integer(0.into()), |acc, &c| {
            acc * l + quantize(c, 27)
        })
}

fn loss(model: &LogRegModel, x: &[f64], y: u8, binary: bool) -> BigRational {
    let mut l = quantize(model.theta[0], 27);
    for (t, v) in model.theta[1..].iter().zip(x) {
        l += quantize(*t, 27) * quantize(*v, 27);
    }
    match (y, binary) {
        (1, _) => cubic(&NEG_LOG_SIGMOID_CUBIC.coeffs, &l),
        (_, true) => cubic(&NEG_LOG_ONE_MINUS_SIGMOID_CUBIC.coeffs, &l),
        _ => BigRational::from_integer(0.into()),
    }
}

/// `E` over 27-bit quantized models, features and cubic coefficients,
/// evaluated in exact rational arithmetic.
pub fn exact_entropy(
    client: &LogRegModel,
    server: &LogRegModel,
    benchmark: &Dataset,
    local: &Dataset,
    binary: bool,
) -> f64 {
    let mut e = BigRational::from_integer(0.into());
    for (x, y) in benchmark.iter() {
        e += loss(client, x, y, binary);
    }
    for (x, y) in local.iter() {
        e += loss(server, x, y, binary);
    }
    e.to_f64().unwrap()
}

/// `Σ ω_i M_i / Σ ω_i` over `users` with `ω_i = n_i e^(α / E_i)`.
pub fn weighted_oracle(
    users: &[u32],
    models: impl Fn(u32) -> Vec<f64>,
    entropy: impl Fn(u32) -> f64,
    samples: impl Fn(u32) -> usize,
    alpha: f64,
) -> Vec<f64> {
    let omega: Vec<f64> = users
        .iter()
        .map(|&u| samples(u) as f64 * (alpha / entropy(u).max(1e-6)).exp())
        .collect();
    let total: f64 = omega.iter().sum();
    let dim = models(users[0]).len();
    (0..dim)
        .map(|k| {
            users
                .iter()
                .zip(&omega)
                .map(|(&u, w)| w * models(u)[k])
                .sum::<f64>()
                / total
        })
        .collect()
}
