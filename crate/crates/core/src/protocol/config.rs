use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use thiserror::Error;

use crate::fixedpoint::{DEFAULT_FRACTION_BITS, DEFAULT_INTEGER_BITS};
use crate::logreg::TrainConfig;
use crate::secagg::{SignatureScheme, UserId};
use crate::zkpopk::ChallengeMode;

/// Smallest admissible threshold, `⌊2n/3⌋ + 1`.
pub const fn min_threshold(n: usize) -> usize {
    2 * n / 3 + 1
}

/// Largest admissible number of malicious clients, `⌈n/3⌉ − 1`.
pub const fn max_adversaries(n: usize) -> usize {
    n.div_ceil(3).saturating_sub(1)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ToleranceError {
    #[error("at least one client is required")]
    NoClients,
    #[error("threshold {t} is below the minimum {min} for {n} clients")]
    ThresholdTooLow { n: usize, t: usize, min: usize },
    #[error("threshold {t} exceeds the {n} clients")]
    ThresholdAboveClients { n: usize, t: usize },
    #[error("{got} malicious clients exceed the maximum {max} for {n} clients")]
    TooManyAdversaries { n: usize, got: usize, max: usize },
}

pub fn validate_tolerance(n: usize, t: usize, adversaries: usize) -> Result<(), ToleranceError> {
    if n == 0 {
        return Err(ToleranceError::NoClients);
    }
    let min = min_threshold(n);
    if t < min {
        return Err(ToleranceError::ThresholdTooLow { n, t, min });
    }
    if t > n {
        return Err(ToleranceError::ThresholdAboveClients { n, t });
    }
    let max = max_adversaries(n);
    if adversaries > max {
        return Err(ToleranceError::TooManyAdversaries {
            n,
            got: adversaries,
            max,
        });
    }
    Ok(())
}

/// Point inside a round where a scheduled client goes silent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DropPoint {
    /// Before any seed is shared.
    Init,
    /// After `Enc(R_i)`, before the model upload.
    CompE,
    /// After receiving `Enc(E_i)`, without publishing `E_i`.
    PoKE,
    /// After uploading the masked model, before finishing its proof.
    PoKM,
    /// After passing every proof, before signing the alive set.
    WAgg,
}

impl DropPoint {
    pub fn name(self) -> &'static str {
        match self {
            Self::Init => "init",
            Self::CompE => "compe",
            Self::PoKE => "poke",
            Self::PoKM => "pokm",
            Self::WAgg => "wagg",
        }
    }
}

impl FromStr for DropPoint {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [Self::Init, Self::CompE, Self::PoKE, Self::PoKM, Self::WAgg]
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| ConfigError::Parse(s.into()))
    }
}

/// Honest-client dropout per round. Phase fractions become `⌊R·n⌋` clients.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutSchedule {
    pub phase1: f64,
    pub phase2: f64,
    pub phase1_point: DropPoint,
    pub phase2_point: DropPoint,
    /// Explicit drops on top of the fractions.
    pub scripted: Vec<(UserId, DropPoint)>,
}

impl Default for DropoutSchedule {
    fn default() -> Self {
        Self {
            phase1: 0.0,
            phase2: 0.0,
            phase1_point: DropPoint::PoKE,
            phase2_point: DropPoint::PoKM,
            scripted: Vec::new(),
        }
    }
}

impl DropoutSchedule {
    pub fn phase_counts(&self, n: usize) -> (usize, usize) {
        // The tolerance keeps 0.3 · 50 at 15.
        let count = |r: f64| libm::floor(r * n as f64 + 1e-9) as usize;
        (count(self.phase1), count(self.phase2))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Behavior {
    /// Publishes `E_i − 0.5` instead of `E_i`.
    FraudulentEDecryption,
    /// Adds 1.0 to the first coordinate of the masked weighted model.
    FraudulentWeightedModel,
    /// The server shows the target an alive set without `hidden`.
    InconsistentDropoutView { hidden: UserId },
}

impl Behavior {
    /// True for behaviors carried out by a client.
    pub fn is_client(self) -> bool {
        !matches!(self, Self::InconsistentDropoutView { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AdversaryScript {
    pub target: UserId,
    pub behavior: Behavior,
    /// Round (from 1) in which the behavior fires; `None` fires every round.
    pub round: Option<u64>,
}

impl AdversaryScript {
    pub fn fires(&self, round: u64) -> bool {
        self.round.is_none_or(|r| r == round)
    }
}

/// `fraud-e:ID`, `fraud-m:ID`, `view:ID:HIDDEN`, each with an optional `@ROUND`.
impl FromStr for AdversaryScript {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ConfigError::Parse(s.into());
        let (body, round) = match s.split_once('@') {
            Some((b, r)) => (b, Some(r.trim().parse::<u64>().map_err(|_| bad())?)),
            None => (s, None),
        };
        let parts: Vec<&str> = body.split(':').map(str::trim).collect();
        let id = |i: usize| -> Result<UserId, ConfigError> {
            parts.get(i).and_then(|p| p.parse().ok()).ok_or_else(bad)
        };
        let behavior = match (parts[0], parts.len()) {
            ("fraud-e", 2) => Behavior::FraudulentEDecryption,
            ("fraud-m", 2) => Behavior::FraudulentWeightedModel,
            ("view", 3) => Behavior::InconsistentDropoutView { hidden: id(2)? },
            _ => return Err(bad()),
        };
        Ok(Self {
            target: id(1)?,
            behavior,
            round,
        })
    }
}

impl fmt::Display for AdversaryScript {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.behavior {
            Behavior::FraudulentEDecryption => write!(f, "fraud-e:{}", self.target)?,
            Behavior::FraudulentWeightedModel => write!(f, "fraud-m:{}", self.target)?,
            Behavior::InconsistentDropoutView { hidden } => {
                write!(f, "view:{}:{}", self.target, hidden)?
            }
        }
        if let Some(r) = self.round {
            write!(f, "@{r}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    Full,
    /// Masking only: unweighted mean, no encryption, no proofs.
    Baseline,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error(transparent)]
    Tolerance(#[from] ToleranceError),
    #[error("client id {0} is outside 1..=n")]
    UnknownClient(UserId),
    #[error("dropout fraction {0} is outside [0, 1]")]
    Fraction(f64),
    #[error("dropout needs {needed} honest clients, only {available} available")]
    NotEnoughHonest { needed: usize, available: usize },
    #[error("alpha must be finite")]
    Alpha,
    #[error("key size of {0} bits is too small")]
    KeyBits(u64),
    #[error("cannot parse {0:?}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolConfig {
    pub n_clients: usize,
    pub threshold: usize,
    pub paillier_bits: u64,
    pub kappa: u32,
    pub alpha: f64,
    pub integer_bits: u32,
    pub fraction_bits: u32,
    /// Bits of the secure-aggregation ring `Z_{2^k}`.
    pub ring_bits: u32,
    pub dropout: DropoutSchedule,
    pub adversaries: Vec<AdversaryScript>,
    pub seed: u64,
    pub mode: Mode,
    pub verify_h: bool,
    pub binary_cross_entropy: bool,
    pub challenge_mode: ChallengeMode,
    pub signature_scheme: SignatureScheme,
    pub train: TrainConfig,
}

/// Smallest key for which `Ω·M + R` and every loss stays below `n / 2`.
pub const MIN_KEY_BITS: u64 = 256;

impl ProtocolConfig {
    /// Defaults with the minimum admissible threshold.
    pub fn new(n_clients: usize) -> Self {
        Self {
            n_clients,
            threshold: min_threshold(n_clients),
            paillier_bits: 1024,
            kappa: 80,
            alpha: 1.0,
            integer_bits: DEFAULT_INTEGER_BITS,
            fraction_bits: DEFAULT_FRACTION_BITS,
            ring_bits: 168,
            dropout: DropoutSchedule::default(),
            adversaries: Vec::new(),
            seed: 0,
            mode: Mode::Full,
            verify_h: true,
            binary_cross_entropy: false,
            challenge_mode: ChallengeMode::Interactive,
            signature_scheme: SignatureScheme::Ed25519,
            train: TrainConfig::default(),
        }
    }

    pub fn clients(&self) -> impl Iterator<Item = UserId> {
        1..=self.n_clients as UserId
    }

    /// Distinct clients running a client-side behavior.
    pub fn malicious_clients(&self) -> BTreeSet<UserId> {
        self.adversaries
            .iter()
            .filter(|a| a.behavior.is_client())
            .map(|a| a.target)
            .collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let n = self.n_clients;
        let known = |u: UserId| (1..=n as UserId).contains(&u);
        for a in &self.adversaries {
            if !known(a.target) {
                return Err(ConfigError::UnknownClient(a.target));
            }
            if let Behavior::InconsistentDropoutView { hidden } = a.behavior {
                if !known(hidden) {
                    return Err(ConfigError::UnknownClient(hidden));
                }
            }
        }
        for &(u, _) in &self.dropout.scripted {
            if !known(u) {
                return Err(ConfigError::UnknownClient(u));
            }
        }
        validate_tolerance(n, self.threshold, self.malicious_clients().len())?;
        for r in [self.dropout.phase1, self.dropout.phase2] {
            if !(0.0..=1.0).contains(&r) {
                return Err(ConfigError::Fraction(r));
            }
        }
        let (a, b) = self.dropout.phase_counts(n);
        let available = n - self.malicious_clients().len();
        if a + b > available {
            return Err(ConfigError::NotEnoughHonest {
                needed: a + b,
                available,
            });
        }
        if !self.alpha.is_finite() {
            return Err(ConfigError::Alpha);
        }
        if self.mode == Mode::Full && self.paillier_bits < MIN_KEY_BITS {
            return Err(ConfigError::KeyBits(self.paillier_bits));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tolerance_examples() {
        assert_eq!((min_threshold(12), max_adversaries(12)), (9, 3));
        assert_eq!((min_threshold(3), max_adversaries(3)), (3, 0));
        assert_eq!(
            validate_tolerance(12, 8, 0),
            Err(ToleranceError::ThresholdTooLow {
                n: 12,
                t: 8,
                min: 9
            })
        );
        assert_eq!(
            validate_tolerance(12, 13, 0),
            Err(ToleranceError::ThresholdAboveClients { n: 12, t: 13 })
        );
        assert_eq!(
            validate_tolerance(12, 9, 4),
            Err(ToleranceError::TooManyAdversaries {
                n: 12,
                got: 4,
                max: 3
            })
        );
        assert_eq!(validate_tolerance(0, 0, 0), Err(ToleranceError::NoClients));
        assert!(validate_tolerance(1, 1, 0).is_ok());
    }

    #[test]
    fn adversary_strings() {
        let a: AdversaryScript = "fraud-e:3".parse().unwrap();
        assert_eq!(a.behavior, Behavior::FraudulentEDecryption);
        assert_eq!((a.target, a.round), (3, None));
        let v: AdversaryScript = "view:2:5@4".parse().unwrap();
        assert_eq!(v.behavior, Behavior::InconsistentDropoutView { hidden: 5 });
        assert_eq!(v.round, Some(4));
        assert!(v.fires(4) && !v.fires(3));
        for s in ["fraud-m:7", "view:1:2", "fraud-e:4@2"] {
            let parsed: AdversaryScript = s.parse().unwrap();
            assert_eq!(alloc::format!("{parsed}"), s);
        }
        for s in ["fraud-x:1", "fraud-e", "view:1", "fraud-e:a", "fraud-m:1@x"] {
            assert!(s.parse::<AdversaryScript>().is_err(), "{s}");
        }
    }

    #[test]
    fn config_validation() {
        let mut c = ProtocolConfig::new(8);
        assert_eq!(c.threshold, 6);
        assert!(c.validate().is_ok());
        c.adversaries = ["fraud-e:1", "fraud-m:2", "view:3:4"]
            .iter()
            .map(|s| s.parse().unwrap())
            .collect();
        assert!(c.validate().is_ok());
        c.adversaries.push("fraud-m:5".parse().unwrap());
        assert!(matches!(
            c.validate(),
            Err(ConfigError::Tolerance(
                ToleranceError::TooManyAdversaries { .. }
            ))
        ));
        c.adversaries.pop();
        c.adversaries.push("fraud-m:9".parse().unwrap());
        assert_eq!(c.validate(), Err(ConfigError::UnknownClient(9)));
        c.adversaries.pop();
        c.dropout.phase1 = 1.5;
        assert_eq!(c.validate(), Err(ConfigError::Fraction(1.5)));
        c.dropout.phase1 = 0.5;
        c.dropout.phase2 = 0.4;
        assert_eq!(
            c.validate(),
            Err(ConfigError::NotEnoughHonest {
                needed: 7,
                available: 6
            })
        );
    }

    #[test]
    fn floor_counts() {
        let d = DropoutSchedule {
            phase1: 0.3,
            phase2: 0.1,
            ..DropoutSchedule::default()
        };
        assert_eq!(d.phase_counts(50), (15, 5));
        assert_eq!(d.phase_counts(8), (2, 0));
        assert_eq!("PoKM".parse::<DropPoint>().unwrap(), DropPoint::PoKM);
    }
}
