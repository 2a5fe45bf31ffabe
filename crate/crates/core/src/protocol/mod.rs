//! Server and clients of one federation, simulated in a single thread.
//!
//! A run is a once-only setup (key generation, encrypted dataset upload)
//! followed by rounds of five steps: mask generation and `Enc(R_i)` upload,
//! encrypted cross-entropy evaluation, its proof, the proof of the masked
//! weighted model, and masked aggregation with recovery.

mod config;
mod transcript;

pub use config::{
    max_adversaries, min_threshold, validate_tolerance, AdversaryScript, Behavior, ConfigError,
    DropPoint, DropoutSchedule, Mode, ProtocolConfig, ToleranceError, MIN_KEY_BITS,
};
pub use transcript::{
    totals, Clock, MessageType, NullClock, Record, Step, StepMetrics, Transcript, TranscriptError,
    HEADER_BYTES, SERVER,
};

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::rc::Rc;
use alloc::vec::Vec;

use num_bigint::{BigInt, BigUint};
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_core::RngCore;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::arith;
use crate::data::Dataset;
use crate::disparity::{
    self, DisparityConfig, DisparityError, DisparityPeer, EncryptedSample, WeightInput,
    WeightRecord,
};
use crate::fixedpoint::{self, FixedPointCodec, FixedPointError};
use crate::logreg::{self, CubicReply, FixedCubic, LinearReply, LogRegError, LogRegModel};
use crate::paillier::{self, Ciphertext, Keypair, PaillierError, PublicKey};
use crate::secagg::{
    self, ConsistencyFailure, KeyRegistry, MaskState, RecoveryStats, RingSpec, SecAggError,
    SeedKind, ShareStore, SignedView, SigningKey, UserId, ViewBundle,
};
use crate::shamir::{PrimeField, Shamir, ShamirError, Share};
use crate::zkpopk::{
    self, ChallengeMode, HonestZeroProver, PpopkServer, ZeroProver, ZeroVerifier, ZkError,
};
use transcript::Meter;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtocolError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("expected {expected} client datasets, got {got}")]
    ClientCount { expected: usize, got: usize },
    #[error("dataset of client {user} has {got} features, benchmark has {expected}")]
    FeatureMismatch {
        user: UserId,
        got: usize,
        expected: usize,
    },
    #[error("setup has already run")]
    DuplicateSetup,
    #[error("setup has not run")]
    SetupMissing,
    #[error("{step:?}: {alive} clients alive, threshold is {threshold}")]
    BelowThreshold {
        step: Step,
        alive: usize,
        threshold: usize,
    },
    #[error("weight {omega} of client {user} does not fit the fixed-point range")]
    WeightOverflow { user: UserId, omega: f64 },
    #[error("total weight of the surviving clients is zero")]
    ZeroTotalWeight,
    #[error("consistency check failed: {0}")]
    Consistency(ConsistencyFailure),
    #[error(transparent)]
    SecAgg(#[from] SecAggError),
    #[error(transparent)]
    Disparity(#[from] DisparityError),
    #[error(transparent)]
    Paillier(#[from] PaillierError),
    #[error(transparent)]
    FixedPoint(#[from] FixedPointError),
    #[error(transparent)]
    Zk(#[from] ZkError),
    #[error(transparent)]
    LogReg(#[from] LogRegError),
    #[error(transparent)]
    Shamir(#[from] ShamirError),
}

impl From<ConsistencyFailure> for ProtocolError {
    fn from(e: ConsistencyFailure) -> Self {
        Self::Consistency(e)
    }
}

/// `ChaCha20` keyed by `SHA-256(seed || label || id)`.
pub fn party_rng(seed: u64, label: &[u8], id: u64) -> ChaCha20Rng {
    let mut h = Sha256::new();
    h.update(seed.to_be_bytes());
    h.update(label);
    h.update(id.to_be_bytes());
    ChaCha20Rng::from_seed(h.finalize().into())
}

/// Why a client is missing from the final alive set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exclusion {
    Dropped(DropPoint),
    FailedE,
    FailedM,
}

/// Everything the server saw during one round.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RoundState {
    pub round: u64,
    pub u: Vec<UserId>,
    pub u1: Vec<UserId>,
    pub u2: Vec<UserId>,
    pub u3: Vec<UserId>,
    pub u4: Vec<UserId>,
    pub u5: Vec<UserId>,
    pub u6: Vec<UserId>,
    pub local_models: BTreeMap<UserId, LogRegModel>,
    pub server_model: Option<LogRegModel>,
    pub enc_masks: BTreeMap<UserId, Vec<Ciphertext>>,
    pub enc_models: BTreeMap<UserId, Vec<Ciphertext>>,
    pub enc_e: BTreeMap<UserId, Ciphertext>,
    pub published_e: BTreeMap<UserId, f64>,
    pub beta_e: BTreeMap<UserId, bool>,
    pub beta_m: BTreeMap<UserId, bool>,
    pub weights: Vec<WeightRecord>,
    /// `ω_i` as quantized for the masked upload.
    pub omega: BTreeMap<UserId, f64>,
    /// Masked uploads as received, residues modulo the uploader's key.
    pub uploads: BTreeMap<UserId, Vec<BigUint>>,
    pub excluded: BTreeMap<UserId, Exclusion>,
    pub bundle: Option<ViewBundle>,
    pub recovery: RecoveryStats,
    pub global: Option<LogRegModel>,
}

impl RoundState {
    pub fn chain(&self) -> [&[UserId]; 7] {
        [
            &self.u, &self.u1, &self.u2, &self.u3, &self.u4, &self.u5, &self.u6,
        ]
    }

    fn exclude(&mut self, users: impl IntoIterator<Item = UserId>, why: Exclusion) {
        for u in users {
            self.excluded.entry(u).or_insert(why);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutcome {
    pub state: RoundState,
    /// One entry per round step, in order.
    pub metrics: Vec<StepMetrics>,
}

pub struct Client {
    pub id: UserId,
    pub data: Dataset,
    keys: Option<Keypair>,
    signing: Option<SigningKey>,
    rng: ChaCha20Rng,
    held: ShareStore,
    mask: Option<MaskState>,
}

impl Client {
    pub fn keys(&self) -> Option<&Keypair> {
        self.keys.as_ref()
    }
}

pub struct Server {
    pub benchmark: Dataset,
    rng: ChaCha20Rng,
    public_keys: BTreeMap<UserId, PublicKey>,
    registry: KeyRegistry,
    enc_datasets: BTreeMap<UserId, Vec<EncryptedSample>>,
    pub global: Option<LogRegModel>,
}

pub struct Simulation {
    config: ProtocolConfig,
    clients: BTreeMap<UserId, Client>,
    server: Server,
    transcript: Transcript,
    clock: Rc<dyn Clock>,
    shamir: Shamir,
    ring: RingSpec,
    disparity: DisparityConfig,
    setup_metrics: Option<StepMetrics>,
    round: u64,
    last: Option<RoundState>,
    pending_sum: Option<Vec<BigUint>>,
}

/// Message endpoint between the server and one client, with time split by party.
struct Link<'a> {
    step: Step,
    user: UserId,
    transcript: &'a mut Transcript,
    clock: &'a dyn Clock,
    server_nanos: u64,
    user_nanos: u64,
}

impl<'a> Link<'a> {
    fn new(step: Step, user: UserId, transcript: &'a mut Transcript, clock: &'a dyn Clock) -> Self {
        Self {
            step,
            user,
            transcript,
            clock,
            server_nanos: 0,
            user_nanos: 0,
        }
    }

    fn to_user(&mut self, kind: MessageType, payload: Vec<u8>) {
        self.transcript
            .push(self.step, SERVER, self.user, kind, payload);
    }

    fn to_server(&mut self, kind: MessageType, payload: Vec<u8>) {
        self.transcript
            .push(self.step, self.user, SERVER, kind, payload);
    }

    fn server<T>(&mut self, f: impl FnOnce() -> T) -> T {
        let start = self.clock.now();
        let out = f();
        self.server_nanos += self.clock.now().saturating_sub(start);
        out
    }

    fn user<T>(&mut self, f: impl FnOnce() -> T) -> T {
        let start = self.clock.now();
        let out = f();
        self.user_nanos += self.clock.now().saturating_sub(start);
        out
    }

    fn settle(&self, meter: &mut Meter<'_>) {
        meter.server += self.server_nanos;
        *meter.users.entry(self.user).or_default() += self.user_nanos;
    }
}

fn biguint_bytes(v: &BigUint) -> Vec<u8> {
    let mut out = Vec::new();
    arith::put_biguint(&mut out, v);
    out
}

fn ciphertexts_bytes<'c>(cs: impl IntoIterator<Item = &'c Ciphertext>) -> Vec<u8> {
    let mut out = Vec::new();
    for c in cs {
        c.write_to(&mut out);
    }
    out
}

fn residues_bytes(vs: &[BigUint]) -> Vec<u8> {
    let mut out = Vec::new();
    for v in vs {
        arith::put_biguint(&mut out, v);
    }
    out
}

fn ids_bytes(ids: &[UserId]) -> Vec<u8> {
    ids.iter().flat_map(|u| u.to_be_bytes()).collect()
}

fn kind_bytes(kind: SeedKind, out: &mut Vec<u8>) {
    match kind {
        SeedKind::SelfMask => out.extend_from_slice(&[0, 0, 0, 0, 0]),
        SeedKind::Pairwise(v) => {
            out.push(1);
            out.extend_from_slice(&v.to_be_bytes());
        }
    }
}

/// `PPoPK(c, m)` with the user proving and the server verifying.
fn plaintext_proof(
    link: &mut Link<'_>,
    keys: &Keypair,
    c: &Ciphertext,
    m: &BigUint,
    mode: ChallengeMode,
    server_rng: &mut dyn RngCore,
    user_rng: &mut dyn RngCore,
) -> Result<bool, ZkError> {
    let pk = &keys.public;
    let server = link.server(|| PpopkServer::new(pk, c, m, server_rng))?;
    let u = server.c_prime().value.clone();
    link.to_user(MessageType::PpopkCPrime, server.c_prime().to_bytes());
    let mut prover =
        link.user(|| HonestZeroProver::new(pk, zkpopk::ppopk_witness(keys, server.c_prime())));
    let a = link.user(|| prover.commit(user_rng))?;
    link.to_server(MessageType::CommitA, biguint_bytes(&a));
    let mut verifier = ZeroVerifier::new(pk, &u);
    let e = link.server(|| {
        verifier.receive_commitment(a)?;
        match mode {
            ChallengeMode::Interactive => verifier.challenge(server_rng),
            ChallengeMode::FiatShamir => verifier.challenge_fiat_shamir(),
        }
    })?;
    if mode == ChallengeMode::Interactive {
        link.to_user(MessageType::ChallengeE, biguint_bytes(&e));
    }
    let z = link.user(|| prover.respond(&e))?;
    link.to_server(MessageType::ResponseZ, biguint_bytes(&z));
    link.server(|| verifier.verify(&z))
}

/// The client's side of the evaluation rounds, logging every message.
struct RecordingPeer<'a, 'l> {
    link: &'a mut Link<'l>,
    keys: &'a Keypair,
    labels: &'a [u8],
    linear_mask_bits: u64,
    mode: ChallengeMode,
    rng: &'a mut ChaCha20Rng,
}

impl DisparityPeer for RecordingPeer<'_, '_> {
    fn cubic_round(
        &mut self,
        z: &Ciphertext,
        cubics: &[FixedCubic],
    ) -> Result<CubicReply, LogRegError> {
        self.link.to_user(MessageType::EncZ, z.to_bytes());
        let (keys, rng) = (self.keys, &mut *self.rng);
        let reply = self
            .link
            .user(|| logreg::cubic_reply(keys, z, cubics, rng))?;
        let payload = ciphertexts_bytes(core::iter::once(&reply.z2).chain(&reply.values));
        self.link.to_server(MessageType::EncZ2Sigma, payload);
        Ok(reply)
    }

    fn linear_round(&mut self, h: &Ciphertext, index: usize) -> Result<LinearReply, LogRegError> {
        self.link.to_user(MessageType::EncH, h.to_bytes());
        let (keys, rng, y, bits) = (
            self.keys,
            &mut *self.rng,
            self.labels[index],
            self.linear_mask_bits,
        );
        let reply = self
            .link
            .user(|| logreg::linear_reply(keys, h, y, bits, rng))?;
        let mut payload = biguint_bytes(&reply.h_plus_r.value);
        reply.y_r.write_to(&mut payload);
        reply.r.write_to(&mut payload);
        self.link.to_server(MessageType::HPlusR, payload);
        Ok(reply)
    }

    fn prove_plaintext(
        &mut self,
        c: &Ciphertext,
        m: &BigUint,
        server_rng: &mut dyn RngCore,
    ) -> Result<bool, ZkError> {
        plaintext_proof(
            self.link,
            self.keys,
            c,
            m,
            self.mode,
            server_rng,
            &mut *self.rng,
        )
    }
}

impl Simulation {
    pub fn new(
        config: ProtocolConfig,
        client_data: Vec<Dataset>,
        benchmark: Dataset,
        clock: impl Clock + 'static,
    ) -> Result<Self, ProtocolError> {
        config.validate()?;
        if client_data.len() != config.n_clients {
            return Err(ProtocolError::ClientCount {
                expected: config.n_clients,
                got: client_data.len(),
            });
        }
        let dim = benchmark.dim();
        let mut clients = BTreeMap::new();
        for (id, data) in config.clients().zip(client_data) {
            if data.dim() != dim {
                return Err(ProtocolError::FeatureMismatch {
                    user: id,
                    got: data.dim(),
                    expected: dim,
                });
            }
            clients.insert(
                id,
                Client {
                    id,
                    data,
                    keys: None,
                    signing: None,
                    rng: party_rng(config.seed, b"client", u64::from(id)),
                    held: ShareStore::new(),
                    mask: None,
                },
            );
        }
        let server = Server {
            benchmark,
            rng: party_rng(config.seed, b"server", 0),
            public_keys: BTreeMap::new(),
            registry: KeyRegistry::new(),
            enc_datasets: BTreeMap::new(),
            global: None,
        };
        let shamir = Shamir::new(PrimeField::mersenne127(), config.threshold)?;
        let ring = RingSpec {
            modulus: BigUint::from(1u8) << config.ring_bits as usize,
            dim: dim + 1,
        };
        let mut disparity = DisparityConfig::new(config.kappa, config.fraction_bits)?;
        disparity.binary_cross_entropy = config.binary_cross_entropy;
        disparity.verify_h = config.verify_h;
        Ok(Self {
            config,
            clients,
            server,
            transcript: Transcript::new(),
            clock: Rc::new(clock),
            shamir,
            ring,
            disparity,
            setup_metrics: None,
            round: 0,
            last: None,
            pending_sum: None,
        })
    }

    pub fn config(&self) -> &ProtocolConfig {
        &self.config
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    pub fn client(&self, id: UserId) -> Option<&Client> {
        self.clients.get(&id)
    }

    pub fn server(&self) -> &Server {
        &self.server
    }

    /// `Enc(D_i)` as stored by the server.
    pub fn encrypted_dataset(&self, id: UserId) -> Option<&[EncryptedSample]> {
        self.server.enc_datasets.get(&id).map(Vec::as_slice)
    }

    pub fn setup_metrics(&self) -> Option<&StepMetrics> {
        self.setup_metrics.as_ref()
    }

    /// State of the most recent round, including failed ones.
    pub fn last_round(&self) -> Option<&RoundState> {
        self.last.as_ref()
    }

    pub fn rounds_run(&self) -> u64 {
        self.round
    }

    /// Key generation and the encrypted dataset upload. Runs once.
    pub fn setup(&mut self) -> Result<StepMetrics, ProtocolError> {
        if self.setup_metrics.is_some() {
            return Err(ProtocolError::DuplicateSetup);
        }
        let start = self.transcript.len();
        let clock = Rc::clone(&self.clock);
        let mut meter = Meter::new(&*clock);
        let full = self.config.mode == Mode::Full;
        for client in self.clients.values_mut() {
            let id = client.id;
            let scheme = self.config.signature_scheme;
            let bits = self.config.paillier_bits;
            let rng = &mut client.rng;
            let signing = meter.user(id, || SigningKey::generate(scheme, rng));
            self.server.registry.insert(id, signing.verifying_key());
            client.signing = Some(signing);
            if !full {
                continue;
            }
            let keys = meter.user(id, || paillier::generate_keypair(bits, rng));
            let codec = FixedPointCodec::new(
                self.config.integer_bits,
                self.config.fraction_bits,
                keys.n().clone(),
            )?;
            let data = &client.data;
            let enc = meter.user(id, || {
                disparity::encrypt_dataset(&keys.public, &codec, data, rng)
            })?;
            let payload = enc.iter().flat_map(EncryptedSample::to_bytes).collect();
            self.transcript
                .push(Step::Setup, id, SERVER, MessageType::EncDataset, payload);
            self.server.public_keys.insert(id, keys.public.clone());
            self.server.enc_datasets.insert(id, enc);
            client.keys = Some(keys);
        }
        let m = StepMetrics::collect(Step::Setup, &self.transcript.records()[start..], &meter);
        self.setup_metrics = Some(m);
        Ok(m)
    }

    /// Setup followed by `rounds` rounds; stops at the first failure.
    pub fn run(&mut self, rounds: u64) -> Result<Vec<RoundOutcome>, ProtocolError> {
        if self.setup_metrics.is_none() {
            self.setup()?;
        }
        (0..rounds).map(|_| self.run_round()).collect()
    }

    fn drop_schedule(&self) -> BTreeMap<UserId, DropPoint> {
        let malicious = self.config.malicious_clients();
        let mut honest: Vec<UserId> = self
            .config
            .clients()
            .filter(|u| !malicious.contains(u))
            .collect();
        let mut rng = party_rng(self.config.seed, b"dropout", self.round);
        honest.shuffle(&mut rng);
        let d = &self.config.dropout;
        let (a, b) = d.phase_counts(self.config.n_clients);
        let mut out: BTreeMap<UserId, DropPoint> = BTreeMap::new();
        for &u in &honest[..a] {
            out.insert(u, d.phase1_point);
        }
        for &u in &honest[a..a + b] {
            out.insert(u, d.phase2_point);
        }
        for &(u, p) in &d.scripted {
            out.insert(u, p);
        }
        out
    }

    fn fires(&self, user: UserId, behavior: fn(&Behavior) -> bool) -> bool {
        self.config
            .adversaries
            .iter()
            .any(|a| a.target == user && behavior(&a.behavior) && a.fires(self.round))
    }

    pub fn run_round(&mut self) -> Result<RoundOutcome, ProtocolError> {
        if self.setup_metrics.is_none() {
            return Err(ProtocolError::SetupMissing);
        }
        self.round += 1;
        let mut state = RoundState {
            round: self.round,
            u: self.config.clients().collect(),
            ..RoundState::default()
        };
        let drops = self.drop_schedule();
        let mut metrics = Vec::with_capacity(5);
        let result = self.steps(&mut state, &drops, &mut metrics);
        self.last = Some(state.clone());
        result?;
        self.server.global = state.global.clone();
        Ok(RoundOutcome { state, metrics })
    }

    fn steps(
        &mut self,
        state: &mut RoundState,
        drops: &BTreeMap<UserId, DropPoint>,
        metrics: &mut Vec<StepMetrics>,
    ) -> Result<(), ProtocolError> {
        type StepFn =
            fn(&mut Simulation, &mut RoundState, &mut Meter<'_>) -> Result<(), ProtocolError>;
        let steps: [(Step, StepFn); 5] = [
            (Step::Init, Self::step0_init),
            (Step::CompE, Self::step1_comp_e),
            (Step::PoKE, Self::step2_pok_e),
            (Step::PoKM, Self::step3_pok_m),
            (Step::WAgg, Self::step4_wagg),
        ];
        let point = |s: Step| match s {
            Step::Init | Step::Setup => DropPoint::Init,
            Step::CompE => DropPoint::CompE,
            Step::PoKE => DropPoint::PoKE,
            Step::PoKM => DropPoint::PoKM,
            Step::WAgg => DropPoint::WAgg,
        };
        for (step, f) in steps {
            let start = self.transcript.len();
            let gone: Vec<UserId> = drops
                .iter()
                .filter(|(_, p)| **p == point(step))
                .map(|(u, _)| *u)
                .collect();
            state.exclude(gone, Exclusion::Dropped(point(step)));
            let clock = Rc::clone(&self.clock);
            let mut meter = Meter::new(&*clock);
            let out = f(self, state, &mut meter);
            metrics.push(StepMetrics::collect(
                step,
                &self.transcript.records()[start..],
                &meter,
            ));
            out?;
        }
        Ok(())
    }

    fn alive(state: &RoundState, from: &[UserId], point: DropPoint) -> Vec<UserId> {
        from.iter()
            .copied()
            .filter(|u| state.excluded.get(u) != Some(&Exclusion::Dropped(point)))
            .collect()
    }

    /// Mask generation, seed sharing and the `Enc(R_i)` upload.
    fn step0_init(
        &mut self,
        state: &mut RoundState,
        meter: &mut Meter<'_>,
    ) -> Result<(), ProtocolError> {
        let t = self.config.threshold;
        state.u1 = Self::alive(state, &state.u, DropPoint::Init);
        if state.u1.len() < t {
            return Err(ProtocolError::BelowThreshold {
                step: Step::Init,
                alive: state.u1.len(),
                threshold: t,
            });
        }
        let u1 = state.u1.clone();
        let field = self.shamir.field;
        let mut pairs: BTreeMap<UserId, BTreeMap<UserId, u128>> = BTreeMap::new();
        for (i, &u) in u1.iter().enumerate() {
            let client = self.clients.get_mut(&u).expect("known client");
            client.held = ShareStore::new();
            for &v in &u1[i + 1..] {
                let s = meter.user(u, || field.random(&mut client.rng));
                pairs.entry(u).or_default().insert(v, s);
                pairs.entry(v).or_default().insert(u, s);
                self.transcript.push(
                    Step::Init,
                    u,
                    v,
                    MessageType::PairSeed,
                    s.to_be_bytes().to_vec(),
                );
            }
        }
        let mut outgoing: BTreeMap<(UserId, UserId), Vec<(SeedKind, Share)>> = BTreeMap::new();
        for &u in &u1 {
            let client = self.clients.get_mut(&u).expect("known client");
            let ring = &self.ring;
            let shamir = &self.shamir;
            let seeds = pairs.remove(&u).unwrap_or_default();
            let (mask, shares) = meter.user(u, || {
                let self_seed = field.random(&mut client.rng);
                let mask = MaskState::derive(u, self_seed, seeds, ring);
                let shares = secagg::share_seeds(shamir, &mask, &u1, &mut client.rng);
                (mask, shares)
            });
            for (kind, holder, share) in shares? {
                outgoing.entry((u, holder)).or_default().push((kind, share));
            }
            client.mask = Some(mask);
        }
        for ((owner, holder), shares) in outgoing {
            let mut payload = Vec::with_capacity(shares.len() * 25);
            let store = &mut self.clients.get_mut(&holder).expect("known client").held;
            for (kind, share) in shares {
                kind_bytes(kind, &mut payload);
                payload.extend_from_slice(&share.to_bytes());
                store.insert(owner, kind, holder, share);
            }
            if owner != holder {
                self.transcript
                    .push(Step::Init, owner, holder, MessageType::MaskShare, payload);
            }
        }
        if self.config.mode == Mode::Full {
            let scale = 2 * self.config.fraction_bits as i32;
            for &u in &u1 {
                let client = self.clients.get_mut(&u).expect("known client");
                let keys = client.keys.as_ref().ok_or(ProtocolError::SetupMissing)?;
                let mask = client.mask.as_ref().expect("mask generated");
                let rng = &mut client.rng;
                let enc = meter.user(u, || {
                    mask.combined
                        .iter()
                        .map(|r| keys.public.encrypt(r, scale, rng))
                        .collect::<Result<Vec<_>, _>>()
                })?;
                self.transcript.push(
                    Step::Init,
                    u,
                    SERVER,
                    MessageType::EncMask,
                    ciphertexts_bytes(&enc),
                );
                state.enc_masks.insert(u, enc);
            }
        }
        state.u2 = u1;
        Ok(())
    }

    /// Local training, `Enc(M_i)` upload and the encrypted evaluation of `E_i`.
    fn step1_comp_e(
        &mut self,
        state: &mut RoundState,
        meter: &mut Meter<'_>,
    ) -> Result<(), ProtocolError> {
        let u3 = Self::alive(state, &state.u2, DropPoint::CompE);
        let start_model = self
            .server
            .global
            .clone()
            .unwrap_or_else(|| LogRegModel::zeros(self.ring.dim - 1));
        let full = self.config.mode == Mode::Full;
        for &u in &u3 {
            let client = self.clients.get_mut(&u).expect("known client");
            let train = &self.config.train;
            let data = &client.data;
            let model = meter.user(u, || logreg::train_from(start_model.clone(), data, train))?;
            if full {
                let keys = client.keys.as_ref().ok_or(ProtocolError::SetupMissing)?;
                let codec = FixedPointCodec::new(
                    self.config.integer_bits,
                    self.config.fraction_bits,
                    keys.n().clone(),
                )?;
                let rng = &mut client.rng;
                let enc = meter.user(u, || {
                    disparity::encrypt_model(&keys.public, &codec, &model, rng)
                })?;
                self.transcript.push(
                    Step::CompE,
                    u,
                    SERVER,
                    MessageType::EncModel,
                    ciphertexts_bytes(&enc),
                );
                state.enc_models.insert(u, enc);
            }
            state.local_models.insert(u, model);
        }
        if full {
            let benchmark = &self.server.benchmark;
            let train = &self.config.train;
            let server_model =
                meter.server(|| logreg::train_from(start_model.clone(), benchmark, train))?;
            let linear_bits = logreg::mask_bits(
                self.config.kappa,
                self.disparity.loss_scale() as u32,
                self.config.fraction_bits,
            );
            for &u in &u3 {
                let client = self.clients.get_mut(&u).expect("known client");
                let keys = client.keys.as_ref().ok_or(ProtocolError::SetupMissing)?;
                let pk = &keys.public;
                let mut link = Link::new(Step::CompE, u, &mut self.transcript, meter_clock(meter));
                let begin = link.clock.now();
                let mut peer = RecordingPeer {
                    link: &mut link,
                    keys,
                    labels: client.data.labels(),
                    linear_mask_bits: linear_bits,
                    mode: self.config.challenge_mode,
                    rng: &mut client.rng,
                };
                let enc_model = &state.enc_models[&u];
                let enc_data = &self.server.enc_datasets[&u];
                let server_rng = &mut self.server.rng;
                let ls = disparity::compute_ls(
                    pk,
                    enc_model,
                    benchmark,
                    &self.disparity,
                    &mut peer,
                    server_rng,
                )?;
                let ll = disparity::compute_ll(
                    pk,
                    enc_data,
                    &server_model,
                    &self.disparity,
                    &mut peer,
                    server_rng,
                )?;
                let e = disparity::compute_e(pk, &ls, &ll)?;
                let elapsed = link.clock.now().saturating_sub(begin);
                link.to_user(MessageType::EncE, e.to_bytes());
                meter.server += elapsed.saturating_sub(link.user_nanos);
                *meter.users.entry(u).or_default() += link.user_nanos;
                state.enc_e.insert(u, e);
            }
            state.server_model = Some(server_model);
        }
        state.u3 = u3;
        Ok(())
    }

    /// Publication of `E_i` and its proof; weights of the survivors.
    fn step2_pok_e(
        &mut self,
        state: &mut RoundState,
        meter: &mut Meter<'_>,
    ) -> Result<(), ProtocolError> {
        let publishers = Self::alive(state, &state.u3, DropPoint::PoKE);
        if self.config.mode == Mode::Baseline {
            state.u4 = publishers;
            return Ok(());
        }
        let scale = self.disparity.loss_scale();
        let mut u4 = Vec::new();
        let mut inputs = Vec::new();
        for &u in &publishers {
            let fraud = self.fires(u, |b| *b == Behavior::FraudulentEDecryption);
            let client = self.clients.get_mut(&u).expect("known client");
            let keys = client.keys.as_ref().ok_or(ProtocolError::SetupMissing)?;
            let n = keys.n();
            let enc_e = &state.enc_e[&u];
            let mut e = meter.user(u, || keys.decrypt(enc_e))?;
            if fraud {
                let half = BigUint::from(1u8) << (scale as usize - 1);
                e = (e + n - (half % n)) % n;
            }
            self.transcript.push(
                Step::PoKE,
                u,
                SERVER,
                MessageType::EPublish,
                biguint_bytes(&e),
            );
            let mut link = Link::new(Step::PoKE, u, &mut self.transcript, meter_clock(meter));
            let beta = plaintext_proof(
                &mut link,
                keys,
                enc_e,
                &e,
                self.config.challenge_mode,
                &mut self.server.rng,
                &mut client.rng,
            )?;
            link.settle(meter);
            state.beta_e.insert(u, beta);
            if !beta {
                state.exclude([u], Exclusion::FailedE);
                continue;
            }
            let value = fixedpoint::decode_signed(&arith::centered(&e, n), scale)?;
            state.published_e.insert(u, value);
            inputs.push(WeightInput {
                user: u,
                entropy: value,
                samples: client.data.len(),
            });
            u4.push(u);
        }
        if !inputs.is_empty() {
            let alpha = self.config.alpha;
            state.weights = meter.server(|| disparity::compute_weights(&inputs, alpha))?;
        }
        state.u4 = u4;
        Ok(())
    }

    /// Masked weighted model upload and its elementwise proof.
    fn step3_pok_m(
        &mut self,
        state: &mut RoundState,
        meter: &mut Meter<'_>,
    ) -> Result<(), ProtocolError> {
        let full = self.config.mode == Mode::Full;
        let frac = self.config.fraction_bits as i32;
        let q = self.ring.modulus.clone();
        let mut u5 = Vec::new();
        let mut u6 = Vec::new();
        let mut secagg_uploads: BTreeMap<UserId, Vec<BigUint>> = BTreeMap::new();
        for &u in &state.u4.clone() {
            let silent_after_upload =
                state.excluded.get(&u) == Some(&Exclusion::Dropped(DropPoint::PoKM));
            let fraud = self.fires(u, |b| *b == Behavior::FraudulentWeightedModel);
            let client = self.clients.get_mut(&u).expect("known client");
            let model = &state.local_models[&u];
            let mask = client.mask.as_ref().expect("mask generated");
            if !full {
                // Baseline clients leaving at this point never upload.
                if silent_after_upload {
                    continue;
                }
                let ring = &self.ring;
                let y = meter.user(u, || -> Result<Vec<BigUint>, ProtocolError> {
                    let m = model
                        .theta
                        .iter()
                        .map(|&x| {
                            Ok(arith::to_residue(
                                &fixedpoint::real_to_scaled_int(x, frac)?,
                                &ring.modulus,
                            ))
                        })
                        .collect::<Result<Vec<_>, ProtocolError>>()?;
                    Ok(mask.mask(&m, ring)?)
                })?;
                self.transcript.push(
                    Step::PoKM,
                    u,
                    SERVER,
                    MessageType::MaskedModel,
                    residues_bytes(&y),
                );
                state.uploads.insert(u, y.clone());
                secagg_uploads.insert(u, y);
                u5.push(u);
                u6.push(u);
                continue;
            }
            let keys = client.keys.as_ref().ok_or(ProtocolError::SetupMissing)?;
            let codec = FixedPointCodec::new(
                self.config.integer_bits,
                self.config.fraction_bits,
                keys.n().clone(),
            )?;
            let record = state
                .weights
                .iter()
                .find(|w| w.user == u)
                .expect("weight for every member of U4");
            let omega = codec
                .encode(record.omega)
                .map_err(|_| ProtocolError::WeightOverflow {
                    user: u,
                    omega: record.omega,
                })?;
            let n = keys.n();
            let y = meter.user(u, || -> Result<Vec<BigUint>, ProtocolError> {
                let omega_int = BigInt::from(omega.value.clone());
                let mut out = Vec::with_capacity(model.theta.len());
                for (k, (&x, r)) in model.theta.iter().zip(&mask.combined).enumerate() {
                    let m = codec.signed(&codec.encode(x)?);
                    let mut v = &omega_int * m + BigInt::from(r.clone());
                    if fraud && k == 0 {
                        v += BigInt::from(1u8) << (2 * frac as usize);
                    }
                    out.push(arith::to_residue(&v, n));
                }
                Ok(out)
            })?;
            self.transcript.push(
                Step::PoKM,
                u,
                SERVER,
                MessageType::MaskedModel,
                residues_bytes(&y),
            );
            state.uploads.insert(u, y.clone());
            state.omega.insert(
                u,
                fixedpoint::decode_signed(&BigInt::from(omega.value.clone()), frac)?,
            );
            u5.push(u);
            if silent_after_upload {
                state.beta_m.insert(u, false);
                continue;
            }
            let pk = &keys.public;
            let enc_model = &state.enc_models[&u];
            let enc_mask = &state.enc_masks[&u];
            let reference = meter.server(|| {
                enc_model
                    .iter()
                    .zip(enc_mask)
                    .map(|(m, r)| pk.add(&pk.scalar_mul(m, &omega), r))
                    .collect::<Result<Vec<_>, _>>()
            })?;
            let mut link = Link::new(Step::PoKM, u, &mut self.transcript, meter_clock(meter));
            let mut beta = true;
            for (c, m) in reference.iter().zip(&y) {
                beta &= plaintext_proof(
                    &mut link,
                    keys,
                    c,
                    m,
                    self.config.challenge_mode,
                    &mut self.server.rng,
                    &mut client.rng,
                )?;
            }
            link.settle(meter);
            state.beta_m.insert(u, beta);
            if !beta {
                state.exclude([u], Exclusion::FailedM);
                continue;
            }
            let lifted = meter.server(|| {
                y.iter()
                    .map(|v| arith::to_residue(&arith::centered(v, n), &q))
                    .collect()
            });
            secagg_uploads.insert(u, lifted);
            u6.push(u);
        }
        state.u5 = u5;
        state.u6 = u6;
        if state.u6.len() < self.config.threshold {
            return Err(ProtocolError::BelowThreshold {
                step: Step::PoKM,
                alive: state.u6.len(),
                threshold: self.config.threshold,
            });
        }
        let (y, _) = meter.server(|| {
            secagg::masked_model_aggregation(
                &secagg_uploads,
                &state.u6,
                self.config.threshold,
                &self.ring,
            )
        })?;
        self.pending_sum = Some(y);
        Ok(())
    }

    /// Consistency check on `U6`, seed recovery and unmasking.
    fn step4_wagg(
        &mut self,
        state: &mut RoundState,
        meter: &mut Meter<'_>,
    ) -> Result<(), ProtocolError> {
        let t = self.config.threshold;
        let round = self.round;
        let alive = Self::alive(state, &state.u6, DropPoint::WAgg);
        let mut views: BTreeMap<UserId, Vec<UserId>> = BTreeMap::new();
        for &u in &alive {
            let mut view = state.u6.clone();
            for a in &self.config.adversaries {
                if let Behavior::InconsistentDropoutView { hidden } = a.behavior {
                    if a.target == u && a.fires(round) {
                        view.retain(|v| *v != hidden);
                    }
                }
            }
            self.transcript.push(
                Step::WAgg,
                SERVER,
                u,
                MessageType::AliveSet,
                ids_bytes(&view),
            );
            views.insert(u, view);
        }
        let mut signed = Vec::with_capacity(alive.len());
        for &u in &alive {
            let client = &self.clients[&u];
            let key = client.signing.as_ref().ok_or(ProtocolError::SetupMissing)?;
            let view = &views[&u];
            let sv = meter.user(u, || SignedView::sign(u, key, round, view));
            self.transcript.push(
                Step::WAgg,
                u,
                SERVER,
                MessageType::SignedView,
                sv.to_bytes(round),
            );
            signed.push(sv);
        }
        let registry = &self.server.registry;
        let bundle = meter.server(|| secagg::collect_bundle(&signed, registry, round, t))?;
        let bundle_bytes = bundle.to_bytes(round);
        for &u in &alive {
            self.transcript.push(
                Step::WAgg,
                SERVER,
                u,
                MessageType::ViewBundle,
                bundle_bytes.clone(),
            );
            let view = &views[&u];
            meter.user(u, || {
                secagg::check_bundle(u, view, &bundle, registry, round, t)
            })?;
        }
        state.bundle = Some(bundle);

        let in_u6: BTreeSet<UserId> = state.u6.iter().copied().collect();
        let gone: Vec<UserId> = state
            .u1
            .iter()
            .copied()
            .filter(|u| !in_u6.contains(u))
            .collect();
        let mut revealed = ShareStore::new();
        for &v in &alive {
            let held = &self.clients[&v].held;
            let mut payload = Vec::new();
            let mut push = |owner: UserId, kind: SeedKind| {
                if let Some(share) = held.get(owner, kind, v) {
                    payload.extend_from_slice(&owner.to_be_bytes());
                    kind_bytes(kind, &mut payload);
                    payload.extend_from_slice(&share.to_bytes());
                    revealed.insert(owner, kind, v, *share);
                }
            };
            meter.user(v, || {
                for &owner in &state.u6 {
                    push(owner, SeedKind::SelfMask);
                }
                for &owner in &gone {
                    for &w in &state.u6 {
                        push(owner, SeedKind::Pairwise(w));
                    }
                }
            });
            self.transcript
                .push(Step::WAgg, v, SERVER, MessageType::SeedShareReveal, payload);
        }
        let y = self.pending_sum.take().expect("sum from PoKM");
        let (z, stats) = meter.server(|| {
            secagg::model_aggregation_recovery(
                &y,
                &state.u1,
                &state.u6,
                &alive,
                &self.shamir,
                &revealed,
                &self.ring,
            )
        })?;
        state.recovery = stats;
        let frac = self.config.fraction_bits as i32;
        let full = self.config.mode == Mode::Full;
        let (scale, total) = if full {
            (
                2 * frac,
                state.u6.iter().map(|u| state.omega[u]).sum::<f64>(),
            )
        } else {
            (frac, state.u6.len() as f64)
        };
        if total <= 0.0 {
            return Err(ProtocolError::ZeroTotalWeight);
        }
        let q = &self.ring.modulus;
        let theta = meter.server(|| {
            z.iter()
                .map(|v| Ok(fixedpoint::decode_signed(&arith::centered(v, q), scale)? / total))
                .collect::<Result<Vec<f64>, FixedPointError>>()
        })?;
        let payload: Vec<u8> = theta.iter().flat_map(|x| x.to_be_bytes()).collect();
        for &u in &alive {
            self.transcript.push(
                Step::WAgg,
                SERVER,
                u,
                MessageType::GlobalModel,
                payload.clone(),
            );
        }
        state.global = Some(LogRegModel { theta });
        Ok(())
    }
}

fn meter_clock<'c>(meter: &Meter<'c>) -> &'c dyn Clock {
    meter.clock
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic;

    fn datasets(n: usize, per_client: usize, bench: usize, seed: u64) -> (Vec<Dataset>, Dataset) {
        let mut rng = party_rng(seed, b"test-data", 0);
        let theta = [-0.5, 2.0, -1.0];
        let clients = (0..n)
            .map(|_| synthetic(per_client, &theta, &mut rng))
            .collect();
        (clients, synthetic(bench, &theta, &mut rng))
    }

    fn config(n: usize) -> ProtocolConfig {
        let mut c = ProtocolConfig::new(n);
        c.paillier_bits = 256;
        c.train.epochs = 20;
        c
    }

    fn sim(c: ProtocolConfig, per_client: usize) -> Simulation {
        let (clients, bench) = datasets(c.n_clients, per_client, 6, c.seed);
        Simulation::new(c, clients, bench, NullClock).unwrap()
    }

    #[test]
    fn honest_round() {
        let mut s = sim(config(4), 5);
        let out = s.run(1).unwrap().pop().unwrap();
        let st = &out.state;
        assert_eq!(st.u6, [1, 2, 3, 4]);
        let total: f64 = st.omega.values().sum();
        let global = st.global.as_ref().unwrap();
        for k in 0..3 {
            let oracle: f64 = st
                .u6
                .iter()
                .map(|u| st.omega[u] * st.local_models[u].theta[k])
                .sum::<f64>()
                / total;
            assert!((global.theta[k] - oracle).abs() < 1e-6, "{k}");
        }
        assert_eq!(out.metrics.len(), 5);
        assert!(out.metrics.iter().all(|m| m.bytes() > 0));
    }

    #[test]
    fn setup_once() {
        let mut s = sim(config(3), 2);
        assert_eq!(s.run_round().unwrap_err(), ProtocolError::SetupMissing);
        s.setup().unwrap();
        assert_eq!(s.setup().unwrap_err(), ProtocolError::DuplicateSetup);
    }
}
