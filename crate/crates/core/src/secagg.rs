//! Dropout-resilient masked aggregation.
//!
//! Every user masks its vector with `R = PRG(b_u) + Σ_{v>u} PRG(s_uv) − Σ_{v<u} PRG(s_vu)`
//! over a ring `Z_Q`. Seeds are Shamir-shared with all users so the server can
//! strip self masks of survivors and rebuild the pairwise masks of users who
//! vanished after masking. Survivors agree on who survived through a signed
//! consistency check before any seed share is revealed.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use num_bigint::BigUint;
use num_traits::Zero;
use rand_core::RngCore;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::shamir::{Shamir, ShamirError, Share};

const PRG_DOMAIN: &[u8] = b"fedwagg/prg/v1";
const VIEW_DOMAIN: &[u8] = b"fedwagg/alive-view/v1";

pub type UserId = u32;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SecAggError {
    #[error("only {alive} users alive, threshold is {threshold}")]
    BelowThreshold { alive: usize, threshold: usize },
    #[error("vector of user {user} has length {got}, expected {expected}")]
    LengthMismatch {
        user: UserId,
        got: usize,
        expected: usize,
    },
    #[error("not enough shares to recover the {kind:?} seed of user {owner}")]
    MissingShares { owner: UserId, kind: SeedKind },
    #[error(transparent)]
    Shamir(#[from] ShamirError),
    #[error(transparent)]
    Consistency(#[from] ConsistencyFailure),
}

/// Expands a 128-bit seed into `length` residues of `Z_modulus`.
///
/// SHA-256 in counter mode; each residue consumes just enough bytes to cover
/// `modulus - 1` and out-of-range candidates are rejected.
pub fn prg_expand(seed: u128, length: usize, modulus: &BigUint) -> Vec<BigUint> {
    let mut out = Vec::with_capacity(length);
    if length == 0 {
        return out;
    }
    let top = modulus - 1u32;
    let bits = top.bits().max(1);
    let nbytes = bits.div_ceil(8) as usize;
    let top_mask = match bits % 8 {
        0 => 0xffu8,
        r => (1u8 << r) - 1,
    };
    let mut stream = PrgStream::new(seed);
    let mut buf = alloc::vec![0u8; nbytes];
    while out.len() < length {
        stream.fill(&mut buf);
        buf[0] &= top_mask;
        let v = BigUint::from_bytes_be(&buf);
        if &v < modulus {
            out.push(v);
        }
    }
    out
}

struct PrgStream {
    seed: [u8; 16],
    counter: u64,
    block: [u8; 32],
    used: usize,
}

impl PrgStream {
    fn new(seed: u128) -> Self {
        Self {
            seed: seed.to_be_bytes(),
            counter: 0,
            block: [0; 32],
            used: 32,
        }
    }

    fn refill(&mut self) {
        let mut h = Sha256::new();
        h.update(PRG_DOMAIN);
        h.update(self.seed);
        h.update(self.counter.to_be_bytes());
        self.block.copy_from_slice(&h.finalize());
        self.counter += 1;
        self.used = 0;
    }

    fn fill(&mut self, out: &mut [u8]) {
        for b in out.iter_mut() {
            if self.used == self.block.len() {
                self.refill();
            }
            *b = self.block[self.used];
            self.used += 1;
        }
    }
}

fn add_into(acc: &mut [BigUint], v: &[BigUint], modulus: &BigUint) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
        if &*a >= modulus {
            *a -= modulus;
        }
    }
}

fn sub_into(acc: &mut [BigUint], v: &[BigUint], modulus: &BigUint) {
    for (a, b) in acc.iter_mut().zip(v) {
        if &*a >= b {
            *a -= b;
        } else {
            *a += modulus;
            *a -= b;
        }
    }
}

/// Ring and vector shape shared by all users of one aggregation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RingSpec {
    pub modulus: BigUint,
    pub dim: usize,
}

/// Seeds and derived masks of one user.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskState {
    pub id: UserId,
    pub self_seed: u128,
    pub pairwise_seeds: BTreeMap<UserId, u128>,
    pub self_mask: Vec<BigUint>,
    pub pairwise_mask: Vec<BigUint>,
    pub combined: Vec<BigUint>,
}

impl MaskState {
    pub fn derive(
        id: UserId,
        self_seed: u128,
        pairwise_seeds: BTreeMap<UserId, u128>,
        ring: &RingSpec,
    ) -> Self {
        let q = &ring.modulus;
        let self_mask = prg_expand(self_seed, ring.dim, q);
        let mut pairwise_mask = alloc::vec![BigUint::zero(); ring.dim];
        for (&peer, &seed) in &pairwise_seeds {
            let stream = prg_expand(seed, ring.dim, q);
            if id < peer {
                add_into(&mut pairwise_mask, &stream, q);
            } else {
                sub_into(&mut pairwise_mask, &stream, q);
            }
        }
        let mut combined = self_mask.clone();
        add_into(&mut combined, &pairwise_mask, q);
        Self {
            id,
            self_seed,
            pairwise_seeds,
            self_mask,
            pairwise_mask,
            combined,
        }
    }

    /// `y_u = M + R mod Q`.
    pub fn mask(&self, model: &[BigUint], ring: &RingSpec) -> Result<Vec<BigUint>, SecAggError> {
        if model.len() != ring.dim {
            return Err(SecAggError::LengthMismatch {
                user: self.id,
                got: model.len(),
                expected: ring.dim,
            });
        }
        let mut y: Vec<BigUint> = model.iter().map(|m| m % &ring.modulus).collect();
        add_into(&mut y, &self.combined, &ring.modulus);
        Ok(y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SeedKind {
    SelfMask,
    Pairwise(UserId),
}

/// Shares held by users, keyed by `(owner, kind, holder)`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ShareStore {
    shares: BTreeMap<(UserId, SeedKind, UserId), Share>,
}

impl ShareStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, owner: UserId, kind: SeedKind, holder: UserId, share: Share) {
        self.shares.insert((owner, kind, holder), share);
    }

    pub fn get(&self, owner: UserId, kind: SeedKind, holder: UserId) -> Option<&Share> {
        self.shares.get(&(owner, kind, holder))
    }

    pub fn len(&self) -> usize {
        self.shares.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shares.is_empty()
    }

    /// Shares of one seed revealed by `holders`.
    pub fn reveal(&self, owner: UserId, kind: SeedKind, holders: &[UserId]) -> Vec<Share> {
        holders
            .iter()
            .filter_map(|&h| self.get(owner, kind, h).copied())
            .collect()
    }
}

/// Shares of every seed the user holds, one share per user of `population`
/// (sorted ids; holder `population[i]` receives x-coordinate `i + 1`).
pub fn share_seeds<R: RngCore + ?Sized>(
    shamir: &Shamir,
    state: &MaskState,
    population: &[UserId],
    rng: &mut R,
) -> Result<Vec<(SeedKind, UserId, Share)>, SecAggError> {
    let n = population.len();
    let mut out = Vec::with_capacity(n * (state.pairwise_seeds.len() + 1));
    let mut push = |kind: SeedKind, seed: u128, rng: &mut R| -> Result<(), SecAggError> {
        let shares = shamir.share(seed, n, rng)?;
        for (holder, share) in population.iter().zip(shares) {
            out.push((kind, *holder, share));
        }
        Ok(())
    };
    push(SeedKind::SelfMask, state.self_seed, rng)?;
    for (&peer, &seed) in &state.pairwise_seeds {
        push(SeedKind::Pairwise(peer), seed, rng)?;
    }
    Ok(out)
}

/// Output of [`mask_generation`].
#[derive(Debug, Clone)]
pub struct MaskGeneration {
    pub states: BTreeMap<UserId, MaskState>,
    pub u1: Vec<UserId>,
    pub store: ShareStore,
}

/// Runs mask generation for `users`; members of `dropped` vanish before sharing.
pub fn mask_generation<R: RngCore + ?Sized>(
    users: &[UserId],
    dropped: &BTreeSet<UserId>,
    shamir: &Shamir,
    ring: &RingSpec,
    rng: &mut R,
) -> Result<MaskGeneration, SecAggError> {
    let u1: Vec<UserId> = users
        .iter()
        .copied()
        .filter(|u| !dropped.contains(u))
        .collect();
    if u1.len() < shamir.threshold {
        return Err(SecAggError::BelowThreshold {
            alive: u1.len(),
            threshold: shamir.threshold,
        });
    }
    let field = shamir.field;
    let mut pair_seeds: BTreeMap<UserId, BTreeMap<UserId, u128>> = BTreeMap::new();
    for (i, &u) in u1.iter().enumerate() {
        for &v in &u1[i + 1..] {
            let s = field.random(rng);
            pair_seeds.entry(u).or_default().insert(v, s);
            pair_seeds.entry(v).or_default().insert(u, s);
        }
    }
    let mut states = BTreeMap::new();
    let mut store = ShareStore::new();
    for &u in &u1 {
        let self_seed = field.random(rng);
        let state = MaskState::derive(
            u,
            self_seed,
            pair_seeds.remove(&u).unwrap_or_default(),
            ring,
        );
        for (kind, holder, share) in share_seeds(shamir, &state, users, rng)? {
            store.insert(u, kind, holder, share);
        }
        states.insert(u, state);
    }
    Ok(MaskGeneration { states, u1, store })
}

/// `y = Σ_{u ∈ U2} y_u`, where `U2` are the members of `U1` that uploaded.
pub fn masked_model_aggregation(
    uploads: &BTreeMap<UserId, Vec<BigUint>>,
    u1: &[UserId],
    threshold: usize,
    ring: &RingSpec,
) -> Result<(Vec<BigUint>, Vec<UserId>), SecAggError> {
    let u2: Vec<UserId> = u1
        .iter()
        .copied()
        .filter(|u| uploads.contains_key(u))
        .collect();
    if u2.len() < threshold {
        return Err(SecAggError::BelowThreshold {
            alive: u2.len(),
            threshold,
        });
    }
    let mut y = alloc::vec![BigUint::zero(); ring.dim];
    for u in &u2 {
        let up = &uploads[u];
        if up.len() != ring.dim {
            return Err(SecAggError::LengthMismatch {
                user: *u,
                got: up.len(),
                expected: ring.dim,
            });
        }
        add_into(&mut y, up, &ring.modulus);
    }
    Ok((y, u2))
}

fn recover_seed(
    shamir: &Shamir,
    store: &ShareStore,
    owner: UserId,
    kind: SeedKind,
    revealers: &[UserId],
) -> Result<u128, SecAggError> {
    let shares = store.reveal(owner, kind, revealers);
    if shares.len() < shamir.threshold {
        return Err(SecAggError::MissingShares { owner, kind });
    }
    Ok(shamir.reconstruct(&shares)?)
}

/// Counts of seeds rebuilt during recovery.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RecoveryStats {
    pub self_seeds: usize,
    pub pair_seeds: usize,
}

/// Strips all masks from `y`:
/// `z = y − Σ_{u∈U2} PRG(b_u) ± Σ_{u∈U1∖U2, v∈U2} PRG(s_uv)`.
///
/// `revealers` are the users answering the share request, normally `U2`.
pub fn model_aggregation_recovery(
    y: &[BigUint],
    u1: &[UserId],
    u2: &[UserId],
    revealers: &[UserId],
    shamir: &Shamir,
    store: &ShareStore,
    ring: &RingSpec,
) -> Result<(Vec<BigUint>, RecoveryStats), SecAggError> {
    let q = &ring.modulus;
    let mut z = y.to_vec();
    let mut stats = RecoveryStats::default();
    for &u in u2 {
        let b = recover_seed(shamir, store, u, SeedKind::SelfMask, revealers)?;
        sub_into(&mut z, &prg_expand(b, ring.dim, q), q);
        stats.self_seeds += 1;
    }
    let alive: BTreeSet<UserId> = u2.iter().copied().collect();
    for &u in u1.iter().filter(|u| !alive.contains(u)) {
        for &v in u2 {
            let s = recover_seed(shamir, store, u, SeedKind::Pairwise(v), revealers)?;
            let stream = prg_expand(s, ring.dim, q);
            // v's mask carries +PRG(s) when v < u and −PRG(s) otherwise.
            if v < u {
                sub_into(&mut z, &stream, q);
            } else {
                add_into(&mut z, &stream, q);
            }
            stats.pair_seeds += 1;
        }
    }
    Ok((z, stats))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SignatureScheme {
    #[default]
    Ed25519,
    /// Keyed SHA-256 tags checked against the signer's secret; only for tests
    /// and simulations where every party is trusted not to forge.
    Transparent,
}

#[derive(Clone)]
pub enum SigningKey {
    Ed25519(ed25519_dalek::SigningKey),
    Transparent([u8; 32]),
}

impl core::fmt::Debug for SigningKey {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            SigningKey::Ed25519(_) => f.write_str("SigningKey::Ed25519(..)"),
            SigningKey::Transparent(_) => f.write_str("SigningKey::Transparent(..)"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VerifyingKey {
    Ed25519(ed25519_dalek::VerifyingKey),
    Transparent([u8; 32]),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Signature(pub Vec<u8>);

fn transparent_tag(secret: &[u8; 32], msg: &[u8]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(secret);
    h.update(msg);
    h.finalize().into()
}

impl SigningKey {
    pub fn generate<R: RngCore + ?Sized>(scheme: SignatureScheme, rng: &mut R) -> Self {
        let mut secret = [0u8; 32];
        rng.fill_bytes(&mut secret);
        match scheme {
            SignatureScheme::Ed25519 => {
                SigningKey::Ed25519(ed25519_dalek::SigningKey::from_bytes(&secret))
            }
            SignatureScheme::Transparent => SigningKey::Transparent(secret),
        }
    }

    pub fn verifying_key(&self) -> VerifyingKey {
        match self {
            SigningKey::Ed25519(k) => VerifyingKey::Ed25519(k.verifying_key()),
            SigningKey::Transparent(s) => VerifyingKey::Transparent(*s),
        }
    }

    pub fn sign(&self, msg: &[u8]) -> Signature {
        use ed25519_dalek::Signer;
        match self {
            SigningKey::Ed25519(k) => Signature(k.sign(msg).to_bytes().to_vec()),
            SigningKey::Transparent(s) => Signature(transparent_tag(s, msg).to_vec()),
        }
    }
}

impl VerifyingKey {
    pub fn verify(&self, msg: &[u8], sig: &Signature) -> bool {
        use ed25519_dalek::Verifier;
        match self {
            VerifyingKey::Ed25519(k) => {
                let Ok(bytes) = <[u8; 64]>::try_from(sig.0.as_slice()) else {
                    return false;
                };
                k.verify(msg, &ed25519_dalek::Signature::from_bytes(&bytes))
                    .is_ok()
            }
            VerifyingKey::Transparent(s) => sig.0 == transparent_tag(s, msg),
        }
    }
}

/// Canonical bytes signed for an alive-user list.
pub fn view_message(round: u64, view: &[UserId]) -> Vec<u8> {
    let mut sorted = view.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut out = Vec::with_capacity(VIEW_DOMAIN.len() + 12 + 4 * sorted.len());
    out.extend_from_slice(VIEW_DOMAIN);
    out.extend_from_slice(&round.to_be_bytes());
    out.extend_from_slice(&(sorted.len() as u32).to_be_bytes());
    for id in sorted {
        out.extend_from_slice(&id.to_be_bytes());
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignedView {
    pub signer: UserId,
    pub view: Vec<UserId>,
    pub signature: Signature,
}

impl SignedView {
    pub fn sign(signer: UserId, key: &SigningKey, round: u64, view: &[UserId]) -> Self {
        let mut view = view.to_vec();
        view.sort_unstable();
        view.dedup();
        Self {
            signer,
            signature: key.sign(&view_message(round, &view)),
            view,
        }
    }

    /// `4-byte signer || view message || signature`.
    pub fn to_bytes(&self, round: u64) -> Vec<u8> {
        let mut out = self.signer.to_be_bytes().to_vec();
        out.extend_from_slice(&view_message(round, &self.view));
        out.extend_from_slice(&self.signature.0);
        out
    }
}

/// Signatures the server forwards to every survivor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ViewBundle {
    pub view: Vec<UserId>,
    pub signatures: Vec<(UserId, Signature)>,
}

impl ViewBundle {
    pub fn signers(&self) -> Vec<UserId> {
        self.signatures.iter().map(|(u, _)| *u).collect()
    }

    pub fn to_bytes(&self, round: u64) -> Vec<u8> {
        let mut out = view_message(round, &self.view);
        out.extend_from_slice(&(self.signatures.len() as u32).to_be_bytes());
        for (u, s) in &self.signatures {
            out.extend_from_slice(&u.to_be_bytes());
            out.extend_from_slice(&s.0);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConsistencyFailure {
    #[error("only {got} valid signatures on one view, threshold is {threshold}")]
    TooFewSignatures { got: usize, threshold: usize },
    #[error("user {checker} rejected the signature of user {signer}")]
    BadSignature { checker: UserId, signer: UserId },
    #[error("user {checker} sees signers outside its view: {extra:?}")]
    NotSubset { checker: UserId, extra: Vec<UserId> },
}

pub type KeyRegistry = BTreeMap<UserId, VerifyingKey>;

/// Server side: keep the view with the most valid signatures, need `t`.
pub fn collect_bundle(
    signed: &[SignedView],
    registry: &KeyRegistry,
    round: u64,
    threshold: usize,
) -> Result<ViewBundle, ConsistencyFailure> {
    let mut groups: BTreeMap<Vec<UserId>, Vec<(UserId, Signature)>> = BTreeMap::new();
    for sv in signed {
        let valid = registry
            .get(&sv.signer)
            .is_some_and(|k| k.verify(&view_message(round, &sv.view), &sv.signature));
        if valid {
            groups
                .entry(sv.view.clone())
                .or_default()
                .push((sv.signer, sv.signature.clone()));
        }
    }
    let best = groups.into_iter().max_by_key(|(_, sigs)| sigs.len());
    match best {
        Some((view, signatures)) if signatures.len() >= threshold => {
            Ok(ViewBundle { view, signatures })
        }
        other => Err(ConsistencyFailure::TooFewSignatures {
            got: other.map_or(0, |(_, s)| s.len()),
            threshold,
        }),
    }
}

/// User side: at least `t` signers, all inside the user's own view, and all
/// signatures valid on that view.
pub fn check_bundle(
    checker: UserId,
    own_view: &[UserId],
    bundle: &ViewBundle,
    registry: &KeyRegistry,
    round: u64,
    threshold: usize,
) -> Result<(), ConsistencyFailure> {
    if bundle.signatures.len() < threshold {
        return Err(ConsistencyFailure::TooFewSignatures {
            got: bundle.signatures.len(),
            threshold,
        });
    }
    let own: BTreeSet<UserId> = own_view.iter().copied().collect();
    let extra: Vec<UserId> = bundle
        .signers()
        .into_iter()
        .filter(|u| !own.contains(u))
        .collect();
    if !extra.is_empty() {
        return Err(ConsistencyFailure::NotSubset { checker, extra });
    }
    let msg = view_message(round, own_view);
    for (signer, sig) in &bundle.signatures {
        let ok = registry.get(signer).is_some_and(|k| k.verify(&msg, sig));
        if !ok {
            return Err(ConsistencyFailure::BadSignature {
                checker,
                signer: *signer,
            });
        }
    }
    Ok(())
}

/// Whole check for one round: `views[u]` is the list the server showed user `u`.
pub fn consistency_check(
    views: &BTreeMap<UserId, Vec<UserId>>,
    keys: &BTreeMap<UserId, SigningKey>,
    round: u64,
    threshold: usize,
) -> Result<ViewBundle, ConsistencyFailure> {
    let registry: KeyRegistry = keys.iter().map(|(u, k)| (*u, k.verifying_key())).collect();
    let signed: Vec<SignedView> = views
        .iter()
        .map(|(u, view)| SignedView::sign(*u, &keys[u], round, view))
        .collect();
    let bundle = collect_bundle(&signed, &registry, round, threshold)?;
    for (u, view) in views {
        check_bundle(*u, view, &bundle, &registry, round, threshold)?;
    }
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn ring(dim: usize) -> RingSpec {
        RingSpec {
            modulus: BigUint::from(1u32) << 64usize,
            dim,
        }
    }

    fn scalars(vals: &[u64]) -> Vec<Vec<BigUint>> {
        vals.iter()
            .map(|&v| alloc::vec![BigUint::from(v)])
            .collect()
    }

    #[test]
    fn prg_basics() {
        let q = BigUint::from(1000u32);
        assert!(prg_expand(7, 0, &q).is_empty());
        assert_eq!(prg_expand(7, 50, &q), prg_expand(7, 50, &q));
        assert!(prg_expand(7, 50, &q).iter().all(|v| v < &q));
        let a = prg_expand(7, 200, &q);
        let b = prg_expand(7 ^ 1, 200, &q);
        let differing = a.iter().zip(&b).filter(|(x, y)| x != y).count();
        assert!(differing > 80, "{differing}");
    }

    #[test]
    fn prg_prefix_stable() {
        let q = BigUint::from(1u32) << 168usize;
        let long = prg_expand(99, 10, &q);
        assert_eq!(prg_expand(99, 4, &q), long[..4]);
    }

    #[test]
    fn pairwise_masks_cancel() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let r = ring(5);
        let shamir = Shamir::with_threshold(2).unwrap();
        let mg = mask_generation(&[1, 2, 3], &BTreeSet::new(), &shamir, &r, &mut rng).unwrap();
        let mut total = alloc::vec![BigUint::zero(); 5];
        for st in mg.states.values() {
            add_into(&mut total, &st.pairwise_mask, &r.modulus);
        }
        assert!(total.iter().all(Zero::is_zero));
    }

    #[test]
    fn single_user_has_only_self_mask() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let r = ring(3);
        let shamir = Shamir::with_threshold(1).unwrap();
        let mg = mask_generation(&[1], &BTreeSet::new(), &shamir, &r, &mut rng).unwrap();
        let st = &mg.states[&1];
        assert!(st.pairwise_seeds.is_empty());
        assert!(st.pairwise_mask.iter().all(Zero::is_zero));
        assert_eq!(st.combined, st.self_mask);
    }

    #[test]
    fn drop_before_sharing() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let shamir = Shamir::with_threshold(4).unwrap();
        let dropped = [3].into_iter().collect();
        let mg = mask_generation(&[1, 2, 3, 4, 5], &dropped, &shamir, &ring(1), &mut rng).unwrap();
        assert_eq!(mg.u1, [1, 2, 4, 5]);
        let dropped = [3, 4].into_iter().collect();
        assert_eq!(
            mask_generation(&[1, 2, 3, 4, 5], &dropped, &shamir, &ring(1), &mut rng).unwrap_err(),
            SecAggError::BelowThreshold {
                alive: 3,
                threshold: 4
            }
        );
    }

    fn run(
        models: &[Vec<BigUint>],
        uploaders: &[UserId],
        t: usize,
        seed: u64,
    ) -> Result<Vec<BigUint>, SecAggError> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let r = ring(models[0].len());
        let users: Vec<UserId> = (1..=models.len() as UserId).collect();
        let shamir = Shamir::with_threshold(t).unwrap();
        let mg = mask_generation(&users, &BTreeSet::new(), &shamir, &r, &mut rng)?;
        let uploads: BTreeMap<UserId, Vec<BigUint>> = uploaders
            .iter()
            .map(|&u| (u, mg.states[&u].mask(&models[u as usize - 1], &r).unwrap()))
            .collect();
        let (y, u2) = masked_model_aggregation(&uploads, &mg.u1, t, &r)?;
        let (z, _) = model_aggregation_recovery(&y, &mg.u1, &u2, &u2, &shamir, &mg.store, &r)?;
        Ok(z)
    }

    #[test]
    fn recovery_without_dropout() {
        let z = run(&scalars(&[1, 2, 3]), &[1, 2, 3], 2, 4).unwrap();
        assert_eq!(z, [BigUint::from(6u32)]);
    }

    #[test]
    fn recovery_with_dropout() {
        let z = run(&scalars(&[1, 2, 3]), &[1, 3], 2, 5).unwrap();
        assert_eq!(z, [BigUint::from(4u32)]);
    }

    #[test]
    fn below_threshold_aborts() {
        assert_eq!(
            run(&scalars(&[1, 2, 3]), &[1], 2, 6).unwrap_err(),
            SecAggError::BelowThreshold {
                alive: 1,
                threshold: 2
            }
        );
    }

    #[test]
    fn zero_seeds_leave_plain_sum() {
        let r = ring(2);
        let pair: BTreeMap<UserId, u128> = [(2, 0u128)].into_iter().collect();
        let a = MaskState::derive(1, 0, pair, &r);
        let b = MaskState::derive(2, 0, [(1, 0u128)].into_iter().collect(), &r);
        let prg0 = prg_expand(0, 2, &r.modulus);
        assert_eq!(a.self_mask, prg0);
        let mut y = a
            .mask(&[BigUint::from(5u32), BigUint::from(6u32)], &r)
            .unwrap();
        add_into(
            &mut y,
            &b.mask(&[BigUint::from(1u32), BigUint::from(1u32)], &r)
                .unwrap(),
            &r.modulus,
        );
        sub_into(&mut y, &prg0, &r.modulus);
        sub_into(&mut y, &prg0, &r.modulus);
        assert_eq!(y, [BigUint::from(6u32), BigUint::from(7u32)]);
    }

    #[test]
    fn mask_length_checked() {
        let r = ring(2);
        let st = MaskState::derive(1, 1, BTreeMap::new(), &r);
        assert!(matches!(
            st.mask(&[BigUint::zero()], &r),
            Err(SecAggError::LengthMismatch { .. })
        ));
    }

    fn keys(n: u32, scheme: SignatureScheme) -> BTreeMap<UserId, SigningKey> {
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        (1..=n)
            .map(|u| (u, SigningKey::generate(scheme, &mut rng)))
            .collect()
    }

    #[test]
    fn signatures_round_trip() {
        for scheme in [SignatureScheme::Ed25519, SignatureScheme::Transparent] {
            let ks = keys(2, scheme);
            let sig = ks[&1].sign(b"hello");
            assert!(ks[&1].verifying_key().verify(b"hello", &sig));
            assert!(!ks[&1].verifying_key().verify(b"hellp", &sig));
            assert!(!ks[&2].verifying_key().verify(b"hello", &sig));
        }
    }

    #[test]
    fn honest_views_pass() {
        let ks = keys(5, SignatureScheme::Ed25519);
        let alive: Vec<UserId> = (1..=5).collect();
        let views = alive.iter().map(|&u| (u, alive.clone())).collect();
        let bundle = consistency_check(&views, &ks, 0, 4).unwrap();
        assert_eq!(bundle.view, alive);
        assert_eq!(bundle.signatures.len(), 5);
    }

    #[test]
    fn inconsistent_view_aborts() {
        let ks = keys(5, SignatureScheme::Transparent);
        let alive: Vec<UserId> = (1..=5).collect();
        let mut views: BTreeMap<UserId, Vec<UserId>> =
            alive.iter().map(|&u| (u, alive.clone())).collect();
        views.insert(1, alloc::vec![1, 3, 4, 5]);
        assert_eq!(
            consistency_check(&views, &ks, 0, 4).unwrap_err(),
            ConsistencyFailure::NotSubset {
                checker: 1,
                extra: alloc::vec![2]
            }
        );
    }

    #[test]
    fn too_few_signatures_abort() {
        let ks = keys(4, SignatureScheme::Ed25519);
        let registry: KeyRegistry = ks.iter().map(|(u, k)| (*u, k.verifying_key())).collect();
        let view: Vec<UserId> = (1..=4).collect();
        let signed: Vec<SignedView> = (1..=2)
            .map(|u| SignedView::sign(u, &ks[&u], 0, &view))
            .collect();
        assert_eq!(
            collect_bundle(&signed, &registry, 0, 3).unwrap_err(),
            ConsistencyFailure::TooFewSignatures {
                got: 2,
                threshold: 3
            }
        );
        let bundle = ViewBundle {
            view: view.clone(),
            signatures: signed
                .iter()
                .map(|s| (s.signer, s.signature.clone()))
                .collect(),
        };
        assert!(matches!(
            check_bundle(3, &view, &bundle, &registry, 0, 3),
            Err(ConsistencyFailure::TooFewSignatures { .. })
        ));
    }

    #[test]
    fn forged_signature_detected() {
        let ks = keys(3, SignatureScheme::Ed25519);
        let registry: KeyRegistry = ks.iter().map(|(u, k)| (*u, k.verifying_key())).collect();
        let view: Vec<UserId> = (1..=3).collect();
        let mut bundle = ViewBundle {
            view: view.clone(),
            signatures: (1..=3)
                .map(|u| (u, SignedView::sign(u, &ks[&u], 0, &view).signature))
                .collect(),
        };
        bundle.signatures[1].1 = ks[&1].sign(&view_message(0, &view));
        assert_eq!(
            check_bundle(3, &view, &bundle, &registry, 0, 3).unwrap_err(),
            ConsistencyFailure::BadSignature {
                checker: 3,
                signer: 2
            }
        );
    }
}
