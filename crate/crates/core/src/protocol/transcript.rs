use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use thiserror::Error;

use crate::secagg::UserId;

/// Id of the server in transcript records; clients are `1..=n`.
pub const SERVER: UserId = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum Step {
    Setup = 0,
    Init = 1,
    CompE = 2,
    PoKE = 3,
    PoKM = 4,
    WAgg = 5,
}

impl Step {
    pub const ALL: [Step; 6] = [
        Step::Setup,
        Step::Init,
        Step::CompE,
        Step::PoKE,
        Step::PoKM,
        Step::WAgg,
    ];

    /// Steps that count toward round totals.
    pub const ROUND: [Step; 5] = [Step::Init, Step::CompE, Step::PoKE, Step::PoKM, Step::WAgg];

    pub fn name(self) -> &'static str {
        match self {
            Step::Setup => "Setup",
            Step::Init => "Init",
            Step::CompE => "ComE",
            Step::PoKE => "PoKE",
            Step::PoKM => "PoKM",
            Step::WAgg => "WAgg",
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.get(usize::from(tag)).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum MessageType {
    EncDataset = 1,
    PairSeed = 2,
    MaskShare = 3,
    EncMask = 4,
    AliveSet = 5,
    EncModel = 6,
    EncZ = 7,
    EncZ2Sigma = 8,
    EncH = 9,
    HPlusR = 10,
    EncE = 11,
    EPublish = 12,
    PpopkCPrime = 13,
    CommitA = 14,
    ChallengeE = 15,
    ResponseZ = 16,
    MaskedModel = 17,
    SignedView = 18,
    ViewBundle = 19,
    SeedShareReveal = 20,
    GlobalModel = 21,
}

impl MessageType {
    pub const ALL: [MessageType; 21] = [
        MessageType::EncDataset,
        MessageType::PairSeed,
        MessageType::MaskShare,
        MessageType::EncMask,
        MessageType::AliveSet,
        MessageType::EncModel,
        MessageType::EncZ,
        MessageType::EncZ2Sigma,
        MessageType::EncH,
        MessageType::HPlusR,
        MessageType::EncE,
        MessageType::EPublish,
        MessageType::PpopkCPrime,
        MessageType::CommitA,
        MessageType::ChallengeE,
        MessageType::ResponseZ,
        MessageType::MaskedModel,
        MessageType::SignedView,
        MessageType::ViewBundle,
        MessageType::SeedShareReveal,
        MessageType::GlobalModel,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MessageType::EncDataset => "ENC_DATASET",
            MessageType::PairSeed => "PAIR_SEED",
            MessageType::MaskShare => "MASK_SHARE",
            MessageType::EncMask => "ENC_MASK",
            MessageType::AliveSet => "ALIVE_SET",
            MessageType::EncModel => "ENC_MODEL",
            MessageType::EncZ => "ENC_Z",
            MessageType::EncZ2Sigma => "ENC_Z2_SIGMA",
            MessageType::EncH => "ENC_H",
            MessageType::HPlusR => "H_PLUS_R",
            MessageType::EncE => "ENC_E",
            MessageType::EPublish => "E_PUBLISH",
            MessageType::PpopkCPrime => "PPOPK_CPRIME",
            MessageType::CommitA => "COMMIT_A",
            MessageType::ChallengeE => "CHALLENGE_E",
            MessageType::ResponseZ => "RESPONSE_Z",
            MessageType::MaskedModel => "MASKED_MODEL",
            MessageType::SignedView => "SIGNED_VIEW",
            MessageType::ViewBundle => "VIEW_BUNDLE",
            MessageType::SeedShareReveal => "SEED_SHARE_REVEAL",
            MessageType::GlobalModel => "GLOBAL_MODEL",
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.get(usize::from(tag).checked_sub(1)?).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub step: Step,
    pub sender: UserId,
    pub receiver: UserId,
    pub kind: MessageType,
    pub payload: Vec<u8>,
}

/// Bytes of a record header: step, sender, receiver, type, length.
pub const HEADER_BYTES: usize = 1 + 4 + 4 + 1 + 4;

impl Record {
    pub fn write_to(&self, out: &mut Vec<u8>) {
        out.push(self.step as u8);
        out.extend_from_slice(&self.sender.to_be_bytes());
        out.extend_from_slice(&self.receiver.to_be_bytes());
        out.push(self.kind as u8);
        out.extend_from_slice(&(self.payload.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.payload);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TranscriptError {
    #[error("truncated record at byte {0}")]
    Truncated(usize),
    #[error("unknown step tag {tag} at byte {offset}")]
    Step { tag: u8, offset: usize },
    #[error("unknown message type {tag} at byte {offset}")]
    Type { tag: u8, offset: usize },
}

/// Append-only log of every message of a run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Transcript {
    records: Vec<Record>,
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(
        &mut self,
        step: Step,
        sender: UserId,
        receiver: UserId,
        kind: MessageType,
        payload: Vec<u8>,
    ) {
        self.records.push(Record {
            step,
            sender,
            receiver,
            kind,
            payload,
        });
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn payload_bytes(&self) -> u64 {
        self.records.iter().map(|r| r.payload.len() as u64).sum()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for r in &self.records {
            r.write_to(&mut out);
        }
        out
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self, TranscriptError> {
        let total = bytes.len();
        let mut records = Vec::new();
        while !bytes.is_empty() {
            let offset = total - bytes.len();
            if bytes.len() < HEADER_BYTES {
                return Err(TranscriptError::Truncated(offset));
            }
            let u32_at =
                |i: usize| u32::from_be_bytes([bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]]);
            let step = Step::from_tag(bytes[0]).ok_or(TranscriptError::Step {
                tag: bytes[0],
                offset,
            })?;
            let kind = MessageType::from_tag(bytes[9]).ok_or(TranscriptError::Type {
                tag: bytes[9],
                offset,
            })?;
            let len = u32_at(10) as usize;
            if bytes.len() < HEADER_BYTES + len {
                return Err(TranscriptError::Truncated(offset));
            }
            records.push(Record {
                step,
                sender: u32_at(1),
                receiver: u32_at(5),
                kind,
                payload: bytes[HEADER_BYTES..HEADER_BYTES + len].to_vec(),
            });
            bytes = &bytes[HEADER_BYTES + len..];
        }
        Ok(Self { records })
    }
}

/// Monotonic time source in nanoseconds.
pub trait Clock {
    fn now(&self) -> u64;
}

/// Reads zero forever; runs without a clock report zero durations.
#[derive(Debug, Clone, Copy, Default)]
pub struct NullClock;

impl Clock for NullClock {
    fn now(&self) -> u64 {
        0
    }
}

/// Per-party compute time within one step.
pub(crate) struct Meter<'c> {
    pub(crate) clock: &'c dyn Clock,
    pub(crate) server: u64,
    pub(crate) users: BTreeMap<UserId, u64>,
}

impl<'c> Meter<'c> {
    pub(crate) fn new(clock: &'c dyn Clock) -> Self {
        Self {
            clock,
            server: 0,
            users: BTreeMap::new(),
        }
    }

    pub(crate) fn server<T>(&mut self, f: impl FnOnce() -> T) -> T {
        let start = self.clock.now();
        let out = f();
        self.server += self.clock.now().saturating_sub(start);
        out
    }

    pub(crate) fn user<T>(&mut self, u: UserId, f: impl FnOnce() -> T) -> T {
        let start = self.clock.now();
        let out = f();
        *self.users.entry(u).or_default() += self.clock.now().saturating_sub(start);
        out
    }
}

/// Time and traffic of one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepMetrics {
    pub step: Step,
    pub server_nanos: u64,
    /// Mean over the clients that did work in this step.
    pub user_nanos: u64,
    /// Payload bytes sent by the server.
    pub server_bytes: u64,
    /// Payload bytes sent by clients.
    pub user_bytes: u64,
    /// Clients that sent or received a message in this step.
    pub participants: usize,
    pub messages: usize,
}

impl StepMetrics {
    pub fn bytes(&self) -> u64 {
        self.server_bytes + self.user_bytes
    }

    /// Mean payload bytes sent and received per participating client.
    pub fn user_bytes_mean(&self) -> f64 {
        if self.participants == 0 {
            0.0
        } else {
            self.bytes() as f64 / self.participants as f64
        }
    }

    pub(crate) fn collect(step: Step, records: &[Record], meter: &Meter<'_>) -> Self {
        let mut server_bytes = 0;
        let mut user_bytes = 0;
        let mut messages = 0;
        let mut clients = alloc::collections::BTreeSet::new();
        for r in records.iter().filter(|r| r.step == step) {
            messages += 1;
            let len = r.payload.len() as u64;
            if r.sender == SERVER {
                server_bytes += len;
            } else {
                user_bytes += len;
                clients.insert(r.sender);
            }
            if r.receiver != SERVER {
                clients.insert(r.receiver);
            }
        }
        let busy = meter.users.len();
        let user_nanos = if busy == 0 {
            0
        } else {
            meter.users.values().sum::<u64>() / busy as u64
        };
        Self {
            step,
            server_nanos: meter.server,
            user_nanos,
            server_bytes,
            user_bytes,
            participants: clients.len(),
            messages,
        }
    }
}

/// Sums over the round steps.
pub fn totals(steps: &[StepMetrics]) -> StepMetrics {
    let round: Vec<&StepMetrics> = steps
        .iter()
        .filter(|s| Step::ROUND.contains(&s.step))
        .collect();
    StepMetrics {
        step: Step::WAgg,
        server_nanos: round.iter().map(|s| s.server_nanos).sum(),
        user_nanos: round.iter().map(|s| s.user_nanos).sum(),
        server_bytes: round.iter().map(|s| s.server_bytes).sum(),
        user_bytes: round.iter().map(|s| s.user_bytes).sum(),
        participants: round.iter().map(|s| s.participants).max().unwrap_or(0),
        messages: round.iter().map(|s| s.messages).sum(),
    }
}
