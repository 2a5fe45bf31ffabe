//! Seeded protocol runs and their metrics.

use std::path::PathBuf;
use std::time::Instant;

use fedwagg_core::data::{synthetic, Dataset};
use fedwagg_core::protocol::{
    party_rng, Clock, ConfigError, DropPoint, Exclusion, Mode, ProtocolConfig, ProtocolError,
    RoundState, Simulation, Step, StepMetrics, Transcript, SERVER,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{load_dataset, DatasetError};

/// Nanoseconds since construction.
#[derive(Debug, Clone, Copy)]
pub struct WallClock(Instant);

impl WallClock {
    pub fn new() -> Self {
        Self(Instant::now())
    }
}

impl Default for WallClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for WallClock {
    fn now(&self) -> u64 {
        self.0.elapsed().as_nanos() as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Csv(PathBuf),
    /// Uniform features in `[0, 1]` with labels drawn from a logistic model.
    Synthetic {
        theta: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub config: ProtocolConfig,
    pub data: DataSource,
    pub per_client: usize,
    pub benchmark_size: usize,
    pub rounds: u64,
    /// Independent runs; repetition `k` uses seed `config.seed + k`.
    pub repetitions: usize,
    /// Also run the masking-only baseline on the same seeds.
    pub compare_baseline: bool,
    /// Wall-clock timing instead of zero durations.
    pub timed: bool,
}

impl ExperimentSpec {
    pub fn new(config: ProtocolConfig) -> Self {
        Self {
            config,
            data: DataSource::Synthetic {
                theta: vec![-0.5, 2.0, -1.0],
            },
            per_client: 50,
            benchmark_size: 500,
            rounds: 1,
            repetitions: 1,
            compare_baseline: false,
            timed: true,
        }
    }
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRow {
    pub step: String,
    pub server_seconds: f64,
    /// Mean over the clients that worked in the step.
    pub user_seconds: f64,
    pub server_bytes: u64,
    pub user_bytes: u64,
    /// Bytes sent and received per participating client.
    pub user_bytes_mean: f64,
    pub messages: usize,
}

impl StepRow {
    fn empty(step: &str) -> Self {
        Self {
            step: step.into(),
            server_seconds: 0.0,
            user_seconds: 0.0,
            server_bytes: 0,
            user_bytes: 0,
            user_bytes_mean: 0.0,
            messages: 0,
        }
    }

    fn from_metrics(m: &StepMetrics) -> Self {
        Self {
            step: m.step.name().into(),
            server_seconds: m.server_nanos as f64 * 1e-9,
            user_seconds: m.user_nanos as f64 * 1e-9,
            server_bytes: m.server_bytes,
            user_bytes: m.user_bytes,
            user_bytes_mean: m.user_bytes_mean(),
            messages: m.messages,
        }
    }

    pub fn bytes(&self) -> u64 {
        self.server_bytes + self.user_bytes
    }

    pub fn seconds(&self) -> f64 {
        self.server_seconds + self.user_seconds
    }

    fn total(rows: &[StepRow]) -> Self {
        let mut t = Self::empty("Total");
        for r in rows {
            t.server_seconds += r.server_seconds;
            t.user_seconds += r.user_seconds;
            t.server_bytes += r.server_bytes;
            t.user_bytes += r.user_bytes;
            t.user_bytes_mean += r.user_bytes_mean;
            t.messages += r.messages;
        }
        t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Failed { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedUser {
    pub id: u32,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRatios {
    pub bytes: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub repetition: usize,
    pub round: u64,
    pub seed: u64,
    pub status: RunStatus,
    /// Fractions of clients that dropped in the first and second phase.
    pub r1: f64,
    pub r2: f64,
    /// Five round steps in order; a failed round keeps bytes of the steps it reached.
    pub steps: Vec<StepRow>,
    pub total: StepRow,
    pub excluded: Vec<ExcludedUser>,
    pub survivors: Vec<u32>,
    pub model: Option<Vec<f64>>,
    pub baseline: Option<BaselineRatios>,
}

impl RunReport {
    pub fn completed(&self) -> bool {
        self.status == RunStatus::Completed
    }

    pub fn step(&self, step: Step) -> Option<&StepRow> {
        self.steps.iter().find(|s| s.step == step.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub clients: usize,
    pub threshold: usize,
    pub key_bits: u64,
    pub kappa: u32,
    pub alpha: f64,
    pub seed: u64,
    pub baseline_mode: bool,
    pub per_client: usize,
    pub benchmark_size: usize,
    pub setup: Vec<StepRow>,
    pub runs: Vec<RunReport>,
}

impl MetricsReport {
    /// Copy with every duration zeroed, for comparing seeded runs.
    pub fn without_timing(&self) -> Self {
        let mut r = self.clone();
        let zero = |s: &mut StepRow| {
            s.server_seconds = 0.0;
            s.user_seconds = 0.0;
        };
        r.setup.iter_mut().for_each(zero);
        for run in &mut r.runs {
            run.steps.iter_mut().for_each(zero);
            zero(&mut run.total);
            if let Some(b) = &mut run.baseline {
                b.seconds = 0.0;
            }
        }
        r
    }
}

pub struct Experiment {
    pub report: MetricsReport,
    /// One per repetition, full mode.
    pub transcripts: Vec<Transcript>,
}

fn reason(e: Exclusion) -> String {
    match e {
        Exclusion::Dropped(p) => format!("dropped-{}", p.name()),
        Exclusion::FailedE => "failed-e".into(),
        Exclusion::FailedM => "failed-m".into(),
    }
}

fn dropout_fractions(state: &RoundState, n: usize) -> (f64, f64) {
    let (mut a, mut b) = (0usize, 0usize);
    for e in state.excluded.values() {
        match e {
            Exclusion::Dropped(DropPoint::Init | DropPoint::CompE | DropPoint::PoKE) => a += 1,
            Exclusion::Dropped(DropPoint::PoKM | DropPoint::WAgg) => b += 1,
            _ => {}
        }
    }
    (a as f64 / n as f64, b as f64 / n as f64)
}

/// Bytes per step of records appended since `start`; durations are unknown.
fn partial_steps(transcript: &Transcript, start: usize) -> Vec<StepRow> {
    Step::ROUND
        .iter()
        .map(|&step| {
            let mut row = StepRow::empty(step.name());
            let mut clients = std::collections::BTreeSet::new();
            for r in transcript.records()[start..]
                .iter()
                .filter(|r| r.step == step)
            {
                if r.sender == SERVER {
                    row.server_bytes += r.payload.len() as u64;
                } else {
                    row.user_bytes += r.payload.len() as u64;
                    clients.insert(r.sender);
                }
                if r.receiver != SERVER {
                    clients.insert(r.receiver);
                }
                row.messages += 1;
            }
            if !clients.is_empty() {
                row.user_bytes_mean = row.bytes() as f64 / clients.len() as f64;
            }
            row
        })
        .collect()
}

pub fn datasets(
    spec: &ExperimentSpec,
    seed: u64,
) -> Result<(Vec<Dataset>, Dataset), ExperimentError> {
    let mut rng = party_rng(seed, b"dataset", 0);
    let n = spec.config.n_clients;
    Ok(match &spec.data {
        DataSource::Csv(path) => {
            load_dataset(path, spec.per_client, n, spec.benchmark_size, &mut rng)?
        }
        DataSource::Synthetic { theta } => {
            let clients = (0..n)
                .map(|_| synthetic(spec.per_client, theta, &mut rng))
                .collect();
            (clients, synthetic(spec.benchmark_size, theta, &mut rng))
        }
    })
}

struct Repetition {
    setup: Vec<StepRow>,
    runs: Vec<RunReport>,
    transcript: Transcript,
}

fn run_once(
    spec: &ExperimentSpec,
    config: ProtocolConfig,
    repetition: usize,
) -> Result<Repetition, ExperimentError> {
    let seed = config.seed;
    let n = config.n_clients;
    let (clients, benchmark) = datasets(spec, seed)?;
    let mut sim = if spec.timed {
        Simulation::new(config, clients, benchmark, WallClock::new())?
    } else {
        Simulation::new(
            config,
            clients,
            benchmark,
            fedwagg_core::protocol::NullClock,
        )?
    };
    let setup = vec![StepRow::from_metrics(&sim.setup()?)];
    let mut runs = Vec::new();
    for _ in 0..spec.rounds {
        let start = sim.transcript().len();
        let round = sim.rounds_run() + 1;
        let outcome = sim.run_round();
        let (status, steps) = match &outcome {
            Ok(o) => (
                RunStatus::Completed,
                o.metrics.iter().map(StepRow::from_metrics).collect(),
            ),
            Err(e) => (
                RunStatus::Failed {
                    error: e.to_string(),
                },
                partial_steps(sim.transcript(), start),
            ),
        };
        let state = match &outcome {
            Ok(o) => Some(&o.state),
            Err(_) => sim.last_round().filter(|s| s.round == round),
        };
        let (r1, r2) = state.map_or((0.0, 0.0), |s| dropout_fractions(s, n));
        let total = StepRow::total(&steps);
        runs.push(RunReport {
            repetition,
            round,
            seed,
            status,
            r1,
            r2,
            steps,
            total,
            excluded: state.map_or_else(Vec::new, |s| {
                s.excluded
                    .iter()
                    .map(|(&id, &e)| ExcludedUser {
                        id,
                        reason: reason(e),
                    })
                    .collect()
            }),
            survivors: state.map_or_else(Vec::new, |s| s.u6.clone()),
            model: state.and_then(|s| s.global.as_ref().map(|m| m.theta.clone())),
            baseline: None,
        });
        if outcome.is_err() {
            break;
        }
    }
    Ok(Repetition {
        setup,
        runs,
        transcript: sim.transcript().clone(),
    })
}

/// Runs every repetition. Protocol aborts become failed rows; only bad
/// configuration or data is an error.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Experiment, ExperimentError> {
    spec.config.validate()?;
    let mut setup = Vec::new();
    let mut runs = Vec::new();
    let mut transcripts = Vec::new();
    for k in 0..spec.repetitions.max(1) {
        let mut config = spec.config.clone();
        config.seed = spec.config.seed.wrapping_add(k as u64);
        let mut rep = run_once(spec, config.clone(), k)?;
        if spec.compare_baseline && config.mode == Mode::Full {
            config.mode = Mode::Baseline;
            let base = run_once(spec, config, k)?;
            for (full, base) in rep.runs.iter_mut().zip(&base.runs) {
                if full.completed() && base.completed() {
                    let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { f64::NAN };
                    full.baseline = Some(BaselineRatios {
                        bytes: ratio(full.total.bytes() as f64, base.total.bytes() as f64),
                        seconds: ratio(full.total.seconds(), base.total.seconds()),
                    });
                }
            }
        }
        setup.extend(rep.setup);
        runs.extend(rep.runs);
        transcripts.push(rep.transcript);
    }
    let c = &spec.config;
    Ok(Experiment {
        report: MetricsReport {
            clients: c.n_clients,
            threshold: c.threshold,
            key_bits: c.paillier_bits,
            kappa: c.kappa,
            alpha: c.alpha,
            seed: c.seed,
            baseline_mode: c.mode == Mode::Baseline,
            per_client: spec.per_client,
            benchmark_size: spec.benchmark_size,
            setup,
            runs,
        },
        transcripts,
    })
}
