#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::io::Write;
use std::process::Command;

use common::{exact_entropy, toy_config, weighted_oracle};
use fedwagg::experiment::datasets;
use fedwagg::{
    emit_report, load_dataset, render, run_experiment, DataSource, DatasetError, ExperimentSpec,
    Format, MetricsReport, RunStatus,
};
use fedwagg_core::protocol::{party_rng, NullClock, Simulation, Step};
use rand::RngCore;

fn spec(n: usize, seed: u64) -> ExperimentSpec {
    let mut s = ExperimentSpec::new(toy_config(n, seed));
    s.per_client = 4;
    s.benchmark_size = 6;
    s
}

fn synthetic_csv(rows: usize) -> (tempfile::NamedTempFile, Vec<[f64; 2]>) {
    let mut rng = party_rng(5, b"csv", 0);
    let mut file = tempfile::NamedTempFile::new().unwrap();
    writeln!(file, "x1,x2,label").unwrap();
    let mut values = Vec::new();
    for i in 0..rows {
        let x = [
            (rng.next_u32() % 1000) as f64 / 10.0 - 20.0,
            (rng.next_u32() % 500) as f64 * 3.0,
        ];
        writeln!(file, "{},{},{}", x[0], x[1], i % 2).unwrap();
        values.push(x);
    }
    file.flush().unwrap();
    (file, values)
}

#[test]
fn load_synthetic_csv() {
    let (file, values) = synthetic_csv(100);
    let mut rng = party_rng(1, b"split", 0);
    let (clients, bench) = load_dataset(file.path(), 10, 2, 10, &mut rng).unwrap();
    assert_eq!(
        (clients[0].len(), clients[1].len(), bench.len()),
        (10, 10, 10)
    );
    for d in clients.iter().chain([&bench]) {
        assert!(d.labels().iter().all(|&y| y <= 1));
        assert!(d
            .features()
            .iter()
            .flatten()
            .all(|v| (0.0..=1.0).contains(v)));
    }

    // Normalization against min/max taken straight from the written values.
    let lo0 = values.iter().map(|v| v[0]).fold(f64::INFINITY, f64::min);
    let hi0 = values
        .iter()
        .map(|v| v[0])
        .fold(f64::NEG_INFINITY, f64::max);
    let parsed = fedwagg::dataset::normalize(
        &fedwagg::dataset::parse_csv(std::fs::File::open(file.path()).unwrap()).unwrap(),
    );
    for (row, v) in parsed.features().iter().zip(&values) {
        assert!((row[0] - (v[0] - lo0) / (hi0 - lo0)).abs() < 1e-12);
    }
    let argmax = values.iter().position(|v| v[0] == hi0).unwrap();
    assert_eq!(parsed.features()[argmax][0], 1.0);
}

#[test]
fn malformed_row_names_its_line() {
    let mut file = tempfile::NamedTempFile::new().unwrap();
    write!(file, "a,b,y\n0.1,0.2,1\n0.3,oops,0\n").unwrap();
    let mut rng = party_rng(1, b"split", 0);
    let err = load_dataset(file.path(), 1, 1, 1, &mut rng).unwrap_err();
    assert!(matches!(err, DatasetError::Parse { line: 3, .. }), "{err}");
    assert!(err.to_string().starts_with("line 3"));

    let (file, _) = synthetic_csv(12);
    let err = load_dataset(file.path(), 1, 1, 12, &mut rng).unwrap_err();
    assert!(matches!(
        err,
        DatasetError::InsufficientRows {
            needed: 13,
            available: 12
        }
    ));
    assert!(matches!(
        load_dataset(std::path::Path::new("/nonexistent.csv"), 1, 1, 1, &mut rng),
        Err(DatasetError::Io { .. })
    ));
}

#[test]
fn csv_source_runs_end_to_end() {
    let (file, _) = synthetic_csv(60);
    let mut s = spec(3, 2);
    s.data = DataSource::Csv(file.path().to_path_buf());
    s.timed = false;
    let report = run_experiment(&s).unwrap().report;
    assert!(report.runs[0].completed());
}

#[test]
fn eight_clients_match_the_oracle() {
    let mut s = spec(8, 3);
    s.config.threshold = 6;
    let exp = run_experiment(&s).unwrap();
    let run = &exp.report.runs[0];
    assert!(run.completed());
    let names: Vec<&str> = run.steps.iter().map(|r| r.step.as_str()).collect();
    assert_eq!(names, ["Init", "ComE", "PoKE", "PoKM", "WAgg"]);
    assert!(run.steps.iter().all(|r| r.user_bytes > 0));
    assert!(run.steps[1..].iter().all(|r| r.server_bytes > 0));
    assert_eq!(
        run.total.bytes(),
        run.steps.iter().map(|r| r.bytes()).sum::<u64>()
    );
    let transcript_bytes: u64 = exp.transcripts[0].payload_bytes();
    assert_eq!(
        transcript_bytes,
        run.total.bytes() + exp.report.setup[0].bytes()
    );

    let (clients, bench) = datasets(&s, s.config.seed).unwrap();
    let mut sim = Simulation::new(s.config.clone(), clients, bench, NullClock).unwrap();
    let st = sim.run(1).unwrap().remove(0).state;
    let server = st.server_model.as_ref().unwrap();
    let oracle = weighted_oracle(
        &st.u6,
        |u| st.local_models[&u].theta.clone(),
        |u| {
            exact_entropy(
                &st.local_models[&u],
                server,
                &sim.server().benchmark,
                &sim.client(u).unwrap().data,
                false,
            )
        },
        |u| sim.client(u).unwrap().data.len(),
        s.config.alpha,
    );
    for (got, want) in run.model.as_ref().unwrap().iter().zip(&oracle) {
        assert!((got - want).abs() <= 1.0 / (1u64 << 20) as f64);
    }
}

#[test]
fn dropout_recovery_costs_server_time() {
    let min_wagg = |r: &MetricsReport| {
        r.runs
            .iter()
            .map(|r| r.step(Step::WAgg).unwrap().server_seconds)
            .fold(f64::INFINITY, f64::min)
    };
    let mut calm = spec(10, 4);
    calm.repetitions = 3;
    let mut dropped = calm.clone();
    dropped.config.dropout.phase2 = 0.3;
    let calm = run_experiment(&calm).unwrap().report;
    let dropped = run_experiment(&dropped).unwrap().report;
    assert!(dropped
        .runs
        .iter()
        .all(|r| (r.r2 - 0.3).abs() < 1e-12 && r.r1 == 0.0));
    assert!(min_wagg(&dropped) > min_wagg(&calm));
}

#[test]
fn adversaries_are_flagged() {
    let mut s = spec(5, 5);
    s.config.adversaries = vec!["fraud-m:2".parse().unwrap()];
    let report = run_experiment(&s).unwrap().report;
    let run = &report.runs[0];
    assert_eq!(run.excluded.len(), 1);
    assert_eq!(
        (run.excluded[0].id, run.excluded[0].reason.as_str()),
        (2, "failed-m")
    );
    assert!(!run.survivors.contains(&2));
    assert!(render(&report, Format::Markdown)
        .unwrap()
        .contains("excluded 2 (failed-m)"));
}

#[test]
fn aborts_become_failed_rows() {
    let mut s = spec(4, 6);
    s.rounds = 2;
    s.config.adversaries = vec!["view:1:2".parse().unwrap()];
    let report = run_experiment(&s).unwrap().report;
    assert_eq!(report.runs.len(), 1);
    let run = &report.runs[0];
    assert!(matches!(&run.status, RunStatus::Failed { error } if error.contains("consistency")));
    assert!(run.model.is_none());
    assert!(run.step(Step::Init).unwrap().bytes() > 0);
    assert_eq!(
        run.step(Step::WAgg).unwrap().bytes(),
        run.total.bytes() - run.steps[..4].iter().map(|r| r.bytes()).sum::<u64>()
    );
}

#[test]
fn seeded_reports_repeat() {
    let mut s = spec(4, 7);
    s.rounds = 2;
    s.config.dropout.phase1 = 0.25;
    s.compare_baseline = true;
    let a = run_experiment(&s).unwrap();
    let b = run_experiment(&s).unwrap();
    assert_eq!(a.report.without_timing(), b.report.without_timing());
    assert_eq!(a.transcripts, b.transcripts);
    let ratio = a.report.runs[0].baseline.as_ref().unwrap().bytes;
    assert!(ratio > 1.0, "{ratio}");
}

#[test]
fn report_formats() {
    let mut s = spec(4, 8);
    s.config.dropout.phase2 = 0.25;
    let report = run_experiment(&s).unwrap().report;
    let dir = tempfile::tempdir().unwrap();

    let json = dir.path().join("r.json");
    emit_report(&report, Format::Json, &json).unwrap();
    let back: MetricsReport =
        serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(back, report);

    let csv = render(&report, Format::Csv).unwrap();
    assert_eq!(csv.lines().count(), 1 + Step::ROUND.len() + 1);
    assert!(csv.lines().last().unwrap().contains(",Total,"));

    let md = render(&report, Format::Markdown).unwrap();
    assert!(md.contains("| Init | ComE | PoKE | PoKM | WAgg | Total |"));
    assert!(md.contains("| 4 | 0% | 25% | User |"));
    assert_eq!(render(&report, Format::Markdown).unwrap(), md);
}

fn cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_fedwagg"))
        .args(args)
        .output()
        .unwrap()
}

#[test]
fn cli_run_and_validate() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.csv");
    let status = cli(&[
        "--clients",
        "4",
        "--key-bits",
        "256",
        "--per-client",
        "3",
        "--benchmark-size",
        "4",
        "--adversary",
        "fraud-e:3",
        "--seed",
        "9",
        "--format",
        "csv",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(
        status.status.success(),
        "{}",
        String::from_utf8_lossy(&status.stderr)
    );
    assert_eq!(std::fs::read_to_string(&out).unwrap().lines().count(), 7);

    let table = cli(&["validate", "--table", "5"]);
    assert_eq!(
        String::from_utf8(table.stdout).unwrap(),
        "n,t_min,adv_max\n3,3,0\n4,3,1\n5,4,1\n"
    );
    let bad = cli(&["validate", "--clients", "6", "--threshold", "4"]);
    assert!(!bad.status.success());
    let bad = cli(&["--clients", "4", "--adversary", "bogus:1"]);
    assert!(!bad.status.success());
}

#[test]
fn cli_fit_cubics_matches_the_frozen_constants() {
    let out = String::from_utf8(cli(&["fit-cubics"]).stdout).unwrap();
    let c = fedwagg_core::logreg::NEG_LOG_SIGMOID_CUBIC.coeffs;
    for v in c {
        assert!(out.contains(&format!("{v:?},")), "{v:?} missing");
    }
}
