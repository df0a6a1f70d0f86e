mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

use msms::pipeline::{load_checkpoint, Lab};
use msms::ratings::{AbxChoice, Response, TrialRecord};
use msms::workspace::Workspace;
use msms::{corpus_io, fsutil};
use msms_core::corpus::Split;
use msms_core::eval::abx_binomial;
use msms_core::trainer::{evaluate, Example, MetricsEvent};
use msms_core::trials::{EvalEntry, Trial, TrialKind};

fn msms(ws: &Path, config: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_msms"))
        .arg("--workspace")
        .arg(ws)
        .arg("--config")
        .arg(config)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(out: Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn error_line(out: &Output) -> String {
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    err.lines().last().unwrap_or_default().to_string()
}

#[test]
fn unknown_subcommand_prints_usage_and_exits_2() {
    let out = Command::new(env!("CARGO_BIN_EXE_msms")).arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("Usage"), "{err}");
}

#[test]
fn failures_print_one_category_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = msms(dir.path(), &dir.path().join("absent.json"), &["gen-corpus"]);
    assert!(error_line(&out).starts_with("error[missing]: "));

    let cfg = dir.path().join("c.json");
    common::write_config(&cfg, &common::tiny_config());
    let out = msms(&dir.path().join("ws"), &cfg, &["train", "--system", "msms"]);
    let line = error_line(&out);
    assert!(line.starts_with("error[missing]: ") && line.contains("corpus"), "{line}");
    let out = msms(&dir.path().join("ws"), &cfg, &["train", "--system", "single-speaker"]);
    assert!(error_line(&out).starts_with("error[usage]: "));

    std::fs::write(&cfg, "{\"train\": {\"steps\": 0}}").unwrap();
    let out = msms(&dir.path().join("ws"), &cfg, &["gen-corpus"]);
    assert!(error_line(&out).starts_with("error[config]: "), "{}", error_line(&out));
}

fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().display().to_string(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    common::write_config(&cfg, &common::tiny_config());
    let ws = dir.path().join("ws");

    let summary: serde_json::Value = serde_json::from_str(&ok(msms(&ws, &cfg, &["gen-corpus", "--seed", "7"]))).unwrap();
    let records = corpus_io::read_manifest(&ws.join("corpus")).unwrap();
    assert_eq!(summary["utterances"].as_u64().unwrap() as usize, records.len());
    let ids: Vec<&str> = records.iter().map(|r| r.id.as_str()).collect();
    let mut sorted = ids.clone();
    sorted.sort();
    assert_eq!(ids, sorted);
    for r in &records {
        assert!(ws.join("corpus").join(&r.audio).exists());
        assert_eq!(r.durations.len(), r.tokens.len());
    }
    let first = std::fs::read(ws.join("corpus/manifest.jsonl")).unwrap();
    ok(msms(&ws, &cfg, &["gen-corpus", "--seed", "7"]));
    assert_eq!(std::fs::read(ws.join("corpus/manifest.jsonl")).unwrap(), first);

    ok(msms(&ws, &cfg, &["train", "--system", "msms"]));
    ok(msms(&ws, &cfg, &["train", "--system", "multi-speaker", "--steps", "2"]));
    ok(msms(&ws, &cfg, &["pretrain-finetune", "--voice", "1"]));
    ok(msms(&ws, &cfg, &["train", "--system", "single-speaker", "--voice", "1"]));
    for v in ["1", "6"] {
        ok(msms(&ws, &cfg, &["train-vocoder", "--voice", v]));
    }

    // Metrics: one object per validation event; cadence checkpoints exist.
    let metrics: Vec<MetricsEvent> = fsutil::read_jsonl(&ws.join("metrics/msms.jsonl")).unwrap();
    assert_eq!(metrics.iter().map(|m| m.step).collect::<Vec<_>>(), [0, 2, 4]);
    for s in [0, 2, 4] {
        assert!(ws.join(format!("checkpoints/msms/train-{s:06}.msms")).exists());
    }
    let pf: Vec<MetricsEvent> = fsutil::read_jsonl(&ws.join("metrics/pretrain-finetune-v1.jsonl")).unwrap();
    assert!(pf.iter().any(|m| m.phase == "pretrain") && pf.iter().any(|m| m.phase == "finetune"));

    // Checkpoint round trip reproduces the logged validation loss exactly.
    let examples: Vec<Example> = corpus_io::load_examples(&ws.join("corpus")).unwrap();
    let val: Vec<&Example> = examples.iter().filter(|e| e.split == Split::Validation).collect();
    let ts = load_checkpoint(&ws.join("checkpoints/msms.msms")).unwrap();
    let tc = common::tiny_config().train;
    let again = evaluate(&ts.model, &ts.store, &ts.system, &val, &tc.weights).unwrap();
    assert_eq!(again.total.to_bits(), metrics.last().unwrap().validation.total.to_bits());

    ok(msms(&ws, &cfg, &["synth-eval-set"]));
    let index: Vec<EvalEntry> = fsutil::read_jsonl(&ws.join("eval/index.jsonl")).unwrap();
    for e in &index {
        assert!(ws.join("eval").join(&e.path).exists(), "{}", e.path);
    }
    let systems: std::collections::BTreeSet<(&str, u8)> = index.iter().map(|e| (e.system.as_str(), e.voice)).collect();
    let want: std::collections::BTreeSet<(&str, u8)> = [
        ("msms-tts", 1),
        ("msms-tts", 6),
        ("msms-longform", 1),
        ("msms-longform", 6),
        ("multi-speaker", 1),
        ("multi-speaker", 6),
        ("pretrain-finetune", 1),
        ("single-speaker", 1),
        ("natural", 1),
        ("natural", 6),
    ]
    .into();
    assert_eq!(systems, want);

    let sim = ok(msms(&ws, &cfg, &["eval-speaker-sim"]));
    assert!(sim.contains("Cosine sim."), "{sim}");
    let pitch = ok(msms(&ws, &cfg, &["eval-pitch"]));
    assert!(pitch.contains("Median Hz"));
    let style = ok(msms(&ws, &cfg, &["eval-style", "--voice", "1", "--style", "longform"]));
    assert!(style.starts_with("voice 1 style longform"), "{style}");
    let report = ok(msms(&ws, &cfg, &["report"]));
    assert!(report.contains("speaker_sim") && report.contains("msms: train step 4"), "{report}");

    // Natural self-similarity is the reference row.
    let sim: msms::pipeline::SpeakerSimReport = fsutil::read_json(&ws.join("reports/speaker_sim.json")).unwrap();
    for v in &sim.voices {
        let row = v.report.row("natural").unwrap();
        assert_eq!((row.mse, row.cosine), (0.0, 1.0));
    }

    // Evaluation set is reproducible.
    let eval1 = tree(&ws.join("eval"));
    ok(msms(&ws, &cfg, &["synth-eval-set"]));
    assert_eq!(tree(&ws.join("eval")), eval1);

    let lab = Lab::new(Workspace::new(&ws), common::tiny_config()).unwrap();
    assert_eq!(lab.read_index().unwrap(), index);
}

#[test]
fn stats_commands_read_the_ratings_log() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    common::write_config(&cfg, &common::tiny_config());
    let log = dir.path().join("ratings.jsonl");
    let mut records = Vec::new();
    // Voice 2, pair 0: the first system wins 9 of 12; voice 3: 6 of 12.
    for (voice, wins) in [(2u8, 9usize), (3, 6)] {
        for i in 0..12 {
            let first_on_a = i % 2 == 0;
            let chose_first = i < wins;
            let choice = if chose_first == first_on_a { AbxChoice::A } else { AbxChoice::B };
            let trial = Trial::Abx {
                id: format!("abx-{voice}-{i}"),
                pair: 0,
                a: "a".into(),
                b: "b".into(),
                x: "x".into(),
                first_on_a,
                voice,
            };
            records.push(TrialRecord {
                trial_id: trial.id().into(),
                kind: TrialKind::Abx,
                trial,
                rater: "r".into(),
                response: Response::Abx { choice },
                device: None,
                timestamp_ms: 0,
            });
        }
    }
    for (i, score) in [5u8, 4, 4, 3].iter().enumerate() {
        let trial = Trial::Mos {
            id: format!("mos-{i}"),
            sample: "s".into(),
            system: "msms-tts".into(),
            voice: 1,
            domain: msms_core::corpus::Domain::Books,
        };
        records.push(TrialRecord {
            trial_id: trial.id().into(),
            kind: TrialKind::Mos,
            trial,
            rater: "r".into(),
            response: Response::Mos { score: *score },
            device: Some("speakers".into()),
            timestamp_ms: 0,
        });
    }
    fsutil::write_jsonl(&log, &records).unwrap();
    let ws = dir.path().join("ws");
    let log_arg = log.to_str().unwrap();
    let abx = ok(msms(&ws, &cfg, &["stats-abx", "--log", log_arg]));
    let rows: Vec<msms::ratings::AbxRow> = fsutil::read_json(&ws.join("reports/abx.json")).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!((rows[0].voice, rows[0].summary.wins_first, rows[0].summary.trials), (2, 9, 12));
    assert_eq!(rows[0].summary.p_value, abx_binomial(9, 12).unwrap());
    assert_eq!(rows[1].summary.p_value, abx_binomial(6, 12).unwrap());
    assert!(abx.contains("msms-longform vs multi-speaker"), "{abx}");
    let mos = ok(msms(&ws, &cfg, &["stats-mos", "--log", log_arg]));
    assert!(mos.contains("msms-tts") && mos.contains("4.000"), "{mos}");

    let missing = msms(&ws, &cfg, &["stats-abx", "--log", dir.path().join("none.jsonl").to_str().unwrap()]);
    assert!(error_line(&missing).starts_with("error[missing]: "));
}
