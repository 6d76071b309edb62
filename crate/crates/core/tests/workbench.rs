use std::fs;
use std::path::Path;

use cifm::data::{Dataset, Example, Target, TaskKind};
use cifm::encoder::{Backbone, EncoderConfig, Model};
use cifm::metrics::MetricSpec;
use cifm::oracle::{make_synthetic_corpus_sized, CorpusSize, SyntheticKind};
use cifm::workbench::checkpoint::{self, CheckpointMeta};
use cifm::workbench::config::parse_overrides;
use cifm::workbench::ingest::RawTarget;
use cifm::workbench::report::config_hash;
use cifm::workbench::{export, ingest, load_manifest, resolve, run, Command, ExperimentConfig, Format, RunOptions};
use cifm::CifmError;
use proptest::prelude::*;
use tempfile::TempDir;

#[test]
fn three_row_tsv() {
    let dir = TempDir::new().unwrap();
    let p = dir.path().join("train.tsv");
    fs::write(&p, "text\tlabel\nall good\tpos\n\"quoted\" text\tneg\nmeh\tpos\n").unwrap();
    let split = ingest(&p, Format::Tsv).unwrap();
    assert_eq!(split.records.len(), 3);
    assert_eq!(split.records[1].text, "\"quoted\" text");
    assert_eq!(split.records[2].target, RawTarget::Label("pos".into()));
}

#[test]
fn duplicate_header_is_named() {
    let dir = TempDir::new().unwrap();
    let p = dir.path().join("train.csv");
    fs::write(&p, "text,label,label\na,b,c\n").unwrap();
    match ingest(&p, Format::Csv) {
        Err(CifmError::Parse { line: 1, message, .. }) => assert!(message.contains("'label'"), "{message}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn bad_rows_report_their_line() {
    let dir = TempDir::new().unwrap();
    let p = dir.path().join("train.csv");
    fs::write(&p, "text,score\na,0.5\nb,high\n").unwrap();
    assert!(matches!(ingest(&p, Format::Csv), Err(CifmError::Parse { line: 3, .. })));
    let p = dir.path().join("train.jsonl");
    fs::write(&p, "{\"text\": \"a\", \"label\": \"x\"}\n{\"text\": 3}\n").unwrap();
    assert!(matches!(ingest(&p, Format::Jsonl), Err(CifmError::Parse { line: 2, .. })));
    let p = dir.path().join("empty.tsv");
    fs::write(&p, "text\tlabel\n").unwrap();
    assert!(matches!(ingest(&p, Format::Tsv), Err(CifmError::Data(_))));
}

#[test]
fn shared_split_file_is_rejected() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("all.tsv"), "text\tlabel\na\tx\nb\ty\n").unwrap();
    let m = dir.path().join("manifest.toml");
    fs::write(&m, "name = \"d\"\ntask_kind = \"classification\"\n[splits]\ntrain = \"all.tsv\"\nval = \"all.tsv\"\ntest = \"all.tsv\"\n")
        .unwrap();
    assert!(load_manifest(&m).is_err());
}

fn round_trip(ds: &Dataset, format: Format) {
    let a = TempDir::new().unwrap();
    let (first, _) = load_manifest(&export(ds, a.path(), format).unwrap()).unwrap();
    assert_eq!(&first, ds);
    let b = TempDir::new().unwrap();
    let (second, _) = load_manifest(&export(&first, b.path(), format).unwrap()).unwrap();
    assert_eq!(second, first);
}

#[test]
fn synthetic_corpora_survive_export() {
    for kind in [SyntheticKind::Noisy, SyntheticKind::Regression, SyntheticKind::Xor, SyntheticKind::TaxonomyPair] {
        let c = make_synthetic_corpus_sized(kind, 5, CorpusSize { train: 30, val: 10, test: 10 });
        for ds in &c.datasets {
            for format in [Format::Tsv, Format::Csv, Format::Jsonl] {
                round_trip(ds, format);
            }
        }
    }
}

fn text(delimited_safe: bool) -> BoxedStrategy<String> {
    if delimited_safe {
        "[a-z][a-z ,;'\"é]{0,12}[a-z]".boxed()
    } else {
        "[a-z][a-z ,;'\"é\t\n\\\\]{0,12}[a-z]".boxed()
    }
}

fn rows(tab_safe: bool) -> impl Strategy<Value = Vec<(String, usize)>> {
    prop::collection::vec((text(tab_safe), 0usize..3), 1..8)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn arbitrary_text_round_trips(train in rows(false), val in rows(false), test in rows(false), tsv in rows(true)) {
        let labels: Vec<String> = vec!["a b".into(), "c,d".into(), "e".into()];
        let ex = |r: &[(String, usize)], tag: &str| -> Vec<Example> {
            r.iter().enumerate().map(|(i, (t, c))| Example { text: format!("{tag}{i} {t}"), target: Target::Class(*c) }).collect()
        };
        let make = |tr: &[(String, usize)], va: &[(String, usize)], te: &[(String, usize)]| Dataset {
            name: "fuzz".into(),
            task: TaskKind::Classification,
            labels: labels.clone(),
            target_names: vec![],
            metrics: vec![MetricSpec::MacroF1],
            train: ex(tr, "tr"),
            val: ex(va, "va"),
            test: ex(te, "te"),
        };
        // declared labels survive even when a split misses some of them
        for format in [Format::Csv, Format::Jsonl] {
            round_trip(&make(&train, &val, &test), format);
        }
        round_trip(&make(&tsv, &tsv, &tsv), Format::Tsv);
    }
}

#[test]
fn tsv_export_refuses_tabs() {
    let c = make_synthetic_corpus_sized(SyntheticKind::Separable, 1, CorpusSize { train: 4, val: 2, test: 2 });
    let mut ds = c.primary().clone();
    ds.train[0].text.push_str("\tx");
    assert!(export(&ds, TempDir::new().unwrap().path(), Format::Tsv).is_err());
}

#[test]
fn checkpoint_file_round_trip() {
    let dir = TempDir::new().unwrap();
    let mut m = Model::new(EncoderConfig { vocab_size: 50, dim: 8, ffn: 16, ..EncoderConfig::new(Backbone::Transformer) }, 4, 3).unwrap();
    m.attach_critic(&Default::default(), 1).unwrap();
    m.critic.as_ref().unwrap().set_log_ema(Some(0.1 + 0.2));
    let meta = CheckpointMeta { dataset: "d".into(), labels: vec!["x".into()], seed: 7, ..Default::default() };
    let p = dir.path().join("m.ckpt");
    checkpoint::save(&p, &m, meta.clone()).unwrap();
    let (back, manifest) = checkpoint::load(&p).unwrap();
    assert_eq!(back, m);
    assert_eq!(manifest.meta, meta);
    assert!(checkpoint::load(&dir.path().join("missing.ckpt")).is_err());
}

fn tiny(out: &Path, extra: &[&str]) -> ExperimentConfig {
    let mut args: Vec<String> = vec![
        format!("--out_dir={}", toml::Value::String(out.display().to_string())),
        "--dataset.size={ train = 64, val = 16, test = 32 }".into(),
        "--train.epochs=2".into(),
        "--train.seeds=[1]".into(),
        "--train.max_length=16".into(),
        "--encoder.vocab_size=256".into(),
        "--encoder.dim=16".into(),
        "--encoder.ffn=32".into(),
    ];
    args.extend(extra.iter().map(|s| s.to_string()));
    resolve(None, &["synthetic-separable+cifm".into()], &parse_overrides(&args).unwrap()).unwrap()
}

fn read_json(p: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn runs_never_overwrite_and_describe_themselves() {
    let out = TempDir::new().unwrap();
    let cfg = tiny(out.path(), &[]);
    let first = run(Command::Train, &cfg, &RunOptions::default()).unwrap();
    let second = run(Command::Train, &cfg, &RunOptions::default()).unwrap();
    let hash = config_hash(&cfg);
    assert_eq!(first.dir, out.path().join(&hash).join("train").join("run-1"));
    assert_eq!(second.dir, out.path().join(&hash).join("train").join("run-2"));
    assert!(out.path().join(&hash).join("config.toml").is_file());
    assert_eq!(read_json(&first.dir.join("summary.json")), read_json(&second.dir.join("summary.json")));

    for name in ["summary.json", "record-seed-1.json"] {
        let v = read_json(&first.dir.join(name));
        assert_eq!(v["config_hash"], hash.as_str());
        assert!(v["code_version"].as_str().unwrap().starts_with("cifm "));
        assert_eq!(v["seeds"], serde_json::json!([1]));
    }
    let log = fs::read_to_string(first.dir.join("log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 3);
    for line in log.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["config_hash"], hash.as_str());
    }

    // the stored checkpoint reproduces its test metric
    let ckpt = first.dir.join("seed-1.ckpt");
    let eval = run(Command::Evaluate, &cfg, &RunOptions { checkpoints: vec![ckpt] }).unwrap();
    assert_eq!(eval.summary["evaluations"][0]["reproduces_stored"], true);
    assert!(eval.dir.ends_with("evaluate/run-1"));
}

#[test]
fn hash_tracks_computation_only() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    assert_eq!(config_hash(&tiny(a.path(), &[])), config_hash(&tiny(b.path(), &[])));
    assert_ne!(config_hash(&tiny(a.path(), &[])), config_hash(&tiny(a.path(), &["--train.lr=1e-3"])));
}

#[test]
fn invalid_configs_fail_before_any_output() {
    let out = TempDir::new().unwrap();
    let root = out.path().join("runs");
    let ov = parse_overrides(&["--dataset.synthetic=noisy".into(), "--train.lr_typo=1".into()]).unwrap();
    assert!(matches!(resolve(None, &[], &ov), Err(CifmError::Config(_))));
    let ov = parse_overrides(&["--dataset.synthetic=noisy".into(), "--cim.epsilon=-1".into()]).unwrap();
    assert!(matches!(resolve(None, &[], &ov), Err(CifmError::Config(_))));

    let mut cfg = tiny(&root, &[]);
    cfg.train.lr = -1.0;
    assert!(matches!(run(Command::Train, &cfg, &RunOptions::default()), Err(CifmError::Config(_))));
    let cfg = tiny(&root, &[]);
    assert!(matches!(run(Command::Evaluate, &cfg, &RunOptions::default()), Err(CifmError::Usage(_))));
    assert!(matches!(run(Command::Transfer, &cfg, &RunOptions::default()), Err(CifmError::Usage(_))));
    assert!(!root.exists());
}

#[test]
fn sweep_writes_one_row_per_strength_and_seed() {
    let out = TempDir::new().unwrap();
    let cfg = tiny(out.path(), &["--eval.robustness=[{ kind = \"random\", strengths = [0.0, 1.0], seeds = [1, 2, 3] }]"]);
    let o = run(Command::Sweep, &cfg, &RunOptions::default()).unwrap();
    let csv = fs::read_to_string(o.dir.join("curves.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("model_seed,kind,strength,seed,headline"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r.starts_with("1,random,")));
}

#[test]
fn subsample_runs_repeat_exactly() {
    let out = TempDir::new().unwrap();
    let cfg = tiny(out.path(), &["--eval.subsample={ ratios = [0.5], seeds = [1, 2] }", "--train.epochs=1"]);
    let a = run(Command::Train, &cfg, &RunOptions::default()).unwrap();
    let b = run(Command::Train, &cfg, &RunOptions::default()).unwrap();
    let strip = |mut v: serde_json::Value| {
        for row in v["subsample"].as_array_mut().unwrap() {
            for r in row["record"]["runs"].as_array_mut().unwrap() {
                r["wall_clock_secs"] = serde_json::Value::Null;
            }
        }
        v
    };
    assert_eq!(strip(a.summary.clone()), strip(b.summary.clone()));
    assert_eq!(a.summary["subsets"].as_array().unwrap().len(), 2);
    assert_ne!(a.dir, b.dir);
}

#[test]
fn manifest_datasets_run_from_config_files() {
    let dir = TempDir::new().unwrap();
    let c = make_synthetic_corpus_sized(SyntheticKind::Noisy, 2, CorpusSize { train: 48, val: 16, test: 16 });
    export(c.primary(), &dir.path().join("data"), Format::Csv).unwrap();
    let cfg_path = dir.path().join("exp.toml");
    let out = dir.path().join("runs");
    fs::write(
        &cfg_path,
        format!(
            "preset = \"desk\"\nout_dir = {}\n[dataset]\nmanifest = \"data/manifest.toml\"\n[train]\nepochs = 1\nseeds = [3]\n[encoder]\nbackbone = \"mlp\"\nvocab_size = 128\ndim = 8\nhidden = 8\n",
            toml::Value::String(out.display().to_string())
        ),
    )
    .unwrap();
    let cfg = resolve(Some(&cfg_path), &[], &[]).unwrap();
    let o = run(Command::Train, &cfg, &RunOptions::default()).unwrap();
    assert!(o.dir.join("seed-3.ckpt").is_file());
    assert!(o.text.contains(&c.primary().name));
}
