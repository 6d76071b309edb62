use cifm::data::{Split, TaskKind};
use cifm::encoder::{Backbone, EncoderConfig, Model};
use cifm::evalharness::{
    ood_eval, robustness_sweep, subsample_protocol, subset_dataset, transfer_probe, LabelMap, ProbeKind, SubsampleMode,
    SweepSpec, TransferSpec,
};
use cifm::objective::{MiEstimator, ObjectiveConfig};
use cifm::oracle::{make_synthetic_corpus_sized, CorpusSize, SyntheticCorpus, SyntheticKind};
use cifm::perturbation::NoiseKind;
use cifm::trainer::{evaluate_split, train, train_with_validator, TrainConfig};

fn corpus(kind: SyntheticKind) -> SyntheticCorpus {
    make_synthetic_corpus_sized(kind, 3, CorpusSize { train: 96, val: 32, test: 48 })
}

fn encoder(backbone: Backbone) -> EncoderConfig {
    EncoderConfig { vocab_size: 512, dim: 16, hidden: 16, ffn: 32, max_positions: 17, ..EncoderConfig::new(backbone) }
}

fn train_cfg() -> TrainConfig {
    TrainConfig { epochs: 3, batch_size: 16, max_length: 16, lr: 5e-3, patience: 2, seeds: vec![1], ..Default::default() }
}

#[test]
fn same_seed_same_run() {
    let c = corpus(SyntheticKind::Separable);
    let ds = c.primary();
    for backbone in [Backbone::Mlp, Backbone::Transformer] {
        let enc = encoder(backbone);
        let factory = |seed: u64| {
            let mut m = Model::new(enc.clone(), ds.num_outputs(), seed)?;
            m.attach_critic(&Default::default(), seed)?;
            Ok(m)
        };
        let obj = ObjectiveConfig { mi_estimator: MiEstimator::Mine, ..ObjectiveConfig::cifm(TaskKind::Classification) };
        let a = train(&factory, ds, &obj, &train_cfg(), 4).unwrap();
        let b = train(&factory, ds, &obj, &train_cfg(), 4).unwrap();
        assert_eq!(a.record, b.record);
        assert_eq!(a.model, b.model);
        let other = train(&factory, ds, &obj, &train_cfg(), 5).unwrap();
        assert_ne!(a.record.epochs, other.record.epochs);

        let steps_per_epoch = ds.train.len() / 16;
        for e in &a.record.epochs {
            assert_eq!(e.step_totals.len(), steps_per_epoch);
            assert!(e.step_totals.iter().all(|v| v.is_finite()));
            assert_eq!(e.cim_steps, steps_per_epoch);
        }
    }
}

#[test]
fn kept_weights_are_the_best_epoch() {
    let c = corpus(SyntheticKind::Separable);
    let ds = c.primary();
    let enc = encoder(Backbone::Mlp);
    let factory = |seed: u64| Model::new(enc.clone(), ds.num_outputs(), seed);
    let cfg = TrainConfig { epochs: 6, patience: 2, ..train_cfg() };
    // scores peak at epoch 2, then fall; training stops two epochs later
    let scores = [0.3, 0.9, 0.5, 0.4, 0.8, 0.7];
    let mut snapshots = Vec::new();
    let mut validator = |m: &Model, epoch: usize| {
        snapshots.push(m.clone());
        Ok(scores[epoch - 1])
    };
    let run = train_with_validator(&factory, ds, &ObjectiveConfig::baseline(ds.task), &cfg, 1, &mut validator).unwrap();
    assert_eq!(run.record.best_epoch, 2);
    assert_eq!(run.record.best_val, 0.9);
    assert!(run.record.stopped_early);
    assert_eq!(run.record.epochs.len(), 4);
    assert_eq!(run.model, snapshots[1]);
    assert_eq!(run.record.test.metrics, evaluate_split(&run.model, ds, Split::Test, &cfg).unwrap().metrics);
}

#[test]
fn evaluation_ignores_dropout_seeds() {
    let c = corpus(SyntheticKind::Noisy);
    let ds = c.primary();
    let m = Model::new(encoder(Backbone::Transformer), ds.num_outputs(), 2).unwrap();
    let cfg = train_cfg();
    assert_eq!(evaluate_split(&m, ds, Split::Test, &cfg).unwrap(), evaluate_split(&m, ds, Split::Test, &cfg).unwrap());
    let split = m.config.tokenizer(16).encode_split(&ds.test);
    let batch = split.batch(&(0..8).collect::<Vec<_>>(), 1);
    assert_eq!(m.encode(&batch, false, 1).unwrap(), m.encode(&batch, false, 99).unwrap());
    assert_ne!(m.encode(&batch, true, 1).unwrap(), m.encode(&batch, true, 99).unwrap());
}

#[test]
fn sweep_starts_at_the_clean_score() {
    let c = corpus(SyntheticKind::Noisy);
    let ds = c.primary();
    let enc = encoder(Backbone::Transformer);
    let factory = |seed: u64| Model::new(enc.clone(), ds.num_outputs(), seed);
    let cfg = train_cfg();
    let run = train(&factory, ds, &ObjectiveConfig::baseline(ds.task), &cfg, 1).unwrap();
    let clean = evaluate_split(&run.model, ds, Split::Test, &cfg).unwrap();
    for kind in [NoiseKind::Random, NoiseKind::Adversarial] {
        let spec = SweepSpec { kind, strengths: vec![0.0, 0.5, 2.0], seeds: vec![1, 2] };
        let curve = robustness_sweep(&run.model, ds, &spec, &cfg).unwrap();
        assert_eq!(curve.points.len(), 6);
        for seed in [1, 2] {
            assert_eq!(curve.seed_curve(seed)[0].to_bits(), clean.headline().to_bits());
        }
        assert_eq!(curve, robustness_sweep(&run.model, ds, &spec, &cfg).unwrap());
    }
}

#[test]
fn subsets_are_reproducible() {
    let c = corpus(SyntheticKind::Separable);
    let ds = c.primary();
    let a = subsample_protocol(&ds.train, &[0.25, 0.5, 1.0], &[1, 2], SubsampleMode::Stratified).unwrap();
    let b = subsample_protocol(&ds.train, &[0.25, 0.5, 1.0], &[1, 2], SubsampleMode::Stratified).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 6);
    assert_eq!(a[0].indices.len(), 24);
    assert_ne!(a[0].indices, a[1].indices);
    assert_eq!(a[4].indices, (0..96).collect::<Vec<_>>());
    let sub = subset_dataset(ds, &a[2]);
    assert_eq!(sub.train.len(), 48);
    assert_eq!((sub.val.clone(), sub.test.clone()), (ds.val.clone(), ds.test.clone()));
}

#[test]
fn probes_leave_the_extractor_alone() {
    let c = corpus(SyntheticKind::Separable);
    let ds = c.primary();
    let m = Model::new(encoder(Backbone::Transformer), ds.num_outputs(), 1).unwrap();
    let target = corpus(SyntheticKind::Xor);
    let before = m.params.checksum();
    for probe in [ProbeKind::Linear, ProbeKind::Cnn] {
        let spec = TransferSpec { epochs: 2, max_length: 16, filters: 4, ..TransferSpec::new(probe) };
        let rep = transfer_probe(&m, target.primary(), &spec).unwrap();
        assert_eq!(rep.extractor_checksum, m.params.checksum_excluding(&["head"]));
        assert!(rep.report.headline().is_finite());
    }
    assert_eq!(m.params.checksum(), before);
}

#[test]
fn identity_taxonomy_is_in_domain() {
    let c = corpus(SyntheticKind::TaxonomyPair);
    let ds = c.primary();
    let m = Model::new(encoder(Backbone::Mlp), ds.num_outputs(), 1).unwrap();
    let cfg = train_cfg();
    let ood = ood_eval(&m, ds, ds, &LabelMap::identity(&ds.labels), &cfg).unwrap();
    assert_eq!(ood.metrics, evaluate_split(&m, ds, Split::Test, &cfg).unwrap().metrics);
    let fine = &c.datasets[1];
    let map = c.label_map.as_ref().unwrap();
    let mapped = ood_eval(&m, ds, fine, map, &cfg).unwrap();
    // fine6 has no coarse parent, so its rows are left out
    let covered = fine.test.iter().filter(|e| map.source_of(&fine.labels[fine.class_of(e).unwrap()]).is_some()).count();
    assert!(covered < fine.test.len());
    assert_eq!(mapped.support, covered);
}
