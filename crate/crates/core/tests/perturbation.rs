mod common;

use cifm::encoder::Backbone;
use cifm::objective::{cifm_step, ifm_pass, MiEstimator, ObjectiveConfig};
use cifm::optim::{Adamax, AdamaxConfig};
use cifm::perturbation::{test_time_perturb, NoiseKind, PerturbationSpec};
use common::*;
use ndarray::Array2;
use proptest::prelude::*;

fn config(estimator: MiEstimator, spec: PerturbationSpec) -> ObjectiveConfig {
    ObjectiveConfig { cim: Some(spec), ..objective(estimator, 0.2) }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn delta_norm_is_epsilon(eps in 1e-4f64..3.0, seed in 0u64..1000, transformer: bool) {
        let backbone = if transformer { Backbone::Transformer } else { Backbone::Mlp };
        let mut m = model(backbone, 3, seed);
        let batch = class_batch(backbone, 6, 3, seed);
        let groups = vec!["embedding".to_string(), "layer.0".into(), "head".into()];
        let cfg = config(MiEstimator::InfoNce, PerturbationSpec { target_groups: groups, ..PerturbationSpec::new(eps, 1.0) });
        let out = cifm_step(&mut m, &batch, &cfg, &seeds(6, seed), true).unwrap();
        for grp in out.deltas.unwrap().groups {
            prop_assert!((grp.norm() - eps).abs() < 1e-6, "{}: {}", grp.group, grp.norm());
        }
    }

    #[test]
    fn weights_restored_exactly(eps in 1e-3f64..10.0, seed in 0u64..1000, mine: bool, transformer: bool) {
        let backbone = if transformer { Backbone::Transformer } else { Backbone::Mlp };
        let estimator = if mine { MiEstimator::Mine } else { MiEstimator::InfoNce };
        let mut m = with_critic(model(backbone, 3, seed), seed);
        let before = m.params.checksum();
        let critic_before = m.critic.as_ref().unwrap().params.checksum();
        let batch = class_batch(backbone, 6, 3, seed);
        cifm_step(&mut m, &batch, &config(estimator, PerturbationSpec::new(eps, 1.0)), &seeds(6, seed), true).unwrap();
        prop_assert_eq!(m.params.checksum(), before);
        prop_assert_eq!(m.critic.as_ref().unwrap().params.checksum(), critic_before);
    }

    #[test]
    fn test_time_shift_has_requested_norm(strength in 0.0f64..5.0, seed: u64) {
        let emb = Array2::from_shape_fn((12, 4), |(i, j)| (i * 4 + j) as f64 * 0.1);
        let mask: Vec<f64> = (0..12).map(|i| if i % 3 == 2 { 0.0 } else { 1.0 }).collect();
        let out = test_time_perturb(&emb, 3, Some(&mask), NoiseKind::Random, strength, None, seed).unwrap();
        let shift = &out - &emb;
        for s in 0..4 {
            let rows = shift.slice(ndarray::s![s * 3..s * 3 + 3, ..]);
            prop_assert!(rows.row(2).iter().all(|&v| v == 0.0));
            let norm = rows.mapv(|v| v * v).sum().sqrt();
            prop_assert!((norm - strength).abs() < 1e-9);
        }
    }
}

#[test]
fn perturbed_loss_not_below_clean() {
    for backbone in [Backbone::Mlp, Backbone::Transformer] {
        for seed in 0..5 {
            let mut m = model(backbone, 3, seed);
            let batch = class_batch(backbone, 8, 3, seed);
            let out = cifm_step(&mut m, &batch, &config(MiEstimator::InfoNce, PerturbationSpec::new(0.01, 1.0)), &seeds(8, seed), true)
                .unwrap();
            let b = out.breakdown;
            assert!(b.cim_applied);
            assert!(b.perturbed_total.unwrap() >= b.ifm_total, "{backbone:?} seed {seed}: {b:?}");
            assert_eq!(b.grand_total, b.perturbed_total.unwrap());
        }
    }
}

#[test]
fn gradients_come_from_the_perturbed_point() {
    for estimator in [MiEstimator::InfoNce, MiEstimator::Mine] {
        let base = with_critic(model(Backbone::Mlp, 3, 7), 7);
        let batch = class_batch(Backbone::Mlp, 8, 3, 7);
        let s = seeds(8, 7);
        let cfg = config(estimator, PerturbationSpec::new(0.3, 1.0));
        let mut m = base.clone();
        let out = cifm_step(&mut m, &batch, &cfg, &s, true).unwrap();
        let mut shifted = base.clone();
        for grp in &out.deltas.as_ref().unwrap().groups {
            for (i, d) in &grp.tensors {
                *shifted.params.get_mut(*i) += d;
            }
        }
        let independent = ifm_pass(&shifted, &batch, &cfg, &s, true).unwrap();
        assert_eq!(out.grads, independent.grads);
        assert_eq!(out.critic_grads, independent.critic_grads);
        // one committed update of the moving average per step
        assert_eq!(m.critic.as_ref().unwrap().log_ema(), shifted.critic.as_ref().unwrap().log_ema());

        // the optimizer then moves θ, not θ + δ
        let mut opt = Adamax::new(AdamaxConfig::default());
        opt.step(&mut m.params, &out.grads).unwrap();
        let mut expected = base.clone();
        Adamax::new(AdamaxConfig::default()).step(&mut expected.params, &independent.grads).unwrap();
        assert_eq!(m.params, expected.params);
    }
}

#[test]
fn head_only_perturbation_keeps_representations() {
    let base = model(Backbone::Transformer, 3, 2);
    let batch = class_batch(Backbone::Transformer, 6, 3, 2);
    let s = seeds(6, 2);
    let cfg = config(MiEstimator::InfoNce, PerturbationSpec { target_groups: vec!["head".into()], ..PerturbationSpec::new(0.5, 1.0) });
    let out = cifm_step(&mut base.clone(), &batch, &cfg, &s, true).unwrap();
    let mut shifted = base.clone();
    for grp in &out.deltas.unwrap().groups {
        assert_eq!(grp.group, "head");
        for (i, d) in &grp.tensors {
            *shifted.params.get_mut(*i) += d;
        }
    }
    let a = base.encode(&batch, true, s.anchor).unwrap();
    let b = shifted.encode(&batch, true, s.anchor).unwrap();
    assert_eq!(a.pooled, b.pooled);
    assert_ne!(a.output, b.output);
}

#[test]
fn unknown_group_is_rejected() {
    let mut m = model(Backbone::Mlp, 3, 0);
    let batch = class_batch(Backbone::Mlp, 4, 3, 0);
    let cfg = config(MiEstimator::InfoNce, PerturbationSpec { target_groups: vec!["layer.9".into()], ..PerturbationSpec::new(0.1, 1.0) });
    let err = cifm_step(&mut m, &batch, &cfg, &seeds(4, 0), true).unwrap_err();
    assert!(matches!(err, cifm::CifmError::Config(_)), "{err}");
}
