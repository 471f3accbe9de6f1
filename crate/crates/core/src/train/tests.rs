use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::model::{decode_checkpoint, encode_checkpoint, DecoderKind};

fn range() -> WavelengthRange {
    WavelengthRange::new(400.0, 700.0).unwrap()
}

fn small(variant: Variant) -> TrainConfig {
    let mut model = ModelConfig::compact(variant, 4, range());
    model.k = 4;
    model.encoder_width = 8;
    model.res_blocks = 1;
    model.pixel_hidden = 32;
    model.pixel_layers = 1;
    model.spectral_hidden = 16;
    model.head_hidden = 16;
    TrainConfig {
        model,
        pairs: PairConfig {
            p_min: 1.0,
            p_max: 2.0,
            c_min: 6,
            c_max: 10,
            queries: 32,
            ..PairConfig::new(range())
        },
        scenes: SceneSetConfig {
            count: 2,
            components: 3,
            seed: 40,
        },
        learning_rate: 1e-3,
        steps: 6,
        batch: 2,
        base_extent: 8,
        seed: 5,
        checkpoint_every: 0,
    }
}

#[test]
fn l1_examples_and_loop_oracle() {
    assert_eq!(l1_loss(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
    assert_eq!(l1_loss(&[1.0, 0.0], &[0.0, 0.0]).unwrap(), 0.5);
    assert!(matches!(l1_loss(&[], &[]), Err(TrainError::Argument(_))));
    assert!(matches!(
        l1_loss(&[1.0], &[1.0, 2.0]),
        Err(TrainError::Argument(_))
    ));

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a: Vec<f64> = (0..60).map(|_| rng.random_range(-1.0..1.0)).collect();
    let b: Vec<f64> = (0..60).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut acc = 0.0;
    for i in 0..60 {
        acc += if a[i] > b[i] {
            a[i] - b[i]
        } else {
            b[i] - a[i]
        };
    }
    let oracle = acc / 60.0;
    assert!((l1_loss(&a, &b).unwrap() - oracle).abs() < 1e-12);

    let mut g = Graph::new();
    let p = g.constant(Tensor::from_vec(vec![6, 10], a).unwrap());
    let n = l1_loss_node(&mut g, p, Tensor::from_vec(vec![6, 10], b).unwrap()).unwrap();
    assert!((g.value(n).data()[0] - oracle).abs() < 1e-12);
    assert!(l1_loss_node(&mut g, p, Tensor::zeros(&[10, 6])).is_err());
}

#[test]
fn zero_learning_rate_freezes_parameters() {
    let mut t = Trainer::new(small(Variant::RfUf)).unwrap();
    let before = t.model.params.clone();
    t.adam.config.learning_rate = 0.0;
    let batch = t.next_batch().unwrap();
    let record = t.step_on(&batch).unwrap();
    assert!(record.loss > 0.0 && record.loss.is_finite());
    assert_eq!(t.model.params, before);
}

#[test]
fn duplicated_pair_doubles_the_gradient_exactly() {
    let mut t = Trainer::new(small(Variant::RfGs)).unwrap();
    let pair = t.next_batch().unwrap().remove(0);
    let (one_loss, one) = batch_gradients(&t.model, std::slice::from_ref(&pair)).unwrap();
    let (two_loss, two) = batch_gradients(&t.model, &[pair.clone(), pair]).unwrap();
    assert_eq!(two_loss, vec![one_loss[0]; 2]);
    for ((_, a), (_, b)) in one.iter().zip(two.iter()) {
        for (x, y) in a.data().iter().zip(b.data()) {
            assert_eq!((2.0 * x).to_bits(), y.to_bits());
        }
    }
}

#[test]
fn reported_loss_ignores_batch_order() {
    let mut t = Trainer::new(TrainConfig {
        batch: 3,
        ..small(Variant::RfUs)
    })
    .unwrap();
    let batch = t.next_batch().unwrap();
    let (a, _) = batch_gradients(&t.model, &batch).unwrap();
    let rev: Vec<PreparedPair> = batch.iter().rev().cloned().collect();
    let (b, _) = batch_gradients(&t.model, &rev).unwrap();
    assert_eq!(reported_loss(&a).to_bits(), reported_loss(&b).to_bits());
}

#[test]
fn zero_steps_returns_the_initial_model() {
    let cfg = TrainConfig {
        steps: 0,
        ..small(Variant::RfUf)
    };
    let fresh = SsifModel::new(cfg.model.clone(), cfg.seed).unwrap();
    let mut t = Trainer::new(cfg).unwrap();
    assert!(t.run(|_, _| Ok(())).unwrap().is_empty());
    assert_eq!(t.model, fresh);
}

#[test]
fn runs_are_seed_deterministic_and_resumable() {
    for variant in [Variant::RfGs, Variant::M] {
        let cfg = small(variant);
        let mut a = Trainer::new(cfg.clone()).unwrap();
        let ca = a.run(|_, _| Ok(())).unwrap();
        let mut b = Trainer::new(cfg.clone()).unwrap();
        let cb = b.run(|_, _| Ok(())).unwrap();
        assert_eq!(
            encode_checkpoint(&a.checkpoint()),
            encode_checkpoint(&b.checkpoint())
        );
        let strip = |c: &[LossRecord]| {
            c.iter()
                .map(|r| (r.step, r.loss.to_bits()))
                .collect::<Vec<_>>()
        };
        assert_eq!(strip(&ca), strip(&cb));

        let mut half = Trainer::new(TrainConfig {
            steps: 3,
            ..cfg.clone()
        })
        .unwrap();
        half.run(|_, _| Ok(())).unwrap();
        let bytes = encode_checkpoint(&half.checkpoint());
        let mut resumed =
            Trainer::resume(cfg.clone(), &decode_checkpoint(&bytes).unwrap()).unwrap();
        let rest = resumed.run(|_, _| Ok(())).unwrap();
        assert_eq!(rest.len(), 3);
        assert_eq!(strip(&rest), strip(&ca[3..]));
        assert_eq!(
            encode_checkpoint(&resumed.checkpoint()),
            encode_checkpoint(&a.checkpoint())
        );
    }
}

#[test]
fn each_step_draws_fresh_scales_and_band_counts() {
    let mut t = Trainer::new(TrainConfig {
        steps: 12,
        batch: 1,
        ..small(Variant::RfUf)
    })
    .unwrap();
    let curve = t.run(|_, _| Ok(())).unwrap();
    let ps: std::collections::HashSet<u64> = curve.iter().map(|r| r.p.to_bits()).collect();
    let cs: std::collections::HashSet<u64> = curve.iter().map(|r| r.c as u64).collect();
    assert!(ps.len() > 6 && cs.len() > 2);
    assert!(curve
        .iter()
        .all(|r| (1.0..=2.0).contains(&r.p) && (6.0..=10.0).contains(&r.c)));
}

#[test]
fn non_finite_loss_names_the_seed() {
    let mut t = Trainer::new(small(Variant::RfUf)).unwrap();
    let id = t.model.params.find("encoder.stem.bias").unwrap();
    t.model.params.get_mut(id).data_mut()[0] = f64::NAN;
    match t.step() {
        Err(TrainError::NonFinite {
            step: 0,
            seed: 5,
            streams,
        }) => assert_eq!(streams, vec![1, 2]),
        other => panic!("{:?}", other.err()),
    }
}

#[test]
fn config_validation() {
    let base = small(Variant::RfUf);
    let mut bad = vec![
        TrainConfig {
            learning_rate: 0.0,
            ..base.clone()
        },
        TrainConfig {
            batch: 0,
            ..base.clone()
        },
        TrainConfig {
            base_extent: 0,
            ..base.clone()
        },
    ];
    let mut m = base.clone();
    m.model.input_bands = 3;
    bad.push(m);
    let mut p = base.clone();
    p.pairs.p_min = 0.9;
    bad.push(p);
    for cfg in bad {
        assert!(Trainer::new(cfg).is_err());
    }
    let json = serde_json::to_value(&base).unwrap();
    let mut typo = json.clone();
    typo["learning_rat"] = 0.1.into();
    assert!(serde_json::from_value::<TrainConfig>(typo).is_err());
    assert_eq!(serde_json::from_value::<TrainConfig>(json).unwrap(), base);
}

#[test]
fn concatenated_decoder_trains() {
    let mut cfg = small(Variant::RfGf);
    cfg.model.decoder_kind = DecoderKind::Concatenated;
    let mut t = Trainer::new(cfg).unwrap();
    let curve = t.run(|_, _| Ok(())).unwrap();
    assert!(curve.iter().all(|r| r.loss.is_finite()));
}

#[test]
fn loss_csv_layout() {
    let curve = vec![
        LossRecord {
            step: 0,
            loss: 0.25,
            p: 1.5,
            c: 8.0,
            wall_ms: 3.25,
        },
        LossRecord {
            step: 1,
            loss: 0.125,
            p: 2.0,
            c: 9.5,
            wall_ms: 2.0,
        },
    ];
    let mut a = Vec::new();
    write_loss_csv(&mut a, &curve, false).unwrap();
    assert_eq!(
        String::from_utf8(a).unwrap(),
        "step,loss,p,C,wall_ms\n0,2.500000000e-1,1.5000,8.00,0.000\n1,1.250000000e-1,2.0000,9.50,0.000\n"
    );
    let mut b = Vec::new();
    write_loss_csv(&mut b, &curve, true).unwrap();
    assert!(String::from_utf8(b).unwrap().contains(",3.250\n"));
}
