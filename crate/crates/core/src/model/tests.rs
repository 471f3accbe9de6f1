use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data::{integrate_band_exact, SceneRenderer, SceneSpec, SyntheticScene};
use crate::numerics::{grad_check, GradCheckConfig};
use crate::spectral::{ResponseKind, WavelengthRange};

fn range() -> WavelengthRange {
    WavelengthRange::new(400.0, 700.0).unwrap()
}

fn tiny(variant: Variant, kind: DecoderKind) -> ModelConfig {
    ModelConfig {
        decoder_kind: kind,
        k: 4,
        encoder_width: 8,
        res_blocks: 1,
        pixel_hidden: 16,
        pixel_layers: 1,
        feature_dim: 16,
        spectral_hidden: 16,
        spectral_layers: 1,
        head_hidden: 8,
        head_layers: 1,
        ..ModelConfig::compact(variant, 4, range())
    }
}

fn input(h: usize, w: usize, seed: u64) -> HyperCube {
    let scene = SyntheticScene::generate(SceneSpec {
        components: 4,
        seed,
        range: range(),
    })
    .unwrap();
    let bands = crate::data::msi_bands(range(), 4, 0.1).unwrap();
    SceneRenderer::new(scene)
        .render(h, w, &bands, ResponseKind::Uniform)
        .unwrap()
}

fn unit(d: usize, i: usize) -> Tensor {
    let mut v = vec![0.0; d];
    v[i] = 1.0;
    Tensor::from_vec(vec![1, d], v).unwrap()
}

#[test]
fn modulated_head_is_a_dot_product() {
    let d = 5;
    let mut store = ParamStore::new();
    let head = RadianceHead::new(
        &mut store,
        DecoderKind::Modulated,
        d,
        3,
        0,
        &mut ChaCha8Rng::seed_from_u64(0),
    );
    let RadianceHead::Modulated { mlp } = &head else {
        panic!()
    };
    let (w, b) = (mlp.layers[0].weight, mlp.layers[0].bias);
    for (i, v) in store.get_mut(w).data_mut().iter_mut().enumerate() {
        *v = if i / d == i % d { 1.0 } else { 0.0 };
    }
    store
        .get_mut(b)
        .data_mut()
        .iter_mut()
        .for_each(|v| *v = 0.0);

    let mut g = Graph::new();
    let h = g.constant(unit(d, 2));
    let e = g.constant(unit(d, 2));
    let r = head.decode(&mut g, &store, h, e).unwrap();
    assert_eq!(g.value(r).data(), &[1.0]);

    // Zero pixel feature: radiance 0 for any embedding and any head weights.
    let mut store = ParamStore::new();
    let head = RadianceHead::new(
        &mut store,
        DecoderKind::Modulated,
        d,
        7,
        2,
        &mut ChaCha8Rng::seed_from_u64(1),
    );
    let mut g = Graph::new();
    let h = g.constant(Tensor::zeros(&[1, d]));
    let e = g.constant(
        Tensor::from_vec(vec![3, d], (0..15).map(|i| i as f64 * 0.1 - 0.4).collect()).unwrap(),
    );
    let r = head.decode(&mut g, &store, h, e).unwrap();
    assert_eq!(g.value(r).data(), &[0.0; 3]);
}

#[test]
fn concatenated_head_with_zero_final_layer_returns_its_bias() {
    let d = 4;
    let mut store = ParamStore::new();
    let head = RadianceHead::new(
        &mut store,
        DecoderKind::Concatenated,
        d,
        6,
        1,
        &mut ChaCha8Rng::seed_from_u64(2),
    );
    let RadianceHead::Concatenated {
        rest: Some(mlp), ..
    } = &head
    else {
        panic!()
    };
    let last = mlp.layers.last().unwrap();
    store
        .get_mut(last.weight)
        .data_mut()
        .iter_mut()
        .for_each(|v| *v = 0.0);
    store.get_mut(last.bias).data_mut()[0] = 0.625;
    let mut g = Graph::new();
    let h = g.constant(Tensor::from_vec(vec![2, d], (0..8).map(|i| i as f64).collect()).unwrap());
    let e =
        g.constant(Tensor::from_vec(vec![3, d], (0..12).map(|i| -(i as f64)).collect()).unwrap());
    let r = head.decode(&mut g, &store, h, e).unwrap();
    assert_eq!(g.shape(r), &[2, 3]);
    assert!(g.value(r).data().iter().all(|&v| v == 0.625));
}

#[test]
fn concatenated_head_matches_explicit_concatenation() {
    let d = 3;
    let mut store = ParamStore::new();
    let head = RadianceHead::new(
        &mut store,
        DecoderKind::Concatenated,
        d,
        4,
        2,
        &mut ChaCha8Rng::seed_from_u64(3),
    );
    let RadianceHead::Concatenated {
        pixel,
        spectral,
        rest: Some(mlp),
    } = &head
    else {
        panic!()
    };
    let hv = [[0.2, -0.5, 0.9], [1.0, 0.3, -0.7]];
    let ev = [[0.4, 0.1, -0.2], [-0.6, 0.8, 0.5], [0.0, -0.3, 0.3]];
    let mut g = Graph::new();
    let h = g.constant(Tensor::matrix(&[&hv[0], &hv[1]]));
    let e = g.constant(Tensor::matrix(&[&ev[0], &ev[1], &ev[2]]));
    let r = head.decode(&mut g, &store, h, e).unwrap();
    let got = g.value(r).data().to_vec();

    // Oracle: one unsplit first layer over [h, e] per pair.
    let wp = store.get(pixel.weight).data();
    let bp = store.get(pixel.bias).data();
    let ws = store.get(*spectral).data();
    for (i, hrow) in hv.iter().enumerate() {
        for (j, erow) in ev.iter().enumerate() {
            let z: Vec<f64> = (0..4)
                .map(|o| {
                    let s: f64 = (0..d)
                        .map(|k| hrow[k] * wp[k * 4 + o] + erow[k] * ws[k * 4 + o])
                        .sum();
                    (s + bp[o]).max(0.0)
                })
                .collect();
            let mut g2 = Graph::new();
            let x = g2.constant(Tensor::from_vec(vec![1, 4], z).unwrap());
            let y = mlp.forward(&mut g2, &store, x).unwrap();
            assert!((g2.value(y).data()[0] - got[i * 3 + j]).abs() < 1e-12);
        }
    }
}

#[test]
fn midpoint_variant_evaluates_once_at_the_centre() {
    let model = SsifModel::new(tiny(Variant::M, DecoderKind::Modulated), 0).unwrap();
    let iv = Interval::new(480.0, 520.0).unwrap();
    let q = PixelQuery {
        coord: [0.1, -0.3],
        cell: [0.25, 0.25],
    };
    let p = model
        .predict_band(&input(8, 8, 0), q, iv, &mut ChaCha8Rng::seed_from_u64(0))
        .unwrap();
    assert_eq!(p.wavelengths, vec![500.0]);
    assert_eq!(p.weights, vec![1.0]);
    assert_eq!(p.value, p.radiances[0]);
}

#[test]
fn stub_quadrature_cases() {
    let iv = Interval::new(420.0, 580.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let u = ResponseSpec::new(ResponseKind::Uniform, iv);
    let p = quadrature_band(|_| 0.3125, &u, Variant::RfUf.sampling(4), &mut rng).unwrap();
    assert_eq!(p.value, 0.3125);
    assert_eq!(p.radiances.len(), 4);

    let g = ResponseSpec::new(ResponseKind::Gaussian, iv);
    let norm = |l: f64| range().normalize(l);
    let p = quadrature_band(norm, &g, Variant::RfGf.sampling(16), &mut rng).unwrap();
    let exact = integrate_band_exact(
        &|_: [f64; 2], l: f64| norm(l),
        [0.0, 0.0],
        iv,
        ResponseKind::Gaussian,
    );
    assert!((p.value - exact).abs() / exact < 1e-3);
}

#[test]
fn band_value_is_the_ordered_weighted_sum() {
    let model = SsifModel::new(tiny(Variant::RfGf, DecoderKind::Modulated), 1).unwrap();
    let iv = Interval::new(450.0, 530.0).unwrap();
    let q = PixelQuery {
        coord: [-0.5, 0.5],
        cell: [0.25, 0.25],
    };
    let p = model
        .predict_band(&input(8, 8, 1), q, iv, &mut ChaCha8Rng::seed_from_u64(0))
        .unwrap();
    let mut acc = 0.0;
    for k in 0..4 {
        acc += p.weights[k] * p.radiances[k];
    }
    assert_eq!(p.value.to_bits(), acc.to_bits());
    assert_eq!(p.wavelengths, vec![460.0, 480.0, 500.0, 520.0]);
}

#[test]
fn variant_contract_shows_in_sampled_wavelengths() {
    let iv = Interval::new(400.0, 700.0).unwrap();
    let bands = WavelengthIntervalMatrix::validate(&[[400.0, 700.0]]).unwrap();
    let sample = |v: Variant, seed: u64| {
        let cfg = ModelConfig {
            k: 400,
            ..tiny(v, DecoderKind::Modulated)
        };
        SpectralPlan::new(&cfg, &bands, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    };
    let var = |ls: &[f64]| {
        let m = ls.iter().sum::<f64>() / ls.len() as f64;
        ls.iter().map(|l| (l - m).powi(2)).sum::<f64>() / ls.len() as f64
    };
    for v in [Variant::RfGs, Variant::RfUs] {
        let a = sample(v, 0);
        assert!(a.wavelengths.iter().all(|&l| iv.contains(l)));
        assert_ne!(a.wavelengths, sample(v, 1).wavelengths);
        assert_eq!(a, sample(v, 0));
        assert!(a.weights.iter().all(|&w| w == 1.0 / 400.0));
    }
    // σ = 50 for the Gaussian response; the uniform variance is 300²/12 = 7500.
    assert!(var(&sample(Variant::RfGs, 0).wavelengths) < 3000.0);
    assert!(var(&sample(Variant::RfUs, 0).wavelengths) > 6000.0);
    for v in [Variant::RfGf, Variant::RfUf] {
        let a = sample(v, 0);
        assert_eq!(a, sample(v, 1));
        assert_eq!(a.wavelengths[0], 400.0 + 300.0 / 800.0);
    }
    let uf = sample(Variant::RfUf, 0);
    assert!(uf.weights.iter().all(|&w| (w - 1.0 / 400.0).abs() < 1e-15));
    let gf = sample(Variant::RfGf, 0);
    assert!(gf.weights[200] > 10.0 * gf.weights[0]);
    assert_eq!(sample(Variant::M, 0).wavelengths, vec![550.0]);
}

#[test]
fn quadrature_matrix_agrees_with_band_prediction() {
    let model = SsifModel::new(tiny(Variant::RfUf, DecoderKind::Modulated), 4).unwrap();
    let img = input(6, 6, 4);
    let bands = WavelengthIntervalMatrix::equal_width(400.0, 700.0, 5).unwrap();
    let plan = SpectralPlan::new(&model.config, &bands, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let q = PixelQuery {
        coord: [0.3, 0.2],
        cell: [1.0 / 6.0; 2],
    };
    let mut g = Graph::new();
    let out = model
        .forward(&mut g, &model.params, &img, &[q], &plan)
        .unwrap();
    for b in 0..5 {
        let p = model
            .predict_band(&img, q, bands.row(b), &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap();
        assert!((g.value(out).data()[b] - p.value).abs() < 1e-12);
    }
}

#[test]
fn deterministic_variants_repeat_bitwise() {
    let img = input(8, 8, 2);
    let q = PixelQuery {
        coord: [0.0, 0.0],
        cell: [0.125; 2],
    };
    let iv = Interval::new(500.0, 560.0).unwrap();
    for v in Variant::ALL {
        let model = SsifModel::new(tiny(v, DecoderKind::Modulated), 2).unwrap();
        let mut r1 = ChaCha8Rng::seed_from_u64(9);
        let mut r2 = ChaCha8Rng::seed_from_u64(9);
        let a = model.predict_band(&img, q, iv, &mut r1).unwrap();
        let b = model.predict_band(&img, q, iv, &mut r2).unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits(), "{v}");
        let c = model.predict_band(&img, q, iv, &mut r1).unwrap();
        assert_eq!(a == c, !v.sampling(4).is_stochastic(), "{v}");
    }
}

#[test]
fn super_resolution_shapes() {
    let model = SsifModel::new(tiny(Variant::RfUs, DecoderKind::Modulated), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let img = input(16, 16, 3);
    let same = model
        .super_resolve(&img, 1.0, img.bands(), &mut rng)
        .unwrap();
    assert!(same.same_shape(&img));
    assert_eq!(same.bands(), img.bands());

    let b31 = WavelengthIntervalMatrix::equal_width(400.0, 700.0, 31).unwrap();
    let b62 = WavelengthIntervalMatrix::equal_width(400.0, 700.0, 62).unwrap();
    let big = model.super_resolve(&img, 4.0, &b31, &mut rng).unwrap();
    assert_eq!((big.height(), big.width(), big.band_count()), (64, 64, 31));
    let small = input(5, 7, 3);
    let a = model.super_resolve(&small, 2.0, &b31, &mut rng).unwrap();
    let b = model.super_resolve(&small, 2.0, &b62, &mut rng).unwrap();
    assert_eq!((a.height(), a.width(), a.band_count()), (10, 14, 31));
    assert_eq!(b.band_count(), 62);
    let odd = model.super_resolve(&small, 1.5, &b31, &mut rng).unwrap();
    assert_eq!((odd.height(), odd.width()), (8, 11));

    for p in [0.0, -1.0, f64::NAN] {
        assert!(matches!(
            model.super_resolve(&img, p, &b31, &mut rng),
            Err(ModelError::Argument(_))
        ));
    }
    let five = HyperCube::constant(
        4,
        4,
        WavelengthIntervalMatrix::equal_width(400.0, 700.0, 5).unwrap(),
        range(),
        0.5,
    )
    .unwrap();
    assert!(matches!(
        model.super_resolve(&five, 2.0, &b31, &mut rng),
        Err(ModelError::Spatial(_))
    ));
}

#[test]
fn full_model_gradients_match_finite_differences() {
    for (variant, kind) in [
        (Variant::RfUf, DecoderKind::Modulated),
        (Variant::RfGf, DecoderKind::Concatenated),
    ] {
        let model = SsifModel::new(tiny(variant, kind), 7).unwrap();
        let img = input(8, 8, 7);
        let bands = WavelengthIntervalMatrix::equal_width(400.0, 700.0, 3).unwrap();
        let plan =
            SpectralPlan::new(&model.config, &bands, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let queries = [
            PixelQuery {
                coord: [0.11, -0.42],
                cell: [0.125; 2],
            },
            PixelQuery {
                coord: [-0.83, 0.67],
                cell: [0.125; 2],
            },
        ];
        let weights: Vec<f64> = (0..6).map(|i| 0.3 + 0.1 * i as f64).collect();
        let err = grad_check(
            |g, store| {
                let out = model
                    .forward(g, store, &img, &queries, &plan)
                    .map_err(|e| match e {
                        ModelError::Numerics(n) => n,
                        other => NumericsError::Contract(other.to_string()),
                    })?;
                let w = g.constant(Tensor::from_vec(vec![2, 3], weights.clone()).unwrap());
                let y = g.mul(out, w)?;
                let y = g.sin(y);
                Ok(g.sum(y))
            },
            &model.params,
            GradCheckConfig::default(),
        )
        .unwrap();
        assert!(err < 1e-4, "{variant} {kind:?}: {err}");
    }
}

#[test]
fn checkpoints_round_trip() {
    let model = SsifModel::new(tiny(Variant::RfGs, DecoderKind::Concatenated), 11).unwrap();
    let mut adam = crate::numerics::AdamState::new(&model.params, Default::default());
    adam.step = 3;
    adam.first_moment[0].data_mut()[0] = 0.25;
    let ck = Checkpoint {
        config: model.config.clone(),
        seed: 11,
        step: 3,
        params: model.params.clone(),
        adam: Some(adam),
    };
    let bytes = encode_checkpoint(&ck);
    let back = decode_checkpoint(&bytes).unwrap();
    assert_eq!(back, ck);
    assert_eq!(encode_checkpoint(&back), bytes);
    assert_eq!(back.model().unwrap(), model);

    let bare = Checkpoint {
        adam: None,
        ..ck.clone()
    };
    assert_eq!(decode_checkpoint(&encode_checkpoint(&bare)).unwrap(), bare);

    let mut bad = bytes.clone();
    bad[1] = b'X';
    assert!(matches!(
        decode_checkpoint(&bad),
        Err(DataError::Format { offset: 0, .. })
    ));
    assert!(matches!(
        decode_checkpoint(&bytes[..bytes.len() - 1]),
        Err(DataError::Format { .. })
    ));
    let mut nan = bytes.clone();
    let at = bytes.len() - 8;
    nan[at..].copy_from_slice(&f64::NAN.to_le_bytes());
    assert!(
        matches!(decode_checkpoint(&nan), Err(DataError::Format { offset, .. }) if offset == at)
    );
}
