use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::*;
use crate::acceptance::reference::{psnr_loop, sam_loop, ssim_loop};
use crate::model::{ModelConfig, Variant};

fn range() -> WavelengthRange {
    WavelengthRange::new(400.0, 700.0).unwrap()
}

fn cube(h: usize, w: usize, values: Vec<f32>) -> HyperCube {
    let c = values.len() / (h * w);
    let bands = WavelengthIntervalMatrix::equal_width(400.0, 700.0, c).unwrap();
    HyperCube::new(h, w, bands, range(), values).unwrap()
}

fn random_cube(h: usize, w: usize, c: usize, rng: &mut impl Rng) -> HyperCube {
    let v = (0..h * w * c).map(|_| rng.random_range(0.0..1.0)).collect();
    cube(h, w, v)
}

fn constant(h: usize, w: usize, c: usize, v: f32) -> HyperCube {
    cube(h, w, vec![v; h * w * c])
}

#[test]
fn psnr_examples() {
    let a = constant(4, 4, 3, 0.5);
    assert_eq!(psnr(&a, &a, 1.0).unwrap(), 100.0);
    // 0.1 error everywhere gives MSE 0.01 up to f32 rounding of the values.
    let b = cube(2, 2, vec![0.0; 4]);
    let e = cube(2, 2, vec![0.1; 4]);
    let mse = (0.1f32 as f64).powi(2);
    assert!((psnr(&b, &e, 1.0).unwrap() - 10.0 * (1.0 / mse).log10()).abs() < 1e-12);
    assert!((psnr(&b, &e, 1.0).unwrap() - 20.0).abs() < 1e-6);
    assert!(matches!(
        psnr(&a, &constant(4, 4, 2, 0.5), 1.0),
        Err(EvalError::Argument(_))
    ));
    assert!(psnr(&a, &a, 0.0).is_err());
}

#[test]
fn ssim_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = random_cube(12, 13, 2, &mut rng);
    assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);

    let cfg = SsimConfig::default();
    let (ma, mb) = (0.2f32 as f64, 0.7f32 as f64);
    let closed =
        (2.0 * ma * mb + cfg.c1) * (2.0 * 0.0 + cfg.c2) / ((ma * ma + mb * mb + cfg.c1) * cfg.c2);
    let v = ssim(&constant(11, 11, 1, 0.2), &constant(11, 11, 1, 0.7)).unwrap();
    assert!((v - closed).abs() < 1e-12, "{v} vs {closed}");

    assert!(matches!(
        ssim(&constant(10, 20, 1, 0.2), &constant(10, 20, 1, 0.2)),
        Err(EvalError::Argument(_))
    ));
    assert!(ssim(&a, &random_cube(12, 13, 3, &mut rng)).is_err());
}

#[test]
fn ssim_window_is_normalized_and_symmetric() {
    let k = SsimConfig::default().kernel();
    assert_eq!(k.len(), 11);
    assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    for i in 0..11 {
        assert_eq!(k[i], k[10 - i]);
    }
    assert!((k[4] / k[5] - (-1.0 / 4.5f64).exp()).abs() < 1e-15);
}

#[test]
fn sam_examples() {
    let a = cube(2, 3, [1.0, 0.0].repeat(6));
    let b = cube(2, 3, [0.0, 1.0].repeat(6));
    let d = cube(2, 3, [1.0, 1.0].repeat(6));
    assert_eq!(sam(&a, &a).unwrap(), 0.0);
    assert!((sam(&a, &b).unwrap() - 90.0).abs() < 1e-12);
    assert!((sam(&d, &a).unwrap() - 45.0).abs() < 1e-12);
    assert!(matches!(
        sam(&constant(2, 2, 1, 0.5), &constant(2, 2, 1, 0.5)),
        Err(EvalError::Argument(_))
    ));
    assert!(sam(&a, &cube(3, 2, [1.0, 0.0].repeat(6))).is_err());
}

#[test]
fn sam_counts_zero_norm_pixels_as_zero_angle() {
    let a = cube(1, 2, vec![0.0, 0.0, 1.0, 0.0]);
    let b = cube(1, 2, vec![0.3, 0.4, 0.0, 1.0]);
    assert!((sam(&a, &b).unwrap() - 45.0).abs() < 1e-12);
}

#[test]
fn metrics_match_loop_references() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cfg = SsimConfig::default();
    for _ in 0..10 {
        let (h, w, c) = (
            rng.random_range(11..16),
            rng.random_range(11..16),
            rng.random_range(2..5),
        );
        let a = random_cube(h, w, c, &mut rng);
        let b = random_cube(h, w, c, &mut rng);
        assert!((psnr(&a, &b, 1.0).unwrap() - psnr_loop(&a, &b, 1.0)).abs() < 1e-9);
        assert!((ssim(&a, &b).unwrap() - ssim_loop(&a, &b, &cfg)).abs() < 1e-9);
        assert!((sam(&a, &b).unwrap() - sam_loop(&a, &b)).abs() < 1e-9);
    }
}

#[test]
fn metrics_are_symmetric() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..5 {
        let a = random_cube(12, 12, 3, &mut rng);
        let b = random_cube(12, 12, 3, &mut rng);
        assert!((psnr(&a, &b, 1.0).unwrap() - psnr(&b, &a, 1.0).unwrap()).abs() < 1e-12);
        assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
        assert!((sam(&a, &b).unwrap() - sam(&b, &a).unwrap()).abs() < 1e-12);
    }
}

#[test]
fn psnr_falls_as_noise_grows() {
    let base = constant(16, 16, 4, 0.5);
    let noisy = |sigma: f64, seed: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, sigma).unwrap();
        let v = base
            .values()
            .iter()
            .map(|&x| (x as f64 + n.sample(&mut rng)).clamp(0.0, 1.0) as f32)
            .collect();
        cube(16, 16, v)
    };
    for (lo, hi) in [(0.01, 0.02), (0.02, 0.05), (0.05, 0.1)] {
        let mean = |sigma: f64| {
            (0..20)
                .map(|s| psnr(&base, &noisy(sigma, s), 1.0).unwrap())
                .sum::<f64>()
                / 20.0
        };
        assert!(mean(lo) > mean(hi) + 1.0, "{lo} vs {hi}");
    }
}

proptest! {
    #[test]
    fn sam_is_scale_invariant(
        seed in 0u64..1000,
        c in 0.05f64..4.0,
        pow in 0i32..3,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = cube(3, 3, (0..27).map(|_| rng.random_range(0.01..0.25)).collect());
        let scaled = |k: f64| cube(3, 3, a.values().iter().map(|&x| (x as f64 * k) as f32).collect());
        // Power-of-two factors are exact in f32, so the angle vanishes exactly.
        prop_assert_eq!(sam(&a, &scaled(2f64.powi(pow))).unwrap(), 0.0);
        prop_assert!(sam(&a, &scaled(c)).unwrap() < 1e-4);
    }

    #[test]
    fn ssim_is_bounded(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_cube(11, 12, 2, &mut rng);
        let b = random_cube(11, 12, 2, &mut rng);
        let v = ssim(&a, &b).unwrap();
        prop_assert!((-1.0..=1.0).contains(&v));
    }
}

fn small_sweep() -> EvalConfig {
    EvalConfig {
        scales: vec![1.5, 2.0, 3.0],
        band_counts: vec![4, 8],
        trained_p_max: 2.0,
        trained_c_max: 6,
        base_extent: 8,
        scenes: SceneSetConfig {
            count: 2,
            components: 3,
            seed: 77,
        },
        ..EvalConfig::standard(range())
    }
}

#[test]
fn fixed_grid_self_consistency_hits_the_cap() {
    let cfg = small_sweep();
    let mode = SamplingMode::FixedGrid { k: 16 };
    let stub = |scene: &SyntheticScene,
                extent: (usize, usize),
                bands: &WavelengthIntervalMatrix,
                rng: &mut dyn RngCore| {
        oracle_super_resolve(
            scene,
            extent,
            bands,
            range(),
            ResponseKind::Uniform,
            mode,
            rng,
        )
    };
    let report = sweep_eval_with(
        &cfg,
        |case| {
            let extent = output_extent(case.input, case.p)?;
            stub(case.scene, extent, case.bands, case.rng)
        },
        |renderer, extent, bands| {
            stub(
                renderer.scene(),
                extent,
                bands,
                &mut ChaCha8Rng::seed_from_u64(0),
            )
        },
    )
    .unwrap();
    assert_eq!(report.rows.len(), 6);
    for r in &report.rows {
        assert_eq!(r.metrics.psnr_db, 100.0);
        assert!((r.metrics.ssim - 1.0).abs() < 1e-12);
        assert_eq!(r.metrics.sam_deg, 0.0);
    }
}

#[test]
fn oracle_resolver_is_close_to_exact_renders() {
    let cfg = small_sweep();
    let report = sweep_eval_with(
        &cfg,
        |case| {
            let extent = output_extent(case.input, case.p)?;
            oracle_super_resolve(
                case.scene,
                extent,
                case.bands,
                range(),
                ResponseKind::Uniform,
                SamplingMode::FixedGrid { k: 32 },
                case.rng,
            )
        },
        oracle_truth(ResponseKind::Uniform),
    )
    .unwrap();
    assert!(report.rows.iter().all(|r| r.metrics.psnr_db > 60.0));
}

#[test]
fn sweep_rows_follow_the_grid_and_flag_distribution() {
    let cfg = small_sweep();
    let model = SsifModel::new(ModelConfig::compact(Variant::RfUs, 4, range()), 3).unwrap();
    let report = sweep_eval(&model, &cfg).unwrap();
    assert_eq!(report.rows.len(), cfg.scales.len() * cfg.band_counts.len());
    let mut expected = Vec::new();
    for &p in &cfg.scales {
        for &c in &cfg.band_counts {
            expected.push((p, c, p > 2.0 || c > 6));
        }
    }
    let got: Vec<(f64, usize, bool)> = report.rows.iter().map(|r| (r.p, r.c, r.ood)).collect();
    assert_eq!(got, expected);
    assert_eq!(report.row(3.0, 8).map(|r| r.ood), Some(true));
    assert_eq!(report.row(1.5, 4).map(|r| r.ood), Some(false));
    assert!(report.rows.iter().all(|r| r.metrics.psnr_db.is_finite()));

    let again = sweep_eval(&model, &cfg).unwrap();
    let csv = |r: &EvalReport| {
        let mut v = Vec::new();
        write_report_csv(&mut v, r, false).unwrap();
        String::from_utf8(v).unwrap()
    };
    assert_eq!(csv(&report), csv(&again));
    let text = csv(&report);
    let mut lines = text.lines();
    assert!(lines
        .next()
        .unwrap()
        .starts_with("# ssim window=11 sigma=1.5"));
    assert_eq!(
        lines.next().unwrap(),
        "p,C,ood,psnr_db,ssim,sam_deg,wall_ms"
    );
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(&first[..3], &["1.5", "4", "in"]);
    assert_eq!(first[6], "0.000");
}

#[test]
fn eval_config_validation() {
    let good = small_sweep();
    assert!(good.validate().is_ok());
    for bad in [
        EvalConfig {
            scales: vec![],
            ..good.clone()
        },
        EvalConfig {
            scales: vec![0.5],
            ..good.clone()
        },
        EvalConfig {
            band_counts: vec![0],
            ..good.clone()
        },
        EvalConfig {
            base_extent: 0,
            ..good.clone()
        },
    ] {
        assert!(bad.validate().is_err());
    }
    let mut v = serde_json::to_value(&good).unwrap();
    assert_eq!(
        serde_json::from_value::<EvalConfig>(v.clone()).unwrap(),
        good
    );
    v["scale"] = 2.into();
    assert!(serde_json::from_value::<EvalConfig>(v).is_err());
}

#[test]
fn for_training_copies_the_trained_ranges() {
    let train = TrainConfig::standard(Variant::RfGs, range());
    let cfg = EvalConfig::for_training(&train);
    assert_eq!(cfg.trained_p_max, train.pairs.p_max);
    assert_eq!(cfg.trained_c_max, train.pairs.c_max);
    assert_eq!(cfg.input_bands, train.pairs.input_bands);
    assert_eq!(cfg.range, train.model.range);
}

#[test]
fn basis_csv_shape() {
    let model = SsifModel::new(ModelConfig::compact(Variant::RfUf, 4, range()), 1).unwrap();
    let grid = wavelength_grid(400.0, 700.0, 31);
    assert_eq!(grid.len(), 31);
    assert_eq!((grid[0], grid[30]), (400.0, 700.0));
    let basis = dump_spectral_basis(&model, &grid).unwrap();
    let mut out = Vec::new();
    write_basis_csv(&mut out, &grid, &basis).unwrap();
    let text = String::from_utf8(out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 32);
    let d = model.config.feature_dim;
    assert!(lines.iter().all(|l| l.split(',').count() == d + 1));
    assert!(lines[0].starts_with("lambda,e_0,e_1"));
    assert!(lines[0].ends_with(&format!("e_{}", d - 1)));
    assert!(lines[1].starts_with("400,"));
}

#[test]
fn zero_weights_give_zero_curves() {
    for kind in [
        crate::model::DecoderKind::Modulated,
        crate::model::DecoderKind::Concatenated,
    ] {
        let mut cfg = ModelConfig::compact(Variant::RfUf, 4, range());
        cfg.decoder_kind = kind;
        let mut model = SsifModel::new(cfg, 1).unwrap();
        for id in model.params.ids() {
            model.params.get_mut(id).data_mut().fill(0.0);
        }
        let basis = dump_spectral_basis(&model, &wavelength_grid(380.0, 720.0, 9)).unwrap();
        assert!(basis.iter().flatten().all(|&v| v == 0.0));
    }
}

#[test]
fn basis_curves_are_continuous() {
    let model = SsifModel::new(ModelConfig::compact(Variant::RfUf, 4, range()), 2).unwrap();
    let max_step = |n: usize| {
        let b = dump_spectral_basis(&model, &wavelength_grid(400.0, 700.0, n)).unwrap();
        b.windows(2)
            .flat_map(|w| w[0].iter().zip(&w[1]).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    };
    let coarse = max_step(301);
    let fine = max_step(3001);
    assert!(fine < 0.2 * coarse, "{coarse} -> {fine}");
    assert!(fine < 0.05);
}
