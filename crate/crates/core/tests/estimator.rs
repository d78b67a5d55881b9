use lunarhop::dynamics::{PronkGains, SimConfig};
use lunarhop::estimator::{
    decode_checkpoint, encode_checkpoint, flatten_grads, make_batch, DualHorizonEstimator, EstimatorConfig, EstimatorData,
    Mode, Normalizer, TrainConfig, Trainer,
};
use lunarhop::harness::{generate_dataset, DatasetSettings, ValidationTerrain};
use lunarhop::terrain::TerrainParams;
use lunarhop::twin::DisturbanceModel;

fn small_config(mode: Mode) -> EstimatorConfig {
    EstimatorConfig {
        mode,
        hidden: vec![32, 16],
        phi_hidden: vec![16],
        latent_dim: 8,
        ..Default::default()
    }
}

fn pronk_data(episodes: usize, seed: u64) -> EstimatorData {
    let dir = tempfile::tempdir().unwrap();
    let settings = DatasetSettings {
        episodes,
        terrains: vec![ValidationTerrain::Mare, ValidationTerrain::Hilly],
        speeds: vec![0.3, 0.6],
        max_duration: 6.0,
        master_seed: seed,
        disturbances: DisturbanceModel::none(1.62),
        ..Default::default()
    };
    let m = generate_dataset(&settings, &SimConfig::default(), &PronkGains::default(), &TerrainParams::default(), dir.path()).unwrap();
    EstimatorData::from_logs(&m.read_episodes(dir.path()).unwrap(), TrainConfig::default().max_delta())
}

#[test]
fn total_loss_moving_average_decreases() {
    let data = pronk_data(4, 1);
    let norm = Normalizer::fit(&data);
    let tc = TrainConfig {
        batch_size: 64,
        ..Default::default()
    };
    for mode in [Mode::Dual, Mode::ShortOnly, Mode::LongOnly] {
        let model = DualHorizonEstimator::new(small_config(mode), norm.clone()).unwrap();
        let mut trainer = Trainer::new(model, tc.clone()).unwrap();
        let hist = trainer.train(&data, 400).unwrap();
        let avg = |s: &[lunarhop::estimator::LossBreakdown]| s.iter().map(|l| l.total).sum::<f64>() / s.len() as f64;
        let (early, late) = (avg(&hist[..50]), avg(&hist[350..]));
        assert!(late < 0.7 * early, "{mode:?}: {early} -> {late}");
        assert_eq!(trainer.model.step, 400);
    }
}

#[test]
fn training_is_reproducible_and_survives_a_checkpoint() {
    let data = pronk_data(2, 3);
    let norm = Normalizer::fit(&data);
    let tc = TrainConfig {
        batch_size: 32,
        seed: 5,
        ..Default::default()
    };
    let run = || {
        let model = DualHorizonEstimator::new(small_config(Mode::Dual), norm.clone()).unwrap();
        let mut t = Trainer::new(model, tc.clone()).unwrap();
        t.train(&data, 50).unwrap();
        t.model
    };
    let a = run();
    assert_eq!(a, run());
    let restored = decode_checkpoint(&encode_checkpoint(&a)).unwrap();
    let mse_a = a.evaluate(&data).unwrap();
    let mse_b = restored.evaluate(&data).unwrap();
    for (x, y) in mse_a.iter().zip(&mse_b) {
        assert!((x - y).abs() <= 1e-4 * x.max(1e-6), "{mse_a:?} vs {mse_b:?}");
    }
}

#[test]
fn target_encoder_receives_no_gradient() {
    let data = pronk_data(2, 4);
    let norm = Normalizer::fit(&data);
    let tc = TrainConfig {
        batch_size: 16,
        target_update: 1.0,
        ..Default::default()
    };
    let model = DualHorizonEstimator::new(small_config(Mode::Dual), norm).unwrap();
    let before = model.phi_target.clone();
    let mut t = Trainer::new(model, tc).unwrap();
    t.train(&data, 20).unwrap();
    assert_eq!(t.model.phi_target, before);
    assert_ne!(t.model.phi_online, before);
}

#[test]
fn gradients_vanish_with_zero_weights() {
    let data = pronk_data(2, 6);
    let norm = Normalizer::fit(&data);
    let tc = TrainConfig {
        lambda_reg: 0.0,
        lambda_s: 0.0,
        lambda_l: 0.0,
        batch_size: 8,
        ..Default::default()
    };
    let cfg = small_config(Mode::Dual);
    let model = DualHorizonEstimator::new(cfg.clone(), norm.clone()).unwrap();
    let idx: Vec<usize> = (0..8).collect();
    let batch = make_batch(&data, &idx, &cfg, &tc, &norm);
    let (loss, grads) = model.loss_and_grads(&batch, &tc).unwrap();
    assert_eq!(loss.total, 0.0);
    assert!(loss.reg > 0.0 && loss.short > 0.0 && loss.long > 0.0);
    for g in [grads.short.unwrap(), grads.long.unwrap()] {
        assert!(flatten_grads(&g).iter().all(|v| *v == 0.0));
    }
}
