use lunarhop::dynamics::{PronkGains, ScriptedPronk, SimConfig};
use lunarhop::estimator::{DualHorizonEstimator, EstimatorConfig, Normalizer};
use lunarhop::harness::{read_log, recompute_metrics, run_episode, write_log, EpisodeConfig, OnlineEstimator, ValidationTerrain};
use lunarhop::terrain::{generate_strip, TerrainCategory, TerrainParams, TerrainSpec};
use lunarhop::twin::{check_commands, encode_commands, parse_commands, twin_rollout, BodyPose, DisturbanceModel, TwinConfig};

fn crater_episode(estimator: Option<&mut dyn OnlineEstimator>) -> lunarhop::harness::Episode {
    let sim = SimConfig::default();
    let cfg = EpisodeConfig {
        terrain: ValidationTerrain::Crater.spec(17),
        v_x_cmd: 0.5,
        max_duration: 8.0,
        seed: 3,
        ..EpisodeConfig::default()
    };
    let field = cfg.field(&TerrainParams::default()).unwrap();
    let ctrl = ScriptedPronk::calibrate(&sim, PronkGains::default(), &cfg.target(&sim));
    run_episode(&cfg, &field, &sim, &ctrl, estimator).unwrap()
}

#[test]
fn episode_log_round_trip_reproduces_metrics() {
    let ep = crater_episode(None);
    let mut bytes = Vec::new();
    write_log(&ep.log, &mut bytes).unwrap();
    let back = read_log(bytes.as_slice()).unwrap();
    assert_eq!(back.len(), ep.log.len());
    assert_eq!(recompute_metrics(&back, &ep.params), ep.metrics);
    assert_eq!(ep.log[0].step, 0);
    assert!(ep.log.windows(2).all(|w| w[1].step == w[0].step + 1));
}

#[test]
fn online_estimator_reports_mse_and_leaves_dynamics_alone() {
    let plain = crater_episode(None);
    let model = DualHorizonEstimator::new(EstimatorConfig::default(), Normalizer::default()).unwrap();
    let mut runtime = model.runtime();
    let with = crater_episode(Some(&mut runtime));
    let mse = with.metrics.estimator_mse.unwrap();
    assert!(mse.iter().all(|v| v.is_finite() && *v >= 0.0));
    assert!(with.log.iter().all(|r| r.estimate.is_some()));
    let pos = |e: &lunarhop::harness::Episode| e.log.iter().map(|r| r.position).collect::<Vec<_>>();
    assert_eq!(pos(&plain), pos(&with));
}

#[test]
fn twin_commands_from_an_episode_respect_platform_limits() {
    let ep = crater_episode(None);
    let field = generate_strip(&ValidationTerrain::Crater.spec(17), &TerrainParams::default(), 3).unwrap();
    let poses: Vec<BodyPose> = ep
        .log
        .iter()
        .map(|r| BodyPose {
            time: r.time,
            x: r.position[0],
            y: r.position[1],
            yaw: r.yaw,
            forward_velocity: r.heading_velocity[0],
        })
        .collect();
    let cfg = TwinConfig::default();
    let cmds = twin_rollout(&poses, &field, &cfg).unwrap();
    assert_eq!(cmds.len(), poses.len());
    assert!(cmds.iter().all(|c| c.phi.abs() <= cfg.tilt_limit && c.theta.abs() <= cfg.tilt_limit && c.treadmill_speed >= 0.0));
    // The crater rim tilts the platform.
    assert!(cmds.iter().any(|c| c.theta.abs() > 0.02));
    let records = parse_commands(&encode_commands(&cmds)).unwrap();
    assert_eq!(records.len(), cmds.len());
    assert!(check_commands(&records, &cfg).is_empty());
}

#[test]
fn every_category_regenerates_identically() {
    let params = TerrainParams::default();
    for (k, cat) in [
        TerrainCategory::PureFlat,
        TerrainCategory::Flat,
        TerrainCategory::PerlinFlat,
        TerrainCategory::SmoothSlope,
        TerrainCategory::RoughSlope,
        TerrainCategory::PerlinSlope,
        TerrainCategory::DiscreteObstacles,
        TerrainCategory::Crater,
        TerrainCategory::PerlinCrater,
    ]
    .into_iter()
    .enumerate()
    {
        let spec = TerrainSpec::new(cat, 0.6, 40 + k as u64);
        let a = generate_strip(&spec, &params, 2).unwrap();
        let b = generate_strip(&spec, &params, 2).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes(), "{cat}");
        let other = generate_strip(&TerrainSpec::new(cat, 0.6, 41 + k as u64), &params, 2).unwrap();
        if cat != TerrainCategory::PureFlat && cat != TerrainCategory::SmoothSlope && cat != TerrainCategory::Crater {
            assert_ne!(a.to_bytes(), other.to_bytes(), "{cat} ignores its seed");
        }
    }
}

#[test]
fn fixed_gravity_disturbance_model_is_honored() {
    let sim = SimConfig::default();
    let cfg = EpisodeConfig {
        disturbances: DisturbanceModel::none(2.0),
        max_duration: 2.0,
        ..EpisodeConfig::default()
    };
    let field = cfg.field(&TerrainParams::default()).unwrap();
    let ctrl = ScriptedPronk::calibrate(&sim, PronkGains::default(), &cfg.target(&sim));
    let ep = run_episode(&cfg, &field, &sim, &ctrl, None).unwrap();
    assert_eq!(ep.metrics.gravity, 2.0);
}
