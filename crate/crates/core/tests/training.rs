//! PPO training: toy budgets, a degenerate environment with a known return,
//! determinism and checkpoint round trips.

use std::time::Instant;

use chartgaze::chartgen::{generate_spec, render, Aoi, AoiKind, BBox, GenParams, IMAGE_SIZE};
use chartgaze::commands::{cmd_gen, cmd_train, with_jobs, RunConfig};
use chartgaze::oculomotor::{
    act, ppo_train, train_policies, ActMode, EpisodeSource, GazeEpisode, NetConfig, PolicyParams, PolicySet,
    PpoConfig, PreparedChart, RewardConfig, SubtaskEnv, SubtaskKind, LOG_HEADER,
};
use chartgaze::rng::{rng_from, SimRng};
use chartgaze::vision::{GridCoord, CELLS};
use rand::Rng;

fn pool(n: usize, seed: u64) -> Vec<PreparedChart> {
    let mut out = Vec::new();
    let mut s = seed;
    while out.len() < n {
        if let Ok(c) = render(&generate_spec(s, &GenParams::default()).unwrap()) {
            out.push(PreparedChart::new(c));
        }
        s += 1;
    }
    out
}

fn toy(total_steps: usize) -> PpoConfig {
    PpoConfig { total_steps, rollout_len: 256, minibatch_size: 64, epochs: 2, ..PpoConfig::default() }
}

/// Every fixation hits: the target covers the whole image.
struct AlwaysHit(PreparedChart);

impl EpisodeSource for AlwaysHit {
    fn sample(&self, rng: &mut SimRng) -> GazeEpisode {
        let n = IMAGE_SIZE as i32;
        let target = Aoi {
            aoi_id: "everything".into(),
            kind: AoiKind::Mark,
            bbox: BBox { x0: 0, y0: 0, x1: n, y1: n },
            datum_index: Some(0),
            text: None,
        };
        let start = GridCoord::from_index(rng.gen_range(0..CELLS));
        GazeEpisode::new(self.0.chart.clone(), self.0.scene.clone(), vec![target], None, start, 20)
    }
}

#[test]
fn toy_budget_trains_quickly_and_logs_every_batch() {
    let env = SubtaskEnv::new(SubtaskKind::FindMark, pool(4, 0));
    let cfg = toy(1000);
    let t0 = Instant::now();
    let out = ppo_train(&env, NetConfig::default(), &cfg, 3).unwrap();
    assert!(t0.elapsed().as_secs() < 60, "took {:?}", t0.elapsed());
    assert_eq!(out.log.len(), 1000usize.div_ceil(256));
    for (i, row) in out.log.iter().enumerate() {
        assert_eq!(row.batch, i);
        assert_eq!(row.steps, (i + 1) * 256);
        assert!(row.mean_return.is_finite() && row.entropy > 0.0);
        assert_eq!(row.csv_row().split(',').count(), LOG_HEADER.split(',').count());
    }
    assert!(out.params.is_finite());
}

#[test]
fn degenerate_environment_returns_hit_reward_minus_step_penalty() {
    let source = AlwaysHit(pool(1, 5).remove(0));
    let out = ppo_train(&source, NetConfig::default(), &toy(512), 1).unwrap();
    let r = RewardConfig::default();
    for row in &out.log {
        assert_eq!(row.mean_length, 1.0);
        assert!((row.mean_return - (r.hit_reward - r.step_penalty)).abs() < 1e-12, "{}", row.mean_return);
        assert_eq!(row.episodes, 256);
    }
}

#[test]
fn training_is_deterministic_across_thread_counts() {
    let charts = pool(3, 40);
    let env = SubtaskEnv::new(SubtaskKind::ReadValue, charts);
    let cfg = toy(768);
    let a = with_jobs(1, || ppo_train(&env, NetConfig::default(), &cfg, 9)).unwrap().unwrap();
    let b = with_jobs(4, || ppo_train(&env, NetConfig::default(), &cfg, 9)).unwrap().unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.log, b.log);
    let c = ppo_train(&env, NetConfig::default(), &cfg, 10).unwrap();
    assert_ne!(a.params, c.params);
}

fn mean_return(env: &SubtaskEnv, mut policy: impl FnMut(&GazeEpisode, &mut SimRng) -> GridCoord, episodes: usize, seed: u64) -> (f64, f64) {
    let mut rng = rng_from(seed, &[]);
    let returns: Vec<f64> = (0..episodes)
        .map(|_| {
            let mut ep = env.sample(&mut rng);
            let mut total = 0.0;
            while !ep.done {
                let a = policy(&ep, &mut rng);
                total += ep.step(a).unwrap().reward;
            }
            total
        })
        .collect();
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[test]
fn trained_policy_beats_uniform_random() {
    let charts = pool(12, 100);
    let mut env = SubtaskEnv::new(SubtaskKind::Search, charts);
    env.step_cap = 10;
    let cfg = PpoConfig { total_steps: 12_000, ..PpoConfig::default() };
    let trained = ppo_train(&env, NetConfig::default(), &cfg, 21).unwrap().params;
    let held_out = SubtaskEnv { pool: pool(12, 900), ..env };
    let (m_rand, se_rand) = mean_return(&held_out, |_, rng| GridCoord::from_index(rng.gen_range(0..CELLS)), 400, 1);
    let (m_pol, se_pol) =
        mean_return(&held_out, |ep, rng| act(&trained, &ep.observation(), rng, ActMode::Sample).unwrap(), 400, 1);
    let se = (se_rand.powi(2) + se_pol.powi(2)).sqrt();
    eprintln!("policy {m_pol:.3} ± {se_pol:.3}, random {m_rand:.3} ± {se_rand:.3}");
    assert!(m_pol - m_rand > 3.0 * se, "policy {m_pol} vs random {m_rand} (se {se})");
}

#[test]
fn checkpoints_save_load_save_bit_identically() {
    let dir = tempfile::tempdir().unwrap();
    let set = PolicySet {
        search: PolicyParams::init(NetConfig::default(), &mut rng_from(1, &[])),
        find_mark: PolicyParams::init(NetConfig::default(), &mut rng_from(2, &[])),
        read_value: PolicyParams::init(NetConfig { conv_channels: 4, hidden: 8 }, &mut rng_from(3, &[])),
    };
    set.save_dir(dir.path()).unwrap();
    let loaded = PolicySet::load_dir(dir.path()).unwrap();
    let again = tempfile::tempdir().unwrap();
    loaded.save_dir(again.path()).unwrap();
    for kind in SubtaskKind::ALL {
        let a = std::fs::read(PolicySet::checkpoint_path(dir.path(), kind)).unwrap();
        let b = std::fs::read(PolicySet::checkpoint_path(again.path(), kind)).unwrap();
        assert_eq!(a, b, "{}", kind.name());
    }
    assert_eq!(loaded.get(SubtaskKind::ReadValue).config, NetConfig { conv_channels: 4, hidden: 8 });
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let p = PolicyParams::init(NetConfig::default(), &mut rng_from(1, &[]));
    let bytes = p.to_bytes();
    assert!(PolicyParams::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    assert!(PolicyParams::from_bytes(b"nonsense").is_err());
}

#[test]
fn train_command_writes_checkpoints_and_log() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig { charts: 3, out: dir.path().to_path_buf(), ppo: toy(512), ..RunConfig::default() };
    cmd_gen(&cfg, 2).unwrap();
    let set = cmd_train(&cfg, 2).unwrap();
    let loaded = PolicySet::load_dir(&cfg.policy_dir()).unwrap();
    for kind in SubtaskKind::ALL {
        // checkpoints hold f32 weights
        let w: Vec<f32> = set.get(kind).weights.iter().map(|w| *w as f32).collect();
        let l: Vec<f32> = loaded.get(kind).weights.iter().map(|w| *w as f32).collect();
        assert_eq!(w, l);
    }
    let log = std::fs::read_to_string(cfg.policy_dir().join("train_log.csv")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], format!("policy,{LOG_HEADER}"));
    assert_eq!(lines.len(), 1 + 3 * 2);
}

#[test]
fn empty_pool_is_an_error() {
    assert!(train_policies(&[], NetConfig::default(), &toy(256), RewardConfig::default(), 20, 0).is_err());
}
