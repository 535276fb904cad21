use std::fs;

use regplan::envs::{make_env, Environment, PointReacher};
use regplan::mbrl::{
    collect_random_episode, decode_denoiser, decode_dynamics, failed_stage, run_training, ReplayBuffer, RunConfig,
};

fn tiny(env: &str) -> RunConfig {
    let text = format!(
        "env.id = {env}\n\
         run.episodes = 3\n\
         model.hidden = 8, 8\n\
         model.epochs = 2\n\
         dae.hidden = 8\n\
         dae.epochs = 2\n\
         cem.population = 20\n\
         cem.elites = 4\n\
         cem.iterations = 1\n\
         mpc.horizon = 4\n"
    );
    RunConfig::parse(&text).unwrap()
}

#[test]
fn random_episodes_respect_bounds_and_seed() {
    for id in ["cartpole", "reacher2d", "reactor"] {
        let env = make_env(id).unwrap();
        let a = collect_random_episode(env.as_ref(), 5);
        assert_eq!(a.len(), env.episode_len());
        assert!(a.actions.iter().all(|x| env.action_bounds().contains(x)));
        assert_eq!(a, collect_random_episode(env.as_ref(), 5));
        assert_ne!(a, collect_random_episode(env.as_ref(), 6));
    }
}

#[test]
fn transition_count_is_bookkept() {
    let env = PointReacher::default();
    let mut buffer = ReplayBuffer::new();
    for seed in 0..100 {
        buffer.push(collect_random_episode(&env, seed)).unwrap();
    }
    assert_eq!(buffer.num_transitions(), 100 * env.episode_len());
}

#[test]
fn only_random_episodes() {
    let mut cfg = tiny("reacher2d");
    cfg.episodes = 2;
    cfg.random_episodes = 2;
    let out = run_training(&cfg, None).unwrap();
    let env = PointReacher::default();
    let expected: Vec<f64> = out.buffer.episodes().iter().map(|e| e.total_return()).collect();
    assert_eq!(out.learning_curve(), expected);
    assert!(out.dynamics.is_none());
    assert!(out.metrics.iter().all(|m| m.gap.is_none() && m.model_val_nll.is_none()));
    assert_eq!(out.buffer.num_transitions(), 2 * env.episode_len());
}

#[test]
fn runs_are_byte_identical() {
    let cfg = tiny("cartpole");
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let outs: Vec<_> = dirs
        .iter()
        .map(|d| run_training(&cfg, Some(d.path())).unwrap())
        .collect();
    assert_eq!(outs[0].learning_curve(), outs[1].learning_curve());
    for name in ["metrics.jsonl", "buffer.jsonl", "dynamics.bin", "dae.bin", "run.json"] {
        let a = fs::read(dirs[0].path().join(name)).unwrap();
        let b = fs::read(dirs[1].path().join(name)).unwrap();
        assert_eq!(a, b, "{name} differs");
    }

    let run: serde_json::Value = serde_json::from_slice(&fs::read(dirs[0].path().join("run.json")).unwrap()).unwrap();
    assert_eq!(run["status"], "complete");
    let lines = fs::read_to_string(dirs[0].path().join("metrics.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 3);
    let model = decode_dynamics(&fs::read(dirs[0].path().join("dynamics.bin")).unwrap()).unwrap();
    assert_eq!(Some(&model), outs[0].dynamics.as_ref());
    let dae = decode_denoiser(&fs::read(dirs[0].path().join("dae.bin")).unwrap()).unwrap();
    assert_eq!(Some(&dae), outs[0].denoiser.as_ref());

    let mut other = cfg.clone();
    other.seed = 1;
    assert_ne!(
        run_training(&other, None).unwrap().learning_curve(),
        outs[0].learning_curve()
    );
}

#[test]
fn failures_name_their_stage() {
    let mut cfg = tiny("cartpole");
    // A learning rate this large drives the model loss to infinity.
    cfg.model.lr = 1e300;
    let dir = tempfile::tempdir().unwrap();
    let err = run_training(&cfg, Some(dir.path())).unwrap_err();
    assert_eq!(failed_stage(&err), Some("train-dynamics"));
    let run: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("run.json")).unwrap()).unwrap();
    assert_eq!(run["status"], "failed");
}

#[test]
fn gaussian_and_unregularized_runs_complete() {
    for reg in ["gaussian", "none"] {
        let mut cfg = tiny("reactor");
        cfg.set("planner.regularizer", reg).unwrap();
        cfg.set("planner.kind", "adam").unwrap();
        cfg.set("adam.iterations", "3").unwrap();
        let out = run_training(&cfg, None).unwrap();
        assert_eq!(out.metrics.len(), 3);
        assert!(out.denoiser.is_none());
        let env = make_env("reactor").unwrap();
        assert!(out.buffer.episodes().iter().all(|e| e.len() == env.episode_len()));
    }
}
