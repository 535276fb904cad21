//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails. Pass criterion numbers as arguments to run a
//! subset, e.g. `cargo test --release --test acceptance -- 5 6`.

use std::f64::consts::PI;
use std::path::PathBuf;
use std::time::Instant;

use ndarray::Array2;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use regplan::autodiff::{finite_diff_grad, max_relative_error, Activation, MlpParams, Tape, Var};
use regplan::control::{mpc_episode, MpcConfig, OracleDynamics, PlannerKind};
use regplan::envs::{Bounds, CartpoleSwingup, Environment, ENV_IDS, SUCCESS_STEPS};
use regplan::mbrl::{
    collect_random_episode, derive_seed, gap_study, run_training, run_training_with, GapCell, GapStudy, ReplayBuffer,
    RunConfig,
};
use regplan::models::{
    fit_gaussian, train_dae, train_dae_on_windows, train_dynamics, DaeConfig, Denoiser, DynamicsConfig, DynamicsModel,
    Normalizer, VARIANCE_FLOOR,
};
use regplan::planning::{
    adam_optimize, cem_optimize, cem_optimize_traced, CemConfig, GradPlanConfig, ObjectiveSpec, Plan, Regularizer,
    WarmStart,
};
use regplan::rng::seeded;

struct Verdict {
    pass: bool,
    detail: String,
}

type Criterion = (&'static str, fn() -> Verdict);

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn config(name: &str) -> RunConfig {
    let path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "configs", name]
        .iter()
        .collect();
    RunConfig::parse(&std::fs::read_to_string(&path).expect("config file")).expect("valid config")
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn fmt(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.2}")).collect();
    format!("[{}]", parts.join(", "))
}

fn mlp_gradient_error(net: &MlpParams, x: &Array2<f64>) -> f64 {
    let mut tape = Tape::new();
    let bound = net.bind(&mut tape, true);
    let input = tape.constant(x.clone());
    let y = bound.forward(&mut tape, input).unwrap();
    let root = tape.sum(y);
    let grads = tape.backward(root).unwrap();
    let analytic: Vec<f64> = bound.param_vars().into_iter().flat_map(|v| grads.wrt(v)).collect();
    let flat: Vec<f64> = net.tensors().iter().flat_map(|t| t.iter().copied()).collect();
    let mut probe = net.clone();
    let numeric = finite_diff_grad(
        |p| {
            let mut k = 0;
            for t in probe.tensors_mut() {
                for v in t.iter_mut() {
                    *v = p[k];
                    k += 1;
                }
            }
            let mut tape = Tape::new();
            let input = tape.constant(x.clone());
            let y = probe.forward(&mut tape, input).unwrap();
            tape.value(y).sum()
        },
        &flat,
        1e-5,
    );
    max_relative_error(&analytic, &numeric)
}

/// Cart-pole with a random small-output model and a random denoiser.
fn random_learned_parts(seed: u64) -> (CartpoleSwingup, DynamicsModel, Denoiser) {
    let env = CartpoleSwingup::default();
    let mut model = DynamicsModel::new(5, 1, &[16, 16], seed).unwrap();
    let output = Normalizer {
        mean: vec![0.0; 5],
        std: vec![0.05; 5],
    };
    model.set_normalizers(Normalizer::identity(6), output).unwrap();
    let mut rng = seeded(seed, 1);
    let net = MlpParams::random(&[6, 8, 6], Activation::Swish, Activation::Identity, &mut rng).unwrap();
    let dae = Denoiser::new(net, Normalizer::identity(6), 0.1, 1).unwrap();
    (env, model, dae)
}

fn gradcheck() -> Verdict {
    let mut rng = seeded(2024, 0);
    let mut mlp_err: f64 = 0.0;
    for _ in 0..20 {
        let depth = rng.random_range(1..=3);
        let mut sizes = vec![rng.random_range(1..=5)];
        sizes.extend((0..depth).map(|_| rng.random_range(2..=10)));
        sizes.push(rng.random_range(1..=4));
        let hidden = if rng.random_bool(0.5) {
            Activation::Swish
        } else {
            Activation::Tanh
        };
        let net = MlpParams::random(&sizes, hidden, Activation::Identity, &mut rng).unwrap();
        let x = Array2::from_shape_fn((3, sizes[0]), |_| rng.random_range(-1.5..1.5));
        mlp_err = mlp_err.max(mlp_gradient_error(&net, &x));
    }

    let (env, model, dae) = random_learned_parts(21);
    let spec = ObjectiveSpec::new(&model, &env).with_regularizer(Regularizer::Dae(&dae), 0.3);
    let s0 = [0.1, 0.0, 0.95, -0.3, 0.2];
    // H = 5: six actions.
    let flat: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut tape = Tape::new();
    let actions: Vec<Var> = flat.iter().map(|&a| tape.row(&[a])).collect();
    let roll = spec.build(&mut tape, &s0, &actions).unwrap();
    let grads = tape.backward(roll.objective).unwrap();
    let analytic: Vec<f64> = actions.iter().map(|&a| grads.wrt(a)[[0, 0]]).collect();
    let numeric = finite_diff_grad(
        |p| {
            let mut tape = Tape::new();
            let actions: Vec<Var> = p.iter().map(|&a| tape.constant_row(&[a])).collect();
            let roll = spec.build(&mut tape, &s0, &actions).unwrap();
            tape.scalar(roll.objective)
        },
        &flat,
        1e-5,
    );
    let unroll_err = max_relative_error(&analytic, &numeric);
    verdict(
        mlp_err <= 1e-5 && unroll_err <= 1e-4,
        format!("MLP max rel. error {mlp_err:.2e} (<= 1e-5), H=5 unroll {unroll_err:.2e} (<= 1e-4)"),
    )
}

fn miyasawa() -> Verdict {
    let sigma = 0.5;
    let mut rng = seeded(11, 0);
    let data = Array2::from_shape_simple_fn((4000, 1), || Distribution::<f64>::sample(&StandardNormal, &mut rng));
    let cfg = DaeConfig {
        hidden: vec![32, 32],
        sigma,
        window: 1,
        epochs: 40,
        batch_size: 64,
        lr: 1e-3,
        seed: 3,
    };
    let dae = train_dae_on_windows(&data, &cfg).unwrap();
    let xs: Vec<f64> = (0..=40).map(|i| -2.0 + 0.1 * i as f64).collect();
    let ys: Vec<f64> = xs.iter().map(|&x| dae.denoise_one(&[x]).unwrap()[0]).collect();
    let mx = xs.iter().sum::<f64>() / xs.len() as f64;
    let my = ys.iter().sum::<f64>() / ys.len() as f64;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let expected = 1.0 / (1.0 + sigma * sigma);
    verdict(
        (slope - expected).abs() <= 0.05,
        format!("slope {slope:.4}, expected {expected} +- 0.05"),
    )
}

fn alpha_zero() -> Verdict {
    let (env, model, dae) = random_learned_parts(5);
    let plain = ObjectiveSpec::new(&model, &env);
    let reg = ObjectiveSpec::new(&model, &env).with_regularizer(Regularizer::Dae(&dae), 0.0);
    let s0 = vec![0.0, 0.0, -1.0, 0.0, 0.0];
    let init = Plan::midpoint(11, env.action_bounds()).unwrap();
    let bits = |p: &Plan| p.flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let cem = CemConfig {
        population: 100,
        elites: 10,
        iterations: 5,
        ..CemConfig::default()
    };
    let run_cem =
        |spec: &ObjectiveSpec| cem_optimize(|pop| spec.score_population(&s0, pop, 11, 1), &init, &cem, 7).unwrap();
    let cem_same = bits(&run_cem(&plain)) == bits(&run_cem(&reg));
    let adam = GradPlanConfig {
        iterations: 30,
        lr: 0.05,
        restarts: 4,
        warm_start: WarmStart::CemInit(2),
        cem: cem.clone(),
    };
    let a = adam_optimize(&plain, &s0, &init, &adam, 7).unwrap();
    let b = adam_optimize(&reg, &s0, &init, &adam, 7).unwrap();
    let adam_same = bits(&a) == bits(&b);
    verdict(
        cem_same && adam_same,
        format!("CEM identical: {cem_same}, Adam identical: {adam_same}"),
    )
}

fn cem_sanity() -> Verdict {
    let mut rng = seeded(5, 0);
    // H = 10, two action dimensions.
    let target = Array2::from_shape_fn((11, 2), |_| rng.random_range(-0.5..0.5));
    let f = |pop: &Array2<f64>| -> regplan::Result<Vec<f64>> {
        Ok(pop
            .rows()
            .into_iter()
            .map(|r| -r.iter().zip(target.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
            .collect())
    };
    let g = |pop: &Array2<f64>| -> regplan::Result<Vec<f64>> {
        Ok(f(pop)?.into_iter().map(|v| (3.0 * v).exp() - 1.0).collect())
    };
    let init = Plan::midpoint(11, &Bounds::symmetric(2, 1.0)).unwrap();
    let cfg = CemConfig {
        iterations: 25,
        ..CemConfig::default()
    };
    let a = cem_optimize_traced(f, &init, &cfg, 1).unwrap();
    let b = cem_optimize_traced(g, &init, &cfg, 1).unwrap();
    let err = a
        .plan
        .actions()
        .iter()
        .zip(target.iter())
        .map(|(x, t)| (x - t).abs())
        .fold(0.0, f64::max);
    let invariant = a.elites == b.elites && a.plan == b.plan;
    verdict(
        err <= 1e-2 && invariant,
        format!("max abs error {err:.2e} (<= 1e-2), elites unchanged under exp(3f) - 1: {invariant}"),
    )
}

/// Gap of unregularized Adam against Adam+DAE for every alpha in a sweep; the
/// alpha with the largest median reduction is reported.
fn gap_reproduction() -> Verdict {
    let cfg = config("cartpole-gap.cfg");
    let seeds: Vec<u64> = (0..5).collect();
    let alphas = [0.1, 0.3, 1.0];
    let adam = |regularized| GapCell {
        planner: PlannerKind::Adam,
        regularized,
    };
    let mut plain = Vec::new();
    let mut reg = vec![Vec::new(); alphas.len()];
    for &seed in &seeds {
        for (i, &alpha) in alphas.iter().enumerate() {
            let cells = if i == 0 {
                vec![adam(false), adam(true)]
            } else {
                vec![adam(true)]
            };
            let study = GapStudy {
                episodes_of_data: 5,
                alpha,
                cells,
                oracle: false,
            };
            for row in gap_study(&cfg, &study, seed).unwrap() {
                if row.alpha == 0.0 {
                    plain.push(row.gap);
                } else {
                    reg[i].push(row.gap);
                }
            }
        }
    }
    let positive = plain.iter().filter(|&&g| g > 0.0).count();
    let base = median(&plain);
    let reduction = |gaps: &[f64]| (base - median(gaps)) / base;
    let (best, red) = alphas
        .iter()
        .zip(&reg)
        .map(|(&a, g)| (a, reduction(g)))
        .fold((0.0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
    let best_gaps = &reg[alphas.iter().position(|&a| a == best).unwrap()];
    verdict(
        positive >= 4 && base > 0.0 && red >= 0.5,
        format!(
            "Adam gaps {} ({positive}/5 positive); alpha {best}: gaps {}, median reduction {:.0}% (>= 50%)",
            fmt(&plain),
            fmt(best_gaps),
            100.0 * red
        ),
    )
}

/// MPC episodes with a model overfit to a small buffer. The buffer holds one
/// random episode and a few noisy swing-ups by the true-dynamics planner, so
/// that both the model and the denoiser have seen the task, as they would
/// after training in the loop.
fn overfit_table() -> Verdict {
    const ORACLE_EPISODES: u64 = 2;
    const ORACLE_NOISE: f64 = 0.3;
    let cfg = config("cartpole-overfit.cfg");
    let env = CartpoleSwingup::default();
    let mut cem = Vec::new();
    let mut adam = Vec::new();
    let mut adam_dae = Vec::new();
    let mut adam_fallbacks = 0;
    for seed in 0..5u64 {
        let mut buffer = ReplayBuffer::new();
        for k in 0..cfg.random_episodes {
            buffer
                .push(collect_random_episode(&env, derive_seed(seed, 1, k as u64)))
                .unwrap();
        }
        let demo = MpcConfig {
            planner: PlannerKind::Cem,
            alpha: 0.0,
            noise_std: ORACLE_NOISE,
            ..cfg.mpc.clone()
        };
        for k in 0..ORACLE_EPISODES {
            let trace = mpc_episode(
                &env,
                &OracleDynamics(&env),
                Regularizer::None,
                &demo,
                derive_seed(seed, 6, k),
            )
            .unwrap();
            buffer.push(trace.episode).unwrap();
        }
        let model = train_dynamics(
            &buffer,
            &DynamicsConfig {
                seed: derive_seed(seed, 2, 0),
                ..cfg.model.clone()
            },
            None,
        )
        .unwrap();
        let dae = train_dae(
            &buffer,
            &DaeConfig {
                seed: derive_seed(seed, 3, 0),
                ..cfg.dae.clone()
            },
        )
        .unwrap();
        let run = |planner, alpha: f64| {
            let mpc = MpcConfig {
                planner,
                alpha,
                ..cfg.mpc.clone()
            };
            let reg = if alpha > 0.0 {
                Regularizer::Dae(&dae)
            } else {
                Regularizer::None
            };
            mpc_episode(&env, &model, reg, &mpc, derive_seed(seed, 4, 0))
                .unwrap()
                .episode
        };
        cem.push(run(PlannerKind::Cem, 0.0).total_return());
        let plain = run(PlannerKind::Adam, 0.0);
        adam_fallbacks += plain.planner_fallbacks;
        adam.push(plain.total_return());
        adam_dae.push(run(PlannerKind::Adam, cfg.mpc.alpha).total_return());
    }
    let (mc, ma, md) = (median(&cem), median(&adam), median(&adam_dae));
    let adam_fails = adam_fallbacks > 0 || ma < mc;
    verdict(
        adam_fails && md >= mc,
        format!(
            "median return CEM {mc:.2} {}, Adam {ma:.2} {} ({adam_fallbacks} fallbacks), Adam+DAE {md:.2} {}",
            fmt(&cem),
            fmt(&adam),
            fmt(&adam_dae)
        ),
    )
}

fn end_to_end() -> Verdict {
    let cfg = config("cartpole.cfg");
    let env = CartpoleSwingup::default();

    // Calibration: the planner with the true dynamics must solve the task in
    // one episode, otherwise the threshold is out of the planner's reach.
    let oracle = mpc_episode(
        &env,
        &OracleDynamics(&env),
        Regularizer::None,
        &cfg.mpc,
        derive_seed(0, 4, 0),
    )
    .unwrap();
    let oracle_err = env
        .final_tip_error(&oracle.episode.observations, SUCCESS_STEPS)
        .unwrap();
    let calibrated = env.solved(&oracle.episode.observations);

    let mut solved_at = Vec::new();
    for seed in 0..5u64 {
        let started = Instant::now();
        let mut run = cfg.clone();
        run.seed = seed;
        let mut hit = None;
        run_training_with(&run, None, |m, ep| {
            if env.solved(&ep.observations) {
                hit = Some(m.episode + 1);
            }
            hit.is_none()
        })
        .unwrap();
        println!(
            "    seed {seed}: {} ({:.0} s)",
            hit.map_or("not solved".into(), |k| format!("solved in episode {k}")),
            started.elapsed().as_secs_f64()
        );
        solved_at.push(hit);
    }
    let solved = solved_at.iter().filter(|h| h.is_some()).count();
    verdict(
        calibrated && solved >= 4,
        format!(
            "oracle tip error {oracle_err:.3} (solved: {calibrated}); learned agent solved on {solved}/5 seeds within {} episodes",
            cfg.episodes
        ),
    )
}

fn gaussian_oracle() -> Verdict {
    let env = CartpoleSwingup::default();
    let mut buffer = ReplayBuffer::new();
    for k in 0..3 {
        buffer.push(collect_random_episode(&env, 40 + k)).unwrap();
    }
    let w = 2;
    let fit = fit_gaussian(&buffer, w).unwrap();

    // Windows rebuilt from the raw episodes, statistics by two-pass sums.
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for ep in buffer.episodes() {
        for t in 0..=ep.len() - w {
            let mut row = Vec::new();
            for k in t..t + w {
                row.extend(&ep.observations[k]);
                row.extend(&ep.actions[k]);
            }
            rows.push(row);
        }
    }
    let n = rows.len() as f64;
    let d = rows[0].len();
    let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let var: Vec<f64> = (0..d)
        .map(|j| (rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n).max(VARIANCE_FLOOR))
        .collect();
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1.0);
    let mut worst: f64 = 0.0;
    for j in 0..d {
        worst = worst.max(rel(fit.mean[j], mean[j])).max(rel(fit.var[j], var[j]));
    }
    let mut rng = seeded(8, 0);
    for r in rows.iter().step_by(37) {
        let x: Vec<f64> = r.iter().map(|v| v + rng.random_range(-0.5..0.5)).collect();
        // Negative log of the normal density.
        let expected: f64 = (0..d)
            .map(|j| -(((-(x[j] - mean[j]).powi(2) / (2.0 * var[j])).exp()) / (2.0 * PI * var[j]).sqrt()).ln())
            .sum();
        worst = worst.max(rel(fit.penalty(&x).unwrap(), expected));
    }
    verdict(worst <= 1e-9, format!("max relative deviation {worst:.2e} (<= 1e-9)"))
}

fn determinism() -> Verdict {
    let mut ok = true;
    let mut detail = Vec::new();
    for id in ENV_IDS {
        let cfg = RunConfig::parse(&format!(
            "env.id = {id}\nrun.seed = 3\nrun.episodes = 3\nmodel.hidden = 16, 16\nmodel.epochs = 3\n\
             dae.hidden = 16\ndae.epochs = 3\ncem.population = 30\ncem.elites = 5\ncem.iterations = 2\nmpc.horizon = 6\n"
        ))
        .unwrap();
        let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
        for d in &dirs {
            run_training(&cfg, Some(d.path())).unwrap();
        }
        for file in ["metrics.jsonl", "buffer.jsonl"] {
            let a = std::fs::read(dirs[0].path().join(file)).unwrap();
            let b = std::fs::read(dirs[1].path().join(file)).unwrap();
            let same = a == b;
            ok &= same;
            if !same {
                detail.push(format!("{id}/{file} differs"));
            }
        }
    }
    let detail = if ok {
        format!("metrics and buffers byte-identical for {}", ENV_IDS.join(", "))
    } else {
        detail.join(", ")
    };
    verdict(ok, detail)
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("gradcheck", gradcheck),
        ("denoising-score oracle", miyasawa),
        ("alpha = 0 reduction", alpha_zero),
        ("CEM sanity", cem_sanity),
        ("imagination-reality gap", gap_reproduction),
        ("overfit model MPC", overfit_table),
        ("end-to-end swing-up", end_to_end),
        ("Gaussian baseline oracle", gaussian_oracle),
        ("determinism", determinism),
    ];
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let started = Instant::now();
        let v = check();
        println!(
            "{} {n}. {name}: {} [{:.1} s]",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            started.elapsed().as_secs_f64()
        );
        if !v.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
