//! Invariant suites behind `regplan verify`.

use clap::ValueEnum;
use ndarray::Array2;
use rand::Rng as _;

use regplan::autodiff::{finite_diff_grad, max_relative_error, Activation, MlpParams, Tape, Var};
use regplan::envs::{make_env, CartpoleSwingup, Environment, PointReacher, ReactorSurrogate, ENV_IDS};
use regplan::models::{train_dae_on_windows, DaeConfig, Denoiser, DynamicsModel, Normalizer};
use regplan::planning::{cem_optimize_traced, CemConfig, ObjectiveSpec, Plan, Regularizer};
use regplan::rng::seeded;

use crate::Failure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Gradcheck,
    DaeOracle,
    CemSanity,
    EnvChecks,
    All,
}

struct Check {
    suite: &'static str,
    name: String,
    value: f64,
    limit: String,
    pass: bool,
}

fn at_most(suite: &'static str, name: impl Into<String>, value: f64, limit: f64) -> Check {
    Check {
        suite,
        name: name.into(),
        value,
        limit: format!("<= {limit:e}"),
        pass: value <= limit,
    }
}

fn holds(suite: &'static str, name: impl Into<String>, ok: bool) -> Check {
    Check {
        suite,
        name: name.into(),
        value: if ok { 1.0 } else { 0.0 },
        limit: "holds".into(),
        pass: ok,
    }
}

pub fn run(suite: Suite) -> Result<(), Failure> {
    let mut checks = Vec::new();
    if matches!(suite, Suite::Gradcheck | Suite::All) {
        checks.extend(gradcheck());
    }
    if matches!(suite, Suite::DaeOracle | Suite::All) {
        checks.extend(dae_oracle());
    }
    if matches!(suite, Suite::CemSanity | Suite::All) {
        checks.extend(cem_sanity());
    }
    if matches!(suite, Suite::EnvChecks | Suite::All) {
        checks.extend(env_checks());
    }
    println!(
        "{:<12} {:<44} {:>12} {:>12}  result",
        "suite", "check", "value", "limit"
    );
    for c in &checks {
        println!(
            "{:<12} {:<44} {:>12.3e} {:>12}  {}",
            c.suite,
            c.name,
            c.value,
            c.limit,
            if c.pass { "PASS" } else { "FAIL" }
        );
    }
    let failed = checks.iter().filter(|c| !c.pass).count();
    println!("{} checks, {failed} failed", checks.len());
    if failed == 0 {
        Ok(())
    } else {
        Err(Failure::Runtime(format!("{failed} verification checks failed")))
    }
}

fn flatten(net: &MlpParams) -> Vec<f64> {
    net.tensors().iter().flat_map(|t| t.iter().copied()).collect()
}

fn mlp_param_error(net: &MlpParams, x: &Array2<f64>) -> f64 {
    let mut tape = Tape::new();
    let bound = net.bind(&mut tape, true);
    let input = tape.constant(x.clone());
    let y = bound.forward(&mut tape, input).expect("shapes agree");
    let root = tape.sum(y);
    let grads = tape.backward(root).expect("scalar root");
    let analytic: Vec<f64> = bound.param_vars().into_iter().flat_map(|v| grads.wrt(v)).collect();
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
            let y = probe.forward(&mut tape, input).expect("shapes agree");
            tape.value(y).sum()
        },
        &flatten(net),
        1e-5,
    );
    max_relative_error(&analytic, &numeric)
}

fn gradcheck() -> Vec<Check> {
    let mut rng = seeded(2024, 0);
    let mut worst: f64 = 0.0;
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
        let net = MlpParams::random(&sizes, hidden, Activation::Identity, &mut rng).expect("valid sizes");
        let x = Array2::from_shape_fn((3, sizes[0]), |_| rng.random_range(-1.5..1.5));
        worst = worst.max(mlp_param_error(&net, &x));
    }
    vec![
        at_most("gradcheck", "20 random MLPs, max relative error", worst, 1e-5),
        at_most(
            "gradcheck",
            "H=5 regularized return, max relative error",
            unroll_error(),
            1e-4,
        ),
    ]
}

fn unroll_error() -> f64 {
    let env = CartpoleSwingup::default();
    let mut model = DynamicsModel::new(5, 1, &[16, 16], 5).expect("valid sizes");
    let output = Normalizer {
        mean: vec![0.0; 5],
        std: vec![0.05; 5],
    };
    model
        .set_normalizers(Normalizer::identity(6), output)
        .expect("dims agree");
    let mut rng = seeded(6, 0);
    let net = MlpParams::random(&[6, 8, 6], Activation::Swish, Activation::Identity, &mut rng).expect("valid sizes");
    let dae = Denoiser::new(net, Normalizer::identity(6), 0.1, 1).expect("dims agree");
    let spec = ObjectiveSpec::new(&model, &env).with_regularizer(Regularizer::Dae(&dae), 0.3);
    let s0 = [0.1, 0.0, 0.2, -0.9, 0.3];
    let flat: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();

    let mut tape = Tape::new();
    let actions: Vec<Var> = flat.iter().map(|&a| tape.row(&[a])).collect();
    let roll = spec.build(&mut tape, &s0, &actions).expect("valid rollout");
    let grads = tape.backward(roll.objective).expect("scalar root");
    let analytic: Vec<f64> = actions.iter().map(|&a| grads.wrt(a)[[0, 0]]).collect();
    let numeric = finite_diff_grad(
        |p| {
            let mut tape = Tape::new();
            let actions: Vec<Var> = p.iter().map(|&a| tape.constant_row(&[a])).collect();
            let roll = spec.build(&mut tape, &s0, &actions).expect("valid rollout");
            tape.scalar(roll.objective)
        },
        &flat,
        1e-5,
    );
    max_relative_error(&analytic, &numeric)
}

fn dae_oracle() -> Vec<Check> {
    let sigma = 0.5;
    let mut rng = seeded(11, 0);
    let data = Array2::from_shape_simple_fn((4000, 1), || {
        rand_distr::Distribution::<f64>::sample(&rand_distr::StandardNormal, &mut rng)
    });
    let cfg = DaeConfig {
        hidden: vec![32, 32],
        sigma,
        window: 1,
        epochs: 40,
        batch_size: 64,
        lr: 1e-3,
        seed: 3,
    };
    let dae = match train_dae_on_windows(&data, &cfg) {
        Ok(d) => d,
        Err(_) => return vec![holds("dae-oracle", "denoiser training", false)],
    };
    let xs: Vec<f64> = (0..=40).map(|i| -2.0 + 0.1 * i as f64).collect();
    let ys: Vec<f64> = xs
        .iter()
        .map(|&x| dae.denoise_one(&[x]).expect("1-D input")[0])
        .collect();
    let mx = xs.iter().sum::<f64>() / xs.len() as f64;
    let my = ys.iter().sum::<f64>() / ys.len() as f64;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let expected = 1.0 / (1.0 + sigma * sigma);
    vec![at_most(
        "dae-oracle",
        format!("|slope - 0.8| (slope {slope:.4})"),
        (slope - expected).abs(),
        0.05,
    )]
}

fn cem_sanity() -> Vec<Check> {
    let mut rng = seeded(5, 0);
    let target = Array2::from_shape_fn((11, 2), |_| rng.random_range(-0.5..0.5));
    let f = |pop: &Array2<f64>| -> regplan::Result<Vec<f64>> {
        Ok(pop
            .rows()
            .into_iter()
            .map(|r| -r.iter().zip(target.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
            .collect())
    };
    let g =
        |pop: &Array2<f64>| -> regplan::Result<Vec<f64>> { Ok(f(pop)?.into_iter().map(|v| 2.0 * v + 7.0).collect()) };
    let bounds = regplan::envs::Bounds::symmetric(2, 1.0);
    let init = Plan::midpoint(11, &bounds).expect("non-empty");
    let cfg = CemConfig {
        iterations: 25,
        ..CemConfig::default()
    };
    let (a, b) = match (
        cem_optimize_traced(f, &init, &cfg, 1),
        cem_optimize_traced(g, &init, &cfg, 1),
    ) {
        (Ok(a), Ok(b)) => (a, b),
        _ => return vec![holds("cem-sanity", "optimizer runs", false)],
    };
    let err = a
        .plan
        .actions()
        .iter()
        .zip(target.iter())
        .map(|(x, t)| (x - t).abs())
        .fold(0.0, f64::max);
    vec![
        at_most("cem-sanity", "quadratic optimum, max abs error", err, 1e-2),
        holds(
            "cem-sanity",
            "same elites under 2f + 7",
            a.elites == b.elites && a.plan == b.plan,
        ),
    ]
}

fn env_checks() -> Vec<Check> {
    let mut checks = Vec::new();
    let expected_len = [("cartpole", 200), ("reacher2d", 150), ("reactor", 300)];
    for id in ENV_IDS {
        let env = make_env(id).expect("known id");
        let env = env.as_ref();
        let len = expected_len.iter().find(|(i, _)| *i == id).map(|&(_, l)| l);
        checks.push(holds(
            "env-checks",
            format!("{id}: episode length"),
            Some(env.episode_len()) == len,
        ));

        let mut rng = seeded(3, 0);
        let mut deterministic = true;
        let mut tape_agrees = true;
        let mut worst_grad: f64 = 0.0;
        for _ in 0..20 {
            let state = env.reset(&mut rng);
            let b = env.action_bounds();
            let action: Vec<f64> = (0..b.dim()).map(|j| rng.random_range(b.low[j]..=b.high[j])).collect();
            let next = env.step(&state, &action);
            deterministic &= next == env.step(&state, &action);

            let mut tape = Tape::new();
            let s = tape.constant_row(&state);
            let a = tape.row(&action);
            let n = env.step_on_tape(&mut tape, s, a).expect("dims agree");
            let o = env.observe_on_tape(&mut tape, n).expect("dims agree");
            let r = env.reward_on_tape(&mut tape, o, a).expect("dims agree");
            let obs = env.observe(&next);
            tape_agrees &= tape.value(n).iter().zip(&next).all(|(x, y)| x.to_bits() == y.to_bits());
            tape_agrees &= tape.scalar(r).to_bits() == env.reward(&obs, &action).to_bits();

            let g = tape.backward(r).expect("scalar root").wrt(a);
            let numeric = finite_diff_grad(|p| env.reward(&env.observe(&env.step(&state, p)), p), &action, 1e-6);
            worst_grad = worst_grad.max(max_relative_error(g.as_slice().expect("row"), &numeric));
        }
        checks.push(holds(
            "env-checks",
            format!("{id}: step is deterministic"),
            deterministic,
        ));
        checks.push(holds(
            "env-checks",
            format!("{id}: tape path is bit-identical"),
            tape_agrees,
        ));
        checks.push(at_most(
            "env-checks",
            format!("{id}: action gradient rel. error"),
            worst_grad,
            1e-5,
        ));
    }

    let cp = CartpoleSwingup::default();
    let rest = vec![0.0; 4];
    checks.push(holds(
        "env-checks",
        "cartpole: hanging rest is a fixed point",
        cp.step(&rest, &[0.0]) == rest,
    ));

    let pr = PointReacher::default();
    let at_goal = vec![0.4, -0.2, 0.0, 0.0, 0.4, -0.2];
    let still = pr.step(&at_goal, &[0.0, 0.0]) == at_goal && pr.reward(&pr.observe(&at_goal), &[0.0, 0.0]) == 0.0;
    checks.push(holds("env-checks", "reacher2d: at goal is stationary, reward 0", still));

    let rx = ReactorSurrogate::default();
    let s = rx.setpoint.to_vec();
    let drift = rx
        .step(&s, &rx.nominal_valves)
        .iter()
        .zip(&s)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    checks.push(at_most("env-checks", "reactor: drift at setpoint", drift, 1e-12));
    checks
}
