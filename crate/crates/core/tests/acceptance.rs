//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

mod common;

use std::collections::HashMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use noisy_rm::abstraction::{
    exact_classifier, exact_distribution, exact_rm_belief, AbstractionModel, History,
    LabellingFunction, PropClassifier, PropDist, PropDistributionModel,
};
use noisy_rm::envs::gold::{
    gold_models, gold_pomdp, gold_rm, random_episodes, Action, Cell, GoldLabeller, DEFAULT_HORIZON,
};
use noisy_rm::envs::persistent::{
    make_persistent, persistent_label, persistent_rm, reveal, PersistentVariant, OBS_O,
};
use noisy_rm::inference::{
    exact_filter, ibu_update, init_belief, tdm_predict, Belief, ExactFilterModel, InferenceMethod,
    InferenceState,
};
use noisy_rm::learner::{
    train_run, GoldTask, LinearQ, MemoryFlags, Method, Parameterization, QInput, TrainConfig,
    N_MEMORY,
};
use noisy_rm::metrics::score_episodes;
use noisy_rm::product::{build_product, paired_rollout, NoisyRmEnv, Pomdp, ProductPomdp};
use noisy_rm::rm::{PropSet, RewardMachine, RmError, RmStateId};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome, Duration);

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn a1() -> Outcome {
    let rm = gold_rm();
    let m =
        PropDist::from_pairs(2, &[(PropSet::empty(), 0.7), (PropSet::singleton(0), 0.3)]).unwrap();
    let mut b = init_belief(&rm);
    let mut worst: f64 = 0.0;
    let mut first_two = Vec::new();
    for k in 1..=20 {
        b = ibu_update(&rm, &b, &m).map_err(|e| e.to_string())?;
        let got = b.get(RmStateId(1));
        worst = worst.max((got - (1.0 - 0.7f64.powi(k))).abs());
        if k <= 2 {
            first_two.push(got);
        }
    }
    let ok = worst <= 1e-12
        && (first_two[0] - 0.3).abs() <= 1e-12
        && (first_two[1] - 0.51).abs() <= 1e-12;
    check(
        ok,
        format!(
            "k=1 -> {:.12}, k=2 -> {:.12}, max |err| over k=1..20 = {worst:.1e}",
            first_two[0], first_two[1]
        ),
    )
}

fn a2() -> Outcome {
    let rm = Arc::new(gold_rm());
    let models = gold_models(rm.clone()).unwrap();
    let AbstractionModel::RmBelief(tdm) = &models.tdm else {
        unreachable!()
    };
    let cell = Cell::new(1, 2).index();
    let mut h = History::new(cell);
    let mut worst: f64 = 0.0;
    for _ in 1..=20 {
        h.push(Action::Dig.index(), cell);
        let b = tdm_predict(tdm.as_ref(), &h, rm.n_states()).map_err(|e| e.to_string())?;
        worst = worst.max((b.get(RmStateId(1)) - 0.3).abs());
    }
    check(
        worst <= 1e-12,
        format!("belief in u1 after 1..20 digs at (1,2) stays 0.3, max |err| = {worst:.1e}"),
    )
}

fn a3() -> Outcome {
    let task = GoldTask::new();
    let (optimum, _) = common::gold_optimal_return(&task.rm);
    let methods = [Method::Oracle, Method::Tdm, Method::Memory];
    let runs: Vec<(Method, u64)> = methods
        .iter()
        .flat_map(|&m| (0..8).map(move |s| (m, s)))
        .collect();
    let results: Vec<(Method, f64, Duration)> = std::thread::scope(|scope| {
        let workers = std::thread::available_parallelism()
            .map_or(4, |n| n.get())
            .min(runs.len());
        let chunks: Vec<Vec<(Method, u64)>> = (0..workers)
            .map(|w| runs.iter().copied().skip(w).step_by(workers).collect())
            .collect();
        let handles: Vec<_> = chunks
            .into_iter()
            .map(|chunk| {
                let task = &task;
                scope.spawn(move || {
                    chunk
                        .into_iter()
                        .map(|(m, seed)| {
                            let start = Instant::now();
                            let cfg = TrainConfig {
                                seed,
                                ..TrainConfig::default()
                            };
                            let (curve, _) = train_run(task, m, &cfg).expect("training runs");
                            assert_eq!(curve.points.len(), 100);
                            (m, curve.tail_mean(10), start.elapsed())
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().unwrap())
            .collect()
    });
    let mean = |m: Method| {
        results
            .iter()
            .filter(|r| r.0 == m)
            .map(|r| r.1)
            .sum::<f64>()
            / 8.0
    };
    let slowest = results.iter().map(|r| r.2).max().unwrap();
    let (oracle, tdm, memory) = (
        mean(Method::Oracle),
        mean(Method::Tdm),
        mean(Method::Memory),
    );
    let ok = (optimum - 0.82).abs() < 1e-12
        && oracle >= 0.80
        && (oracle - tdm).abs() <= 0.10
        && memory <= oracle - 0.15
        && slowest <= Duration::from_secs(600);
    check(
        ok,
        format!(
            "BFS optimum {optimum:.4}; mean final-10 return over 8 seeds: oracle {oracle:.4}, tdm {tdm:.4}, \
             memory {memory:.4}; slowest run {:.1}s",
            slowest.as_secs_f64()
        ),
    )
}

fn a4() -> Outcome {
    let env = gold_pomdp();
    let rm = gold_rm();
    let label = GoldLabeller::for_rm(&rm).unwrap();
    let product = build_product(&env, &rm, &label).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut compared = 0;
    let mut terminated = 0;
    for seed in 0..1000 {
        let actions: Vec<usize> = (0..50)
            .map(|_| rng.random_range(0..Action::COUNT))
            .collect();
        let (a, b) = paired_rollout(&env, &rm, &label, &product, &actions, seed)
            .map_err(|e| e.to_string())?;
        if a != b {
            return Err(format!("sequence {seed} diverged"));
        }
        compared += a.len();
        terminated += (a.len() < 50) as usize;
    }
    Ok(format!(
        "1000 sequences, {compared} rewards identical, {terminated} reached a terminal"
    ))
}

fn gold_wirings() -> Vec<(&'static str, NoisyRmEnv)> {
    let env = Arc::new(gold_pomdp());
    let rm = Arc::new(gold_rm());
    let label: Arc<dyn LabellingFunction> = Arc::new(GoldLabeller::for_rm(&rm).unwrap());
    let toy = gold_models(rm.clone()).unwrap();
    let models = vec![
        ("toy naive", toy.naive),
        ("toy ibu", toy.ibu),
        ("toy tdm", toy.tdm),
        (
            "exact classifier",
            exact_classifier(&env, label.clone()).unwrap(),
        ),
        (
            "exact distribution",
            exact_distribution(&env, &rm, label.clone()).unwrap(),
        ),
        (
            "exact rm belief",
            exact_rm_belief(&env, rm.clone(), label.clone()).unwrap(),
        ),
    ];
    models
        .into_iter()
        .map(|(name, model)| {
            (
                name,
                NoisyRmEnv {
                    env: env.clone(),
                    rm: rm.clone(),
                    label: label.clone(),
                    model,
                },
            )
        })
        .collect()
}

fn a5() -> Outcome {
    let wirings = gold_wirings();
    let reference = wirings[0]
        .1
        .product()
        .map_err(|e| e.to_string())?
        .fingerprint();
    for (name, w) in &wirings[1..] {
        if w.product().map_err(|e| e.to_string())?.fingerprint() != reference {
            return Err(format!("product differs under model `{name}`"));
        }
    }
    Ok(format!(
        "{} abstraction models, identical {}-word product fingerprints",
        wirings.len(),
        reference.len()
    ))
}

/// Replays a fixed sequence of classifier outputs.
struct Scripted(Vec<PropSet>);

impl PropClassifier for Scripted {
    fn classify(&self, h: &History) -> PropSet {
        if h.len() < 2 {
            PropSet::empty()
        } else {
            self.0[h.len() - 2]
        }
    }
}

/// A proposition distribution looked up by history.
struct Lookup(HashMap<History, f64>);

impl PropDistributionModel for Lookup {
    fn distribution(&self, h: &History) -> PropDist {
        let p = self.0.get(h).copied().unwrap_or(0.0);
        PropDist::from_pairs(
            1,
            &[(PropSet::empty(), 1.0 - p), (PropSet::singleton(0), p)],
        )
        .unwrap()
    }
}

fn persistent_product(variant: PersistentVariant) -> (Pomdp, RewardMachine, ProductPomdp) {
    let env = make_persistent(variant);
    let rm = persistent_rm();
    let product = build_product(&env, &rm, &persistent_label).unwrap();
    (env, rm, product)
}

fn a6() -> Outcome {
    // (a) fully observable environment with exact models.
    let env = gold_pomdp();
    let rm = Arc::new(gold_rm());
    let label: Arc<dyn LabellingFunction> = Arc::new(GoldLabeller::for_rm(&rm).unwrap());
    let naive_model = exact_classifier(&env, label.clone()).unwrap();
    let ibu_model = exact_distribution(&env, &rm, label).unwrap();
    let episodes = random_episodes(&rm, 100, DEFAULT_HORIZON, 99).map_err(|e| e.to_string())?;
    let mut steps = 0;
    for ep in &episodes {
        let obs = ep.history.observations();
        let mut naive = InferenceState::new(
            InferenceMethod::Naive,
            naive_model.clone(),
            rm.clone(),
            obs[0],
        )
        .unwrap();
        let mut ibu =
            InferenceState::new(InferenceMethod::Ibu, ibu_model.clone(), rm.clone(), obs[0])
                .unwrap();
        for (i, &u) in ep.true_states.iter().enumerate() {
            if i > 0 {
                let a = ep.history.actions()[i - 1];
                naive.observe(a, obs[i]).map_err(|e| e.to_string())?;
                ibu.observe(a, obs[i]).map_err(|e| e.to_string())?;
            }
            let dirac = Belief::dirac(rm.n_states(), u);
            if naive.belief() != &dirac || ibu.belief() != &dirac {
                return Err(format!("(a) mismatch at step {} of an episode", i + 1));
            }
            steps += 1;
        }
    }
    let part_a = format!("(a) {steps} steps over 100 episodes match the true u_t");

    // (b) uninformative persistent POMDP: every classifier output sequence.
    let (_, prm, product) = persistent_product(PersistentVariant::Uninformative);
    let prm = Arc::new(prm);
    let horizon = 6;
    let mut min_tv = f64::INFINITY;
    for bits in 0u32..(1 << (horizon - 1)) {
        let script: Vec<PropSet> = (0..horizon - 1)
            .map(|i| PropSet::from_bits((bits >> i) & 1))
            .collect();
        let model = AbstractionModel::Classifier(Arc::new(Scripted(script)));
        let mut naive =
            InferenceState::new(InferenceMethod::Naive, model, prm.clone(), OBS_O).unwrap();
        let mut h = History::new(OBS_O);
        for t in 2..=horizon {
            h.push(0, OBS_O);
            let b = naive.observe(0, OBS_O).map_err(|e| e.to_string())?.clone();
            let exact = exact_filter(&product, &h).map_err(|e| e.to_string())?;
            if (exact.get(RmStateId(1)) - 0.5).abs() > 1e-12 {
                return Err(format!(
                    "(b) exact filter gives {} at t={t}",
                    exact.get(RmStateId(1))
                ));
            }
            if b.as_dirac().is_none() {
                return Err("(b) naive belief is not a Dirac".into());
            }
            min_tv = min_tv.min(b.total_variation(&exact));
        }
    }
    if min_tv < 0.5 {
        return Err(format!("(b) total variation {min_tv} < 0.5"));
    }
    let part_b = format!("(b) exact 0.5 for t=2..{horizon}, naive Dirac, min TV {min_tv}");

    // (c) revealing variant, history (o, o, o^(1)). Models are random except
    // that the t=2 output is the one consistency forces.
    let (_, prm, product) = persistent_product(PersistentVariant::Revealing);
    let prm = Arc::new(prm);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut min_u3: f64 = 1.0;
    let mut exact_u3: f64 = 0.0;
    for _ in 0..100 {
        let (a1, a2) = (rng.random_range(0..2), rng.random_range(0..2));
        let h3 = History::from_parts(vec![OBS_O, OBS_O, reveal(1)], vec![a1, a2]).unwrap();
        let h2 = h3.prefix(2);
        let exact2 = exact_filter(&product, &h2).map_err(|e| e.to_string())?;
        let table = HashMap::from([
            (h2.clone(), exact2.get(RmStateId(1))),
            (h3.clone(), rng.random::<f64>()),
        ]);
        let model = AbstractionModel::Distribution(Arc::new(Lookup(table)));
        let mut ibu = InferenceState::new(InferenceMethod::Ibu, model, prm.clone(), OBS_O).unwrap();
        let u2 = ibu.observe(a1, OBS_O).map_err(|e| e.to_string())?.clone();
        if (u2.get(RmStateId(1)) - 0.5).abs() > 1e-12 {
            return Err("(c) the t=2 belief is not the consistent one".into());
        }
        let u3 = ibu.observe(a2, reveal(1)).map_err(|e| e.to_string())?;
        min_u3 = min_u3.min(u3.get(RmStateId(1)));
        exact_u3 = exact_u3.max(
            exact_filter(&product, &h3)
                .map_err(|e| e.to_string())?
                .get(RmStateId(1)),
        );
    }
    let part_c = format!("(c) min IBU u3[u1] over 100 models {min_u3:.4}, exact {exact_u3}");
    check(
        min_u3 >= 0.5 && exact_u3 == 0.0,
        format!("{part_a}; {part_b}; {part_c}"),
    )
}

fn a7() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for variant in [
        PersistentVariant::Uninformative,
        PersistentVariant::Revealing,
    ] {
        let (env, rm, product) = persistent_product(variant);
        for t in 1..=5usize {
            let n_obs = 3usize.pow(t as u32);
            for acts in 0..(1usize << (t - 1)) {
                let actions: Vec<usize> = (0..t - 1).map(|i| (acts >> i) & 1).collect();
                for code in 0..n_obs {
                    let obs: Vec<usize> =
                        (0..t).map(|i| (code / 3usize.pow(i as u32)) % 3).collect();
                    let brute =
                        common::brute_force_posterior(&env, &rm, &persistent_label, &obs, &actions);
                    let h = History::from_parts(obs, actions.clone()).unwrap();
                    match (brute, exact_filter(&product, &h)) {
                        (None, Err(_)) => {}
                        (Some(p), Ok(b)) => {
                            for (x, y) in p.iter().zip(b.probs()) {
                                worst = worst.max((x - y).abs());
                            }
                            checked += 1;
                        }
                        (brute, filt) => {
                            return Err(format!(
                                "{variant} disagreement on possibility: {brute:?} vs {filt:?}"
                            ))
                        }
                    }
                }
            }
        }
        // The exact filter as a TDM model reproduces the posterior verbatim.
        let model = ExactFilterModel::new(Arc::new(product));
        let h = History::from_parts(vec![OBS_O, OBS_O], vec![1]).unwrap();
        let b = tdm_predict(&model, &h, rm.n_states()).map_err(|e| e.to_string())?;
        worst = worst.max((b.get(RmStateId(1)) - 0.5).abs());
    }
    check(
        worst <= 1e-9,
        format!("{checked} possible histories up to t=5, max |err| = {worst:.1e}"),
    )
}

fn a8() -> Outcome {
    let rm = Arc::new(gold_rm());
    let models = gold_models(rm.clone()).unwrap();
    let episodes = random_episodes(&rm, 200, DEFAULT_HORIZON, 7).map_err(|e| e.to_string())?;
    let mut ll = HashMap::new();
    for (m, model) in [
        (InferenceMethod::Naive, &models.naive),
        (InferenceMethod::Ibu, &models.ibu),
        (InferenceMethod::Tdm, &models.tdm),
    ] {
        let (row, _) =
            score_episodes(m.name(), m, model, &rm, &episodes).map_err(|e| e.to_string())?;
        ll.insert(m, row.mean_loglik);
    }
    let (n, i, t) = (
        ll[&InferenceMethod::Naive],
        ll[&InferenceMethod::Ibu],
        ll[&InferenceMethod::Tdm],
    );
    check(
        t >= i && t >= n,
        format!("mean log-likelihood over 200 episodes: naive {n:.4}, ibu {i:.4}, tdm {t:.4}"),
    )
}

fn a9() -> Outcome {
    let load = |name: &str| {
        std::fs::read_to_string(format!("{}/rms/{name}", env!("CARGO_MANIFEST_DIR"))).unwrap()
    };
    let gold = RewardMachine::from_text(&load("gold.rm")).map_err(|e| format!("gold.rm: {e}"))?;
    let traffic =
        RewardMachine::from_text(&load("traffic.rm")).map_err(|e| format!("traffic.rm: {e}"))?;
    let broken = match RewardMachine::from_text(&load("broken.rm")) {
        Err(e @ RmError::Nondeterministic { .. }) => e.to_string(),
        other => {
            return Err(format!(
                "broken.rm not rejected as nondeterministic: {other:?}"
            ))
        }
    };
    if !broken.contains("{home}") {
        return Err(format!("diagnostic does not name the assignment: {broken}"));
    }
    for rm in [&gold, &traffic, &persistent_rm()] {
        let again = RewardMachine::from_text(&rm.to_text()).map_err(|e| e.to_string())?;
        if again.table() != rm.table() || again.spec().states != rm.spec().states {
            return Err("round trip changed the transition table".into());
        }
    }
    Ok(format!(
        "gold {} states, traffic {} states, broken rejected ({broken}), round trips table-identical",
        gold.n_states(),
        traffic.n_states()
    ))
}

fn a10() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst_grad: f64 = 0.0;
    let mut worst_lin: f64 = 0.0;
    let params = [
        Parameterization::Oracle,
        Parameterization::MemoryOnly,
        Parameterization::BeliefConditioned,
    ];
    for case in 0..1000 {
        let param = params[case % 3];
        let mut q = LinearQ::new(param, 16, 2, Action::COUNT);
        for w in q.weights_mut() {
            *w = rng.random_range(-2.0..2.0);
        }
        let mut mem = MemoryFlags::new();
        for i in 0..N_MEMORY {
            if rng.random_bool(0.5) {
                mem.set(i);
            }
        }
        let raw: Vec<f64> = (0..3).map(|_| rng.random::<f64>()).collect();
        let z: f64 = raw.iter().sum();
        let belief: Vec<f64> = raw.iter().map(|x| x / z).collect();
        let loc = rng.random_range(0..16);
        let input = match param {
            Parameterization::Oracle => QInput::Oracle {
                loc,
                u: rng.random_range(0..2),
            },
            Parameterization::MemoryOnly => QInput::Memory { loc, mem: &mem },
            Parameterization::BeliefConditioned => QInput::Belief {
                loc,
                belief: &belief,
                mem: &mem,
            },
        };
        let a = rng.random_range(0..Action::COUNT);
        let mut grad = vec![0.0; q.weights().len()];
        for (i, v) in q.features(&input, a).unwrap() {
            grad[i] += v;
        }
        let h = 1e-3;
        for (i, g) in grad.iter().enumerate() {
            let w0 = q.weights()[i];
            q.weights_mut()[i] = w0 + h;
            let up = q.q_value(&input, a).unwrap();
            q.weights_mut()[i] = w0 - h;
            let down = q.q_value(&input, a).unwrap();
            q.weights_mut()[i] = w0;
            let fd = (up - down) / (2.0 * h);
            worst_grad = worst_grad.max((fd - g).abs() / g.abs().max(1.0));
        }
        if param == Parameterization::BeliefConditioned {
            let direct = q.q_value(&input, a).unwrap();
            let mut mix = 0.0;
            for (u, &bu) in belief.iter().enumerate() {
                let dirac = Belief::dirac(3, RmStateId(u)).into_probs();
                mix += bu
                    * q.q_value(
                        &QInput::Belief {
                            loc,
                            belief: &dirac,
                            mem: &mem,
                        },
                        a,
                    )
                    .unwrap();
            }
            worst_lin = worst_lin.max((direct - mix).abs());
        }
    }
    check(
        worst_grad <= 1e-6 && worst_lin <= 1e-12,
        format!(
            "1000 cases: max gradient rel. err {worst_grad:.1e}, max linearity err {worst_lin:.1e}"
        ),
    )
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("A1", a1, Duration::from_secs(1)),
        ("A2", a2, Duration::from_secs(1)),
        ("A3", a3, Duration::from_secs(40 * 600)),
        ("A4", a4, Duration::from_secs(10)),
        ("A5", a5, Duration::from_secs(1)),
        ("A6", a6, Duration::from_secs(30)),
        ("A7", a7, Duration::from_secs(5)),
        ("A8", a8, Duration::from_secs(30)),
        ("A9", a9, Duration::from_secs(1)),
        ("A10", a10, Duration::from_secs(5)),
    ];
    let only: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| a.starts_with('A'))
        .collect();
    let mut failed = 0;
    for (id, f, budget) in criteria {
        if !only.is_empty() && !only.iter().any(|o| o == id) {
            continue;
        }
        let start = Instant::now();
        let result = f();
        let elapsed = start.elapsed();
        let (status, detail) = match result {
            Ok(d) if elapsed <= budget => ("PASS", d),
            Ok(d) => (
                "FAIL",
                format!("{d}; over the {:.0}s budget", budget.as_secs_f64()),
            ),
            Err(d) => ("FAIL", d),
        };
        if status == "FAIL" {
            failed += 1;
        }
        println!("{id:<3} {status} [{:.2}s] {detail}", elapsed.as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
