//! Reference computations shared by the integration tests. They rely only
//! on the environment and RM definitions, never on the product or the
//! filter under test.
#![allow(dead_code)]

use std::collections::VecDeque;

use noisy_rm::abstraction::LabellingFunction;
use noisy_rm::envs::gold::{gold_step, Action, Cell, GoldLabeller, MOVE_PENALTY, N_CELLS, START};
use noisy_rm::product::Pomdp;
use noisy_rm::rm::{RewardMachine, RmStateId};

/// Best undiscounted Gold Mining return and an action sequence achieving it,
/// by 0-1 BFS over (cell, RM state) where moves cost 1 and digs cost 0.
pub fn gold_optimal_return(rm: &RewardMachine) -> (f64, Vec<Action>) {
    let label = GoldLabeller::for_rm(rm).unwrap();
    let n_u = rm.n_states();
    let key = |c: Cell, u: RmStateId| c.index() * n_u + u.0;
    let mut dist = vec![usize::MAX; N_CELLS * n_u];
    let mut back: Vec<Option<(usize, Action)>> = vec![None; N_CELLS * n_u];
    let mut queue = VecDeque::new();
    let start = key(START, rm.initial());
    dist[start] = 0;
    queue.push_back((START, rm.initial()));
    let mut best: Option<(usize, usize, Action, f64)> = None;
    while let Some((c, u)) = queue.pop_front() {
        let d = dist[key(c, u)];
        for a in Action::ALL {
            let (next, _) = gold_step(c, a);
            let (u2, r) = rm.step(u, label.label_cells(c, a, next)).unwrap();
            let cost = a.is_move() as usize;
            if rm.is_terminal(u2) {
                let ret = r - MOVE_PENALTY * (d + cost) as f64;
                if best.is_none_or(|b| ret > b.3) {
                    best = Some((key(c, u), d + cost, a, ret));
                }
                continue;
            }
            let k = key(next, u2);
            if d + cost < dist[k] {
                dist[k] = d + cost;
                back[k] = Some((key(c, u), a));
                if cost == 0 {
                    queue.push_front((next, u2));
                } else {
                    queue.push_back((next, u2));
                }
            }
        }
    }
    let (mut k, _, last, ret) = best.expect("a terminating path exists");
    let mut actions = vec![last];
    while let Some((prev, a)) = back[k] {
        actions.push(a);
        k = prev;
    }
    actions.reverse();
    (ret, actions)
}

/// `Pr(u_t | h_t)` by summing over every environment state sequence,
/// weighted by initial, transition and observation likelihoods. Returns
/// `None` when the history has zero probability.
pub fn brute_force_posterior(
    env: &Pomdp,
    rm: &RewardMachine,
    label: &dyn LabellingFunction,
    observations: &[usize],
    actions: &[usize],
) -> Option<Vec<f64>> {
    let n = env.n_states();
    let t = observations.len();
    let mut out = vec![0.0; rm.n_states()];
    let mut seq = vec![0usize; t];
    loop {
        let mut w = env.initial().prob(seq[0]) * env.observe(seq[0], None).prob(observations[0]);
        for k in 1..t {
            if w == 0.0 {
                break;
            }
            let p: f64 = env
                .transition(seq[k - 1], actions[k - 1])
                .iter()
                .filter(|o| o.next == seq[k])
                .map(|o| o.prob)
                .sum();
            w *= p * env
                .observe(seq[k], Some(actions[k - 1]))
                .prob(observations[k]);
        }
        if w > 0.0 {
            let sigmas = (1..t).map(|k| label.label(seq[k - 1], actions[k - 1], seq[k]));
            let (states, _) = rm.run(sigmas).unwrap();
            out[states.last().unwrap().0] += w;
        }
        // Odometer increment over S^t.
        let mut i = 0;
        loop {
            if i == t {
                let z: f64 = out.iter().sum();
                return (z > 0.0).then(|| out.iter().map(|p| p / z).collect());
            }
            seq[i] += 1;
            if seq[i] < n {
                break;
            }
            seq[i] = 0;
            i += 1;
        }
    }
}
