//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use bellman_calib::mdp::{Action, Policy, RecordQ, State, TabularMDP, TransitionDataset};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn simplex(rng: &mut impl Rng, k: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 0.05).collect();
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

/// Dense random MDP with every transition and initial probability positive.
pub fn random_mdp(rng: &mut impl Rng, ns: usize, na: usize, gamma: f64) -> TabularMDP {
    let mut transition = Vec::with_capacity(ns * na * ns);
    for _ in 0..ns * na {
        transition.extend(simplex(rng, ns));
    }
    let reward = (0..ns * na).map(|_| rng.random::<f64>()).collect();
    TabularMDP::new(ns, na, transition, reward, simplex(rng, ns), gamma).unwrap()
}

/// Random stochastic policy with full support.
pub fn random_policy(rng: &mut impl Rng, ns: usize, na: usize) -> Policy {
    let probs = (0..ns).flat_map(|_| simplex(rng, na)).collect();
    Policy::from_table(ns, na, probs).unwrap()
}

/// `P_pi(s, s')` by direct summation.
pub fn state_chain(mdp: &TabularMDP, pi: &Policy) -> Vec<Vec<f64>> {
    let ns = mdp.n_states();
    (0..ns)
        .map(|s| {
            let mut row = vec![0.0; ns];
            for a in 0..mdp.n_actions() {
                let p = pi.prob(a as Action, s as State);
                for (t, q) in mdp.transition_row(s as State, a as Action).iter().enumerate() {
                    row[t] += p * q;
                }
            }
            row
        })
        .collect()
}

/// Stationary law by power iteration.
pub fn stationary(chain: &[Vec<f64>]) -> Vec<f64> {
    let n = chain.len();
    let mut v = vec![1.0 / n as f64; n];
    for _ in 0..20_000 {
        let mut next = vec![0.0; n];
        for (s, row) in chain.iter().enumerate() {
            for (t, p) in row.iter().enumerate() {
                next[t] += v[s] * p;
            }
        }
        let diff: f64 = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).sum();
        v = next;
        if diff < 1e-16 {
            break;
        }
    }
    v
}

/// Weighted least-squares isotonic fit by exhaustive search over the
/// `2^(n-1)` contiguous partitions of `x`-sorted data; keeps partitions whose
/// block means are non-decreasing. Returns the optimal objective.
pub fn exhaustive_isotonic(y: &[f64], w: &[f64]) -> f64 {
    let n = y.len();
    let mut best = f64::INFINITY;
    for mask in 0u32..(1u32 << (n - 1)) {
        let mut means = Vec::new();
        let mut sse = 0.0;
        let mut start = 0;
        for end in 1..=n {
            if end == n || mask & (1 << (end - 1)) != 0 {
                let sw: f64 = w[start..end].iter().sum();
                let m = if sw > 0.0 {
                    (start..end).map(|i| w[i] * y[i]).sum::<f64>() / sw
                } else {
                    means.last().copied().unwrap_or(0.0)
                };
                sse += (start..end).map(|i| w[i] * (y[i] - m).powi(2)).sum::<f64>();
                means.push(m);
                start = end;
            }
        }
        if means.windows(2).all(|p| p[0] <= p[1] + 1e-15) {
            best = best.min(sse);
        }
    }
    best
}

/// Plain pool-adjacent-violators on already sorted, tie-free data.
/// Returns `(first index, weight, mean)` per block.
pub fn simple_pava(y: &[f64], w: &[f64]) -> Vec<(usize, f64, f64)> {
    let mut blocks: Vec<(usize, f64, f64)> = Vec::new();
    for i in 0..y.len() {
        blocks.push((i, w[i], y[i]));
        while blocks.len() > 1 {
            let (s1, w1, m1) = blocks[blocks.len() - 2];
            let (_, w2, m2) = blocks[blocks.len() - 1];
            if m1 <= m2 {
                break;
            }
            blocks.pop();
            let wt = w1 + w2;
            *blocks.last_mut().unwrap() = (s1, wt, (w1 * m1 + w2 * m2) / wt);
        }
    }
    blocks
}

/// `Y0 + gamma V(q)(S1) - q(A0, S0)` per record.
pub fn bellman_residuals<Q: RecordQ + ?Sized>(data: &TransitionDataset, pi: &Policy, q: &Q, gamma: f64) -> Vec<f64> {
    data.records()
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let v: f64 = (0..pi.n_actions())
                .map(|a| pi.prob(a as Action, r.s1) * q.value_for(i, a as Action, r.s1))
                .sum();
            r.y0 + gamma * v - q.value_for(i, r.a0, r.s0)
        })
        .collect()
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

pub fn sd(x: &[f64]) -> f64 {
    let m = mean(x);
    (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64).sqrt()
}

/// One line per acceptance criterion.
pub fn report(id: u32, pass: bool, what: &str, detail: String) -> bool {
    // straight to the handle so the line shows without --nocapture
    let line = format!("criterion {id} {}: {what}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    std::io::Write::write_all(&mut std::io::stderr(), line.as_bytes()).ok();
    pass
}
