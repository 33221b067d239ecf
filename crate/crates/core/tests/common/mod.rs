//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use qinit::envsim::{Action, EnvConfig, Environment, InitialStatePrep, Level, Strength};
use qinit::nn::{dense_layer_ns, latency_report, LoopConstants, NetTopology, ObservationWindow, PolicyNet};
use qinit::ppo::{compute_rewards, gae_advantages, ppo_loss_grad, rewards_from_signals, Critic, PpoHyperparams, RewardConfig, Transition};
use qinit::readout::FilterWeights;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = Result<(), String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Check {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Every layer as a dense matrix over `[previous outputs, memory, fresh]`,
/// zero where the streaming schedule does not connect.
pub fn flat_logits(net: &PolicyNet, w: &ObservationWindow) -> Vec<f64> {
    let t = net.topology();
    let raw: Vec<f64> = w.memory.iter().chain(&w.fresh).copied().collect();
    let m = w.memory.len();
    let nd = t.n_downsampled();
    let half = t.inputs_per_layer / 2;
    let mut h: Vec<f64> = Vec::new();
    let mut z = Vec::new();
    for (i, l) in net.layout().iter().enumerate() {
        let (kernel, bias) = net.layer(i);
        let n_prev = h.len();
        let cols = n_prev + raw.len();
        let mut dense = vec![0.0; l.n_out * cols];
        for o in 0..l.n_out {
            let row = &kernel[o * l.n_in..(o + 1) * l.n_in];
            let d = &mut dense[o * cols..(o + 1) * cols];
            if i == 0 {
                d[n_prev..n_prev + m].copy_from_slice(row);
                continue;
            }
            d[..n_prev].copy_from_slice(&row[..n_prev]);
            if i >= t.preproc_layers {
                let k = i - t.preproc_layers;
                for j in 0..half {
                    d[n_prev + m + k * half + j] = row[n_prev + j];
                    d[n_prev + m + nd + k * half + j] = row[n_prev + half + j];
                }
            }
        }
        let x: Vec<f64> = h.iter().chain(&raw).copied().collect();
        z = (0..l.n_out).map(|o| bias[o] + (0..cols).map(|c| dense[o * cols + c] * x[c]).sum::<f64>()).collect();
        h = z.iter().map(|v| if *v > 0.0 { *v } else { 0.0 }).collect();
    }
    z
}

/// Adder-tree depth by explicit radix-4 reduction of `n` inputs plus bias.
pub fn tree_stages(n: usize) -> u32 {
    let mut items = n + 1;
    let mut stages = 0;
    while items > 1 {
        items = items.div_ceil(4);
        stages += 1;
    }
    stages
}

/// GAE as explicit discounted sums of TD errors up to the episode end.
pub fn brute_gae(r: &[f64], v: &[f64], done: &[bool], gamma: f64, lam: f64) -> Vec<f64> {
    let n = r.len();
    (0..n)
        .map(|t| {
            let mut end = t;
            while !done[end] {
                end += 1;
            }
            let delta = |s: usize| r[s] + if s == end { 0.0 } else { gamma * v[s + 1] } - v[s];
            (t..=end).map(|s| (gamma * lam).powi((s - t) as i32) * delta(s)).sum()
        })
        .collect()
}


/// Per-layer latency of every fan-in in `1..=256` against the adder tree,
/// the steps at `N + 1 = 4^k`, and the default 32/48 ns figures.
pub fn check_latency() -> Check {
    for n in 1..=256 {
        let want = 8.0 * f64::from(1 + tree_stages(n));
        ensure(dense_layer_ns(n, 8.0) == want, || format!("N = {n}: {} vs {want}", dense_layer_ns(n, 8.0)))?;
    }
    for k in 1..=4u32 {
        let n = 4usize.pow(k) - 1;
        ensure(dense_layer_ns(n, 8.0) < dense_layer_ns(n + 1, 8.0), || format!("no step after N + 1 = 4^{k}"))?;
        ensure(dense_layer_ns(n, 8.0) == dense_layer_ns(n - 1, 8.0), || format!("step before N + 1 = 4^{k}"))?;
    }
    let r = latency_report(&NetTopology::default(), &LoopConstants::default());
    ensure((r.per_layer_ns, r.total_nn_ns) == (32.0, 48.0), || format!("default {} / {}", r.per_layer_ns, r.total_nn_ns))
}

/// Random valid topology, small enough for the dense reference.
pub fn random_topology<R: Rng>(rng: &mut R) -> NetTopology {
    let bw = rng.random_range(1..6);
    let nh = rng.random_range(1..8);
    let ipl_half = rng.random_range(1..=3);
    let len = bw * (nh + 1) * ipl_half;
    NetTopology {
        n_hidden_layers: nh,
        hidden_width: rng.random_range(1..16),
        inputs_per_layer: 2 * ipl_half,
        preproc_layers: rng.random_range(1..3),
        preproc_width: rng.random_range(1..12),
        memory_depth: rng.random_range(0..=3),
        n_actions: rng.random_range(2..=4),
        boxcar_width: bw,
        memory_boxcar_width: rng.random_range(1..=len.min(32)),
        readout_len: len,
    }
}

/// Streaming forward pass against [`flat_logits`]; returns the largest
/// relative deviation.
pub fn streaming_deviation(t: &NetTopology, seed: u64, gain: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = PolicyNet::random(t.clone(), gain, &mut rng).unwrap();
    for b in net.params_mut().iter_mut() {
        if *b == 0.0 {
            *b = rng.random::<f64>() - 0.5;
        }
    }
    let w = ObservationWindow {
        memory: (0..t.memory_len()).map(|_| 4.0 * rng.random::<f64>() - 2.0).collect(),
        fresh: (0..t.fresh_len()).map(|_| 4.0 * rng.random::<f64>() - 2.0).collect(),
    };
    let got = net.forward_cached(&w).unwrap();
    let logits = flat_logits(&net, &w);
    let scale = logits.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    got.logits.iter().zip(&logits).map(|(a, b)| (a - b).abs() / scale).fold(0.0, f64::max)
}

/// Exact telescoping on dyadic signals, where every partial sum is
/// representable.
pub fn check_dyadic_telescoping(episodes: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..episodes {
        let n = rng.random_range(1..=25);
        let us: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(-64i32..64)) / 32.0).collect();
        let u_ver = f64::from(rng.random_range(-64i32..64)) / 32.0;
        let lambda = f64::from(rng.random_range(0..16)) / 64.0;
        let rc = RewardConfig { lambda_penalty: lambda, u_g: 0.0, u_e: 1.0 };
        let r = rewards_from_signals(&us, u_ver, &rc);
        ensure(r.len() == n, || format!("{} rewards for {n} cycles", r.len()))?;
        let total: f64 = r.iter().sum();
        let want = (u_ver - us[0]) / -1.0 - n as f64 * lambda;
        ensure(total == want, || format!("{total} vs {want}"))?;
    }
    Ok(())
}

/// Telescoping on simulated episodes under a random policy.
pub fn check_simulated_telescoping(episodes: u64) -> Check {
    let env = Environment::new(EnvConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let g = env.mean_trace(Level::G).clone();
    let e = env.mean_trace(Level::E).clone();
    let weights = FilterWeights::from_mean_traces(&g, &e).unwrap();
    let u_g = weights.integrate_iq(&g.i, &g.q).unwrap();
    let u_e = weights.integrate_iq(&e.i, &e.q).unwrap();
    let rc = RewardConfig { lambda_penalty: 0.03, u_g, u_e };
    for k in 0..episodes {
        let prep = if k % 2 == 0 { InitialStatePrep::Equilibrium } else { InitialStatePrep::Inverted };
        let mut policy_rng = ChaCha8Rng::seed_from_u64(k);
        let ep = env
            .run_episode(
                &mut |_view| match policy_rng.random_range(0..4) {
                    0 => Action::Terminate,
                    1 => Action::Flip,
                    _ => Action::Idle,
                },
                prep,
                Strength::Strong,
                50,
                &mut rng,
            )
            .unwrap();
        let r = compute_rewards(&ep, &rc, &weights).unwrap();
        let u1 = weights.integrate(&ep.steps[0].trace).unwrap();
        let uv = weights.integrate(&ep.verification).unwrap();
        let want = (uv - u1) / (u_g - u_e) - ep.n_cycles() as f64 * rc.lambda_penalty;
        let total: f64 = r.iter().sum();
        ensure((total - want).abs() <= 1e-12 * (1.0 + want.abs()), || format!("episode {k}: {total} vs {want}"))?;
    }
    Ok(())
}

/// [`gae_advantages`] against [`brute_gae`]; returns the largest deviation.
pub fn gae_deviation(trials: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let n = rng.random_range(1..60);
        let r: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let mut done: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.25).collect();
        done[n - 1] = true;
        let (gamma, lam) = (rng.random::<f64>(), rng.random::<f64>());
        let (adv, ret) = gae_advantages(&r, &v, &done, gamma, lam);
        let want = brute_gae(&r, &v, &done, gamma, lam);
        for t in 0..n {
            worst = worst.max((adv[t] - want[t]).abs()).max((ret[t] - want[t] - v[t]).abs());
        }
    }
    worst
}

fn toy_topology() -> NetTopology {
    NetTopology {
        n_hidden_layers: 2,
        hidden_width: 5,
        inputs_per_layer: 4,
        preproc_layers: 1,
        preproc_width: 3,
        memory_depth: 1,
        n_actions: 3,
        boxcar_width: 2,
        memory_boxcar_width: 6,
        readout_len: 12,
    }
}

pub struct ToyProblem {
    pub policy: PolicyNet,
    pub critic: Critic,
    pub steps: Vec<Transition>,
    pub adv: Vec<f64>,
    pub ret: Vec<f64>,
    pub hp: PpoHyperparams,
}

pub fn toy_problem(seed: u64) -> ToyProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = toy_topology();
    let mut policy = PolicyNet::random(t.clone(), 1.0, &mut rng).unwrap();
    for p in policy.params_mut() {
        *p += 0.05 * (rng.random::<f64>() - 0.5);
    }
    let mut steps = Vec::new();
    for k in 0..24 {
        let window = ObservationWindow {
            memory: (0..t.memory_len()).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect(),
            fresh: (0..t.fresh_len()).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect(),
        };
        let p = policy.forward(&window).unwrap();
        let action = rng.random_range(0..3);
        // ratios on both sides of the clip range, away from its kinks
        let shift = loop {
            let s = 0.3 * (rng.random::<f64>() - 0.5);
            let ratio = (-s as f64).exp();
            if (ratio - 0.9).abs() > 0.01 && (ratio - 1.1).abs() > 0.01 {
                break s;
            }
        };
        let logp = p[action].ln() + shift;
        steps.push(Transition { window, action, logp, reward: 0.0, done: k % 5 == 4 });
    }
    let critic = Critic::random(steps[0].window.flat().len(), 6, &mut rng);
    let adv = (0..steps.len()).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    let ret = (0..steps.len()).map(|_| rng.random::<f64>()).collect();
    let hp = PpoHyperparams { cliprange: 0.1, ent_coef: 0.05, vf_coef: 0.5, ..Default::default() };
    ToyProblem { policy, critic, steps, adv, ret, hp }
}

fn rel_dev(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Largest relative deviation between the analytic loss gradient and
/// central differences, over policy and critic parameters.
pub fn gradient_deviation(seed: u64) -> f64 {
    let ToyProblem { policy, critic, steps, adv, ret, hp } = toy_problem(seed);
    let g = ppo_loss_grad(&policy, &critic, &steps, &adv, &ret, &hp).unwrap();
    let h = 1e-6;
    let loss = |p: &PolicyNet, c: &Critic| ppo_loss_grad(p, c, &steps, &adv, &ret, &hp).unwrap().loss;
    let mut worst = 0.0f64;
    for k in 0..policy.n_params() {
        let mut plus = policy.params().to_vec();
        let mut minus = plus.clone();
        plus[k] += h;
        minus[k] -= h;
        let at = |theta| PolicyNet::from_params(policy.topology().clone(), theta).unwrap();
        let fd = (loss(&at(plus), &critic) - loss(&at(minus), &critic)) / (2.0 * h);
        worst = worst.max(rel_dev(fd, g.grad_policy[k]));
    }
    for k in 0..critic.theta.len() {
        let mut plus = critic.clone();
        let mut minus = critic.clone();
        plus.theta[k] += h;
        minus.theta[k] -= h;
        let fd = (loss(&policy, &plus) - loss(&policy, &minus)) / (2.0 * h);
        worst = worst.max(rel_dev(fd, g.grad_critic[k]));
    }
    worst
}
