//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line.
//!
//! Lines go straight to the stderr handle so they show up even when the
//! harness captures test output.

use std::io::Write;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use saferl_bridge::{serve, CommandMessage, Controller, PoseMessage};
use saferl_core::cbf::{activated_instance, barrier_value, oracle_solve, qp_check, solve_safe_control};
use saferl_core::config::RunConfig;
use saferl_core::env::{Observation, World};
use saferl_core::eval::FrozenPolicy;
use saferl_core::integration::{decay_beta, resolve_action, Mode, ModeConfig};
use saferl_core::nn::Activation;
use saferl_core::sac::{Batch, Sac, SacConfig, Transition};
use saferl_core::train::{train_run, LogRow};
use saferl_core::{CbfParams, Control, UnicycleState};
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::{TcpListener, TcpStream};

fn report(n: u32, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "[acceptance] criterion {n:>2} {name}: {verdict} ({detail})");
    assert!(pass, "criterion {n} ({name}) failed: {detail}");
}

#[test]
fn c01_qp_oracle_equivalence() {
    let r = qp_check(1000, 2024, false);
    let pass = r.max_gap <= 1e-6 && r.min_residual >= -1e-9 && r.seconds < 10.0;
    report(
        1,
        "qp-oracle equivalence",
        pass,
        &format!(
            "1000 instances, max |gap| {:.2e} <= 1e-6, min residual {:.2e} >= -1e-9, {:.2} s < 10 s",
            r.max_gap, r.min_residual, r.seconds
        ),
    );
}

#[test]
fn c02_hand_solved_instance() {
    let p = CbfParams::with_obstacle([0.0, 0.0]);
    let s = UnicycleState::new(0.0, 0.46, 0.0);
    let u = solve_safe_control(&s, Control::new(0.2, 0.0), &p).control;
    let o = oracle_solve(&s, Control::new(0.2, 0.0), &p, 1e-5);
    let pass = (u.v - 0.2).abs() <= 1e-3 && (u.omega - 0.3457).abs() <= 1e-3 && (o.omega - 0.3457).abs() <= 1e-3;
    report(
        2,
        "hand-solved qp",
        pass,
        &format!("(v, omega) = ({:.6}, {:.6}), oracle omega {:.6}, target (0.2, 0.3457) +- 1e-3", u.v, u.omega, o.omega),
    );
}

#[test]
fn c03_safety_invariance_under_filter() {
    let cfg = RunConfig::default();
    let mode = ModeConfig::new(Mode::Filter, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut collisions, mut steps, mut min_dist) = (0usize, 0usize, f64::INFINITY);
    for _ in 0..100 {
        let (mut world, _) = World::reset(&cfg.world, Some(cfg.keep_out()), &mut rng).unwrap();
        let params = cfg.cbf_params(world.obstacle);
        // a fixed 1000 steps per episode, driving on past the goal
        for _ in 0..1000 {
            let w = rng.random_range(-0.7..=0.7);
            let res = resolve_action(&mode, &world.agent, w, &params, 0);
            let r = world.step(res.executed, &cfg.world);
            collisions += usize::from(r.info.obstacle_distance < 0.4);
            min_dist = min_dist.min(r.info.obstacle_distance);
            steps += 1;
        }
    }
    report(
        3,
        "safety invariance",
        collisions == 0,
        &format!("{collisions} of {steps} steps closer than 0.4 m, closest {min_dist:.4} m"),
    );
}

#[test]
fn c04_pass_through() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let p0 = CbfParams::with_obstacle([0.0, 0.0]);
    let mut checked = 0;
    let mut mismatches = 0;
    while checked < 10_000 {
        let p = CbfParams::with_obstacle([rng.random_range(-0.75..0.75), rng.random_range(-0.75..0.75)]);
        let s = UnicycleState::new(
            rng.random_range(-0.75..0.75),
            rng.random_range(-0.75..0.75),
            rng.random_range(-3.2..3.2),
        );
        if barrier_value(&s, &p) <= 0.0 {
            continue;
        }
        checked += 1;
        let w: f64 = rng.random_range(-0.7..=0.7);
        let out = solve_safe_control(&s, Control::new(p0.v_des, w), &p);
        let res = resolve_action(&ModeConfig::new(Mode::Filter, 1), &s, w, &p, 0);
        let same = |c: Control| c.v.to_bits() == 0.2f64.to_bits() && c.omega.to_bits() == w.to_bits();
        if !(same(out.control) && same(res.executed) && !out.active) {
            mismatches += 1;
        }
    }
    report(4, "pass-through", mismatches == 0, &format!("{mismatches} of {checked} h > 0 states altered"));
}

fn grad_cfg() -> SacConfig {
    SacConfig {
        hidden: vec![16, 16],
        activation: Activation::Tanh,
        batch_size: 8,
        buffer_capacity: 64,
        init_alpha: 0.3,
        ..Default::default()
    }
}

fn random_batch(rng: &mut ChaCha8Rng) -> Batch<f64> {
    let ts: Vec<Transition<f64>> = (0..8)
        .map(|_| Transition {
            obs: std::array::from_fn(|_| rng.random_range(-1.5..1.5)),
            action: rng.random_range(-0.7..0.7),
            pre_squash: 0.0,
            reward: rng.random_range(-10.0..10.0),
            next_obs: std::array::from_fn(|_| rng.random_range(-1.5..1.5)),
            terminated: rng.random_bool(0.2),
        })
        .collect();
    Batch::from_transitions(ts.iter())
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-3)
}

#[test]
fn c05_gradient_correctness() {
    const H: f64 = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut critic, mut actor, mut alpha) = (0.0f64, 0.0f64, 0.0f64);
    let draws = 150;
    for _ in 0..draws {
        let mut sac = Sac::<f64>::new(grad_cfg(), &mut rng).unwrap();
        sac.log_alpha = rng.random_range(-3.0..1.0);
        let batch = random_batch(&mut rng);
        let noise: Vec<f64> = (0..8).map(|_| rng.sample(StandardNormal)).collect();

        let (_, cg) = sac.critic_loss_grad(&batch, &noise);
        let k = rng.random_range(0..2);
        let i = rng.random_range(0..sac.critics[k].num_params());
        let x0 = sac.critics[k].params()[i];
        sac.critics[k].params_mut()[i] = x0 + H;
        let up = sac.critic_loss_grad(&batch, &noise).0;
        sac.critics[k].params_mut()[i] = x0 - H;
        let down = sac.critic_loss_grad(&batch, &noise).0;
        sac.critics[k].params_mut()[i] = x0;
        critic = critic.max(rel_err(cg[k][i], (up - down) / (2.0 * H)));

        let (_, ag, lps) = sac.actor_loss_grad(&batch.obs, &noise);
        let j = rng.random_range(0..sac.actor.num_params());
        let x0 = sac.actor.params()[j];
        sac.actor.params_mut()[j] = x0 + H;
        let up = sac.actor_loss_grad(&batch.obs, &noise).0;
        sac.actor.params_mut()[j] = x0 - H;
        let down = sac.actor_loss_grad(&batch.obs, &noise).0;
        sac.actor.params_mut()[j] = x0;
        actor = actor.max(rel_err(ag[j], (up - down) / (2.0 * H)));

        let (_, tg) = sac.alpha_loss_grad(&lps);
        let la = sac.log_alpha;
        sac.log_alpha = la + H;
        let up = sac.alpha_loss_grad(&lps).0;
        sac.log_alpha = la - H;
        let down = sac.alpha_loss_grad(&lps).0;
        sac.log_alpha = la;
        alpha = alpha.max(rel_err(tg, (up - down) / (2.0 * H)));
    }
    let pass = critic < 1e-4 && actor < 1e-4 && alpha < 1e-4;
    report(
        5,
        "gradient correctness",
        pass,
        &format!("{draws} draws, worst relative error critic {critic:.1e} actor {actor:.1e} temperature {alpha:.1e} < 1e-4"),
    );
}

#[test]
fn c06_decay_schedule_endpoints() {
    let total = 300_000;
    let mut monotone = true;
    let mut prev = decay_beta(0, total);
    for t in (0..=total).step_by(997).chain([total]) {
        let b = decay_beta(t, total);
        monotone &= b <= prev && (0.0..=1.0).contains(&b);
        prev = b;
    }
    let ends = decay_beta(0, total) == 1.0 && decay_beta(total, total) == 0.0;

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let decay = ModeConfig::new(Mode::Decay, total);
    let (mut at0, mut at1, mut active) = (0, 0, 0);
    for i in 0..1000 {
        let (s, u, p) = if i % 2 == 0 {
            activated_instance(&mut rng, false)
        } else {
            let p = CbfParams::with_obstacle([0.0, 0.0]);
            let s = UnicycleState::new(rng.random_range(-0.75..0.75), rng.random_range(-0.75..0.75), rng.random_range(-3.2..3.2));
            (s, Control::new(0.2, rng.random_range(-0.7..=0.7)), p)
        };
        let d0 = resolve_action(&decay, &s, u.omega, &p, total);
        let d1 = resolve_action(&decay, &s, u.omega, &p, 0);
        let sac = resolve_action(&ModeConfig::new(Mode::Sac, total), &s, u.omega, &p, 0);
        let filter = resolve_action(&ModeConfig::new(Mode::Filter, total), &s, u.omega, &p, 0);
        at0 += usize::from(d0.executed == sac.executed);
        at1 += usize::from(d1.executed == filter.executed);
        active += usize::from(d0.cbf_active);
    }
    let pass = monotone && ends && at0 == 1000 && at1 == 1000;
    report(
        6,
        "decay schedule endpoints",
        pass,
        &format!(
            "beta(0)={}, beta(T)={}, monotone={monotone}; beta=0 matches sac on {at0}/1000, beta=1 matches filter on {at1}/1000 ({active} activated)",
            decay_beta(0, total),
            decay_beta(total, total)
        ),
    );
}

fn desk_run(mode: Mode, seed: u64) -> Vec<LogRow> {
    let mut cfg = RunConfig::default();
    cfg.train.mode = mode;
    cfg.train.seed = seed;
    cfg.train.total_steps = 300_000;
    cfg.train.eval_interval = 10_000;
    let t0 = Instant::now();
    let log = train_run(&cfg, None, |_| {}).expect("desk-scale run");
    let _ = writeln!(
        std::io::stderr(),
        "[acceptance]    desk run {mode} seed {seed}: {:.0} s",
        t0.elapsed().as_secs_f64()
    );
    log
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn c07_desk_scale_trends() {
    let total = 300_000u64;
    let (mut a, mut b, mut c) = (0, 0, 0);
    let mut detail = Vec::new();
    for seed in 0..3 {
        let decay = desk_run(Mode::Decay, seed);
        let sac = desk_run(Mode::Sac, seed);
        let decay_with = mean(decay.iter().map(|r| r.avg_reward_with_cbf));
        let sac_with = mean(sac.iter().map(|r| r.avg_reward_with_cbf));
        let first_q = mean(decay.iter().filter(|r| r.step <= total / 4).map(|r| r.activation_pct));
        let last_q = mean(decay.iter().filter(|r| r.step > 3 * total / 4).map(|r| r.activation_pct));
        let sac_without = mean(sac.iter().map(|r| r.avg_reward_without_cbf));
        a += usize::from(decay_with > sac_with);
        b += usize::from(last_q < first_q);
        c += usize::from(sac_without < 0.0);
        detail.push(format!(
            "seed {seed}: decay w/ cbf {decay_with:.3} vs sac w/ cbf {sac_with:.3}; decay activation q1 {first_q:.3}% q4 {last_q:.3}%; sac w/o cbf {sac_without:.3}"
        ));
        let _ = writeln!(std::io::stderr(), "[acceptance]    {}", detail.last().unwrap());
    }
    let pass = a >= 2 && b >= 2 && c >= 2;
    report(
        7,
        "desk-scale trends",
        pass,
        &format!("(a) {a}/3, (b) {b}/3, (c) {c}/3 seeds, need >= 2 each; {}", detail.join("; ")),
    );
}

#[test]
fn c08_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::default();
    cfg.train.mode = Mode::Decay;
    cfg.train.seed = 8;
    cfg.train.total_steps = 3000;
    cfg.train.eval_interval = 1000;
    cfg.sac.warmup_steps = 500;
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    train_run(&cfg, Some(&a), |_| {}).unwrap();
    // the second run starts from the resolved config written by the first
    let resolved = RunConfig::load(&a.join("config.resolved")).unwrap();
    train_run(&resolved, Some(&b), |_| {}).unwrap();
    let la = std::fs::read(a.join("log.csv")).unwrap();
    let lb = std::fs::read(b.join("log.csv")).unwrap();
    report(
        8,
        "determinism",
        la == lb && !la.is_empty(),
        &format!("log.csv {} bytes vs {} bytes, identical={}", la.len(), lb.len(), la == lb),
    );
}

#[test]
fn c09_frame_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let mut p = || [rng.random_range(-0.75..0.75), rng.random_range(-0.75..0.75)];
        let (agent, goal, obstacle) = (p(), p(), p());
        let theta = rng.random_range(-3.2..3.2);
        let phi: f64 = rng.random_range(-3.2..3.2);
        let shift = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
        let tf = |q: [f64; 2]| [phi.cos() * q[0] - phi.sin() * q[1] + shift[0], phi.sin() * q[0] + phi.cos() * q[1] + shift[1]];
        let a = Observation::new(&UnicycleState::new(agent[0], agent[1], theta), goal, obstacle).to_array();
        let moved = tf(agent);
        let b = Observation::new(&UnicycleState::new(moved[0], moved[1], theta + phi), tf(goal), tf(obstacle)).to_array();
        for (x, y) in a.iter().zip(&b) {
            worst = worst.max((x - y).abs());
        }
    }
    report(9, "frame invariance", worst <= 1e-9, &format!("1000 scenes, worst deviation {worst:.2e} <= 1e-9"));
}

#[tokio::test]
async fn c10_bridge_loopback() {
    let cfg = RunConfig::default();
    let sac = saferl_core::Sac::new(cfg.sac.clone(), &mut ChaCha8Rng::seed_from_u64(10)).unwrap();
    let ctrl = Arc::new(Controller::new(sac, cfg, true));
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let (stop_tx, stop_rx) = tokio::sync::oneshot::channel::<()>();
    tokio::spawn(serve(listener, Arc::clone(&ctrl), Duration::from_millis(500), async move {
        let _ = stop_rx.await;
    }));

    let (r, mut w) = TcpStream::connect(addr).await.unwrap().into_split();
    let mut lines = BufReader::new(r).lines();
    let mut recv = async || -> CommandMessage {
        let l = tokio::time::timeout(Duration::from_secs(5), lines.next_line()).await.unwrap().unwrap().unwrap();
        serde_json::from_str(&l).unwrap()
    };

    // 300 poses at 10 Hz along a loop that crosses the guardrail band
    let t0 = Instant::now();
    let (mut in_order, mut bounded, mut active) = (0, 0, 0);
    let mut filter_equal = true;
    for i in 0..300u64 {
        let a = i as f64 * 0.05;
        let (x, y) = (0.45 * a.cos(), 0.45 * a.sin());
        let pose = PoseMessage {
            x,
            y,
            theta: a + 1.2,
            goal: [0.5, 0.5],
            obstacle: [0.0, 0.0],
            timestamp: i * 100,
        };
        let mut line = serde_json::to_string(&pose).unwrap();
        line.push('\n');
        w.write_all(line.as_bytes()).await.unwrap();
        let cmd = recv().await;
        in_order += usize::from(cmd == ctrl.handle_pose(&pose).unwrap());
        bounded += usize::from((0.0..=0.2).contains(&cmd.v) && cmd.omega.abs() <= 0.7);
        if cmd.cbf_active {
            active += 1;
            let s = UnicycleState::new(x, y, pose.theta);
            let omega = ctrl.policy.mean_omega(&Observation::new(&s, pose.goal, pose.obstacle));
            let params = ctrl.config.cbf_params(pose.obstacle);
            let safe = solve_safe_control(&s, Control::new(params.v_des, omega.clamp(-0.7, 0.7)), &params).control;
            filter_equal &= cmd.v == safe.v && cmd.omega == safe.omega;
        }
        tokio::time::sleep_until((t0 + Duration::from_millis(100) * (i as u32 + 1)).into()).await;
    }
    let streamed = t0.elapsed();

    tokio::time::sleep(Duration::from_millis(700)).await;
    let stop = recv().await;
    let stopped = stop.v == 0.0 && stop.omega == 0.0 && stop.fault.as_deref() == Some("watchdog");
    let _ = stop_tx.send(());

    let pass = in_order == 300 && bounded == 300 && stopped && filter_equal && active > 0;
    report(
        10,
        "bridge loopback",
        pass,
        &format!(
            "{in_order}/300 in-order replies, {bounded}/300 within bounds over {:.1} s; gap stop={stopped}; {active} activated replies equal the filter={filter_equal}",
            streamed.as_secs_f64()
        ),
    );
}
