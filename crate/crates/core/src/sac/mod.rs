//! Soft actor-critic over the angular velocity.
//!
//! The actor outputs the mean and an unconstrained log-std head of a Gaussian
//! over a pre-squash variable `g`; the action is `omega_max * tanh(g)`. Twin
//! critics take the observation and `omega / omega_max`. All losses are
//! differentiated by hand through [`Mlp::backward`].

mod replay;

pub use replay::{Batch, ReplayBuffer, Transition, OBS_DIM};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{Activation, Adam, ForwardCache, Mlp};
use crate::scalar::Real;

#[derive(Debug, Error, PartialEq)]
pub enum SacError {
    #[error("non-finite {which} loss ({value}) at update {update}")]
    NonFiniteLoss {
        which: &'static str,
        value: f64,
        update: u64,
    },
    #[error("sac config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SacConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub lr_alpha: f64,
    pub gamma: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub warmup_steps: usize,
    pub target_entropy: f64,
    pub init_alpha: f64,
    pub omega_max: f64,
    pub log_std_min: f64,
    pub log_std_max: f64,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            activation: Activation::Relu,
            lr_actor: 3e-4,
            lr_critic: 3e-4,
            lr_alpha: 3e-4,
            gamma: 0.99,
            tau: 0.005,
            batch_size: 256,
            buffer_capacity: 100_000,
            warmup_steps: 1000,
            target_entropy: -1.0,
            init_alpha: 1.0,
            omega_max: 0.7,
            log_std_min: -5.0,
            log_std_max: 2.0,
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<(), SacError> {
        let bad = |m: String| Err(SacError::InvalidConfig(m));
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad(format!("hidden sizes must be non-empty and positive, got {:?}", self.hidden));
        }
        for (name, x) in [
            ("lr_actor", self.lr_actor),
            ("lr_critic", self.lr_critic),
            ("lr_alpha", self.lr_alpha),
            ("init_alpha", self.init_alpha),
            ("omega_max", self.omega_max),
        ] {
            if !(x.is_finite() && x > 0.0) {
                return bad(format!("{name} must be positive"));
            }
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]".into());
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must lie in (0, 1]".into());
        }
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size {
            return bad("need 0 < batch_size <= buffer_capacity".into());
        }
        if !(self.log_std_min < self.log_std_max) || !self.target_entropy.is_finite() {
            return bad("need finite target_entropy and log_std_min < log_std_max".into());
        }
        Ok(())
    }

    fn actor_sizes(&self) -> Vec<usize> {
        let mut s = vec![OBS_DIM];
        s.extend(&self.hidden);
        s.push(2);
        s
    }

    fn critic_sizes(&self) -> Vec<usize> {
        let mut s = vec![OBS_DIM + 1];
        s.extend(&self.hidden);
        s.push(1);
        s
    }
}

/// Diagnostics of one gradient update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Losses {
    pub critic: f64,
    pub actor: f64,
    pub alpha: f64,
    pub alpha_value: f64,
    /// Mean `-log pi` of the actor batch.
    pub entropy: f64,
}

/// Squashed-Gaussian policy evaluated on a batch with fixed noise.
struct PolicySample<T> {
    cache: ForwardCache<T>,
    raw_log_std: Vec<T>,
    std: Vec<T>,
    pre_squash: Vec<T>,
    squashed: Vec<T>,
    actions: Vec<T>,
    log_probs: Vec<T>,
}

fn softplus<T: Real>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

/// `ln(1 - tanh(g)^2)` without cancellation.
fn log_one_minus_tanh_sq<T: Real>(g: T) -> T {
    let two = T::lit(2.0);
    two * (T::LN_2() - g - softplus(-two * g))
}

#[derive(Debug, Clone)]
pub struct Sac<T> {
    pub cfg: SacConfig,
    pub actor: Mlp<T>,
    pub critics: [Mlp<T>; 2],
    pub targets: [Mlp<T>; 2],
    pub log_alpha: T,
    actor_opt: Adam<T>,
    critic_opts: [Adam<T>; 2],
    alpha_opt: Adam<T>,
    updates: u64,
}

impl<T: Real> Sac<T> {
    pub fn new<R: Rng + ?Sized>(cfg: SacConfig, rng: &mut R) -> Result<Self, SacError> {
        cfg.validate()?;
        let actor = Mlp::new(&cfg.actor_sizes(), cfg.activation, rng);
        let c1 = Mlp::new(&cfg.critic_sizes(), cfg.activation, rng);
        let c2 = Mlp::new(&cfg.critic_sizes(), cfg.activation, rng);
        Ok(Self::from_networks(cfg, actor, [c1.clone(), c2.clone()], [c1, c2], T::lit(0.0)).with_init_alpha())
    }

    fn with_init_alpha(mut self) -> Self {
        self.log_alpha = T::lit(self.cfg.init_alpha.ln());
        self
    }

    /// Assembles a learner around existing networks with fresh optimiser state.
    pub fn from_networks(cfg: SacConfig, actor: Mlp<T>, critics: [Mlp<T>; 2], targets: [Mlp<T>; 2], log_alpha: T) -> Self {
        let lr = |x: f64| T::lit(x);
        Self {
            actor_opt: Adam::new(actor.num_params(), lr(cfg.lr_actor)),
            critic_opts: [
                Adam::new(critics[0].num_params(), lr(cfg.lr_critic)),
                Adam::new(critics[1].num_params(), lr(cfg.lr_critic)),
            ],
            alpha_opt: Adam::new(1, lr(cfg.lr_alpha)),
            cfg,
            actor,
            critics,
            targets,
            log_alpha,
            updates: 0,
        }
    }

    pub fn alpha(&self) -> T {
        self.log_alpha.exp()
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    fn omega_max(&self) -> T {
        T::lit(self.cfg.omega_max)
    }

    fn log_std(&self, raw: T) -> T {
        let (lo, hi) = (T::lit(self.cfg.log_std_min), T::lit(self.cfg.log_std_max));
        lo + T::lit(0.5) * (hi - lo) * (raw.tanh() + T::one())
    }

    fn policy(&self, obs: &[T], noise: &[T]) -> PolicySample<T> {
        let batch = noise.len();
        let cache = self.actor.forward_cached(obs, batch);
        let half_ln_2pi = T::lit(0.5 * (2.0 * std::f64::consts::PI).ln());
        let ln_wmax = self.omega_max().ln();
        let mut s = PolicySample {
            raw_log_std: Vec::with_capacity(batch),
            std: Vec::with_capacity(batch),
            pre_squash: Vec::with_capacity(batch),
            squashed: Vec::with_capacity(batch),
            actions: Vec::with_capacity(batch),
            log_probs: Vec::with_capacity(batch),
            cache,
        };
        let out = s.cache.output().to_vec();
        for (i, &xi) in noise.iter().enumerate() {
            let mu = out[2 * i];
            let raw = out[2 * i + 1];
            let ls = self.log_std(raw);
            let sd = ls.exp();
            let g = mu + sd * xi;
            let t = g.tanh();
            let lp = -T::lit(0.5) * xi * xi - ls - half_ln_2pi - ln_wmax - log_one_minus_tanh_sq(g);
            s.raw_log_std.push(raw);
            s.std.push(sd);
            s.pre_squash.push(g);
            s.squashed.push(t);
            s.actions.push(self.omega_max() * t);
            s.log_probs.push(lp);
        }
        s
    }

    /// Stochastic action: `(omega, log_prob, pre_squash)`.
    pub fn sample_action<R: Rng + ?Sized>(&self, obs: &[T; OBS_DIM], rng: &mut R) -> (T, T, T) {
        let xi = T::lit(rng.sample::<f64, _>(StandardNormal));
        let p = self.policy(obs, &[xi]);
        (p.actions[0], p.log_probs[0], p.pre_squash[0])
    }

    /// Deterministic action `omega_max * tanh(mean)`.
    pub fn mean_action(&self, obs: &[T; OBS_DIM]) -> T {
        let out = self.actor.forward(obs, 1);
        self.omega_max() * out[0].tanh()
    }

    /// Log-density of the squashed policy at `omega` (strictly inside the bounds).
    pub fn log_prob(&self, obs: &[T; OBS_DIM], omega: T) -> T {
        let out = self.actor.forward(obs, 1);
        let g = (omega / self.omega_max()).atanh();
        let ls = self.log_std(out[1]);
        let xi = (g - out[0]) / ls.exp();
        self.policy(obs, &[xi]).log_probs[0]
    }

    fn critic_input(&self, obs: &[T], actions: &[T]) -> Vec<T> {
        let mut x = Vec::with_capacity(actions.len() * (OBS_DIM + 1));
        let scale = self.omega_max().recip();
        for (o, &a) in obs.chunks_exact(OBS_DIM).zip(actions) {
            x.extend_from_slice(o);
            x.push(a * scale);
        }
        x
    }

    /// `Q_k(obs, omega)` for critic `k` (0 or 1).
    pub fn critic_value(&self, k: usize, obs: &[T; OBS_DIM], omega: T) -> T {
        self.critics[k].forward(&self.critic_input(obs, &[omega]), 1)[0]
    }

    /// `min_k Q_k(obs, mean_action(obs))`.
    pub fn estimate_state_value(&self, obs: &[T; OBS_DIM]) -> T {
        let a = self.mean_action(obs);
        self.critic_value(0, obs, a).min(self.critic_value(1, obs, a))
    }

    /// Soft Bellman targets, using `next_noise` for the next-state actions.
    pub fn critic_targets(&self, batch: &Batch<T>, next_noise: &[T]) -> Vec<T> {
        let next = self.policy(&batch.next_obs, next_noise);
        let x = self.critic_input(&batch.next_obs, &next.actions);
        let q1 = self.targets[0].forward(&x, batch.size);
        let q2 = self.targets[1].forward(&x, batch.size);
        let alpha = self.alpha();
        let gamma = T::lit(self.cfg.gamma);
        (0..batch.size)
            .map(|i| {
                let soft_v = q1[i].min(q2[i]) - alpha * next.log_probs[i];
                batch.rewards[i] + gamma * batch.not_done[i] * soft_v
            })
            .collect()
    }

    /// `sum_k mean_i (Q_k(s_i, a_i) - y_i)^2` and its gradients for both critics.
    pub fn critic_loss_grad(&self, batch: &Batch<T>, next_noise: &[T]) -> (T, [Vec<T>; 2]) {
        let y = self.critic_targets(batch, next_noise);
        let x = self.critic_input(&batch.obs, &batch.actions);
        let n = T::from_usize(batch.size).expect("batch size fits");
        let mut loss = T::zero();
        let mut grads = [Vec::new(), Vec::new()];
        for (k, critic) in self.critics.iter().enumerate() {
            let cache = critic.forward_cached(&x, batch.size);
            let q = cache.output();
            let mut d = Vec::with_capacity(batch.size);
            for (qi, yi) in q.iter().zip(&y) {
                let e = *qi - *yi;
                loss = loss + e * e / n;
                d.push(T::lit(2.0) * e / n);
            }
            let mut g = vec![T::zero(); critic.num_params()];
            critic.backward(&cache, &d, Some(&mut g), false);
            grads[k] = g;
        }
        (loss, grads)
    }

    /// `mean_i (alpha log pi(a_i|s_i) - min_k Q_k(s_i, a_i))` with
    /// reparameterised actions; returns loss, actor gradient and the log-probs.
    pub fn actor_loss_grad(&self, obs: &[T], noise: &[T]) -> (T, Vec<T>, Vec<T>) {
        let b = noise.len();
        let n = T::from_usize(b).expect("batch size fits");
        let p = self.policy(obs, noise);
        let x = self.critic_input(obs, &p.actions);
        let c = [
            self.critics[0].forward_cached(&x, b),
            self.critics[1].forward_cached(&x, b),
        ];
        let (q1, q2) = (c[0].output(), c[1].output());
        let mut pick = [vec![T::zero(); b], vec![T::zero(); b]];
        let mut loss = T::zero();
        let alpha = self.alpha();
        for i in 0..b {
            let k = if q1[i] <= q2[i] { 0 } else { 1 };
            pick[k][i] = T::one();
            loss = loss + (alpha * p.log_probs[i] - q1[i].min(q2[i])) / n;
        }
        // dQ/d(critic input); the action column is the last one
        let dq: Vec<Vec<T>> = (0..2)
            .map(|k| self.critics[k].backward(&c[k], &pick[k], None, true).expect("input grad requested"))
            .collect();
        let wmax = self.omega_max();
        let half_span = T::lit(0.5 * (self.cfg.log_std_max - self.cfg.log_std_min));
        let two = T::lit(2.0);
        let mut d_out = Vec::with_capacity(2 * b);
        for i in 0..b {
            let col = i * (OBS_DIM + 1) + OBS_DIM;
            // the critic sees omega / omega_max
            let dq_da = (dq[0][col] + dq[1][col]) / wmax;
            let t = p.squashed[i];
            let dl_dg = (alpha * two * t - dq_da * wmax * (T::one() - t * t)) / n;
            let xi = (p.pre_squash[i] - p.cache.output()[2 * i]) / p.std[i];
            let dl_dls = dl_dg * p.std[i] * xi - alpha / n;
            let th = p.raw_log_std[i].tanh();
            d_out.push(dl_dg);
            d_out.push(dl_dls * half_span * (T::one() - th * th));
        }
        let mut g = vec![T::zero(); self.actor.num_params()];
        self.actor.backward(&p.cache, &d_out, Some(&mut g), false);
        (loss, g, p.log_probs)
    }

    /// `-log_alpha * mean(log pi + target_entropy)` and its derivative.
    pub fn alpha_loss_grad(&self, log_probs: &[T]) -> (T, T) {
        let n = T::from_usize(log_probs.len()).expect("batch size fits");
        let h = T::lit(self.cfg.target_entropy);
        let m = log_probs.iter().map(|&lp| lp + h).sum::<T>() / n;
        (-self.log_alpha * m, -m)
    }

    fn normals<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<T> {
        (0..n).map(|_| T::lit(rng.sample::<f64, _>(StandardNormal))).collect()
    }

    /// One SAC step: critics, then actor against the updated critics, then
    /// temperature, then Polyak averaging of the targets.
    pub fn update<R: Rng + ?Sized>(&mut self, batch: &Batch<T>, rng: &mut R) -> Result<Losses, SacError> {
        self.updates += 1;
        let check = |which: &'static str, v: T, update: u64| {
            if v.is_finite() {
                Ok(v.to_f64().unwrap_or(f64::NAN))
            } else {
                Err(SacError::NonFiniteLoss {
                    which,
                    value: v.to_f64().unwrap_or(f64::NAN),
                    update,
                })
            }
        };

        let next_noise = Self::normals(batch.size, rng);
        let (critic_loss, grads) = self.critic_loss_grad(batch, &next_noise);
        let critic = check("critic", critic_loss, self.updates)?;
        for k in 0..2 {
            self.critic_opts[k].step(self.critics[k].params_mut(), &grads[k]);
        }

        let noise = Self::normals(batch.size, rng);
        let (actor_loss, g, log_probs) = self.actor_loss_grad(&batch.obs, &noise);
        let actor = check("actor", actor_loss, self.updates)?;
        self.actor_opt.step(self.actor.params_mut(), &g);

        let (alpha_loss, ga) = self.alpha_loss_grad(&log_probs);
        let alpha = check("alpha", alpha_loss, self.updates)?;
        let mut la = [self.log_alpha];
        self.alpha_opt.step(&mut la, &[ga]);
        self.log_alpha = la[0];

        let tau = T::lit(self.cfg.tau);
        for k in 0..2 {
            let src = self.critics[k].clone();
            self.targets[k].soft_update_from(&src, tau);
        }

        let n = T::from_usize(log_probs.len()).expect("batch size fits");
        let entropy = -(log_probs.iter().copied().sum::<T>() / n);
        Ok(Losses {
            critic,
            actor,
            alpha,
            alpha_value: self.alpha().to_f64().unwrap_or(f64::NAN),
            entropy: entropy.to_f64().unwrap_or(f64::NAN),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_cfg() -> SacConfig {
        SacConfig {
            hidden: vec![8, 8],
            batch_size: 4,
            buffer_capacity: 16,
            ..Default::default()
        }
    }

    #[test]
    fn sampled_actions_are_bounded_and_reproducible() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let sac = Sac::<f64>::new(small_cfg(), &mut rng).unwrap();
        let obs = [0.3, -0.2, 0.5, 0.1];
        for _ in 0..1000 {
            let (w, lp, _) = sac.sample_action(&obs, &mut rng);
            assert!(w.abs() <= 0.7 && lp.is_finite());
        }
        let a = sac.sample_action(&obs, &mut ChaCha8Rng::seed_from_u64(5));
        let b = sac.sample_action(&obs, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
    }

    #[test]
    fn mean_action_is_squashed_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sac = Sac::<f64>::new(small_cfg(), &mut rng).unwrap();
        let obs = [0.1, 0.2, 0.3, 0.4];
        let mu = sac.actor.forward(&obs, 1)[0];
        assert_eq!(sac.mean_action(&obs), 0.7 * mu.tanh());
    }

    #[test]
    fn density_integrates_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sac = Sac::<f64>::new(small_cfg(), &mut rng).unwrap();
        let obs = [0.5, -0.4, 0.2, 0.3];
        // Monte Carlo over the action range
        let n = 200_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let w: f64 = rng.random_range(-0.7..0.7);
            acc += sac.log_prob(&obs, w).exp();
        }
        let integral = acc / n as f64 * 1.4;
        assert!((integral - 1.0).abs() < 0.05, "integral {integral}");
    }

    #[test]
    fn zeroed_critics_value_everything_at_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut sac = Sac::<f64>::new(small_cfg(), &mut rng).unwrap();
        for c in &mut sac.critics {
            c.zero_output_layer();
        }
        assert_eq!(sac.critic_value(0, &[1.0, 2.0, 3.0, 4.0], 0.3), 0.0);
        assert_eq!(sac.estimate_state_value(&[0.1, 0.0, -0.3, 0.2]), 0.0);
    }

    #[test]
    fn fixed_point_batch_has_zero_critic_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut cfg = small_cfg();
        cfg.gamma = 0.0;
        let mut sac = Sac::<f64>::new(cfg, &mut rng).unwrap();
        for c in sac.critics.iter_mut().chain(sac.targets.iter_mut()) {
            c.zero_output_layer();
        }
        let t = Transition {
            obs: [0.1, 0.2, 0.3, 0.4],
            action: 0.1,
            pre_squash: 0.0,
            reward: 0.0,
            next_obs: [0.2, 0.2, 0.3, 0.4],
            terminated: false,
        };
        let batch = Batch::from_transitions([t; 4].iter());
        let (loss, _) = sac.critic_loss_grad(&batch, &[0.0; 4]);
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn terminated_targets_do_not_bootstrap() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sac = Sac::<f64>::new(small_cfg(), &mut rng).unwrap();
        let mut t = Transition {
            obs: [0.1, 0.2, 0.3, 0.4],
            action: 0.1,
            pre_squash: 0.0,
            reward: 10.0,
            next_obs: [0.2, 0.2, 0.3, 0.4],
            terminated: true,
        };
        let y = sac.critic_targets(&Batch::from_transitions([t].iter()), &[0.3]);
        assert_eq!(y, vec![10.0]);
        t.terminated = false;
        let y = sac.critic_targets(&Batch::from_transitions([t].iter()), &[0.3]);
        assert_ne!(y, vec![10.0]);
    }

    #[test]
    fn critic_regresses_toward_fixed_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut cfg = small_cfg();
        cfg.gamma = 0.0;
        cfg.lr_critic = 1e-2;
        let mut sac = Sac::<f64>::new(cfg, &mut rng).unwrap();
        let t = Transition {
            obs: [0.1, -0.2, 0.3, 0.4],
            action: 0.2,
            pre_squash: 0.0,
            reward: 3.0,
            next_obs: [0.0; 4],
            terminated: false,
        };
        let batch = Batch::from_transitions([t; 4].iter());
        let before = (sac.critic_value(0, &t.obs, t.action) - 3.0).abs();
        for _ in 0..500 {
            sac.update(&batch, &mut rng).unwrap();
        }
        let after = (sac.critic_value(0, &t.obs, t.action) - 3.0).abs();
        assert!(after < 0.05 && after < before, "before {before} after {after}");
    }

    #[test]
    fn non_finite_loss_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut sac = Sac::<f64>::new(small_cfg(), &mut rng).unwrap();
        let t = Transition {
            obs: [0.0; 4],
            action: 0.0,
            pre_squash: 0.0,
            reward: f64::NAN,
            next_obs: [0.0; 4],
            terminated: false,
        };
        let batch = Batch::from_transitions([t; 4].iter());
        assert!(matches!(sac.update(&batch, &mut rng), Err(SacError::NonFiniteLoss { which: "critic", .. })));
    }

    #[test]
    fn config_validation() {
        assert!(SacConfig::default().validate().is_ok());
        let c = SacConfig { batch_size: 0, ..Default::default() };
        assert!(c.validate().is_err());
        let c = SacConfig { gamma: 1.5, ..Default::default() };
        assert!(c.validate().is_err());
    }
}
