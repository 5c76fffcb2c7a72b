//! Action selection: plain epsilon-greedy, flight-based exploration that
//! repeats a random action, and the two ways a frozen pre-trained policy is
//! exposed to the agent — heavy-tailed flights that hand control over for a
//! sampled number of steps, and an extra pseudo-action that defers a single
//! step to the pre-trained policy. Also the duplicate-and-relabel transform
//! that lets one observed return fit both the pseudo-action entry and the
//! primitive action the policy actually took.

use crate::env::{ActionId, StateId, Transition};
use crate::error::{Error, Result};
use crate::learner::{Obs, QFunction};
use crate::num::{argmax_tie_low, Real};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExplorationMode {
    EpsGreedy,
    EzGreedyRepeat,
    BtFlights,
    BtAction,
    BtFull,
}

impl ExplorationMode {
    pub fn uses_flights(self) -> bool {
        matches!(
            self,
            ExplorationMode::EzGreedyRepeat | ExplorationMode::BtFlights | ExplorationMode::BtFull
        )
    }

    pub fn uses_extra_action(self) -> bool {
        matches!(self, ExplorationMode::BtAction | ExplorationMode::BtFull)
    }

    pub fn needs_pretrained(self) -> bool {
        matches!(
            self,
            ExplorationMode::BtFlights | ExplorationMode::BtAction | ExplorationMode::BtFull
        )
    }
}

/// A pre-trained policy used as a black box: observations in, primitive
/// actions out. Immutable after construction; its digest is checked before
/// and after every transfer run. Actions are sampled, so the soft variant
/// keeps the residual stochasticity a pre-trained exploratory policy has.
#[derive(Debug, Clone)]
pub enum FrozenPolicy<T> {
    /// Greedy over a snapshot of a Q-function (restricted to base actions).
    Greedy { qf: QFunction<T> },
    /// Greedy with probability `1 - eps`, uniform otherwise.
    SoftGreedy { qf: QFunction<T>, eps: f64 },
    /// Fixed state -> action rule table.
    Scripted {
        actions: Vec<ActionId>,
        n_actions: usize,
    },
}

impl<T: Real> FrozenPolicy<T> {
    pub fn greedy(qf: QFunction<T>) -> Self {
        FrozenPolicy::Greedy { qf }
    }

    pub fn soft_greedy(qf: QFunction<T>, eps: f64) -> Self {
        if eps <= 0.0 {
            FrozenPolicy::Greedy { qf }
        } else {
            FrozenPolicy::SoftGreedy { qf, eps }
        }
    }

    pub fn scripted(actions: Vec<ActionId>, n_actions: usize) -> Self {
        FrozenPolicy::Scripted { actions, n_actions }
    }

    /// Samples a primitive action (never the extra pseudo-action).
    pub fn act<R: Rng>(
        &self,
        state: StateId,
        obs_of: &dyn Fn(StateId) -> Obs<T>,
        rng: &mut R,
    ) -> ActionId {
        match self {
            FrozenPolicy::Greedy { qf } => {
                let q = qf.q_values(&obs_of(state));
                argmax_tie_low(&q[..qf.n_actions_base()])
            }
            FrozenPolicy::SoftGreedy { qf, eps } => {
                let n = qf.n_actions_base();
                if rng.gen::<f64>() < *eps {
                    rng.gen_range(0..n)
                } else {
                    let q = qf.q_values(&obs_of(state));
                    argmax_tie_low(&q[..n])
                }
            }
            FrozenPolicy::Scripted { actions, .. } => actions[state],
        }
    }

    pub fn n_actions(&self) -> usize {
        match self {
            FrozenPolicy::Greedy { qf } | FrozenPolicy::SoftGreedy { qf, .. } => {
                qf.n_actions_base()
            }
            FrozenPolicy::Scripted { n_actions, .. } => *n_actions,
        }
    }

    /// SHA-256 over the policy's parameters; bit-stable across a run.
    pub fn digest(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        match self {
            FrozenPolicy::Greedy { qf } => {
                hasher.update(b"greedy");
                for p in qf.flat_params() {
                    hasher.update(p.to_f64().unwrap().to_bits().to_le_bytes());
                }
            }
            FrozenPolicy::SoftGreedy { qf, eps } => {
                hasher.update(b"soft_greedy");
                hasher.update(eps.to_bits().to_le_bytes());
                for p in qf.flat_params() {
                    hasher.update(p.to_f64().unwrap().to_bits().to_le_bytes());
                }
            }
            FrozenPolicy::Scripted { actions, n_actions } => {
                hasher.update(b"scripted");
                hasher.update((*n_actions as u64).to_le_bytes());
                for a in actions {
                    hasher.update((*a as u64).to_le_bytes());
                }
            }
        }
        hasher.finalize().into()
    }
}

/// Constants of the flight machinery.
#[derive(Debug, Clone, PartialEq)]
pub struct FlightConfig {
    pub mode: ExplorationMode,
    /// Per-actor exploration epsilon.
    pub eps: f64,
    /// Per-episode flight-start probability is log-uniform on
    /// `[eps_levy_min, eps_levy_max]`.
    pub eps_levy_min: f64,
    pub eps_levy_max: f64,
    /// Flight-length tail exponent; `f64::INFINITY` degenerates to length 1.
    pub zeta_mu: f64,
    /// Truncation of the flight-length distribution.
    pub zeta_cap: usize,
}

impl Default for FlightConfig {
    fn default() -> Self {
        FlightConfig {
            mode: ExplorationMode::EpsGreedy,
            eps: 0.4,
            eps_levy_min: 1e-4,
            eps_levy_max: 0.1,
            zeta_mu: 2.0,
            zeta_cap: 1000,
        }
    }
}

/// What one action selection produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Selection {
    /// Action recorded for learning (may be the extra pseudo-action).
    pub learn_action: ActionId,
    /// Action handed to the environment.
    pub primitive_action: ActionId,
    /// True iff the executed action came from the pre-trained policy.
    pub from_pretrained: bool,
    /// True iff this step was taken inside a flight.
    pub in_flight: bool,
    /// Collection-time probability of `learn_action`.
    pub behavior_prob: f64,
}

/// Per-actor exploration state: the per-episode flight-start probability,
/// the remaining flight length, and the repeat action of the
/// action-repeat baseline. Flights never survive an episode boundary.
#[derive(Debug, Clone)]
pub struct FlightController {
    pub cfg: FlightConfig,
    eps_levy: f64,
    n_remaining: usize,
    repeat_action: Option<ActionId>,
    rng: ChaCha8Rng,
    zeta_cdf: Vec<f64>,
}

impl FlightController {
    pub fn new(cfg: FlightConfig, seed: u64) -> Self {
        let zeta_cdf = if cfg.zeta_mu.is_finite() {
            let mut weights: Vec<f64> = (1..=cfg.zeta_cap)
                .map(|n| (n as f64).powf(-cfg.zeta_mu))
                .collect();
            let total: f64 = weights.iter().sum();
            let mut acc = 0.0;
            for w in weights.iter_mut() {
                acc += *w / total;
                *w = acc;
            }
            weights
        } else {
            Vec::new()
        };
        let mut fc = FlightController {
            cfg,
            eps_levy: 0.0,
            n_remaining: 0,
            repeat_action: None,
            rng: ChaCha8Rng::seed_from_u64(seed),
            zeta_cdf,
        };
        fc.begin_episode();
        fc
    }

    pub fn eps_levy(&self) -> f64 {
        self.eps_levy
    }

    pub fn n_remaining(&self) -> usize {
        self.n_remaining
    }

    /// Resets flight state and draws this episode's flight-start
    /// probability log-uniformly.
    pub fn begin_episode(&mut self) {
        self.n_remaining = 0;
        self.repeat_action = None;
        let (lo, hi) = (self.cfg.eps_levy_min.ln(), self.cfg.eps_levy_max.ln());
        let u = self.rng.gen::<f64>();
        self.eps_levy = (lo + u * (hi - lo)).exp();
    }

    /// Draws a flight length from the truncated power-law tail.
    pub fn sample_flight_length(&mut self) -> usize {
        if !self.cfg.zeta_mu.is_finite() {
            return 1;
        }
        let u = self.rng.gen::<f64>();
        self.zeta_cdf.partition_point(|&c| c < u) + 1
    }

    /// One action selection. `q` must cover the mode's action set: base
    /// actions plus the pseudo-action slot in the extra-action modes.
    pub fn select_action<T: Real>(
        &mut self,
        q: &[T],
        pi_p: Option<&FrozenPolicy<T>>,
        state: StateId,
        obs_of: &dyn Fn(StateId) -> Obs<T>,
        n_actions_base: usize,
    ) -> Result<Selection> {
        let mode = self.cfg.mode;
        let expected = n_actions_base + mode.uses_extra_action() as usize;
        if q.len() != expected {
            return Err(Error::Validation(format!(
                "q length {} does not match action set size {expected} for this mode",
                q.len()
            )));
        }
        if mode.needs_pretrained() && pi_p.is_none() {
            return Err(Error::Validation(
                "this exploration mode requires a pre-trained policy".into(),
            ));
        }

        if mode.uses_flights() && self.n_remaining == 0 && self.rng.gen::<f64>() <= self.eps_levy {
            self.n_remaining = self.sample_flight_length();
            if mode == ExplorationMode::EzGreedyRepeat {
                self.repeat_action = Some(self.rng.gen_range(0..n_actions_base));
            }
        }

        if mode.uses_flights() && self.n_remaining > 0 {
            self.n_remaining -= 1;
            return Ok(match mode {
                ExplorationMode::EzGreedyRepeat => {
                    let a = self.repeat_action.expect("repeat action set at flight start");
                    Selection {
                        learn_action: a,
                        primitive_action: a,
                        from_pretrained: false,
                        in_flight: true,
                        behavior_prob: 1.0,
                    }
                }
                _ => {
                    let a = pi_p.unwrap().act(state, obs_of, &mut self.rng);
                    // With the extended action set, flight steps are stored
                    // under the pseudo-action and relabeling emits the
                    // primitive duplicate, so all experience collected with
                    // the pre-trained policy trains both entries. Without
                    // the extra slot the primitive action is stored.
                    let learn_action = if mode.uses_extra_action() {
                        n_actions_base
                    } else {
                        a
                    };
                    Selection {
                        learn_action,
                        primitive_action: a,
                        from_pretrained: true,
                        in_flight: true,
                        behavior_prob: 1.0,
                    }
                }
            });
        }

        let n_sel = expected;
        let greedy = argmax_tie_low(q);
        let a = if self.rng.gen::<f64>() <= self.cfg.eps {
            self.rng.gen_range(0..n_sel)
        } else {
            greedy
        };
        let behavior_prob =
            self.cfg.eps / n_sel as f64 + if a == greedy { 1.0 - self.cfg.eps } else { 0.0 };

        if mode.uses_extra_action() && a == n_actions_base {
            let primitive = pi_p.unwrap().act(state, obs_of, &mut self.rng);
            Ok(Selection {
                learn_action: a,
                primitive_action: primitive,
                from_pretrained: true,
                in_flight: false,
                behavior_prob,
            })
        } else {
            Ok(Selection {
                learn_action: a,
                primitive_action: a,
                from_pretrained: false,
                in_flight: false,
                behavior_prob,
            })
        }
    }
}

/// Expands an extra-action transition into itself plus a duplicate relabeled
/// with the primitive action the pre-trained policy took; everything else
/// passes through unchanged.
pub fn relabel<T: Real>(tr: &Transition<T>, n_actions_base: usize) -> Result<Vec<Transition<T>>> {
    let a_plus = n_actions_base;
    if tr.action == a_plus {
        if !tr.from_pretrained {
            return Err(Error::DataIntegrity(
                "extra-action transition not flagged as pre-trained".into(),
            ));
        }
        if tr.primitive_action >= n_actions_base {
            return Err(Error::DataIntegrity(
                "extra-action transition without a resolved primitive action".into(),
            ));
        }
        let mut dup = tr.clone();
        dup.action = tr.primitive_action;
        Ok(vec![tr.clone(), dup])
    } else {
        Ok(vec![tr.clone()])
    }
}

/// Geometric per-actor epsilon ladder `eps_max^(1 + 7 i / (n - 1))`.
pub fn actor_epsilons(n_actors: usize, eps_max: f64) -> Vec<f64> {
    if n_actors == 1 {
        return vec![eps_max];
    }
    (0..n_actors)
        .map(|i| eps_max.powf(1.0 + 7.0 * i as f64 / (n_actors - 1) as f64))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state_obs(s: StateId) -> Obs<f64> {
        Obs::State(s)
    }

    fn controller(mode: ExplorationMode, eps: f64, seed: u64) -> FlightController {
        FlightController::new(
            FlightConfig {
                mode,
                eps,
                ..FlightConfig::default()
            },
            seed,
        )
    }

    #[test]
    fn begin_episode_clears_flight_and_draws_eps_levy_in_range() {
        let mut fc = controller(ExplorationMode::BtFull, 0.1, 3);
        fc.n_remaining = 17;
        fc.begin_episode();
        assert_eq!(fc.n_remaining(), 0);
        for _ in 0..1000 {
            fc.begin_episode();
            assert!(fc.eps_levy() > 0.0 && fc.eps_levy() <= 0.1);
        }
    }

    #[test]
    fn equal_seeds_give_equal_eps_levy_sequences() {
        let mut a = controller(ExplorationMode::BtFull, 0.1, 42);
        let mut b = controller(ExplorationMode::BtFull, 0.1, 42);
        for _ in 0..50 {
            a.begin_episode();
            b.begin_episode();
            assert_eq!(a.eps_levy(), b.eps_levy());
        }
    }

    #[test]
    fn flight_lengths_within_support() {
        let mut fc = controller(ExplorationMode::BtFull, 0.1, 5);
        for _ in 0..10_000 {
            let n = fc.sample_flight_length();
            assert!(n >= 1 && n <= fc.cfg.zeta_cap);
        }
    }

    #[test]
    fn infinite_mu_always_length_one() {
        let mut fc = FlightController::new(
            FlightConfig {
                mode: ExplorationMode::BtFull,
                zeta_mu: f64::INFINITY,
                ..FlightConfig::default()
            },
            1,
        );
        for _ in 0..100 {
            assert_eq!(fc.sample_flight_length(), 1);
        }
    }

    #[test]
    fn zeta_head_probabilities_match_normalization() {
        let mut fc = FlightController::new(
            FlightConfig {
                mode: ExplorationMode::BtFull,
                zeta_cap: 1_000_000,
                ..FlightConfig::default()
            },
            7,
        );
        let draws = 1_000_000;
        let mut c1 = 0u64;
        let mut c2 = 0u64;
        for _ in 0..draws {
            match fc.sample_flight_length() {
                1 => c1 += 1,
                2 => c2 += 1,
                _ => {}
            }
        }
        let p1 = c1 as f64 / draws as f64;
        let p2 = c2 as f64 / draws as f64;
        // 1/zeta(2) = 6/pi^2
        assert!((p1 - 0.6079).abs() < 0.003, "p1 = {p1}");
        assert!((p2 - 0.1520).abs() < 0.003, "p2 = {p2}");
    }

    #[test]
    fn eps_zero_greedy_breaks_ties_low() {
        let mut fc = controller(ExplorationMode::EpsGreedy, 0.0, 1);
        let q = [1.0f64, 1.0, 0.0];
        for _ in 0..20 {
            let sel = fc.select_action(&q, None, 0, &state_obs, 3).unwrap();
            assert_eq!(sel.learn_action, 0);
            assert_eq!(sel.primitive_action, 0);
            assert!(!sel.from_pretrained);
            assert!((sel.behavior_prob - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn flight_steps_delegate_and_decrement() {
        // bt_full: flight experience is recorded under the pseudo-action
        let mut fc = controller(ExplorationMode::BtFull, 0.0, 2);
        let pi = FrozenPolicy::<f64>::scripted(vec![1, 1, 1], 3);
        fc.n_remaining = 3;
        let q = [0.0f64; 4];
        let sel = fc.select_action(&q, Some(&pi), 0, &state_obs, 3).unwrap();
        assert_eq!(fc.n_remaining(), 2);
        assert!(sel.from_pretrained && sel.in_flight);
        assert_eq!(sel.learn_action, 3);
        assert_eq!(sel.primitive_action, 1);

        // bt_flights has no pseudo-action slot: primitive storage
        let mut fc = controller(ExplorationMode::BtFlights, 0.0, 2);
        fc.n_remaining = 2;
        let q = [0.0f64; 3];
        let sel = fc.select_action(&q, Some(&pi), 0, &state_obs, 3).unwrap();
        assert!(sel.from_pretrained && sel.in_flight);
        assert_eq!(sel.learn_action, 1);
        assert_eq!(sel.primitive_action, 1);
    }

    #[test]
    fn extra_action_dispatches_to_pretrained() {
        let mut fc = FlightController::new(
            FlightConfig {
                mode: ExplorationMode::BtAction,
                eps: 0.0,
                ..FlightConfig::default()
            },
            3,
        );
        let pi = FrozenPolicy::<f64>::scripted(vec![2, 2], 3);
        // argmax lands on the pseudo-action slot (index 3)
        let q = [0.0f64, 0.0, 0.0, 5.0];
        let sel = fc.select_action(&q, Some(&pi), 1, &state_obs, 3).unwrap();
        assert_eq!(sel.learn_action, 3);
        assert_eq!(sel.primitive_action, 2);
        assert!(sel.from_pretrained && !sel.in_flight);
    }

    #[test]
    fn q_length_mismatch_is_a_validation_error() {
        let mut fc = controller(ExplorationMode::BtFull, 0.1, 4);
        let pi = FrozenPolicy::<f64>::scripted(vec![0], 2);
        let q = [0.0f64; 2]; // needs 3 with the extra slot
        assert!(matches!(
            fc.select_action(&q, Some(&pi), 0, &state_obs, 2),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn ez_greedy_repeats_one_action_through_the_flight() {
        let mut fc = FlightController::new(
            FlightConfig {
                mode: ExplorationMode::EzGreedyRepeat,
                eps: 0.0,
                eps_levy_min: 0.999_999,
                eps_levy_max: 1.0,
                ..FlightConfig::default()
            },
            11,
        );
        fc.begin_episode();
        let q = [0.0f64; 3];
        let first = fc.select_action(&q, None, 0, &state_obs, 3).unwrap();
        assert!(first.in_flight);
        let mut remaining = fc.n_remaining();
        while remaining > 0 {
            let sel = fc.select_action(&q, None, 0, &state_obs, 3).unwrap();
            assert!(sel.in_flight);
            assert_eq!(sel.primitive_action, first.primitive_action);
            remaining = fc.n_remaining();
        }
    }

    #[test]
    fn coverage_every_primitive_has_floor_probability() {
        // in the non-flight branch every primitive action keeps probability
        // >= eps / |A+|
        let eps = 0.4;
        let mut fc = FlightController::new(
            FlightConfig {
                mode: ExplorationMode::BtFull,
                eps,
                eps_levy_min: 1e-9,
                eps_levy_max: 1e-8, // make flights negligible
                ..FlightConfig::default()
            },
            13,
        );
        let pi = FrozenPolicy::<f64>::scripted(vec![0], 3);
        let q = [0.0f64, 9.0, 0.0, 0.0]; // greedy is action 1
        let mut counts = [0u64; 3];
        let draws = 200_000;
        for _ in 0..draws {
            let sel = fc.select_action(&q, Some(&pi), 0, &state_obs, 3).unwrap();
            counts[sel.primitive_action] += 1;
        }
        let floor = eps / 4.0;
        for (a, &c) in counts.iter().enumerate() {
            let freq = c as f64 / draws as f64;
            assert!(freq > floor - 0.01, "action {a} frequency {freq} below floor");
        }
    }

    #[test]
    fn relabel_duplicates_extra_action_only() {
        let base = Transition {
            state: 0,
            action: 3,
            primitive_action: 2,
            reward_ext: 1.0f64,
            reward_int: 0.0,
            next_state: 1,
            terminal: false,
            from_pretrained: true,
            behavior_prob: 0.2,
        };
        let out = relabel(&base, 3).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].action, 3);
        assert_eq!(out[1].action, 2);
        assert_eq!(out[0].reward_ext, out[1].reward_ext);
        assert_eq!(out[0].next_state, out[1].next_state);

        let plain = Transition {
            action: 1,
            primitive_action: 1,
            from_pretrained: false,
            ..base.clone()
        };
        assert_eq!(relabel(&plain, 3).unwrap(), vec![plain.clone()]);

        let flight = Transition {
            action: 1,
            primitive_action: 1,
            from_pretrained: true,
            ..base.clone()
        };
        assert_eq!(relabel(&flight, 3).unwrap().len(), 1);

        let broken = Transition {
            primitive_action: 3,
            ..base
        };
        assert!(matches!(
            relabel(&broken, 3),
            Err(Error::DataIntegrity(_))
        ));
    }

    #[test]
    fn frozen_policy_digest_stable_across_use() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut qf = QFunction::<f64>::tabular(3, 2, false);
        qf.set_value(0, 1, 2.0);
        let pi = FrozenPolicy::greedy(qf);
        let before = pi.digest();
        for s in 0..3 {
            pi.act(s, &state_obs, &mut rng);
        }
        assert_eq!(before, pi.digest());
        let other = FrozenPolicy::<f64>::scripted(vec![0, 1, 0], 2);
        assert_ne!(before, other.digest());
    }

    #[test]
    fn soft_greedy_mixes_uniform_actions() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut qf = QFunction::<f64>::tabular(1, 3, false);
        qf.set_value(0, 1, 5.0);
        let pi = FrozenPolicy::soft_greedy(qf, 0.3);
        let mut counts = [0u64; 3];
        let draws = 90_000;
        for _ in 0..draws {
            counts[pi.act(0, &state_obs, &mut rng)] += 1;
        }
        let f1 = counts[1] as f64 / draws as f64;
        assert!((f1 - 0.8).abs() < 0.01, "greedy freq {f1}");
        for a in [0, 2] {
            let f = counts[a] as f64 / draws as f64;
            assert!((f - 0.1).abs() < 0.01, "uniform freq {f}");
        }
        // eps = 0 degenerates to the plain greedy kind
        assert!(matches!(
            FrozenPolicy::soft_greedy(QFunction::<f64>::tabular(1, 3, false), 0.0),
            FrozenPolicy::Greedy { .. }
        ));
    }

    #[test]
    fn epsilon_ladder_shape() {
        let eps = actor_epsilons(4, 0.4);
        assert_eq!(eps.len(), 4);
        assert!((eps[0] - 0.4).abs() < 1e-12);
        for w in eps.windows(2) {
            assert!(w[1] < w[0]);
        }
        assert_eq!(actor_epsilons(1, 0.4), vec![0.4]);
    }

    #[test]
    fn log_uniform_ks_statistic_small() {
        let mut fc = controller(ExplorationMode::BtFull, 0.1, 21);
        let n = 100_000;
        let mut samples: Vec<f64> = (0..n)
            .map(|_| {
                fc.begin_episode();
                fc.eps_levy()
            })
            .collect();
        samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let (lo, hi) = (1e-4f64.ln(), 0.1f64.ln());
        let mut ks: f64 = 0.0;
        for (i, s) in samples.iter().enumerate() {
            let theory = (s.ln() - lo) / (hi - lo);
            let emp_hi = (i + 1) as f64 / n as f64;
            let emp_lo = i as f64 / n as f64;
            ks = ks.max((theory - emp_hi).abs()).max((theory - emp_lo).abs());
        }
        assert!(ks < 0.01, "KS statistic {ks}");
    }
}
