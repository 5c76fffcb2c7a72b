//! Actor/learner/evaluator orchestration.
//!
//! Actors collect experience with snapshot parameters refreshed on a fixed
//! step schedule and insert transitions (with intrinsic rewards computed at
//! collection time during pre-training) into the shared replay buffer. A
//! single learner samples prioritized sequences, applies multi-step backups,
//! writes back priorities and publishes fresh snapshots. The evaluator runs
//! greedy episodes on its own environment instance. In deterministic mode
//! everything is serialized into one thread with a fixed interleave:
//! actors round-robin one step each, the learner runs on its step cadence,
//! evaluations land exactly on their boundaries.

use super::checkpoint::Checkpoint;
use super::config::{ExperimentConfig, Phase};
use super::metrics::{EvalRow, RunRecord};
use crate::env::{make_env, Environment, StateId, Transition};
use crate::error::{Error, Result};
use crate::explore::{
    actor_epsilons, relabel, ExplorationMode, FlightConfig, FlightController, FrozenPolicy,
};
use crate::intrinsic::{ngu_reward, EmbeddingFn, EmbeddingMode, EpisodicMemory, RndState};
use crate::learner::{
    greedy_distribution, init_from_checkpoint, peng_targets, retrace_targets, LearnerConfig,
    LearnerState, Obs, QFunction, ReprMode, RewardSource,
};
use crate::num::argmax_tie_low;
use crate::replay::SequenceBuffer;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::HashSet;
use std::sync::atomic::{AtomicBool, AtomicI64, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Instant;

fn derive_seed(base: u64, stream: u64) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(stream.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

/// Observation mapper shared by every worker. Chooses between state ids
/// (tabular) and precomputed feature vectors (encoder) once at build time.
#[derive(Clone)]
struct ObsMap {
    repr_mode: ReprMode,
    table: Arc<Vec<Vec<f64>>>,
}

impl ObsMap {
    fn build(env: &Environment<f64>, repr_mode: ReprMode) -> ObsMap {
        let table = (0..env.n_states()).map(|s| env.obs(s)).collect();
        ObsMap {
            repr_mode,
            table: Arc::new(table),
        }
    }

    fn obs(&self, s: StateId) -> Obs<f64> {
        match self.repr_mode {
            ReprMode::Tabular => Obs::State(s),
            ReprMode::EncoderHead => Obs::Features(self.table[s].clone()),
        }
    }

    fn features(&self, s: StateId) -> &[f64] {
        &self.table[s]
    }
}

/// How a pre-trained policy reads the running environment's states. A
/// policy trained on the flagless variant of the same environment (same
/// underlying dynamics, different reward bookkeeping) sees the cell index
/// and the positional observation prefix; the per-episode pickup flags are
/// dropped.
#[derive(Debug, Clone)]
struct PiView {
    /// State ids divide by this to recover the policy's state (1 = direct).
    flag_combos: usize,
    /// Length of the observation prefix fed to an encoder policy.
    obs_prefix: usize,
    tabular_pi: bool,
}

impl PiView {
    fn build(pi: &FrozenPolicy<f64>, env: &Environment<f64>) -> Result<PiView> {
        let full_states = env.n_states();
        let cells = env.n_cells();
        let combos = full_states / cells;
        let direct = PiView {
            flag_combos: 1,
            obs_prefix: env.obs_dim(),
            tabular_pi: true,
        };
        let cell_only = PiView {
            flag_combos: combos,
            obs_prefix: env.base_obs_dim(),
            tabular_pi: true,
        };
        match pi {
            FrozenPolicy::Greedy { qf } => match qf.arch().repr_mode {
                ReprMode::Tabular => {
                    let ns = qf.arch().n_states;
                    if ns == full_states {
                        Ok(direct)
                    } else if ns == cells {
                        Ok(cell_only)
                    } else {
                        Err(Error::Validation(format!(
                            "pre-trained policy covers {ns} states; environment has {full_states} ({cells} cells)"
                        )))
                    }
                }
                ReprMode::EncoderHead => {
                    let od = qf.arch().obs_dim;
                    if od == env.obs_dim() {
                        Ok(PiView { tabular_pi: false, ..direct })
                    } else if od == env.base_obs_dim() {
                        Ok(PiView { tabular_pi: false, ..cell_only })
                    } else {
                        Err(Error::Validation(format!(
                            "pre-trained policy reads {od}-dim observations; environment emits {}-dim",
                            env.obs_dim()
                        )))
                    }
                }
            },
            FrozenPolicy::Scripted { actions, .. } => {
                if actions.len() == full_states {
                    Ok(direct)
                } else if actions.len() == cells {
                    Ok(cell_only)
                } else {
                    Err(Error::Validation(
                        "scripted policy table does not match the state space".into(),
                    ))
                }
            }
        }
    }

    /// The policy-frame state and observation closure for a given state.
    fn pi_state(&self, state: StateId) -> StateId {
        state / self.flag_combos
    }

    fn pi_obs_fn<'m>(&self, state: StateId, obs_map: &'m ObsMap) -> impl Fn(StateId) -> Obs<f64> + 'm {
        let tabular = self.tabular_pi;
        let feats: Vec<f64> = if tabular {
            Vec::new()
        } else {
            obs_map.features(state)[..self.obs_prefix].to_vec()
        };
        move |s: StateId| {
            if tabular {
                Obs::State(s)
            } else {
                Obs::Features(feats.clone())
            }
        }
    }

    fn act<R: rand::Rng>(
        &self,
        pi: &FrozenPolicy<f64>,
        state: StateId,
        obs_map: &ObsMap,
        rng: &mut R,
    ) -> usize {
        pi.act(self.pi_state(state), &self.pi_obs_fn(state, obs_map), rng)
    }
}

/// Immutable parameter snapshot actors read; refreshed by the learner.
#[derive(Clone)]
struct Snapshot {
    qf: QFunction<f64>,
    rnd: Option<RndState<f64>>,
    embed: Option<EmbeddingFn<f64>>,
}

/// Everything the learner owns exclusively.
struct LearnKit {
    learner: LearnerState<f64>,
    rnd: Option<RndState<f64>>,
    embed: Option<EmbeddingFn<f64>>,
    rng: ChaCha8Rng,
}

impl LearnKit {
    fn snapshot(&self) -> Snapshot {
        Snapshot {
            qf: self.learner.online.clone(),
            rnd: self.rnd.clone(),
            embed: self.embed.clone(),
        }
    }
}

/// Training-stream accumulators between two evaluation rows.
#[derive(Default)]
struct TrainWindow {
    steps: u64,
    flight_steps: u64,
    eps_levy_sum: f64,
    eps_levy_count: u64,
}

struct Shared {
    buffer: Mutex<SequenceBuffer<f64>>,
    learn: Mutex<LearnKit>,
    snapshot: RwLock<Arc<Snapshot>>,
    env_steps: AtomicU64,
    next_episode_id: AtomicU64,
    first_reward_step: AtomicI64,
    window: Mutex<TrainWindow>,
    stop: AtomicBool,
}

struct ActorCtx {
    env: Environment<f64>,
    fc: FlightController,
    memory: EpisodicMemory<f64>,
    /// True once the episode's initial state has been folded into `memory`.
    memory_primed: bool,
    episode_id: u64,
    steps_since_refresh: u64,
    snapshot: Option<Arc<Snapshot>>,
}

struct Engine<'a> {
    cfg: &'a ExperimentConfig,
    obs_map: ObsMap,
    pi_p: Option<&'a FrozenPolicy<f64>>,
    pi_view: Option<PiView>,
    n_actions_base: usize,
    extra_action: bool,
    shared: Shared,
}

impl<'a> Engine<'a> {
    fn log_episode_start(&self, fc: &FlightController) {
        let mut w = self.shared.window.lock().unwrap();
        w.eps_levy_sum += fc.eps_levy();
        w.eps_levy_count += 1;
    }

    fn make_actor(&self, index: usize) -> Result<ActorCtx> {
        let cfg = self.cfg;
        let eps_ladder = actor_epsilons(cfg.run.n_actors, cfg.explore.eps_max);
        let flight_cfg = FlightConfig {
            mode: if cfg.run.phase.is_pretrain() {
                ExplorationMode::EpsGreedy
            } else {
                cfg.explore.mode
            },
            eps: eps_ladder[index],
            eps_levy_min: cfg.explore.eps_levy_min,
            eps_levy_max: cfg.explore.eps_levy_max,
            zeta_mu: cfg.explore.zeta_mu,
            zeta_cap: cfg.explore.zeta_cap,
        };
        let mut env = make_env(cfg.env.clone())?;
        env.reset();
        let fc = FlightController::new(
            flight_cfg,
            derive_seed(cfg.run.seed, 100 + index as u64),
        );
        self.log_episode_start(&fc);
        Ok(ActorCtx {
            env,
            fc,
            memory: EpisodicMemory::new(),
            memory_primed: false,
            episode_id: self.shared.next_episode_id.fetch_add(1, Ordering::Relaxed),
            steps_since_refresh: 0,
            snapshot: None,
        })
    }

    /// Novelty of a state on arrival, computed from the snapshot networks
    /// and the actor's own episodic memory. Queries the memory against the
    /// states seen so far this episode, then appends the state's embedding.
    /// The reward attaches to the transition that arrived at `state`; the
    /// initial state of an episode is folded in with no transition to pay.
    fn observe_state_novelty(&self, actor: &mut ActorCtx, state: StateId) -> Result<f64> {
        let snap = actor.snapshot.as_ref().expect("snapshot present");
        let obs = self.obs_map.features(state);
        let rnd = snap.rnd.as_ref().expect("rnd state in pretrain");
        let err = rnd.rnd_error(obs);
        Ok(match self.cfg.run.phase {
            Phase::PretrainNgu => {
                let embed = snap.embed.as_ref().expect("embedding in pretrain");
                let e = embed.embed(obs)?;
                let r_epi =
                    crate::intrinsic::episodic_reward(&mut actor.memory, &e, &self.cfg.intrinsic.ngu);
                actor.memory.insert(e);
                ngu_reward(r_epi, rnd.lifelong_modulator(err), self.cfg.intrinsic.ngu.l_max)
            }
            Phase::PretrainRnd => rnd.rnd_reward(err),
            Phase::Transfer => unreachable!("intrinsic reward only in pretrain"),
        })
    }

    fn actor_step(&self, actor: &mut ActorCtx) -> Result<()> {
        if actor.snapshot.is_none() || actor.steps_since_refresh >= self.cfg.run.actor_refresh {
            actor.snapshot = Some(self.shared.snapshot.read().unwrap().clone());
            actor.steps_since_refresh = 0;
        }
        actor.steps_since_refresh += 1;

        let state = actor.env.state();
        let pretrain = self.cfg.run.phase.is_pretrain();
        if pretrain && !actor.memory_primed {
            let _ = self.observe_state_novelty(actor, state)?;
            actor.memory_primed = true;
        }

        let obs_map = self.obs_map.clone();
        let obs_of = move |s: StateId| obs_map.obs(s);
        let q = actor
            .snapshot
            .as_ref()
            .unwrap()
            .qf
            .q_values(&obs_of(state));
        let sel = match (self.pi_p, &self.pi_view) {
            (Some(pi), Some(view)) => {
                let pi_obs = view.pi_obs_fn(state, &self.obs_map);
                actor.fc.select_action(
                    &q,
                    Some(pi),
                    view.pi_state(state),
                    &pi_obs,
                    self.n_actions_base,
                )?
            }
            _ => actor.fc.select_action(&q, None, state, &obs_of, self.n_actions_base)?,
        };
        let (next_state, reward_ext, terminal) = actor.env.step(sel.primitive_action)?;
        let reward_int = if pretrain {
            self.observe_state_novelty(actor, next_state)?
        } else {
            0.0
        };

        if reward_ext != 0.0 {
            let step_now = self.shared.env_steps.load(Ordering::Relaxed) as i64 + 1;
            let _ = self.shared.first_reward_step.compare_exchange(
                -1,
                step_now,
                Ordering::Relaxed,
                Ordering::Relaxed,
            );
        }
        {
            let mut w = self.shared.window.lock().unwrap();
            w.steps += 1;
            if sel.in_flight {
                w.flight_steps += 1;
            }
        }

        let tr = Transition {
            state,
            action: sel.learn_action,
            primitive_action: sel.primitive_action,
            reward_ext,
            reward_int,
            next_state,
            terminal,
            from_pretrained: sel.from_pretrained,
            behavior_prob: sel.behavior_prob,
        };
        let outs = if self.extra_action {
            relabel(&tr, self.n_actions_base)?
        } else {
            vec![tr]
        };
        {
            let mut buf = self.shared.buffer.lock().unwrap();
            for t in outs {
                buf.append(actor.episode_id, t)?;
            }
            if terminal {
                buf.end_episode(actor.episode_id)?;
            }
        }
        if terminal {
            actor.env.reset();
            actor.fc.begin_episode();
            actor.memory.reset_episode();
            actor.memory_primed = false;
            actor.episode_id = self.shared.next_episode_id.fetch_add(1, Ordering::Relaxed);
            self.log_episode_start(&actor.fc);
        }
        Ok(())
    }

    fn learner_update(&self) -> Result<()> {
        let mut kit = self.shared.learn.lock().unwrap();
        let batch = {
            let buf = self.shared.buffer.lock().unwrap();
            if buf.len() < self.cfg.learner.min_fill {
                return Ok(());
            }
            buf.sample(self.cfg.learner.batch_size, &mut kit.rng)
        };
        if batch.is_empty() {
            return Ok(());
        }
        let obs_map = self.obs_map.clone();
        let obs_of = move |s: StateId| obs_map.obs(s);
        let gamma = self.cfg.learner.gamma;
        let mut targets: Vec<Vec<f64>> = Vec::with_capacity(batch.len());
        for (_, rec) in &batch {
            let t = if self.cfg.run.phase.is_pretrain() {
                let target_net = &kit.learner.target;
                let pi = |obs: &Obs<f64>| greedy_distribution(target_net, obs);
                let mu: Vec<f64> = rec.transitions.iter().map(|t| t.behavior_prob).collect();
                retrace_targets(
                    &rec.transitions,
                    target_net,
                    &obs_of,
                    &pi,
                    &mu,
                    gamma,
                    self.cfg.learner.lambda_retrace,
                    RewardSource::Intrinsic,
                )?
            } else {
                peng_targets(
                    &rec.transitions,
                    &kit.learner.target,
                    &obs_of,
                    gamma,
                    self.cfg.learner.lambda_q,
                    RewardSource::Extrinsic,
                )?
            };
            targets.push(t);
        }
        let batch_refs: Vec<(&[Transition<f64>], &[f64])> = batch
            .iter()
            .zip(&targets)
            .map(|((_, rec), t)| (rec.transitions.as_slice(), t.as_slice()))
            .collect();
        let priorities = kit.learner.apply_update(&batch_refs, &obs_of)?;
        {
            let ids: Vec<u64> = batch.iter().map(|(id, _)| *id).collect();
            let mut buf = self.shared.buffer.lock().unwrap();
            buf.update_priorities(&ids, &priorities)?;
        }

        if self.cfg.run.phase.is_pretrain() {
            // the embedding and the lifelong-novelty predictor train on the
            // last five transitions of every sampled sequence
            let mut rnd_batch: Vec<Vec<f64>> = Vec::new();
            let mut id_batch: Vec<(Vec<f64>, usize, Vec<f64>)> = Vec::new();
            for (_, rec) in &batch {
                let n = rec.transitions.len();
                for t in &rec.transitions[n.saturating_sub(5)..] {
                    rnd_batch.push(self.obs_map.features(t.state).to_vec());
                    id_batch.push((
                        self.obs_map.features(t.state).to_vec(),
                        t.primitive_action,
                        self.obs_map.features(t.next_state).to_vec(),
                    ));
                }
            }
            if let Some(rnd) = kit.rnd.as_mut() {
                rnd.rnd_train(&rnd_batch)?;
            }
            if let Some(embed) = kit.embed.as_mut() {
                if embed.mode == EmbeddingMode::InverseDynamics {
                    embed.train_inverse_dynamics(&id_batch)?;
                }
            }
        }

        *self.shared.snapshot.write().unwrap() = Arc::new(kit.snapshot());
        Ok(())
    }

    fn eval_row(
        &self,
        env_steps: u64,
        eval_env: &mut Environment<f64>,
        eval_rng: &mut ChaCha8Rng,
        record: &mut RunRecord,
        started: Instant,
    ) -> Result<()> {
        let qf = {
            let kit = self.shared.learn.lock().unwrap();
            kit.learner.online.clone()
        };
        let summary = evaluate_with_map(
            &qf,
            self.pi_p.zip(self.pi_view.as_ref()),
            eval_env,
            self.cfg.run.eval_episodes,
            &self.obs_map,
            eval_rng,
        )?;
        let window = {
            let mut w = self.shared.window.lock().unwrap();
            std::mem::take(&mut *w)
        };
        let flight_fraction = if window.steps > 0 {
            window.flight_steps as f64 / window.steps as f64
        } else {
            0.0
        };
        let mean_eps_levy = if window.eps_levy_count > 0 {
            window.eps_levy_sum / window.eps_levy_count as f64
        } else {
            0.0
        };
        record.push(EvalRow {
            env_steps,
            mean_return: summary.mean_return,
            median_return: summary.median_return,
            steps_to_first_reward: self.shared.first_reward_step.load(Ordering::Relaxed),
            extra_action_usage: summary.extra_action_usage,
            flight_fraction,
            mean_eps_levy,
            state_coverage: summary.mean_unique_states,
            wall_time_ms: if self.cfg.run.deterministic {
                0
            } else {
                started.elapsed().as_millis() as u64
            },
        })
    }

    /// Fixed-interleave single-threaded schedule.
    fn run_deterministic(&self) -> Result<RunRecord> {
        let cfg = self.cfg;
        let started = Instant::now();
        let mut eval_env = make_env(cfg.env.clone())?;
        let mut eval_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.run.seed, 5));
        let mut record = RunRecord::default();
        let mut actors: Vec<ActorCtx> = (0..cfg.run.n_actors)
            .map(|i| self.make_actor(i))
            .collect::<Result<_>>()?;
        // baseline evaluation before any training
        self.eval_row(0, &mut eval_env, &mut eval_rng, &mut record, started)?;
        // rows are strictly increasing; step 0 is the baseline
        let mut steps = 0u64;
        while steps < cfg.run.total_env_steps {
            let actor = &mut actors[(steps % cfg.run.n_actors as u64) as usize];
            self.actor_step(actor)?;
            steps += 1;
            self.shared.env_steps.store(steps, Ordering::Relaxed);
            if steps % cfg.learner.update_every == 0 {
                self.learner_update()?;
            }
            if steps % cfg.run.eval_every == 0 {
                self.eval_row(steps, &mut eval_env, &mut eval_rng, &mut record, started)?;
            }
        }
        Ok(record)
    }

    /// Concurrent schedule: one thread per actor, the learner and evaluator
    /// on the coordinating thread.
    fn run_threaded(&self) -> Result<RunRecord> {
        let cfg = self.cfg;
        let started = Instant::now();
        let mut eval_env = make_env(cfg.env.clone())?;
        let mut eval_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.run.seed, 5));
        let mut record = RunRecord::default();
        self.eval_row(0, &mut eval_env, &mut eval_rng, &mut record, started)?;
        let total = cfg.run.total_env_steps;
        let errors: Mutex<Vec<Error>> = Mutex::new(Vec::new());
        std::thread::scope(|scope| -> Result<()> {
            for i in 0..cfg.run.n_actors {
                let mut actor = self.make_actor(i)?;
                let errors = &errors;
                let shared = &self.shared;
                let engine = &*self;
                scope.spawn(move || {
                    while !shared.stop.load(Ordering::Relaxed) {
                        let step = shared.env_steps.fetch_add(1, Ordering::Relaxed);
                        if step >= total {
                            shared.env_steps.store(total, Ordering::Relaxed);
                            break;
                        }
                        if let Err(e) = engine.actor_step(&mut actor) {
                            errors.lock().unwrap().push(e);
                            shared.stop.store(true, Ordering::Relaxed);
                            break;
                        }
                    }
                });
            }
            // learner/evaluator loop on this thread
            let mut updates_done = 0u64;
            let mut next_eval = cfg.run.eval_every;
            loop {
                let steps = self.shared.env_steps.load(Ordering::Relaxed).min(total);
                let due_updates = steps / cfg.learner.update_every;
                if updates_done < due_updates {
                    self.learner_update()?;
                    updates_done += 1;
                } else if steps >= total {
                    break;
                } else {
                    std::thread::yield_now();
                }
                if steps >= next_eval {
                    self.eval_row(next_eval, &mut eval_env, &mut eval_rng, &mut record, started)?;
                    next_eval += cfg.run.eval_every;
                }
                if self.shared.stop.load(Ordering::Relaxed) {
                    break;
                }
            }
            Ok(())
        })?;
        self.shared.stop.store(true, Ordering::Relaxed);
        if let Some(e) = errors.into_inner().unwrap().pop() {
            return Err(e);
        }
        // trailing evaluations that the loop exited before reaching
        let mut next = record.rows.last().map(|r| r.env_steps).unwrap_or(0) + cfg.run.eval_every;
        while next <= total {
            self.eval_row(next, &mut eval_env, &mut eval_rng, &mut record, started)?;
            next += cfg.run.eval_every;
        }
        Ok(record)
    }

    fn run(&self) -> Result<RunRecord> {
        if self.cfg.run.deterministic || self.cfg.run.n_actors == 1 {
            self.run_deterministic()
        } else {
            self.run_threaded()
        }
    }
}

fn build_engine<'a>(
    cfg: &'a ExperimentConfig,
    pi_p: Option<&'a FrozenPolicy<f64>>,
    initial_qf: QFunction<f64>,
    rnd: Option<RndState<f64>>,
    embed: Option<EmbeddingFn<f64>>,
) -> Result<Engine<'a>> {
    let probe_env = make_env(cfg.env.clone())?;
    let obs_map = ObsMap::build(&probe_env, cfg.learner.repr_mode);
    let n_actions_base = probe_env.n_actions();
    let extra_action = initial_qf.has_extra_action();
    let learner_cfg = LearnerConfig {
        gamma: cfg.learner.gamma,
        lambda_q: cfg.learner.lambda_q,
        lambda_retrace: cfg.learner.lambda_retrace,
        step_size: cfg.learner.step_size,
        target_period: cfg.learner.target_period,
        priority_eta: cfg.learner.priority_eta,
        ..LearnerConfig::default()
    };
    let pi_view = match pi_p {
        Some(pi) => Some(PiView::build(pi, &probe_env)?),
        None => None,
    };
    let kit = LearnKit {
        learner: LearnerState::new(initial_qf, learner_cfg),
        rnd,
        embed,
        rng: ChaCha8Rng::seed_from_u64(derive_seed(cfg.run.seed, 4)),
    };
    let snapshot = Arc::new(kit.snapshot());
    let buffer = SequenceBuffer::new(
        cfg.replay.capacity,
        cfg.replay.sequence_length,
        cfg.replay.overlap,
        cfg.replay.priority_exponent,
        cfg.replay.is_exponent,
    )?;
    Ok(Engine {
        cfg,
        obs_map,
        pi_p,
        pi_view,
        n_actions_base,
        extra_action,
        shared: Shared {
            buffer: Mutex::new(buffer),
            learn: Mutex::new(kit),
            snapshot: RwLock::new(snapshot),
            env_steps: AtomicU64::new(0),
            next_episode_id: AtomicU64::new(0),
            first_reward_step: AtomicI64::new(-1),
            window: Mutex::new(TrainWindow::default()),
            stop: AtomicBool::new(false),
        },
    })
}

fn fresh_qfunction(cfg: &ExperimentConfig, extra_action: bool) -> Result<QFunction<f64>> {
    let env = make_env(cfg.env.clone())?;
    Ok(match cfg.learner.repr_mode {
        ReprMode::Tabular => QFunction::tabular(env.n_states(), env.n_actions(), extra_action),
        ReprMode::EncoderHead => QFunction::encoder_head(
            env.obs_dim(),
            cfg.learner.hidden_dim,
            cfg.learner.feature_dim,
            env.n_actions(),
            extra_action,
            derive_seed(cfg.run.seed, 1),
        ),
    })
}

fn build_intrinsic(
    cfg: &ExperimentConfig,
) -> Result<(RndState<f64>, EmbeddingFn<f64>)> {
    let env = make_env(cfg.env.clone())?;
    let obs_dim = env.obs_dim();
    let sect = &cfg.intrinsic;
    let embed_dim = if sect.embedding_dim == 0 {
        obs_dim
    } else {
        sect.embedding_dim
    };
    let embed = match sect.embedding {
        EmbeddingMode::Identity => {
            if embed_dim != obs_dim {
                return Err(Error::Config(format!(
                    "identity embedding requires embedding_dim = observation dim {obs_dim}"
                )));
            }
            EmbeddingFn::identity(obs_dim)
        }
        EmbeddingMode::RandomProjection => {
            EmbeddingFn::random_projection(obs_dim, embed_dim, derive_seed(cfg.run.seed, 3))
        }
        EmbeddingMode::InverseDynamics => EmbeddingFn::inverse_dynamics(
            obs_dim,
            embed_dim,
            sect.embed_hidden,
            env.n_actions(),
            sect.embed_step_size,
            derive_seed(cfg.run.seed, 3),
        ),
    };
    let rnd = RndState::new(
        obs_dim,
        sect.rnd_hidden,
        sect.rnd_dim,
        sect.rnd_step_size,
        sect.sigma_floor,
        derive_seed(cfg.run.seed, 2),
    );
    Ok((rnd, embed))
}

/// Reward-free pre-training: actors optimize the intrinsic reward only and
/// the resulting greedy policy is checkpointed.
pub fn pretrain_run(cfg: &ExperimentConfig) -> Result<(Checkpoint, RunRecord)> {
    cfg.validate()?;
    if !cfg.run.phase.is_pretrain() {
        return Err(Error::Config("pretrain_run requires a pretrain phase".into()));
    }
    let qf = fresh_qfunction(cfg, false)?;
    let (rnd, embed) = build_intrinsic(cfg)?;
    let engine = build_engine(cfg, None, qf, Some(rnd), Some(embed))?;
    let record = engine.run()?;
    let kit = engine.shared.learn.into_inner().unwrap();
    let checkpoint = Checkpoint {
        qf: kit.learner.online,
        phase: cfg.run.phase,
        steps: cfg.run.total_env_steps,
        seed: cfg.run.seed,
    };
    Ok((checkpoint, record))
}

/// Downstream training on the extrinsic reward, optionally initialized from
/// and/or exploring with a pre-trained policy. The frozen policy's digest is
/// verified unchanged at the end of the run.
pub fn transfer_run(cfg: &ExperimentConfig) -> Result<RunRecord> {
    cfg.validate()?;
    if cfg.run.phase != Phase::Transfer {
        return Err(Error::Config("transfer_run requires run.phase = transfer".into()));
    }
    let checkpoint = match &cfg.run.pretrained_checkpoint {
        Some(path) => Some(Checkpoint::read(path)?),
        None => None,
    };
    let pi_p = if cfg.explore.mode.needs_pretrained() {
        let ck = checkpoint
            .as_ref()
            .ok_or_else(|| Error::Config("exploration mode requires a checkpoint".into()))?;
        Some(FrozenPolicy::soft_greedy(ck.qf.clone(), cfg.explore.pi_p_eps))
    } else {
        None
    };
    let digest_before = pi_p.as_ref().map(|p| p.digest());

    let fresh = fresh_qfunction(cfg, cfg.explore.mode.uses_extra_action())?;
    let initial = match (&checkpoint, cfg.run.init_mode) {
        (Some(ck), mode) => init_from_checkpoint(fresh, &ck.qf, mode)?,
        (None, crate::learner::InitMode::Scratch) => fresh,
        (None, _) => {
            return Err(Error::Config(
                "partial/full initialization requires a checkpoint".into(),
            ))
        }
    };
    let engine = build_engine(cfg, pi_p.as_ref(), initial, None, None)?;
    let record = engine.run()?;
    if let (Some(pi), Some(before)) = (&pi_p, digest_before) {
        if pi.digest() != before {
            return Err(Error::Integrity(
                "frozen policy digest changed during transfer".into(),
            ));
        }
    }
    Ok(record)
}

/// Summary statistics of greedy evaluation rollouts.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub returns: Vec<f64>,
    pub mean_return: f64,
    pub median_return: f64,
    pub mean_length: f64,
    /// Fraction of steps whose greedy choice was the extra pseudo-action.
    pub extra_action_usage: f64,
    pub mean_unique_states: f64,
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

fn evaluate_with_map(
    qf: &QFunction<f64>,
    pi: Option<(&FrozenPolicy<f64>, &PiView)>,
    env: &mut Environment<f64>,
    episodes: usize,
    obs_map: &ObsMap,
    rng: &mut ChaCha8Rng,
) -> Result<EvalSummary> {
    if episodes == 0 {
        return Err(Error::Validation("evaluation needs at least one episode".into()));
    }
    if qf.has_extra_action() && pi.is_none() {
        return Err(Error::Validation(
            "evaluating an extra-action policy requires the pre-trained policy".into(),
        ));
    }
    let obs_of = |s: StateId| obs_map.obs(s);
    let mut returns = Vec::with_capacity(episodes);
    let mut total_steps = 0u64;
    let mut extra_steps = 0u64;
    let mut unique_total = 0.0;
    for _ in 0..episodes {
        let mut state = env.reset();
        let mut ep_return = 0.0;
        let mut visited: HashSet<StateId> = HashSet::new();
        visited.insert(state);
        while !env.is_done() {
            let q = qf.q_values(&obs_of(state));
            let mut action = argmax_tie_low(&q);
            if Some(action) == qf.extra_action_index() {
                extra_steps += 1;
                let (pi_p, view) = pi.expect("checked above");
                action = view.act(pi_p, state, obs_map, rng);
            }
            let (next, reward, _) = env.step(action)?;
            ep_return += reward;
            state = next;
            visited.insert(state);
            total_steps += 1;
        }
        returns.push(ep_return);
        unique_total += visited.len() as f64;
    }
    let mut sorted = returns.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(EvalSummary {
        mean_return: returns.iter().sum::<f64>() / episodes as f64,
        median_return: median(&sorted),
        mean_length: total_steps as f64 / episodes as f64,
        extra_action_usage: if total_steps > 0 {
            extra_steps as f64 / total_steps as f64
        } else {
            0.0
        },
        mean_unique_states: unique_total / episodes as f64,
        returns,
    })
}

/// Greedy evaluation of a policy on an environment: the extra pseudo-action
/// is resolved by sampling the pre-trained policy.
pub fn evaluate(
    qf: &QFunction<f64>,
    pi_p: Option<&FrozenPolicy<f64>>,
    env: &mut Environment<f64>,
    episodes: usize,
    rng: &mut ChaCha8Rng,
) -> Result<EvalSummary> {
    let obs_map = ObsMap::build(env, qf.arch().repr_mode);
    let view = match pi_p {
        Some(pi) => Some(PiView::build(pi, env)?),
        None => None,
    };
    evaluate_with_map(qf, pi_p.zip(view.as_ref()), env, episodes, &obs_map, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{EnvKind, RewardVariant};

    fn base_config(extra: &str) -> ExperimentConfig {
        let text = format!(
            "run.phase = transfer\n\
             env.kind = chain\n\
             env.size = 6\n\
             env.goal_reward = 1.0\n\
             run.total_env_steps = 4000\n\
             run.eval_every = 1000\n\
             run.eval_episodes = 3\n\
             run.n_actors = 2\n\
             run.deterministic = true\n\
             learner.step_size = 0.02\n\
             learner.min_fill = 5\n\
             replay.sequence_length = 8\n\
             {extra}"
        );
        ExperimentConfig::from_text(&text).unwrap()
    }

    #[test]
    fn deterministic_transfer_run_is_reproducible() {
        let cfg = base_config("");
        let a = transfer_run(&cfg).unwrap();
        let b = transfer_run(&cfg).unwrap();
        assert_eq!(a, b);
        // baseline row plus one row per eval boundary
        assert_eq!(a.rows.len() as u64, 1 + 4000 / 1000);
        assert_eq!(a.rows[0].env_steps, 0);
        assert_eq!(a.rows.last().unwrap().env_steps, 4000);
    }

    #[test]
    fn eps_greedy_learns_dense_line() {
        let mut cfg = base_config("run.seed = 7\n");
        cfg.env.kind = EnvKind::DenseLine;
        let record = transfer_run(&cfg).unwrap();
        let last = record.rows.last().unwrap();
        // optimal greedy: five rightward moves (reward 1 each) plus the goal
        assert!(
            last.mean_return > 5.5,
            "greedy return {} after training",
            last.mean_return
        );
        assert!(last.steps_to_first_reward > 0);
    }

    #[test]
    fn evaluate_deterministic_and_usage_zero_without_extra() {
        let mut env = make_env(crate::env::EnvSpec::new(
            EnvKind::Chain,
            4,
            RewardVariant::Standard,
            2.0,
        ))
        .unwrap();
        let mut qf = QFunction::<f64>::tabular(4, 3, false);
        for s in 0..4 {
            qf.set_value(s, 1, 1.0);
        }
        let summary = evaluate(&qf, None, &mut env, 4).unwrap();
        assert_eq!(summary.extra_action_usage, 0.0);
        assert!(summary.returns.iter().all(|&r| r == summary.returns[0]));
        assert_eq!(summary.mean_return, 2.0);
        assert_eq!(summary.mean_unique_states, 4.0);
    }

    #[test]
    fn evaluate_usage_one_when_extra_strictly_maximal() {
        let mut env = make_env(crate::env::EnvSpec::new(
            EnvKind::Chain,
            4,
            RewardVariant::Standard,
            1.0,
        ))
        .unwrap();
        let mut qf = QFunction::<f64>::tabular(4, 3, true);
        for s in 0..4 {
            qf.set_value(s, 3, 10.0);
        }
        let pi = FrozenPolicy::scripted(vec![1; 4], 3);
        let summary = evaluate(&qf, Some(&pi), &mut env, 2).unwrap();
        assert_eq!(summary.extra_action_usage, 1.0);
        assert_eq!(summary.mean_return, 1.0);
    }

    #[test]
    fn threaded_mode_smoke() {
        let mut cfg = base_config("");
        cfg.run.deterministic = false;
        cfg.run.n_actors = 3;
        let record = transfer_run(&cfg).unwrap();
        assert!(record.rows.len() >= 2);
        assert_eq!(record.rows.last().unwrap().env_steps, 4000);
    }
}
