//! Value-function representation and multi-step off-policy backups.
//!
//! The Q-function is an encoder/head pair over the extended action set (the
//! split is what makes partial vs full weight transfer meaningful). Tabular
//! mode uses a one-hot encoder, so the head is simply the Q-table. Training
//! uses Peng's Q(lambda) downstream and Retrace(lambda) for pre-training,
//! both computed against a periodically synchronized target network.

use crate::env::{StateId, Transition};
use crate::error::{Error, Result};
use crate::nn::{Adam, Linear, TwoLayerNet};
use crate::num::{argmax_tie_low, real, Real};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReprMode {
    Tabular,
    EncoderHead,
}

/// Observation handed to a Q-function: a discrete state id for tabular mode
/// or a feature vector for the encoder.
#[derive(Debug, Clone, PartialEq)]
pub enum Obs<T> {
    State(StateId),
    Features(Vec<T>),
}

/// Architecture descriptor, used for checkpoint compatibility checks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QArch {
    pub repr_mode: ReprMode,
    pub n_states: usize,
    pub obs_dim: usize,
    pub hidden_dim: usize,
    pub feature_dim: usize,
    pub n_actions_base: usize,
    pub has_extra_action: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QFunction<T> {
    arch: QArch,
    /// Tabular mode: row-major `[n_states][n_actions_out]`.
    table: Vec<T>,
    encoder: Option<TwoLayerNet<T>>,
    head: Option<Linear<T>>,
}

impl<T: Real> QFunction<T> {
    pub fn tabular(n_states: usize, n_actions_base: usize, extra_action: bool) -> Self {
        let arch = QArch {
            repr_mode: ReprMode::Tabular,
            n_states,
            obs_dim: 0,
            hidden_dim: 0,
            feature_dim: n_states,
            n_actions_base,
            has_extra_action: extra_action,
        };
        let n_out = n_actions_base + extra_action as usize;
        QFunction {
            arch,
            table: vec![T::zero(); n_states * n_out],
            encoder: None,
            head: None,
        }
    }

    pub fn encoder_head(
        obs_dim: usize,
        hidden_dim: usize,
        feature_dim: usize,
        n_actions_base: usize,
        extra_action: bool,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = TwoLayerNet::new(obs_dim, hidden_dim, feature_dim, false, &mut rng);
        let n_out = n_actions_base + extra_action as usize;
        let head = Linear::xavier(feature_dim, n_out, &mut rng);
        QFunction {
            arch: QArch {
                repr_mode: ReprMode::EncoderHead,
                n_states: 0,
                obs_dim,
                hidden_dim,
                feature_dim,
                n_actions_base,
                has_extra_action: extra_action,
            },
            table: Vec::new(),
            encoder: Some(encoder),
            head: Some(head),
        }
    }

    pub fn arch(&self) -> &QArch {
        &self.arch
    }

    pub fn n_actions_base(&self) -> usize {
        self.arch.n_actions_base
    }

    pub fn has_extra_action(&self) -> bool {
        self.arch.has_extra_action
    }

    pub fn n_actions_out(&self) -> usize {
        self.arch.n_actions_base + self.arch.has_extra_action as usize
    }

    /// Index of the extra pseudo-action (always the last slot).
    pub fn extra_action_index(&self) -> Option<usize> {
        self.arch.has_extra_action.then_some(self.arch.n_actions_base)
    }

    pub fn q_values(&self, obs: &Obs<T>) -> Vec<T> {
        match (self.arch.repr_mode, obs) {
            (ReprMode::Tabular, Obs::State(s)) => {
                let n = self.n_actions_out();
                self.table[s * n..(s + 1) * n].to_vec()
            }
            (ReprMode::EncoderHead, Obs::Features(x)) => {
                let phi = self.encoder.as_ref().expect("encoder").forward(x);
                self.head.as_ref().expect("head").forward(&phi)
            }
            _ => panic!("observation kind does not match representation mode"),
        }
    }

    /// Test hook: direct write of a tabular entry.
    pub fn set_value(&mut self, state: StateId, action: usize, value: T) {
        assert_eq!(self.arch.repr_mode, ReprMode::Tabular);
        let n = self.n_actions_out();
        self.table[state * n + action] = value;
    }

    pub fn n_params(&self) -> usize {
        match self.arch.repr_mode {
            ReprMode::Tabular => self.table.len(),
            ReprMode::EncoderHead => {
                self.encoder.as_ref().unwrap().n_params() + self.head.as_ref().unwrap().n_params()
            }
        }
    }

    fn encoder_param_count(&self) -> usize {
        match self.arch.repr_mode {
            ReprMode::Tabular => 0,
            ReprMode::EncoderHead => self.encoder.as_ref().unwrap().n_params(),
        }
    }

    /// Flat parameters in the order `[encoder..., head...]`; tabular mode has
    /// an empty encoder segment and the table as head segment.
    pub fn flat_params(&self) -> Vec<T> {
        match self.arch.repr_mode {
            ReprMode::Tabular => self.table.clone(),
            ReprMode::EncoderHead => {
                let mut out = self.encoder.as_ref().unwrap().flat_params();
                let head = self.head.as_ref().unwrap();
                out.extend_from_slice(&head.w);
                out.extend_from_slice(&head.b);
                out
            }
        }
    }

    pub fn set_flat_params(&mut self, flat: &[T]) {
        assert_eq!(flat.len(), self.n_params(), "parameter count mismatch");
        match self.arch.repr_mode {
            ReprMode::Tabular => self.table.copy_from_slice(flat),
            ReprMode::EncoderHead => {
                let enc_n = self.encoder_param_count();
                self.encoder
                    .as_mut()
                    .unwrap()
                    .set_flat_params(&flat[..enc_n]);
                let head = self.head.as_mut().unwrap();
                let wn = head.w.len();
                head.w.copy_from_slice(&flat[enc_n..enc_n + wn]);
                head.b.copy_from_slice(&flat[enc_n + wn..]);
            }
        }
    }

    /// Rebuilds a Q-function from an architecture descriptor and raw
    /// parameter segments (checkpoint loading).
    pub fn from_parts(arch: &QArch, encoder: &[T], head: &[T]) -> Result<QFunction<T>> {
        let mut qf = match arch.repr_mode {
            ReprMode::Tabular => {
                QFunction::tabular(arch.n_states, arch.n_actions_base, arch.has_extra_action)
            }
            ReprMode::EncoderHead => QFunction::encoder_head(
                arch.obs_dim,
                arch.hidden_dim,
                arch.feature_dim,
                arch.n_actions_base,
                arch.has_extra_action,
                0,
            ),
        };
        let enc_n = qf.encoder_param_count();
        if enc_n != encoder.len() || qf.n_params() - enc_n != head.len() {
            return Err(Error::Validation(
                "checkpoint parameter shapes do not match the architecture".into(),
            ));
        }
        let mut flat = encoder.to_vec();
        flat.extend_from_slice(head);
        qf.set_flat_params(&flat);
        Ok(qf)
    }

    pub fn encoder_params(&self) -> Vec<T> {
        let flat = self.flat_params();
        flat[..self.encoder_param_count()].to_vec()
    }

    pub fn head_params(&self) -> Vec<T> {
        let flat = self.flat_params();
        flat[self.encoder_param_count()..].to_vec()
    }

    /// Squared TD loss of one (obs, action, target) triple and its gradient
    /// in flat-parameter layout. Exposed for gradient checks.
    pub fn q_loss_and_grads(&self, obs: &Obs<T>, action: usize, target: T) -> (T, Vec<T>) {
        let mut grads = vec![T::zero(); self.n_params()];
        let loss = self.accumulate_td_grads(obs, action, target, T::one(), &mut grads);
        (loss, grads)
    }

    /// Adds `scale * d((q - target)^2)/dparams` into `grads`; returns the
    /// squared error.
    fn accumulate_td_grads(
        &self,
        obs: &Obs<T>,
        action: usize,
        target: T,
        scale: T,
        grads: &mut [T],
    ) -> T {
        match (self.arch.repr_mode, obs) {
            (ReprMode::Tabular, Obs::State(s)) => {
                let n = self.n_actions_out();
                let q = self.table[s * n + action];
                let delta = q - target;
                grads[s * n + action] += real::<T>(2.0) * delta * scale;
                delta * delta
            }
            (ReprMode::EncoderHead, Obs::Features(x)) => {
                let encoder = self.encoder.as_ref().unwrap();
                let head = self.head.as_ref().unwrap();
                let (phi, cache) = encoder.forward_cached(x);
                let q = head.forward(&phi);
                let delta = q[action] - target;
                let mut dq = vec![T::zero(); q.len()];
                dq[action] = real::<T>(2.0) * delta * scale;
                let enc_n = self.encoder_param_count();
                let (g_enc, g_head) = grads.split_at_mut(enc_n);
                let (g_hw, g_hb) = g_head.split_at_mut(head.w.len());
                let dphi = head.backward(&phi, &dq, g_hw, g_hb);
                encoder.backward(x, &cache, &dphi, g_enc);
                delta * delta
            }
            _ => panic!("observation kind does not match representation mode"),
        }
    }

    fn max_q(&self, obs: &Obs<T>) -> T {
        self.q_values(obs)
            .into_iter()
            .fold(T::neg_infinity(), T::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    Scratch,
    Partial,
    Full,
}

/// Weight-initialization for transfer: `Scratch` keeps the fresh function,
/// `Partial` copies the encoder only, `Full` copies encoder and head. When
/// the fresh head has one extra action slot, `Full` copies the base-action
/// rows and leaves the extra slot at its fresh initialization.
pub fn init_from_checkpoint<T: Real>(
    fresh: QFunction<T>,
    source: &QFunction<T>,
    mode: InitMode,
) -> Result<QFunction<T>> {
    if mode == InitMode::Scratch {
        return Ok(fresh);
    }
    let (fa, sa) = (&fresh.arch, &source.arch);
    if fa.repr_mode != sa.repr_mode
        || fa.n_states != sa.n_states
        || fa.obs_dim != sa.obs_dim
        || fa.hidden_dim != sa.hidden_dim
        || fa.feature_dim != sa.feature_dim
        || fa.n_actions_base != sa.n_actions_base
    {
        return Err(Error::Validation(
            "checkpoint encoder architecture incompatible".into(),
        ));
    }
    let mut out = fresh;
    match out.arch.repr_mode {
        ReprMode::Tabular => {
            if mode == InitMode::Full {
                let fn_out = out.n_actions_out();
                let sn_out = source.n_actions_out();
                if fn_out < sn_out {
                    return Err(Error::Validation(
                        "checkpoint head has more actions than the new head".into(),
                    ));
                }
                for s in 0..out.arch.n_states {
                    for a in 0..sn_out {
                        out.table[s * fn_out + a] = source.table[s * sn_out + a];
                    }
                }
            }
            // Partial on tabular copies nothing: the encoder is the fixed
            // one-hot map and carries no weights.
        }
        ReprMode::EncoderHead => {
            out.encoder = source.encoder.clone();
            if mode == InitMode::Full {
                let fh = out.head.as_mut().unwrap();
                let sh = source.head.as_ref().unwrap();
                if fh.out_dim < sh.out_dim {
                    return Err(Error::Validation(
                        "checkpoint head has more actions than the new head".into(),
                    ));
                }
                for o in 0..sh.out_dim {
                    fh.w[o * fh.in_dim..(o + 1) * fh.in_dim]
                        .copy_from_slice(&sh.w[o * sh.in_dim..(o + 1) * sh.in_dim]);
                    fh.b[o] = sh.b[o];
                }
            }
        }
    }
    Ok(out)
}

/// Which stored reward the backup consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardSource {
    Extrinsic,
    Intrinsic,
}

fn reward_of<T: Real>(tr: &Transition<T>, source: RewardSource) -> T {
    match source {
        RewardSource::Extrinsic => tr.reward_ext,
        RewardSource::Intrinsic => tr.reward_int,
    }
}

/// Groups consecutive duplicate pairs produced by extra-action relabeling
/// into single backup steps, so one return fits both entries. Returns the
/// index ranges of each step.
fn group_steps<T: Real>(seq: &[Transition<T>], extra_action: Option<usize>) -> Vec<(usize, usize)> {
    let mut groups = Vec::with_capacity(seq.len());
    let mut i = 0;
    while i < seq.len() {
        let mut end = i + 1;
        if let Some(a_plus) = extra_action {
            if i + 1 < seq.len() {
                let (a, b) = (&seq[i], &seq[i + 1]);
                let duplicate = a.action == a_plus
                    && a.from_pretrained
                    && b.state == a.state
                    && b.action == a.primitive_action
                    && b.primitive_action == a.primitive_action
                    && b.next_state == a.next_state
                    && b.terminal == a.terminal;
                if duplicate {
                    end = i + 2;
                }
            }
        }
        groups.push((i, end));
        i = end;
    }
    groups
}

fn check_episode_bounds<T: Real>(seq: &[Transition<T>], groups: &[(usize, usize)]) -> Result<()> {
    if seq.is_empty() {
        return Err(Error::Validation("empty sequence".into()));
    }
    for (gi, &(start, _)) in groups.iter().enumerate() {
        if seq[start].terminal && gi != groups.len() - 1 {
            return Err(Error::Validation(
                "sequence crosses an episode boundary (terminal mid-sequence)".into(),
            ));
        }
    }
    Ok(())
}

/// Peng's Q(lambda) targets for each transition of an episode-bounded
/// sequence: backward recursion
/// `G_t = r_t + gamma * ((1 - lambda) * max_a Q(s_{t+1}, a) + lambda * G_{t+1})`,
/// with `G = r` at a terminal step and a max-bootstrap at a non-terminal cut.
pub fn peng_targets<T: Real>(
    seq: &[Transition<T>],
    qf_target: &QFunction<T>,
    obs_of: &dyn Fn(StateId) -> Obs<T>,
    gamma: T,
    lambda: T,
    reward_source: RewardSource,
) -> Result<Vec<T>> {
    let groups = group_steps(seq, qf_target.extra_action_index());
    check_episode_bounds(seq, &groups)?;
    let mut targets = vec![T::zero(); seq.len()];
    let mut g_next = T::zero();
    for (gi, &(start, end)) in groups.iter().enumerate().rev() {
        let tr = &seq[start];
        let r = reward_of(tr, reward_source);
        let g = if tr.terminal {
            r
        } else {
            let boot = qf_target.max_q(&obs_of(tr.next_state));
            if gi == groups.len() - 1 {
                r + gamma * boot
            } else {
                r + gamma * ((T::one() - lambda) * boot + lambda * g_next)
            }
        };
        for t in targets.iter_mut().take(end).skip(start) {
            *t = g;
        }
        g_next = g;
    }
    Ok(targets)
}

/// Retrace(lambda) targets:
/// `Q(s_t, a_t) + sum_{j >= t} gamma^{j-t} (prod_{i=t+1..j} c_i) delta_j`
/// with `c_i = lambda * min(1, pi(a_i | s_i) / mu_i)` and
/// `delta_j = r_j + gamma * E_{a ~ pi} Q(s_{j+1}, a) - Q(s_j, a_j)`.
/// The expectation bootstraps to zero at terminal steps. Duplicate pairs from
/// relabeling are treated as one step keyed by their first member.
pub fn retrace_targets<T: Real>(
    seq: &[Transition<T>],
    qf_target: &QFunction<T>,
    obs_of: &dyn Fn(StateId) -> Obs<T>,
    pi: &dyn Fn(&Obs<T>) -> Vec<T>,
    mu: &[T],
    gamma: T,
    lambda: T,
    reward_source: RewardSource,
) -> Result<Vec<T>> {
    if mu.len() != seq.len() {
        return Err(Error::Validation(
            "behavior probabilities length mismatch".into(),
        ));
    }
    let groups = group_steps(seq, qf_target.extra_action_index());
    check_episode_bounds(seq, &groups)?;
    for &(start, _) in &groups {
        if mu[start] <= T::zero() {
            return Err(Error::Validation(
                "behavior probability of a taken action must be positive".into(),
            ));
        }
    }

    let expected_q = |state: StateId| -> T {
        let obs = obs_of(state);
        let q = qf_target.q_values(&obs);
        let dist = pi(&obs);
        q.iter().zip(&dist).map(|(&qa, &pa)| qa * pa).sum()
    };

    let mut targets = vec![T::zero(); seq.len()];
    let mut d_next = T::zero(); // correction sum of the following step
    let mut c_next = T::zero(); // trace coefficient of the following step
    for (gi, &(start, end)) in groups.iter().enumerate().rev() {
        let tr = &seq[start];
        let r = reward_of(tr, reward_source);
        let e_next = if tr.terminal {
            T::zero()
        } else {
            expected_q(tr.next_state)
        };
        let tail = if gi == groups.len() - 1 {
            T::zero()
        } else {
            gamma * c_next * d_next
        };
        let q_taken = qf_target.q_values(&obs_of(tr.state))[tr.action];
        let delta = r + gamma * e_next - q_taken;
        let target = r + gamma * e_next + tail;
        for t in targets.iter_mut().take(end).skip(start) {
            *t = target;
        }
        d_next = delta + tail;
        let ratio = pi(&obs_of(tr.state))[tr.action] / mu[start];
        c_next = lambda * ratio.min(T::one());
    }
    Ok(targets)
}

/// Greedy one-hot distribution over a Q-function's actions (ties to the
/// lowest index); the target policy used with Retrace.
pub fn greedy_distribution<T: Real>(qf: &QFunction<T>, obs: &Obs<T>) -> Vec<T> {
    let q = qf.q_values(obs);
    let mut dist = vec![T::zero(); q.len()];
    dist[argmax_tie_low(&q)] = T::one();
    dist
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnerConfig<T> {
    pub gamma: T,
    pub lambda_q: T,
    pub lambda_retrace: T,
    pub step_size: T,
    pub target_period: u64,
    /// Priority mixture weight between max and mean absolute TD error.
    pub priority_eta: T,
    pub adam_beta1: T,
    pub adam_beta2: T,
    pub adam_eps: T,
}

impl<T: Real> Default for LearnerConfig<T> {
    fn default() -> Self {
        LearnerConfig {
            gamma: real(0.99),
            lambda_q: real(0.7),
            lambda_retrace: real(0.95),
            step_size: real(2e-4),
            target_period: 1500,
            priority_eta: real(0.9),
            adam_beta1: real(0.9),
            adam_beta2: real(0.999),
            adam_eps: real(1e-4),
        }
    }
}

/// Online/target pair plus optimizer state. Owned by a single learner;
/// actors only ever see parameter snapshots.
#[derive(Debug, Clone)]
pub struct LearnerState<T> {
    pub online: QFunction<T>,
    pub target: QFunction<T>,
    pub update_count: u64,
    pub cfg: LearnerConfig<T>,
    opt: Adam<T>,
}

impl<T: Real> LearnerState<T> {
    pub fn new(qf: QFunction<T>, cfg: LearnerConfig<T>) -> Self {
        let opt = Adam::new(qf.n_params(), cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
        LearnerState {
            target: qf.clone(),
            online: qf,
            update_count: 0,
            cfg,
            opt,
        }
    }

    /// Copies online parameters into the target network. Idempotent.
    pub fn sync_target(&mut self) {
        self.target = self.online.clone();
    }

    /// One optimizer step on the mean squared TD error of a batch of
    /// sequences with precomputed targets. Returns one priority per
    /// sequence: `eta * max|delta| + (1 - eta) * mean|delta|` over the
    /// pre-update TD errors. Synchronizes the target network when due.
    pub fn apply_update(
        &mut self,
        batch: &[(&[Transition<T>], &[T])],
        obs_of: &dyn Fn(StateId) -> Obs<T>,
    ) -> Result<Vec<T>> {
        let total: usize = batch.iter().map(|(seq, _)| seq.len()).sum();
        if total == 0 {
            return Err(Error::Validation("empty update batch".into()));
        }
        for (seq, targets) in batch {
            if seq.len() != targets.len() {
                return Err(Error::Validation(
                    "sequence/target length mismatch in batch".into(),
                ));
            }
        }
        let scale = T::one() / real::<T>(total as f64);
        let mut grads = vec![T::zero(); self.online.n_params()];
        let mut priorities = Vec::with_capacity(batch.len());
        let eta = self.cfg.priority_eta;
        for (seq, targets) in batch {
            let mut max_abs = T::zero();
            let mut sum_abs = T::zero();
            for (tr, &target) in seq.iter().zip(targets.iter()) {
                let sq = self.online.accumulate_td_grads(
                    &obs_of(tr.state),
                    tr.action,
                    target,
                    scale,
                    &mut grads,
                );
                let abs = sq.sqrt();
                max_abs = max_abs.max(abs);
                sum_abs += abs;
            }
            let mean_abs = sum_abs / real::<T>(seq.len() as f64);
            priorities.push(eta * max_abs + (T::one() - eta) * mean_abs);
        }
        let lr = self.cfg.step_size;
        let online = &mut self.online;
        self.opt.step(&grads, lr, |i, d| {
            online.apply_deltas_at(i, d);
        });
        self.update_count += 1;
        if self.update_count % self.cfg.target_period == 0 {
            self.sync_target();
        }
        Ok(priorities)
    }
}

impl<T: Real> QFunction<T> {
    // Point update used by the optimizer callback; kept separate from
    // apply_deltas to avoid closures borrowing the whole struct.
    fn apply_deltas_at(&mut self, idx: usize, delta: T) {
        match self.arch.repr_mode {
            ReprMode::Tabular => self.table[idx] += delta,
            ReprMode::EncoderHead => {
                let enc_n = self.encoder_param_count();
                if idx < enc_n {
                    let mut applied = false;
                    let mut i = idx;
                    let enc = self.encoder.as_mut().unwrap();
                    for seg in [&mut enc.l1.w, &mut enc.l1.b, &mut enc.l2.w, &mut enc.l2.b] {
                        if i < seg.len() {
                            seg[i] += delta;
                            applied = true;
                            break;
                        }
                        i -= seg.len();
                    }
                    debug_assert!(applied);
                } else {
                    let head = self.head.as_mut().unwrap();
                    let i = idx - enc_n;
                    if i < head.w.len() {
                        head.w[i] += delta;
                    } else {
                        head.b[i - head.w.len()] += delta;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tr(
        state: usize,
        action: usize,
        reward: f64,
        next_state: usize,
        terminal: bool,
    ) -> Transition<f64> {
        Transition {
            state,
            action,
            primitive_action: action,
            reward_ext: reward,
            reward_int: 0.0,
            next_state,
            terminal,
            from_pretrained: false,
            behavior_prob: 1.0,
        }
    }

    fn state_obs(s: StateId) -> Obs<f64> {
        Obs::State(s)
    }

    #[test]
    fn tabular_q_values_start_at_zero_and_respect_writes() {
        let mut qf = QFunction::<f64>::tabular(3, 2, false);
        assert_eq!(qf.q_values(&Obs::State(1)), vec![0.0, 0.0]);
        qf.set_value(1, 1, 3.5);
        assert_eq!(qf.q_values(&Obs::State(1))[1], 3.5);
    }

    #[test]
    fn encoder_head_output_matches_manual_composition() {
        let qf = QFunction::<f64>::encoder_head(2, 6, 4, 3, true, 17);
        let x = vec![0.3, -0.8];
        let q = qf.q_values(&Obs::Features(x.clone()));
        assert_eq!(q.len(), 4);
        let enc = qf.encoder.as_ref().unwrap();
        let head = qf.head.as_ref().unwrap();
        let phi = enc.forward(&x);
        for (o, &qo) in q.iter().enumerate() {
            let manual: f64 = (0..4)
                .map(|i| head.w[o * 4 + i] * phi[i])
                .sum::<f64>()
                + head.b[o];
            assert!((qo - manual).abs() < 1e-14);
        }
    }

    #[test]
    fn peng_hand_case() {
        // r = [1, 2], step 2 terminal, gamma = 0.5, lambda = 0.7, max Q(s1) = 1
        let mut qf = QFunction::<f64>::tabular(3, 2, false);
        qf.set_value(1, 0, 1.0);
        let seq = vec![tr(0, 0, 1.0, 1, false), tr(1, 0, 2.0, 2, true)];
        let t = peng_targets(&seq, &qf, &state_obs, 0.5, 0.7, RewardSource::Extrinsic).unwrap();
        assert!((t[1] - 2.0).abs() < 1e-15);
        assert!((t[0] - 1.85).abs() < 1e-15);
    }

    #[test]
    fn peng_lambda_zero_is_one_step_backup() {
        let mut qf = QFunction::<f64>::tabular(4, 2, false);
        qf.set_value(1, 1, 2.0);
        qf.set_value(2, 0, -1.0);
        let seq = vec![
            tr(0, 0, 0.5, 1, false),
            tr(1, 1, -0.5, 2, false),
            tr(2, 0, 1.5, 3, false),
        ];
        let t = peng_targets(&seq, &qf, &state_obs, 0.9, 0.0, RewardSource::Extrinsic).unwrap();
        assert!((t[0] - (0.5 + 0.9 * 2.0)).abs() < 1e-12);
        assert!((t[1] - (-0.5 + 0.9 * 0.0)).abs() < 1e-12);
        assert!((t[2] - (1.5 + 0.9 * 0.0)).abs() < 1e-12);
    }

    #[test]
    fn peng_lambda_one_terminal_is_monte_carlo() {
        let qf = QFunction::<f64>::tabular(5, 2, false);
        let seq = vec![
            tr(0, 0, 1.0, 1, false),
            tr(1, 1, 2.0, 2, false),
            tr(2, 0, 4.0, 3, true),
        ];
        let g = 0.5;
        let t = peng_targets(&seq, &qf, &state_obs, g, 1.0, RewardSource::Extrinsic).unwrap();
        assert!((t[0] - (1.0 + g * (2.0 + g * 4.0))).abs() < 1e-15);
    }

    #[test]
    fn mid_sequence_terminal_rejected() {
        let qf = QFunction::<f64>::tabular(3, 2, false);
        let seq = vec![tr(0, 0, 1.0, 1, true), tr(1, 0, 1.0, 2, false)];
        assert!(matches!(
            peng_targets(&seq, &qf, &state_obs, 0.9, 0.5, RewardSource::Extrinsic),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn retrace_hand_case() {
        let qf = QFunction::<f64>::tabular(3, 2, false);
        let seq = vec![tr(0, 0, 1.0, 1, false), tr(1, 0, 1.0, 2, true)];
        let pi = |obs: &Obs<f64>| greedy_distribution(&qf, obs);
        let mu = vec![1.0, 1.0];
        let t = retrace_targets(
            &seq,
            &qf,
            &state_obs,
            &pi,
            &mu,
            0.5,
            0.95,
            RewardSource::Extrinsic,
        )
        .unwrap();
        assert!((t[1] - 1.0).abs() < 1e-15);
        assert!((t[0] - 1.475).abs() < 1e-15);
    }

    #[test]
    fn retrace_lambda_zero_is_expected_one_step() {
        let mut qf = QFunction::<f64>::tabular(3, 2, false);
        qf.set_value(0, 0, 0.3);
        qf.set_value(1, 0, 2.0);
        qf.set_value(1, 1, -1.0);
        let seq = vec![tr(0, 0, 1.0, 1, false), tr(1, 1, 0.0, 2, true)];
        let pi = |obs: &Obs<f64>| greedy_distribution(&qf, obs);
        let mu = vec![0.5, 0.5];
        let t = retrace_targets(
            &seq,
            &qf,
            &state_obs,
            &pi,
            &mu,
            0.9,
            0.0,
            RewardSource::Extrinsic,
        )
        .unwrap();
        // target_0 = Q(s0,a0) + delta_0 = r + gamma * E_pi Q(s1) (greedy picks 2.0)
        assert!((t[0] - (1.0 + 0.9 * 2.0)).abs() < 1e-12);
    }

    #[test]
    fn retrace_zero_behavior_probability_rejected() {
        let qf = QFunction::<f64>::tabular(3, 2, false);
        let seq = vec![tr(0, 0, 1.0, 1, true)];
        let pi = |obs: &Obs<f64>| greedy_distribution(&qf, obs);
        let err = retrace_targets(
            &seq,
            &qf,
            &state_obs,
            &pi,
            &[0.0],
            0.9,
            0.95,
            RewardSource::Extrinsic,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn duplicate_pair_shares_one_return() {
        // extra action (index 2) resolved to primitive 1, then its relabeled
        // duplicate; both must receive the same target, and the preceding
        // step must bootstrap through them exactly once.
        let mut qf = QFunction::<f64>::tabular(4, 2, true);
        qf.set_value(2, 1, 4.0);
        let a_plus = 2;
        let dup_a = Transition {
            state: 1,
            action: a_plus,
            primitive_action: 1,
            reward_ext: 2.0,
            reward_int: 0.0,
            next_state: 2,
            terminal: false,
            from_pretrained: true,
            behavior_prob: 0.25,
        };
        let dup_b = Transition {
            action: 1,
            ..dup_a.clone()
        };
        let seq = vec![tr(0, 0, 1.0, 1, false), dup_a, dup_b];
        let g = 0.5;
        let lam = 0.7;
        let t = peng_targets(&seq, &qf, &state_obs, g, lam, RewardSource::Extrinsic).unwrap();
        // last group bootstraps on max Q(s2) = 4
        let g1 = 2.0 + g * 4.0;
        assert!((t[1] - g1).abs() < 1e-12);
        assert_eq!(t[1], t[2]);
        let g0 = 1.0 + g * ((1.0 - lam) * 0.0 + lam * g1);
        assert!((t[0] - g0).abs() < 1e-12);
    }

    #[test]
    fn apply_update_moves_toward_target_and_reports_priorities() {
        let qf = QFunction::<f64>::tabular(2, 2, false);
        let mut ls = LearnerState::new(
            qf,
            LearnerConfig {
                step_size: 0.1,
                ..LearnerConfig::default()
            },
        );
        let seq = vec![tr(0, 1, 1.0, 1, true)];
        let targets = vec![1.0];
        let before = ls.online.q_values(&Obs::State(0))[1];
        let p = ls
            .apply_update(&[(&seq, &targets)], &state_obs)
            .unwrap();
        let after = ls.online.q_values(&Obs::State(0))[1];
        assert!(after > before, "entry moves toward a positive target");
        assert!((p[0] - 1.0).abs() < 1e-12); // |delta| = 1 everywhere
    }

    #[test]
    fn priority_mixture_formula() {
        let qf = QFunction::<f64>::tabular(4, 1, false);
        let mut ls = LearnerState::new(qf, LearnerConfig::default());
        // deltas [1,1,1] -> 1.0; [3,0,0] -> 0.9*3 + 0.1*1 = 2.8
        let seq1 = vec![
            tr(0, 0, 0.0, 1, false),
            tr(1, 0, 0.0, 2, false),
            tr(2, 0, 0.0, 3, true),
        ];
        let t1 = vec![1.0, 1.0, 1.0];
        let t2 = vec![3.0, 0.0, 0.0];
        let p = ls
            .apply_update(&[(&seq1, &t1), (&seq1, &t2)], &state_obs)
            .unwrap();
        assert!((p[0] - 1.0).abs() < 1e-12);
        assert!((p[1] - 2.8).abs() < 1e-12);
    }

    #[test]
    fn target_sync_period_and_idempotence() {
        let qf = QFunction::<f64>::tabular(2, 1, false);
        let mut ls = LearnerState::new(
            qf,
            LearnerConfig {
                target_period: 3,
                step_size: 0.5,
                ..LearnerConfig::default()
            },
        );
        let seq = vec![tr(0, 0, 1.0, 1, true)];
        let targets = vec![1.0];
        for i in 1..=6u64 {
            ls.apply_update(&[(&seq, &targets)], &state_obs).unwrap();
            let synced = ls.online.flat_params() == ls.target.flat_params();
            assert_eq!(synced, i % 3 == 0, "at update {i}");
        }
        ls.sync_target();
        let t1 = ls.target.clone();
        ls.sync_target();
        assert_eq!(t1, ls.target);
    }

    #[test]
    fn init_modes_copy_the_right_components() {
        let source = QFunction::<f64>::encoder_head(2, 4, 3, 2, false, 5);
        let fresh = QFunction::<f64>::encoder_head(2, 4, 3, 2, false, 99);

        let scratch = init_from_checkpoint(fresh.clone(), &source, InitMode::Scratch).unwrap();
        assert_ne!(scratch.flat_params(), source.flat_params());

        let partial = init_from_checkpoint(fresh.clone(), &source, InitMode::Partial).unwrap();
        assert_eq!(partial.encoder_params(), source.encoder_params());
        assert_ne!(partial.head_params(), source.head_params());

        let full = init_from_checkpoint(fresh.clone(), &source, InitMode::Full).unwrap();
        assert_eq!(full.flat_params(), source.flat_params());
        let x = Obs::Features(vec![0.2, -0.4]);
        assert_eq!(full.q_values(&x), source.q_values(&x));

        let wrong = QFunction::<f64>::encoder_head(3, 4, 3, 2, false, 1);
        assert!(matches!(
            init_from_checkpoint(wrong, &source, InitMode::Full),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn full_init_onto_extended_head_keeps_extra_slot_fresh() {
        let mut source = QFunction::<f64>::tabular(3, 2, false);
        source.set_value(1, 0, 7.0);
        let fresh = QFunction::<f64>::tabular(3, 2, true);
        let out = init_from_checkpoint(fresh, &source, InitMode::Full).unwrap();
        assert_eq!(out.q_values(&Obs::State(1)), vec![7.0, 0.0, 0.0]);
    }

    /// Builds a terminal on-policy sequence visiting distinct states in a
    /// chain (`next_state` of step i is the state of step i + 1).
    fn random_chained_sequence(
        n_states: usize,
        n_actions: usize,
        rng: &mut rand_chacha::ChaCha8Rng,
    ) -> Vec<Transition<f64>> {
        use rand::seq::SliceRandom;
        let len = rng.gen_range(1..n_states);
        let mut states: Vec<usize> = (0..n_states).collect();
        states.shuffle(rng);
        (0..len)
            .map(|i| {
                tr(
                    states[i],
                    rng.gen_range(0..n_actions),
                    rng.gen::<f64>() * 2.0 - 1.0,
                    states[i + 1],
                    i == len - 1,
                )
            })
            .collect()
    }

    #[test]
    fn lambda_endpoint_identities_on_random_tabular_sequences() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let n_states = 7;
        let n_actions = 3;
        let gamma = 0.9;
        for _ in 0..50 {
            let mut qf = QFunction::<f64>::tabular(n_states, n_actions, false);
            for s in 0..n_states {
                for a in 0..n_actions {
                    qf.set_value(s, a, rng.gen::<f64>() * 4.0 - 2.0);
                }
            }
            let seq = random_chained_sequence(n_states, n_actions, &mut rng);
            let len = seq.len();
            let mut ret = vec![0.0; len];
            let mut mc = 0.0;
            for i in (0..len).rev() {
                mc = seq[i].reward_ext + gamma * if seq[i].terminal { 0.0 } else { mc };
                ret[i] = mc;
            }

            // lambda = 1 on a terminal sequence telescopes to Monte Carlo
            let t = peng_targets(&seq, &qf, &state_obs, gamma, 1.0, RewardSource::Extrinsic)
                .unwrap();
            for i in 0..len {
                assert!((t[i] - ret[i]).abs() < 1e-12);
            }

            // retrace with pi = point mass on the taken action and mu = 1
            // (on-policy): E_pi Q(s_{j+1}) = Q(s_{j+1}, a_{j+1}), so lambda = 1
            // also telescopes to Monte Carlo
            let point_mass = |obs: &Obs<f64>| {
                let s = match obs {
                    Obs::State(s) => *s,
                    _ => unreachable!(),
                };
                let mut dist = vec![0.0; n_actions];
                let a = seq
                    .iter()
                    .find(|t| t.state == s)
                    .map(|t| t.action)
                    .unwrap_or(0);
                dist[a] = 1.0;
                dist
            };
            let mu = vec![1.0; len];
            let rt = retrace_targets(
                &seq,
                &qf,
                &state_obs,
                &point_mass,
                &mu,
                gamma,
                1.0,
                RewardSource::Extrinsic,
            )
            .unwrap();
            for i in 0..len {
                assert!((rt[i] - ret[i]).abs() < 1e-12, "retrace MC identity");
            }

            // lambda = 0 retrace is the one-step expected backup
            let rt0 = retrace_targets(
                &seq,
                &qf,
                &state_obs,
                &point_mass,
                &mu,
                gamma,
                0.0,
                RewardSource::Extrinsic,
            )
            .unwrap();
            for i in 0..len {
                let e_next = if seq[i].terminal {
                    0.0
                } else {
                    let dist = point_mass(&Obs::State(seq[i].next_state));
                    qf.q_values(&Obs::State(seq[i].next_state))
                        .iter()
                        .zip(&dist)
                        .map(|(q, p)| q * p)
                        .sum()
                };
                assert!((rt0[i] - (seq[i].reward_ext + gamma * e_next)).abs() < 1e-12);
            }
        }
    }
}
