//! Intrinsic rewards for reward-free pre-training.
//!
//! Two signals are combined: a per-episode novelty computed from k-nearest
//! neighbour distances over the episode's embedding memory (with a kernel
//! acting as a pseudo-count), and a lifelong novelty from the prediction
//! error of a trainable network against a frozen random target. The episodic
//! part resets every episode, so the combined reward does not vanish over
//! the course of training.

use crate::error::{Error, Result};
use crate::nn::{cross_entropy, TwoLayerNet};
use crate::num::{real, Real};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Constants of the episodic novelty reward. All configurable; the defaults
/// follow the reference settings commonly used with this reward.
#[derive(Debug, Clone, PartialEq)]
pub struct NguConfig<T> {
    /// Nearest-neighbour count.
    pub k: usize,
    /// Pseudo-count constant added to the similarity sum.
    pub c: T,
    /// Kernel epsilon.
    pub eps_kernel: T,
    /// Cluster distance: normalized distances below it are treated as zero.
    pub xi: T,
    /// Maximum similarity; larger sums yield zero reward.
    pub s_m: T,
    /// Maximum lifelong-novelty scaling.
    pub l_max: T,
    /// Degeneracy floor for the running mean of squared distances.
    pub d2m_floor: T,
}

impl<T: Real> Default for NguConfig<T> {
    fn default() -> Self {
        NguConfig {
            k: 10,
            c: real(0.001),
            eps_kernel: real(0.001),
            xi: real(0.008),
            s_m: real(8.0),
            l_max: real(5.0),
            d2m_floor: real(1e-9),
        }
    }
}

impl<T: Real> NguConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::Config("intrinsic.k must be >= 1".into()));
        }
        if self.l_max < T::one() {
            return Err(Error::Config("intrinsic.l_max must be >= 1".into()));
        }
        if self.eps_kernel <= T::zero() {
            return Err(Error::Config("intrinsic.eps_kernel must be > 0".into()));
        }
        if self.d2m_floor <= T::zero() {
            return Err(Error::Config("intrinsic.d2m_floor must be > 0".into()));
        }
        Ok(())
    }
}

/// Exact count-weighted streaming mean.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunningMean<T> {
    count: u64,
    mean: T,
}

impl<T: Real> RunningMean<T> {
    pub fn push(&mut self, x: T) {
        self.count += 1;
        let n = real::<T>(self.count as f64);
        self.mean += (x - self.mean) / n;
    }

    pub fn mean(&self) -> T {
        self.mean
    }

    pub fn count(&self) -> u64 {
        self.count
    }
}

/// Exact streaming mean/variance (count-weighted, batch-merged).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunningStats<T> {
    count: u64,
    mean: T,
    m2: T,
}

impl<T: Real> RunningStats<T> {
    /// Folds a whole batch using its two-pass aggregates, so the result does
    /// not depend on the order of elements beyond float rounding.
    pub fn fold_batch(&mut self, xs: &[T]) {
        if xs.is_empty() {
            return;
        }
        let nb = real::<T>(xs.len() as f64);
        let mean_b = xs.iter().cloned().sum::<T>() / nb;
        let m2_b = xs
            .iter()
            .map(|&x| (x - mean_b) * (x - mean_b))
            .sum::<T>();
        let na = real::<T>(self.count as f64);
        let total = na + nb;
        let delta = mean_b - self.mean;
        self.mean += delta * nb / total;
        self.m2 += m2_b + delta * delta * na * nb / total;
        self.count += xs.len() as u64;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> T {
        self.mean
    }

    /// Population standard deviation; zero before any update.
    pub fn std(&self) -> T {
        if self.count == 0 {
            T::zero()
        } else {
            (self.m2 / real::<T>(self.count as f64)).max(T::zero()).sqrt()
        }
    }
}

/// Per-episode store of controllable-state embeddings plus the running mean
/// of k-NN squared distances. The memory empties at each episode reset; the
/// distance statistic persists across episodes.
#[derive(Debug, Clone, Default)]
pub struct EpisodicMemory<T> {
    embeddings: Vec<Vec<T>>,
    d2_mean: RunningMean<T>,
}

impl<T: Real> EpisodicMemory<T> {
    pub fn new() -> Self {
        EpisodicMemory {
            embeddings: Vec::new(),
            d2_mean: RunningMean::default(),
        }
    }

    pub fn reset_episode(&mut self) {
        self.embeddings.clear();
    }

    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }

    pub fn insert(&mut self, embedding: Vec<T>) {
        self.embeddings.push(embedding);
    }

    pub fn d2_running_mean(&self) -> T {
        self.d2_mean.mean()
    }

    /// Test hook: pre-load the distance statistic.
    pub fn seed_d2_mean(&mut self, values: &[T]) {
        for &v in values {
            self.d2_mean.push(v);
        }
    }
}

fn squared_distance<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum()
}

/// Episodic novelty of an embedding against the current episode memory.
///
/// Finds up to `k` nearest neighbours by squared Euclidean distance, folds
/// those distances into the running mean, normalizes by the updated mean
/// (zero when the mean is below the degeneracy floor), clusters small
/// distances to zero, evaluates the kernel `eps / (d + eps)` and returns
/// `1 / (sqrt(sum K) + c)`, or zero when the similarity exceeds `s_m`.
/// The caller appends the embedding to the memory afterwards.
pub fn episodic_reward<T: Real>(
    mem: &mut EpisodicMemory<T>,
    embedding: &[T],
    cfg: &NguConfig<T>,
) -> T {
    let mut d2: Vec<T> = mem
        .embeddings
        .iter()
        .map(|m| squared_distance(m, embedding))
        .collect();
    let k = cfg.k.min(d2.len());
    if k > 0 && k < d2.len() {
        d2.select_nth_unstable_by(k - 1, |a, b| a.partial_cmp(b).expect("finite distances"));
    }
    d2.truncate(k);

    if d2.is_empty() && cfg.c == T::zero() {
        // documented cap for the degenerate empty-memory, c = 0 case
        return T::one() / cfg.eps_kernel;
    }

    for &d in &d2 {
        mem.d2_mean.push(d);
    }
    let d2m = mem.d2_mean.mean();

    let mut kernel_sum = T::zero();
    for &d in &d2 {
        let dn = if d2m < cfg.d2m_floor { T::zero() } else { d / d2m };
        let dn = (dn - cfg.xi).max(T::zero());
        kernel_sum += cfg.eps_kernel / (dn + cfg.eps_kernel);
    }
    let similarity = kernel_sum.sqrt() + cfg.c;
    if similarity > cfg.s_m {
        T::zero()
    } else {
        T::one() / similarity
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingMode {
    Identity,
    RandomProjection,
    InverseDynamics,
}

/// Observation -> embedding map. Identity and random projection are frozen;
/// the inverse-dynamics variant trains a small encoder through an
/// action-prediction head.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingFn<T> {
    pub mode: EmbeddingMode,
    pub dim_in: usize,
    pub dim_out: usize,
    /// Frozen projection matrix, row-major `[dim_out][dim_in]`.
    projection: Vec<T>,
    encoder: Option<TwoLayerNet<T>>,
    /// Predicts the action from the concatenated pair of embeddings.
    action_head: Option<TwoLayerNet<T>>,
    pub step_size: T,
    pub rng_seed: u64,
}

impl<T: Real> EmbeddingFn<T> {
    pub fn identity(dim: usize) -> Self {
        EmbeddingFn {
            mode: EmbeddingMode::Identity,
            dim_in: dim,
            dim_out: dim,
            projection: Vec::new(),
            encoder: None,
            action_head: None,
            step_size: T::zero(),
            rng_seed: 0,
        }
    }

    pub fn random_projection(dim_in: usize, dim_out: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lin = crate::nn::Linear::<T>::xavier(dim_in, dim_out, &mut rng);
        EmbeddingFn {
            mode: EmbeddingMode::RandomProjection,
            dim_in,
            dim_out,
            projection: lin.w,
            encoder: None,
            action_head: None,
            step_size: T::zero(),
            rng_seed: seed,
        }
    }

    pub fn inverse_dynamics(
        dim_in: usize,
        dim_out: usize,
        hidden: usize,
        n_actions: usize,
        step_size: T,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = TwoLayerNet::new(dim_in, hidden, dim_out, false, &mut rng);
        // zero output layer: the head starts out predicting a uniform
        // distribution over actions
        let action_head = TwoLayerNet::new(2 * dim_out, hidden, n_actions, true, &mut rng);
        EmbeddingFn {
            mode: EmbeddingMode::InverseDynamics,
            dim_in,
            dim_out,
            projection: Vec::new(),
            encoder: Some(encoder),
            action_head: Some(action_head),
            step_size,
            rng_seed: seed,
        }
    }

    /// Deterministic embedding of one observation.
    pub fn embed(&self, obs: &[T]) -> Result<Vec<T>> {
        if obs.len() != self.dim_in {
            return Err(Error::Validation(format!(
                "observation dim {} does not match embedding input dim {}",
                obs.len(),
                self.dim_in
            )));
        }
        Ok(match self.mode {
            EmbeddingMode::Identity => obs.to_vec(),
            EmbeddingMode::RandomProjection => {
                let mut out = vec![T::zero(); self.dim_out];
                for (o, item) in out.iter_mut().enumerate() {
                    let row = &self.projection[o * self.dim_in..(o + 1) * self.dim_in];
                    *item = row.iter().zip(obs).map(|(&w, &x)| w * x).sum();
                }
                out
            }
            EmbeddingMode::InverseDynamics => {
                self.encoder.as_ref().expect("encoder present").forward(obs)
            }
        })
    }

    /// One gradient step of the inverse-dynamics objective; returns the mean
    /// cross-entropy of the batch before the step.
    pub fn train_inverse_dynamics(&mut self, batch: &[(Vec<T>, usize, Vec<T>)]) -> Result<T> {
        if self.mode != EmbeddingMode::InverseDynamics {
            return Err(Error::Usage(
                "train_inverse_dynamics called on a frozen embedding".into(),
            ));
        }
        if batch.is_empty() {
            return Err(Error::Validation("empty inverse-dynamics batch".into()));
        }
        let encoder = self.encoder.as_mut().expect("encoder present");
        let head = self.action_head.as_mut().expect("head present");
        let mut g_enc = vec![T::zero(); encoder.n_params()];
        let mut g_head = vec![T::zero(); head.n_params()];
        let mut total_loss = T::zero();
        let scale = T::one() / real::<T>(batch.len() as f64);
        for (s, action, s_next) in batch {
            let (e1, c1) = encoder.forward_cached(s);
            let (e2, c2) = encoder.forward_cached(s_next);
            let mut joint = e1.clone();
            joint.extend_from_slice(&e2);
            let (logits, ch) = head.forward_cached(&joint);
            let (loss, mut dlogits) = cross_entropy(&logits, *action);
            total_loss += loss;
            for d in dlogits.iter_mut() {
                *d *= scale;
            }
            let djoint = head.backward(&joint, &ch, &dlogits, &mut g_head);
            let (d1, d2) = djoint.split_at(self.dim_out);
            encoder.backward(s, &c1, d1, &mut g_enc);
            encoder.backward(s_next, &c2, d2, &mut g_enc);
        }
        let lr = self.step_size;
        encoder.apply_deltas(|i| -lr * g_enc[i]);
        head.apply_deltas(|i| -lr * g_head[i]);
        Ok(total_loss * scale)
    }

    /// Flat parameter view (projection or encoder+head), used for digests.
    pub fn flat_params(&self) -> Vec<T> {
        match self.mode {
            EmbeddingMode::Identity => Vec::new(),
            EmbeddingMode::RandomProjection => self.projection.clone(),
            EmbeddingMode::InverseDynamics => {
                let mut out = self.encoder.as_ref().unwrap().flat_params();
                out.extend(self.action_head.as_ref().unwrap().flat_params());
                out
            }
        }
    }
}

/// Lifelong-novelty state: frozen random target, trainable predictor, and
/// the running statistics of the prediction error.
#[derive(Debug, Clone, PartialEq)]
pub struct RndState<T> {
    target: TwoLayerNet<T>,
    predictor: TwoLayerNet<T>,
    pub err_stats: RunningStats<T>,
    pub step_size: T,
    pub sigma_floor: T,
}

impl<T: Real> RndState<T> {
    pub fn new(
        obs_dim: usize,
        hidden: usize,
        embed_dim: usize,
        step_size: T,
        sigma_floor: T,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let target = TwoLayerNet::new(obs_dim, hidden, embed_dim, false, &mut rng);
        let predictor = TwoLayerNet::new(obs_dim, hidden, embed_dim, true, &mut rng);
        RndState {
            target,
            predictor,
            err_stats: RunningStats::default(),
            step_size,
            sigma_floor,
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.target.out_dim()
    }

    /// Squared prediction error of the predictor against the frozen target.
    pub fn rnd_error(&self, obs: &[T]) -> T {
        let t = self.target.forward(obs);
        let p = self.predictor.forward(obs);
        squared_distance(&t, &p)
    }

    /// One gradient step on the predictor; folds the batch's pre-step errors
    /// into the running statistics and returns their mean.
    pub fn rnd_train(&mut self, batch: &[Vec<T>]) -> Result<T> {
        if batch.is_empty() {
            return Err(Error::Validation("empty rnd batch".into()));
        }
        let scale = T::one() / real::<T>(batch.len() as f64);
        let mut grads = vec![T::zero(); self.predictor.n_params()];
        let mut errors = Vec::with_capacity(batch.len());
        for obs in batch {
            let target = self.target.forward(obs);
            let (pred, cache) = self.predictor.forward_cached(obs);
            let err = squared_distance(&target, &pred);
            errors.push(err);
            let dy: Vec<T> = pred
                .iter()
                .zip(&target)
                .map(|(&p, &t)| real::<T>(2.0) * (p - t) * scale)
                .collect();
            self.predictor.backward(obs, &cache, &dy, &mut grads);
        }
        self.err_stats.fold_batch(&errors);
        let lr = self.step_size;
        self.predictor.apply_deltas(|i| -lr * grads[i]);
        Ok(errors.iter().cloned().sum::<T>() * scale)
    }

    pub fn mu_e(&self) -> T {
        self.err_stats.mean()
    }

    /// Floored running standard deviation of the prediction error.
    pub fn sigma_e(&self) -> T {
        self.err_stats.std().max(self.sigma_floor)
    }

    /// Normalized lifelong novelty `(err - mu) / sigma`.
    pub fn lifelong_modulator(&self, err: T) -> T {
        (err - self.mu_e()) / self.sigma_e()
    }

    /// Pre-training reward `err / sigma` for the lifelong-novelty-only policy.
    pub fn rnd_reward(&self, err: T) -> T {
        err / self.sigma_e()
    }

    pub fn target_params(&self) -> Vec<T> {
        self.target.flat_params()
    }

    pub fn predictor_params(&self) -> Vec<T> {
        self.predictor.flat_params()
    }

    /// Test hook: copy the frozen target into the predictor.
    pub fn set_predictor_to_target(&mut self) {
        self.predictor = self.target.clone();
    }

    /// Gradient of the single-observation prediction loss with respect to
    /// the predictor parameters (used by gradient checks).
    pub fn predictor_loss_and_grads(&self, obs: &[T]) -> (T, Vec<T>) {
        let target = self.target.forward(obs);
        let (pred, cache) = self.predictor.forward_cached(obs);
        let loss = squared_distance(&target, &pred);
        let dy: Vec<T> = pred
            .iter()
            .zip(&target)
            .map(|(&p, &t)| real::<T>(2.0) * (p - t))
            .collect();
        let mut grads = vec![T::zero(); self.predictor.n_params()];
        self.predictor.backward(obs, &cache, &dy, &mut grads);
        (loss, grads)
    }

    pub fn predictor_mut(&mut self) -> &mut TwoLayerNet<T> {
        &mut self.predictor
    }
}

/// Combined intrinsic reward: episodic novelty scaled by the lifelong
/// modulator clamped to `[1, l_max]`.
pub fn ngu_reward<T: Real>(r_episodic: T, alpha: T, l_max: T) -> T {
    r_episodic * alpha.max(T::one()).min(l_max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> NguConfig<f64> {
        NguConfig::default()
    }

    #[test]
    fn episodic_reward_two_zero_distance_neighbors() {
        let mut mem = EpisodicMemory::new();
        mem.insert(vec![0.3, 0.4]);
        mem.insert(vec![0.3, 0.4]);
        let mut c = cfg();
        c.k = 2;
        let r = episodic_reward(&mut mem, &[0.3, 0.4], &c);
        let expected = 1.0 / (2.0f64.sqrt() + 0.001);
        assert!((r - expected).abs() < 1e-12);
        assert!((expected - 0.7066).abs() < 1e-3);
    }

    #[test]
    fn episodic_reward_saturates_to_zero_above_max_similarity() {
        let mut mem = EpisodicMemory::new();
        for _ in 0..100 {
            mem.insert(vec![1.0]);
        }
        let mut c = cfg();
        c.k = 100;
        let r = episodic_reward(&mut mem, &[1.0], &c);
        // sqrt(100) + 0.001 = 10.001 > 8
        assert_eq!(r, 0.0);
    }

    #[test]
    fn kernel_identity_at_zero_distance() {
        let mut mem = EpisodicMemory::new();
        let mut c = cfg();
        c.k = 1;
        let e = vec![0.7, -0.2];
        let first = episodic_reward(&mut mem, &e, &c);
        assert!((first - 1.0 / c.c).abs() < 1e-9); // empty memory: sum K = 0
        mem.insert(e.clone());
        let second = episodic_reward(&mut mem, &e, &c);
        // one neighbour at distance zero: K(x, x) = 1
        assert!((second - 1.0 / (1.0 + c.c)).abs() < 1e-12);
    }

    #[test]
    fn empty_memory_with_zero_c_caps_at_inverse_eps() {
        let mut mem = EpisodicMemory::new();
        let mut c = cfg();
        c.c = 0.0;
        let r = episodic_reward(&mut mem, &[0.0], &c);
        assert_eq!(r, 1.0 / c.eps_kernel);
    }

    #[test]
    fn memory_empties_on_reset_but_statistic_persists() {
        let mut mem = EpisodicMemory::new();
        mem.insert(vec![0.0]);
        mem.insert(vec![1.0]);
        episodic_reward(&mut mem, &[0.5], &cfg());
        let d2m = mem.d2_running_mean();
        assert!(d2m > 0.0);
        mem.reset_episode();
        assert_eq!(mem.len(), 0);
        assert_eq!(mem.d2_running_mean(), d2m);
    }

    #[test]
    fn d2_mean_converges_to_constant_input() {
        let mut mem = EpisodicMemory::<f64>::new();
        mem.seed_d2_mean(&[0.043]);
        let delta2 = 0.04;
        for _ in 0..10_000 {
            mem.seed_d2_mean(&[delta2]);
        }
        assert!((mem.d2_running_mean() - delta2).abs() < 1e-6);
        // from scratch the constant is the exact fixed point immediately
        let mut fresh = EpisodicMemory::<f64>::new();
        fresh.seed_d2_mean(&[delta2, delta2]);
        assert_eq!(fresh.d2_running_mean(), delta2);
    }

    #[test]
    fn identity_embedding_round_trips() {
        let f = EmbeddingFn::<f64>::identity(2);
        assert_eq!(f.embed(&[0.5, -1.0]).unwrap(), vec![0.5, -1.0]);
        assert!(matches!(
            f.embed(&[1.0]),
            Err(crate::error::Error::Validation(_))
        ));
    }

    #[test]
    fn random_projection_matches_manual_matvec_and_is_deterministic() {
        let f = EmbeddingFn::<f64>::random_projection(3, 2, 11);
        let x = [1.0, -0.5, 2.0];
        let y = f.embed(&x).unwrap();
        let w = &f.projection;
        for o in 0..2 {
            let manual: f64 = (0..3).map(|i| w[o * 3 + i] * x[i]).sum();
            assert!((y[o] - manual).abs() < 1e-15);
        }
        assert_eq!(y, f.embed(&x).unwrap());
    }

    #[test]
    fn inverse_dynamics_initial_loss_is_log_actions() {
        let mut f = EmbeddingFn::<f64>::inverse_dynamics(1, 2, 8, 4, 0.05, 3);
        let batch = vec![(vec![0.0], 1usize, vec![1.0])];
        let loss = f.train_inverse_dynamics(&batch).unwrap();
        assert!((loss - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn inverse_dynamics_loss_non_increasing_on_fixed_sample() {
        let mut f = EmbeddingFn::<f64>::inverse_dynamics(1, 2, 8, 3, 0.02, 5);
        let batch = vec![(vec![0.25], 2usize, vec![0.75])];
        let mut prev = f.train_inverse_dynamics(&batch).unwrap();
        for _ in 0..100 {
            let loss = f.train_inverse_dynamics(&batch).unwrap();
            assert!(loss <= prev + 1e-12);
            prev = loss;
        }
    }

    #[test]
    fn frozen_modes_reject_training() {
        let mut f = EmbeddingFn::<f64>::identity(1);
        let err = f
            .train_inverse_dynamics(&[(vec![0.0], 0, vec![0.0])])
            .unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
    }

    #[test]
    fn rnd_error_pure_and_target_frozen() {
        let mut rnd = RndState::<f64>::new(2, 8, 4, 0.05, 1e-8, 7);
        let before = rnd.target_params();
        let obs = vec![0.4, -0.9];
        let e1 = rnd.rnd_error(&obs);
        let e2 = rnd.rnd_error(&obs);
        assert_eq!(e1, e2);
        rnd.rnd_train(&[obs.clone(), vec![1.0, 1.0]]).unwrap();
        assert_eq!(rnd.target_params(), before);
    }

    #[test]
    fn rnd_error_zero_when_predictor_equals_target() {
        let mut rnd = RndState::<f64>::new(2, 8, 4, 0.05, 1e-8, 9);
        rnd.set_predictor_to_target();
        assert_eq!(rnd.rnd_error(&[0.1, 0.2]), 0.0);
    }

    #[test]
    fn mu_after_first_batch_equals_batch_mean() {
        let mut rnd = RndState::<f64>::new(1, 4, 2, 0.0, 1e-8, 1);
        let batch = vec![vec![0.1], vec![0.7], vec![-0.3]];
        let errors: Vec<f64> = batch.iter().map(|o| rnd.rnd_error(o)).collect();
        rnd.rnd_train(&batch).unwrap();
        let mean = errors.iter().sum::<f64>() / errors.len() as f64;
        assert!((rnd.mu_e() - mean).abs() < 1e-15);
    }

    #[test]
    fn repeated_training_on_one_observation_shrinks_error() {
        let mut rnd = RndState::<f64>::new(1, 16, 4, 0.05, 1e-8, 13);
        let obs = vec![0.6];
        let initial = rnd.rnd_error(&obs);
        for _ in 0..1000 {
            rnd.rnd_train(&[obs.clone()]).unwrap();
        }
        let fin = rnd.rnd_error(&obs);
        assert!(fin < 0.1 * initial, "final {fin} vs initial {initial}");
    }

    #[test]
    fn modulator_and_reward_direct_cases() {
        let mut rnd = RndState::<f64>::new(1, 4, 2, 0.0, 1e-8, 2);
        rnd.err_stats.fold_batch(&[0.5, 1.5]); // mean 1, std 0.5
        assert!((rnd.lifelong_modulator(1.0) - 0.0).abs() < 1e-12);
        assert!((rnd.lifelong_modulator(2.0) - 2.0).abs() < 1e-12);
        rnd.err_stats = RunningStats::default();
        rnd.err_stats.fold_batch(&[4.0; 2]); // std 0 -> floored
        let m = rnd.lifelong_modulator(4.0 + 1e-8);
        assert!(m.is_finite() && (m - 1.0).abs() < 1e-6);
        rnd.err_stats = RunningStats::default();
        rnd.err_stats.fold_batch(&[0.0, 8.0]); // mean 4, std 4
        assert!((rnd.rnd_reward(2.0) - 0.5).abs() < 1e-12);
        assert_eq!(rnd.rnd_reward(0.0), 0.0);
    }

    #[test]
    fn rnd_reward_scale_invariant() {
        let history = [0.3, 1.7, 0.9, 2.2, 0.05, 1.1];
        let reward_for = |scale: f64, query: f64| {
            let mut stats = RunningStats::<f64>::default();
            let scaled: Vec<f64> = history.iter().map(|e| e * scale).collect();
            stats.fold_batch(&scaled);
            (query * scale) / stats.std().max(1e-12)
        };
        for q in [0.3, 0.9, 2.2] {
            assert!((reward_for(1.0, q) - reward_for(10.0, q)).abs() < 1e-9);
        }
    }

    #[test]
    fn ngu_reward_clamp_regimes() {
        assert!((ngu_reward(0.7f64, 0.3, 5.0) - 0.7).abs() < 1e-12);
        assert!((ngu_reward(0.7f64, 2.0, 5.0) - 1.4).abs() < 1e-12);
        assert!((ngu_reward(0.7f64, 10.0, 5.0) - 3.5).abs() < 1e-12);
    }

    #[test]
    fn batch_statistics_insensitive_to_order() {
        let xs = [0.4, 1.9, -0.7, 0.0, 3.3];
        let mut a = RunningStats::<f64>::default();
        a.fold_batch(&xs);
        let mut rev = xs;
        rev.reverse();
        let mut b = RunningStats::<f64>::default();
        b.fold_batch(&rev);
        assert!((a.mean() - b.mean()).abs() < 1e-12);
        assert!((a.std() - b.std()).abs() < 1e-12);
    }
}
