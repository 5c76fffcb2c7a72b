//! Finite deterministic environments: hard-exploration chains, four-room
//! gridworlds and a dense-reward control line, each with optional
//! deceptive-reward variants that place small one-shot pickups near the
//! start. Every environment can export its explicit MDP tables for the
//! value-iteration test oracle.

use crate::error::{Error, Result};
use crate::mdp::Mdp;
use crate::num::{real, Real};

pub type StateId = usize;
pub type ActionId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvKind {
    Chain,
    FourRooms,
    DenseLine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardVariant {
    Standard,
    SparseEasy,
    DeceptiveHard,
}

/// Declarative environment description; validated by [`make_env`].
#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec<T> {
    pub kind: EnvKind,
    /// Chain length or grid side.
    pub size: usize,
    pub reward_variant: RewardVariant,
    /// Reward of the near-start one-shot pickup cells (deceptive variant).
    pub distractor_reward: Option<T>,
    pub goal_reward: T,
    pub episode_limit: usize,
    pub seed: u64,
}

impl<T: Real> EnvSpec<T> {
    /// Spec with the default episode limit of `4 * size`.
    pub fn new(kind: EnvKind, size: usize, reward_variant: RewardVariant, goal_reward: T) -> Self {
        EnvSpec {
            kind,
            size,
            reward_variant,
            distractor_reward: None,
            goal_reward,
            episode_limit: 4 * size,
            seed: 0,
        }
    }

    pub fn with_distractor(mut self, reward: T) -> Self {
        self.distractor_reward = Some(reward);
        self
    }

    pub fn with_episode_limit(mut self, limit: usize) -> Self {
        self.episode_limit = limit;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.size < 2 {
            return Err(Error::Config(format!("size must be >= 2, got {}", self.size)));
        }
        if self.kind == EnvKind::FourRooms && self.size < 5 {
            return Err(Error::Config(format!(
                "four_rooms needs size >= 5 to fit walls and doors, got {}",
                self.size
            )));
        }
        if self.episode_limit < self.size {
            return Err(Error::Config(format!(
                "episode_limit {} < size {}: goal unreachable within the limit",
                self.episode_limit, self.size
            )));
        }
        match self.reward_variant {
            RewardVariant::DeceptiveHard => {
                if self.distractor_reward.is_none() {
                    return Err(Error::Config(
                        "deceptive_hard requires distractor_reward".into(),
                    ));
                }
            }
            RewardVariant::SparseEasy => {
                if let Some(d) = self.distractor_reward {
                    if d != T::zero() {
                        return Err(Error::Config(
                            "sparse_easy forces distractor_reward = 0".into(),
                        ));
                    }
                }
            }
            RewardVariant::Standard => {}
        }
        Ok(())
    }
}

/// One environment step as stored in replay.
///
/// `action` is the learning action (may be the extra pseudo-action);
/// `primitive_action` is what the environment actually executed.
/// `behavior_prob` records the collection-time probability of the learning
/// action so off-policy corrections can be computed at training time.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition<T> {
    pub state: StateId,
    pub action: ActionId,
    pub primitive_action: ActionId,
    pub reward_ext: T,
    pub reward_int: T,
    pub next_state: StateId,
    pub terminal: bool,
    pub from_pretrained: bool,
    pub behavior_prob: T,
}

/// Grid/chain geometry shared by all kinds.
#[derive(Debug, Clone)]
struct Layout {
    kind: EnvKind,
    size: usize,
    /// Compact cell index -> (row, col). Chains use row 0.
    coords: Vec<(usize, usize)>,
    /// (row, col) -> compact cell index (usize::MAX for walls).
    cell_at: Vec<usize>,
    n_actions: usize,
    start_cell: usize,
    goal_cell: usize,
}

impl Layout {
    fn build(kind: EnvKind, size: usize) -> Layout {
        match kind {
            EnvKind::Chain | EnvKind::DenseLine => {
                let coords = (0..size).map(|c| (0, c)).collect();
                Layout {
                    kind,
                    size,
                    coords,
                    cell_at: (0..size).collect(),
                    // left, right, no-op
                    n_actions: 3,
                    start_cell: 0,
                    goal_cell: size - 1,
                }
            }
            EnvKind::FourRooms => {
                let mid = size / 2;
                let q1 = mid / 2;
                let q3 = (mid + size) / 2;
                let is_wall = |r: usize, c: usize| {
                    let door = (c == mid && (r == q1 || r == q3)) || (r == mid && (c == q1 || c == q3));
                    (r == mid || c == mid) && !door
                };
                let mut coords = Vec::new();
                let mut cell_at = vec![usize::MAX; size * size];
                for r in 0..size {
                    for c in 0..size {
                        if !is_wall(r, c) {
                            cell_at[r * size + c] = coords.len();
                            coords.push((r, c));
                        }
                    }
                }
                let start_cell = cell_at[0];
                let goal_cell = cell_at[size * size - 1];
                Layout {
                    kind,
                    size,
                    coords,
                    cell_at,
                    // up, down, left, right
                    n_actions: 4,
                    start_cell,
                    goal_cell,
                }
            }
        }
    }

    fn n_cells(&self) -> usize {
        self.coords.len()
    }

    /// Deterministic move; stepping into a wall or off the grid stays put.
    fn next_cell(&self, cell: usize, action: ActionId) -> usize {
        let (r, c) = self.coords[cell];
        let (nr, nc) = match self.kind {
            EnvKind::Chain | EnvKind::DenseLine => match action {
                0 => (r, c.saturating_sub(1)),
                1 => (r, (c + 1).min(self.size - 1)),
                _ => (r, c),
            },
            EnvKind::FourRooms => match action {
                0 => (r.saturating_sub(1), c),
                1 => ((r + 1).min(self.size - 1), c),
                2 => (r, c.saturating_sub(1)),
                _ => (r, (c + 1).min(self.size - 1)),
            },
        };
        let target = self.cell_at[nr * self.size + nc];
        if target == usize::MAX {
            cell
        } else {
            target
        }
    }

    fn neighbors(&self, cell: usize) -> Vec<usize> {
        let mut out = Vec::new();
        for a in 0..self.n_actions {
            let n = self.next_cell(cell, a);
            if n != cell && !out.contains(&n) {
                out.push(n);
            }
        }
        out
    }
}

/// Runtime environment. Deterministic given the spec; the full observed
/// state includes the per-episode pickup flags so dynamics stay Markov.
#[derive(Debug, Clone)]
pub struct Environment<T> {
    spec: EnvSpec<T>,
    layout: Layout,
    /// Cell ids carrying a once-per-episode distractor pickup.
    distractor_cells: Vec<usize>,
    cell: usize,
    flags: usize,
    steps: usize,
    done: bool,
}

/// Builds and validates an environment from its spec.
pub fn make_env<T: Real>(spec: EnvSpec<T>) -> Result<Environment<T>> {
    spec.validate()?;
    let layout = Layout::build(spec.kind, spec.size);
    let distractor_cells = if spec.reward_variant == RewardVariant::DeceptiveHard {
        match spec.kind {
            // On a line the start cell itself is the only near-start cell the
            // agent can repeatedly re-enter; the pickup triggers on entry.
            EnvKind::Chain | EnvKind::DenseLine => vec![layout.start_cell],
            EnvKind::FourRooms => layout.neighbors(layout.start_cell),
        }
    } else {
        Vec::new()
    };
    let mut env = Environment {
        spec,
        layout,
        distractor_cells,
        cell: 0,
        flags: 0,
        steps: 0,
        done: true,
    };
    env.reset();
    Ok(env)
}

impl<T: Real> Environment<T> {
    pub fn spec(&self) -> &EnvSpec<T> {
        &self.spec
    }

    pub fn n_actions(&self) -> usize {
        self.layout.n_actions
    }

    fn n_flag_combos(&self) -> usize {
        1 << self.distractor_cells.len()
    }

    /// Number of grid cells (states modulo the per-episode pickup flags).
    pub fn n_cells(&self) -> usize {
        self.layout.n_cells()
    }

    /// Observation entries that encode position (the pickup flags follow).
    pub fn base_obs_dim(&self) -> usize {
        match self.spec.kind {
            EnvKind::Chain | EnvKind::DenseLine => 1,
            EnvKind::FourRooms => 2,
        }
    }

    pub fn n_states(&self) -> usize {
        self.layout.n_cells() * self.n_flag_combos()
    }

    fn state_of(&self, cell: usize, flags: usize) -> StateId {
        cell * self.n_flag_combos() + flags
    }

    pub fn cell_of_state(&self, state: StateId) -> usize {
        state / self.n_flag_combos()
    }

    /// Observation vector: normalized coordinates plus one 0/1 entry per
    /// pickup flag.
    pub fn obs_dim(&self) -> usize {
        self.base_obs_dim() + self.distractor_cells.len()
    }

    pub fn obs(&self, state: StateId) -> Vec<T> {
        let combos = self.n_flag_combos();
        let cell = state / combos;
        let flags = state % combos;
        let (r, c) = self.layout.coords[cell];
        let denom = real::<T>((self.spec.size - 1) as f64);
        let mut v = Vec::with_capacity(self.obs_dim());
        match self.spec.kind {
            EnvKind::Chain | EnvKind::DenseLine => v.push(real::<T>(c as f64) / denom),
            EnvKind::FourRooms => {
                v.push(real::<T>(r as f64) / denom);
                v.push(real::<T>(c as f64) / denom);
            }
        }
        for bit in 0..self.distractor_cells.len() {
            v.push(if flags >> bit & 1 == 1 { T::one() } else { T::zero() });
        }
        v
    }

    pub fn state(&self) -> StateId {
        self.state_of(self.cell, self.flags)
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn steps_taken(&self) -> usize {
        self.steps
    }

    /// Starts a fresh episode and returns the initial state.
    pub fn reset(&mut self) -> StateId {
        self.cell = self.layout.start_cell;
        self.flags = 0;
        self.steps = 0;
        self.done = false;
        self.state()
    }

    fn transition_reward(&self, from_cell: usize, action: ActionId, to_cell: usize, flags: usize) -> (T, usize) {
        let mut reward = T::zero();
        let mut new_flags = flags;
        if to_cell == self.layout.goal_cell {
            reward += self.spec.goal_reward;
        }
        if self.spec.kind == EnvKind::DenseLine && action == 1 && to_cell != from_cell {
            // dense shaping: each step of rightward progress pays one unit
            reward += T::one();
        }
        if to_cell != from_cell {
            if let Some(bit) = self.distractor_cells.iter().position(|&c| c == to_cell) {
                if flags >> bit & 1 == 0 {
                    reward += self.spec.distractor_reward.unwrap_or_else(T::zero);
                    new_flags |= 1 << bit;
                }
            }
        }
        (reward, new_flags)
    }

    /// Executes one primitive action.
    pub fn step(&mut self, action: ActionId) -> Result<(StateId, T, bool)> {
        if self.done {
            return Err(Error::Usage("step called on a finished episode".into()));
        }
        if action >= self.layout.n_actions {
            return Err(Error::Validation(format!(
                "action {action} out of range (|A| = {})",
                self.layout.n_actions
            )));
        }
        let next = self.layout.next_cell(self.cell, action);
        let (reward, new_flags) = self.transition_reward(self.cell, action, next, self.flags);
        self.cell = next;
        self.flags = new_flags;
        self.steps += 1;
        if next == self.layout.goal_cell || self.steps >= self.spec.episode_limit {
            self.done = true;
        }
        Ok((self.state(), reward, self.done))
    }

    /// Explicit tables over the full (cell, flags) state space; test oracle input.
    pub fn to_mdp(&self) -> Mdp<T> {
        let n_states = self.n_states();
        let n_actions = self.layout.n_actions;
        let combos = self.n_flag_combos();
        let mut p = vec![T::zero(); n_states * n_actions * n_states];
        let mut r = vec![T::zero(); n_states * n_actions * n_states];
        let mut terminal = vec![false; n_states];
        for cell in 0..self.layout.n_cells() {
            for flags in 0..combos {
                let s = self.state_of(cell, flags);
                terminal[s] = cell == self.layout.goal_cell;
                for a in 0..n_actions {
                    let (next_cell, reward, next_flags) = if terminal[s] {
                        (cell, T::zero(), flags)
                    } else {
                        let nc = self.layout.next_cell(cell, a);
                        let (rew, nf) = self.transition_reward(cell, a, nc, flags);
                        (nc, rew, nf)
                    };
                    let s2 = self.state_of(next_cell, next_flags);
                    let idx = (s * n_actions + a) * n_states + s2;
                    p[idx] = T::one();
                    r[idx] = reward;
                }
            }
        }
        let mut d0 = vec![T::zero(); n_states];
        d0[self.state_of(self.layout.start_cell, 0)] = T::one();
        Mdp {
            n_states,
            n_actions,
            p,
            r,
            d0,
            terminal,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::value_iteration;

    fn chain_spec(size: usize, goal: f64) -> EnvSpec<f64> {
        EnvSpec::new(EnvKind::Chain, size, RewardVariant::Standard, goal)
    }

    #[test]
    fn chain_reset_is_cell_zero() {
        let mut env = make_env(chain_spec(5, 1.0)).unwrap();
        assert_eq!(env.reset(), 0);
        assert_eq!(env.reset(), 0);
    }

    #[test]
    fn chain_step_dynamics() {
        let mut env = make_env(chain_spec(3, 2.5)).unwrap();
        env.reset();
        let (s, r, done) = env.step(1).unwrap();
        assert_eq!((s, r, done), (1, 0.0, false));
        let (s, r, done) = env.step(1).unwrap();
        assert_eq!((s, r, done), (2, 2.5, true));
        assert!(matches!(env.step(1), Err(Error::Usage(_))));
    }

    #[test]
    fn chain_noop_and_left_wall() {
        let mut env = make_env(chain_spec(4, 1.0)).unwrap();
        env.reset();
        let (s, _, _) = env.step(2).unwrap();
        assert_eq!(s, 0);
        let (s, _, _) = env.step(0).unwrap();
        assert_eq!(s, 0); // wall at the left end
    }

    #[test]
    fn episode_limit_terminates() {
        let mut env = make_env(chain_spec(3, 1.0).with_episode_limit(4)).unwrap();
        env.reset();
        for i in 0..4 {
            let (_, _, done) = env.step(2).unwrap();
            assert_eq!(done, i == 3);
        }
    }

    #[test]
    fn deceptive_chain_start_pickup_once_per_episode() {
        let spec = chain_spec(5, 10.0)
            .with_distractor(0.1)
            .with_episode_limit(20);
        let mut env = make_env(EnvSpec {
            reward_variant: RewardVariant::DeceptiveHard,
            ..spec
        })
        .unwrap();
        env.reset();
        env.step(1).unwrap();
        let (_, r, done) = env.step(0).unwrap();
        assert_eq!((r, done), (0.1, false));
        env.step(1).unwrap();
        let (_, r, _) = env.step(0).unwrap();
        assert_eq!(r, 0.0); // consumed for the rest of the episode
        env.reset();
        env.step(1).unwrap();
        let (_, r, _) = env.step(0).unwrap();
        assert_eq!(r, 0.1); // fresh after reset
    }

    #[test]
    fn sparse_easy_four_rooms_has_single_reward_cell() {
        let spec = EnvSpec::new(EnvKind::FourRooms, 11, RewardVariant::SparseEasy, 1.0);
        let env = make_env(spec).unwrap();
        let mdp = env.to_mdp();
        let mut rewarded_targets = std::collections::HashSet::new();
        for s in 0..mdp.n_states {
            for a in 0..mdp.n_actions {
                for s2 in 0..mdp.n_states {
                    if mdp.r[(s * mdp.n_actions + a) * mdp.n_states + s2] != 0.0 {
                        rewarded_targets.insert(s2);
                    }
                }
            }
        }
        assert_eq!(rewarded_targets.len(), 1);
    }

    #[test]
    fn invalid_specs_are_config_errors() {
        let err = make_env(chain_spec(1, 1.0)).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        let err = make_env(EnvSpec {
            reward_variant: RewardVariant::DeceptiveHard,
            ..chain_spec(5, 1.0)
        })
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        let err = make_env(chain_spec(5, 1.0).with_episode_limit(3)).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        let err = make_env(EnvSpec {
            reward_variant: RewardVariant::SparseEasy,
            distractor_reward: Some(0.5),
            ..chain_spec(5, 1.0)
        })
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn exported_mdp_rows_are_stochastic() {
        for spec in [
            chain_spec(6, 1.0),
            EnvSpec::new(EnvKind::FourRooms, 7, RewardVariant::Standard, 1.0),
            EnvSpec::new(EnvKind::DenseLine, 5, RewardVariant::Standard, 2.0),
            EnvSpec::new(EnvKind::Chain, 6, RewardVariant::DeceptiveHard, 5.0).with_distractor(0.1),
        ] {
            let env = make_env(spec).unwrap();
            env.to_mdp().validate().unwrap();
        }
    }

    #[test]
    fn determinism_identical_action_sequences_match_byte_for_byte() {
        let run = || {
            let mut env = make_env(
                EnvSpec::new(EnvKind::FourRooms, 7, RewardVariant::Standard, 1.0).with_seed(9),
            )
            .unwrap();
            let mut log = String::new();
            env.reset();
            for a in [0usize, 1, 3, 3, 1, 2, 0, 3, 1, 1, 3, 0] {
                if env.is_done() {
                    env.reset();
                }
                let out = env.step(a).unwrap();
                log.push_str(&format!("{out:?};"));
            }
            log
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn chain3_value_iteration_confirms_short_goal_path() {
        // Two steps to the goal; near-undiscounted optimal return is the goal reward.
        let env = make_env(chain_spec(3, 1.0)).unwrap();
        let q = value_iteration(&env.to_mdp(), 0.999_999, 1e-10).unwrap();
        assert!((q[0][1] - 1.0).abs() < 1e-4);
        assert!((q[1][1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn deceptive_chain_q_star_prefers_goal_under_high_gamma() {
        let spec = EnvSpec::new(EnvKind::Chain, 40, RewardVariant::DeceptiveHard, 10.0)
            .with_distractor(0.1);
        let env = make_env(spec).unwrap();
        let gamma = 0.99;
        // goal_reward * gamma^size must dominate the distractor cycle value
        assert!(10.0 * gamma_f(gamma, 40) > 0.1);
        let q = value_iteration(&env.to_mdp(), gamma, 1e-9).unwrap();
        let start = env.state();
        let best = crate::num::argmax_tie_low(&q[start]);
        assert_eq!(best, 1, "goal-directed action expected at the start");
    }

    fn gamma_f(g: f64, n: usize) -> f64 {
        g.powi(n as i32)
    }

    #[test]
    fn dense_line_pays_per_rightward_step() {
        let mut env = make_env(EnvSpec::new(EnvKind::DenseLine, 4, RewardVariant::Standard, 5.0)).unwrap();
        env.reset();
        let (_, r, _) = env.step(1).unwrap();
        assert_eq!(r, 1.0);
        let (_, r, _) = env.step(0).unwrap();
        assert_eq!(r, 0.0);
        env.step(1).unwrap();
        env.step(1).unwrap();
        let (_, r, done) = env.step(1).unwrap();
        assert_eq!((r, done), (1.0 + 5.0, true));
    }
}
