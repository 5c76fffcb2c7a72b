//! Flat `section.key = value` configuration grammar. Every constant of the
//! toolkit appears here with its default; unknown keys are config errors so
//! typos fail loudly. `#` starts a comment.

use crate::env::{EnvKind, EnvSpec, RewardVariant};
use crate::error::{Error, Result};
use crate::explore::ExplorationMode;
use crate::intrinsic::{EmbeddingMode, NguConfig};
use crate::learner::{InitMode, ReprMode};
use std::collections::{HashMap, HashSet};
use std::path::PathBuf;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    PretrainNgu,
    PretrainRnd,
    Transfer,
}

impl Phase {
    pub fn is_pretrain(self) -> bool {
        matches!(self, Phase::PretrainNgu | Phase::PretrainRnd)
    }

    pub fn as_u8(self) -> u8 {
        match self {
            Phase::PretrainNgu => 0,
            Phase::PretrainRnd => 1,
            Phase::Transfer => 2,
        }
    }

    pub fn from_u8(x: u8) -> Result<Phase> {
        Ok(match x {
            0 => Phase::PretrainNgu,
            1 => Phase::PretrainRnd,
            2 => Phase::Transfer,
            _ => return Err(Error::Validation(format!("unknown phase tag {x}"))),
        })
    }
}

#[derive(Debug, Clone)]
pub struct RunSection {
    pub phase: Phase,
    pub total_env_steps: u64,
    pub eval_every: u64,
    pub eval_episodes: usize,
    pub n_actors: usize,
    pub actor_refresh: u64,
    pub seed: u64,
    pub init_mode: InitMode,
    pub pretrained_checkpoint: Option<PathBuf>,
    pub deterministic: bool,
}

#[derive(Debug, Clone)]
pub struct ExploreSection {
    pub mode: ExplorationMode,
    pub eps_max: f64,
    pub eps_levy_min: f64,
    pub eps_levy_max: f64,
    pub zeta_mu: f64,
    pub zeta_cap: usize,
    /// Residual stochasticity of the pre-trained policy: it acts greedily
    /// with probability `1 - pi_p_eps` and uniformly otherwise.
    pub pi_p_eps: f64,
}

#[derive(Debug, Clone)]
pub struct LearnerSection {
    pub repr_mode: ReprMode,
    pub gamma: f64,
    pub lambda_q: f64,
    pub lambda_retrace: f64,
    pub step_size: f64,
    pub target_period: u64,
    pub batch_size: usize,
    pub update_every: u64,
    pub min_fill: usize,
    pub hidden_dim: usize,
    pub feature_dim: usize,
    pub priority_eta: f64,
}

#[derive(Debug, Clone)]
pub struct ReplaySection {
    pub capacity: usize,
    pub sequence_length: usize,
    pub overlap: f64,
    pub priority_exponent: f64,
    pub is_exponent: f64,
}

#[derive(Debug, Clone)]
pub struct IntrinsicSection {
    pub ngu: NguConfig<f64>,
    pub embedding: EmbeddingMode,
    /// Embedding output dimension; 0 means "match the observation dim".
    pub embedding_dim: usize,
    pub embed_hidden: usize,
    pub embed_step_size: f64,
    pub rnd_dim: usize,
    pub rnd_hidden: usize,
    pub rnd_step_size: f64,
    pub sigma_floor: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub env: EnvSpec<f64>,
    pub run: RunSection,
    pub explore: ExploreSection,
    pub learner: LearnerSection,
    pub replay: ReplaySection,
    pub intrinsic: IntrinsicSection,
}

struct KeyValues {
    map: HashMap<String, String>,
    used: HashSet<String>,
}

impl KeyValues {
    fn parse(text: &str) -> Result<KeyValues> {
        let mut map = HashMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {}: expected `section.key = value`, got `{raw}`",
                    lineno + 1
                )));
            };
            let key = key.trim().to_string();
            if map.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(Error::Config(format!("duplicate key `{key}`")));
            }
        }
        Ok(KeyValues {
            map,
            used: HashSet::new(),
        })
    }

    fn raw(&mut self, key: &str) -> Option<String> {
        self.used.insert(key.to_string());
        self.map.get(key).cloned()
    }

    fn parse_with<T>(&mut self, key: &str, default: T, f: impl Fn(&str) -> Option<T>) -> Result<T> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => {
                f(&v).ok_or_else(|| Error::Config(format!("bad value `{v}` for `{key}`")))
            }
        }
    }

    fn f64(&mut self, key: &str, default: f64) -> Result<f64> {
        self.parse_with(key, default, |v| v.parse().ok())
    }

    fn u64(&mut self, key: &str, default: u64) -> Result<u64> {
        self.parse_with(key, default, |v| v.parse().ok())
    }

    fn usize(&mut self, key: &str, default: usize) -> Result<usize> {
        self.parse_with(key, default, |v| v.parse().ok())
    }

    fn bool(&mut self, key: &str, default: bool) -> Result<bool> {
        self.parse_with(key, default, |v| match v {
            "true" => Some(true),
            "false" => Some(false),
            _ => None,
        })
    }

    fn finish(&self) -> Result<()> {
        let mut unknown: Vec<&String> =
            self.map.keys().filter(|k| !self.used.contains(*k)).collect();
        unknown.sort();
        if let Some(first) = unknown.first() {
            return Err(Error::Config(format!("unknown config key `{first}`")));
        }
        Ok(())
    }
}

impl ExperimentConfig {
    pub fn from_text(text: &str) -> Result<ExperimentConfig> {
        let mut kv = KeyValues::parse(text)?;

        let kind = kv.parse_with("env.kind", EnvKind::Chain, |v| match v {
            "chain" => Some(EnvKind::Chain),
            "four_rooms" => Some(EnvKind::FourRooms),
            "dense_line" => Some(EnvKind::DenseLine),
            _ => None,
        })?;
        let size = kv.usize("env.size", 10)?;
        let reward_variant = kv.parse_with("env.reward_variant", RewardVariant::Standard, |v| {
            match v {
                "standard" => Some(RewardVariant::Standard),
                "sparse_easy" => Some(RewardVariant::SparseEasy),
                "deceptive_hard" => Some(RewardVariant::DeceptiveHard),
                _ => None,
            }
        })?;
        let distractor_reward = match kv.raw("env.distractor_reward") {
            None => None,
            Some(v) => Some(v.parse::<f64>().map_err(|_| {
                Error::Config(format!("bad value `{v}` for `env.distractor_reward`"))
            })?),
        };
        let goal_reward = kv.f64("env.goal_reward", 1.0)?;
        let episode_limit = kv.usize("env.episode_limit", 4 * size)?;
        let env_seed = kv.u64("env.seed", 0)?;
        let env = EnvSpec {
            kind,
            size,
            reward_variant,
            distractor_reward,
            goal_reward,
            episode_limit,
            seed: env_seed,
        };

        let phase = match kv.raw("run.phase") {
            None => return Err(Error::Config("missing required key `run.phase`".into())),
            Some(v) => match v.as_str() {
                "pretrain_ngu" => Phase::PretrainNgu,
                "pretrain_rnd" => Phase::PretrainRnd,
                "transfer" => Phase::Transfer,
                _ => return Err(Error::Config(format!("bad value `{v}` for `run.phase`"))),
            },
        };
        let run = RunSection {
            phase,
            total_env_steps: kv.u64("run.total_env_steps", 100_000)?,
            eval_every: kv.u64("run.eval_every", 5_000)?,
            eval_episodes: kv.usize("run.eval_episodes", 20)?,
            n_actors: kv.usize("run.n_actors", 4)?,
            actor_refresh: kv.u64("run.actor_refresh", 400)?,
            seed: kv.u64("run.seed", 1)?,
            init_mode: kv.parse_with("run.init_mode", InitMode::Scratch, |v| match v {
                "scratch" => Some(InitMode::Scratch),
                "partial" => Some(InitMode::Partial),
                "full" => Some(InitMode::Full),
                _ => None,
            })?,
            pretrained_checkpoint: kv.raw("run.pretrained_checkpoint").map(PathBuf::from),
            deterministic: kv.bool("run.deterministic", false)?,
        };

        let explore = ExploreSection {
            mode: kv.parse_with("explore.mode", ExplorationMode::EpsGreedy, |v| match v {
                "eps_greedy" => Some(ExplorationMode::EpsGreedy),
                "ez_greedy_repeat" => Some(ExplorationMode::EzGreedyRepeat),
                "bt_flights" => Some(ExplorationMode::BtFlights),
                "bt_action" => Some(ExplorationMode::BtAction),
                "bt_full" => Some(ExplorationMode::BtFull),
                _ => None,
            })?,
            eps_max: kv.f64("explore.eps_max", 0.4)?,
            eps_levy_min: kv.f64("explore.eps_levy_min", 1e-4)?,
            eps_levy_max: kv.f64("explore.eps_levy_max", 0.1)?,
            zeta_mu: kv.f64("explore.zeta_mu", 2.0)?,
            zeta_cap: kv.usize("explore.zeta_cap", 10 * episode_limit)?,
            pi_p_eps: kv.f64("explore.pi_p_eps", 0.0)?,
        };

        let learner = LearnerSection {
            repr_mode: kv.parse_with("learner.repr_mode", ReprMode::Tabular, |v| match v {
                "tabular" => Some(ReprMode::Tabular),
                "encoder_head" => Some(ReprMode::EncoderHead),
                _ => None,
            })?,
            gamma: kv.f64("learner.gamma", 0.99)?,
            lambda_q: kv.f64("learner.lambda_q", 0.7)?,
            lambda_retrace: kv.f64("learner.lambda_retrace", 0.95)?,
            step_size: kv.f64("learner.step_size", 2e-4)?,
            target_period: kv.u64("learner.target_period", 1500)?,
            batch_size: kv.usize("learner.batch_size", 64)?,
            update_every: kv.u64("learner.update_every", 4)?,
            min_fill: kv.usize("learner.min_fill", 50)?,
            hidden_dim: kv.usize("learner.hidden_dim", 32)?,
            feature_dim: kv.usize("learner.feature_dim", 16)?,
            priority_eta: kv.f64("learner.priority_eta", 0.9)?,
        };

        let replay = ReplaySection {
            capacity: kv.usize("replay.capacity", 4096)?,
            sequence_length: kv.usize("replay.sequence_length", 16)?,
            overlap: kv.f64("replay.overlap", 0.5)?,
            priority_exponent: kv.f64("replay.priority_exponent", 0.9)?,
            is_exponent: kv.f64("replay.is_exponent", 0.0)?,
        };

        let intrinsic = IntrinsicSection {
            ngu: NguConfig {
                k: kv.usize("intrinsic.k", 10)?,
                c: kv.f64("intrinsic.c", 0.001)?,
                eps_kernel: kv.f64("intrinsic.eps_kernel", 0.001)?,
                xi: kv.f64("intrinsic.xi", 0.008)?,
                s_m: kv.f64("intrinsic.s_m", 8.0)?,
                l_max: kv.f64("intrinsic.l_max", 5.0)?,
                d2m_floor: kv.f64("intrinsic.d2m_floor", 1e-9)?,
            },
            embedding: kv.parse_with("intrinsic.embedding", EmbeddingMode::Identity, |v| {
                match v {
                    "identity" => Some(EmbeddingMode::Identity),
                    "random_projection" => Some(EmbeddingMode::RandomProjection),
                    "inverse_dynamics" => Some(EmbeddingMode::InverseDynamics),
                    _ => None,
                }
            })?,
            embedding_dim: kv.usize("intrinsic.embedding_dim", 0)?,
            embed_hidden: kv.usize("intrinsic.embed_hidden", 32)?,
            embed_step_size: kv.f64("intrinsic.embed_step_size", 0.05)?,
            rnd_dim: kv.usize("intrinsic.rnd_dim", 16)?,
            rnd_hidden: kv.usize("intrinsic.rnd_hidden", 32)?,
            rnd_step_size: kv.f64("intrinsic.rnd_step_size", 0.05)?,
            sigma_floor: kv.f64("intrinsic.sigma_floor", 1e-8)?,
        };

        kv.finish()?;
        let cfg = ExperimentConfig {
            env,
            run,
            explore,
            learner,
            replay,
            intrinsic,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.intrinsic.ngu.validate()?;
        if self.run.total_env_steps == 0 {
            return Err(Error::Config("run.total_env_steps must be positive".into()));
        }
        if self.run.eval_every == 0 || self.run.eval_episodes == 0 {
            return Err(Error::Config(
                "run.eval_every and run.eval_episodes must be positive".into(),
            ));
        }
        if self.run.n_actors == 0 {
            return Err(Error::Config("run.n_actors must be positive".into()));
        }
        if self.run.phase.is_pretrain() {
            // pre-training explores over the base action set with plain
            // epsilon-greedy and optimizes the intrinsic reward only
            if self.explore.mode != ExplorationMode::EpsGreedy {
                return Err(Error::Config(
                    "pretrain phases require explore.mode = eps_greedy".into(),
                ));
            }
        } else if self.explore.mode.needs_pretrained()
            && self.run.pretrained_checkpoint.is_none()
        {
            return Err(Error::Config(
                "transfer with a bt_* exploration mode requires run.pretrained_checkpoint".into(),
            ));
        }
        if self.run.init_mode != InitMode::Scratch && self.run.pretrained_checkpoint.is_none() {
            return Err(Error::Config(
                "partial/full initialization requires run.pretrained_checkpoint".into(),
            ));
        }
        Ok(())
    }

    /// Baseline config used by tests: a small chain transfer run.
    pub fn default_transfer() -> ExperimentConfig {
        ExperimentConfig::from_text("run.phase = transfer").expect("default config is valid")
    }
}
