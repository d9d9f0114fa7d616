//! Flat `key = value` configuration covering every tunable in the pipeline,
//! with embedded defaults. Unknown keys are errors; `#` starts a comment.

use std::path::Path;

use crate::behavior_log::SynthConfig;
use crate::ctr_model::CtrTrainConfig;
use crate::il_grpo::{SftConfig, TrainConfig};
use crate::reward_engine::RewardConfig;
use crate::sample_builder::SampleBuilderConfig;
use crate::serving::ServeConfig;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub synth: SynthConfig,
    pub builder: SampleBuilderConfig,
    pub reward: RewardConfig,
    pub train: TrainConfig,
    pub sft: SftConfig,
    pub ctr: CtrTrainConfig,
    pub serve: ServeConfig,
    /// Policy embedding/hidden dimension.
    pub policy_dim: usize,
    /// Top-k cutoff for offline evaluation.
    pub eval_k: usize,
    /// RL steps for the train-rl command (and per simulated day).
    pub rl_steps: u64,
    /// Emit one reward-trace line per rollout during RL.
    pub reward_trace: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            synth: SynthConfig::default(),
            builder: SampleBuilderConfig::default(),
            reward: RewardConfig::default(),
            train: TrainConfig::default(),
            sft: SftConfig::default(),
            ctr: CtrTrainConfig::default(),
            serve: ServeConfig::default(),
            policy_dim: 32,
            eval_k: 10,
            rl_steps: 200,
            reward_trace: false,
        }
    }
}

impl PipelineConfig {
    /// Last synthesized day; held out as the evaluation day.
    pub fn test_day(&self) -> i64 {
        self.synth.days
    }

    /// All keys with their current values, in dump order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let c = self;
        vec![
            ("synth.n_users", c.synth.n_users.to_string()),
            ("synth.days", c.synth.days.to_string()),
            ("synth.events_min", c.synth.events_per_day.0.to_string()),
            ("synth.events_max", c.synth.events_per_day.1.to_string()),
            ("synth.exposures_min", c.synth.exposures_per_day.0.to_string()),
            ("synth.exposures_max", c.synth.exposures_per_day.1.to_string()),
            ("synth.noise_category_prob", c.synth.noise_category_prob.to_string()),
            ("synth.interests_min", c.synth.interests_per_user.0.to_string()),
            ("synth.interests_max", c.synth.interests_per_user.1.to_string()),
            ("synth.base_click_min", c.synth.base_click_rate.0.to_string()),
            ("synth.base_click_max", c.synth.base_click_rate.1.to_string()),
            ("synth.position_decay", c.synth.position_decay.to_string()),
            ("builder.theta_rel", c.builder.theta_rel.to_string()),
            ("builder.k_max", c.builder.k_max.to_string()),
            ("builder.llm_gen_per_category", c.builder.llm_gen_per_category.to_string()),
            ("reward.w_ctr", c.reward.w_ctr.to_string()),
            ("reward.w_rouge", c.reward.w_rouge.to_string()),
            ("reward.w_len", c.reward.w_len.to_string()),
            ("reward.gamma", c.reward.gamma.to_string()),
            ("reward.beta_ctr", c.reward.beta_ctr.to_string()),
            ("reward.lambda", c.reward.lambda.to_string()),
            ("reward.reward_clip", c.reward.reward_clip.to_string()),
            ("reward.len_min", c.reward.len_min.to_string()),
            ("reward.len_max", c.reward.len_max.to_string()),
            ("reward.dup_threshold", c.reward.dup_threshold.to_string()),
            ("reward.c_rep", c.reward.c_rep.to_string()),
            ("train.group_size", c.train.group_size.to_string()),
            ("train.eps_low", c.train.eps_low.to_string()),
            ("train.eps_high", c.train.eps_high.to_string()),
            ("train.tau_percentile", c.train.tau_percentile.to_string()),
            ("train.beta_entropy_start", c.train.beta_entropy_start.to_string()),
            ("train.beta_entropy_end", c.train.beta_entropy_end.to_string()),
            ("train.total_steps", c.train.total_steps.to_string()),
            ("train.advantage_clip", c.train.advantage_clip.to_string()),
            ("train.value_clip", c.train.value_clip.to_string()),
            ("train.difficulty_low", c.train.difficulty_low.to_string()),
            ("train.difficulty_high", c.train.difficulty_high.to_string()),
            ("train.eps_stab", c.train.eps_stab.to_string()),
            ("train.learning_rate", c.train.learning_rate.to_string()),
            ("train.rollout_batch", c.train.rollout_batch.to_string()),
            ("train.instructed_k", c.train.instructed_k.to_string()),
            ("train.temperature", c.train.sample.temperature.to_string()),
            ("train.top_k", c.train.sample.top_k.to_string()),
            ("train.max_len", c.train.sample.max_len.to_string()),
            ("sft.epochs", c.sft.epochs.to_string()),
            ("sft.learning_rate", c.sft.learning_rate.to_string()),
            ("sft.batch_size", c.sft.batch_size.to_string()),
            ("ctr.learning_rate", c.ctr.learning_rate.to_string()),
            ("ctr.max_epochs", c.ctr.max_epochs.to_string()),
            ("ctr.batch_size", c.ctr.batch_size.to_string()),
            ("ctr.plateau_tol", c.ctr.plateau_tol.to_string()),
            ("serve.m", c.serve.m.to_string()),
            ("serve.alpha", c.serve.alpha.to_string()),
            ("serve.debounce_window", c.serve.debounce_window.to_string()),
            ("serve.top_n", c.serve.top_n.to_string()),
            ("serve.l_cap", c.serve.l_cap.to_string()),
            ("serve.position_decay", c.serve.position_decay.to_string()),
            ("policy.dim", c.policy_dim.to_string()),
            ("eval.k", c.eval_k.to_string()),
            ("rl.steps", c.rl_steps.to_string()),
            ("reward_trace", c.reward_trace.to_string()),
        ]
    }

    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        }
        out
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn p<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("bad value {value:?} for key {key:?}")))
        }
        let c = self;
        match key {
            "synth.n_users" => c.synth.n_users = p(key, value)?,
            "synth.days" => c.synth.days = p(key, value)?,
            "synth.events_min" => c.synth.events_per_day.0 = p(key, value)?,
            "synth.events_max" => c.synth.events_per_day.1 = p(key, value)?,
            "synth.exposures_min" => c.synth.exposures_per_day.0 = p(key, value)?,
            "synth.exposures_max" => c.synth.exposures_per_day.1 = p(key, value)?,
            "synth.noise_category_prob" => c.synth.noise_category_prob = p(key, value)?,
            "synth.interests_min" => c.synth.interests_per_user.0 = p(key, value)?,
            "synth.interests_max" => c.synth.interests_per_user.1 = p(key, value)?,
            "synth.base_click_min" => c.synth.base_click_rate.0 = p(key, value)?,
            "synth.base_click_max" => c.synth.base_click_rate.1 = p(key, value)?,
            "synth.position_decay" => c.synth.position_decay = p(key, value)?,
            "builder.theta_rel" => c.builder.theta_rel = p(key, value)?,
            "builder.k_max" => c.builder.k_max = p(key, value)?,
            "builder.llm_gen_per_category" => c.builder.llm_gen_per_category = p(key, value)?,
            "reward.w_ctr" => c.reward.w_ctr = p(key, value)?,
            "reward.w_rouge" => c.reward.w_rouge = p(key, value)?,
            "reward.w_len" => c.reward.w_len = p(key, value)?,
            "reward.gamma" => c.reward.gamma = p(key, value)?,
            "reward.beta_ctr" => c.reward.beta_ctr = p(key, value)?,
            "reward.lambda" => c.reward.lambda = p(key, value)?,
            "reward.reward_clip" => c.reward.reward_clip = p(key, value)?,
            "reward.len_min" => c.reward.len_min = p(key, value)?,
            "reward.len_max" => c.reward.len_max = p(key, value)?,
            "reward.dup_threshold" => c.reward.dup_threshold = p(key, value)?,
            "reward.c_rep" => c.reward.c_rep = p(key, value)?,
            "train.group_size" => c.train.group_size = p(key, value)?,
            "train.eps_low" => c.train.eps_low = p(key, value)?,
            "train.eps_high" => c.train.eps_high = p(key, value)?,
            "train.tau_percentile" => c.train.tau_percentile = p(key, value)?,
            "train.beta_entropy_start" => c.train.beta_entropy_start = p(key, value)?,
            "train.beta_entropy_end" => c.train.beta_entropy_end = p(key, value)?,
            "train.total_steps" => c.train.total_steps = p(key, value)?,
            "train.advantage_clip" => c.train.advantage_clip = p(key, value)?,
            "train.value_clip" => c.train.value_clip = p(key, value)?,
            "train.difficulty_low" => c.train.difficulty_low = p(key, value)?,
            "train.difficulty_high" => c.train.difficulty_high = p(key, value)?,
            "train.eps_stab" => c.train.eps_stab = p(key, value)?,
            "train.learning_rate" => c.train.learning_rate = p(key, value)?,
            "train.rollout_batch" => c.train.rollout_batch = p(key, value)?,
            "train.instructed_k" => c.train.instructed_k = p(key, value)?,
            "train.temperature" => c.train.sample.temperature = p(key, value)?,
            "train.top_k" => c.train.sample.top_k = p(key, value)?,
            "train.max_len" => c.train.sample.max_len = p(key, value)?,
            "sft.epochs" => c.sft.epochs = p(key, value)?,
            "sft.learning_rate" => c.sft.learning_rate = p(key, value)?,
            "sft.batch_size" => c.sft.batch_size = p(key, value)?,
            "ctr.learning_rate" => c.ctr.learning_rate = p(key, value)?,
            "ctr.max_epochs" => c.ctr.max_epochs = p(key, value)?,
            "ctr.batch_size" => c.ctr.batch_size = p(key, value)?,
            "ctr.plateau_tol" => c.ctr.plateau_tol = p(key, value)?,
            "serve.m" => c.serve.m = p(key, value)?,
            "serve.alpha" => c.serve.alpha = p(key, value)?,
            "serve.debounce_window" => c.serve.debounce_window = p(key, value)?,
            "serve.top_n" => c.serve.top_n = p(key, value)?,
            "serve.l_cap" => c.serve.l_cap = p(key, value)?,
            "serve.position_decay" => c.serve.position_decay = p(key, value)?,
            "policy.dim" => c.policy_dim = p(key, value)?,
            "eval.k" => c.eval_k = p(key, value)?,
            "rl.steps" => c.rl_steps = p(key, value)?,
            "reward_trace" => c.reward_trace = p(key, value)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = PipelineConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value, got {raw:?}", i + 1))
            })?;
            cfg.set(k.trim(), v.trim())?;
        }
        // Keep the serve/train sampling and prompt settings coherent.
        cfg.serve.instructed_k = cfg.train.instructed_k;
        cfg.serve.sample = cfg.train.sample;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_str(&text)
    }

    /// Defaults, optionally overlaid with a config file.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::from_file(p),
            None => Ok(Self::parse_str("").expect("defaults parse")),
        }
    }
}
