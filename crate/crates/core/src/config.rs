//! Run configuration in a plain `key = value` text format.
//!
//! Blank lines and `#` comments are ignored. Unknown keys are errors so a
//! typo cannot silently fall back to a default.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::env::{BenchmarkConfig, EpisodeConfig, ForestSpec, TrackObstacleSpec};
use crate::error::{Error, Result};
use crate::pursuit::PPConfig;
use crate::td3::Td3Config;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvKind {
    Forest,
    Track,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlannerKind {
    Hybrid,
    Benchmark,
    PurePursuit,
}

impl EnvKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EnvKind::Forest => "forest",
            EnvKind::Track => "track",
        }
    }
}

impl PlannerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PlannerKind::Hybrid => "hybrid",
            PlannerKind::Benchmark => "benchmark",
            PlannerKind::PurePursuit => "pure-pursuit",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub environment: EnvKind,
    pub planner: PlannerKind,
    /// Master seed for training (network init, exploration, map sequence).
    pub seed: u64,
    /// Base seed of the evaluation maps; episode `i` uses `eval_seed + i`.
    pub eval_seed: u64,
    pub episodes: usize,
    pub train_steps: usize,
    /// Checkpoint every this many training steps (0 disables periodic ones).
    pub checkpoint_every: usize,
    /// Episodes in the moving success-rate window of the training curve.
    pub curve_window: usize,
    pub checkpoint: Option<PathBuf>,
    pub out: PathBuf,
    /// Alternative `x,y,w_left,w_right` track file; the bundled track otherwise.
    pub track_file: Option<PathBuf>,
    pub track_closed: bool,
    pub episode: EpisodeConfig,
    pub pp: PPConfig,
    pub td3: Td3Config,
    pub forest: ForestSpec,
    pub track_obstacles: TrackObstacleSpec,
    pub bench: BenchmarkConfig,
    /// Text the config was parsed from, for hashing into manifests.
    pub source: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            environment: EnvKind::Forest,
            planner: PlannerKind::Hybrid,
            seed: 0,
            eval_seed: 1_000_000,
            episodes: 100,
            train_steps: 100_000,
            checkpoint_every: 10_000,
            curve_window: 20,
            checkpoint: None,
            out: PathBuf::from("out"),
            track_file: None,
            track_closed: true,
            episode: EpisodeConfig::default(),
            pp: PPConfig::default(),
            td3: Td3Config::default(),
            forest: ForestSpec::default(),
            track_obstacles: TrackObstacleSpec::default(),
            bench: BenchmarkConfig::default(),
            source: String::new(),
        }
    }
}

fn parse_value<T: FromStr>(origin: &Path, line: u64, key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::parse(origin, line, format!("`{key}`: cannot parse `{value}`: {e}")))
}

impl RunConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut cfg = RunConfig {
            source: text.to_string(),
            ..Default::default()
        };
        let base = origin.parent().unwrap_or(Path::new(""));
        for (idx, raw) in text.lines().enumerate() {
            let line = idx as u64 + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| Error::parse(origin, line, "expected `key = value`"))?;
            cfg.set(key.trim(), value.trim(), base, origin, line)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    fn set(&mut self, key: &str, value: &str, base: &Path, origin: &Path, line: u64) -> Result<()> {
        macro_rules! num {
            ($field:expr) => {
                $field = parse_value(origin, line, key, value)?
            };
        }
        let path = || base.join(value);
        match key {
            "environment" => {
                self.environment = match value {
                    "forest" => EnvKind::Forest,
                    "track" => EnvKind::Track,
                    _ => return Err(Error::parse(origin, line, format!("unknown environment `{value}`"))),
                }
            }
            "planner" => {
                self.planner = match value {
                    "hybrid" => PlannerKind::Hybrid,
                    "benchmark" => PlannerKind::Benchmark,
                    "pure-pursuit" => PlannerKind::PurePursuit,
                    _ => return Err(Error::parse(origin, line, format!("unknown planner `{value}`"))),
                }
            }
            "seed" => num!(self.seed),
            "eval_seed" => num!(self.eval_seed),
            "episodes" => num!(self.episodes),
            "train_steps" => num!(self.train_steps),
            "checkpoint_every" => num!(self.checkpoint_every),
            "curve_window" => num!(self.curve_window),
            "checkpoint" => self.checkpoint = Some(path()),
            "out" => self.out = path(),
            "track_file" => self.track_file = Some(path()),
            "track_closed" => num!(self.track_closed),

            "plan_period" => num!(self.episode.plan_period),
            "max_steps" => num!(self.episode.max_steps),
            "sim.wheelbase" => num!(self.episode.params.wheelbase),
            "sim.length" => num!(self.episode.params.length),
            "sim.width" => num!(self.episode.params.width),
            "sim.mass" => num!(self.episode.params.mass),
            "sim.friction" => num!(self.episode.params.friction),
            "sim.gravity" => num!(self.episode.params.gravity),
            "sim.delta_max" => num!(self.episode.params.delta_max),
            "sim.v_max" => num!(self.episode.params.v_max),
            "sim.max_steer_rate" => num!(self.episode.params.max_steer_rate),
            "sim.max_accel" => num!(self.episode.params.max_accel),
            "sim.steer_gain" => num!(self.episode.params.steer_gain),
            "sim.speed_gain" => num!(self.episode.params.speed_gain),
            "sim.dt" => num!(self.episode.params.dt),
            "sim.n_beams" => num!(self.episode.params.n_beams),
            "sim.beam_fov" => num!(self.episode.params.beam_fov),
            "sim.max_range" => num!(self.episode.params.max_range),
            "reward.r_crash" => num!(self.episode.reward.r_crash),
            "reward.beta1" => num!(self.episode.reward.beta1),
            "reward.beta2" => num!(self.episode.reward.beta2),

            "pp.lookahead" => num!(self.pp.lookahead),
            "pp.horizon" => num!(self.pp.horizon),

            "td3.gamma" => num!(self.td3.gamma),
            "td3.tau" => num!(self.td3.tau),
            "td3.policy_noise" => num!(self.td3.policy_noise),
            "td3.noise_clip" => num!(self.td3.noise_clip),
            "td3.policy_delay" => num!(self.td3.policy_delay),
            "td3.exploration_noise" => num!(self.td3.exploration_noise),
            "td3.batch_size" => num!(self.td3.batch_size),
            "td3.actor_lr" => num!(self.td3.actor_lr),
            "td3.critic_lr" => num!(self.td3.critic_lr),
            "td3.buffer_capacity" => num!(self.td3.buffer_capacity),
            "td3.warmup_steps" => num!(self.td3.warmup_steps),
            "td3.hidden" => {
                self.td3.hidden = value
                    .split(',')
                    .map(|v| parse_value(origin, line, key, v.trim()))
                    .collect::<Result<_>>()?
            }

            "forest.length" => num!(self.forest.length),
            "forest.width" => num!(self.forest.width),
            "forest.obstacles" => num!(self.forest.count),
            "forest.obstacle_size" => num!(self.forest.size),
            "forest.min_gap" => num!(self.forest.min_gap),
            "forest.start_clearance" => num!(self.forest.start_clearance),
            "forest.goal_clearance" => num!(self.forest.goal_clearance),
            "forest.run_out" => num!(self.forest.run_out),

            "track.obstacles" => num!(self.track_obstacles.count),
            "track.obstacle_size" => num!(self.track_obstacles.size),
            "track.min_free" => num!(self.track_obstacles.min_free),
            "track.min_spacing" => num!(self.track_obstacles.min_spacing),
            "track.start_clearance" => num!(self.track_obstacles.start_clearance),
            "track.end_clearance" => num!(self.track_obstacles.end_clearance),

            "bench.wall_clearance" => num!(self.bench.wall_clearance),
            "bench.obstacle_clearance" => num!(self.bench.obstacle_clearance),
            "bench.samples_per_segment" => num!(self.bench.samples_per_segment),
            _ => return Err(Error::parse(origin, line, format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.episode.validate()?;
        self.pp.validate()?;
        self.td3.validate()?;
        self.forest.validate()?;
        if self.episodes == 0 {
            return Err(Error::validation("episodes must be positive"));
        }
        if self.curve_window == 0 {
            return Err(Error::validation("curve_window must be positive"));
        }
        if self.bench.samples_per_segment == 0 {
            return Err(Error::validation("bench.samples_per_segment must be positive"));
        }
        if let Some(t) = &self.track_file {
            if !t.exists() {
                return Err(Error::validation(format!("track file {} does not exist", t.display())));
            }
        }
        Ok(())
    }

    /// SHA-256 of the config text, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.source.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_keys_and_comments() {
        let text = "# demo\nenvironment = track\nplanner = pure-pursuit # inline\nseed = 7\ntd3.hidden = 64, 32\nsim.dt = 0.005\n\nout = results\n";
        let cfg = RunConfig::parse(text, Path::new("cfg/run.conf")).unwrap();
        assert_eq!(cfg.environment, EnvKind::Track);
        assert_eq!(cfg.planner, PlannerKind::PurePursuit);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.td3.hidden, vec![64, 32]);
        assert_eq!(cfg.episode.params.dt, 0.005);
        assert_eq!(cfg.out, PathBuf::from("cfg/results"));
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = RunConfig::parse("seed = 1\nbogus = 2\n", Path::new("c")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = RunConfig::parse("seed = x\n", Path::new("c")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        let err = RunConfig::parse("episodes\n", Path::new("c")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(RunConfig::parse("episodes = 0\n", Path::new("c")).is_err());
        assert!(RunConfig::parse("sim.dt = -1\n", Path::new("c")).is_err());
        assert!(RunConfig::parse("track_file = /nonexistent/t.csv\n", Path::new("c")).is_err());
    }

    #[test]
    fn hash_tracks_text() {
        let a = RunConfig::parse("seed = 1\n", Path::new("c")).unwrap();
        let b = RunConfig::parse("seed = 2\n", Path::new("c")).unwrap();
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
