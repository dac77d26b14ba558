//! Training, evaluation, planning and plotting entry points shared by the
//! command-line tool and the tests.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{EnvKind, PlannerKind, RunConfig};
use crate::env::{
    bundled_track, gen_forest, min_curvature_path, place_track_obstacles, EpisodeLog, EpisodeOutcome, Goal, Episode,
    Scenario, Termination, TrackObstacleSpec, ForestSpec,
};
use crate::error::{Error, Result};
use crate::global_plan::{optimize_offsets, to_plan_path, OffsetConfig, TrackModel};
use crate::neural::Mlp;
use crate::planner::{
    assemble_state, ActorPolicy, AgentPolicy, HybridPlanner, LocalPlanner, PurePursuitPlanner, RandomPolicy,
    VEHICLE_FEATURES,
};
use crate::plot::{action_svg, trajectory_svg};
use crate::pursuit::{self, PlanPath};
use crate::sim::{cast_scan, ObstacleMap, VehicleState};
use crate::td3::{load_actor, ReplayBuffer, Td3Agent, Transition};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Static parts of an environment: the track and its obstacle-free raceline.
#[derive(Debug, Clone)]
pub struct World {
    pub kind: EnvKind,
    pub track: Option<TrackModel>,
    pub raceline: Option<PlanPath>,
}

impl World {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        match cfg.environment {
            EnvKind::Forest => Ok(Self {
                kind: EnvKind::Forest,
                track: None,
                raceline: None,
            }),
            EnvKind::Track => {
                let track = match &cfg.track_file {
                    Some(p) => TrackModel::load(p, cfg.track_closed)?,
                    None => bundled_track()?,
                };
                let raceline = min_curvature_path(&track, None, &cfg.bench)?;
                Ok(Self {
                    kind: EnvKind::Track,
                    track: Some(track),
                    raceline: Some(raceline),
                })
            }
        }
    }

    fn forest_spec(cfg: &RunConfig, seed: u64, obstacles: bool) -> ForestSpec {
        ForestSpec {
            seed,
            count: if obstacles { cfg.forest.count } else { 0 },
            ..cfg.forest.clone()
        }
    }

    /// Scenario for map `seed`. The benchmark follows a plan made with the
    /// obstacles known; the other planners follow the plain reference.
    pub fn scenario(&self, cfg: &RunConfig, seed: u64, obstacles: bool, planner: PlannerKind) -> Result<Scenario> {
        match self.kind {
            EnvKind::Forest => {
                let spec = Self::forest_spec(cfg, seed, obstacles);
                let (map, line) = gen_forest(&spec)?;
                let reference = if planner == PlannerKind::Benchmark {
                    min_curvature_path(&spec.track_model()?, Some(&map), &cfg.bench)?
                } else {
                    line
                };
                Ok(Scenario {
                    map,
                    reference,
                    goal: Goal::CrossX(spec.length),
                    start: VehicleState::default(),
                })
            }
            EnvKind::Track => {
                let track = self.track.as_ref().expect("track world has a track");
                let map = if obstacles {
                    place_track_obstacles(
                        track,
                        &TrackObstacleSpec {
                            seed,
                            ..cfg.track_obstacles.clone()
                        },
                    )?
                } else {
                    track.boundary_map(vec![])?
                };
                let reference = if planner == PlannerKind::Benchmark && obstacles {
                    min_curvature_path(track, Some(&map), &cfg.bench)?
                } else {
                    self.raceline.clone().expect("track world has a raceline")
                };
                Scenario::lap(track, map, reference)
            }
        }
    }
}

/// Scaled planner state at `vehicle` in `scenario`.
pub fn observe(scenario: &Scenario, vehicle: &VehicleState, cfg: &RunConfig) -> Result<Vec<f64>> {
    let params = &cfg.episode.params;
    let scan = cast_scan(vehicle, &scenario.map, params);
    let pf = pursuit::plan(vehicle, &scenario.reference, &cfg.pp, params)?;
    Ok(assemble_state(vehicle, pf, &scan, params)?.values)
}

pub fn state_dim(cfg: &RunConfig) -> usize {
    VEHICLE_FEATURES + cfg.episode.params.n_beams
}

/// One row of the training curve, written per finished episode.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub step: usize,
    pub episode_reward: f64,
    pub success_rate_window: f64,
    pub mean_abs_delta_nn: f64,
}

pub const CURVE_HEADER: &str = "step,episode_reward,success_rate_window,mean_abs_delta_nn";

pub fn curve_csv(rows: &[CurveRow]) -> String {
    let mut out = format!("{CURVE_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.step, r.episode_reward, r.success_rate_window, r.mean_abs_delta_nn
        );
    }
    out
}

pub struct TrainResult {
    pub agent: Td3Agent,
    pub curve: Vec<CurveRow>,
    /// Mean `|delta_nn|` of every training decision, in order.
    pub delta_nn: Vec<f64>,
}

/// Hook called after every training step with the step count and agent,
/// used for periodic checkpoints.
pub type StepHook<'a> = dyn FnMut(usize, &Td3Agent) -> Result<()> + 'a;

fn derive_seed(seed: u64, stream: u64) -> u64 {
    seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// TD3 training of the hybrid planner's policy. A fresh map is drawn for
/// every episode. Only crashes end the bootstrap; reaching the goal or
/// timing out is a truncation.
pub fn train(cfg: &RunConfig, world: &World, hook: &mut StepHook<'_>) -> Result<TrainResult> {
    let dim = state_dim(cfg);
    let mut agent = Td3Agent::new(dim, cfg.td3.clone(), cfg.seed)?;
    let mut buffer = ReplayBuffer::new(cfg.td3.buffer_capacity, derive_seed(cfg.seed, 1))?;
    let mut maps = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 2));
    let mut curve = Vec::new();
    let mut delta_nn = Vec::with_capacity(cfg.train_steps);
    let mut outcomes: Vec<bool> = Vec::new();
    let mut step = 0usize;

    while step < cfg.train_steps {
        let scenario = world.scenario(cfg, maps.gen(), true, PlannerKind::Hybrid)?;
        let mut episode = Episode::new(&scenario, &cfg.episode);
        let mut pending: Option<(Vec<f64>, f64, f64)> = None;
        let (mut ep_reward, mut ep_delta, mut ep_decisions) = (0.0, 0.0, 0usize);

        while episode.termination().is_none() && step < cfg.train_steps {
            let warm = (step as u64) < cfg.td3.warmup_steps;
            let adv = {
                let mut random;
                let mut learned;
                let policy: &mut dyn crate::planner::ActionSource = if warm {
                    random = RandomPolicy(&mut agent);
                    &mut random
                } else {
                    learned = AgentPolicy {
                        agent: &mut agent,
                        explore: true,
                    };
                    &mut learned
                };
                let mut planner = HybridPlanner {
                    path: &scenario.reference,
                    pp: &cfg.pp,
                    params: &cfg.episode.params,
                    policy,
                };
                episode.advance(&mut planner)?
            };
            let state = adv.decision.state.clone().expect("hybrid decisions carry a state");
            if let Some((s, a, r)) = pending.take() {
                buffer.push(Transition {
                    state: s,
                    action: a,
                    reward: r,
                    next_state: state.clone(),
                    done: false,
                })?;
            }
            if adv.terminal.is_some() {
                buffer.push(Transition {
                    state,
                    action: adv.decision.action,
                    reward: adv.reward,
                    next_state: observe(&scenario, episode.state(), cfg)?,
                    done: adv.crashed,
                })?;
            } else {
                pending = Some((state, adv.decision.action, adv.reward));
            }
            ep_reward += adv.reward;
            ep_delta += adv.decision.delta_nn.abs();
            ep_decisions += 1;
            delta_nn.push(adv.decision.delta_nn.abs());
            step += 1;
            agent.train_step(&mut buffer, step as u64)?;
            hook(step, &agent)?;
        }

        outcomes.push(episode.termination() == Some(Termination::Success));
        let window = &outcomes[outcomes.len().saturating_sub(cfg.curve_window)..];
        curve.push(CurveRow {
            step,
            episode_reward: ep_reward,
            success_rate_window: window.iter().filter(|&&s| s).count() as f64 / window.len() as f64,
            mean_abs_delta_nn: ep_delta / ep_decisions.max(1) as f64,
        });
    }
    Ok(TrainResult { agent, curve, delta_nn })
}

/// Per-episode evaluation record.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub condition: &'static str,
    pub episode: usize,
    pub seed: u64,
    pub termination: Termination,
    pub elapsed: f64,
    pub total_reward: f64,
    pub mean_abs_delta_nn: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionSummary {
    pub condition: &'static str,
    pub episodes: usize,
    pub successes: usize,
    pub crashes: usize,
    pub timeouts: usize,
    /// Mean completion time over successful episodes only.
    pub mean_time: Option<f64>,
}

impl ConditionSummary {
    pub fn success_rate(&self) -> f64 {
        self.successes as f64 / self.episodes as f64
    }

    fn from_records(condition: &'static str, records: &[EvalRecord]) -> Self {
        let count = |t: Termination| records.iter().filter(|r| r.termination == t).count();
        let times: Vec<f64> = records
            .iter()
            .filter(|r| r.termination == Termination::Success)
            .map(|r| r.elapsed)
            .collect();
        Self {
            condition,
            episodes: records.len(),
            successes: count(Termination::Success),
            crashes: count(Termination::Crash),
            timeouts: count(Termination::Timeout),
            mean_time: (!times.is_empty()).then(|| times.iter().sum::<f64>() / times.len() as f64),
        }
    }
}

pub struct ConditionResult {
    pub summary: ConditionSummary,
    pub records: Vec<EvalRecord>,
    pub outcomes: Vec<EpisodeOutcome>,
    pub scenarios: Vec<Scenario>,
}

fn run_planner(
    cfg: &RunConfig,
    planner: PlannerKind,
    actor: Option<&Mlp>,
    scenario: &Scenario,
) -> Result<EpisodeOutcome> {
    let params = &cfg.episode.params;
    match planner {
        PlannerKind::Hybrid => {
            let actor = actor.ok_or_else(|| Error::validation("the hybrid planner needs a policy"))?;
            let mut policy = ActorPolicy(actor.clone());
            let mut p = HybridPlanner {
                path: &scenario.reference,
                pp: &cfg.pp,
                params,
                policy: &mut policy,
            };
            crate::env::run_episode(&mut p, scenario, &cfg.episode)
        }
        PlannerKind::Benchmark | PlannerKind::PurePursuit => {
            let mut p = PurePursuitPlanner {
                path: &scenario.reference,
                pp: &cfg.pp,
                params,
            };
            crate::env::run_episode(&mut p as &mut dyn LocalPlanner, scenario, &cfg.episode)
        }
    }
}

/// Runs `cfg.episodes` seeded episodes of one condition. Episodes run in
/// parallel; results keep episode order.
pub fn evaluate_condition(
    cfg: &RunConfig,
    world: &World,
    planner: PlannerKind,
    actor: Option<&Mlp>,
    obstacles: bool,
) -> Result<ConditionResult> {
    let condition = if obstacles { "obstacles" } else { "empty" };
    let runs: Vec<(Scenario, EpisodeOutcome)> = (0..cfg.episodes)
        .into_par_iter()
        .map(|i| {
            let scenario = world.scenario(cfg, cfg.eval_seed + i as u64, obstacles, planner)?;
            let outcome = run_planner(cfg, planner, actor, &scenario)?;
            Ok((scenario, outcome))
        })
        .collect::<Result<_>>()?;
    let records: Vec<EvalRecord> = runs
        .iter()
        .enumerate()
        .map(|(i, (_, o))| EvalRecord {
            condition,
            episode: i,
            seed: cfg.eval_seed + i as u64,
            termination: o.termination,
            elapsed: o.elapsed,
            total_reward: o.total_reward(),
            mean_abs_delta_nn: o.mean_abs_delta_nn(),
        })
        .collect();
    let (scenarios, outcomes) = runs.into_iter().unzip();
    Ok(ConditionResult {
        summary: ConditionSummary::from_records(condition, &records),
        records,
        outcomes,
        scenarios,
    })
}

pub fn summary_table(planner: PlannerKind, env: EnvKind, rows: &[ConditionSummary]) -> String {
    let mut out = String::from("planner,environment,condition,episodes,successes,crashes,timeouts,success_rate,mean_time_s\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            planner.as_str(),
            env.as_str(),
            r.condition,
            r.episodes,
            r.successes,
            r.crashes,
            r.timeouts,
            r.success_rate(),
            r.mean_time.map_or_else(|| "nan".to_string(), |t| format!("{t}"))
        );
    }
    out
}

pub fn records_csv(records: &[EvalRecord]) -> String {
    let mut out = String::from("condition,episode,seed,termination,elapsed,total_reward,mean_abs_delta_nn\n");
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.condition,
            r.episode,
            r.seed,
            r.termination.as_str(),
            r.elapsed,
            r.total_reward,
            r.mean_abs_delta_nn
        );
    }
    out
}

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes `manifest_<command>.txt` and a copy of the config
/// (`config_<command>.conf`) so the run can be replayed.
pub fn write_manifest(cfg: &RunConfig, command: &str, extra: &[(String, String)]) -> Result<()> {
    let mut m = String::new();
    let _ = writeln!(m, "command = {command}");
    let _ = writeln!(m, "version = {VERSION}");
    let _ = writeln!(m, "config_sha256 = {}", cfg.hash());
    let _ = writeln!(m, "environment = {}", cfg.environment.as_str());
    let _ = writeln!(m, "planner = {}", cfg.planner.as_str());
    let _ = writeln!(m, "seed = {}", cfg.seed);
    let _ = writeln!(m, "eval_seed = {}", cfg.eval_seed);
    let _ = writeln!(m, "episodes = {}", cfg.episodes);
    let _ = writeln!(m, "train_steps = {}", cfg.train_steps);
    for (k, v) in extra {
        let _ = writeln!(m, "{k} = {v}");
    }
    write(&cfg.out.join(format!("manifest_{command}.txt")), &m)?;
    write(&cfg.out.join(format!("config_{command}.conf")), &cfg.source)
}

pub fn checkpoint_dir(cfg: &RunConfig) -> PathBuf {
    cfg.checkpoint.clone().unwrap_or_else(|| cfg.out.join("checkpoint"))
}

/// Trains and writes the final checkpoint, periodic checkpoints and the
/// training curve. Returns a short report.
pub fn cmd_train(cfg: &RunConfig) -> Result<String> {
    let world = World::new(cfg)?;
    let out = cfg.out.clone();
    let manifest_extra = vec![
        ("environment".to_string(), cfg.environment.as_str().to_string()),
        ("seed".to_string(), cfg.seed.to_string()),
        ("train_steps".to_string(), cfg.train_steps.to_string()),
    ];
    let mut hook = |step: usize, agent: &Td3Agent| -> Result<()> {
        if cfg.checkpoint_every > 0 && step.is_multiple_of(cfg.checkpoint_every) {
            agent.save_checkpoint(&out.join(format!("checkpoint_{step:07}")), &manifest_extra)?;
        }
        Ok(())
    };
    let result = match train(cfg, &world, &mut hook) {
        Ok(r) => r,
        Err(e @ Error::Diverged(_)) => {
            let dump = format!("error = {e}\nconfig_sha256 = {}\nseed = {}\n", cfg.hash(), cfg.seed);
            write(&out.join("diverged.txt"), &dump)?;
            return Err(e);
        }
        Err(e) => return Err(e),
    };
    result.agent.save_checkpoint(&checkpoint_dir(cfg), &manifest_extra)?;
    write(&out.join("training_curve.csv"), &curve_csv(&result.curve))?;
    write_manifest(cfg, "train", &[])?;
    let last = result.curve.last();
    Ok(format!(
        "trained {} steps over {} episodes; final window success rate {:.2}; checkpoint {}\n",
        cfg.train_steps,
        result.curve.len(),
        last.map_or(0.0, |r| r.success_rate_window),
        checkpoint_dir(cfg).display()
    ))
}

/// Evaluates the configured planner with and without obstacles.
pub fn cmd_eval(cfg: &RunConfig) -> Result<String> {
    let actor = if cfg.planner == PlannerKind::Hybrid {
        let dir = checkpoint_dir(cfg);
        if !dir.join("actor.bin").exists() {
            return Err(Error::validation(format!("no checkpoint at {}", dir.display())));
        }
        Some(load_actor(&dir)?)
    } else {
        None
    };
    if let Some(a) = &actor {
        if a.input_dim() != state_dim(cfg) {
            return Err(Error::validation("checkpoint input size does not match the configured scan"));
        }
    }
    let world = World::new(cfg)?;
    let mut summaries = Vec::new();
    let mut records = Vec::new();
    for obstacles in [false, true] {
        let res = evaluate_condition(cfg, &world, cfg.planner, actor.as_ref(), obstacles)?;
        if let (Some(o), Some(s)) = (res.outcomes.first(), res.scenarios.first()) {
            let name = format!("episode_{}_0.csv", res.summary.condition);
            write(&cfg.out.join(&name), &o.to_csv(cfg.episode.params.dt))?;
            write(&cfg.out.join(format!("map_{}_0.txt", res.summary.condition)), &s.map.to_text())?;
            write(&cfg.out.join(format!("plan_{}_0.csv", res.summary.condition)), &s.reference.to_csv())?;
        }
        summaries.push(res.summary);
        records.extend(res.records);
    }
    let table = summary_table(cfg.planner, cfg.environment, &summaries);
    write(&cfg.out.join("eval_summary.csv"), &table)?;
    write(&cfg.out.join("eval_episodes.csv"), &records_csv(&records))?;
    write_manifest(cfg, "eval", &[])?;
    Ok(table)
}

/// Computes the global plan for the configured environment (the raceline,
/// or the obstacle-aware plan of map `eval_seed` for the benchmark) and
/// writes it with its map and optimiser diagnostics.
pub fn cmd_plan(cfg: &RunConfig) -> Result<String> {
    let obstacles = cfg.planner == PlannerKind::Benchmark;
    let (track, map) = match cfg.environment {
        EnvKind::Track => {
            let world = World::new(cfg)?;
            let track = world.track.expect("track world");
            let map = if obstacles {
                place_track_obstacles(&track, &TrackObstacleSpec { seed: cfg.eval_seed, ..cfg.track_obstacles.clone() })?
            } else {
                track.boundary_map(vec![])?
            };
            (track, map)
        }
        EnvKind::Forest => {
            let spec = World::forest_spec(cfg, cfg.eval_seed, obstacles);
            (spec.track_model()?, gen_forest(&spec)?.0)
        }
    };
    let planning = track.with_clearance(cfg.bench.wall_clearance)?;
    let sol = optimize_offsets(
        &planning,
        Some(&map),
        &OffsetConfig {
            obstacle_clearance: cfg.bench.obstacle_clearance,
            ..Default::default()
        },
    )?;
    let path = to_plan_path(&planning, &sol.offsets, cfg.bench.samples_per_segment)?;
    let mut offsets = String::from("k,n\n");
    for (k, n) in sol.offsets.iter().enumerate() {
        let _ = writeln!(offsets, "{k},{n}");
    }
    write(&cfg.out.join("plan.csv"), &path.to_csv())?;
    write(&cfg.out.join("offsets.csv"), &offsets)?;
    write(&cfg.out.join("map.txt"), &map.to_text())?;
    let report = format!(
        "points = {}\nlength_m = {:.3}\ncost = {:.6e}\nkkt_residual = {:.3e}\niterations = {}\n",
        path.points().len(),
        path.length(),
        sol.cost,
        sol.kkt_residual,
        sol.iterations
    );
    write(&cfg.out.join("plan_report.txt"), &report)?;
    write_manifest(cfg, "plan", &[])?;
    Ok(report)
}

/// SVGs for each episode CSV: trajectory over the map (with the reference
/// path when given) and network output against time.
pub fn cmd_plot(cfg: &RunConfig, episodes: &[PathBuf], map: Option<&Path>, plan: Option<&Path>) -> Result<Vec<PathBuf>> {
    if episodes.is_empty() {
        return Err(Error::validation("no episode files given"));
    }
    let map = match map {
        Some(p) => ObstacleMap::load(p)?,
        None => ObstacleMap::default(),
    };
    let reference = match plan {
        Some(p) => PlanPath::load_csv(p, false)?.points().to_vec(),
        None => Vec::new(),
    };
    let mut written = Vec::new();
    for ep in episodes {
        let log = EpisodeLog::load(ep)?;
        let stem = ep.file_stem().map_or("episode".into(), |s| s.to_string_lossy().into_owned());
        let traj = cfg.out.join(format!("{stem}_trajectory.svg"));
        write(&traj, &trajectory_svg(&map, &reference, &log.positions))?;
        let actions = cfg.out.join(format!("{stem}_actions.svg"));
        write(&actions, &action_svg(&log.t, &log.actions))?;
        written.push(traj);
        written.push(actions);
    }
    write_manifest(cfg, "plot", &[])?;
    Ok(written)
}
