//! Evaluation worlds and episode execution.
//!
//! The forest is a straight corridor with randomly placed square obstacles
//! and a straight reference line; the race track is a closed corridor built
//! from the bundled centre line and widths with obstacles scattered along it.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{line_box_interval, Vec2};
use crate::global_plan::{optimize_offsets, to_plan_path, OffsetConfig, TrackModel};
use crate::io::read_csv_rows;
use crate::planner::{reward, Decision, LocalPlanner, RewardConfig};
use crate::pursuit::{Command, PlanPath};
use crate::sim::{cast_scan, check_collision, step, ObstacleMap, Rect, SimParams, VehicleState};

/// Centre line and widths of the bundled race track (`x,y,w_left,w_right`).
pub const BUNDLED_TRACK_CSV: &str = include_str!("../data/track.csv");

pub fn bundled_track() -> Result<TrackModel> {
    TrackModel::parse_csv(BUNDLED_TRACK_CSV, Path::new("<bundled track>"), true)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestSpec {
    pub length: f64,
    pub width: f64,
    pub count: usize,
    pub size: f64,
    pub seed: u64,
    /// Obstacles start at least this far past the start line.
    pub start_clearance: f64,
    /// Obstacles end at least this far before the goal line.
    pub goal_clearance: f64,
    /// Minimum distance between any two obstacles.
    pub min_gap: f64,
    /// Free corridor beyond the goal line, so the end wall stays out of
    /// sensor range while the goal is approached.
    pub run_out: f64,
}

impl Default for ForestSpec {
    fn default() -> Self {
        Self {
            length: 25.0,
            width: 8.0,
            count: 6,
            size: 1.0,
            seed: 0,
            start_clearance: 2.0,
            goal_clearance: 1.0,
            // Vehicle width plus 0.5 m.
            min_gap: 0.81,
            run_out: 12.0,
        }
    }
}

impl ForestSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.length, self.width, self.size, self.min_gap, self.run_out];
        if !positive.iter().all(|v| v.is_finite() && *v > 0.0) {
            return Err(Error::validation("forest dimensions must be positive"));
        }
        if !(self.start_clearance >= 0.0 && self.goal_clearance >= 0.0) {
            return Err(Error::validation("forest clearances must be non-negative"));
        }
        if self.size >= self.width || self.start_clearance + self.goal_clearance + self.size > self.length {
            return Err(Error::validation("forest obstacles do not fit in the corridor"));
        }
        Ok(())
    }

    /// Corridor polygon: from 2 m behind the start to `run_out` past the goal.
    pub fn region(&self) -> Vec<Vec2> {
        let (x0, x1, h) = (-2.0, self.length + self.run_out, self.width / 2.0);
        vec![Vec2::new(x0, -h), Vec2::new(x1, -h), Vec2::new(x1, h), Vec2::new(x0, h)]
    }

    /// Straight reference line through the corridor centre.
    pub fn reference(&self) -> Result<PlanPath> {
        let (x0, x1) = (-1.0, self.length + self.run_out - 1.0);
        let n = ((x1 - x0) / 0.25).round() as usize;
        PlanPath::new(
            (0..=n)
                .map(|i| Vec2::new(x0 + (x1 - x0) * i as f64 / n as f64, 0.0))
                .collect(),
            false,
        )
    }

    /// The corridor as an open track model, used to plan around obstacles.
    pub fn track_model(&self) -> Result<TrackModel> {
        let (x0, x1) = (-1.0, self.length + self.run_out - 1.0);
        let n = ((x1 - x0) / 0.5).round() as usize;
        let centers = (0..=n)
            .map(|i| Vec2::new(x0 + (x1 - x0) * i as f64 / n as f64, 0.0))
            .collect();
        let h = self.width / 2.0;
        TrackModel::new(centers, vec![h; n + 1], vec![h; n + 1], false)
    }
}

/// Euclidean distance between two axis-aligned rectangles.
pub fn rect_gap(a: &Rect, b: &Rect) -> f64 {
    let dx = ((a.cx - b.cx).abs() - (a.w + b.w) / 2.0).max(0.0);
    let dy = ((a.cy - b.cy).abs() - (a.h + b.h) / 2.0).max(0.0);
    dx.hypot(dy)
}

const MAX_PLACEMENT_TRIES: usize = 10_000;

/// Seeded obstacle forest and its straight reference line.
pub fn gen_forest(spec: &ForestSpec) -> Result<(ObstacleMap, PlanPath)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let half = spec.size / 2.0;
    let (x_lo, x_hi) = (spec.start_clearance + half, spec.length - spec.goal_clearance - half);
    let y_lim = spec.width / 2.0 - half;
    let mut obstacles: Vec<Rect> = Vec::with_capacity(spec.count);
    let mut tries = 0;
    while obstacles.len() < spec.count {
        tries += 1;
        if tries > MAX_PLACEMENT_TRIES {
            return Err(Error::validation(format!(
                "could not place {} obstacles with gap {} m; forest too dense",
                spec.count, spec.min_gap
            )));
        }
        let r = Rect::new(
            rng.gen_range(x_lo..=x_hi),
            rng.gen_range(-y_lim..=y_lim),
            spec.size,
            spec.size,
        );
        if obstacles.iter().all(|o| rect_gap(o, &r) >= spec.min_gap) {
            obstacles.push(r);
        }
    }
    Ok((ObstacleMap::new(vec![spec.region()], obstacles)?, spec.reference()?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackObstacleSpec {
    pub count: usize,
    pub size: f64,
    pub seed: u64,
    /// Free width that must remain on at least one side of each obstacle.
    pub min_free: f64,
    /// Minimum arclength between obstacles along the centre line.
    pub min_spacing: f64,
    /// No obstacles within this arclength after the start line.
    pub start_clearance: f64,
    /// No obstacles within this arclength before the start line.
    pub end_clearance: f64,
}

impl Default for TrackObstacleSpec {
    fn default() -> Self {
        Self {
            count: 6,
            size: 0.5,
            seed: 0,
            min_free: 0.81,
            min_spacing: 5.0,
            start_clearance: 4.0,
            end_clearance: 2.0,
        }
    }
}

/// Arclength of each centre-line point of a track.
fn centre_arclengths(track: &TrackModel) -> (Vec<f64>, f64) {
    let c = track.centers();
    let mut s = vec![0.0];
    for i in 1..c.len() {
        s.push(s[i - 1] + c[i].dist(c[i - 1]));
    }
    let total = s[c.len() - 1] + if track.is_closed() { c[c.len() - 1].dist(c[0]) } else { 0.0 };
    (s, total)
}

/// Free width on each side of `r` along the normal at track point `k`, or
/// `None` when the normal segment across the track misses it.
pub fn free_sides(track: &TrackModel, k: usize, r: &Rect) -> Option<(f64, f64)> {
    let (t0, t1) = line_box_interval(track.centers()[k], track.normals()[k], r.min(), r.max())?;
    let (neg, pos) = (track.w_neg()[k], track.w_pos()[k]);
    (t1 > -neg && t0 < pos).then(|| ((t0 + neg).max(0.0), (pos - t1).max(0.0)))
}

/// Seeded obstacles scattered along a track, each leaving at least
/// `min_free` on one side at every centre-line normal it crosses.
pub fn place_track_obstacles(track: &TrackModel, spec: &TrackObstacleSpec) -> Result<ObstacleMap> {
    if !(spec.size > 0.0 && spec.min_free > 0.0 && spec.min_spacing >= 0.0) {
        return Err(Error::validation("track obstacle dimensions must be positive"));
    }
    let (s, total) = centre_arclengths(track);
    let eligible: Vec<usize> = (0..track.len())
        .filter(|&k| s[k] >= spec.start_clearance && s[k] <= total - spec.end_clearance)
        .collect();
    if spec.count > 0 && eligible.is_empty() {
        return Err(Error::validation("track too short for the requested clearances"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut placed: Vec<(f64, Rect)> = Vec::new();
    let mut tries = 0;
    while placed.len() < spec.count {
        tries += 1;
        if tries > MAX_PLACEMENT_TRIES {
            return Err(Error::validation(format!(
                "could not place {} track obstacles; spacing or size too large",
                spec.count
            )));
        }
        let k = eligible[rng.gen_range(0..eligible.len())];
        let (lo, hi) = (-track.w_neg()[k] + spec.size / 2.0, track.w_pos()[k] - spec.size / 2.0);
        if lo >= hi {
            continue;
        }
        let t = rng.gen_range(lo..hi);
        let c = track.centers()[k] + track.normals()[k] * t;
        let r = Rect::new(c.x, c.y, spec.size, spec.size);
        let spaced = placed.iter().all(|(s0, _)| {
            let d = (s[k] - s0).abs();
            d.min(total - d) >= spec.min_spacing
        });
        if !spaced {
            continue;
        }
        let passable = (0..track.len())
            .filter_map(|j| free_sides(track, j, &r))
            .all(|(neg, pos)| neg.max(pos) >= spec.min_free);
        if passable {
            placed.push((s[k], r));
        }
    }
    track.boundary_map(placed.into_iter().map(|(_, r)| r).collect())
}

/// Path-planning knobs for the obstacle-aware benchmark vehicle.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkConfig {
    /// Walls are treated as this much closer than they are.
    pub wall_clearance: f64,
    /// Obstacles are grown by this much before planning.
    pub obstacle_clearance: f64,
    pub samples_per_segment: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            wall_clearance: 0.35,
            // Half the vehicle width plus 0.3 m.
            obstacle_clearance: 0.455,
            samples_per_segment: 2,
        }
    }
}

/// Minimum-curvature path through `track`, avoiding the obstacles of `map`
/// when given.
pub fn min_curvature_path(track: &TrackModel, map: Option<&ObstacleMap>, cfg: &BenchmarkConfig) -> Result<PlanPath> {
    let planning = track.with_clearance(cfg.wall_clearance)?;
    let sol = optimize_offsets(
        &planning,
        map,
        &OffsetConfig {
            obstacle_clearance: cfg.obstacle_clearance,
            ..Default::default()
        },
    )?;
    to_plan_path(&planning, &sol.offsets, cfg.samples_per_segment)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Goal {
    /// Reach the line `x = value`.
    CrossX(f64),
    /// Complete one lap of this closed path.
    Lap(PlanPath),
}

/// Everything an episode runs in.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub map: ObstacleMap,
    /// Path the local planner follows.
    pub reference: PlanPath,
    pub goal: Goal,
    pub start: VehicleState,
}

impl Scenario {
    pub fn forest(spec: &ForestSpec, reference: Option<PlanPath>) -> Result<Self> {
        let (map, line) = gen_forest(spec)?;
        Ok(Self {
            map,
            reference: reference.unwrap_or(line),
            goal: Goal::CrossX(spec.length),
            start: VehicleState::default(),
        })
    }

    /// Lap of `track`, starting on the reference path level with the first
    /// centre-line point and heading along it.
    pub fn lap(track: &TrackModel, map: ObstacleMap, reference: PlanPath) -> Result<Self> {
        let proj = reference.project(track.centers()[0]);
        let (a, b) = reference.segment(proj.segment);
        let dir = b - a;
        Ok(Self {
            map,
            goal: Goal::Lap(track.centerline()?),
            start: VehicleState::at(proj.point.x, proj.point.y, dir.y.atan2(dir.x)),
            reference,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeConfig {
    pub params: SimParams,
    /// Simulation steps per planner decision.
    pub plan_period: usize,
    /// Simulation steps before timing out.
    pub max_steps: usize,
    pub reward: RewardConfig,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            params: SimParams::default(),
            plan_period: 10,
            // 60 s at dt = 0.01.
            max_steps: 6000,
            reward: RewardConfig::default(),
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.reward.validate()?;
        if self.plan_period == 0 || self.max_steps == 0 {
            return Err(Error::validation("plan_period and max_steps must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Success,
    Crash,
    Timeout,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::Success => "success",
            Termination::Crash => "crash",
            Termination::Timeout => "timeout",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "success" => Some(Termination::Success),
            "crash" => Some(Termination::Crash),
            "timeout" => Some(Termination::Timeout),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionRecord {
    /// Simulation step at which the decision was taken.
    pub step: usize,
    pub command: Command,
    pub pursuit: Command,
    pub action: f64,
    pub delta_nn: f64,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeOutcome {
    pub termination: Termination,
    pub elapsed: f64,
    pub steps: usize,
    /// `steps + 1` states, starting with the initial one.
    pub trajectory: Vec<VehicleState>,
    pub decisions: Vec<DecisionRecord>,
}

impl EpisodeOutcome {
    pub fn success(&self) -> bool {
        self.termination == Termination::Success
    }

    pub fn total_reward(&self) -> f64 {
        self.decisions.iter().map(|d| d.reward).sum()
    }

    pub fn mean_abs_delta_nn(&self) -> f64 {
        if self.decisions.is_empty() {
            return 0.0;
        }
        self.decisions.iter().map(|d| d.delta_nn.abs()).sum::<f64>() / self.decisions.len() as f64
    }

    /// One row per trajectory state with the command in force when leaving
    /// it, followed by a `# summary` comment line.
    pub fn to_csv(&self, dt: f64) -> String {
        let mut out = String::from(EPISODE_HEADER);
        out.push('\n');
        let mut d = 0;
        for (i, s) in self.trajectory.iter().enumerate() {
            while d + 1 < self.decisions.len() && self.decisions[d + 1].step <= i {
                d += 1;
            }
            let (cmd, action, r) = self
                .decisions
                .get(d)
                .map_or((Command { v_ref: 0.0, delta_ref: 0.0 }, 0.0, 0.0), |rec| {
                    (rec.command, rec.action, rec.reward)
                });
            let _ = writeln!(
                out,
                "{i},{},{},{},{},{},{},{},{},{},{}",
                i as f64 * dt,
                s.x,
                s.y,
                s.theta,
                s.v,
                s.delta,
                cmd.v_ref,
                cmd.delta_ref,
                action,
                r
            );
        }
        let _ = writeln!(
            out,
            "# summary termination={} elapsed={} steps={} decisions={} total_reward={}",
            self.termination.as_str(),
            self.elapsed,
            self.steps,
            self.decisions.len(),
            self.total_reward()
        );
        out
    }
}

pub const EPISODE_HEADER: &str = "step,t,x,y,theta,v,delta,v_ref,delta_ref,action,reward";

/// Rows of an episode CSV as read back for plotting.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub t: Vec<f64>,
    pub positions: Vec<Vec2>,
    pub actions: Vec<f64>,
}

impl EpisodeLog {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let names: Vec<&str> = EPISODE_HEADER.split(',').collect();
        let rows = read_csv_rows(text, origin, &names)?;
        Ok(Self {
            t: rows.iter().map(|r| r[1]).collect(),
            positions: rows.iter().map(|r| Vec2::new(r[2], r[3])).collect(),
            actions: rows.iter().map(|r| r[9]).collect(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }
}

/// Signed progress along a closed path, robust to the wrap at the start.
#[derive(Debug, Clone)]
struct LapTracker {
    s_last: f64,
    progress: f64,
}

impl LapTracker {
    const WINDOW: f64 = 3.0;

    fn new(path: &PlanPath, p: Vec2) -> Self {
        Self {
            s_last: path.project(p).s,
            progress: 0.0,
        }
    }

    fn update(&mut self, path: &PlanPath, p: Vec2) -> f64 {
        let s = path.project_near(p, self.s_last, Self::WINDOW).s;
        let total = path.length();
        let mut ds = s - self.s_last;
        if ds > total / 2.0 {
            ds -= total;
        } else if ds < -total / 2.0 {
            ds += total;
        }
        self.progress += ds;
        self.s_last = s;
        self.progress
    }
}

/// Result of one planner decision and the simulation steps it drove.
#[derive(Debug, Clone, PartialEq)]
pub struct Advance {
    pub decision: Decision,
    pub reward: f64,
    pub crashed: bool,
    pub terminal: Option<Termination>,
}

/// Incremental episode, advanced one planner decision at a time so training
/// can interleave learning updates.
pub struct Episode<'a> {
    scenario: &'a Scenario,
    cfg: &'a EpisodeConfig,
    state: VehicleState,
    steps: usize,
    lap: Option<LapTracker>,
    trajectory: Vec<VehicleState>,
    decisions: Vec<DecisionRecord>,
    termination: Option<Termination>,
}

impl<'a> Episode<'a> {
    pub fn new(scenario: &'a Scenario, cfg: &'a EpisodeConfig) -> Self {
        let lap = match &scenario.goal {
            Goal::Lap(path) => Some(LapTracker::new(path, scenario.start.position())),
            Goal::CrossX(_) => None,
        };
        Self {
            scenario,
            cfg,
            state: scenario.start,
            steps: 0,
            lap,
            trajectory: vec![scenario.start],
            decisions: Vec::new(),
            termination: None,
        }
    }

    pub fn state(&self) -> &VehicleState {
        &self.state
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn termination(&self) -> Option<Termination> {
        self.termination
    }

    fn goal_reached(&mut self) -> bool {
        match &self.scenario.goal {
            Goal::CrossX(x) => self.state.x >= *x,
            Goal::Lap(path) => {
                let tracker = self.lap.as_mut().expect("lap goal has a tracker");
                tracker.update(path, self.state.position()) >= path.length()
            }
        }
    }

    pub fn advance(&mut self, planner: &mut dyn LocalPlanner) -> Result<Advance> {
        if self.termination.is_some() {
            return Err(Error::validation("episode already finished"));
        }
        let params = &self.cfg.params;
        let scan = cast_scan(&self.state, &self.scenario.map, params);
        let decision = planner.decide(&self.state, &scan)?;
        let decided_at = self.steps;
        let mut crashed = false;
        let mut terminal = None;
        for _ in 0..self.cfg.plan_period {
            self.state = step(&self.state, decision.command.v_ref, decision.command.delta_ref, params)?;
            self.steps += 1;
            self.trajectory.push(self.state);
            if check_collision(&self.state, &self.scenario.map, params) {
                crashed = true;
                terminal = Some(Termination::Crash);
            } else if self.goal_reached() {
                terminal = Some(Termination::Success);
            } else if self.steps >= self.cfg.max_steps {
                terminal = Some(Termination::Timeout);
            }
            if terminal.is_some() {
                break;
            }
        }
        let r = reward(crashed, decision.delta_nn, &self.cfg.reward, params.delta_max);
        self.decisions.push(DecisionRecord {
            step: decided_at,
            command: decision.command,
            pursuit: decision.pursuit,
            action: decision.action,
            delta_nn: decision.delta_nn,
            reward: r,
        });
        self.termination = terminal;
        Ok(Advance {
            decision,
            reward: r,
            crashed,
            terminal,
        })
    }

    pub fn finish(self) -> Result<EpisodeOutcome> {
        let termination = self
            .termination
            .ok_or_else(|| Error::validation("episode has not finished"))?;
        Ok(EpisodeOutcome {
            termination,
            elapsed: self.steps as f64 * self.cfg.params.dt,
            steps: self.steps,
            trajectory: self.trajectory,
            decisions: self.decisions,
        })
    }
}

/// Runs `planner` in `scenario` until crash, goal or timeout.
pub fn run_episode(planner: &mut dyn LocalPlanner, scenario: &Scenario, cfg: &EpisodeConfig) -> Result<EpisodeOutcome> {
    cfg.validate()?;
    let mut episode = Episode::new(scenario, cfg);
    while episode.termination().is_none() {
        episode.advance(planner)?;
    }
    episode.finish()
}

/// Post-hoc collision re-check of a whole trajectory.
pub fn trajectory_collides(trajectory: &[VehicleState], map: &ObstacleMap, params: &SimParams) -> bool {
    trajectory.iter().any(|s| check_collision(s, map, params))
}
