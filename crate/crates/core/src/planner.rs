//! Reference-modification local planner.
//!
//! Pure pursuit produces steering and speed references; a policy network sees
//! the vehicle's speed and steering, the pursuit references and the range
//! scan, and adds a bounded steering correction. The combined reference then
//! passes a friction-based safety filter before reaching the controller.

use crate::error::{Error, Result};
use crate::neural::Mlp;
use crate::pursuit::{self, friction_velocity, Command, PPConfig, PlanPath};
use crate::sim::{Scan, SimParams, VehicleState};
use crate::td3::Td3Agent;

/// Number of non-scan entries at the front of the planner state.
pub const VEHICLE_FEATURES: usize = 4;

/// `[V_t, delta_t, V_ref, delta_ref, r_1 .. r_m]`, each scaled to `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannerState {
    pub values: Vec<f64>,
    /// Number of components that had to be clipped into range.
    pub clipped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardConfig {
    pub r_crash: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            r_crash: -1.0,
            beta1: 1.0,
            beta2: 0.5,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta1 > 0.0 && self.beta2 > 0.0) {
            return Err(Error::validation("beta1 and beta2 must be positive"));
        }
        // Worst non-crash reward is beta1 - beta2 (full-scale modification).
        if !(self.r_crash < 0.0 && self.r_crash < self.beta1 - self.beta2) {
            return Err(Error::validation("r_crash must be negative and below every non-crash reward"));
        }
        Ok(())
    }
}

fn unit_to_signed(v: f64, max: f64, clipped: &mut usize) -> f64 {
    let s = 2.0 * v / max - 1.0;
    clip_unit(s, clipped)
}

fn clip_unit(s: f64, clipped: &mut usize) -> f64 {
    if !(-1.0..=1.0).contains(&s) {
        *clipped += 1;
    }
    s.clamp(-1.0, 1.0)
}

pub fn assemble_state(vehicle: &VehicleState, pf: Command, scan: &Scan, params: &SimParams) -> Result<PlannerState> {
    if scan.ranges.len() != params.n_beams {
        return Err(Error::validation(format!(
            "scan has {} ranges, expected {}",
            scan.ranges.len(),
            params.n_beams
        )));
    }
    let mut clipped = 0;
    let mut values = Vec::with_capacity(VEHICLE_FEATURES + scan.ranges.len());
    values.push(unit_to_signed(vehicle.v, params.v_max, &mut clipped));
    values.push(clip_unit(vehicle.delta / params.delta_max, &mut clipped));
    values.push(unit_to_signed(pf.v_ref, params.v_max, &mut clipped));
    values.push(clip_unit(pf.delta_ref / params.delta_max, &mut clipped));
    for &r in &scan.ranges {
        values.push(unit_to_signed(r, params.max_range, &mut clipped));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::validation("planner state inputs must be finite"));
    }
    Ok(PlannerState { values, clipped })
}

/// Inverse of [`assemble_state`] on its box domain:
/// `(v, delta, v_ref, delta_ref, ranges)`.
pub fn physical_from_state(state: &[f64], params: &SimParams) -> (f64, f64, f64, f64, Vec<f64>) {
    let unit = |s: f64, max: f64| (s + 1.0) / 2.0 * max;
    (
        unit(state[0], params.v_max),
        state[1] * params.delta_max,
        unit(state[2], params.v_max),
        state[3] * params.delta_max,
        state[VEHICLE_FEATURES..]
            .iter()
            .map(|&r| unit(r, params.max_range))
            .collect(),
    )
}

/// `delta_pf + action * delta_max`; the sum may exceed the steering limit
/// until the safety filter runs.
pub fn modify_steering(delta_pf: f64, action: f64, delta_max: f64) -> f64 {
    delta_pf + action * delta_max
}

/// Friction safety filter. Steering is clipped to what the friction budget
/// allows at the current speed, `atan(b g l / v^2)`, and the speed reference
/// is recomputed from the combined (pre-clip) steering demand.
pub fn safety_filter(delta_combined: f64, v_now: f64, params: &SimParams) -> Command {
    let demand = delta_combined.abs().min(params.delta_max);
    let bound = if v_now > 0.0 {
        params
            .delta_max
            .min((params.friction_accel() * params.wheelbase / (v_now * v_now)).atan())
    } else {
        params.delta_max
    };
    Command {
        v_ref: friction_velocity(demand, params),
        delta_ref: delta_combined.clamp(-bound, bound),
    }
}

/// Safety filter that also keeps the pursuit planner's horizon speed limit.
pub fn filtered_command(pf: Command, delta_combined: f64, v_now: f64, params: &SimParams) -> Command {
    let f = safety_filter(delta_combined, v_now, params);
    Command {
        v_ref: f.v_ref.min(pf.v_ref),
        delta_ref: f.delta_ref,
    }
}

/// Crash penalty, otherwise `beta1 - beta2 * |delta_nn| / delta_max`.
pub fn reward(crashed: bool, delta_nn: f64, cfg: &RewardConfig, delta_max: f64) -> f64 {
    if crashed {
        cfg.r_crash
    } else {
        cfg.beta1 - cfg.beta2 * delta_nn.abs() / delta_max
    }
}

/// Anything that maps a planner state to an action in `[-1, 1]`.
pub trait ActionSource {
    fn action(&mut self, state: &[f64]) -> Result<f64>;
}

/// Deterministic policy network.
#[derive(Debug, Clone)]
pub struct ActorPolicy(pub Mlp);

impl ActionSource for ActorPolicy {
    fn action(&mut self, state: &[f64]) -> Result<f64> {
        Ok(self.0.forward(state)?[0])
    }
}

/// A learning agent, optionally with exploration noise.
pub struct AgentPolicy<'a> {
    pub agent: &'a mut Td3Agent,
    pub explore: bool,
}

impl ActionSource for AgentPolicy<'_> {
    fn action(&mut self, state: &[f64]) -> Result<f64> {
        self.agent.select_action(state, self.explore)
    }
}

/// Always returns a fixed action (0 reproduces plain pure pursuit).
#[derive(Debug, Clone, Copy)]
pub struct ConstantAction(pub f64);

impl ActionSource for ConstantAction {
    fn action(&mut self, _state: &[f64]) -> Result<f64> {
        Ok(self.0)
    }
}

/// Uniformly random actions drawn from the agent's generator.
pub struct RandomPolicy<'a>(pub &'a mut Td3Agent);

impl ActionSource for RandomPolicy<'_> {
    fn action(&mut self, _state: &[f64]) -> Result<f64> {
        Ok(self.0.random_action())
    }
}

/// One local-planner decision.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub command: Command,
    /// Raw pure-pursuit references before modification and filtering.
    pub pursuit: Command,
    pub action: f64,
    /// Steering modification in radians (`action * delta_max`).
    pub delta_nn: f64,
    /// Scaled planner state the action was chosen from, when a policy ran.
    pub state: Option<Vec<f64>>,
}

pub trait LocalPlanner {
    fn decide(&mut self, vehicle: &VehicleState, scan: &Scan) -> Result<Decision>;
}

/// Plain pure pursuit followed by the same safety filter the hybrid uses.
#[derive(Debug, Clone)]
pub struct PurePursuitPlanner<'a> {
    pub path: &'a PlanPath,
    pub pp: &'a PPConfig,
    pub params: &'a SimParams,
}

impl LocalPlanner for PurePursuitPlanner<'_> {
    fn decide(&mut self, vehicle: &VehicleState, _scan: &Scan) -> Result<Decision> {
        let pf = pursuit::plan(vehicle, self.path, self.pp, self.params)?;
        Ok(Decision {
            command: filtered_command(pf, pf.delta_ref, vehicle.v, self.params),
            pursuit: pf,
            action: 0.0,
            delta_nn: 0.0,
            state: None,
        })
    }
}

/// Pure pursuit -> state assembly -> policy action -> steering modification
/// -> safety filter.
pub fn plan_hybrid(
    vehicle: &VehicleState,
    scan: &Scan,
    path: &PlanPath,
    pp: &PPConfig,
    params: &SimParams,
    policy: &mut dyn ActionSource,
) -> Result<Decision> {
    let pf = pursuit::plan(vehicle, path, pp, params)?;
    let state = assemble_state(vehicle, pf, scan, params)?;
    let action = policy.action(&state.values)?;
    if !action.is_finite() {
        return Err(Error::Diverged(format!("policy produced {action}")));
    }
    let action = action.clamp(-1.0, 1.0);
    let delta_nn = action * params.delta_max;
    let combined = modify_steering(pf.delta_ref, action, params.delta_max);
    Ok(Decision {
        command: filtered_command(pf, combined, vehicle.v, params),
        pursuit: pf,
        action,
        delta_nn,
        state: Some(state.values),
    })
}

pub struct HybridPlanner<'a> {
    pub path: &'a PlanPath,
    pub pp: &'a PPConfig,
    pub params: &'a SimParams,
    pub policy: &'a mut dyn ActionSource,
}

impl LocalPlanner for HybridPlanner<'_> {
    fn decide(&mut self, vehicle: &VehicleState, scan: &Scan) -> Result<Decision> {
        plan_hybrid(vehicle, scan, self.path, self.pp, self.params, self.policy)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec2;
    use crate::sim::cast_scan;
    use proptest::prelude::*;

    fn scan_of(params: &SimParams, r: f64) -> Scan {
        Scan {
            ranges: vec![r; params.n_beams],
            angles: params.beam_angles(),
        }
    }

    #[test]
    fn endpoint_mapping() {
        let p = SimParams::default();
        let s = assemble_state(
            &VehicleState::default(),
            Command { v_ref: 0.0, delta_ref: 0.0 },
            &scan_of(&p, p.max_range),
            &p,
        )
        .unwrap();
        assert_eq!(s.values.len(), 14);
        assert_eq!(&s.values[..4], &[-1.0, 0.0, -1.0, 0.0]);
        assert!(s.values[4..].iter().all(|&r| r == 1.0));
        assert_eq!(s.clipped, 0);
    }

    #[test]
    fn steering_and_half_speed_components() {
        let p = SimParams::default();
        let v = VehicleState {
            v: p.v_max / 2.0,
            delta: p.delta_max,
            ..Default::default()
        };
        let s = assemble_state(&v, Command { v_ref: 7.0, delta_ref: -0.2 }, &scan_of(&p, 5.0), &p).unwrap();
        assert_eq!(s.values[0], 2.0 * (0.5) - 1.0);
        assert_eq!(s.values[1], 1.0);
        assert_eq!(s.values[2], 1.0);
        assert_eq!(s.values[3], -0.5);
        assert_eq!(s.values[4], 0.0);
    }

    #[test]
    fn out_of_range_inputs_are_clipped_and_counted() {
        let p = SimParams::default();
        let v = VehicleState { v: 9.0, ..Default::default() };
        let s = assemble_state(&v, Command { v_ref: 0.0, delta_ref: 0.0 }, &scan_of(&p, 12.0), &p).unwrap();
        assert_eq!(s.values[0], 1.0);
        assert_eq!(s.clipped, 1 + p.n_beams);
    }

    #[test]
    fn wrong_scan_length_rejected() {
        let p = SimParams::default();
        let scan = Scan { ranges: vec![1.0; 3], angles: vec![0.0; 3] };
        assert!(assemble_state(&VehicleState::default(), Command { v_ref: 0.0, delta_ref: 0.0 }, &scan, &p).is_err());
    }

    #[test]
    fn steering_modification_examples() {
        assert_eq!(modify_steering(0.17, 0.0, 0.4), 0.17);
        assert!((modify_steering(0.1, 0.5, 0.4) - 0.3).abs() < 1e-15);
        assert_eq!(modify_steering(0.4, -1.0, 0.4), 0.0);
    }

    #[test]
    fn safety_filter_examples() {
        let p = SimParams::default();
        assert_eq!(safety_filter(0.3, 0.0, &p).delta_ref, 0.3);
        assert_eq!(safety_filter(0.0, 4.0, &p).v_ref, p.v_max);
        let c = safety_filter(0.35, 3.0, &p);
        let bound = (0.8f64 * 9.81 * 0.33 / 9.0).atan();
        assert!((bound - 0.280).abs() < 5e-4);
        assert_eq!(c.delta_ref, bound);
        // Lateral acceleration at the bound equals b g.
        assert!((9.0 * bound.tan() / p.wheelbase - p.friction_accel()).abs() < 1e-12);
        assert_eq!(safety_filter(-0.35, 3.0, &p).delta_ref, -bound);
    }

    #[test]
    fn reward_branches() {
        let cfg = RewardConfig::default();
        assert_eq!(reward(true, 0.3, &cfg, 0.4), cfg.r_crash);
        assert_eq!(reward(false, 0.0, &cfg, 0.4), cfg.beta1);
        let c = RewardConfig { r_crash: -1.0, beta1: 1.0, beta2: 0.5 };
        assert!((reward(false, 0.4 * 0.4, &c, 0.4) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn invalid_reward_config() {
        assert!(RewardConfig { r_crash: 0.5, ..Default::default() }.validate().is_err());
        assert!(RewardConfig { beta2: 0.0, ..Default::default() }.validate().is_err());
        assert!(RewardConfig::default().validate().is_ok());
    }

    #[test]
    fn zero_action_matches_pure_pursuit() {
        let p = SimParams::default();
        let pp = PPConfig::default();
        let path = PlanPath::new((0..100).map(|i| Vec2::new(i as f64 * 0.2, (i as f64 * 0.1).sin())).collect(), false).unwrap();
        let map = crate::sim::ObstacleMap::default();
        let mut zero = ConstantAction(0.0);
        for k in 0..20 {
            let v = VehicleState {
                x: k as f64 * 0.7,
                y: 0.3 - k as f64 * 0.03,
                theta: 0.1,
                v: k as f64 * 0.3,
                delta: 0.05,
            };
            let scan = cast_scan(&v, &map, &p);
            let h = plan_hybrid(&v, &scan, &path, &pp, &p, &mut zero).unwrap();
            let pure = PurePursuitPlanner { path: &path, pp: &pp, params: &p }.decide(&v, &scan).unwrap();
            assert_eq!(h.command, pure.command);
        }
    }

    proptest! {
        #[test]
        fn friction_invariant(delta in -0.8f64..0.8, v_now in 0.0f64..7.0) {
            let p = SimParams::default();
            let c = safety_filter(delta, v_now, &p);
            prop_assert!(c.v_ref * c.v_ref * c.delta_ref.abs().tan() / p.wheelbase <= p.friction_accel() + 1e-9);
            prop_assert!(c.delta_ref.abs() <= p.delta_max);
        }

        #[test]
        fn reward_ordering(a in 0.0f64..0.4, b in 0.0f64..0.4) {
            let cfg = RewardConfig::default();
            let ra = reward(false, a, &cfg, 0.4);
            prop_assert!(reward(true, a, &cfg, 0.4) < ra);
            if a < b {
                prop_assert!(ra > reward(false, b, &cfg, 0.4));
            }
        }

        #[test]
        fn state_scaling_inverts(v in 0.0f64..7.0, d in -0.4f64..0.4, vr in 0.0f64..7.0, dr in -0.4f64..0.4,
                                 r in proptest::collection::vec(0.0f64..10.0, 10)) {
            let p = SimParams::default();
            let veh = VehicleState { v, delta: d, ..Default::default() };
            let scan = Scan { ranges: r.clone(), angles: p.beam_angles() };
            let s = assemble_state(&veh, Command { v_ref: vr, delta_ref: dr }, &scan, &p).unwrap();
            let (v2, d2, vr2, dr2, r2) = physical_from_state(&s.values, &p);
            prop_assert!((v - v2).abs() < 1e-12 && (d - d2).abs() < 1e-12);
            prop_assert!((vr - vr2).abs() < 1e-12 && (dr - dr2).abs() < 1e-12);
            for (a, b) in r.iter().zip(&r2) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
