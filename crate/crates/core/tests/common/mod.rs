#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use refmod_core::env::{run_episode, EpisodeConfig, Goal, Scenario};
use refmod_core::geometry::Vec2;
use refmod_core::global_plan::TrackModel;
use refmod_core::neural::{Activation, Mlp};
use refmod_core::planner::PurePursuitPlanner;
use refmod_core::pursuit::{PPConfig, PlanPath};
use refmod_core::sim::{step, ObstacleMap, SimParams, VehicleState};

fn param_mut(net: &mut Mlp, layer: usize, bias: bool, i: usize) -> &mut f64 {
    let layer = &mut net.layers_mut()[layer];
    if bias {
        &mut layer.bias[i]
    } else {
        &mut layer.weights[i]
    }
}

/// Largest finite-difference mismatch over `draws` random (network, input)
/// pairs of the 14-300-300-1 actor shape. Each draw checks 16 sampled
/// parameters per layer; the mismatch is scaled by the largest analytic
/// gradient magnitude of that layer so near-zero entries are not amplified.
pub fn max_gradient_rel_error(draws: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps = 1e-6;
    let mut worst = 0.0f64;
    for _ in 0..draws {
        let mut net = Mlp::new(&[14, 300, 300, 1], Activation::Relu, Activation::Tanh, &mut rng).unwrap();
        let x: Vec<f64> = (0..14).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (grads, _) = net.backward(&x, &[1.0]).unwrap();
        for l in 0..net.layers().len() {
            let g = &grads.layers[l];
            let scale = g
                .weights
                .iter()
                .chain(&g.bias)
                .fold(0.0f64, |m, v| m.max(v.abs()))
                .max(1e-12);
            for _ in 0..16 {
                let use_bias = rng.gen_bool(0.2);
                let (len, analytic) = if use_bias {
                    (g.bias.len(), &g.bias)
                } else {
                    (g.weights.len(), &g.weights)
                };
                let i = rng.gen_range(0..len);
                let orig = *param_mut(&mut net, l, use_bias, i);
                *param_mut(&mut net, l, use_bias, i) = orig + eps;
                let up = net.forward(&x).unwrap()[0];
                *param_mut(&mut net, l, use_bias, i) = orig - eps;
                let down = net.forward(&x).unwrap()[0];
                *param_mut(&mut net, l, use_bias, i) = orig;
                let numeric = (up - down) / (2.0 * eps);
                worst = worst.max((analytic[i] - numeric).abs() / scale);
            }
        }
    }
    worst
}

/// Algebraic least-squares circle fit; returns the radius.
pub fn fit_circle(pts: &[Vec2]) -> f64 {
    // Solve x^2 + y^2 + D x + E y + F = 0 in the least-squares sense.
    let mut ata = nalgebra::Matrix3::<f64>::zeros();
    let mut atb = nalgebra::Vector3::<f64>::zeros();
    for p in pts {
        let row = nalgebra::Vector3::new(p.x, p.y, 1.0);
        ata += row * row.transpose();
        atb += row * -(p.x * p.x + p.y * p.y);
    }
    let s = ata.lu().solve(&atb).unwrap();
    let (d, e, f) = (s[0], s[1], s[2]);
    (d * d / 4.0 + e * e / 4.0 - f).sqrt()
}

/// Relative radius error of a steady constant-steering turn against
/// `l / tan(delta)`, simulated for one full revolution at time step `dt`.
pub fn turn_radius_error(dt: f64) -> f64 {
    let params = SimParams { dt, ..SimParams::default() };
    let (v, delta) = (2.0, 0.2);
    let mut s = VehicleState { v, delta, ..VehicleState::default() };
    let expected = params.wheelbase / delta.tan();
    let period = 2.0 * std::f64::consts::PI * expected / v;
    let steps = (period / dt).ceil() as usize;
    let mut pts = vec![s.position()];
    for _ in 0..steps {
        s = step(&s, v, delta, &params).unwrap();
        pts.push(s.position());
    }
    (fit_circle(&pts) - expected).abs() / expected
}

/// Drives pure pursuit along the x axis from a 0.5 m lateral offset and
/// returns the trajectory.
pub fn offset_pursuit_run() -> Vec<VehicleState> {
    let n = 240;
    let path = PlanPath::new((0..=n).map(|i| Vec2::new(i as f64 * 0.25, 0.0)).collect(), false).unwrap();
    let region = vec![
        Vec2::new(-5.0, -5.0),
        Vec2::new(65.0, -5.0),
        Vec2::new(65.0, 5.0),
        Vec2::new(-5.0, 5.0),
    ];
    let scenario = Scenario {
        map: ObstacleMap::new(vec![region], vec![]).unwrap(),
        reference: path.clone(),
        goal: Goal::CrossX(50.0),
        start: VehicleState::at(0.0, 0.5, 0.0),
    };
    let cfg = EpisodeConfig::default();
    let pp = PPConfig::default();
    let mut planner = PurePursuitPlanner {
        path: &path,
        pp: &pp,
        params: &cfg.params,
    };
    let out = run_episode(&mut planner, &scenario, &cfg).unwrap();
    assert!(out.success());
    out.trajectory
}

/// Largest |cross-track error| once the vehicle has travelled 10 m.
pub fn cross_track_after(trajectory: &[VehicleState], travel: f64) -> f64 {
    let mut dist = 0.0;
    let mut worst = 0.0f64;
    for w in trajectory.windows(2) {
        dist += w[1].position().dist(w[0].position());
        if dist >= travel {
            worst = worst.max(w[1].y.abs());
        }
    }
    worst
}

pub const LEVELS: usize = 21;

/// Cost written out from positions, independent of the optimizer's quadratic form.
pub fn oracle_cost(track: &TrackModel, n: &[f64]) -> f64 {
    let k = n.len();
    let p: Vec<(f64, f64)> = (0..k)
        .map(|i| {
            let (c, nv) = (track.centers()[i], track.normals()[i]);
            (c.x + n[i] * nv.x, c.y + n[i] * nv.y)
        })
        .collect();
    let term = |a: usize, b: usize, c: usize| {
        let dx = p[a].0 - 2.0 * p[b].0 + p[c].0;
        let dy = p[a].1 - 2.0 * p[b].1 + p[c].1;
        dx * dx + dy * dy
    };
    if track.is_closed() {
        (0..k).map(|i| term((i + k - 1) % k, i, (i + 1) % k)).sum()
    } else {
        (1..k - 1).map(|i| term(i - 1, i, i + 1)).sum()
    }
}

pub fn grid(bounds: &[(f64, f64)]) -> Vec<Vec<f64>> {
    bounds
        .iter()
        .map(|&(lo, hi)| {
            if lo == hi {
                vec![lo]
            } else {
                (0..LEVELS).map(|j| lo + (hi - lo) * j as f64 / (LEVELS - 1) as f64).collect()
            }
        })
        .collect()
}

/// Exact minimum of the cost over the grid. Each term couples three
/// consecutive offsets, so a dynamic programme over pairs `(n_{k-1}, n_k)`
/// enumerates the same set as exhaustive search.
pub fn grid_minimum(track: &TrackModel, bounds: &[(f64, f64)]) -> f64 {
    let g = grid(bounds);
    let k = g.len();
    let p = |i: usize, j: usize| {
        let (c, nv) = (track.centers()[i], track.normals()[i]);
        (c.x + g[i][j] * nv.x, c.y + g[i][j] * nv.y)
    };
    let term = |a: (f64, f64), b: (f64, f64), c: (f64, f64)| {
        let dx = a.0 - 2.0 * b.0 + c.0;
        let dy = a.1 - 2.0 * b.1 + c.1;
        dx * dx + dy * dy
    };
    let chain = |first: Option<(usize, usize)>| -> f64 {
        // cost[(a, b)] = best cost of terms so far with n_{i-1} = a, n_i = b.
        let mut cost = vec![vec![f64::INFINITY; g[1].len()]; g[0].len()];
        for a in 0..g[0].len() {
            for b in 0..g[1].len() {
                if first.map_or(true, |f| f == (a, b)) {
                    cost[a][b] = 0.0;
                }
            }
        }
        for i in 2..k {
            let mut next = vec![vec![f64::INFINITY; g[i].len()]; g[i - 1].len()];
            for a in 0..g[i - 2].len() {
                for b in 0..g[i - 1].len() {
                    if cost[a][b].is_infinite() {
                        continue;
                    }
                    for c in 0..g[i].len() {
                        let v = cost[a][b] + term(p(i - 2, a), p(i - 1, b), p(i, c));
                        if v < next[b][c] {
                            next[b][c] = v;
                        }
                    }
                }
            }
            cost = next;
        }
        match first {
            None => cost.iter().flatten().copied().fold(f64::INFINITY, f64::min),
            Some((a0, b0)) => {
                // Close the loop: terms centred at k-1 and 0.
                let mut best = f64::INFINITY;
                for a in 0..g[k - 2].len() {
                    for b in 0..g[k - 1].len() {
                        let v = cost[a][b]
                            + term(p(k - 2, a), p(k - 1, b), p(0, a0))
                            + term(p(k - 1, b), p(0, a0), p(1, b0));
                        best = best.min(v);
                    }
                }
                best
            }
        }
    };
    if track.is_closed() {
        let mut best = f64::INFINITY;
        for a in 0..g[0].len() {
            for b in 0..g[1].len() {
                best = best.min(chain(Some((a, b))));
            }
        }
        best
    } else {
        chain(None)
    }
}
