use std::path::{Path, PathBuf};

use refmod_core::config::{EnvKind, PlannerKind, RunConfig};
use refmod_core::env::{run_episode, EpisodeLog};
use refmod_core::harness::{cmd_plot, cmd_train, evaluate_condition, train, World};
use refmod_core::neural::{Activation, Mlp};
use refmod_core::planner::{ConstantAction, HybridPlanner, PurePursuitPlanner};
use refmod_core::plot::{plot_extent, trajectory_svg};
use refmod_core::td3::{load_actor, Td3Agent};

fn small(text: &str) -> RunConfig {
    let base = "td3.hidden = 16,16\ntd3.batch_size = 16\ntd3.warmup_steps = 40\nepisodes = 6\n";
    RunConfig::parse(&format!("{base}{text}"), Path::new("test.conf")).unwrap()
}

#[test]
fn zero_training_steps_checkpoint_is_the_initialisation() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small("train_steps = 0\n");
    cfg.out = dir.path().to_path_buf();
    cmd_train(&cfg).unwrap();
    let init = Td3Agent::new(14, cfg.td3.clone(), cfg.seed).unwrap();
    let saved = load_actor(&dir.path().join("checkpoint")).unwrap();
    assert_eq!(saved.to_bytes(), init.actor.to_bytes());
    let curve = std::fs::read_to_string(dir.path().join("training_curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 1);
}

#[test]
fn training_is_bit_reproducible() {
    let cfg = small("train_steps = 250\nseed = 4\n");
    let world = World::new(&cfg).unwrap();
    let run = || train(&cfg, &world, &mut |_, _| Ok(())).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.curve, b.curve);
    assert_eq!(a.delta_nn, b.delta_nn);
    assert_eq!(a.agent.networks().map(|(_, n)| n.to_bytes()), b.agent.networks().map(|(_, n)| n.to_bytes()));
    assert_eq!(a.delta_nn.len(), 250);
    assert!(a.curve.windows(2).all(|w| w[0].step < w[1].step));
}

#[test]
fn periodic_checkpoints_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small("train_steps = 60\ncheckpoint_every = 30\n");
    cfg.out = dir.path().to_path_buf();
    cmd_train(&cfg).unwrap();
    for name in ["checkpoint_0000030", "checkpoint_0000060", "checkpoint"] {
        assert!(dir.path().join(name).join("actor.bin").exists(), "{name}");
    }
    assert_eq!(
        load_actor(&dir.path().join("checkpoint_0000060")).unwrap(),
        load_actor(&dir.path().join("checkpoint")).unwrap()
    );
}

#[test]
fn eval_totals_add_up() {
    for env in ["forest", "track"] {
        let cfg = small(&format!("environment = {env}\nplanner = pure-pursuit\n"));
        let world = World::new(&cfg).unwrap();
        for obstacles in [false, true] {
            let res = evaluate_condition(&cfg, &world, PlannerKind::PurePursuit, None, obstacles).unwrap();
            let s = &res.summary;
            assert_eq!(s.successes + s.crashes + s.timeouts, cfg.episodes);
            assert_eq!(res.records.len(), cfg.episodes);
            if let Some(t) = s.mean_time {
                assert!(t > 0.0);
            } else {
                assert_eq!(s.successes, 0);
            }
        }
    }
}

#[test]
fn zero_actor_reproduces_pursuit_commands() {
    let cfg = small("environment = track\n");
    let world = World::new(&cfg).unwrap();
    let scenario = world.scenario(&cfg, 7, true, PlannerKind::Hybrid).unwrap();
    let params = &cfg.episode.params;
    let mut pursuit = PurePursuitPlanner {
        path: &scenario.reference,
        pp: &cfg.pp,
        params,
    };
    let plain = run_episode(&mut pursuit, &scenario, &cfg.episode).unwrap();
    let zero = Mlp::zeros(&[14, 16, 16, 1], Activation::Relu, Activation::Tanh).unwrap();
    let mut policy = refmod_core::planner::ActorPolicy(zero);
    let mut hybrid = HybridPlanner {
        path: &scenario.reference,
        pp: &cfg.pp,
        params,
        policy: &mut policy,
    };
    let mixed = run_episode(&mut hybrid, &scenario, &cfg.episode).unwrap();
    assert_eq!(plain.trajectory, mixed.trajectory);
    assert_eq!(plain.decisions.len(), mixed.decisions.len());
    for (a, b) in plain.decisions.iter().zip(&mixed.decisions) {
        assert_eq!(a.command.v_ref.to_bits(), b.command.v_ref.to_bits());
        assert_eq!(a.command.delta_ref.to_bits(), b.command.delta_ref.to_bits());
    }
    let mut constant = ConstantAction(0.0);
    let mut hybrid = HybridPlanner {
        path: &scenario.reference,
        pp: &cfg.pp,
        params,
        policy: &mut constant,
    };
    assert_eq!(run_episode(&mut hybrid, &scenario, &cfg.episode).unwrap().elapsed, plain.elapsed);
}

#[test]
fn trajectory_plot_fits_viewbox_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small("planner = pure-pursuit\n");
    cfg.out = dir.path().to_path_buf();
    let world = World::new(&cfg).unwrap();
    let scenario = world.scenario(&cfg, 2, true, PlannerKind::PurePursuit).unwrap();
    let mut pursuit = PurePursuitPlanner {
        path: &scenario.reference,
        pp: &cfg.pp,
        params: &cfg.episode.params,
    };
    let out = run_episode(&mut pursuit, &scenario, &cfg.episode).unwrap();
    let ep = dir.path().join("ep.csv");
    std::fs::write(&ep, out.to_csv(cfg.episode.params.dt)).unwrap();
    let map = dir.path().join("map.txt");
    scenario.map.save(&map).unwrap();
    let plan = dir.path().join("plan.csv");
    scenario.reference.save_csv(&plan).unwrap();

    let first = cmd_plot(&cfg, &[ep.clone()], Some(&map), Some(&plan)).unwrap();
    let bytes: Vec<Vec<u8>> = first.iter().map(|p| std::fs::read(p).unwrap()).collect();
    let again = cmd_plot(&cfg, &[ep.clone()], Some(&map), Some(&plan)).unwrap();
    assert_eq!(bytes, again.iter().map(|p| std::fs::read(p).unwrap()).collect::<Vec<_>>());

    let svg = String::from_utf8(bytes[0].clone()).unwrap();
    let vb: Vec<f64> = svg
        .split("viewBox=\"")
        .nth(1)
        .unwrap()
        .split('"')
        .next()
        .unwrap()
        .split(' ')
        .map(|v| v.parse().unwrap())
        .collect();
    let log = EpisodeLog::load(&ep).unwrap();
    for p in &log.positions {
        // SVG y grows downward; the plot mirrors world y.
        assert!(p.x >= vb[0] && p.x <= vb[0] + vb[2]);
        assert!(-p.y >= vb[1] && -p.y <= vb[1] + vb[3]);
    }
    let (lo, hi) = plot_extent(&scenario.map, scenario.reference.points(), &log.positions);
    assert!((vb[2] - (hi.x - lo.x)).abs() < 1e-3 && (vb[3] - (hi.y - lo.y)).abs() < 1e-3);
}

#[test]
fn empty_trajectory_plot_is_valid() {
    let svg = trajectory_svg(&Default::default(), &[], &[]);
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
}

#[test]
fn plot_of_malformed_csv_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small("");
    cfg.out = dir.path().to_path_buf();
    let ep: PathBuf = dir.path().join("bad.csv");
    std::fs::write(&ep, "step,t,x,y,theta,v,delta,v_ref,delta_ref,action,reward\n0,0,0,0\n").unwrap();
    let err = cmd_plot(&cfg, &[ep], None, None).unwrap_err();
    assert!(err.to_string().contains("bad.csv:2"), "{err}");
}

#[test]
fn config_kinds_round_trip() {
    let cfg = small("environment = track\nplanner = benchmark\n");
    assert_eq!(cfg.environment, EnvKind::Track);
    assert_eq!(cfg.planner.as_str(), "benchmark");
}
