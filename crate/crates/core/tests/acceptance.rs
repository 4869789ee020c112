//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::collections::{HashMap, VecDeque};
use std::f64::consts::PI;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use multinav::astar::{plan_cells, Cell, GridCost, OccupancyGrid};
use multinav::geometry::{ray_circle_hit, Segment, Vec2};
use multinav::harness::{cmd_train, evaluate, EvalSpec, GreedyPolicy, RunConfig, WorldEntry, EPISODES_FILE, UPDATES_FILE};
use multinav::net::{
    decode_checkpoint, encode_checkpoint, ActionDistribution, ActionSpace, InputBatch, NetConfig, NetError, Network,
    OutputGrads,
};
use multinav::reward::{compute_reward, RewardConfig, RewardState, TerminalCause, TransitionFacts};
use multinav::sim::{Action, LidarScan, Observation, ObservationStack, SimConfig};
use multinav::train::{
    compute_gae, train_loop, Control, StopCriteria, StopReason, TrainConfig, TrainEvent, TrainSetup, WorldSetup,
};
use multinav::world::{bundled_world, ray_intersect, rectangle, WorldMap};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- 1

/// Straight-line transcription of the reward definition, kept apart from the engine.
struct RewardOracle {
    latch: f64,
    prev_class: i8,
    flags: Vec<u8>,
}

impl RewardOracle {
    fn new(d0: f64) -> Self {
        Self {
            latch: d0,
            prev_class: 0,
            flags: Vec::new(),
        }
    }

    fn reward(&mut self, f: &TransitionFacts, c: &RewardConfig) -> f64 {
        if let Some(cause) = f.terminal {
            return match cause {
                TerminalCause::ReachedGoal => c.goal,
                TerminalCause::CollidedWorld => -c.collision_world,
                TerminalCause::CollidedRobot => -c.collision_robot,
                TerminalCause::TimedOut => 0.0,
            };
        }
        let dd = f.prev_goal_distance - f.goal_distance;
        let r_dist = if dd < 0.0 { dd * c.distance_neg } else { dd * c.distance_pos };

        let o = f.heading;
        let g = f.goal_vector;
        let cross = (o.x * g.y - o.y * g.x).abs();
        let dot = o.x * g.x + o.y * g.y;
        let alpha = cross.atan2(dot).abs();
        let alpha_norm = 1.0 - 2.0 * alpha / PI;
        let r_ori = if alpha_norm < 0.0 {
            alpha_norm * c.orientation_neg
        } else {
            alpha_norm * c.orientation_pos
        };

        let mut r_sd = 0.0;
        if f.goal_distance < self.latch {
            r_sd = (self.latch - f.goal_distance) * c.shortest_pos;
            self.latch = f.goal_distance;
        }

        let limit = f.robot_radius + c.laser_margin;
        let r_mld = if f.min_laser < limit {
            (limit - f.min_laser) * (-c.laser_neg)
        } else {
            0.0
        };

        // 1 = left, -1 = right, 0 = straight
        let class = if f.angular_change > c.turn_threshold {
            1
        } else if f.angular_change < -c.turn_threshold {
            -1
        } else {
            0
        };
        let flag = (class != 0 && class == -self.prev_class) as u8;
        self.prev_class = class;
        self.flags.push(flag);
        let start = self.flags.len().saturating_sub(c.wiggle_window);
        let sum: u32 = self.flags[start..].iter().map(|&x| x as u32).sum();
        let r_wig = if sum as usize > c.wiggle_limit {
            -(c.wiggle_neg / c.wiggle_window as f64) * sum as f64
        } else {
            0.0
        };
        r_dist + r_ori + r_sd + r_mld + r_wig
    }
}

fn random_reward_config(rng: &mut ChaCha8Rng) -> RewardConfig {
    let mut s = || rng.random_range(0.0..2.0);
    let mut c = RewardConfig {
        goal: s(),
        collision_world: s(),
        collision_robot: s(),
        distance_pos: s(),
        distance_neg: s(),
        orientation_pos: s(),
        orientation_neg: s(),
        shortest_pos: s(),
        laser_neg: s(),
        wiggle_neg: s(),
        laser_margin: s() * 0.3,
        turn_threshold: s() * 0.2,
        ..RewardConfig::default()
    };
    c.wiggle_limit = rng.random_range(1..6);
    c.wiggle_window = rng.random_range(c.wiggle_limit..30);
    c
}

fn criterion_reward_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xa11ce);
    let t0 = Instant::now();
    let mut worst: f64 = 0.0;
    let mut tuples = 0;
    let mut terminals = 0;
    while tuples < 10_000 {
        let config = if rng.random_bool(0.5) {
            RewardConfig::default()
        } else {
            random_reward_config(&mut rng)
        };
        let d0 = rng.random_range(0.5..10.0);
        let mut state = RewardState::new(d0);
        let mut oracle = RewardOracle::new(d0);
        let mut prev = d0;
        let len = rng.random_range(1..200);
        for step in 0..len {
            let d: f64 = if rng.random_bool(0.1) {
                rng.random_range(0.01..12.0)
            } else {
                (prev + rng.random_range(-0.06..0.06)).max(0.01)
            };
            let terminal = if step + 1 == len && rng.random_bool(0.5) {
                Some(
                    [
                        TerminalCause::ReachedGoal,
                        TerminalCause::CollidedWorld,
                        TerminalCause::CollidedRobot,
                        TerminalCause::TimedOut,
                    ][rng.random_range(0..4)],
                )
            } else {
                None
            };
            let dw = match rng.random_range(0..4) {
                0 => 0.0,
                1 => rng.random_range(-0.2..0.2),
                _ => rng.random_range(-3.0..3.0),
            };
            let facts = TransitionFacts {
                terminal,
                prev_goal_distance: prev,
                goal_distance: d,
                heading: Vec2::from_angle(rng.random_range(-PI..PI)),
                goal_vector: Vec2::from_angle(rng.random_range(-PI..PI)) * d,
                min_laser: rng.random_range(0.0..1.5),
                angular_change: dw,
                robot_radius: rng.random_range(0.1..0.5),
            };
            let (got, next) = compute_reward(&facts, &state, &config);
            let want = oracle.reward(&facts, &config);
            worst = worst.max((got - want).abs());
            terminals += terminal.is_some() as usize;
            state = next;
            prev = d;
            tuples += 1;
        }
    }
    let elapsed = t0.elapsed();
    check(
        worst < 1e-12 && elapsed < Duration::from_secs(1),
        format!("{tuples} tuples ({terminals} terminal), max abs error {worst:.2e}, {:.3}s", elapsed.as_secs_f64()),
    )
}

// ---------------------------------------------------------------- 2

fn criterion_terminal_constants() -> Outcome {
    let config = RewardConfig::default();
    let expected = [
        (TerminalCause::ReachedGoal, 1.0),
        (TerminalCause::CollidedWorld, -0.75),
        (TerminalCause::CollidedRobot, -1.0),
        (TerminalCause::TimedOut, 0.0),
    ];
    let mut bad = Vec::new();
    for (cause, want) in expected {
        // Dense inputs chosen so that every dense term would be nonzero.
        let facts = TransitionFacts {
            terminal: Some(cause),
            prev_goal_distance: 3.0,
            goal_distance: 2.9,
            heading: Vec2::new(1.0, 0.0),
            goal_vector: Vec2::new(0.0, 2.9),
            min_laser: 0.1,
            angular_change: 1.0,
            robot_radius: 0.25,
        };
        let (got, _) = compute_reward(&facts, &RewardState::new(5.0), &config);
        if got != want {
            bad.push(format!("{}: {got} != {want}", cause.as_str()));
        }
    }
    check(bad.is_empty(), if bad.is_empty() { "goal +1.0, world -0.75, robot -1.0, timeout 0".into() } else { bad.join("; ") })
}

// ---------------------------------------------------------------- 3

fn random_stack(rng: &mut ChaCha8Rng, beams: usize) -> ObservationStack {
    let mut frame = || Observation {
        lidar: LidarScan {
            ranges: (0..beams).map(|_| rng.random_range(0.0..20.0f32)).collect(),
        },
        goal_direction: Vec2::from_angle(rng.random_range(-3.0..3.0)),
        goal_distance: rng.random_range(0.0..12.0),
        velocity: Action::new(rng.random_range(0.0..0.6), rng.random_range(-1.5..1.5)),
    };
    let mut s = ObservationStack::bootstrap(frame());
    for _ in 0..3 {
        s = s.pushed(frame());
    }
    s
}

struct GradProblem {
    batch: InputBatch<f64>,
    targets: Vec<usize>,
    samples: Vec<[f64; 2]>,
    returns: Vec<f64>,
}

/// Negative log-likelihood of fixed actions plus squared value error.
fn grad_loss(net: &Network<f64>, p: &GradProblem) -> (f64, OutputGrads<f64>) {
    let (out, _) = net.forward(&p.batch).unwrap();
    let mut g = OutputGrads::zeros(net.config(), p.batch.rows());
    let mut total = 0.0;
    let a = net.config().policy_outputs();
    for r in 0..p.batch.rows() {
        match out.distribution(r) {
            ActionDistribution::Discrete(c) => {
                total -= c.log_prob(p.targets[r]);
                for (k, d) in c.grad_log_prob(p.targets[r]).into_iter().enumerate() {
                    g.policy[r * a + k] = -d;
                }
            }
            ActionDistribution::Continuous(gauss) => {
                total -= gauss.log_prob(&p.samples[r]);
                let (dm, ds) = gauss.grad_log_prob(&p.samples[r]);
                for k in 0..a {
                    g.policy[r * a + k] = -dm[k];
                    g.log_std[k] -= ds[k];
                }
            }
        }
        let err = out.value[r] - p.returns[r];
        total += err * err;
        g.value[r] = 2.0 * err;
    }
    (total, g)
}

fn gradient_error(space: ActionSpace, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = NetConfig::tiny(space);
    let n = cfg.layout().unwrap().total;
    let params: Vec<f64> = (0..n).map(|_| rng.random_range(-0.5..0.5)).collect();
    let mut net = Network::from_params(cfg.clone(), params).unwrap();
    let rows = 3;
    let stacks: Vec<_> = (0..rows).map(|_| random_stack(&mut rng, cfg.beams)).collect();
    let p = GradProblem {
        batch: InputBatch::from_stacks(&cfg, &stacks).unwrap(),
        targets: (0..rows).map(|_| rng.random_range(0..cfg.policy_outputs())).collect(),
        samples: (0..rows).map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect(),
        returns: (0..rows).map(|_| rng.random_range(-1.0..1.0)).collect(),
    };
    let (_, og) = grad_loss(&net, &p);
    let (_, tape) = net.forward(&p.batch).unwrap();
    let analytic = net.backward(&p.batch, &tape, &og).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let orig = net.params()[i];
        net.params_mut()[i] = orig + h;
        let up = grad_loss(&net, &p).0;
        net.params_mut()[i] = orig - h;
        let down = grad_loss(&net, &p).0;
        net.params_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let rel = (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(1e-7);
        worst = worst.max(rel);
    }
    worst
}

fn criterion_gradients() -> Outcome {
    let t0 = Instant::now();
    let cfg = NetConfig::tiny(ActionSpace::Discrete);
    if cfg.beams != 8 {
        return Err(format!("reduced net has {} beams, expected 8", cfg.beams));
    }
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        for space in [ActionSpace::Discrete, ActionSpace::Continuous] {
            worst = worst.max(gradient_error(space, 1000 + seed));
        }
    }
    let elapsed = t0.elapsed();
    check(
        worst < 1e-4 && elapsed < Duration::from_secs(30),
        format!("20 seeds x 2 heads, max relative error {worst:.2e}, {:.2}s", elapsed.as_secs_f64()),
    )
}

// ---------------------------------------------------------------- 4

/// The double sum: A_t = sum_k (gamma lambda)^k delta_{t+k}, cut at the first terminal.
fn gae_brute_force(r: &[f64], v: &[f64], done: &[bool], boot: f64, gamma: f64, lambda: f64) -> Vec<f64> {
    let n = r.len();
    let delta: Vec<f64> = (0..n)
        .map(|t| {
            let next = if done[t] {
                0.0
            } else if t + 1 < n {
                v[t + 1]
            } else {
                boot
            };
            r[t] + gamma * next - v[t]
        })
        .collect();
    (0..n)
        .map(|t| {
            let mut sum = 0.0;
            let mut w = 1.0;
            for k in t..n {
                sum += w * delta[k];
                if done[k] {
                    break;
                }
                w *= gamma * lambda;
            }
            sum
        })
        .collect()
}

fn criterion_gae() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6ae);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(1..=64);
        let r: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let p_done = rng.random_range(0.0..0.3);
        let d: Vec<bool> = (0..n).map(|_| rng.random_bool(p_done)).collect();
        let boot = rng.random_range(-2.0..2.0);
        let gamma = rng.random_range(0.8..1.0);
        let lambda = rng.random_range(0.0..=1.0);
        let (adv, ret) = compute_gae(&r, &v, &d, boot, gamma, lambda);
        let want = gae_brute_force(&r, &v, &d, boot, gamma, lambda);
        for t in 0..n {
            worst = worst.max((adv[t] - want[t]).abs());
            worst = worst.max((ret[t] - (want[t] + v[t])).abs());
        }
    }
    check(worst < 1e-10, format!("1000 sequences, max abs error {worst:.2e}"))
}

// ---------------------------------------------------------------- 5

fn criterion_geometry() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6e0);
    let mut worst: f64 = 0.0;
    let mut mismatches = 0;
    let mut hits = 0;
    for k in 0..10_000 {
        let o = Vec2::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
        let dir = Vec2::from_angle(rng.random_range(-PI..PI));
        let (got, want) = match k % 3 {
            // Segment: normal form n.x = c, then check the foot lies between the endpoints.
            0 => {
                let a = Vec2::new(rng.random_range(-8.0..8.0), rng.random_range(-8.0..8.0));
                let b = Vec2::new(rng.random_range(-8.0..8.0), rng.random_range(-8.0..8.0));
                let e = b - a;
                let n = Vec2::new(-e.y, e.x);
                let denom = n.x * dir.x + n.y * dir.y;
                let t = (n.x * (a.x - o.x) + n.y * (a.y - o.y)) / denom;
                let p = Vec2::new(o.x + t * dir.x, o.y + t * dir.y);
                let u = ((p.x - a.x) * e.x + (p.y - a.y) * e.y) / (e.x * e.x + e.y * e.y);
                let want = (t > 0.0 && (0.0..=1.0).contains(&u)).then_some(t);
                // Skip grazing hits at the endpoints where either answer is legitimate.
                if (u.abs() < 1e-9 || (u - 1.0).abs() < 1e-9) || denom.abs() < 1e-9 {
                    continue;
                }
                (Segment::new(a, b).ray_hit(o, dir), want)
            }
            // Circle: |o + t d - c|^2 = r^2, nearest positive root.
            1 => {
                let c = Vec2::new(rng.random_range(-6.0..6.0), rng.random_range(-6.0..6.0));
                let radius = rng.random_range(0.1..3.0);
                let fx = o.x - c.x;
                let fy = o.y - c.y;
                let b = fx * dir.x + fy * dir.y;
                let cc = fx * fx + fy * fy - radius * radius;
                let disc = b * b - cc;
                let want = if disc < 0.0 {
                    None
                } else {
                    let t1 = -b - disc.sqrt();
                    let t2 = -b + disc.sqrt();
                    if t1 > 0.0 {
                        Some(t1)
                    } else if t2 > 0.0 {
                        Some(t2)
                    } else {
                        None
                    }
                };
                if disc.abs() < 1e-9 {
                    continue;
                }
                (ray_circle_hit(o, dir, c, radius), want)
            }
            // Axis-aligned room seen from inside: hit the nearest of four lines.
            _ => {
                let lo = Vec2::new(rng.random_range(-9.0..-6.0), rng.random_range(-9.0..-6.0));
                let hi = Vec2::new(rng.random_range(6.0..9.0), rng.random_range(6.0..9.0));
                let map = WorldMap::new("box", rectangle(lo, hi), vec![Vec2::new(0.0, 0.0), Vec2::new(1.0, 1.0)], 1)
                    .map_err(|e| e.to_string())?;
                let tx = if dir.x > 0.0 { (hi.x - o.x) / dir.x } else { (lo.x - o.x) / dir.x };
                let ty = if dir.y > 0.0 { (hi.y - o.y) / dir.y } else { (lo.y - o.y) / dir.y };
                (ray_intersect(o, dir, 100.0, &map), Some(tx.min(ty)))
            }
        };
        match (got, want) {
            (Some(g), Some(w)) => {
                hits += 1;
                worst = worst.max((g - w).abs());
            }
            (None, None) => {}
            _ => mismatches += 1,
        }
    }

    // A* against a plain Dijkstra written over the same move rules.
    let mut grid_rng = ChaCha8Rng::seed_from_u64(0xd1);
    let mut cost_mismatch = 0;
    let mut reachable = 0;
    for _ in 0..100 {
        let fill = grid_rng.random_range(0.1..0.4);
        let cells: Vec<bool> = (0..900).map(|_| grid_rng.random_bool(fill)).collect();
        let mut free: Vec<Cell> = (0..900).filter(|&i| !cells[i]).map(|i| (i % 30, i / 30)).collect();
        if free.len() < 2 {
            continue;
        }
        let s = free.swap_remove(grid_rng.random_range(0..free.len()));
        let g = free[grid_rng.random_range(0..free.len())];
        let grid = OccupancyGrid::from_cells(1.0, Vec2::new(0.0, 0.0), 30, 30, cells.clone());
        let got = plan_cells(&grid, s, g).map(|(_, c)| c);
        let want = dijkstra(&cells, 30, 30, s, g);
        reachable += want.is_some() as usize;
        if got != want {
            cost_mismatch += 1;
        }
    }
    check(
        worst < 1e-9 && mismatches == 0 && cost_mismatch == 0,
        format!(
            "raycast: {hits} hits, max error {worst:.2e}, {mismatches} hit/miss disagreements; A*: {cost_mismatch}/100 cost mismatches ({reachable} reachable)"
        ),
    )
}

fn dijkstra(cells: &[bool], w: usize, h: usize, s: Cell, t: Cell) -> Option<GridCost> {
    let free = |x: i64, y: i64| x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h && !cells[y as usize * w + x as usize];
    let value = |c: GridCost| c.straight as f64 + c.diagonal as f64 * std::f64::consts::SQRT_2;
    let mut dist: Vec<Option<GridCost>> = vec![None; w * h];
    let mut done = vec![false; w * h];
    dist[s.1 * w + s.0] = Some(GridCost::default());
    loop {
        let mut best: Option<(usize, GridCost)> = None;
        for i in 0..w * h {
            if let (false, Some(d)) = (done[i], dist[i]) {
                if best.is_none_or(|(_, b)| value(d) < value(b)) {
                    best = Some((i, d));
                }
            }
        }
        let (i, d) = best?;
        let (x, y) = ((i % w) as i64, (i / w) as i64);
        if (x as usize, y as usize) == t {
            return Some(d);
        }
        done[i] = true;
        for dx in -1i64..=1 {
            for dy in -1i64..=1 {
                if (dx, dy) == (0, 0) || !free(x + dx, y + dy) {
                    continue;
                }
                let diagonal = dx != 0 && dy != 0;
                if diagonal && !(free(x + dx, y) && free(x, y + dy)) {
                    continue;
                }
                let mut nd = d;
                if diagonal {
                    nd.diagonal += 1;
                } else {
                    nd.straight += 1;
                }
                let j = (y + dy) as usize * w + (x + dx) as usize;
                if dist[j].is_none_or(|o| value(nd) < value(o)) {
                    dist[j] = Some(nd);
                }
            }
        }
    }
}

// ---------------------------------------------------------------- 6

fn criterion_determinism() -> Outcome {
    let mut cfg = RunConfig {
        seed: 17,
        checkpoint_every: 50,
        worlds: vec![WorldEntry::new("open_room", 1, 2), WorldEntry::new("swap_corridor", 2, 1)],
        stop: StopCriteria {
            max_episodes: 1_000_000,
            success_threshold: None,
            success_window: 100,
            max_updates: Some(100),
        },
        ..RunConfig::default()
    };
    cfg.sim.lidar.beams = 61;
    cfg.sim.max_steps = 80;
    cfg.train.t_max = 16;
    cfg.train.minibatch = 32;
    cfg.train.epochs = 2;
    let dirs = [tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?];
    for d in &dirs {
        let s = cmd_train(&cfg, Some(d.path())).map_err(|e| e.to_string())?;
        if s.result.updates != 100 {
            return Err(format!("run stopped after {} updates", s.result.updates));
        }
    }
    let mut lines = 0;
    for f in [EPISODES_FILE, UPDATES_FILE] {
        let a = std::fs::read(dirs[0].path().join(f)).map_err(|e| e.to_string())?;
        let b = std::fs::read(dirs[1].path().join(f)).map_err(|e| e.to_string())?;
        if a != b {
            return Err(format!("{f} differs between identical runs"));
        }
        lines += a.iter().filter(|&&c| c == b'\n').count();
    }
    Ok(format!("100 updates, episodes.csv and updates.csv identical ({lines} lines)"))
}

// ---------------------------------------------------------------- 7

fn criterion_trainability() -> (Outcome, Option<Network<f32>>) {
    let setup = TrainSetup {
        worlds: vec![WorldSetup {
            map: Arc::new(bundled_world("open_room").expect("bundled")),
            agents: 1,
            instances: 8,
        }],
        sim: SimConfig::default(),
        reward: RewardConfig::default(),
        train: TrainConfig::default(),
        stop: StopCriteria {
            max_episodes: 5000,
            success_threshold: Some(0.8),
            success_window: 500,
            max_updates: None,
        },
        seed: 1,
    };
    let t0 = Instant::now();
    let result = match train_loop(&setup, &mut |_| Control::Continue) {
        Ok(r) => r,
        Err(e) => return (Err(e.to_string()), None),
    };
    let elapsed = t0.elapsed();
    let window = &result.episodes[result.episodes.len().saturating_sub(500)..];
    let rate = window.iter().filter(|e| e.outcome == TerminalCause::ReachedGoal).count() as f64 / window.len().max(1) as f64;
    let outcome = check(
        result.stop == StopReason::SuccessThreshold
            && window.len() == 500
            && rate >= 0.8
            && elapsed < Duration::from_secs(3600),
        format!(
            "{:.1}% over the last {} of {} agent-episodes, {:.0}s",
            rate * 100.0,
            window.len(),
            result.episodes.len(),
            elapsed.as_secs_f64()
        ),
    );
    (outcome, Some(result.network))
}

// ---------------------------------------------------------------- 8

/// Joint success is judged over the last 250 world-episodes (500 agent-episodes).
/// After it first reaches 60%, training runs on for `SETTLE` more agent-episodes
/// and the robot-collision rate is taken over the final 500.
const JOINT_WINDOW: usize = 250;
const ROBOT_WINDOW: usize = 500;
const SETTLE: u64 = 1000;

fn criterion_multi_agent() -> Outcome {
    let setup = TrainSetup {
        worlds: vec![WorldSetup {
            map: Arc::new(bundled_world("swap_corridor").expect("bundled")),
            agents: 2,
            instances: 4,
        }],
        sim: SimConfig::default(),
        reward: RewardConfig::default(),
        train: TrainConfig::default(),
        stop: StopCriteria {
            max_episodes: 20_000,
            success_threshold: None,
            success_window: 500,
            max_updates: None,
        },
        seed: 1,
    };
    let t0 = Instant::now();
    let mut pending: HashMap<(usize, u64), Vec<TerminalCause>> = HashMap::new();
    let mut joint: VecDeque<bool> = VecDeque::new();
    let mut robot: VecDeque<bool> = VecDeque::new();
    let mut crossed: Option<(u64, f64)> = None;
    let mut last = 0;
    let result = train_loop(&setup, &mut |ev| {
        if let TrainEvent::Episode(rec) = ev {
            last = rec.episode;
            robot.push_back(rec.outcome == TerminalCause::CollidedRobot);
            if robot.len() > ROBOT_WINDOW {
                robot.pop_front();
            }
            let outcomes = pending.entry((rec.instance, rec.reset)).or_default();
            outcomes.push(rec.outcome);
            if outcomes.len() == 2 {
                let all = outcomes.iter().all(|&c| c == TerminalCause::ReachedGoal);
                pending.remove(&(rec.instance, rec.reset));
                joint.push_back(all);
                if joint.len() > JOINT_WINDOW {
                    joint.pop_front();
                }
                let rate = joint.iter().filter(|&&b| b).count() as f64 / joint.len() as f64;
                if crossed.is_none() && joint.len() == JOINT_WINDOW && rate >= 0.6 {
                    crossed = Some((rec.episode, rate));
                }
            }
            if crossed.is_some_and(|(at, _)| rec.episode >= at + SETTLE) {
                return Control::Stop;
            }
        }
        Control::Continue
    });
    if let Err(e) = result {
        return Err(e.to_string());
    }
    let elapsed = t0.elapsed().as_secs_f64();
    let Some((at, rate)) = crossed else {
        return Err(format!("joint success never reached 60% within {last} agent-episodes ({elapsed:.0}s)"));
    };
    let settled = last >= at + SETTLE;
    let robot_rate = robot.iter().filter(|&&b| b).count() as f64 / robot.len().max(1) as f64;
    check(
        settled && robot_rate <= 0.20,
        format!(
            "joint success {:.1}% at agent-episode {at}; robot collisions {:.1}% over agent-episodes {}..{last}{} ({elapsed:.0}s)",
            rate * 100.0,
            robot_rate * 100.0,
            last + 1 - robot.len() as u64,
            if settled { "" } else { ", budget ran out before settling" }
        ),
    )
}

// ---------------------------------------------------------------- 9

fn criterion_timeout_semantics(net: Option<Network<f32>>) -> Outcome {
    let sim = SimConfig::default();
    let net = match net {
        Some(n) => n,
        None => Network::init(NetConfig::standard(ActionSpace::Discrete), &mut ChaCha8Rng::seed_from_u64(9))
            .map_err(|e| e.to_string())?,
    };
    let policy = GreedyPolicy::new(net, &sim).map_err(|e| e.to_string())?;
    let map = Arc::new(bundled_world("room").expect("bundled"));
    let mut reached = Vec::new();
    for max_steps in [500, 1000] {
        let spec = EvalSpec {
            map: map.clone(),
            agents: 1,
            episodes: 100,
            sim: SimConfig { max_steps, ..sim.clone() },
            reward: RewardConfig::default(),
            seed: 2024,
        };
        let row = evaluate(&policy, &spec).map_err(|e| e.to_string())?;
        reached.push((row.reached, row.reached_pct()));
    }
    check(
        reached[1].0 >= reached[0].0,
        format!("reached {:.2}% at 500 steps, {:.2}% at 1000 steps (room, 100 seeds)", reached[0].1, reached[1].1),
    )
}

// ---------------------------------------------------------------- 10

fn criterion_shape_contract() -> Outcome {
    let cfg = NetConfig::standard(ActionSpace::Discrete);
    let lens = (cfg.conv1_len(), cfg.conv2_len(), cfg.flatten_len());
    if (cfg.beams, lens) != (1081, (Some(359), Some(178), Some(5696))) {
        return Err(format!("pipeline {} -> {lens:?}", cfg.beams));
    }
    let net = Network::<f32>::init(cfg.clone(), &mut ChaCha8Rng::seed_from_u64(3)).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let batch = InputBatch::from_stacks(&cfg, &[random_stack(&mut rng, 1081)]).map_err(|e| e.to_string())?;
    let (out, _) = net.forward(&batch).map_err(|e| e.to_string())?;
    if out.value.len() != 1 {
        return Err("forward pass produced no value".into());
    }

    // A checkpoint is rejected when it is loaded for a sensor it was not built for.
    let bytes = encode_checkpoint(&net, "acceptance");
    let (restored, _) = decode_checkpoint::<f32>(&bytes).map_err(|e| e.to_string())?;
    let mut narrow = SimConfig::default();
    narrow.lidar.beams = 720;
    let mismatch = match GreedyPolicy::new(restored.clone(), &narrow) {
        Err(e) => e.to_string(),
        Ok(_) => return Err("720-beam sim accepted a 1081-beam checkpoint".into()),
    };
    GreedyPolicy::new(restored, &SimConfig::default()).map_err(|e| e.to_string())?;
    if decode_checkpoint::<f32>(&bytes[..bytes.len() / 2]).is_ok() {
        return Err("truncated checkpoint decoded".into());
    }
    let wrong_width = InputBatch::<f32>::from_stacks(&cfg, &[random_stack(&mut rng, 720)]);
    if !matches!(wrong_width, Err(NetError::Shape(_))) {
        return Err("720-beam observation accepted by a 1081-beam batch".into());
    }
    Ok(format!("1081 -> 359 -> 178, flatten 5696; mismatch rejected at load ({mismatch})"))
}

fn main() -> ExitCode {
    let mut failures = 0;
    let mut report = |n: usize, name: &str, outcome: Outcome| {
        match &outcome {
            Ok(d) => println!("PASS {n:>2} {name}: {d}"),
            Err(d) => {
                failures += 1;
                println!("FAIL {n:>2} {name}: {d}");
            }
        }
    };
    report(1, "reward oracle", criterion_reward_oracle());
    report(2, "terminal constants", criterion_terminal_constants());
    report(3, "gradient check", criterion_gradients());
    report(4, "gae", criterion_gae());
    report(5, "geometry oracles", criterion_geometry());
    report(6, "determinism", criterion_determinism());
    let (trainability, net) = criterion_trainability();
    report(7, "single-agent trainability", trainability);
    report(8, "two-agent swap", criterion_multi_agent());
    report(9, "timeout semantics", criterion_timeout_semantics(net));
    report(10, "shape contract", criterion_shape_contract());
    if failures > 0 {
        println!("{failures} criteria failed");
        ExitCode::FAILURE
    } else {
        println!("all criteria passed");
        ExitCode::SUCCESS
    }
}
