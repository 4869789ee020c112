//! Static environments: obstacle outlines, spawn/goal nodes, scenario files
//! and the geometric queries the simulator asks of them.
//!
//! # Scenario file format
//!
//! Scenario files are TOML documents with exactly four keys:
//!
//! ```toml
//! name = "open_room"               # identifier, non-empty
//! recommended_agents = 1           # integer, 1 ..= number of nodes
//! segments = [                     # wall pieces [x1, y1, x2, y2] in meters
//!     [0.0, 0.0, 8.0, 0.0],
//!     [8.0, 0.0, 8.0, 8.0],
//!     [8.0, 8.0, 0.0, 8.0],
//!     [0.0, 8.0, 0.0, 0.0],
//! ]
//! nodes = [[2.0, 2.0], [6.0, 6.0]] # candidate start/goal positions [x, y]
//! ```
//!
//! Every obstacle, including the outer boundary, is a closed polyline: each
//! segment endpoint must coincide (within 1e-6 m) with an even number of
//! endpoints. A node is in free space when a ray from it crosses walls an odd
//! number of times, i.e. it lies inside the boundary and outside every
//! obstacle. Nodes keep at least one robot radius of clearance from every
//! wall and two radii from each other.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Segment, Vec2};

/// Default robot radius used to validate node clearance.
pub const DEFAULT_ROBOT_RADIUS: f64 = 0.25;

const ENDPOINT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("failed to read world file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed world file: {0}")]
    Parse(String),
    #[error("invalid world '{name}': {reason}")]
    Validation { name: String, reason: String },
    #[error("world has {nodes} nodes, cannot place {agents} agents")]
    InsufficientNodes { agents: usize, nodes: usize },
    #[error("unknown bundled world '{0}'")]
    UnknownWorld(String),
}

/// Start and goal node indices for one agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioTask {
    pub start: usize,
    pub goal: usize,
}

/// One environment. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldMap {
    name: String,
    segments: Vec<Segment>,
    nodes: Vec<Vec2>,
    recommended_agents: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WorldFile {
    name: String,
    recommended_agents: usize,
    segments: Vec<[f64; 4]>,
    nodes: Vec<[f64; 2]>,
}

impl WorldMap {
    /// Builds and validates a map against the default robot radius.
    pub fn new(
        name: impl Into<String>,
        segments: Vec<Segment>,
        nodes: Vec<Vec2>,
        recommended_agents: usize,
    ) -> Result<Self, WorldError> {
        let map = Self {
            name: name.into(),
            segments,
            nodes,
            recommended_agents,
        };
        map.validate(DEFAULT_ROBOT_RADIUS)?;
        Ok(map)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn nodes(&self) -> &[Vec2] {
        &self.nodes
    }

    pub fn recommended_agents(&self) -> usize {
        self.recommended_agents
    }

    /// Axis-aligned bounds `(min, max)` of all wall geometry.
    pub fn bounds(&self) -> (Vec2, Vec2) {
        let mut lo = Vec2::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for s in &self.segments {
            for p in [s.a, s.b] {
                lo = Vec2::new(lo.x.min(p.x), lo.y.min(p.y));
                hi = Vec2::new(hi.x.max(p.x), hi.y.max(p.y));
            }
        }
        (lo, hi)
    }

    /// Checks every structural invariant for robots of `robot_radius`.
    pub fn validate(&self, robot_radius: f64) -> Result<(), WorldError> {
        let fail = |reason: String| {
            Err(WorldError::Validation {
                name: self.name.clone(),
                reason,
            })
        };
        if self.name.trim().is_empty() {
            return fail("empty name".into());
        }
        if self.segments.len() < 3 {
            return fail("fewer than three segments cannot enclose anything".into());
        }
        for (i, s) in self.segments.iter().enumerate() {
            if !s.a.is_finite() || !s.b.is_finite() {
                return fail(format!("segment {i} has non-finite coordinates"));
            }
            if s.length() <= ENDPOINT_TOLERANCE {
                return fail(format!("segment {i} is degenerate"));
            }
        }
        if let Some(p) = self.open_endpoint() {
            return fail(format!("open boundary at ({}, {})", p.x, p.y));
        }
        if self.nodes.len() < 2 {
            return fail("at least two nodes are required".into());
        }
        if self.recommended_agents == 0 || self.recommended_agents > self.nodes.len() {
            return fail(format!(
                "recommended_agents {} outside 1..={}",
                self.recommended_agents,
                self.nodes.len()
            ));
        }
        for (i, &n) in self.nodes.iter().enumerate() {
            if !n.is_finite() {
                return fail(format!("node {i} has non-finite coordinates"));
            }
            if !self.is_free_space(n) {
                return fail(format!("node {i} at ({}, {}) is not enclosed free space", n.x, n.y));
            }
            if let Some(d) = self.min_wall_distance(n).filter(|&d| d < robot_radius) {
                return fail(format!("node {i} is {d:.3} m from a wall (< {robot_radius})"));
            }
            for (j, &m) in self.nodes.iter().enumerate().skip(i + 1) {
                if n.distance(m) < 2.0 * robot_radius {
                    return fail(format!("nodes {i} and {j} overlap"));
                }
            }
        }
        Ok(())
    }

    fn open_endpoint(&self) -> Option<Vec2> {
        let key = |p: Vec2| {
            (
                (p.x / ENDPOINT_TOLERANCE).round() as i64,
                (p.y / ENDPOINT_TOLERANCE).round() as i64,
            )
        };
        let mut degree: HashMap<(i64, i64), (usize, Vec2)> = HashMap::new();
        for s in &self.segments {
            for p in [s.a, s.b] {
                degree.entry(key(p)).or_insert((0, p)).0 += 1;
            }
        }
        let mut open: Vec<Vec2> = degree
            .into_values()
            .filter(|(d, _)| d % 2 == 1)
            .map(|(_, p)| p)
            .collect();
        open.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
        open.first().copied()
    }

    /// Crossing-parity test: inside the boundary and outside all obstacles.
    pub fn is_free_space(&self, p: Vec2) -> bool {
        // An irrational-ish direction makes vertex grazing practically impossible.
        let dir = Vec2::from_angle(0.713_248_917_3);
        let crossings = self
            .segments
            .iter()
            .filter(|s| s.ray_hit(p, dir).is_some())
            .count();
        crossings % 2 == 1
    }

    fn min_wall_distance(&self, p: Vec2) -> Option<f64> {
        self.segments
            .iter()
            .map(|s| s.distance_to(p))
            .min_by(f64::total_cmp)
    }

    /// Parses and validates scenario text.
    pub fn from_toml_str(text: &str) -> Result<Self, WorldError> {
        let file: WorldFile = toml::from_str(text).map_err(|e| WorldError::Parse(e.to_string()))?;
        WorldMap::new(
            file.name,
            file.segments
                .iter()
                .map(|s| Segment::new(Vec2::new(s[0], s[1]), Vec2::new(s[2], s[3])))
                .collect(),
            file.nodes.iter().map(|n| Vec2::new(n[0], n[1])).collect(),
            file.recommended_agents,
        )
    }

    /// Serializes back into the scenario format.
    pub fn to_toml_string(&self) -> String {
        let file = WorldFile {
            name: self.name.clone(),
            recommended_agents: self.recommended_agents,
            segments: self
                .segments
                .iter()
                .map(|s| [s.a.x, s.a.y, s.b.x, s.b.y])
                .collect(),
            nodes: self.nodes.iter().map(|n| [n.x, n.y]).collect(),
        };
        toml::to_string(&file).expect("world file always serializes")
    }
}

impl fmt::Display for WorldMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} ({} segments, {} nodes, {} agents recommended)",
            self.name,
            self.segments.len(),
            self.nodes.len(),
            self.recommended_agents
        )
    }
}

/// Reads a scenario file from disk.
pub fn load_world(path: impl AsRef<Path>) -> Result<WorldMap, WorldError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| WorldError::Io {
        path: path.display().to_string(),
        source,
    })?;
    WorldMap::from_toml_str(&text)
}

/// First hit distance along a unit-direction ray, if within `max_range`.
pub fn ray_intersect(origin: Vec2, direction: Vec2, max_range: f64, map: &WorldMap) -> Option<f64> {
    nearest_hit(origin, direction, map.segments()).filter(|&t| t <= max_range)
}

pub(crate) fn nearest_hit(origin: Vec2, direction: Vec2, segments: &[Segment]) -> Option<f64> {
    let mut best: Option<f64> = None;
    for s in segments {
        if let Some(t) = s.ray_hit(origin, direction) {
            if best.is_none_or(|b| t < b) {
                best = Some(t);
            }
        }
    }
    best
}

/// True iff a disk at `center` intersects any wall.
pub fn circle_overlaps_world(center: Vec2, radius: f64, map: &WorldMap) -> bool {
    map.segments().iter().any(|s| s.distance_to(center) < radius)
}

/// Draws distinct start nodes and per-agent goals. Goals are pairwise
/// distinct and never equal to the agent's own start.
pub fn sample_tasks<R: Rng + ?Sized>(
    map: &WorldMap,
    n_agents: usize,
    rng: &mut R,
) -> Result<Vec<ScenarioTask>, WorldError> {
    let n_nodes = map.nodes().len();
    if n_agents > n_nodes || (n_agents > 0 && n_nodes < 2) {
        return Err(WorldError::InsufficientNodes {
            agents: n_agents,
            nodes: n_nodes,
        });
    }
    let starts = index::sample(rng, n_nodes, n_agents).into_vec();
    let mut used = vec![false; n_nodes];
    let mut goals = Vec::with_capacity(n_agents);
    for (i, &start) in starts.iter().enumerate() {
        let candidates: Vec<usize> = (0..n_nodes).filter(|&k| !used[k] && k != start).collect();
        let goal = if candidates.is_empty() {
            // Only our own start is left; trade with an earlier agent whose goal
            // is not our start. That agent then takes our start, which differs
            // from its own since starts are distinct.
            let j = (0..i)
                .find(|&j| goals[j] != start)
                .expect("n_agents >= 2 whenever the pool is exhausted");
            let traded = goals[j];
            goals[j] = start;
            traded
        } else {
            candidates[rng.random_range(0..candidates.len())]
        };
        used[goal] = true;
        goals.push(goal);
    }
    Ok(starts
        .into_iter()
        .zip(goals)
        .map(|(start, goal)| ScenarioTask { start, goal })
        .collect())
}

macro_rules! bundled {
    ($($name:literal),* $(,)?) => {
        &[$(($name, include_str!(concat!("../worlds/", $name, ".toml")))),*]
    };
}

static BUNDLED: &[(&str, &str)] = bundled!(
    "tube",
    "room",
    "four_rooms",
    "hall",
    "roblab",
    "swap",
    "intersection",
    "bottleneck",
    "constriction",
    "multi",
    "open_room",
    "swap_corridor",
);

/// Names of the scenario files shipped with the crate.
pub fn bundled_world_names() -> impl Iterator<Item = &'static str> {
    BUNDLED.iter().map(|(n, _)| *n)
}

/// Raw scenario text of a bundled world.
pub fn bundled_world_source(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

pub fn bundled_world(name: &str) -> Result<WorldMap, WorldError> {
    let text = bundled_world_source(name).ok_or_else(|| WorldError::UnknownWorld(name.into()))?;
    WorldMap::from_toml_str(text)
}

/// Resolves a bundled world name, falling back to a file path.
pub fn resolve_world(name_or_path: &str) -> Result<WorldMap, WorldError> {
    match bundled_world_source(name_or_path) {
        Some(text) => WorldMap::from_toml_str(text),
        None if Path::new(name_or_path).exists() => load_world(name_or_path),
        None => Err(WorldError::UnknownWorld(name_or_path.into())),
    }
}

/// Closed axis-aligned rectangle as four segments.
pub fn rectangle(lo: Vec2, hi: Vec2) -> Vec<Segment> {
    let c = [lo, Vec2::new(hi.x, lo.y), hi, Vec2::new(lo.x, hi.y)];
    (0..4).map(|i| Segment::new(c[i], c[(i + 1) % 4])).collect()
}
