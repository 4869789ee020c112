//! Occupancy-grid A* planner and a pure-pursuit follower used as the scripted
//! baseline in evaluation and path comparisons.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::{FRAC_PI_2, SQRT_2};
use std::io::{self, Write};

use thiserror::Error;

use crate::geometry::{wrap_angle, Vec2};
use crate::sim::{Action, AgentState, MAX_ANGULAR, MAX_LINEAR};
use crate::world::WorldMap;

pub const DEFAULT_RESOLUTION: f64 = 0.1;
pub const SAFETY_MARGIN: f64 = 0.05;
pub const LOOKAHEAD: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("resolution must be positive, got {0}")]
    Resolution(f64),
    #[error("{which} ({x:.3}, {y:.3}) lies outside the grid")]
    OutOfBounds { which: &'static str, x: f64, y: f64 },
    #[error("{which} ({x:.3}, {y:.3}) lies in an occupied cell")]
    Occupied { which: &'static str, x: f64, y: f64 },
}

pub type Cell = (usize, usize);

/// Row-major boolean occupancy; `cells[iy * width + ix]` covers
/// `origin + [ix, ix+1] x [iy, iy+1] * resolution`.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    resolution: f64,
    origin: Vec2,
    width: usize,
    height: usize,
    cells: Vec<bool>,
}

impl OccupancyGrid {
    pub fn from_cells(resolution: f64, origin: Vec2, width: usize, height: usize, cells: Vec<bool>) -> Self {
        assert_eq!(cells.len(), width * height, "cell count does not match dimensions");
        Self {
            resolution,
            origin,
            width,
            height,
            cells,
        }
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn origin(&self) -> Vec2 {
        self.origin
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn is_occupied(&self, (ix, iy): Cell) -> bool {
        self.cells[iy * self.width + ix]
    }

    pub fn occupied_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn cell_center(&self, (ix, iy): Cell) -> Vec2 {
        self.origin + Vec2::new(ix as f64 + 0.5, iy as f64 + 0.5) * self.resolution
    }

    pub fn cell_of(&self, p: Vec2) -> Option<Cell> {
        let q = (p - self.origin) * (1.0 / self.resolution);
        if !(q.x >= 0.0 && q.y >= 0.0) {
            return None;
        }
        let (ix, iy) = (q.x.floor() as usize, q.y.floor() as usize);
        (ix < self.width && iy < self.height).then_some((ix, iy))
    }
}

/// A cell is occupied when a wall passes through its closed square or its
/// center lies within `inflation` of a wall.
pub fn rasterize(map: &WorldMap, resolution: f64, inflation: f64) -> Result<OccupancyGrid, PlanError> {
    if !(resolution > 0.0 && resolution.is_finite()) {
        return Err(PlanError::Resolution(resolution));
    }
    let (lo, hi) = map.bounds();
    let span = |a: f64, b: f64| (((b - a) / resolution) - 1e-9).ceil().max(1.0) as usize;
    let (width, height) = (span(lo.x, hi.x), span(lo.y, hi.y));
    let mut cells = vec![false; width * height];
    for s in map.segments() {
        // Only cells inside the segment's inflated bounding box can be affected.
        let pad = inflation.max(0.0) + resolution;
        let bx0 = ((s.a.x.min(s.b.x) - pad - lo.x) / resolution).floor().max(0.0) as usize;
        let by0 = ((s.a.y.min(s.b.y) - pad - lo.y) / resolution).floor().max(0.0) as usize;
        let bx1 = (((s.a.x.max(s.b.x) + pad - lo.x) / resolution).ceil() as usize).min(width);
        let by1 = (((s.a.y.max(s.b.y) + pad - lo.y) / resolution).ceil() as usize).min(height);
        for iy in by0..by1 {
            for ix in bx0..bx1 {
                let k = iy * width + ix;
                if cells[k] {
                    continue;
                }
                let cmin = lo + Vec2::new(ix as f64, iy as f64) * resolution;
                let cmax = cmin + Vec2::new(resolution, resolution);
                let center = cmin + Vec2::new(0.5, 0.5) * resolution;
                if s.touches_box(cmin, cmax) || s.distance_to(center) <= inflation {
                    cells[k] = true;
                }
            }
        }
    }
    Ok(OccupancyGrid {
        resolution,
        origin: lo,
        width,
        height,
        cells,
    })
}

/// Exact path cost as counts of straight and diagonal moves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct GridCost {
    pub straight: u32,
    pub diagonal: u32,
}

impl GridCost {
    /// Cost in cell units.
    pub fn value(self) -> f64 {
        self.straight as f64 + self.diagonal as f64 * SQRT_2
    }

    fn add(self, diagonal: bool) -> Self {
        if diagonal {
            Self {
                diagonal: self.diagonal + 1,
                ..self
            }
        } else {
            Self {
                straight: self.straight + 1,
                ..self
            }
        }
    }
}

const MOVES: [(i64, i64); 8] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)];

/// Free neighbours of `c`. A diagonal step needs both adjacent straight cells free.
pub fn neighbors(grid: &OccupancyGrid, (ix, iy): Cell) -> impl Iterator<Item = (Cell, bool)> + '_ {
    let free = move |x: i64, y: i64| {
        x >= 0
            && y >= 0
            && (x as usize) < grid.width
            && (y as usize) < grid.height
            && !grid.is_occupied((x as usize, y as usize))
    };
    let (x, y) = (ix as i64, iy as i64);
    MOVES.iter().filter_map(move |&(dx, dy)| {
        let diagonal = dx != 0 && dy != 0;
        if !free(x + dx, y + dy) || (diagonal && !(free(x + dx, y) && free(x, y + dy))) {
            return None;
        }
        Some((((x + dx) as usize, (y + dy) as usize), diagonal))
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Open {
    f: f64,
    g: GridCost,
    seq: u64,
    cell: Cell,
}

impl Eq for Open {}

impl Ord for Open {
    // Min-heap on f, then g; insertion order breaks the remaining ties.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f
            .total_cmp(&self.f)
            .then_with(|| other.g.value().total_cmp(&self.g.value()))
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// A* over cells. Returns the cell sequence and its exact cost, or `None`
/// when the goal is unreachable.
pub fn plan_cells(grid: &OccupancyGrid, start: Cell, goal: Cell) -> Option<(Vec<Cell>, GridCost)> {
    let idx = |(x, y): Cell| y * grid.width + x;
    let h = |(x, y): Cell| {
        let dx = x as f64 - goal.0 as f64;
        let dy = y as f64 - goal.1 as f64;
        (dx * dx + dy * dy).sqrt()
    };
    let n = grid.width * grid.height;
    let mut best: Vec<Option<GridCost>> = vec![None; n];
    let mut parent = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let mut heap = BinaryHeap::new();
    let mut seq = 0;
    best[idx(start)] = Some(GridCost::default());
    heap.push(Open {
        f: h(start),
        g: GridCost::default(),
        seq,
        cell: start,
    });
    while let Some(Open { g, cell, .. }) = heap.pop() {
        let k = idx(cell);
        if closed[k] {
            continue;
        }
        closed[k] = true;
        if cell == goal {
            let mut path = vec![cell];
            let mut at = k;
            while parent[at] != usize::MAX {
                at = parent[at];
                path.push((at % grid.width, at / grid.width));
            }
            path.reverse();
            return Some((path, g));
        }
        for (next, diagonal) in neighbors(grid, cell) {
            let j = idx(next);
            if closed[j] {
                continue;
            }
            let cand = g.add(diagonal);
            if best[j].is_none_or(|b| cand.value() < b.value()) {
                best[j] = Some(cand);
                parent[j] = k;
                seq += 1;
                heap.push(Open {
                    f: cand.value() + h(next),
                    g: cand,
                    seq,
                    cell: next,
                });
            }
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannedPath {
    pub waypoints: Vec<Vec2>,
    /// Polyline length in meters.
    pub length: f64,
    pub cost: GridCost,
}

/// Plans between two world points. Waypoints are the cell centers of the
/// grid path with the endpoints replaced by the requested points.
pub fn plan(grid: &OccupancyGrid, start: Vec2, goal: Vec2) -> Result<Option<PlannedPath>, PlanError> {
    let locate = |which: &'static str, p: Vec2| {
        let c = grid.cell_of(p).ok_or(PlanError::OutOfBounds { which, x: p.x, y: p.y })?;
        if grid.is_occupied(c) {
            return Err(PlanError::Occupied { which, x: p.x, y: p.y });
        }
        Ok(c)
    };
    let s = locate("start", start)?;
    let g = locate("goal", goal)?;
    let Some((cells, cost)) = plan_cells(grid, s, g) else {
        return Ok(None);
    };
    let mut waypoints: Vec<Vec2> = cells.iter().map(|&c| grid.cell_center(c)).collect();
    waypoints[0] = start;
    if waypoints.len() == 1 {
        waypoints.push(goal);
    } else {
        *waypoints.last_mut().expect("nonempty") = goal;
    }
    let length = polyline_length(&waypoints);
    Ok(Some(PlannedPath {
        waypoints,
        length,
        cost,
    }))
}

pub fn polyline_length(points: &[Vec2]) -> f64 {
    points.windows(2).map(|w| w[0].distance(w[1])).sum()
}

/// Pure pursuit toward the furthest waypoint ahead of the closest one that
/// is still within `LOOKAHEAD` of the robot.
pub fn follow_path(state: &AgentState, path: &PlannedPath) -> Action {
    let wp = &path.waypoints;
    assert!(!wp.is_empty(), "follow_path needs a nonempty path");
    let p = state.position;
    let closest = wp
        .iter()
        .enumerate()
        .min_by(|a, b| p.distance(*a.1).total_cmp(&p.distance(*b.1)))
        .map(|(i, _)| i)
        .expect("nonempty");
    let mut target = closest;
    for (j, w) in wp.iter().enumerate().skip(closest) {
        if p.distance(*w) > LOOKAHEAD {
            break;
        }
        target = j;
    }
    let offset = wp[target] - p;
    let d = offset.norm();
    if d < 1e-9 {
        return Action::new(0.0, 0.0);
    }
    steer(wrap_angle(offset.angle() - state.heading), d)
}

fn steer(alpha: f64, distance: f64) -> Action {
    if alpha.abs() >= FRAC_PI_2 {
        return Action::new(0.0, MAX_ANGULAR.copysign(alpha));
    }
    let v_lin = MAX_LINEAR * alpha.cos();
    let v_ang = (MAX_LINEAR * 2.0 * alpha.sin() / distance).clamp(-MAX_ANGULAR, MAX_ANGULAR);
    Action::new(v_lin, v_ang)
}

/// Writes `x,y` rows, one per waypoint.
pub fn write_path_csv<W: Write>(mut out: W, points: &[Vec2]) -> io::Result<()> {
    writeln!(out, "x,y")?;
    for p in points {
        writeln!(out, "{},{}", p.x, p.y)?;
    }
    Ok(())
}
