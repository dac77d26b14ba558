//! Pure-pursuit steering and friction-limited speed references.

use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Vec2};
use crate::sim::{SimParams, VehicleState};

/// Reference polyline handed down by the global planner.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanPath {
    points: Vec<Vec2>,
    /// Cumulative arclength at each waypoint.
    s: Vec<f64>,
    closed: bool,
    total: f64,
}

/// Nearest point on the path to a query position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub segment: usize,
    /// Fraction along `segment`.
    pub t: f64,
    pub point: Vec2,
    /// Arclength of `point`.
    pub s: f64,
    pub dist: f64,
    /// Positive when the query lies left of the path direction.
    pub lateral: f64,
}

impl PlanPath {
    /// For a closed path the closing segment is implicit; a trailing copy of
    /// the first waypoint is dropped.
    pub fn new(mut points: Vec<Vec2>, closed: bool) -> Result<Self> {
        if !points.iter().all(|p| p.is_finite()) {
            return Err(Error::validation("path waypoints must be finite"));
        }
        if closed && points.len() > 2 && points.first() == points.last() {
            points.pop();
        }
        if points.len() < 2 {
            return Err(Error::validation("path needs at least 2 waypoints"));
        }
        let mut s = Vec::with_capacity(points.len());
        s.push(0.0);
        for w in points.windows(2) {
            let d = w[0].dist(w[1]);
            if d <= 0.0 {
                return Err(Error::validation("consecutive waypoints must be distinct"));
            }
            s.push(s.last().unwrap() + d);
        }
        let mut total = *s.last().unwrap();
        if closed {
            let d = points.last().unwrap().dist(points[0]);
            if d <= 0.0 {
                return Err(Error::validation("closed path must not end on its first waypoint"));
            }
            total += d;
        }
        Ok(Self {
            points,
            s,
            closed,
            total,
        })
    }

    pub fn points(&self) -> &[Vec2] {
        &self.points
    }

    pub fn arclengths(&self) -> &[f64] {
        &self.s
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    /// Total length, including the closing segment of a loop.
    pub fn length(&self) -> f64 {
        self.total
    }

    pub fn segment_count(&self) -> usize {
        if self.closed {
            self.points.len()
        } else {
            self.points.len() - 1
        }
    }

    pub fn segment(&self, i: usize) -> (Vec2, Vec2) {
        let n = self.points.len();
        (self.points[i], self.points[(i + 1) % n])
    }

    fn project_onto(&self, i: usize, p: Vec2) -> Projection {
        let (a, b) = self.segment(i);
        let e = b - a;
        let len2 = e.dot(e);
        let t = ((p - a).dot(e) / len2).clamp(0.0, 1.0);
        let point = a + e * t;
        let dist = p.dist(point);
        let side = e.cross(p - a).signum();
        Projection {
            segment: i,
            t,
            point,
            s: self.s[i] + t * len2.sqrt(),
            dist,
            lateral: side * dist,
        }
    }

    /// Global nearest-point projection.
    pub fn project(&self, p: Vec2) -> Projection {
        (0..self.segment_count())
            .map(|i| self.project_onto(i, p))
            .min_by(|a, b| a.dist.total_cmp(&b.dist))
            .expect("path has at least one segment")
    }

    /// Nearest-point projection restricted to segments within `window` of
    /// arclength `s_hint`; used to track progress without jumping across a loop.
    pub fn project_near(&self, p: Vec2, s_hint: f64, window: f64) -> Projection {
        let gap = |i: usize| {
            let (a, b) = self.segment(i);
            let (s0, s1) = (self.s[i], self.s[i] + a.dist(b));
            if (s0..=s1).contains(&s_hint) {
                0.0
            } else if self.closed {
                (s0 - s_hint)
                    .rem_euclid(self.total)
                    .min((s_hint - s1).rem_euclid(self.total))
            } else {
                (s0 - s_hint).max(s_hint - s1)
            }
        };
        (0..self.segment_count())
            .filter(|&i| gap(i) <= window)
            .map(|i| self.project_onto(i, p))
            .min_by(|a, b| a.dist.total_cmp(&b.dist))
            .unwrap_or_else(|| self.project(p))
    }

    /// Point at arclength `s` (wrapped on a loop, clamped on a strip).
    pub fn point_at(&self, s: f64) -> Vec2 {
        let s = if self.closed {
            s.rem_euclid(self.total)
        } else {
            s.clamp(0.0, self.total)
        };
        let i = match self.s.binary_search_by(|v| v.total_cmp(&s)) {
            Ok(i) => i,
            Err(i) => i - 1,
        }
        .min(self.segment_count() - 1);
        let (a, b) = self.segment(i);
        let len = a.dist(b);
        a + (b - a) * ((s - self.s[i]) / len).clamp(0.0, 1.0)
    }

    /// Reads a `x,y` CSV (with header).
    pub fn load_csv(path: &Path, closed: bool) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(&text, path, closed)
    }

    pub fn parse_csv(text: &str, origin: &Path, closed: bool) -> Result<Self> {
        let rows = crate::io::read_csv_rows(text, origin, &["x", "y"])?;
        let points = rows.into_iter().map(|r| Vec2::new(r[0], r[1])).collect();
        Self::new(points, closed).map_err(|e| Error::parse(origin, 0, e.to_string()))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y\n");
        for p in &self.points {
            out.push_str(&format!("{},{}\n", p.x, p.y));
        }
        out
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PPConfig {
    /// Lookahead distance `l_d` (m).
    pub lookahead: f64,
    /// Arclength ahead of the vehicle scanned for the largest steering demand (m).
    pub horizon: f64,
}

impl Default for PPConfig {
    fn default() -> Self {
        Self {
            lookahead: 1.0,
            horizon: 2.0,
        }
    }
}

impl PPConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lookahead.is_finite() && self.lookahead > 0.0) {
            return Err(Error::validation("lookahead must be positive"));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::validation("horizon must be positive"));
        }
        Ok(())
    }
}

/// Velocity and steering references.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Command {
    pub v_ref: f64,
    pub delta_ref: f64,
}

/// Point on the path, at or beyond the vehicle's projection, at straight-line
/// distance `lookahead` from the vehicle.
pub fn find_lookahead(path: &PlanPath, state: &VehicleState, lookahead: f64) -> Result<Vec2> {
    if !(lookahead > 0.0) {
        return Err(Error::validation("lookahead must be positive"));
    }
    let p = state.position();
    let proj = path.project(p);
    Ok(lookahead_from(path, &proj, p, lookahead))
}

fn lookahead_from(path: &PlanPath, proj: &Projection, p: Vec2, lookahead: f64) -> Vec2 {
    if proj.dist >= lookahead {
        return proj.point;
    }
    let segs = path.segment_count();
    let mut t0 = proj.t;
    for k in 0..=segs {
        let i = proj.segment + k;
        if !path.is_closed() && i >= segs {
            break;
        }
        let (a, b) = path.segment(i % segs);
        // Exit point of the lookahead circle: larger root of |a + t e - p| = l_d.
        let e = b - a;
        let w = a - p;
        let qa = e.dot(e);
        let qb = 2.0 * w.dot(e);
        let qc = w.dot(w) - lookahead * lookahead;
        let disc = qb * qb - 4.0 * qa * qc;
        if disc >= 0.0 {
            let t = (-qb + disc.sqrt()) / (2.0 * qa);
            if t >= t0 && t <= 1.0 {
                return a + e * t;
            }
        }
        t0 = 0.0;
    }
    *path.points().last().expect("non-empty path")
}

/// Pure-pursuit steering toward `target`:
/// `delta = atan(2 L sin(alpha) / l_d)`, clipped to the steering limit.
pub fn pp_steering(state: &VehicleState, target: Vec2, length: f64, lookahead: f64, delta_max: f64) -> f64 {
    let d = target - state.position();
    if d.norm() == 0.0 {
        return 0.0;
    }
    let alpha = wrap_angle(d.y.atan2(d.x) - state.theta);
    (2.0 * length * alpha.sin() / lookahead)
        .atan()
        .clamp(-delta_max, delta_max)
}

/// Highest speed whose steady-state lateral acceleration at steering angle
/// `delta` stays within the friction budget: `V = sqrt(b g l / tan(delta))`,
/// clipped to `[0, v_max]`.
pub fn friction_velocity(delta: f64, params: &SimParams) -> f64 {
    let delta = delta.abs();
    if delta == 0.0 {
        return params.v_max;
    }
    (params.friction_accel() * params.wheelbase / delta.tan())
        .sqrt()
        .min(params.v_max)
}

/// Pure-pursuit references: steering toward the lookahead point and a speed
/// limited by the largest steering demand over the upcoming horizon.
pub fn plan(state: &VehicleState, path: &PlanPath, cfg: &PPConfig, params: &SimParams) -> Result<Command> {
    let p = state.position();
    let proj = path.project(p);
    let target = lookahead_from(path, &proj, p, cfg.lookahead);
    let delta_ref = pp_steering(state, target, params.wheelbase, cfg.lookahead, params.delta_max);

    let mut demand = 0.0f64;
    let n = path.points().len();
    let segs = path.segment_count();
    for k in 1..=n {
        let idx = proj.segment + k;
        if !path.is_closed() && idx >= n {
            break;
        }
        let i = idx % n;
        let ahead = if idx >= n {
            path.length() - proj.s + path.arclengths()[i]
        } else {
            path.arclengths()[i] - proj.s
        };
        if ahead > cfg.horizon {
            break;
        }
        let seg = if i < segs { i } else { segs - 1 };
        // Vertex tangent: mean of the incoming and outgoing segment directions.
        let (a, b) = path.segment(seg);
        let mut dir = (b - a).normalized().unwrap_or(Vec2::new(1.0, 0.0));
        if i < segs && (i > 0 || path.is_closed()) {
            let (c, d) = path.segment((i + segs - 1) % segs);
            dir = dir + (d - c).normalized().unwrap_or(dir);
        }
        let heading = dir.y.atan2(dir.x);
        let pose = VehicleState::at(path.points()[i].x, path.points()[i].y, heading);
        let on_path = Projection {
            segment: seg,
            t: if i < segs { 0.0 } else { 1.0 },
            point: path.points()[i],
            s: path.arclengths()[i],
            dist: 0.0,
            lateral: 0.0,
        };
        let t = lookahead_from(path, &on_path, on_path.point, cfg.lookahead);
        demand = demand.max(pp_steering(&pose, t, params.wheelbase, cfg.lookahead, params.delta_max).abs());
    }

    Ok(Command {
        v_ref: friction_velocity(demand, params),
        delta_ref,
    })
}
