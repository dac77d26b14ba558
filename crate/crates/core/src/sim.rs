//! Kinematic bicycle simulation, range-finder ray casting and collision tests.
//!
//! The vehicle reference point is the rear axle; the collision footprint is a
//! `length x width` rectangle centred on that point and aligned with the heading.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{ensure_finite, Error, Result};
use crate::geometry::{self, point_in_polygon, segments_intersect, wrap_angle, Vec2};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    /// Heading, wrapped to (-pi, pi].
    pub theta: f64,
    pub v: f64,
    pub delta: f64,
}

impl VehicleState {
    pub fn at(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta,
            v: 0.0,
            delta: 0.0,
        }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    pub fn is_finite(&self) -> bool {
        [self.x, self.y, self.theta, self.v, self.delta]
            .iter()
            .all(|v| v.is_finite())
    }

    /// Corners of the collision footprint, counter-clockwise.
    pub fn footprint(&self, params: &SimParams) -> [Vec2; 4] {
        let fwd = Vec2::from_angle(self.theta) * (params.length / 2.0);
        let side = Vec2::from_angle(self.theta).perp() * (params.width / 2.0);
        let c = self.position();
        [c + fwd - side, c + fwd + side, c - fwd + side, c - fwd - side]
    }
}

/// Vehicle, controller, integrator and sensor constants.
#[derive(Debug, Clone, PartialEq)]
pub struct SimParams {
    pub wheelbase: f64,
    pub length: f64,
    pub width: f64,
    pub mass: f64,
    /// Tyre-road friction coefficient.
    pub friction: f64,
    pub gravity: f64,
    pub delta_max: f64,
    pub v_max: f64,
    pub max_steer_rate: f64,
    pub max_accel: f64,
    /// Proportional gains of the low-level controller (1/s).
    pub steer_gain: f64,
    pub speed_gain: f64,
    pub dt: f64,
    pub n_beams: usize,
    pub beam_fov: f64,
    pub max_range: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            wheelbase: 0.33,
            length: 0.5,
            width: 0.31,
            mass: 3.74,
            friction: 0.8,
            gravity: 9.81,
            delta_max: 0.4,
            v_max: 7.0,
            max_steer_rate: 3.2,
            max_accel: 7.5,
            steer_gain: 20.0,
            speed_gain: 10.0,
            dt: 0.01,
            n_beams: 10,
            beam_fov: std::f64::consts::PI,
            max_range: 10.0,
        }
    }
}

impl SimParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("wheelbase", self.wheelbase),
            ("length", self.length),
            ("width", self.width),
            ("mass", self.mass),
            ("friction", self.friction),
            ("gravity", self.gravity),
            ("delta_max", self.delta_max),
            ("v_max", self.v_max),
            ("max_steer_rate", self.max_steer_rate),
            ("max_accel", self.max_accel),
            ("steer_gain", self.steer_gain),
            ("speed_gain", self.speed_gain),
            ("dt", self.dt),
            ("max_range", self.max_range),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::validation(format!("{name} must be positive, got {value}")));
            }
        }
        if self.delta_max >= std::f64::consts::FRAC_PI_2 {
            return Err(Error::validation("delta_max must be below pi/2"));
        }
        if self.n_beams == 0 {
            return Err(Error::validation("n_beams must be at least 1"));
        }
        if !(self.beam_fov.is_finite() && self.beam_fov >= 0.0) {
            return Err(Error::validation("beam_fov must be non-negative"));
        }
        Ok(())
    }

    /// Beam offsets from the heading, evenly spaced across the field of view
    /// including both edges.
    pub fn beam_angles(&self) -> Vec<f64> {
        if self.n_beams == 1 {
            return vec![0.0];
        }
        let step = self.beam_fov / (self.n_beams - 1) as f64;
        (0..self.n_beams)
            .map(|i| -self.beam_fov / 2.0 + step * i as f64)
            .collect()
    }

    /// Lateral acceleration budget `b * g`.
    pub fn friction_accel(&self) -> f64 {
        self.friction * self.gravity
    }
}

/// Advances the vehicle by one `dt`: the proportional controller first moves
/// steering and speed toward the references (rate and acceleration limited),
/// then the kinematic bicycle model is integrated with explicit Euler.
pub fn step(state: &VehicleState, v_ref: f64, delta_ref: f64, params: &SimParams) -> Result<VehicleState> {
    if !state.is_finite() {
        return Err(Error::validation("vehicle state must be finite"));
    }
    ensure_finite("references", &[v_ref, delta_ref])?;

    let dt = params.dt;
    let delta_ref = delta_ref.clamp(-params.delta_max, params.delta_max);
    let v_ref = v_ref.clamp(0.0, params.v_max);

    let steer_rate = (params.steer_gain * (delta_ref - state.delta))
        .clamp(-params.max_steer_rate, params.max_steer_rate);
    let delta = (state.delta + steer_rate * dt).clamp(-params.delta_max, params.delta_max);

    let accel = (params.speed_gain * (v_ref - state.v)).clamp(-params.max_accel, params.max_accel);
    let v = (state.v + accel * dt).clamp(0.0, params.v_max);

    let (sin, cos) = state.theta.sin_cos();
    Ok(VehicleState {
        x: state.x + v * cos * dt,
        y: state.y + v * sin * dt,
        theta: wrap_angle(state.theta + v * delta.tan() / params.wheelbase * dt),
        v,
        delta,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scan {
    pub ranges: Vec<f64>,
    pub angles: Vec<f64>,
}

/// Axis-aligned rectangular obstacle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl Rect {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self { cx, cy, w, h }
    }

    pub fn min(&self) -> Vec2 {
        Vec2::new(self.cx - self.w / 2.0, self.cy - self.h / 2.0)
    }

    pub fn max(&self) -> Vec2 {
        Vec2::new(self.cx + self.w / 2.0, self.cy + self.h / 2.0)
    }

    pub fn corners(&self) -> [Vec2; 4] {
        let (lo, hi) = (self.min(), self.max());
        [lo, Vec2::new(hi.x, lo.y), hi, Vec2::new(lo.x, hi.y)]
    }

    pub fn inflated(&self, margin: f64) -> Rect {
        Rect::new(self.cx, self.cy, self.w + 2.0 * margin, self.h + 2.0 * margin)
    }

    pub fn contains(&self, p: Vec2) -> bool {
        let (lo, hi) = (self.min(), self.max());
        p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y
    }
}

/// Drivable region (even-odd union of boundary polygons) plus rectangular
/// obstacles. An empty boundary list means unbounded open space.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ObstacleMap {
    pub boundaries: Vec<Vec<Vec2>>,
    pub obstacles: Vec<Rect>,
}

impl ObstacleMap {
    pub fn new(boundaries: Vec<Vec<Vec2>>, obstacles: Vec<Rect>) -> Result<Self> {
        let map = Self {
            boundaries,
            obstacles,
        };
        map.validate()?;
        Ok(map)
    }

    pub fn validate(&self) -> Result<()> {
        for b in &self.boundaries {
            if b.len() < 3 {
                return Err(Error::validation("boundary polygon needs at least 3 vertices"));
            }
            if !b.iter().all(|p| p.is_finite()) {
                return Err(Error::validation("boundary vertices must be finite"));
            }
        }
        for o in &self.obstacles {
            ensure_finite("obstacle", &[o.cx, o.cy, o.w, o.h])?;
            if o.w <= 0.0 || o.h <= 0.0 {
                return Err(Error::validation("obstacle dimensions must be positive"));
            }
        }
        if let Some((lo, hi)) = self.bounding_box() {
            for o in &self.obstacles {
                let (a, b) = (o.min(), o.max());
                if a.x < lo.x || a.y < lo.y || b.x > hi.x || b.y > hi.y {
                    return Err(Error::validation(format!(
                        "obstacle at ({}, {}) lies outside the drivable region",
                        o.cx, o.cy
                    )));
                }
            }
        }
        Ok(())
    }

    /// Bounding box of the boundary polygons, if any.
    pub fn bounding_box(&self) -> Option<(Vec2, Vec2)> {
        let mut pts = self.boundaries.iter().flatten();
        let first = *pts.next()?;
        Some(pts.fold((first, first), |(lo, hi), p| {
            (
                Vec2::new(lo.x.min(p.x), lo.y.min(p.y)),
                Vec2::new(hi.x.max(p.x), hi.y.max(p.y)),
            )
        }))
    }

    pub fn in_region(&self, p: Vec2) -> bool {
        if self.boundaries.is_empty() {
            return true;
        }
        self.boundaries
            .iter()
            .filter(|b| point_in_polygon(p, b))
            .count()
            % 2
            == 1
    }

    /// Every wall and obstacle edge as a segment.
    pub fn segments(&self) -> Vec<(Vec2, Vec2)> {
        let mut segs = Vec::new();
        for b in &self.boundaries {
            for i in 0..b.len() {
                segs.push((b[i], b[(i + 1) % b.len()]));
            }
        }
        for o in &self.obstacles {
            let c = o.corners();
            for i in 0..4 {
                segs.push((c[i], c[(i + 1) % 4]));
            }
        }
        segs
    }

    /// Parses the line-oriented map format:
    ///
    /// ```text
    /// # comment
    /// boundary x,y x,y x,y ...
    /// obstacle cx cy w h
    /// ```
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut boundaries = Vec::new();
        let mut obstacles = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx as u64 + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let bad = |msg: String| Error::parse(origin, line_no, msg);
            match fields.next() {
                Some("boundary") => {
                    let mut poly = Vec::new();
                    for v in fields {
                        let (xs, ys) = v
                            .split_once(',')
                            .ok_or_else(|| bad(format!("expected x,y vertex, got `{v}`")))?;
                        let x = xs.parse::<f64>().map_err(|e| bad(format!("`{xs}`: {e}")))?;
                        let y = ys.parse::<f64>().map_err(|e| bad(format!("`{ys}`: {e}")))?;
                        poly.push(Vec2::new(x, y));
                    }
                    if poly.len() < 3 {
                        return Err(bad("boundary needs at least 3 vertices".into()));
                    }
                    boundaries.push(poly);
                }
                Some("obstacle") => {
                    let vals = fields
                        .map(|f| f.parse::<f64>().map_err(|e| bad(format!("`{f}`: {e}"))))
                        .collect::<Result<Vec<_>>>()?;
                    if vals.len() != 4 {
                        return Err(bad(format!("obstacle needs cx cy w h, got {} values", vals.len())));
                    }
                    obstacles.push(Rect::new(vals[0], vals[1], vals[2], vals[3]));
                }
                Some(other) => return Err(bad(format!("unknown record `{other}`"))),
                None => unreachable!(),
            }
        }
        Self::new(boundaries, obstacles).map_err(|e| Error::parse(origin, 0, e.to_string()))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# drivable region boundaries and axis-aligned obstacles\n");
        for b in &self.boundaries {
            out.push_str("boundary");
            for p in b {
                let _ = write!(out, " {},{}", p.x, p.y);
            }
            out.push('\n');
        }
        for o in &self.obstacles {
            let _ = writeln!(out, "obstacle {} {} {} {}", o.cx, o.cy, o.w, o.h);
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Range readings from the vehicle reference point; beams that hit nothing
/// within range read `max_range`.
pub fn cast_scan(state: &VehicleState, map: &ObstacleMap, params: &SimParams) -> Scan {
    let angles = params.beam_angles();
    let segs = map.segments();
    let origin = state.position();
    let ranges = angles
        .iter()
        .map(|a| {
            let dir = Vec2::from_angle(state.theta + a);
            segs.iter()
                .filter_map(|&(p, q)| geometry::ray_segment(origin, dir, p, q))
                .fold(params.max_range, f64::min)
        })
        .collect();
    Scan { ranges, angles }
}

/// True when the footprint touches any obstacle or leaves the drivable region.
pub fn check_collision(state: &VehicleState, map: &ObstacleMap, params: &SimParams) -> bool {
    let fp = state.footprint(params);
    if map
        .obstacles
        .iter()
        .any(|o| geometry::convex_overlap(&fp, &o.corners()))
    {
        return true;
    }
    if map.boundaries.is_empty() {
        return false;
    }
    if !map.in_region(state.position()) {
        return true;
    }
    for b in &map.boundaries {
        for i in 0..b.len() {
            let (p, q) = (b[i], b[(i + 1) % b.len()]);
            for j in 0..4 {
                if segments_intersect(fp[j], fp[(j + 1) % 4], p, q) {
                    return true;
                }
            }
            // A boundary loop small enough to sit entirely under the footprint.
            if point_in_polygon(p, &fp) {
                return true;
            }
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn open_params() -> SimParams {
        SimParams::default()
    }

    #[test]
    fn straight_line_advance() {
        let p = open_params();
        let s = VehicleState { x: 1.0, y: 2.0, theta: 0.3, v: 2.0, delta: 0.0 };
        let n = step(&s, 2.0, 0.0, &p).unwrap();
        assert!((n.position().dist(s.position()) - 2.0 * p.dt).abs() < 1e-15);
        assert_eq!(n.theta, 0.3);
        assert_eq!(n.v, 2.0);
    }

    #[test]
    fn steering_rate_saturates() {
        let p = open_params();
        let s = VehicleState { v: 1.0, ..Default::default() };
        let n = step(&s, 1.0, 0.4, &p).unwrap();
        assert!((n.delta - p.max_steer_rate * p.dt).abs() < 1e-15);
        let m = step(&n, 1.0, -0.4, &p).unwrap();
        assert!(m.delta.abs() < 1e-15);
    }

    #[test]
    fn state_limits_hold() {
        let p = open_params();
        let mut s = VehicleState::default();
        for _ in 0..2000 {
            s = step(&s, p.v_max, p.delta_max, &p).unwrap();
            assert!(s.delta.abs() <= p.delta_max && (0.0..=p.v_max).contains(&s.v));
            assert!(s.theta > -PI && s.theta <= PI);
        }
        assert!(p.v_max - s.v < 1e-9);
    }

    #[test]
    fn rejects_non_finite() {
        let p = open_params();
        assert!(step(&VehicleState::default(), f64::NAN, 0.0, &p).is_err());
        let bad = VehicleState { x: f64::INFINITY, ..Default::default() };
        assert!(step(&bad, 1.0, 0.0, &p).is_err());
    }

    #[test]
    fn empty_map_reads_max_range() {
        let p = open_params();
        let scan = cast_scan(&VehicleState::default(), &ObstacleMap::default(), &p);
        assert_eq!(scan.ranges.len(), p.n_beams);
        assert!(scan.ranges.iter().all(|&r| r == p.max_range));
    }

    #[test]
    fn centre_beam_hits_face() {
        let p = SimParams { n_beams: 9, ..open_params() };
        let map = ObstacleMap::new(vec![], vec![Rect::new(2.5, 0.0, 1.0, 1.0)]).unwrap();
        let scan = cast_scan(&VehicleState::default(), &map, &p);
        assert_eq!(scan.angles[4], 0.0);
        assert!((scan.ranges[4] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn parallel_beam_misses() {
        let p = SimParams { n_beams: 1, ..open_params() };
        let map = ObstacleMap::new(vec![], vec![Rect::new(3.0, 1.0, 4.0, 1.0)]).unwrap();
        let scan = cast_scan(&VehicleState::default(), &map, &p);
        assert_eq!(scan.ranges, vec![p.max_range]);
    }

    #[test]
    fn collision_cases() {
        let p = open_params();
        let far = ObstacleMap::new(vec![], vec![Rect::new(5.5, 0.0, 1.0, 1.0)]).unwrap();
        assert!(!check_collision(&VehicleState::default(), &far, &p));
        let on = ObstacleMap::new(vec![], vec![Rect::new(0.0, 0.0, 1.0, 1.0)]).unwrap();
        assert!(check_collision(&VehicleState::default(), &on, &p));
    }

    #[test]
    fn leaving_region_is_a_collision() {
        let p = open_params();
        let region = vec![
            Vec2::new(-5.0, -1.0),
            Vec2::new(5.0, -1.0),
            Vec2::new(5.0, 1.0),
            Vec2::new(-5.0, 1.0),
        ];
        let map = ObstacleMap::new(vec![region], vec![]).unwrap();
        assert!(!check_collision(&VehicleState::default(), &map, &p));
        assert!(check_collision(&VehicleState::at(0.0, 0.9, 0.0), &map, &p));
        assert!(check_collision(&VehicleState::at(0.0, 3.0, 0.0), &map, &p));
    }

    #[test]
    fn map_text_round_trip() {
        let map = ObstacleMap::new(
            vec![vec![Vec2::new(-1.0, -4.0), Vec2::new(30.0, -4.0), Vec2::new(30.0, 4.0), Vec2::new(-1.0, 4.0)]],
            vec![Rect::new(3.1, 0.1 + 0.2, 1.0, 1.0)],
        )
        .unwrap();
        let back = ObstacleMap::parse(&map.to_text(), Path::new("mem")).unwrap();
        assert_eq!(back, map);
    }

    #[test]
    fn parse_reports_line() {
        let err = ObstacleMap::parse("# hi\nobstacle 1 2 3\n", Path::new("m.txt")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = ObstacleMap::parse("wall 1 2\n", Path::new("m.txt")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn obstacle_outside_region_rejected() {
        let region = vec![Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(1.0, 1.0)];
        assert!(ObstacleMap::new(vec![region], vec![Rect::new(5.0, 5.0, 1.0, 1.0)]).is_err());
    }
}
