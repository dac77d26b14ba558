//! Minimum-curvature global planning over a discretised track.
//!
//! The track is a sequence of centre-line points with unit normals and
//! widths on either side. A path is a vector of signed normal offsets `n_k`;
//! its cost is the sum of squared second differences of the path points,
//! a convex quadratic in `n` minimised under box constraints.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::{line_box_interval, segments_intersect, Vec2};
use crate::io::read_csv_rows;
use crate::pursuit::PlanPath;
use crate::sim::{ObstacleMap, Rect};

/// Offsets are kept this far inside every bound so the box constraints hold
/// strictly.
pub const BOUND_MARGIN: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct TrackModel {
    centers: Vec<Vec2>,
    normals: Vec<Vec2>,
    w_pos: Vec<f64>,
    w_neg: Vec<f64>,
    closed: bool,
}

impl TrackModel {
    /// Builds a track, computing normals from central-difference tangents
    /// (one-sided at the ends of an open track). `w_pos` lies on the left of
    /// the direction of travel.
    pub fn new(centers: Vec<Vec2>, w_pos: Vec<f64>, w_neg: Vec<f64>, closed: bool) -> Result<Self> {
        let k = centers.len();
        if k < 4 {
            return Err(Error::validation("a track needs at least 4 centre-line points"));
        }
        if w_pos.len() != k || w_neg.len() != k {
            return Err(Error::validation("one width pair is required per centre-line point"));
        }
        if centers.iter().any(|c| !c.is_finite()) {
            return Err(Error::validation("centre-line points must be finite"));
        }
        if w_pos.iter().chain(&w_neg).any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::validation("track widths must be positive"));
        }
        let pairs = if closed { k } else { k - 1 };
        for i in 0..pairs {
            if centers[i] == centers[(i + 1) % k] {
                return Err(Error::validation(format!("centre-line points {i} and {} coincide", (i + 1) % k)));
            }
        }
        let normals = (0..k)
            .map(|i| {
                let (prev, next) = if closed {
                    (centers[(i + k - 1) % k], centers[(i + 1) % k])
                } else {
                    (centers[i.saturating_sub(1)], centers[(i + 1).min(k - 1)])
                };
                (next - prev)
                    .normalized()
                    .map(Vec2::perp)
                    .ok_or_else(|| Error::validation(format!("no tangent at centre-line point {i}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let track = Self {
            centers,
            normals,
            w_pos,
            w_neg,
            closed,
        };
        for (name, boundary) in [("left", track.left_boundary()), ("right", track.right_boundary())] {
            if let Some(i) = first_fold(&boundary, &track.centers, closed) {
                return Err(Error::validation(format!(
                    "{name} boundary folds back on segment {i}; width exceeds the local radius"
                )));
            }
            if let Some((a, b)) = first_self_intersection(&boundary, closed) {
                return Err(Error::validation(format!(
                    "{name} boundary self-intersects between segments {a} and {b}"
                )));
            }
        }
        Ok(track)
    }

    pub fn parse_csv(text: &str, origin: &Path, closed: bool) -> Result<Self> {
        let rows = read_csv_rows(text, origin, &["x", "y", "w_left", "w_right"])?;
        let centers = rows.iter().map(|r| Vec2::new(r[0], r[1])).collect();
        let w_pos = rows.iter().map(|r| r[2]).collect();
        let w_neg = rows.iter().map(|r| r[3]).collect();
        Self::new(centers, w_pos, w_neg, closed)
    }

    pub fn load(path: &Path, closed: bool) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(&text, path, closed)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y,w_left,w_right\n");
        for i in 0..self.len() {
            let c = self.centers[i];
            out.push_str(&format!("{},{},{},{}\n", c.x, c.y, self.w_pos[i], self.w_neg[i]));
        }
        out
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn centers(&self) -> &[Vec2] {
        &self.centers
    }

    pub fn normals(&self) -> &[Vec2] {
        &self.normals
    }

    pub fn w_pos(&self) -> &[f64] {
        &self.w_pos
    }

    pub fn w_neg(&self) -> &[f64] {
        &self.w_neg
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn left_boundary(&self) -> Vec<Vec2> {
        self.offset_points_unchecked(&self.w_pos)
    }

    pub fn right_boundary(&self) -> Vec<Vec2> {
        let neg: Vec<f64> = self.w_neg.iter().map(|w| -w).collect();
        self.offset_points_unchecked(&neg)
    }

    fn offset_points_unchecked(&self, n: &[f64]) -> Vec<Vec2> {
        self.centers
            .iter()
            .zip(&self.normals)
            .zip(n)
            .map(|((&c, &nv), &o)| c + nv * o)
            .collect()
    }

    /// Path points `P_k = c_k + n_k N_k`.
    pub fn points(&self, n: &[f64]) -> Result<Vec<Vec2>> {
        self.check_len(n)?;
        Ok(self.offset_points_unchecked(n))
    }

    /// Same track with both widths reduced by `clearance` (walls treated as
    /// closer by that amount).
    pub fn with_clearance(&self, clearance: f64) -> Result<Self> {
        if !(clearance >= 0.0 && clearance.is_finite()) {
            return Err(Error::validation("clearance must be non-negative"));
        }
        let shrink = |w: &Vec<f64>| w.iter().map(|w| w - clearance).collect::<Vec<_>>();
        Self::new(self.centers.clone(), shrink(&self.w_pos), shrink(&self.w_neg), self.closed)
    }

    /// Boundary polygons usable as an [`ObstacleMap`] region.
    pub fn boundary_map(&self, obstacles: Vec<Rect>) -> Result<ObstacleMap> {
        if self.closed {
            ObstacleMap::new(vec![self.left_boundary(), self.right_boundary()], obstacles)
        } else {
            let mut poly = self.left_boundary();
            poly.extend(self.right_boundary().into_iter().rev());
            ObstacleMap::new(vec![poly], obstacles)
        }
    }

    /// Centre line as a followable path.
    pub fn centerline(&self) -> Result<PlanPath> {
        PlanPath::new(self.centers.clone(), self.closed)
    }

    fn check_len(&self, n: &[f64]) -> Result<()> {
        if n.len() != self.len() {
            return Err(Error::validation(format!(
                "offset vector has {} entries, track has {} points",
                n.len(),
                self.len()
            )));
        }
        Ok(())
    }

    /// Index triples `(k-1, k, k+1)` of every second-difference term.
    fn terms(&self) -> Vec<[usize; 3]> {
        let k = self.len();
        if self.closed {
            (0..k).map(|i| [(i + k - 1) % k, i, (i + 1) % k]).collect()
        } else {
            (1..k - 1).map(|i| [i - 1, i, i + 1]).collect()
        }
    }
}

/// A boundary segment running against its centre-line segment means the
/// width exceeds the local radius of curvature.
fn first_fold(boundary: &[Vec2], centers: &[Vec2], closed: bool) -> Option<usize> {
    let n = boundary.len();
    let segs = if closed { n } else { n - 1 };
    (0..segs).find(|&i| {
        let j = (i + 1) % n;
        (boundary[j] - boundary[i]).dot(centers[j] - centers[i]) <= 0.0
    })
}

fn first_self_intersection(poly: &[Vec2], closed: bool) -> Option<(usize, usize)> {
    let n = poly.len();
    let segs = if closed { n } else { n - 1 };
    for i in 0..segs {
        for j in i + 2..segs {
            if closed && i == 0 && j == segs - 1 {
                continue;
            }
            if segments_intersect(poly[i], poly[(i + 1) % n], poly[j], poly[(j + 1) % n]) {
                return Some((i, j));
            }
        }
    }
    None
}

/// Sum of squared second differences of the path points (periodic when the
/// track is closed; only interior terms when open).
pub fn curvature_cost(track: &TrackModel, n: &[f64]) -> Result<f64> {
    let p = track.points(n)?;
    Ok(track
        .terms()
        .iter()
        .map(|&[a, b, c]| {
            let d = p[a] - p[b] * 2.0 + p[c];
            d.dot(d)
        })
        .sum())
}

/// `cost(n) = 0.5 n^T H n + q^T n + c0`.
struct Quadratic {
    h: DMatrix<f64>,
    q: DVector<f64>,
}

fn quadratic_form(track: &TrackModel) -> Quadratic {
    let k = track.len();
    let mut h = DMatrix::zeros(k, k);
    let mut q = DVector::zeros(k);
    let (c, nv) = (track.centers(), track.normals());
    for idx in track.terms() {
        let e = c[idx[0]] - c[idx[1]] * 2.0 + c[idx[2]];
        let j = [nv[idx[0]], nv[idx[1]] * -2.0, nv[idx[2]]];
        for a in 0..3 {
            q[idx[a]] += 2.0 * e.dot(j[a]);
            for b in 0..3 {
                h[(idx[a], idx[b])] += 2.0 * j[a].dot(j[b]);
            }
        }
    }
    Quadratic { h, q }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OffsetConfig {
    /// Obstacles are grown by this much before the corridor is reduced.
    pub obstacle_clearance: f64,
    pub max_iterations: usize,
}

impl Default for OffsetConfig {
    fn default() -> Self {
        Self {
            // Half the default vehicle width.
            obstacle_clearance: 0.155,
            max_iterations: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OffsetSolution {
    pub offsets: Vec<f64>,
    pub cost: f64,
    /// `max_k |n_k - clamp(n_k - grad_k)|`.
    pub kkt_residual: f64,
    pub iterations: usize,
    /// Per-point `(lower, upper)` bounds the solution was constrained to.
    pub bounds: Vec<(f64, f64)>,
}

/// Projected-gradient KKT residual of `n` for the box problem.
pub fn kkt_residual(track: &TrackModel, n: &[f64], bounds: &[(f64, f64)]) -> Result<f64> {
    track.check_len(n)?;
    let quad = quadratic_form(track);
    let x = DVector::from_column_slice(n);
    let g = &quad.h * &x + &quad.q;
    Ok(residual(&x, &g, bounds))
}

fn residual(x: &DVector<f64>, g: &DVector<f64>, bounds: &[(f64, f64)]) -> f64 {
    (0..x.len())
        .map(|i| {
            let (lo, hi) = bounds[i];
            (x[i] - (x[i] - g[i]).clamp(lo, hi)).abs()
        })
        .fold(0.0, f64::max)
}

/// Minimises [`curvature_cost`] over offsets strictly inside the track
/// widths and, when a map is given, clear of its obstacles.
pub fn optimize_offsets(track: &TrackModel, obstacles: Option<&ObstacleMap>, cfg: &OffsetConfig) -> Result<OffsetSolution> {
    let rects: &[Rect] = obstacles.map_or(&[], |m| &m.obstacles);
    let bounds = admissible_bounds(track, rects, cfg.obstacle_clearance)?;
    let quad = quadratic_form(track);
    let (x, iterations) = solve_box_qp(&quad, &bounds, cfg.max_iterations)?;
    let g = &quad.h * &x + &quad.q;
    let kkt = residual(&x, &g, &bounds);
    let offsets: Vec<f64> = x.iter().copied().collect();
    Ok(OffsetSolution {
        cost: curvature_cost(track, &offsets)?,
        offsets,
        kkt_residual: kkt,
        iterations,
        bounds,
    })
}

/// Per-point bounds after obstacle reduction. Free intervals along each
/// normal are chained so consecutive chosen intervals overlap, and among
/// connected chains the one with the largest total width wins.
pub fn admissible_bounds(track: &TrackModel, obstacles: &[Rect], clearance: f64) -> Result<Vec<(f64, f64)>> {
    let k = track.len();
    let inflated: Vec<Rect> = obstacles.iter().map(|r| r.inflated(clearance)).collect();
    let mut candidates: Vec<Vec<(f64, f64)>> = Vec::with_capacity(k);
    for i in 0..k {
        if !track.closed && (i == 0 || i == k - 1) {
            // Open tracks keep their endpoints on the centre line.
            candidates.push(vec![(0.0, 0.0)]);
            continue;
        }
        let lo = -track.w_neg[i] + BOUND_MARGIN;
        let hi = track.w_pos[i] - BOUND_MARGIN;
        let mut blocked: Vec<(f64, f64)> = inflated
            .iter()
            .filter_map(|r| line_box_interval(track.centers[i], track.normals[i], r.min(), r.max()))
            .collect();
        blocked.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut free = Vec::new();
        let mut cursor = lo;
        for (b0, b1) in blocked {
            if b0 - BOUND_MARGIN > cursor {
                free.push((cursor, (b0 - BOUND_MARGIN).min(hi)));
            }
            cursor = cursor.max(b1 + BOUND_MARGIN);
            if cursor >= hi {
                break;
            }
        }
        if cursor < hi {
            free.push((cursor, hi));
        }
        free.retain(|(a, b)| b > a);
        if free.is_empty() {
            return Err(Error::Infeasible(format!("obstacles block the full track width at point {i}")));
        }
        candidates.push(free);
    }
    if !track.closed {
        for i in [0, k - 1] {
            let c = track.centers[i];
            if inflated.iter().any(|r| r.contains(c)) {
                return Err(Error::Infeasible(format!("an obstacle covers track endpoint {i}")));
            }
        }
    }
    select_corridor(&candidates, track.closed)
}

fn overlaps(a: (f64, f64), b: (f64, f64)) -> bool {
    a.0.max(b.0) <= a.1.min(b.1)
}

fn select_corridor(candidates: &[Vec<(f64, f64)>], closed: bool) -> Result<Vec<(f64, f64)>> {
    let k = candidates.len();
    // Start where the choice is least ambiguous; for open tracks that is the
    // fixed first point.
    let anchor = if closed {
        (0..k).min_by_key(|&i| candidates[i].len()).unwrap_or(0)
    } else {
        0
    };
    let order: Vec<usize> = (0..k).map(|j| (anchor + j) % k).collect();
    let width = |c: (f64, f64)| c.1 - c.0;

    let mut best: Option<(f64, Vec<usize>)> = None;
    for start in 0..candidates[anchor].len() {
        // score[j] for the current point, back[pos][j] = chosen index at pos-1.
        let mut score: Vec<Option<f64>> = candidates[anchor]
            .iter()
            .enumerate()
            .map(|(j, &c)| (j == start).then_some(width(c)))
            .collect();
        let mut back: Vec<Vec<usize>> = vec![vec![0; candidates[anchor].len()]];
        for pos in 1..k {
            let (prev, cur) = (&candidates[order[pos - 1]], &candidates[order[pos]]);
            let mut next = vec![None; cur.len()];
            let mut b = vec![0; cur.len()];
            for (j, &cj) in cur.iter().enumerate() {
                for (i, &ci) in prev.iter().enumerate() {
                    if let Some(s) = score[i] {
                        if overlaps(ci, cj) && next[j].is_none_or(|n: f64| s + width(cj) > n) {
                            next[j] = Some(s + width(cj));
                            b[j] = i;
                        }
                    }
                }
            }
            score = next;
            back.push(b);
        }
        let last = &candidates[order[k - 1]];
        let end = (0..last.len())
            .filter(|&j| score[j].is_some())
            .filter(|&j| !closed || overlaps(last[j], candidates[anchor][start]))
            .max_by(|&a, &b| score[a].unwrap().total_cmp(&score[b].unwrap()).then(b.cmp(&a)));
        if let Some(mut j) = end {
            let total = score[j].unwrap();
            if best.as_ref().is_none_or(|(s, _)| total > *s) {
                let mut picks = vec![0; k];
                for pos in (0..k).rev() {
                    picks[pos] = j;
                    j = back[pos][j];
                }
                picks[0] = start;
                best = Some((total, picks));
            }
        }
    }
    let (_, picks) = best.ok_or_else(|| Error::Infeasible("no connected obstacle-free corridor".into()))?;
    let mut bounds = vec![(0.0, 0.0); k];
    for (pos, &j) in picks.iter().enumerate() {
        bounds[order[pos]] = candidates[order[pos]][j];
    }
    Ok(bounds)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Status {
    Free,
    Lower,
    Upper,
    Fixed,
}

/// Primal active-set method for a convex quadratic under box constraints.
/// Each iteration solves the equality-constrained problem on the free
/// variables exactly (Cholesky) and either steps to it, stopping at the first
/// blocking bound, or releases the bound with the most negative multiplier.
fn solve_box_qp(quad: &Quadratic, bounds: &[(f64, f64)], max_iterations: usize) -> Result<(DVector<f64>, usize)> {
    let k = quad.q.len();
    let mut x = DVector::from_iterator(k, bounds.iter().map(|&(lo, hi)| 0.0f64.clamp(lo, hi)));
    let mut status: Vec<Status> = bounds
        .iter()
        .zip(x.iter())
        .map(|(&(lo, hi), &xi)| {
            if lo == hi {
                Status::Fixed
            } else if xi == lo {
                Status::Lower
            } else if xi == hi {
                Status::Upper
            } else {
                Status::Free
            }
        })
        .collect();
    // Multipliers below this are treated as zero; it sits well above the
    // round-off of the Cholesky solves and well below the KKT target.
    let tol = 1e-10 * (1.0 + quad.q.amax());
    let mut face_optimal = false;

    for iteration in 0..max_iterations {
        let free: Vec<usize> = (0..k).filter(|&i| status[i] == Status::Free).collect();
        let g = &quad.h * &x + &quad.q;
        if face_optimal || free.is_empty() {
            let release = (0..k)
                .filter_map(|i| match status[i] {
                    Status::Lower if g[i] < -tol => Some((i, -g[i])),
                    Status::Upper if g[i] > tol => Some((i, g[i])),
                    _ => None,
                })
                .max_by(|a, b| a.1.total_cmp(&b.1));
            match release {
                Some((i, _)) => {
                    status[i] = Status::Free;
                    face_optimal = false;
                    continue;
                }
                None => return Ok((x, iteration)),
            }
        }

        let h_ff = DMatrix::from_fn(free.len(), free.len(), |a, b| quad.h[(free[a], free[b])]);
        let rhs = DVector::from_iterator(free.len(), free.iter().map(|&i| -g[i]));
        let p = solve_spd(h_ff, &rhs)?;
        let mut alpha = 1.0;
        let mut blocking = None;
        for (a, &i) in free.iter().enumerate() {
            let (lo, hi) = bounds[i];
            let limit = if p[a] < 0.0 {
                (lo - x[i]) / p[a]
            } else if p[a] > 0.0 {
                (hi - x[i]) / p[a]
            } else {
                f64::INFINITY
            };
            if limit < alpha {
                alpha = limit.max(0.0);
                blocking = Some((i, p[a] < 0.0));
            }
        }
        for (a, &i) in free.iter().enumerate() {
            x[i] = (x[i] + alpha * p[a]).clamp(bounds[i].0, bounds[i].1);
        }
        match blocking {
            Some((i, lower)) => {
                x[i] = if lower { bounds[i].0 } else { bounds[i].1 };
                status[i] = if lower { Status::Lower } else { Status::Upper };
            }
            None => face_optimal = true,
        }
    }
    Err(Error::Diverged(format!(
        "offset optimisation did not converge in {max_iterations} iterations"
    )))
}

fn solve_spd(mut h: DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    if let Some(ch) = h.clone().cholesky() {
        return Ok(ch.solve(rhs));
    }
    // Singular free block: a tiny ridge picks the minimum-norm-like step.
    let ridge = 1e-12 * h.diagonal().amax().max(1.0);
    for i in 0..h.nrows() {
        h[(i, i)] += ridge;
    }
    h.cholesky()
        .map(|ch| ch.solve(rhs))
        .ok_or_else(|| Error::Diverged("offset Hessian is not positive semi-definite".into()))
}

/// Path through the offset points, resampled to uniform arclength with
/// `samples_per_segment` samples per track segment.
pub fn to_plan_path(track: &TrackModel, n: &[f64], samples_per_segment: usize) -> Result<PlanPath> {
    if samples_per_segment == 0 {
        return Err(Error::validation("samples_per_segment must be positive"));
    }
    let raw = PlanPath::new(track.points(n)?, track.closed)?;
    let count = raw.segment_count() * samples_per_segment;
    let spacing = raw.length() / count as f64;
    let last = if track.closed { count } else { count + 1 };
    let points = (0..last).map(|j| raw.point_at(j as f64 * spacing)).collect();
    PlanPath::new(points, track.closed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn straight(k: usize, w: f64) -> TrackModel {
        let c = (0..k).map(|i| Vec2::new(i as f64, 0.0)).collect();
        TrackModel::new(c, vec![w; k], vec![w; k], false).unwrap()
    }

    fn ring(k: usize, r: f64, w: f64) -> TrackModel {
        let c = (0..k)
            .map(|i| Vec2::from_angle(2.0 * PI * i as f64 / k as f64) * r)
            .collect();
        TrackModel::new(c, vec![w; k], vec![w; k], true).unwrap()
    }

    #[test]
    fn straight_normals_point_left() {
        let t = straight(6, 1.0);
        for n in t.normals() {
            assert!((n.x).abs() < 1e-15 && (n.y - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn ring_normals_are_radial() {
        let t = ring(40, 5.0, 1.0);
        for (c, n) in t.centers().iter().zip(t.normals()) {
            let inward = (*c * -1.0).normalized().unwrap();
            assert!((n.dot(inward) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_tracks_rejected() {
        let mut c: Vec<Vec2> = (0..5).map(|i| Vec2::new(i as f64, 0.0)).collect();
        c[2] = c[1];
        assert!(TrackModel::new(c, vec![1.0; 5], vec![1.0; 5], false).is_err());
        let c: Vec<Vec2> = (0..3).map(|i| Vec2::new(i as f64, 0.0)).collect();
        assert!(TrackModel::new(c, vec![1.0; 3], vec![1.0; 3], false).is_err());
        let c: Vec<Vec2> = (0..5).map(|i| Vec2::new(i as f64, 0.0)).collect();
        assert!(TrackModel::new(c, vec![1.0; 5], vec![0.0; 5], false).is_err());
    }

    #[test]
    fn too_wide_ring_self_intersects() {
        let c: Vec<Vec2> = (0..40)
            .map(|i| Vec2::from_angle(2.0 * PI * i as f64 / 40.0) * 1.0)
            .collect();
        let err = TrackModel::new(c, vec![1.5; 40], vec![0.5; 40], true).unwrap_err();
        assert!(err.to_string().contains("folds back"), "{err}");
        // A hairpin whose wide boundaries cross each other.
        let c = vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(4.0, 0.0),
            Vec2::new(4.5, 0.5),
            Vec2::new(4.0, 1.0),
            Vec2::new(0.0, 1.0),
        ];
        assert!(TrackModel::new(c, vec![0.6; 5], vec![0.2; 5], false).is_err());
    }

    #[test]
    fn single_bump_cost() {
        let t = straight(10, 1.0);
        assert_eq!(curvature_cost(&t, &[0.0; 10]).unwrap(), 0.0);
        let mut n = [0.0; 10];
        n[4] = 0.3;
        assert!((curvature_cost(&t, &n).unwrap() - 6.0 * 0.09).abs() < 1e-15);
    }

    #[test]
    fn quadratic_form_matches_direct_cost() {
        let t = ring(12, 4.0, 1.0);
        let quad = quadratic_form(&t);
        let n: Vec<f64> = (0..12).map(|i| 0.1 * (i as f64).sin()).collect();
        let x = DVector::from_column_slice(&n);
        let c0 = curvature_cost(&t, &[0.0; 12]).unwrap();
        let form = 0.5 * x.dot(&(&quad.h * &x)) + quad.q.dot(&x) + c0;
        assert!((form - curvature_cost(&t, &n).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn straight_track_optimum_is_centre() {
        let sol = optimize_offsets(&straight(30, 1.0), None, &OffsetConfig::default()).unwrap();
        assert!(sol.offsets.iter().all(|n| n.abs() < 1e-6));
        assert!(sol.kkt_residual < 1e-6);
    }

    #[test]
    fn blocked_width_is_infeasible() {
        let t = straight(10, 1.0);
        let map = ObstacleMap::new(vec![], vec![Rect::new(5.0, 0.0, 0.5, 3.0)]).unwrap();
        let err = optimize_offsets(&t, Some(&map), &OffsetConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Infeasible(_)));
    }

    #[test]
    fn resampled_centerline_is_uniform() {
        let t = ring(24, 5.0, 1.0);
        let p = to_plan_path(&t, &[0.0; 24], 4).unwrap();
        assert_eq!(p.points().len(), 96);
        assert!(p.is_closed());
        let gaps: Vec<f64> = (0..96).map(|i| p.points()[i].dist(p.points()[(i + 1) % 96])).collect();
        let mean = gaps.iter().sum::<f64>() / 96.0;
        assert!(gaps.iter().all(|g| (g - mean).abs() / mean < 0.01));
        for (a, b) in p.points().iter().step_by(4).zip(t.centers()) {
            assert!(a.dist(*b) < 1e-9);
        }
    }

    #[test]
    fn track_csv_round_trip() {
        let t = ring(16, 3.0, 0.8);
        let back = TrackModel::parse_csv(&t.to_csv(), Path::new("t.csv"), true).unwrap();
        assert_eq!(back.len(), 16);
        for (a, b) in back.centers().iter().zip(t.centers()) {
            assert_eq!(a, b);
        }
    }
}
