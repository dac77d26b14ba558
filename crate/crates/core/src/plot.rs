//! Self-contained SVG figures: trajectory over the map, and the policy's
//! action over time. Coordinates are written with fixed precision so equal
//! inputs give byte-identical files.

use std::fmt::Write as _;

use crate::geometry::Vec2;
use crate::sim::ObstacleMap;

const PAD: f64 = 1.0;

/// Axis-aligned extent `(min, max)` of everything drawn in a trajectory plot.
pub fn plot_extent(map: &ObstacleMap, reference: &[Vec2], trajectory: &[Vec2]) -> (Vec2, Vec2) {
    let mut pts: Vec<Vec2> = map.boundaries.iter().flatten().copied().collect();
    for o in &map.obstacles {
        pts.push(o.min());
        pts.push(o.max());
    }
    pts.extend_from_slice(reference);
    pts.extend_from_slice(trajectory);
    if pts.is_empty() {
        return (Vec2::new(-PAD, -PAD), Vec2::new(PAD, PAD));
    }
    let (lo, hi) = pts.iter().fold((pts[0], pts[0]), |(lo, hi), p| {
        (Vec2::new(lo.x.min(p.x), lo.y.min(p.y)), Vec2::new(hi.x.max(p.x), hi.y.max(p.y)))
    });
    (lo - Vec2::new(PAD, PAD), hi + Vec2::new(PAD, PAD))
}

fn points_attr(pts: &[Vec2]) -> String {
    let mut s = String::new();
    for (i, p) in pts.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{:.4},{:.4}", p.x, -p.y);
    }
    s
}

/// Map walls and obstacles, the reference path dashed green and the driven
/// trajectory solid red. World y points up.
pub fn trajectory_svg(map: &ObstacleMap, reference: &[Vec2], trajectory: &[Vec2]) -> String {
    let (lo, hi) = plot_extent(map, reference, trajectory);
    let (w, h) = (hi.x - lo.x, hi.y - lo.y);
    let scale = 800.0 / w.max(h);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{:.0}" height="{:.0}" viewBox="{:.4} {:.4} {:.4} {:.4}">"#,
        w * scale,
        h * scale,
        lo.x,
        -hi.y,
        w,
        h
    );
    let _ = writeln!(
        s,
        r#"<rect x="{:.4}" y="{:.4}" width="{:.4}" height="{:.4}" fill="white"/>"#,
        lo.x, -hi.y, w, h
    );
    for b in &map.boundaries {
        let _ = writeln!(
            s,
            r#"<polygon points="{}" fill="none" stroke="black" stroke-width="0.05"/>"#,
            points_attr(b)
        );
    }
    for o in &map.obstacles {
        let _ = writeln!(
            s,
            r##"<rect x="{:.4}" y="{:.4}" width="{:.4}" height="{:.4}" fill="#3060c0"/>"##,
            o.min().x,
            -o.max().y,
            o.w,
            o.h
        );
    }
    if reference.len() > 1 {
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="green" stroke-width="0.06" stroke-dasharray="0.3,0.2"/>"#,
            points_attr(reference)
        );
    }
    if trajectory.len() > 1 {
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="red" stroke-width="0.06"/>"#,
            points_attr(trajectory)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Network output against time, with the zero line and the `[-1, 1]` limits.
pub fn action_svg(t: &[f64], action: &[f64]) -> String {
    let (width, height, margin) = (800.0, 300.0, 40.0);
    let t_max = t.iter().copied().fold(0.0f64, f64::max).max(1e-9);
    let x = |ti: f64| margin + ti / t_max * (width - 2.0 * margin);
    let y = |a: f64| height / 2.0 - a * (height / 2.0 - margin);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{width:.0}" height="{height:.0}" fill="white"/>"#);
    for (a, dash) in [(0.0, ""), (1.0, r#" stroke-dasharray="4,4""#), (-1.0, r#" stroke-dasharray="4,4""#)] {
        let _ = writeln!(
            s,
            r#"<line x1="{:.4}" y1="{:.4}" x2="{:.4}" y2="{:.4}" stroke="gray" stroke-width="1"{dash}/>"#,
            margin,
            y(a),
            width - margin,
            y(a)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="4" y="{:.4}" font-size="12">+1</text><text x="4" y="{:.4}" font-size="12">-1</text><text x="{:.4}" y="{:.4}" font-size="12">t = {:.2} s</text>"#,
        y(1.0) + 4.0,
        y(-1.0) + 4.0,
        width - margin - 60.0,
        height - 8.0,
        t_max
    );
    if t.len() > 1 {
        let mut pts = String::new();
        for (i, (&ti, &a)) in t.iter().zip(action).enumerate() {
            if i > 0 {
                pts.push(' ');
            }
            let _ = write!(pts, "{:.4},{:.4}", x(ti), y(a.clamp(-1.0, 1.0)));
        }
        let _ = writeln!(s, r#"<polyline points="{pts}" fill="none" stroke="red" stroke-width="1.5"/>"#);
    }
    s.push_str("</svg>\n");
    s
}
