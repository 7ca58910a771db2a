//! Static SVG rendering of a point set, optionally with its Laguerre cells.
//!
//! The canvas is a fixed 1000×1000 viewBox; Ω's mathematical y-axis points
//! up, SVG's points down, so y is flipped on output. Dot area is
//! proportional to mass so equal-mass renders read as uniform ink.

use crate::CliError;
use sdot_core::{LaguerreDiagram, Point};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

const CANVAS: f64 = 1000.0;

fn sx(p: Point) -> f64 {
    p.x * CANVAS
}

fn sy(p: Point) -> f64 {
    (1.0 - p.y) * CANVAS
}

/// Renders dots (radius ∝ √mass) over optional filled cell polygons.
pub fn render_svg(
    path: &Path,
    positions: &[Point],
    masses: &[f64],
    cells: Option<&LaguerreDiagram>,
) -> Result<(), CliError> {
    let mut svg = String::with_capacity(128 * positions.len() + 512);
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {CANVAS} {CANVAS}">"#
    );
    let _ = writeln!(svg, r#"<rect width="{CANVAS}" height="{CANVAS}" fill="white"/>"#);

    if let Some(diagram) = cells {
        for cell in &diagram.cells {
            if cell.is_empty() {
                continue;
            }
            let mut points = String::new();
            for v in &cell.vertices {
                let _ = write!(points, "{:.3},{:.3} ", sx(*v), sy(*v));
            }
            let _ = writeln!(
                svg,
                r##"<polygon points="{}" fill="#eef3f8" stroke="#7a8ba0" stroke-width="0.8"/>"##,
                points.trim_end()
            );
        }
    }

    // Radius scale: a unit-mass point covers about a ninth of the canvas,
    // so n equal dots cover a constant total area regardless of n.
    for (p, &m) in positions.iter().zip(masses) {
        let r = CANVAS / 3.0 * (m.max(0.0) / std::f64::consts::PI).sqrt();
        let _ = writeln!(
            svg,
            r#"<circle cx="{:.3}" cy="{:.3}" r="{:.3}" fill="black"/>"#,
            sx(*p),
            sy(*p),
            r.max(0.5)
        );
    }
    svg.push_str("</svg>\n");
    fs::write(path, svg).map_err(|e| CliError::Io(format!("writing {}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use sdot_core::{voronoi_diagram, DiracCloud, Rect};

    #[test]
    fn svg_contains_one_circle_per_point_and_flips_y() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("render.svg");
        let positions = vec![Point::new(0.5, 0.9), Point::new(0.25, 0.1)];
        render_svg(&path, &positions, &[0.5, 0.5], None).unwrap();
        let body = fs::read_to_string(&path).unwrap();
        assert_eq!(body.matches("<circle").count(), 2);
        // Math y = 0.9 lands near the top of the canvas (SVG y = 100).
        assert!(body.contains(r#"cy="100.000""#), "y axis must be flipped:\n{body}");
        assert!(!body.contains("<polygon"));
    }

    #[test]
    fn cell_rendering_draws_the_partition() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cells.svg");
        let cloud = DiracCloud::uniform_masses(vec![
            Point::new(0.25, 0.5),
            Point::new(0.75, 0.5),
        ])
        .unwrap();
        let diagram = voronoi_diagram(&cloud, Rect::unit()).unwrap();
        render_svg(
            &path,
            cloud.positions(),
            cloud.masses(),
            Some(&diagram),
        )
        .unwrap();
        let body = fs::read_to_string(&path).unwrap();
        assert_eq!(body.matches("<polygon").count(), 2);
    }
}
