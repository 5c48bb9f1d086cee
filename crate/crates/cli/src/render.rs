//! SVG overlay of candidate paths on a cost map, with a risk heat layer.

use cfn_core::costmap::{CostMap, MapKind};
use cfn_core::geometry::{Pose, Vec2};
use cfn_core::risk::{risk_at, RiskParams, RiskScene};
use cfn_core::rulebook::Candidate;
use cfn_core::world::{SimParams, WorldState};
use std::fmt::Write;

const PX: f64 = 8.0;

fn color(kind: MapKind) -> &'static str {
    match kind {
        MapKind::Base => "#1f77b4",
        MapKind::Sidewalk => "#2ca02c",
        MapKind::Predictive => "#9467bd",
    }
}

pub struct Overlay<'a> {
    pub map: &'a CostMap,
    pub obs: &'a WorldState,
    pub candidates: &'a [Candidate],
    pub selected: Option<usize>,
    pub scene: &'a RiskScene,
    pub risk: &'a RiskParams,
    pub sim: &'a SimParams,
}

impl Overlay<'_> {
    fn xy(&self, p: Vec2) -> (f64, f64) {
        let m = self.map;
        let top = m.origin.y + m.height as f64 * m.resolution;
        ((p.x - m.origin.x) * PX, (top - p.y) * PX)
    }

    fn polygon(&self, pts: &[Vec2]) -> String {
        pts.iter()
            .map(|p| {
                let (x, y) = self.xy(*p);
                format!("{x:.1},{y:.1}")
            })
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn svg(&self) -> String {
        let m = self.map;
        let (w, h) = (m.width as f64 * m.resolution * PX, m.height as f64 * m.resolution * PX);
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="{w:.0}" height="{h:.0}" fill="white"/>"#);
        self.cost_layer(&mut s);
        self.risk_layer(&mut s);
        for r in &self.obs.layout.obstacles {
            let _ = writeln!(s, r##"<polygon points="{}" fill="#555"/>"##, self.polygon(&r.corners()));
        }
        for (k, c) in self.candidates.iter().enumerate() {
            let chosen = self.selected == Some(k);
            let pts = self.polygon(&c.path.poses.iter().map(Pose::position).collect::<Vec<_>>());
            let _ = writeln!(
                s,
                r#"<polyline points="{pts}" fill="none" stroke="{}" stroke-width="{}" stroke-opacity="{}"/>"#,
                color(c.path.source_map),
                if chosen { 3.5 } else { 1.5 },
                if chosen { 1.0 } else { 0.7 },
            );
        }
        let car = self.obs.car.footprint(self.sim);
        let _ = writeln!(s, r##"<polygon points="{}" fill="#d62728"/>"##, self.polygon(&car.corners()));
        for p in &self.obs.pedestrians {
            let (x, y) = self.xy(p.position);
            let _ = writeln!(
                s,
                r##"<circle cx="{x:.1}" cy="{y:.1}" r="{:.1}" fill="#ff7f0e" stroke="black"/>"##,
                self.sim.ped_radius * PX
            );
        }
        let (gx, gy) = self.xy(self.obs.goal.position());
        let _ = writeln!(s, r#"<circle cx="{gx:.1}" cy="{gy:.1}" r="5" fill="none" stroke="black" stroke-width="2"/>"#);
        for (k, kind) in MapKind::ALL.iter().enumerate() {
            let y = 16.0 + 16.0 * k as f64;
            let _ = writeln!(
                s,
                r#"<line x1="8" y1="{y}" x2="28" y2="{y}" stroke="{}" stroke-width="3"/><text x="34" y="{}">{}</text>"#,
                color(*kind),
                y + 4.0,
                kind.name()
            );
        }
        s.push_str("</svg>\n");
        s
    }

    /// Gray cost shading, run-length encoded per row at 16 levels.
    fn cost_layer(&self, s: &mut String) {
        let m = self.map;
        let max = m.cells.iter().copied().filter(|c| c.is_finite()).fold(m.cost_floor, f64::max);
        let level = |c: f64| -> u8 {
            if !c.is_finite() {
                16
            } else if max > m.cost_floor {
                (15.0 * (c - m.cost_floor) / (max - m.cost_floor)).round() as u8
            } else {
                0
            }
        };
        let cell = m.resolution * PX;
        for j in 0..m.height {
            let y = (m.height - 1 - j) as f64 * cell;
            let mut i = 0;
            while i < m.width {
                let l = level(m.cells[m.index(i, j)]);
                let mut e = i + 1;
                while e < m.width && level(m.cells[m.index(e, j)]) == l {
                    e += 1;
                }
                if l > 0 {
                    let shade = if l == 16 { 40 } else { 250 - 10 * l as u32 };
                    let _ = writeln!(
                        s,
                        r#"<rect x="{:.1}" y="{y:.1}" width="{:.1}" height="{cell:.1}" fill="rgb({shade},{shade},{shade})"/>"#,
                        i as f64 * cell,
                        (e - i) as f64 * cell
                    );
                }
                i = e;
            }
        }
    }

    /// Current-hazard risk on a 1 m grid for a car with the observed heading and speed.
    fn risk_layer(&self, s: &mut String) {
        let m = self.map;
        let hazards = self.scene.hazards_at(0.0);
        let (x0, y0) = (m.origin.x, m.origin.y);
        let (x1, y1) = (x0 + m.width as f64 * m.resolution, y0 + m.height as f64 * m.resolution);
        let mut y = y0;
        while y < y1 {
            let mut x = x0;
            while x < x1 {
                let pose = Pose::new(x + 0.5, y + 0.5, self.obs.car.pose.heading);
                let r = risk_at(&pose, self.obs.car.speed, &hazards, self.risk);
                if r > 0.02 {
                    let (px, py) = self.xy(Vec2::new(x, y + 1.0));
                    let _ = writeln!(
                        s,
                        r#"<rect x="{px:.1}" y="{py:.1}" width="{PX}" height="{PX}" fill="red" fill-opacity="{:.2}"/>"#,
                        0.6 * r
                    );
                }
                x += 1.0;
            }
            y += 1.0;
        }
    }
}
