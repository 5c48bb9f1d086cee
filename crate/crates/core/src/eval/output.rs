use super::metrics::Metrics;
use crate::error::Result;
use crate::world::{read_trace, write_trace, EpisodeTrace};
use std::fmt::Write as _;
use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

pub const CSV_HEADER: &str = "policy,si,crash_pct,near_miss_pct,ttg_s,comfort,exec_ms";

fn num(x: Option<f64>) -> String {
    match x {
        Some(v) if v.is_finite() => format!("{v:.4}"),
        _ => "nan".into(),
    }
}

/// One row per policy under [`CSV_HEADER`].
pub fn metrics_csv(rows: &[(String, &Metrics)]) -> String {
    let mut s = format!("{CSV_HEADER}\n");
    for (name, m) in rows {
        let _ = writeln!(
            s,
            "{name},{},{},{},{},{},{}",
            m.si,
            num(Some(m.crash_pct)),
            num(Some(m.near_miss_pct)),
            num(m.ttg),
            num(m.comfort),
            num(Some(m.exec_ms)),
        );
    }
    s
}

/// Per-family breakdown.
pub fn family_csv(rows: &[(String, &Metrics)]) -> String {
    let mut s = String::from("policy,family,episodes,crash_pct,near_miss_pct,ttg_s,comfort\n");
    for (name, m) in rows {
        for f in &m.families {
            let _ = writeln!(
                s,
                "{name},{},{},{},{},{},{}",
                f.family,
                f.episodes,
                num(Some(f.crash_pct)),
                num(Some(f.near_miss_pct)),
                num(f.mean_ttg),
                num(f.mean_comfort),
            );
        }
    }
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Vertical bar chart, one bar per label. Missing values draw no bar.
pub fn bar_chart_svg(title: &str, bars: &[(String, Option<f64>)]) -> String {
    let (w, h, left, bottom, top) = (120.0 * bars.len().max(1) as f64 + 80.0, 320.0, 60.0, 60.0, 40.0);
    let max = bars
        .iter()
        .filter_map(|(_, v)| *v)
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::max);
    let scale = if max > 0.0 { (h - top - bottom) / max } else { 0.0 };
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, w / 2.0, escape(title));
    let base = h - bottom;
    let _ = writeln!(s, r##"<line x1="{left}" y1="{base}" x2="{}" y2="{base}" stroke="#333"/>"##, w - 20.0);
    for (i, (label, v)) in bars.iter().enumerate() {
        let x = left + 20.0 + 120.0 * i as f64;
        if let Some(v) = v.filter(|v| v.is_finite()) {
            let bh = (v.max(0.0) * scale).max(0.0);
            let _ = writeln!(
                s,
                r##"<rect x="{x}" y="{:.2}" width="80" height="{bh:.2}" fill="#4a7fb5"/>"##,
                base - bh
            );
            let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="middle">{v:.3}</text>"#, x + 40.0, base - bh - 4.0);
        } else {
            let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">n/a</text>"#, x + 40.0, base - 4.0);
        }
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, x + 40.0, base + 18.0, escape(label));
    }
    s.push_str("</svg>\n");
    s
}

/// One chart per metric column, written as `<dir>/<metric>.svg`.
pub fn write_charts(dir: &Path, rows: &[(String, &Metrics)]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    type Get = fn(&Metrics) -> Option<f64>;
    let cols: [(&str, &str, Get); 6] = [
        ("si", "Safety index (families)", |m| Some(m.si as f64)),
        ("crash_pct", "Crash rate (%)", |m| Some(m.crash_pct)),
        ("near_miss_pct", "Near-miss rate (%)", |m| Some(m.near_miss_pct)),
        ("ttg_s", "Time to goal (s)", |m| m.ttg),
        ("comfort", "Comfort", |m| m.comfort),
        ("exec_ms", "Decision time (ms)", |m| Some(m.exec_ms)),
    ];
    let mut out = vec![];
    for (file, title, get) in cols {
        let bars: Vec<(String, Option<f64>)> = rows.iter().map(|(n, m)| (n.clone(), get(m))).collect();
        let path = dir.join(format!("{file}.svg"));
        fs::write(&path, bar_chart_svg(title, &bars))?;
        out.push(path);
    }
    Ok(out)
}

/// Writes `<dir>/<scenario_id>.jsonl` per trace.
pub fn write_traces(dir: &Path, traces: &[EpisodeTrace]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for t in traces {
        let f = fs::File::create(dir.join(format!("{}.jsonl", t.scenario_id)))?;
        write_trace(t, BufWriter::new(f))?;
    }
    Ok(())
}

/// Reads every `.jsonl` file in `dir`, sorted by file name.
pub fn load_traces(dir: &Path) -> Result<Vec<EpisodeTrace>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    files
        .iter()
        .map(|p| read_trace(BufReader::new(fs::File::open(p)?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(si: usize, ttg: Option<f64>) -> Metrics {
        Metrics {
            families: vec![],
            si,
            crash_pct: 1.5,
            near_miss_pct: 0.0,
            ttg,
            comfort: Some(1.25),
            exec_ms: 0.0,
            episodes: 4,
        }
    }

    #[test]
    fn csv_layout() {
        let a = m(3, Some(12.0));
        let b = m(0, None);
        let csv = metrics_csv(&[("hylear".into(), &a), ("random".into(), &b)]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines[1], "hylear,3,1.5000,0.0000,12.0000,1.2500,0.0000");
        assert_eq!(lines[2], "random,0,1.5000,0.0000,nan,1.2500,0.0000");
    }

    #[test]
    fn chart_has_one_bar_per_present_value() {
        let svg = bar_chart_svg("t <x>", &[("a".into(), Some(2.0)), ("b".into(), None), ("c".into(), Some(1.0))]);
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("fill=\"#4a7fb5\"").count(), 2);
        assert!(svg.contains("t &lt;x&gt;"));
        assert!(svg.contains("n/a"));
    }
}
