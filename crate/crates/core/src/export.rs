//! Writing results to disk: CSV time series, JSON summary, SVG plots.
//!
//! Files are named `<scenario>.<kind>.<ext>`:
//! `timeseries.csv`, `summary.json`, `errors.svg` and one
//! `snapshot_t<T>.svg` per requested time.
//!
//! CSV column order, followers numbered from 1 and the leader as 0:
//!
//! 1. `t`
//! 2. `x{j}_{k}` for agents `j = 0..=N`, coordinates `k = 1..=n`
//!    (hand states for vehicle runs)
//! 3. `v{i}_{k}` for followers
//! 4. `w{i}_{k}` then `w0_{k}`, only in the observer regimes
//! 5. `c{i}_{j}` for each edge in the edge-weight regimes, `c{i}` otherwise
//! 6. `err{i}`, the follower formation error
//! 7. `rx{i}`, `ry{i}`, `theta{i}`, `speed{i}`, `turn{i}` with a vehicle layer

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::protocols::ControlLayout;
use crate::sim::{SimResult, Summary};

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExportError + '_ {
    move |source| ExportError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExportOptions {
    pub csv: bool,
    pub json: bool,
    pub plots: bool,
    pub snapshots: Vec<f64>,
}

impl Default for ExportOptions {
    fn default() -> Self {
        Self { csv: true, json: true, plots: true, snapshots: Vec::new() }
    }
}

pub fn artifact_path(dir: &Path, name: &str, kind: &str, ext: &str) -> PathBuf {
    dir.join(format!("{name}.{kind}.{ext}"))
}

/// Writes the requested artifacts into `dir` (created if needed) and
/// returns their paths in writing order.
pub fn export(r: &SimResult, opts: &ExportOptions, dir: &Path) -> Result<Vec<PathBuf>, ExportError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::new();
    if opts.csv {
        let p = artifact_path(dir, &r.name, "timeseries", "csv");
        write_csv(r, &p)?;
        written.push(p);
    }
    if opts.json {
        let p = artifact_path(dir, &r.name, "summary", "json");
        write_summary(&r.summary, &p)?;
        written.push(p);
    }
    if opts.plots {
        let p = artifact_path(dir, &r.name, "errors", "svg");
        fs::write(&p, error_plot_svg(r)).map_err(io_err(&p))?;
        written.push(p);
    }
    for &t in &opts.snapshots {
        let p = artifact_path(dir, &r.name, &format!("snapshot_t{t}"), "svg");
        fs::write(&p, snapshot_svg(r, t)).map_err(io_err(&p))?;
        written.push(p);
    }
    Ok(written)
}

/// Column names in the documented order.
pub fn csv_header(r: &SimResult) -> Vec<String> {
    let (nf, n) = (r.n_followers, r.n);
    let mut h = vec!["t".to_string()];
    for j in 0..=nf {
        h.extend((1..=n).map(|k| format!("x{j}_{k}")));
    }
    for i in 1..=nf {
        h.extend((1..=n).map(|k| format!("v{i}_{k}")));
    }
    if r.regime.uses_local_observers() {
        for i in 1..=nf {
            h.extend((1..=n).map(|k| format!("w{i}_{k}")));
        }
        h.extend((1..=n).map(|k| format!("w0_{k}")));
    }
    if r.regime.uses_edge_weights() {
        h.extend(r.edges.iter().map(|(i, j)| format!("c{i}_{j}")));
    } else {
        h.extend((1..=nf).map(|i| format!("c{i}")));
    }
    h.extend((1..=nf).map(|i| format!("err{i}")));
    if !r.poses.is_empty() {
        for i in 1..=nf {
            h.extend(["rx", "ry", "theta", "speed", "turn"].iter().map(|f| format!("{f}{i}")));
        }
    }
    h
}

fn csv_row(r: &SimResult, k: usize) -> Vec<String> {
    let lay = ControlLayout { nf: r.n_followers, n: r.n };
    let ctrl = &r.controls[k];
    let mut vals = vec![r.times[k]];
    vals.extend(&r.states[k]);
    vals.extend(&ctrl[lay.v()]);
    if r.regime.uses_local_observers() {
        vals.extend(&ctrl[lay.w()]);
        vals.extend(&ctrl[lay.w0()]);
    }
    if r.regime.uses_edge_weights() {
        let ce = &ctrl[lay.c_edge()];
        vals.extend(r.edges.iter().map(|&(i, j)| ce[(i - 1) * r.n_followers + (j - 1)]));
    } else {
        vals.extend(&ctrl[lay.c_node()]);
    }
    vals.extend(&r.metrics[k].formation_error);
    if let Some(p) = r.poses.get(k) {
        vals.extend(p);
    }
    vals.iter().map(|v| v.to_string()).collect()
}

pub fn write_csv(r: &SimResult, path: &Path) -> Result<(), ExportError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    w.write_record(csv_header(r))?;
    for k in 0..r.times.len() {
        w.write_record(csv_row(r, k))?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

pub fn write_summary(s: &Summary, path: &Path) -> Result<(), ExportError> {
    let text = serde_json::to_string_pretty(s)?;
    fs::write(path, text + "\n").map_err(io_err(path))
}

pub fn read_summary(path: &Path) -> Result<Summary, ExportError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Ok(serde_json::from_str(&text)?)
}

const W: f64 = 720.0;
const H: f64 = 420.0;
const MARGIN: f64 = 56.0;
const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];
/// Errors below this are drawn on the floor of the log axis.
const LOG_FLOOR: f64 = 1e-8;

fn svg_open(out: &mut String) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
}

/// Follower formation errors against time on a log axis, switch times dashed.
pub fn error_plot_svg(r: &SimResult) -> String {
    let mut out = String::new();
    svg_open(&mut out);
    let t_end = r.times.last().copied().unwrap_or(r.t_final).max(1e-12);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for m in &r.metrics {
        for &e in &m.formation_error {
            let l = e.max(LOG_FLOOR).log10();
            lo = lo.min(l);
            hi = hi.max(l);
        }
    }
    if !lo.is_finite() {
        (lo, hi) = (-1.0, 0.0);
    }
    let (lo, hi) = (lo.floor(), hi.ceil().max(lo.floor() + 1.0));
    let pw = W - 2.0 * MARGIN;
    let ph = H - 2.0 * MARGIN;
    let sx = |t: f64| MARGIN + pw * t / t_end;
    let sy = |e: f64| MARGIN + ph * (hi - e.max(LOG_FLOOR).log10()) / (hi - lo);

    let _ = writeln!(out, r##"<g stroke="#ccc" stroke-width="0.5">"##);
    let mut d = lo as i32;
    while d as f64 <= hi {
        let y = sy(10f64.powi(d));
        let _ = writeln!(out, r#"<line x1="{MARGIN}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}"/>"#, W - MARGIN);
        d += 1;
    }
    let _ = writeln!(out, "</g>");
    let mut d = lo as i32;
    while d as f64 <= hi {
        let y = sy(10f64.powi(d));
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">1e{d}</text>"#, MARGIN - 4.0, y + 4.0);
        d += 1;
    }
    for k in 0..=5 {
        let t = t_end * k as f64 / 5.0;
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, sx(t), H - MARGIN + 16.0, round3(t));
    }
    for &s in &r.switch_times {
        let x = sx(s);
        let _ = writeln!(
            out,
            r##"<line x1="{x:.2}" y1="{MARGIN}" x2="{x:.2}" y2="{:.2}" stroke="#888" stroke-dasharray="4 3"/>"##,
            H - MARGIN
        );
    }
    for i in 0..r.n_followers {
        let pts: Vec<String> = r
            .metrics
            .iter()
            .map(|m| format!("{:.2},{:.2}", sx(m.t), sy(m.formation_error[i])))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{}" stroke-width="1.2" points="{}"/>"#,
            PALETTE[i % PALETTE.len()],
            pts.join(" ")
        );
    }
    let _ = writeln!(
        out,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">t [s]</text>"#, W / 2.0, H - 12.0);
    let _ = writeln!(out, r#"<text x="{:.2}" y="24" text-anchor="middle">{} formation error</text>"#, W / 2.0, r.name);
    out.push_str("</svg>\n");
    out
}

fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

/// Agent positions (first two state coordinates) at the last sample at or
/// before `t`; vehicles are drawn as triangles along their heading.
pub fn snapshot_svg(r: &SimResult, t: f64) -> String {
    let mut out = String::new();
    svg_open(&mut out);
    let Some(k) = (!r.times.is_empty()).then(|| r.sample_at(t)) else {
        out.push_str("</svg>\n");
        return out;
    };
    let n = r.n;
    let x = &r.states[k];
    let dims = n.min(2);
    let pos = |j: usize| -> (f64, f64) {
        let p = &x[j * n..j * n + dims];
        (p[0], if dims > 1 { p[1] } else { 0.0 })
    };
    let pts: Vec<(f64, f64)> = (0..=r.n_followers).map(pos).collect();
    let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(a, b) in &pts {
        xmin = xmin.min(a);
        xmax = xmax.max(a);
        ymin = ymin.min(b);
        ymax = ymax.max(b);
    }
    let span = (xmax - xmin).max(ymax - ymin).max(1e-6) * 1.15;
    let (cx, cy) = ((xmin + xmax) / 2.0, (ymin + ymax) / 2.0);
    let side = (H - 2.0 * MARGIN).min(W - 2.0 * MARGIN);
    let scale = side / span;
    let map = |(a, b): (f64, f64)| (W / 2.0 + (a - cx) * scale, H / 2.0 - (b - cy) * scale);

    let _ = writeln!(out, r##"<g stroke="#bbb" stroke-width="0.8">"##);
    for &(i, j) in &r.edges {
        let (a, b) = (map(pts[j]), map(pts[i]));
        let _ = writeln!(out, r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}"/>"#, a.0, a.1, b.0, b.1);
    }
    let _ = writeln!(out, "</g>");
    for i in 1..=r.n_followers {
        let (px, py) = map(pts[i]);
        let colour = PALETTE[(i - 1) % PALETTE.len()];
        match r.poses.get(k) {
            Some(p) => {
                let th = p[5 * (i - 1) + 2];
                let (s, c) = th.sin_cos();
                let l = 9.0;
                let tip = (px + l * c, py - l * s);
                let left = (px - 0.6 * l * c - 0.5 * l * s, py + 0.6 * l * s - 0.5 * l * c);
                let right = (px - 0.6 * l * c + 0.5 * l * s, py + 0.6 * l * s + 0.5 * l * c);
                let _ = writeln!(
                    out,
                    r#"<polygon points="{:.2},{:.2} {:.2},{:.2} {:.2},{:.2}" fill="{colour}"/>"#,
                    tip.0, tip.1, left.0, left.1, right.0, right.1
                );
            }
            None => {
                let _ = writeln!(out, r#"<circle cx="{px:.2}" cy="{py:.2}" r="5" fill="{colour}"/>"#);
            }
        }
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}">{i}</text>"#, px + 7.0, py - 7.0);
    }
    let (lx, ly) = map(pts[0]);
    let _ = writeln!(out, r#"<rect x="{:.2}" y="{:.2}" width="10" height="10" fill="black"/>"#, lx - 5.0, ly - 5.0);
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="24" text-anchor="middle">{} at t = {}</text>"#,
        W / 2.0,
        r.name,
        round3(r.times[k])
    );
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Directedness, Topology};
    use crate::protocols::{LeaderInput, Regime, RegimeOptions};
    use crate::sim::{integrate, InitSpec, Scenario, SimConfig};
    use crate::synthesis::{synthesize, K2Design, LtiModel};
    use num_complex::Complex64;

    fn tiny(regime: Regime, directed: bool) -> SimResult {
        let model = LtiModel::from_rows(&[vec![0.0]], &[vec![1.0]], &[vec![1.0]]).unwrap();
        let adj = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        let dir = if directed { Directedness::Directed } else { Directedness::Undirected };
        let topology = Topology::new(&adj, &[1.0, 0.0], dir).unwrap();
        let spec = crate::formation::make_harmonic_spec(1, 2, 0.0, 0.0, vec![crate::formation::Component(1.0, 0.0, 0)]).unwrap();
        let k1 = crate::linalg::DenseMatrix::zeros(1, 1);
        let gains = synthesize(&model, regime, k1, &K2Design::Poles(vec![Complex64::new(-1.0, 0.0)]), Some(0.0), None).unwrap();
        let s = Scenario {
            name: "tiny".into(),
            model,
            topology,
            gains,
            spec,
            regime,
            options: RegimeOptions::default(),
            leader_input: LeaderInput::Zero,
            sim: SimConfig { t_final: 0.5, dt: 0.01, record_stride: 10, seed: 3, init: InitSpec::default() },
            vehicle: None,
        };
        integrate(&s).unwrap()
    }

    #[test]
    fn header_order() {
        let r = tiny(Regime::DirectedTrackingObserver, true);
        let h = csv_header(&r);
        let expect = ["t", "x0_1", "x1_1", "x2_1", "v1_1", "v2_1", "w1_1", "w2_1", "w0_1", "c1", "c2", "err1", "err2"];
        assert_eq!(h, expect);
        let r = tiny(Regime::UndirectedTracking, false);
        assert_eq!(csv_header(&r), ["t", "x0_1", "x1_1", "x2_1", "v1_1", "v2_1", "c1_2", "c2_1", "err1", "err2"]);
    }

    #[test]
    fn csv_rows_match_samples() {
        let dir = tempfile::tempdir().unwrap();
        let r = tiny(Regime::DirectedTrackingObserver, true);
        let p = dir.path().join("x.csv");
        write_csv(&r, &p).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), r.times.len() + 1);
        let width = csv_header(&r).len();
        for line in text.lines() {
            assert_eq!(line.split(',').count(), width);
        }
        let last: Vec<f64> = text.lines().last().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(last[0], *r.times.last().unwrap());
        assert_eq!(&last[1..4], &r.states.last().unwrap()[..]);
    }

    #[test]
    fn summary_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let r = tiny(Regime::UndirectedTracking, false);
        let p = dir.path().join("s.json");
        write_summary(&r.summary, &p).unwrap();
        assert_eq!(read_summary(&p).unwrap(), r.summary);
    }

    #[test]
    fn export_names_and_snapshots() {
        let dir = tempfile::tempdir().unwrap();
        let r = tiny(Regime::DirectedTrackingObserver, true);
        let opts = ExportOptions { snapshots: vec![0.0, 0.1, 0.2, 0.3, 0.5], ..Default::default() };
        let files = export(&r, &opts, dir.path()).unwrap();
        let names: Vec<String> = files.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
        assert_eq!(&names[..3], ["tiny.timeseries.csv", "tiny.summary.json", "tiny.errors.svg"]);
        let snaps: Vec<&String> = names.iter().filter(|n| n.contains("snapshot")).collect();
        assert_eq!(snaps.len(), 5);
        assert!(names.contains(&"tiny.snapshot_t0.5.svg".to_string()));
        for p in &files {
            assert!(p.exists());
        }
        let svg = fs::read_to_string(&files[2]).unwrap();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 2);
    }

    #[test]
    fn export_is_deterministic() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let opts = ExportOptions::default();
        export(&tiny(Regime::DirectedTrackingObserver, true), &opts, a.path()).unwrap();
        export(&tiny(Regime::DirectedTrackingObserver, true), &opts, b.path()).unwrap();
        let read = |d: &Path| fs::read(d.join("tiny.timeseries.csv")).unwrap();
        assert_eq!(read(a.path()), read(b.path()));
    }

    #[test]
    fn unwritable_dir_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, "x").unwrap();
        let r = tiny(Regime::DirectedTrackingObserver, true);
        let err = export(&r, &ExportOptions::default(), &blocker.join("sub")).unwrap_err();
        assert!(matches!(err, ExportError::Io { .. }));
    }
}
