//! Evaluation CSVs, aggregated curves and static SVG charts.
//!
//! Per-seed files hold `method,split,seed,episode,success` rows; the row
//! with episode `final` is the deterministic-policy success. `curves.csv`
//! holds `method,split,episode,mean,std` with the same convention. Every CSV
//! starts with a `# config_hash=` comment line. Rendering is a pure function
//! of the curves, so re-plotting a parsed `curves.csv` gives identical bytes.

use crate::error::{Error, Result};
use metareward_core::env::Split;
use metareward_core::eval::{aggregate, Method, SeedEval, SuccessCurve, TaskResult};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub const FINAL: &str = "final";

fn csv_bytes(hash: &str, header: &[&str], rows: Vec<Vec<String>>, path: &Path) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().from_writer(format!("# config_hash={hash}\n").into_bytes());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.into_inner().map_err(|e| Error::io(path, e.into_error()))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(d) = path.parent() {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(f))
}

/// File name of one seed's evaluation.
pub fn seed_eval_name(e: &SeedEval) -> String {
    format!("{}-{}-seed{}.csv", e.method.id(), e.split.id(), e.seed)
}

/// Writes the curve file and the per-task table (`*-tasks.csv`).
pub fn write_seed_eval(dir: &Path, e: &SeedEval, hash: &str) -> Result<PathBuf> {
    let path = dir.join(seed_eval_name(e));
    let base = |ep: String, v: f64| vec![e.method.id().to_string(), e.split.id().to_string(), e.seed.to_string(), ep, format!("{v}")];
    let mut rows: Vec<Vec<String>> = e.per_episode.iter().enumerate().map(|(i, v)| base(i.to_string(), *v)).collect();
    rows.push(base(FINAL.into(), e.final_success));
    write(&path, &csv_bytes(hash, &["method", "split", "seed", "episode", "success"], rows, &path)?)?;
    let tasks = dir.join(seed_eval_name(e).replace(".csv", "-tasks.csv"));
    let rows = e.tasks.iter().map(|t| vec![t.class.id().to_string(), t.index.to_string(), format!("{}", t.final_success)]).collect();
    write(&tasks, &csv_bytes(hash, &["class", "index", "final_success"], rows, &tasks)?)?;
    Ok(path)
}

/// Reads a per-seed curve file (per-task rows are not restored).
pub fn read_seed_eval(path: &Path) -> Result<SeedEval> {
    let mut r = reader(path)?;
    let mut out: Option<SeedEval> = None;
    let mut final_success = None;
    for rec in r.records() {
        let rec = rec?;
        let bad = |m: &str| Error::format(path, m.to_string());
        if rec.len() != 5 {
            return Err(bad("expected 5 columns"));
        }
        let method = Method::parse(&rec[0])?;
        let split = Split::parse(&rec[1])?;
        let seed: u64 = rec[2].parse().map_err(|_| bad("bad seed"))?;
        let v: f64 = rec[4].parse().map_err(|_| bad("bad success value"))?;
        let e = out.get_or_insert_with(|| SeedEval { method, split, seed, per_episode: vec![], final_success: 0.0, tasks: Vec::<TaskResult>::new() });
        if (e.method, e.split, e.seed) != (method, split, seed) {
            return Err(bad("mixed method, split or seed"));
        }
        if &rec[3] == FINAL {
            final_success = Some(v);
        } else if rec[3].parse::<usize>().ok() == Some(e.per_episode.len()) {
            e.per_episode.push(v);
        } else {
            return Err(bad("episodes out of order"));
        }
    }
    let mut e = out.ok_or_else(|| Error::format(path, "no rows"))?;
    e.final_success = final_success.ok_or_else(|| Error::format(path, "missing final row"))?;
    Ok(e)
}

/// Every per-seed evaluation below `dir`, in path order.
pub fn collect_seed_evals(dir: &Path) -> Result<Vec<SeedEval>> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let rd = match std::fs::read_dir(&d) {
            Ok(rd) => rd,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => continue,
            Err(e) => return Err(Error::io(&d, e)),
        };
        for entry in rd {
            let p = entry.map_err(|e| Error::io(&d, e))?.path();
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            if p.is_dir() {
                stack.push(p);
            } else if name.contains("-seed") && name.ends_with(".csv") && !name.ends_with("-tasks.csv") {
                files.push(p);
            }
        }
    }
    files.sort();
    files.iter().map(|p| read_seed_eval(p)).collect()
}

/// Groups by `(method, split)` and aggregates each group.
pub fn aggregate_all(evals: &[SeedEval]) -> Result<Vec<SuccessCurve>> {
    let mut groups: BTreeMap<(Method, &str), Vec<SeedEval>> = BTreeMap::new();
    for e in evals {
        groups.entry((e.method, e.split.id())).or_default().push(e.clone());
    }
    let mut out = Vec::new();
    for (_, mut g) in groups {
        g.sort_by_key(|e| e.seed);
        out.push(aggregate(&g)?);
    }
    Ok(out)
}

pub fn curves_csv(curves: &[SuccessCurve], hash: &str) -> Result<Vec<u8>> {
    let mut rows = Vec::new();
    for c in curves {
        let row = |ep: String, m: f64, s: f64| vec![c.method.id().to_string(), c.split.id().to_string(), ep, format!("{m}"), format!("{s}")];
        for (i, (m, s)) in c.mean.iter().zip(&c.std).enumerate() {
            rows.push(row(i.to_string(), *m, *s));
        }
        rows.push(row(FINAL.into(), c.final_mean, c.final_std));
    }
    csv_bytes(hash, &["method", "split", "episode", "mean", "std"], rows, Path::new("curves.csv"))
}

/// Parses `curves.csv`; the seed count is not stored and reads back as 0.
pub fn read_curves(path: &Path) -> Result<Vec<SuccessCurve>> {
    let mut r = reader(path)?;
    let mut out: Vec<SuccessCurve> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let bad = |m: &str| Error::format(path, m.to_string());
        if rec.len() != 5 {
            return Err(bad("expected 5 columns"));
        }
        let method = Method::parse(&rec[0])?;
        let split = Split::parse(&rec[1])?;
        let m: f64 = rec[3].parse().map_err(|_| bad("bad mean"))?;
        let s: f64 = rec[4].parse().map_err(|_| bad("bad std"))?;
        let start_new = out.last().is_none_or(|c| c.method != method || c.split != split);
        if start_new {
            out.push(SuccessCurve { method, split, seeds: 0, mean: vec![], std: vec![], final_mean: 0.0, final_std: 0.0 });
        }
        let c = out.last_mut().unwrap();
        if &rec[2] == FINAL {
            c.final_mean = m;
            c.final_std = s;
        } else {
            c.mean.push(m);
            c.std.push(s);
        }
    }
    Ok(out)
}

fn color(m: Method) -> &'static str {
    match m {
        Method::Intrinsic => "#d62728",
        Method::Advantage => "#9467bd",
        Method::Rl2 => "#ff7f0e",
        Method::Shaped => "#1f77b4",
        Method::Sparse => "#2ca02c",
    }
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 50.0;

fn svg_open(out: &mut String, title: &str) {
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="24" font-family="sans-serif" font-size="15" text-anchor="middle">{title}</text>"#, W / 2.0);
    let (x0, y0, y1) = (PAD, H - PAD, PAD);
    let _ = writeln!(out, r#"<line x1="{x0}" y1="{y0}" x2="{}" y2="{y0}" stroke="black"/>"#, W - PAD);
    let _ = writeln!(out, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
    for i in 0..=4 {
        let v = i as f64 / 4.0;
        let y = y0 - v * (y0 - y1);
        let _ = writeln!(out, r##"<line x1="{x0}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="#dddddd"/>"##, W - PAD);
        let _ = writeln!(out, r#"<text x="{}" y="{:.2}" font-family="sans-serif" font-size="11" text-anchor="end">{v:.2}</text>"#, x0 - 6.0, y + 4.0);
    }
}

/// Success-rate curves of one split with shaded std bands. The last point
/// of each curve is the deterministic final policy.
pub fn render_curves_svg(curves: &[SuccessCurve], split: Split) -> String {
    let mut out = String::new();
    svg_open(&mut out, &format!("Success rate per episode ({} split)", split.id()));
    let sel: Vec<&SuccessCurve> = curves.iter().filter(|c| c.split == split).collect();
    let n = sel.iter().map(|c| c.mean.len() + 1).max().unwrap_or(1).max(2);
    let x = |i: usize| PAD + i as f64 * (W - 2.0 * PAD) / (n - 1) as f64;
    let y = |v: f64| (H - PAD) - v.clamp(0.0, 1.0) * (H - 2.0 * PAD);
    for (k, c) in sel.iter().enumerate() {
        let mean: Vec<f64> = c.mean.iter().copied().chain([c.final_mean]).collect();
        let std: Vec<f64> = c.std.iter().copied().chain([c.final_std]).collect();
        let upper: Vec<String> = mean.iter().zip(&std).enumerate().map(|(i, (m, s))| format!("{:.2},{:.2}", x(i), y(m + s))).collect();
        let lower: Vec<String> = mean.iter().zip(&std).enumerate().rev().map(|(i, (m, s))| format!("{:.2},{:.2}", x(i), y(m - s))).collect();
        let _ = writeln!(out, r#"<polygon points="{} {}" fill="{}" fill-opacity="0.2" stroke="none"/>"#, upper.join(" "), lower.join(" "), color(c.method));
        let line: Vec<String> = mean.iter().enumerate().map(|(i, m)| format!("{:.2},{:.2}", x(i), y(*m))).collect();
        let _ = writeln!(out, r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="2"/>"#, line.join(" "), color(c.method));
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" fill="{}">{}</text>"#,
            W - PAD - 90.0,
            PAD + 16.0 * (k as f64 + 1.0),
            color(c.method),
            c.method.id()
        );
    }
    for i in 0..n {
        let label = if i + 1 == n { "det".to_string() } else { i.to_string() };
        let _ = writeln!(out, r#"<text x="{:.2}" y="{}" font-family="sans-serif" font-size="11" text-anchor="middle">{label}</text>"#, x(i), H - PAD + 16.0);
    }
    out.push_str("</svg>\n");
    out
}

/// Final deterministic success per method and split with std error bars.
pub fn render_final_svg(curves: &[SuccessCurve]) -> String {
    let mut out = String::new();
    svg_open(&mut out, "Final success (deterministic policy)");
    let n = curves.len().max(1) as f64;
    let slot = (W - 2.0 * PAD) / n;
    let y = |v: f64| (H - PAD) - v.clamp(0.0, 1.0) * (H - 2.0 * PAD);
    for (i, c) in curves.iter().enumerate() {
        let x0 = PAD + slot * i as f64 + slot * 0.15;
        let bw = slot * 0.7;
        let top = y(c.final_mean);
        let _ = writeln!(out, r#"<rect x="{x0:.2}" y="{top:.2}" width="{bw:.2}" height="{:.2}" fill="{}"/>"#, (H - PAD) - top, color(c.method));
        let cx = x0 + bw / 2.0;
        let _ = writeln!(
            out,
            r#"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="black"/>"#,
            y(c.final_mean - c.final_std),
            y(c.final_mean + c.final_std)
        );
        let _ = writeln!(
            out,
            r#"<text x="{cx:.2}" y="{}" font-family="sans-serif" font-size="10" text-anchor="middle">{}/{}</text>"#,
            H - PAD + 14.0,
            c.method.id(),
            c.split.id()
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Writes `curves.csv`, one curve chart per split present, and the final
/// success bar chart. Returns the written paths.
pub fn write_report(out: &Path, curves: &[SuccessCurve], hash: &str) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    let csv_path = out.join("curves.csv");
    write(&csv_path, &curves_csv(curves, hash)?)?;
    paths.push(csv_path);
    paths.extend(plot(out, curves)?);
    Ok(paths)
}

/// Renders the SVG charts of `curves` into `out`.
pub fn plot(out: &Path, curves: &[SuccessCurve]) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for split in [Split::Train, Split::Test] {
        if curves.iter().any(|c| c.split == split) {
            let p = out.join(format!("curves-{}.svg", split.id()));
            write(&p, render_curves_svg(curves, split).as_bytes())?;
            paths.push(p);
        }
    }
    let p = out.join("final_success.svg");
    write(&p, render_final_svg(curves).as_bytes())?;
    paths.push(p);
    Ok(paths)
}
