use std::fmt::Write as _;
use std::path::Path;

use super::experiment::ExperimentReport;
use crate::{Error, Result};

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `arm,f1_1,f1_0,precision_1,recall_1,n`, one row per arm. Values are
/// written in shortest round-trip form.
pub fn render_csv(r: &ExperimentReport) -> String {
    let mut s = String::from("arm,f1_1,f1_0,precision_1,recall_1,n\n");
    for a in &r.arms {
        let _ = writeln!(s, "{},{},{},{},{},{}", a.name, a.f1_1, a.f1_0, opt(a.precision_1), opt(a.recall_1), a.n);
    }
    s
}

pub fn render_improvements_csv(r: &ExperimentReport) -> String {
    let mut s = String::from("reference,arm,reference_f1_1,arm_f1_1,improvement_pct\n");
    for i in &r.improvements {
        let _ = writeln!(s, "{},{},{},{},{}", i.reference, i.arm, i.reference_f1_1, i.arm_f1_1, i.percent);
    }
    s
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Grouped bar chart of F1_1 and F1_0 per arm.
pub fn render_svg(r: &ExperimentReport, title: &str) -> String {
    let (w, h) = (120 + 90 * r.arms.len(), 320);
    let (top, bottom, left) = (40.0, 260.0, 60.0);
    let plot_h = bottom - top;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, w / 2, esc(title));
    for tick in 0..=5 {
        let v = tick as f64 / 5.0;
        let y = bottom - v * plot_h;
        let _ = writeln!(s, r##"<line x1="{left}" y1="{y:.1}" x2="{}" y2="{y:.1}" stroke="#ddd"/>"##, w - 20);
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{v:.1}</text>"#, left - 6.0, y + 4.0);
    }
    for (i, a) in r.arms.iter().enumerate() {
        let x0 = left + 20.0 + 90.0 * i as f64;
        for (j, (v, color)) in [(a.f1_1, "#1f77b4"), (a.f1_0, "#ff7f0e")].into_iter().enumerate() {
            let bh = v.clamp(0.0, 1.0) * plot_h;
            let _ = writeln!(
                s,
                r#"<rect x="{:.1}" y="{:.1}" width="30" height="{bh:.1}" fill="{color}"><title>{:.4}</title></rect>"#,
                x0 + 32.0 * j as f64,
                bottom - bh,
                v
            );
        }
        let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#, x0 + 31.0, bottom + 16.0, esc(&a.name));
    }
    let _ = writeln!(s, r##"<rect x="{left}" y="{}" width="10" height="10" fill="#1f77b4"/><text x="{}" y="{}">F1_1</text>"##, h - 30, left + 14.0, h - 21);
    let _ = writeln!(s, r##"<rect x="{}" y="{}" width="10" height="10" fill="#ff7f0e"/><text x="{}" y="{}">F1_0</text>"##, left + 60.0, h - 30, left + 74.0, h - 21);
    s.push_str("</svg>\n");
    s
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `report.json`, `report.csv`, `improvements.csv` and `figure.svg`.
pub fn report_render(r: &ExperimentReport, dir: &Path, title: &str) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json = serde_json::to_string_pretty(&serde_json::to_value(r)?)?;
    write(&dir.join("report.json"), &json)?;
    write(&dir.join("report.csv"), &render_csv(r))?;
    write(&dir.join("improvements.csv"), &render_improvements_csv(r))?;
    write(&dir.join("figure.svg"), &render_svg(r, title))
}

pub fn read_report(dir: &Path) -> Result<ExperimentReport> {
    let p = dir.join("report.json");
    Ok(serde_json::from_slice(&std::fs::read(&p).map_err(|e| Error::io(&p, e))?)?)
}
