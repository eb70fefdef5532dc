//! CSV and standalone SVG renderings of the timelines.

use std::fmt::Write as _;

use super::{IoSegment, SlotTimeline};
use crate::workflow::SlotKind;

/// Columns `slot,kind,task,start_s,end_s,value`; one row per busy interval,
/// `value` is the occupancy (always 1).
pub fn utilization_csv(timeline: &[SlotTimeline]) -> Result<String, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["slot", "kind", "task", "start_s", "end_s", "value"])?;
    for line in timeline {
        let kind = match line.kind {
            SlotKind::Cpu => "cpu",
            SlotKind::Gpu => "gpu",
        };
        for iv in &line.intervals {
            w.write_record([
                line.slot.to_string(),
                kind.to_string(),
                iv.task.clone(),
                format!("{:.6}", iv.start),
                format!("{:.6}", iv.end),
                "1".to_string(),
            ])?;
        }
    }
    finish(w)
}

/// Columns `task,category,start_s,end_s,read_bytes,write_bytes`; one row per
/// task.
pub fn io_csv(segments: &[IoSegment]) -> Result<String, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["task", "category", "start_s", "end_s", "read_bytes", "write_bytes"])?;
    for s in segments {
        w.write_record([
            s.task.clone(),
            s.category.clone(),
            format!("{:.6}", s.start),
            format!("{:.6}", s.end),
            s.read_bytes.to_string(),
            s.write_bytes.to_string(),
        ])?;
    }
    finish(w)
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String, csv::Error> {
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

const PALETTE: &[&str] = &[
    "#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2", "#edc948", "#b07aa1", "#9c755f",
];

fn color_for(category: &str, categories: &mut Vec<String>) -> &'static str {
    let i = match categories.iter().position(|c| c == category) {
        Some(i) => i,
        None => {
            categories.push(category.to_string());
            categories.len() - 1
        }
    };
    PALETTE[i % PALETTE.len()]
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

const LEFT: f64 = 70.0;
const WIDTH: f64 = 800.0;

fn legend(out: &mut String, categories: &[String], y: f64) {
    for (i, c) in categories.iter().enumerate() {
        let x = LEFT + i as f64 * 140.0;
        let _ = write!(
            out,
            r#"<rect x="{x}" y="{y}" width="12" height="12" fill="{}"/><text x="{}" y="{}" font-size="11">{}</text>"#,
            PALETTE[i % PALETTE.len()],
            x + 16.0,
            y + 10.0,
            escape(c)
        );
    }
}

/// One horizontal band per slot id, CPUs then GPUs per node, with a bar per
/// busy interval colored by task category.
pub fn utilization_svg(timeline: &[SlotTimeline]) -> String {
    let band = if timeline.len() > 200 { 2.0 } else { 6.0 };
    let horizon = timeline
        .iter()
        .flat_map(|l| l.intervals.iter().map(|i| i.end))
        .fold(0.0f64, f64::max)
        .max(1e-9);
    let plot_h = band * timeline.len() as f64;
    let height = plot_h + 80.0;
    let mut categories = Vec::new();
    let mut body = String::new();
    for (row, line) in timeline.iter().enumerate() {
        let y = 20.0 + row as f64 * band;
        let _ = write!(body, r#"<g data-slot="{}">"#, line.slot);
        if line.kind == SlotKind::Gpu {
            let _ = write!(
                body,
                r##"<rect x="{LEFT}" y="{y}" width="{WIDTH}" height="{band}" fill="#f4f4f4"/>"##
            );
        }
        for iv in &line.intervals {
            let x = LEFT + iv.start / horizon * WIDTH;
            let w = ((iv.end - iv.start) / horizon * WIDTH).max(0.5);
            let color = color_for(&iv.category, &mut categories);
            let _ = write!(
                body,
                r#"<rect x="{x:.2}" y="{y}" width="{w:.2}" height="{band}" fill="{color}"><title>slot {} {}</title></rect>"#,
                line.slot,
                escape(&iv.task)
            );
        }
        body.push_str("</g>");
    }
    let mut out = String::new();
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{height}" font-family="sans-serif">"#,
        LEFT + WIDTH + 20.0
    );
    out.push_str(&body);
    let _ = write!(
        out,
        r#"<text x="10" y="{}" font-size="11" transform="rotate(-90 10 {})">slot id</text><line x1="{LEFT}" y1="{}" x2="{}" y2="{}" stroke="black"/><text x="{LEFT}" y="{}" font-size="11">0</text><text x="{}" y="{}" font-size="11" text-anchor="end">{horizon:.2} s</text>"#,
        20.0 + plot_h / 2.0,
        20.0 + plot_h / 2.0,
        20.0 + plot_h,
        LEFT + WIDTH,
        20.0 + plot_h,
        34.0 + plot_h,
        LEFT + WIDTH,
        34.0 + plot_h
    );
    legend(&mut out, &categories, 46.0 + plot_h);
    out.push_str("</svg>\n");
    out
}

/// Two panels (read, write): each task is a horizontal segment from its start
/// to its end at the height of its byte volume.
pub fn io_svg(segments: &[IoSegment]) -> String {
    let horizon = segments.iter().map(|s| s.end).fold(0.0f64, f64::max).max(1e-9);
    let panel_h = 200.0;
    let mut categories = Vec::new();
    let mut out = String::new();
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" font-family="sans-serif">"#,
        LEFT + WIDTH + 20.0,
        2.0 * panel_h + 140.0
    );
    for (p, label) in ["read", "write"].into_iter().enumerate() {
        let top = 20.0 + p as f64 * (panel_h + 50.0);
        let value = |s: &IoSegment| if p == 0 { s.read_bytes } else { s.write_bytes } as f64;
        let max = segments.iter().map(value).fold(0.0f64, f64::max).max(1.0);
        let _ = write!(
            out,
            r#"<line x1="{LEFT}" y1="{}" x2="{}" y2="{}" stroke="black"/><text x="10" y="{}" font-size="11">{label} (GB)</text><text x="{}" y="{}" font-size="10" text-anchor="end">{:.3}</text>"#,
            top + panel_h,
            LEFT + WIDTH,
            top + panel_h,
            top + 10.0,
            LEFT - 4.0,
            top + 10.0,
            max / 1e9
        );
        for s in segments {
            let y = top + panel_h - value(s) / max * panel_h;
            let x1 = LEFT + s.start / horizon * WIDTH;
            let x2 = LEFT + s.end / horizon * WIDTH;
            let color = color_for(&s.category, &mut categories);
            let _ = write!(
                out,
                r#"<line x1="{x1:.2}" y1="{y:.2}" x2="{x2:.2}" y2="{y:.2}" stroke="{color}" stroke-width="3"><title>{} {} bytes</title></line>"#,
                escape(&s.task),
                value(s)
            );
        }
    }
    let _ = write!(
        out,
        r#"<text x="{}" y="{}" font-size="11" text-anchor="end">{horizon:.2} s</text>"#,
        LEFT + WIDTH,
        2.0 * panel_h + 105.0
    );
    legend(&mut out, &categories, 2.0 * panel_h + 115.0);
    out.push_str("</svg>\n");
    out
}
