//! Trace exports: CSV and minimal SVG line plots.

use std::fmt::Write;

use crate::trainer::TrainTrace;

pub fn trace_csv(trace: &TrainTrace) -> String {
    let mut s = String::from("step,view,loss,l1,ssim,depth_loss,depth_weight,count,added,pruned,heldout_psnr\n");
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for r in &trace.steps {
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.step,
            r.view,
            r.loss,
            r.l1,
            r.ssim,
            opt(r.depth_loss),
            r.depth_weight,
            r.count,
            r.added,
            r.pruned,
            opt(r.heldout_psnr)
        )
        .unwrap();
    }
    s
}

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

/// One panel with a shared y axis; empty series are skipped.
pub fn line_plot_svg(title: &str, x_label: &str, series: &[Series]) -> String {
    let (w, h, ml, mr, mt, mb) = (640.0, 360.0, 64.0, 16.0, 32.0, 44.0);
    let pts = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts.filter(|p| p.0.is_finite() && p.1.is_finite()) {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let pad = 0.05 * (y1 - y0);
    let (y0, y1) = (y0 - pad, y1 + pad);
    let px = |x: f64| ml + (x - x0) / (x1 - x0) * (w - ml - mr);
    let py = |y: f64| h - mb - (y - y0) / (y1 - y0) * (h - mt - mb);

    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#).unwrap();
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(s, r#"<text x="{}" y="20" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#, w / 2.0, escape(title)).unwrap();
    writeln!(
        s,
        r#"<path d="M{ml} {mt} V{} H{}" fill="none" stroke="black"/>"#,
        h - mb,
        w - mr
    )
    .unwrap();
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        writeln!(s, r#"<text x="{:.1}" y="{}" font-family="sans-serif" font-size="10" text-anchor="middle">{}</text>"#, px(xv), h - mb + 14.0, tick(xv)).unwrap();
        writeln!(s, r#"<text x="{}" y="{:.1}" font-family="sans-serif" font-size="10" text-anchor="end">{}</text>"#, ml - 4.0, py(yv) + 3.0, tick(yv)).unwrap();
    }
    writeln!(s, r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" text-anchor="middle">{}</text>"#, (ml + w - mr) / 2.0, h - 8.0, escape(x_label)).unwrap();
    for (k, ser) in series.iter().filter(|s| !s.points.is_empty()).enumerate() {
        let color = COLORS[k % COLORS.len()];
        let d: Vec<String> = ser
            .points
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| format!("{}{:.1} {:.1}", if i == 0 { "M" } else { "L" }, px(x), py(y)))
            .collect();
        writeln!(s, r#"<path d="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, d.join(" ")).unwrap();
        writeln!(s, r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" fill="{color}">{}</text>"#, ml + 8.0, mt + 14.0 * (k as f64 + 1.0), escape(&ser.name)).unwrap();
    }
    s.push_str("</svg>\n");
    s
}

fn tick(v: f64) -> String {
    if v.abs() >= 1000.0 || v == v.trunc() {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn count_plot(trace: &TrainTrace) -> String {
    let pts = trace.steps.iter().map(|r| (r.step as f64, r.count as f64)).collect();
    line_plot_svg("Gaussian count", "step", &[Series { name: "count".into(), points: pts }])
}

/// Cumulative added and pruned Gaussians.
pub fn activity_plot(trace: &TrainTrace) -> String {
    let (mut added, mut pruned) = (0.0, 0.0);
    let mut a = Vec::new();
    let mut p = Vec::new();
    for r in &trace.steps {
        added += r.added as f64;
        pruned += r.pruned as f64;
        a.push((r.step as f64, added));
        p.push((r.step as f64, pruned));
    }
    line_plot_svg(
        "Densification and pruning",
        "step",
        &[
            Series { name: "cumulative added".into(), points: a },
            Series { name: "cumulative pruned".into(), points: p },
        ],
    )
}

pub fn psnr_plot(trace: &TrainTrace) -> String {
    let pts = trace
        .steps
        .iter()
        .filter_map(|r| r.heldout_psnr.map(|v| (r.step as f64, v)))
        .collect();
    line_plot_svg("Held-out PSNR (dB)", "step", &[Series { name: "psnr".into(), points: pts }])
}

pub fn loss_plot(trace: &TrainTrace) -> String {
    let pts = trace.steps.iter().map(|r| (r.step as f64, r.loss)).collect();
    line_plot_svg("Training loss", "step", &[Series { name: "loss".into(), points: pts }])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::StepRecord;

    fn trace() -> TrainTrace {
        let rec = |step, count, pruned| StepRecord {
            step,
            view: 0,
            loss: 0.1,
            l1: 0.1,
            ssim: 0.9,
            depth_loss: None,
            depth_weight: 0.0,
            count,
            added: 0,
            pruned,
            heldout_psnr: (step % 2 == 0).then_some(20.0 + step as f64),
        };
        TrainTrace {
            initial_count: 5,
            steps: vec![rec(1, 5, 0), rec(2, 4, 1), rec(3, 4, 0)],
            cleanups: vec![],
        }
    }

    #[test]
    fn csv_has_one_row_per_step() {
        let csv = trace_csv(&trace());
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[2], "2,0,0.1,0.1,0.9,,0,4,0,1,22");
        assert!(lines[1].ends_with(','));
    }

    #[test]
    fn svg_is_well_formed() {
        for svg in [count_plot(&trace()), activity_plot(&trace()), psnr_plot(&trace()), loss_plot(&trace())] {
            assert!(svg.starts_with("<svg"));
            assert!(svg.trim_end().ends_with("</svg>"));
            assert!(!svg.contains("NaN"));
        }
        let empty = line_plot_svg("a<b", "x", &[]);
        assert!(empty.contains("a&lt;b"));
    }
}
