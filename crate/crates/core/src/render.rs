//! Deterministic SVG output: cluster-size heat strips, metric bars, PCA scatter.

use std::fmt::Write as _;

use crate::ranking::RankingReport;

/// Blue (0) → red (1).
pub fn heat_color(x: f64) -> String {
    let x = if x.is_finite() { x.clamp(0.0, 1.0) } else { 0.0 };
    let r = (40.0 + 200.0 * x).round() as u8;
    let g = (60.0 + 40.0 * (1.0 - (2.0 * x - 1.0).abs())).round() as u8;
    let b = (240.0 - 200.0 * x).round() as u8;
    format!("#{r:02x}{g:02x}{b:02x}")
}

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

fn header(out: &mut String, width: f64, height: f64) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{width:.0}" height="{height:.0}" fill="white"/>"#);
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// One strip per row, one rect per frame; colour is size / `scale`.
pub fn heat_strips(rows: &[(String, Vec<f64>)], scale: f64) -> String {
    let frames = rows.iter().map(|r| r.1.len()).max().unwrap_or(0);
    let (label_w, strip_h, gap, plot_w) = (110.0, 24.0, 6.0, 800.0);
    let cell_w = if frames > 0 { plot_w / frames as f64 } else { 0.0 };
    let height = 30.0 + rows.len() as f64 * (strip_h + gap) + 10.0;
    let mut out = String::new();
    header(&mut out, label_w + plot_w + 20.0, height);
    let _ = writeln!(out, r#"<text x="10" y="18">cluster size per frame (red = large, blue = small)</text>"#);
    for (r, (label, values)) in rows.iter().enumerate() {
        let y = 30.0 + r as f64 * (strip_h + gap);
        let _ = writeln!(
            out,
            r#"<text x="10" y="{:.3}">{}</text>"#,
            y + strip_h * 0.7,
            escape(label)
        );
        let _ = writeln!(out, r#"<g class="strip">"#);
        for (t, v) in values.iter().enumerate() {
            let _ = writeln!(
                out,
                r#"<rect x="{:.3}" y="{y:.3}" width="{cell_w:.3}" height="{strip_h:.3}" fill="{}"/>"#,
                label_w + t as f64 * cell_w,
                heat_color(if scale > 0.0 { v / scale } else { 0.0 })
            );
        }
        let _ = writeln!(out, "</g>");
    }
    out.push_str("</svg>\n");
    out
}

/// Mean ± std bars of both metrics per subtype, in report order.
pub fn metric_bars(report: &RankingReport) -> String {
    let n = report.metrics.len().max(1);
    let (panel_w, panel_h, left, top) = (360.0, 240.0, 50.0, 40.0);
    let mut out = String::new();
    header(&mut out, 2.0 * (panel_w + left) + 20.0, panel_h + top + 50.0);
    let panels: [(&str, fn(&crate::ranking::ComparisonMetrics) -> (f64, f64)); 2] = [
        ("CosSim", |m| (m.cossim_mean, m.cossim_std)),
        ("AvgDiff", |m| (m.avgdiff_mean, m.avgdiff_std)),
    ];
    for (p, (title, get)) in panels.iter().enumerate() {
        let x0 = left + p as f64 * (panel_w + left);
        let vals: Vec<(f64, f64)> = report.metrics.iter().map(get).collect();
        let lo = vals.iter().map(|(m, s)| m - s).fold(0.0f64, f64::min);
        let hi = vals.iter().map(|(m, s)| m + s).fold(0.0f64, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        let ypos = |v: f64| top + panel_h * (hi - v) / span;
        let zero = ypos(0.0);
        let _ = writeln!(out, r#"<text x="{x0:.3}" y="24">{title}</text>"#);
        let _ = writeln!(
            out,
            r#"<line x1="{x0:.3}" y1="{zero:.3}" x2="{:.3}" y2="{zero:.3}" stroke="black"/>"#,
            x0 + panel_w
        );
        let bar_w = panel_w / n as f64;
        for (i, (m, (mean, std))) in report.metrics.iter().zip(&vals).enumerate() {
            let x = x0 + i as f64 * bar_w + 0.15 * bar_w;
            let (y, h) = if *mean >= 0.0 { (ypos(*mean), zero - ypos(*mean)) } else { (zero, ypos(*mean) - zero) };
            let fill = if *mean < 0.0 { "#d62728" } else { "#1f77b4" };
            let _ = writeln!(
                out,
                r#"<rect x="{x:.3}" y="{y:.3}" width="{:.3}" height="{h:.3}" fill="{fill}"/>"#,
                0.7 * bar_w
            );
            let cx = x + 0.35 * bar_w;
            let _ = writeln!(
                out,
                r#"<line x1="{cx:.3}" y1="{:.3}" x2="{cx:.3}" y2="{:.3}" stroke="black"/>"#,
                ypos(mean + std),
                ypos(mean - std)
            );
            let _ = writeln!(
                out,
                r#"<text x="{cx:.3}" y="{:.3}" text-anchor="middle">{}</text>"#,
                top + panel_h + 18.0,
                m.subtype_id
            );
        }
    }
    out.push_str("</svg>\n");
    out
}

/// 2-D scatter; points coloured by cluster label (noise grey).
pub fn pca_scatter(title: &str, coords: &[Vec<f64>], labels: &[i64]) -> String {
    let size = 400.0;
    let pad = 30.0;
    let mut out = String::new();
    header(&mut out, size + 2.0 * pad, size + 2.0 * pad + 20.0);
    let _ = writeln!(out, r#"<text x="{pad:.0}" y="20">{}</text>"#, escape(title));
    let axis = |k: usize| {
        let lo = coords.iter().map(|c| c.get(k).copied().unwrap_or(0.0)).fold(f64::INFINITY, f64::min);
        let hi = coords.iter().map(|c| c.get(k).copied().unwrap_or(0.0)).fold(f64::NEG_INFINITY, f64::max);
        if hi > lo {
            (lo, hi - lo)
        } else {
            (lo - 0.5, 1.0)
        }
    };
    let (x_lo, x_span) = axis(0);
    let (y_lo, y_span) = axis(1);
    for (c, &l) in coords.iter().zip(labels) {
        let x = pad + size * (c.first().copied().unwrap_or(0.0) - x_lo) / x_span;
        let y = pad + 20.0 + size * (1.0 - (c.get(1).copied().unwrap_or(0.0) - y_lo) / y_span);
        let fill = if l < 0 { "#bbbbbb" } else { PALETTE[l as usize % PALETTE.len()] };
        let _ = writeln!(out, r#"<circle cx="{x:.3}" cy="{y:.3}" r="2" fill="{fill}"/>"#);
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strip_structure() {
        let rows = vec![
            ("subtype 0".to_string(), vec![3.0; 10]),
            ("subtype 1".to_string(), vec![1.0; 10]),
            ("reference".to_string(), vec![10.0; 10]),
        ];
        let svg = heat_strips(&rows, 10.0);
        assert_eq!(svg.matches(r#"<g class="strip">"#).count(), 3);
        assert_eq!(svg.matches("<rect x=").count(), 30);
        let first_strip: Vec<&str> = svg
            .lines()
            .skip_while(|l| !l.starts_with(r#"<g class="strip">"#))
            .skip(1)
            .take(10)
            .collect();
        let fill = |l: &str| l.split("fill=").nth(1).unwrap().to_string();
        assert!(first_strip.iter().all(|l| fill(l) == fill(first_strip[0])));
        assert_eq!(svg, heat_strips(&rows, 10.0));
    }

    #[test]
    fn colour_ends() {
        assert_eq!(heat_color(0.0), "#283cf0");
        assert_eq!(heat_color(1.0), "#f03c28");
    }
}
