//! Deterministic static SVG line charts of trajectory columns: fixed
//! 800x450 viewport, 10-tick axes, one polyline per selected column, and
//! dashed horizontal lines at the thermal limits when flow columns are
//! plotted.

use std::fmt::Write as _;

use crate::csv::{select_columns, CsvError, TrajectoryTable};
use crate::network::NetworkModel;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 450.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 150.0;
const MARGIN_TOP: f64 = 20.0;
const MARGIN_BOTTOM: f64 = 45.0;
const TICKS: usize = 10;

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

fn fmt_tick(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    let ax = x.abs();
    if !(1e-3..1e4).contains(&ax) {
        format!("{x:.2e}")
    } else {
        let s = format!("{x:.3}");
        let trimmed = s.trim_end_matches('0').trim_end_matches('.');
        trimmed.to_string()
    }
}

fn fmt_coord(x: f64) -> String {
    format!("{x:.2}")
}

/// Render selected columns against time. `net` supplies flow limits for the
/// dashed guide lines and may be omitted when no flow column is selected.
pub fn render_chart(
    table: &TrajectoryTable,
    selector: &str,
    net: Option<&NetworkModel>,
) -> Result<String, CsvError> {
    let picked = select_columns(table, selector)?;
    let t = table
        .column("t")
        .ok_or_else(|| CsvError::MalformedCsv("missing t column".into()))?;

    // Dashed guides at the limits of every plotted flow column.
    let mut guides: Vec<f64> = Vec::new();
    if let Some(net) = net {
        for &ci in &picked {
            let name = &table.columns[ci];
            if let Some(label) = name.strip_prefix("flow_") {
                for line in net.lines() {
                    if line.label() == label {
                        guides.push(line.flow_min);
                        guides.push(line.flow_max);
                    }
                }
            }
        }
    }
    guides.sort_by(f64::total_cmp);
    guides.dedup();

    let (mut tmin, mut tmax) = (f64::INFINITY, f64::NEG_INFINITY);
    for &ti in t {
        if ti.is_finite() {
            tmin = tmin.min(ti);
            tmax = tmax.max(ti);
        }
    }
    let (mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY);
    for &ci in &picked {
        for &v in &table.values[ci] {
            if v.is_finite() {
                ymin = ymin.min(v);
                ymax = ymax.max(v);
            }
        }
    }
    for &g in &guides {
        ymin = ymin.min(g);
        ymax = ymax.max(g);
    }
    if !ymin.is_finite() || !ymax.is_finite() {
        return Err(CsvError::MalformedCsv(
            "selected columns hold no finite samples".into(),
        ));
    }
    if ymax - ymin < 1e-12 {
        ymin -= 0.5;
        ymax += 0.5;
    }
    if tmax - tmin < 1e-12 {
        tmax = tmin + 1.0;
    }
    let pad = 0.05 * (ymax - ymin);
    ymin -= pad;
    ymax += pad;

    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let x_of = |ti: f64| MARGIN_LEFT + (ti - tmin) / (tmax - tmin) * plot_w;
    let y_of = |v: f64| MARGIN_TOP + (ymax - v) / (ymax - ymin) * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(
        svg,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );

    // Axes and ticks.
    let x0 = MARGIN_LEFT;
    let y0 = MARGIN_TOP + plot_h;
    let _ = writeln!(
        svg,
        r#"<g stroke="black" stroke-width="1"><line x1="{}" y1="{}" x2="{}" y2="{}"/><line x1="{}" y1="{}" x2="{}" y2="{}"/></g>"#,
        fmt_coord(x0),
        fmt_coord(y0),
        fmt_coord(x0 + plot_w),
        fmt_coord(y0),
        fmt_coord(x0),
        fmt_coord(MARGIN_TOP),
        fmt_coord(x0),
        fmt_coord(y0)
    );
    for i in 0..TICKS {
        let frac = i as f64 / (TICKS - 1) as f64;
        let tv = tmin + frac * (tmax - tmin);
        let xv = x_of(tv);
        let _ = writeln!(
            svg,
            r#"<line x1="{x}" y1="{y0}" x2="{x}" y2="{y1}" stroke="black"/><text x="{x}" y="{ty}" font-size="10" text-anchor="middle">{label}</text>"#,
            x = fmt_coord(xv),
            y0 = fmt_coord(y0),
            y1 = fmt_coord(y0 + 5.0),
            ty = fmt_coord(y0 + 18.0),
            label = fmt_tick(tv)
        );
        let yv = ymin + frac * (ymax - ymin);
        let yy = y_of(yv);
        let _ = writeln!(
            svg,
            r#"<line x1="{x1}" y1="{y}" x2="{x0}" y2="{y}" stroke="black"/><text x="{tx}" y="{ty}" font-size="10" text-anchor="end">{label}</text>"#,
            x1 = fmt_coord(x0 - 5.0),
            x0 = fmt_coord(x0),
            y = fmt_coord(yy),
            tx = fmt_coord(x0 - 8.0),
            ty = fmt_coord(yy + 3.0),
            label = fmt_tick(yv)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{x}" y="{y}" font-size="12" text-anchor="middle">t [s]</text>"#,
        x = fmt_coord(x0 + plot_w / 2.0),
        y = fmt_coord(HEIGHT - 8.0)
    );
    let _ = writeln!(
        svg,
        r#"<text x="14" y="{y}" font-size="12" text-anchor="middle" transform="rotate(-90 14 {y})">value</text>"#,
        y = fmt_coord(MARGIN_TOP + plot_h / 2.0)
    );

    for &g in &guides {
        let yy = y_of(g);
        let _ = writeln!(
            svg,
            r#"<line x1="{x0}" y1="{y}" x2="{x1}" y2="{y}" stroke="gray" stroke-dasharray="6,4"/>"#,
            x0 = fmt_coord(x0),
            x1 = fmt_coord(x0 + plot_w),
            y = fmt_coord(yy)
        );
    }

    // One polyline per column; NaN samples break the line.
    for (idx, &ci) in picked.iter().enumerate() {
        let color = PALETTE[idx % PALETTE.len()];
        let mut segments: Vec<Vec<(f64, f64)>> = vec![Vec::new()];
        for (k, &v) in table.values[ci].iter().enumerate() {
            if v.is_finite() && t[k].is_finite() {
                segments.last_mut().unwrap().push((x_of(t[k]), y_of(v)));
            } else if !segments.last().unwrap().is_empty() {
                segments.push(Vec::new());
            }
        }
        for seg in segments.iter().filter(|s| s.len() > 1) {
            let points: Vec<String> = seg
                .iter()
                .map(|(x, y)| format!("{},{}", fmt_coord(*x), fmt_coord(*y)))
                .collect();
            let _ = writeln!(
                svg,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                points.join(" ")
            );
        }
        let ly = MARGIN_TOP + 14.0 * idx as f64 + 10.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{x0}" y1="{y}" x2="{x1}" y2="{y}" stroke="{color}" stroke-width="2"/><text x="{tx}" y="{ty}" font-size="11">{name}</text>"#,
            x0 = fmt_coord(WIDTH - MARGIN_RIGHT + 10.0),
            x1 = fmt_coord(WIDTH - MARGIN_RIGHT + 30.0),
            y = fmt_coord(ly),
            tx = fmt_coord(WIDTH - MARGIN_RIGHT + 35.0),
            ty = fmt_coord(ly + 4.0),
            name = table.columns[ci]
        );
    }

    svg.push_str("</svg>\n");
    Ok(svg)
}
