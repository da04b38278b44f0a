//! Line charts of CSV columns as standalone SVG.
//!
//! Output depends only on the input bytes and the style: coordinates are
//! printed with fixed precision and series keep the requested order.

use std::fmt::Write as _;
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

#[derive(Debug, Clone, PartialEq)]
pub struct PlotStyle {
    pub width: u32,
    pub height: u32,
    pub log_y: bool,
    /// Abscissa column; defaults to `t` when present, else the first column.
    pub x_column: Option<String>,
    pub title: Option<String>,
}

impl Default for PlotStyle {
    fn default() -> Self {
        Self { width: 720, height: 440, log_y: false, x_column: None, title: None }
    }
}

struct Series {
    name: String,
    points: Vec<(f64, f64)>,
}

/// Reads `columns` (against the x column) from CSV text and renders them.
pub fn render_svg(input: impl Read, columns: &[String], style: &PlotStyle) -> Result<String> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(input);
    let headers: Vec<String> = rdr.headers().map_err(|e| Error::Format(e.to_string()))?.iter().map(String::from).collect();
    if headers.is_empty() || headers.iter().all(|h| h.is_empty()) {
        return Ok(draw(&[], style));
    }
    let find = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| {
            Error::invalid(format!("column '{name}' not in CSV (columns: {})", headers.join(", ")))
        })
    };
    let xi = match &style.x_column {
        Some(x) => find(x)?,
        None => headers.iter().position(|h| h == "t").unwrap_or(0),
    };
    let idx: Vec<usize> = columns.iter().map(|c| find(c)).collect::<Result<_>>()?;
    let mut series: Vec<Series> = columns.iter().map(|c| Series { name: c.clone(), points: Vec::new() }).collect();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Format(e.to_string()))?;
        let Some(x) = rec.get(xi).and_then(|s| s.trim().parse::<f64>().ok()) else { continue };
        for (s, &i) in series.iter_mut().zip(&idx) {
            if let Some(y) = rec.get(i).and_then(|s| s.trim().parse::<f64>().ok()) {
                let keep = x.is_finite() && y.is_finite() && (!style.log_y || y > 0.0);
                if keep {
                    s.points.push((x, if style.log_y { y.log10() } else { y }));
                }
            }
        }
    }
    Ok(draw(&series, style))
}

/// Renders `columns` of the CSV at `csv_path` into `svg_path`.
pub fn plot(csv_path: &Path, columns: &[String], style: &PlotStyle, svg_path: &Path) -> Result<()> {
    let file = std::fs::File::open(csv_path).map_err(|e| Error::Io(format!("{}: {e}", csv_path.display())))?;
    let svg = render_svg(file, columns, style)?;
    std::fs::write(svg_path, svg)?;
    Ok(())
}

fn nice_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = hi - lo;
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| span / s <= 6.0).unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

fn label(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if (1e-3..1e4).contains(&v.abs()) {
        let s = format!("{v:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.2e}")
    }
}

fn range(vals: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if lo > hi {
        return None;
    }
    if hi - lo > 1e-12 * hi.abs().max(lo.abs()) {
        Some((lo, hi))
    } else {
        let pad = if lo == 0.0 { 1.0 } else { 0.1 * lo.abs() };
        Some((lo - pad, hi + pad))
    }
}

fn draw(series: &[Series], style: &PlotStyle) -> String {
    let (w, h) = (style.width as f64, style.height as f64);
    let (left, right, top, bottom) = (80.0, 20.0, 36.0, 48.0);
    let (pw, ph) = (w - left - right, h - top - bottom);
    let xr = range(series.iter().flat_map(|s| s.points.iter().map(|p| p.0))).unwrap_or((0.0, 1.0));
    let yr = range(series.iter().flat_map(|s| s.points.iter().map(|p| p.1))).unwrap_or((0.0, 1.0));
    let sx = |x: f64| left + (x - xr.0) / (xr.1 - xr.0) * pw;
    let sy = |y: f64| top + ph - (y - yr.0) / (yr.1 - yr.0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {} {}" font-family="sans-serif" font-size="12">"#,
        style.width, style.height, style.width, style.height
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>"#);
    if let Some(t) = &style.title {
        let _ = writeln!(s, r#"<text x="{:.2}" y="22" text-anchor="middle" font-size="14">{}</text>"#, w / 2.0, escape(t));
    }
    let _ = writeln!(s, r#"<rect x="{left:.2}" y="{top:.2}" width="{pw:.2}" height="{ph:.2}" fill="none" stroke="black"/>"#);
    for t in nice_ticks(xr.0, xr.1) {
        let x = sx(t);
        let _ = writeln!(s, r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#, top + ph, top + ph + 5.0);
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, top + ph + 18.0, label(t));
    }
    let y_ticks = if style.log_y {
        let (a, b) = (yr.0.ceil() as i64, yr.1.floor() as i64);
        if b >= a {
            (a..=b).map(|k| k as f64).collect()
        } else {
            nice_ticks(yr.0, yr.1)
        }
    } else {
        nice_ticks(yr.0, yr.1)
    };
    for t in y_ticks {
        let y = sy(t);
        let text = if style.log_y { format!("1e{}", label(t)) } else { label(t) };
        let _ = writeln!(s, r#"<line x1="{:.2}" y1="{y:.2}" x2="{left:.2}" y2="{y:.2}" stroke="black"/>"#, left - 5.0);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, left - 8.0, y + 4.0, text);
    }
    for (k, ser) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        if !ser.points.is_empty() {
            let pts: Vec<String> = ser.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
            let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, pts.join(" "));
        }
        let ly = top + 16.0 + 16.0 * k as f64;
        let lx = left + pw - 150.0;
        let _ = writeln!(s, r#"<line x1="{lx:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-width="2"/>"#, ly - 4.0, lx + 20.0, ly - 4.0);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{ly:.2}">{}</text>"#, lx + 26.0, escape(&ser.name));
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

#[cfg(test)]
mod tests {
    use super::*;

    const CSV: &str = "t,entropy,fisher\n0,-4.2,3\n0.1,-4.3,2.5\n0.2,-4.35,2.2\n";

    fn cols(c: &[&str]) -> Vec<String> {
        c.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn overlay_draws_both_traces() {
        let svg = render_svg(CSV.as_bytes(), &cols(&["entropy", "fisher"]), &PlotStyle::default()).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains(">entropy<") && svg.contains(">fisher<"));
        assert!(!svg.contains("href"));
    }

    #[test]
    fn output_is_deterministic() {
        let style = PlotStyle { log_y: true, title: Some("max <f>".into()), ..Default::default() };
        let a = render_svg(CSV.as_bytes(), &cols(&["fisher"]), &style).unwrap();
        let b = render_svg(CSV.as_bytes(), &cols(&["fisher"]), &style).unwrap();
        assert_eq!(a, b);
        assert!(a.contains("max &lt;f&gt;"));
    }

    #[test]
    fn empty_csv_gives_empty_axes() {
        let svg = render_svg("".as_bytes(), &cols(&["fisher"]), &PlotStyle::default()).unwrap();
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert!(!svg.contains("<polyline"));
        let header_only = render_svg("t,fisher\n".as_bytes(), &cols(&["fisher"]), &PlotStyle::default()).unwrap();
        assert!(!header_only.contains("<polyline"));
    }

    #[test]
    fn missing_column_is_named() {
        let err = render_svg(CSV.as_bytes(), &cols(&["energy"]), &PlotStyle::default()).unwrap_err();
        assert!(err.to_string().contains("'energy'"), "{err}");
    }

    #[test]
    fn log_scale_drops_nonpositive_values() {
        let csv = "t,max\n0,1\n1,0\n2,100\n";
        let svg = render_svg(csv.as_bytes(), &cols(&["max"]), &PlotStyle { log_y: true, ..Default::default() }).unwrap();
        let line = svg.lines().find(|l| l.starts_with("<polyline")).unwrap();
        assert_eq!(line.matches(',').count(), 2);
        assert!(svg.contains(">1e2<") || svg.contains(">1e1<"));
    }

    #[test]
    fn ticks_cover_the_range() {
        let t = nice_ticks(0.0, 0.5);
        assert_eq!(t.first(), Some(&0.0));
        assert!((t.last().unwrap() - 0.5).abs() < 1e-12);
        assert!(t.len() <= 7);
    }
}
