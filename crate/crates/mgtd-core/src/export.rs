//! Plot and file export: minimal deterministic SVG charts plus the
//! config-hash header comment every emitted artifact carries.

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Short content hash of a canonical config string; stamped into every
/// output file so artifacts can be traced back to the run that made them.
pub fn config_hash(config: &str) -> String {
    let digest = Sha256::digest(config.as_bytes());
    digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
}

/// Prefix CSV text with a `# config <hash>` comment line.
pub fn csv_with_provenance(hash: &str, csv: &str) -> String {
    format!("# config {hash}\n{csv}")
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 56.0;

/// Color palette for chart groups (cycled when exhausted).
const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

#[derive(Debug, Clone, Copy)]
struct Range {
    min: f64,
    max: f64,
}

impl Range {
    fn of(values: impl Iterator<Item = f64>) -> Result<Self> {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for v in values {
            if !v.is_finite() {
                return Err(Error::Analysis("non-finite chart value".into()));
            }
            min = min.min(v);
            max = max.max(v);
        }
        if min > max {
            return Err(Error::Analysis("cannot chart an empty series".into()));
        }
        if min == max {
            // degenerate span: pad so the point lands mid-axis
            min -= 0.5;
            max += 0.5;
        }
        Ok(Self { min, max })
    }

    fn to_px(self, v: f64, lo_px: f64, hi_px: f64) -> f64 {
        lo_px + (v - self.min) / (self.max - self.min) * (hi_px - lo_px)
    }
}

fn svg_open(title: &str, hash: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n<!-- config {hash} -->\n\
         <rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"16\" \
         font-family=\"sans-serif\">{}</text>\n",
        WIDTH / 2.0,
        xml_escape(title)
    )
}

fn axes(x: Range, y: Range, x_label: &str, y_label: &str) -> String {
    let x0 = MARGIN;
    let x1 = WIDTH - MARGIN;
    let y0 = HEIGHT - MARGIN;
    let y1 = MARGIN;
    let mut out = format!(
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>\n\
         <line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>\n"
    );
    let label = |px: f64, py: f64, anchor: &str, text: String| {
        format!(
            "<text x=\"{px}\" y=\"{py}\" text-anchor=\"{anchor}\" font-size=\"11\" \
             font-family=\"sans-serif\">{text}</text>\n"
        )
    };
    out += &label(x0, y0 + 16.0, "middle", format!("{:.3}", x.min));
    out += &label(x1, y0 + 16.0, "middle", format!("{:.3}", x.max));
    out += &label(x0 - 6.0, y0, "end", format!("{:.3}", y.min));
    out += &label(x0 - 6.0, y1 + 4.0, "end", format!("{:.3}", y.max));
    out += &label((x0 + x1) / 2.0, HEIGHT - 16.0, "middle", xml_escape(x_label));
    out += &format!(
        "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" font-size=\"11\" \
         font-family=\"sans-serif\" transform=\"rotate(-90 16 {})\">{}</text>\n",
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        xml_escape(y_label)
    );
    out
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// A single-series line chart (e.g. macro-F1 over threshold).
pub fn line_chart_svg(
    title: &str,
    x_label: &str,
    y_label: &str,
    points: &[(f64, f64)],
    hash: &str,
) -> Result<String> {
    if points.is_empty() {
        return Err(Error::Analysis("cannot chart an empty series".into()));
    }
    let xr = Range::of(points.iter().map(|p| p.0))?;
    let yr = Range::of(points.iter().map(|p| p.1))?;
    let mut svg = svg_open(title, hash);
    svg += &axes(xr, yr, x_label, y_label);
    let coords: Vec<String> = points
        .iter()
        .map(|&(x, y)| {
            format!(
                "{:.2},{:.2}",
                xr.to_px(x, MARGIN, WIDTH - MARGIN),
                yr.to_px(y, HEIGHT - MARGIN, MARGIN)
            )
        })
        .collect();
    svg += &format!(
        "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\"/>\n",
        coords.join(" "),
        PALETTE[0]
    );
    svg += "</svg>\n";
    Ok(svg)
}

/// One scatter point with its legend group.
#[derive(Debug, Clone)]
pub struct ScatterPoint {
    pub x: f64,
    pub y: f64,
    pub group: String,
}

/// Grouped scatter plot with a legend; groups get palette colors in
/// sorted-name order so output is deterministic.
pub fn scatter_svg(title: &str, points: &[ScatterPoint], hash: &str) -> Result<String> {
    if points.is_empty() {
        return Err(Error::Analysis("cannot chart an empty scatter".into()));
    }
    let xr = Range::of(points.iter().map(|p| p.x))?;
    let yr = Range::of(points.iter().map(|p| p.y))?;
    let mut groups: BTreeMap<&str, &str> = BTreeMap::new();
    for p in points {
        let next = PALETTE[groups.len() % PALETTE.len()];
        groups.entry(p.group.as_str()).or_insert(next);
    }
    let mut svg = svg_open(title, hash);
    svg += &axes(xr, yr, "pc1", "pc2");
    for p in points {
        svg += &format!(
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.5\" fill=\"{}\" fill-opacity=\"0.7\"/>\n",
            xr.to_px(p.x, MARGIN, WIDTH - MARGIN),
            yr.to_px(p.y, HEIGHT - MARGIN, MARGIN),
            groups[p.group.as_str()]
        );
    }
    for (i, (name, color)) in groups.iter().enumerate() {
        let y = MARGIN + 14.0 * i as f64;
        svg += &format!(
            "<rect x=\"{}\" y=\"{:.1}\" width=\"10\" height=\"10\" fill=\"{color}\"/>\n\
             <text x=\"{}\" y=\"{:.1}\" font-size=\"11\" font-family=\"sans-serif\">{}</text>\n",
            WIDTH - MARGIN + 6.0,
            y,
            WIDTH - MARGIN + 20.0,
            y + 9.0,
            xml_escape(name)
        );
    }
    svg += "</svg>\n";
    Ok(svg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_hash_is_stable_and_short() {
        let h = config_hash("{\"seed\":42}");
        assert_eq!(h.len(), 12);
        assert_eq!(h, config_hash("{\"seed\":42}"));
        assert_ne!(h, config_hash("{\"seed\":43}"));
        let csv = csv_with_provenance(&h, "a,b\n1,2\n");
        assert!(csv.starts_with(&format!("# config {h}\n")));
        assert!(csv.ends_with("a,b\n1,2\n"));
    }

    #[test]
    fn line_chart_contains_series_and_hash() {
        let points: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, (i * i) as f64)).collect();
        let svg = line_chart_svg("sweep", "tau", "macro-F1", &points, "abc123").unwrap();
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("<!-- config abc123 -->"));
        assert!(svg.contains("<polyline"));
        // all ten vertices present
        let vertices = svg.split("points=\"").nth(1).unwrap().split('"').next().unwrap();
        assert_eq!(vertices.split(' ').count(), 10);
        assert!(line_chart_svg("x", "x", "y", &[], "h").is_err());
        assert!(line_chart_svg("x", "x", "y", &[(f64::NAN, 0.0)], "h").is_err());
    }

    #[test]
    fn scatter_colors_by_group_with_legend() {
        let points = vec![
            ScatterPoint { x: 0.0, y: 0.0, group: "HC3".into() },
            ScatterPoint { x: 1.0, y: 1.0, group: "M4GT".into() },
            ScatterPoint { x: 2.0, y: 0.5, group: "HC3".into() },
        ];
        let svg = scatter_svg("projection", &points, "deadbeef").unwrap();
        assert_eq!(svg.matches("<circle").count(), 3);
        assert!(svg.contains(">HC3</text>"));
        assert!(svg.contains(">M4GT</text>"));
        // deterministic palette assignment: sorted group order
        let hc3_color = PALETTE[0];
        let m4gt_color = PALETTE[1];
        assert!(svg.contains(hc3_color) && svg.contains(m4gt_color));
        assert!(scatter_svg("empty", &[], "h").is_err());
    }

    #[test]
    fn degenerate_single_point_still_renders() {
        let svg =
            line_chart_svg("one", "x", "y", &[(0.5, 0.5)], "h").unwrap();
        assert!(svg.contains("<polyline"));
        let scatter = scatter_svg(
            "one",
            &[ScatterPoint { x: 1.0, y: 1.0, group: "g".into() }],
            "h",
        )
        .unwrap();
        assert!(scatter.contains("<circle"));
    }

    #[test]
    fn titles_are_escaped() {
        let svg = line_chart_svg("a<b&c", "x", "y", &[(0.0, 0.0), (1.0, 1.0)], "h").unwrap();
        assert!(svg.contains("a&lt;b&amp;c"));
        assert!(!svg.contains("a<b"));
    }
}
