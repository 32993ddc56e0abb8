//! Standalone SVG figures: labeled scatter maps, diverging heatmaps and
//! sweep curves. Coordinates are printed with two decimals so output is
//! stable byte for byte.

use std::collections::BTreeMap;
use std::fmt::Write;

use ndarray::ArrayView2;

const WIDTH: f64 = 480.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 40.0;

/// Tableau 10.
pub const CATEGORICAL: [&str; 10] = [
    "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#ff9da7",
    "#9c755f", "#bab0ac",
];

/// Colors for `low`, `medium` and `high`.
pub const SEVERITY: [(&str, &str); 3] = [
    ("low", "#1a9850"),
    ("medium", "#fdae61"),
    ("high", "#d73027"),
];

pub const NEGATIVE: [u8; 3] = [0x21, 0x66, 0xac];
pub const NEUTRAL: [u8; 3] = [0xff, 0xff, 0xff];
pub const POSITIVE: [u8; 3] = [0xb2, 0x18, 0x2b];

const UNLABELED: &str = "#4e79a7";

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn open(title: &str) -> String {
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    );
    out.push_str("<rect class=\"background\" x=\"0\" y=\"0\" width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n");
    if !title.is_empty() {
        let _ = writeln!(
            out,
            "<text class=\"title\" x=\"{:.2}\" y=\"20.00\" text-anchor=\"middle\" font-size=\"14\">{}</text>",
            WIDTH / 2.0,
            escape(title)
        );
    }
    out
}

/// Color of each label and the legend order. All-severity label sets use
/// the fixed severity palette; otherwise classes are ordered numerically
/// when every label is a number, lexically if not, and cycle through
/// [`CATEGORICAL`].
pub fn label_colors(labels: &[String]) -> Vec<(String, &'static str)> {
    let is_severity = |l: &String| {
        SEVERITY
            .iter()
            .any(|(name, _)| l.eq_ignore_ascii_case(name))
    };
    if !labels.is_empty() && labels.iter().all(is_severity) {
        return SEVERITY
            .iter()
            .filter(|(name, _)| labels.iter().any(|l| l.eq_ignore_ascii_case(name)))
            .map(|&(name, color)| (name.to_string(), color))
            .collect();
    }
    let mut classes: Vec<&String> = labels.iter().collect();
    if labels.iter().all(|l| l.parse::<f64>().is_ok()) {
        classes.sort_by(|a, b| {
            a.parse::<f64>()
                .unwrap()
                .total_cmp(&b.parse::<f64>().unwrap())
        });
    } else {
        classes.sort();
    }
    classes.dedup();
    classes
        .into_iter()
        .enumerate()
        .map(|(i, l)| (l.clone(), CATEGORICAL[i % CATEGORICAL.len()]))
        .collect()
}

fn extent(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    (lo, hi)
}

/// Maps `[lo, hi]` onto the plot area.
fn axis(lo: f64, hi: f64, from: f64, to: f64) -> impl Fn(f64) -> f64 {
    move |v| from + (v - lo) / (hi - lo) * (to - from)
}

/// One `circle.point` per row of `positions` (first two columns).
pub fn scatter(positions: ArrayView2<'_, f64>, labels: Option<&[String]>, title: &str) -> String {
    let sx = {
        let (lo, hi) = extent(positions.column(0).iter().copied());
        axis(lo, hi, MARGIN, WIDTH - MARGIN)
    };
    let sy = {
        let (lo, hi) = extent(positions.column(1).iter().copied());
        axis(lo, hi, HEIGHT - MARGIN, MARGIN)
    };
    let colors = labels.map(label_colors).unwrap_or_default();
    let lookup: BTreeMap<&str, &str> = colors.iter().map(|(l, c)| (l.as_str(), *c)).collect();
    let mut out = open(title);
    out.push_str("<g class=\"points\">\n");
    for (i, row) in positions.rows().into_iter().enumerate() {
        let (fill, class) = match labels {
            Some(ls) => (lookup[ls[i].as_str()], escape(&ls[i])),
            None => (UNLABELED, String::new()),
        };
        let _ = writeln!(
            out,
            "<circle class=\"point\" cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{fill}\" data-label=\"{class}\"/>",
            sx(row[0]),
            sy(row[1])
        );
    }
    out.push_str("</g>\n");
    if !colors.is_empty() {
        out.push_str("<g class=\"legend\">\n");
        for (i, (label, color)) in colors.iter().enumerate() {
            let y = MARGIN + 16.0 * i as f64;
            let _ = writeln!(
                out,
                "<rect class=\"swatch\" x=\"{:.2}\" y=\"{y:.2}\" width=\"10\" height=\"10\" fill=\"{color}\"/>",
                WIDTH - 100.0
            );
            let _ = writeln!(
                out,
                "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\">{}</text>",
                WIDTH - 85.0,
                y + 9.0,
                escape(label)
            );
        }
        out.push_str("</g>\n");
    }
    out.push_str("</svg>\n");
    out
}

fn mix(a: [u8; 3], b: [u8; 3], t: f64) -> String {
    let c: Vec<u8> = a
        .iter()
        .zip(&b)
        .map(|(&x, &y)| (x as f64 + (y as f64 - x as f64) * t).round() as u8)
        .collect();
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

/// Diverging color for `value` on `[-limit, limit]`: blue through white to red.
pub fn diverging(value: f64, limit: f64) -> String {
    let t = if limit > 0.0 {
        (value / limit).clamp(-1.0, 1.0)
    } else {
        0.0
    };
    if t >= 0.0 {
        mix(NEUTRAL, POSITIVE, t)
    } else {
        mix(NEUTRAL, NEGATIVE, -t)
    }
}

/// One `rect.cell` per entry, symmetric scale set by the largest magnitude.
pub fn heatmap(m: ArrayView2<'_, f64>, title: &str) -> String {
    let (rows, cols) = m.dim();
    let limit = m.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let side = (WIDTH - 2.0 * MARGIN - 40.0).min(HEIGHT - 2.0 * MARGIN);
    let cell = side / rows.max(cols).max(1) as f64;
    let mut out = open(title);
    out.push_str("<g class=\"cells\">\n");
    for ((i, j), &v) in m.indexed_iter() {
        let _ = writeln!(
            out,
            "<rect class=\"cell\" x=\"{:.2}\" y=\"{:.2}\" width=\"{cell:.2}\" height=\"{cell:.2}\" fill=\"{}\" data-value=\"{v:.4}\"/>",
            MARGIN + j as f64 * cell,
            MARGIN + i as f64 * cell,
            diverging(v, limit)
        );
    }
    out.push_str("</g>\n<g class=\"colorbar\">\n");
    let steps = 11;
    let bar = side / steps as f64;
    for s in 0..steps {
        let v = limit * (1.0 - 2.0 * s as f64 / (steps - 1) as f64);
        let _ = writeln!(
            out,
            "<rect class=\"scale\" x=\"{:.2}\" y=\"{:.2}\" width=\"12\" height=\"{bar:.2}\" fill=\"{}\"/>",
            WIDTH - MARGIN - 12.0,
            MARGIN + s as f64 * bar,
            diverging(v, limit)
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"10\" text-anchor=\"end\">{limit:.2}</text>",
        WIDTH - MARGIN - 14.0,
        MARGIN + 8.0
    );
    let _ = writeln!(
        out,
        "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"10\" text-anchor=\"end\">{:.2}</text>",
        WIDTH - MARGIN - 14.0,
        MARGIN + side,
        -limit
    );
    out.push_str("</g>\n</svg>\n");
    out
}

/// Polyline through `(x, y)` pairs with a marker at each.
pub fn sweep(points: &[(f64, f64)], title: &str, x_label: &str, y_label: &str) -> String {
    let sx = {
        let (lo, hi) = extent(points.iter().map(|p| p.0));
        axis(lo, hi, MARGIN + 20.0, WIDTH - MARGIN)
    };
    let sy = {
        let (lo, hi) = extent(points.iter().map(|p| p.1));
        axis(lo, hi, HEIGHT - MARGIN - 20.0, MARGIN)
    };
    let mut out = open(title);
    let _ = writeln!(
        out,
        "<g class=\"axes\" stroke=\"#333333\">\n<line x1=\"{x0:.2}\" y1=\"{y0:.2}\" x2=\"{x1:.2}\" y2=\"{y0:.2}\"/>\n<line x1=\"{x0:.2}\" y1=\"{y0:.2}\" x2=\"{x0:.2}\" y2=\"{y1:.2}\"/>\n</g>",
        x0 = MARGIN + 10.0,
        y0 = HEIGHT - MARGIN - 10.0,
        x1 = WIDTH - MARGIN,
        y1 = MARGIN
    );
    let _ = writeln!(
        out,
        "<text class=\"x-label\" x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-size=\"12\">{}</text>",
        WIDTH / 2.0,
        HEIGHT - 10.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        "<text class=\"y-label\" x=\"12.00\" y=\"{:.2}\" font-size=\"12\" transform=\"rotate(-90 12 {:.2})\" text-anchor=\"middle\">{}</text>",
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(y_label)
    );
    let coords: Vec<String> = points
        .iter()
        .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
        .collect();
    let _ = writeln!(
        out,
        "<polyline class=\"curve\" fill=\"none\" stroke=\"#4e79a7\" stroke-width=\"2\" points=\"{}\"/>",
        coords.join(" ")
    );
    for &(x, y) in points {
        let _ = writeln!(
            out,
            "<circle class=\"marker\" cx=\"{:.2}\" cy=\"{:.2}\" r=\"4\" fill=\"#4e79a7\" data-x=\"{x}\" data-y=\"{y:.4}\"/>",
            sx(x),
            sy(y)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Parses whitespace-separated `x y` rows, skipping blanks and `#` comments.
pub fn parse_table(text: &str) -> Result<Vec<(f64, f64)>, String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            let cols: Vec<&str> = l.split_whitespace().collect();
            let [x, y] = cols[..] else {
                return Err(format!("expected two columns in `{l}`"));
            };
            let num = |s: &str| s.parse::<f64>().map_err(|_| format!("not a number: `{s}`"));
            Ok((num(x)?, num(y)?))
        })
        .collect()
}
