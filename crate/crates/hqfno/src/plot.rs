//! Deterministic SVG chart emission from CSV data. Rendering only; no metric
//! computation happens here.

use crate::error::{Error, Result};

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    /// Optional symmetric error bars on y.
    pub bars: Option<Vec<f64>>,
}

pub struct ChartOptions {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 55.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn fmt(v: f64) -> String {
    format!("{v:.3}")
}

fn transform(v: f64, log: bool) -> Result<f64> {
    if log {
        if v <= 0.0 {
            return Err(Error::Data(format!("log-scale value {v} must be positive")));
        }
        Ok(v.log10())
    } else {
        Ok(v)
    }
}

/// Multi-series line chart with optional log axes and error bars.
pub fn line_chart(series: &[Series], opts: &ChartOptions) -> Result<String> {
    if series.is_empty() || series.iter().all(|s| s.points.is_empty()) {
        return Err(Error::Data("nothing to plot".into()));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for s in series {
        for (i, &(x, y)) in s.points.iter().enumerate() {
            xs.push(transform(x, opts.log_x)?);
            let lo = s.bars.as_ref().map_or(y, |b| (y - b[i]).max(y * 1e-3));
            let hi = s.bars.as_ref().map_or(y, |b| y + b[i]);
            ys.push(transform(if opts.log_y { lo.max(1e-300) } else { lo }, opts.log_y)?);
            ys.push(transform(hi, opts.log_y)?);
        }
    }
    let (x_min, x_max) = bounds(&xs);
    let (y_min, y_max) = bounds(&ys);
    let px = |x: f64| MARGIN_L + (x - x_min) / (x_max - x_min) * (WIDTH - MARGIN_L - MARGIN_R);
    let py = |y: f64| HEIGHT - MARGIN_B - (y - y_min) / (y_max - y_min) * (HEIGHT - MARGIN_T - MARGIN_B);

    let mut svg = svg_header(&opts.title, &opts.x_label, &opts.y_label);
    axes_ticks(&mut svg, x_min, x_max, y_min, y_max, opts, &px, &py);
    for (si, s) in series.iter().enumerate() {
        let color = COLORS[si % COLORS.len()];
        let mut path = String::new();
        for (i, &(x, y)) in s.points.iter().enumerate() {
            let tx = px(transform(x, opts.log_x)?);
            let ty = py(transform(y, opts.log_y)?);
            path.push_str(if i == 0 { "M" } else { " L" });
            path.push_str(&format!("{} {}", fmt(tx), fmt(ty)));
            svg.push_str(&format!(
                "<circle cx=\"{}\" cy=\"{}\" r=\"2.5\" fill=\"{color}\"/>\n",
                fmt(tx),
                fmt(ty)
            ));
            if let Some(bars) = &s.bars {
                let lo = py(transform(
                    if opts.log_y { (y - bars[i]).max(y * 1e-3).max(1e-300) } else { y - bars[i] },
                    opts.log_y,
                )?);
                let hi = py(transform(y + bars[i], opts.log_y)?);
                svg.push_str(&format!(
                    "<line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2}\" stroke=\"{color}\" stroke-width=\"1\"/>\n",
                    fmt(tx),
                    fmt(lo),
                    fmt(hi)
                ));
            }
        }
        svg.push_str(&format!(
            "<path d=\"{path}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n"
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" fill=\"{color}\" font-size=\"12\">{}</text>\n",
            fmt(WIDTH - MARGIN_R - 150.0),
            fmt(MARGIN_T + 16.0 * si as f64),
            escape(&s.label)
        ));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Scatter heat map: points colored by value on a blue-to-red ramp.
pub fn heat_map(
    points: &[(f64, f64, f64)],
    opts: &ChartOptions,
) -> Result<String> {
    if points.is_empty() {
        return Err(Error::Data("nothing to plot".into()));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
    let vs: Vec<f64> = points.iter().map(|p| p.2).collect();
    let (x_min, x_max) = bounds(&xs);
    let (y_min, y_max) = bounds(&ys);
    let (v_min, v_max) = bounds(&vs);
    let px = |x: f64| MARGIN_L + (x - x_min) / (x_max - x_min) * (WIDTH - MARGIN_L - MARGIN_R);
    let py = |y: f64| HEIGHT - MARGIN_B - (y - y_min) / (y_max - y_min) * (HEIGHT - MARGIN_T - MARGIN_B);
    let mut svg = svg_header(&opts.title, &opts.x_label, &opts.y_label);
    axes_ticks(&mut svg, x_min, x_max, y_min, y_max, opts, &px, &py);
    for &(x, y, v) in points {
        let t = if v_max > v_min {
            (v - v_min) / (v_max - v_min)
        } else {
            0.5
        };
        let r = (255.0 * t) as u8;
        let b = (255.0 * (1.0 - t)) as u8;
        svg.push_str(&format!(
            "<circle cx=\"{}\" cy=\"{}\" r=\"7\" fill=\"rgb({r},60,{b})\" fill-opacity=\"0.85\"/>\n",
            fmt(px(x)),
            fmt(py(y))
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"11\">range [{:.3e}, {:.3e}]</text>\n",
        fmt(MARGIN_L),
        fmt(HEIGHT - 8.0),
        v_min,
        v_max
    ));
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn bounds(values: &[f64]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if (hi - lo).abs() < 1e-300 {
        (lo - 0.5, hi + 0.5)
    } else {
        let pad = (hi - lo) * 0.05;
        (lo - pad, hi + pad)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn svg_header(title: &str, x_label: &str, y_label: &str) -> String {
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\">\n\
         <rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"
    );
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"24\" font-size=\"15\" text-anchor=\"middle\">{}</text>\n",
        fmt(WIDTH / 2.0),
        escape(title)
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">{}</text>\n",
        fmt(WIDTH / 2.0),
        fmt(HEIGHT - 18.0),
        escape(x_label)
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{}</text>\n",
        fmt(HEIGHT / 2.0),
        fmt(HEIGHT / 2.0),
        escape(y_label)
    ));
    svg
}

#[allow(clippy::too_many_arguments)]
fn axes_ticks(
    svg: &mut String,
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
    opts: &ChartOptions,
    px: &dyn Fn(f64) -> f64,
    py: &dyn Fn(f64) -> f64,
) {
    svg.push_str(&format!(
        "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#333\"/>\n",
        fmt(MARGIN_L),
        fmt(MARGIN_T),
        fmt(WIDTH - MARGIN_L - MARGIN_R),
        fmt(HEIGHT - MARGIN_T - MARGIN_B)
    ));
    for i in 0..=4 {
        let fx = x_min + (x_max - x_min) * i as f64 / 4.0;
        let fy = y_min + (y_max - y_min) * i as f64 / 4.0;
        let x_val = if opts.log_x { 10f64.powf(fx) } else { fx };
        let y_val = if opts.log_y { 10f64.powf(fy) } else { fy };
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"10\" text-anchor=\"middle\">{}</text>\n",
            fmt(px(fx)),
            fmt(HEIGHT - MARGIN_B + 16.0),
            format_tick(x_val)
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"10\" text-anchor=\"end\">{}</text>\n",
            fmt(MARGIN_L - 6.0),
            fmt(py(fy) + 3.0),
            format_tick(y_val)
        ));
    }
}

fn format_tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_chart_is_deterministic() {
        let series = vec![Series {
            label: "loss".into(),
            points: vec![(0.0, 1.0), (1.0, 0.5), (2.0, 0.2)],
            bars: None,
        }];
        let opts = ChartOptions {
            title: "t".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            log_x: false,
            log_y: true,
        };
        let a = line_chart(&series, &opts).unwrap();
        let b = line_chart(&series, &opts).unwrap();
        assert_eq!(a, b);
        assert!(a.starts_with("<svg"));
        assert!(a.contains("</svg>"));
    }

    #[test]
    fn log_scale_rejects_nonpositive() {
        let series = vec![Series {
            label: "bad".into(),
            points: vec![(0.0, 0.0)],
            bars: None,
        }];
        let opts = ChartOptions {
            title: String::new(),
            x_label: String::new(),
            y_label: String::new(),
            log_x: false,
            log_y: true,
        };
        assert!(line_chart(&series, &opts).is_err());
    }

    #[test]
    fn heat_map_renders_points() {
        let pts = vec![(40.0, 0.1, 1.0), (190.0, 1.0, 3.0), (100.0, 0.5, 2.0)];
        let opts = ChartOptions {
            title: "map".into(),
            x_label: "P".into(),
            y_label: "V".into(),
            log_x: false,
            log_y: false,
        };
        let svg = heat_map(&pts, &opts).unwrap();
        assert_eq!(svg.matches("<circle").count(), 3);
    }
}
