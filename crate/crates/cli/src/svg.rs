//! Minimal deterministic SVG line plots.

const WIDTH: f64 = 820.0;
const HEIGHT: f64 = 520.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 160.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 55.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
];

fn nice_range(lo: f64, hi: f64) -> (f64, f64) {
    if (hi - lo).abs() < 1e-30 {
        return (lo - 1.0, hi + 1.0);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

/// Render named series as polylines with axes, ticks and a legend.
pub fn line_plot(
    series: &[(String, Vec<(f64, f64)>)],
    x_label: &str,
    y_label: &str,
    title: &str,
) -> String {
    let pts: Vec<(f64, f64)> = series.iter().flat_map(|(_, p)| p.iter().copied()).collect();
    let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if pts.is_empty() {
        x0 = 0.0;
        x1 = 1.0;
        y0 = 0.0;
        y1 = 1.0;
    }
    let (x0, x1) = nice_range(x0, x1);
    let (y0, y1) = nice_range(y0, y1);
    let px = |x: f64| MARGIN_L + (x - x0) / (x1 - x0) * (WIDTH - MARGIN_L - MARGIN_R);
    let py = |y: f64| HEIGHT - MARGIN_B - (y - y0) / (y1 - y0) * (HEIGHT - MARGIN_T - MARGIN_B);

    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"monospace\" font-size=\"12\">\n"
    ));
    out.push_str(&format!(
        "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n<text x=\"{}\" y=\"20\" \
         text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
        (MARGIN_L + WIDTH - MARGIN_R) / 2.0,
        xml_escape(title)
    ));
    // Axes.
    out.push_str(&format!(
        "<line x1=\"{l}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{l}\" y1=\"{t}\" x2=\"{l}\" y2=\"{b}\" stroke=\"black\"/>\n",
        l = MARGIN_L,
        r = WIDTH - MARGIN_R,
        t = MARGIN_T,
        b = HEIGHT - MARGIN_B
    ));
    // Ticks.
    for i in 0..=5 {
        let fx = x0 + (x1 - x0) * i as f64 / 5.0;
        let fy = y0 + (y1 - y0) * i as f64 / 5.0;
        out.push_str(&format!(
            "<line x1=\"{x}\" y1=\"{b}\" x2=\"{x}\" y2=\"{b2}\" stroke=\"black\"/>\n\
             <text x=\"{x}\" y=\"{ty}\" text-anchor=\"middle\">{v:.4}</text>\n",
            x = px(fx),
            b = HEIGHT - MARGIN_B,
            b2 = HEIGHT - MARGIN_B + 5.0,
            ty = HEIGHT - MARGIN_B + 20.0,
            v = fx
        ));
        out.push_str(&format!(
            "<line x1=\"{l2}\" y1=\"{y}\" x2=\"{l}\" y2=\"{y}\" stroke=\"black\"/>\n\
             <text x=\"{tx}\" y=\"{y2}\" text-anchor=\"end\">{v:.4}</text>\n",
            l = MARGIN_L,
            l2 = MARGIN_L - 5.0,
            y = py(fy),
            tx = MARGIN_L - 8.0,
            y2 = py(fy) + 4.0,
            v = fy
        ));
    }
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
        (MARGIN_L + WIDTH - MARGIN_R) / 2.0,
        HEIGHT - 12.0,
        xml_escape(x_label)
    ));
    out.push_str(&format!(
        "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{}</text>\n",
        (MARGIN_T + HEIGHT - MARGIN_B) / 2.0,
        (MARGIN_T + HEIGHT - MARGIN_B) / 2.0,
        xml_escape(y_label)
    ));
    // Series.
    for (si, (name, pts)) in series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        let mut sorted = pts.clone();
        sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let path: Vec<String> =
            sorted.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        out.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
            path.join(" ")
        ));
        for &(x, y) in &sorted {
            out.push_str(&format!(
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.5\" fill=\"{color}\"/>\n",
                px(x),
                py(y)
            ));
        }
        let ly = MARGIN_T + 16.0 * si as f64;
        out.push_str(&format!(
            "<line x1=\"{x}\" y1=\"{ly}\" x2=\"{x2}\" y2=\"{ly}\" stroke=\"{color}\" \
             stroke-width=\"2\"/>\n<text x=\"{tx}\" y=\"{ty}\">{}</text>\n",
            xml_escape(name),
            x = WIDTH - MARGIN_R + 10.0,
            x2 = WIDTH - MARGIN_R + 30.0,
            tx = WIDTH - MARGIN_R + 36.0,
            ty = ly + 4.0
        ));
    }
    out.push_str("</svg>\n");
    out
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plot_contains_series_and_labels() {
        let series = vec![
            ("SC".to_string(), vec![(0.0, 1.0), (1.0, 2.0)]),
            ("MC8".to_string(), vec![(0.0, 1.5), (1.0, 1.8)]),
        ];
        let svg = line_plot(&series, "distance_km", "snr_db", "test");
        assert!(svg.contains("<polyline"));
        assert!(svg.contains("SC"));
        assert!(svg.contains("MC8"));
        assert!(svg.contains("distance_km"));
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }
}
