//! Minimal SVG writer for reliability diagrams: axes, the identity
//! diagonal, and one polyline per model. No plotting dependency.

use crate::calibration::CalibrationCurve;

const SIZE: f64 = 480.0;
const MARGIN: f64 = 48.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
];

fn sx(p: f64) -> f64 {
    MARGIN + p * (SIZE - 2.0 * MARGIN)
}

fn sy(p: f64) -> f64 {
    SIZE - MARGIN - p * (SIZE - 2.0 * MARGIN)
}

/// Reliability diagram for one or more named calibration curves.
pub fn reliability_diagram(curves: &[(String, CalibrationCurve)]) -> String {
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SIZE}\" height=\"{SIZE}\" \
         viewBox=\"0 0 {SIZE} {SIZE}\">\n"
    ));
    svg.push_str(&format!(
        "  <rect width=\"{SIZE}\" height=\"{SIZE}\" fill=\"white\"/>\n"
    ));

    // Axes with ticks every 0.2.
    svg.push_str(&format!(
        "  <line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"black\"/>\n",
        sx(0.0),
        sy(0.0),
        sx(1.0),
        sy(0.0)
    ));
    svg.push_str(&format!(
        "  <line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"black\"/>\n",
        sx(0.0),
        sy(0.0),
        sx(0.0),
        sy(1.0)
    ));
    for i in 0..=5 {
        let p = i as f64 / 5.0;
        svg.push_str(&format!(
            "  <text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\" text-anchor=\"middle\">{p:.1}</text>\n",
            sx(p),
            sy(0.0) + 16.0
        ));
        svg.push_str(&format!(
            "  <text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\" text-anchor=\"end\">{p:.1}</text>\n",
            sx(0.0) - 6.0,
            sy(p) + 4.0
        ));
    }
    svg.push_str(&format!(
        "  <text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"middle\">predicted level</text>\n",
        sx(0.5),
        SIZE - 10.0
    ));
    svg.push_str(&format!(
        "  <text x=\"14\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"middle\" \
         transform=\"rotate(-90 14 {:.2})\">empirical frequency</text>\n",
        sy(0.5),
        sy(0.5)
    ));

    // Perfect calibration diagonal.
    svg.push_str(&format!(
        "  <line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"grey\" \
         stroke-dasharray=\"6,4\"/>\n",
        sx(0.0),
        sy(0.0),
        sx(1.0),
        sy(1.0)
    ));

    for (idx, (name, curve)) in curves.iter().enumerate() {
        let color = PALETTE[idx % PALETTE.len()];
        let points: Vec<String> = curve
            .levels
            .iter()
            .zip(&curve.empirical)
            .map(|(&p, &e)| format!("{:.2},{:.2}", sx(p), sy(e)))
            .collect();
        svg.push_str(&format!(
            "  <polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
            points.join(" ")
        ));
        let ly = MARGIN + 14.0 * idx as f64;
        svg.push_str(&format!(
            "  <line x1=\"{:.2}\" y1=\"{ly:.2}\" x2=\"{:.2}\" y2=\"{ly:.2}\" stroke=\"{color}\" \
             stroke-width=\"1.5\"/>\n",
            sx(0.02),
            sx(0.02) + 18.0
        ));
        svg.push_str(&format!(
            "  <text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\">{name}</text>\n",
            sx(0.02) + 24.0,
            ly + 4.0
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagram_contains_curves_and_diagonal() {
        let curve = CalibrationCurve {
            levels: vec![0.25, 0.5, 0.75],
            empirical: vec![0.2, 0.55, 0.8],
            n_eval: 100,
        };
        let svg = reliability_diagram(&[("demo".into(), curve)]);
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("stroke-dasharray"));
        assert!(svg.contains("polyline"));
        assert!(svg.contains("demo"));
        assert!(svg.ends_with("</svg>\n"));
    }

    #[test]
    fn diagram_is_deterministic() {
        let curve = CalibrationCurve {
            levels: vec![0.1, 0.9],
            empirical: vec![0.12, 0.88],
            n_eval: 10,
        };
        let a = reliability_diagram(&[("m".into(), curve.clone())]);
        let b = reliability_diagram(&[("m".into(), curve)]);
        assert_eq!(a, b);
    }
}
