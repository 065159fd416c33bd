//! Small hand-rolled SVG renderers for the report figures: ROC curves and a
//! row-normalized confusion heatmap.

use ndarray::Array2;

use crate::metrics::RocCurve;

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

const PLOT: f64 = 420.0;
const MARGIN: f64 = 50.0;

fn x_px(fpr: f64) -> f64 {
    MARGIN + fpr * PLOT
}

fn y_px(tpr: f64) -> f64 {
    MARGIN + (1.0 - tpr) * PLOT
}

/// ROC plot with the chance diagonal and one polyline per labeled curve.
pub fn roc_plot(curves: &[(String, &RocCurve)]) -> String {
    let width = MARGIN * 2.0 + PLOT + 230.0;
    let height = MARGIN * 2.0 + PLOT;
    let mut out = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">"#
    );
    out.push_str(&format!(
        r#"<rect x="{}" y="{}" width="{PLOT}" height="{PLOT}" fill="white" stroke="black"/>"#,
        MARGIN, MARGIN
    ));
    out.push_str(&format!(
        r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#999" stroke-dasharray="6,4"/>"##,
        x_px(0.0),
        y_px(0.0),
        x_px(1.0),
        y_px(1.0)
    ));
    for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
        out.push_str(&format!(
            r#"<text x="{}" y="{}" text-anchor="middle">{tick}</text>"#,
            x_px(tick),
            MARGIN + PLOT + 18.0
        ));
        out.push_str(&format!(
            r#"<text x="{}" y="{}" text-anchor="end">{tick}</text>"#,
            MARGIN - 6.0,
            y_px(tick) + 4.0
        ));
    }
    out.push_str(&format!(
        r#"<text x="{}" y="{}" text-anchor="middle">false positive rate</text>"#,
        MARGIN + PLOT / 2.0,
        MARGIN + PLOT + 38.0
    ));
    out.push_str(&format!(
        r#"<text x="14" y="{}" transform="rotate(-90 14 {})" text-anchor="middle">true positive rate</text>"#,
        MARGIN + PLOT / 2.0,
        MARGIN + PLOT / 2.0
    ));

    for (i, (label, curve)) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let points: Vec<String> = curve
            .fpr
            .iter()
            .zip(&curve.tpr)
            .map(|(&x, &y)| format!("{:.2},{:.2}", x_px(x), y_px(y)))
            .collect();
        out.push_str(&format!(
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            points.join(" ")
        ));
        let ly = MARGIN + 14.0 + i as f64 * 16.0;
        out.push_str(&format!(
            r#"<line x1="{0}" y1="{ly}" x2="{1}" y2="{ly}" stroke="{color}" stroke-width="3"/>"#,
            MARGIN + PLOT + 12.0,
            MARGIN + PLOT + 34.0
        ));
        out.push_str(&format!(
            r#"<text x="{}" y="{}">{}</text>"#,
            MARGIN + PLOT + 40.0,
            ly + 4.0,
            escape(label)
        ));
    }
    out.push_str("</svg>");
    out
}

/// Blue-intensity heatmap of a row-normalized confusion matrix. Axis labels
/// are drawn when the matrix is small enough to stay readable.
pub fn confusion_heatmap(normalized: &Array2<f64>, categories: &[String]) -> String {
    let c = categories.len();
    let cell = (PLOT / c as f64).min(40.0);
    let grid = cell * c as f64;
    let label_space = 110.0;
    let width = MARGIN + grid + label_space;
    let height = MARGIN + grid + label_space;
    let mut out = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="10">"#
    );
    for i in 0..c {
        for j in 0..c {
            let v = normalized[(i, j)];
            let shade = (255.0 - v * 200.0) as u8;
            out.push_str(&format!(
                r##"<rect x="{:.1}" y="{:.1}" width="{cell:.1}" height="{cell:.1}" fill="rgb({shade},{shade},255)" stroke="#ddd" stroke-width="0.5"/>"##,
                MARGIN + j as f64 * cell,
                MARGIN + i as f64 * cell
            ));
            if c <= 25 && v > 0.0 {
                out.push_str(&format!(
                    r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="{:.0}">{:.2}</text>"#,
                    MARGIN + (j as f64 + 0.5) * cell,
                    MARGIN + (i as f64 + 0.62) * cell,
                    (cell * 0.3).max(6.0),
                    v
                ));
            }
        }
    }
    if c <= 40 {
        for (i, name) in categories.iter().enumerate() {
            out.push_str(&format!(
                r#"<text x="{:.1}" y="{:.1}" text-anchor="start">{}</text>"#,
                MARGIN + grid + 6.0,
                MARGIN + (i as f64 + 0.6) * cell,
                escape(name)
            ));
            let x = MARGIN + (i as f64 + 0.6) * cell;
            let y = MARGIN + grid + 8.0;
            out.push_str(&format!(
                r#"<text x="{x:.1}" y="{y:.1}" transform="rotate(60 {x:.1} {y:.1})" text-anchor="start">{}</text>"#,
                escape(name)
            ));
        }
    }
    out.push_str(&format!(
        r#"<text x="{}" y="{}" font-size="12">true category (rows) vs predicted (columns)</text>"#,
        MARGIN,
        MARGIN - 12.0
    ));
    out.push_str("</svg>");
    out
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roc_plot_produces_valid_svg_shell() {
        let curve = RocCurve {
            thresholds: vec![f64::INFINITY, 0.8, 0.2],
            fpr: vec![0.0, 0.0, 1.0],
            tpr: vec![0.0, 1.0, 1.0],
            auc: 1.0,
        };
        let svg = roc_plot(&[("perfect".to_string(), &curve)]);
        assert!(svg.starts_with("<svg"));
        assert!(svg.ends_with("</svg>"));
        assert!(svg.contains("polyline"));
        assert!(svg.contains("perfect"));
    }

    #[test]
    fn heatmap_emits_one_rect_per_cell() {
        let normalized =
            Array2::from_shape_vec((2, 2), vec![1.0, 0.0, 0.25, 0.75]).unwrap();
        let names = vec!["A".to_string(), "B".to_string()];
        let svg = confusion_heatmap(&normalized, &names);
        assert_eq!(svg.matches("<rect").count(), 4);
        assert!(svg.contains("0.75"));
    }
}
