//! Static SVG report figures built from plain markup.

use std::fmt::Write as _;

use dermfuse_core::metrics::{ConfusionCounts, RocCurve};
use dermfuse_core::train::TrainHistory;

const TRAIN_COLOUR: &str = "#1f77b4";
const VAL_COLOUR: &str = "#ff7f0e";

pub fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

fn open(out: &mut String, width: u32, height: u32) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
}

fn text(out: &mut String, x: f64, y: f64, anchor: &str, extra: &str, body: &str) {
    let _ = writeln!(
        out,
        r#"<text x="{x:.1}" y="{y:.1}" text-anchor="{anchor}"{extra}>{}</text>"#,
        escape(body)
    );
}

/// A rectangular plotting area mapping data ranges onto pixels.
struct Panel {
    left: f64,
    top: f64,
    width: f64,
    height: f64,
    x: (f64, f64),
    y: (f64, f64),
}

impl Panel {
    fn px(&self, x: f64) -> f64 {
        let span = self.x.1 - self.x.0;
        self.left + if span > 0.0 { (x - self.x.0) / span * self.width } else { 0.0 }
    }

    fn py(&self, y: f64) -> f64 {
        let span = self.y.1 - self.y.0;
        self.top + self.height - if span > 0.0 { (y - self.y.0) / span * self.height } else { 0.0 }
    }

    fn frame(&self, out: &mut String, title: &str, x_label: &str, y_label: &str) {
        let _ = writeln!(
            out,
            r#"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="black"/>"#,
            self.left, self.top, self.width, self.height
        );
        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let yv = self.y.0 + f * (self.y.1 - self.y.0);
            let xv = self.x.0 + f * (self.x.1 - self.x.0);
            let (yp, xp) = (self.py(yv), self.px(xv));
            let _ = writeln!(
                out,
                r##"<line x1="{:.1}" y1="{yp:.1}" x2="{:.1}" y2="{yp:.1}" stroke="#dddddd"/>"##,
                self.left,
                self.left + self.width
            );
            text(out, self.left - 6.0, yp + 4.0, "end", "", &format!("{yv:.2}"));
            text(out, xp, self.top + self.height + 16.0, "middle", "", &tick(xv));
        }
        text(out, self.left + self.width / 2.0, self.top - 10.0, "middle", r#" font-size="14""#, title);
        text(out, self.left + self.width / 2.0, self.top + self.height + 34.0, "middle", "", x_label);
        let (lx, ly) = (self.left - 44.0, self.top + self.height / 2.0);
        text(out, lx, ly, "middle", &format!(r#" transform="rotate(-90 {lx:.1} {ly:.1})""#), y_label);
    }

    fn polyline(&self, out: &mut String, points: &[(f64, f64)], colour: &str, dash: bool) {
        let coords: Vec<String> = points.iter().map(|&(x, y)| format!("{:.2},{:.2}", self.px(x), self.py(y))).collect();
        let dash = if dash { r#" stroke-dasharray="4 3""# } else { "" };
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="2"{dash}/>"#,
            coords.join(" ")
        );
    }

    fn legend(&self, out: &mut String, entries: &[(&str, &str)]) {
        for (i, (name, colour)) in entries.iter().enumerate() {
            let y = self.top + 14.0 + 16.0 * i as f64;
            let x = self.left + self.width - 80.0;
            let _ = writeln!(
                out,
                r#"<line x1="{x:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="{colour}" stroke-width="2"/>"#,
                y - 4.0,
                x + 18.0,
                y - 4.0
            );
            text(out, x + 24.0, y, "start", "", name);
        }
    }
}

fn tick(v: f64) -> String {
    if (v - v.round()).abs() < 1e-9 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

/// Accuracy and loss curves per epoch, train and validation, side by side.
pub fn history_chart(history: &TrainHistory, title: &str) -> String {
    let mut out = String::new();
    open(&mut out, 900, 380);
    text(&mut out, 450.0, 22.0, "middle", r#" font-size="16""#, title);
    let last = history.epochs.len().saturating_sub(1).max(1) as f64;
    let series =
        |f: fn(&dermfuse_core::train::EpochRecord) -> f64| -> Vec<(f64, f64)> { history.epochs.iter().map(|r| (r.epoch as f64, f(r))).collect() };
    let train_acc = series(|r| r.train_accuracy);
    let val_acc = series(|r| r.val_accuracy);
    let train_loss = series(|r| r.train_loss);
    let val_loss = series(|r| r.val_loss);
    let max_loss = train_loss
        .iter()
        .chain(&val_loss)
        .map(|p| p.1)
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::max);
    let panels = [
        (
            Panel {
                left: 70.0,
                top: 60.0,
                width: 340.0,
                height: 260.0,
                x: (0.0, last),
                y: (0.0, 1.0),
            },
            "Accuracy",
            &train_acc,
            &val_acc,
        ),
        (
            Panel {
                left: 520.0,
                top: 60.0,
                width: 340.0,
                height: 260.0,
                x: (0.0, last),
                y: (0.0, if max_loss > 0.0 { max_loss * 1.05 } else { 1.0 }),
            },
            "Loss",
            &train_loss,
            &val_loss,
        ),
    ];
    for (panel, name, train, val) in &panels {
        panel.frame(&mut out, name, "epoch", &name.to_lowercase());
        panel.polyline(&mut out, train, TRAIN_COLOUR, false);
        panel.polyline(&mut out, val, VAL_COLOUR, false);
        panel.legend(&mut out, &[("train", TRAIN_COLOUR), ("validation", VAL_COLOUR)]);
    }
    let (loss_panel, ..) = &panels[1];
    if let Some(best) = history.epochs.get(history.best_epoch) {
        let _ = writeln!(
            out,
            r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="none" stroke="black"/>"#,
            loss_panel.px(best.epoch as f64),
            loss_panel.py(best.val_loss)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// 2×2 heatmap, rows actual and columns predicted, benign first.
pub fn confusion_heatmap(counts: &ConfusionCounts, title: &str) -> String {
    let mut out = String::new();
    open(&mut out, 420, 400);
    text(&mut out, 210.0, 28.0, "middle", r#" font-size="16""#, title);
    let cells = [[counts.tn, counts.fp], [counts.fn_, counts.tp]];
    let max = cells.iter().flatten().copied().max().unwrap_or(0).max(1) as f64;
    let (left, top, size) = (120.0, 70.0, 130.0);
    let names = ["benign", "malignant"];
    for (r, row) in cells.iter().enumerate() {
        for (c, &n) in row.iter().enumerate() {
            let shade = 245.0 - 200.0 * (n as f64 / max);
            let g = shade.round() as u8;
            let (x, y) = (left + c as f64 * size, top + r as f64 * size);
            let _ = writeln!(
                out,
                r#"<rect x="{x:.1}" y="{y:.1}" width="{size:.1}" height="{size:.1}" fill="rgb({g},{g},255)" stroke="black"/>"#
            );
            let fill = if shade < 140.0 { r#" fill="white""# } else { "" };
            text(
                &mut out,
                x + size / 2.0,
                y + size / 2.0 + 7.0,
                "middle",
                &format!(r#" font-size="20"{fill}"#),
                &n.to_string(),
            );
        }
        text(&mut out, left - 8.0, top + r as f64 * size + size / 2.0 + 4.0, "end", "", names[r]);
        text(
            &mut out,
            left + r as f64 * size + size / 2.0,
            top + 2.0 * size + 18.0,
            "middle",
            "",
            names[r],
        );
    }
    text(&mut out, left + size, top + 2.0 * size + 40.0, "middle", "", "predicted");
    let (lx, ly) = (30.0, top + size);
    text(
        &mut out,
        lx,
        ly,
        "middle",
        &format!(r#" transform="rotate(-90 {lx:.1} {ly:.1})""#),
        "actual",
    );
    out.push_str("</svg>\n");
    out
}

/// ROC polyline against the chance diagonal, with the area in the legend.
pub fn roc_chart(curve: &RocCurve, title: &str) -> String {
    let mut out = String::new();
    open(&mut out, 460, 440);
    let panel = Panel {
        left: 80.0,
        top: 50.0,
        width: 340.0,
        height: 320.0,
        x: (0.0, 1.0),
        y: (0.0, 1.0),
    };
    panel.frame(&mut out, title, "false positive rate", "true positive rate");
    panel.polyline(&mut out, &[(0.0, 0.0), (1.0, 1.0)], "#888888", true);
    let points: Vec<(f64, f64)> = curve.points.iter().map(|p| (p.fpr, p.tpr)).collect();
    panel.polyline(&mut out, &points, TRAIN_COLOUR, false);
    text(
        &mut out,
        panel.px(0.95),
        panel.py(0.05),
        "end",
        r#" font-size="14""#,
        &format!("AUC = {:.4}", curve.auc),
    );
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use dermfuse_core::metrics::roc;
    use dermfuse_core::train::EpochRecord;

    #[test]
    fn escapes_markup() {
        assert_eq!(escape(r#"a<b & "c" 'd'>"#), "a&lt;b &amp; &quot;c&quot; &apos;d&apos;&gt;");
    }

    #[test]
    fn history_has_one_vertex_per_epoch() {
        let epochs = (0..7)
            .map(|e| EpochRecord {
                epoch: e,
                train_loss: 1.0 / (e + 1) as f64,
                train_accuracy: 0.5 + e as f64 / 20.0,
                val_loss: 1.2 / (e + 1) as f64,
                val_accuracy: 0.5,
            })
            .collect();
        let svg = history_chart(&TrainHistory { epochs, best_epoch: 6 }, "x & y");
        assert_eq!(svg.matches("<polyline").count(), 4);
        let first = svg.split("points=\"").nth(1).unwrap().split('"').next().unwrap();
        assert_eq!(first.split(' ').count(), 7);
        assert!(svg.contains("x &amp; y"));
    }

    #[test]
    fn roc_reports_area() {
        let curve = roc(&[0.9, 0.8, 0.3, 0.1], &[1, 0, 1, 0]).unwrap();
        assert!(roc_chart(&curve, "ROC").contains("AUC = 0.7500"));
    }

    #[test]
    fn heatmap_shows_each_count() {
        let svg = confusion_heatmap(&ConfusionCounts::new(27, 28, 332, 23), "c");
        for n in ["27", "28", "332", "23"] {
            assert!(svg.contains(&format!(">{n}</text>")), "{n}");
        }
        assert_eq!(svg.matches("<rect").count(), 5);
    }
}
