//! Plain SVG renderings of the evaluation outputs.

use std::fmt::Write;

use super::{ConfusionMatrix, ScoreDistribution};
use crate::data_model::MotionGrade;

const GRADE_COLORS: [&str; 3] = ["#1b9e77", "#d95f02", "#7570b3"];

fn header(width: u32, height: u32) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    )
}

/// Heatmap with counts and row-normalized shading.
pub fn confusion_svg(cm: &ConfusionMatrix, title: &str) -> String {
    let cell = 80;
    let (left, top) = (110, 50);
    let mut s = header(left + 3 * cell + 20, top + 3 * cell + 50);
    let _ = writeln!(s, "<text x=\"{}\" y=\"25\" text-anchor=\"middle\" font-size=\"14\">{}</text>", left + 3 * cell / 2, escape(title));
    for (t, truth) in MotionGrade::ALL.iter().enumerate() {
        let row_total = cm.row_total(*truth).max(1) as f64;
        let y = top + t as u32 * cell;
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>", left - 8, y + cell / 2 + 4, truth.abbrev());
        for p in 0..3 {
            let x = left + p as u32 * cell;
            let count = cm.counts[t][p];
            let shade = count as f64 / row_total;
            let level = (255.0 * (1.0 - 0.8 * shade)).round() as u8;
            let _ = writeln!(
                s,
                "<rect x=\"{x}\" y=\"{y}\" width=\"{cell}\" height=\"{cell}\" fill=\"rgb({level},{level},255)\" stroke=\"#444\"/>\n\
                 <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{count}</text>",
                x + cell / 2,
                y + cell / 2 + 4
            );
        }
    }
    for (p, grade) in MotionGrade::ALL.iter().enumerate() {
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>", left + p as u32 * cell + cell / 2, top + 3 * cell + 18, grade.abbrev());
    }
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">predicted</text>", left + 3 * cell / 2, top + 3 * cell + 38);
    s.push_str("</svg>\n");
    s
}

/// Scatter of 2-D coordinates colored by grade.
pub fn projection_svg(points: &[[f64; 2]], labels: &[MotionGrade], title: &str) -> String {
    let size = 480.0;
    let pad = 30.0;
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in points {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let scale = |v: f64, k: usize| {
        let span = (hi[k] - lo[k]).max(1e-12);
        pad + (v - lo[k]) / span * (size - 2.0 * pad)
    };
    let mut s = header(size as u32 + 120, size as u32);
    let _ = writeln!(s, "<text x=\"{}\" y=\"18\" text-anchor=\"middle\" font-size=\"14\">{}</text>", size / 2.0, escape(title));
    for (p, g) in points.iter().zip(labels) {
        let _ = writeln!(
            s,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{}\" fill-opacity=\"0.7\"/>",
            scale(p[0], 0),
            size - scale(p[1], 1),
            GRADE_COLORS[g.index()]
        );
    }
    for (i, g) in MotionGrade::ALL.iter().enumerate() {
        let y = 40 + i as u32 * 20;
        let _ = writeln!(
            s,
            "<circle cx=\"{}\" cy=\"{y}\" r=\"5\" fill=\"{}\"/><text x=\"{}\" y=\"{}\">{}</text>",
            size as u32 + 15,
            GRADE_COLORS[i],
            size as u32 + 25,
            y + 4,
            g.abbrev()
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Box plots (quartiles with the median annotated) of each affinity score,
/// grouped by truth grade.
pub fn distribution_svg(dist: &ScoreDistribution, title: &str) -> String {
    let (width, height) = (720.0, 360.0);
    let (left, top, bottom) = (50.0, 40.0, 60.0);
    let plot_h = height - top - bottom;
    let y_of = |v: f64| top + (1.0 - (v + 1.0) / 2.0) * plot_h;
    let mut s = header(width as u32, height as u32);
    let _ = writeln!(s, "<text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{}</text>", width / 2.0, escape(title));
    for tick in [-1.0, -0.5, 0.0, 0.5, 1.0] {
        let y = y_of(tick);
        let _ = writeln!(
            s,
            "<line x1=\"{left}\" x2=\"{}\" y1=\"{y:.1}\" y2=\"{y:.1}\" stroke=\"#ddd\"/><text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\">{tick:.1}</text>",
            width - 10.0,
            left - 5.0,
            y + 4.0
        );
    }
    let group_w = (width - left - 10.0) / 3.0;
    let box_w = group_w / 4.0;
    for (t, truth) in MotionGrade::ALL.iter().enumerate() {
        let gx = left + t as f64 * group_w;
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">truth {}</text>",
            gx + group_w / 2.0,
            height - bottom + 35.0,
            truth.abbrev()
        );
        for k in 0..3 {
            let q = dist.cells[t][k];
            let x = gx + (k as f64 + 0.5) * box_w;
            let (y1, ym, y3) = (y_of(q.q3), y_of(q.median), y_of(q.q1));
            let _ = writeln!(
                s,
                "<rect x=\"{x:.1}\" y=\"{y1:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"{}\" fill-opacity=\"0.5\" stroke=\"#333\"/>\n\
                 <line x1=\"{x:.1}\" x2=\"{:.1}\" y1=\"{ym:.1}\" y2=\"{ym:.1}\" stroke=\"#000\" stroke-width=\"2\"/>\n\
                 <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"9\">{:.2}</text>",
                box_w * 0.8,
                (y3 - y1).max(0.5),
                GRADE_COLORS[k],
                x + box_w * 0.8,
                x + box_w * 0.4,
                ym - 4.0,
                q.median
            );
        }
    }
    for (k, g) in MotionGrade::ALL.iter().enumerate() {
        let x = left + k as f64 * 120.0;
        let y = height - 12.0;
        let _ = writeln!(
            s,
            "<rect x=\"{x:.1}\" y=\"{:.1}\" width=\"10\" height=\"10\" fill=\"{}\"/><text x=\"{:.1}\" y=\"{y:.1}\">MoGrAS-{}</text>",
            y - 9.0,
            GRADE_COLORS[k],
            x + 14.0,
            g.abbrev()
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
