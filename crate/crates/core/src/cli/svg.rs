//! SVG timelines: one colored band for the predicted symbols and, when
//! ground truth is known, a grey band below it.

use std::fmt::Write;

use crate::sequence::runs;

const WIDTH: f64 = 800.0;
const BAND: f64 = 24.0;
const GAP: f64 = 6.0;
const MARGIN: f64 = 10.0;

pub const PALETTE: &[&str] = &[
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#bcbd22", "#17becf",
    "#7f7f7f",
];

fn grey(class: usize) -> String {
    let level = [0x40, 0x80, 0xb0, 0xd8][class % 4];
    format!("#{level:02x}{level:02x}{level:02x}")
}

fn band(out: &mut String, labels: &[usize], y: f64, class: &str, fill: impl Fn(usize) -> String) {
    let scale = WIDTH / labels.len().max(1) as f64;
    for (sym, start, end) in runs(labels) {
        let _ = writeln!(
            out,
            r#"<rect class="{class}" data-symbol="{sym}" x="{:.3}" y="{y}" width="{:.3}" height="{BAND}" fill="{}"/>"#,
            MARGIN + start as f64 * scale,
            (end - start) as f64 * scale,
            fill(sym)
        );
    }
}

/// Renders `pred` (and `gt` if given) as a horizontal timeline.
pub fn timeline_svg(video_id: &str, pred: &[usize], gt: Option<&[usize]>) -> String {
    let bands = if gt.is_some() { 2.0 } else { 1.0 };
    let height = 2.0 * MARGIN + 16.0 + bands * BAND + (bands - 1.0) * GAP;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{height}">"#,
        WIDTH + 2.0 * MARGIN
    );
    let _ = writeln!(
        out,
        r#"<text x="{MARGIN}" y="{}" font-family="sans-serif" font-size="12">{}</text>"#,
        MARGIN + 10.0,
        escape(video_id)
    );
    let top = MARGIN + 16.0;
    band(&mut out, pred, top, "pred", |s| PALETTE[s % PALETTE.len()].to_string());
    if let Some(gt) = gt {
        band(&mut out, gt, top + BAND + GAP, "gt", grey);
    }
    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_rect_per_run() {
        let svg = timeline_svg("v<1>", &[0, 0, 1, 1, 1, 0], Some(&[2, 2, 2, 0, 0, 0]));
        assert_eq!(svg.matches(r#"class="pred""#).count(), 3);
        assert_eq!(svg.matches(r#"class="gt""#).count(), 2);
        assert!(svg.contains("v&lt;1&gt;"));
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn no_gt_band_without_labels() {
        let svg = timeline_svg("v", &[3; 5], None);
        assert_eq!(svg.matches("<rect").count(), 1);
        assert!(svg.contains(PALETTE[3]));
    }
}
