//! SVG drawing of a fitted SAMDP over the t-SNE map.

use std::fmt::Write as _;
use std::path::Path;

use crate::aggregation::ClusterModel;
use crate::embedding::EmbeddedDataset;
use crate::error::{Result, SamdpError};
use crate::samdp::SamdpModel;
use crate::textio;

pub const SVG_TAG: &str = "samdp-svg";

const SIZE: f64 = 800.0;
const MARGIN: f64 = 40.0;
const MAX_RADIUS: f64 = 30.0;
const MAX_STROKE: f64 = 6.0;

/// Linear blue-to-red ramp; `t` is clamped to [0, 1].
pub fn value_color(t: f64) -> String {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let r = (255.0 * t).round() as u8;
    let b = (255.0 * (1.0 - t)).round() as u8;
    format!("#{r:02x}00{b:02x}")
}

struct Frame {
    min: [f64; 2],
    scale: f64,
}

impl Frame {
    fn fit(points: &EmbeddedDataset) -> Frame {
        let mut min = [f64::INFINITY; 2];
        let mut max = [f64::NEG_INFINITY; 2];
        for p in points.points.iter_rows() {
            for a in 0..2 {
                min[a] = min[a].min(p[a]);
                max[a] = max[a].max(p[a]);
            }
        }
        let span = (max[0] - min[0]).max(max[1] - min[1]);
        let scale = if span > 0.0 { (SIZE - 2.0 * MARGIN) / span } else { 1.0 };
        Frame { min, scale }
    }

    fn map(&self, x: f64, y: f64) -> (f64, f64) {
        (
            MARGIN + (x - self.min[0]) * self.scale,
            // screen y grows downwards
            SIZE - MARGIN - (y - self.min[1]) * self.scale,
        )
    }
}

/// Renders points coloured by value, one circle per non-empty cluster and
/// one arrow per positive entry of P.
pub fn render_svg(embedded: &EmbeddedDataset, clusters: &ClusterModel, model: &SamdpModel) -> Result<String> {
    let k = model.k();
    if k == 0 || embedded.is_empty() {
        return Err(SamdpError::invalid("nothing to draw: empty model or embedding"));
    }
    if clusters.k() != k || clusters.labels.len() != embedded.len() {
        return Err(SamdpError::invalid(format!(
            "inconsistent inputs: clusters K={} N={}, model K={k}, embedding N={}",
            clusters.k(),
            clusters.labels.len(),
            embedded.len()
        )));
    }
    let frame = Frame::fit(embedded);
    let values: Vec<f64> = embedded.points.iter_rows().map(|p| p[2]).collect();
    let vmin = values.iter().copied().fold(f64::INFINITY, f64::min);
    let vmax = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let vspan = vmax - vmin;

    // cluster centres on the map, from the member points
    let mut centre = vec![[0.0f64; 2]; k];
    let mut size = vec![0usize; k];
    for (p, &l) in embedded.points.iter_rows().zip(&clusters.labels) {
        centre[l][0] += p[0];
        centre[l][1] += p[1];
        size[l] += 1;
    }
    let max_size = size.iter().copied().max().unwrap_or(0).max(1) as f64;
    let radius = |n: usize| MAX_RADIUS * (n as f64 / max_size).sqrt();
    let pos: Vec<(f64, f64)> = (0..k)
        .map(|i| {
            let n = size[i].max(1) as f64;
            frame.map(centre[i][0] / n, centre[i][1] / n)
        })
        .collect();

    let mut out = String::new();
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    let _ = writeln!(out, "<!-- #{SVG_TAG} v1 K={k} N={} -->", embedded.len());
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SIZE}\" height=\"{SIZE}\" viewBox=\"0 0 {SIZE} {SIZE}\">"
    );
    out.push_str(
        "<defs><marker id=\"arrow\" viewBox=\"0 0 10 10\" refX=\"10\" refY=\"5\" markerWidth=\"6\" markerHeight=\"6\" orient=\"auto\"><path d=\"M0,0 L10,5 L0,10 z\" fill=\"#333333\"/></marker></defs>\n",
    );
    out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n<g id=\"points\">\n");
    for (p, v) in embedded.points.iter_rows().zip(&values) {
        let (x, y) = frame.map(p[0], p[1]);
        let t = if vspan > 0.0 { (v - vmin) / vspan } else { 0.0 };
        let _ = writeln!(
            out,
            "<circle class=\"point\" cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"1.5\" fill=\"{}\"/>",
            value_color(t)
        );
    }
    out.push_str("</g>\n<g id=\"edges\">\n");
    for i in 0..k {
        for j in 0..k {
            let p = model.p.get(i, j);
            // segments always change cluster, so the diagonal stays empty
            if !(p > 0.0) || i == j {
                continue;
            }
            let (x1, y1) = pos[i];
            let (x2, y2) = pos[j];
            let (dx, dy) = (x2 - x1, y2 - y1);
            let len = (dx * dx + dy * dy).sqrt().max(1e-9);
            // stop at the rims of the two circles
            let (s, e) = (radius(size[i]).min(len / 2.0), radius(size[j]).min(len / 2.0));
            let (ax, ay) = (x1 + dx * s / len, y1 + dy * s / len);
            let (bx, by) = (x2 - dx * e / len, y2 - dy * e / len);
            let _ = writeln!(
                out,
                "<line class=\"edge\" data-from=\"{i}\" data-to=\"{j}\" x1=\"{ax:.2}\" y1=\"{ay:.2}\" x2=\"{bx:.2}\" y2=\"{by:.2}\" stroke=\"#333333\" stroke-width=\"{:.2}\" marker-end=\"url(#arrow)\"/>",
                MAX_STROKE * p
            );
            let _ = writeln!(
                out,
                "<text class=\"edge-label\" x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\">{p:.2}</text>",
                (ax + bx) / 2.0,
                (ay + by) / 2.0
            );
        }
    }
    out.push_str("</g>\n<g id=\"clusters\">\n");
    for i in 0..k {
        if size[i] == 0 {
            continue;
        }
        let (x, y) = pos[i];
        let _ = writeln!(
            out,
            "<circle class=\"centroid\" data-cluster=\"{i}\" cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"{:.2}\" fill=\"none\" stroke=\"#000000\" stroke-width=\"1.5\"/>",
            radius(size[i])
        );
        let _ = writeln!(
            out,
            "<text class=\"centroid-label\" x=\"{x:.2}\" y=\"{y:.2}\" font-size=\"14\" text-anchor=\"middle\">{i}</text>"
        );
    }
    out.push_str("</g>\n</svg>\n");
    Ok(out)
}

pub fn save_svg(path: &Path, embedded: &EmbeddedDataset, clusters: &ClusterModel, model: &SamdpModel) -> Result<()> {
    textio::write_text(path, &render_svg(embedded, clusters, model)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregation::ClusterConfig;
    use crate::matrix::Matrix;
    use crate::samdp::{fit_samdp, FitParams};
    use crate::trajectory::tests::rec;
    use crate::trajectory::TrajectoryDataset;

    fn fixture() -> (EmbeddedDataset, ClusterModel, SamdpModel) {
        // one episode 0 0 1 1: a single skill 0 -> 1 and nothing out of 1
        let recs: Vec<_> = (0..4)
            .map(|s| {
                let mut r = rec(0, s, if s == 3 { 1.0 } else { 0.0 }, s == 3, &[0.0]);
                r.value_estimate = s as f64;
                r
            })
            .collect();
        let ds = TrajectoryDataset::from_records(recs).unwrap();
        let pts = Matrix::from_rows(&[[0.0, 0.0, 0.0], [1.0, 0.0, 1.0], [5.0, 5.0, 2.0], [6.0, 5.0, 3.0]]).unwrap();
        let labels = vec![0, 0, 1, 1];
        let cfg = ClusterConfig { k: 2, ..Default::default() };
        let clusters = ClusterModel::from_labels(&pts, labels.clone(), cfg).unwrap();
        let model = fit_samdp(&labels, 2, &ds, &FitParams { f_flicker: 0, ..Default::default() }).unwrap();
        (EmbeddedDataset::new(pts).unwrap(), clusters, model)
    }

    fn count(doc: &roxmltree::Document, class: &str) -> usize {
        doc.descendants().filter(|n| n.attribute("class") == Some(class)).count()
    }

    #[test]
    fn single_edge_and_ramp_ends() {
        let (e, c, m) = fixture();
        assert_eq!(m.p.row(0), &[0.0, 1.0]);
        assert_eq!(m.p.row(1), &[0.0, 0.0]);
        let svg = render_svg(&e, &c, &m).unwrap();
        let doc = roxmltree::Document::parse(&svg).unwrap();
        assert_eq!(count(&doc, "edge"), 1);
        assert_eq!(count(&doc, "centroid"), 2);
        let fills: Vec<&str> = doc
            .descendants()
            .filter(|n| n.attribute("class") == Some("point"))
            .map(|n| n.attribute("fill").unwrap())
            .collect();
        assert_eq!(fills.first(), Some(&"#0000ff"));
        assert_eq!(fills.last(), Some(&"#ff0000"));
        let label = doc
            .descendants()
            .find(|n| n.attribute("class") == Some("edge-label"))
            .unwrap();
        assert_eq!(label.text(), Some("1.00"));
    }

    #[test]
    fn mismatched_inputs_rejected() {
        let (e, mut c, m) = fixture();
        c.labels.pop();
        assert!(render_svg(&e, &c, &m).is_err());
    }
}
