//! SVG overlays of a query and one counterfactual, one stacked panel per
//! channel. Coordinates are printed with fixed precision so identical inputs
//! always produce identical bytes.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{ensure, Result};
use cfx_core::data::Series;
use cfx_core::engine::Mask;
use cfx_core::io::write_atomic;

const QUERY_COLOR: &str = "#3b3b3b";
const CF_COLOR: &str = "#d62728";
const SHADE_COLOR: &str = "#ff9896";
const HEAT_COLOR: &str = "#1f77b4";

#[derive(Clone, Debug)]
pub struct OverlayOptions {
    pub width: f64,
    pub panel_height: f64,
    pub title: String,
    /// Defaults to `ch 0`, `ch 1`, ...
    pub channel_names: Option<Vec<String>>,
}

impl Default for OverlayOptions {
    fn default() -> Self {
        OverlayOptions {
            width: 960.0,
            panel_height: 110.0,
            title: String::new(),
            channel_names: None,
        }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Runs `[start, len)` per channel where the mask is set and the
/// counterfactual actually differs from the query.
pub fn shaded_runs(query: &Series, cf: &Series, mask: &Mask) -> Vec<Vec<(usize, usize)>> {
    let (t_len, c_len) = query.shape();
    (0..c_len)
        .map(|c| {
            let mut runs = Vec::new();
            let mut start = None;
            for t in 0..=t_len {
                let on = t < t_len && mask.get(t, c) && query.get(t, c) != cf.get(t, c);
                match (on, start) {
                    (true, None) => start = Some(t),
                    (false, Some(s)) => {
                        runs.push((s, t - s));
                        start = None;
                    }
                    _ => {}
                }
            }
            runs
        })
        .collect()
}

/// Renders the overlay. `attribution`, when given, is a `T x C` row-major
/// importance map drawn as a heat strip under each panel.
pub fn render_overlay(
    query: &Series,
    cf: &Series,
    mask: &Mask,
    attribution: Option<&[f32]>,
    options: &OverlayOptions,
) -> Result<String> {
    ensure!(
        query.shape() == cf.shape() && query.shape() == mask.shape(),
        "overlay shapes differ: query {:?}, counterfactual {:?}, mask {:?}",
        query.shape(),
        cf.shape(),
        mask.shape()
    );
    if let Some(a) = attribution {
        ensure!(
            a.len() == query.len(),
            "attribution has {} values, expected {}",
            a.len(),
            query.len()
        );
    }
    let (t_len, c_len) = query.shape();
    let (left, right, top) = (70.0, 20.0, 40.0);
    let strip = if attribution.is_some() { 10.0 } else { 0.0 };
    let gap = 14.0;
    let panel = options.panel_height;
    let plot_w = options.width - left - right;
    let height = top + c_len as f64 * (panel + strip + gap) + 10.0;
    let dx = plot_w / t_len as f64;
    let x_at = |t: f64| left + t * dx;

    let mut svg = String::new();
    let w = &mut svg;
    writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{:.0}" height="{:.0}" viewBox="0 0 {:.0} {:.0}" font-family="sans-serif" font-size="11">"#,
        options.width, height, options.width, height
    )?;
    writeln!(
        w,
        r#"<rect x="0" y="0" width="{:.0}" height="{:.0}" fill="white"/>"#,
        options.width, height
    )?;
    writeln!(
        w,
        r#"<text x="{left:.0}" y="18" font-size="13">{}</text>"#,
        escape(&options.title)
    )?;
    let legend_x = options.width - right - 230.0;
    writeln!(
        w,
        r#"<g id="legend"><line x1="{lx:.1}" y1="14" x2="{:.1}" y2="14" stroke="{QUERY_COLOR}" stroke-width="1.5"/><text x="{:.1}" y="18">query</text><line x1="{:.1}" y1="14" x2="{:.1}" y2="14" stroke="{CF_COLOR}" stroke-width="1.5"/><text x="{:.1}" y="18">counterfactual</text><rect x="{:.1}" y="8" width="12" height="10" fill="{SHADE_COLOR}" fill-opacity="0.45"/><text x="{:.1}" y="18">modified</text></g>"#,
        legend_x + 18.0,
        legend_x + 22.0,
        legend_x + 60.0,
        legend_x + 78.0,
        legend_x + 82.0,
        legend_x + 165.0,
        legend_x + 181.0,
        lx = legend_x,
    )?;

    let runs = shaded_runs(query, cf, mask);
    let max_attr = attribution
        .map(|a| a.iter().fold(0f32, |m, v| m.max(v.abs())))
        .unwrap_or(0.0);

    for c in 0..c_len {
        let y0 = top + c as f64 * (panel + strip + gap);
        let name = options
            .channel_names
            .as_ref()
            .and_then(|n| n.get(c).cloned())
            .unwrap_or_else(|| format!("ch {c}"));
        let (q, x) = (query.channel(c), cf.channel(c));
        let lo = q.iter().chain(&x).fold(f32::INFINITY, |m, &v| m.min(v));
        let hi = q.iter().chain(&x).fold(f32::NEG_INFINITY, |m, &v| m.max(v));
        let (lo, hi) = if hi > lo {
            (f64::from(lo), f64::from(hi))
        } else {
            (f64::from(lo) - 1.0, f64::from(hi) + 1.0)
        };
        let pad = 0.06 * (hi - lo);
        let y_at = |v: f32| y0 + panel - (f64::from(v) - lo + pad) / (hi - lo + 2.0 * pad) * panel;

        writeln!(w, r#"<g id="panel-{c}">"#)?;
        writeln!(
            w,
            r##"<rect x="{left:.1}" y="{y0:.1}" width="{plot_w:.1}" height="{panel:.1}" fill="none" stroke="#cccccc"/>"##
        )?;
        writeln!(
            w,
            r#"<text x="8" y="{:.1}">{}</text>"#,
            y0 + panel / 2.0 + 4.0,
            escape(&name)
        )?;
        for &(start, len) in &runs[c] {
            writeln!(
                w,
                r#"<rect class="modified" x="{:.2}" y="{y0:.1}" width="{:.2}" height="{panel:.1}" fill="{SHADE_COLOR}" fill-opacity="0.45"/>"#,
                x_at(start as f64),
                len as f64 * dx
            )?;
        }
        for (series, color, class) in [(&q, QUERY_COLOR, "query"), (&x, CF_COLOR, "counterfactual")]
        {
            let mut points = String::with_capacity(series.len() * 14);
            for (t, &v) in series.iter().enumerate() {
                if t > 0 {
                    points.push(' ');
                }
                write!(points, "{:.2},{:.2}", x_at(t as f64 + 0.5), y_at(v))?;
            }
            writeln!(
                w,
                r#"<polyline class="{class}" points="{points}" fill="none" stroke="{color}" stroke-width="1.2"/>"#
            )?;
        }
        if let Some(a) = attribution {
            let ys = y0 + panel + 2.0;
            for t in 0..t_len {
                let v = a[t * c_len + c].abs();
                if v == 0.0 || max_attr == 0.0 {
                    continue;
                }
                writeln!(
                    w,
                    r#"<rect class="heat" x="{:.2}" y="{ys:.1}" width="{:.2}" height="{:.1}" fill="{HEAT_COLOR}" fill-opacity="{:.3}"/>"#,
                    x_at(t as f64),
                    dx,
                    strip - 3.0,
                    v / max_attr
                )?;
            }
        }
        writeln!(w, "</g>")?;
    }
    writeln!(w, "</svg>")?;
    Ok(svg)
}

pub fn write_overlay(
    path: &Path,
    query: &Series,
    cf: &Series,
    mask: &Mask,
    attribution: Option<&[f32]>,
    options: &OverlayOptions,
) -> Result<()> {
    let svg = render_overlay(query, cf, mask, attribution, options)?;
    write_atomic(path, svg.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(values: &[f32]) -> Series {
        Series::new("s", values.len() / 2, 2, values.to_vec()).unwrap()
    }

    #[test]
    fn identical_series_have_no_shading() {
        let q = series(&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        let svg =
            render_overlay(&q, &q, &Mask::ones(3, 2), None, &OverlayOptions::default()).unwrap();
        assert!(!svg.contains(r#"class="modified""#));
        assert_eq!(svg.matches("<g id=\"panel-").count(), 2);
    }

    #[test]
    fn full_mask_shades_every_panel() {
        let q = series(&[0.0; 6]);
        let cf = series(&[1.0; 6]);
        let svg =
            render_overlay(&q, &cf, &Mask::ones(3, 2), None, &OverlayOptions::default()).unwrap();
        assert_eq!(svg.matches(r#"class="modified""#).count(), 2);
        assert_eq!(
            shaded_runs(&q, &cf, &Mask::ones(3, 2)),
            vec![vec![(0, 3)], vec![(0, 3)]]
        );
    }

    #[test]
    fn output_is_deterministic_and_escaped() {
        let q = series(&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        let cf = series(&[0.0, 1.5, 2.0, 3.0, 4.0, 5.5]);
        let opts = OverlayOptions {
            title: "a < b & c".into(),
            ..OverlayOptions::default()
        };
        let a = render_overlay(&q, &cf, &Mask::ones(3, 2), Some(&[1.0; 6]), &opts).unwrap();
        assert_eq!(
            a,
            render_overlay(&q, &cf, &Mask::ones(3, 2), Some(&[1.0; 6]), &opts).unwrap()
        );
        assert!(a.contains("a &lt; b &amp; c"));
        assert_eq!(a.matches(r#"class="heat""#).count(), 6);
    }
}
