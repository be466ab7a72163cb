//! CSV tables and minimal SVG plots.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use spatter_core::analytics::{linfit, regime_curve, LayerFeatureRecord, LinearFit};
use spatter_core::process::normalize_hatch_angle;
use spatter_core::registration::{histogram, Histogram, LayerSignatureMap};

use crate::error::FormatError;
use crate::records::{write_csv, Table};
use crate::util::{create_dir, num};

pub const REGIME_HEADER: [&str; 5] = ["layer_index", "bar_id", "ved_j_mm3", "sa_um", "z_std_um"];
pub const LAYER_SUMMARY_HEADER: [&str; 5] = ["layer_index", "hatch_angle_deg", "mean_spatter_count", "sa_um", "records"];
pub const HATCH_TABLE_HEADER: [&str; 5] = ["layer", "scan_angle_deg", "hatch_angle_deg", "mean_spatter_count", "sa_um"];
pub const HISTOGRAM_HEADER: [&str; 3] = ["bin_lo", "bin_hi", "count"];

/// Per-layer Sa-vs-VED curves, layers ascending.
pub fn regime_rows(records: &[LayerFeatureRecord]) -> Vec<Vec<String>> {
    let mut layers: BTreeMap<u32, Vec<LayerFeatureRecord>> = BTreeMap::new();
    for r in records {
        layers.entry(r.layer_index).or_default().push(*r);
    }
    let mut rows = Vec::new();
    for (layer, recs) in layers {
        for p in regime_curve(&recs) {
            rows.push(vec![layer.to_string(), p.bar_id.to_string(), num(p.ved), num(p.sa), num(p.z_std)]);
        }
    }
    rows
}

/// Bar-averaged count and Sa per layer.
pub fn layer_summary(records: &[LayerFeatureRecord]) -> Vec<Vec<String>> {
    let mut layers: BTreeMap<u32, Vec<&LayerFeatureRecord>> = BTreeMap::new();
    for r in records {
        layers.entry(r.layer_index).or_default().push(r);
    }
    layers
        .into_iter()
        .map(|(layer, recs)| {
            let n = recs.len() as f64;
            vec![
                layer.to_string(),
                num(recs[0].hatch_angle),
                num(recs.iter().map(|r| r.mean_spatter_count).sum::<f64>() / n),
                num(recs.iter().map(|r| r.sa).sum::<f64>() / n),
                recs.len().to_string(),
            ]
        })
        .collect()
}

/// Mean spatter count per distinct value of `key`, ascending.
pub fn count_by(records: &[LayerFeatureRecord], key: impl Fn(&LayerFeatureRecord) -> f64) -> Vec<(f64, f64)> {
    let mut groups: Vec<(f64, f64, usize)> = Vec::new();
    for r in records {
        let k = key(r);
        match groups.iter_mut().find(|g| g.0 == k) {
            Some(g) => {
                g.1 += r.mean_spatter_count;
                g.2 += 1;
            }
            None => groups.push((k, r.mean_spatter_count, 1)),
        }
    }
    groups.sort_by(|a, b| a.0.total_cmp(&b.0));
    groups.into_iter().map(|(k, s, n)| (k, s / n as f64)).collect()
}

/// Fit over grouped means; `None` with fewer than two distinct keys.
pub fn group_fit(groups: &[(f64, f64)]) -> Option<LinearFit> {
    let (x, y): (Vec<f64>, Vec<f64>) = groups.iter().copied().unzip();
    linfit(&x, &y).ok()
}

pub fn angle_histogram(sig: &LayerSignatureMap, bin_deg: f64) -> Histogram {
    let bins = (360.0 / bin_deg).ceil().max(1.0) as usize;
    let edges: Vec<f64> = (0..=bins).map(|i| (i as f64 * bin_deg).min(360.0)).collect();
    let angles: Vec<f64> = sig.observations.iter().flat_map(|o| o.ejection_angles.iter().copied()).collect();
    histogram(&angles, &edges).expect("edges are increasing")
}

pub fn histogram_rows(h: &Histogram) -> Vec<Vec<String>> {
    h.counts
        .iter()
        .enumerate()
        .map(|(i, c)| vec![num(h.edges[i]), num(h.edges[i + 1]), c.to_string()])
        .collect()
}

/// Equal-width histogram of `values` over their range.
pub fn value_histogram(values: &[f64], bins: usize) -> Option<Histogram> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(lo.is_finite() && hi.is_finite()) {
        return None;
    }
    let hi = if hi > lo { hi } else { lo + 1.0 };
    let step = (hi - lo) / bins as f64;
    let mut edges: Vec<f64> = (0..bins).map(|i| lo + i as f64 * step).collect();
    // nudge the top edge so the maximum lands in the last bin
    edges.push(hi + step * 1e-9);
    histogram(values, &edges).ok()
}

/// A per-layer table in the hatch-angle layout, read from CSV.
pub fn hatch_rows(path: &Path) -> Result<Vec<Vec<String>>, FormatError> {
    let t = Table::read(path)?;
    let layer = t.column("layer")?;
    let scan = t.column("scan_angle_deg")?;
    let count = t.column("mean_spatter_count")?;
    let sa = t.column("sa_um")?;
    Ok((0..layer.len())
        .map(|i| {
            vec![
                num(layer[i]),
                num(scan[i]),
                num(normalize_hatch_angle(scan[i])),
                num(count[i]),
                num(sa[i]),
            ]
        })
        .collect())
}

#[derive(Default)]
pub enum Mark {
    #[default]
    Points,
    Line,
    Bars,
}

#[derive(Default)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    pub mark: Mark,
}

#[derive(Default)]
pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// Labels for x = 0, 1, 2, ...; numeric ticks when empty.
    pub x_categories: Vec<String>,
}

const W: f64 = 560.0;
const H: f64 = 380.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 36.0;
const BOTTOM: f64 = 52.0;
const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn range(vals: impl Iterator<Item = f64>, include_zero: bool) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in vals.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if include_zero {
        lo = lo.min(0.0);
        hi = hi.max(0.0);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (if include_zero && lo == 0.0 { 0.0 } else { lo - pad }, hi + pad)
}

impl Plot {
    pub fn to_svg(&self) -> String {
        let bars = self.series.iter().any(|s| matches!(s.mark, Mark::Bars));
        let (x0, x1) = if self.x_categories.is_empty() {
            range(self.series.iter().flat_map(|s| s.points.iter().map(|p| p.0)), false)
        } else {
            (-0.5, self.x_categories.len() as f64 - 0.5)
        };
        let (y0, y1) = range(self.series.iter().flat_map(|s| s.points.iter().map(|p| p.1)), bars);
        let pw = W - LEFT - RIGHT;
        let ph = H - TOP - BOTTOM;
        let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| TOP + ph - (y - y0) / (y1 - y0) * ph;

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{}</text>"#, LEFT + pw / 2.0, esc(&self.title));
        let _ = writeln!(
            s,
            r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
        );
        for (i, label) in self.x_categories.iter().enumerate() {
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                sx(i as f64),
                TOP + ph + 16.0,
                esc(label)
            );
        }
        for i in 0..=4 {
            let t = i as f64 / 4.0;
            let xv = x0 + t * (x1 - x0);
            let yv = y0 + t * (y1 - y0);
            if self.x_categories.is_empty() {
                let _ = writeln!(
                    s,
                    r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                    sx(xv),
                    TOP + ph + 16.0,
                    tick(xv, x1 - x0)
                );
            }
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
                LEFT - 6.0,
                sy(yv) + 4.0,
                tick(yv, y1 - y0)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            LEFT + pw / 2.0,
            H - 12.0,
            esc(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
            TOP + ph / 2.0,
            TOP + ph / 2.0,
            esc(&self.y_label)
        );
        let nbars = self.series.iter().filter(|s| matches!(s.mark, Mark::Bars)).count().max(1);
        let mut bar_k = 0;
        for (k, ser) in self.series.iter().enumerate() {
            let c = COLORS[k % COLORS.len()];
            match ser.mark {
                Mark::Points => {
                    for &(x, y) in ser.points.iter().filter(|p| p.0.is_finite() && p.1.is_finite()) {
                        let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{c}"/>"#, sx(x), sy(y));
                    }
                }
                Mark::Line => {
                    let pts: Vec<String> = ser
                        .points
                        .iter()
                        .filter(|p| p.0.is_finite() && p.1.is_finite())
                        .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                        .collect();
                    if !pts.is_empty() {
                        let _ = writeln!(
                            s,
                            r#"<polyline points="{}" fill="none" stroke="{c}" stroke-width="1.5"/>"#,
                            pts.join(" ")
                        );
                    }
                    for &(x, y) in ser.points.iter().filter(|p| p.0.is_finite() && p.1.is_finite()) {
                        let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="2" fill="{c}"/>"#, sx(x), sy(y));
                    }
                }
                Mark::Bars => {
                    // bar width from the tightest spacing of x values
                    let mut xs: Vec<f64> = ser.points.iter().map(|p| p.0).collect();
                    xs.sort_by(f64::total_cmp);
                    let gap = xs.windows(2).map(|w| w[1] - w[0]).fold(x1 - x0, f64::min);
                    let full = gap / (x1 - x0) * pw * 0.9;
                    let bw = full / nbars as f64;
                    for &(x, y) in &ser.points {
                        let left = sx(x) - full / 2.0 + bar_k as f64 * bw;
                        let (top, bottom) = (sy(y.max(0.0)), sy(y0.max(0.0).min(y)));
                        let _ = writeln!(
                            s,
                            r#"<rect x="{left:.2}" y="{top:.2}" width="{bw:.2}" height="{:.2}" fill="{c}"/>"#,
                            (bottom - top).max(0.0)
                        );
                    }
                    bar_k += 1;
                }
            }
            let ly = TOP + 12.0 + 16.0 * k as f64;
            let _ = writeln!(s, r#"<rect x="{:.2}" y="{:.2}" width="10" height="10" fill="{c}"/>"#, W - RIGHT + 10.0, ly - 9.0);
            let _ = writeln!(s, r#"<text x="{:.2}" y="{ly:.2}">{}</text>"#, W - RIGHT + 24.0, esc(&ser.name));
        }
        s.push_str("</svg>\n");
        s
    }

    pub fn write(&self, path: &Path) -> Result<(), FormatError> {
        std::fs::write(path, self.to_svg()).map_err(|e| FormatError::io(path, e))
    }
}

fn tick(v: f64, span: f64) -> String {
    let decimals = if span >= 50.0 {
        0
    } else if span >= 5.0 {
        1
    } else if span >= 0.5 {
        2
    } else {
        4
    };
    let s = format!("{v:.decimals$}");
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
        s[1..].to_string()
    } else {
        s
    }
}

pub fn histogram_plot(title: &str, x_label: &str, h: Option<&Histogram>) -> Plot {
    let points = h
        .map(|h| {
            h.counts
                .iter()
                .enumerate()
                .map(|(i, &c)| ((h.edges[i] + h.edges[i + 1]) / 2.0, c as f64))
                .collect()
        })
        .unwrap_or_default();
    Plot {
        title: title.into(),
        x_label: x_label.into(),
        y_label: "count".into(),
        series: vec![Series {
            name: "count".into(),
            points,
            mark: Mark::Bars,
        }],
        ..Default::default()
    }
}

fn fit_plot(title: &str, x_label: &str, groups: &[(f64, f64)]) -> Plot {
    let mut series = vec![Series {
        name: "mean count".into(),
        points: groups.to_vec(),
        mark: Mark::Points,
    }];
    if let Some(f) = group_fit(groups) {
        let (a, b) = (groups[0].0, groups[groups.len() - 1].0);
        series.push(Series {
            name: format!("fit R2={:.3}", f.r_squared),
            points: vec![(a, f.predict(a)), (b, f.predict(b))],
            mark: Mark::Line,
        });
    }
    Plot {
        title: title.into(),
        x_label: x_label.into(),
        y_label: "spatters per melt pool".into(),
        series,
        ..Default::default()
    }
}

pub struct ReportInputs<'a> {
    pub records: &'a [LayerFeatureRecord],
    pub hatch_table: Option<&'a Path>,
    pub signature: Option<&'a LayerSignatureMap>,
}

/// Writes the report bundle into `dir` and returns the files written in
/// order.
pub fn emit_report(dir: &Path, inp: &ReportInputs) -> Result<Vec<PathBuf>, FormatError> {
    create_dir(dir)?;
    let mut written = Vec::new();
    let mut csv = |name: &str, header: &[&str], rows: &[Vec<String>]| -> Result<(), FormatError> {
        let p = dir.join(name);
        write_csv(&p, header, rows)?;
        written.push(p);
        Ok(())
    };
    let records = inp.records;

    csv("regime.csv", &REGIME_HEADER, &regime_rows(records))?;
    csv("layer_summary.csv", &LAYER_SUMMARY_HEADER, &layer_summary(records))?;
    let by_power = count_by(records, |r| r.power);
    let by_speed = count_by(records, |r| r.speed / 1000.0);
    let pair_rows = |g: &[(f64, f64)]| g.iter().map(|&(k, c)| vec![num(k), num(c)]).collect::<Vec<_>>();
    csv("count_vs_power.csv", &["power_w", "mean_spatter_count"], &pair_rows(&by_power))?;
    csv("count_vs_speed.csv", &["speed_m_s", "mean_spatter_count"], &pair_rows(&by_speed))?;
    let sa: Vec<f64> = records.iter().map(|r| r.sa).collect();
    let sa_hist = value_histogram(&sa, 10);
    csv(
        "sa_histogram.csv",
        &HISTOGRAM_HEADER,
        &sa_hist.as_ref().map(histogram_rows).unwrap_or_default(),
    )?;
    let hatch = match inp.hatch_table {
        Some(p) => Some(hatch_rows(p)?),
        None => None,
    };
    if let Some(rows) = &hatch {
        csv("hatch_table.csv", &HATCH_TABLE_HEADER, rows)?;
    }
    let angle_hist = inp.signature.map(|s| angle_histogram(s, 30.0));
    if let Some(h) = &angle_hist {
        csv("angle_histogram.csv", &HISTOGRAM_HEADER, &histogram_rows(h))?;
    }

    let mut svg = |name: &str, plot: Plot| -> Result<(), FormatError> {
        let p = dir.join(name);
        plot.write(&p)?;
        written.push(p);
        Ok(())
    };
    let mut layers: BTreeMap<u32, Vec<LayerFeatureRecord>> = BTreeMap::new();
    for r in records {
        layers.entry(r.layer_index).or_default().push(*r);
    }
    svg(
        "regime.svg",
        Plot {
            title: "Layer roughness against energy density".into(),
            x_label: "VED (J/mm3)".into(),
            y_label: "Sa (um)".into(),
            series: layers
                .iter()
                .map(|(l, recs)| Series {
                    name: format!("layer {l}"),
                    points: regime_curve(recs).iter().map(|p| (p.ved, p.sa)).collect(),
                    mark: Mark::Line,
                })
                .collect(),
            ..Default::default()
        },
    )?;
    svg("count_vs_power.svg", fit_plot("Spatter count against power", "P (W)", &by_power))?;
    svg("count_vs_speed.svg", fit_plot("Spatter count against speed", "V (m/s)", &by_speed))?;
    svg("sa_histogram.svg", histogram_plot("Layer roughness", "Sa (um)", sa_hist.as_ref()))?;
    if let Some(rows) = &hatch {
        let col = |i: usize| -> Vec<(f64, f64)> {
            rows.iter().map(|r| (r[2].parse().unwrap_or(f64::NAN), r[i].parse().unwrap_or(f64::NAN))).collect()
        };
        svg(
            "hatch_table.svg",
            Plot {
                title: "Hatch angle effect".into(),
                x_label: "hatch angle (deg)".into(),
                y_label: "value".into(),
                series: vec![
                    Series {
                        name: "spatters/MP".into(),
                        points: col(3),
                        mark: Mark::Points,
                    },
                    Series {
                        name: "Sa (um)".into(),
                        points: col(4),
                        mark: Mark::Points,
                    },
                ],
                ..Default::default()
            },
        )?;
    }
    if let Some(sig) = inp.signature {
        svg(
            "angle_histogram.svg",
            histogram_plot("Ejection angle", "angle from scan direction (deg)", angle_hist.as_ref()),
        )?;
        let mut by_count: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
        for o in &sig.observations {
            by_count.entry(o.spatter_count).or_default().push((o.mp_center_mm[0], o.mp_center_mm[1]));
        }
        svg(
            "signature_map.svg",
            Plot {
                title: format!("Layer {} spatter signature", sig.layer_index),
                x_label: "x (mm)".into(),
                y_label: "y (mm)".into(),
                series: by_count
                    .into_iter()
                    .map(|(c, pts)| Series {
                        name: format!("{c} spatters"),
                        points: pts,
                        mark: Mark::Points,
                    })
                    .collect(),
                ..Default::default()
            },
        )?;
    }
    Ok(written)
}
