//! Histograms of posterior samples, polarization metrics, and the 3×3 SVG
//! figure of sample histograms with oracle density overlays.

use std::fmt::Write as _;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::SampleSet;
use crate::oracle::PosteriorGrid;

pub const DOMAIN: (f64, f64) = (-3.0, 3.0);
pub const BINS: usize = 60;
pub const MODERATE_BAND: f64 = 0.5;
pub const EXTREME_THRESHOLD: f64 = 0.8;
/// A second peak counts when it stands this fraction of the global maximum
/// above the valley separating it from a higher peak.
pub const DIP_FRACTION: f64 = 0.10;
const SMOOTHING_BINS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub dropped_below: u64,
    pub dropped_above: u64,
}

impl Histogram {
    pub fn empty(lo: f64, hi: f64, bins: usize) -> Self {
        let bin_edges = (0..=bins)
            // exact for integer endpoints, so 0.1 is 0.1 and not 0.1000...09
            .map(|i| (lo * (bins - i) as f64 + hi * i as f64) / bins as f64)
            .collect();
        Histogram {
            bin_edges,
            counts: vec![0; bins],
            dropped_below: 0,
            dropped_above: 0,
        }
    }

    /// 60 bins of width 0.1 over [-3, 3].
    pub fn standard() -> Self {
        Self::empty(DOMAIN.0, DOMAIN.1, BINS)
    }

    pub fn from_samples(samples: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Contract("cannot bin an empty sample".into()));
        }
        let mut h = Self::standard();
        for &x in samples {
            h.add(x);
        }
        Ok(h)
    }

    pub fn n_bins(&self) -> usize {
        self.counts.len()
    }

    /// Counts `x` in its half-open bin, or as dropped when outside the domain.
    pub fn add(&mut self, x: f64) {
        let bins = self.n_bins();
        let (lo, hi) = (self.bin_edges[0], self.bin_edges[bins]);
        if x.is_nan() || x < lo {
            self.dropped_below += 1;
            return;
        }
        if x >= hi {
            self.dropped_above += 1;
            return;
        }
        let mut i = (((x - lo) / (hi - lo)) * bins as f64).floor() as usize;
        i = i.min(bins - 1);
        if x < self.bin_edges[i] {
            i -= 1;
        } else if x >= self.bin_edges[i + 1] {
            i += 1;
        }
        self.counts[i] += 1;
    }

    pub fn dropped(&self) -> u64 {
        self.dropped_below + self.dropped_above
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.dropped()
    }

    pub fn width(&self, i: usize) -> f64 {
        self.bin_edges[i + 1] - self.bin_edges[i]
    }

    /// Fraction of all samples in each bin.
    pub fn masses(&self) -> Vec<f64> {
        let total = self.total().max(1) as f64;
        self.counts.iter().map(|&c| c as f64 / total).collect()
    }

    /// Per-bin densities; they integrate to one minus the dropped fraction.
    pub fn densities(&self) -> Vec<f64> {
        self.masses()
            .iter()
            .enumerate()
            .map(|(i, m)| m / self.width(i))
            .collect()
    }

    pub fn centers(&self) -> Vec<f64> {
        let n = self.n_bins();
        let (lo, hi) = (self.bin_edges[0], self.bin_edges[n]);
        // same exact-for-integer-endpoints form as the edges
        (0..n)
            .map(|i| (lo * (2 * (n - i) - 1) as f64 + hi * (2 * i + 1) as f64) / (2 * n) as f64)
            .collect()
    }

    /// Mass in `[lo, hi]` assuming samples are spread uniformly within a bin.
    pub fn mass_between(&self, lo: f64, hi: f64) -> f64 {
        self.masses()
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let (a, b) = (self.bin_edges[i].max(lo), self.bin_edges[i + 1].min(hi));
                if b > a {
                    m * (b - a) / self.width(i)
                } else {
                    0.0
                }
            })
            .sum()
    }

    /// `bin_left,bin_right,count,density` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "bin_left,bin_right,count,density")?;
        let d = self.densities();
        for i in 0..self.n_bins() {
            writeln!(
                out,
                "{},{},{},{}",
                self.bin_edges[i],
                self.bin_edges[i + 1],
                self.counts[i],
                d[i]
            )?;
        }
        Ok(())
    }
}

/// Histogram of the pooled `p_a` samples.
pub fn bin(samples: &SampleSet) -> Result<Histogram> {
    Histogram::from_samples(&samples.p_a_samples)
}

/// Total-variation distance between a histogram and per-bin reference
/// masses; mass outside the bins on either side is one more cell.
pub fn tv_to_masses(h: &Histogram, reference: &[f64]) -> Result<f64> {
    if reference.len() != h.n_bins() {
        return Err(Error::Dimension(format!(
            "{} reference masses for {} bins",
            reference.len(),
            h.n_bins()
        )));
    }
    let masses = h.masses();
    let inside: f64 = masses.iter().zip(reference).map(|(a, b)| (a - b).abs()).sum();
    let outside_h = h.dropped() as f64 / h.total().max(1) as f64;
    let outside_ref = (1.0 - reference.iter().sum::<f64>()).max(0.0);
    Ok(0.5 * (inside + (outside_h - outside_ref).abs()))
}

/// TV distance between a histogram and the oracle binned on the same edges.
pub fn tv_distance(h: &Histogram, oracle: &PosteriorGrid) -> Result<f64> {
    tv_to_masses(h, &oracle.bin_probabilities(&h.bin_edges))
}

/// TV distance between a histogram and its reflection about zero.
pub fn mirror_tv(h: &Histogram) -> f64 {
    let m = h.masses();
    let n = m.len();
    let total = h.total().max(1) as f64;
    let inside: f64 = (0..n).map(|i| (m[i] - m[n - 1 - i]).abs()).sum();
    let outside = (h.dropped_below as f64 - h.dropped_above as f64).abs() / total;
    0.5 * (inside + 2.0 * outside)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolarizationMetrics {
    /// Mass with |p_a| <= 0.5.
    pub moderate_band_mass: f64,
    /// Mass with |p_a| >= 0.8.
    pub extreme_mass: f64,
    pub mode_locations: Vec<f64>,
    #[serde(rename = "bimodal")]
    pub bimodality: bool,
    /// Mass with 0.5 < |p_a| < 0.8.
    #[serde(skip)]
    pub middle_mass: f64,
}

/// Either input [`metrics`] accepts.
#[derive(Debug, Clone, Copy)]
pub enum Density<'a> {
    Samples(&'a Histogram),
    Oracle(&'a PosteriorGrid),
}

pub fn metrics(input: Density<'_>) -> PolarizationMetrics {
    let (band, middle, extreme, xs, ys) = match input {
        Density::Oracle(g) => {
            let band = g.probability_between(-MODERATE_BAND, MODERATE_BAND);
            let middle = g.probability_between(-EXTREME_THRESHOLD, -MODERATE_BAND)
                + g.probability_between(MODERATE_BAND, EXTREME_THRESHOLD);
            let extreme = g.probability_between(f64::NEG_INFINITY, -EXTREME_THRESHOLD)
                + g.probability_between(EXTREME_THRESHOLD, f64::INFINITY)
                + g.outside_probability();
            (band, middle, extreme, g.grid.clone(), g.density())
        }
        Density::Samples(h) => {
            let band = h.mass_between(-MODERATE_BAND, MODERATE_BAND);
            let middle = h.mass_between(-EXTREME_THRESHOLD, -MODERATE_BAND)
                + h.mass_between(MODERATE_BAND, EXTREME_THRESHOLD);
            let dropped = h.dropped() as f64 / h.total().max(1) as f64;
            let extreme = h.mass_between(f64::NEG_INFINITY, -EXTREME_THRESHOLD)
                + h.mass_between(EXTREME_THRESHOLD, f64::INFINITY)
                + dropped;
            (band, middle, extreme, h.centers(), moving_average(&h.densities(), SMOOTHING_BINS))
        }
    };
    let mode_locations: Vec<f64> = significant_modes(&ys, DIP_FRACTION)
        .into_iter()
        .map(|i| xs[i])
        .collect();
    PolarizationMetrics {
        moderate_band_mass: band,
        extreme_mass: extreme,
        bimodality: mode_locations.len() >= 2,
        mode_locations,
        middle_mass: middle,
    }
}

/// Centered moving average; windows are truncated at the ends.
pub fn moving_average(ys: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    (0..ys.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(ys.len());
            ys[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// Indices of the modes of `ys`. Interior local maxima are scanned left to
/// right; a peak joins the mode before it when the dip between them is less
/// than `dip_fraction` of the global maximum. Each mode sits at its highest
/// point, or midway between highest points of equal height. Plateaus count
/// once, at their middle.
pub fn significant_modes(ys: &[f64], dip_fraction: f64) -> Vec<usize> {
    let n = ys.len();
    let global = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if n < 3 || !(global > 0.0) {
        return Vec::new();
    }
    // runs of equal values that are strictly higher than both neighbours
    let mut peaks = Vec::new();
    let mut i = 1;
    while i < n - 1 {
        let mut j = i;
        while j + 1 < n && ys[j + 1] == ys[i] {
            j += 1;
        }
        if j < n - 1 && ys[i] > ys[i - 1] && ys[j] > ys[j + 1] {
            peaks.push((i, j));
        }
        i = j + 1;
    }
    let threshold = dip_fraction * global;
    // heights this close are ties, so mirror-image peaks stay symmetric
    let tie = 1e-9 * global;
    let mut modes: Vec<(f64, Vec<usize>)> = Vec::new();
    for (start, end) in peaks {
        let (h, at) = (ys[start], (start + end) / 2);
        if let Some((top, tops)) = modes.last_mut() {
            let from = tops[tops.len() - 1];
            let valley = ys[from..=start].iter().copied().fold(f64::INFINITY, f64::min);
            if top.min(h) - valley < threshold {
                if h > *top + tie {
                    *top = h;
                    *tops = vec![at];
                } else if h >= *top - tie {
                    tops.push(at);
                }
                continue;
            }
        }
        modes.push((h, vec![at]));
    }
    modes
        .into_iter()
        .map(|(_, tops)| (tops[0] + tops[tops.len() - 1]) / 2)
        .collect()
}

/// One cell of the figure grid.
#[derive(Debug, Clone, Default)]
pub struct Panel {
    pub histogram: Option<Histogram>,
    pub overlay: Option<PosteriorGrid>,
    pub metrics: Option<PolarizationMetrics>,
}

/// Column labels (environments), row labels (observation counts) and
/// `rows × columns` panels in row-major order.
#[derive(Debug, Clone)]
pub struct FigureInput {
    pub columns: Vec<String>,
    pub rows: Vec<usize>,
    pub panels: Vec<Panel>,
}

const PANEL_W: f64 = 300.0;
const PANEL_H: f64 = 210.0;
const MARGIN_LEFT: f64 = 50.0;
const MARGIN_TOP: f64 = 50.0;
const PLOT_W: f64 = 250.0;
const PLOT_H: f64 = 140.0;

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Renders the grid as a standalone SVG document. Output depends only on
/// the inputs.
pub fn emit_figure(input: &FigureInput) -> Result<String> {
    let (rows, cols) = (input.rows.len(), input.columns.len());
    if rows == 0 || cols == 0 || input.panels.len() != rows * cols {
        return Err(Error::Dimension(format!(
            "{} panels for a {rows}×{cols} grid",
            input.panels.len()
        )));
    }
    let width = MARGIN_LEFT + cols as f64 * PANEL_W;
    let height = MARGIN_TOP + rows as f64 * PANEL_H;
    let mut svg = String::new();
    let w = &mut svg;
    // String formatting never fails.
    let _ = writeln!(w, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif">"#
    );
    let _ = writeln!(w, r#"<rect x="0" y="0" width="{width:.0}" height="{height:.0}" fill="white"/>"#);
    let _ = writeln!(
        w,
        r#"<text x="{:.1}" y="22" font-size="16" text-anchor="middle">Political opinion p_a after observations</text>"#,
        width / 2.0
    );

    for (r, &n_obs) in input.rows.iter().enumerate() {
        for (c, env) in input.columns.iter().enumerate() {
            let panel = &input.panels[r * cols + c];
            let ox = MARGIN_LEFT + c as f64 * PANEL_W;
            let oy = MARGIN_TOP + r as f64 * PANEL_H;
            write_panel(w, panel, env, n_obs, ox, oy);
        }
    }
    let _ = writeln!(w, "</svg>");
    Ok(svg)
}

fn write_panel(w: &mut String, panel: &Panel, env: &str, n_obs: usize, ox: f64, oy: f64) {
    let (lo, hi) = DOMAIN;
    let px = |x: f64| ox + (x - lo) / (hi - lo) * PLOT_W;
    let hist_densities = panel.histogram.as_ref().map(|h| h.densities());
    let overlay: Option<(Vec<f64>, Vec<f64>)> = panel.overlay.as_ref().map(|g| {
        g.grid
            .iter()
            .zip(g.density())
            .filter(|(x, _)| **x >= lo && **x <= hi)
            .map(|(x, d)| (*x, d))
            .unzip()
    });
    let y_max = hist_densities
        .iter()
        .flatten()
        .chain(overlay.iter().flat_map(|(_, d)| d.iter()))
        .copied()
        .fold(0.0f64, f64::max)
        .max(1e-12)
        * 1.1;
    let base = oy + 20.0 + PLOT_H;
    let py = |d: f64| base - d / y_max * PLOT_H;

    let _ = writeln!(w, r#"<g class="panel" id="panel-{}-{}">"#, xml_escape(env), n_obs);
    let _ = writeln!(
        w,
        r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">{}, N = {}</text>"#,
        ox + PLOT_W / 2.0,
        oy + 12.0,
        xml_escape(env),
        n_obs
    );
    let _ = writeln!(
        w,
        r##"<rect x="{:.1}" y="{:.1}" width="{PLOT_W:.1}" height="{PLOT_H:.1}" fill="none" stroke="#444" stroke-width="0.8"/>"##,
        ox,
        oy + 20.0
    );
    for tick in [-3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0] {
        let _ = writeln!(
            w,
            r#"<text x="{:.1}" y="{:.1}" font-size="9" text-anchor="middle">{tick:.0}</text>"#,
            px(tick),
            base + 11.0
        );
    }
    if let (Some(h), Some(d)) = (&panel.histogram, &hist_densities) {
        let _ = writeln!(w, r##"<g class="bars" fill="#7a9cc6">"##);
        for (i, &density) in d.iter().enumerate() {
            if density <= 0.0 {
                continue;
            }
            let (x0, x1) = (px(h.bin_edges[i]), px(h.bin_edges[i + 1]));
            let top = py(density);
            let _ = writeln!(
                w,
                r#"<rect x="{x0:.2}" y="{top:.2}" width="{:.2}" height="{:.2}"/>"#,
                x1 - x0,
                base - top
            );
        }
        let _ = writeln!(w, "</g>");
    }
    if let Some((xs, ds)) = &overlay {
        let points: Vec<String> = xs
            .iter()
            .zip(ds)
            .map(|(x, d)| format!("{:.2},{:.2}", px(*x), py(*d)))
            .collect();
        let _ = writeln!(
            w,
            r##"<polyline class="oracle" fill="none" stroke="#c0392b" stroke-width="1.2" points="{}"/>"##,
            points.join(" ")
        );
    }
    if let Some(m) = &panel.metrics {
        let _ = writeln!(
            w,
            r#"<text x="{:.1}" y="{:.1}" font-size="9">moderate {:.3}  extreme {:.3}  {}</text>"#,
            ox + 4.0,
            oy + 32.0,
            m.moderate_band_mass,
            m.extreme_mass,
            if m.bimodality { "bimodal" } else { "unimodal" }
        );
    }
    let _ = writeln!(w, "</g>");
}
