//! Quadrature posterior over agent politics.
//!
//! Given `(p_a, a_a)`, every observation is an independent draw from the same
//! environment, so its expected likelihood weight `W(p_a, a_a)` is the same
//! for all of them and the posterior after `n` observations is
//!
//! ```text
//! f(p_a) ∝ N(p_a; 0, prior_sd) ∫ W(p_a, a_a)^n da_a
//! ```
//!
//! `W` is a sum over outlets and sides of a two-dimensional integral over the
//! news politics and truth. The truth axis enters only through
//! `Q(b) = E[q(max(0, t_n), b)]`, the probability of a "true" judgment when
//! the scrutiny bound is `b`; `Q` is integrated by Gauss-Legendre with panels
//! split at 0 and at `b`, then tabulated in `b` as a Chebyshev series.

use std::io::{self, Write};
use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{motivational_discount, normal_log_pdf, normal_pdf, MediaEnvironment, ModelParams, OutletSpec};

pub const MIN_POLITICS_NODES: usize = 64;
pub const MIN_TRUTH_NODES: usize = 64;
pub const MIN_ANALYTIC_NODES: usize = 32;
const CHEBYSHEV_DEGREE: usize = 48;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadratureConfig {
    /// Gauss-Legendre nodes per panel on the news-politics axis.
    pub politics_nodes: usize,
    /// Gauss-Legendre nodes per panel on the news-truth axis.
    pub truth_nodes: usize,
    /// Gauss-Legendre nodes over the analytic trait.
    pub analytic_nodes: usize,
    /// Half-width of each news integration range, in standard deviations.
    pub span_sd: f64,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig {
            politics_nodes: 64,
            truth_nodes: 64,
            analytic_nodes: 32,
            span_sd: 6.0,
        }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("oracle.quadrature.politics_nodes", self.politics_nodes, MIN_POLITICS_NODES),
            ("oracle.quadrature.truth_nodes", self.truth_nodes, MIN_TRUTH_NODES),
            ("oracle.quadrature.analytic_nodes", self.analytic_nodes, MIN_ANALYTIC_NODES),
        ];
        for (key, got, min) in checks {
            if got < min {
                return Err(Error::config(key, format!("needs at least {min} nodes, got {got}")));
            }
        }
        if !(self.span_sd > 0.0 && self.span_sd.is_finite()) {
            return Err(Error::config("oracle.quadrature.span_sd", "must be finite and > 0"));
        }
        Ok(())
    }

    /// Every node count doubled.
    pub fn refined(&self) -> Self {
        QuadratureConfig {
            politics_nodes: 2 * self.politics_nodes,
            truth_nodes: 2 * self.truth_nodes,
            analytic_nodes: 2 * self.analytic_nodes,
            ..*self
        }
    }
}

/// Uniform grid of `points` values over `[-half_width, half_width]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub points: usize,
    pub half_width: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            points: 801,
            half_width: 4.0,
        }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.points < 3 {
            return Err(Error::config("oracle.grid.points", "must be >= 3"));
        }
        if !(self.half_width > 0.0 && self.half_width.is_finite()) {
            return Err(Error::config("oracle.grid.half_width", "must be finite and > 0"));
        }
        Ok(())
    }

    pub fn nodes(&self) -> Vec<f64> {
        let h = self.spacing();
        // symmetric construction: grid[i] == -grid[points - 1 - i] exactly
        (0..self.points)
            .map(|i| {
                let j = i as f64 - (self.points - 1) as f64 / 2.0;
                j * h
            })
            .collect()
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / (self.points - 1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub quadrature: QuadratureConfig,
    pub grid: GridConfig,
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        self.quadrature.validate()?;
        self.grid.validate()
    }
}

/// Gauss-Legendre nodes and weights on [-1, 1].
#[derive(Debug, Clone)]
struct Rule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl Rule {
    fn new(degree: usize) -> Self {
        let degree = NonZeroUsize::new(degree).expect("quadrature degree must be positive");
        let (nodes, weights) = GaussLegendre::new(degree)
            .as_node_weight_pairs()
            .iter()
            .copied()
            .unzip();
        Rule { nodes, weights }
    }

    /// Nodes and weights mapped onto `[a, b]`.
    fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (b + a);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(x, w)| (mid + half * x, half * w))
    }

    fn integrate(&self, a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        self.mapped(a, b).map(|(x, w)| w * f(x)).sum()
    }
}

/// Chebyshev series on `[lo, hi]`.
#[derive(Debug, Clone)]
struct Chebyshev {
    lo: f64,
    hi: f64,
    coeffs: Vec<f64>,
}

impl Chebyshev {
    fn fit(lo: f64, hi: f64, degree: usize, f: impl Fn(f64) -> f64) -> Self {
        let n = degree as f64;
        let values: Vec<f64> = (0..degree)
            .map(|k| {
                let x = (std::f64::consts::PI * (k as f64 + 0.5) / n).cos();
                f(0.5 * (hi + lo) + 0.5 * (hi - lo) * x)
            })
            .collect();
        let coeffs = (0..degree)
            .map(|j| {
                let s: f64 = values
                    .iter()
                    .enumerate()
                    .map(|(k, v)| v * (std::f64::consts::PI * j as f64 * (k as f64 + 0.5) / n).cos())
                    .sum();
                2.0 * s / n
            })
            .collect();
        Chebyshev { lo, hi, coeffs }
    }

    fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    #[inline]
    fn eval(&self, x: f64) -> f64 {
        let t = (2.0 * x - self.lo - self.hi) / (self.hi - self.lo);
        let (mut b1, mut b2) = (0.0, 0.0);
        for &c in self.coeffs[1..].iter().rev() {
            let b0 = 2.0 * t * b1 - b2 + c;
            b2 = b1;
            b1 = b0;
        }
        t * b1 - b2 + 0.5 * self.coeffs[0]
    }
}

/// `Q(b)` for one outlet's truth distribution, truncated to `span_sd`.
#[derive(Debug, Clone)]
struct TrustCurve {
    truth_mean: f64,
    truth_sd: f64,
    lo: f64,
    hi: f64,
    /// Truncated mass of the truth density.
    mass: f64,
    table: Option<Chebyshev>,
}

impl TrustCurve {
    fn new(outlet: &OutletSpec, b_range: Option<(f64, f64)>, rule: &Rule, span_sd: f64) -> Self {
        let lo = outlet.truth_mean - span_sd * outlet.truth_sd;
        let hi = outlet.truth_mean + span_sd * outlet.truth_sd;
        let mut curve = TrustCurve {
            truth_mean: outlet.truth_mean,
            truth_sd: outlet.truth_sd,
            lo,
            hi,
            mass: 0.0,
            table: None,
        };
        let density = |t: f64| normal_pdf(t, curve.truth_mean, curve.truth_sd);
        curve.mass = if lo < 0.0 && hi > 0.0 {
            rule.integrate(lo, 0.0, density) + rule.integrate(0.0, hi, density)
        } else {
            rule.integrate(lo, hi, density)
        };
        if let Some((b_lo, b_hi)) = b_range {
            let table = Chebyshev::fit(b_lo, b_hi, CHEBYSHEV_DEGREE, |b| curve.direct(b, rule));
            curve.table = Some(table);
        }
        curve
    }

    /// Quadrature of `q(max(0, t), b) N(t)` with panels split at 0 and `b`.
    fn direct(&self, b: f64, rule: &Rule) -> f64 {
        let density = |t: f64| normal_pdf(t, self.truth_mean, self.truth_sd);
        let start = self.lo.max(0.0);
        if b == 0.0 {
            return rule.integrate(start, self.hi, density);
        }
        let split = b.clamp(start, self.hi.max(start));
        let rising = rule.integrate(start, split, |t| t / (2.0 * b) * density(t));
        let saturating = rule.integrate(split, self.hi, |t| (1.0 - b / (2.0 * t)) * density(t));
        rising + saturating
    }

    #[inline]
    fn eval(&self, b: f64, rule: &Rule) -> f64 {
        match &self.table {
            Some(table) if table.contains(b) => table.eval(b),
            _ => self.direct(b, rule),
        }
    }
}

/// Precomputed pieces of `W(p_a, a_a)` for one environment.
#[derive(Debug, Clone)]
pub struct WeightModel {
    env: MediaEnvironment,
    params: ModelParams,
    quadrature: QuadratureConfig,
    politics_rule: Rule,
    truth_rule: Rule,
    curves: Vec<TrustCurve>,
}

/// Politics-axis node for a fixed `p_a`: `w N(p_n)`, the two likelihood
/// kernels and the discount, all independent of `a_a`.
#[derive(Debug, Clone, Copy)]
struct PoliticsNode {
    outlet: usize,
    mass: f64,
    keep: f64,
    flip: f64,
    discount: f64,
}

impl WeightModel {
    pub fn new(env: &MediaEnvironment, params: &ModelParams, quadrature: &QuadratureConfig) -> Result<Self> {
        env.validate()?;
        params.validate()?;
        quadrature.validate()?;
        let truth_rule = Rule::new(quadrature.truth_nodes);
        // b_a = a_a - d_m with d_m in (0, discount_scale]
        let b_lo = params.analytic_low - params.discount_scale;
        let b_range = (b_lo > 1e-3).then_some((b_lo, params.analytic_high));
        let curves = env
            .outlets
            .iter()
            .map(|o| TrustCurve::new(o, b_range, &truth_rule, quadrature.span_sd))
            .collect();
        Ok(WeightModel {
            env: env.clone(),
            params: *params,
            quadrature: *quadrature,
            politics_rule: Rule::new(quadrature.politics_nodes),
            truth_rule,
            curves,
        })
    }

    pub fn env(&self) -> &MediaEnvironment {
        &self.env
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    /// Probability that an item from outlet `outlet` with scrutiny bound
    /// `b_a` is judged true, integrated over its truth distribution.
    pub fn trust(&self, outlet: usize, b_a: f64) -> f64 {
        self.curves[outlet].eval(b_a, &self.truth_rule)
    }

    fn politics_nodes(&self, p_a: f64) -> Vec<PoliticsNode> {
        let sd_l = self.params.likelihood_sd;
        let span = self.quadrature.span_sd;
        let mut nodes = Vec::new();
        for (o, outlet) in self.env.outlets.iter().enumerate() {
            let weight = self.env.weights[o];
            if weight == 0.0 {
                continue;
            }
            let sides: &[(bool, f64)] = if outlet.bimodal {
                &[(true, 0.5), (false, 0.5)]
            } else {
                &[(true, 1.0)]
            };
            for &(side, side_weight) in sides {
                let center = outlet.politics_center(side);
                let (a, b) = (center - span * outlet.politics_sd, center + span * outlet.politics_sd);
                // the discount has a kink at p_n = p_a
                let panels: &[(f64, f64)] = if p_a > a && p_a < b { &[(a, p_a), (p_a, b)] } else { &[(a, b)] };
                for &(lo, hi) in panels {
                    for (p_n, w) in self.politics_rule.mapped(lo, hi) {
                        nodes.push(PoliticsNode {
                            outlet: o,
                            mass: weight * side_weight * w * normal_pdf(p_n, center, outlet.politics_sd),
                            keep: normal_pdf(p_n, p_a, sd_l),
                            flip: normal_pdf(-p_n, p_a, sd_l),
                            discount: motivational_discount(p_n, p_a, &self.params),
                        });
                    }
                }
            }
        }
        nodes
    }

    fn weight_from_nodes(&self, nodes: &[PoliticsNode], analytic: f64) -> f64 {
        nodes
            .iter()
            .map(|n| {
                let curve = &self.curves[n.outlet];
                let trust = curve.eval((analytic - n.discount).max(0.0), &self.truth_rule);
                n.mass * (trust * n.keep + (curve.mass - trust) * n.flip)
            })
            .sum()
    }

    /// Expected likelihood weight of one observation.
    pub fn expected_weight(&self, p_a: f64, analytic: f64) -> Result<f64> {
        if !(analytic >= self.params.analytic_low && analytic <= self.params.analytic_high) {
            return Err(Error::Contract(format!(
                "analytic trait {analytic} outside [{}, {}]",
                self.params.analytic_low, self.params.analytic_high
            )));
        }
        Ok(self.weight_from_nodes(&self.politics_nodes(p_a), analytic))
    }

    /// `log W(p_a, a)` for each `a` in `analytic`.
    pub fn log_weights(&self, p_a: f64, analytic: &[f64]) -> Vec<f64> {
        let nodes = self.politics_nodes(p_a);
        analytic
            .iter()
            .map(|&a| self.weight_from_nodes(&nodes, a).ln())
            .collect()
    }
}

/// Expected likelihood weight `W(p_a, a_a)` of a single observation.
pub fn expected_weight(
    p_a: f64,
    analytic: f64,
    env: &MediaEnvironment,
    params: &ModelParams,
    quadrature: &QuadratureConfig,
) -> Result<f64> {
    WeightModel::new(env, params, quadrature)?.expected_weight(p_a, analytic)
}

/// `log W` on the politics grid times the analytic quadrature nodes, shared
/// by every observation count.
#[derive(Debug, Clone)]
pub struct WeightTable {
    env: MediaEnvironment,
    params: ModelParams,
    config: OracleConfig,
    grid: Vec<f64>,
    /// Log of the analytic quadrature weights.
    log_analytic_weights: Vec<f64>,
    /// Row-major `[grid point][analytic node]`.
    log_w: Vec<f64>,
    tail_points: Vec<(f64, f64)>,
    tail_log_w: Vec<f64>,
}

impl WeightTable {
    pub fn compute(env: &MediaEnvironment, params: &ModelParams, config: &OracleConfig) -> Result<Self> {
        config.validate()?;
        let model = WeightModel::new(env, params, &config.quadrature)?;
        let analytic_rule = Rule::new(config.quadrature.analytic_nodes);
        let (analytic, weights): (Vec<f64>, Vec<f64>) =
            analytic_rule.mapped(params.analytic_low, params.analytic_high).unzip();
        let grid = config.grid.nodes();
        let rows = |points: &[f64]| -> Vec<f64> {
            points
                .par_iter()
                .flat_map_iter(|&p| model.log_weights(p, &analytic))
                .collect()
        };
        let log_w = rows(&grid);

        // GL points beyond the grid on both sides, for the outside-mass report
        let hw = config.grid.half_width;
        let reach = hw + 8.0 * params.prior_politics_sd;
        let tail_rule = Rule::new(32);
        let tail_points: Vec<(f64, f64)> = tail_rule
            .mapped(hw, reach)
            .flat_map(|(x, w)| [(x, w), (-x, w)])
            .collect();
        let tail_xs: Vec<f64> = tail_points.iter().map(|(x, _)| *x).collect();
        let tail_log_w = rows(&tail_xs);

        Ok(WeightTable {
            env: env.clone(),
            params: *params,
            config: *config,
            grid,
            log_analytic_weights: weights.iter().map(|w| w.ln()).collect(),
            log_w,
            tail_points,
            tail_log_w,
        })
    }

    /// Unnormalized log posterior at row `row` of `log_w`.
    fn log_unnormalized(&self, x: f64, log_w: &[f64], n_observations: usize) -> f64 {
        let n = n_observations as f64;
        let terms = self.log_analytic_weights.iter().zip(log_w).map(|(lw, w)| lw + n * w);
        normal_log_pdf(x, 0.0, self.params.prior_politics_sd) + log_sum_exp(terms)
    }

    /// Posterior after `n_observations`; zero gives the prior.
    pub fn posterior(&self, n_observations: usize) -> PosteriorGrid {
        let k = self.log_analytic_weights.len();
        let log_f: Vec<f64> = self
            .grid
            .iter()
            .enumerate()
            .map(|(i, &x)| self.log_unnormalized(x, &self.log_w[i * k..(i + 1) * k], n_observations))
            .collect();
        let meta = GridMeta {
            env: self.env.name.clone(),
            n_observations,
            params: self.params,
            quadrature: self.config.quadrature,
            outside_mass: 0.0,
        };
        let (log_density, log_z) = normalize_trapezoid(&log_f, self.config.grid.spacing());
        let outside_mass: f64 = self
            .tail_points
            .iter()
            .enumerate()
            .map(|(i, &(x, w))| {
                w * (self.log_unnormalized(x, &self.tail_log_w[i * k..(i + 1) * k], n_observations) - log_z).exp()
            })
            .sum();
        PosteriorGrid {
            grid: self.grid.clone(),
            log_density,
            meta: GridMeta { outside_mass, ..meta },
        }
    }
}

/// Shifts `log_f` so its trapezoid integral with spacing `h` is one.
/// Returns the normalized values and the log normalizer.
fn normalize_trapezoid(log_f: &[f64], h: f64) -> (Vec<f64>, f64) {
    let peak = log_f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let last = log_f.len() - 1;
    let sum: f64 = log_f.iter().map(|v| (v - peak).exp()).sum::<f64>()
        - 0.5 * ((log_f[0] - peak).exp() + (log_f[last] - peak).exp());
    let log_z = peak + (h * sum).ln();
    (log_f.iter().map(|v| v - log_z).collect(), log_z)
}

fn log_sum_exp(terms: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = terms.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + terms.map(|t| (t - m).exp()).sum::<f64>().ln()
}

/// Posterior over `p_a` after `n_observations` from `env`.
pub fn posterior(
    env: &MediaEnvironment,
    params: &ModelParams,
    n_observations: usize,
    config: &OracleConfig,
) -> Result<PosteriorGrid> {
    Ok(WeightTable::compute(env, params, config)?.posterior(n_observations))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMeta {
    pub env: String,
    pub n_observations: usize,
    pub params: ModelParams,
    pub quadrature: QuadratureConfig,
    /// Posterior mass beyond the grid, estimated by quadrature, in the
    /// units of the grid density (whose own integral is one).
    pub outside_mass: f64,
}

/// Posterior density on a uniform grid, normalized so its trapezoid
/// integral is one.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorGrid {
    pub grid: Vec<f64>,
    pub log_density: Vec<f64>,
    pub meta: GridMeta,
}

impl PosteriorGrid {
    /// Builds a grid from unnormalized log densities on uniform `grid`.
    pub fn from_log_unnormalized(grid: Vec<f64>, log_f: Vec<f64>, meta: GridMeta) -> Result<Self> {
        if grid.len() != log_f.len() || grid.len() < 2 {
            return Err(Error::Dimension(format!(
                "grid of {} points with {} densities",
                grid.len(),
                log_f.len()
            )));
        }
        let (log_density, _) = normalize_trapezoid(&log_f, grid[1] - grid[0]);
        Ok(PosteriorGrid {
            log_density,
            grid,
            meta,
        })
    }

    pub fn density(&self) -> Vec<f64> {
        self.log_density.iter().map(|v| v.exp()).collect()
    }

    pub fn spacing(&self) -> f64 {
        self.grid[1] - self.grid[0]
    }

    pub fn trapezoid_integral(&self) -> f64 {
        let d = self.density();
        let last = d.len() - 1;
        self.spacing() * (d.iter().sum::<f64>() - 0.5 * (d[0] + d[last]))
    }

    /// Integral over `[lo, hi]` of the piecewise-linear interpolant of the
    /// density; the whole grid gives the trapezoid integral.
    pub fn mass_between(&self, lo: f64, hi: f64) -> f64 {
        let d = self.density();
        let (lo, hi) = (lo.max(self.grid[0]), hi.min(self.grid[self.grid.len() - 1]));
        if hi <= lo {
            return 0.0;
        }
        let mut total = 0.0;
        for i in 0..self.grid.len() - 1 {
            let (x0, x1) = (self.grid[i], self.grid[i + 1]);
            let (a, b) = (x0.max(lo), x1.min(hi));
            if b <= a {
                continue;
            }
            let slope = (d[i + 1] - d[i]) / (x1 - x0);
            let at = |x: f64| d[i] + slope * (x - x0);
            total += 0.5 * (at(a) + at(b)) * (b - a);
        }
        total
    }

    /// Probability of `[lo, hi]`, counting the mass beyond the grid in the
    /// total.
    pub fn probability_between(&self, lo: f64, hi: f64) -> f64 {
        self.mass_between(lo, hi) / (1.0 + self.meta.outside_mass)
    }

    /// Probability of lying beyond the grid.
    pub fn outside_probability(&self) -> f64 {
        self.meta.outside_mass / (1.0 + self.meta.outside_mass)
    }

    /// Mass of each interval `[edges[i], edges[i + 1])`.
    pub fn bin_masses(&self, edges: &[f64]) -> Vec<f64> {
        edges.windows(2).map(|w| self.mass_between(w[0], w[1])).collect()
    }

    /// Probability of each interval `[edges[i], edges[i + 1])`.
    pub fn bin_probabilities(&self, edges: &[f64]) -> Vec<f64> {
        edges.windows(2).map(|w| self.probability_between(w[0], w[1])).collect()
    }

    /// `p_a,density` rows after `#` comment lines carrying the metadata.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let m = &self.meta;
        writeln!(out, "# env={}", m.env)?;
        writeln!(out, "# n_observations={}", m.n_observations)?;
        writeln!(out, "# params={}", serde_json::to_string(&m.params).map_err(io::Error::other)?)?;
        writeln!(out, "# quadrature={}", serde_json::to_string(&m.quadrature).map_err(io::Error::other)?)?;
        writeln!(out, "# outside_mass={:e}", m.outside_mass)?;
        writeln!(out, "p_a,density")?;
        for (x, ld) in self.grid.iter().zip(&self.log_density) {
            writeln!(out, "{x},{:e}", ld.exp())?;
        }
        Ok(())
    }
}
