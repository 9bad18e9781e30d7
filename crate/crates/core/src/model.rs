//! Domain model: news items, outlets, media environments, agents and the
//! judgment rule that turns an observed item into a politics signal.
//!
//! Everything here is a pure function of its arguments. Randomness enters
//! only through the unit draws (`u`, `z_p`, `z_t`, `x_n`, `x_a`) that callers
//! pass in, which is what lets the trace module replay a rollout exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// ln(sqrt(2π))
pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Log density of N(mean, sd) at `x`.
#[inline]
pub fn normal_log_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * z * z - sd.ln() - LN_SQRT_2PI
}

#[inline]
pub fn normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    normal_log_pdf(x, mean, sd).exp()
}

/// One emitted article.
///
/// `truth` is not range-restricted: outlets with wide truth distributions
/// emit negative values, which [`truth_bounds`] clamps at zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewsItem {
    pub politics: f64,
    pub truth: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OutletKind {
    PremiumCentrist,
    PremiumPartisan,
    FakeNewsPartisan,
}

impl OutletKind {
    /// Fixed mixture order used by every environment.
    pub const ALL: [OutletKind; 3] = [
        OutletKind::PremiumCentrist,
        OutletKind::PremiumPartisan,
        OutletKind::FakeNewsPartisan,
    ];

    pub fn label(self) -> &'static str {
        match self {
            OutletKind::PremiumCentrist => "premium centrist",
            OutletKind::PremiumPartisan => "premium partisan",
            OutletKind::FakeNewsPartisan => "fake news partisan",
        }
    }
}

/// Politics and truth distribution of one outlet type.
///
/// Partisan outlets are an equal-weight mixture of `N(+m, sd)` and `N(-m, sd)`
/// in politics; the side is re-drawn for every emitted item.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutletSpec {
    pub kind: OutletKind,
    pub politics_mean_magnitude: f64,
    pub politics_sd: f64,
    pub truth_mean: f64,
    pub truth_sd: f64,
    pub bimodal: bool,
}

impl OutletSpec {
    pub fn premium_centrist() -> Self {
        OutletSpec {
            kind: OutletKind::PremiumCentrist,
            politics_mean_magnitude: 0.0,
            politics_sd: 0.5,
            truth_mean: 0.8,
            truth_sd: 0.2,
            bimodal: false,
        }
    }

    pub fn premium_partisan() -> Self {
        OutletSpec {
            kind: OutletKind::PremiumPartisan,
            politics_mean_magnitude: 0.7,
            politics_sd: 0.3,
            truth_mean: 0.8,
            truth_sd: 0.2,
            bimodal: true,
        }
    }

    pub fn fake_news_partisan() -> Self {
        OutletSpec {
            kind: OutletKind::FakeNewsPartisan,
            politics_mean_magnitude: 0.9,
            politics_sd: 0.1,
            truth_mean: 0.4,
            truth_sd: 0.5,
            bimodal: true,
        }
    }

    pub fn default_for(kind: OutletKind) -> Self {
        match kind {
            OutletKind::PremiumCentrist => Self::premium_centrist(),
            OutletKind::PremiumPartisan => Self::premium_partisan(),
            OutletKind::FakeNewsPartisan => Self::fake_news_partisan(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let key = |field: &str| format!("outlets.{:?}.{field}", self.kind);
        if self.bimodal == (self.kind == OutletKind::PremiumCentrist) {
            return Err(Error::config(
                key("bimodal"),
                "only the centrist outlet is unimodal",
            ));
        }
        if !(self.politics_mean_magnitude >= 0.0 && self.politics_mean_magnitude.is_finite()) {
            return Err(Error::config(
                key("politics_mean_magnitude"),
                "must be finite and >= 0",
            ));
        }
        for (field, v) in [("politics_sd", self.politics_sd), ("truth_sd", self.truth_sd)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(key(field), "must be finite and > 0"));
            }
        }
        if !self.truth_mean.is_finite() {
            return Err(Error::config(key("truth_mean"), "must be finite"));
        }
        Ok(())
    }

    /// Mean of the politics component selected by `side`.
    #[inline]
    pub fn politics_center(&self, positive_side: bool) -> f64 {
        match (self.bimodal, positive_side) {
            (false, _) => 0.0,
            (true, true) => self.politics_mean_magnitude,
            (true, false) => -self.politics_mean_magnitude,
        }
    }
}

/// Weighted mixture of the three outlet types.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MediaEnvironment {
    pub name: String,
    /// Centrist, premium partisan, fake news partisan.
    pub weights: [f64; 3],
    pub outlets: [OutletSpec; 3],
}

impl MediaEnvironment {
    pub const BUILTIN_NAMES: [&'static str; 3] = ["ME1", "ME2", "ME3"];

    pub fn new(name: impl Into<String>, weights: [f64; 3], outlets: [OutletSpec; 3]) -> Result<Self> {
        let env = MediaEnvironment {
            name: name.into(),
            weights,
            outlets,
        };
        env.validate()?;
        Ok(env)
    }

    fn with_default_outlets(name: &str, weights: [f64; 3]) -> Self {
        MediaEnvironment {
            name: name.to_string(),
            weights,
            outlets: OutletKind::ALL.map(OutletSpec::default_for),
        }
    }

    /// Mostly centrist media.
    pub fn me1() -> Self {
        Self::with_default_outlets("ME1", [0.70, 0.20, 0.10])
    }

    /// Opinionated but factual media.
    pub fn me2() -> Self {
        Self::with_default_outlets("ME2", [0.40, 0.50, 0.10])
    }

    /// Fake-news dominated media.
    pub fn me3() -> Self {
        Self::with_default_outlets("ME3", [0.30, 0.10, 0.60])
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name.to_ascii_uppercase().as_str() {
            "ME1" => Some(Self::me1()),
            "ME2" => Some(Self::me2()),
            "ME3" => Some(Self::me3()),
            _ => None,
        }
    }

    pub fn builtins() -> [Self; 3] {
        [Self::me1(), Self::me2(), Self::me3()]
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::config("name", "environment name must not be empty"));
        }
        if self.weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::config(
                format!("{}.weights", self.name),
                format!("weights must be finite and >= 0, got {:?}", self.weights),
            ));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::config(
                format!("{}.weights", self.name),
                format!("weights must sum to 1, got {total}"),
            ));
        }
        for (i, outlet) in self.outlets.iter().enumerate() {
            if outlet.kind != OutletKind::ALL[i] {
                return Err(Error::config(
                    format!("{}.outlets", self.name),
                    "outlets must be listed as centrist, premium partisan, fake news",
                ));
            }
            outlet.validate()?;
        }
        Ok(())
    }
}

/// Latent politics and fixed analytic trait of one agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentParams {
    pub politics: f64,
    pub analytic: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Judgment {
    pub truth_judgment: bool,
    pub politics_judgment: f64,
}

/// Tunable constants of the agent model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelParams {
    pub discount_scale: f64,
    pub discount_base: f64,
    /// Standard deviation of the Gaussian likelihood of a politics judgment.
    pub likelihood_sd: f64,
    pub prior_politics_sd: f64,
    pub analytic_low: f64,
    pub analytic_high: f64,
    /// When false the likelihood factors are dropped and traces are scored
    /// by their prior alone.
    pub observe: bool,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            discount_scale: 0.2,
            discount_base: 0.2,
            likelihood_sd: 0.25,
            prior_politics_sd: 1.0,
            analytic_low: 0.5,
            analytic_high: 1.0,
            observe: true,
        }
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("model.discount_scale", self.discount_scale),
            ("model.discount_base", self.discount_base),
            ("model.likelihood_sd", self.likelihood_sd),
            ("model.prior_politics_sd", self.prior_politics_sd),
            ("model.analytic_low", self.analytic_low),
            ("model.analytic_high", self.analytic_high),
        ];
        for (key, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(key, format!("must be finite and > 0, got {v}")));
            }
        }
        if self.analytic_low >= self.analytic_high {
            return Err(Error::config(
                "model.analytic_low",
                "must be strictly below model.analytic_high",
            ));
        }
        Ok(())
    }

    /// Analytic trait for a unit draw `u` in [0, 1].
    #[inline]
    pub fn analytic_from_unit(&self, u: f64) -> f64 {
        self.analytic_low + (self.analytic_high - self.analytic_low) * u
    }
}

/// Reduction of the agent's scrutiny for news close to its own politics:
/// `scale * base^|p_n - p_a|`.
#[inline]
pub fn motivational_discount(news_politics: f64, agent_politics: f64, params: &ModelParams) -> f64 {
    params.discount_scale * params.discount_base.powf((news_politics - agent_politics).abs())
}

/// Upper bounds `(b_n, b_a)` of the two uniform draws compared in a truth
/// judgment. Both are clamped at zero.
#[inline]
pub fn truth_bounds(news: &NewsItem, agent: &AgentParams, params: &ModelParams) -> (f64, f64) {
    let discount = motivational_discount(news.politics, agent.politics, params);
    (news.truth.max(0.0), (agent.analytic - discount).max(0.0))
}

/// `P(x_n > x_a)` for independent `x_n ~ U(0, b_n)` and `x_a ~ U(0, b_a)`,
/// where `U(0, 0)` is the point mass at zero.
pub fn truth_probability(b_n: f64, b_a: f64) -> Result<f64> {
    if !(b_n >= 0.0 && b_a >= 0.0) {
        return Err(Error::Contract(format!(
            "truth bounds must be non-negative, got ({b_n}, {b_a})"
        )));
    }
    Ok(truth_probability_unchecked(b_n, b_a))
}

#[inline]
pub(crate) fn truth_probability_unchecked(b_n: f64, b_a: f64) -> f64 {
    if b_n == 0.0 {
        0.0
    } else if b_a == 0.0 {
        1.0
    } else if b_n >= b_a {
        1.0 - b_a / (2.0 * b_n)
    } else {
        b_n / (2.0 * b_a)
    }
}

/// Truth judgment from realized draws; a false judgment reverses the politics.
#[inline]
pub fn judge(news: &NewsItem, x_n: f64, x_a: f64) -> Judgment {
    let truth_judgment = x_n > x_a;
    Judgment {
        truth_judgment,
        politics_judgment: if truth_judgment {
            news.politics
        } else {
            -news.politics
        },
    }
}

/// Log of the N(p_a, likelihood_sd) density at `p_j`.
#[inline]
pub fn log_likelihood(politics_judgment: f64, agent_politics: f64, params: &ModelParams) -> f64 {
    normal_log_pdf(politics_judgment, agent_politics, params.likelihood_sd)
}

/// Inverse-CDF outlet choice for `u` in [0, 1). Returns an index into
/// [`OutletKind::ALL`].
#[inline]
pub fn sample_outlet(env: &MediaEnvironment, u: f64) -> usize {
    let mut cumulative = 0.0;
    for (i, w) in env.weights.iter().enumerate().take(2) {
        cumulative += w;
        if u < cumulative {
            return i;
        }
    }
    2
}

/// News item from an outlet given the side coin and two standard-normal draws.
#[inline]
pub fn emit_news(outlet: &OutletSpec, positive_side: bool, z_politics: f64, z_truth: f64) -> NewsItem {
    NewsItem {
        politics: outlet.politics_center(positive_side) + outlet.politics_sd * z_politics,
        truth: outlet.truth_mean + outlet.truth_sd * z_truth,
    }
}
