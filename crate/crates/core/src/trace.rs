//! Addressed record of every random choice in one generative rollout.
//!
//! A rollout is one agent followed by `n` observations. Each random choice is
//! stored as a unit innovation (a standard-normal `z` or a uniform `u`) and
//! mapped through the model on replay, so a stored value is in support no
//! matter what the other sites hold. Site `x_n`, for example, keeps `u` and
//! realizes `x_n = u * b_n` with whatever `b_n` the current truth gives.
//!
//! Layout of `values`: index 0 and 1 hold the two agent sites, followed by
//! six sites per observation in [`Site::PER_STEP`] order.

use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    emit_news, judge, sample_outlet, AgentParams, Judgment,
    MediaEnvironment, ModelParams, NewsItem, LN_SQRT_2PI,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Site {
    AgentPolitics,
    AgentAnalytic,
    OutletChoice,
    SideCoin,
    PoliticsInnovation,
    TruthInnovation,
    XnInnovation,
    XaInnovation,
}

impl Site {
    pub const AGENT: [Site; 2] = [Site::AgentPolitics, Site::AgentAnalytic];
    pub const PER_STEP: [Site; 6] = [
        Site::OutletChoice,
        Site::SideCoin,
        Site::PoliticsInnovation,
        Site::TruthInnovation,
        Site::XnInnovation,
        Site::XaInnovation,
    ];

    /// Sites holding a standard-normal draw; the rest hold a uniform in [0, 1].
    pub fn is_gaussian(self) -> bool {
        matches!(
            self,
            Site::AgentPolitics | Site::PoliticsInnovation | Site::TruthInnovation
        )
    }

    pub fn is_agent(self) -> bool {
        matches!(self, Site::AgentPolitics | Site::AgentAnalytic)
    }

    pub fn name(self) -> &'static str {
        match self {
            Site::AgentPolitics => "agent_politics",
            Site::AgentAnalytic => "agent_analytic",
            Site::OutletChoice => "outlet_choice",
            Site::SideCoin => "side_coin",
            Site::PoliticsInnovation => "politics_innovation",
            Site::TruthInnovation => "truth_innovation",
            Site::XnInnovation => "xn_innovation",
            Site::XaInnovation => "xa_innovation",
        }
    }

    fn step_offset(self) -> usize {
        match self {
            Site::AgentPolitics | Site::AgentAnalytic => unreachable!("agent sites have no step"),
            Site::OutletChoice => 0,
            Site::SideCoin => 1,
            Site::PoliticsInnovation => 2,
            Site::TruthInnovation => 3,
            Site::XnInnovation => 4,
            Site::XaInnovation => 5,
        }
    }
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Site {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Site::AGENT
            .iter()
            .chain(Site::PER_STEP.iter())
            .copied()
            .find(|site| site.name() == s)
            .ok_or_else(|| Error::Structure(format!("unknown site `{s}`")))
    }
}

/// Identifies one random choice. Agent sites use step 0; observation sites
/// are numbered from 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Address {
    pub site: Site,
    pub step: usize,
}

impl Address {
    pub fn agent(site: Site) -> Self {
        debug_assert!(site.is_agent());
        Address { site, step: 0 }
    }

    pub fn at(site: Site, step: usize) -> Self {
        Address { site, step }
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.site, self.step)
    }
}

/// Environment and parameters a trace is scored against.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub env: MediaEnvironment,
    pub params: ModelParams,
    ln_discount_base: f64,
    ln_likelihood_peak: f64,
}

impl Scenario {
    pub fn new(env: MediaEnvironment, params: ModelParams) -> Result<Arc<Self>> {
        env.validate()?;
        params.validate()?;
        Ok(Arc::new(Scenario {
            env,
            params,
            ln_discount_base: params.discount_base.ln(),
            ln_likelihood_peak: -params.likelihood_sd.ln() - LN_SQRT_2PI,
        }))
    }

    #[inline]
    fn agent(&self, z_politics: f64, u_analytic: f64) -> AgentParams {
        AgentParams {
            politics: self.params.prior_politics_sd * z_politics,
            analytic: self.params.analytic_from_unit(u_analytic),
        }
    }

    /// Maps one observation's six unit innovations through the model.
    #[inline]
    fn step(&self, agent: &AgentParams, units: &[f64]) -> StepRecord {
        let outlet = sample_outlet(&self.env, units[0]);
        let positive_side = units[1] < 0.5;
        let news = emit_news(&self.env.outlets[outlet], positive_side, units[2], units[3]);
        // same as model::truth_bounds with base^d evaluated as exp(d ln base)
        let discount = self.params.discount_scale
            * ((news.politics - agent.politics).abs() * self.ln_discount_base).exp();
        let (b_n, b_a) = (news.truth.max(0.0), (agent.analytic - discount).max(0.0));
        let x_n = units[4] * b_n;
        let x_a = units[5] * b_a;
        let judgment = judge(&news, x_n, x_a);
        let log_factor = if self.params.observe {
            let z = (judgment.politics_judgment - agent.politics) / self.params.likelihood_sd;
            self.ln_likelihood_peak - 0.5 * z * z
        } else {
            0.0
        };
        StepRecord {
            outlet,
            positive_side,
            news,
            bounds: (b_n, b_a),
            x_n,
            x_a,
            judgment,
            log_factor,
        }
    }
}

/// Everything one observation produced on replay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub outlet: usize,
    pub positive_side: bool,
    pub news: NewsItem,
    pub bounds: (f64, f64),
    pub x_n: f64,
    pub x_a: f64,
    pub judgment: Judgment,
    pub log_factor: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Replay {
    pub agent: AgentParams,
    pub steps: Vec<StepRecord>,
    pub log_weight: f64,
}

impl Replay {
    pub fn judgments(&self) -> impl Iterator<Item = Judgment> + '_ {
        self.steps.iter().map(|s| s.judgment)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Proposal {
    /// Fresh draw from the site's unit prior.
    PriorResample,
    /// Gaussian perturbation of the unit value, reflected into [0, 1] on
    /// uniform sites.
    RandomWalk { scale: f64 },
}

#[inline]
fn std_normal_log_pdf(z: f64) -> f64 {
    -0.5 * z * z - LN_SQRT_2PI
}

/// Folds `x` into [0, 1] by reflecting at both boundaries.
pub fn reflect_unit(x: f64) -> f64 {
    let folded = x.rem_euclid(2.0);
    if folded > 1.0 {
        2.0 - folded
    } else {
        folded
    }
}

/// Draws a new unit value for `site`. Returns the value and the log
/// Hastings correction to add to the weight difference.
pub(crate) fn propose_unit<R: Rng + ?Sized>(
    site: Site,
    old: f64,
    proposal: Proposal,
    rng: &mut R,
) -> (f64, f64) {
    match (proposal, site.is_gaussian()) {
        (Proposal::PriorResample, true) => (rng.sample(StandardNormal), 0.0),
        (Proposal::PriorResample, false) => (rng.random::<f64>(), 0.0),
        (Proposal::RandomWalk { scale }, true) => {
            let eps: f64 = rng.sample(StandardNormal);
            let new = old + scale * eps;
            (new, std_normal_log_pdf(new) - std_normal_log_pdf(old))
        }
        (Proposal::RandomWalk { scale }, false) => {
            let eps: f64 = rng.sample(StandardNormal);
            (reflect_unit(old + scale * eps), 0.0)
        }
    }
}

/// A scored but uncommitted single-site change.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Staged {
    index: usize,
    value: f64,
    /// Change in log weight if committed.
    pub(crate) delta: f64,
    step_factor: Option<(usize, f64)>,
}

#[derive(Debug, Clone)]
pub struct Trace {
    scenario: Arc<Scenario>,
    values: Vec<f64>,
    factors: Vec<f64>,
    log_weight: f64,
}

impl Trace {
    /// Fills every address with a fresh unit draw and scores it.
    pub fn init<R: Rng + ?Sized>(scenario: Arc<Scenario>, n_observations: usize, rng: &mut R) -> Result<Self> {
        if n_observations < 1 {
            return Err(Error::Contract("a trace needs at least one observation".into()));
        }
        let len = 2 + 6 * n_observations;
        let mut values = Vec::with_capacity(len);
        for i in 0..len {
            let site = site_at(i);
            values.push(if site.is_gaussian() {
                rng.sample(StandardNormal)
            } else {
                rng.random::<f64>()
            });
        }
        Ok(Self::scored(scenario, values))
    }

    /// Builds a trace from explicit values. Every address must appear
    /// exactly once and uniform sites must lie in [0, 1].
    pub fn from_values<I>(scenario: Arc<Scenario>, n_observations: usize, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Address, f64)>,
    {
        if n_observations < 1 {
            return Err(Error::Contract("a trace needs at least one observation".into()));
        }
        let len = 2 + 6 * n_observations;
        let mut slots: Vec<Option<f64>> = vec![None; len];
        for (addr, value) in entries {
            let i = index_of(addr, n_observations)?;
            if !value.is_finite() {
                return Err(Error::Structure(format!("non-finite value at {addr}")));
            }
            if !addr.site.is_gaussian() && !(0.0..=1.0).contains(&value) {
                return Err(Error::Structure(format!("{addr} holds {value}, outside [0, 1]")));
            }
            if slots[i].replace(value).is_some() {
                return Err(Error::Structure(format!("duplicate address {addr}")));
            }
        }
        let values = slots
            .into_iter()
            .enumerate()
            .map(|(i, v)| v.ok_or_else(|| Error::Structure(format!("missing address {}", address_at(i)))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::scored(scenario, values))
    }

    fn scored(scenario: Arc<Scenario>, values: Vec<f64>) -> Self {
        let n = (values.len() - 2) / 6;
        let mut trace = Trace {
            scenario,
            values,
            factors: vec![0.0; n],
            log_weight: 0.0,
        };
        let agent = trace.agent();
        for step in 0..n {
            trace.factors[step] = trace.scenario.step(&agent, trace.step_units(step)).log_factor;
        }
        trace.resum();
        trace
    }

    pub fn scenario(&self) -> &Arc<Scenario> {
        &self.scenario
    }

    pub fn n_observations(&self) -> usize {
        self.factors.len()
    }

    /// Number of addressed choices, always `6n + 2`.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn log_weight(&self) -> f64 {
        self.log_weight
    }

    pub fn addresses(&self) -> impl Iterator<Item = Address> {
        (0..self.values.len()).map(address_at)
    }

    pub fn value(&self, addr: Address) -> Result<f64> {
        Ok(self.values[index_of(addr, self.n_observations())?])
    }

    pub fn entries(&self) -> impl Iterator<Item = (Address, f64)> + '_ {
        self.values.iter().enumerate().map(|(i, v)| (address_at(i), *v))
    }

    /// Current agent politics.
    #[inline]
    pub fn politics(&self) -> f64 {
        self.scenario.params.prior_politics_sd * self.values[0]
    }

    #[inline]
    fn agent(&self) -> AgentParams {
        self.scenario.agent(self.values[0], self.values[1])
    }

    #[inline]
    fn step_units(&self, step: usize) -> &[f64] {
        &self.values[2 + 6 * step..8 + 6 * step]
    }

    /// Deterministic from-scratch evaluation of the whole rollout.
    pub fn replay(&self) -> Replay {
        let agent = self.agent();
        let steps: Vec<StepRecord> = (0..self.n_observations())
            .map(|s| self.scenario.step(&agent, self.step_units(s)))
            .collect();
        let log_weight = steps.iter().map(|s| s.log_factor).sum();
        Replay {
            agent,
            steps,
            log_weight,
        }
    }

    /// Recomputes the cached total from the per-step factors in step order,
    /// discarding any drift from incremental updates.
    pub(crate) fn resum(&mut self) {
        self.log_weight = self.factors.iter().sum();
    }

    pub(crate) fn index(&self, addr: Address) -> Result<usize> {
        index_of(addr, self.n_observations())
    }

    #[inline]
    pub(crate) fn unit_at(&self, index: usize) -> f64 {
        self.values[index]
    }

    /// Scores setting `values[index] = value` without committing. Agent-site
    /// changes leave the rescored factors in `scratch`.
    pub(crate) fn stage(&self, index: usize, value: f64, scratch: &mut Vec<f64>) -> Staged {
        if index < 2 {
            let mut z = self.values[0];
            let mut u = self.values[1];
            if index == 0 {
                z = value;
            } else {
                u = value;
            }
            let agent = self.scenario.agent(z, u);
            scratch.clear();
            scratch.extend((0..self.n_observations()).map(|s| self.scenario.step(&agent, self.step_units(s)).log_factor));
            let new_total: f64 = scratch.iter().sum();
            Staged {
                index,
                value,
                delta: new_total - self.log_weight,
                step_factor: None,
            }
        } else {
            let step = (index - 2) / 6;
            let mut units = [0.0; 6];
            units.copy_from_slice(self.step_units(step));
            units[(index - 2) % 6] = value;
            let factor = self.scenario.step(&self.agent(), &units).log_factor;
            Staged {
                index,
                value,
                delta: factor - self.factors[step],
                step_factor: Some((step, factor)),
            }
        }
    }

    pub(crate) fn commit(&mut self, staged: Staged, scratch: &mut Vec<f64>) {
        self.values[staged.index] = staged.value;
        match staged.step_factor {
            Some((step, factor)) => {
                self.factors[step] = factor;
                self.log_weight += staged.delta;
            }
            None => {
                std::mem::swap(&mut self.factors, scratch);
                self.resum();
            }
        }
    }

    /// Single-site proposal on a copy of this trace. Returns the proposed
    /// trace and the log Hastings correction.
    pub fn propose_site<R: Rng + ?Sized>(
        &self,
        addr: Address,
        rng: &mut R,
        proposal: Proposal,
    ) -> Result<(Trace, f64)> {
        let index = self.index(addr)?;
        let (value, correction) = propose_unit(addr.site, self.values[index], proposal, rng);
        let mut scratch = Vec::new();
        let staged = self.stage(index, value, &mut scratch);
        let mut proposed = self.clone();
        proposed.commit(staged, &mut scratch);
        Ok((proposed, correction))
    }

    /// Writes one `site,step,value` line per address after a header line.
    pub fn write_dump<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "site,step,value")?;
        for (addr, value) in self.entries() {
            writeln!(out, "{},{},{}", addr.site, addr.step, value)?;
        }
        Ok(())
    }

    /// Parses the format written by [`Trace::write_dump`].
    pub fn read_dump<R: BufRead>(scenario: Arc<Scenario>, input: R) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || (lineno == 0 && line == "site,step,value") {
                continue;
            }
            let bad = || Error::Structure(format!("malformed dump line {}: `{line}`", lineno + 1));
            let mut fields = line.split(',');
            let (Some(site), Some(step), Some(value), None) =
                (fields.next(), fields.next(), fields.next(), fields.next())
            else {
                return Err(bad());
            };
            let site: Site = site.parse()?;
            let step: usize = step.parse().map_err(|_| bad())?;
            let value: f64 = value.parse().map_err(|_| bad())?;
            entries.push((Address::at(site, step), value));
        }
        let steps = entries.iter().map(|(a, _)| a.step).max().unwrap_or(0);
        Self::from_values(scenario, steps, entries)
    }
}

/// Draws a fresh trace for `n` observations.
pub fn init_trace<R: Rng + ?Sized>(
    env: &MediaEnvironment,
    params: &ModelParams,
    n: usize,
    rng: &mut R,
) -> Result<Trace> {
    Trace::init(Scenario::new(env.clone(), *params)?, n, rng)
}

fn index_of(addr: Address, n_observations: usize) -> Result<usize> {
    match addr.site {
        Site::AgentPolitics | Site::AgentAnalytic if addr.step != 0 => {
            Err(Error::Structure(format!("agent site at nonzero step: {addr}")))
        }
        Site::AgentPolitics => Ok(0),
        Site::AgentAnalytic => Ok(1),
        site if (1..=n_observations).contains(&addr.step) => Ok(2 + 6 * (addr.step - 1) + site.step_offset()),
        _ => Err(Error::Structure(format!(
            "no address {addr} in a trace of {n_observations} observations"
        ))),
    }
}

fn site_at(index: usize) -> Site {
    match index {
        0 => Site::AgentPolitics,
        1 => Site::AgentAnalytic,
        i => Site::PER_STEP[(i - 2) % 6],
    }
}

pub(crate) fn address_at(index: usize) -> Address {
    let site = site_at(index);
    let step = if index < 2 { 0 } else { (index - 2) / 6 + 1 };
    Address { site, step }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::OutletKind;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand::Rng;
    use rand_pcg::Pcg64;
    use std::collections::HashSet;

    fn me1() -> Arc<Scenario> {
        Scenario::new(MediaEnvironment::me1(), ModelParams::default()).unwrap()
    }

    fn zeros(n: usize) -> Trace {
        let entries = (0..2 + 6 * n).map(|i| (address_at(i), 0.0));
        Trace::from_values(me1(), n, entries).unwrap()
    }

    #[test]
    fn address_counts() {
        let mut rng = Pcg64::seed_from_u64(1);
        let one = Trace::init(me1(), 1, &mut rng).unwrap();
        assert_eq!(one.len(), 8);
        let hundred = Trace::init(me1(), 100, &mut rng).unwrap();
        assert_eq!(hundred.len(), 602);
        let unique: HashSet<Address> = hundred.addresses().collect();
        assert_eq!(unique.len(), 602);
        for addr in hundred.addresses() {
            assert_eq!(address_at(hundred.index(addr).unwrap()), addr);
        }
        assert!(Trace::init(me1(), 0, &mut rng).is_err());
    }

    #[test]
    fn init_replays_bit_for_bit() {
        let mut rng = Pcg64::seed_from_u64(2);
        let trace = Trace::init(me1(), 25, &mut rng).unwrap();
        let a = trace.replay();
        let b = trace.replay();
        assert_eq!(a, b);
        assert_eq!(a.log_weight.to_bits(), trace.log_weight().to_bits());
    }

    // Hand composition: p_a = 0, a_a = 0.5, centrist outlet, news (0, 0.8),
    // x_n = x_a = 0 so the tie is judged false and p_j = -0 = 0.
    #[test]
    fn all_zero_rollout() {
        let trace = zeros(1);
        let r = trace.replay();
        assert_eq!(r.agent, AgentParams { politics: 0.0, analytic: 0.5 });
        let step = r.steps[0];
        assert_eq!(OutletKind::ALL[step.outlet], OutletKind::PremiumCentrist);
        assert_eq!(step.news, NewsItem { politics: 0.0, truth: 0.8 });
        assert_eq!((step.x_n, step.x_a), (0.0, 0.0));
        assert!(!step.judgment.truth_judgment);
        assert_eq!(step.judgment.politics_judgment, 0.0);
        let expected = -(0.25f64.ln()) - 0.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((r.log_weight - expected).abs() < 1e-12);
        assert!((r.log_weight - 0.467_355).abs() < 1e-6);
    }

    // The fast path in Scenario::step must agree with the model functions.
    #[test]
    fn replay_agrees_with_model_functions() {
        use crate::model::{log_likelihood, truth_bounds};
        let mut rng = Pcg64::seed_from_u64(12);
        for env in MediaEnvironment::builtins() {
            let sc = Scenario::new(env, ModelParams::default()).unwrap();
            let trace = Trace::init(sc.clone(), 50, &mut rng).unwrap();
            let r = trace.replay();
            for s in &r.steps {
                let (b_n, b_a) = truth_bounds(&s.news, &r.agent, &sc.params);
                assert!((s.bounds.0 - b_n).abs() < 1e-15 && (s.bounds.1 - b_a).abs() < 1e-14);
                let ll = log_likelihood(s.judgment.politics_judgment, r.agent.politics, &sc.params);
                assert!((s.log_factor - ll).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn step_perturbation_is_local() {
        let mut rng = Pcg64::seed_from_u64(5);
        let trace = Trace::init(me1(), 10, &mut rng).unwrap();
        let before = trace.replay();
        let addr = Address::at(Site::XnInnovation, 4);
        let (after_trace, correction) = trace.propose_site(addr, &mut rng, Proposal::PriorResample).unwrap();
        assert_eq!(correction, 0.0);
        let after = after_trace.replay();
        for s in 0..10 {
            if s != 3 {
                assert_eq!(before.steps[s], after.steps[s]);
            }
        }
        let delta = after.steps[3].log_factor - before.steps[3].log_factor;
        assert!((after.log_weight - before.log_weight - delta).abs() < 1e-12);
    }

    #[test]
    fn reflection() {
        assert!((reflect_unit(1.05) - 0.95).abs() < 1e-15);
        assert!((reflect_unit(-0.2) - 0.2).abs() < 1e-15);
        assert!((reflect_unit(2.3) - 0.3).abs() < 1e-12);
        assert!((reflect_unit(-1.7) - 0.3).abs() < 1e-12);
        assert_eq!(reflect_unit(0.4), 0.4);
    }

    #[test]
    fn walk_corrections() {
        let mut rng = Pcg64::seed_from_u64(9);
        for _ in 0..100 {
            let (z, c) = propose_unit(Site::AgentPolitics, 0.3, Proposal::RandomWalk { scale: 0.25 }, &mut rng);
            assert!((c - (std_normal_log_pdf(z) - std_normal_log_pdf(0.3))).abs() < 1e-15);
            let (u, c) = propose_unit(Site::SideCoin, 0.95, Proposal::RandomWalk { scale: 0.25 }, &mut rng);
            assert_eq!(c, 0.0);
            assert!((0.0..=1.0).contains(&u));
            let (_, c) = propose_unit(Site::TruthInnovation, 0.0, Proposal::PriorResample, &mut rng);
            assert_eq!(c, 0.0);
        }
    }

    #[test]
    fn structural_errors() {
        let trace = zeros(2);
        let mut rng = Pcg64::seed_from_u64(0);
        for addr in [
            Address::at(Site::OutletChoice, 0),
            Address::at(Site::OutletChoice, 3),
            Address::at(Site::AgentPolitics, 1),
        ] {
            assert!(matches!(
                trace.propose_site(addr, &mut rng, Proposal::PriorResample),
                Err(Error::Structure(_))
            ));
        }
        let partial = (0..13).map(|i| (address_at(i), 0.0));
        assert!(matches!(Trace::from_values(me1(), 2, partial), Err(Error::Structure(_))));
        let out_of_range = (0..14).map(|i| (address_at(i), if i == 3 { 1.5 } else { 0.0 }));
        assert!(Trace::from_values(me1(), 2, out_of_range).is_err());
    }

    #[test]
    fn dump_round_trip() {
        let mut rng = Pcg64::seed_from_u64(4);
        let trace = Trace::init(me1(), 3, &mut rng).unwrap();
        let mut buf = Vec::new();
        trace.write_dump(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 1 + 20);
        assert!(text.lines().nth(1).unwrap().starts_with("agent_politics,0,"));
        let back = Trace::read_dump(me1(), buf.as_slice()).unwrap();
        assert_eq!(back.values, trace.values);
        assert_eq!(back.log_weight().to_bits(), trace.log_weight().to_bits());

        let truncated: String = text.lines().take(20).collect::<Vec<_>>().join("\n");
        assert!(matches!(Trace::read_dump(me1(), truncated.as_bytes()), Err(Error::Structure(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        // Any sequence of committed proposals keeps the address set, the unit
        // support and agrees with a from-scratch replay.
        #[test]
        fn proposals_preserve_invariants(seed in any::<u64>(), n in 1usize..12, moves in 1usize..200) {
            let mut rng = Pcg64::seed_from_u64(seed);
            let mut trace = Trace::init(me1(), n, &mut rng).unwrap();
            for _ in 0..moves {
                let addr = address_at(rng.random_range(0..trace.len()));
                let proposal = if rng.random::<f64>() < 0.5 {
                    Proposal::PriorResample
                } else {
                    Proposal::RandomWalk { scale: 0.25 }
                };
                trace = trace.propose_site(addr, &mut rng, proposal).unwrap().0;
            }
            prop_assert_eq!(trace.len(), 6 * n + 2);
            for (addr, v) in trace.entries() {
                if !addr.site.is_gaussian() {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
            }
            prop_assert!((trace.replay().log_weight - trace.log_weight()).abs() < 1e-9);
        }
    }
}
