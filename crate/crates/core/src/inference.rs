//! Independent single-site Metropolis-Hastings chains over traces.
//!
//! Each chain owns one trace and one RNG seeded from `(seed, chain index)`,
//! so the concatenated output does not depend on how many workers run the
//! chains. One iteration is a sweep of `6n + 2` single-site steps, each at a
//! uniformly chosen address; `p_a` is recorded at the end of a sweep.

use std::io::{self, Write};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_pcg::Pcg64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{MediaEnvironment, ModelParams};
use crate::trace::{propose_unit, Address, Proposal, Scenario, Trace};

/// Mixture kernel: prior resample with probability `prior_resample_prob`,
/// otherwise a random walk of `walk_scale` on the unit value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelConfig {
    pub prior_resample_prob: f64,
    pub walk_scale: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            prior_resample_prob: 0.7,
            walk_scale: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    pub n_chains: usize,
    /// Sweeps per chain.
    pub iterations_per_chain: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    /// When set, overrides `iterations_per_chain` with
    /// `total_iterations / n_chains`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub total_iterations: Option<u64>,
    pub kernel: KernelConfig,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            n_chains: 4000,
            iterations_per_chain: 750,
            burn_in: 700,
            thin: 1,
            seed: 42,
            total_iterations: None,
            kernel: KernelConfig::default(),
        }
    }
}

impl InferenceConfig {
    pub fn effective_iterations(&self) -> usize {
        match self.total_iterations {
            Some(total) => (total / self.n_chains.max(1) as u64) as usize,
            None => self.iterations_per_chain,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_chains < 1 {
            return Err(Error::config("inference.n_chains", "must be >= 1"));
        }
        let iters = self.effective_iterations();
        if iters < 1 {
            return Err(Error::config("inference.iterations_per_chain", "must be >= 1"));
        }
        if self.thin < 1 {
            return Err(Error::config("inference.thin", "must be >= 1"));
        }
        if self.burn_in >= iters {
            return Err(Error::config(
                "inference.burn_in",
                format!("must be below iterations per chain ({iters})"),
            ));
        }
        let k = &self.kernel;
        if !(0.0..=1.0).contains(&k.prior_resample_prob) {
            return Err(Error::config("inference.kernel.prior_resample_prob", "must lie in [0, 1]"));
        }
        if !(k.walk_scale > 0.0 && k.walk_scale.is_finite()) {
            return Err(Error::config("inference.kernel.walk_scale", "must be finite and > 0"));
        }
        Ok(())
    }

    pub fn samples_per_chain(&self) -> usize {
        (self.effective_iterations() - self.burn_in) / self.thin
    }

    pub fn chain_settings(&self) -> ChainSettings {
        ChainSettings {
            iterations: self.effective_iterations(),
            burn_in: self.burn_in,
            thin: self.thin,
            kernel: self.kernel,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainSettings {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub kernel: KernelConfig,
}

/// Seed of chain `index`: the `index`-th output of a splitmix64 generator
/// started at `seed`.
pub fn chain_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A trace plus the RNG and counters of one Markov chain.
#[derive(Debug, Clone)]
pub struct Chain {
    trace: Trace,
    rng: Pcg64,
    kernel: KernelConfig,
    scratch: Vec<f64>,
    proposed: u64,
    accepted: u64,
}

impl Chain {
    pub fn new(scenario: Arc<Scenario>, n_observations: usize, seed: u64, kernel: KernelConfig) -> Result<Self> {
        let mut rng = Pcg64::seed_from_u64(seed);
        let trace = Trace::init(scenario, n_observations, &mut rng)?;
        Ok(Chain {
            trace,
            rng,
            kernel,
            scratch: Vec::new(),
            proposed: 0,
            accepted: 0,
        })
    }

    /// Continues from an existing trace.
    pub fn from_trace(trace: Trace, seed: u64, kernel: KernelConfig) -> Self {
        Chain {
            trace,
            rng: Pcg64::seed_from_u64(seed),
            kernel,
            scratch: Vec::new(),
            proposed: 0,
            accepted: 0,
        }
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn proposed(&self) -> u64 {
        self.proposed
    }

    pub fn accepted(&self) -> u64 {
        self.accepted
    }

    /// One MH step at a uniformly chosen address. Returns whether it was accepted.
    pub fn step(&mut self) -> bool {
        let index = self.rng.random_range(0..self.trace.len());
        self.step_index(index)
    }

    /// One MH step at a fixed address.
    pub fn step_at(&mut self, addr: Address) -> Result<bool> {
        let index = self.trace.index(addr)?;
        Ok(self.step_index(index))
    }

    fn step_index(&mut self, index: usize) -> bool {
        let proposal = if self.rng.random::<f64>() < self.kernel.prior_resample_prob {
            Proposal::PriorResample
        } else {
            Proposal::RandomWalk {
                scale: self.kernel.walk_scale,
            }
        };
        let site = crate::trace::address_at(index).site;
        let (value, correction) = propose_unit(site, self.trace.unit_at(index), proposal, &mut self.rng);
        let staged = self.trace.stage(index, value, &mut self.scratch);
        let log_alpha = staged.delta + correction;
        self.proposed += 1;
        let accept = log_alpha >= 0.0 || self.rng.random::<f64>().ln() < log_alpha;
        if accept {
            self.trace.commit(staged, &mut self.scratch);
            self.accepted += 1;
        }
        accept
    }

    /// `6n + 2` steps, then a resummation of the cached weight.
    pub fn sweep(&mut self) {
        for _ in 0..self.trace.len() {
            self.step();
        }
        self.trace.resum();
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    pub mean: f64,
    pub variance: f64,
    pub acceptance_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainOutput {
    pub samples: Vec<f64>,
    pub proposed: u64,
    pub accepted: u64,
}

impl ChainOutput {
    pub fn diagnostics(&self) -> ChainDiagnostics {
        let (mean, variance) = mean_variance(&self.samples);
        ChainDiagnostics {
            mean,
            variance,
            acceptance_rate: if self.proposed == 0 {
                0.0
            } else {
                self.accepted as f64 / self.proposed as f64
            },
        }
    }
}

fn mean_variance(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let variance = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, variance)
}

/// Runs one chain from a fresh trace and records `p_a` once per kept sweep.
pub fn run_chain(
    scenario: &Arc<Scenario>,
    n_observations: usize,
    settings: &ChainSettings,
    seed: u64,
) -> Result<ChainOutput> {
    let mut chain = Chain::new(scenario.clone(), n_observations, seed, settings.kernel)?;
    let kept = settings.iterations.saturating_sub(settings.burn_in) / settings.thin.max(1);
    let mut samples = Vec::new();
    samples
        .try_reserve_exact(kept)
        .map_err(|e| Error::Resource(format!("chain sample buffer of {kept}: {e}")))?;
    for it in 0..settings.iterations {
        chain.sweep();
        if it >= settings.burn_in && (it + 1 - settings.burn_in) % settings.thin == 0 {
            samples.push(chain.trace.politics());
        }
    }
    Ok(ChainOutput {
        samples,
        proposed: chain.proposed,
        accepted: chain.accepted,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub env: String,
    pub n_observations: usize,
    pub config: InferenceConfig,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub p_a_samples: Vec<f64>,
    pub acceptance_rate: f64,
    pub chains: Vec<ChainDiagnostics>,
    pub provenance: Provenance,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.p_a_samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p_a_samples.is_empty()
    }

    /// Mean of the pooled samples.
    pub fn mean(&self) -> f64 {
        mean_variance(&self.p_a_samples).0
    }

    /// One `p_a` column under a single header line.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "p_a")?;
        for x in &self.p_a_samples {
            writeln!(out, "{x}")?;
        }
        Ok(())
    }
}

/// Runs `config.n_chains` independent chains and concatenates their samples
/// in chain order. `workers` bounds the thread pool; `None` uses the global
/// pool. The result is the same for any worker count.
pub fn run_parallel(
    env: &MediaEnvironment,
    params: &ModelParams,
    n_observations: usize,
    config: &InferenceConfig,
    workers: Option<usize>,
) -> Result<SampleSet> {
    config.validate()?;
    let scenario = Scenario::new(env.clone(), *params)?;
    let settings = config.chain_settings();
    let total = config
        .n_chains
        .checked_mul(config.samples_per_chain())
        .ok_or_else(|| Error::Resource("sample count overflows usize".into()))?;
    let mut pooled: Vec<f64> = Vec::new();
    pooled
        .try_reserve_exact(total)
        .map_err(|e| Error::Resource(format!("pooled buffer of {total} samples: {e}")))?;

    let run = || -> Result<Vec<ChainOutput>> {
        (0..config.n_chains)
            .into_par_iter()
            .map(|i| run_chain(&scenario, n_observations, &settings, chain_seed(config.seed, i as u64)))
            .collect()
    };
    let outputs = match workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::Resource(format!("thread pool: {e}")))?
            .install(run)?,
        None => run()?,
    };

    let (mut proposed, mut accepted) = (0u64, 0u64);
    let mut chains = Vec::with_capacity(outputs.len());
    for out in &outputs {
        pooled.extend_from_slice(&out.samples);
        proposed += out.proposed;
        accepted += out.accepted;
        chains.push(out.diagnostics());
    }
    Ok(SampleSet {
        p_a_samples: pooled,
        acceptance_rate: accepted as f64 / proposed.max(1) as f64,
        chains,
        provenance: Provenance {
            env: env.name.clone(),
            n_observations,
            config: config.clone(),
            seed: config.seed,
        },
    })
}
