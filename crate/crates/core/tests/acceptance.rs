//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line for
//! each (with indented detail lines) and exits nonzero if any failed.
//!
//! Criteria 1, 6 and 7 share two full default runs of the experiment grid,
//! which dominate the running time.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_pcg::Pcg64;
use statrs::distribution::{ContinuousCDF, Normal};

use polarize::cli::{self, ExperimentConfig, Mode};
use polarize::inference::{run_parallel, Chain, InferenceConfig, KernelConfig};
use polarize::model::{
    emit_news, judge, log_likelihood, sample_outlet, truth_bounds, truth_probability, AgentParams,
    MediaEnvironment, ModelParams,
};
use polarize::oracle::{OracleConfig, PosteriorGrid, QuadratureConfig, WeightModel, WeightTable};
use polarize::report::{metrics, Density};
use polarize::trace::Scenario;

struct Verdict {
    pass: bool,
    details: Vec<String>,
}

impl Verdict {
    fn new() -> Self {
        Verdict { pass: true, details: Vec::new() }
    }

    fn check(&mut self, ok: bool, line: String) {
        self.pass &= ok;
        self.details.push(format!("{} {line}", if ok { "ok  " } else { "FAIL" }));
    }
}

fn report(number: u32, title: &str, v: &Verdict, seconds: f64) {
    println!(
        "criterion {number} {title}: {} ({seconds:.1}s)",
        if v.pass { "PASS" } else { "FAIL" }
    );
    for line in &v.details {
        println!("    {line}");
    }
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join(cli::MANIFEST_FILE)).unwrap()).unwrap()
}

fn full_run(out: &Path, workers: usize) -> serde_json::Value {
    let config = ExperimentConfig {
        output_dir: out.to_path_buf(),
        mode: Mode::Both,
        ..ExperimentConfig::default()
    };
    assert_eq!(config.inference.seed, 42);
    let summary = cli::run_experiment(&config, Some(workers)).expect("full run");
    assert!(summary.error.is_none(), "{:?}", summary.error);
    manifest(out)
}

fn oracle_grids() -> BTreeMap<(String, usize), PosteriorGrid> {
    let params = ModelParams::default();
    let mut grids = BTreeMap::new();
    for env in MediaEnvironment::builtins() {
        let table = WeightTable::compute(&env, &params, &OracleConfig::default()).unwrap();
        for n in [1, 10, 100] {
            grids.insert((env.name.clone(), n), table.posterior(n));
        }
    }
    grids
}

fn oracle_mcmc_agreement(run: &serde_json::Value) -> Verdict {
    let mut v = Verdict::new();
    let rows = run["tv_table"].as_array().unwrap();
    v.check(rows.len() == 9, format!("{} cells in the TV table", rows.len()));
    for (row, cell) in rows.iter().zip(run["cells"].as_array().unwrap()) {
        let tv = row["tv_distance"].as_f64().unwrap();
        let tol = row["tolerance"].as_f64().unwrap();
        let kept = cell["kept_samples"].as_u64().unwrap();
        v.check(
            tv < tol && kept >= 200_000,
            format!("{} N={}: tv {tv:.4} < {tol} with {kept} samples", row["env"], row["n_observations"]),
        );
    }
    v
}

fn prior_recovery() -> Verdict {
    let params = ModelParams { observe: false, ..ModelParams::default() };
    let config = InferenceConfig {
        n_chains: 1000,
        iterations_per_chain: 600,
        burn_in: 100,
        thin: 5,
        seed: 2026,
        ..InferenceConfig::default()
    };
    let samples = run_parallel(&MediaEnvironment::me2(), &params, 10, &config, None).unwrap();
    let mut xs = samples.p_a_samples.clone();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let normal = Normal::new(0.0, 1.0).unwrap();
    let ks = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = normal.cdf(x);
            (f - i as f64 / n).abs().max((i as f64 + 1.0) / n - f)
        })
        .fold(0.0, f64::max);
    let mut v = Verdict::new();
    v.check(xs.len() >= 100_000, format!("{} samples", xs.len()));
    v.check(ks < 0.01, format!("KS statistic {ks:.5} < 0.01"));
    v
}

fn truth_probability_monte_carlo() -> Verdict {
    let bounds: Vec<f64> = (0..10).map(|i| 1.2 * i as f64 / 9.0).collect();
    let draws = 1_000_000;
    let mut rng = Pcg64::seed_from_u64(3);
    let mut v = Verdict::new();
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    for &b_n in &bounds {
        for &b_a in &bounds {
            let hits = (0..draws)
                .filter(|_| rng.random::<f64>() * b_n > rng.random::<f64>() * b_a)
                .count();
            let estimate = hits as f64 / draws as f64;
            let p = truth_probability(b_n, b_a).unwrap();
            let se = (p * (1.0 - p) / draws as f64).sqrt();
            let ok = if se == 0.0 { estimate == p } else { (estimate - p).abs() <= 3.0 * se };
            if se > 0.0 {
                worst = worst.max((estimate - p).abs() / se);
            }
            if !ok {
                failures += 1;
                v.check(false, format!("b_n={b_n:.3} b_a={b_a:.3}: {estimate} vs {p}"));
            }
        }
    }
    v.check(failures == 0, format!("100 grid points, largest deviation {worst:.2} standard errors"));
    v
}

fn simulated_weight(env: &MediaEnvironment, params: &ModelParams, agent: AgentParams, rollouts: usize, seed: u64) -> (f64, f64) {
    let mut rng = Pcg64::seed_from_u64(seed);
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..rollouts {
        let outlet = sample_outlet(env, rng.random());
        let positive = rng.random::<f64>() < 0.5;
        let news = emit_news(&env.outlets[outlet], positive, rng.sample(StandardNormal), rng.sample(StandardNormal));
        let (b_n, b_a) = truth_bounds(&news, &agent, params);
        let x_n = rng.random::<f64>() * b_n;
        let x_a = rng.random::<f64>() * b_a;
        let j = judge(&news, x_n, x_a);
        let w = log_likelihood(j.politics_judgment, agent.politics, params).exp();
        sum += w;
        sum_sq += w * w;
    }
    let n = rollouts as f64;
    let mean = sum / n;
    (mean, ((sum_sq / n - mean * mean) / (n - 1.0)).sqrt())
}

fn expected_weight_cross_check() -> Verdict {
    let params = ModelParams::default();
    let points = [(0.0, 0.75), (0.5, 0.6), (-1.0, 0.9), (1.5, 1.0), (0.3, 0.5)];
    let mut v = Verdict::new();
    for (e, env) in MediaEnvironment::builtins().iter().enumerate() {
        let model = WeightModel::new(env, &params, &QuadratureConfig::default()).unwrap();
        for (k, &(politics, analytic)) in points.iter().enumerate() {
            let w = model.expected_weight(politics, analytic).unwrap();
            let agent = AgentParams { politics, analytic };
            let (mean, se) = simulated_weight(env, &params, agent, 10_000_000, (10 * e + k) as u64);
            let z = (mean - w) / se;
            v.check(
                z.abs() <= 3.0,
                format!("{} W({politics}, {analytic}) = {w:.6}, simulated {mean:.6} ({z:+.2} se)", env.name),
            );
        }
    }
    v
}

fn figure_two(grids: &BTreeMap<(String, usize), PosteriorGrid>) -> Verdict {
    let m = |env: &str, n: usize| metrics(Density::Oracle(&grids[&(env.to_string(), n)]));
    let mut v = Verdict::new();
    let me1_100 = m("ME1", 100);
    v.check(
        me1_100.moderate_band_mass > 0.5,
        format!("ME1 N=100 moderate mass {:.4} > 0.5", me1_100.moderate_band_mass),
    );
    for n in [1, 10] {
        let x = m("ME2", n);
        v.check(x.bimodality, format!("ME2 N={n} bimodal (modes at {:?})", x.mode_locations));
    }
    let me2_100 = m("ME2", 100);
    v.check(
        me2_100.moderate_band_mass > 0.5,
        format!("ME2 N=100 moderate mass {:.4} > 0.5", me2_100.moderate_band_mass),
    );
    let me3_10 = m("ME3", 10);
    v.check(
        me3_10.moderate_band_mass < 0.5 && me3_10.mode_locations.iter().any(|x| x.abs() > 0.5),
        format!(
            "ME3 N=10 moderate mass {:.4} < 0.5, modes at {:?}",
            me3_10.moderate_band_mass, me3_10.mode_locations
        ),
    );
    let me3_100 = m("ME3", 100);
    v.check(
        me3_100.moderate_band_mass < 0.5,
        format!("ME3 N=100 moderate mass {:.4} < 0.5", me3_100.moderate_band_mass),
    );
    v.check(
        me1_100.moderate_band_mass > me3_100.moderate_band_mass,
        format!(
            "moderate mass ME1 N=100 {:.4} > ME3 N=100 {:.4}",
            me1_100.moderate_band_mass, me3_100.moderate_band_mass
        ),
    );
    v
}

fn symmetry(grids: &BTreeMap<(String, usize), PosteriorGrid>, run: &serde_json::Value) -> Verdict {
    let mut v = Verdict::new();
    for ((env, n), g) in grids {
        let f = g.density();
        let worst = (0..f.len())
            .map(|i| {
                let (a, b) = (f[i], f[f.len() - 1 - i]);
                let scale = a.max(b);
                if scale == 0.0 { 0.0 } else { (a - b).abs() / scale }
            })
            .fold(0.0, f64::max);
        v.check(worst <= 1e-9, format!("oracle {env} N={n}: relative asymmetry {worst:.1e}"));
    }
    for row in run["tv_table"].as_array().unwrap() {
        let mirror = row["mirror_tv"].as_f64().unwrap();
        v.check(
            mirror < 0.05,
            format!("mcmc {} N={}: mirror TV {mirror:.4} < 0.05", row["env"], row["n_observations"]),
        );
    }
    v
}

fn determinism(first: &Path, second: &Path) -> Verdict {
    let mut v = Verdict::new();
    let names = |dir: &Path| {
        let mut names: Vec<String> = fs::read_dir(dir)
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .collect();
        names.sort();
        names
    };
    let (a, b) = (names(first), names(second));
    v.check(a == b, format!("{} files in each run", a.len()));
    let mut differing = Vec::new();
    for name in &a {
        if name == cli::MANIFEST_FILE {
            continue;
        }
        if fs::read(first.join(name)).ok() != fs::read(second.join(name)).ok() {
            differing.push(name.clone());
        }
    }
    v.check(differing.is_empty(), format!("artifacts byte-identical (differing: {differing:?})"));
    let strip = |mut m: serde_json::Value| {
        m.as_object_mut().unwrap().remove("timing");
        m
    };
    v.check(
        strip(manifest(first)) == strip(manifest(second)),
        "manifests equal outside the timing key".to_string(),
    );
    v
}

fn weight_consistency() -> Verdict {
    let mut v = Verdict::new();
    for (i, env) in MediaEnvironment::builtins().into_iter().enumerate() {
        let name = env.name.clone();
        let scenario = Scenario::new(env, ModelParams::default()).unwrap();
        let mut chain = Chain::new(scenario, 100, 500 + i as u64, KernelConfig::default()).unwrap();
        for _ in 0..10_000 {
            chain.step();
        }
        let incremental = chain.trace().log_weight();
        let replayed = chain.trace().replay().log_weight;
        let diff = (incremental - replayed).abs();
        v.check(
            diff <= 1e-9,
            format!("{name} N=100 after {} proposals ({} accepted): |diff| {diff:.1e}", chain.proposed(), chain.accepted()),
        );
    }
    v
}

fn main() -> ExitCode {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("run");
    let first_dir = dir.path().join("first");

    println!("acceptance: full default run (1 worker)");
    let t = Instant::now();
    let first = full_run(&run_dir, 1);
    fs::rename(&run_dir, &first_dir).unwrap();
    let first_seconds = t.elapsed().as_secs_f64();

    let grids = oracle_grids();
    let mut results: Vec<(u32, &str, Verdict, f64)> = Vec::new();
    let mut timed = |number, title, f: &mut dyn FnMut() -> Verdict| {
        let t = Instant::now();
        let verdict = f();
        let seconds = t.elapsed().as_secs_f64();
        report(number, title, &verdict, seconds);
        results.push((number, title, verdict, seconds));
    };

    timed(1, "oracle-MCMC agreement", &mut || oracle_mcmc_agreement(&first));
    timed(2, "prior recovery", &mut prior_recovery);
    timed(3, "truth probability vs Monte Carlo", &mut truth_probability_monte_carlo);
    timed(4, "expected weight vs forward simulation", &mut expected_weight_cross_check);
    timed(5, "Figure 2 qualitative shape", &mut || figure_two(&grids));
    timed(6, "symmetry", &mut || symmetry(&grids, &first));
    timed(7, "determinism across worker counts", &mut || {
        full_run(&run_dir, 3);
        determinism(&first_dir, &run_dir)
    });
    timed(8, "trace weight consistency", &mut weight_consistency);

    println!("\nacceptance summary (first full run {first_seconds:.0}s, total {:.0}s):", started.elapsed().as_secs_f64());
    for (number, title, verdict, _) in &results {
        println!("  {number}. {title}: {}", if verdict.pass { "PASS" } else { "FAIL" });
    }
    if results.iter().all(|r| r.2.pass) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
