use std::fs;
use std::io::{BufWriter, Write};
use std::num::NonZeroUsize;
use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, Context};
use ensemble_core::decoding::{
    check_prompt, generate as run_generation, simulate_latency, ExtendCost, GenerationConfig, GenerationTrace,
    LatencyModel, Strategy, Summary,
};
use ensemble_core::harness::{self, EquivalenceConfig, EquivalenceReport};
use ensemble_core::mixture::{self, MixtureError};
use ensemble_core::predictors::NGramModel;
use ensemble_core::{Distribution, EnsembleWeights, TokenId, Vocabulary};
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;
use crate::error::{Classify, CliError, CliResult};
use crate::{BenchArgs, DecomposeArgs, EquivalenceArgs, GenerateArgs, RunArgs, TrainArgs};

/// Smallest sample count the equivalence test is calibrated for.
const MIN_SAMPLES: usize = 10_000;

pub fn train(a: &TrainArgs) -> CliResult<()> {
    let text = fs::read_to_string(&a.corpus)
        .with_context(|| format!("reading {}", a.corpus.display()))
        .config()?;
    let vocab = match &a.vocab {
        Some(p) => Some(read_json::<Vocabulary>(p).config()?),
        None => None,
    };
    let model = NGramModel::train_text(&text, a.tokenization, a.order, a.alpha, vocab).config()?;
    write_json(&a.out, &model).runtime()?;
    eprintln!(
        "wrote {} (order {}, {} tokens in vocabulary)",
        a.out.display(),
        a.order,
        model.vocab().len()
    );
    Ok(())
}

fn load(run: &RunArgs) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::load(&run.config).config()?;
    if let Some(seed) = run.seed {
        cfg.seed = seed;
    }
    if let Some(k) = run.top_k {
        cfg.top_k = k;
    }
    if let Some(l) = &run.lambda {
        cfg.weights = Some(l.clone());
    }
    Ok(cfg)
}

fn encode_stop(cfg: &RunConfig, vocab: &Vocabulary) -> anyhow::Result<Vec<TokenId>> {
    cfg.stop
        .iter()
        .map(|s| vocab.id(s).ok_or_else(|| anyhow!("stop token {s:?} is not in the vocabulary")))
        .collect()
}

/// A finished (or partially finished) generation plus its summary.
struct Run {
    trace: GenerationTrace,
    summary: Summary,
    text: String,
    error: Option<anyhow::Error>,
}

fn run_once(cfg: &RunConfig, strategy: Strategy) -> CliResult<Run> {
    let blueprint = cfg.blueprint().config()?;
    let mut spec = blueprint.spec().config()?;
    let vocab = spec.unified().vocab().clone();
    let prompt = cfg.encode(&vocab, &cfg.prompt).config()?;
    check_prompt(&spec, &prompt).config()?;
    let mut gen = GenerationConfig::new(strategy, cfg.max_new_tokens, cfg.seed);
    gen.greedy = cfg.greedy;
    gen.stop = encode_stop(cfg, &vocab).config()?.into_iter().collect();

    let (trace, error) = match run_generation(&mut spec, &prompt, &gen) {
        Ok(t) => (t, None),
        Err(f) => (*f.trace, Some(anyhow!(f.error))),
    };
    let summary = trace.summary(simulate_latency(&trace, &cfg.latency));
    let tokens: Vec<&str> = trace.tokens.iter().map(|&t| vocab.token(t).unwrap_or("")).collect();
    let text = cfg.tokenization.join(&tokens);
    Ok(Run {
        trace,
        summary,
        text,
        error,
    })
}

pub fn generate(a: &GenerateArgs) -> CliResult<()> {
    let mut cfg = load(&a.run)?;
    if let Some(s) = a.strategy {
        cfg.strategy = Some(s);
    }
    if let Some(m) = a.model {
        cfg.single_model = m;
    }
    if let Some(p) = &a.prompt {
        cfg.prompt = p.clone();
    }
    if let Some(n) = a.max_new_tokens {
        cfg.max_new_tokens = n;
    }
    cfg.validate().config()?;

    let out = cfg.out_dir(a.run.out.as_deref());
    fs::create_dir_all(&out)
        .with_context(|| format!("creating {}", out.display()))
        .runtime()?;
    let started = Instant::now();
    let run = run_once(&cfg, cfg.strategy())?;

    // Written even on failure so the partial trace survives.
    let trace_path = out.join("trace.jsonl");
    let file = fs::File::create(&trace_path)
        .with_context(|| format!("creating {}", trace_path.display()))
        .runtime()?;
    let mut w = BufWriter::new(file);
    run.trace.write_jsonl(&mut w).and_then(|_| w.flush()).runtime()?;
    write_json(&out.join("summary.json"), &run.summary).runtime()?;
    write_meta(&out, started).runtime()?;

    if let Some(e) = run.error {
        return Err(CliError::Runtime(e.context(format!("partial trace written to {}", trace_path.display()))));
    }
    println!("{}", run.text);
    let s = &run.summary;
    eprintln!(
        "{}: {} tokens, {} decode forwards, {} prefill tokens, {:.1} simulated tok/s ({:.3}x vs sequential CE)",
        s.strategy, s.tokens, s.decode_forwards, s.prefill_tokens, s.simulated.tokens_per_sec, s.simulated.speedup_vs_ce
    );
    Ok(())
}

pub fn equivalence(a: &EquivalenceArgs) -> CliResult<()> {
    let mut cfg = load(&a.run)?;
    if let Some(w) = &a.sample_lambda {
        cfg.equivalence.sample_weights = Some(w.clone());
    }
    if let Some(s) = a.samples {
        cfg.equivalence.samples = s;
    }
    if let Some(step) = a.step {
        cfg.equivalence.lambda_step = step;
    }
    cfg.validate().config()?;

    let eq = &cfg.equivalence;
    if eq.samples < MIN_SAMPLES {
        return Err(CliError::Config(anyhow!("--samples must be at least {MIN_SAMPLES}")));
    }
    let mut thresholds = eq.thresholds.unwrap_or_default();
    if let Some(tv) = a.tv_threshold {
        thresholds.tv = tv;
    }
    if let Some(p) = a.p_floor {
        thresholds.p_floor = p;
    }
    if !(thresholds.tv > 0.0 && (0.0..1.0).contains(&thresholds.p_floor)) {
        return Err(CliError::Config(anyhow!("thresholds need tv > 0 and 0 ≤ p_floor < 1")));
    }
    if a.sweep && (cfg.models.len() != 2 || eq.sample_weights.is_some()) {
        return Err(CliError::Config(anyhow!(
            "a λ sweep needs exactly two models and no separate sample weights"
        )));
    }
    let workers = match a.workers {
        Some(n) => Some(NonZeroUsize::new(n).ok_or_else(|| CliError::Config(anyhow!("--workers must be ≥ 1")))?),
        None => None,
    };

    let texts: Vec<String> = match &a.prefixes {
        Some(p) => fs::read_to_string(p)
            .with_context(|| format!("reading {}", p.display()))
            .config()?
            .lines()
            .map(str::to_owned)
            .collect(),
        None if !eq.prefixes.is_empty() => eq.prefixes.clone(),
        None => vec![String::new()],
    };

    let blueprint = cfg.blueprint().config()?;
    let spec = blueprint.spec().config()?;
    let prefixes = texts
        .iter()
        .map(|t| {
            let ids = cfg.encode(spec.unified().vocab(), t)?;
            check_prompt(&spec, &ids)?;
            Ok(ids)
        })
        .collect::<anyhow::Result<Vec<_>>>()
        .config()?;
    let ecfg = EquivalenceConfig {
        samples: eq.samples,
        seed: cfg.seed,
        thresholds,
        sample_weights: eq
            .sample_weights
            .clone()
            .map(EnsembleWeights::new)
            .transpose()
            .config()?,
        workers,
        separator: cfg.tokenization.separator().to_owned(),
    };

    let out = cfg.out_dir(a.run.out.as_deref());
    fs::create_dir_all(&out)
        .with_context(|| format!("creating {}", out.display()))
        .runtime()?;
    let started = Instant::now();
    let reports = if a.sweep {
        let grid = harness::lambda_grid(eq.lambda_step);
        harness::lambda_sweep(&blueprint, &prefixes, &grid, &ecfg).runtime()?
    } else {
        vec![harness::equivalence(&blueprint, &prefixes, &ecfg).runtime()?]
    };
    for r in &reports {
        print_report(r);
    }
    let pass = reports.iter().all(|r| r.pass);
    if a.sweep {
        write_json(&out.join("equivalence.json"), &json!({ "pass": pass, "sweep": reports })).runtime()?;
    } else {
        write_json(&out.join("equivalence.json"), &reports[0]).runtime()?;
    }
    write_meta(&out, started).runtime()?;
    println!("{}", if pass { "PASS" } else { "FAIL" });
    Ok(())
}

fn print_report(r: &EquivalenceReport) {
    let fmt = |w: &[f64]| w.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(",");
    for p in &r.prefixes {
        println!(
            "λ=[{}] sample=[{}] prefix={:?} N={} tv={:.5} chi2={:.3} dof={} p={:.4} {}",
            fmt(&r.lambda),
            fmt(&r.sample_lambda),
            p.prefix_text,
            r.samples,
            p.tv,
            p.chi_square.statistic,
            p.chi_square.dof,
            p.chi_square.p_value,
            if p.pass { "PASS" } else { "FAIL" }
        );
    }
}

fn parse_vector(arg: &str) -> anyhow::Result<Vec<f64>> {
    let text = if arg.trim_start().starts_with('[') {
        arg.to_owned()
    } else {
        fs::read_to_string(arg).with_context(|| format!("reading {arg}"))?
    };
    serde_json::from_str(&text).with_context(|| format!("parsing {arg} as a JSON array of numbers"))
}

pub fn decompose(a: &DecomposeArgs) -> CliResult<()> {
    let combined = Distribution::new(parse_vector(&a.combined).config()?)
        .context("combined distribution")
        .config()?;
    let base = Distribution::new(parse_vector(&a.base).config()?)
        .context("base distribution")
        .config()?;
    let max = mixture::max_lambda(&combined, &base).config()?;
    let lambda = a.lambda.unwrap_or(max);
    match mixture::decompose(&combined, &base, lambda) {
        Ok(d) => {
            let doc = json!({
                "lambda": d.lambda(),
                "max_lambda": max,
                "combined": d.combined().probs(),
                "base": d.base().probs(),
                "residual": d.residual().probs(),
            });
            println!("{}", serde_json::to_string_pretty(&doc).runtime()?);
            Ok(())
        }
        Err(MixtureError::ContainmentViolated {
            token,
            combined: c,
            scaled_base,
        }) => {
            let doc = json!({
                "violation": "containment",
                "token": token,
                "combined": c,
                "scaled_base": scaled_base,
                "lambda": lambda,
                "max_lambda": max,
            });
            println!("{}", serde_json::to_string_pretty(&doc).runtime()?);
            Err(CliError::Math(anyhow!(
                "C[{token}] = {c} < λ·p[{token}] = {scaled_base}; largest feasible λ is {max}"
            )))
        }
        Err(e) => Err(CliError::Config(e.into())),
    }
}

#[derive(Debug, Serialize)]
struct BenchRow {
    strategy: String,
    tokens: usize,
    decode_forwards: u64,
    prefill_tokens: u64,
    simulated_ms: f64,
    tokens_per_sec: f64,
}

#[derive(Debug, Serialize)]
struct BenchCase {
    latency: LatencyModel,
    runs: Vec<BenchRow>,
    /// ME tokens/sec over CE tokens/sec, both simulated from their traces.
    speedup: f64,
    /// ME against the closed-form sequential CE estimate.
    speedup_vs_ce_sequential: f64,
}

pub fn bench(a: &BenchArgs) -> CliResult<()> {
    let mut cfg = load(&a.run)?;
    if let Some(p) = &a.prompt {
        cfg.prompt = p.clone();
    }
    if let Some(n) = a.max_new_tokens {
        cfg.max_new_tokens = n;
    }
    cfg.greedy = false;
    cfg.validate().config()?;

    let out = cfg.out_dir(a.run.out.as_deref());
    fs::create_dir_all(&out)
        .with_context(|| format!("creating {}", out.display()))
        .runtime()?;
    let started = Instant::now();
    let ce = run_once(&cfg, Strategy::Ce)?;
    let me = run_once(&cfg, Strategy::Me)?;
    for r in [&ce, &me] {
        if let Some(e) = &r.error {
            return Err(CliError::Runtime(anyhow!("{} run failed: {e:#}", r.summary.strategy)));
        }
    }

    let other = LatencyModel {
        extend: match cfg.latency.extend {
            ExtendCost::Fused => ExtendCost::Separate,
            ExtendCost::Separate => ExtendCost::Fused,
        },
        ..cfg.latency
    };
    let cases: Vec<BenchCase> = [cfg.latency, other]
        .into_iter()
        .map(|latency| {
            let runs: Vec<BenchRow> = [&ce, &me]
                .iter()
                .map(|r| {
                    let sim = simulate_latency(&r.trace, &latency);
                    BenchRow {
                        strategy: r.summary.strategy.clone(),
                        tokens: r.summary.tokens,
                        decode_forwards: r.summary.decode_forwards,
                        prefill_tokens: r.summary.prefill_tokens,
                        simulated_ms: sim.total_ms,
                        tokens_per_sec: sim.tokens_per_sec,
                    }
                })
                .collect();
            let speedup = if runs[0].tokens_per_sec > 0.0 {
                runs[1].tokens_per_sec / runs[0].tokens_per_sec
            } else {
                0.0
            };
            BenchCase {
                latency,
                speedup,
                speedup_vs_ce_sequential: simulate_latency(&me.trace, &latency).speedup_vs_ce,
                runs,
            }
        })
        .collect();

    println!(
        "{:<9} {:<8} {:>7} {:>9} {:>9} {:>12} {:>10}",
        "extend", "strategy", "tokens", "forwards", "prefill", "sim ms", "tok/s"
    );
    for c in &cases {
        let extend = format!("{:?}", c.latency.extend).to_lowercase();
        for r in &c.runs {
            println!(
                "{:<9} {:<8} {:>7} {:>9} {:>9} {:>12.1} {:>10.1}",
                extend, r.strategy, r.tokens, r.decode_forwards, r.prefill_tokens, r.simulated_ms, r.tokens_per_sec
            );
        }
        println!("{extend:<9} speedup me/ce = {:.3}x", c.speedup);
    }
    write_json(
        &out.join("bench.json"),
        &json!({ "models": cfg.models.len(), "seed": cfg.seed, "cases": cases }),
    )
    .runtime()?;
    write_meta(&out, started).runtime()?;
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Wall-clock facts kept apart from the deterministic outputs.
fn write_meta(dir: &Path, started: Instant) -> anyhow::Result<()> {
    let unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    write_json(
        &dir.join("meta.json"),
        &json!({
            "finished_unix_secs": unix,
            "elapsed_ms": started.elapsed().as_secs_f64() * 1000.0,
            "version": env!("CARGO_PKG_VERSION"),
        }),
    )
}
