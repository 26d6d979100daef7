//! `hcsit` — command-line front end for the hybrid-CSIT scheduling
//! simulator.
//!
//! Four subcommands cover the artifact lifecycle: `build` turns a
//! configuration into a cached model, `solve` runs the scheduling LP at a
//! queue vector, `simulate` executes trajectories under one controller, and
//! `sweep` runs the SNR×policy grid from the config's `[sweep]` table.
//!
//! Every run writes a `manifest.toml` capturing the configuration snapshot,
//! the codebook/model hashes, the tool version, and the seeds; every other
//! output file carries the manifest's hash so results trace back to what
//! produced them. Outputs are write-once, wall-clock timing goes to stderr
//! only, and everything else is byte-reproducible from (config, seed,
//! version).
//!
//! Exit codes: 0 success, 2 configuration or input-file error, 3 problem
//! too large for the dense machinery, 4 numerical failure.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use hybrid_csit::cache::{cache_checksum, codebook_hash_hex, model_to_bytes};
use hybrid_csit::channel::{RunConfig, SystemConfig};
use hybrid_csit::mdp::{derandomize, lp_rates, solve_saf_lp, MdpModel};
use hybrid_csit::numerics::RngStream;
use hybrid_csit::scheduler::FrameConfig;
use hybrid_csit::sim::{
    build_model_for, canonical_codebooks, run_trajectory, snr_sweep, PolicySpec, SweepSpec,
};
use hybrid_csit::{Error, Result};

#[derive(Parser)]
#[command(name = "hcsit", version, about = "Downlink MU-MIMO scheduling under hybrid CSIT")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the model tables from a configuration and cache them.
    Build(BuildArgs),
    /// Solve the scheduling LP at a queue vector and write the policy.
    Solve(SolveArgs),
    /// Run trajectories under one controller; write metrics and logs.
    Simulate(SimulateArgs),
    /// Run the SNR×policy sweep defined by the config's [sweep] table.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct Common {
    /// Configuration file: TOML with [system], optional [frame] and [sweep].
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (created if missing; files inside are write-once).
    #[arg(long)]
    out: PathBuf,
    /// Overrides [system].seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Caps the worker-thread count (default: $HCSIT_THREADS, else all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct BuildArgs {
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    common: Common,
    /// Model cache to load instead of building from --config.
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Queue weights, comma-separated (one per user).
    #[arg(long, conflicts_with = "ones")]
    queues: Option<String>,
    /// Shorthand for unit queue weights.
    #[arg(long)]
    ones: bool,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    /// Model cache to load instead of building from --config.
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Controller: frame | myopic | conventional, with optional
    /// :delayed-only / :bypass variants (variants need --config).
    #[arg(long, default_value = "frame")]
    policy: String,
    /// Scheduling intervals per trajectory.
    #[arg(long, default_value_t = 1000)]
    intervals: u64,
    /// Overrides [frame].frame_length.
    #[arg(long)]
    frame_length: Option<usize>,
    /// Overrides [frame].weight_v.
    #[arg(long)]
    weight_v: Option<f64>,
    /// Trajectory seeds, comma-separated; one trajectory per seed.
    #[arg(long, default_value = "1")]
    seeds: String,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
}

/// The CLI's config-file schema: the library's [system]/[frame] tables plus
/// an optional [sweep] grid.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CliConfig {
    system: SystemConfig,
    #[serde(default)]
    frame: FrameConfig,
    sweep: Option<SweepSpec>,
}

fn read_config(common: &Common) -> Result<CliConfig> {
    let path = common
        .config
        .as_deref()
        .ok_or_else(|| Error::Config("this command needs --config".into()))?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let mut cfg: CliConfig = toml::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    if let Some(seed) = common.seed {
        cfg.system.seed = seed;
    }
    cfg.system.validate()?;
    cfg.frame.validate(cfg.system.num_users)?;
    if let Some(sweep) = &cfg.sweep {
        sweep.validate()?;
    }
    Ok(cfg)
}

fn init_threads(flag: Option<usize>) -> Result<()> {
    let n = flag.or_else(|| {
        std::env::var("HCSIT_THREADS").ok().and_then(|v| v.parse().ok())
    });
    if let Some(n) = n {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn write_new(path: &Path, bytes: &[u8]) -> Result<()> {
    if path.exists() {
        return Err(Error::InvalidInput(format!(
            "refusing to overwrite existing output {}",
            path.display()
        )));
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

// ── manifest ───────────────────────────────────────────────────────────────

/// Everything needed to reproduce a run, written as `manifest.toml`. The
/// wall clock is deliberately absent: it goes to stderr so that outputs stay
/// byte-reproducible.
#[derive(Serialize)]
struct RunManifest<'a> {
    tool: &'static str,
    version: &'static str,
    codebook_hash: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    model_checksum: Option<String>,
    seeds: Vec<u64>,
    config: ManifestConfig<'a>,
}

#[derive(Serialize)]
struct ManifestConfig<'a> {
    system: &'a SystemConfig,
    frame: &'a FrameConfig,
}

/// Writes the manifest and returns the hex hash other outputs reference.
fn write_manifest(
    out_dir: &Path,
    system: &SystemConfig,
    frame: &FrameConfig,
    model_checksum: Option<String>,
    seeds: Vec<u64>,
) -> Result<String> {
    let manifest = RunManifest {
        tool: "hcsit",
        version: env!("CARGO_PKG_VERSION"),
        codebook_hash: codebook_hash_hex(&canonical_codebooks(system)),
        model_checksum,
        seeds,
        config: ManifestConfig { system, frame },
    };
    let text = toml::to_string(&manifest)
        .map_err(|e| Error::Config(format!("manifest serialization: {e}")))?;
    write_new(&out_dir.join("manifest.toml"), text.as_bytes())?;
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

// ── model acquisition ──────────────────────────────────────────────────────

/// Loads the model from an explicit cache, from the cache directory named by
/// `$HCSIT_CACHE_DIR` (building and caching on miss), or fresh from the
/// config. Returns the model and its cache checksum.
fn obtain_model(cache: Option<&Path>, cfg: Option<&SystemConfig>) -> Result<(MdpModel, String)> {
    if let Some(path) = cache {
        let bytes = std::fs::read(path).map_err(|e| {
            Error::CacheFormat(format!("{}: {e}", path.display()))
        })?;
        let model = hybrid_csit::cache::model_from_bytes(&bytes)?;
        return Ok((model, cache_checksum(&bytes)?));
    }
    let cfg = cfg.ok_or_else(|| Error::Config("this command needs --cache or --config".into()))?;
    if let Ok(dir) = std::env::var("HCSIT_CACHE_DIR") {
        let dir = PathBuf::from(dir);
        std::fs::create_dir_all(&dir)?;
        let key = {
            let toml = toml::to_string(cfg)
                .map_err(|e| Error::Config(format!("config serialization: {e}")))?;
            let mut hasher = Sha256::new();
            hasher.update(toml.as_bytes());
            let digest = hasher.finalize();
            digest[..8].iter().map(|b| format!("{b:02x}")).collect::<String>()
        };
        let path = dir.join(format!("model-{key}.hcm"));
        if path.exists() {
            let bytes = std::fs::read(&path)?;
            let model = hybrid_csit::cache::model_from_bytes(&bytes)?;
            return Ok((model, cache_checksum(&bytes)?));
        }
        let model = build_model_for(cfg)?;
        let checksum = hybrid_csit::cache::save_model(&model, &path)?;
        return Ok((model, checksum));
    }
    let model = build_model_for(cfg)?;
    let bytes = model_to_bytes(&model)?;
    Ok((model, cache_checksum(&bytes)?))
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>> {
    text.split(',')
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| Error::Config(format!("cannot parse {what} entry '{v}'")))
        })
        .collect()
}

fn join(values: &[f64], sep: &str) -> String {
    values.iter().map(f64::to_string).collect::<Vec<_>>().join(sep)
}

// ── subcommands ────────────────────────────────────────────────────────────

fn cmd_build(args: &BuildArgs) -> Result<()> {
    let cfg = read_config(&args.common)?;
    let model = build_model_for(&cfg.system)?;
    std::fs::create_dir_all(&args.common.out)?;
    let cache_path = args.common.out.join("model.hcm");
    if cache_path.exists() {
        return Err(Error::InvalidInput(format!(
            "refusing to overwrite existing cache {}",
            cache_path.display()
        )));
    }
    let checksum = hybrid_csit::cache::save_model(&model, &cache_path)?;
    let manifest = write_manifest(
        &args.common.out,
        &cfg.system,
        &cfg.frame,
        Some(checksum.clone()),
        vec![cfg.system.seed],
    )?;
    println!("states: {}", model.space.total_states());
    println!("actions: {}", model.actions.len());
    println!("pair-reward entries: {}", model.pair_rewards.len());
    println!("one-shot entries: {}", model.oneshot_rewards.len());
    println!("cache: {} (checksum {checksum})", cache_path.display());
    println!("manifest: {manifest}");
    Ok(())
}

fn cmd_solve(args: &SolveArgs) -> Result<()> {
    let (system, frame) = if args.common.config.is_some() {
        let cfg = read_config(&args.common)?;
        (Some(cfg.system), cfg.frame)
    } else {
        (None, FrameConfig::default())
    };
    let (model, checksum) = obtain_model(args.cache.as_deref(), system.as_ref())?;
    let n = model.space.num_users();
    let q: Vec<f64> = if args.ones {
        vec![1.0; n]
    } else if let Some(text) = &args.queues {
        let q = parse_list::<f64>(text, "queue")?;
        if q.len() != n {
            return Err(Error::Config(format!(
                "--queues has {} entries for {n} users",
                q.len()
            )));
        }
        q
    } else {
        return Err(Error::Config("solve needs --queues or --ones".into()));
    };

    let x = solve_saf_lp(&q, &model)?;
    let rates = lp_rates(&x, &model);
    let policy = derandomize(&x, &model, &q)?;

    std::fs::create_dir_all(&args.common.out)?;
    let manifest = write_manifest(
        &args.common.out,
        &model.cfg,
        &frame,
        Some(checksum),
        vec![model.cfg.seed],
    )?;

    let mut file = String::new();
    writeln!(file, "# manifest {manifest}").expect("string write");
    writeln!(file, "# objective {}", x.objective).expect("string write");
    writeln!(file, "# rates {}", join(&rates, ",")).expect("string write");
    writeln!(file, "# queues {}", join(&q, ",")).expect("string write");
    let mut action_counts = vec![0usize; model.actions.len()];
    for state in 0..policy.num_states() {
        let a = policy.action_at(state);
        action_counts[a] += 1;
        writeln!(file, "{state} {}", model.actions[a]).expect("string write");
    }
    write_new(&args.common.out.join("policy.txt"), file.as_bytes())?;

    println!("objective: {}", x.objective);
    println!("rates: {}", join(&rates, ","));
    for (a, count) in action_counts.iter().enumerate() {
        println!("policy: {} chosen in {count} states", model.actions[a]);
    }
    println!("manifest: {manifest}");
    Ok(())
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let spec: PolicySpec = args.policy.parse()?;
    if args.cache.is_some() && (spec.delayed_only || spec.bypass) {
        return Err(Error::Config(
            "policy variants (:delayed-only / :bypass) change the model; build from --config".into(),
        ));
    }
    let (system, mut frame) = if args.common.config.is_some() {
        let cfg = read_config(&args.common)?;
        (Some(spec.apply(&cfg.system)), cfg.frame)
    } else {
        (None, FrameConfig::default())
    };
    if let Some(t) = args.frame_length {
        frame.frame_length = t;
    }
    if let Some(v) = args.weight_v {
        frame.weight_v = v;
    }
    let (model, checksum) = obtain_model(args.cache.as_deref(), system.as_ref())?;
    frame.validate(model.space.num_users())?;
    let seeds = parse_list::<u64>(&args.seeds, "seed")?;
    if seeds.is_empty() {
        return Err(Error::Config("simulate needs at least one seed".into()));
    }

    std::fs::create_dir_all(&args.common.out)?;
    let manifest = write_manifest(
        &args.common.out,
        &model.cfg,
        &frame,
        Some(checksum),
        seeds.clone(),
    )?;

    let mut csv = String::from(
        "seed,policy,sum_rate,utility,queue_mean,queue_max,lyapunov_final,throughputs\n",
    );
    let mut sum_rates = Vec::with_capacity(seeds.len());
    for &seed in &seeds {
        let (metrics, log) =
            run_trajectory(&model, &frame, spec.kind, args.intervals, &RngStream::new(seed, 0))?;
        let sum_rate: f64 = metrics.throughput.iter().sum();
        sum_rates.push(sum_rate);
        writeln!(
            csv,
            "{seed},{},{sum_rate},{},{},{},{},{}",
            args.policy,
            metrics.utility,
            metrics.queue_mean,
            metrics.queue_max,
            metrics.lyapunov_final,
            join(&metrics.throughput, ";"),
        )
        .expect("string write");
        let mut log_text = format!("# manifest {manifest}\n");
        log_text.push_str(&log.to_text());
        write_new(
            &args.common.out.join(format!("trajectory-seed{seed}.log")),
            log_text.as_bytes(),
        )?;
        println!(
            "seed {seed}: sum_rate {sum_rate} utility {} queue_mean {}",
            metrics.utility, metrics.queue_mean
        );
    }
    writeln!(csv, "# manifest {manifest}").expect("string write");
    write_new(&args.common.out.join("metrics.csv"), csv.as_bytes())?;
    let mean: f64 = sum_rates.iter().sum::<f64>() / sum_rates.len() as f64;
    println!("mean sum_rate over {} seeds: {mean}", seeds.len());
    println!("manifest: {manifest}");
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let cfg = read_config(&args.common)?;
    let sweep = cfg
        .sweep
        .ok_or_else(|| Error::Config("sweep needs a [sweep] table in the config".into()))?;
    let run = RunConfig { system: cfg.system.clone(), frame: cfg.frame.clone() };
    let table = snr_sweep(&sweep, &run)?;

    std::fs::create_dir_all(&args.common.out)?;
    let manifest =
        write_manifest(&args.common.out, &cfg.system, &cfg.frame, None, sweep.seeds.clone())?;
    let mut csv = table.to_csv();
    csv.push_str(&format!("# manifest {manifest}\n"));
    write_new(&args.common.out.join("sweep.csv"), csv.as_bytes())?;

    println!("rows: {}", table.rows.len());
    println!("cell errors: {}", table.errors.len());
    for e in &table.errors {
        println!("  snr {} policy {}: {}", e.snr_db, e.policy, e.message);
    }
    println!("manifest: {manifest}");
    Ok(())
}

// ── entry point ────────────────────────────────────────────────────────────

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_)
        | Error::InvalidInput(_)
        | Error::Io(_)
        | Error::CacheFormat(_)
        | Error::CacheHashMismatch(_) => 2,
        Error::StateSpaceTooLarge { .. } | Error::LpTooLarge { .. } => 3,
        _ => 4,
    }
}

fn run(cli: &Cli) -> Result<()> {
    let common = match &cli.command {
        Command::Build(a) => &a.common,
        Command::Solve(a) => &a.common,
        Command::Simulate(a) => &a.common,
        Command::Sweep(a) => &a.common,
    };
    init_threads(common.threads)?;
    match &cli.command {
        Command::Build(a) => cmd_build(a),
        Command::Solve(a) => cmd_solve(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Sweep(a) => cmd_sweep(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let start = Instant::now();
    let result = run(&cli);
    eprintln!("elapsed: {:.2}s", start.elapsed().as_secs_f64());
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_partition_the_error_space() {
        assert_eq!(exit_code_for(&Error::Config("x".into())), 2);
        assert_eq!(exit_code_for(&Error::CacheHashMismatch("x".into())), 2);
        assert_eq!(
            exit_code_for(&Error::StateSpaceTooLarge { states: 1e27, limit: 1 }),
            3
        );
        assert_eq!(exit_code_for(&Error::LpTooLarge { columns: 9999, limit: 1 }), 3);
        assert_eq!(exit_code_for(&Error::Solver("x".into())), 4);
        assert_eq!(
            exit_code_for(&Error::NotPositiveDefinite { index: 0, pivot: -1.0 }),
            4
        );
    }

    #[test]
    fn list_parsing_reports_the_bad_entry() {
        assert_eq!(parse_list::<u64>("1, 2,3", "seed").unwrap(), vec![1, 2, 3]);
        let err = parse_list::<f64>("1.0,x", "queue").unwrap_err();
        assert!(err.to_string().contains('x'));
    }
}
