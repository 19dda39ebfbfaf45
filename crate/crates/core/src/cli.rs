//! Command-line front end.
//!
//! ```text
//! spectrum-sim train     [--config PATH] [--seed S] [--out DIR] [--set KEY=VALUE]... [--policy P] [--workers W]
//! spectrum-sim eval      [same flags] [--snapshots DIR]
//! spectrum-sim oracle    [same flags]
//! spectrum-sim tabulate  [same flags] [--max-load L]
//! ```
//!
//! Every command writes `manifest.txt` into the output directory before it
//! computes anything. The manifest is itself a config file (metadata lives in
//! `#` comment lines), so `--config DIR/manifest.txt` replays the run.
//!
//! Exit status: 0 on success, 2 for configuration errors, 3 for runtime
//! errors.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};

use crate::aloha::analytic_probabilities;
use crate::baselines::{brute_force_optimal, is_pure_nash, UtilityTable};
use crate::config::{self, split_assignment};
use crate::engine::{
    load_balance_statistic, run_evaluation, run_training, upper_bound_reward, MetricsRecord,
    Policy, SimConfig, SLOT_HEADER, SUMMARY_HEADER,
};
use crate::error::{Error, Result};
use crate::load::{ChannelCounts, LoadCounters, LoadEstimator};
use crate::qnet::QNetworkParams;
use crate::snapshot::{agent_from_str, agent_to_string, AgentSnapshot};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

/// Output directory used when neither `--out` nor the environment sets one.
pub const DEFAULT_OUT: &str = "spectrum-sim-out";

pub const BOUND_HEADER: &str =
    "run,p_transmit,artifact_bound_bits_per_s,artifact_bound_reward,mean_reward,dominated";
pub const PROBABILITY_HEADER: &str = "p_transmit,load,no_transmission,success,collision";
pub const INVERSION_HEADER: &str = "p_transmit,load,success_ratio,estimated_load";
pub const ORACLE_SUMMARY_HEADER: &str = "kind,profile,welfare,pure_nash";

#[derive(Debug, Parser)]
#[command(
    name = "spectrum-sim",
    version,
    about = "Multi-agent spectrum sharing simulator"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train agents; writes snapshots and training metrics.
    Train(Common),
    /// Evaluate frozen agents; writes evaluation metrics and the bound check.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Directory written by `train`; untrained zero networks when absent.
        #[arg(long)]
        snapshots: Option<PathBuf>,
    },
    /// Enumerate a small fixed-gain game: optimum and pure Nash equilibria.
    Oracle(Common),
    /// Closed-form ALOHA probabilities, load inversion, and the bound.
    Tabulate {
        #[command(flatten)]
        common: Common,
        /// Largest load to tabulate (default N).
        #[arg(long)]
        max_load: Option<usize>,
    },
}

#[derive(Debug, Args)]
pub struct Common {
    /// Flat `key = value` config file; defaults apply when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run a single seed instead of the configured list.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, env = "SPECTRUM_SIM_OUT", default_value = DEFAULT_OUT)]
    pub out: PathBuf,
    /// Config override, applied after the file. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub policy: Option<Policy>,
    /// Parallel workers for independent seeds.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

impl Common {
    fn overrides(&self) -> Result<Vec<(String, String)>> {
        let mut pairs = Vec::new();
        for item in &self.set {
            let pair = split_assignment(item).ok_or_else(|| {
                Error::invalid("--set", format!("expected KEY=VALUE, got `{item}`"))
            })?;
            pairs.push(pair);
        }
        if let Some(policy) = self.policy {
            pairs.push(("policy".into(), policy.to_string()));
        }
        if let Some(seed) = self.seed {
            pairs.push(("seed".into(), seed.to_string()));
            pairs.push(("seeds".into(), String::new()));
        }
        Ok(pairs)
    }

    /// Resolved config; `strict` adds the `N > K` requirement.
    fn load(&self, strict: bool) -> Result<SimConfig> {
        let text = match &self.config {
            Some(path) => match fs::read_to_string(path) {
                Ok(text) => text,
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                    return Err(Error::MissingConfig(path.clone()))
                }
                Err(e) => return Err(e.into()),
            },
            None => String::new(),
        };
        let mut pairs = config::parse_assignments(&text)?;
        pairs.extend(self.overrides()?);
        let cfg = config::apply_assignments(SimConfig::default(), &pairs)?;
        if strict {
            cfg.validate()?;
        } else {
            cfg.validate_structure()?;
        }
        Ok(cfg)
    }
}

/// Metadata plus the complete resolved config.
#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub command: String,
    pub config: SimConfig,
    pub seeds: Vec<u64>,
    pub version: String,
    pub out_dir: PathBuf,
    pub created_unix: u64,
    /// Files the command writes, relative to `out_dir`.
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, config: &SimConfig, out_dir: &Path, outputs: Vec<String>) -> Self {
        RunManifest {
            command: command.to_string(),
            config: config.clone(),
            seeds: config.run_seeds(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            out_dir: out_dir.to_path_buf(),
            created_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
            outputs,
        }
    }

    pub fn to_text(&self) -> String {
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let mut out = format!(
            "# spectrum-sim {}\n# command = {}\n# seeds = {}\n# out_dir = {}\n# created_unix = {}\n",
            self.version,
            self.command,
            seeds.join(","),
            self.out_dir.display(),
            self.created_unix
        );
        for file in &self.outputs {
            out.push_str(&format!("# output = {file}\n"));
        }
        out.push_str(&config::to_text(&self.config));
        out
    }

    pub fn write(&self) -> Result<()> {
        fs::create_dir_all(&self.out_dir)?;
        fs::write(self.out_dir.join("manifest.txt"), self.to_text())?;
        Ok(())
    }
}

/// Parses arguments and runs; returns the process exit status.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(&cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("spectrum-sim: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(error: &Error) -> i32 {
    match error {
        Error::MissingConfig(_)
        | Error::UnknownKey(_)
        | Error::MalformedLine { .. }
        | Error::InvalidValue { .. }
        | Error::InvalidConfig(_) => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

pub fn execute(command: &Command) -> Result<()> {
    match command {
        Command::Train(common) => train(common),
        Command::Eval { common, snapshots } => eval(common, snapshots.as_deref()),
        Command::Oracle(common) => oracle(common),
        Command::Tabulate { common, max_load } => tabulate(common, *max_load),
    }
}

fn seed_config(cfg: &SimConfig, seed: u64) -> SimConfig {
    SimConfig {
        seed,
        seeds: Vec::new(),
        ..cfg.clone()
    }
}

/// Runs `job` for every seed on up to `workers` threads; results come back
/// in seed order.
fn for_each_seed<T, F>(seeds: &[u64], workers: usize, job: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync,
{
    let workers = workers.clamp(1, seeds.len().max(1));
    let mut slots: Vec<Option<Result<T>>> = (0..seeds.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let job = &job;
                scope.spawn(move || {
                    (w..seeds.len())
                        .step_by(workers)
                        .map(|i| (i, job(seeds[i])))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for handle in handles {
            for (i, result) in handle.join().expect("worker panicked") {
                slots[i] = Some(result);
            }
        }
    });
    slots
        .into_iter()
        .map(|r| r.expect("every seed ran"))
        .collect()
}

fn snapshot_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("snapshots_seed{seed}"))
}

fn write_file(
    path: &Path,
    write: impl FnOnce(&mut BufWriter<fs::File>) -> Result<()>,
) -> Result<()> {
    let mut file = BufWriter::new(fs::File::create(path)?);
    write(&mut file)?;
    file.flush()?;
    Ok(())
}

fn merge_summaries(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    write_file(path, |f| {
        writeln!(f, "{SUMMARY_HEADER}")?;
        for r in records {
            r.write_summaries_body(f)?;
        }
        Ok(())
    })
}

fn train(common: &Common) -> Result<()> {
    let cfg = common.load(true)?;
    let seeds = cfg.run_seeds();
    let out = &common.out;
    let mut outputs = vec!["train_summary.csv".to_string()];
    for s in &seeds {
        outputs.push(format!("train_slots_seed{s}.csv"));
        for n in 0..cfg.users {
            outputs.push(format!("snapshots_seed{s}/agent{n}.txt"));
        }
    }
    RunManifest::new("train", &cfg, out, outputs).write()?;

    let records = for_each_seed(&seeds, common.workers, |seed| {
        let run_cfg = seed_config(&cfg, seed);
        let trained = run_training(&run_cfg)?;
        write_file(&out.join(format!("train_slots_seed{seed}.csv")), |f| {
            trained.record.write_rows(f)
        })?;
        let dir = snapshot_dir(out, seed);
        fs::create_dir_all(&dir)?;
        for (n, snap) in trained.snapshots.iter().enumerate() {
            fs::write(dir.join(format!("agent{n}.txt")), agent_to_string(snap))?;
        }
        Ok(trained.record)
    })?;
    merge_summaries(&out.join("train_summary.csv"), &records)?;
    for r in &records {
        let last = r.summaries.last();
        let balance = load_balance_statistic(r);
        println!(
            "seed {}: final mean reward {:.4}, max load {:.2} (N/K = {:.2})",
            r.run,
            last.map_or(0.0, |s| s.mean_reward),
            balance.max_load,
            balance.reference
        );
    }
    Ok(())
}

fn load_snapshots(dir: &Path, users: usize) -> Result<Vec<AgentSnapshot>> {
    (0..users)
        .map(|n| {
            let path = dir.join(format!("agent{n}.txt"));
            let text = fs::read_to_string(&path).map_err(|source| Error::File { path, source })?;
            agent_from_str(&text)
        })
        .collect()
}

fn zero_snapshots(cfg: &SimConfig) -> Result<Vec<AgentSnapshot>> {
    let params = QNetworkParams::zeros(cfg.shape())?;
    Ok((0..cfg.users)
        .map(|_| AgentSnapshot {
            selection: params.clone(),
            evaluation: params.clone(),
            counters: LoadCounters::new(cfg.channels, cfg.window),
        })
        .collect())
}

fn eval(common: &Common, snapshots: Option<&Path>) -> Result<()> {
    let cfg = common.load(true)?;
    let seeds = cfg.run_seeds();
    let out = &common.out;
    let mut outputs = vec!["eval_summary.csv".to_string(), "bound.csv".to_string()];
    outputs.extend(seeds.iter().map(|s| format!("eval_slots_seed{s}.csv")));
    RunManifest::new("eval", &cfg, out, outputs).write()?;

    let bound = upper_bound_reward(&cfg)?;
    let records = for_each_seed(&seeds, common.workers, |seed| {
        let run_cfg = seed_config(&cfg, seed);
        let snaps = match snapshots {
            Some(dir) => load_snapshots(&snapshot_dir(dir, seed), cfg.users)?,
            None => zero_snapshots(&cfg)?,
        };
        let record = run_evaluation(&run_cfg, &snaps)?;
        write_file(&out.join(format!("eval_slots_seed{seed}.csv")), |f| {
            record.write_rows(f)
        })?;
        Ok(record)
    })?;
    merge_summaries(&out.join("eval_summary.csv"), &records)?;
    let reference = cfg.radio.reference_rate();
    write_file(&out.join("bound.csv"), |f| {
        writeln!(f, "{BOUND_HEADER}")?;
        for r in &records {
            let mean = r.mean_reward();
            writeln!(
                f,
                "{},{},{},{},{},{}",
                r.run,
                cfg.eval_p_transmit(),
                bound * reference,
                bound,
                mean,
                u8::from(mean <= bound)
            )?;
        }
        Ok(())
    })?;
    for r in &records {
        println!(
            "seed {}: mean reward {:.4} (artifact bound {:.4})",
            r.run,
            r.mean_reward(),
            bound
        );
    }
    Ok(())
}

fn profile_text(actions: &[usize]) -> String {
    let parts: Vec<String> = actions.iter().map(usize::to_string).collect();
    format!("({})", parts.join(" "))
}

fn oracle(common: &Common) -> Result<()> {
    let cfg = common.load(false)?;
    let out = &common.out;
    RunManifest::new(
        "oracle",
        &cfg,
        out,
        vec!["oracle_profiles.csv".into(), "oracle_summary.csv".into()],
    )
    .write()?;
    let field = cfg.gain_field()?;
    let table = UtilityTable::from_field(&field, &cfg.radio)?;
    let (best, welfare) = brute_force_optimal(&table)?;
    write_file(&out.join("oracle_profiles.csv"), |f| table.write_csv(f))?;

    let mut lines = vec![format!(
        "optimum,{},{},{}",
        profile_text(best.actions()),
        welfare,
        u8::from(is_pure_nash(&best, &table))
    )];
    for i in 0..table.len() {
        let profile = table.profile(i);
        if is_pure_nash(&profile, &table) {
            lines.push(format!(
                "nash,{},{},1",
                profile_text(profile.actions()),
                table.welfare(&profile)
            ));
        }
    }
    write_file(&out.join("oracle_summary.csv"), |f| {
        writeln!(f, "{ORACLE_SUMMARY_HEADER}")?;
        for line in &lines {
            writeln!(f, "{line}")?;
        }
        Ok(())
    })?;
    println!(
        "optimal profile {} welfare {:.4} ({} of {} profiles are pure Nash equilibria)",
        profile_text(best.actions()),
        welfare,
        lines.len() - 1,
        table.len()
    );
    Ok(())
}

fn tabulate(common: &Common, max_load: Option<usize>) -> Result<()> {
    let cfg = common.load(false)?;
    let out = &common.out;
    RunManifest::new(
        "tabulate",
        &cfg,
        out,
        vec![
            "probabilities.csv".into(),
            "load_inversion.csv".into(),
            "bound.csv".into(),
        ],
    )
    .write()?;
    let p = cfg.p_transmit();
    let max_load = max_load.unwrap_or(cfg.users).max(1);

    let mut rows = Vec::new();
    for load in 1..=max_load {
        let a = analytic_probabilities(p, load)?;
        rows.push(format!(
            "{p},{load},{},{},{}",
            a.no_transmission, a.success, a.collision
        ));
    }
    println!("{PROBABILITY_HEADER}");
    for row in &rows {
        println!("{row}");
    }
    write_file(&out.join("probabilities.csv"), |f| {
        writeln!(f, "{PROBABILITY_HEADER}")?;
        for row in &rows {
            writeln!(f, "{row}")?;
        }
        Ok(())
    })?;

    write_file(&out.join("load_inversion.csv"), |f| {
        writeln!(f, "{INVERSION_HEADER}")?;
        if !(p > 0.0 && p < 1.0) {
            return Ok(());
        }
        let estimator = LoadEstimator::with_offset(p, max_load, cfg.ceil_offset)?;
        // Expected success ratio (1 − p)^(L−1), realized with 10⁶ transmissions.
        let transmitted = 1_000_000u64;
        for load in 1..=max_load {
            let ratio = (1.0 - p).powi(load as i32 - 1);
            let counts = ChannelCounts {
                transmitted,
                succeeded: (ratio * transmitted as f64).round() as u64,
            };
            let estimate = estimator
                .estimate_counts(counts)
                .map_or("unknown".into(), |l| l.to_string());
            writeln!(f, "{p},{load},{ratio},{estimate}")?;
        }
        Ok(())
    })?;

    let bound = upper_bound_reward(&cfg)?;
    write_file(&out.join("bound.csv"), |f| {
        writeln!(
            f,
            "users,channels,p_transmit,artifact_bound_bits_per_s,artifact_bound_reward"
        )?;
        writeln!(
            f,
            "{},{},{},{},{}",
            cfg.users,
            cfg.channels,
            cfg.eval_p_transmit(),
            bound * cfg.radio.reference_rate(),
            bound
        )?;
        Ok(())
    })?;
    Ok(())
}

/// Header strings of the CSV files, for documentation and tests.
pub const CSV_HEADERS: &[(&str, &str)] = &[
    ("*_slots_seed*.csv", SLOT_HEADER),
    ("*_summary.csv", SUMMARY_HEADER),
    ("bound.csv (eval)", BOUND_HEADER),
    ("probabilities.csv", PROBABILITY_HEADER),
    ("load_inversion.csv", INVERSION_HEADER),
    ("oracle_summary.csv", ORACLE_SUMMARY_HEADER),
];
