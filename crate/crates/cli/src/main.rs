//! `csr-lab`: data generation, training, evaluation, sweeps and theory checks.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use csr_core::experiment::cells::datasets;
use csr_core::experiment::checks::{ablate_editor, check_dominance, check_noisy_verifier, check_shortcut};
use csr_core::experiment::rundir::HashManifest;
use csr_core::experiment::{sweep, CellCache, CheckLine, CheckStatus, LabConfig, RunDir, Summary, SweepKind};
use csr_core::metrics::{evaluate, write_probe_csv, TrainedModel};
use csr_core::model::ModelParams;
use csr_core::{par, Error};

const EXIT_CONFIG: u8 = 2;
const EXIT_CHECK: u8 = 3;
const EXIT_IO: u8 = 4;
const EXIT_INTERNAL: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Command {
    Gen,
    Train,
    Eval,
    SweepLambda,
    SweepNoise,
    SweepDivergence,
    SweepDepth,
    AblateEditor,
    CheckDominance,
    CheckNoisyVerifier,
    CheckShortcut,
}

impl Command {
    fn name(self) -> String {
        self.to_possible_value().expect("no skipped variants").get_name().to_string()
    }
}

#[derive(Debug, Parser)]
#[command(name = "csr-lab", version, about = "Counterfactual sensitivity regularization laboratory")]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// Lab configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Root under which the timestamped run directory is created.
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated run seeds.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    seeds: Vec<u64>,
    /// Config override as a dotted key, e.g. `train.lambda=0.3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Existing checkpoint for `eval` and the model-level checks.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Worker threads; defaults to all cores.
    #[arg(long, env = "CSR_LAB_WORKERS")]
    workers: Option<usize>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Precondition(_) | Error::Json(_) => EXIT_CONFIG,
        Error::Io(_) | Error::Csv(_) => EXIT_IO,
        _ => EXIT_INTERNAL,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(w) = cli.workers {
        par::init_workers(w);
    }
    match run(&cli) {
        Ok((summary, dir)) => {
            for c in &summary.checks {
                println!("{c}");
            }
            println!("{} {}", summary.status, dir.path.display());
            if summary.pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_CHECK)
            }
        }
        Err(e) => {
            eprintln!("csr-lab: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn load_config(cli: &Cli) -> csr_core::Result<LabConfig> {
    let base = LabConfig::load(&cli.config)?;
    let cfg = base.with_overrides(&cli.set)?;
    if cli.seeds.is_empty() {
        return Err(Error::Config("--seeds must list at least one seed".into()));
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> csr_core::Result<(Summary, RunDir)> {
    let cfg = load_config(cli)?;
    let command = cli.command.name();
    let dir = RunDir::create(&cli.out, &command)?;
    dir.write_config(&cfg, &cli.seeds)?;
    let cache = CellCache::new(Some(&dir.join("cells")));
    let mut hashes = HashManifest::default();
    let checkpoint = match &cli.checkpoint {
        Some(p) => Some(ModelParams::load(p)?),
        None => None,
    };

    let checks: Vec<CheckLine> = match cli.command {
        Command::Gen => {
            for &s in &cli.seeds {
                let (train, eval) = datasets(&cfg, s)?;
                let d = dir.join(&format!("seed{s}"));
                train.save(&d, "train")?;
                eval.save(&d, "eval")?;
                hashes.datasets.insert(format!("seed{s}/train"), train.manifest.dataset_hash);
                hashes.datasets.insert(format!("seed{s}/eval"), eval.manifest.dataset_hash);
            }
            Summary::plumbing(&command).checks
        }
        Command::Train => {
            for &s in &cli.seeds {
                cache.get(&cfg, "train", s)?;
            }
            Summary::plumbing(&command).checks
        }
        Command::Eval => {
            match &checkpoint {
                Some(params) => {
                    let model = TrainedModel {
                        params,
                        temperature: cfg.eval.temperature,
                    };
                    let mut reports = Vec::new();
                    for &s in &cli.seeds {
                        let (_, eval) = datasets(&cfg, s)?;
                        let mut ecfg = cfg.eval.clone();
                        ecfg.seed = s;
                        let ev = evaluate(&model, &eval.tokenizer(), &eval.tasks, &ecfg)?;
                        write_probe_csv(&ev.records, &dir.join(&format!("probes-seed{s}.csv")))?;
                        hashes.datasets.insert(format!("seed{s}/eval"), eval.manifest.dataset_hash);
                        reports.push((s, ev.report));
                    }
                    hashes.checkpoints.insert("input".into(), params.hash());
                    dir.write_json("metrics.json", &reports)?;
                }
                None => {
                    for &s in &cli.seeds {
                        cache.get(&cfg, "eval", s)?;
                    }
                }
            }
            Summary::plumbing(&command).checks
        }
        Command::SweepLambda | Command::SweepNoise | Command::SweepDivergence | Command::SweepDepth => {
            let kind = match cli.command {
                Command::SweepLambda => SweepKind::Lambda,
                Command::SweepNoise => SweepKind::Noise,
                Command::SweepDivergence => SweepKind::Divergence,
                _ => SweepKind::Depth,
            };
            let report = sweep(kind, &cfg, &cli.seeds, &cache)?;
            dir.write_json("sweep.json", &report)?;
            std::fs::write(dir.join("sweep.csv"), report.to_csv())?;
            report.verdicts
        }
        Command::AblateEditor => {
            let report = ablate_editor(&cfg, &cli.seeds, &cache)?;
            dir.write_json("editor_ablation.json", &report)?;
            vec![CheckLine::new("ablate-editor", report.status, report.detail)]
        }
        Command::CheckShortcut => {
            let report = check_shortcut(&cfg, &cli.seeds, &cache)?;
            dir.write_json("shortcut.json", &report)?;
            report.lines
        }
        Command::CheckDominance => {
            let mut lines = Vec::new();
            let mut reports = Vec::new();
            for &s in &cli.seeds {
                let report = match &checkpoint {
                    Some(p) => check_dominance(p, &cfg, s)?,
                    None => check_dominance(&cache.get(&cfg, "dominance-model", s)?.params, &cfg, s)?,
                };
                lines.extend(report.lines().into_iter().map(|mut l| {
                    l.name = format!("seed{s} {}", l.name);
                    l
                }));
                reports.push(report);
            }
            dir.write_json("dominance.json", &reports)?;
            lines
        }
        Command::CheckNoisyVerifier => {
            let s = cli.seeds[0];
            let (params, eval) = match &checkpoint {
                Some(p) => (p.clone(), datasets(&cfg, s)?.1),
                None => {
                    let cell = cache.get(&cfg, "noisy-verifier-model", s)?;
                    (cell.params.clone(), cell.eval_data.clone())
                }
            };
            let report = check_noisy_verifier(
                &params,
                &eval.tokenizer(),
                &eval.tasks,
                &cfg.train,
                &cfg.checks.noisy_flip_rates,
                cfg.checks.noisy_samples,
                s,
            )?;
            dir.write_json("noisy_verifier.json", &report)?;
            let mut lines = report.lines();
            if report.status != CheckStatus::Pass && lines.iter().all(|l| l.status.ok()) {
                lines.push(CheckLine::new("noisy-verifier", report.status, "overall"));
            }
            lines
        }
    };

    let results = cache.results();
    for r in &results {
        let tag = format!("{}-seed{}", r.label, r.seed);
        hashes.datasets.insert(format!("{tag}/train"), r.train_dataset_hash.clone());
        hashes.datasets.insert(format!("{tag}/eval"), r.eval_dataset_hash.clone());
        hashes.checkpoints.insert(tag, r.checkpoint_hash.clone());
    }
    if !results.is_empty() {
        dir.write_json("metrics.json", &results)?;
    }
    dir.write_json("manifest_hashes.json", &hashes)?;
    let summary = Summary::new(&command, checks);
    dir.write_json("summary.json", &summary)?;
    Ok((summary, dir))
}
