use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use streamroute::classifier::save_checkpoint;
use streamroute::dataset::save_dataset;
use streamroute::expert::{ExpertResponse, StubBehavior, StubServer};
use streamroute::harness::{
    describe, evaluate_scorer, evaluate_stream_logs, generate, run_sweep, simulate, train_encoder, write_json, write_stream_logs,
    write_summary_csv, write_sweep_csv, ExperimentConfig, ExpertSpec, SummaryRow,
};
use streamroute::router::read_decision_log;
use streamroute::{Error, Result};

#[derive(Parser)]
#[command(name = "streamroute", version, about = "Streaming detection with selective expert escalation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a config value, e.g. `--set router.max_enc=10`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Experiment seed; every component seed derives from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (defaults to `output.dir`, then `out`).
    #[arg(long, short)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        ExperimentConfig::load(self.config.as_deref(), &self.overrides, self.seed)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset and a matching experiment config.
    GenSynthetic {
        #[command(flatten)]
        common: Common,
    },
    /// Train the streaming encoder and save a checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Route every stream once and report metrics and decision logs.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Sweep max_enc x max_defer (plus presets) and write a CSV.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
    /// Score decision logs, or the configured scorer alone.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Directory of `<stream_id>.jsonl` decision logs.
        #[arg(long)]
        logs: Option<PathBuf>,
    },
    /// Serve the expert wire protocol for testing.
    ServeStubExpert {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        /// Delay before every response.
        #[arg(long, default_value_t = 0)]
        delay_ms: u64,
        /// Answer every request with this label instead of the configured expert.
        #[arg(long)]
        label: Option<String>,
        #[arg(long, default_value_t = 0.9, requires = "label")]
        confidence: f64,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenSynthetic { common } => gen_synthetic(&common),
        Command::Train { common } => {
            let cfg = common.load()?;
            let out = cfg.output_dir(common.out.as_deref());
            let (encoder, summary, labels) = train_encoder(&cfg)?;
            save_checkpoint(&encoder, &labels, out.join("encoder.ckpt"))?;
            write_json(out.join("train.json"), &summary)?;
            println!(
                "trained on {} videos: train m-f1 {:.4}, test m-f1 {:.4} ({} test videos)",
                summary.train_videos, summary.train.macro_f1, summary.test.macro_f1, summary.test_videos
            );
            println!("wrote {}", out.join("encoder.ckpt").display());
            Ok(())
        }
        Command::Simulate { common } => {
            let cfg = common.load()?;
            let out = cfg.output_dir(common.out.as_deref());
            let sim = simulate(&cfg)?;
            write_json(out.join("metrics.json"), &sim.report)?;
            let row = SummaryRow::new(
                "simulate",
                cfg.router.max_enc,
                cfg.router.max_defer,
                cfg.router.deferral_source,
                &sim.report,
            );
            write_summary_csv(out.join("metrics.csv"), &[row])?;
            write_stream_logs(out.join("logs"), &sim.logs)?;
            println!("{}", describe(&sim.report));
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Sweep { common } => {
            let cfg = common.load()?;
            let out = cfg.output_dir(common.out.as_deref());
            let rows = run_sweep(&cfg)?;
            write_sweep_csv(out.join("sweep.csv"), &rows)?;
            write_json(out.join("sweep.json"), &rows)?;
            for r in rows.iter().filter(|r| r.name != "grid") {
                println!("{:<14} {}", r.name, describe(&r.report));
            }
            println!("wrote {} rows to {}", rows.len(), out.join("sweep.csv").display());
            Ok(())
        }
        Command::Evaluate { common, logs } => {
            let cfg = common.load()?;
            let out = cfg.output_dir(common.out.as_deref());
            let dataset = cfg.load_dataset()?;
            match logs {
                Some(dir) => {
                    let report = evaluate_stream_logs(&cfg, &dataset, read_log_dir(&dir)?)?;
                    write_json(out.join("evaluation.json"), &report)?;
                    println!("{}", describe(&report));
                }
                None => {
                    let scorer = cfg.build_scorer(&dataset)?;
                    let report = evaluate_scorer(&dataset, scorer.as_ref(), &cfg.stream)?;
                    write_json(out.join("scorer.json"), &report)?;
                    println!(
                        "scorer acc {:.4}  m-f1 {:.4}  ({} scored)",
                        report.accuracy, report.macro_f1, report.scored
                    );
                }
            }
            Ok(())
        }
        Command::ServeStubExpert {
            common,
            addr,
            delay_ms,
            label,
            confidence,
        } => {
            let behavior = match label {
                Some(label) => StubBehavior::Canned(ExpertResponse {
                    label,
                    confidence,
                    model_id: "stub".into(),
                }),
                None => {
                    let cfg = common.load()?;
                    if matches!(cfg.expert, ExpertSpec::Remote { .. } | ExpertSpec::None) {
                        return Err(Error::Config("the stub serves a local oracle expert or a canned --label".into()));
                    }
                    let dataset = cfg.load_dataset()?;
                    let expert = cfg.build_expert(&dataset)?.expect("oracle expert");
                    StubBehavior::Expert(expert)
                }
            };
            let server = StubServer::start(&addr, behavior, Duration::from_millis(delay_ms))?;
            println!("listening on {}", server.endpoint());
            let _ = std::io::stdout().flush();
            server.wait();
            Ok(())
        }
    }
}

fn gen_synthetic(common: &Common) -> Result<()> {
    let cfg = common.load()?;
    let out = cfg.output_dir(common.out.as_deref());
    let dataset = generate(&cfg.synthetic_config())?;
    save_dataset(&dataset, out.join("data"))?;

    // A config that replays this dataset with the same scorer, expert and router.
    let mut doc = toml::Table::new();
    doc.insert("seed".into(), toml::Value::Integer(cfg.seed as i64));
    let mut ds = toml::Table::new();
    ds.insert("path".into(), toml::Value::String("data".into()));
    doc.insert("dataset".into(), toml::Value::Table(ds));
    for (name, value) in [
        ("stream", toml::Value::try_from(cfg.stream)),
        ("scorer", toml::Value::try_from(&cfg.scorer)),
        ("expert", toml::Value::try_from(&cfg.expert)),
        ("router", toml::Value::try_from(&cfg.router)),
        ("latency", toml::Value::try_from(&cfg.latency)),
    ] {
        doc.insert(name.into(), value.map_err(|e| Error::Config(e.to_string()))?);
    }
    let path = out.join("experiment.toml");
    let text = toml::to_string(&doc).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(&path, text).map_err(|e| Error::Io {
        path: path.clone(),
        source: e,
    })?;
    println!(
        "wrote {} streams x {} steps to {}",
        dataset.videos.len(),
        cfg.synthetic_config().length,
        out.join("data").display()
    );
    println!("wrote {}", path.display());
    Ok(())
}

fn read_log_dir(dir: &Path) -> Result<Vec<(String, Vec<streamroute::router::DecisionRecord>)>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Invalid(format!("no .jsonl decision logs in {}", dir.display())));
    }
    paths
        .into_iter()
        .map(|p| {
            let id = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            Ok((id, read_decision_log(&p)?))
        })
        .collect()
}
