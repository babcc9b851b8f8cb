//! The `vireid` command line.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{AugmentationSection, EvalSection, ProtocolKind, RunConfig};
use crate::data::{load_manifest, synthesize_dataset, SyntheticSpec};
use crate::error::{Error, Result};
use crate::evaluation::{feature_sets, read_dump, write_dump, RegdbProtocol, Shot, SysuMode, SysuProtocol};
use crate::model::Stage;
use crate::report::{evaluate_features, evaluate_model, metrics_table, summarize_run, EvalReport};
use crate::training::{embed_dataset, feature_sets_for, load_model_any, train, RunDir, TrainRequest};

#[derive(Debug, Parser)]
#[command(name = "vireid", version, about = "Staged visible-infrared re-identification training")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset (PNG images plus manifest.csv).
    SynthData(SynthArgs),
    /// Run training stages into a run directory.
    Train(TrainArgs),
    /// Export unit-norm embeddings of a manifest.
    Embed(EmbedArgs),
    /// Score embeddings or a model under a retrieval protocol.
    Eval(EvalArgs),
    /// Summarise a run directory.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub identities: usize,
    #[arg(long, default_value_t = 20)]
    pub per_modality: usize,
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    #[arg(long, default_value_t = 32)]
    pub width: usize,
    #[arg(long, default_value_t = 0.08)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0)]
    pub variant: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StageArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    #[value(name = "3")]
    Three,
    All,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub run_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = StageArg::All)]
    pub stage: StageArg,
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub allow_skip: bool,
    /// Override a config value, e.g. `--set train.hsa.lambda1=0.1`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Evaluate the final model and write `report.json` into the run dir.
    #[arg(long)]
    pub eval: bool,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    /// Model archive or checkpoint.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProtocolArg {
    Sysu,
    Regdb,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    All,
    Indoor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ShotArg {
    Single,
    Multi,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Embedding dump to score.
    #[arg(long, conflicts_with_all = ["model", "run_dir"])]
    pub embeddings: Option<PathBuf>,
    /// Model archive or checkpoint, scored on `--manifest`.
    #[arg(long, requires = "manifest")]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Score a run's final model on its configured evaluation data.
    #[arg(long, requires = "config")]
    pub run_dir: Option<PathBuf>,
    /// Supplies protocol settings (and data with `--run-dir`).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long, value_enum)]
    pub protocol: Option<ProtocolArg>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    pub shot: Option<ShotArg>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Report destination; defaults to `report.json` in the run dir.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub run_dir: PathBuf,
    /// Write one loss-curve SVG per stage.
    #[arg(long)]
    pub plots: bool,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SynthData(a) => synth_data(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Embed(a) => cmd_embed(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Report(a) => {
            let s = summarize_run(&RunDir::new(&a.run_dir), a.plots)?;
            print!("{}", s.table);
            for p in s.plots {
                println!("wrote {}", p.display());
            }
            Ok(())
        }
    }
}

fn synth_data(a: &SynthArgs) -> Result<()> {
    let spec = SyntheticSpec {
        num_identities: a.identities,
        images_per_identity_per_modality: a.per_modality,
        image_height: a.height,
        image_width: a.width,
        noise_std: a.noise,
        seed: a.seed,
        variant: a.variant,
        ..SyntheticSpec::default()
    };
    let problems = spec.validate();
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }
    let manifest = synthesize_dataset(&spec).write_to_dir(&a.out)?;
    println!("wrote {}", manifest.display());
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let config = RunConfig::load(&a.config, &a.overrides)?;
    let stages = match a.stage {
        StageArg::One => vec![Stage::Tsg],
        StageArg::Two => vec![Stage::Ife],
        StageArg::Three => vec![Stage::Hsa],
        StageArg::All => Vec::new(),
    };
    let run = RunDir::new(&a.run_dir);
    let outcome = train(
        &config,
        &run,
        &TrainRequest {
            stages,
            resume: a.resume.clone(),
            allow_skip: a.allow_skip,
        },
    )?;
    let names: Vec<String> = outcome.completed.iter().map(|s| s.number().to_string()).collect();
    println!("completed stages [{}] in {}", names.join(", "), run.root.display());
    if a.eval {
        let report = evaluate_model(&config, &outcome.model)?;
        report.save(&run.root.join("report.json"))?;
        print!("{}", metrics_table(&report.rows()));
    }
    Ok(())
}

fn cmd_embed(a: &EmbedArgs) -> Result<()> {
    let model = load_model_any(&a.model)?;
    let dataset = load_manifest(&a.manifest)?;
    let aug = AugmentationSection::default().resolve(&model.arch);
    let records = embed_dataset(&model, &dataset, &aug)?;
    write_dump(&a.out, &records)?;
    println!("wrote {} embeddings to {}", records.len(), a.out.display());
    Ok(())
}

fn eval_section(a: &EvalArgs, config: Option<&RunConfig>) -> EvalSection {
    let mut e = config.map(|c| c.eval.clone()).unwrap_or(EvalSection {
        protocol: ProtocolKind::Sysu,
        sysu: SysuProtocol::default(),
        regdb: RegdbProtocol::default(),
    });
    if let Some(p) = a.protocol {
        e.protocol = match p {
            ProtocolArg::Sysu => ProtocolKind::Sysu,
            ProtocolArg::Regdb => ProtocolKind::Regdb,
        };
    }
    if let Some(t) = a.trials {
        e.sysu.trials = t;
        e.regdb.repeats = t;
    }
    if let Some(m) = a.mode {
        e.sysu.mode = match m {
            ModeArg::All => SysuMode::All,
            ModeArg::Indoor => SysuMode::Indoor,
        };
    }
    if let Some(s) = a.shot {
        e.sysu.shot = match s {
            ShotArg::Single => Shot::Single,
            ShotArg::Multi => Shot::Multi,
        };
    }
    if let Some(s) = a.seed {
        e.sysu.seed = s;
        e.regdb.seed = s;
    }
    e
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let config = a
        .config
        .as_deref()
        .map(|p| RunConfig::load(p, &a.overrides))
        .transpose()?;
    let section = eval_section(a, config.as_ref());
    let (report, default_out) = if let Some(dump) = &a.embeddings {
        let (vis, ir) = feature_sets(&read_dump(dump)?)?;
        (evaluate_features(&vis, &ir, &section)?, None)
    } else if let Some(model_path) = &a.model {
        let model = load_model_any(model_path)?;
        let manifest = a.manifest.as_ref().expect("clap requires manifest");
        let dataset = load_manifest(manifest)?;
        let aug = config
            .as_ref()
            .map(|c| c.augmentation_for(&model.arch))
            .unwrap_or_else(|| AugmentationSection::default().resolve(&model.arch));
        let (vis, ir) = feature_sets_for(&model, &dataset, &aug)?;
        (evaluate_features(&vis, &ir, &section)?, None)
    } else if let Some(dir) = &a.run_dir {
        let mut config = config.expect("clap requires config");
        config.eval = section;
        let run = RunDir::new(dir);
        let model = load_model_any(&run.final_model())?;
        (evaluate_model(&config, &model)?, Some(run.root.join("report.json")))
    } else {
        return Err(Error::validation("eval needs --embeddings, --model with --manifest, or --run-dir"));
    };
    let out = a.out.clone().or(default_out);
    if let Some(p) = &out {
        write_report(&report, p)?;
    } else {
        println!("{}", report.to_json());
    }
    print!("{}", metrics_table(&report.rows()));
    Ok(())
}

fn write_report(report: &EvalReport, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    report.save(path)
}
