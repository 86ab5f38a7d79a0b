//! Command-line surface. Each subcommand is also callable as a function.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::artifact::{dataset_digest, ModelArtifact};
use crate::bagging::{write_candidates_csv, RankingMode};
use crate::config::{streams, PipelineConfig};
use crate::error::{Error, Result};
use crate::evaluation::{run_experiment, MetricsReport, SplitMode};
use crate::features::{
    read_feature_csv, select_features, write_feature_csv, FeatureTable, SelectionScope,
};
use crate::forest::label_of;
use crate::pipeline::{fit_ensemble, trips_to_features};
use crate::synth::{generate, SynthSpec};
use crate::telemetry::{parse_trip_csv, write_trip_csv, TRIP_CSV_HEADER};

#[derive(Debug, Parser)]
#[command(name = "telemafuse", version, about = "Driver classification from telemetry with Choquet-fused random forests")]
pub struct Cli {
    #[command(flatten)]
    pub overrides: Overrides,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    ByDriver,
    ByWindow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RankingArg {
    Oob,
    Resubstitution,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SelectionArg {
    PerFold,
    Global,
}

/// Options shared by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// TOML configuration file; built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed (overrides the config file).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    pub split: Option<SplitArg>,
    #[arg(long, global = true, value_enum)]
    pub ranking: Option<RankingArg>,
    #[arg(long, global = true, value_enum)]
    pub selection: Option<SelectionArg>,
    /// Resubstitution ranking and matrices, global selection, by-window split.
    #[arg(long, global = true)]
    pub fidelity_paper: bool,
}

impl Overrides {
    /// Loads the config file (or defaults) and applies the flags.
    pub fn resolve(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        if self.fidelity_paper {
            cfg.apply_fidelity_paper();
        }
        if let Some(s) = self.seed {
            if s > i64::MAX as u64 {
                return Err(Error::Config(format!("seed {s} exceeds {}", i64::MAX)));
            }
            cfg.seed = s;
        }
        if let Some(s) = self.split {
            cfg.evaluation.split = match s {
                SplitArg::ByDriver => SplitMode::ByDriver,
                SplitArg::ByWindow => SplitMode::ByWindow,
            };
        }
        if let Some(r) = self.ranking {
            cfg.bagging.ranking_mode = match r {
                RankingArg::Oob => RankingMode::Oob,
                RankingArg::Resubstitution => RankingMode::Resubstitution,
            };
        }
        if let Some(s) = self.selection {
            cfg.selection.scope = match s {
                SelectionArg::PerFold => SelectionScope::PerFold,
                SelectionArg::Global => SelectionScope::Global,
            };
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic labeled trips as a trip CSV.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Remove every class difference from the generator.
        #[arg(long)]
        null_signal: bool,
    },
    /// Turn a trip CSV into a feature CSV.
    Extract {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Where to write the selection report (global selection only).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Train the fused ensemble and save it as a JSON artifact.
    Train {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Write every candidate's index, score and subset.
        #[arg(long)]
        candidates: Option<PathBuf>,
        #[arg(long)]
        selection_report: Option<PathBuf>,
    },
    /// Predict every row of a feature CSV with a saved model.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Per-row densities and λ values.
        #[arg(long)]
        diagnostics: Option<PathBuf>,
    },
    /// Cross-validate on a trip or feature CSV; writes CSV and a text table.
    Evaluate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(format!("creating {}", path.display()), e))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let mut w = create(path)?;
    f(&mut w).map_err(|e| match e {
        Error::Io { context, source } => Error::io(format!("{}: {context}", path.display()), source),
        other => other,
    })?;
    finish(w, path)
}

pub fn cmd_synth(cfg: &PipelineConfig, out: &Path, null_signal: bool) -> Result<()> {
    let mut spec = SynthSpec {
        seed: cfg.seed_for(streams::SYNTH),
        ..cfg.synth
    };
    if null_signal {
        spec = spec.null_signal();
    }
    spec.validate(cfg.window.length_s)?;
    let trips = generate(&spec);
    log::info!("generated {} trips", trips.len());
    write_with(out, |w| write_trip_csv(w, &trips))
}

/// Trip CSV → features. In global-selection mode the output keeps only the
/// catalog columns and the report is written when requested.
pub fn cmd_extract(cfg: &PipelineConfig, input: &Path, out: &Path, report: Option<&Path>) -> Result<()> {
    let trips = parse_trip_csv(input)?;
    let mut table = trips_to_features(&trips, cfg)?;
    log::info!("{} trips → {} windows", trips.len(), table.len());
    match cfg.selection.scope {
        SelectionScope::Global => {
            let selection = select_features(&table, &cfg.selection)?;
            table = table.project(&selection.catalog_with_min(cfg.bagging.max_features))?;
            if let Some(p) = report {
                write_with(p, |w| selection.write_csv(w))?;
            }
        }
        SelectionScope::PerFold => {
            if report.is_some() {
                log::warn!("selection runs per fold; no selection report is written at extract time");
            }
        }
    }
    write_with(out, |w| write_feature_csv(w, &table))
}

pub fn train_model(table: &FeatureTable, cfg: &PipelineConfig) -> Result<(ModelArtifact, crate::pipeline::FittedEnsemble)> {
    let seed = cfg.seed_for(streams::TRAIN);
    let fitted = fit_ensemble(table, cfg, seed, None)?;
    let artifact = ModelArtifact::build(&fitted, cfg, seed, table)?;
    Ok((artifact, fitted))
}

pub fn cmd_train(
    cfg: &PipelineConfig,
    features: &Path,
    out: &Path,
    candidates: Option<&Path>,
    selection_report: Option<&Path>,
) -> Result<()> {
    let table = read_feature_csv(features)?;
    let (artifact, fitted) = train_model(&table, cfg)?;
    log::info!(
        "trained {} candidates; dataset digest {}",
        fitted.candidates.len(),
        artifact.provenance.dataset_digest
    );
    if let Some(p) = candidates {
        write_with(p, |w| write_candidates_csv(w, &fitted.candidates))?;
    }
    if let Some(p) = selection_report {
        write_with(p, |w| fitted.selection.write_csv(w))?;
    }
    artifact.save(out)
}

pub fn cmd_predict(model: &Path, features: &Path, out: &Path, diagnostics: Option<&Path>) -> Result<()> {
    let (artifact, ensemble) = ModelArtifact::load(model)?;
    let table = read_feature_csv(features)?;
    for name in &artifact.catalog {
        if table.column_index(name).is_err() {
            return Err(Error::Schema(format!(
                "{}: missing feature column `{name}`",
                features.display()
            )));
        }
    }
    let outcomes = ensemble.predict_table(&table)?;
    let wrap = |e: csv::Error| Error::io("writing predictions", std::io::Error::other(e));

    write_with(out, |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record([
            "trip_id", "driver_id", "label", "score", "c0", "c1", "forest_1", "forest_2", "forest_3",
        ])
        .map_err(wrap)?;
        for (row, (o, probs)) in table.rows.iter().zip(&outcomes) {
            let mut rec = vec![
                row.trip_id.clone(),
                row.driver_id.clone(),
                o.label.name().to_string(),
                o.score.to_string(),
                o.integrals[0].to_string(),
                o.integrals[1].to_string(),
            ];
            rec.extend(probs.iter().map(|p| label_of(p).name().to_string()));
            csv.write_record(&rec).map_err(wrap)?;
        }
        csv.flush().map_err(|e| Error::io("writing predictions", e))
    })?;

    if let Some(p) = diagnostics {
        write_with(p, |w| {
            let mut csv = csv::Writer::from_writer(w);
            let mut header = vec!["trip_id".to_string(), "driver_id".to_string()];
            for j in 0..2 {
                for i in 1..=3 {
                    header.push(format!("g{j}_{i}"));
                }
            }
            header.extend(["lambda_0".into(), "lambda_1".into()]);
            for i in 1..=3 {
                header.push(format!("p1_forest_{i}"));
            }
            csv.write_record(&header).map_err(wrap)?;
            for (row, (o, probs)) in table.rows.iter().zip(&outcomes) {
                let mut rec = vec![row.trip_id.clone(), row.driver_id.clone()];
                rec.extend(o.densities.iter().flatten().map(f64::to_string));
                rec.extend(o.lambdas.iter().map(f64::to_string));
                rec.extend(probs.iter().map(|p| p[1].to_string()));
                csv.write_record(&rec).map_err(wrap)?;
            }
            csv.flush().map_err(|e| Error::io("writing diagnostics", e))
        })?;
    }
    Ok(())
}

/// Whether `path` starts with the trip CSV header.
pub fn is_trip_csv(path: &Path) -> Result<bool> {
    let file = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    let mut first = String::new();
    BufReader::new(file)
        .read_line(&mut first)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let fields: Vec<&str> = first.trim_end().split(',').map(str::trim).collect();
    Ok(fields == TRIP_CSV_HEADER)
}

/// Loads either input kind as a feature table.
pub fn load_table(cfg: &PipelineConfig, input: &Path) -> Result<FeatureTable> {
    if is_trip_csv(input)? {
        trips_to_features(&parse_trip_csv(input)?, cfg)
    } else {
        read_feature_csv(input)
    }
}

/// Path of the text table written next to the metrics CSV.
pub fn table_path(out: &Path) -> PathBuf {
    out.with_extension("txt")
}

pub fn cmd_evaluate(cfg: &PipelineConfig, input: &Path, out: &Path) -> Result<MetricsReport> {
    let table = load_table(cfg, input)?;
    log::info!("evaluating on {} rows, digest {}", table.len(), dataset_digest(&table)?);
    let report = run_experiment(&table, cfg)?;
    write_with(out, |w| report.write_csv(w))?;
    let txt = table_path(out);
    std::fs::write(&txt, report.to_table())
        .map_err(|e| Error::io(format!("writing {}", txt.display()), e))?;
    Ok(report)
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = cli.overrides.resolve()?;
    match &cli.command {
        Command::Synth { out, null_signal } => cmd_synth(&cfg, out, *null_signal),
        Command::Extract { input, out, report } => cmd_extract(&cfg, input, out, report.as_deref()),
        Command::Train {
            features,
            out,
            candidates,
            selection_report,
        } => cmd_train(&cfg, features, out, candidates.as_deref(), selection_report.as_deref()),
        Command::Predict {
            model,
            features,
            out,
            diagnostics,
        } => cmd_predict(model, features, out, diagnostics.as_deref()),
        Command::Evaluate { input, out } => {
            let report = cmd_evaluate(&cfg, input, out)?;
            print!("{}", report.to_table());
            Ok(())
        }
    }
}

/// One-line, machine-parsable rendering: `error[<kind>]: <message>`.
pub fn render_error(e: &Error) -> String {
    let msg = e.to_string().replace(['\n', '\r'], " ");
    format!("error[{}]: {}", e.kind().tag(), msg.split_whitespace().collect::<Vec<_>>().join(" "))
}
