//! `tweetloc` command-line tool.
//!
//! Settings come from built-in defaults, then an optional `key = value`
//! file (`--config`), then per-setting flags such as `--capacity 5000`,
//! with later sources winning.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches, Args, Command, FromArgMatches, Parser, Subcommand};
use tweetloc::pipeline::{self, PipelineConfig, SETTINGS};
use tweetloc::synth::{self, SynthConfig};
use tweetloc::Error;

/// Values given for individual settings, in table order.
#[derive(Debug, Clone, Default)]
struct SettingFlags(Vec<(&'static str, String)>);

fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

impl FromArgMatches for SettingFlags {
    fn from_arg_matches(matches: &ArgMatches) -> Result<Self, clap::Error> {
        Ok(SettingFlags(
            SETTINGS
                .iter()
                .filter_map(|(key, _, _)| matches.get_one::<String>(key).map(|v| (*key, v.clone())))
                .collect(),
        ))
    }

    fn update_from_arg_matches(&mut self, matches: &ArgMatches) -> Result<(), clap::Error> {
        *self = Self::from_arg_matches(matches)?;
        Ok(())
    }
}

impl Args for SettingFlags {
    fn augment_args(cmd: Command) -> Command {
        SETTINGS.iter().fold(cmd, |cmd, (key, is_bool, help)| {
            let arg = Arg::new(*key)
                .long(flag_name(key))
                .help(*help)
                .action(ArgAction::Set)
                .help_heading("Settings");
            let arg = if *is_bool {
                arg.value_name("BOOL")
                    .num_args(0..=1)
                    .default_missing_value("true")
            } else {
                arg.value_name("VALUE")
            };
            cmd.arg(arg)
        })
    }

    fn augment_args_for_update(cmd: Command) -> Command {
        Self::augment_args(cmd)
    }
}

#[derive(Debug, Clone, clap::Args)]
struct ConfigArgs {
    /// `key = value` settings file
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(flatten)]
    settings: SettingFlags,
}

impl ConfigArgs {
    fn resolve(&self) -> tweetloc::Result<PipelineConfig> {
        let mut config = PipelineConfig::default();
        if let Some(path) = &self.config {
            config.apply_file(path)?;
        }
        for (key, value) in &self.settings.0 {
            config.set(key, value)?;
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "tweetloc",
    version,
    about = "Quadtree-partitioned text geolocation"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Build the quadtree over a corpus and export it as JSON, GeoJSON and CSV
    Partition(ConfigArgs),
    /// Fit the full pipeline on a corpus and write a model bundle to <out-dir>/model
    Train(ConfigArgs),
    /// Cross-validate every configured capacity and classifier
    Evaluate(ConfigArgs),
    /// Predict a leaf for each line of text (stdin by default)
    Predict {
        /// Model bundle directory written by `train`
        #[arg(long, value_name = "DIR")]
        model: PathBuf,
        /// Read text lines from this file instead of stdin
        #[arg(long, value_name = "FILE")]
        input: Option<PathBuf>,
    },
    /// Print the effective settings as `key=value` lines
    Config(ConfigArgs),
    /// Write a clustered synthetic corpus as TSV
    Synth {
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        clusters: usize,
        #[arg(long, default_value_t = 1000)]
        records_per_cluster: usize,
        #[arg(long, default_value_t = 50)]
        words_per_cluster: usize,
        #[arg(long, default_value_t = 0.1)]
        noise_rate: f64,
        /// Side of each cluster's square in km
        #[arg(long, default_value_t = 60.0)]
        spread_km: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn report_files(out: &pipeline::Outputs) {
    eprintln!("fingerprint {}", out.fingerprint);
    for f in &out.files {
        eprintln!("wrote {}", f.display());
    }
}

fn run(cli: Cli) -> tweetloc::Result<()> {
    match cli.command {
        Cmd::Partition(args) => {
            let out = pipeline::cmd_partition(&args.resolve()?)?;
            report_files(&out);
        }
        Cmd::Train(args) => {
            let (bundle, out) = pipeline::cmd_train(&args.resolve()?)?;
            eprintln!(
                "{} model over {} leaves",
                bundle.classifier.kind().name(),
                bundle.leaves.len()
            );
            report_files(&out);
        }
        Cmd::Evaluate(args) => {
            let (artifact, out) = pipeline::cmd_evaluate(&args.resolve()?)?;
            let ingest = &artifact.ingest;
            eprintln!(
                "read {} lines: {} parsed, {} malformed, {} duplicates, {} kept",
                ingest.read, ingest.parsed, ingest.malformed, ingest.deduped, ingest.kept
            );
            let stdout = io::stdout();
            let mut w = stdout.lock();
            writeln!(
                w,
                "{:>9} {:>10} {:>10} {:>10} {:>8}",
                "capacity", "classifier", "MED km", "AED km", "ACC@161"
            )?;
            for r in &artifact.reports {
                writeln!(
                    w,
                    "{:>9} {:>10} {:>10.2} {:>10.2} {:>8.4}",
                    r.capacity, r.classifier, r.med_km, r.aed_km, r.acc_at_161
                )?;
            }
            report_files(&out);
        }
        Cmd::Predict { model, input } => {
            let stdout = io::stdout();
            let out = BufWriter::new(stdout.lock());
            let n = match input {
                Some(path) => {
                    let file = File::open(&path).map_err(|_| Error::FileNotFound(path.clone()))?;
                    pipeline::cmd_predict(&model, BufReader::new(file), out)?
                }
                None => pipeline::cmd_predict(&model, io::stdin().lock(), out)?,
            };
            eprintln!("{n} predictions");
        }
        Cmd::Config(args) => {
            print!("{}", args.resolve()?.to_kv());
        }
        Cmd::Synth {
            out,
            clusters,
            records_per_cluster,
            words_per_cluster,
            noise_rate,
            spread_km,
            seed,
        } => {
            let corpus = synth::generate(&SynthConfig {
                clusters,
                records_per_cluster,
                words_per_cluster,
                noise_rate,
                spread_km,
                seed,
                ..Default::default()
            })?;
            let mut w = BufWriter::new(File::create(&out)?);
            synth::write_tsv(&corpus.records, &mut w)?;
            w.flush()?;
            eprintln!(
                "wrote {} records to {}",
                corpus.records.len(),
                out.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
        Err(_) => ExitCode::from(3),
    }
}
