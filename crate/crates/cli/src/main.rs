mod plot;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;

use skelfuse::checkpoint::{check_compatible, Checkpoint};
use skelfuse::dataset::{generate_records, load_dataset_dir, read_meta, write_dataset_dir, write_meta, DatasetConfig, Sample, SynthConfig};
use skelfuse::localizer::localize;
use skelfuse::training::{evaluate, metrics_csv, predict, sample_rng, train, METRICS_HEADER};
use skelfuse::{Error, Model, ModelConfig, TrainConfig, Variant};

#[derive(Parser)]
#[command(name = "skelfuse", version, about = "Skeleton action recognition with unsupervised interacted-object localization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic interaction dataset.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, env = "SKELFUSE_SEED")]
        seed: Option<u64>,
    },
    /// Train on DATA/train and write a checkpoint plus a metrics CSV.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to the checkpoint path with a `.metrics.csv` extension.
        #[arg(long)]
        metrics: Option<PathBuf>,
        #[arg(long, env = "SKELFUSE_SEED")]
        seed: Option<u64>,
    },
    /// Print test metrics as JSON.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, env = "SKELFUSE_SEED", default_value_t = 0)]
        seed: u64,
    },
    /// Write one JSON line per sampled frame with the selected candidate.
    Localize {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, env = "SKELFUSE_SEED", default_value_t = 0)]
        seed: u64,
    },
    /// Render loss and accuracy curves, and attention heatmaps if given a
    /// `localize` output.
    Plot {
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        localization: Option<PathBuf>,
    },
}

#[derive(Serialize)]
struct LocalizationRecord<'a> {
    video_id: &'a str,
    person_id: i64,
    frame: usize,
    slot: usize,
    bbox: [f64; 4],
    category_id: usize,
    attention: f64,
    /// Attention of every slot in this frame.
    scores: Vec<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

/// 3 missing file, 4 malformed input, 5 checkpoint/data mismatch, 6 divergence.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 3,
                Error::Parse { .. }
                | Error::Alignment { .. }
                | Error::EmptySkeleton { .. }
                | Error::Config(_)
                | Error::Checkpoint(_)
                | Error::EmptyDataset => 4,
                Error::CheckpointMismatch(_) => 5,
                Error::Divergence { .. } => 6,
                _ => 1,
            };
        }
        if let Some(e) = cause.downcast_ref::<std::io::Error>() {
            if e.kind() == std::io::ErrorKind::NotFound {
                return 3;
            }
        }
    }
    1
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth { config, out, seed } => {
            let mut cfg = SynthConfig::from_toml(&read_text(&config)?)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let (train_set, test_set) = generate_records(&cfg)?;
            write_meta(&out, &cfg.dataset_config())?;
            write_dataset_dir(&out.join("train"), &train_set)?;
            write_dataset_dir(&out.join("test"), &test_set)?;
            println!("wrote {} train and {} test videos to {}", train_set.len(), test_set.len(), out.display());
        }
        Command::Train { data, config, out, metrics, seed } => {
            let mut cfg = TrainConfig::from_toml(&read_text(&config)?)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let (meta, samples) = load_split(&data, "train")?;
            let model_cfg = ModelConfig::for_dataset(&meta, cfg.model.profile.dims(), cfg.model.variant);
            let mut model = Model::new(model_cfg, cfg.seed)?;
            eprintln!("{METRICS_HEADER}");
            let log = train(&mut model, &samples, &meta, &cfg, |r| eprintln!("{}", r.csv_row()))?;
            let extra = serde_json::json!({ "dataset": meta, "train": cfg });
            Checkpoint::from_model(&model, extra).save(&out)?;
            let metrics = metrics.unwrap_or_else(|| out.with_extension("metrics.csv"));
            fs::write(&metrics, metrics_csv(&log)).with_context(|| format!("writing {}", metrics.display()))?;
            println!("checkpoint {} metrics {}", out.display(), metrics.display());
        }
        Command::Eval { data, ckpt, repeats, split, seed } => {
            let (meta, samples) = load_split(&data, &split)?;
            let model = load_model(&ckpt, &meta)?;
            let metrics = evaluate(&model, &samples, &meta, repeats, seed)?;
            println!("{}", serde_json::to_string_pretty(&metrics)?);
        }
        Command::Localize { data, ckpt, out, split, seed } => {
            let (meta, samples) = load_split(&data, &split)?;
            let model = load_model(&ckpt, &meta)?;
            if model.config.variant == Variant::SkeletonOnly {
                return Err(Error::CheckpointMismatch("checkpoint was trained without the localizer".into()).into());
            }
            let file = fs::File::create(&out).with_context(|| format!("creating {}", out.display()))?;
            let mut writer = std::io::BufWriter::new(file);
            let mut frames = 0;
            for (i, sample) in samples.iter().enumerate() {
                let pred = predict(&model, sample, &meta, 1, &mut sample_rng(seed, i as u64))?;
                let view = &pred.views[0];
                let (Some(pooled), Some(attention)) = (&view.pooled, &view.attention) else {
                    bail!("no attention produced for {}", sample.video_id);
                };
                let cands = sample.candidates.select_frames(&view.frame_indices);
                for (row, (loc, &frame)) in localize(pooled, &cands, meta.categories).iter().zip(&view.frame_indices).enumerate() {
                    let record = LocalizationRecord {
                        video_id: &sample.video_id,
                        person_id: sample.skeleton.person_id,
                        frame,
                        slot: loc.slot,
                        bbox: loc.bbox,
                        category_id: loc.category_id,
                        attention: loc.attention,
                        scores: attention.row(row).to_vec(),
                    };
                    serde_json::to_writer(&mut writer, &record)?;
                    writer.write_all(b"\n")?;
                    frames += 1;
                }
            }
            writer.flush()?;
            println!("wrote {frames} frames for {} samples to {}", samples.len(), out.display());
        }
        Command::Plot { metrics, out, localization } => {
            let records = plot::read_metrics(&read_text(&metrics)?)?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let mut written = plot::curves(&records, &out)?;
            if let Some(path) = localization {
                written.extend(plot::heatmaps(&read_text(&path)?, &out)?);
            }
            for path in written {
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}

fn load_split(data: &Path, split: &str) -> Result<(DatasetConfig, Vec<Sample>)> {
    let meta = read_meta(data)?;
    let samples = load_dataset_dir(&data.join(split), &meta)?;
    if samples.is_empty() {
        return Err(Error::EmptyDataset.into());
    }
    Ok((meta, samples))
}

fn load_model(path: &Path, meta: &DatasetConfig) -> Result<Model> {
    let ckpt = Checkpoint::load(path)?;
    check_compatible(&ckpt.manifest.model, meta)?;
    Ok(ckpt.into_model()?)
}
