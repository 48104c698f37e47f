use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use nwf_core::analysis::{extract_filters, filters_csv, response_csv, visualize_latents};
use nwf_core::codec::{self, CompressOptions};
use nwf_core::dataio::{read_pnm, write_pnm, Corpus};
use nwf_core::training::{self, TrainData, TrainOutputs};
use nwf_core::{ColorSpace, Error, ImageU8, Mode, Model, TrainConfig};

const RESPONSE_SAMPLES: usize = 256;
/// Largest square crop used for filter extraction.
const ANALYSIS_CROP: usize = 32;

#[derive(Parser)]
#[command(
    name = "nwf",
    version,
    about = "Lossless image coding with learned wavelet flows"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on a directory (or list file) of PPM/PGM images.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Per-epoch metrics CSV.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Encode a PPM/PGM image.
    Compress {
        input: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Code RGB input in YCbCr.
        #[arg(long)]
        ycbcr: bool,
    },
    /// Decode a compressed file back to PPM/PGM.
    Decompress {
        input: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode only the coarsest levels of a compressed file.
    Progressive {
        input: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// High-pass levels to decode after the final block.
        #[arg(long)]
        levels: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Enlarge an image by sampling fine detail from the priors.
    Upsample {
        input: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        factor: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write learned filters, their frequency responses and a latent mosaic.
    Analyze {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        channel: usize,
    },
    /// Run the built-in oracle, round-trip and coder checks.
    Selftest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn write_file(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn load_model(path: &Path) -> anyhow::Result<Model> {
    Model::load(path).with_context(|| format!("loading model {}", path.display()))
}

fn load_image(path: &Path) -> anyhow::Result<ImageU8> {
    read_pnm(path).with_context(|| format!("reading {}", path.display()))
}

fn train(
    config: &Path,
    data: &Path,
    out: &Path,
    resume: Option<&Path>,
    metrics: Option<PathBuf>,
) -> anyhow::Result<()> {
    let text =
        fs::read_to_string(config).with_context(|| format!("reading {}", config.display()))?;
    let cfg = TrainConfig::parse(&text)?;
    let corpus = Corpus::load(
        data,
        cfg.patch_size,
        cfg.patch_stride,
        cfg.colorspace == ColorSpace::YCbCr,
    )?;
    let data = TrainData::split(corpus, &cfg);
    let resume = resume.map(load_model).transpose()?;
    let outputs = TrainOutputs {
        checkpoint: Some(out.to_path_buf()),
        metrics_csv: metrics,
    };
    let (_, history) = training::train(&cfg, &data, resume, &outputs)?;
    for m in &history {
        println!(
            "epoch {:>4}  train {:.4}  val {:.4}  lr {:.6}",
            m.epoch, m.train_bpd, m.val_bpd, m.lr
        );
    }
    Ok(())
}

fn analyze(model: &Model, image: &Path, out_dir: &Path, channel: usize) -> anyhow::Result<()> {
    let img = load_image(image)?;
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;

    let side = img.width.min(img.height).min(ANALYSIS_CROP);
    let side = 1 << side.ilog2();
    if side < 2 {
        bail!(Error::Geometry(
            "analysis needs at least a 2x2 image".into()
        ));
    }
    let crop = img.crop(0, 0, side, side)?;
    let flow = model.flow.with_mode(Mode::Continuous);
    let bank = extract_filters(&flow, &crop.to_tensor(), side / 2, channel)?;
    write_file(&out_dir.join("filters.csv"), filters_csv(&bank).as_bytes())?;
    write_file(
        &out_dir.join("response.csv"),
        response_csv(&bank, RESPONSE_SAMPLES)?.as_bytes(),
    )?;

    let (pyr, low) = model
        .flow
        .with_mode(Mode::Integer)
        .forward_trace(&img.to_tensor())?;
    if pyr.levels() > 0 {
        let mosaic = visualize_latents(&pyr, &low, &model.priors, pyr.levels())?;
        write_pnm(out_dir.join("mosaic.ppm"), &mosaic)?;
    }
    println!(
        "{} filter rows, finite-difference error {:.2e}",
        bank.rows.len(),
        bank.fd_rel_error
    );
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train {
            config,
            data,
            out,
            resume,
            metrics,
        } => train(&config, &data, &out, resume.as_deref(), metrics),
        Command::Compress {
            input,
            model,
            out,
            ycbcr,
        } => {
            let model = load_model(&model)?;
            let img = load_image(&input)?;
            let colorspace = if ycbcr {
                ColorSpace::YCbCr
            } else {
                ColorSpace::Rgb
            };
            let bytes = codec::compress(&img, &model, CompressOptions { colorspace })?;
            write_file(&out, &bytes)?;
            println!(
                "{} bytes, {:.4} bits per dimension",
                bytes.len(),
                8.0 * bytes.len() as f64 / img.dims() as f64
            );
            Ok(())
        }
        Command::Decompress { input, model, out } => {
            let model = load_model(&model)?;
            let bytes = fs::read(&input).with_context(|| format!("reading {}", input.display()))?;
            write_pnm(&out, &codec::decompress(&bytes, &model)?)?;
            Ok(())
        }
        Command::Progressive {
            input,
            model,
            levels,
            out,
        } => {
            let model = load_model(&model)?;
            let bytes = fs::read(&input).with_context(|| format!("reading {}", input.display()))?;
            let p = codec::progressive_decode(&bytes, &model, levels)?;
            write_pnm(&out, &p.image)?;
            println!(
                "{}x{} from {} of {} bytes",
                p.image.width,
                p.image.height,
                p.consumed,
                bytes.len()
            );
            Ok(())
        }
        Command::Upsample {
            input,
            model,
            factor,
            seed,
            temperature,
            out,
        } => {
            let model = load_model(&model)?;
            let img = load_image(&input)?;
            write_pnm(
                &out,
                &codec::upsample(&img, &model, factor, seed, temperature)?,
            )?;
            Ok(())
        }
        Command::Analyze {
            model,
            image,
            out_dir,
            channel,
        } => analyze(&load_model(&model)?, &image, &out_dir, channel),
        Command::Selftest { seed } => {
            let results = nwf_core::selftest::run(seed);
            for r in &results {
                println!(
                    "{} {}: {}",
                    if r.passed { "PASS" } else { "FAIL" },
                    r.name,
                    r.detail
                );
            }
            if results.iter().any(|r| !r.passed) {
                bail!(SelftestFailed);
            }
            Ok(())
        }
    }
}

#[derive(Debug)]
struct SelftestFailed;

impl std::fmt::Display for SelftestFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("selftest failed")
    }
}

impl std::error::Error for SelftestFailed {}

/// Exit status for each error class; clap itself exits with 2 on bad usage.
fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<SelftestFailed>().is_some() {
        return 13;
    }
    match err.downcast_ref::<Error>() {
        Some(Error::InvalidArgument(_)) => 2,
        Some(Error::Config(_)) => 3,
        Some(Error::Io(_)) => 4,
        Some(Error::Parse(_) | Error::Unsupported(_)) => 5,
        Some(Error::Geometry(_)) => 6,
        Some(Error::ModelMismatch { .. }) => 7,
        Some(Error::Truncated(_) | Error::Corrupt(_)) => 8,
        Some(Error::Overflow { .. } | Error::NonFinite(_)) => 9,
        Some(Error::Training(_)) => 10,
        Some(Error::Contract(_) | Error::Autodiff(_)) => 11,
        None if err.downcast_ref::<std::io::Error>().is_some() => 4,
        None => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("nwf: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
