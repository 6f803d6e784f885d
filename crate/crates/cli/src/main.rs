use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use lfgen::checks::grad_check_suite;
use lfgen::pipeline::{Pipeline, RunConfig, Stage};
use lfgen::synthdata::{
    build_splits, read_dataset_dir, read_ppm, write_dataset_dir, write_ppm, Image,
};
use lfgen::vqcodec::{read_token_stream, write_token_stream, TokenStream};

#[derive(Parser, Debug)]
#[command(
    name = "lfgen",
    version,
    about = "Language-free text-to-image training on a synthetic shapes world"
)]
struct Cli {
    /// Config file of `section.key = value` lines.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Config override `section.key=value`, applied after the file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render the train and validation splits as P6 images plus captions.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Dataset seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        side: Option<usize>,
    },
    /// Stage zero: train the joint text-image embedding model.
    TrainClip(TrainArgs),
    /// Stage one: train the VQ image codec (images only).
    TrainVq(TrainArgs),
    /// Stage two: train the conditional generator (images only).
    TrainGen(TrainArgs),
    /// Generate an image from a caption or from an image.
    Sample(SampleArgs),
    /// Tokenize images with a trained codec.
    Encode {
        #[arg(long)]
        run: PathBuf,
        /// Output token stream.
        #[arg(long)]
        out: PathBuf,
        /// P6 images to encode.
        #[arg(required = true)]
        images: Vec<PathBuf>,
    },
    /// Decode a token stream into P6 images.
    Decode {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        tokens: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a fully trained run and write its metrics report.
    Eval {
        #[arg(long)]
        run: PathBuf,
        /// Report path; defaults to `metrics.txt` inside the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference gradient verification of every op, layer and loss.
    GradCheck {
        /// Number of seeds, starting at 0.
        #[arg(long, default_value_t = 3)]
        seeds: u64,
        #[arg(long, default_value_t = 1e-3)]
        tolerance: f64,
    },
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Run directory holding stage checkpoints.
    #[arg(long)]
    run: PathBuf,
    /// Dataset directory written by `synth`; regenerated from the config
    /// when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Run seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Training steps for this stage.
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Args, Debug)]
struct SampleArgs {
    #[arg(long)]
    run: PathBuf,
    /// Caption to condition on.
    #[arg(long, conflicts_with = "image", required_unless_present = "image")]
    text: Option<String>,
    /// P6 image to condition on.
    #[arg(long)]
    image: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    temperature: Option<f64>,
    /// Sampling seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for `sample.ppm` and `tokens.vqts`.
    #[arg(long)]
    out: PathBuf,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut c = RunConfig::from_env()?;
    if let Some(path) = &cli.config {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        c.apply_text(&text)
            .with_context(|| format!("in {}", path.display()))?;
    }
    for kv in &cli.set {
        let Some((k, v)) = kv.split_once('=') else {
            bail!("--set expects KEY=VALUE, got `{kv}`");
        };
        c.set(k.trim(), v)?;
    }
    Ok(c)
}

fn pipeline(config: RunConfig, data: Option<&Path>) -> Result<Pipeline> {
    let mut p = Pipeline::new(config)?;
    if let Some(dir) = data {
        p.splits =
            read_dataset_dir(dir).with_context(|| format!("reading dataset {}", dir.display()))?;
    }
    Ok(p)
}

fn train(mut config: RunConfig, args: &TrainArgs, stage: Stage) -> Result<()> {
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(n) = args.steps {
        match stage {
            Stage::Clip => config.clip.steps = n,
            Stage::Vq => config.vq.steps = n,
            Stage::Gen => config.gen.steps = n,
        }
    }
    config.validate()?;
    let mut p = pipeline(config, args.data.as_deref())?;
    let last = match stage {
        Stage::Clip => p.train_clip()?.losses.last().map(|&l| l as f64),
        Stage::Vq => p.train_vq()?.losses.last().map(|l| l.total as f64),
        Stage::Gen => {
            p.load_stages(&args.run, &[Stage::Clip, Stage::Vq])?;
            p.train_gen()?.losses.last().map(|l| l.total)
        }
    };
    p.save_stage(&args.run, stage)?;
    eprintln!(
        "{}: final loss {:.6}, saved {}",
        stage.command(),
        last.unwrap_or(f64::NAN),
        args.run.join(stage.file_name()).display()
    );
    Ok(())
}

fn sample(mut config: RunConfig, a: &SampleArgs) -> Result<()> {
    if let Some(k) = a.k {
        config.sample.k = k;
    }
    if let Some(p) = a.p {
        config.sample.p = p;
    }
    if let Some(t) = a.temperature {
        config.sample.temperature = t;
    }
    if let Some(s) = a.seed {
        config.sample.seed = s;
    }
    let sample_cfg = config.sample.clone();
    let mut p = Pipeline::new(config)?;
    p.load_stages(&a.run, &Stage::ALL)?;
    p.config.sample = sample_cfg;
    p.config.sample.validate(p.codec()?.cfg.k)?;
    let seed = p.config.sample.seed;
    let (img, seq) = match (&a.text, &a.image) {
        (Some(text), _) => {
            let tokens = p.splits.vocab.encode(text)?;
            p.generate(&tokens, seed)?
        }
        (None, Some(path)) => p.vary(&read_ppm(path)?, seed)?,
        (None, None) => bail!("one of --text or --image is required"),
    };
    std::fs::create_dir_all(&a.out)?;
    write_ppm(&a.out.join("sample.ppm"), &img)?;
    let k = p.codec()?.cfg.k;
    write_token_stream(
        &a.out.join("tokens.vqts"),
        &TokenStream {
            k,
            h: seq.h,
            w: seq.w,
            seqs: vec![seq],
        },
    )?;
    eprintln!("wrote {}", a.out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let config = load_config(&cli)?;
    match &cli.cmd {
        Command::Synth { out, seed, side } => {
            let mut c = config;
            if let Some(s) = seed {
                c.data.seed = *s;
            }
            if let Some(s) = side {
                c.data.side = *s;
            }
            let splits = build_splits(&c.data)?;
            write_dataset_dir(out, &splits)?;
            eprintln!(
                "wrote {} train and {} val samples to {}",
                splits.train.len(),
                splits.val.len(),
                out.display()
            );
        }
        Command::TrainClip(a) => train(config, a, Stage::Clip)?,
        Command::TrainVq(a) => train(config, a, Stage::Vq)?,
        Command::TrainGen(a) => train(config, a, Stage::Gen)?,
        Command::Sample(a) => sample(config, a)?,
        Command::Encode { run, out, images } => {
            let mut p = Pipeline::new(config)?;
            p.load_stages(run, &[Stage::Vq])?;
            let codec = p.codec()?;
            let imgs = images
                .iter()
                .map(|path| read_ppm(path))
                .collect::<lfgen::Result<Vec<Image>>>()?;
            let refs: Vec<&Image> = imgs.iter().collect();
            let seqs = codec.tokenize_batch(&refs)?;
            let g = codec.cfg.grid();
            write_token_stream(
                out,
                &TokenStream {
                    k: codec.cfg.k,
                    h: g,
                    w: g,
                    seqs,
                },
            )?;
        }
        Command::Decode { run, tokens, out } => {
            let mut p = Pipeline::new(config)?;
            p.load_stages(run, &[Stage::Vq])?;
            let codec = p.codec()?;
            let stream = read_token_stream(tokens)?;
            if stream.k != codec.cfg.k {
                bail!(
                    "token stream uses {} codes but the codec has {}",
                    stream.k,
                    codec.cfg.k
                );
            }
            std::fs::create_dir_all(out)?;
            for (i, img) in codec.decode_batch(&stream.seqs)?.iter().enumerate() {
                write_ppm(&out.join(format!("{i:04}.ppm")), img)?;
            }
        }
        Command::Eval { run, out } => {
            let mut p = Pipeline::new(config)?;
            p.load_stages(run, &Stage::ALL)?;
            let report = p.evaluate()?;
            let path = out.clone().unwrap_or_else(|| run.join("metrics.txt"));
            std::fs::write(&path, report.to_text())?;
            print!("{}", report.to_text());
        }
        Command::GradCheck { seeds, tolerance } => {
            let mut worst: f64 = 0.0;
            for seed in 0..*seeds {
                for c in grad_check_suite(seed)? {
                    println!(
                        "{:<28} seed {} max_rel_err {:.3e}",
                        c.name, c.seed, c.report.max_rel_err
                    );
                    worst = worst.max(c.report.max_rel_err);
                }
            }
            if worst >= *tolerance {
                bail!("gradient check failed: max relative error {worst:.3e} ≥ {tolerance:e}");
            }
            println!("gradient check passed: max relative error {worst:.3e}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
