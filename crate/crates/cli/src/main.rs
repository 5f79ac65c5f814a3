use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use stegowav::config::PipelineConfig;
use stegowav::costing::{cost_csv, cost_table, cost_text, reference_entries};
use stegowav::dsp::{log_view, raster, transform};
use stegowav::formats::{read_ppm, read_wav, write_bytes, write_pgm, write_ppm, write_wav};
use stegowav::metrics::MetricsRow;
use stegowav::model::ModelBundle;
use stegowav::pipeline::{self, pair_stem, DatasetProfile};
use stegowav::robustness::{robustness_cells, sweep_csv, DropoutMode};
use stegowav::{Error, Result};

/// Hide images in audio spectrograms and get them back.
#[derive(Parser, Debug)]
#[command(name = "stegowav", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a procedural dataset of pair_XXXX.ppm / pair_XXXX.wav files.
    Synth(SynthArgs),
    /// Train a model on a dataset directory.
    Train(TrainArgs),
    /// Hide an image in a cover waveform.
    Embed(EmbedArgs),
    /// Recover the hidden image from a stego waveform.
    Reveal(RevealArgs),
    /// Evaluate a model on a dataset and print one metrics CSV row.
    Eval(EvalArgs),
    /// Frame-dropout sweep over a dataset.
    Robustness(RobustnessArgs),
    /// Parameter and MAC breakdown of the reference configurations.
    Cost(CostArgs),
    /// Render the log spectrogram of a waveform as a PGM image.
    Spectrogram(SpectrogramArgs),
}

#[derive(Args, Debug, Default)]
struct ConfigArgs {
    /// key=value configuration file ('#' starts a comment).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. --set method=replicate (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn load(&self, base: PipelineConfig) -> Result<PipelineConfig> {
        let mut cfg = base;
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            cfg.apply_text(&text)?;
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Usage(format!("--set expects KEY=VALUE, got '{kv}'")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Dataset profile: desk or full_shape.
    #[arg(long, default_value = "desk")]
    profile: String,
    /// Number of pairs.
    #[arg(long, default_value_t = 16)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    /// Per-step loss CSV; defaults to the checkpoint path with a .csv extension.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Shorthand for --set steps=N.
    #[arg(long)]
    steps: Option<usize>,
    /// Shorthand for --set seed=N.
    #[arg(long)]
    seed: Option<u64>,
    /// Shorthand for --set method=NAME.
    #[arg(long)]
    method: Option<String>,
}

#[derive(Args, Debug)]
struct EmbedArgs {
    #[arg(long)]
    model: PathBuf,
    /// Secret image (P6 pixmap).
    #[arg(long)]
    image: PathBuf,
    /// Cover waveform (16-bit PCM mono WAV).
    #[arg(long)]
    audio: PathBuf,
    /// Stego waveform to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct RevealArgs {
    #[arg(long)]
    model: PathBuf,
    /// Stego waveform.
    #[arg(long)]
    audio: PathBuf,
    /// Revealed image to write.
    #[arg(long)]
    out: PathBuf,
    /// Original secret; when given, image scores are printed.
    #[arg(long)]
    secret: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Also write the CSV (header and row) to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RobustnessArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated kept fractions in (0, 1].
    #[arg(long, value_delimiter = ',', default_values_t = [1.0, 0.75, 0.5, 0.25, 0.125])]
    fractions: Vec<f64>,
    /// Comma-separated modes: sequential, random.
    #[arg(long, value_delimiter = ',', default_values_t = ["sequential".to_string(), "random".to_string()])]
    modes: Vec<String>,
    /// Seed of the random-mode masks.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sequential mode: frames kept after the dropped run.
    #[arg(long, default_value_t = 0)]
    offset: usize,
    /// Sweep CSV to write.
    #[arg(long)]
    out: PathBuf,
    /// Directory for revealed images of every cell.
    #[arg(long)]
    dump: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CostArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// CSV to write; the aligned table always goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SpectrogramArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Take the transform settings from this checkpoint instead.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    audio: PathBuf,
    /// PGM image to write (low frequencies at the bottom).
    #[arg(long)]
    out: PathBuf,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_bytes(path, text.as_bytes())
}

fn synth(a: SynthArgs) -> Result<()> {
    let profile: DatasetProfile = a.profile.parse()?;
    let pairs = pipeline::synth_dataset(a.count, profile, a.seed)?;
    pipeline::save_dataset(&a.out, &pairs)?;
    println!("wrote {} pairs to {}", pairs.len(), a.out.display());
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = a.cfg.load(PipelineConfig::default())?;
    if let Some(v) = a.steps {
        cfg.steps = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = &a.method {
        cfg.set("method", v)?;
    }
    cfg.validate()?;
    let data = pipeline::load_dataset(&a.data)?;
    let (model, log) = pipeline::train(&data, &cfg)?;
    model.save(&a.out)?;
    let log_path = a.log.unwrap_or_else(|| a.out.with_extension("csv"));
    write_text(&log_path, &log.to_csv())?;
    println!(
        "trained {} steps: loss {} -> {}; wrote {} and {}",
        cfg.steps,
        log.initial[0],
        log.last[0],
        a.out.display(),
        log_path.display()
    );
    Ok(())
}

fn embed(a: EmbedArgs) -> Result<()> {
    let model = ModelBundle::load(&a.model)?;
    let secret = read_ppm(&a.image)?;
    let cover = read_wav(&a.audio)?;
    let (stego, diag) = pipeline::embed(&secret, &cover, &model)?;
    write_wav(&a.out, &stego)?;
    let l2: Vec<String> = diag.container_l2.iter().map(|v| v.to_string()).collect();
    println!("snr_db={} container_l2={} samples={}", diag.snr_db, l2.join("/"), stego.len());
    Ok(())
}

fn reveal(a: RevealArgs) -> Result<()> {
    let model = ModelBundle::load(&a.model)?;
    let stego = read_wav(&a.audio)?;
    let img = pipeline::reveal(&stego, &model)?;
    write_ppm(&a.out, &img)?;
    match &a.secret {
        Some(p) => {
            let s = pipeline::score_image(&read_ppm(p)?, &img)?;
            println!("ssim,psnr_db,hist_l1,l1");
            println!("{},{},{},{}", s.ssim, s.psnr_db, s.hist_l1, s.l1);
        }
        None => println!("wrote {}x{} image to {}", img.height(), img.width(), a.out.display()),
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let model = ModelBundle::load(&a.model)?;
    let data = pipeline::load_dataset(&a.data)?;
    let row = pipeline::evaluate(&model, &data)?;
    let text = format!("{}\n{}\n", MetricsRow::HEADER, row.to_csv());
    if let Some(p) = &a.out {
        write_text(p, &text)?;
    }
    print!("{text}");
    Ok(())
}

fn robustness(a: RobustnessArgs) -> Result<()> {
    let model = ModelBundle::load(&a.model)?;
    let data = pipeline::load_dataset(&a.data)?;
    let modes: Vec<DropoutMode> = a.modes.iter().map(|m| m.parse()).collect::<Result<_>>()?;
    if a.offset != 0 && !modes.contains(&DropoutMode::Sequential) {
        return Err(Error::Usage("--offset only applies to sequential mode".into()));
    }
    let cells = robustness_cells(&model, &data, &a.fractions, &modes, a.seed, a.offset)?;
    let rows: Vec<_> = cells.iter().map(|c| c.row.clone()).collect();
    write_text(&a.out, &sweep_csv(&rows))?;
    if let Some(dir) = &a.dump {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.clone(),
            source: e,
        })?;
        for c in &cells {
            for (i, img) in c.revealed.iter().enumerate() {
                let name = format!("{}_{}_{}.ppm", c.row.mode.as_str(), c.row.keep_fraction, pair_stem(i));
                write_ppm(&dir.join(name), img)?;
            }
        }
    }
    print!("{}", sweep_csv(&rows));
    Ok(())
}

fn cost(a: CostArgs) -> Result<()> {
    let base = a.cfg.load(PipelineConfig::default())?;
    let rows = cost_table(&reference_entries(&base))?;
    if let Some(p) = &a.out {
        write_text(p, &cost_csv(&rows))?;
    }
    print!("{}", cost_text(&rows));
    Ok(())
}

fn spectrogram(a: SpectrogramArgs) -> Result<()> {
    let cfg = match &a.model {
        Some(p) => ModelBundle::load(p)?.config,
        None => a.cfg.load(PipelineConfig::default())?,
    };
    let w = read_wav(&a.audio)?;
    let s = transform(&w, cfg.stft_config()?, cfg.transform)?;
    let (width, height, pixels) = raster(&log_view(&s));
    write_pgm(&a.out, width, height, &pixels)?;
    println!("wrote {width}x{height} {} spectrogram to {}", cfg.transform.as_str(), a.out.display());
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Usage(_) | Error::Config(_) => 1,
        Error::Io { .. } | Error::Format { .. } => 2,
        Error::Numeric { .. } => 3,
    }
}

fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("STEGOWAV_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Error::Usage(format!("STEGOWAV_THREADS must be a positive integer, got '{v}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Usage(format!("cannot size the worker pool: {e}")))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = init_threads().and_then(|()| match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Embed(a) => embed(a),
        Command::Reveal(a) => reveal(a),
        Command::Eval(a) => eval(a),
        Command::Robustness(a) => robustness(a),
        Command::Cost(a) => cost(a),
        Command::Spectrogram(a) => spectrogram(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("stegowav: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
