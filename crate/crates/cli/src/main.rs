//! `dba`: run the classification service and the attack experiments.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dba_core::attacks::{BanditsParams, Method};
use dba_core::classifier::{build_weights, save_weights};
use dba_core::client::{DEFAULT_QUERY_LIMIT, DEFAULT_WORKERS};
use dba_core::harness::{
    self, generate_dataset, load_dataset, read_records, run_config, run_grid, save_finals,
    summarize, write_profile_dat, write_records, write_speedup_dat, write_summary,
    ExperimentConfig, Mode, SummaryRow, DEFAULT_IMAGE_SIZE,
};
use dba_core::norm::DEFAULT_EPSILON;
use dba_core::{AttackParams, ImageTensor, Norm, Service, ServiceClient, ServiceConfig};

const DEFAULT_ENDPOINT: &str = "http://127.0.0.1:8080";

/// Exit status when a --check threshold is not met.
const CHECK_FAILED: u8 = 2;

#[derive(Parser)]
#[command(
    name = "dba",
    version,
    about = "Distributed black-box attacks against an image classification service"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Start the classification service.
    Serve(ServeArgs),
    /// Write a seeded synthetic PNG dataset.
    Dataset(DatasetArgs),
    /// Write TNW1 weight files for the configured models.
    Weights(WeightsArgs),
    /// Run one attack configuration over a dataset.
    Attack(AttackArgs),
    /// Run every method × mode combination and write a CSV.
    Grid(GridArgs),
    /// Measure per-query latency against request concurrency.
    Profile(ProfileArgs),
    /// Compare wall time of distributed and non-distributed runs.
    Speedup(SpeedupArgs),
    /// Re-submit stored adversarial images and confirm the label change.
    Verify(VerifyArgs),
    /// Aggregate a results CSV.
    Summarize(SummarizeArgs),
}

#[derive(Args)]
struct ServeArgs {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the listen address (the DBA_LISTEN variable wins over the file).
    #[arg(long)]
    listen: Option<String>,
    #[arg(long)]
    replicas: Option<usize>,
    /// Base injected latency per request.
    #[arg(long)]
    latency_ms: Option<f64>,
    /// Upper bound of the uniform latency jitter.
    #[arg(long)]
    jitter_ms: Option<f64>,
    #[arg(long)]
    max_queue: Option<usize>,
    /// Load `<dir>/<model>.tnw` instead of generating weights.
    #[arg(long)]
    weights_dir: Option<PathBuf>,
    /// Reject JPEG uploads.
    #[arg(long)]
    no_jpeg: bool,
    /// Seed of the latency jitter stream.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct DatasetArgs {
    #[arg(long, default_value = "data")]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    count: usize,
    #[arg(long, default_value_t = DEFAULT_IMAGE_SIZE)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct WeightsArgs {
    #[arg(long, default_value = "weights")]
    out: PathBuf,
    /// Service configuration naming the models and their seeds.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Offset added to every model's configured seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Clone)]
struct ExperimentArgs {
    #[arg(long, env = "DBA_ENDPOINT", default_value = DEFAULT_ENDPOINT)]
    endpoint: String,
    /// Dataset directory of PNG images.
    #[arg(long, default_value = "data")]
    data: PathBuf,
    #[arg(long, default_value = "tinynet-a")]
    model: String,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
    /// Charged queries per image.
    #[arg(long, default_value_t = DEFAULT_QUERY_LIMIT)]
    budget: usize,
    /// Use at most this many images.
    #[arg(long)]
    images: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Maximum requests in flight.
    #[arg(long, default_value_t = DEFAULT_WORKERS)]
    workers: usize,
    /// SimBA projection ball.
    #[arg(long, default_value_t = Norm::Linf)]
    simba_norm: Norm,
    /// SimBA step applied on acceptance; defaults to epsilon.
    #[arg(long)]
    simba_alpha: Option<f64>,
    /// Initial Square window fraction.
    #[arg(long)]
    p_init: Option<f64>,
    #[arg(long)]
    bandits_probe: Option<f64>,
    #[arg(long)]
    bandits_image_step: Option<f64>,
    #[arg(long)]
    bandits_eg_lr: Option<f64>,
    /// Bandits PGD step; defaults to epsilon / 10.
    #[arg(long)]
    bandits_pgd_step: Option<f64>,
}

impl ExperimentArgs {
    fn params(&self) -> AttackParams {
        let mut p = AttackParams::with_epsilon(self.epsilon);
        p.simba_norm = self.simba_norm;
        if let Some(a) = self.simba_alpha {
            p.simba_alpha = a;
        }
        if let Some(x) = self.p_init {
            p.square_p_init = x;
        }
        let d = BanditsParams::default();
        p.bandits = BanditsParams {
            probe: self.bandits_probe.unwrap_or(d.probe),
            image_step: self.bandits_image_step.unwrap_or(d.image_step),
            eg_lr: self.bandits_eg_lr.unwrap_or(d.eg_lr),
            pgd_step: self.bandits_pgd_step,
        };
        p
    }

    fn config(&self, method: Method, mode: Mode, batch: usize) -> ExperimentConfig {
        let mut c = ExperimentConfig::new(method, mode, self.model.clone());
        c.batch = batch;
        c.params = self.params();
        c.budget = self.budget;
        c.images = self.images.unwrap_or(usize::MAX);
        c.base_seed = self.seed;
        c.workers = self.workers;
        c
    }

    fn client(&self) -> ServiceClient {
        ServiceClient::connect(self.endpoint.clone())
    }

    fn dataset(&self) -> Result<Vec<(String, ImageTensor)>> {
        let mut images = load_dataset(&self.data)
            .with_context(|| format!("loading dataset from {}", self.data.display()))?;
        if images.is_empty() {
            bail!("no PNG images in {}", self.data.display());
        }
        images.truncate(self.images.unwrap_or(usize::MAX));
        Ok(images)
    }
}

#[derive(Args)]
struct AttackArgs {
    #[command(flatten)]
    exp: ExperimentArgs,
    #[arg(long, default_value = "square")]
    method: Method,
    #[arg(long, default_value = "none")]
    mode: Mode,
    /// Steps per round in vertical mode.
    #[arg(long, default_value_t = 1)]
    batch: usize,
    /// Results CSV.
    #[arg(long, default_value = "attack.csv")]
    out: PathBuf,
    /// Directory for final adversarial PNGs.
    #[arg(long)]
    finals: Option<PathBuf>,
}

#[derive(Args)]
struct GridArgs {
    #[command(flatten)]
    exp: ExperimentArgs,
    #[arg(long, value_delimiter = ',', default_value = "simba,square,bandits")]
    methods: Vec<Method>,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "none,horizontal,vertical"
    )]
    modes: Vec<Mode>,
    /// Steps per round for vertical configs.
    #[arg(long, default_value_t = 8)]
    batch: usize,
    #[arg(long, default_value = "grid.csv")]
    out: PathBuf,
    /// Summary CSV written next to the results.
    #[arg(long, default_value = "grid_summary.csv")]
    summary: PathBuf,
    #[arg(long)]
    finals: Option<PathBuf>,
}

#[derive(Args)]
struct ProfileArgs {
    #[arg(long, env = "DBA_ENDPOINT", default_value = DEFAULT_ENDPOINT)]
    endpoint: String,
    #[arg(long, default_value = "tinynet-a")]
    model: String,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16,32")]
    levels: Vec<usize>,
    /// Requests in flight; defaults to the largest level.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, default_value_t = 3)]
    repetitions: usize,
    /// Seed of the synthetic probe image.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Gnuplot data file.
    #[arg(long, default_value = "profile.dat")]
    out: PathBuf,
    /// Require strictly falling latency up to B=8 and a B1/B8 ratio of at least 4.
    #[arg(long)]
    check: bool,
}

#[derive(Args)]
struct SpeedupArgs {
    #[command(flatten)]
    exp: ExperimentArgs,
    #[arg(long, default_value = "square")]
    method: Method,
    /// Also compare vertical batch 1 against this batch on the first image.
    #[arg(long, default_value_t = 8)]
    vertical_batch: usize,
    #[arg(long, default_value = "speedup.dat")]
    out: PathBuf,
    /// Require every speedup to be at least this factor.
    #[arg(long)]
    check: Option<f64>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, env = "DBA_ENDPOINT", default_value = DEFAULT_ENDPOINT)]
    endpoint: String,
    #[arg(long)]
    csv: PathBuf,
    #[arg(long, default_value = "data")]
    data: PathBuf,
    #[arg(long)]
    finals: PathBuf,
    /// Batch size used for vertical rows in the CSV.
    #[arg(long, default_value_t = 8)]
    batch: usize,
}

#[derive(Args)]
struct SummarizeArgs {
    csv: PathBuf,
    /// Also write the summary as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn print_summary(rows: &[SummaryRow]) {
    println!(
        "{:<8} {:<10} {:<10} {:>6} {:>8} {:>9} {:>12}",
        "method", "mode", "model", "images", "success", "queries", "total_s"
    );
    for r in rows {
        println!(
            "{:<8} {:<10} {:<10} {:>6} {:>7.1}% {:>9.1} {:>12.2}",
            r.method,
            r.mode,
            r.model,
            r.images,
            r.success_rate * 100.0,
            r.mean_queries,
            r.total_wall_ms / 1000.0
        );
    }
}

async fn serve(args: ServeArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            ServiceConfig::parse_str(&text)?
        }
        None => ServiceConfig::default(),
    };
    if let Some(v) = args.listen {
        cfg.listen = v;
    }
    if let Ok(v) = std::env::var(dba_core::service::LISTEN_ENV) {
        cfg.listen = v;
    }
    if let Some(v) = args.replicas {
        cfg.replicas = v;
    }
    if let Some(v) = args.latency_ms {
        cfg.base_latency_ms = v;
    }
    if let Some(v) = args.jitter_ms {
        cfg.latency_jitter_ms = v;
    }
    if let Some(v) = args.max_queue {
        cfg.max_queue = v;
    }
    if args.weights_dir.is_some() {
        cfg.weights_dir = args.weights_dir;
    }
    if args.no_jpeg {
        cfg.jpeg_enabled = false;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    let handle = Service::new(cfg)?.spawn().await?;
    println!("listening on {}", handle.base_url());
    handle.wait().await?;
    Ok(())
}

fn weights(args: WeightsArgs) -> Result<()> {
    let cfg = match &args.config {
        Some(path) => ServiceConfig::parse_str(&fs::read_to_string(path)?)?,
        None => ServiceConfig::default(),
    };
    fs::create_dir_all(&args.out)?;
    for (name, seed) in &cfg.models {
        let ws = build_weights(name, seed.wrapping_add(args.seed))?;
        let path = args.out.join(format!("{name}.tnw"));
        save_weights(&ws, &path)?;
        println!("{}", path.display());
    }
    Ok(())
}

async fn attack(args: AttackArgs) -> Result<()> {
    let method = args.method;
    let images = args.exp.dataset()?;
    let cfg = args.exp.config(method, args.mode, args.batch);
    let run = run_config(&args.exp.client(), &images, &cfg).await?;
    write_records(fs::File::create(&args.out)?, &run.records)?;
    if let Some(dir) = &args.finals {
        let ids: Vec<String> = images.iter().map(|(id, _)| id.clone()).collect();
        save_finals(dir, &cfg, &ids, &run)?;
    }
    print_summary(&summarize(&run.records));
    println!(
        "wall time {:.2}s, rows in {}",
        run.total_ms / 1000.0,
        args.out.display()
    );
    Ok(())
}

async fn grid(args: GridArgs) -> Result<()> {
    let images = args.exp.dataset()?;
    let mut configs = Vec::new();
    for &method in &args.methods {
        for &mode in &args.modes {
            let batch = if mode == Mode::Vertical {
                args.batch
            } else {
                1
            };
            configs.push(args.exp.config(method, mode, batch));
        }
    }
    let rows = run_grid(
        &args.exp.client(),
        &images,
        &configs,
        &args.out,
        args.finals.as_deref(),
    )
    .await?;
    let summary = summarize(&rows);
    write_summary(fs::File::create(&args.summary)?, &summary)?;
    print_summary(&summary);
    Ok(())
}

async fn profile(args: ProfileArgs) -> Result<ExitCode> {
    let client = ServiceClient::connect(args.endpoint.clone());
    let image = harness::synthesize(DEFAULT_IMAGE_SIZE, args.seed, 0)
        .quantize()
        .dequantize();
    let workers = args
        .workers
        .unwrap_or_else(|| args.levels.iter().copied().max().unwrap_or(1));
    let rows = client
        .concurrency_profile(&image, &args.model, &args.levels, workers, args.repetitions)
        .await?;
    write_profile_dat(fs::File::create(&args.out)?, &rows)?;
    println!("{:>6} {:>10} {:>10}", "B", "total_ms", "avg_ms");
    for r in &rows {
        println!(
            "{:>6} {:>10.1} {:>10.2}",
            r.concurrency, r.total_ms, r.avg_ms
        );
    }
    if args.check {
        let upto8: Vec<f64> = rows
            .iter()
            .filter(|r| r.concurrency <= 8)
            .map(|r| r.avg_ms)
            .collect();
        let at = |b: usize| rows.iter().find(|r| r.concurrency == b).map(|r| r.avg_ms);
        let ok = match (at(1), at(8)) {
            (Some(a), Some(b)) => upto8.windows(2).all(|w| w[1] < w[0]) && a / b >= 4.0,
            _ => bail!("--check needs levels 1 and 8"),
        };
        println!("check: {}", if ok { "pass" } else { "FAIL" });
        if !ok {
            return Ok(ExitCode::from(CHECK_FAILED));
        }
    }
    Ok(ExitCode::SUCCESS)
}

async fn speedup(args: SpeedupArgs) -> Result<ExitCode> {
    let method = args.method;
    let images = args.exp.dataset()?;
    let client = args.exp.client();
    let cfg = args.exp.config(method, Mode::None, 1);
    let mut rows = Vec::new();
    let h = harness::horizontal_speedup(&client, &images, &cfg).await?;
    println!(
        "horizontal: none {:.2}s, horizontal {:.2}s, speedup {:.2}x",
        h.baseline_ms / 1000.0,
        h.distributed_ms / 1000.0,
        h.ratio()
    );
    rows.push(("horizontal".to_string(), h));
    if args.vertical_batch > 1 {
        let v = harness::vertical_speedup(&client, &images[0], &cfg, args.vertical_batch).await?;
        println!(
            "vertical: b=1 {:.2}s, b={} {:.2}s, speedup {:.2}x",
            v.baseline_ms / 1000.0,
            args.vertical_batch,
            v.distributed_ms / 1000.0,
            v.ratio()
        );
        rows.push((format!("vertical{}", args.vertical_batch), v));
    }
    write_speedup_dat(fs::File::create(&args.out)?, &rows)?;
    if let Some(min) = args.check {
        let ok = rows.iter().all(|(_, s)| s.ratio() >= min);
        println!("check (>= {min}): {}", if ok { "pass" } else { "FAIL" });
        if !ok {
            return Ok(ExitCode::from(CHECK_FAILED));
        }
    }
    Ok(ExitCode::SUCCESS)
}

async fn verify(args: VerifyArgs) -> Result<ExitCode> {
    let records = read_records(&args.csv)?;
    let client = ServiceClient::connect(args.endpoint.clone());
    let batch = args.batch;
    let slug = |r: &harness::ExperimentRecord| {
        let method = r.method.parse::<Method>().unwrap_or(Method::Square);
        let mode = r.mode.parse::<Mode>().unwrap_or(Mode::None);
        let mut c = ExperimentConfig::new(method, mode, r.model.clone());
        c.batch = if mode == Mode::Vertical { batch } else { 1 };
        c.slug()
    };
    let (checked, failures) =
        harness::verify(&client, &records, &args.data, &args.finals, slug).await?;
    for f in &failures {
        println!("FAIL {}: {}", f.image_id, f.reason);
    }
    println!(
        "verified {checked} successful rows, {} failures",
        failures.len()
    );
    Ok(if failures.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(CHECK_FAILED)
    })
}

fn summarize_cmd(args: SummarizeArgs) -> Result<()> {
    let rows = summarize(&read_records(&args.csv)?);
    print_summary(&rows);
    if let Some(out) = &args.out {
        write_summary(fs::File::create(out)?, &rows)?;
    }
    Ok(())
}

fn dataset(args: DatasetArgs) -> Result<()> {
    let paths = generate_dataset(&args.out, args.count, args.size, args.seed)?;
    println!("wrote {} images to {}", paths.len(), args.out.display());
    Ok(())
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Serve(a) => serve(a).await.map(|_| ExitCode::SUCCESS),
        Command::Dataset(a) => dataset(a).map(|_| ExitCode::SUCCESS),
        Command::Weights(a) => weights(a).map(|_| ExitCode::SUCCESS),
        Command::Attack(a) => attack(a).await.map(|_| ExitCode::SUCCESS),
        Command::Grid(a) => grid(a).await.map(|_| ExitCode::SUCCESS),
        Command::Profile(a) => profile(a).await,
        Command::Speedup(a) => speedup(a).await,
        Command::Verify(a) => verify(a).await,
        Command::Summarize(a) => summarize_cmd(a).map(|_| ExitCode::SUCCESS),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
