//! `trimap`: synthetic corpora, training, evaluation, sweeps, single-image
//! prediction and the session service.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use trimap_core::harness::{self, EvalConfig, PredictorChoice, SweepParam};
use trimap_core::io;
use trimap_core::matting::estimate_alpha;
use trimap_core::predictors::{Frame, GeodesicPredictor, MlpPredictor, Predictor, DEFAULT_WORKING_RESOLUTION};
use trimap_core::simulation::Policy;
use trimap_core::training::{self, generate_synthetic, TrainConfig};
use trimap_core::types::SimulationConfig;

#[derive(Parser)]
#[command(name = "trimap", version, about = "Click-driven trimap prediction toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a deterministic synthetic corpus (PNGs plus manifest).
    Gen(GenArgs),
    /// Train the MLP predictor with iterative click simulation.
    Train(TrainArgs),
    /// Evaluate a predictor with the click-by-click protocol.
    Eval(EvalArgs),
    /// Evaluate once per value of a simulation threshold.
    Sweep(SweepArgs),
    /// Predict a trimap and alpha matte for one image and a clicks file.
    Predict(PredictArgs),
    /// Run the HTTP session service.
    Serve(ServeArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PolicyArg {
    Twoclass,
    Itts,
    Cups,
}

impl From<PolicyArg> for Policy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Twoclass => Policy::TwoClass,
            PolicyArg::Itts => Policy::Itts,
            PolicyArg::Cups => Policy::Cups,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ParamArg {
    Alpha,
    Beta,
}

/// `geodesic`, `oracle` or `mlp:<checkpoint>`.
#[derive(Clone, Debug)]
enum PredictorSpec {
    Geodesic,
    Oracle,
    Mlp(PathBuf),
}

fn parse_predictor(s: &str) -> Result<PredictorSpec, String> {
    match s {
        "geodesic" => Ok(PredictorSpec::Geodesic),
        "oracle" => Ok(PredictorSpec::Oracle),
        _ => match s.strip_prefix("mlp:") {
            Some(p) if !p.is_empty() => Ok(PredictorSpec::Mlp(PathBuf::from(p))),
            _ => Err(format!("expected geodesic, oracle or mlp:<checkpoint>, got {s:?}")),
        },
    }
}

impl PredictorSpec {
    fn load(&self) -> Result<PredictorChoice> {
        Ok(match self {
            PredictorSpec::Geodesic => PredictorChoice::Geodesic(GeodesicPredictor::default()),
            PredictorSpec::Oracle => PredictorChoice::Oracle,
            PredictorSpec::Mlp(p) => PredictorChoice::Mlp(
                MlpPredictor::load(p).with_context(|| format!("loading checkpoint {}", p.display()))?,
            ),
        })
    }
}

/// Simulation flags shared by most commands.
#[derive(Args, Clone, Debug)]
struct SimArgs {
    #[arg(long, env = "TRIMAP_ALPHA", default_value_t = 0.1)]
    alpha: f64,
    #[arg(long, env = "TRIMAP_BETA", default_value_t = 2.0)]
    beta: f64,
    #[arg(long, env = "TRIMAP_GAMMA", default_value_t = 2.0)]
    gamma: f64,
    #[arg(long, env = "TRIMAP_MAX_CLICKS", default_value_t = 10)]
    max_clicks: usize,
    #[arg(long, env = "TRIMAP_CLICK_RADIUS", default_value_t = 5.0)]
    click_radius: f64,
    /// Working resolution (each axis is clamped to it).
    #[arg(long, env = "TRIMAP_RESOLUTION", default_value_t = DEFAULT_WORKING_RESOLUTION)]
    resolution: usize,
}

impl SimArgs {
    fn sim(&self) -> Result<SimulationConfig> {
        let c = SimulationConfig {
            alpha_threshold: self.alpha,
            beta_threshold: self.beta,
            gamma: self.gamma,
            max_clicks: self.max_clicks,
            click_radius: self.click_radius,
        };
        c.validate()?;
        if self.resolution == 0 {
            bail!("--resolution must be positive");
        }
        Ok(c)
    }
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, env = "TRIMAP_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Checkpoint path to write.
    #[arg(long)]
    out: PathBuf,
    /// Epoch log CSV; defaults to the checkpoint path with a `.csv` extension.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long, env = "TRIMAP_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, env = "TRIMAP_POLICY", value_enum, default_value = "cups")]
    policy: PolicyArg,
    #[arg(long, default_value_t = 25)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 5e-4)]
    lr: f64,
    /// Epoch from which the learning rate is multiplied by `--lr-decay`.
    #[arg(long, default_value_t = 20)]
    lr_decay_epoch: usize,
    #[arg(long, default_value_t = 0.1)]
    lr_decay: f64,
    #[arg(long, default_value_t = 3)]
    max_inner: usize,
    /// Place simulated clicks uniformly inside error regions.
    #[arg(long)]
    random_clicks: bool,
    /// Hold out the last N corpus samples for evaluation.
    #[arg(long, default_value_t = 0)]
    held_out: usize,
    /// Evaluate on the held-out samples every N epochs (0: only at the end).
    #[arg(long, default_value_t = 0)]
    eval_every: usize,
    #[command(flatten)]
    sim: SimArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, env = "TRIMAP_PREDICTOR", value_parser = parse_predictor, default_value = "geodesic")]
    predictor: PredictorSpec,
    #[arg(long, env = "TRIMAP_POLICY", value_enum, default_value = "cups")]
    policy: PolicyArg,
    /// Recorded in the run manifest; evaluation itself is deterministic.
    #[arg(long, env = "TRIMAP_SEED", default_value_t = 0)]
    seed: u64,
    /// Evaluate only the last N corpus samples.
    #[arg(long)]
    last: Option<usize>,
    /// Run directory to create.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    sim: SimArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, env = "TRIMAP_PREDICTOR", value_parser = parse_predictor, default_value = "geodesic")]
    predictor: PredictorSpec,
    #[arg(long, value_enum)]
    param: ParamArg,
    /// Comma-separated threshold values.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
    #[arg(long, env = "TRIMAP_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    last: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    sim: SimArgs,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    image: PathBuf,
    /// JSON array of `{x, y, label}` with label F, B or U.
    #[arg(long)]
    clicks: PathBuf,
    #[arg(long, env = "TRIMAP_PREDICTOR", value_parser = parse_predictor, default_value = "geodesic")]
    predictor: PredictorSpec,
    /// Directory receiving `trimap.png` and `alpha.png`.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    sim: SimArgs,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, env = "TRIMAP_BIND", default_value = "127.0.0.1:8080")]
    bind: String,
    #[arg(long, env = "TRIMAP_PREDICTOR", value_parser = parse_predictor, default_value = "geodesic")]
    predictor: PredictorSpec,
    /// Idle time after which a session is evicted.
    #[arg(long, env = "TRIMAP_SESSION_TTL_SECS", default_value_t = 3600)]
    session_ttl_secs: u64,
    #[arg(long, env = "TRIMAP_MAX_MEGAPIXELS", default_value_t = 16.0)]
    max_megapixels: f64,
    /// Persist sessions here and restore them on start.
    #[arg(long, env = "TRIMAP_PERSIST_DIR")]
    persist_dir: Option<PathBuf>,
    #[command(flatten)]
    sim: SimArgs,
}

fn load_corpus(dir: &Path) -> Result<(io::CorpusManifest, Vec<training::SyntheticSample>)> {
    io::load_corpus(dir).with_context(|| format!("loading corpus {}", dir.display()))
}

fn tail<T>(v: &[T], last: Option<usize>) -> &[T] {
    match last {
        Some(n) => &v[v.len().saturating_sub(n)..],
        None => v,
    }
}

fn cmd_gen(a: GenArgs) -> Result<()> {
    let samples = generate_synthetic(a.seed, a.n, a.size)?;
    let m = io::write_corpus(&a.out, &samples, Some(a.seed), Some(a.size))
        .with_context(|| format!("writing corpus to {}", a.out.display()))?;
    println!("{} samples, hash {}", m.ids.len(), m.hash);
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let (_, samples) = load_corpus(&a.corpus)?;
    if a.held_out >= samples.len() && !samples.is_empty() {
        bail!("--held-out {} leaves no training samples out of {}", a.held_out, samples.len());
    }
    let (train_set, held_out) = samples.split_at(samples.len() - a.held_out);
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.lr,
        lr_decay_epoch: Some(a.lr_decay_epoch),
        lr_decay: a.lr_decay,
        max_inner_clicks: a.max_inner,
        seed: a.seed,
        policy: a.policy.into(),
        random_clicks: a.random_clicks,
        sim: a.sim.sim()?,
        resolution: a.sim.resolution,
        eval_every: a.eval_every,
    };
    let mut model = MlpPredictor::init(a.seed);
    let log = training::train(&mut model, train_set, held_out, &cfg, |e| {
        eprintln!("epoch {} loss {:.6}", e.epoch, e.mean_loss);
    })?;
    model.save(&a.out)?;
    let log_path = a.log.unwrap_or_else(|| a.out.with_extension("csv"));
    fs::write(&log_path, training::epoch_log_csv(&log)?)
        .with_context(|| format!("writing {}", log_path.display()))?;
    println!("checkpoint {} log {}", a.out.display(), log_path.display());
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let (manifest, samples) = load_corpus(&a.corpus)?;
    let samples = tail(&samples, a.last);
    let cfg = EvalConfig {
        policy: a.policy.into(),
        sim: a.sim.sim()?,
        resolution: a.sim.resolution,
    };
    let run = harness::evaluate(&corpus_id(&a.corpus), samples, &a.predictor.load()?, &cfg)?;
    let hash = if a.last.is_none() { manifest.hash } else { io::corpus_hash(samples) };
    harness::write_run(&run, &a.out, Some(a.seed), &hash)?;
    let s = run.summary;
    println!(
        "{} images: mse {:.4} sad {:.4} mad {:.5} pixel_err {:.5}",
        run.images.len(),
        s.mse,
        s.sad,
        s.mad,
        s.pixel_err.unwrap_or(f64::NAN)
    );
    Ok(())
}

fn corpus_id(dir: &Path) -> String {
    dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "corpus".into())
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let (_, samples) = load_corpus(&a.corpus)?;
    let samples = tail(&samples, a.last);
    let base = EvalConfig {
        policy: Policy::Cups,
        sim: a.sim.sim()?,
        resolution: a.sim.resolution,
    };
    let param = match a.param {
        ParamArg::Alpha => SweepParam::Alpha,
        ParamArg::Beta => SweepParam::Beta,
    };
    let predictor = a.predictor.load()?;
    let rows = harness::sweep(&corpus_id(&a.corpus), samples, &predictor, param, &a.values, &base)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let hash = io::corpus_hash(samples);
    for r in &rows {
        harness::write_run(&r.run, &a.out.join(format!("{}_{}", param.as_str(), r.value)), Some(a.seed), &hash)?;
    }
    let path = a.out.join(format!("sweep_{}.csv", param.as_str()));
    fs::write(&path, harness::sweep_csv(&rows)?).with_context(|| format!("writing {}", path.display()))?;
    println!("{}", path.display());
    Ok(())
}

fn cmd_predict(a: PredictArgs) -> Result<()> {
    let image = io::load_image(&a.image).with_context(|| format!("reading {}", a.image.display()))?;
    let clicks = io::load_clicks(&a.clicks, image.dims())?;
    let sim = a.sim.sim()?;
    let predictor: Box<dyn Predictor> = match a.predictor.load()? {
        PredictorChoice::Geodesic(p) => Box::new(p),
        PredictorChoice::Mlp(p) => Box::new(p),
        PredictorChoice::Oracle => bail!("the oracle predictor needs ground truth; use geodesic or mlp:<checkpoint>"),
    };
    let frame = Frame::new(&image, a.sim.resolution);
    let trimap = frame.predict(predictor.as_ref(), &clicks, sim.click_radius, None)?;
    let alpha = estimate_alpha(&image, &trimap)?;
    io::save_trimap(&a.out.join("trimap.png"), &trimap)?;
    io::save_alpha(&a.out.join("alpha.png"), &alpha)?;
    println!("{}", a.out.display());
    Ok(())
}

fn cmd_serve(a: ServeArgs) -> Result<()> {
    if a.max_megapixels.is_nan() || a.max_megapixels <= 0.0 {
        bail!("--max-megapixels must be positive");
    }
    let predictor: Arc<dyn Predictor> = match a.predictor.load()? {
        PredictorChoice::Geodesic(p) => Arc::new(p),
        PredictorChoice::Mlp(p) => Arc::new(p),
        PredictorChoice::Oracle => bail!("the oracle predictor cannot serve sessions; use geodesic or mlp:<checkpoint>"),
    };
    let cfg = trimap_service::ServiceConfig {
        resolution: a.sim.resolution,
        sim: a.sim.sim()?,
        session_ttl: Duration::from_secs(a.session_ttl_secs),
        max_megapixels: a.max_megapixels,
        persist_dir: a.persist_dir,
    };
    let store = Arc::new(trimap_service::SessionStore::new(cfg, predictor));
    let rt = tokio::runtime::Runtime::new().context("starting runtime")?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&a.bind)
            .await
            .with_context(|| format!("cannot bind {}", a.bind))?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        trimap_service::serve(listener, store).await.context("server failed")
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Serve(a) => cmd_serve(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
