//! The `mgrade` command line: dataset generation, training, evaluation,
//! hidden-state export, memory planning and gradient auditing.

mod config;

pub use config::{load_toml, parse_toml, RunConfig, SweepEntry, SweepFile};

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::analysis::{eval_suite, pca, projections_csv, EvalOptions};
use crate::error::{Error, Result};
use crate::memplan::{footprint, footprint_of, preset, sweep_report, MemoryOptions, PRESETS};
use crate::model::{sha256_hex, Checkpoint, ConvKind, NetworkParams};
use crate::numcore::{save_tensor, Rng, Tensor};
use crate::tasks::{
    gen_flipflop, gen_lorenz, load_images, Dataset, FlipFlopConfig, ImageSource, LorenzConfig,
};
use crate::training::{
    gradient_audit, AuditConfig, Control, Trainer, BEST_CHECKPOINT, LAST_CHECKPOINT, METRICS_FILE,
};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Parser)]
#[command(
    name = "mgrade",
    version,
    about = "Hybrid convolution / minGRU sequence models"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a dataset cache.
    Gen(GenArgs),
    /// Train a model on a dataset cache.
    Train(TrainArgs),
    /// Score a checkpoint and print the metrics JSON.
    Eval(EvalArgs),
    /// Write every layer's hidden states for a dataset.
    ExportHidden(ExportArgs),
    /// Print the inference memory footprint.
    Memplan(MemplanArgs),
    /// Finite-difference audit of all gradients.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Flipflop,
    Lorenz,
    Smnist,
    Scifar,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    pub task: Task,
    /// TOML with the generator settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub seq_len: Option<usize>,
    /// Flip-flop probability of an ignore instruction.
    #[arg(long)]
    pub p_ignore: Option<f64>,
    /// Lorenz integration step.
    #[arg(long)]
    pub dt: Option<f64>,
    /// Image files (a directory of IDX files or CIFAR batches).
    #[arg(long)]
    pub source: Option<PathBuf>,
    /// Keep only the first this many images.
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML with `[model]`, `[train]` and `[eval]` tables.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    /// Validation cache; without it the tail of `--data` is held out.
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Use only the first this many training (and validation) sequences.
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Continue from `out/last.ckpt`.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Data the Lorenz probe is fitted on.
    #[arg(long)]
    pub fit: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Also write the metrics JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write every dense kernel as `layer,channel,n,value` CSV.
    #[arg(long)]
    pub dump_kernels: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write this many principal components of the last layer.
    #[arg(long)]
    pub pca: Option<usize>,
    #[arg(long, default_value_t = 256)]
    pub batch: usize,
}

#[derive(Debug, Args)]
pub struct MemplanArgs {
    /// One of the named reference topologies.
    #[arg(long, conflicts_with_all = ["config", "checkpoint", "sweep"])]
    pub preset: Option<String>,
    #[arg(long, conflicts_with = "sweep")]
    pub config: Option<PathBuf>,
    /// Use the trained positions of this checkpoint.
    #[arg(long, conflicts_with = "sweep")]
    pub checkpoint: Option<PathBuf>,
    /// TOML with `[[configs]]` entries; prints the CSV table.
    #[arg(long)]
    pub sweep: Option<PathBuf>,
    /// Also report bytes at this many bytes per float.
    #[arg(long)]
    pub bytes: Option<usize>,
    /// Include Adam moment storage.
    #[arg(long)]
    pub optimizer_state: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// List the preset names and exit.
    #[arg(long)]
    pub list_presets: bool,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// TOML with an audit config (`network`, `seq_len`, `batch`, ...).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Record of one command's inputs and outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: Option<u64>,
    /// Fully resolved configuration.
    pub config: serde_json::Value,
    /// Input path to sha256.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub timings: Timings,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub total_seconds: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub epoch_seconds: Vec<f64>,
}

impl RunManifest {
    fn new(command: &str, seed: Option<u64>, config: &impl Serialize) -> Result<Self> {
        Ok(Self {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed,
            config: serde_json::to_value(config)?,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            timings: Timings::default(),
        })
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        let file = if path.is_dir() {
            path.join("dataset.json")
        } else {
            path.to_path_buf()
        };
        let bytes = fs::read(&file).map_err(|_| Error::MissingPath(file.clone()))?;
        self.inputs
            .insert(path.display().to_string(), sha256_hex(&bytes));
        Ok(())
    }

    fn write(mut self, dir: &Path, start: Instant) -> Result<()> {
        self.timings.total_seconds = start.elapsed().as_secs_f64();
        fs::create_dir_all(dir)?;
        fs::write(
            dir.join(MANIFEST_FILE),
            serde_json::to_string_pretty(&self)? + "\n",
        )?;
        Ok(())
    }
}

/// 0 ok, 1 usage or configuration, 2 data, 3 numerical failure.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidArgument(_) | Error::Config(_) | Error::ConfigKey { .. } => 1,
        Error::Numerical(_) | Error::NonFinite { .. } => 3,
        _ => 2,
    }
}

/// Parse `args` (program name first), run, and return the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = if code == 0 {
                write!(out, "{}", e.render())
            } else {
                write!(err, "{}", e.render())
            };
            return code;
        }
    };
    match execute(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

/// Entry point of the `mgrade` binary.
pub fn main() -> ! {
    let code = run(
        std::env::args_os(),
        &mut std::io::stdout(),
        &mut std::io::stderr(),
    );
    std::process::exit(code)
}

pub fn execute(cmd: Command, out: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Gen(a) => cmd_gen(&a, out),
        Command::Train(a) => cmd_train(&a, out),
        Command::Eval(a) => cmd_eval(&a, out),
        Command::ExportHidden(a) => cmd_export_hidden(&a, out),
        Command::Memplan(a) => cmd_memplan(&a, out),
        Command::Gradcheck(a) => cmd_gradcheck(&a, out),
    }
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingPath(path.to_path_buf()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct FlipFlopGen {
    n: usize,
    seq_len: usize,
    p_ignore: f64,
    seed: u64,
}

impl Default for FlipFlopGen {
    fn default() -> Self {
        let c = FlipFlopConfig::default();
        Self {
            n: 10_000,
            seq_len: c.seq_len,
            p_ignore: c.p_ignore,
            seed: c.seed,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ImageGen {
    source: Option<PathBuf>,
    limit: Option<usize>,
}

fn write_json(out: &mut dyn Write, file: Option<&Path>, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    out.write_all(text.as_bytes())?;
    if let Some(f) = file {
        if let Some(dir) = f.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(f, text)?;
    }
    Ok(())
}

pub fn cmd_gen(a: &GenArgs, out: &mut dyn Write) -> Result<()> {
    let start = Instant::now();
    let text = a
        .config
        .as_deref()
        .map(|p| fs::read_to_string(p).map_err(|_| Error::MissingPath(p.into())));
    let text = text.transpose()?.unwrap_or_default();
    let (data, provenance, seed) = match a.task {
        Task::Flipflop => {
            let mut g: FlipFlopGen = parse_toml(&text)?;
            g.n = a.n.unwrap_or(g.n);
            g.seed = a.seed.unwrap_or(g.seed);
            g.seq_len = a.seq_len.unwrap_or(g.seq_len);
            g.p_ignore = a.p_ignore.unwrap_or(g.p_ignore);
            let cfg = FlipFlopConfig {
                seq_len: g.seq_len,
                p_ignore: g.p_ignore,
                seed: g.seed,
            };
            let d = gen_flipflop(&cfg, g.n)?;
            let prov = serde_json::json!({"task": "flipflop", "regime": cfg.regime(), "config": g});
            (d, prov, g.seed)
        }
        Task::Lorenz => {
            let mut c: LorenzConfig = parse_toml(&text)?;
            c.n = a.n.unwrap_or(c.n);
            c.seed = a.seed.unwrap_or(c.seed);
            c.seq_len = a.seq_len.unwrap_or(c.seq_len);
            c.dt = a.dt.unwrap_or(c.dt);
            let d = gen_lorenz(&c)?;
            (
                d,
                serde_json::json!({"task": "lorenz", "config": c}),
                c.seed,
            )
        }
        Task::Smnist | Task::Scifar => {
            let mut g: ImageGen = parse_toml(&text)?;
            g.source = a.source.clone().or(g.source);
            g.limit = a.limit.or(g.limit);
            let src = g
                .source
                .clone()
                .ok_or_else(|| Error::Config("image tasks need --source".into()))?;
            let kind = if a.task == Task::Smnist {
                ImageSource::Smnist
            } else {
                ImageSource::Scifar
            };
            let d = load_images(kind, &src, g.limit)?;
            (d, serde_json::json!({"task": a.task, "config": g}), 0)
        }
    };
    let side = data.save(&a.out, &provenance)?;
    let mut m = RunManifest::new("gen", Some(seed), &provenance)?;
    if let Some(c) = &a.config {
        m.input(c)?;
    }
    m.outputs = side
        .files
        .keys()
        .cloned()
        .chain(["dataset.json".to_string()])
        .collect();
    m.write(&a.out, start)?;
    writeln!(
        out,
        "wrote {} sequences of length {} to {}",
        side.n,
        side.seq_len,
        a.out.display()
    )?;
    Ok(())
}

fn limited(d: Dataset, limit: Option<usize>) -> Dataset {
    match limit {
        Some(l) if l < d.len() => d.first(l),
        _ => d,
    }
}

pub fn cmd_train(a: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let start = Instant::now();
    require(&a.data)?;
    if let Some(v) = &a.val {
        require(v)?;
    }
    let mut cfg: RunConfig = match &a.config {
        Some(p) => load_toml(p)?,
        None => RunConfig::default(),
    };
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    cfg.train.validate()?;
    cfg.model.validate()?;

    let (all, _) = Dataset::load(&a.data)?;
    let (train, val) = match &a.val {
        Some(v) => (limited(all, a.limit), limited(Dataset::load(v)?.0, a.limit)),
        None => {
            let all = limited(all, a.limit);
            let hold = ((all.len() as f64 * cfg.val_fraction).round() as usize)
                .clamp(1, all.len().saturating_sub(1).max(1));
            if all.len() < 2 {
                return Err(Error::Data(
                    "need at least 2 sequences to hold out validation data".into(),
                ));
            }
            let cut = all.len() - hold;
            (all.first(cut), all.range(cut, all.len()))
        }
    };

    let trainer = if a.resume {
        let t = Trainer::<f32>::resume(&a.out, a.epochs, &train, &val)?;
        cfg.train = t.config.clone();
        cfg.model = t.params().config.clone();
        t
    } else {
        let params = NetworkParams::<f32>::init(&cfg.model, &mut Rng::new(cfg.train.seed))?;
        Trainer::new(params, cfg.train.clone(), &train, &val)?.with_output(&a.out)?
    };
    let mut epoch_seconds = Vec::new();
    let outcome = trainer.run(|rec, _| {
        epoch_seconds.push(rec.seconds);
        let _ = writeln!(
            out,
            "epoch {} train_loss {:.6} val_loss {:.6} val_metric {:.6}",
            rec.epoch, rec.train_loss, rec.val_loss, rec.val_metric
        );
        Ok(Control::Continue)
    })?;

    let mut m = RunManifest::new("train", Some(cfg.train.seed), &cfg)?;
    m.input(&a.data)?;
    if let Some(v) = &a.val {
        m.input(v)?;
    }
    if let Some(c) = &a.config {
        m.input(c)?;
    }
    m.outputs = vec![
        BEST_CHECKPOINT.into(),
        LAST_CHECKPOINT.into(),
        METRICS_FILE.into(),
    ];
    m.timings.epoch_seconds = epoch_seconds;
    m.write(&a.out, start)?;
    writeln!(
        out,
        "best val_metric {:.6} at epoch {}",
        outcome.best_metric, outcome.best_epoch
    )?;
    Ok(())
}

/// `layer,channel,n,value` rows of every layer's dense kernel.
pub fn kernels_csv(params: &NetworkParams<f64>) -> Result<String> {
    let mut s = String::from("layer,channel,n,value\n");
    for (l, layer) in params.layers.iter().enumerate() {
        let Some(k) = &layer.conv else { continue };
        let dense = k.materialize()?;
        let span = dense.dim(1);
        for (i, v) in dense.data().iter().enumerate() {
            let _ = writeln!(s, "{l},{},{},{v}", i / span, i % span);
        }
    }
    Ok(s)
}

pub fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    require(&a.checkpoint)?;
    require(&a.data)?;
    let opts = match &a.config {
        Some(p) => load_toml::<RunConfig>(p)?.eval,
        None => EvalOptions::default(),
    };
    let params = Checkpoint::load(&a.checkpoint)?.network::<f64>()?;
    let (data, _) = Dataset::load(&a.data)?;
    let fit = a
        .fit
        .as_deref()
        .map(|p| Dataset::load(p).map(|d| d.0))
        .transpose()?;
    let report = eval_suite(&params, &data, fit.as_ref(), &opts)?;
    if let Some(path) = &a.dump_kernels {
        fs::write(path, kernels_csv(&params)?)?;
    }
    write_json(out, a.out.as_deref(), &report)
}

/// Mixer outputs of every layer, `(N, T, H)` each.
pub fn hidden_states(
    params: &NetworkParams<f64>,
    data: &Dataset,
    batch: usize,
) -> Result<Vec<Tensor<f32>>> {
    let (n, t, h) = (data.len(), data.seq_len(), params.config.hidden);
    let mut layers: Vec<Vec<f32>> = vec![Vec::with_capacity(n * t * h); params.layers.len()];
    for s in (0..n).step_by(batch.max(1)) {
        let idx: Vec<usize> = (s..(s + batch).min(n)).collect();
        let (_, cache) = params.forward(&data.batch_inputs(&idx))?;
        for (dst, src) in layers.iter_mut().zip(cache.hidden_states()) {
            dst.extend(src.data().iter().map(|&v| v as f32));
        }
    }
    layers
        .into_iter()
        .map(|d| Tensor::new(&[n, t, h], d))
        .collect()
}

pub fn cmd_export_hidden(a: &ExportArgs, out: &mut dyn Write) -> Result<()> {
    let start = Instant::now();
    require(&a.checkpoint)?;
    require(&a.data)?;
    let params = Checkpoint::load(&a.checkpoint)?.network::<f64>()?;
    let (data, _) = Dataset::load(&a.data)?;
    if data.input_dim() != params.config.input_dim {
        return Err(Error::Data(format!(
            "data has {} input channels, model expects {}",
            data.input_dim(),
            params.config.input_dim
        )));
    }
    fs::create_dir_all(&a.out)?;
    let layers = hidden_states(&params, &data, a.batch)?;
    let mut outputs = Vec::new();
    for (l, t) in layers.iter().enumerate() {
        let name = format!("hidden_layer{l}.mgt");
        save_tensor(&a.out.join(&name), t)?;
        outputs.push(name);
    }
    if let (Some(k), Some(last)) = (a.pca, layers.last()) {
        let (n, t, h) = (last.dim(0), last.dim(1), last.dim(2));
        let rows = Tensor::from_fn(&[n * t, h], |i| last.data()[i] as f64);
        let p = pca(&rows, k)?;
        fs::write(a.out.join("pca.csv"), projections_csv(&p))?;
        fs::write(
            a.out.join("pca.json"),
            serde_json::to_string_pretty(&serde_json::json!({
                "explained_variance": p.explained_variance,
                "explained_ratio": p.explained_ratio,
            }))? + "\n",
        )?;
        outputs.extend(["pca.csv".to_string(), "pca.json".to_string()]);
    }
    let mut m = RunManifest::new(
        "export-hidden",
        None,
        &serde_json::json!({"pca": a.pca, "batch": a.batch}),
    )?;
    m.input(&a.checkpoint)?;
    m.input(&a.data)?;
    m.outputs = outputs;
    m.write(&a.out, start)?;
    writeln!(
        out,
        "wrote {} layers of hidden states to {}",
        layers.len(),
        a.out.display()
    )?;
    Ok(())
}

pub fn cmd_memplan(a: &MemplanArgs, out: &mut dyn Write) -> Result<()> {
    if a.list_presets {
        for p in PRESETS {
            writeln!(out, "{p}")?;
        }
        return Ok(());
    }
    let opts = MemoryOptions {
        bytes_per_float: a.bytes,
        optimizer_state: a.optimizer_state,
    };
    if let Some(path) = &a.sweep {
        let sweep: SweepFile = load_toml(path)?;
        let grid = sweep
            .configs
            .into_iter()
            .map(|e| e.resolve().map(|c| (c, e.accuracy)))
            .collect::<Result<Vec<_>>>()?;
        let csv = sweep_report(&grid)?;
        out.write_all(csv.as_bytes())?;
        if let Some(f) = &a.out {
            fs::write(f, csv)?;
        }
        return Ok(());
    }
    let report = if let Some(ck) = &a.checkpoint {
        let params = Checkpoint::load(ck)?.network::<f64>()?;
        footprint_of(&params, &opts)?
    } else if let Some(name) = &a.preset {
        let cfg = preset(name).ok_or_else(|| {
            Error::Config(format!(
                "unknown preset `{name}`; known: {}",
                PRESETS.join(", ")
            ))
        })?;
        footprint(&cfg, None, &opts)?
    } else if let Some(path) = &a.config {
        let text = fs::read_to_string(path).map_err(|_| Error::MissingPath(path.clone()))?;
        let cfg: RunConfig = parse_toml(&text)?;
        if cfg.model.conv.variant == ConvKind::L
            && !config::has_key(&text, &["model", "conv", "max_delay"])?
        {
            return Err(Error::Config(
                "learnable positions need trained positions (--checkpoint) or an explicit model.conv.max_delay".into(),
            ));
        }
        footprint(&cfg.model, None, &opts)?
    } else {
        return Err(Error::invalid(
            "memplan needs --preset, --config, --checkpoint or --sweep",
        ));
    };
    write_json(out, a.out.as_deref(), &report)
}

pub fn cmd_gradcheck(a: &GradcheckArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg: AuditConfig = match &a.config {
        Some(p) => load_toml(p)?,
        None => AuditConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let report = gradient_audit(&cfg)?;
    write_json(out, a.out.as_deref(), &report)?;
    if report.passed {
        Ok(())
    } else {
        let worst: Vec<String> = report
            .failures()
            .map(|c| format!("{} ({:.2e})", c.name, c.max_rel_err))
            .collect();
        Err(Error::Numerical(format!(
            "gradient audit failed for {}",
            worst.join(", ")
        )))
    }
}
