//! Command-line interface: `train`, `eval`, `predict`, `inspect`, `selftest`.
//!
//! Exit codes: 0 success, 1 selftest failure, 2 usage/config/data error,
//! 3 non-finite loss.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};

use crate::data::{self, SamplePair, DEFAULT_FRACTIONS};
use crate::error::{Error, Result};
use crate::kv;
use crate::model::{build_model, dump_intermediates, Checkpoint, ModelConfig, Variant};
use crate::selftest::{run_selftest, SelftestOptions};
use crate::train::{evaluate_checkpoint, predict_dir, train, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_SELFTEST: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// `<version>-<git describe>` of this build.
pub fn version_string() -> String {
    format!("{}-{}", env!("CARGO_PKG_VERSION"), env!("AWGU_GIT_DESCRIBE"))
}

#[derive(Parser, Debug)]
#[command(name = "awgunet", version, about = "Wavelet-guided attention U-Net for nuclei segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and write checkpoints, history and a run manifest.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset and report metrics in percent.
    Eval(EvalArgs),
    /// Write binary mask PNGs for every image in a directory.
    Predict(PredictArgs),
    /// Dump intermediate feature maps of one image as PNGs.
    Inspect(InspectArgs),
    /// Run the built-in verification suite.
    Selftest(SelftestArgs),
}

#[derive(Args, Debug, Clone, Default)]
struct ConfigArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Ablation variant: i, ii, iii or iv.
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threshold: Option<f64>,
    /// Single-threaded kernels.
    #[arg(long)]
    deterministic: bool,
    /// Overrides any config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Dataset root with `images/` and `masks/` (or `train/`, `val/`, `test/`
    /// for the predefined-dirs strategy).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Train on this many generated blob images instead of a dataset.
    #[arg(long, value_name = "N")]
    synthetic: Option<usize>,
    /// Output directory for manifest, history and checkpoints.
    #[arg(long, default_value = "runs/latest")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset root with `images/` and `masks/`.
    #[arg(long)]
    data: PathBuf,
    /// Writes `metrics.csv` here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Directory of input PNGs.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct InspectArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Without a checkpoint a freshly initialised model from the config is used.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SelftestArgs {
    /// Skip the overfit run.
    #[arg(long)]
    quick: bool,
    #[arg(long)]
    deterministic: bool,
    /// Skews the backward pass of the named op.
    #[arg(long, hide = true, value_name = "OP")]
    corrupt_backward: Option<String>,
}

/// How the dataset is divided into train/validation/test.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SplitStrategy {
    /// Seeded shuffle of `<root>` into the given fractions.
    Fractions(f64, f64, f64),
    /// `<root>/train`, `<root>/val`, `<root>/test`, each with images/masks.
    PredefinedDirs,
}

/// Everything a run is configured by; serialises to a config file.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: Option<PathBuf>,
    pub split: SplitStrategy,
    pub synthetic: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let (a, b, c) = DEFAULT_FRACTIONS;
        RunConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            data: None,
            split: SplitStrategy::Fractions(a, b, c),
            synthetic: None,
        }
    }
}

impl RunConfig {
    /// `seed` sets both the model and the training seed.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => {
                self.model.apply(key, value)?;
                self.train.apply(key, value)?;
            }
            "data" => self.data = (!value.is_empty() && value != "none").then(|| PathBuf::from(value)),
            "synthetic" => {
                self.synthetic = match value {
                    "" | "none" => None,
                    v => Some(kv::parse_num(key, v)?),
                }
            }
            "split_strategy" => {
                self.split = match value {
                    "fractions" => {
                        let (a, b, c) = DEFAULT_FRACTIONS;
                        match self.split {
                            SplitStrategy::Fractions(..) => self.split,
                            SplitStrategy::PredefinedDirs => SplitStrategy::Fractions(a, b, c),
                        }
                    }
                    "predefined-dirs" => SplitStrategy::PredefinedDirs,
                    _ => {
                        return Err(Error::config(key, format!("expected fractions or predefined-dirs, got `{value}`")))
                    }
                }
            }
            "split_fractions" => {
                let parts: Vec<f64> = value
                    .split(',')
                    .map(|p| kv::parse_num(key, p.trim()))
                    .collect::<Result<_>>()?;
                let [a, b, c] = parts[..] else {
                    return Err(Error::config(key, "expected three comma-separated fractions"));
                };
                self.split = SplitStrategy::Fractions(a, b, c);
            }
            _ => {
                if !self.model.apply(key, value)? && !self.train.apply(key, value)? {
                    return Err(Error::config(key, "unknown config key"));
                }
            }
        }
        Ok(())
    }

    pub fn to_kv(&self) -> Vec<(String, String)> {
        let mut out = self.model.to_kv();
        out.extend(self.train.to_kv().into_iter().filter(|(k, _)| k != "seed"));
        out.push(("data".into(), self.data.as_ref().map_or("none".into(), |p| p.display().to_string())));
        out.push(("synthetic".into(), self.synthetic.map_or("none".into(), |n| n.to_string())));
        match self.split {
            SplitStrategy::Fractions(a, b, c) => {
                out.push(("split_strategy".into(), "fractions".into()));
                out.push(("split_fractions".into(), format!("{a:?},{b:?},{c:?}")));
            }
            SplitStrategy::PredefinedDirs => out.push(("split_strategy".into(), "predefined-dirs".into())),
        }
        out
    }

    /// Defaults, then the config file, then flags (flags win).
    fn resolve(args: &ConfigArgs) -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &args.config {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            for (k, v) in kv::parse(&text)? {
                cfg.apply(&k, &v)?;
            }
        }
        if let Some(v) = &args.variant {
            cfg.model.variant = v.parse::<Variant>()?;
        }
        if let Some(seed) = args.seed {
            cfg.apply("seed", &seed.to_string())?;
        }
        if let Some(t) = args.threshold {
            cfg.train.threshold = t;
        }
        for s in &args.set {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| Error::config("--set", format!("expected KEY=VALUE, got `{s}`")))?;
            cfg.apply(k.trim(), v.trim())?;
        }
        cfg.model.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    /// Manifest text: comment header with version and time, then every key.
    pub fn manifest(&self) -> String {
        let ts = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        format!(
            "# awgunet run manifest\n# version = {}\n# unix_time = {ts}\n{}",
            version_string(),
            kv::render(&self.to_kv())
        )
    }
}

fn apply_runtime(deterministic: bool) {
    if deterministic {
        crate::nn::set_parallel(false);
    }
    if let Some(n) = std::env::var("AWGU_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        // fails harmlessly if the pool was already built
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
        if n <= 1 {
            crate::nn::set_parallel(false);
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NonFinite { .. } => EXIT_NUMERIC,
        _ => EXIT_USAGE,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Inspect(a) => cmd_inspect(a),
        Command::Selftest(a) => Ok(cmd_selftest(a)),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

struct Splits {
    train: Vec<SamplePair>,
    val: Vec<SamplePair>,
    test: Vec<SamplePair>,
}

fn pick(pairs: &[SamplePair], ids: &[String]) -> Result<Vec<SamplePair>> {
    Ok(data::select(pairs, ids)?.into_iter().cloned().collect())
}

fn load_splits(cfg: &RunConfig) -> Result<Splits> {
    let split_fractions = |pairs: Vec<SamplePair>, f: (f64, f64, f64)| -> Result<Splits> {
        let ids: Vec<String> = pairs.iter().map(|p| p.id.clone()).collect();
        let s = data::split_dataset(&ids, f, cfg.train.seed)?;
        Ok(Splits {
            train: pick(&pairs, &s.train)?,
            val: pick(&pairs, &s.val)?,
            test: pick(&pairs, &s.test)?,
        })
    };
    if let Some(n) = cfg.synthetic {
        let (h, w) = cfg.model.input_size;
        if h != w {
            return Err(Error::config("synthetic", "synthetic data needs a square input_size"));
        }
        let pairs = data::make_synthetic_blobs(n, h, cfg.train.seed);
        return match cfg.split {
            SplitStrategy::Fractions(a, b, c) => split_fractions(pairs, (a, b, c)),
            SplitStrategy::PredefinedDirs => Err(Error::config("split_strategy", "predefined-dirs needs --data")),
        };
    }
    let root = cfg
        .data
        .as_ref()
        .ok_or_else(|| Error::config("data", "no dataset given (use --data or --synthetic)"))?;
    match cfg.split {
        SplitStrategy::Fractions(a, b, c) => split_fractions(data::load_dataset_root(root)?, (a, b, c)),
        SplitStrategy::PredefinedDirs => {
            let part = |name: &str| -> Result<Vec<SamplePair>> {
                let dir = root.join(name);
                if dir.is_dir() { data::load_dataset_root(dir) } else { Ok(Vec::new()) }
            };
            Ok(Splits {
                train: data::load_dataset_root(root.join("train"))?,
                val: part("val")?,
                test: part("test")?,
            })
        }
    }
}

fn cmd_train(args: TrainArgs) -> Result<i32> {
    apply_runtime(args.cfg.deterministic);
    let mut cfg = RunConfig::resolve(&args.cfg)?;
    if let Some(d) = args.data {
        cfg.data = Some(d);
    }
    if args.synthetic.is_some() {
        cfg.synthetic = args.synthetic;
    }
    if cfg.train.checkpoint_dir.is_none() {
        cfg.train.checkpoint_dir = Some(args.out.clone());
    }
    let splits = load_splits(&cfg)?;
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    write_file(&args.out.join("manifest.cfg"), &cfg.manifest())?;
    log::info!(
        "training variant {} on {} images ({} val, {} test)",
        cfg.model.variant.roman(),
        splits.train.len(),
        splits.val.len(),
        splits.test.len()
    );
    let outcome = train(&cfg.model, &cfg.train, &splits.train, &splits.val)?;
    write_file(&args.out.join("history.csv"), &outcome.history.to_csv())?;
    write_file(&args.out.join("steps.csv"), &outcome.history.steps_csv())?;
    if !splits.test.is_empty() {
        let report = evaluate_checkpoint(&outcome.best, &splits.test, cfg.train.threshold)?;
        print!("{}", report.to_table());
        write_file(&args.out.join("test_metrics.csv"), &report.to_csv())?;
    }
    Ok(EXIT_OK)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path)
}

fn cmd_eval(args: EvalArgs) -> Result<i32> {
    apply_runtime(args.cfg.deterministic);
    let cfg = RunConfig::resolve(&args.cfg)?;
    let ck = load_checkpoint(&args.checkpoint)?;
    let pairs = data::load_dataset_root(&args.data)?;
    let report = evaluate_checkpoint(&ck, &pairs, cfg.train.threshold)?;
    print!("{}", report.to_table());
    if let Some(out) = args.out {
        std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        write_file(&out.join("metrics.csv"), &report.to_csv())?;
    }
    Ok(EXIT_OK)
}

fn cmd_predict(args: PredictArgs) -> Result<i32> {
    apply_runtime(args.cfg.deterministic);
    let cfg = RunConfig::resolve(&args.cfg)?;
    let ck = load_checkpoint(&args.checkpoint)?;
    let summary = predict_dir(&ck, &args.data, &args.out, cfg.train.threshold)?;
    println!("wrote {} masks to {}", summary.written.len(), args.out.display());
    if summary.skipped.is_empty() {
        return Ok(EXIT_OK);
    }
    eprintln!("skipped {} inputs:", summary.skipped.len());
    for (path, why) in &summary.skipped {
        eprintln!("  {}: {why}", path.display());
    }
    Ok(EXIT_USAGE)
}

fn cmd_inspect(args: InspectArgs) -> Result<i32> {
    apply_runtime(args.cfg.deterministic);
    let (network, store) = match &args.checkpoint {
        Some(path) => load_checkpoint(path)?.into_model()?,
        None => build_model::<f32>(&RunConfig::resolve(&args.cfg)?.model)?,
    };
    let image = data::read_image(&args.image)?;
    let files = dump_intermediates(&network, &store, &image, &args.out)?;
    for f in &files {
        println!("{}", f.display());
    }
    Ok(EXIT_OK)
}

fn cmd_selftest(args: SelftestArgs) -> i32 {
    apply_runtime(args.deterministic);
    let opts = SelftestOptions {
        quick: args.quick,
        // the fault hook keys on a static op name; one leak per process
        corrupt_backward: args.corrupt_backward.map(|s| &*Box::leak(s.into_boxed_str())),
    };
    let report = run_selftest(&opts);
    print!("{}", report.table());
    if report.passed() {
        EXIT_OK
    } else {
        eprintln!("failing: {}", report.failures().join(", "));
        EXIT_SELFTEST
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_file_and_seed_sets_both() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "variant = ii\nlr = 0.001\nseed = 5\n").unwrap();
        let args = ConfigArgs {
            config: Some(path),
            variant: Some("iii".into()),
            set: vec!["lr=0.002".into()],
            ..ConfigArgs::default()
        };
        let cfg = RunConfig::resolve(&args).unwrap();
        assert_eq!(cfg.model.variant, Variant::WgcamLwgap);
        assert_eq!(cfg.train.lr, 0.002);
        assert_eq!((cfg.model.seed, cfg.train.seed), (5, 5));
    }

    #[test]
    fn manifest_reloads_to_same_config() {
        let mut cfg = RunConfig::default();
        cfg.model = ModelConfig::desk();
        cfg.train.epochs = 3;
        cfg.synthetic = Some(6);
        cfg.data = Some("data/x".into());
        let mut back = RunConfig::default();
        for (k, v) in kv::parse(&cfg.manifest()).unwrap() {
            back.apply(&k, &v).unwrap();
        }
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_key_is_a_config_error() {
        let args = ConfigArgs {
            set: vec!["colour=red".into()],
            ..ConfigArgs::default()
        };
        assert!(matches!(RunConfig::resolve(&args), Err(Error::Config { .. })));
    }
}
