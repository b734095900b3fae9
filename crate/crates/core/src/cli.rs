//! The `xmodal` command line.
//!
//! Exit codes: 0 on success, 1 for usage or configuration errors, 2 for
//! failures while running.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{KvConfig, KvMap};
use crate::data::{
    generate_synthetic, load_dataset, save_dataset, split, SynthConfig, TupleDataset,
};
use crate::error::{Error, Result};
use crate::gradcheck::{parse_op_kind, run_gradcheck, GradcheckConfig};
use crate::model::{ModelConfig, ModelParams};
use crate::retrieval::{
    build_index, evaluate_cross_modal, metrics_csv, ranked_csv, retrieve, summary_table, DEFAULT_K,
};
use crate::trainer::{
    load_checkpoint, save_checkpoint, train_from, Checkpoint, TrainConfig, TrainState,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "xmodal",
    version,
    about = "Self-supervised cross-modal embedding and retrieval"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic paired dataset.
    GenData(GenDataArgs),
    /// Train backbones and the shared encoder.
    Train(TrainArgs),
    /// Evaluate cross-modal retrieval with F1@k and NDCG@k.
    Evaluate(EvaluateArgs),
    /// Dump the ranked results of a single query.
    Retrieve(RetrieveArgs),
    /// Compare analytic loss gradients with finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
struct Overrides {
    /// key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set noise_sigma=0.2`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

impl Overrides {
    fn load(&self) -> Result<KvMap> {
        let mut kv = match &self.config {
            Some(p) => KvMap::read(p)?,
            None => KvMap::new(),
        };
        for s in &self.sets {
            kv.set(s)?;
        }
        Ok(kv)
    }
}

#[derive(Debug, Args)]
struct GenDataArgs {
    #[command(flatten)]
    overrides: Overrides,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Create missing parent directories of the output.
    #[arg(long)]
    mkdirs: bool,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Keys prefixed `model.` or `train.`.
    #[command(flatten)]
    overrides: Overrides,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    mkdirs: bool,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Fill the `seconds` column of the report (makes it run-dependent).
    #[arg(long)]
    record_timing: bool,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "train")]
    query_split: String,
    #[arg(long, default_value = "test")]
    index_split: String,
    /// `both` for every ordered modality pair, or `S-T`.
    #[arg(long, default_value = "both")]
    direction: String,
    #[arg(long, default_value_t = DEFAULT_K)]
    k: usize,
    /// Keep the query's own tuple among the candidates.
    #[arg(long)]
    include_self: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    mkdirs: bool,
}

#[derive(Debug, Args)]
struct RetrieveArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    query_id: u64,
    #[arg(long, default_value = "train")]
    query_split: String,
    #[arg(long, default_value = "test")]
    index_split: String,
    #[arg(long, default_value_t = 0)]
    source: usize,
    #[arg(long, default_value_t = 1)]
    target: usize,
    #[arg(long, default_value_t = DEFAULT_K)]
    k: usize,
    #[arg(long)]
    include_self: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    mkdirs: bool,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, default_value_t = 4)]
    batch: usize,
    #[arg(long, default_value_t = 8)]
    dims: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, hide = true)]
    corrupt_rule: Option<String>,
}

/// Provenance record written next to a command's outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: BTreeMap<String, String>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub seed: Option<u64>,
    pub version: String,
    pub started_unix: f64,
    pub finished_unix: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epoch_seconds: Option<Vec<f64>>,
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

impl RunManifest {
    fn new(command: &str, config: &KvMap, seed: Option<u64>, started: f64) -> Self {
        Self {
            command: command.into(),
            config: config.iter().map(|(k, v)| (k.into(), v.into())).collect(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            seed,
            version: env!("CARGO_PKG_VERSION").into(),
            started_unix: started,
            finished_unix: 0.0,
            epoch_seconds: None,
        }
    }

    fn write(mut self, path: &Path) -> Result<()> {
        self.finished_unix = unix_now();
        let text = serde_json::to_string_pretty(&self).expect("manifest serializes");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

/// Sibling manifest path: `out.csv` gives `out.csv.manifest.json`.
fn manifest_for(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn ensure_dir(dir: &Path, mkdirs: bool) -> Result<()> {
    if dir.as_os_str().is_empty() || dir.is_dir() {
        return Ok(());
    }
    if mkdirs {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
    } else {
        Err(Error::io(
            dir,
            std::io::Error::new(
                std::io::ErrorKind::NotFound,
                "output directory does not exist (pass --mkdirs to create it)",
            ),
        ))
    }
}

fn ensure_parent(path: &Path, mkdirs: bool) -> Result<()> {
    ensure_dir(path.parent().unwrap_or(Path::new("")), mkdirs)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn cmd_gen_data(a: &GenDataArgs) -> Result<()> {
    let started = unix_now();
    let mut kv = a.overrides.load()?;
    if let Some(seed) = a.seed {
        kv.insert("seed", seed);
    }
    let cfg = SynthConfig::from_kv(kv)?;
    ensure_parent(&a.out, a.mkdirs)?;
    let ds = generate_synthetic(&cfg)?;
    save_dataset(&ds, &a.out)?;
    println!(
        "wrote {} tuples x {} modalities to {}",
        ds.len(),
        ds.num_modalities(),
        a.out.display()
    );
    let mut m = RunManifest::new("gen-data", &cfg.to_kv(), Some(cfg.seed), started);
    m.outputs.push(display(&a.out));
    m.write(&manifest_for(&a.out))
}

fn prefixed(model: &ModelConfig, train: &TrainConfig) -> KvMap {
    let mut kv = KvMap::new();
    for (k, v) in model.to_kv().iter() {
        kv.insert(format!("model.{k}"), v);
    }
    for (k, v) in train.to_kv().iter() {
        kv.insert(format!("train.{k}"), v);
    }
    kv
}

/// Model and training configs from files, overrides and flags, with the
/// model's input widths taken from the dataset unless given.
fn resolve_train_configs(
    a: &TrainArgs,
    ds: &TupleDataset,
    base: Option<&Checkpoint>,
) -> Result<(ModelConfig, TrainConfig)> {
    let mut kv = match base {
        Some(ck) => prefixed(ck.model_config(), &ck.train_config),
        None => KvMap::new(),
    };
    for (k, v) in a.overrides.load()?.iter() {
        kv.insert(k, v);
    }
    if let Some(e) = a.epochs {
        kv.insert("train.epochs", e);
    }
    if let Some(lr) = a.lr {
        kv.insert("train.learning_rate", lr);
    }
    if let Some(s) = a.seed {
        kv.insert("train.seed", s);
    }
    let mut model_kv = kv.split_prefix("model");
    let train_kv = kv.split_prefix("train");
    if let Some(key) = kv.keys().next() {
        return Err(Error::config(key, "expected a `model.` or `train.` prefix"));
    }
    if model_kv.get("input_dims").is_none() {
        model_kv.insert("input_dims", crate::config::join_list(ds.dims()));
    }
    let model = ModelConfig::from_kv(model_kv).map_err(prefix_key("model"))?;
    let train = TrainConfig::from_kv(train_kv).map_err(prefix_key("train"))?;
    if model.input_dims != ds.dims() {
        return Err(Error::config(
            "model.input_dims",
            format!(
                "{:?} does not match the dataset's {:?}",
                model.input_dims,
                ds.dims()
            ),
        ));
    }
    if let Some(ck) = base {
        if &model != ck.model_config() {
            return Err(Error::config(
                "model",
                "model config differs from the checkpoint",
            ));
        }
    }
    Ok((model, train))
}

fn prefix_key(prefix: &'static str) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Config { key, detail } => Error::Config {
            key: format!("{prefix}.{key}"),
            detail,
        },
        other => other,
    }
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let started = unix_now();
    let ds = load_dataset(&a.data)?;
    let resumed = a.resume.as_deref().map(load_checkpoint).transpose()?;
    let (model_cfg, train_cfg) = resolve_train_configs(a, &ds, resumed.as_ref())?;
    ensure_dir(&a.out_dir, a.mkdirs)?;
    let (train_ds, val_ds, _) = split(&ds, &train_cfg.split)?;

    let state = match resumed {
        Some(ck) => ck.state,
        None => TrainState::fresh(ModelParams::init(&model_cfg)?),
    };
    let mut outputs = Vec::new();
    let wall = Instant::now();
    let final_state = train_from(state, &train_ds, Some(&val_ds), &train_cfg, |st| {
        let e = train_cfg.checkpoint_every;
        if e > 0 && st.epoch % e == 0 && st.epoch < train_cfg.epochs {
            let path = a
                .out_dir
                .join(format!("checkpoint_epoch{:04}.bin", st.epoch));
            save_checkpoint(
                &Checkpoint {
                    train_config: train_cfg.clone(),
                    state: st.clone(),
                },
                &path,
            )?;
            outputs.push(display(&path));
        }
        let last = st.history.epochs.last().expect("epoch just finished");
        eprintln!(
            "epoch {:>4}  total {:.6}  mim {:.6}  mde {:.6}  msp {:.6}  val {:.6}",
            last.epoch,
            last.train.total,
            last.train.mim,
            last.train.mde,
            last.train.msp,
            last.val_total.unwrap_or(f64::NAN)
        );
        Ok(())
    })?;

    let ck_path = a.out_dir.join("checkpoint.bin");
    let csv_path = a.out_dir.join("train_report.csv");
    let report = &final_state.history;
    let epoch_seconds: Vec<f64> = report.epochs.iter().filter_map(|e| e.seconds).collect();
    write_text(&csv_path, &report.to_csv(a.record_timing))?;
    save_checkpoint(
        &Checkpoint {
            train_config: train_cfg.clone(),
            state: final_state.clone(),
        },
        &ck_path,
    )?;
    if let Some(last) = report.epochs.last() {
        let t = &last.train;
        println!(
            "final epoch {}: total {:.6} = mim {:.6} + {:.3e} * mde {:.6} + {:.3e} * msp {:.6}",
            last.epoch, t.total, t.mim, t.alpha, t.mde, t.beta, t.msp
        );
    }
    println!("trained in {:.1}s", wall.elapsed().as_secs_f64());

    let mut m = RunManifest::new(
        "train",
        &prefixed(&model_cfg, &train_cfg),
        Some(train_cfg.seed),
        started,
    );
    m.inputs.push(display(&a.data));
    if let Some(r) = &a.resume {
        m.inputs.push(display(r));
    }
    outputs.push(display(&ck_path));
    outputs.push(display(&csv_path));
    m.outputs = outputs;
    m.epoch_seconds = Some(epoch_seconds);
    m.write(&a.out_dir.join("manifest.json"))
}

fn pick_split(ds: &TupleDataset, ck: &Checkpoint, name: &str) -> Result<TupleDataset> {
    if name == "all" {
        return Ok(ds.clone());
    }
    let (tr, va, te) = split(ds, &ck.train_config.split)?;
    match name {
        "train" => Ok(tr),
        "val" => Ok(va),
        "test" => Ok(te),
        other => Err(Error::config(
            "split",
            format!("unknown split `{other}` (train, val, test or all)"),
        )),
    }
}

fn directions(arg: &str, n: usize) -> Result<Vec<(usize, usize)>> {
    if arg == "both" || arg == "all" {
        return Ok((0..n)
            .flat_map(|s| (0..n).filter(move |&t| t != s).map(move |t| (s, t)))
            .collect());
    }
    let bad = || {
        Error::config(
            "direction",
            format!("expected `both` or `S-T`, got `{arg}`"),
        )
    };
    let (s, t) = arg.split_once('-').ok_or_else(bad)?;
    let (s, t): (usize, usize) = (s.parse().map_err(|_| bad())?, t.parse().map_err(|_| bad())?);
    if s == t || s >= n || t >= n {
        return Err(bad());
    }
    Ok(vec![(s, t)])
}

fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    let started = unix_now();
    let ck = load_checkpoint(&a.checkpoint)?;
    let ds = load_dataset(&a.data)?;
    let queries = pick_split(&ds, &ck, &a.query_split)?;
    let pool = pick_split(&ds, &ck, &a.index_split)?;
    let dirs = directions(&a.direction, ds.num_modalities())?;
    if a.k == 0 {
        return Err(Error::config("k", "must be at least 1"));
    }
    let params = &ck.state.params;
    let index = build_index(params, &pool)?;
    let reports = dirs
        .iter()
        .map(|&(s, t)| evaluate_cross_modal(params, &index, &queries, s, t, a.k, !a.include_self))
        .collect::<Result<Vec<_>>>()?;
    print!("{}", summary_table(&reports));
    if let Some(out) = &a.out {
        ensure_parent(out, a.mkdirs)?;
        write_text(out, &metrics_csv(&reports))?;
        let mut cfg = KvMap::new();
        cfg.insert("query_split", &a.query_split);
        cfg.insert("index_split", &a.index_split);
        cfg.insert("direction", &a.direction);
        cfg.insert("k", a.k);
        cfg.insert("exclude_self_tuple", !a.include_self);
        let mut m = RunManifest::new("evaluate", &cfg, None, started);
        m.inputs = vec![display(&a.checkpoint), display(&a.data)];
        m.outputs.push(display(out));
        m.write(&manifest_for(out))?;
    }
    Ok(())
}

fn cmd_retrieve(a: &RetrieveArgs) -> Result<()> {
    let started = unix_now();
    let ck = load_checkpoint(&a.checkpoint)?;
    let ds = load_dataset(&a.data)?;
    let queries = pick_split(&ds, &ck, &a.query_split)?;
    let pool = pick_split(&ds, &ck, &a.index_split)?;
    let n = ds.num_modalities();
    if a.source >= n || a.target >= n {
        return Err(Error::config(
            "source",
            format!("modalities must be below {n}"),
        ));
    }
    let tuple = queries.find(a.query_id).ok_or_else(|| {
        Error::config(
            "query-id",
            format!("tuple {} is not in the {} split", a.query_id, a.query_split),
        )
    })?;
    let params = &ck.state.params;
    let x = crate::tensor::Tensor::matrix(1, ds.dims()[a.source], tuple.views[a.source].clone())?;
    let z = params.embed(a.source, &x)?;
    let index = build_index(params, &pool)?;
    let exclude = (!a.include_self).then_some(a.query_id);
    let mut res = retrieve(&index, z.data(), a.target, a.k, exclude)?;
    res.query_id = Some(a.query_id);
    let csv = ranked_csv(std::slice::from_ref(&res));
    print!("{csv}");
    if res.short {
        eprintln!("only {} candidates available for k={}", res.hits.len(), a.k);
    }
    if let Some(out) = &a.out {
        ensure_parent(out, a.mkdirs)?;
        write_text(out, &csv)?;
        let mut cfg = KvMap::new();
        cfg.insert("query_id", a.query_id);
        cfg.insert("source", a.source);
        cfg.insert("target", a.target);
        cfg.insert("k", a.k);
        let mut m = RunManifest::new("retrieve", &cfg, None, started);
        m.inputs = vec![display(&a.checkpoint), display(&a.data)];
        m.outputs.push(display(out));
        m.write(&manifest_for(out))?;
    }
    Ok(())
}

fn cmd_gradcheck(a: &GradcheckArgs) -> Result<bool> {
    let corrupt = a.corrupt_rule.as_deref().map(parse_op_kind).transpose()?;
    let cfg = GradcheckConfig {
        trials: a.trials,
        batch: a.batch,
        dims: a.dims,
        seed: a.seed,
        ..GradcheckConfig::default()
    };
    let started = Instant::now();
    let report = run_gradcheck(&cfg, corrupt)?;
    print!("{}", report.render());
    println!(
        "{} trials, tolerance {:e}, {:.2}s: {}",
        report.trials,
        report.tolerance,
        started.elapsed().as_secs_f64(),
        if report.passed() { "PASS" } else { "FAIL" }
    );
    Ok(report.passed())
}

fn exit_code(e: &Error) -> i32 {
    if e.is_usage() {
        EXIT_USAGE
    } else {
        EXIT_RUNTIME
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::GenData(a) => cmd_gen_data(a).map(|_| true),
        Command::Train(a) => cmd_train(a).map(|_| true),
        Command::Evaluate(a) => cmd_evaluate(a).map(|_| true),
        Command::Retrieve(a) => cmd_retrieve(a).map(|_| true),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    };
    match result {
        Ok(true) => EXIT_OK,
        Ok(false) => EXIT_RUNTIME,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
