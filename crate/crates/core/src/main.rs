use std::fs::{self, File};
use std::io::{self, BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use efllm::agent::{write_transcript, Agent, Registry};
use efllm::config::{InferMode, RunConfig, SEED_ENV};
use efllm::data::{generate_with_events, split, windows, Dataset, ScenarioSpec, SplitPolicy, WindowSample};
use efllm::diagnostics::{stability_run, sweep, write_anova_csv, write_sweep_csv, StabilityConfig};
use efllm::forecast::{
    format_value, metrics, step1_prompt, BinningScheme, Forecaster, ForecastResponse, MetricsReport,
};
use efllm::ini::Ini;
use efllm::model::{tensor_digest, Checkpoint, Decode, Model};
use efllm::pipeline::{
    base_examples, build_vocab, encode_all, evaluate, forecast_corpus, fpeft, point_forecast, pretrain,
    stability_inputs, sweep_cell, thin, write_predictions_csv, CellConfig,
};
use efllm::prefix::NormalizationParams;
use efllm::trainer::{continual_update, ContinualConfig, LossCurve};
use efllm::{Error, Result};

#[derive(Parser)]
#[command(name = "efllm", version, about = "Desk-scale energy forecasting language model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run directory; receives the resolved config and every artifact.
    #[arg(long)]
    out: PathBuf,
    /// Config file with [section] key = value entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one entry, e.g. `--set train.lr=0.003`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    sets: Vec<String>,
    /// Global seed; falls back to the config, then EFLLM_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    scenario: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with its metadata and planted events.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        days: Option<usize>,
        #[arg(long)]
        capacity: Option<f64>,
    },
    /// Build the vocabulary and pretrain a base model on the generic corpus.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        examples: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Fine-tune a base checkpoint with a fresh adapter and the prefix block.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        base: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f32>,
        /// Task weight between the class and value spans.
        #[arg(long)]
        weight: Option<f32>,
    },
    /// Stack a new adapter on a fine-tuned checkpoint and train only it.
    Continual {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        rank: Option<usize>,
    },
    /// Forecast one row: single greedy, averaged samples or two-step.
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        /// single, averaged or cot.
        #[arg(long)]
        mode: Option<String>,
        /// Target row; defaults to the last row.
        #[arg(long)]
        row: Option<usize>,
    },
    /// Read prompts from stdin and answer them with function calling.
    Chat {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        registry: Option<PathBuf>,
        /// Directory file arguments in prompts resolve against.
        #[arg(long)]
        root: Option<PathBuf>,
    },
    /// Task-weight grid: fine-tune per weight and seed, report MAE and HP.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        base: Option<PathBuf>,
        /// Comma-separated weights in (0, 1).
        #[arg(long)]
        w: Option<String>,
        /// Number of seeds per weight.
        #[arg(long)]
        seeds: Option<usize>,
    },
    /// Repeated sampled inference and one-way ANOVA over run groups.
    Anova {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Greedy forecasts on the test split against the persistence baseline.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::UnknownScenario(_) | Error::Spec(_) | Error::Range { .. } | Error::Rank { .. } => 2,
        Error::Divergence { .. } => 3,
        Error::Io { .. } | Error::Csv(_) | Error::Checkpoint(_) | Error::Schema(_) => 4,
        _ => 1,
    }
}

fn resolve(common: &Common, command: &str, apply: impl FnOnce(&mut RunConfig) -> Result<()>) -> Result<RunConfig> {
    let (mut cfg, file_seed) = match &common.config {
        Some(p) => {
            let ini = Ini::load(p)?;
            (RunConfig::from_ini(&ini)?, ini.get("run", "seed").is_some())
        }
        None => (RunConfig::default(), false),
    };
    if !file_seed {
        if let Ok(v) = std::env::var(SEED_ENV) {
            cfg.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}=`{v}` is not an integer")))?;
        }
    }
    if let Some(s) = &common.scenario {
        cfg.scenario = s.parse()?;
        cfg.model.channels = cfg.scenario.channels();
    }
    for s in &common.sets {
        cfg.set_dotted(s)?;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    apply(&mut cfg)?;
    cfg.command = command.to_string();
    cfg.train.seed = cfg.seed;
    cfg.validate()?;
    Ok(cfg)
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn need<'p>(p: &'p Option<PathBuf>, what: &str) -> Result<&'p Path> {
    p.as_deref()
        .ok_or_else(|| Error::Config(format!("missing --{what} (or [paths] {what})")))
}

/// Artifacts go to a staging directory that replaces `out` only on success.
struct Staging {
    dir: PathBuf,
    out: PathBuf,
}

impl Staging {
    fn new(out: &Path) -> Result<Self> {
        let name = out
            .file_name()
            .ok_or_else(|| Error::Config(format!("bad output directory {}", out.display())))?;
        let dir = out.with_file_name(format!(".{}.partial", name.to_string_lossy()));
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Staging {
            dir,
            out: out.to_path_buf(),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn commit(self) -> Result<()> {
        if self.out.exists() {
            fs::remove_dir_all(&self.out).map_err(|e| Error::io(&self.out, e))?;
        }
        fs::rename(&self.dir, &self.out).map_err(|e| Error::io(&self.out, e))
    }

    fn abandon(self) {
        let _ = fs::remove_dir_all(&self.dir);
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn load_data(cfg: &RunConfig) -> Result<Dataset> {
    let ds = Dataset::load(need(&cfg.paths.data, "data")?)?;
    if ds.meta.scenario != cfg.scenario {
        return Err(Error::Config(format!(
            "data is {} but the run is configured for {}",
            ds.meta.scenario, cfg.scenario
        )));
    }
    Ok(ds)
}

fn load_checkpoint(p: &Path) -> Result<Checkpoint> {
    Checkpoint::load(p)
}

fn floats(v: &[f32]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

fn parse_floats(s: &str) -> Result<Vec<f32>> {
    s.split_whitespace()
        .map(|t| t.parse().map_err(|_| Error::Checkpoint(format!("bad number `{t}` in [norm]"))))
        .collect()
}

/// Normalization stored with a fine-tuned checkpoint, else fitted on `ds`.
fn normalization(meta: &Ini, ds: &Dataset) -> Result<NormalizationParams> {
    match (meta.get("norm", "mean"), meta.get("norm", "std")) {
        (Some(m), Some(s)) => Ok(NormalizationParams {
            mean: parse_floats(m)?,
            std: parse_floats(s)?,
        }),
        _ => NormalizationParams::fit_lenient(&ds.matrix(0..ds.len())?),
    }
}

fn task_meta(norm: &NormalizationParams, ds: &Dataset) -> Ini {
    let mut meta = Ini::new();
    meta.set("task", "scenario", ds.meta.scenario.name());
    meta.set("task", "capacity", ds.meta.capacity.to_string());
    meta.set("task", "bins", ds.meta.bins.to_string());
    meta.set("norm", "mean", floats(&norm.mean));
    meta.set("norm", "std", floats(&norm.std));
    meta
}

fn scheme_for(ds: &Dataset) -> Result<BinningScheme> {
    BinningScheme::new(ds.meta.capacity, ds.meta.bins)
}

/// Train and test windows of a chronological split.
fn split_windows(
    cfg: &RunConfig,
    ds: &Dataset,
    norm: &NormalizationParams,
) -> Result<(Vec<WindowSample>, Vec<WindowSample>)> {
    let (train, test) = split(
        ds,
        SplitPolicy::Chronological {
            train_fraction: cfg.data.train_fraction,
        },
    )?;
    let scheme = scheme_for(ds)?;
    let w = cfg.model.window;
    Ok((
        windows(&train, w, cfg.data.horizon, &scheme, norm)?,
        windows(&test, w, cfg.data.horizon, &scheme, norm)?,
    ))
}

fn save_model(stage: &Staging, model: Model, vocab: efllm::text::Vocabulary, meta: Ini) -> Result<()> {
    Checkpoint { model, vocab, meta }.save(&stage.path("checkpoint"))
}

fn save_curve(stage: &Staging, curve: &LossCurve) -> Result<()> {
    curve.save(&stage.path("loss.csv"))
}

fn cmd_gen_data(cfg: &RunConfig, stage: &Staging) -> Result<()> {
    let mut spec = ScenarioSpec::new(cfg.scenario, cfg.data.days, cfg.seed);
    spec.capacity = cfg.capacity();
    let (mut ds, events) = generate_with_events(&spec)?;
    ds.meta.bins = cfg.data.bins;
    ds.save(&stage.dir)?;
    let mut w = csv::Writer::from_writer(create(&stage.path("events.csv"))?);
    w.write_record(["row", "timestamp", "phrase", "target", "baseline"])?;
    for e in &events {
        w.write_record([
            e.row.to_string(),
            ds.rows[e.row].timestamp.format(efllm::data::TIMESTAMP_FORMAT).to_string(),
            e.phrase.clone(),
            efllm::data::fmt_num(e.target),
            efllm::data::fmt_num(e.baseline),
        ])?;
    }
    w.flush().map_err(|e| Error::io("events.csv", e))?;
    println!("{} rows, {} planted events", ds.len(), events.len());
    Ok(())
}

fn cmd_pretrain(cfg: &RunConfig, stage: &Staging) -> Result<()> {
    let vocab = build_vocab(&[], cfg.seed)?;
    let p = &cfg.pretrain;
    let examples = base_examples(&cfg.model, p.examples, p.numeric_share, cfg.seed);
    let tc = efllm::trainer::TrainConfig {
        lr: p.lr,
        epochs: p.epochs,
        batch_size: p.batch_size,
        ..cfg.train.clone()
    };
    let (model, curve) = pretrain(&cfg.model, &vocab, &examples, &tc)?;
    println!("vocabulary {} tokens, final epoch loss {:?}", vocab.len(), curve.epoch_means.last());
    save_curve(stage, &curve)?;
    save_model(stage, model, vocab, Ini::new())
}

fn cmd_train(cfg: &RunConfig, stage: &Staging) -> Result<()> {
    let ds = load_data(cfg)?;
    let base = load_checkpoint(need(&cfg.paths.base, "base")?)?;
    let norm = NormalizationParams::fit_lenient(&ds.matrix(0..ds.len())?)?;
    let (train, _) = split_windows(cfg, &ds, &norm)?;
    let train = thin(&train, cfg.data.stride);
    let data = forecast_corpus(cfg.scenario, ds.meta.capacity, &train, cfg.train.weight, cfg.data.text_ratio);
    let (model, curve) = fpeft(&base.model, &encode_all(&data, &base.vocab)?, &cfg.train, cfg.model.lora_rank)?;
    println!("{} examples, epoch losses {:?}", data.len(), curve.epoch_means);
    save_curve(stage, &curve)?;
    save_model(stage, model, base.vocab, task_meta(&norm, &ds))
}

fn cmd_continual(cfg: &RunConfig, stage: &Staging) -> Result<()> {
    let ds = load_data(cfg)?;
    let ck = load_checkpoint(need(&cfg.paths.model, "model")?)?;
    let norm = normalization(&ck.meta, &ds)?;
    let (train, _) = split_windows(cfg, &ds, &norm)?;
    let train = thin(&train, cfg.data.stride);
    let data = forecast_corpus(cfg.scenario, ds.meta.capacity, &train, cfg.train.weight, cfg.data.text_ratio);
    let before: Vec<(String, String)> = ck
        .model
        .named_tensors()
        .into_iter()
        .map(|(n, t)| (n, tensor_digest(t)))
        .collect();
    let opts = ContinualConfig {
        rank: cfg.continual.rank,
        seed: cfg.seed ^ 0xC0,
        prefix: cfg.continual.prefix,
    };
    let (model, curve) = continual_update(&ck.model, &encode_all(&data, &ck.vocab)?, &cfg.train, opts)?;
    let mut w = csv::Writer::from_writer(create(&stage.path("digests.csv"))?);
    w.write_record(["tensor", "before", "after"])?;
    let after = model.named_tensors();
    for (name, d) in &before {
        let now = after
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| tensor_digest(t))
            .unwrap_or_default();
        w.write_record([name, d, &now])?;
    }
    w.flush().map_err(|e| Error::io("digests.csv", e))?;
    println!("adapters {}, epoch losses {:?}", model.stack.len(), curve.epoch_means);
    save_curve(stage, &curve)?;
    save_model(stage, model, ck.vocab, ck.meta)
}

fn forecaster<'a>(cfg: &RunConfig, ck: &'a Checkpoint) -> Forecaster<'a> {
    let mut f = Forecaster::new(&ck.model, &ck.vocab);
    f.max_new = cfg.decode.max_new;
    f
}

fn response_record(mode: &str, s: &WindowSample, step: usize, r: &ForecastResponse) -> [String; 7] {
    [
        mode.to_string(),
        s.timestamp.format(efllm::data::TIMESTAMP_FORMAT).to_string(),
        format_value(s.target),
        step.to_string(),
        r.class.map(|c| c.to_string()).unwrap_or_default(),
        r.value.map(format_value).unwrap_or_default(),
        r.raw.clone(),
    ]
}

fn cmd_infer(cfg: &RunConfig, stage: &Staging) -> Result<()> {
    let ds = load_data(cfg)?;
    let ck = load_checkpoint(need(&cfg.paths.model, "model")?)?;
    let norm = normalization(&ck.meta, &ds)?;
    let all = windows(&ds, cfg.model.window, cfg.data.horizon, &scheme_for(&ds)?, &norm)?;
    let row = cfg.infer.row.unwrap_or(ds.len() - 1);
    let s = all.iter().find(|s| s.row == row).ok_or(Error::Index {
        index: row,
        limit: ds.len(),
        context: "infer row (needs a full window before it)",
    })?;
    let f = forecaster(cfg, &ck);
    let prompt = step1_prompt(cfg.scenario.name(), s.hour);
    let mut w = csv::Writer::from_writer(create(&stage.path("infer.csv"))?);
    w.write_record(["mode", "timestamp", "true", "step", "pred_class", "pred_reg", "raw"])?;
    match cfg.infer.mode {
        InferMode::Single => {
            let r = f.predict(Some(&s.window), &prompt, Decode::Greedy, 0)?;
            println!("{}", r.raw);
            w.write_record(response_record("single", s, 1, &r))?;
        }
        InferMode::Averaged => {
            let samples = f.samples(Some(&s.window), &prompt, cfg.decode.samples, cfg.decode.temperature, cfg.seed)?;
            for (i, r) in samples.iter().enumerate() {
                w.write_record(response_record("sample", s, i + 1, r))?;
            }
            let avg = efllm::forecast::aggregate(&samples)?;
            let r = ForecastResponse {
                class: Some(avg.class),
                value: Some(avg.value),
                unit: None,
                raw: format!("{} of {} samples conforming", avg.used, samples.len()),
            };
            println!("interval: {} ; value: {} ({})", avg.class, format_value(avg.value), r.raw);
            w.write_record(response_record("averaged", s, 0, &r))?;
        }
        InferMode::Cot => {
            let (a, b) = f.cot_infer(Some(&s.window), &prompt, &s.weather)?;
            println!("step 1: {}\nstep 2: {}", a.raw, b.raw);
            w.write_record(response_record("cot", s, 1, &a))?;
            w.write_record(response_record("cot", s, 2, &b))?;
        }
    }
    w.flush().map_err(|e| Error::io("infer.csv", e))
}

fn cmd_chat(cfg: &RunConfig, stage: &Staging) -> Result<()> {
    let ck = load_checkpoint(need(&cfg.paths.model, "model")?)?;
    let registry = match &cfg.paths.registry {
        Some(p) => Registry::load(p)?,
        None => Registry::builtin(),
    };
    let agent = Agent {
        forecaster: forecaster(cfg, &ck),
        registry: &registry,
        root: cfg.paths.root.clone().unwrap_or_else(|| PathBuf::from(".")),
    };
    let mut turns = Vec::new();
    let stdout = io::stdout();
    let mut out = stdout.lock();
    for line in io::stdin().lock().lines() {
        let line = line.map_err(|e| Error::io("stdin", e))?;
        let prompt = line.trim();
        if prompt.is_empty() {
            continue;
        }
        if prompt == "exit" || prompt == "quit" {
            break;
        }
        let turn = agent.respond(prompt)?;
        writeln!(out, "{}", turn.final_response).map_err(|e| Error::io("stdout", e))?;
        turns.push(turn);
    }
    write_transcript(&turns, create(&stage.path("transcript.tsv"))?)
}

fn cmd_sweep(cfg: &RunConfig, stage: &Staging) -> Result<()> {
    let ds = load_data(cfg)?;
    let base = load_checkpoint(need(&cfg.paths.base, "base")?)?;
    let norm = NormalizationParams::fit_lenient(&ds.matrix(0..ds.len())?)?;
    let (train, test) = split_windows(cfg, &ds, &norm)?;
    let s = &cfg.sweep;
    let train = thin(&train, (train.len() / s.train_windows).max(1));
    let test = thin(&test, (test.len() / s.test_windows).max(1));
    let scheme = scheme_for(&ds)?;
    let cc = CellConfig {
        train: cfg.train.clone(),
        rank: cfg.model.lora_rank,
        text_ratio: cfg.data.text_ratio,
    };
    let seeds: Vec<u64> = (0..s.seeds as u64).map(|i| cfg.seed.wrapping_add(i)).collect();
    let rows = sweep(&s.weights, &seeds, |w, seed| {
        sweep_cell(&base.model, &base.vocab, cfg.scenario, &scheme, &train, &test, &cc, w, seed)
    })?;
    for r in &rows {
        println!(
            "w {} mae_c {:.2} mae_r {:.2} hp_c {:.1}% hp_r {:.1}%{}",
            r.w,
            r.mae_c,
            r.mae_r,
            r.hp_c_pct,
            r.hp_r_pct,
            if r.flagged() { " (flagged)" } else { "" }
        );
    }
    write_sweep_csv(&rows, create(&stage.path("sweep.csv"))?)
}

fn cmd_anova(cfg: &RunConfig, stage: &Staging) -> Result<()> {
    let ds = load_data(cfg)?;
    let ck = load_checkpoint(need(&cfg.paths.model, "model")?)?;
    let norm = normalization(&ck.meta, &ds)?;
    let (_, test) = split_windows(cfg, &ds, &norm)?;
    let a = &cfg.anova;
    let picked = thin(&test, (test.len() / a.inputs).max(1));
    let inputs = stability_inputs(cfg.scenario, &picked[..a.inputs.min(picked.len())]);
    let sc = StabilityConfig {
        runs: a.runs,
        groups: a.groups,
        temperature: cfg.decode.temperature,
        seed: cfg.seed,
        max_excluded: a.max_excluded,
    };
    let (report, values) = stability_run(&forecaster(cfg, &ck), &inputs, &sc)?;
    println!("F {:.6} p {:.6} over {} conforming runs", report.f, report.p, report.n);
    let mut w = csv::Writer::from_writer(create(&stage.path("runs.csv"))?);
    w.write_record(["run", "group", "value"])?;
    let size = a.runs / a.groups;
    for (i, v) in values.iter().enumerate() {
        w.write_record([i.to_string(), (i / size).to_string(), v.map(format_value).unwrap_or_default()])?;
    }
    w.flush().map_err(|e| Error::io("runs.csv", e))?;
    write_anova_csv(&[(cfg.scenario.name().to_string(), report)], create(&stage.path("anova.csv"))?)
}

fn metrics_row(name: &str, m: &MetricsReport) -> [String; 4] {
    [
        name.to_string(),
        format!("{:.4}", m.mae),
        format!("{:.4}", m.rmse),
        m.count.to_string(),
    ]
}

fn cmd_eval(cfg: &RunConfig, stage: &Staging) -> Result<()> {
    let ds = load_data(cfg)?;
    let ck = load_checkpoint(need(&cfg.paths.model, "model")?)?;
    let norm = normalization(&ck.meta, &ds)?;
    let (_, test) = split_windows(cfg, &ds, &norm)?;
    let test = thin(&test, cfg.data.stride);
    let scheme = scheme_for(&ds)?;
    let e = evaluate(&ck.model, &ck.vocab, cfg.scenario, &test, &scheme)?;
    write_predictions_csv(&e.rows, create(&stage.path("predictions.csv"))?)?;
    let truth: Vec<f64> = test.iter().map(|s| s.target).collect();
    let pred: Vec<f64> = e.rows.iter().map(|r| point_forecast(&r.raw, &scheme)).collect();
    let last: Vec<f64> = test.iter().map(|s| s.last_target).collect();
    let model = metrics(&pred, &truth)?;
    let baseline = metrics(&last, &truth)?;
    let mut w = csv::Writer::from_writer(create(&stage.path("metrics.csv"))?);
    w.write_record(["method", "mae", "rmse", "count"])?;
    w.write_record(metrics_row("model", &model))?;
    w.write_record(metrics_row("persistence", &baseline))?;
    w.flush().map_err(|e| Error::io("metrics.csv", e))?;
    println!(
        "model mae {:.2} rmse {:.2}; persistence mae {:.2} rmse {:.2}; conforming {:.1}%",
        model.mae, model.rmse, baseline.mae, baseline.rmse, e.conforming_pct
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let (common, cfg) = match &cli.command {
        Command::GenData { common, days, capacity } => (
            common,
            resolve(common, "gen-data", |c| {
                set(&mut c.data.days, *days);
                if capacity.is_some() {
                    c.data.capacity = *capacity;
                }
                Ok(())
            })?,
        ),
        Command::Pretrain {
            common,
            examples,
            epochs,
        } => (
            common,
            resolve(common, "pretrain", |c| {
                set(&mut c.pretrain.examples, *examples);
                set(&mut c.pretrain.epochs, *epochs);
                Ok(())
            })?,
        ),
        Command::Train {
            common,
            data,
            base,
            epochs,
            lr,
            weight,
        } => (
            common,
            resolve(common, "train", |c| {
                set(&mut c.paths.data, data.clone().map(Some));
                set(&mut c.paths.base, base.clone().map(Some));
                set(&mut c.train.epochs, *epochs);
                set(&mut c.train.lr, *lr);
                set(&mut c.train.weight, *weight);
                Ok(())
            })?,
        ),
        Command::Continual {
            common,
            data,
            model,
            rank,
        } => (
            common,
            resolve(common, "continual", |c| {
                set(&mut c.paths.data, data.clone().map(Some));
                set(&mut c.paths.model, model.clone().map(Some));
                set(&mut c.continual.rank, *rank);
                Ok(())
            })?,
        ),
        Command::Infer {
            common, data, model, ..
        }
        | Command::Anova {
            common, data, model, ..
        }
        | Command::Eval { common, data, model } => {
            let name = match &cli.command {
                Command::Infer { .. } => "infer",
                Command::Anova { .. } => "anova",
                _ => "eval",
            };
            let runs = match &cli.command {
                Command::Anova { runs, .. } => *runs,
                _ => None,
            };
            let (mode, row) = match &cli.command {
                Command::Infer { mode, row, .. } => (mode.clone(), *row),
                _ => (None, None),
            };
            (
                common,
                resolve(common, name, |c| {
                    set(&mut c.paths.data, data.clone().map(Some));
                    set(&mut c.paths.model, model.clone().map(Some));
                    set(&mut c.anova.runs, runs);
                    if let Some(m) = &mode {
                        c.infer.mode = m.parse()?;
                    }
                    if row.is_some() {
                        c.infer.row = row;
                    }
                    Ok(())
                })?,
            )
        }
        Command::Chat {
            common,
            model,
            registry,
            root,
        } => (
            common,
            resolve(common, "chat", |c| {
                set(&mut c.paths.model, model.clone().map(Some));
                set(&mut c.paths.registry, registry.clone().map(Some));
                set(&mut c.paths.root, root.clone().map(Some));
                Ok(())
            })?,
        ),
        Command::Sweep {
            common,
            data,
            base,
            w,
            seeds,
        } => (
            common,
            resolve(common, "sweep", |c| {
                set(&mut c.paths.data, data.clone().map(Some));
                set(&mut c.paths.base, base.clone().map(Some));
                if let Some(w) = w {
                    c.set("sweep", "weights", w)?;
                }
                set(&mut c.sweep.seeds, *seeds);
                Ok(())
            })?,
        ),
    };
    let stage = Staging::new(&common.out)?;
    let result = cfg.to_ini().save(&stage.path("config.ini")).and_then(|_| match &cli.command {
        Command::GenData { .. } => cmd_gen_data(&cfg, &stage),
        Command::Pretrain { .. } => cmd_pretrain(&cfg, &stage),
        Command::Train { .. } => cmd_train(&cfg, &stage),
        Command::Continual { .. } => cmd_continual(&cfg, &stage),
        Command::Infer { .. } => cmd_infer(&cfg, &stage),
        Command::Chat { .. } => cmd_chat(&cfg, &stage),
        Command::Sweep { .. } => cmd_sweep(&cfg, &stage),
        Command::Anova { .. } => cmd_anova(&cfg, &stage),
        Command::Eval { .. } => cmd_eval(&cfg, &stage),
    });
    match result {
        Ok(()) => stage.commit(),
        Err(e) => {
            stage.abandon();
            Err(e)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
