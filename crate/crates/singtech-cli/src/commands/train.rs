use std::fs;
use std::io::Write as _;
use std::marker::PhantomData;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use singtech::audio::{read_spec_cache, NormStats, StatsAccum};
use singtech::checkpoint::save_model;
use singtech::data::{class_frequencies, index_dataset};
use singtech::eval::compute_metrics;
use singtech::model::{build_model, DCPlacement, Model, ModelConfig};
use singtech::train::{train, MemorySamples, SampleSource, Strategy, TrainPlan};
use singtech::{Scalar, Tensor};

use crate::config::FileConfig;

#[derive(Args)]
pub struct TrainArgs {
    /// Corpus root (WAV tree) — or, with --features, any path used only for
    /// bookkeeping.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Split file listing training singer ids, one per line; singers absent
    /// from it form the test set. Without it, everything trains.
    #[arg(long)]
    split: Option<PathBuf>,
    /// Run directory for config snapshot, logs, checkpoints, and the report.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Spectrogram cache directory produced by `singtech features`.
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    placement: Option<String>,
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    bits: Option<u32>,
    #[arg(long)]
    threads: Option<usize>,
    /// Channel divisor for reduced desk-scale models (1 = published scale).
    #[arg(long)]
    channel_div: Option<usize>,
    /// Optional key=value config file; explicit flags win.
    #[arg(long)]
    config: Option<PathBuf>,
}

pub struct Resolved {
    pub data: PathBuf,
    pub split: Option<PathBuf>,
    pub out: PathBuf,
    pub features: Option<PathBuf>,
    pub placement: DCPlacement,
    pub strategy: Strategy,
    pub alpha: f64,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    pub bits: u32,
    pub threads: usize,
    pub channel_div: usize,
}

impl Resolved {
    fn snapshot(&self) -> serde_json::Value {
        serde_json::json!({
            "command": "train",
            "data": self.data,
            "split": self.split,
            "out": self.out,
            "features": self.features,
            "placement": self.placement.name(),
            "strategy": self.strategy.name(),
            "alpha": self.alpha,
            "epochs": self.epochs,
            "batch": self.batch,
            "lr": self.lr,
            "seed": self.seed,
            "bits": self.bits,
            "threads": self.threads,
            "channel_div": self.channel_div,
        })
    }
}

fn resolve(args: &TrainArgs) -> Result<Resolved> {
    let cfg = FileConfig::load(args.config.as_deref())?;
    let data = cfg
        .resolve_opt(args.data.clone(), "data")?
        .ok_or_else(|| anyhow::anyhow!("--data is required (or 'data' in the config file)"))?;
    let out = cfg
        .resolve_opt(args.out.clone(), "out")?
        .ok_or_else(|| anyhow::anyhow!("--out is required (or 'out' in the config file)"))?;
    let placement = DCPlacement::parse(&cfg.resolve(args.placement.clone(), "placement", "none".into())?)?;
    let strategy = Strategy::parse(&cfg.resolve(args.strategy.clone(), "strategy", "joint".into())?)?;
    let bits = cfg.resolve(args.bits, "bits", 32)?;
    if bits != 32 && bits != 64 {
        bail!("--bits must be 32 or 64");
    }
    Ok(Resolved {
        data,
        split: cfg.resolve_opt(args.split.clone(), "split")?,
        out,
        features: cfg.resolve_opt(args.features.clone(), "features")?,
        placement,
        strategy,
        alpha: cfg.resolve(args.alpha, "alpha", 0.0)?,
        epochs: cfg.resolve(args.epochs, "epochs", 200)?,
        batch: cfg.resolve(args.batch, "batch", 64)?,
        lr: cfg.resolve(args.lr, "lr", 1e-4)?,
        seed: cfg.resolve(args.seed, "seed", 0)?,
        bits,
        threads: cfg.resolve(args.threads, "threads", 0)?,
        channel_div: cfg.resolve(args.channel_div, "channel_div", 1)?,
    })
}

/// Clip samples backed by on-disk spectrogram caches.
struct CacheSamples<T> {
    files: Vec<PathBuf>,
    labels: Vec<usize>,
    stats: NormStats,
    num_classes: usize,
    _marker: PhantomData<T>,
}

impl<T: Scalar> SampleSource<T> for CacheSamples<T> {
    fn len(&self) -> usize {
        self.files.len()
    }
    fn num_classes(&self) -> usize {
        self.num_classes
    }
    fn label(&self, i: usize) -> usize {
        self.labels[i]
    }
    fn input(&self, i: usize) -> singtech::Result<Tensor<T>> {
        let mut stack = read_spec_cache(&self.files[i])?;
        self.stats.apply(&mut stack);
        Ok(stack.cast())
    }
}

struct CacheManifestRow {
    cache: PathBuf,
    singer: String,
    class: usize,
}

fn read_cache_manifest(dir: &Path) -> Result<Vec<CacheManifestRow>> {
    let path = dir.join("features.jsonl");
    let text =
        fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let mut rows = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let v: serde_json::Value = serde_json::from_str(line)?;
        rows.push(CacheManifestRow {
            cache: PathBuf::from(v["cache"].as_str().context("cache field")?),
            singer: v["singer"].as_str().context("singer field")?.to_string(),
            class: v["class"].as_u64().context("class field")? as usize,
        });
    }
    Ok(rows)
}

pub fn run(args: TrainArgs) -> Result<i32> {
    let resolved = resolve(&args)?;
    if resolved.threads > 0 {
        super::setup_threads(Some(resolved.threads))?;
    }
    super::ensure_dir(&resolved.out)?;
    super::write_json(&resolved.out.join("config.json"), &resolved.snapshot())?;
    if resolved.bits == 64 {
        run_typed::<f64>(&resolved)
    } else {
        run_typed::<f32>(&resolved)
    }
}

fn run_typed<T: Scalar>(r: &Resolved) -> Result<i32> {
    let num_classes = singtech::data::TECHNIQUES.len();

    // Assemble training samples and per-class clip counts, plus the held-out
    // test stacks when a split file is given.
    let (train_source, counts, test_data): (Box<dyn SampleSource<T>>, Vec<u64>, Option<MemorySamples<T>>);
    let stats;
    if let Some(features_dir) = &r.features {
        let rows = read_cache_manifest(features_dir)?;
        let train_singers = r.split.as_deref().map(singtech::data::read_split_file).transpose()?;
        let in_train = |row: &CacheManifestRow| match &train_singers {
            Some(set) => set.contains(&row.singer),
            None => true,
        };
        let mut files = Vec::new();
        let mut labels = Vec::new();
        let mut test_files = Vec::new();
        let mut test_labels = Vec::new();
        for row in &rows {
            if in_train(row) {
                files.push(row.cache.clone());
                labels.push(row.class);
            } else {
                test_files.push(row.cache.clone());
                test_labels.push(row.class);
            }
        }
        if files.is_empty() {
            bail!(singtech::Error::Data("no training clips in cache manifest".into()));
        }
        let mut acc = StatsAccum::new();
        for f in &files {
            acc.add(&read_spec_cache(f)?)?;
        }
        stats = acc.finish()?;
        let mut counts_v = vec![0u64; num_classes];
        for l in &labels {
            counts_v[*l] += 1;
        }
        let test = if test_files.is_empty() {
            None
        } else {
            let mut inputs = Vec::new();
            for f in &test_files {
                let mut s = read_spec_cache(f)?;
                stats.apply(&mut s);
                inputs.push(s.cast::<T>());
            }
            Some(MemorySamples { inputs, labels: test_labels, num_classes })
        };
        train_source = Box::new(CacheSamples::<T> {
            files,
            labels,
            stats: stats.clone(),
            num_classes,
            _marker: PhantomData,
        });
        counts = counts_v;
        test_data = test;
    } else {
        let index = index_dataset(&r.data, r.split.as_deref())?;
        super::warn_skipped(&index.skipped);
        let counts_v = class_frequencies(&index, &index.train, true)?;
        let (mut stacks, labels) = super::clip_stacks(&index, &index.train)?;
        if stacks.is_empty() {
            bail!(singtech::Error::Data("no training clips after segmentation".into()));
        }
        stats = NormStats::compute(stacks.iter())?;
        for s in stacks.iter_mut() {
            stats.apply(s);
        }
        let inputs: Vec<Tensor<T>> = stacks.iter().map(|s| s.cast::<T>()).collect();
        drop(stacks);
        let test = if index.test.is_empty() {
            None
        } else {
            let (mut tstacks, tlabels) = super::clip_stacks(&index, &index.test)?;
            for s in tstacks.iter_mut() {
                stats.apply(s);
            }
            Some(MemorySamples {
                inputs: tstacks.iter().map(|s| s.cast::<T>()).collect(),
                labels: tlabels,
                num_classes,
            })
        };
        train_source = Box::new(MemorySamples { inputs, labels, num_classes });
        counts = counts_v;
        test_data = test;
    }

    let clip_total: u64 = counts.iter().sum();
    println!("training clips: {clip_total}, per-class counts: {counts:?}");

    let config = ModelConfig {
        placement: r.placement,
        channel_div: r.channel_div,
        ..ModelConfig::paper(r.placement)
    };
    let mut model = build_model::<T>(&config, r.seed);
    model.norm_stats = Some(stats.clone());

    let mut plan = TrainPlan::with_epochs(r.strategy, r.epochs, r.alpha, r.seed);
    plan.batch_size = r.batch;
    plan.lr = r.lr;

    let log_path = r.out.join("train_log.jsonl");
    let mut log = fs::File::create(&log_path)
        .with_context(|| format!("creating {}", log_path.display()))?;
    let phase1_ckpt = r.out.join("checkpoint_phase1.ckpt");
    let phase_boundary = if r.strategy == Strategy::Joint { 0 } else { plan.phase1_epochs };

    let records = train(&mut model, train_source.as_ref(), &plan, &counts, &mut |m: &Model<T>, rec| {
        let line = serde_json::to_string(rec).expect("epoch record serializes");
        let _ = writeln!(log, "{line}");
        println!(
            "epoch {:>4} [{}] loss {:.4} train_acc {:.3}",
            rec.epoch, rec.phase, rec.loss, rec.train_acc
        );
        if phase_boundary > 0 && rec.epoch == phase_boundary {
            if let Err(e) = save_model(m, &phase1_ckpt) {
                eprintln!("warning: phase-1 checkpoint failed: {e}");
            }
        }
        true
    })?;

    let final_ckpt = r.out.join("checkpoint_final.ckpt");
    save_model(&model, &final_ckpt)?;

    // Final report: held-out test split when available, else the train set.
    let (scope, eval_data): (&str, &dyn SampleSource<T>) = match &test_data {
        Some(t) => ("test", t),
        None => ("train", train_source.as_ref()),
    };
    let report = evaluate_source(&model, eval_data, r.batch)?;
    let mut value = serde_json::to_value(&report)?;
    value["scope"] = serde_json::Value::String(scope.into());
    value["epochs_run"] = serde_json::Value::from(records.len());
    super::write_json(&r.out.join("report.json"), &value)?;
    println!(
        "{scope} metrics: macro-F1 {:.4} acc {:.4} b-acc {:.4} top2 {:.4} top3 {:.4}",
        report.macro_f1, report.accuracy, report.balanced_accuracy, report.top2, report.top3
    );
    println!("artifacts in {}", r.out.display());
    Ok(0)
}

/// Eval-mode forward over a sample source in batches, then the metrics.
pub fn evaluate_source<T: Scalar>(
    model: &Model<T>,
    data: &dyn SampleSource<T>,
    batch: usize,
) -> Result<singtech::eval::EvalReport> {
    let n = data.len();
    let classes = data.num_classes();
    let mut logits_all = Tensor::<T>::zeros(&[n, classes]);
    let mut labels = Vec::with_capacity(n);
    let indices: Vec<usize> = (0..n).collect();
    for chunk in indices.chunks(batch.max(1)) {
        let (batch_t, batch_labels) = singtech::train::assemble_batch(data, chunk)?;
        let logits = model.forward_eval(&batch_t)?;
        for (row, &i) in chunk.iter().enumerate() {
            let src = &logits.data()[row * classes..(row + 1) * classes];
            logits_all.data_mut()[i * classes..(i + 1) * classes].copy_from_slice(src);
            let _ = i;
        }
        labels.extend(batch_labels);
    }
    Ok(compute_metrics(&logits_all, &labels)?)
}
