//! The four subcommands. Every output file is written through a temp file
//! and rename, so failed runs leave nothing partial behind.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};

use mehpan_core::baseline::LogisticConfig;
use mehpan_core::data::{
    build_vocab, gather, generate_synthetic, read_records, split_ten_sets, write_records,
    SynthConfig, Vocab, Vocabs,
};
use mehpan_core::metrics::{format_comparison_table, MetricsReport};
use mehpan_core::model::{load_checkpoint, save_checkpoint, Architecture, MehpanModel, ModelConfig};
use mehpan_core::protocol::{evaluate_baselines, evaluate_protocol};
use mehpan_core::train::TrainConfig;
use mehpan_core::data::make_batch;
use mehpan_core::ReduceMode;

use crate::config::{pick, require, EvalSection, GenerateSection, PredictSection, TrainSection};
use crate::{EvalArgs, GenerateArgs, PredictArgs, TrainArgs};

/// Split parallelism cap for eval, from MEHPAN_THREADS (default 1).
fn threads_from_env() -> usize {
    std::env::var("MEHPAN_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}

fn atomic_write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)
            .with_context(|| format!("creating {}", tmp.display()))?;
        f.write_all(text.as_bytes())?;
        f.flush()?;
    }
    std::fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn parse_arch(s: &str) -> anyhow::Result<Architecture> {
    match s {
        "rnn" => Ok(Architecture::Rnn),
        "conv" => Ok(Architecture::Conv),
        other => bail!("unknown architecture {other:?}, expected rnn or conv"),
    }
}

fn parse_reduce(s: &str) -> anyhow::Result<ReduceMode> {
    match s {
        "sum" => Ok(ReduceMode::Sum),
        "wsum" => Ok(ReduceMode::WeightedSum),
        "last" => Ok(ReduceMode::LastStep),
        other => bail!("unknown reduction {other:?}, expected sum, wsum or last"),
    }
}

/// Resolves --arch/--reduce into a validated pair. A conv model without an
/// explicit reduction defaults to the weighted sum, with a notice.
fn resolve_arch(
    arch: Option<String>,
    reduce: Option<String>,
) -> anyhow::Result<(Architecture, Option<ReduceMode>)> {
    let arch = parse_arch(arch.as_deref().unwrap_or("rnn"))?;
    match (arch, reduce) {
        (Architecture::Rnn, Some(r)) => {
            bail!("--reduce {r} applies only to --arch conv")
        }
        (Architecture::Rnn, None) => Ok((arch, None)),
        (Architecture::Conv, Some(r)) => Ok((arch, Some(parse_reduce(&r)?))),
        (Architecture::Conv, None) => {
            eprintln!("notice: --reduce not given, defaulting to weighted sum (wsum)");
            Ok((arch, Some(ReduceMode::WeightedSum)))
        }
    }
}

// ── generate ────────────────────────────────────────────────────────

pub fn generate(args: GenerateArgs, file: &GenerateSection) -> anyhow::Result<()> {
    let defaults = SynthConfig::default();
    let cfg = SynthConfig {
        n_patients: pick(args.n, file.n, 1000),
        diag_vocab_size: pick(args.diag_vocab, file.diag_vocab, defaults.diag_vocab_size),
        med_vocab_size: pick(args.med_vocab, file.med_vocab, defaults.med_vocab_size),
        class_probs: defaults.class_probs,
        signal_strength: pick(args.signal, file.signal, defaults.signal_strength),
        min_diag_len: pick(args.min_diag_len, file.min_diag_len, defaults.min_diag_len),
        max_diag_len: pick(args.max_diag_len, file.max_diag_len, defaults.max_diag_len),
        max_med_len: pick(args.max_med_len, file.max_med_len, defaults.max_med_len),
        seed: pick(args.seed, file.seed, 0),
    };
    let out = require(args.out, file.out.clone().map(PathBuf::from), "out")?;
    let records = generate_synthetic(&cfg)?;
    write_records(&out, &records)?;
    let mut counts = [0usize; 3];
    for r in &records {
        counts[u8::from(r.label_multi) as usize] += 1;
    }
    println!(
        "wrote {} patients to {} (no disease {}, cardiovascular {}, cerebrovascular {})",
        records.len(),
        out.display(),
        counts[0],
        counts[1],
        counts[2]
    );
    Ok(())
}

// ── train ───────────────────────────────────────────────────────────

fn model_cfg_from(args: &TrainArgs, file: &TrainSection, arch: Architecture, reduce: Option<ReduceMode>, seed: u64) -> ModelConfig {
    let mut cfg = ModelConfig::defaults(arch);
    cfg.reduction = reduce;
    cfg.hidden = pick(args.hidden, file.hidden, cfg.hidden);
    cfg.aux_hidden = pick(args.aux_hidden, file.aux_hidden, cfg.aux_hidden);
    cfg.diag_code_embed = pick(args.diag_embed, file.diag_embed, cfg.diag_code_embed);
    cfg.med_code_embed = pick(args.med_embed, file.med_embed, cfg.med_code_embed);
    cfg.attn_hidden = pick(args.attn_hidden, file.attn_hidden, cfg.attn_hidden);
    cfg.dense1 = pick(args.dense1, file.dense1, cfg.dense1);
    cfg.dense2 = pick(args.dense2, file.dense2, cfg.dense2);
    cfg.conv_width = pick(args.conv_width, file.conv_width, cfg.conv_width);
    cfg.conv_layers = pick(args.conv_layers, file.conv_layers, cfg.conv_layers);
    cfg.max_diag_len = pick(args.max_diag_len, file.max_diag_len, cfg.max_diag_len);
    cfg.max_med_len = pick(args.max_med_len, file.max_med_len, cfg.max_med_len);
    cfg.seed = seed;
    cfg
}

pub fn train(args: TrainArgs, file: &TrainSection) -> anyhow::Result<()> {
    let data_path = require(args.data.clone(), file.data.clone().map(PathBuf::from), "data")?;
    let out = require(args.out.clone(), file.out.clone().map(PathBuf::from), "out")?;
    let seed = pick(args.seed, file.seed, 0);
    let (arch, reduce) = resolve_arch(
        args.arch.clone().or(file.arch.clone()),
        args.reduce.clone().or(file.reduce.clone()),
    )?;
    let train_cfg = TrainConfig {
        epochs: pick(args.epochs, file.epochs, 10),
        batch_size: pick(args.batch_size, file.batch_size, 64),
        learning_rate: pick(args.learning_rate, file.learning_rate, 1e-3),
        seed,
    };
    let model_cfg = model_cfg_from(&args, file, arch, reduce, seed);

    let records = read_records(&data_path)?;
    let splits = split_ten_sets(&records, seed)?;
    let train_set: Vec<_> = splits[0].train.iter().map(|&i| records[i].clone()).collect();
    println!(
        "training {} on {} patients ({} held out)",
        arch.as_str(),
        train_set.len(),
        splits[0].test.len()
    );

    let vocabs = build_vocab(&train_set)?;
    let mut model = MehpanModel::new(model_cfg.for_vocabs(&vocabs))?;
    let log = mehpan_core::train::train(&mut model, &train_set, &vocabs, &train_cfg)?;
    for e in &log.epochs {
        println!("epoch {}: mean loss {:.4} ({:.1}s)", e.epoch, e.mean_loss, e.wall_seconds);
    }

    save_checkpoint(&model, &out)?;
    vocabs.diag.write_tsv(vocab_path(&out, "diag"))?;
    vocabs.med.write_tsv(vocab_path(&out, "med"))?;
    atomic_write_text(&log_path(&out), &log.to_jsonl())?;
    println!("checkpoint written to {}", out.display());
    Ok(())
}

fn vocab_path(ckpt: &Path, which: &str) -> PathBuf {
    PathBuf::from(format!("{}.{which}-vocab.tsv", ckpt.display()))
}

fn log_path(ckpt: &Path) -> PathBuf {
    PathBuf::from(format!("{}.log.jsonl", ckpt.display()))
}

// ── eval ────────────────────────────────────────────────────────────

fn parse_model_spec(spec: &str) -> anyhow::Result<ModelConfig> {
    let (arch, reduce) = match spec {
        "rnn" => (Architecture::Rnn, None),
        "conv" => {
            eprintln!("notice: model spec 'conv' without a reduction defaults to wsum");
            (Architecture::Conv, Some(ReduceMode::WeightedSum))
        }
        other => match other.split_once(':') {
            Some(("conv", r)) => (Architecture::Conv, Some(parse_reduce(r)?)),
            _ => bail!("unknown model spec {other:?}, expected rnn, conv, or conv:<sum|wsum|last>"),
        },
    };
    let mut cfg = ModelConfig::defaults(arch);
    cfg.reduction = reduce;
    Ok(cfg)
}

pub fn eval(args: EvalArgs, file: &EvalSection) -> anyhow::Result<()> {
    let data_path = require(args.data.clone(), file.data.clone().map(PathBuf::from), "data")?;
    let out = require(args.out.clone(), file.out.clone().map(PathBuf::from), "out")?;
    let seed = pick(args.seed, file.seed, 0);
    let specs = if !args.models.is_empty() {
        args.models.clone()
    } else {
        file.models
            .clone()
            .unwrap_or_else(|| vec!["rnn".to_string(), "conv:wsum".to_string()])
    };
    let train_cfg = TrainConfig {
        epochs: pick(args.epochs, file.epochs, 10),
        batch_size: pick(args.batch_size, file.batch_size, 64),
        learning_rate: pick(args.learning_rate, file.learning_rate, 1e-3),
        seed,
    };
    let threads = threads_from_env();

    let records = read_records(&data_path)?;
    let mut reports: Vec<MetricsReport> = Vec::new();
    for spec in &specs {
        let mut cfg = parse_model_spec(spec)?;
        cfg.hidden = pick(args.hidden, file.hidden, cfg.hidden);
        cfg.max_diag_len = pick(args.max_diag_len, file.max_diag_len, cfg.max_diag_len);
        cfg.max_med_len = pick(args.max_med_len, file.max_med_len, cfg.max_med_len);
        cfg.seed = seed;
        println!("evaluating {spec} over 10 splits ({threads} thread(s))");
        reports.push(evaluate_protocol(&cfg, &train_cfg, &records, seed, threads)?);
    }
    let (majority, logistic) =
        evaluate_baselines(&records, seed, &LogisticConfig { seed, ..LogisticConfig::default() })?;
    reports.push(majority);
    reports.push(logistic);

    for report in &reports {
        let path = PathBuf::from(format!(
            "{}.{}.report.jsonl",
            out.display(),
            report.model.replace(':', "-")
        ));
        atomic_write_text(&path, &report.to_jsonl())?;
    }
    let refs: Vec<&MetricsReport> = reports.iter().collect();
    let table = format_comparison_table(&refs);
    atomic_write_text(&PathBuf::from(format!("{}.table.txt", out.display())), &table)?;
    print!("{table}");
    Ok(())
}

// ── predict ─────────────────────────────────────────────────────────

pub fn predict(args: PredictArgs, file: &PredictSection) -> anyhow::Result<()> {
    let ckpt = require(
        args.checkpoint.clone(),
        file.checkpoint.clone().map(PathBuf::from),
        "checkpoint",
    )?;
    let data_path = require(args.data.clone(), file.data.clone().map(PathBuf::from), "data")?;
    let out = require(args.out.clone(), file.out.clone().map(PathBuf::from), "out")?;
    let diag_vocab_path = args
        .diag_vocab
        .or(file.diag_vocab.clone().map(PathBuf::from))
        .unwrap_or_else(|| vocab_path(&ckpt, "diag"));
    let med_vocab_path = args
        .med_vocab
        .or(file.med_vocab.clone().map(PathBuf::from))
        .unwrap_or_else(|| vocab_path(&ckpt, "med"));

    let model = load_checkpoint(&ckpt)?;
    let vocabs = Vocabs {
        diag: Vocab::read_tsv(&diag_vocab_path)?,
        med: Vocab::read_tsv(&med_vocab_path)?,
    };
    if vocabs.diag.size() != model.cfg.diag_vocab || vocabs.med.size() != model.cfg.med_vocab {
        bail!(
            "vocabulary sizes ({}, {}) do not match the checkpoint config ({}, {})",
            vocabs.diag.size(),
            vocabs.med.size(),
            model.cfg.diag_vocab,
            model.cfg.med_vocab
        );
    }

    let records = read_records(&data_path)?;
    let mut lines = String::new();
    for chunk in records.chunks(256) {
        let refs = gather(chunk, &(0..chunk.len()).collect::<Vec<_>>());
        let batch = make_batch(&refs, &vocabs, model.cfg.max_diag_len, model.cfg.max_med_len)?;
        let (pb, pm) = model.predict(&batch)?;
        for (i, p) in chunk.iter().enumerate() {
            let row = serde_json::json!({
                "patient_id": p.patient_id,
                "p_binary": pb[i],
                "p_multi": pm[i],
            });
            lines.push_str(&row.to_string());
            lines.push('\n');
        }
    }
    atomic_write_text(&out, &lines)?;
    println!("scored {} patients to {}", records.len(), out.display());
    Ok(())
}
