use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;
use trian::checkpoint::{self, Vocabularies};
use trian::config::RunConfig;
use trian::corpus::{build_tag_vocabs, build_vocab, load_embeddings, top_k_tunable, LabelPolicy, QuestionGroup};
use trian::eval::{accuracy, average_probabilities, GroupPrediction};
use trian::featurize::Featurizer;
use trian::gradcheck::run_suite;
use trian::model::{Model, VocabSizes};
use trian::optim::{train, TrainData};
use trian::EngineRng;

use crate::args::{EnsembleArgs, EvalArgs, GradcheckArgs, PredictArgs, TrainArgs};
use crate::pipeline::{self, load_checkpoint, load_resources, read_groups};

pub const CONFIG_SNAPSHOT: &str = "config.toml";
pub const TRACE_FILE: &str = "trace.jsonl";
pub const CHECKPOINT_DIR: &str = "checkpoint";

#[derive(Serialize)]
struct PredictionLine<'a> {
    group_id: &'a str,
    chosen_example_id: &'a str,
    probabilities: &'a [f64],
}

fn write_predictions(preds: &[GroupPrediction], out: &mut dyn Write) -> Result<()> {
    for p in preds {
        let line = PredictionLine {
            group_id: &p.group_id,
            chosen_example_id: p.chosen_example_id(),
            probabilities: &p.probabilities,
        };
        serde_json::to_writer(&mut *out, &line)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn write_predictions_to(preds: &[GroupPrediction], path: Option<&Path>) -> Result<()> {
    match path {
        Some(path) => {
            let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
            write_predictions(preds, &mut BufWriter::new(file))
        }
        None => write_predictions(preds, &mut io::stdout().lock()),
    }
}

fn report_accuracy(preds: &[GroupPrediction]) {
    let scored = preds.iter().filter(|p| p.correct.is_some()).count();
    let right = preds.iter().filter(|p| p.is_correct() == Some(true)).count();
    match accuracy(preds) {
        Some(acc) => println!("accuracy {acc:.4} ({right}/{scored} groups)"),
        None => println!("accuracy n/a (no labeled groups)"),
    }
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let cfg = args.resolve()?;
    if !args.ensemble {
        return train_one(&cfg);
    }
    let members: Vec<RunConfig> = (0..cfg.ensemble.members)
        .map(|i| {
            let mut m = cfg.clone();
            m.train.seed = cfg.train.seed + i as u64;
            m.out_dir = cfg.out_dir.join(format!("member-{i}"));
            m
        })
        .collect();
    fs::create_dir_all(&cfg.out_dir).with_context(|| format!("creating {}", cfg.out_dir.display()))?;
    cfg.save(&cfg.out_dir.join(CONFIG_SNAPSHOT))?;
    members.par_iter().try_for_each(train_one)
}

fn train_one(cfg: &RunConfig) -> Result<()> {
    let seed = cfg.train.seed;
    let root = EngineRng::seed(seed);
    let Some(train_path) = &cfg.data.train else {
        bail!("no training data: pass --data or set data.train in the config");
    };
    let train_raw = read_groups(train_path, LabelPolicy::Required)?;
    let dev_raw = match &cfg.data.dev {
        Some(p) => read_groups(p, LabelPolicy::Required)?,
        None => Vec::new(),
    };
    let pretrain_raw = match &cfg.data.pretrain {
        Some(p) => Some(read_groups(p, LabelPolicy::Required)?),
        None => None,
    };

    let vocab_source: Vec<QuestionGroup> = pretrain_raw
        .iter()
        .flatten()
        .chain(&train_raw)
        .cloned()
        .collect();
    let words = build_vocab(&vocab_source, cfg.features.min_count);
    let (pos, ner) = build_tag_vocabs(&vocab_source);
    let resources = load_resources(&cfg.data, None)?;

    let mut model_cfg = cfg.model.clone();
    model_cfg.vocab = VocabSizes {
        words: words.len(),
        pos: pos.len(),
        ner: ner.len(),
        relations: resources.knowledge.num_relations(),
    };
    let table = match &cfg.data.embeddings {
        Some(path) => {
            pipeline::require_file(path, "embeddings")?;
            Some(load_embeddings(path, model_cfg.glove_dim, &words, &mut root.fork(pipeline::STREAM_EMBEDDINGS))?)
        }
        None => None,
    };
    let mut model = Model::<f32>::new(model_cfg, &mut root.fork(pipeline::STREAM_INIT), table.as_ref())?;
    log::info!(
        "vocabulary {} words, {} relations; {} parameters, d_in {}",
        words.len(),
        resources.knowledge.num_relations(),
        model.config().parameter_count(),
        model.config().input_dim()
    );

    let featurizer = Featurizer {
        words: &words,
        pos: &pos,
        ner: &ner,
        resources: &resources,
        symmetric_contexts: cfg.features.symmetric_contexts,
    };
    let mut frng = root.fork(pipeline::STREAM_FEATURIZE);
    let train_groups = featurizer.featurize(&train_raw, &mut frng);
    let dev_groups = featurizer.featurize(&dev_raw, &mut frng);
    let pretrain_groups = pretrain_raw.map(|p| featurizer.featurize(&p, &mut frng));
    let tunable = top_k_tunable(&words, cfg.train.tune_top_k);

    fs::create_dir_all(&cfg.out_dir).with_context(|| format!("creating {}", cfg.out_dir.display()))?;
    cfg.save(&cfg.out_dir.join(CONFIG_SNAPSHOT))?;
    let trace_path = cfg.out_dir.join(TRACE_FILE);
    let mut trace = BufWriter::new(
        File::create(&trace_path).with_context(|| format!("creating {}", trace_path.display()))?,
    );
    let mut trace_err = None;
    let outcome = train(
        &cfg.train,
        &mut model,
        TrainData {
            train: &train_groups,
            dev: &dev_groups,
            pretrain: pretrain_groups.as_deref(),
            tunable_rows: &tunable,
        },
        &mut root.fork(pipeline::STREAM_TRAIN),
        |record| {
            let res = serde_json::to_writer(&mut trace, record)
                .map_err(io::Error::from)
                .and_then(|_| trace.write_all(b"\n"));
            if let Err(e) = res {
                trace_err.get_or_insert(e);
            }
        },
    )?;
    if let Some(e) = trace_err {
        return Err(e).with_context(|| format!("writing {}", trace_path.display()));
    }
    trace.flush()?;

    let best = Model::from_params(model.config().clone(), outcome.best)?;
    let dir = cfg.out_dir.join(CHECKPOINT_DIR);
    checkpoint::save(&dir, &best, seed, serde_json::to_value(cfg)?)?;
    checkpoint::save_vocab(
        &dir,
        &Vocabularies {
            words,
            pos,
            ner,
            relations: resources.knowledge.relations().to_vec(),
        },
    )?;
    match (outcome.best_epoch, outcome.best_dev_accuracy) {
        (Some(e), Some(acc)) => println!("best dev accuracy {acc:.4} at epoch {e}; checkpoint {}", dir.display()),
        (Some(e), None) => println!("final epoch {e}; checkpoint {}", dir.display()),
        (None, _) => println!("no fine-tuning epochs; initialization checkpoint {}", dir.display()),
    }
    Ok(())
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let loaded = load_checkpoint(&args.checkpoint)?;
    let groups = read_groups(&args.data, LabelPolicy::Required)?;
    let preds = loaded.predict(&groups, &args.resources, args.batch_size)?;
    if let Some(out) = &args.output {
        write_predictions_to(&preds, Some(out))?;
    }
    report_accuracy(&preds);
    Ok(())
}

pub fn cmd_predict(args: &PredictArgs) -> Result<()> {
    let loaded = load_checkpoint(&args.checkpoint)?;
    let groups = read_groups(&args.data, LabelPolicy::Optional)?;
    let preds = loaded.predict(&groups, &args.resources, args.batch_size)?;
    write_predictions_to(&preds, args.output.as_deref())
}

pub fn cmd_ensemble(args: &EnsembleArgs) -> Result<()> {
    let groups = read_groups(&args.data, LabelPolicy::Optional)?;
    let loaded = args
        .checkpoints
        .iter()
        .map(|dir| load_checkpoint(dir))
        .collect::<Result<Vec<_>>>()?;
    let first = &loaded[0];
    for other in &loaded[1..] {
        if other.manifest.model != first.manifest.model {
            bail!(
                "ensemble members disagree on model config: {} vs {}",
                first.dir.display(),
                other.dir.display()
            );
        }
    }
    let members = loaded
        .par_iter()
        .map(|m| m.predict(&groups, &args.resources, args.batch_size))
        .collect::<Result<Vec<_>>>()?;
    let averaged = average_probabilities(&members)?;
    if let Some(out) = &args.output {
        write_predictions_to(&averaged, Some(out))?;
    }
    report_accuracy(&averaged);
    Ok(())
}

pub fn cmd_gradcheck(args: &GradcheckArgs) -> Result<()> {
    let suite = run_suite(args.seed)?;
    let mut failed = 0;
    for e in &suite {
        let ok = e.passes();
        failed += usize::from(!ok);
        println!(
            "{} {:<18} max rel error {:.3e} (tol {:.0e}, {} coords)",
            if ok { "PASS" } else { "FAIL" },
            e.name,
            e.report.max_rel_error,
            e.tolerance,
            e.report.coordinates
        );
    }
    if failed > 0 {
        bail!("{failed} gradient checks failed");
    }
    Ok(())
}
