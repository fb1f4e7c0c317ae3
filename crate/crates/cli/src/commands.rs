use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use sidepar_core::data::convert::{convert_annotations, Layout};
use sidepar_core::data::{generate_synthetic, load_manifest, synthetic_schema, Split, SynthConfig, TrackletDataset};
use sidepar_core::schema::AttributeSchema;
use sidepar_core::train::{
    ablation_table, compare_peft, compare_table, default_methods, evaluate, load_checkpoint, parameter_ablation,
    save_checkpoint, train, CheckpointInfo, Evaluation, Preset, RunConfig,
};
use sidepar_core::{Error, Model, PeftKind, PeftVariant, Result, Tuning};

use crate::{Command, ConfigArgs, ConvertArgs, CountArgs, EvalArgs, SynthArgs, TrainArgs};

pub const CHECKPOINT_DIR: &str = "ckpt";
const BUNDLED_SCHEMA: &str = include_str!("../../../assets/schemas/mars_reconstructed.json");

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::CountParams(a) => cmd_count(&a),
        Command::ComparePeft(a) => cmd_compare(&a),
        Command::SynthData(a) => cmd_synth(&a),
        Command::Explain(a) => crate::explain::run(&a),
        Command::ConvertManifest(a) => cmd_convert(&a),
    }
}

pub fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn create_out(out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))
}

fn load_run_config(path: Option<&Path>, default: Preset) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::preset(default)),
    }
}

fn resolve_run(args: &TrainArgs) -> Result<RunConfig> {
    let mut run = load_run_config(args.config.config.as_deref(), Preset::Toy)?;
    apply_data_flags(&mut run, &args.config);
    if let Some(t) = args.tuning {
        run.tuning = t;
    }
    if let Some(s) = args.steps {
        run.train.steps = Some(s);
    }
    if let Some(e) = args.epochs {
        run.train.epochs = e;
        if args.steps.is_none() {
            run.train.steps = None;
        }
    }
    if let Some(lr) = args.lr {
        run.train.lr = lr;
    }
    if let Some(b) = args.batch_size {
        run.train.batch_size = b;
    }
    if let Some(f) = args.frames {
        run.train.frames_per_sample = f;
    }
    if let Some(s) = args.seed {
        run.train.seed = s;
    }
    run.validate()?;
    Ok(run)
}

fn apply_data_flags(run: &mut RunConfig, flags: &ConfigArgs) {
    if let Some(m) = &flags.manifest {
        run.data.manifest = Some(m.clone());
    }
    if let Some(s) = &flags.schema {
        run.data.schema = Some(s.clone());
    }
}

/// Schema and dataset named by the run configuration.
pub fn load_data(run: &RunConfig) -> Result<(AttributeSchema, TrackletDataset)> {
    let manifest = run
        .data
        .manifest
        .as_ref()
        .ok_or_else(|| Error::Config("no manifest: pass --manifest or set data.manifest".into()))?;
    let schema_path = run.data.schema_path().expect("manifest is set");
    let schema = AttributeSchema::load(&schema_path)?;
    let tracklets = load_manifest(manifest, &schema)?;
    Ok((schema, TrackletDataset::new(tracklets, run.preprocess.clone())))
}

fn write_evaluation(out: &Path, ev: &Evaluation, schema: &AttributeSchema) -> Result<()> {
    write(&out.join("metrics.json"), ev.report.to_json())?;
    write(&out.join("attributes.txt"), ev.report.attribute_table())?;
    write(&out.join("groups.txt"), ev.report.group_table())?;
    let path = out.join("predictions.csv");
    let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = BufWriter::new(file);
    let m = schema.len();
    let io = |e| Error::io(&path, e);
    writeln!(w, "id,{}", schema.attribute_names().join(",")).map_err(io)?;
    for (i, id) in ev.ids.iter().enumerate() {
        let row: Vec<String> = ev.probabilities[i * m..(i + 1) * m].iter().map(|p| format!("{p:.6}")).collect();
        writeln!(w, "{id},{}", row.join(",")).map_err(io)?;
    }
    w.flush().map_err(io)
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let run = resolve_run(args)?;
    create_out(&args.out)?;
    write(&args.out.join("config.toml"), run.to_toml_string())?;
    let (schema, data) = load_data(&run)?;
    let train_idx = data.split_indices(run.data.train_split);
    let eval_idx = data.split_indices(run.data.eval_split);
    let model = Model::new(&run.model_config(), &schema, run.tuning())?;
    let counts = model.count_parameters();
    log::info!("{} trainable of {} parameters", counts.trainable, counts.total);

    let log_path = args.out.join("train_log.jsonl");
    let file = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut log = BufWriter::new(file);
    let outcome = train(&model, &data, &train_idx, &[], &run.train, &run.loss, Some(&mut log))?;
    log.flush().map_err(|e| Error::io(&log_path, e))?;

    let info = CheckpointInfo {
        step: outcome.steps,
        train: Some(run.train.clone()),
        manifest: run.data.manifest.clone(),
    };
    save_checkpoint(&model, &args.out.join(CHECKPOINT_DIR), &info)?;
    println!(
        "trained {} steps: loss {:.4} -> {:.4}",
        outcome.steps,
        outcome.initial_loss(),
        outcome.final_loss()
    );
    if !eval_idx.is_empty() {
        let ev = evaluate(&model, &data, &eval_idx, &run.train.eval_sampler(), run.train.batch_size, run.train.threshold)?;
        write_evaluation(&args.out, &ev, &schema)?;
        let mm = ev.report.macro_avg;
        println!(
            "{:?} split: accuracy {:.2} precision {:.2} recall {:.2} F1 {:.2}",
            run.data.eval_split,
            100.0 * mm.accuracy,
            100.0 * mm.precision,
            100.0 * mm.recall,
            100.0 * mm.f1
        );
    }
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let (model, meta) = load_checkpoint(&args.checkpoint)?;
    let mut run = RunConfig::preset(Preset::Toy);
    run.train = meta.train.clone().unwrap_or_default();
    run.data.manifest = meta.manifest.clone();
    if let Some(p) = &args.config {
        let file = RunConfig::load(p)?;
        run.train = file.train;
        if file.data.manifest.is_some() {
            run.data = file.data;
        }
    }
    if let Some(m) = &args.manifest {
        run.data.manifest = Some(m.clone());
    }
    if let Some(s) = &args.split {
        run.data.eval_split = s.parse::<Split>()?;
    }
    if let Some(t) = args.threshold {
        run.train.threshold = t;
    }
    if let Some(b) = args.batch_size {
        run.train.batch_size = b;
    }
    run.train.validate()?;
    create_out(&args.out)?;
    let manifest = run
        .data
        .manifest
        .clone()
        .ok_or_else(|| Error::Config("checkpoint records no manifest: pass --manifest".into()))?;
    let echo = serde_json::json!({
        "checkpoint": args.checkpoint,
        "manifest": manifest,
        "split": run.data.eval_split,
        "train": run.train,
    });
    write(&args.out.join("eval_config.json"), serde_json::to_string_pretty(&echo)?)?;
    let tracklets = load_manifest(&manifest, &model.schema)?;
    let data = TrackletDataset::new(tracklets, model.cfg.preprocess.clone());
    let idx = data.split_indices(run.data.eval_split);
    if idx.is_empty() {
        return Err(Error::Config(format!("{:?} split of {} is empty", run.data.eval_split, manifest.display())));
    }
    let ev = evaluate(&model, &data, &idx, &run.train.eval_sampler(), run.train.batch_size, run.train.threshold)?;
    write_evaluation(&args.out, &ev, &model.schema)?;
    print!("{}", ev.report.group_table());
    Ok(())
}

fn cmd_count(args: &CountArgs) -> Result<()> {
    let mut run = load_run_config(args.config.as_deref(), Preset::Full)?;
    if let Some(s) = &args.schema {
        run.data.schema = Some(s.clone());
    }
    run.validate()?;
    let schema = match run.data.schema_path() {
        Some(p) => AttributeSchema::load(&p)?,
        None => AttributeSchema::from_json(BUNDLED_SCHEMA)?,
    };
    create_out(&args.out)?;
    write(&args.out.join("config.toml"), run.to_toml_string())?;
    let cfg = run.model_config();
    let rows = parameter_ablation(&cfg, &schema)?;
    let table = ablation_table(&rows);
    write(&args.out.join("ablation.txt"), &table)?;

    let mut tunings = vec![Tuning::Full, Tuning::Frozen, Tuning::Side];
    for kind in [PeftKind::Lora, PeftKind::Adapter, PeftKind::PromptTokens] {
        tunings.push(Tuning::Peft(PeftVariant { kind, ..run.peft.clone() }));
    }
    let mut reports = serde_json::Map::new();
    for t in tunings {
        let report = Model::shapes_only(&cfg, &schema, t.clone())?.count_parameters();
        reports.insert(t.label(), serde_json::to_value(report)?);
    }
    let doc = serde_json::json!({ "attributes": schema.len(), "ablation": rows, "tunings": reports });
    write(&args.out.join("params.json"), serde_json::to_string_pretty(&doc)?)?;
    print!("{table}");
    Ok(())
}

fn cmd_compare(args: &TrainArgs) -> Result<()> {
    let run = resolve_run(args)?;
    create_out(&args.out)?;
    write(&args.out.join("config.toml"), run.to_toml_string())?;
    let (schema, data) = load_data(&run)?;
    let train_idx = data.split_indices(run.data.train_split);
    let eval_idx = data.split_indices(run.data.eval_split);
    let rows = compare_peft(
        &run.model_config(),
        &schema,
        &data,
        &train_idx,
        &eval_idx,
        &run.train,
        &run.loss,
        &default_methods(&run.peft),
    )?;
    let table = compare_table(&rows);
    write(&args.out.join("compare.json"), serde_json::to_string_pretty(&rows)?)?;
    write(&args.out.join("compare.txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let schema = match &args.schema {
        Some(p) => AttributeSchema::load(p)?,
        None => synthetic_schema(),
    };
    let defaults = SynthConfig::default();
    let cfg = SynthConfig {
        num_tracklets: args.num,
        seed: args.seed,
        test_fraction: args.test_fraction.unwrap_or(defaults.test_fraction),
        min_frames: args.min_frames.unwrap_or(defaults.min_frames),
        max_frames: args.max_frames.unwrap_or(defaults.max_frames),
        ..defaults
    };
    cfg.validate()?;
    let synth = generate_synthetic(&schema, &cfg)?;
    create_out(&args.out)?;
    let manifest = synth.write(&args.out)?;
    println!("{} tracklets written to {}", synth.tracklets.len(), manifest.display());
    Ok(())
}

fn cmd_convert(args: &ConvertArgs) -> Result<()> {
    let layout: Layout = args.layout.parse()?;
    let schema = AttributeSchema::load(&args.schema)?;
    create_out(&args.out)?;
    let manifest: PathBuf = args.out.join("manifest.jsonl");
    let n = convert_annotations(&args.annotations, &schema, layout, &manifest)?;
    schema.save(&args.out.join("schema.json"))?;
    println!("{n} tracklets written to {}", manifest.display());
    Ok(())
}
