use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use saca_core::agent::{
    run_batch_eval, serve, Agent, AgentMode, ClassifierJudge, ClassifierPredictor, DialogueGenerator,
    LexiconGenerator, ModeKind, ServeConfig,
};
use saca_core::classifier::{train_classifier, ClassifierModel};
use saca_core::corpus::{write_normalized, Corpus, Split};
use saca_core::encoding::{dump_jsonl, encode_corpus, Task, SEP};
use saca_core::generator::{train_generator, GenerationRecord};
use saca_core::lexicon::{build_lexicon, Lexicon, LexiconKind};
use saca_core::metrics::{correlation_table, f1_report, read_human_scores, EvalReport};
use saca_core::retrieval::{HashingEmbedder, RetrievalContext};
use saca_core::SentimentLabel;
use serde_json::{json, Value};

use crate::config::{parse_override, write_json, RetrievalSection, RunConfig};
use crate::{
    BuildLexiconArgs, ChatArgs, Cli, Command, CorrelateArgs, EvaluateArgs, GenerateArgs, GlobalArgs,
    ModelArgs, ServeArgs, SynthArgs, TrainClassifierArgs, TrainGeneratorArgs, UsageError,
};

type Overrides = Vec<(Vec<String>, Value)>;

fn key(path: &str) -> Vec<String> {
    path.split('.').map(str::to_string).collect()
}

fn usage<E: std::fmt::Display>(e: E) -> anyhow::Error {
    anyhow::Error::new(UsageError(e.to_string()))
}

/// Resolves defaults < config file < flags < `--set`.
fn resolve(global: &GlobalArgs, mut flags: Overrides) -> Result<RunConfig> {
    let mut overrides: Overrides = Vec::new();
    if let Some(seed) = global.seed {
        overrides.push((key("seed"), json!(seed)));
    }
    if let Some(preset) = &global.preset {
        overrides.push((key("preset"), json!(preset)));
    }
    if let Some(corpus) = &global.corpus {
        overrides.push((key("corpus.name"), json!(corpus)));
    }
    if let Some(data) = &global.data {
        overrides.push((key("corpus.path"), json!(data)));
    }
    if global.drop_non_neutral {
        overrides.push((key("corpus.drop_non_neutral"), json!(true)));
    }
    overrides.append(&mut flags);
    for spec in &global.overrides {
        overrides.push(parse_override(spec).map_err(usage)?);
    }
    RunConfig::resolve(global.config.as_deref(), &overrides).map_err(|e| usage(format!("{e:#}")))
}

fn snapshot(out: &Path, command: &str, cfg: &RunConfig, components: Value) -> Result<()> {
    write_json(
        out.join("resolved_config.json"),
        &json!({"command": command, "config": cfg, "resolved": components}),
    )
}

fn emit(stdout: &mut impl Write, value: Value) -> Result<()> {
    writeln!(stdout, "{value}")?;
    Ok(())
}

fn parse<T: std::str::FromStr<Err = saca_core::Error>>(value: &str) -> Result<T> {
    value.parse().map_err(usage)
}

pub fn dispatch(cli: Cli, stdin: impl BufRead, stdout: &mut impl Write) -> Result<i32> {
    let g = &cli.global;
    match cli.command {
        Command::PrepareData => prepare_data(g, stdout),
        Command::TrainClassifier(a) => train_cls(g, &a, Task::Classify, stdout),
        Command::TrainRsp(a) => train_cls(g, &a, Task::ReplyPredict, stdout),
        Command::BuildLexicon(a) => build_lexicon_cmd(g, &a, stdout),
        Command::TrainGenerator(a) => train_gen(g, &a, stdout),
        Command::Evaluate(a) => evaluate(g, &a, stdout),
        Command::Generate(a) => generate(g, &a, stdout),
        Command::Correlate(a) => correlate(g, &a, stdout),
        Command::Chat(a) => chat(g, &a, stdin, stdout),
        Command::Serve(a) => serve_cmd(g, &a, stdout),
        Command::Synth(a) => synth(g, &a, stdout),
    }?;
    Ok(0)
}

fn prepare_data(g: &GlobalArgs, stdout: &mut impl Write) -> Result<()> {
    let cfg = resolve(g, Vec::new())?;
    let corpus = cfg.load_corpus()?;
    write_normalized(&corpus, g.out.join("corpus"))?;
    let mut resolved = serde_json::Map::new();
    for task in [Task::Classify, Task::ReplyPredict] {
        let x = cfg.classifier_config(task)?.x;
        resolved.insert(task.to_string(), json!({"x": x}));
        for (split, examples) in encode_corpus(&corpus, task, x, SEP)? {
            let path = g.out.join("encoded").join(task.to_string()).join(format!("{split}.jsonl"));
            fs::create_dir_all(path.parent().expect("has parent"))?;
            dump_jsonl(&examples, BufWriter::new(fs::File::create(&path)?))?;
        }
    }
    let stats: BTreeMap<String, Value> = corpus
        .splits()
        .map(|(split, dialogues)| {
            (
                split.to_string(),
                json!({
                    "dialogues": dialogues.len(),
                    "utterances": corpus.utterance_count(split),
                    "labels": corpus.label_counts(split),
                }),
            )
        })
        .collect();
    let summary = json!({
        "corpus": corpus.name(),
        "labels": corpus.labels(),
        "majority_label": corpus.majority_label(Split::Train),
        "splits": stats,
    });
    write_json(g.out.join("stats.json"), &summary)?;
    snapshot(&g.out, "prepare-data", &cfg, Value::Object(resolved))?;
    emit(stdout, json!({"status": "ok", "out": g.out, "corpus": corpus.name()}))
}

fn retrieval_context(section: &RetrievalSection, corpus: &Corpus, task: Task, x: usize) -> Result<RetrievalContext> {
    let encoded = encode_corpus(corpus, task, x, SEP)?;
    let train = encoded.get(&Split::Train).map(Vec::as_slice).unwrap_or(&[]);
    Ok(RetrievalContext::build(
        Arc::new(HashingEmbedder::new(section.dim)),
        train,
        corpus.labels(),
        SEP,
        section.options,
    )?)
}

fn train_cls(g: &GlobalArgs, a: &TrainClassifierArgs, task: Task, stdout: &mut impl Write) -> Result<()> {
    let section = match task {
        Task::Classify => "classifier",
        Task::ReplyPredict => "rsp",
    };
    let mut flags = Overrides::new();
    if let Some(x) = a.x {
        flags.push((key(&format!("{section}.x")), json!(x)));
    }
    if let Some(p) = &a.pooling {
        flags.push((key(&format!("{section}.pooling")), json!(p)));
    }
    if let Some(e) = &a.encoder {
        flags.push((key(&format!("{section}.encoder_name")), json!(e)));
    }
    if let Some(n) = a.max_epochs {
        flags.push((key(&format!("{section}.max_epochs")), json!(n)));
    }
    if a.retrieval {
        flags.push((key("retrieval.enabled"), json!(true)));
    }
    if a.allow_self_match {
        flags.push((key("retrieval.options.allow_self_match"), json!(true)));
    }
    if a.embed_target_only {
        flags.push((key("retrieval.options.embed_target_only"), json!(true)));
    }
    if a.decay_per_step {
        flags.push((key(&format!("{section}.decay_per_step")), json!(true)));
    }
    let cfg = resolve(g, flags)?;
    let ccfg = cfg.classifier_config(task).map_err(|e| usage(format!("{e:#}")))?;
    let corpus = cfg.load_corpus()?;
    let ctx = if ccfg.use_retrieval {
        Some(retrieval_context(&cfg.retrieval, &corpus, task, ccfg.x)?)
    } else {
        None
    };
    snapshot(&g.out, section, &cfg, json!({ "classifier": ccfg }))?;
    let out = train_classifier(&ccfg, &corpus, ctx.as_ref())?;
    let model_dir = g.out.join("model");
    out.model.save(&model_dir)?;
    if let Some(ctx) = &ctx {
        write_json(model_dir.join("retrieval.json"), &cfg.retrieval)?;
        ctx.index().save(model_dir.join("index"), ctx.embedder().id())?;
    }
    out.log.save_csv(g.out.join("train_log.csv"))?;
    let summary = json!({
        "status": "ok",
        "task": task,
        "best_macro_f1": out.best_macro_f1,
        "best_step": out.best_step,
        "optimizer_steps": out.optimizer_steps,
        "stopped_early": out.stopped_early,
        "model": model_dir,
    });
    write_json(g.out.join("summary.json"), &summary)?;
    emit(stdout, summary)
}

fn build_lexicon_cmd(g: &GlobalArgs, a: &BuildLexiconArgs, stdout: &mut impl Write) -> Result<()> {
    let mut flags = Overrides::new();
    if let Some(kind) = &a.kind {
        flags.push((key("lexicon.kind"), json!(kind)));
    }
    if let Some(k) = a.k {
        flags.push((key("lexicon.k"), json!(k)));
    }
    if a.tfu_post_filter {
        flags.push((key("lexicon.tfu_post_filter"), json!(true)));
    }
    let cfg = resolve(g, flags)?;
    let corpus = cfg.load_corpus()?;
    let lexicon = build_lexicon(cfg.lexicon.kind, &corpus, cfg.lexicon.options())?;
    fs::create_dir_all(&g.out)?;
    let path = g.out.join("lexicon.json");
    lexicon.save(&path)?;
    snapshot(&g.out, "build-lexicon", &cfg, json!({ "lexicon": cfg.lexicon }))?;
    emit(stdout, json!({
        "status": "ok",
        "kind": lexicon.kind,
        "labels": lexicon.labels().collect::<Vec<_>>(),
        "path": path,
    }))
}

fn train_gen(g: &GlobalArgs, a: &TrainGeneratorArgs, stdout: &mut impl Write) -> Result<()> {
    let mut flags = Overrides::new();
    if let Some(kind) = &a.lexicon_kind {
        flags.push((key("lexicon.kind"), json!(kind)));
    }
    if a.multitask {
        flags.push((key("generator.multitask"), json!(true)));
    }
    if let Some(n) = a.max_epochs {
        flags.push((key("generator.max_epochs"), json!(n)));
    }
    let cfg = resolve(g, flags)?;
    let corpus = cfg.load_corpus()?;
    let lexicon = match &a.lexicon {
        Some(path) => Lexicon::load(path).with_context(|| format!("cannot read lexicon {}", path.display()))?,
        None => build_lexicon(cfg.lexicon.kind, &corpus, cfg.lexicon.options())?,
    };
    let gcfg = cfg
        .generator_config(lexicon.kind)
        .map_err(|e| usage(format!("{e:#}")))?;
    snapshot(&g.out, "train-generator", &cfg, json!({ "generator": gcfg }))?;
    let out = train_generator(&gcfg, &corpus, &lexicon)?;
    let model_dir = g.out.join("model");
    LexiconGenerator::new(out.model, out.lexicon, gcfg.decode)?.save(&model_dir)?;
    out.log.save_csv(g.out.join("train_log.csv"))?;
    let summary = json!({
        "status": "ok",
        "lexicon_kind": lexicon.kind,
        "initial_nll": out.initial_nll,
        "best_nll": out.best_nll,
        "best_step": out.best_step,
        "optimizer_steps": out.optimizer_steps,
        "model": model_dir,
    });
    write_json(g.out.join("summary.json"), &summary)?;
    emit(stdout, summary)
}

/// Loads a classifier directory, rebuilding its retrieval context from the
/// configured corpus when it was trained with one.
fn load_classifier(dir: &Path, task: Task, cfg: &RunConfig) -> Result<(ClassifierModel, Option<RetrievalContext>)> {
    let model = ClassifierModel::load_for_task(dir, task)?;
    if !model.config().use_retrieval {
        return Ok((model, None));
    }
    let section: RetrievalSection = serde_json::from_str(
        &fs::read_to_string(dir.join("retrieval.json"))
            .with_context(|| format!("{} lacks retrieval.json", dir.display()))?,
    )?;
    let corpus = cfg
        .load_corpus()
        .context("a retrieval classifier needs its training corpus (--corpus/--data)")?;
    let ctx = retrieval_context(&section, &corpus, task, model.config().x)?;
    Ok((model, Some(ctx)))
}

fn load_generator(dir: &Path, cfg: &RunConfig) -> Result<LexiconGenerator> {
    let mut generator = LexiconGenerator::load(dir, None)
        .with_context(|| format!("cannot load generator {}", dir.display()))?;
    generator.decode = cfg.decode_params(Some(generator.decode))?;
    Ok(generator)
}

fn decode_flag(models: &ModelArgs) -> Overrides {
    models
        .decode
        .iter()
        .map(|s| (key("decode.strategy"), json!(s)))
        .collect()
}

fn load_agent(models: &ModelArgs, cfg: &RunConfig) -> Result<Agent> {
    let conditioned = models.generator.as_deref().map(|d| load_generator(d, cfg)).transpose()?;
    let baseline = models
        .baseline_generator
        .as_deref()
        .map(|d| load_generator(d, cfg))
        .transpose()?;
    if conditioned.is_none() && baseline.is_none() {
        bail!(UsageError("no generator given (--generator or --baseline-generator)".into()));
    }
    let predictor = models
        .predictor
        .as_deref()
        .map(|d| -> Result<_> {
            let (m, ctx) = load_classifier(d, Task::ReplyPredict, cfg)?;
            Ok(ClassifierPredictor::new(m, ctx)?)
        })
        .transpose()?;
    let judge = models
        .judge
        .as_deref()
        .map(|d| -> Result<_> {
            let (m, ctx) = load_classifier(d, Task::Classify, cfg)?;
            Ok(ClassifierJudge::new(m, ctx)?)
        })
        .transpose()?;
    let labels: Vec<SentimentLabel> = if let Some(j) = &judge {
        j.model.labels().to_vec()
    } else if let Some(p) = &predictor {
        p.model.labels().to_vec()
    } else if let Some(c) = conditioned.as_ref().filter(|c| c.lexicon.kind != LexiconKind::None) {
        c.lexicon.labels().collect()
    } else {
        cfg.corpus.labels.clone()
    };
    Ok(Agent {
        labels,
        baseline: baseline.map(|b| Arc::new(b) as _),
        conditioned: conditioned.map(|c| Arc::new(c) as _),
        predictor: predictor.map(|p| Arc::new(p) as _),
        judge: judge.map(|j| Arc::new(j) as _),
    })
}

fn agent_mode(agent: &Agent, mode: &str) -> Result<AgentMode> {
    let kind: ModeKind = parse(mode)?;
    let mode = AgentMode::new(kind, agent.default_lexicon(kind)).map_err(usage)?;
    agent.check_mode(&mode).map_err(usage)?;
    Ok(mode)
}

fn write_records(path: &Path, records: &[GenerationRecord]) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn evaluate(g: &GlobalArgs, a: &EvaluateArgs, stdout: &mut impl Write) -> Result<()> {
    let cfg = resolve(g, decode_flag(&a.models))?;
    let split: Split = parse(&a.split)?;
    fs::create_dir_all(&g.out)?;
    let report: EvalReport = match a.task.as_str() {
        "classify" | "reply_predict" => {
            let task = if a.task == "classify" { Task::Classify } else { Task::ReplyPredict };
            let dir = a.model.as_deref().ok_or_else(|| usage("--model is required for this task"))?;
            let corpus = cfg.load_corpus()?;
            let (model, ctx) = load_classifier(dir, task, &cfg)?;
            model.check_label_vocab(corpus.labels())?;
            let encoded = encode_corpus(&corpus, task, model.config().x, SEP)?;
            let examples = encoded.get(&split).map(Vec::as_slice).unwrap_or(&[]);
            let preds = model.predict(examples, ctx.as_ref())?;
            let golds: Vec<SentimentLabel> = examples.iter().map(|e| e.label).collect();
            let majority = corpus
                .majority_label(Split::Train)
                .context("train split is empty")?;
            snapshot(&g.out, "evaluate", &cfg, json!({"task": task, "model": dir, "split": split}))?;
            f1_report(&preds, &golds, corpus.labels(), majority)?
        }
        "generation" => {
            let corpus = cfg.load_corpus()?;
            let agent = load_agent(&a.models, &cfg)?;
            let mode = agent_mode(&agent, &a.mode)?;
            let majority = corpus
                .majority_label(Split::Train)
                .context("train split is empty")?;
            let embedder = a.ses.then(|| HashingEmbedder::new(cfg.retrieval.dim));
            snapshot(&g.out, "evaluate", &cfg, json!({"task": "generation", "mode": mode, "split": split}))?;
            let out = run_batch_eval(
                &agent,
                &mode,
                corpus.split(split),
                majority,
                embedder.as_ref().map(|e| e as _),
            )?;
            write_records(&g.out.join("generations.jsonl"), &out.records)?;
            out.report
        }
        other => bail!(UsageError(format!(
            "unknown task `{other}` (expected classify, reply_predict or generation)"
        ))),
    };
    write_json(g.out.join("report.json"), &report)?;
    emit(stdout, json!({"status": "ok", "report": report}))
}

fn generate(g: &GlobalArgs, a: &GenerateArgs, stdout: &mut impl Write) -> Result<()> {
    let cfg = resolve(g, decode_flag(&a.models))?;
    let dir = a
        .models
        .generator
        .as_deref()
        .or(a.models.baseline_generator.as_deref())
        .ok_or_else(|| usage("--generator is required"))?;
    let generator = load_generator(dir, &cfg)?;
    if let Some(split) = &a.split {
        let split: Split = parse(split)?;
        let corpus = cfg.load_corpus()?;
        let conditioned = generator.lexicon.kind != LexiconKind::None;
        let mut records = Vec::new();
        for d in corpus.split(split) {
            let texts: Vec<&str> = d.texts().collect();
            for j in 1..texts.len() {
                let label = conditioned.then(|| d.turns[j].label);
                records.push(GenerationRecord {
                    dialogue_id: d.id.clone(),
                    turn: j,
                    history: texts[..j].iter().map(|s| s.to_string()).collect(),
                    target_label: label,
                    generated: generator.generate_reply(label, &texts[..j])?,
                    gold: texts[j].to_string(),
                });
            }
        }
        fs::create_dir_all(&g.out)?;
        let path = g.out.join("generations.jsonl");
        write_records(&path, &records)?;
        snapshot(&g.out, "generate", &cfg, json!({"decode": generator.decode, "split": split}))?;
        return emit(stdout, json!({"status": "ok", "records": records.len(), "path": path}));
    }
    let label: Option<SentimentLabel> = a.label.as_deref().map(parse).transpose()?;
    let history: Vec<&str> = a.history.iter().map(String::as_str).collect();
    let reply = generator.generate_reply(label, &history)?;
    emit(stdout, json!({"status": "ok", "label": label, "reply": reply}))
}

fn correlate(g: &GlobalArgs, a: &CorrelateArgs, stdout: &mut impl Write) -> Result<()> {
    let cfg = resolve(g, Vec::new())?;
    let mut reports = BTreeMap::new();
    for spec in &a.reports {
        let (name, path) = spec
            .split_once('=')
            .ok_or_else(|| usage(format!("--report `{spec}` is not name=path")))?;
        let text = fs::read_to_string(path).with_context(|| format!("cannot read report {path}"))?;
        let mut value: Value = serde_json::from_str(&text)?;
        // accept both a bare report and the evaluate command's output
        if let Some(inner) = value.get("report") {
            value = inner.clone();
        }
        let report: EvalReport = serde_json::from_value(value).with_context(|| format!("{path} is not a report"))?;
        reports.insert(name.to_string(), report);
    }
    let human = read_human_scores(
        fs::File::open(&a.human).with_context(|| format!("cannot read {}", a.human.display()))?,
    )?;
    let table = correlation_table(&reports, &human)?;
    fs::create_dir_all(&g.out)?;
    table.write_csv(fs::File::create(g.out.join("correlation.csv"))?)?;
    write_json(g.out.join("correlation.json"), &table)?;
    snapshot(&g.out, "correlate", &cfg, json!({"reports": a.reports, "human": a.human}))?;
    emit(stdout, json!({"status": "ok", "models": table.models, "caveat": table.caveat}))
}

fn chat(g: &GlobalArgs, a: &ChatArgs, stdin: impl BufRead, stdout: &mut impl Write) -> Result<()> {
    let cfg = resolve(g, decode_flag(&a.models))?;
    let agent = load_agent(&a.models, &cfg)?;
    let mode = agent_mode(&agent, &a.mode)?;
    crate::run_repl(&agent, mode, stdin, stdout)?;
    Ok(())
}

fn serve_cmd(g: &GlobalArgs, a: &ServeArgs, stdout: &mut impl Write) -> Result<()> {
    let cfg = resolve(g, decode_flag(&a.models))?;
    let agent = load_agent(&a.models, &cfg)?;
    let addr = a
        .addr
        .parse()
        .map_err(|e| usage(format!("bad --addr `{}`: {e}", a.addr)))?;
    let config = ServeConfig {
        addr,
        log_dir: a.log_dir.clone(),
    };
    emit(stdout, json!({"status": "listening", "addr": a.addr, "modes": agent.modes()}))?;
    stdout.flush()?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(serve(&config, agent))?;
    Ok(())
}

fn synth(g: &GlobalArgs, a: &SynthArgs, stdout: &mut impl Write) -> Result<()> {
    let mut flags: Overrides = vec![(key("corpus.name"), json!("synthetic"))];
    if !a.labels.is_empty() {
        flags.push((key("corpus.labels"), json!(a.labels)));
    }
    if let Some(n) = a.dialogues_per_label {
        flags.push((key("corpus.dialogues_per_label"), json!(n)));
    }
    let cfg = resolve(g, flags)?;
    let corpus = cfg.load_corpus()?;
    write_normalized(&corpus, &g.out)?;
    emit(stdout, json!({
        "status": "ok",
        "out": g.out,
        "labels": corpus.labels(),
        "train_dialogues": corpus.split(Split::Train).len(),
    }))
}
