//! The pipeline stages behind each subcommand: artifact paths, staleness
//! checks, and the glue between configuration and the core library.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::SystemTime;

use metadialog_core::assemble::{self, Miners, Mode};
use metadialog_core::bpe::BpeVocab;
use metadialog_core::corpus::{self, Conversation, IngestFormat};
use metadialog_core::lm::{self, Decoding, Trainer, TransformerLM};
use metadialog_core::query::{self, LexicalRuleSet};
use metadialog_core::text::normalize_ws;
use metadialog_core::{entity, eval, lexicon, stem, topic, Error, Result, EOS, SEP};

use crate::config::{DecodeKind, RunConfig};

/// Versioned artifact locations under one workdir.
pub struct Artifacts {
    workdir: PathBuf,
}

impl Artifacts {
    pub fn new(workdir: &Path) -> Self {
        Artifacts { workdir: workdir.to_path_buf() }
    }

    pub fn clean(&self) -> PathBuf {
        self.workdir.join("corpus").join("clean.v1.jsonl")
    }

    pub fn topics(&self) -> PathBuf {
        self.workdir.join("models").join("topics.v1.json")
    }

    pub fn query_clf(&self) -> PathBuf {
        self.workdir.join("models").join("query_clf.v1.json")
    }

    pub fn entities(&self) -> PathBuf {
        self.workdir.join("models").join("entities.v1.tsv")
    }

    pub fn bpe(&self) -> PathBuf {
        self.workdir.join("models").join("bpe.v1.txt")
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.workdir.join("models").join("lm.v1.ckpt")
    }

    pub fn instances(&self) -> PathBuf {
        self.workdir.join("datasets").join("instances.v1.txt")
    }

    pub fn train_report(&self) -> PathBuf {
        self.workdir.join("reports").join("train_lm.v1.json")
    }

    pub fn generations(&self) -> PathBuf {
        self.workdir.join("reports").join("generations.v1.txt")
    }

    pub fn references(&self) -> PathBuf {
        self.workdir.join("reports").join("references.v1.txt")
    }

    pub fn eval_report(&self) -> PathBuf {
        self.workdir.join("reports").join("eval.v1.json")
    }
}

/// Everything a stage needs besides its artifact paths.
pub struct Ctx<'a> {
    pub cfg: &'a RunConfig,
    pub config_path: &'a Path,
    pub force: bool,
}

impl Ctx<'_> {
    fn artifacts(&self) -> Artifacts {
        Artifacts::new(&self.cfg.workdir)
    }
}

fn mtime(path: &Path) -> Option<SystemTime> {
    fs::metadata(path).and_then(|m| m.modified()).ok()
}

/// A stage is up to date when every output exists and none is older than
/// any input (the config file counts as an input to every stage).
fn up_to_date(inputs: &[&Path], outputs: &[&Path]) -> bool {
    let newest_input = inputs.iter().filter_map(|p| mtime(p)).max();
    let Some(newest_input) = newest_input else { return false };
    let mut oldest_output: Option<SystemTime> = None;
    for out in outputs {
        match mtime(out) {
            None => return false,
            Some(t) => {
                oldest_output = Some(oldest_output.map_or(t, |cur: SystemTime| cur.min(t)));
            }
        }
    }
    oldest_output.is_some_and(|t| t >= newest_input)
}

fn require(path: &Path, producer: &str) -> Result<()> {
    if path.exists() {
        return Ok(());
    }
    Err(Error::MissingArtifact {
        artifact: path.display().to_string(),
        producer: producer.to_string(),
    })
}

fn write_artifact(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, contents)?;
    Ok(())
}

fn read_clean_corpus(paths: &Artifacts) -> Result<Vec<Conversation>> {
    require(&paths.clean(), "preprocess")?;
    corpus::ingest(&paths.clean(), IngestFormat::Jsonl)
}

fn read_instance_lines(paths: &Artifacts) -> Result<Vec<String>> {
    require(&paths.instances(), "assemble")?;
    let raw = fs::read_to_string(paths.instances())?;
    Ok(raw.lines().filter(|l| !l.trim().is_empty()).map(String::from).collect())
}

pub fn preprocess(ctx: &Ctx<'_>) -> Result<()> {
    let paths = ctx.artifacts();
    let out = paths.clean();
    if !ctx.cfg.corpus.exists() {
        return Err(Error::data(format!(
            "corpus file `{}` does not exist",
            ctx.cfg.corpus.display()
        )));
    }
    if !ctx.force && up_to_date(&[ctx.config_path, &ctx.cfg.corpus], &[&out]) {
        println!("preprocess: up to date -> {}", out.display());
        return Ok(());
    }
    let raw = corpus::ingest(&ctx.cfg.corpus, ctx.cfg.corpus_format)?;
    let cleaned = corpus::clean_corpus(&raw, lexicon::badwords());
    let utterances: usize = cleaned.iter().map(|c| c.utterances.len()).sum();
    if let Some(dir) = out.parent() {
        fs::create_dir_all(dir)?;
    }
    corpus::write_store(&out, &cleaned)?;
    println!(
        "preprocess: {} conversations in, {} kept, {utterances} utterances -> {}",
        raw.len(),
        cleaned.len(),
        out.display()
    );
    Ok(())
}

pub fn mine_topics(ctx: &Ctx<'_>) -> Result<()> {
    let paths = ctx.artifacts();
    let out = paths.topics();
    if !ctx.force && up_to_date(&[ctx.config_path, &paths.clean()], &[&out]) {
        println!("mine-topics: up to date -> {}", out.display());
        return Ok(());
    }
    let cleaned = read_clean_corpus(&paths)?;
    let docs = topic::build_documents(&cleaned, stem::stem)?;
    let model = topic::fit(
        &docs,
        ctx.cfg.topic_k,
        ctx.cfg.alpha(),
        ctx.cfg.topic_beta,
        ctx.cfg.topic_sweeps,
        ctx.cfg.seed,
    )?;
    if let Some(dir) = out.parent() {
        fs::create_dir_all(dir)?;
    }
    topic::save(&model, &out)?;
    println!(
        "mine-topics: K={} over {} documents, {} terms -> {}",
        model.k,
        docs.docs.len(),
        docs.vocab.len(),
        out.display()
    );
    Ok(())
}

pub fn train_query_clf(ctx: &Ctx<'_>) -> Result<()> {
    let paths = ctx.artifacts();
    let out = paths.query_clf();
    let mut inputs: Vec<&Path> = vec![ctx.config_path];
    if let Some(labeled) = &ctx.cfg.clf_labeled {
        inputs.push(labeled);
    }
    if !ctx.force && up_to_date(&inputs, &[&out]) {
        println!("train-query-clf: up to date -> {}", out.display());
        return Ok(());
    }
    let data = match &ctx.cfg.clf_labeled {
        Some(path) => {
            let raw = fs::read_to_string(path)?;
            query::parse_labeled_tsv(&raw, &path.display().to_string())?
        }
        None => query::bundled_labeled_set()?,
    };
    let split = data.len() * 3 / 4;
    let (clf, _) = query::train_classifier(
        &data[..split],
        ctx.cfg.clf_epochs,
        ctx.cfg.clf_lr,
        ctx.cfg.clf_reg,
        ctx.cfg.seed,
    )?;
    let rules = LexicalRuleSet::default();
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (text, label) in &data[split..] {
        match (query::decide(text, &rules, &clf), *label) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let (_, _, f1) = query::prf(tp, fp, fn_);
    if let Some(dir) = out.parent() {
        fs::create_dir_all(dir)?;
    }
    query::save(&clf, &out)?;
    println!(
        "train-query-clf: {} train, {} held-out, F1 {f1:.3} -> {}",
        split,
        data.len() - split,
        out.display()
    );
    Ok(())
}

pub fn mine_entities(ctx: &Ctx<'_>) -> Result<()> {
    let paths = ctx.artifacts();
    let out = paths.entities();
    if !ctx.force && up_to_date(&[ctx.config_path, &paths.clean()], &[&out]) {
        println!("mine-entities: up to date -> {}", out.display());
        return Ok(());
    }
    let cleaned = read_clean_corpus(&paths)?;
    let table = entity::build_df_table(&cleaned);
    if let Some(dir) = out.parent() {
        fs::create_dir_all(dir)?;
    }
    entity::save(&table, &out)?;
    println!(
        "mine-entities: {} phrases over {} conversations -> {}",
        table.counts.len(),
        table.n_docs,
        out.display()
    );
    Ok(())
}

pub fn assemble(ctx: &Ctx<'_>) -> Result<()> {
    let paths = ctx.artifacts();
    let out = paths.instances();
    let mut inputs = vec![ctx.config_path.to_path_buf(), paths.clean(), paths.query_clf()];
    if ctx.cfg.mode == Mode::QstnTop {
        inputs.push(paths.topics());
    }
    if ctx.cfg.mode == Mode::QstnEnt {
        inputs.push(paths.entities());
    }
    let input_refs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
    if !ctx.force && up_to_date(&input_refs, &[&out]) {
        println!("assemble: up to date -> {}", out.display());
        return Ok(());
    }
    let cleaned = read_clean_corpus(&paths)?;
    require(&paths.query_clf(), "train-query-clf")?;
    let clf = query::load(&paths.query_clf())?;
    let topic_model = if ctx.cfg.mode == Mode::QstnTop {
        require(&paths.topics(), "mine-topics")?;
        Some(topic::load(&paths.topics())?)
    } else {
        None
    };
    let df_table = if ctx.cfg.mode == Mode::QstnEnt {
        require(&paths.entities(), "mine-entities")?;
        Some(entity::load(&paths.entities())?)
    } else {
        None
    };
    let rules = LexicalRuleSet::default();
    let miners = Miners {
        rules: &rules,
        classifier: &clf,
        topic_model: topic_model.as_ref(),
        df_table: df_table.as_ref(),
    };
    let instances =
        assemble::build_instances(&cleaned, ctx.cfg.mode, &miners, ctx.cfg.context_len)?;
    let mut body = String::new();
    for inst in &instances {
        body.push_str(&assemble::serialize(inst));
        body.push('\n');
    }
    write_artifact(&out, &body)?;
    println!(
        "assemble: {} instances (mode {}) -> {}",
        instances.len(),
        ctx.cfg.mode,
        out.display()
    );
    Ok(())
}

pub fn train_lm(ctx: &Ctx<'_>) -> Result<()> {
    let paths = ctx.artifacts();
    let outs = [paths.bpe(), paths.checkpoint(), paths.train_report()];
    let out_refs: Vec<&Path> = outs.iter().map(PathBuf::as_path).collect();
    if !ctx.force && up_to_date(&[ctx.config_path, &paths.instances()], &out_refs) {
        println!("train-lm: up to date -> {}", paths.checkpoint().display());
        return Ok(());
    }
    let lines = read_instance_lines(&paths)?;
    let vocab = metadialog_core::bpe::train_bpe(&lines, ctx.cfg.model.vocab_size)?;
    if let Some(dir) = paths.bpe().parent() {
        fs::create_dir_all(dir)?;
    }
    vocab.save(&paths.bpe())?;

    // The embedding table is sized to the tokens the tokenizer actually
    // produced; `model.vocab_size` in the config is the BPE training target.
    let mut model_cfg = ctx.cfg.model.clone();
    model_cfg.vocab_size = vocab.len();
    let prepared = lm::prepare_dataset(&lines, &vocab, model_cfg.max_seq_len)?;
    if prepared.instances.is_empty() {
        return Err(Error::data(format!(
            "no instances fit within max_seq_len {} ({} dropped)",
            model_cfg.max_seq_len, prepared.dropped
        )));
    }
    let model = TransformerLM::new(model_cfg)?;
    let mut trainer = Trainer::new(model, ctx.cfg.train.clone(), prepared.instances.len())?;
    trainer.run_to_completion(&prepared.instances)?;
    trainer.save(&paths.checkpoint())?;

    let final_loss = trainer.epoch_losses.last().copied().unwrap_or(f64::NAN);
    let report = serde_json::json!({
        "instances": prepared.instances.len(),
        "dropped": prepared.dropped,
        "epochs": ctx.cfg.train.epochs,
        "vocab_size": vocab.len(),
        "final_loss": final_loss,
        "epoch_losses": trainer.epoch_losses,
    });
    let pretty = serde_json::to_string_pretty(&report).map_err(|e| Error::data(e.to_string()))?;
    write_artifact(&paths.train_report(), &format!("{pretty}\n"))?;
    println!(
        "train-lm: {} instances ({} dropped), {} epochs, final loss {final_loss:.4} -> {}",
        prepared.instances.len(),
        prepared.dropped,
        ctx.cfg.train.epochs,
        paths.checkpoint().display()
    );
    Ok(())
}

/// Split one serialized instance line into the generation prompt (ending at
/// `[sep]`) and the gold response text.
fn split_prompt(line: &str, location: &str) -> Result<(String, String)> {
    let sep_mid = format!(" {SEP} ");
    let (before, after) = line
        .split_once(&sep_mid)
        .map(|(b, a)| (b, a.trim()))
        .or_else(|| line.strip_suffix(&format!(" {SEP}")).map(|b| (b, "")))
        .ok_or_else(|| Error::malformed(location, format!("expected a ` {SEP} ` boundary")))?;
    let reference = after.strip_suffix(EOS).unwrap_or(after).trim().to_string();
    Ok((format!("{before} {SEP}"), reference))
}

pub fn generate(ctx: &Ctx<'_>) -> Result<()> {
    let paths = ctx.artifacts();
    let outs = [paths.generations(), paths.references()];
    let out_refs: Vec<&Path> = outs.iter().map(PathBuf::as_path).collect();
    let inputs = [
        ctx.config_path.to_path_buf(),
        paths.instances(),
        paths.bpe(),
        paths.checkpoint(),
    ];
    let input_refs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
    if !ctx.force && up_to_date(&input_refs, &out_refs) {
        println!("generate: up to date -> {}", paths.generations().display());
        return Ok(());
    }
    let lines = read_instance_lines(&paths)?;
    require(&paths.bpe(), "train-lm")?;
    require(&paths.checkpoint(), "train-lm")?;
    let vocab = BpeVocab::load(&paths.bpe())?;
    let trainer = Trainer::load(&paths.checkpoint())?;
    let model = trainer.model;

    let strategy = match ctx.cfg.decode_strategy {
        DecodeKind::Greedy => Decoding::Greedy,
        DecodeKind::TopK => Decoding::TopK { k: ctx.cfg.decode_k, seed: ctx.cfg.seed },
        DecodeKind::Nucleus => Decoding::Nucleus { p: ctx.cfg.decode_p, seed: ctx.cfg.seed },
    };
    let cap = model.config.max_seq_len - 1;
    let mut generations = String::new();
    let mut references = String::new();
    let mut produced = 0usize;
    let mut skipped = 0usize;
    for (no, line) in lines.iter().enumerate() {
        let location = format!("{}:{}", paths.instances().display(), no + 1);
        let (prompt, reference) = split_prompt(line, &location)?;
        let mut ids = vocab.encode(&prompt);
        // Same policy as dataset preparation: drop context tokens strictly
        // before [eoc] until the prompt fits.
        while ids.len() > cap && ids.first() != Some(&metadialog_core::bpe::EOC_ID) {
            ids.remove(0);
        }
        if ids.len() > cap {
            skipped += 1;
            continue;
        }
        let new_ids = model.generate(&ids, &strategy, ctx.cfg.decode_max_new)?;
        let mut text = vocab.decode_lossy(&new_ids)?;
        if let Some(stripped) = text.trim_end().strip_suffix(EOS) {
            text = stripped.to_string();
        }
        generations.push_str(&normalize_ws(&text));
        generations.push('\n');
        references.push_str(&reference);
        references.push('\n');
        produced += 1;
    }
    if produced == 0 {
        return Err(Error::data("no instance prompt fits within the model's context window"));
    }
    write_artifact(&paths.generations(), &generations)?;
    write_artifact(&paths.references(), &references)?;
    println!(
        "generate: {produced} generations ({skipped} skipped) -> {}",
        paths.generations().display()
    );
    Ok(())
}

pub fn evaluate(ctx: &Ctx<'_>) -> Result<()> {
    let paths = ctx.artifacts();
    let out = paths.eval_report();
    let inputs = [ctx.config_path.to_path_buf(), paths.generations(), paths.references()];
    let input_refs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
    if !ctx.force && up_to_date(&input_refs, &[&out]) {
        println!("evaluate: up to date -> {}", out.display());
        return Ok(());
    }
    require(&paths.generations(), "generate")?;
    require(&paths.references(), "generate")?;
    let report = eval::evaluate_run(&paths.generations(), &paths.references())?;
    let pretty = serde_json::to_string_pretty(&report).map_err(|e| Error::data(e.to_string()))?;
    write_artifact(&out, &format!("{pretty}\n"))?;
    println!(
        "evaluate: {} pairs, bleu {:.4} rouge_l {:.4} distinct {:.4} -> {}",
        report.n_pairs,
        report.bleu,
        report.rouge_l,
        report.distinct,
        out.display()
    );
    Ok(())
}

/// Run every stage the configured mode needs, in dependency order.
pub fn pipeline(ctx: &Ctx<'_>) -> Result<()> {
    preprocess(ctx)?;
    if ctx.cfg.mode == Mode::QstnTop {
        mine_topics(ctx)?;
    }
    train_query_clf(ctx)?;
    if ctx.cfg.mode == Mode::QstnEnt {
        mine_entities(ctx)?;
    }
    assemble(ctx)?;
    train_lm(ctx)?;
    generate(ctx)?;
    evaluate(ctx)?;
    println!("pipeline: complete -> {}", ctx.artifacts().eval_report().display());
    Ok(())
}
