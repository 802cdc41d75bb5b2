//! Flat key-value configuration for the pipeline driver.
//!
//! The file format is one `key = value` pair per line, `#` comments, and
//! dotted section prefixes (`train.lr = 5e-5`). Every key has a default, so
//! an empty file is a valid configuration. A `grid.<key> = v1,v2,...` line
//! turns a single `pipeline` invocation into the cartesian product of all
//! grid axes, each run writing under its own `grid-<n>` workdir.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use metadialog_core::assemble::{Mode, DEFAULT_CONTEXT_LEN};
use metadialog_core::corpus::IngestFormat;
use metadialog_core::entity::DEFAULT_MAX_ENTITIES;
use metadialog_core::lm::{MaskMode, ModelConfig, TrainConfig};
use metadialog_core::{query, topic, Error, Result};

/// Which decoding strategy `generate` should use; the seed and the
/// per-strategy knobs live alongside it in [`RunConfig`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeKind {
    Greedy,
    TopK,
    Nucleus,
}

impl FromStr for DecodeKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "greedy" => Ok(DecodeKind::Greedy),
            "top_k" => Ok(DecodeKind::TopK),
            "nucleus" => Ok(DecodeKind::Nucleus),
            other => Err(format!("expected greedy|top_k|nucleus, got `{other}`")),
        }
    }
}

/// One fully resolved run: every stage reads its knobs from here. The single
/// `seed` feeds all stage seeds so a grid over seeds reseeds the whole
/// pipeline coherently.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub corpus: PathBuf,
    pub workdir: PathBuf,
    pub corpus_format: IngestFormat,
    pub mode: Mode,
    pub context_len: usize,
    pub topic_k: usize,
    pub topic_alpha: Option<f64>,
    pub topic_beta: f64,
    pub topic_sweeps: usize,
    pub clf_epochs: usize,
    pub clf_lr: f64,
    pub clf_reg: f64,
    pub clf_labeled: Option<PathBuf>,
    pub entity_max_terms: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub decode_strategy: DecodeKind,
    pub decode_k: usize,
    pub decode_p: f64,
    pub decode_max_new: usize,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        let train = TrainConfig::default();
        let seed = train.seed;
        RunConfig {
            corpus: PathBuf::from("corpus.jsonl"),
            workdir: PathBuf::from("workdir"),
            corpus_format: IngestFormat::Jsonl,
            mode: Mode::Qstn,
            context_len: DEFAULT_CONTEXT_LEN,
            topic_k: 8,
            topic_alpha: None,
            topic_beta: topic::DEFAULT_BETA,
            topic_sweeps: topic::DEFAULT_SWEEPS,
            clf_epochs: query::DEFAULT_EPOCHS,
            clf_lr: query::DEFAULT_LR,
            clf_reg: query::DEFAULT_REG,
            clf_labeled: None,
            entity_max_terms: DEFAULT_MAX_ENTITIES,
            model,
            train,
            decode_strategy: DecodeKind::Greedy,
            decode_k: 10,
            decode_p: 0.9,
            decode_max_new: 40,
            seed,
        }
    }
}

impl RunConfig {
    /// The LDA document-topic prior, defaulting to 50/K when unset.
    pub fn alpha(&self) -> f64 {
        self.topic_alpha.unwrap_or_else(|| topic::default_alpha(self.topic_k))
    }

    /// Propagate the global seed into every stage-level config.
    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.model.seed = seed;
        self.train.seed = seed;
    }
}

type Setter = fn(&mut RunConfig, &str) -> std::result::Result<(), String>;

fn parse_as<T: FromStr>(value: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| e.to_string())
}

fn positive(value: &str) -> std::result::Result<usize, String> {
    let n: usize = parse_as(value)?;
    if n == 0 {
        return Err("must be at least 1".into());
    }
    Ok(n)
}

/// Every recognized key with its parser; the single source of truth for
/// validation, defaults documentation, and grid axes.
const KEYS: &[(&str, Setter)] = &[
    ("paths.corpus", |c, v| {
        c.corpus = PathBuf::from(v);
        Ok(())
    }),
    ("paths.workdir", |c, v| {
        c.workdir = PathBuf::from(v);
        Ok(())
    }),
    ("corpus.format", |c, v| {
        c.corpus_format = v.parse::<IngestFormat>().map_err(|e| e.to_string())?;
        Ok(())
    }),
    ("mode", |c, v| {
        c.mode = v.parse::<Mode>().map_err(|e| e.to_string())?;
        Ok(())
    }),
    ("context.len", |c, v| {
        c.context_len = positive(v)?;
        Ok(())
    }),
    ("topic.k", |c, v| {
        c.topic_k = positive(v)?;
        Ok(())
    }),
    ("topic.alpha", |c, v| {
        c.topic_alpha = Some(parse_as::<f64>(v)?);
        Ok(())
    }),
    ("topic.beta", |c, v| {
        c.topic_beta = parse_as(v)?;
        Ok(())
    }),
    ("topic.sweeps", |c, v| {
        c.topic_sweeps = positive(v)?;
        Ok(())
    }),
    ("clf.epochs", |c, v| {
        c.clf_epochs = positive(v)?;
        Ok(())
    }),
    ("clf.lr", |c, v| {
        c.clf_lr = parse_as(v)?;
        Ok(())
    }),
    ("clf.reg", |c, v| {
        c.clf_reg = parse_as(v)?;
        Ok(())
    }),
    ("clf.labeled", |c, v| {
        c.clf_labeled = if v.is_empty() { None } else { Some(PathBuf::from(v)) };
        Ok(())
    }),
    ("entity.max_terms", |c, v| {
        c.entity_max_terms = positive(v)?;
        Ok(())
    }),
    ("model.n_layers", |c, v| {
        c.model.n_layers = positive(v)?;
        Ok(())
    }),
    ("model.n_heads", |c, v| {
        c.model.n_heads = positive(v)?;
        Ok(())
    }),
    ("model.d_model", |c, v| {
        c.model.d_model = positive(v)?;
        Ok(())
    }),
    ("model.d_ff", |c, v| {
        c.model.d_ff = positive(v)?;
        Ok(())
    }),
    ("model.max_seq_len", |c, v| {
        c.model.max_seq_len = positive(v)?;
        Ok(())
    }),
    ("model.dropout", |c, v| {
        c.model.dropout_rate = parse_as(v)?;
        Ok(())
    }),
    ("model.vocab_size", |c, v| {
        c.model.vocab_size = positive(v)?;
        Ok(())
    }),
    ("train.lr", |c, v| {
        c.train.lr = parse_as(v)?;
        Ok(())
    }),
    ("train.batch_size", |c, v| {
        c.train.batch_size = positive(v)?;
        Ok(())
    }),
    ("train.epochs", |c, v| {
        c.train.epochs = positive(v)?;
        Ok(())
    }),
    ("train.grad_clip", |c, v| {
        c.train.grad_clip = parse_as(v)?;
        Ok(())
    }),
    ("train.mask_mode", |c, v| {
        c.train.mask_mode = match v {
            "response_only" => MaskMode::ResponseOnly,
            "full_sequence" => MaskMode::FullSequence,
            other => return Err(format!("expected response_only|full_sequence, got `{other}`")),
        };
        Ok(())
    }),
    ("decode.strategy", |c, v| {
        c.decode_strategy = v.parse()?;
        Ok(())
    }),
    ("decode.k", |c, v| {
        c.decode_k = positive(v)?;
        Ok(())
    }),
    ("decode.p", |c, v| {
        c.decode_p = parse_as(v)?;
        Ok(())
    }),
    ("decode.max_new_tokens", |c, v| {
        c.decode_max_new = positive(v)?;
        Ok(())
    }),
    ("seed", |c, v| {
        let seed: u64 = parse_as(v)?;
        c.apply_seed(seed);
        Ok(())
    }),
];

fn setter_for(key: &str) -> Option<Setter> {
    KEYS.iter().find(|(k, _)| *k == key).map(|(_, s)| *s)
}

/// One grid axis: a base key and the raw values it sweeps over.
#[derive(Debug, Clone)]
pub struct GridAxis {
    pub key: String,
    pub values: Vec<String>,
}

/// A parsed configuration file: the base run plus any grid axes.
#[derive(Debug, Clone)]
pub struct ConfigFile {
    pub base: RunConfig,
    pub grid: Vec<GridAxis>,
}

/// One expanded run from the grid (or the sole run when there is no grid).
#[derive(Debug)]
pub struct GridRun {
    /// Human-readable `key=value` assignments for this run; empty without a grid.
    pub label: String,
    pub config: RunConfig,
}

fn resolve_relative(base_dir: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base_dir.join(p.as_path());
    }
}

/// Parse and validate a configuration file, reporting every violation at
/// once. Relative paths are resolved against the config file's directory.
pub fn parse_config(path: &Path) -> Result<ConfigFile> {
    let raw = std::fs::read_to_string(path)
        .map_err(|e| Error::config(format!("cannot read config `{}`: {e}", path.display())))?;
    let mut cfg = RunConfig::default();
    let mut grid: Vec<GridAxis> = Vec::new();
    let mut violations: Vec<String> = Vec::new();
    let mut seen: Vec<String> = Vec::new();

    for (lineno, line) in raw.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let no = lineno + 1;
        let Some((key, value)) = line.split_once('=') else {
            violations.push(format!("line {no}: expected `key = value`, got `{line}`"));
            continue;
        };
        let key = key.trim();
        let value = value.trim();
        if seen.iter().any(|k| k == key) {
            violations.push(format!("line {no}: duplicate key `{key}`"));
            continue;
        }
        seen.push(key.to_string());

        if let Some(base_key) = key.strip_prefix("grid.") {
            let Some(set) = setter_for(base_key) else {
                violations.push(format!("line {no}: unknown grid key `{key}`"));
                continue;
            };
            let values: Vec<String> =
                value.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
            if values.is_empty() {
                violations.push(format!("line {no}: grid key `{key}` needs at least one value"));
                continue;
            }
            // Dry-run each value against a scratch config so type errors
            // surface at parse time, not mid-grid.
            let mut scratch = RunConfig::default();
            for v in &values {
                if let Err(e) = set(&mut scratch, v) {
                    violations.push(format!("line {no}: bad value `{v}` for `{key}`: {e}"));
                }
            }
            grid.push(GridAxis { key: base_key.to_string(), values });
            continue;
        }

        match setter_for(key) {
            Some(set) => {
                if let Err(e) = set(&mut cfg, value) {
                    violations.push(format!("line {no}: bad value for `{key}`: {e}"));
                }
            }
            None => violations.push(format!("line {no}: unknown key `{key}`")),
        }
    }

    if let Err(e) = cfg.model.validate() {
        violations.push(format!("model: {e}"));
    }
    if !violations.is_empty() {
        let mut msg = String::from("invalid configuration:");
        for v in &violations {
            let _ = write!(msg, "\n  {v}");
        }
        return Err(Error::config(msg));
    }

    let dir = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
    resolve_relative(&dir, &mut cfg.corpus);
    resolve_relative(&dir, &mut cfg.workdir);
    if let Some(labeled) = cfg.clf_labeled.as_mut() {
        resolve_relative(&dir, labeled);
    }

    grid.sort_by(|a, b| a.key.cmp(&b.key));
    Ok(ConfigFile { base: cfg, grid })
}

/// Expand the grid into concrete runs: the cartesian product over axes in
/// sorted key order, run `i` writing under `workdir/grid-<i>`.
pub fn expand_grid(file: &ConfigFile) -> Result<Vec<GridRun>> {
    if file.grid.is_empty() {
        return Ok(vec![GridRun { label: String::new(), config: file.base.clone() }]);
    }
    let mut runs = Vec::new();
    let mut picks = vec![0usize; file.grid.len()];
    loop {
        let mut config = file.base.clone();
        let mut label = String::new();
        for (axis, &pick) in file.grid.iter().zip(&picks) {
            let value = &axis.values[pick];
            let set = setter_for(&axis.key).expect("grid axes are validated at parse time");
            set(&mut config, value)
                .map_err(|e| Error::config(format!("grid `{}` = `{value}`: {e}", axis.key)))?;
            if !label.is_empty() {
                label.push(' ');
            }
            let _ = write!(label, "{}={value}", axis.key);
        }
        config.model.validate()?;
        config.workdir = file.base.workdir.join(format!("grid-{}", runs.len() + 1));
        runs.push(GridRun { label, config });

        // Odometer increment over the axis value lists.
        let mut i = picks.len();
        loop {
            if i == 0 {
                return Ok(runs);
            }
            i -= 1;
            picks[i] += 1;
            if picks[i] < file.grid[i].values.len() {
                break;
            }
            picks[i] = 0;
        }
    }
}
