//! Flat key-value experiment configuration with dotted sections.
//! Diff-able, hand-editable, and written back verbatim as `config.lock`
//! with every default materialized.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use unlearn_core::data::{AugmentationPolicy, SplitMode, CIFAR10_CLASS_NAMES};
use unlearn_core::error::{Error, Result};
use unlearn_core::rng::derive_seed;
use unlearn_core::unlearn::{MaskMode, Method, TrainConfig, UnlearnConfig};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DatasetSpec {
    Cifar10,
    Cifar100,
    /// Deterministic per-class-balanced subsample of the CIFAR-10 train set.
    ToySubset(usize),
}

impl DatasetSpec {
    fn parse(s: &str) -> Result<Self> {
        match s {
            "cifar10" => Ok(DatasetSpec::Cifar10),
            "cifar100" => Ok(DatasetSpec::Cifar100),
            other => {
                if let Some(inner) = other.strip_prefix("toy-subset(").and_then(|r| r.strip_suffix(')')) {
                    let n: usize = inner
                        .parse()
                        .map_err(|_| Error::config(format!("bad toy-subset size: {inner}")))?;
                    Ok(DatasetSpec::ToySubset(n))
                } else {
                    Err(Error::config(format!("unknown dataset: {other}")))
                }
            }
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            DatasetSpec::Cifar100 => 100,
            _ => 10,
        }
    }

    pub fn display(&self) -> String {
        match self {
            DatasetSpec::Cifar10 => "cifar10".into(),
            DatasetSpec::Cifar100 => "cifar100".into(),
            DatasetSpec::ToySubset(n) => format!("toy-subset({n})"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub arch: String,
    pub data_dir: Option<PathBuf>,
    pub synthetic_fixture: bool,
    pub output_dir: PathBuf,
    pub run_seed: u64,
    pub method: Method,
    pub split_mode: SplitMode,
    pub split_seed: u64,
    pub train: TrainConfig,
    pub train_augment: bool,
    pub unlearn: UnlearnConfig,
    pub pair_augment: bool,
    pub reference_report: Option<PathBuf>,
}

fn parse_bool(v: &str, key: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::config(format!("{key}: expected true|false, got {v}"))),
    }
}

fn parse_num<T: std::str::FromStr>(v: &str, key: &str) -> Result<T> {
    v.parse().map_err(|_| Error::config(format!("{key}: cannot parse value {v}")))
}

fn parse_augment(v: &str, key: &str) -> Result<bool> {
    match v {
        "standard" => Ok(true),
        "none" => Ok(false),
        _ => Err(Error::config(format!("{key}: expected standard|none, got {v}"))),
    }
}

/// Class value: a CIFAR-10 class name or a numeric label.
fn parse_class(v: &str) -> Result<usize> {
    if let Some(i) = CIFAR10_CLASS_NAMES.iter().position(|&n| n == v) {
        return Ok(i);
    }
    v.parse().map_err(|_| Error::config(format!("split.class: unknown class {v}")))
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::input(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::config(format!(
                    "config line {}: expected key = value, got {raw:?}",
                    lineno + 1
                )));
            };
            if kv.insert(key.trim().to_string(), value.trim().to_string()).is_some() {
                return Err(Error::config(format!("config line {}: duplicate key", lineno + 1)));
            }
        }
        Self::from_map(kv)
    }

    fn from_map(mut kv: BTreeMap<String, String>) -> Result<Self> {
        let mut take = |k: &str| kv.remove(k);
        let dataset = match take("dataset") {
            Some(v) => DatasetSpec::parse(&v)?,
            None => DatasetSpec::ToySubset(5000),
        };
        let arch = take("arch").unwrap_or_else(|| "small-cnn".to_string());
        unlearn_core::backend::ArchKind::parse(&arch)?;
        let data_dir = take("data.dir").map(PathBuf::from);
        let synthetic_fixture = match take("data.synthetic_fixture") {
            Some(v) => parse_bool(&v, "data.synthetic_fixture")?,
            None => false,
        };
        let output_dir = PathBuf::from(take("output_dir").unwrap_or_else(|| "runs/default".into()));
        let run_seed: u64 = match take("run_seed") {
            Some(v) => parse_num(&v, "run_seed")?,
            None => 0,
        };
        let method = Method::parse(&take("method").unwrap_or_else(|| "wss-cl".into()))?;

        let split_mode = match take("split.mode").as_deref() {
            None | Some("random") => {
                let fraction = match take("split.fraction") {
                    Some(v) => parse_num(&v, "split.fraction")?,
                    None => 0.1,
                };
                SplitMode::Random { fraction }
            }
            Some("class") => {
                let class = match take("split.class") {
                    Some(v) => parse_class(&v)?,
                    None => return Err(Error::config("split.mode=class needs split.class")),
                };
                // consume an unused fraction if present
                take("split.fraction");
                SplitMode::Class { class }
            }
            Some(other) => {
                return Err(Error::config(format!("split.mode: expected random|class, got {other}")))
            }
        };
        let split_seed: u64 = match take("split.seed") {
            Some(v) => parse_num(&v, "split.seed")?,
            None => 1,
        };

        let mut train = TrainConfig { seed: run_seed, ..Default::default() };
        if let Some(v) = take("train.epochs") {
            train.epochs = parse_num(&v, "train.epochs")?;
        }
        if let Some(v) = take("train.lr") {
            train.lr = parse_num(&v, "train.lr")?;
        }
        if let Some(v) = take("train.momentum") {
            train.momentum = parse_num(&v, "train.momentum")?;
        }
        if let Some(v) = take("train.weight_decay") {
            train.weight_decay = parse_num(&v, "train.weight_decay")?;
        }
        if let Some(v) = take("train.batch_size") {
            train.batch_size = parse_num(&v, "train.batch_size")?;
        }
        let train_augment = match take("train.augment") {
            Some(v) => parse_augment(&v, "train.augment")?,
            None => true,
        };
        train.augment = train_augment.then(AugmentationPolicy::default);

        let mut ul = UnlearnConfig { seed: run_seed, ..Default::default() };
        if let Some(v) = take("unlearn.tau") {
            ul.tau = parse_num(&v, "unlearn.tau")?;
        }
        if let Some(v) = take("unlearn.phase1_epochs") {
            ul.phase1_epochs = parse_num(&v, "unlearn.phase1_epochs")?;
        }
        if let Some(v) = take("unlearn.phase2_epochs") {
            ul.phase2_epochs = parse_num(&v, "unlearn.phase2_epochs")?;
        }
        if let Some(v) = take("unlearn.phase1_lr") {
            ul.phase1_lr = parse_num(&v, "unlearn.phase1_lr")?;
        }
        if let Some(v) = take("unlearn.phase2_lr") {
            ul.phase2_lr = parse_num(&v, "unlearn.phase2_lr")?;
        }
        if let Some(v) = take("unlearn.momentum") {
            ul.momentum = parse_num(&v, "unlearn.momentum")?;
        }
        if let Some(v) = take("unlearn.weight_decay") {
            ul.weight_decay = parse_num(&v, "unlearn.weight_decay")?;
        }
        if let Some(v) = take("unlearn.batch_size_forget") {
            ul.batch_size_forget = parse_num(&v, "unlearn.batch_size_forget")?;
        }
        if let Some(v) = take("unlearn.batch_size_retain") {
            ul.batch_size_retain = parse_num(&v, "unlearn.batch_size_retain")?;
        }
        if let Some(v) = take("unlearn.hard_sparsity") {
            ul.hard_sparsity = parse_num(&v, "unlearn.hard_sparsity")?;
        }
        if let Some(v) = take("unlearn.alternation_ratio") {
            ul.alternation_ratio = parse_num(&v, "unlearn.alternation_ratio")?;
        }
        if let Some(v) = take("unlearn.mask_ce") {
            ul.mask_ce = parse_bool(&v, "unlearn.mask_ce")?;
        }
        let pair_augment = match take("unlearn.pair_augment") {
            Some(v) => parse_augment(&v, "unlearn.pair_augment")?,
            None => true,
        };
        ul.pair_augment = if pair_augment {
            AugmentationPolicy::default()
        } else {
            AugmentationPolicy::identity()
        };
        // mask_mode is derived from the method; a manual override applies
        // to direct phase runs.
        if let Some(v) = take("unlearn.mask_mode") {
            ul.mask_mode = match v.as_str() {
                "none" => MaskMode::None,
                "hard" => MaskMode::Hard,
                "soft" => MaskMode::Soft,
                other => return Err(Error::config(format!("unlearn.mask_mode: {other}"))),
            };
        }

        let reference_report = take("reference_report").map(PathBuf::from);

        if let Some(unknown) = kv.keys().next() {
            return Err(Error::config(format!("unknown config key: {unknown}")));
        }

        let cfg = ExperimentConfig {
            dataset,
            arch,
            data_dir,
            synthetic_fixture,
            output_dir,
            run_seed,
            method,
            split_mode,
            split_seed,
            train,
            train_augment,
            unlearn: ul,
            pair_augment,
            reference_report,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.unlearn.validate()?;
        if let SplitMode::Class { class } = self.split_mode {
            if class >= self.dataset.num_classes() {
                return Err(Error::config(format!(
                    "split.class {class} out of range for {}",
                    self.dataset.display()
                )));
            }
        }
        if self.dataset == DatasetSpec::Cifar100 && self.arch == "small-cnn" {
            // allowed; only num_classes must match and it does by construction
        }
        Ok(())
    }

    /// Apply command-line overrides; seeds cascade into the phase configs.
    pub fn apply_overrides(
        &mut self,
        output: Option<PathBuf>,
        seed: Option<u64>,
        method: Option<&str>,
    ) -> Result<()> {
        if let Some(o) = output {
            self.output_dir = o;
        }
        if let Some(s) = seed {
            self.run_seed = s;
            self.train.seed = s;
            self.unlearn.seed = s;
        }
        if let Some(m) = method {
            self.method = Method::parse(m)?;
        }
        Ok(())
    }

    /// Dataset root: `data.dir`, then the UNLEARN_DATA_DIR environment
    /// variable, then `./data`.
    pub fn resolve_data_dir(&self) -> PathBuf {
        if let Some(d) = &self.data_dir {
            return d.clone();
        }
        if let Ok(env) = std::env::var("UNLEARN_DATA_DIR") {
            if !env.is_empty() {
                return PathBuf::from(env);
            }
        }
        PathBuf::from("data")
    }

    pub fn mia_seed(&self) -> u64 {
        derive_seed(self.run_seed, "mia", 0, 0)
    }

    /// The resolved configuration in the same flat format, for `config.lock`.
    pub fn to_lock_string(&self) -> String {
        let mut out = String::new();
        let mut push = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        push("dataset", self.dataset.display());
        push("arch", self.arch.clone());
        if let Some(d) = &self.data_dir {
            push("data.dir", d.display().to_string());
        }
        push("data.synthetic_fixture", self.synthetic_fixture.to_string());
        push("output_dir", self.output_dir.display().to_string());
        push("run_seed", self.run_seed.to_string());
        push("method", self.method.name().to_string());
        match self.split_mode {
            SplitMode::Random { fraction } => {
                push("split.mode", "random".into());
                push("split.fraction", format!("{fraction}"));
            }
            SplitMode::Class { class } => {
                push("split.mode", "class".into());
                push("split.class", class.to_string());
            }
        }
        push("split.seed", self.split_seed.to_string());
        push("train.epochs", self.train.epochs.to_string());
        push("train.lr", format!("{}", self.train.lr));
        push("train.momentum", format!("{}", self.train.momentum));
        push("train.weight_decay", format!("{}", self.train.weight_decay));
        push("train.batch_size", self.train.batch_size.to_string());
        push("train.augment", if self.train_augment { "standard".into() } else { "none".into() });
        push("unlearn.tau", format!("{}", self.unlearn.tau));
        push("unlearn.phase1_epochs", self.unlearn.phase1_epochs.to_string());
        push("unlearn.phase1_lr", format!("{}", self.unlearn.phase1_lr));
        push("unlearn.phase2_epochs", self.unlearn.phase2_epochs.to_string());
        push("unlearn.phase2_lr", format!("{}", self.unlearn.phase2_lr));
        push("unlearn.momentum", format!("{}", self.unlearn.momentum));
        push("unlearn.weight_decay", format!("{}", self.unlearn.weight_decay));
        push("unlearn.batch_size_forget", self.unlearn.batch_size_forget.to_string());
        push("unlearn.batch_size_retain", self.unlearn.batch_size_retain.to_string());
        push("unlearn.hard_sparsity", format!("{}", self.unlearn.hard_sparsity));
        push("unlearn.alternation_ratio", self.unlearn.alternation_ratio.to_string());
        push("unlearn.mask_ce", self.unlearn.mask_ce.to_string());
        push(
            "unlearn.pair_augment",
            if self.pair_augment { "standard".into() } else { "none".into() },
        );
        if let Some(r) = &self.reference_report {
            push("reference_report", r.display().to_string());
        }
        out
    }
}
