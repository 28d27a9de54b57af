//! The six experiment commands. Every run is reconstructible from the
//! config file and the dataset files: resolved config, split manifest,
//! checkpoints, masks and reports are all persisted under `output_dir`.

use std::fs;
use std::path::{Path, PathBuf};

use unlearn_core::backend::checkpoint::{load_checkpoint, save_checkpoint, save_mask};
use unlearn_core::backend::{build_classifier, ArchKind, ArchitectureSpec, Classifier};
use unlearn_core::data::{
    load_cifar10, load_cifar100, load_split_manifest, make_forget_split, save_split_manifest,
    subset_dataset, synthetic, toy_subset_indices, ForgetSplit, LabeledDataset, SplitMode,
    CIFAR10_CLASS_NAMES,
};
use unlearn_core::error::{Error, Result};
use unlearn_core::eval::{evaluate_all, MetricsReport};
use unlearn_core::unlearn::{
    ft_baseline, ga_baseline, retrain_gold, rl_baseline, wss_cl_unlearn, Method, PhaseReport,
};

use crate::config::{DatasetSpec, ExperimentConfig};
use crate::table;

pub struct LoadedData {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
}

fn fixture_spec(cfg: &ExperimentConfig) -> synthetic::SyntheticSpec {
    let n_train = match cfg.dataset {
        DatasetSpec::ToySubset(n) => n + (n / 5).max(200),
        _ => 50_000,
    };
    synthetic::SyntheticSpec {
        n_train,
        n_test: (n_train / 3).clamp(500, 10_000),
        ..Default::default()
    }
}

/// Load the configured dataset, materializing the synthetic fixture first
/// when it is enabled and the real files are absent.
pub fn load_data(cfg: &ExperimentConfig) -> Result<LoadedData> {
    let dir = cfg.resolve_data_dir();
    if cfg.synthetic_fixture
        && matches!(cfg.dataset, DatasetSpec::Cifar10 | DatasetSpec::ToySubset(_))
        && !dir.join("data_batch_1.bin").exists()
        && !dir.join("cifar-10-batches-bin").join("data_batch_1.bin").exists()
    {
        eprintln!("note: writing synthetic fixture into {}", dir.display());
        synthetic::write_synthetic_cifar10(&dir, &fixture_spec(cfg))?;
    }
    let (train, test) = match cfg.dataset {
        DatasetSpec::Cifar100 => load_cifar100(&dir)?,
        _ => load_cifar10(&dir)?,
    };
    let (train, test) = match cfg.dataset {
        DatasetSpec::ToySubset(n) => {
            let idx = toy_subset_indices(&train, n)?;
            (subset_dataset(&train, &idx, &format!("toy-subset({n})")), test)
        }
        _ => (train, test),
    };
    Ok(LoadedData { train, test })
}

fn arch_spec(cfg: &ExperimentConfig) -> Result<ArchitectureSpec> {
    ArchitectureSpec::new(ArchKind::parse(&cfg.arch)?, cfg.dataset.num_classes())
}

pub struct OutputPaths {
    root: PathBuf,
}

impl OutputPaths {
    pub fn new(root: &Path) -> Result<Self> {
        for sub in ["checkpoints", "reports", "tables", "masks", "logs"] {
            fs::create_dir_all(root.join(sub))?;
        }
        Ok(OutputPaths { root: root.to_path_buf() })
    }

    pub fn config_lock(&self) -> PathBuf {
        self.root.join("config.lock")
    }
    pub fn split_manifest(&self) -> PathBuf {
        self.root.join("split.manifest")
    }
    pub fn checkpoint(&self, name: &str) -> PathBuf {
        self.root.join("checkpoints").join(format!("{name}.ckpt"))
    }
    pub fn mask(&self, name: &str) -> PathBuf {
        self.root.join("masks").join(format!("{name}.mask"))
    }
    pub fn report(&self, name: &str) -> PathBuf {
        self.root.join("reports").join(format!("{name}.json"))
    }
    pub fn table(&self, name: &str) -> PathBuf {
        self.root.join("tables").join(name.to_string())
    }
    pub fn log(&self, name: &str) -> PathBuf {
        self.root.join("logs").join(format!("{name}.txt"))
    }
}

fn write_lock(cfg: &ExperimentConfig, paths: &OutputPaths) -> Result<()> {
    fs::write(paths.config_lock(), cfg.to_lock_string())?;
    Ok(())
}

fn write_train_log(path: &Path, report: &PhaseReport) -> Result<()> {
    let mut log = String::from("epoch,ce_loss\n");
    for (i, l) in report.ce_loss.iter().enumerate() {
        log.push_str(&format!("{},{:.6}\n", i + 1, l));
    }
    log.push_str(&format!("seconds,{:.3}\n", report.seconds));
    fs::write(path, log)?;
    Ok(())
}

/// Validate dataset files, print a summary, and cache nothing: loading is
/// cheap enough to redo per run and keeps runs hermetic.
pub fn cmd_prepare_data(cfg: &ExperimentConfig) -> Result<()> {
    let data = load_data(cfg)?;
    let counts = data.train.class_counts();
    println!(
        "train: {} ({} samples, {} classes), test: {} samples",
        data.train.name,
        data.train.len(),
        data.train.num_classes,
        data.test.len()
    );
    println!("per-class train counts: {counts:?}");
    println!(
        "normalization mean {:?} std {:?}",
        data.train.norm_mean, data.train.norm_std
    );
    Ok(())
}

/// Train the original model on the full (possibly toy-subset) train set.
pub fn cmd_train_original(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let data = load_data(cfg)?;
    let paths = OutputPaths::new(&cfg.output_dir)?;
    write_lock(cfg, &paths)?;
    let spec = arch_spec(cfg)?;
    let mut model = build_classifier(&spec, cfg.train.seed)?;
    let all: Vec<usize> = (0..data.train.len()).collect();
    eprintln!(
        "training original {} on {} ({} samples, {} epochs)",
        cfg.arch,
        data.train.name,
        all.len(),
        cfg.train.epochs
    );
    let report = unlearn_core::unlearn::train_ce(&mut model, &data.train, &all, &cfg.train, None)?;
    for (i, l) in report.ce_loss.iter().enumerate() {
        eprintln!("  epoch {}: ce {:.4}", i + 1, l);
    }
    let out = paths.checkpoint("original");
    save_checkpoint(&out, &model, None)?;
    write_train_log(&paths.log("train-original"), &report)?;
    println!("checkpoint: {}", out.display());
    Ok(out)
}

/// Load the persisted split if present (validating it matches the config),
/// otherwise create and persist it.
fn obtain_split(cfg: &ExperimentConfig, train: &LabeledDataset, paths: &OutputPaths) -> Result<ForgetSplit> {
    let manifest = paths.split_manifest();
    if manifest.exists() {
        let split = load_split_manifest(&manifest)?;
        if split.mode != cfg.split_mode || split.seed != cfg.split_seed {
            return Err(Error::config(format!(
                "persisted split {} disagrees with the config ({:?} seed {} vs {:?} seed {})",
                manifest.display(),
                split.mode,
                split.seed,
                cfg.split_mode,
                cfg.split_seed
            )));
        }
        if split.forget.len() + split.retain.len() != train.len() {
            return Err(Error::config("persisted split does not match the dataset size"));
        }
        return Ok(split);
    }
    let split = make_forget_split(train, cfg.split_mode, cfg.split_seed)?;
    save_split_manifest(&manifest, &split)?;
    Ok(split)
}

fn load_reference(cfg: &ExperimentConfig, paths: &OutputPaths) -> Option<MetricsReport> {
    let candidate = cfg
        .reference_report
        .clone()
        .unwrap_or_else(|| paths.report("retrain"));
    fs::read_to_string(candidate)
        .ok()
        .and_then(|s| MetricsReport::from_json(&s).ok())
}

/// Run one unlearning method end to end and persist everything.
pub fn cmd_unlearn(cfg: &ExperimentConfig) -> Result<MetricsReport> {
    let data = load_data(cfg)?;
    let paths = OutputPaths::new(&cfg.output_dir)?;
    write_lock(cfg, &paths)?;
    let split = obtain_split(cfg, &data.train, &paths)?;
    if split.forget.is_empty() {
        return Err(Error::config("the configured split has an empty forget set"));
    }
    let method = cfg.method;
    eprintln!(
        "method {} on {} (|forget| {}, |retain| {})",
        method,
        data.train.name,
        split.forget.len(),
        split.retain.len()
    );

    let (model, rte_seconds) = run_method(cfg, &data, &split, method, &paths)?;
    let mut model = model;
    let reference = if method == Method::Retrain { None } else { load_reference(cfg, &paths) };
    let report = evaluate_all(
        &mut model,
        method.name(),
        &data.train,
        &data.test,
        &split,
        rte_seconds,
        cfg.mia_seed(),
        reference.as_ref(),
    )?;
    save_checkpoint(&paths.checkpoint(method.name()), &model, None)?;
    fs::write(paths.report(method.name()), report.to_json()?)?;
    println!(
        "{}: UA {:.2} RA {:.2} TA {:.2} MIA {:.2} RTE {}",
        method,
        report.ua,
        report.ra,
        report.ta,
        report.mia,
        table::fmt_mmss(report.rte_seconds)
    );
    Ok(report)
}

fn run_method(
    cfg: &ExperimentConfig,
    data: &LoadedData,
    split: &ForgetSplit,
    method: Method,
    paths: &OutputPaths,
) -> Result<(Classifier, f64)> {
    let load_original = || -> Result<Classifier> {
        let path = paths.checkpoint("original");
        if !path.exists() {
            return Err(Error::input(format!(
                "missing original checkpoint {}; run train-original first",
                path.display()
            )));
        }
        Ok(load_checkpoint(&path)?.0)
    };
    match method {
        Method::Retrain => {
            let spec = arch_spec(cfg)?;
            let (model, report) = retrain_gold(&spec, &data.train, &split.retain, &cfg.train)?;
            write_train_log(&paths.log("train-retrain"), &report)?;
            Ok((model, report.seconds))
        }
        Method::Ft => {
            let mut model = load_original()?;
            let report = ft_baseline(&mut model, &data.train, &split.retain, &cfg.unlearn)?;
            Ok((model, report.seconds))
        }
        Method::Ga => {
            let mut model = load_original()?;
            let report = ga_baseline(&mut model, &data.train, &split.forget, &cfg.unlearn)?;
            Ok((model, report.seconds))
        }
        Method::Rl => {
            let mut model = load_original()?;
            let report =
                rl_baseline(&mut model, &data.train, &split.forget, &split.retain, &cfg.unlearn)?;
            Ok((model, report.seconds))
        }
        Method::Cl | Method::WsCl | Method::WssCl => {
            let mut model = load_original()?;
            let mut ul = cfg.unlearn.clone();
            ul.mask_mode = method.mask_mode().expect("contrastive method");
            let outcome = wss_cl_unlearn(&mut model, &data.train, split, &ul)?;
            save_mask(&paths.mask(method.name()), &model.spec, &outcome.mask)?;
            eprintln!(
                "  phase1 kl {:?} -> phase2 ce {:?}, cross-cos {:.4} -> {:.4}",
                outcome.phase1.kl_loss,
                outcome.phase2.ce_loss,
                outcome.cross_cosine_before,
                outcome.cross_cosine_after
            );
            Ok((model, outcome.rte_seconds))
        }
    }
}

/// Re-evaluate a persisted checkpoint (RTE is not recomputed; it is read
/// from the method's previous report when present). Besides the unlearning
/// methods, the name `original` evaluates the pre-unlearning checkpoint.
pub fn cmd_evaluate(cfg: &ExperimentConfig, method_name: Option<&str>) -> Result<MetricsReport> {
    let data = load_data(cfg)?;
    let paths = OutputPaths::new(&cfg.output_dir)?;
    let split = obtain_split(cfg, &data.train, &paths)?;
    let name = match method_name {
        Some("original") => "original".to_string(),
        Some(m) => Method::parse(m)?.name().to_string(),
        None => cfg.method.name().to_string(),
    };
    let ckpt = paths.checkpoint(&name);
    if !ckpt.exists() {
        return Err(Error::input(format!("missing checkpoint {}", ckpt.display())));
    }
    let (mut model, _) = load_checkpoint(&ckpt)?;
    let rte = fs::read_to_string(paths.report(&name))
        .ok()
        .and_then(|s| MetricsReport::from_json(&s).ok())
        .map(|r| r.rte_seconds)
        .unwrap_or(0.0);
    let reference = if name == "retrain" { None } else { load_reference(cfg, &paths) };
    let report = evaluate_all(
        &mut model,
        &name,
        &data.train,
        &data.test,
        &split,
        rte,
        cfg.mia_seed(),
        reference.as_ref(),
    )?;
    fs::write(paths.report(&name), report.to_json()?)?;
    println!("{}", report.to_json()?);
    Ok(report)
}

/// Build comparison tables from report files against a retrain reference.
pub fn cmd_compare(
    cfg: &ExperimentConfig,
    report_paths: &[PathBuf],
    reference_path: Option<&Path>,
) -> Result<()> {
    let reference_path = match reference_path {
        Some(p) => p.to_path_buf(),
        None => return Err(Error::config("compare requires --reference (no silent default)")),
    };
    let reference = MetricsReport::from_json(&fs::read_to_string(&reference_path).map_err(
        |e| Error::input(format!("cannot read reference {}: {e}", reference_path.display())),
    )?)?;
    if report_paths.is_empty() {
        return Err(Error::config("compare needs at least one report path"));
    }
    let mut reports = Vec::new();
    for p in report_paths {
        let json = fs::read_to_string(p)
            .map_err(|e| Error::input(format!("cannot read report {}: {e}", p.display())))?;
        reports.push(MetricsReport::from_json(&json)?);
    }
    let md = table::compare_markdown(&reports, &reference);
    let csv = table::compare_csv(&reports, &reference);
    let paths = OutputPaths::new(&cfg.output_dir)?;
    fs::write(paths.table("compare.md"), &md)?;
    fs::write(paths.table("compare.csv"), &csv)?;
    print!("{md}");
    Ok(())
}

/// Class-forgetting sweep: run the configured method once per class and
/// emit a per-class UA/RA/TA table.
pub fn cmd_per_class(cfg: &ExperimentConfig) -> Result<()> {
    let data = load_data(cfg)?;
    let paths = OutputPaths::new(&cfg.output_dir)?;
    write_lock(cfg, &paths)?;
    let k = data.train.num_classes;
    fs::create_dir_all(cfg.output_dir.join("reports").join("per-class"))?;
    let mut reports = Vec::with_capacity(k);
    for class in 0..k {
        let split = make_forget_split(&data.train, SplitMode::Class { class }, cfg.split_seed)?;
        let method = cfg.method;
        let (mut model, rte) = run_method(cfg, &data, &split, method, &paths)?;
        let report = evaluate_all(
            &mut model,
            method.name(),
            &data.train,
            &data.test,
            &split,
            rte,
            cfg.mia_seed(),
            None,
        )?;
        let out = cfg
            .output_dir
            .join("reports")
            .join("per-class")
            .join(format!("{}-class{}.json", method.name(), class));
        fs::write(out, report.to_json()?)?;
        eprintln!(
            "class {class}: UA {:.2} RA {:.2} TA {:.2}",
            report.ua, report.ra, report.ta
        );
        reports.push(report);
    }
    let names: Vec<String> = if k == 10 {
        CIFAR10_CLASS_NAMES.iter().map(|s| s.to_string()).collect()
    } else {
        (0..k).map(|c| c.to_string()).collect()
    };
    fs::write(paths.table("per_class.md"), table::per_class_markdown(&names, &reports))?;
    fs::write(paths.table("per_class.csv"), table::per_class_csv(&names, &reports))?;
    println!("{}", table::per_class_markdown(&names, &reports));
    Ok(())
}
