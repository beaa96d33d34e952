use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spikestage::evaluation::{
    compare_ablation, cross_validate, encode_all, export_hypnogram, make_folds, AblationReport, CvReport,
};
use spikestage::filterbank::{BandSet, FilterBank};
use spikestage::model::{save_model, train as fit, ModelState};
use spikestage::signal_io::{
    epochize, format_annotations, ingest_record, load_annotations, Epoch, IngestOptions, RecordFormat, Stage,
    SyntheticScenario,
};
use spikestage::spike_encoder::{read_feature_file, write_feature_file, FeatureEpoch};

use crate::config::RunConfig;
use crate::CliError;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub subject_id: String,
    /// Relative to the manifest's directory unless absolute.
    pub record: PathBuf,
    pub annotations: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub channel: String,
    pub sample_rate_hz: u32,
    pub records: Vec<ManifestEntry>,
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::data(format!("cannot write {}", path.display()), e))
}

fn mkdir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| CliError::data(format!("cannot create {}", path.display()), e))
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable report") + "\n"
}

/// Fresh `<out>/<command>-<timestamp>` directory holding the resolved config.
fn run_dir(cfg: &RunConfig, command: &str) -> Result<PathBuf, CliError> {
    let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
    let base = cfg.out.join(format!("{command}-{stamp}"));
    let mut dir = base.clone();
    let mut n = 2;
    while dir.exists() {
        dir = PathBuf::from(format!("{}-{n}", base.display()));
        n += 1;
    }
    mkdir(&dir)?;
    write(&dir.join("resolved_config.json"), cfg.resolved_json())?;
    Ok(dir)
}

fn read_manifest(path: &Path) -> Result<Manifest, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::data(format!("cannot read {}", path.display()), e))?;
    let mut m: Manifest =
        serde_json::from_str(&text).map_err(|e| CliError::data(format!("malformed manifest {}", path.display()), e))?;
    let root = path.parent().unwrap_or(Path::new("."));
    for r in &mut m.records {
        r.record = root.join(&r.record);
        r.annotations = root.join(&r.annotations);
    }
    Ok(m)
}

/// Confirms the command has something to read, without reading it all.
pub fn check_data_source(cfg: &RunConfig, command: &str) -> Result<(), CliError> {
    if command == "synth" {
        return match cfg.scenario {
            Some(_) => Ok(()),
            None => Err(CliError::Validation("synth needs the synthetic spec key synth.stages".into())),
        };
    }
    if cfg.features_dir.is_some() && command != "encode" && command != "ablate" {
        return Ok(());
    }
    match (&cfg.manifest, &cfg.scenario) {
        (Some(m), _) => {
            for r in read_manifest(m)?.records {
                for p in [&r.record, &r.annotations] {
                    if !p.is_file() {
                        return Err(CliError::Validation(format!("manifest entry {} does not exist", p.display())));
                    }
                }
            }
            Ok(())
        }
        (None, Some(_)) => Ok(()),
        (None, None) => Err(CliError::Validation(
            "no data source: set data.manifest, synth.stages or features.dir".into(),
        )),
    }
}

fn load_epochs(cfg: &RunConfig) -> Result<Vec<Epoch>, CliError> {
    let mut epochs = Vec::new();
    if let Some(path) = &cfg.manifest {
        let opts = IngestOptions {
            sample_rate_hz: cfg.sample_rate_hz,
            resample: cfg.resample,
            subject_id: None,
        };
        for r in read_manifest(path)?.records {
            let opts = IngestOptions {
                subject_id: Some(r.subject_id.clone()),
                ..opts.clone()
            };
            let rec = ingest_record(&r.record, &cfg.channel, RecordFormat::from_path(&r.record), &opts)
                .map_err(|e| CliError::data(r.record.display(), e))?;
            let ann = load_annotations(&r.annotations).map_err(|e| CliError::data(r.annotations.display(), e))?;
            epochs.extend(epochize(&rec, Some(&ann)).map_err(|e| CliError::data(r.record.display(), e))?);
        }
    } else if let Some(sc) = &cfg.scenario {
        for (rec, stages) in sc.generate()? {
            let ann: Vec<Option<Stage>> = stages.into_iter().map(Some).collect();
            epochs.extend(epochize(&rec, Some(&ann))?);
        }
    } else {
        check_data_source(cfg, "load")?;
    }
    Ok(epochs)
}

fn load_bands(cfg: &RunConfig) -> Result<Vec<BandSet>, CliError> {
    let epochs = load_epochs(cfg)?;
    let bank = FilterBank::new(cfg.filter)?;
    Ok(bank.decompose_all(&epochs)?)
}

fn load_features(cfg: &RunConfig) -> Result<Vec<FeatureEpoch>, CliError> {
    let Some(dir) = &cfg.features_dir else {
        return Ok(encode_all(&load_bands(cfg)?, &cfg.encoder)?);
    };
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CliError::data(dir.display(), e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "f32"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| read_feature_file(p).map(|(f, _)| f).map_err(|e| CliError::data(p.display(), e)))
        .collect()
}

fn stage_counts<'a>(stages: impl Iterator<Item = &'a Option<Stage>>) -> String {
    let mut counts = [0usize; 5];
    for s in stages.flatten() {
        counts[s.index()] += 1;
    }
    Stage::ALL
        .iter()
        .map(|s| format!("{s} {}", counts[s.index()]))
        .collect::<Vec<_>>()
        .join(", ")
}

pub fn synth(cfg: &RunConfig) -> Result<(), CliError> {
    check_data_source(cfg, "synth")?;
    let sc = cfg.scenario.as_ref().expect("checked");
    mkdir(&cfg.out)?;
    let mut manifest = Manifest {
        channel: sc.channel.clone(),
        sample_rate_hz: sc.sample_rate_hz,
        records: Vec::new(),
    };
    for (i, (rec, stages)) in sc.generate()?.into_iter().enumerate() {
        let id = SyntheticScenario::subject_id(i);
        let mut csv = String::with_capacity(rec.samples.len() * 12);
        csv.push_str(&sc.channel);
        csv.push('\n');
        for v in &rec.samples {
            csv.push_str(&format!("{v}\n"));
        }
        let record = PathBuf::from(format!("{id}.csv"));
        let annotations = PathBuf::from(format!("{id}.annotations.txt"));
        write(&cfg.out.join(&record), csv)?;
        let ann: Vec<Option<Stage>> = stages.into_iter().map(Some).collect();
        write(&cfg.out.join(&annotations), format_annotations(&ann))?;
        manifest.records.push(ManifestEntry {
            subject_id: id,
            record,
            annotations,
        });
    }
    write(&cfg.out.join("scenario.txt"), sc.to_text())?;
    write(&cfg.out.join(MANIFEST), to_json(&manifest))?;
    println!(
        "wrote {} records of {} epochs to {}",
        manifest.records.len(),
        sc.stages.len(),
        cfg.out.display()
    );
    Ok(())
}

pub fn encode(cfg: &RunConfig) -> Result<(), CliError> {
    let bands = load_bands(cfg)?;
    let scored: Vec<BandSet> = bands.into_iter().filter(|b| b.stage.is_some()).collect();
    let features = encode_all(&scored, &cfg.encoder)?;
    let dir = run_dir(cfg, "encode")?;
    let fdir = dir.join("features");
    mkdir(&fdir)?;
    for f in &features {
        let base = fdir.join(format!("{}_{:05}", f.subject_id, f.epoch_index));
        write_feature_file(&base, f, &cfg.encoder).map_err(|e| CliError::data(base.display(), e))?;
    }
    let summary = format!(
        "encoded {} epochs ({}) with the {} encoder into {}",
        features.len(),
        stage_counts(features.iter().map(|f| &f.stage)),
        cfg.encoder.arm.name(),
        fdir.display()
    );
    write(&dir.join("summary.txt"), format!("{summary}\n"))?;
    println!("{summary}");
    Ok(())
}

pub fn train(cfg: &RunConfig) -> Result<(), CliError> {
    let features: Vec<FeatureEpoch> = load_features(cfg)?.into_iter().filter(|f| f.stage.is_some()).collect();
    let model = ModelState::new(cfg.model, cfg.seed)?;
    let outcome = fit(model, &features, &cfg.train)?;
    let dir = run_dir(cfg, "train")?;
    save_model(&outcome.model, &dir.join("model.bin")).map_err(|e| CliError::data("saving model", e))?;
    write(&dir.join("loss_trace.csv"), outcome.trace_csv())?;
    let last = outcome.trace.last().expect("at least one epoch");
    println!(
        "trained on {} epochs; final mean loss {:.4}, train accuracy {:.4}; run directory {}",
        features.len(),
        last.mean_loss,
        last.train_accuracy,
        dir.display()
    );
    Ok(())
}

fn subjects_of(features: &[FeatureEpoch]) -> Vec<String> {
    let mut s: Vec<String> = features.iter().map(|f| f.subject_id.clone()).collect();
    s.sort();
    s.dedup();
    s
}

fn write_cv(dir: &Path, report: &CvReport) -> Result<(), CliError> {
    mkdir(dir)?;
    write(&dir.join("report.txt"), report.to_text())?;
    write(&dir.join("report.json"), to_json(report))?;
    for f in &report.folds {
        write(&dir.join(format!("fold{}_trace.csv", f.fold)), trace_csv(&f.trace))?;
    }
    for (i, m) in report.models.iter().enumerate() {
        save_model(m, &dir.join(format!("fold{i}.model"))).map_err(|e| CliError::data("saving model", e))?;
    }
    let hdir = dir.join("hypnograms");
    mkdir(&hdir)?;
    for subject in report.plan.assignment.keys() {
        let preds = report.subject_predictions(subject);
        let truth: Vec<Stage> = preds.iter().map(|p| p.truth).collect();
        let pred: Vec<Stage> = preds.iter().map(|p| p.pred).collect();
        export_hypnogram(&truth, &pred, &hdir.join(subject))?;
    }
    Ok(())
}

fn trace_csv(trace: &[spikestage::model::EpochStats]) -> String {
    let mut out = String::from("epoch,mean_loss,train_accuracy\n");
    for s in trace {
        out.push_str(&format!("{},{},{}\n", s.epoch, s.mean_loss, s.train_accuracy));
    }
    out
}

pub fn cv(cfg: &RunConfig) -> Result<(), CliError> {
    let features = load_features(cfg)?;
    let plan = make_folds(&subjects_of(&features), cfg.folds, cfg.seed)?;
    let report = cross_validate(&features, &cfg.encoder, &cfg.model, &cfg.train, &plan)?;
    let dir = run_dir(cfg, "cv")?;
    write_cv(&dir, &report)?;
    print!("{}", report.to_text());
    println!("run directory {}", dir.display());
    Ok(())
}

pub fn ablate(cfg: &RunConfig) -> Result<(), CliError> {
    let bands = load_bands(cfg)?;
    let mut subjects: Vec<String> = bands.iter().map(|b| b.subject_id.clone()).collect();
    subjects.sort();
    subjects.dedup();
    let plan = make_folds(&subjects, cfg.folds, cfg.seed)?;
    let report = compare_ablation(&bands, &plan, &cfg.encoder, cfg.ablation_cutoff, &cfg.model, &cfg.train)?;
    let dir = run_dir(cfg, "ablate")?;
    write_cv(&dir.join("half_gaussian"), &report.half_gaussian)?;
    write_cv(&dir.join("threshold"), &report.threshold)?;
    write(&dir.join("ablation.txt"), report.to_text())?;
    write(&dir.join("ablation.json"), to_json(&report))?;
    print!("{}", report.to_text());
    println!("run directory {}", dir.display());
    Ok(())
}

pub fn report(dir: &Path) -> Result<(), CliError> {
    let read = |name: &str| std::fs::read_to_string(dir.join(name)).ok();
    if let Some(text) = read("ablation.json") {
        let r: AblationReport =
            serde_json::from_str(&text).map_err(|e| CliError::data(dir.join("ablation.json").display(), e))?;
        print!("{}", r.to_text());
    } else if let Some(text) = read("report.json") {
        let r: CvReport =
            serde_json::from_str(&text).map_err(|e| CliError::data(dir.join("report.json").display(), e))?;
        print!("{}", r.to_text());
    } else if let Some(text) = read("loss_trace.csv") {
        print!("{text}");
    } else {
        return Err(CliError::Data(format!("{} holds no report, ablation or training trace", dir.display())));
    }
    Ok(())
}
