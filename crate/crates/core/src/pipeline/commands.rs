//! Subcommand bodies. Each run writes into `<output_dir>/<command>-<digest>`,
//! where the digest is taken over the configuration, so identical configs
//! land in the same place. Work happens in a hidden staging directory that is
//! renamed into place only on success; files outside the run directory
//! (data, models) are staged next to their target the same way.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::PipelineConfig;
use super::report;
use super::{derive_seed, Experiment, Split};
use crate::corpus::{self, ForecastRecord, Question};
use crate::error::{Error, Result};
use crate::ranker::{self, Checkpoint, TrainingMeta};
use crate::synth;
use crate::topics::{LdaModel, TopicVector};
use crate::tournament;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

fn digest_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

/// Enough to re-run a command bit-identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config_sha256: String,
    pub config: PipelineConfig,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

/// Staged run directory. Dropping it without [`RunDir::commit`] removes
/// everything it staged.
pub struct RunDir {
    command: String,
    final_dir: PathBuf,
    staging: PathBuf,
    outputs: Vec<String>,
    external: Vec<(PathBuf, PathBuf)>,
    inputs: Vec<FileDigest>,
    seeds: BTreeMap<String, u64>,
    committed: bool,
}

impl RunDir {
    pub fn create(cfg: &PipelineConfig, command: &str) -> Result<Self> {
        let name = format!("{command}-{}", &cfg.digest()[..12]);
        let final_dir = cfg.output_dir.join(&name);
        let staging = cfg.output_dir.join(format!(".{name}.partial"));
        if staging.exists() {
            fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
        }
        fs::create_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
        let mut seeds = BTreeMap::new();
        seeds.insert("seed".to_string(), cfg.seed);
        Ok(RunDir {
            command: command.to_string(),
            final_dir,
            staging,
            outputs: Vec::new(),
            external: Vec::new(),
            inputs: Vec::new(),
            seeds,
            committed: false,
        })
    }

    /// Where the run ends up after commit.
    pub fn final_dir(&self) -> &Path {
        &self.final_dir
    }

    pub fn record_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(FileDigest {
            path: path.display().to_string(),
            sha256: digest_file(path)?,
        });
        Ok(())
    }

    pub fn record_seed(&mut self, name: &str, seed: u64) {
        self.seeds.insert(name.to_string(), seed);
    }

    /// Writes `name` inside the run directory.
    pub fn write(&mut self, name: &str, body: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
        let path = self.staging.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        write_file(&path, body)?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    /// Writes `target` outside the run directory; it appears on commit.
    pub fn write_external(&mut self, target: &Path, body: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
        let file_name = target
            .file_name()
            .ok_or_else(|| Error::Usage(format!("{} is not a file path", target.display())))?;
        let parent = target.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        let tmp = parent.join(format!(".{}.partial", file_name.to_string_lossy()));
        self.external.push((tmp.clone(), target.to_path_buf()));
        write_file(&tmp, body)
    }

    pub fn commit(mut self, cfg: &PipelineConfig) -> Result<PathBuf> {
        let mut outputs = Vec::new();
        for name in &self.outputs {
            outputs.push(FileDigest {
                path: name.clone(),
                sha256: digest_file(&self.staging.join(name))?,
            });
        }
        for (tmp, target) in &self.external {
            outputs.push(FileDigest {
                path: target.display().to_string(),
                sha256: digest_file(tmp)?,
            });
        }
        let manifest = Manifest {
            command: self.command.clone(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_sha256: cfg.digest(),
            config: cfg.clone(),
            seeds: std::mem::take(&mut self.seeds),
            inputs: std::mem::take(&mut self.inputs),
            outputs,
        };
        write_file(&self.staging.join("manifest.json"), |w| {
            serde_json::to_writer_pretty(&mut *w, &manifest)?;
            w.write_all(b"\n").map_err(|e| Error::io("manifest.json", e))
        })?;

        for (tmp, target) in &self.external {
            fs::rename(tmp, target).map_err(|e| Error::io(target, e))?;
        }
        if self.final_dir.exists() {
            fs::remove_dir_all(&self.final_dir).map_err(|e| Error::io(&self.final_dir, e))?;
        }
        fs::rename(&self.staging, &self.final_dir).map_err(|e| Error::io(&self.final_dir, e))?;
        self.committed = true;
        Ok(self.final_dir.clone())
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        let _ = fs::remove_dir_all(&self.staging);
        for (tmp, _) in &self.external {
            let _ = fs::remove_file(tmp);
        }
    }
}

fn write_file(path: &Path, body: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    body(&mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

/// Questions, kept forecasts, and rejected rows.
fn load_data(cfg: &PipelineConfig, run: &mut RunDir) -> Result<(Vec<Question>, Vec<ForecastRecord>, Vec<corpus::Reject>)> {
    let questions = corpus::parse_questions(open(&cfg.questions_path)?)?;
    run.record_input(&cfg.questions_path)?;
    let parsed = corpus::parse_forecasts(open(&cfg.forecasts_path)?, &cfg.schema())?;
    run.record_input(&cfg.forecasts_path)?;
    let (records, rejects) = corpus::check_against_questions(parsed, &questions);
    if questions.is_empty() || records.is_empty() {
        return Err(Error::Empty("no usable questions or forecasts"));
    }
    Ok((questions, records, rejects))
}

fn load_lda(cfg: &PipelineConfig, run: &mut RunDir) -> Result<LdaModel> {
    let model = LdaModel::read(open(&cfg.lda_model_path)?)?;
    run.record_input(&cfg.lda_model_path)?;
    if model.num_topics != cfg.num_topics {
        return Err(Error::DimensionMismatch {
            expected: cfg.num_topics,
            actual: model.num_topics,
        });
    }
    Ok(model)
}

fn load_checkpoint(cfg: &PipelineConfig, run: &mut RunDir) -> Result<Checkpoint> {
    let ckpt = Checkpoint::read(open(&cfg.checkpoint_path)?)?;
    run.record_input(&cfg.checkpoint_path)?;
    if ckpt.feature_config.num_topics != cfg.num_topics {
        return Err(Error::DimensionMismatch {
            expected: cfg.num_topics,
            actual: ckpt.feature_config.num_topics,
        });
    }
    Ok(ckpt)
}

fn prepare(cfg: &PipelineConfig, run: &mut RunDir) -> Result<(Experiment, Split, BTreeMap<String, TopicVector>)> {
    let (questions, records, _) = load_data(cfg, run)?;
    let model = load_lda(cfg, run)?;
    let fold_seed = derive_seed(cfg.seed, "topic-vectors", 0);
    run.record_seed("fold_in", fold_seed);
    let topics = super::topic_vectors(&model, &questions, cfg.fold_in_iterations, fold_seed);
    let exp = Experiment::new(questions, &records);
    let split = exp.split(cfg.train_fraction, cfg.validation_questions)?;
    Ok((exp, split, topics))
}

/// Outcome of a command: where its run directory landed and lines for the
/// terminal.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub run_dir: PathBuf,
    pub lines: Vec<String>,
}

pub fn run_ingest(cfg: &PipelineConfig) -> Result<RunSummary> {
    let mut run = RunDir::create(cfg, "ingest")?;
    let (questions, records, rejects) = load_data(cfg, &mut run)?;
    run.write("questions.csv", |w| corpus::write_questions(w, &questions))?;
    run.write("forecasts.csv", |w| corpus::write_forecasts(w, &records))?;
    run.write("rejects.csv", |w| corpus::write_rejects(w, &rejects))?;
    let line = format!(
        "{} questions, {} forecasts kept, {} rows rejected",
        questions.len(),
        records.len(),
        rejects.len()
    );
    Ok(RunSummary {
        run_dir: run.commit(cfg)?,
        lines: vec![line],
    })
}

pub fn run_topics(cfg: &PipelineConfig) -> Result<RunSummary> {
    let mut run = RunDir::create(cfg, "topics")?;
    let questions = corpus::parse_questions(open(&cfg.questions_path)?)?;
    run.record_input(&cfg.questions_path)?;
    let lda_cfg = cfg.lda_config();
    run.record_seed("lda", lda_cfg.seed);
    let model = super::fit_topic_model(&questions, &lda_cfg)?;
    let fold_seed = derive_seed(cfg.seed, "topic-vectors", 0);
    run.record_seed("fold_in", fold_seed);
    let vectors = super::topic_vectors(&model, &questions, cfg.fold_in_iterations, fold_seed);

    let top = model.top_words(10);
    run.write("top_words.csv", |w| {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["topic", "rank", "word", "probability"])?;
        for (k, words) in top.iter().enumerate() {
            for (i, (word, p)) in words.iter().enumerate() {
                wtr.write_record([k.to_string(), (i + 1).to_string(), word.clone(), p.to_string()])?;
            }
        }
        wtr.flush().map_err(|e| Error::io("top_words.csv", e))
    })?;
    run.write("topic_vectors.csv", |w| {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["question_id".to_string()];
        header.extend((0..cfg.num_topics).map(|k| format!("topic{k}")));
        wtr.write_record(&header)?;
        for (id, tv) in &vectors {
            let mut row = vec![id.clone()];
            row.extend(tv.proportions().iter().map(f64::to_string));
            wtr.write_record(&row)?;
        }
        wtr.flush().map_err(|e| Error::io("topic_vectors.csv", e))
    })?;
    run.write_external(&cfg.lda_model_path, |w| model.write(w))?;

    let lines = top
        .iter()
        .enumerate()
        .map(|(k, words)| {
            let ws: Vec<&str> = words.iter().map(|(w, _)| w.as_str()).collect();
            format!("topic {k}: {}", ws.join(" "))
        })
        .collect();
    Ok(RunSummary {
        run_dir: run.commit(cfg)?,
        lines,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TrainMetrics {
    train_pairs: usize,
    validation_pairs: usize,
    evaluation_pairs: usize,
    epochs_run: usize,
    selected_epoch: Option<usize>,
    evaluation_accuracy: f64,
}

fn write_split(w: &mut dyn Write, exp: &Experiment, split: &Split) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["question_id", "role"])?;
    for (role, idx) in [
        ("train", &split.train),
        ("validation", &split.validation),
        ("evaluation", &split.evaluation),
    ] {
        for &i in idx {
            wtr.write_record([exp.questions[i].id.as_str(), role])?;
        }
    }
    wtr.flush().map_err(|e| Error::io("split.csv", e))
}

pub fn run_train(cfg: &PipelineConfig) -> Result<RunSummary> {
    let mut run = RunDir::create(cfg, "train")?;
    let (exp, split, topics) = prepare(cfg, &mut run)?;
    run.record_seed("init", derive_seed(cfg.seed, "init", 0));
    let trained = super::train_comparator(&exp, &split, &topics, &cfg.comparator_settings())?;
    let eval_pairs = super::pairs_for(&exp, &split.evaluation, &topics, cfg.r_max, None, cfg.seed)?;
    let outcome = &trained.outcome;
    let accuracy = if eval_pairs.is_empty() {
        f64::NAN
    } else {
        ranker::pairwise_accuracy(&outcome.network, &eval_pairs)?
    };
    let last = outcome.history.last().ok_or(Error::Empty("training ran no epochs"))?;
    let ckpt = Checkpoint::new(
        trained.features.clone(),
        TrainingMeta {
            seed: cfg.seed,
            epochs_run: outcome.history.len(),
            selected_epoch: outcome.selected_epoch,
            final_train_error: last.train_error,
            final_val_error: last.val_error,
        },
        outcome.network.clone(),
    )?;
    let metrics = TrainMetrics {
        train_pairs: trained.train_pairs,
        validation_pairs: trained.validation_pairs,
        evaluation_pairs: eval_pairs.len(),
        epochs_run: outcome.history.len(),
        selected_epoch: outcome.selected_epoch,
        evaluation_accuracy: accuracy,
    };

    run.write("training_log.csv", |w| ranker::write_training_log(w, &outcome.history))?;
    run.write("split.csv", |w| write_split(w, &exp, &split))?;
    run.write("metrics.json", |w| Ok(serde_json::to_writer_pretty(w, &metrics)?))?;
    run.write_external(&cfg.checkpoint_path, |w| ckpt.write(w))?;

    let selected = outcome
        .selected_epoch
        .map_or_else(|| "none (final parameters kept)".to_string(), |e| e.to_string());
    let lines = vec![
        format!(
            "{} training / {} validation pairs, {} epochs, selected epoch {selected}",
            trained.train_pairs,
            trained.validation_pairs,
            outcome.history.len()
        ),
        format!("held-out pairwise accuracy {accuracy:.4} over {} pairs", eval_pairs.len()),
    ];
    Ok(RunSummary {
        run_dir: run.commit(cfg)?,
        lines,
    })
}

/// Ranks the forecasters of every evaluation question on its close date.
pub fn run_rank(cfg: &PipelineConfig) -> Result<RunSummary> {
    let mut run = RunDir::create(cfg, "rank")?;
    let (exp, split, topics) = prepare(cfg, &mut run)?;
    let ckpt = load_checkpoint(cfg, &mut run)?;
    let r_max = ckpt.feature_config.r_max;

    let mut evaluation = split.evaluation.clone();
    evaluation.sort_by(|&a, &b| exp.questions[a].id.cmp(&exp.questions[b].id));
    let mut rows: Vec<[String; 4]> = Vec::new();
    let mut dumps = Vec::new();
    for &qi in &evaluation {
        let q = &exp.questions[qi];
        let records = exp.records_for(&q.id);
        let latest = corpus::latest_per_forecaster(q, records, corpus::day_end(q.close_date));
        let topic = topics.get(&q.id).expect("topic vector for every question");
        let (ranking, result) = super::neural_ranking(
            &ckpt.network,
            q,
            &latest,
            records,
            cfg.tournament_input,
            &exp.archive,
            topic,
            r_max,
            q.close_date,
            derive_seed(cfg.seed, "rank", qi as u64),
        )?;
        let degrees: BTreeMap<&str, f64> = match &result {
            Some(r) => r
                .tournament
                .forecaster_ids
                .iter()
                .map(String::as_str)
                .zip(r.tournament.weighted_in_degrees())
                .collect(),
            None => BTreeMap::new(),
        };
        for (k, id) in ranking.order.iter().enumerate() {
            let d = degrees.get(id.as_str()).copied().unwrap_or(0.0);
            rows.push([q.id.clone(), (k + 1).to_string(), id.clone(), d.to_string()]);
        }
        if let Some(r) = result {
            dumps.push((q.id.clone(), r));
        }
    }

    run.write("rankings.csv", |w| {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["question_id", "rank", "forecaster_id", "weighted_in_degree"])?;
        for row in &rows {
            wtr.write_record(row)?;
        }
        wtr.flush().map_err(|e| Error::io("rankings.csv", e))
    })?;
    if cfg.dump_matrices {
        for (id, r) in &dumps {
            run.write(&format!("matrices/{id}_wins.csv"), |w| tournament::write_win_matrix(w, &r.wins))?;
            run.write(&format!("matrices/{id}_tournament.csv"), |w| {
                tournament::write_tournament(w, &r.tournament)
            })?;
        }
    }
    let line = format!("ranked {} evaluation questions", evaluation.len());
    Ok(RunSummary {
        run_dir: run.commit(cfg)?,
        lines: vec![line],
    })
}

pub fn run_evaluate(cfg: &PipelineConfig) -> Result<RunSummary> {
    let mut run = RunDir::create(cfg, "evaluate")?;
    let (exp, split, topics) = prepare(cfg, &mut run)?;
    let ckpt = load_checkpoint(cfg, &mut run)?;
    let mut settings = cfg.eval_settings();
    settings.r_max = ckpt.feature_config.r_max;
    let ev = super::evaluate(&exp, &ckpt.network, &split.evaluation, &topics, &settings)?;
    run.write("daily.csv", |w| report::write_daily(w, &ev.daily))?;
    run.write("summary.csv", |w| report::write_summary(w, &ev.summary))?;
    run.write("split.csv", |w| write_split(w, &exp, &split))?;
    let lines = ev
        .summary
        .iter()
        .map(|r| format!("{:>5}% {:<10} MMDB {:.4}", r.cutoff, r.method, r.mmdb))
        .collect();
    Ok(RunSummary {
        run_dir: run.commit(cfg)?,
        lines,
    })
}

pub fn run_simulate(cfg: &PipelineConfig) -> Result<RunSummary> {
    let mut run = RunDir::create(cfg, "simulate")?;
    let synth_cfg = cfg.synth_config();
    run.record_seed("synth", synth_cfg.seed);
    let data = synth::generate(&synth_cfg)?;
    run.write("skills.csv", |w| data.write_skills(w))?;
    run.write("synth_config.json", |w| Ok(serde_json::to_writer_pretty(w, &synth_cfg)?))?;
    run.write_external(&cfg.questions_path, |w| corpus::write_questions(w, &data.questions))?;
    run.write_external(&cfg.forecasts_path, |w| corpus::write_forecasts(w, &data.forecasts))?;
    let line = format!(
        "{} questions, {} forecasters, {} forecasts",
        data.questions.len(),
        synth_cfg.n_forecasters,
        data.forecasts.len()
    );
    Ok(RunSummary {
        run_dir: run.commit(cfg)?,
        lines: vec![line],
    })
}

/// Renders `summary` (default: the evaluate run for this config) as SVG.
pub fn run_report(cfg: &PipelineConfig, summary: Option<&Path>) -> Result<RunSummary> {
    let default = cfg
        .output_dir
        .join(format!("evaluate-{}", &cfg.digest()[..12]))
        .join("summary.csv");
    let path = summary.unwrap_or(&default);
    let mut run = RunDir::create(cfg, "report")?;
    let rows = report::read_summary(open(path)?)?;
    run.record_input(path)?;
    let svg = report::render_summary_svg(&rows)?;
    run.write("summary.svg", |w| w.write_all(svg.as_bytes()).map_err(|e| Error::io("summary.svg", e)))?;
    Ok(RunSummary {
        run_dir: run.commit(cfg)?,
        lines: vec![format!("rendered {} summary rows", rows.len())],
    })
}
