use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{km_csv, km_svg, Cli, CliError, Command, MetricsReport, RunConfig, TrialMetrics};
use crate::datamodel::{Cohort, SurvivalLabel, N_TRIALS};
use crate::distill::{
    export_similarity_map, median, predict_split, train_student, train_teacher, write_log_jsonl,
    write_similarity_csv, Inputs, TrainOutcome,
};
use crate::reportprep::{CleaningPrompt, DigestCache, Endpoint, LiveProvider, MockProvider, Provider, ReportCleaner, RetryPolicy};
use crate::survstats::{concordance_index, kaplan_meier, log_rank_test, SurvError};
use crate::synthgen::{describe, generate};
use crate::tff::{load_checkpoint, save_checkpoint, TffParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Teacher,
    Student,
}

impl Stage {
    fn name(self) -> &'static str {
        match self {
            Stage::Teacher => "teacher",
            Stage::Student => "student",
        }
    }
}

/// `<dir>/<stage>-trial<k>.rasc`
pub fn checkpoint_path(dir: &Path, stage: Stage, trial: usize) -> PathBuf {
    dir.join(format!("{}-trial{trial}.rasc", stage.name()))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, contents).map_err(io_err(path))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.synth.seed = seed;
        cfg.train.seed = seed;
        cfg.train.model.seed = seed;
    }
    if let Some(g) = cli.gamma {
        cfg.train.gamma = g;
    }
    if let Some(p) = cli.p_aug {
        cfg.train.p_aug = p;
    }
    if let Some(l) = cli.lambda {
        cfg.train.lambda = l;
    }
    if let Some(out) = &cli.out {
        cfg.paths.out = out.clone();
        if cli.config.is_none() {
            cfg.paths.checkpoints = out.clone();
        }
    }
    if let Some(m) = &cli.manifest {
        cfg.paths.manifest = m.clone();
    }
    if let Command::CleanReports {
        input,
        prompt,
        provider,
        cache,
    } = &cli.command
    {
        if let Some(i) = input {
            cfg.paths.reports = i.clone();
        }
        if let Some(p) = prompt {
            cfg.paths.prompt = p.clone();
        }
        if let Some(p) = provider {
            cfg.llm.provider = p.clone();
        }
        if let Some(c) = cache {
            cfg.paths.cache = c.clone();
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn trial_of(cli: &Cli) -> Result<usize, CliError> {
    let k = cli.trial.unwrap_or(0);
    if k >= N_TRIALS {
        return Err(CliError::Usage(format!("--trial {k} is out of range 0..{}", N_TRIALS - 1)));
    }
    Ok(k)
}

pub(super) fn dispatch(cli: &Cli) -> Result<(), CliError> {
    let cfg = resolve_config(cli)?;
    match &cli.command {
        Command::Synth => cmd_synth(&cfg),
        Command::Train => cmd_train(&cfg, cli.stage.unwrap_or(Stage::Teacher), trial_of(cli)?, cli.teacher.as_deref()),
        Command::Evaluate => cmd_evaluate(&cfg, cli.stage.unwrap_or(Stage::Teacher)),
        Command::Km => cmd_km(&cfg, cli.stage.unwrap_or(Stage::Teacher), trial_of(cli)?),
        Command::Simmap { case_id, gammas } => {
            cmd_simmap(&cfg, trial_of(cli)?, cli.teacher.as_deref(), case_id.as_deref(), gammas.as_deref())
        }
        Command::CleanReports { .. } => cmd_clean_reports(&cfg),
    }
}

fn cmd_synth(cfg: &RunConfig) -> Result<(), CliError> {
    let manifest = &cfg.paths.manifest;
    if manifest.file_name().is_none_or(|n| n != "manifest.toml") {
        return Err(CliError::Usage(format!(
            "synth writes <dir>/manifest.toml; got manifest path {}",
            manifest.display()
        )));
    }
    let dir = manifest.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    ensure_dir(dir)?;
    let synth = generate(&cfg.synth, dir)?;
    let summary = describe(&synth.cohort.manifest, &synth.truth)?;
    println!("{summary}");
    println!("wrote {} cases to {}", summary.n_cases, manifest.display());
    Ok(())
}

fn load_cohort(cfg: &RunConfig) -> Result<Cohort, CliError> {
    Ok(Cohort::load(&cfg.paths.manifest)?)
}

fn load_params(path: &Path, cfg: &RunConfig) -> Result<TffParams, CliError> {
    if !path.exists() {
        return Err(CliError::Usage(format!("checkpoint {} does not exist", path.display())));
    }
    Ok(load_checkpoint(path, &cfg.train.model)?)
}

#[derive(Serialize)]
struct TrainSummary {
    stage: Stage,
    trial: usize,
    best_epoch: usize,
    val_ci: Option<f64>,
}

fn cmd_train(cfg: &RunConfig, stage: Stage, trial: usize, teacher: Option<&Path>) -> Result<(), CliError> {
    let teacher = match (stage, teacher) {
        (Stage::Student, None) => {
            return Err(CliError::Usage("student training needs --teacher <checkpoint>".into()));
        }
        (Stage::Student, Some(path)) => Some(load_params(path, cfg)?),
        (Stage::Teacher, _) => None,
    };
    let cohort = load_cohort(cfg)?;
    let outcome: TrainOutcome = match &teacher {
        None => train_teacher(&cohort, trial, &cfg.train)?,
        Some(t) => train_student(&cohort, trial, t, &cfg.train)?,
    };
    let out = &cfg.paths.out;
    ensure_dir(out)?;
    let ckpt = checkpoint_path(out, stage, trial);
    save_checkpoint(&ckpt, &outcome.params)?;
    write_log_jsonl(&out.join(format!("{}-trial{trial}.log.jsonl", stage.name())), &outcome.log)?;
    let summary = TrainSummary {
        stage,
        trial,
        best_epoch: outcome.best_epoch,
        val_ci: outcome.best_val_ci,
    };
    write(
        &out.join(format!("{}-trial{trial}.json", stage.name())),
        serde_json::to_string_pretty(&summary).expect("plain summary") + "\n",
    )?;
    match outcome.best_val_ci {
        Some(ci) => println!("{} trial {trial}: best epoch {}, validation CI {ci:.4}", stage.name(), outcome.best_epoch),
        None => println!("{} trial {trial}: validation CI undefined", stage.name()),
    }
    println!("wrote {}", ckpt.display());
    Ok(())
}

/// Scores for the given ids with the stage's input pipeline.
fn scores(
    cfg: &RunConfig,
    cohort: &Cohort,
    stage: Stage,
    trial: usize,
    params: &TffParams,
    ids: &[String],
) -> Result<Vec<f64>, CliError> {
    match stage {
        Stage::Teacher => Ok(predict_split(params, cohort, ids, Inputs::Full)?),
        Stage::Student => {
            let teacher = load_params(&checkpoint_path(&cfg.paths.checkpoints, Stage::Teacher, trial), cfg)?;
            let inputs = Inputs::Sampled {
                teacher: &teacher,
                gamma: cfg.train.gamma,
            };
            Ok(predict_split(params, cohort, ids, inputs)?)
        }
    }
}

fn labels(cohort: &Cohort, ids: &[String]) -> Result<Vec<SurvivalLabel>, CliError> {
    Ok(cohort
        .positions(ids)?
        .into_iter()
        .map(|p| cohort.cases[p].case.label)
        .collect())
}

/// Splits the test labels at the training-set median score.
struct MedianSplit {
    threshold: f64,
    low: Vec<SurvivalLabel>,
    high: Vec<SurvivalLabel>,
}

fn median_split(
    cfg: &RunConfig,
    cohort: &Cohort,
    stage: Stage,
    trial: usize,
    params: &TffParams,
) -> Result<MedianSplit, CliError> {
    let split = cohort.trial(trial)?.clone();
    let threshold = median(&scores(cfg, cohort, stage, trial, params, &split.train)?);
    let test_scores = scores(cfg, cohort, stage, trial, params, &split.test)?;
    let test_labels = labels(cohort, &split.test)?;
    let (mut low, mut high) = (Vec::new(), Vec::new());
    for (s, l) in test_scores.iter().zip(test_labels) {
        if *s >= threshold {
            high.push(l);
        } else {
            low.push(l);
        }
    }
    Ok(MedianSplit { threshold, low, high })
}

fn cmd_evaluate(cfg: &RunConfig, stage: Stage) -> Result<(), CliError> {
    let cohort = load_cohort(cfg)?;
    let mut params = Vec::with_capacity(N_TRIALS);
    for k in 0..N_TRIALS {
        params.push(load_params(&checkpoint_path(&cfg.paths.checkpoints, stage, k), cfg)?);
    }
    let mut trials = Vec::with_capacity(N_TRIALS);
    for (k, p) in params.iter().enumerate() {
        let test = cohort.trial(k)?.test.clone();
        let s = scores(cfg, &cohort, stage, k, p, &test)?;
        let test_ci = match concordance_index(&s, &labels(&cohort, &test)?) {
            Ok(ci) => Some(ci),
            Err(SurvError::Undefined(_)) => None,
            Err(e) => return Err(e.into()),
        };
        let km_p_value = match median_split(cfg, &cohort, stage, k, p) {
            Ok(ms) => log_rank_test(&ms.low, &ms.high).ok().map(|r| r.p_value),
            Err(e) => return Err(e),
        };
        trials.push(TrialMetrics {
            trial: k,
            test_ci,
            km_p_value,
        });
    }
    let report = MetricsReport::new(stage.name(), trials);
    let out = &cfg.paths.out;
    write(&out.join(format!("metrics-{}.json", stage.name())), report.to_json())?;
    write(&out.join(format!("metrics-{}.txt", stage.name())), report.to_text())?;
    print!("{}", report.to_text());
    if report.has_undefined() {
        let bad: Vec<String> = report
            .trials
            .iter()
            .filter(|t| t.test_ci.is_none())
            .map(|t| format!("trial {}: undefined CI", t.trial))
            .collect();
        return Err(CliError::Degenerate(bad.join("; ")));
    }
    Ok(())
}

#[derive(Serialize)]
struct KmSummary {
    stage: Stage,
    trial: usize,
    threshold: f64,
    n_low: usize,
    n_high: usize,
    chi_square: f64,
    p_value: f64,
}

fn cmd_km(cfg: &RunConfig, stage: Stage, trial: usize) -> Result<(), CliError> {
    let cohort = load_cohort(cfg)?;
    let params = load_params(&checkpoint_path(&cfg.paths.checkpoints, stage, trial), cfg)?;
    let ms = median_split(cfg, &cohort, stage, trial, &params)?;
    if ms.low.is_empty() || ms.high.is_empty() {
        return Err(CliError::Degenerate(format!(
            "median split left an empty group ({} low, {} high)",
            ms.low.len(),
            ms.high.len()
        )));
    }
    let test = match log_rank_test(&ms.low, &ms.high) {
        Ok(t) => t,
        Err(e) => return Err(CliError::Degenerate(format!("log-rank test: {e}"))),
    };
    let low = kaplan_meier(&ms.low);
    let high = kaplan_meier(&ms.high);
    let end = ms.low.iter().chain(&ms.high).map(|l| l.time).fold(0.0, f64::max);
    let stem = format!("km-{}-trial{trial}", stage.name());
    let out = &cfg.paths.out;
    write(&out.join(format!("{stem}.csv")), km_csv(&[("low", &low), ("high", &high)]))?;
    write(
        &out.join(format!("{stem}.svg")),
        km_svg(&[("low risk", "#2e8b57", &low), ("high risk", "#c0392b", &high)], end, test.p_value),
    )?;
    let summary = KmSummary {
        stage,
        trial,
        threshold: ms.threshold,
        n_low: ms.low.len(),
        n_high: ms.high.len(),
        chi_square: test.chi_square,
        p_value: test.p_value,
    };
    write(
        &out.join(format!("{stem}.json")),
        serde_json::to_string_pretty(&summary).expect("plain summary") + "\n",
    )?;
    println!(
        "trial {trial}: {} low / {} high risk, chi-square {:.4}, p = {:.4e}",
        summary.n_low, summary.n_high, summary.chi_square, summary.p_value
    );
    Ok(())
}

fn parse_gammas(text: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(|s| {
            let s = s.trim().replace('\u{2212}', "-");
            s.parse::<f64>()
                .ok()
                .filter(|g| (-1.0..=1.0).contains(g))
                .ok_or_else(|| CliError::Usage(format!("bad threshold {s:?} in --gammas")))
        })
        .collect()
}

fn cmd_simmap(
    cfg: &RunConfig,
    trial: usize,
    teacher: Option<&Path>,
    case_id: Option<&str>,
    gammas: Option<&str>,
) -> Result<(), CliError> {
    let cohort = load_cohort(cfg)?;
    let gammas = match gammas {
        Some(text) => parse_gammas(text)?,
        None => cfg.analysis.gammas.clone(),
    };
    let id = match case_id.or(Some(cfg.analysis.case_id.as_str()).filter(|s| !s.is_empty())) {
        Some(id) => id.to_string(),
        None => cohort
            .trial(trial)?
            .test
            .first()
            .cloned()
            .ok_or_else(|| CliError::Usage("trial has no test cases".into()))?,
    };
    let case = cohort
        .get(&id)
        .ok_or_else(|| CliError::Usage(format!("unknown case id {id:?}")))?;
    let teacher_path = teacher
        .map(Path::to_path_buf)
        .unwrap_or_else(|| checkpoint_path(&cfg.paths.checkpoints, Stage::Teacher, trial));
    let params = load_params(&teacher_path, cfg)?;
    let records = export_similarity_map(case, &params, &gammas)?;
    let path = cfg.paths.out.join(format!("simmap-{id}.csv"));
    ensure_dir(&cfg.paths.out)?;
    write_similarity_csv(&path, &gammas, &records)?;
    let kept: Vec<String> = (0..gammas.len())
        .map(|g| {
            let n = records.iter().filter(|r| r.kept[g]).count();
            format!("{}: {n}/{}", gammas[g], records.len())
        })
        .collect();
    println!("case {id}: kept {}", kept.join(", "));
    println!("wrote {}", path.display());
    Ok(())
}

fn clean_all<P: Provider>(cleaner: &ReportCleaner<P>, inputs: &[PathBuf], out: &Path) -> Result<(usize, usize), CliError> {
    let mut hits = 0;
    for path in inputs {
        let raw = fs::read_to_string(path).map_err(io_err(path))?;
        let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let record = cleaner.clean_report(&id, &raw)?;
        if record.from_cache {
            hits += 1;
        }
        write(&out.join(format!("{id}.txt")), format!("{}\n", record.cleaned.trim_end()))?;
    }
    Ok((inputs.len(), hits))
}

fn cmd_clean_reports(cfg: &RunConfig) -> Result<(), CliError> {
    let prompt = if cfg.paths.prompt.as_os_str().is_empty() {
        CleaningPrompt::default()
    } else {
        let text = fs::read_to_string(&cfg.paths.prompt).map_err(io_err(&cfg.paths.prompt))?;
        CleaningPrompt::from_toml(&text)?
    };
    let endpoint = if cfg.llm.provider == "live" {
        let mut e = Endpoint::from_env(&cfg.llm.base_url, &cfg.llm.model)?;
        e.temperature = cfg.llm.temperature;
        Some(e)
    } else {
        None
    };
    let dir = &cfg.paths.reports;
    let mut inputs: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "txt"))
        .collect();
    inputs.sort();
    let cache = DigestCache::new(&cfg.paths.cache)?;
    let out = cfg.paths.out.join("cleaned");
    ensure_dir(&out)?;
    let (n, hits) = match endpoint {
        Some(e) => clean_all(&ReportCleaner::new(LiveProvider::new(e, RetryPolicy::default()), prompt, cache)?, &inputs, &out)?,
        None => clean_all(&ReportCleaner::new(MockProvider::new(), prompt, cache)?, &inputs, &out)?,
    };
    let rate = if n == 0 { 0.0 } else { 100.0 * hits as f64 / n as f64 };
    println!("cleaned {n} reports into {} ({hits} cache hits, {rate:.0}%)", out.display());
    Ok(())
}

