use std::fs;
use std::path::{Path, PathBuf};

use specgate::config::RunConfig;
use specgate::domain::{DesignPoint, EvaluatedDesign};
use specgate::engine::{Checkpoint, Engine, RunResult, RunStatus};
use specgate::history::{self, HistoryRow};
use specgate::{Evaluator, Mode};

use crate::artifacts::{self, Manifest};
use crate::CliError;

pub struct RunArgs {
    pub config: PathBuf,
    pub mode: Option<Mode>,
    pub seed: Option<u64>,
    pub max_iterations: Option<usize>,
    pub out: Option<PathBuf>,
    pub resume: Option<PathBuf>,
    pub checkpoint_every: usize,
    pub artifact_root: PathBuf,
}

/// Loads the config and applies flag overrides, then fills in defaults.
fn resolve(args: &RunArgs) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(m) = args.mode {
        cfg.engine.mode = m;
    }
    if let Some(s) = args.seed {
        cfg.engine.seed = s;
    }
    if let Some(n) = args.max_iterations {
        cfg.engine.max_iterations = n;
    }
    cfg.engine = cfg.engine.resolved();
    Ok(cfg)
}

fn persist<E: Evaluator + ?Sized>(engine: &Engine<'_, E>, dir: &Path, every: usize) -> specgate::Result<()> {
    let ckpt = engine.checkpoint().to_json()?;
    let io = |e: CliError| specgate::Error::Io(std::io::Error::other(e.to_string()));
    artifacts::write_atomic(&dir.join(artifacts::CHECKPOINT), ckpt.as_bytes()).map_err(io)?;
    let it = engine.iteration();
    if every > 0 && it % every == 0 {
        artifacts::write_atomic(&artifacts::checkpoint_path(dir, it), ckpt.as_bytes()).map_err(io)?;
    }
    let mut csv = Vec::new();
    history::write_history(engine.records(), &mut csv)?;
    artifacts::write_atomic(&dir.join(artifacts::HISTORY), &csv).map_err(io)?;
    Ok(())
}

fn write_results(dir: &Path, result: &RunResult) -> Result<(), CliError> {
    let mut csv = Vec::new();
    history::write_history(&result.records, &mut csv)?;
    artifacts::write_atomic(&dir.join(artifacts::HISTORY), &csv)?;
    let mut csv = Vec::new();
    history::write_summary(&[result], &mut csv)?;
    artifacts::write_atomic(&dir.join(artifacts::SUMMARY), &csv)?;
    artifacts::write_atomic(&dir.join(artifacts::BEST), serde_json::to_string_pretty(&result.best)?.as_bytes())?;
    if !result.incidents.is_empty() {
        artifacts::write_atomic(
            &dir.join(artifacts::INCIDENTS),
            serde_json::to_string_pretty(&result.incidents)?.as_bytes(),
        )?;
    }
    Ok(())
}

pub fn run(args: RunArgs) -> Result<u8, CliError> {
    let cfg = resolve(&args)?;
    let problem = cfg.validate()?;
    let run_id = artifacts::run_id(&cfg)?;
    let dir = args.out.clone().unwrap_or_else(|| args.artifact_root.join(&run_id));
    fs::create_dir_all(dir.join(artifacts::CHECKPOINT_DIR))?;

    let manifest = Manifest {
        format: artifacts::MANIFEST_FORMAT.to_owned(),
        version: artifacts::MANIFEST_VERSION,
        run_id: run_id.clone(),
        config_path: args.config.clone(),
        artifact_dir: dir.clone(),
        problem_fingerprint: problem.fingerprint(),
        resumed_from: args.resume.clone(),
        config: cfg.clone(),
    };
    artifacts::write_atomic(&dir.join(artifacts::MANIFEST), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    artifacts::write_atomic(&dir.join(artifacts::RESOLVED_CONFIG), cfg.to_toml()?.as_bytes())?;

    let (problem, mut evaluator) = cfg.problem.build()?;
    let mut engine = match &args.resume {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            let ckpt = Checkpoint::from_json(&text)?;
            Engine::restore(cfg.engine.clone(), problem, &mut *evaluator, ckpt)?
        }
        None => Engine::start(cfg.engine.clone(), problem, &mut *evaluator)?,
    };
    persist(&engine, &dir, args.checkpoint_every)?;
    log::info!("run {run_id}: {} mode, artifacts in {}", cfg.engine.mode, dir.display());

    let every = args.checkpoint_every;
    let outcome = engine.run_with(|e| persist(e, &dir, every));
    let result = match outcome {
        Ok(r) => r,
        Err(e) => {
            // The engine is still at the last completed iteration.
            persist(&engine, &dir, 0)?;
            return Err(e.into());
        }
    };
    write_results(&dir, &result)?;
    result
        .reconcile()
        .map_err(|e| CliError::Internal(format!("accounting mismatch: {e}")))?;

    let c = &result.counters;
    println!(
        "{}: {} after {} iterations; best cost {}; {} simulations, {} NN queries, {} retrainings; artifacts in {}",
        run_id,
        result.status.as_str(),
        result.iterations(),
        result.best.cost,
        c.simulations,
        c.nn_queries,
        c.retrainings,
        dir.display()
    );
    Ok(match result.status {
        RunStatus::Solved => 0,
        RunStatus::MaxIterations | RunStatus::GateExhausted => 4,
    })
}

struct LoadedRun {
    tag: String,
    history: Vec<HistoryRow>,
    summary_header: Vec<String>,
    summary: Vec<Vec<String>>,
}

fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), CliError> {
    let bad = |e: &dyn std::fmt::Display| CliError::Config(format!("{}: {e}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(|e| bad(&e))?;
    let header = r.headers().map_err(|e| bad(&e))?.iter().map(str::to_owned).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(str::to_owned).collect()))
        .collect::<Result<_, _>>()
        .map_err(|e| bad(&e))?;
    Ok((header, rows))
}

fn write_table(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CliError::Internal(e.to_string());
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(r).map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Internal(e.to_string()))?;
    artifacts::write_atomic(path, &bytes)
}

/// Writes `by_iteration.csv`, `by_simulation.csv` and `summary.csv` into `out`.
pub fn compare(runs: &[PathBuf], out: &Path) -> Result<(), CliError> {
    if runs.len() < 2 {
        return Err(CliError::Config("compare needs at least two run directories".into()));
    }
    let mut loaded: Vec<LoadedRun> = Vec::new();
    let mut fingerprint: Option<(String, &PathBuf)> = None;
    for dir in runs {
        let m = Manifest::read(dir)?;
        match &fingerprint {
            None => fingerprint = Some((m.problem_fingerprint.clone(), dir)),
            Some((f, first)) if *f != m.problem_fingerprint => {
                return Err(CliError::Config(format!(
                    "{} and {} solve different problems",
                    first.display(),
                    dir.display()
                )))
            }
            Some(_) => {}
        }
        let hist_path = dir.join(artifacts::HISTORY);
        let file = fs::File::open(&hist_path).map_err(|e| CliError::Config(format!("{}: {e}", hist_path.display())))?;
        let history: Vec<HistoryRow> = history::read_csv(file)?;
        let (summary_header, summary) = read_table(&dir.join(artifacts::SUMMARY))?;
        let base = format!("{}-s{}", m.config.engine.mode, m.config.engine.seed);
        let n = loaded.iter().filter(|r| r.tag == base || r.tag.starts_with(&format!("{base}#"))).count();
        let tag = if n == 0 { base } else { format!("{base}#{}", n + 1) };
        loaded.push(LoadedRun {
            tag,
            history,
            summary_header,
            summary,
        });
    }
    fs::create_dir_all(out)?;

    let mut header = vec!["iteration".to_owned()];
    for r in &loaded {
        header.push(format!("{}:best_cost", r.tag));
        header.push(format!("{}:avg_top_cost", r.tag));
    }
    let last = loaded
        .iter()
        .filter_map(|r| r.history.last().map(|h| h.iteration))
        .max()
        .unwrap_or(0);
    let rows: Vec<Vec<String>> = (0..=last)
        .map(|it| {
            let mut row = vec![it.to_string()];
            for r in &loaded {
                match r.history.iter().find(|h| h.iteration == it) {
                    Some(h) => {
                        row.push(h.best_cost.to_string());
                        row.push(h.avg_top_cost.to_string());
                    }
                    None => row.extend([String::new(), String::new()]),
                }
            }
            row
        })
        .collect();
    write_table(&out.join("by_iteration.csv"), &header, &rows)?;

    let header: Vec<String> = ["run", "iteration", "simulations", "best_cost", "avg_top_cost"]
        .map(str::to_owned)
        .to_vec();
    let rows: Vec<Vec<String>> = loaded
        .iter()
        .flat_map(|r| {
            r.history.iter().map(move |h| {
                vec![
                    r.tag.clone(),
                    h.iteration.to_string(),
                    h.simulations.to_string(),
                    h.best_cost.to_string(),
                    h.avg_top_cost.to_string(),
                ]
            })
        })
        .collect();
    write_table(&out.join("by_simulation.csv"), &header, &rows)?;

    let mut header = vec!["run".to_owned()];
    header.extend(loaded[0].summary_header.iter().cloned());
    let mut rows = Vec::new();
    for r in &loaded {
        if r.summary_header != loaded[0].summary_header {
            return Err(CliError::Config(format!("{}: summary columns differ", r.tag)));
        }
        for s in &r.summary {
            let mut row = vec![r.tag.clone()];
            row.extend(s.iter().cloned());
            rows.push(row);
        }
    }
    write_table(&out.join("summary.csv"), &header, &rows)?;
    println!("compared {} runs into {}", loaded.len(), out.display());
    Ok(())
}

/// Prints a validation report. Config errors exit 2; a failed probe exits 3.
pub fn validate(path: &Path) -> Result<u8, CliError> {
    let mut cfg = RunConfig::load(path)?;
    cfg.engine = cfg.engine.resolved();
    let problem = cfg.validate()?;
    println!("problem fingerprint: {}", problem.fingerprint());
    println!(
        "design space: {} parameters, {:e} grid points",
        problem.space.dim(),
        problem.space.cardinality()
    );
    for p in problem.space.params() {
        println!(
            "  {}: {} values in [{}, {}]",
            p.name,
            p.len(),
            p.grid[0],
            p.grid[p.len() - 1]
        );
    }
    println!("specs:");
    let mut warnings = Vec::new();
    for s in &problem.specs {
        println!("  {} {} {} (weight {})", s.name, s.direction.symbol(), s.threshold, s.weight);
        if s.weight == 0.0 {
            warnings.push(format!("spec `{}` has zero weight and never affects cost", s.name));
        }
    }

    let mut problems = Vec::new();
    let probe = DesignPoint::new(problem.space.params().iter().map(|p| p.len() / 2).collect());
    match cfg.problem.build() {
        Ok((_, mut ev)) => match ev.evaluate(&probe, &problem.space) {
            Ok(m) => match EvaluatedDesign::new(probe.clone(), m, &problem.specs) {
                Ok(d) => println!("probe {}: ok, cost {}", probe, d.cost),
                Err(e) => problems.push(format!("probe {probe}: {e}")),
            },
            Err(e) => problems.push(format!("probe {probe}: {e}")),
        },
        Err(e) => problems.push(format!("evaluator: {e}")),
    }
    for w in &warnings {
        println!("warning: {w}");
    }
    for p in &problems {
        println!("problem: {p}");
    }
    println!("resolved config:");
    print!("{}", cfg.to_toml()?);
    if problems.is_empty() {
        println!("ok");
        Ok(0)
    } else {
        Ok(3)
    }
}
