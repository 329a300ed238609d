//! The optimization loop.
//!
//! After a random initial population is simulated (and, in `dnn` mode, the
//! comparator is pretrained on it), every iteration
//!
//! 1. extends the critical-spec list,
//! 2. picks the reference design at rank `k` under the critical cost,
//! 3. breeds candidates until `n_add` of them pass the gate,
//! 4. keeps the best `mu` of parents plus approved children, and
//! 5. retrains the comparator on the new buffer (`dnn` mode).
//!
//! The gate is the comparator in `dnn` mode, a real simulation in `oracle`
//! mode and absent in `vanilla` mode.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::comparator::{self, ComparatorNet, NetCheckpoint, NetShape, TrainConfig};
use crate::critical::{self, CriticalSpecList};
use crate::domain::{Buffer, DesignPoint, DesignSpace, EvaluatedDesign, Problem};
use crate::error::{Error, Result};
use crate::evaluators::{EvalError, Evaluator};
use crate::evolution::{self, EvoConfig, Generator, MuPlusLambda, ParentPool};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Candidates are simulated only if the comparator predicts they beat the reference.
    Dnn,
    /// Every candidate is simulated and compared to the reference directly.
    Oracle,
    /// Every candidate is simulated and accepted.
    Vanilla,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Dnn => "dnn",
            Mode::Oracle => "oracle",
            Mode::Vanilla => "vanilla",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "dnn" => Ok(Mode::Dnn),
            "oracle" => Ok(Mode::Oracle),
            "vanilla" => Ok(Mode::Vanilla),
            other => Err(format!("unknown mode `{other}` (expected dnn, oracle or vanilla)")),
        }
    }
}

/// Comparator layer widths; the dropout rate lives in [`TrainConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetArch {
    pub feature_width: usize,
    pub feature_layers: usize,
    pub head_width: usize,
}

impl Default for NetArch {
    fn default() -> Self {
        NetArch {
            feature_width: 20,
            feature_layers: 2,
            head_width: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub mode: Mode,
    pub seed: u64,
    pub initial_population: usize,
    /// 0-based rank of the reference design; also the top-k of the critical-spec update.
    pub reference_rank: usize,
    /// Approved children per iteration.
    pub n_add: usize,
    pub max_iterations: usize,
    /// Gate decisions allowed per iteration before falling back.
    pub max_gate_queries: usize,
    pub pretrain_epochs: usize,
    /// Designs averaged for the reported top-m cost.
    pub top_m: usize,
    /// A critical spec passes the gate when its averaged probability exceeds this.
    pub approval_threshold: f64,
    /// Survivors per iteration; the initial population size when unset.
    pub mu: Option<usize>,
    /// Failed evaluations tolerated within one iteration before aborting.
    pub max_eval_failures: usize,
    pub train: TrainConfig,
    pub evo: EvoConfig,
    pub net: NetArch,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            mode: Mode::Dnn,
            seed: 0,
            initial_population: 100,
            reference_rank: 20,
            n_add: 5,
            max_iterations: 200,
            max_gate_queries: 20_000,
            pretrain_epochs: 10,
            top_m: 20,
            approval_threshold: 0.5,
            mu: None,
            max_eval_failures: 50,
            train: TrainConfig::default(),
            evo: EvoConfig::default(),
            net: NetArch::default(),
        }
    }
}

/// Seed of an independent sub-stream of `seed`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.random()
}

const STREAM_INIT: u64 = 1;
const STREAM_GATE: u64 = 2;
const STREAM_TRAIN: u64 = 3;
const STREAM_EVO: u64 = 4;
const STREAM_NET: u64 = 5;

impl EngineConfig {
    pub fn mu(&self) -> usize {
        self.mu.unwrap_or(self.initial_population)
    }

    /// Fills in every value derived from others, so the config can be
    /// written out and replayed verbatim.
    pub fn resolved(mut self) -> Self {
        self.mu = Some(self.mu());
        if self.train.seed.is_none() {
            self.train.seed = Some(derive_seed(self.seed, STREAM_TRAIN));
        }
        if self.evo.seed.is_none() {
            self.evo.seed = Some(derive_seed(self.seed, STREAM_EVO));
        }
        self
    }

    /// Checks every field, naming the first offending one.
    pub fn validate(&self) -> Result<()> {
        let err = |f: &str, m: String| Err(Error::config(f, m));
        if self.initial_population < 2 {
            return err("engine.initial_population", "must be at least 2".into());
        }
        let mu = self.mu();
        if mu < 2 {
            return err("engine.mu", "must be at least 2".into());
        }
        if self.reference_rank >= mu.min(self.initial_population) {
            return err(
                "engine.reference_rank",
                format!("must be below the buffer size ({})", mu.min(self.initial_population)),
            );
        }
        if self.n_add == 0 {
            return err("engine.n_add", "must be positive".into());
        }
        if self.max_gate_queries == 0 {
            return err("engine.max_gate_queries", "must be positive".into());
        }
        if self.top_m == 0 {
            return err("engine.top_m", "must be positive".into());
        }
        if !(self.approval_threshold > 0.0 && self.approval_threshold < 1.0) {
            return err("engine.approval_threshold", "must lie in (0, 1)".into());
        }
        if let Err(e) = self.train.validate() {
            return err("engine.train", e.to_string());
        }
        if let Err(e) = self.evo.validate() {
            return err("engine.evo", e.to_string());
        }
        if self.net.head_width == 0 || self.net.head_width % 2 != 0 {
            return err("engine.net.head_width", "must be even and positive".into());
        }
        if self.net.feature_width == 0 || self.net.feature_layers == 0 {
            return err("engine.net", "feature width and layer count must be positive".into());
        }
        Ok(())
    }

    fn net_shape(&self, problem: &Problem) -> NetShape {
        NetShape {
            input_dim: problem.space.dim(),
            feature_width: self.net.feature_width,
            feature_layers: self.net.feature_layers,
            head_width: self.net.head_width,
            heads: problem.specs.len(),
            dropout: self.train.dropout,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Solved,
    MaxIterations,
    /// An iteration spent its whole gate budget without adding a design.
    GateExhausted,
}

impl RunStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Solved => "solved",
            RunStatus::MaxIterations => "max_iterations",
            RunStatus::GateExhausted => "gate_exhausted",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub simulations: u64,
    pub nn_queries: u64,
    /// Distinct new candidates put to the gate (all modes).
    pub candidates: u64,
    pub retrainings: u64,
    /// Generated candidates discarded as already known.
    pub duplicates: u64,
    pub eval_failures: u64,
    pub fallbacks: u64,
}

/// A failed evaluation that was skipped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Incident {
    pub iteration: usize,
    pub point: DesignPoint,
    pub message: String,
}

/// State after one iteration (iteration 0 is the initial population).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub best_cost: f64,
    pub avg_top_cost: f64,
    pub critical: Vec<String>,
    /// Children approved by the gate and simulated.
    pub approved: usize,
    /// Children simulated through the exhausted-budget fallback.
    pub fallback: usize,
    /// Oracle-mode candidates simulated and then rejected.
    pub rejected_simulated: usize,
    pub gate_exhausted: bool,
    pub simulations: u64,
    pub nn_queries: u64,
    pub candidates: u64,
    pub retrainings: u64,
    pub reference: Option<EvaluatedDesign>,
    pub offspring: Vec<EvaluatedDesign>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub mode: Mode,
    pub seed: u64,
    pub initial_population: usize,
    pub n_add: usize,
    pub status: RunStatus,
    pub records: Vec<IterationRecord>,
    pub counters: Counters,
    pub incidents: Vec<Incident>,
    pub best: EvaluatedDesign,
}

impl RunResult {
    pub fn iterations(&self) -> usize {
        self.records.last().map_or(0, |r| r.iteration)
    }

    /// Simulations spent when the first zero-cost design entered the buffer.
    pub fn simulations_to_solve(&self) -> Option<u64> {
        self.records.iter().find(|r| r.best_cost == 0.0).map(|r| r.simulations)
    }

    pub fn iterations_to_solve(&self) -> Option<usize> {
        self.records.iter().find(|r| r.best_cost == 0.0).map(|r| r.iteration)
    }

    /// Checks the bookkeeping identities every run satisfies, returning the
    /// first one that fails.
    pub fn reconcile(&self) -> std::result::Result<(), String> {
        let fail = |m: String| Err(m);
        let first = self.records.first().ok_or("run has no records")?;
        if first.iteration != 0 || first.simulations != self.initial_population as u64 {
            return fail(format!(
                "initial record has {} simulations, population is {}",
                first.simulations, self.initial_population
            ));
        }
        let mut fallbacks = 0u64;
        for w in self.records.windows(2) {
            let (prev, r) = (&w[0], &w[1]);
            let it = r.iteration;
            if it != prev.iteration + 1 {
                return fail(format!("iteration {it} follows {}", prev.iteration));
            }
            let sims = r.simulations - prev.simulations;
            let added = (r.approved + r.fallback) as u64;
            if sims != added + r.rejected_simulated as u64 {
                return fail(format!(
                    "iteration {it}: {sims} simulations but {} approved, {} fallback, {} rejected",
                    r.approved, r.fallback, r.rejected_simulated
                ));
            }
            if r.offspring.len() as u64 != added {
                return fail(format!("iteration {it}: {} offspring for {added} additions", r.offspring.len()));
            }
            if added > self.n_add as u64 {
                return fail(format!("iteration {it}: {added} additions exceed n_add {}", self.n_add));
            }
            if r.fallback > 0 && !r.gate_exhausted {
                return fail(format!("iteration {it}: fallback without an exhausted gate"));
            }
            let queries = r.nn_queries - prev.nn_queries;
            let candidates = r.candidates - prev.candidates;
            let retrainings = r.retrainings - prev.retrainings;
            let ok = match self.mode {
                Mode::Dnn => {
                    queries == candidates && queries >= r.approved as u64 && r.rejected_simulated == 0 && retrainings == 1
                }
                Mode::Oracle => {
                    queries == 0
                        && r.fallback == 0
                        && retrainings == 0
                        && candidates >= (r.approved + r.rejected_simulated) as u64
                }
                Mode::Vanilla => {
                    queries == 0 && r.fallback == 0 && r.rejected_simulated == 0 && retrainings == 0 && candidates >= r.approved as u64
                }
            };
            if !ok {
                return fail(format!(
                    "iteration {it}: {queries} queries, {candidates} candidates, {retrainings} retrainings do not fit {} mode",
                    self.mode
                ));
            }
            fallbacks += r.fallback as u64;
        }
        let last = self.records.last().expect("nonempty");
        let c = &self.counters;
        if (c.simulations, c.nn_queries, c.candidates, c.retrainings, c.fallbacks)
            != (last.simulations, last.nn_queries, last.candidates, last.retrainings, fallbacks)
        {
            return fail(format!("final counters {c:?} disagree with the last record"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct EngineState {
    iteration: usize,
    buffer: Buffer,
    critical: CriticalSpecList,
    net: Option<ComparatorNet>,
    gate_rng: ChaCha8Rng,
    train_rng: ChaCha8Rng,
    evo_rng: ChaCha8Rng,
    counters: Counters,
    records: Vec<IterationRecord>,
    incidents: Vec<Incident>,
    status: Option<RunStatus>,
}

pub const CHECKPOINT_FORMAT: &str = "specgate-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to continue a run exactly where it stopped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub mode: Mode,
    pub problem_fingerprint: String,
    pub config: EngineConfig,
    pub iteration: usize,
    pub buffer: Buffer,
    pub critical: CriticalSpecList,
    pub net: Option<NetCheckpoint>,
    pub gate_rng: ChaCha8Rng,
    pub train_rng: ChaCha8Rng,
    pub evo_rng: ChaCha8Rng,
    pub counters: Counters,
    pub records: Vec<IterationRecord>,
    pub incidents: Vec<Incident>,
    pub status: Option<RunStatus>,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// Parses a checkpoint, rejecting other formats and versions.
    pub fn from_json(s: &str) -> Result<Self> {
        let v: serde_json::Value = serde_json::from_str(s)?;
        let format = v.get("format").and_then(|f| f.as_str()).unwrap_or_default();
        let version = v.get("version").and_then(|f| f.as_u64()).unwrap_or_default();
        if format != CHECKPOINT_FORMAT || version != CHECKPOINT_VERSION as u64 {
            return Err(Error::Incompatible(format!(
                "found `{format}` v{version}, expected `{CHECKPOINT_FORMAT}` v{CHECKPOINT_VERSION}"
            )));
        }
        Ok(serde_json::from_value(v)?)
    }
}

/// Draws `size` distinct uniform design points and evaluates them.
pub fn init_population<E, R>(
    problem: &Problem,
    evaluator: &mut E,
    size: usize,
    rng: &mut R,
) -> Result<Buffer>
where
    E: Evaluator + ?Sized,
    R: Rng + ?Sized,
{
    if size < 2 {
        return Err(Error::contract("initial population needs at least 2 designs"));
    }
    let points = draw_distinct(&problem.space, size, rng)?;
    let results = evaluator.evaluate_batch(&points, &problem.space);
    let mut buffer = Buffer::new();
    for (point, r) in points.into_iter().zip(results) {
        let m = r.map_err(|source| Error::Evaluator {
            point: point.clone(),
            source,
        })?;
        let d = EvaluatedDesign::new(point.clone(), m, &problem.specs).map_err(|e| Error::Evaluator {
            point,
            source: EvalError::Schema(e.to_string()),
        })?;
        buffer.insert(d);
    }
    Ok(buffer)
}

fn draw_distinct<R: Rng + ?Sized>(space: &DesignSpace, size: usize, rng: &mut R) -> Result<Vec<DesignPoint>> {
    let budget = size.saturating_mul(100).max(1000);
    let mut seen = HashSet::with_capacity(size);
    let mut points = Vec::with_capacity(size);
    for _ in 0..budget {
        let p = DesignPoint::new(space.params().iter().map(|p| rng.random_range(0..p.len())).collect());
        if seen.insert(p.clone()) {
            points.push(p);
            if points.len() == size {
                return Ok(points);
            }
        }
    }
    Err(Error::contract(format!(
        "could not draw {size} distinct designs in {budget} attempts (space has {} cells)",
        space.cardinality()
    )))
}

enum Gate {
    Dnn { net: comparator::CompiledNet, reference: Vec<f64>, heads: Vec<usize> },
    Oracle,
    Vanilla,
}

/// A run in progress.
pub struct Engine<'e, E: Evaluator + ?Sized> {
    cfg: EngineConfig,
    problem: Problem,
    evaluator: &'e mut E,
    state: EngineState,
}

impl<'e, E: Evaluator + ?Sized> Engine<'e, E> {
    /// Simulates the initial population and pretrains the comparator.
    pub fn start(cfg: EngineConfig, problem: Problem, evaluator: &'e mut E) -> Result<Self> {
        let cfg = cfg.resolved();
        cfg.validate()?;
        let mut init_rng = stream(cfg.seed, STREAM_INIT);
        let buffer = init_population(&problem, evaluator, cfg.initial_population, &mut init_rng)?;
        let mut train_rng = ChaCha8Rng::seed_from_u64(cfg.train.seed.expect("resolved"));
        let net = if cfg.mode == Mode::Dnn {
            let mut net = ComparatorNet::new(cfg.net_shape(&problem), derive_seed(cfg.seed, STREAM_NET))?;
            train_on(&mut net, &buffer, &problem, &cfg.train, cfg.pretrain_epochs, &mut train_rng)?;
            Some(net)
        } else {
            None
        };
        let counters = Counters {
            simulations: buffer.len() as u64,
            ..Counters::default()
        };
        let mut state = EngineState {
            iteration: 0,
            critical: CriticalSpecList::new(),
            net,
            gate_rng: stream(cfg.seed, STREAM_GATE),
            train_rng,
            evo_rng: ChaCha8Rng::seed_from_u64(cfg.evo.seed.expect("resolved")),
            counters,
            records: Vec::new(),
            incidents: Vec::new(),
            status: None,
            buffer,
        };
        let record = IterationRecord {
            iteration: 0,
            best_cost: state.buffer.best_cost().unwrap_or(f64::NAN),
            avg_top_cost: state.buffer.mean_top_cost(cfg.top_m),
            critical: Vec::new(),
            approved: 0,
            fallback: 0,
            rejected_simulated: 0,
            gate_exhausted: false,
            simulations: state.counters.simulations,
            nn_queries: 0,
            candidates: 0,
            retrainings: 0,
            reference: None,
            offspring: Vec::new(),
        };
        state.records.push(record);
        if state.buffer.best_cost() == Some(0.0) {
            state.status = Some(RunStatus::Solved);
        } else if cfg.max_iterations == 0 {
            state.status = Some(RunStatus::MaxIterations);
        }
        Ok(Engine {
            cfg,
            problem,
            evaluator,
            state,
        })
    }

    /// Continues from a checkpoint. The mode and problem must match it.
    pub fn restore(cfg: EngineConfig, problem: Problem, evaluator: &'e mut E, ckpt: Checkpoint) -> Result<Self> {
        let cfg = cfg.resolved();
        cfg.validate()?;
        if ckpt.mode != cfg.mode {
            return Err(Error::Incompatible(format!(
                "checkpoint was taken in {} mode, run is configured for {}",
                ckpt.mode, cfg.mode
            )));
        }
        if ckpt.problem_fingerprint != problem.fingerprint() {
            return Err(Error::Incompatible("checkpoint belongs to a different problem".into()));
        }
        let net = ckpt.net.as_ref().map(ComparatorNet::from_checkpoint).transpose()?;
        if (cfg.mode == Mode::Dnn) != net.is_some() {
            return Err(Error::Incompatible("checkpoint network does not match the mode".into()));
        }
        let mut status = ckpt.status;
        // A run that stopped on its iteration cap may be extended.
        if status == Some(RunStatus::MaxIterations) && ckpt.iteration < cfg.max_iterations {
            status = None;
        }
        Ok(Engine {
            cfg,
            problem,
            evaluator,
            state: EngineState {
                iteration: ckpt.iteration,
                buffer: ckpt.buffer,
                critical: ckpt.critical,
                net,
                gate_rng: ckpt.gate_rng,
                train_rng: ckpt.train_rng,
                evo_rng: ckpt.evo_rng,
                counters: ckpt.counters,
                records: ckpt.records,
                incidents: ckpt.incidents,
                status,
            },
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let s = &self.state;
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_owned(),
            version: CHECKPOINT_VERSION,
            mode: self.cfg.mode,
            problem_fingerprint: self.problem.fingerprint(),
            config: self.cfg.clone(),
            iteration: s.iteration,
            buffer: s.buffer.clone(),
            critical: s.critical.clone(),
            net: s.net.as_ref().map(|n| n.to_checkpoint()),
            gate_rng: s.gate_rng.clone(),
            train_rng: s.train_rng.clone(),
            evo_rng: s.evo_rng.clone(),
            counters: s.counters.clone(),
            records: s.records.clone(),
            incidents: s.incidents.clone(),
            status: s.status,
        }
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn problem(&self) -> &Problem {
        &self.problem
    }

    pub fn iteration(&self) -> usize {
        self.state.iteration
    }

    pub fn buffer(&self) -> &Buffer {
        &self.state.buffer
    }

    pub fn critical(&self) -> &CriticalSpecList {
        &self.state.critical
    }

    pub fn net(&self) -> Option<&ComparatorNet> {
        self.state.net.as_ref()
    }

    pub fn counters(&self) -> &Counters {
        &self.state.counters
    }

    pub fn records(&self) -> &[IterationRecord] {
        &self.state.records
    }

    pub fn status(&self) -> Option<RunStatus> {
        self.state.status
    }

    pub fn is_done(&self) -> bool {
        self.state.status.is_some()
    }

    /// Runs one iteration. On error the engine is left at the previous
    /// iteration boundary.
    pub fn step(&mut self) -> Result<&IterationRecord> {
        if self.is_done() {
            return Err(Error::contract("run has already finished"));
        }
        let mut st = self.state.clone();
        iterate(&self.cfg, &self.problem, &mut *self.evaluator, &mut st)?;
        self.state = st;
        Ok(self.state.records.last().expect("iteration recorded"))
    }

    /// Iterates until solved or out of budget.
    pub fn run(mut self) -> Result<RunResult> {
        self.run_with(|_| Ok(()))
    }

    /// Like [`run`](Self::run), calling `after_step` at every iteration boundary.
    pub fn run_with<F>(&mut self, mut after_step: F) -> Result<RunResult>
    where
        F: FnMut(&Self) -> Result<()>,
    {
        while !self.is_done() {
            self.step()?;
            after_step(self)?;
        }
        Ok(self.result())
    }

    pub fn result(&self) -> RunResult {
        let s = &self.state;
        let best = s.buffer.ranked(&[], None)[0];
        RunResult {
            mode: self.cfg.mode,
            seed: self.cfg.seed,
            initial_population: self.cfg.initial_population,
            n_add: self.cfg.n_add,
            status: s.status.unwrap_or(RunStatus::MaxIterations),
            records: s.records.clone(),
            counters: s.counters.clone(),
            incidents: s.incidents.clone(),
            best: s.buffer.designs()[best].clone(),
        }
    }
}

/// Runs a whole optimization.
pub fn run<E: Evaluator + ?Sized>(cfg: EngineConfig, problem: Problem, evaluator: &mut E) -> Result<RunResult> {
    Engine::start(cfg, problem, evaluator)?.run()
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn train_on(
    net: &mut ComparatorNet,
    buffer: &Buffer,
    problem: &Problem,
    cfg: &TrainConfig,
    epochs: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    if epochs == 0 {
        return Ok(Vec::new());
    }
    let pairs = comparator::make_pairs(buffer, &problem.space, &problem.specs)?;
    let pairs = comparator::subsample(pairs, cfg.max_pairs, rng);
    let cfg = TrainConfig {
        epochs,
        ..cfg.clone()
    };
    comparator::train(net, &pairs, &cfg, rng)
}

/// Outcome of simulating one design inside an iteration.
fn simulate<E: Evaluator + ?Sized>(
    evaluator: &mut E,
    problem: &Problem,
    point: &DesignPoint,
    st: &mut EngineState,
    failures: &mut usize,
    max_failures: usize,
) -> Result<Option<EvaluatedDesign>> {
    let outcome = evaluator
        .evaluate(point, &problem.space)
        .and_then(|m| EvaluatedDesign::new(point.clone(), m, &problem.specs).map_err(|e| EvalError::Schema(e.to_string())));
    match outcome {
        Ok(d) => {
            st.counters.simulations += 1;
            Ok(Some(d))
        }
        Err(e) => {
            log::warn!("iteration {}: evaluation of {point} failed: {e}", st.iteration);
            st.counters.eval_failures += 1;
            st.incidents.push(Incident {
                iteration: st.iteration,
                point: point.clone(),
                message: e.to_string(),
            });
            *failures += 1;
            if *failures >= max_failures {
                return Err(Error::Evaluator {
                    point: point.clone(),
                    source: e,
                });
            }
            Ok(None)
        }
    }
}

fn beats_on_all(problem: &Problem, cand: &EvaluatedDesign, reference: &EvaluatedDesign, heads: &[usize]) -> bool {
    heads.iter().all(|&i| {
        let s = &problem.specs[i];
        s.direction.strictly_better(cand.value(s), reference.value(s))
    })
}

fn iterate<E: Evaluator + ?Sized>(cfg: &EngineConfig, problem: &Problem, evaluator: &mut E, st: &mut EngineState) -> Result<()> {
    st.iteration += 1;
    let specs = &problem.specs;
    let k = cfg.reference_rank;
    st.critical = critical::update_critical(&st.buffer, specs, &st.critical, k.min(st.buffer.len()))?;
    let reference = critical::select_reference(&st.buffer, specs, &st.critical, k)?.clone();
    let heads = st.critical.indices(specs)?;

    let gate = match cfg.mode {
        Mode::Dnn => Gate::Dnn {
            net: st.net.as_ref().expect("dnn mode has a network").compile(),
            reference: problem.space.encode(&reference.point)?,
            heads: heads.clone(),
        },
        Mode::Oracle => Gate::Oracle,
        Mode::Vanilla => Gate::Vanilla,
    };

    let generator = MuPlusLambda::new(cfg.evo.clone())?;
    let buffer = st.buffer.clone();
    let pool = ParentPool::new(&buffer, cfg.evo.parent_fraction)?;
    let mut seen: HashSet<DesignPoint> = HashSet::new();
    let mut children: Vec<EvaluatedDesign> = Vec::new();
    // Rejected dnn candidates: (lowest critical probability, order seen, point).
    let mut runners_up: Vec<(f64, usize, DesignPoint)> = Vec::new();
    let (mut queries, mut duplicates, mut failures) = (0usize, 0usize, 0usize);
    let (mut approved, mut rejected_simulated) = (0usize, 0usize);
    let mut exhausted = false;

    while children.len() < cfg.n_add {
        if queries >= cfg.max_gate_queries || duplicates >= cfg.max_gate_queries {
            exhausted = true;
            break;
        }
        let cand = generator.generate(&pool, &problem.space, &mut st.evo_rng)?;
        if buffer.contains(&cand) || !seen.insert(cand.clone()) {
            duplicates += 1;
            st.counters.duplicates += 1;
            continue;
        }
        queries += 1;
        st.counters.candidates += 1;
        match &gate {
            Gate::Vanilla => {
                if let Some(d) = simulate(evaluator, problem, &cand, st, &mut failures, cfg.max_eval_failures)? {
                    approved += 1;
                    children.push(d);
                }
            }
            Gate::Oracle => {
                if let Some(d) = simulate(evaluator, problem, &cand, st, &mut failures, cfg.max_eval_failures)? {
                    if beats_on_all(problem, &d, &reference, &heads) {
                        approved += 1;
                        children.push(d);
                    } else {
                        rejected_simulated += 1;
                    }
                }
            }
            Gate::Dnn { net, reference: x_ref, heads } => {
                st.counters.nn_queries += 1;
                let x = problem.space.encode(&cand)?;
                let p = net.mc_predict(&x, x_ref, heads, cfg.train.mc_samples, &mut st.gate_rng)?;
                if p.iter().all(|&v| v > cfg.approval_threshold) {
                    if let Some(d) = simulate(evaluator, problem, &cand, st, &mut failures, cfg.max_eval_failures)? {
                        approved += 1;
                        children.push(d);
                    }
                } else {
                    let score = p.iter().copied().fold(f64::INFINITY, f64::min);
                    runners_up.push((score, queries, cand));
                }
            }
        }
    }

    let mut fallback = 0;
    if exhausted && matches!(gate, Gate::Dnn { .. }) && children.len() < cfg.n_add {
        runners_up.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for (_, _, point) in runners_up {
            if children.len() >= cfg.n_add {
                break;
            }
            if let Some(d) = simulate(evaluator, problem, &point, st, &mut failures, cfg.max_eval_failures)? {
                fallback += 1;
                children.push(d);
            }
        }
        st.counters.fallbacks += fallback as u64;
        log::info!("iteration {}: gate budget exhausted, {fallback} fallback simulations", st.iteration);
    }

    st.buffer = evolution::select(&st.buffer, &children, cfg.mu());

    if let Some(net) = st.net.as_mut() {
        train_on(net, &st.buffer, problem, &cfg.train, cfg.train.epochs, &mut st.train_rng)?;
        st.counters.retrainings += 1;
    }

    let best = st.buffer.best_cost().unwrap_or(f64::NAN);
    st.records.push(IterationRecord {
        iteration: st.iteration,
        best_cost: best,
        avg_top_cost: st.buffer.mean_top_cost(cfg.top_m),
        critical: st.critical.entries().to_vec(),
        approved,
        fallback,
        rejected_simulated,
        gate_exhausted: exhausted,
        simulations: st.counters.simulations,
        nn_queries: st.counters.nn_queries,
        candidates: st.counters.candidates,
        retrainings: st.counters.retrainings,
        reference: Some(reference),
        offspring: children.clone(),
    });
    log::debug!(
        "iteration {}: best {best:.4} sims {} queries {} critical [{}]",
        st.iteration,
        st.counters.simulations,
        st.counters.nn_queries,
        st.critical
    );

    st.status = if best == 0.0 {
        Some(RunStatus::Solved)
    } else if exhausted && children.is_empty() {
        Some(RunStatus::GateExhausted)
    } else if st.iteration >= cfg.max_iterations {
        Some(RunStatus::MaxIterations)
    } else {
        None
    };
    Ok(())
}
