//! Experiment harness behind the `dualagent` binary: dataset generation, the
//! method comparison matrix, the one-at-a-time ablation grid and report
//! re-aggregation. Every output is CSV.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use dualagent_core::coordinator::{
    Coordinator, HttpTransport, LlmConfig, LlmCoordinator, RuleCoordinator, ScriptedTransport,
};
use dualagent_core::dataio::{
    generate_synthetic, load_dataset, write_dataset, Dataset, DatasetPaths, SyntheticConfig,
};
use dualagent_core::domain::{ConstraintThresholds, DAY};
use dualagent_core::engine::{run, write_trace_csv, EngineConfig, Mode, OptimizationResult};
use dualagent_core::metrics::{report, MetricsReport};

/// Where the data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSpec {
    Synthetic(SyntheticConfig),
    Files {
        #[serde(flatten)]
        paths: DatasetPaths,
        #[serde(default = "default_holdout")]
        holdout_len: usize,
    },
}

fn default_holdout() -> usize {
    5
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Synthetic(SyntheticConfig::default())
    }
}

impl DatasetSpec {
    pub fn load(&self) -> Result<Dataset> {
        Ok(match self {
            DatasetSpec::Synthetic(config) => generate_synthetic(config)?,
            DatasetSpec::Files { paths, holdout_len } => load_dataset(paths, *holdout_len)
                .with_context(|| format!("loading dataset from {}", paths.catalog.display()))?,
        })
    }
}

/// Constraint thresholds as written in a config file. `now` defaults to the
/// latest timestamp in the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThresholdSpec {
    pub theta_fair: f64,
    pub theta_seller: f64,
    pub theta_new: f64,
    pub recency_window_days: i64,
    pub now: Option<i64>,
}

impl Default for ThresholdSpec {
    fn default() -> Self {
        let d = ConstraintThresholds::default();
        Self {
            theta_fair: d.theta_fair,
            theta_seller: d.theta_seller,
            theta_new: d.theta_new,
            recency_window_days: d.recency_window / DAY,
            now: None,
        }
    }
}

impl ThresholdSpec {
    pub fn resolve(&self, dataset: &Dataset) -> ConstraintThresholds {
        ConstraintThresholds {
            theta_fair: self.theta_fair,
            theta_seller: self.theta_seller,
            theta_new: self.theta_new,
            recency_window: self.recency_window_days * DAY,
            now: self.now.unwrap_or_else(|| dataset.now()),
        }
    }
}

/// One experiment definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunSpec {
    pub engine: EngineConfig,
    pub thresholds: ThresholdSpec,
    pub llm: LlmConfig,
    pub dataset: DatasetSpec,
    /// Number of users (in dataset order) optimized per trial.
    pub users: usize,
    /// Trial count; when `seeds` is empty the seeds are `0..trials`.
    pub trials: Option<usize>,
    pub seeds: Vec<u64>,
    pub modes: Vec<Mode>,
    /// Population budget used by single-population runs.
    pub single_population_size: usize,
}

impl Default for RunSpec {
    fn default() -> Self {
        Self {
            engine: EngineConfig::default(),
            thresholds: ThresholdSpec::default(),
            llm: LlmConfig::default(),
            dataset: DatasetSpec::default(),
            users: 1,
            trials: None,
            seeds: Vec::new(),
            modes: Mode::ALL.to_vec(),
            single_population_size: 200,
        }
    }
}

impl RunSpec {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// The seed list after applying the trial count.
    pub fn effective_seeds(&self) -> Result<Vec<u64>> {
        let seeds = if self.seeds.is_empty() {
            (0..self.trials.unwrap_or(3) as u64).collect()
        } else {
            self.seeds.clone()
        };
        if let Some(trials) = self.trials {
            if trials != seeds.len() {
                bail!("trials = {trials} but {} seeds were given", seeds.len());
            }
        }
        if seeds.is_empty() {
            bail!("at least one trial is required");
        }
        let unique: HashSet<u64> = seeds.iter().copied().collect();
        if unique.len() != seeds.len() {
            bail!("seeds must be distinct");
        }
        Ok(seeds)
    }

    /// Engine configuration for one trial.
    pub fn engine_for(&self, mode: Mode, seed: u64) -> EngineConfig {
        let mut config = self.engine.clone();
        config.mode = mode;
        config.rng_seed = seed;
        if mode == Mode::SinglePopulation {
            config.population_total = self.single_population_size;
        }
        config
    }
}

/// Which coordinator dual-mode runs use.
#[derive(Debug, Clone, Default)]
pub enum CoordinatorChoice {
    #[default]
    Rule,
    Live(LlmConfig),
    /// Canned replies, replayed from the start for every run.
    Scripted(String),
}

impl CoordinatorChoice {
    fn build(&self, mode: Mode) -> Result<Box<dyn Coordinator>> {
        if mode != Mode::Dual && mode != Mode::NoConstraints {
            return Ok(Box::new(RuleCoordinator::default()));
        }
        Ok(match self {
            CoordinatorChoice::Rule => Box::new(RuleCoordinator::default()),
            CoordinatorChoice::Live(config) => {
                Box::new(LlmCoordinator::new(HttpTransport::new(config), config.clone()))
            }
            CoordinatorChoice::Scripted(script) => Box::new(LlmCoordinator::new(
                ScriptedTransport::from_json(script).context("parsing mock LLM script")?,
                LlmConfig::default(),
            )),
        })
    }
}

/// One metrics row: a trial or a per-mode mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub mode: String,
    /// Trial seed, or `mean`.
    pub seed: String,
    pub hv: f64,
    pub ndcg: f64,
    pub diversity: f64,
    pub diversity_set: f64,
    pub feasibility: f64,
    pub front_feasibility: f64,
    pub pareto_size: f64,
    /// Share of users for which a feasible Pareto set was returned.
    pub success: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CoordinationRow {
    mode: String,
    seed: u64,
    user: String,
    generation: usize,
    alpha: f64,
    source: String,
    exploit_size: usize,
    explore_size: usize,
    fallback_reason: String,
}

/// Averages per-user reports into one row.
fn mean_row(mode: &str, seed: String, reports: &[MetricsReport]) -> MetricsRow {
    let n = reports.len().max(1) as f64;
    let avg = |f: &dyn Fn(&MetricsReport) -> f64| reports.iter().map(f).fold(0.0, |a, b| a + b) / n;
    MetricsRow {
        mode: mode.to_string(),
        seed,
        hv: avg(&|r| r.hypervolume),
        ndcg: avg(&|r| r.ndcg_at_k),
        diversity: avg(&|r| r.diversity),
        diversity_set: avg(&|r| r.diversity_set_mean),
        feasibility: avg(&|r| r.feasibility_rate),
        front_feasibility: avg(&|r| r.front_feasibility),
        pareto_size: avg(&|r| r.pareto_size as f64),
        success: avg(&|r| if r.success { 1.0 } else { 0.0 }),
    }
}

/// Means of the trial rows, one per mode in first-seen order.
pub fn aggregate(rows: &[MetricsRow]) -> Vec<MetricsRow> {
    let mut order = Vec::new();
    let mut groups: BTreeMap<&str, Vec<&MetricsRow>> = BTreeMap::new();
    for row in rows.iter().filter(|r| r.seed != "mean") {
        if !groups.contains_key(row.mode.as_str()) {
            order.push(row.mode.as_str());
        }
        groups.entry(&row.mode).or_default().push(row);
    }
    order
        .into_iter()
        .map(|mode| {
            let g = &groups[mode];
            let n = g.len() as f64;
            let avg = |f: &dyn Fn(&MetricsRow) -> f64| g.iter().map(|r| f(r)).fold(0.0, |a, b| a + b) / n;
            MetricsRow {
                mode: mode.to_string(),
                seed: "mean".into(),
                hv: avg(&|r| r.hv),
                ndcg: avg(&|r| r.ndcg),
                diversity: avg(&|r| r.diversity),
                diversity_set: avg(&|r| r.diversity_set),
                feasibility: avg(&|r| r.feasibility),
                front_feasibility: avg(&|r| r.front_feasibility),
                pareto_size: avg(&|r| r.pareto_size),
                success: avg(&|r| r.success),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub coordinator: CoordinatorChoice,
    /// Also write whitespace-separated `.dat` traces for gnuplot.
    pub gnuplot: bool,
}

/// Summary of a `run` invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub trial_rows: Vec<MetricsRow>,
    pub mean_rows: Vec<MetricsRow>,
    /// True when every trial outside no-constraints mode returned a feasible set for every user.
    pub all_feasible: bool,
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

fn write_gnuplot(path: &Path, result: &OptimizationResult) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(File::create(path)?);
    writeln!(out, "# gen epsilon alpha hv_exploit hv_explore feasibility_rate f1_best f2_best f3_best")?;
    for r in &result.trace {
        let b = r.best_objectives;
        writeln!(
            out,
            "{} {} {} {} {} {} {} {} {}",
            r.generation, r.epsilon, r.alpha, r.hv_exploit, r.hv_explore, r.feasibility_rate,
            b.relevance, b.diversity, b.novelty
        )?;
    }
    out.flush()?;
    Ok(())
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect()
}

/// Runs every configured mode for every seed and writes `metrics.csv`,
/// `coordination.csv` and one trace CSV per trial and user under `traces/`.
pub fn cmd_run(spec: &RunSpec, out_dir: &Path, options: &RunOptions) -> Result<RunSummary> {
    let seeds = spec.effective_seeds()?;
    if spec.users == 0 {
        bail!("users must be at least 1");
    }
    let dataset = spec.dataset.load()?;
    let thresholds = spec.thresholds.resolve(&dataset);
    let users = &dataset.users[..spec.users.min(dataset.users.len())];
    if users.is_empty() {
        bail!("the dataset has no users with a usable history");
    }
    let traces = out_dir.join("traces");
    fs::create_dir_all(&traces)?;

    let mut trial_rows = Vec::new();
    let mut coordination = Vec::new();
    let mut all_feasible = true;
    for &mode in &spec.modes {
        for &seed in &seeds {
            let config = spec.engine_for(mode, seed);
            let mut reports = Vec::with_capacity(users.len());
            for user in users {
                let mut coordinator = options.coordinator.build(mode)?;
                let result = run(&config, user, &dataset.catalog, &thresholds, coordinator.as_mut())
                    .with_context(|| format!("{mode} seed {seed} user {}", user.user_id))?;
                if let dualagent_core::RunOutcome::Infeasible { diagnostic, .. } = &result.outcome {
                    warn!("{mode} seed {seed} user {}: {diagnostic}", user.user_id);
                    if mode != Mode::NoConstraints {
                        all_feasible = false;
                    }
                }
                for w in &result.warnings {
                    warn!("{mode} seed {seed} user {}: {w}", user.user_id);
                }
                let stem = format!("{}_seed{}_{}", mode.name(), seed, sanitize(&user.user_id));
                write_trace_csv(&result.trace, File::create(traces.join(format!("{stem}.csv")))?)?;
                if options.gnuplot {
                    write_gnuplot(&traces.join(format!("{stem}.dat")), &result)?;
                }
                for e in &result.coordination {
                    coordination.push(CoordinationRow {
                        mode: mode.name().into(),
                        seed,
                        user: user.user_id.clone(),
                        generation: e.generation,
                        alpha: e.alpha,
                        source: e.source.to_string(),
                        exploit_size: e.exploit_size,
                        explore_size: e.explore_size,
                        fallback_reason: e.fallback_reason.clone().unwrap_or_default(),
                    });
                }
                reports.push(report(&result, user, &dataset.catalog)?);
            }
            let row = mean_row(mode.name(), seed.to_string(), &reports);
            info!("{mode} seed {seed}: hv {:.4} ndcg {:.4} feasible {:.2}", row.hv, row.ndcg, row.success);
            trial_rows.push(row);
        }
    }
    let mean_rows = aggregate(&trial_rows);
    let mut all_rows = trial_rows.clone();
    all_rows.extend(mean_rows.iter().cloned());
    write_csv(&out_dir.join("metrics.csv"), &all_rows)?;
    write_csv(&out_dir.join("coordination.csv"), &coordination)?;
    Ok(RunSummary {
        trial_rows,
        mean_rows,
        all_feasible,
    })
}

/// One ablation setting: which parameter moved and to what.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationSetting {
    pub parameter: &'static str,
    pub label: String,
    pub engine: EngineConfig,
    pub thresholds: ThresholdSpec,
}

/// The one-at-a-time grid around the base configuration: population size,
/// mutation rate, fairness threshold and generation count, three levels each.
pub fn ablation_grid(base: &RunSpec) -> Vec<AblationSetting> {
    let mut grid = Vec::with_capacity(12);
    let engine = &base.engine;
    let th = &base.thresholds;
    for n in [50, 100, 200] {
        grid.push(AblationSetting {
            parameter: "population",
            label: n.to_string(),
            engine: EngineConfig { population_total: n, ..engine.clone() },
            thresholds: th.clone(),
        });
    }
    for rate in [0.05, 0.1, 0.2] {
        grid.push(AblationSetting {
            parameter: "mutation",
            label: rate.to_string(),
            engine: EngineConfig {
                exploit_mutation: rate,
                explore_mutation: 2.0 * rate,
                ..engine.clone()
            },
            thresholds: th.clone(),
        });
    }
    for (name, theta) in [("strict", 0.7), ("normal", 0.6), ("relaxed", 0.5)] {
        grid.push(AblationSetting {
            parameter: "constraints",
            label: format!("{name} (theta_fair={theta})"),
            engine: engine.clone(),
            thresholds: ThresholdSpec { theta_fair: theta, ..th.clone() },
        });
    }
    for t_max in [20, 50, 100] {
        grid.push(AblationSetting {
            parameter: "generations",
            label: t_max.to_string(),
            engine: EngineConfig {
                t_max,
                coordination_interval: engine.coordination_interval.min(t_max),
                ..engine.clone()
            },
            thresholds: th.clone(),
        });
    }
    grid
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub parameter: String,
    pub setting: String,
    pub hv: f64,
    pub ndcg: f64,
    pub diversity: f64,
    pub feasibility: f64,
    /// Mean wall-clock seconds per optimization run.
    pub time_s: f64,
}

/// Runs the ablation grid in dual mode and writes `ablation.csv`.
pub fn cmd_ablate(spec: &RunSpec, out_dir: &Path, options: &RunOptions) -> Result<Vec<AblationRow>> {
    let seeds = spec.effective_seeds()?;
    let dataset = spec.dataset.load()?;
    let users = &dataset.users[..spec.users.max(1).min(dataset.users.len())];
    if users.is_empty() {
        bail!("the dataset has no users with a usable history");
    }
    fs::create_dir_all(out_dir)?;
    let mut rows = Vec::new();
    for setting in ablation_grid(spec) {
        let thresholds = setting.thresholds.resolve(&dataset);
        let mut reports = Vec::new();
        let mut seconds = 0.0;
        for &seed in &seeds {
            let config = EngineConfig {
                mode: Mode::Dual,
                rng_seed: seed,
                ..setting.engine.clone()
            };
            for user in users {
                let mut coordinator = options.coordinator.build(Mode::Dual)?;
                let start = Instant::now();
                let result = run(&config, user, &dataset.catalog, &thresholds, coordinator.as_mut())?;
                seconds += start.elapsed().as_secs_f64();
                reports.push(report(&result, user, &dataset.catalog)?);
            }
        }
        let m = mean_row("dual", String::new(), &reports);
        info!("{} {}: hv {:.4} ndcg {:.4}", setting.parameter, setting.label, m.hv, m.ndcg);
        rows.push(AblationRow {
            parameter: setting.parameter.into(),
            setting: setting.label,
            hv: m.hv,
            ndcg: m.ndcg,
            diversity: m.diversity,
            feasibility: m.front_feasibility,
            time_s: seconds / reports.len() as f64,
        });
    }
    write_csv(&out_dir.join("ablation.csv"), &rows)?;
    Ok(rows)
}

/// Dataset summary printed by `synth`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetSummary {
    pub items: usize,
    pub categories: usize,
    pub sellers: usize,
    pub users: usize,
    pub interactions: usize,
    pub recent_items: usize,
    pub now: i64,
}

pub fn summarize(dataset: &Dataset, recency_window: i64) -> DatasetSummary {
    let items = dataset.catalog.items();
    let now = dataset.now();
    let categories: HashSet<&str> = items.iter().flat_map(|i| i.categories.iter().map(String::as_str)).collect();
    let sellers: HashSet<&str> = items.iter().map(|i| i.seller_id.as_str()).collect();
    DatasetSummary {
        items: items.len(),
        categories: categories.len(),
        sellers: sellers.len(),
        users: dataset.users.len(),
        interactions: dataset.interactions.len(),
        recent_items: items.iter().filter(|i| now - i.listed_at <= recency_window).count(),
        now,
    }
}

/// Generates a synthetic dataset and writes it in the standard layout.
pub fn cmd_synth(config: &SyntheticConfig, out_dir: &Path) -> Result<(DatasetPaths, DatasetSummary)> {
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let dataset = generate_synthetic(config)?;
    let paths = DatasetPaths::in_dir(out_dir);
    write_dataset(&dataset, &paths).with_context(|| format!("writing to {}", out_dir.display()))?;
    Ok((paths, summarize(&dataset, config.recency_window_days * DAY)))
}

/// Re-aggregates trial rows from existing metrics files into `report.csv`.
pub fn cmd_report(inputs: &[PathBuf], out_dir: &Path) -> Result<Vec<MetricsRow>> {
    let mut trials = Vec::new();
    for path in inputs {
        let mut reader = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
        for row in reader.deserialize::<MetricsRow>() {
            let row = row.with_context(|| format!("parsing {}", path.display()))?;
            if row.seed != "mean" {
                trials.push(row);
            }
        }
    }
    if trials.is_empty() {
        bail!("no trial rows found");
    }
    let means = aggregate(&trials);
    fs::create_dir_all(out_dir)?;
    write_csv(&out_dir.join("report.csv"), &means)?;
    Ok(means)
}
