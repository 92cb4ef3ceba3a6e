use super::curve::LearningCurve;
use super::episode::{NullSink, Run, RunSink};
use super::RunConfig;
use crate::error::Result;
use crate::masks::{MaskKind, MaskSpec};

/// Builds the sink for run `(config_index, seed)`.
pub type SinkFactory<'f> = dyn Fn(usize, u64) -> Result<Box<dyn RunSink>> + Sync + 'f;

#[derive(Clone, Debug)]
pub enum RunOutcome {
    Completed(LearningCurve),
    /// The run stopped with an error; the rest of the suite kept going.
    Failed(String),
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub config_index: usize,
    pub seed: u64,
    pub outcome: RunOutcome,
}

impl RunResult {
    pub fn curve(&self) -> Option<&LearningCurve> {
        match &self.outcome {
            RunOutcome::Completed(c) => Some(c),
            RunOutcome::Failed(_) => None,
        }
    }
}

fn jobs(configs: &[RunConfig]) -> Vec<(usize, u64)> {
    configs
        .iter()
        .enumerate()
        .flat_map(|(i, c)| c.seeds.iter().map(move |&s| (i, s)))
        .collect()
}

fn run_one(configs: &[RunConfig], job: (usize, u64), sinks: &SinkFactory<'_>) -> RunResult {
    let (config_index, seed) = job;
    let outcome = sinks(config_index, seed)
        .and_then(|mut sink| Run::new(&configs[config_index], seed)?.train(sink.as_mut()));
    RunResult {
        config_index,
        seed,
        outcome: match outcome {
            Ok(c) => RunOutcome::Completed(c),
            Err(e) => RunOutcome::Failed(e.to_string()),
        },
    }
}

fn null_sinks(_: usize, _: u64) -> Result<Box<dyn RunSink>> {
    Ok(Box::new(NullSink))
}

/// Every `(config, seed)` pair, in config then seed order.
pub fn run_suite_sequential(configs: &[RunConfig]) -> Vec<RunResult> {
    run_suite_sequential_with(configs, &null_sinks)
}

pub fn run_suite_sequential_with(configs: &[RunConfig], sinks: &SinkFactory<'_>) -> Vec<RunResult> {
    jobs(configs).into_iter().map(|j| run_one(configs, j, sinks)).collect()
}

/// Same result order as [`run_suite_sequential`]; runs are spread over the
/// rayon pool.
#[cfg(feature = "parallel")]
pub fn run_suite_parallel(configs: &[RunConfig]) -> Vec<RunResult> {
    run_suite_parallel_with(configs, &null_sinks)
}

#[cfg(feature = "parallel")]
pub fn run_suite_parallel_with(configs: &[RunConfig], sinks: &SinkFactory<'_>) -> Vec<RunResult> {
    use rayon::prelude::*;
    jobs(configs).into_par_iter().map(|j| run_one(configs, j, sinks)).collect()
}

/// Parallel when the `parallel` feature is on, sequential otherwise.
pub fn run_suite(configs: &[RunConfig]) -> Vec<RunResult> {
    run_suite_with(configs, &null_sinks)
}

pub fn run_suite_with(configs: &[RunConfig], sinks: &SinkFactory<'_>) -> Vec<RunResult> {
    #[cfg(feature = "parallel")]
    {
        run_suite_parallel_with(configs, sinks)
    }
    #[cfg(not(feature = "parallel"))]
    {
        run_suite_sequential_with(configs, sinks)
    }
}

/// Middle value, or the mean of the two middle values. `None` when empty.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Convergence statistics for one configuration.
#[derive(Clone, Debug)]
pub struct KindSummary {
    pub config_index: usize,
    pub label: String,
    pub kind: MaskKind,
    /// Length of EPIC's random vector, 0 for other kinds.
    pub u_len: usize,
    pub noise_dim: usize,
    /// Per completed seed; `None` never reached the threshold.
    pub episodes: Vec<(u64, Option<usize>)>,
    pub failures: Vec<(u64, String)>,
    /// Value substituted for runs that never converged.
    pub censor_at: usize,
    pub median: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

impl KindSummary {
    pub fn new(
        config_index: usize,
        kind: MaskKind,
        u_len: usize,
        noise_dim: usize,
        censor_at: usize,
        episodes: Vec<(u64, Option<usize>)>,
        failures: Vec<(u64, String)>,
    ) -> Self {
        let label = match kind {
            MaskKind::Epic => format!("EPIC ({u_len})"),
            _ => MaskSpec::of_kind(kind).label(0),
        };
        let mut s = KindSummary {
            config_index,
            label,
            kind,
            u_len,
            noise_dim,
            episodes,
            failures,
            censor_at,
            median: None,
            min: None,
            max: None,
        };
        let v = s.values();
        s.median = median(&v);
        s.min = v.iter().copied().reduce(f64::min);
        s.max = v.iter().copied().reduce(f64::max);
        s
    }

    pub fn converged(&self) -> usize {
        self.episodes.iter().filter(|(_, e)| e.is_some()).count()
    }

    /// Censored per-seed values.
    pub fn values(&self) -> Vec<f64> {
        self.episodes
            .iter()
            .map(|(_, e)| e.unwrap_or(self.censor_at) as f64)
            .collect()
    }

    pub fn spread(&self) -> Option<f64> {
        Some(self.max? - self.min?)
    }
}

#[derive(Clone, Debug)]
pub struct ConvergenceReport {
    pub summaries: Vec<KindSummary>,
}

impl ConvergenceReport {
    pub fn new(configs: &[RunConfig], results: &[RunResult]) -> Self {
        let summaries = configs
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let mut episodes = Vec::new();
                let mut failures = Vec::new();
                for r in results.iter().filter(|r| r.config_index == i) {
                    match &r.outcome {
                        RunOutcome::Completed(curve) => episodes.push((r.seed, curve.episodes_to_threshold)),
                        RunOutcome::Failed(msg) => failures.push((r.seed, msg.clone())),
                    }
                }
                let u_len = match c.mask.kind {
                    MaskKind::Epic => c.input_dim() * c.mask.u_multiplier,
                    _ => 0,
                };
                KindSummary::new(i, c.mask.kind, u_len, c.bandit.noise_dim, c.num_episodes, episodes, failures)
            })
            .collect();
        ConvergenceReport { summaries }
    }

    /// `median(a) / median(b)`.
    pub fn ratio(&self, a: usize, b: usize) -> Option<f64> {
        Some(self.summaries.get(a)?.median? / self.summaries.get(b)?.median?)
    }

    /// First summary for `kind`.
    pub fn by_kind(&self, kind: MaskKind) -> Option<&KindSummary> {
        self.summaries.iter().find(|s| s.kind == kind)
    }

    /// Speed-up of each configuration relative to the first identity one.
    pub fn speedups(&self) -> Vec<Option<f64>> {
        let base = self.by_kind(MaskKind::Identity).and_then(|s| s.median);
        self.summaries
            .iter()
            .map(|s| Some(base? / s.median?))
            .collect()
    }
}
