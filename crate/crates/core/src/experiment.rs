//! Config-driven experiments: data, workload, training and evaluation
//! repeated over seeds, summarised per query scenario.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderConfig, DEFAULT_THRESHOLD};
use crate::error::{Error, Result};
use crate::eval::{generate_synthetic, Metrics, SynthConfig};
use crate::graph::{load_graph_file, AttributedGraph, Community};
use crate::io::OutputHeader;
use crate::partition::partition_graph;
use crate::prompt::PromptConfig;
use crate::query::{
    generate_workload, sample_labels, split_queries, EvalQuery, LabeledQuery, Query, QueryKind,
    WorkloadParams,
};
use crate::scale::{evaluate_scaled, train_scaled, ScaleConfig};
use crate::trainer::{evaluate, train, OptimizerKind, TrainConfig, Validation};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub synthetic: Option<SynthConfig>,
    /// Graph file with ground-truth communities; replaces `synthetic`.
    pub graph: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            synthetic: Some(SynthConfig::default()),
            graph: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadConfig {
    pub scenarios: Vec<QueryKind>,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub min_nodes: usize,
    pub max_nodes: usize,
    pub attrs_per_query: usize,
    /// Fraction of community members and of non-members used as labels.
    pub label_ratio: f64,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        Self {
            scenarios: vec![QueryKind::Afc],
            train: 20,
            val: 10,
            test: 10,
            min_nodes: 1,
            max_nodes: 3,
            attrs_per_query: 3,
            label_ratio: 1.0,
        }
    }
}

/// Training knobs of a run; prompt and encoder settings live in their own sections.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub lr_theta: f64,
    pub lr_tau: f64,
    pub optimizer: OptimizerKind,
    pub virtual_tokens: usize,
    pub validation: Validation,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            lr_theta: t.lr_theta,
            lr_tau: t.lr_tau,
            optimizer: t.optimizer,
            virtual_tokens: t.virtual_tokens,
            validation: t.validation,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub seeds: Vec<u64>,
    pub threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            seeds: vec![0, 1, 2],
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub workload: WorkloadConfig,
    pub prompt: PromptConfig,
    pub encoder: EncoderConfig,
    pub train: TrainSection,
    pub scale: ScaleConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    /// Reads a config file; unknown keys and invalid values are config errors.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.data.synthetic, &self.data.graph) {
            (Some(s), None) => s.validate()?,
            (None, Some(_)) => {}
            _ => {
                return Err(Error::Config(
                    "data needs exactly one of `synthetic` or `graph`".into(),
                ))
            }
        }
        let w = &self.workload;
        if w.scenarios.is_empty() {
            return Err(Error::Config("workload lists no scenarios".into()));
        }
        if w.train == 0 || w.test == 0 {
            return Err(Error::Config(
                "workload needs training and test queries".into(),
            ));
        }
        if w.min_nodes == 0 || w.min_nodes > w.max_nodes {
            return Err(Error::Config(format!(
                "query size range [{}, {}] is invalid",
                w.min_nodes, w.max_nodes
            )));
        }
        if !(w.label_ratio > 0.0 && w.label_ratio <= 1.0) {
            return Err(Error::Config(format!(
                "label_ratio {} outside (0,1]",
                w.label_ratio
            )));
        }
        if self.eval.seeds.is_empty() {
            return Err(Error::Config("eval lists no seeds".into()));
        }
        if self.scale.shards == Some(0) || self.scale.shards_per_query == 0 {
            return Err(Error::Config("shard counts must be at least 1".into()));
        }
        self.train_config(0).validate()
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            epochs: t.epochs,
            lr_theta: t.lr_theta,
            lr_tau: t.lr_tau,
            optimizer: t.optimizer,
            virtual_tokens: t.virtual_tokens,
            validation: t.validation,
            threshold: self.eval.threshold,
            seed,
            prompt: self.prompt,
            encoder: self.encoder,
        }
    }

    /// The data graph and its communities for one run seed.
    pub fn load_data(&self, seed: u64) -> Result<(AttributedGraph, Vec<Community>)> {
        if let Some(s) = &self.data.synthetic {
            return generate_synthetic(&SynthConfig {
                seed: s.seed.wrapping_add(seed),
                ..s.clone()
            });
        }
        let path = self.data.graph.as_ref().expect("validated");
        let loaded = load_graph_file(path)?;
        match loaded.communities {
            Some(c) if !c.is_empty() => Ok((loaded.graph, c)),
            _ => Err(Error::Config(format!(
                "{} has no ground-truth communities",
                path.display()
            ))),
        }
    }

    pub fn workload_params(&self, count: usize, seed: u64) -> WorkloadParams {
        WorkloadParams {
            count,
            min_nodes: self.workload.min_nodes,
            max_nodes: self.workload.max_nodes,
            attrs_per_query: self.workload.attrs_per_query,
            seed,
        }
    }
}

/// Independent seed streams derived from one run seed.
pub fn stream_seed(run_seed: u64, stream: u64) -> u64 {
    run_seed
        .wrapping_mul(1_000_003)
        .wrapping_add(stream.wrapping_mul(7919))
}

const WORKLOAD_STREAM: u64 = 1;
const LABEL_STREAM: u64 = 2;

/// Queries of one scenario split into train (labelled), validation and test.
#[derive(Clone, Debug)]
pub struct PreparedWorkload {
    pub train: Vec<LabeledQuery>,
    pub val: Vec<EvalQuery>,
    pub test: Vec<EvalQuery>,
}

pub fn prepare_workload(
    cfg: &RunConfig,
    g: &AttributedGraph,
    communities: &[Community],
    kind: QueryKind,
    seed: u64,
) -> Result<PreparedWorkload> {
    let w = &cfg.workload;
    let params = cfg.workload_params(w.train + w.val + w.test, stream_seed(seed, WORKLOAD_STREAM));
    let all = generate_workload(kind, g, communities, &params)?;
    let (train, val, test) = split_queries(&all, w.train, w.val, w.test)?;
    let truth = |q: &Query| -> Result<Community> {
        let c = q
            .community
            .ok_or_else(|| Error::Query("generated query lost its community".into()))?;
        Ok(communities[c].clone())
    };
    let label_seed = stream_seed(seed, LABEL_STREAM);
    let train = train
        .iter()
        .enumerate()
        .map(|(i, q)| {
            sample_labels(
                g,
                q,
                &truth(q)?,
                w.label_ratio,
                label_seed.wrapping_add(i as u64),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let to_eval = |qs: Vec<Query>| -> Result<Vec<EvalQuery>> {
        qs.into_iter()
            .map(|q| {
                Ok(EvalQuery {
                    truth: truth(&q)?,
                    query: q,
                })
            })
            .collect()
    };
    Ok(PreparedWorkload {
        train,
        val: to_eval(val)?,
        test: to_eval(test)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub metrics: Metrics,
    pub epoch_seconds: f64,
    pub test_seconds: f64,
    pub selected_epoch: Option<usize>,
    pub test_queries: Vec<Query>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub scenario: QueryKind,
    pub runs: Vec<RunResult>,
    pub mean: Metrics,
    /// Population standard deviation over runs.
    pub std: Metrics,
    pub epoch_seconds: f64,
    pub test_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub header: OutputHeader,
    pub scenarios: Vec<ScenarioReport>,
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / k;
    (mean, var.sqrt())
}

fn summarize(scenario: QueryKind, runs: Vec<RunResult>) -> ScenarioReport {
    let pick =
        |f: fn(&Metrics) -> f64| mean_std(&runs.iter().map(|r| f(&r.metrics)).collect::<Vec<_>>());
    let (p, sp) = pick(|m| m.precision);
    let (r, sr) = pick(|m| m.recall);
    let (f, sf) = pick(|m| m.f1);
    let (epoch_seconds, _) = mean_std(&runs.iter().map(|r| r.epoch_seconds).collect::<Vec<_>>());
    let (test_seconds, _) = mean_std(&runs.iter().map(|r| r.test_seconds).collect::<Vec<_>>());
    ScenarioReport {
        scenario,
        runs,
        mean: Metrics {
            precision: p,
            recall: r,
            f1: f,
        },
        std: Metrics {
            precision: sp,
            recall: sr,
            f1: sf,
        },
        epoch_seconds,
        test_seconds,
    }
}

/// Trains and tests one scenario for one seed.
pub fn run_once(cfg: &RunConfig, kind: QueryKind, seed: u64) -> Result<RunResult> {
    let (g, communities) = cfg.load_data(seed)?;
    let work = prepare_workload(cfg, &g, &communities, kind, seed)?;
    let tc = cfg.train_config(seed);
    let threshold = cfg.eval.threshold;
    let (metrics, report, test_seconds) = match cfg.scale.shards {
        Some(s) => {
            let partition = partition_graph(&g, s, seed)?;
            let (state, report) =
                train_scaled(&g, &partition, &work.train, &work.val, &tc, &cfg.scale)?;
            let t = Instant::now();
            let m = evaluate_scaled(
                &partition,
                &g,
                &state,
                &work.test,
                threshold,
                cfg.scale.parallel,
            )?;
            (m, report, t.elapsed().as_secs_f64())
        }
        None => {
            let (state, report) = train(&g, &work.train, &work.val, &tc)?;
            let t = Instant::now();
            let m = evaluate(&state, &g, &work.test, threshold)?;
            (m, report, t.elapsed().as_secs_f64())
        }
    };
    Ok(RunResult {
        seed,
        metrics,
        epoch_seconds: report.mean_epoch_seconds(),
        test_seconds,
        selected_epoch: report.selected_epoch,
        test_queries: work.test.into_iter().map(|e| e.query).collect(),
    })
}

pub fn run_experiment(cfg: &RunConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let scenarios = cfg
        .workload
        .scenarios
        .iter()
        .map(|&kind| {
            let runs = cfg
                .eval
                .seeds
                .iter()
                .map(|&seed| run_once(cfg, kind, seed))
                .collect::<Result<Vec<_>>>()?;
            Ok(summarize(kind, runs))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentReport {
        header: OutputHeader::new(cfg, cfg.eval.seeds[0]),
        scenarios,
    })
}

/// Plain-text table with one row per scenario, metrics in percent as mean±std.
pub fn render_table(report: &ExperimentReport) -> String {
    let header = [
        "Scenario",
        "Precision",
        "Recall",
        "F1",
        "Epoch (s)",
        "Test (s)",
    ];
    let rows: Vec<[String; 6]> = report
        .scenarios
        .iter()
        .map(|s| {
            let pct = |m: f64, sd: f64| format!("{:.2}±{:.2}", 100.0 * m, 100.0 * sd);
            [
                s.scenario.to_string(),
                pct(s.mean.precision, s.std.precision),
                pct(s.mean.recall, s.std.recall),
                pct(s.mean.f1, s.std.f1),
                format!("{:.3}", s.epoch_seconds),
                format!("{:.3}", s.test_seconds),
            ]
        })
        .collect();
    let mut widths = header.map(|h| h.chars().count());
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: &[&str]| {
        let parts: Vec<String> = cells
            .iter()
            .zip(widths)
            .map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&mut out, &header);
    let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
    let _ = writeln!(out, "{}", rule.join("  "));
    for row in &rows {
        line(&mut out, &row.each_ref().map(|s| s.as_str()));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn population_std() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[]), (0.0, 0.0));
    }

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
        let both = RunConfig {
            data: DataConfig {
                synthetic: Some(SynthConfig::default()),
                graph: Some("g.json".into()),
            },
            ..RunConfig::default()
        };
        assert!(both.validate().is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        let e = serde_json::from_str::<RunConfig>(r#"{"train": {"epochz": 3}}"#);
        assert!(e.is_err());
    }
}
