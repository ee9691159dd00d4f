//! Benchmark harness: runs the three verifiers over (network, ε, sample)
//! grids, collects per-target records and aggregates them into the two
//! report shapes used throughout — certified accuracy / average time per
//! method, and correct-solution / iteration / qubit statistics per
//! decomposition variant.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::benders::{
    run_hqcran_on_problem, HqcranConfig, IterationTrace, MasterBackend, TargetStatus, Variant,
};
use crate::bounds::{classify_neurons, propagate_interval};
use crate::encode::build_mip;
use crate::model::{load_network, load_samples, Ball, Network, Sample, SampleSource};
use crate::verifiers::{certifies, verify_convex, verify_exact};
use crate::{Error, Result};

/// Tolerance of the correct-solution test m_t ≤ m* + ε.
pub const CORRECT_TOL: f64 = 1e-6;

/// One verification record: a (sample, target, method) cell. Misclassified
/// samples produce a single placeholder row per method with
/// `target == predicted` so they stay in the accuracy denominator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub network: String,
    pub epsilon_label: String,
    pub epsilon: f64,
    pub sample: usize,
    pub true_label: usize,
    pub predicted: usize,
    pub target: usize,
    pub method: String,
    pub variant: String,
    pub backend: String,
    pub bound: Option<f64>,
    pub verdict: String,
    /// Loop iterations for the decomposition, 1 for the one-shot methods.
    pub iterations: usize,
    pub qubits_avg: f64,
    pub wall_secs: f64,
}

/// Per-(network, ε, method, variant, backend) aggregate.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GroupAggregate {
    pub network: String,
    pub epsilon_label: String,
    pub epsilon: f64,
    pub method: String,
    pub variant: String,
    pub backend: String,
    pub samples: usize,
    pub certified_accuracy: f64,
    pub avg_time_secs: f64,
    /// Fraction of records with m_t ≤ m* + 1e-6; needs a paired exact run.
    pub correct_solution_rate: Option<f64>,
    pub optimality_ratio_mean: Option<f64>,
    pub iterations_mean: f64,
    pub iterations_std: f64,
    pub qubits_mean: f64,
    pub qubits_std: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchReport {
    pub groups: Vec<GroupAggregate>,
    pub records: Vec<RunRecord>,
    /// Per-iteration traces, collected only when the grid asks for them;
    /// exported as CSV files rather than JSON.
    #[serde(skip, default)]
    pub traces: Vec<TraceRecord>,
}

/// The iteration trace of one (sample, target) decomposition run.
#[derive(Clone, Debug)]
pub struct TraceRecord {
    pub network: String,
    pub epsilon_label: String,
    pub sample: usize,
    pub target: usize,
    pub variant: String,
    pub backend: String,
    pub rows: Vec<IterationTrace>,
}

/// The piecewise optimality ratio R comparing a returned bound m_t with
/// the exact optimum m*.
pub fn optimality_ratio(m_t: f64, m_star: f64) -> f64 {
    if m_t > 0.0 {
        m_star / m_t
    } else if m_star < 0.0 {
        m_t / m_star
    } else if m_star == 0.0 && m_t == 0.0 {
        1.0
    } else {
        m_star / (m_star - m_t)
    }
}

/// Accepts a decimal ("0.05") or a fraction ("8/255").
pub fn parse_epsilon(label: &str) -> Result<f64> {
    let label = label.trim();
    if let Some((num, den)) = label.split_once('/') {
        let n: f64 = num
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("bad epsilon numerator {num:?}")))?;
        let d: f64 = den
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("bad epsilon denominator {den:?}")))?;
        if d == 0.0 {
            return Err(Error::Parse("epsilon denominator is zero".into()));
        }
        Ok(n / d)
    } else {
        label
            .parse()
            .map_err(|_| Error::Parse(format!("bad epsilon {label:?}")))
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Groups records and recomputes every aggregate from scratch.
pub fn aggregate(records: &[RunRecord]) -> Result<Vec<GroupAggregate>> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("no records to aggregate".into()));
    }
    // m* lookup from exact runs for the correct-solution metric.
    let mut exact: BTreeMap<(String, String, usize, usize), f64> = BTreeMap::new();
    for r in records {
        if r.method == "exact" && r.target != r.predicted {
            if let Some(b) = r.bound {
                exact.insert(
                    (
                        r.network.clone(),
                        r.epsilon_label.clone(),
                        r.sample,
                        r.target,
                    ),
                    b,
                );
            }
        }
    }

    let mut groups: BTreeMap<(String, String, String, String, String), Vec<&RunRecord>> =
        BTreeMap::new();
    for r in records {
        groups
            .entry((
                r.network.clone(),
                r.epsilon_label.clone(),
                r.method.clone(),
                r.variant.clone(),
                r.backend.clone(),
            ))
            .or_default()
            .push(r);
    }

    let mut out = Vec::new();
    for ((network, eps_label, method, variant, backend), rs) in groups {
        let samples: BTreeSet<usize> = rs.iter().map(|r| r.sample).collect();
        let mut certified_samples = 0usize;
        let mut time_total = 0.0;
        for &s in &samples {
            let of_sample: Vec<&&RunRecord> = rs.iter().filter(|r| r.sample == s).collect();
            let classified = of_sample[0].predicted == of_sample[0].true_label;
            let all_cert = of_sample.iter().all(|r| r.verdict == "certified");
            if classified && all_cert {
                certified_samples += 1;
            }
            time_total += of_sample.iter().map(|r| r.wall_secs).sum::<f64>();
        }

        // Placeholder rows stay out of per-run statistics.
        let runs: Vec<&&RunRecord> = rs.iter().filter(|r| r.target != r.predicted).collect();
        let iters: Vec<f64> = runs.iter().map(|r| r.iterations as f64).collect();
        let qubits: Vec<f64> = runs.iter().map(|r| r.qubits_avg).collect();
        let (im, is) = mean_std(&iters);
        let (qm, qs) = mean_std(&qubits);

        let mut paired = 0usize;
        let mut correct = 0usize;
        let mut ratios = Vec::new();
        let mut all_paired = !runs.is_empty();
        for r in &runs {
            let key = (
                r.network.clone(),
                r.epsilon_label.clone(),
                r.sample,
                r.target,
            );
            match (exact.get(&key), r.bound) {
                (Some(&m_star), Some(m_t)) => {
                    paired += 1;
                    if m_t <= m_star + CORRECT_TOL {
                        correct += 1;
                    }
                    ratios.push(optimality_ratio(m_t, m_star));
                }
                (Some(_), None) => paired += 1, // counted, cannot be correct
                (None, _) => all_paired = false,
            }
        }
        let correct_solution_rate = if all_paired && paired > 0 {
            Some(correct as f64 / paired as f64)
        } else {
            None
        };
        let optimality_ratio_mean = if all_paired && !ratios.is_empty() {
            Some(ratios.iter().sum::<f64>() / ratios.len() as f64)
        } else {
            None
        };

        out.push(GroupAggregate {
            network,
            epsilon: rs[0].epsilon,
            epsilon_label: eps_label,
            method,
            variant,
            backend,
            samples: samples.len(),
            certified_accuracy: certified_samples as f64 / samples.len() as f64,
            avg_time_secs: time_total / samples.len() as f64,
            correct_solution_rate,
            optimality_ratio_mean,
            iterations_mean: im,
            iterations_std: is,
            qubits_mean: qm,
            qubits_std: qs,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Records CSV
// ---------------------------------------------------------------------------

pub const RECORDS_HEADER: &str = "network,epsilon_label,epsilon,sample,true_label,predicted,\
target,method,variant,backend,bound,verdict,iterations,qubits_avg,wall_secs";

pub fn write_records_csv(records: &[RunRecord], w: &mut dyn std::io::Write) -> std::io::Result<()> {
    writeln!(w, "{RECORDS_HEADER}")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.network,
            r.epsilon_label.replace(',', ";"),
            r.epsilon,
            r.sample,
            r.true_label,
            r.predicted,
            r.target,
            r.method,
            r.variant,
            r.backend,
            r.bound.map_or(String::new(), |b| format!("{b}")),
            r.verdict,
            r.iterations,
            r.qubits_avg,
            r.wall_secs
        )?;
    }
    Ok(())
}

pub fn parse_records_csv(text: &str) -> Result<Vec<RunRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 15 {
            return Err(Error::Parse(format!(
                "records row {} has {} fields",
                i + 1,
                f.len()
            )));
        }
        let num = |s: &str, what: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::Parse(format!("row {}: bad {what} {s:?}", i + 1)))
        };
        out.push(RunRecord {
            network: f[0].to_string(),
            epsilon_label: f[1].to_string(),
            epsilon: num(f[2], "epsilon")?,
            sample: num(f[3], "sample")? as usize,
            true_label: num(f[4], "true_label")? as usize,
            predicted: num(f[5], "predicted")? as usize,
            target: num(f[6], "target")? as usize,
            method: f[7].to_string(),
            variant: f[8].to_string(),
            backend: f[9].to_string(),
            bound: if f[10].is_empty() {
                None
            } else {
                Some(num(f[10], "bound")?)
            },
            verdict: f[11].to_string(),
            iterations: num(f[12], "iterations")? as usize,
            qubits_avg: num(f[13], "qubits_avg")?,
            wall_secs: num(f[14], "wall_secs")?,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Table-shaped summaries
// ---------------------------------------------------------------------------

fn find_group<'a>(
    groups: &'a [GroupAggregate],
    network: &str,
    eps: &str,
    method: &str,
    prefer: &[(&str, &str)],
) -> Option<&'a GroupAggregate> {
    let candidates: Vec<&GroupAggregate> = groups
        .iter()
        .filter(|g| g.network == network && g.epsilon_label == eps && g.method == method)
        .collect();
    for (variant, backend) in prefer {
        if let Some(g) = candidates
            .iter()
            .find(|g| g.variant == *variant && g.backend == *backend)
        {
            return Some(g);
        }
    }
    candidates.first().copied()
}

/// Certified accuracy and average time per method, one row per
/// (network, ε). Prefers the (v2, milp) decomposition runs.
pub fn table1_csv(groups: &[GroupAggregate]) -> String {
    let mut keys: Vec<(String, String)> = groups
        .iter()
        .map(|g| (g.network.clone(), g.epsilon_label.clone()))
        .collect();
    keys.sort();
    keys.dedup();
    let mut out = String::from(
        "network,epsilon,cert_acc_exact,cert_acc_hqcran,cert_acc_convex,\
time_exact,time_hqcran,time_convex\n",
    );
    let fmt_acc = |g: Option<&GroupAggregate>| {
        g.map_or(String::new(), |g| format!("{:.4}", g.certified_accuracy))
    };
    let fmt_time =
        |g: Option<&GroupAggregate>| g.map_or(String::new(), |g| format!("{:.6}", g.avg_time_secs));
    for (net, eps) in keys {
        let ex = find_group(groups, &net, &eps, "exact", &[("", "")]);
        let hq = find_group(
            groups,
            &net,
            &eps,
            "hqcran",
            &[("v2", "milp"), ("v2", "sa")],
        );
        let cv = find_group(groups, &net, &eps, "convex", &[("", "")]);
        out.push_str(&format!(
            "{net},{eps},{},{},{},{},{},{}\n",
            fmt_acc(ex),
            fmt_acc(hq),
            fmt_acc(cv),
            fmt_time(ex),
            fmt_time(hq),
            fmt_time(cv)
        ));
    }
    out
}

/// Correct-solution rates plus iteration and qubit statistics for the v1
/// and v2 decompositions, one row per (network, ε). Prefers annealing
/// backends since those are the runs this table compares.
pub fn table2_csv(groups: &[GroupAggregate]) -> String {
    let mut keys: Vec<(String, String)> = groups
        .iter()
        .filter(|g| g.method == "hqcran")
        .map(|g| (g.network.clone(), g.epsilon_label.clone()))
        .collect();
    keys.sort();
    keys.dedup();
    let mut out = String::from(
        "network,epsilon,correct_v1,correct_v2,iters_v1_mean,iters_v1_std,\
iters_v2_mean,iters_v2_std,qubits_v1_mean,qubits_v1_std,qubits_v2_mean,qubits_v2_std\n",
    );
    let prefer = [("v1", "sa"), ("v1", "exhaustive"), ("v1", "milp")];
    let prefer2 = [("v2", "sa"), ("v2", "exhaustive"), ("v2", "milp")];
    for (net, eps) in keys {
        let v1 = find_group(groups, &net, &eps, "hqcran", &prefer);
        let v2 = find_group(groups, &net, &eps, "hqcran", &prefer2);
        let correct = |g: Option<&GroupAggregate>| {
            g.and_then(|g| g.correct_solution_rate)
                .map_or(String::new(), |v| format!("{v:.4}"))
        };
        let stat = |g: Option<&GroupAggregate>, f: fn(&GroupAggregate) -> f64| {
            g.map_or(String::new(), |g| format!("{:.3}", f(g)))
        };
        out.push_str(&format!(
            "{net},{eps},{},{},{},{},{},{},{},{},{},{}\n",
            correct(v1),
            correct(v2),
            stat(v1, |g| g.iterations_mean),
            stat(v1, |g| g.iterations_std),
            stat(v2, |g| g.iterations_mean),
            stat(v2, |g| g.iterations_std),
            stat(v1, |g| g.qubits_mean),
            stat(v1, |g| g.qubits_std),
            stat(v2, |g| g.qubits_mean),
            stat(v2, |g| g.qubits_std)
        ));
    }
    out
}

// ---------------------------------------------------------------------------
// Config-driven runner
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplesSpec {
    #[serde(default)]
    pub csv: Option<PathBuf>,
    #[serde(default)]
    pub images: Option<PathBuf>,
    #[serde(default)]
    pub labels: Option<PathBuf>,
}

impl SamplesSpec {
    fn source(&self) -> Result<SampleSource> {
        match (&self.csv, &self.images, &self.labels) {
            (Some(csv), None, None) => Ok(SampleSource::Csv(csv.clone())),
            (None, Some(i), Some(l)) => Ok(SampleSource::Idx {
                images: i.clone(),
                labels: l.clone(),
            }),
            _ => Err(Error::InvalidArgument(
                "samples need either {csv} or {images, labels}".into(),
            )),
        }
    }
}

/// Overrides for the decomposition knobs; anything absent keeps the
/// variant default. `phi ≤ 0` lifts the cut-pool cap.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HqcranParams {
    #[serde(default)]
    pub t: Option<usize>,
    #[serde(default)]
    pub xi: Option<f64>,
    #[serde(default)]
    pub alpha_bar: Option<f64>,
    #[serde(default)]
    pub beta_bar: Option<f64>,
    #[serde(default)]
    pub wp: Option<f64>,
    #[serde(default)]
    pub wa: Option<f64>,
    #[serde(default)]
    pub phi: Option<i64>,
    #[serde(default)]
    pub reads: Option<usize>,
    #[serde(default)]
    pub sweeps: Option<usize>,
    #[serde(default)]
    pub prune: Option<f64>,
    #[serde(default)]
    pub certify: Option<String>,
    #[serde(default)]
    pub early_stop: Option<bool>,
}

impl HqcranParams {
    pub fn apply(&self, mut config: HqcranConfig) -> Result<HqcranConfig> {
        if let Some(t) = self.t {
            config.max_iterations = t;
        }
        if let Some(xi) = self.xi {
            config.target_gap = xi;
        }
        if let Some(a) = self.alpha_bar {
            config.alpha_bound = a;
        }
        if let Some(b) = self.beta_bar {
            config.beta_bound = b;
        }
        if let Some(wp) = self.wp {
            config.omega_p = wp;
        }
        if let Some(wa) = self.wa {
            config.omega_a = wa;
        }
        if let Some(phi) = self.phi {
            config.cut_capacity = if phi <= 0 { None } else { Some(phi as usize) };
        }
        if let Some(r) = self.reads {
            config.sa_reads = r;
        }
        if let Some(s) = self.sweeps {
            config.sa_sweeps = s;
        }
        config.prune_threshold = self.prune.or(config.prune_threshold);
        if let Some(c) = &self.certify {
            config.certify_mode = match c.as_str() {
                "paper" => crate::benders::CertifyMode::Paper,
                "sound" => crate::benders::CertifyMode::Sound,
                other => {
                    return Err(Error::InvalidArgument(format!(
                        "unknown certify mode {other:?}"
                    )))
                }
            };
        }
        if let Some(e) = self.early_stop {
            config.early_stop = e;
        }
        Ok(config)
    }
}

fn default_true() -> bool {
    true
}

/// The experiment grid, independent of where networks and samples come
/// from.
#[derive(Clone, Debug, Deserialize)]
pub struct GridSpec {
    pub epsilons: Vec<String>,
    pub methods: Vec<String>,
    #[serde(default)]
    pub variants: Vec<String>,
    #[serde(default)]
    pub master: Vec<String>,
    #[serde(default)]
    pub limit_samples: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub all_targets: bool,
    #[serde(default)]
    pub jobs: Option<usize>,
    #[serde(default)]
    pub traces: bool,
    #[serde(default)]
    pub hqcran: HqcranParams,
}

/// On-disk bench configuration: file locations plus the grid.
#[derive(Clone, Debug, Deserialize)]
pub struct BenchConfig {
    pub networks: Vec<PathBuf>,
    pub samples: SamplesSpec,
    #[serde(flatten)]
    pub grid: GridSpec,
}

pub fn parse_variant(s: &str) -> Result<Variant> {
    match s {
        "v1" => Ok(Variant::V1),
        "v2" => Ok(Variant::V2),
        other => Err(Error::InvalidArgument(format!("unknown variant {other:?}"))),
    }
}

pub fn parse_backend(s: &str) -> Result<MasterBackend> {
    match s {
        "milp" => Ok(MasterBackend::Milp),
        "sa" => Ok(MasterBackend::Sa),
        "exhaustive" => Ok(MasterBackend::Exhaustive),
        other => Err(Error::InvalidArgument(format!(
            "unknown master backend {other:?}"
        ))),
    }
}

struct Placehold<'a> {
    network: &'a str,
    eps_label: &'a str,
    epsilon: f64,
    sample: usize,
    label: usize,
    predicted: usize,
}

fn placeholder(p: &Placehold, method: &str, variant: &str, backend: &str) -> RunRecord {
    RunRecord {
        network: p.network.to_string(),
        epsilon_label: p.eps_label.to_string(),
        epsilon: p.epsilon,
        sample: p.sample,
        true_label: p.label,
        predicted: p.predicted,
        target: p.predicted,
        method: method.into(),
        variant: variant.into(),
        backend: backend.into(),
        bound: None,
        verdict: "unknown".into(),
        iterations: 0,
        qubits_avg: 0.0,
        wall_secs: 0.0,
    }
}

/// Verifies one sample with every requested method and returns its
/// records plus any collected traces.
#[allow(clippy::too_many_arguments)]
fn run_sample(
    net: &Network,
    net_name: &str,
    eps_label: &str,
    epsilon: f64,
    sample_idx: usize,
    sample: &Sample,
    cfg: &GridSpec,
) -> Result<(Vec<RunRecord>, Vec<TraceRecord>)> {
    let (_, predicted) = net.forward(&sample.features)?;
    let mut records = Vec::new();
    let mut traces = Vec::new();
    let ph = Placehold {
        network: net_name,
        eps_label,
        epsilon,
        sample: sample_idx,
        label: sample.label,
        predicted,
    };
    let variants = if cfg.variants.is_empty() {
        vec!["v2".to_string()]
    } else {
        cfg.variants.clone()
    };
    let masters = if cfg.master.is_empty() {
        vec!["milp".to_string()]
    } else {
        cfg.master.clone()
    };

    if predicted != sample.label {
        for method in &cfg.methods {
            if method == "hqcran" {
                for v in &variants {
                    for m in &masters {
                        records.push(placeholder(&ph, method, v, m));
                    }
                }
            } else {
                records.push(placeholder(&ph, method, "", ""));
            }
        }
        return Ok((records, traces));
    }

    let ball = Ball::new(sample.features.clone(), epsilon)?;
    let bs = propagate_interval(net, &ball)?;
    let sm = classify_neurons(&bs, net.final_relu);
    let mp = build_mip(net, &ball, &bs, &sm, predicted)?;

    let base = |method: &str, variant: &str, backend: &str, target: usize| RunRecord {
        network: net_name.to_string(),
        epsilon_label: eps_label.to_string(),
        epsilon,
        sample: sample_idx,
        true_label: sample.label,
        predicted,
        target,
        method: method.into(),
        variant: variant.into(),
        backend: backend.into(),
        bound: None,
        verdict: "unknown".into(),
        iterations: 1,
        qubits_avg: 0.0,
        wall_secs: 0.0,
    };

    for method in &cfg.methods {
        match method.as_str() {
            "exact" => {
                for t in 0..net.output_dim() {
                    if t == predicted {
                        continue;
                    }
                    let mut mp = mp.clone();
                    mp.set_target(t)?;
                    let start = Instant::now();
                    let m = verify_exact(&mp)?;
                    let mut rec = base("exact", "", "", t);
                    rec.wall_secs = start.elapsed().as_secs_f64();
                    rec.bound = m;
                    let ok = m.is_some_and(certifies);
                    rec.verdict = if ok { "certified" } else { "unknown" }.into();
                    records.push(rec);
                    if !ok && !cfg.all_targets {
                        break;
                    }
                }
            }
            "convex" => {
                for t in 0..net.output_dim() {
                    if t == predicted {
                        continue;
                    }
                    let start = Instant::now();
                    let bound = verify_convex(net, &bs, &sm, predicted, t)?;
                    let mut rec = base("convex", "", "", t);
                    rec.wall_secs = start.elapsed().as_secs_f64();
                    rec.bound = Some(bound);
                    rec.verdict = if certifies(bound) {
                        "certified"
                    } else {
                        "unknown"
                    }
                    .into();
                    records.push(rec);
                    if !certifies(bound) && !cfg.all_targets {
                        break;
                    }
                }
            }
            "hqcran" => {
                for v in &variants {
                    for m in &masters {
                        let variant = parse_variant(v)?;
                        let backend = parse_backend(m)?;
                        let mut config = cfg.hqcran.apply(match variant {
                            Variant::V1 => HqcranConfig::v1(),
                            Variant::V2 => HqcranConfig::v2(),
                        })?;
                        config.variant = variant;
                        config.backend = backend;
                        config.all_targets = cfg.all_targets;
                        config.seed = cfg.seed.wrapping_add(sample_idx as u64);
                        let outcome = run_hqcran_on_problem(&mp, &config)?;
                        for t_out in &outcome.targets {
                            if cfg.traces {
                                traces.push(TraceRecord {
                                    network: net_name.to_string(),
                                    epsilon_label: eps_label.to_string(),
                                    sample: sample_idx,
                                    target: t_out.target,
                                    variant: v.clone(),
                                    backend: m.clone(),
                                    rows: t_out.trace.clone(),
                                });
                            }
                            let mut rec = base("hqcran", v, m, t_out.target);
                            rec.wall_secs = t_out.wall_secs;
                            rec.bound = t_out.m_t;
                            rec.iterations = t_out.iterations;
                            rec.qubits_avg = if t_out.trace.is_empty() {
                                0.0
                            } else {
                                t_out.trace.iter().map(|r| r.qubits as f64).sum::<f64>()
                                    / t_out.trace.len() as f64
                            };
                            rec.verdict = if t_out.status == TargetStatus::Certified {
                                "certified"
                            } else {
                                "unknown"
                            }
                            .into();
                            records.push(rec);
                        }
                    }
                }
            }
            other => {
                return Err(Error::InvalidArgument(format!("unknown method {other:?}")));
            }
        }
    }
    Ok((records, traces))
}

/// Loads the config's networks and samples, then runs the grid.
pub fn run_bench(cfg: &BenchConfig) -> Result<BenchReport> {
    let source = cfg.samples.source()?;
    let samples = load_samples(&source)?;
    let mut nets = Vec::new();
    for path in &cfg.networks {
        nets.push(load_network(path)?);
    }
    run_grid(&nets, &samples, &cfg.grid)
}

/// Runs the whole grid and aggregates. Sample-level work is parallel; the
/// output ordering is independent of the schedule.
pub fn run_grid(nets: &[Network], samples: &[Sample], grid: &GridSpec) -> Result<BenchReport> {
    let mut samples = samples.to_vec();
    if let Some(limit) = grid.limit_samples {
        samples.truncate(limit);
    }
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no samples to verify".into()));
    }

    let mut jobs: Vec<(&Network, String, String, f64)> = Vec::new();
    for net in nets {
        for eps_label in &grid.epsilons {
            let epsilon = parse_epsilon(eps_label)?;
            jobs.push((net, net.name.clone(), eps_label.clone(), epsilon));
        }
    }

    let run_all = || -> Result<Vec<(Vec<RunRecord>, Vec<TraceRecord>)>> {
        jobs.par_iter()
            .flat_map(|job| {
                samples
                    .par_iter()
                    .enumerate()
                    .map(move |(idx, sample)| (job, idx, sample))
            })
            .map(|((net, name, eps_label, epsilon), idx, sample)| {
                run_sample(net, name, eps_label, *epsilon, idx, sample, grid)
            })
            .collect()
    };

    let nested = match grid.jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?
            .install(run_all),
        None => run_all(),
    }?;

    let mut records = Vec::new();
    let mut traces = Vec::new();
    for (rs, ts) in nested {
        records.extend(rs);
        traces.extend(ts);
    }
    records.sort_by(|a, b| {
        (
            &a.network,
            &a.epsilon_label,
            &a.method,
            &a.variant,
            &a.backend,
            a.sample,
            a.target,
        )
            .cmp(&(
                &b.network,
                &b.epsilon_label,
                &b.method,
                &b.variant,
                &b.backend,
                b.sample,
                b.target,
            ))
    });
    traces.sort_by(|a, b| {
        (
            &a.network,
            &a.epsilon_label,
            &a.variant,
            &a.backend,
            a.sample,
            a.target,
        )
            .cmp(&(
                &b.network,
                &b.epsilon_label,
                &b.variant,
                &b.backend,
                b.sample,
                b.target,
            ))
    });
    let groups = aggregate(&records)?;
    Ok(BenchReport {
        groups,
        records,
        traces,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_follows_the_piecewise_rule() {
        // Positive m_t.
        assert!((optimality_ratio(2.0, 4.0) - 2.0).abs() < 1e-12);
        assert!((optimality_ratio(4.0, 2.0) - 0.5).abs() < 1e-12);
        // Negative m*.
        assert!((optimality_ratio(-2.0, -4.0) - 0.5).abs() < 1e-12);
        assert!((optimality_ratio(-4.0, -2.0) - 2.0).abs() < 1e-12);
        // Mixed, m_t ≤ 0 ≤ m*.
        assert!((optimality_ratio(-1.0, 1.0) - 0.5).abs() < 1e-12);
        // Degenerate.
        assert!((optimality_ratio(0.0, 0.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn epsilon_labels() {
        assert!((parse_epsilon("0.05").unwrap() - 0.05).abs() < 1e-15);
        assert!((parse_epsilon("8/255").unwrap() - 8.0 / 255.0).abs() < 1e-15);
        assert!(parse_epsilon("x").is_err());
        assert!(parse_epsilon("1/0").is_err());
    }

    fn record(sample: usize, target: usize, predicted: usize, verdict: &str) -> RunRecord {
        RunRecord {
            network: "n".into(),
            epsilon_label: "0.1".into(),
            epsilon: 0.1,
            sample,
            true_label: 0,
            predicted,
            target,
            method: "hqcran".into(),
            variant: "v2".into(),
            backend: "milp".into(),
            bound: Some(0.5),
            verdict: verdict.into(),
            iterations: 3,
            qubits_avg: 10.0,
            wall_secs: 0.1,
        }
    }

    #[test]
    fn certified_accuracy_counts_misclassified() {
        // Sample 0: correctly classified (predicted == true_label == 0) and
        // certified; sample 1: misclassified placeholder.
        let a = record(0, 1, 0, "certified");
        let mut b = record(1, 2, 2, "unknown");
        b.bound = None;
        let groups = aggregate(&[a, b]).unwrap();
        assert_eq!(groups.len(), 1);
        assert!((groups[0].certified_accuracy - 0.5).abs() < 1e-12);
        assert_eq!(groups[0].samples, 2);
    }

    #[test]
    fn correct_solutions_need_exact_pairing() {
        let hq = record(0, 1, 0, "certified");
        let groups = aggregate(std::slice::from_ref(&hq)).unwrap();
        assert!(groups[0].correct_solution_rate.is_none());

        let mut ex = record(0, 1, 0, "certified");
        ex.method = "exact".into();
        ex.variant = "".into();
        ex.backend = "".into();
        ex.bound = Some(0.5);
        let groups = aggregate(&[hq, ex]).unwrap();
        let hq_group = groups.iter().find(|g| g.method == "hqcran").unwrap();
        assert_eq!(hq_group.correct_solution_rate, Some(1.0));
        assert_eq!(hq_group.optimality_ratio_mean, Some(1.0));
    }

    #[test]
    fn empty_aggregate_is_an_error() {
        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn records_csv_roundtrip() {
        let rs = vec![record(0, 1, 0, "certified"), {
            let mut r = record(1, 2, 2, "unknown");
            r.bound = None;
            r
        }];
        let mut buf = Vec::new();
        write_records_csv(&rs, &mut buf).unwrap();
        let back = parse_records_csv(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(rs, back);
        let g1 = aggregate(&rs).unwrap();
        let g2 = aggregate(&back).unwrap();
        assert_eq!(
            serde_json::to_string(&g1).unwrap(),
            serde_json::to_string(&g2).unwrap()
        );
    }
}
