//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 when a solver fails at runtime, 2 for usage
//! problems (bad flags, unreadable or malformed input files).

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use crate::bench::{
    parse_backend, parse_epsilon, parse_variant, run_bench, run_grid, table1_csv, table2_csv,
    write_records_csv, BenchConfig, GridSpec, HqcranParams, TraceRecord,
};
use crate::benders::{write_trace_csv, HqcranConfig, Variant};
use crate::bounds::{classify_neurons, propagate_interval};
use crate::encode::build_mip;
use crate::model::{
    generate_random_network, load_network, load_samples, save_network, Ball, Network, Sample,
    SampleSource,
};
use crate::{Error, Result};

#[derive(Parser)]
#[command(
    name = "hqcran",
    version,
    about = "Robustness certification for small ReLU networks: exact, convex and \
Benders-decomposition verifiers with MILP / QUBO / annealing masters"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Verify samples against l-infinity perturbations
    Verify(VerifyArgs),
    /// Run a benchmark grid from a JSON config
    Bench(BenchArgs),
    /// Print interval bounds and stability tags per neuron
    Bounds(BoundsArgs),
    /// Generate a random network (and optionally samples) for testing
    Gen(GenArgs),
    /// Dump the constraint matrices of one instance
    Encode(EncodeArgs),
    /// Dump the master QUBO of one decomposition iteration
    DumpQubo(DumpQuboArgs),
}

#[derive(Args)]
struct InputArgs {
    /// Network JSON file
    #[arg(long)]
    network: PathBuf,
    /// Samples CSV (label,feature,...)
    #[arg(long, conflicts_with_all = ["images", "center"])]
    samples: Option<PathBuf>,
    /// IDX image file (pairs with --labels)
    #[arg(long, requires = "labels", conflicts_with = "center")]
    images: Option<PathBuf>,
    /// IDX label file
    #[arg(long, requires = "images")]
    labels: Option<PathBuf>,
    /// Ad-hoc input point, comma-separated
    #[arg(long)]
    center: Option<String>,
    /// Verify only the first N samples
    #[arg(long)]
    limit: Option<usize>,
}

impl InputArgs {
    fn load(&self) -> Result<(Network, Vec<Sample>)> {
        let net = load_network(&self.network)?;
        let mut samples = if let Some(center) = &self.center {
            let features: Vec<f64> = center
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Parse(format!("bad center value {s:?}")))
                })
                .collect::<Result<_>>()?;
            let (_, predicted) = net.forward(&features)?;
            vec![Sample {
                features,
                label: predicted,
            }]
        } else if let Some(csv) = &self.samples {
            load_samples(&SampleSource::Csv(csv.clone()))?
        } else if let (Some(images), Some(labels)) = (&self.images, &self.labels) {
            load_samples(&SampleSource::Idx {
                images: images.clone(),
                labels: labels.clone(),
            })?
        } else {
            return Err(Error::InvalidArgument(
                "provide --samples, --images/--labels, or --center".into(),
            ));
        };
        if let Some(limit) = self.limit {
            samples.truncate(limit);
        }
        Ok((net, samples))
    }
}

#[derive(Args)]
struct HqcranArgs {
    /// Decomposition variant
    #[arg(long, default_value = "v2")]
    variant: String,
    /// Master backend
    #[arg(long, default_value = "milp")]
    master: String,
    /// Iteration cap T
    #[arg(long)]
    t_max: Option<usize>,
    /// Target gap between sub and master objectives
    #[arg(long)]
    xi: Option<f64>,
    /// Dual bound on alpha
    #[arg(long)]
    alpha_bar: Option<f64>,
    /// Dual bound on beta
    #[arg(long)]
    beta_bar: Option<f64>,
    /// Fixed-point resolution of the master objective
    #[arg(long)]
    wp: Option<f64>,
    /// Fixed-point resolution of the cut slacks
    #[arg(long)]
    wa: Option<f64>,
    /// Cut pool capacity; 0 keeps every cut
    #[arg(long)]
    phi: Option<i64>,
    /// Annealing reads
    #[arg(long)]
    reads: Option<usize>,
    /// Annealing sweeps per read
    #[arg(long)]
    sweeps: Option<usize>,
    /// Prune couplings below this fraction of the largest one
    #[arg(long)]
    prune: Option<f64>,
    /// Certification rule: paper | sound
    #[arg(long)]
    certify: Option<String>,
    /// Stop when the master turns positive or the sub goes negative
    #[arg(long)]
    early_stop: bool,
}

impl HqcranArgs {
    fn params(&self) -> HqcranParams {
        HqcranParams {
            t: self.t_max,
            xi: self.xi,
            alpha_bar: self.alpha_bar,
            beta_bar: self.beta_bar,
            wp: self.wp,
            wa: self.wa,
            phi: self.phi,
            reads: self.reads,
            sweeps: self.sweeps,
            prune: self.prune,
            certify: self.certify.clone(),
            early_stop: if self.early_stop { Some(true) } else { None },
        }
    }

    fn config(&self, seed: u64) -> Result<HqcranConfig> {
        let variant = parse_variant(&self.variant)?;
        let mut config = self.params().apply(match variant {
            Variant::V1 => HqcranConfig::v1(),
            Variant::V2 => HqcranConfig::v2(),
        })?;
        config.backend = parse_backend(&self.master)?;
        config.seed = seed;
        Ok(config)
    }
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Perturbation radius; decimal or fraction like 8/255
    #[arg(long)]
    epsilon: String,
    /// Verifier to run
    #[arg(long, default_value = "hqcran")]
    method: String,
    #[command(flatten)]
    hqcran: HqcranArgs,
    /// Keep verifying targets after the first failure
    #[arg(long)]
    all_targets: bool,
    /// Worker threads for sample-level parallelism
    #[arg(long)]
    jobs: Option<usize>,
    /// Base seed for the annealing masters
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the aggregate report as JSON
    #[arg(long)]
    report: Option<PathBuf>,
    /// Write raw records as CSV
    #[arg(long)]
    records: Option<PathBuf>,
    /// Write per-(sample,target) iteration traces into this directory
    #[arg(long)]
    trace_dir: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// JSON config: {networks, samples, epsilons, methods, ...}
    #[arg(long)]
    config: PathBuf,
    /// Output directory (report.json, records.csv, table1.csv, table2.csv)
    #[arg(long, default_value = "bench-out")]
    out: PathBuf,
}

#[derive(Args)]
struct BoundsArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    epsilon: String,
    /// Sample index to analyze
    #[arg(long, default_value_t = 0)]
    index: usize,
    /// Output file; stdout when absent
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    /// Layer widths, e.g. 2,8,8,3
    #[arg(long)]
    dims: String,
    /// Uniform weight/bias range
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Network output path
    #[arg(long)]
    out: PathBuf,
    /// Also emit this many random samples (labelled by the network)
    #[arg(long)]
    samples: Option<usize>,
    /// Samples CSV path (defaults next to the network)
    #[arg(long)]
    samples_out: Option<PathBuf>,
}

#[derive(Args)]
struct EncodeArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    epsilon: String,
    #[arg(long, default_value_t = 0)]
    index: usize,
    /// Target class for the objective vector
    #[arg(long)]
    target: Option<usize>,
    /// Dump file; stdout when absent
    #[arg(long)]
    dump: Option<PathBuf>,
}

#[derive(Args)]
struct DumpQuboArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    epsilon: String,
    #[arg(long, default_value_t = 0)]
    index: usize,
    /// Target class; defaults to the first non-predicted class
    #[arg(long)]
    target: Option<usize>,
    /// Which iteration's master model to dump (1-based)
    #[arg(long, default_value_t = 1)]
    iteration: usize,
    #[command(flatten)]
    hqcran: HqcranArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file; stdout when absent
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parses and runs; returns the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.cmd {
        Command::Verify(args) => cmd_verify(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Bounds(args) => cmd_bounds(args),
        Command::Gen(args) => cmd_gen(args),
        Command::Encode(args) => cmd_encode(args),
        Command::DumpQubo(args) => cmd_dump_qubo(args),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Io(_) | Error::Parse(_) | Error::InvalidArgument(_) => 2,
                _ => 1,
            }
        }
    }
}

fn write_or_stdout(path: Option<&Path>, contents: &[u8]) -> Result<()> {
    match path {
        Some(p) => {
            if let Some(dir) = p.parent() {
                if !dir.as_os_str().is_empty() {
                    fs::create_dir_all(dir)?;
                }
            }
            fs::write(p, contents)?;
        }
        None => {
            use std::io::Write;
            std::io::stdout().write_all(contents)?;
        }
    }
    Ok(())
}

fn write_traces(dir: &Path, traces: &[TraceRecord]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for t in traces {
        let name = format!(
            "trace_{}_{}_s{}_t{}_{}_{}.csv",
            t.network,
            t.epsilon_label.replace('/', "-"),
            t.sample,
            t.target,
            t.variant,
            t.backend
        );
        let mut buf = Vec::new();
        write_trace_csv(&t.rows, &mut buf)?;
        fs::write(dir.join(name), buf)?;
    }
    Ok(())
}

fn cmd_verify(args: VerifyArgs) -> Result<()> {
    let (net, samples) = args.input.load()?;
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no samples to verify".into()));
    }
    parse_epsilon(&args.epsilon)?;
    let grid = GridSpec {
        epsilons: vec![args.epsilon.clone()],
        methods: vec![args.method.clone()],
        variants: vec![args.hqcran.variant.clone()],
        master: vec![args.hqcran.master.clone()],
        limit_samples: None,
        seed: args.seed,
        all_targets: args.all_targets,
        jobs: args.jobs,
        traces: args.trace_dir.is_some(),
        hqcran: args.hqcran.params(),
    };
    let report = run_grid(std::slice::from_ref(&net), &samples, &grid)?;

    // Per-sample verdicts on stdout.
    let mut by_sample: std::collections::BTreeMap<usize, (bool, bool)> =
        std::collections::BTreeMap::new();
    for r in &report.records {
        let entry = by_sample.entry(r.sample).or_insert((true, true));
        entry.0 &= r.predicted == r.true_label;
        entry.1 &= r.verdict == "certified";
    }
    for (sample, (classified, certified)) in &by_sample {
        let verdict = if !classified {
            "misclassified"
        } else if *certified {
            "robust"
        } else {
            "unknown"
        };
        let bounds: Vec<String> = report
            .records
            .iter()
            .filter(|r| r.sample == *sample && r.target != r.predicted)
            .map(|r| {
                format!(
                    "t{}:{}",
                    r.target,
                    r.bound.map_or("-".into(), |b| format!("{b:.6}"))
                )
            })
            .collect();
        println!("sample {sample}: {verdict} [{}]", bounds.join(" "));
    }
    let robust = by_sample.values().filter(|(c, r)| *c && *r).count();
    println!(
        "{}/{} samples certified robust at epsilon {}",
        robust,
        by_sample.len(),
        args.epsilon
    );

    if let Some(path) = &args.report {
        let json = serde_json::to_string_pretty(&report)
            .map_err(|e| Error::Parse(format!("serialize report: {e}")))?;
        write_or_stdout(Some(path), json.as_bytes())?;
    }
    if let Some(path) = &args.records {
        let mut buf = Vec::new();
        write_records_csv(&report.records, &mut buf)?;
        write_or_stdout(Some(path), &buf)?;
    }
    if let Some(dir) = &args.trace_dir {
        write_traces(dir, &report.traces)?;
    }
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    let text = fs::read_to_string(&args.config)?;
    let cfg: BenchConfig = serde_json::from_str(&text)
        .map_err(|e| Error::Parse(format!("{}: {e}", args.config.display())))?;
    let report = run_bench(&cfg)?;
    fs::create_dir_all(&args.out)?;
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Parse(format!("serialize report: {e}")))?;
    fs::write(args.out.join("report.json"), json)?;
    let mut buf = Vec::new();
    write_records_csv(&report.records, &mut buf)?;
    fs::write(args.out.join("records.csv"), buf)?;
    fs::write(args.out.join("table1.csv"), table1_csv(&report.groups))?;
    fs::write(args.out.join("table2.csv"), table2_csv(&report.groups))?;
    if !report.traces.is_empty() {
        write_traces(&args.out.join("traces"), &report.traces)?;
    }
    println!(
        "wrote report.json, records.csv, table1.csv, table2.csv to {}",
        args.out.display()
    );
    for g in &report.groups {
        println!(
            "{} eps={} {}{}{}: certified {:.1}%, avg {:.4}s",
            g.network,
            g.epsilon_label,
            g.method,
            if g.variant.is_empty() {
                String::new()
            } else {
                format!("/{}", g.variant)
            },
            if g.backend.is_empty() {
                String::new()
            } else {
                format!("/{}", g.backend)
            },
            100.0 * g.certified_accuracy,
            g.avg_time_secs
        );
    }
    Ok(())
}

fn cmd_bounds(args: BoundsArgs) -> Result<()> {
    let (net, samples) = args.input.load()?;
    let sample = samples.get(args.index).ok_or_else(|| {
        Error::InvalidArgument(format!("sample index {} out of range", args.index))
    })?;
    let epsilon = parse_epsilon(&args.epsilon)?;
    let ball = Ball::new(sample.features.clone(), epsilon)?;
    let bs = propagate_interval(&net, &ball)?;
    let sm = classify_neurons(&bs, net.final_relu);
    let mut out = String::from("layer,neuron,lower,upper,tag\n");
    for (k, (lo, hi)) in bs.input_lower.iter().zip(&bs.input_upper).enumerate() {
        out.push_str(&format!("0,{k},{lo},{hi},input\n"));
    }
    for (i, lb) in bs.layers.iter().enumerate() {
        for j in 0..lb.pre_lower.len() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                i + 1,
                j,
                lb.pre_lower[j],
                lb.pre_upper[j],
                sm.tags[i][j].as_str()
            ));
        }
    }
    write_or_stdout(args.out.as_deref(), out.as_bytes())
}

fn cmd_gen(args: GenArgs) -> Result<()> {
    let dims: Vec<usize> = args
        .dims
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::Parse(format!("bad layer width {s:?}")))
        })
        .collect::<Result<_>>()?;
    let net = generate_random_network(&dims, args.scale, args.seed)?;
    save_network(&net, &args.out)?;
    println!("wrote {} ({})", args.out.display(), net.name);
    if let Some(count) = args.samples {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(args.seed.wrapping_add(1));
        let mut csv = String::new();
        for _ in 0..count {
            let x: Vec<f64> = (0..net.input_dim())
                .map(|_| rng.gen_range(0.0..1.0))
                .collect();
            let (_, label) = net.forward(&x)?;
            csv.push_str(&format!(
                "{label},{}\n",
                x.iter()
                    .map(|v| format!("{v}"))
                    .collect::<Vec<_>>()
                    .join(",")
            ));
        }
        let path = args
            .samples_out
            .unwrap_or_else(|| args.out.with_extension("samples.csv"));
        fs::write(&path, csv)?;
        println!("wrote {count} samples to {}", path.display());
    }
    Ok(())
}

fn instance(input: &InputArgs, epsilon: &str, index: usize) -> Result<(Network, Ball, usize)> {
    let (net, samples) = input.load()?;
    let sample = samples
        .get(index)
        .ok_or_else(|| Error::InvalidArgument(format!("sample index {index} out of range")))?;
    let epsilon = parse_epsilon(epsilon)?;
    let ball = Ball::new(sample.features.clone(), epsilon)?;
    let (_, predicted) = net.forward(&ball.center)?;
    Ok((net, ball, predicted))
}

fn cmd_encode(args: EncodeArgs) -> Result<()> {
    let (net, ball, predicted) = instance(&args.input, &args.epsilon, args.index)?;
    let bs = propagate_interval(&net, &ball)?;
    let sm = classify_neurons(&bs, net.final_relu);
    let mut mp = build_mip(&net, &ball, &bs, &sm, predicted)?;
    if let Some(t) = args.target {
        mp.set_target(t)?;
    }
    let mut buf = Vec::new();
    mp.write_dump(&mut buf)?;
    write_or_stdout(args.dump.as_deref(), &buf)
}

fn cmd_dump_qubo(args: DumpQuboArgs) -> Result<()> {
    let (net, ball, predicted) = instance(&args.input, &args.epsilon, args.index)?;
    let bs = propagate_interval(&net, &ball)?;
    let sm = classify_neurons(&bs, net.final_relu);
    let mut mp = build_mip(&net, &ball, &bs, &sm, predicted)?;
    let target = match args.target {
        Some(t) => t,
        None => (0..net.output_dim())
            .find(|&t| t != predicted)
            .ok_or_else(|| Error::InvalidArgument("network has a single class".into()))?,
    };
    mp.set_target(target)?;
    let mut config = args.hqcran.config(args.seed)?;
    config.keep_master_models = true;
    config.max_iterations = config.max_iterations.max(args.iteration);
    let outcome = crate::benders::verify_target(&mp, &config)?;
    if args.iteration == 0 || args.iteration > outcome.snapshots.len() {
        return Err(Error::InvalidArgument(format!(
            "iteration {} not available; the run produced {} master models",
            args.iteration,
            outcome.snapshots.len()
        )));
    }
    let snap = &outcome.snapshots[args.iteration - 1];
    let model = snap.model.as_ref().ok_or_else(|| {
        Error::InvalidArgument("no master model recorded for this iteration".into())
    })?;
    let mut buf = Vec::new();
    model.write_edge_list(&mut buf)?;
    write_or_stdout(args.out.as_deref(), &buf)
}
