//! Command-line front end: training, abstraction, refinement, evaluation,
//! error bounds, the bisimulation baseline and accuracy sweeps.

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use linabs::abstraction::{abstract_network, AbstractionConfig, AbstractionState, CoefficientMethod, Selection, SemanticsSource, Target};
use linabs::data_io::{
    load_dataset, load_network, load_state, sample_indices, save_network, save_state, train_mlp, write_csv, TrainConfig,
};
use linabs::error_analysis::{relative_error_stats, theorem_bound, EtaNorm};
use linabs::experiment::{counterexamples_outside, sweep, Method};
use linabs::network::{accuracy, LabeledDataset, Network};
use linabs::numerics::Vector;
use linabs::refinement::{refine, Heuristic, RefinementConfig};
use linabs::syntactic::{bisim_abstract, delta_partition, merge_partition, Representative};

/// Invalid or inconsistent flags; reported with exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(UsageError(msg.into()).into())
}

#[derive(Parser, Debug)]
#[command(name = "linabs", version, about = "Linear abstraction of ReLU classifiers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a fully connected ReLU classifier.
    Train(TrainArgs),
    /// Replace hidden neurons by linear combinations of basis neurons.
    Abstract(AbstractArgs),
    /// Restore replaced neurons on counterexamples.
    Refine(RefineArgs),
    /// Test accuracy of a network.
    Evaluate(EvaluateArgs),
    /// Closed-form output-error bound of an abstraction.
    Bound(BoundArgs),
    /// Merge neurons with similar incoming weights.
    Bisim(BisimArgs),
    /// Accuracy against reduction rate for several methods, as CSV.
    Sweep(SweepArgs),
}

#[derive(Args, Debug, Clone)]
pub struct TrainData {
    #[arg(long)]
    pub train_images: Option<PathBuf>,
    #[arg(long)]
    pub train_labels: Option<PathBuf>,
}

impl TrainData {
    fn load(&self) -> Result<LabeledDataset> {
        match (&self.train_images, &self.train_labels) {
            (Some(i), Some(l)) => Ok(load_dataset(i, l)?),
            _ => usage("--train-images and --train-labels are required"),
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct TestData {
    #[arg(long)]
    pub test_images: Option<PathBuf>,
    #[arg(long)]
    pub test_labels: Option<PathBuf>,
}

impl TestData {
    fn load(&self) -> Result<Option<LabeledDataset>> {
        match (&self.test_images, &self.test_labels) {
            (Some(i), Some(l)) => Ok(Some(load_dataset(i, l)?)),
            (None, None) => Ok(None),
            _ => usage("--test-images and --test-labels go together"),
        }
    }

    fn require(&self) -> Result<LabeledDataset> {
        match self.load()? {
            Some(d) => Ok(d),
            None => usage("--test-images and --test-labels are required"),
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct IoSet {
    /// Number of training inputs used as the I/O set.
    #[arg(long = "io-set", default_value_t = 1000)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl IoSet {
    fn indices(&self, data: &LabeledDataset) -> Result<Vec<usize>> {
        if self.size == 0 || self.size > data.len() {
            return usage(format!("--io-set must be in 1..={}", data.len()));
        }
        Ok(sample_indices(data.len(), self.size, self.seed)?)
    }

    fn inputs(&self, data: &LabeledDataset) -> Result<Vec<Vector>> {
        Ok(self.indices(data)?.into_iter().map(|i| data.inputs[i].clone()).collect())
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub train: TrainData,
    #[command(flatten)]
    pub test: TestData,
    /// Hidden widths, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [100, 100, 100])]
    pub hidden: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long = "lr", default_value_t = 0.05)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum SelectionArg {
    Greedy,
    Variance,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum CoeffsArg {
    Op,
    Lp,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum SemanticsArg {
    Semantic,
    Syntactic,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeuristicArg {
    Difference,
    Gradient,
    Lookahead,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum EtaNormArg {
    L1,
    MaxAbs,
}

#[derive(Args, Debug)]
pub struct AbstractArgs {
    #[arg(long)]
    pub net: PathBuf,
    #[command(flatten)]
    pub train: TrainData,
    #[command(flatten)]
    pub io: IoSet,
    #[arg(long, value_enum, default_value_t = SelectionArg::Variance)]
    pub selection: SelectionArg,
    #[arg(long, value_enum, default_value_t = CoeffsArg::Op)]
    pub coeffs: CoeffsArg,
    #[arg(long, value_enum, default_value_t = SemanticsArg::Semantic)]
    pub semantics: SemanticsArg,
    /// Fraction of hidden neurons to remove.
    #[arg(long, conflicts_with = "basis_sizes")]
    pub rr: Option<f64>,
    /// Basis size per hidden layer, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub basis_sizes: Option<Vec<usize>>,
    /// Abstract network; the state goes to `<stem>.state.json` beside it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct RefineArgs {
    /// Abstract network written by `abstract`; its sidecar is read too.
    #[arg(long)]
    pub net: PathBuf,
    /// Training data searched for counterexamples, I/O set excluded.
    #[command(flatten)]
    pub train: TrainData,
    #[command(flatten)]
    pub io: IoSet,
    #[arg(long, value_enum, default_value_t = HeuristicArg::Difference)]
    pub heuristic: HeuristicArg,
    /// Maximum number of restored neurons.
    #[arg(long)]
    pub budget: Option<usize>,
    /// Stop once the reduction rate has dropped to this value.
    #[arg(long)]
    pub rr: Option<f64>,
    #[arg(long, default_value_t = 200)]
    pub counterexamples: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub net: PathBuf,
    #[command(flatten)]
    pub test: TestData,
}

#[derive(Args, Debug)]
pub struct BoundArgs {
    /// Network; its sidecar is used when present, otherwise nothing is abstracted.
    #[arg(long)]
    pub net: PathBuf,
    #[command(flatten)]
    pub train: TrainData,
    #[command(flatten)]
    pub io: IoSet,
    #[arg(long, value_enum, default_value_t = EtaNormArg::L1)]
    pub eta_norm: EtaNormArg,
    /// Per-neuron relative errors on the test set, as CSV.
    #[arg(long, requires = "test_images")]
    pub relative_csv: Option<PathBuf>,
    #[command(flatten)]
    pub test: TestData,
    /// JSON report; printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BisimArgs {
    #[arg(long)]
    pub net: PathBuf,
    #[arg(long, conflicts_with = "rr")]
    pub delta: Option<f64>,
    #[arg(long)]
    pub rr: Option<f64>,
    /// Seed for a random cluster representative instead of the lowest index.
    #[arg(long)]
    pub random_representative: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long)]
    pub net: PathBuf,
    #[command(flatten)]
    pub train: TrainData,
    #[command(flatten)]
    pub test: TestData,
    #[command(flatten)]
    pub io: IoSet,
    /// `a..b` (step 0.1), `a..b:step` or a comma-separated list.
    #[arg(long, default_value = "0.1..0.9")]
    pub rr: String,
    #[arg(long, value_delimiter = ',', default_value = "variance-op,bisim")]
    pub methods: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

/// `<dir>/<stem>.state.json` for `<dir>/<stem>.<ext>`.
pub fn sidecar_path(net: &Path) -> PathBuf {
    let stem = net.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    net.with_file_name(format!("{stem}.state.json"))
}

/// Parses `a..b`, `a..b:step` or `a,b,c` into reduction rates.
pub fn parse_rates(spec: &str) -> Result<Vec<f64>> {
    let bad = || UsageError(format!("cannot parse reduction rates {spec:?}"));
    let rates: Vec<f64> = if let Some((lo, rest)) = spec.split_once("..") {
        let (hi, step) = match rest.split_once(':') {
            Some((hi, step)) => (hi, step.parse::<f64>().map_err(|_| bad())?),
            None => (rest, 0.1),
        };
        let lo: f64 = lo.parse().map_err(|_| bad())?;
        let hi: f64 = hi.parse().map_err(|_| bad())?;
        if !(step > 0.0) || hi < lo {
            return Err(bad().into());
        }
        let n = ((hi - lo) / step + 1e-9).floor() as usize;
        // rounded so that 0.1 steps print as written
        (0..=n).map(|k| ((lo + k as f64 * step) * 1e9).round() / 1e9).collect()
    } else {
        spec.split(',').map(|s| s.trim().parse::<f64>().map_err(|_| bad())).collect::<std::result::Result<_, _>>()?
    };
    check_rates(&rates)?;
    Ok(rates)
}

fn check_rates(rates: &[f64]) -> Result<()> {
    match rates.iter().find(|r| !(0.0..1.0).contains(*r)) {
        Some(r) => usage(format!("reduction rate {r} not in [0, 1)")),
        None if rates.is_empty() => usage("no reduction rates given"),
        None => Ok(()),
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Abstract(a) => cmd_abstract(a),
        Command::Refine(a) => cmd_refine(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Bound(a) => cmd_bound(a),
        Command::Bisim(a) => cmd_bisim(a),
        Command::Sweep(a) => cmd_sweep(a),
    }
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    if a.hidden.is_empty() || a.hidden.contains(&0) {
        return usage("--hidden needs positive widths");
    }
    if !(a.learning_rate > 0.0) || a.batch_size == 0 {
        return usage("--lr and --batch-size must be positive");
    }
    let train = a.train.load()?;
    let test = a.test.load()?;
    let config = TrainConfig {
        hidden: a.hidden,
        classes: a.classes,
        epochs: a.epochs,
        learning_rate: a.learning_rate,
        batch_size: a.batch_size,
        seed: a.seed,
    };
    let (net, report) = train_mlp(&train, &config, test.as_ref())?;
    save_network(&net, &a.out)?;
    println!("train_accuracy {:.4}", report.train_accuracy);
    if let Some(t) = report.test_accuracy {
        println!("test_accuracy {t:.4}");
    }
    Ok(())
}

fn cmd_abstract(a: AbstractArgs) -> Result<()> {
    let target = match (a.rr, a.basis_sizes) {
        (Some(rr), None) => {
            check_rates(&[rr])?;
            Target::ReductionRate(rr)
        }
        (None, Some(sizes)) => Target::BasisSizes(sizes),
        _ => return usage("give one of --rr and --basis-sizes"),
    };
    let source = match a.semantics {
        SemanticsArg::Semantic => SemanticsSource::Semantic,
        SemanticsArg::Syntactic => SemanticsSource::Syntactic,
    };
    let net = load_network(&a.net)?;
    let io = match source {
        SemanticsSource::Semantic => a.io.inputs(&a.train.load()?)?,
        SemanticsSource::Syntactic => Vec::new(),
    };
    let config = AbstractionConfig {
        selection: match a.selection {
            SelectionArg::Greedy => Selection::Greedy,
            SelectionArg::Variance => Selection::Variance,
        },
        coefficients: match a.coeffs {
            CoeffsArg::Op => CoefficientMethod::Orthogonal,
            CoeffsArg::Lp => CoefficientMethod::L1,
        },
        target,
        source,
    };
    let started = Instant::now();
    let state = abstract_network(&net, &io, &config)?;
    let elapsed = started.elapsed().as_secs_f64();
    save_network(&state.current, &a.out)?;
    let side = sidecar_path(&a.out);
    save_state(&state, &side)?;
    println!("reduction_rate {:.4}", state.reduction_rate());
    println!("wall_time_s {elapsed:.3}");
    println!("state {}", side.display());
    Ok(())
}

fn load_abstraction(net_path: &Path) -> Result<AbstractionState> {
    let net = load_network(net_path)?;
    let side = sidecar_path(net_path);
    let state = load_state(&side).with_context(|| format!("reading abstraction state {}", side.display()))?;
    if state.current != net {
        anyhow::bail!("{} does not match the network in {}", side.display(), net_path.display());
    }
    Ok(state)
}

fn cmd_refine(a: RefineArgs) -> Result<()> {
    if let Some(rr) = a.rr {
        check_rates(&[rr])?;
    }
    let mut state = load_abstraction(&a.net)?;
    let train = a.train.load()?;
    let exclude = a.io.indices(&train)?;
    let mut budget = a.budget.unwrap_or(usize::MAX);
    if let Some(rr) = a.rr {
        let total = state.original.hidden_neurons();
        let keep_replaced = (rr * total as f64).round() as usize;
        budget = budget.min(state.replaced_count().saturating_sub(keep_replaced));
    }
    let ces = counterexamples_outside(&state.original, &state.current, &train, &exclude, a.counterexamples)?;
    let config = RefinementConfig {
        heuristic: match a.heuristic {
            HeuristicArg::Difference => Heuristic::Difference,
            HeuristicArg::Gradient => Heuristic::Gradient,
            HeuristicArg::Lookahead => Heuristic::Lookahead,
        },
        budget,
        ..RefinementConfig::default()
    };
    let report = refine(&mut state, &ces, &config)?;
    save_network(&state.current, &a.out)?;
    save_state(&state, sidecar_path(&a.out))?;
    println!("counterexamples {}", ces.len());
    println!("restored {}", report.restored.len());
    println!("fixed {}", report.fixed);
    println!("reduction_rate {:.4}", state.reduction_rate());
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let test = a.test.require()?;
    let net = load_network(&a.net)?;
    println!("accuracy {:.4}", accuracy(&net, &test)?);
    Ok(())
}

fn cmd_bound(a: BoundArgs) -> Result<()> {
    let net_state = if sidecar_path(&a.net).exists() {
        load_abstraction(&a.net)?
    } else {
        AbstractionState::new(&load_network(&a.net)?)
    };
    let train = a.train.load()?;
    let io = a.io.inputs(&train)?;
    let norm = match a.eta_norm {
        EtaNormArg::L1 => EtaNorm::L1,
        EtaNormArg::MaxAbs => EtaNorm::MaxAbs,
    };
    let report = theorem_bound(&net_state, &io, norm)?;
    let text = serde_json::to_string_pretty(&report)?;
    match &a.out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => println!("{text}"),
    }
    if let Some(path) = &a.relative_csv {
        let test = a.test.require()?;
        let stats = relative_error_stats(&net_state, &io, &test.inputs)?;
        let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
        for n in &stats.neurons {
            w.serialize(n)?;
        }
        w.flush()?;
        if let Some(m) = stats.median_geometric_mean() {
            eprintln!("median geometric mean {m:.4}");
        }
        eprintln!("fraction with max above one {:.4}", stats.fraction_max_above_one());
    }
    Ok(())
}

fn cmd_bisim(a: BisimArgs) -> Result<()> {
    let net = load_network(&a.net)?;
    let rep = a.random_representative.map_or(Representative::Lowest, Representative::Random);
    let (merged, rate, delta): (Network, f64, f64) = match (a.delta, a.rr) {
        (Some(delta), None) => {
            if !(delta >= 0.0) {
                return usage("--delta must be non-negative");
            }
            let p = delta_partition(&net, delta)?;
            (merge_partition(&net, &p, rep)?, p.reduction_rate(), delta)
        }
        (None, Some(rr)) => {
            check_rates(&[rr])?;
            let r = bisim_abstract(&net, rr, rep)?;
            (r.network, r.reduction_rate, r.delta)
        }
        _ => return usage("give one of --delta and --rr"),
    };
    save_network(&merged, &a.out)?;
    println!("delta {delta}");
    println!("reduction_rate {rate:.4}");
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let rates = parse_rates(&a.rr)?;
    let methods = a
        .methods
        .iter()
        .map(|m| m.parse::<Method>().map_err(|e| UsageError(e.to_string()).into()))
        .collect::<Result<Vec<_>>>()?;
    let net = load_network(&a.net)?;
    let train = a.train.load()?;
    let test = a.test.require()?;
    let io = a.io.inputs(&train)?;
    let records = sweep(&net, &io, &test, &methods, &rates)?;
    write_csv(&records, &a.out)?;
    println!("rows {}", records.len());
    Ok(())
}
