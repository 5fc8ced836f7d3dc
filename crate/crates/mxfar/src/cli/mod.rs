//! Command-line pipeline: simulate, select, fit, test, bands, fpdc, network.
//!
//! Every subcommand is a pure function of its inputs, flags, and `--seed`;
//! rerunning with identical arguments reproduces byte-identical output CSVs
//! regardless of `--threads`. Each run writes a `manifest.json` with input
//! and output digests into the output directory.

pub mod manifest;

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::core::config::build_grid;
use crate::core::panel::Panel;
use crate::core::{KernelKind, ModelConfig, ReferenceSpec};
use crate::error::{Error, Result};
use crate::estimator::export;
use crate::estimator::fit::fit_mxfar;
use crate::inference::{coefficient_bands, nonlinearity_test};
use crate::logging::mx_info;
use crate::selection::{cartesian_candidates, default_horizon, select_model, DEFAULT_SUBSERIES};
use crate::simulator::{simulate, GeneratorKind, GeneratorSpec, TrueModel};
use crate::spectral::network::{
    network_summary, regime_u0_values, windowed_edge_significance, write_dot,
};
use crate::spectral::significance::edge_significance;
use crate::spectral::{default_omega_grid, mean_fpdc};
use manifest::ManifestBuilder;

#[derive(Parser, Debug)]
#[command(
    name = "mxfar",
    version,
    about = "Mixed-effects functional-coefficient autoregression toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Worker threads; results are independent of this value.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic panel and its ground-truth curves.
    Simulate(SimulateArgs),
    /// Sweep (bandwidth, order, reference) candidates by accumulated
    /// prediction error.
    Select(SelectArgs),
    /// Fit the MX-FAR model and export the coefficient grid.
    Fit(FitArgs),
    /// Bootstrap nonlinearity test against a constant-coefficient null.
    Test(TestArgs),
    /// Pointwise bootstrap confidence bands for coefficient functions.
    Bands(BandsArgs),
    /// Functional PDC surfaces with bootstrap significance.
    Fpdc(FpdcArgs),
    /// Windowed significant-edge networks.
    Network(NetworkArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum KernelArg {
    Epanechnikov,
    Gaussian,
}

impl From<KernelArg> for KernelKind {
    fn from(k: KernelArg) -> Self {
        match k {
            KernelArg::Epanechnikov => KernelKind::Epanechnikov,
            KernelArg::Gaussian => KernelKind::Gaussian,
        }
    }
}

#[derive(Args, Debug)]
struct ModelArgs {
    /// Input panel CSV.
    #[arg(long)]
    input: PathBuf,
    /// Autoregressive order.
    #[arg(long, default_value_t = 1)]
    p: usize,
    /// Reference channel, 1-based as in the ch_* columns.
    #[arg(long)]
    ref_channel: usize,
    /// Reference lag (>= 1).
    #[arg(long)]
    ref_lag: usize,
    /// Kernel bandwidth in reference-signal units.
    #[arg(long)]
    bandwidth: f64,
    #[arg(long, value_enum, default_value_t = KernelArg::Epanechnikov)]
    kernel: KernelArg,
    /// Number of grid segments over the reference support.
    #[arg(long, default_value_t = 50)]
    grid_size: usize,
    /// Random-effect penalty scale.
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    /// Pooled-quantile pair clipping the grid range, e.g. 0.05,0.95.
    #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = [0.01, 0.99])]
    grid_clip: Vec<f64>,
}

impl ModelArgs {
    fn config(&self) -> Result<ModelConfig> {
        if self.ref_channel == 0 {
            return Err(Error::Cli("--ref-channel is 1-based".into()));
        }
        Ok(ModelConfig {
            p: self.p,
            reference: ReferenceSpec::channel(self.ref_channel - 1, self.ref_lag),
            kernel: self.kernel.into(),
            bandwidth: self.bandwidth,
            grid_size: self.grid_size,
            penalty_scale: self.lambda,
            grid_clip: (self.grid_clip[0], self.grid_clip[1]),
        })
    }

    fn json(&self) -> serde_json::Value {
        serde_json::json!({
            "input": self.input.display().to_string(),
            "p": self.p,
            "ref_channel": self.ref_channel,
            "ref_lag": self.ref_lag,
            "bandwidth": self.bandwidth,
            "kernel": format!("{:?}", self.kernel),
            "grid_size": self.grid_size,
            "lambda": self.lambda,
            "grid_clip": self.grid_clip,
        })
    }
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Generator family.
    #[arg(long, value_enum)]
    kind: SimKind,
    /// Subjects (per group for the two-group design).
    #[arg(long, default_value_t = 10)]
    n_subjects: usize,
    /// Series length.
    #[arg(long, default_value_t = 500)]
    t: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1.0)]
    noise_sd: f64,
    /// Random-effect scale; the design default applies when omitted.
    #[arg(long)]
    re_sd: Option<f64>,
    #[arg(long, default_value_t = crate::simulator::DEFAULT_BURN_IN)]
    burn_in: usize,
    /// JSON file with a full GeneratorSpec; overrides the flags above.
    #[arg(long)]
    spec_json: Option<PathBuf>,
    #[arg(long)]
    output_dir: PathBuf,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum SimKind {
    Expar,
    Sigmoid,
    Var,
    Tar,
}

#[derive(Args, Debug)]
struct SelectArgs {
    #[arg(long)]
    input: PathBuf,
    /// Candidate bandwidths.
    #[arg(long, value_delimiter = ',')]
    bandwidth: Vec<f64>,
    /// Candidate orders.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    p: Vec<usize>,
    /// Candidate reference channels (1-based).
    #[arg(long, value_delimiter = ',')]
    ref_channel: Vec<usize>,
    /// Candidate reference lags.
    #[arg(long, value_delimiter = ',')]
    ref_lag: Vec<usize>,
    #[arg(long, value_enum, default_value_t = KernelArg::Epanechnikov)]
    kernel: KernelArg,
    #[arg(long, default_value_t = 50)]
    grid_size: usize,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    /// Forecast horizon r; defaults to floor(0.1 T).
    #[arg(long)]
    r: Option<usize>,
    /// Subseries count Q.
    #[arg(long, default_value_t = DEFAULT_SUBSERIES)]
    q: usize,
    #[arg(long)]
    output_dir: PathBuf,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    output_dir: PathBuf,
}

#[derive(Args, Debug)]
struct TestArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 200)]
    boot_reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output_dir: PathBuf,
}

#[derive(Args, Debug)]
struct BandsArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 200)]
    boot_reps: usize,
    /// Significance level; the band level is 1 - alpha.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output_dir: PathBuf,
}

#[derive(Args, Debug)]
struct FpdcArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 200)]
    boot_reps: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Frequency count of the omega grid in (0, 0.5).
    #[arg(long, default_value_t = 64)]
    omega_points: usize,
    /// Reference levels to evaluate; defaults to the small/large pooled
    /// quantiles.
    #[arg(long, value_delimiter = ',')]
    u0: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output_dir: PathBuf,
}

#[derive(Args, Debug)]
struct NetworkArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 200)]
    boot_reps: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 64)]
    omega_points: usize,
    /// Non-overlapping analysis window length, in samples.
    #[arg(long)]
    window_len: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output_dir: PathBuf,
}

/// Read and validate a panel CSV, reporting every contract violation.
pub fn validate_panel(path: &Path) -> Result<Panel> {
    let panel = Panel::read_csv_path(path)?;
    mx_info!(
        "panel {}: N = {}, k = {}, T = {}, groups = {}",
        path.display(),
        panel.n_subjects(),
        panel.n_channels(),
        panel.n_time(),
        panel.n_groups()
    );
    Ok(panel)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))
}

fn create_file(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(std::io::BufWriter::new(file))
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::io(path.display().to_string(), e)
}

/// Run the CLI with the given arguments (excluding the binary name handled
/// by clap); returns the process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let threads = cli
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error[threads]: {e}");
            return 1;
        }
    };
    let outcome = pool.install(|| dispatch(cli.command));
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error[{}]: {e}", error_category(&e));
            1
        }
    }
}

fn error_category(e: &Error) -> &'static str {
    match e {
        Error::InvalidBandwidth(_) | Error::InvalidConfig(_) | Error::Cli(_) => "config",
        Error::InvalidReference(_) | Error::DegenerateReference => "reference",
        Error::PanelValidation(_) => "panel",
        Error::EmptyDesign { .. }
        | Error::EmptyNeighborhood { .. }
        | Error::InsufficientData { .. }
        | Error::SingularDesign { .. }
        | Error::SingularSystem { .. }
        | Error::VarianceUndefined(_)
        | Error::FitFailure { .. }
        | Error::GridGap { .. }
        | Error::PredictionRange { .. } => "fit",
        Error::Subseries { .. } | Error::SelectionFailed => "selection",
        Error::TooManyReplicateFailures { .. } => "bootstrap",
        Error::Unbounded { .. }
        | Error::UnstableGenerator { .. }
        | Error::Extrapolation { .. }
        | Error::InvalidGenerator(_) => "simulate",
        Error::NoWindows { .. } => "network",
        Error::Io { .. } | Error::Json(_) => "io",
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Select(args) => cmd_select(args),
        Command::Fit(args) => cmd_fit(args),
        Command::Test(args) => cmd_test(args),
        Command::Bands(args) => cmd_bands(args),
        Command::Fpdc(args) => cmd_fpdc(args),
        Command::Network(args) => cmd_network(args),
    }
}

fn generator_spec(args: &SimulateArgs) -> Result<GeneratorSpec> {
    if let Some(path) = &args.spec_json {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        return Ok(serde_json::from_slice(&bytes)?);
    }
    let kind = match args.kind {
        SimKind::Expar => GeneratorKind::Expar {
            n_subjects: args.n_subjects,
            noise_sd: args.noise_sd,
            random_effect_sd: args.re_sd.unwrap_or(0.03),
        },
        SimKind::Sigmoid => GeneratorKind::SigmoidTwoGroup {
            n_group1: args.n_subjects,
            n_group2: args.n_subjects,
            noise_sd: args.noise_sd,
            random_effect_sd: args.re_sd.unwrap_or(0.8),
        },
        SimKind::Var => GeneratorKind::LinearVar {
            n_subjects: args.n_subjects,
            coeffs: vec![vec![vec![0.5, 0.2], vec![-0.1, 0.3]]],
            noise_sd: args.noise_sd,
            random_effect_sd: args.re_sd.unwrap_or(0.0),
        },
        SimKind::Tar => GeneratorKind::Tar {
            n_subjects: args.n_subjects,
            low: vec![vec![vec![0.5, 0.0], vec![0.2, 0.3]]],
            high: vec![vec![vec![-0.4, 0.0], vec![0.2, 0.3]]],
            threshold: 0.0,
            ref_channel: 0,
            ref_lag: 1,
            noise_sd: args.noise_sd,
            random_effect_sd: args.re_sd.unwrap_or(0.0),
        },
    };
    Ok(GeneratorSpec {
        kind,
        n_time: args.t,
        seed: args.seed,
        burn_in: args.burn_in,
    })
}

/// Ground-truth sidecar: the generator spec plus population and realized
/// subject curves tabulated on the default analysis grid.
fn write_truth_json(
    spec: &GeneratorSpec,
    truth: &TrueModel,
    panel: &Panel,
    path: &Path,
) -> Result<()> {
    let config = ModelConfig::new(
        truth.p,
        ReferenceSpec::channel(truth.ref_channel, truth.ref_lag.max(1)),
        1.0,
    );
    let grid = build_grid(panel, &config)?;
    let k = truth.k;
    let curve = |eval: &dyn Fn(f64) -> Result<f64>| -> Result<Vec<f64>> {
        grid.points.iter().map(|&u| eval(u)).collect()
    };
    let mut population = serde_json::Map::new();
    for group in 0..panel.n_groups() {
        let mut per_entry = Vec::new();
        for j in 0..k {
            for lag in 0..truth.p {
                for g in 0..k {
                    per_entry.push(serde_json::json!({
                        "channel": j + 1,
                        "target_lag_channel": g + 1,
                        "lag": lag + 1,
                        "values": curve(&|u| truth.population_coeff(group, j, g, lag, u))?,
                    }));
                }
            }
        }
        population.insert(
            format!("group_{group}"),
            serde_json::Value::Array(per_entry),
        );
    }
    let mut subjects = Vec::new();
    for n in 0..panel.n_subjects() {
        let mut per_entry = Vec::new();
        for j in 0..k {
            for lag in 0..truth.p {
                for g in 0..k {
                    per_entry.push(serde_json::json!({
                        "channel": j + 1,
                        "target_lag_channel": g + 1,
                        "lag": lag + 1,
                        "values": curve(&|u| truth.coeff(n, j, g, lag, u))?,
                    }));
                }
            }
        }
        subjects.push(serde_json::json!({
            "subject_id": panel.subject_ids()[n],
            "group": panel.group_of(n),
            "curves": per_entry,
        }));
    }
    let value = serde_json::json!({
        "spec": spec,
        "grid": grid.points,
        "population_curves": population,
        "subject_curves": subjects,
    });
    let mut out = create_file(path)?;
    serde_json::to_writer_pretty(&mut out, &value)?;
    out.write_all(b"\n").map_err(io_err(path))?;
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    ensure_dir(&args.output_dir)?;
    let spec = generator_spec(&args)?;
    let mut manifest =
        ManifestBuilder::new("simulate", serde_json::to_value(&spec)?, Some(spec.seed));
    let (panel, truth) = simulate(&spec)?;
    let panel_path = args.output_dir.join("panel.csv");
    panel.write_csv_path(&panel_path)?;
    let truth_path = args.output_dir.join("truth.json");
    write_truth_json(&spec, &truth, &panel, &truth_path)?;
    manifest.output(&panel_path);
    manifest.output(&truth_path);
    manifest.write(&args.output_dir)?;
    mx_info!(
        "simulated {} subjects x {} channels x {} points",
        panel.n_subjects(),
        panel.n_channels(),
        panel.n_time()
    );
    Ok(())
}

fn cmd_fit(args: FitArgs) -> Result<()> {
    ensure_dir(&args.output_dir)?;
    let mut manifest = ManifestBuilder::new("fit", args.model.json(), None);
    manifest.input(&args.model.input);
    let panel = validate_panel(&args.model.input)?;
    let config = args.model.config()?;
    let grid = fit_mxfar(&panel, &config)?;
    let coeff_path = args.output_dir.join("coefficients.csv");
    export::write_coefficients_csv(&grid, &panel, &coeff_path)?;
    let subject_path = args.output_dir.join("subject_effects.csv");
    export::write_subject_effects_csv(&grid, &panel, &subject_path)?;
    let model_path = args.output_dir.join("model.json");
    export::write_model_json(&grid, &panel, &model_path)?;
    manifest.output(&coeff_path);
    manifest.output(&subject_path);
    manifest.output(&model_path);
    manifest.write(&args.output_dir)?;
    mx_info!(
        "fitted {} grid points ({} gaps)",
        grid.grid.len(),
        grid.gaps()
    );
    Ok(())
}

fn cmd_select(args: SelectArgs) -> Result<()> {
    ensure_dir(&args.output_dir)?;
    let config_json = serde_json::json!({
        "input": args.input.display().to_string(),
        "bandwidth": args.bandwidth,
        "p": args.p,
        "ref_channel": args.ref_channel,
        "ref_lag": args.ref_lag,
        "grid_size": args.grid_size,
        "lambda": args.lambda,
        "r": args.r,
        "q": args.q,
    });
    let mut manifest = ManifestBuilder::new("select", config_json, None);
    manifest.input(&args.input);
    let panel = validate_panel(&args.input)?;
    if args.ref_channel.iter().any(|&c| c == 0) {
        return Err(Error::Cli("--ref-channel is 1-based".into()));
    }
    let references: Vec<ReferenceSpec> = args
        .ref_channel
        .iter()
        .flat_map(|&ch| {
            args.ref_lag
                .iter()
                .map(move |&lag| ReferenceSpec::channel(ch - 1, lag))
        })
        .collect();
    let candidates = cartesian_candidates(&args.bandwidth, &args.p, &references);
    let base = ModelConfig {
        p: 1,
        reference: references.first().cloned().ok_or(Error::SelectionFailed)?,
        kernel: args.kernel.into(),
        bandwidth: 1.0,
        grid_size: args.grid_size,
        penalty_scale: args.lambda,
        grid_clip: crate::core::config::DEFAULT_GRID_CLIP,
    };
    let r = args.r.unwrap_or_else(|| default_horizon(panel.n_time()));
    let report = select_model(&panel, &base, candidates, r, args.q)?;

    let ape_path = args.output_dir.join("ape.csv");
    let mut out = create_file(&ape_path)?;
    write!(out, "h,p,ref_channel,ref_lag").map_err(io_err(&ape_path))?;
    for qi in 1..=report.q {
        write!(out, ",ape_q{qi}").map_err(io_err(&ape_path))?;
    }
    writeln!(out, ",ape,best_flag").map_err(io_err(&ape_path))?;
    for (i, cand) in report.candidates.iter().enumerate() {
        let (ch, lag) = match &cand.reference {
            ReferenceSpec::Channel { channel, lag } => (channel + 1, *lag),
            ReferenceSpec::Exogenous { .. } => (0, 0),
        };
        write!(out, "{},{},{},{}", cand.bandwidth, cand.p, ch, lag).map_err(io_err(&ape_path))?;
        for v in &report.per_subseries[i] {
            write!(out, ",{v}").map_err(io_err(&ape_path))?;
        }
        writeln!(
            out,
            ",{},{}",
            report.ape[i],
            if i == report.best { 1 } else { 0 }
        )
        .map_err(io_err(&ape_path))?;
    }
    out.flush().map_err(io_err(&ape_path))?;
    drop(out);
    manifest.output(&ape_path);
    manifest.write(&args.output_dir)?;
    let best = &report.candidates[report.best];
    let (ch, lag) = match &best.reference {
        ReferenceSpec::Channel { channel, lag } => (channel + 1, *lag),
        ReferenceSpec::Exogenous { .. } => (0, 0),
    };
    println!(
        "best: h={}, p={}, ref_channel={ch}, ref_lag={lag}, ape={}",
        best.bandwidth, best.p, report.ape[report.best]
    );
    Ok(())
}

fn cmd_test(args: TestArgs) -> Result<()> {
    ensure_dir(&args.output_dir)?;
    let mut config_json = args.model.json();
    config_json["boot_reps"] = args.boot_reps.into();
    let mut manifest = ManifestBuilder::new("test", config_json, Some(args.seed));
    manifest.input(&args.model.input);
    let panel = validate_panel(&args.model.input)?;
    let config = args.model.config()?;
    let result = nonlinearity_test(&panel, &config, args.boot_reps, args.seed)?;
    println!(
        "L = {}\nB = {}\np_value = {}",
        result.l, result.b, result.p_value
    );
    let lboot_path = args.output_dir.join("lboot.csv");
    let mut out = create_file(&lboot_path)?;
    writeln!(out, "replicate,l_boot").map_err(io_err(&lboot_path))?;
    for (i, lb) in result.l_boot.iter().enumerate() {
        writeln!(out, "{},{}", i + 1, lb).map_err(io_err(&lboot_path))?;
    }
    out.flush().map_err(io_err(&lboot_path))?;
    drop(out);
    let summary_path = args.output_dir.join("test.json");
    let mut out = create_file(&summary_path)?;
    serde_json::to_writer_pretty(
        &mut out,
        &serde_json::json!({
            "l": result.l,
            "rss0": result.rss0,
            "rss1": result.rss1,
            "b": result.b,
            "requested_b": result.requested_b,
            "p_value": result.p_value,
        }),
    )?;
    out.write_all(b"\n").map_err(io_err(&summary_path))?;
    drop(out);
    manifest.output(&lboot_path);
    manifest.output(&summary_path);
    manifest.write(&args.output_dir)?;
    Ok(())
}

fn cmd_bands(args: BandsArgs) -> Result<()> {
    ensure_dir(&args.output_dir)?;
    let mut config_json = args.model.json();
    config_json["boot_reps"] = args.boot_reps.into();
    config_json["alpha"] = args.alpha.into();
    let mut manifest = ManifestBuilder::new("bands", config_json, Some(args.seed));
    manifest.input(&args.model.input);
    let panel = validate_panel(&args.model.input)?;
    let config = args.model.config()?;
    let level = 1.0 - args.alpha;
    let band = coefficient_bands(&panel, &config, args.boot_reps, level, args.seed)?;
    let k = band.n_channels;
    let bands_path = args.output_dir.join("bands.csv");
    let mut out = create_file(&bands_path)?;
    writeln!(out, "channel,group,target_lag_channel,lag,u0,lower,upper")
        .map_err(io_err(&bands_path))?;
    for j in 0..k {
        for g_idx in 0..band.n_groups {
            for lag in 0..config.p {
                for src in 0..k {
                    let r = lag * k + src;
                    for (s, &u0) in band.u0.iter().enumerate() {
                        writeln!(
                            out,
                            "{},{},{},{},{},{},{}",
                            j + 1,
                            g_idx,
                            src + 1,
                            lag + 1,
                            u0,
                            band.lower(j, g_idx, r, s),
                            band.upper(j, g_idx, r, s)
                        )
                        .map_err(io_err(&bands_path))?;
                    }
                }
            }
        }
    }
    out.flush().map_err(io_err(&bands_path))?;
    drop(out);
    manifest.output(&bands_path);
    manifest.write(&args.output_dir)?;
    Ok(())
}

fn cmd_fpdc(args: FpdcArgs) -> Result<()> {
    ensure_dir(&args.output_dir)?;
    let mut config_json = args.model.json();
    config_json["boot_reps"] = args.boot_reps.into();
    config_json["alpha"] = args.alpha.into();
    config_json["omega_points"] = args.omega_points.into();
    let mut manifest = ManifestBuilder::new("fpdc", config_json, Some(args.seed));
    manifest.input(&args.model.input);
    let panel = validate_panel(&args.model.input)?;
    let config = args.model.config()?;
    let omegas = default_omega_grid(args.omega_points);
    let u0 = match &args.u0 {
        Some(list) => list.clone(),
        None => regime_u0_values(&panel, &config)?,
    };
    let sig = edge_significance(
        &panel,
        &config,
        args.boot_reps,
        args.alpha,
        &omegas,
        &u0,
        args.seed,
    )?;
    let fpdc_path = args.output_dir.join("fpdc.csv");
    let mut out = create_file(&fpdc_path)?;
    writeln!(
        out,
        "group,target,source,omega,u0,modulus,ci_lo,ci_hi,threshold,significant"
    )
    .map_err(io_err(&fpdc_path))?;
    for g_idx in 0..sig.n_groups {
        for target in 0..sig.k {
            for source in 0..sig.k {
                for (w, &omega) in sig.omegas.iter().enumerate() {
                    for (s, &u) in sig.u0.iter().enumerate() {
                        let (lo, hi) = sig.ci_at(g_idx, target, source, w, s);
                        writeln!(
                            out,
                            "{},{},{},{},{},{},{},{},{},{}",
                            g_idx,
                            target + 1,
                            source + 1,
                            omega,
                            u,
                            sig.modulus_at(g_idx, target, source, w, s),
                            lo,
                            hi,
                            sig.threshold_at(g_idx, target, source, w, s),
                            u8::from(sig.is_significant(g_idx, target, source, s))
                        )
                        .map_err(io_err(&fpdc_path))?;
                    }
                }
            }
        }
    }
    out.flush().map_err(io_err(&fpdc_path))?;
    drop(out);

    // Point-estimate surfaces per group over the full grid, as a companion.
    let grid = fit_mxfar(&panel, &config)?;
    let surface_path = args.output_dir.join("fpdc_surface.csv");
    let mut out = create_file(&surface_path)?;
    writeln!(out, "group,target,source,omega,u0,re,im,modulus").map_err(io_err(&surface_path))?;
    for g_idx in 0..panel.n_groups() {
        let surface = mean_fpdc(&grid, g_idx, &omegas)?;
        for target in 0..surface.k {
            for source in 0..surface.k {
                for (w, &omega) in surface.omegas.iter().enumerate() {
                    for (s, &u) in surface.u0.iter().enumerate() {
                        if !surface.valid[s] {
                            continue;
                        }
                        let v = surface.value(target, source, w, s);
                        writeln!(
                            out,
                            "{},{},{},{},{},{},{},{}",
                            g_idx,
                            target + 1,
                            source + 1,
                            omega,
                            u,
                            v.re,
                            v.im,
                            v.norm()
                        )
                        .map_err(io_err(&surface_path))?;
                    }
                }
            }
        }
    }
    out.flush().map_err(io_err(&surface_path))?;
    drop(out);
    manifest.output(&fpdc_path);
    manifest.output(&surface_path);
    manifest.write(&args.output_dir)?;
    Ok(())
}

fn cmd_network(args: NetworkArgs) -> Result<()> {
    ensure_dir(&args.output_dir)?;
    let mut config_json = args.model.json();
    config_json["boot_reps"] = args.boot_reps.into();
    config_json["alpha"] = args.alpha.into();
    config_json["window_len"] = args.window_len.into();
    let mut manifest = ManifestBuilder::new("network", config_json, Some(args.seed));
    manifest.input(&args.model.input);
    let panel = validate_panel(&args.model.input)?;
    let config = args.model.config()?;
    let omegas = default_omega_grid(args.omega_points);
    let windows = windowed_edge_significance(
        &panel,
        &config,
        args.boot_reps,
        args.alpha,
        &omegas,
        args.window_len,
        args.seed,
    )?;
    let summary = network_summary(&windows)?;
    let net_path = args.output_dir.join("network.csv");
    let mut out = create_file(&net_path)?;
    writeln!(out, "group,regime,source,target,proportion").map_err(io_err(&net_path))?;
    for g_idx in 0..summary.n_groups {
        for (regime, regime_name) in summary.regimes.iter().enumerate() {
            for source in 0..summary.k {
                for target in 0..summary.k {
                    writeln!(
                        out,
                        "{},{},{},{},{}",
                        g_idx,
                        regime_name,
                        source + 1,
                        target + 1,
                        summary.proportion(g_idx, regime, source, target)
                    )
                    .map_err(io_err(&net_path))?;
                }
            }
        }
    }
    out.flush().map_err(io_err(&net_path))?;
    drop(out);
    let dot_path = args.output_dir.join("network.dot");
    let channel_names: Vec<String> = (1..=summary.k).map(|j| format!("ch_{j}")).collect();
    write_dot(&summary, &channel_names, &dot_path)?;
    manifest.output(&net_path);
    manifest.output(&dot_path);
    manifest.write(&args.output_dir)?;
    Ok(())
}
