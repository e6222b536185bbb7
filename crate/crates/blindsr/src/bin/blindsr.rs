//! Command-line front end: instance synthesis, solving, post-processing, and
//! experiment families. Exit codes: 0 success, 2 usage, 3 numerical failure,
//! 4 I/O or parse failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use blindsr::bench::{self, derive_seed, ExperimentSpec, Family};
use blindsr::error::{Error, Result};
use blindsr::lift::LiftShape;
use blindsr::linalg::{c64, read_cmx, write_cmx, CVector};
use blindsr::model::{
    add_noise, data_matrices, generate_instance, load_ground_truth, save_ground_truth,
    sense_forward, Dims, GroundTruth, InstanceRecipe, Measurement,
};
use blindsr::post::{locate_all, match_and_score, recover_coefficients};
use blindsr::solver::{run, run_vanilla, SolverConfig, SolverMode};

#[derive(Parser)]
#[command(name = "blindsr", version, about = "Blind super-resolution and demixing of point sources")]
struct Cli {
    /// Print per-iteration progress lines.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic instance: ground truth, bases, and measurement.
    Synth(SynthArgs),
    /// Recover the data matrices from a synthesized instance.
    Solve(SolveArgs),
    /// Extract spike locations and coefficient products from recovered data.
    Extract(ExtractArgs),
    /// Run a Monte-Carlo experiment family.
    Bench(BenchArgs),
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum RecipeArg {
    Random,
    Separated,
    Conditioned,
}

#[derive(Args)]
struct SynthArgs {
    /// Number of measurements.
    #[arg(long)]
    n: usize,
    /// Number of mixed signals.
    #[arg(long = "K")]
    k: usize,
    /// Subspace dimension of each point spread function.
    #[arg(long)]
    s: usize,
    /// Spikes per signal.
    #[arg(long)]
    r: usize,
    #[arg(long, value_enum, default_value = "random")]
    mode: RecipeArg,
    /// Condition number for --mode conditioned.
    #[arg(long)]
    kappa: Option<f64>,
    /// Add noise at this SNR in dB; omit for a clean measurement.
    #[arg(long)]
    snr: Option<f64>,
    #[arg(long, default_value = "0")]
    seed: u64,
    /// Output directory (created if missing).
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Scaled,
    Vanilla,
}

#[derive(Args)]
struct SolveArgs {
    /// Directory produced by `synth`.
    #[arg(long)]
    dir: PathBuf,
    /// Output directory; defaults to --dir.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "0.5")]
    eta: f64,
    #[arg(long, default_value = "150")]
    iters: usize,
    #[arg(long, default_value = "1e-4")]
    tol: f64,
    /// Factor rank; defaults to the instance's spike count r.
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long, value_enum, default_value = "scaled")]
    mode: ModeArg,
    /// Initialize from the weighted measurement D·y.
    #[arg(long)]
    weighted_init: bool,
}

#[derive(Args)]
struct ExtractArgs {
    /// Directory holding gt.json and the solver's xhat_<k>.cmx files.
    #[arg(long)]
    dir: PathBuf,
    /// Output directory; defaults to --dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Pseudospectrum grid size; defaults to 16·n.
    #[arg(long)]
    grid: Option<usize>,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum FamilyArg {
    PhaseSr,
    PhaseNk,
    Cond,
    Noise,
    End2end,
}

impl From<FamilyArg> for Family {
    fn from(f: FamilyArg) -> Family {
        match f {
            FamilyArg::PhaseSr => Family::PhaseSr,
            FamilyArg::PhaseNk => Family::PhaseNk,
            FamilyArg::Cond => Family::Cond,
            FamilyArg::Noise => Family::Noise,
            FamilyArg::End2end => Family::End2end,
        }
    }
}

#[derive(Args)]
struct BenchArgs {
    #[arg(value_enum)]
    family: FamilyArg,
    /// Experiment spec JSON ("exp v1"); flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Full-scale sweeps instead of desk scale.
    #[arg(long)]
    full: bool,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated condition numbers, e.g. 1,5,10,20.
    #[arg(long)]
    kappas: Option<String>,
    /// SNR sweep in dB: comma list or start:step:end, e.g. 0:10:60.
    #[arg(long)]
    snr: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long = "K")]
    k: Option<usize>,
    #[arg(long)]
    s: Option<usize>,
    #[arg(long)]
    r: Option<usize>,
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.display().to_string(),
        source: e,
    }
}

fn write_measurement_csv(path: &Path, m: &Measurement) -> Result<()> {
    let mut text = String::from("j,re,im\n");
    for (j, z) in m.y.iter().enumerate() {
        text.push_str(&format!("{j},{},{}\n", z.re, z.im));
    }
    std::fs::write(path, text).map_err(io_err(path))
}

fn read_measurement_csv(path: &Path) -> Result<CVector> {
    let name = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let parse = |line: usize, message: String| Error::Parse {
        file: name.clone(),
        line,
        message,
    };
    let mut values = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line != "j,re,im" {
                return Err(parse(1, format!("expected header 'j,re,im', got '{line}'")));
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(parse(i + 1, format!("expected 3 fields, got {}", fields.len())));
        }
        let j: usize = fields[0]
            .parse()
            .map_err(|_| parse(i + 1, format!("bad index '{}'", fields[0])))?;
        if j != values.len() {
            return Err(parse(i + 1, format!("out-of-order index {j}")));
        }
        let re: f64 = fields[1]
            .parse()
            .map_err(|_| parse(i + 1, format!("bad real part '{}'", fields[1])))?;
        let im: f64 = fields[2]
            .parse()
            .map_err(|_| parse(i + 1, format!("bad imaginary part '{}'", fields[2])))?;
        values.push(c64(re, im));
    }
    if values.is_empty() {
        return Err(parse(1, "no samples".into()));
    }
    Ok(CVector::from_vec(values))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("json serializes");
    std::fs::write(path, text).map_err(io_err(path))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let recipe = match args.mode {
        RecipeArg::Random => InstanceRecipe::random(),
        RecipeArg::Separated => InstanceRecipe::separated(),
        RecipeArg::Conditioned => InstanceRecipe::conditioned(args.kappa.unwrap_or(1.0)),
    };
    if args.kappa.is_some() && args.mode != RecipeArg::Conditioned {
        return Err(Error::Config("--kappa requires --mode conditioned".into()));
    }
    let dims = Dims {
        k: args.k,
        r: args.r,
        s: args.s,
        n: args.n,
    };
    ensure_dir(&args.out)?;
    let gt = generate_instance(&recipe, dims, args.seed)?;
    let y = sense_forward(&gt.bases, &data_matrices(&gt))?;
    let m = match args.snr {
        Some(snr) => add_noise(&y, snr, derive_seed(args.seed, &[1])),
        None => Measurement {
            y,
            snr_db: None,
            seed: args.seed,
        },
    };
    let mut files = save_ground_truth(&args.out, &gt)?;
    write_measurement_csv(&args.out.join("measurement.csv"), &m)?;
    files.push("measurement.csv".into());
    write_json(
        &args.out.join("manifest.json"),
        &serde_json::json!({
            "schema": "synth v1",
            "seed": args.seed,
            "dims": dims,
            "recipe": recipe,
            "snr_db": m.snr_db,
            "files": files,
        }),
    )?;
    println!("wrote {} files to {}", files.len() + 1, args.out.display());
    Ok(())
}

fn load_instance(dir: &Path) -> Result<(GroundTruth, CVector)> {
    let gt = load_ground_truth(&dir.join("gt.json"))?;
    let y = read_measurement_csv(&dir.join("measurement.csv"))?;
    if y.len() != gt.dims.n {
        return Err(Error::Dimension(format!(
            "measurement.csv has {} samples but gt.json says n = {}",
            y.len(),
            gt.dims.n
        )));
    }
    Ok((gt, y))
}

fn cmd_solve(args: &SolveArgs, verbose: bool) -> Result<()> {
    let (gt, y) = load_instance(&args.dir)?;
    let out = args.out.clone().unwrap_or_else(|| args.dir.clone());
    ensure_dir(&out)?;
    let config = SolverConfig {
        eta: args.eta,
        max_iters: args.iters,
        tol: args.tol,
        rank: args.rank.unwrap_or(gt.dims.r),
        mode: match args.mode {
            ModeArg::Scaled => SolverMode::Scaled,
            ModeArg::Vanilla => SolverMode::Vanilla,
        },
        init_weighted: args.weighted_init,
        ..SolverConfig::default()
    };
    let truth = data_matrices(&gt);
    let trace = match args.mode {
        ModeArg::Scaled => run(&y, &gt.bases, gt.dims, &config, Some(&truth))?,
        ModeArg::Vanilla => run_vanilla(&y, &gt.bases, gt.dims, &config, Some(&truth))?,
    };
    if verbose {
        for rec in &trace.iterations {
            println!("iter {:4}  rel_err {:.3e}  objective {:.3e}", rec.iter, rec.rel_err, rec.objective);
        }
    }
    std::fs::write(out.join("trace.csv"), trace.to_csv()).map_err(io_err(&out))?;
    for (k, x) in trace.xhat.iter().enumerate() {
        write_cmx(&out.join(format!("xhat_{k}.cmx")), x)?;
    }
    write_json(
        &out.join("summary.json"),
        &serde_json::json!({
            "schema": "solve v1",
            "mode": config.mode,
            "iterations": trace.iterations.len(),
            "converged": trace.converged,
            "final_rel_err": trace.final_rel_err(),
        }),
    )?;
    println!(
        "{} after {} iterations, relative error {:.3e}",
        if trace.converged { "converged" } else { "stopped" },
        trace.iterations.last().map_or(0, |rec| rec.iter),
        trace.final_rel_err()
    );
    Ok(())
}

fn cmd_extract(args: &ExtractArgs) -> Result<()> {
    let gt = load_ground_truth(&args.dir.join("gt.json"))?;
    let dims = gt.dims;
    let shape = LiftShape::balanced(dims.s, dims.n);
    if dims.r >= shape.n2 {
        return Err(Error::Config(format!(
            "r = {} spikes exceed the pencil width n2 = {}",
            dims.r, shape.n2
        )));
    }
    let xhats = (0..dims.k)
        .map(|k| read_cmx(&args.dir.join(format!("xhat_{k}.cmx"))))
        .collect::<Result<Vec<_>>>()?;
    let out = args.out.clone().unwrap_or_else(|| args.dir.clone());
    ensure_dir(&out)?;

    let grid = args.grid.unwrap_or(16 * dims.n);
    let locs = locate_all(&xhats, dims.r, grid)?;
    let y = read_measurement_csv(&args.dir.join("measurement.csv"))?;
    let coeffs = recover_coefficients(&locs.taus_hat, &gt.bases, &y)?;

    // Estimates in the gt v1 schema: products split into a positive amplitude
    // and a unit-norm coefficient vector.
    let est = GroundTruth {
        dims,
        seed: gt.seed,
        taus: locs.taus_hat.clone(),
        amps: coeffs
            .products
            .iter()
            .map(|row| row.iter().map(|p| c64(p.norm(), 0.0)).collect())
            .collect(),
        coeffs: coeffs
            .products
            .iter()
            .map(|row| {
                row.iter()
                    .map(|p| {
                        let norm = p.norm();
                        if norm > 0.0 { p / c64(norm, 0.0) } else { p.clone() }
                    })
                    .collect()
            })
            .collect(),
        bases: gt.bases.clone(),
    };
    let est_dir = out.join("estimate");
    ensure_dir(&est_dir)?;
    save_ground_truth(&est_dir, &est)?;

    let matches = match_and_score(&locs.taus_hat, &gt.taus)?;
    let mut rows = Vec::new();
    for (k, matched) in matches.iter().enumerate() {
        for p in 0..dims.r {
            let q = matched.permutation[p];
            let target = &gt.coeffs[k][q] * gt.amps[k][q];
            let prod_err = (&coeffs.products[k][p] - &target).norm() / target.norm();
            rows.push(serde_json::json!({
                "k": k,
                "p": p,
                "tau_hat": locs.taus_hat[k][p],
                "tau_true": gt.taus[k][q],
                "location_err": matched.errors[p],
                "product_rel_err": prod_err,
            }));
        }
    }
    write_json(
        &out.join("score.json"),
        &serde_json::json!({
            "schema": "score v1",
            "lstsq_residual": coeffs.residual,
            "total_location_err": matches.iter().map(|m| m.total).sum::<f64>(),
            "rows": rows,
        }),
    )?;
    println!("extracted {} locations, score written to {}", dims.k * dims.r, out.join("score.json").display());
    Ok(())
}

fn parse_f64_list(text: &str, flag: &str) -> Result<Vec<f64>> {
    let bad = || Error::Config(format!("cannot parse {flag} value '{text}'"));
    if let Some((start, rest)) = text.split_once(':') {
        // start:step:end sweep
        let (step, end) = rest.split_once(':').ok_or_else(bad)?;
        let start: f64 = start.parse().map_err(|_| bad())?;
        let step: f64 = step.parse().map_err(|_| bad())?;
        let end: f64 = end.parse().map_err(|_| bad())?;
        if step <= 0.0 || end < start {
            return Err(bad());
        }
        let mut values = Vec::new();
        let mut v = start;
        while v <= end + 1e-9 {
            values.push(v);
            v += step;
        }
        return Ok(values);
    }
    text.split(',')
        .map(|f| f.trim().parse::<f64>().map_err(|_| bad()))
        .collect()
}

fn cmd_bench(args: &BenchArgs) -> Result<()> {
    let family: Family = args.family.into();
    let mut spec = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(io_err(path))?;
            let doc: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
                file: path.display().to_string(),
                line: e.line(),
                message: e.to_string(),
            })?;
            if doc.get("schema").and_then(|s| s.as_str()) != Some("exp v1") {
                return Err(Error::Parse {
                    file: path.display().to_string(),
                    line: 1,
                    message: "expected schema 'exp v1'".into(),
                });
            }
            let spec: ExperimentSpec = serde_json::from_value(
                doc.get("spec").cloned().unwrap_or(doc.clone()),
            )
            .map_err(|e| Error::Parse {
                file: path.display().to_string(),
                line: 0,
                message: e.to_string(),
            })?;
            if spec.family != family {
                return Err(Error::Config(format!(
                    "config is for family {}, asked for {}",
                    spec.family.name(),
                    family.name()
                )));
            }
            spec
        }
        None => ExperimentSpec::default_for(family, args.full),
    };
    // flags win over the config file
    if let Some(t) = args.trials {
        spec.trials = t;
    }
    if let Some(seed) = args.seed {
        spec.seed0 = seed;
    }
    if let Some(kappas) = &args.kappas {
        spec.kappas = parse_f64_list(kappas, "--kappas")?;
    }
    if let Some(snr) = &args.snr {
        spec.snrs_db = parse_f64_list(snr, "--snr")?;
    }
    if let Some(n) = args.n {
        spec.dims.n = n;
    }
    if let Some(k) = args.k {
        spec.dims.k = k;
    }
    if let Some(s) = args.s {
        spec.dims.s = s;
    }
    if let Some(r) = args.r {
        spec.dims.r = r;
    }
    bench::run_and_emit(&spec, &args.out)?;
    println!(
        "{} results written to {}",
        family.name(),
        args.out.join(family.name()).display()
    );
    Ok(())
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("BLINDSR_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Solve(args) => cmd_solve(args, cli.verbose),
        Command::Extract(args) => cmd_extract(args),
        Command::Bench(args) => cmd_bench(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
