use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use octawidth::balance::{default_min_support, BalanceInstance};
use octawidth::blocks::{dual_spec, extremal_dual_vector, format_csv_vector, mixed_norm, parse_csv_vector};
use octawidth::gaussian::{
    check_correlation, check_ebound, check_s_inequality, measure_intersection_lower_bound, psi, random_ellipsoid,
    random_vector_set,
};
use octawidth::harness::{emit_report, load_configs, run_experiment, ExperimentId, Format, SolverKind};
use octawidth::rng::stream_rng;
use octawidth::widths::{
    b1_vertices, b1inf_vertices, deviation_from_subspace, exact_width_b1_l2, kolmogorov_upper_heuristic, load_vertices,
};
use octawidth::witness::{run_witness, verify_trace, WitnessParams, WitnessTrace};
use octawidth::{BlockStructure, BlockVector, Error, MixedNormSpec, Result, Subspace};

#[derive(Parser)]
#[command(name = "octawidth", version, about = "Mixed-norm widths of products of octahedra")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Write the result here instead of stdout.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<FormatArg>,
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => Format::Csv,
            FormatArg::Json => Format::Json,
        }
    }
}

#[derive(Args, Clone, Copy)]
struct Shape {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    m: usize,
}

impl Shape {
    fn structure(self) -> Result<BlockStructure> {
        BlockStructure::new(self.n, self.m)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Mixed norm of a vector (and optionally its extremal dual vector).
    Norm {
        #[command(flatten)]
        shape: Shape,
        /// Exponents as "p,q", e.g. "2,1" or "inf,1".
        #[arg(long)]
        norm: MixedNormSpec,
        /// Comma-separated coordinates.
        #[arg(long, conflicts_with = "file", allow_hyphen_values = true)]
        vector: Option<String>,
        #[arg(long)]
        file: Option<PathBuf>,
        #[arg(long)]
        dual: bool,
    },
    /// Signed balancing of a vector-set family.
    Balance {
        #[arg(long)]
        instance: Option<PathBuf>,
        /// Generate a random instance with this d instead of reading one.
        #[arg(long, conflicts_with = "instance")]
        random_d: Option<usize>,
        #[arg(long, default_value_t = 8)]
        random_m: usize,
        #[arg(long, value_enum, default_value = "random")]
        solver: SolverArg,
        #[arg(long)]
        min_support: Option<usize>,
        #[arg(long, default_value_t = 100_000)]
        trials: u64,
    },
    /// Gaussian measure checks on random bodies.
    Gaussian {
        #[arg(long, value_enum)]
        check: CheckArg,
        #[arg(long, default_value_t = 4)]
        d: usize,
        #[arg(long, default_value_t = 8)]
        m: usize,
        #[arg(long, default_value_t = 2.0)]
        t: f64,
        #[arg(long, default_value_t = 1_000_000)]
        samples: u64,
    },
    /// Builds a witness vector in a subspace.
    Witness {
        #[command(flatten)]
        shape: Shape,
        #[arg(long, conflicts_with = "random_dim")]
        subspace: Option<PathBuf>,
        #[arg(long)]
        random_dim: Option<usize>,
        #[arg(long, value_enum, default_value = "auto")]
        solver: SolverArg,
        #[arg(long, default_value_t = 100_000)]
        trials: u64,
        #[arg(long)]
        strict_steps: bool,
        /// Also save the (random) subspace used.
        #[arg(long)]
        save_subspace: Option<PathBuf>,
    },
    /// Re-checks a witness trace against its subspace.
    Verify {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        subspace: PathBuf,
    },
    /// Width values and estimates.
    Width {
        #[arg(long, value_enum)]
        set: SetArg,
        #[arg(long)]
        vertices: Option<PathBuf>,
        #[command(flatten)]
        shape: Shape,
        #[arg(long, default_value = "2,1")]
        target: MixedNormSpec,
        #[arg(long)]
        k: usize,
        #[arg(long, value_enum)]
        method: MethodArg,
        #[arg(long)]
        subspace: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        restarts: usize,
    },
    /// Runs experiment configs.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment to run when no config file is given.
    #[arg(long)]
    experiment: Option<String>,
    #[arg(long, value_delimiter = ',')]
    n: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    m: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    dims: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    t: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    samples: Option<Vec<u64>>,
    #[arg(long, value_delimiter = ',')]
    trials: Option<Vec<u64>>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long, value_delimiter = ',')]
    solvers: Option<Vec<String>>,
    #[arg(long)]
    strict_steps: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum SolverArg {
    Auto,
    Exhaustive,
    Random,
    Greedy,
}

impl From<SolverArg> for SolverKind {
    fn from(s: SolverArg) -> Self {
        match s {
            SolverArg::Auto => SolverKind::Auto,
            SolverArg::Exhaustive => SolverKind::Exhaustive,
            SolverArg::Random => SolverKind::Random,
            SolverArg::Greedy => SolverKind::Greedy,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum CheckArg {
    Psi,
    Ebound,
    SInequality,
    Correlation,
    Intersection,
}

#[derive(Clone, Copy, ValueEnum)]
enum SetArg {
    B1,
    B1inf,
    File,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Exact,
    Deviation,
    Heuristic,
}

struct Output<'a> {
    path: Option<&'a Path>,
}

impl Output<'_> {
    fn write_bytes(&self, bytes: &[u8]) -> Result<()> {
        match self.path {
            Some(p) => std::fs::write(p, bytes)?,
            None => std::io::stdout().lock().write_all(bytes)?,
        }
        Ok(())
    }

    fn json<T: Serialize>(&self, value: &T) -> Result<()> {
        let mut text = serde_json::to_vec_pretty(value)?;
        text.push(b'\n');
        self.write_bytes(&text)
    }
}

fn read_vector(vector: Option<String>, file: Option<PathBuf>) -> Result<Vec<f64>> {
    match (vector, file) {
        (Some(v), _) => parse_csv_vector(&v),
        (None, Some(f)) => {
            let text = std::fs::read_to_string(f)?;
            let line = text.lines().map(str::trim).find(|l| !l.is_empty() && !l.starts_with('#')).unwrap_or("");
            parse_csv_vector(line)
        }
        (None, None) => Err(Error::InvalidArgument("pass --vector or --file".into())),
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let seed = cli.seed.unwrap_or(0);
    let out = Output { path: cli.output.as_deref() };
    match cli.command {
        Command::Norm { shape, norm, vector, file, dual } => {
            let structure = shape.structure()?;
            let x = BlockVector::new(structure, read_vector(vector, file)?)?;
            let value = mixed_norm(&x, norm);
            let mut text = format!("{value}\n");
            if dual {
                let z = extremal_dual_vector(&x, norm)?;
                text.push_str(&format!("# dual {}\n{}\n", dual_spec(norm), format_csv_vector(z.coords())));
            }
            out.write_bytes(text.as_bytes())?;
        }
        Command::Balance { instance, random_d, random_m, solver, min_support, trials } => {
            let instance = match (instance, random_d) {
                (Some(path), _) => serde_json::from_str::<BalanceInstance>(&std::fs::read_to_string(path)?)?,
                (None, Some(d)) => BalanceInstance::random(&mut stream_rng(seed, 1), d, random_m, d)?,
                (None, None) => return Err(Error::InvalidArgument("pass --instance or --random-d".into())),
            };
            let min_support = min_support.unwrap_or_else(|| default_min_support(instance.d()));
            let result = SolverKind::from(solver).solver(trials, seed).solve(&instance, min_support)?;
            out.json(&result)?;
        }
        Command::Gaussian { check, d, m, t, samples } => {
            let mut rng = stream_rng(seed, 2);
            match check {
                CheckArg::Psi => out.json(&serde_json::json!({ "t": t, "psi": psi(t) }))?,
                CheckArg::Ebound => {
                    let set = random_vector_set(&mut rng, d, d + 1, 1.0);
                    out.json(&check_ebound(&set, d, samples, seed)?)?
                }
                CheckArg::SInequality => {
                    let body = random_ellipsoid(&mut rng, d);
                    out.json(&check_s_inequality(&body, t, d, samples, seed)?)?
                }
                CheckArg::Correlation => {
                    let (a, b) = (random_ellipsoid(&mut rng, d), random_ellipsoid(&mut rng, d));
                    out.json(&check_correlation(&a, &b, d, samples, seed)?)?
                }
                CheckArg::Intersection => {
                    let sets: Vec<_> = (0..m).map(|_| random_vector_set(&mut rng, d, d, 1.0)).collect();
                    out.json(&measure_intersection_lower_bound(&sets, t, d, samples, seed)?)?
                }
            }
        }
        Command::Witness { shape, subspace, random_dim, solver, trials, strict_steps, save_subspace } => {
            let structure = shape.structure()?;
            let l = match (subspace, random_dim) {
                (Some(path), _) => Subspace::load_csv(&path)?,
                (None, dim) => {
                    let dim = dim.unwrap_or(structure.dim() / 2);
                    Subspace::random(structure.dim(), dim, &mut stream_rng(seed, 0))
                }
            };
            if let Some(path) = save_subspace {
                l.save_csv(&path)?;
            }
            let mut params = if strict_steps { WitnessParams::strict(structure) } else { WitnessParams::default() };
            params.solver = SolverKind::from(solver).solver(trials, seed);
            let trace = run_witness(&l, structure, &params)?;
            for w in &trace.warnings {
                eprintln!("warning: {w}");
            }
            out.json(&trace)?;
        }
        Command::Verify { trace, subspace } => {
            let trace: WitnessTrace = serde_json::from_str(&std::fs::read_to_string(trace)?)?;
            let l = Subspace::load_csv(&subspace)?;
            let report = verify_trace(&trace, &l, trace.structure, &trace.params)?;
            out.json(&report)?;
            if !report.structural_pass {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Width { set, vertices, shape, target, k, method, subspace, restarts } => {
            let structure = shape.structure()?;
            let estimate = match method {
                MethodArg::Exact => {
                    if !matches!(set, SetArg::B1) || !target.p.is_two() || !target.q.is_two() {
                        return Err(Error::InvalidArgument("the exact value is only known for b1 into 2,2".into()));
                    }
                    exact_width_b1_l2(structure.dim(), k)?
                }
                MethodArg::Deviation | MethodArg::Heuristic => {
                    let verts = match set {
                        SetArg::B1 => b1_vertices(structure),
                        SetArg::B1inf => b1inf_vertices(structure)?,
                        SetArg::File => {
                            let path = vertices.ok_or_else(|| Error::InvalidArgument("--set file needs --vertices".into()))?;
                            load_vertices(&path, structure)?
                        }
                    };
                    if matches!(method, MethodArg::Deviation) {
                        let path = subspace.ok_or_else(|| Error::InvalidArgument("deviation needs --subspace".into()))?;
                        deviation_from_subspace(&verts, &Subspace::load_csv(&path)?, target)?
                    } else {
                        kolmogorov_upper_heuristic(&verts, structure, target, k, restarts, seed)?
                    }
                }
            };
            out.json(&estimate)?;
        }
        Command::Experiment(args) => return experiment(args, cli.config, cli.seed, cli.output, cli.format),
    }
    Ok(ExitCode::SUCCESS)
}

fn experiment(
    args: ExperimentArgs,
    config: Option<PathBuf>,
    seed: Option<u64>,
    output: Option<PathBuf>,
    format: Option<FormatArg>,
) -> Result<ExitCode> {
    let mut configs = match (&config, &args.experiment) {
        (Some(path), _) => load_configs(path)?,
        (None, Some(id)) => {
            let id: ExperimentId = serde_json::from_value(serde_json::Value::String(id.clone()))
                .map_err(|_| Error::Config(format!("unknown experiment {id:?}")))?;
            vec![octawidth::harness::ExperimentConfig::new(id)]
        }
        (None, None) => return Err(Error::Config("pass --config or --experiment".into())),
    };
    let solvers = match &args.solvers {
        Some(list) => Some(list.iter().map(|s| s.parse()).collect::<Result<Vec<SolverKind>>>().map_err(|e| Error::Config(e.to_string()))?),
        None => None,
    };
    for c in &mut configs {
        macro_rules! over {
            ($field:ident) => {
                if let Some(v) = &args.$field {
                    c.$field = Some(v.clone());
                }
            };
        }
        over!(n);
        over!(m);
        over!(dims);
        over!(t);
        over!(samples);
        over!(trials);
        over!(seeds);
        if let Some(s) = seed {
            c.seeds = Some(vec![s]);
        }
        if solvers.is_some() {
            c.solvers = solvers.clone();
        }
        if args.strict_steps {
            c.strict_steps = true;
        }
        if let Some(f) = format {
            c.format = Some(f.into());
        }
        if output.is_some() {
            c.output = output.clone();
        }
        c.validate()?;
    }
    let mut rows = Vec::new();
    for c in &configs {
        rows.extend(run_experiment(c)?);
    }
    let format = configs.first().and_then(|c| c.format).unwrap_or_default();
    let path = configs.first().and_then(|c| c.output.clone());
    let mut buf = Vec::new();
    emit_report(&rows, format, &mut buf)?;
    Output { path: path.as_deref() }.write_bytes(&buf)?;
    for r in rows.iter().filter(|r| r.is_error()) {
        eprintln!("cell {} failed: {}", r.cell, r.error.as_deref().unwrap_or(""));
    }
    Ok(if rows.iter().any(|r| r.is_error()) { ExitCode::from(1) } else { ExitCode::SUCCESS })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, Error::Config(_)) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
