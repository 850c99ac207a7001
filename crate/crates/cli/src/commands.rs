use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anova_rkhs::data::format_float;
use anova_rkhs::io::{write_json, write_pe_surface_csv, write_ridge_csv, PenaltyInfo};
use anova_rkhs::kernel::{KernelFamily, KernelSet, MarginalDistribution, MarginalSpec};
use anova_rkhs::select::{choose_kernel_mixed, group_weights, select, Choice, Procedure, TuningGrid, Validation};
use anova_rkhs::sensitivity::{model_omegas, sobol_indices, variance_empirical, variance_quadratic};
use anova_rkhs::sim::{run_benchmark, BenchmarkConfig, GFunction, KernelChoice, Triple};
use anova_rkhs::solver::fit;
use anova_rkhs::{Dataset, Error, GramSystem, Metamodel, ModelFile};

use crate::args::{BenchmarkArgs, FitArgs, GenerateArgs, Method, ModelArgs, PredictArgs, SobolArgs, TuneArgs};

/// A failed run: the library error plus the stage that raised it.
#[derive(Debug)]
pub struct Failure {
    pub module: &'static str,
    pub category: String,
    pub message: String,
}

impl Failure {
    pub fn new(module: &'static str, category: &str, message: impl Into<String>) -> Self {
        Failure {
            module,
            category: category.into(),
            message: message.into(),
        }
    }
}

pub type Outcome = Result<(), Failure>;

pub fn at(module: &'static str) -> impl Fn(Error) -> Failure {
    move |e| Failure::new(module, e.category(), e.to_string())
}

/// Like [`at`], prefixing the message with the file it concerns.
fn at_path<'a>(module: &'static str, path: &'a Path) -> impl Fn(Error) -> Failure + 'a {
    move |e| Failure::new(module, e.category(), format!("{}: {e}", path.display()))
}

fn out_file(out: &Path, name: &str) -> PathBuf {
    out.join(name)
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| at("io")(Error::from(e)))
}

fn load_marginals(path: &Path) -> Result<Vec<MarginalDistribution>, Failure> {
    let file = File::open(path).map_err(|e| at_path("kernel", path)(e.into()))?;
    let specs: Vec<MarginalSpec> =
        serde_json::from_reader(std::io::BufReader::new(file)).map_err(|e| at_path("kernel", path)(e.into()))?;
    specs
        .iter()
        .map(MarginalDistribution::from_spec)
        .collect::<anova_rkhs::Result<Vec<_>>>()
        .map_err(at("kernel"))
}

/// Marginals from `--marginals`, or `None` for the unit-uniform default.
fn marginals(model: &ModelArgs) -> Result<Option<Vec<MarginalDistribution>>, Failure> {
    model.marginals.as_deref().map(load_marginals).transpose()
}

fn load_data(path: &Path, marginals: Option<&[MarginalDistribution]>) -> Result<Dataset, Failure> {
    let supports: Option<Vec<_>> = marginals.map(|m| m.iter().map(MarginalDistribution::support).collect());
    Dataset::load_csv(path, supports.as_deref()).map_err(at_path("data", path))
}

fn kernel_set(
    family: KernelFamily,
    marginals: Option<&[MarginalDistribution]>,
    d: usize,
) -> Result<Arc<KernelSet>, Failure> {
    let set = match marginals {
        Some(m) => {
            if m.len() != d {
                return Err(Failure::new(
                    "kernel",
                    "validation",
                    format!("{} marginals for {d} inputs", m.len()),
                ));
            }
            KernelSet::new(family, m.to_vec())
        }
        None => KernelSet::unit_uniform(family, d),
    };
    set.map(Arc::new).map_err(at("kernel"))
}

fn single_family(choice: KernelChoice) -> Result<KernelFamily, Failure> {
    match choice.families().as_slice() {
        [f] => Ok(*f),
        _ => Err(Failure::new("cli", "argument", "fit needs a single kernel family, not mixed")),
    }
}

fn support_label(model: &Metamodel) -> String {
    let s: Vec<String> = model.support().iter().map(ToString::to_string).collect();
    if s.is_empty() {
        "(intercept only)".into()
    } else {
        s.join(" ")
    }
}

pub fn run_fit(args: &FitArgs, out: &Path) -> Outcome {
    let m = marginals(&args.model)?;
    let data = load_data(&args.input, m.as_deref())?;
    let family = single_family(args.model.kernel)?;
    let kernels = kernel_set(family, m.as_deref(), data.dim())?;
    let settings = args.model.settings(Procedure::Gs);
    let groups = settings.groups(data.dim()).map_err(at("gram"))?;
    let sys = GramSystem::build(&data.x, &kernels, &groups, settings.jitter).map_err(at("gram"))?;
    let (omega, zeta) = group_weights(settings.weights, &sys).map_err(at("select"))?;
    let grid = TuningGrid::build(&data.y, &sys, omega, zeta, &settings.grid).map_err(at("select"))?;
    let mu = args.mu.unwrap_or(args.mu_fraction * grid.mu_max);
    let weights = grid.penalties(mu, args.gamma);
    let result = fit(&data.y, sys.bundles(), &weights, &settings.fit, None).map_err(at("solver"))?;
    let model = Metamodel::from_state(&result.state, kernels, Arc::new(data.x.clone())).map_err(at("select"))?;

    let mut file = ModelFile::from_model(&model);
    file.selection = Some(Choice::Penalty { mu, gamma: args.gamma });
    file.penalties = Some(PenaltyInfo {
        mu,
        gamma: args.gamma,
        mu_prime: grid.groups.iter().cloned().zip(weights.mu.iter().copied()).collect(),
        gamma_prime: grid.groups.iter().cloned().zip(weights.gamma.iter().copied()).collect(),
    });
    write_json(out_file(out, "model.json"), &file).map_err(at("io"))?;
    println!(
        "mu = {mu:.6e} (mu_max = {:.6e}), gamma = {:.6e}: objective {:.6e} after {} sweeps{}",
        grid.mu_max,
        args.gamma,
        result.objective(),
        result.sweeps,
        if result.converged { "" } else { " (not converged)" }
    );
    println!("support: {}", support_label(&model));
    Ok(())
}

pub fn run_tune(args: &TuneArgs, out: &Path) -> Outcome {
    let m = marginals(&args.model)?;
    let data = load_data(&args.input, m.as_deref())?;
    let validation = match &args.test_input {
        Some(path) => Validation::TestSet(load_data(path, m.as_deref())?),
        None => Validation::CrossValidation {
            folds: args.cv,
            seed: args.seed,
        },
    };
    let settings = args.model.settings(args.procedure);
    let families = args.model.kernel.families();
    let sets = families
        .iter()
        .map(|&f| kernel_set(f, m.as_deref(), data.dim()))
        .collect::<Result<Vec<_>, _>>()?;
    let result = if sets.len() == 1 {
        select(&data, &validation, sets[0].clone(), &settings)
    } else {
        choose_kernel_mixed(&data, &validation, &sets, &settings)
    }
    .map_err(at("select"))?;

    write_json(out_file(out, "model.json"), &ModelFile::from_selection(&result, &validation)).map_err(at("io"))?;
    write_pe_surface_csv(&result, create(&out_file(out, "pe_surface.csv"))?).map_err(at("io"))?;
    if result.procedure == Procedure::Rdg {
        write_ridge_csv(&result, create(&out_file(out, "ridge.csv"))?).map_err(at("io"))?;
    }
    for w in &result.warnings {
        eprintln!("warning: {w}");
    }
    let chosen = match &result.chosen {
        Choice::Penalty { mu, gamma } => format!("mu = {mu:.6e}, gamma = {gamma:.6e}"),
        Choice::Ridge { lambda, .. } => format!("lambda = {lambda:.6e}"),
        Choice::InterceptOnly => "intercept only".into(),
    };
    println!(
        "{} with {} kernel: {chosen}, prediction error {:.6e}",
        result.procedure,
        result.kernel,
        result.chosen_pe
    );
    println!("support: {}", support_label(&result.model));
    Ok(())
}

pub fn run_sobol(args: &SobolArgs, out: &Path) -> Outcome {
    let file = ModelFile::load(&args.model).map_err(at_path("io", &args.model))?;
    let model = file.to_model().map_err(at_path("io", &args.model))?;
    let variances = match args.method {
        Method::Quadratic => {
            let omegas = model_omegas(&model).map_err(at("gram"))?;
            variance_quadratic(&model, &omegas)
        }
        Method::Empirical => variance_empirical(&model, &model.kernels().sample_design(args.samples, args.seed)),
    }
    .map_err(at("sensitivity"))?;
    let report = sobol_indices(&variances, model.dim()).map_err(at("sensitivity"))?;
    write_json(out_file(out, "sobol.json"), &report).map_err(at("io"))?;
    for (g, s) in &report.indices {
        println!("S_{g:<8} {s:.6}");
    }
    Ok(())
}

pub fn run_predict(args: &PredictArgs, out: &Path) -> Outcome {
    let file = ModelFile::load(&args.model).map_err(at_path("io", &args.model))?;
    let model = file.to_model().map_err(at_path("io", &args.model))?;
    let supports: Vec<_> = model.kernels().kernels().iter().map(|k| k.marginal().support()).collect();
    let data = Dataset::load_csv(&args.input, Some(&supports)).map_err(at_path("data", &args.input))?;
    let pred = model.predict(&data.x).map_err(at("select"))?;
    let mut w = csv::Writer::from_writer(create(&out_file(out, "predictions.csv"))?);
    let io = |e: csv::Error| at("io")(e.into());
    w.write_record(["y", "prediction"]).map_err(io)?;
    for (y, p) in data.y.iter().zip(pred.iter()) {
        w.write_record([format_float(*y), format_float(*p)]).map_err(io)?;
    }
    w.flush().map_err(|e| at("io")(e.into()))?;
    Ok(())
}

fn g_function(coefficients: &Option<Vec<f64>>) -> Result<GFunction, Failure> {
    match coefficients {
        Some(c) => GFunction::new(c.clone()).map_err(at("sim")),
        None => Ok(GFunction::standard()),
    }
}

pub fn run_benchmark_cmd(args: &BenchmarkArgs, out: &Path) -> Outcome {
    if args.model.marginals.is_some() {
        return Err(Failure::new("cli", "argument", "the benchmark samples uniform inputs; --marginals is not supported"));
    }
    let spec = g_function(&args.coefficients)?;
    let mut config = BenchmarkConfig::new(args.n, args.sigma, args.model.kernel, args.seed, args.replications);
    config.settings = args.model.settings(args.procedure.unwrap_or(Procedure::Rdg));
    if let Some(p) = args.procedure {
        config.procedures = vec![p];
    }
    let report = run_benchmark(&spec, &config).map_err(at("sim"))?;
    write_json(out_file(out, "benchmark.json"), &report).map_err(at("io"))?;
    report
        .write_csv(create(&out_file(out, "benchmark.csv"))?)
        .map_err(at("io"))?;
    for s in &report.summaries {
        println!(
            "{}: R2 {:.4} ({:.4})  ER {:.3e}  GE {:.3e}  completed {}/{}",
            s.procedure, s.r2.mean, s.r2.sd, s.er.mean, s.ge.mean, s.completed, args.replications
        );
    }
    for f in &report.failures {
        eprintln!("replication {} failed: {}", f.rep, f.message);
    }
    Ok(())
}

pub fn run_generate(args: &GenerateArgs, out: &Path) -> Outcome {
    let spec = g_function(&args.coefficients)?;
    if args.n < 2 {
        return Err(Failure::new("sim", "argument", "n must be at least 2"));
    }
    if !(args.sigma >= 0.0) || !args.sigma.is_finite() {
        return Err(Failure::new("sim", "argument", "sigma must be finite and nonnegative"));
    }
    let t = Triple::simulate(&spec, args.n, args.sigma, args.seed);
    for (name, set) in [("train.csv", &t.train), ("test.csv", &t.test), ("perf.csv", &t.perf)] {
        let mut w = create(&out_file(out, name))?;
        set.to_csv_writer(&mut w).map_err(at("io"))?;
        w.flush().map_err(|e| at("io")(e.into()))?;
    }
    println!("wrote train.csv, test.csv and perf.csv ({} rows each) to {}", args.n, out.display());
    Ok(())
}

pub fn ensure_dir(out: &Path) -> Outcome {
    fs::create_dir_all(out).map_err(|e| at("io")(e.into()))
}
