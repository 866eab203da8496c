use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use survstack::experiments::{ExperimentConfig, Method};
use survstack::simgen::{ModelKind, SimConfig};
use survstack::stacker::StackForm;
use survstack::survdata::ColumnMapping;
use survstack_cli::{error_json, replay, run, Command, ExperimentSpec};

#[derive(Parser)]
#[command(name = "survstack", version, about = "Survival analysis by stacking risk sets")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a dataset from a simulation design.
    Simulate(Common),
    /// Fit Cox and/or stacked logistic models to a CSV or simulated data.
    Fit(Common),
    /// Write the stacked dataset.
    Stack(Common),
    /// Paired Cox and stacked-logistic coefficients over replicates.
    CompareCoefficients(Common),
    /// L1 paths of both models on a shared lambda grid.
    ComparePaths(Common),
    /// Estimated survival curves against the true curve.
    Curve(Common),
    /// Concordance index of each method on fresh test subjects.
    Auc(Common),
    /// Exact versus approximate per-risk-set intercepts.
    VerifyEquivalence(Common),
    /// Rerun the configuration recorded in a manifest.
    Replay {
        manifest: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Model1,
    Model2,
    TimeVarying,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormArg {
    Indicator,
    Centered,
}

#[derive(Args)]
struct Common {
    #[arg(long, default_value_t = 2024)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    reps: usize,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Survival CSV (fit, stack, verify-equivalence); simulated when absent.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, default_value = "time")]
    time_col: String,
    #[arg(long, default_value = "status")]
    status_col: String,
    /// Covariate columns, comma separated; default all others.
    #[arg(long, value_delimiter = ',')]
    covariate_cols: Option<Vec<String>>,

    #[arg(long, value_enum, default_value = "model1")]
    model: ModelArg,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    beta: Option<Vec<f64>>,
    #[arg(long)]
    rho_base: Option<f64>,
    #[arg(long)]
    t_max: Option<f64>,
    #[arg(long)]
    step_sd: Option<f64>,

    /// Comma separated: cox, stack-logistic, stack-ls, stack-rf, stack-gbm, stack-mlp, null.
    #[arg(long, value_delimiter = ',', value_parser = parse_method)]
    methods: Option<Vec<Method>>,
    #[arg(long, default_value_t = 20)]
    n_test: usize,
    #[arg(long, default_value_t = 1)]
    n_eval: usize,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    x_new: Option<Vec<f64>>,
    #[arg(long, value_enum, default_value = "indicator")]
    form: FormArg,
    /// Also fit L1 paths in `fit`.
    #[arg(long)]
    l1_path: bool,

    #[arg(long)]
    ls_ridge: Option<f64>,
    #[arg(long)]
    rf_trees: Option<usize>,
    #[arg(long)]
    rf_depth: Option<usize>,
    #[arg(long)]
    rf_min_leaf: Option<usize>,
    #[arg(long)]
    rf_mtry: Option<usize>,
    #[arg(long)]
    gbm_trees: Option<usize>,
    #[arg(long)]
    gbm_depth: Option<usize>,
    #[arg(long)]
    gbm_shrinkage: Option<f64>,
    #[arg(long)]
    gbm_min_leaf: Option<usize>,
    #[arg(long)]
    gbm_subsample: Option<f64>,
    #[arg(long)]
    mlp_hidden: Option<usize>,
    #[arg(long)]
    mlp_epochs: Option<usize>,
    #[arg(long)]
    mlp_learning_rate: Option<f64>,
}

fn set<T>(target: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *target = v;
    }
}

fn parse_method(s: &str) -> Result<Method, String> {
    Method::parse(s).map_err(|e| e.to_string())
}

impl Common {
    fn into_spec(self, command: Command) -> survstack::Result<ExperimentSpec> {
        let model = match self.model {
            ModelArg::Model1 => ModelKind::Model1,
            ModelArg::Model2 => ModelKind::Model2,
            ModelArg::TimeVarying => ModelKind::TimeVarying,
        };
        let mut sim = SimConfig::for_model(model, self.seed);
        set(&mut sim.n, self.n);
        if let Some(p) = self.p {
            sim.p = p;
            if self.beta.is_none() {
                sim.beta.resize(p, 0.0);
            }
        }
        set(&mut sim.beta, self.beta);
        set(&mut sim.rho_base, self.rho_base);
        set(&mut sim.t_max, self.t_max);
        set(&mut sim.step_sd, self.step_sd);

        let mut exp = ExperimentConfig::new(sim);
        exp.seed = self.seed;
        exp.reps = self.reps;
        exp.n_test = self.n_test;
        exp.n_eval = self.n_eval;
        exp.x_new = self.x_new;
        if let Some(methods) = self.methods {
            exp.methods = methods;
        }
        let l = &mut exp.learners;
        set(&mut l.least_squares.ridge_epsilon, self.ls_ridge);
        set(&mut l.random_forest.n_trees, self.rf_trees);
        set(&mut l.random_forest.max_depth, self.rf_depth);
        set(&mut l.random_forest.min_leaf, self.rf_min_leaf);
        if self.rf_mtry.is_some() {
            l.random_forest.mtry = self.rf_mtry;
        }
        set(&mut l.gbm.n_trees, self.gbm_trees);
        set(&mut l.gbm.depth, self.gbm_depth);
        set(&mut l.gbm.shrinkage, self.gbm_shrinkage);
        set(&mut l.gbm.min_leaf, self.gbm_min_leaf);
        set(&mut l.gbm.subsample, self.gbm_subsample);
        set(&mut l.mlp.hidden_units, self.mlp_hidden);
        set(&mut l.mlp.epochs, self.mlp_epochs);
        set(&mut l.mlp.learning_rate, self.mlp_learning_rate);

        Ok(ExperimentSpec {
            command,
            input: self.input,
            columns: ColumnMapping {
                time: self.time_col,
                status: self.status_col,
                covariates: self.covariate_cols,
            },
            out_dir: self.out_dir,
            experiment: exp,
            form: match self.form {
                FormArg::Indicator => StackForm::Indicator,
                FormArg::Centered => StackForm::Centered,
            },
            l1_path: self.l1_path,
        })
    }
}

fn execute(cmd: Cmd) -> survstack::Result<survstack_cli::Manifest> {
    let (command, common) = match cmd {
        Cmd::Replay { manifest, out_dir } => return replay(&manifest, out_dir),
        Cmd::Simulate(c) => (Command::Simulate, c),
        Cmd::Fit(c) => (Command::Fit, c),
        Cmd::Stack(c) => (Command::Stack, c),
        Cmd::CompareCoefficients(c) => (Command::CompareCoefficients, c),
        Cmd::ComparePaths(c) => (Command::ComparePaths, c),
        Cmd::Curve(c) => (Command::Curve, c),
        Cmd::Auc(c) => (Command::Auc, c),
        Cmd::VerifyEquivalence(c) => (Command::VerifyEquivalence, c),
    };
    run(&common.into_spec(command)?)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", error_json("usage", e.to_string().trim_end()));
            return ExitCode::from(2);
        }
    };
    match execute(cli.command) {
        Ok(manifest) => {
            for f in &manifest.outputs {
                println!("{}", manifest.spec.out_dir.join(&f.file).display());
            }
            println!("{}", manifest.spec.out_dir.join(survstack_cli::MANIFEST_FILE).display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", error_json(e.kind(), &e.to_string()));
            ExitCode::FAILURE
        }
    }
}
