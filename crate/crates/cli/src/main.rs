use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use arealreg::bayes::PosteriorSamples;
use arealreg::filtering::{default_screen_size, q0_stepwise, ttest_select, ttest_stepwise};
use arealreg::study::{
    fit_model, generate_covariates, run_study, sample_posterior, simulate_replicate, summarize_posterior, FitSettings, ModelContext,
    ReplicateRecord, StudyConfig, StudyModel,
};
use arealreg::{ArealGraph, Error, Method, MoranBasis};
use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;

const EXIT_VALIDATION: u8 = 2;
const EXIT_FIT: u8 = 3;

#[derive(Parser)]
#[command(name = "arealreg", version, about = "Regression for binary areal data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one replicate of the confounded lattice design.
    Simulate {
        #[arg(long)]
        rows: usize,
        #[arg(long)]
        cols: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write the rook adjacency as an edge list.
        #[arg(long)]
        graph_out: Option<PathBuf>,
    },
    /// Fit one model and write the result as JSON.
    Fit {
        #[arg(long, value_enum)]
        model: ModelArg,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        /// Basis size for rsr and bsf.
        #[arg(long)]
        q: Option<usize>,
        /// Widen rsr intervals with the pseudo-inverse adjustment.
        #[arg(long)]
        adjust: bool,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        columns: Columns,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        /// Sampler iterations (car, rsr, bsf).
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        burn_in: Option<usize>,
        /// Simulated datasets for autologistic and copcar intervals.
        #[arg(long)]
        bootstrap: Option<usize>,
        /// Directory to keep posterior draws in.
        #[arg(long)]
        samples_dir: Option<PathBuf>,
    },
    /// Leading Moran eigenvectors residual to a design.
    Eigs {
        #[arg(long)]
        graph: PathBuf,
        /// Numeric CSV with a header; defaults to an intercept column.
        #[arg(long)]
        design: Option<PathBuf>,
        #[arg(long)]
        q: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Choose spatial-filter eigenvectors for a binary response.
    Select {
        #[arg(long, value_enum)]
        rule: RuleArg,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        #[command(flatten)]
        columns: Columns,
        #[arg(long, default_value_t = 0.1)]
        alpha: f64,
        #[arg(long, default_value_t = 0.2)]
        enter_p: f64,
        /// Leading columns screened by the t-test rules.
        #[arg(long)]
        screen: Option<usize>,
        /// Cap on the eigenbasis size; defaults to n - 1.
        #[arg(long)]
        max_q: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the replication study and write the summary table.
    Study {
        #[arg(long, required_unless_present = "preset", conflicts_with = "preset")]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        preset: Option<PresetArg>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        surfaces_dir: Option<PathBuf>,
        /// Per-replicate estimates and intervals.
        #[arg(long)]
        records: Option<PathBuf>,
        /// Print the resolved configuration as JSON and exit.
        #[arg(long)]
        print_config: bool,
    },
}

#[derive(clap::Args)]
struct Columns {
    #[arg(long, default_value = "z")]
    response: String,
    /// Comma-separated covariate columns; an intercept is always added.
    #[arg(long, default_value = "x1", value_delimiter = ',')]
    covariates: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Logistic,
    Autologistic,
    Copcar,
    Car,
    Rsr,
    Bsf,
}

#[derive(Clone, Copy, ValueEnum)]
enum RuleArg {
    Q0,
    Ttest,
    Stepwise,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Desk,
    Full,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_validation() || matches!(e, Error::Io(_) | Error::Csv(_) | Error::Json(_)) {
        EXIT_VALIDATION
    } else {
        EXIT_FIT
    }
}

fn run(cmd: Command) -> arealreg::Result<()> {
    match cmd {
        Command::Simulate {
            rows,
            cols,
            seed,
            out,
            graph_out,
        } => {
            let cov = generate_covariates(rows, cols)?;
            let data = simulate_replicate(&cov, seed);
            data.save_csv(&out)?;
            if let Some(g) = graph_out {
                cov.graph().save_edge_list(g)?;
            }
            Ok(())
        }
        Command::Fit {
            model,
            data,
            graph,
            q,
            adjust,
            out,
            columns,
            seed,
            level,
            iterations,
            burn_in,
            bootstrap,
            samples_dir,
        } => {
            let graph = ArealGraph::read_edge_list(graph)?;
            let table = Table::read(&data)?;
            let (z, x) = table.response_and_design(&columns, graph.n())?;
            let model = study_model(model, q, adjust)?;
            let mut settings = FitSettings {
                level,
                ..FitSettings::default()
            };
            if let Some(b) = bootstrap {
                settings.autologistic_b = b;
                settings.copcar_bootstrap = b;
            }
            for m in [&mut settings.basis_mcmc, &mut settings.car_mcmc] {
                if let Some(it) = iterations {
                    m.iterations = it;
                }
                if let Some(b) = burn_in {
                    m.burn_in = b;
                }
            }
            let ctx = ModelContext::new(&graph, &x, &[model])?;
            let is_mixed = matches!(model.method, Method::Car | Method::Rsr | Method::RsrAdjusted | Method::Bsf);
            let fit = match samples_dir {
                Some(dir) if is_mixed => {
                    let s: PosteriorSamples = sample_posterior(&model, &z, &ctx, &settings, seed)?;
                    s.save_dir(&dir)?;
                    summarize_posterior(&model, &s, &ctx, level, seed)?
                }
                Some(_) => return Err(Error::InvalidArgument("--samples-dir applies to car, rsr and bsf only".into())),
                None => fit_model(&model, &z, &ctx, &settings, seed)?,
            };
            for w in &fit.warnings {
                eprintln!("warning: {w}");
            }
            fit.save_json(out)
        }
        Command::Eigs { graph, design, q, out } => {
            let graph = ArealGraph::read_edge_list(graph)?;
            let x = match design {
                Some(p) => Table::read(&p)?.matrix(graph.n())?,
                None => DMatrix::from_element(graph.n(), 1, 1.0),
            };
            MoranBasis::new(&graph, &x, q)?.save_csv(out)
        }
        Command::Select {
            rule,
            data,
            graph,
            columns,
            alpha,
            enter_p,
            screen,
            max_q,
            out,
        } => {
            let graph = ArealGraph::read_edge_list(graph)?;
            let table = Table::read(&data)?;
            let (z, x) = table.response_and_design(&columns, graph.n())?;
            let n = graph.n();
            if n < 2 {
                return Err(Error::InvalidArgument("selection needs at least two areal units".into()));
            }
            let q = max_q.unwrap_or(n - 1).min(n - 1);
            let basis = MoranBasis::intercept_only(&graph, q)?;
            let screen = screen.unwrap_or_else(|| default_screen_size(&basis)).min(basis.q);
            let result = match rule {
                RuleArg::Q0 => q0_stepwise(&graph, &z, &x, &basis, enter_p)?,
                RuleArg::Ttest => ttest_select(&basis, &z, alpha, screen)?,
                RuleArg::Stepwise => ttest_stepwise(&z, &x, &basis, alpha, screen, enter_p)?,
            };
            std::fs::write(out, result.to_json()?)?;
            Ok(())
        }
        Command::Study {
            config,
            preset,
            out,
            surfaces_dir,
            records,
            print_config,
        } => {
            let config = match (config, preset) {
                (Some(p), _) => StudyConfig::load(p)?,
                (None, Some(PresetArg::Full)) => StudyConfig::full(),
                (None, _) => StudyConfig::desk(),
            };
            config.validate()?;
            if print_config {
                println!("{}", serde_json::to_string_pretty(&config)?);
                return Ok(());
            }
            let total = config.replicates;
            let progress = move |r: usize, recs: &[ReplicateRecord]| {
                let parts: Vec<String> = recs
                    .iter()
                    .map(|rec| match rec.estimate {
                        Some(b) => format!("{}={b:.2}", rec.model),
                        None => format!("{}=failed", rec.model),
                    })
                    .collect();
                eprintln!("replicate {}/{total}: {}", r + 1, parts.join(" "));
            };
            let report = run_study(&config, surfaces_dir.as_deref(), Some(&progress))?;
            for (model, count) in &report.failures {
                eprintln!("warning: {model} failed on {count} replicate(s)");
            }
            report.save_csv(&out)?;
            if let Some(p) = records {
                report.save_records_csv(p)?;
            }
            Ok(())
        }
    }
}

fn study_model(model: ModelArg, q: Option<usize>, adjust: bool) -> arealreg::Result<StudyModel> {
    let method = match (model, adjust) {
        (ModelArg::Rsr, true) => Method::RsrAdjusted,
        (_, true) => return Err(Error::InvalidArgument("--adjust applies to rsr only".into())),
        (ModelArg::Logistic, _) => Method::Logistic,
        (ModelArg::Autologistic, _) => Method::Autologistic,
        (ModelArg::Copcar, _) => Method::Copcar,
        (ModelArg::Car, _) => Method::Car,
        (ModelArg::Rsr, _) => Method::Rsr,
        (ModelArg::Bsf, _) => Method::Bsf,
    };
    Ok(StudyModel { method, q })
}

/// Numeric CSV with a header row, held column-wise.
struct Table {
    names: Vec<String>,
    columns: HashMap<String, Vec<f64>>,
    rows: usize,
}

impl Table {
    fn read(path: &Path) -> arealreg::Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let names: Vec<String> = r.headers()?.iter().map(|h| h.trim().to_string()).collect();
        let mut cols: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            for (j, field) in rec.iter().enumerate() {
                let v: f64 = field.trim().parse().map_err(|_| {
                    Error::Parse(format!("{}: row {} column {}: not a number: {field:?}", path.display(), line + 1, names[j]))
                })?;
                cols[j].push(v);
            }
        }
        let rows = cols.first().map_or(0, Vec::len);
        Ok(Self {
            columns: names.iter().cloned().zip(cols).collect(),
            names,
            rows,
        })
    }

    fn column(&self, name: &str) -> arealreg::Result<&[f64]> {
        self.columns
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::InvalidArgument(format!("no column named {name:?}")))
    }

    fn check_rows(&self, n: usize) -> arealreg::Result<()> {
        if self.rows != n {
            return Err(Error::Dimension(format!("table has {} rows but the graph has {n} vertices", self.rows)));
        }
        Ok(())
    }

    fn matrix(&self, n: usize) -> arealreg::Result<DMatrix<f64>> {
        self.check_rows(n)?;
        let mut m = DMatrix::zeros(n, self.names.len());
        for (j, name) in self.names.iter().enumerate() {
            m.column_mut(j).copy_from_slice(&self.columns[name]);
        }
        Ok(m)
    }

    fn response_and_design(&self, cols: &Columns, n: usize) -> arealreg::Result<(Vec<f64>, DMatrix<f64>)> {
        self.check_rows(n)?;
        let z = self.column(&cols.response)?.to_vec();
        let covs: Vec<&String> = cols.covariates.iter().filter(|c| !c.is_empty()).collect();
        let mut x = DMatrix::from_element(n, covs.len() + 1, 1.0);
        for (j, c) in covs.iter().enumerate() {
            x.column_mut(j + 1).copy_from_slice(self.column(c)?);
        }
        Ok((z, x))
    }
}
