//! `certmon`: simulate datasets, calibrate monitors, certify and report.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use certmon::benchmark::{generate_dataset, CrossroadConfig, Dataset, PredictorStub, Split, SplitCounts, StubMode};
use certmon::conformal::{
    calibrate, estimate_sigma, observer_calibrate, CalibratedMonitor, Level, MonitorKind, ScoreConfig, Scope,
};
use certmon::fragment::BasisSpec;
use certmon::logic::Formula;
use certmon::monitors::run_episode;
use certmon::report::{evaluate, horizon_sweep, write_report};
use certmon::{Error, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "certmon", version, about = "Certified runtime monitoring of past-time STL")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a crossroad dataset with train, calib and test splits.
    Simulate {
        /// Simulator settings (key = value); defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Episode counts as TRAIN,CALIB,TEST.
        #[arg(long, default_value = "100,200,200")]
        counts: String,
        /// Overrides the seed from the config file.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Calibrate a monitor on the calib split and save it with its score cache.
    Calibrate {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum)]
        monitor: MonitorArg,
        #[arg(long, default_value = "2", value_parser = ["1", "2"])]
        level: String,
        #[arg(long, default_value_t = 0.1)]
        alpha: f64,
        /// Scoring scope; `active` when a formula is given, `fragment` otherwise.
        #[arg(long, value_enum)]
        scope: Option<ScopeArg>,
        /// Formula to calibrate for (required by `observer` and `--scope active`).
        #[arg(long)]
        formula: Option<String>,
        /// Predictor noise settings (key = value).
        #[arg(long)]
        noise: Option<PathBuf>,
        /// Coordinate scaling: `unit` or the median overestimation on the train split.
        #[arg(long, value_enum, default_value = "unit")]
        sigma: SigmaArg,
        /// Seed for Level-2 time sampling.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stream a split through a calibrated monitor and write per-step verdicts.
    Certify {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Formulas to certify; the model's own formula when omitted.
        #[arg(long)]
        formula: Vec<String>,
        /// Line-delimited JSON verdicts.
        #[arg(long)]
        out: PathBuf,
        /// Also write the verdicts as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Evaluate monitors on the test split and emit metrics and a horizon sweep.
    Report {
        /// Comma-separated model files.
        #[arg(long, value_delimiter = ',', required = true)]
        models: Vec<PathBuf>,
        #[arg(long)]
        dataset: PathBuf,
        /// One formula per line; `#` starts a comment.
        #[arg(long)]
        formulas: PathBuf,
        /// Horizons K of the G[0,K] sweep.
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16")]
        sweep: Vec<usize>,
        /// Predicate of the sweep family.
        #[arg(long, default_value = "p_f")]
        sweep_predicate: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MonitorArg {
    Semantic,
    Rolling,
    Observer,
}

impl From<MonitorArg> for MonitorKind {
    fn from(m: MonitorArg) -> Self {
        match m {
            MonitorArg::Semantic => MonitorKind::Semantic,
            MonitorArg::Rolling => MonitorKind::Rolling,
            MonitorArg::Observer => MonitorKind::Observer,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ScopeArg {
    Fragment,
    Active,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SigmaArg {
    Unit,
    Median,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 1 } else { 2 })
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Simulate {
            config,
            counts,
            seed,
            out,
        } => simulate(config.as_deref(), &counts, seed, &out),
        Command::Calibrate {
            dataset,
            monitor,
            level,
            alpha,
            scope,
            formula,
            noise,
            sigma,
            seed,
            out,
        } => {
            let level = if level == "1" { Level::Level1 } else { Level::Level2 };
            let opts = CalibrateOpts {
                kind: monitor.into(),
                level,
                alpha,
                scope,
                formula,
                noise,
                sigma,
                seed,
            };
            cmd_calibrate(&dataset, &opts, &out)
        }
        Command::Certify {
            model,
            dataset,
            split,
            formula,
            out,
            csv,
        } => certify(&model, &dataset, &split, &formula, &out, csv.as_deref()),
        Command::Report {
            models,
            dataset,
            formulas,
            sweep,
            sweep_predicate,
            out,
        } => report(&models, &dataset, &formulas, &sweep, &sweep_predicate, &out),
    }
}

fn parse_counts(s: &str) -> Result<SplitCounts> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::InvalidConfig(format!("--counts `{s}`: {e}")))?;
    match parts.as_slice() {
        &[train, calib, test] => Ok(SplitCounts { train, calib, test }),
        _ => Err(Error::InvalidConfig(format!("--counts `{s}` needs three values TRAIN,CALIB,TEST"))),
    }
}

fn simulate(config: Option<&Path>, counts: &str, seed: Option<u64>, out: &Path) -> Result<()> {
    let cfg = match config {
        Some(p) => CrossroadConfig::from_file(p)?,
        None => CrossroadConfig::default(),
    };
    let counts = parse_counts(counts)?;
    let seed = seed.unwrap_or(cfg.seed);
    let manifest = generate_dataset(&cfg, counts, seed, out)?;
    println!(
        "wrote {} episodes (m={}, K_max={}) to {}",
        counts.train + counts.calib + counts.test,
        manifest.m,
        manifest.k_max,
        out.display()
    );
    Ok(())
}

struct CalibrateOpts {
    kind: MonitorKind,
    level: Level,
    alpha: f64,
    scope: Option<ScopeArg>,
    formula: Option<String>,
    noise: Option<PathBuf>,
    sigma: SigmaArg,
    seed: u64,
}

fn stub_mode(kind: MonitorKind) -> StubMode {
    match kind {
        MonitorKind::Semantic => StubMode::NoisyBasis,
        MonitorKind::Rolling | MonitorKind::Observer => StubMode::NoisyPredicates,
    }
}

fn load_stub(noise: Option<&Path>, kind: MonitorKind) -> Result<PredictorStub> {
    let mut stub = match noise {
        Some(p) => PredictorStub::from_file(p)?,
        None => PredictorStub::gaussian(stub_mode(kind), 0.2, 0),
    };
    if stub.mode != stub_mode(kind) {
        log::info!("predictor mode set to {:?} for the {kind} monitor", stub_mode(kind));
        stub.mode = stub_mode(kind);
    }
    Ok(stub)
}

fn basis_for(ds: &Dataset, kind: MonitorKind) -> Result<BasisSpec> {
    Ok(match kind {
        MonitorKind::Semantic => BasisSpec::Semantic(ds.dictionary()?),
        MonitorKind::Rolling | MonitorKind::Observer => BasisSpec::PredicateHistory {
            num_predicates: ds.manifest.m,
            k_max: ds.manifest.k_max,
        },
    })
}

fn parse_with(names: &[String], text: &str) -> Result<Formula> {
    certmon::logic::parse_formula(text, names)
}

fn cmd_calibrate(dataset: &Path, o: &CalibrateOpts, out: &Path) -> Result<()> {
    let ds = Dataset::open(dataset)?;
    let names = ds.manifest.predicate_names.clone();
    let basis = basis_for(&ds, o.kind)?;
    let stub = load_stub(o.noise.as_deref(), o.kind)?;
    let formula = o.formula.as_deref().map(|f| parse_with(&names, f)).transpose()?;
    let scope = o.scope.unwrap_or(if formula.is_some() {
        ScopeArg::Active
    } else {
        ScopeArg::Fragment
    });
    let calib = ds.load_split(Split::Calib)?;
    let sigma = match o.sigma {
        SigmaArg::Unit => vec![1.0; basis.dim()],
        SigmaArg::Median => estimate_sigma(&ds.load_split(Split::Train)?, &stub, o.kind, &basis)?,
    };

    let mon = match o.kind {
        MonitorKind::Observer => {
            let f = formula.ok_or_else(|| Error::InvalidConfig("the observer monitor needs --formula".into()))?;
            if o.level != Level::Level2 {
                return Err(Error::InvalidConfig("the observer monitor supports level 2 only".into()));
            }
            observer_calibrate(&calib, &stub, &f, o.alpha, &sigma, &basis, o.seed)?
        }
        kind => {
            let cfg = ScoreConfig::new(sigma, Scope::FragmentWide, o.alpha, o.level)?;
            let mon = calibrate(&calib, &stub, kind, &cfg, &basis, o.seed)?;
            match (scope, formula) {
                (ScopeArg::Fragment, _) => mon,
                (ScopeArg::Active, Some(f)) => mon.requery(&f)?,
                (ScopeArg::Active, None) => {
                    return Err(Error::InvalidConfig("--scope active needs --formula".into()));
                }
            }
        }
    };
    let mut mon = mon.with_predicate_names(names)?;
    mon.predictor = Some(serde_json::to_value(&stub).expect("stub serializes"));
    mon.save(out)?;
    println!(
        "{} monitor, level {}, n={}, radius {:.6}{}",
        mon.kind,
        mon.level,
        mon.n,
        mon.radius,
        mon.formula.as_deref().map(|f| format!(" for {f}")).unwrap_or_default()
    );
    Ok(())
}

fn model_predictor(mon: &CalibratedMonitor, path: &Path) -> Result<PredictorStub> {
    let value = mon
        .predictor
        .clone()
        .ok_or_else(|| Error::InvalidConfig(format!("{}: model has no predictor settings", path.display())))?;
    let stub: PredictorStub =
        serde_json::from_value(value).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
    stub.validate()?;
    Ok(stub)
}

fn check_dataset(mon: &CalibratedMonitor, ds: &Dataset) -> Result<()> {
    if ds.manifest.m != mon.basis.num_predicates() || ds.manifest.k_max != mon.k_max() {
        return Err(Error::InvalidConfig(format!(
            "dataset (m={}, K_max={}) does not match the model (m={}, K_max={})",
            ds.manifest.m,
            ds.manifest.k_max,
            mon.basis.num_predicates(),
            mon.k_max()
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct VerdictLine<'a> {
    episode: u64,
    t: usize,
    formula: usize,
    lb: Option<f64>,
    label: &'a str,
}

fn certify(model: &Path, dataset: &Path, split: &str, formulas: &[String], out: &Path, csv: Option<&Path>) -> Result<()> {
    let mon = CalibratedMonitor::load(model)?;
    let stub = model_predictor(&mon, model)?;
    let ds = Dataset::open(dataset)?;
    check_dataset(&mon, &ds)?;
    let texts: Vec<String> = if formulas.is_empty() {
        vec![mon
            .formula
            .clone()
            .ok_or_else(|| Error::InvalidConfig("no --formula given and the model has none".into()))?]
    } else {
        formulas.to_vec()
    };
    let parsed = texts.iter().map(|t| mon.parse(t)).collect::<Result<Vec<_>>>()?;
    let episodes = ds.load_split(split.parse::<Split>()?)?;

    let file = fs::File::create(out).map_err(|e| io_err(out, e))?;
    let mut w = BufWriter::new(file);
    let mut csv_w = match csv {
        Some(p) => {
            let mut w = BufWriter::new(fs::File::create(p).map_err(|e| io_err(p, e))?);
            writeln!(w, "episode,t,formula,lb,label").map_err(|e| io_err(p, e))?;
            Some((p, w))
        }
        None => None,
    };
    let mut safe = 0usize;
    let mut certified = 0usize;
    for ep in &episodes {
        let run = run_episode(ep, &stub, &mon, &parsed)?;
        if let Some(err) = run.errors.first() {
            return Err(Error::NotInFragment(format!("formula {}: {}", err.id, err.message)));
        }
        for t in 0..ep.len() {
            for tr in &run.traces {
                let v = &tr.verdicts[t];
                let label = v.label.to_string();
                let line = VerdictLine {
                    episode: ep.id,
                    t: v.t,
                    formula: v.formula,
                    lb: v.lb,
                    label: &label,
                };
                serde_json::to_writer(&mut w, &line).expect("verdict serializes");
                w.write_all(b"\n").map_err(|e| io_err(out, e))?;
                if let Some((p, cw)) = csv_w.as_mut() {
                    let lb = v.lb.map(|x| x.to_string()).unwrap_or_default();
                    writeln!(cw, "{},{},{},{},{}", ep.id, v.t, v.formula, lb, label).map_err(|e| io_err(p, e))?;
                }
                certified += v.lb.is_some() as usize;
                safe += (v.label == certmon::monitors::Label::Safe) as usize;
            }
        }
    }
    w.flush().map_err(|e| io_err(out, e))?;
    if let Some((p, mut cw)) = csv_w {
        cw.flush().map_err(|e| io_err(p, e))?;
    }
    println!(
        "{} episodes, {} formula(s): {safe} of {certified} certified steps safe",
        episodes.len(),
        parsed.len()
    );
    Ok(())
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn read_formulas(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let lines: Vec<String> = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect();
    if lines.is_empty() {
        return Err(Error::InvalidConfig(format!("{}: no formulas", path.display())));
    }
    Ok(lines)
}

fn report(
    models: &[PathBuf],
    dataset: &Path,
    formulas: &Path,
    ks: &[usize],
    sweep_predicate: &str,
    out: &Path,
) -> Result<()> {
    let ds = Dataset::open(dataset)?;
    let texts = read_formulas(formulas)?;
    let test = ds.load_split(Split::Test)?;
    let monitors = models
        .iter()
        .map(|p| CalibratedMonitor::load(p))
        .collect::<Result<Vec<_>>>()?;
    let mut evaluations = Vec::new();
    let mut sweep = Vec::new();
    for (mon, path) in monitors.iter().zip(models) {
        check_dataset(mon, &ds)?;
        let stub = model_predictor(mon, path)?;
        let parsed = texts.iter().map(|t| mon.parse(t)).collect::<Result<Vec<_>>>()?;
        let eval = evaluate(mon, &stub, &test, &parsed)?;
        for err in &eval.errors {
            log::warn!("{}: skipping formula `{}`: {}", path.display(), texts[err.id], err.message);
        }
        evaluations.push((mon, eval));
        sweep.extend(horizon_sweep(mon, sweep_predicate, ks)?);
    }
    let files = write_report(out, &evaluations, &sweep)?;
    println!(
        "wrote {}, {} and {}",
        files.csv.display(),
        files.json.display(),
        files.sweep.display()
    );
    Ok(())
}
