use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ctm_core::sim::{self, SimStudyConfig};
use ctm_core::{fit, BasisSpec, CtmModel};
use log::warn;

use crate::config::ModelConfigFile;
use crate::error::CliError;
use crate::table::Table;

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn load_model(path: &Path) -> Result<CtmModel, CliError> {
    CtmModel::from_json(&read_text(path)?).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Covariate columns a model needs, with whether each is categorical.
fn model_columns(model: &CtmModel) -> Vec<(String, bool)> {
    model
        .covariates()
        .into_iter()
        .map(|name| {
            let cat = model
                .learners()
                .iter()
                .any(|l| l.covariate.as_deref() == Some(name) && matches!(l.x.basis, BasisSpec::Dummy { .. }));
            (name.to_string(), cat)
        })
        .collect()
}

/// CSV sink: a file, or stdout when no path is given.
struct Sink {
    out: Box<dyn Write>,
    path: Option<PathBuf>,
}

impl Sink {
    fn open(path: Option<&Path>) -> Result<Self, CliError> {
        let out: Box<dyn Write> = match path {
            Some(p) => Box::new(std::io::BufWriter::new(fs::File::create(p).map_err(|e| CliError::io(p, e))?)),
            None => Box::new(std::io::BufWriter::new(std::io::stdout())),
        };
        Ok(Sink {
            out,
            path: path.map(Path::to_path_buf),
        })
    }

    fn line(&mut self, s: &str) -> Result<(), CliError> {
        writeln!(self.out, "{s}").map_err(|e| self.err(e))
    }

    fn finish(mut self) -> Result<(), CliError> {
        self.out.flush().map_err(|e| self.err(e))
    }

    fn err(&self, e: std::io::Error) -> CliError {
        match &self.path {
            Some(p) => CliError::io(p, e),
            None => CliError::Io(format!("stdout: {e}")),
        }
    }
}

fn trace_path(out: &Path) -> PathBuf {
    out.with_extension("trace.csv")
}

pub fn cmd_fit(data: &Path, config: &Path, out: &Path, trace: Option<&Path>) -> Result<(), CliError> {
    let cfg = ModelConfigFile::parse(&read_text(config)?)?;
    let table = Table::read(data)?;
    let dataset = table.dataset(&cfg.data.response, cfg.data.weights.as_deref(), &cfg.required_columns())?;
    let learners = cfg.learners(&dataset)?;
    let result = fit(&dataset, &learners, &cfg.boost_config())?;
    let model = result.model.with_response_name(cfg.data.response.clone());
    write_text(out, &model.to_json()?)?;
    let trace_file = trace.map(Path::to_path_buf).unwrap_or_else(|| trace_path(out));
    write_text(&trace_file, &result.trace.to_csv())?;
    println!(
        "fitted {} learners on {} observations; model written to {}",
        learners.len(),
        dataset.len(),
        out.display()
    );
    if let Some(m) = result.trace.mstop {
        println!("selected mstop: {m}");
    }
    Ok(())
}

/// Evaluation points: `lo:hi:n`, or a comma-separated list.
pub fn parse_points(spec: &str) -> Result<Vec<f64>, CliError> {
    let bad = || CliError::Config(format!("cannot parse evaluation points '{spec}'"));
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() == 3 {
        let lo: f64 = parts[0].trim().parse().map_err(|_| bad())?;
        let hi: f64 = parts[1].trim().parse().map_err(|_| bad())?;
        let n: usize = parts[2].trim().parse().map_err(|_| bad())?;
        if n < 1 || !(lo <= hi) {
            return Err(bad());
        }
        return Ok(sim::linspace(lo, hi, n));
    }
    parse_list(spec).map_err(|_| bad())
}

pub fn parse_list(spec: &str) -> Result<Vec<f64>, CliError> {
    spec.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| CliError::Config(format!("cannot parse '{s}' as a number")))
        })
        .collect()
}

fn report_bad_rows(bad: &[(usize, String)], skip: bool) -> Result<(), CliError> {
    if bad.is_empty() {
        return Ok(());
    }
    if skip {
        for (row, msg) in bad {
            warn!("skipped row {row}: {msg}");
        }
        return Ok(());
    }
    let listed: Vec<String> = bad.iter().take(20).map(|(r, m)| format!("row {r}: {m}")).collect();
    let first = bad.iter().map(|(_, m)| m.as_str()).next().unwrap_or_default();
    let text = format!(
        "{} row(s) failed (use --skip-bad to skip them)\n  {}",
        bad.len(),
        listed.join("\n  ")
    );
    if first.contains("not monotone") || first.contains("not bracketed") {
        Err(CliError::Numeric(text))
    } else {
        Err(CliError::Data(text))
    }
}

pub fn cmd_predict(model: &Path, data: &Path, points: Option<&str>, out: Option<&Path>, skip_bad: bool) -> Result<(), CliError> {
    let model = load_model(model)?;
    let frame = Table::read(data)?.frame(&model_columns(&model))?;
    let vs = match points {
        Some(s) => parse_points(s)?,
        None => model.grid().points().to_vec(),
    };
    let mut lines = Vec::with_capacity(frame.nrows() * vs.len());
    let mut bad = Vec::new();
    for i in 0..frame.nrows() {
        let row = i + 1;
        let evaluated = model
            .at(&frame.row(i))
            .and_then(|t| vs.iter().map(|v| t.cdf(*v)).collect::<Result<Vec<_>, _>>());
        match evaluated {
            Ok(cdf) => lines.extend(vs.iter().zip(cdf).map(|(v, p)| format!("{row},{v},{p}"))),
            Err(e) => bad.push((row, e.to_string())),
        }
    }
    report_bad_rows(&bad, skip_bad)?;
    let mut sink = Sink::open(out)?;
    sink.line("row,v,cdf")?;
    for l in &lines {
        sink.line(l)?;
    }
    sink.finish()
}

pub fn cmd_quantile(
    model: &Path,
    data: &Path,
    taus: Option<&str>,
    interval: Option<f64>,
    out: Option<&Path>,
    skip_bad: bool,
) -> Result<(), CliError> {
    let (taus, header) = match (interval, taus) {
        (Some(_), Some(_)) => return Err(CliError::Config("use either --taus or --interval".into())),
        (Some(a), None) => {
            if !(a > 0.0 && a < 0.5) {
                return Err(CliError::Config(format!("interval level {a} must lie in (0, 0.5)")));
            }
            (vec![a, 1.0 - a], "row,lower,upper".to_string())
        }
        (None, spec) => {
            let taus = parse_list(spec.unwrap_or("0.1,0.5,0.9"))?;
            if let Some(t) = taus.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
                return Err(CliError::Config(format!("probability {t} must lie in (0, 1)")));
            }
            let cols: Vec<String> = taus.iter().map(|t| format!("q{t}")).collect();
            (taus, format!("row,{}", cols.join(",")))
        }
    };
    let model = load_model(model)?;
    let frame = Table::read(data)?.frame(&model_columns(&model))?;
    let mut lines = Vec::with_capacity(frame.nrows());
    let mut bad = Vec::new();
    for i in 0..frame.nrows() {
        let row = i + 1;
        let q = model
            .at(&frame.row(i))
            .and_then(|t| taus.iter().map(|tau| t.quantile(*tau)).collect::<Result<Vec<_>, _>>());
        match q {
            Ok(q) => {
                let cells: Vec<String> = q.iter().map(|v| v.to_string()).collect();
                lines.push(format!("{row},{}", cells.join(",")));
            }
            Err(e) => bad.push((row, e.to_string())),
        }
    }
    report_bad_rows(&bad, skip_bad)?;
    let mut sink = Sink::open(out)?;
    sink.line(&header)?;
    for l in &lines {
        sink.line(l)?;
    }
    sink.finish()
}

pub fn cmd_diagnose(model: &Path, data: &Path, response: Option<&str>, residuals: Option<&Path>) -> Result<(), CliError> {
    let model = load_model(model)?;
    let response = response
        .or(model.response_name())
        .ok_or_else(|| CliError::Config("the model does not name its response column; pass --response".into()))?
        .to_string();
    let table = Table::read(data)?;
    let dataset = table.dataset(&response, None, &model_columns(&model))?;
    let report = model.diagnostics(&dataset)?;
    println!("observations: {}", dataset.len());
    println!("link: {}", model.loss().link.name());
    println!("ks statistic: {:.6}", report.ks_statistic);
    match report.rank_correlation {
        Some(r) => println!("rank correlation (residuals vs response): {r:.6}"),
        None => println!("rank correlation (residuals vs response): undefined (constant ranks)"),
    }
    if report.violations.is_empty() {
        println!("monotone on checked sample");
    } else {
        let mut rows: Vec<usize> = report.violations.iter().map(|v| v.sample + 1).collect();
        rows.dedup();
        println!(
            "monotonicity violations: {} grid segment(s) in {} row(s)",
            report.violations.len(),
            rows.len()
        );
        for v in report.violations.iter().take(50) {
            println!(
                "  row {}: h decreases from {} to {} between v = {} and {}",
                v.sample + 1,
                v.h_lower,
                v.h_upper,
                v.lower,
                v.upper
            );
        }
    }
    if let Some(path) = residuals {
        let mut sink = Sink::open(Some(path))?;
        sink.line("row,response,residual")?;
        for (i, (y, r)) in dataset.response().iter().zip(&report.residuals).enumerate() {
            sink.line(&format!("{},{y},{r}", i + 1))?;
        }
        sink.finish()?;
    }
    Ok(())
}

pub struct SimulateArgs {
    pub out_dir: PathBuf,
    pub replications: usize,
    pub noise: Vec<usize>,
    pub seed: u64,
    pub observations: usize,
    pub iterations: Option<usize>,
    pub bootstrap: Option<usize>,
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let defaults = SimStudyConfig::default();
    let config = SimStudyConfig {
        observations: args.observations,
        replications: args.replications,
        noise_vars: args.noise.clone(),
        seed: args.seed,
        max_iterations: args.iterations.unwrap_or(defaults.max_iterations),
        bootstrap_replications: args.bootstrap.unwrap_or(defaults.bootstrap_replications),
        ..defaults
    };
    if config.replications == 0 || config.noise_vars.is_empty() {
        return Err(CliError::Config("need at least one replication and one noise level".into()));
    }
    fs::create_dir_all(&args.out_dir).map_err(|e| CliError::io(&args.out_dir, e))?;
    let study = sim::replicate_study(&config);
    write_text(&args.out_dir.join("mad.csv"), &study.mad_csv())?;
    write_text(&args.out_dir.join("quantiles.csv"), &study.quantile_csv())?;
    for p in &config.noise_vars {
        let done = study.mad.iter().filter(|r| r.p == *p).count();
        match study.median_of_medians(*p) {
            Some(m) => println!("p={p}: median of median MAD {m:.4} over {done} replication(s)"),
            None => println!("p={p}: no successful replication"),
        }
    }
    if !study.failures.is_empty() {
        println!("{} replication(s) failed; see warnings", study.failures.len());
    }
    println!("tables written to {}", args.out_dir.display());
    Ok(())
}
