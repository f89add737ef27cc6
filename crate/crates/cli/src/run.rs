//! The `run` and `report` subcommands.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, Write};
use std::path::Path;

use safe_l2o::executor::{run_km, run_l2o, run_safe_l2o, RunOptions, RunTrace};
use safe_l2o::operators::{make_fallback, natural_fallback, FallbackKind, FallbackOperator};
use safe_l2o::problems::{relative_error, ProblemInstance, Split};
use safe_l2o::safeguards::SafeguardSpec;
use safe_l2o::schemes::{read_params_from, SchemeParams};
use safe_l2o::{Error, Result};
use serde_json::json;

use crate::commands::{load_dataset, write_file};
use crate::provenance::{io_error, Provenance};
use crate::{Mode, ReportArgs, RunArgs, SplitArg};

pub const RUN_COLUMNS: &str = "k,rel_error,fallback_frequency,mean_residual,mean_mu,extension";

fn fallback_for(args: &RunArgs, p: &ProblemInstance) -> Result<FallbackOperator> {
    match (args.fallback, args.step) {
        (None, None) => natural_fallback(p),
        (kind, step) => {
            let kind = kind.unwrap_or(FallbackKind::natural_for(p.kind()));
            let step = step.unwrap_or(match kind {
                FallbackKind::LiAdmm => 1.0,
                _ => 1.0 / p.lipschitz(),
            });
            make_fallback(kind, p, step)
        }
    }
}

fn load_params(path: &Path, m: usize, n: usize) -> Result<SchemeParams> {
    let file = File::open(path).map_err(|e| io_error(path, e))?;
    let (params, pm, pn) = read_params_from(BufReader::new(file))?;
    if (pm, pn) != (m, n) {
        return Err(Error::Dimension(format!(
            "{} was trained for m={pm}, n={pn}; the dataset has m={m}, n={n}",
            path.display()
        )));
    }
    Ok(params)
}

/// One CSV row per iterate index. Instances that stopped early contribute
/// their final record to later rows.
fn run_table(mode: Mode, problems: &[ProblemInstance], traces: &[RunTrace]) -> Result<String> {
    let f_stars = problems.iter().map(ProblemInstance::f_star).collect::<Result<Vec<_>>>()?;
    let rows = traces.iter().map(|t| t.records.len()).max().unwrap_or(0);
    let count = traces.len() as f64;
    let mut out = format!("{RUN_COLUMNS}\n");
    let mut objectives = Vec::with_capacity(traces.len());
    for i in 0..rows {
        objectives.clear();
        let (mut fallbacks, mut residual, mut mu_sum, mut has_mu) = (0usize, 0.0, 0.0, false);
        for t in traces {
            let rec = &t.records[i.min(t.records.len() - 1)];
            objectives.push(rec.objective.expect("objectives are recorded"));
            residual += rec.residual;
            if let Some(mu) = rec.mu {
                mu_sum += mu;
                has_mu = true;
            }
            if i < t.records.len() && rec.used_fallback {
                fallbacks += 1;
            }
        }
        let rel = relative_error(&objectives, &f_stars)?;
        let freq = match mode {
            Mode::Km => 1.0,
            Mode::L2o => 0.0,
            Mode::Safe => fallbacks as f64 / count,
        };
        let mu = if has_mu { format!("{:e}", mu_sum / count) } else { String::new() };
        let k = i + 1;
        let ext = traces[0].extension_start.is_some_and(|s| k >= s);
        out += &format!("{k},{rel:e},{freq},{:e},{mu},{}\n", residual / count, u8::from(ext));
    }
    Ok(out)
}

pub fn run(args: &RunArgs) -> Result<()> {
    let mut prov = Provenance::new(
        "run",
        json!({
            "data": args.data.display().to_string(),
            "params": args.params.as_ref().map(|p| p.display().to_string()),
            "mode": args.mode.as_str(),
            "split": match args.split { SplitArg::Train => "train", SplitArg::Test => "test" },
            "safeguard": args.safeguard.to_string(),
            "alpha": args.alpha,
            "iters": args.iters,
            "tol": args.tol,
            "fallback": args.fallback.map(|k| k.to_string()),
            "step": args.step,
            "x1": "zero",
        }),
    );
    prov.input(&args.data)?;
    if let Some(p) = &args.params {
        prov.input(p)?;
    }
    let ds = load_dataset(&args.data)?;
    let problems = ds.split(match args.split {
        SplitArg::Train => Split::Train,
        SplitArg::Test => Split::Test,
    });
    if problems.is_empty() {
        return Err(Error::Config(format!("{} has no instances in the chosen split", args.data.display())));
    }
    let params = match (args.mode, &args.params) {
        (Mode::Km, _) => None,
        (_, Some(path)) => Some(load_params(path, ds.header.m, ds.header.n)?),
        (_, None) => return Err(Error::Config(format!("--mode {} needs --params", args.mode.as_str()))),
    };
    let spec = SafeguardSpec::new(args.safeguard, args.alpha)?;
    let opts = RunOptions::default().with_objective().with_tol(args.tol);

    let mut traces = Vec::with_capacity(problems.len());
    for p in problems {
        let op = fallback_for(args, p)?;
        let x1 = op.zero_point();
        let trace = match (args.mode, &params) {
            (Mode::Km, _) => run_km(&op, &x1, args.iters, opts)?,
            (Mode::L2o, Some(params)) => run_l2o(&params.bind(p)?, &op, &x1, opts)?,
            (Mode::Safe, Some(params)) => run_safe_l2o(&params.bind(p)?, &op, spec, &x1, args.iters, opts)?,
            _ => unreachable!("parameters were loaded above"),
        };
        traces.push(trace);
    }
    let table = run_table(args.mode, problems, &traces)?;
    write_file(&args.out, |w| {
        prov.write_header(w)?;
        w.write_all(table.as_bytes())
    })
}

/// A run CSV reduced to the two plotted columns.
struct Curve {
    label: String,
    rows: BTreeMap<usize, (String, String)>,
}

fn read_curve(path: &Path) -> Result<Curve> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    let bad = |what: String| Error::Parse(format!("{}: {what}", path.display()));
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header = lines.next().ok_or_else(|| bad("empty run table".into()))?;
    if header != RUN_COLUMNS {
        return Err(bad(format!("unexpected columns {header:?}")));
    }
    let mut rows = BTreeMap::new();
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(bad(format!("malformed row {line:?}")));
        }
        let k = fields[0].parse().map_err(|_| bad(format!("bad iteration index {:?}", fields[0])))?;
        rows.insert(k, (fields[1].to_string(), fields[2].to_string()));
    }
    let label = path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned());
    Ok(Curve { label, rows })
}

pub fn report(args: &ReportArgs) -> Result<()> {
    let names: Vec<String> = args.inputs.iter().map(|p| p.display().to_string()).collect();
    let mut prov = Provenance::new("report", json!({ "inputs": names }));
    let mut curves = Vec::with_capacity(args.inputs.len());
    for path in &args.inputs {
        prov.input(path)?;
        curves.push(read_curve(path)?);
    }
    let ks: std::collections::BTreeSet<usize> = curves.iter().flat_map(|c| c.rows.keys().copied()).collect();
    write_file(&args.out, |w| {
        prov.write_header(w)?;
        write!(w, "k")?;
        for c in &curves {
            write!(w, ",{0}:rel_error,{0}:fallback_frequency", c.label)?;
        }
        writeln!(w)?;
        for k in ks {
            write!(w, "{k}")?;
            for c in &curves {
                match c.rows.get(&k) {
                    Some((rel, freq)) => write!(w, ",{rel},{freq}")?,
                    None => write!(w, ",,")?,
                }
            }
            writeln!(w)?;
        }
        Ok(())
    })
}
