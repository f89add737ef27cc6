use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use safe_l2o::problems::{generate as generate_dataset, read_dataset_from, write_dataset_to, Dataset, GeneratorSpec};
use safe_l2o::schemes::{write_params_to, SchemeParams};
use safe_l2o::training::{train_layerwise, TrainConfig};
use safe_l2o::{Error, Result};
use serde_json::json;

use crate::provenance::{io_error, Provenance};
use crate::{GenerateArgs, TrainArgs};

/// Create `path` and fill it through `body`, mapping I/O failures to the path.
pub fn write_file(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let file = File::create(path).map_err(|e| io_error(path, e))?;
    let mut w = BufWriter::new(file);
    body(&mut w).and_then(|_| w.flush()).map_err(|e| io_error(path, e))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| io_error(path, e))?;
    read_dataset_from(BufReader::new(file))
}

pub fn generate(args: &GenerateArgs) -> Result<()> {
    let (dm, dn) = args.problem.default_dims();
    let m = args.m.unwrap_or(dm);
    let n = args.n.unwrap_or(dn);
    let tau = args.tau.unwrap_or(args.problem.default_tau());
    let spec = GeneratorSpec::new(args.problem, m, n, args.train, args.test, args.dist, args.seed).with_tau(tau);
    let ds = generate_dataset(&spec)?;
    let prov = Provenance::new(
        "generate",
        json!({
            "problem": args.problem.as_str(),
            "m": m,
            "n": n,
            "tau": tau,
            "train": args.train,
            "test": args.test,
            "dist": args.dist.as_str(),
            "seed": args.seed,
        }),
    );
    write_file(&args.out, |w| {
        prov.write_header(w)?;
        write_dataset_to(&ds, w)
    })
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let mut prov = Provenance::new(
        "train",
        json!({
            "data": args.data.display().to_string(),
            "scheme": args.scheme.to_string(),
            "layers": args.layers,
            "loss": args.loss.as_str(),
            "gradient": args.gradient.to_string(),
            "epochs": args.epochs,
            "lr": args.lr,
            "batch_size": args.batch_size,
            "seed": args.seed,
            "joint_epochs": args.joint_epochs,
        }),
    );
    prov.input(&args.data)?;
    let ds = load_dataset(&args.data)?;
    let samples = ds.train();
    let first = samples
        .first()
        .ok_or_else(|| Error::Config(format!("{} has no training instances", args.data.display())))?;
    let init = SchemeParams::init(args.scheme, first, args.layers)?;
    let cfg = TrainConfig {
        loss: args.loss,
        gradient: args.gradient,
        learning_rate: args.lr,
        epochs: args.epochs,
        batch_size: args.batch_size,
        seed: args.seed,
        joint_finetune: args.joint_epochs > 0,
        joint_epochs: args.joint_epochs,
        ..TrainConfig::default()
    };
    let (params, report) = train_layerwise(init, samples, &cfg)?;
    for stage in &report.stages {
        let label = stage.stage.map_or_else(|| "joint".to_string(), |k| k.to_string());
        let note = if stage.reverted { " (reverted)" } else { "" };
        eprintln!("stage {label}: loss {:.6e} -> {:.6e}{note}", stage.initial_loss, stage.final_loss);
    }
    let (m, n) = (ds.header.m, ds.header.n);
    let mut body = Vec::new();
    write_params_to(&params, m, n, &mut body)?;
    write_file(&args.out, |w| {
        prov.write_header(w)?;
        w.write_all(&body)
    })?;
    if let Some(log) = &args.log {
        write_file(log, |w| {
            prov.write_header(w)?;
            report.write_csv(w)
        })?;
    }
    Ok(())
}
