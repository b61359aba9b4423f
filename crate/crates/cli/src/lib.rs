//! The `mpnp` command line.

pub mod config;
pub mod error;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use mpnp_chem::molecule;
use mpnp_core::checkpoint::Checkpoint;
use mpnp_core::dataset::{pairs_table, DatasetBundle};
use mpnp_core::gradsuite::default_loss_gradcheck;
use mpnp_core::interpret::{atom_attribution, atom_similarity_matrix, final_node_states, MoleculeAttribution};
use mpnp_core::split::{inductive_split, transductive_split};
use mpnp_core::train::EpochLog;
use mpnp_core::{fit, load_dataset, predict_examples, write_atomic, EvalReport, PairBatch, PredictionOutput, TrainConfig};

use crate::config::{check_output, RunConfig, SplitMode};
use crate::error::{CliError, Result};

#[derive(Parser, Debug)]
#[command(name = "mpnp", version, about = "Drug pair interaction prediction with edge message passing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train on the configured split; writes a checkpoint and a loss log.
    Train(ConfigArgs),
    /// Score a pairs table with a checkpoint and print the metrics.
    Eval(EvalArgs),
    /// Score one drug pair given as SMILES.
    Predict(PredictArgs),
    /// Write the configured split as pairs tables.
    Split(SplitArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck(GradcheckArgs),
    /// Atom similarity tables and gradient attributions for a drug pair.
    Interpret(InterpretArgs),
}

#[derive(Args, Debug)]
struct ConfigArgs {
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    drugs: PathBuf,
    #[arg(long)]
    pairs: PathBuf,
    /// Also write the report here.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long = "smiles-1")]
    smiles_1: String,
    #[arg(long = "smiles-2")]
    smiles_2: String,
    #[arg(long, conflicts_with = "max_over_relations", required_unless_present = "max_over_relations")]
    relation: Option<usize>,
    /// Score every relation and report the most probable one.
    #[arg(long)]
    max_over_relations: bool,
}

#[derive(Args, Debug)]
struct SplitArgs {
    config: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 2024)]
    seed: u64,
    /// Hidden width of the model used for the loss check.
    #[arg(long, default_value_t = 8)]
    hidden_dim: usize,
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

#[derive(Args, Debug)]
struct InterpretArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    drugs: PathBuf,
    #[arg(long = "drug-1")]
    drug_1: String,
    #[arg(long = "drug-2")]
    drug_2: String,
    #[arg(long, default_value_t = 0)]
    relation: usize,
    /// Bond radius of the reported neighborhood around the top atom.
    #[arg(long, default_value_t = 2)]
    radius: usize,
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{e}");
                return 0;
            }
            let _ = write!(err, "{}", e.render());
            return 1;
        }
    };
    match dispatch(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<i32> {
    match command {
        Command::Train(a) => train(a, out),
        Command::Eval(a) => eval(a, out),
        Command::Predict(a) => predict(a, out),
        Command::Split(a) => split(a, out),
        Command::Gradcheck(a) => gradcheck(a, out),
        Command::Interpret(a) => interpret(a, out),
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes()).map_err(|e| CliError::io("<stdout>", e))
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<RunConfig> {
    let mut config = RunConfig::load(path)?;
    if let Some(seed) = seed {
        config.train.seed = seed;
    }
    Ok(config)
}

struct Parts {
    train: Vec<usize>,
    valid: Vec<usize>,
    test: Vec<usize>,
}

fn make_split(config: &RunConfig, bundle: &DatasetBundle) -> Result<Parts> {
    let seed = config.split_seed();
    Ok(match config.split {
        SplitMode::Transductive => {
            let s = transductive_split(bundle.dataset.len(), config.ratios, seed)?;
            Parts {
                train: s.train,
                valid: s.valid,
                test: s.test,
            }
        }
        SplitMode::Inductive => {
            let s = inductive_split(&bundle.dataset.examples, config.drug_ratio, seed)?;
            log::info!("inductive split discarded {} mixed pairs", s.discarded);
            Parts {
                train: s.train,
                valid: Vec::new(),
                test: s.test,
            }
        }
    })
}

fn report_dropped(bundle: &DatasetBundle) {
    if !bundle.dropped_drugs.is_empty() {
        log::warn!(
            "dropped {} drugs with unparseable SMILES and {} pairs that used them",
            bundle.dropped_drugs.len(),
            bundle.dropped_pairs
        );
    }
}

fn train(a: ConfigArgs, out: &mut dyn Write) -> Result<i32> {
    let config = load_config(&a.config, a.seed)?;
    config.validate_paths(&[&config.checkpoint, &config.loss_log])?;
    let bundle = load_dataset(&config.drugs, &config.pairs)?;
    report_dropped(&bundle);
    let parts = make_split(&config, &bundle)?;
    let outcome = fit(&bundle.dataset, &parts.train, &config.train)?;

    let mut log = String::from(EpochLog::HEADER);
    log.push('\n');
    for entry in &outcome.log {
        log.push_str(&entry.to_row());
        log.push('\n');
    }
    write_atomic(&config.loss_log, log.as_bytes())?;
    let ckpt = Checkpoint::new(&config.train, &outcome.model, Some(&outcome.optimizer), config.train.epochs as u64);
    ckpt.save(&config.checkpoint)?;

    emit(
        out,
        &format!(
            "trained on {} pairs for {} epochs ({} optimizer steps)\ncheckpoint={}\nloss_log={}\n",
            parts.train.len(),
            config.train.epochs,
            outcome.optimizer.step,
            config.checkpoint.display(),
            config.loss_log.display()
        ),
    )?;
    let held_out = if parts.valid.is_empty() { ("test", &parts.test) } else { ("valid", &parts.valid) };
    if !held_out.1.is_empty() {
        let preds = predict_examples(&outcome.model, &bundle.dataset, held_out.1, config.train.batch_size)?;
        match EvalReport::compute(&preds, &bundle.dataset.labels(held_out.1)) {
            Ok(r) => emit(out, &format!("# {} metrics\n{}", held_out.0, r.to_text()))?,
            Err(e) => log::warn!("{} metrics unavailable: {e}", held_out.0),
        }
    }
    Ok(0)
}

fn eval(a: EvalArgs, out: &mut dyn Write) -> Result<i32> {
    if let Some(o) = &a.output {
        check_output(o)?;
    }
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let model = ckpt.model()?;
    let bundle = load_dataset(&a.drugs, &a.pairs)?;
    report_dropped(&bundle);
    if bundle.dataset.relations > model.config.relations {
        return Err(CliError::Invalid(format!(
            "pairs use {} relations but the checkpoint knows {}",
            bundle.dataset.relations, model.config.relations
        )));
    }
    let all = bundle.dataset.all_indices();
    let preds = predict_examples(&model, &bundle.dataset, &all, ckpt.config.batch_size)?;
    let text = EvalReport::compute(&preds, &bundle.dataset.labels(&all))?.to_text();
    if let Some(o) = &a.output {
        write_atomic(o, text.as_bytes())?;
    }
    emit(out, &text)?;
    Ok(0)
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(",")
}

fn prediction_text(relation: usize, p: &PredictionOutput) -> String {
    format!(
        "relation={relation}\nprobability={:?}\nvariance={:?}\nmu={:?}\nlog_variance={:?}\nalpha_1={}\nalpha_2={}\n",
        p.probability,
        p.variance,
        p.mu,
        p.log_var,
        join(&p.alpha_left),
        join(&p.alpha_right)
    )
}

fn parse_smiles(s: &str) -> Result<mpnp_chem::MolecularGraph> {
    molecule(s).map_err(|e| CliError::Invalid(format!("SMILES {s:?}: {e}")))
}

fn predict(a: PredictArgs, out: &mut dyn Write) -> Result<i32> {
    let left = parse_smiles(&a.smiles_1)?;
    let right = parse_smiles(&a.smiles_2)?;
    let model = Checkpoint::load(&a.checkpoint)?.model()?;
    let relations = model.config.relations;
    let (relation, p) = match a.relation {
        Some(r) => {
            if r >= relations {
                return Err(CliError::Invalid(format!("relation {r} out of range for {relations} relations")));
            }
            (r, model.predict(&PairBatch::single(&left, &right, r))?.remove(0))
        }
        None => {
            let pairs = PairBatch {
                left: vec![&left; relations],
                right: vec![&right; relations],
                relations: (0..relations).collect(),
            };
            let preds = model.predict(&pairs)?;
            let probs: Vec<f64> = preds.iter().map(|p| p.probability).collect();
            let best = mpnp_core::metrics::argmax(&probs);
            (best, preds.into_iter().nth(best).expect("one prediction per relation"))
        }
    };
    emit(out, &prediction_text(relation, &p))?;
    Ok(0)
}

fn split(a: SplitArgs, out: &mut dyn Write) -> Result<i32> {
    let config = load_config(&a.config, a.seed)?;
    if !a.out_dir.is_dir() {
        return Err(CliError::Invalid(format!("{}: not a directory", a.out_dir.display())));
    }
    config.validate_paths(&[])?;
    let bundle = load_dataset(&config.drugs, &config.pairs)?;
    report_dropped(&bundle);
    let parts = make_split(&config, &bundle)?;
    let mut files = vec![("train", &parts.train)];
    if config.split == SplitMode::Transductive {
        files.push(("valid", &parts.valid));
    }
    files.push(("test", &parts.test));
    for (name, indices) in files {
        let path = a.out_dir.join(format!("{name}.tsv"));
        write_atomic(&path, pairs_table(&bundle, indices).as_bytes())?;
        emit(out, &format!("{name}\t{}\t{}\n", indices.len(), path.display()))?;
    }
    Ok(0)
}

fn gradcheck(a: GradcheckArgs, out: &mut dyn Write) -> Result<i32> {
    let cases = mpnp_autodiff::primitive_suite(a.seed).map_err(mpnp_core::CoreError::from)?;
    let mut failed = Vec::new();
    for case in &cases {
        let status = if case.report.passed() { "ok" } else { "FAIL" };
        emit(
            out,
            &format!("{}\t{:.3e}\t{status}\n", case.name, case.report.max_relative_error),
        )?;
        if !case.report.passed() {
            failed.push(case.name.clone());
        }
    }
    let config = TrainConfig {
        hidden_dim: a.hidden_dim,
        seed: a.seed,
        ..TrainConfig::default()
    };
    let loss = default_loss_gradcheck(&config, a.step, a.tolerance)?;
    let status = if loss.passed() { "ok" } else { "FAIL" };
    emit(
        out,
        &format!("composite_loss\t{:.3e}\t{status}\t{} elements\n", loss.max_relative_error, loss.checked),
    )?;
    if !loss.passed() {
        failed.push(format!("composite_loss ({} of {} elements)", loss.failures, loss.checked));
    }
    if failed.is_empty() {
        Ok(0)
    } else {
        Err(CliError::GradCheck(failed.join(", ")))
    }
}

fn attribution_text(label: &str, g: &mpnp_chem::MolecularGraph, a: &MoleculeAttribution) -> String {
    let mut s = format!("# attribution {label}\natom\telement\tscore\n");
    for (i, score) in a.scores.iter().enumerate() {
        s.push_str(&format!("{i}\t{}\t{score:.6}\n", g.atoms[i].element));
    }
    let hood: Vec<String> = a.neighborhood.iter().map(usize::to_string).collect();
    s.push_str(&format!("top_atom={}\nneighborhood={}\n", a.top_atom, hood.join(",")));
    if a.uniform_fallback {
        s.push_str("uniform_fallback=true\n");
    }
    s
}

fn interpret(a: InterpretArgs, out: &mut dyn Write) -> Result<i32> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let model = ckpt.model()?;
    if a.relation >= model.config.relations {
        return Err(CliError::Invalid(format!(
            "relation {} out of range for {} relations",
            a.relation, model.config.relations
        )));
    }
    let text = std::fs::read_to_string(&a.drugs).map_err(|e| CliError::io(&a.drugs, e))?;
    let header = text.lines().next().unwrap_or_default();
    let delimiter = if header.contains('\t') { '\t' } else { ',' };
    let lookup = |id: &str| -> Result<String> {
        text.lines()
            .skip(1)
            .filter_map(|l| l.split_once(delimiter))
            .find(|(d, _)| d.trim() == id)
            .map(|(_, s)| s.trim().to_string())
            .ok_or_else(|| CliError::Invalid(format!("drug {id:?} not in {}", a.drugs.display())))
    };
    let graphs = [parse_smiles(&lookup(&a.drug_1)?)?, parse_smiles(&lookup(&a.drug_2)?)?];
    let mut report = String::new();
    for (id, g) in [&a.drug_1, &a.drug_2].into_iter().zip(&graphs) {
        let states = final_node_states(&model, g)?;
        let sim = atom_similarity_matrix(&states, model.config.hidden_dim);
        report.push_str(&format!("# similarity {id}\n{}", sim.to_table()));
    }
    let attr = atom_attribution(&model, &graphs[0], &graphs[1], a.relation, a.radius)?;
    report.push_str(&format!("mu={:?}\n", attr.mu));
    report.push_str(&attribution_text(&a.drug_1, &graphs[0], &attr.left));
    report.push_str(&attribution_text(&a.drug_2, &graphs[1], &attr.right));
    emit(out, &report)?;
    Ok(0)
}
