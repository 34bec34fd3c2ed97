use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use glyco::baselines::{
    fit_dataset, raw_embedding, tcl_embed, train_tcl, BlackBoxModel, TclMode, TclModel,
};
use glyco::config::RunConfig;
use glyco::datamodel::{load_csv, save_csv, Dataset, Diagnosis};
use glyco::error::{Error, Result};
use glyco::evalcluster::{
    evaluate_dtw, evaluate_method_with, kmeans, person_mean_traces, write_score_table, ClusterReport,
    EmbeddingTable, N_INIT,
};
use glyco::features::{dataset_features, write_features};
use glyco::hybridvae::{
    observed_rmse, train, train_elbo, write_embeddings, write_reconstructions, EpochStats, HybridModel,
    MechEmbedding, Reconstruction,
};
use glyco::mechsim::cohort::{generate_cohort, write_ground_truth};
use glyco::nn::Checkpoint;
use glyco::report::{load_reconstructions, reconstruction_svg, write_pca, write_scatter_pairs, RecordTrace};
use glyco::stats::median;

/// Mechanistic embeddings of post-prandial glucose responses.
#[derive(Parser)]
#[command(name = "glyco", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort (cohort.csv, ground_truth.csv).
    Simulate(Common),
    /// Train a hybrid, black-box or TCL model and write its checkpoint.
    Train(Common),
    /// Fit the mechanistic model to every record by gradient descent.
    FitMech(Common),
    /// Compute expert CGM features.
    Features(Common),
    /// Embed every record with a trained model (or the raw trace).
    Embed(Common),
    /// k-means on person-level embeddings; writes cluster assignments.
    Cluster(Common),
    /// Cluster and score against diagnosis labels.
    Evaluate(Common),
    /// Score table, scatter/PCA data and reconstruction plots.
    Report(Common),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelKind {
    Hybrid,
    Blackbox,
    Tcl,
    Raw,
}

impl ModelKind {
    fn name(self) -> &'static str {
        match self {
            ModelKind::Hybrid => "hybrid",
            ModelKind::Blackbox => "blackbox",
            ModelKind::Tcl => "tcl",
            ModelKind::Raw => "raw",
        }
    }
}

#[derive(Args, Clone)]
struct Common {
    /// Run config file (flat key = value).
    #[arg(long, alias = "spec")]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; also where inputs are looked up by default.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Dataset CSV (defaults to <out>/cohort.csv).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Embedding CSV for cluster/evaluate (defaults to <out>/<method>_embeddings.csv).
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Checkpoint for embed (defaults to <out>/<model>.ckpt.json).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long = "beta-hat")]
    beta_hat: Option<f64>,
    #[arg(long, value_enum, default_value = "hybrid")]
    model: ModelKind,
    /// Embedding method name for cluster/evaluate.
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    k: Option<usize>,
}

struct Ctx {
    cfg: RunConfig,
    args: Common,
    meta: String,
}

impl Ctx {
    fn new(args: Common) -> Result<Self> {
        let mut cfg = match &args.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = args.seed {
            cfg.seed = s;
        }
        if let Some(v) = args.epochs {
            cfg.train.epochs = v;
        }
        if let Some(v) = args.batch {
            cfg.train.batch = v;
        }
        if let Some(v) = args.lr {
            cfg.train.lr = v;
        }
        if let Some(v) = args.beta_hat {
            cfg.train.beta_hat = v;
        }
        if let Some(v) = args.k {
            cfg.k = v;
        }
        cfg.sync();
        cfg.validate()?;
        std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
        let meta = cfg.meta_line();
        Ok(Ctx { cfg, args, meta })
    }

    fn out(&self, name: &str) -> PathBuf {
        self.args.out.join(name)
    }

    fn data_path(&self) -> PathBuf {
        self.args.data.clone().unwrap_or_else(|| self.out("cohort.csv"))
    }

    fn dataset(&self) -> Result<Dataset> {
        load_csv(self.data_path())
    }

    fn write(&self, name: &str, body: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<PathBuf> {
        let path = self.out(name);
        let f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = std::io::BufWriter::new(f);
        body(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

fn note(msg: impl AsRef<str>) {
    eprintln!("{}", msg.as_ref());
}

fn write_history(w: &mut dyn Write, meta: &str, history: &[EpochStats]) -> std::io::Result<()> {
    writeln!(w, "# {meta}")?;
    writeln!(w, "epoch,elbo,recon,kl")?;
    for s in history {
        writeln!(w, "{},{},{},{}", s.epoch, s.elbo, s.recon, s.kl)?;
    }
    Ok(())
}

fn log_epoch(total: usize) -> impl FnMut(&EpochStats) {
    move |s: &EpochStats| {
        if s.epoch == 0 || (s.epoch + 1) % 10 == 0 || s.epoch + 1 == total {
            note(format!("epoch {:>4}  elbo {:>10.3}  recon {:>10.3}  kl {:>8.3}", s.epoch + 1, s.elbo, s.recon, s.kl));
        }
    }
}

fn simulate(ctx: &Ctx) -> Result<()> {
    let (ds, truth) = generate_cohort(&ctx.cfg.cohort, ctx.cfg.seed)?;
    save_csv(&ds, ctx.out("cohort.csv"), Some(&ctx.meta))?;
    ctx.write("ground_truth.csv", |w| write_ground_truth(&truth, w, Some(&ctx.meta)))?;
    note(format!("simulated {} records from {} persons", ds.len(), ds.by_person().len()));
    Ok(())
}

fn train_cmd(ctx: &Ctx) -> Result<()> {
    let ds = ctx.dataset()?;
    let cfg = &ctx.cfg;
    let hash = cfg.hash();
    match ctx.args.model {
        ModelKind::Hybrid => {
            let mut model = HybridModel::new(cfg.hybrid_config(), cfg.seed);
            model.prior = cfg.prior.to_prior()?;
            let outcome = train(&ds, &mut model, &cfg.train, log_epoch(cfg.train.epochs))?;
            model
                .to_checkpoint(&hash, cfg.seed, Some(outcome.optimizer))
                .save(&ctx.out("hybrid.ckpt.json"))?;
            ctx.write("hybrid_history.csv", |w| write_history(w, &ctx.meta, &outcome.history))?;
            note(format!("sigma_obs {:.3}", model.sigma_obs()));
        }
        ModelKind::Blackbox => {
            let mut model = BlackBoxModel::new(cfg.hybrid_config().encoder, cfg.seed);
            let outcome = train_elbo(&ds, &mut model, &cfg.train, log_epoch(cfg.train.epochs))?;
            model
                .to_checkpoint(&hash, cfg.seed, Some(outcome.optimizer))
                .save(&ctx.out("blackbox.ckpt.json"))?;
            ctx.write("blackbox_history.csv", |w| write_history(w, &ctx.meta, &outcome.history))?;
        }
        ModelKind::Tcl => {
            let (model, losses) = train_tcl(&ds, &cfg.tcl)?;
            model.to_checkpoint(&hash, cfg.seed).save(&ctx.out("tcl.ckpt.json"))?;
            ctx.write("tcl_history.csv", |w| {
                writeln!(w, "# {}", ctx.meta)?;
                writeln!(w, "epoch,loss")?;
                for (i, l) in losses.iter().enumerate() {
                    writeln!(w, "{i},{l}")?;
                }
                Ok(())
            })?;
            note(format!("tcl window accuracy {:.3}", model.window_accuracy(&ds)));
        }
        ModelKind::Raw => return Err(Error::Config("the raw method has nothing to train".into())),
    }
    Ok(())
}

fn load_checkpoint(ctx: &Ctx, model: ModelKind) -> Result<Checkpoint> {
    let path = ctx
        .args
        .checkpoint
        .clone()
        .unwrap_or_else(|| ctx.out(&format!("{}.ckpt.json", model.name())));
    Checkpoint::load(&path)
}

fn embed_cmd(ctx: &Ctx) -> Result<()> {
    let ds = ctx.dataset()?;
    let model = ctx.args.model;
    let name = format!("{}_embeddings.csv", model.name());
    match model {
        ModelKind::Hybrid => {
            let mut m = HybridModel::from_checkpoint(&load_checkpoint(ctx, model)?)?;
            m.config.sim = ctx.cfg.sim;
            let emb = m.embed_dataset(&ds);
            ctx.write(&name, |w| write_embeddings(&ds, &emb, w, Some(&ctx.meta)))?;
            let recons = m.reconstruct_dataset(&ds)?;
            ctx.write("hybrid_reconstructions.csv", |w| write_reconstructions(&ds, &recons, w, Some(&ctx.meta)))?;
            let rmse: Vec<f64> = ds.records.iter().zip(&recons).map(|(r, c)| observed_rmse(r, &c.glucose)).collect();
            note(format!("hybrid median reconstruction RMSE {:.2} mg/dL", median(&rmse)));
        }
        ModelKind::Blackbox => {
            let m = BlackBoxModel::from_checkpoint(&load_checkpoint(ctx, model)?)?;
            let table = EmbeddingTable::from_dataset(&ds, m.embed_dataset(&ds), None)?;
            table.save(ctx.out(&name), Some(&ctx.meta))?;
        }
        ModelKind::Tcl => {
            let m = TclModel::from_checkpoint(&load_checkpoint(ctx, model)?)?;
            let vecs = ds.records.iter().map(|r| tcl_embed(&m, r, TclMode::Average)).collect();
            EmbeddingTable::from_dataset(&ds, vecs, None)?.save(ctx.out(&name), Some(&ctx.meta))?;
        }
        ModelKind::Raw => {
            let vecs = ds.records.iter().map(raw_embedding).collect::<Result<Vec<_>>>()?;
            EmbeddingTable::from_dataset(&ds, vecs, None)?.save(ctx.out(&name), Some(&ctx.meta))?;
        }
    }
    Ok(())
}

fn fit_mech_cmd(ctx: &Ctx) -> Result<()> {
    let ds = ctx.dataset()?;
    let fits = fit_dataset(&ds, &ctx.cfg.mech)?;
    let emb: Vec<MechEmbedding> = fits.iter().map(|f| f.embedding()).collect();
    ctx.write("mechanistic_embeddings.csv", |w| write_embeddings(&ds, &emb, w, Some(&ctx.meta)))?;
    let recons: Vec<Reconstruction> = fits
        .iter()
        .map(|f| Reconstruction {
            glucose: f.glucose.clone(),
            u: f.u.clone(),
        })
        .collect();
    ctx.write("mechanistic_reconstructions.csv", |w| write_reconstructions(&ds, &recons, w, Some(&ctx.meta)))?;
    ctx.write("mechanistic_fits.csv", |w| {
        writeln!(w, "# {}", ctx.meta)?;
        writeln!(w, "ppgr_id,person_id,initial_rmse,rmse,iterations")?;
        for (r, f) in ds.records.iter().zip(&fits) {
            writeln!(w, "{},{},{},{},{}", r.ppgr_id, r.person_id, f.initial_mse.sqrt(), f.rmse(), f.iterations)?;
        }
        Ok(())
    })?;
    let rmse: Vec<f64> = fits.iter().map(|f| f.rmse()).collect();
    note(format!("mechanistic median fit RMSE {:.2} mg/dL", median(&rmse)));
    Ok(())
}

fn features_cmd(ctx: &Ctx) -> Result<()> {
    let ds = ctx.dataset()?;
    let feats = dataset_features(&ds)?;
    ctx.write("features_embeddings.csv", |w| write_features(&ds, &feats, w, Some(&ctx.meta)))?;
    Ok(())
}

fn method_name(ctx: &Ctx) -> Result<String> {
    if let Some(m) = &ctx.args.method {
        return Ok(m.clone());
    }
    match &ctx.args.embeddings {
        Some(p) => Ok(p
            .file_stem()
            .and_then(|s| s.to_str())
            .map(|s| s.trim_end_matches("_embeddings").to_string())
            .unwrap_or_else(|| "embedding".into())),
        None => Err(Error::Config("pass --method or --embeddings".into())),
    }
}

fn embeddings_path(ctx: &Ctx, method: &str) -> PathBuf {
    ctx.args
        .embeddings
        .clone()
        .unwrap_or_else(|| ctx.out(&format!("{method}_embeddings.csv")))
}

fn cluster_cmd(ctx: &Ctx) -> Result<()> {
    let method = method_name(ctx)?;
    let (persons, labels) = if method == "dtw" {
        let ds = ctx.dataset()?;
        let traces = person_mean_traces(&ds)?;
        let series: Vec<Vec<f64>> = traces.iter().map(|t| t.1.clone()).collect();
        let res = glyco::baselines::dtw_kmeans(&series, ctx.cfg.k, N_INIT, ctx.cfg.seed)?;
        (traces.into_iter().map(|t| t.0).collect::<Vec<_>>(), res.labels)
    } else {
        let people = EmbeddingTable::load(embeddings_path(ctx, &method))?.aggregate();
        let points: Vec<Vec<f64>> = people.iter().map(|p| p.vector.clone()).collect();
        let res = kmeans(&points, ctx.cfg.k, N_INIT, ctx.cfg.seed)?;
        (people.into_iter().map(|p| p.person_id).collect(), res.labels)
    };
    ctx.write(&format!("{method}_clusters.csv"), |w| {
        writeln!(w, "# {}", ctx.meta)?;
        writeln!(w, "person_id,cluster")?;
        for (p, l) in persons.iter().zip(&labels) {
            writeln!(w, "{p},{l}")?;
        }
        Ok(())
    })?;
    Ok(())
}

fn evaluate_one(ctx: &Ctx, method: &str, ds: &Dataset, labels: &BTreeMap<String, Diagnosis>) -> Result<ClusterReport> {
    let cfg = &ctx.cfg;
    if method == "dtw" {
        evaluate_dtw(ds, labels, cfg.k, cfg.seed, cfg.normalization)
    } else {
        let table = EmbeddingTable::load(embeddings_path(ctx, method))?;
        evaluate_method_with(method, &table, labels, cfg.k, cfg.seed, cfg.normalization)
    }
}

fn write_report_json(ctx: &Ctx, rep: &ClusterReport) -> Result<()> {
    let doc = serde_json::json!({
        "config_hash": ctx.cfg.hash(),
        "seed": ctx.cfg.seed,
        "report": rep,
    });
    let text = serde_json::to_string_pretty(&doc)?;
    ctx.write(&format!("{}_report.json", rep.method), |w| writeln!(w, "{text}"))?;
    Ok(())
}

/// Evaluates the requested method, or every configured method whose inputs exist.
fn evaluate_all(ctx: &Ctx) -> Result<Vec<ClusterReport>> {
    let ds = ctx.dataset()?;
    let labels = ds.person_labels();
    let methods: Vec<String> = if ctx.args.method.is_some() || ctx.args.embeddings.is_some() {
        vec![method_name(ctx)?]
    } else {
        ctx.cfg
            .methods
            .iter()
            .filter(|m| {
                let found = *m == "dtw" || embeddings_path(ctx, m).exists();
                if !found {
                    note(format!("skipping {m}: no embeddings in {}", ctx.args.out.display()));
                }
                found
            })
            .cloned()
            .collect()
    };
    if methods.is_empty() {
        return Err(Error::Config("no embeddings to evaluate".into()));
    }
    let mut reports = Vec::new();
    for m in &methods {
        let rep = evaluate_one(ctx, m, &ds, &labels)?;
        note(format!(
            "{:<12} nmi {:.3}  ami {:.3}  hom {:.3}  comp {:.3}",
            m, rep.scores.nmi, rep.scores.ami, rep.scores.homogeneity, rep.scores.completeness
        ));
        write_report_json(ctx, &rep)?;
        reports.push(rep);
    }
    ctx.write("scores.csv", |w| write_score_table(&reports, w, Some(&ctx.meta)))?;
    Ok(reports)
}

fn sanitize(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

const PLOTTED_RECORDS: usize = 6;

fn report_cmd(ctx: &Ctx) -> Result<()> {
    let reports = evaluate_all(ctx)?;
    let ds = ctx.dataset()?;
    let labels = ds.person_labels();

    // Pairwise scatter of the identifiable mechanistic dimensions.
    for method in ["hybrid", "mechanistic"] {
        let path = embeddings_path(ctx, method);
        if ctx.args.embeddings.is_none() && path.exists() {
            let table = EmbeddingTable::load(&path)?;
            let people = table.aggregate();
            let dims: Vec<usize> = (0..table.names.len().min(5)).collect();
            write_scatter_pairs(&ctx.args.out, &format!("scatter_{method}"), &people, &table.names, &dims, &labels, &ctx.meta)?;
        }
    }
    for rep in &reports {
        if rep.method == "dtw" {
            continue;
        }
        let table = EmbeddingTable::load(embeddings_path(ctx, &rep.method))?;
        write_pca(&ctx.out(&format!("pca_{}.csv", rep.method)), &table.aggregate(), &labels, &ctx.meta)?;
    }

    // Reconstruction-vs-observed data and plots.
    let mut sources: Vec<(&str, Vec<RecordTrace>)> = Vec::new();
    for method in ["hybrid", "mechanistic"] {
        let path = ctx.out(&format!("{method}_reconstructions.csv"));
        if path.exists() {
            sources.push((method, load_reconstructions(&path)?));
        }
    }
    if sources.is_empty() {
        note("no reconstructions found; skipping plots");
        return Ok(());
    }
    let by_id: Vec<BTreeMap<&str, &RecordTrace>> = sources
        .iter()
        .map(|(_, t)| t.iter().map(|r| (r.ppgr_id.as_str(), r)).collect())
        .collect();
    ctx.write("reconstruction_rmse.csv", |w| {
        writeln!(w, "# {}", ctx.meta)?;
        writeln!(w, "method,records,median_rmse,mean_rmse")?;
        for (name, traces) in &sources {
            let rmse: Vec<f64> = traces.iter().map(trace_rmse).filter(|v| v.is_finite()).collect();
            let mean = rmse.iter().sum::<f64>() / rmse.len().max(1) as f64;
            writeln!(w, "{name},{},{},{}", rmse.len(), median(&rmse), mean)?;
        }
        Ok(())
    })?;
    let figures = ctx.out("figures");
    std::fs::create_dir_all(&figures).map_err(|e| Error::io(&figures, e))?;
    let first = &sources[0].1;
    for trace in first.iter().take(PLOTTED_RECORDS) {
        let series: Vec<(&str, &[f64])> = sources
            .iter()
            .zip(&by_id)
            .filter_map(|((name, _), map)| map.get(trace.ppgr_id.as_str()).map(|t| (*name, t.predicted.as_slice())))
            .collect();
        let svg = reconstruction_svg(&format!("{} ({})", trace.ppgr_id, trace.person_id), &trace.observed, &series, &ctx.meta);
        let path = figures.join(format!("recon_{}.svg", sanitize(&trace.ppgr_id)));
        std::fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
    }
    let names: Vec<&str> = sources.iter().map(|s| s.0).collect();
    ctx.write("reconstructions_compare.csv", |w| {
        writeln!(w, "# {}", ctx.meta)?;
        writeln!(w, "ppgr_id,person_id,t,observed,{}", names.join(","))?;
        for trace in first {
            for t in 0..trace.observed.len() {
                let obs = trace.observed[t].map(|g| g.to_string()).unwrap_or_default();
                let preds: Vec<String> = by_id
                    .iter()
                    .map(|m| m.get(trace.ppgr_id.as_str()).map(|r| r.predicted[t].to_string()).unwrap_or_default())
                    .collect();
                writeln!(w, "{},{},{t},{obs},{}", trace.ppgr_id, trace.person_id, preds.join(","))?;
            }
        }
        Ok(())
    })?;
    Ok(())
}

fn trace_rmse(r: &RecordTrace) -> f64 {
    let sq: Vec<f64> = r
        .observed
        .iter()
        .zip(&r.predicted)
        .filter_map(|(o, p)| o.map(|o| (o - p).powi(2)))
        .collect();
    (sq.iter().sum::<f64>() / sq.len() as f64).sqrt()
}

fn run(cli: Cli) -> Result<()> {
    let (cmd, args) = match cli.command {
        Command::Simulate(a) => ("simulate", a),
        Command::Train(a) => ("train", a),
        Command::FitMech(a) => ("fit-mech", a),
        Command::Features(a) => ("features", a),
        Command::Embed(a) => ("embed", a),
        Command::Cluster(a) => ("cluster", a),
        Command::Evaluate(a) => ("evaluate", a),
        Command::Report(a) => ("report", a),
    };
    let ctx = Ctx::new(args)?;
    match cmd {
        "simulate" => simulate(&ctx),
        "train" => train_cmd(&ctx),
        "fit-mech" => fit_mech_cmd(&ctx),
        "features" => features_cmd(&ctx),
        "embed" => embed_cmd(&ctx),
        "cluster" => cluster_cmd(&ctx),
        "evaluate" => evaluate_all(&ctx).map(|_| ()),
        _ => report_cmd(&ctx),
    }
}

fn threads() -> usize {
    std::env::var("GLYCO_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n| n > 0)
        .unwrap_or(1)
}

/// Parses `argv` (program name first) and runs one command; returns the exit code.
fn cli_main<I, T>(argv: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                2
            } else {
                1
            }
        }
    }
}

fn main() -> ExitCode {
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads()).build_global() {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    ExitCode::from(cli_main(std::env::args_os()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use glyco::datamodel::load_csv;

    const SMALL: &str = "group.prediabetes.persons = 3\ngroup.t2d.persons = 3\ngroup.prediabetes.ppgrs = 3\n\
                         group.t2d.ppgrs = 3\nepochs = 2\nbatch = 6\ntcl.epochs = 5\nmech.steps = 20\n";

    fn glyco(dir: &std::path::Path, args: &[&str]) -> u8 {
        let cfg = dir.join("small.cfg");
        if !cfg.exists() {
            std::fs::write(&cfg, SMALL).unwrap();
        }
        let out = dir.join("out");
        let mut argv = vec!["glyco".to_string()];
        argv.extend(args.iter().map(|s| s.to_string()));
        argv.extend(["--config".into(), cfg.display().to_string(), "--out".into(), out.display().to_string()]);
        cli_main(argv)
    }

    #[test]
    fn unknown_flag_is_usage_error() {
        assert_eq!(cli_main(["glyco", "simulate", "--bogus"]), 2);
        assert_eq!(cli_main(["glyco", "frobnicate"]), 2);
        assert_eq!(cli_main(["glyco", "--help"]), 0);
    }

    #[test]
    fn validation_and_runtime_exit_codes() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(glyco(dir.path(), &["simulate", "--k", "0"]), 2);
        // No cohort in the output directory yet.
        assert_eq!(glyco(dir.path(), &["features"]), 1);
        let bad = dir.path().join("bad.cfg");
        std::fs::write(&bad, "no_such_key = 3\n").unwrap();
        assert_eq!(cli_main(["glyco", "simulate", "--config", bad.to_str().unwrap()]), 2);
    }

    #[test]
    fn simulate_is_deterministic() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        assert_eq!(glyco(a.path(), &["simulate", "--seed", "3"]), 0);
        assert_eq!(glyco(b.path(), &["simulate", "--seed", "3"]), 0);
        for f in ["cohort.csv", "ground_truth.csv"] {
            let x = std::fs::read(a.path().join("out").join(f)).unwrap();
            assert_eq!(x, std::fs::read(b.path().join("out").join(f)).unwrap());
            assert!(String::from_utf8_lossy(&x).starts_with("# config_hash="));
        }
    }

    #[test]
    fn one_hot_labels_score_perfectly() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(glyco(dir.path(), &["simulate"]), 0);
        let out = dir.path().join("out");
        let ds = load_csv(out.join("cohort.csv")).unwrap();
        let labels = ds.person_labels();
        let vectors = ds
            .records
            .iter()
            .map(|r| {
                let d = labels[&r.person_id].index();
                (0..2).map(|i| if i == d { 1.0 } else { 0.0 }).collect()
            })
            .collect();
        EmbeddingTable::from_dataset(&ds, vectors, None).unwrap().save(out.join("onehot_embeddings.csv"), None).unwrap();
        assert_eq!(glyco(dir.path(), &["evaluate", "--method", "onehot"]), 0);
        let scores = std::fs::read_to_string(out.join("scores.csv")).unwrap();
        assert_eq!(scores.lines().nth(2), Some("onehot,1.0000,1.0000,1.0000,1.0000"));
    }

    #[test]
    fn small_pipeline_writes_report_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        for step in [
            &["simulate"][..],
            &["train", "--model", "hybrid"],
            &["embed", "--model", "hybrid"],
            &["embed", "--model", "raw"],
            &["fit-mech"],
            &["features"],
            &["cluster", "--method", "features"],
            &["report"],
        ] {
            assert_eq!(glyco(dir.path(), step), 0, "{step:?}");
        }
        let out = dir.path().join("out");
        for f in [
            "hybrid.ckpt.json",
            "hybrid_history.csv",
            "hybrid_reconstructions.csv",
            "features_clusters.csv",
            "scores.csv",
            "hybrid_report.json",
            "dtw_report.json",
            "pca_hybrid.csv",
            "scatter_hybrid_tau_m_G_b.csv",
            "reconstruction_rmse.csv",
            "reconstructions_compare.csv",
        ] {
            assert!(out.join(f).exists(), "missing {f}");
        }
        let svgs = std::fs::read_dir(out.join("figures")).unwrap().count();
        assert!(svgs > 0);
        let scores = std::fs::read_to_string(out.join("scores.csv")).unwrap();
        for m in ["hybrid", "mechanistic", "features", "raw", "dtw"] {
            assert!(scores.lines().any(|l| l.starts_with(&format!("{m},"))), "{m} missing from scores");
        }
    }
}
