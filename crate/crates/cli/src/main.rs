//! `refu`: synthetic garment experiments with the repulsive-force layer.
//!
//! Stages share one output directory:
//!
//! ```text
//! refu gen-data  --config cfg.json --out runs/a   # manifest.json, meshes/*.obj
//! refu train-sdf --config cfg.json --out runs/a   # sdf.json, sdf_curve.csv
//! refu train     --config cfg.json --out runs/a   # models.json, curves/*.csv
//! refu eval      --config cfg.json --out runs/a   # metrics.csv, *.json
//! refu report    --config cfg.json --out runs/a   # trend.csv, table on stdout
//! ```
//!
//! `--config` also accepts the preset names `desk` and `smoke`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use refu_core::mesh::save_obj;
use refu_core::pipeline::{
    evaluate, gen_synthetic_dataset, learned_sdf, metrics_csv, read_metrics_csv, train_models, train_sdf, trend_csv,
    trend_rows, write_report, Dataset, DatasetManifest, EpochStats, ExperimentConfig, LearnedSdf, TrainedModels,
};
use refu_core::sdf::{curve_csv, SdfTrainer};

#[derive(Parser)]
#[command(name = "refu", version, about = "Garment-body collision experiments on synthetic data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset and a few sample meshes.
    GenData(Common),
    /// Train the learned body SDF.
    TrainSdf(Common),
    /// Train the backbone, collision-loss and layer models.
    Train(Common),
    /// Evaluate every configured method on the test split.
    Eval(EvalArgs),
    /// Summarize metrics.csv relative to the backbone.
    Report(Common),
    /// Run every stage in order.
    Run(EvalArgs),
}

#[derive(Args)]
struct Common {
    /// Config file (JSON) or preset name: `desk`, `smoke`.
    #[arg(long, default_value = "desk")]
    config: String,
    /// Overrides the config's root seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory shared by all stages.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Measure per-stage timings (timings.json, timing columns).
    #[arg(long)]
    timings: bool,
}

const SAMPLE_MESHES: usize = 3;

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match c.config.as_str() {
        "desk" => ExperimentConfig::desk(),
        "smoke" => ExperimentConfig::smoke(),
        path => ExperimentConfig::load(Path::new(path)).with_context(|| format!("loading config {path}"))?,
    };
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    cfg.output_dir = Some(c.out.clone());
    cfg.validate()?;
    std::fs::create_dir_all(&c.out).with_context(|| format!("creating {}", c.out.display()))?;
    Ok(cfg)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn gen_data(cfg: &ExperimentConfig, out: &Path) -> Result<Dataset> {
    let start = Instant::now();
    let data = gen_synthetic_dataset(&cfg.dataset, cfg.seed)?;
    info!(
        "generated {} train / {} test frames in {:.1?}",
        data.train.len(),
        data.test.len(),
        start.elapsed()
    );
    // The output directory is left out so runs in different places match.
    let saved = ExperimentConfig {
        output_dir: None,
        ..cfg.clone()
    };
    write_json(&out.join("config.json"), &saved)?;
    write_json(&out.join("manifest.json"), &data.manifest())?;
    let meshes = out.join("meshes");
    std::fs::create_dir_all(&meshes)?;
    for (name, frames) in [("train", &data.train), ("test", &data.test)] {
        for f in frames.iter().take(SAMPLE_MESHES) {
            let id = f.record.id;
            save_obj(f.body.mesh(), meshes.join(format!("{name}_{id:04}_body.obj")))?;
            save_obj(
                &data.garment_mesh(&f.garment)?,
                meshes.join(format!("{name}_{id:04}_garment.obj")),
            )?;
        }
    }
    Ok(data)
}

/// The dataset of `out`, rebuilt from its manifest; generated on the spot
/// when no manifest exists yet.
fn load_data(cfg: &ExperimentConfig, out: &Path) -> Result<Dataset> {
    let path = out.join("manifest.json");
    if !path.exists() {
        info!("no manifest in {}; generating the dataset", out.display());
        return gen_data(cfg, out);
    }
    let manifest: DatasetManifest = serde_json::from_str(&std::fs::read_to_string(&path)?)?;
    if manifest.spec != cfg.dataset || manifest.seed != cfg.seed {
        bail!(
            "{} was generated from a different dataset spec or seed; rerun gen-data",
            path.display()
        );
    }
    Ok(Dataset::from_manifest(&manifest)?)
}

fn train_sdf_stage(cfg: &ExperimentConfig, data: &Dataset, out: &Path) -> Result<LearnedSdf> {
    let start = Instant::now();
    let stage = train_sdf(cfg, data)?;
    info!("trained the body SDF in {:.1?}", start.elapsed());
    stage.trainer.save(&out.join("sdf.json"))?;
    std::fs::write(out.join("sdf_curve.csv"), curve_csv(&stage.trainer.curve))?;
    write_json(&out.join("sdf_probe.json"), &stage.probe)?;
    Ok(stage.learned())
}

fn load_sdf(cfg: &ExperimentConfig, out: &Path) -> Result<Option<LearnedSdf>> {
    if !cfg.needs_neural_sdf() {
        return Ok(None);
    }
    let path = out.join("sdf.json");
    let trainer = SdfTrainer::load(&path).with_context(|| format!("loading {}; run train-sdf first", path.display()))?;
    if trainer.net_config != cfg.sdf_net {
        bail!("{} was trained with a different network config", path.display());
    }
    Ok(Some(learned_sdf(&trainer)))
}

fn curve_rows(curve: &[EpochStats]) -> String {
    let mut out = String::from("epoch,lr,loss,l_r,l_c,post_vf\n");
    for e in curve {
        out.push_str(&format!(
            "{},{:.6e},{:.6e},{:.6e},{:.6e},{}\n",
            e.epoch, e.lr, e.loss, e.l_r, e.l_c, e.post_vf
        ));
    }
    out
}

fn train_stage(cfg: &ExperimentConfig, data: &Dataset, neural: Option<&LearnedSdf>, out: &Path) -> Result<TrainedModels> {
    let start = Instant::now();
    let models = train_models(cfg, data, neural)?;
    info!("trained {} layer models in {:.1?}", models.refu.len(), start.elapsed());
    models.save(&out.join("models.json"))?;
    let curves = out.join("curves");
    std::fs::create_dir_all(&curves)?;
    std::fs::write(curves.join("backbone.csv"), curve_rows(&models.backbone_curve))?;
    for (tag, (_, curve)) in &models.collision {
        std::fs::write(curves.join(format!("{tag}.csv")), curve_rows(curve))?;
    }
    for (tag, m) in &models.refu {
        std::fs::write(curves.join(format!("{tag}.csv")), curve_rows(&m.curve))?;
    }
    Ok(models)
}

fn load_models(cfg: &ExperimentConfig, out: &Path) -> Result<TrainedModels> {
    let path = out.join("models.json");
    let models = TrainedModels::load(&path).with_context(|| format!("loading {}; run train first", path.display()))?;
    if models.config_hash != cfg.hash() {
        bail!("{} was trained from a different config; rerun train", path.display());
    }
    Ok(models)
}

fn eval_stage(
    cfg: &ExperimentConfig,
    data: &Dataset,
    models: &TrainedModels,
    neural: Option<&LearnedSdf>,
    timings: bool,
    out: &Path,
) -> Result<()> {
    let start = Instant::now();
    let report = evaluate(cfg, data, models, neural, timings)?;
    info!("evaluated {} methods in {:.1?}", report.methods.len(), start.elapsed());
    write_report(&report, cfg, out)?;
    print!("{}", metrics_csv(&report));
    Ok(())
}

fn report_stage(out: &Path) -> Result<()> {
    let path = out.join("metrics.csv");
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}; run eval first", path.display()))?;
    let rows = read_metrics_csv(&text)?;
    let trends = trend_rows(&rows)?;
    std::fs::write(out.join("trend.csv"), trend_csv(&trends))?;
    println!(
        "{:<16} {:<6} {:>9} {:>9} {:>9} {:>8} {:>8} {:>12}",
        "method", "sdf", "MPVE_mm", "VFCP_%", "CFMP_%", "avg_VF", "avg_EE", "pen_energy"
    );
    for r in &rows {
        println!(
            "{:<16} {:<6} {:>9.4} {:>9.4} {:>9.2} {:>8.3} {:>8.3} {:>12.4e}",
            r.method, r.sdf_mode, r.mpve_mm, r.vfcp_pct, r.cfmp_pct, r.avg_vf, r.avg_ee, r.pen_energy
        );
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::GenData(c) => {
            let cfg = load_config(&c)?;
            gen_data(&cfg, &c.out)?;
        }
        Command::TrainSdf(c) => {
            let cfg = load_config(&c)?;
            let data = load_data(&cfg, &c.out)?;
            train_sdf_stage(&cfg, &data, &c.out)?;
        }
        Command::Train(c) => {
            let cfg = load_config(&c)?;
            let data = load_data(&cfg, &c.out)?;
            let neural = load_sdf(&cfg, &c.out)?;
            train_stage(&cfg, &data, neural.as_ref(), &c.out)?;
        }
        Command::Eval(a) => {
            let cfg = load_config(&a.common)?;
            let data = load_data(&cfg, &a.common.out)?;
            let neural = load_sdf(&cfg, &a.common.out)?;
            let models = load_models(&cfg, &a.common.out)?;
            eval_stage(&cfg, &data, &models, neural.as_ref(), a.timings, &a.common.out)?;
        }
        Command::Report(c) => report_stage(&c.out)?,
        Command::Run(a) => {
            let out = &a.common.out;
            let cfg = load_config(&a.common)?;
            let data = gen_data(&cfg, out)?;
            let neural = if cfg.needs_neural_sdf() {
                Some(train_sdf_stage(&cfg, &data, out)?)
            } else {
                None
            };
            let models = train_stage(&cfg, &data, neural.as_ref(), out)?;
            eval_stage(&cfg, &data, &models, neural.as_ref(), a.timings, out)?;
            report_stage(out)?;
        }
    }
    Ok(())
}
