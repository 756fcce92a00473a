//! Subcommand bodies. Each writes its artifacts under the run directory and
//! a copy of the resolved configuration next to them.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use wavesrc::dataset::{self, Dataset, ObservationSet};
use wavesrc::experiments::{self, Heatmap};
use wavesrc::inference::{ForwardModel, NoiseModel, SolverModel};
use wavesrc::mlp::{self, Mlp, TrainedModel};
use wavesrc::rng::{self, stream};
use wavesrc::textio::{self, fmt_f64};
use wavesrc::wave;
use wavesrc::{Error, Point, Result};

use crate::config::{Config, ForwardChoice, RawConfig};

/// Environment variable overriding the root under which timestamped run
/// directories are created.
pub const RUNS_ROOT_ENV: &str = "WAVESRC_RUNS_ROOT";

pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.txt";

/// Noise stream index for synthetic single-source observations, kept clear
/// of the per-test-source indices.
const SYNTHETIC_NOISE_INDEX: u64 = 1 << 32;

pub struct Run {
    pub raw: RawConfig,
    pub config: Config,
    pub dir: PathBuf,
}

impl Run {
    /// Creates the run directory (explicit, or `<root>/<timestamp>`) and
    /// echoes the resolved configuration into it.
    pub fn start(raw: RawConfig, explicit_dir: Option<&Path>) -> Result<Self> {
        let config = raw.resolve()?;
        let dir = match explicit_dir {
            Some(d) => d.to_path_buf(),
            None => fresh_run_dir(&runs_root())?,
        };
        textio::create_dir_all(&dir)?;
        let run = Run { raw, config, dir };
        textio::write_with(&run.dir.join(RESOLVED_CONFIG_FILE), |w| w.write_all(run.raw.to_text().as_bytes()))?;
        Ok(run)
    }

    fn dataset_dir(&self, given: Option<&Path>) -> PathBuf {
        given.map(Path::to_path_buf).unwrap_or_else(|| self.dir.join("dataset"))
    }

    fn model_path(&self, given: Option<&Path>) -> PathBuf {
        given.map(Path::to_path_buf).unwrap_or_else(|| self.dir.join("model.txt"))
    }
}

pub fn runs_root() -> PathBuf {
    std::env::var_os(RUNS_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn fresh_run_dir(root: &Path) -> Result<PathBuf> {
    let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S").to_string();
    let mut dir = root.join(&stamp);
    let mut n = 1;
    while dir.exists() {
        dir = root.join(format!("{stamp}-{n}"));
        n += 1;
    }
    Ok(dir)
}

fn log(msg: impl AsRef<str>) {
    eprintln!("[wavesrc] {}", msg.as_ref());
}

pub fn simulate(run: &Run, out: Option<&Path>) -> Result<()> {
    let dir = run.dataset_dir(out);
    let m = &run.config.manifest;
    log(format!(
        "simulating {} train + {} test sources on a {}x{} grid ({} steps)",
        m.train_sources.len(),
        m.test_sources.len(),
        m.grid.nx,
        m.grid.ny,
        m.grid.nt
    ));
    dataset::build_dataset(m, &dir)?;
    log(format!("dataset written to {}", dir.display()));
    Ok(())
}

pub fn train(run: &Run, dataset_dir: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let ds = Dataset::load(&run.dataset_dir(dataset_dir))?;
    let train = ds.training_samples();
    let valid = ds.validation_samples();
    log(format!("training on {} rows, validating on {}", train.len(), valid.len()));
    let scaling = mlp::InputScaling::for_domain(ds.manifest.grid.t_end);
    let net = Mlp::init(&mlp::PAPER_DIMS, &mlp::PAPER_SKIPS, scaling, run.config.seed)?;
    let outcome = mlp::train_with_progress(&net, &train, &valid, &run.config.train, |r| {
        log(format!(
            "epoch {} lr {:.3e} train {:.6e} valid {:.6e}",
            r.epoch, r.learning_rate, r.train_loss, r.valid_mse
        ))
    })?;
    textio::write_with(&run.dir.join("history.csv"), |w| {
        writeln!(w, "epoch,learning_rate,train_loss,valid_mse")?;
        for r in &outcome.history {
            writeln!(
                w,
                "{},{},{},{}",
                r.epoch,
                fmt_f64(r.learning_rate),
                fmt_f64(r.train_loss),
                fmt_f64(r.valid_mse)
            )?;
        }
        Ok(())
    })?;
    let path = run.model_path(out);
    TrainedModel {
        net: outcome.net,
        sigma1_sq: outcome.sigma1_sq,
    }
    .save(&path)?;
    log(format!("sigma1_sq = {:.6e}; model written to {}", outcome.sigma1_sq, path.display()));
    Ok(())
}

pub enum ObservationSource<'a> {
    TestIndex(usize),
    File(&'a Path),
}

pub fn infer(run: &Run, model: Option<&Path>, dataset_dir: Option<&Path>, which: ObservationSource) -> Result<()> {
    let model = TrainedModel::load(&run.model_path(model))?;
    let obs = match which {
        ObservationSource::TestIndex(k) => {
            let dir = run.dataset_dir(dataset_dir);
            let manifest = load_manifest(&dir)?;
            if k >= manifest.test_sources.len() {
                return Err(Error::InvalidArgument(format!(
                    "test source {k} out of range (dataset has {})",
                    manifest.test_sources.len()
                )));
            }
            dataset::load_observations(&Dataset::test_path(&dir, k), &manifest, k)?
        }
        ObservationSource::File(p) => {
            dataset::read_observations(p, run.config.manifest.sigma0_sq, &run.config.source)?
        }
    };
    let noise = NoiseModel::new(obs.sigma0_sq, model.sigma1_sq)?;
    let cfg = &run.config.localize;
    let loc = experiments::localize(&obs, &model.net, noise, cfg, rng::derive_seed(run.config.seed, stream::MCMC, 0))?;
    loc.chain.write_csv(&run.dir.join("chain.csv"))?;
    let heat = run.dir.join("heatmaps");
    textio::create_dir_all(&heat)?;
    experiments::export_grid_heatmap(&loc.grid, obs.truth(), &heat, "grid")?;
    Heatmap::from_samples(&loc.chain.samples, cfg.heatmap_bins, obs.truth())?.write(&heat, "chain")?;
    let text = loc.summary.to_text();
    textio::write_with(&run.dir.join("summary.txt"), |w| w.write_all(text.as_bytes()))?;
    print!("{text}");
    Ok(())
}

fn load_manifest(dir: &Path) -> Result<dataset::DatasetManifest> {
    let path = Dataset::manifest_path(dir);
    dataset::DatasetManifest::from_text(&textio::read_to_string(&path)?, &path)
}

pub fn suite(run: &Run, model: Option<&Path>, dataset_dir: Option<&Path>) -> Result<()> {
    let model = TrainedModel::load(&run.model_path(model))?;
    let dir = run.dataset_dir(dataset_dir);
    let manifest = load_manifest(&dir)?;
    let mut n = manifest.test_sources.len();
    if run.config.suite_max_sources > 0 {
        n = n.min(run.config.suite_max_sources);
    }
    let observations = (0..n)
        .map(|k| dataset::load_observations(&Dataset::test_path(&dir, k), &manifest, k))
        .collect::<Result<Vec<_>>>()?;
    log(format!("localizing {n} test sources"));
    let report =
        experiments::run_localization_suite(&observations, &model.net, model.sigma1_sq, &run.config.localize, run.config.seed);
    report.write_csv(&run.dir.join("summary.csv"))?;
    let heat = run.dir.join("heatmaps");
    textio::create_dir_all(&heat)?;
    for row in &report.rows {
        row.heatmap.write(&heat, &format!("src_{}", row.index))?;
    }
    for (k, e) in &report.failures {
        log(format!("source {k} failed: {e}"));
    }
    match (report.aggregate_mse(), report.median_mse()) {
        (Some(a), Some(m)) => println!("aggregate_mse = {}\nmedian_mse = {}", fmt_f64(a), fmt_f64(m)),
        _ => println!("aggregate_mse = absent"),
    }
    if report.rows.is_empty() && !report.failures.is_empty() {
        return Err(Error::InvalidArgument("every source failed to localize".into()));
    }
    Ok(())
}

/// Solver traces for one source at the given receivers, with observation
/// noise from a stream reserved for synthetic data.
pub fn synthetic_observations(config: &Config, source: Point, receivers: &dataset::ReceiverSet) -> Result<ObservationSet> {
    let m = &config.manifest;
    let sp = config.source.with_location(source);
    let clean = wave::simulate(&sp, &m.medium, &m.grid, receivers.positions())?;
    let noisy = dataset::add_noise(
        &clean.values,
        m.sigma0_sq,
        rng::derive_seed(config.seed, stream::NOISE, SYNTHETIC_NOISE_INDEX),
    )?;
    ObservationSet::new(receivers.clone(), clean.times, noisy, m.sigma0_sq, Some(sp))
}

pub fn ablate(run: &Run, model: Option<&Path>) -> Result<()> {
    let model = TrainedModel::load(&run.model_path(model))?;
    let c = &run.config;
    let obs = synthetic_observations(c, c.ablation_source, &c.manifest.receivers)?;
    let subsets = experiments::nested_subsets(obs.receivers.len(), &c.removal_order);
    let rows = experiments::ablate_receivers(&obs, &model.net, model.sigma1_sq, &c.localize, c.seed, &subsets)?;
    experiments::write_ablation_csv(&rows, &run.dir.join("ablation.csv"))?;
    for r in &rows {
        println!("{} receivers: mse = {}", r.n_receivers, fmt_f64(r.mse));
    }
    Ok(())
}

pub fn symmetry(run: &Run, model: Option<&Path>) -> Result<()> {
    let c = &run.config;
    let m = &c.manifest;
    let solver = SolverModel {
        medium: m.medium,
        grid: m.grid,
        template: c.source,
    };
    // Exact traces; the demo is about the physics, not the noise.
    let clean = wave::simulate(
        &c.source.with_location(c.symmetry_source),
        &m.medium,
        &m.grid,
        c.symmetry_receivers.positions(),
    )?;
    let obs = ObservationSet::new(
        c.symmetry_receivers.clone(),
        clean.times,
        clean.values,
        m.sigma0_sq,
        Some(c.source.with_location(c.symmetry_source)),
    )?;
    let trained;
    let (forward, sigma1_sq): (&dyn ForwardModel, f64) = match c.symmetry_forward {
        ForwardChoice::Solver => (&solver, 0.0),
        ForwardChoice::Surrogate => {
            trained = TrainedModel::load(&run.model_path(model))?;
            (&trained.net, trained.sigma1_sq)
        }
    };
    let noise = NoiseModel::new(obs.sigma0_sq, sigma1_sq)?;
    let report = experiments::symmetry_demo(&obs, forward, noise, c.localize.grid_resolution)?;
    let text = report.to_text();
    textio::write_with(&run.dir.join("symmetry.txt"), |w| w.write_all(text.as_bytes()))?;
    let heat = run.dir.join("heatmaps");
    textio::create_dir_all(&heat)?;
    experiments::export_grid_heatmap(&report.grid, obs.truth(), &heat, "symmetry")?;
    print!("{text}");
    Ok(())
}
