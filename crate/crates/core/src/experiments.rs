//! Studies built on the localization pipeline: the per-source accuracy suite,
//! receiver ablation, the mirror-symmetry identifiability demo and heatmap
//! exports.

use std::io::Write as _;
use std::path::Path;

use ndarray::Array2;

use crate::dataset::{ObservationSet, ReceiverSet};
use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::inference::{self, Chain, ForwardModel, GridResult, MhConfig, NoiseModel, PosteriorSpec, Summary};
use crate::par;
use crate::rng::{self, stream};
use crate::textio::{self, fmt_f64};

/// Removal order for the ablation table: (0.25, 0.125), then (0.75, 0.625),
/// then (0.5, 0.5), as indices into the default receiver set.
pub const PAPER_REMOVAL_ORDER: [usize; 3] = [2, 3, 1];

pub const DEFAULT_CHAIN_BINS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct LocalizeConfig {
    pub grid_resolution: usize,
    /// The seed here is a base; each run derives its own stream.
    pub mh: MhConfig,
    pub heatmap_bins: usize,
}

impl Default for LocalizeConfig {
    fn default() -> Self {
        LocalizeConfig {
            grid_resolution: 150,
            mh: MhConfig::default(),
            heatmap_bins: DEFAULT_CHAIN_BINS,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Localization {
    pub grid: GridResult,
    pub chain: Chain,
    pub summary: Summary,
}

/// Grid search for the global mode, then MH from the best lattice point.
pub fn localize<M: ForwardModel + ?Sized>(
    obs: &ObservationSet,
    model: &M,
    noise: NoiseModel,
    cfg: &LocalizeConfig,
    mh_seed: u64,
) -> Result<Localization> {
    let spec = PosteriorSpec::new(obs, model, noise)?;
    let grid = inference::grid_search(&spec, cfg.grid_resolution)?;
    let mh = MhConfig {
        seed: mh_seed,
        ..cfg.mh.clone()
    };
    let chain = inference::mh_sample(grid.best, &spec, &mh)?;
    let summary = inference::summarize(&chain, obs.truth())?;
    Ok(Localization { grid, chain, summary })
}

#[derive(Debug, Clone)]
pub struct SuiteRow {
    pub index: usize,
    pub truth: Option<Point>,
    pub grid_best: Point,
    pub grid_best_value: f64,
    pub summary: Summary,
    pub heatmap: Heatmap,
}

#[derive(Debug, Clone, Default)]
pub struct SuiteReport {
    pub rows: Vec<SuiteRow>,
    /// Sources whose localization failed, with the error text.
    pub failures: Vec<(usize, String)>,
}

impl SuiteReport {
    fn mses(&self) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.summary.mse).collect()
    }

    /// Mean of per-source MSEs; `None` without any scored source.
    pub fn aggregate_mse(&self) -> Option<f64> {
        let m = self.mses();
        (!m.is_empty()).then(|| m.iter().sum::<f64>() / m.len() as f64)
    }

    pub fn median_mse(&self) -> Option<f64> {
        let mut m = self.mses();
        if m.is_empty() {
            return None;
        }
        m.sort_by(f64::total_cmp);
        let n = m.len();
        Some(if n % 2 == 1 { m[n / 2] } else { 0.5 * (m[n / 2 - 1] + m[n / 2]) })
    }

    /// `summary.csv`: one row per localized source, sorted by index.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        textio::write_with(path, |w| {
            writeln!(
                w,
                "source,truth_x,truth_y,grid_x,grid_y,grid_log_post,mean_x,mean_y,cov_xx,cov_xy,cov_yy,mse,acceptance_rate"
            )?;
            let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
            for r in &self.rows {
                let s = &r.summary;
                writeln!(
                    w,
                    "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                    r.index,
                    opt(r.truth.map(|t| t.x)),
                    opt(r.truth.map(|t| t.y)),
                    fmt_f64(r.grid_best.x),
                    fmt_f64(r.grid_best.y),
                    fmt_f64(r.grid_best_value),
                    fmt_f64(s.mean.x),
                    fmt_f64(s.mean.y),
                    fmt_f64(s.cov[0][0]),
                    fmt_f64(s.cov[0][1]),
                    fmt_f64(s.cov[1][1]),
                    opt(s.mse),
                    fmt_f64(s.acceptance_rate)
                )?;
            }
            for (k, e) in &self.failures {
                writeln!(w, "# source {k} failed: {}", e.replace('\n', " "))?;
            }
            match self.aggregate_mse() {
                Some(a) => writeln!(w, "# aggregate_mse = {}", fmt_f64(a))?,
                None => writeln!(w, "# aggregate_mse = absent")?,
            }
            Ok(())
        })
    }
}

/// Localizes every observation set independently. Source `k` uses MH stream
/// `(seed, MCMC, k)`; failures are recorded and skipped.
pub fn run_localization_suite<M: ForwardModel + ?Sized>(
    observations: &[ObservationSet],
    model: &M,
    sigma1_sq: f64,
    cfg: &LocalizeConfig,
    seed: u64,
) -> SuiteReport {
    let results = par::map_indexed(observations.len(), |k| {
        let obs = &observations[k];
        NoiseModel::new(obs.sigma0_sq, sigma1_sq)
            .and_then(|noise| localize(obs, model, noise, cfg, rng::derive_seed(seed, stream::MCMC, k as u64)))
            .and_then(|loc| {
                let heatmap = Heatmap::from_samples(&loc.chain.samples, cfg.heatmap_bins, obs.truth())?;
                Ok(SuiteRow {
                    index: k,
                    truth: obs.truth(),
                    grid_best: loc.grid.best,
                    grid_best_value: loc.grid.best_value,
                    summary: loc.summary,
                    heatmap,
                })
            })
    });
    let mut report = SuiteReport::default();
    for (k, r) in results.into_iter().enumerate() {
        match r {
            Ok(row) => report.rows.push(row),
            Err(e) => report.failures.push((k, e.to_string())),
        }
    }
    report
}

/// Nested receiver subsets: the full set, then one fewer receiver per step
/// following `removal_order`.
pub fn nested_subsets(n_receivers: usize, removal_order: &[usize]) -> Vec<Vec<usize>> {
    let mut current: Vec<usize> = (0..n_receivers).collect();
    let mut out = vec![current.clone()];
    for r in removal_order {
        current.retain(|i| i != r);
        out.push(current.clone());
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub n_receivers: usize,
    pub receivers: Vec<Point>,
    pub mean: Point,
    pub mse: f64,
    pub acceptance_rate: f64,
}

/// Localizes one source with each receiver subset, all with the same MH seed.
/// Every subset is checked for identifiability before any work starts.
pub fn ablate_receivers<M: ForwardModel + ?Sized>(
    obs: &ObservationSet,
    model: &M,
    sigma1_sq: f64,
    cfg: &LocalizeConfig,
    seed: u64,
    subsets: &[Vec<usize>],
) -> Result<Vec<AblationRow>> {
    let truth = obs
        .truth()
        .ok_or_else(|| Error::InvalidArgument("ablation needs observations with a known source".into()))?;
    let selected = subsets
        .iter()
        .map(|s| {
            let o = obs.select_receivers(s)?;
            o.receivers.check_identifiable()?;
            Ok(o)
        })
        .collect::<Result<Vec<_>>>()?;
    let noise = NoiseModel::new(obs.sigma0_sq, sigma1_sq)?;
    let mh_seed = rng::derive_seed(seed, stream::MCMC, 0);
    par::map_slice(&selected, |o| {
        let loc = localize(o, model, noise, cfg, mh_seed)?;
        Ok(AblationRow {
            n_receivers: o.receivers.len(),
            receivers: o.receivers.positions().to_vec(),
            mean: loc.summary.mean,
            mse: loc.summary.mse.unwrap_or_else(|| loc.summary.mean.dist_sq(truth)),
            acceptance_rate: loc.summary.acceptance_rate,
        })
    })
    .into_iter()
    .collect()
}

/// `ablation.csv`: receiver count, posterior mean and MSE per row.
pub fn write_ablation_csv(rows: &[AblationRow], path: &Path) -> Result<()> {
    textio::write_with(path, |w| {
        writeln!(w, "n_receivers,receivers,mean_x,mean_y,mse,acceptance_rate")?;
        for r in rows {
            let rx: Vec<String> = r.receivers.iter().map(|p| format!("{}:{}", p.x, p.y)).collect();
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.n_receivers,
                rx.join(" "),
                fmt_f64(r.mean.x),
                fmt_f64(r.mean.y),
                fmt_f64(r.mse),
                fmt_f64(r.acceptance_rate)
            )?;
        }
        Ok(())
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mode {
    pub point: Point,
    pub index: (usize, usize),
    pub log_post: f64,
}

/// Grid cells strictly greater than all of their (up to 8) neighbours,
/// highest first.
pub fn local_maxima(grid: &GridResult) -> Vec<Mode> {
    let n = grid.resolution;
    let v = &grid.values;
    let mut modes = Vec::new();
    for j in 0..n {
        for i in 0..n {
            let c = v[[j, i]];
            if c == f64::NEG_INFINITY || c.is_nan() {
                continue;
            }
            let mut is_max = true;
            'nb: for dj in -1i64..=1 {
                for di in -1i64..=1 {
                    if dj == 0 && di == 0 {
                        continue;
                    }
                    let (jj, ii) = (j as i64 + dj, i as i64 + di);
                    if jj < 0 || ii < 0 || jj >= n as i64 || ii >= n as i64 {
                        continue;
                    }
                    if v[[jj as usize, ii as usize]] >= c {
                        is_max = false;
                        break 'nb;
                    }
                }
            }
            if is_max {
                modes.push(Mode {
                    point: inference::lattice_point(n, i, j),
                    index: (j, i),
                    log_post: c,
                });
            }
        }
    }
    modes.sort_by(|a, b| b.log_post.total_cmp(&a.log_post));
    modes
}

#[derive(Debug, Clone)]
pub struct SymmetryReport {
    pub grid: GridResult,
    /// Up to the two highest local maxima.
    pub modes: Vec<Mode>,
    pub truth: Option<Point>,
}

impl SymmetryReport {
    /// Log-posterior gap between the two highest modes.
    pub fn gap(&self) -> Option<f64> {
        match self.modes.as_slice() {
            [a, b, ..] => Some(a.log_post - b.log_post),
            _ => None,
        }
    }

    /// Whether the top two modes are reflections of each other across
    /// x = 1/2, to within `cells` lattice cells per axis.
    pub fn modes_are_mirrored(&self, cells: f64) -> bool {
        match self.modes.as_slice() {
            [a, b, ..] => {
                let m = a.point.mirror_x();
                let tol = cells / self.grid.resolution as f64 + 1e-12;
                (m.x - b.point.x).abs() <= tol && (m.y - b.point.y).abs() <= tol
            }
            _ => false,
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        if let Some(t) = self.truth {
            s.push_str(&format!("truth = {} {}\n", fmt_f64(t.x), fmt_f64(t.y)));
        }
        for (k, m) in self.modes.iter().enumerate() {
            s.push_str(&format!(
                "mode.{k} = {} {} {}\n",
                fmt_f64(m.point.x),
                fmt_f64(m.point.y),
                fmt_f64(m.log_post)
            ));
        }
        match self.gap() {
            Some(g) => s.push_str(&format!("gap = {}\n", fmt_f64(g))),
            None => s.push_str("gap = absent\n"),
        }
        s.push_str(&format!("mirrored = {}\n", self.modes_are_mirrored(1.0)));
        s
    }
}

/// Scans the log-posterior grid and reports its two highest local maxima.
/// With receivers on the line x = 1/2 the physics cannot distinguish a
/// source from its mirror image, so the two modes come out paired.
pub fn symmetry_demo<M: ForwardModel + ?Sized>(
    obs: &ObservationSet,
    model: &M,
    noise: NoiseModel,
    resolution: usize,
) -> Result<SymmetryReport> {
    let spec = PosteriorSpec::new(obs, model, noise)?;
    let grid = inference::grid_search(&spec, resolution)?;
    let mut modes = local_maxima(&grid);
    modes.truncate(2);
    Ok(SymmetryReport {
        grid,
        modes,
        truth: obs.truth(),
    })
}

/// Receivers at (0.5, 0.25) and (0.5, 0.75), both on the axis x = 1/2.
pub fn colinear_receivers() -> ReceiverSet {
    ReceiverSet::new(vec![Point::new(0.5, 0.25), Point::new(0.5, 0.75)]).expect("static receivers")
}

/// A 2-D histogram over the unit square; `counts[[j, i]]` covers
/// `[i/b, (i+1)/b) x [j/b, (j+1)/b)` with the upper edge folded into the last
/// bin.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub bins: usize,
    pub counts: Array2<u64>,
    pub truth: Option<Point>,
}

impl Heatmap {
    pub fn from_samples(samples: &[Point], bins: usize, truth: Option<Point>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("heatmap of an empty chain".into()));
        }
        if bins == 0 {
            return Err(Error::config("heatmap.bins", "must be >= 1"));
        }
        let mut counts = Array2::zeros((bins, bins));
        let idx = |u: f64| ((u * bins as f64).floor().max(0.0) as usize).min(bins - 1);
        for p in samples {
            counts[[idx(p.y), idx(p.x)]] += 1;
        }
        Ok(Heatmap { bins, counts, truth })
    }

    pub fn total(&self) -> u64 {
        self.counts.sum()
    }

    /// Bin frequencies summing to one.
    pub fn normalized(&self) -> Array2<f64> {
        let t = self.total() as f64;
        self.counts.mapv(|c| c as f64 / t)
    }

    /// Writes `<stem>.csv` (counts), `<stem>.norm.csv` (frequencies) and
    /// `<stem>.meta.txt` (bins, total, truth).
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        let b = self.bins;
        textio::write_with(&dir.join(format!("{stem}.csv")), |w| {
            for j in 0..b {
                let row: Vec<String> = (0..b).map(|i| self.counts[[j, i]].to_string()).collect();
                writeln!(w, "{}", row.join(","))?;
            }
            Ok(())
        })?;
        let norm = self.normalized();
        textio::write_matrix_csv(&dir.join(format!("{stem}.norm.csv")), b, b, |j, i| norm[[j, i]])?;
        write_meta(&dir.join(format!("{stem}.meta.txt")), "chain-histogram", b, self.truth, Some(self.total()))
    }
}

fn write_meta(path: &Path, kind: &str, bins: usize, truth: Option<Point>, total: Option<u64>) -> Result<()> {
    textio::write_with(path, |w| {
        writeln!(w, "kind = {kind}")?;
        writeln!(w, "bins = {bins}")?;
        if let Some(t) = total {
            writeln!(w, "total = {t}")?;
        }
        if let Some(t) = truth {
            writeln!(w, "truth_x = {}", fmt_f64(t.x))?;
            writeln!(w, "truth_y = {}", fmt_f64(t.y))?;
        }
        Ok(())
    })
}

/// Re-emits a log-posterior grid as `<stem>.csv` plus a `<stem>.norm.csv`
/// copy holding `exp(v - max)` normalized to sum to one.
pub fn export_grid_heatmap(grid: &GridResult, truth: Option<Point>, dir: &Path, stem: &str) -> Result<()> {
    let n = grid.resolution;
    if !grid.best_value.is_finite() {
        return Err(Error::InvalidArgument("log-posterior grid has no finite value".into()));
    }
    inference::write_grid_csv(grid, &dir.join(format!("{stem}.csv")))?;
    let w = grid.values.mapv(|v| (v - grid.best_value).exp());
    let z = w.sum();
    textio::write_matrix_csv(&dir.join(format!("{stem}.norm.csv")), n, n, |j, i| w[[j, i]] / z)?;
    write_meta(&dir.join(format!("{stem}.meta.txt")), "log-posterior-grid", n, truth, None)
}
