//! Posterior over the source location and the two-stage search: an
//! exhaustive log-posterior grid to find the global mode, then a random-walk
//! Metropolis-Hastings chain started there.

use std::io::Write as _;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::{Rng as _, SeedableRng};
use rand_distr::StandardNormal;

use crate::dataset::ObservationSet;
use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::mlp::Mlp;
use crate::par;
use crate::rng;
use crate::textio::{self, fmt_f64};
use crate::wave::{self, MediumParams, SimGrid, SourceParams};

/// Observation and surrogate noise variances. The likelihood uses their sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub sigma0_sq: f64,
    pub sigma1_sq: f64,
}

impl NoiseModel {
    pub fn new(sigma0_sq: f64, sigma1_sq: f64) -> Result<Self> {
        if !(sigma0_sq >= 0.0 && sigma0_sq.is_finite()) {
            return Err(Error::config("sigma0_sq", "must be finite and >= 0"));
        }
        if !(sigma1_sq >= 0.0 && sigma1_sq.is_finite()) {
            return Err(Error::config("sigma1_sq", "must be finite and >= 0"));
        }
        if sigma0_sq + sigma1_sq <= 0.0 {
            return Err(Error::config("sigma0_sq", "total noise variance must be > 0"));
        }
        Ok(NoiseModel { sigma0_sq, sigma1_sq })
    }

    pub fn total(&self) -> f64 {
        self.sigma0_sq + self.sigma1_sq
    }
}

/// Predicted receiver traces for a hypothesized source location, flattened
/// receiver-major to match `ObservationSet::values`.
pub trait ForwardModel: Sync {
    fn predict(&self, source: Point, receivers: &[Point], times: &[f64]) -> Vec<f64>;
}

impl ForwardModel for Mlp {
    fn predict(&self, source: Point, receivers: &[Point], times: &[f64]) -> Vec<f64> {
        let mut rows = Array2::zeros((receivers.len() * times.len(), 5));
        let mut k = 0;
        for r in receivers {
            for &t in times {
                let mut row = rows.row_mut(k);
                row[0] = source.x;
                row[1] = source.y;
                row[2] = r.x;
                row[3] = r.y;
                row[4] = t;
                k += 1;
            }
        }
        self.forward_batch(rows.view()).to_vec()
    }
}

/// The reference solver used directly as the forward map.
#[derive(Debug, Clone)]
pub struct SolverModel {
    pub medium: MediumParams,
    pub grid: SimGrid,
    /// Source parameters other than the location.
    pub template: SourceParams,
}

impl ForwardModel for SolverModel {
    fn predict(&self, source: Point, receivers: &[Point], _times: &[f64]) -> Vec<f64> {
        match wave::simulate(&self.template.with_location(source), &self.medium, &self.grid, receivers) {
            Ok(t) => t.values.iter().copied().collect(),
            Err(_) => vec![f64::NAN; receivers.len() * self.grid.n_out],
        }
    }
}

/// Unnormalized log-density over the plane.
pub trait LogTarget: Sync {
    fn log_density(&self, y: Point) -> f64;
}

impl<F: Fn(Point) -> f64 + Sync> LogTarget for F {
    fn log_density(&self, y: Point) -> f64 {
        self(y)
    }
}

/// Uniform prior on the unit square times the Gaussian likelihood of the
/// observations under the forward model.
pub struct PosteriorSpec<'a, M: ForwardModel + ?Sized> {
    pub observations: &'a ObservationSet,
    pub model: &'a M,
    pub noise: NoiseModel,
}

impl<'a, M: ForwardModel + ?Sized> PosteriorSpec<'a, M> {
    pub fn new(observations: &'a ObservationSet, model: &'a M, noise: NoiseModel) -> Result<Self> {
        NoiseModel::new(noise.sigma0_sq, noise.sigma1_sq)?;
        Ok(PosteriorSpec {
            observations,
            model,
            noise,
        })
    }

    /// `-sum (P - p(y))^2 / (2 (sigma0^2 + sigma1^2))` inside the unit square,
    /// `-inf` outside. The Gaussian normalizing constant is dropped.
    pub fn log_posterior(&self, y: Point) -> f64 {
        if !(y.is_finite() && y.in_unit_square()) {
            return f64::NEG_INFINITY;
        }
        let obs = self.observations;
        let pred = self.model.predict(y, obs.receivers.positions(), &obs.times);
        let sse: f64 = obs
            .values
            .iter()
            .zip(pred.iter())
            .map(|(p, q)| (p - q) * (p - q))
            .sum();
        let lp = -sse / (2.0 * self.noise.total());
        if lp.is_nan() {
            f64::NEG_INFINITY
        } else {
            lp
        }
    }
}

impl<M: ForwardModel + ?Sized> LogTarget for PosteriorSpec<'_, M> {
    fn log_density(&self, y: Point) -> f64 {
        self.log_posterior(y)
    }
}

/// Log-posterior values on the cell-center lattice `((i + 1/2)/n, (j + 1/2)/n)`.
/// `values[[j, i]]` holds the value at x index `i`, y index `j`, so rows run
/// along y and the row-major index is `j * n + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub resolution: usize,
    pub values: Array2<f64>,
    pub best: Point,
    pub best_index: (usize, usize),
    pub best_value: f64,
}

pub fn lattice_point(resolution: usize, i: usize, j: usize) -> Point {
    let n = resolution as f64;
    Point::new((i as f64 + 0.5) / n, (j as f64 + 0.5) / n)
}

/// First strict maximum in row-major order; `-inf` everywhere gives index 0.
pub fn argmax_row_major(values: ArrayView2<f64>) -> ((usize, usize), f64) {
    let ncols = values.ncols();
    let mut best = (0, f64::NEG_INFINITY);
    for (k, &v) in values.iter().enumerate() {
        if v > best.1 {
            best = (k, v);
        }
    }
    ((best.0 / ncols, best.0 % ncols), best.1)
}

/// Evaluates the target on the `resolution x resolution` lattice (rows in
/// parallel) and returns the argmax, ties going to the smallest row-major
/// index.
pub fn grid_search<T: LogTarget + ?Sized>(target: &T, resolution: usize) -> Result<GridResult> {
    if resolution < 2 {
        return Err(Error::config("inference.grid_resolution", "must be >= 2"));
    }
    let rows = par::map_indexed(resolution, |j| {
        (0..resolution)
            .map(|i| target.log_density(lattice_point(resolution, i, j)))
            .collect::<Vec<f64>>()
    });
    let values = Array2::from_shape_vec((resolution, resolution), rows.concat()).expect("square grid");
    let ((j, i), best_value) = argmax_row_major(values.view());
    Ok(GridResult {
        resolution,
        best: lattice_point(resolution, i, j),
        best_index: (j, i),
        best_value,
        values,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MhConfig {
    /// Covariance of the centered Gaussian proposal.
    pub proposal_cov: [[f64; 2]; 2],
    pub iterations: usize,
    pub burn_in: usize,
    pub seed: u64,
}

impl Default for MhConfig {
    /// `0.001 I` proposal, 50,000 iterations with the first 5,000 discarded.
    fn default() -> Self {
        MhConfig {
            proposal_cov: [[1e-3, 0.0], [0.0, 1e-3]],
            iterations: 50_000,
            burn_in: 5_000,
            seed: 0,
        }
    }
}

impl MhConfig {
    pub fn isotropic(var: f64, iterations: usize, burn_in: usize, seed: u64) -> Self {
        MhConfig {
            proposal_cov: [[var, 0.0], [0.0, var]],
            iterations,
            burn_in,
            seed,
        }
    }

    /// Lower Cholesky factor of the proposal covariance.
    pub fn cholesky(&self) -> Result<[[f64; 2]; 2]> {
        let [[a, b], [c, d]] = self.proposal_cov;
        if !(a.is_finite() && b.is_finite() && c.is_finite() && d.is_finite()) || b != c {
            return Err(Error::config("mh.proposal_cov", "must be finite and symmetric"));
        }
        if a <= 0.0 || a * d - b * c <= 0.0 {
            return Err(Error::config("mh.proposal_cov", "must be positive definite"));
        }
        let l00 = a.sqrt();
        let l10 = b / l00;
        let l11 = (d - l10 * l10).sqrt();
        Ok([[l00, 0.0], [l10, l11]])
    }

    pub fn validate(&self) -> Result<()> {
        self.cholesky()?;
        if self.iterations <= self.burn_in {
            return Err(Error::config("mh.iterations", "must exceed mh.burn_in"));
        }
        Ok(())
    }
}

/// Post-burn-in states of a Metropolis-Hastings run, repeats included.
#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    pub samples: Vec<Point>,
    pub log_post: Vec<f64>,
    /// Whether the move into each recorded state was an accepted proposal.
    pub accepted_flags: Vec<bool>,
    /// Accepted proposals over the whole run, burn-in included.
    pub accepted: usize,
    pub proposed: usize,
    pub burn_in: usize,
}

impl Chain {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    /// CSV with header `iter,y1,y2,log_post,accepted`; `iter` counts from the
    /// start of the run.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        textio::write_with(path, |w| {
            writeln!(w, "iter,y1,y2,log_post,accepted")?;
            for (k, (p, (lp, acc))) in self
                .samples
                .iter()
                .zip(self.log_post.iter().zip(&self.accepted_flags))
                .enumerate()
            {
                writeln!(
                    w,
                    "{},{},{},{},{}",
                    self.burn_in + k + 1,
                    fmt_f64(p.x),
                    fmt_f64(p.y),
                    fmt_f64(*lp),
                    u8::from(*acc)
                )?;
            }
            Ok(())
        })
    }
}

/// Random-walk Metropolis-Hastings with proposal `y' = y + L z`, `z ~ N(0, I)`.
/// A proposal is accepted when `ln u < log pi(y') - log pi(y)`, so targets at
/// `-inf` are never entered.
pub fn mh_sample<T: LogTarget + ?Sized>(init: Point, target: &T, cfg: &MhConfig) -> Result<Chain> {
    mh_sample_traced(init, target, cfg, |_, _| {})
}

/// As [`mh_sample`], calling `on_decision(iteration, accepted)` for every
/// proposal, burn-in included.
pub fn mh_sample_traced<T, F>(init: Point, target: &T, cfg: &MhConfig, mut on_decision: F) -> Result<Chain>
where
    T: LogTarget + ?Sized,
    F: FnMut(usize, bool),
{
    cfg.validate()?;
    let chol = cfg.cholesky()?;
    let mut current = init;
    let mut lp = target.log_density(init);
    if !(lp > f64::NEG_INFINITY) {
        return Err(Error::InvalidInit { x: init.x, y: init.y });
    }
    let mut rng = rng::Rng::seed_from_u64(cfg.seed);
    let keep = cfg.iterations - cfg.burn_in;
    let mut chain = Chain {
        samples: Vec::with_capacity(keep),
        log_post: Vec::with_capacity(keep),
        accepted_flags: Vec::with_capacity(keep),
        accepted: 0,
        proposed: 0,
        burn_in: cfg.burn_in,
    };
    for it in 0..cfg.iterations {
        let z0: f64 = rng.sample(StandardNormal);
        let z1: f64 = rng.sample(StandardNormal);
        let proposal = Point::new(
            current.x + chol[0][0] * z0,
            current.y + chol[1][0] * z0 + chol[1][1] * z1,
        );
        let u: f64 = rng.random();
        let lp_new = target.log_density(proposal);
        chain.proposed += 1;
        let accept = u.ln() < lp_new - lp;
        if accept {
            current = proposal;
            lp = lp_new;
            chain.accepted += 1;
        }
        on_decision(it, accept);
        if it >= cfg.burn_in {
            chain.samples.push(current);
            chain.log_post.push(lp);
            chain.accepted_flags.push(accept);
        }
    }
    Ok(chain)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub n_samples: usize,
    pub mean: Point,
    /// Sample covariance (divisor n).
    pub cov: [[f64; 2]; 2],
    /// Mean over samples of `|y - truth|^2`.
    pub mse: Option<f64>,
    pub acceptance_rate: f64,
    pub truth: Option<Point>,
}

pub fn summarize(chain: &Chain, truth: Option<Point>) -> Result<Summary> {
    summarize_points(&chain.samples, truth).map(|mut s| {
        s.acceptance_rate = chain.acceptance_rate();
        s
    })
}

pub fn summarize_points(samples: &[Point], truth: Option<Point>) -> Result<Summary> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("cannot summarize an empty chain".into()));
    }
    let n = samples.len() as f64;
    let mx = samples.iter().map(|p| p.x).sum::<f64>() / n;
    let my = samples.iter().map(|p| p.y).sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in samples {
        let (dx, dy) = (p.x - mx, p.y - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let mse = truth.map(|t| samples.iter().map(|p| p.dist_sq(t)).sum::<f64>() / n);
    Ok(Summary {
        n_samples: samples.len(),
        mean: Point::new(mx, my),
        cov: [[sxx / n, sxy / n], [sxy / n, syy / n]],
        mse,
        acceptance_rate: 0.0,
        truth,
    })
}

impl Summary {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| s.push_str(&format!("{k} = {v}\n"));
        kv("n_samples", self.n_samples.to_string());
        kv("mean_x", fmt_f64(self.mean.x));
        kv("mean_y", fmt_f64(self.mean.y));
        kv("cov_xx", fmt_f64(self.cov[0][0]));
        kv("cov_xy", fmt_f64(self.cov[0][1]));
        kv("cov_yy", fmt_f64(self.cov[1][1]));
        kv("acceptance_rate", fmt_f64(self.acceptance_rate));
        if let Some(t) = self.truth {
            kv("truth_x", fmt_f64(t.x));
            kv("truth_y", fmt_f64(t.y));
        }
        if let Some(m) = self.mse {
            kv("mse", fmt_f64(m));
        }
        s
    }
}

/// Writes the log-posterior grid as a `resolution x resolution` CSV (rows
/// along y, as stored in [`GridResult::values`]).
pub fn write_grid_csv(grid: &GridResult, path: &Path) -> Result<()> {
    let n = grid.resolution;
    textio::write_matrix_csv(path, n, n, |r, c| grid.values[[r, c]])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{ReceiverSet, PAPER_RECEIVERS};

    /// Forward model that ignores the source.
    struct Constant(f64);

    impl ForwardModel for Constant {
        fn predict(&self, _: Point, receivers: &[Point], times: &[f64]) -> Vec<f64> {
            vec![self.0; receivers.len() * times.len()]
        }
    }

    /// p = y.x + 2 y.y + receiver.x + t, linear and injective in y.
    struct Linear;

    impl ForwardModel for Linear {
        fn predict(&self, s: Point, receivers: &[Point], times: &[f64]) -> Vec<f64> {
            receivers
                .iter()
                .flat_map(|r| times.iter().map(move |t| s.x + 2.0 * s.y + r.x + t))
                .collect()
        }
    }

    fn obs(values: Array2<f64>, receivers: Vec<Point>, times: Vec<f64>) -> ObservationSet {
        ObservationSet::new(ReceiverSet::new(receivers).unwrap(), times, values, 0.25, None).unwrap()
    }

    #[test]
    fn outside_support_is_neg_infinity() {
        let o = obs(Array2::zeros((1, 1)), vec![Point::new(0.5, 0.5)], vec![1.0]);
        let spec = PosteriorSpec::new(&o, &Constant(0.0), NoiseModel::new(0.25, 0.0).unwrap()).unwrap();
        assert_eq!(spec.log_posterior(Point::new(1.5, 0.5)), f64::NEG_INFINITY);
        assert_eq!(spec.log_posterior(Point::new(0.5, -1e-9)), f64::NEG_INFINITY);
        assert_eq!(spec.log_posterior(Point::new(f64::NAN, 0.5)), f64::NEG_INFINITY);
    }

    #[test]
    fn exact_fit_is_zero_and_unit_residual_is_minus_one() {
        let o = obs(Array2::from_elem((1, 1), 3.0), vec![Point::new(0.5, 0.5)], vec![1.0]);
        let fit = PosteriorSpec::new(&o, &Constant(3.0), NoiseModel::new(0.25, 0.0).unwrap()).unwrap();
        assert_eq!(fit.log_posterior(Point::new(0.3, 0.3)), 0.0);
        let off = PosteriorSpec::new(&o, &Constant(2.0), NoiseModel::new(0.3, 0.2).unwrap()).unwrap();
        assert!((off.log_posterior(Point::new(0.3, 0.3)) + 1.0).abs() < 1e-15);
    }

    #[test]
    fn constant_target_returns_first_lattice_point() {
        let g = grid_search(&|_: Point| -2.0, 7).unwrap();
        assert_eq!(g.best_index, (0, 0));
        assert_eq!(g.best, Point::new(0.5 / 7.0, 0.5 / 7.0));
        assert!(g.values.iter().all(|&v| v == -2.0));
    }

    #[test]
    fn grid_search_counts_evaluations_and_finds_mode() {
        let count = std::sync::atomic::AtomicUsize::new(0);
        let target = |y: Point| {
            count.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
            -y.dist_sq(Point::new(0.71, 0.23))
        };
        let g = grid_search(&target, 150).unwrap();
        assert_eq!(count.load(std::sync::atomic::Ordering::Relaxed), 22_500);
        assert!((g.best.x - 0.71).abs() <= 0.5 / 150.0 + 1e-12);
        assert!((g.best.y - 0.23).abs() <= 0.5 / 150.0 + 1e-12);
        assert_eq!(g.values[[g.best_index.0, g.best_index.1]], g.best_value);
        assert!(grid_search(&target, 1).is_err());
    }

    #[test]
    fn grid_rows_run_along_y() {
        let g = grid_search(&|y: Point| y.x + 10.0 * y.y, 4).unwrap();
        assert_eq!(g.values[[0, 3]], 0.875 + 10.0 * 0.125);
        assert_eq!(g.best_index, (3, 3));
    }

    #[test]
    fn posterior_peaks_at_generating_source() {
        let truth = Point::new(0.3, 0.6);
        let rx = PAPER_RECEIVERS.to_vec();
        let times = vec![0.5, 1.0, 1.5];
        let values = Array2::from_shape_vec((5, 3), Linear.predict(truth, &rx, &times)).unwrap();
        let o = obs(values, rx, times);
        let spec = PosteriorSpec::new(&o, &Linear, NoiseModel::new(0.25, 0.0).unwrap()).unwrap();
        assert_eq!(spec.log_posterior(truth), 0.0);
        assert!(spec.log_posterior(Point::new(0.31, 0.6)) < 0.0);
    }

    #[test]
    fn invalid_init_is_rejected() {
        let cfg = MhConfig::isotropic(1e-3, 10, 0, 1);
        let err = mh_sample(Point::new(2.0, 2.0), &|y: Point| if y.in_unit_square() { 0.0 } else { f64::NEG_INFINITY }, &cfg);
        assert!(matches!(err, Err(Error::InvalidInit { .. })));
    }

    #[test]
    fn out_of_support_proposals_are_never_accepted() {
        let uniform = |y: Point| if y.in_unit_square() { 0.0 } else { f64::NEG_INFINITY };
        let cfg = MhConfig::isotropic(4.0, 5000, 0, 3);
        let chain = mh_sample(Point::new(0.99, 0.99), &uniform, &cfg).unwrap();
        assert!(chain.samples.iter().all(|p| p.in_unit_square()));
        assert!(chain.accepted < chain.proposed);
    }

    #[test]
    fn bad_configs_are_rejected() {
        let mut cfg = MhConfig::default();
        cfg.proposal_cov = [[1.0, 2.0], [2.0, 1.0]];
        assert!(cfg.validate().is_err());
        cfg.proposal_cov = [[1.0, 0.1], [0.0, 1.0]];
        assert!(cfg.validate().is_err());
        let cfg = MhConfig::isotropic(1e-3, 100, 100, 0);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn chain_is_deterministic_per_seed() {
        let t = |y: Point| -0.5 * (y.x * y.x + y.y * y.y);
        let cfg = MhConfig::isotropic(1.0, 3000, 100, 9);
        let a = mh_sample(Point::new(0.0, 0.0), &t, &cfg).unwrap();
        assert_eq!(a, mh_sample(Point::new(0.0, 0.0), &t, &cfg).unwrap());
        assert_eq!(a.len(), 2900);
        assert_eq!(a.proposed, 3000);
    }

    #[test]
    fn correlated_proposal_cholesky() {
        let cfg = MhConfig {
            proposal_cov: [[4.0, 1.2], [1.2, 1.0]],
            ..MhConfig::default()
        };
        let l = cfg.cholesky().unwrap();
        let back = [
            [l[0][0] * l[0][0], l[0][0] * l[1][0]],
            [l[1][0] * l[0][0], l[1][0] * l[1][0] + l[1][1] * l[1][1]],
        ];
        for i in 0..2 {
            for j in 0..2 {
                assert!((back[i][j] - cfg.proposal_cov[i][j]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn summary_hand_arithmetic() {
        let c = Point::new(0.2, 0.7);
        let s = summarize_points(&[c; 4], Some(c)).unwrap();
        assert_eq!(s.mean, c);
        assert_eq!(s.mse, Some(0.0));
        assert_eq!(s.cov, [[0.0, 0.0], [0.0, 0.0]]);
        let s = summarize_points(&[Point::new(0.0, 0.0), Point::new(1.0, 1.0)], Some(Point::new(0.0, 0.0))).unwrap();
        assert_eq!(s.mean, Point::new(0.5, 0.5));
        assert_eq!(s.mse, Some(1.0));
        assert_eq!(s.cov, [[0.25, 0.25], [0.25, 0.25]]);
        assert!(summarize_points(&[], None).is_err());
    }

    #[test]
    fn chain_csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = MhConfig::isotropic(0.01, 20, 15, 1);
        let chain = mh_sample(Point::new(0.5, 0.5), &|_: Point| 0.0, &cfg).unwrap();
        let path = dir.path().join("chain.csv");
        chain.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "iter,y1,y2,log_post,accepted");
        assert_eq!(lines.len(), 6);
        assert!(lines[1].starts_with("16,"));
    }
}
