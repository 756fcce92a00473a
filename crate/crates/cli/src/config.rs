//! Flat `key = value` configuration. Every key has a documented default at
//! paper scale; files and `--set` overrides are merged on top, later sources
//! winning, and the merged table is resolved into typed settings.

use std::collections::BTreeMap;
use std::path::Path;

use wavesrc::dataset::{self, DatasetManifest, ReceiverSet, SamplingStrategy};
use wavesrc::experiments::LocalizeConfig;
use wavesrc::inference::MhConfig;
use wavesrc::mlp::{Optimizer, TrainConfig};
use wavesrc::textio;
use wavesrc::wave::{MediumParams, SimGrid, SourceParams};
use wavesrc::{Error, Point, Result};

/// `(key, default, description)` for every accepted key.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("seed", "0", "global seed; every random stream derives from it"),
    ("workers", "0", "worker threads, 0 for one per core"),
    ("grid.nx", "16", "solver cells along x"),
    ("grid.ny", "16", "solver cells along y"),
    ("grid.t_end", "2", "end of the simulated time window"),
    ("grid.n_out", "50", "recorded output times, evenly spaced up to t_end"),
    ("grid.cfl", "0.5", "Courant number for the internal time step"),
    ("medium.kappa", "1", "bulk modulus"),
    ("medium.rho", "1", "density"),
    ("source.t0", "0.2", "Ricker pulse center time"),
    ("source.omega", "1", "Ricker frequency"),
    ("source.tau", "200", "spatial concentration of the forcing"),
    ("data.n_train", "50", "training sources"),
    ("data.n_test", "50", "test sources"),
    ("data.sampling", "lattice", "source layout: lattice (checkerboard split) or random"),
    ("data.sigma0_sq", "0.25", "observation noise variance"),
    (
        "data.receivers",
        "0.25:0.625 0.5:0.5 0.25:0.125 0.75:0.625 0.75:0.25",
        "receiver positions as x:y pairs",
    ),
    ("data.train_full_field", "true", "record training traces on every cell center"),
    ("train.learning_rate", "0.001", "initial learning rate"),
    ("train.decay_gamma", "0.5", "learning-rate decay factor"),
    ("train.decay_every", "200", "epochs between decays"),
    ("train.batch_size", "100", "mini-batch size"),
    ("train.epochs", "1000", "maximum epochs"),
    ("train.patience", "100", "stop after this many epochs without improvement"),
    ("train.optimizer", "adam", "adam or sgd"),
    ("search.resolution", "150", "lattice points per axis for the grid search"),
    ("mh.iterations", "50000", "Metropolis-Hastings iterations"),
    ("mh.burn_in", "auto", "iterations discarded before summaries; auto is a tenth of mh.iterations"),
    ("mh.proposal_var", "0.001", "variance of the isotropic Gaussian proposal"),
    ("heatmap.bins", "100", "bins per axis for chain histograms"),
    ("suite.max_sources", "0", "localize only the first N test sources, 0 for all"),
    ("ablation.source", "0.889:0.25", "source location for the receiver ablation"),
    ("ablation.removal_order", "2 3 1", "receiver indices removed one at a time"),
    ("symmetry.source", "0.3:0.5", "source location for the symmetry demo"),
    ("symmetry.receivers", "0.5:0.25 0.5:0.75", "receivers for the symmetry demo"),
    ("symmetry.forward", "solver", "forward map for the symmetry demo: solver or surrogate"),
];

/// Unresolved key-value table.
#[derive(Debug, Clone, PartialEq)]
pub struct RawConfig {
    values: BTreeMap<String, String>,
}

impl Default for RawConfig {
    fn default() -> Self {
        RawConfig {
            values: KEYS.iter().map(|(k, v, _)| (k.to_string(), v.to_string())).collect(),
        }
    }
}

impl RawConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match self.values.get_mut(key) {
            Some(v) => {
                *v = value.trim().to_string();
                Ok(())
            }
            None => Err(Error::config(key, "unknown key")),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// Parses `key=value` as given to `--set`.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::config(pair, "expected key=value"))?;
        self.set(k.trim(), v)
    }

    pub fn merge_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (k, v) in textio::parse_key_values(text, origin)? {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    pub fn merge_file(&mut self, path: &Path) -> Result<()> {
        let text = textio::read_to_string(path)?;
        self.merge_text(&text, path)
    }

    /// All keys in sorted order, in the same syntax the parser accepts.
    pub fn to_text(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    fn num<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.get(key).expect("documented key");
        v.parse()
            .map_err(|_| Error::config(key, format!("cannot parse `{v}`")))
    }

    fn finite(&self, key: &str) -> Result<f64> {
        let v: f64 = self.num(key)?;
        if !v.is_finite() {
            return Err(Error::config(key, "must be finite"));
        }
        Ok(v)
    }

    fn flag(&self, key: &str) -> Result<bool> {
        match self.get(key).expect("documented key") {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            v => Err(Error::config(key, format!("expected true or false, got `{v}`"))),
        }
    }

    fn points(&self, key: &str) -> Result<Vec<Point>> {
        dataset::parse_points(self.get(key).expect("documented key"), Path::new(key))
            .map_err(|e| Error::config(key, e.to_string()))
    }

    fn point(&self, key: &str) -> Result<Point> {
        match self.points(key)?.as_slice() {
            [p] if p.in_unit_square() => Ok(*p),
            _ => Err(Error::config(key, "expected one x:y pair inside the unit square")),
        }
    }

    /// Type-checks every key and every downstream invariant.
    pub fn resolve(&self) -> Result<Config> {
        let medium = MediumParams::new(self.finite("medium.kappa")?, self.finite("medium.rho")?)?;
        let grid = SimGrid::new(
            self.num("grid.nx")?,
            self.num("grid.ny")?,
            self.finite("grid.t_end")?,
            self.num("grid.n_out")?,
            &medium,
            self.finite("grid.cfl")?,
        )?;
        let source = SourceParams {
            location: Point::new(0.5, 0.5),
            t0: self.finite("source.t0")?,
            omega: self.finite("source.omega")?,
            tau: self.finite("source.tau")?,
        };
        source.validate(grid.t_end)?;

        let seed: u64 = self.num("seed")?;
        let sigma0_sq = self.finite("data.sigma0_sq")?;
        if sigma0_sq < 0.0 {
            return Err(Error::config("data.sigma0_sq", "must be >= 0"));
        }
        let receivers =
            ReceiverSet::new(self.points("data.receivers")?).map_err(|e| Error::config("data.receivers", e.to_string()))?;
        receivers
            .check_identifiable()
            .map_err(|e| Error::config("data.receivers", e.to_string()))?;
        let n_train: usize = self.num("data.n_train")?;
        let n_test: usize = self.num("data.n_test")?;
        if n_train == 0 {
            return Err(Error::config("data.n_train", "must be >= 1"));
        }
        let (train, test) = match self.get("data.sampling").expect("documented key") {
            "lattice" => dataset::interleaved_split(n_train, n_test)?,
            "random" => {
                let mut all = dataset::sample_sources(n_train + n_test, SamplingStrategy::UniformRandom, seed)?;
                let test = all.split_off(n_train);
                (all, test)
            }
            v => return Err(Error::config("data.sampling", format!("expected lattice or random, got `{v}`"))),
        };
        let manifest = DatasetManifest {
            train_sources: train.into_iter().map(|p| source.with_location(p)).collect(),
            test_sources: test.into_iter().map(|p| source.with_location(p)).collect(),
            grid,
            medium,
            receivers,
            rng_seed: seed,
            sigma0_sq,
            train_full_field: self.flag("data.train_full_field")?,
        };
        manifest.validate()?;
        if !(self.finite("train.learning_rate")? > 0.0) {
            return Err(Error::config("train.learning_rate", "must be > 0"));
        }

        let optimizer = match self.get("train.optimizer").expect("documented key") {
            "adam" => Optimizer::adam(),
            "sgd" => Optimizer::Sgd,
            v => return Err(Error::config("train.optimizer", format!("expected adam or sgd, got `{v}`"))),
        };
        let train = TrainConfig {
            learning_rate: self.finite("train.learning_rate")?,
            decay_gamma: self.finite("train.decay_gamma")?,
            decay_every: self.num("train.decay_every")?,
            batch_size: self.num("train.batch_size")?,
            epochs: self.num("train.epochs")?,
            patience: self.num("train.patience")?,
            optimizer,
            seed,
        };
        train.validate()?;

        let var = self.finite("mh.proposal_var")?;
        let iterations: usize = self.num("mh.iterations")?;
        let burn_in = match self.get("mh.burn_in").expect("documented key") {
            "auto" => iterations / 10,
            _ => self.num("mh.burn_in")?,
        };
        let mh = MhConfig::isotropic(var, iterations, burn_in, seed);
        mh.validate().map_err(|e| match e {
            Error::Config { field, message } if field == "mh.proposal_cov" => Error::config("mh.proposal_var", message),
            other => other,
        })?;
        let resolution: usize = self.num("search.resolution")?;
        if resolution < 2 {
            return Err(Error::config("search.resolution", "must be >= 2"));
        }
        let bins: usize = self.num("heatmap.bins")?;
        if bins == 0 {
            return Err(Error::config("heatmap.bins", "must be >= 1"));
        }

        let removal_order = self
            .get("ablation.removal_order")
            .expect("documented key")
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<usize>()
                    .map_err(|_| Error::config("ablation.removal_order", format!("cannot parse `{s}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(&bad) = removal_order.iter().find(|&&i| i >= manifest.receivers.len()) {
            return Err(Error::config("ablation.removal_order", format!("receiver index {bad} out of range")));
        }
        let symmetry_receivers = ReceiverSet::new(self.points("symmetry.receivers")?)
            .map_err(|e| Error::config("symmetry.receivers", e.to_string()))?;
        let symmetry_forward = match self.get("symmetry.forward").expect("documented key") {
            "solver" => ForwardChoice::Solver,
            "surrogate" => ForwardChoice::Surrogate,
            v => return Err(Error::config("symmetry.forward", format!("expected solver or surrogate, got `{v}`"))),
        };

        Ok(Config {
            seed,
            workers: self.num("workers")?,
            source,
            manifest,
            train,
            localize: LocalizeConfig {
                grid_resolution: resolution,
                mh,
                heatmap_bins: bins,
            },
            suite_max_sources: self.num("suite.max_sources")?,
            ablation_source: self.point("ablation.source")?,
            removal_order,
            symmetry_source: self.point("symmetry.source")?,
            symmetry_receivers,
            symmetry_forward,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardChoice {
    Solver,
    Surrogate,
}

/// Typed, validated settings.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub seed: u64,
    pub workers: usize,
    /// Source parameters other than the location.
    pub source: SourceParams,
    pub manifest: DatasetManifest,
    pub train: TrainConfig,
    pub localize: LocalizeConfig,
    pub suite_max_sources: usize,
    pub ablation_source: Point,
    pub removal_order: Vec<usize>,
    pub symmetry_source: Point,
    pub symmetry_receivers: ReceiverSet,
    pub symmetry_forward: ForwardChoice,
}

/// Documentation table for `wavesrc config --keys`.
pub fn describe_keys() -> String {
    let width = KEYS.iter().map(|(k, _, _)| k.len()).max().unwrap_or(0);
    KEYS.iter()
        .map(|(k, v, d)| format!("{k:width$}  {d} [default: {v}]\n"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve_to_paper_scale() {
        let c = RawConfig::default().resolve().unwrap();
        assert_eq!(c.manifest.train_sources.len(), 50);
        assert_eq!(c.manifest.test_sources.len(), 50);
        assert_eq!((c.manifest.grid.nx, c.manifest.grid.n_out), (16, 50));
        assert_eq!(c.manifest.receivers, ReceiverSet::paper());
        assert_eq!(c.localize.mh.iterations, 50_000);
        assert_eq!(c.localize.mh.burn_in, 5_000);
        assert_eq!(c.localize.grid_resolution, 150);
        assert_eq!(c.train.batch_size, 100);
        assert_eq!(c.removal_order, vec![2, 3, 1]);
    }

    #[test]
    fn unknown_key_is_rejected() {
        let err = RawConfig::default().set("grid.nz", "3").unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "grid.nz"));
    }

    #[test]
    fn negative_noise_names_field() {
        let mut raw = RawConfig::default();
        raw.set("data.sigma0_sq", "-1").unwrap();
        let err = raw.resolve().unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "data.sigma0_sq"), "{err}");
    }

    #[test]
    fn later_values_win() {
        let mut raw = RawConfig::default();
        raw.merge_text("mh.iterations = 50000\nseed = 4\n", Path::new("f")).unwrap();
        raw.set_pair("mh.iterations=1000").unwrap();
        let c = raw.resolve().unwrap();
        assert_eq!(c.localize.mh.iterations, 1000);
        assert_eq!(c.localize.mh.burn_in, 100);
        assert_eq!(c.seed, 4);
    }

    #[test]
    fn text_round_trip() {
        let mut raw = RawConfig::default();
        raw.set("source.tau", "150").unwrap();
        let mut again = RawConfig::default();
        again.merge_text(&raw.to_text(), Path::new("echo")).unwrap();
        assert_eq!(raw, again);
    }

    #[test]
    fn parse_errors_name_fields() {
        for (k, v) in [
            ("grid.nx", "many"),
            ("mh.proposal_var", "-1"),
            ("train.optimizer", "rmsprop"),
            ("data.receivers", "0.5:0.25 0.5:0.75"),
            ("ablation.removal_order", "7"),
            ("data.train_full_field", "maybe"),
        ] {
            let mut raw = RawConfig::default();
            raw.set(k, v).unwrap();
            match raw.resolve() {
                Err(Error::Config { field, .. }) => assert_eq!(field, k),
                other => panic!("{k}: {other:?}"),
            }
        }
    }
}
