//! Synthetic data: source layouts, forward runs, observation noise and the
//! on-disk dataset layout
//!
//! ```text
//! <dir>/manifest.txt            key = value, see DatasetManifest::to_text
//! <dir>/train/src_<k>.csv       clean pressures on every cell center
//! <dir>/test/src_<k>.csv        noisy receiver traces
//! <dir>/test/src_<k>.clean.csv  clean receiver traces (diagnostics)
//! ```
//!
//! Every CSV has the header `source_x,source_y,receiver_x,receiver_y,t,p`
//! with rows ordered receiver-major, then by time.

use std::collections::HashSet;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use rand::Rng as _;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::mlp::Samples;
use crate::par;
use crate::rng::{self, stream};
use crate::textio::{self, fmt_f64};
use crate::wave::{self, MediumParams, SimGrid, SourceParams, TraceTable};

pub const CSV_HEADER: [&str; 6] = ["source_x", "source_y", "receiver_x", "receiver_y", "t", "p"];

/// Observation noise variance used for the test split.
pub const PAPER_SIGMA0_SQ: f64 = 0.25;

pub const PAPER_RECEIVERS: [Point; 5] = [
    Point::new(0.25, 0.625),
    Point::new(0.5, 0.5),
    Point::new(0.25, 0.125),
    Point::new(0.75, 0.625),
    Point::new(0.75, 0.25),
];

const ON_AXIS_TOL: f64 = 1e-12;

/// Ordered, pairwise distinct receiver positions in the unit square.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceiverSet {
    positions: Vec<Point>,
}

impl ReceiverSet {
    pub fn new(positions: Vec<Point>) -> Result<Self> {
        for (i, p) in positions.iter().enumerate() {
            if !(p.is_finite() && p.in_unit_square()) {
                return Err(Error::config("receivers", format!("receiver {p} outside the unit square")));
            }
            if positions[..i].contains(p) {
                return Err(Error::config("receivers", format!("duplicate receiver {p}")));
            }
        }
        Ok(ReceiverSet { positions })
    }

    pub fn paper() -> Self {
        ReceiverSet {
            positions: PAPER_RECEIVERS.to_vec(),
        }
    }

    pub fn positions(&self) -> &[Point] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// True when some pair of receivers does not lie together on one of the
    /// square's reflection axes (x = 1/2, y = 1/2, y = x, y = 1 - x). A pair
    /// sharing an axis is fixed by that reflection, so it cannot tell a
    /// source from its mirror image.
    pub fn is_identifiable(&self) -> bool {
        let axes: [fn(Point) -> f64; 4] = [
            |p| p.x - 0.5,
            |p| p.y - 0.5,
            |p| p.y - p.x,
            |p| p.y + p.x - 1.0,
        ];
        let on = |axis: fn(Point) -> f64, p: Point| axis(p).abs() <= ON_AXIS_TOL;
        for (i, &a) in self.positions.iter().enumerate() {
            for &b in &self.positions[i + 1..] {
                if !axes.iter().any(|&ax| on(ax, a) && on(ax, b)) {
                    return true;
                }
            }
        }
        false
    }

    /// Checks the requirements for an inference-bound receiver set.
    pub fn check_identifiable(&self) -> Result<()> {
        if self.len() < 2 {
            return Err(Error::Identifiability(format!(
                "{} receiver(s); at least 2 are needed",
                self.len()
            )));
        }
        if !self.is_identifiable() {
            return Err(Error::Identifiability(
                "every receiver pair is co-linear along a symmetry axis of the square".into(),
            ));
        }
        Ok(())
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let positions = indices
            .iter()
            .map(|&i| {
                self.positions
                    .get(i)
                    .copied()
                    .ok_or_else(|| Error::InvalidArgument(format!("receiver index {i} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        ReceiverSet::new(positions)
    }
}

/// Receiver traces for one source: `values[[i, j]]` is the pressure at
/// `receivers[i]` and `times[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    pub receivers: ReceiverSet,
    pub times: Vec<f64>,
    pub values: Array2<f64>,
    pub sigma0_sq: f64,
    pub source_truth: Option<SourceParams>,
}

impl ObservationSet {
    pub fn new(
        receivers: ReceiverSet,
        times: Vec<f64>,
        values: Array2<f64>,
        sigma0_sq: f64,
        source_truth: Option<SourceParams>,
    ) -> Result<Self> {
        if values.dim() != (receivers.len(), times.len()) {
            return Err(Error::InvalidArgument(format!(
                "observation table is {:?}, expected {} x {}",
                values.dim(),
                receivers.len(),
                times.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite observation".into()));
        }
        if !(sigma0_sq >= 0.0 && sigma0_sq.is_finite()) {
            return Err(Error::config("sigma0_sq", "must be finite and >= 0"));
        }
        Ok(ObservationSet {
            receivers,
            times,
            values,
            sigma0_sq,
            source_truth,
        })
    }

    pub fn from_traces(traces: &TraceTable, sigma0_sq: f64, truth: Option<SourceParams>) -> Result<Self> {
        Self::new(
            ReceiverSet::new(traces.receivers.clone())?,
            traces.times.clone(),
            traces.values.clone(),
            sigma0_sq,
            truth,
        )
    }

    pub fn truth(&self) -> Option<Point> {
        self.source_truth.map(|s| s.location)
    }

    /// Observations restricted to the given receivers (rows are copied, never
    /// synthesized).
    pub fn select_receivers(&self, indices: &[usize]) -> Result<Self> {
        let receivers = self.receivers.subset(indices)?;
        let values = self.values.select(ndarray::Axis(0), indices);
        Ok(ObservationSet {
            receivers,
            times: self.times.clone(),
            values,
            sigma0_sq: self.sigma0_sq,
            source_truth: self.source_truth,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingStrategy {
    Lattice,
    UniformRandom,
}

/// Lattice: `floor(sqrt(n))` rows whose point counts differ by at most one,
/// each point at the center of its lattice cell, so the layout is the
/// regular `m x m` lattice whenever `n = m^2`. Random: i.i.d. uniform on the
/// unit square from `seed`.
pub fn sample_sources(n: usize, strategy: SamplingStrategy, seed: u64) -> Result<Vec<Point>> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one source".into()));
    }
    Ok(match strategy {
        SamplingStrategy::Lattice => lattice_rows(n)
            .into_iter()
            .flat_map(|row| row.into_iter().map(|(p, _)| p))
            .collect(),
        SamplingStrategy::UniformRandom => {
            let mut rng = rng::stream_rng(seed, stream::SOURCES, 0);
            (0..n).map(|_| Point::new(rng.random::<f64>(), rng.random::<f64>())).collect()
        }
    })
}

/// Points of the near-regular lattice grouped by row, each tagged with its
/// column index.
fn lattice_rows(n: usize) -> Vec<Vec<(Point, usize)>> {
    let rows = ((n as f64).sqrt().floor() as usize).max(1);
    let (base, extra) = (n / rows, n % rows);
    (0..rows)
        .map(|r| {
            let count = base + usize::from(r < extra);
            let y = (r as f64 + 0.5) / rows as f64;
            (0..count)
                .map(|c| (Point::new((c as f64 + 0.5) / count as f64, y), c))
                .collect()
        })
        .collect()
}

/// Train/test layout on a shared lattice of `n_train + n_test` points split
/// in a checkerboard, so each test source sits between train sources. When
/// the parity classes are unequal, surplus points move to the shorter list.
pub fn interleaved_split(n_train: usize, n_test: usize) -> Result<(Vec<Point>, Vec<Point>)> {
    let total = n_train + n_test;
    if total == 0 {
        return Ok((Vec::new(), Vec::new()));
    }
    let (mut even, mut odd) = (Vec::new(), Vec::new());
    for (r, row) in lattice_rows(total).into_iter().enumerate() {
        for (p, c) in row {
            if (r + c) % 2 == 0 {
                even.push(p);
            } else {
                odd.push(p);
            }
        }
    }
    while even.len() > n_train {
        odd.push(even.pop().unwrap());
    }
    while even.len() < n_train {
        even.push(odd.pop().unwrap());
    }
    Ok((even, odd))
}

/// Adds i.i.d. `N(0, sigma0_sq)` noise to every entry.
pub fn add_noise(clean: &Array2<f64>, sigma0_sq: f64, seed: u64) -> Result<Array2<f64>> {
    if !(sigma0_sq >= 0.0 && sigma0_sq.is_finite()) {
        return Err(Error::config("sigma0_sq", "must be finite and >= 0"));
    }
    if sigma0_sq == 0.0 {
        return Ok(clean.clone());
    }
    let normal = Normal::new(0.0, sigma0_sq.sqrt()).expect("valid sigma");
    let mut rng = rng::Rng::seed_from_u64(seed);
    Ok(clean.mapv(|v| v + normal.sample(&mut rng)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub train_sources: Vec<SourceParams>,
    pub test_sources: Vec<SourceParams>,
    pub grid: SimGrid,
    pub medium: MediumParams,
    pub receivers: ReceiverSet,
    pub rng_seed: u64,
    pub sigma0_sq: f64,
    /// Record training tuples on every cell center rather than only at the
    /// receivers.
    pub train_full_field: bool,
}

impl DatasetManifest {
    /// 50 train + 50 test sources interleaved on a 10x10 lattice, 16x16
    /// solver grid, 50 output times, the five default receivers and
    /// `sigma0^2 = 0.25`.
    pub fn paper(seed: u64) -> Self {
        let medium = MediumParams::default();
        let (train, test) = interleaved_split(50, 50).expect("static layout");
        let template = SourceParams::at(Point::new(0.5, 0.5));
        DatasetManifest {
            train_sources: train.into_iter().map(|p| template.with_location(p)).collect(),
            test_sources: test.into_iter().map(|p| template.with_location(p)).collect(),
            grid: SimGrid::paper(&medium),
            medium,
            receivers: ReceiverSet::paper(),
            rng_seed: seed,
            sigma0_sq: PAPER_SIGMA0_SQ,
            train_full_field: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.medium.validate()?;
        if !(self.sigma0_sq >= 0.0 && self.sigma0_sq.is_finite()) {
            return Err(Error::config("dataset.sigma0_sq", "must be finite and >= 0"));
        }
        for s in self.train_sources.iter().chain(&self.test_sources) {
            s.validate(self.grid.t_end)?;
        }
        let key = |p: Point| (p.x.to_bits(), p.y.to_bits());
        let train: HashSet<_> = self.train_sources.iter().map(|s| key(s.location)).collect();
        if let Some(s) = self.test_sources.iter().find(|s| train.contains(&key(s.location))) {
            return Err(Error::config(
                "dataset.test_sources",
                format!("source {} appears in both splits", s.location),
            ));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| out.push_str(&format!("{k} = {v}\n"));
        kv("format", "wavesrc-dataset 1".into());
        kv("seed", self.rng_seed.to_string());
        kv("sigma0_sq", fmt_f64(self.sigma0_sq));
        kv("train_full_field", self.train_full_field.to_string());
        kv("medium.kappa", fmt_f64(self.medium.kappa));
        kv("medium.rho", fmt_f64(self.medium.rho));
        kv("grid.nx", self.grid.nx.to_string());
        kv("grid.ny", self.grid.ny.to_string());
        kv("grid.dt", fmt_f64(self.grid.dt));
        kv("grid.nt", self.grid.nt.to_string());
        kv("grid.t_end", fmt_f64(self.grid.t_end));
        kv("grid.n_out", self.grid.n_out.to_string());
        let rx: Vec<String> = self
            .receivers
            .positions()
            .iter()
            .map(|p| format!("{}:{}", fmt_f64(p.x), fmt_f64(p.y)))
            .collect();
        kv("receivers", rx.join(" "));
        let src = |s: &SourceParams| {
            format!(
                "{} {} {} {} {}",
                fmt_f64(s.location.x),
                fmt_f64(s.location.y),
                fmt_f64(s.t0),
                fmt_f64(s.omega),
                fmt_f64(s.tau)
            )
        };
        kv("train.count", self.train_sources.len().to_string());
        for (k, s) in self.train_sources.iter().enumerate() {
            kv(&format!("train.{k}"), src(s));
        }
        kv("test.count", self.test_sources.len().to_string());
        for (k, s) in self.test_sources.iter().enumerate() {
            kv(&format!("test.{k}"), src(s));
        }
        out
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let kv = textio::parse_key_values(text, path)?;
        let map: std::collections::HashMap<&str, &str> = kv.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect();
        let get = |k: &str| -> Result<&str> {
            map.get(k)
                .copied()
                .ok_or_else(|| Error::format("manifest", path, format!("missing key {k}")))
        };
        let f = |k: &'static str| -> Result<f64> { textio::parse_f64(get(k)?, k, path) };
        let u = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|e| Error::format("manifest", path, format!("{k}: {e}")))
        };
        if get("format")? != "wavesrc-dataset 1" {
            return Err(Error::format("manifest", path, "unsupported format"));
        }
        let grid = SimGrid {
            nx: u("grid.nx")?,
            ny: u("grid.ny")?,
            dt: f("grid.dt")?,
            nt: u("grid.nt")?,
            t_end: f("grid.t_end")?,
            n_out: u("grid.n_out")?,
        };
        let receivers = ReceiverSet::new(parse_points(get("receivers")?, path)?)?;
        let sources = |prefix: &str| -> Result<Vec<SourceParams>> {
            let n = u(&format!("{prefix}.count"))?;
            (0..n)
                .map(|k| {
                    let key = format!("{prefix}.{k}");
                    let v: Vec<f64> = get(&key)?
                        .split_whitespace()
                        .map(|x| textio::parse_f64(x, "source", path))
                        .collect::<Result<_>>()?;
                    if v.len() != 5 {
                        return Err(Error::format("manifest", path, format!("{key}: expected 5 values")));
                    }
                    Ok(SourceParams {
                        location: Point::new(v[0], v[1]),
                        t0: v[2],
                        omega: v[3],
                        tau: v[4],
                    })
                })
                .collect()
        };
        let m = DatasetManifest {
            train_sources: sources("train")?,
            test_sources: sources("test")?,
            grid,
            medium: MediumParams {
                kappa: f("medium.kappa")?,
                rho: f("medium.rho")?,
            },
            receivers,
            rng_seed: get("seed")?
                .parse()
                .map_err(|e| Error::format("manifest", path, format!("seed: {e}")))?,
            sigma0_sq: f("sigma0_sq")?,
            train_full_field: get("train_full_field")? == "true",
        };
        m.validate()?;
        Ok(m)
    }
}

/// `x:y` pairs separated by whitespace.
pub fn parse_points(s: &str, path: &Path) -> Result<Vec<Point>> {
    s.split_whitespace()
        .map(|pair| {
            let (x, y) = pair
                .split_once(':')
                .ok_or_else(|| Error::format("point list", path, format!("expected x:y, got {pair:?}")))?;
            Ok(Point::new(
                textio::parse_f64(x, "point", path)?,
                textio::parse_f64(y, "point", path)?,
            ))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestSource {
    pub clean: TraceTable,
    pub observed: ObservationSet,
}

/// Everything produced from one manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    /// Clean traces per train source, on cell centers or receivers.
    pub train: Vec<TraceTable>,
    pub test: Vec<TestSource>,
}

fn train_points(m: &DatasetManifest) -> Vec<Point> {
    if m.train_full_field {
        m.grid.cell_centers()
    } else {
        m.receivers.positions().to_vec()
    }
}

/// Runs every forward simulation and applies observation noise. Sources are
/// processed independently; noise for test source `k` comes from stream
/// `(seed, NOISE, k)`.
pub fn generate(manifest: &DatasetManifest) -> Result<Dataset> {
    manifest.validate()?;
    let points = train_points(manifest);
    let train = par::map_slice(&manifest.train_sources, |sp| {
        wave::simulate(sp, &manifest.medium, &manifest.grid, &points)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let test = par::map_indexed(manifest.test_sources.len(), |k| -> Result<TestSource> {
        let sp = &manifest.test_sources[k];
        let clean = wave::simulate(sp, &manifest.medium, &manifest.grid, manifest.receivers.positions())?;
        let noisy = add_noise(
            &clean.values,
            manifest.sigma0_sq,
            rng::derive_seed(manifest.rng_seed, stream::NOISE, k as u64),
        )?;
        let observed = ObservationSet::new(
            manifest.receivers.clone(),
            clean.times.clone(),
            noisy,
            manifest.sigma0_sq,
            Some(*sp),
        )?;
        Ok(TestSource { clean, observed })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        manifest: manifest.clone(),
        train,
        test,
    })
}

/// Generates the dataset and writes it under `dir`.
pub fn build_dataset(manifest: &DatasetManifest, dir: &Path) -> Result<Dataset> {
    let ds = generate(manifest)?;
    ds.write(dir)?;
    Ok(ds)
}

fn write_trace_csv(path: &Path, source: Point, receivers: &[Point], times: &[f64], values: &Array2<f64>) -> Result<()> {
    textio::write_with(path, |w| {
        writeln!(w, "{}", CSV_HEADER.join(","))?;
        let (sx, sy) = (fmt_f64(source.x), fmt_f64(source.y));
        for (i, r) in receivers.iter().enumerate() {
            let (rx, ry) = (fmt_f64(r.x), fmt_f64(r.y));
            for (j, t) in times.iter().enumerate() {
                writeln!(w, "{sx},{sy},{rx},{ry},{},{}", fmt_f64(*t), fmt_f64(values[[i, j]]))?;
            }
        }
        Ok(())
    })
}

/// Parsed trace CSV: source, receivers in order of appearance, times, values.
pub struct TraceCsv {
    pub source: Point,
    pub receivers: Vec<Point>,
    pub times: Vec<f64>,
    pub values: Array2<f64>,
}

pub fn read_trace_csv(path: &Path) -> Result<TraceCsv> {
    let text = textio::read_to_string(path)?;
    let bad = |m: String| Error::format("trace csv", path, m);
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(bad(format!("unexpected header {:?}", header.iter().collect::<Vec<_>>())));
    }
    let mut source = None;
    let mut receivers: Vec<Point> = Vec::new();
    let mut times: Vec<f64> = Vec::new();
    let mut flat = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let v: Vec<f64> = rec
            .iter()
            .map(|x| textio::parse_f64(x, "trace value", path))
            .collect::<Result<_>>()?;
        if v.len() != 6 {
            return Err(bad(format!("expected 6 columns, got {}", v.len())));
        }
        let s = Point::new(v[0], v[1]);
        match source {
            None => source = Some(s),
            Some(prev) if prev != s => return Err(bad("more than one source in file".into())),
            _ => {}
        }
        let r = Point::new(v[2], v[3]);
        if receivers.last() != Some(&r) {
            if receivers.contains(&r) {
                return Err(bad(format!("receiver {r} rows are not contiguous")));
            }
            receivers.push(r);
        }
        if receivers.len() == 1 {
            times.push(v[4]);
        } else {
            let j = flat.len() % times.len().max(1);
            if times.get(j) != Some(&v[4]) {
                return Err(bad(format!("receiver {r} has a different time axis")));
            }
        }
        flat.push(v[5]);
    }
    let source = source.ok_or_else(|| bad("no rows".into()))?;
    let values = Array2::from_shape_vec((receivers.len(), times.len()), flat)
        .map_err(|e| bad(format!("ragged table: {e}")))?;
    Ok(TraceCsv {
        source,
        receivers,
        times,
        values,
    })
}

impl Dataset {
    pub fn manifest_path(dir: &Path) -> PathBuf {
        dir.join("manifest.txt")
    }

    pub fn train_path(dir: &Path, k: usize) -> PathBuf {
        dir.join("train").join(format!("src_{k}.csv"))
    }

    pub fn test_path(dir: &Path, k: usize) -> PathBuf {
        dir.join("test").join(format!("src_{k}.csv"))
    }

    pub fn test_clean_path(dir: &Path, k: usize) -> PathBuf {
        dir.join("test").join(format!("src_{k}.clean.csv"))
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        textio::create_dir_all(dir)?;
        let manifest = self.manifest.to_text();
        textio::write_with(&Self::manifest_path(dir), |w| w.write_all(manifest.as_bytes()))?;
        for (k, (tr, sp)) in self.train.iter().zip(&self.manifest.train_sources).enumerate() {
            write_trace_csv(&Self::train_path(dir, k), sp.location, &tr.receivers, &tr.times, &tr.values)?;
        }
        for (k, ts) in self.test.iter().enumerate() {
            let src = self.manifest.test_sources[k].location;
            let obs = &ts.observed;
            write_trace_csv(&Self::test_path(dir, k), src, obs.receivers.positions(), &obs.times, &obs.values)?;
            let c = &ts.clean;
            write_trace_csv(&Self::test_clean_path(dir, k), src, &c.receivers, &c.times, &c.values)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mpath = Self::manifest_path(dir);
        let manifest = DatasetManifest::from_text(&textio::read_to_string(&mpath)?, &mpath)?;
        let train = (0..manifest.train_sources.len())
            .map(|k| {
                let t = read_trace_csv(&Self::train_path(dir, k))?;
                Ok(TraceTable {
                    receivers: t.receivers,
                    times: t.times,
                    values: t.values,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let test = (0..manifest.test_sources.len())
            .map(|k| {
                let clean = read_trace_csv(&Self::test_clean_path(dir, k))?;
                let observed = load_observations(&Self::test_path(dir, k), &manifest, k)?;
                Ok(TestSource {
                    clean: TraceTable {
                        receivers: clean.receivers,
                        times: clean.times,
                        values: clean.values,
                    },
                    observed,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset { manifest, train, test })
    }

    /// Training tuples `(y_s, x, t) -> p` over all train sources.
    pub fn training_samples(&self) -> Samples {
        let sources: Vec<Point> = self.manifest.train_sources.iter().map(|s| s.location).collect();
        traces_to_samples(sources.iter().copied().zip(self.train.iter()))
    }

    /// Clean receiver traces of the test sources, used for validation and
    /// the surrogate noise estimate.
    pub fn validation_samples(&self) -> Samples {
        let sources: Vec<Point> = self.manifest.test_sources.iter().map(|s| s.location).collect();
        traces_to_samples(sources.iter().copied().zip(self.test.iter().map(|t| &t.clean)))
    }

    pub fn observations(&self) -> Vec<ObservationSet> {
        self.test.iter().map(|t| t.observed.clone()).collect()
    }
}

/// Reads a noisy test file as an ObservationSet using the manifest's noise
/// level and the truth for source `k`.
pub fn load_observations(path: &Path, manifest: &DatasetManifest, k: usize) -> Result<ObservationSet> {
    let t = read_trace_csv(path)?;
    let truth = manifest.test_sources.get(k).copied();
    ObservationSet::new(ReceiverSet::new(t.receivers)?, t.times, t.values, manifest.sigma0_sq, truth)
}

/// Reads any trace CSV as observations with the given noise level; the
/// source columns are taken as the truth.
pub fn read_observations(path: &Path, sigma0_sq: f64, template: &SourceParams) -> Result<ObservationSet> {
    let t = read_trace_csv(path)?;
    let truth = template.with_location(t.source);
    ObservationSet::new(ReceiverSet::new(t.receivers)?, t.times, t.values, sigma0_sq, Some(truth))
}

fn traces_to_samples<'a>(items: impl Iterator<Item = (Point, &'a TraceTable)>) -> Samples {
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    for (src, tr) in items {
        for (i, r) in tr.receivers.iter().enumerate() {
            for (j, &t) in tr.times.iter().enumerate() {
                rows.extend_from_slice(&[src.x, src.y, r.x, r.y, t]);
                targets.push(tr.values[[i, j]]);
            }
        }
    }
    let n = targets.len();
    Samples {
        inputs: Array2::from_shape_vec((n, 5), rows).expect("row-major"),
        targets: Array1::from(targets),
    }
}
