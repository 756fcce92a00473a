//! Locate a source from noisy traces using the finite-volume solver as the
//! forward model. No training needed; runs in about a minute.
//!
//! `cargo run --release -p wavesrc --example locate -- 0.3 0.7`

use wavesrc::dataset::{self, ObservationSet, ReceiverSet};
use wavesrc::experiments::{localize, LocalizeConfig};
use wavesrc::inference::{MhConfig, NoiseModel, SolverModel};
use wavesrc::wave::{self, MediumParams, SimGrid, SourceParams};
use wavesrc::Point;

fn main() -> wavesrc::Result<()> {
    let args: Vec<f64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let truth = Point::new(*args.first().unwrap_or(&0.3), *args.get(1).unwrap_or(&0.7));

    let medium = MediumParams::default();
    let grid = SimGrid::paper(&medium);
    let template = SourceParams::at(truth);
    let receivers = ReceiverSet::paper();
    let clean = wave::simulate(&template, &medium, &grid, receivers.positions())?;
    let sigma0_sq = 0.01;
    let noisy = dataset::add_noise(&clean.values, sigma0_sq, 7)?;
    let obs = ObservationSet::new(receivers, clean.times.clone(), noisy, sigma0_sq, Some(template))?;

    let model = SolverModel { medium, grid, template };
    let cfg = LocalizeConfig {
        grid_resolution: 40,
        mh: MhConfig::isotropic(1e-4, 2000, 500, 1),
        ..LocalizeConfig::default()
    };
    let out = localize(&obs, &model, NoiseModel::new(sigma0_sq, 0.0)?, &cfg, 1)?;
    let s = &out.summary;
    println!("truth      ({:.4}, {:.4})", truth.x, truth.y);
    println!("grid best  ({:.4}, {:.4})", out.grid.best.x, out.grid.best.y);
    println!("post mean  ({:.4}, {:.4})", s.mean.x, s.mean.y);
    println!("mse        {:.3e}", s.mse.unwrap_or(f64::NAN));
    println!("acceptance {:.3}", s.acceptance_rate);
    Ok(())
}
