//! Forward solver for the first-order acoustic system
//!
//! ```text
//! dp/dt + kappa * div(v) = f_s(x, t)
//! dv/dt + grad(p) / rho  = 0
//! ```
//!
//! on the unit square with rigid (zero normal velocity) walls. Pressure lives
//! at cell centers, `vx` on vertical faces and `vy` on horizontal faces. Time
//! stepping is the kick-drift-kick form of the staggered leapfrog scheme:
//! a velocity half-step from `grad(p)`, a full pressure step from `div(v)`
//! plus the source integrated with the midpoint rule, then the closing
//! velocity half-step. Pressure and velocity are therefore stored at the same
//! time level, which keeps [`energy`] meaningful at every step.

use std::f64::consts::PI;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::geometry::Point;

/// Any field magnitude above this aborts the run.
pub const OVERFLOW_GUARD: f64 = 1e12;

/// Default Courant number used to pick the internal time step.
pub const DEFAULT_CFL: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MediumParams {
    pub kappa: f64,
    pub rho: f64,
}

impl MediumParams {
    pub fn new(kappa: f64, rho: f64) -> Result<Self> {
        let m = MediumParams { kappa, rho };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(Error::config("medium.kappa", "must be finite and > 0"));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::config("medium.rho", "must be finite and > 0"));
        }
        Ok(())
    }

    pub fn wave_speed(&self) -> f64 {
        (self.kappa / self.rho).sqrt()
    }
}

impl Default for MediumParams {
    fn default() -> Self {
        MediumParams {
            kappa: 1.0,
            rho: 1.0,
        }
    }
}

/// Parameters of the space-time Ricker forcing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceParams {
    pub location: Point,
    pub t0: f64,
    pub omega: f64,
    pub tau: f64,
}

impl SourceParams {
    pub const DEFAULT_T0: f64 = 0.2;
    pub const DEFAULT_OMEGA: f64 = 1.0;
    pub const DEFAULT_TAU: f64 = 200.0;

    pub fn at(location: Point) -> Self {
        SourceParams {
            location,
            t0: Self::DEFAULT_T0,
            omega: Self::DEFAULT_OMEGA,
            tau: Self::DEFAULT_TAU,
        }
    }

    pub fn with_location(&self, location: Point) -> Self {
        SourceParams { location, ..*self }
    }

    pub fn validate(&self, t_end: f64) -> Result<()> {
        if !(self.location.is_finite() && self.location.in_unit_square()) {
            return Err(Error::InvalidArgument(format!(
                "source location {} outside the unit square",
                self.location
            )));
        }
        if !(self.omega > 0.0 && self.omega.is_finite()) {
            return Err(Error::config("source.omega", "must be finite and > 0"));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::config("source.tau", "must be finite and > 0"));
        }
        if !(0.0..=t_end).contains(&self.t0) {
            return Err(Error::config(
                "source.t0",
                format!("must lie in the simulated window [0, {t_end}]"),
            ));
        }
        Ok(())
    }

    fn temporal(&self, t: f64) -> f64 {
        let a = 2.0 * PI * self.omega * (t - self.t0);
        let a2 = a * a;
        (self.tau / PI) * (1.0 - a2) * (-0.5 * a2).exp()
    }

    fn spatial(&self, x: Point) -> f64 {
        (-self.tau * x.dist_sq(self.location)).exp()
    }
}

/// Ricker-type forcing `f_s(x, t)`:
///
/// `(tau/pi) (1 - (2 pi w)^2 (t-t0)^2) exp(-[(2 pi w)^2 (t-t0)^2 + 2 tau |x - y_s|^2] / 2)`
pub fn ricker_source(x: Point, t: f64, sp: &SourceParams) -> f64 {
    let a = 2.0 * PI * sp.omega * (t - sp.t0);
    let a2 = a * a;
    (sp.tau / PI) * (1.0 - a2) * (-0.5 * (a2 + 2.0 * sp.tau * x.dist_sq(sp.location))).exp()
}

/// Space-time discretization. `nt` internal steps of size `dt` cover
/// `[0, t_end]`; traces are recorded every `stride` steps, giving `n_out`
/// samples at `t_end * k / n_out` for `k = 1..=n_out`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimGrid {
    pub nx: usize,
    pub ny: usize,
    pub dt: f64,
    pub nt: usize,
    pub t_end: f64,
    pub n_out: usize,
}

impl SimGrid {
    pub const PAPER_CELLS: usize = 16;
    pub const PAPER_OUTPUT_TIMES: usize = 50;
    pub const PAPER_T_END: f64 = 2.0;

    /// Chooses the largest internal step that satisfies the stability bound
    /// `dt <= cfl * min(dx, dy) / (c * sqrt 2)` and divides the output
    /// interval evenly.
    pub fn new(
        nx: usize,
        ny: usize,
        t_end: f64,
        n_out: usize,
        medium: &MediumParams,
        cfl: f64,
    ) -> Result<Self> {
        if nx < 2 {
            return Err(Error::config("grid.nx", "need at least 2 cells per axis"));
        }
        if ny < 2 {
            return Err(Error::config("grid.ny", "need at least 2 cells per axis"));
        }
        if n_out == 0 {
            return Err(Error::config("grid.n_out", "need at least one output time"));
        }
        if !(t_end > 0.0 && t_end.is_finite()) {
            return Err(Error::config("grid.t_end", "must be finite and > 0"));
        }
        if !(cfl > 0.0 && cfl <= 1.0) {
            return Err(Error::config("grid.cfl", "must lie in (0, 1]"));
        }
        medium.validate()?;
        let dt_max = Self::max_stable_dt(nx, ny, medium, cfl);
        let out_dt = t_end / n_out as f64;
        let stride = (out_dt / dt_max).ceil().max(1.0) as usize;
        Ok(SimGrid {
            nx,
            ny,
            dt: out_dt / stride as f64,
            nt: stride * n_out,
            t_end,
            n_out,
        })
    }

    /// 16x16 cells, 50 output samples over `[0, 2]`.
    pub fn paper(medium: &MediumParams) -> Self {
        Self::new(
            Self::PAPER_CELLS,
            Self::PAPER_CELLS,
            Self::PAPER_T_END,
            Self::PAPER_OUTPUT_TIMES,
            medium,
            DEFAULT_CFL,
        )
        .expect("paper grid is valid")
    }

    pub fn max_stable_dt(nx: usize, ny: usize, medium: &MediumParams, cfl: f64) -> f64 {
        let h = (1.0 / nx as f64).min(1.0 / ny as f64);
        cfl * h / (medium.wave_speed() * std::f64::consts::SQRT_2)
    }

    pub fn dx(&self) -> f64 {
        1.0 / self.nx as f64
    }

    pub fn dy(&self) -> f64 {
        1.0 / self.ny as f64
    }

    pub fn stride(&self) -> usize {
        self.nt / self.n_out
    }

    pub fn output_times(&self) -> Vec<f64> {
        (1..=self.n_out)
            .map(|k| self.t_end * k as f64 / self.n_out as f64)
            .collect()
    }

    pub fn cell_center(&self, i: usize, j: usize) -> Point {
        Point::new((i as f64 + 0.5) * self.dx(), (j as f64 + 0.5) * self.dy())
    }

    pub fn cell_centers(&self) -> Vec<Point> {
        let mut out = Vec::with_capacity(self.nx * self.ny);
        for i in 0..self.nx {
            for j in 0..self.ny {
                out.push(self.cell_center(i, j));
            }
        }
        out
    }
}

/// Pressure at cell centers (`nx x ny`), `vx` on vertical faces
/// (`(nx+1) x ny`), `vy` on horizontal faces (`nx x (ny+1)`), all at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveState {
    pub p: Array2<f64>,
    pub vx: Array2<f64>,
    pub vy: Array2<f64>,
    pub t: f64,
}

impl WaveState {
    pub fn at_rest(nx: usize, ny: usize) -> Self {
        WaveState {
            p: Array2::zeros((nx, ny)),
            vx: Array2::zeros((nx + 1, ny)),
            vy: Array2::zeros((nx, ny + 1)),
            t: 0.0,
        }
    }

    /// Initial condition with the given pressure field and zero velocity.
    pub fn from_pressure(p: Array2<f64>) -> Self {
        let (nx, ny) = p.dim();
        WaveState {
            p,
            vx: Array2::zeros((nx + 1, ny)),
            vy: Array2::zeros((nx, ny + 1)),
            t: 0.0,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.p.dim()
    }

    pub fn is_consistent(&self) -> bool {
        let (nx, ny) = self.p.dim();
        self.vx.dim() == (nx + 1, ny) && self.vy.dim() == (nx, ny + 1)
    }

    pub fn max_abs(&self) -> f64 {
        self.p
            .iter()
            .chain(self.vx.iter())
            .chain(self.vy.iter())
            .fold(0.0f64, |m, v| if v.is_nan() { f64::NAN } else { m.max(v.abs()) })
    }

    pub fn scaled(&self, c: f64) -> WaveState {
        WaveState {
            p: &self.p * c,
            vx: &self.vx * c,
            vy: &self.vy * c,
            t: self.t,
        }
    }
}

/// Discrete acoustic energy `1/2 sum(p^2/kappa + rho |v|^2) dx dy`.
pub fn energy(state: &WaveState, mp: &MediumParams) -> f64 {
    let (nx, ny) = state.dims();
    let area = 1.0 / (nx * ny) as f64;
    let pe: f64 = state.p.iter().map(|v| v * v).sum::<f64>() / mp.kappa;
    let ke: f64 = state.vx.iter().chain(state.vy.iter()).map(|v| v * v).sum::<f64>() * mp.rho;
    0.5 * (pe + ke) * area
}

/// Spatial part of the forcing sampled at cell centers; the temporal factor
/// is applied per step.
#[derive(Debug, Clone)]
struct SourceProfile {
    params: SourceParams,
    spatial: Vec<f64>,
}

impl SourceProfile {
    fn new(sp: &SourceParams, nx: usize, ny: usize) -> Self {
        let (dx, dy) = (1.0 / nx as f64, 1.0 / ny as f64);
        let mut spatial = Vec::with_capacity(nx * ny);
        for i in 0..nx {
            for j in 0..ny {
                let c = Point::new((i as f64 + 0.5) * dx, (j as f64 + 0.5) * dy);
                spatial.push(sp.spatial(c));
            }
        }
        SourceProfile {
            params: *sp,
            spatial,
        }
    }
}

fn half_kick(state: &mut WaveState, mp: &MediumParams, dt: f64) {
    let (nx, ny) = state.dims();
    let cx = 0.5 * dt * nx as f64 / mp.rho;
    let cy = 0.5 * dt * ny as f64 / mp.rho;
    let p = state.p.as_slice().expect("standard layout");
    let vx = state.vx.as_slice_mut().expect("standard layout");
    // vx[i, j] sits between p[i-1, j] and p[i, j]; rows 0 and nx are walls.
    for i in 1..nx {
        let (lo, hi) = (&p[(i - 1) * ny..i * ny], &p[i * ny..(i + 1) * ny]);
        let row = &mut vx[i * ny..(i + 1) * ny];
        for j in 0..ny {
            row[j] -= cx * (hi[j] - lo[j]);
        }
    }
    let vy = state.vy.as_slice_mut().expect("standard layout");
    for i in 0..nx {
        let pr = &p[i * ny..(i + 1) * ny];
        let row = &mut vy[i * (ny + 1)..(i + 1) * (ny + 1)];
        for j in 1..ny {
            row[j] -= cy * (pr[j] - pr[j - 1]);
        }
    }
}

fn drift(state: &mut WaveState, mp: &MediumParams, source: Option<&SourceProfile>, dt: f64) {
    let (nx, ny) = state.dims();
    let cx = dt * mp.kappa * nx as f64;
    let cy = dt * mp.kappa * ny as f64;
    // Midpoint rule for the source integral over [t, t + dt].
    let forcing = source.map(|s| (dt * s.params.temporal(state.t + 0.5 * dt), &s.spatial[..]));
    let vx = state.vx.as_slice().expect("standard layout");
    let vy = state.vy.as_slice().expect("standard layout");
    let p = state.p.as_slice_mut().expect("standard layout");
    for i in 0..nx {
        let (vl, vr) = (&vx[i * ny..(i + 1) * ny], &vx[(i + 1) * ny..(i + 2) * ny]);
        let vrow = &vy[i * (ny + 1)..(i + 1) * (ny + 1)];
        let prow = &mut p[i * ny..(i + 1) * ny];
        for j in 0..ny {
            prow[j] -= cx * (vr[j] - vl[j]) + cy * (vrow[j + 1] - vrow[j]);
        }
        if let Some((amp, spatial)) = forcing {
            let srow = &spatial[i * ny..(i + 1) * ny];
            for j in 0..ny {
                prow[j] += amp * srow[j];
            }
        }
    }
}

fn advance(
    state: &mut WaveState,
    mp: &MediumParams,
    source: Option<&SourceProfile>,
    dt: f64,
) -> Result<()> {
    half_kick(state, mp, dt);
    drift(state, mp, source, dt);
    half_kick(state, mp, dt);
    state.t += dt;
    let m = state.max_abs();
    if !(m <= OVERFLOW_GUARD) {
        return Err(Error::StabilityViolation {
            t: state.t,
            magnitude: m,
        });
    }
    Ok(())
}

/// Advances `state` by one time step. `source = None` disables forcing.
pub fn step(
    state: &WaveState,
    mp: &MediumParams,
    source: Option<&SourceParams>,
    dt: f64,
) -> Result<WaveState> {
    if !state.is_consistent() {
        return Err(Error::InvalidArgument(
            "wave state arrays do not follow the staggering convention".into(),
        ));
    }
    let (nx, ny) = state.dims();
    let profile = source.map(|sp| SourceProfile::new(sp, nx, ny));
    let mut next = state.clone();
    advance(&mut next, mp, profile.as_ref(), dt)?;
    Ok(next)
}

/// Precomputed bilinear stencil on the cell-centered pressure grid.
#[derive(Debug, Clone, Copy)]
struct Bilinear {
    idx: [usize; 4],
    w: [f64; 4],
}

impl Bilinear {
    fn new(x: Point, nx: usize, ny: usize) -> Self {
        fn axis(u: f64, n: usize) -> (usize, f64) {
            // Index-space coordinate of u relative to cell centers, clamped so
            // points within half a cell of a wall take the wall-adjacent value.
            let s = (u * n as f64 - 0.5).clamp(0.0, (n - 1) as f64);
            let i0 = (s.floor() as usize).min(n - 2);
            (i0, s - i0 as f64)
        }
        let (i0, fx) = axis(x.x, nx);
        let (j0, fy) = axis(x.y, ny);
        Bilinear {
            idx: [
                i0 * ny + j0,
                i0 * ny + j0 + 1,
                (i0 + 1) * ny + j0,
                (i0 + 1) * ny + j0 + 1,
            ],
            w: [
                (1.0 - fx) * (1.0 - fy),
                (1.0 - fx) * fy,
                fx * (1.0 - fy),
                fx * fy,
            ],
        }
    }

    fn eval(&self, p: &[f64]) -> f64 {
        self.idx
            .iter()
            .zip(self.w.iter())
            .map(|(&k, &w)| w * p[k])
            .sum()
    }
}

/// Bilinear interpolation of the pressure field at `x`.
pub fn sample_pressure(p: &Array2<f64>, x: Point) -> f64 {
    let (nx, ny) = p.dim();
    Bilinear::new(x, nx, ny).eval(p.as_slice().expect("standard layout"))
}

/// Pressure traces: `values[[r, k]]` is the pressure at `receivers[r]` and
/// `times[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceTable {
    pub receivers: Vec<Point>,
    pub times: Vec<f64>,
    pub values: Array2<f64>,
}

impl TraceTable {
    pub fn n_receivers(&self) -> usize {
        self.receivers.len()
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }
}

/// Runs `grid.nt` steps from rest and records bilinearly interpolated
/// pressure at every receiver at each output time.
pub fn simulate(
    sp: &SourceParams,
    mp: &MediumParams,
    grid: &SimGrid,
    receivers: &[Point],
) -> Result<TraceTable> {
    if let Some(r) = receivers.iter().find(|r| !r.in_unit_square()) {
        return Err(Error::InvalidArgument(format!(
            "receiver {r} outside the unit square"
        )));
    }
    let stencils: Vec<Bilinear> = receivers
        .iter()
        .map(|&r| Bilinear::new(r, grid.nx, grid.ny))
        .collect();
    let mut values = Array2::zeros((receivers.len(), grid.n_out));
    simulate_with(sp, mp, grid, |k, state| {
        let p = state.p.as_slice().expect("standard layout");
        for (r, s) in stencils.iter().enumerate() {
            values[[r, k]] = s.eval(p);
        }
    })?;
    Ok(TraceTable {
        receivers: receivers.to_vec(),
        times: grid.output_times(),
        values,
    })
}

/// Runs the solver from rest and hands the state to `record` at each output
/// time (`k = 0..n_out`).
pub fn simulate_with<F>(sp: &SourceParams, mp: &MediumParams, grid: &SimGrid, mut record: F) -> Result<()>
where
    F: FnMut(usize, &WaveState),
{
    let profile = SourceProfile::new(sp, grid.nx, grid.ny);
    let mut state = WaveState::at_rest(grid.nx, grid.ny);
    let stride = grid.stride();
    for k in 0..grid.n_out {
        for s in 0..stride {
            advance(&mut state, mp, Some(&profile), grid.dt)?;
            // Re-anchor to the exact step time so long runs do not accumulate
            // roundoff in t.
            state.t = ((k * stride + s + 1) as f64) * grid.dt;
        }
        record(k, &state);
    }
    Ok(())
}

/// Full pressure fields at every output time, each `nx x ny`.
pub fn simulate_fields(sp: &SourceParams, mp: &MediumParams, grid: &SimGrid) -> Result<Vec<Array2<f64>>> {
    let mut out = Vec::with_capacity(grid.n_out);
    simulate_with(sp, mp, grid, |_, state| out.push(state.p.clone()))?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx_eq::assert_close;

    mod approx_eq {
        macro_rules! assert_close {
            ($a:expr, $b:expr, $tol:expr) => {{
                let (a, b): (f64, f64) = ($a, $b);
                assert!((a - b).abs() <= $tol, "{} vs {} (tol {})", a, b, $tol);
            }};
        }
        pub(crate) use assert_close;
    }

    fn sp() -> SourceParams {
        SourceParams::at(Point::new(0.4, 0.55))
    }

    #[test]
    fn ricker_peak_value() {
        let s = sp();
        assert_close!(ricker_source(s.location, s.t0, &s), s.tau / PI, 1e-12);
    }

    #[test]
    fn ricker_zero_crossing() {
        let s = sp();
        let t = s.t0 + 1.0 / (2.0 * PI * s.omega);
        assert_close!(ricker_source(s.location, t, &s), 0.0, 1e-12);
    }

    #[test]
    fn ricker_radial_and_even() {
        let s = sp();
        let d = Point::new(0.03, -0.07);
        for &t in &[0.0, 0.13, 0.2, 0.5, 1.7] {
            let a = ricker_source(Point::new(s.location.x + d.x, s.location.y + d.y), t, &s);
            let b = ricker_source(Point::new(s.location.x - d.x, s.location.y - d.y), t, &s);
            let c = ricker_source(Point::new(s.location.x + d.y, s.location.y - d.x), t, &s);
            assert_close!(a, b, 1e-12);
            assert_close!(a, c, 1e-12);
            let dt = t - s.t0;
            assert_close!(
                ricker_source(s.location, s.t0 + dt, &s),
                ricker_source(s.location, s.t0 - dt, &s),
                1e-12
            );
        }
    }

    #[test]
    fn ricker_global_max() {
        let s = sp();
        let peak = s.tau / PI;
        for i in 0..=40 {
            for k in 0..=200 {
                let x = Point::new(i as f64 / 40.0, 0.55);
                let t = 2.0 * k as f64 / 200.0;
                assert!(ricker_source(x, t, &s) <= peak + 1e-12);
            }
        }
    }

    #[test]
    fn zero_state_stays_zero_without_forcing() {
        let mp = MediumParams::default();
        let s0 = WaveState::at_rest(8, 8);
        let s1 = step(&s0, &mp, None, 0.01).unwrap();
        assert!(s1.p.iter().chain(s1.vx.iter()).chain(s1.vy.iter()).all(|&v| v == 0.0));
        assert_close!(s1.t, 0.01, 1e-15);
    }

    #[test]
    fn walls_keep_zero_normal_velocity() {
        let mp = MediumParams::default();
        let mut s = WaveState::at_rest(6, 5);
        let src = SourceParams::at(Point::new(0.1, 0.9));
        for _ in 0..20 {
            s = step(&s, &mp, Some(&src), 0.02).unwrap();
        }
        for j in 0..5 {
            assert_eq!(s.vx[[0, j]], 0.0);
            assert_eq!(s.vx[[6, j]], 0.0);
        }
        for i in 0..6 {
            assert_eq!(s.vy[[i, 0]], 0.0);
            assert_eq!(s.vy[[i, 5]], 0.0);
        }
    }

    #[test]
    fn single_step_from_rest_hand_computed() {
        // 4x4 grid, dx = 0.25. From rest the opening half-kick sees grad p = 0,
        // so p1 = dt * f(x_c, dt/2) and the closing half-kick gives
        // v = -(dt/2)/(rho dx) * (p1[i] - p1[i-1]).
        let mp = MediumParams::new(1.3, 0.8).unwrap();
        let src = SourceParams {
            location: Point::new(0.3, 0.6),
            t0: 0.05,
            omega: 2.0,
            tau: 20.0,
        };
        let dt = 0.01;
        let s1 = step(&WaveState::at_rest(4, 4), &mp, Some(&src), dt).unwrap();
        let mut p1 = [[0.0; 4]; 4];
        for (i, row) in p1.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                let x = Point::new(0.125 + 0.25 * i as f64, 0.125 + 0.25 * j as f64);
                *v = dt * ricker_source(x, 0.5 * dt, &src);
                assert_close!(s1.p[[i, j]], *v, 1e-13 * v.abs().max(1.0));
            }
        }
        let c = 0.5 * dt / (mp.rho * 0.25);
        for i in 1..4 {
            for j in 0..4 {
                assert_close!(s1.vx[[i, j]], -c * (p1[i][j] - p1[i - 1][j]), 1e-14);
            }
        }
        for i in 0..4 {
            for j in 1..4 {
                assert_close!(s1.vy[[i, j]], -c * (p1[i][j] - p1[i][j - 1]), 1e-14);
            }
        }
    }

    fn bump(n: usize, cx: f64, cy: f64, w: f64) -> Array2<f64> {
        Array2::from_shape_fn((n, n), |(i, j)| {
            let x = (i as f64 + 0.5) / n as f64 - cx;
            let y = (j as f64 + 0.5) / n as f64 - cy;
            (-(x * x + y * y) / (w * w)).exp()
        })
    }

    #[test]
    fn centered_bump_stays_symmetric() {
        let n = 12;
        let mp = MediumParams::default();
        let mut s = WaveState::from_pressure(bump(n, 0.5, 0.5, 0.15));
        let dt = SimGrid::max_stable_dt(n, n, &mp, DEFAULT_CFL);
        for _ in 0..150 {
            s = step(&s, &mp, None, dt).unwrap();
        }
        for i in 0..n {
            for j in 0..n {
                let v = s.p[[i, j]];
                assert_close!(v, s.p[[n - 1 - i, j]], 1e-12);
                assert_close!(v, s.p[[i, n - 1 - j]], 1e-12);
            }
        }
    }

    #[test]
    fn energy_quadratic() {
        let mp = MediumParams::new(2.0, 0.5).unwrap();
        assert_eq!(energy(&WaveState::at_rest(5, 7), &mp), 0.0);
        let mut s = WaveState::from_pressure(bump(10, 0.3, 0.6, 0.2));
        s = step(&s, &mp, None, 0.01).unwrap();
        let e = energy(&s, &mp);
        assert!(e > 0.0);
        assert_close!(energy(&s.scaled(-3.0), &mp), 9.0 * e, 1e-12 * e);
    }

    #[test]
    fn overflow_guard_trips_on_unstable_step() {
        let mp = MediumParams::default();
        let mut s = WaveState::from_pressure(bump(16, 0.5, 0.5, 0.05));
        let mut err = None;
        for _ in 0..2000 {
            match step(&s, &mp, None, 0.5) {
                Ok(next) => s = next,
                Err(e) => {
                    err = Some(e);
                    break;
                }
            }
        }
        assert!(matches!(err, Some(Error::StabilityViolation { .. })));
    }

    #[test]
    fn grid_respects_stability_bound() {
        let mp = MediumParams::default();
        for &n in &[16, 32, 64, 128] {
            let g = SimGrid::new(n, n, 2.0, 50, &mp, DEFAULT_CFL).unwrap();
            assert!(g.dt <= SimGrid::max_stable_dt(n, n, &mp, DEFAULT_CFL) * (1.0 + 1e-12));
            assert_close!(g.dt * g.nt as f64, 2.0, 1e-12);
            assert_eq!(g.nt % g.n_out, 0);
        }
        let times = SimGrid::paper(&mp).output_times();
        assert_eq!(times.len(), 50);
        assert_close!(times[0], 0.04, 1e-15);
        assert_close!(times[49], 2.0, 1e-15);
    }

    #[test]
    fn bilinear_reproduces_linear_fields() {
        let n = 8;
        let p = Array2::from_shape_fn((n, n), |(i, j)| {
            let x = (i as f64 + 0.5) / n as f64;
            let y = (j as f64 + 0.5) / n as f64;
            2.0 * x - 3.0 * y + 0.5
        });
        for &(x, y) in &[(0.25, 0.625), (0.5, 0.5), (0.11, 0.83), (0.9, 0.2)] {
            assert_close!(sample_pressure(&p, Point::new(x, y)), 2.0 * x - 3.0 * y + 0.5, 1e-12);
        }
    }

    #[test]
    fn empty_receivers_give_empty_table() {
        let mp = MediumParams::default();
        let g = SimGrid::paper(&mp);
        let t = simulate(&sp(), &mp, &g, &[]).unwrap();
        assert_eq!(t.values.dim(), (0, 50));
        assert_eq!(t.times.len(), 50);
    }

    #[test]
    fn rejects_receivers_outside_domain() {
        let mp = MediumParams::default();
        let g = SimGrid::paper(&mp);
        assert!(simulate(&sp(), &mp, &g, &[Point::new(1.2, 0.5)]).is_err());
    }

    #[test]
    fn mirrored_receivers_see_identical_traces() {
        let mp = MediumParams::default();
        let g = SimGrid::paper(&mp);
        let src = SourceParams::at(Point::new(0.5, 0.5));
        let t = simulate(&src, &mp, &g, &[Point::new(0.25, 0.5), Point::new(0.75, 0.5)]).unwrap();
        let scale = t.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for k in 0..t.n_times() {
            assert_close!(t.values[[0, k]], t.values[[1, k]], 1e-12 * scale);
        }
    }

    #[test]
    fn simulate_is_deterministic() {
        let mp = MediumParams::default();
        let g = SimGrid::paper(&mp);
        let rx = [Point::new(0.25, 0.625), Point::new(0.75, 0.25)];
        let a = simulate(&sp(), &mp, &g, &rx).unwrap();
        let b = simulate(&sp(), &mp, &g, &rx).unwrap();
        assert_eq!(a, b);
    }
}
