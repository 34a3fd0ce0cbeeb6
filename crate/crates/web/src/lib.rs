//! Browser demo. Each operation takes plain numbers and returns a JSON
//! string that www/index.html draws on a canvas.

use adhp::model::{ModelParams, Preset};
use adhp::pde::{solve_pde, DensityGrid, PdeOptions};
use adhp::rates::CoupledEnsemble;
use adhp::thinning::{age_at, gamma_n, simulate_adhp, PoissonDriver, Side};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Demo time step: coarse enough to stay interactive.
pub const DEMO_DT: f64 = 5e-3;
const MAX_PARTICLES: usize = 20_000;
const RASTER_ROWS: usize = 40;

#[derive(Debug, Serialize)]
pub struct DensityView {
    pub preset: String,
    pub t: Vec<f64>,
    pub lambda_bar: Vec<f64>,
    pub gamma_bar: Vec<f64>,
    pub s: Vec<f64>,
    /// Density profiles at `profile_times`.
    pub profiles: Vec<Vec<f64>>,
    pub profile_times: Vec<f64>,
    pub max_mass_error: f64,
}

#[derive(Debug, Serialize)]
pub struct ParticleView {
    pub n: usize,
    pub t: Vec<f64>,
    pub gamma_n: Vec<f64>,
    pub gamma_bar: Vec<f64>,
    pub bin_edges: Vec<f64>,
    /// Empirical and limit age densities at T, per bin.
    pub empirical: Vec<f64>,
    pub limit: Vec<f64>,
    /// Event times of the first few particles.
    pub raster: Vec<Vec<f64>>,
    pub events: usize,
}

#[derive(Debug, Serialize)]
pub struct RateView {
    pub k: usize,
    pub n: Vec<usize>,
    pub estimate: Vec<f64>,
    pub stderr: Vec<f64>,
    pub slope: Option<f64>,
    pub ci: Option<(f64, f64)>,
    pub claimed: f64,
    pub flag: Option<String>,
}

fn params(preset: &str, n: usize, horizon: f64) -> Result<ModelParams, String> {
    let p = Preset::from_name(preset).ok_or_else(|| format!("unknown preset `{preset}`"))?;
    if !(horizon > 0.0 && horizon <= 5.0) {
        return Err("horizon must lie in (0, 5]".into());
    }
    p.params(n, horizon).map_err(|e| e.to_string())
}

fn grid(p: &ModelParams) -> Result<DensityGrid, String> {
    solve_pde(p, PdeOptions::new(DEMO_DT)).map_err(|e| e.to_string())
}

fn thin(v: &[f64], every: usize) -> Vec<f64> {
    v.iter().step_by(every).copied().collect()
}

/// Mean-field density and boundary trace.
pub fn density(preset: &str, horizon: f64) -> Result<DensityView, String> {
    let p = params(preset, 1, horizon)?;
    let g = grid(&p)?;
    let every = (g.steps / 400).max(1);
    let t: Vec<f64> = (0..=g.steps).step_by(every).map(|i| i as f64 * g.dt).collect();
    let s_every = (g.cells / 300).max(1);
    let s: Vec<f64> = (0..g.cells).step_by(s_every).map(|j| (j as f64 + 0.5) * g.ds).collect();
    let k = g.snapshots.len();
    let picks: Vec<usize> = (0..5).map(|i| i * (k - 1) / 4).collect();
    Ok(DensityView {
        preset: preset.into(),
        t,
        lambda_bar: thin(&g.lambda_bar.values, every),
        gamma_bar: thin(&g.gamma_bar.values, every),
        profiles: picks.iter().map(|&i| g.snapshots[i].iter().step_by(s_every).map(|m| m / g.ds).collect()).collect(),
        profile_times: picks.iter().map(|&i| g.snapshot_times[i]).collect(),
        s,
        max_mass_error: g.mass.iter().map(|m| (m - 1.0).abs()).fold(0.0, f64::max),
    })
}

/// One particle system of size n against its mean-field limit.
pub fn particles(preset: &str, n: usize, horizon: f64, seed: u64) -> Result<ParticleView, String> {
    if n == 0 || n > MAX_PARTICLES {
        return Err(format!("n must lie in 1..={MAX_PARTICLES}"));
    }
    let p = params(preset, n, horizon)?;
    let g = grid(&p)?;
    let paths = simulate_adhp(&p, &PoissonDriver::new(seed, p.intensity.sup_bound())).map_err(|e| e.to_string())?;
    let t: Vec<f64> = (0..=200).map(|i| horizon * i as f64 / 200.0).collect();
    let bins = 40;
    let top = p.max_age();
    let width = top / bins as f64;
    let mut counts = vec![0.0; bins];
    for path in &paths {
        let a = age_at(path, horizon, Side::Right);
        counts[((a / width) as usize).min(bins - 1)] += 1.0;
    }
    let limit = g.bin_probabilities(horizon, bins, top).map_err(|e| e.to_string())?;
    Ok(ParticleView {
        n,
        gamma_n: t.iter().map(|&s| gamma_n(&paths, &p.kernel, s)).collect(),
        gamma_bar: t.iter().map(|&s| g.gamma_bar.at(s)).collect(),
        t,
        bin_edges: (0..=bins).map(|b| b as f64 * width).collect(),
        empirical: counts.iter().map(|c| c / (n as f64 * width)).collect(),
        limit: limit.iter().map(|q| q / width).collect(),
        raster: paths.iter().take(RASTER_ROWS).map(|q| q.events.clone()).collect(),
        events: paths.iter().map(|q| q.events.len()).sum(),
    })
}

/// χ^(k)_n(T) over a particle grid, with its log-log slope.
pub fn chi_rate(preset: &str, k: usize, replicas: usize, seed: u64) -> Result<RateView, String> {
    if !(1..=3).contains(&k) {
        return Err("k must be 1, 2 or 3".into());
    }
    if !(50..=5000).contains(&replicas) {
        return Err("replicas must lie in 50..=5000".into());
    }
    let p = params(preset, 1, 1.0)?;
    let n_grid = [10, 32, 100, 316];
    let ens = CoupledEnsemble::simulate(&p, &n_grid, &[1.0], &[1.0], replicas, seed, DEMO_DT).map_err(|e| e.to_string())?;
    let e = ens.chi(k, 1.0).map_err(|e| e.to_string())?;
    Ok(RateView {
        k,
        n: e.points.iter().map(|q| q.n).collect(),
        estimate: e.points.iter().map(|q| q.estimate).collect(),
        stderr: e.points.iter().map(|q| q.stderr).collect(),
        slope: e.fit.as_ref().map(|f| f.slope),
        ci: e.fit.as_ref().map(|f| (f.ci_low, f.ci_high)),
        claimed: e.estimand.claimed_slope(),
        flag: e.flag.clone(),
    })
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsValue> {
    r.map(|v| serde_json::to_string(&v).expect("json")).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn presets() -> String {
    serde_json::to_string(&Preset::ALL.iter().map(|p| p.name()).collect::<Vec<_>>()).expect("json")
}

#[wasm_bindgen(js_name = solveDensity)]
pub fn solve_density_js(preset: &str, horizon: f64) -> Result<String, JsValue> {
    to_js(density(preset, horizon))
}

#[wasm_bindgen(js_name = simulateParticles)]
pub fn simulate_particles_js(preset: &str, n: usize, horizon: f64, seed: u32) -> Result<String, JsValue> {
    to_js(particles(preset, n, horizon, seed as u64))
}

#[wasm_bindgen(js_name = chiRate)]
pub fn chi_rate_js(preset: &str, k: usize, replicas: usize, seed: u32) -> Result<String, JsValue> {
    to_js(chi_rate(preset, k, replicas, seed as u64))
}
