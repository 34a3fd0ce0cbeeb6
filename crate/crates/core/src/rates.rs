//! Monte Carlo estimates of the coupling rates χ^(k)_n(θ), ξ^(k)_n(t) and
//! ε^(k,p)_n(θ), and their log-log slopes in n.
//!
//! Each replica simulates the n-particle system coupled with its limit
//! processes. Since particles are exchangeable, the probability that k given
//! particles all differ is estimated per replica by the U-statistic over all
//! k-subsets, e_k(1{Δ_i > 0}) / C(n, k); this has the same mean as looking at
//! particles 1..k only, with far less variance. Replica r uses the same seed
//! for every n, so the points along the n grid share random numbers.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{csv_line, fmt_f64};
use crate::model::ModelParams;
use crate::par;
use crate::pde::{solve_pde, DensityGrid, PdeOptions};
use crate::rng::replica_seed;
use crate::stats::{self, SlopeFit};
use crate::thinning::{gamma_n, simulate_coupled, symmetric_difference, PoissonDriver};

/// Replica data for one n: histogram of Δ per θ, and γ^n_t − γ̄(t) per t.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicaCoupling {
    /// delta_hist[θ index][d] = number of particles with Δ_{θ−} = d.
    pub delta_hist: Vec<Vec<u32>>,
    pub gamma_dev: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupledEnsemble {
    pub seed: u64,
    pub thetas: Vec<f64>,
    pub times: Vec<f64>,
    pub n_grid: Vec<usize>,
    /// replicas[n index][replica].
    pub replicas: Vec<Vec<ReplicaCoupling>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Estimand {
    Chi { k: usize },
    Xi { k: usize },
    Epsilon { k: usize, p: u32 },
}

impl Estimand {
    pub fn k(&self) -> usize {
        match *self {
            Estimand::Chi { k } | Estimand::Xi { k } | Estimand::Epsilon { k, .. } => k,
        }
    }

    pub fn power(&self) -> u32 {
        match *self {
            Estimand::Epsilon { p, .. } => p,
            _ => 0,
        }
    }

    /// Exponent of n in the bound being tested.
    pub fn claimed_slope(&self) -> f64 {
        -(self.k() as f64) / 2.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub n: usize,
    pub estimate: f64,
    pub stderr: f64,
    /// Every replica returned zero.
    pub below_resolution: bool,
    pub per_replica: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateExperiment {
    pub estimand: Estimand,
    /// θ for χ and ε, t for ξ.
    pub time: f64,
    pub replicas: usize,
    pub points: Vec<RatePoint>,
    pub fit: Option<SlopeFit>,
    pub flag: Option<String>,
}

impl RateExperiment {
    fn from_points(estimand: Estimand, time: f64, replicas: usize, points: Vec<RatePoint>) -> Self {
        let usable: Vec<&RatePoint> = points.iter().filter(|p| !p.below_resolution && p.estimate > 0.0).collect();
        let mut flag = None;
        let below: Vec<usize> = points.iter().filter(|p| p.below_resolution).map(|p| p.n).collect();
        if !below.is_empty() {
            flag = Some(format!("estimate below resolution at n = {below:?}; widen replicas"));
        }
        let fit = if usable.len() >= 4 {
            let x: Vec<f64> = usable.iter().map(|p| (p.n as f64).ln()).collect();
            let y: Vec<f64> = usable.iter().map(|p| p.estimate.ln()).collect();
            // delta method: Var(log X̂) ≈ (se/X̂)²
            let v: Vec<f64> = usable.iter().map(|p| (p.stderr / p.estimate).powi(2).max(1e-12)).collect();
            Some(stats::weighted_line(&x, &y, &v))
        } else {
            if flag.is_none() {
                flag = Some(format!("only {} usable points; slope undefined", usable.len()));
            }
            None
        };
        RateExperiment { estimand, time, replicas, points, fit, flag }
    }

    pub fn point(&self, n: usize) -> Option<&RatePoint> {
        self.points.iter().find(|p| p.n == n)
    }
}

fn point(n: usize, per_replica: Vec<f64>) -> RatePoint {
    let estimate = stats::mean(&per_replica);
    let stderr = stats::std_error(&per_replica);
    let below_resolution = per_replica.iter().all(|&v| v == 0.0);
    RatePoint { n, estimate, stderr, below_resolution, per_replica }
}

impl CoupledEnsemble {
    /// Simulate coupled systems for every n; γ̄ comes from a PDE solve with
    /// the given dt on the common horizon.
    pub fn simulate(p: &ModelParams, n_grid: &[usize], thetas: &[f64], times: &[f64], replicas: usize, seed: u64, pde_dt: f64) -> Result<Self> {
        if n_grid.is_empty() || replicas == 0 {
            return Err(Error::InvalidParameter { name: "n_grid", reason: "need at least one n and one replica".into() });
        }
        let horizon = thetas.iter().chain(times).cloned().fold(0.0, f64::max);
        if !(horizon > 0.0) {
            return Err(Error::InvalidParameter { name: "thetas", reason: "need a positive θ or t".into() });
        }
        let base = p.with_horizon(horizon)?;
        let grid = solve_pde(&base, PdeOptions::new(pde_dt))?;
        Self::simulate_on(&base, &grid, n_grid, thetas, times, replicas, seed)
    }

    pub fn simulate_on(
        p: &ModelParams,
        grid: &DensityGrid,
        n_grid: &[usize],
        thetas: &[f64],
        times: &[f64],
        replicas: usize,
        seed: u64,
    ) -> Result<Self> {
        let gb: Vec<f64> = times.iter().map(|&t| grid.gamma_bar(t)).collect::<Result<_>>()?;
        let bound = p.intensity.sup_bound();
        let mut all = Vec::with_capacity(n_grid.len());
        for &n in n_grid {
            let pn = p.with_n(n)?;
            let reps: Vec<Result<ReplicaCoupling>> = par::map_indexed(replicas, |r| {
                let d = PoissonDriver::new(replica_seed(seed, r as u64), bound);
                let pairs = simulate_coupled(&pn, &d, &grid.gamma_bar)?;
                let delta_hist = thetas
                    .iter()
                    .map(|&th| {
                        let mut h: Vec<u32> = Vec::new();
                        for c in &pairs {
                            let d = symmetric_difference(&c.finite, &c.limit, th);
                            if h.len() <= d {
                                h.resize(d + 1, 0);
                            }
                            h[d] += 1;
                        }
                        h
                    })
                    .collect();
                let finite: Vec<_> = pairs.into_iter().map(|c| c.finite).collect();
                let gamma_dev = times.iter().zip(&gb).map(|(&t, g)| gamma_n(&finite, &pn.kernel, t) - g).collect();
                Ok(ReplicaCoupling { delta_hist, gamma_dev })
            });
            all.push(reps.into_iter().collect::<Result<Vec<_>>>()?);
        }
        Ok(CoupledEnsemble { seed, thetas: thetas.to_vec(), times: times.to_vec(), n_grid: n_grid.to_vec(), replicas: all })
    }

    fn theta_index(&self, theta: f64) -> Result<usize> {
        self.thetas.iter().position(|&x| (x - theta).abs() < 1e-12).ok_or(Error::OutOfRange { what: "theta", value: theta, lo: 0.0, hi: 0.0 })
    }

    fn time_index(&self, t: f64) -> Result<usize> {
        self.times.iter().position(|&x| (x - t).abs() < 1e-12).ok_or(Error::OutOfRange { what: "time", value: t, lo: 0.0, hi: 0.0 })
    }

    /// Per-replica U-statistic of Π_{i≤k} f(Δ_i).
    fn product_stat(&self, ni: usize, th: usize, k: usize, f: impl Fn(usize) -> f64) -> Vec<f64> {
        let n = self.n_grid[ni];
        self.replicas[ni]
            .iter()
            .map(|r| {
                let hist = &r.delta_hist[th];
                let vals = hist.iter().enumerate().skip(1).flat_map(|(d, &c)| std::iter::repeat(f(d)).take(c as usize));
                stats::mean_k_product(vals, n, k)
            })
            .collect()
    }

    /// χ^(k)_n(θ): probability that k given coupled pairs all differ on [0, θ).
    pub fn chi(&self, k: usize, theta: f64) -> Result<RateExperiment> {
        let th = self.theta_index(theta)?;
        let pts = (0..self.n_grid.len()).map(|ni| point(self.n_grid[ni], self.product_stat(ni, th, k, |_| 1.0))).collect();
        Ok(RateExperiment::from_points(Estimand::Chi { k }, theta, self.replicas[0].len(), pts))
    }

    /// ε^(k,p)_n(θ) = E[Π_{i≤k} (Δ^i_{θ−})^p].
    pub fn epsilon(&self, k: usize, pwr: u32, theta: f64) -> Result<RateExperiment> {
        let th = self.theta_index(theta)?;
        let pts = (0..self.n_grid.len()).map(|ni| point(self.n_grid[ni], self.product_stat(ni, th, k, |d| (d as f64).powi(pwr as i32)))).collect();
        Ok(RateExperiment::from_points(Estimand::Epsilon { k, p: pwr }, theta, self.replicas[0].len(), pts))
    }

    /// ξ^(k)_n(t) = E|γ^n_t − γ̄(t)|^k.
    pub fn xi(&self, k: usize, t: f64) -> Result<RateExperiment> {
        let ti = self.time_index(t)?;
        let pts = (0..self.n_grid.len())
            .map(|ni| point(self.n_grid[ni], self.replicas[ni].iter().map(|r| r.gamma_dev[ti].abs().powi(k as i32)).collect()))
            .collect();
        Ok(RateExperiment::from_points(Estimand::Xi { k }, t, self.replicas[0].len(), pts))
    }
}

fn check_pre(k: usize, max_k: usize, replicas: usize) -> Result<()> {
    if k == 0 || k > max_k {
        return Err(Error::InvalidParameter { name: "k", reason: format!("need 1 <= k <= {max_k}, got {k}") });
    }
    if replicas < 1000 {
        return Err(Error::InvalidParameter { name: "replicas", reason: format!("need at least 1000, got {replicas}") });
    }
    Ok(())
}

pub const DEFAULT_PDE_DT: f64 = 1e-3;

pub fn estimate_chi(p: &ModelParams, k: usize, theta: f64, n_grid: &[usize], replicas: usize, seed: u64) -> Result<RateExperiment> {
    check_pre(k, 3, replicas)?;
    CoupledEnsemble::simulate(p, n_grid, &[theta], &[], replicas, seed, DEFAULT_PDE_DT)?.chi(k, theta)
}

pub fn estimate_xi(p: &ModelParams, k: usize, t: f64, n_grid: &[usize], replicas: usize, seed: u64) -> Result<RateExperiment> {
    check_pre(k, 8, replicas)?;
    CoupledEnsemble::simulate(p, n_grid, &[], &[t], replicas, seed, DEFAULT_PDE_DT)?.xi(k, t)
}

pub fn estimate_epsilon(p: &ModelParams, k: usize, pwr: u32, theta: f64, n_grid: &[usize], replicas: usize, seed: u64) -> Result<RateExperiment> {
    check_pre(k, 3, replicas)?;
    CoupledEnsemble::simulate(p, n_grid, &[theta], &[], replicas, seed, DEFAULT_PDE_DT)?.epsilon(k, pwr, theta)
}

/// Mean and standard error of the per-replica difference a − b at one n,
/// for comparisons that share random numbers.
pub fn paired_difference(a: &RatePoint, b: &RatePoint) -> (f64, f64) {
    let d: Vec<f64> = a.per_replica.iter().zip(&b.per_replica).map(|(x, y)| x - y).collect();
    (stats::mean(&d), stats::std_error(&d))
}

/// Rows k, p, n, estimate, stderr for every experiment.
pub fn write_results_csv<W: Write>(w: &mut W, exps: &[RateExperiment]) -> std::io::Result<()> {
    writeln!(w, "estimand,k,p,time,n,estimate,stderr,below_resolution")?;
    for e in exps {
        let name = match e.estimand {
            Estimand::Chi { .. } => "chi",
            Estimand::Xi { .. } => "xi",
            Estimand::Epsilon { .. } => "epsilon",
        };
        for p in &e.points {
            write!(
                w,
                "{}",
                csv_line(&[
                    name.into(),
                    e.estimand.k().to_string(),
                    e.estimand.power().to_string(),
                    fmt_f64(e.time),
                    p.n.to_string(),
                    fmt_f64(p.estimate),
                    fmt_f64(p.stderr),
                    p.below_resolution.to_string(),
                ])
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Preset;

    #[test]
    fn constant_intensity_never_decouples() {
        let p = Preset::Constant.params(1, 1.0).unwrap();
        let e = CoupledEnsemble::simulate(&p, &[5, 20], &[1.0], &[], 50, 3, 1e-2).unwrap();
        let chi = e.chi(1, 1.0).unwrap();
        assert!(chi.points.iter().all(|p| p.estimate == 0.0 && p.below_resolution));
        assert!(chi.fit.is_none());
        assert!(chi.flag.is_some());
        assert!(e.epsilon(2, 2, 1.0).unwrap().points.iter().all(|p| p.estimate == 0.0));
    }

    #[test]
    fn preconditions() {
        let p = Preset::Tanh.params(1, 1.0).unwrap();
        assert!(estimate_chi(&p, 4, 1.0, &[10], 1000, 0).is_err());
        assert!(estimate_chi(&p, 1, 1.0, &[10], 10, 0).is_err());
    }
}
