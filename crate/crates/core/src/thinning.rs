//! Exact simulation of the n-particle system by thinning, and its coupling
//! with the limit process driven by the same Poisson measures.
//!
//! Particle i owns a unit-rate Poisson measure Π^i on [0, T] × [0, B]. An
//! atom (t, x) becomes an event when x ≤ Ψ(S_{t−}, γ_t). The measure is
//! generated in unit-height horizontal strips, each with its own counter
//! stream, so raising B only adds atoms above the old bound and never
//! changes the accepted events.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::{Read, Write};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{csv_line, fmt_f64};
use crate::model::{Kernel, ModelParams};
use crate::rng;
use crate::series::TimeSeries;

const INIT_STRIP: u64 = 255;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EventPath {
    pub initial_age: f64,
    /// Strictly increasing event times in (0, T].
    pub events: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoupledPair {
    pub finite: EventPath,
    pub limit: EventPath,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// S_{t−}: last event strictly before t.
    Left,
    /// S_t: last event at or before t.
    Right,
}

/// Age of a path at time t ≥ 0.
pub fn age_at(path: &EventPath, t: f64, side: Side) -> f64 {
    let k = match side {
        Side::Left => path.events.partition_point(|&e| e < t),
        Side::Right => path.events.partition_point(|&e| e <= t),
    };
    if k == 0 {
        path.initial_age + t
    } else {
        t - path.events[k - 1]
    }
}

/// Number of events in [0, t) lying in exactly one of the two paths.
pub fn symmetric_difference(a: &EventPath, b: &EventPath, t: f64) -> usize {
    let (mut i, mut j, mut d) = (0, 0, 0);
    let (ea, eb) = (&a.events, &b.events);
    loop {
        let x = ea.get(i).copied().filter(|&v| v < t);
        let y = eb.get(j).copied().filter(|&v| v < t);
        match (x, y) {
            (None, None) => return d,
            (Some(_), None) => {
                d += 1;
                i += 1
            }
            (None, Some(_)) => {
                d += 1;
                j += 1
            }
            (Some(u), Some(v)) => {
                if u == v {
                    i += 1;
                    j += 1;
                } else if u < v {
                    d += 1;
                    i += 1;
                } else {
                    d += 1;
                    j += 1;
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoissonDriver {
    pub seed: u64,
    pub mark_bound: f64,
    /// Stream index per particle; identity when absent.
    pub streams: Option<Vec<u64>>,
}

impl PoissonDriver {
    pub fn new(seed: u64, mark_bound: f64) -> Self {
        PoissonDriver { seed, mark_bound, streams: None }
    }

    pub fn with_streams(mut self, streams: Vec<u64>) -> Self {
        self.streams = Some(streams);
        self
    }

    fn stream_of(&self, i: usize) -> u64 {
        match &self.streams {
            Some(s) => s[i],
            None => i as u64,
        }
    }

    fn initial_age(&self, p: &ModelParams, i: usize) -> f64 {
        let mut r = rng::stream(self.seed, self.stream_of(i) * 256 + INIT_STRIP);
        p.initial.sample(&mut r)
    }

    fn atoms(&self, i: usize) -> AtomSource {
        let strips = self.mark_bound.ceil().max(1.0) as usize;
        assert!(strips < INIT_STRIP as usize, "mark bound too large");
        let base = self.stream_of(i) * 256;
        let mut src = AtomSource { strips: Vec::with_capacity(strips), bound: self.mark_bound };
        for k in 0..strips {
            let mut r = rng::stream(self.seed, base + k as u64);
            let t = rng::exponential(&mut r);
            let x = k as f64 + rng::uniform(&mut r);
            src.strips.push(Strip { rng: r, t, x, level: k as f64 });
        }
        src
    }
}

struct Strip {
    rng: ChaCha8Rng,
    t: f64,
    x: f64,
    level: f64,
}

/// Atoms of one particle's Poisson measure in time order.
struct AtomSource {
    strips: Vec<Strip>,
    bound: f64,
}

impl AtomSource {
    fn next(&mut self) -> (f64, f64) {
        loop {
            let k = if self.strips.len() == 1 {
                0
            } else {
                let mut best = 0;
                for j in 1..self.strips.len() {
                    if self.strips[j].t < self.strips[best].t {
                        best = j;
                    }
                }
                best
            };
            let s = &mut self.strips[k];
            let atom = (s.t, s.x);
            s.t += rng::exponential(&mut s.rng);
            s.x = s.level + rng::uniform(&mut s.rng);
            if atom.1 < self.bound {
                return atom;
            }
        }
    }
}

/// Running value of Σ_events h(t − z).
pub(crate) enum Tracker {
    /// Markov form of an exponential-polynomial kernel.
    ExpPoly { rate: f64, coef: Vec<f64>, state: Vec<f64>, at: f64, scratch: Vec<f64> },
    Direct { kernel: Kernel, events: Vec<f64> },
}

impl Tracker {
    pub(crate) fn new(kernel: &Kernel, direct: bool) -> Tracker {
        match kernel.exp_poly() {
            Some((rate, coef)) if !direct => {
                let k = coef.len();
                Tracker::ExpPoly { rate, coef, state: vec![0.0; k], at: 0.0, scratch: vec![0.0; k] }
            }
            _ => Tracker::Direct { kernel: kernel.clone(), events: Vec::new() },
        }
    }

    fn advance(&mut self, t: f64) {
        if let Tracker::ExpPoly { rate, state, at, scratch, .. } = self {
            let d = t - *at;
            if d == 0.0 {
                return;
            }
            let decay = (-*rate * d).exp();
            if state.len() == 1 {
                state[0] *= decay;
            } else {
                // S_j(t) = e^{−rΔ} Σ_{i≤j} S_i Δ^{j−i}/(j−i)!
                for j in 0..state.len() {
                    let mut acc = 0.0;
                    let mut pw = 1.0;
                    for i in (0..=j).rev() {
                        acc += state[i] * pw;
                        pw *= d / (j - i + 1) as f64;
                    }
                    scratch[j] = acc * decay;
                }
                state.copy_from_slice(scratch);
            }
            *at = t;
        }
    }

    /// Σ h(t − z) over registered events z (all of which are ≤ t).
    pub(crate) fn value(&mut self, t: f64) -> f64 {
        match self {
            Tracker::ExpPoly { .. } => {
                self.advance(t);
                if let Tracker::ExpPoly { coef, state, .. } = self {
                    coef.iter().zip(state.iter()).map(|(c, s)| c * s).sum()
                } else {
                    unreachable!()
                }
            }
            Tracker::Direct { kernel, events } => events.iter().map(|&z| kernel.eval(t - z)).sum(),
        }
    }

    /// Register an event at t; events must arrive in time order.
    pub(crate) fn add(&mut self, t: f64) {
        match self {
            Tracker::ExpPoly { .. } => {
                self.advance(t);
                if let Tracker::ExpPoly { state, .. } = self {
                    state[0] += 1.0;
                }
            }
            Tracker::Direct { events, .. } => events.push(t),
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Pending {
    t: f64,
    i: usize,
}

impl Eq for Pending {}

impl Ord for Pending {
    fn cmp(&self, other: &Self) -> Ordering {
        other.t.total_cmp(&self.t).then_with(|| other.i.cmp(&self.i))
    }
}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SimOptions {
    /// Evaluate γ by direct summation even when a recursion exists.
    pub direct_sum: bool,
}

fn run(
    p: &ModelParams,
    d: &PoissonDriver,
    gamma_bar: Option<&TimeSeries>,
    opts: SimOptions,
) -> Result<(Vec<EventPath>, Vec<EventPath>)> {
    if !(d.mark_bound > 0.0 && d.mark_bound.is_finite()) {
        return Err(Error::InvalidParameter { name: "mark_bound", reason: format!("{}", d.mark_bound) });
    }
    if let Some(s) = &d.streams {
        if s.len() != p.n {
            return Err(Error::InvalidParameter { name: "streams", reason: "one stream per particle".into() });
        }
    }
    let n = p.n;
    let horizon = p.horizon;
    let inv_n = 1.0 / n as f64;
    let mut finite: Vec<EventPath> = Vec::with_capacity(n);
    let mut birth = Vec::with_capacity(n);
    let mut sources = Vec::with_capacity(n);
    let mut heap = BinaryHeap::with_capacity(n);
    let mut pending = Vec::with_capacity(n);
    for i in 0..n {
        let a0 = d.initial_age(p, i);
        finite.push(EventPath { initial_age: a0, events: Vec::new() });
        birth.push(-a0);
        let mut src = d.atoms(i);
        let atom = src.next();
        pending.push(atom);
        heap.push(Pending { t: atom.0, i });
        sources.push(src);
    }
    let coupled = gamma_bar.is_some();
    let mut limit: Vec<EventPath> = if coupled { finite.clone() } else { Vec::new() };
    let mut birth_bar = birth.clone();
    let mut tracker = Tracker::new(&p.kernel, opts.direct_sum);
    let psi = &p.intensity;

    while let Some(Pending { t, i }) = heap.pop() {
        if t > horizon {
            break;
        }
        let x = pending[i].1;
        let gamma = tracker.value(t) * inv_n;
        let lam = psi.eval(t - birth[i], gamma);
        if lam > d.mark_bound || !lam.is_finite() {
            return Err(Error::IntensityExceedsBound { value: lam, bound: d.mark_bound, t, particle: i });
        }
        if x <= lam {
            finite[i].events.push(t);
            birth[i] = t;
            tracker.add(t);
        }
        if let Some(gb) = gamma_bar {
            let lam_bar = psi.eval(t - birth_bar[i], gb.at(t));
            if lam_bar > d.mark_bound {
                return Err(Error::IntensityExceedsBound { value: lam_bar, bound: d.mark_bound, t, particle: i });
            }
            if x <= lam_bar {
                limit[i].events.push(t);
                birth_bar[i] = t;
            }
        }
        let atom = sources[i].next();
        pending[i] = atom;
        heap.push(Pending { t: atom.0, i });
    }
    Ok((finite, limit))
}

/// Event paths of the n-particle system on [0, T].
pub fn simulate_adhp(p: &ModelParams, d: &PoissonDriver) -> Result<Vec<EventPath>> {
    simulate_adhp_with(p, d, SimOptions::default())
}

pub fn simulate_adhp_with(p: &ModelParams, d: &PoissonDriver, opts: SimOptions) -> Result<Vec<EventPath>> {
    Ok(run(p, d, None, opts)?.0)
}

/// The n-particle system together with n independent limit processes that
/// see γ̄ instead of γ^n, all driven by the same atoms and initial ages.
pub fn simulate_coupled(p: &ModelParams, d: &PoissonDriver, gamma_bar: &TimeSeries) -> Result<Vec<CoupledPair>> {
    simulate_coupled_with(p, d, gamma_bar, SimOptions::default())
}

pub fn simulate_coupled_with(
    p: &ModelParams,
    d: &PoissonDriver,
    gamma_bar: &TimeSeries,
    opts: SimOptions,
) -> Result<Vec<CoupledPair>> {
    if gamma_bar.end() < p.horizon * (1.0 - 1e-12) {
        return Err(Error::OutOfRange { what: "gamma_bar horizon", value: p.horizon, lo: 0.0, hi: gamma_bar.end() });
    }
    let (finite, limit) = run(p, d, Some(gamma_bar), opts)?;
    Ok(finite.into_iter().zip(limit).map(|(finite, limit)| CoupledPair { finite, limit }).collect())
}

/// γ^n_t = n⁻¹ Σ_j Σ_{z ≤ t} h(t − z), right-continuous version.
pub fn gamma_n(paths: &[EventPath], kernel: &Kernel, t: f64) -> f64 {
    let mut all: Vec<f64> = paths.iter().flat_map(|p| p.events.iter().copied().filter(|&e| e <= t)).collect();
    all.sort_by(f64::total_cmp);
    let mut tr = Tracker::new(kernel, false);
    for e in all {
        tr.add(e);
    }
    tr.value(t) / paths.len() as f64
}

/// CSV with columns replica, particle, event_time; initial ages go in a
/// companion column so the file alone reconstructs every path.
pub fn write_paths_csv<W: Write>(w: &mut W, replicas: &[(usize, &[EventPath])]) -> std::io::Result<()> {
    w.write_all(b"replica,particle,event_time,initial_age\n")?;
    for (r, paths) in replicas {
        for (i, p) in paths.iter().enumerate() {
            let a = fmt_f64(p.initial_age);
            if p.events.is_empty() {
                w.write_all(csv_line([r.to_string(), i.to_string(), String::new(), a.clone()]).as_bytes())?;
            }
            for &e in &p.events {
                w.write_all(csv_line([r.to_string(), i.to_string(), fmt_f64(e), a.clone()]).as_bytes())?;
            }
        }
    }
    Ok(())
}

const MAGIC: &[u8; 8] = b"ADHPRUN1";

/// Binary run: magic, seed, config hash, then per replica the particle count
/// and per particle (initial age, event count, events), little endian.
#[derive(Debug, Clone, PartialEq)]
pub struct RunFile {
    pub seed: u64,
    pub config_hash: [u8; 32],
    pub replicas: Vec<Vec<EventPath>>,
}

impl RunFile {
    pub fn write<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&self.config_hash)?;
        w.write_all(&(self.replicas.len() as u64).to_le_bytes())?;
        for rep in &self.replicas {
            w.write_all(&(rep.len() as u64).to_le_bytes())?;
            for p in rep {
                w.write_all(&p.initial_age.to_le_bytes())?;
                w.write_all(&(p.events.len() as u64).to_le_bytes())?;
                for e in &p.events {
                    w.write_all(&e.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn read<R: Read>(r: &mut R) -> Result<RunFile> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf).map_err(|e| Error::Format(e.to_string()))?;
        let mut pos = 0usize;
        let mut take = |k: usize| -> Result<&[u8]> {
            let s = buf.get(pos..pos + k).ok_or_else(|| Error::Format("truncated".into()))?;
            pos += k;
            Ok(s)
        };
        if take(8)? != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let u64_of = |b: &[u8]| u64::from_le_bytes(b.try_into().unwrap());
        let seed = u64_of(take(8)?);
        let mut config_hash = [0u8; 32];
        config_hash.copy_from_slice(take(32)?);
        let nrep = u64_of(take(8)?) as usize;
        let mut replicas = Vec::with_capacity(nrep.min(1 << 20));
        for _ in 0..nrep {
            let n = u64_of(take(8)?) as usize;
            let mut rep = Vec::with_capacity(n.min(1 << 24));
            for _ in 0..n {
                let initial_age = f64::from_le_bytes(take(8)?.try_into().unwrap());
                let k = u64_of(take(8)?) as usize;
                let mut events = Vec::with_capacity(k.min(1 << 24));
                for _ in 0..k {
                    events.push(f64::from_le_bytes(take(8)?.try_into().unwrap()));
                }
                rep.push(EventPath { initial_age, events });
            }
            replicas.push(rep);
        }
        Ok(RunFile { seed, config_hash, replicas })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Preset;

    #[test]
    fn ages_left_and_right() {
        let p = EventPath { initial_age: 0.3, events: vec![0.5, 1.25] };
        assert_eq!(age_at(&p, 0.2, Side::Right), 0.5);
        assert_eq!(age_at(&p, 0.5, Side::Right), 0.0);
        assert_eq!(age_at(&p, 0.5, Side::Left), 0.8);
        assert_eq!(age_at(&p, 2.0, Side::Left), 0.75);
    }

    #[test]
    fn symmetric_difference_counts() {
        let a = EventPath { initial_age: 0.0, events: vec![0.1, 0.2, 0.5] };
        let b = EventPath { initial_age: 0.0, events: vec![0.1, 0.3, 0.5, 0.9] };
        assert_eq!(symmetric_difference(&a, &b, 1.0), 3);
        assert_eq!(symmetric_difference(&a, &b, 0.15), 0);
        assert_eq!(symmetric_difference(&a, &a, 1.0), 0);
    }

    #[test]
    fn direct_and_recursive_gamma_agree() {
        for preset in [Preset::Tanh, Preset::LogisticErlang, Preset::Inhibitory] {
            let p = preset.params(20, 3.0).unwrap();
            let d = PoissonDriver::new(11, p.intensity.sup_bound());
            let a = simulate_adhp(&p, &d).unwrap();
            let b = simulate_adhp_with(&p, &d, SimOptions { direct_sum: true }).unwrap();
            // accept/reject only flips on sub-ulp ties, which do not occur here
            assert_eq!(a, b, "{preset:?}");
        }
    }

    #[test]
    fn events_are_in_horizon_and_increasing() {
        let p = Preset::Tanh.params(30, 2.0).unwrap();
        let paths = simulate_adhp(&p, &PoissonDriver::new(3, 0.9)).unwrap();
        for path in &paths {
            assert!(path.events.windows(2).all(|w| w[0] < w[1]));
            assert!(path.events.iter().all(|&e| e > 0.0 && e <= 2.0));
            assert!((0.0..=1.0).contains(&path.initial_age));
        }
    }

    #[test]
    fn bound_violation_is_an_error() {
        let p = Preset::Tanh.params(5, 2.0).unwrap();
        let err = simulate_adhp(&p, &PoissonDriver::new(3, 0.6)).unwrap_err();
        assert!(matches!(err, Error::IntensityExceedsBound { .. }));
    }

    #[test]
    fn run_file_round_trip() {
        let p = Preset::Tanh.params(4, 1.0).unwrap();
        let paths = simulate_adhp(&p, &PoissonDriver::new(9, 0.9)).unwrap();
        let f = RunFile { seed: 9, config_hash: [7; 32], replicas: vec![paths.clone(), paths] };
        let mut buf = Vec::new();
        f.write(&mut buf).unwrap();
        assert_eq!(RunFile::read(&mut buf.as_slice()).unwrap(), f);
        assert!(RunFile::read(&mut &buf[..buf.len() - 3]).is_err());
    }
}
