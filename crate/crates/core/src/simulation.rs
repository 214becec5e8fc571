//! Quenched disorder, single-site Markov chains for the continuous-spin
//! measure, stochastic coarse graining and the ordering observable.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::anharmonic::QuadOptions;
use crate::error::{domain, Result};
use crate::gaussian::{BoundaryField, DisorderField, IsingConfig, SpinField};
use crate::image::{SiteWeight, SmallVolume};
use crate::lattice::{LatticeVolume, Site};
use crate::potential::{PotentialKind, SiteModel};

/// Law of the single-site random field.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisorderLaw {
    /// Centred Gaussian of variance `sigma2` conditioned on `|eta| <= delta`.
    TruncatedGaussian,
    /// Uniform on `[-delta, delta]`.
    Uniform,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisorderSpec {
    pub delta: f64,
    pub sigma2: f64,
    pub seed: u64,
    pub law: DisorderLaw,
}

fn site_key(s: &Site) -> u64 {
    s.0.iter().fold(0u64, |k, &c| (k << 16) | ((c + 32768) as u16 as u64))
}

/// One independent draw per site; the stream of a site depends only on its coordinates.
pub fn sample_disorder(lat: &LatticeVolume, spec: &DisorderSpec) -> Result<DisorderField> {
    if !(spec.delta >= 0.0 && spec.delta.is_finite()) {
        return domain("field bound must be finite and nonnegative");
    }
    if spec.law == DisorderLaw::TruncatedGaussian && !(spec.sigma2 > 0.0 && spec.sigma2.is_finite()) {
        return domain("truncated Gaussian law needs a positive variance");
    }
    if spec.delta == 0.0 {
        return Ok(DisorderField::zeros(lat.len()));
    }
    let sd = spec.sigma2.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let edge = if spec.law == DisorderLaw::TruncatedGaussian { normal.cdf(-spec.delta / sd) } else { 0.0 };
    let v = (0..lat.len())
        .map(|x| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(site_key(&lat.site(x)));
            let u: f64 = rng.random();
            match spec.law {
                DisorderLaw::Uniform => spec.delta * (2.0 * u - 1.0),
                DisorderLaw::TruncatedGaussian => {
                    let p = edge + u * (1.0 - 2.0 * edge);
                    (sd * normal.inverse_cdf(p)).clamp(-spec.delta, spec.delta)
                }
            }
        })
        .collect();
    Ok(DisorderField(v))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    HeatBath,
    Metropolis,
}

/// Initial field of a chain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialField {
    Plus,
    Minus,
    Zero,
}

pub const TABLE_POINTS: usize = 2048;
const TABLE_DROP: f64 = 40.0;

/// Inverse-CDF table for a one-dimensional log density.
#[derive(Default)]
struct Table {
    x: Vec<f64>,
    d: Vec<f64>,
    cum: Vec<f64>,
}

impl Table {
    fn rebuild(&mut self, g: &dyn Fn(f64) -> f64, modes: &[f64], width: f64) {
        let gmax = modes.iter().map(|&m| g(m)).fold(f64::NEG_INFINITY, f64::max);
        let floor = gmax - TABLE_DROP;
        let mut iv: Vec<(f64, f64)> = Vec::new();
        for &c in modes {
            if g(c) < floor {
                continue;
            }
            let reach = |dir: f64| {
                let (mut t, mut step) = (c, width);
                for k in 0..200 {
                    t += dir * step;
                    if g(t) < floor {
                        break;
                    }
                    if k >= 32 {
                        step *= 2.0;
                    }
                }
                t
            };
            iv.push((reach(-1.0), reach(1.0)));
        }
        iv.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut merged: Vec<(f64, f64)> = Vec::new();
        for (lo, hi) in iv {
            match merged.last_mut() {
                Some(last) if lo <= last.1 => last.1 = last.1.max(hi),
                _ => merged.push((lo, hi)),
            }
        }
        let total: f64 = merged.iter().map(|(a, b)| b - a).sum();
        self.x.clear();
        self.d.clear();
        self.cum.clear();
        let mut acc = 0.0;
        for (lo, hi) in merged {
            let k = ((TABLE_POINTS as f64 * (hi - lo) / total).round() as usize).max(2);
            let h = (hi - lo) / (k - 1) as f64;
            for j in 0..k {
                let x = lo + h * j as f64;
                let d = (g(x) - gmax).exp();
                if j > 0 {
                    acc += 0.5 * h * (d + self.d[self.d.len() - 1]);
                }
                self.x.push(x);
                self.d.push(d);
                // A zero-mass cell separates disjoint intervals.
                self.cum.push(acc);
            }
        }
    }

    fn sample(&self, u: f64) -> f64 {
        let target = u * self.cum[self.cum.len() - 1];
        let j = self.cum.partition_point(|&c| c < target).clamp(1, self.cum.len() - 1);
        let (x0, x1) = (self.x[j - 1], self.x[j]);
        if j > 0 && self.cum[j] == self.cum[j - 1] {
            return x1;
        }
        let h = x1 - x0;
        let (d0, d1) = (self.d[j - 1], self.d[j]);
        let v = target - self.cum[j - 1];
        let slope = (d1 - d0) / h;
        let t = if slope.abs() * h < 1e-9 * (d0 + d1) {
            v / d0.max(f64::MIN_POSITIVE)
        } else {
            (-d0 + (d0 * d0 + 2.0 * slope * v).max(0.0).sqrt()) / slope
        };
        x0 + t.clamp(0.0, h)
    }
}

/// Real roots of `t^3 + p t + q = 0`.
fn depressed_cubic_roots(p: f64, q: f64) -> Vec<f64> {
    if p == 0.0 {
        return vec![(-q).cbrt()];
    }
    let disc = q * q / 4.0 + p * p * p / 27.0;
    if disc > 0.0 {
        let s = disc.sqrt();
        vec![(-q / 2.0 + s).cbrt() + (-q / 2.0 - s).cbrt()]
    } else {
        let r = 2.0 * (-p / 3.0).sqrt();
        let phi = ((3.0 * q / (2.0 * p)) * (-3.0 / p).sqrt()).clamp(-1.0, 1.0).acos() / 3.0;
        (0..3).map(|k| r * (phi - std::f64::consts::TAU * k as f64 / 3.0).cos()).collect()
    }
}

/// State of a single-site chain: field, counters and the random stream.
#[derive(Clone, Debug)]
pub struct ChainState {
    pub field: SpinField,
    pub sweep_count: u64,
    pub rng: ChaCha8Rng,
    /// Accepted proposals per site (heat-bath accepts every update).
    pub accepted: Vec<u64>,
    pub proposed: Vec<u64>,
}

impl ChainState {
    pub fn acceptance_rate(&self) -> f64 {
        let p: u64 = self.proposed.iter().sum();
        if p == 0 {
            return 0.0;
        }
        self.accepted.iter().sum::<u64>() as f64 / p as f64
    }
}

/// Chain for `exp(-E)` on a box with fixed outside values.
pub struct Chain<'a> {
    model: &'a SiteModel,
    eta: &'a DisorderField,
    neighbors: Vec<Vec<usize>>,
    outside: Vec<f64>,
    algorithm: Algorithm,
    stiffness: f64,
    table: Table,
    pub state: ChainState,
}

impl<'a> Chain<'a> {
    pub fn new(
        lat: &LatticeVolume,
        model: &'a SiteModel,
        eta: &'a DisorderField,
        boundary: &BoundaryField,
        algorithm: Algorithm,
        init: InitialField,
        seed: u64,
    ) -> Result<Self> {
        model.params.validate()?;
        if eta.len() != lat.len() {
            return domain("random field length differs from the box");
        }
        if model.params.dim != lat.dim() {
            return domain("parameter dimension differs from the box");
        }
        let n = lat.len();
        let start = match init {
            InitialField::Plus => model.params.m_star,
            InitialField::Minus => -model.params.m_star,
            InitialField::Zero => 0.0,
        };
        Ok(Chain {
            model,
            eta,
            neighbors: (0..n).map(|x| lat.neighbors(x).collect()).collect(),
            outside: (0..n).map(|x| lat.exterior_neighbors(x).iter().map(|y| boundary.value(y)).sum()).collect(),
            algorithm,
            stiffness: 2.0 * lat.dim() as f64 * model.params.q,
            table: Table::default(),
            state: ChainState {
                field: SpinField(vec![start; n]),
                sweep_count: 0,
                rng: ChaCha8Rng::seed_from_u64(seed),
                accepted: vec![0; n],
                proposed: vec![0; n],
            },
        })
    }

    /// Log conditional density at a site with linear coefficient `h`: `-V(m) - k m^2/2 + h m`.
    fn log_conditional(&self, m: f64, h: f64) -> f64 {
        -self.model.potential(m) - 0.5 * self.stiffness * m * m + h * m
    }

    fn modes(&self, h: f64) -> Vec<f64> {
        let p = &self.model.params;
        let k = self.stiffness;
        match self.model.kind {
            PotentialKind::Quartic => {
                let ms2 = p.m_star * p.m_star;
                let mut r = depressed_cubic_roots(ms2 * (2.0 * k - 1.0), -2.0 * ms2 * h);
                for t in r.iter_mut() {
                    for _ in 0..3 {
                        let g1 = -*t * (*t * *t - ms2) / (2.0 * ms2) - k * *t + h;
                        let g2 = -(3.0 * *t * *t - ms2) / (2.0 * ms2) - k;
                        if g2 != 0.0 {
                            *t -= g1 / g2;
                        }
                    }
                }
                r
            }
            PotentialKind::WellMixture => {
                vec![(h + p.a * p.m_star) / (p.a + k), (h - p.a * p.m_star) / (p.a + k)]
            }
        }
    }

    fn update(&mut self, x: usize) {
        let q = self.model.params.q;
        let field = &self.state.field.0;
        let s: f64 = self.neighbors[x].iter().map(|&y| field[y]).sum::<f64>() + self.outside[x];
        let h = self.eta[x] + q * s;
        let old = field[x];
        self.state.proposed[x] += 1;
        match self.algorithm {
            Algorithm::HeatBath => {
                let modes = self.modes(h);
                let width = 1.0 / (self.model.params.a + self.stiffness).sqrt();
                let mut table = std::mem::take(&mut self.table);
                table.rebuild(&|m| self.log_conditional(m, h), &modes, width);
                let u: f64 = self.state.rng.random();
                self.state.field.0[x] = table.sample(u);
                self.table = table;
                self.state.accepted[x] += 1;
            }
            Algorithm::Metropolis => {
                let scale = 1.0 / (self.model.params.a + self.stiffness).sqrt();
                let z: f64 = self.state.rng.sample(StandardNormal);
                let new = old + scale * z;
                let log_ratio = self.log_conditional(new, h) - self.log_conditional(old, h);
                let u: f64 = self.state.rng.random();
                if log_ratio >= 0.0 || u < log_ratio.exp() {
                    self.state.field.0[x] = new;
                    self.state.accepted[x] += 1;
                }
            }
        }
    }

    /// One sweep in lexicographic site order.
    pub fn sweep(&mut self) {
        for x in 0..self.neighbors.len() {
            self.update(x);
        }
        self.state.sweep_count += 1;
    }

    pub fn field(&self) -> &[f64] {
        &self.state.field.0
    }
}

/// Run `sweeps` sweeps, passing the field after each to `observe`.
#[allow(clippy::too_many_arguments)]
pub fn run_chain(
    lat: &LatticeVolume,
    model: &SiteModel,
    eta: &DisorderField,
    boundary: &BoundaryField,
    sweeps: usize,
    seed: u64,
    algorithm: Algorithm,
    mut observe: impl FnMut(u64, &[f64]),
) -> Result<ChainState> {
    if sweeps < 1 {
        return domain("at least one sweep is required");
    }
    let mut chain = Chain::new(lat, model, eta, boundary, algorithm, InitialField::Plus, seed)?;
    for _ in 0..sweeps {
        chain.sweep();
        observe(chain.state.sweep_count, chain.field());
    }
    Ok(chain.state)
}

/// Draw `sigma_x ~ T(. | m_x)` independently.
pub fn coarse_grain(m: &SpinField, model: &SiteModel, seed: u64) -> IsingConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    IsingConfig(
        m.iter()
            .map(|&v| {
                let u: f64 = rng.random();
                if u < model.kernel(1, v) {
                    1
                } else {
                    -1
                }
            })
            .collect(),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrderOptions {
    pub sweeps: usize,
    /// Minimum burn-in; extended while the drift diagnostic exceeds 2.
    pub burn_in: usize,
    pub batches: usize,
    pub algorithm: Algorithm,
    pub init: InitialField,
    pub seed: u64,
}

impl Default for OrderOptions {
    fn default() -> Self {
        OrderOptions {
            sweeps: 4000,
            burn_in: 1000,
            batches: 20,
            algorithm: Algorithm::HeatBath,
            init: InitialField::Plus,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct OrderEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub burn_in_used: usize,
    /// Drift z-score of the site value over the last burn-in window.
    pub geweke_z: f64,
    pub mean_value: f64,
    pub acceptance_rate: f64,
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 { v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (m, var)
}

fn batch_means(v: &[f64], batches: usize) -> Vec<f64> {
    let b = batches.clamp(1, v.len().max(1));
    let size = v.len() / b;
    (0..b).map(|i| v[i * size..(i + 1) * size].iter().sum::<f64>() / size.max(1) as f64).collect()
}

/// Drift z-score between the first tenth and the last half of a trace, via batch means.
pub fn geweke_z(trace: &[f64]) -> f64 {
    let n = trace.len();
    if n < 20 {
        return 0.0;
    }
    let a = &trace[..n / 10];
    let b = &trace[n / 2..];
    let (ma, va) = mean_var(&batch_means(a, 2));
    let (mb, vb) = mean_var(&batch_means(b, 5));
    let se = (va / 2.0 + vb / 5.0).sqrt();
    if se == 0.0 {
        if ma == mb {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (ma - mb) / se
    }
}

/// Event of the ordering observable at a site.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderEvent {
    /// `m <= m*/2`.
    BelowHalf,
    /// `m >= -m*/2`.
    AboveMinusHalf,
}

/// Time average of the event at `x0` with batched standard error.
pub fn order_probability(
    lat: &LatticeVolume,
    model: &SiteModel,
    eta: &DisorderField,
    boundary: &BoundaryField,
    x0: usize,
    event: OrderEvent,
    opts: &OrderOptions,
) -> Result<OrderEstimate> {
    if x0 >= lat.len() {
        return domain("observation site outside the box");
    }
    if opts.sweeps < opts.batches.max(1) {
        return domain("need at least one sweep per batch");
    }
    let half = 0.5 * model.params.m_star;
    let hit = |m: f64| match event {
        OrderEvent::BelowHalf => (m <= half) as u8 as f64,
        OrderEvent::AboveMinusHalf => (m >= -half) as u8 as f64,
    };
    let mut chain = Chain::new(lat, model, eta, boundary, opts.algorithm, opts.init, opts.seed)?;
    let mut trace = Vec::with_capacity(opts.burn_in);
    for _ in 0..opts.burn_in {
        chain.sweep();
        trace.push(chain.field()[x0]);
    }
    let mut z = geweke_z(&trace);
    let mut used = opts.burn_in;
    let window = opts.burn_in.max(1);
    while z.abs() > 2.0 && used < 4 * opts.burn_in {
        trace.clear();
        for _ in 0..window {
            chain.sweep();
            trace.push(chain.field()[x0]);
        }
        used += window;
        z = geweke_z(&trace);
    }
    let mut ind = Vec::with_capacity(opts.sweeps);
    let mut sum = 0.0;
    for _ in 0..opts.sweeps {
        chain.sweep();
        let m = chain.field()[x0];
        sum += m;
        ind.push(hit(m));
    }
    let means = batch_means(&ind, opts.batches);
    let (_, var) = mean_var(&means);
    Ok(OrderEstimate {
        estimate: ind.iter().sum::<f64>() / ind.len() as f64,
        stderr: (var / means.len() as f64).sqrt(),
        burn_in_used: used,
        geweke_z: z,
        mean_value: sum / opts.sweeps as f64,
        acceptance_rate: chain.state.acceptance_rate(),
    })
}

/// Comparison of the continuous and coarse-grained probabilities of a negative site.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Prop52Report {
    /// `mu[m_x0 <= m*/2]`.
    pub lhs: f64,
    /// `T(mu)[sigma_x0 = -1]`.
    pub image_minus: f64,
    /// `lhs - image_minus`.
    pub residual: f64,
    pub alpha: f64,
    /// `exp(-alpha)`.
    pub alpha_term: f64,
    /// `exp(-m*^2)`.
    pub mass_term: f64,
    pub rhs: f64,
    pub margin: f64,
    pub holds: bool,
}

/// `alpha = min(log 1/q, log(1/eps) (log(1/q)/log m*)^d)` with unit constants.
pub fn decay_alpha(q: f64, m_star: f64, dim: usize, epsilon: f64) -> f64 {
    let lq = (1.0 / q).ln();
    lq.min((1.0 / epsilon).ln() * (lq / m_star.ln()).powi(dim as i32))
}

/// Both sides by tensor quadrature on a box of at most 3 sites.
pub fn prop52_check(
    lat: &LatticeVolume,
    model: &SiteModel,
    eta: &DisorderField,
    boundary: &BoundaryField,
    x0: usize,
    epsilon: f64,
    opts: QuadOptions,
) -> Result<Prop52Report> {
    crate::error::cap("volume for the coarse-graining comparison", lat.len(), 3)?;
    if x0 >= lat.len() {
        return domain("observation site outside the box");
    }
    let vol = SmallVolume::new(lat, model, eta, boundary)?;
    let n = lat.len();
    let mut w = vec![SiteWeight::One; n];
    let log_z = vol.log_integral(&w, opts)?;
    w[x0] = SiteWeight::AtMost(0.5 * model.params.m_star);
    let lhs = (vol.log_integral(&w, opts)? - log_z).exp();
    w[x0] = SiteWeight::Kernel(-1);
    let image_minus = (vol.log_integral(&w, opts)? - log_z).exp();
    let p = &model.params;
    let alpha = decay_alpha(p.q, p.m_star, p.dim, epsilon);
    let alpha_term = (-alpha).exp();
    let mass_term = (-p.m_star * p.m_star).exp();
    let rhs = image_minus + alpha_term + mass_term;
    Ok(Prop52Report {
        lhs,
        image_minus,
        residual: lhs - image_minus,
        alpha,
        alpha_term,
        mass_term,
        rhs,
        margin: rhs - lhs,
        holds: lhs <= rhs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::ModelParams;
    use crate::quad::adaptive;

    fn shallow(dim: usize, q: f64) -> SiteModel {
        SiteModel::quartic(ModelParams::new(dim, q, 2.0, 1.0, 0.0, 0.0, 0.5).unwrap())
    }

    #[test]
    fn cubic_roots() {
        let r = depressed_cubic_roots(-7.0, 6.0);
        let mut r = r.clone();
        r.sort_by(f64::total_cmp);
        for (a, b) in r.iter().zip([-3.0, 1.0, 2.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((depressed_cubic_roots(1.0, -2.0)[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_bound_gives_zero_field() {
        let lat = LatticeVolume::cube(2, 5).unwrap();
        let spec = DisorderSpec { delta: 0.0, sigma2: 1.0, seed: 3, law: DisorderLaw::TruncatedGaussian };
        assert!(sample_disorder(&lat, &spec).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn disorder_nests() {
        let big = LatticeVolume::cube(2, 6).unwrap();
        let small = LatticeVolume::cube(2, 3).unwrap();
        let spec = DisorderSpec { delta: 0.5, sigma2: 0.1, seed: 9, law: DisorderLaw::Uniform };
        let a = sample_disorder(&big, &spec).unwrap();
        let b = sample_disorder(&small, &spec).unwrap();
        for x in 0..small.len() {
            let y = big.index(&small.site(x)).unwrap();
            assert_eq!(a[y], b[x]);
        }
    }

    #[test]
    fn one_site_heat_bath_matches_quadrature() {
        let lat = LatticeVolume::chain(1).unwrap();
        let model = shallow(1, 0.3);
        let eta = DisorderField(vec![0.2]);
        let bc = BoundaryField::Constant(0.5);
        let mut samples = Vec::new();
        run_chain(&lat, &model, &eta, &bc, 100_000, 4, Algorithm::HeatBath, |_, f| samples.push(f[0])).unwrap();
        samples.sort_by(f64::total_cmp);
        let h = 0.2 + 0.3 * 1.0;
        let dens = |m: f64| (-model.potential(m) - 0.3 * m * m + h * m).exp();
        let z = adaptive(dens, -10.0, 10.0, &[], 1e-14, 1e-12);
        let mut ks = 0.0f64;
        for k in 0..=200 {
            let t = -5.0 + 10.0 * k as f64 / 200.0;
            let cdf = adaptive(dens, -10.0, t, &[], 1e-14, 1e-12) / z;
            let emp = samples.partition_point(|&v| v <= t) as f64 / samples.len() as f64;
            ks = ks.max((cdf - emp).abs());
        }
        assert!(ks < 0.01, "KS distance {ks}");
    }

    #[test]
    fn reproducible_trajectories() {
        let lat = LatticeVolume::cube(2, 3).unwrap();
        let model = shallow(2, 0.2);
        let eta = DisorderField::zeros(lat.len());
        let bc = BoundaryField::Constant(2.0);
        for alg in [Algorithm::HeatBath, Algorithm::Metropolis] {
            let a = run_chain(&lat, &model, &eta, &bc, 50, 11, alg, |_, _| {}).unwrap();
            let b = run_chain(&lat, &model, &eta, &bc, 50, 11, alg, |_, _| {}).unwrap();
            assert_eq!(a.field, b.field);
        }
    }

    #[test]
    fn fair_coin_at_zero() {
        let model = shallow(1, 0.0);
        let s = coarse_grain(&SpinField(vec![0.0; 20_000]), &model, 5);
        let plus = s.iter().filter(|&&v| v == 1).count() as f64 / 20_000.0;
        assert!((plus - 0.5).abs() < 3.0 * 0.5 / (20_000f64).sqrt());
    }

    #[test]
    fn alpha_is_capped_by_coupling() {
        assert!((decay_alpha(0.01, 10.0, 1, 1e-300) - 100f64.ln()).abs() < 1e-12);
    }
}
