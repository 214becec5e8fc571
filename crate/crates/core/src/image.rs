//! The induced measure on sign configurations: brute-force weights, pair and
//! field couplings on Z^d, many-body potentials, Gibbs-ratio checks and the
//! Gaussian free-energy constant.

use rayon::prelude::*;
use serde::Serialize;

use crate::anharmonic::{envelope_intervals, QuadOptions};
use crate::error::{cap, domain, Error, Result};
use crate::gaussian::{log_det_spd, BoundaryField, DisorderField, GaussianModel, IsingConfig, ModelParams};
use crate::lattice::{LatticeVolume, Site, SiteSet};
use crate::potential::SiteModel;
use crate::quad::Rule;
use crate::walk::decay_ratio;

const LN_2PI: f64 = 1.837_877_066_409_345_3;
pub const BRUTE_CAP: usize = 4;

/// Extra per-site factor in a tensor integral.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SiteWeight {
    One,
    /// Coarse-graining kernel `T(s | m)`.
    Kernel(i8),
    /// Indicator of `m <= t`.
    AtMost(f64),
    /// Indicator of `m >= t`.
    AtLeast(f64),
}

impl SiteWeight {
    fn log(&self, model: &SiteModel, m: f64) -> f64 {
        match *self {
            SiteWeight::One => 0.0,
            SiteWeight::Kernel(s) => model.log_kernel(s, m),
            SiteWeight::AtMost(t) => {
                if m <= t {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
            SiteWeight::AtLeast(t) => {
                if m >= t {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    fn breaks(&self) -> Vec<f64> {
        match *self {
            SiteWeight::AtMost(t) | SiteWeight::AtLeast(t) => vec![t],
            _ => Vec::new(),
        }
    }
}

/// Continuous-spin model on a small box: potential, random field, boundary.
#[derive(Clone, Copy, Debug)]
pub struct SmallVolume<'a> {
    pub lat: &'a LatticeVolume,
    pub model: &'a SiteModel,
    pub eta: &'a DisorderField,
    pub boundary: &'a BoundaryField,
}

impl<'a> SmallVolume<'a> {
    pub fn new(lat: &'a LatticeVolume, model: &'a SiteModel, eta: &'a DisorderField, boundary: &'a BoundaryField) -> Result<Self> {
        cap("volume for tensor quadrature", lat.len(), BRUTE_CAP)?;
        model.params.validate()?;
        if eta.len() != lat.len() {
            return domain("random field length differs from the box");
        }
        if model.params.dim != lat.dim() {
            return domain("parameter dimension differs from the box");
        }
        Ok(SmallVolume { lat, model, eta, boundary })
    }

    /// `log int e^{-E(m)} prod_x weight_x(m_x) dm`.
    pub fn log_integral(&self, weights: &[SiteWeight], opts: QuadOptions) -> Result<f64> {
        let lat = self.lat;
        let n = lat.len();
        if weights.len() != n {
            return domain("one site weight per site is required");
        }
        let p = &self.model.params;
        let q = p.q;
        let s = 1.0 / p.a.sqrt();
        let ext: Vec<Vec<f64>> =
            (0..n).map(|x| lat.exterior_neighbors(x).iter().map(|y| self.boundary.value(y)).collect()).collect();
        let deg_in: Vec<f64> = (0..n).map(|x| lat.neighbors(x).count() as f64).collect();
        let big = ext.iter().flatten().fold(p.m_star, |acc, v| acc.max(v.abs())) + 12.0 * s;
        let base = |x: usize, m: f64| -> f64 {
            let mut v = -self.model.potential(m) + self.eta[x] * m - 0.5 * q * deg_in[x] * m * m;
            for u in &ext[x] {
                v -= 0.5 * q * (m - u).powi(2);
            }
            v + weights[x].log(self.model, m)
        };
        // Per-coordinate rules from an envelope that allows any in-box neighbour in [-big, big].
        let mut rules = Vec::with_capacity(n);
        let mut centers = Vec::with_capacity(n);
        for x in 0..n {
            let env = |m: f64| {
                let out = (m.abs() - big).max(0.0);
                base(x, m) + 0.5 * q * deg_in[x] * (m * m - out * out)
            };
            let slack = 2.0 * q * deg_in[x] * big * big;
            let span = big + 14.0 * s + self.eta[x].abs();
            let iv = envelope_intervals(env, -span, span, 0.1 * s, opts.drop + slack);
            let mut breaks = weights[x].breaks();
            breaks.extend(p.window_edges());
            let rule = Rule::panels(&iv, &breaks, opts.panel_width * s, opts.per_panel);
            if rule.is_empty() {
                return Ok(f64::NEG_INFINITY);
            }
            let c = rule
                .nodes
                .iter()
                .copied()
                .max_by(|a, b| env(*a).total_cmp(&env(*b)))
                .expect("nonempty rule");
            rules.push(rule);
            centers.push(c);
        }
        let mut bonds: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut constant = 0.0;
        for x in 0..n {
            for y in lat.neighbors(x) {
                if y < x {
                    bonds[x].push(y);
                    constant += q * centers[x] * centers[y];
                }
            }
        }
        let mut nodes = Vec::with_capacity(n);
        let mut tables = Vec::with_capacity(n);
        for x in 0..n {
            let lin: f64 = lat.neighbors(x).map(|y| q * centers[y]).sum();
            let logs: Vec<f64> = rules[x].nodes.iter().map(|&m| base(x, m) + lin * (m - centers[x])).collect();
            let shift = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if shift == f64::NEG_INFINITY {
                return Ok(f64::NEG_INFINITY);
            }
            constant += shift;
            tables.push(logs.iter().zip(&rules[x].weights).map(|(l, w)| w * (l - shift).exp()).collect::<Vec<f64>>());
            nodes.push(rules[x].nodes.iter().map(|m| m - centers[x]).collect::<Vec<f64>>());
        }
        let mut u = vec![0.0; n];
        let sum = tensor_sum(0, &nodes, &tables, &bonds, q, &mut u, 1.0, 0.0);
        Ok(constant + sum.ln())
    }
}

fn tensor_sum(
    level: usize,
    nodes: &[Vec<f64>],
    tables: &[Vec<f64>],
    bonds: &[Vec<usize>],
    q: f64,
    u: &mut [f64],
    prod: f64,
    cross: f64,
) -> f64 {
    let last = level + 1 == nodes.len();
    let pull: f64 = bonds[level].iter().map(|&j| u[j]).sum::<f64>() * q;
    let mut s = 0.0;
    for (k, &uk) in nodes[level].iter().enumerate() {
        let f = tables[level][k];
        if f == 0.0 {
            continue;
        }
        let c = cross + pull * uk;
        if last {
            s += prod * f * c.exp();
        } else {
            u[level] = uk;
            s += tensor_sum(level + 1, nodes, tables, bonds, q, u, prod * f, c);
        }
    }
    s
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Unnormalized weights of all sign configurations of a small box.
#[derive(Clone, Debug, Serialize)]
pub struct IsingWeightTable {
    pub n: usize,
    /// Indexed by the bit pattern of [`IsingConfig::to_bits`].
    pub log_weights: Vec<f64>,
    /// `log int e^{-E}` computed without the kernels.
    pub log_partition: f64,
}

impl IsingWeightTable {
    pub fn log_total(&self) -> f64 {
        log_sum_exp(&self.log_weights)
    }

    pub fn log_weight(&self, sigma: &IsingConfig) -> f64 {
        self.log_weights[sigma.to_bits() as usize]
    }

    pub fn probability(&self, bits: u64) -> f64 {
        (self.log_weights[bits as usize] - self.log_total()).exp()
    }

    /// Probability that site `x` carries sign `+1`.
    pub fn plus_probability(&self, x: usize) -> f64 {
        let lt = self.log_total();
        (0..self.log_weights.len()).filter(|b| b >> x & 1 == 0).map(|b| (self.log_weights[b] - lt).exp()).sum()
    }
}

/// Tensor-quadrature weights `int e^{-E} prod T(sigma_x | m_x)` for every sign configuration.
pub fn brute_force_image(vol: &SmallVolume, opts: QuadOptions) -> Result<IsingWeightTable> {
    let n = vol.lat.len();
    let log_weights = (0..1u64 << n)
        .into_par_iter()
        .map(|bits| {
            let sigma = IsingConfig::from_bits(n, bits);
            let w: Vec<SiteWeight> = sigma.iter().map(|&s| SiteWeight::Kernel(s)).collect();
            vol.log_integral(&w, opts)
        })
        .collect::<Result<Vec<f64>>>()?;
    let log_partition = vol.log_integral(&vec![SiteWeight::One; n], opts)?;
    Ok(IsingWeightTable { n, log_weights, log_partition })
}

/// Exact Gaussian weight `log[(2 pi)^{n/2} det(a - q Lap)^{-1/2}] - b n - inf H` of one configuration.
pub fn gaussian_log_weight(lat: &LatticeVolume, p: &ModelParams, sigma: &IsingConfig, eta: &DisorderField, bc: &BoundaryField) -> Result<f64> {
    let gm = GaussianModel::new(lat, p, sigma, eta, bc)?;
    Ok(gm.log_gaussian_partition()? - p.b * lat.len() as f64)
}

/// Row of the Z^d resolvent `(c - Lap)^{-1}` at the origin from walks of length at most `l_max`.
#[derive(Clone, Debug)]
pub struct ResolventRow {
    pub window: LatticeVolume,
    pub values: Vec<f64>,
    /// `(c+2d)^{-t} (T^t)_{00}` for `t = 0..=l_max`.
    pub returns: Vec<f64>,
    pub l_max: usize,
    /// Bound on every omitted entry mass: `rho^{l_max+1} / c`.
    pub tail_bound: f64,
}

pub fn resolvent_row(c: f64, dim: usize, l_max: usize) -> Result<ResolventRow> {
    if !(c > 0.0) {
        return domain("resolvent needs c > 0");
    }
    let window = LatticeVolume::centered(dim, l_max.max(1))?;
    let origin = window.index(&Site::new(&vec![0; dim])).expect("origin");
    let w = 1.0 / (c + 2.0 * dim as f64);
    let mut cur = vec![0.0; window.len()];
    cur[origin] = 1.0;
    let mut values = vec![0.0; window.len()];
    let mut returns = Vec::with_capacity(l_max + 1);
    for t in 0..=l_max {
        returns.push(cur[origin]);
        for (v, x) in values.iter_mut().zip(&cur) {
            *v += w * x;
        }
        if t == l_max {
            break;
        }
        let mut next = vec![0.0; window.len()];
        for (i, &x) in cur.iter().enumerate() {
            if x != 0.0 {
                for j in window.neighbors(i) {
                    next[j] += w * x;
                }
            }
        }
        cur = next;
    }
    Ok(ResolventRow { window, values, returns, l_max, tail_bound: decay_ratio(c, dim).powi(l_max as i32 + 1) / c })
}

impl ResolventRow {
    /// Entry at offset `d` from the origin (zero beyond the walk horizon).
    pub fn at(&self, d: &Site) -> f64 {
        self.window.index(d).map_or(0.0, |i| self.values[i])
    }
}

/// Pair and field couplings of the induced Ising Hamiltonian on Z^d.
#[derive(Clone, Debug, Serialize)]
pub struct PairHamiltonian {
    pub dim: usize,
    pub radius: usize,
    /// Offsets `y - x` within the walk horizon.
    pub offsets: Vec<Site>,
    /// `(a - q Lap)^{-1}_{x,y}`.
    pub green: Vec<f64>,
    /// `a^2 m*^2 / 2 (a - q Lap)^{-1}_{x,y}`.
    pub pair: Vec<f64>,
    /// `a m* (a - q Lap)^{-1}_{x,y}`.
    pub field: Vec<f64>,
    /// Bound on the omitted mass of each row of `green`.
    pub tail_bound: f64,
    pub row_sum: f64,
    q: f64,
    #[serde(skip)]
    row: Option<ResolventRow>,
}

impl PairHamiltonian {
    /// `(a - q Lap)^{-1}` at offset `d` (zero beyond the walk horizon).
    pub fn green_at(&self, d: &Site) -> f64 {
        self.row.as_ref().map_or(0.0, |r| r.at(d)) / self.q
    }
}

/// Couplings from walks of length at most `radius`; errors if the omitted tail exceeds `tol`.
pub fn pair_hamiltonian(p: &ModelParams, radius: usize, tol: f64) -> Result<PairHamiltonian> {
    p.validate()?;
    let c = p.c();
    let row = resolvent_row(c, p.dim, radius)?;
    let tail = row.tail_bound / p.q;
    if tail > tol {
        return Err(Error::Budget(format!("walk tail {tail:.3e} exceeds {tol:.3e}; enlarge the box radius")));
    }
    let mut offsets = Vec::new();
    let mut green = Vec::new();
    for i in 0..row.window.len() {
        if row.values[i] > 0.0 {
            offsets.push(row.window.site(i));
            green.push(row.values[i] / p.q);
        }
    }
    let pair = green.iter().map(|g| 0.5 * p.a * p.a * p.m_star * p.m_star * g).collect();
    let field = green.iter().map(|g| p.a * p.m_star * g).collect();
    let row_sum = green.iter().sum();
    Ok(PairHamiltonian { dim: p.dim, radius, offsets, green, pair, field, tail_bound: tail, row_sum, q: p.q, row: Some(row) })
}

/// Many-body potentials extracted from the brute-force weights.
#[derive(Clone, Debug, Serialize)]
pub struct ManyBody {
    /// `log Z(sigma)` minus the exact Gaussian part, by bit pattern.
    pub residual: Vec<f64>,
    /// Möbius inversion relative to the all-plus configuration: value at `sigma_C = -1`.
    pub vacuum: Vec<(SiteSet, f64)>,
    /// Fourier-Walsh coefficients `J_C` with `residual = sum_C J_C prod_C sigma`.
    pub walsh: Vec<(SiteSet, f64)>,
    /// Largest `|J_C|` for each `|C|`.
    pub max_by_size: Vec<f64>,
    /// Decay rate fitted to `log max |J_C|` over `|C| >= 2`.
    pub fitted_decay: Option<f64>,
}

fn walsh_coefficients(residual: &[f64], n: usize) -> Vec<f64> {
    (0..1usize << n)
        .map(|c| {
            residual
                .iter()
                .enumerate()
                .map(|(s, r)| if (c & s).count_ones() % 2 == 0 { *r } else { -r })
                .sum::<f64>()
                / (1usize << n) as f64
        })
        .collect()
}

pub fn many_body_extract(vol: &SmallVolume, opts: QuadOptions) -> Result<ManyBody> {
    let table = brute_force_image(vol, opts)?;
    many_body_from_table(vol, &table)
}

pub fn many_body_from_table(vol: &SmallVolume, table: &IsingWeightTable) -> Result<ManyBody> {
    let n = table.n;
    let all = vol.lat.all();
    let mut residual = Vec::with_capacity(1 << n);
    for bits in 0..1u64 << n {
        let sigma = IsingConfig::from_bits(n, bits);
        let g = gaussian_log_weight(vol.lat, &vol.model.params, &sigma, vol.eta, vol.boundary)?;
        residual.push(table.log_weights[bits as usize] - g);
    }
    let mut vacuum = Vec::new();
    for c in 0..1usize << n {
        let mut v = 0.0;
        let mut s = c;
        loop {
            let sign = if (c ^ s).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
            v += sign * residual[s];
            if s == 0 {
                break;
            }
            s = (s - 1) & c;
        }
        vacuum.push((SiteSet::from_mask(&all, c as u64), v));
    }
    let coeffs = walsh_coefficients(&residual, n);
    let walsh: Vec<(SiteSet, f64)> = coeffs.iter().enumerate().map(|(c, v)| (SiteSet::from_mask(&all, c as u64), *v)).collect();
    let mut max_by_size = vec![0.0f64; n + 1];
    for (c, v) in &walsh {
        max_by_size[c.len()] = max_by_size[c.len()].max(v.abs());
    }
    let pts: Vec<(f64, f64)> =
        (2..=n).filter(|&k| max_by_size[k] > 0.0).map(|k| (k as f64, max_by_size[k].ln())).collect();
    let fitted_decay = if pts.len() >= 2 {
        let m = pts.len() as f64;
        let (sx, sy) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
        let (mx, my) = (sx / m, sy / m);
        let num: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let den: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        Some(-num / den)
    } else {
        None
    };
    Ok(ManyBody { residual, vacuum, walsh, max_by_size, fitted_decay })
}

/// Largest violation of `J_C(eta, bc) = (-1)^{|C|} J_C(-eta, -bc)` between two extractions.
pub fn flip_symmetry_defect(plus: &ManyBody, minus: &ManyBody) -> f64 {
    plus.walsh
        .iter()
        .zip(&minus.walsh)
        .map(|((c, a), (_, b))| {
            let sign = if c.len() % 2 == 0 { 1.0 } else { -1.0 };
            (a - sign * b).abs()
        })
        .fold(0.0, f64::max)
}

/// Conditional sign probabilities on `v` against the induced Ising specification.
#[derive(Clone, Debug, Serialize)]
pub struct GibbsRatioReport {
    /// Finite-volume conditional probabilities, by bit pattern over `v`.
    pub lhs: Vec<f64>,
    /// Specification probabilities, same order.
    pub rhs: Vec<f64>,
    /// `max |log lhs - log rhs|`.
    pub gap: f64,
    /// Explicit boundary envelope for the gap.
    pub envelope: f64,
    pub within_envelope: bool,
}

/// Inputs for a Gibbs-ratio comparison: outer box, inner set, conditioned set, spins.
#[derive(Clone, Copy, Debug)]
pub struct GibbsRatioInput<'a> {
    pub outer: &'a LatticeVolume,
    pub inner: &'a SiteSet,
    pub v: &'a SiteSet,
    /// Fixed signs on `inner \ v` (other entries ignored).
    pub fixed: &'a IsingConfig,
    pub eta: &'a DisorderField,
    pub boundary: &'a BoundaryField,
}

fn normalize_logs(v: &[f64]) -> Vec<f64> {
    let t = log_sum_exp(v);
    v.iter().map(|x| x - t).collect()
}

fn validate_gibbs(inp: &GibbsRatioInput) -> Result<()> {
    let all = inp.outer.all();
    if !inp.inner.is_subset(&all) || !inp.v.is_subset(inp.inner) || inp.v.is_empty() {
        return domain("need v within inner within the outer box, v nonempty");
    }
    if inp.fixed.len() != inp.outer.len() || inp.eta.len() != inp.outer.len() {
        return domain("spin and field lengths must match the outer box");
    }
    Ok(())
}

/// Gaussian-mode check: finite-volume ratio by exact minimum energies against
/// the Z^d pair and field couplings with `+1` signs outside `inner`.
pub fn gibbs_ratio_gaussian(p: &ModelParams, inp: &GibbsRatioInput, pair: &PairHamiltonian) -> Result<GibbsRatioReport> {
    validate_gibbs(inp)?;
    let lat = inp.outer;
    let all = lat.all();
    let rest = all.difference(inp.inner);
    cap("summed sites in the Gibbs ratio", rest.len(), 20)?;
    cap("conditioned sites in the Gibbs ratio", inp.v.len(), 12)?;
    let nv = inp.v.len();
    let mut lhs_log = Vec::with_capacity(1 << nv);
    for vb in 0..1u64 << nv {
        let mut terms = Vec::with_capacity(1 << rest.len());
        for rb in 0..1u64 << rest.len() {
            let mut s = inp.fixed.0.clone();
            for (k, x) in inp.v.iter().enumerate() {
                s[x] = if vb >> k & 1 == 1 { -1 } else { 1 };
            }
            for (k, x) in rest.iter().enumerate() {
                s[x] = if rb >> k & 1 == 1 { -1 } else { 1 };
            }
            let sigma = IsingConfig(s);
            let gm = GaussianModel::new(lat, p, &sigma, inp.eta, inp.boundary)?;
            terms.push(-gm.min_energy()?);
        }
        lhs_log.push(log_sum_exp(&terms));
    }
    let g = |x: usize, y: usize| {
        let (sx, sy) = (lat.site(x), lat.site(y));
        let mut d = [0i32; 4];
        for k in 0..4 {
            d[k] = sy.0[k] - sx.0[k];
        }
        pair.green_at(&Site(d))
    };
    let a = p.a;
    let ms = p.m_star;
    let inner_rest = inp.inner.difference(inp.v);
    let mut rhs_log = Vec::with_capacity(1 << nv);
    for vb in 0..1u64 << nv {
        let sv: Vec<f64> = (0..nv).map(|k| if vb >> k & 1 == 1 { -1.0 } else { 1.0 }).collect();
        let mut e = 0.0;
        for (i, x) in inp.v.iter().enumerate() {
            for (j, y) in inp.v.iter().enumerate() {
                e += 0.5 * a * a * ms * ms * g(x, y) * sv[i] * sv[j];
            }
            let mut outside = 1.0 / a;
            for y in inp.inner.iter() {
                outside -= g(x, y);
            }
            let mut h: f64 = inner_rest.iter().map(|y| g(x, y) * inp.fixed[y] as f64).sum();
            h += outside;
            e += a * a * ms * ms * sv[i] * h;
            let field: f64 = all.iter().map(|y| g(x, y) * inp.eta[y]).sum();
            e += a * ms * sv[i] * field;
        }
        rhs_log.push(e);
    }
    let lhs_n = normalize_logs(&lhs_log);
    let rhs_n = normalize_logs(&rhs_log);
    let gap = lhs_n.iter().zip(&rhs_n).map(|(l, r)| (l - r).abs()).fold(0.0, f64::max);
    // Envelope from walk-length bounds on the resolvent rows.
    let rho = decay_ratio(p.c(), p.dim);
    let d1 = inp.v.iter().map(|x| lat.distance_to_exterior(x)).min().expect("nonempty") as i32;
    let d2 = lat.set_distance(inp.v, &rest).map_or(d1, |d| (d as i32).min(d1));
    let m_tilde = lat
        .all()
        .iter()
        .flat_map(|x| lat.exterior_neighbors(x))
        .map(|s| inp.boundary.value(&s).abs())
        .fold(0.0, f64::max);
    let delta = inp.eta.sup_norm();
    let two_d = 2.0 * p.dim as f64;
    let per_site = a * ms * ms * rho.powi(d1)
        + 3.0 * a * ms * ms * rho.powi(d2)
        + two_d * p.q * m_tilde * ms * rho.powi(d1 - 1)
        + ms * delta * rho.powi(d1);
    let envelope = 2.0 * nv as f64 * per_site + 2.0 * nv as f64 * a * a * ms * ms * pair.tail_bound;
    Ok(GibbsRatioReport {
        lhs: lhs_n.iter().map(|x| x.exp()).collect(),
        rhs: rhs_n.iter().map(|x| x.exp()).collect(),
        gap,
        envelope,
        within_envelope: gap <= envelope,
    })
}

/// Anharmonic-mode check on a box of at most four sites: the brute-force ratio
/// against the exact Gaussian part plus Walsh potentials with `|C| <= order`.
#[derive(Clone, Debug, Serialize)]
pub struct TruncatedGibbsReport {
    /// Gap for each truncation order `0..=|box|`.
    pub gaps: Vec<f64>,
}

pub fn gibbs_ratio_truncated(vol: &SmallVolume, v: &SiteSet, fixed: &IsingConfig, opts: QuadOptions) -> Result<TruncatedGibbsReport> {
    let n = vol.lat.len();
    let all = vol.lat.all();
    if !v.is_subset(&all) || v.is_empty() || fixed.len() != n {
        return domain("conditioned set must be a nonempty subset of the box");
    }
    let table = brute_force_image(vol, opts)?;
    let mb = many_body_from_table(vol, &table)?;
    let vmask = v.mask_in(&all).expect("subset");
    let base_bits = fixed.to_bits() & !vmask;
    let configs: Vec<u64> = (0..1u64 << v.len())
        .map(|vb| {
            let mut bits = base_bits;
            for (k, x) in v.iter().enumerate() {
                if vb >> k & 1 == 1 {
                    bits |= 1 << x;
                }
            }
            bits
        })
        .collect();
    let lhs = normalize_logs(&configs.iter().map(|&b| table.log_weights[b as usize]).collect::<Vec<_>>());
    let mut gaps = Vec::with_capacity(n + 1);
    for order in 0..=n {
        let approx: Vec<f64> = configs
            .iter()
            .map(|&b| {
                let g = table.log_weights[b as usize] - mb.residual[b as usize];
                let phi: f64 = mb
                    .walsh
                    .iter()
                    .enumerate()
                    .filter(|(_, (c, _))| c.len() <= order)
                    .map(|(cm, (_, j))| if ((cm as u64) & b).count_ones() % 2 == 0 { *j } else { -j })
                    .sum();
                g + phi
            })
            .collect();
        let rhs = normalize_logs(&approx);
        gaps.push(lhs.iter().zip(&rhs).map(|(l, r)| (l - r).abs()).fold(0.0, f64::max));
    }
    Ok(TruncatedGibbsReport { gaps })
}

/// Per-site Gaussian free-energy constant on Z^d.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct FreeEnergyConstant {
    pub value: f64,
    /// `[(a - q Lap)^{-1}]_{00}`.
    pub green_diagonal: f64,
    /// `[log(a - q Lap)]_{00}`.
    pub log_diagonal: f64,
    pub tail_bound: f64,
}

/// `-E[eta^2]/2 G_00 - 1/2 [log(a - q Lap)]_00 - b + 1/2 log 2 pi` from return walks of length `<= depth`.
pub fn free_energy_constant(p: &ModelParams, eta_second_moment: f64, depth: usize) -> Result<FreeEnergyConstant> {
    p.validate()?;
    let c = p.c();
    let two_d = 2.0 * p.dim as f64;
    if c <= two_d {
        return domain(format!("log-diagonal series requires c > 2d, got c = {c}"));
    }
    let row = resolvent_row(c, p.dim, depth)?;
    let origin = row.window.index(&Site::new(&vec![0; p.dim])).expect("origin");
    let green_diagonal = row.values[origin] / p.q;
    let mut log_diagonal = p.q.ln() + (c + two_d).ln();
    for (t, r) in row.returns.iter().enumerate().skip(1) {
        log_diagonal -= r / t as f64;
    }
    let rho = decay_ratio(c, p.dim);
    let log_tail = rho.powi(depth as i32 + 1) / ((depth + 1) as f64 * (1.0 - rho));
    let tail_bound = 0.5 * log_tail + 0.5 * eta_second_moment * row.tail_bound / p.q;
    let value = -0.5 * eta_second_moment * green_diagonal - 0.5 * log_diagonal - p.b + 0.5 * LN_2PI;
    Ok(FreeEnergyConstant { value, green_diagonal, log_diagonal, tail_bound })
}

/// `(1/|box|) log[(2 pi)^{|box|/2} det(a - q Lap)^{-1/2}]` on a finite box.
pub fn finite_volume_log_constant(lat: &LatticeVolume, p: &ModelParams) -> Result<f64> {
    let all = lat.all();
    let mut m = crate::gaussian::dirichlet_laplacian(lat, &all) * (-p.q);
    for i in 0..all.len() {
        m[(i, i)] += p.a;
    }
    let n = all.len() as f64;
    Ok(0.5 * LN_2PI - 0.5 * log_det_spd(&m)? / n)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(dim: usize) -> ModelParams {
        ModelParams::new(dim, 0.1, 2.0, 1.0, 0.05, 0.1, 0.5).unwrap()
    }

    #[test]
    fn gaussian_mode_matches_closed_form() {
        let lat = LatticeVolume::chain(2).unwrap();
        let model = SiteModel::well_mixture(params(1));
        let eta = DisorderField(vec![0.05, -0.02]);
        let bc = BoundaryField::Constant(2.0);
        let vol = SmallVolume::new(&lat, &model, &eta, &bc).unwrap();
        let table = brute_force_image(&vol, QuadOptions::with_nodes(96)).unwrap();
        for bits in 0..4 {
            let sigma = IsingConfig::from_bits(2, bits);
            let exact = gaussian_log_weight(&lat, &model.params, &sigma, &eta, &bc).unwrap();
            assert!((table.log_weights[bits as usize] - exact).abs() < 1e-9, "{bits}");
        }
    }

    #[test]
    fn resolvent_row_sums_to_inverse_c() {
        let row = resolvent_row(10.0, 2, 40).unwrap();
        let s: f64 = row.values.iter().sum();
        assert!((s - 0.1).abs() <= row.tail_bound + 1e-15);
    }

    #[test]
    fn pair_couplings_single_bond() {
        let p = ModelParams::new(1, 0.01, 40.0, 1.0, 0.0, 0.0, 1.0).unwrap();
        let h = pair_hamiltonian(&p, 12, 1e-12).unwrap();
        assert!((h.row_sum - 1.0).abs() < 1e-10);
        assert!(pair_hamiltonian(&p, 1, 1e-12).is_err());
    }
}
