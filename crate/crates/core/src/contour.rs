//! Contours of sign configurations, their naive energy, low-temperature
//! activities, small-field terms and the Peierls constants.

use std::collections::HashMap;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{cap, domain, Result};
use crate::gaussian::{BoundaryField, DisorderField, GaussianModel, IsingConfig, ModelParams};
use crate::lattice::{connected_components, for_each_connected_subset, r_hull, LatticeVolume, SiteSet};
use crate::walk::{decay_ratio, length_for_tolerance, range_kernels, walk_kernel, EXHAUSTIVE_CAP};

/// A support together with the full sign configuration of the box.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Contour {
    pub support: SiteSet,
    pub spins: IsingConfig,
}

impl Contour {
    pub fn components(&self, lat: &LatticeVolume) -> Vec<SiteSet> {
        connected_components(lat, &self.support)
    }
}

/// Sites within `r` of a disagreeing sign, plus minus sites within `r + 1` of the exterior.
pub fn extract_contour(lat: &LatticeVolume, sigma: &IsingConfig, r: u32) -> Result<Contour> {
    if r < 1 {
        return domain("contour range must be at least 1");
    }
    if sigma.len() != lat.len() {
        return domain("sign configuration length differs from the box");
    }
    let plus: SiteSet = (0..lat.len()).filter(|&x| sigma[x] == 1).collect();
    let minus: SiteSet = (0..lat.len()).filter(|&x| sigma[x] == -1).collect();
    let near_minus = r_hull(lat, &minus, r)?.intersection(&plus);
    let near_plus = r_hull(lat, &plus, r)?.intersection(&minus);
    let collar: SiteSet = minus.iter().filter(|&x| lat.distance_to_exterior(x) <= r + 1).collect();
    Ok(Contour { support: near_minus.union(&near_plus).union(&collar), spins: sigma.clone() })
}

/// The same support as the union of connected sets of diameter at most `r`
/// that are non-constant, or touch the exterior and carry a minus sign.
pub fn support_from_sets(lat: &LatticeVolume, sigma: &IsingConfig, r: u32) -> Result<SiteSet> {
    if r < 1 {
        return domain("contour range must be at least 1");
    }
    let mut members = vec![false; lat.len()];
    for_each_connected_subset(
        lat,
        &lat.all(),
        |c| lat.diameter(c) <= r,
        |c| {
            let has_minus = c.iter().any(|&x| sigma[x] == -1);
            let has_plus = c.iter().any(|&x| sigma[x] == 1);
            let touches = c.iter().any(|&x| lat.exterior_degree(x) > 0);
            if (has_minus && has_plus) || (touches && has_minus) {
                for &x in c {
                    members[x] = true;
                }
            }
        },
    );
    Ok((0..lat.len()).filter(|&x| members[x]).collect())
}

/// Disagreeing bonds inside the support plus exterior bonds of minus sites in the support.
pub fn naive_energy(lat: &LatticeVolume, contour: &Contour) -> u64 {
    let s = &contour.spins;
    let mut e = 0;
    for x in contour.support.iter() {
        for y in lat.neighbors(x) {
            if y > x && contour.support.contains(y) && s[x] != s[y] {
                e += 1;
            }
        }
        if s[x] == -1 {
            e += lat.exterior_degree(x) as u64;
        }
    }
    e
}

/// Kernels of small ranges keyed by shape, so translated copies are computed once.
#[derive(Default)]
pub struct KernelCache {
    c: f64,
    l_max: usize,
    map: HashMap<Vec<[i32; 4]>, DMatrix<f64>>,
}

impl KernelCache {
    pub fn new(c: f64, l_max: usize) -> Self {
        KernelCache { c, l_max, map: HashMap::new() }
    }

    pub fn kernel(&mut self, lat: &LatticeVolume, set: &SiteSet) -> Result<DMatrix<f64>> {
        let sites: Vec<[i32; 4]> = set.iter().map(|x| lat.site(x).0).collect();
        let mut lo = sites[0];
        for s in &sites {
            for k in 0..4 {
                lo[k] = lo[k].min(s[k]);
            }
        }
        let key: Vec<[i32; 4]> = sites.iter().map(|s| std::array::from_fn(|k| s[k] - lo[k])).collect();
        if let Some(m) = self.map.get(&key) {
            return Ok(m.clone());
        }
        let l = self.l_max.max(set.len() - 1);
        let m = walk_kernel(lat, set, self.c, l)?.matrix;
        self.map.insert(key, m.clone());
        Ok(m)
    }
}

/// Default walk length for kernels: omitted row mass below `1e-14`.
pub fn default_walk_length(p: &ModelParams) -> usize {
    length_for_tolerance(p.c(), p.dim, 1e-14)
}

/// `q sum_{y outside, y ~ x} m~_y` for every site of the box.
pub fn boundary_source(lat: &LatticeVolume, bc: &BoundaryField) -> Vec<f64> {
    (0..lat.len()).map(|x| lat.exterior_neighbors(x).iter().map(|y| bc.value(y)).sum()).collect()
}

fn pair_part(p: &ModelParams, k: &DMatrix<f64>, s: &[f64]) -> f64 {
    let mut v = 0.0;
    for i in 0..s.len() {
        for j in 0..s.len() {
            v += k[(i, j)] * (s[i] * s[j] - 1.0);
        }
    }
    0.5 * p.a * p.a * p.m_star * p.m_star / p.q * v
}

fn boundary_part(p: &ModelParams, k: &DMatrix<f64>, src: &[f64], s: &[f64]) -> f64 {
    let mut v = 0.0;
    for i in 0..s.len() {
        for j in 0..s.len() {
            v += src[i] * k[(i, j)] * (s[j] - 1.0);
        }
    }
    p.a * p.m_star * v
}

/// Low-temperature activity of a sign configuration with its Peierls bounds.
#[derive(Clone, Debug, Serialize)]
pub struct LtActivity {
    pub log_activity: f64,
    pub support: SiteSet,
    pub energy: u64,
    /// Number of ranges that contributed.
    pub sets: usize,
    /// Largest single-range contribution (never positive for nonnegative boundary values).
    pub max_term: f64,
    /// `-2 beta E_s`.
    pub energy_bound: f64,
    /// `-beta E_s - beta (2r+1)^{-d} |support|`.
    pub volume_bound: f64,
    pub holds: bool,
}

/// Sum over connected ranges of diameter at most `r` of the pair and boundary terms.
pub fn lt_activity(lat: &LatticeVolume, sigma: &IsingConfig, r: u32, bc: &BoundaryField, p: &ModelParams, cache: &mut KernelCache) -> Result<LtActivity> {
    p.validate()?;
    let contour = extract_contour(lat, sigma, r)?;
    let src_all = boundary_source(lat, bc);
    let mut total = 0.0;
    let mut max_term = f64::NEG_INFINITY;
    let mut sets = 0usize;
    let mut err = None;
    for_each_connected_subset(
        lat,
        &contour.support,
        |c| lat.diameter(c) <= r,
        |c| {
            if err.is_some() {
                return;
            }
            let s: Vec<f64> = c.iter().map(|&x| sigma[x] as f64).collect();
            let nonconstant = s.iter().any(|&v| v != s[0]);
            let src: Vec<f64> = c.iter().map(|&x| src_all[x]).collect();
            let touches = src.iter().any(|&v| v != 0.0);
            if !nonconstant && !(touches && s[0] < 0.0) {
                return;
            }
            match cache.kernel(lat, &SiteSet::new(c.to_vec())) {
                Ok(k) => {
                    let t = pair_part(p, &k, &s) + boundary_part(p, &k, &src, &s);
                    total += t;
                    max_term = max_term.max(t);
                    sets += 1;
                }
                Err(e) => err = Some(e),
            }
        },
    );
    if let Some(e) = err {
        return Err(e);
    }
    let energy = naive_energy(lat, &contour);
    let beta = beta(p);
    let energy_bound = -2.0 * beta * energy as f64;
    let volume_bound = -beta * energy as f64 - beta * ((2 * r + 1) as f64).powi(-(p.dim as i32)) * contour.support.len() as f64;
    let slack = 1e-9 * (1.0 + total.abs());
    Ok(LtActivity {
        log_activity: total,
        support: contour.support,
        energy,
        sets,
        max_term: if sets == 0 { 0.0 } else { max_term },
        energy_bound,
        volume_bound,
        holds: total <= energy_bound + slack && total <= volume_bound + slack,
    })
}

/// `(a m*/q) <eta_C, K_C 1_C>` with its walk-bound envelope.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct SmallFieldTerm {
    pub value: f64,
    /// `m* delta |C| rho^{|C|-1}` from the kernel row-sum bound.
    pub envelope: f64,
    /// `-log(|value| / (delta m*)) / |C|`, infinite when the value vanishes.
    pub measured_exponent: f64,
}

pub fn small_field_term(lat: &LatticeVolume, set: &SiteSet, eta: &DisorderField, p: &ModelParams, cache: &mut KernelCache) -> Result<SmallFieldTerm> {
    if set.is_empty() {
        return domain("small-field term needs a nonempty set");
    }
    let k = cache.kernel(lat, set)?;
    let e: Vec<f64> = set.iter().map(|x| eta[x]).collect();
    let mut v = 0.0;
    for i in 0..e.len() {
        for j in 0..e.len() {
            v += e[i] * k[(i, j)];
        }
    }
    let value = p.a * p.m_star / p.q * v;
    let delta = e.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let rho = decay_ratio(p.c(), p.dim);
    let n = set.len() as f64;
    let envelope = p.m_star * delta * n * rho.powi(set.len() as i32 - 1);
    let measured_exponent = if value == 0.0 { f64::INFINITY } else { -(value.abs() / (delta * p.m_star)).ln() / n };
    Ok(SmallFieldTerm { value, envelope, measured_exponent })
}

/// The regrouped exponent of the energy difference to the all-plus configuration.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Regrouping {
    /// `-inf H(sigma) + inf H(+) + (a m*/q) <eta, R 1>` by direct solve.
    pub direct: f64,
    /// Low-temperature exponent: ranges of diameter `<= r`.
    pub low_temperature: f64,
    /// Field terms on non-constant ranges of diameter `<= r`.
    pub local_field: f64,
    /// Small-field terms on constant ranges, signed by the phase.
    pub vacuum_field: f64,
    /// Pair and field terms on non-constant ranges of diameter `> r`.
    pub long_range: f64,
    /// Boundary terms on ranges of diameter `> r` touching the exterior.
    pub long_boundary: f64,
    pub total: f64,
    pub tail_bound: f64,
}

/// Evaluate every part of the regrouping over all connected ranges of a box of at most 12 sites.
pub fn regrouping_check(lat: &LatticeVolume, sigma: &IsingConfig, eta: &DisorderField, bc: &BoundaryField, p: &ModelParams, r: u32) -> Result<Regrouping> {
    cap("box for the regrouping check", lat.len(), EXHAUSTIVE_CAP)?;
    let all = lat.all();
    let plus = IsingConfig::all_plus(lat.len());
    let gm = GaussianModel::new(lat, p, sigma, eta, bc)?;
    let gp = GaussianModel::new(lat, p, &plus, eta, bc)?;
    let rk = range_kernels(lat, &all, p.c(), default_walk_length(p).max(lat.len()))?;
    let res = crate::gaussian::resolvent_direct(lat, &all, p.c())?;
    let eta_r1: f64 = (0..lat.len()).map(|x| eta[x] * res.row(x).sum()).sum();
    let direct = -gm.min_energy()? + gp.min_energy()? + p.a * p.m_star / p.q * eta_r1;
    let src = boundary_source(lat, bc);
    let mut parts = [0.0; 5];
    for mask in crate::lattice::connected_masks(lat, &all)? {
        let c = SiteSet::from_mask(&all, mask);
        let idx: Vec<usize> = c.iter().collect();
        let k = DMatrix::from_fn(idx.len(), idx.len(), |i, j| rk.entry(mask, idx[i], idx[j]));
        let s: Vec<f64> = idx.iter().map(|&x| sigma[x] as f64).collect();
        let e: Vec<f64> = idx.iter().map(|&x| eta[x]).collect();
        let sc: Vec<f64> = idx.iter().map(|&x| src[x]).collect();
        let mut field = 0.0;
        for i in 0..idx.len() {
            for j in 0..idx.len() {
                field += e[i] * k[(i, j)] * s[j];
            }
        }
        field *= p.a * p.m_star / p.q;
        let constant = s.iter().all(|&v| v == s[0]);
        let small = lat.diameter(&idx) <= r;
        let pair = pair_part(p, &k, &s);
        let bnd = boundary_part(p, &k, &sc, &s);
        if small {
            parts[0] += pair + bnd;
            if !constant {
                parts[1] += field;
            }
        } else {
            if !constant {
                parts[3] += pair + field;
            }
            if sc.iter().any(|&v| v != 0.0) {
                parts[4] += bnd;
            }
        }
        if constant {
            parts[2] += field;
        }
    }
    let total: f64 = parts.iter().sum();
    let n = lat.len() as f64;
    let scale = p.a * p.m_star * p.m_star * n * n + p.a * p.m_star * (eta.sup_norm() + src.iter().fold(0.0f64, |m, v| m.max(v.abs()))) * n * n / p.q;
    Ok(Regrouping {
        direct,
        low_temperature: parts[0],
        local_field: parts[1],
        vacuum_field: parts[2],
        long_range: parts[3],
        long_boundary: parts[4],
        total,
        tail_bound: scale * rk.tail,
    })
}

/// `q m*^2 / 2 * a^2 / ((a + 2dq)^2 - q^2)`.
pub fn beta(p: &ModelParams) -> f64 {
    let s = p.a + 2.0 * p.dim as f64 * p.q;
    0.5 * p.q * p.m_star * p.m_star * p.a * p.a / (s * s - p.q * p.q)
}

/// `floor(2 log(a m*^2) / log(1 + a/(2dq))) + 1`.
pub fn interaction_range(p: &ModelParams) -> u32 {
    let two_dq = 2.0 * p.dim as f64 * p.q;
    let v = 2.0 * (p.a * p.m_star * p.m_star).ln() / (1.0 + p.a / two_dq).ln();
    (v.floor().max(0.0) as u32) + 1
}

/// Peierls constants; the unspecified order-one factor is `scale`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct PeierlsConstants {
    pub beta: f64,
    pub r: u32,
    pub beta_tilde_gauss: f64,
    pub beta_tilde: f64,
    pub alpha: f64,
    pub alpha_final: f64,
    /// Exact single disagreeing-bond exponent `-(2 a^2 m*^2/q) K(x->y; {x,y})`.
    pub pair_bond: f64,
    /// `q m*^2 2a/(a + 2dq)`: single exterior-bond suppression.
    pub boundary_prefactor: f64,
    pub scale: f64,
    /// False when some constant is not positive (outside the regime of the estimates).
    pub all_positive: bool,
}

pub fn peierls_constants(p: &ModelParams, epsilon: f64, scale: f64) -> Result<PeierlsConstants> {
    p.validate()?;
    if !(p.q > 0.0 && p.q < 1.0) || !(epsilon > 0.0 && epsilon < 1.0) {
        return domain("q and epsilon must lie in (0, 1)");
    }
    let d = p.dim as i32;
    let lq = (1.0 / p.q).ln();
    let ratio = (lq / p.m_star.ln()).powi(d);
    let qm2 = p.q * p.m_star * p.m_star;
    let le = (1.0 / epsilon).ln();
    let beta = beta(p);
    let beta_tilde_gauss = scale * lq.min(qm2 * ratio) - p.m_star * p.delta;
    let beta_tilde = scale * lq.min(qm2 * ratio).min(le * ratio) - p.m_star * p.delta;
    let alpha = scale * lq.min(le * ratio);
    let c = p.c();
    let two_d = 2.0 * p.dim as f64;
    let k2 = 1.0 / ((c + two_d).powi(2) - 1.0);
    let pair_bond = -2.0 * p.a * p.a * p.m_star * p.m_star / p.q * k2;
    let boundary_prefactor = qm2 * 2.0 * p.a / (p.a + two_d * p.q);
    let all_positive = beta > 0.0 && beta_tilde_gauss > 0.0 && beta_tilde > 0.0 && alpha > 0.0;
    Ok(PeierlsConstants {
        beta,
        r: interaction_range(p),
        beta_tilde_gauss,
        beta_tilde,
        alpha,
        alpha_final: alpha,
        pair_bond,
        boundary_prefactor,
        scale,
        all_positive,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p3() -> ModelParams {
        ModelParams::new(3, 0.01, 40.0, 1.0, 0.0, 0.0, 1.0).unwrap()
    }

    #[test]
    fn beta_and_range() {
        let p = p3();
        assert!((beta(&p) - 7.1206).abs() < 1e-3);
        assert_eq!(interaction_range(&p), 6);
        let k = peierls_constants(&p, 0.01, 1.0).unwrap();
        assert!((k.pair_bond + 4.0 * k.beta).abs() < 1e-9 * k.beta);
        assert!(k.boundary_prefactor >= 2.0 * k.beta);
    }

    #[test]
    fn single_minus_support() {
        let lat = LatticeVolume::cube(3, 7).unwrap();
        let mut s = IsingConfig::all_plus(lat.len());
        let mid = lat.index(&crate::lattice::Site::new(&[3, 3, 3])).unwrap();
        s.0[mid] = -1;
        let c = extract_contour(&lat, &s, 1).unwrap();
        assert_eq!(c.support.len(), 7);
        assert_eq!(support_from_sets(&lat, &s, 1).unwrap(), c.support);
        assert_eq!(naive_energy(&lat, &c), 6);
    }

    #[test]
    fn all_plus_is_empty() {
        let lat = LatticeVolume::cube(2, 4).unwrap();
        let s = IsingConfig::all_plus(lat.len());
        assert!(extract_contour(&lat, &s, 2).unwrap().support.is_empty());
        let p = ModelParams::new(2, 0.01, 40.0, 1.0, 0.0, 0.0, 1.0).unwrap();
        let mut cache = KernelCache::new(p.c(), default_walk_length(&p));
        let lt = lt_activity(&lat, &s, 2, &BoundaryField::Constant(40.0), &p, &mut cache).unwrap();
        assert_eq!(lt.log_activity, 0.0);
    }

    #[test]
    fn regrouping_is_exact() {
        let lat = LatticeVolume::new(&[3, 3]).unwrap();
        let p = ModelParams::new(2, 0.05, 3.0, 1.0, 0.0, 0.1, 1.0).unwrap();
        let s = IsingConfig(vec![1, -1, 1, -1, -1, 1, 1, 1, -1]);
        let eta = DisorderField(vec![0.05, -0.1, 0.02, 0.0, 0.07, -0.03, 0.01, 0.09, -0.06]);
        let g = regrouping_check(&lat, &s, &eta, &BoundaryField::Constant(3.0), &p, 1).unwrap();
        assert!((g.total - g.direct).abs() <= g.tail_bound + 1e-9 * (1.0 + g.direct.abs()), "{g:?}");
    }
}
