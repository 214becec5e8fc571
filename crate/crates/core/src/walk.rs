//! Random-walk expansion of Dirichlet resolvents.
//!
//! A walk `x = x_0, ..., x_t = y` of nearest-neighbour steps inside a set
//! has weight `(c + 2d)^{-(t+1)}`; summing over all walks gives
//! `(c - Lap_V)^{-1}`. Grouping walks by their range (the set of visited
//! sites) gives kernels indexed by connected sets, which are computed here by
//! a dynamic program over `(start, current site, visited set)`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{cap, domain, Result};
use crate::gaussian::{det_split, dirichlet_laplacian, GaussianModel, GaussianSpec};
use crate::lattice::{induced_adjacency, is_connected, outer_boundary, r_hull, LatticeVolume, SiteSet};

/// Largest set for which all sub-ranges are enumerated.
pub const EXHAUSTIVE_CAP: usize = 12;
/// Largest single range accepted by [`walk_kernel`].
pub const SINGLE_RANGE_CAP: usize = 16;
const MAX_AUTO_LENGTH: usize = 4000;

/// Ratio `2d / (c + 2d)` governing every geometric tail below.
pub fn decay_ratio(c: f64, dim: usize) -> f64 {
    let two_d = 2.0 * dim as f64;
    two_d / (c + two_d)
}

/// Shortest walk length after which the row-sum tail `rho^{L+1}/c` is below `tol`.
pub fn length_for_tolerance(c: f64, dim: usize, tol: f64) -> usize {
    let rho = decay_ratio(c, dim);
    let l = ((tol * c).ln() / rho.ln()).ceil() as isize - 1;
    (l.max(0) as usize).min(MAX_AUTO_LENGTH)
}

/// Walk sums over all ranges inside a set of at most [`EXHAUSTIVE_CAP`] sites.
#[derive(Clone, Debug)]
pub struct RangeKernels {
    pub base: SiteSet,
    n: usize,
    /// Entry `[mask][x][y]`: summed weight of walks x -> y with range `mask`.
    kernels: Vec<f64>,
    /// Entry `[mask]`: sum over closed walks with range `mask` of
    /// `(c + 2d)^{-t} / t`, lengths `1..=l_max`.
    closed: Vec<f64>,
    pub l_max: usize,
    /// Bound on the omitted row sum of walks longer than `l_max`.
    pub tail: f64,
    /// Bound on the omitted closed-walk sum.
    pub closed_tail: f64,
}

impl RangeKernels {
    pub fn kernel(&self, mask: u64) -> DMatrix<f64> {
        let n = self.n;
        let off = mask as usize * n * n;
        DMatrix::from_fn(n, n, |x, y| self.kernels[off + x * n + y])
    }

    pub fn entry(&self, mask: u64, x: usize, y: usize) -> f64 {
        self.kernels[mask as usize * self.n * self.n + x * self.n + y]
    }

    pub fn closed_sum(&self, mask: u64) -> f64 {
        self.closed[mask as usize]
    }

    pub fn masks(&self) -> impl Iterator<Item = u64> {
        1..(1u64 << self.n)
    }

    /// Sum of the kernels over all ranges inside `sub` (a mask).
    pub fn resolvent_of(&self, sub: u64) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for mask in self.masks().filter(|&s| s & !sub == 0) {
            m += self.kernel(mask);
        }
        m
    }
}

fn range_dp(adj: &[Vec<usize>], w: f64, l_max: usize) -> (Vec<f64>, Vec<f64>) {
    let n = adj.len();
    let states = 1usize << n;
    let per_start: Vec<(Vec<f64>, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|x| {
            let mut row = vec![0.0; states * n];
            let mut closed = vec![0.0; states];
            let mut cur = vec![0.0; states * n];
            let mut next = vec![0.0; states * n];
            cur[(1 << x) * n + x] = w;
            let mut live: Vec<usize> = vec![1 << x];
            for t in 0..=l_max {
                let mut next_live = Vec::new();
                for &mask in &live {
                    for y in 0..n {
                        let v = cur[mask * n + y];
                        if v == 0.0 {
                            continue;
                        }
                        row[mask * n + y] += v;
                        if y == x && t > 0 {
                            closed[mask] += v / (w * t as f64);
                        }
                        if t < l_max {
                            for &z in &adj[y] {
                                let m2 = mask | 1 << z;
                                if next[m2 * n..(m2 + 1) * n].iter().all(|&u| u == 0.0) {
                                    next_live.push(m2);
                                }
                                next[m2 * n + z] += w * v;
                            }
                        }
                        cur[mask * n + y] = 0.0;
                    }
                }
                next_live.sort_unstable();
                next_live.dedup();
                std::mem::swap(&mut cur, &mut next);
                live = next_live;
                if live.is_empty() {
                    break;
                }
            }
            (row, closed)
        })
        .collect();
    let mut kernels = vec![0.0; states * n * n];
    let mut closed = vec![0.0; states];
    for (x, (row, cl)) in per_start.into_iter().enumerate() {
        for mask in 0..states {
            for y in 0..n {
                kernels[mask * n * n + x * n + y] = row[mask * n + y];
            }
            closed[mask] += cl[mask];
        }
    }
    (kernels, closed)
}

/// Walk kernels for every range inside `v`, walks of length at most `l_max`.
pub fn range_kernels(lat: &LatticeVolume, v: &SiteSet, c: f64, l_max: usize) -> Result<RangeKernels> {
    cap("volume for exhaustive range enumeration", v.len(), EXHAUSTIVE_CAP)?;
    if !(c > 0.0) {
        return domain("walk expansion needs c > 0");
    }
    let w = 1.0 / (c + 2.0 * lat.dim() as f64);
    let (kernels, closed) = range_dp(&induced_adjacency(lat, v), w, l_max);
    let rho = decay_ratio(c, lat.dim());
    Ok(RangeKernels {
        base: v.clone(),
        n: v.len(),
        kernels,
        closed,
        l_max,
        tail: rho.powi(l_max as i32 + 1) / c,
        closed_tail: v.len() as f64 * rho.powi(l_max as i32 + 1) / ((l_max + 1) as f64 * (1.0 - rho)),
    })
}

/// Kernel of walks whose range is exactly one set.
#[derive(Clone, Debug)]
pub struct WalkKernel {
    pub range: SiteSet,
    /// Entries indexed by positions in `range`.
    pub matrix: DMatrix<f64>,
    pub l_max: usize,
    /// Bound on the omitted row sum from walks longer than `l_max`.
    pub truncation_bound: f64,
    /// False when the range is disconnected, in which case the kernel is zero.
    pub connected: bool,
}

impl WalkKernel {
    pub fn row_sum(&self, x: usize) -> f64 {
        self.matrix.row(x).sum()
    }
}

/// Sum of walk weights from x to y over walks whose range is exactly `range`.
pub fn walk_kernel(lat: &LatticeVolume, range: &SiteSet, c: f64, l_max: usize) -> Result<WalkKernel> {
    cap("walk range", range.len(), SINGLE_RANGE_CAP)?;
    if range.is_empty() {
        return domain("walk range must be nonempty");
    }
    if !(c > 0.0) {
        return domain("walk expansion needs c > 0");
    }
    if l_max + 1 < range.len() {
        return domain(format!("walks of length {l_max} cannot cover {} sites", range.len()));
    }
    let n = range.len();
    let rho = decay_ratio(c, lat.dim());
    let truncation_bound = rho.powi(l_max as i32 + 1) / c;
    if !is_connected(lat, range) {
        return Ok(WalkKernel {
            range: range.clone(),
            matrix: DMatrix::zeros(n, n),
            l_max,
            truncation_bound,
            connected: false,
        });
    }
    let w = 1.0 / (c + 2.0 * lat.dim() as f64);
    let (kernels, _) = range_dp(&induced_adjacency(lat, range), w, l_max);
    let full = (1usize << n) - 1;
    let matrix = DMatrix::from_fn(n, n, |x, y| kernels[full * n * n + x * n + y]);
    Ok(WalkKernel { range: range.clone(), matrix, l_max, truncation_bound, connected: true })
}

fn hopping(lat: &LatticeVolume, v: &SiteSet) -> DMatrix<f64> {
    let mut t = dirichlet_laplacian(lat, v);
    t.fill_diagonal(0.0);
    t
}

/// Truncated Neumann series `sum_{t <= L} (c+2d)^{-(t+1)} T^t` and its tail bound.
pub fn resolvent_series(lat: &LatticeVolume, v: &SiteSet, c: f64, l_max: usize) -> Result<(DMatrix<f64>, f64)> {
    if !(c > 0.0) {
        return domain("walk expansion needs c > 0");
    }
    let t = hopping(lat, v);
    let w = 1.0 / (c + 2.0 * lat.dim() as f64);
    let n = v.len();
    let mut term = DMatrix::from_diagonal_element(n, n, w);
    let mut sum = term.clone();
    for _ in 0..l_max {
        term = (&t * &term) * w;
        sum += &term;
    }
    Ok((sum, decay_ratio(c, lat.dim()).powi(l_max as i32 + 1) / c))
}

/// A series value with a bound on its omitted tail.
#[derive(Clone, Copy, Debug)]
pub struct SeriesValue {
    pub value: f64,
    pub tail_bound: f64,
}

/// `log det(c - Lap_V) = |V| log(c+2d) - sum_t t^{-1} (c+2d)^{-t} Tr T^t`.
pub fn log_det_series(lat: &LatticeVolume, v: &SiteSet, c: f64, t_max: usize) -> Result<SeriesValue> {
    let two_d = 2.0 * lat.dim() as f64;
    if c <= two_d {
        return domain(format!("log-det series requires c > 2d, got c = {c}"));
    }
    let t = hopping(lat, v);
    let w = 1.0 / (c + two_d);
    let n = v.len();
    let mut pow = DMatrix::from_diagonal_element(n, n, 1.0);
    let mut value = n as f64 * (c + two_d).ln();
    for k in 1..=t_max {
        pow = (&t * &pow) * w;
        value -= pow.trace() / k as f64;
    }
    let rho = decay_ratio(c, lat.dim());
    Ok(SeriesValue {
        value,
        tail_bound: n as f64 * rho.powi(t_max as i32 + 1) / ((t_max + 1) as f64 * (1.0 - rho)),
    })
}

/// Closed-walk expansion of the boundary determinant ratio.
#[derive(Clone, Debug)]
pub struct DetRatioSeries {
    /// Ranges that meet the inner boundary and leave the hull, with their
    /// correction `eps(C) = 1/2 sum_t t^{-1} (c+2d)^{-t} #closed walks`.
    pub corrections: Vec<(SiteSet, f64)>,
    /// `-2 sum eps(C)`.
    pub log_ratio_series: f64,
    /// The same log ratio from two determinant splits.
    pub log_ratio_direct: f64,
    pub tail_bound: f64,
    /// Smallest observed `-log eps(C) / |C|`.
    pub measured_decay: f64,
}

fn ranges_leaving(lat: &LatticeVolume, all: &SiteSet, g: &SiteSet, r: u32) -> Result<(SiteSet, SiteSet)> {
    if r < 1 {
        return domain("hull radius must be at least 1 so the hull contains the inner boundary");
    }
    Ok((outer_boundary(lat, g, all)?, r_hull(lat, g, r)?))
}

/// Determinant ratio `det(P R_hull P) / det(P R_box P)` on the inner
/// boundary `P` of `g`, expanded over closed walks up to length `t_max`.
pub fn det_ratio_series(lat: &LatticeVolume, g: &SiteSet, r: u32, c: f64, t_max: usize) -> Result<DetRatioSeries> {
    let all = lat.all();
    cap("volume for exhaustive range enumeration", all.len(), EXHAUSTIVE_CAP)?;
    let (dg, hull) = ranges_leaving(lat, &all, g, r)?;
    let rk = range_kernels(lat, &all, c, t_max)?;
    let dg_mask = dg.mask_in(&all).expect("subset");
    let hull_mask = hull.mask_in(&all).expect("subset");
    let mut corrections = Vec::new();
    let mut sum = 0.0;
    let mut decay = f64::INFINITY;
    for mask in rk.masks() {
        if mask & dg_mask == 0 || mask & !hull_mask == 0 {
            continue;
        }
        let eps = 0.5 * rk.closed_sum(mask);
        if eps == 0.0 {
            continue;
        }
        let set = SiteSet::from_mask(&all, mask);
        decay = decay.min(-eps.ln() / set.len() as f64);
        sum += eps;
        corrections.push((set, eps));
    }
    let operator = |v: &SiteSet| {
        let mut m = -dirichlet_laplacian(lat, v);
        for i in 0..v.len() {
            m[(i, i)] += c;
        }
        m
    };
    let local_idx: Vec<usize> = dg.iter().map(|x| hull.position(x).expect("hull contains boundary")).collect();
    let global_idx: Vec<usize> = dg.iter().collect();
    let local = det_split(&operator(&hull), &local_idx)?;
    let global = det_split(&operator(&all), &global_idx)?;
    Ok(DetRatioSeries {
        corrections,
        log_ratio_series: -2.0 * sum,
        log_ratio_direct: -local.log_projected_inverse + global.log_projected_inverse,
        tail_bound: rk.closed_tail,
        measured_decay: decay,
    })
}

/// Local projected form on the inner boundary of `g` plus the walk
/// corrections needed to recover the form of the full box.
#[derive(Clone, Debug)]
pub struct ProjectedFormTail {
    /// Form built from the hull alone, centred at the hull minimizer.
    pub local: GaussianSpec,
    /// `q d R(C) d` blocks for ranges avoiding the inner boundary and leaving the hull.
    pub matrix_terms: Vec<(SiteSet, DMatrix<f64>)>,
    /// Minimizer increments on the inner boundary for ranges leaving the hull.
    pub center_terms: Vec<(SiteSet, DVector<f64>)>,
    /// Local form minus all matrix terms.
    pub matrix: DMatrix<f64>,
    /// Local centre plus all centre terms.
    pub center: DVector<f64>,
    pub tail: f64,
    /// Largest `|increment| / ((m* + delta) (1 + a/2dq)^{-|C|})` observed.
    pub measured_center_constant: f64,
}

/// Walk decomposition of the projected form on the inner boundary of `g`.
pub fn projected_form_tail(model: &GaussianModel, g: &SiteSet, r: u32, l_max: Option<usize>) -> Result<ProjectedFormTail> {
    let lat = model.lat;
    let p = model.params;
    if !(p.q > 0.0) {
        return domain("walk expansion needs q > 0");
    }
    let all = lat.all();
    cap("volume for exhaustive range enumeration", all.len(), EXHAUSTIVE_CAP)?;
    let (dg, hull) = ranges_leaving(lat, &all, g, r)?;
    let c = p.c();
    let l_max = l_max.unwrap_or_else(|| length_for_tolerance(c, lat.dim(), 1e-18));
    let rk = range_kernels(lat, &all, c, l_max)?;

    let idx: Vec<usize> = dg.iter().map(|x| hull.position(x).expect("hull contains boundary")).collect();
    let hull_inv = crate::gaussian::inverse_spd(&model.operator(&hull))?;
    let proj = DMatrix::from_fn(idx.len(), idx.len(), |i, j| hull_inv[(idx[i], idx[j])]);
    let zeros = vec![0.0; lat.len()];
    let hull_min = model.minimizer(&hull, Some(&zeros))?;
    let local = GaussianSpec {
        support: dg.clone(),
        matrix: crate::gaussian::inverse_spd(&proj)?,
        center: DVector::from_iterator(idx.len(), idx.iter().map(|&k| hull_min[k])),
        constant: 0.0,
    };

    // Source of the resolvent form of the minimizer: c m* s + eta/q + boundary field.
    let src: Vec<f64> = (0..lat.len())
        .map(|x| {
            let ext: f64 = lat.exterior_neighbors(x).iter().map(|s| model.boundary.value(s)).sum();
            c * p.m_star * model.sigma[x] as f64 + model.eta[x] / p.q + ext
        })
        .collect();
    let dg_mask = dg.mask_in(&all).expect("subset");
    let hull_mask = hull.mask_in(&all).expect("subset");
    let positions: Vec<usize> = dg.iter().collect();
    let scale_at = |size: usize| (p.m_star + p.delta) * (1.0 + p.a / (2.0 * p.dim as f64 * p.q)).powi(-(size as i32));
    let mut matrix = local.matrix.clone();
    let mut center = local.center.clone();
    let mut matrix_terms = Vec::new();
    let mut center_terms = Vec::new();
    let mut measured: f64 = 0.0;
    for mask in rk.masks() {
        if mask & !hull_mask == 0 {
            continue;
        }
        let kern = rk.kernel(mask);
        let members: Vec<usize> = (0..all.len()).filter(|k| mask >> k & 1 == 1).collect();
        if kern.iter().all(|&v| v == 0.0) {
            continue;
        }
        let inc = DVector::from_iterator(
            positions.len(),
            positions.iter().map(|&x| members.iter().map(|&y| kern[(x, y)] * src[y]).sum::<f64>()),
        );
        let size = members.len();
        measured = measured.max(inc.amax() / scale_at(size));
        if inc.amax() > 0.0 {
            center += &inc;
            center_terms.push((SiteSet::from_mask(&all, mask), inc));
        }
        if mask & dg_mask == 0 {
            let block = DMatrix::from_fn(positions.len(), positions.len(), |i, j| {
                let (bi, bj) = (positions[i], positions[j]);
                let mut s = 0.0;
                for &x in &members {
                    if !lat.neighbors(bi).any(|u| u == x) {
                        continue;
                    }
                    for &y in &members {
                        if lat.neighbors(bj).any(|u| u == y) {
                            s += kern[(x, y)];
                        }
                    }
                }
                p.q * s
            });
            if block.amax() > 0.0 {
                matrix -= &block;
                matrix_terms.push((SiteSet::from_mask(&all, mask), block));
            }
        }
    }
    Ok(ProjectedFormTail {
        local,
        matrix_terms,
        center_terms,
        matrix,
        center,
        tail: rk.tail,
        measured_center_constant: measured,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::resolvent_direct;

    #[test]
    fn single_site_kernel() {
        let lat = LatticeVolume::cube(2, 3).unwrap();
        let k = walk_kernel(&lat, &SiteSet::singleton(4), 1.5, 0).unwrap();
        assert!((k.matrix[(0, 0)] - 1.0 / 5.5).abs() < 1e-15);
    }

    #[test]
    fn disconnected_range_is_zero() {
        let lat = LatticeVolume::chain(5).unwrap();
        let k = walk_kernel(&lat, &SiteSet::new(vec![0, 2]), 1.0, 10).unwrap();
        assert!(!k.connected);
        assert!(k.matrix.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn short_walks_rejected() {
        let lat = LatticeVolume::chain(5).unwrap();
        assert!(walk_kernel(&lat, &SiteSet::new(vec![0, 1, 2]), 1.0, 1).is_err());
    }

    #[test]
    fn series_tail_ratio_is_rho() {
        let lat = LatticeVolume::cube(2, 3).unwrap();
        let (_, b1) = resolvent_series(&lat, &lat.all(), 100.0, 20).unwrap();
        let (_, b2) = resolvent_series(&lat, &lat.all(), 100.0, 21).unwrap();
        assert!((b2 / b1 - 4.0 / 104.0).abs() < 1e-14);
    }

    #[test]
    fn series_close_to_direct() {
        let lat = LatticeVolume::cube(2, 3).unwrap();
        let all = lat.all();
        let (s, bound) = resolvent_series(&lat, &all, 100.0, 20).unwrap();
        let r = resolvent_direct(&lat, &all, 100.0).unwrap();
        let diff = (&s - &r).amax();
        assert!(diff <= bound + 1e-15, "{diff}");
    }

    #[test]
    fn two_site_log_det() {
        let lat = LatticeVolume::chain(2).unwrap();
        let v = log_det_series(&lat, &lat.all(), 100.0, 30).unwrap();
        assert!((v.value - (102f64.powi(2) - 1.0).ln()).abs() <= v.tail_bound + 1e-14);
        assert!(log_det_series(&lat, &lat.all(), 2.0, 30).is_err());
    }
}
