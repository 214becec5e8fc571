//! The quadratic Hamiltonian of the model, its minimizers and the exact
//! splitting identities used by the expansion.
//!
//! On a sub-volume `V` of the box, with values held fixed on the rest of the
//! box and a boundary field outside it,
//!
//! ```text
//! H_V(m) = sum_x a/2 (m_x - m* s_x)^2 - eta_x m_x + q/2 sum_<xy> (m_x - m_y)^2
//!        = 1/2 <m, (a - q Lap_V) m> - <m, J> + K
//! ```
//!
//! where the bond sum runs over all nearest-neighbour pairs touching `V`.

use std::collections::BTreeMap;
use std::ops::Deref;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::lattice::{outer_boundary, LatticeVolume, Site, SiteSet};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Scalar parameters of the model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub dim: usize,
    /// Nearest-neighbour coupling.
    pub q: f64,
    /// Position of the wells.
    pub m_star: f64,
    /// Curvature of the quadratic wells.
    pub a: f64,
    /// Additive constant of the quadratic wells.
    pub b: f64,
    /// Bound on the random field.
    pub delta: f64,
    /// Half-width of the window around each well.
    pub window: f64,
}

impl ModelParams {
    pub fn new(dim: usize, q: f64, m_star: f64, a: f64, b: f64, delta: f64, window: f64) -> Result<Self> {
        let p = ModelParams { dim, q, m_star, a, b, delta, window };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=crate::lattice::MAX_DIM).contains(&self.dim) {
            return domain(format!("dimension {} unsupported", self.dim));
        }
        let finite = [self.q, self.m_star, self.a, self.b, self.delta, self.window].iter().all(|v| v.is_finite());
        if !finite {
            return domain("parameters must be finite");
        }
        if self.q < 0.0 || self.m_star <= 0.0 || self.a <= 0.0 || self.delta < 0.0 || self.window <= 0.0 {
            return domain("need q >= 0, m* > 0, a > 0, delta >= 0, window > 0");
        }
        Ok(())
    }

    /// Ratio a/q used by the resolvent expansions.
    pub fn c(&self) -> f64 {
        self.a / self.q
    }

    /// Membership in the union of the two windows around +-m*.
    pub fn in_window(&self, m: f64) -> bool {
        (m.abs() - self.m_star).abs() <= self.window
    }

    /// Window endpoints, ascending.
    pub fn window_edges(&self) -> [f64; 4] {
        let (lo, hi) = (self.m_star - self.window, self.m_star + self.window);
        [-hi, -lo, lo, hi]
    }
}

macro_rules! slice_newtype {
    ($name:ident, $t:ty) => {
        impl Deref for $name {
            type Target = [$t];
            fn deref(&self) -> &[$t] {
                &self.0
            }
        }
        impl From<Vec<$t>> for $name {
            fn from(v: Vec<$t>) -> Self {
                $name(v)
            }
        }
    };
}

/// Real field indexed by the sites of a box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpinField(pub Vec<f64>);
slice_newtype!(SpinField, f64);

/// Random field indexed by the sites of a box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisorderField(pub Vec<f64>);
slice_newtype!(DisorderField, f64);

impl DisorderField {
    pub fn zeros(n: usize) -> Self {
        DisorderField(vec![0.0; n])
    }

    pub fn negated(&self) -> Self {
        DisorderField(self.0.iter().map(|v| -v).collect())
    }

    pub fn sup_norm(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Ising configuration with entries +-1.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IsingConfig(pub Vec<i8>);
slice_newtype!(IsingConfig, i8);

impl IsingConfig {
    pub fn all_plus(n: usize) -> Self {
        IsingConfig(vec![1; n])
    }

    /// Configuration whose site `k` is -1 exactly when bit `k` is set.
    pub fn from_bits(n: usize, bits: u64) -> Self {
        IsingConfig((0..n).map(|k| if bits >> k & 1 == 1 { -1 } else { 1 }).collect())
    }

    pub fn to_bits(&self) -> u64 {
        self.0.iter().enumerate().filter(|(_, &s)| s < 0).fold(0, |b, (k, _)| b | 1 << k)
    }

    pub fn flipped(&self) -> Self {
        IsingConfig(self.0.iter().map(|s| -s).collect())
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&s| s as f64).collect()
    }
}

/// Values of the field outside the box.
#[derive(Clone, Debug, PartialEq)]
pub enum BoundaryField {
    Constant(f64),
    Pointwise { values: BTreeMap<Site, f64>, default: f64 },
}

impl BoundaryField {
    pub fn value(&self, s: &Site) -> f64 {
        match self {
            BoundaryField::Constant(v) => *v,
            BoundaryField::Pointwise { values, default } => values.get(s).copied().unwrap_or(*default),
        }
    }

    pub fn negated(&self) -> Self {
        match self {
            BoundaryField::Constant(v) => BoundaryField::Constant(-v),
            BoundaryField::Pointwise { values, default } => BoundaryField::Pointwise {
                values: values.iter().map(|(k, v)| (*k, -v)).collect(),
                default: -default,
            },
        }
    }
}

/// Quadratic form `1/2 <x - center, matrix (x - center)> + constant` on a site set.
#[derive(Clone, Debug)]
pub struct GaussianSpec {
    pub support: SiteSet,
    pub matrix: DMatrix<f64>,
    pub center: DVector<f64>,
    pub constant: f64,
}

impl GaussianSpec {
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        let d = DVector::from_column_slice(x) - &self.center;
        0.5 * d.dot(&(&self.matrix * &d)) + self.constant
    }

    /// Log of the integral of `exp(-form)` with the constant dropped.
    pub fn log_normalizer(&self) -> Result<f64> {
        Ok(0.5 * self.support.len() as f64 * LN_2PI - 0.5 * log_det_spd(&self.matrix)?)
    }
}

pub fn cholesky(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    m.clone().cholesky().ok_or_else(|| Error::Numerical("matrix is not positive definite".into()))
}

pub fn log_det_spd(m: &DMatrix<f64>) -> Result<f64> {
    if m.nrows() == 0 {
        return Ok(0.0);
    }
    let ch = cholesky(m)?;
    Ok(2.0 * ch.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>())
}

pub fn inverse_spd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.nrows() == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    Ok(cholesky(m)?.inverse())
}

/// Dirichlet Laplacian of `v`: diagonal -2d, +1 for neighbour pairs in `v`.
pub fn dirichlet_laplacian(lat: &LatticeVolume, v: &SiteSet) -> DMatrix<f64> {
    let n = v.len();
    let mut m = DMatrix::from_diagonal_element(n, n, -2.0 * lat.dim() as f64);
    for (i, x) in v.iter().enumerate() {
        for y in lat.neighbors(x) {
            if let Some(j) = v.position(y) {
                m[(i, j)] = 1.0;
            }
        }
    }
    m
}

/// Nearest-neighbour incidence between two disjoint sets (rows `a`, columns `b`).
pub fn coupling_matrix(lat: &LatticeVolume, a: &SiteSet, b: &SiteSet) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(a.len(), b.len());
    for (i, x) in a.iter().enumerate() {
        for y in lat.neighbors(x) {
            if let Some(j) = b.position(y) {
                m[(i, j)] = 1.0;
            }
        }
    }
    m
}

/// `(c - Lap_V)^{-1}` by dense Cholesky.
pub fn resolvent_direct(lat: &LatticeVolume, v: &SiteSet, c: f64) -> Result<DMatrix<f64>> {
    if !(c > 0.0) {
        return domain("resolvent needs c > 0");
    }
    if v.len() > 4096 {
        return Err(Error::SizeCap { what: "dense resolvent volume", got: v.len(), cap: 4096 });
    }
    let mut m = -dirichlet_laplacian(lat, v);
    for i in 0..v.len() {
        m[(i, i)] += c;
    }
    inverse_spd(&m)
}

/// Both sides of `det Q = det(P Q^{-1} P)^{-1} det Q_rest`, in logs.
#[derive(Clone, Copy, Debug)]
pub struct DetSplit {
    /// `log det (P Q^{-1} P)^{-1}` for the projection `P` onto the chosen indices.
    pub log_projected_inverse: f64,
    /// `log det` of `Q` restricted to the remaining indices.
    pub log_complement: f64,
}

impl DetSplit {
    pub fn projected_inverse(&self) -> f64 {
        self.log_projected_inverse.exp()
    }

    pub fn complement(&self) -> f64 {
        self.log_complement.exp()
    }

    pub fn log_total(&self) -> f64 {
        self.log_projected_inverse + self.log_complement
    }
}

fn submatrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

/// Determinant split of a positive definite `q` along index set `keep`.
pub fn det_split(q: &DMatrix<f64>, keep: &[usize]) -> Result<DetSplit> {
    let n = q.nrows();
    if keep.iter().any(|&i| i >= n) {
        return domain("projection index out of range");
    }
    let rest: Vec<usize> = (0..n).filter(|i| !keep.contains(i)).collect();
    let inv = inverse_spd(q)?;
    let proj = submatrix(&inv, keep, keep);
    Ok(DetSplit {
        log_projected_inverse: -log_det_spd(&proj)?,
        log_complement: log_det_spd(&submatrix(q, &rest, &rest))?,
    })
}

/// The Gaussian part of the model on a box: parameters, Ising signs,
/// random field and the boundary field outside the box.
#[derive(Clone, Copy, Debug)]
pub struct GaussianModel<'a> {
    pub lat: &'a LatticeVolume,
    pub params: &'a ModelParams,
    pub sigma: &'a IsingConfig,
    pub eta: &'a DisorderField,
    pub boundary: &'a BoundaryField,
}

impl<'a> GaussianModel<'a> {
    pub fn new(
        lat: &'a LatticeVolume,
        params: &'a ModelParams,
        sigma: &'a IsingConfig,
        eta: &'a DisorderField,
        boundary: &'a BoundaryField,
    ) -> Result<Self> {
        params.validate()?;
        if params.dim != lat.dim() {
            return domain("parameter dimension differs from the box");
        }
        if sigma.len() != lat.len() || eta.len() != lat.len() {
            return domain("field lengths must match the box");
        }
        if sigma.iter().any(|&s| s != 1 && s != -1) {
            return domain("Ising entries must be +-1");
        }
        Ok(GaussianModel { lat, params, sigma, eta, boundary })
    }

    /// `a - q Lap_V` on the sites of `v`.
    pub fn operator(&self, v: &SiteSet) -> DMatrix<f64> {
        let p = self.params;
        let mut m = dirichlet_laplacian(self.lat, v) * (-p.q);
        for i in 0..v.len() {
            m[(i, i)] += p.a;
        }
        m
    }

    fn outside_values(&self, v: &SiteSet, x: usize, fixed: Option<&[f64]>) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        for y in self.lat.neighbors(x) {
            if !v.contains(y) {
                match fixed {
                    Some(f) => out.push(f[y]),
                    None => return domain("values on the inner boundary are required"),
                }
            }
        }
        for s in self.lat.exterior_neighbors(x) {
            out.push(self.boundary.value(&s));
        }
        Ok(out)
    }

    /// Linear term `J` of `H_V`; `fixed` supplies values on the rest of the box.
    pub fn source(&self, v: &SiteSet, fixed: Option<&[f64]>) -> Result<DVector<f64>> {
        let p = self.params;
        let mut j = DVector::zeros(v.len());
        for (i, x) in v.iter().enumerate() {
            let ext: f64 = self.outside_values(v, x, fixed)?.iter().sum();
            j[i] = p.a * p.m_star * self.sigma[x] as f64 + self.eta[x] + p.q * ext;
        }
        Ok(j)
    }

    /// Constant term `K` of `H_V`.
    pub fn constant(&self, v: &SiteSet, fixed: Option<&[f64]>) -> Result<f64> {
        let p = self.params;
        let mut k = 0.5 * p.a * p.m_star * p.m_star * v.len() as f64;
        for x in v.iter() {
            k += 0.5 * p.q * self.outside_values(v, x, fixed)?.iter().map(|u| u * u).sum::<f64>();
        }
        Ok(k)
    }

    /// Direct bond-by-bond evaluation of `H_V` at `m_v` (ordered as `v`).
    pub fn energy(&self, v: &SiteSet, m_v: &[f64], fixed: Option<&[f64]>) -> Result<f64> {
        let p = self.params;
        if m_v.len() != v.len() {
            return domain("field length differs from the volume");
        }
        let mut h = 0.0;
        for (i, x) in v.iter().enumerate() {
            let m = m_v[i];
            let d = m - p.m_star * self.sigma[x] as f64;
            h += 0.5 * p.a * d * d - self.eta[x] * m;
            for y in self.lat.neighbors(x) {
                if let Some(k) = v.position(y) {
                    if k > i {
                        h += 0.5 * p.q * (m - m_v[k]).powi(2);
                    }
                }
            }
            for u in self.outside_values(v, x, fixed)? {
                h += 0.5 * p.q * (m - u).powi(2);
            }
        }
        Ok(h)
    }

    /// Minimizer of `H_V` with `fixed` values on the rest of the box.
    pub fn minimizer(&self, v: &SiteSet, fixed: Option<&[f64]>) -> Result<DVector<f64>> {
        if v.is_empty() {
            return Ok(DVector::zeros(0));
        }
        let j = self.source(v, fixed)?;
        Ok(cholesky(&self.operator(v))?.solve(&j))
    }

    /// Minimizer of the full Hamiltonian on the box.
    pub fn global_minimizer(&self) -> Result<DVector<f64>> {
        self.minimizer(&self.lat.all(), None)
    }

    /// Minimizer on the components of `box \ boundary` given values on `boundary`.
    pub fn conditional_minimizer(&self, boundary: &SiteSet, m_boundary: &[f64]) -> Result<DVector<f64>> {
        let rest = self.lat.all().difference(boundary);
        let mut fixed = vec![0.0; self.lat.len()];
        for (k, x) in boundary.iter().enumerate() {
            fixed[x] = m_boundary[k];
        }
        self.minimizer(&rest, Some(&fixed))
    }

    /// Minimum of `H_V` from `K - 1/2 <J, (a - q Lap_V)^{-1} J>`.
    pub fn min_energy_on(&self, v: &SiteSet, fixed: Option<&[f64]>) -> Result<f64> {
        if v.is_empty() {
            return Ok(0.0);
        }
        let j = self.source(v, fixed)?;
        let sol = cholesky(&self.operator(v))?.solve(&j);
        Ok(self.constant(v, fixed)? - 0.5 * j.dot(&sol))
    }

    /// Closed form of `inf H` over the box, written in the resolvent
    /// `R = (c - Lap)^{-1}` with `(a - q Lap)^{-1} = R / q`.
    pub fn min_energy(&self) -> Result<f64> {
        let p = self.params;
        let all = self.lat.all();
        let n = all.len();
        let g = if p.q > 0.0 {
            resolvent_direct(self.lat, &all, p.c())? / p.q
        } else {
            DMatrix::from_diagonal_element(n, n, 1.0 / p.a)
        };
        let s = DVector::from_vec(self.sigma.as_f64());
        let mut field = DVector::from_column_slice(self.eta);
        let mut boundary_sq = 0.0;
        for x in 0..n {
            for site in self.lat.exterior_neighbors(x) {
                let u = self.boundary.value(&site);
                field[x] += p.q * u;
                boundary_sq += u * u;
            }
        }
        let gs = &g * &s;
        Ok(0.5 * p.a * p.m_star * p.m_star * n as f64 + 0.5 * p.q * boundary_sq
            - 0.5 * p.a * p.a * p.m_star * p.m_star * s.dot(&gs)
            - p.a * p.m_star * field.dot(&gs)
            - 0.5 * field.dot(&(&g * &field)))
    }

    /// Split of `H` at the inner boundary of `g`.
    pub fn energy_split(&self, g: &SiteSet) -> Result<EnergySplit> {
        let all = self.lat.all();
        let dg = outer_boundary(self.lat, g, &all)?;
        let rest = all.difference(&dg);
        let global = self.global_minimizer()?;
        let qinv = inverse_spd(&self.operator(&all))?;
        let idx: Vec<usize> = dg.iter().collect();
        let proj = submatrix(&qinv, &idx, &idx);
        let boundary = GaussianSpec {
            support: dg.clone(),
            matrix: inverse_spd(&proj)?,
            center: DVector::from_iterator(idx.len(), idx.iter().map(|&x| global[x])),
            constant: 0.0,
        };
        let zeros = vec![0.0; self.lat.len()];
        let rest_base = self.source(&rest, Some(&zeros))?;
        let rest_operator = self.operator(&rest);
        let coupling = coupling_matrix(self.lat, &rest, &dg) * self.params.q;
        Ok(EnergySplit {
            boundary,
            rest_chol: if rest.is_empty() { None } else { Some(cholesky(&rest_operator)?) },
            rest,
            rest_operator,
            rest_base,
            coupling,
            min_energy: self.min_energy_on(&all, None)?,
        })
    }

    /// `(2 pi)^{|box|/2} det(a - q Lap)^{-1/2} exp(-inf H)`, in logs.
    pub fn log_gaussian_partition(&self) -> Result<f64> {
        let all = self.lat.all();
        Ok(0.5 * all.len() as f64 * LN_2PI - 0.5 * log_det_spd(&self.operator(&all))? - self.min_energy()?)
    }

    pub fn gaussian_partition(&self) -> Result<f64> {
        Ok(self.log_gaussian_partition()?.exp())
    }
}

/// `H = dH_boundary(m_dG) + dH_rest(m_rest | m_dG) + inf H`.
#[derive(Clone, Debug)]
pub struct EnergySplit {
    /// Projected form on the inner boundary, centred at the global minimizer.
    pub boundary: GaussianSpec,
    /// Complement of the inner boundary.
    pub rest: SiteSet,
    pub rest_operator: DMatrix<f64>,
    rest_chol: Option<Cholesky<f64, Dyn>>,
    rest_base: DVector<f64>,
    coupling: DMatrix<f64>,
    pub min_energy: f64,
}

impl EnergySplit {
    /// Conditional minimizer on `rest` given values on the boundary.
    pub fn conditional_center(&self, m_boundary: &[f64]) -> DVector<f64> {
        match &self.rest_chol {
            None => DVector::zeros(0),
            Some(ch) => ch.solve(&(&self.rest_base + &self.coupling * DVector::from_column_slice(m_boundary))),
        }
    }

    /// The conditional form on `rest` for the given boundary values.
    pub fn conditional(&self, m_boundary: &[f64]) -> GaussianSpec {
        GaussianSpec {
            support: self.rest.clone(),
            matrix: self.rest_operator.clone(),
            center: self.conditional_center(m_boundary),
            constant: 0.0,
        }
    }

    /// `(dH_boundary, dH_rest)` at a full field on the box.
    pub fn evaluate(&self, m: &[f64]) -> (f64, f64) {
        let mb: Vec<f64> = self.boundary.support.iter().map(|x| m[x]).collect();
        let mr: Vec<f64> = self.rest.iter().map(|x| m[x]).collect();
        (self.boundary.evaluate(&mb), self.conditional(&mb).evaluate(&mr))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(d: usize) -> ModelParams {
        ModelParams::new(d, 0.3, 2.0, 1.2, 0.0, 0.5, 0.8).unwrap()
    }

    #[test]
    fn single_site_resolvent() {
        for d in 1..=3 {
            let lat = LatticeVolume::cube(d, 1).unwrap();
            let r = resolvent_direct(&lat, &lat.all(), 2.5).unwrap();
            assert!((r[(0, 0)] - 1.0 / (2.5 + 2.0 * d as f64)).abs() < 1e-15);
        }
    }

    #[test]
    fn two_site_resolvent_entries() {
        let lat = LatticeVolume::chain(2).unwrap();
        let c = 3.0;
        let r = resolvent_direct(&lat, &lat.all(), c).unwrap();
        let den = (c + 2.0).powi(2) - 1.0;
        assert!((r[(0, 1)] - 1.0 / den).abs() < 1e-15);
        assert!((r[(0, 0)] - (c + 2.0) / den).abs() < 1e-15);
    }

    #[test]
    fn uniform_plus_state_has_zero_minimum() {
        let lat = LatticeVolume::cube(2, 3).unwrap();
        let p = params(2);
        let s = IsingConfig::all_plus(lat.len());
        let eta = DisorderField::zeros(lat.len());
        let bc = BoundaryField::Constant(p.m_star);
        let gm = GaussianModel::new(&lat, &p, &s, &eta, &bc).unwrap();
        let m = gm.global_minimizer().unwrap();
        assert!(m.iter().all(|v| (v - p.m_star).abs() < 1e-12));
        assert!(gm.min_energy().unwrap().abs() < 1e-10);
    }

    #[test]
    fn energy_matches_quadratic_form() {
        let lat = LatticeVolume::new(&[2, 3]).unwrap();
        let p = params(2);
        let s = IsingConfig::from_bits(6, 0b010110);
        let eta = DisorderField((0..6).map(|i| 0.1 * i as f64 - 0.2).collect());
        let bc = BoundaryField::Constant(1.7);
        let gm = GaussianModel::new(&lat, &p, &s, &eta, &bc).unwrap();
        let all = lat.all();
        let m: Vec<f64> = (0..6).map(|i| (i as f64).sin() * 2.0).collect();
        let mv = DVector::from_vec(m.clone());
        let form = 0.5 * mv.dot(&(gm.operator(&all) * &mv)) - mv.dot(&gm.source(&all, None).unwrap())
            + gm.constant(&all, None).unwrap();
        assert!((form - gm.energy(&all, &m, None).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn det_split_reassembles_determinant() {
        let q = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let ds = det_split(&q, &[0, 2]).unwrap();
        assert!((ds.log_total() - q.determinant().ln()).abs() < 1e-13);
    }
}
