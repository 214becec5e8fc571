//! Anharmonic weights and the exact reassembly of the marginal Ising weights.
//!
//! With `1 + w = e^{-V} / (e^{-Q^+} + e^{-Q^-})`, the product `prod (1 + w_x)`
//! is expanded over sets `G` whose inner boundary lies in the windows `U`.
//! Each connected piece of `G` carries the weight
//!
//! ```text
//! I_G = int dm_G e^{-dH_G} [ prod_G (1_{m not in U} + w) - prod_G 1_{m not in U} ]
//! ```
//!
//! and the marginal weight of an Ising configuration is a sum over `G` of
//! Gaussian factors times these weights.

use std::collections::HashMap;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::Serialize;

use crate::error::{cap, domain, Result};
use crate::gaussian::{cholesky, coupling_matrix, log_det_spd, GaussianModel};
use crate::lattice::{connected_components, outer_boundary, LatticeVolume, SiteSet};
use crate::potential::{site_activity, site_outside_mass, site_positive_mass, SiteModel};
use crate::quad::{merge_intervals, Rule};

const LN_2PI: f64 = 1.837_877_066_409_345_3;
pub const PRODUCT_CAP: usize = 14;
pub const WEIGHT_CAP: usize = 3;
pub const ASSEMBLY_CAP: usize = 4;

/// Tensor-quadrature resolution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct QuadOptions {
    /// Gauss-Legendre points per panel.
    pub per_panel: usize,
    /// Panel width in units of `1/sqrt(a)`.
    pub panel_width: f64,
    /// Regions where the log-envelope is this far below its peak are dropped.
    pub drop: f64,
}

impl QuadOptions {
    /// About `nodes` points across a window of `+-12/sqrt(a)`.
    pub fn with_nodes(nodes: usize) -> Self {
        let per_panel = 12;
        QuadOptions { per_panel, panel_width: 24.0 * per_panel as f64 / nodes.max(per_panel) as f64, drop: 46.0 }
    }
}

impl Default for QuadOptions {
    fn default() -> Self {
        Self::with_nodes(96)
    }
}

/// Intervals where `log_env` is within `drop` of its maximum over `[lo, hi]`.
pub(crate) fn envelope_intervals(log_env: impl Fn(f64) -> f64, lo: f64, hi: f64, step: f64, drop: f64) -> Vec<(f64, f64)> {
    let n = ((hi - lo) / step).ceil().max(1.0) as usize;
    let h = (hi - lo) / n as f64;
    let vals: Vec<f64> = (0..=n).map(|k| log_env(lo + k as f64 * h)).collect();
    let peak = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = Vec::new();
    let mut k = 0;
    while k <= n {
        if vals[k] >= peak - drop {
            let start = k;
            while k < n && vals[k + 1] >= peak - drop {
                k += 1;
            }
            let a = lo + start as f64 * h - h;
            let b = lo + k as f64 * h + h;
            out.push((a.max(lo), b.min(hi)));
        }
        k += 1;
    }
    merge_intervals(out)
}

/// Result of expanding `prod (1 + w_x)` over sets with boundary in the windows.
#[derive(Clone, Debug)]
pub struct ProductExpansion {
    /// Nonempty sets with a nonzero term.
    pub terms: Vec<(SiteSet, f64)>,
    /// `1 + sum of terms`.
    pub expanded: f64,
    /// `prod (1 + w_x)`.
    pub direct: f64,
}

/// Expand `prod_{x in set} (1 + w_x)`; `in_window[k]`, `w[k]` refer to the k-th site of `set`.
pub fn expand_product_identity(lat: &LatticeVolume, set: &SiteSet, in_window: &[bool], w: &[f64]) -> Result<ProductExpansion> {
    cap("volume for the product expansion", set.len(), PRODUCT_CAP)?;
    let n = set.len();
    if in_window.len() != n || w.len() != n {
        return domain("window flags and corrections must match the set");
    }
    let pos = |x: usize| set.position(x).expect("member");
    let mut terms = Vec::new();
    let mut expanded = 1.0;
    for mask in 1u64..(1 << n) {
        let g = SiteSet::from_mask(set, mask);
        let mut value = 1.0;
        for comp in connected_components(lat, &g) {
            let boundary = outer_boundary(lat, &comp, set)?;
            if boundary.iter().any(|y| !in_window[pos(y)]) {
                value = 0.0;
                break;
            }
            let mut full = 1.0;
            let mut outside = 1.0;
            for x in comp.iter() {
                let k = pos(x);
                let ind = if in_window[k] { 0.0 } else { 1.0 };
                full *= ind + w[k];
                outside *= ind;
            }
            value *= full - outside;
        }
        if value != 0.0 {
            expanded += value;
            terms.push((g, value));
        }
    }
    Ok(ProductExpansion { terms, expanded, direct: w.iter().map(|v| 1.0 + v).product() })
}

/// One anharmonic weight with its product bounds.
#[derive(Clone, Debug, Serialize)]
pub struct AnharmonicTerm {
    pub support: SiteSet,
    pub value: f64,
    /// Product lower bound (valid when `w >= 0` on the windows).
    pub lower: f64,
    /// Product upper bound.
    pub upper: f64,
    /// Conditional minimizer on the support.
    pub center: Vec<f64>,
}

/// Evaluates `I_G` for one set `G` as the boundary values vary.
pub struct WeightIntegrator<'a> {
    model: &'a SiteModel,
    support: SiteSet,
    boundary: SiteSet,
    operator: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    base: DVector<f64>,
    coupling: DMatrix<f64>,
    bonds: Vec<(usize, usize)>,
    opts: QuadOptions,
}

impl<'a> WeightIntegrator<'a> {
    pub fn new(model: &'a SiteModel, gm: &GaussianModel, g: &SiteSet, opts: QuadOptions) -> Result<Self> {
        cap("anharmonic support", g.len(), WEIGHT_CAP)?;
        if g.is_empty() {
            return domain("anharmonic support must be nonempty");
        }
        let lat = gm.lat;
        let boundary = outer_boundary(lat, g, &lat.all())?;
        let operator = gm.operator(g);
        let chol = cholesky(&operator)?;
        let zeros = vec![0.0; lat.len()];
        let base = gm.source(g, Some(&zeros))?;
        let coupling = coupling_matrix(lat, g, &boundary) * gm.params.q;
        let mut bonds = Vec::new();
        for (i, x) in g.iter().enumerate() {
            for y in lat.neighbors(x) {
                if let Some(j) = g.position(y) {
                    if j > i {
                        bonds.push((i, j));
                    }
                }
            }
        }
        Ok(WeightIntegrator { model, support: g.clone(), boundary, operator, chol, base, coupling, bonds, opts })
    }

    /// Sites whose values the weight depends on.
    pub fn boundary(&self) -> &SiteSet {
        &self.boundary
    }

    /// Conditional minimizer on the support for boundary values `mb`.
    pub fn center(&self, mb: &[f64]) -> DVector<f64> {
        self.chol.solve(&(&self.base + &self.coupling * DVector::from_column_slice(mb)))
    }

    fn coordinate_rule(&self, center: f64) -> Rule {
        let p = &self.model.params;
        let s = 1.0 / p.a.sqrt();
        let span = p.m_star.max(center.abs()) + 14.0 * s;
        let env = |m: f64| -0.5 * p.a * (m - center).powi(2) + self.model.log_one_plus_w(m).max(0.0);
        let iv = envelope_intervals(env, -span, span, 0.25 * s, self.opts.drop);
        Rule::panels(&iv, &p.window_edges(), self.opts.panel_width * s, self.opts.per_panel)
    }

    /// `I_G` at boundary values `mb` (ordered as [`Self::boundary`]).
    pub fn value(&self, mb: &[f64]) -> f64 {
        let p = &self.model.params;
        let center = self.center(mb);
        let n = self.support.len();
        let diag: Vec<f64> = (0..n).map(|i| self.operator[(i, i)]).collect();
        // Per-coordinate tables: nodes, and weight times the separable part of the integrand.
        let mut nodes = Vec::with_capacity(n);
        let mut full = Vec::with_capacity(n);
        let mut outside = Vec::with_capacity(n);
        for i in 0..n {
            let rule = self.coordinate_rule(center[i]);
            let mut f = Vec::with_capacity(rule.len());
            let mut g = Vec::with_capacity(rule.len());
            for (&m, &wt) in rule.nodes.iter().zip(&rule.weights) {
                let lg = -0.5 * diag[i] * (m - center[i]).powi(2);
                let ind = !p.in_window(m);
                let l = self.model.log_one_plus_w(m);
                let gauss = wt * lg.exp();
                g.push(if ind { gauss } else { 0.0 });
                f.push(if ind { wt * (l + lg).exp() } else { wt * ((l + lg).exp() - lg.exp()) });
            }
            nodes.push(rule.nodes.iter().map(|m| m - center[i]).collect::<Vec<f64>>());
            full.push(f);
            outside.push(g);
        }
        let q = p.q;
        match n {
            1 => full[0].iter().zip(&outside[0]).map(|(f, g)| f - g).sum(),
            2 => {
                let mut s = 0.0;
                let bonded = !self.bonds.is_empty();
                for (k0, d0) in nodes[0].iter().enumerate() {
                    for (k1, d1) in nodes[1].iter().enumerate() {
                        let cross = if bonded { (q * d0 * d1).exp() } else { 1.0 };
                        s += cross * (full[0][k0] * full[1][k1] - outside[0][k0] * outside[1][k1]);
                    }
                }
                s
            }
            _ => {
                let mut s = 0.0;
                let has = |a: usize, b: usize| self.bonds.contains(&(a, b));
                let (b01, b02, b12) = (has(0, 1), has(0, 2), has(1, 2));
                for (k0, d0) in nodes[0].iter().enumerate() {
                    for (k1, d1) in nodes[1].iter().enumerate() {
                        let c01 = if b01 { q * d0 * d1 } else { 0.0 };
                        let f01 = full[0][k0] * full[1][k1];
                        let g01 = outside[0][k0] * outside[1][k1];
                        for (k2, d2) in nodes[2].iter().enumerate() {
                            let mut c = c01;
                            if b02 {
                                c += q * d0 * d2;
                            }
                            if b12 {
                                c += q * d1 * d2;
                            }
                            s += c.exp() * (f01 * full[2][k2] - g01 * outside[2][k2]);
                        }
                    }
                }
                s
            }
        }
    }

    /// `I_G` together with its product bounds.
    pub fn term(&self, mb: &[f64]) -> AnharmonicTerm {
        let center = self.center(mb);
        let value = self.value(mb);
        let mut pos = 1.0;
        let mut out = 1.0;
        let mut up = 1.0;
        for &c in center.iter() {
            pos *= site_positive_mass(self.model, c);
            out *= site_outside_mass(self.model, c);
            up *= site_activity(self.model, c);
        }
        AnharmonicTerm { support: self.support.clone(), value, lower: pos - out, upper: up, center: center.iter().copied().collect() }
    }
}

/// `I_G` for boundary values taken from the full field `m_fixed`.
pub fn anharmonic_weight(model: &SiteModel, gm: &GaussianModel, g: &SiteSet, m_fixed: &[f64], opts: QuadOptions) -> Result<AnharmonicTerm> {
    let wi = WeightIntegrator::new(model, gm, g, opts)?;
    let mb: Vec<f64> = wi.boundary().iter().map(|x| m_fixed[x]).collect();
    Ok(wi.term(&mb))
}

/// Marginal weight of one Ising configuration reassembled from the expansion.
#[derive(Clone, Debug, Serialize)]
pub struct AssembledWeight {
    pub log_z: f64,
    /// `sum_G` contributions after factoring out `e^{-b|box| - inf H}`.
    pub terms: Vec<(SiteSet, f64)>,
    pub min_energy: f64,
}

/// Reassemble `Z(sigma)` over all sets `G` of a box of at most four sites.
pub fn assemble_weight(model: &SiteModel, gm: &GaussianModel, opts: QuadOptions) -> Result<AssembledWeight> {
    let lat = gm.lat;
    cap("volume for weight reassembly", lat.len(), ASSEMBLY_CAP)?;
    let p = &model.params;
    let all = lat.all();
    let n = all.len();
    let min_energy = gm.min_energy()?;
    let global = gm.global_minimizer()?;
    let q_all = gm.operator(&all);
    let q_inv = crate::gaussian::inverse_spd(&q_all)?;
    let s = 1.0 / p.a.sqrt();
    let mut memo: HashMap<(SiteSet, Vec<u64>), f64> = HashMap::new();
    let mut terms = Vec::new();
    let mut total = 0.0;
    for mask in 0u64..(1 << n) {
        let g = SiteSet::from_mask(&all, mask);
        let dg = outer_boundary(lat, &g, &all)?;
        let closure = g.union(&dg);
        let rest = all.difference(&closure);
        let log_pref = 0.5 * rest.len() as f64 * LN_2PI - 0.5 * log_det_spd(&gm.operator(&rest))?;
        if g.is_empty() {
            terms.push((g, log_pref.exp()));
            total += log_pref.exp();
            continue;
        }
        let comps = connected_components(lat, &g);
        let integrators: Vec<WeightIntegrator> =
            comps.iter().map(|c| WeightIntegrator::new(model, gm, c, opts)).collect::<Result<_>>()?;
        let value = if dg.is_empty() {
            integrators.iter().map(|wi| wi.value(&[])).product::<f64>()
        } else {
            let idx: Vec<usize> = dg.iter().collect();
            let proj = DMatrix::from_fn(idx.len(), idx.len(), |i, j| q_inv[(idx[i], idx[j])]);
            let prec = crate::gaussian::inverse_spd(&proj)?;
            let rules: Vec<Rule> = idx
                .iter()
                .map(|&x| {
                    let c = global[x];
                    let iv: Vec<(f64, f64)> = window_intervals(p)
                        .into_iter()
                        .map(|(a, b)| (a.max(c - 14.0 * s), b.min(c + 14.0 * s)))
                        .filter(|(a, b)| b > a)
                        .collect();
                    Rule::panels(&iv, &[], opts.panel_width * s, opts.per_panel)
                })
                .collect();
            let dims: Vec<usize> = rules.iter().map(|r| r.len()).collect();
            let count: usize = dims.iter().product();
            let mut sum = 0.0;
            let mut point = vec![0.0; idx.len()];
            for flat in 0..count {
                let mut rem = flat;
                let mut wt = 1.0;
                for (k, r) in rules.iter().enumerate() {
                    let j = rem % dims[k];
                    rem /= dims[k];
                    point[k] = r.nodes[j];
                    wt *= r.weights[j];
                }
                if wt == 0.0 {
                    continue;
                }
                let d = DVector::from_iterator(idx.len(), idx.iter().zip(&point).map(|(&x, v)| v - global[x]));
                let dh = 0.5 * d.dot(&(&prec * &d));
                let mut prod = wt * (-dh).exp();
                if prod == 0.0 {
                    continue;
                }
                for (c, wi) in comps.iter().zip(&integrators) {
                    let mb: Vec<f64> = wi.boundary().iter().map(|y| point[dg.position(y).expect("in boundary")]).collect();
                    let key = (c.clone(), mb.iter().map(|v| v.to_bits()).collect());
                    let v = *memo.entry(key).or_insert_with(|| wi.value(&mb));
                    prod *= v;
                }
                sum += prod;
            }
            sum
        };
        let contrib = log_pref.exp() * value;
        total += contrib;
        terms.push((g, contrib));
    }
    Ok(AssembledWeight { log_z: -p.b * n as f64 - min_energy + total.ln(), terms, min_energy })
}

/// The two windows as intervals (merged when they overlap).
pub fn window_intervals(p: &crate::gaussian::ModelParams) -> Vec<(f64, f64)> {
    let [e0, e1, e2, e3] = p.window_edges();
    merge_intervals(vec![(e0, e1), (e2, e3)])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_site_expansion() {
        let lat = LatticeVolume::chain(1).unwrap();
        let set = lat.all();
        let e = expand_product_identity(&lat, &set, &[true], &[0.3]).unwrap();
        assert!((e.expanded - 1.3).abs() < 1e-15);
        let e = expand_product_identity(&lat, &set, &[false], &[-0.4]).unwrap();
        assert!((e.expanded - 0.6).abs() < 1e-15);
    }

    #[test]
    fn expansion_matches_product_on_chain() {
        let lat = LatticeVolume::chain(6).unwrap();
        let set = lat.all();
        let flags = [true, false, true, true, false, true];
        let w = [0.1, -0.3, 0.7, 0.02, 1.5, -0.05];
        let e = expand_product_identity(&lat, &set, &flags, &w).unwrap();
        assert!((e.expanded - e.direct).abs() < 1e-13);
    }

    #[test]
    fn oversized_volume_rejected() {
        let lat = LatticeVolume::chain(15).unwrap();
        let set = lat.all();
        assert!(expand_product_identity(&lat, &set, &[true; 15], &[0.0; 15]).is_err());
    }
}

#[cfg(test)]
mod master_tests {
    use super::*;
    use crate::gaussian::{BoundaryField, DisorderField, IsingConfig, ModelParams};
    use crate::image::{brute_force_image, SmallVolume};

    #[test]
    fn reassembly_matches_quadrature_with_large_corrections() {
        let p = ModelParams::new(1, 0.15, 3.0, 1.1, 0.02, 0.05, 0.9).unwrap();
        let model = SiteModel::quartic(p);
        let lat = LatticeVolume::chain(2).unwrap();
        let eta = DisorderField(vec![0.03, -0.05]);
        let bc = BoundaryField::Constant(p.m_star);
        let vol = SmallVolume::new(&lat, &model, &eta, &bc).unwrap();
        let table = brute_force_image(&vol, QuadOptions::default()).unwrap();
        for bits in 0..4 {
            let sigma = IsingConfig::from_bits(2, bits);
            let gm = GaussianModel::new(&lat, &p, &sigma, &eta, &bc).unwrap();
            let asm = assemble_weight(&model, &gm, QuadOptions::default()).unwrap();
            assert!((asm.log_z - table.log_weights[bits as usize]).abs() < 1e-9);
        }
    }
}
