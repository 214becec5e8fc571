//! The verification suite: each check builds its instances from a seed,
//! evaluates both sides of an identity or bound and reports measured values.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::anharmonic::{assemble_weight, expand_product_identity, QuadOptions, WeightIntegrator};
use crate::contour::{beta, default_walk_length, lt_activity, KernelCache};
use crate::error::Result;
use crate::gaussian::{resolvent_direct, BoundaryField, DisorderField, GaussianModel, IsingConfig, ModelParams};
use crate::image::{brute_force_image, gibbs_ratio_gaussian, pair_hamiltonian, GibbsRatioInput, SmallVolume};
use crate::lattice::{connected_masks, LatticeVolume, Site, SiteSet};
use crate::potential::{select_parameters, site_criteria_check, SiteModel};
use crate::simulation::{
    order_probability, prop52_check, sample_disorder, Algorithm, DisorderLaw, DisorderSpec, InitialField, OrderEvent,
    OrderOptions,
};
use crate::walk::{det_ratio_series, length_for_tolerance, walk_kernel};

/// Names of all checks, in suite order.
pub const CHECK_NAMES: [&str; 11] = [
    "resolvent_identity",
    "walk_completeness",
    "energy_split",
    "determinant_series",
    "product_identity",
    "site_certificate",
    "master_equivalence",
    "contour_constants",
    "gibbs_ratio",
    "coarse_grain_inequality",
    "ordering_probe",
];

/// Default tolerances, overridable by name.
pub fn default_tolerances() -> BTreeMap<String, f64> {
    [
        ("resolvent_identity", 1e-10),
        ("energy_split", 1e-9),
        ("product_identity", 1e-12),
        ("site_epsilon", 0.01),
        ("weight_floor", 1e-12),
        ("weight_ceiling", 1e-6),
        ("master_equivalence", 1e-5),
        ("beta_target", 7.1206),
        ("beta", 1e-3),
        ("order_threshold", 0.1),
        ("disorder_threshold", 0.3),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

#[derive(Clone, Debug)]
pub struct CheckContext {
    pub seed: u64,
    /// Reduced instance counts and chain lengths.
    pub quick: bool,
    pub tolerances: BTreeMap<String, f64>,
}

impl CheckContext {
    pub fn new(seed: u64, quick: bool) -> Self {
        CheckContext { seed, quick, tolerances: default_tolerances() }
    }

    pub fn tol(&self, key: &str) -> f64 {
        self.tolerances.get(key).copied().unwrap_or_else(|| default_tolerances()[key])
    }

    fn rng(&self, salt: u64) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
        r.set_stream(salt);
        r
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub measured: BTreeMap<String, f64>,
    pub detail: String,
    pub seconds: f64,
}

struct Measured(BTreeMap<String, f64>);

impl Measured {
    fn new() -> Self {
        Measured(BTreeMap::new())
    }

    fn set(&mut self, k: &str, v: f64) {
        self.0.insert(k.to_string(), v);
    }
}

fn outcome(name: &str, passed: bool, m: Measured, detail: String, t: Instant) -> CheckOutcome {
    CheckOutcome { name: name.to_string(), passed, measured: m.0, detail, seconds: t.elapsed().as_secs_f64() }
}

fn random_subset(rng: &mut ChaCha8Rng, n: usize, p: f64) -> SiteSet {
    loop {
        let s: SiteSet = (0..n).filter(|_| rng.random::<f64>() < p).collect();
        if !s.is_empty() {
            return s;
        }
    }
}

fn random_signs(rng: &mut ChaCha8Rng, n: usize, p_minus: f64) -> IsingConfig {
    IsingConfig((0..n).map(|_| if rng.random::<f64>() < p_minus { -1 } else { 1 }).collect())
}

fn random_field(rng: &mut ChaCha8Rng, n: usize, delta: f64) -> DisorderField {
    DisorderField((0..n).map(|_| delta * (2.0 * rng.random::<f64>() - 1.0)).collect())
}

/// `R_V (c 1_V + outside-degree) = 1_V` on random subsets of side-4 boxes.
pub fn resolvent_identity(ctx: &CheckContext) -> Result<CheckOutcome> {
    let t = Instant::now();
    let mut rng = ctx.rng(1);
    let mut worst = 0.0f64;
    let count = if ctx.quick { 15 } else { 50 };
    for i in 0..count {
        let d = 1 + i % 3;
        let lat = LatticeVolume::cube(d, 4)?;
        let v = random_subset(&mut rng, lat.len(), 0.6);
        let c = rng.random_range(0.1..20.0);
        let r = resolvent_direct(&lat, &v, c)?;
        let rhs: Vec<f64> =
            v.iter().map(|x| c + (2 * d - lat.neighbors(x).filter(|&y| v.contains(y)).count()) as f64).collect();
        for i in 0..v.len() {
            let s: f64 = (0..v.len()).map(|j| r[(i, j)] * rhs[j]).sum();
            worst = worst.max((s - 1.0).abs());
        }
    }
    let tol = ctx.tol("resolvent_identity");
    let mut m = Measured::new();
    m.set("max_residual", worst);
    m.set("instances", count as f64);
    Ok(outcome("resolvent_identity", worst <= tol, m, format!("max residual {worst:.3e} (tolerance {tol:.0e})"), t))
}

/// Sum of fixed-range kernels over connected ranges against the direct resolvent.
pub fn walk_completeness(_ctx: &CheckContext) -> Result<CheckOutcome> {
    let t = Instant::now();
    let mut worst_ratio = 0.0f64;
    let mut worst_diff = 0.0f64;
    for lat in [LatticeVolume::new(&[3, 3])?, LatticeVolume::chain(5)?] {
        for c in [0.5, 4.0] {
            let all = lat.all();
            let l_max = length_for_tolerance(c, lat.dim(), 1e-13).max(lat.len());
            let direct = resolvent_direct(&lat, &all, c)?;
            let mut sum = nalgebra::DMatrix::<f64>::zeros(all.len(), all.len());
            let mut tail = 0.0;
            for mask in connected_masks(&lat, &all)? {
                let range = SiteSet::from_mask(&all, mask);
                let k = walk_kernel(&lat, &range, c, l_max)?;
                tail = k.truncation_bound;
                for (i, x) in range.iter().enumerate() {
                    for (j, y) in range.iter().enumerate() {
                        sum[(x, y)] += k.matrix[(i, j)];
                    }
                }
            }
            let diff = (&sum - &direct).amax();
            let allowed = tail + 64.0 * f64::EPSILON * direct.amax();
            worst_diff = worst_diff.max(diff);
            worst_ratio = worst_ratio.max(diff / allowed);
        }
    }
    let mut m = Measured::new();
    m.set("max_entry_difference", worst_diff);
    m.set("difference_over_tail", worst_ratio);
    Ok(outcome(
        "walk_completeness",
        worst_ratio <= 1.0,
        m,
        format!("max entry difference {worst_diff:.3e}, {worst_ratio:.3} of the certified tail"),
        t,
    ))
}

/// `H = dH_boundary + dH_rest + inf H` on random small instances.
pub fn energy_split(ctx: &CheckContext) -> Result<CheckOutcome> {
    let t = Instant::now();
    let mut rng = ctx.rng(3);
    let count = if ctx.quick { 30 } else { 100 };
    let mut worst = 0.0f64;
    for _ in 0..count {
        let d = rng.random_range(1..=3usize);
        let ext: Vec<usize> = (0..d).map(|_| rng.random_range(1..=3usize)).collect();
        let lat = LatticeVolume::new(&ext)?;
        let n = lat.len();
        let p = ModelParams::new(
            d,
            rng.random_range(0.05..1.0),
            rng.random_range(1.0..5.0),
            rng.random_range(0.5..2.0),
            0.0,
            0.3,
            0.5,
        )?;
        let g = random_subset(&mut rng, n, 0.5);
        let sigma = random_signs(&mut rng, n, 0.5);
        let eta = random_field(&mut rng, n, 0.3);
        let bc = BoundaryField::Constant(rng.random_range(-3.0..3.0));
        let m: Vec<f64> = (0..n).map(|_| rng.random_range(-6.0..6.0)).collect();
        let gm = GaussianModel::new(&lat, &p, &sigma, &eta, &bc)?;
        let h = gm.energy(&lat.all(), &m, None)?;
        let split = gm.energy_split(&g)?;
        let (h1, h2) = split.evaluate(&m);
        worst = worst.max((h - (h1 + h2 + split.min_energy)).abs() / (1.0 + h.abs()));
    }
    let tol = ctx.tol("energy_split");
    let mut m = Measured::new();
    m.set("max_relative_residual", worst);
    Ok(outcome("energy_split", worst <= tol, m, format!("max relative residual {worst:.3e} (tolerance {tol:.0e})"), t))
}

/// Closed-walk series of the boundary determinant ratio against two direct splits.
pub fn determinant_series(ctx: &CheckContext) -> Result<CheckOutcome> {
    let t = Instant::now();
    let mut rng = ctx.rng(4);
    let mut worst_ratio = 0.0f64;
    let mut worst_diff = 0.0f64;
    let mut cases = 0;
    let mut boxes = vec![LatticeVolume::new(&[3, 3])?];
    for n in 2..=6 {
        boxes.push(LatticeVolume::chain(n)?);
    }
    for lat in &boxes {
        for c in [50.0, 100.0] {
            for _ in 0..if ctx.quick { 1 } else { 3 } {
                let g = SiteSet::singleton(rng.random_range(0..lat.len()));
                let s = det_ratio_series(lat, &g, 1, c, 40)?;
                let diff = (s.log_ratio_series - s.log_ratio_direct).abs();
                let allowed = s.tail_bound + 64.0 * f64::EPSILON * (1.0 + s.log_ratio_direct.abs());
                worst_diff = worst_diff.max(diff);
                worst_ratio = worst_ratio.max(diff / allowed);
                cases += 1;
            }
        }
    }
    let mut m = Measured::new();
    m.set("max_log_difference", worst_diff);
    m.set("difference_over_tail", worst_ratio);
    m.set("cases", cases as f64);
    Ok(outcome(
        "determinant_series",
        worst_ratio <= 1.0,
        m,
        format!("max log-ratio difference {worst_diff:.3e}, {worst_ratio:.3} of the geometric tail"),
        t,
    ))
}

/// Product expansion over sets with windowed boundaries.
pub fn product_identity(ctx: &CheckContext) -> Result<CheckOutcome> {
    let t = Instant::now();
    let mut rng = ctx.rng(5);
    let count = if ctx.quick { 50 } else { 200 };
    let mut worst = 0.0f64;
    for _ in 0..count {
        let d = rng.random_range(1..=2usize);
        let lat = if d == 1 {
            LatticeVolume::chain(rng.random_range(1..=10usize))?
        } else {
            LatticeVolume::new(&[rng.random_range(1..=3usize), rng.random_range(1..=3usize)])?
        };
        let set = random_subset(&mut rng, lat.len(), 0.8);
        let inw: Vec<bool> = (0..set.len()).map(|_| rng.random::<f64>() < 0.7).collect();
        let w: Vec<f64> = inw.iter().map(|&u| if u { rng.random_range(0.0..0.5) } else { rng.random_range(-1.0..3.0) }).collect();
        let e = expand_product_identity(&lat, &set, &inw, &w)?;
        worst = worst.max((e.expanded - e.direct).abs() / e.direct.abs().max(1e-300));
    }
    let tol = ctx.tol("product_identity");
    let mut m = Measured::new();
    m.set("max_relative_residual", worst);
    Ok(outcome("product_identity", worst <= tol, m, format!("max relative residual {worst:.3e} (tolerance {tol:.0e})"), t))
}

/// One-site positivity and activity at the certificate, and two-site weights against `eps^2`.
pub fn site_certificate(ctx: &CheckContext) -> Result<CheckOutcome> {
    let t = Instant::now();
    let (eps0, m_star, dim) = (0.1, 100.0, 3);
    let cert = select_parameters(eps0, m_star, dim)?;
    let p = cert.params_at_threshold();
    let model = SiteModel::quartic(p);
    let crit = site_criteria_check(&model, cert.centering_bound);
    let target = ctx.tol("site_epsilon");
    let eps = crit.epsilon;
    let mut rng = ctx.rng(6);
    let lat = LatticeVolume::new(&[4, 1, 1])?;
    let opts = QuadOptions::default();
    let (floor, ceiling) = (ctx.tol("weight_floor"), ctx.tol("weight_ceiling"));
    let mut weights_ok = true;
    let mut min_weight = f64::INFINITY;
    let mut max_ratio = 0.0f64;
    for k in 0..if ctx.quick { 6 } else { 40 } {
        let g = if k % 2 == 0 { SiteSet::new(vec![1, 2]) } else { SiteSet::singleton(1) };
        let sigma = random_signs(&mut rng, lat.len(), 0.5);
        let eta = random_field(&mut rng, lat.len(), p.delta);
        let side = |r: &mut ChaCha8Rng| if r.random::<bool>() { 1.0 } else { -1.0 };
        let bc = BoundaryField::Constant(side(&mut rng) * (m_star + p.window * (2.0 * rng.random::<f64>() - 1.0)));
        let gm = GaussianModel::new(&lat, &p, &sigma, &eta, &bc)?;
        let wi = WeightIntegrator::new(&model, &gm, &g, opts)?;
        let mb: Vec<f64> =
            wi.boundary().iter().map(|_| side(&mut rng) * (m_star + p.window * (2.0 * rng.random::<f64>() - 1.0))).collect();
        let v = wi.value(&mb);
        let cap = eps.powi(g.len() as i32);
        min_weight = min_weight.min(v);
        max_ratio = max_ratio.max(v / cap);
        weights_ok &= v >= -floor && v <= cap * (1.0 + ceiling);
    }
    let mut m = Measured::new();
    m.set("epsilon", eps);
    m.set("positivity_margin", crit.positivity_margin);
    m.set("min_weight", min_weight);
    m.set("max_weight_over_eps_power", max_ratio);
    m.set("a", p.a);
    m.set("q0", p.q);
    m.set("delta0", p.delta);
    m.set("b", p.b);
    let eps_ok = eps <= target;
    let mut detail = format!(
        "positivity {} (margin {:.3e}), eps {:.4e} vs target {target}, weights {}",
        crit.positivity_holds,
        crit.positivity_margin,
        eps,
        if weights_ok { "within [0, eps^|G|]" } else { "outside [0, eps^|G|]" }
    );
    if !eps_ok && !ctx.quick {
        let mut found = None;
        for ms in [200.0, 400.0, 800.0, 1600.0, 3200.0] {
            let c = select_parameters(eps0, ms, dim)?;
            let r = site_criteria_check(&SiteModel::quartic(c.params_at_threshold()), c.centering_bound);
            if r.epsilon <= target {
                found = Some((ms, r.epsilon));
                break;
            }
        }
        if let Some((ms, e)) = found {
            m.set("smallest_passing_m_star", ms);
            detail.push_str(&format!("; smallest tested m* reaching the target: {ms} (eps {e:.4e})"));
        }
    }
    Ok(outcome("site_certificate", crit.positivity_holds && eps_ok && weights_ok, m, detail, t))
}

/// Reassembled coarse-grained weights against tensor quadrature of the full integral.
pub fn master_equivalence(ctx: &CheckContext) -> Result<CheckOutcome> {
    let t = Instant::now();
    let cert = select_parameters(0.1, 10.0, 1)?;
    let p = cert.params_at_threshold();
    let model = SiteModel::quartic(p);
    let bc = BoundaryField::Constant(p.m_star);
    let mut rng = ctx.rng(7);
    let mut worst = 0.0f64;
    let mut configs = 0;
    let sizes: &[usize] = if ctx.quick { &[2] } else { &[2, 3] };
    for &n in sizes {
        let lat = LatticeVolume::chain(n)?;
        let eta = random_field(&mut rng, n, p.delta);
        let vol = SmallVolume::new(&lat, &model, &eta, &bc)?;
        let opts = QuadOptions::default();
        let table = brute_force_image(&vol, opts)?;
        for bits in 0..1u64 << n {
            let sigma = IsingConfig::from_bits(n, bits);
            let gm = GaussianModel::new(&lat, &p, &sigma, &eta, &bc)?;
            let asm = assemble_weight(&model, &gm, opts)?;
            let rel = (asm.log_z - table.log_weights[bits as usize]).exp_m1().abs();
            worst = worst.max(rel);
            configs += 1;
        }
    }
    let tol = ctx.tol("master_equivalence");
    let mut m = Measured::new();
    m.set("max_relative_difference", worst);
    m.set("configurations", configs as f64);
    Ok(outcome(
        "master_equivalence",
        worst <= tol,
        m,
        format!("max relative difference {worst:.3e} over {configs} sign configurations (tolerance {tol:.0e})"),
        t,
    ))
}

/// Single-bond constant at the reference point and the activity bounds on random signs.
pub fn contour_constants(ctx: &CheckContext) -> Result<CheckOutcome> {
    let t = Instant::now();
    let p = ModelParams::new(3, 0.01, 40.0, 1.0, 0.0, 0.0, 1.0)?;
    let b = beta(&p);
    let target = ctx.tol("beta_target");
    let beta_ok = (b - target).abs() <= ctx.tol("beta");
    let lat = LatticeVolume::cube(3, 4)?;
    let bc = BoundaryField::Constant(p.m_star);
    let mut cache = KernelCache::new(p.c(), default_walk_length(&p));
    let mut rng = ctx.rng(8);
    let r = 2;
    let mut all_hold = true;
    let mut tightest = f64::INFINITY;
    let mut max_term = f64::NEG_INFINITY;
    let count = if ctx.quick { 20 } else { 100 };
    for k in 0..count {
        let pm = [0.5, 0.1, 0.02][k % 3];
        let sigma = random_signs(&mut rng, lat.len(), pm);
        let lt = lt_activity(&lat, &sigma, r, &bc, &p, &mut cache)?;
        all_hold &= lt.holds;
        if lt.sets > 0 {
            max_term = max_term.max(lt.max_term);
        }
        if lt.energy > 0 {
            tightest = tightest.min(lt.log_activity / lt.energy_bound);
        }
    }
    let mut m = Measured::new();
    m.set("beta", b);
    m.set("enumeration_range", r as f64);
    m.set("min_activity_over_energy_bound", tightest);
    m.set("max_single_term", max_term);
    Ok(outcome(
        "contour_constants",
        beta_ok && all_hold,
        m,
        format!("beta {b:.5} (target {target}), activity bounds hold on all {count} configurations: {all_hold}"),
        t,
    ))
}

/// Finite-volume conditional sign probabilities against the pair specification, growing chains.
pub fn gibbs_ratio(ctx: &CheckContext) -> Result<CheckOutcome> {
    let t = Instant::now();
    let p = ModelParams::new(1, 0.1, 2.0, 1.0, 0.0, 0.05, 0.5)?;
    let pair = pair_hamiltonian(&p, 24, 1e-14)?;
    let mut rng = ctx.rng(9);
    let mut gaps = Vec::new();
    let mut within = true;
    let mut detail = String::new();
    for l in [4usize, 6, 8, 10] {
        let origin = -(l as i32) / 2;
        let lat = LatticeVolume::with_origin(&[l], &[origin])?;
        let idx = |c: i32| lat.index(&Site::new(&[c])).expect("in chain");
        let inner: SiteSet = (1..l - 1).map(|k| idx(origin + k as i32)).collect();
        let v = SiteSet::new(vec![idx(-1), idx(0)]);
        let fixed = random_signs(&mut rng, l, 0.3);
        let eta = DisorderField((0..l).map(|x| p.delta * (0.7 * (lat.site(x).0[0] as f64)).sin()).collect());
        let bc = BoundaryField::Constant(p.m_star);
        let inp = GibbsRatioInput { outer: &lat, inner: &inner, v: &v, fixed: &fixed, eta: &eta, boundary: &bc };
        let rep = gibbs_ratio_gaussian(&p, &inp, &pair)?;
        within &= rep.within_envelope;
        detail.push_str(&format!("L={l}: gap {:.3e} env {:.3e}; ", rep.gap, rep.envelope));
        gaps.push(rep.gap);
    }
    let ratios: Vec<f64> = gaps.windows(2).map(|w| w[1] / w[0]).collect();
    let decreasing = ratios.iter().all(|&r| r < 1.0);
    let mean_ratio = ratios.iter().product::<f64>().powf(1.0 / ratios.len() as f64);
    let mut m = Measured::new();
    for (l, g) in [4, 6, 8, 10].iter().zip(&gaps) {
        m.set(&format!("gap_{l}"), *g);
    }
    m.set("geometric_ratio", mean_ratio);
    detail.push_str(&format!("mean ratio per step {mean_ratio:.3}"));
    Ok(outcome("gibbs_ratio", within && decreasing && mean_ratio < 1.0, m, detail, t))
}

/// Continuous negative-site probability against the coarse-grained one plus corrections.
pub fn coarse_grain_inequality(ctx: &CheckContext) -> Result<CheckOutcome> {
    let t = Instant::now();
    let cert = select_parameters(0.1, 100.0, 1)?;
    let p = cert.params_at_threshold();
    let model = SiteModel::quartic(p);
    let eps = site_criteria_check(&model, cert.centering_bound).epsilon;
    let bc = BoundaryField::Constant(p.m_star);
    let mut rng = ctx.rng(10);
    let count = if ctx.quick { 6 } else { 20 };
    let mut holds = 0;
    let mut min_margin = f64::INFINITY;
    let mut max_residual = f64::NEG_INFINITY;
    for k in 0..count {
        let n = 1 + k % 3;
        let lat = LatticeVolume::chain(n)?;
        let eta = if k == 0 { DisorderField(vec![-p.delta; n]) } else { random_field(&mut rng, n, p.delta) };
        let rep = prop52_check(&lat, &model, &eta, &bc, n / 2, eps, QuadOptions::default())?;
        holds += rep.holds as usize;
        min_margin = min_margin.min(rep.margin);
        max_residual = max_residual.max(rep.residual);
    }
    let mut m = Measured::new();
    m.set("instances_holding", holds as f64);
    m.set("min_margin", min_margin);
    m.set("max_residual", max_residual);
    m.set("epsilon", eps);
    Ok(outcome(
        "coarse_grain_inequality",
        holds == count,
        m,
        format!("holds on {holds}/{count}; min margin {min_margin:.3e}, max residual {max_residual:.3e}"),
        t,
    ))
}

/// Smallest `m*` on a doubling-free grid with `q0 m*^2 >= target`.
pub fn well_for_coupling(eps0: f64, dim: usize, target: f64) -> Result<f64> {
    let mut ms = 100.0;
    loop {
        let c = select_parameters(eps0, ms, dim)?;
        if c.q_max * ms * ms >= target {
            return Ok(ms);
        }
        ms += 100.0;
    }
}

/// Coupling of a chain with the same single-bond constant as `p`.
pub fn matched_chain_coupling(p: &ModelParams) -> f64 {
    let target = beta(p);
    let f = |q: f64| beta(&ModelParams { dim: 1, q, ..*p }) - target;
    let (mut lo, mut hi) = (1e-12, 1.0);
    while f(hi) < 0.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Ordering estimate in a cube against a chain at matched single-bond constant.
pub fn ordering_probe(ctx: &CheckContext) -> Result<CheckOutcome> {
    let t = Instant::now();
    let ms = well_for_coupling(0.1, 3, 50.0)?;
    let cert = select_parameters(0.1, ms, 3)?;
    let p3 = cert.params(cert.q_max, cert.delta_max / 10.0)?;
    let q1 = matched_chain_coupling(&p3);
    let p1 = ModelParams { dim: 1, q: q1, ..p3 };
    let (realizations, side, chain, opts) = if ctx.quick {
        (2, 4, 64, OrderOptions { sweeps: 200, burn_in: 100, batches: 10, ..OrderOptions::default() })
    } else {
        (10, 8, 512, OrderOptions { sweeps: 2000, burn_in: 1000, batches: 20, ..OrderOptions::default() })
    };
    let thr = ctx.tol("order_threshold");
    let thr1 = ctx.tol("disorder_threshold");
    let mut ordered = 0;
    let mut disordered = 0;
    let mut est3 = Vec::new();
    let mut est1 = Vec::new();
    for (dim, p, lat, out) in [
        (3, p3, LatticeVolume::cube(3, side)?, &mut est3),
        (1, p1, LatticeVolume::chain(chain)?, &mut est1),
    ] {
        let model = SiteModel::quartic(p);
        let bc = BoundaryField::Constant(p.m_star);
        let center: Vec<i32> = lat.extents().iter().map(|&e| (e / 2) as i32).collect();
        let x0 = lat.index(&Site::new(&center)).expect("center");
        for r in 0..realizations {
            let spec = DisorderSpec {
                delta: p.delta,
                sigma2: p.delta * p.delta,
                seed: ctx.seed.wrapping_add(r as u64),
                law: DisorderLaw::TruncatedGaussian,
            };
            let eta = sample_disorder(&lat, &spec)?;
            let o = OrderOptions { seed: ctx.seed ^ ((r as u64) << 8), algorithm: Algorithm::HeatBath, init: InitialField::Plus, ..opts };
            let e = order_probability(&lat, &model, &eta, &bc, x0, OrderEvent::BelowHalf, &o)?;
            if dim == 3 && e.estimate + 3.0 * e.stderr < thr {
                ordered += 1;
            }
            if dim == 1 && e.estimate + 3.0 * e.stderr > thr1 {
                disordered += 1;
            }
            out.push(e.estimate);
        }
    }
    let need = (realizations * 8usize).div_ceil(10);
    let mut m = Measured::new();
    m.set("m_star", ms);
    m.set("q_m_star_squared", p3.q * ms * ms);
    m.set("chain_coupling", q1);
    m.set("cube_ordered_realizations", ordered as f64);
    m.set("chain_disordered_realizations", disordered as f64);
    m.set("cube_mean_estimate", est3.iter().sum::<f64>() / est3.len() as f64);
    m.set("chain_mean_estimate", est1.iter().sum::<f64>() / est1.len() as f64);
    Ok(outcome(
        "ordering_probe",
        ordered >= need && disordered >= need,
        m,
        format!(
            "cube: {ordered}/{realizations} below {thr}; chain: {disordered}/{realizations} consistent with above {thr1} (need {need})"
        ),
        t,
    ))
}

/// Run one check by name.
pub fn run_check(name: &str, ctx: &CheckContext) -> Result<CheckOutcome> {
    match name {
        "resolvent_identity" => resolvent_identity(ctx),
        "walk_completeness" => walk_completeness(ctx),
        "energy_split" => energy_split(ctx),
        "determinant_series" => determinant_series(ctx),
        "product_identity" => product_identity(ctx),
        "site_certificate" => site_certificate(ctx),
        "master_equivalence" => master_equivalence(ctx),
        "contour_constants" => contour_constants(ctx),
        "gibbs_ratio" => gibbs_ratio(ctx),
        "coarse_grain_inequality" => coarse_grain_inequality(ctx),
        "ordering_probe" => ordering_probe(ctx),
        other => Err(crate::Error::Config(format!("unknown check `{other}`"))),
    }
}
