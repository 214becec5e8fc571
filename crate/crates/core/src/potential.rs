//! Site potentials, the coarse-graining kernel and the parameter certificate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erf, erfc};

use crate::error::{domain, Result};
use crate::gaussian::{BoundaryField, DisorderField, GaussianModel, IsingConfig, ModelParams};
use crate::lattice::{LatticeVolume, Site};
use crate::quad::adaptive;

/// Which single-site potential the model uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PotentialKind {
    /// `(m^2 - m*^2)^2 / (8 m*^2)`.
    Quartic,
    /// `-log(exp(-Q^+) + exp(-Q^-))`: the anharmonic correction vanishes.
    WellMixture,
}

/// Values of the site terms at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SiteTerms {
    pub potential: f64,
    pub well: f64,
    pub w: f64,
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Parameters plus the choice of site potential.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiteModel {
    pub params: ModelParams,
    pub kind: PotentialKind,
}

impl SiteModel {
    pub fn quartic(params: ModelParams) -> Self {
        SiteModel { params, kind: PotentialKind::Quartic }
    }

    pub fn well_mixture(params: ModelParams) -> Self {
        SiteModel { params, kind: PotentialKind::WellMixture }
    }

    /// Quadratic well `a/2 (m - s m*)^2 + b`.
    pub fn well(&self, s: i8, m: f64) -> f64 {
        let p = &self.params;
        0.5 * p.a * (m - s as f64 * p.m_star).powi(2) + p.b
    }

    /// `-log(exp(-Q^+) + exp(-Q^-))`.
    fn neg_log_well_sum(&self, m: f64) -> f64 {
        let (qp, qm) = (self.well(1, m), self.well(-1, m));
        qp.min(qm) - (-(qp - qm).abs()).exp().ln_1p()
    }

    pub fn potential(&self, m: f64) -> f64 {
        match self.kind {
            PotentialKind::Quartic => {
                let ms = self.params.m_star;
                (m * m - ms * ms).powi(2) / (8.0 * ms * ms)
            }
            PotentialKind::WellMixture => self.neg_log_well_sum(m),
        }
    }

    /// `log(1 + w(m))` with `1 + w = exp(-V) / (exp(-Q^+) + exp(-Q^-))`.
    pub fn log_one_plus_w(&self, m: f64) -> f64 {
        match self.kind {
            PotentialKind::Quartic => -self.potential(m) + self.neg_log_well_sum(m),
            PotentialKind::WellMixture => 0.0,
        }
    }

    pub fn w(&self, m: f64) -> f64 {
        self.log_one_plus_w(m).exp_m1()
    }

    /// Coarse-graining kernel `T(s | m) = (1 + s tanh(a m* m)) / 2`.
    pub fn kernel(&self, s: i8, m: f64) -> f64 {
        0.5 * (1.0 + s as f64 * (self.params.a * self.params.m_star * m).tanh())
    }

    /// `log T(s | m)`, accurate deep in the tails.
    pub fn log_kernel(&self, s: i8, m: f64) -> f64 {
        -softplus(-2.0 * s as f64 * self.params.a * self.params.m_star * m)
    }

    pub fn evaluate(&self, m: f64, s: i8) -> SiteTerms {
        SiteTerms { potential: self.potential(m), well: self.well(s, m), w: self.w(m) }
    }
}

/// Mass of `exp(-s/2 (m - mu)^2)` on `[lo, hi]` (infinite ends allowed).
pub fn gaussian_mass(s: f64, mu: f64, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    let k = (s / 2.0).sqrt();
    let pref = (std::f64::consts::PI / (2.0 * s)).sqrt();
    let (u, v) = (k * (lo - mu), k * (hi - mu));
    let val = if u >= 0.0 {
        erfc(u) - erfc(v)
    } else if v <= 0.0 {
        erfc(-v) - erfc(-u)
    } else {
        erf(v) - erf(u)
    };
    pref * val.max(0.0)
}

/// Mass of `exp(-s/2 (m - mu)^2)` outside the two windows.
fn mass_outside_windows(p: &ModelParams, s: f64, mu: f64) -> f64 {
    let [e0, e1, e2, e3] = p.window_edges();
    if e1 >= e2 {
        return gaussian_mass(s, mu, f64::NEG_INFINITY, e0) + gaussian_mass(s, mu, e3, f64::INFINITY);
    }
    gaussian_mass(s, mu, f64::NEG_INFINITY, e0) + gaussian_mass(s, mu, e1, e2) + gaussian_mass(s, mu, e3, f64::INFINITY)
}

fn mass_inside_windows(p: &ModelParams, s: f64, mu: f64) -> f64 {
    let [e0, e1, e2, e3] = p.window_edges();
    if e1 >= e2 {
        return gaussian_mass(s, mu, e0, e3);
    }
    gaussian_mass(s, mu, e0, e1) + gaussian_mass(s, mu, e2, e3)
}

/// Largest value of `f` on `[lo, hi]`: grid search then golden-section refinement.
fn maximize(f: impl Fn(f64) -> f64, lo: f64, hi: f64, points: usize) -> (f64, f64) {
    let mut best = (lo, f(lo));
    let step = (hi - lo) / (points.max(2) - 1) as f64;
    for k in 0..points.max(2) {
        let x = lo + k as f64 * step;
        let v = f(x);
        if v > best.1 {
            best = (x, v);
        }
    }
    let (mut a, mut b) = ((best.0 - step).max(lo), (best.0 + step).min(hi));
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..60 {
        let (x1, x2) = (b - g * (b - a), a + g * (b - a));
        if f(x1) > f(x2) {
            b = x2;
        } else {
            a = x1;
        }
    }
    let mid = 0.5 * (a + b);
    let v = f(mid);
    if v > best.1 {
        (mid, v)
    } else {
        best
    }
}

/// Parameters chosen from a target activity and a well position, with the
/// quantities that certify them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterCertificate {
    pub eps0: f64,
    pub m_star: f64,
    pub dim: usize,
    /// Relative window width.
    pub eps1: f64,
    pub a: f64,
    /// Half-width of the window around each well.
    pub window: f64,
    /// Target bound on the distance of minimizers from the wells.
    pub centering: f64,
    /// Largest admissible coupling.
    pub q_max: f64,
    /// Largest admissible random-field bound.
    pub delta_max: f64,
    /// Worst distance of minimizers from the wells at `q_max`, `delta_max`.
    pub centering_bound: f64,
    /// Exponent of the cross-well suppression factor.
    pub kappa: f64,
    /// Well constant making the anharmonic correction nonnegative on the windows.
    pub b: f64,
    /// Analytic upper bound on the one-site activity.
    pub eps_bound: f64,
}

impl ParameterCertificate {
    /// Model parameters for a coupling and field bound within the certificate.
    pub fn params(&self, q: f64, delta: f64) -> Result<ModelParams> {
        if q > self.q_max * (1.0 + 1e-12) || delta > self.delta_max * (1.0 + 1e-12) {
            return domain(format!(
                "q = {q}, delta = {delta} outside the certified range q <= {}, delta <= {}",
                self.q_max, self.delta_max
            ));
        }
        ModelParams::new(self.dim, q, self.m_star, self.a, self.b, delta, self.window)
    }

    pub fn params_at_threshold(&self) -> ModelParams {
        ModelParams {
            dim: self.dim,
            q: self.q_max,
            m_star: self.m_star,
            a: self.a,
            b: self.b,
            delta: self.delta_max,
            window: self.window,
        }
    }
}

/// Worst distance of a conditional minimizer from its well, from the walk
/// bound: boundary pull `(2m* + A2) 2d q / (a + 2dq)` plus field `delta / a`.
pub fn centering_bound(p: &ModelParams) -> f64 {
    let two_dq = 2.0 * p.dim as f64 * p.q;
    (2.0 * p.m_star + p.window) * two_dq / (p.a + two_dq) + p.delta / p.a
}

/// Ratio of Gaussian mass outside the windows to `w`-free mass inside, at centring `mu`.
fn outside_inside_ratio(p: &ModelParams, mu: f64) -> f64 {
    let stiff = p.a + 4.0 * p.dim as f64 * p.q;
    mass_outside_windows(p, p.a, mu) / mass_inside_windows(p, stiff, mu)
}

/// Choose `a, q_max, delta_max, b` for target activity `eps0` and well position `m_star`.
pub fn select_parameters(eps0: f64, m_star: f64, dim: usize) -> Result<ParameterCertificate> {
    if !(eps0 > 0.0 && m_star > 0.0) || !(1..=crate::lattice::MAX_DIM).contains(&dim) {
        return domain("need eps0 > 0, m* > 0 and a supported dimension");
    }
    let eps1 = (eps0 * m_star).cbrt() / m_star;
    if eps1 >= 0.5 {
        return domain(format!("window too wide: relative width {eps1:.4} >= 1/2; increase m*"));
    }
    let a = (2.0 + eps1).powi(2) / 4.0;
    let two_d = 2.0 * dim as f64;
    let q_max = a / two_d / (20.0 / eps1 + 9.0);
    let window = eps1 * m_star;
    let centering = window / 10.0;
    let delta_max = a * eps1 * m_star / 20.0;
    let kappa = ((2.0 + eps1).powi(2) * (2.0 - eps1).powi(2) + 1.0 - (1.0 + eps1).powi(2)) / 8.0;
    let p = ModelParams { dim, q: q_max, m_star, a, b: 0.0, delta: delta_max, window };
    let centering_bound = centering_bound(&p);
    let (_, ratio) = maximize(
        |mu| outside_inside_ratio(&p, mu),
        m_star - centering_bound,
        m_star + centering_bound,
        512,
    );
    let b = (-kappa * m_star * m_star).exp().ln_1p() + ratio.ln_1p();
    let eps_bound = epsilon_bound(a, eps1, m_star, b);
    Ok(ParameterCertificate {
        eps0,
        m_star,
        dim,
        eps1,
        a,
        window,
        centering,
        q_max,
        delta_max,
        centering_bound,
        kappa,
        b,
        eps_bound,
    })
}

/// Analytic bound on the one-site activity for relative window `eps1`.
pub fn epsilon_bound(a: f64, eps1: f64, m_star: f64, b: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    let w = eps1 * m_star;
    let soft = a - 2.0 * eps1;
    let tail = 0.5 * erfc(a.sqrt() * 0.9 * w / std::f64::consts::SQRT_2);
    2.0 * b.exp()
        * ((tau / soft).sqrt() * (a * eps1.powi(3) * m_star * m_star / (100.0 * soft)).exp() - (tau / a).sqrt()
            + m_star * (-(0.125 - a / 10.0) * w * w).exp()
            + 3.0 * (tau / a).sqrt() * tail)
}

/// Outcome of the minimizer-range check.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RangeReport {
    /// Whether `q` and `delta` satisfy the analytic thresholds.
    pub analytic_holds: bool,
    pub q_threshold: f64,
    pub delta_threshold: f64,
    /// Exact deviation for one site of sign -1 with all neighbours at `m* + A2`
    /// and field `+delta`.
    pub single_site_deviation: f64,
    /// Largest deviation seen over the worst case and the random trials.
    pub observed_max_deviation: f64,
    pub within_target: bool,
}

/// Check that conditional minimizers stay within `target` of `m* sigma`.
pub fn range_check(p: &ModelParams, target: f64, window: f64, trials: usize, seed: u64) -> Result<RangeReport> {
    p.validate()?;
    let two_d = 2.0 * p.dim as f64;
    let q_threshold = p.a / two_d / ((2.0 * p.m_star + window) / target - 1.0);
    let delta_threshold = p.a * target / 2.0;
    let analytic_holds = p.q <= q_threshold && p.delta <= delta_threshold;

    let one = LatticeVolume::cube(p.dim, 1)?;
    let minus = IsingConfig(vec![-1]);
    let push = DisorderField(vec![p.delta]);
    let pull = BoundaryField::Constant(p.m_star + window);
    let gm = GaussianModel::new(&one, p, &minus, &push, &pull)?;
    let single = (gm.global_minimizer()?[0] + p.m_star).abs();

    let mut worst = single;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = if p.dim <= 2 { 3 } else { 2 };
    let lat = LatticeVolume::cube(p.dim, side)?;
    let n = lat.len();
    let mut boundary_sites: Vec<Site> = (0..n).flat_map(|x| lat.exterior_neighbors(x)).collect();
    boundary_sites.sort_unstable();
    boundary_sites.dedup();
    for _ in 0..trials {
        let sigma = IsingConfig((0..n).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect());
        let eta = DisorderField((0..n).map(|_| rng.random_range(-p.delta..=p.delta)).collect());
        let values = boundary_sites
            .iter()
            .map(|s| {
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                (*s, sign * (p.m_star + rng.random_range(-window..=window)))
            })
            .collect();
        let bc = BoundaryField::Pointwise { values, default: p.m_star };
        let gm = GaussianModel::new(&lat, p, &sigma, &eta, &bc)?;
        let m = gm.global_minimizer()?;
        for x in 0..n {
            worst = worst.max((m[x] - p.m_star * sigma[x] as f64).abs());
        }
    }
    Ok(RangeReport {
        analytic_holds,
        q_threshold,
        delta_threshold,
        single_site_deviation: single,
        observed_max_deviation: worst,
        within_target: worst <= target,
    })
}

/// One-site integrals behind positivity and the activity bound.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SiteCriteria {
    /// Smallest `int e^{-(a+4dq)/2 (m-c)^2} w 1_U - int e^{-a/2 (m-c)^2} 1_{not U}` over centrings.
    pub positivity_margin: f64,
    pub positivity_holds: bool,
    /// Whether `w >= 0` on the windows (checked on a grid).
    pub w_nonnegative_on_windows: bool,
    /// Largest `int e^{-a/2 (m-c)^2} (w 1_U + (1+w) 1_{not U})` over centrings.
    pub epsilon: f64,
    pub worst_centering: f64,
    /// Range of centrings scanned: `m* +- centering`.
    pub centering: f64,
}

fn site_breaks(model: &SiteModel, mu: f64) -> Vec<f64> {
    let p = &model.params;
    let step = 1.0 / p.a.sqrt();
    let mut b: Vec<f64> = p.window_edges().to_vec();
    for j in -16..=16 {
        b.push(mu + j as f64 * step);
        b.push(-mu + j as f64 * step);
    }
    b.push(0.0);
    b
}

/// `int e^{-s/2 (m-mu)^2} f(m) dm` over the model's quadrature domain.
pub fn site_integral(model: &SiteModel, s: f64, mu: f64, f: impl Fn(f64, f64) -> f64) -> f64 {
    let p = &model.params;
    let half = p.m_star.max(mu.abs()) + 12.0 / p.a.sqrt();
    let breaks = site_breaks(model, mu);
    adaptive(
        |m| {
            let lg = -0.5 * s * (m - mu).powi(2);
            f(m, lg)
        },
        -half,
        half,
        &breaks,
        1e-300,
        1e-13,
    )
}

/// `int e^{-a/2 (m-mu)^2} (w 1_U + (1+w) 1_{not U})`.
pub fn site_activity(model: &SiteModel, mu: f64) -> f64 {
    let p = model.params;
    site_integral(model, p.a, mu, |m, lg| {
        let l = model.log_one_plus_w(m);
        if p.in_window(m) {
            (l + lg).exp() - lg.exp()
        } else {
            (l + lg).exp()
        }
    })
}

/// `int e^{-(a+4dq)/2 (m-mu)^2} w 1_U`.
pub fn site_positive_mass(model: &SiteModel, mu: f64) -> f64 {
    let p = model.params;
    let stiff = p.a + 4.0 * p.dim as f64 * p.q;
    site_integral(model, stiff, mu, |m, lg| {
        if p.in_window(m) {
            (model.log_one_plus_w(m) + lg).exp() - lg.exp()
        } else {
            0.0
        }
    })
}

/// `int e^{-a/2 (m-mu)^2} 1_{not U}`.
pub fn site_outside_mass(model: &SiteModel, mu: f64) -> f64 {
    mass_outside_windows(&model.params, model.params.a, mu)
}

/// Evaluate the one-site criteria over centrings within `centering` of `m*`.
pub fn site_criteria_check(model: &SiteModel, centering: f64) -> SiteCriteria {
    let p = model.params;
    let (lo, hi) = (p.m_star - centering, p.m_star + centering);
    let (worst, eps) = maximize(|mu| site_activity(model, mu), lo, hi, 65);
    let (_, neg_margin) = maximize(|mu| site_outside_mass(model, mu) - site_positive_mass(model, mu), lo, hi, 65);
    let [e0, e1, e2, e3] = p.window_edges();
    let grid = |a: f64, b: f64| (0..=400).map(move |k| a + (b - a) * k as f64 / 400.0);
    let w_ok = grid(e2, e3).chain(grid(e0, e1)).all(|m| model.w(m) >= -1e-15);
    SiteCriteria {
        positivity_margin: -neg_margin,
        positivity_holds: -neg_margin >= 0.0 && w_ok,
        w_nonnegative_on_windows: w_ok,
        epsilon: eps,
        worst_centering: worst,
        centering,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(m_star: f64) -> SiteModel {
        SiteModel::quartic(ModelParams::new(1, 0.01, m_star, 1.0, 0.0, 0.0, 0.5).unwrap())
    }

    #[test]
    fn potential_values() {
        let m = model(2.0);
        assert!((m.potential(0.0) - 0.5).abs() < 1e-15);
        assert_eq!(m.potential(2.0), 0.0);
        assert_eq!(m.potential(-2.0), 0.0);
    }

    #[test]
    fn kernel_value() {
        let m = model(2.0);
        assert!((m.kernel(1, 1.0) - 0.982_013_790_037_908_4).abs() < 1e-12);
        assert!((m.kernel(1, 0.3) + m.kernel(-1, 0.3) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn well_mixture_has_no_correction() {
        let m = SiteModel::well_mixture(ModelParams::new(1, 0.01, 3.0, 1.3, 0.2, 0.0, 0.5).unwrap());
        for k in -20..=20 {
            assert_eq!(m.w(k as f64 * 0.37), 0.0);
        }
    }

    #[test]
    fn gaussian_mass_total() {
        let full = gaussian_mass(2.0, 0.3, f64::NEG_INFINITY, f64::INFINITY);
        assert!((full - (std::f64::consts::PI).sqrt()).abs() < 1e-14);
        let split = gaussian_mass(2.0, 0.3, f64::NEG_INFINITY, 1.0) + gaussian_mass(2.0, 0.3, 1.0, f64::INFINITY);
        assert!((split - full).abs() < 1e-14);
    }

    #[test]
    fn certificate_numbers() {
        let c = select_parameters(0.1, 100.0, 3).unwrap();
        assert!((c.eps1 - 0.021_544_346_9).abs() < 1e-9);
        assert!((c.a - (2.0 + c.eps1).powi(2) / 4.0).abs() < 1e-15);
        assert!((c.centering_bound - 1.5 * c.centering).abs() < 1e-9);
        assert!(c.b > 0.0);
    }

    #[test]
    fn too_small_well_is_rejected() {
        assert!(select_parameters(0.1, 0.5, 3).is_err());
    }
}
