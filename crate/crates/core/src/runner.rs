//! Declarative run configurations, orchestration and persistence.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::anharmonic::QuadOptions;
use crate::checks::{self, CheckContext, CheckOutcome, CHECK_NAMES};
use crate::contour::{interaction_range, peierls_constants};
use crate::error::{Error, Result};
use crate::gaussian::{BoundaryField, ModelParams};
use crate::image::{many_body_extract, SmallVolume};
use crate::lattice::{LatticeVolume, Site};
use crate::potential::{select_parameters, site_criteria_check, SiteModel};
use crate::simulation::{
    order_probability, sample_disorder, Algorithm, DisorderLaw, DisorderSpec, InitialField, OrderEvent, OrderOptions,
};

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "RFSPIN_OUT";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Verify,
    Simulate,
    Constants,
    Extract,
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::Config(format!("unknown mode `{s}` (expected verify, simulate, constants or extract)")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Effort {
    Quick,
    #[default]
    Full,
}

/// Inputs from which the model parameters are resolved through the certificate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsInput {
    #[serde(default = "default_eps0")]
    pub eps0: f64,
    pub m_star: f64,
    pub dim: usize,
    /// Coupling; defaults to the certified maximum.
    #[serde(default)]
    pub q: Option<f64>,
    /// Field bound; defaults to a tenth of the certified maximum.
    #[serde(default)]
    pub delta: Option<f64>,
}

fn default_eps0() -> f64 {
    0.1
}

impl Default for ParamsInput {
    fn default() -> Self {
        ParamsInput { eps0: 0.1, m_star: 100.0, dim: 3, q: None, delta: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeSpec {
    pub extents: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedSpec {
    #[serde(default)]
    pub base: u64,
    #[serde(default = "one")]
    pub realizations: usize,
}

fn one() -> usize {
    1
}

impl Default for SeedSpec {
    fn default() -> Self {
        SeedSpec { base: 0, realizations: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    #[serde(default = "default_sweeps")]
    pub sweeps: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default = "default_batches")]
    pub batches: usize,
    #[serde(default = "default_algorithm")]
    pub algorithm: Algorithm,
    #[serde(default = "default_law")]
    pub law: DisorderLaw,
    /// Proxy variance of the field law; defaults to `delta^2`.
    #[serde(default)]
    pub sigma2: Option<f64>,
    #[serde(default = "default_init")]
    pub init: InitialField,
}

fn default_sweeps() -> usize {
    2000
}
fn default_burn_in() -> usize {
    1000
}
fn default_batches() -> usize {
    20
}
fn default_algorithm() -> Algorithm {
    Algorithm::HeatBath
}
fn default_law() -> DisorderLaw {
    DisorderLaw::TruncatedGaussian
}
fn default_init() -> InitialField {
    InitialField::Plus
}

impl Default for SimulationSpec {
    fn default() -> Self {
        SimulationSpec {
            sweeps: default_sweeps(),
            burn_in: default_burn_in(),
            batches: default_batches(),
            algorithm: default_algorithm(),
            law: default_law(),
            sigma2: None,
            init: default_init(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    #[serde(default)]
    pub params: ParamsInput,
    #[serde(default)]
    pub volume: Option<VolumeSpec>,
    #[serde(default)]
    pub seeds: SeedSpec,
    #[serde(default)]
    pub output: Option<String>,
    #[serde(default)]
    pub tolerances: BTreeMap<String, f64>,
    #[serde(default)]
    pub effort: Effort,
    /// Subset of checks for verify runs; all when absent.
    #[serde(default)]
    pub checks: Option<Vec<String>>,
    #[serde(default)]
    pub simulation: SimulationSpec,
}

impl RunConfig {
    pub fn for_mode(mode: Mode) -> Self {
        RunConfig {
            mode,
            params: ParamsInput::default(),
            volume: None,
            seeds: SeedSpec::default(),
            output: None,
            tolerances: BTreeMap::new(),
            effort: Effort::default(),
            checks: None,
            simulation: SimulationSpec::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Field-level diagnostics; empty when the config is usable for its mode.
    pub fn diagnostics(&self) -> Vec<String> {
        let mut out = Vec::new();
        let p = &self.params;
        if !(p.eps0 > 0.0 && p.eps0.is_finite()) {
            out.push("params.eps0: must be positive".into());
        }
        if !(p.m_star > 0.0 && p.m_star.is_finite()) {
            out.push("params.m_star: must be positive".into());
        }
        if !(1..=crate::lattice::MAX_DIM).contains(&p.dim) {
            out.push(format!("params.dim: must lie in 1..={}", crate::lattice::MAX_DIM));
        }
        if let Some(q) = p.q {
            if !(q > 0.0 && q.is_finite()) {
                out.push("params.q: must be positive".into());
            }
        }
        if let Some(d) = p.delta {
            if !(d >= 0.0 && d.is_finite()) {
                out.push("params.delta: must be nonnegative".into());
            }
        }
        let known = checks::default_tolerances();
        for (k, v) in &self.tolerances {
            if !known.contains_key(k) && k != "const_factor" {
                out.push(format!("tolerances.{k}: unknown key"));
            }
            if !v.is_finite() {
                out.push(format!("tolerances.{k}: must be finite"));
            }
        }
        if let Some(list) = &self.checks {
            for c in list {
                if !CHECK_NAMES.contains(&c.as_str()) {
                    out.push(format!("checks: unknown check `{c}`"));
                }
            }
        }
        let vol_ok = |max: Option<usize>, out: &mut Vec<String>| match &self.volume {
            None => out.push("volume: required for this mode".into()),
            Some(v) => {
                if v.extents.len() != p.dim || v.extents.iter().any(|&e| e == 0) {
                    out.push(format!("volume.extents: need {} positive extents", p.dim));
                } else if let Some(m) = max {
                    let n: usize = v.extents.iter().product();
                    if n > m {
                        out.push(format!("volume.extents: at most {m} sites for this mode"));
                    }
                }
            }
        };
        match self.mode {
            Mode::Simulate => {
                vol_ok(None, &mut out);
                let s = &self.simulation;
                if s.sweeps == 0 || s.batches == 0 || s.sweeps < s.batches {
                    out.push("simulation: need sweeps >= batches >= 1".into());
                }
                if self.seeds.realizations == 0 {
                    out.push("seeds.realizations: must be at least 1".into());
                }
                if let Some(v) = s.sigma2 {
                    if !(v > 0.0 && v.is_finite()) {
                        out.push("simulation.sigma2: must be positive".into());
                    }
                }
            }
            Mode::Extract => vol_ok(Some(crate::image::BRUTE_CAP), &mut out),
            Mode::Verify | Mode::Constants => {}
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.diagnostics();
        if d.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(d.join("; ")))
        }
    }

    /// Certified parameters with the configured overrides.
    pub fn model_params(&self) -> Result<ModelParams> {
        let p = &self.params;
        let cert = select_parameters(p.eps0, p.m_star, p.dim)?;
        let mut mp = cert.params_at_threshold();
        mp.q = p.q.unwrap_or(cert.q_max);
        mp.delta = p.delta.unwrap_or(cert.delta_max / 10.0);
        mp.validate()?;
        Ok(mp)
    }

    pub fn hash(&self) -> String {
        content_hash(self.to_json().as_bytes())
    }
}

/// `sha256("blob <len>\0" + content)` in hex.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct ResultRecord {
    pub run_id: String,
    pub config_hash: String,
    pub config: RunConfig,
    pub checks: Vec<CheckOutcome>,
    pub files: Vec<String>,
    pub summary: BTreeMap<String, f64>,
    pub seconds: f64,
    pub passed: bool,
}

/// Output directory: explicit, then config, then the environment, then `rfspin-out`.
pub fn resolve_output(explicit: Option<&Path>, config: &RunConfig) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    if let Some(p) = &config.output {
        return PathBuf::from(p);
    }
    match std::env::var_os(OUT_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => PathBuf::from("rfspin-out"),
    }
}

fn write_atomic(dir: &Path, name: &str, content: &str) -> Result<()> {
    let tmp = dir.join(format!(".{name}.tmp"));
    fs::write(&tmp, content)?;
    fs::rename(&tmp, dir.join(name))?;
    Ok(())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn fmt(v: f64) -> String {
    format!("{v:.12e}")
}

/// Validate, run and persist; returns the record (also written as `record.json`).
pub fn run(config: &RunConfig, out: &Path) -> Result<ResultRecord> {
    config.validate()?;
    let start = Instant::now();
    let hash = config.hash();
    let (checks, files, summary, passed) = match config.mode {
        Mode::Verify => run_verify(config)?,
        Mode::Constants => run_constants(config)?,
        Mode::Simulate => run_simulate(config, out, &hash)?,
        Mode::Extract => run_extract(config)?,
    };
    fs::create_dir_all(out)?;
    let mut names = Vec::new();
    for (name, content) in files {
        write_atomic(out, &name, &content)?;
        names.push(name);
    }
    names.push("record.json".into());
    let mode = serde_json::to_value(config.mode)?;
    let record = ResultRecord {
        run_id: format!("{}-{}", mode.as_str().unwrap_or("run"), &hash[..12]),
        config_hash: hash,
        config: config.clone(),
        checks,
        files: names,
        summary,
        seconds: start.elapsed().as_secs_f64(),
        passed,
    };
    write_atomic(out, "record.json", &serde_json::to_string_pretty(&record)?)?;
    Ok(record)
}

type ModeOutput = (Vec<CheckOutcome>, Vec<(String, String)>, BTreeMap<String, f64>, bool);

fn check_context(config: &RunConfig) -> CheckContext {
    let mut ctx = CheckContext::new(config.seeds.base, config.effort == Effort::Quick);
    for (k, v) in &config.tolerances {
        ctx.tolerances.insert(k.clone(), *v);
    }
    ctx
}

fn run_verify(config: &RunConfig) -> Result<ModeOutput> {
    let ctx = check_context(config);
    let selected: Vec<&str> = match &config.checks {
        Some(list) => CHECK_NAMES.iter().copied().filter(|n| list.iter().any(|c| c == n)).collect(),
        None => CHECK_NAMES.to_vec(),
    };
    let mut outcomes = Vec::new();
    for name in selected {
        let o = match checks::run_check(name, &ctx) {
            Ok(o) => o,
            Err(e) => CheckOutcome {
                name: name.to_string(),
                passed: false,
                measured: BTreeMap::new(),
                detail: format!("error: {e}"),
                seconds: 0.0,
            },
        };
        outcomes.push(o);
    }
    let mut csv = String::from("check,status,detail\n");
    for o in &outcomes {
        csv.push_str(&format!("{},{},{}\n", o.name, if o.passed { "pass" } else { "fail" }, csv_field(&o.detail)));
    }
    let passed = outcomes.iter().all(|o| o.passed);
    let mut summary = BTreeMap::new();
    summary.insert("checks".into(), outcomes.len() as f64);
    summary.insert("failed".into(), outcomes.iter().filter(|o| !o.passed).count() as f64);
    Ok((outcomes, vec![("checks.csv".into(), csv)], summary, passed))
}

fn run_constants(config: &RunConfig) -> Result<ModeOutput> {
    let p = &config.params;
    let cert = select_parameters(p.eps0, p.m_star, p.dim)?;
    let mp = config.model_params()?;
    let crit = site_criteria_check(&SiteModel::quartic(mp), cert.centering_bound);
    let scale = config.tolerances.get("const_factor").copied().unwrap_or(1.0);
    let k = peierls_constants(&mp, crit.epsilon.min(0.999_999), scale)?;
    let rows: Vec<(&str, f64, &str)> = vec![
        ("a", cert.a, "certificate"),
        ("q0", cert.q_max, "certificate"),
        ("delta0", cert.delta_max, "certificate"),
        ("b", cert.b, "certificate"),
        ("window", cert.window, "certificate"),
        ("epsilon_measured", crit.epsilon, "one-site quadrature"),
        ("epsilon_bound", cert.eps_bound, "analytic"),
        ("positivity_margin", crit.positivity_margin, "one-site quadrature"),
        ("q", mp.q, "resolved"),
        ("delta", mp.delta, "resolved"),
        ("beta", k.beta, "closed form"),
        ("r", interaction_range(&mp) as f64, "closed form"),
        ("beta_tilde_gauss", k.beta_tilde_gauss, "unit-constant shape"),
        ("beta_tilde", k.beta_tilde, "unit-constant shape"),
        ("alpha", k.alpha, "unit-constant shape"),
        ("pair_bond", k.pair_bond, "closed form"),
        ("boundary_prefactor", k.boundary_prefactor, "closed form"),
    ];
    let mut csv = String::from("name,value,note\n");
    let mut summary = BTreeMap::new();
    for (n, v, note) in &rows {
        csv.push_str(&format!("{n},{},{note}\n", fmt(*v)));
        summary.insert(n.to_string(), *v);
    }
    let ok = crit.positivity_holds && k.all_positive;
    summary.insert("all_positive".into(), k.all_positive as u8 as f64);
    Ok((Vec::new(), vec![("constants.csv".into(), csv)], summary, ok))
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
struct RealizationRow {
    config_hash: String,
    index: usize,
    seed: u64,
    estimate: f64,
    stderr: f64,
    burn_in: usize,
    geweke_z: f64,
    mean_value: f64,
}

const PROGRESS: &str = "progress.jsonl";

fn read_progress(path: &Path, hash: &str) -> BTreeMap<usize, RealizationRow> {
    let Ok(text) = fs::read_to_string(path) else {
        return BTreeMap::new();
    };
    text.lines()
        .filter_map(|l| serde_json::from_str::<RealizationRow>(l).ok())
        .filter(|r| r.config_hash == hash)
        .map(|r| (r.index, r))
        .collect()
}

fn run_simulate(config: &RunConfig, out: &Path, hash: &str) -> Result<ModeOutput> {
    let mp = config.model_params()?;
    let extents = &config.volume.as_ref().expect("validated").extents;
    let lat = LatticeVolume::new(extents)?;
    let model = SiteModel::quartic(mp);
    let bc = BoundaryField::Constant(mp.m_star);
    let center: Vec<i32> = extents.iter().map(|&e| (e / 2) as i32).collect();
    let x0 = lat.index(&Site::new(&center)).expect("center in box");
    let s = &config.simulation;
    fs::create_dir_all(out)?;
    let progress_path = out.join(PROGRESS);
    let done = read_progress(&progress_path, hash);
    let progress = std::sync::Mutex::new(fs::OpenOptions::new().create(true).append(true).open(&progress_path)?);
    let rows: Vec<RealizationRow> = (0..config.seeds.realizations)
        .into_par_iter()
        .map(|i| -> Result<RealizationRow> {
            if let Some(r) = done.get(&i) {
                return Ok(r.clone());
            }
            let seed = config.seeds.base.wrapping_add(i as u64);
            let spec = DisorderSpec { delta: mp.delta, sigma2: s.sigma2.unwrap_or((mp.delta * mp.delta).max(1e-300)), seed, law: s.law };
            let eta = sample_disorder(&lat, &spec)?;
            let opts = OrderOptions {
                sweeps: s.sweeps,
                burn_in: s.burn_in,
                batches: s.batches,
                algorithm: s.algorithm,
                init: s.init,
                // Common thermal stream: realizations differ only through their disorder.
                seed: config.seeds.base.rotate_left(32) ^ 0x5eed,
            };
            let e = order_probability(&lat, &model, &eta, &bc, x0, OrderEvent::BelowHalf, &opts)?;
            let row = RealizationRow {
                config_hash: hash.to_string(),
                index: i,
                seed,
                estimate: e.estimate,
                stderr: e.stderr,
                burn_in: e.burn_in_used,
                geweke_z: e.geweke_z,
                mean_value: e.mean_value,
            };
            let mut f = progress.lock().expect("progress lock");
            writeln!(f, "{}", serde_json::to_string(&row)?)?;
            Ok(row)
        })
        .collect::<Result<_>>()?;
    drop(progress);
    let mut csv = String::from("realization,seed,estimate,stderr,burn_in,geweke_z,mean_value\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.index,
            r.seed,
            fmt(r.estimate),
            fmt(r.stderr),
            r.burn_in,
            fmt(r.geweke_z),
            fmt(r.mean_value)
        ));
    }
    let n = rows.len() as f64;
    let mean = rows.iter().map(|r| r.estimate).sum::<f64>() / n;
    let var = if rows.len() > 1 { rows.iter().map(|r| (r.estimate - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    let mut summary = BTreeMap::new();
    summary.insert("realizations".into(), n);
    summary.insert("mean_estimate".into(), mean);
    summary.insert("stderr_estimate".into(), (var / n).sqrt());
    summary.insert("std_across_realizations".into(), var.sqrt());
    let sum_csv = format!(
        "realizations,mean_estimate,stderr_estimate,std_across_realizations\n{},{},{},{}\n",
        rows.len(),
        fmt(mean),
        fmt((var / n).sqrt()),
        fmt(var.sqrt())
    );
    let _ = fs::remove_file(&progress_path);
    Ok((Vec::new(), vec![("realizations.csv".into(), csv), ("summary.csv".into(), sum_csv)], summary, true))
}

fn run_extract(config: &RunConfig) -> Result<ModeOutput> {
    let mp = config.model_params()?;
    let extents = &config.volume.as_ref().expect("validated").extents;
    let lat = LatticeVolume::new(extents)?;
    let model = SiteModel::quartic(mp);
    let spec = DisorderSpec { delta: mp.delta, sigma2: (mp.delta * mp.delta).max(1e-300), seed: config.seeds.base, law: DisorderLaw::TruncatedGaussian };
    let eta = sample_disorder(&lat, &spec)?;
    let bc = BoundaryField::Constant(mp.m_star);
    let vol = SmallVolume::new(&lat, &model, &eta, &bc)?;
    let mb = many_body_extract(&vol, QuadOptions::default())?;
    let mut csv = String::from("set,size,walsh,vacuum\n");
    for ((set, j), (_, v)) in mb.walsh.iter().zip(&mb.vacuum) {
        let label: Vec<String> = set.iter().map(|x| x.to_string()).collect();
        csv.push_str(&format!("{},{},{},{}\n", csv_field(&label.join(" ")), set.len(), fmt(*j), fmt(*v)));
    }
    let mut summary = BTreeMap::new();
    for (k, m) in mb.max_by_size.iter().enumerate() {
        summary.insert(format!("max_walsh_size_{k}"), *m);
    }
    if let Some(d) = mb.fitted_decay {
        summary.insert("fitted_decay".into(), d);
    }
    Ok((Vec::new(), vec![("many_body.csv".into(), csv)], summary, true))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_json(r#"{"mode": "verify", "bogus": 1}"#).is_err());
        assert!(RunConfig::from_json(r#"{"mode": "verify", "params": {"m_star": 10, "dim": 1, "x": 2}}"#).is_err());
    }

    #[test]
    fn simulate_needs_volume() {
        let c = RunConfig::for_mode(Mode::Simulate);
        assert!(c.diagnostics().iter().any(|d| d.starts_with("volume")));
    }

    #[test]
    fn round_trip() {
        let mut c = RunConfig::for_mode(Mode::Extract);
        c.volume = Some(VolumeSpec { extents: vec![2, 1, 1] });
        c.tolerances.insert("beta".into(), 1e-4);
        let back = RunConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn hash_is_git_style() {
        // `git hash-object` framing with sha256 over an empty blob.
        assert_eq!(content_hash(b""), "473a0f4c3be8a93681a267e3b1e9a7dcda1185436fe141f7749120a303721813");
    }

    #[test]
    fn resumes_from_progress() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = RunConfig::for_mode(Mode::Simulate);
        c.params = ParamsInput { eps0: 0.1, m_star: 20.0, dim: 1, q: None, delta: None };
        c.volume = Some(VolumeSpec { extents: vec![4] });
        c.seeds = SeedSpec { base: 3, realizations: 2 };
        c.simulation.sweeps = 20;
        c.simulation.burn_in = 10;
        c.simulation.batches = 2;
        let fresh = run(&c, &dir.path().join("a")).unwrap();
        let out = dir.path().join("b");
        fs::create_dir_all(&out).unwrap();
        let row = RealizationRow {
            config_hash: c.hash(),
            index: 1,
            seed: 4,
            estimate: 0.625,
            stderr: 0.0,
            burn_in: 10,
            geweke_z: 0.0,
            mean_value: 1.0,
        };
        fs::write(out.join(PROGRESS), serde_json::to_string(&row).unwrap() + "\n").unwrap();
        let resumed = run(&c, &out).unwrap();
        let csv = fs::read_to_string(out.join("realizations.csv")).unwrap();
        assert!(csv.lines().nth(2).unwrap().starts_with("1,4,6.25"));
        assert_ne!(fresh.summary["mean_estimate"], resumed.summary["mean_estimate"]);
        assert!(!out.join(PROGRESS).exists());
    }
}
