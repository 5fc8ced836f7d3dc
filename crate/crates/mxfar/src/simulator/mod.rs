//! Reproducible panel generators for the toolkit's simulation designs and
//! Monte-Carlo studies.
//!
//! Every generator draws per-subject random effects and noise from separate
//! substreams of `(seed, subject)`, so a subject's series does not depend on
//! how many effect draws other generators would have made, and subjects can
//! be generated in parallel without changing the output.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::core::panel::Panel;
use crate::error::{Error, Result};
use crate::rng::{substream, tag};

/// Absolute bound on generated values; exceeding it fails generation.
pub const BOUND: f64 = 1e6;
pub const DEFAULT_BURN_IN: usize = 200;

/// A coefficient curve tabulated on knots, evaluated by linear interpolation.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TabulatedCurve {
    pub knots: Vec<f64>,
    pub values: Vec<f64>,
}

impl TabulatedCurve {
    pub fn constant(v: f64, lo: f64, hi: f64) -> Self {
        TabulatedCurve {
            knots: vec![lo, hi],
            values: vec![v, v],
        }
    }

    pub fn eval(&self, u: f64) -> Result<f64> {
        let n = self.knots.len();
        let (lo, hi) = (self.knots[0], self.knots[n - 1]);
        if u < lo || u > hi {
            return Err(Error::Extrapolation { u, lo, hi });
        }
        let idx = match self.knots.binary_search_by(|k| k.partial_cmp(&u).unwrap()) {
            Ok(i) => return Ok(self.values[i]),
            Err(i) => i,
        };
        let (k0, k1) = (self.knots[idx - 1], self.knots[idx]);
        let frac = (u - k0) / (k1 - k0);
        Ok(self.values[idx - 1] + frac * (self.values[idx] - self.values[idx - 1]))
    }

    fn validate(&self) -> Result<()> {
        if self.knots.len() < 2 || self.knots.len() != self.values.len() {
            return Err(Error::InvalidGenerator(
                "tabulated curve needs at least two (knot, value) pairs".into(),
            ));
        }
        if !self.knots.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidGenerator(
                "tabulated curve knots must be strictly increasing".into(),
            ));
        }
        Ok(())
    }
}

/// What to generate. Coefficient layouts are `[lag][target j][source g]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorKind {
    /// Bivariate design with exponential-decay cross coefficients driven by
    /// channel 2 at lag 2; random effects enter the decay rates.
    Expar {
        n_subjects: usize,
        noise_sd: f64,
        random_effect_sd: f64,
    },
    /// Two groups with sigmoidal first-column coefficients; the second
    /// group's mean curves are the exact negatives of the first group's.
    /// Additive per-subject random effects on the sigmoidal entries.
    SigmoidTwoGroup {
        n_group1: usize,
        n_group2: usize,
        noise_sd: f64,
        random_effect_sd: f64,
    },
    /// Constant-coefficient VAR(p); requires companion spectral radius < 1.
    LinearVar {
        n_subjects: usize,
        coeffs: Vec<Vec<Vec<f64>>>,
        noise_sd: f64,
        random_effect_sd: f64,
    },
    /// Threshold AR: coefficients switch between two matrices at a
    /// threshold of the reference value.
    Tar {
        n_subjects: usize,
        low: Vec<Vec<Vec<f64>>>,
        high: Vec<Vec<Vec<f64>>>,
        threshold: f64,
        ref_channel: usize,
        ref_lag: usize,
        noise_sd: f64,
        random_effect_sd: f64,
    },
    /// Arbitrary tabulated coefficient curves, shared by all subjects.
    Custom {
        n_subjects: usize,
        k: usize,
        p: usize,
        /// `curves[j][lag * k + g]`.
        curves: Vec<Vec<TabulatedCurve>>,
        ref_channel: usize,
        ref_lag: usize,
        noise_sd: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratorSpec {
    #[serde(flatten)]
    pub kind: GeneratorKind,
    pub n_time: usize,
    pub seed: u64,
    pub burn_in: usize,
}

impl GeneratorSpec {
    pub fn expar(n_subjects: usize, n_time: usize, seed: u64) -> Self {
        GeneratorSpec {
            kind: GeneratorKind::Expar {
                n_subjects,
                noise_sd: 1.0,
                random_effect_sd: 0.03,
            },
            n_time,
            seed,
            burn_in: DEFAULT_BURN_IN,
        }
    }

    pub fn sigmoid_two_group(n_per_group: usize, n_time: usize, seed: u64) -> Self {
        GeneratorSpec {
            kind: GeneratorKind::SigmoidTwoGroup {
                n_group1: n_per_group,
                n_group2: n_per_group,
                noise_sd: 1.0,
                random_effect_sd: 0.8,
            },
            n_time,
            seed,
            burn_in: DEFAULT_BURN_IN,
        }
    }

    pub fn linear_var(
        n_subjects: usize,
        coeffs: Vec<Vec<Vec<f64>>>,
        n_time: usize,
        seed: u64,
    ) -> Self {
        GeneratorSpec {
            kind: GeneratorKind::LinearVar {
                n_subjects,
                coeffs,
                noise_sd: 1.0,
                random_effect_sd: 0.0,
            },
            n_time,
            seed,
            burn_in: DEFAULT_BURN_IN,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_time == 0 {
            return Err(Error::InvalidGenerator("n_time must be positive".into()));
        }
        match &self.kind {
            GeneratorKind::Expar { n_subjects, .. }
            | GeneratorKind::LinearVar { n_subjects, .. }
            | GeneratorKind::Tar { n_subjects, .. }
            | GeneratorKind::Custom { n_subjects, .. } => {
                if *n_subjects == 0 {
                    return Err(Error::InvalidGenerator("need at least one subject".into()));
                }
            }
            GeneratorKind::SigmoidTwoGroup {
                n_group1, n_group2, ..
            } => {
                if *n_group1 == 0 || *n_group2 == 0 {
                    return Err(Error::InvalidGenerator(
                        "both groups need at least one subject".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// The realized data-generating process: per-subject coefficient functions
/// with the drawn random effects, plus the population-level curves.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrueModel {
    pub k: usize,
    pub p: usize,
    /// Reference source: 0-based channel and lag.
    pub ref_channel: usize,
    pub ref_lag: usize,
    pub groups: Vec<usize>,
    pub model: TrueCoefficients,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum TrueCoefficients {
    Expar {
        /// Per-subject decay-rate effects `(lambda_1, lambda_2)`.
        lam: Vec<(f64, f64)>,
    },
    Sigmoid {
        /// Per-subject additive effects on the two sigmoidal entries.
        lam: Vec<(f64, f64)>,
    },
    Constant {
        base: Vec<Vec<Vec<f64>>>,
        /// Per-subject additive coefficient perturbations, same layout.
        effects: Vec<Vec<Vec<Vec<f64>>>>,
    },
    Tar {
        low: Vec<Vec<Vec<f64>>>,
        high: Vec<Vec<Vec<f64>>>,
        threshold: f64,
        effects: Vec<Vec<Vec<Vec<f64>>>>,
    },
    Custom {
        curves: Vec<Vec<TabulatedCurve>>,
    },
}

fn sigmoid(x: f64) -> f64 {
    let e = (x.min(500.0)).exp();
    e / (1.0 + e)
}

impl TrueModel {
    /// Realized coefficient `f^(n)_{j,g:lag+1}(u)` for subject `n`.
    pub fn coeff(&self, n: usize, j: usize, g: usize, lag: usize, u: f64) -> Result<f64> {
        match &self.model {
            TrueCoefficients::Expar { lam } => {
                let (l1, l2) = lam[n];
                Ok(expar_coeff(j, g, u, l1, l2))
            }
            TrueCoefficients::Sigmoid { lam } => {
                let (l1, l2) = lam[n];
                let sign = if self.groups[n] == 0 { 1.0 } else { -1.0 };
                Ok(sigmoid_coeff(j, g, u, sign, l1, l2))
            }
            TrueCoefficients::Constant { base, effects } => {
                Ok(base[lag][j][g] + effects[n][lag][j][g])
            }
            TrueCoefficients::Tar {
                low,
                high,
                threshold,
                effects,
            } => {
                let m = if u <= *threshold { low } else { high };
                Ok(m[lag][j][g] + effects[n][lag][j][g])
            }
            TrueCoefficients::Custom { curves } => curves[j][lag * self.k + g].eval(u),
        }
    }

    /// Population coefficient for a group: random effects set to zero.
    pub fn population_coeff(
        &self,
        group: usize,
        j: usize,
        g: usize,
        lag: usize,
        u: f64,
    ) -> Result<f64> {
        match &self.model {
            TrueCoefficients::Expar { .. } => Ok(expar_coeff(j, g, u, 0.0, 0.0)),
            TrueCoefficients::Sigmoid { .. } => {
                let sign = if group == 0 { 1.0 } else { -1.0 };
                Ok(sigmoid_coeff(j, g, u, sign, 0.0, 0.0))
            }
            TrueCoefficients::Constant { base, .. } => Ok(base[lag][j][g]),
            TrueCoefficients::Tar {
                low,
                high,
                threshold,
                ..
            } => {
                let m = if u <= *threshold { low } else { high };
                Ok(m[lag][j][g])
            }
            TrueCoefficients::Custom { curves } => curves[j][lag * self.k + g].eval(u),
        }
    }

    /// Average of the realized subject curves within a group.
    pub fn group_mean_coeff(
        &self,
        group: usize,
        j: usize,
        g: usize,
        lag: usize,
        u: f64,
    ) -> Result<f64> {
        let members: Vec<usize> = (0..self.groups.len())
            .filter(|&n| self.groups[n] == group)
            .collect();
        let mut acc = 0.0;
        for &n in &members {
            acc += self.coeff(n, j, g, lag, u)?;
        }
        Ok(acc / members.len() as f64)
    }
}

fn expar_coeff(j: usize, g: usize, u: f64, l1: f64, l2: f64) -> f64 {
    match (j, g) {
        (0, 0) => -0.3,
        (0, 1) => 0.6 * (-(0.30 + l1) * u * u).exp(),
        (1, 0) => -0.2,
        (1, 1) => 0.6 * (-(0.15 + l2) * u * u).exp(),
        _ => unreachable!("EXPAR design is bivariate"),
    }
}

fn sigmoid_coeff(j: usize, g: usize, u: f64, sign: f64, l1: f64, l2: f64) -> f64 {
    match (j, g) {
        (0, 0) => sign * (0.8 * sigmoid(5.0 * u) - 0.3) + l1,
        (0, 1) => sign * 0.2,
        (1, 0) => sign * (-0.9 * sigmoid(5.0 * u) + 0.5) + l2,
        (1, 1) => sign * 0.3,
        _ => unreachable!("sigmoid design is bivariate"),
    }
}

/// Companion-matrix spectral radius of a VAR coefficient set.
pub fn companion_spectral_radius(coeffs: &[Vec<Vec<f64>>]) -> f64 {
    let p = coeffs.len();
    let k = coeffs[0].len();
    let dim = k * p;
    let mut companion = nalgebra::DMatrix::<f64>::zeros(dim, dim);
    for (lag, a) in coeffs.iter().enumerate() {
        for j in 0..k {
            for g in 0..k {
                companion[(j, lag * k + g)] = a[j][g];
            }
        }
    }
    for i in k..dim {
        companion[(i, i - k)] = 1.0;
    }
    companion
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

struct GenLayout {
    k: usize,
    p: usize,
    ref_channel: usize,
    ref_lag: usize,
    noise_sd: f64,
}

/// Recursive generation for one subject. `coeff` gets `(j, g, lag, u)`.
fn generate_subject(
    layout: &GenLayout,
    spec: &GeneratorSpec,
    subject: usize,
    coeff: &dyn Fn(usize, usize, usize, f64) -> Result<f64>,
) -> Result<Vec<Vec<f64>>> {
    let total = spec.burn_in + spec.n_time;
    let start = layout.p.max(layout.ref_lag);
    let k = layout.k;
    let mut y = vec![vec![0.0f64; total]; k];
    let mut noise = substream(spec.seed, tag::SIMULATE_NOISE, subject as u64);
    for t in start..total {
        let u = y[layout.ref_channel][t - layout.ref_lag];
        for j in 0..k {
            let mut acc = 0.0;
            for lag in 0..layout.p {
                for g in 0..k {
                    acc += coeff(j, g, lag, u)? * y[g][t - lag - 1];
                }
            }
            let z: f64 = noise.sample(StandardNormal);
            let v = acc + layout.noise_sd * z;
            if !v.is_finite() || v.abs() > BOUND {
                return Err(Error::Unbounded {
                    subject,
                    t,
                    bound: BOUND,
                });
            }
            y[j][t] = v;
        }
    }
    for series in &mut y {
        series.drain(0..spec.burn_in);
    }
    Ok(y)
}

fn subject_ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("s{:03}", i + 1)).collect()
}

fn draw_effect_matrices(rng: &mut impl Rng, p: usize, k: usize, sd: f64) -> Vec<Vec<Vec<f64>>> {
    (0..p)
        .map(|_| {
            (0..k)
                .map(|_| {
                    (0..k)
                        .map(|_| {
                            let z: f64 = rng.sample(StandardNormal);
                            sd * z
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

/// Generate a panel and the realized true model from a spec.
pub fn simulate(spec: &GeneratorSpec) -> Result<(Panel, TrueModel)> {
    spec.validate()?;
    match &spec.kind {
        GeneratorKind::Expar {
            n_subjects,
            noise_sd,
            random_effect_sd,
        } => {
            let layout = GenLayout {
                k: 2,
                p: 1,
                ref_channel: 1,
                ref_lag: 2,
                noise_sd: *noise_sd,
            };
            let mut lam = Vec::with_capacity(*n_subjects);
            for n in 0..*n_subjects {
                let mut rng = substream(spec.seed, tag::SIMULATE_EFFECTS, n as u64);
                let z1: f64 = rng.sample(StandardNormal);
                let z2: f64 = rng.sample(StandardNormal);
                lam.push((random_effect_sd * z1, random_effect_sd * z2));
            }
            let mut series = Vec::with_capacity(*n_subjects);
            for n in 0..*n_subjects {
                let (l1, l2) = lam[n];
                let coeff =
                    move |j: usize, g: usize, _lag: usize, u: f64| Ok(expar_coeff(j, g, u, l1, l2));
                series.push(generate_subject(&layout, spec, n, &coeff)?);
            }
            let groups = vec![0; *n_subjects];
            let panel = Panel::from_series(series, groups.clone(), subject_ids(*n_subjects))?;
            let truth = TrueModel {
                k: 2,
                p: 1,
                ref_channel: 1,
                ref_lag: 2,
                groups,
                model: TrueCoefficients::Expar { lam },
            };
            Ok((panel, truth))
        }
        GeneratorKind::SigmoidTwoGroup {
            n_group1,
            n_group2,
            noise_sd,
            random_effect_sd,
        } => {
            let layout = GenLayout {
                k: 2,
                p: 1,
                ref_channel: 1,
                ref_lag: 2,
                noise_sd: *noise_sd,
            };
            let n_total = n_group1 + n_group2;
            let groups: Vec<usize> = (0..n_total)
                .map(|n| if n < *n_group1 { 0 } else { 1 })
                .collect();
            let mut lam = Vec::with_capacity(n_total);
            for n in 0..n_total {
                let mut rng = substream(spec.seed, tag::SIMULATE_EFFECTS, n as u64);
                let z1: f64 = rng.sample(StandardNormal);
                let z2: f64 = rng.sample(StandardNormal);
                lam.push((random_effect_sd * z1, random_effect_sd * z2));
            }
            let mut series = Vec::with_capacity(n_total);
            for n in 0..n_total {
                let (l1, l2) = lam[n];
                let sign = if groups[n] == 0 { 1.0 } else { -1.0 };
                let coeff = move |j: usize, g: usize, _lag: usize, u: f64| {
                    Ok(sigmoid_coeff(j, g, u, sign, l1, l2))
                };
                series.push(generate_subject(&layout, spec, n, &coeff)?);
            }
            let panel = Panel::from_series(series, groups.clone(), subject_ids(n_total))?;
            let truth = TrueModel {
                k: 2,
                p: 1,
                ref_channel: 1,
                ref_lag: 2,
                groups,
                model: TrueCoefficients::Sigmoid { lam },
            };
            Ok((panel, truth))
        }
        GeneratorKind::LinearVar {
            n_subjects,
            coeffs,
            noise_sd,
            random_effect_sd,
        } => {
            let rho = companion_spectral_radius(coeffs);
            if rho >= 1.0 {
                return Err(Error::UnstableGenerator { rho });
            }
            let p = coeffs.len();
            let k = coeffs[0].len();
            let mut effects = Vec::with_capacity(*n_subjects);
            for n in 0..*n_subjects {
                let mut rng = substream(spec.seed, tag::SIMULATE_EFFECTS, n as u64);
                effects.push(draw_effect_matrices(&mut rng, p, k, *random_effect_sd));
            }
            let layout = GenLayout {
                k,
                p,
                // Constant coefficients: the reference never enters; use
                // channel 0 at lag 1 as a harmless placeholder.
                ref_channel: 0,
                ref_lag: 1,
                noise_sd: *noise_sd,
            };
            let mut series = Vec::with_capacity(*n_subjects);
            for n in 0..*n_subjects {
                let base = coeffs.clone();
                let eff = effects[n].clone();
                let coeff = move |j: usize, g: usize, lag: usize, _u: f64| {
                    Ok(base[lag][j][g] + eff[lag][j][g])
                };
                series.push(generate_subject(&layout, spec, n, &coeff)?);
            }
            let groups = vec![0; *n_subjects];
            let panel = Panel::from_series(series, groups.clone(), subject_ids(*n_subjects))?;
            let truth = TrueModel {
                k,
                p,
                ref_channel: 0,
                ref_lag: 1,
                groups,
                model: TrueCoefficients::Constant {
                    base: coeffs.clone(),
                    effects,
                },
            };
            Ok((panel, truth))
        }
        GeneratorKind::Tar {
            n_subjects,
            low,
            high,
            threshold,
            ref_channel,
            ref_lag,
            noise_sd,
            random_effect_sd,
        } => {
            let p = low.len();
            let k = low[0].len();
            if high.len() != p || high[0].len() != k {
                return Err(Error::InvalidGenerator(
                    "TAR regime matrices must share dimensions".into(),
                ));
            }
            if *ref_channel >= k || *ref_lag == 0 {
                return Err(Error::InvalidGenerator(
                    "TAR reference must be an existing channel at lag >= 1".into(),
                ));
            }
            let mut effects = Vec::with_capacity(*n_subjects);
            for n in 0..*n_subjects {
                let mut rng = substream(spec.seed, tag::SIMULATE_EFFECTS, n as u64);
                effects.push(draw_effect_matrices(&mut rng, p, k, *random_effect_sd));
            }
            let layout = GenLayout {
                k,
                p,
                ref_channel: *ref_channel,
                ref_lag: *ref_lag,
                noise_sd: *noise_sd,
            };
            let mut series = Vec::with_capacity(*n_subjects);
            for n in 0..*n_subjects {
                let (lo, hi, thr) = (low.clone(), high.clone(), *threshold);
                let eff = effects[n].clone();
                let coeff = move |j: usize, g: usize, lag: usize, u: f64| {
                    let m = if u <= thr { &lo } else { &hi };
                    Ok(m[lag][j][g] + eff[lag][j][g])
                };
                series.push(generate_subject(&layout, spec, n, &coeff)?);
            }
            let groups = vec![0; *n_subjects];
            let panel = Panel::from_series(series, groups.clone(), subject_ids(*n_subjects))?;
            let truth = TrueModel {
                k,
                p,
                ref_channel: *ref_channel,
                ref_lag: *ref_lag,
                groups,
                model: TrueCoefficients::Tar {
                    low: low.clone(),
                    high: high.clone(),
                    threshold: *threshold,
                    effects,
                },
            };
            Ok((panel, truth))
        }
        GeneratorKind::Custom {
            n_subjects,
            k,
            p,
            curves,
            ref_channel,
            ref_lag,
            noise_sd,
        } => {
            if curves.len() != *k || curves.iter().any(|row| row.len() != k * p) {
                return Err(Error::InvalidGenerator(format!(
                    "custom curves must be a {k} x {} table",
                    k * p
                )));
            }
            for row in curves {
                for c in row {
                    c.validate()?;
                }
            }
            if *ref_channel >= *k || *ref_lag == 0 {
                return Err(Error::InvalidGenerator(
                    "custom reference must be an existing channel at lag >= 1".into(),
                ));
            }
            // Keep the effect substream alive even though this generator has
            // no random effects, so noise draws line up with the other kinds.
            let layout = GenLayout {
                k: *k,
                p: *p,
                ref_channel: *ref_channel,
                ref_lag: *ref_lag,
                noise_sd: *noise_sd,
            };
            let mut series = Vec::with_capacity(*n_subjects);
            for n in 0..*n_subjects {
                let curves = curves.clone();
                let kk = *k;
                let coeff =
                    move |j: usize, g: usize, lag: usize, u: f64| curves[j][lag * kk + g].eval(u);
                series.push(generate_subject(&layout, spec, n, &coeff)?);
            }
            let groups = vec![0; *n_subjects];
            let panel = Panel::from_series(series, groups.clone(), subject_ids(*n_subjects))?;
            let truth = TrueModel {
                k: *k,
                p: *p,
                ref_channel: *ref_channel,
                ref_lag: *ref_lag,
                groups,
                model: TrueCoefficients::Custom {
                    curves: curves.clone(),
                },
            };
            Ok((panel, truth))
        }
    }
}

/// Kind-checked wrappers mirroring the per-design entry points.
pub fn simulate_expar(spec: &GeneratorSpec) -> Result<(Panel, TrueModel)> {
    match spec.kind {
        GeneratorKind::Expar { .. } => simulate(spec),
        _ => Err(Error::InvalidGenerator("spec kind is not expar".into())),
    }
}

pub fn simulate_sigmoid_groups(spec: &GeneratorSpec) -> Result<(Panel, TrueModel)> {
    match spec.kind {
        GeneratorKind::SigmoidTwoGroup { .. } => simulate(spec),
        _ => Err(Error::InvalidGenerator("spec kind is not sigmoid".into())),
    }
}

pub fn simulate_linear_var(spec: &GeneratorSpec) -> Result<(Panel, TrueModel)> {
    match spec.kind {
        GeneratorKind::LinearVar { .. } => simulate(spec),
        _ => Err(Error::InvalidGenerator(
            "spec kind is not linear_var".into(),
        )),
    }
}

pub fn simulate_tar(spec: &GeneratorSpec) -> Result<(Panel, TrueModel)> {
    match spec.kind {
        GeneratorKind::Tar { .. } => simulate(spec),
        _ => Err(Error::InvalidGenerator("spec kind is not tar".into())),
    }
}

pub fn simulate_custom(spec: &GeneratorSpec) -> Result<(Panel, TrueModel)> {
    match spec.kind {
        GeneratorKind::Custom { .. } => simulate(spec),
        _ => Err(Error::InvalidGenerator("spec kind is not custom".into())),
    }
}
