//! Chessboard (coset) quantization at the relay.
//!
//! The relay scales its observation by a complex factor `d`, rounds to the
//! nearest point of the integer lattice in the complex plane and forwards the
//! coset of that point with respect to a sublattice `Lambda` of index `2^R0`.
//! Everything here works in the normalized `z = y / d` plane, where quantizer
//! cells are unit squares centered on integer points.

use std::collections::HashMap;
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
use std::sync::{Mutex, OnceLock};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::LinkConfig;
use crate::error::{Error, Result};
use crate::modem::Constellation;
use crate::numeric::{entropy_bits, golden_section_max};
use crate::rng::{complex_gaussian, stream, Domain};

/// Largest number of cosets supported (`R0 = 2`).
pub const MAX_LABELS: usize = 4;

/// Sublattice partition of the integer lattice with `2^R0` cosets.
///
/// `generator` holds the basis of `Lambda` as columns. The label of `(x, y)`
/// is the linear functional `(x + c*y) mod 2^R0`, which vanishes exactly on
/// `Lambda` (`c = 1` for R0 = 1, `c = 2` for R0 = 2).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CosetPartition {
    r0: u32,
    generator: [[i64; 2]; 2],
    y_coef: i64,
}

impl CosetPartition {
    pub fn new(r0: u32) -> Result<Self> {
        match r0 {
            // columns (1,1), (0,2): the two-coloring {x + y even}
            1 => Ok(Self {
                r0,
                generator: [[1, 0], [1, 2]],
                y_coef: 1,
            }),
            // columns (2,1), (0,2)
            2 => Ok(Self {
                r0,
                generator: [[2, 0], [1, 2]],
                y_coef: 2,
            }),
            _ => Err(Error::UnsupportedRelayRate(r0, "1, 2")),
        }
    }

    pub fn r0(&self) -> u32 {
        self.r0
    }

    /// Number of cosets, `2^R0`.
    pub fn labels(&self) -> usize {
        1 << self.r0
    }

    /// Generator matrix, rows as stored (`generator[row][col]`).
    pub fn generator(&self) -> [[i64; 2]; 2] {
        self.generator
    }

    pub fn determinant(&self) -> i64 {
        let g = self.generator;
        g[0][0] * g[1][1] - g[0][1] * g[1][0]
    }

    /// Lattice point `G z`.
    pub fn lattice_point(&self, z: [i64; 2]) -> [i64; 2] {
        let g = self.generator;
        [
            g[0][0] * z[0] + g[0][1] * z[1],
            g[1][0] * z[0] + g[1][1] * z[1],
        ]
    }

    /// Coset label of an integer point.
    #[inline]
    pub fn label(&self, x: i64, y: i64) -> usize {
        (x + self.y_coef * y).rem_euclid(self.labels() as i64) as usize
    }

    #[inline]
    fn label_of_residues(&self, rx: usize, ry: usize) -> usize {
        (rx + self.y_coef as usize * ry) % self.labels()
    }
}

/// Complex relay scaling factor, never zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelayScale(Complex64);

impl RelayScale {
    pub fn new(d: Complex64) -> Result<Self> {
        if !(d.norm() > 0.0 && d.re.is_finite() && d.im.is_finite()) {
            return Err(Error::param("d", format!("must be finite and nonzero, got {d}")));
        }
        Ok(Self(d))
    }

    pub fn real(d: f64) -> Result<Self> {
        Self::new(Complex64::new(d, 0.0))
    }

    pub fn value(&self) -> Complex64 {
        self.0
    }
}

/// Nearest integer point of `yr / d` (ties away from zero).
pub fn lattice_point(yr: Complex64, d: RelayScale) -> (i64, i64) {
    let z = yr / d.0;
    (z.re.round() as i64, z.im.round() as i64)
}

/// Relay symbol `B[Q(yr / d)]`.
pub fn quantize(yr: Complex64, d: RelayScale, cp: &CosetPartition) -> usize {
    let (x, y) = lattice_point(yr, d);
    cp.label(x, y)
}

/// Probability of each coset label when `Y ~ CN(mean, var)` is quantized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelMasses {
    mass: [f64; MAX_LABELS],
    len: usize,
}

impl LabelMasses {
    pub fn as_slice(&self) -> &[f64] {
        &self.mass[..self.len]
    }

    pub fn get(&self, label: usize) -> f64 {
        self.mass[label]
    }

    pub fn entropy_bits(&self) -> f64 {
        entropy_bits(self.as_slice())
    }
}

/// Below this per-axis std (relative to the residue period) the residue law is
/// summed cell by cell; above it the Fourier series converges in a few terms.
const FOURIER_SWITCH: f64 = 0.125;
/// Cells further than this many standard deviations carry < 1e-19 mass.
const TAIL_SIGMAS: f64 = 9.0;

/// `(cos, sin)` of `2 pi k / m` for the supported periods, exact.
#[inline]
fn root_of_unity(k: usize, m: usize) -> (f64, f64) {
    match (m, k % m) {
        (_, 0) => (1.0, 0.0),
        (2, _) => (-1.0, 0.0),
        (4, 1) => (0.0, 1.0),
        (4, 2) => (-1.0, 0.0),
        (4, 3) => (0.0, -1.0),
        _ => {
            let t = 2.0 * PI * (k % m) as f64 / m as f64;
            (t.cos(), t.sin())
        }
    }
}

/// `P(round(Z) = r mod m)` for `Z ~ N(mu, s^2)`, `r = 0..m`.
fn axis_residues(mu: f64, s: f64, m: usize) -> [f64; MAX_LABELS] {
    let mut out = [0.0; MAX_LABELS];
    let mf = m as f64;
    if s == 0.0 {
        out[(mu.round() as i64).rem_euclid(m as i64) as usize] = 1.0;
        return out;
    }
    if s >= FOURIER_SWITCH * mf {
        // P(r) = (1/m) [1 + 2 sum_j sinc(pi j/m) exp(-2 pi^2 s^2 j^2/m^2) cos(2 pi j (mu - r)/m)]
        let ratio = s / mf;
        let alpha = 2.0 * PI * PI * ratio * ratio;
        let terms = ((45.0 / alpha).sqrt().ceil() as usize).max(1);
        let theta = 2.0 * PI * (mu.rem_euclid(mf)) / mf;
        let step = Complex64::new(theta.cos(), theta.sin());
        let mut phase = Complex64::new(1.0, 0.0);
        // exp(-alpha j^2) by the recursion q^{(j+1)^2} = q^{j^2} q^{2j+1}
        let q = (-alpha).exp();
        let q2 = q * q;
        let mut damp = 1.0;
        let mut incr = q;
        let mut acc = [0.0; MAX_LABELS];
        for j in 1..=terms {
            phase *= step;
            damp *= incr;
            incr *= q2;
            // sin(pi j / m) = Im of the (2m)-th root of unity to the power j
            let x = PI * j as f64 / mf;
            let sin_x = root_of_unity(j, 2 * m).1;
            if sin_x == 0.0 {
                continue;
            }
            let w = sin_x / x * damp;
            // cos(j theta - 2 pi j r / m) = Re(phase * e^{-2 pi i j r / m})
            for (r, a) in acc.iter_mut().enumerate().take(m) {
                let (c, sn) = root_of_unity(j * r, m);
                *a += w * (phase.re * c + phase.im * sn);
            }
        }
        for r in 0..m {
            out[r] = ((1.0 + 2.0 * acc[r]) / mf).max(0.0);
        }
        return out;
    }
    // one tail-accurate CDF evaluation per cell boundary: for boundary t keep
    // Phi(t) when t < 0 and 1 - Phi(t) otherwise
    const INV_SQRT2: f64 = std::f64::consts::FRAC_1_SQRT_2;
    let tail = |t: f64| 0.5 * libm::erfc(t.abs() * INV_SQRT2);
    let lo = ((mu - TAIL_SIGMAS * s) - 0.5).ceil() as i64;
    let hi = ((mu + TAIL_SIGMAS * s) + 0.5).floor() as i64;
    let mut ta = (lo as f64 - 0.5 - mu) / s;
    let mut qa = tail(ta);
    for k in lo..=hi {
        let tb = (k as f64 + 0.5 - mu) / s;
        let qb = tail(tb);
        let p = if ta >= 0.0 {
            qa - qb
        } else if tb <= 0.0 {
            qb - qa
        } else {
            1.0 - qa - qb
        };
        out[k.rem_euclid(m as i64) as usize] += p;
        ta = tb;
        qa = qb;
    }
    out
}

/// Label masses of `Y ~ CN(mean, var)` after scaling by `d` and quantizing.
///
/// `var` is the total complex variance `E|Y - mean|^2`.
pub fn label_masses(mean: Complex64, var: f64, d: RelayScale, cp: &CosetPartition) -> LabelMasses {
    debug_assert!(var >= 0.0);
    let z = mean / d.0;
    let s = (0.5 * var).sqrt() / d.0.norm();
    let m = cp.labels();
    let rx = axis_residues(z.re, s, m);
    let ry = axis_residues(z.im, s, m);
    let mut mass = [0.0; MAX_LABELS];
    for (i, &px) in rx.iter().enumerate().take(m) {
        if px == 0.0 {
            continue;
        }
        for (j, &py) in ry.iter().enumerate().take(m) {
            mass[cp.label_of_residues(i, j)] += px * py;
        }
    }
    let total: f64 = mass[..m].iter().sum();
    for v in &mut mass[..m] {
        *v /= total;
    }
    LabelMasses { mass, len: m }
}

/// `P(quantize(Y) = x_r)` for `Y ~ CN(mean, var)`.
pub fn cell_mass(
    x_r: usize,
    mean: Complex64,
    var: f64,
    d: RelayScale,
    cp: &CosetPartition,
) -> Result<f64> {
    if !(var >= 0.0) {
        return Err(Error::param("var", format!("must be nonnegative, got {var}")));
    }
    if x_r >= cp.labels() {
        return Err(Error::param("x_r", format!("label {x_r} outside 0..{}", cp.labels())));
    }
    Ok(label_masses(mean, var, d, cp).get(x_r))
}

/// Distribution of a user's input as seen by the relay.
#[derive(Debug, Clone, PartialEq)]
pub enum InputLaw {
    Discrete(Constellation),
    /// Unit-power circularly symmetric Gaussian.
    Gaussian,
}

impl InputLaw {
    pub fn qam(m: usize) -> Result<Self> {
        Ok(Self::Discrete(Constellation::new(m)?))
    }

    fn points(&self) -> &[Complex64] {
        match self {
            InputLaw::Discrete(c) => c.symbols(),
            InputLaw::Gaussian => gaussian_cloud(),
        }
    }
}

/// Fixed unit-power Gaussian point cloud, closed under multiplication by `i`
/// and under conjugation.
fn gaussian_cloud() -> &'static [Complex64] {
    static CLOUD: OnceLock<Vec<Complex64>> = OnceLock::new();
    CLOUD.get_or_init(|| symmetric_cloud(8, 0x5eed))
}

/// Larger cloud for the sum of two Gaussian inputs.
fn gaussian_cloud_dense() -> &'static [Complex64] {
    static CLOUD: OnceLock<Vec<Complex64>> = OnceLock::new();
    CLOUD.get_or_init(|| symmetric_cloud(32, 0xc10d))
}

fn symmetric_cloud(base: usize, seed: u64) -> Vec<Complex64> {
    let mut rng = stream(seed, Domain::Cloud, 0);
    let raw: Vec<Complex64> = (0..base).map(|_| complex_gaussian(&mut rng, 1.0)).collect();
    let power = raw.iter().map(|z| z.norm_sqr()).sum::<f64>() / base as f64;
    let mut pts = Vec::with_capacity(8 * base);
    for z in raw {
        let z = z / power.sqrt();
        let mut r = z;
        for _ in 0..4 {
            pts.push(r);
            pts.push(r.conj());
            r *= Complex64::i();
        }
    }
    pts
}

/// The pair of input laws the relay designs for.
#[derive(Debug, Clone, PartialEq)]
pub struct RelayInputs {
    pub user1: InputLaw,
    pub user2: InputLaw,
}

impl RelayInputs {
    pub fn discrete(c1: &Constellation, c2: &Constellation) -> Self {
        Self {
            user1: InputLaw::Discrete(c1.clone()),
            user2: InputLaw::Discrete(c2.clone()),
        }
    }

    /// Noise-free relay means `g1 sqrt(P1) x1 + g2 sqrt(P2) x2`, equally weighted.
    fn means(&self, a: Complex64, b: Complex64) -> Vec<Complex64> {
        if self.user1 == InputLaw::Gaussian && self.user2 == InputLaw::Gaussian {
            let sd = (a.norm_sqr() + b.norm_sqr()).sqrt();
            return gaussian_cloud_dense().iter().map(|&z| z * sd).collect();
        }
        let p1 = self.user1.points();
        let p2 = self.user2.points();
        let mut out = Vec::with_capacity(p1.len() * p2.len());
        for &x1 in p1 {
            for &x2 in p2 {
                out.push(a * x1 + b * x2);
            }
        }
        out
    }
}

/// `H(X_r | X1, X2)` and `H(X_r)` in bits for one relay design.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelayEntropies {
    pub h_cond: f64,
    pub h_marg: f64,
}

fn entropies_from_means(means: &[Complex64], n0: f64, d: RelayScale, cp: &CosetPartition) -> RelayEntropies {
    let m = cp.labels();
    let mut marg = [0.0; MAX_LABELS];
    let mut h_cond = 0.0;
    for &mu in means {
        let lm = label_masses(mu, n0, d, cp);
        h_cond += lm.entropy_bits();
        for (acc, &p) in marg.iter_mut().zip(lm.as_slice()) {
            *acc += p;
        }
    }
    let w = 1.0 / means.len() as f64;
    RelayEntropies {
        h_cond: h_cond * w,
        h_marg: entropy_bits(&marg[..m]),
    }
}

/// Exact `H(X_r|X1,X2)` and `H(X_r)` for uniform inputs (cloud average for
/// Gaussian inputs).
pub fn conditional_entropy_xr(
    g1: Complex64,
    g2: Complex64,
    lc: &LinkConfig,
    inputs: &RelayInputs,
    d: RelayScale,
    cp: &CosetPartition,
) -> RelayEntropies {
    let means = inputs.means(g1 * lc.p1.sqrt(), g2 * lc.p2.sqrt());
    entropies_from_means(&means, lc.n0, d, cp)
}

/// What the relay optimizes when choosing `d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    /// Minimize `H(X_r|X1,X2)` subject to `H(X_r) >= R0 - 0.1`.
    MinCondEntropy,
    /// Maximize `H(X_r) - H(X_r|X1,X2)`.
    MaxMi,
}

impl std::str::FromStr for Objective {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "min-cond-entropy" => Ok(Self::MinCondEntropy),
            "max-mi" => Ok(Self::MaxMi),
            other => Err(Error::config("objective", format!("unknown objective `{other}`"))),
        }
    }
}

/// Search grid and refinement settings for [`optimize_d`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DSearch {
    pub magnitudes: usize,
    pub phases: usize,
    pub min_factor: f64,
    pub max_factor: f64,
    pub refine_iterations: usize,
    /// Allowed shortfall of `H(X_r)` below `R0` for the constrained objective.
    pub marg_slack: f64,
}

impl Default for DSearch {
    fn default() -> Self {
        Self {
            magnitudes: 64,
            phases: 16,
            min_factor: 0.05,
            max_factor: 2.0,
            refine_iterations: 20,
            marg_slack: 0.1,
        }
    }
}

impl DSearch {
    fn magnitude(&self, i: usize, sigma_ref: f64) -> f64 {
        let (lo, hi) = (self.min_factor.ln(), self.max_factor.ln());
        sigma_ref * (lo + (hi - lo) * i as f64 / (self.magnitudes - 1) as f64).exp()
    }

    fn phase(&self, j: usize) -> f64 {
        FRAC_PI_2 * j as f64 / self.phases as f64
    }
}

/// Outcome of the relay scale search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DOptimum {
    pub d: RelayScale,
    pub entropies: RelayEntropies,
    /// Value of the objective that was actually optimized (higher is better).
    pub value: f64,
    /// Objective used; differs from the request when the constraint was infeasible.
    pub objective: Objective,
    pub fell_back: bool,
}

fn objective_value(obj: Objective, e: RelayEntropies, r0: u32, slack: f64) -> f64 {
    match obj {
        Objective::MaxMi => e.h_marg - e.h_cond,
        Objective::MinCondEntropy => {
            if e.h_marg >= r0 as f64 - slack {
                -e.h_cond
            } else {
                f64::NEG_INFINITY
            }
        }
    }
}

/// Chooses the relay scale `d` from the relay gains, powers and noise level only.
///
/// Grid search over log-spaced magnitudes in `[0.05, 2] * sigma_ref`
/// (`sigma_ref^2 = |g1|^2 P1 + |g2|^2 P2 + N0`) and phases in `[0, pi/2)`,
/// followed by one golden-section pass on log-magnitude and one on phase.
pub fn optimize_d(
    g1: Complex64,
    g2: Complex64,
    lc: &LinkConfig,
    inputs: &RelayInputs,
    cp: &CosetPartition,
    objective: Objective,
) -> DOptimum {
    optimize_d_with(g1, g2, lc, inputs, cp, objective, &DSearch::default())
}

pub fn optimize_d_with(
    g1: Complex64,
    g2: Complex64,
    lc: &LinkConfig,
    inputs: &RelayInputs,
    cp: &CosetPartition,
    objective: Objective,
    search: &DSearch,
) -> DOptimum {
    let means = inputs.means(g1 * lc.p1.sqrt(), g2 * lc.p2.sqrt());
    let sigma_ref = (g1.norm_sqr() * lc.p1 + g2.norm_sqr() * lc.p2 + lc.n0).sqrt();
    let eval = |mag: f64, ph: f64| {
        let d = RelayScale(Complex64::from_polar(mag, ph));
        entropies_from_means(&means, lc.n0, d, cp)
    };

    let mut grid = Vec::with_capacity(search.magnitudes * search.phases);
    for i in 0..search.magnitudes {
        let mag = search.magnitude(i, sigma_ref);
        for j in 0..search.phases {
            grid.push((i, j, eval(mag, search.phase(j))));
        }
    }

    let mut obj = objective;
    let mut fell_back = false;
    let score = |obj: Objective, e: RelayEntropies| objective_value(obj, e, cp.r0(), search.marg_slack);
    if grid.iter().all(|&(_, _, e)| score(obj, e) == f64::NEG_INFINITY) {
        obj = Objective::MaxMi;
        fell_back = true;
    }
    let mut best = grid[0];
    let mut best_val = score(obj, best.2);
    for &cand in &grid[1..] {
        let v = score(obj, cand.2);
        if v > best_val {
            best = cand;
            best_val = v;
        }
    }
    let (bi, bj, mut best_e) = best;
    let mut mag = search.magnitude(bi, sigma_ref);
    let mut ph = search.phase(bj);

    if search.refine_iterations > 0 {
        let lo = search.magnitude(bi.saturating_sub(1), sigma_ref).ln();
        let hi = search.magnitude((bi + 1).min(search.magnitudes - 1), sigma_ref).ln();
        let r = golden_section_max(|lm| score(obj, eval(lm.exp(), ph)), lo, hi, search.refine_iterations);
        if r.value > best_val {
            best_val = r.value;
            mag = r.x.exp();
            best_e = eval(mag, ph);
        }
        let dphi = FRAC_PI_2 / search.phases as f64;
        let r = golden_section_max(|p| score(obj, eval(mag, p)), ph - dphi, ph + dphi, search.refine_iterations);
        if r.value > best_val {
            best_val = r.value;
            ph = r.x;
            best_e = eval(mag, ph);
        }
    }

    DOptimum {
        d: RelayScale(Complex64::from_polar(mag, ph)),
        entropies: best_e,
        value: best_val,
        objective: obj,
        fell_back,
    }
}

/// Memoized relay scale choice for fast-fading simulations.
///
/// The optimum depends on `(g1 sqrt(P1), g2 sqrt(P2), N0)` only through
/// `|a|/sqrt(N0)`, `|b|/sqrt(N0)` and the relative phase of `b` to `a` modulo
/// `pi/2` folded to `[0, pi/4]`, where `a = g1 sqrt(P1)`, `b = g2 sqrt(P2)`:
/// a common rotation of `(a, b, d)` and conjugation leave the quantizer
/// statistics unchanged, and square QAM (and the Gaussian cloud) are closed
/// under multiplication by `i`. The cache bins these three coordinates and
/// solves the problem once at each bin center, so the chosen `d` is a pure
/// function of the bin and never depends on visiting order.
#[derive(Debug)]
pub struct DCache {
    inputs: RelayInputs,
    cp: CosetPartition,
    objective: Objective,
    search: DSearch,
    log_step: f64,
    phase_bins: usize,
    table: Mutex<HashMap<(i32, i32, u16), Complex64>>,
}

impl DCache {
    /// Default resolution: 0.1 in natural-log magnitude and 8 phase bins.
    pub fn new(inputs: RelayInputs, cp: CosetPartition, objective: Objective) -> Self {
        Self::with_resolution(inputs, cp, objective, 0.1, 8)
    }

    pub fn with_resolution(
        inputs: RelayInputs,
        cp: CosetPartition,
        objective: Objective,
        log_step: f64,
        phase_bins: usize,
    ) -> Self {
        Self {
            inputs,
            cp,
            objective,
            search: DSearch::default(),
            log_step,
            phase_bins,
            table: Mutex::new(HashMap::new()),
        }
    }

    /// Replaces the search settings used for every bin.
    pub fn with_search(mut self, search: DSearch) -> Self {
        self.search = search;
        self
    }

    pub fn partition(&self) -> &CosetPartition {
        &self.cp
    }

    pub fn len(&self) -> usize {
        self.table.lock().expect("cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn bin(&self, log_mag: f64) -> i32 {
        (log_mag.max(-40.0) / self.log_step).floor() as i32
    }

    /// Optimum for bin `key` in the unit-noise frame, solved on first use at
    /// the gains `center(key)`.
    fn solve(&self, key: (i32, i32, u16), r0: u32, center: impl Fn((i32, i32, u16)) -> (Complex64, Complex64)) -> Complex64 {
        if let Some(&d) = self.table.lock().expect("cache poisoned").get(&key) {
            return d;
        }
        let (a, b) = center(key);
        let unit = LinkConfig {
            p1: 1.0,
            p2: 1.0,
            n0: 1.0,
            r0,
        };
        let d = optimize_d_with(a, b, &unit, &self.inputs, &self.cp, self.objective, &self.search).d.value();
        self.table.lock().expect("cache poisoned").insert(key, d);
        d
    }

    pub fn scale(&self, g1: Complex64, g2: Complex64, lc: &LinkConfig) -> RelayScale {
        let root_n0 = lc.n0.sqrt();
        let ua = g1 * lc.p1.sqrt() / root_n0;
        let ub = g2 * lc.p2.sqrt() / root_n0;
        if self.inputs.user1 == InputLaw::Gaussian && self.inputs.user2 == InputLaw::Gaussian {
            // the noise-free relay mean is CN(0, |a|^2 + |b|^2): one coordinate suffices
            let key = (self.bin(0.5 * (ua.norm_sqr() + ub.norm_sqr()).ln()), i32::MIN, 0);
            let d = self.solve(key, lc.r0, |k| (Complex64::new(((k.0 as f64 + 0.5) * self.log_step).exp(), 0.0), Complex64::new(0.0, 0.0)));
            return RelayScale(d * root_n0);
        }
        let rot = if ua.norm() > 0.0 { ua / ua.norm() } else { Complex64::new(1.0, 0.0) };
        let b_rel = ub / rot;
        let mut phi = b_rel.arg().rem_euclid(FRAC_PI_2);
        let conj = phi > FRAC_PI_4;
        if conj {
            phi = FRAC_PI_2 - phi;
        }
        let pbin = ((phi / FRAC_PI_4 * self.phase_bins as f64) as usize).min(self.phase_bins - 1);
        let key = (self.bin(ua.norm().ln()), self.bin(ub.norm().ln()), pbin as u16);

        let d_canon = self.solve(key, lc.r0, |k| {
            let mag_a = ((k.0 as f64 + 0.5) * self.log_step).exp();
            let mag_b = ((k.1 as f64 + 0.5) * self.log_step).exp();
            let phase = (k.2 as f64 + 0.5) * FRAC_PI_4 / self.phase_bins as f64;
            (Complex64::new(mag_a, 0.0), Complex64::from_polar(mag_b, phase))
        });
        let d_rel = if conj { d_canon.conj() } else { d_canon };
        RelayScale(d_rel * rot * root_n0)
    }
}

/// How the relay picks `d` for each channel use.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScaleRule {
    /// Full [`optimize_d`] search on every call.
    Optimized(Objective),
    /// [`optimize_d`] through a [`DCache`].
    Cached(Objective),
    /// The same `d` for every use.
    Fixed(RelayScale),
    /// `d = N0^alpha` (real).
    NoisePower(f64),
}

/// A relay: coset partition, the input laws it designs for, and its scale rule.
///
/// [`Relay::scale`] sees only `(g1, g2)` and the link configuration; the
/// direct gains never reach the relay.
#[derive(Debug)]
pub struct Relay {
    partition: CosetPartition,
    inputs: RelayInputs,
    rule: ScaleRule,
    search: DSearch,
    cache: Option<DCache>,
}

impl Relay {
    pub fn new(partition: CosetPartition, inputs: RelayInputs, rule: ScaleRule) -> Self {
        Self::with_search(partition, inputs, rule, DSearch::default())
    }

    pub fn with_search(partition: CosetPartition, inputs: RelayInputs, rule: ScaleRule, search: DSearch) -> Self {
        let cache = match rule {
            ScaleRule::Cached(obj) => Some(DCache::new(inputs.clone(), partition, obj).with_search(search)),
            _ => None,
        };
        Self {
            partition,
            inputs,
            rule,
            search,
            cache,
        }
    }

    /// A relay using a prepared cache (e.g. with a non-default resolution).
    pub fn from_cache(cache: DCache) -> Self {
        Self {
            partition: cache.cp,
            inputs: cache.inputs.clone(),
            rule: ScaleRule::Cached(cache.objective),
            search: cache.search,
            cache: Some(cache),
        }
    }

    pub fn partition(&self) -> &CosetPartition {
        &self.partition
    }

    pub fn inputs(&self) -> &RelayInputs {
        &self.inputs
    }

    pub fn rule(&self) -> ScaleRule {
        self.rule
    }

    pub fn scale(&self, g1: Complex64, g2: Complex64, lc: &LinkConfig) -> RelayScale {
        match self.rule {
            ScaleRule::Optimized(obj) => optimize_d_with(g1, g2, lc, &self.inputs, &self.partition, obj, &self.search).d,
            ScaleRule::Cached(_) => self.cache.as_ref().expect("cached rule has a cache").scale(g1, g2, lc),
            ScaleRule::Fixed(d) => d,
            ScaleRule::NoisePower(alpha) => RelayScale(Complex64::new(lc.n0.powf(alpha), 0.0)),
        }
    }

    /// Bin index for the observation `yr` under scale `d`.
    pub fn quantize(&self, yr: Complex64, d: RelayScale) -> usize {
        quantize(yr, d, &self.partition)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::normal_interval;
    use crate::rng::stream;
    use proptest::prelude::*;
    use rand::Rng;

    /// Literal window sum over cells, the reference for the residue shortcut.
    fn windowed_masses(mean: Complex64, var: f64, d: RelayScale, cp: &CosetPartition, sigmas: f64) -> Vec<f64> {
        let z = mean / d.value();
        let s = (0.5 * var).sqrt() / d.value().norm();
        let w = (sigmas * s).ceil() as i64 + 1;
        let (cx, cy) = (z.re.round() as i64, z.im.round() as i64);
        let mut out = vec![0.0; cp.labels()];
        for x in (cx - w)..=(cx + w) {
            let px = if s == 0.0 {
                if x == cx { 1.0 } else { 0.0 }
            } else {
                normal_interval((x as f64 - 0.5 - z.re) / s, (x as f64 + 0.5 - z.re) / s)
            };
            for y in (cy - w)..=(cy + w) {
                let py = if s == 0.0 {
                    if y == cy { 1.0 } else { 0.0 }
                } else {
                    normal_interval((y as f64 - 0.5 - z.im) / s, (y as f64 + 0.5 - z.im) / s)
                };
                out[cp.label(x, y)] += px * py;
            }
        }
        let t: f64 = out.iter().sum();
        out.iter().map(|v| v / t).collect()
    }

    #[test]
    fn generators_and_determinants() {
        let p1 = CosetPartition::new(1).unwrap();
        let p2 = CosetPartition::new(2).unwrap();
        assert_eq!(p1.determinant(), 2);
        assert_eq!(p2.determinant(), 4);
        assert_eq!(p1.lattice_point([1, 0]), [1, 1]);
        assert_eq!(p1.lattice_point([0, 1]), [0, 2]);
        assert_eq!(p2.lattice_point([1, 0]), [2, 1]);
        assert_eq!(p2.lattice_point([0, 1]), [0, 2]);
        assert!(matches!(CosetPartition::new(0), Err(Error::UnsupportedRelayRate(0, _))));
        assert!(CosetPartition::new(3).is_err());
    }

    #[test]
    fn r0_one_label_is_chessboard() {
        let cp = CosetPartition::new(1).unwrap();
        assert_eq!(cp.label(0, 0), 0);
        assert_eq!(cp.label(1, 0), 1);
        assert_eq!(cp.label(2, 0), cp.label(0, 0));
        // brute force: enumerate Lambda and check it is exactly {x + y even}
        let mut on_lattice = std::collections::HashSet::new();
        for a in -20..=20 {
            for b in -20..=20 {
                let p = cp.lattice_point([a, b]);
                if p[0].abs() <= 6 && p[1].abs() <= 6 {
                    on_lattice.insert((p[0], p[1]));
                }
            }
        }
        for x in -6..=6i64 {
            for y in -6..=6i64 {
                assert_eq!(on_lattice.contains(&(x, y)), (x + y).rem_euclid(2) == 0);
                assert_eq!(on_lattice.contains(&(x, y)), cp.label(x, y) == 0);
            }
        }
    }

    #[test]
    fn r0_two_label_functional() {
        let cp = CosetPartition::new(2).unwrap();
        assert_eq!(cp.label(2, 1), 0);
        assert_eq!(cp.label(0, 2), 0);
        assert_eq!(cp.label(1, 0), 1);
        let mut seen: Vec<usize> = [(0, 0), (1, 0), (0, 1), (1, 1)]
            .iter()
            .map(|&(x, y)| cp.label(x, y))
            .collect();
        seen.sort_unstable();
        assert_eq!(seen, vec![0, 1, 2, 3]);
    }

    #[test]
    fn quantizer_examples() {
        let cp1 = CosetPartition::new(1).unwrap();
        let cp2 = CosetPartition::new(2).unwrap();
        let one = RelayScale::real(1.0).unwrap();
        assert_eq!(quantize(Complex64::new(0.2, 0.3), one, &cp1), 0);
        assert_eq!(quantize(Complex64::new(1.2, 0.3), one, &cp1), 1);
        let two = RelayScale::real(2.0).unwrap();
        assert_eq!(lattice_point(Complex64::new(2.4, 2.6), two), (1, 1));
        assert_eq!(quantize(Complex64::new(2.4, 2.6), two, &cp2), 3);
        // ties round away from zero
        assert_eq!(lattice_point(Complex64::new(0.5, -0.5), one), (1, -1));
        assert!(RelayScale::new(Complex64::new(0.0, 0.0)).is_err());
    }

    #[test]
    fn degenerate_variance_masses() {
        let cp = CosetPartition::new(2).unwrap();
        let d = RelayScale::real(1.0).unwrap();
        let lm = label_masses(Complex64::new(1.1, 0.9), 0.0, d, &cp);
        assert_eq!(lm.as_slice(), &[0.0, 0.0, 0.0, 1.0]);
        let lm = label_masses(Complex64::new(1.1, 0.9), 1e-12, d, &cp);
        assert!((lm.get(3) - 1.0).abs() < 1e-12);
        assert!(cell_mass(0, Complex64::new(0.0, 0.0), -1.0, d, &cp).is_err());
        assert!(cell_mass(4, Complex64::new(0.0, 0.0), 1.0, d, &cp).is_err());
    }

    #[test]
    fn wide_gaussian_splits_evenly() {
        let cp = CosetPartition::new(1).unwrap();
        let d = RelayScale::real(0.7).unwrap();
        let m = cell_mass(0, Complex64::new(0.0, 0.0), 1e4 * 0.49, d, &cp).unwrap();
        assert!((m - 0.5).abs() < 0.01);
    }

    #[test]
    fn wide_gaussian_matches_monte_carlo() {
        // 10^6 draws, quantize and count
        let cp = CosetPartition::new(1).unwrap();
        let d = RelayScale::real(1.0).unwrap();
        let var = 1e4;
        let mut rng = stream(11, Domain::Sample, 0);
        let n = 1_000_000;
        let hits = (0..n)
            .filter(|_| quantize(complex_gaussian(&mut rng, var), d, &cp) == 0)
            .count();
        let mc = hits as f64 / n as f64;
        let exact = cell_mass(0, Complex64::new(0.0, 0.0), var, d, &cp).unwrap();
        assert!((mc - exact).abs() < 0.01);
    }

    #[test]
    fn residue_route_matches_literal_window() {
        let mut rng = stream(12, Domain::Sample, 0);
        for r0 in [1, 2] {
            let cp = CosetPartition::new(r0).unwrap();
            for _ in 0..500 {
                let mean = Complex64::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
                let var = 10f64.powf(rng.gen_range(-6.0..1.5));
                let d = RelayScale::new(Complex64::from_polar(
                    10f64.powf(rng.gen_range(-1.0..0.5)),
                    rng.gen_range(0.0..6.3),
                ))
                .unwrap();
                let fast = label_masses(mean, var, d, &cp);
                // the 6-sigma window leaves < 1e-8 of mass outside; 12 sigma is exact in f64
                let window = windowed_masses(mean, var, d, &cp, 6.0);
                let wide = windowed_masses(mean, var, d, &cp, 12.0);
                for ((a, b), c) in fast.as_slice().iter().zip(&window).zip(&wide) {
                    assert!((a - b).abs() < 1e-8, "r0={r0} mean={mean} var={var} d={d:?}: {a} vs {b}");
                    assert!((a - c).abs() < 1e-12, "r0={r0} mean={mean} var={var} d={d:?}: {a} vs {c}");
                }
            }
        }
    }

    #[test]
    fn cell_mass_agrees_with_sampling() {
        // 100 random parameter draws, each against a 10^6-sample count, 3 standard errors
        let mut rng = stream(13, Domain::Sample, 0);
        let n = 1_000_000usize;
        for trial in 0..100 {
            let cp = CosetPartition::new(1 + (trial % 2) as u32).unwrap();
            let mean = Complex64::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            let var = 10f64.powf(rng.gen_range(-2.0..0.5));
            let d = RelayScale::new(Complex64::from_polar(rng.gen_range(0.3..2.0), rng.gen_range(0.0..6.3))).unwrap();
            let lm = label_masses(mean, var, d, &cp);
            let mut counts = [0usize; MAX_LABELS];
            let mut draw = stream(1000 + trial, Domain::Sample, 0);
            for _ in 0..n {
                counts[quantize(mean + complex_gaussian(&mut draw, var), d, &cp)] += 1;
            }
            for l in 0..cp.labels() {
                let p = lm.get(l);
                let se = (p * (1.0 - p) / n as f64).sqrt().max(1.0 / n as f64);
                let f = counts[l] as f64 / n as f64;
                assert!((f - p).abs() <= 3.0 * se + 1e-12, "trial {trial} label {l}: {f} vs {p}");
            }
        }
    }

    proptest! {
        #[test]
        fn label_periodicity(x in -10_000i64..10_000, y in -10_000i64..10_000,
                             z0 in -1000i64..1000, z1 in -1000i64..1000, r0 in 1u32..3) {
            let cp = CosetPartition::new(r0).unwrap();
            let t = cp.lattice_point([z0, z1]);
            prop_assert_eq!(cp.label(x + t[0], y + t[1]), cp.label(x, y));
        }

        #[test]
        fn fundamental_domain_bijection(ox in -50i64..50, oy in -50i64..50, r0 in 1u32..3) {
            let cp = CosetPartition::new(r0).unwrap();
            // axis-aligned fundamental domain: for R0 = 1 two cells, for R0 = 2 a 4x1 strip
            let cells: Vec<(i64, i64)> = if r0 == 1 { vec![(0, 0), (1, 0)] } else { (0..4).map(|x| (x, 0)).collect() };
            let mut labels: Vec<usize> = cells.iter().map(|&(x, y)| cp.label(ox + x, oy + y)).collect();
            labels.sort_unstable();
            prop_assert_eq!(labels, (0..cp.labels()).collect::<Vec<_>>());
        }

        #[test]
        fn total_probability(re in -20.0f64..20.0, im in -20.0f64..20.0, lv in -8.0f64..3.0,
                             dm in 0.01f64..5.0, dp in 0.0f64..6.3, r0 in 1u32..3) {
            let cp = CosetPartition::new(r0).unwrap();
            let d = RelayScale::new(Complex64::from_polar(dm, dp)).unwrap();
            let lm = label_masses(Complex64::new(re, im), 10f64.powf(lv), d, &cp);
            let total: f64 = lm.as_slice().iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
            prop_assert!(lm.as_slice().iter().all(|&p| p >= 0.0));
        }

        #[test]
        fn rotation_invariance(re in -10.0f64..10.0, im in -10.0f64..10.0, dm in 0.1f64..3.0,
                               dp in 0.0f64..6.3, theta in 0.0f64..6.3, r0 in 1u32..3) {
            let cp = CosetPartition::new(r0).unwrap();
            let yr = Complex64::new(re, im);
            let d = Complex64::from_polar(dm, dp);
            let rot = Complex64::from_polar(1.0, theta);
            let z = yr / d;
            // skip points within rounding noise of a cell boundary
            let frac = |v: f64| (v - v.floor() - 0.5).abs();
            prop_assume!(frac(z.re) > 1e-9 && frac(z.im) > 1e-9);
            let a = quantize(yr, RelayScale::new(d).unwrap(), &cp);
            let b = quantize(yr * rot, RelayScale::new(d * rot).unwrap(), &cp);
            prop_assert_eq!(a, b);
        }
    }
}
