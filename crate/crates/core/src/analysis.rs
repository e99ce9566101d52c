//! Correlations, light-cone fronts, propagation velocities and fringe statistics.

use std::collections::BTreeMap;
use std::f64::consts::{SQRT_2, TAU};
use std::sync::Arc;

use nalgebra::{DMatrix, Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolution::{SingleWalkerTrace, Snapshot};
use crate::sector::QuantumState;

/// C_ij = ⟨σz_i σz_j⟩ − ⟨σz_i⟩⟨σz_j⟩ with σz = 1 − 2n.
pub fn correlation(state: &QuantumState, i: usize, j: usize) -> Result<f64> {
    let n = state.basis().n_sites();
    if i == j {
        return Err(Error::InvalidArgument(format!("correlation needs two distinct sites, got {i} twice")));
    }
    if i >= n || j >= n {
        return Err(Error::DimensionMismatch { expected: n, got: i.max(j) });
    }
    let pops = state.populations();
    let nn = state.pair_occupation(i, j);
    Ok(4.0 * (nn - pops[i] * pops[j]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSeries {
    pub site_pair: (usize, usize),
    pub times_ns: Vec<f64>,
    pub values: Vec<f64>,
}

pub fn correlation_series(snapshots: &[Snapshot], i: usize, j: usize) -> Result<CorrelationSeries> {
    let values = snapshots
        .iter()
        .map(|s| correlation(&s.state, i, j))
        .collect::<Result<_>>()?;
    Ok(CorrelationSeries {
        site_pair: (i, j),
        times_ns: snapshots.iter().map(|s| s.time_ns).collect(),
        values,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams {
    pub amplitude: f64,
    pub center: f64,
    pub width: f64,
    pub offset: f64,
}

impl GaussianParams {
    pub fn eval(&self, t: f64) -> f64 {
        let z = (t - self.center) / self.width;
        self.amplitude * (-0.5 * z * z).exp() + self.offset
    }

    fn from_vec(p: &Vector4<f64>) -> Self {
        GaussianParams {
            amplitude: p[0],
            center: p[1],
            width: p[2].abs(),
            offset: p[3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianFit {
    pub params: GaussianParams,
    /// Parameter covariance in (amplitude, center, width, offset) order.
    pub covariance: [[f64; 4]; 4],
    pub residual_sum_squares: f64,
    pub iterations: usize,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Starting point: peak height, peak time, FWHM/2.355, early-time median.
pub fn gaussian_initial_guess(t: &[f64], y: &[f64]) -> GaussianParams {
    let (imax, &ymax) = y
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("nonempty series");
    let head = (y.len() / 10).max(1);
    let offset = median(y[..head].to_vec());
    let half = offset + 0.5 * (ymax - offset);
    let mut lo = imax;
    while lo > 0 && y[lo] > half {
        lo -= 1;
    }
    let mut hi = imax;
    while hi + 1 < y.len() && y[hi] > half {
        hi += 1;
    }
    let span = t[t.len() - 1] - t[0];
    let fwhm = (t[hi] - t[lo]).max(span / y.len() as f64);
    GaussianParams {
        amplitude: ymax,
        center: t[imax],
        width: fwhm / 2.355,
        offset,
    }
}

/// Levenberg–Marquardt least squares for `a·exp(-(t-c)²/2w²) + o`.
pub fn fit_gaussian(t: &[f64], y: &[f64], init: GaussianParams) -> Result<GaussianFit> {
    if t.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: t.len(), got: y.len() });
    }
    let n = t.len();
    if n < 5 {
        return Err(Error::Fit(format!("{n} samples are too few for a 4-parameter fit")));
    }
    let residuals = |p: &Vector4<f64>| -> (f64, DMatrix<f64>, Vec<f64>) {
        let mut jac = DMatrix::zeros(n, 4);
        let mut r = Vec::with_capacity(n);
        let mut ssr = 0.0;
        for k in 0..n {
            let w = p[2];
            let d = t[k] - p[1];
            let e = (-0.5 * d * d / (w * w)).exp();
            let res = p[0] * e + p[3] - y[k];
            ssr += res * res;
            r.push(res);
            jac[(k, 0)] = e;
            jac[(k, 1)] = p[0] * e * d / (w * w);
            jac[(k, 2)] = p[0] * e * d * d / (w * w * w);
            jac[(k, 3)] = 1.0;
        }
        (ssr, jac, r)
    };
    let mut p = Vector4::new(init.amplitude, init.center, init.width.max(1e-12), init.offset);
    let (mut ssr, mut jac, mut r) = residuals(&p);
    let mut lambda = 1e-3;
    let mut iterations = 0;
    let max_iter = 500;
    while iterations < max_iter {
        iterations += 1;
        let jt = jac.transpose();
        let jtj: Matrix4<f64> = (&jt * &jac).fixed_view::<4, 4>(0, 0).into_owned();
        let g: Vector4<f64> = (&jt * nalgebra::DVector::from_column_slice(&r))
            .fixed_rows::<4>(0)
            .into_owned();
        let mut improved = false;
        for _ in 0..30 {
            let mut a = jtj;
            for d in 0..4 {
                a[(d, d)] += lambda * jtj[(d, d)].max(1e-300);
            }
            let Some(step) = a.lu().solve(&(-g)) else {
                lambda *= 10.0;
                continue;
            };
            let trial = p + step;
            if !trial.iter().all(|x| x.is_finite()) || trial[2] == 0.0 {
                lambda *= 10.0;
                continue;
            }
            let (s2, j2, r2) = residuals(&trial);
            if s2 < ssr {
                let rel = (ssr - s2) / ssr.max(1e-300);
                let small_step = step.norm() <= 1e-12 * (p.norm() + 1e-12);
                p = trial;
                ssr = s2;
                jac = j2;
                r = r2;
                lambda = (lambda / 10.0).max(1e-15);
                improved = true;
                if rel < 1e-15 || small_step {
                    iterations = max_iter;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    let jt = jac.transpose();
    let jtj = &jt * &jac;
    let dof = (n as f64 - 4.0).max(1.0);
    let s2 = ssr / dof;
    let inv = jtj
        .try_inverse()
        .ok_or_else(|| Error::Fit("singular normal matrix at the optimum".into()))?;
    let mut covariance = [[0.0; 4]; 4];
    for a in 0..4 {
        for b in 0..4 {
            covariance[a][b] = inv[(a, b)] * s2;
        }
    }
    if !p.iter().all(|x| x.is_finite()) {
        return Err(Error::Fit("non-finite parameters".into()));
    }
    Ok(GaussianFit {
        params: GaussianParams::from_vec(&p),
        covariance,
        residual_sum_squares: ssr,
        iterations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontFit {
    pub distance: f64,
    pub peak_time_ns: f64,
    pub peak_time_err_ns: f64,
    pub gaussian: GaussianParams,
}

pub const DEFAULT_NOISE_FLOOR: f64 = 1e-6;
pub const MIN_FRONT_SAMPLES: usize = 8;

/// A lobe counts as the arrival once it reaches this fraction of the global peak.
pub const FIRST_LOBE_FRACTION: f64 = 0.5;

/// One past the trough that closes the first lobe reaching `fraction` of the
/// global maximum; later lobes are reflections and revivals.
pub fn first_lobe_end(y: &[f64], fraction: f64) -> usize {
    let ymax = y.iter().fold(0.0f64, |m, v| m.max(*v));
    let Some(mut i) = y.iter().position(|v| *v >= fraction * ymax) else {
        return y.len();
    };
    while i + 1 < y.len() && y[i + 1] >= y[i] {
        i += 1;
    }
    while i + 1 < y.len() && y[i + 1] <= y[i] {
        i += 1;
    }
    i + 1
}

/// Gaussian fit of the first arrival lobe of a nonnegative front signal; the fitted center is the front time.
pub fn fit_front_signal(times_ns: &[f64], signal: &[f64], distance: f64, noise_floor: f64) -> Result<FrontFit> {
    if times_ns.len() < MIN_FRONT_SAMPLES {
        return Err(Error::Fit(format!(
            "{} samples, need at least {MIN_FRONT_SAMPLES}",
            times_ns.len()
        )));
    }
    let peak = signal.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(peak > noise_floor) {
        return Err(Error::Fit(format!("no peak above the noise floor {noise_floor:e}")));
    }
    let end = first_lobe_end(signal, FIRST_LOBE_FRACTION).max(MIN_FRONT_SAMPLES).min(signal.len());
    let (t, y) = (&times_ns[..end], &signal[..end]);
    let init = gaussian_initial_guess(t, y);
    let fit = fit_gaussian(t, y, init)?;
    let (t0, t1) = (times_ns[0], times_ns[times_ns.len() - 1]);
    let c = fit.params.center;
    if !(c >= t0 && c <= t1) {
        return Err(Error::Fit(format!("front center {c:.1} ns outside [{t0}, {t1}] ns")));
    }
    if !(fit.params.width > 0.0) {
        return Err(Error::Fit("degenerate width".into()));
    }
    Ok(FrontFit {
        distance,
        peak_time_ns: c,
        peak_time_err_ns: fit.covariance[1][1].max(0.0).sqrt(),
        gaussian: fit.params,
    })
}

/// Front of a correlation curve, located on |C|.
pub fn fit_gaussian_front(series: &CorrelationSeries, distance: f64, noise_floor: f64) -> Result<FrontFit> {
    let mag: Vec<f64> = series.values.iter().map(|v| v.abs()).collect();
    fit_front_signal(&series.times_ns, &mag, distance, noise_floor)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VelocityFit {
    /// sites/µs
    pub velocity: f64,
    pub std_err: f64,
    /// distance at t = 0, sites
    pub intercept: f64,
    pub weighted: bool,
}

/// Straight line distance = v·t + b through the fronts (t in ns, v in sites/µs).
pub fn fit_velocity(fronts: &[FrontFit]) -> Result<VelocityFit> {
    if fronts.len() < 2 {
        return Err(Error::Fit(format!("{} fronts, need at least 2", fronts.len())));
    }
    let d0 = fronts[0].distance;
    if fronts.iter().all(|f| (f.distance - d0).abs() < 1e-12) {
        return Err(Error::Fit("all fronts at the same distance".into()));
    }
    let errs_ok = fronts
        .iter()
        .all(|f| f.peak_time_err_ns.is_finite() && f.peak_time_err_ns > 0.0);
    let weights: Vec<f64> = if errs_ok {
        fronts.iter().map(|f| 1.0 / (f.peak_time_err_ns * f.peak_time_err_ns)).collect()
    } else {
        vec![1.0; fronts.len()]
    };
    let t: Vec<f64> = fronts.iter().map(|f| f.peak_time_ns * 1e-3).collect();
    let d: Vec<f64> = fronts.iter().map(|f| f.distance).collect();
    let sw: f64 = weights.iter().sum();
    let tm = weights.iter().zip(&t).map(|(w, x)| w * x).sum::<f64>() / sw;
    let dm = weights.iter().zip(&d).map(|(w, x)| w * x).sum::<f64>() / sw;
    let stt: f64 = weights.iter().zip(&t).map(|(w, x)| w * (x - tm).powi(2)).sum();
    if !(stt > 0.0) {
        return Err(Error::Fit("all fronts at the same time".into()));
    }
    let std: f64 = weights
        .iter()
        .zip(t.iter().zip(&d))
        .map(|(w, (x, y))| w * (x - tm) * (y - dm))
        .sum();
    let velocity = std / stt;
    let intercept = dm - velocity * tm;
    let n = fronts.len() as f64;
    let std_err = if fronts.len() > 2 {
        let ssr: f64 = weights
            .iter()
            .zip(t.iter().zip(&d))
            .map(|(w, (x, y))| w * (y - intercept - velocity * x).powi(2))
            .sum();
        (ssr / (n - 2.0) / stt).sqrt()
    } else {
        0.0
    };
    Ok(VelocityFit {
        velocity,
        std_err,
        intercept,
        weighted: errs_ok,
    })
}

/// Maximal group velocity 2√2·J(1 − 16J²/9U²) in sites/µs; J and U in MHz (/2π).
pub fn lr_bound(j_mhz: f64, u_mhz: f64) -> Result<f64> {
    if u_mhz == 0.0 {
        return Err(Error::InvalidArgument("on-site interaction U must be nonzero".into()));
    }
    let correction = 1.0 - 16.0 * j_mhz * j_mhz / (9.0 * u_mhz * u_mhz);
    Ok(2.0 * SQRT_2 * TAU * j_mhz * correction)
}

pub const VELOCITY_WINDOW: f64 = 3.0 * SQRT_2;

/// Velocity fitted to the fronts with d0 ≤ d ≤ d0 + 3√2.
pub fn instantaneous_velocity(fronts: &[FrontFit], d0: f64) -> Result<VelocityFit> {
    let eps = 1e-9;
    let window: Vec<FrontFit> = fronts
        .iter()
        .filter(|f| f.distance >= d0 - eps && f.distance <= d0 + VELOCITY_WINDOW + eps)
        .cloned()
        .collect();
    if window.len() < 4 {
        return Err(Error::Fit(format!(
            "{} fronts in the window starting at d0 = {d0:.3}, need 4",
            window.len()
        )));
    }
    fit_velocity(&window)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FringeStats {
    pub visibility: f64,
    pub variance: f64,
    pub mean: f64,
}

/// Visibility (max−min)/(|max|+|min|), which reduces to the usual contrast on
/// nonnegative grids and stays within [0, 1] on signed difference grids.
pub fn fringe_stats(grid: &DMatrix<f64>) -> Result<FringeStats> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty grid".into()));
    }
    if grid.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("grid has non-finite entries".into()));
    }
    let max = grid.max();
    let min = grid.min();
    if max == 0.0 && min == 0.0 {
        return Err(Error::InvalidArgument("grid is identically zero".into()));
    }
    let n = grid.len() as f64;
    let mean = grid.sum() / n;
    let variance = grid.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok(FringeStats {
        visibility: (max - min) / (max.abs() + min.abs()),
        variance,
        mean,
    })
}

/// Two-walker grid minus the sum of the single-walker grids.
pub fn interaction_signature(
    two_walker: &DMatrix<f64>,
    single_l: &DMatrix<f64>,
    single_r: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    for g in [single_l, single_r] {
        if g.shape() != two_walker.shape() {
            return Err(Error::DimensionMismatch {
                expected: two_walker.len(),
                got: g.len(),
            });
        }
    }
    Ok(two_walker - (single_l + single_r))
}

/// Occupation statistics of a sampled trajectory.
pub trait Trajectory {
    fn times_ns(&self) -> Vec<f64>;
    fn n_sites(&self) -> usize;
    /// ⟨n_j⟩ at every sample time.
    fn site_series(&self, j: usize) -> Result<Vec<f64>>;
    /// C_ij at every sample time.
    fn correlation_series(&self, i: usize, j: usize) -> Result<Vec<f64>>;
}

impl Trajectory for Vec<Snapshot> {
    fn times_ns(&self) -> Vec<f64> {
        self.iter().map(|s| s.time_ns).collect()
    }

    fn n_sites(&self) -> usize {
        self.first().map_or(0, |s| s.state.basis().n_sites())
    }

    fn site_series(&self, j: usize) -> Result<Vec<f64>> {
        let n = self.n_sites();
        if j >= n {
            return Err(Error::DimensionMismatch { expected: n, got: j });
        }
        Ok(self.iter().map(|s| s.state.populations()[j]).collect())
    }

    fn correlation_series(&self, i: usize, j: usize) -> Result<Vec<f64>> {
        self.iter().map(|s| correlation(&s.state, i, j)).collect()
    }
}

impl Trajectory for SingleWalkerTrace {
    fn times_ns(&self) -> Vec<f64> {
        self.times_ns.clone()
    }

    fn n_sites(&self) -> usize {
        self.populations.nrows()
    }

    fn site_series(&self, j: usize) -> Result<Vec<f64>> {
        if j >= self.n_sites() {
            return Err(Error::DimensionMismatch { expected: self.n_sites(), got: j });
        }
        Ok(self.populations.row(j).iter().copied().collect())
    }

    /// One walker never occupies two sites, so C_ij = −4⟨n_i⟩⟨n_j⟩.
    fn correlation_series(&self, i: usize, j: usize) -> Result<Vec<f64>> {
        if i == j {
            return Err(Error::InvalidArgument(format!("correlation needs two distinct sites, got {i} twice")));
        }
        let a = self.site_series(i)?;
        let b = self.site_series(j)?;
        Ok(a.iter().zip(&b).map(|(x, y)| -4.0 * x * y).collect())
    }
}

/// Per-time quantity whose Gaussian peak marks the arrival of the light cone
/// at a target site.
pub trait FrontSignal: Send + Sync {
    fn name(&self) -> &'static str;
    fn signal(&self, trajectory: &dyn Trajectory, source: usize, target: usize) -> Result<Vec<f64>>;
}

/// |C_source,target(t)|.
pub struct CorrelationSignal;

impl FrontSignal for CorrelationSignal {
    fn name(&self) -> &'static str {
        "correlation"
    }

    fn signal(&self, trajectory: &dyn Trajectory, source: usize, target: usize) -> Result<Vec<f64>> {
        Ok(trajectory.correlation_series(source, target)?.into_iter().map(f64::abs).collect())
    }
}

/// ⟨n_target(t)⟩, the population arriving at the target.
pub struct ArrivalSignal;

impl FrontSignal for ArrivalSignal {
    fn name(&self) -> &'static str {
        "arrival"
    }

    fn signal(&self, trajectory: &dyn Trajectory, _source: usize, target: usize) -> Result<Vec<f64>> {
        trajectory.site_series(target)
    }
}

type SignalFactory = fn() -> Arc<dyn FrontSignal>;

#[derive(Clone)]
pub struct FrontSignalRegistry {
    entries: BTreeMap<String, SignalFactory>,
}

impl Default for FrontSignalRegistry {
    fn default() -> Self {
        let mut r = FrontSignalRegistry { entries: BTreeMap::new() };
        r.register("correlation", || Arc::new(CorrelationSignal));
        r.register("arrival", || Arc::new(ArrivalSignal));
        r
    }
}

impl FrontSignalRegistry {
    pub fn register(&mut self, name: &str, factory: SignalFactory) {
        self.entries.insert(name.to_string(), factory);
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.keys().map(String::as_str).collect()
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn FrontSignal>> {
        self.entries
            .get(name)
            .map(|f| f())
            .ok_or_else(|| Error::UnknownStrategy {
                kind: "front signal",
                name: name.to_string(),
                available: self.names().join(", "),
            })
    }
}

pub fn front_signal(name: &str) -> Result<Arc<dyn FrontSignal>> {
    FrontSignalRegistry::default().get(name)
}

/// Fits one front per `(target, distance)` pair.
pub fn extract_fronts(
    trajectory: &dyn Trajectory,
    source: usize,
    targets: &[(usize, f64)],
    signal: &dyn FrontSignal,
    noise_floor: f64,
) -> Result<Vec<FrontFit>> {
    let times = trajectory.times_ns();
    targets
        .iter()
        .map(|&(j, d)| {
            let sig = signal.signal(trajectory, source, j)?;
            fit_front_signal(&times, &sig, d, noise_floor)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn front(d: f64, t: f64) -> FrontFit {
        FrontFit {
            distance: d,
            peak_time_ns: t,
            peak_time_err_ns: 1.0,
            gaussian: GaussianParams { amplitude: 1.0, center: t, width: 1.0, offset: 0.0 },
        }
    }

    #[test]
    fn lr_bound_values() {
        assert!((lr_bound(2.01, -248.9).unwrap() - 35.7).abs() < 0.05);
        assert_eq!(lr_bound(0.0, -248.9).unwrap(), 0.0);
        assert!(lr_bound(2.0, 0.0).is_err());
        let limit = 2.0 * SQRT_2 * TAU * 2.01;
        assert!((lr_bound(2.01, -1e9).unwrap() - limit).abs() < 1e-9);
    }

    #[test]
    fn exact_line_velocity() {
        let fr: Vec<FrontFit> = (1..5).map(|k| front(k as f64, 50.0 + k as f64 * 1000.0 / 22.2)).collect();
        let v = fit_velocity(&fr).unwrap();
        assert!((v.velocity - 22.2).abs() < 1e-10);
        assert!(v.std_err < 1e-9);
        assert!(fit_velocity(&fr[..1]).is_err());
        let same: Vec<FrontFit> = (0..3).map(|k| front(1.0, k as f64)).collect();
        assert!(fit_velocity(&same).is_err());
    }

    #[test]
    fn window_needs_four_fronts() {
        let fr: Vec<FrontFit> = (1..12).map(|k| front(k as f64 * SQRT_2, k as f64 * 40.0)).collect();
        let v = instantaneous_velocity(&fr, SQRT_2).unwrap();
        assert!((v.velocity - SQRT_2 * 25.0).abs() < 1e-9);
        assert!(instantaneous_velocity(&fr, 9.0 * SQRT_2).is_err());
    }

    #[test]
    fn fringe_arithmetic() {
        let c = DMatrix::from_element(3, 3, 0.2);
        assert_eq!(fringe_stats(&c).unwrap().visibility, 0.0);
        let alt = DMatrix::from_fn(4, 4, |i, j| if (i + j) % 2 == 0 { 0.4 } else { 0.1 });
        assert!((fringe_stats(&alt).unwrap().visibility - 0.6).abs() < 1e-12);
        assert!(fringe_stats(&DMatrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn signature_shapes() {
        let z = DMatrix::zeros(2, 3);
        assert_eq!(interaction_signature(&z, &z, &z).unwrap(), z);
        assert!(interaction_signature(&z, &DMatrix::zeros(3, 2), &z).is_err());
    }

    #[test]
    fn flat_series_has_no_front() {
        let t: Vec<f64> = (0..20).map(|k| k as f64 * 10.0).collect();
        assert!(fit_front_signal(&t, &vec![0.0; 20], 1.0, DEFAULT_NOISE_FLOOR).is_err());
    }

    #[test]
    fn registry_lookup() {
        assert_eq!(front_signal("arrival").unwrap().name(), "arrival");
        assert!(matches!(front_signal("nope"), Err(Error::UnknownStrategy { .. })));
    }
}
