//! Ground-truth attractor trajectories.
//!
//! Two systems are provided: a linear point attractor that contracts toward
//! the origin, and the van der Pol oscillator whose limit cycle has radius
//! close to 2 for small damping. A noisy Lissajous figure-eight stands in for
//! hand-drawn data, and trajectories can be saved to and loaded from a small
//! text format.

use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sampler::SeededSampler;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("input out of domain: {0}")]
    Domain(String),
    #[error("integration diverged at step {step} (non-finite state); reduce dt")]
    Diverged { step: usize },
    #[error("cannot read trajectory {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: malformed row {row:?}")]
    MalformedRow {
        path: PathBuf,
        line: usize,
        row: String,
    },
    #[error("{path}:{line}: non-finite value in row {row:?}")]
    NonFinite {
        path: PathBuf,
        line: usize,
        row: String,
    },
    #[error("{path}:{line}: malformed header {header:?}")]
    MalformedHeader {
        path: PathBuf,
        line: usize,
        header: String,
    },
    #[error("{path}: trajectory file contains no points")]
    Empty { path: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const ORIGIN: Point2 = Point2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrajectoryKind {
    Point,
    Cyclic,
    Imported,
    FigureEight,
}

impl TrajectoryKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TrajectoryKind::Point => "point",
            TrajectoryKind::Cyclic => "cyclic",
            TrajectoryKind::Imported => "imported",
            TrajectoryKind::FigureEight => "figure-eight",
        }
    }
}

impl fmt::Display for TrajectoryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrajectoryKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "point" => Ok(TrajectoryKind::Point),
            "cyclic" => Ok(TrajectoryKind::Cyclic),
            "imported" => Ok(TrajectoryKind::Imported),
            "figure-eight" => Ok(TrajectoryKind::FigureEight),
            other => Err(format!("unknown trajectory kind {other:?}")),
        }
    }
}

/// An ordered sequence of 2-D points sampled at a constant step `dt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    points: Vec<Point2>,
    dt: f64,
    kind: TrajectoryKind,
}

impl Trajectory {
    pub fn new(points: Vec<Point2>, dt: f64, kind: TrajectoryKind) -> Result<Self, DynamicsError> {
        if points.is_empty() {
            return Err(DynamicsError::Domain("trajectory must have at least one point".into()));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(DynamicsError::Domain(format!("dt must be positive and finite, got {dt}")));
        }
        if let Some(k) = points.iter().position(|p| !p.is_finite()) {
            return Err(DynamicsError::Domain(format!("point {k} is not finite")));
        }
        Ok(Self { points, dt, kind })
    }

    pub fn points(&self) -> &[Point2] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn kind(&self) -> TrajectoryKind {
        self.kind
    }

    pub fn first(&self) -> Point2 {
        self.points[0]
    }

    pub fn last(&self) -> Point2 {
        self.points[self.points.len() - 1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PointAttractorConfig {
    pub alpha: f64,
    pub steps: usize,
    pub dt: f64,
}

impl Default for PointAttractorConfig {
    fn default() -> Self {
        Self {
            alpha: -1.0,
            steps: 100,
            dt: 0.05,
        }
    }
}

impl PointAttractorConfig {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        if self.alpha.is_nan() || self.alpha >= 0.0 {
            return Err(DynamicsError::Domain(format!(
                "alpha must be negative for a point attractor, got {}",
                self.alpha
            )));
        }
        validate_steps_dt(self.steps, self.dt)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VanDerPolConfig {
    pub mu: f64,
    pub steps: usize,
    pub dt: f64,
}

impl Default for VanDerPolConfig {
    fn default() -> Self {
        Self {
            mu: 0.1,
            steps: 200,
            dt: 0.1,
        }
    }
}

impl VanDerPolConfig {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        if !self.mu.is_finite() {
            return Err(DynamicsError::Domain("mu must be finite".into()));
        }
        validate_steps_dt(self.steps, self.dt)
    }
}

/// Parameters of the synthetic figure-eight (Lissajous 2:1) trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FigureEightConfig {
    pub amplitude: f64,
    pub loops: f64,
    /// Number of points in the trajectory.
    pub steps: usize,
    pub noise_std: f64,
}

impl Default for FigureEightConfig {
    fn default() -> Self {
        Self {
            amplitude: 2.0,
            loops: 3.0,
            steps: 560,
            noise_std: 0.02,
        }
    }
}

fn validate_steps_dt(steps: usize, dt: f64) -> Result<(), DynamicsError> {
    if steps < 1 {
        return Err(DynamicsError::Domain("steps must be at least 1".into()));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(DynamicsError::Domain(format!("dt must be positive and finite, got {dt}")));
    }
    Ok(())
}

fn check_init(init: Point2) -> Result<(), DynamicsError> {
    if init.is_finite() {
        Ok(())
    } else {
        Err(DynamicsError::Domain(format!("initial position {init:?} is not finite")))
    }
}

/// Point attractor `dx/dt = alpha x, dy/dt = -y`, sampled with its closed-form
/// solution so there is no integration error. Returns `steps + 1` points.
pub fn gen_point_attractor(
    cfg: &PointAttractorConfig,
    init: Point2,
) -> Result<Trajectory, DynamicsError> {
    cfg.validate()?;
    check_init(init)?;
    let x_rate = cfg.alpha * cfg.dt;
    let y_rate = -cfg.dt;
    let points = (0..=cfg.steps)
        .map(|k| {
            let k = k as f64;
            Point2::new(init.x * (x_rate * k).exp(), init.y * (y_rate * k).exp())
        })
        .collect();
    Trajectory::new(points, cfg.dt, TrajectoryKind::Point)
}

fn van_der_pol_field(mu: f64, s: [f64; 2]) -> [f64; 2] {
    let [x, y] = s;
    [y, mu * (1.0 - x * x) * y - x]
}

/// Van der Pol oscillator as the first-order system `x' = y`,
/// `y' = mu (1 - x^2) y - x`, advanced with classical RK4.
pub fn gen_van_der_pol(cfg: &VanDerPolConfig, init: Point2) -> Result<Trajectory, DynamicsError> {
    cfg.validate()?;
    check_init(init)?;
    let h = cfg.dt;
    let mut state = [init.x, init.y];
    let mut points = Vec::with_capacity(cfg.steps + 1);
    points.push(init);
    for step in 1..=cfg.steps {
        state = rk4_step(cfg.mu, state, h);
        if !(state[0].is_finite() && state[1].is_finite()) {
            return Err(DynamicsError::Diverged { step });
        }
        points.push(Point2::new(state[0], state[1]));
    }
    Trajectory::new(points, cfg.dt, TrajectoryKind::Cyclic)
}

pub(crate) fn rk4_step(mu: f64, s: [f64; 2], h: f64) -> [f64; 2] {
    let axpy = |a: [f64; 2], k: [f64; 2], c: f64| [a[0] + c * k[0], a[1] + c * k[1]];
    let k1 = van_der_pol_field(mu, s);
    let k2 = van_der_pol_field(mu, axpy(s, k1, h / 2.0));
    let k3 = van_der_pol_field(mu, axpy(s, k2, h / 2.0));
    let k4 = van_der_pol_field(mu, axpy(s, k3, h));
    [
        s[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        s[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
    ]
}

/// `n` points with each coordinate drawn uniformly from `[lo, hi]`.
pub fn sample_initials(
    n: usize,
    lo: f64,
    hi: f64,
    sampler: &mut SeededSampler,
) -> Result<Vec<Point2>, DynamicsError> {
    if !lo.is_finite() || !hi.is_finite() || lo >= hi {
        return Err(DynamicsError::Domain(format!("need finite lo < hi, got [{lo}, {hi}]")));
    }
    Ok((0..n)
        .map(|_| {
            let x = sampler.uniform(lo, hi);
            let y = sampler.uniform(lo, hi);
            Point2::new(x, y)
        })
        .collect())
}

/// Lissajous figure-eight `x = A sin(2 theta)`, `y = A sin(theta)` with
/// `theta = 2 pi t loops / steps`, plus i.i.d. Gaussian noise per coordinate.
pub fn gen_figure_eight(
    cfg: &FigureEightConfig,
    sampler: &mut SeededSampler,
) -> Result<Trajectory, DynamicsError> {
    if cfg.steps < 2 {
        return Err(DynamicsError::Domain("figure-eight needs at least 2 steps".into()));
    }
    if !cfg.noise_std.is_finite() || cfg.noise_std < 0.0 {
        return Err(DynamicsError::Domain(format!(
            "noise_std must be non-negative, got {}",
            cfg.noise_std
        )));
    }
    if !cfg.amplitude.is_finite() || !cfg.loops.is_finite() {
        return Err(DynamicsError::Domain("amplitude and loops must be finite".into()));
    }
    let points = (0..cfg.steps)
        .map(|t| {
            let mut p = lissajous(cfg, t);
            if cfg.noise_std > 0.0 {
                p.x += cfg.noise_std * sampler.standard_normal();
                p.y += cfg.noise_std * sampler.standard_normal();
            }
            p
        })
        .collect();
    Trajectory::new(points, 1.0, TrajectoryKind::FigureEight)
}

/// Writes `# dt=<dt> kind=<kind>` followed by one `x,y` row per point with
/// 17 significant digits.
pub fn write_trajectory<W: Write>(traj: &Trajectory, mut w: W) -> io::Result<()> {
    writeln!(w, "# dt={:.16e} kind={}", traj.dt, traj.kind)?;
    for p in &traj.points {
        writeln!(w, "{:.16e},{:.16e}", p.x, p.y)?;
    }
    w.flush()
}

pub fn save_trajectory(traj: &Trajectory, path: &Path) -> Result<(), DynamicsError> {
    let io_err = |source| DynamicsError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = fs::File::create(path).map_err(io_err)?;
    write_trajectory(traj, io::BufWriter::new(file)).map_err(io_err)
}

/// Parses the trajectory text format. The result is tagged
/// [`TrajectoryKind::Imported`]; `dt` comes from the header or defaults to 1.
pub fn parse_trajectory(text: &str, path: &Path) -> Result<Trajectory, DynamicsError> {
    let mut dt = 1.0;
    let mut points = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let row = raw.trim();
        if row.is_empty() {
            continue;
        }
        if let Some(header) = row.strip_prefix('#') {
            dt = parse_header(header, line, path)?.unwrap_or(dt);
            continue;
        }
        let malformed = || DynamicsError::MalformedRow {
            path: path.to_path_buf(),
            line,
            row: raw.to_string(),
        };
        let mut fields = row.split(',');
        let (Some(xs), Some(ys), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(malformed());
        };
        let x: f64 = xs.trim().parse().map_err(|_| malformed())?;
        let y: f64 = ys.trim().parse().map_err(|_| malformed())?;
        if !(x.is_finite() && y.is_finite()) {
            return Err(DynamicsError::NonFinite {
                path: path.to_path_buf(),
                line,
                row: raw.to_string(),
            });
        }
        points.push(Point2::new(x, y));
    }
    if points.is_empty() {
        return Err(DynamicsError::Empty {
            path: path.to_path_buf(),
        });
    }
    Trajectory::new(points, dt, TrajectoryKind::Imported)
}

fn parse_header(header: &str, line: usize, path: &Path) -> Result<Option<f64>, DynamicsError> {
    let bad = || DynamicsError::MalformedHeader {
        path: path.to_path_buf(),
        line,
        header: header.to_string(),
    };
    let mut dt = None;
    for field in header.split_whitespace() {
        match field.split_once('=') {
            Some(("dt", v)) => {
                let v: f64 = v.parse().map_err(|_| bad())?;
                if !(v > 0.0 && v.is_finite()) {
                    return Err(bad());
                }
                dt = Some(v);
            }
            Some(("kind", v)) => {
                v.parse::<TrajectoryKind>().map_err(|_| bad())?;
            }
            _ => return Err(bad()),
        }
    }
    Ok(dt)
}

pub fn load_trajectory(path: &Path) -> Result<Trajectory, DynamicsError> {
    let text = fs::read_to_string(path).map_err(|source| DynamicsError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_trajectory(&text, path)
}

/// Initial positions are drawn from this square for training and evaluation.
pub const INIT_RANGE: (f64, f64) = (-3.0, 3.0);

/// One of the three benchmark domains together with its generator settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Attractor {
    Point(PointAttractorConfig),
    Cyclic(VanDerPolConfig),
    FigureEight(FigureEightConfig),
}

impl Attractor {
    pub fn point() -> Self {
        Attractor::Point(PointAttractorConfig::default())
    }

    pub fn cyclic() -> Self {
        Attractor::Cyclic(VanDerPolConfig::default())
    }

    pub fn figure_eight() -> Self {
        Attractor::FigureEight(FigureEightConfig::default())
    }

    pub fn name(&self) -> &'static str {
        match self {
            Attractor::Point(_) => "point",
            Attractor::Cyclic(_) => "cyclic",
            Attractor::FigureEight(_) => "figure-eight",
        }
    }

    /// Default attractor for a name accepted by [`Attractor::name`].
    pub fn from_name(name: &str) -> Result<Self, DynamicsError> {
        match name {
            "point" => Ok(Self::point()),
            "cyclic" => Ok(Self::cyclic()),
            "figure-eight" => Ok(Self::figure_eight()),
            other => Err(DynamicsError::Domain(format!(
                "unknown attractor {other:?} (expected point, cyclic or figure-eight)"
            ))),
        }
    }

    pub fn dt(&self) -> f64 {
        match self {
            Attractor::Point(c) => c.dt,
            Attractor::Cyclic(c) => c.dt,
            Attractor::FigureEight(_) => 1.0,
        }
    }

    pub fn kind(&self) -> TrajectoryKind {
        match self {
            Attractor::Point(_) => TrajectoryKind::Point,
            Attractor::Cyclic(_) => TrajectoryKind::Cyclic,
            Attractor::FigureEight(_) => TrajectoryKind::FigureEight,
        }
    }

    /// Rollout length matching the training trajectories.
    pub fn steps(&self) -> usize {
        match self {
            Attractor::Point(c) => c.steps,
            Attractor::Cyclic(c) => c.steps,
            Attractor::FigureEight(c) => c.steps - 1,
        }
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        match self {
            Attractor::Point(c) => c.validate(),
            Attractor::Cyclic(c) => c.validate(),
            Attractor::FigureEight(c) => {
                let mut s = SeededSampler::new(0);
                gen_figure_eight(&FigureEightConfig { steps: 2, ..*c }, &mut s).map(|_| ())
            }
        }
    }

    /// Noise-free ground truth with `steps + 1` points. The ODEs start at
    /// `init`; the figure-eight ignores it and follows the Lissajous curve.
    pub fn reference(&self, init: Point2, steps: usize) -> Result<Trajectory, DynamicsError> {
        match self {
            Attractor::Point(c) => gen_point_attractor(&PointAttractorConfig { steps, ..*c }, init),
            Attractor::Cyclic(c) => gen_van_der_pol(&VanDerPolConfig { steps, ..*c }, init),
            Attractor::FigureEight(c) => {
                let points = (0..=steps).map(|t| lissajous(c, t)).collect();
                Trajectory::new(points, 1.0, TrajectoryKind::FigureEight)
            }
        }
    }

    /// `n` training trajectories. The ODEs use fresh random initials; every
    /// figure-eight trace gets its own noise draw.
    pub fn training_set(
        &self,
        n: usize,
        sampler: &mut SeededSampler,
    ) -> Result<Vec<Trajectory>, DynamicsError> {
        match self {
            Attractor::FigureEight(c) => (0..n).map(|_| gen_figure_eight(c, sampler)).collect(),
            _ => sample_initials(n, INIT_RANGE.0, INIT_RANGE.1, sampler)?
                .into_iter()
                .map(|init| self.reference(init, self.steps()))
                .collect(),
        }
    }
}

fn lissajous(cfg: &FigureEightConfig, t: usize) -> Point2 {
    let theta = 2.0 * std::f64::consts::PI * t as f64 * cfg.loops / cfg.steps as f64;
    Point2::new(cfg.amplitude * (2.0 * theta).sin(), cfg.amplitude * theta.sin())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ulps(a: f64, b: f64) -> u64 {
        (a.to_bits() as i64 - b.to_bits() as i64).unsigned_abs()
    }

    #[test]
    fn origin_is_a_fixed_point() {
        let t = gen_point_attractor(&PointAttractorConfig::default(), Point2::ORIGIN).unwrap();
        assert_eq!(t.len(), 101);
        assert!(t.points().iter().all(|p| *p == Point2::ORIGIN));
        let v = gen_van_der_pol(&VanDerPolConfig::default(), Point2::ORIGIN).unwrap();
        assert_eq!(v.len(), 201);
        assert!(v.points().iter().all(|p| *p == Point2::ORIGIN));
    }

    #[test]
    fn point_attractor_matches_high_precision_values() {
        // 3 * exp(-k * 0.05) evaluated at 40 digits, dt taken as the binary double 0.05.
        let frozen = [
            (1, 2.853688273502142),
            (7, 2.1140642691561404),
            (50, 0.24625499587169636),
            (100, 0.020213840997256396),
        ];
        let t = gen_point_attractor(&PointAttractorConfig::default(), Point2::new(3.0, 3.0)).unwrap();
        for (k, want) in frozen {
            let p = t.points()[k];
            assert!(ulps(p.x, want) <= 2, "x[{k}] = {} vs {want}", p.x);
            assert!(ulps(p.y, want) <= 2, "y[{k}] = {} vs {want}", p.y);
        }
        assert!((t.points()[1].x - 2.8536882735).abs() < 1e-10);
        let ratio = t.last().norm() / t.first().norm();
        assert!((ratio - 0.006737946999085467).abs() < 1e-15);
    }

    #[test]
    fn point_attractor_norm_strictly_decreases() {
        let t = gen_point_attractor(&PointAttractorConfig::default(), Point2::new(-2.5, 0.3)).unwrap();
        for w in t.points().windows(2) {
            assert!(w[1].norm() < w[0].norm());
        }
    }

    #[test]
    fn rejects_non_finite_init() {
        let cfg = PointAttractorConfig::default();
        assert!(matches!(
            gen_point_attractor(&cfg, Point2::new(f64::NAN, 0.0)),
            Err(DynamicsError::Domain(_))
        ));
        assert!(matches!(
            gen_van_der_pol(&VanDerPolConfig::default(), Point2::new(0.0, f64::INFINITY)),
            Err(DynamicsError::Domain(_))
        ));
    }

    #[test]
    fn large_dt_reports_divergence() {
        let cfg = VanDerPolConfig {
            mu: 5.0,
            steps: 200,
            dt: 2.0,
        };
        assert!(matches!(
            gen_van_der_pol(&cfg, Point2::new(3.0, 3.0)),
            Err(DynamicsError::Diverged { .. })
        ));
    }

    #[test]
    fn harmonic_limit_matches_closed_form() {
        let cfg = VanDerPolConfig {
            mu: 0.0,
            steps: 200,
            dt: 0.1,
        };
        let t = gen_van_der_pol(&cfg, Point2::new(1.0, 0.0)).unwrap();
        // RK4 phase error at dt=0.1 accumulates to about 1.6e-5 after 200 steps.
        let mut worst: f64 = 0.0;
        for (k, p) in t.points().iter().enumerate() {
            let time = k as f64 * 0.1;
            worst = worst.max((p.x - time.cos()).abs()).max((p.y + time.sin()).abs());
            assert!((p.x * p.x + p.y * p.y - 1.0).abs() < 1e-5);
        }
        assert!(worst < 2e-5, "max deviation {worst}");

        let fine = VanDerPolConfig {
            mu: 0.0,
            steps: 200,
            dt: 0.01,
        };
        let t = gen_van_der_pol(&fine, Point2::new(1.0, 0.0)).unwrap();
        for (k, p) in t.points().iter().enumerate() {
            let time = k as f64 * 0.01;
            assert!((p.x - time.cos()).abs() < 1e-6);
            assert!((p.y + time.sin()).abs() < 1e-6);
        }
    }

    #[test]
    fn converges_to_limit_cycle() {
        let t = gen_van_der_pol(&VanDerPolConfig::default(), Point2::new(3.0, 3.0)).unwrap();
        for p in &t.points()[t.len() - 50..] {
            let r = p.norm();
            assert!((1.5..=2.5).contains(&r), "radius {r}");
        }
    }

    #[test]
    fn rk4_is_fourth_order() {
        let horizon = 2.0;
        let init = [2.0, 0.5];
        let integrate = |h: f64| {
            let n = (horizon / h).round() as usize;
            (0..n).fold(init, |s, _| rk4_step(0.1, s, h))
        };
        let reference = integrate(1e-4);
        let err = |h: f64| {
            let s = integrate(h);
            (s[0] - reference[0]).hypot(s[1] - reference[1])
        };
        let exponent = (err(0.1) / err(0.05)).log2();
        assert!((3.5..=4.5).contains(&exponent), "measured order {exponent}");
    }

    #[test]
    fn initials_in_range_and_deterministic() {
        let mut s = SeededSampler::new(3);
        assert!(sample_initials(0, -3.0, 3.0, &mut s).unwrap().is_empty());
        let pts = sample_initials(1000, -3.0, 3.0, &mut s).unwrap();
        assert!(pts.iter().all(|p| (-3.0..=3.0).contains(&p.x) && (-3.0..=3.0).contains(&p.y)));
        let a = sample_initials(10, -3.0, 3.0, &mut SeededSampler::new(9)).unwrap();
        let b = sample_initials(10, -3.0, 3.0, &mut SeededSampler::new(9)).unwrap();
        assert_eq!(a, b);
        assert!(sample_initials(1, 3.0, 3.0, &mut s).is_err());
    }

    #[test]
    fn figure_eight_shape() {
        let mut s = SeededSampler::new(0);
        let cfg = FigureEightConfig {
            noise_std: 0.0,
            ..Default::default()
        };
        let t = gen_figure_eight(&cfg, &mut s).unwrap();
        assert_eq!(t.len(), 560);
        assert_eq!(t.first(), Point2::ORIGIN);
        // quarter-period samples of the slow (y) component
        let quarter = 560 / (3 * 4);
        for k in (0..560).step_by(quarter / 2) {
            let p = t.points()[k];
            let expected = cfg.amplitude * (2.0 * (p.y / cfg.amplitude).asin()).sin();
            assert!((p.x.abs() - expected.abs()).abs() < 1e-9, "k={k}");
        }
        let noisy = gen_figure_eight(&FigureEightConfig::default(), &mut s).unwrap();
        assert_eq!(noisy.len(), 560);
        assert!(gen_figure_eight(
            &FigureEightConfig {
                steps: 1,
                ..Default::default()
            },
            &mut s
        )
        .is_err());
    }

    #[test]
    fn parses_plain_rows() {
        let t = parse_trajectory("0,0\n1,2", Path::new("mem")).unwrap();
        assert_eq!(t.points(), &[Point2::new(0.0, 0.0), Point2::new(1.0, 2.0)]);
        assert_eq!(t.kind(), TrajectoryKind::Imported);
    }

    #[test]
    fn reports_line_numbers() {
        match parse_trajectory("a,b", Path::new("mem")) {
            Err(DynamicsError::MalformedRow { line, .. }) => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
        match parse_trajectory("# dt=0.1 kind=point\n0,0\n1,inf\n", Path::new("mem")) {
            Err(DynamicsError::NonFinite { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            parse_trajectory("1,2,3", Path::new("mem")),
            Err(DynamicsError::MalformedRow { line: 1, .. })
        ));
        assert!(matches!(
            load_trajectory(Path::new("/nonexistent/traj.csv")),
            Err(DynamicsError::Io { .. })
        ));
    }

    #[test]
    fn header_sets_dt() {
        let t = parse_trajectory("# dt=0.25 kind=cyclic\n1,1\n", Path::new("mem")).unwrap();
        assert_eq!(t.dt(), 0.25);
    }

    #[test]
    fn attractor_references() {
        let init = Point2::new(1.0, -2.0);
        let p = Attractor::point();
        assert_eq!(p.reference(init, 100).unwrap(), gen_point_attractor(&PointAttractorConfig::default(), init).unwrap());
        assert_eq!(p.steps(), 100);
        let c = Attractor::cyclic();
        assert_eq!(c.reference(init, 200).unwrap().len(), 201);

        let f = Attractor::figure_eight();
        assert_eq!(f.steps(), 559);
        let reference = f.reference(init, f.steps()).unwrap();
        let clean = FigureEightConfig { noise_std: 0.0, ..Default::default() };
        let direct = gen_figure_eight(&clean, &mut SeededSampler::new(0)).unwrap();
        assert_eq!(reference.points(), direct.points());
    }

    #[test]
    fn attractor_training_sets() {
        for a in [Attractor::point(), Attractor::cyclic(), Attractor::figure_eight()] {
            let set = a.training_set(3, &mut SeededSampler::new(4)).unwrap();
            assert_eq!(set.len(), 3);
            assert!(set.iter().all(|t| t.len() == a.steps() + 1));
            assert_ne!(set[0].points()[1], set[1].points()[1]);
            assert_eq!(Attractor::from_name(a.name()).unwrap(), a);
        }
        assert!(Attractor::from_name("lorenz").is_err());
    }

    #[test]
    fn attractor_serde_is_tagged() {
        let text = serde_json::to_string(&Attractor::cyclic()).unwrap();
        assert!(text.contains("\"kind\":\"cyclic\""), "{text}");
        let back: Attractor = serde_json::from_str(&text).unwrap();
        assert_eq!(back, Attractor::cyclic());
    }
}
