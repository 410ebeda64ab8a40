//! Synthetic building telemetry and ground-truth anomaly injection.

use std::f64::consts::PI;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{second_of_day, weekday, AlignedFrame, Timestamp};
use crate::repro::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    /// `baseline + amplitude * cos(2π (hour - phase) / 24)`.
    Diurnal,
    /// `baseline + amplitude` while the building is occupied, shifted by
    /// `phase` hours.
    Occupancy,
    /// Half-sine between sunrise and sunset.
    Daylight,
    /// Random walk kept within `baseline ± amplitude`; `noise_sd` is the step.
    RandomWalk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamSpec {
    pub name: String,
    pub shape: Shape,
    pub baseline: f64,
    pub amplitude: f64,
    #[serde(default)]
    pub phase: f64,
    pub noise_sd: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clamp: Option<(f64, f64)>,
}

impl StreamSpec {
    fn new(name: &str, shape: Shape, baseline: f64, amplitude: f64, phase: f64, noise_sd: f64) -> Self {
        Self {
            name: name.to_string(),
            shape,
            baseline,
            amplitude,
            phase,
            noise_sd,
            clamp: None,
        }
    }

    fn unit(mut self) -> Self {
        self.clamp = Some((0.0, 1.0));
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    /// Occupied hours `[start, end)` on weekdays (Monday to Friday).
    pub weekday_start: f64,
    pub weekday_end: f64,
    pub weekend_occupied: bool,
    pub sunrise: f64,
    pub sunset: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            weekday_start: 7.0,
            weekday_end: 18.0,
            weekend_occupied: false,
            sunrise: 6.0,
            sunset: 20.0,
        }
    }
}

impl Schedule {
    pub fn occupied(&self, ts: Timestamp) -> bool {
        let h = second_of_day(ts) as f64 / 3600.0;
        (self.weekend_occupied || weekday(ts) < 5) && h >= self.weekday_start && h < self.weekday_end
    }

    fn daylight(&self, ts: Timestamp) -> f64 {
        let h = second_of_day(ts) as f64 / 3600.0;
        if h <= self.sunrise || h >= self.sunset {
            0.0
        } else {
            (PI * (h - self.sunrise) / (self.sunset - self.sunrise)).sin()
        }
    }
}

/// 2021-06-14T00:00:00Z, a Monday.
pub const DEFAULT_START: Timestamp = 1_623_628_800;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    #[serde(default = "default_start")]
    pub start: Timestamp,
    /// Seconds.
    pub duration: i64,
    pub grid_period: i64,
    pub streams: Vec<StreamSpec>,
    #[serde(default)]
    pub schedule: Schedule,
    pub seed: u64,
}

fn default_start() -> Timestamp {
    DEFAULT_START
}

/// One stream per unique sensor of the reference deployment.
pub fn default_streams() -> Vec<StreamSpec> {
    use Shape::*;
    vec![
        StreamSpec::new("all-in-1/A", Diurnal, 0.75, 0.01, 14.0, 0.003).unit(),
        StreamSpec::new("all-in-1/L", Occupancy, 0.02, 0.6, 0.0, 0.02).unit(),
        StreamSpec::new("all-in-1/M", Occupancy, 0.01, 0.05, 0.0, 0.005).unit(),
        StreamSpec::new("ble_devices/p", RandomWalk, 0.5, 0.3, 0.0, 0.01).unit(),
        StreamSpec::new("co2/C", Occupancy, 0.15, 0.1, 1.0, 0.005).unit(),
        StreamSpec::new("infra/max", Occupancy, 0.002, 0.01, 0.0, 0.001).unit(),
        StreamSpec::new("nir/artificial", Occupancy, 0.0, 0.9, 0.0, 0.02).unit(),
        StreamSpec::new("nir/natural", Daylight, 0.0, 0.9, 0.0, 0.01).unit(),
        StreamSpec::new("pir/Q", Occupancy, 0.03, 0.1, 0.0, 0.01).unit(),
        StreamSpec::new("sense-hat/humidity", Diurnal, 40.0, 3.0, 4.0, 0.3),
        StreamSpec::new("sense-hat/temp", Diurnal, 24.0, 1.5, 15.0, 0.1),
        StreamSpec::new("sound3/p", Occupancy, 0.01, 0.5, 0.0, 0.03).unit(),
        StreamSpec::new("sound4/score", Occupancy, 0.02, 0.3, 0.0, 0.02).unit(),
        StreamSpec::new("wifi_devices/p", RandomWalk, 0.4, 0.3, 0.0, 0.01).unit(),
    ]
}

impl ScenarioConfig {
    pub fn week(seed: u64) -> Self {
        Self {
            start: DEFAULT_START,
            duration: 7 * 86_400,
            grid_period: 60,
            streams: default_streams(),
            schedule: Schedule::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.duration <= 0 || self.grid_period <= 0 {
            return Err(Error::validation("duration and grid_period must be positive"));
        }
        if self.streams.is_empty() {
            return Err(Error::validation("scenario has no streams"));
        }
        for s in &self.streams {
            if !(s.noise_sd >= 0.0) || !s.baseline.is_finite() || !s.amplitude.is_finite() {
                return Err(Error::validation(format!("stream `{}` has invalid parameters", s.name)));
            }
        }
        Ok(())
    }
}

/// Renders the scenario on its grid. Every stream draws from its own seed,
/// so adding a stream does not change the others.
pub fn generate(cfg: &ScenarioConfig) -> Result<AlignedFrame> {
    cfg.validate()?;
    let rows = (cfg.duration / cfg.grid_period) as usize;
    if rows == 0 {
        return Err(Error::validation("duration shorter than one grid period"));
    }
    let mut specs = cfg.streams.clone();
    specs.sort_by(|a, b| a.name.cmp(&b.name));
    let columns: Vec<String> = specs.iter().map(|s| s.name.clone()).collect();
    let grid: Vec<Timestamp> = (0..rows as i64).map(|k| cfg.start + k * cfg.grid_period).collect();
    let w = specs.len();
    let mut values = vec![0.0; rows * w];
    for (c, s) in specs.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &s.name, 0));
        let noise = Normal::new(0.0, s.noise_sd).map_err(|e| Error::validation(e.to_string()))?;
        let mut walk = s.baseline;
        for (r, &ts) in grid.iter().enumerate() {
            let hour = second_of_day(ts) as f64 / 3600.0;
            let v = match s.shape {
                Shape::Diurnal => {
                    s.baseline + s.amplitude * (2.0 * PI * (hour - s.phase) / 24.0).cos() + noise.sample(&mut rng)
                }
                Shape::Occupancy => {
                    let shifted = ts - (s.phase * 3600.0) as i64;
                    let occ = if cfg.schedule.occupied(shifted) { 1.0 } else { 0.0 };
                    s.baseline + s.amplitude * occ + noise.sample(&mut rng)
                }
                Shape::Daylight => s.baseline + s.amplitude * cfg.schedule.daylight(ts) + noise.sample(&mut rng),
                Shape::RandomWalk => {
                    let (lo, hi) = (s.baseline - s.amplitude.abs(), s.baseline + s.amplitude.abs());
                    walk += noise.sample(&mut rng);
                    // Reflect at the bounds.
                    if walk > hi {
                        walk = (2.0 * hi - walk).max(lo);
                    } else if walk < lo {
                        walk = (2.0 * lo - walk).min(hi);
                    }
                    walk
                }
            };
            values[r * w + c] = match s.clamp {
                Some((lo, hi)) => v.clamp(lo, hi),
                None => v,
            };
        }
    }
    AlignedFrame::new(cfg.grid_period, grid, columns, values, vec![true; rows * w])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectionKind {
    Point,
    Contextual,
    Collective,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Magnitude {
    /// Offset by `k` population standard deviations of the stream.
    Sigma { k: f64 },
    /// Values drawn from the same stream on the same day within
    /// `[from_hour, to_hour)`.
    Donor { from_hour: f64, to_hour: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Injection {
    pub kind: InjectionKind,
    pub streams: Vec<String>,
    pub start: Timestamp,
    /// Inclusive.
    pub end: Timestamp,
    pub magnitude: Magnitude,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InjectionLog {
    pub entries: Vec<Injection>,
    /// Grid period of the frame the log applies to.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period_seconds: Option<i64>,
    /// First and last grid timestamps of that frame.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<(Timestamp, Timestamp)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_digest: Option<String>,
}

impl InjectionLog {
    pub fn new(entries: Vec<Injection>) -> Self {
        Self {
            entries,
            ..Default::default()
        }
    }

    /// Records the timeline of `frame` so evaluation can check it.
    pub fn bind(&mut self, frame: &AlignedFrame) {
        self.period_seconds = Some(frame.period());
        self.span = frame.grid().first().zip(frame.grid().last()).map(|(a, b)| (*a, *b));
        self.frame_digest = Some(frame.digest());
    }

    pub fn validate(&self, frame: &AlignedFrame) -> Result<()> {
        let (first, last) = match (frame.grid().first(), frame.grid().last()) {
            (Some(a), Some(b)) => (*a, *b),
            _ => return Err(Error::EmptyFrame("cannot inject into an empty frame".into())),
        };
        for (n, e) in self.entries.iter().enumerate() {
            let bad = |m: String| Error::validation(format!("injection {n}: {m}"));
            if e.streams.is_empty() {
                return Err(bad("no streams".into()));
            }
            if e.start > e.end || e.start < first || e.end > last {
                return Err(bad(format!(
                    "interval [{}, {}] outside frame [{first}, {last}]",
                    e.start, e.end
                )));
            }
            if e.kind == InjectionKind::Point && (e.start != e.end || e.streams.len() != 1) {
                return Err(bad("point injections cover one stream at one tick".into()));
            }
            for s in &e.streams {
                if frame.column_index(s).is_none() {
                    return Err(bad(format!("unknown stream `{s}`")));
                }
            }
            match e.magnitude {
                Magnitude::Sigma { k } if k == 0.0 || !k.is_finite() => {
                    return Err(bad("sigma multiple must be finite and nonzero".into()))
                }
                Magnitude::Donor { from_hour, to_hour } if !(from_hour < to_hour) => {
                    return Err(bad("donor hours must satisfy from < to".into()))
                }
                _ => {}
            }
            for other in &self.entries[..n] {
                let shares = other.streams.iter().any(|s| e.streams.contains(s));
                if shares && other.start <= e.end && e.start <= other.end {
                    return Err(bad("overlaps an earlier injection on the same stream".into()));
                }
            }
        }
        Ok(())
    }
}

/// Applies the logged anomalies. Cells outside the logged intervals are
/// returned bit-identical.
pub fn inject(frame: &AlignedFrame, log: &InjectionLog, seed: u64) -> Result<AlignedFrame> {
    log.validate(frame)?;
    let w = frame.width();
    let mut values = frame.values().to_vec();
    let sd = |c: usize| -> Result<f64> {
        let xs = frame.column_values(c);
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        let sd = (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt();
        if sd > 0.0 {
            Ok(sd)
        } else {
            Err(Error::DegenerateColumn {
                column: frame.columns()[c].clone(),
                reason: "sigma injection on a constant stream".into(),
            })
        }
    };
    for (n, e) in log.entries.iter().enumerate() {
        let rows: Vec<usize> = (0..frame.rows())
            .filter(|&r| (e.start..=e.end).contains(&frame.grid()[r]))
            .collect();
        if rows.is_empty() {
            return Err(Error::validation(format!("injection {n} covers no grid row")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "inject", n as u64));
        let mut changed = false;
        for s in &e.streams {
            let c = frame.column_index(s).unwrap();
            for &r in &rows {
                if !frame.mask()[r * w + c] {
                    return Err(Error::validation(format!(
                        "injection {n} targets a missing cell of `{s}`"
                    )));
                }
            }
            match e.magnitude {
                Magnitude::Sigma { k } => {
                    let delta = k * sd(c)?;
                    for &r in &rows {
                        values[r * w + c] += delta;
                    }
                    changed = true;
                }
                Magnitude::Donor { from_hour, to_hour } => {
                    for &r in &rows {
                        let day = frame.grid()[r].div_euclid(86_400);
                        let donors: Vec<f64> = (0..frame.rows())
                            .filter(|&d| {
                                let ts = frame.grid()[d];
                                let h = second_of_day(ts) as f64 / 3600.0;
                                ts.div_euclid(86_400) == day
                                    && h >= from_hour
                                    && h < to_hour
                                    && frame.mask()[d * w + c]
                            })
                            .map(|d| frame.values()[d * w + c])
                            .collect();
                        let v = *donors.choose(&mut rng).ok_or_else(|| {
                            Error::validation(format!("injection {n}: no donor values for `{s}`"))
                        })?;
                        changed |= v != values[r * w + c];
                        values[r * w + c] = v;
                    }
                }
            }
        }
        if !changed {
            return Err(Error::validation(format!("injection {n} would not alter any cell")));
        }
    }
    AlignedFrame::new(
        frame.period(),
        frame.grid().to_vec(),
        frame.columns().to_vec(),
        values,
        frame.mask().to_vec(),
    )
}

/// A reference test week: `points` single-cell spikes of `sigma`
/// deviations at random daytime ticks plus `bursts` night-time sound and
/// light bursts at 21:00 on weekdays, each `burst_minutes` long.
pub fn reference_injections(
    frame: &AlignedFrame,
    points: usize,
    sigma: f64,
    bursts: usize,
    burst_minutes: i64,
    seed: u64,
) -> Result<InjectionLog> {
    const BURST_STREAMS: [&str; 4] = ["all-in-1/L", "nir/artificial", "sound3/p", "sound4/score"];
    let first = *frame
        .grid()
        .first()
        .ok_or_else(|| Error::EmptyFrame("empty frame".into()))?;
    let last = *frame.grid().last().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "reference-injections", 0));
    let mut entries = Vec::new();

    let burst_streams: Vec<String> = BURST_STREAMS
        .iter()
        .filter(|s| frame.column_index(s).is_some())
        .map(|s| s.to_string())
        .collect();
    if bursts > 0 && burst_streams.is_empty() {
        return Err(Error::validation("frame has none of the burst streams"));
    }
    let weekdays: Vec<i64> = (first.div_euclid(86_400)..=last.div_euclid(86_400))
        .filter(|d| weekday(d * 86_400) < 5)
        .collect();
    let spacing = (weekdays.len() / bursts.max(1)).max(1);
    for b in 0..bursts {
        let day = *weekdays
            .get(b * spacing)
            .ok_or_else(|| Error::validation("not enough weekdays for the requested bursts"))?;
        let start = day * 86_400 + 21 * 3600;
        let end = start + (burst_minutes - 1) * 60;
        if end > last {
            return Err(Error::validation("burst runs past the end of the frame"));
        }
        entries.push(Injection {
            kind: InjectionKind::Contextual,
            streams: burst_streams.clone(),
            start,
            end,
            magnitude: Magnitude::Donor {
                from_hour: 9.0,
                to_hour: 17.0,
            },
        });
    }

    // Spikes at least two hours away from everything already placed.
    let mut placed: Vec<Timestamp> = entries.iter().map(|e| e.start).collect();
    let mut attempts = 0;
    while entries.len() < bursts + points {
        attempts += 1;
        if attempts > 100_000 {
            return Err(Error::validation("could not place point injections"));
        }
        let r = rng.random_range(0..frame.rows());
        let ts = frame.grid()[r];
        let h = second_of_day(ts) / 3600;
        if !(8..17).contains(&h) || placed.iter().any(|p| (p - ts).abs() < 2 * 3600) {
            continue;
        }
        let c = rng.random_range(0..frame.width());
        placed.push(ts);
        entries.push(Injection {
            kind: InjectionKind::Point,
            streams: vec![frame.columns()[c].clone()],
            start: ts,
            end: ts,
            magnitude: Magnitude::Sigma { k: sigma },
        });
    }
    Ok(InjectionLog::new(entries))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> ScenarioConfig {
        ScenarioConfig {
            duration: 2 * 86_400,
            grid_period: 300,
            ..ScenarioConfig::week(seed)
        }
    }

    #[test]
    fn same_seed_same_frame() {
        assert_eq!(generate(&small(3)).unwrap(), generate(&small(3)).unwrap());
        assert_ne!(generate(&small(3)).unwrap(), generate(&small(4)).unwrap());
    }

    #[test]
    fn flat_config_is_constant() {
        let mut cfg = small(1);
        for s in &mut cfg.streams {
            s.amplitude = 0.0;
            s.noise_sd = 0.0;
        }
        let f = generate(&cfg).unwrap();
        for c in 0..f.width() {
            let col = f.column_values(c);
            assert!(col.iter().all(|v| *v == col[0]), "{}", f.columns()[c]);
        }
    }

    #[test]
    fn no_streams_is_an_error() {
        let mut cfg = small(1);
        cfg.streams.clear();
        assert!(generate(&cfg).is_err());
    }

    #[test]
    fn point_spike_changes_one_cell() {
        let f = generate(&small(2)).unwrap();
        let ts = f.grid()[100];
        let log = InjectionLog::new(vec![Injection {
            kind: InjectionKind::Point,
            streams: vec!["sense-hat/temp".into()],
            start: ts,
            end: ts,
            magnitude: Magnitude::Sigma { k: 10.0 },
        }]);
        let g = inject(&f, &log, 0).unwrap();
        let diff = f.values().iter().zip(g.values()).filter(|(a, b)| a != b).count();
        assert_eq!(diff, 1);
        assert_eq!(inject(&f, &InjectionLog::default(), 0).unwrap(), f);
    }

    #[test]
    fn invalid_logs() {
        let f = generate(&small(2)).unwrap();
        let mk = |start: i64, end: i64, kind| Injection {
            kind,
            streams: vec!["sound3/p".into()],
            start,
            end,
            magnitude: Magnitude::Sigma { k: 3.0 },
        };
        let g = f.grid();
        let outside = InjectionLog::new(vec![mk(g[0] - 300, g[0], InjectionKind::Collective)]);
        assert!(inject(&f, &outside, 0).is_err());
        let overlap = InjectionLog::new(vec![
            mk(g[10], g[20], InjectionKind::Collective),
            mk(g[20], g[30], InjectionKind::Collective),
        ]);
        assert!(inject(&f, &overlap, 0).is_err());
        let wide_point = InjectionLog::new(vec![mk(g[10], g[11], InjectionKind::Point)]);
        assert!(inject(&f, &wide_point, 0).is_err());
    }
}
