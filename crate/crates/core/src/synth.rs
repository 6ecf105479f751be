//! Synthetic corridor data with known link travel times.
//!
//! Historic link times follow a positive random walk along the corridor, and
//! each day a few links receive Laplace-distributed deviations. Vehicles
//! drive the whole corridor at piecewise-constant speed and report fixes at
//! a coarse, jittered interval, optionally with GPS noise and an injected
//! commercial stop.
//!
//! All randomness derives from `seed` through separate ChaCha streams, so
//! the truth does not depend on how many vehicles are simulated and each day
//! can be generated independently.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{interpolate, GeoPoint, LocalFrame};
use crate::network::RoadNetwork;
use crate::preprocess::{GpsFix, Trace};

pub const TRUTH_STREAM: u64 = 1;
pub const SPLIT_STREAM: u64 = 2;
pub const FOLD_STREAM: u64 = 3;
const DAY_STREAM_BASE: u64 = 1 << 16;

/// Floor on any link's true travel time on any day, seconds.
pub const MIN_LINK_TIME_S: f64 = 0.1;

/// 2008-04-05 00:00:00 UTC.
pub const DEFAULT_START_UNIX: i64 = 1_207_353_600;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_links: usize,
    pub link_length_m: f64,
    pub n_days: usize,
    /// Vehicles driving the corridor per day.
    pub paths_per_day: usize,
    pub sample_interval_s: f64,
    /// Relative half-width of the uniform jitter on each sampling interval.
    pub jitter_frac: f64,
    pub gps_noise_sigma_m: f64,
    pub incident_prob: f64,
    pub incident_scale_s: f64,
    /// Standard deviation of a vehicle's end-to-end corridor time around the
    /// day's true total.
    pub obs_noise_sigma_s: f64,
    pub stop_injection_prob: f64,
    /// Stop geometry: clusters have `stop_n_max + 2` fixes spread within
    /// `stop_d_max_m / 2`.
    pub stop_n_max: usize,
    pub stop_d_max_m: f64,
    pub base_speed_mps: f64,
    pub origin: [f64; 2],
    pub heading_deg: f64,
    pub start_unix: i64,
    pub window_start_hour: u32,
    pub window_end_hour: u32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_links: 30,
            link_length_m: 150.0,
            n_days: 22,
            paths_per_day: 5,
            sample_interval_s: 150.0,
            jitter_frac: 0.1,
            gps_noise_sigma_m: 10.0,
            incident_prob: 0.1,
            incident_scale_s: 10.0,
            obs_noise_sigma_s: 2.0,
            stop_injection_prob: 0.2,
            stop_n_max: 2,
            stop_d_max_m: 50.0,
            base_speed_mps: 5.0,
            origin: [28.55, 77.20],
            heading_deg: 60.0,
            start_unix: DEFAULT_START_UNIX,
            window_start_hour: 8,
            window_end_hour: 9,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// All noise sources and stops switched off.
    pub fn noise_free(mut self) -> Self {
        self.jitter_frac = 0.0;
        self.gps_noise_sigma_m = 0.0;
        self.obs_noise_sigma_s = 0.0;
        self.incident_prob = 0.0;
        self.stop_injection_prob = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n_links == 0 || self.n_days == 0 || self.paths_per_day == 0 {
            return bad("n_links, n_days and paths_per_day must be >= 1".into());
        }
        for (name, p) in [
            ("incident_prob", self.incident_prob),
            ("stop_injection_prob", self.stop_injection_prob),
            ("jitter_frac", self.jitter_frac),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} is outside [0, 1]"));
            }
        }
        for (name, v) in [
            ("link_length_m", self.link_length_m),
            ("sample_interval_s", self.sample_interval_s),
            ("incident_scale_s", self.incident_scale_s),
            ("base_speed_mps", self.base_speed_mps),
            ("stop_d_max_m", self.stop_d_max_m),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be > 0, got {v}"));
            }
        }
        for (name, v) in [
            ("gps_noise_sigma_m", self.gps_noise_sigma_m),
            ("obs_noise_sigma_s", self.obs_noise_sigma_s),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be >= 0, got {v}"));
            }
        }
        if self.sample_interval_s.round() < 1.0 {
            return bad("sample_interval_s must round to at least 1 s".into());
        }
        if self.window_end_hour <= self.window_start_hour || self.window_end_hour > 24 {
            return bad(format!(
                "bad time window {}..{}",
                self.window_start_hour, self.window_end_hour
            ));
        }
        GeoPoint::new(self.origin[0], self.origin[1])
            .map_err(|e| Error::Config(format!("origin: {e}")))?;
        Ok(())
    }

    /// Unix time at the start of a day's observation window.
    pub fn window_start(&self, day: usize) -> i64 {
        self.start_unix + day as i64 * 86_400 + i64::from(self.window_start_hour) * 3_600
    }
}

/// Calendar date (UTC) of a unix timestamp, `YYYY-MM-DD`.
pub fn day_id(t: i64) -> String {
    chrono::DateTime::from_timestamp(t, 0)
        .map(|d| d.date_naive().to_string())
        .unwrap_or_else(|| format!("t{t}"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub theta_star: Vec<f64>,
    /// One deviation vector per day.
    pub delta_star: Vec<Vec<f64>>,
}

impl GroundTruth {
    pub fn day_link_times(&self, day: usize) -> Vec<f64> {
        self.theta_star
            .iter()
            .zip(&self.delta_star[day])
            .map(|(t, d)| t + d)
            .collect()
    }
}

/// A generated trace with the information needed to score the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedTrace {
    pub trace: Trace,
    /// Link the vehicle was actually on at each fix.
    pub true_segments: Vec<usize>,
    /// Fixes belonging to an injected stop.
    pub is_stop: Vec<bool>,
    pub entry_time: i64,
    /// Time from entering the corridor to leaving it, excluding any stop.
    pub transit_s: f64,
}

fn straight_corridor(cfg: &SynthConfig) -> Result<RoadNetwork> {
    let origin = GeoPoint::new(cfg.origin[0], cfg.origin[1])?;
    let frame = LocalFrame::new(origin);
    let (s, c) = cfg.heading_deg.to_radians().sin_cos();
    let nodes: Vec<GeoPoint> = (0..=cfg.n_links)
        .map(|i| {
            let d = i as f64 * cfg.link_length_m;
            frame.to_geo(d * s, d * c)
        })
        .collect::<Result<_>>()?;
    let links: Vec<_> = nodes.windows(2).map(|w| (w[0], w[1])).collect();
    RoadNetwork::from_links(&links)
}

pub fn generate_truth(cfg: &SynthConfig) -> Result<(RoadNetwork, GroundTruth)> {
    cfg.validate()?;
    let net = straight_corridor(cfg)?;
    let mut rng = stream_rng(cfg.seed, TRUTH_STREAM);

    let base = cfg.link_length_m / cfg.base_speed_mps;
    let step = Normal::new(0.0, 0.1 * base).expect("positive scale");
    let floor = 0.3 * base;
    let mut theta_star = Vec::with_capacity(cfg.n_links);
    let mut current = base * rng.random_range(0.8..1.2);
    for _ in 0..cfg.n_links {
        theta_star.push(current);
        current = (current + step.sample(&mut rng)).max(floor);
    }

    let magnitude = Exp::new(1.0 / cfg.incident_scale_s).expect("positive scale");
    let delta_star = (0..cfg.n_days)
        .map(|_| {
            theta_star
                .iter()
                .map(|&theta| {
                    if rng.random::<f64>() < cfg.incident_prob {
                        let m = magnitude.sample(&mut rng);
                        let signed = if rng.random::<bool>() { m } else { -m };
                        signed.max(MIN_LINK_TIME_S - theta)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();

    Ok((
        net,
        GroundTruth {
            theta_star,
            delta_star,
        },
    ))
}

fn position_at(
    net: &RoadNetwork,
    cumulative: &[f64],
    link_times: &[f64],
    elapsed: f64,
) -> Result<(usize, GeoPoint)> {
    let n = link_times.len();
    // last link whose start is not after `elapsed`
    let link = cumulative[..n]
        .partition_point(|&c| c <= elapsed)
        .saturating_sub(1);
    let along = ((elapsed - cumulative[link]) / link_times[link]).clamp(0.0, 1.0);
    let seg = &net.segments()[link];
    Ok((link, interpolate(seg.a, seg.b, 1.0 - along)?))
}

fn add_planar_offset(p: GeoPoint, dx: f64, dy: f64) -> Result<GeoPoint> {
    LocalFrame::new(p).to_geo(dx, dy)
}

/// Traces of every vehicle on `day`, with per-fix ground truth.
pub fn generate_day(
    net: &RoadNetwork,
    truth: &GroundTruth,
    day: usize,
    cfg: &SynthConfig,
) -> Result<Vec<SimulatedTrace>> {
    cfg.validate()?;
    if day >= truth.delta_star.len() {
        return Err(Error::InvalidInput(format!(
            "day {day} is beyond the {} generated days",
            truth.delta_star.len()
        )));
    }
    let n = net.n_links();
    let mut rng = stream_rng(cfg.seed, DAY_STREAM_BASE + day as u64);
    let day_times = truth.day_link_times(day);
    let link_noise = Normal::new(0.0, cfg.obs_noise_sigma_s / (n as f64).sqrt())
        .map_err(|e| Error::Config(e.to_string()))?;
    let gps_noise =
        Normal::new(0.0, cfg.gps_noise_sigma_m).map_err(|e| Error::Config(e.to_string()))?;
    let interval = cfg.sample_interval_s.round() as i64;
    let window = i64::from(cfg.window_end_hour - cfg.window_start_hour) * 3_600;
    let stop_radius = cfg.stop_d_max_m / 4.0;

    let mut out = Vec::with_capacity(cfg.paths_per_day);
    for v in 0..cfg.paths_per_day {
        let vehicle_id = format!("d{day:02}v{v:03}");
        let entry_time = cfg.window_start(day) + rng.random_range(0..(window / 2).max(1));

        let link_times: Vec<f64> = day_times
            .iter()
            .map(|&t| {
                let noise = if cfg.obs_noise_sigma_s > 0.0 {
                    link_noise.sample(&mut rng)
                } else {
                    0.0
                };
                (t + noise).max(MIN_LINK_TIME_S)
            })
            .collect();
        let mut cumulative = Vec::with_capacity(n + 1);
        cumulative.push(0.0);
        for t in &link_times {
            cumulative.push(cumulative.last().unwrap() + t);
        }
        let transit_s = cumulative[n];

        let mut times = Vec::new();
        let mut t = entry_time + rng.random_range(0..interval);
        while ((t - entry_time) as f64) <= transit_s {
            times.push(t);
            let jitter = if cfg.jitter_frac > 0.0 {
                rng.random_range(-cfg.jitter_frac..=cfg.jitter_frac)
            } else {
                0.0
            };
            t += ((cfg.sample_interval_s * (1.0 + jitter)).round() as i64).max(1);
        }

        let mut fixes = Vec::with_capacity(times.len());
        let mut true_segments = Vec::with_capacity(times.len());
        let mut truth_pos = Vec::with_capacity(times.len());
        for &t in &times {
            let (link, pos) =
                position_at(net, &cumulative, &link_times, (t - entry_time) as f64)?;
            let observed = if cfg.gps_noise_sigma_m > 0.0 {
                add_planar_offset(pos, gps_noise.sample(&mut rng), gps_noise.sample(&mut rng))?
            } else {
                pos
            };
            fixes.push(GpsFix {
                t,
                pos: observed,
                vehicle_id: vehicle_id.clone(),
            });
            true_segments.push(link);
            truth_pos.push(pos);
        }
        let mut is_stop = vec![false; fixes.len()];

        if fixes.len() >= 3 && rng.random::<f64>() < cfg.stop_injection_prob {
            let k = rng.random_range(1..fixes.len() - 1);
            let cluster = cfg.stop_n_max + 2;
            let dwell = (cluster as i64 - 1) * interval;
            for f in &mut fixes[k + 1..] {
                f.t += dwell;
            }
            let mut stop_fixes = Vec::with_capacity(cluster);
            for j in 0..cluster {
                let r = stop_radius * rng.random::<f64>().sqrt();
                let a = rng.random_range(0.0..std::f64::consts::TAU);
                stop_fixes.push(GpsFix {
                    t: times[k] + j as i64 * interval,
                    pos: add_planar_offset(truth_pos[k], r * a.cos(), r * a.sin())?,
                    vehicle_id: vehicle_id.clone(),
                });
            }
            let seg = true_segments[k];
            fixes.splice(k..=k, stop_fixes);
            true_segments.splice(k..=k, std::iter::repeat_n(seg, cluster));
            is_stop.splice(k..=k, std::iter::repeat_n(true, cluster));
        }

        out.push(SimulatedTrace {
            trace: Trace::new(vehicle_id, fixes)?,
            true_segments,
            is_stop,
            entry_time,
            transit_s,
        });
    }
    Ok(out)
}

pub fn generate_day_traces(
    net: &RoadNetwork,
    truth: &GroundTruth,
    day: usize,
    cfg: &SynthConfig,
) -> Result<Vec<Trace>> {
    Ok(generate_day(net, truth, day, cfg)?
        .into_iter()
        .map(|s| s.trace)
        .collect())
}
