//! Synthetic UWB environment and channel impulse response generator.
//!
//! The simulator produces labelled samples in the same shape a real
//! deployment would deliver: per-anchor IQ CIRs, the index of the detected
//! first path inside each CIR, and the reception timestamp derived from it.
//! Line of sight is decided geometrically against axis-aligned obstacle
//! boxes. Blocked links lose most of their direct-path energy so a later
//! reflection is detected as the first path, which delays the timestamp and
//! biases the range positively.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tdoa::{Anchor, Point3, SPEED_OF_LIGHT};

/// CIR sample period, seconds.
pub const SAMPLE_PERIOD: f64 = 1e-9;

/// Axis-aligned box, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Obstacle {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, p: &Point3) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }

    /// Parameter interval `(t_enter, t_exit)` where `a + t (b - a)` is inside
    /// the box, or `None` if the line misses it.
    fn slab_interval(&self, a: &Point3, b: &Point3) -> Option<(f64, f64)> {
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        for k in 0..3 {
            let d = b[k] - a[k];
            if d == 0.0 {
                if a[k] < self.min[k] || a[k] > self.max[k] {
                    return None;
                }
            } else {
                let (mut lo, mut hi) = ((self.min[k] - a[k]) / d, (self.max[k] - a[k]) / d);
                if lo > hi {
                    std::mem::swap(&mut lo, &mut hi);
                }
                t0 = t0.max(lo);
                t1 = t1.min(hi);
            }
        }
        (t0 <= t1).then_some((t0, t1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub anchors: Vec<Anchor>,
    pub obstacles: Vec<Obstacle>,
    /// Maximum coordinate values `(X, Y, Z)`.
    pub extent: [f64; 3],
}

impl Environment {
    pub fn new(anchors: Vec<Anchor>, obstacles: Vec<Obstacle>, extent: [f64; 3]) -> Result<Self> {
        let env = Self {
            anchors,
            obstacles,
            extent,
        };
        env.validate()?;
        Ok(env)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.extent.iter().all(|e| e.is_finite() && *e > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "environment extent must be strictly positive, got {:?}",
                self.extent
            )));
        }
        crate::tdoa::validate_anchors(&self.anchors)?;
        for a in &self.anchors {
            if !self.contains(&a.position) {
                return Err(Error::OutOfBounds(format!(
                    "anchor {} at {:?} lies outside the environment",
                    a.id,
                    a.position.as_slice()
                )));
            }
        }
        Ok(())
    }

    pub fn contains(&self, p: &Point3) -> bool {
        (0..3).all(|k| p[k] >= 0.0 && p[k] <= self.extent[k])
    }

    pub fn anchor(&self, id: u32) -> Option<&Anchor> {
        self.anchors.iter().find(|a| a.id == id)
    }

    /// 0-based row of an anchor in fixed ordering (position in `anchors`).
    pub fn anchor_row(&self, id: u32) -> Option<usize> {
        self.anchors.iter().position(|a| a.id == id)
    }

    pub fn extent_point(&self) -> Point3 {
        Point3::from(self.extent)
    }

    pub fn is_free(&self, p: &Point3, margin: f64) -> bool {
        self.contains(p)
            && !self
                .obstacles
                .iter()
                .any(|o| (0..3).all(|k| p[k] >= o.min[k] - margin && p[k] <= o.max[k] + margin))
    }

    /// 30 m x 10 m x 3 m hall with three long racks and 15 anchors.
    pub fn default_warehouse() -> Self {
        let mut anchors = Vec::with_capacity(15);
        let xs = [1.0, 8.0, 15.0, 22.0, 29.0];
        let mut id = 1;
        for (row, y) in [0.3, 5.0, 9.7].into_iter().enumerate() {
            for (col, x) in xs.into_iter().enumerate() {
                let z = match (row, col % 2) {
                    (1, _) => 2.9,
                    (_, 0) => 2.8,
                    _ => 1.6,
                };
                anchors.push(Anchor::new(id, x, y, z));
                id += 1;
            }
        }
        let rack = |y0: f64, y1: f64| Obstacle::new([4.0, y0, 0.0], [26.0, y1, 2.6]);
        Self {
            anchors,
            obstacles: vec![rack(2.2, 3.2), rack(4.5, 5.5), rack(6.8, 7.8)],
            extent: [30.0, 10.0, 3.0],
        }
    }
}

/// True iff the open segment tag→anchor crosses no obstacle.
pub fn los_status(tag: &Point3, anchor: &Anchor, obstacles: &[Obstacle]) -> bool {
    !obstacles.iter().any(|o| match o.slab_interval(tag, &anchor.position) {
        Some((t0, t1)) => t1 > 0.0 && t0 < 1.0,
        None => false,
    })
}

/// One received IQ CIR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawCir {
    pub anchor_id: u32,
    pub iq: Vec<Complex64>,
    pub first_path_index: usize,
    /// Reception timestamp of the detected first path, seconds.
    pub rx_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub sample_id: u64,
    pub true_position: Point3,
    pub tx_time: f64,
    pub raw_cirs: Vec<RawCir>,
}

impl Sample {
    pub fn detected_anchor_ids(&self) -> Vec<u32> {
        self.raw_cirs.iter().map(|c| c.anchor_id).collect()
    }

    /// Timestamps keyed by anchor id, ready for DDoA computation.
    pub fn timestamps(&self) -> std::collections::BTreeMap<u32, f64> {
        self.raw_cirs.iter().map(|c| (c.anchor_id, c.rx_time)).collect()
    }
}

/// A single multipath component: absolute propagation delay and complex gain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tap {
    pub delay: f64,
    pub gain: Complex64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub taps: Vec<Tap>,
    pub los: bool,
}

impl ChannelRealization {
    /// Delay of the first tap whose magnitude reaches `threshold` times the
    /// strongest tap.
    pub fn detected_delay(&self, threshold: f64) -> Option<f64> {
        let peak = self.taps.iter().map(|t| t.gain.norm()).fold(0.0, f64::max);
        if peak == 0.0 {
            return None;
        }
        self.taps
            .iter()
            .filter(|t| t.gain.norm() >= threshold * peak)
            .map(|t| t.delay)
            .min_by(f64::total_cmp)
    }
}

/// Raised-cosine pulse, ~4 samples wide, unit peak. `t` in samples.
pub fn pulse(t: f64) -> f64 {
    if t.abs() < 2.0 {
        0.5 * (1.0 + (std::f64::consts::PI * t / 2.0).cos())
    } else {
        0.0
    }
}

/// Parameters of the synthetic channel. All placeholders for real hardware
/// statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelModel {
    pub cir_len: usize,
    /// Range the detected first path is placed at inside the buffer.
    pub first_path_index_range: (usize, usize),
    /// `None` disables noise.
    pub snr_db: Option<f64>,
    /// Direct-path amplitude factor for blocked links.
    pub nlos_direct_gain: (f64, f64),
    /// Excess path length of the dominant reflection on blocked links, meters.
    pub nlos_excess_m: (f64, f64),
    /// Total number of taps per link, inclusive range.
    pub taps: (usize, usize),
    /// Mean spacing of the diffuse tail taps, nanoseconds.
    pub tail_mean_ns: f64,
    /// Power decay constant of the diffuse tail, nanoseconds.
    pub tail_decay_ns: f64,
    pub tail_gain: f64,
    pub detection_threshold: f64,
}

impl Default for ChannelModel {
    fn default() -> Self {
        Self {
            cir_len: 256,
            first_path_index_range: (60, 100),
            snr_db: Some(20.0),
            nlos_direct_gain: (0.0, 0.3),
            nlos_excess_m: (0.5, 15.0),
            taps: (3, 8),
            tail_mean_ns: 8.0,
            tail_decay_ns: 20.0,
            tail_gain: 0.8,
            detection_threshold: 0.35,
        }
    }
}

/// Mixes a seed with stream identifiers (splitmix64 finaliser).
pub fn derive_seed(seed: u64, stream: &[u64]) -> u64 {
    let mut z = seed;
    for &s in stream {
        z = z.wrapping_add(s.wrapping_add(0x9E37_79B9_7F4A_7C15));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

impl ChannelModel {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.first_path_index_range;
        if self.cir_len < 150 || lo > hi || hi >= self.cir_len {
            return Err(Error::InvalidConfig(format!(
                "cir_len {} with first-path range {:?} is not usable",
                self.cir_len, self.first_path_index_range
            )));
        }
        if self.taps.0 < 2 || self.taps.0 > self.taps.1 {
            return Err(Error::InvalidConfig(format!("tap count range {:?} invalid", self.taps)));
        }
        if self.nlos_excess_m.0 <= 0.0 || self.nlos_direct_gain.1 >= self.detection_threshold {
            return Err(Error::InvalidConfig(
                "blocked links must keep the direct path below the detection threshold".into(),
            ));
        }
        Ok(())
    }

    /// Draws the multipath taps for one link.
    pub fn draw_taps(&self, distance: f64, los: bool, rng: &mut ChaCha8Rng) -> ChannelRealization {
        let phase = |rng: &mut ChaCha8Rng| Complex64::from_polar(1.0, rng.random_range(0.0..std::f64::consts::TAU));
        let direct_delay = distance / SPEED_OF_LIGHT;
        let n_taps = rng.random_range(self.taps.0..=self.taps.1);
        let mut taps = Vec::with_capacity(n_taps);
        let detected = if los {
            taps.push(Tap {
                delay: direct_delay,
                gain: phase(rng),
            });
            direct_delay
        } else {
            let g = uniform(rng, self.nlos_direct_gain);
            taps.push(Tap {
                delay: direct_delay,
                gain: phase(rng) * g,
            });
            let reflected = direct_delay + uniform(rng, self.nlos_excess_m) / SPEED_OF_LIGHT;
            taps.push(Tap {
                delay: reflected,
                gain: phase(rng),
            });
            reflected
        };
        let spacing = Exp::new(1.0 / self.tail_mean_ns).expect("positive tail spacing");
        let mut t_ns = 0.0;
        while taps.len() < n_taps {
            t_ns += 1.0 + spacing.sample(rng);
            let amp = self.tail_gain * (-t_ns / self.tail_decay_ns).exp() * rng.random_range(0.5..1.0);
            taps.push(Tap {
                delay: detected + t_ns * SAMPLE_PERIOD,
                gain: phase(rng) * amp,
            });
        }
        ChannelRealization { taps, los }
    }

    /// Renders taps into a sampled CIR whose detected first path sits at
    /// `first_path_index`. Returns the buffer and the detected delay.
    pub fn render(
        &self,
        channel: &ChannelRealization,
        first_path_index: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Vec<Complex64>, f64)> {
        let detected = channel
            .detected_delay(self.detection_threshold)
            .ok_or_else(|| Error::InvalidArgument("channel has no energy".into()))?;
        // Buffer sample k is at time (start + k) ns; the detected path lands
        // on the sample nearest to it.
        let start = (detected / SAMPLE_PERIOD).round() - first_path_index as f64;
        let mut iq = vec![Complex64::new(0.0, 0.0); self.cir_len];
        for tap in &channel.taps {
            let center = tap.delay / SAMPLE_PERIOD - start;
            let lo = (center - 2.0).ceil().max(0.0) as usize;
            let hi = ((center + 2.0).floor().max(-1.0) + 1.0).min(self.cir_len as f64) as usize;
            for (k, v) in iq.iter_mut().enumerate().take(hi).skip(lo) {
                *v += tap.gain * pulse(k as f64 - center);
            }
        }
        if let Some(snr) = self.snr_db {
            let sigma = 10f64.powf(-snr / 20.0) / std::f64::consts::SQRT_2;
            let normal = Normal::new(0.0, sigma).expect("finite noise sigma");
            for v in iq.iter_mut() {
                *v += Complex64::new(normal.sample(rng), normal.sample(rng));
            }
        }
        Ok((iq, detected))
    }

    pub fn synth_cir(
        &self,
        tag: &Point3,
        anchor: &Anchor,
        env: &Environment,
        seed: u64,
        tx_time: f64,
    ) -> Result<RawCir> {
        if !env.contains(tag) {
            return Err(Error::OutOfBounds(format!(
                "tag at {:?} lies outside the environment",
                tag.as_slice()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[u64::from(anchor.id)]));
        let distance = (tag - anchor.position).norm();
        let los = los_status(tag, anchor, &env.obstacles);
        let channel = self.draw_taps(distance, los, &mut rng);
        let (lo, hi) = self.first_path_index_range;
        let first_path_index = rng.random_range(lo..=hi);
        let (iq, detected) = self.render(&channel, first_path_index, &mut rng)?;
        Ok(RawCir {
            anchor_id: anchor.id,
            iq,
            first_path_index,
            rx_time: tx_time + detected,
        })
    }

    /// One sample per trajectory point; each anchor is dropped independently
    /// with `drop_probability`.
    pub fn generate_dataset(
        &self,
        env: &Environment,
        trajectory: &[Point3],
        drop_probability: f64,
        seed: u64,
    ) -> Result<Vec<Sample>> {
        if trajectory.is_empty() {
            return Err(Error::InvalidArgument("trajectory is empty".into()));
        }
        if !(0.0..1.0).contains(&drop_probability) {
            return Err(Error::InvalidArgument(format!(
                "drop probability must lie in [0, 1), got {drop_probability}"
            )));
        }
        self.validate()?;
        env.validate()?;
        trajectory
            .iter()
            .enumerate()
            .map(|(idx, tag)| {
                let sample_seed = derive_seed(seed, &[idx as u64]);
                let mut drop_rng = ChaCha8Rng::seed_from_u64(derive_seed(sample_seed, &[u64::MAX]));
                let mut raw_cirs = Vec::new();
                for anchor in &env.anchors {
                    if drop_rng.random::<f64>() < drop_probability {
                        continue;
                    }
                    raw_cirs.push(self.synth_cir(tag, anchor, env, sample_seed, 0.0)?);
                }
                if raw_cirs.is_empty() {
                    // keep the strongest-guarantee invariant: at least one receiver
                    let pick = drop_rng.random_range(0..env.anchors.len());
                    raw_cirs.push(self.synth_cir(tag, &env.anchors[pick], env, sample_seed, 0.0)?);
                }
                Ok(Sample {
                    sample_id: idx as u64,
                    true_position: *tag,
                    tx_time: 0.0,
                    raw_cirs,
                })
            })
            .collect()
    }
}

pub fn synth_cir(tag: &Point3, anchor: &Anchor, env: &Environment, seed: u64) -> Result<RawCir> {
    ChannelModel::default().synth_cir(tag, anchor, env, seed, 0.0)
}

pub fn generate_dataset(
    env: &Environment,
    trajectory: &[Point3],
    drop_probability: f64,
    seed: u64,
) -> Result<Vec<Sample>> {
    ChannelModel::default().generate_dataset(env, trajectory, drop_probability, seed)
}

/// Systematic straight-line passes: several lines along every free corridor
/// in x, plus crossings in y at both ends of the hall.
pub fn grid_trajectory(env: &Environment, tag_height: f64, spacing: f64, lines_per_aisle: usize) -> Vec<Point3> {
    let [xmax, ymax, _] = env.extent;
    let margin = 0.15;
    let mut cuts = vec![0.0, ymax];
    for o in &env.obstacles {
        cuts.push(o.min[1]);
        cuts.push(o.max[1]);
    }
    cuts.sort_by(f64::total_cmp);
    let mut points = Vec::new();
    let mut push_line = |a: Point3, b: Point3| {
        let n = ((b - a).norm() / spacing).floor() as usize;
        for k in 0..=n {
            let p = a + (b - a) * (k as f64 / n.max(1) as f64);
            if env.is_free(&p, margin) {
                points.push(p);
            }
        }
    };
    for w in cuts.windows(2) {
        let (y0, y1) = (w[0], w[1]);
        if y1 - y0 < 2.0 * margin {
            continue;
        }
        for l in 0..lines_per_aisle {
            let y = y0 + (y1 - y0) * (l as f64 + 1.0) / (lines_per_aisle as f64 + 1.0);
            push_line(Point3::new(0.2, y, tag_height), Point3::new(xmax - 0.2, y, tag_height));
        }
    }
    for x in [1.5, 2.5, xmax - 2.5, xmax - 1.5] {
        push_line(Point3::new(x, 0.2, tag_height), Point3::new(x, ymax - 0.2, tag_height));
    }
    points
}

/// `n_points` samples along straight passes: the fewest lines per aisle
/// that yield at least `n_points`, thinned evenly to exactly that many.
pub fn systematic_trajectory(env: &Environment, tag_height: f64, spacing: f64, n_points: usize) -> Vec<Point3> {
    let mut lines = 1;
    let mut points = grid_trajectory(env, tag_height, spacing, lines);
    while points.len() < n_points && lines < 256 {
        lines += 1;
        points = grid_trajectory(env, tag_height, spacing, lines);
    }
    if points.is_empty() {
        return points;
    }
    (0..n_points)
        .map(|k| points[k * points.len() / n_points % points.len()])
        .collect()
}

/// Smooth random walk through free space.
pub fn random_walk_trajectory(
    env: &Environment,
    tag_height: f64,
    n_points: usize,
    step: f64,
    seed: u64,
) -> Vec<Point3> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let margin = 0.15;
    let [xmax, ymax, _] = env.extent;
    let mut pos = loop {
        let p = Point3::new(
            rng.random_range(0.3..xmax - 0.3),
            rng.random_range(0.3..ymax - 0.3),
            tag_height,
        );
        if env.is_free(&p, margin) {
            break p;
        }
    };
    let mut heading: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let turn = Normal::new(0.0, 0.25).expect("valid turn noise");
    let mut points = Vec::with_capacity(n_points);
    while points.len() < n_points {
        heading += turn.sample(&mut rng);
        let mut moved = false;
        for _ in 0..32 {
            let next = pos + Point3::new(heading.cos(), heading.sin(), 0.0) * step;
            if env.is_free(&next, margin) && next.x > 0.2 && next.y > 0.2 && next.x < xmax - 0.2 && next.y < ymax - 0.2
            {
                pos = next;
                moved = true;
                break;
            }
            heading += rng.random_range(0.5..std::f64::consts::PI);
        }
        if moved {
            points.push(pos);
        }
    }
    points
}

#[cfg(test)]
mod tests {
    use super::*;

    fn open_env() -> Environment {
        Environment::new(
            vec![Anchor::new(1, 0.0, 0.0, 1.0), Anchor::new(2, 10.0, 0.0, 1.0)],
            vec![],
            [10.0, 10.0, 3.0],
        )
        .unwrap()
    }

    fn quiet_single_tap() -> ChannelModel {
        ChannelModel {
            snr_db: None,
            taps: (2, 2),
            tail_gain: 0.0,
            ..Default::default()
        }
    }

    /// Samples the segment densely and checks box membership.
    fn brute_force_blocked(a: &Point3, b: &Point3, o: &Obstacle) -> bool {
        (1..10_000).any(|k| o.contains(&(a + (b - a) * (k as f64 / 10_000.0))))
    }

    #[test]
    fn los_examples() {
        let tag = Point3::new(1.0, 1.0, 1.0);
        let anchor = Anchor::new(1, 9.0, 1.0, 1.0);
        assert!(los_status(&tag, &anchor, &[]));
        let wall = Obstacle::new([4.0, 0.0, 0.0], [5.0, 3.0, 3.0]);
        assert!(!los_status(&tag, &anchor, &[wall]));
        let aside = Obstacle::new([4.0, 2.0, 0.0], [5.0, 3.0, 3.0]);
        assert!(los_status(&tag, &anchor, &[aside]));
        assert_eq!(
            !brute_force_blocked(&tag, &anchor.position, &aside),
            los_status(&tag, &anchor, &[aside])
        );
    }

    #[test]
    fn los_matches_brute_force_on_random_boxes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut disagreements = 0;
        for _ in 0..2000 {
            let mut pt = || {
                Point3::new(
                    rng.random_range(0.0..10.0),
                    rng.random_range(0.0..10.0),
                    rng.random_range(0.0..3.0),
                )
            };
            let (a, b, c, d) = (pt(), pt(), pt(), pt());
            let o = Obstacle::new(
                [c.x.min(d.x), c.y.min(d.y), c.z.min(d.z)],
                [c.x.max(d.x), c.y.max(d.y), c.z.max(d.z)],
            );
            if los_status(&a, &Anchor { id: 1, position: b }, &[o]) == brute_force_blocked(&a, &b, &o) {
                disagreements += 1;
            }
        }
        // sampling can miss sub-millimetre clips of a box corner
        assert!(disagreements <= 2, "{disagreements} disagreements");
    }

    #[test]
    fn single_tap_los_peak_at_first_path() {
        let env = open_env();
        let model = quiet_single_tap();
        let tag = Point3::new(3.3, 4.1, 1.0);
        let cir = model.synth_cir(&tag, &env.anchors[0], &env, 11, 0.0).unwrap();
        let amp: Vec<f64> = cir.iq.iter().map(|c| c.norm()).collect();
        let peak = amp.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert_eq!(peak, cir.first_path_index);
        let d = (tag - env.anchors[0].position).norm();
        assert!((cir.rx_time * SPEED_OF_LIGHT - d).abs() < 1e-9);
    }

    #[test]
    fn suppressed_direct_path_delays_timestamp() {
        let model = ChannelModel {
            snr_db: None,
            ..Default::default()
        };
        let d = 7.0;
        let direct = d / SPEED_OF_LIGHT;
        let channel = ChannelRealization {
            taps: vec![
                Tap {
                    delay: direct,
                    gain: Complex64::new(0.0, 0.0),
                },
                Tap {
                    delay: direct + 3.0 / SPEED_OF_LIGHT,
                    gain: Complex64::new(1.0, 0.0),
                },
            ],
            los: false,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (_, detected) = model.render(&channel, 70, &mut rng).unwrap();
        let error = detected - direct;
        assert!((error - 3.0 / SPEED_OF_LIGHT).abs() < 1e-18);
        assert!((error * 1e9 - 10.007).abs() < 1e-3);
        assert!(error > 0.0);
    }

    #[test]
    fn synth_is_deterministic() {
        let env = Environment::default_warehouse();
        let tag = Point3::new(12.0, 3.8, 1.0);
        let a = synth_cir(&tag, &env.anchors[3], &env, 42).unwrap();
        let b = synth_cir(&tag, &env.anchors[3], &env, 42).unwrap();
        assert_eq!(a, b);
        let c = synth_cir(&tag, &env.anchors[3], &env, 43).unwrap();
        assert_ne!(a, c);
        assert!(synth_cir(&Point3::new(40.0, 1.0, 1.0), &env.anchors[0], &env, 1).is_err());
    }

    #[test]
    fn nlos_bias_is_positive() {
        let env = Environment::default_warehouse();
        let model = ChannelModel::default();
        let traj = grid_trajectory(&env, 1.0, 0.5, 1);
        let mut nlos = 0;
        for (k, tag) in traj.iter().enumerate() {
            for anchor in &env.anchors {
                let cir = model.synth_cir(tag, anchor, &env, k as u64, 0.0).unwrap();
                let err = cir.rx_time * SPEED_OF_LIGHT - (tag - anchor.position).norm();
                if los_status(tag, anchor, &env.obstacles) {
                    assert!(err.abs() < 0.15);
                } else {
                    nlos += 1;
                    assert!(err >= 0.5 - 1e-9, "nlos error {err}");
                }
            }
        }
        assert!(nlos > 0);
    }

    #[test]
    fn dataset_drop_behaviour() {
        let env = Environment::default_warehouse();
        let traj = grid_trajectory(&env, 1.0, 2.0, 1);
        let all = generate_dataset(&env, &traj, 0.0, 5).unwrap();
        assert_eq!(all.len(), traj.len());
        assert!(all.iter().all(|s| s.raw_cirs.len() == 15));
        assert!(generate_dataset(&env, &traj, 1.0, 5).is_err());
        assert!(generate_dataset(&env, &[], 0.0, 5).is_err());
        let again = generate_dataset(&env, &traj, 0.5, 9).unwrap();
        assert_eq!(again, generate_dataset(&env, &traj, 0.5, 9).unwrap());
        assert!(again.iter().all(|s| !s.raw_cirs.is_empty()));
    }

    #[test]
    fn warehouse_is_valid() {
        let env = Environment::default_warehouse();
        env.validate().unwrap();
        assert_eq!(env.anchors.len(), 15);
        assert_eq!(env.obstacles.len(), 3);
        let bad = Environment::new(vec![Anchor::new(1, 50.0, 0.0, 0.0)], vec![], [30.0, 10.0, 3.0]);
        assert!(matches!(bad, Err(Error::OutOfBounds(_))));
        assert!(Environment::new(vec![], vec![], [0.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn trajectories_stay_in_free_space() {
        let env = Environment::default_warehouse();
        let grid = grid_trajectory(&env, 1.0, 0.1, 3);
        let walk = random_walk_trajectory(&env, 1.0, 500, 0.1, 1);
        assert_eq!(walk.len(), 500);
        for p in grid.iter().chain(&walk) {
            assert!(env.is_free(p, 0.1));
        }
        assert!(walk.iter().all(|w| !grid.contains(w)));
    }
}
