//! Track ingestion, fixed-length windows, translation normalization and the
//! labeled synthetic generator.
//!
//! Raw input is text with one observation per line, `frame_id agent_id x y`,
//! whitespace separated, `#` starting a comment line. Other column layouts
//! (for example the ETH `obsmat.txt` files, which carry `frame agent x z y ...`)
//! are read through a [`ColumnMap`].

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{ensure_arg, Error, Result};
use crate::textio::{fmt_f64, parse_f64};

/// A 2D position in meters.
pub type Point = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackPoint {
    pub frame: i64,
    pub x: f64,
    pub y: f64,
}

/// One agent's positions, frames strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTrack {
    pub agent_id: i64,
    pub points: Vec<TrackPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Argument(format!("unknown split {other:?}"))),
        }
    }
}

/// An observation window and the future that follows it.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub observed: Vec<Point>,
    pub future: Vec<Point>,
    pub agent_id: i64,
    pub scene_id: String,
    /// Generating pattern, synthetic data only.
    pub pattern_label: Option<usize>,
    /// Which side of the train/test partition this window came from.
    pub split: Split,
}

impl Sample {
    pub fn t_obs(&self) -> usize {
        self.observed.len()
    }

    pub fn t_pred(&self) -> usize {
        self.future.len()
    }

    pub fn last_observed(&self) -> Point {
        *self.observed.last().expect("sample has observed points")
    }

    pub fn endpoint(&self) -> Point {
        *self.future.last().expect("sample has future points")
    }

    /// Observed followed by future, flattened as `x0 y0 x1 y1 ...`.
    pub fn flat_full(&self) -> Vec<f64> {
        self.observed
            .iter()
            .chain(&self.future)
            .flat_map(|p| p.iter().copied())
            .collect()
    }

    pub fn validate(&self, t_obs: usize, t_pred: usize) -> Result<()> {
        if self.observed.len() != t_obs || self.future.len() != t_pred {
            return Err(Error::Data(format!(
                "sample of agent {} has {}+{} steps, expected {t_obs}+{t_pred}",
                self.agent_id,
                self.observed.len(),
                self.future.len()
            )));
        }
        let finite = self
            .observed
            .iter()
            .chain(&self.future)
            .all(|p| p[0].is_finite() && p[1].is_finite());
        if !finite {
            return Err(Error::Data(format!(
                "sample of agent {} has non-finite coordinates",
                self.agent_id
            )));
        }
        Ok(())
    }
}

/// Which input columns hold frame, agent, x and y, plus a unit scale applied
/// to x and y (1.0 for meters).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColumnMap {
    pub frame: usize,
    pub agent: usize,
    pub x: usize,
    pub y: usize,
    pub scale: f64,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            frame: 0,
            agent: 1,
            x: 2,
            y: 3,
            scale: 1.0,
        }
    }
}

impl ColumnMap {
    /// ETH `obsmat.txt`: `frame agent pos_x pos_z pos_y v_x v_z v_y`.
    pub fn eth_obsmat() -> Self {
        ColumnMap {
            frame: 0,
            agent: 1,
            x: 2,
            y: 4,
            scale: 1.0,
        }
    }

    /// Parses `frame,agent,x,y` column indices, e.g. `0,1,2,4`.
    pub fn parse_indices(spec: &str) -> Result<Self> {
        let idx = spec
            .split(',')
            .map(|s| s.trim().parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::Argument(format!("bad column map {spec:?}")))?;
        ensure_arg!(idx.len() == 4, "column map needs 4 indices, got {spec:?}");
        Ok(ColumnMap {
            frame: idx[0],
            agent: idx[1],
            x: idx[2],
            y: idx[3],
            scale: 1.0,
        })
    }
}

/// Parses the canonical four-column track format.
pub fn parse_track_file(text: &str) -> Result<Vec<RawTrack>> {
    parse_track_file_with(text, &ColumnMap::default())
}

pub fn parse_track_file_with(text: &str, cols: &ColumnMap) -> Result<Vec<RawTrack>> {
    let mut by_agent: BTreeMap<i64, Vec<TrackPoint>> = BTreeMap::new();
    let needed = cols.frame.max(cols.agent).max(cols.x).max(cols.y) + 1;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let lineno = i + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < needed {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected at least {needed} fields, found {}", fields.len()),
            });
        }
        let frame = parse_integral(fields[cols.frame], lineno, "frame_id")?;
        let agent = parse_integral(fields[cols.agent], lineno, "agent_id")?;
        let coord = |s: &str, what: &str| -> Result<f64> {
            parse_f64(s)
                .filter(|v| v.is_finite())
                .map(|v| v * cols.scale)
                .ok_or_else(|| Error::Parse {
                    line: lineno,
                    msg: format!("bad {what} coordinate {s:?}"),
                })
        };
        let x = coord(fields[cols.x], "x")?;
        let y = coord(fields[cols.y], "y")?;
        let points = by_agent.entry(agent).or_default();
        if let Some(prev) = points.last() {
            if frame <= prev.frame {
                return Err(Error::Data(format!(
                    "line {lineno}: agent {agent} frame {frame} does not follow frame {}",
                    prev.frame
                )));
            }
        }
        points.push(TrackPoint { frame, x, y });
    }
    Ok(by_agent
        .into_iter()
        .map(|(agent_id, points)| RawTrack { agent_id, points })
        .collect())
}

/// Integer ids, also accepted in the `780.0` spelling some dataset dumps use.
fn parse_integral(s: &str, line: usize, what: &str) -> Result<i64> {
    if let Ok(v) = s.parse::<i64>() {
        return Ok(v);
    }
    match parse_f64(s) {
        Some(v) if v.is_finite() && v.fract() == 0.0 && v.abs() < 9.0e15 => Ok(v as i64),
        _ => Err(Error::Parse {
            line,
            msg: format!("bad {what} {s:?}"),
        }),
    }
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

/// Greatest common divisor of all consecutive frame differences, i.e. the
/// native frame step of the recording. `None` when no track has two points.
pub fn infer_frame_step(tracks: &[RawTrack]) -> Option<i64> {
    let mut step = 0;
    for t in tracks {
        for w in t.points.windows(2) {
            step = gcd(step, w[1].frame - w[0].frame);
        }
    }
    (step > 0).then_some(step)
}

/// Splits a track wherever consecutive frames are more than `frame_step` apart.
pub fn split_at_gaps(track: &RawTrack, frame_step: i64) -> Vec<RawTrack> {
    let mut out = Vec::new();
    let mut current: Vec<TrackPoint> = Vec::new();
    for p in &track.points {
        if let Some(prev) = current.last() {
            if p.frame - prev.frame != frame_step {
                out.push(RawTrack {
                    agent_id: track.agent_id,
                    points: std::mem::take(&mut current),
                });
            }
        }
        current.push(*p);
    }
    if !current.is_empty() {
        out.push(RawTrack {
            agent_id: track.agent_id,
            points: current,
        });
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowConfig {
    pub t_obs: usize,
    pub t_pred: usize,
    pub stride: usize,
    /// Frame difference between consecutive samples of one track; inferred
    /// from the data when `None`.
    pub frame_step: Option<i64>,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            t_obs: 8,
            t_pred: 12,
            stride: 1,
            frame_step: None,
        }
    }
}

/// Number of windows a contiguous run of `len` points yields.
pub fn window_count(len: usize, t_obs: usize, t_pred: usize, stride: usize) -> usize {
    let span = t_obs + t_pred;
    if len < span {
        0
    } else {
        (len - span) / stride + 1
    }
}

/// Slides a `t_obs + t_pred` window over every contiguous run of every track.
/// Tracks are first split at frame gaps, so a window never spans a gap or two
/// agents. All windows are tagged [`Split::Train`].
pub fn extract_windows(tracks: &[RawTrack], cfg: &WindowConfig, scene_id: &str) -> Result<Vec<Sample>> {
    ensure_arg!(cfg.t_obs >= 1 && cfg.t_pred >= 1, "t_obs and t_pred must be >= 1");
    ensure_arg!(cfg.stride >= 1, "stride must be >= 1");
    let step = cfg.frame_step.or_else(|| infer_frame_step(tracks)).unwrap_or(1);
    ensure_arg!(step >= 1, "frame step must be positive");
    let span = cfg.t_obs + cfg.t_pred;
    let mut out = Vec::new();
    for track in tracks {
        for run in split_at_gaps(track, step) {
            let pts = &run.points;
            for w in 0..window_count(pts.len(), cfg.t_obs, cfg.t_pred, cfg.stride) {
                let start = w * cfg.stride;
                let slice = &pts[start..start + span];
                let pos: Vec<Point> = slice.iter().map(|p| [p.x, p.y]).collect();
                out.push(Sample {
                    observed: pos[..cfg.t_obs].to_vec(),
                    future: pos[cfg.t_obs..].to_vec(),
                    agent_id: run.agent_id,
                    scene_id: scene_id.to_string(),
                    pattern_label: None,
                    split: Split::Train,
                });
            }
        }
    }
    Ok(out)
}

/// A pure translation, `p' = p + (dx, dy)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormTransform {
    pub dx: f64,
    pub dy: f64,
}

impl NormTransform {
    pub const IDENTITY: NormTransform = NormTransform { dx: 0.0, dy: 0.0 };

    pub fn apply(&self, p: Point) -> Point {
        [p[0] + self.dx, p[1] + self.dy]
    }

    pub fn invert(&self, p: Point) -> Point {
        [p[0] - self.dx, p[1] - self.dy]
    }

    pub fn invert_traj(&self, traj: &[Point]) -> Vec<Point> {
        traj.iter().map(|&p| self.invert(p)).collect()
    }

    pub fn denormalize(&self, s: &Sample) -> Sample {
        Sample {
            observed: self.invert_traj(&s.observed),
            future: self.invert_traj(&s.future),
            ..s.clone()
        }
    }
}

/// Translates the sample so its last observed position is the origin.
pub fn normalize(s: &Sample) -> (Sample, NormTransform) {
    let [lx, ly] = s.last_observed();
    let t = NormTransform { dx: -lx, dy: -ly };
    let map = |pts: &[Point]| pts.iter().map(|&p| t.apply(p)).collect::<Vec<_>>();
    let out = Sample {
        observed: map(&s.observed),
        future: map(&s.future),
        ..s.clone()
    };
    (out, t)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub n_patterns: usize,
    /// Training windows per pattern.
    pub n_per_pattern: usize,
    /// Held-out windows per pattern, tagged [`Split::Test`] and appended after
    /// the training windows.
    pub n_test_per_pattern: usize,
    /// Standard deviation of the iid Gaussian noise added to every coordinate.
    pub noise_std: f64,
    pub seed: u64,
    pub t_obs: usize,
    pub t_pred: usize,
    /// Meters per step.
    pub speed: f64,
    /// Heading change per future step (radians) of the curved templates.
    pub turn_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_patterns: 8,
            n_per_pattern: 100,
            n_test_per_pattern: 0,
            noise_std: 0.05,
            seed: 0,
            t_obs: 8,
            t_pred: 12,
            speed: 0.45,
            turn_rate: 0.12,
        }
    }
}

/// Noise-free trajectory of pattern `k` (observed followed by future).
///
/// Pattern `k` walks straight at heading `2πk/n` through the observed window.
/// Even patterns keep going straight; odd patterns turn at `turn_rate` per
/// future step, left for `k % 4 == 1` and right for `k % 4 == 3`. The last
/// observed point sits at the origin.
pub fn synth_template(cfg: &SynthConfig, k: usize) -> Vec<Point> {
    let heading0 = std::f64::consts::TAU * k as f64 / cfg.n_patterns as f64;
    let turn = match k % 4 {
        1 => cfg.turn_rate,
        3 => -cfg.turn_rate,
        _ => 0.0,
    };
    let mut pts = Vec::with_capacity(cfg.t_obs + cfg.t_pred);
    // Walk the observed part backwards from the origin.
    let (c, s) = (heading0.cos(), heading0.sin());
    for i in (0..cfg.t_obs).rev() {
        let back = i as f64 * cfg.speed;
        pts.push([-c * back, -s * back]);
    }
    let mut pos = [0.0, 0.0];
    let mut heading = heading0;
    for _ in 0..cfg.t_pred {
        heading += turn;
        pos = [pos[0] + cfg.speed * heading.cos(), pos[1] + cfg.speed * heading.sin()];
        pts.push(pos);
    }
    pts
}

/// Labeled windows drawn around [`synth_template`]s. A pure function of `cfg`.
pub fn synth_generate(cfg: &SynthConfig) -> Result<Vec<Sample>> {
    ensure_arg!(cfg.n_patterns >= 2, "n_patterns must be >= 2");
    ensure_arg!(
        cfg.noise_std >= 0.0 && cfg.noise_std.is_finite(),
        "noise_std must be finite and >= 0"
    );
    ensure_arg!(cfg.t_obs >= 1 && cfg.t_pred >= 1, "t_obs and t_pred must be >= 1");
    let templates: Vec<Vec<Point>> = (0..cfg.n_patterns).map(|k| synth_template(cfg, k)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| Error::Argument(e.to_string()))?;
    let mut out = Vec::with_capacity(cfg.n_patterns * (cfg.n_per_pattern + cfg.n_test_per_pattern));
    let mut agent = 0i64;
    for (split, per) in [(Split::Train, cfg.n_per_pattern), (Split::Test, cfg.n_test_per_pattern)] {
        for _ in 0..per {
            for (k, tpl) in templates.iter().enumerate() {
                let pts: Vec<Point> = tpl
                    .iter()
                    .map(|p| {
                        if cfg.noise_std == 0.0 {
                            *p
                        } else {
                            [p[0] + noise.sample(&mut rng), p[1] + noise.sample(&mut rng)]
                        }
                    })
                    .collect();
                out.push(Sample {
                    observed: pts[..cfg.t_obs].to_vec(),
                    future: pts[cfg.t_obs..].to_vec(),
                    agent_id: agent,
                    scene_id: "synth".to_string(),
                    pattern_label: Some(k),
                    split,
                });
                agent += 1;
            }
        }
    }
    Ok(out)
}

const DATASET_MAGIC: &str = "mp2m-dataset v1";

/// Canonical dataset text:
///
/// ```text
/// mp2m-dataset v1
/// t_obs 8
/// t_pred 12
/// samples N
/// <scene> <agent_id> <split> <pattern_label or -> x_0 y_0 ... x_19 y_19
/// ```
///
/// One record per line; the coordinates run over the observed steps then the
/// future steps, in world meters.
pub fn write_dataset(samples: &[Sample], t_obs: usize, t_pred: usize) -> Result<String> {
    let mut out = format!("{DATASET_MAGIC}\nt_obs {t_obs}\nt_pred {t_pred}\nsamples {}\n", samples.len());
    for s in samples {
        s.validate(t_obs, t_pred)?;
        ensure_arg!(
            !s.scene_id.is_empty() && !s.scene_id.contains(char::is_whitespace),
            "scene id {:?} must be non-empty without whitespace",
            s.scene_id
        );
        let label = s.pattern_label.map_or("-".to_string(), |l| l.to_string());
        out.push_str(&format!("{} {} {} {}", s.scene_id, s.agent_id, s.split, label));
        for v in s.flat_full() {
            out.push(' ');
            out.push_str(&fmt_f64(v));
        }
        out.push('\n');
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub t_obs: usize,
    pub t_pred: usize,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> Vec<Sample> {
        self.samples.iter().filter(|s| s.split == split).cloned().collect()
    }

    pub fn scenes(&self) -> Vec<String> {
        let mut v: Vec<String> = self.samples.iter().map(|s| s.scene_id.clone()).collect();
        v.sort();
        v.dedup();
        v
    }

    /// Leave-one-out partition: windows of `scene` become test, all others train.
    pub fn hold_out_scene(&self, scene: &str) -> Result<Dataset> {
        ensure_arg!(
            self.samples.iter().any(|s| s.scene_id == scene),
            "scene {scene:?} not present in dataset"
        );
        let samples = self
            .samples
            .iter()
            .map(|s| Sample {
                split: if s.scene_id == scene { Split::Test } else { Split::Train },
                ..s.clone()
            })
            .collect();
        Ok(Dataset {
            t_obs: self.t_obs,
            t_pred: self.t_pred,
            samples,
        })
    }
}

pub fn read_dataset(text: &str) -> Result<Dataset> {
    let mut lines = crate::textio::Lines::new(text);
    lines.expect(DATASET_MAGIC)?;
    let t_obs: usize = lines.keyed("t_obs")?;
    let t_pred: usize = lines.keyed("t_pred")?;
    let n: usize = lines.keyed("samples")?;
    if t_obs == 0 || t_pred == 0 {
        return Err(Error::Format("t_obs and t_pred must be >= 1".into()));
    }
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let (lineno, line) = lines.next_line()?;
        let bad = |m: &str| Error::Format(format!("line {lineno}: {m}"));
        let f: Vec<&str> = line.split_whitespace().collect();
        let want = 4 + 2 * (t_obs + t_pred);
        if f.len() != want {
            return Err(bad(&format!("expected {want} fields, found {}", f.len())));
        }
        let agent_id = f[1].parse().map_err(|_| bad("bad agent id"))?;
        let split = f[2].parse().map_err(|_| bad("bad split"))?;
        let pattern_label = match f[3] {
            "-" => None,
            s => Some(s.parse().map_err(|_| bad("bad pattern label"))?),
        };
        let vals = f[4..]
            .iter()
            .map(|s| parse_f64(s).ok_or_else(|| bad("bad coordinate")))
            .collect::<Result<Vec<f64>>>()?;
        let pts: Vec<Point> = vals.chunks(2).map(|c| [c[0], c[1]]).collect();
        let s = Sample {
            observed: pts[..t_obs].to_vec(),
            future: pts[t_obs..].to_vec(),
            agent_id,
            scene_id: f[0].to_string(),
            pattern_label,
            split,
        };
        s.validate(t_obs, t_pred).map_err(|e| bad(&e.to_string()))?;
        samples.push(s);
    }
    lines.finish()?;
    Ok(Dataset {
        t_obs,
        t_pred,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn straight_track(agent: i64, frames: std::ops::Range<i64>) -> RawTrack {
        RawTrack {
            agent_id: agent,
            points: frames
                .map(|f| TrackPoint {
                    frame: f,
                    x: f as f64 * 0.5,
                    y: agent as f64,
                })
                .collect(),
        }
    }

    #[test]
    fn parses_minimal_file() {
        let tracks = parse_track_file("1 7 0.0 0.0\n2 7 1.0 0.0").unwrap();
        assert_eq!(tracks.len(), 1);
        assert_eq!(tracks[0].agent_id, 7);
        assert_eq!(tracks[0].points.len(), 2);
        assert_eq!(tracks[0].points[1], TrackPoint { frame: 2, x: 1.0, y: 0.0 });
    }

    #[test]
    fn empty_and_comment_only_inputs() {
        assert!(parse_track_file("").unwrap().is_empty());
        assert!(parse_track_file("# header\n\n   \n").unwrap().is_empty());
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = parse_track_file("1 7 0 0\n# c\n2 7 zero 0\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e:?}"),
        }
        assert!(matches!(
            parse_track_file("1 7 0\n"),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn non_monotone_frames_are_a_data_error() {
        let err = parse_track_file("2 1 0 0\n1 1 0 0\n").unwrap_err();
        assert!(matches!(err, Error::Data(_)));
        let err = parse_track_file("2 1 0 0\n2 1 1 0\n").unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }

    #[test]
    fn float_spelled_ids_and_column_maps() {
        let text = "780.0 1.0 8.46 0.0 3.59 1.3 0.0 -0.2\n786.0 1.0 9.57 0.0 3.79 1.3 0.0 -0.2\n";
        let tracks = parse_track_file_with(text, &ColumnMap::eth_obsmat()).unwrap();
        assert_eq!(tracks[0].points[0], TrackPoint { frame: 780, x: 8.46, y: 3.59 });
        assert_eq!(infer_frame_step(&tracks), Some(6));
        assert!(parse_track_file("1.5 1 0 0\n").is_err());
        assert_eq!(ColumnMap::parse_indices("0,1,2,4").unwrap(), ColumnMap::eth_obsmat());
    }

    #[test]
    fn three_agent_file_window_counts() {
        // Agents 1 and 2 span all 25 frames; agent 3 spans frames 5..25.
        let mut text = String::from("# frame agent x y\n");
        for f in 0..25 {
            for a in 1..=3 {
                if a == 3 && f < 5 {
                    continue;
                }
                text.push_str(&format!("{f} {a} {} {}\n", f as f64 * 0.4, a as f64));
            }
        }
        let tracks = parse_track_file(&text).unwrap();
        assert_eq!(tracks.len(), 3);
        let windows = extract_windows(&tracks, &WindowConfig::default(), "s").unwrap();
        // floor((25-20)/1)+1 = 6 for agents 1 and 2, floor((20-20)/1)+1 = 1 for agent 3.
        assert_eq!(windows.len(), 6 + 6 + 1);
        let expected: usize = tracks
            .iter()
            .map(|t| window_count(t.points.len(), 8, 12, 1))
            .sum();
        assert_eq!(windows.len(), expected);
    }

    #[test]
    fn window_count_examples() {
        let cfg = WindowConfig::default();
        for (len, want) in [(20, 1), (19, 0), (25, 6)] {
            let w = extract_windows(&[straight_track(0, 0..len)], &cfg, "s").unwrap();
            assert_eq!(w.len(), want, "len {len}");
        }
        let w = extract_windows(
            &[straight_track(0, 0..25)],
            &WindowConfig { stride: 2, ..cfg },
            "s",
        )
        .unwrap();
        assert_eq!(w.len(), 3);
    }

    #[test]
    fn windows_never_span_gaps_or_agents() {
        // Frames 0..22 then a gap, then 30..52.
        let mut t = straight_track(4, 0..22);
        t.points.extend(straight_track(4, 30..52).points);
        let other = straight_track(5, 0..20);
        let w = extract_windows(&[t, other], &WindowConfig::default(), "s").unwrap();
        assert_eq!(w.len(), 3 + 3 + 1);
        for s in &w {
            let xs: Vec<f64> = s.observed.iter().chain(&s.future).map(|p| p[0]).collect();
            assert!(xs.windows(2).all(|p| (p[1] - p[0] - 0.5).abs() < 1e-12));
            assert!(s.observed.iter().chain(&s.future).all(|p| p[1] == s.agent_id as f64));
        }
    }

    #[test]
    fn frame_step_is_inferred() {
        let t = RawTrack {
            agent_id: 1,
            points: (0..20)
                .map(|i| TrackPoint {
                    frame: 10 * i,
                    x: i as f64,
                    y: 0.0,
                })
                .collect(),
        };
        let w = extract_windows(&[t], &WindowConfig::default(), "eth").unwrap();
        assert_eq!(w.len(), 1);
    }

    fn sample_ending_at(x: f64, y: f64) -> Sample {
        let observed: Vec<Point> = (0..8).map(|i| [x - 0.5 * (7 - i) as f64, y]).collect();
        let future: Vec<Point> = (1..=12).map(|i| [x + 0.5 * i as f64, y + 0.1]).collect();
        Sample {
            observed,
            future,
            agent_id: 0,
            scene_id: "s".into(),
            pattern_label: None,
            split: Split::Train,
        }
    }

    #[test]
    fn normalize_moves_last_observed_to_origin() {
        let s = sample_ending_at(3.0, 4.0);
        let (n, t) = normalize(&s);
        assert_eq!(n.last_observed(), [0.0, 0.0]);
        assert_eq!(t, NormTransform { dx: -3.0, dy: -4.0 });
        assert!((n.future[0][0] - 0.5).abs() < 1e-12 && (n.future[0][1] - 0.1).abs() < 1e-12);
        let (_, t0) = normalize(&sample_ending_at(0.0, 0.0));
        assert_eq!(t0.dx, 0.0);
        assert_eq!(t0.dy, 0.0);
    }

    proptest! {
        #[test]
        fn normalize_round_trip(x in -1e3..1e3f64, y in -1e3..1e3f64, jitter in proptest::collection::vec(-5.0..5.0f64, 40)) {
            let mut s = sample_ending_at(x, y);
            for (p, j) in s.observed.iter_mut().chain(s.future.iter_mut()).zip(jitter.chunks(2)) {
                p[0] += j[0];
                p[1] += j[1];
            }
            let (n, t) = normalize(&s);
            let back = t.denormalize(&n);
            for (a, b) in back.flat_full().iter().zip(s.flat_full()) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn noiseless_synth_matches_templates() {
        let cfg = SynthConfig {
            noise_std: 0.0,
            n_per_pattern: 3,
            ..Default::default()
        };
        let data = synth_generate(&cfg).unwrap();
        assert_eq!(data.len(), 24);
        for s in &data {
            let tpl = synth_template(&cfg, s.pattern_label.unwrap());
            let full: Vec<Point> = s.observed.iter().chain(&s.future).copied().collect();
            assert_eq!(full, tpl);
        }
    }

    #[test]
    fn synth_is_deterministic_and_seed_sensitive() {
        let cfg = SynthConfig {
            n_per_pattern: 5,
            n_test_per_pattern: 2,
            ..Default::default()
        };
        let a = write_dataset(&synth_generate(&cfg).unwrap(), 8, 12).unwrap();
        let b = write_dataset(&synth_generate(&cfg).unwrap(), 8, 12).unwrap();
        assert_eq!(a, b);
        let c = write_dataset(&synth_generate(&SynthConfig { seed: 1, ..cfg }).unwrap(), 8, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn synth_rejects_bad_config() {
        assert!(synth_generate(&SynthConfig { n_patterns: 1, ..Default::default() }).is_err());
        assert!(synth_generate(&SynthConfig { noise_std: -0.1, ..Default::default() }).is_err());
    }

    #[test]
    fn template_headings_are_evenly_spread() {
        let cfg = SynthConfig::default();
        let mut headings: Vec<f64> = (0..8)
            .map(|k| {
                let t = synth_template(&cfg, k);
                let d = [t[7][0] - t[0][0], t[7][1] - t[0][1]];
                d[1].atan2(d[0]).rem_euclid(std::f64::consts::TAU)
            })
            .collect();
        headings.sort_by(f64::total_cmp);
        for w in headings.windows(2) {
            assert!(w[1] - w[0] >= std::f64::consts::TAU / 8.0 - 1e-9);
        }
    }

    #[test]
    fn nearest_template_recovers_every_label() {
        let cfg = SynthConfig {
            n_per_pattern: 50,
            noise_std: 0.05,
            seed: 11,
            ..Default::default()
        };
        let templates: Vec<Vec<f64>> = (0..8)
            .map(|k| synth_template(&cfg, k).iter().flat_map(|p| p.iter().copied()).collect())
            .collect();
        for s in synth_generate(&cfg).unwrap() {
            let flat = s.flat_full();
            let best = (0..8)
                .min_by(|&a, &b| {
                    let da: f64 = flat.iter().zip(&templates[a]).map(|(x, y)| (x - y).powi(2)).sum();
                    let db: f64 = flat.iter().zip(&templates[b]).map(|(x, y)| (x - y).powi(2)).sum();
                    da.total_cmp(&db)
                })
                .unwrap();
            assert_eq!(Some(best), s.pattern_label);
        }
    }

    #[test]
    fn dataset_text_round_trip_and_errors() {
        let cfg = SynthConfig {
            n_per_pattern: 2,
            n_test_per_pattern: 1,
            ..Default::default()
        };
        let data = synth_generate(&cfg).unwrap();
        let text = write_dataset(&data, 8, 12).unwrap();
        let back = read_dataset(&text).unwrap();
        assert_eq!(back.samples, data);
        assert_eq!(back.split(Split::Test).len(), 8);
        assert!(matches!(read_dataset("mp2m-dataset v0\n"), Err(Error::Format(_))));
        let truncated: String = text.lines().take(6).collect::<Vec<_>>().join("\n");
        assert!(matches!(read_dataset(&truncated), Err(Error::Format(_))));
    }

    #[test]
    fn hold_out_scene_partitions_by_scene() {
        let mut a = sample_ending_at(0.0, 0.0);
        a.scene_id = "eth".into();
        let mut b = a.clone();
        b.scene_id = "hotel".into();
        let d = Dataset {
            t_obs: 8,
            t_pred: 12,
            samples: vec![a, b],
        };
        let h = d.hold_out_scene("hotel").unwrap();
        assert_eq!(h.split(Split::Test)[0].scene_id, "hotel");
        assert_eq!(h.split(Split::Train)[0].scene_id, "eth");
        assert!(d.hold_out_scene("univ").is_err());
        assert_eq!(d.scenes(), vec!["eth".to_string(), "hotel".to_string()]);
    }
}
