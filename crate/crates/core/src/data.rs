//! Dataset records, synthetic scene generation, file I/O, and the
//! bracketed trajectory text format with its failure taxonomy.
//!
//! # Dataset file format
//!
//! Line-delimited text, one record per line, `|`-separated `name=value`
//! fields in fixed order:
//!
//! ```text
//! scene_id=<id>|sample_id=<id>|source=<Synthetic|ImportedGlobalTrack>|
//! category=<Straight|TurnLeft|TurnRight|Waiting>|dt=<sec>|
//! context=<c1,c2,...>|gt=<x1,y1;x2,y2;...>
//! ```
//!
//! Numbers are written with nine digits after the decimal point so a
//! save/load round trip reproduces values to 1e-9. Identifiers are limited
//! to `[A-Za-z0-9._-]`. The stored category must agree with
//! [`classify_maneuver`] under default thresholds; a mismatch is a parse
//! error naming the line.
//!
//! # Trajectory text format
//!
//! `[[x1, y1], [x2, y2], ...]` with two decimal places per coordinate.
//! Parsing is strict and total: every rejected string is classified as
//! exactly one [`ParseFailureKind`], checked in the order invalid character
//! (lexical), malformed waypoint (arity), incomplete trajectory (count).
//! Structural breakage that survives the first two checks — truncated
//! output, missing or unbalanced brackets, stray text between pairs —
//! lands in the count bucket, since the string failed to deliver the
//! expected number of well-formed waypoints.

use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geometry::{
    classify_maneuver, utm_to_ego, ManeuverCategory, ManeuverThresholds, Pose2D, Trajectory,
    Waypoint, DEFAULT_DT,
};

/// Where a record came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordSource {
    Synthetic,
    ImportedGlobalTrack,
}

impl RecordSource {
    fn as_str(&self) -> &'static str {
        match self {
            RecordSource::Synthetic => "Synthetic",
            RecordSource::ImportedGlobalTrack => "ImportedGlobalTrack",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "Synthetic" => Some(RecordSource::Synthetic),
            "ImportedGlobalTrack" => Some(RecordSource::ImportedGlobalTrack),
            _ => None,
        }
    }
}

/// One training or evaluation sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneRecord {
    pub scene_id: String,
    pub sample_id: String,
    /// Perception stand-in features fed to the policy.
    pub context: Vec<f64>,
    pub gt: Trajectory,
    pub category: ManeuverCategory,
    pub source: RecordSource,
}

fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'))
}

impl SceneRecord {
    /// Builds a record, deriving the category from the trajectory.
    pub fn new(
        scene_id: impl Into<String>,
        sample_id: impl Into<String>,
        context: Vec<f64>,
        gt: Trajectory,
        source: RecordSource,
        thresholds: &ManeuverThresholds,
    ) -> Result<Self> {
        let scene_id = scene_id.into();
        let sample_id = sample_id.into();
        if !valid_id(&scene_id) || !valid_id(&sample_id) {
            return Err(Error::InvalidArgument(format!(
                "identifiers must be nonempty [A-Za-z0-9._-]: {scene_id:?} / {sample_id:?}"
            )));
        }
        if context.is_empty() || context.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite {
                context: "record context features",
            });
        }
        thresholds.validate()?;
        let category = classify_maneuver(&gt, thresholds);
        Ok(SceneRecord {
            scene_id,
            sample_id,
            context,
            gt,
            category,
            source,
        })
    }
}

/// Kinematic template for one synthetic scene family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManeuverSpec {
    pub kind: ManeuverKind,
    /// Initial speed, m/s, at most 20.
    pub v0: f64,
    /// Signed curvature, 1/m, positive turns left; |curvature| <= 0.2.
    pub curvature: f64,
    /// Constant deceleration for `Stop`, m/s^2.
    pub decel: f64,
    /// Gaussian noise applied to each context feature.
    pub noise_sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ManeuverKind {
    Straight,
    Arc,
    Stop,
}

impl ManeuverSpec {
    pub fn straight(v0: f64, noise_sigma: f64) -> Result<Self> {
        Self::build(ManeuverKind::Straight, v0, 0.0, 0.0, noise_sigma)
    }

    pub fn arc(v0: f64, curvature: f64, noise_sigma: f64) -> Result<Self> {
        Self::build(ManeuverKind::Arc, v0, curvature, 0.0, noise_sigma)
    }

    pub fn stop(v0: f64, decel: f64, noise_sigma: f64) -> Result<Self> {
        Self::build(ManeuverKind::Stop, v0, 0.0, decel, noise_sigma)
    }

    fn build(
        kind: ManeuverKind,
        v0: f64,
        curvature: f64,
        decel: f64,
        noise_sigma: f64,
    ) -> Result<Self> {
        if !(v0.is_finite() && (0.0..=20.0).contains(&v0)) {
            return Err(Error::InvalidArgument(format!(
                "v0 must lie in [0, 20] m/s, got {v0}"
            )));
        }
        if !(curvature.is_finite() && curvature.abs() <= 0.2) {
            return Err(Error::InvalidArgument(format!(
                "|curvature| must be at most 0.2 (turn radius >= 5 m), got {curvature}"
            )));
        }
        if !(decel.is_finite() && decel >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "decel must be non-negative, got {decel}"
            )));
        }
        if !(noise_sigma.is_finite() && noise_sigma >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "noise_sigma must be non-negative, got {noise_sigma}"
            )));
        }
        Ok(ManeuverSpec {
            kind,
            v0,
            curvature,
            decel,
            noise_sigma,
        })
    }

    /// Position at time `t` seconds along the maneuver.
    pub fn position_at(&self, t: f64) -> Waypoint {
        match self.kind {
            ManeuverKind::Straight => Waypoint::new(self.v0 * t, 0.0),
            ManeuverKind::Arc => arc_position(self.v0 * t, self.curvature),
            ManeuverKind::Stop => {
                let te = if self.decel > 0.0 {
                    t.min(self.v0 / self.decel)
                } else {
                    t
                };
                Waypoint::new(self.v0 * te - 0.5 * self.decel * te * te, 0.0)
            }
        }
    }

    /// Ground-truth trajectory sampled at `dt .. steps * dt`.
    pub fn trajectory(&self, dt: f64, steps: usize) -> Result<Trajectory> {
        let waypoints = (1..=steps)
            .map(|k| self.position_at(k as f64 * dt))
            .collect();
        Trajectory::new(waypoints, dt)
    }
}

/// Constant-curvature position for arc length `s`: exact form away from
/// zero curvature, series expansion when `|curvature * s|` is tiny so the
/// straight-line limit is smooth.
fn arc_position(s: f64, curvature: f64) -> Waypoint {
    let theta = curvature * s;
    if theta.abs() < 1e-4 {
        let t2 = theta * theta;
        let x = s * (1.0 - t2 / 6.0 + t2 * t2 / 120.0);
        let y = 0.5 * curvature * s * s * (1.0 - t2 / 12.0 + t2 * t2 / 360.0);
        Waypoint::new(x, y)
    } else {
        Waypoint::new(theta.sin() / curvature, (1.0 - theta.cos()) / curvature)
    }
}

/// Draws `n_scenes` records from a weighted mix of maneuver templates.
/// Context features are the generating parameters `[v0, curvature, decel]`
/// plus per-feature Gaussian noise; ground truth stays exact.
pub fn generate_synthetic(
    n_scenes: usize,
    mix: &[(ManeuverSpec, f64)],
    dt: f64,
    steps: usize,
    seed: u64,
) -> Result<Vec<SceneRecord>> {
    if n_scenes < 1 {
        return Err(Error::InvalidArgument("n_scenes must be at least 1".into()));
    }
    if steps < 1 || !dt.is_finite() || dt <= 0.0 {
        return Err(Error::InvalidArgument(
            "steps must be >= 1 and dt positive".into(),
        ));
    }
    if mix.is_empty() {
        return Err(Error::InvalidArgument("maneuver mix is empty".into()));
    }
    if mix.iter().any(|(_, w)| !w.is_finite() || *w < 0.0) {
        return Err(Error::InvalidArgument(
            "mix weights must be non-negative".into(),
        ));
    }
    let total_weight: f64 = mix.iter().map(|(_, w)| w).sum();
    if (total_weight - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "mix weights must sum to 1, got {total_weight}"
        )));
    }

    let thresholds = ManeuverThresholds::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut records = Vec::with_capacity(n_scenes);
    for idx in 0..n_scenes {
        let draw: f64 = rng.random();
        let mut acc = 0.0;
        let mut spec = &mix[mix.len() - 1].0;
        for (candidate, w) in mix {
            acc += w;
            if draw < acc {
                spec = candidate;
                break;
            }
        }
        let gt = spec.trajectory(dt, steps)?;
        let context: Vec<f64> = [spec.v0, spec.curvature, spec.decel]
            .iter()
            .map(|base| base + spec.noise_sigma * unit_normal.sample(&mut rng))
            .collect();
        let id = format!("syn{idx:06}");
        records.push(SceneRecord::new(
            id.clone(),
            format!("{id}.0"),
            context,
            gt,
            RecordSource::Synthetic,
            &thresholds,
        )?);
    }
    Ok(records)
}

/// A default mix covering all four maneuver categories, with straight
/// driving deliberately over-represented.
pub fn default_mix(noise_sigma: f64) -> Result<Vec<(ManeuverSpec, f64)>> {
    let s = noise_sigma;
    Ok(vec![
        (ManeuverSpec::straight(3.0, s)?, 0.14),
        (ManeuverSpec::straight(6.0, s)?, 0.14),
        (ManeuverSpec::straight(9.0, s)?, 0.14),
        (ManeuverSpec::straight(12.0, s)?, 0.13),
        (ManeuverSpec::arc(4.0, 0.08, s)?, 0.07),
        (ManeuverSpec::arc(7.0, 0.05, s)?, 0.07),
        (ManeuverSpec::arc(9.0, 0.035, s)?, 0.03),
        (ManeuverSpec::arc(4.0, -0.08, s)?, 0.07),
        (ManeuverSpec::arc(7.0, -0.05, s)?, 0.07),
        (ManeuverSpec::arc(9.0, -0.035, s)?, 0.03),
        (ManeuverSpec::stop(1.5, 1.0, s)?, 0.04),
        (ManeuverSpec::stop(0.5, 0.5, s)?, 0.03),
        (ManeuverSpec::stop(6.0, 1.5, s)?, 0.04),
    ])
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.9}")
}

/// Writes a dataset in the line-delimited format described at module level.
pub fn save_dataset(records: &[SceneRecord], path: &Path) -> Result<()> {
    let mut out = String::new();
    for r in records {
        let context = r
            .context
            .iter()
            .map(|c| fmt_f64(*c))
            .collect::<Vec<_>>()
            .join(",");
        let gt = r
            .gt
            .waypoints()
            .iter()
            .map(|w| format!("{},{}", fmt_f64(w.x), fmt_f64(w.y)))
            .collect::<Vec<_>>()
            .join(";");
        out.push_str(&format!(
            "scene_id={}|sample_id={}|source={}|category={}|dt={}|context={}|gt={}\n",
            r.scene_id,
            r.sample_id,
            r.source.as_str(),
            r.category.as_str(),
            fmt_f64(r.gt.dt()),
            context,
            gt,
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a dataset, validating every line and the stored-category
/// invariant. Errors name the offending line.
pub fn load_dataset(path: &Path) -> Result<Vec<SceneRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let thresholds = ManeuverThresholds::default();
    let mut records = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fail = |msg: String| Error::format(path, lineno, msg);
        let mut fields = std::collections::HashMap::new();
        for part in line.split('|') {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| fail(format!("field {part:?} is not name=value")))?;
            if fields.insert(key, value).is_some() {
                return Err(fail(format!("duplicate field {key:?}")));
            }
        }
        let get = |key: &str| {
            fields
                .get(key)
                .copied()
                .ok_or_else(|| fail(format!("missing field {key:?}")))
        };
        let parse_num = |s: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| fail(format!("invalid number {s:?}")))
        };

        let scene_id = get("scene_id")?.to_string();
        let sample_id = get("sample_id")?.to_string();
        let source_text = get("source")?;
        let source = RecordSource::parse(source_text)
            .ok_or_else(|| fail(format!("unknown source {source_text:?}")))?;
        let category_text = get("category")?;
        let stored_category = ManeuverCategory::parse(category_text)
            .ok_or_else(|| fail(format!("unknown category {category_text:?}")))?;
        let dt = parse_num(get("dt")?)?;
        let context = get("context")?
            .split(',')
            .map(parse_num)
            .collect::<Result<Vec<f64>>>()?;
        let mut waypoints = Vec::new();
        for pair in get("gt")?.split(';') {
            let (x, y) = pair
                .split_once(',')
                .ok_or_else(|| fail(format!("waypoint {pair:?} is not x,y")))?;
            waypoints.push(Waypoint::new(parse_num(x)?, parse_num(y)?));
        }
        let gt = Trajectory::new(waypoints, dt).map_err(|e| fail(e.to_string()))?;
        let record = SceneRecord::new(scene_id, sample_id, context, gt, source, &thresholds)
            .map_err(|e| fail(e.to_string()))?;
        if record.category != stored_category {
            return Err(fail(format!(
                "stored category {} disagrees with trajectory shape {}",
                stored_category.as_str(),
                record.category.as_str()
            )));
        }
        records.push(record);
    }
    Ok(records)
}

/// Renders a trajectory in the bracketed text format with two decimal
/// places per coordinate.
pub fn serialize_trajectory_text(traj: &Trajectory) -> String {
    let pairs = traj
        .waypoints()
        .iter()
        .map(|w| format!("[{:.2}, {:.2}]", w.x, w.y))
        .collect::<Vec<_>>()
        .join(", ");
    format!("[{pairs}]")
}

/// Why a trajectory string was rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseFailureKind {
    /// Wrong number of waypoints, or broken surrounding structure.
    IncompleteTrajectory,
    /// A waypoint with a coordinate count other than two.
    MalformedWaypoint,
    /// Text that cannot be read as a number.
    InvalidCharacter,
}

impl ParseFailureKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ParseFailureKind::IncompleteTrajectory => "IncompleteTrajectory",
            ParseFailureKind::MalformedWaypoint => "MalformedWaypoint",
            ParseFailureKind::InvalidCharacter => "InvalidCharacter",
        }
    }
}

/// A classified parse rejection; a value, not an error type, so audits can
/// tabulate failures without unwinding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseFailure {
    pub kind: ParseFailureKind,
    pub detail: String,
}

impl fmt::Display for ParseFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind.as_str(), self.detail)
    }
}

fn failure(kind: ParseFailureKind, detail: impl Into<String>) -> ParseFailure {
    ParseFailure {
        kind,
        detail: detail.into(),
    }
}

fn allowed_char(c: char) -> bool {
    c.is_ascii_digit() || matches!(c, '+' | '-' | '.' | ',' | '[' | ']' | ' ' | '\t' | '\n' | '\r')
}

/// Parses the strict bracketed format, expecting exactly `expected_t`
/// waypoint pairs. Checks run in taxonomy precedence order; see the module
/// docs for the total classification rule.
pub fn parse_trajectory_text(
    text: &str,
    expected_t: usize,
) -> std::result::Result<Trajectory, ParseFailure> {
    // lexical pass
    if let Some((pos, c)) = text.char_indices().find(|(_, c)| !allowed_char(*c)) {
        return Err(failure(
            ParseFailureKind::InvalidCharacter,
            format!("unexpected character {c:?} at byte {pos}"),
        ));
    }

    // collect innermost complete bracket groups
    let bytes = text.as_bytes();
    let mut groups: Vec<(usize, usize)> = Vec::new(); // byte spans between brackets
    let mut last_open: Option<usize> = None;
    for (i, b) in bytes.iter().enumerate() {
        match b {
            b'[' => last_open = Some(i),
            b']' => {
                if let Some(s) = last_open.take() {
                    groups.push((s + 1, i));
                }
            }
            _ => {}
        }
    }

    // numeric pass: every nonempty token must read as a finite f64
    for &(start, end) in &groups {
        for raw in text[start..end].split(',') {
            let token = raw.trim();
            if token.is_empty() {
                continue; // arity pass reports this
            }
            match token.parse::<f64>() {
                Ok(v) if v.is_finite() => {}
                _ => {
                    return Err(failure(
                        ParseFailureKind::InvalidCharacter,
                        format!("token {token:?} is not a finite number"),
                    ))
                }
            }
        }
    }

    // arity pass
    for &(start, end) in &groups {
        let tokens: Vec<&str> = text[start..end].split(',').map(str::trim).collect();
        if tokens.len() != 2 || tokens.iter().any(|t| t.is_empty()) {
            let arity = tokens.iter().filter(|t| !t.is_empty()).count();
            return Err(failure(
                ParseFailureKind::MalformedWaypoint,
                format!(
                    "waypoint [{}] has {arity} coordinates, expected 2",
                    &text[start..end]
                ),
            ));
        }
    }

    // count pass
    if groups.len() != expected_t {
        return Err(failure(
            ParseFailureKind::IncompleteTrajectory,
            format!("expected {expected_t} waypoints, found {}", groups.len()),
        ));
    }

    // structure pass: exactly "[ pair (, pair)* ]" with optional whitespace
    if !structure_is_strict(text, &groups) {
        return Err(failure(
            ParseFailureKind::IncompleteTrajectory,
            "trajectory structure is not a single bracketed list".to_string(),
        ));
    }

    let waypoints = groups
        .iter()
        .map(|&(start, end)| {
            let mut it = text[start..end].split(',').map(str::trim);
            let x: f64 = it.next().unwrap().parse().unwrap();
            let y: f64 = it.next().unwrap().parse().unwrap();
            Waypoint::new(x, y)
        })
        .collect();
    Trajectory::new(waypoints, DEFAULT_DT).map_err(|e| {
        failure(
            ParseFailureKind::InvalidCharacter,
            format!("coordinates rejected: {e}"),
        )
    })
}

fn structure_is_strict(text: &str, groups: &[(usize, usize)]) -> bool {
    // replace every group span (with brackets) by a placeholder and check
    // the residue reads as [G,G,...,G]
    let mut residue = String::new();
    let mut cursor = 0;
    for &(start, end) in groups {
        residue.push_str(&text[cursor..start - 1]);
        residue.push('G');
        cursor = end + 1;
    }
    residue.push_str(&text[cursor..]);

    let compact: String = residue.chars().filter(|c| !c.is_whitespace()).collect();
    let mut expected = String::from("[");
    for i in 0..groups.len() {
        if i > 0 {
            expected.push(',');
        }
        expected.push('G');
    }
    expected.push(']');
    compact == expected
}

/// Per-category outcome counts over a parsed corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseAuditSummary {
    pub total: usize,
    pub valid: usize,
    pub incomplete: usize,
    pub malformed: usize,
    pub invalid_character: usize,
}

impl ParseAuditSummary {
    pub fn failures(&self) -> usize {
        self.incomplete + self.malformed + self.invalid_character
    }

    pub fn failure_rate(&self) -> f64 {
        self.failures() as f64 / self.total as f64
    }

    pub fn rate(&self, kind: ParseFailureKind) -> f64 {
        let count = match kind {
            ParseFailureKind::IncompleteTrajectory => self.incomplete,
            ParseFailureKind::MalformedWaypoint => self.malformed,
            ParseFailureKind::InvalidCharacter => self.invalid_character,
        };
        count as f64 / self.total as f64
    }

    pub fn to_text(&self) -> String {
        format!(
            "total = {}\nvalid = {}\nincomplete_trajectory = {} ({:.4})\n\
             malformed_waypoint = {} ({:.4})\ninvalid_character = {} ({:.4})\n\
             overall_failure_rate = {:.4}\n",
            self.total,
            self.valid,
            self.incomplete,
            self.rate(ParseFailureKind::IncompleteTrajectory),
            self.malformed,
            self.rate(ParseFailureKind::MalformedWaypoint),
            self.invalid_character,
            self.rate(ParseFailureKind::InvalidCharacter),
            self.failure_rate(),
        )
    }
}

/// Parses every string in the corpus and tabulates outcomes.
pub fn parse_audit<S: AsRef<str>>(corpus: &[S], expected_t: usize) -> Result<ParseAuditSummary> {
    if corpus.is_empty() {
        return Err(Error::InvalidArgument("audit corpus is empty".into()));
    }
    let mut summary = ParseAuditSummary {
        total: corpus.len(),
        valid: 0,
        incomplete: 0,
        malformed: 0,
        invalid_character: 0,
    };
    for s in corpus {
        match parse_trajectory_text(s.as_ref(), expected_t) {
            Ok(_) => summary.valid += 1,
            Err(f) => match f.kind {
                ParseFailureKind::IncompleteTrajectory => summary.incomplete += 1,
                ParseFailureKind::MalformedWaypoint => summary.malformed += 1,
                ParseFailureKind::InvalidCharacter => summary.invalid_character += 1,
            },
        }
    }
    Ok(summary)
}

/// Parses a global-track file: one `timestamp easting northing heading`
/// line per pose, `#` comments and blank lines skipped.
pub fn parse_track_text(text: &str, origin: &Path) -> Result<Vec<(f64, Pose2D)>> {
    let mut poses = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::format(
                origin,
                idx + 1,
                format!("expected 4 fields, found {}", fields.len()),
            ));
        }
        let nums: Vec<f64> = fields
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| Error::format(origin, idx + 1, format!("invalid number {f:?}")))
            })
            .collect::<Result<_>>()?;
        let pose = Pose2D::new(nums[1], nums[2], nums[3])
            .map_err(|e| Error::format(origin, idx + 1, e.to_string()))?;
        poses.push((nums[0], pose));
    }
    Ok(poses)
}

/// Resamples a timestamped global track to the waypoint step and converts
/// each grid pose into an ego-frame record. Grid poses without `steps`
/// future positions are skipped; the skip count is returned alongside.
pub fn import_global_track(
    poses: &[(f64, Pose2D)],
    context_stub: &[f64],
    dt: f64,
    steps: usize,
    thresholds: &ManeuverThresholds,
) -> Result<(Vec<SceneRecord>, usize)> {
    if poses.len() < 2 {
        return Err(Error::InvalidArgument(
            "global track needs at least two poses".into(),
        ));
    }
    if context_stub.is_empty() || context_stub.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite {
            context: "context stub",
        });
    }
    if steps < 1 || !dt.is_finite() || dt <= 0.0 {
        return Err(Error::InvalidArgument(
            "steps must be >= 1 and dt positive".into(),
        ));
    }
    for pair in poses.windows(2) {
        if pair[1].0 <= pair[0].0 {
            return Err(Error::InvalidArgument(
                "track timestamps must be strictly increasing".into(),
            ));
        }
    }

    let t0 = poses[0].0;
    let t_end = poses[poses.len() - 1].0;
    let grid_len = ((t_end - t0) / dt + 1e-9).floor() as usize + 1;
    let mut grid = Vec::with_capacity(grid_len);
    let mut segment = 0usize;
    for k in 0..grid_len {
        let t = t0 + k as f64 * dt;
        while segment + 2 < poses.len() && poses[segment + 1].0 < t {
            segment += 1;
        }
        let (ta, pa) = poses[segment];
        let (tb, pb) = poses[segment + 1];
        let u = ((t - ta) / (tb - ta)).clamp(0.0, 1.0);
        let easting = pa.easting + u * (pb.easting - pa.easting);
        let northing = pa.northing + u * (pb.northing - pa.northing);
        // shortest-arc heading interpolation
        let dh = crate::geometry::normalize_angle(pb.heading() - pa.heading());
        let heading = pa.heading() + u * dh;
        grid.push(Pose2D::new(easting, northing, heading)?);
    }

    let mut records = Vec::new();
    let mut skipped = 0usize;
    for (i, anchor) in grid.iter().enumerate() {
        if i + steps >= grid.len() {
            skipped += 1;
            continue;
        }
        let future: Vec<(f64, f64)> = grid[i + 1..=i + steps]
            .iter()
            .map(|p| (p.easting, p.northing))
            .collect();
        let gt = utm_to_ego(anchor, &future, dt)?;
        let id = format!("track{i:06}");
        records.push(SceneRecord::new(
            id.clone(),
            format!("{id}.0"),
            context_stub.to_vec(),
            gt,
            RecordSource::ImportedGlobalTrack,
            thresholds,
        )?);
    }
    Ok((records, skipped))
}
