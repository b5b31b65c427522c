//! Desk-scale autoregressive waypoint predictor.
//!
//! A two-layer network maps `[context; previous waypoint; normalized step
//! index]` to the next waypoint mean. Rollouts generate a trajectory by
//! feeding each step's input from the ground truth, the model's own previous
//! prediction, or a per-step Bernoulli mixture of the two. Gradients are
//! computed manually and deliberately do not flow through the fed-back
//! inputs: each step is differentiated with its input held fixed, which
//! keeps the scheduled-sampling objective well-defined and cheap.
//!
//! Checkpoints are little-endian binary: magic `WPOL`, `u32` version,
//! `u32` context_dim, `u32` hidden_dim, `u64` init seed, then `w1`, `b1`,
//! `w2`, `b2` as row-major `f64`.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{Trajectory, Waypoint};

const WPOL_MAGIC: &[u8; 4] = b"WPOL";
const WPOL_VERSION: u32 = 1;

/// Default hidden layer width.
pub const DEFAULT_HIDDEN_DIM: usize = 64;

/// Weights of the step network.
///
/// `w1` is `hidden_dim x (context_dim + 3)` row-major, `w2` is
/// `2 x hidden_dim` row-major; biases match their layer outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    context_dim: usize,
    hidden_dim: usize,
    seed: u64,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
}

impl PolicyParams {
    /// All-zero parameters with the given shape.
    pub fn zeroed(context_dim: usize, hidden_dim: usize) -> Result<Self> {
        if context_dim < 1 || hidden_dim < 1 {
            return Err(Error::InvalidArgument(
                "context_dim and hidden_dim must be at least 1".into(),
            ));
        }
        let input_dim = context_dim + 3;
        Ok(PolicyParams {
            context_dim,
            hidden_dim,
            seed: 0,
            w1: vec![0.0; hidden_dim * input_dim],
            b1: vec![0.0; hidden_dim],
            w2: vec![0.0; 2 * hidden_dim],
            b2: vec![0.0; 2],
        })
    }

    pub fn context_dim(&self) -> usize {
        self.context_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    /// Seed recorded at initialization, stored in checkpoints.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Width of the step input: context plus previous waypoint plus index.
    pub fn input_dim(&self) -> usize {
        self.context_dim + 3
    }

    pub fn num_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    /// Copies all parameters into one vector, in declaration order
    /// (`w1`, `b1`, `w2`, `b2`).
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        out.extend_from_slice(&self.w1);
        out.extend_from_slice(&self.b1);
        out.extend_from_slice(&self.w2);
        out.extend_from_slice(&self.b2);
        out
    }

    /// Overwrites all parameters from a flat vector in declaration order.
    pub fn set_from_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_params() {
            return Err(Error::LengthMismatch {
                expected: self.num_params(),
                got: values.len(),
            });
        }
        let (a, rest) = values.split_at(self.w1.len());
        let (b, rest) = rest.split_at(self.b1.len());
        let (c, d) = rest.split_at(self.w2.len());
        self.w1.copy_from_slice(a);
        self.b1.copy_from_slice(b);
        self.w2.copy_from_slice(c);
        self.b2.copy_from_slice(d);
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.w1
            .iter()
            .chain(&self.b1)
            .chain(&self.w2)
            .chain(&self.b2)
            .all(|v| v.is_finite())
    }

    fn same_shape(&self, other: &PolicyParams) -> bool {
        self.context_dim == other.context_dim && self.hidden_dim == other.hidden_dim
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(24 + self.num_params() * 8);
        buf.extend_from_slice(WPOL_MAGIC);
        buf.extend_from_slice(&WPOL_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.context_dim as u32).to_le_bytes());
        buf.extend_from_slice(&(self.hidden_dim as u32).to_le_bytes());
        buf.extend_from_slice(&self.seed.to_le_bytes());
        for v in self.flat() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let fail = |msg: String| Error::format(path, 0, msg);
        if bytes.len() < 24 {
            return Err(fail("truncated checkpoint header".into()));
        }
        if &bytes[0..4] != WPOL_MAGIC {
            return Err(fail("bad magic, expected WPOL".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != WPOL_VERSION {
            return Err(fail(format!("unsupported checkpoint version {version}")));
        }
        let context_dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let hidden_dim = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let seed = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
        let mut params = PolicyParams::zeroed(context_dim.max(1), hidden_dim.max(1))
            .map_err(|e| fail(e.to_string()))?;
        if context_dim < 1 || hidden_dim < 1 {
            return Err(fail("checkpoint dimensions must be at least 1".into()));
        }
        params.seed = seed;
        let payload = &bytes[24..];
        if payload.len() != params.num_params() * 8 {
            return Err(fail(format!(
                "expected {} parameter bytes, found {}",
                params.num_params() * 8,
                payload.len()
            )));
        }
        let values: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        params.set_from_flat(&values).map_err(|e| fail(e.to_string()))?;
        if !params.is_finite() {
            return Err(fail("checkpoint contains non-finite weights".into()));
        }
        Ok(params)
    }
}

/// Xavier-uniform initialization: weights uniform in
/// `±sqrt(6 / (fan_in + fan_out))`, biases zero. Deterministic per seed.
pub fn init_params(context_dim: usize, hidden_dim: usize, seed: u64) -> Result<PolicyParams> {
    let mut params = PolicyParams::zeroed(context_dim, hidden_dim)?;
    params.seed = seed;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input_dim = params.input_dim();
    let bound1 = (6.0 / (input_dim + hidden_dim) as f64).sqrt();
    for w in params.w1.iter_mut() {
        *w = rng.random_range(-bound1..bound1);
    }
    let bound2 = (6.0 / (hidden_dim + 2) as f64).sqrt();
    for w in params.w2.iter_mut() {
        *w = rng.random_range(-bound2..bound2);
    }
    Ok(params)
}

/// How rollout inputs are chosen at each step after the first.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RolloutMode {
    /// Always condition on the ground-truth previous waypoint.
    TeacherForced,
    /// Use the model's own previous prediction with the given probability,
    /// otherwise the ground truth. Probability must lie in `[0, 1]`.
    Scheduled(f64),
    /// Always condition on the model's own previous prediction; no ground
    /// truth is consulted.
    FreeRunning,
}

impl RolloutMode {
    fn validate(&self) -> Result<()> {
        if let RolloutMode::Scheduled(p) = self {
            if !p.is_finite() || !(0.0..=1.0).contains(p) {
                return Err(Error::InvalidArgument(format!(
                    "scheduled-sampling probability must be in [0, 1], got {p}"
                )));
            }
        }
        Ok(())
    }

    fn needs_ground_truth(&self) -> bool {
        !matches!(self, RolloutMode::FreeRunning)
    }

    fn name(&self) -> &'static str {
        match self {
            RolloutMode::TeacherForced => "teacher-forced",
            RolloutMode::Scheduled(_) => "scheduled",
            RolloutMode::FreeRunning => "free-running",
        }
    }
}

/// Which input fed each step after the first.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputChoice {
    UsedGroundTruth,
    UsedPrediction,
}

/// One autoregressive step: the waypoint mean for step `t_index` of
/// `t_total`, conditioned on the context and the previous waypoint.
pub fn step(
    params: &PolicyParams,
    context: &[f64],
    prev: Waypoint,
    t_index: usize,
    t_total: usize,
) -> Result<Waypoint> {
    check_step_args(params, context, prev, t_index, t_total)?;
    let input = build_input(params, context, prev, t_index, t_total);
    let mut hidden = vec![0.0; params.hidden_dim];
    forward(params, &input, &mut hidden, |_| {})
}

fn check_step_args(
    params: &PolicyParams,
    context: &[f64],
    prev: Waypoint,
    t_index: usize,
    t_total: usize,
) -> Result<()> {
    if context.len() != params.context_dim {
        return Err(Error::DimensionMismatch(format!(
            "context has {} features, policy expects {}",
            context.len(),
            params.context_dim
        )));
    }
    if t_total < 1 || t_index >= t_total {
        return Err(Error::InvalidArgument(format!(
            "step index {t_index} outside horizon {t_total}"
        )));
    }
    if !context.iter().all(|c| c.is_finite()) || !prev.is_finite() {
        return Err(Error::NonFinite {
            context: "policy step input",
        });
    }
    Ok(())
}

fn build_input(
    params: &PolicyParams,
    context: &[f64],
    prev: Waypoint,
    t_index: usize,
    t_total: usize,
) -> Vec<f64> {
    let mut input = Vec::with_capacity(params.input_dim());
    input.extend_from_slice(context);
    input.push(prev.x);
    input.push(prev.y);
    input.push(t_index as f64 / t_total as f64);
    input
}

fn forward(
    params: &PolicyParams,
    input: &[f64],
    hidden: &mut [f64],
    mut on_hidden: impl FnMut(&[f64]),
) -> Result<Waypoint> {
    let input_dim = params.input_dim();
    for (j, h) in hidden.iter_mut().enumerate() {
        let row = &params.w1[j * input_dim..(j + 1) * input_dim];
        let mut z = params.b1[j];
        for (w, x) in row.iter().zip(input) {
            z += w * x;
        }
        *h = z.tanh();
    }
    on_hidden(hidden);
    let mut out = [params.b2[0], params.b2[1]];
    for (k, o) in out.iter_mut().enumerate() {
        let row = &params.w2[k * params.hidden_dim..(k + 1) * params.hidden_dim];
        for (w, h) in row.iter().zip(hidden.iter()) {
            *o += w * h;
        }
    }
    Ok(Waypoint::new(out[0], out[1]))
}

struct StepTrace {
    input: Vec<f64>,
    hidden: Vec<f64>,
    output: Waypoint,
}

fn rollout_traced(
    params: &PolicyParams,
    context: &[f64],
    gt: Option<&Trajectory>,
    steps: usize,
    mode: RolloutMode,
    rng: &mut impl Rng,
) -> Result<(Vec<StepTrace>, Vec<InputChoice>)> {
    mode.validate()?;
    if steps < 1 {
        return Err(Error::InvalidArgument(
            "rollout needs at least one step".into(),
        ));
    }
    let gt_points = if mode.needs_ground_truth() {
        let gt = gt.ok_or(Error::MissingGroundTruth { mode: mode.name() })?;
        if gt.len() != steps {
            return Err(Error::LengthMismatch {
                expected: steps,
                got: gt.len(),
            });
        }
        Some(gt.waypoints())
    } else {
        None
    };

    let mut traces: Vec<StepTrace> = Vec::with_capacity(steps);
    let mut choices = Vec::with_capacity(steps.saturating_sub(1));
    for t in 0..steps {
        let prev = if t == 0 {
            Waypoint::default() // implicit origin waypoint
        } else {
            let own = traces[t - 1].output;
            let (choice, value) = match mode {
                RolloutMode::TeacherForced => (InputChoice::UsedGroundTruth, gt_points.unwrap()[t - 1]),
                RolloutMode::FreeRunning => (InputChoice::UsedPrediction, own),
                RolloutMode::Scheduled(p) => {
                    if rng.random::<f64>() < p {
                        (InputChoice::UsedPrediction, own)
                    } else {
                        (InputChoice::UsedGroundTruth, gt_points.unwrap()[t - 1])
                    }
                }
            };
            choices.push(choice);
            value
        };
        check_step_args(params, context, prev, t, steps)?;
        let input = build_input(params, context, prev, t, steps);
        let mut hidden = vec![0.0; params.hidden_dim];
        let output = forward(params, &input, &mut hidden, |_| {})?;
        traces.push(StepTrace {
            input,
            hidden,
            output,
        });
    }
    Ok((traces, choices))
}

/// Generates a trajectory of `steps` waypoints at `dt`-second spacing.
///
/// Ground truth must be provided (with matching length) unless the mode is
/// `FreeRunning`, in which case any supplied trajectory is ignored. The
/// returned choices record, for every step after the first, whether the
/// ground truth or the model's own prediction fed the input.
pub fn rollout(
    params: &PolicyParams,
    context: &[f64],
    gt: Option<&Trajectory>,
    steps: usize,
    dt: f64,
    mode: RolloutMode,
    rng: &mut impl Rng,
) -> Result<(Trajectory, Vec<InputChoice>)> {
    let (traces, choices) = rollout_traced(params, context, gt, steps, mode, rng)?;
    let waypoints = traces.iter().map(|t| t.output).collect();
    Ok((Trajectory::new(waypoints, dt)?, choices))
}

/// Mean squared-distance loss over the batch and its gradient.
///
/// Every record is rolled out under `mode` (consuming `rng` in batch order),
/// the loss is the mean over records of the summed squared waypoint error,
/// and the gradient treats each step's fed-back input as a constant.
pub fn backprop(
    params: &PolicyParams,
    batch: &[(&[f64], &Trajectory)],
    mode: RolloutMode,
    rng: &mut impl Rng,
) -> Result<(f64, PolicyParams)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut grads = PolicyParams::zeroed(params.context_dim, params.hidden_dim)?;
    grads.seed = params.seed;
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let input_dim = params.input_dim();

    for (context, gt) in batch {
        let (traces, _) = rollout_traced(params, context, Some(gt), gt.len(), mode, rng)?;
        for (trace, target) in traces.iter().zip(gt.waypoints()) {
            let ex = trace.output.x - target.x;
            let ey = trace.output.y - target.y;
            loss += scale * (ex * ex + ey * ey);
            let dout = [2.0 * scale * ex, 2.0 * scale * ey];

            // output layer
            for (k, d) in dout.iter().enumerate() {
                grads.b2[k] += d;
                let row = &mut grads.w2[k * params.hidden_dim..(k + 1) * params.hidden_dim];
                for (g, h) in row.iter_mut().zip(&trace.hidden) {
                    *g += d * h;
                }
            }
            // hidden layer through tanh
            for j in 0..params.hidden_dim {
                let dh = params.w2[j] * dout[0] + params.w2[params.hidden_dim + j] * dout[1];
                let dz = dh * (1.0 - trace.hidden[j] * trace.hidden[j]);
                grads.b1[j] += dz;
                let row = &mut grads.w1[j * input_dim..(j + 1) * input_dim];
                for (g, x) in row.iter_mut().zip(&trace.input) {
                    *g += dz * x;
                }
            }
        }
    }
    Ok((loss, grads))
}

/// Elementwise sum of two same-shaped parameter sets, used by optimizers.
pub fn add_scaled(params: &PolicyParams, delta: &PolicyParams, scale: f64) -> Result<PolicyParams> {
    if !params.same_shape(delta) {
        return Err(Error::DimensionMismatch(
            "parameter shapes do not match".into(),
        ));
    }
    let mut out = params.clone();
    let flat: Vec<f64> = params
        .flat()
        .iter()
        .zip(delta.flat())
        .map(|(p, d)| p + scale * d)
        .collect();
    out.set_from_flat(&flat)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::DEFAULT_DT;
    use rand::SeedableRng;

    fn ctx4() -> Vec<f64> {
        vec![0.3, -1.2, 0.05, 2.0]
    }

    fn gt10() -> Trajectory {
        let pts: Vec<(f64, f64)> = (1..=10)
            .map(|i| (2.0 * i as f64, 0.1 * (i * i) as f64))
            .collect();
        Trajectory::from_points(&pts).unwrap()
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_params(4, 64, 7).unwrap();
        let b = init_params(4, 64, 7).unwrap();
        assert_eq!(a, b);
        let c = init_params(4, 64, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn xavier_bounds_and_zero_biases() {
        let p = init_params(4, 64, 1).unwrap();
        let bound1 = (6.0f64 / (7.0 + 64.0)).sqrt();
        assert!((bound1 - 0.2907).abs() < 1e-4);
        assert!(p.w1.iter().all(|w| w.abs() <= bound1));
        // with 448 uniform draws the max should come close to the bound
        let max1 = p.w1.iter().fold(0.0f64, |m, w| m.max(w.abs()));
        assert!(max1 > 0.8 * bound1);
        let bound2 = (6.0 / 66.0f64).sqrt();
        assert!(p.w2.iter().all(|w| w.abs() <= bound2));
        assert!(p.b1.iter().all(|b| *b == 0.0));
        assert!(p.b2.iter().all(|b| *b == 0.0));
    }

    #[test]
    fn zero_dims_rejected() {
        assert!(init_params(0, 64, 1).is_err());
        assert!(init_params(4, 0, 1).is_err());
    }

    #[test]
    fn zero_weights_output_origin() {
        let p = PolicyParams::zeroed(4, 16).unwrap();
        let w = step(&p, &ctx4(), Waypoint::new(3.0, -1.0), 2, 10).unwrap();
        assert_eq!((w.x, w.y), (0.0, 0.0));
    }

    #[test]
    fn step_is_finite_and_pure() {
        let p = init_params(4, 32, 3).unwrap();
        let a = step(&p, &ctx4(), Waypoint::new(1e6, -1e6), 9, 10).unwrap();
        assert!(a.is_finite());
        let b = step(&p, &ctx4(), Waypoint::new(1e6, -1e6), 9, 10).unwrap();
        assert_eq!((a.x, a.y), (b.x, b.y));
    }

    #[test]
    fn step_validates_dimensions() {
        let p = init_params(4, 8, 0).unwrap();
        assert!(step(&p, &[1.0], Waypoint::default(), 0, 10).is_err());
        assert!(step(&p, &ctx4(), Waypoint::default(), 10, 10).is_err());
        assert!(step(&p, &ctx4(), Waypoint::new(f64::NAN, 0.0), 0, 10).is_err());
    }

    #[test]
    fn teacher_forced_uses_ground_truth_everywhere() {
        let p = init_params(4, 16, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (_, choices) = rollout(
            &p,
            &ctx4(),
            Some(&gt10()),
            10,
            DEFAULT_DT,
            RolloutMode::TeacherForced,
            &mut rng,
        )
        .unwrap();
        assert_eq!(choices.len(), 9);
        assert!(choices.iter().all(|c| *c == InputChoice::UsedGroundTruth));
    }

    #[test]
    fn free_running_ignores_ground_truth() {
        let p = init_params(4, 16, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (with_gt, choices) = rollout(
            &p,
            &ctx4(),
            Some(&gt10()),
            10,
            DEFAULT_DT,
            RolloutMode::FreeRunning,
            &mut rng,
        )
        .unwrap();
        let (without_gt, _) = rollout(
            &p,
            &ctx4(),
            None,
            10,
            DEFAULT_DT,
            RolloutMode::FreeRunning,
            &mut rng,
        )
        .unwrap();
        assert_eq!(with_gt, without_gt);
        assert!(choices.iter().all(|c| *c == InputChoice::UsedPrediction));
    }

    #[test]
    fn missing_ground_truth_is_error() {
        let p = init_params(4, 16, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = rollout(
            &p,
            &ctx4(),
            None,
            10,
            DEFAULT_DT,
            RolloutMode::TeacherForced,
            &mut rng,
        );
        assert!(matches!(r, Err(Error::MissingGroundTruth { .. })));
        let r = rollout(
            &p,
            &ctx4(),
            None,
            10,
            DEFAULT_DT,
            RolloutMode::Scheduled(0.5),
            &mut rng,
        );
        assert!(r.is_err());
    }

    #[test]
    fn scheduled_probability_validated() {
        let p = init_params(4, 8, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for bad in [-0.1, 1.1, f64::NAN] {
            assert!(rollout(
                &p,
                &ctx4(),
                Some(&gt10()),
                10,
                DEFAULT_DT,
                RolloutMode::Scheduled(bad),
                &mut rng,
            )
            .is_err());
        }
    }

    #[test]
    fn scheduled_extremes_match_pure_modes() {
        let p = init_params(4, 16, 9).unwrap();
        let gt = gt10();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (tf, tf_choices) = rollout(
            &p,
            &ctx4(),
            Some(&gt),
            10,
            DEFAULT_DT,
            RolloutMode::Scheduled(0.0),
            &mut rng,
        )
        .unwrap();
        assert!(tf_choices.iter().all(|c| *c == InputChoice::UsedGroundTruth));
        let mut rng2 = ChaCha8Rng::seed_from_u64(2);
        let (tf_ref, _) = rollout(
            &p,
            &ctx4(),
            Some(&gt),
            10,
            DEFAULT_DT,
            RolloutMode::TeacherForced,
            &mut rng2,
        )
        .unwrap();
        assert_eq!(tf, tf_ref);

        let mut rng3 = ChaCha8Rng::seed_from_u64(3);
        let (fr, fr_choices) = rollout(
            &p,
            &ctx4(),
            Some(&gt),
            10,
            DEFAULT_DT,
            RolloutMode::Scheduled(1.0),
            &mut rng3,
        )
        .unwrap();
        assert!(fr_choices.iter().all(|c| *c == InputChoice::UsedPrediction));
        let mut rng4 = ChaCha8Rng::seed_from_u64(4);
        let (fr_ref, _) = rollout(
            &p,
            &ctx4(),
            None,
            10,
            DEFAULT_DT,
            RolloutMode::FreeRunning,
            &mut rng4,
        )
        .unwrap();
        assert_eq!(fr, fr_ref);
    }

    #[test]
    fn scheduled_bernoulli_frequency() {
        let p = init_params(4, 8, 11).unwrap();
        let gt = gt10();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut used_pred = 0usize;
        let mut total = 0usize;
        while total < 100_000 {
            let (_, choices) = rollout(
                &p,
                &ctx4(),
                Some(&gt),
                10,
                DEFAULT_DT,
                RolloutMode::Scheduled(0.5),
                &mut rng,
            )
            .unwrap();
            used_pred += choices
                .iter()
                .filter(|c| **c == InputChoice::UsedPrediction)
                .count();
            total += choices.len();
        }
        let frac = used_pred as f64 / total as f64;
        assert!((frac - 0.5).abs() < 0.01, "fraction {frac}");
    }

    #[test]
    fn no_dependence_on_future_ground_truth() {
        // teacher-forced output at step t only sees gt up to t-1
        let p = init_params(4, 16, 13).unwrap();
        let gt = gt10();
        let mut perturbed_pts: Vec<(f64, f64)> = gt
            .waypoints()
            .iter()
            .map(|w| (w.x, w.y))
            .collect();
        perturbed_pts[7] = (99.0, -99.0);
        let perturbed = Trajectory::from_points(&perturbed_pts).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (a, _) = rollout(
            &p,
            &ctx4(),
            Some(&gt),
            10,
            DEFAULT_DT,
            RolloutMode::TeacherForced,
            &mut rng,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (b, _) = rollout(
            &p,
            &ctx4(),
            Some(&perturbed),
            10,
            DEFAULT_DT,
            RolloutMode::TeacherForced,
            &mut rng,
        )
        .unwrap();
        for t in 0..=7 {
            assert_eq!(a.waypoints()[t], b.waypoints()[t], "step {t}");
        }
        assert_ne!(a.waypoints()[8], b.waypoints()[8]);
    }

    #[test]
    fn backprop_zero_case() {
        let p = PolicyParams::zeroed(2, 8).unwrap();
        let gt = Trajectory::from_points(&[(0.0, 0.0), (0.0, 0.0)]).unwrap();
        let ctx = [0.0, 0.0];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (loss, grads) = backprop(
            &p,
            &[(&ctx, &gt)],
            RolloutMode::TeacherForced,
            &mut rng,
        )
        .unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.flat().iter().all(|g| *g == 0.0));
    }

    #[test]
    fn backprop_mean_semantics_under_duplication() {
        let p = init_params(3, 12, 21).unwrap();
        let ctx = [0.5, -0.5, 1.0];
        let gt = Trajectory::from_points(&[(1.0, 0.0), (2.0, 0.1), (3.0, 0.3)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (l1, g1) = backprop(&p, &[(&ctx, &gt)], RolloutMode::TeacherForced, &mut rng).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (l2, g2) = backprop(
            &p,
            &[(&ctx, &gt), (&ctx, &gt)],
            RolloutMode::TeacherForced,
            &mut rng,
        )
        .unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        for (a, b) in g1.flat().iter().zip(g2.flat()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn backprop_empty_batch_rejected() {
        let p = init_params(2, 4, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            backprop(&p, &[], RolloutMode::TeacherForced, &mut rng),
            Err(Error::EmptyBatch)
        ));
    }

    #[test]
    fn checkpoint_roundtrip() {
        let p = init_params(5, 24, 99).unwrap();
        let dir = std::env::temp_dir().join("waypoint_ar_ckpt_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("roundtrip.wpol");
        p.save(&path).unwrap();
        let loaded = PolicyParams::load(&path).unwrap();
        assert_eq!(p, loaded);
        assert_eq!(loaded.seed(), 99);
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn corrupted_checkpoint_rejected() {
        let dir = std::env::temp_dir().join("waypoint_ar_ckpt_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.wpol");
        std::fs::write(&path, b"JUNKxxxxyyyyzzzzwwwwvvvv").unwrap();
        assert!(PolicyParams::load(&path).is_err());

        // valid header, truncated payload
        let p = init_params(2, 4, 1).unwrap();
        p.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        assert!(PolicyParams::load(&path).is_err());
        std::fs::remove_file(&path).ok();
    }

    /// Central finite differences of the frozen-input objective. The fed
    /// inputs come from a reference rollout and are held fixed, matching the
    /// detached-input semantics of `backprop`.
    fn finite_difference_check(
        params: &PolicyParams,
        batch: &[(&[f64], &Trajectory)],
        mode: RolloutMode,
        seed: u64,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (loss, analytic) = backprop(params, batch, mode, &mut rng).unwrap();
        assert!(loss.is_finite());

        // reconstruct the per-record frozen inputs from an identical rollout
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut frozen: Vec<Vec<Waypoint>> = Vec::new();
        for (context, gt) in batch {
            let (pred, choices) = rollout(
                params,
                context,
                Some(gt),
                gt.len(),
                gt.dt(),
                mode,
                &mut rng,
            )
            .unwrap();
            let mut inputs = vec![Waypoint::default()];
            for t in 1..gt.len() {
                inputs.push(match choices[t - 1] {
                    InputChoice::UsedGroundTruth => gt.waypoints()[t - 1],
                    InputChoice::UsedPrediction => pred.waypoints()[t - 1],
                });
            }
            frozen.push(inputs);
        }

        let frozen_loss = |theta: &PolicyParams| -> f64 {
            let mut total = 0.0;
            for ((context, gt), inputs) in batch.iter().zip(&frozen) {
                for t in 0..gt.len() {
                    let out = step(theta, context, inputs[t], t, gt.len()).unwrap();
                    let dx = out.x - gt.waypoints()[t].x;
                    let dy = out.y - gt.waypoints()[t].y;
                    total += dx * dx + dy * dy;
                }
            }
            total / batch.len() as f64
        };

        let eps = 1e-5;
        let base = params.flat();
        let grad_flat = analytic.flat();
        for i in 0..base.len() {
            let mut plus = params.clone();
            let mut minus = params.clone();
            let mut v = base.clone();
            v[i] = base[i] + eps;
            plus.set_from_flat(&v).unwrap();
            v[i] = base[i] - eps;
            minus.set_from_flat(&v).unwrap();
            let fd = (frozen_loss(&plus) - frozen_loss(&minus)) / (2.0 * eps);
            let an = grad_flat[i];
            let denom = an.abs().max(fd.abs()).max(1e-6);
            assert!(
                ((an - fd) / denom).abs() < 1e-4,
                "param {i}: analytic {an} vs fd {fd}"
            );
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut seed_rng = ChaCha8Rng::seed_from_u64(2024);
        for round in 0..6 {
            let context_dim = 1 + (round % 3);
            let params = init_params(context_dim, 6 + round, seed_rng.random::<u64>() % 1000).unwrap();
            let ctx: Vec<f64> = (0..context_dim)
                .map(|_| seed_rng.random_range(-2.0..2.0))
                .collect();
            let ctx2: Vec<f64> = (0..context_dim)
                .map(|_| seed_rng.random_range(-2.0..2.0))
                .collect();
            let steps = 3 + round % 4;
            let mk = |rng: &mut ChaCha8Rng| {
                let pts: Vec<(f64, f64)> = (0..steps)
                    .map(|_| (rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)))
                    .collect();
                Trajectory::from_points(&pts).unwrap()
            };
            let gt1 = mk(&mut seed_rng);
            let gt2 = mk(&mut seed_rng);
            let batch: Vec<(&[f64], &Trajectory)> =
                vec![(ctx.as_slice(), &gt1), (ctx2.as_slice(), &gt2)];
            let mode = match round % 3 {
                0 => RolloutMode::TeacherForced,
                1 => RolloutMode::Scheduled(0.5),
                _ => RolloutMode::FreeRunning,
            };
            finite_difference_check(&params, &batch, mode, round as u64);
        }
    }
}
