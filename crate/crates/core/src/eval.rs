//! Displacement-error metrics and optimal speed rescaling.
//!
//! Two readout conventions are used side by side. The point error
//! `l2_at` is the Euclidean displacement at exactly the requested horizon;
//! the running average `l2_avg_to` is the mean displacement over all
//! waypoints up to that horizon. Reports aggregate both at 1, 2, 3, and 5
//! seconds plus the mean of the first three.
//!
//! The speed scale `lambda*` is the scalar that best maps a predicted
//! trajectory onto the ground truth. The default minimizes the summed
//! squared deviation, which has the closed form
//! `sum(<pred, gt>) / sum(|pred|^2)`; a variant minimizing the summed
//! unsquared deviations is available for sensitivity checks and is solved
//! by golden-section search. `|lambda* - 1|` measures how far the
//! prediction's speed profile is from the ground truth's.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::SceneRecord;
use crate::error::{Error, Result};
use crate::geometry::Trajectory;
use crate::policy::{self, PolicyParams, RolloutMode};

/// Horizons every report covers, seconds.
pub const REPORT_HORIZONS_S: [f64; 4] = [1.0, 2.0, 3.0, 5.0];

/// Euclidean displacement at exactly `horizon_s` seconds ahead.
pub fn l2_at(pred: &Trajectory, gt: &Trajectory, horizon_s: f64) -> Result<f64> {
    let k = horizon_index(pred, gt, horizon_s)?;
    Ok(pred.waypoints()[k].distance(&gt.waypoints()[k]))
}

/// Mean per-waypoint displacement over all waypoints up to `horizon_s`.
pub fn l2_avg_to(pred: &Trajectory, gt: &Trajectory, horizon_s: f64) -> Result<f64> {
    let k = horizon_index(pred, gt, horizon_s)?;
    let sum: f64 = pred.waypoints()[..=k]
        .iter()
        .zip(&gt.waypoints()[..=k])
        .map(|(p, g)| p.distance(g))
        .sum();
    Ok(sum / (k + 1) as f64)
}

/// Maps a horizon in seconds to the 0-based waypoint index, requiring the
/// horizon to be a whole number of steps within both trajectories.
fn horizon_index(pred: &Trajectory, gt: &Trajectory, horizon_s: f64) -> Result<usize> {
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch {
            expected: gt.len(),
            got: pred.len(),
        });
    }
    if (pred.dt() - gt.dt()).abs() > 1e-12 {
        return Err(Error::InvalidArgument(
            "prediction and ground truth disagree on dt".into(),
        ));
    }
    let steps = horizon_s / pred.dt();
    let k = steps.round();
    if !horizon_s.is_finite() || horizon_s <= 0.0 || (steps - k).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "horizon {horizon_s} s is not a whole number of {} s steps",
            pred.dt()
        )));
    }
    let k = k as usize;
    if k < 1 || k > pred.len() {
        return Err(Error::InvalidArgument(format!(
            "horizon {horizon_s} s is outside the {}-step trajectory",
            pred.len()
        )));
    }
    Ok(k - 1)
}

/// Closed-form minimizer of the summed squared deviation
/// `sum_i |lambda * pred_i - gt_i|^2`.
pub fn optimal_speed_scale(pred: &Trajectory, gt: &Trajectory) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch {
            expected: gt.len(),
            got: pred.len(),
        });
    }
    let mut dot = 0.0;
    let mut norm_sq = 0.0;
    for (p, g) in pred.waypoints().iter().zip(gt.waypoints()) {
        dot += p.x * g.x + p.y * g.y;
        norm_sq += p.x * p.x + p.y * p.y;
    }
    if norm_sq == 0.0 {
        return Err(Error::InvalidArgument(
            "speed scale undefined for an all-zero prediction".into(),
        ));
    }
    Ok(dot / norm_sq)
}

/// Minimizer of the summed unsquared deviation
/// `sum_i |lambda * pred_i - gt_i|`, by golden-section search over a
/// bracket spanning every per-term minimizer. The objective is convex.
pub fn optimal_speed_scale_unsquared(pred: &Trajectory, gt: &Trajectory) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch {
            expected: gt.len(),
            got: pred.len(),
        });
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (p, g) in pred.waypoints().iter().zip(gt.waypoints()) {
        let norm_sq = p.x * p.x + p.y * p.y;
        if norm_sq > 0.0 {
            let term_min = (p.x * g.x + p.y * g.y) / norm_sq;
            lo = lo.min(term_min);
            hi = hi.max(term_min);
        }
    }
    if !lo.is_finite() {
        return Err(Error::InvalidArgument(
            "speed scale undefined for an all-zero prediction".into(),
        ));
    }
    let objective = |lambda: f64| -> f64 {
        pred.waypoints()
            .iter()
            .zip(gt.waypoints())
            .map(|(p, g)| (lambda * p.x - g.x).hypot(lambda * p.y - g.y))
            .sum()
    };
    Ok(golden_section(objective, lo - 1.0, hi + 1.0, 1e-10))
}

/// Golden-section minimization of a unimodal function on `[lo, hi]`.
fn golden_section(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let inv_phi = 0.5 * (5.0f64.sqrt() - 1.0);
    let mut a = hi - inv_phi * (hi - lo);
    let mut b = lo + inv_phi * (hi - lo);
    let mut fa = f(a);
    let mut fb = f(b);
    for _ in 0..200 {
        if hi - lo < tol {
            break;
        }
        if fa < fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - inv_phi * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + inv_phi * (hi - lo);
            fb = f(b);
        }
    }
    0.5 * (lo + hi)
}

/// Metric values at the report horizons plus the 1-3 s mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HorizonMetrics {
    pub h1s: f64,
    pub h2s: f64,
    pub h3s: f64,
    pub h5s: f64,
    pub avg_1to3: f64,
}

impl HorizonMetrics {
    fn from_values(h1s: f64, h2s: f64, h3s: f64, h5s: f64) -> Self {
        HorizonMetrics {
            h1s,
            h2s,
            h3s,
            h5s,
            avg_1to3: (h1s + h2s + h3s) / 3.0,
        }
    }

    fn from_fn(mut metric: impl FnMut(f64) -> Result<f64>) -> Result<Self> {
        Ok(Self::from_values(
            metric(1.0)?,
            metric(2.0)?,
            metric(3.0)?,
            metric(5.0)?,
        ))
    }

    pub fn as_pairs(&self) -> [(f64, f64); 4] {
        [
            (1.0, self.h1s),
            (2.0, self.h2s),
            (3.0, self.h3s),
            (5.0, self.h5s),
        ]
    }

    fn mean(items: impl Iterator<Item = HorizonMetrics>) -> HorizonMetrics {
        let mut acc = [0.0f64; 4];
        let mut n = 0usize;
        for m in items {
            acc[0] += m.h1s;
            acc[1] += m.h2s;
            acc[2] += m.h3s;
            acc[3] += m.h5s;
            n += 1;
        }
        let n = n.max(1) as f64;
        HorizonMetrics::from_values(acc[0] / n, acc[1] / n, acc[2] / n, acc[3] / n)
    }
}

/// Point-error metrics for both conventions on one prediction.
pub fn horizon_metrics(pred: &Trajectory, gt: &Trajectory) -> Result<(HorizonMetrics, HorizonMetrics)> {
    let max = HorizonMetrics::from_fn(|h| l2_at(pred, gt, h))?;
    let avg = HorizonMetrics::from_fn(|h| l2_avg_to(pred, gt, h))?;
    Ok((max, avg))
}

/// Per-record speed rescaling outcome: the scale, the point-error metrics
/// of the rescaled prediction, and `|lambda* - 1|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedScaleResult {
    pub lambda_star: f64,
    pub rescaled_metrics: HorizonMetrics,
    pub adaptation_gap: f64,
}

/// Which objective the speed scale minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpeedScaleVariant {
    /// Summed squared deviations; closed form. The default.
    Squared,
    /// Summed unsquared deviations; golden-section search.
    Unsquared,
}

/// Rescales the prediction by its optimal scale and measures the result.
pub fn speed_scale_result(
    pred: &Trajectory,
    gt: &Trajectory,
    variant: SpeedScaleVariant,
) -> Result<SpeedScaleResult> {
    let lambda = match variant {
        SpeedScaleVariant::Squared => optimal_speed_scale(pred, gt)?,
        SpeedScaleVariant::Unsquared => optimal_speed_scale_unsquared(pred, gt)?,
    };
    let rescaled = pred.scaled(lambda)?;
    let rescaled_metrics = HorizonMetrics::from_fn(|h| l2_at(&rescaled, gt, h))?;
    Ok(SpeedScaleResult {
        lambda_star: lambda,
        rescaled_metrics,
        adaptation_gap: (lambda - 1.0).abs(),
    })
}

/// Aggregated speed-scale statistics over a dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedScaleSummary {
    pub variant: SpeedScaleVariant,
    pub mean_lambda: f64,
    pub mean_adaptation_gap: f64,
    pub rescaled_l2_max: HorizonMetrics,
}

/// Dataset-level evaluation: unweighted means over records.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub records: usize,
    pub l2_max: HorizonMetrics,
    pub l2_avg: HorizonMetrics,
    pub speed_scale: Option<SpeedScaleSummary>,
}

impl EvalReport {
    /// Key-value text with one section per metric family.
    pub fn to_text(&self) -> String {
        let mut out = format!("records = {}\n", self.records);
        let section = |name: &str, m: &HorizonMetrics| {
            format!(
                "[{name}]\n1s = {:.9}\n2s = {:.9}\n3s = {:.9}\n5s = {:.9}\navg_1to3 = {:.9}\n",
                m.h1s, m.h2s, m.h3s, m.h5s, m.avg_1to3
            )
        };
        out.push_str(&section("l2_max", &self.l2_max));
        out.push_str(&section("l2_avg", &self.l2_avg));
        if let Some(ss) = &self.speed_scale {
            out.push_str(&format!(
                "[speed_scale]\nvariant = {}\nmean_lambda = {:.9}\nmean_adaptation_gap = {:.9}\n",
                match ss.variant {
                    SpeedScaleVariant::Squared => "squared",
                    SpeedScaleVariant::Unsquared => "unsquared",
                },
                ss.mean_lambda,
                ss.mean_adaptation_gap
            ));
            out.push_str(&section("l2_max_rescaled", &ss.rescaled_l2_max));
        }
        out
    }

    /// CSV rows `metric,horizon_s,value,rescaled`; the 1-3 s averages use
    /// horizon 0 as a sentinel.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,horizon_s,value,rescaled\n");
        let mut push = |metric: &str, m: &HorizonMetrics, rescaled: bool| {
            for (h, v) in m.as_pairs() {
                out.push_str(&format!("{metric},{h},{v},{rescaled}\n"));
            }
            out.push_str(&format!("{metric},0,{},{rescaled}\n", m.avg_1to3));
        };
        push("l2_max", &self.l2_max, false);
        push("l2_avg", &self.l2_avg, false);
        if let Some(ss) = &self.speed_scale {
            push("l2_max", &ss.rescaled_l2_max, true);
            out.push_str(&format!("lambda_star,0,{},true\n", ss.mean_lambda));
            out.push_str(&format!(
                "adaptation_gap,0,{},true\n",
                ss.mean_adaptation_gap
            ));
        }
        out
    }
}

/// Evaluates an arbitrary predictor record by record. The predictor sees
/// the record (context and metadata) but scoring always compares against
/// `record.gt`.
pub fn evaluate_with(
    dataset: &[SceneRecord],
    mut predict: impl FnMut(&SceneRecord) -> Result<Trajectory>,
    speed_scale: Option<SpeedScaleVariant>,
) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut max_metrics = Vec::with_capacity(dataset.len());
    let mut avg_metrics = Vec::with_capacity(dataset.len());
    let mut scale_results = Vec::new();
    for record in dataset {
        let pred = predict(record)?;
        let (max, avg) = horizon_metrics(&pred, &record.gt)?;
        max_metrics.push(max);
        avg_metrics.push(avg);
        if let Some(variant) = speed_scale {
            scale_results.push(speed_scale_result(&pred, &record.gt, variant)?);
        }
    }
    let speed_scale = speed_scale.map(|variant| {
        let n = scale_results.len() as f64;
        SpeedScaleSummary {
            variant,
            mean_lambda: scale_results.iter().map(|r| r.lambda_star).sum::<f64>() / n,
            mean_adaptation_gap: scale_results
                .iter()
                .map(|r| r.adaptation_gap)
                .sum::<f64>()
                / n,
            rescaled_l2_max: HorizonMetrics::mean(
                scale_results.iter().map(|r| r.rescaled_metrics),
            ),
        }
    });
    Ok(EvalReport {
        records: dataset.len(),
        l2_max: HorizonMetrics::mean(max_metrics.into_iter()),
        l2_avg: HorizonMetrics::mean(avg_metrics.into_iter()),
        speed_scale,
    })
}

/// Evaluates a policy with free-running rollouts, the inference-time
/// regime: each prediction conditions only on the model's own outputs.
pub fn evaluate(
    dataset: &[SceneRecord],
    params: &PolicyParams,
    speed_scale: Option<SpeedScaleVariant>,
) -> Result<EvalReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(0); // free running draws nothing
    evaluate_with(
        dataset,
        |record| {
            let (pred, _) = policy::rollout(
                params,
                &record.context,
                None,
                record.gt.len(),
                record.gt.dt(),
                RolloutMode::FreeRunning,
                &mut rng,
            )?;
            Ok(pred)
        },
        speed_scale,
    )
}
