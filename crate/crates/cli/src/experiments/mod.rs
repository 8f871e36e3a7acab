//! Experiment cases: each case measures a residual at several resolutions
//! and is judged by a list of gates.

mod diffusion;
mod ml;
mod noether;
mod ops;

use fracflux::SampledField;

use crate::config::{Experiment, ExperimentConfig};
use crate::CliError;

/// Residual norms at one resolution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Level {
    pub resolution: usize,
    pub max: f64,
    pub l2: f64,
    /// Rounding-error level of the measurement; residuals below it carry no
    /// convergence information.
    pub floor: f64,
}

impl Level {
    pub fn new(resolution: usize, max: f64, l2: f64) -> Self {
        Level { resolution, max, l2, floor: 0.0 }
    }

    /// A scalar measurement with no separate rms norm.
    pub fn scalar(resolution: usize, value: f64) -> Self {
        Level::new(resolution, value, value)
    }

    pub fn with_floor(mut self, floor: f64) -> Self {
        self.floor = floor;
        self
    }

    fn norm(&self, norm: OrderNorm) -> f64 {
        match norm {
            OrderNorm::Max => self.max,
            OrderNorm::L2 => self.l2,
        }
    }
}

/// Which norm fitted orders are computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrderNorm {
    Max,
    L2,
}

/// A pass/fail rule on the levels of a case.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Gate {
    /// Finest `max` residual at most the threshold (scaled by the tolerance).
    Max(f64),
    /// `max` residual strictly decreasing under refinement.
    Decreasing,
    /// Fitted order between the two finest levels at least the threshold.
    Order(f64),
    /// Every `max` residual at least the threshold: a quantity that must not
    /// converge to zero.
    Floor(f64),
    /// Reported, never fails.
    Report,
}

/// What a case computes.
pub struct Outcome {
    pub levels: Vec<Level>,
    /// Plottable field written to `field.csv`.
    pub field: Option<SampledField>,
    /// Extra text artifacts `(file name, contents)`.
    pub artifacts: Vec<(String, String)>,
}

impl Outcome {
    pub fn levels(levels: Vec<Level>) -> Self {
        Outcome { levels, field: None, artifacts: Vec::new() }
    }

    pub fn with_field(mut self, field: SampledField) -> Self {
        self.field = Some(field);
        self
    }
}

type Job = Box<dyn Fn() -> fracflux::Result<Outcome> + Send + Sync>;

/// One independent unit of work.
pub struct Case {
    pub experiment: Experiment,
    pub case_id: String,
    pub alpha: Option<f64>,
    pub gamma_split: Option<f64>,
    pub gates: Vec<Gate>,
    pub order_norm: OrderNorm,
    pub tolerance_scale: f64,
    pub run: Job,
}

impl Case {
    pub fn new(
        cfg: &ExperimentConfig,
        case_id: impl Into<String>,
        gates: Vec<Gate>,
        run: impl Fn() -> fracflux::Result<Outcome> + Send + Sync + 'static,
    ) -> Self {
        Case {
            experiment: cfg.experiment,
            case_id: case_id.into(),
            alpha: None,
            gamma_split: None,
            gates,
            order_norm: OrderNorm::Max,
            tolerance_scale: cfg.params.tolerance_scale,
            run: Box::new(run),
        }
    }

    pub fn alpha(mut self, alpha: f64) -> Self {
        self.alpha = Some(alpha);
        self
    }

    pub fn split(mut self, gamma: f64) -> Self {
        self.gamma_split = Some(gamma);
        self
    }

    pub fn l2_order(mut self) -> Self {
        self.order_norm = OrderNorm::L2;
        self
    }
}

/// Builds the cases of one configured experiment.
pub fn cases(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<Case>, CliError> {
    Ok(match cfg.experiment {
        Experiment::VerifyOps => ops::verify_ops(cfg),
        Experiment::VerifyLeibniz => ops::verify_leibniz(cfg),
        Experiment::MlAccuracy => ml::ml_accuracy(cfg),
        Experiment::Diffusion1d => diffusion::diffusion_1d(cfg),
        Experiment::DiffusionDd => diffusion::diffusion_dd(cfg),
        Experiment::Currents => noether::currents(cfg),
        Experiment::Charges => noether::charges(cfg),
        Experiment::GeneralOperator => noether::general_operator(cfg, seed)?,
    })
}

/// Order between consecutive levels, `None` when either residual is zero.
pub fn fitted_order(coarse: &Level, fine: &Level, norm: OrderNorm) -> Option<f64> {
    let (a, b) = (coarse.norm(norm), fine.norm(norm));
    let ratio = fine.resolution as f64 / coarse.resolution as f64;
    if a > 0.0 && b > 0.0 && ratio > 1.0 {
        Some((a / b).ln() / ratio.ln())
    } else {
        None
    }
}

/// Value, threshold and verdict of one gate.
#[derive(Debug, Clone, PartialEq)]
pub struct GateResult {
    pub gate: &'static str,
    pub value: Option<f64>,
    pub threshold: Option<f64>,
    pub status: Status,
    pub note: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    Report,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Report => "REPORT",
        }
    }
}

fn verdict(ok: bool) -> Status {
    if ok {
        Status::Pass
    } else {
        Status::Fail
    }
}

/// The finest consecutive pair of levels whose residuals both lie above
/// their rounding floors, with its fitted order.
pub fn order_pair(levels: &[Level], norm: OrderNorm) -> Option<(usize, Option<f64>)> {
    let above = |l: &Level| l.norm(norm) > l.floor;
    (1..levels.len())
        .rev()
        .find(|&i| above(&levels[i - 1]) && above(&levels[i]))
        .map(|i| (i, fitted_order(&levels[i - 1], &levels[i], norm)))
}

/// Applies the gates of a case to its levels.
pub fn judge(gates: &[Gate], levels: &[Level], norm: OrderNorm, scale: f64) -> Vec<GateResult> {
    let finest = levels.last();
    let result = |gate, value, threshold, status| GateResult { gate, value, threshold, status, note: None };
    gates
        .iter()
        .map(|g| match *g {
            Gate::Max(t) => {
                let v = finest.map(|l| l.max);
                result("max-residual", v, Some(t * scale), verdict(v.is_some_and(|v| v <= t * scale)))
            }
            Gate::Decreasing => {
                let ok = levels.len() >= 2 && levels.windows(2).all(|w| w[1].max < w[0].max);
                result("decreasing", finest.map(|l| l.max), None, verdict(ok))
            }
            Gate::Order(t) => {
                let pair = order_pair(levels, norm);
                let order = pair.and_then(|(_, o)| o);
                let mut r = result("fitted-order", order, Some(t), verdict(order.is_some_and(|o| o >= t)));
                match pair {
                    Some((i, _)) if i + 1 < levels.len() => {
                        r.note = Some(format!(
                            "fitted on {}-{}; finer levels lie at the rounding floor",
                            levels[i - 1].resolution,
                            levels[i].resolution
                        ))
                    }
                    None if levels.len() >= 2 => r.note = Some("every level lies at the rounding floor".into()),
                    _ => {}
                }
                r
            }
            Gate::Floor(t) => {
                let v = levels.iter().map(|l| l.max).fold(f64::INFINITY, f64::min);
                result("residual-floor", Some(v), Some(t), verdict(!levels.is_empty() && v >= t))
            }
            Gate::Report => result("report", finest.map(|l| l.max), None, Status::Report),
        })
        .collect()
}

/// Overall status: FAIL if any gate fails, REPORT if every gate only reports.
pub fn overall(results: &[GateResult]) -> Status {
    if results.iter().any(|r| r.status == Status::Fail) {
        Status::Fail
    } else if results.iter().all(|r| r.status == Status::Report) {
        Status::Report
    } else {
        Status::Pass
    }
}

/// The threshold shown on result rows: the first residual threshold, else
/// the first order threshold.
pub fn headline_threshold(gates: &[Gate], scale: f64) -> Option<f64> {
    gates
        .iter()
        .find_map(|g| if let Gate::Max(t) = g { Some(t * scale) } else { None })
        .or_else(|| gates.iter().find_map(|g| if let Gate::Order(t) | Gate::Floor(t) = g { Some(*t) } else { None }))
}

/// Relative max and relative rms error of `got` against `want` (fields on
/// the same grid). The pointwise scale is `max(|want|, 1e-3 envelope)` as in
/// [`fracflux::fracops::compare`], so singular endpoints do not dominate the
/// rms norm.
pub(crate) fn level_of(resolution: usize, got: &SampledField, want: &SampledField) -> fracflux::Result<Level> {
    let n = fracflux::fracops::compare(got, want)?;
    let d = got.sub(want)?.evaluate();
    let (r, env) = (want.evaluate(), want.envelope());
    let mut sq = 0.0;
    for ((dv, rv), ev) in d.iter().zip(r.iter()).zip(env.iter()) {
        let scale = rv.norm().max(1e-3 * ev);
        let rel = if scale > 0.0 { dv.norm() / scale } else { dv.norm() };
        sq += rel * rel;
    }
    Ok(Level::new(resolution, n.max_rel, (sq / d.len() as f64).sqrt()))
}
