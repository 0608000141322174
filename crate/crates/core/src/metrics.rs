//! Belief accuracy and CSV output.
//!
//! Numbers in every CSV are rounded to 9 significant digits so that output
//! files are byte-identical across platforms.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use thiserror::Error;

use crate::abstraction::{AbstractionModel, History};
use crate::envs::gold::GoldEpisode;
use crate::inference::{Belief, InferenceError, InferenceMethod, InferenceState};
use crate::learner::LearningCurve;
use crate::rm::{RewardMachine, RmStateId};

/// `ln 0.01`, the lower bound on every log-likelihood.
pub const LOGLIK_FLOOR: f64 = -4.605170185988091;

#[derive(Debug, Error)]
#[error("cannot write {}: {source}", path.display())]
pub struct WriteError {
    pub path: PathBuf,
    #[source]
    pub source: std::io::Error,
}

/// `max(ln b[u], ln 0.01)`.
pub fn rm_loglik(belief: &Belief, true_state: RmStateId) -> f64 {
    let p = belief.get(true_state);
    if p > 0.0 {
        p.ln().max(LOGLIK_FLOOR)
    } else {
        LOGLIK_FLOOR
    }
}

/// Formats `x` rounded to 9 significant digits, without an exponent.
pub fn fmt_num(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    let rounded: f64 = format!("{x:.8e}").parse().expect("formatted float parses");
    if rounded == 0.0 {
        "0".into()
    } else {
        rounded.to_string()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub method: String,
    pub mean_loglik: f64,
    pub n_predictions: usize,
    pub n_floored: usize,
}

/// Log-likelihoods pooled over every (episode, step) pair.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoglikAccumulator {
    sum: f64,
    n: usize,
    n_floored: usize,
}

impl LoglikAccumulator {
    pub fn add(&mut self, belief: &Belief, true_state: RmStateId) -> f64 {
        let ll = rm_loglik(belief, true_state);
        self.sum += ll;
        self.n += 1;
        if ll <= LOGLIK_FLOOR {
            self.n_floored += 1;
        }
        ll
    }

    pub fn mean(&self) -> f64 {
        self.sum / self.n as f64
    }

    pub fn finish(&self, method: &str) -> ReportRow {
        ReportRow {
            method: method.into(),
            mean_loglik: self.mean(),
            n_predictions: self.n,
            n_floored: self.n_floored,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BeliefAccuracyReport {
    pub rows: Vec<ReportRow>,
}

impl BeliefAccuracyReport {
    pub fn get(&self, method: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.method == method)
    }
}

/// The belief at every step of a logged episode, `t = 1..=len`.
pub fn belief_trace(
    method: InferenceMethod,
    model: AbstractionModel,
    rm: Arc<RewardMachine>,
    history: &History,
) -> Result<Vec<Belief>, InferenceError> {
    let obs = history.observations();
    let mut state = InferenceState::new(method, model, rm, obs[0])?;
    let mut out = vec![state.belief().clone()];
    for (i, &a) in history.actions().iter().enumerate() {
        out.push(state.observe(a, obs[i + 1])?.clone());
    }
    Ok(out)
}

/// One row of the per-step belief CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefRow {
    pub episode: usize,
    pub t: usize,
    pub true_state: RmStateId,
    pub belief: Belief,
    pub loglik: f64,
}

/// Scores one inference setup over a set of episodes.
pub fn score_episodes(
    name: &str,
    method: InferenceMethod,
    model: &AbstractionModel,
    rm: &Arc<RewardMachine>,
    episodes: &[GoldEpisode],
) -> Result<(ReportRow, Vec<BeliefRow>), InferenceError> {
    let mut acc = LoglikAccumulator::default();
    let mut rows = Vec::new();
    for (e, ep) in episodes.iter().enumerate() {
        let trace = belief_trace(method, model.clone(), rm.clone(), &ep.history)?;
        for (i, (belief, &u)) in trace.into_iter().zip(&ep.true_states).enumerate() {
            let loglik = acc.add(&belief, u);
            rows.push(BeliefRow {
                episode: e,
                t: i + 1,
                true_state: u,
                belief,
                loglik,
            });
        }
    }
    Ok((acc.finish(name), rows))
}

fn write(path: &Path, text: String) -> Result<(), WriteError> {
    fs::write(path, text).map_err(|source| WriteError {
        path: path.to_path_buf(),
        source,
    })
}

pub fn curve_csv(curve: &LearningCurve) -> String {
    let mut s = String::from("step,return,return_discounted\n");
    for p in &curve.points {
        let _ = writeln!(
            s,
            "{},{},{}",
            p.step,
            fmt_num(p.ret),
            fmt_num(p.ret_discounted)
        );
    }
    s
}

pub fn write_curve_csv(curve: &LearningCurve, path: &Path) -> Result<(), WriteError> {
    write(path, curve_csv(curve))
}

pub fn report_csv(report: &BeliefAccuracyReport) -> String {
    let mut s = String::from("method,mean_loglik,n_predictions,n_floored\n");
    for r in &report.rows {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            r.method,
            fmt_num(r.mean_loglik),
            r.n_predictions,
            r.n_floored
        );
    }
    s
}

pub fn write_report(report: &BeliefAccuracyReport, path: &Path) -> Result<(), WriteError> {
    write(path, report_csv(report))
}

/// Header `episode,t,method,true_state,<one column per RM state>,loglik`.
pub fn belief_csv<'a>(
    rm: &RewardMachine,
    rows: impl IntoIterator<Item = (&'a str, &'a BeliefRow)>,
) -> String {
    let mut s = String::from("episode,t,method,true_state");
    for name in rm.state_names() {
        s.push(',');
        s.push_str(name);
    }
    s.push_str(",loglik\n");
    for (method, r) in rows {
        let _ = write!(
            s,
            "{},{},{},{}",
            r.episode,
            r.t,
            method,
            rm.state_name(r.true_state)
        );
        for p in r.belief.probs() {
            let _ = write!(s, ",{}", fmt_num(*p));
        }
        let _ = writeln!(s, ",{}", fmt_num(r.loglik));
    }
    s
}

pub fn write_belief_csv<'a>(
    rm: &RewardMachine,
    rows: impl IntoIterator<Item = (&'a str, &'a BeliefRow)>,
    path: &Path,
) -> Result<(), WriteError> {
    write(path, belief_csv(rm, rows))
}
