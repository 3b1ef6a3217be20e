//! Glue that turns a calibration set into the six named predictors.

use crate::baselines::{
    attention_readout_predict, estimate_global_prior, permutation_average_predict,
    pride_predict, purified_attention_predict, vanilla_predict, AverageMode, GlobalPrior, Method,
};
use crate::calibration::{build_profile, CalibrationOptions, CalibrationProfile};
use crate::debias::{predict, DebiasConfig};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, Episode, EvalReport, Presentation};
use crate::trace::InferenceTrace;

/// Everything a predictor may consult. Methods that need a missing piece
/// fail with an error naming it.
#[derive(Debug, Clone)]
pub struct MethodContext {
    pub profile: Option<CalibrationProfile>,
    pub global_prior: Option<GlobalPrior>,
    pub debias: DebiasConfig,
    pub average: AverageMode,
}

impl MethodContext {
    /// A context without calibration data; only `vanilla`, `attn-raw` and
    /// `perm-avg` can run.
    pub fn uncalibrated(debias: DebiasConfig) -> Result<Self> {
        debias.validate()?;
        Ok(MethodContext {
            profile: None,
            global_prior: None,
            debias,
            average: AverageMode::default(),
        })
    }

    pub fn from_calibration(
        traces: &[InferenceTrace],
        opts: &CalibrationOptions,
        debias: DebiasConfig,
    ) -> Result<Self> {
        debias.validate()?;
        Ok(MethodContext {
            profile: Some(build_profile(traces, opts)?),
            global_prior: Some(estimate_global_prior(traces, opts.smoothing)?),
            debias,
            average: AverageMode::default(),
        })
    }

    fn profile(&self, method: Method) -> Result<&CalibrationProfile> {
        self.profile.as_ref().ok_or_else(|| {
            Error::Calibration(format!("{method} needs a calibration profile"))
        })
    }

    /// 1-based position chosen by `method` for this presentation.
    pub fn predict(&self, method: Method, p: &Presentation) -> Result<usize> {
        let trace = &p.trace;
        match method {
            Method::Vanilla => vanilla_predict(trace),
            Method::Pride => {
                let prior = self.global_prior.as_ref().ok_or_else(|| {
                    Error::Calibration("pride needs calibration traces".into())
                })?;
                pride_predict(trace, prior)
            }
            Method::PermAvg => {
                if p.orbit.is_empty() {
                    return Err(Error::Orbit(format!(
                        "perm-avg needs the cyclic orbit of {} shuffle {}; generate traces with orbits",
                        trace.instance_id(),
                        trace.shuffle_id()
                    )));
                }
                let chosen = permutation_average_predict(&p.full_orbit(), self.average)?;
                Ok(trace
                    .images()
                    .iter()
                    .position(|id| *id == chosen)
                    .expect("orbit shares the identity set")
                    + 1)
            }
            Method::AttnRaw => Ok(attention_readout_predict(trace, self.debias.k)),
            Method::AttnPure => {
                let profile = self.profile(method)?;
                profile.check_compatible(trace)?;
                purified_attention_predict(trace, &profile.attn_prior, &self.debias)
            }
            Method::Ours => Ok(predict(trace, self.profile(method)?, &self.debias)?.predicted_index),
        }
    }

    pub fn evaluate(&self, method: Method, episodes: &[Episode]) -> Result<EvalReport> {
        evaluate(|p| self.predict(method, p), episodes)
    }

    /// One report per method, in the given order.
    pub fn evaluate_all(
        &self,
        methods: &[Method],
        episodes: &[Episode],
    ) -> Result<Vec<(String, EvalReport)>> {
        methods
            .iter()
            .map(|&m| Ok((m.to_string(), self.evaluate(m, episodes)?)))
            .collect()
    }
}
