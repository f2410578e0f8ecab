//! One estimation recipe: positivity filter, treatment-model fit, effect estimate.

use serde::{Deserialize, Serialize};

use crate::baselines::{
    fit_fixed_logistic, fit_random_logistic, ipw_tau_from_propensity, FixedEffectOptions, PropensityFit,
    RandomInterceptOptions,
};
use crate::cmle::{fit_cmle, CmleOptions, CondFit};
use crate::data::{filter_positivity, Dataset};
use crate::error::{IcpwError, Result};
use crate::estimators::{
    effect_contrast, icpw_mean_potential, naive_tau, EffectEstimate, Estimand, IcpwOptions, Method, NaiveVariant,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recipe {
    pub method: Method,
    pub estimand: Estimand,
    pub cmle: CmleOptions,
    pub icpw: IcpwOptions,
    pub fixed: FixedEffectOptions,
    pub random: RandomInterceptOptions,
    pub naive: NaiveVariant,
}

impl Recipe {
    pub fn new(method: Method) -> Self {
        Recipe {
            method,
            estimand: Estimand::Tau,
            cmle: CmleOptions::default(),
            icpw: IcpwOptions::default(),
            fixed: FixedEffectOptions::default(),
            random: RandomInterceptOptions::default(),
            naive: NaiveVariant::default(),
        }
    }

    pub fn with_estimand(mut self, estimand: Estimand) -> Self {
        self.estimand = estimand;
        self
    }

    pub fn run(&self, data: &Dataset) -> Result<EffectEstimate> {
        Ok(self.run_detailed(data)?.estimate)
    }

    pub fn run_detailed(&self, data: &Dataset) -> Result<PipelineOutput> {
        let filtered = filter_positivity(data)?;
        let dropped = filtered.dropped_cluster_ids.len();
        let data = filtered.retained;
        let mut out = PipelineOutput {
            estimate: EffectEstimate::new(self.method, self.estimand, f64::NAN, data.n()),
            cond_fit: None,
            propensity: None,
            arm_means: None,
            data,
        };
        let data = &out.data;
        out.estimate = match self.method {
            Method::Naive => {
                self.require_tau()?;
                naive_tau(data, self.naive)?
            }
            Method::IpwFixed | Method::IpwRandom => {
                self.require_tau()?;
                let fit = if self.method == Method::IpwFixed {
                    fit_fixed_logistic(data, &self.fixed)?
                } else {
                    fit_random_logistic(data, &self.random)?
                };
                let est = ipw_tau_from_propensity(data, &fit)?;
                out.propensity = Some(fit);
                est
            }
            Method::Icpw => {
                let fit = fit_cmle(data, &self.cmle)?;
                if !fit.converged {
                    return Err(IcpwError::NoConvergence(format!(
                        "conditional likelihood not maximized after {} iterations (score max-norm {:.3e})",
                        fit.iterations, fit.grad_norm_at_solution
                    )));
                }
                let est = match self.estimand {
                    Estimand::MeanPotential(a) => icpw_mean_potential(data, &fit, a, &self.icpw)?,
                    contrast => {
                        if !data.is_binary() {
                            return Err(IcpwError::Unsupported(format!(
                                "{contrast} needs a binary treatment"
                            )));
                        }
                        let y1 = icpw_mean_potential(data, &fit, 1, &self.icpw)?;
                        let y0 = icpw_mean_potential(data, &fit, 0, &self.icpw)?;
                        out.arm_means = Some((y1.point, y0.point));
                        effect_contrast(&y1, &y0, contrast)?
                    }
                };
                out.cond_fit = Some(fit);
                est
            }
        };
        out.estimate.clusters_dropped = dropped;
        Ok(out)
    }

    fn require_tau(&self) -> Result<()> {
        if self.estimand == Estimand::Tau {
            Ok(())
        } else {
            Err(IcpwError::Unsupported(format!(
                "method {} only estimates tau, not {}",
                self.method, self.estimand
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub estimate: EffectEstimate,
    /// The positivity-filtered data the estimate was computed on.
    pub data: Dataset,
    pub cond_fit: Option<CondFit>,
    pub propensity: Option<PropensityFit>,
    /// ICPW means of the treated and control arms, for contrasts.
    pub arm_means: Option<(f64, f64)>,
}
