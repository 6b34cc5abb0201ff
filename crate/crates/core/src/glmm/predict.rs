use std::collections::HashMap;

use super::matern::correlation_unchecked;
use super::problem::{location_key, raw_covariates};
use super::{logistic, FittedGlmm, GlmmError};
use crate::data::{GeoPoint, PoolObservation, TrapSite};

impl FittedGlmm {
    /// Location effect at a point: the stored mode at a training location,
    /// otherwise the kriging mean given the training modes.
    pub fn effect_at(&self, point: GeoPoint) -> f64 {
        let key = location_key(point.latitude, point.longitude);
        if let Some(site) = self
            .site_effects
            .iter()
            .find(|s| location_key(s.latitude, s.longitude) == key)
        {
            return site.mode;
        }
        if self.matern.sigma2 == 0.0 {
            return 0.0;
        }
        self.site_effects
            .iter()
            .zip(&self.kriging_weights)
            .map(|(site, &w)| {
                let d = point.distance_km(&GeoPoint::new(site.latitude, site.longitude));
                self.matern.sigma2 * correlation_unchecked(d / self.matern.rho, self.matern.nu) * w
            })
            .sum()
    }

    fn fixed_part(&self, pool: &PoolObservation) -> Result<f64, GlmmError> {
        let x = raw_covariates(pool, self.standardization.year_center)?;
        let beta = self.coefficients.to_array();
        Ok(beta[0] + x.iter().zip(&beta[1..]).map(|(x, b)| x * b).sum::<f64>())
    }
}

/// Linear predictor `β·x + b̂` for each pool.
pub fn predict_linear(
    model: &FittedGlmm,
    pools: &[PoolObservation],
    sites: &HashMap<&str, &TrapSite>,
) -> Result<Vec<f64>, GlmmError> {
    let mut effects: HashMap<&str, f64> = HashMap::new();
    pools
        .iter()
        .map(|pool| {
            let effect = match effects.get(pool.trap_id.as_str()) {
                Some(&e) => e,
                None => {
                    let site = sites
                        .get(pool.trap_id.as_str())
                        .ok_or_else(|| GlmmError::UnknownTrap(pool.trap_id.clone()))?;
                    let e = model.effect_at(site.location());
                    effects.insert(pool.trap_id.as_str(), e);
                    e
                }
            };
            Ok(model.fixed_part(pool)? + effect)
        })
        .collect()
}

/// Predicted case probability for each pool.
pub fn predict_prob(
    model: &FittedGlmm,
    pools: &[PoolObservation],
    sites: &HashMap<&str, &TrapSite>,
) -> Result<Vec<f64>, GlmmError> {
    Ok(predict_linear(model, pools, sites)?
        .into_iter()
        .map(logistic)
        .collect())
}
