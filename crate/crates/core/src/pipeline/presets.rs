//! The four named parameter configurations (stable or unstable, real or
//! complex characteristic roots).
//!
//! All of them use `theta = 1e-4` and a stiffness `k` inside `[1e-19, 1e-3]`.
//! Only the root classification is meaningful; the constants were picked by
//! [`search_preset`] and frozen.

use serde::{Deserialize, Serialize};

use crate::dynamics::FreeParams;
use crate::stability::{characteristic_coeffs_of, prop_coef_check, quartic_roots};

pub const PRESET_THETA: f64 = 1e-4;
pub const K_RANGE: (f64, f64) = (1e-19, 1e-3);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    #[default]
    StableReal,
    StableComplex,
    UnstableReal,
    UnstableComplex,
}

impl Preset {
    pub const ALL: [Preset; 4] = [
        Preset::StableReal,
        Preset::StableComplex,
        Preset::UnstableReal,
        Preset::UnstableComplex,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Preset::StableReal => "stable_real",
            Preset::StableComplex => "stable_complex",
            Preset::UnstableReal => "unstable_real",
            Preset::UnstableComplex => "unstable_complex",
        }
    }

    pub fn free_params(&self) -> FreeParams {
        let base = FreeParams {
            theta: PRESET_THETA,
            mu: 10.0,
            nu: 2e-8,
            gamma1: 1e-4,
            gamma2: 3.0,
            k: 2e-18,
        };
        match self {
            Preset::StableReal => base,
            Preset::StableComplex => FreeParams { k: 3e-17, ..base },
            Preset::UnstableReal => FreeParams {
                nu: 4e-8,
                k: 1e-18,
                ..base
            },
            Preset::UnstableComplex => FreeParams {
                nu: 4e-8,
                k: 1e-16,
                ..base
            },
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown preset '{s}'"))
    }
}

/// Root classification of the free dynamics; `None` when `mu = 0`.
pub fn classify(p: &FreeParams) -> Option<Preset> {
    let report = quartic_roots(&characteristic_coeffs_of(p).ok()?);
    Some(match (report.stable, report.real) {
        (true, true) => Preset::StableReal,
        (true, false) => Preset::StableComplex,
        (false, true) => Preset::UnstableReal,
        (false, false) => Preset::UnstableComplex,
    })
}

/// Grid search over coercive parameters with `theta = 1e-4`, `gamma1 = 1e-4`
/// and `k` on a log grid of the admissible range. Stable-real candidates
/// must also be certified by the sufficient conditions.
pub fn search_preset(target: Preset) -> Option<FreeParams> {
    let theta = PRESET_THETA;
    let gamma1 = 1e-4;
    for gamma2 in [3.0, 10.0, 30.0] {
        for mu_factor in [1.1, 2.0, 10.0] {
            let mu = mu_factor * gamma2 * gamma2;
            // nu on both sides of theta gamma1 gamma2
            for nu_factor in [0.5, 0.8, 1.2, 1.5] {
                let lo = gamma1 * gamma1;
                let hi = theta * gamma1 * gamma2;
                let nu = if nu_factor < 1.0 {
                    lo + (hi - lo) * nu_factor
                } else {
                    hi * nu_factor
                };
                for exp in -19..=-3 {
                    let p = FreeParams {
                        theta,
                        mu,
                        nu,
                        gamma1,
                        gamma2,
                        k: 10f64.powi(exp),
                    };
                    if classify(&p) != Some(target) {
                        continue;
                    }
                    if target == Preset::StableReal && !prop_coef_check(&p).map(|r| r.certified).unwrap_or(false) {
                        continue;
                    }
                    return Some(p);
                }
            }
        }
    }
    None
}
