use crate::error::bail;
use crate::Result;

/// Which dynamics to simulate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum EnvKind {
    /// SIS-style infection with control-reduced transmission.
    Epidemic,
    /// Viral marketing with a boosting factor and market saturation.
    Rumor,
}

/// Shaped team-reward coefficients.
///
/// The catastrophe, eradication and linear-infection terms are used by the
/// epidemic environment; the rumor environment uses `w_ctrl`, `a_ctrl` and
/// `w_lin` (as a reward on the aware fraction).
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct RewardConfig {
    pub w_ctrl: f64,
    pub a_ctrl: f64,
    pub w_cat: f64,
    pub cat_threshold: f64,
    pub cat_steepness: f64,
    pub w_lin: f64,
    pub eradication_bonus: f64,
}

impl RewardConfig {
    pub fn epidemic() -> Self {
        Self {
            w_ctrl: 2.0,
            a_ctrl: 2.0,
            w_cat: 5.0,
            cat_threshold: 0.3,
            cat_steepness: 20.0,
            w_lin: 1.0,
            eradication_bonus: 3.0,
        }
    }

    pub fn rumor() -> Self {
        Self {
            w_ctrl: 1.0,
            a_ctrl: 2.0,
            w_cat: 0.0,
            cat_threshold: 0.5,
            cat_steepness: 0.0,
            w_lin: 2.0,
            eradication_bonus: 0.0,
        }
    }

    pub fn for_kind(kind: EnvKind) -> Self {
        match kind {
            EnvKind::Epidemic => Self::epidemic(),
            EnvKind::Rumor => Self::rumor(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct EnvConfig {
    pub kind: EnvKind,
    /// Base transmission (epidemic) or maximum spreading (rumor) rate.
    pub beta0: f64,
    /// Control effectiveness, epidemic only.
    pub eta: f64,
    /// Recovery probability, epidemic only.
    pub delta_recovery: f64,
    /// Saturation exponent, rumor only.
    pub kappa: f64,
    /// Control increment per action.
    pub delta_c: f64,
    pub num_seeds: usize,
    pub horizon: usize,
    pub reward: RewardConfig,
    /// Radius of each agent's local observation.
    pub obs_hops: usize,
    /// Reference node count for the log-degree feature.
    pub degree_ref_nodes: usize,
}

impl EnvConfig {
    pub fn epidemic() -> Self {
        Self {
            kind: EnvKind::Epidemic,
            beta0: 0.15,
            eta: 0.9,
            delta_recovery: 0.1,
            kappa: 3.0,
            delta_c: 0.1,
            num_seeds: 3,
            horizon: 100,
            reward: RewardConfig::epidemic(),
            obs_hops: 1,
            degree_ref_nodes: 50,
        }
    }

    pub fn rumor() -> Self {
        Self {
            kind: EnvKind::Rumor,
            beta0: 0.25,
            kappa: 3.0,
            reward: RewardConfig::rumor(),
            ..Self::epidemic()
        }
    }

    pub fn for_kind(kind: EnvKind) -> Self {
        match kind {
            EnvKind::Epidemic => Self::epidemic(),
            EnvKind::Rumor => Self::rumor(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| -> Result<()> {
            if !(0.0..=1.0).contains(&v) {
                bail!(Config, "{name} = {v} outside [0, 1]");
            }
            Ok(())
        };
        unit("beta0", self.beta0)?;
        unit("eta", self.eta)?;
        unit("delta_recovery", self.delta_recovery)?;
        unit("delta_c", self.delta_c)?;
        if self.delta_c <= 0.0 {
            bail!(Config, "delta_c must be positive");
        }
        if !(self.kappa > 0.0) {
            bail!(Config, "kappa = {} must be positive", self.kappa);
        }
        if self.horizon < 1 {
            bail!(Config, "horizon must be at least 1");
        }
        if self.num_seeds < 1 {
            bail!(Config, "num_seeds must be at least 1");
        }
        if self.degree_ref_nodes < 1 {
            bail!(Config, "degree_ref_nodes must be at least 1");
        }
        let r = &self.reward;
        for (name, w) in [
            ("reward.w_ctrl", r.w_ctrl),
            ("reward.a_ctrl", r.a_ctrl),
            ("reward.w_cat", r.w_cat),
            ("reward.cat_steepness", r.cat_steepness),
            ("reward.w_lin", r.w_lin),
            ("reward.eradication_bonus", r.eradication_bonus),
        ] {
            if !(w >= 0.0) {
                bail!(Config, "{name} = {w} must be non-negative");
            }
        }
        if !(r.cat_threshold > 0.0 && r.cat_threshold < 1.0) {
            bail!(Config, "reward.cat_threshold = {} outside (0, 1)", r.cat_threshold);
        }
        Ok(())
    }

    /// Validation against a concrete graph size.
    pub fn validate_for(&self, num_nodes: usize) -> Result<()> {
        self.validate()?;
        if self.num_seeds > num_nodes {
            bail!(Config, "num_seeds = {} exceeds node count {num_nodes}", self.num_seeds);
        }
        Ok(())
    }
}
