//! Tracking constants with physical units.
//!
//! Distances are configured in millimetres and converted to pixels
//! through the working resolution (0.27 mm/px by default), so the same
//! settings apply to any resampled sequence.

/// All scalar constants of the tracker and loss, with defaults.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constants {
    /// Working resolution everything is resampled to.
    pub spacing_mm_per_px: f64,
    /// Sigma of the Gaussian regression target.
    pub sigma_loss_mm: f64,
    /// Sigma of the Gaussians averaged into the location prior.
    pub sigma_prior_mm: f64,
    /// Asymptotic weight of the prior regularizer (tanh ramp gain).
    pub k: f64,
    /// Ramp time constant in frames; roughly one breathing cycle.
    pub tau: f64,
    /// Per-frame displacement bound for the constrained argmax.
    pub d_max_mm: f64,
    /// Template patch extent in pixels.
    pub template_size: usize,
    /// Search patch extent in pixels.
    pub search_size: usize,
}

impl Default for Constants {
    fn default() -> Self {
        Constants {
            spacing_mm_per_px: 0.27,
            sigma_loss_mm: 2.16,
            sigma_prior_mm: 17.28,
            k: 0.5,
            tau: 50.0,
            d_max_mm: 8.64,
            template_size: 127,
            search_size: 407,
        }
    }
}

impl Constants {
    pub fn sigma_loss_px(&self) -> f64 {
        self.sigma_loss_mm / self.spacing_mm_per_px
    }

    pub fn sigma_prior_px(&self) -> f64 {
        self.sigma_prior_mm / self.spacing_mm_per_px
    }

    pub fn d_max_px(&self) -> f64 {
        self.d_max_mm / self.spacing_mm_per_px
    }

    /// Error threshold above which a trajectory counts as a switch
    /// failure (the tracker latched onto a different structure).
    pub fn switch_failure_mm(&self) -> f64 {
        5.0 * self.d_max_mm
    }
}
