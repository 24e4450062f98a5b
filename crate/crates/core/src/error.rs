use thiserror::Error;

/// Errors raised by the model, the integrator and the controllers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter {
        name: &'static str,
        reason: &'static str,
    },
    #[error("degenerate resonance: drive transfer denominator vanishes")]
    DegenerateResonance,
    #[error("step size underflow at t = {t:e} s (required step {h:e} s)")]
    StepUnderflow { t: f64, h: f64 },
    #[error("impact root search did not converge near t = {t:e} s")]
    RootNotConverged { t: f64 },
    #[error("simulation diverged at t = {t:e} s (x1 = {x1:e} m)")]
    SimDiverged { t: f64, x1: f64 },
    #[error("sample at t = {t:e} s arrived before previous sample at {last:e} s")]
    OutOfOrderSample { t: f64, last: f64 },
    #[error("effective quality factor {q} is not positive")]
    EffectiveQNonPositive { q: f64 },
    #[error("window half-length {n_w:e} m is not below half the line length {half:e} m")]
    WindowTooLarge { n_w: f64, half: f64 },
    #[error("predictive history holds {available} lines, {needed} required")]
    InsufficientHistory { needed: usize, available: usize },
    #[error("query ({i_x:e}, {i_y:e}) m lies outside the sample")]
    OutOfBounds { i_x: f64, i_y: f64 },
    #[error("height grid rows have unequal lengths")]
    NonRectangular,
    #[error("height grid contains a non-finite value")]
    NonFiniteHeight,
    #[error("trace is empty")]
    EmptyTrace,
    #[error("amplitude did not settle near the reference within {t_max:e} s")]
    EngagementFailed { t_max: f64 },
}

pub type Result<T> = core::result::Result<T, Error>;
