use thiserror::Error;

/// Errors surfaced by the library.
///
/// Numerical routines keep soft diagnostics (divergence flags, vacuous-bound
/// flags, condition flags) in their report structs; `Error` is reserved for
/// violated preconditions and genuinely failed operations.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite argument in {0}")]
    NonFinite(&'static str),

    #[error("weight overflow at box radius {radius}: reduce box_radius below ~{suggested}")]
    WeightOverflow { radius: f64, suggested: f64 },

    #[error("tabulated kernel queried outside its grid: ({x}, {y})")]
    OutsideGrid { x: f64, y: f64 },

    #[error(
        "no lattice spacing down to 2^-10 satisfies C0*|K|_W*|w_delta(K)|_W < 0.9; \
         product at 2^-10 is {product}"
    )]
    NoDelta0 { product: f64 },

    #[error(
        "truncation schedule exhausted at N={n_reached}: best errors (Lp={best_lp}, \
         Linf={best_inf}) exceed targets ({target_lp}, {target_inf})"
    )]
    ScheduleExhausted {
        n_reached: f64,
        best_lp: f64,
        best_inf: f64,
        target_lp: f64,
        target_inf: f64,
    },

    #[error("rejection sampler acceptance rate {rate:.2e} below 1e-3: use a tighter envelope")]
    RejectionRate { rate: f64 },

    #[error("density vanishes on the energy cube C_R (R={r}): hypothesis on rho violated")]
    DensityVanishes { r: f64 },

    #[error("no test function passed the energy filter after {attempts} attempts: increase R or delta")]
    EnergyFilterExhausted { attempts: usize },

    #[error("Gram matrix numerically singular (condition estimate {cond:.3e} > 1e12): draw more samples")]
    SingularGram { cond: f64 },

    #[error("gamma={gamma} outside the admissible interval (0, {upper}) = (0, alpha_p^p/C_K^p)")]
    GammaOutOfRange { gamma: f64, upper: f64 },

    #[error("basis has no mass in C_R (R={r}): alpha_p estimate {estimate:.3e} at tolerance")]
    AlphaNoMass { r: f64, estimate: f64 },

    #[error("net construction exhausted its probe budget of {budget}")]
    ProbeBudgetExhausted { budget: usize },

    #[error("dimension d={0} unsupported by quadrature-backed operations (supported: 1)")]
    DimUnsupported(usize),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
