//! Error type shared by the whole library.

/// Everything that can go wrong while setting up or running a verification.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A constructor or operation was handed structurally invalid input
    /// (bad grid length, empty domain, alpha outside [0,1], ...).
    #[error("invalid {what}: {detail}")]
    Invalid { what: &'static str, detail: String },

    /// A domain point or control value index is out of range.
    #[error("domain index {index} out of range for a domain with {len} points")]
    IndexOutOfRange { index: usize, len: usize },

    /// The requested problem id is not registered.
    #[error("unknown problem id {0:?}")]
    UnknownProblem(String),

    /// A user-supplied problem function returned a non-finite value.
    #[error("non-finite {component} at t = {t}")]
    NonFinite { component: &'static str, t: f64 },

    /// A forward or backward sweep produced a non-finite state.
    #[error("integration diverged at node {node} (t = {t})")]
    Diverged { node: usize, t: f64 },

    /// The kernel of a double integral evaluated to a non-finite value.
    #[error("non-finite kernel value at node pair (t = node {t_node}, s = node {s_node})")]
    KernelNonFinite { t_node: usize, s_node: usize },

    /// The time grid cannot resolve the requested chattering period.
    #[error(
        "grid too coarse for chattering period {epsilon} (h = {h}; need h <= epsilon / 10)"
    )]
    GridTooCoarse { epsilon: f64, h: f64 },

    /// An internal cross-check failed badly enough that results cannot be trusted.
    #[error("integrity check failed: {check} = {value:.3e} exceeds {limit:.3e}{}",
            node.map(|k| format!(" at node {k}")).unwrap_or_default())]
    Integrity {
        check: &'static str,
        value: f64,
        limit: f64,
        node: Option<usize>,
    },

    /// Two quantities that must agree by construction do not.
    #[error("inconsistency: {0}")]
    Inconsistent(String),

    /// A family-based fit was given no usable member.
    #[error("family contains no member distinct from the candidate")]
    DegenerateFamily,
}

impl Error {
    pub(crate) fn invalid(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            detail: detail.into(),
        }
    }

    /// True for errors that indicate the tool itself lost numerical integrity,
    /// as opposed to a bad input or a genuinely violated condition.
    pub fn is_integrity(&self) -> bool {
        matches!(
            self,
            Error::Integrity { .. } | Error::Inconsistent(_) | Error::KernelNonFinite { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
