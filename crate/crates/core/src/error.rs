//! Error type shared by all pipeline stages.

use alloc::string::String;
use core::fmt;

/// Errors raised by the scoring pipeline.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A precondition on an argument was violated.
    InvalidArgument(String),
    /// Tensor/grid shapes do not match the operation's contract.
    ShapeMismatch(String),
    /// A world coordinate maps outside the volume's slice range.
    OutOfExtent { index: f64, max: f64 },
    /// Lung segmentation found no candidate component, or a lung mask is empty.
    EmptyLungs,
    /// A lesion mask contains pixels outside the lung mask.
    LesionOutsideLung,
    /// No crop start position can cover all five levels.
    InfeasibleCrop { span: f64, crop_depth: usize },
    /// Training produced a non-finite loss.
    Divergence { epoch: usize },
    /// Weighted kappa has a zero expected-disagreement denominator.
    UndefinedKappa,
    /// ICC denominator is zero (degenerate rating table).
    UndefinedIcc,
    /// All paired differences are zero; the signed-rank test is undefined.
    UndefinedTest,
    /// Least-squares fit on constant x.
    DegenerateFit,
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::ShapeMismatch(msg) => write!(f, "shape mismatch: {msg}"),
            Error::OutOfExtent { index, max } => {
                write!(f, "slice index {index} outside [0, {max}]")
            }
            Error::EmptyLungs => write!(f, "no lung component found"),
            Error::LesionOutsideLung => write!(f, "lesion mask extends outside the lung mask"),
            Error::InfeasibleCrop { span, crop_depth } => write!(
                f,
                "level span {span} exceeds crop depth {crop_depth}; no feasible crop start"
            ),
            Error::Divergence { epoch } => {
                write!(f, "training diverged (non-finite loss) at epoch {epoch}")
            }
            Error::UndefinedKappa => write!(f, "weighted kappa undefined (no expected disagreement)"),
            Error::UndefinedIcc => write!(f, "ICC undefined (zero denominator)"),
            Error::UndefinedTest => write!(f, "signed-rank test undefined (all differences zero)"),
            Error::DegenerateFit => write!(f, "least-squares fit undefined (constant x)"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
