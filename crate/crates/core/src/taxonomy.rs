//! Execution error taxonomy.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Category assigned to every failed attempt.
///
/// The first four are code-level categories attributable to skill content.
/// `Infrastructure` covers transport failures and budget exhaustion and is
/// excluded from error-composition denominators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCategory {
    TensorIndexOob,
    ApiMisuse,
    GradientError,
    NoCode,
    Infrastructure,
}

impl ErrorCategory {
    pub const ALL: [ErrorCategory; 5] = [
        ErrorCategory::TensorIndexOob,
        ErrorCategory::ApiMisuse,
        ErrorCategory::GradientError,
        ErrorCategory::NoCode,
        ErrorCategory::Infrastructure,
    ];

    /// Categories that count toward error composition.
    pub const CODE_LEVEL: [ErrorCategory; 4] = [
        ErrorCategory::TensorIndexOob,
        ErrorCategory::ApiMisuse,
        ErrorCategory::GradientError,
        ErrorCategory::NoCode,
    ];

    pub fn is_excluded(self) -> bool {
        matches!(self, ErrorCategory::Infrastructure)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::TensorIndexOob => "tensor_index_oob",
            ErrorCategory::ApiMisuse => "api_misuse",
            ErrorCategory::GradientError => "gradient_error",
            ErrorCategory::NoCode => "no_code",
            ErrorCategory::Infrastructure => "infrastructure",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ErrorCategory::TensorIndexOob => "Tensor Index OOB",
            ErrorCategory::ApiMisuse => "API Misuse",
            ErrorCategory::GradientError => "Gradient Error",
            ErrorCategory::NoCode => "No Code / No Solution",
            ErrorCategory::Infrastructure => "Infrastructure",
        }
    }
}

impl fmt::Display for ErrorCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ErrorCategory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ErrorCategory::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown error category `{s}`"))
    }
}
