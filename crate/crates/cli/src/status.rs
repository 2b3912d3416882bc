use mjls_core::Error as CoreError;

/// Process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Success,
    InputError,
    /// Infeasible synthesis or no stability certificate.
    Uncertified,
    NumericalFailure,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        match self {
            ExitStatus::Success => 0,
            ExitStatus::InputError => 2,
            ExitStatus::Uncertified => 3,
            ExitStatus::NumericalFailure => 4,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ExitStatus::Success => "ok",
            ExitStatus::InputError => "input_error",
            ExitStatus::Uncertified => "uncertified",
            ExitStatus::NumericalFailure => "numerical_failure",
        }
    }
}

/// Maps an error chain to an exit status; anything that is not a numerical
/// or feasibility error from the core counts as bad input.
pub fn classify(err: &anyhow::Error) -> ExitStatus {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<CoreError>() {
            return match e {
                CoreError::Infeasible(_) => ExitStatus::Uncertified,
                CoreError::NumericalFailure(_)
                | CoreError::NonConvergence { .. }
                | CoreError::NearlySingular { .. }
                | CoreError::InequalityViolated { .. } => ExitStatus::NumericalFailure,
                _ => ExitStatus::InputError,
            };
        }
    }
    ExitStatus::InputError
}

#[cfg(test)]
mod tests {
    use super::*;
    use anyhow::Context;

    #[test]
    fn classification_follows_the_chain() {
        let err = Err::<(), _>(CoreError::NumericalFailure("x".into()))
            .context("solving")
            .unwrap_err();
        assert_eq!(classify(&err), ExitStatus::NumericalFailure);
        let err = Err::<(), _>(CoreError::Shape("x".into()))
            .context("loading")
            .unwrap_err();
        assert_eq!(classify(&err), ExitStatus::InputError);
        assert_eq!(classify(&anyhow::anyhow!("plain")), ExitStatus::InputError);
        let err = anyhow::Error::new(CoreError::Infeasible("no".into()));
        assert_eq!(classify(&err).code(), 3);
    }
}
