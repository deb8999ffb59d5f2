use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[non_exhaustive]
pub enum Error {
    /// An argument lies outside the domain of the formula it feeds.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch { what: &'static str, expected: usize, found: usize },

    /// A device holds samples of a class but its channel gain is zero, so no
    /// transmit power can align its knowledge at the receiver.
    #[error("degenerate channel for device {device} (holds {samples} samples of class {class})")]
    DegenerateChannel { device: usize, class: usize, samples: u64 },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("malformed IDX data at byte offset {offset}: {reason}")]
    Idx { offset: usize, reason: String },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
