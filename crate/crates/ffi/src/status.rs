use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, UnwindSafe};

use fedmas::Error;

/// Status code returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FedmasStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// An argument was out of range, not UTF-8, or of inconsistent length.
    InvalidArgument = 2,
    /// The configuration is invalid; the message lists every bad field.
    Config = 3,
    /// Training produced a non-finite value or a degenerate embedding.
    NumericFault = 4,
    /// Input data or an embeddings file is malformed or inconsistent.
    Data = 5,
    Io = 6,
    /// The output buffer is shorter than the reported required length.
    BufferTooSmall = 7,
    /// A panic was caught at the boundary.
    Panic = 8,
    Internal = 9,
}

#[derive(Debug)]
pub(crate) struct FfiError {
    pub status: FedmasStatus,
    pub message: String,
}

impl FfiError {
    pub fn new(status: FedmasStatus, message: impl Into<String>) -> Self {
        FfiError {
            status,
            message: message.into(),
        }
    }

    pub fn null(arg: &str) -> Self {
        Self::new(FedmasStatus::NullPointer, format!("`{arg}` is null"))
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Self::new(FedmasStatus::InvalidArgument, message)
    }
}

impl From<Error> for FfiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Config(_) | Error::InvalidConfig(_) => FedmasStatus::Config,
            Error::NumericFault(_)
            | Error::ClientFault { .. }
            | Error::DegenerateEmbedding { .. } => FedmasStatus::NumericFault,
            Error::Shape { .. } | Error::Contract(_) | Error::DegenerateWeights => {
                FedmasStatus::InvalidArgument
            }
            Error::DataConsistency(_) | Error::Malformed { .. } => FedmasStatus::Data,
            Error::Io { .. } => FedmasStatus::Io,
            Error::Serde(_) => FedmasStatus::Internal,
        };
        FfiError::new(status, e.to_string())
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', "\\0")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = c);
}

/// Runs `body`, converting errors and panics into a status and recording
/// the message for [`fedmas_last_error_message`].
pub(crate) fn guard<F>(body: F) -> FedmasStatus
where
    F: FnOnce() -> Result<(), FfiError> + UnwindSafe,
{
    let outcome = catch_unwind(body).unwrap_or_else(|payload| {
        let what = payload
            .downcast_ref::<&str>()
            .map(|s| s.to_string())
            .or_else(|| payload.downcast_ref::<String>().cloned())
            .unwrap_or_else(|| "unknown panic".into());
        Err(FfiError::new(FedmasStatus::Panic, what))
    });
    match outcome {
        Ok(()) => FedmasStatus::Ok,
        Err(e) => {
            set_last_error(&e.message);
            e.status
        }
    }
}

/// Message of the most recent failure on the calling thread, or an empty
/// string. The pointer stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn fedmas_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}
