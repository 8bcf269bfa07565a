//! Versioned little-endian binary checkpoints.

use crate::scalar::Scalar;

const MAGIC: &[u8; 4] = b"FLEV";
const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("not an evaluator checkpoint")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint holds a {found:?} model, expected {expected:?}")]
    WrongBackend { expected: Backend, found: Backend },
    #[error("truncated checkpoint")]
    Truncated,
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    Tabular,
    Feedforward,
}

impl Backend {
    fn tag(self) -> u8 {
        match self {
            Backend::Tabular => 1,
            Backend::Feedforward => 2,
        }
    }

    fn from_tag(t: u8) -> Result<Self, CheckpointError> {
        match t {
            1 => Ok(Backend::Tabular),
            2 => Ok(Backend::Feedforward),
            _ => Err(CheckpointError::Corrupt(format!("backend tag {t}"))),
        }
    }
}

fn header(bytes: &[u8]) -> Result<Backend, CheckpointError> {
    if bytes.len() < 9 {
        return Err(CheckpointError::Truncated);
    }
    if &bytes[..4] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    Backend::from_tag(bytes[8])
}

pub(super) fn peek_backend(bytes: &[u8]) -> Result<Backend, CheckpointError> {
    header(bytes)
}

pub(super) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new(backend: Backend) -> Self {
        let mut buf = MAGIC.to_vec();
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.push(backend.tag());
        Self { buf }
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u128(&mut self, v: u128) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    /// Scalars are stored widened to `f64`, which is exact for both widths.
    pub fn f<F: Scalar>(&mut self, v: F) {
        self.u64(v.as_f64().to_bits());
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub(super) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8], expected: Backend) -> Result<Self, CheckpointError> {
        let found = header(bytes)?;
        if found != expected {
            return Err(CheckpointError::WrongBackend { expected, found });
        }
        Ok(Self { bytes, pos: 9 })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated)?;
        let s = self.bytes.get(self.pos..end).ok_or(CheckpointError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    pub fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn u128(&mut self) -> Result<u128, CheckpointError> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().expect("16 bytes")))
    }

    pub fn f<F: Scalar>(&mut self) -> Result<F, CheckpointError> {
        Ok(F::of(f64::from_bits(self.u64()?)))
    }

    pub fn end(&self) -> Result<(), CheckpointError> {
        if self.pos == self.bytes.len() {
            Ok(())
        } else {
            Err(CheckpointError::Corrupt(format!(
                "{} trailing bytes",
                self.bytes.len() - self.pos
            )))
        }
    }
}
