//! JSON helpers with exact float round trips.
//!
//! Every f64 is printed with 17 significant digits (`{:.16e}`), which is
//! enough to reconstruct the exact bit pattern on parse. Checkpoints and
//! datasets rely on this for bit-identical save/load.

use crate::error::{Error, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use std::io;
use std::path::Path;

struct PreciseFormatter;

// serde_json routes non-finite floats to write_null before the formatter
// sees them, so refusing them must happen where the numbers live: the
// checkpoint and dataset writers validate their tensors before calling in
// here. An intentional None still serializes as null (absent metrics).
impl serde_json::ser::Formatter for PreciseFormatter {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        if !value.is_finite() {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                format!("refusing to serialize non-finite float {value}"),
            ));
        }
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W>(&mut self, writer: &mut W, value: f32) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.write_f64(writer, value as f64)
    }
}

pub fn to_string_precise<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, PreciseFormatter);
    value
        .serialize(&mut ser)
        .map_err(|e| Error::Parse { path: "<memory>".into(), detail: e.to_string() })?;
    Ok(String::from_utf8(buf).expect("serde_json emits utf-8"))
}

pub fn write_json_file<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = to_string_precise(value)?;
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_json_file<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Parse { path: path.display().to_string(), detail: e.to_string() })
}

pub fn from_str_at<T: DeserializeOwned>(text: &str, path: &str, line: usize) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Parse {
        path: path.to_string(),
        detail: format!("line {line}: {e}"),
    })
}
