use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use crate::container::Context;
use crate::error::{Error, Result};

/// Where data lives: a file on disk or a shared in-memory byte buffer.
#[derive(Clone)]
pub enum Location {
    File(PathBuf),
    Memory { name: String, buffer: Arc<Mutex<Vec<u8>>> },
}

impl Location {
    /// A file location, made absolute against the current directory.
    pub fn file(path: impl AsRef<Path>) -> Self {
        let path = path.as_ref();
        Location::File(std::path::absolute(path).unwrap_or_else(|_| path.to_path_buf()))
    }

    pub fn memory(name: impl Into<String>, bytes: Vec<u8>) -> Self {
        Location::Memory {
            name: name.into(),
            buffer: Arc::new(Mutex::new(bytes)),
        }
    }

    /// Display name: the file name, or the memory buffer's name.
    pub fn name(&self) -> String {
        match self {
            Location::File(p) => p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
            Location::Memory { name, .. } => name.clone(),
        }
    }

    /// Lower-cased extension of the display name.
    pub fn suffix(&self) -> Option<String> {
        let name = self.name();
        let (_, ext) = name.rsplit_once('.')?;
        Some(ext.to_ascii_lowercase())
    }

    /// Current contents of a memory location.
    pub fn memory_bytes(&self) -> Option<Vec<u8>> {
        match self {
            Location::Memory { buffer, .. } => Some(buffer.lock().unwrap().clone()),
            Location::File(_) => None,
        }
    }
}

impl fmt::Debug for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::File(p) => write!(f, "file:{}", p.display()),
            Location::Memory { name, buffer } => write!(f, "memory:{name} ({} bytes)", buffer.lock().unwrap().len()),
        }
    }
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::File(p) => write!(f, "{}", p.display()),
            Location::Memory { name, .. } => write!(f, "memory:{name}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HandleMode {
    Read,
    /// Create or truncate.
    Write,
    ReadWrite,
}

/// Random-access byte channel. Reads past the end are short; writes past the
/// end extend the data (zero-filling any gap). Every read is recorded so
/// callers can account for the byte ranges touched.
pub trait DataHandle: Send {
    fn length(&self) -> u64;
    fn position(&self) -> u64;
    fn seek(&mut self, pos: u64) -> Result<()>;
    /// Reads up to `buf.len()` bytes; returns how many were read.
    fn read(&mut self, buf: &mut [u8]) -> Result<usize>;
    fn write(&mut self, data: &[u8]) -> Result<()>;
    fn read_log(&self) -> &[Range<u64>];
    fn clear_read_log(&mut self);

    fn read_exact_vec(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        let got = self.read(&mut buf)?;
        if got != n {
            return Err(Error::Io(std::io::Error::new(
                std::io::ErrorKind::UnexpectedEof,
                format!("wanted {n} bytes at {}, got {got}", self.position() - got as u64),
            )));
        }
        Ok(buf)
    }

    fn read_to_end_vec(&mut self) -> Result<Vec<u8>> {
        let n = self.length().saturating_sub(self.position()) as usize;
        self.read_exact_vec(n)
    }
}

pub struct MemoryHandle {
    buffer: Arc<Mutex<Vec<u8>>>,
    pos: u64,
    log: Vec<Range<u64>>,
}

impl MemoryHandle {
    pub fn new(buffer: Arc<Mutex<Vec<u8>>>) -> Self {
        Self {
            buffer,
            pos: 0,
            log: Vec::new(),
        }
    }
}

impl DataHandle for MemoryHandle {
    fn length(&self) -> u64 {
        self.buffer.lock().unwrap().len() as u64
    }

    fn position(&self) -> u64 {
        self.pos
    }

    fn seek(&mut self, pos: u64) -> Result<()> {
        self.pos = pos;
        Ok(())
    }

    fn read(&mut self, buf: &mut [u8]) -> Result<usize> {
        let data = self.buffer.lock().unwrap();
        let start = (self.pos as usize).min(data.len());
        let n = buf.len().min(data.len() - start);
        buf[..n].copy_from_slice(&data[start..start + n]);
        if n > 0 {
            self.log.push(self.pos..self.pos + n as u64);
        }
        self.pos += n as u64;
        Ok(n)
    }

    fn write(&mut self, bytes: &[u8]) -> Result<()> {
        let mut data = self.buffer.lock().unwrap();
        let start = self.pos as usize;
        let end = start + bytes.len();
        if data.len() < end {
            data.resize(end, 0);
        }
        data[start..end].copy_from_slice(bytes);
        self.pos = end as u64;
        Ok(())
    }

    fn read_log(&self) -> &[Range<u64>] {
        &self.log
    }

    fn clear_read_log(&mut self) {
        self.log.clear();
    }
}

pub struct FileHandle {
    file: File,
    pos: u64,
    len: u64,
    log: Vec<Range<u64>>,
}

impl FileHandle {
    pub fn open(path: &Path, mode: HandleMode) -> Result<Self> {
        let file = match mode {
            HandleMode::Read => {
                if !path.exists() {
                    return Err(Error::MissingFile(path.to_path_buf()));
                }
                File::open(path)?
            }
            HandleMode::Write => OpenOptions::new().read(true).write(true).create(true).truncate(true).open(path)?,
            HandleMode::ReadWrite => OpenOptions::new().read(true).write(true).create(true).truncate(false).open(path)?,
        };
        let len = file.metadata()?.len();
        Ok(Self {
            file,
            pos: 0,
            len,
            log: Vec::new(),
        })
    }
}

impl DataHandle for FileHandle {
    fn length(&self) -> u64 {
        self.len
    }

    fn position(&self) -> u64 {
        self.pos
    }

    fn seek(&mut self, pos: u64) -> Result<()> {
        self.pos = pos;
        Ok(())
    }

    fn read(&mut self, buf: &mut [u8]) -> Result<usize> {
        if self.pos >= self.len {
            return Ok(0);
        }
        self.file.seek(SeekFrom::Start(self.pos))?;
        let want = buf.len().min((self.len - self.pos) as usize);
        self.file.read_exact(&mut buf[..want])?;
        if want > 0 {
            self.log.push(self.pos..self.pos + want as u64);
        }
        self.pos += want as u64;
        Ok(want)
    }

    fn write(&mut self, data: &[u8]) -> Result<()> {
        if self.pos > self.len {
            self.file.set_len(self.pos)?;
            self.len = self.pos;
        }
        self.file.seek(SeekFrom::Start(self.pos))?;
        self.file.write_all(data)?;
        self.pos += data.len() as u64;
        self.len = self.len.max(self.pos);
        Ok(())
    }

    fn read_log(&self) -> &[Range<u64>] {
        &self.log
    }

    fn clear_read_log(&mut self) {
        self.log.clear();
    }
}

/// Opens a handle on `loc`. Reading a missing file is an error; memory
/// handles share the location's buffer.
pub fn resolve_handle(_ctx: &Context, loc: &Location, mode: HandleMode) -> Result<Box<dyn DataHandle>> {
    open_handle(loc, mode)
}

pub(crate) fn open_handle(loc: &Location, mode: HandleMode) -> Result<Box<dyn DataHandle>> {
    Ok(match loc {
        Location::File(path) => Box::new(FileHandle::open(path, mode)?),
        Location::Memory { buffer, .. } => {
            if mode == HandleMode::Write {
                buffer.lock().unwrap().clear();
            }
            Box::new(MemoryHandle::new(buffer.clone()))
        }
    })
}
