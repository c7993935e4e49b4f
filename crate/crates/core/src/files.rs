//! On-disk formats: tagged credential files, key files and the append-only
//! state journal services persist their tables to.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufWriter, Read, Write};
use std::marker::PhantomData;
use std::path::{Path, PathBuf};

use parking_lot::Mutex;
use thiserror::Error;

use crate::crypto::{KeyPair, PrivateKey};
use crate::encoding::{Canonical, DecodeError};

/// Four-byte type tags prefixed to credential files.
pub mod tag {
    pub const LTC: [u8; 4] = *b"LTC1";
    pub const TICKET: [u8; 4] = *b"TKT1";
    pub const PSEUDONYM: [u8; 4] = *b"PSN1";
    pub const CSR: [u8; 4] = *b"CSR1";
    pub const CRL: [u8; 4] = *b"CRL1";
    pub const AUTHORITY_CERT: [u8; 4] = *b"ACR1";
    pub const TRUST_STORE: [u8; 4] = *b"TRS1";
    pub const DIRECTORY_MANIFEST: [u8; 4] = *b"DIR1";
    pub const PRIVATE_KEY: [u8; 4] = *b"KEY1";
}

#[derive(Debug, Error)]
pub enum FileError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: expected tag {expected:?}, found {found:?}")]
    WrongTag {
        path: PathBuf,
        expected: String,
        found: String,
    },
    #[error("{path}: {source}")]
    Decode { path: PathBuf, source: DecodeError },
    #[error("{path}: invalid private key")]
    BadKey { path: PathBuf },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> FileError + '_ {
    move |source| FileError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn encode_tagged<T: Canonical>(tag: [u8; 4], value: &T) -> Vec<u8> {
    let mut out = tag.to_vec();
    out.extend(value.to_canonical_bytes());
    out
}

pub fn decode_tagged<T: Canonical>(tag: [u8; 4], bytes: &[u8]) -> Result<T, DecodeError> {
    if bytes.len() < 4 || bytes[..4] != tag {
        return Err(DecodeError::InvalidValue("wrong file type tag"));
    }
    T::from_canonical_bytes(&bytes[4..])
}

pub fn write_tagged<T: Canonical>(path: &Path, tag: [u8; 4], value: &T) -> Result<(), FileError> {
    fs::write(path, encode_tagged(tag, value)).map_err(io_err(path))
}

pub fn read_tagged<T: Canonical>(path: &Path, tag: [u8; 4]) -> Result<T, FileError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    if bytes.len() < 4 || bytes[..4] != tag {
        return Err(FileError::WrongTag {
            path: path.to_path_buf(),
            expected: String::from_utf8_lossy(&tag).into_owned(),
            found: String::from_utf8_lossy(&bytes[..bytes.len().min(4)]).into_owned(),
        });
    }
    T::from_canonical_bytes(&bytes[4..]).map_err(|source| FileError::Decode {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_private_key(path: &Path, key: &PrivateKey) -> Result<(), FileError> {
    let mut out = tag::PRIVATE_KEY.to_vec();
    out.extend_from_slice(&key.to_secret_bytes());
    fs::write(path, out).map_err(io_err(path))
}

pub fn read_private_key(path: &Path) -> Result<KeyPair, FileError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    if bytes.len() != 36 || bytes[..4] != tag::PRIVATE_KEY {
        return Err(FileError::BadKey {
            path: path.to_path_buf(),
        });
    }
    let secret: [u8; 32] = bytes[4..].try_into().unwrap();
    PrivateKey::from_secret_bytes(&secret)
        .map(KeyPair::from_private)
        .ok_or_else(|| FileError::BadKey {
            path: path.to_path_buf(),
        })
}

/// Append-only record log. Each record is a 32-bit length followed by the
/// record's canonical encoding; state is rebuilt by replaying the log.
pub struct Journal<R> {
    path: PathBuf,
    writer: Mutex<BufWriter<File>>,
    _record: PhantomData<fn(R)>,
}

impl<R: Canonical> Journal<R> {
    /// Opens (creating if absent) and returns the journal with every intact
    /// record. A torn final record from an interrupted write is dropped.
    pub fn open(path: &Path) -> Result<(Self, Vec<R>), FileError> {
        let mut records = Vec::new();
        let mut valid_len = 0u64;
        if path.exists() {
            let mut bytes = Vec::new();
            File::open(path)
                .and_then(|mut f| f.read_to_end(&mut bytes))
                .map_err(io_err(path))?;
            let mut pos = 0usize;
            while bytes.len() - pos >= 4 {
                let len = u32::from_be_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize;
                if bytes.len() - pos - 4 < len {
                    break;
                }
                let rec = R::from_canonical_bytes(&bytes[pos + 4..pos + 4 + len])
                    .map_err(|source| FileError::Decode {
                        path: path.to_path_buf(),
                        source,
                    })?;
                records.push(rec);
                pos += 4 + len;
            }
            valid_len = pos as u64;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io_err(path))?;
        file.set_len(valid_len).map_err(io_err(path))?;
        Ok((
            Self {
                path: path.to_path_buf(),
                writer: Mutex::new(BufWriter::new(file)),
                _record: PhantomData,
            },
            records,
        ))
    }

    pub fn append(&self, record: &R) -> Result<(), FileError> {
        let bytes = record.to_canonical_bytes();
        let mut w = self.writer.lock();
        w.write_all(&(bytes.len() as u32).to_be_bytes())
            .and_then(|_| w.write_all(&bytes))
            .and_then(|_| w.flush())
            .map_err(io_err(&self.path))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::generate_keypair;

    #[test]
    fn journal_replays_records_and_drops_torn_tail() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.log");
        {
            let (j, prior) = Journal::<String>::open(&path).unwrap();
            assert!(prior.is_empty());
            j.append(&"a".to_string()).unwrap();
            j.append(&"bc".to_string()).unwrap();
        }
        // Simulate a crash mid-write.
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(&[0, 0, 0, 9, 1]).unwrap();
        drop(f);
        let (j, prior) = Journal::<String>::open(&path).unwrap();
        assert_eq!(prior, vec!["a".to_string(), "bc".to_string()]);
        j.append(&"d".to_string()).unwrap();
        drop(j);
        let (_, prior) = Journal::<String>::open(&path).unwrap();
        assert_eq!(prior.len(), 3);
    }

    #[test]
    fn key_file_round_trip_and_tag_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("k.key");
        let kp = generate_keypair(Some([3; 32]));
        write_private_key(&path, &kp.private).unwrap();
        assert_eq!(read_private_key(&path).unwrap().public, kp.public);

        let other = dir.path().join("x.bin");
        write_tagged(&other, tag::CSR, &7u64).unwrap();
        assert!(matches!(read_tagged::<u64>(&other, tag::LTC), Err(FileError::WrongTag { .. })));
        assert_eq!(read_tagged::<u64>(&other, tag::CSR).unwrap(), 7);
    }
}
