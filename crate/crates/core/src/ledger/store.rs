//! Ledger file format: a sequence of records, each a 4-byte big-endian
//! length followed by the canonical block encoding. Two peers holding the
//! same block sequence write byte-identical files.

use std::fs::{File, OpenOptions};
use std::io::{BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use crate::codec::{canonical_decode, canonical_encode};

use super::{Block, BlockHeader, ChainReport, ChainVerifier, LedgerError};
use crate::hash::Hash;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Durability {
    /// `fsync` after every appended block.
    #[default]
    Sync,
    /// Flush to the OS only.
    Buffered,
}

/// `<datadir>/<peer>/<channel>.ledger`
pub fn ledger_path(datadir: &Path, peer: &str, channel: &str) -> PathBuf {
    datadir.join(peer).join(format!("{channel}.ledger"))
}

pub(super) struct FileStore {
    path: PathBuf,
    file: File,
    offsets: Vec<(u64, u32)>,
    end: u64,
    durability: Durability,
}

impl FileStore {
    pub(super) fn create(path: &Path, durability: Durability) -> Result<FileStore, LedgerError> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let file = OpenOptions::new().create(true).write(true).truncate(true).open(path)?;
        Ok(FileStore { path: path.to_path_buf(), file, offsets: Vec::new(), end: 0, durability })
    }

    pub(super) fn path(&self) -> &PathBuf {
        &self.path
    }

    pub(super) fn append(&mut self, block: &Block) -> Result<(), LedgerError> {
        let body = canonical_encode(block);
        let mut record = Vec::with_capacity(body.len() + 4);
        record.extend_from_slice(&(body.len() as u32).to_be_bytes());
        record.extend_from_slice(&body);
        self.file.write_all(&record)?;
        self.file.flush()?;
        if self.durability == Durability::Sync {
            self.file.sync_data()?;
        }
        self.offsets.push((self.end + 4, body.len() as u32));
        self.end += record.len() as u64;
        Ok(())
    }

    pub(super) fn read_block(&self, number: u64) -> Result<Block, LedgerError> {
        let (offset, len) = self.offsets[number as usize];
        let mut file = File::open(&self.path)?;
        file.seek(SeekFrom::Start(offset))?;
        let mut body = vec![0u8; len as usize];
        file.read_exact(&mut body)?;
        canonical_decode(&body).map_err(|error| LedgerError::Decode { record: number, error })
    }
}

/// Streams blocks out of a ledger file.
pub struct LedgerFileReader {
    reader: BufReader<File>,
    record: u64,
    failed: bool,
}

impl LedgerFileReader {
    pub fn open(path: &Path) -> Result<Self, LedgerError> {
        Ok(LedgerFileReader { reader: BufReader::new(File::open(path)?), record: 0, failed: false })
    }
}

impl Iterator for LedgerFileReader {
    type Item = Result<Block, LedgerError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        let record = self.record;
        let fail = |this: &mut Self, error| {
            this.failed = true;
            Some(Err(LedgerError::Decode { record, error }))
        };
        let mut len = [0u8; 4];
        let mut got = 0;
        while got < 4 {
            match self.reader.read(&mut len[got..]) {
                Ok(0) if got == 0 => return None,
                Ok(0) => return fail(self, crate::codec::CodecError::Truncated),
                Ok(n) => got += n,
                Err(e) => {
                    self.failed = true;
                    return Some(Err(e.into()));
                }
            }
        }
        let len = u32::from_be_bytes(len) as u64;
        let mut body = Vec::new();
        match (&mut self.reader).take(len).read_to_end(&mut body) {
            Ok(n) if n as u64 == len => {}
            Ok(_) => return fail(self, crate::codec::CodecError::Truncated),
            Err(e) => {
                self.failed = true;
                return Some(Err(e.into()));
            }
        }
        self.record += 1;
        match canonical_decode::<Block>(&body) {
            Ok(block) => Some(Ok(block)),
            Err(error) => fail(self, error),
        }
    }
}

pub fn read_ledger_file(path: &Path) -> Result<Vec<Block>, LedgerError> {
    LedgerFileReader::open(path)?.collect()
}

/// Verifies a ledger file block by block. A record that fails to decode is
/// reported as the bad block.
pub fn verify_ledger_file(path: &Path) -> ChainReport {
    let bad = |n| ChainReport { ok: false, first_bad_block: Some(n), blocks: n };
    let Ok(reader) = LedgerFileReader::open(path) else {
        return bad(0);
    };
    let mut verifier = ChainVerifier::default();
    let mut count = 0;
    for block in reader {
        match block {
            Ok(block) if verifier.check(&block) => count += 1,
            _ => return bad(count),
        }
    }
    ChainReport { ok: true, first_bad_block: None, blocks: count }
}

impl super::Ledger {
    /// Opens an existing ledger file, verifying it and indexing its blocks.
    /// Further appends go to the end of the same file.
    pub fn open_file(owner_peer: &str, channel: &str, path: &Path, durability: Durability) -> Result<super::Ledger, LedgerError> {
        let mut verifier = ChainVerifier::default();
        let mut headers: Vec<BlockHeader> = Vec::new();
        let mut commit_hashes: Vec<Hash> = Vec::new();
        let mut offsets = Vec::new();
        let mut pos = 0u64;
        for block in LedgerFileReader::open(path)? {
            let block = block?;
            if !verifier.check(&block) {
                return Err(LedgerError::BadLink(block.header.number));
            }
            let len = canonical_encode(&block).len() as u32;
            offsets.push((pos + 4, len));
            pos += 4 + len as u64;
            commit_hashes.push(block.commit_hash);
            headers.push(block.header);
        }
        let file = OpenOptions::new().append(true).open(path)?;
        Ok(super::Ledger {
            owner_peer: owner_peer.to_string(),
            channel: channel.to_string(),
            headers,
            commit_hashes,
            store: super::BlockStore::File(FileStore { path: path.to_path_buf(), file, offsets, end: pos, durability }),
        })
    }
}
