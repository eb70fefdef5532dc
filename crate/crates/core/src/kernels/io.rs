//! File I/O against a per-run scratch directory.

use std::fs::{self, File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Mutex, OnceLock};
use std::time::{SystemTime, UNIX_EPOCH};

use super::KernelError;

/// Transfer block size for all file kernels.
pub const BLOCK: usize = 4 << 20;

const STAGED_INPUT: &str = "staged-input.dat";

fn pattern_block() -> &'static [u8] {
    static BLOCK_DATA: OnceLock<Vec<u8>> = OnceLock::new();
    BLOCK_DATA.get_or_init(|| (0..BLOCK).map(|i| (i.wrapping_mul(31).wrapping_add(7) % 251) as u8).collect())
}

/// Sum of all bytes. Chunked so the inner loop stays in `u32` and vectorizes.
pub(crate) fn byte_sum(buf: &[u8]) -> u64 {
    buf.chunks(1 << 16)
        .map(|c| u64::from(c.iter().map(|&b| u32::from(b)).sum::<u32>()))
        .sum()
}

/// Scratch directory owned by one run. Removed on drop unless kept.
#[derive(Debug)]
pub struct Scratch {
    dir: PathBuf,
    keep: bool,
    fsync: bool,
    staged: Mutex<u64>,
}

impl Scratch {
    /// Creates a fresh, uniquely named directory under `root`.
    pub fn create(root: &Path, keep: bool, fsync: bool) -> Result<Scratch, KernelError> {
        static COUNTER: AtomicU64 = AtomicU64::new(0);
        let nanos = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_nanos())
            .unwrap_or(0);
        let name = format!(
            "wfmini-{}-{}-{}",
            std::process::id(),
            nanos,
            COUNTER.fetch_add(1, Ordering::Relaxed)
        );
        let dir = root.join(name);
        fs::create_dir_all(&dir)
            .map_err(|e| KernelError::ScratchUnavailable(format!("{}: {e}", dir.display())))?;
        Ok(Scratch {
            dir,
            keep,
            fsync,
            staged: Mutex::new(0),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn keep(&self) -> bool {
        self.keep
    }

    fn unavailable(&self, e: std::io::Error) -> KernelError {
        KernelError::ScratchUnavailable(format!("{}: {e}", self.dir.display()))
    }

    /// Ensures the shared input file holds at least `min_len` bytes.
    pub fn stage_input(&self, min_len: u64) -> Result<PathBuf, KernelError> {
        let path = self.dir.join(STAGED_INPUT);
        let mut staged = self.staged.lock().expect("staging lock poisoned");
        if *staged < min_len {
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(|e| self.unavailable(e))?;
            let mut len = *staged;
            while len < min_len {
                let n = (min_len - len).min(BLOCK as u64) as usize;
                f.write_all(&pattern_block()[..n]).map_err(|e| self.unavailable(e))?;
                len += n as u64;
            }
            if self.fsync {
                f.sync_all()?;
            }
            *staged = len;
        }
        Ok(path)
    }

    pub fn rank_file(&self, task: &str, rank: usize) -> PathBuf {
        self.dir.join(format!("{}.r{rank}.out", sanitize(task)))
    }

    pub fn shared_file(&self, task: &str) -> PathBuf {
        self.dir.join(format!("{}.shared.out", sanitize(task)))
    }

    /// Reads `len` bytes at `offset` from the staged input. Returns the byte
    /// sum as a digest.
    pub fn read_staged(&self, offset: u64, len: u64) -> Result<u64, KernelError> {
        if len == 0 {
            return Ok(0);
        }
        let path = self.stage_input(offset + len)?;
        let mut f = File::open(&path).map_err(|e| self.unavailable(e))?;
        f.seek(SeekFrom::Start(offset))?;
        let mut buf = vec![0u8; (len as usize).min(BLOCK)];
        let mut done = 0u64;
        let mut digest = 0u64;
        while done < len {
            let want = (len - done).min(BLOCK as u64) as usize;
            let got = read_full(&mut f, &mut buf[..want])?;
            digest += byte_sum(&buf[..got]);
            done += got as u64;
            if got < want {
                return Err(KernelError::ShortRead { expected: len, got: done });
            }
        }
        Ok(digest)
    }

    /// Writes `len` pattern bytes at `offset`. With `truncate`, the file ends
    /// at `offset + len` afterwards. Existing blocks are overwritten in place
    /// rather than freed and reallocated.
    pub fn write_file(&self, path: &Path, offset: u64, len: u64, truncate: bool) -> Result<u64, KernelError> {
        if len == 0 {
            return Ok(0);
        }
        let mut f = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(false)
            .open(path)
            .map_err(|e| self.unavailable(e))?;
        f.seek(SeekFrom::Start(offset))?;
        let block = pattern_block();
        let mut done = 0u64;
        let mut digest = 0u64;
        while done < len {
            let n = (len - done).min(BLOCK as u64) as usize;
            let wrote = write_some(&mut f, &block[..n])?;
            digest += byte_sum(&block[..wrote]);
            done += wrote as u64;
            if wrote < n {
                return Err(KernelError::ShortWrite { expected: len, got: done });
            }
        }
        if truncate && f.metadata()?.len() > offset + len {
            f.set_len(offset + len)?;
        }
        if self.fsync {
            f.sync_data()?;
        }
        Ok(digest)
    }
}

impl Drop for Scratch {
    fn drop(&mut self) {
        if !self.keep {
            let _ = fs::remove_dir_all(&self.dir);
        }
    }
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn read_full(f: &mut File, buf: &mut [u8]) -> std::io::Result<usize> {
    let mut got = 0;
    while got < buf.len() {
        match f.read(&mut buf[got..]) {
            Ok(0) => break,
            Ok(n) => got += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(got)
}

fn write_some(f: &mut File, buf: &[u8]) -> std::io::Result<usize> {
    let mut done = 0;
    while done < buf.len() {
        match f.write(&buf[done..]) {
            Ok(0) => break,
            Ok(n) => done += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(done)
}
