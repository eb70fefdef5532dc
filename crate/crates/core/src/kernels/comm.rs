//! In-process rank communicator.
//!
//! Every pair of ranks is joined by a FIFO channel. Collectives are built from
//! point-to-point exchanges: each rank sends its contribution to every other
//! rank and combines what it receives in rank order, so every rank ends up with
//! bit-identical results.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::time::{Duration, Instant};

use super::KernelError;

const POLL: Duration = Duration::from_millis(20);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Op {
    Barrier,
    AllReduce,
    AllGather,
}

#[derive(Debug)]
struct Message {
    seq: u64,
    op: Op,
    payload: Vec<f64>,
}

/// One rank's endpoint of a communicator group.
#[derive(Debug)]
pub struct Communicator {
    rank: usize,
    size: usize,
    to: Vec<Option<Sender<Message>>>,
    from: Vec<Option<Receiver<Message>>>,
    seq: u64,
    abort: Arc<AtomicBool>,
    timeout: Duration,
}

impl Communicator {
    /// Creates the endpoints of a `size`-rank group. Endpoint `i` has rank `i`.
    pub fn group(size: usize, timeout: Duration, abort: Arc<AtomicBool>) -> Vec<Communicator> {
        assert!(size >= 1, "communicator needs at least one rank");
        let mut to: Vec<Vec<Option<Sender<Message>>>> =
            (0..size).map(|_| (0..size).map(|_| None).collect()).collect();
        let mut from: Vec<Vec<Option<Receiver<Message>>>> =
            (0..size).map(|_| (0..size).map(|_| None).collect()).collect();
        for src in 0..size {
            for dst in 0..size {
                if src != dst {
                    let (tx, rx) = channel();
                    to[src][dst] = Some(tx);
                    from[dst][src] = Some(rx);
                }
            }
        }
        to.into_iter()
            .zip(from)
            .enumerate()
            .map(|(rank, (to, from))| Communicator {
                rank,
                size,
                to,
                from,
                seq: 0,
                abort: abort.clone(),
                timeout,
            })
            .collect()
    }

    /// Single-rank communicator; collectives degenerate to local copies.
    pub fn solo() -> Communicator {
        Self::group(1, Duration::from_secs(1), Arc::new(AtomicBool::new(false)))
            .pop()
            .expect("one endpoint")
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// A peer hung up. If it did so because the group is aborting, that is
    /// not a contract violation on this rank's part.
    fn departed(&self, msg: String) -> KernelError {
        if self.abort.load(Ordering::Relaxed) {
            KernelError::Aborted
        } else {
            KernelError::CollectiveMismatch(msg)
        }
    }

    fn send_all(&self, op: Op, payload: &[f64]) -> Result<(), KernelError> {
        for (dst, tx) in self.to.iter().enumerate() {
            let Some(tx) = tx else { continue };
            tx.send(Message {
                seq: self.seq,
                op,
                payload: payload.to_vec(),
            })
            .map_err(|_| {
                self.departed(format!("rank {} left the communicator before {op:?} #{}", dst, self.seq))
            })?;
        }
        Ok(())
    }

    fn recv_from(&self, src: usize, op: Op) -> Result<Vec<f64>, KernelError> {
        let rx = self.from[src].as_ref().expect("no self channel");
        let deadline = Instant::now() + self.timeout;
        loop {
            if self.abort.load(Ordering::Relaxed) {
                return Err(KernelError::Aborted);
            }
            let now = Instant::now();
            if now >= deadline {
                return Err(KernelError::CollectiveMismatch(format!(
                    "rank {} timed out waiting for rank {src} in {op:?} #{}",
                    self.rank, self.seq
                )));
            }
            match rx.recv_timeout(POLL.min(deadline - now)) {
                Ok(msg) => {
                    if msg.seq != self.seq || msg.op != op {
                        return Err(KernelError::CollectiveMismatch(format!(
                            "rank {} expected {op:?} #{} from rank {src}, got {:?} #{}",
                            self.rank, self.seq, msg.op, msg.seq
                        )));
                    }
                    return Ok(msg.payload);
                }
                Err(RecvTimeoutError::Timeout) => continue,
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(self.departed(format!(
                        "rank {src} left the communicator before {op:?} #{}",
                        self.seq
                    )))
                }
            }
        }
    }

    fn exchange(&mut self, op: Op, payload: &[f64]) -> Result<Vec<Vec<f64>>, KernelError> {
        self.send_all(op, payload)?;
        let mut parts = Vec::with_capacity(self.size);
        for src in 0..self.size {
            if src == self.rank {
                parts.push(payload.to_vec());
            } else {
                parts.push(self.recv_from(src, op)?);
            }
        }
        self.seq += 1;
        Ok(parts)
    }

    pub fn barrier(&mut self) -> Result<(), KernelError> {
        self.exchange(Op::Barrier, &[]).map(|_| ())
    }

    /// Elementwise sum across ranks, accumulated in rank order.
    pub fn all_reduce_sum(&mut self, data: &[f64]) -> Result<Vec<f64>, KernelError> {
        let parts = self.exchange(Op::AllReduce, data)?;
        let mut out = vec![0.0; data.len()];
        for (src, part) in parts.iter().enumerate() {
            if part.len() != data.len() {
                return Err(KernelError::SizeMismatch {
                    rank: src,
                    expected: data.len(),
                    got: part.len(),
                });
            }
            for (o, v) in out.iter_mut().zip(part) {
                *o += v;
            }
        }
        Ok(out)
    }

    /// Concatenation of every rank's buffer in rank order.
    pub fn all_gather(&mut self, data: &[f64]) -> Result<Vec<f64>, KernelError> {
        let parts = self.exchange(Op::AllGather, data)?;
        Ok(parts.concat())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::thread;

    fn run_group<T: Send + 'static>(
        size: usize,
        f: impl Fn(&mut Communicator) -> T + Send + Sync + Clone + 'static,
    ) -> Vec<T> {
        let comms = Communicator::group(size, Duration::from_secs(5), Arc::new(AtomicBool::new(false)));
        let handles: Vec<_> = comms
            .into_iter()
            .map(|mut c| {
                let f = f.clone();
                thread::spawn(move || f(&mut c))
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    }

    #[test]
    fn allreduce_of_rank_ids() {
        let out = run_group(4, |c| c.all_reduce_sum(&[c.rank() as f64]).unwrap());
        for v in out {
            assert_eq!(v, vec![6.0]);
        }
    }

    #[test]
    fn solo_allreduce_is_identity() {
        let mut c = Communicator::solo();
        assert_eq!(c.all_reduce_sum(&[1.5, 2.0]).unwrap(), vec![1.5, 2.0]);
        assert_eq!(c.all_gather(&[3.0]).unwrap(), vec![3.0]);
    }

    #[test]
    fn allgather_rank_order() {
        let out = run_group(3, |c| c.all_gather(&[c.rank() as f64]).unwrap());
        for v in out {
            assert_eq!(v, vec![0.0, 1.0, 2.0]);
        }
    }

    #[test]
    fn size_mismatch_detected() {
        let out = run_group(2, |c| {
            let n = if c.rank() == 0 { 2 } else { 3 };
            c.all_reduce_sum(&vec![1.0; n])
        });
        assert!(out.iter().all(|r| matches!(r, Err(KernelError::SizeMismatch { .. }))));
    }

    #[test]
    fn missing_participant_is_a_mismatch() {
        let comms = Communicator::group(2, Duration::from_millis(200), Arc::new(AtomicBool::new(false)));
        let mut it = comms.into_iter();
        let mut r0 = it.next().unwrap();
        let r1 = it.next().unwrap();
        // rank 1 never calls the collective but stays alive
        let h = thread::spawn(move || {
            thread::sleep(Duration::from_millis(400));
            drop(r1);
        });
        let res = r0.all_reduce_sum(&[1.0]);
        assert!(matches!(res, Err(KernelError::CollectiveMismatch(_))), "{res:?}");
        h.join().unwrap();
    }

    #[test]
    fn abort_flag_unblocks_waiters() {
        let abort = Arc::new(AtomicBool::new(false));
        let mut comms = Communicator::group(2, Duration::from_secs(30), abort.clone());
        let _r1 = comms.pop().unwrap();
        let mut r0 = comms.pop().unwrap();
        let a = abort.clone();
        let h = thread::spawn(move || {
            thread::sleep(Duration::from_millis(50));
            a.store(true, Ordering::Relaxed);
        });
        let started = Instant::now();
        assert!(matches!(r0.barrier(), Err(KernelError::Aborted)));
        assert!(started.elapsed() < Duration::from_secs(5));
        h.join().unwrap();
    }
}
