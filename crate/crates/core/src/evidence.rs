//! Per-Gaussian evidence accumulated during training: a visibility counter,
//! an exponential moving average of the center-gradient norm, and the age
//! used to give newly spawned Gaussians a grace period before pruning.
//!
//! The ledger is index-aligned with the Gaussian list; every spawn or removal
//! on one side must be mirrored on the other.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

const SIDECAR_MAGIC: &[u8; 8] = b"SPLEVID1";

#[derive(Debug, Clone, PartialEq)]
pub struct EvidenceLedger {
    /// Iterations in which the Gaussian had a visibility hit.
    pub visibility: Vec<u32>,
    /// EMA of the center-gradient L2 norm.
    pub grad_ema: Vec<f64>,
    /// Updates since the entry was spawned.
    pub age: Vec<u32>,
    pub beta: f64,
}

impl EvidenceLedger {
    pub fn new(len: usize, beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta < 1.0) {
            return Err(Error::InvalidArgument(format!("EMA decay {beta} outside (0, 1)")));
        }
        Ok(EvidenceLedger {
            visibility: vec![0; len],
            grad_ema: vec![0.0; len],
            age: vec![0; len],
            beta,
        })
    }

    pub fn len(&self) -> usize {
        self.visibility.len()
    }

    pub fn is_empty(&self) -> bool {
        self.visibility.is_empty()
    }

    /// One training iteration: count hits, fold the gradient norms into the
    /// EMA, and age every entry.
    pub fn update(&mut self, hits: &[bool], grad_norms: &[f64]) -> Result<()> {
        let n = self.len();
        if hits.len() != n || grad_norms.len() != n {
            return Err(Error::Shape(format!(
                "ledger has {n} entries, got {} hits and {} gradient norms",
                hits.len(),
                grad_norms.len()
            )));
        }
        let b = self.beta;
        for i in 0..n {
            if hits[i] {
                self.visibility[i] += 1;
            }
            self.grad_ema[i] = b * self.grad_ema[i] + (1.0 - b) * grad_norms[i].abs();
            self.age[i] += 1;
        }
        Ok(())
    }

    /// Appends `count` fresh entries.
    pub fn spawn(&mut self, count: usize) {
        let n = self.len() + count;
        self.visibility.resize(n, 0);
        self.grad_ema.resize(n, 0.0);
        self.age.resize(n, 0);
    }

    /// Removes the given indices, shifting later entries down.
    pub fn remove(&mut self, indices: &[usize]) -> Result<()> {
        let keep = keep_mask(self.len(), indices)?;
        retain_by_mask(&mut self.visibility, &keep);
        retain_by_mask(&mut self.grad_ema, &keep);
        retain_by_mask(&mut self.age, &keep);
        Ok(())
    }

    /// Entries old enough to be considered for pruning (`age >= min_age`).
    pub fn stabilization_gate(&self, min_age: u32) -> Vec<bool> {
        self.age.iter().map(|&a| a >= min_age).collect()
    }

    /// Writes the binary sidecar: magic, beta, count, then fixed-width
    /// little-endian records `(visibility: u32, age: u32, grad_ema: f64)`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        w.write_all(SIDECAR_MAGIC).map_err(io)?;
        w.write_all(&self.beta.to_le_bytes()).map_err(io)?;
        w.write_all(&(self.len() as u64).to_le_bytes()).map_err(io)?;
        for i in 0..self.len() {
            w.write_all(&self.visibility[i].to_le_bytes()).map_err(io)?;
            w.write_all(&self.age[i].to_le_bytes()).map_err(io)?;
            w.write_all(&self.grad_ema[i].to_le_bytes()).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let io = |e| Error::io(path, e);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != SIDECAR_MAGIC {
            return Err(Error::Format(format!("{}: not an evidence sidecar", path.display())));
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8).map_err(io)?;
        let beta = f64::from_le_bytes(b8);
        r.read_exact(&mut b8).map_err(io)?;
        let n = u64::from_le_bytes(b8) as usize;
        let mut ledger = EvidenceLedger::new(n, beta)?;
        let mut rec = [0u8; 16];
        for i in 0..n {
            r.read_exact(&mut rec).map_err(io)?;
            ledger.visibility[i] = u32::from_le_bytes(rec[0..4].try_into().unwrap());
            ledger.age[i] = u32::from_le_bytes(rec[4..8].try_into().unwrap());
            ledger.grad_ema[i] = f64::from_le_bytes(rec[8..16].try_into().unwrap());
        }
        Ok(ledger)
    }
}

/// `keep[i] == false` for every index in `remove`; errors on out-of-range.
pub fn keep_mask(len: usize, remove: &[usize]) -> Result<Vec<bool>> {
    let mut keep = vec![true; len];
    for &i in remove {
        if i >= len {
            return Err(Error::Index { index: i, len });
        }
        keep[i] = false;
    }
    Ok(keep)
}

pub fn retain_by_mask<T>(v: &mut Vec<T>, keep: &[bool]) {
    let mut it = keep.iter();
    v.retain(|_| *it.next().unwrap_or(&true));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ema_decays_without_gradient() {
        let mut l = EvidenceLedger::new(1, 0.99).unwrap();
        l.grad_ema[0] = 1.0;
        l.update(&[false], &[0.0]).unwrap();
        assert!((l.grad_ema[0] - 0.99).abs() < 1e-15);
    }

    #[test]
    fn ema_converges_monotonically_to_constant_input() {
        let mut l = EvidenceLedger::new(1, 0.99).unwrap();
        let c = 3e-4;
        let mut prev = 0.0;
        for _ in 0..5000 {
            l.update(&[true], &[c]).unwrap();
            assert!(l.grad_ema[0] >= prev && l.grad_ema[0] <= c * (1.0 + 1e-12));
            prev = l.grad_ema[0];
        }
        assert!((prev - c).abs() < 1e-12);
    }

    #[test]
    fn no_hits_only_ages() {
        let mut l = EvidenceLedger::new(2, 0.9).unwrap();
        l.update(&[false, false], &[0.0, 0.0]).unwrap();
        assert_eq!(l.visibility, vec![0, 0]);
        assert_eq!(l.age, vec![1, 1]);
    }

    #[test]
    fn update_rejects_length_mismatch() {
        let mut l = EvidenceLedger::new(2, 0.9).unwrap();
        assert!(matches!(l.update(&[true], &[0.0, 0.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn spawn_on_empty() {
        let mut l = EvidenceLedger::new(0, 0.99).unwrap();
        l.spawn(2);
        assert_eq!(l.len(), 2);
        assert_eq!(l.visibility, vec![0, 0]);
        assert_eq!(l.grad_ema, vec![0.0, 0.0]);
        assert_eq!(l.age, vec![0, 0]);
    }

    #[test]
    fn remove_shifts_entries() {
        let mut l = EvidenceLedger::new(3, 0.99).unwrap();
        l.visibility = vec![10, 11, 12];
        l.remove(&[0]).unwrap();
        assert_eq!(l.visibility, vec![11, 12]);
        assert!(matches!(l.remove(&[2]), Err(Error::Index { index: 2, len: 2 })));
    }

    #[test]
    fn gate_boundary_is_closed() {
        let mut l = EvidenceLedger::new(2, 0.99).unwrap();
        l.age = vec![499, 500];
        assert_eq!(l.stabilization_gate(500), vec![false, true]);
        l.spawn(1);
        assert_eq!(l.stabilization_gate(500)[2], false);
    }

    #[test]
    fn sidecar_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ev.bin");
        let mut l = EvidenceLedger::new(3, 0.99).unwrap();
        l.visibility = vec![1, 0, 7];
        l.age = vec![9, 8, 700];
        l.grad_ema = vec![1e-4, 0.0, 0.3];
        l.save(&p).unwrap();
        assert_eq!(EvidenceLedger::load(&p).unwrap(), l);
        assert_eq!(std::fs::metadata(&p).unwrap().len(), 8 + 8 + 8 + 3 * 16);
    }

    #[test]
    fn rejects_bad_beta() {
        assert!(EvidenceLedger::new(1, 1.0).is_err());
        assert!(EvidenceLedger::new(1, 0.0).is_err());
    }
}
