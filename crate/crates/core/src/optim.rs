//! Adaptive-moment optimizer over flat parameter groups.

use serde::{Deserialize, Serialize};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-15;

/// First and second moments for one parameter group.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Adam {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl Adam {
    pub fn new(len: usize) -> Self {
        Adam {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    /// In-place update of `params` given `grads`, both of the group's length.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        self.step_rows(params, grads, lr, None);
    }

    /// Like [`Adam::step`], but when `active` is given only rows (of
    /// `params.len() / active.len()` values) flagged true are touched; the
    /// moments of the others are left as they are.
    pub fn step_rows(&mut self, params: &mut [f64], grads: &[f64], lr: f64, active: Option<&[bool]>) {
        debug_assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t as i32);
        let bc2 = 1.0 - BETA2.powi(self.t as i32);
        let width = active.map_or(1, |a| if a.is_empty() { 1 } else { params.len() / a.len() });
        for i in 0..params.len() {
            if let Some(a) = active {
                if !a[i / width] {
                    continue;
                }
            }
            let g = grads[i];
            self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * g;
            self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * g * g;
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= lr * mh / (vh.sqrt() + EPS);
        }
    }

    /// Keeps the moments of the rows (of `width` values) where `keep` is true.
    pub fn retain_rows(&mut self, keep: &[bool], width: usize) {
        let filter = |v: &mut Vec<f64>| {
            let mut out = Vec::with_capacity(v.len());
            for (r, &k) in keep.iter().enumerate() {
                if k {
                    out.extend_from_slice(&v[r * width..(r + 1) * width]);
                }
            }
            *v = out;
        };
        filter(&mut self.m);
        filter(&mut self.v);
    }

    /// Appends zero moments for `rows` new rows.
    pub fn grow_rows(&mut self, rows: usize, width: usize) {
        let n = self.m.len() + rows * width;
        self.m.resize(n, 0.0);
        self.v.resize(n, 0.0);
    }
}
