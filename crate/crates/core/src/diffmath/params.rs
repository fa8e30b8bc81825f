//! Named parameter arrays with gradients, per-chunk gradient buffers and Adam.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
    pub lr: f64,
    /// Sparse parameters only track (and update) entries that received gradient.
    pub sparse: bool,
    touched: Vec<bool>,
    dirty: Vec<u32>,
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Anything that can receive reverse-mode gradient contributions.
pub trait GradSink {
    fn add(&mut self, id: ParamId, idx: usize, g: f64);

    fn add_slice(&mut self, id: ParamId, offset: usize, g: &[f64]) {
        for (i, &v) in g.iter().enumerate() {
            self.add(id, offset + i, v);
        }
    }

    /// `g[j·cols.len() + k] += rows[j] · cols[k]` (a weight-matrix outer product).
    fn add_outer(&mut self, id: ParamId, rows: &[f64], cols: &[f64]) {
        let n = cols.len();
        for (j, &r) in rows.iter().enumerate() {
            if r != 0.0 {
                for (k, &c) in cols.iter().enumerate() {
                    self.add(id, j * n + k, r * c);
                }
            }
        }
    }
}

fn outer_into(g: &mut [f64], rows: &[f64], cols: &[f64]) {
    let n = cols.len();
    for (j, &r) in rows.iter().enumerate() {
        if r != 0.0 {
            g[j * n..(j + 1) * n].iter_mut().zip(cols).for_each(|(a, &c)| *a += r * c);
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    step: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Multiplies every parameter's learning rate (schedules).
    pub lr_scale: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-12,
            lr_scale: 1.0,
        }
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, name: &str, value: Vec<f64>, lr: f64, sparse: bool) -> ParamId {
        assert!(self.id(name).is_none(), "duplicate parameter name {name}");
        let n = value.len();
        self.params.push(Param {
            name: name.to_string(),
            value,
            grad: vec![0.0; n],
            lr,
            sparse,
            touched: if sparse { vec![false; n] } else { Vec::new() },
            dirty: Vec::new(),
            m: vec![0.0; n],
            v: vec![0.0; n],
        });
        ParamId(self.params.len() - 1)
    }

    pub fn register(&mut self, name: &str, value: Vec<f64>, lr: f64) -> ParamId {
        self.push(name, value, lr, false)
    }

    pub fn register_sparse(&mut self, name: &str, value: Vec<f64>, lr: f64) -> ParamId {
        self.push(name, value, lr, true)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn value(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].grad
    }

    pub fn set_lr(&mut self, id: ParamId, lr: f64) {
        self.params[id.0].lr = lr;
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn total_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            if p.sparse {
                for &i in &p.dirty {
                    p.grad[i as usize] = 0.0;
                    p.touched[i as usize] = false;
                }
                p.dirty.clear();
            } else {
                p.grad.iter_mut().for_each(|g| *g = 0.0);
            }
        }
    }

    /// Merge a chunk buffer; call in a fixed chunk order for bit-reproducibility.
    pub fn accumulate(&mut self, buf: &GradBuffer) {
        for (pi, p) in self.params.iter_mut().enumerate() {
            match &buf.slots[pi] {
                Slot::Dense(g) => {
                    if p.sparse {
                        for (i, &v) in g.iter().enumerate() {
                            if v != 0.0 {
                                add_sparse_entry(p, i, v);
                            }
                        }
                    } else {
                        p.grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                    }
                }
                Slot::Sparse(entries) => {
                    for &(i, v) in entries {
                        add_sparse_entry(p, i as usize, v);
                    }
                }
            }
        }
    }

    /// One Adam update with bias correction. Sparse parameters update only
    /// the entries that received gradient this step; their moments are left
    /// untouched elsewhere.
    pub fn adam_step(&mut self, adam: &Adam) {
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - adam.beta1.powf(t);
        let bc2 = 1.0 - adam.beta2.powf(t);
        for p in &mut self.params {
            let lr = p.lr * adam.lr_scale;
            let mut update = |i: usize| {
                let g = p.grad[i];
                p.m[i] = adam.beta1 * p.m[i] + (1.0 - adam.beta1) * g;
                p.v[i] = adam.beta2 * p.v[i] + (1.0 - adam.beta2) * g * g;
                let mh = p.m[i] / bc1;
                let vh = p.v[i] / bc2;
                p.value[i] -= lr * mh / (vh.sqrt() + adam.eps);
            };
            if p.sparse {
                let dirty = std::mem::take(&mut p.dirty);
                for &i in &dirty {
                    update(i as usize);
                }
                p.dirty = dirty;
            } else {
                let n = p.grad.len();
                for i in 0..n {
                    update(i);
                }
            }
        }
    }

    /// Plain gradient descent (used by tests and small fits).
    pub fn sgd_step(&mut self, lr: f64) {
        for p in &mut self.params {
            p.value.iter_mut().zip(&p.grad).for_each(|(v, g)| *v -= lr * g);
        }
    }

    /// Serializable snapshot: per-parameter metadata plus value/m/v arrays.
    pub fn snapshot(&self) -> (StoreHeader, Vec<&[f64]>) {
        let header = StoreHeader {
            step: self.step,
            params: self
                .params
                .iter()
                .map(|p| ParamHeader {
                    name: p.name.clone(),
                    len: p.value.len(),
                    lr: p.lr,
                    sparse: p.sparse,
                })
                .collect(),
        };
        let arrays = self
            .params
            .iter()
            .flat_map(|p| [p.value.as_slice(), p.m.as_slice(), p.v.as_slice()])
            .collect();
        (header, arrays)
    }

    pub fn restore(header: &StoreHeader, mut arrays: Vec<Vec<f64>>) -> Result<Self> {
        if arrays.len() != 3 * header.params.len() {
            return Err(Error::format("parameter archive", "array count does not match header"));
        }
        let mut store = ParamStore::new();
        store.step = header.step;
        for (i, ph) in header.params.iter().enumerate().rev() {
            let v = arrays.pop().unwrap();
            let m = arrays.pop().unwrap();
            let value = arrays.pop().unwrap();
            if value.len() != ph.len || m.len() != ph.len || v.len() != ph.len {
                return Err(Error::format(
                    "parameter archive",
                    format!("parameter {} ({i}) has inconsistent length", ph.name),
                ));
            }
            store.params.push(Param {
                name: ph.name.clone(),
                grad: vec![0.0; ph.len],
                touched: if ph.sparse { vec![false; ph.len] } else { Vec::new() },
                dirty: Vec::new(),
                lr: ph.lr,
                sparse: ph.sparse,
                value,
                m,
                v,
            });
        }
        store.params.reverse();
        Ok(store)
    }
}

fn add_sparse_entry(p: &mut Param, i: usize, v: f64) {
    p.grad[i] += v;
    if !p.touched[i] {
        p.touched[i] = true;
        p.dirty.push(i as u32);
    }
}

impl GradSink for ParamStore {
    fn add(&mut self, id: ParamId, idx: usize, g: f64) {
        let p = &mut self.params[id.0];
        if p.sparse {
            add_sparse_entry(p, idx, g);
        } else {
            p.grad[idx] += g;
        }
    }

    fn add_outer(&mut self, id: ParamId, rows: &[f64], cols: &[f64]) {
        let p = &mut self.params[id.0];
        if p.sparse {
            let n = cols.len();
            for (j, &r) in rows.iter().enumerate() {
                for (k, &c) in cols.iter().enumerate() {
                    add_sparse_entry(p, j * n + k, r * c);
                }
            }
        } else {
            outer_into(&mut p.grad, rows, cols);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamHeader {
    pub name: String,
    pub len: usize,
    pub lr: f64,
    pub sparse: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreHeader {
    pub step: u64,
    pub params: Vec<ParamHeader>,
}

#[derive(Debug, Clone)]
enum Slot {
    Dense(Vec<f64>),
    Sparse(Vec<(u32, f64)>),
}

/// Private gradient accumulator for one chunk of work.
#[derive(Debug, Clone)]
pub struct GradBuffer {
    slots: Vec<Slot>,
}

impl GradBuffer {
    pub fn for_store(store: &ParamStore) -> Self {
        GradBuffer {
            slots: store
                .params
                .iter()
                .map(|p| {
                    if p.sparse {
                        Slot::Sparse(Vec::new())
                    } else {
                        Slot::Dense(vec![0.0; p.value.len()])
                    }
                })
                .collect(),
        }
    }

    pub fn clear(&mut self) {
        for s in &mut self.slots {
            match s {
                Slot::Dense(g) => g.iter_mut().for_each(|v| *v = 0.0),
                Slot::Sparse(e) => e.clear(),
            }
        }
    }

    /// Dense view of a gradient slot (tests and small parameters).
    pub fn dense(&self, id: ParamId, len: usize) -> Vec<f64> {
        match &self.slots[id.0] {
            Slot::Dense(g) => g.clone(),
            Slot::Sparse(e) => {
                let mut out = vec![0.0; len];
                for &(i, v) in e {
                    out[i as usize] += v;
                }
                out
            }
        }
    }
}

impl GradSink for GradBuffer {
    #[inline]
    fn add(&mut self, id: ParamId, idx: usize, g: f64) {
        match &mut self.slots[id.0] {
            Slot::Dense(d) => d[idx] += g,
            Slot::Sparse(e) => e.push((idx as u32, g)),
        }
    }

    fn add_slice(&mut self, id: ParamId, offset: usize, g: &[f64]) {
        match &mut self.slots[id.0] {
            Slot::Dense(d) => d[offset..offset + g.len()].iter_mut().zip(g).for_each(|(a, b)| *a += b),
            Slot::Sparse(e) => e.extend(g.iter().enumerate().map(|(i, &v)| ((offset + i) as u32, v))),
        }
    }

    fn add_outer(&mut self, id: ParamId, rows: &[f64], cols: &[f64]) {
        match &mut self.slots[id.0] {
            Slot::Dense(d) => outer_into(d, rows, cols),
            Slot::Sparse(e) => {
                let n = cols.len();
                for (j, &r) in rows.iter().enumerate() {
                    if r != 0.0 {
                        e.extend(cols.iter().enumerate().map(|(k, &c)| ((j * n + k) as u32, r * c)));
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grads_resets_exactly() {
        let mut s = ParamStore::new();
        let a = s.register("a", vec![1.0; 4], 0.1);
        let b = s.register_sparse("b", vec![1.0; 4], 0.1);
        s.add(a, 2, 3.0);
        s.add(b, 1, -2.0);
        s.zero_grads();
        assert!(s.grad(a).iter().chain(s.grad(b)).all(|&g| g == 0.0));
    }

    #[test]
    fn buffer_merge_matches_direct_accumulation() {
        let mut s = ParamStore::new();
        let a = s.register("a", vec![0.0; 3], 0.1);
        let b = s.register_sparse("b", vec![0.0; 5], 0.1);
        let mut direct = s.clone();
        let mut buf = GradBuffer::for_store(&s);
        for (i, g) in [(0usize, 0.5), (2, -1.0), (0, 0.25)] {
            buf.add(a, i, g);
            direct.add(a, i, g);
            buf.add(b, i + 1, g);
            direct.add(b, i + 1, g);
        }
        s.accumulate(&buf);
        assert_eq!(s.grad(a), direct.grad(a));
        assert_eq!(s.grad(b), direct.grad(b));
    }

    #[test]
    fn sparse_adam_only_moves_touched_entries() {
        let mut s = ParamStore::new();
        let b = s.register_sparse("b", vec![1.0; 4], 0.1);
        s.add(b, 2, 1.0);
        s.adam_step(&Adam::default());
        let v = s.value(b);
        assert_eq!(v[0], 1.0);
        assert!((v[2] - 0.9).abs() < 1e-9);
    }

    #[test]
    fn snapshot_round_trip() {
        let mut s = ParamStore::new();
        let a = s.register("a", vec![1.0, 2.0], 0.1);
        s.add(a, 0, 1.0);
        s.adam_step(&Adam::default());
        let (h, arrays) = s.snapshot();
        let owned = arrays.iter().map(|a| a.to_vec()).collect();
        let r = ParamStore::restore(&h, owned).unwrap();
        assert_eq!(r.value(a), s.value(a));
        assert_eq!(r.step(), 1);
    }
}
