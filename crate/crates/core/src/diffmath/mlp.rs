//! Small fully connected networks with explicit forward traces and backward passes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{GradSink, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::math::sigmoid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    None,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
            Activation::None => x,
        }
    }

    /// Derivative expressed through the activation output `y`.
    #[inline]
    fn deriv_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::None => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    /// `[input, hidden..., output]`.
    pub widths: Vec<usize>,
    /// One per affine layer.
    pub activations: Vec<Activation>,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, activations: Vec<Activation>) -> Result<Self> {
        let s = MlpSpec { widths, activations };
        s.validate()?;
        Ok(s)
    }

    /// Hidden layers share `hidden_act`; the last layer uses `out_act`.
    pub fn uniform(widths: &[usize], hidden_act: Activation, out_act: Activation) -> Result<Self> {
        let n = widths.len().saturating_sub(1);
        let mut acts = vec![hidden_act; n];
        if let Some(last) = acts.last_mut() {
            *last = out_act;
        }
        MlpSpec::new(widths.to_vec(), acts)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(Error::validation("an MLP needs at least one layer"));
        }
        if self.widths.iter().any(|&w| w == 0) {
            return Err(Error::validation("MLP widths must be at least 1"));
        }
        if self.activations.len() != self.widths.len() - 1 {
            return Err(Error::validation(format!(
                "{} activations given for {} layers",
                self.activations.len(),
                self.widths.len() - 1
            )));
        }
        Ok(())
    }

    pub fn layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

/// MLP whose weights live in a [`ParamStore`]. Weights are row-major `[out][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub weights: Vec<ParamId>,
    pub biases: Vec<ParamId>,
}

/// Per-layer outputs of one forward pass, reusable across calls.
#[derive(Debug, Clone, Default)]
pub struct MlpTrace {
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    next: Vec<f64>,
    valid: bool,
}

impl MlpTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn output(&self) -> &[f64] {
        self.acts.last().map(|v| v.as_slice()).unwrap_or(&[])
    }

    /// Output of affine layer `l` after its activation (`l = 0` is the input).
    pub fn layer(&self, l: usize) -> &[f64] {
        &self.acts[l]
    }

    pub fn invalidate(&mut self) {
        self.valid = false;
    }
}

impl Mlp {
    /// Xavier-uniform weights in ±sqrt(6/(fan_in+fan_out)), zero biases.
    pub fn new(spec: MlpSpec, store: &mut ParamStore, name: &str, lr: f64, rng: &mut impl Rng) -> Result<Self> {
        spec.validate()?;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (l, w) in spec.widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let vals = (0..fan_in * fan_out).map(|_| rng.gen_range(-bound..=bound)).collect();
            weights.push(store.register(&format!("{name}.w{l}"), vals, lr));
            biases.push(store.register(&format!("{name}.b{l}"), vec![0.0; fan_out], lr));
        }
        Ok(Mlp { spec, weights, biases })
    }

    /// Reattach to existing parameters by name (checkpoint restore).
    pub fn attach(spec: MlpSpec, store: &ParamStore, name: &str) -> Result<Self> {
        spec.validate()?;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (l, w) in spec.widths.windows(2).enumerate() {
            let find = |n: String, len: usize| -> Result<ParamId> {
                let id = store
                    .id(&n)
                    .ok_or_else(|| Error::format("parameter archive", format!("missing parameter {n}")))?;
                if store.value(id).len() != len {
                    return Err(Error::format("parameter archive", format!("parameter {n} has wrong size")));
                }
                Ok(id)
            };
            weights.push(find(format!("{name}.w{l}"), w[0] * w[1])?);
            biases.push(find(format!("{name}.b{l}"), w[1])?);
        }
        Ok(Mlp { spec, weights, biases })
    }

    pub fn forward(&self, store: &ParamStore, x: &[f64], trace: &mut MlpTrace) -> Result<()> {
        if x.len() != self.spec.input_width() {
            return Err(Error::validation(format!(
                "MLP expects {} inputs, got {}",
                self.spec.input_width(),
                x.len()
            )));
        }
        let n = self.spec.widths.len();
        trace.acts.resize_with(n, Vec::new);
        trace.acts[0].clear();
        trace.acts[0].extend_from_slice(x);
        for l in 0..self.spec.layers() {
            let (nin, nout) = (self.spec.widths[l], self.spec.widths[l + 1]);
            let w = store.value(self.weights[l]);
            let b = store.value(self.biases[l]);
            if w.len() != nin * nout || b.len() != nout {
                return Err(Error::validation(format!("layer {l} parameters do not match the MLP shape")));
            }
            let act = self.spec.activations[l];
            let (prev, rest) = trace.acts.split_at_mut(l + 1);
            let input = &prev[l];
            let out = &mut rest[0];
            out.clear();
            for j in 0..nout {
                let row = &w[j * nin..(j + 1) * nin];
                let s: f64 = row.iter().zip(input.iter()).map(|(a, b)| a * b).sum();
                out.push(act.apply(s + b[j]));
            }
        }
        trace.valid = true;
        Ok(())
    }

    pub fn forward_vec(&self, store: &ParamStore, x: &[f64]) -> Result<Vec<f64>> {
        let mut t = MlpTrace::new();
        self.forward(store, x, &mut t)?;
        Ok(t.output().to_vec())
    }

    /// Reverse pass: accumulates parameter gradients into `sink`, writes
    /// `∂L/∂x` into `dx` when given.
    pub fn backward(
        &self,
        store: &ParamStore,
        trace: &mut MlpTrace,
        upstream: &[f64],
        sink: &mut impl GradSink,
        dx: Option<&mut [f64]>,
    ) -> Result<()> {
        if !trace.valid || trace.acts.len() != self.spec.widths.len() || trace.acts[0].len() != self.spec.input_width()
        {
            return Err(Error::Usage("MLP backward called without a matching forward pass".into()));
        }
        if upstream.len() != self.spec.output_width() {
            return Err(Error::validation("upstream gradient has the wrong width"));
        }
        let MlpTrace { acts, delta, next, .. } = trace;
        delta.clear();
        let last = self.spec.layers() - 1;
        let act = self.spec.activations[last];
        delta.extend(upstream.iter().zip(&acts[last + 1]).map(|(g, &y)| g * act.deriv_from_output(y)));
        for l in (0..self.spec.layers()).rev() {
            let (nin, nout) = (self.spec.widths[l], self.spec.widths[l + 1]);
            let w = store.value(self.weights[l]);
            let input = &acts[l];
            sink.add_outer(self.weights[l], delta, input);
            sink.add_slice(self.biases[l], 0, delta);
            next.clear();
            next.resize(nin, 0.0);
            for j in 0..nout {
                let d = delta[j];
                if d != 0.0 {
                    let row = &w[j * nin..(j + 1) * nin];
                    for k in 0..nin {
                        next[k] += row[k] * d;
                    }
                }
            }
            if l > 0 {
                let act = self.spec.activations[l - 1];
                for k in 0..nin {
                    next[k] *= act.deriv_from_output(input[k]);
                }
            }
            std::mem::swap(delta, next);
        }
        if let Some(dx) = dx {
            dx.copy_from_slice(delta);
        }
        Ok(())
    }

    fn check_piecewise_linear(&self, trace: &MlpTrace) -> Result<()> {
        if !trace.valid || trace.acts.len() != self.spec.widths.len() {
            return Err(Error::Usage("input-gradient query without a matching forward pass".into()));
        }
        let n = self.spec.layers();
        let ok = self.spec.activations[..n - 1].iter().all(|a| *a == Activation::Relu)
            && self.spec.activations[n - 1] == Activation::None;
        if !ok {
            return Err(Error::Usage(
                "input gradients are only supported for relu hidden layers with a linear output".into(),
            ));
        }
        Ok(())
    }

    /// `∂y_o/∂x` at the traced input.
    pub fn input_gradient(&self, store: &ParamStore, trace: &MlpTrace, o: usize, out: &mut [f64]) -> Result<()> {
        self.check_piecewise_linear(trace)?;
        let n = self.spec.layers();
        let mut v = vec![0.0; self.spec.output_width()];
        v[o] = 1.0;
        for l in (0..n).rev() {
            let (nin, nout) = (self.spec.widths[l], self.spec.widths[l + 1]);
            let w = store.value(self.weights[l]);
            let mut nv = vec![0.0; nin];
            for j in 0..nout {
                if v[j] != 0.0 {
                    let row = &w[j * nin..(j + 1) * nin];
                    for k in 0..nin {
                        nv[k] += row[k] * v[j];
                    }
                }
            }
            if l > 0 {
                for k in 0..nin {
                    if trace.acts[l][k] <= 0.0 {
                        nv[k] = 0.0;
                    }
                }
            }
            v = nv;
        }
        out.copy_from_slice(&v);
        Ok(())
    }

    /// Weight gradients of `L = gᵀ ∂y_o/∂x` (the directional derivative of
    /// output `o` along `g`). Relu masks are held fixed, so biases and inputs
    /// receive nothing.
    pub fn input_gradient_backward(
        &self,
        store: &ParamStore,
        trace: &MlpTrace,
        o: usize,
        g: &[f64],
        sink: &mut impl GradSink,
    ) -> Result<()> {
        self.check_piecewise_linear(trace)?;
        let n = self.spec.layers();
        // Forward tangent: s_0 = g, s_l = D_l W_l s_{l-1}.
        let mut s: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
        s.push(g.to_vec());
        for l in 0..n {
            let (nin, nout) = (self.spec.widths[l], self.spec.widths[l + 1]);
            let w = store.value(self.weights[l]);
            let prev = &s[l];
            let mut cur = vec![0.0; nout];
            for j in 0..nout {
                if l + 1 < n && trace.acts[l + 1][j] <= 0.0 {
                    continue;
                }
                let row = &w[j * nin..(j + 1) * nin];
                cur[j] = row.iter().zip(prev).map(|(a, b)| a * b).sum();
            }
            s.push(cur);
        }
        // Reverse through the linear tangent chain.
        let mut u = vec![0.0; self.spec.output_width()];
        u[o] = 1.0;
        for l in (0..n).rev() {
            let (nin, nout) = (self.spec.widths[l], self.spec.widths[l + 1]);
            if l + 1 < n {
                for j in 0..nout {
                    if trace.acts[l + 1][j] <= 0.0 {
                        u[j] = 0.0;
                    }
                }
            }
            sink.add_outer(self.weights[l], &u, &s[l]);
            if l > 0 {
                let w = store.value(self.weights[l]);
                let mut nu = vec![0.0; nin];
                for j in 0..nout {
                    if u[j] != 0.0 {
                        let row = &w[j * nin..(j + 1) * nin];
                        for k in 0..nin {
                            nu[k] += row[k] * u[j];
                        }
                    }
                }
                u = nu;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffmath::GradBuffer;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net(widths: &[usize], hidden: Activation, out: Activation, seed: u64) -> (Mlp, ParamStore) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = MlpSpec::uniform(widths, hidden, out).unwrap();
        let mlp = Mlp::new(spec, &mut store, "n", 1e-3, &mut rng).unwrap();
        // Non-zero biases so every path is exercised.
        for &b in &mlp.biases {
            for v in store.value_mut(b) {
                *v = rng.gen_range(-0.3..0.3);
            }
        }
        (mlp, store)
    }

    #[test]
    fn identity_layer() {
        let mut store = ParamStore::new();
        let w = store.register("w0", vec![1.0, 0.0, 0.0, 1.0], 0.0);
        let b = store.register("b0", vec![0.0, 0.0], 0.0);
        let mlp = Mlp {
            spec: MlpSpec::new(vec![2, 2], vec![Activation::None]).unwrap(),
            weights: vec![w],
            biases: vec![b],
        };
        assert_eq!(mlp.forward_vec(&store, &[0.3, -2.0]).unwrap(), vec![0.3, -2.0]);
    }

    #[test]
    fn shape_mismatch_and_missing_forward() {
        let (mlp, store) = net(&[3, 4, 2], Activation::Relu, Activation::None, 1);
        assert!(matches!(mlp.forward_vec(&store, &[1.0]), Err(Error::Validation(_))));
        let mut buf = GradBuffer::for_store(&store);
        let mut t = MlpTrace::new();
        let r = mlp.backward(&store, &mut t, &[1.0, 1.0], &mut buf, None);
        assert!(matches!(r, Err(Error::Usage(_))));
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let (mlp, store) = net(&[5, 16, 16, 3], Activation::Relu, Activation::None, 7);
        let x = [0.2, -0.4, 0.9, 0.1, -0.7];
        let mut t = MlpTrace::new();
        mlp.forward(&store, &x, &mut t).unwrap();
        let mut a = [0.0; 5];
        mlp.input_gradient(&store, &t, 1, &mut a).unwrap();
        for k in 0..5 {
            let mut xp = x;
            let mut xm = x;
            xp[k] += 1e-6;
            xm[k] -= 1e-6;
            let fd = (mlp.forward_vec(&store, &xp).unwrap()[1] - mlp.forward_vec(&store, &xm).unwrap()[1]) / 2e-6;
            assert!((fd - a[k]).abs() < 1e-7, "{fd} vs {}", a[k]);
        }
    }

    #[test]
    fn input_gradient_backward_matches_finite_differences() {
        let (mlp, mut store) = net(&[4, 8, 8, 2], Activation::Relu, Activation::None, 3);
        let x = [0.5, -0.2, 0.3, 0.8];
        let g = [0.7, -1.1, 0.4, 0.2];
        let objective = |store: &ParamStore| {
            let mut t = MlpTrace::new();
            mlp.forward(store, &x, &mut t).unwrap();
            let mut a = [0.0; 4];
            mlp.input_gradient(store, &t, 0, &mut a).unwrap();
            a.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>()
        };
        let mut t = MlpTrace::new();
        mlp.forward(&store, &x, &mut t).unwrap();
        let mut buf = GradBuffer::for_store(&store);
        mlp.input_gradient_backward(&store, &t, 0, &g, &mut buf).unwrap();
        for &id in &mlp.weights {
            let n = store.value(id).len();
            let analytic = buf.dense(id, n);
            for i in 0..n {
                let orig = store.value(id)[i];
                store.value_mut(id)[i] = orig + 1e-5;
                let fp = objective(&store);
                store.value_mut(id)[i] = orig - 1e-5;
                let fm = objective(&store);
                store.value_mut(id)[i] = orig;
                let fd = (fp - fm) / 2e-5;
                assert!((fd - analytic[i]).abs() <= 1e-6 * (1.0 + fd.abs()), "{fd} vs {}", analytic[i]);
            }
        }
    }
}
