//! Central finite-difference check of a small MLP and of the view encoding.
//!
//! `cargo run --release --example gradient_check`

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use surfbake::appearance::ViewEncoding;
use surfbake::diffmath::gradcheck::{check, central_difference, compare, DEFAULT_EPS, DEFAULT_FLOOR};
use surfbake::diffmath::{Activation, GradBuffer, Mlp, MlpSpec, MlpTrace, ParamStore};

fn main() -> surfbake::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let spec = MlpSpec::uniform(&[12, 32, 32, 3], Activation::Relu, Activation::Sigmoid)?;
    let mut store = ParamStore::new();
    let mlp = Mlp::new(spec, &mut store, "shader", 0.0, &mut rng)?;
    let x: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let up = [0.3, -0.8, 0.5];
    let objective = |s: &ParamStore, x: &[f64]| -> f64 {
        mlp.forward_vec(s, x).unwrap().iter().zip(up).map(|(y, u)| y * u).sum()
    };

    let mut trace = MlpTrace::new();
    mlp.forward(&store, &x, &mut trace)?;
    let mut buf = GradBuffer::for_store(&store);
    let mut dx = vec![0.0; 12];
    mlp.backward(&store, &mut trace, &up, &mut buf, Some(&mut dx))?;

    let input = check(|xs| objective(&store, xs), &x, &dx);
    println!("input gradient: max rel error {:.2e} over {} values", input.max_rel, input.checked);

    for (l, &id) in mlp.weights.iter().enumerate() {
        let w = store.value(id).to_vec();
        let numeric = central_difference(
            |ws| {
                let mut s = store.clone();
                s.value_mut(id).copy_from_slice(ws);
                objective(&s, &x)
            },
            &w,
            DEFAULT_EPS,
        );
        let r = compare(&buf.dense(id, w.len()), &numeric, DEFAULT_FLOOR);
        println!("layer {l} weights: max rel error {:.2e} over {} values", r.max_rel, r.checked);
    }

    let enc = ViewEncoding::new(12, 0.3)?;
    let f: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let v = 0.42;
    let mut df = vec![0.0; 12];
    let dv = enc.backward(&f, v, &[1.0; 12], &mut df);
    let r = check(|p| enc.encode(&f, p[0]).iter().sum(), &[v], &[dv]);
    println!("encoding d/dv_cos: analytic {dv:.6}, max rel error {:.2e}", r.max_rel);
    Ok(())
}
