//! Print the Gaussian view-direction weights of each texture channel as the
//! view cosine sweeps from grazing to frontal.
//!
//! `cargo run --release --example view_encoding -- [channels] [alpha]`

use surfbake::appearance::ViewEncoding;

fn main() -> surfbake::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let k: usize = args.first().and_then(|s| s.parse().ok()).unwrap_or(12);
    let alpha: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0.3);
    let enc = ViewEncoding::new(k, alpha)?;
    println!("K = {k}, alpha = {alpha}, peak weight {:.4}", enc.peak());
    print!("v_cos ");
    for c in 0..k {
        print!("  ch{c:<3}");
    }
    println!();
    for i in 0..=10 {
        let v = i as f64 / 10.0;
        print!("{v:5.2} ");
        for w in enc.weights(v) {
            print!(" {w:6.3}");
        }
        println!();
    }
    // Features are scaled, not mixed: a constant feature vector shows the weights directly.
    let f = vec![1.0; k];
    let e = enc.encode(&f, 0.5);
    let strongest = e.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i).unwrap_or(0);
    println!("at v_cos = 0.5 channel {strongest} dominates");
    Ok(())
}
