//! Compressed sensing: sample a sparse signal with half the measurements
//! classic sampling would need, then recover it with orthogonal matching
//! pursuit.

use fivegang::cs::{decode, encode, BasisKind, MeasurementMatrix, SparseBasis};
use fivegang::rng::stream_rng;
use rand::Rng;

fn main() {
    let (n, k, m) = (128usize, 5usize, 65usize);
    let basis = SparseBasis::new(n, BasisKind::Dct2);

    // Plant a k-sparse spectrum and synthesize the time-domain signal.
    let mut rng = stream_rng(11, "plant");
    let mut coeffs = vec![0.0; n];
    let mut placed = 0;
    while placed < k {
        let j = rng.random_range(0..n);
        if coeffs[j] == 0.0 {
            coeffs[j] = rng.random_range(1.0..2.0) * if rng.random() { 1.0 } else { -1.0 };
            placed += 1;
        }
    }
    let signal = basis.synthesize(&coeffs);
    println!("signal: n={n}, {k}-sparse in the DCT basis");

    let matrix = MeasurementMatrix::seeded(m, n, 99).unwrap();
    let codeword = encode(&signal, &matrix, BasisKind::Dct2).unwrap();
    println!(
        "encoded into m={m} measurements ({}% of full sampling), {} wire bytes",
        m * 100 / n,
        codeword.to_bytes().unwrap().len()
    );

    let recovered = decode(&codeword, k, 1e-9).unwrap();
    let err_num: f64 = recovered
        .iter()
        .zip(&signal)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let err_den: f64 = signal.iter().map(|x| x * x).sum::<f64>().sqrt();
    println!("relative L2 reconstruction error: {:.3e}", err_num / err_den);
    assert!(err_num / err_den < 1e-6);
}
