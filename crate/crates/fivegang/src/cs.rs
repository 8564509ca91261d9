//! Compressed sensing: random ±1/√m measurement matrices and greedy sparse
//! recovery by orthogonal matching pursuit.
//!
//! The encoder is a plain matrix-vector product. The decoder works in the
//! composed dictionary (measurement matrix times sparsifying basis): it
//! repeatedly selects the column best correlated with the residual, refits a
//! least-squares estimate on the selected support, and stops when the
//! residual is small enough or the sparsity budget is spent.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

const CONDITION_LIMIT: f64 = 1e12;

#[derive(Debug, Error, PartialEq)]
pub enum CsError {
    #[error("dimension mismatch: signal length {got}, matrix expects {want}")]
    DimensionMismatch { want: usize, got: usize },
    #[error("measurement matrix must satisfy 1 <= m <= n, got {m}x{n}")]
    BadShape { m: usize, n: usize },
    #[error("sparsity budget {k} not in 1..={m}")]
    InvalidSparsity { k: usize, m: usize },
    #[error("selected support is numerically singular (condition estimate > 1e12)")]
    IllConditionedSupport,
    #[error("explicit matrices have no wire representation")]
    UnserializableMatrix,
    #[error("codeword wire data truncated or inconsistent")]
    MalformedWire,
}

/// Orthonormal sparsifying transform.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisKind {
    Identity,
    Dct2,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SparseBasis {
    pub n: usize,
    pub kind: BasisKind,
}

impl SparseBasis {
    pub fn new(n: usize, kind: BasisKind) -> Self {
        SparseBasis { n, kind }
    }

    /// Forward transform: signal -> coefficient vector.
    pub fn analyze(&self, signal: &[f64]) -> Vec<f64> {
        match self.kind {
            BasisKind::Identity => signal.to_vec(),
            BasisKind::Dct2 => {
                let n = self.n;
                let mut coeffs = vec![0.0; n];
                for (k, c) in coeffs.iter_mut().enumerate() {
                    let alpha = if k == 0 {
                        (1.0 / n as f64).sqrt()
                    } else {
                        (2.0 / n as f64).sqrt()
                    };
                    let mut acc = 0.0;
                    for (i, &x) in signal.iter().enumerate() {
                        acc += x * (PI * (2 * i + 1) as f64 * k as f64 / (2 * n) as f64).cos();
                    }
                    *c = alpha * acc;
                }
                coeffs
            }
        }
    }

    /// Inverse transform: coefficient vector -> signal. Transpose of
    /// `analyze` since the basis is orthonormal.
    pub fn synthesize(&self, coeffs: &[f64]) -> Vec<f64> {
        match self.kind {
            BasisKind::Identity => coeffs.to_vec(),
            BasisKind::Dct2 => {
                let n = self.n;
                let mut signal = vec![0.0; n];
                for (i, x) in signal.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for (k, &c) in coeffs.iter().enumerate() {
                        let alpha = if k == 0 {
                            (1.0 / n as f64).sqrt()
                        } else {
                            (2.0 / n as f64).sqrt()
                        };
                        acc += alpha * c * (PI * (2 * i + 1) as f64 * k as f64 / (2 * n) as f64).cos();
                    }
                    *x = acc;
                }
                signal
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatrixKind {
    /// ±1/√m entries regenerated from the seed.
    Seeded,
    Identity,
    /// Caller-supplied entries; test and calibration use only.
    Explicit,
}

/// An m x n measurement matrix, regenerable from `(m, n, seed)` for the
/// seeded ensemble so encode is reproducible across runs and machines.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementMatrix {
    pub m: usize,
    pub n: usize,
    pub seed: u64,
    pub kind: MatrixKind,
    entries: Vec<f64>, // row-major
}

impl MeasurementMatrix {
    pub fn seeded(m: usize, n: usize, seed: u64) -> Result<Self, CsError> {
        if m == 0 || m > n {
            return Err(CsError::BadShape { m, n });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (m as f64).sqrt();
        let entries = (0..m * n)
            .map(|_| if rng.random::<bool>() { scale } else { -scale })
            .collect();
        Ok(MeasurementMatrix {
            m,
            n,
            seed,
            kind: MatrixKind::Seeded,
            entries,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut entries = vec![0.0; n * n];
        for i in 0..n {
            entries[i * n + i] = 1.0;
        }
        MeasurementMatrix {
            m: n,
            n,
            seed: 0,
            kind: MatrixKind::Identity,
            entries,
        }
    }

    pub fn from_entries(m: usize, n: usize, entries: Vec<f64>) -> Result<Self, CsError> {
        if m == 0 || m > n || entries.len() != m * n {
            return Err(CsError::BadShape { m, n });
        }
        Ok(MeasurementMatrix {
            m,
            n,
            seed: 0,
            kind: MatrixKind::Explicit,
            entries,
        })
    }

    pub fn entry(&self, row: usize, col: usize) -> f64 {
        self.entries[row * self.n + col]
    }

    /// Measurements = matrix x signal.
    pub fn apply(&self, signal: &[f64]) -> Result<Vec<f64>, CsError> {
        if signal.len() != self.n {
            return Err(CsError::DimensionMismatch {
                want: self.n,
                got: signal.len(),
            });
        }
        let mut out = vec![0.0; self.m];
        for (row, y) in out.iter_mut().enumerate() {
            let base = row * self.n;
            *y = self.entries[base..base + self.n]
                .iter()
                .zip(signal)
                .map(|(a, x)| a * x)
                .sum();
        }
        Ok(out)
    }
}

/// The transmitted object: measurements plus enough metadata to rebuild the
/// decoding problem.
#[derive(Clone, Debug, PartialEq)]
pub struct CsCodeword {
    pub measurements: Vec<f64>,
    pub m: usize,
    pub n: usize,
    pub seed: u64,
    pub matrix_kind: MatrixKind,
    pub basis: BasisKind,
}

impl CsCodeword {
    /// Wire layout: m u16 BE, n u16 BE, seed u64 BE, basis byte, then m
    /// measurements as 64-bit little-endian floats. The basis byte packs the
    /// basis kind in the low nibble (0 identity, 1 dct2) and the matrix kind
    /// in the high nibble (0 seeded, 1 identity).
    pub fn to_bytes(&self) -> Result<Vec<u8>, CsError> {
        let matrix_nibble = match self.matrix_kind {
            MatrixKind::Seeded => 0u8,
            MatrixKind::Identity => 1,
            MatrixKind::Explicit => return Err(CsError::UnserializableMatrix),
        };
        let basis_nibble = match self.basis {
            BasisKind::Identity => 0u8,
            BasisKind::Dct2 => 1,
        };
        let mut out = Vec::with_capacity(13 + 8 * self.measurements.len());
        out.extend_from_slice(&(self.m as u16).to_be_bytes());
        out.extend_from_slice(&(self.n as u16).to_be_bytes());
        out.extend_from_slice(&self.seed.to_be_bytes());
        out.push(matrix_nibble << 4 | basis_nibble);
        for v in &self.measurements {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CsError> {
        if bytes.len() < 13 {
            return Err(CsError::MalformedWire);
        }
        let m = u16::from_be_bytes([bytes[0], bytes[1]]) as usize;
        let n = u16::from_be_bytes([bytes[2], bytes[3]]) as usize;
        let seed = u64::from_be_bytes(bytes[4..12].try_into().expect("8 bytes"));
        let basis_byte = bytes[12];
        let matrix_kind = match basis_byte >> 4 {
            0 => MatrixKind::Seeded,
            1 => MatrixKind::Identity,
            _ => return Err(CsError::MalformedWire),
        };
        let basis = match basis_byte & 0x0f {
            0 => BasisKind::Identity,
            1 => BasisKind::Dct2,
            _ => return Err(CsError::MalformedWire),
        };
        let body = &bytes[13..];
        if body.len() != m * 8 {
            return Err(CsError::MalformedWire);
        }
        let measurements = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(CsCodeword {
            measurements,
            m,
            n,
            seed,
            matrix_kind,
            basis,
        })
    }

    fn rebuild_matrix(&self) -> Result<MeasurementMatrix, CsError> {
        match self.matrix_kind {
            MatrixKind::Seeded => MeasurementMatrix::seeded(self.m, self.n, self.seed),
            MatrixKind::Identity => Ok(MeasurementMatrix::identity(self.n)),
            MatrixKind::Explicit => Err(CsError::UnserializableMatrix),
        }
    }
}

/// Sample the signal into a codeword.
pub fn encode(
    signal: &[f64],
    matrix: &MeasurementMatrix,
    basis: BasisKind,
) -> Result<CsCodeword, CsError> {
    let measurements = matrix.apply(signal)?;
    Ok(CsCodeword {
        measurements,
        m: matrix.m,
        n: matrix.n,
        seed: matrix.seed,
        matrix_kind: matrix.kind,
        basis,
    })
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Orthogonal matching pursuit against a caller-supplied matrix; the public
/// [`decode`] regenerates the matrix from the codeword's reference.
pub fn decode_with_matrix(
    cw: &CsCodeword,
    matrix: &MeasurementMatrix,
    sparsity_k: usize,
    residual_tol: f64,
) -> Result<Vec<f64>, CsError> {
    let (m, n) = (matrix.m, matrix.n);
    if sparsity_k == 0 || sparsity_k > m {
        return Err(CsError::InvalidSparsity { k: sparsity_k, m });
    }
    if cw.measurements.len() != m {
        return Err(CsError::DimensionMismatch {
            want: m,
            got: cw.measurements.len(),
        });
    }
    let basis = SparseBasis::new(n, cw.basis);

    // Composed dictionary D = Phi * Psi, column major.
    let mut dict: Vec<Vec<f64>> = Vec::with_capacity(n);
    match cw.basis {
        BasisKind::Identity => {
            for j in 0..n {
                dict.push((0..m).map(|r| matrix.entry(r, j)).collect());
            }
        }
        BasisKind::Dct2 => {
            let mut unit = vec![0.0; n];
            for j in 0..n {
                unit[j] = 1.0;
                let atom = basis.synthesize(&unit);
                unit[j] = 0.0;
                dict.push(matrix.apply(&atom)?);
            }
        }
    }

    let y = DVector::from_column_slice(&cw.measurements);
    let mut residual: Vec<f64> = cw.measurements.clone();
    let mut support: Vec<usize> = Vec::new();
    let mut solution = DVector::zeros(0);

    while support.len() < sparsity_k && norm2(&residual) > residual_tol {
        let mut best = None;
        for (j, col) in dict.iter().enumerate() {
            if support.contains(&j) {
                continue;
            }
            let corr: f64 = col.iter().zip(&residual).map(|(a, r)| a * r).sum();
            let corr = corr.abs();
            match best {
                Some((c, _)) if corr <= c => {}
                _ => best = Some((corr, j)),
            }
        }
        let Some((corr, j)) = best else { break };
        if corr == 0.0 {
            break;
        }
        support.push(j);

        let a = DMatrix::from_fn(m, support.len(), |r, c| dict[support[c]][r]);
        let svd = a.clone().svd(true, true);
        let sv = &svd.singular_values;
        let (smax, smin) = (sv.max(), sv.min());
        if smin <= 0.0 || smax / smin > CONDITION_LIMIT {
            return Err(CsError::IllConditionedSupport);
        }
        solution = svd.solve(&y, 0.0).map_err(|_| CsError::IllConditionedSupport)?;
        let fitted = a * &solution;
        for (r, (yv, fv)) in cw.measurements.iter().zip(fitted.iter()).enumerate() {
            residual[r] = yv - fv;
        }
    }

    let mut coeffs = vec![0.0; n];
    for (idx, &j) in support.iter().enumerate() {
        coeffs[j] = solution[idx];
    }
    Ok(basis.synthesize(&coeffs))
}

/// Recover the signal estimate from a codeword.
pub fn decode(cw: &CsCodeword, sparsity_k: usize, residual_tol: f64) -> Result<Vec<f64>, CsError> {
    let matrix = cw.rebuild_matrix()?;
    decode_with_matrix(cw, &matrix, sparsity_k, residual_tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    /// Plant a k-sparse coefficient vector and return (signal, coeffs).
    fn planted_signal(n: usize, k: usize, basis: BasisKind, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let mut rng = stream_rng(seed, "plant");
        let mut coeffs = vec![0.0; n];
        let mut placed = 0;
        while placed < k {
            let j = rng.random_range(0..n);
            if coeffs[j] == 0.0 {
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                coeffs[j] = sign * (1.0 + rng.random::<f64>());
                placed += 1;
            }
        }
        let signal = SparseBasis::new(n, basis).synthesize(&coeffs);
        (signal, coeffs)
    }

    fn rel_err(got: &[f64], want: &[f64]) -> f64 {
        let num: f64 = got
            .iter()
            .zip(want)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        num / norm2(want)
    }

    #[test]
    fn identity_matrix_passes_signal_through() {
        let signal: Vec<f64> = (0..16).map(|i| (i as f64).sin()).collect();
        let cw = encode(&signal, &MeasurementMatrix::identity(16), BasisKind::Identity).unwrap();
        assert_eq!(cw.measurements, signal);
    }

    #[test]
    fn zero_signal_gives_zero_measurements() {
        let mat = MeasurementMatrix::seeded(8, 32, 5).unwrap();
        let cw = encode(&vec![0.0; 32], &mat, BasisKind::Dct2).unwrap();
        assert!(cw.measurements.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn encode_matches_naive_multiply_oracle() {
        let mat = MeasurementMatrix::seeded(24, 64, 99).unwrap();
        let mut rng = stream_rng(1, "sig");
        let signal: Vec<f64> = (0..64).map(|_| rng.random::<f64>() - 0.5).collect();
        let cw = encode(&signal, &mat, BasisKind::Identity).unwrap();
        for r in 0..24 {
            let mut acc = 0.0;
            for (c, &x) in signal.iter().enumerate() {
                acc += mat.entry(r, c) * x;
            }
            let denom = acc.abs().max(1e-300);
            assert!(
                (acc - cw.measurements[r]).abs() / denom < 1e-12,
                "row {r}: {acc} vs {}",
                cw.measurements[r]
            );
        }
    }

    #[test]
    fn dimension_mismatch_detected() {
        let mat = MeasurementMatrix::seeded(4, 8, 0).unwrap();
        assert_eq!(
            encode(&[0.0; 7], &mat, BasisKind::Identity).unwrap_err(),
            CsError::DimensionMismatch { want: 8, got: 7 }
        );
    }

    #[test]
    fn matrix_regeneration_is_deterministic() {
        let a = MeasurementMatrix::seeded(16, 48, 1234).unwrap();
        let b = MeasurementMatrix::seeded(16, 48, 1234).unwrap();
        assert_eq!(a, b);
        let c = MeasurementMatrix::seeded(16, 48, 1235).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn dct_basis_is_orthonormal() {
        let n = 60;
        let basis = SparseBasis::new(n, BasisKind::Dct2);
        let mut rng = stream_rng(7, "orth");
        let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
        let back = basis.synthesize(&basis.analyze(&x));
        assert!(rel_err(&back, &x) < 1e-10);
        // Parseval as a second angle on orthonormality.
        let coeffs = basis.analyze(&x);
        assert!((norm2(&coeffs) - norm2(&x)).abs() < 1e-10);
    }

    #[test]
    fn encoder_is_linear() {
        let mat = MeasurementMatrix::seeded(16, 40, 3).unwrap();
        let mut rng = stream_rng(11, "lin");
        let x: Vec<f64> = (0..40).map(|_| rng.random::<f64>()).collect();
        let y: Vec<f64> = (0..40).map(|_| rng.random::<f64>()).collect();
        let (a, b) = (2.5, -1.25);
        let combo: Vec<f64> = x.iter().zip(&y).map(|(xv, yv)| a * xv + b * yv).collect();
        let ex = encode(&x, &mat, BasisKind::Identity).unwrap().measurements;
        let ey = encode(&y, &mat, BasisKind::Identity).unwrap().measurements;
        let ec = encode(&combo, &mat, BasisKind::Identity).unwrap().measurements;
        for i in 0..16 {
            let expect = a * ex[i] + b * ey[i];
            assert!((ec[i] - expect).abs() <= 1e-10 * expect.abs().max(1.0));
        }
    }

    #[test]
    fn one_sparse_dct_signal_recovers_exactly() {
        let n = 64;
        let (signal, _) = planted_signal(n, 1, BasisKind::Dct2, 21);
        let mat = MeasurementMatrix::seeded(16, n, 77).unwrap();
        let cw = encode(&signal, &mat, BasisKind::Dct2).unwrap();
        let got = decode(&cw, 1, 1e-9).unwrap();
        assert!(rel_err(&got, &signal) <= 1e-6);
    }

    #[test]
    fn zero_measurements_decode_to_zero_without_iterations() {
        let mat = MeasurementMatrix::seeded(8, 32, 5).unwrap();
        let cw = encode(&vec![0.0; 32], &mat, BasisKind::Dct2).unwrap();
        let got = decode(&cw, 4, 0.0).unwrap();
        assert!(got.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn planted_sparse_recovery_across_seeds() {
        // m = ceil(4 k ln(n/k)) with n=128, k=5 -> 66 measurements.
        let (n, k) = (128usize, 5usize);
        let m = (4.0 * k as f64 * (n as f64 / k as f64).ln()).ceil() as usize;
        let mut failures = 0;
        for seed in 0..25u64 {
            let (signal, _) = planted_signal(n, k, BasisKind::Dct2, 1000 + seed);
            let mat = MeasurementMatrix::seeded(m, n, 2000 + seed).unwrap();
            let cw = encode(&signal, &mat, BasisKind::Dct2).unwrap();
            let got = decode(&cw, k, 1e-9).unwrap();
            if rel_err(&got, &signal) > 1e-6 {
                failures += 1;
            }
        }
        assert!(failures == 0, "{failures}/25 recoveries missed");
    }

    #[test]
    fn near_parallel_support_flags_ill_conditioning() {
        let eps = 1e-14;
        let mat =
            MeasurementMatrix::from_entries(2, 2, vec![1.0, 1.0, 0.0, eps]).unwrap();
        let cw = CsCodeword {
            measurements: vec![2.0, eps],
            m: 2,
            n: 2,
            seed: 0,
            matrix_kind: MatrixKind::Explicit,
            basis: BasisKind::Identity,
        };
        assert_eq!(
            decode_with_matrix(&cw, &mat, 2, 0.0).unwrap_err(),
            CsError::IllConditionedSupport
        );
    }

    #[test]
    fn codeword_wire_round_trip() {
        let mat = MeasurementMatrix::seeded(6, 20, 31).unwrap();
        let mut rng = stream_rng(17, "wire");
        let signal: Vec<f64> = (0..20).map(|_| rng.random::<f64>()).collect();
        let cw = encode(&signal, &mat, BasisKind::Dct2).unwrap();
        let bytes = cw.to_bytes().unwrap();
        assert_eq!(bytes.len(), 13 + 6 * 8);
        assert_eq!(CsCodeword::from_bytes(&bytes).unwrap(), cw);

        let id_cw = encode(
            &signal,
            &MeasurementMatrix::identity(20),
            BasisKind::Identity,
        )
        .unwrap();
        let bytes = id_cw.to_bytes().unwrap();
        assert_eq!(CsCodeword::from_bytes(&bytes).unwrap(), id_cw);
        assert!(CsCodeword::from_bytes(&bytes[..10]).is_err());
    }

    #[test]
    fn invalid_sparsity_rejected() {
        let mat = MeasurementMatrix::seeded(8, 32, 5).unwrap();
        let cw = encode(&vec![0.5; 32], &mat, BasisKind::Dct2).unwrap();
        assert!(matches!(
            decode(&cw, 0, 0.0),
            Err(CsError::InvalidSparsity { .. })
        ));
        assert!(matches!(
            decode(&cw, 9, 0.0),
            Err(CsError::InvalidSparsity { .. })
        ));
    }
}
