use crate::error::{Error, Result};
use crate::numkit::{Graph, Real, Var};

/// Symmetric InfoNCE on unit-norm rows `img`, `txt` (`N×d`) with the
/// similarity matrix scaled by `inv_temp` (a scalar node). Row `i` of each
/// side is a positive pair.
pub fn info_nce_graph<T: Real>(g: &mut Graph<T>, img: Var, txt: Var, inv_temp: Var) -> Result<Var> {
    let n = g.shape(img)[0];
    if n < 2 {
        return Err(Error::BatchSize(n));
    }
    let tt = g.transpose(txt)?;
    let sim = g.matmul(img, tt)?;
    let logits = g.mul_scalar_var(sim, inv_temp)?;
    let targets: Vec<usize> = (0..n).collect();
    let rows = g.softmax_xent(logits, &targets)?;
    let lt = g.transpose(logits)?;
    let cols = g.softmax_xent(lt, &targets)?;
    let both = g.add(rows, cols)?;
    Ok(g.scale(both, T::of_f64(0.5)))
}

/// Loss value for row-major embeddings (`n` rows each) at temperature `tau`.
pub fn info_nce(img: &[f64], txt: &[f64], n: usize, tau: f64) -> Result<f64> {
    if n < 2 {
        return Err(Error::BatchSize(n));
    }
    if img.len() != txt.len() || img.len() % n != 0 {
        return crate::error::dim_err("info_nce: embedding sets must both be n×d");
    }
    let mut g = Graph::<f64>::new();
    let d = img.len() / n;
    let a = g.constant_data([n, d], img.to_vec())?;
    let b = g.constant_data([n, d], txt.to_vec())?;
    let s = g.constant_data([1], vec![1.0 / tau])?;
    let l = info_nce_graph(&mut g, a, b, s)?;
    Ok(g.scalar(l))
}

/// Loss value from a precomputed `n×n` similarity matrix.
pub fn info_nce_from_similarity(sim: &[f64], n: usize, tau: f64) -> Result<f64> {
    if n < 2 {
        return Err(Error::BatchSize(n));
    }
    if sim.len() != n * n {
        return crate::error::dim_err("info_nce: similarity matrix must be n×n");
    }
    let mut g = Graph::<f64>::new();
    let s = g.constant_data([n, n], sim.to_vec())?;
    let logits = g.scale(s, 1.0 / tau);
    let targets: Vec<usize> = (0..n).collect();
    let rows = g.softmax_xent(logits, &targets)?;
    let lt = g.transpose(logits)?;
    let cols = g.softmax_xent(lt, &targets)?;
    Ok(0.5 * (g.scalar(rows) + g.scalar(cols)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Direct evaluation: mean of -log softmax over rows and over columns.
    fn reference(sim: &[f64], n: usize, tau: f64) -> f64 {
        let xent = |get: &dyn Fn(usize, usize) -> f64| {
            (0..n)
                .map(|i| {
                    let lse = (0..n).map(|j| (get(i, j) / tau).exp()).sum::<f64>().ln();
                    lse - get(i, i) / tau
                })
                .sum::<f64>()
                / n as f64
        };
        0.5 * (xent(&|i, j| sim[i * n + j]) + xent(&|i, j| sim[j * n + i]))
    }

    #[test]
    fn two_by_two_closed_form() {
        let sim = [1.0, 0.0, 0.5, 1.0];
        let want = reference(&sim, 2, 1.0);
        // ln(1+e^-1) and ln(1+e^-0.5), each appearing once per direction.
        let closed = 0.5 * ((1.0 + (-1.0f64).exp()).ln() + (1.0 + (-0.5f64).exp()).ln());
        assert!((want - closed).abs() < 1e-12);
        assert!((info_nce_from_similarity(&sim, 2, 1.0).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn uniform_similarity_gives_ln_n() {
        for n in [2, 5, 32] {
            let sim = vec![0.3; n * n];
            let l = info_nce_from_similarity(&sim, n, 0.07).unwrap();
            assert!((l - (n as f64).ln()).abs() < 1e-9);
        }
    }

    #[test]
    fn orthonormal_pairs_saturate() {
        let n = 4;
        let mut eye = vec![0.0; n * n];
        for i in 0..n {
            eye[i * n + i] = 1.0;
        }
        assert!(info_nce(&eye, &eye, n, 0.01).unwrap() < 1e-9);
    }

    #[test]
    fn batch_of_one_rejected() {
        assert!(matches!(
            info_nce(&[1.0], &[1.0], 1, 1.0),
            Err(Error::BatchSize(1))
        ));
    }

    fn unit_rows(raw: &[f64], n: usize) -> Vec<f64> {
        let d = raw.len() / n;
        let mut out = raw.to_vec();
        for r in out.chunks_mut(d) {
            let nrm = r.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-9);
            r.iter_mut().for_each(|v| *v /= nrm);
        }
        out
    }

    proptest! {
        #[test]
        fn permutation_invariant(raw in prop::collection::vec(-1.0f64..1.0, 2 * 6 * 4), seed in 0u64..1000) {
            use rand::seq::SliceRandom;
            let (n, d) = (6, 4);
            let a = unit_rows(&raw[..n * d], n);
            let b = unit_rows(&raw[n * d..], n);
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut crate::rng::seeded(seed));
            let pa: Vec<f64> = perm.iter().flat_map(|&i| a[i * d..(i + 1) * d].to_vec()).collect();
            let pb: Vec<f64> = perm.iter().flat_map(|&i| b[i * d..(i + 1) * d].to_vec()).collect();
            let l0 = info_nce(&a, &b, n, 0.1).unwrap();
            let l1 = info_nce(&pa, &pb, n, 0.1).unwrap();
            prop_assert!((l0 - l1).abs() < 1e-9);
        }

        #[test]
        fn orthogonal_invariant(raw in prop::collection::vec(-1.0f64..1.0, 2 * 5 * 3), angle in 0.0f64..6.28, axis in 0usize..3) {
            let (n, d) = (5, 3);
            let a = unit_rows(&raw[..n * d], n);
            let b = unit_rows(&raw[n * d..], n);
            let (c, s) = (angle.cos(), angle.sin());
            let (i, j) = ((axis + 1) % 3, (axis + 2) % 3);
            let rot = |v: &[f64]| -> Vec<f64> {
                let mut out = v.to_vec();
                for r in out.chunks_mut(d) {
                    let (x, y) = (r[i], r[j]);
                    r[i] = c * x - s * y;
                    r[j] = s * x + c * y;
                }
                out
            };
            let l0 = info_nce(&a, &b, n, 0.07).unwrap();
            let l1 = info_nce(&rot(&a), &rot(&b), n, 0.07).unwrap();
            prop_assert!((l0 - l1).abs() < 1e-5);
        }
    }
}
