use super::Model;
use crate::error::{Error, Result};
use crate::numerics::{Eval, Tensor};
use crate::perm::permutations;

/// Per-chunk result used for stitching.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkOutput {
    /// `C × t`.
    pub posteriors: Tensor,
    /// `C × D`, the attractors that produced `posteriors`.
    pub attractors: Tensor,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn permute_rows(t: &Tensor, p: &[usize]) -> Tensor {
    let rows: Vec<Vec<f64>> = p.iter().map(|&r| t.row(r).to_vec()).collect();
    Tensor::from_rows(&rows)
}

/// Concatenates chunk posteriors along time. Each chunk's speaker rows are
/// reordered so its attractors best match (summed cosine similarity) those of
/// the already aligned previous chunk.
pub fn stitch_chunks(chunks: &[ChunkOutput]) -> Result<Tensor> {
    let first = chunks
        .first()
        .ok_or_else(|| Error::Input("nothing to stitch".into()))?;
    let c = first.posteriors.rows();
    let perms = permutations(c);
    let mut prev = first.attractors.clone();
    let mut parts = vec![first.posteriors.clone()];
    for ch in &chunks[1..] {
        if ch.posteriors.rows() != c || ch.attractors.rows() != c {
            return Err(Error::dim(
                "stitch_chunks",
                format!("chunk has {} speakers, expected {c}", ch.posteriors.rows()),
            ));
        }
        let mut best = (f64::NEG_INFINITY, &perms[0]);
        for p in &perms {
            let score: f64 = (0..c).map(|k| cosine(prev.row(k), ch.attractors.row(p[k]))).sum();
            if score > best.0 {
                best = (score, p);
            }
        }
        prev = permute_rows(&ch.attractors, best.1);
        parts.push(permute_rows(&ch.posteriors, best.1));
    }
    Tensor::concat_cols(&parts.iter().collect::<Vec<_>>())
}

/// Runs the model over consecutive `chunk_len` windows of `features`
/// (`T × input_dim`) and stitches the posteriors into one `C × T` matrix.
pub fn chunk_and_stitch(model: &Model, features: &Tensor) -> Result<Tensor> {
    let t = features.rows();
    if t == 0 {
        return Err(Error::Input("empty feature sequence".into()));
    }
    let len = model.config.chunk_len;
    let mut chunks = Vec::with_capacity(t.div_ceil(len));
    let mut o = Eval;
    for start in (0..t).step_by(len) {
        let x = features.slice_rows(start, len.min(t - start))?;
        let out = model.forward(&mut o, &x, false)?;
        let attractors = out.attractors.vectors.slice_rows(0, model.config.n_speakers)?;
        chunks.push(ChunkOutput {
            posteriors: (*out.posteriors).clone(),
            attractors,
        });
    }
    stitch_chunks(&chunks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn chunk(post: &[Vec<f64>], att: &[Vec<f64>]) -> ChunkOutput {
        ChunkOutput {
            posteriors: Tensor::from_rows(post),
            attractors: Tensor::from_rows(att),
        }
    }

    #[test]
    fn swapped_attractors_are_swapped_back() {
        let a = chunk(&[vec![0.9, 0.8], vec![0.1, 0.2]], &[vec![1.0, 0.1], vec![0.0, 1.0]]);
        // same speakers, rows flipped by construction
        let b = chunk(&[vec![0.3, 0.4], vec![0.7, 0.6]], &[vec![0.1, 0.9], vec![0.9, 0.0]]);
        let y = stitch_chunks(&[a, b]).unwrap();
        assert_eq!(y.row(0), &[0.9, 0.8, 0.7, 0.6]);
        assert_eq!(y.row(1), &[0.1, 0.2, 0.3, 0.4]);
    }

    #[test]
    fn identical_chunks_keep_order() {
        let a = chunk(&[vec![0.9], vec![0.1]], &[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let y = stitch_chunks(&[a.clone(), a]).unwrap();
        assert_eq!(y.row(0), &[0.9, 0.9]);
        assert_eq!(y.row(1), &[0.1, 0.1]);
    }

    #[test]
    fn alignment_follows_the_previous_aligned_chunk() {
        let a = chunk(&[vec![1.0], vec![0.0]], &[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let b = chunk(&[vec![0.0], vec![1.0]], &[vec![0.0, 1.0], vec![1.0, 0.0]]);
        let c = chunk(&[vec![1.0], vec![0.0]], &[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let y = stitch_chunks(&[a, b, c]).unwrap();
        assert_eq!(y.row(0), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn short_input_is_a_single_forward() {
        let cfg = ModelConfig {
            n_layers: 1,
            d_model: 4,
            n_heads: 2,
            ff_dim: 8,
            input_dim: 3,
            n_speakers: 2,
            chunk_len: 10,
            positional_encoding: false,
        };
        let m = Model::new(cfg, 3).unwrap();
        let x = Tensor::new(vec![7, 3], (0..21).map(|k| (k as f64 * 0.37).sin()).collect()).unwrap();
        let y = chunk_and_stitch(&m, &x).unwrap();
        let direct = m.forward(&mut Eval, &x, false).unwrap().posteriors;
        assert_eq!(&y, &*direct);

        let long = Tensor::new(vec![25, 3], (0..75).map(|k| (k as f64 * 0.37).sin()).collect()).unwrap();
        assert_eq!(chunk_and_stitch(&m, &long).unwrap().shape(), &[2, 25]);
        assert!(chunk_and_stitch(&m, &Tensor::zeros(&[0, 3])).is_err());
    }
}
