//! Token embedding lookup with sparse gradient accumulation.

use rand::Rng;

use crate::layers::{init_uniform, Param};

#[derive(Debug, Clone)]
pub struct Embedding {
    /// Lookup table, `(vocab, dim)`.
    pub table: Param,
}

/// Sparse gradient: `(token id, gradient row)` pairs in lookup order.
pub type EmbeddingGrads = Vec<(usize, Vec<f64>)>;

impl Embedding {
    pub fn new<R: Rng>(vocab: usize, dim: usize, rng: &mut R) -> Self {
        Self {
            table: Param::new(init_uniform(&[vocab, dim], dim, rng)),
        }
    }

    pub fn vocab(&self) -> usize {
        self.table.value.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.table.value.shape()[1]
    }

    /// Looks up each token's row; ids out of range wrap by modulo so hash
    /// buckets can never escape the table.
    pub fn forward(&self, tokens: &[u32]) -> Vec<Vec<f64>> {
        tokens
            .iter()
            .map(|&t| self.table.value.row(t as usize % self.vocab()).to_vec())
            .collect()
    }

    pub fn backward(&self, tokens: &[u32], upstream: &[Vec<f64>]) -> EmbeddingGrads {
        tokens
            .iter()
            .zip(upstream)
            .map(|(&t, u)| (t as usize % self.vocab(), u.clone()))
            .collect()
    }

    pub fn accumulate(&mut self, grads: &EmbeddingGrads) {
        let dim = self.dim();
        for (row, g) in grads {
            let base = row * dim;
            for (k, gv) in g.iter().enumerate() {
                self.table.grad.data_mut()[base + k] += gv;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lookup_and_sparse_gradients_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut emb = Embedding::new(8, 3, &mut rng);
        let tokens = [2u32, 5, 2];
        let rows = emb.forward(&tokens);
        assert_eq!(rows[0], emb.table.value.row(2).to_vec());

        let upstream = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.5, 0.0, 0.0]];
        let grads = emb.backward(&tokens, &upstream);
        emb.accumulate(&grads);
        // token 2 appears twice: gradients add.
        assert_eq!(emb.table.grad.row(2), &[1.5, 0.0, 0.0]);
        assert_eq!(emb.table.grad.row(5), &[0.0, 1.0, 0.0]);
    }
}
