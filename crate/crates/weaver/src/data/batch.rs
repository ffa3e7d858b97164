//! Length-bucketed batching.
//!
//! Examples are sorted by context length, cut into consecutive
//! fixed-size buckets (so each batch pads to roughly its own length),
//! padded within the bucket, and the bucket *order* is shuffled fresh
//! for every epoch.

use super::embed::{EmbeddingTable, PAD_ID};
use super::Example;
use crate::rng::shuffle;
use crate::tensor::Tensor;
use rand_chacha::ChaCha8Rng;

/// One padded mini-batch over single-paragraph examples. Row `b` of each
/// field belongs to the same example; padding is always a suffix, with
/// the real lengths alongside.
#[derive(Clone, Debug)]
pub struct Batch {
    /// Padded context length — the bucket's sort key.
    pub bucket_key: usize,
    /// Indices into the source example slice.
    pub example_indices: Vec<usize>,
    /// [B][q_pad] embedding row ids, PAD_ID beyond q_lens[b].
    pub question_ids: Vec<Vec<usize>>,
    /// [B][c_pad] embedding row ids, PAD_ID beyond c_lens[b].
    pub context_ids: Vec<Vec<usize>>,
    /// [B] of [c_pad, width] feature matrices, zero rows beyond c_lens[b].
    pub features: Vec<Tensor<f32>>,
    pub q_lens: Vec<usize>,
    pub c_lens: Vec<usize>,
    /// Training gold span per example (start, end), token indices.
    pub golds: Vec<(usize, usize)>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.example_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.example_indices.is_empty()
    }
}

/// Bucket `examples` into batches of at most `batch_size`, shuffling the
/// batch order with `rng`. Call once per epoch for a fresh order.
pub fn make_batches(
    examples: &[Example],
    table: &EmbeddingTable,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Batch> {
    assert!(batch_size > 0, "batch_size must be positive");
    for ex in examples {
        assert_eq!(
            ex.paragraphs.len(),
            1,
            "bucketed batching expects single-paragraph examples (example {})",
            ex.id
        );
    }
    let mut order: Vec<usize> = (0..examples.len()).collect();
    // Stable sort on length keeps equal-length examples in input order.
    order.sort_by_key(|&i| examples[i].paragraphs[0].tokens.len());

    let mut batches = Vec::new();
    for chunk in order.chunks(batch_size) {
        let q_pad = chunk.iter().map(|&i| examples[i].question.len()).max().unwrap();
        let c_pad = chunk
            .iter()
            .map(|&i| examples[i].paragraphs[0].tokens.len())
            .max()
            .unwrap();
        let mut batch = Batch {
            bucket_key: c_pad,
            example_indices: Vec::with_capacity(chunk.len()),
            question_ids: Vec::with_capacity(chunk.len()),
            context_ids: Vec::with_capacity(chunk.len()),
            features: Vec::with_capacity(chunk.len()),
            q_lens: Vec::with_capacity(chunk.len()),
            c_lens: Vec::with_capacity(chunk.len()),
            golds: Vec::with_capacity(chunk.len()),
        };
        for &i in chunk {
            let ex = &examples[i];
            let para = &ex.paragraphs[0];
            let mut q_ids = table.ids(&ex.question);
            let mut c_ids = table.ids(&para.tokens);
            let (q_len, c_len) = (q_ids.len(), c_ids.len());
            q_ids.resize(q_pad, PAD_ID);
            c_ids.resize(c_pad, PAD_ID);
            let width = para.features.shape()[1];
            let mut feat = vec![0.0f32; c_pad * width];
            feat[..c_len * width].copy_from_slice(para.features.data());
            let gold = ex.training_gold();
            batch.example_indices.push(i);
            batch.question_ids.push(q_ids);
            batch.context_ids.push(c_ids);
            batch.features.push(Tensor::new(vec![c_pad, width], feat));
            batch.q_lens.push(q_len);
            batch.c_lens.push(c_len);
            batch.golds.push((gold.start, gold.end));
        }
        batches.push(batch);
    }
    shuffle(rng, &mut batches);
    batches
}
