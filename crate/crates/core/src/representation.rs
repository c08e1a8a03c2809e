//! Span and span-pair representations.
//!
//! A span's representation is `x = [v ; w_width ; cls]` where `v` max-pools
//! the subtoken vectors covered by the span's words, `w_width` is a learned
//! width embedding and `cls` is the encoder's sentence vector. The prefix
//! `c = [v ; w_width]` is what relation inputs reuse.
//!
//! A relation input for an ordered pair is
//! `r = [c(head) ; ctx ; c(tail) ; p(head) ; p(tail)]` with `ctx` max-pooled
//! over the words strictly between the two spans (zeros if there are none)
//! and `p(·)` the entity classifier's scores for each argument.

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderOutput, SubwordAlignment};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::spanspace::Span;

/// Row `w` embeds span width `w`, for `0 ≤ w ≤ L`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WidthEmbeddingTable {
    pub table: Matrix,
}

impl WidthEmbeddingTable {
    pub fn new<R: Rng + ?Sized>(max_width: usize, dim: usize, std: f64, rng: &mut R) -> Self {
        Self {
            table: Matrix::random_normal(max_width + 1, dim, std, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            table: self.table.zeros_like(),
        }
    }

    pub fn max_width(&self) -> usize {
        self.table.rows() - 1
    }

    pub fn dim(&self) -> usize {
        self.table.cols()
    }

    pub fn lookup(&self, width: usize) -> Result<&[f64]> {
        if width > self.max_width() {
            return Err(Error::Argument(format!(
                "span width {width} exceeds the maximum {}",
                self.max_width()
            )));
        }
        Ok(self.table.row(width))
    }
}

/// An elementwise max over a set of subtoken rows, remembering which row won
/// each coordinate so gradients can be routed back.
#[derive(Debug, Clone, PartialEq)]
pub struct Pooled {
    pub values: Vec<f64>,
    /// Winning subtoken row per coordinate; empty for the all-zeros vector.
    pub argmax: Vec<usize>,
}

impl Pooled {
    pub fn zeros(dim: usize) -> Self {
        Self {
            values: vec![0.0; dim],
            argmax: Vec::new(),
        }
    }

    /// Ties go to the lowest row.
    pub fn max_over(vectors: &Matrix, rows: impl IntoIterator<Item = usize>) -> Self {
        let mut rows = rows.into_iter();
        let first = rows.next().expect("pooling over an empty row set");
        let mut values = vectors.row(first).to_vec();
        let mut argmax = vec![first; values.len()];
        for r in rows {
            for (k, &v) in vectors.row(r).iter().enumerate() {
                if v > values[k] {
                    values[k] = v;
                    argmax[k] = r;
                }
            }
        }
        Self { values, argmax }
    }

    /// Adds `grad` into the winning rows of `target`.
    pub fn scatter(&self, grad: &[f64], target: &mut Matrix) {
        for (k, &row) in self.argmax.iter().enumerate() {
            let v = target.get(row, k);
            target.set(row, k, v + grad[k]);
        }
    }
}

/// Max-pool over every subtoken covered by the span's words.
pub fn span_vector(span: Span, enc: &EncoderOutput, align: &SubwordAlignment) -> Pooled {
    Pooled::max_over(&enc.token_vectors, align.subtokens(span))
}

/// Max-pool over the words strictly between two spans, or zeros when the
/// spans are adjacent or overlap.
pub fn context_vector(head: Span, tail: Span, enc: &EncoderOutput, align: &SubwordAlignment) -> Pooled {
    match head.gap(&tail) {
        Some(between) => span_vector(between, enc, align),
        None => Pooled::zeros(enc.dim()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpanRepr {
    pub span: Span,
    /// `[v ; width embedding ; sentence vector]`
    pub x: Vec<f64>,
    pub pooled: Pooled,
    d1: usize,
    d2: usize,
}

impl SpanRepr {
    pub fn v(&self) -> &[f64] {
        &self.x[..self.d1]
    }

    pub fn c(&self) -> &[f64] {
        &self.x[..self.d1 + self.d2]
    }

    pub fn width_index(&self) -> usize {
        self.span.width()
    }

    pub fn layout(&self) -> SpanLayout {
        SpanLayout {
            d1: self.d1,
            d2: self.d2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpanLayout {
    pub d1: usize,
    pub d2: usize,
}

impl SpanLayout {
    pub fn pooled(&self) -> Range<usize> {
        0..self.d1
    }

    pub fn width(&self) -> Range<usize> {
        self.d1..self.d1 + self.d2
    }

    pub fn sentence(&self) -> Range<usize> {
        self.d1 + self.d2..self.len()
    }

    pub fn c_len(&self) -> usize {
        self.d1 + self.d2
    }

    pub fn len(&self) -> usize {
        2 * self.d1 + self.d2
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn span_repr(
    span: Span,
    enc: &EncoderOutput,
    align: &SubwordAlignment,
    widths: &WidthEmbeddingTable,
) -> Result<SpanRepr> {
    let width = widths.lookup(span.width())?;
    let pooled = span_vector(span, enc, align);
    let mut x = Vec::with_capacity(2 * enc.dim() + widths.dim());
    x.extend_from_slice(&pooled.values);
    x.extend_from_slice(width);
    x.extend_from_slice(&enc.sentence_vector);
    Ok(SpanRepr {
        span,
        x,
        pooled,
        d1: enc.dim(),
        d2: widths.dim(),
    })
}

/// Offsets of the blocks in a relation input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RelationLayout {
    pub d1: usize,
    pub d2: usize,
    pub d3: usize,
}

impl RelationLayout {
    pub fn head_c(&self) -> Range<usize> {
        0..self.d1 + self.d2
    }

    pub fn context(&self) -> Range<usize> {
        let s = self.d1 + self.d2;
        s..s + self.d1
    }

    pub fn tail_c(&self) -> Range<usize> {
        let s = 2 * self.d1 + self.d2;
        s..s + self.d1 + self.d2
    }

    pub fn head_logits(&self) -> Range<usize> {
        let s = 3 * self.d1 + 2 * self.d2;
        s..s + self.d3
    }

    pub fn tail_logits(&self) -> Range<usize> {
        let s = 3 * self.d1 + 2 * self.d2 + self.d3;
        s..s + self.d3
    }

    /// `3·d1 + 2·d2 + 2·d3`
    pub fn len(&self) -> usize {
        3 * self.d1 + 2 * self.d2 + 2 * self.d3
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn relation_input(
    head: &SpanRepr,
    tail: &SpanRepr,
    ctx: &[f64],
    head_logits: &[f64],
    tail_logits: &[f64],
) -> Result<Vec<f64>> {
    if head.layout() != tail.layout() {
        return Err(Error::Argument("head and tail spans have different layouts".into()));
    }
    if ctx.len() != head.d1 {
        return Err(Error::Argument(format!(
            "context vector has length {}, expected {}",
            ctx.len(),
            head.d1
        )));
    }
    if head_logits.len() != tail_logits.len() {
        return Err(Error::Argument(format!(
            "argument logits have lengths {} and {}",
            head_logits.len(),
            tail_logits.len()
        )));
    }
    let layout = RelationLayout {
        d1: head.d1,
        d2: head.d2,
        d3: head_logits.len(),
    };
    let mut r = Vec::with_capacity(layout.len());
    r.extend_from_slice(head.c());
    r.extend_from_slice(ctx);
    r.extend_from_slice(tail.c());
    r.extend_from_slice(head_logits);
    r.extend_from_slice(tail_logits);
    debug_assert_eq!(r.len(), layout.len());
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn output(rows: &[Vec<f64>], cls: Vec<f64>) -> EncoderOutput {
        EncoderOutput {
            token_vectors: Matrix::from_rows(rows),
            sentence_vector: cls,
        }
    }

    #[test]
    fn single_subtoken_span_is_its_vector() {
        let enc = output(&[vec![1.0, -2.0], vec![0.0, 5.0]], vec![0.0, 0.0]);
        let align = SubwordAlignment::identity(2);
        assert_eq!(span_vector(Span::new(1, 1), &enc, &align).values, vec![0.0, 5.0]);
        assert_eq!(span_vector(Span::new(0, 1), &enc, &align).values, vec![1.0, 5.0]);
    }

    #[test]
    fn word_pooling_covers_all_its_subtokens() {
        // word 0 -> subtokens {0}, word 1 -> {1, 2}
        let rows = vec![vec![9.0, 9.0, 9.0], vec![1.0, 7.0, -3.0], vec![4.0, 2.0, -1.0]];
        let enc = output(&rows, vec![0.0; 3]);
        let align = SubwordAlignment::new(vec![(0, 0), (1, 2)], 3).unwrap();
        let pooled = span_vector(Span::new(1, 1), &enc, &align);
        let hand: Vec<f64> = (0..3).map(|k| rows[1][k].max(rows[2][k])).collect();
        assert_eq!(pooled.values, hand);
        assert_eq!(pooled.argmax, vec![2, 1, 2]);
    }

    #[test]
    fn span_repr_dimensions_and_width_sharing() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let rows: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64; 8]).collect();
        let enc = output(&rows, vec![0.5; 8]);
        let align = SubwordAlignment::identity(6);
        let widths = WidthEmbeddingTable::new(3, 4, 1.0, &mut rng);
        let a = span_repr(Span::new(0, 1), &enc, &align, &widths).unwrap();
        let b = span_repr(Span::new(3, 4), &enc, &align, &widths).unwrap();
        assert_eq!((a.c().len(), a.x.len()), (12, 20));
        assert_eq!(a.c()[8..], b.c()[8..]);
        assert_eq!(&a.x[12..], &[0.5; 8]);
        assert!(span_repr(Span::new(0, 3), &enc, &align, &widths).is_err());
        assert!(span_repr(Span::new(0, 2), &enc, &align, &widths).is_ok());
    }

    #[test]
    fn context_between_spans() {
        let rows: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64, -(i as f64)]).collect();
        let enc = output(&rows, vec![0.0; 2]);
        let align = SubwordAlignment::identity(5);
        let adjacent = context_vector(Span::new(0, 1), Span::new(2, 4), &enc, &align);
        assert_eq!(adjacent.values, vec![0.0, 0.0]);
        let gap = context_vector(Span::new(0, 0), Span::new(3, 4), &enc, &align);
        assert_eq!(gap.values, vec![2.0, -1.0]);
        let overlap = context_vector(Span::new(0, 2), Span::new(1, 4), &enc, &align);
        assert_eq!(overlap.values, vec![0.0, 0.0]);
        assert_eq!(
            context_vector(Span::new(3, 4), Span::new(0, 0), &enc, &align),
            gap
        );
    }

    #[test]
    fn relation_input_layout_and_asymmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rows: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64 + 1.0; 8]).collect();
        let enc = output(&rows, vec![0.0; 8]);
        let align = SubwordAlignment::identity(5);
        let widths = WidthEmbeddingTable::new(4, 4, 1.0, &mut rng);
        let a = span_repr(Span::new(0, 1), &enc, &align, &widths).unwrap();
        let b = span_repr(Span::new(2, 4), &enc, &align, &widths).unwrap();
        let ctx = context_vector(a.span, b.span, &enc, &align).values;
        let (pa, pb) = (vec![1.0, 2.0, 3.0], vec![-1.0, 0.0, 1.0]);
        let ab = relation_input(&a, &b, &ctx, &pa, &pb).unwrap();
        let ba = relation_input(&b, &a, &ctx, &pb, &pa).unwrap();
        assert_eq!(ab.len(), 3 * 8 + 2 * 4 + 2 * 3);
        assert_ne!(ab, ba);
        let layout = RelationLayout { d1: 8, d2: 4, d3: 3 };
        assert_eq!(layout.context(), 12..20);
        assert!(ab[layout.context()].iter().all(|&v| v == 0.0));
        assert_eq!(&ab[layout.head_c()], a.c());
        assert_eq!(&ab[layout.tail_c()], b.c());
        assert_eq!(&ab[layout.head_logits()], &pa[..]);
        assert_eq!(&ba[layout.head_logits()], &pb[..]);
        assert_eq!(ab[layout.context()], ba[layout.context()]);
        assert!(relation_input(&a, &b, &ctx[..3], &pa, &pb).is_err());
        assert!(relation_input(&a, &b, &ctx, &pa, &pb[..2]).is_err());
    }

    proptest! {
        #[test]
        fn relation_dimension_law(d1 in 1usize..24, d2 in 1usize..12, d3 in 0usize..8, n in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64((d1 * 1000 + d2 * 10 + d3) as u64);
            let enc = EncoderOutput {
                token_vectors: Matrix::random_normal(n, d1, 1.0, &mut rng),
                sentence_vector: vec![0.0; d1],
            };
            let align = SubwordAlignment::identity(n);
            let widths = WidthEmbeddingTable::new(n, d2, 1.0, &mut rng);
            let a = span_repr(Span::new(0, 0), &enc, &align, &widths).unwrap();
            let b = span_repr(Span::new(n - 1, n - 1), &enc, &align, &widths).unwrap();
            prop_assert_eq!(a.c().len(), d1 + d2);
            prop_assert_eq!(a.x.len(), 2 * d1 + d2);
            let ctx = context_vector(a.span, b.span, &enc, &align).values;
            let r = relation_input(&a, &b, &ctx, &vec![0.0; d3], &vec![0.0; d3]).unwrap();
            prop_assert_eq!(r.len(), 3 * d1 + 2 * d2 + 2 * d3);
        }

        #[test]
        fn pooling_is_order_free_and_monotone(
            rows in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 3), 2..7),
            cut in 1usize..6,
        ) {
            let m = Matrix::from_rows(&rows);
            let n = rows.len();
            let fwd = Pooled::max_over(&m, 0..n).values;
            let rev = Pooled::max_over(&m, (0..n).rev()).values;
            prop_assert_eq!(&fwd, &rev);
            let subset = Pooled::max_over(&m, 0..cut.min(n)).values;
            prop_assert!(fwd.iter().zip(&subset).all(|(a, b)| a >= b));
        }

        #[test]
        fn context_is_symmetric(n in 2usize..9, a in 0usize..9, b in 0usize..9, wa in 1usize..3, wb in 1usize..3) {
            let mut rng = ChaCha8Rng::seed_from_u64((n * 81 + a * 9 + b) as u64);
            let enc = EncoderOutput {
                token_vectors: Matrix::random_normal(n, 4, 1.0, &mut rng),
                sentence_vector: vec![0.0; 4],
            };
            let align = SubwordAlignment::identity(n);
            let sa = Span::new(a % n, (a % n + wa - 1).min(n - 1));
            let sb = Span::new(b % n, (b % n + wb - 1).min(n - 1));
            prop_assert_eq!(
                context_vector(sa, sb, &enc, &align).values,
                context_vector(sb, sa, &enc, &align).values
            );
        }
    }
}
