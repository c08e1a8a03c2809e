//! Candidate spans and span pairs: enumeration, positional overlap (IoU and
//! the per-sentence maximum against gold entities), and training-time
//! negative sampling.
//!
//! Spans here use inclusive word indices `(start, end)`. The on-disk dataset
//! format is end-exclusive; conversion happens in [`crate::corpus`].

use std::collections::HashSet;
use std::fmt;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{LabelSchema, Sentence};

/// An inclusive word interval `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        assert!(start <= end, "span start {start} after end {end}");
        Self { start, end }
    }

    pub fn try_new(start: usize, end: usize) -> Option<Self> {
        (start <= end).then_some(Self { start, end })
    }

    /// Number of words covered.
    pub fn width(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.end.min(other.end) >= self.start.max(other.start)
    }

    /// Words lying strictly between two spans, or `None` if the spans are
    /// adjacent or overlap.
    pub fn gap(&self, other: &Span) -> Option<Span> {
        let (left, right) = if self.start <= other.start {
            (self, other)
        } else {
            (other, self)
        };
        if left.end + 1 < right.start {
            Some(Span::new(left.end + 1, right.start - 1))
        } else {
            None
        }
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.start, self.end)
    }
}

/// All spans of width `1..=min(max_width, n)` over `n` words, ordered by
/// start then end.
pub fn enumerate_spans(n: usize, max_width: usize) -> Vec<Span> {
    let max_width = max_width.min(n);
    let mut spans = Vec::with_capacity(span_count(n, max_width));
    for start in 0..n {
        let last = (start + max_width).min(n);
        spans.extend((start..last).map(|end| Span { start, end }));
    }
    spans
}

/// `Σ_{w=1..min(L,n)} (n − w + 1)`
pub fn span_count(n: usize, max_width: usize) -> usize {
    (1..=max_width.min(n)).map(|w| n - w + 1).sum()
}

/// Overlap of two spans as the exact ratio `(intersection, union)` in words.
/// Disjoint spans give `(0, 1)`.
pub fn overlap_ratio(a: Span, b: Span) -> (usize, usize) {
    if !a.overlaps(&b) {
        return (0, 1);
    }
    let inter = a.end.min(b.end) - a.start.max(b.start) + 1;
    let union = a.end.max(b.end) - a.start.min(b.start) + 1;
    (inter, union)
}

/// Intersection over union of two spans' word sets.
pub fn iou(a: Span, b: Span) -> f64 {
    let (inter, union) = overlap_ratio(a, b);
    inter as f64 / union as f64
}

/// Maximum IoU of `span` against every gold entity span; 0 for an empty set.
pub fn eniou(span: Span, gold: &[Span]) -> f64 {
    gold.iter().map(|&g| iou(span, g)).fold(0.0, f64::max)
}

/// Size of the ordered span-pair search space.
pub fn count_candidate_pairs(span_count: usize, include_self: bool) -> usize {
    if include_self {
        span_count * span_count
    } else {
        span_count * span_count.saturating_sub(1)
    }
}

/// Ordered `(head, tail)` index pairs over `n` items, self-pairs excluded.
pub fn ordered_pairs(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).flat_map(move |h| (0..n).filter(move |&t| t != h).map(move |t| (h, t)))
}

/// A candidate entity span with its training targets.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanSample {
    pub span: Span,
    /// Entity type index, `None` for NA.
    pub class: Option<usize>,
    pub eniou: f64,
}

impl SpanSample {
    pub fn is_positive(&self) -> bool {
        self.class.is_some()
    }

    pub fn identification_label(&self) -> f64 {
        if self.is_positive() {
            1.0
        } else {
            0.0
        }
    }
}

/// A candidate ordered span pair with its training targets.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSample {
    pub head: Span,
    pub tail: Span,
    /// Relation type index, `None` for NA.
    pub class: Option<usize>,
}

impl PairSample {
    pub fn is_positive(&self) -> bool {
        self.class.is_some()
    }

    pub fn identification_label(&self) -> f64 {
        if self.is_positive() {
            1.0
        } else {
            0.0
        }
    }
}

/// Draws `min(limit, len)` distinct indices uniformly, returned ascending so
/// the output order does not depend on the draw order.
fn draw<R: Rng + ?Sized>(rng: &mut R, len: usize, limit: usize) -> Vec<usize> {
    if limit >= len {
        return (0..len).collect();
    }
    let mut picked = index::sample(rng, len, limit).into_vec();
    picked.sort_unstable();
    picked
}

/// Entity training candidates for one sentence: every gold entity, plus up to
/// `neg_limit` non-gold spans of width ≤ `max_width` drawn without replacement.
pub fn sample_entity_training<R: Rng + ?Sized>(
    sentence: &Sentence,
    schema: &LabelSchema,
    max_width: usize,
    neg_limit: usize,
    rng: &mut R,
) -> Vec<SpanSample> {
    let gold = sentence.entity_spans();
    let gold_set: HashSet<Span> = gold.iter().copied().collect();

    let mut samples: Vec<SpanSample> = sentence
        .entities
        .iter()
        .map(|e| SpanSample {
            span: e.span,
            class: schema.entity_index(&e.label),
            eniou: 1.0,
        })
        .collect();

    let pool: Vec<Span> = enumerate_spans(sentence.len(), max_width)
        .into_iter()
        .filter(|s| !gold_set.contains(s))
        .collect();
    samples.extend(draw(rng, pool.len(), neg_limit).into_iter().map(|i| {
        let span = pool[i];
        SpanSample {
            span,
            class: None,
            eniou: eniou(span, &gold),
        }
    }));
    samples
}

/// Relation training candidates for one sentence: every gold relation, plus up
/// to `neg_limit` ordered pairs of distinct gold entity spans that carry no
/// gold relation.
pub fn sample_relation_training<R: Rng + ?Sized>(
    sentence: &Sentence,
    schema: &LabelSchema,
    neg_limit: usize,
    rng: &mut R,
) -> Vec<PairSample> {
    let mut samples: Vec<PairSample> = sentence
        .relations
        .iter()
        .map(|r| PairSample {
            head: sentence.entities[r.head].span,
            tail: sentence.entities[r.tail].span,
            class: schema.relation_index(&r.label),
        })
        .collect();
    let related: HashSet<(Span, Span)> = samples.iter().map(|s| (s.head, s.tail)).collect();

    let mut spans: Vec<Span> = Vec::new();
    for s in sentence.entity_spans() {
        if !spans.contains(&s) {
            spans.push(s);
        }
    }
    let pool: Vec<(Span, Span)> = ordered_pairs(spans.len())
        .map(|(h, t)| (spans[h], spans[t]))
        .filter(|pair| !related.contains(pair))
        .collect();
    samples.extend(
        draw(rng, pool.len(), neg_limit)
            .into_iter()
            .map(|i| PairSample {
                head: pool[i].0,
                tail: pool[i].1,
                class: None,
            }),
    );
    samples
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{EntityAnnotation, RelationAnnotation};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn schema() -> LabelSchema {
        LabelSchema::new(vec!["T".into(), "U".into()], vec!["R".into()]).unwrap()
    }

    fn sentence(n: usize, entities: &[(usize, usize)], relations: &[(usize, usize)]) -> Sentence {
        Sentence {
            id: "s".into(),
            tokens: (0..n).map(|i| format!("w{i}")).collect(),
            entities: entities
                .iter()
                .map(|&(s, e)| EntityAnnotation {
                    label: "T".into(),
                    span: Span::new(s, e),
                })
                .collect(),
            relations: relations
                .iter()
                .map(|&(head, tail)| RelationAnnotation {
                    label: "R".into(),
                    head,
                    tail,
                })
                .collect(),
        }
    }

    #[test]
    fn enumeration_order_and_count() {
        let spans = enumerate_spans(3, 2);
        let want = [(0, 0), (0, 1), (1, 1), (1, 2), (2, 2)];
        assert_eq!(spans, want.map(|(s, e)| Span::new(s, e)));
        // Σ_{w=1..2} (3 − w + 1) = 3 + 2
        assert_eq!(spans.len(), 5);
        assert_eq!(enumerate_spans(11, 11).len(), 66);
        assert!(enumerate_spans(0, 5).is_empty());
        assert_eq!(enumerate_spans(4, 100).len(), span_count(4, 4));
    }

    #[test]
    fn iou_examples() {
        assert_eq!(iou(Span::new(2, 4), Span::new(2, 4)), 1.0);
        assert_eq!(iou(Span::new(0, 2), Span::new(5, 7)), 0.0);
        // {0,1,2} ∩ {1,2,3} = 2 words, union 4 words
        assert_eq!(iou(Span::new(0, 2), Span::new(1, 3)), 0.5);
        assert_eq!(iou(Span::new(0, 1), Span::new(2, 3)), 0.0);
    }

    #[test]
    fn eniou_examples() {
        assert_eq!(eniou(Span::new(0, 1), &[]), 0.0);
        assert_eq!(eniou(Span::new(1, 3), &[Span::new(1, 3)]), 1.0);
        let gold = [Span::new(1, 3), Span::new(5, 6)];
        assert_eq!(eniou(Span::new(0, 1), &gold), 0.25);
    }

    #[test]
    fn candidate_pair_counts() {
        assert_eq!(count_candidate_pairs(66, true) - 1, 4355);
        assert_eq!(count_candidate_pairs(66, false), 4290);
        assert_eq!(count_candidate_pairs(0, false), 0);
        assert_eq!(count_candidate_pairs(0, true), 0);
        assert_eq!(ordered_pairs(4).count(), count_candidate_pairs(4, false));
    }

    #[test]
    fn gap_is_strictly_between() {
        assert_eq!(Span::new(0, 1).gap(&Span::new(2, 4)), None);
        assert_eq!(Span::new(0, 0).gap(&Span::new(3, 4)), Some(Span::new(1, 2)));
        assert_eq!(Span::new(3, 4).gap(&Span::new(0, 0)), Some(Span::new(1, 2)));
        assert_eq!(Span::new(0, 3).gap(&Span::new(2, 5)), None);
    }

    #[test]
    fn entity_sampling_exhausts_small_pools() {
        let s = sentence(3, &[(0, 0)], &[]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let samples = sample_entity_training(&s, &schema(), 2, 100, &mut rng);
        assert_eq!(samples.iter().filter(|x| x.is_positive()).count(), 1);
        assert_eq!(samples.iter().filter(|x| !x.is_positive()).count(), 4);
        let pos = &samples[0];
        assert_eq!((pos.class, pos.eniou, pos.identification_label()), (Some(0), 1.0, 1.0));

        let only_gold = sample_entity_training(&s, &schema(), 2, 0, &mut rng);
        assert_eq!(only_gold.len(), 1);
    }

    #[test]
    fn entity_sampling_counts_for_eleven_tokens() {
        // 11 words, two gold entities of width 1 and 3
        let s = sentence(11, &[(0, 0), (8, 10)], &[(0, 1)]);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let samples = sample_entity_training(&s, &schema(), 11, 200, &mut rng);
        assert_eq!(samples.iter().filter(|x| x.is_positive()).count(), 2);
        assert_eq!(samples.iter().filter(|x| !x.is_positive()).count(), 64);
    }

    #[test]
    fn negatives_carry_eniou_and_never_hit_gold() {
        let s = sentence(8, &[(1, 3), (5, 5)], &[]);
        let gold = s.entity_spans();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for x in sample_entity_training(&s, &schema(), 4, 10, &mut rng)
            .iter()
            .filter(|x| !x.is_positive())
        {
            assert!(!gold.contains(&x.span));
            assert_eq!(x.eniou, eniou(x.span, &gold));
            assert!(x.eniou < 1.0);
        }
    }

    #[test]
    fn relation_sampling_uses_gold_entity_pairs() {
        let s = sentence(6, &[(0, 0), (3, 4)], &[(0, 1)]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let samples = sample_relation_training(&s, &schema(), 10, &mut rng);
        assert_eq!(samples.len(), 2);
        assert_eq!(samples[0].class, Some(0));
        assert_eq!(
            (samples[1].head, samples[1].tail, samples[1].class),
            (Span::new(3, 4), Span::new(0, 0), None)
        );

        let s = sentence(6, &[(0, 0), (2, 2), (4, 5)], &[]);
        let samples = sample_relation_training(&s, &schema(), 100, &mut rng);
        assert_eq!(samples.len(), 6);
        assert!(samples.iter().all(|p| p.head != p.tail && !p.is_positive()));

        assert!(sample_relation_training(&s, &schema(), 0, &mut rng).is_empty());
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let s = sentence(12, &[(1, 2), (6, 6), (9, 11)], &[(0, 2)]);
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (
                sample_entity_training(&s, &schema(), 5, 7, &mut rng),
                sample_relation_training(&s, &schema(), 2, &mut rng),
            )
        };
        assert_eq!(run(42), run(42));
        assert_ne!(run(42).0, run(43).0);
    }
}
