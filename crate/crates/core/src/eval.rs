//! Link-prediction ranking with raw and filtered MR / MRR / hits@k.
//!
//! For every evaluated triple the head and then the tail is replaced by each
//! entity in turn. The rank of the true entity is one plus the number of
//! candidates scoring strictly lower, so ties favour the true entity. The
//! filtered rank skips candidates that form a known triple. Head and tail
//! ranks are pooled, giving two observations per triple.

use std::collections::BTreeMap;
use std::fmt;
use std::time::Instant;

use thiserror::Error;

use crate::exec::{Execution, WorkerPool};
use crate::kg::{KnowledgeGraph, Split, Triple};
use crate::models::{combine, project_entity, score, EntityRows, RelationRows};
use crate::store::{ModelKind, ModelSpec, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Side {
    Head,
    Tail,
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{0} split is empty")]
    EmptySplit(Split),
    #[error(
        "embeddings cover {store_entities} entities / {store_relations} relations \
         but the graph has {graph_entities} / {graph_relations}"
    )]
    Mismatch {
        store_entities: usize,
        store_relations: usize,
        graph_entities: usize,
        graph_relations: usize,
    },
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MetricSet {
    pub mr: f64,
    pub mrr: f64,
    pub hits1: f64,
    pub hits10: f64,
}

impl MetricSet {
    /// Mean rank, mean reciprocal rank, and the fraction of ranks `<= 1` and
    /// `<= 10`. Empty input gives all zeros.
    pub fn from_ranks(ranks: impl IntoIterator<Item = usize>) -> Self {
        let (mut n, mut sum, mut rsum, mut h1, mut h10) = (0usize, 0.0, 0.0, 0usize, 0usize);
        for r in ranks {
            debug_assert!(r >= 1);
            n += 1;
            sum += r as f64;
            rsum += 1.0 / r as f64;
            h1 += (r <= 1) as usize;
            h10 += (r <= 10) as usize;
        }
        if n == 0 {
            return MetricSet::default();
        }
        let n = n as f64;
        MetricSet {
            mr: sum / n,
            mrr: rsum / n,
            hits1: h1 as f64 / n,
            hits10: h10 as f64 / n,
        }
    }
}

/// The four ranks of one evaluated triple.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TripleRanks {
    pub head_raw: usize,
    pub head_filter: usize,
    pub tail_raw: usize,
    pub tail_filter: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankReport {
    pub raw: MetricSet,
    pub filter: MetricSet,
    /// In split order.
    pub per_triple: Vec<TripleRanks>,
    pub seconds: f64,
}

impl RankReport {
    pub fn from_ranks(per_triple: Vec<TripleRanks>, seconds: f64) -> Self {
        let raw = MetricSet::from_ranks(per_triple.iter().flat_map(|r| [r.head_raw, r.tail_raw]));
        let filter = MetricSet::from_ranks(
            per_triple
                .iter()
                .flat_map(|r| [r.head_filter, r.tail_filter]),
        );
        RankReport {
            raw,
            filter,
            per_triple,
            seconds,
        }
    }

    /// Same metrics and ranks, ignoring wall time.
    pub fn same_results(&self, other: &RankReport) -> bool {
        self.raw == other.raw && self.filter == other.filter && self.per_triple == other.per_triple
    }
}

impl fmt::Display for RankReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<8} {:>10} {:>8} {:>8} {:>8}",
            "", "mr", "mrr", "hits@1", "hits@10"
        )?;
        for (name, m) in [("raw", &self.raw), ("filter", &self.filter)] {
            writeln!(
                f,
                "{:<8} {:>10.1} {:>8.3} {:>8.3} {:>8.3}",
                name, m.mr, m.mrr, m.hits1, m.hits10
            )?;
        }
        write!(
            f,
            "({} triples, {:.1}s)",
            self.per_triple.len(),
            self.seconds
        )
    }
}

/// Rank of the true entity of `triple` on `side`, scoring every candidate
/// with [`score`].
pub fn rank(
    spec: &ModelSpec,
    store: &ParamStore,
    kg: &KnowledgeGraph,
    triple: &Triple,
    side: Side,
    filtered: bool,
) -> usize {
    let target = score(spec, store, triple).value;
    let mut better = 0;
    for e in 0..kg.entity_count() as u32 {
        let candidate = substitute(triple, side, e);
        if candidate == *triple {
            continue;
        }
        if score(spec, store, &candidate).value < target && !(filtered && kg.contains(&candidate)) {
            better += 1;
        }
    }
    better + 1
}

#[inline]
fn substitute(triple: &Triple, side: Side, entity: u32) -> Triple {
    match side {
        Side::Head => Triple::new(entity, triple.relation, triple.tail),
        Side::Tail => Triple::new(triple.head, triple.relation, entity),
    }
}

fn check_shapes(store: &ParamStore, kg: &KnowledgeGraph) -> Result<(), EvalError> {
    if store.entity_count() != kg.entity_count() || store.relation_count() != kg.relation_count() {
        return Err(EvalError::Mismatch {
            store_entities: store.entity_count(),
            store_relations: store.relation_count(),
            graph_entities: kg.entity_count(),
            graph_relations: kg.relation_count(),
        });
    }
    Ok(())
}

/// Ranks every triple of `split` on both sides, raw and filtered.
pub fn evaluate(
    spec: &ModelSpec,
    store: &ParamStore,
    kg: &KnowledgeGraph,
    split: Split,
    num_threads: usize,
) -> Result<RankReport, EvalError> {
    evaluate_triples(
        spec,
        store,
        kg,
        kg.split(split),
        num_threads,
        Execution::Parallel,
    )
    .map_err(|e| match e {
        EvalError::EmptySplit(_) => EvalError::EmptySplit(split),
        other => other,
    })
}

/// Ranks an explicit list of triples. Work is split by triple; entity
/// projections are computed once per relation and shared read-only.
pub fn evaluate_triples(
    spec: &ModelSpec,
    store: &ParamStore,
    kg: &KnowledgeGraph,
    triples: &[Triple],
    num_threads: usize,
    execution: Execution,
) -> Result<RankReport, EvalError> {
    if triples.is_empty() {
        return Err(EvalError::EmptySplit(Split::Test));
    }
    check_shapes(store, kg)?;
    let started = Instant::now();
    let pool = WorkerPool::new(num_threads, execution);

    let mut by_relation: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, t) in triples.iter().enumerate() {
        by_relation.entry(t.relation).or_default().push(i);
    }

    let d = spec.rel_dim;
    let n = kg.entity_count();
    let relation_free = matches!(spec.kind, ModelKind::TransE | ModelKind::SphereE);
    let mut shared_projection: Option<Vec<f64>> = None;
    let mut ranks = vec![
        TripleRanks {
            head_raw: 0,
            head_filter: 0,
            tail_raw: 0,
            tail_filter: 0,
        };
        triples.len()
    ];

    for (&relation, indices) in &by_relation {
        let mut rel = RelationRows::zeros(spec);
        rel.load(store, relation);

        let projected = if relation_free {
            shared_projection.get_or_insert_with(|| project_all(spec, store, &rel, &pool))
        } else {
            shared_projection = Some(project_all(spec, store, &rel, &pool));
            shared_projection.as_ref().expect("just set")
        };
        let row = |e: u32| &projected[e as usize * d..(e as usize + 1) * d];

        let results = pool.map_range(indices.len(), |j| {
            let triple = &triples[indices[j]];
            let mut residual = vec![0.0; d];
            let target = combine(
                spec,
                &rel,
                row(triple.head),
                row(triple.tail),
                &mut residual,
            )
            .0;
            let mut out = [1usize; 4];
            for (side_index, side) in [Side::Head, Side::Tail].into_iter().enumerate() {
                let (mut raw, mut filter) = (0usize, 0usize);
                for e in 0..n as u32 {
                    let s = match side {
                        Side::Head => {
                            combine(spec, &rel, row(e), row(triple.tail), &mut residual).0
                        }
                        Side::Tail => {
                            combine(spec, &rel, row(triple.head), row(e), &mut residual).0
                        }
                    };
                    if s < target {
                        raw += 1;
                        if !kg.contains(&substitute(triple, side, e)) {
                            filter += 1;
                        }
                    }
                }
                out[2 * side_index] = raw + 1;
                out[2 * side_index + 1] = filter + 1;
            }
            out
        });
        for (j, r) in results.into_iter().enumerate() {
            ranks[indices[j]] = TripleRanks {
                head_raw: r[0],
                head_filter: r[1],
                tail_raw: r[2],
                tail_filter: r[3],
            };
        }
    }

    Ok(RankReport::from_ranks(
        ranks,
        started.elapsed().as_secs_f64(),
    ))
}

/// Every entity projected into the space of relation `rel`, row-major
/// `|E| x d`.
fn project_all(
    spec: &ModelSpec,
    store: &ParamStore,
    rel: &RelationRows,
    pool: &WorkerPool,
) -> Vec<f64> {
    let n = store.entity_count();
    let d = spec.rel_dim;
    let chunk = n.div_ceil(pool.threads() * 4).max(1);
    let chunks = pool.map_range(n.div_ceil(chunk), |c| {
        let mut ent = EntityRows::zeros(spec);
        let lo = c * chunk;
        let hi = ((c + 1) * chunk).min(n);
        let mut out = vec![0.0; (hi - lo) * d];
        for (i, e) in (lo..hi).enumerate() {
            ent.load(store, e as u32);
            project_entity(spec, rel, &ent, &mut out[i * d..(i + 1) * d]);
        }
        out
    });
    chunks.concat()
}
