//! Shared parameter tables.
//!
//! Every table is a flat array of `AtomicU64` holding `f64` bit patterns.
//! Workers read and write rows with relaxed loads and stores and never take a
//! lock: concurrent updates to the same row may interleave or overwrite each
//! other, which Hogwild-style SGD tolerates because each step touches only a
//! handful of rows. Relaxed atomics compile to plain moves on the common
//! targets, so the cost over a racy `UnsafeCell` is nil while staying free of
//! undefined behaviour.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::linalg::{dot, l2_norm, scale};

/// Slack allowed above an inequality bound before the projection kicks in.
/// Keeps repeated projection idempotent.
pub const INEQUALITY_SLACK: f64 = 1e-12;

/// A row whose L2 norm is this close to one is left untouched.
const UNIT_TOLERANCE: f64 = 4.0 * f64::EPSILON;

/// Cap on passes over the TransR matrix constraints for one relation.
const MAX_SWEEPS: usize = 64;

pub const META_FILE: &str = "meta.txt";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelKind {
    TransE,
    TransH,
    TransR,
    TransD,
    SphereE,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::TransE,
        ModelKind::TransH,
        ModelKind::TransR,
        ModelKind::TransD,
        ModelKind::SphereE,
    ];

    /// Whether the relation space dimension may differ from the entity one.
    pub fn has_relation_space(self) -> bool {
        matches!(self, ModelKind::TransR | ModelKind::TransD)
    }

    pub fn tag(self) -> &'static str {
        match self {
            ModelKind::TransE => "transe",
            ModelKind::TransH => "transh",
            ModelKind::TransR => "transr",
            ModelKind::TransD => "transd",
            ModelKind::SphereE => "spheree",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for ModelKind {
    type Err = StoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.tag().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| StoreError::UnknownModel(s.to_owned()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Norm {
    L1,
    L2,
}

impl fmt::Display for Norm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Norm::L1 => "l1",
            Norm::L2 => "l2",
        })
    }
}

impl FromStr for Norm {
    type Err = StoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "l1" => Ok(Norm::L1),
            "l2" => Ok(Norm::L2),
            other => Err(StoreError::InvalidSpec(format!("unknown norm {other:?}"))),
        }
    }
}

/// Starting point for TransR projection matrices.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum MatrixInit {
    /// Identity, zero padded when `d != k`.
    #[default]
    Identity,
    /// Uniform in `[-6/sqrt(d k), 6/sqrt(d k)]`.
    Random,
}

impl fmt::Display for MatrixInit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MatrixInit::Identity => "identity",
            MatrixInit::Random => "random",
        })
    }
}

impl FromStr for MatrixInit {
    type Err = StoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "identity" => Ok(MatrixInit::Identity),
            "random" => Ok(MatrixInit::Random),
            other => Err(StoreError::InvalidSpec(format!(
                "unknown matrix init {other:?}"
            ))),
        }
    }
}

/// Which score function is active and its dimensions.
///
/// `rel_dim` only matters for TransR and TransD; for the other models it is
/// forced equal to `dim`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub dim: usize,
    pub rel_dim: usize,
    pub norm: Norm,
    /// Bound on `|w_r . d_r|` for TransH.
    pub epsilon: f64,
}

impl ModelSpec {
    pub fn new(
        kind: ModelKind,
        dim: usize,
        rel_dim: usize,
        norm: Norm,
        epsilon: f64,
    ) -> Result<Self, StoreError> {
        if dim == 0 || rel_dim == 0 {
            return Err(StoreError::InvalidSpec(
                "dimensions must be at least 1".into(),
            ));
        }
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(StoreError::InvalidSpec(format!(
                "epsilon must be finite and >= 0, got {epsilon}"
            )));
        }
        let rel_dim = if kind.has_relation_space() {
            rel_dim
        } else {
            dim
        };
        Ok(ModelSpec {
            kind,
            dim,
            rel_dim,
            norm,
            epsilon,
        })
    }

    /// Spec with `rel_dim == dim`.
    pub fn square(kind: ModelKind, dim: usize, norm: Norm) -> Result<Self, StoreError> {
        Self::new(kind, dim, dim, norm, DEFAULT_EPSILON)
    }
}

pub const DEFAULT_EPSILON: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("unknown model kind {0:?}")]
    UnknownModel(String),
    #[error("entity and relation counts must be at least 1")]
    EmptyVocabulary,
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}:{line}: dimension mismatch: expected {expected} values, found {found}")]
    DimensionMismatch {
        file: String,
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("{file}: expected {expected} rows, found {found}")]
    RowCount {
        file: String,
        expected: usize,
        found: usize,
    },
    #[error("{file}:{line}: {message}")]
    Malformed {
        file: String,
        line: usize,
        message: String,
    },
}

/// Row-major `rows x cols` table of `f64` shared between workers without
/// locks.
pub struct Table {
    rows: usize,
    cols: usize,
    data: Box<[AtomicU64]>,
}

impl Table {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Table {
            rows,
            cols,
            data: (0..rows * cols)
                .map(|_| AtomicU64::new(0f64.to_bits()))
                .collect(),
        }
    }

    pub fn from_vec(rows: usize, cols: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), rows * cols);
        Table {
            rows,
            cols,
            data: values
                .into_iter()
                .map(|v| AtomicU64::new(v.to_bits()))
                .collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        f64::from_bits(self.data[row * self.cols + col].load(Ordering::Relaxed))
    }

    #[inline]
    pub fn set(&self, row: usize, col: usize, value: f64) {
        self.data[row * self.cols + col].store(value.to_bits(), Ordering::Relaxed);
    }

    /// Copies row `row` into `out` (`out.len() == cols`).
    #[inline]
    pub fn read_row(&self, row: usize, out: &mut [f64]) {
        let cells = &self.data[row * self.cols..(row + 1) * self.cols];
        for (o, c) in out.iter_mut().zip(cells) {
            *o = f64::from_bits(c.load(Ordering::Relaxed));
        }
    }

    #[inline]
    pub fn write_row(&self, row: usize, values: &[f64]) {
        let cells = &self.data[row * self.cols..(row + 1) * self.cols];
        for (c, v) in cells.iter().zip(values) {
            c.store(v.to_bits(), Ordering::Relaxed);
        }
    }

    /// `row += alpha * delta`, element by element against the current value.
    #[inline]
    pub fn add_to_row(&self, row: usize, alpha: f64, delta: &[f64]) {
        let cells = &self.data[row * self.cols..(row + 1) * self.cols];
        for (c, d) in cells.iter().zip(delta) {
            let v = f64::from_bits(c.load(Ordering::Relaxed)) + alpha * d;
            c.store(v.to_bits(), Ordering::Relaxed);
        }
    }

    pub fn row(&self, row: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        self.read_row(row, &mut out);
        out
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.data
            .iter()
            .map(|c| f64::from_bits(c.load(Ordering::Relaxed)))
            .collect()
    }

    fn bits(&self) -> impl Iterator<Item = u64> + '_ {
        self.data.iter().map(|c| c.load(Ordering::Relaxed))
    }
}

impl Clone for Table {
    fn clone(&self) -> Self {
        Table::from_vec(self.rows, self.cols, self.to_vec())
    }
}

impl fmt::Debug for Table {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Table")
            .field("rows", &self.rows)
            .field("cols", &self.cols)
            .finish()
    }
}

/// Identifies one parameter table; also names its file on disk.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TableId {
    Entity,
    Relation,
    Normal,
    ProjMatrix,
    EntityProj,
    RelationProj,
    Radius,
}

impl TableId {
    pub fn file_name(self) -> &'static str {
        match self {
            TableId::Entity => "entity_vecs.txt",
            TableId::Relation => "relation_vecs.txt",
            TableId::Normal => "normal_vecs.txt",
            TableId::ProjMatrix => "proj_matrices.txt",
            TableId::EntityProj => "entity_proj_vecs.txt",
            TableId::RelationProj => "relation_proj_vecs.txt",
            TableId::Radius => "sphere_radii.txt",
        }
    }

    /// Tables a model needs, with their row kind and column count.
    pub fn layout(spec: &ModelSpec) -> Vec<(TableId, RowsOf, usize)> {
        let (k, d) = (spec.dim, spec.rel_dim);
        let mut v = vec![
            (TableId::Entity, RowsOf::Entities, k),
            (TableId::Relation, RowsOf::Relations, d),
        ];
        match spec.kind {
            ModelKind::TransE => {}
            ModelKind::TransH => v.push((TableId::Normal, RowsOf::Relations, k)),
            ModelKind::TransR => v.push((TableId::ProjMatrix, RowsOf::Relations, d * k)),
            ModelKind::TransD => {
                v.push((TableId::EntityProj, RowsOf::Entities, k));
                v.push((TableId::RelationProj, RowsOf::Relations, d));
            }
            ModelKind::SphereE => v.push((TableId::Radius, RowsOf::Relations, 1)),
        }
        v
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RowsOf {
    Entities,
    Relations,
}

/// All learnable parameters of one model. Only the tables the model uses are
/// allocated.
#[derive(Clone, Debug)]
pub struct ParamStore {
    entity_count: usize,
    relation_count: usize,
    /// Entity vectors `h`, `t` (`|E| x k`).
    pub entity: Table,
    /// Relation translation `r` (`|R| x d`); TransH's `d_r`.
    pub relation: Table,
    /// TransH hyperplane normals `w_r` (`|R| x k`).
    pub normal: Option<Table>,
    /// TransR projections, one row-major `d x k` matrix per relation mapping
    /// entity space into relation space.
    pub proj_matrix: Option<Table>,
    /// TransD entity projection vectors `h_p` (`|E| x k`).
    pub entity_proj: Option<Table>,
    /// TransD relation projection vectors `r_p` (`|R| x d`).
    pub relation_proj: Option<Table>,
    /// SphereE radii `D_r` (`|R| x 1`).
    pub radius: Option<Table>,
}

/// Ids whose rows were modified and need their constraints restored.
#[derive(Clone, Copy, Debug, Default)]
pub struct Touched<'a> {
    pub entities: &'a [u32],
    pub relations: &'a [u32],
}

impl ParamStore {
    /// Allocates and initializes every table `spec` needs.
    ///
    /// Vectors are drawn uniformly from `[-6/sqrt(n), 6/sqrt(n)]` (`n` the row
    /// width) and then projected onto the constraints. TransR matrices start
    /// as identity (zero padded when `d != k`), TransD entity projection
    /// vectors at zero and SphereE radii at one, so TransR and TransD start out
    /// scoring exactly like TransE.
    pub fn init(
        spec: &ModelSpec,
        entity_count: usize,
        relation_count: usize,
        seed: u64,
    ) -> Result<Self, StoreError> {
        Self::init_with(
            spec,
            entity_count,
            relation_count,
            seed,
            MatrixInit::Identity,
        )
    }

    /// [`ParamStore::init`] with a choice of starting point for TransR
    /// matrices.
    pub fn init_with(
        spec: &ModelSpec,
        entity_count: usize,
        relation_count: usize,
        seed: u64,
        matrix_init: MatrixInit,
    ) -> Result<Self, StoreError> {
        if entity_count == 0 || relation_count == 0 {
            return Err(StoreError::EmptyVocabulary);
        }
        let spec = ModelSpec::new(spec.kind, spec.dim, spec.rel_dim, spec.norm, spec.epsilon)?;
        let (k, d) = (spec.dim, spec.rel_dim);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uniform = |rows: usize, cols: usize| {
            let bound = 6.0 / (cols as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound);
            Table::from_vec(
                rows,
                cols,
                (0..rows * cols).map(|_| dist.sample(&mut rng)).collect(),
            )
        };

        let entity = uniform(entity_count, k);
        let relation = uniform(relation_count, d);
        let mut store = ParamStore {
            entity_count,
            relation_count,
            entity,
            relation,
            normal: None,
            proj_matrix: None,
            entity_proj: None,
            relation_proj: None,
            radius: None,
        };
        match spec.kind {
            ModelKind::TransE => {}
            ModelKind::TransH => store.normal = Some(uniform(relation_count, k)),
            ModelKind::TransR => {
                let m = match matrix_init {
                    MatrixInit::Identity => {
                        let m = Table::zeros(relation_count, d * k);
                        for r in 0..relation_count {
                            for i in 0..d.min(k) {
                                m.set(r, i * k + i, 1.0);
                            }
                        }
                        m
                    }
                    MatrixInit::Random => uniform(relation_count, d * k),
                };
                store.proj_matrix = Some(m);
            }
            ModelKind::TransD => {
                store.entity_proj = Some(Table::zeros(entity_count, k));
                // Random rather than zero: with both projection vectors at zero
                // their gradients vanish identically and they would never move.
                let rp = uniform(relation_count, d);
                for r in 0..relation_count {
                    let mut row = rp.row(r);
                    normalize_unit(&mut row);
                    rp.write_row(r, &row);
                }
                store.relation_proj = Some(rp);
            }
            ModelKind::SphereE => {
                store.radius = Some(Table::from_vec(
                    relation_count,
                    1,
                    vec![1.0; relation_count],
                ))
            }
        }
        store.renormalize_all(&spec);
        Ok(store)
    }

    pub fn entity_count(&self) -> usize {
        self.entity_count
    }

    pub fn relation_count(&self) -> usize {
        self.relation_count
    }

    pub fn table(&self, id: TableId) -> Option<&Table> {
        match id {
            TableId::Entity => Some(&self.entity),
            TableId::Relation => Some(&self.relation),
            TableId::Normal => self.normal.as_ref(),
            TableId::ProjMatrix => self.proj_matrix.as_ref(),
            TableId::EntityProj => self.entity_proj.as_ref(),
            TableId::RelationProj => self.relation_proj.as_ref(),
            TableId::Radius => self.radius.as_ref(),
        }
    }

    /// Present tables in a fixed order.
    pub fn tables(&self) -> impl Iterator<Item = (TableId, &Table)> {
        [
            TableId::Entity,
            TableId::Relation,
            TableId::Normal,
            TableId::ProjMatrix,
            TableId::EntityProj,
            TableId::RelationProj,
            TableId::Radius,
        ]
        .into_iter()
        .filter_map(move |id| self.table(id).map(|t| (id, t)))
    }

    /// Bitwise equality of every table.
    pub fn bitwise_eq(&self, other: &ParamStore) -> bool {
        let mine: Vec<_> = self.tables().collect();
        let theirs: Vec<_> = other.tables().collect();
        mine.len() == theirs.len()
            && mine.iter().zip(&theirs).all(|((ia, a), (ib, b))| {
                ia == ib && a.rows == b.rows && a.cols == b.cols && a.bits().eq(b.bits())
            })
    }

    /// Largest absolute element difference over matching tables, or `None`
    /// when the layouts differ.
    pub fn max_abs_diff(&self, other: &ParamStore) -> Option<f64> {
        let mine: Vec<_> = self.tables().collect();
        let theirs: Vec<_> = other.tables().collect();
        if mine.len() != theirs.len() {
            return None;
        }
        let mut worst: f64 = 0.0;
        for ((ia, a), (ib, b)) in mine.iter().zip(&theirs) {
            if ia != ib || a.rows != b.rows || a.cols != b.cols {
                return None;
            }
            for (x, y) in a.to_vec().into_iter().zip(b.to_vec()) {
                worst = worst.max((x - y).abs());
            }
        }
        Some(worst)
    }

    /// Restores every constraint on every row.
    pub fn renormalize_all(&self, spec: &ModelSpec) {
        let entities: Vec<u32> = (0..self.entity_count as u32).collect();
        let relations: Vec<u32> = (0..self.relation_count as u32).collect();
        self.renormalize(
            spec,
            Touched {
                entities: &entities,
                relations: &relations,
            },
        );
    }

    /// Restores the constraints on the touched rows.
    ///
    /// Unit-norm rows (entity and relation vectors, TransH normals) are
    /// rescaled. Inequality constraints are projected only when violated: the
    /// TransH translation loses its component along the normal, a TransR
    /// matrix is shrunk along `e` only (a rank-one correction) until
    /// `|M_r e|_2 = 1`, and a TransD entity
    /// projection vector is scaled down until `|e + (e_p . e) r_p|_2 <= 1`.
    /// The coupled constraints are checked for every touched (relation,
    /// entity) pair.
    pub fn renormalize(&self, spec: &ModelSpec, touched: Touched<'_>) {
        let (k, d) = (spec.dim, spec.rel_dim);
        let mut ebuf = vec![0.0; k];
        let mut rbuf = vec![0.0; d];

        for &e in touched.entities {
            normalize_row(&self.entity, e as usize, &mut ebuf);
        }
        for &r in touched.relations {
            normalize_row(&self.relation, r as usize, &mut rbuf);
        }

        match spec.kind {
            ModelKind::TransE | ModelKind::SphereE => {}
            ModelKind::TransH => {
                let normal = self.normal.as_ref().expect("TransH store has normals");
                let mut wbuf = vec![0.0; k];
                for &r in touched.relations {
                    let r = r as usize;
                    normalize_row(normal, r, &mut wbuf);
                    self.relation.read_row(r, &mut rbuf);
                    if orthogonalize(&wbuf, &mut rbuf, spec.epsilon) {
                        self.relation.write_row(r, &rbuf);
                    }
                }
            }
            ModelKind::TransR => {
                let m = self
                    .proj_matrix
                    .as_ref()
                    .expect("TransR store has matrices");
                let mut mbuf = vec![0.0; d * k];
                let mut proj = vec![0.0; d];
                for &r in touched.relations {
                    let r = r as usize;
                    m.read_row(r, &mut mbuf);
                    // Shrinking along one entity can lengthen M e for another
                    // with a negative inner product, so sweep until stable.
                    let mut changed = false;
                    for _ in 0..MAX_SWEEPS {
                        let mut sweep_changed = false;
                        for &e in touched.entities {
                            self.entity.read_row(e as usize, &mut ebuf);
                            crate::linalg::mat_vec(&mbuf, d, k, &ebuf, &mut proj);
                            let n = l2_norm(&proj);
                            if n > 1.0 + INEQUALITY_SLACK {
                                shrink_along(&mut mbuf, k, &proj, &ebuf, n);
                                sweep_changed = true;
                            }
                        }
                        changed |= sweep_changed;
                        if !sweep_changed {
                            break;
                        }
                    }
                    if changed {
                        m.write_row(r, &mbuf);
                    }
                }
            }
            ModelKind::TransD => {
                let ep = self
                    .entity_proj
                    .as_ref()
                    .expect("TransD store has entity projections");
                let rp = self
                    .relation_proj
                    .as_ref()
                    .expect("TransD store has relation projections");
                let mut epbuf = vec![0.0; k];
                let mut rpbuf = vec![0.0; d];
                for &r in touched.relations {
                    rp.read_row(r as usize, &mut rpbuf);
                    for &e in touched.entities {
                        let e = e as usize;
                        self.entity.read_row(e, &mut ebuf);
                        ep.read_row(e, &mut epbuf);
                        if let Some(c) = transd_shrink_factor(&ebuf, &epbuf, &rpbuf) {
                            scale(&mut epbuf, c);
                            ep.write_row(e, &epbuf);
                        }
                    }
                }
            }
        }
    }
}

/// Rank-one correction `M -= (1 - 1/n) (M e) e^T / |e|^2`, which scales
/// `M e` by `1/n` and leaves `M` unchanged on the complement of `e`.
fn shrink_along(m: &mut [f64], cols: usize, projected: &[f64], e: &[f64], n: f64) {
    let e2 = dot(e, e);
    if e2 == 0.0 {
        return;
    }
    let c = (1.0 - 1.0 / n) / e2;
    for (i, p) in projected.iter().enumerate() {
        let row = &mut m[i * cols..(i + 1) * cols];
        for (mij, ej) in row.iter_mut().zip(e) {
            *mij -= c * p * ej;
        }
    }
}

fn normalize_row(table: &Table, row: usize, buf: &mut [f64]) {
    table.read_row(row, buf);
    if normalize_unit(buf) {
        table.write_row(row, buf);
    }
}

/// Scales `v` to unit L2 norm; the zero vector becomes `e_1`. Returns whether
/// `v` changed.
pub fn normalize_unit(v: &mut [f64]) -> bool {
    let mut changed = false;
    // A second pass catches the rare rounding that lands a few ulps outside
    // the tolerance.
    for _ in 0..2 {
        let n = l2_norm(v);
        if n == 0.0 || !n.is_finite() {
            v.iter_mut().for_each(|x| *x = 0.0);
            v[0] = 1.0;
            return true;
        }
        if (n - 1.0).abs() <= UNIT_TOLERANCE {
            break;
        }
        scale(v, 1.0 / n);
        changed = true;
    }
    changed
}

/// Enforces `|w . t| <= epsilon` for unit `w` and unit `t` by removing the
/// component of `t` along `w` and renormalizing. Returns whether `t` changed.
pub fn orthogonalize(w: &[f64], t: &mut [f64], epsilon: f64) -> bool {
    let along = dot(w, t);
    if along.abs() <= epsilon + INEQUALITY_SLACK {
        return false;
    }
    for (ti, wi) in t.iter_mut().zip(w) {
        *ti -= along * wi;
    }
    if l2_norm(t) < 1e-8 {
        // `t` was (anti)parallel to `w`: fall back to the basis vector least
        // aligned with `w`, minus its `w` component.
        let axis = w
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map(|(i, _)| i)
            .unwrap_or(0);
        t.iter_mut().for_each(|x| *x = 0.0);
        t[axis] = 1.0;
        let along = dot(w, t);
        for (ti, wi) in t.iter_mut().zip(w) {
            *ti -= along * wi;
        }
    }
    normalize_unit(t);
    true
}

/// TransD's projected entity `e_perp = pad(e) + (e_p . e) r_p` in relation
/// space, where `pad` keeps the first `min(k, d)` coordinates of `e` and zero
/// fills the rest.
pub fn transd_project(e: &[f64], ep: &[f64], rp: &[f64], out: &mut [f64]) {
    let s = dot(ep, e);
    for (i, o) in out.iter_mut().enumerate() {
        *o = s * rp[i] + e.get(i).copied().unwrap_or(0.0);
    }
}

/// Factor `c` in `[0, 1)` such that scaling `ep` by `c` puts the TransD
/// projection of `e` on the unit sphere, or `None` when it already lies within
/// it.
#[allow(clippy::needless_range_loop)]
fn transd_shrink_factor(e: &[f64], ep: &[f64], rp: &[f64]) -> Option<f64> {
    let d = rp.len();
    let mut proj = vec![0.0; d];
    transd_project(e, ep, rp, &mut proj);
    if l2_norm(&proj) <= 1.0 + INEQUALITY_SLACK {
        return None;
    }
    // |p + c q|^2 = 1 with p = pad(e), q = (ep . e) rp. Since |p| <= |e| = 1
    // the constant term is non-positive and the larger root lies in [0, 1].
    let s = dot(ep, e);
    let mut a = 0.0;
    let mut b = 0.0;
    let mut p2 = 0.0;
    for i in 0..d {
        let p = e.get(i).copied().unwrap_or(0.0);
        let q = s * rp[i];
        a += q * q;
        b += 2.0 * p * q;
        p2 += p * p;
    }
    let c0 = p2 - 1.0;
    let disc = (b * b - 4.0 * a * c0).max(0.0);
    let c = ((-b + disc.sqrt()) / (2.0 * a)).clamp(0.0, 1.0);
    Some(c)
}

/// Writes `meta.txt` plus one text file per table. Values use the shortest
/// representation that parses back to the same `f64`.
pub fn save(store: &ParamStore, spec: &ModelSpec, dir: impl AsRef<Path>) -> Result<(), StoreError> {
    let dir = dir.as_ref();
    let io_err = |path: &Path| {
        let path = path.to_owned();
        move |source| StoreError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io_err(dir))?;

    let meta_path = dir.join(META_FILE);
    let meta = format!(
        "model={}\ndim={}\nrel_dim={}\nnorm={}\nepsilon={}\nentities={}\nrelations={}\n",
        spec.kind,
        spec.dim,
        spec.rel_dim,
        spec.norm,
        spec.epsilon,
        store.entity_count,
        store.relation_count
    );
    fs::write(&meta_path, meta).map_err(io_err(&meta_path))?;

    for (id, table) in store.tables() {
        let path = dir.join(id.file_name());
        let mut out = BufWriter::new(fs::File::create(&path).map_err(io_err(&path))?);
        let mut row = vec![0.0; table.cols];
        for r in 0..table.rows {
            table.read_row(r, &mut row);
            let mut first = true;
            for v in &row {
                if !first {
                    out.write_all(b" ").map_err(io_err(&path))?;
                }
                first = false;
                write!(out, "{v}").map_err(io_err(&path))?;
            }
            out.write_all(b"\n").map_err(io_err(&path))?;
        }
        out.flush().map_err(io_err(&path))?;
    }
    Ok(())
}

/// Reads back a directory written by [`save`].
pub fn load(dir: impl AsRef<Path>) -> Result<(ParamStore, ModelSpec), StoreError> {
    let dir = dir.as_ref();
    let read = |path: &Path| {
        fs::read_to_string(path).map_err(|source| StoreError::Io {
            path: path.to_owned(),
            source,
        })
    };

    let meta_text = read(&dir.join(META_FILE))?;
    let mut fields = std::collections::HashMap::new();
    for (i, line) in meta_text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| StoreError::Malformed {
            file: META_FILE.into(),
            line: i + 1,
            message: format!("expected key=value, found {line:?}"),
        })?;
        fields.insert(key.trim().to_owned(), (i + 1, value.trim().to_owned()));
    }
    let field = |key: &str| {
        fields
            .get(key)
            .cloned()
            .ok_or_else(|| StoreError::Malformed {
                file: META_FILE.into(),
                line: 0,
                message: format!("missing key {key:?}"),
            })
    };
    fn parse<T: FromStr>(key: &str, (line, value): (usize, String)) -> Result<T, StoreError> {
        value.parse().map_err(|_| StoreError::Malformed {
            file: META_FILE.into(),
            line,
            message: format!("bad value {value:?} for {key}"),
        })
    }

    let kind: ModelKind = field("model")?.1.parse()?;
    let norm: Norm = field("norm")?.1.parse()?;
    let spec = ModelSpec::new(
        kind,
        parse("dim", field("dim")?)?,
        parse("rel_dim", field("rel_dim")?)?,
        norm,
        parse("epsilon", field("epsilon")?)?,
    )?;
    let entity_count: usize = parse("entities", field("entities")?)?;
    let relation_count: usize = parse("relations", field("relations")?)?;
    if entity_count == 0 || relation_count == 0 {
        return Err(StoreError::EmptyVocabulary);
    }

    let mut store = ParamStore {
        entity_count,
        relation_count,
        entity: Table::zeros(0, 0),
        relation: Table::zeros(0, 0),
        normal: None,
        proj_matrix: None,
        entity_proj: None,
        relation_proj: None,
        radius: None,
    };
    for (id, rows_of, cols) in TableId::layout(&spec) {
        let rows = match rows_of {
            RowsOf::Entities => entity_count,
            RowsOf::Relations => relation_count,
        };
        let path = dir.join(id.file_name());
        let table = read_table(&read(&path)?, id.file_name(), rows, cols)?;
        match id {
            TableId::Entity => store.entity = table,
            TableId::Relation => store.relation = table,
            TableId::Normal => store.normal = Some(table),
            TableId::ProjMatrix => store.proj_matrix = Some(table),
            TableId::EntityProj => store.entity_proj = Some(table),
            TableId::RelationProj => store.relation_proj = Some(table),
            TableId::Radius => store.radius = Some(table),
        }
    }
    Ok((store, spec))
}

fn read_table(text: &str, file: &str, rows: usize, cols: usize) -> Result<Table, StoreError> {
    let mut values = Vec::with_capacity(rows * cols);
    let mut found = 0;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        found += 1;
        if found > rows {
            continue;
        }
        let before = values.len();
        for token in line.split_whitespace() {
            values.push(token.parse::<f64>().map_err(|_| StoreError::Malformed {
                file: file.into(),
                line: i + 1,
                message: format!("not a number: {token:?}"),
            })?);
        }
        let n = values.len() - before;
        if n != cols {
            return Err(StoreError::DimensionMismatch {
                file: file.into(),
                line: i + 1,
                expected: cols,
                found: n,
            });
        }
    }
    if found != rows {
        return Err(StoreError::RowCount {
            file: file.into(),
            expected: rows,
            found,
        });
    }
    Ok(Table::from_vec(rows, cols, values))
}
