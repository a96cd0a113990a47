//! Score functions and their gradients for the five translational models.
//!
//! Every model scores a triple the same way: project head and tail into the
//! relation space, form the residual `proj(h) + r - proj(t)`, and take its
//! norm. The models differ only in the projection (identity, hyperplane,
//! matrix, dynamic vector) and, for SphereE, in comparing the residual norm
//! against a squared radius. Lower scores are more plausible.
//!
//! Evaluation reuses [`project_entity`] and [`combine`] on cached projections,
//! so a score computed here and one computed by the evaluator agree bit for
//! bit.

use crate::kg::Triple;
use crate::linalg::{axpy, dot, mat_t_vec_acc, mat_vec, norm, norm_gradient, sign};
use crate::store::{transd_project, ModelKind, ModelSpec, ParamStore, Touched};

/// Local copy of one entity's parameters (or their gradient).
#[derive(Clone, Debug, PartialEq)]
pub struct EntityRows {
    pub vec: Vec<f64>,
    /// TransD projection vector; empty for the other models.
    pub proj: Vec<f64>,
}

impl EntityRows {
    pub fn zeros(spec: &ModelSpec) -> Self {
        let proj = if spec.kind == ModelKind::TransD {
            spec.dim
        } else {
            0
        };
        EntityRows {
            vec: vec![0.0; spec.dim],
            proj: vec![0.0; proj],
        }
    }

    pub fn load(&mut self, store: &ParamStore, id: u32) {
        store.entity.read_row(id as usize, &mut self.vec);
        if let Some(t) = &store.entity_proj {
            t.read_row(id as usize, &mut self.proj);
        }
    }

    pub fn clear(&mut self) {
        self.vec.iter_mut().for_each(|x| *x = 0.0);
        self.proj.iter_mut().for_each(|x| *x = 0.0);
    }

    fn apply(&self, store: &ParamStore, id: u32, alpha: f64) {
        store.entity.add_to_row(id as usize, alpha, &self.vec);
        if let Some(t) = &store.entity_proj {
            t.add_to_row(id as usize, alpha, &self.proj);
        }
    }
}

/// Local copy of one relation's parameters (or their gradient). Fields a
/// model does not use are empty.
#[derive(Clone, Debug, PartialEq)]
pub struct RelationRows {
    /// `r` (TransH: `d_r`), length `d`.
    pub translation: Vec<f64>,
    /// TransH `w_r`, length `k`.
    pub normal: Vec<f64>,
    /// TransR `M_r`, row-major `d x k`.
    pub matrix: Vec<f64>,
    /// TransD `r_p`, length `d`.
    pub proj: Vec<f64>,
    /// SphereE `D_r`.
    pub radius: f64,
}

impl RelationRows {
    pub fn zeros(spec: &ModelSpec) -> Self {
        let (k, d) = (spec.dim, spec.rel_dim);
        let len = |kind, n| if spec.kind == kind { n } else { 0 };
        RelationRows {
            translation: vec![0.0; d],
            normal: vec![0.0; len(ModelKind::TransH, k)],
            matrix: vec![0.0; len(ModelKind::TransR, d * k)],
            proj: vec![0.0; len(ModelKind::TransD, d)],
            radius: 0.0,
        }
    }

    pub fn load(&mut self, store: &ParamStore, id: u32) {
        let r = id as usize;
        store.relation.read_row(r, &mut self.translation);
        if let Some(t) = &store.normal {
            t.read_row(r, &mut self.normal);
        }
        if let Some(t) = &store.proj_matrix {
            t.read_row(r, &mut self.matrix);
        }
        if let Some(t) = &store.relation_proj {
            t.read_row(r, &mut self.proj);
        }
        if let Some(t) = &store.radius {
            self.radius = t.get(r, 0);
        }
    }

    pub fn clear(&mut self) {
        for v in [
            &mut self.translation,
            &mut self.normal,
            &mut self.matrix,
            &mut self.proj,
        ] {
            v.iter_mut().for_each(|x| *x = 0.0);
        }
        self.radius = 0.0;
    }

    fn apply(&self, store: &ParamStore, id: u32, alpha: f64, learn_radius: bool) {
        let r = id as usize;
        store.relation.add_to_row(r, alpha, &self.translation);
        if let Some(t) = &store.normal {
            t.add_to_row(r, alpha, &self.normal);
        }
        if let Some(t) = &store.proj_matrix {
            t.add_to_row(r, alpha, &self.matrix);
        }
        if let Some(t) = &store.relation_proj {
            t.add_to_row(r, alpha, &self.proj);
        }
        if let (Some(t), true) = (&store.radius, learn_radius) {
            t.set(r, 0, t.get(r, 0) + alpha * self.radius);
        }
    }
}

/// Projects an entity into relation space (`out.len() == d`).
#[inline]
pub fn project_entity(spec: &ModelSpec, rel: &RelationRows, ent: &EntityRows, out: &mut [f64]) {
    match spec.kind {
        ModelKind::TransE | ModelKind::SphereE => out.copy_from_slice(&ent.vec),
        ModelKind::TransH => {
            let s = dot(&rel.normal, &ent.vec);
            for ((o, e), w) in out.iter_mut().zip(&ent.vec).zip(&rel.normal) {
                *o = e - s * w;
            }
        }
        ModelKind::TransR => mat_vec(&rel.matrix, spec.rel_dim, spec.dim, &ent.vec, out),
        ModelKind::TransD => transd_project(&ent.vec, &ent.proj, &rel.proj, out),
    }
}

/// Score from projected head and tail. Leaves `proj(h) + r - proj(t)` in
/// `residual`. Returns the score and, for SphereE, the residual norm.
#[inline]
pub fn combine(
    spec: &ModelSpec,
    rel: &RelationRows,
    head: &[f64],
    tail: &[f64],
    residual: &mut [f64],
) -> (f64, Option<f64>) {
    for (((o, h), r), t) in residual
        .iter_mut()
        .zip(head)
        .zip(&rel.translation)
        .zip(tail)
    {
        *o = h + r - t;
    }
    let n = norm(spec.norm, residual);
    match spec.kind {
        ModelKind::SphereE => ((n - rel.radius * rel.radius).abs(), Some(n)),
        _ => (n, None),
    }
}

/// A score together with the quantities the gradient pass reuses.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreBreakdown {
    pub value: f64,
    pub projected_head: Vec<f64>,
    pub projected_tail: Vec<f64>,
    /// `proj(h) + r - proj(t)`.
    pub residual: Vec<f64>,
    /// SphereE's `|h + r - t|` before the radius is subtracted.
    pub manifold: Option<f64>,
}

/// Scores `triple` against the current store contents.
pub fn score(spec: &ModelSpec, store: &ParamStore, triple: &Triple) -> ScoreBreakdown {
    let mut rel = RelationRows::zeros(spec);
    let mut head = EntityRows::zeros(spec);
    let mut tail = EntityRows::zeros(spec);
    rel.load(store, triple.relation);
    head.load(store, triple.head);
    tail.load(store, triple.tail);

    let d = spec.rel_dim;
    let mut ph = vec![0.0; d];
    let mut pt = vec![0.0; d];
    let mut residual = vec![0.0; d];
    project_entity(spec, &rel, &head, &mut ph);
    project_entity(spec, &rel, &tail, &mut pt);
    let (value, manifold) = combine(spec, &rel, &ph, &pt, &mut residual);
    ScoreBreakdown {
        value,
        projected_head: ph,
        projected_tail: pt,
        residual,
        manifold,
    }
}

/// Gradient of a single triple's score with respect to the parameters it
/// reads. When head and tail are the same entity the two parts must be summed.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreGradient {
    pub value: f64,
    pub head: EntityRows,
    pub tail: EntityRows,
    pub relation: RelationRows,
}

pub fn score_gradient(spec: &ModelSpec, store: &ParamStore, triple: &Triple) -> ScoreGradient {
    let mut ents = [EntityRows::zeros(spec), EntityRows::zeros(spec)];
    ents[0].load(store, triple.head);
    ents[1].load(store, triple.tail);
    let mut rel = RelationRows::zeros(spec);
    rel.load(store, triple.relation);

    let mut grads = [EntityRows::zeros(spec), EntityRows::zeros(spec)];
    let mut relation = RelationRows::zeros(spec);
    let mut scratch = Scratch::new(spec);
    let value = accumulate(
        spec,
        &rel,
        &ents,
        0,
        1,
        1.0,
        &mut scratch,
        &mut grads,
        &mut relation,
    );
    let [head, tail] = grads;
    ScoreGradient {
        value,
        head,
        tail,
        relation,
    }
}

/// One SGD step on `s(golden) - s(corrupted)` written straight into the
/// shared store. Constraints are not restored; see [`Workspace::train_pair`]
/// for the full hinge-gated update.
pub fn gradient_step(
    spec: &ModelSpec,
    store: &ParamStore,
    golden: &Triple,
    corrupted: &Triple,
    learning_rate: f64,
) {
    Workspace::new(spec).gradient_step(store, golden, corrupted, learning_rate);
}

#[derive(Clone, Debug)]
struct Scratch {
    ph: Vec<f64>,
    pt: Vec<f64>,
    residual: Vec<f64>,
    g: Vec<f64>,
    dh: Vec<f64>,
    dt: Vec<f64>,
    dhp: Vec<f64>,
    dtp: Vec<f64>,
}

impl Scratch {
    fn new(spec: &ModelSpec) -> Self {
        let (k, d) = (spec.dim, spec.rel_dim);
        Scratch {
            ph: vec![0.0; d],
            pt: vec![0.0; d],
            residual: vec![0.0; d],
            g: vec![0.0; d],
            dh: vec![0.0; k],
            dt: vec![0.0; k],
            dhp: vec![0.0; k],
            dtp: vec![0.0; k],
        }
    }
}

/// Adds `weight * grad s(ents[h], rel, ents[t])` into `grads[h]`, `grads[t]`
/// and `rel_grad`, returning the score. `h` and `t` may name the same slot.
#[allow(clippy::too_many_arguments)]
#[allow(clippy::needless_range_loop)]
fn accumulate(
    spec: &ModelSpec,
    rel: &RelationRows,
    ents: &[EntityRows],
    h: usize,
    t: usize,
    weight: f64,
    sc: &mut Scratch,
    grads: &mut [EntityRows],
    rel_grad: &mut RelationRows,
) -> f64 {
    let (head, tail) = (&ents[h], &ents[t]);
    let (k, d) = (spec.dim, spec.rel_dim);
    project_entity(spec, rel, head, &mut sc.ph);
    project_entity(spec, rel, tail, &mut sc.pt);
    let (value, manifold) = combine(spec, rel, &sc.ph, &sc.pt, &mut sc.residual);

    // g = d score / d residual
    norm_gradient(spec.norm, &sc.residual, &mut sc.g);
    if let Some(m) = manifold {
        let side = sign(m - rel.radius * rel.radius);
        sc.g.iter_mut().for_each(|x| *x *= side);
        rel_grad.radius += weight * side * (-2.0 * rel.radius);
    }
    let g = &sc.g;

    match spec.kind {
        ModelKind::TransE | ModelKind::SphereE => {
            sc.dh.copy_from_slice(g);
            for (o, x) in sc.dt.iter_mut().zip(g) {
                *o = -x;
            }
        }
        ModelKind::TransH => {
            let w = &rel.normal;
            let wg = dot(w, g);
            for i in 0..k {
                sc.dh[i] = g[i] - wg * w[i];
                sc.dt[i] = -sc.dh[i];
            }
            // residual = u - (w.u) w + d_r with u = h - t
            let wu = dot(w, &head.vec) - dot(w, &tail.vec);
            for i in 0..k {
                let u = head.vec[i] - tail.vec[i];
                rel_grad.normal[i] -= weight * (wg * u + wu * g[i]);
            }
        }
        ModelKind::TransR => {
            sc.dh.iter_mut().for_each(|x| *x = 0.0);
            mat_t_vec_acc(&rel.matrix, d, k, 1.0, g, &mut sc.dh);
            for (o, x) in sc.dt.iter_mut().zip(&sc.dh) {
                *o = -x;
            }
            for (row, gi) in rel_grad.matrix.chunks_exact_mut(k).zip(g) {
                for ((m, h), t) in row.iter_mut().zip(&head.vec).zip(&tail.vec) {
                    *m += weight * gi * (h - t);
                }
            }
        }
        ModelKind::TransD => {
            let grp = dot(g, &rel.proj);
            let sh = dot(&head.proj, &head.vec);
            let st = dot(&tail.proj, &tail.vec);
            for i in 0..k {
                let pad = if i < d { g[i] } else { 0.0 };
                sc.dh[i] = grp * head.proj[i] + pad;
                sc.dhp[i] = grp * head.vec[i];
                sc.dt[i] = -(grp * tail.proj[i] + pad);
                sc.dtp[i] = -grp * tail.vec[i];
            }
            axpy(weight * (sh - st), g, &mut rel_grad.proj);
        }
    }
    axpy(weight, g, &mut rel_grad.translation);
    axpy(weight, &sc.dh, &mut grads[h].vec);
    axpy(weight, &sc.dt, &mut grads[t].vec);
    if spec.kind == ModelKind::TransD {
        axpy(weight, &sc.dhp, &mut grads[h].proj);
        axpy(weight, &sc.dtp, &mut grads[t].proj);
    }
    value
}

/// Outcome of one golden/corrupted pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairOutcome {
    pub golden_score: f64,
    pub corrupted_score: f64,
    /// `s(golden) + margin - s(corrupted)`; an update happened iff positive.
    pub hinge: f64,
}

impl PairOutcome {
    pub fn active(&self) -> bool {
        self.hinge > 0.0
    }
}

/// Per-worker scratch space for scoring and updating triple pairs without
/// allocating.
#[derive(Clone, Debug)]
pub struct Workspace {
    spec: ModelSpec,
    learn_radius: bool,
    gathered: usize,
    ids: [u32; 4],
    ents: [EntityRows; 4],
    grads: [EntityRows; 4],
    rel: RelationRows,
    rel_grad: RelationRows,
    scratch: Scratch,
}

/// Local slots of (h, t, h', t').
type Slots = [usize; 4];

impl Workspace {
    pub fn new(spec: &ModelSpec) -> Self {
        let rows = || std::array::from_fn(|_| EntityRows::zeros(spec));
        Workspace {
            spec: *spec,
            learn_radius: true,
            gathered: 0,
            ids: [0; 4],
            ents: rows(),
            grads: rows(),
            rel: RelationRows::zeros(spec),
            rel_grad: RelationRows::zeros(spec),
            scratch: Scratch::new(spec),
        }
    }

    /// Keep SphereE radii fixed during updates.
    pub fn freeze_radius(mut self, freeze: bool) -> Self {
        self.learn_radius = !freeze;
        self
    }

    /// Scores both triples of a pair from one local snapshot of their rows
    /// and, when the hinge `s(golden) + margin - s(corrupted)` is positive,
    /// applies one SGD step to it and restores the constraints on every
    /// touched row.
    pub fn train_pair(
        &mut self,
        store: &ParamStore,
        golden: &Triple,
        corrupted: &Triple,
        margin: f64,
        learning_rate: f64,
    ) -> PairOutcome {
        let [h, t, hc, tc] = self.gather(store, golden, corrupted);
        let golden_score = self.score_slots(h, t);
        let corrupted_score = self.score_slots(hc, tc);
        let outcome = PairOutcome {
            golden_score,
            corrupted_score,
            hinge: golden_score + margin - corrupted_score,
        };
        if outcome.active() {
            self.pair_gradient([h, t, hc, tc]);
            self.apply(store, golden.relation, learning_rate);
            store.renormalize(
                &self.spec,
                Touched {
                    entities: &self.ids[..self.gathered],
                    relations: &[golden.relation],
                },
            );
        }
        outcome
    }

    /// Unconditional step on `s(golden) - s(corrupted)`, without restoring
    /// constraints.
    pub fn gradient_step(
        &mut self,
        store: &ParamStore,
        golden: &Triple,
        corrupted: &Triple,
        learning_rate: f64,
    ) {
        let slots = self.gather(store, golden, corrupted);
        self.pair_gradient(slots);
        self.apply(store, golden.relation, learning_rate);
    }

    fn gather(&mut self, store: &ParamStore, golden: &Triple, corrupted: &Triple) -> Slots {
        assert_eq!(
            golden.relation, corrupted.relation,
            "a training pair shares its relation"
        );
        self.gathered = 0;
        let mut slots = [0; 4];
        for (slot, id) in
            slots
                .iter_mut()
                .zip([golden.head, golden.tail, corrupted.head, corrupted.tail])
        {
            *slot = match self.ids[..self.gathered].iter().position(|&x| x == id) {
                Some(i) => i,
                None => {
                    self.ids[self.gathered] = id;
                    self.ents[self.gathered].load(store, id);
                    self.gathered += 1;
                    self.gathered - 1
                }
            };
        }
        self.rel.load(store, golden.relation);
        slots
    }

    fn score_slots(&mut self, h: usize, t: usize) -> f64 {
        let sc = &mut self.scratch;
        project_entity(&self.spec, &self.rel, &self.ents[h], &mut sc.ph);
        project_entity(&self.spec, &self.rel, &self.ents[t], &mut sc.pt);
        combine(&self.spec, &self.rel, &sc.ph, &sc.pt, &mut sc.residual).0
    }

    fn pair_gradient(&mut self, [h, t, hc, tc]: Slots) {
        for g in &mut self.grads[..self.gathered] {
            g.clear();
        }
        self.rel_grad.clear();
        let ents = &self.ents[..self.gathered];
        let grads = &mut self.grads[..self.gathered];
        accumulate(
            &self.spec,
            &self.rel,
            ents,
            h,
            t,
            1.0,
            &mut self.scratch,
            grads,
            &mut self.rel_grad,
        );
        accumulate(
            &self.spec,
            &self.rel,
            ents,
            hc,
            tc,
            -1.0,
            &mut self.scratch,
            grads,
            &mut self.rel_grad,
        );
    }

    fn apply(&self, store: &ParamStore, relation: u32, learning_rate: f64) {
        for (g, &id) in self.grads.iter().zip(&self.ids).take(self.gathered) {
            g.apply(store, id, -learning_rate);
        }
        self.rel_grad
            .apply(store, relation, -learning_rate, self.learn_radius);
    }
}
