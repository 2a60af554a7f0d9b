//! Single-site dynamics and reachability on the configuration graph.
//!
//! Two configurations are adjacent when they differ at one vertex. Moves are
//! restricted to a set of movable vertices with everything else frozen, and
//! all searches run breadth-first over packed `u128` keys in a canonical
//! order (vertices ascending, states ascending).

use std::collections::HashMap;

use rand::Rng;
use rustc_hash::FxHashSet;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::spin_model::{sample_cumulative, SpinKernel, State};
use crate::tree_config::{
    conditional_root_marginal, enumerate_with, is_valid, sample_conditional, Boundary,
    Configuration, Enumeration, TreeShape,
};

/// Frozen vertices and parent-of-root state seen by the dynamics.
pub type BoundarySpec = Boundary;

/// A subset of `[k]` for `k <= 64`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct ColorSet(pub u64);

impl ColorSet {
    pub fn full(k: usize) -> Self {
        ColorSet(if k == 64 { u64::MAX } else { (1u64 << k) - 1 })
    }

    pub fn single(s: State) -> Self {
        ColorSet(1 << s)
    }

    pub fn contains(self, s: State) -> bool {
        self.0 >> s & 1 == 1
    }

    pub fn insert(&mut self, s: State) {
        self.0 |= 1 << s;
    }

    pub fn remove(self, s: State) -> Self {
        ColorSet(self.0 & !(1 << s))
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = State> {
        (0..64u8).filter(move |&s| self.0 >> s & 1 == 1)
    }

    /// 1-based, e.g. `{1,3}`.
    pub fn label(self) -> String {
        let parts: Vec<String> = self.iter().map(|s| (s + 1).to_string()).collect();
        format!("{{{}}}", parts.join(","))
    }
}

/// States compatible with `s` on an edge.
fn compat_mask(kernel: &SpinKernel, s: State) -> ColorSet {
    let mut m = ColorSet(0);
    for t in 0..kernel.k() as State {
        if kernel.compatible(s, t) {
            m.insert(t);
        }
    }
    m
}

/// Law of `sigma_v` given every other vertex.
pub fn site_conditional(
    shape: &TreeShape,
    kernel: &SpinKernel,
    parent_of_root: Option<State>,
    states: &[State],
    v: usize,
) -> Vec<f64> {
    let k = kernel.k();
    let above: Option<State> = match shape.parent(v) {
        Some(p) => Some(states[p]),
        None => parent_of_root,
    };
    let mut w: Vec<f64> = match above {
        Some(a) => kernel.row(a).to_vec(),
        None => kernel.pi().to_vec(),
    };
    for c in shape.children(v) {
        for (s, ws) in w.iter_mut().enumerate().take(k) {
            *ws *= kernel.entry(s as State, states[c]);
        }
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    w
}

/// One line of a trajectory log.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub vertex: usize,
    pub old_state: usize,
    pub new_state: usize,
}

fn check_start(shape: &TreeShape, kernel: &SpinKernel, boundary: &Boundary, states: &[State]) -> Result<()> {
    boundary.check(shape, kernel)?;
    if states.len() != shape.n() {
        return Err(Error::InconsistentBoundary("configuration has the wrong length".into()));
    }
    if !boundary.admits(states) {
        return Err(Error::InconsistentBoundary("configuration disagrees with a frozen vertex".into()));
    }
    if !is_valid(shape, kernel, states)
        || boundary.parent_of_root().is_some_and(|p| !kernel.compatible(p, states[0]))
    {
        return Err(Error::InconsistentBoundary("configuration is not valid".into()));
    }
    Ok(())
}

/// Resamples one uniformly chosen unfrozen vertex from its exact conditional.
pub fn glauber_step<R: Rng + ?Sized>(
    config: &Configuration,
    shape: &TreeShape,
    kernel: &SpinKernel,
    boundary: &BoundarySpec,
    rng: &mut R,
) -> Result<Configuration> {
    check_start(shape, kernel, boundary, &config.states)?;
    let mut states = config.states.clone();
    let free: Vec<usize> = (0..shape.n()).filter(|&v| !boundary.is_frozen(v)).collect();
    glauber_move(&mut states, &free, shape, kernel, boundary.parent_of_root(), rng);
    Ok(Configuration::new(states))
}

/// The in-place move behind `glauber_step`; returns `(vertex, old, new)`.
fn glauber_move<R: Rng + ?Sized>(
    states: &mut [State],
    free: &[usize],
    shape: &TreeShape,
    kernel: &SpinKernel,
    parent_of_root: Option<State>,
    rng: &mut R,
) -> Option<(usize, State, State)> {
    if free.is_empty() {
        return None;
    }
    let v = free[rng.random_range(0..free.len())];
    let p = site_conditional(shape, kernel, parent_of_root, states, v);
    let mut acc = 0.0;
    let cum: Vec<f64> = p
        .iter()
        .map(|x| {
            acc += x;
            acc
        })
        .collect();
    let old = states[v];
    states[v] = sample_cumulative(&cum, &p, rng);
    Some((v, old, states[v]))
}

/// Runs `steps` Glauber moves and logs every one (1-based states).
pub fn glauber_trajectory<R: Rng + ?Sized>(
    start: &Configuration,
    shape: &TreeShape,
    kernel: &SpinKernel,
    boundary: &BoundarySpec,
    steps: usize,
    rng: &mut R,
) -> Result<(Configuration, Vec<StepRecord>)> {
    check_start(shape, kernel, boundary, &start.states)?;
    let mut states = start.states.clone();
    let free: Vec<usize> = (0..shape.n()).filter(|&v| !boundary.is_frozen(v)).collect();
    let mut log = Vec::with_capacity(steps);
    for step in 1..=steps {
        if let Some((v, a, b)) = glauber_move(&mut states, &free, shape, kernel, boundary.parent_of_root(), rng) {
            log.push(StepRecord {
                step,
                vertex: v,
                old_state: a as usize + 1,
                new_state: b as usize + 1,
            });
        }
    }
    Ok((Configuration::new(states), log))
}

/// Single-site moves over a set of movable vertices, everything else frozen
/// at `base`. Keys pack the movable states with the first vertex in the most
/// significant bits, so key order is lexicographic order.
struct MoveSpace<'a> {
    shape: &'a TreeShape,
    kernel: &'a SpinKernel,
    movable: Vec<usize>,
    movable_mask: Vec<bool>,
    log_m: Vec<f64>,
    bits: u32,
    parent_of_root: Option<State>,
    compat: Vec<ColorSet>,
}

impl<'a> MoveSpace<'a> {
    fn new(
        shape: &'a TreeShape,
        kernel: &'a SpinKernel,
        movable: Vec<usize>,
        parent_of_root: Option<State>,
    ) -> Result<Self> {
        let bits = (usize::BITS - (kernel.k().max(2) - 1).leading_zeros()).max(1);
        if movable.len() as u32 * bits > 128 {
            return Err(Error::too_large(
                "packed block",
                (movable.len() as u32 * bits) as f64,
                128,
            ));
        }
        let mut movable_mask = vec![false; shape.n()];
        for &v in &movable {
            movable_mask[v] = true;
        }
        let k = kernel.k();
        let log_m = (0..k * k).map(|i| kernel.entry((i / k) as State, (i % k) as State).ln()).collect();
        let compat = (0..k as State).map(|s| compat_mask(kernel, s)).collect();
        Ok(Self { shape, kernel, movable, movable_mask, log_m, bits, parent_of_root, compat })
    }

    fn shift(&self, i: usize) -> u32 {
        (self.movable.len() - 1 - i) as u32 * self.bits
    }

    fn pack(&self, states: &[State]) -> u128 {
        self.movable
            .iter()
            .enumerate()
            .fold(0u128, |acc, (i, &v)| acc | (states[v] as u128) << self.shift(i))
    }

    fn unpack(&self, key: u128, states: &mut [State]) {
        let mask = (1u128 << self.bits) - 1;
        for (i, &v) in self.movable.iter().enumerate() {
            states[v] = (key >> self.shift(i) & mask) as State;
        }
    }

    /// States `v` may take given its current neighbors.
    fn allowed(&self, states: &[State], v: usize) -> ColorSet {
        let mut m = match self.shape.parent(v) {
            Some(p) => self.compat[states[p] as usize],
            None => match self.parent_of_root {
                Some(p) => self.compat[p as usize],
                None => ColorSet::full(self.kernel.k()),
            },
        };
        for c in self.shape.children(v) {
            m.0 &= self.compat[states[c] as usize].0;
        }
        m
    }

    /// Calls `f` with the key of every neighbor of `states`.
    fn for_each_neighbor(&self, states: &[State], key: u128, mut f: impl FnMut(u128)) {
        for (i, &v) in self.movable.iter().enumerate() {
            let cur = states[v];
            let sh = self.shift(i);
            for s in self.allowed(states, v).remove(cur).iter() {
                f(key ^ ((cur ^ s) as u128) << sh);
            }
        }
    }

    /// Breadth-first closure of `start`. `visit` sees each decoded
    /// configuration and may stop the search by returning `false`.
    fn bfs(
        &self,
        start: &[State],
        guard: usize,
        mut visit: impl FnMut(&[State], u128) -> bool,
    ) -> Result<Vec<u128>> {
        let mut states = start.to_vec();
        let k0 = self.pack(start);
        let mut seen: FxHashSet<u128> = FxHashSet::default();
        seen.insert(k0);
        // `order` doubles as the queue
        let mut order = vec![k0];
        let mut head = 0;
        while head < order.len() {
            let key = order[head];
            head += 1;
            self.unpack(key, &mut states);
            if !visit(&states, key) {
                break;
            }
            self.for_each_neighbor(&states, key, |nk| {
                if seen.insert(nk) {
                    order.push(nk);
                }
            });
            if seen.len() > guard {
                return Err(Error::too_large("configuration-graph search", seen.len() as f64, guard));
            }
        }
        Ok(order)
    }

    /// Log of the factors of the Gibbs weight that involve a movable vertex.
    fn local_log_weight(&self, states: &[State]) -> f64 {
        let k = self.kernel.k();
        let lm = |a: State, b: State| self.log_m[a as usize * k + b as usize];
        let mut lw = 0.0;
        for &v in &self.movable {
            lw += match self.shape.parent(v) {
                Some(p) => lm(states[p], states[v]),
                None => match self.parent_of_root {
                    Some(p) => lm(p, states[v]),
                    None => self.kernel.pi()[states[v] as usize].ln(),
                },
            };
            for c in self.shape.children(v) {
                if !self.movable_mask[c] {
                    lw += lm(states[v], states[c]);
                }
            }
        }
        lw
    }
}

/// `C(x)`: states `x` can reach in one step within `T_x`, with the bottom
/// level of the tree frozen and `x` held until its final move. The parent of
/// `x` plays no part.
pub fn one_step_change_set(
    config: &Configuration,
    shape: &TreeShape,
    kernel: &SpinKernel,
    x: usize,
    guard: usize,
) -> Result<ColorSet> {
    let states = &config.states;
    if shape.height(x) == 0 {
        return Ok(ColorSet::single(states[x]));
    }
    let movable: Vec<usize> = shape
        .subtree(x)
        .into_iter()
        .filter(|&v| v != x && shape.height(v) > 0)
        .collect();
    let children = shape.children(x);
    let compat: Vec<ColorSet> = (0..kernel.k() as State).map(|s| compat_mask(kernel, s)).collect();
    let full = ColorSet::full(kernel.k());
    let mut reach = ColorSet::single(states[x]);
    let mut collect = |s: &[State]| {
        let mut m = full;
        for c in children.clone() {
            m.0 &= compat[s[c] as usize].0;
        }
        reach.0 |= m.0;
        reach != full
    };
    if movable.is_empty() {
        collect(states);
        return Ok(reach);
    }
    let space = MoveSpace::new(shape, kernel, movable, None)?;
    space.bfs(states, guard, |s, _| collect(s))?;
    Ok(reach)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum VertexType {
    Rigid,
    Type2,
    Type3,
}

impl VertexType {
    fn of(c: ColorSet) -> Self {
        match c.len() {
            0 | 1 => VertexType::Rigid,
            2 => VertexType::Type2,
            _ => VertexType::Type3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VertexClassification {
    pub change_set: ColorSet,
    pub kind: VertexType,
    /// `C(x) \ {parent state} = {sigma_x}`; unknown without a parent state.
    pub bad: Option<bool>,
    pub free: bool,
}

impl VertexClassification {
    fn new(change_set: ColorSet, own: State, parent_state: Option<State>, k: usize) -> Self {
        Self {
            change_set,
            kind: VertexType::of(change_set),
            bad: parent_state.map(|p| change_set.remove(p) == ColorSet::single(own)),
            free: change_set == ColorSet::full(k),
        }
    }
}

/// Classification from the breadth-first change set.
pub fn classify_vertex(
    config: &Configuration,
    shape: &TreeShape,
    kernel: &SpinKernel,
    x: usize,
    parent_state: Option<State>,
    guard: usize,
) -> Result<VertexClassification> {
    let c = one_step_change_set(config, shape, kernel, x, guard)?;
    Ok(VertexClassification::new(c, config.states[x], parent_state, kernel.k()))
}

/// Bottom-up classification for proper colorings: `x` can move to `c` in one
/// step exactly when no bad child of `x` has color `c`. Bottom vertices are
/// rigid, hence bad. Parent states come from the configuration; the root has
/// none.
pub fn coloring_fast_classify(
    config: &Configuration,
    shape: &TreeShape,
    kernel: &SpinKernel,
) -> Result<Vec<VertexClassification>> {
    if !kernel.is_coloring() {
        return Err(Error::NotColoringModel);
    }
    let k = kernel.k();
    let s = &config.states;
    let mut out = vec![
        VertexClassification {
            change_set: ColorSet(0),
            kind: VertexType::Rigid,
            bad: None,
            free: false,
        };
        shape.n()
    ];
    let mut bad = vec![false; shape.n()];
    for v in (0..shape.n()).rev() {
        let mut blocked = ColorSet(0);
        for c in shape.children(v) {
            if bad[c] {
                blocked.insert(s[c]);
            }
        }
        let mut cs = ColorSet(ColorSet::full(k).0 & !blocked.0);
        if shape.height(v) == 0 {
            cs = ColorSet::single(s[v]);
        }
        cs.insert(s[v]);
        let parent = shape.parent(v).map(|p| s[p]);
        let cls = VertexClassification::new(cs, s[v], parent, k);
        bad[v] = cls.bad.unwrap_or(false);
        out[v] = cls;
    }
    Ok(out)
}

/// Whether `y` is free in `config`, by breadth-first search.
pub fn is_free(
    config: &Configuration,
    shape: &TreeShape,
    kernel: &SpinKernel,
    y: usize,
    guard: usize,
) -> Result<bool> {
    Ok(one_step_change_set(config, shape, kernel, y, guard)? == ColorSet::full(kernel.k()))
}

/// `Omega*` of a block: the configurations reachable from a seed by moves
/// inside the block, with the restricted Gibbs law.
#[derive(Clone, Debug)]
pub struct ComponentSet {
    pub x: usize,
    pub l: usize,
    /// Movable vertices of the block (frozen boundary vertices excluded).
    pub vertices: Vec<usize>,
    /// States on `vertices`, one member per `vertices.len()` chunk, sorted.
    pub members: Vec<State>,
    pub weights: Vec<f64>,
    /// Index of the seed configuration among the members.
    pub seed: usize,
}

impl ComponentSet {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn member(&self, i: usize) -> &[State] {
        let w = self.vertices.len();
        &self.members[i * w..(i + 1) * w]
    }

    /// Writes member `i` into a full configuration.
    pub fn apply(&self, i: usize, states: &mut [State]) {
        for (&v, &s) in self.vertices.iter().zip(self.member(i)) {
            states[v] = s;
        }
    }

    pub fn contains(&self, states: &[State]) -> bool {
        self.index_of(states).is_some()
    }

    /// Position of the member matching `states` on the block.
    pub fn index_of(&self, states: &[State]) -> Option<usize> {
        let probe: Vec<State> = self.vertices.iter().map(|&v| states[v]).collect();
        let (mut lo, mut hi) = (0, self.len());
        while lo < hi {
            let mid = (lo + hi) / 2;
            match self.member(mid).cmp(&probe[..]) {
                std::cmp::Ordering::Less => lo = mid + 1,
                std::cmp::Ordering::Greater => hi = mid,
                std::cmp::Ordering::Equal => return Some(mid),
            }
        }
        None
    }
}

/// Component of `config` for moves inside `B_{x,l}`; vertices outside the
/// block, and any block vertex frozen by `boundary`, stay put.
pub fn component_of(
    config: &Configuration,
    shape: &TreeShape,
    kernel: &SpinKernel,
    boundary: &Boundary,
    x: usize,
    l: usize,
    guard: usize,
) -> Result<ComponentSet> {
    check_start(shape, kernel, boundary, &config.states)?;
    let movable: Vec<usize> = shape.block(x, l).into_iter().filter(|&v| !boundary.is_frozen(v)).collect();
    let parent = if x == 0 { boundary.parent_of_root() } else { None };
    if movable.is_empty() {
        return Ok(ComponentSet {
            x,
            l,
            vertices: movable,
            members: Vec::new(),
            weights: vec![1.0],
            seed: 0,
        });
    }
    let space = MoveSpace::new(shape, kernel, movable, parent)?;
    let mut keys = space.bfs(&config.states, guard, |_, _| true)?;
    keys.sort_unstable();
    let seed_key = space.pack(&config.states);
    let seed = keys.binary_search(&seed_key).expect("seed is a member");
    let mut states = config.states.clone();
    let mut members = Vec::with_capacity(keys.len() * space.movable.len());
    let mut logw = Vec::with_capacity(keys.len());
    for &key in &keys {
        space.unpack(key, &mut states);
        members.extend(space.movable.iter().map(|&v| states[v]));
        logw.push(space.local_log_weight(&states));
    }
    Ok(ComponentSet {
        x,
        l,
        vertices: space.movable,
        members,
        weights: normalize_log(&logw),
        seed,
    })
}

pub(crate) fn normalize_log(logw: &[f64]) -> Vec<f64> {
    let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = logw.iter().map(|v| (v - max).exp()).collect();
    let t: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= t);
    w
}

/// Whether `a` and `b` lie in the same component of `B_{x,l}` (early exit).
pub fn same_component(
    a: &Configuration,
    b: &Configuration,
    shape: &TreeShape,
    kernel: &SpinKernel,
    boundary: &Boundary,
    x: usize,
    l: usize,
    guard: usize,
) -> Result<bool> {
    check_start(shape, kernel, boundary, &a.states)?;
    let block = shape.block(x, l);
    let outside_same = (0..shape.n())
        .filter(|v| !block.contains(v) || boundary.is_frozen(*v))
        .all(|v| a.states[v] == b.states[v]);
    if !outside_same {
        return Ok(false);
    }
    let movable: Vec<usize> = block.into_iter().filter(|&v| !boundary.is_frozen(v)).collect();
    if movable.is_empty() {
        return Ok(true);
    }
    let parent = if x == 0 { boundary.parent_of_root() } else { None };
    let space = MoveSpace::new(shape, kernel, movable, parent)?;
    let target = space.pack(&b.states);
    let mut found = false;
    space.bfs(&a.states, guard, |_, key| {
        found = key == target;
        !found
    })?;
    Ok(found)
}

/// One component-dynamics move: pick `x` uniformly, then redraw `B_{x,l}`
/// from the restricted law on the current component.
pub fn component_dynamics_step<R: Rng + ?Sized>(
    config: &Configuration,
    shape: &TreeShape,
    kernel: &SpinKernel,
    boundary: &Boundary,
    l: usize,
    rng: &mut R,
    guard: usize,
) -> Result<(Configuration, usize)> {
    let x = rng.random_range(0..shape.n());
    let comp = component_of(config, shape, kernel, boundary, x, l, guard)?;
    let mut states = config.states.clone();
    if !comp.vertices.is_empty() {
        let mut acc = 0.0;
        let cum: Vec<f64> = comp
            .weights
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        let i = sample_cumulative(&cum, &comp.weights, rng) as usize;
        comp.apply(i, &mut states);
    }
    Ok((Configuration::new(states), x))
}

/// Union-find over `Omega` (under `boundary`) with single-site moves at
/// unfrozen vertices. Returns the component label of every enumerated
/// configuration and the number of components.
pub fn glauber_components(
    shape: &TreeShape,
    kernel: &SpinKernel,
    boundary: &Boundary,
    enumeration: &Enumeration,
) -> (Vec<usize>, usize) {
    let n = enumeration.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    let free: Vec<usize> = (0..shape.n()).filter(|&v| !boundary.is_frozen(v)).collect();
    let mut buf = Vec::new();
    for i in 0..n {
        buf.clear();
        buf.extend_from_slice(enumeration.config(i));
        for &v in &free {
            let cur = buf[v];
            for s in (cur + 1)..kernel.k() as State {
                buf[v] = s;
                if let Some(j) = enumeration.index_of(&buf) {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    if a != b {
                        parent[a.max(b)] = a.min(b);
                    }
                }
            }
            buf[v] = cur;
        }
    }
    let mut label = vec![usize::MAX; n];
    let mut roots: HashMap<usize, usize> = HashMap::new();
    for i in 0..n {
        let r = find(&mut parent, i);
        let next = roots.len();
        label[i] = *roots.entry(r).or_insert(next);
    }
    let count = roots.len();
    (label, count)
}

/// Breadth-first connectivity of the Glauber dynamics on `Omega` under a
/// boundary: `(irreducible, component count)`.
pub fn is_irreducible(
    shape: &TreeShape,
    kernel: &SpinKernel,
    boundary: &Boundary,
    guard: usize,
) -> Result<(bool, usize)> {
    let e = enumerate_with(shape, kernel, boundary, guard)?;
    let (_, count) = glauber_components(shape, kernel, boundary, &e);
    Ok((count == 1, count))
}

/// A leaf assignment that splits `Omega` into several components, one of
/// them a single frozen configuration.
#[derive(Clone, Debug)]
pub struct PinningExample {
    pub boundary: Boundary,
    pub pinned: Configuration,
    pub component_count: usize,
    pub states: usize,
}

/// Scans leaf assignments in lexicographic order for the first one whose
/// configuration space (leaves frozen) has a singleton component next to
/// another component.
pub fn find_pinning_boundary(
    shape: &TreeShape,
    kernel: &SpinKernel,
    guard: usize,
) -> Result<Option<PinningExample>> {
    let leaves = shape.level_range(shape.depth());
    let k = kernel.k();
    let width = leaves.len();
    let total = (k as f64).powi(width as i32);
    if total > guard as f64 {
        return Err(Error::too_large("leaf assignments", total, guard));
    }
    let mut tau = vec![0 as State; width];
    loop {
        let mut b = Boundary::free(shape);
        b.freeze_all(leaves.clone(), &tau);
        match enumerate_with(shape, kernel, &b, guard) {
            Ok(e) if e.len() >= 2 => {
                let (label, count) = glauber_components(shape, kernel, &b, &e);
                if count >= 2 {
                    let mut sizes = vec![0usize; count];
                    for &c in &label {
                        sizes[c] += 1;
                    }
                    if let Some(i) = (0..e.len()).find(|&i| sizes[label[i]] == 1) {
                        return Ok(Some(PinningExample {
                            boundary: b,
                            pinned: Configuration::new(e.config(i).to_vec()),
                            component_count: count,
                            states: e.len(),
                        }));
                    }
                }
            }
            Ok(_) | Err(Error::ZeroProbabilityBoundary) | Err(Error::InconsistentBoundary(_)) => {}
            Err(e) => return Err(e),
        }
        let mut i = width;
        loop {
            if i == 0 {
                return Ok(None);
            }
            i -= 1;
            if (tau[i] as usize) + 1 < k {
                tau[i] += 1;
                break;
            }
            tau[i] = 0;
        }
    }
}

/// Outcome of the conditional-independence check on one boundary.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CondIndepReport {
    pub max_discrepancy: f64,
    /// Cut-level configurations with a good member in the component.
    pub eta_checked: usize,
    pub component_size: usize,
    pub good_mass: f64,
}

/// The tree on which the block `B_{0,l}` has its outer boundary at level
/// `l + 1`.
pub fn condindep_shape(d: usize, l: usize) -> Result<TreeShape> {
    TreeShape::new(d, l + 1)
}

/// Compares, for every cut configuration `eta` on level `h`,
///
/// `mu*(sigma_0 = c' | sigma_{L_h} = eta, A_tau)` against
/// `mu^c(sigma_0 = c' | sigma_{L_h} = eta)`,
///
/// where `mu*` is the Gibbs law (parent of the root at `c`) restricted to the
/// component of `tau` in `B_{0,l}` with level `l + 1` frozen by `tau`, and
/// `A_tau` asks every vertex on level `h + 2` to be free. Returns the largest
/// gap over `eta` and over `c'` (all states when `c_prime` is `None`).
#[allow(clippy::too_many_arguments)]
pub fn check_condindep(
    shape: &TreeShape,
    kernel: &SpinKernel,
    l: usize,
    h: usize,
    tau: &Configuration,
    parent_state: State,
    c_prime: Option<State>,
    guard: usize,
) -> Result<CondIndepReport> {
    if shape.depth() != l + 1 {
        return Err(Error::InvalidParams(format!(
            "the block B(root, {l}) needs a tree of depth {}",
            l + 1
        )));
    }
    if h + 2 >= l {
        return Err(Error::InvalidParams(format!("cut {h} needs h + 2 < l = {l}")));
    }
    let k = kernel.k();
    let mut boundary = Boundary::free(shape).with_parent(Some(parent_state));
    let bottom = shape.level_range(l + 1);
    boundary.freeze_all(bottom.clone(), &tau.states[bottom]);
    let comp = component_of(tau, shape, kernel, &boundary, 0, l, guard)?;
    let cut = shape.level_range(h);
    let check_level = shape.level_range(h + 2);
    let coloring = kernel.is_coloring();
    let mut by_eta: HashMap<Vec<State>, Vec<f64>> = HashMap::new();
    let mut states = tau.states.clone();
    let mut good_mass = 0.0;
    for i in 0..comp.len() {
        comp.apply(i, &mut states);
        let cfg = Configuration::new(std::mem::take(&mut states));
        let good = if coloring {
            let cls = coloring_fast_classify(&cfg, shape, kernel)?;
            check_level.clone().all(|y| cls[y].free)
        } else {
            let mut all = true;
            for y in check_level.clone() {
                if !is_free(&cfg, shape, kernel, y, guard)? {
                    all = false;
                    break;
                }
            }
            all
        };
        states = cfg.states;
        if good {
            let w = comp.weights[i];
            good_mass += w;
            let entry = by_eta.entry(states[cut.clone()].to_vec()).or_insert_with(|| vec![0.0; k + 1]);
            entry[k] += w;
            entry[states[0] as usize] += w;
        }
    }
    if by_eta.is_empty() {
        return Err(Error::EmptyGoodSet);
    }
    let mut keys: Vec<&Vec<State>> = by_eta.keys().collect();
    keys.sort();
    let mut worst: f64 = 0.0;
    for eta in keys {
        let acc = &by_eta[eta];
        let mut b = Boundary::free(shape);
        b.freeze_all(cut.clone(), eta);
        let rhs = conditional_root_marginal(shape, kernel, &b, 0, h, Some(parent_state))?;
        let states_to_check: Vec<State> = match c_prime {
            Some(c) => vec![c],
            None => (0..k as State).collect(),
        };
        for c in states_to_check {
            let lhs = acc[c as usize] / acc[k];
            worst = worst.max((lhs - rhs[c as usize]).abs());
        }
    }
    Ok(CondIndepReport {
        max_discrepancy: worst,
        eta_checked: by_eta.len(),
        component_size: comp.len(),
        good_mass,
    })
}

/// Whether every vertex on level `h + 2` is free.
fn in_good_set(
    cfg: &Configuration,
    shape: &TreeShape,
    kernel: &SpinKernel,
    h: usize,
    guard: usize,
) -> Result<bool> {
    if kernel.is_coloring() {
        let cls = coloring_fast_classify(cfg, shape, kernel)?;
        return Ok(shape.level_range(h + 2).all(|y| cls[y].free));
    }
    for y in shape.level_range(h + 2) {
        if !is_free(cfg, shape, kernel, y, guard)? {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Rejection attempts per triple when drawing `sigma` from `A_tau`.
pub const MEMBERSHIP_TRIES: usize = 2000;

/// A boundary draw that lies in its own good set when `h + 2 = l - 1`: a
/// broadcast coloring (root's parent at `parent_state`) whose level `l + 1`
/// is recolored with the grandparent states. Every vertex on level `l` then
/// sees children of a single color, the one it needs to stay good, so every
/// vertex on level `l - 1` is free. Broadcast draws almost never have this
/// property for small `k`.
pub fn seeded_tau<R: Rng + ?Sized>(
    shape: &TreeShape,
    kernel: &SpinKernel,
    l: usize,
    parent_state: State,
    rng: &mut R,
) -> Result<Configuration> {
    if !kernel.is_coloring() {
        return Err(Error::NotColoringModel);
    }
    if shape.depth() != l + 1 || l < 1 {
        return Err(Error::InvalidParams(format!("need a tree of depth l + 1 with l >= 1, got l={l}")));
    }
    let root = kernel.sample_next(parent_state, rng);
    let mut tau = crate::tree_config::broadcast_sample(shape, kernel, rng, Some(root));
    for v in shape.level_range(l + 1) {
        let grand = shape.parent(shape.parent(v).expect("below the root")).expect("below level one");
        tau.states[v] = tau.states[grand];
    }
    Ok(tau)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MembershipReport {
    pub trials: usize,
    pub counterexamples: usize,
    /// Draws abandoned because no good configuration turned up.
    pub skipped: usize,
    /// Triples where the two configurations differ above the cut.
    pub nontrivial: usize,
}

/// Random triples `(tau, sigma, sigma')`: `tau` is a broadcast draw with the
/// root's parent at `c` (or [`seeded_tau`] when `seeded`), `sigma` a draw from
/// `Omega^tau` in `A_tau` by rejection, and `sigma'` redraws `B_{0,h-1}` of
/// `sigma` given the rest. Both lie in `A_tau` and agree from the cut down,
/// so they should be connected inside `B_{0,l}`.
#[allow(clippy::too_many_arguments)]
pub fn membership_trials(
    shape: &TreeShape,
    kernel: &SpinKernel,
    l: usize,
    h: usize,
    parent_state: State,
    trials: usize,
    seed: u64,
    seeded: bool,
    guard: usize,
) -> Result<MembershipReport> {
    if shape.depth() != l + 1 || h + 2 >= l || h == 0 {
        return Err(Error::InvalidParams(format!("need depth l+1 and 0 < h, h + 2 < l; got l={l}, h={h}")));
    }
    let mut report = MembershipReport { trials: 0, counterexamples: 0, skipped: 0, nontrivial: 0 };
    let bottom = shape.level_range(l + 1);
    for t in 0..trials {
        let mut rng = stream_rng(seed, t as u64);
        let tau = if seeded {
            seeded_tau(shape, kernel, l, parent_state, &mut rng)?
        } else {
            let root = kernel.sample_next(parent_state, &mut rng);
            crate::tree_config::broadcast_sample(shape, kernel, &mut rng, Some(root))
        };
        let mut boundary = Boundary::free(shape).with_parent(Some(parent_state));
        boundary.freeze_all(bottom.clone(), &tau.states[bottom.clone()]);
        let mut sigma = None;
        for _ in 0..MEMBERSHIP_TRIES {
            let s = sample_conditional(shape, kernel, &boundary, &mut rng)?;
            if in_good_set(&s, shape, kernel, h, guard)? {
                sigma = Some(s);
                break;
            }
        }
        let Some(sigma) = sigma else {
            report.skipped += 1;
            continue;
        };
        let upper = shape.block(0, h - 1);
        let inner = Boundary::outside(shape, &sigma.states, &upper, Some(parent_state));
        let sigma2 = sample_conditional(shape, kernel, &inner, &mut rng)?;
        report.trials += 1;
        if upper.iter().any(|&v| sigma.states[v] != sigma2.states[v]) {
            report.nontrivial += 1;
        }
        if !same_component(&sigma, &sigma2, shape, kernel, &boundary, 0, l, guard)? {
            report.counterexamples += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree_config::{broadcast_sample, enumerate};
    use crate::DEFAULT_GUARD;

    fn col(k: usize) -> SpinKernel {
        SpinKernel::coloring(k).unwrap()
    }

    fn cfg(v: &[u8]) -> Configuration {
        Configuration::new(v.iter().map(|s| s - 1).collect())
    }

    #[test]
    fn isolated_vertex_resamples_uniformly() {
        let t = TreeShape::new(2, 0).unwrap();
        let k = col(3);
        let mut rng = stream_rng(1, 0);
        let mut counts = [0usize; 3];
        let mut c = cfg(&[1]);
        for _ in 0..30_000 {
            c = glauber_step(&c, &t, &k, &Boundary::free(&t), &mut rng).unwrap();
            counts[c.states[0] as usize] += 1;
        }
        for n in counts {
            assert!((n as f64 / 30_000.0 - 1.0 / 3.0).abs() < 0.015);
        }
    }

    #[test]
    fn pinned_root_stays() {
        let t = TreeShape::new(2, 1).unwrap();
        let k = col(3);
        let mut b = Boundary::free(&t);
        b.freeze_all(1..3, &[1, 2]);
        let mut rng = stream_rng(2, 0);
        let mut c = cfg(&[1, 2, 3]);
        for _ in 0..100 {
            c = glauber_step(&c, &t, &k, &b, &mut rng).unwrap();
            assert_eq!(c.states, vec![0, 1, 2]);
        }
        let bad = cfg(&[1, 1, 3]);
        assert!(matches!(
            glauber_step(&bad, &t, &k, &Boundary::free(&t), &mut rng),
            Err(Error::InconsistentBoundary(_))
        ));
    }

    #[test]
    fn steps_stay_valid_and_respect_frozen_vertices() {
        let t = TreeShape::new(2, 3).unwrap();
        let k = col(4);
        let mut rng = stream_rng(3, 0);
        let mut b = Boundary::free(&t).with_parent(Some(2));
        let start = sample_conditional(&t, &k, &b, &mut rng).unwrap();
        for v in [3usize, 9, 14] {
            b.freeze(v, start.states[v]);
        }
        let (end, log) = glauber_trajectory(&start, &t, &k, &b, 2000, &mut rng).unwrap();
        assert!(end.is_valid(&t, &k) && b.admits(&end.states));
        assert!(k.compatible(2, end.states[0]));
        assert!(log.iter().all(|r| ![3, 9, 14].contains(&r.vertex)));
    }

    #[test]
    fn change_set_examples() {
        let t = TreeShape::new(2, 1).unwrap();
        let k = col(3);
        let c = one_step_change_set(&cfg(&[1, 2, 3]), &t, &k, 1, DEFAULT_GUARD).unwrap();
        assert_eq!(c, ColorSet::single(1));
        let c = one_step_change_set(&cfg(&[1, 2, 3]), &t, &k, 0, DEFAULT_GUARD).unwrap();
        assert_eq!(c, ColorSet::single(0));
        let c = one_step_change_set(&cfg(&[1, 2, 2]), &t, &k, 0, DEFAULT_GUARD).unwrap();
        assert_eq!(c.label(), "{1,3}");
        let kinds: Vec<VertexType> = [cfg(&[1, 2, 3]), cfg(&[1, 2, 3]), cfg(&[1, 2, 2])]
            .iter()
            .zip([1usize, 0, 0])
            .map(|(c, x)| classify_vertex(c, &t, &k, x, None, DEFAULT_GUARD).unwrap().kind)
            .collect();
        assert_eq!(kinds, vec![VertexType::Rigid, VertexType::Rigid, VertexType::Type2]);
    }

    #[test]
    fn bad_needs_the_parent() {
        let t = TreeShape::new(2, 1).unwrap();
        let k = col(4);
        let c = cfg(&[1, 2, 3]);
        let cls = classify_vertex(&c, &t, &k, 0, Some(3), DEFAULT_GUARD).unwrap();
        assert_eq!(cls.change_set.label(), "{1,4}");
        assert_eq!(cls.kind, VertexType::Type2);
        assert_eq!(cls.bad, Some(true));
        let cls = classify_vertex(&c, &t, &k, 0, Some(1), DEFAULT_GUARD).unwrap();
        assert_eq!(cls.bad, Some(false));
        assert_eq!(classify_vertex(&c, &t, &k, 0, None, DEFAULT_GUARD).unwrap().bad, None);
        let leaf = classify_vertex(&c, &t, &k, 2, Some(0), DEFAULT_GUARD).unwrap();
        assert_eq!((leaf.kind, leaf.bad), (VertexType::Rigid, Some(true)));
    }

    #[test]
    fn fast_rule_needs_coloring() {
        let t = TreeShape::new(2, 1).unwrap();
        let u = SpinKernel::uniform(3).unwrap();
        assert_eq!(coloring_fast_classify(&cfg(&[1, 1, 1]), &t, &u), Err(Error::NotColoringModel));
    }

    fn bfs_classes(c: &Configuration, t: &TreeShape, k: &SpinKernel) -> Vec<VertexClassification> {
        (0..t.n())
            .map(|x| classify_vertex(c, t, k, x, t.parent(x).map(|p| c.states[p]), DEFAULT_GUARD).unwrap())
            .collect()
    }

    #[test]
    fn fast_rule_matches_search_exhaustively() {
        for (k, depth) in [(3usize, 2usize), (4, 2), (3, 1), (5, 1)] {
            let t = TreeShape::new(2, depth).unwrap();
            let kern = col(k);
            let e = enumerate(&t, &kern, DEFAULT_GUARD).unwrap();
            for (s, _) in e.iter() {
                let c = Configuration::new(s.to_vec());
                assert_eq!(coloring_fast_classify(&c, &t, &kern).unwrap(), bfs_classes(&c, &t, &kern));
            }
        }
    }

    #[test]
    fn good_children_make_a_free_vertex() {
        let t = TreeShape::new(2, 2).unwrap();
        for k in [4usize, 5] {
            let kern = col(k);
            let mut rng = stream_rng(4, k as u64);
            let mut hits = 0;
            for _ in 0..2000 {
                let c = broadcast_sample(&t, &kern, &mut rng, None);
                let cls = bfs_classes(&c, &t, &kern);
                for x in 0..t.n() {
                    if cls[x].free {
                        assert_eq!(cls[x].change_set.len(), k);
                    }
                    let kids: Vec<usize> = t.children(x).collect();
                    if !kids.is_empty() && kids.iter().all(|&y| cls[y].bad == Some(false)) {
                        hits += 1;
                        assert!(cls[x].free);
                    }
                }
            }
            assert!(hits > 0);
        }
    }

    #[test]
    fn unconstrained_block_component_is_everything() {
        let t = TreeShape::new(2, 2).unwrap();
        let k = col(4);
        let b = Boundary::free(&t);
        let e = enumerate(&t, &k, DEFAULT_GUARD).unwrap();
        let start = Configuration::new(e.config(17).to_vec());
        let comp = component_of(&start, &t, &k, &b, 0, 2, DEFAULT_GUARD).unwrap();
        assert_eq!(comp.len(), e.len());
        assert_eq!(comp.member(comp.seed), &start.states[..]);
        for i in 0..comp.len() {
            assert!((comp.weights[i] - e.weight(i)).abs() < 1e-12);
            assert_eq!(comp.member(i), e.config(i));
        }
    }

    #[test]
    fn single_vertex_block() {
        let t = TreeShape::new(2, 2).unwrap();
        let k = col(4);
        let c = cfg(&[1, 2, 3, 1, 3, 1, 2]);
        let comp = component_of(&c, &t, &k, &Boundary::free(&t), 1, 0, DEFAULT_GUARD).unwrap();
        // vertex 1 sees parent 1 and children 1,3, so it can be 2 or 4
        let got: Vec<State> = (0..comp.len()).map(|i| comp.member(i)[0]).collect();
        assert_eq!(got, vec![1, 3]);
        assert!((comp.weights[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn irreducibility_examples() {
        let t = TreeShape::new(2, 2).unwrap();
        let k = col(3);
        for c in 0..3 {
            let b = Boundary::free(&t).with_parent(Some(c));
            assert_eq!(is_irreducible(&t, &k, &b, DEFAULT_GUARD).unwrap(), (true, 1));
        }
        assert!(is_irreducible(&t, &k, &Boundary::free(&t), DEFAULT_GUARD).unwrap().0);
        let u = SpinKernel::uniform(3).unwrap();
        let mut b = Boundary::free(&t);
        b.freeze_all(t.level_range(2), &[0, 1, 2, 0]);
        assert!(is_irreducible(&t, &u, &b, DEFAULT_GUARD).unwrap().0);
    }

    #[test]
    fn pinning_boundary_exists_for_three_colors() {
        let t = TreeShape::new(2, 2).unwrap();
        let k = col(3);
        let ex = find_pinning_boundary(&t, &k, DEFAULT_GUARD).unwrap().expect("a pinning boundary");
        assert!(ex.component_count >= 2);
        let (irr, count) = is_irreducible(&t, &k, &ex.boundary, DEFAULT_GUARD).unwrap();
        assert!(!irr && count == ex.component_count);
        let comp = component_of(&ex.pinned, &t, &k, &ex.boundary, 0, 1, DEFAULT_GUARD).unwrap();
        assert_eq!(comp.len(), 1);
        // the frozen block never moves under component dynamics at its root
        let mut rng = stream_rng(5, 0);
        for _ in 0..50 {
            let (next, x) = component_dynamics_step(&ex.pinned, &t, &k, &ex.boundary, 1, &mut rng, DEFAULT_GUARD).unwrap();
            if x == 0 {
                assert_eq!(next, ex.pinned);
            }
        }
    }

    #[test]
    fn hand_built_pinned_configuration() {
        let t = TreeShape::new(2, 2).unwrap();
        let k = col(3);
        let c = cfg(&[3, 1, 2, 2, 2, 1, 1]);
        let mut b = Boundary::free(&t);
        b.freeze_all(t.level_range(2), &c.states[3..7]);
        let comp = component_of(&c, &t, &k, &b, 0, 1, DEFAULT_GUARD).unwrap();
        assert_eq!(comp.len(), 1);
        assert!(is_irreducible(&t, &k, &b, DEFAULT_GUARD).unwrap().1 >= 2);
    }

    #[test]
    fn whole_tree_component_dynamics_samples_mu() {
        let t = TreeShape::new(2, 1).unwrap();
        let k = col(3);
        let e = enumerate(&t, &k, DEFAULT_GUARD).unwrap();
        let mut rng = stream_rng(6, 0);
        let mut c = cfg(&[1, 2, 3]);
        let mut counts = vec![0f64; e.len()];
        let n = 100_000;
        let mut hits = 0;
        for _ in 0..n {
            let (next, x) = component_dynamics_step(&c, &t, &k, &Boundary::free(&t), 1, &mut rng, DEFAULT_GUARD).unwrap();
            c = next;
            if x == 0 {
                counts[e.index_of(&c.states).unwrap()] += 1.0;
                hits += 1;
            }
        }
        let emp: Vec<f64> = counts.iter().map(|v| v / hits as f64).collect();
        assert!(crate::tree_config::tv_distance(&emp, e.weights()) < 0.01);
    }

    #[test]
    fn condindep_small_instance() {
        let l = 3;
        let t = condindep_shape(2, l).unwrap();
        let k = col(4);
        let mut rng = stream_rng(7, 0);
        let mut checked = 0;
        for _ in 0..3 {
            let root = k.sample_next(0, &mut rng);
            let tau = broadcast_sample(&t, &k, &mut rng, Some(root));
            match check_condindep(&t, &k, l, 0, &tau, 0, None, DEFAULT_GUARD) {
                Ok(r) => {
                    assert!(r.max_discrepancy < 1e-10, "{r:?}");
                    checked += 1;
                }
                Err(Error::EmptyGoodSet) => {}
                Err(e) => panic!("{e}"),
            }
        }
        assert!(checked > 0);
        let u = SpinKernel::uniform(2).unwrap();
        let tau = broadcast_sample(&t, &u, &mut rng, None);
        let r = check_condindep(&t, &u, l, 0, &tau, 1, None, DEFAULT_GUARD).unwrap();
        assert!(r.max_discrepancy < 1e-12);
    }
}
