//! Atomic dictionaries and the min/max decoders compiled from them.
//!
//! A decoder maps a basis vector (either the predicate history or the
//! semantic basis) to the robustness of one formula. Decoders only use
//! coordinate projections, `min` and `max`, so they are monotone and
//! 1-Lipschitz in the max-norm.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::logic::{check_membership, parse_formula, Decomposition, Formula, PredicateLag, TimeInterval};
use crate::robustness::{predicate_history_series, semantic_basis_series, BasisKind, BasisVector, Episode};
use crate::{Error, Result};

/// Ordered, duplicate-free list of generator formulas.
#[derive(Clone, Debug)]
pub struct AtomicDictionary {
    atoms: Vec<Formula>,
    num_predicates: usize,
    k_max: usize,
    names: Vec<String>,
    index: HashMap<Formula, usize>,
}

impl PartialEq for AtomicDictionary {
    fn eq(&self, other: &Self) -> bool {
        self.atoms == other.atoms && self.num_predicates == other.num_predicates
    }
}

impl AtomicDictionary {
    pub fn new(atoms: Vec<Formula>, num_predicates: usize) -> Result<Self> {
        let names = (0..num_predicates).map(|k| format!("p{k}")).collect();
        Self::with_names(atoms, names)
    }

    pub fn with_names(atoms: Vec<Formula>, names: Vec<String>) -> Result<Self> {
        let num_predicates = names.len();
        if atoms.is_empty() {
            return Err(Error::InvalidConfig("atomic dictionary is empty".into()));
        }
        let mut index = HashMap::with_capacity(atoms.len());
        for (q, a) in atoms.iter().enumerate() {
            if a.max_predicate() >= num_predicates {
                return Err(Error::DimensionMismatch {
                    expected: num_predicates,
                    got: a.max_predicate() + 1,
                });
            }
            if index.insert(a.clone(), q).is_some() {
                return Err(Error::DuplicateAtom(a.display(&names).to_string()));
            }
        }
        let k_max = atoms.iter().map(Formula::horizon).max().unwrap_or(0);
        Ok(Self {
            atoms,
            num_predicates,
            k_max,
            names,
            index,
        })
    }

    pub fn atoms(&self) -> &[Formula] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn num_predicates(&self) -> usize {
        self.num_predicates
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn predicate_names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, f: &Formula) -> Option<usize> {
        self.index.get(f).copied()
    }

    /// Dimension of the predicate history that supports the same fragment.
    pub fn history_dim(&self) -> usize {
        self.num_predicates * (self.k_max + 1)
    }
}

/// The depth-1 dictionary: for every predicate `k` and interval `I`,
/// `G_I p_k` followed by `F_I p_k`.
pub fn build_depth1_dictionary(names: Vec<String>, intervals: &[TimeInterval]) -> Result<AtomicDictionary> {
    if intervals.is_empty() {
        return Err(Error::InvalidConfig("interval list is empty".into()));
    }
    let mut seen = BTreeSet::new();
    for i in intervals {
        if !seen.insert(*i) {
            return Err(Error::DuplicateInterval {
                a: i.start(),
                b: i.end(),
            });
        }
    }
    let atoms = (0..names.len())
        .flat_map(|k| {
            intervals.iter().flat_map(move |i| {
                [
                    Formula::always(*i, Formula::pred(k)),
                    Formula::eventually(*i, Formula::pred(k)),
                ]
            })
        })
        .collect();
    AtomicDictionary::with_names(atoms, names)
}

/// Serialized form: predicate names plus atoms in concrete syntax.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DictionaryDoc {
    pub predicate_names: Vec<String>,
    pub atoms: Vec<String>,
}

impl From<&AtomicDictionary> for DictionaryDoc {
    fn from(d: &AtomicDictionary) -> Self {
        Self {
            predicate_names: d.names.clone(),
            atoms: d.atoms.iter().map(|a| a.display(&d.names).to_string()).collect(),
        }
    }
}

impl TryFrom<DictionaryDoc> for AtomicDictionary {
    type Error = Error;

    fn try_from(doc: DictionaryDoc) -> Result<Self> {
        let atoms = doc
            .atoms
            .iter()
            .map(|a| parse_formula(a, &doc.predicate_names))
            .collect::<Result<_>>()?;
        AtomicDictionary::with_names(atoms, doc.predicate_names)
    }
}

/// Which basis a decoder reads, together with its layout.
#[derive(Clone, Debug, PartialEq)]
pub enum BasisSpec {
    Semantic(AtomicDictionary),
    PredicateHistory { num_predicates: usize, k_max: usize },
}

impl BasisSpec {
    pub fn kind(&self) -> BasisKind {
        match self {
            BasisSpec::Semantic(_) => BasisKind::Semantic,
            BasisSpec::PredicateHistory { .. } => BasisKind::PredicateHistory,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            BasisSpec::Semantic(d) => d.len(),
            BasisSpec::PredicateHistory { num_predicates, k_max } => num_predicates * (k_max + 1),
        }
    }

    pub fn k_max(&self) -> usize {
        match self {
            BasisSpec::Semantic(d) => d.k_max(),
            BasisSpec::PredicateHistory { k_max, .. } => *k_max,
        }
    }

    pub fn num_predicates(&self) -> usize {
        match self {
            BasisSpec::Semantic(d) => d.num_predicates(),
            BasisSpec::PredicateHistory { num_predicates, .. } => *num_predicates,
        }
    }

    /// Exact basis rows for `t ∈ [K_max, T]`.
    pub fn series(&self, ep: &Episode) -> Result<Vec<Vec<f64>>> {
        match self {
            BasisSpec::Semantic(d) => semantic_basis_series(ep, d),
            BasisSpec::PredicateHistory { k_max, .. } => predicate_history_series(ep, *k_max),
        }
    }

    /// Basis coordinates the decoder of `f` reads.
    pub fn support_of(&self, f: &Formula) -> Result<BTreeSet<usize>> {
        Ok(compile_decoder(f, self)?.support().clone())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "NodeDoc", try_from = "NodeDoc")]
pub enum DecoderNode {
    Leaf(usize),
    Min(Vec<DecoderNode>),
    Max(Vec<DecoderNode>),
}

impl DecoderNode {
    fn min(children: Vec<DecoderNode>) -> Self {
        Self::flatten(children, true)
    }

    fn max(children: Vec<DecoderNode>) -> Self {
        Self::flatten(children, false)
    }

    fn flatten(children: Vec<DecoderNode>, is_min: bool) -> Self {
        let mut flat = Vec::with_capacity(children.len());
        for c in children {
            match c {
                DecoderNode::Min(cs) if is_min => flat.extend(cs),
                DecoderNode::Max(cs) if !is_min => flat.extend(cs),
                c => flat.push(c),
            }
        }
        if flat.len() == 1 {
            return flat.pop().expect("one child");
        }
        if is_min {
            DecoderNode::Min(flat)
        } else {
            DecoderNode::Max(flat)
        }
    }

    fn eval(&self, b: &[f64]) -> f64 {
        match self {
            DecoderNode::Leaf(i) => b[*i],
            DecoderNode::Min(cs) => cs.iter().map(|c| c.eval(b)).fold(f64::INFINITY, f64::min),
            DecoderNode::Max(cs) => cs.iter().map(|c| c.eval(b)).fold(f64::NEG_INFINITY, f64::max),
        }
    }

    fn leaves(&self, out: &mut BTreeSet<usize>) {
        match self {
            DecoderNode::Leaf(i) => {
                out.insert(*i);
            }
            DecoderNode::Min(cs) | DecoderNode::Max(cs) => cs.iter().for_each(|c| c.leaves(out)),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct NodeDoc {
    op: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    idx: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    children: Option<Vec<NodeDoc>>,
}

impl From<DecoderNode> for NodeDoc {
    fn from(n: DecoderNode) -> Self {
        let branch = |op: &str, cs: Vec<DecoderNode>| NodeDoc {
            op: op.into(),
            idx: None,
            children: Some(cs.into_iter().map(Into::into).collect()),
        };
        match n {
            DecoderNode::Leaf(i) => NodeDoc {
                op: "leaf".into(),
                idx: Some(i),
                children: None,
            },
            DecoderNode::Min(cs) => branch("min", cs),
            DecoderNode::Max(cs) => branch("max", cs),
        }
    }
}

impl TryFrom<NodeDoc> for DecoderNode {
    type Error = String;

    fn try_from(doc: NodeDoc) -> Result<Self, String> {
        let children = |cs: Option<Vec<NodeDoc>>| -> Result<Vec<DecoderNode>, String> {
            let cs = cs.filter(|cs| !cs.is_empty()).ok_or("min/max node without children")?;
            cs.into_iter().map(TryInto::try_into).collect()
        };
        match doc.op.as_str() {
            "leaf" => doc.idx.map(DecoderNode::Leaf).ok_or_else(|| "leaf without idx".into()),
            "min" => Ok(DecoderNode::Min(children(doc.children)?)),
            "max" => Ok(DecoderNode::Max(children(doc.children)?)),
            other => Err(format!("unknown decoder op `{other}`")),
        }
    }
}

/// Compiled min/max tree for one formula over one basis.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoder {
    root: DecoderNode,
    support: BTreeSet<usize>,
    kind: BasisKind,
    dim: usize,
}

impl Decoder {
    fn new(root: DecoderNode, kind: BasisKind, dim: usize) -> Self {
        let mut support = BTreeSet::new();
        root.leaves(&mut support);
        Self {
            root,
            support,
            kind,
            dim,
        }
    }

    pub fn root(&self) -> &DecoderNode {
        &self.root
    }

    pub fn support(&self) -> &BTreeSet<usize> {
        &self.support
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Evaluates the tree on raw coordinates; the caller guarantees the layout.
    pub fn decode_values(&self, values: &[f64]) -> Result<f64> {
        if values.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: values.len(),
            });
        }
        Ok(self.root.eval(values))
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(&self.root).expect("decoder tree serializes")
    }
}

pub fn compile_decoder(f: &Formula, spec: &BasisSpec) -> Result<Decoder> {
    match spec {
        BasisSpec::Semantic(dict) => {
            let tree = check_membership(f, dict)?;
            Ok(Decoder::new(from_decomposition(&tree), BasisKind::Semantic, dict.len()))
        }
        BasisSpec::PredicateHistory { num_predicates, k_max } => {
            let horizon = f.horizon();
            if horizon > *k_max {
                return Err(Error::HorizonExceeded {
                    horizon,
                    k_max: *k_max,
                });
            }
            if f.max_predicate() >= *num_predicates {
                return Err(Error::DimensionMismatch {
                    expected: *num_predicates,
                    got: f.max_predicate() + 1,
                });
            }
            Ok(Decoder::new(
                unroll(f, 0, *k_max),
                BasisKind::PredicateHistory,
                spec.dim(),
            ))
        }
    }
}

fn from_decomposition(d: &Decomposition) -> DecoderNode {
    match d {
        Decomposition::Atom(q) => DecoderNode::Leaf(*q),
        Decomposition::And(l, r) => DecoderNode::min(vec![from_decomposition(l), from_decomposition(r)]),
        Decomposition::Or(l, r) => DecoderNode::max(vec![from_decomposition(l), from_decomposition(r)]),
    }
}

fn unroll(f: &Formula, shift: usize, k_max: usize) -> DecoderNode {
    match f {
        Formula::Predicate(k) => DecoderNode::Leaf(
            PredicateLag {
                predicate: *k,
                lag: shift,
            }
            .index(k_max),
        ),
        Formula::And(l, r) => DecoderNode::min(vec![unroll(l, shift, k_max), unroll(r, shift, k_max)]),
        Formula::Or(l, r) => DecoderNode::max(vec![unroll(l, shift, k_max), unroll(r, shift, k_max)]),
        Formula::Always(i, c) => DecoderNode::min(i.lags().map(|j| unroll(c, shift + j, k_max)).collect()),
        Formula::Eventually(i, c) => DecoderNode::max(i.lags().map(|j| unroll(c, shift + j, k_max)).collect()),
    }
}

pub fn decode(d: &Decoder, b: &BasisVector) -> Result<f64> {
    if b.kind != d.kind {
        return Err(Error::KindMismatch {
            expected: d.kind.to_string(),
            got: b.kind.to_string(),
        });
    }
    d.decode_values(&b.values)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InformationOrderReport {
    pub semantic_dim: usize,
    pub history_dim: usize,
    /// Largest `|h(B^P_t) - B^A_t|` seen; zero when the factorisation holds.
    pub max_discrepancy: f64,
    pub evaluations: usize,
    /// Whether the factorisation map is a coordinate permutation.
    pub is_permutation: bool,
}

/// Checks empirically that stacking the predicate-history decoders of every
/// atom maps `B^P_t` onto `B^A_t`, i.e. the semantic basis is a function of
/// the predicate history.
pub fn information_order_check(dict: &AtomicDictionary, episodes: &[Episode]) -> Result<InformationOrderReport> {
    let history = BasisSpec::PredicateHistory {
        num_predicates: dict.num_predicates(),
        k_max: dict.k_max(),
    };
    let stacked = dict
        .atoms()
        .iter()
        .map(|a| compile_decoder(a, &history))
        .collect::<Result<Vec<_>>>()?;

    let mut leaves = BTreeSet::new();
    let is_permutation = stacked.len() == history.dim()
        && stacked
            .iter()
            .all(|d| matches!(d.root, DecoderNode::Leaf(i) if leaves.insert(i)));

    let mut max_discrepancy: f64 = 0.0;
    let mut evaluations = 0;
    for ep in episodes {
        let semantic = semantic_basis_series(ep, dict)?;
        let hist = predicate_history_series(ep, dict.k_max())?;
        for (b_a, b_p) in semantic.iter().zip(&hist) {
            for (d, exact) in stacked.iter().zip(b_a) {
                max_discrepancy = max_discrepancy.max((d.decode_values(b_p)? - exact).abs());
                evaluations += 1;
            }
        }
    }
    Ok(InformationOrderReport {
        semantic_dim: dict.len(),
        history_dim: history.dim(),
        max_discrepancy,
        evaluations,
        is_permutation,
    })
}
