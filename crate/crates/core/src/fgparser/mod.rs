//! Functional-group decomposition and the binary atom–group matrix.
//!
//! Two stages: pattern detection over the heavy-atom graph, then
//! interpolation of every atom not covered by a detected group onto the
//! group whose member atoms are nearest in graph hop distance (equidistant
//! ties go to the lower group id). When nothing is detected a single
//! fallback group spans the molecule.
//!
//! Groups are numbered by `(pattern_id, lowest member atom, member list)`.

mod catalogue;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use catalogue::{default_catalogue, AtomSpec, BondSpec, FunctionalGroupPattern, Matcher, PatternNode};

use crate::molgraph::{parse_smiles, shortest_path_distances, Element, MolecularGraph, SmilesError};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FgError {
    #[error(transparent)]
    Smiles(#[from] SmilesError),
    #[error("atom {0} is not covered by any functional group")]
    CoverageViolation(usize),
    #[error("graph is disconnected")]
    Disconnected,
    #[error("empty pattern catalogue")]
    EmptyCatalogue,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupAssignment {
    pub group_id: usize,
    /// `None` marks the fallback group.
    pub pattern_id: Option<usize>,
    /// Atoms matched by the pattern, ascending.
    pub member_atoms: Vec<usize>,
    /// Atoms attached during interpolation, ascending.
    pub assigned_atoms: Vec<usize>,
}

impl GroupAssignment {
    /// Member and interpolated atoms, ascending.
    pub fn all_atoms(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.member_atoms.iter().chain(&self.assigned_atoms).copied().collect();
        v.sort_unstable();
        v.dedup();
        v
    }
}

/// Binary `n_atoms × n_groups` membership matrix, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AtomGroupMatrix {
    n_atoms: usize,
    n_groups: usize,
    bits: Vec<u8>,
}

impl AtomGroupMatrix {
    pub fn n_atoms(&self) -> usize {
        self.n_atoms
    }

    pub fn n_groups(&self) -> usize {
        self.n_groups
    }

    pub fn get(&self, atom: usize, group: usize) -> bool {
        self.bits[atom * self.n_groups + group] == 1
    }

    /// Row-major bit list.
    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn from_bits(n_atoms: usize, n_groups: usize, bits: Vec<u8>) -> Result<Self, FgError> {
        assert_eq!(
            bits.len(),
            n_atoms * n_groups,
            "bit list length must be n_atoms * n_groups"
        );
        let m = AtomGroupMatrix {
            n_atoms,
            n_groups,
            bits,
        };
        m.check_coverage()?;
        Ok(m)
    }

    fn check_coverage(&self) -> Result<(), FgError> {
        for i in 0..self.n_atoms {
            if !(0..self.n_groups).any(|j| self.get(i, j)) {
                return Err(FgError::CoverageViolation(i));
            }
        }
        Ok(())
    }

    /// Atoms of group `g`, ascending.
    pub fn group_atoms(&self, g: usize) -> Vec<usize> {
        (0..self.n_atoms).filter(|&i| self.get(i, g)).collect()
    }
}

/// Run every pattern of the catalogue over the graph.
pub fn detect_groups(g: &MolecularGraph, catalogue: &[FunctionalGroupPattern]) -> Vec<GroupAssignment> {
    let mut found: Vec<(usize, Vec<usize>)> = Vec::new();
    for pattern in catalogue {
        let mut sets: BTreeSet<Vec<usize>> = BTreeSet::new();
        match &pattern.matcher {
            Matcher::Tree(root) => {
                for a in 0..g.n_atoms() {
                    let mut matched = Vec::new();
                    tree_matches(g, root, a, &mut matched, &mut sets);
                }
            }
            Matcher::AromaticRing {
                size,
                require_heteroatom,
            } => {
                for ring in g.rings_of_size(*size, |b| b.order == crate::molgraph::BondOrder::Aromatic) {
                    if !ring.iter().all(|&a| g.atom(a).is_aromatic) {
                        continue;
                    }
                    if *require_heteroatom && ring.iter().all(|&a| g.atom(a).element == Element::C) {
                        continue;
                    }
                    let mut members = ring.clone();
                    members.sort_unstable();
                    sets.insert(members);
                }
            }
        }
        found.extend(sets.into_iter().map(|m| (pattern.pattern_id, m)));
    }
    found.sort_by(|x, y| (x.0, x.1.first(), &x.1).cmp(&(y.0, y.1.first(), &y.1)));
    found
        .into_iter()
        .enumerate()
        .map(|(group_id, (pattern_id, member_atoms))| GroupAssignment {
            group_id,
            pattern_id: Some(pattern_id),
            member_atoms,
            assigned_atoms: Vec::new(),
        })
        .collect()
}

/// A (pattern node, atom) pair in the current partial assignment.
type Binding<'p> = (&'p PatternNode, usize);

/// Enumerate all injective assignments of the pattern tree rooted at `atom`
/// and record the member atom set of each complete one.
fn tree_matches<'p>(
    g: &MolecularGraph,
    root: &'p PatternNode,
    atom: usize,
    bound: &mut Vec<Binding<'p>>,
    out: &mut BTreeSet<Vec<usize>>,
) {
    if !atom_ok(g, &root.atom, atom) {
        return;
    }
    bound.push((root, atom));
    // Work list of (node, atom) whose children still need assignment.
    let pending = vec![(root, atom)];
    assign_children(g, pending, 0, bound, out);
    bound.pop();
}

/// Assigns children of `pending[idx]` one at a time, then moves on; once the
/// work list is exhausted the full binding is checked against `forbid`.
fn assign_children<'p>(
    g: &MolecularGraph,
    mut pending: Vec<Binding<'p>>,
    idx: usize,
    bound: &mut Vec<Binding<'p>>,
    out: &mut BTreeSet<Vec<usize>>,
) {
    let Some(&(node, atom)) = pending.get(idx) else {
        finish_match(g, bound, out);
        return;
    };
    // Find the first child of `node` not yet bound.
    let bound_children = bound
        .iter()
        .filter(|(n, _)| node.children.iter().any(|c| std::ptr::eq(c, *n)))
        .count();
    if bound_children == node.children.len() {
        assign_children(g, pending, idx + 1, bound, out);
        return;
    }
    let child = &node.children[bound_children];
    for &(nb, bi) in g.neighbors(atom) {
        if bound.iter().any(|(_, a)| *a == nb) {
            continue;
        }
        if !child.bond.accepts(g.bonds()[bi].order) || !atom_ok(g, &child.atom, nb) {
            continue;
        }
        bound.push((child, nb));
        if !child.children.is_empty() {
            pending.push((child, nb));
        }
        assign_children(g, pending.clone(), idx, bound, out);
        if !child.children.is_empty() {
            pending.pop();
        }
        bound.pop();
    }
}

fn finish_match(g: &MolecularGraph, bound: &[Binding<'_>], out: &mut BTreeSet<Vec<usize>>) {
    let matched: Vec<usize> = bound.iter().map(|(_, a)| *a).collect();
    for (node, atom) in bound {
        for (bond_spec, elements) in &node.atom.forbid {
            for &(nb, bi) in g.neighbors(*atom) {
                if matched.contains(&nb) {
                    continue;
                }
                if bond_spec.accepts(g.bonds()[bi].order) && elements.contains(&g.atom(nb).element) {
                    return;
                }
            }
        }
    }
    let mut members: Vec<usize> = bound.iter().filter(|(n, _)| n.member).map(|(_, a)| *a).collect();
    members.sort_unstable();
    members.dedup();
    out.insert(members);
}

fn atom_ok(g: &MolecularGraph, spec: &AtomSpec, i: usize) -> bool {
    let a = g.atom(i);
    spec.elements.contains(&a.element)
        && spec.aromatic.is_none_or(|x| x == a.is_aromatic)
        && spec.charge.is_none_or(|c| c == a.formal_charge)
        && spec.min_hydrogens.is_none_or(|h| a.hydrogens >= h)
        && spec.max_hydrogens.is_none_or(|h| a.hydrogens <= h)
        && spec.heavy_degree.is_none_or(|d| d == a.degree)
}

/// Attach uncovered atoms to the nearest group (hop distance to any member
/// atom; ties to the lowest group id). With no groups, one fallback group
/// holding every atom is returned.
pub fn interpolate_unassigned(g: &MolecularGraph, groups: &[GroupAssignment]) -> Result<Vec<GroupAssignment>, FgError> {
    if groups.is_empty() {
        return Ok(vec![GroupAssignment {
            group_id: 0,
            pattern_id: None,
            member_atoms: (0..g.n_atoms()).collect(),
            assigned_atoms: Vec::new(),
        }]);
    }
    let dist = shortest_path_distances(g).map_err(|_| FgError::Disconnected)?;
    let mut out: Vec<GroupAssignment> = groups.to_vec();
    let mut covered = vec![false; g.n_atoms()];
    for grp in groups {
        for &a in grp.member_atoms.iter().chain(&grp.assigned_atoms) {
            covered[a] = true;
        }
    }
    for atom in 0..g.n_atoms() {
        if covered[atom] {
            continue;
        }
        let mut best: Option<(usize, usize)> = None;
        for (gi, grp) in groups.iter().enumerate() {
            let Some(d) = grp.member_atoms.iter().map(|&m| dist[atom][m]).min() else {
                continue;
            };
            // Strict improvement keeps the earliest (lowest id) on ties.
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, gi));
            }
        }
        if let Some((_, gi)) = best {
            out[gi].assigned_atoms.push(atom);
        }
    }
    Ok(out)
}

/// `M[i][j] = 1` iff atom `i` is a member of, or was assigned to, group `j`.
pub fn build_matrix(n_atoms: usize, groups: &[GroupAssignment]) -> Result<AtomGroupMatrix, FgError> {
    let f = groups.len();
    let mut bits = vec![0u8; n_atoms * f];
    for (j, grp) in groups.iter().enumerate() {
        for &i in grp.member_atoms.iter().chain(&grp.assigned_atoms) {
            bits[i * f + j] = 1;
        }
    }
    let m = AtomGroupMatrix {
        n_atoms,
        n_groups: f,
        bits,
    };
    if f == 0 {
        return Err(FgError::CoverageViolation(0));
    }
    m.check_coverage()?;
    Ok(m)
}

/// Full decomposition of one ligand.
#[derive(Debug, Clone)]
pub struct LigandGroups {
    pub graph: MolecularGraph,
    pub groups: Vec<GroupAssignment>,
    pub matrix: AtomGroupMatrix,
}

impl LigandGroups {
    /// Pattern index per group, with the fallback mapped to `n_patterns`.
    pub fn pattern_indices(&self, n_patterns: usize) -> Vec<usize> {
        self.groups.iter().map(|g| g.pattern_id.unwrap_or(n_patterns)).collect()
    }
}

/// Pattern catalogue plus its content hash.
#[derive(Debug, Clone)]
pub struct FgParser {
    catalogue: Vec<FunctionalGroupPattern>,
    hash: String,
}

impl Default for FgParser {
    fn default() -> Self {
        FgParser::new(default_catalogue()).expect("built-in catalogue is non-empty")
    }
}

impl FgParser {
    pub fn new(catalogue: Vec<FunctionalGroupPattern>) -> Result<Self, FgError> {
        if catalogue.is_empty() {
            return Err(FgError::EmptyCatalogue);
        }
        let hash = catalogue_hash(&catalogue);
        Ok(FgParser { catalogue, hash })
    }

    pub fn catalogue(&self) -> &[FunctionalGroupPattern] {
        &self.catalogue
    }

    /// Hex SHA-256 over the catalogue definition.
    pub fn catalogue_hash(&self) -> &str {
        &self.hash
    }

    pub fn n_patterns(&self) -> usize {
        self.catalogue.len()
    }

    pub fn pattern_name(&self, pattern_id: Option<usize>) -> &'static str {
        match pattern_id {
            Some(id) => self
                .catalogue
                .iter()
                .find(|p| p.pattern_id == id)
                .map_or("unknown", |p| p.name),
            None => "fallback",
        }
    }

    pub fn decompose(&self, g: &MolecularGraph) -> Result<(Vec<GroupAssignment>, AtomGroupMatrix), FgError> {
        let detected = detect_groups(g, &self.catalogue);
        let groups = interpolate_unassigned(g, &detected)?;
        let m = build_matrix(g.n_atoms(), &groups)?;
        Ok((groups, m))
    }

    pub fn parse(&self, smiles: &str) -> Result<LigandGroups, FgError> {
        let graph = parse_smiles(smiles)?;
        let (groups, matrix) = self.decompose(&graph)?;
        Ok(LigandGroups { graph, groups, matrix })
    }

    pub fn to_record(&self, id: &str, lig: &LigandGroups) -> GroupsRecord {
        GroupsRecord {
            id: id.to_string(),
            n_atoms: lig.graph.n_atoms(),
            groups: lig
                .groups
                .iter()
                .map(|g| GroupRecord {
                    group_id: g.group_id,
                    pattern: self.pattern_name(g.pattern_id).to_string(),
                    atoms: g.all_atoms(),
                })
                .collect(),
            matrix: lig.matrix.bits().to_vec(),
        }
    }
}

pub fn catalogue_hash(catalogue: &[FunctionalGroupPattern]) -> String {
    let mut h = Sha256::new();
    for p in catalogue {
        h.update(format!("{}|{}|{:?}\n", p.pattern_id, p.name, p.matcher).as_bytes());
    }
    hex(&h.finalize())
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// One line of `groups.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupsRecord {
    pub id: String,
    pub n_atoms: usize,
    pub groups: Vec<GroupRecord>,
    pub matrix: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupRecord {
    pub group_id: usize,
    pub pattern: String,
    pub atoms: Vec<usize>,
}
