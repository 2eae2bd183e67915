//! SMILES parsing into heavy-atom molecular graphs.
//!
//! Supported subset: organic-subset atoms (`B C N O P S F Cl Br I`), their
//! aromatic lowercase forms (`b c n o p s`), bracket atoms with hydrogen
//! count and charge, branches, ring closures `1`-`9`, and the bond symbols
//! `-`, `=`, `#` (plus `:` for an explicit aromatic bond). Stereo markers,
//! isotopes, atom classes, `%nn` ring closures and multi-component `.`
//! inputs are rejected with [`SmilesError::Unsupported`].
//!
//! Hydrogens are never graph nodes. Organic-subset atoms receive implicit
//! hydrogens from the lowest default valence that fits their bond order sum;
//! bracket atoms carry exactly the hydrogens they declare.
//!
//! Aromaticity model: atoms written in lowercase are aromatic, and in
//! addition any 6-membered ring of C/N atoms whose ring bonds alternate
//! single/double (Kekulé form) is perceived aromatic. Fused Kekulé systems
//! are handled by iterating the 6-ring test to a fixpoint. An implicit bond
//! between two aromatic atoms is aromatic when it lies on a ring and single
//! otherwise.

use std::collections::VecDeque;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SmilesError {
    #[error("syntax error at position {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unsupported SMILES feature at position {pos}: {feature}")]
    Unsupported { pos: usize, feature: String },
    #[error("empty SMILES")]
    Empty,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("graph is disconnected: atoms {0} and {1} are unreachable from each other")]
pub struct DisconnectedGraph(pub usize, pub usize);

fn syntax(pos: usize, msg: impl Into<String>) -> SmilesError {
    SmilesError::Syntax { pos, msg: msg.into() }
}

fn unsupported(pos: usize, feature: impl Into<String>) -> SmilesError {
    SmilesError::Unsupported {
        pos,
        feature: feature.into(),
    }
}

/// Elements accepted by the parser. The discriminant is the feature index
/// written into column 0 of the atom feature matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Element {
    C = 0,
    N = 1,
    O = 2,
    S = 3,
    P = 4,
    F = 5,
    Cl = 6,
    Br = 7,
    I = 8,
    B = 9,
    Si = 10,
    Se = 11,
    H = 12,
    Na = 13,
    K = 14,
    Li = 15,
    Mg = 16,
    Ca = 17,
    Zn = 18,
    Fe = 19,
    Cu = 20,
    Mn = 21,
    Co = 22,
    Ni = 23,
    Pt = 24,
    As = 25,
}

const ELEMENTS: [Element; 26] = [
    Element::C,
    Element::N,
    Element::O,
    Element::S,
    Element::P,
    Element::F,
    Element::Cl,
    Element::Br,
    Element::I,
    Element::B,
    Element::Si,
    Element::Se,
    Element::H,
    Element::Na,
    Element::K,
    Element::Li,
    Element::Mg,
    Element::Ca,
    Element::Zn,
    Element::Fe,
    Element::Cu,
    Element::Mn,
    Element::Co,
    Element::Ni,
    Element::Pt,
    Element::As,
];

impl Element {
    pub fn symbol(self) -> &'static str {
        match self {
            Element::C => "C",
            Element::N => "N",
            Element::O => "O",
            Element::S => "S",
            Element::P => "P",
            Element::F => "F",
            Element::Cl => "Cl",
            Element::Br => "Br",
            Element::I => "I",
            Element::B => "B",
            Element::Si => "Si",
            Element::Se => "Se",
            Element::H => "H",
            Element::Na => "Na",
            Element::K => "K",
            Element::Li => "Li",
            Element::Mg => "Mg",
            Element::Ca => "Ca",
            Element::Zn => "Zn",
            Element::Fe => "Fe",
            Element::Cu => "Cu",
            Element::Mn => "Mn",
            Element::Co => "Co",
            Element::Ni => "Ni",
            Element::Pt => "Pt",
            Element::As => "As",
        }
    }

    pub fn from_symbol(sym: &str) -> Option<Element> {
        ELEMENTS.iter().copied().find(|e| e.symbol() == sym)
    }

    /// Fixed feature index (column 0 of the atom feature matrix).
    pub fn index(self) -> usize {
        self as usize
    }

    fn is_organic_subset(self) -> bool {
        matches!(
            self,
            Element::B
                | Element::C
                | Element::N
                | Element::O
                | Element::P
                | Element::S
                | Element::F
                | Element::Cl
                | Element::Br
                | Element::I
        )
    }

    fn can_be_aromatic(self) -> bool {
        matches!(
            self,
            Element::B | Element::C | Element::N | Element::O | Element::P | Element::S | Element::Se | Element::As
        )
    }

    fn default_valences(self) -> &'static [u32] {
        match self {
            Element::B => &[3],
            Element::C => &[4],
            Element::N | Element::P => &[3, 5],
            Element::O => &[2],
            Element::S => &[2, 4, 6],
            Element::F | Element::Cl | Element::Br | Element::I => &[1],
            _ => &[],
        }
    }

    pub fn is_halogen(self) -> bool {
        matches!(self, Element::F | Element::Cl | Element::Br | Element::I)
    }

    fn is_metal(self) -> bool {
        matches!(
            self,
            Element::Na
                | Element::K
                | Element::Li
                | Element::Mg
                | Element::Ca
                | Element::Zn
                | Element::Fe
                | Element::Cu
                | Element::Mn
                | Element::Co
                | Element::Ni
                | Element::Pt
        )
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Hybridization {
    Sp = 0,
    Sp2 = 1,
    Sp3 = 2,
    Other = 3,
}

impl Hybridization {
    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    /// Contribution to the valence sum; aromatic bonds count as one and the
    /// extra pi electron is added per atom during hydrogen assignment.
    fn valence(self) -> u32 {
        match self {
            BondOrder::Single | BondOrder::Aromatic => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub element: Element,
    pub degree: usize,
    pub hybridization: Hybridization,
    pub formal_charge: i8,
    pub is_aromatic: bool,
    /// Total attached hydrogens (implicit or bracket-declared).
    pub hydrogens: u8,
    /// Whether the atom was written in brackets.
    pub bracket: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bond {
    pub a: usize,
    pub b: usize,
    pub order: BondOrder,
}

impl Bond {
    pub fn other(&self, atom: usize) -> usize {
        if self.a == atom {
            self.b
        } else {
            self.a
        }
    }
}

/// Heavy-atom molecular graph. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct MolecularGraph {
    atoms: Vec<Atom>,
    bonds: Vec<Bond>,
    adjacency: Vec<Vec<(usize, usize)>>,
    canonical_order: Vec<usize>,
}

impl MolecularGraph {
    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn bonds(&self) -> &[Bond] {
        &self.bonds
    }

    pub fn atom(&self, i: usize) -> &Atom {
        &self.atoms[i]
    }

    pub fn n_atoms(&self) -> usize {
        self.atoms.len()
    }

    /// Atom indices in SMILES emission order.
    pub fn canonical_order(&self) -> &[usize] {
        &self.canonical_order
    }

    /// `(neighbor, bond index)` pairs of atom `i`.
    pub fn neighbors(&self, i: usize) -> &[(usize, usize)] {
        &self.adjacency[i]
    }

    pub fn bond_between(&self, a: usize, b: usize) -> Option<&Bond> {
        self.adjacency[a]
            .iter()
            .find(|(n, _)| *n == b)
            .map(|(_, bi)| &self.bonds[*bi])
    }

    /// Build a graph directly from atoms and bonds. Degrees, adjacency and
    /// hybridization are recomputed; other atom fields are taken as given.
    pub fn from_parts(mut atoms: Vec<Atom>, bonds: Vec<Bond>) -> Result<Self, SmilesError> {
        let n = atoms.len();
        if n == 0 {
            return Err(SmilesError::Empty);
        }
        let mut adjacency = vec![Vec::new(); n];
        for (bi, bond) in bonds.iter().enumerate() {
            if bond.a >= n || bond.b >= n {
                return Err(syntax(0, format!("bond {bi} references a missing atom")));
            }
            if bond.a == bond.b {
                return Err(syntax(0, format!("bond {bi} is a self-bond")));
            }
            if adjacency[bond.a].iter().any(|(x, _)| *x == bond.b) {
                return Err(syntax(0, format!("duplicate bond between {} and {}", bond.a, bond.b)));
            }
            adjacency[bond.a].push((bond.b, bi));
            adjacency[bond.b].push((bond.a, bi));
        }
        for (i, atom) in atoms.iter_mut().enumerate() {
            atom.degree = adjacency[i].len();
        }
        let mut g = MolecularGraph {
            atoms,
            bonds,
            adjacency,
            canonical_order: (0..n).collect(),
        };
        for i in 0..n {
            g.atoms[i].hybridization = g.infer_hybridization(i);
        }
        Ok(g)
    }

    fn infer_hybridization(&self, i: usize) -> Hybridization {
        let atom = &self.atoms[i];
        if atom.element == Element::H || atom.element.is_metal() {
            return Hybridization::Other;
        }
        if atom.is_aromatic {
            return Hybridization::Sp2;
        }
        let mut doubles = 0;
        let mut triples = 0;
        for (_, bi) in &self.adjacency[i] {
            match self.bonds[*bi].order {
                BondOrder::Double => doubles += 1,
                BondOrder::Triple => triples += 1,
                BondOrder::Aromatic => return Hybridization::Sp2,
                BondOrder::Single => {}
            }
        }
        // Hypervalent S/P centres (sulfonyl, phosphate) keep sp3 geometry.
        if matches!(atom.element, Element::S | Element::P) && doubles >= 1 && atom.degree >= 3 {
            return Hybridization::Sp3;
        }
        if triples > 0 || doubles >= 2 {
            Hybridization::Sp
        } else if doubles == 1 {
            Hybridization::Sp2
        } else {
            Hybridization::Sp3
        }
    }

    /// True when the bond lies on at least one cycle.
    pub fn bond_in_ring(&self, bond_index: usize) -> bool {
        let bond = self.bonds[bond_index];
        // BFS from a to b avoiding this bond.
        let mut seen = vec![false; self.n_atoms()];
        let mut queue = VecDeque::from([bond.a]);
        seen[bond.a] = true;
        while let Some(u) = queue.pop_front() {
            for &(v, bi) in &self.adjacency[u] {
                if bi == bond_index || seen[v] {
                    continue;
                }
                if v == bond.b {
                    return true;
                }
                seen[v] = true;
                queue.push_back(v);
            }
        }
        false
    }

    /// Simple cycles of exactly `size` atoms, each listed once (as the atom
    /// sequence starting at its lowest index, in the lexicographically
    /// smaller direction). `edge_ok` filters which bonds may be traversed.
    pub fn rings_of_size(&self, size: usize, edge_ok: impl Fn(&Bond) -> bool) -> Vec<Vec<usize>> {
        let mut rings = Vec::new();
        if size < 3 {
            return rings;
        }
        let n = self.n_atoms();
        let mut path = Vec::with_capacity(size);
        let mut on_path = vec![false; n];
        for start in 0..n {
            path.clear();
            path.push(start);
            on_path[start] = true;
            self.extend_ring(start, size, &edge_ok, &mut path, &mut on_path, &mut rings);
            on_path[start] = false;
        }
        rings
    }

    fn extend_ring(
        &self,
        start: usize,
        size: usize,
        edge_ok: &impl Fn(&Bond) -> bool,
        path: &mut Vec<usize>,
        on_path: &mut [bool],
        rings: &mut Vec<Vec<usize>>,
    ) {
        let last = *path.last().expect("path is never empty");
        for &(v, bi) in &self.adjacency[last] {
            if !edge_ok(&self.bonds[bi]) {
                continue;
            }
            if path.len() == size {
                // Close the ring; keep one canonical direction only.
                if v == start && path[1] < path[size - 1] {
                    rings.push(path.clone());
                }
                continue;
            }
            if v <= start || on_path[v] {
                continue;
            }
            on_path[v] = true;
            path.push(v);
            self.extend_ring(start, size, edge_ok, path, on_path, rings);
            path.pop();
            on_path[v] = false;
        }
    }

    /// Write the graph back as SMILES. Returns the string and the emission
    /// order, i.e. `order[k]` is the source atom written k-th; re-parsing the
    /// string yields atom k equal to source atom `order[k]`.
    pub fn to_smiles(&self) -> (String, Vec<usize>) {
        let n = self.n_atoms();
        let mut visited = vec![false; n];
        let mut order = Vec::with_capacity(n);
        let mut tree_bond = vec![false; self.bonds.len()];
        // First pass: DFS to fix the spanning tree and visiting order.
        fn dfs(g: &MolecularGraph, u: usize, visited: &mut [bool], order: &mut Vec<usize>, tree: &mut [bool]) {
            visited[u] = true;
            order.push(u);
            for &(v, bi) in &g.adjacency[u] {
                if !visited[v] {
                    tree[bi] = true;
                    dfs(g, v, visited, order, tree);
                }
            }
        }
        dfs(self, 0, &mut visited, &mut order, &mut tree_bond);

        let mut position = vec![0usize; n];
        for (k, &a) in order.iter().enumerate() {
            position[a] = k;
        }
        // Ring-closure digits: allocate at the earlier atom, release at the later.
        let mut closures_at: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
        for (bi, bond) in self.bonds.iter().enumerate() {
            if !tree_bond[bi] {
                let (first, second) = if position[bond.a] < position[bond.b] {
                    (bond.a, bond.b)
                } else {
                    (bond.b, bond.a)
                };
                closures_at[first].push((bi, second));
                closures_at[second].push((bi, first));
            }
        }

        let mut out = String::new();
        let mut digit_of_bond: Vec<Option<u8>> = vec![None; self.bonds.len()];
        let mut free_digits: Vec<u8> = (1..=9).rev().collect();
        let mut written = vec![false; n];
        self.write_atom_recursive(
            0,
            None,
            &mut out,
            &mut written,
            &tree_bond,
            &closures_at,
            &mut digit_of_bond,
            &mut free_digits,
        );
        (out, order)
    }

    #[allow(clippy::too_many_arguments)]
    fn write_atom_recursive(
        &self,
        u: usize,
        via: Option<usize>,
        out: &mut String,
        written: &mut [bool],
        tree_bond: &[bool],
        closures_at: &[Vec<(usize, usize)>],
        digit_of_bond: &mut [Option<u8>],
        free_digits: &mut Vec<u8>,
    ) {
        if let Some(bi) = via {
            out.push_str(self.bond_symbol(bi));
        }
        written[u] = true;
        self.write_atom_token(u, out);
        for &(bi, partner) in &closures_at[u] {
            if written[partner] {
                let d = digit_of_bond[bi].take().expect("closure opened before it is closed");
                out.push_str(self.bond_symbol(bi));
                out.push(char::from(b'0' + d));
                free_digits.push(d);
                free_digits.sort_unstable_by(|a, b| b.cmp(a));
            } else {
                let d = free_digits.pop().expect("more than nine open ring closures");
                digit_of_bond[bi] = Some(d);
                out.push(char::from(b'0' + d));
            }
        }
        let children: Vec<(usize, usize)> = self.adjacency[u]
            .iter()
            .copied()
            .filter(|&(v, bi)| tree_bond[bi] && !written[v])
            .collect();
        for (k, &(v, bi)) in children.iter().enumerate() {
            let last = k + 1 == children.len();
            if !last {
                out.push('(');
            }
            self.write_atom_recursive(
                v,
                Some(bi),
                out,
                written,
                tree_bond,
                closures_at,
                digit_of_bond,
                free_digits,
            );
            if !last {
                out.push(')');
            }
        }
    }

    fn bond_symbol(&self, bi: usize) -> &'static str {
        let bond = &self.bonds[bi];
        match bond.order {
            BondOrder::Single => {
                if self.atoms[bond.a].is_aromatic && self.atoms[bond.b].is_aromatic {
                    "-"
                } else {
                    ""
                }
            }
            BondOrder::Double => "=",
            BondOrder::Triple => "#",
            BondOrder::Aromatic => "",
        }
    }

    fn write_atom_token(&self, u: usize, out: &mut String) {
        let atom = &self.atoms[u];
        let symbol = if atom.is_aromatic {
            atom.element.symbol().to_ascii_lowercase()
        } else {
            atom.element.symbol().to_string()
        };
        if !atom.bracket && atom.formal_charge == 0 && atom.element.is_organic_subset() {
            out.push_str(&symbol);
            return;
        }
        out.push('[');
        out.push_str(&symbol);
        match atom.hydrogens {
            0 => {}
            1 => out.push('H'),
            h => {
                out.push('H');
                out.push_str(&h.to_string());
            }
        }
        match atom.formal_charge {
            0 => {}
            1 => out.push('+'),
            -1 => out.push('-'),
            c if c > 0 => out.push_str(&format!("+{c}")),
            c => out.push_str(&format!("-{}", -c)),
        }
        out.push(']');
    }
}

/// Parse a SMILES string in the supported subset.
pub fn parse_smiles(smiles: &str) -> Result<MolecularGraph, SmilesError> {
    Parser::new(smiles).parse()
}

struct PendingAtom {
    element: Element,
    aromatic: bool,
    charge: i8,
    explicit_h: Option<u8>,
    bracket: bool,
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    atoms: Vec<PendingAtom>,
    bonds: Vec<(usize, usize, Option<BondOrder>)>,
    ring_open: [Option<(usize, Option<BondOrder>, usize)>; 10],
}

impl<'a> Parser<'a> {
    fn new(s: &'a str) -> Self {
        Parser {
            src: s.as_bytes(),
            pos: 0,
            atoms: Vec::new(),
            bonds: Vec::new(),
            ring_open: [None; 10],
        }
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn parse(mut self) -> Result<MolecularGraph, SmilesError> {
        if self.src.iter().all(|c| c.is_ascii_whitespace()) {
            return Err(SmilesError::Empty);
        }
        let mut prev: Option<usize> = None;
        let mut branch_stack: Vec<usize> = Vec::new();
        let mut pending_bond: Option<(BondOrder, usize)> = None;

        while let Some(c) = self.peek() {
            let start = self.pos;
            match c {
                b'(' => {
                    let Some(p) = prev else {
                        return Err(syntax(start, "branch opened before any atom"));
                    };
                    if pending_bond.is_some() {
                        return Err(syntax(start, "bond symbol before '('"));
                    }
                    branch_stack.push(p);
                    self.pos += 1;
                }
                b')' => {
                    let Some(p) = branch_stack.pop() else {
                        return Err(syntax(start, "unbalanced ')'"));
                    };
                    if pending_bond.is_some() {
                        return Err(syntax(start, "dangling bond symbol before ')'"));
                    }
                    prev = Some(p);
                    self.pos += 1;
                }
                b'-' | b'=' | b'#' | b':' => {
                    if pending_bond.is_some() {
                        return Err(syntax(start, "two consecutive bond symbols"));
                    }
                    let order = match c {
                        b'-' => BondOrder::Single,
                        b'=' => BondOrder::Double,
                        b'#' => BondOrder::Triple,
                        _ => BondOrder::Aromatic,
                    };
                    pending_bond = Some((order, start));
                    self.pos += 1;
                }
                b'/' | b'\\' => return Err(unsupported(start, "directional (stereo) bond")),
                b'$' => return Err(unsupported(start, "quadruple bond")),
                b'.' => return Err(unsupported(start, "multi-component SMILES ('.')")),
                b'%' => return Err(unsupported(start, "two-digit ring closure")),
                b'*' => return Err(unsupported(start, "wildcard atom")),
                b'0'..=b'9' => {
                    let Some(p) = prev else {
                        return Err(syntax(start, "ring-closure digit before any atom"));
                    };
                    let digit = usize::from(c - b'0');
                    if digit == 0 {
                        return Err(unsupported(start, "ring closure 0 (only 1-9 supported)"));
                    }
                    let order = pending_bond.take().map(|(o, _)| o);
                    match self.ring_open[digit].take() {
                        Some((other, open_order, _)) => {
                            if other == p {
                                return Err(syntax(start, "ring closure onto the same atom"));
                            }
                            let order = match (open_order, order) {
                                (Some(a), Some(b)) if a != b => {
                                    return Err(syntax(start, "conflicting ring-closure bond orders"))
                                }
                                (a, b) => a.or(b),
                            };
                            self.add_bond(other, p, order, start)?;
                        }
                        None => self.ring_open[digit] = Some((p, order, start)),
                    }
                    self.pos += 1;
                }
                b'[' => {
                    let idx = self.parse_bracket_atom()?;
                    self.connect(prev, idx, pending_bond.take(), start)?;
                    prev = Some(idx);
                }
                b'A'..=b'Z' | b'a'..=b'z' => {
                    let idx = self.parse_organic_atom()?;
                    self.connect(prev, idx, pending_bond.take(), start)?;
                    prev = Some(idx);
                }
                b'@' => return Err(unsupported(start, "chirality marker")),
                c if c.is_ascii_whitespace() => {
                    // Trailing whitespace / title separator ends the SMILES.
                    break;
                }
                _ => return Err(syntax(start, format!("unexpected character '{}'", c as char))),
            }
        }
        if let Some((_, pos)) = pending_bond {
            return Err(syntax(pos, "dangling bond symbol at end of input"));
        }
        if !branch_stack.is_empty() {
            return Err(syntax(self.src.len(), "unbalanced '(' at end of input"));
        }
        if let Some((_, _, pos)) = self.ring_open.iter().flatten().next() {
            return Err(syntax(*pos, "dangling ring-closure digit"));
        }
        if self.atoms.is_empty() {
            return Err(SmilesError::Empty);
        }
        self.finish()
    }

    fn connect(
        &mut self,
        prev: Option<usize>,
        idx: usize,
        bond: Option<(BondOrder, usize)>,
        pos: usize,
    ) -> Result<(), SmilesError> {
        match prev {
            Some(p) => self.add_bond(p, idx, bond.map(|(o, _)| o), pos),
            None => {
                if let Some((_, bpos)) = bond {
                    return Err(syntax(bpos, "bond symbol before the first atom"));
                }
                Ok(())
            }
        }
    }

    fn add_bond(&mut self, a: usize, b: usize, order: Option<BondOrder>, pos: usize) -> Result<(), SmilesError> {
        if self
            .bonds
            .iter()
            .any(|&(x, y, _)| (x == a && y == b) || (x == b && y == a))
        {
            return Err(syntax(pos, format!("duplicate bond between atoms {a} and {b}")));
        }
        self.bonds.push((a, b, order));
        Ok(())
    }

    fn parse_organic_atom(&mut self) -> Result<usize, SmilesError> {
        let start = self.pos;
        let c = self.src[self.pos];
        let two = self.src.get(self.pos..self.pos + 2);
        let (element, aromatic, len) = match (c, two) {
            (b'C', Some(b"Cl")) => (Element::Cl, false, 2),
            (b'B', Some(b"Br")) => (Element::Br, false, 2),
            (b'B', _) => (Element::B, false, 1),
            (b'C', _) => (Element::C, false, 1),
            (b'N', _) => (Element::N, false, 1),
            (b'O', _) => (Element::O, false, 1),
            (b'P', _) => (Element::P, false, 1),
            (b'S', _) => (Element::S, false, 1),
            (b'F', _) => (Element::F, false, 1),
            (b'I', _) => (Element::I, false, 1),
            (b'b', _) => (Element::B, true, 1),
            (b'c', _) => (Element::C, true, 1),
            (b'n', _) => (Element::N, true, 1),
            (b'o', _) => (Element::O, true, 1),
            (b'p', _) => (Element::P, true, 1),
            (b's', _) => (Element::S, true, 1),
            _ => {
                return Err(syntax(start, format!("unknown element token '{}'", c as char)));
            }
        };
        self.pos += len;
        self.atoms.push(PendingAtom {
            element,
            aromatic,
            charge: 0,
            explicit_h: None,
            bracket: false,
        });
        Ok(self.atoms.len() - 1)
    }

    fn parse_bracket_atom(&mut self) -> Result<usize, SmilesError> {
        let open = self.pos;
        let close = self.src[open..]
            .iter()
            .position(|&c| c == b']')
            .map(|p| open + p)
            .ok_or_else(|| syntax(open, "unclosed '['"))?;
        let body = &self.src[open + 1..close];
        let mut i: usize;
        if body.first().is_some_and(|c| c.is_ascii_digit()) {
            return Err(unsupported(open + 1, "isotope"));
        }
        // Element symbol: uppercase + optional lowercase, or aromatic lowercase.
        let (element, aromatic) = if let Some(&c) = body.first() {
            if c.is_ascii_uppercase() {
                let two = body
                    .get(..2)
                    .filter(|s| s[1].is_ascii_lowercase())
                    .and_then(|s| std::str::from_utf8(s).ok())
                    .and_then(Element::from_symbol);
                match two {
                    Some(e) => {
                        i = 2;
                        (e, false)
                    }
                    None => {
                        let sym = (c as char).to_string();
                        let e = Element::from_symbol(&sym)
                            .ok_or_else(|| syntax(open + 1, format!("unknown element '{sym}'")))?;
                        i = 1;
                        (e, false)
                    }
                }
            } else if c.is_ascii_lowercase() {
                let two = body
                    .get(..2)
                    .filter(|s| s[1].is_ascii_lowercase())
                    .and_then(|s| std::str::from_utf8(s).ok())
                    .and_then(|s| {
                        let mut cap = s.to_string();
                        cap[..1].make_ascii_uppercase();
                        Element::from_symbol(&cap)
                    })
                    .filter(|e| e.can_be_aromatic());
                match two {
                    Some(e) => {
                        i = 2;
                        (e, true)
                    }
                    None => {
                        let sym = (c.to_ascii_uppercase() as char).to_string();
                        let e = Element::from_symbol(&sym)
                            .filter(|e| e.can_be_aromatic())
                            .ok_or_else(|| syntax(open + 1, format!("unknown aromatic element '{}'", c as char)))?;
                        i = 1;
                        (e, true)
                    }
                }
            } else {
                return Err(syntax(open + 1, "expected element symbol in bracket atom"));
            }
        } else {
            return Err(syntax(open, "empty bracket atom"));
        };
        if body.get(i) == Some(&b'@') {
            return Err(unsupported(open + 1 + i, "chirality marker"));
        }
        let mut hcount = 0u8;
        if body.get(i) == Some(&b'H') {
            i += 1;
            hcount = 1;
            if let Some(d) = body.get(i).filter(|c| c.is_ascii_digit()) {
                hcount = d - b'0';
                i += 1;
            }
        }
        let mut charge: i8 = 0;
        if let Some(&sign) = body.get(i).filter(|c| **c == b'+' || **c == b'-') {
            let unit: i8 = if sign == b'+' { 1 } else { -1 };
            i += 1;
            if let Some(d) = body.get(i).filter(|c| c.is_ascii_digit()) {
                charge = unit * (d - b'0') as i8;
                i += 1;
            } else {
                charge = unit;
                while body.get(i) == Some(&sign) {
                    charge += unit;
                    i += 1;
                }
            }
        }
        match body.get(i) {
            None => {}
            Some(b':') => return Err(unsupported(open + 1 + i, "atom class")),
            Some(b'@') => return Err(unsupported(open + 1 + i, "chirality marker")),
            Some(&c) => {
                return Err(syntax(
                    open + 1 + i,
                    format!("unexpected '{}' in bracket atom", c as char),
                ));
            }
        }
        self.pos = close + 1;
        self.atoms.push(PendingAtom {
            element,
            aromatic,
            charge,
            explicit_h: Some(hcount),
            bracket: true,
        });
        Ok(self.atoms.len() - 1)
    }

    fn finish(self) -> Result<MolecularGraph, SmilesError> {
        let atoms: Vec<Atom> = self
            .atoms
            .iter()
            .map(|p| Atom {
                element: p.element,
                degree: 0,
                hybridization: Hybridization::Sp3,
                formal_charge: p.charge,
                is_aromatic: p.aromatic,
                hydrogens: p.explicit_h.unwrap_or(0),
                bracket: p.bracket,
            })
            .collect();
        // Implicit bonds between two aromatic atoms start aromatic; ring
        // membership is checked once the graph exists.
        let bonds: Vec<Bond> = self
            .bonds
            .iter()
            .map(|&(a, b, order)| Bond {
                a,
                b,
                order: order.unwrap_or(if atoms[a].is_aromatic && atoms[b].is_aromatic {
                    BondOrder::Aromatic
                } else {
                    BondOrder::Single
                }),
            })
            .collect();
        let implicit: Vec<bool> = self.bonds.iter().map(|b| b.2.is_none()).collect();
        let mut g = MolecularGraph::from_parts(atoms, bonds)?;

        for bi in 0..g.bonds.len() {
            if g.bonds[bi].order == BondOrder::Aromatic && implicit[bi] && !g.bond_in_ring(bi) {
                g.bonds[bi].order = BondOrder::Single;
            }
        }
        for (i, atom) in g.atoms.iter().enumerate() {
            if atom.is_aromatic && !g.adjacency[i].iter().any(|&(_, bi)| g.bond_in_ring(bi)) {
                return Err(syntax(0, format!("aromatic atom {i} is not in a ring")));
            }
        }

        // Implicit hydrogens use the bond sums of the SMILES as written.
        for i in 0..g.atoms.len() {
            if g.atoms[i].bracket {
                continue;
            }
            g.atoms[i].hydrogens = g.implicit_hydrogens(i);
        }
        g.perceive_kekule_aromaticity();
        for i in 0..g.atoms.len() {
            g.atoms[i].hybridization = g.infer_hybridization(i);
        }
        Ok(g)
    }

    // Nothing else to do: canonical order is the parse order.
}

impl MolecularGraph {
    fn implicit_hydrogens(&self, i: usize) -> u8 {
        let atom = &self.atoms[i];
        let mut sum: u32 = self.adjacency[i]
            .iter()
            .map(|&(_, bi)| self.bonds[bi].order.valence())
            .sum();
        let valences = atom.element.default_valences();
        if atom.is_aromatic {
            // One extra electron for the pi system, except for lone-pair donors.
            if matches!(atom.element, Element::B | Element::C | Element::N | Element::P) {
                sum += 1;
            }
            return valences.first().map_or(0, |&v| v.saturating_sub(sum) as u8);
        }
        valences.iter().find(|&&v| v >= sum).map_or(0, |&v| (v - sum) as u8)
    }

    fn perceive_kekule_aromaticity(&mut self) {
        loop {
            let rings = self.rings_of_size(6, |b| b.order != BondOrder::Triple);
            let mut changed = false;
            for ring in rings {
                if ring.iter().all(|&a| self.atoms[a].is_aromatic) {
                    continue;
                }
                if !ring.iter().all(|&a| {
                    matches!(self.atoms[a].element, Element::C | Element::N) && self.atoms[a].formal_charge == 0
                }) {
                    continue;
                }
                let ring_bonds: Vec<usize> = (0..6)
                    .map(|k| {
                        let (a, b) = (ring[k], ring[(k + 1) % 6]);
                        self.adjacency[a]
                            .iter()
                            .find(|(n, _)| *n == b)
                            .map(|(_, bi)| *bi)
                            .expect("ring edge exists")
                    })
                    .collect();
                // Each ring atom needs one in-ring double bond, unless it is
                // already aromatic from a fused ring; no two doubles may touch.
                let ok = (0..6).all(|k| {
                    let before = self.bonds[ring_bonds[(k + 5) % 6]].order;
                    let after = self.bonds[ring_bonds[k]].order;
                    let doubles = [before, after].iter().filter(|o| **o == BondOrder::Double).count();
                    let aromatic_edge = [before, after].contains(&BondOrder::Aromatic);
                    doubles == 1 || (doubles == 0 && (aromatic_edge || self.atoms[ring[k]].is_aromatic))
                });
                let has_double = ring_bonds.iter().any(|&bi| self.bonds[bi].order == BondOrder::Double);
                if ok && has_double {
                    for &a in &ring {
                        self.atoms[a].is_aromatic = true;
                    }
                    for &bi in &ring_bonds {
                        self.bonds[bi].order = BondOrder::Aromatic;
                    }
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
    }
}

/// Atom feature matrix rows `[element_index, degree, hybridization_index,
/// formal_charge, is_aromatic]`.
///
/// Encoding: element indices follow [`Element`] discriminants (C=0, N=1,
/// O=2, S=3, P=4, F=5, Cl=6, Br=7, I=8, B=9, ...); hybridization sp=0,
/// sp2=1, sp3=2, other=3; aromatic flag 0/1.
pub fn atom_features(g: &MolecularGraph) -> Vec<[f64; 5]> {
    g.atoms
        .iter()
        .map(|a| {
            [
                a.element.index() as f64,
                a.degree as f64,
                a.hybridization.index() as f64,
                f64::from(a.formal_charge),
                if a.is_aromatic { 1.0 } else { 0.0 },
            ]
        })
        .collect()
}

pub const ATOM_FEATURES: usize = 5;

/// All-pairs hop distances by BFS from every atom.
pub fn shortest_path_distances(g: &MolecularGraph) -> Result<Vec<Vec<usize>>, DisconnectedGraph> {
    let n = g.n_atoms();
    let mut dist = vec![vec![usize::MAX; n]; n];
    for (s, row) in dist.iter_mut().enumerate() {
        row[s] = 0;
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for &(v, _) in g.neighbors(u) {
                if row[v] == usize::MAX {
                    row[v] = row[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        if let Some(t) = row.iter().position(|&d| d == usize::MAX) {
            return Err(DisconnectedGraph(s, t));
        }
    }
    Ok(dist)
}
