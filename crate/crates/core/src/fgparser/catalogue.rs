//! The built-in functional-group pattern catalogue.
//!
//! Patterns are declarative trees: a root atom constraint plus child
//! constraints reached over bonds of a given order. A pattern matches when
//! every child can be assigned to a distinct neighbor atom. `forbid` rules
//! reject atoms that carry an *unmatched* neighbor of the listed kind, which
//! is how e.g. the hydroxyl pattern avoids firing on a carboxylic acid.
//!
//! Catalogue order defines `pattern_id` and therefore the group ordering on
//! the F axis. Reordering entries changes the catalogue hash.

use crate::molgraph::{BondOrder, Element};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BondSpec {
    Single,
    Double,
    Triple,
    Aromatic,
    Any,
}

impl BondSpec {
    pub fn accepts(self, order: BondOrder) -> bool {
        matches!(
            (self, order),
            (BondSpec::Any, _)
                | (BondSpec::Single, BondOrder::Single)
                | (BondSpec::Double, BondOrder::Double)
                | (BondSpec::Triple, BondOrder::Triple)
                | (BondSpec::Aromatic, BondOrder::Aromatic)
        )
    }
}

/// Constraint on a single atom. `None` fields are unconstrained.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomSpec {
    pub elements: &'static [Element],
    pub aromatic: Option<bool>,
    pub charge: Option<i8>,
    pub min_hydrogens: Option<u8>,
    pub max_hydrogens: Option<u8>,
    /// Exact number of heavy-atom neighbors.
    pub heavy_degree: Option<usize>,
    /// No unmatched neighbor may be reached over `bond` with one of `elements`.
    pub forbid: Vec<(BondSpec, &'static [Element])>,
}

impl AtomSpec {
    pub fn element(elements: &'static [Element]) -> Self {
        AtomSpec {
            elements,
            aromatic: None,
            charge: None,
            min_hydrogens: None,
            max_hydrogens: None,
            heavy_degree: None,
            forbid: Vec::new(),
        }
    }

    fn aromatic(mut self, flag: bool) -> Self {
        self.aromatic = Some(flag);
        self
    }

    fn charge(mut self, c: i8) -> Self {
        self.charge = Some(c);
        self
    }

    fn hydrogens(mut self, min: u8, max: u8) -> Self {
        self.min_hydrogens = Some(min);
        self.max_hydrogens = Some(max);
        self
    }

    fn degree(mut self, d: usize) -> Self {
        self.heavy_degree = Some(d);
        self
    }

    fn forbid(mut self, bond: BondSpec, elements: &'static [Element]) -> Self {
        self.forbid.push((bond, elements));
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatternNode {
    pub atom: AtomSpec,
    /// Bond from the parent (ignored on the root).
    pub bond: BondSpec,
    pub member: bool,
    pub children: Vec<PatternNode>,
}

impl PatternNode {
    fn root(atom: AtomSpec) -> Self {
        PatternNode {
            atom,
            bond: BondSpec::Any,
            member: true,
            children: Vec::new(),
        }
    }

    fn child(mut self, bond: BondSpec, atom: AtomSpec, member: bool) -> Self {
        self.children.push(PatternNode {
            atom,
            bond,
            member,
            children: Vec::new(),
        });
        self
    }

    fn subtree(mut self, bond: BondSpec, mut node: PatternNode, member: bool) -> Self {
        node.bond = bond;
        node.member = member;
        self.children.push(node);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Matcher {
    /// Tree pattern anchored at a root atom.
    Tree(PatternNode),
    /// Ring of `size` aromatic atoms joined by aromatic bonds.
    AromaticRing { size: usize, require_heteroatom: bool },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalGroupPattern {
    pub pattern_id: usize,
    pub name: &'static str,
    pub matcher: Matcher,
}

use BondSpec::{Double, Single, Triple};
use Element::{Br, Cl, C, F, I, N, O, P, S};

const CARBON: &[Element] = &[C];
const HALOGENS: &[Element] = &[F, Cl, Br, I];
const HETERO_DOUBLE: &[Element] = &[O, N, S];

/// Carbon that is not part of a carbonyl, imine or thiocarbonyl.
fn plain_carbon() -> AtomSpec {
    AtomSpec::element(CARBON).forbid(Double, HETERO_DOUBLE)
}

fn amine(hydrogens: u8, carbons: usize) -> PatternNode {
    let mut root = PatternNode::root(
        AtomSpec::element(&[N])
            .aromatic(false)
            .charge(0)
            .hydrogens(hydrogens, hydrogens)
            .degree(carbons)
            .forbid(Double, &[C, N, O, S])
            .forbid(BondSpec::Any, &[S, P, N, O]),
    );
    for _ in 0..carbons {
        root = root.child(Single, plain_carbon(), false);
    }
    root
}

/// The built-in catalogue, in pattern-id order.
pub fn default_catalogue() -> Vec<FunctionalGroupPattern> {
    let entries: Vec<(&'static str, Matcher)> = vec![
        (
            "hydroxyl",
            Matcher::Tree(
                PatternNode::root(AtomSpec::element(&[O]).charge(0).hydrogens(1, 1).degree(1)).child(
                    Single,
                    plain_carbon(),
                    false,
                ),
            ),
        ),
        (
            "carboxylic_acid",
            Matcher::Tree(
                PatternNode::root(AtomSpec::element(CARBON).aromatic(false))
                    .child(Double, AtomSpec::element(&[O]), true)
                    .child(Single, AtomSpec::element(&[O]).degree(1), true),
            ),
        ),
        (
            "ester",
            Matcher::Tree(
                PatternNode::root(AtomSpec::element(CARBON).aromatic(false))
                    .child(Double, AtomSpec::element(&[O]), true)
                    .subtree(
                        Single,
                        PatternNode::root(AtomSpec::element(&[O]).degree(2)).child(
                            Single,
                            AtomSpec::element(CARBON),
                            false,
                        ),
                        true,
                    ),
            ),
        ),
        (
            "ether",
            Matcher::Tree(
                PatternNode::root(AtomSpec::element(&[O]).aromatic(false).charge(0).degree(2))
                    .child(Single, plain_carbon(), false)
                    .child(Single, plain_carbon(), false),
            ),
        ),
        (
            "aldehyde",
            Matcher::Tree(
                PatternNode::root(
                    AtomSpec::element(CARBON)
                        .aromatic(false)
                        .hydrogens(1, 2)
                        .forbid(Single, &[O, N, S]),
                )
                .child(Double, AtomSpec::element(&[O]), true),
            ),
        ),
        (
            "ketone",
            Matcher::Tree(
                PatternNode::root(AtomSpec::element(CARBON).aromatic(false))
                    .child(Double, AtomSpec::element(&[O]), true)
                    .child(BondSpec::Any, AtomSpec::element(CARBON), false)
                    .child(BondSpec::Any, AtomSpec::element(CARBON), false),
            ),
        ),
        (
            "amide",
            Matcher::Tree(
                PatternNode::root(AtomSpec::element(CARBON).aromatic(false).forbid(Single, &[N, O]))
                    .child(Double, AtomSpec::element(&[O]), true)
                    .child(Single, AtomSpec::element(&[N]).aromatic(false), true),
            ),
        ),
        ("primary_amine", Matcher::Tree(amine(2, 1))),
        ("secondary_amine", Matcher::Tree(amine(1, 2))),
        ("tertiary_amine", Matcher::Tree(amine(0, 3))),
        (
            "nitro",
            Matcher::Tree(
                PatternNode::root(AtomSpec::element(&[N]).charge(1))
                    .child(Double, AtomSpec::element(&[O]), true)
                    .child(Single, AtomSpec::element(&[O]).charge(-1), true),
            ),
        ),
        (
            "nitrile",
            Matcher::Tree(PatternNode::root(AtomSpec::element(CARBON)).child(Triple, AtomSpec::element(&[N]), true)),
        ),
        (
            "thiol",
            Matcher::Tree(
                PatternNode::root(AtomSpec::element(&[S]).charge(0).hydrogens(1, 1).degree(1)).child(
                    Single,
                    AtomSpec::element(CARBON),
                    false,
                ),
            ),
        ),
        (
            "thioether",
            Matcher::Tree(
                PatternNode::root(AtomSpec::element(&[S]).aromatic(false).charge(0).degree(2))
                    .child(Single, plain_carbon(), false)
                    .child(Single, plain_carbon(), false),
            ),
        ),
        (
            "sulfonamide",
            Matcher::Tree(
                PatternNode::root(AtomSpec::element(&[S]))
                    .child(Double, AtomSpec::element(&[O]), true)
                    .child(Double, AtomSpec::element(&[O]), true)
                    .child(Single, AtomSpec::element(&[N]), true),
            ),
        ),
        (
            "phosphate",
            Matcher::Tree(
                PatternNode::root(AtomSpec::element(&[P]))
                    .child(Double, AtomSpec::element(&[O]), true)
                    .child(Single, AtomSpec::element(&[O]), true)
                    .child(Single, AtomSpec::element(&[O]), true)
                    .child(Single, AtomSpec::element(&[O]), true),
            ),
        ),
        (
            "halogen",
            Matcher::Tree(PatternNode::root(AtomSpec::element(HALOGENS).degree(1)).child(
                Single,
                AtomSpec::element(CARBON),
                false,
            )),
        ),
        (
            "aromatic_6_ring",
            Matcher::AromaticRing {
                size: 6,
                require_heteroatom: false,
            },
        ),
        (
            "aromatic_5_heterocycle",
            Matcher::AromaticRing {
                size: 5,
                require_heteroatom: true,
            },
        ),
        (
            "guanidine",
            Matcher::Tree(
                PatternNode::root(AtomSpec::element(CARBON).aromatic(false))
                    .child(Double, AtomSpec::element(&[N]), true)
                    .child(Single, AtomSpec::element(&[N]), true)
                    .child(Single, AtomSpec::element(&[N]), true),
            ),
        ),
        (
            "urea",
            Matcher::Tree(
                PatternNode::root(AtomSpec::element(CARBON).aromatic(false))
                    .child(Double, AtomSpec::element(&[O]), true)
                    .child(Single, AtomSpec::element(&[N]), true)
                    .child(Single, AtomSpec::element(&[N]), true),
            ),
        ),
        (
            "alkene",
            Matcher::Tree(PatternNode::root(AtomSpec::element(CARBON).aromatic(false)).child(
                Double,
                AtomSpec::element(CARBON).aromatic(false),
                true,
            )),
        ),
        (
            "alkyne",
            Matcher::Tree(PatternNode::root(AtomSpec::element(CARBON)).child(Triple, AtomSpec::element(CARBON), true)),
        ),
    ];
    entries
        .into_iter()
        .enumerate()
        .map(|(pattern_id, (name, matcher))| FunctionalGroupPattern {
            pattern_id,
            name,
            matcher,
        })
        .collect()
}
