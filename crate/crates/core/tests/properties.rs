//! Property tests against independent brute-force oracles.

use std::collections::VecDeque;

use linker_core::fgparser::FgParser;
use linker_core::labels::{residue_hard, residue_scores, residue_type_scores, smooth, LabelSet};
use linker_core::losses::{focal_value, info_nce, uniformity, FocalConfig};
use linker_core::metrics::{pr_curve, prevalence, roc_curve};
use linker_core::molgraph::{parse_smiles, shortest_path_distances, MolecularGraph};
use linker_core::pairwise_unet::{InteractionTensor, N_TYPES};
use linker_core::tensor::{Tape, Tensor};
use proptest::prelude::*;

mod common;

use common::oracles::{ap_oracle, auc_oracle};

// ------------------------------------------------------------------ metrics

/// Scores on a coarse grid so ties are common, labels with both classes.
fn scored_labels() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (1usize..=64)
        .prop_flat_map(|n| {
            (
                prop::collection::vec(0u8..12, n),
                prop::collection::vec(any::<bool>(), n),
            )
        })
        .prop_map(|(s, mut l)| {
            let n = l.len();
            l[0] = true;
            if n > 1 {
                l[n - 1] = false;
            }
            (s.iter().map(|&k| k as f64 / 11.0).collect(), l)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn ap_and_auc_match_enumeration((scores, labels) in scored_labels()) {
        let pr = pr_curve(&scores, &labels).unwrap();
        prop_assert_eq!(pr.ap, ap_oracle(&scores, &labels));
        prop_assert!((0.0..=1.0).contains(&pr.ap));
        if labels.iter().any(|&l| !l) {
            let roc = roc_curve(&scores, &labels).unwrap();
            prop_assert_eq!(roc.auc, auc_oracle(&scores, &labels));
        }
    }

    #[test]
    fn residue_scores_are_joint_max(r in 1usize..12, f in 1usize..6, seed in any::<u64>()) {
        let probs = pseudo_random(r * f * N_TYPES, seed);
        let p = InteractionTensor::new(r, f, probs).unwrap();
        let y = residue_scores(&p);
        let u = residue_type_scores(&p);
        for ri in 0..r {
            let mut joint = f64::NEG_INFINITY;
            for fi in 0..f {
                for k in 0..N_TYPES {
                    joint = joint.max(p.get(ri, fi, k));
                }
            }
            let two_stage = u[ri].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(y[ri], joint);
            prop_assert_eq!(two_stage, joint);
        }
    }
}

fn pseudo_random(n: usize, seed: u64) -> Vec<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(0.0..1.0)).collect()
}

proptest! {
    #[test]
    fn monotone_transform_keeps_ap_and_auc((scores, labels) in scored_labels()) {
        let moved: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
        let a = pr_curve(&scores, &labels).unwrap();
        let b = pr_curve(&moved, &labels).unwrap();
        prop_assert_eq!(a.ap, b.ap);
        if labels.iter().any(|&l| !l) {
            prop_assert_eq!(roc_curve(&scores, &labels).unwrap().auc, roc_curve(&moved, &labels).unwrap().auc);
        }
        let last = a.points.last().unwrap();
        prop_assert_eq!(last.recall, 1.0);
        prop_assert_eq!(last.precision, prevalence(&labels).unwrap());
    }

    #[test]
    fn recall_never_decreases((scores, labels) in scored_labels()) {
        let pr = pr_curve(&scores, &labels).unwrap();
        for w in pr.points.windows(2) {
            prop_assert!(w[0].threshold > w[1].threshold);
            prop_assert!(w[0].recall <= w[1].recall);
        }
    }
}

// ---------------------------------------------------------------- smoothing

proptest! {
    #[test]
    fn smoothing_laws(y in prop::collection::vec(prop::bool::weighted(0.15), 1..80), s1 in 0.1f64..5.0, ds in 0.0f64..5.0) {
        let hard: Vec<u8> = y.iter().map(|&b| b as u8).collect();
        let lo = smooth(&hard, s1).unwrap();
        let hi = smooth(&hard, s1 + ds).unwrap();
        for i in 0..hard.len() {
            prop_assert!(lo[i] <= hi[i]);
            prop_assert!(lo[i] >= hard[i] as f64);
            prop_assert!((0.0..=1.0).contains(&lo[i]));
            if hard[i] == 1 {
                prop_assert_eq!(lo[i], 1.0);
            }
        }
    }

    #[test]
    fn residue_hard_is_row_any(r in 1usize..8, f in 1usize..5, seed in any::<u64>()) {
        let y: Vec<u8> = pseudo_random(r * f * N_TYPES, seed).iter().map(|&v| (v < 0.05) as u8).collect();
        let set = LabelSet::from_dense("p", "l", r, f, "h", y.clone());
        let hard = residue_hard(&set);
        for ri in 0..r {
            let mut any = false;
            for fi in 0..f {
                for k in 0..N_TYPES {
                    any |= y[(ri * f + fi) * N_TYPES + k] == 1;
                }
            }
            prop_assert_eq!(hard[ri] == 1, any);
        }
        prop_assert_eq!(LabelSet::from_record(&set.to_record(), Some("h")).unwrap(), set);
    }
}

// ------------------------------------------------------------------ losses

fn info_nce_oracle(h: &[Vec<f64>], y: &[f64], tau: f64) -> f64 {
    let b = h.len();
    let z: Vec<Vec<f64>> = h
        .iter()
        .map(|r| {
            let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            r.iter().map(|v| v / n).collect()
        })
        .collect();
    let dot = |a: &[f64], c: &[f64]| a.iter().zip(c).map(|(x, y)| x * y).sum::<f64>();
    let mut total = 0.0;
    for i in 0..b {
        let mut pos = usize::MAX;
        for j in 0..b {
            if j != i && (pos == usize::MAX || (y[i] - y[j]).abs() < (y[i] - y[pos]).abs()) {
                pos = j;
            }
        }
        let denom: f64 = (0..b).map(|j| (dot(&z[i], &z[j]) / tau).exp()).sum();
        total += ((dot(&z[i], &z[pos]) / tau).exp() / denom).ln();
    }
    -total / b as f64
}

fn batch() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>)> {
    (2usize..8).prop_flat_map(|b| {
        (
            prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), b),
            prop::collection::vec(0.0f64..10.0, b),
        )
    })
}

fn run_info_nce(h: &[Vec<f64>], y: &[f64]) -> f64 {
    let mut tape = Tape::new();
    let t = tape.constant(Tensor::from_rows(h).unwrap());
    let l = info_nce(&mut tape, t, y, 0.1).unwrap();
    tape.data(l)[0]
}

proptest! {
    #[test]
    fn info_nce_matches_double_loop((h, y) in batch()) {
        prop_assume!(h.iter().all(|r| r.iter().map(|v| v * v).sum::<f64>() > 1e-3));
        let got = run_info_nce(&h, &y);
        let want = info_nce_oracle(&h, &y, 0.1);
        prop_assert!((got - want).abs() <= 1e-9 * want.abs().max(1.0), "{} vs {}", got, want);
    }

    #[test]
    fn info_nce_is_permutation_equivariant((h, y) in batch(), rot in 0usize..8) {
        prop_assume!(h.iter().all(|r| r.iter().map(|v| v * v).sum::<f64>() > 1e-3));
        let b = h.len();
        let perm: Vec<usize> = (0..b).map(|i| (i * 5 + rot) % b).collect();
        let mut sorted = perm.clone();
        sorted.sort();
        sorted.dedup();
        prop_assume!(sorted.len() == b);
        // Distinct nearest neighbours, so no tie-break depends on order.
        for i in 0..b {
            let mut d: Vec<f64> = (0..b).filter(|&j| j != i).map(|j| (y[i] - y[j]).abs()).collect();
            d.sort_by(f64::total_cmp);
            prop_assume!(d.len() < 2 || d[1] - d[0] > 1e-9);
        }
        let hp: Vec<Vec<f64>> = perm.iter().map(|&i| h[i].clone()).collect();
        let yp: Vec<f64> = perm.iter().map(|&i| y[i]).collect();
        let a = run_info_nce(&h, &y);
        let c = run_info_nce(&hp, &yp);
        prop_assert!((a - c).abs() <= 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn uniformity_matches_double_loop((h, _y) in batch()) {
        prop_assume!(h.iter().all(|r| r.iter().map(|v| v * v).sum::<f64>() > 1e-3));
        let z: Vec<Vec<f64>> = h.iter().map(|r| {
            let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            r.iter().map(|v| v / n).collect()
        }).collect();
        let b = z.len();
        let mut acc = 0.0;
        for i in 0..b {
            for j in 0..b {
                let d2: f64 = z[i].iter().zip(&z[j]).map(|(a, c)| (a - c) * (a - c)).sum();
                acc += (-2.0 * d2).exp();
            }
        }
        let want = (acc / (b * b) as f64).ln();
        let mut tape = Tape::new();
        let t = tape.constant(Tensor::from_rows(&z).unwrap());
        let l = uniformity(&mut tape, t).unwrap();
        prop_assert!((tape.data(l)[0] - want).abs() < 1e-12);
    }

    #[test]
    fn focal_gamma_zero_is_weighted_bce(p in prop::collection::vec(0.001f64..0.999, 1..40), seed in any::<u64>()) {
        let y: Vec<u8> = pseudo_random(p.len(), seed).iter().map(|&v| (v < 0.3) as u8).collect();
        let cfg = FocalConfig { alpha: 0.85, gamma: 0.0 };
        let got = focal_value(&p, &y, cfg).unwrap();
        let want = p.iter().zip(&y).map(|(&pi, &yi)| {
            if yi == 1 { -0.85 * pi.ln() } else { -0.15 * (1.0 - pi).ln() }
        }).sum::<f64>() / p.len() as f64;
        prop_assert!((got - want).abs() < 1e-12);
        prop_assert!(focal_value(&p, &y, FocalConfig::default()).unwrap() >= 0.0);
    }
}

// ------------------------------------------------------------- convolution

fn conv_oracle(x: &Tensor, w: &Tensor, b: &[f64], stride: usize, pad: (usize, usize)) -> (Vec<usize>, Vec<f64>) {
    let (c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (co, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
    let oh = (h + 2 * pad.0 - kh) / stride + 1;
    let ow = (wd + 2 * pad.1 - kw) / stride + 1;
    let mut out = vec![0.0; co * oh * ow];
    for o in 0..co {
        for i in 0..oh {
            for j in 0..ow {
                let mut acc = b[o];
                for ci in 0..c {
                    for u in 0..kh {
                        for v in 0..kw {
                            let (yy, xx) = (
                                (i * stride + u) as isize - pad.0 as isize,
                                (j * stride + v) as isize - pad.1 as isize,
                            );
                            if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < wd {
                                acc += w.at(&[o, ci, u, v]) * x.at(&[ci, yy as usize, xx as usize]);
                            }
                        }
                    }
                }
                out[(o * oh + i) * ow + j] = acc;
            }
        }
    }
    (vec![co, oh, ow], out)
}

proptest! {
    #[test]
    fn conv2d_matches_direct_loops(
        c in 1usize..3, co in 1usize..3, h in 3usize..=8, w in 3usize..=8,
        k in prop::sample::select(vec![1usize, 3]), stride in 1usize..=2, pad in 0usize..=1, seed in any::<u64>()
    ) {
        let x = Tensor::new(&[c, h, w], pseudo_random(c * h * w, seed)).unwrap();
        let wt = Tensor::new(&[co, c, k, k], pseudo_random(co * c * k * k, seed ^ 1)).unwrap();
        let b = pseudo_random(co, seed ^ 2);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let wv = tape.constant(wt.clone());
        let bv = tape.constant(Tensor::new(&[co], b.clone()).unwrap());
        let y = tape.conv2d(xv, wv, Some(bv), stride, (pad, pad)).unwrap();
        let (shape, want) = conv_oracle(&x, &wt, &b, stride, (pad, pad));
        prop_assert_eq!(tape.shape(y), &shape[..]);
        for (g, e) in tape.data(y).iter().zip(&want) {
            prop_assert!((g - e).abs() < 1e-12);
        }
    }

    #[test]
    fn pool_and_upsample_match_loops(c in 1usize..3, h2 in 1usize..=4, w2 in 1usize..=4, seed in any::<u64>()) {
        let (h, w) = (2 * h2, 2 * w2);
        let x = Tensor::new(&[c, h, w], pseudo_random(c * h * w, seed)).unwrap();
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let p = tape.max_pool2d(xv, 2).unwrap();
        let u = tape.up_sample2d(xv, 2).unwrap();
        prop_assert_eq!(tape.shape(p), &[c, h2, w2][..]);
        prop_assert_eq!(tape.shape(u), &[c, 2 * h, 2 * w][..]);
        for ci in 0..c {
            for i in 0..h2 {
                for j in 0..w2 {
                    let m = [(0, 0), (0, 1), (1, 0), (1, 1)]
                        .iter()
                        .map(|&(a, b)| x.at(&[ci, 2 * i + a, 2 * j + b]))
                        .fold(f64::NEG_INFINITY, f64::max);
                    prop_assert_eq!(tape.value(p).at(&[ci, i, j]), m);
                }
            }
            for i in 0..2 * h {
                for j in 0..2 * w {
                    prop_assert_eq!(tape.value(u).at(&[ci, i, j]), x.at(&[ci, i / 2, j / 2]));
                }
            }
        }
    }
}

// ---------------------------------------------------------------- molecules

fn corpus() -> Vec<(String, String)> {
    include_str!("fixtures/corpus.smi")
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let mut parts = l.split('\t');
            (
                parts.next().unwrap().to_string(),
                parts.next().unwrap_or("").to_string(),
            )
        })
        .collect()
}

/// Small acyclic molecules: a carbon backbone with single-bonded substituents.
fn random_smiles() -> impl Strategy<Value = String> {
    let sub = prop::sample::select(vec!["O", "N", "Cl", "C=O", "C(=O)O", "C#N", "F"]);
    prop::collection::vec(prop::collection::vec(sub, 0..=2), 1..6).prop_map(|backbone| {
        let mut s = String::new();
        for subs in backbone {
            s.push('C');
            for x in subs {
                s.push('(');
                s.push_str(x);
                s.push(')');
            }
        }
        s
    })
}

fn bfs_oracle(g: &MolecularGraph) -> Vec<Vec<usize>> {
    let n = g.n_atoms();
    let mut adj = vec![Vec::new(); n];
    for b in g.bonds() {
        adj[b.a].push(b.b);
        adj[b.b].push(b.a);
    }
    (0..n)
        .map(|s| {
            let mut d = vec![usize::MAX; n];
            d[s] = 0;
            let mut q = VecDeque::from([s]);
            while let Some(u) = q.pop_front() {
                for &v in &adj[u] {
                    if d[v] == usize::MAX {
                        d[v] = d[u] + 1;
                        q.push_back(v);
                    }
                }
            }
            d
        })
        .collect()
}

/// Re-parse the emitted string and compare through the returned order.
fn assert_round_trip(smiles: &str) {
    let g = parse_smiles(smiles).unwrap();
    let (text, order) = g.to_smiles();
    let h = parse_smiles(&text).unwrap_or_else(|e| panic!("{smiles} -> {text}: {e}"));
    assert_eq!(h.n_atoms(), g.n_atoms(), "{smiles} -> {text}");
    assert_eq!(h.bonds().len(), g.bonds().len(), "{smiles} -> {text}");
    let mut inv = vec![0; order.len()];
    for (k, &src) in order.iter().enumerate() {
        inv[src] = k;
        let (a, b) = (g.atom(src), h.atom(k));
        assert_eq!(
            (a.element, a.formal_charge, a.is_aromatic, a.degree, a.hydrogens),
            (b.element, b.formal_charge, b.is_aromatic, b.degree, b.hydrogens),
            "{smiles} -> {text}, atom {src}"
        );
    }
    for bond in g.bonds() {
        let hb = h.bond_between(inv[bond.a], inv[bond.b]);
        assert_eq!(hb.map(|b| b.order), Some(bond.order), "{smiles} -> {text}");
    }
}

/// Nearest-group assignment recomputed from scratch.
fn tie_break_oracle(smiles: &str) {
    let parser = FgParser::default();
    let lig = parser.parse(smiles).unwrap();
    let dist = bfs_oracle(&lig.graph);
    let n = lig.graph.n_atoms();
    let detected: Vec<&Vec<usize>> = lig.groups.iter().map(|g| &g.member_atoms).collect();
    for atom in 0..n {
        let in_detected: Vec<usize> = (0..detected.len()).filter(|&gi| detected[gi].contains(&atom)).collect();
        let expected: Vec<usize> = if !in_detected.is_empty() {
            in_detected
        } else {
            let d: Vec<usize> = detected
                .iter()
                .map(|m| m.iter().map(|&a| dist[atom][a]).min().unwrap())
                .collect();
            let best = *d.iter().min().unwrap();
            vec![d.iter().position(|&x| x == best).unwrap()]
        };
        let got: Vec<usize> = (0..lig.groups.len()).filter(|&gi| lig.matrix.get(atom, gi)).collect();
        assert_eq!(got, expected, "{smiles}: atom {atom}");
    }
}

#[test]
fn corpus_round_trips() {
    for (smiles, _) in corpus() {
        assert_round_trip(&smiles);
    }
}

#[test]
fn corpus_tie_break_law() {
    for (smiles, _) in corpus() {
        tie_break_oracle(&smiles);
    }
}

#[test]
fn corpus_hop_distances_are_bfs() {
    for (smiles, _) in corpus() {
        let g = parse_smiles(&smiles).unwrap();
        assert_eq!(shortest_path_distances(&g).unwrap(), bfs_oracle(&g), "{smiles}");
    }
}

proptest! {
    #[test]
    fn random_molecules_round_trip(s in random_smiles()) {
        assert_round_trip(&s);
        tie_break_oracle(&s);
    }

    #[test]
    fn hop_distance_is_a_metric(s in random_smiles()) {
        let g = parse_smiles(&s).unwrap();
        prop_assume!(g.n_atoms() <= 8);
        let d = shortest_path_distances(&g).unwrap();
        let n = g.n_atoms();
        // Floyd-Warshall as an independent oracle.
        let mut fw = vec![vec![usize::MAX / 4; n]; n];
        for i in 0..n {
            fw[i][i] = 0;
        }
        for b in g.bonds() {
            fw[b.a][b.b] = 1;
            fw[b.b][b.a] = 1;
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    fw[i][j] = fw[i][j].min(fw[i][k] + fw[k][j]);
                }
            }
        }
        prop_assert_eq!(&d, &fw);
        for i in 0..n {
            prop_assert_eq!(d[i][i], 0);
            for j in 0..n {
                prop_assert_eq!(d[i][j], d[j][i]);
                for k in 0..n {
                    prop_assert!(d[i][k] <= d[i][j] + d[j][k]);
                }
            }
        }
    }
}

// --------------------------------------------------------------- attention

mod attention {
    use super::*;
    use linker_core::pairwise_unet::{PairwiseUnet, UnetConfig};
    use linker_core::scat::{AttentionBlock, ScatConfig};
    use linker_core::tensor::ParamStore;
    use rand::SeedableRng;

    fn block(seed: u64) -> (AttentionBlock, ParamStore) {
        let b = AttentionBlock::new("blk", 8, ScatConfig { heads: 2, ffn_mult: 2 }).unwrap();
        let mut store = ParamStore::default();
        b.init_params(&mut store, &mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        (b, store)
    }

    fn rows(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        pseudo_random(n * d, seed)
            .chunks(d)
            .map(|c| c.iter().map(|v| 2.0 * v - 1.0).collect())
            .collect()
    }

    fn run(b: &AttentionBlock, store: &ParamStore, x: &[Vec<f64>], kv: Option<&[Vec<f64>]>) -> Tensor {
        let mut tape = Tape::with_params(store);
        let xv = tape.constant(Tensor::from_rows(x).unwrap());
        let kvv = kv.map(|k| tape.constant(Tensor::from_rows(k).unwrap()));
        let out = b.forward(&mut tape, xv, kvv, None).unwrap().out;
        tape.value(out).clone()
    }

    fn rotate<T: Clone>(v: &[T], k: usize) -> Vec<T> {
        (0..v.len()).map(|i| v[(i + k) % v.len()].clone()).collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn cross_attention_ignores_key_order(lq in 1usize..6, lk in 1usize..8, k in 0usize..8, seed in any::<u64>()) {
            let (b, store) = block(seed);
            let x = rows(lq, 8, seed ^ 3);
            let kv = rows(lk, 8, seed ^ 4);
            let a = run(&b, &store, &x, Some(&kv));
            let c = run(&b, &store, &x, Some(&rotate(&kv, k)));
            for (u, v) in a.data().iter().zip(c.data()) {
                prop_assert!((u - v).abs() < 1e-12);
            }
        }

        #[test]
        fn self_attention_is_permutation_equivariant(l in 1usize..8, k in 0usize..8, seed in any::<u64>()) {
            let (b, store) = block(seed);
            let x = rows(l, 8, seed ^ 5);
            let a = run(&b, &store, &x, None);
            let c = run(&b, &store, &rotate(&x, k), None);
            for i in 0..l {
                for j in 0..8 {
                    prop_assert!((a.at(&[(i + k) % l, j]) - c.at(&[i, j])).abs() < 1e-12);
                }
            }
        }
    }

    /// Receptive radius of a depth-1 U-Net: two 3×3 convolutions per stage,
    /// one pooled stage, plus pooling and upsampling alignment.
    const RADIUS: usize = 10;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]

        #[test]
        fn padding_leaves_interior_unchanged(r in 12usize..=20, f in 12usize..=20, extra in 1usize..=3, seed in any::<u64>()) {
            let unet = PairwiseUnet { cfg: UnetConfig { depth: 1, base_channels: 2, d_unet: 2 }, in_channels: 4 };
            let mut store = ParamStore::default();
            unet.init_params(&mut store, &mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let z = Tensor::new(&[r, f, 4], pseudo_random(r * f * 4, seed ^ 9)).unwrap();
            let eval = |extra: (usize, usize)| {
                let mut tape = Tape::with_params(&store);
                let zv = tape.constant(z.clone());
                let p = unet.forward_padded(&mut tape, zv, extra).unwrap();
                tape.value(p).clone()
            };
            let m = unet.multiple();
            let a = eval((0, 0));
            let b = eval((extra * m, extra * m));
            prop_assert_eq!(a.shape(), b.shape());
            // The unpadded run already pads up to the next multiple.
            let (re, fe) = (r.div_ceil(m) * m, f.div_ceil(m) * m);
            for i in 0..re.saturating_sub(RADIUS) {
                for j in 0..fe.saturating_sub(RADIUS) {
                    for k in 0..N_TYPES {
                        prop_assert!((a.at(&[i, j, k]) - b.at(&[i, j, k])).abs() < 1e-12, "({}, {}, {})", i, j, k);
                    }
                }
            }
        }
    }
}
