mod common;

use common::{circle, naive_topk, random_set, to_set, transform_f64};
use mknn_core::knn::{Exclude, NeighborSearch, SerialSearch};
use mknn_core::metrics::{self, mutual_knn};
use mknn_core::rng;
use mknn_core::synth::{self, random_orthogonal, SynthSpec};
use mknn_core::NeighborList;
use proptest::prelude::*;
use rand::seq::index::sample;

const S: SerialSearch = SerialSearch { query_block: 64 };

fn shared(e: &mknn_core::EmbeddingSet, k: usize) -> NeighborList {
    S.topk(e, e, k, Exclude::Identity).unwrap()
}

#[test]
fn random_neighbor_assignments_hit_chance() {
    // 10,000 query rows, n = 100, k = 1: mean overlap against k/n
    let (n, rows) = (100usize, 10_000usize);
    let mut r = rng::stream(42, "chance");
    let a: Vec<u32> = (0..rows)
        .map(|_| sample(&mut r, n, 1).index(0) as u32)
        .collect();
    let b: Vec<u32> = (0..rows)
        .map(|_| sample(&mut r, n, 1).index(0) as u32)
        .collect();
    let rep = mutual_knn(
        &NeighborList::from_indices(1, n, a).unwrap(),
        &NeighborList::from_indices(1, n, b).unwrap(),
    )
    .unwrap();
    let p = 0.01;
    let se = (p * (1.0 - p) / rows as f64).sqrt();
    assert!(
        (rep.mean_score - p).abs() < 3.0 * se,
        "{} vs {p}",
        rep.mean_score
    );
    assert_eq!(rep.chance_level, p);
}

#[test]
fn k_sweep_on_independent_spaces_tracks_chance() {
    let ks = [1usize, 10, 50];
    let seeds = 30;
    let mut sums = vec![Vec::new(); ks.len()];
    for seed in 0..seeds {
        let a = random_set(200, 8, 2 * seed);
        let b = random_set(200, 8, 2 * seed + 1);
        let gallery: Vec<usize> = (0..200).collect();
        for (j, r) in metrics::k_sweep(&a, &b, &gallery, &ks, &S)
            .unwrap()
            .iter()
            .enumerate()
        {
            sums[j].push(r.mean_score);
        }
    }
    for (j, &k) in ks.iter().enumerate() {
        let v = &sums[j];
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt();
        let se = sd / (v.len() as f64).sqrt();
        let expect = k as f64 / 199.0;
        assert!(
            (m - expect).abs() < 3.0 * se.max(1e-4),
            "k={k}: {m} vs {expect} (se {se})"
        );
    }
}

#[test]
fn k_sweep_identity_and_boundary() {
    let a = random_set(60, 5, 1);
    let b = random_set(60, 5, 2);
    let gallery: Vec<usize> = (0..60).collect();
    let ks = [1, 10, 59];
    for r in metrics::k_sweep(&a, &a, &gallery, &ks, &S).unwrap() {
        assert_eq!(r.mean_score, 1.0);
    }
    let last = metrics::k_sweep(&a, &b, &gallery, &ks, &S)
        .unwrap()
        .pop()
        .unwrap();
    assert_eq!(last.mean_score, 1.0);
    assert_eq!(last.chance_level, 59.0 / 60.0);
}

#[test]
fn isometry_leaves_scores_unchanged() {
    for seed in 0..5u64 {
        let a = random_set(150, 16, seed);
        let b = random_set(150, 16, 100 + seed);
        let q = random_orthogonal(16, seed, "iso");
        let rotated = transform_f64(&b, &q);
        // double-precision reconstruction preserves inner products
        for i in 0..10 {
            for j in 0..10 {
                let orig: f64 = b
                    .row(i)
                    .iter()
                    .zip(b.row(j))
                    .map(|(x, y)| *x as f64 * *y as f64)
                    .sum();
                let rot: f64 = rotated[i].iter().zip(&rotated[j]).map(|(x, y)| x * y).sum();
                assert!((orig - rot).abs() < 1e-9);
            }
        }
        let b2 = to_set(&rotated);
        for k in [1, 10] {
            let base = mutual_knn(&shared(&a, k), &shared(&b, k)).unwrap();
            let turned = mutual_knn(&shared(&a, k), &shared(&b2, k)).unwrap();
            assert!((base.mean_score - turned.mean_score).abs() <= 1e-9);
        }
    }
}

#[test]
fn best_layer_pair_picks_shared_layer() {
    let x = random_set(80, 6, 1);
    let noise_a = random_set(80, 6, 2);
    let noise_b = random_set(80, 6, 3);
    let probe: Vec<usize> = (0..80).collect();
    let best = metrics::best_layer_pair(
        &[noise_a.clone().with_layer(0), x.clone().with_layer(1)],
        &[x.clone().with_layer(4), noise_b.with_layer(5)],
        &probe,
        5,
        &S,
    )
    .unwrap();
    assert_eq!(
        (best.index_a, best.index_b, best.layer_a, best.layer_b),
        (1, 0, 1, 4)
    );
    assert_eq!(best.score, 1.0);

    let single = metrics::best_layer_pair(
        std::slice::from_ref(&x),
        std::slice::from_ref(&noise_a),
        &probe,
        5,
        &S,
    )
    .unwrap();
    let direct = mutual_knn(&shared(&x, 5), &shared(&noise_a, 5))
        .unwrap()
        .mean_score;
    assert_eq!(single.score, direct);

    assert!(metrics::best_layer_pair(&[], &[x], &probe, 5, &S).is_err());
}

#[test]
fn best_layer_pair_matches_exhaustive_driver() {
    let la: Vec<_> = (0..3)
        .map(|i| random_set(256, 8, 10 + i).with_layer(i as u32))
        .collect();
    let lb: Vec<_> = (0..3)
        .map(|i| random_set(256, 8, 20 + i).with_layer(i as u32))
        .collect();
    let probe: Vec<usize> = (0..256).collect();
    let got = metrics::best_layer_pair(&la, &lb, &probe, 10, &S).unwrap();
    // independent driver: naive neighbor lists, set overlap, argmax
    let ident: Vec<Option<usize>> = (0..256).map(Some).collect();
    let lists = |ls: &[mknn_core::EmbeddingSet]| -> Vec<Vec<Vec<u32>>> {
        ls.iter().map(|l| naive_topk(l, l, 10, &ident).0).collect()
    };
    let (na, nb) = (lists(&la), lists(&lb));
    let mut best = (0, 0, -1.0);
    for i in 0..3 {
        for j in 0..3 {
            let s: f64 = (0..256)
                .map(|q| na[i][q].iter().filter(|x| nb[j][q].contains(x)).count() as f64 / 10.0)
                .sum::<f64>()
                / 256.0;
            assert!((got.grid[i][j] - s).abs() < 1e-12);
            if s > best.2 {
                best = (i, j, s);
            }
        }
    }
    assert_eq!((got.index_a, got.index_b), (best.0, best.1));
}

#[test]
fn scale_curve_isometry_fixture_is_perfect() {
    let spec = SynthSpec {
        n_sources: 600,
        dim_a: 12,
        dim_b: 12,
        shared_dim: 12,
        seed: 3,
        ..SynthSpec::default()
    };
    let out = synth::generate(&spec).unwrap();
    let queries: Vec<usize> = (0..40).collect();
    let sel = mknn_core::nested_subsample(600, &[64, 256, 512], &queries, 1).unwrap();
    let curve = metrics::scale_curve(&out.a, &out.b, &queries, &sel, &[1, 10], &S).unwrap();
    assert_eq!(curve.len(), 6);
    for p in curve {
        assert_eq!(p.mean_score, 1.0, "{p:?}");
    }
}

#[test]
fn scale_curve_rejects_queries_in_gallery() {
    let a = random_set(30, 3, 1);
    let sel = mknn_core::nested_subsample(30, &[10], &[], 1).unwrap();
    let q = vec![sel.permutation()[0]];
    assert!(matches!(
        metrics::scale_curve(&a, &a, &q, &sel, &[1], &S),
        Err(mknn_core::Error::QueryInGallery(_))
    ));
}

#[test]
fn decomposition_different_items_both_correct() {
    // rows: q0 (c0), q1 (c1), g1, g2 (c0), g3, g4 (c1)
    let classes = [0, 1, 0, 0, 1, 1];
    let a = circle(&[0.0, 180.0, 10.0, 30.0, 190.0, 210.0]);
    let b = circle(&[0.0, 180.0, 30.0, 10.0, 210.0, 190.0]);
    let r = metrics::decompose_split(&a, &b, &classes, &[0, 1], &[2, 3, 4, 5], &[1], &S).unwrap();
    let r = &r[0];
    assert_eq!(
        (r.acc_a, r.acc_b, r.joint_correct, r.strict_agreement),
        (1.0, 1.0, 1.0, 0.0)
    );
    assert_eq!(r.ipc, 2);
}

#[test]
fn decomposition_same_wrong_item() {
    // ipc = 1: each query's nearest gallery item is the other class's item
    let classes = [0, 1, 0, 1];
    let a = circle(&[0.0, 180.0, 170.0, 10.0]);
    let b = circle(&[0.0, 180.0, 160.0, 25.0]);
    let r = metrics::decompose_split(&a, &b, &classes, &[0, 1], &[2, 3], &[1], &S).unwrap();
    let r = &r[0];
    assert_eq!((r.strict_agreement, r.joint_correct), (1.0, 0.0));
    assert_eq!((r.acc_a, r.acc_b), (0.0, 0.0));
}

#[test]
fn decomposition_identity() {
    let out = synth::generate(&SynthSpec {
        n_sources: 120,
        classes: Some(6),
        noise_a: 0.3,
        seed: 2,
        ..SynthSpec::default()
    })
    .unwrap();
    let classes = out.classes.unwrap();
    for r in metrics::decompose(&out.a, &out.a, &classes, 3, &[1, 5], 9, &S).unwrap() {
        assert_eq!(r.strict_agreement, 1.0);
        assert_eq!(r.acc_a, r.acc_b);
        assert_eq!(r.acc_a, r.joint_correct);
    }
}

#[test]
fn grouped_hand_fixture_n4_m2() {
    // gallery g0..g3 in groups {0, 0, 1, 1}; queries q0, q1 are rows 4, 5
    let a = circle(&[5.0, 40.0, 185.0, 220.0, 0.0, 180.0]);
    let b = circle(&[40.0, 5.0, 220.0, 185.0, 0.0, 180.0]);
    let gallery = [0, 1, 2, 3];
    let queries = [4, 5];
    let (ga, gb) = (a.select(&gallery).unwrap(), b.select(&gallery).unwrap());
    let (qa, qb) = (a.select(&queries).unwrap(), b.select(&queries).unwrap());
    let na = S.topk(&qa, &ga, 1, Exclude::Nothing).unwrap();
    let nb = S.topk(&qb, &gb, 1, Exclude::Nothing).unwrap();
    assert_eq!((na.row(0), nb.row(0)), (&[0u32][..], &[1u32][..]));
    let grouped = metrics::grouped_mutual_knn(&na, &nb, &[0, 0, 1, 1]).unwrap();
    let raw = mutual_knn(&na, &nb).unwrap();
    assert_eq!(grouped.mean_score, 1.0);
    assert!(raw.mean_score < 1.0);
}

#[test]
fn synth_multiplicity_grouped_dominates() {
    for m in 1..=12usize {
        let spec = SynthSpec {
            n_sources: 400 / m.max(1),
            dim_a: 16,
            dim_b: 16,
            shared_dim: 8,
            noise_a: 0.2,
            noise_b: 0.2,
            group_multiplicity_a: 1,
            group_multiplicity_b: m,
            seed: m as u64,
            ..SynthSpec::default()
        };
        let out = synth::generate(&spec).unwrap();
        for k in [1, 10] {
            let na = shared(&out.a, k);
            let nb = shared(&out.b, k);
            let raw = mutual_knn(&na, &nb).unwrap();
            let grouped = metrics::grouped_mutual_knn(&na, &nb, &out.groups).unwrap();
            for (g, r) in grouped.per_sample.iter().zip(&raw.per_sample) {
                assert!(g >= r);
            }
            if m == 1 {
                assert_eq!(grouped, raw);
            }
        }
    }
}

#[test]
fn synth_duplicates_group_match_while_raw_misses() {
    // A repeats one vector per source, B has distinct variants; queries are
    // the first row of each source, the gallery holds the rest.
    let out = synth::generate(&SynthSpec {
        n_sources: 4,
        dim_a: 8,
        dim_b: 8,
        shared_dim: 8,
        group_multiplicity_a: 1,
        group_multiplicity_b: 3,
        noise_b: 0.05,
        seed: 1,
        ..SynthSpec::default()
    })
    .unwrap();
    let queries = [0, 3, 6, 9];
    let gallery = [1, 2, 4, 5, 7, 8, 10, 11];
    let groups: Vec<u32> = gallery.iter().map(|&g| out.groups[g]).collect();
    let na = S
        .topk(
            &out.a.select(&queries).unwrap(),
            &out.a.select(&gallery).unwrap(),
            1,
            Exclude::Nothing,
        )
        .unwrap();
    let nb = S
        .topk(
            &out.b.select(&queries).unwrap(),
            &out.b.select(&gallery).unwrap(),
            1,
            Exclude::Nothing,
        )
        .unwrap();
    let grouped = metrics::grouped_mutual_knn(&na, &nb, &groups).unwrap();
    let raw = mutual_knn(&na, &nb).unwrap();
    assert_eq!(grouped.mean_score, 1.0);
    assert!(raw.mean_score <= grouped.mean_score);
    // A's tie between identical copies goes to the first sibling
    for q in 0..4 {
        assert_eq!(na.row(q)[0] as usize, 2 * q);
    }
}

#[test]
fn synth_regimes() {
    let iso = synth::generate(&SynthSpec {
        n_sources: 300,
        dim_a: 10,
        dim_b: 10,
        shared_dim: 10,
        seed: 4,
        ..SynthSpec::default()
    })
    .unwrap();
    for k in [1, 5, 50] {
        assert_eq!(
            mutual_knn(&shared(&iso.a, k), &shared(&iso.b, k))
                .unwrap()
                .mean_score,
            1.0
        );
    }
}

#[test]
fn noise_does_not_increase_alignment_on_average() {
    let levels = [0.0, 0.5, 1.0, 2.0];
    let mut means = Vec::new();
    for &noise in &levels {
        let mut total = 0.0;
        for seed in 0..10 {
            let out = synth::generate(&SynthSpec {
                n_sources: 200,
                dim_a: 16,
                dim_b: 16,
                shared_dim: 8,
                noise_a: 0.3,
                noise_b: noise,
                seed,
                ..SynthSpec::default()
            })
            .unwrap();
            total += mutual_knn(&shared(&out.a, 1), &shared(&out.b, 1))
                .unwrap()
                .mean_score;
        }
        means.push(total / 10.0);
    }
    assert!(means.windows(2).all(|w| w[1] <= w[0]), "{means:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn symmetry_identity_quantization(n in 3usize..60, d in 1usize..6, kf in 0.0f64..1.0, seed in any::<u64>()) {
        let a = random_set(n, d, seed);
        let b = random_set(n, d, seed ^ 0xabc);
        let k = 1 + ((n - 2) as f64 * kf) as usize;
        let (na, nb) = (shared(&a, k), shared(&b, k));
        let ab = mutual_knn(&na, &nb).unwrap();
        let ba = mutual_knn(&nb, &na).unwrap();
        prop_assert_eq!(&ab, &ba);
        prop_assert_eq!(mutual_knn(&na, &na).unwrap().mean_score, 1.0);
        for s in &ab.per_sample {
            let scaled = s * k as f64;
            prop_assert!((scaled - scaled.round()).abs() < 1e-9 && (0.0..=1.0).contains(s));
        }
        let mean = ab.per_sample.iter().sum::<f64>() / n as f64;
        prop_assert!((mean - ab.mean_score).abs() < 1e-9);
        let singles: Vec<u32> = (0..n as u32).collect();
        prop_assert_eq!(metrics::grouped_mutual_knn(&na, &nb, &singles).unwrap(), ab);
    }

    #[test]
    fn grouped_dominates_raw(n in 4usize..50, groups in 1u32..10, seed in any::<u64>()) {
        let a = random_set(n, 3, seed);
        let b = random_set(n, 3, seed ^ 1);
        let g: Vec<u32> = (0..n as u32).map(|i| i % groups).collect();
        let (na, nb) = (shared(&a, 3), shared(&b, 3));
        let raw = mutual_knn(&na, &nb).unwrap();
        let grp = metrics::grouped_mutual_knn(&na, &nb, &g).unwrap();
        for (x, y) in grp.per_sample.iter().zip(&raw.per_sample) {
            prop_assert!(x >= y && *x <= 1.0);
        }
    }

    #[test]
    fn decomposition_bound(seed in any::<u64>(), ipc in 1usize..4, k in 1usize..3) {
        let out = synth::generate(&SynthSpec {
            n_sources: 60,
            dim_a: 6,
            dim_b: 6,
            shared_dim: 3,
            noise_a: 0.5,
            noise_b: 0.5,
            classes: Some(4),
            seed,
            ..SynthSpec::default()
        }).unwrap();
        let classes = out.classes.unwrap();
        if let Ok(reports) = metrics::decompose(&out.a, &out.b, &classes, ipc, &[k], seed, &S) {
            for r in reports {
                prop_assert!(r.joint_correct <= r.acc_a.min(r.acc_b));
                for v in [r.acc_a, r.acc_b, r.joint_correct, r.strict_agreement] {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
            }
        }
    }
}
