use std::collections::{BTreeMap, BTreeSet};

use ndarray::{Array1, Array2, Array3};
use proptest::prelude::*;

use lscd_core::clustering::{clustering_loss, correlation_cluster, ClusteringParams};
use lscd_core::embed::{
    decode_store, pool_subwords, usage_vector, write_store, EmbeddingRecord, LayerAggregation,
    LayerSelection, PoolingSpec, SubwordPooling,
};
use lscd_core::ingest::{read_judgments, read_uses, write_judgments, write_uses, BinaryThresholds};
use lscd_core::measures::{binary_change, jsd_distance, NoisePolicy, SenseDistribution};
use lscd_core::metrics::{
    adjusted_rand_index, f1_binary, krippendorff_alpha_ordinal, pearson, spearman, PairedSeries,
};
use lscd_core::wic::{generate_pairs, vector_distance, DistanceMetric, ThresholdSpec};
use lscd_core::wug::{
    build_graph, Aggregation, CharSpan, Grouping, Judgment, Ordinal, PairType, SenseClustering,
    Usage, WordUsageGraph,
};

fn usage(i: usize, g: Grouping) -> Usage {
    let context = format!("ctx word {i}");
    Usage {
        id: format!("u{i:02}"),
        lemma: "word".into(),
        pos: None,
        date: None,
        grouping: g,
        target_span: CharSpan::new(4, 8),
        sentence_span: None,
        context,
        extra: BTreeMap::new(),
    }
}

fn usages(groupings: &[bool]) -> Vec<Usage> {
    groupings
        .iter()
        .enumerate()
        .map(|(i, &later)| usage(i, if later { Grouping::Later } else { Grouping::Earlier }))
        .collect()
}

prop_compose! {
    fn judgments(max_nodes: usize)(n in 2..max_nodes)(
        n in Just(n),
        raw in prop::collection::vec((0..n, 0..n, 0u8..=4, 0..3usize), 1..40),
    ) -> (usize, Vec<Judgment>) {
        let js = raw
            .into_iter()
            .filter(|(a, b, _, _)| a != b)
            .map(|(a, b, r, ann)| {
                Judgment::new(&format!("u{a:02}"), &format!("u{b:02}"), &format!("a{ann}"), Ordinal::new(r))
            })
            .collect();
        (n, js)
    }
}

prop_compose! {
    fn weighted_graph(max_nodes: usize)(n in 1..max_nodes)(
        n in Just(n),
        weights in prop::collection::vec(prop::option::of(1.0f64..4.0), n * (n.max(1) - 1) / 2),
    ) -> WordUsageGraph {
        let us = usages(&vec![false; n]);
        let mut edges = Vec::new();
        let mut k = 0;
        for i in 0..n {
            for j in i + 1..n {
                if let Some(w) = weights[k] {
                    edges.push((us[i].id.clone(), us[j].id.clone(), w));
                }
                k += 1;
            }
        }
        WordUsageGraph::from_scores(&us, edges.iter().map(|(a, b, w)| (a.as_str(), b.as_str(), *w))).unwrap()
    }
}

fn distribution(weights: &[u32]) -> Option<SenseDistribution> {
    let counts: BTreeMap<i64, usize> = weights
        .iter()
        .enumerate()
        .filter(|(_, &w)| w > 0)
        .map(|(k, &w)| (k as i64, w as usize))
        .collect();
    SenseDistribution::from_counts(&counts).ok()
}

fn clustering(labels: &[i64]) -> SenseClustering {
    labels
        .iter()
        .enumerate()
        .map(|(i, &l)| (format!("u{i:02}"), l))
        .collect()
}

fn distinct(v: &[f64]) -> bool {
    v.iter().any(|&x| x != v[0])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn graph_is_independent_of_judgment_order((n, js) in judgments(8), seed in any::<u64>()) {
        let us = usages(&vec![false; n]);
        let a = build_graph(&us, &js, Aggregation::Median).unwrap();
        let mut shuffled = js.clone();
        let k = shuffled.len();
        shuffled.rotate_left((seed as usize) % k.max(1));
        shuffled.reverse();
        let b = build_graph(&us, &shuffled, Aggregation::Median).unwrap();
        prop_assert_eq!(&a, &b);
        for (x, y, e) in a.edges() {
            prop_assert!(x < y);
            let lo = *e.judgments.iter().min().unwrap() as f64;
            let hi = *e.judgments.iter().max().unwrap() as f64;
            prop_assert!(lo <= e.weight && e.weight <= hi);
        }
    }

    #[test]
    fn subgraphs_partition_nodes(groupings in prop::collection::vec(any::<bool>(), 1..12)) {
        let us = usages(&groupings);
        let g = WordUsageGraph::with_nodes(&us).unwrap();
        let early = g.subgraph_by_grouping(Grouping::Earlier);
        let late = g.subgraph_by_grouping(Grouping::Later);
        prop_assert_eq!(early.node_count() + late.node_count(), g.node_count());
        let e: BTreeSet<&str> = early.node_ids().collect();
        prop_assert!(late.node_ids().all(|id| !e.contains(id)));
    }

    #[test]
    fn discretize_is_monotone(a in -5.0f64..5.0, b in -5.0f64..5.0) {
        let th = ThresholdSpec::new(-1.0, 0.0, 1.0).unwrap();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(th.discretize(lo) <= th.discretize(hi));
    }

    #[test]
    fn distances_are_symmetric_and_non_negative(
        v in prop::collection::vec(-10.0f64..10.0, 1..8),
        w in prop::collection::vec(-10.0f64..10.0, 1..8),
        scale in 0.01f64..100.0,
    ) {
        let n = v.len().min(w.len());
        let (a, b) = (Array1::from(v[..n].to_vec()), Array1::from(w[..n].to_vec()));
        for m in [DistanceMetric::Euclidean, DistanceMetric::Manhattan] {
            let d = vector_distance(a.view(), b.view(), m).unwrap();
            prop_assert!(d >= 0.0);
            prop_assert_eq!(d, vector_distance(b.view(), a.view(), m).unwrap());
            prop_assert_eq!(vector_distance(a.view(), a.view(), m).unwrap(), 0.0);
        }
        if a.iter().any(|&x| x != 0.0) && b.iter().any(|&x| x != 0.0) {
            let d = vector_distance(a.view(), b.view(), DistanceMetric::Cosine).unwrap();
            let scaled = &a * scale;
            let ds = vector_distance(scaled.view(), b.view(), DistanceMetric::Cosine).unwrap();
            prop_assert!((d - ds).abs() < 1e-9);
            prop_assert!((-1e-12..=2.0 + 1e-12).contains(&d));
        }
    }

    #[test]
    fn jsd_is_symmetric_and_bounded(
        p in prop::collection::vec(0u32..20, 1..6),
        q in prop::collection::vec(0u32..20, 1..6),
    ) {
        if let (Some(p), Some(q)) = (distribution(&p), distribution(&q)) {
            let d = jsd_distance(&p, &q);
            prop_assert!((0.0..=1.0).contains(&d));
            prop_assert!((d - jsd_distance(&q, &p)).abs() < 1e-12);
            prop_assert_eq!(jsd_distance(&p, &p), 0.0);
        }
    }

    #[test]
    fn binary_change_is_monotone(
        labels in prop::collection::vec((0i64..4, any::<bool>()), 1..20),
        m in 1usize..4,
        k in 0usize..3,
    ) {
        let c = clustering(&labels.iter().map(|(l, _)| *l).collect::<Vec<_>>());
        let ids: Vec<String> = (0..labels.len()).map(|i| format!("u{i:02}")).collect();
        let tagged: Vec<(&str, Grouping)> = ids
            .iter()
            .zip(&labels)
            .map(|(id, (_, later))| (id.as_str(), if *later { Grouping::Later } else { Grouping::Earlier }))
            .collect();
        let at = |m, k| binary_change(&c, &tagged, BinaryThresholds { min_attested: m, max_other: k }, NoisePolicy::Exclude).unwrap().binary;
        let base = at(m, k + 1);
        prop_assert!(!at(m + 1, k + 1) || base);
        prop_assert!(!at(m, k) || base);
    }

    #[test]
    fn ari_ignores_labels_and_order(
        gold in prop::collection::vec(0i64..4, 2..15),
        pred_raw in prop::collection::vec(0i64..4, 15),
        shift in 1i64..50,
    ) {
        let n = gold.len();
        let g = clustering(&gold);
        let p = clustering(&pred_raw[..n]);
        let relabeled = clustering(&pred_raw[..n].iter().map(|l| (l * 7 + shift) % 101).collect::<Vec<_>>());
        let ari = adjusted_rand_index(&g, &p, NoisePolicy::Exclude).unwrap();
        prop_assert!((ari - adjusted_rand_index(&g, &relabeled, NoisePolicy::Exclude).unwrap()).abs() < 1e-12);
        prop_assert!((ari - adjusted_rand_index(&p, &g, NoisePolicy::Exclude).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn spearman_ignores_monotone_transforms(
        pairs in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 3..20),
    ) {
        let (g, p): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        prop_assume!(distinct(&g) && distinct(&p));
        let base = spearman(&PairedSeries::from_slices(&g, &p).unwrap()).unwrap().value;
        let exp: Vec<f64> = p.iter().map(|x| x.exp()).collect();
        let affine: Vec<f64> = g.iter().map(|x| 3.0 * x - 1.0).collect();
        let a = spearman(&PairedSeries::from_slices(&g, &exp).unwrap()).unwrap().value;
        let b = spearman(&PairedSeries::from_slices(&affine, &p).unwrap()).unwrap().value;
        prop_assert!((a - base).abs() < 1e-9);
        prop_assert!((b - base).abs() < 1e-9);
    }

    #[test]
    fn pearson_ignores_positive_affine_maps(
        pairs in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 3..20),
        slope in 0.1f64..10.0,
        offset in -5.0f64..5.0,
    ) {
        let (g, p): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        prop_assume!(distinct(&g) && distinct(&p));
        let base = pearson(&PairedSeries::from_slices(&g, &p).unwrap()).unwrap().value;
        let mapped: Vec<f64> = p.iter().map(|x| slope * x + offset).collect();
        let r = pearson(&PairedSeries::from_slices(&g, &mapped).unwrap()).unwrap().value;
        prop_assert!((r - base).abs() < 1e-9);
    }

    #[test]
    fn store_round_trip_is_bit_exact(
        records in prop::collection::vec(
            (1usize..3, 1usize..3, 1usize..5, prop::collection::vec(any::<u32>(), 36)),
            0..5,
        ),
    ) {
        let recs: Vec<EmbeddingRecord> = records
            .iter()
            .enumerate()
            .map(|(i, (l, t, d, bits))| {
                let n = l * t * d;
                let values: Vec<f32> = bits[..n]
                    .iter()
                    .map(|&b| {
                        let x = f32::from_bits(b);
                        // keep finite payloads, including subnormals
                        if x.is_finite() { x } else { f32::from_bits(b & 0x807f_ffff) }
                    })
                    .collect();
                EmbeddingRecord::from_vec(format!("id{i}"), (*l, *t, *d), values).unwrap()
            })
            .collect();
        let mut bytes = Vec::new();
        write_store(&mut bytes, &recs).unwrap();
        let back = decode_store(&bytes).unwrap();
        prop_assert_eq!(back.len(), recs.len());
        for r in &recs {
            let b = &back[&r.usage_id];
            let x: Vec<u32> = r.values().iter().map(|v| v.to_bits()).collect();
            let y: Vec<u32> = b.values().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(x, y);
        }
        let mut again = Vec::new();
        write_store(&mut again, back.values()).unwrap();
        prop_assert_eq!(again, bytes);
    }

    #[test]
    fn mean_pooling_ignores_row_order(rows in prop::collection::vec(prop::collection::vec(-5.0f32..5.0, 3), 2..6)) {
        let n = rows.len();
        let flat: Vec<f32> = rows.iter().flatten().copied().collect();
        let m = Array2::from_shape_vec((n, 3), flat).unwrap();
        let mut rev_rows = rows.clone();
        rev_rows.reverse();
        let rev = Array2::from_shape_vec((n, 3), rev_rows.into_iter().flatten().collect()).unwrap();
        let a = pool_subwords(m.view(), SubwordPooling::Mean).unwrap();
        let b = pool_subwords(rev.view(), SubwordPooling::Mean).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn concatenation_keeps_layers(values in prop::collection::vec(-5.0f32..5.0, 24)) {
        let rec = EmbeddingRecord::new("u", Array3::from_shape_vec((3, 2, 4), values).unwrap()).unwrap();
        let spec = PoolingSpec {
            subword_pooling: SubwordPooling::First,
            layers: LayerSelection::Indices(vec![2, 0]),
            layer_aggregation: LayerAggregation::Concatenate,
        };
        let v = usage_vector(&rec, &spec).unwrap();
        prop_assert_eq!(v.len(), 8);
        for (slot, layer) in [2usize, 0].iter().enumerate() {
            for d in 0..4 {
                prop_assert_eq!(v[slot * 4 + d], rec.values()[[*layer, 0, d]] as f64);
            }
        }
    }

    #[test]
    fn tsv_round_trips(groupings in prop::collection::vec(any::<bool>(), 1..10), (_, js) in judgments(10)) {
        let us = usages(&groupings);
        let mut buf = Vec::new();
        write_uses(&mut buf, &us).unwrap();
        prop_assert_eq!(read_uses("uses", buf.as_slice()).unwrap(), us);
        let mut buf = Vec::new();
        write_judgments(&mut buf, &js).unwrap();
        prop_assert_eq!(read_judgments("judgments", buf.as_slice()).unwrap(), js);
    }

    #[test]
    fn pair_enumeration_is_complete(groupings in prop::collection::vec(any::<bool>(), 0..50)) {
        let us = usages(&groupings);
        let n = us.len();
        let late = groupings.iter().filter(|&&g| g).count();
        let early = n - late;
        let count = |t| generate_pairs(&us, t, None, 0).len();
        prop_assert_eq!(count(PairType::All), n * n.saturating_sub(1) / 2);
        prop_assert_eq!(count(PairType::Compare), early * late);
        prop_assert_eq!(count(PairType::Earlier), early * early.saturating_sub(1) / 2);
        prop_assert_eq!(count(PairType::Later), late * late.saturating_sub(1) / 2);
        let sampled = generate_pairs(&us, PairType::All, Some(5), 9);
        prop_assert_eq!(&sampled, &generate_pairs(&us, PairType::All, Some(5), 9));
        prop_assert_eq!(sampled.len(), 5.min(count(PairType::All)));
    }

    #[test]
    fn loss_ignores_cluster_labels(g in weighted_graph(8), labels in prop::collection::vec(0i64..3, 8)) {
        let n = g.node_count();
        let c = clustering(&labels[..n]);
        let renamed = clustering(&labels[..n].iter().map(|l| 10 - l).collect::<Vec<_>>());
        let a = clustering_loss(&g, &c, 2.5).unwrap();
        prop_assert!(a >= 0.0);
        prop_assert!((a - clustering_loss(&g, &renamed, 2.5).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn isolated_node_becomes_singleton(g in weighted_graph(7), seed in any::<u64>()) {
        let params = ClusteringParams { seed, ..ClusteringParams::default() };
        let before = correlation_cluster(&g, &params).unwrap();
        let mut us: Vec<Usage> = g.usages().cloned().collect();
        us.push(usage(99, Grouping::Later));
        let edges: Vec<(String, String, f64)> = g
            .edges()
            .map(|(a, b, e)| (a.to_owned(), b.to_owned(), e.weight))
            .collect();
        let bigger = WordUsageGraph::from_scores(&us, edges.iter().map(|(a, b, w)| (a.as_str(), b.as_str(), *w))).unwrap();
        let after = correlation_cluster(&bigger, &params).unwrap();
        for (id, l) in before.iter() {
            prop_assert_eq!(after.label(id), Some(l));
        }
        let lone = after.label("u99").unwrap();
        prop_assert_eq!(after.iter().filter(|(_, l)| *l == lone).count(), 1);
    }

    #[test]
    fn alpha_is_one_only_under_full_agreement(
        units in prop::collection::vec((1u8..=4, 1u8..=4), 2..20),
    ) {
        let rows: Vec<Vec<Option<u8>>> = units.iter().map(|&(a, b)| vec![Some(a), Some(b)]).collect();
        let agree = units.iter().all(|(a, b)| a == b);
        let values: BTreeSet<u8> = units.iter().flat_map(|&(a, b)| [a, b]).collect();
        match krippendorff_alpha_ordinal(&rows) {
            Ok(alpha) => prop_assert_eq!(alpha == 1.0, agree),
            Err(_) => prop_assert_eq!(values.len(), 1),
        }
    }

    #[test]
    fn macro_f1_is_symmetric_under_class_swap(pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 1..30)) {
        let (g, p): (Vec<bool>, Vec<bool>) = pairs.into_iter().unzip();
        let flip = |v: &[bool]| v.iter().map(|x| !x).collect::<Vec<bool>>();
        let a = f1_binary(&g, &p).unwrap().macro_f1;
        let b = f1_binary(&flip(&g), &flip(&p)).unwrap().macro_f1;
        prop_assert!((a - b).abs() < 1e-12);
    }
}
