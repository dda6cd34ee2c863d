use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::Tensor;
use crate::data::{generate_synthetic, DatasetTags, ExpressionMatrix, SynthConfig};
use crate::model::{fit_linear_backend, ExpressionModel, GeneVocabulary, LinearBackend, ScFM, ScFMConfig};
use crate::parallel::Execution;

fn linear_setup() -> (ExpressionMatrix, LinearBackend) {
    let cfg = SynthConfig { n_genes: 12, n_tfs: 4, density: 0.5, n_cells: 300, seed: 3, ..Default::default() };
    let data = generate_synthetic(&cfg).unwrap();
    let lin = fit_linear_backend(&data.expression, 0.1).unwrap();
    (data.expression, lin)
}

fn small_transformer(n: usize) -> ScFM {
    let config =
        ScFMConfig { layers: 2, heads: 2, model_dim: 8, value_hidden: 4, ffn_dim: 12, seed: 5, ..Default::default() };
    let vocab = GeneVocabulary::new((0..n).map(|i| format!("g{i}")).collect()).unwrap();
    let mut m = ScFM::initialized(config, vocab, 0.5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for w in m.params.head_w.data_mut() {
        *w = rng.random_range(-1.0..1.0);
    }
    m
}

fn all_ids(n: usize) -> Panel {
    Panel::fixed((0..n).collect()).unwrap()
}

#[test]
fn method_names_round_trip() {
    for m in Method::ALL {
        assert_eq!(m.name().parse::<Method>().unwrap(), m);
        assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.name()));
    }
    assert!("ens".parse::<Method>().is_err());
}

#[test]
fn default_grid_shapes() {
    let g = VirtualValueGrid::default();
    g.validate().unwrap();
    assert_eq!(g.targets.len(), 5);
    assert_eq!(g.gradient_bases.len(), 8);
    assert_eq!(g.gradient_bases[0], 0.0);
    assert_eq!(g.gradient_bases[7], 6.0);
    assert_eq!(g.direction_len(Method::Emb, 64) * 2, 128);
    let bad = VirtualValueGrid { gradient_bases: vec![1.0, 1.0], ..g.clone() };
    assert!(bad.validate().is_err());
    let empty = VirtualValueGrid { targets: vec![], ..g };
    assert!(empty.validate().is_err());
}

#[test]
fn linear_backend_probes_match_closed_forms() {
    let (expr, lin) = linear_setup();
    let grid = VirtualValueGrid::default();
    let means = expr.mean_cell();
    let ext = FeatureExtractor::new(&lin, grid.clone(), all_ids(12))
        .unwrap()
        .with_expression(&expr, CellAggregation::MeanCell);
    for (i, j) in [(0, 5), (2, 9), (7, 1), (3, 4)] {
        let w = lin.weight(i, j);
        let s = ext.origin_pert_score(i, j).unwrap();
        assert!((s - w * means[i]).abs() < 1e-10);
        let vvp = ext.vvp_feature(i, j).unwrap();
        assert_eq!(vvp.dims(), 10);
        for (m, &vp) in grid.targets.iter().enumerate() {
            assert!((vvp.forward()[m] - w * (vp - grid.base)).abs() < 1e-10);
            assert!((vvp.reverse()[m] - lin.weight(j, i) * (vp - grid.base)).abs() < 1e-10);
        }
        let gdt = ext.gdt_feature(i, j).unwrap();
        assert_eq!(gdt.dims(), 16);
        assert!(gdt.forward().iter().all(|&g| (g - w).abs() < 1e-10));
        let pert = ext.pert_feature(i, j).unwrap();
        assert!((pert.vector[1] - lin.weight(j, i) * means[j]).abs() < 1e-10);
    }
}

#[test]
fn per_cell_aggregation_on_linear_equals_mean_cell() {
    let (expr, lin) = linear_setup();
    let a = FeatureExtractor::new(&lin, VirtualValueGrid::default(), all_ids(12))
        .unwrap()
        .with_expression(&expr, CellAggregation::PerCell);
    let b = FeatureExtractor::new(&lin, VirtualValueGrid::default(), all_ids(12))
        .unwrap()
        .with_expression(&expr, CellAggregation::MeanCell);
    let (x, y) = (a.origin_pert_score(1, 6).unwrap(), b.origin_pert_score(1, 6).unwrap());
    assert!((x - y).abs() < 1e-9, "{x} vs {y}");
}

#[test]
fn zero_mean_source_gives_zero_knockout() {
    let rows = vec![vec![0.0, 1.0, 2.0], vec![0.0, 2.0, 1.0], vec![0.0, 3.0, 5.0], vec![0.0, 1.5, 0.5]];
    let expr = ExpressionMatrix::new(
        vec!["a".into(), "b".into(), "c".into()],
        rows.into_iter().flatten().collect(),
        DatasetTags::default(),
    )
    .unwrap();
    let lin = fit_linear_backend(&expr, 0.5).unwrap();
    let ext = FeatureExtractor::new(&lin, VirtualValueGrid::default(), all_ids(3))
        .unwrap()
        .with_expression(&expr, CellAggregation::MeanCell);
    assert_eq!(ext.origin_pert_score(0, 2).unwrap(), 0.0);
}

#[test]
fn null_perturbation_is_zero() {
    let m = small_transformer(5);
    let grid = VirtualValueGrid { base: 2.0, targets: vec![2.0, 2.0], ..Default::default() };
    let ext = FeatureExtractor::new(&m, grid, all_ids(5)).unwrap();
    assert!(ext.vvp_feature(1, 3).unwrap().vector.iter().all(|&v| v == 0.0));
}

#[test]
fn gdt_matches_finite_differences_on_transformer() {
    let m = small_transformer(6);
    let grid = VirtualValueGrid::default();
    let ext = FeatureExtractor::new(&m, grid.clone(), all_ids(6)).unwrap();
    let h = 1e-4;
    let (i, j) = (1, 4);
    let gdt = ext.gdt_feature(i, j).unwrap();
    for (t, &vb) in grid.gradient_bases.iter().enumerate() {
        let at = |v: f64| {
            let mut values = vec![grid.base; 6];
            values[i] = v;
            let input = crate::model::PanelInput::new((0..6).collect(), values).unwrap().with_mask(j);
            m.reconstruct(&input).unwrap()[j]
        };
        let fd = (at(vb + h) - at(vb - h)) / (2.0 * h);
        let g = gdt.forward()[t];
        let rel = (fd - g).abs() / fd.abs().max(g.abs()).max(1e-6);
        assert!(rel <= 1e-4, "t={t}: {g} vs {fd}");
    }
}

#[test]
fn uniform_attention_scores_and_row_sums() {
    let mut m = small_transformer(4);
    let vocab = m.vocabulary.clone();
    let expr = ExpressionMatrix::new(vocab.symbols().to_vec(), vec![1.0, 2.0, 0.5, 3.0], DatasetTags::default());
    let expr = expr.unwrap();
    {
        let ext = FeatureExtractor::new(&m, VirtualValueGrid::default(), all_ids(4))
            .unwrap()
            .with_expression(&expr, CellAggregation::MeanCell);
        let att = ext.attention_matrix().unwrap();
        for row in att.chunks(4) {
            assert!((row.iter().sum::<f64>() - 2.0).abs() < 1e-12);
        }
        assert_eq!(att[4 + 2], ext.origin_attn_score(1, 2).unwrap());
    }
    for l in &mut m.params.layers {
        l.w_query = Tensor::zeros(l.w_query.shape());
        l.w_key = Tensor::zeros(l.w_key.shape());
    }
    m.config.layers = 1;
    m.params.layers.truncate(1);
    let ext = FeatureExtractor::new(&m, VirtualValueGrid::default(), all_ids(4))
        .unwrap()
        .with_expression(&expr, CellAggregation::MeanCell);
    assert!((ext.origin_attn_score(0, 3).unwrap() - 0.25).abs() < 1e-15);
}

#[test]
fn attention_scores_follow_panel_relabeling() {
    let m = small_transformer(5);
    let expr =
        ExpressionMatrix::new(m.vocabulary.symbols().to_vec(), vec![1.0, 2.0, 0.5, 3.0, 0.1], DatasetTags::default())
            .unwrap();
    let a = FeatureExtractor::new(&m, VirtualValueGrid::default(), all_ids(5))
        .unwrap()
        .with_expression(&expr, CellAggregation::MeanCell);
    let b = FeatureExtractor::new(&m, VirtualValueGrid::default(), Panel::fixed(vec![4, 2, 0, 3, 1]).unwrap())
        .unwrap()
        .with_expression(&expr, CellAggregation::MeanCell);
    for (i, j) in [(0, 1), (3, 2), (4, 0)] {
        let (x, y) = (a.origin_attn_score(i, j).unwrap(), b.origin_attn_score(i, j).unwrap());
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn embedding_feature_is_symmetric_and_cancels() {
    let mut m = small_transformer(4);
    let d = m.config.model_dim;
    let row0: Vec<f64> = m.params.embedding.data()[..d].to_vec();
    for (k, v) in m.params.embedding.data_mut()[d..2 * d].iter_mut().enumerate() {
        *v = -row0[k];
    }
    let ext = FeatureExtractor::new(&m, VirtualValueGrid::default(), all_ids(4)).unwrap();
    assert!(ext.emb_feature(0, 1).unwrap().vector.iter().all(|&v| v == 0.0));
    let (a, b) = (ext.emb_feature(2, 3).unwrap(), ext.emb_feature(3, 2).unwrap());
    assert_eq!(a.vector, b.vector);
    assert_eq!(a.forward(), a.reverse());
    assert_eq!(a.dims(), 2 * d);
}

#[test]
fn linear_backend_has_no_attention_or_embeddings() {
    let (expr, lin) = linear_setup();
    let ext = FeatureExtractor::new(&lin, VirtualValueGrid::default(), all_ids(12))
        .unwrap()
        .with_expression(&expr, CellAggregation::MeanCell);
    assert!(matches!(ext.origin_attn_score(0, 1), Err(crate::Error::Unsupported { .. })));
    assert!(matches!(ext.emb_feature(0, 1), Err(crate::Error::Unsupported { .. })));
}

#[test]
fn self_pairs_and_out_of_panel_genes_are_rejected() {
    let m = small_transformer(5);
    let ext = FeatureExtractor::new(&m, VirtualValueGrid::default(), Panel::fixed(vec![0, 1, 2]).unwrap()).unwrap();
    assert!(matches!(ext.vvp_feature(1, 1), Err(crate::Error::SelfPair(_))));
    assert!(matches!(ext.emb_feature(2, 2), Err(crate::Error::SelfPair(_))));
    assert!(matches!(ext.gdt_feature(0, 4), Err(crate::Error::NotInPanel(_))));
    let bg = FeatureExtractor::new(&m, VirtualValueGrid::default(), Panel::background(&m.vocabulary, 3)).unwrap();
    assert_eq!(bg.gdt_feature(0, 4).unwrap().dims(), 16);
}

#[test]
fn probes_are_directional_on_a_planted_edge() {
    let (expr, lin) = linear_setup();
    let ext = FeatureExtractor::new(&lin, VirtualValueGrid::default(), all_ids(12))
        .unwrap()
        .with_expression(&expr, CellAggregation::MeanCell);
    // TF 0 -> some target with a strong planted weight.
    let j = (4..12).max_by(|&a, &b| lin.weight(0, a).abs().total_cmp(&lin.weight(0, b).abs())).unwrap();
    for method in [Method::Vvp, Method::Gdt, Method::Pert] {
        let f = ext.feature(method, 0, j).unwrap();
        assert_ne!(f.forward(), f.reverse(), "{method}");
    }
}

#[test]
fn virtual_probes_ignore_expression() {
    let (expr, lin) = linear_setup();
    let other = ExpressionMatrix::new(
        expr.symbols().to_vec(),
        expr.values().iter().map(|v| v * 3.0 + 1.0).collect(),
        DatasetTags::default(),
    )
    .unwrap();
    let m = small_transformer(12);
    let remap = GeneVocabulary::new(expr.symbols().to_vec()).unwrap();
    let m = ScFM::new(m.config, remap, m.params).unwrap();
    let sym = |k: usize| expr.symbols()[k].clone();
    let pairs = vec![(sym(0), sym(5)), (sym(2), sym(9)), (sym(7), sym(1))];
    for model in [&lin as &dyn ExpressionModel, &m as &dyn ExpressionModel] {
        for method in [Method::Vvp, Method::Gdt] {
            let run = |x: &ExpressionMatrix| {
                FeatureExtractor::new(model, VirtualValueGrid::default(), all_ids(12))
                    .unwrap()
                    .with_expression(x, CellAggregation::MeanCell)
                    .extract_batch(method, &pairs, Execution::Serial)
                    .unwrap()
            };
            assert_eq!(run(&expr), run(&other));
        }
    }
}

#[test]
fn batch_extraction_skips_unknown_genes_and_keeps_order() {
    let m = small_transformer(6);
    let ext = FeatureExtractor::new(&m, VirtualValueGrid::default(), all_ids(6)).unwrap();
    let empty = ext.extract_batch(Method::Gdt, &[], Execution::Serial).unwrap();
    assert!(empty.features.is_empty() && empty.warnings.is_empty());

    let pairs: Vec<(String, String)> = [("g0", "g1"), ("g2", "nope"), ("g3", "g5"), ("x", "y"), ("g4", "g0")]
        .iter()
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .collect();
    let out = ext.extract_batch(Method::Vvp, &pairs, Execution::Serial).unwrap();
    assert_eq!(out.features.len(), 3);
    assert_eq!(out.warnings.len(), 2);
    assert_eq!(out.features.iter().map(|f| (f.source, f.target)).collect::<Vec<_>>(), vec![(0, 1), (3, 5), (4, 0)]);

    let unknown: Vec<(String, String)> = vec![("x".into(), "y".into())];
    assert!(ext.extract_batch(Method::Vvp, &unknown, Execution::Serial).is_err());
    let dup = vec![pairs[0].clone(), pairs[0].clone()];
    assert!(ext.extract_batch(Method::Vvp, &dup, Execution::Serial).is_err());
}

#[test]
fn parallel_extraction_is_bitwise_serial() {
    let m = small_transformer(8);
    let ext = FeatureExtractor::new(&m, VirtualValueGrid::default(), all_ids(8)).unwrap();
    let pairs: Vec<(String, String)> =
        (0..8).flat_map(|i| (0..8).filter(move |&j| j != i).map(move |j| (format!("g{i}"), format!("g{j}")))).collect();
    for method in [Method::Vvp, Method::Gdt, Method::Emb] {
        let a = ext.extract_batch(method, &pairs, Execution::Serial).unwrap();
        let b = ext.extract_batch(method, &pairs, Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }
}

fn table() -> FeatureTable {
    FeatureTable {
        meta: CacheMeta {
            format_version: CACHE_FORMAT_VERSION,
            method: Method::Gdt,
            dims: 2,
            grid: VirtualValueGrid::default(),
            aggregation: CellAggregation::MeanCell,
            panel_hash: "p".into(),
            model_hash: "m".into(),
            expression_hash: None,
            manifest_hash: None,
        },
        rows: vec![
            FeatureRow { source: "a".into(), target: "b".into(), vector: vec![0.1, -1.0 / 3.0] },
            FeatureRow { source: "b".into(), target: "a".into(), vector: vec![1e-300, 7.0] },
        ],
    }
}

#[test]
fn cache_round_trips_exactly_and_detects_staleness() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f.csv");
    let t = table();
    save_feature_table(&path, &t).unwrap();
    let back = load_feature_table(&path).unwrap();
    assert_eq!(back, t);
    back.meta.check_matches(&t.meta, &path).unwrap();
    let other = CacheMeta { model_hash: "other".into(), ..t.meta.clone() };
    let err = back.meta.check_matches(&other, &path).unwrap_err();
    assert!(err.to_string().contains("model checkpoint hash"), "{err}");
}
