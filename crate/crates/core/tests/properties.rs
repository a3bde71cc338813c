use fuseqa_core::fusion::{apply_thresholds, optimize_thresholds, ProbVector, ThresholdVector};
use fuseqa_core::metrics::{
    aggregate, count_stats, f_beta, hamming_distance, match_ratio, per_class_f_beta, Averaging,
    MetricReport,
};
use fuseqa_core::questions::{
    answer, generate_questions, parse_question, render, Expr, QuestionAst, QuestionMix, QuestionType,
};
use fuseqa_core::sarprep::{
    compute_saturation_bounds, make_ratio_channel, normalize_channel, sorted_quantile, Raster, Units,
    HISTOGRAM_BINS,
};
use fuseqa_core::taxonomy::{
    hierarchy_closure, inverse_frequency_weights, LabelSet, Nomenclature, NomenclatureKind,
};
use proptest::prelude::*;

fn label_matrix(max_q: usize, max_n: usize) -> impl Strategy<Value = (Vec<LabelSet>, Vec<LabelSet>)> {
    (1..=max_q, 1..=max_n).prop_flat_map(|(q, n)| {
        let rows = prop::collection::vec(prop::collection::vec(any::<bool>(), n), q);
        (rows.clone(), rows).prop_map(|(p, g)| {
            let sets = |m: Vec<Vec<bool>>| m.into_iter().map(LabelSet::from_bits).collect::<Vec<_>>();
            (sets(p), sets(g))
        })
    })
}

fn permute_classes(sets: &[LabelSet], perm: &[usize]) -> Vec<LabelSet> {
    sets.iter()
        .map(|s| LabelSet::from_bits(perm.iter().map(|&j| s.get(j)).collect()))
        .collect()
}

fn rsvqa() -> Nomenclature {
    Nomenclature::bundled(NomenclatureKind::Rsvqa61).unwrap()
}

proptest! {
    #[test]
    fn closure_idempotent_and_monotone(bits in prop::collection::vec(any::<bool>(), 61), extra in prop::collection::vec(any::<bool>(), 61)) {
        let nom = rsvqa();
        let a = LabelSet::from_bits(bits);
        let c = hierarchy_closure(&a, &nom);
        prop_assert_eq!(hierarchy_closure(&c, &nom), c.clone());
        for j in a.indices() {
            prop_assert!(c.get(j));
        }
        let b = LabelSet::from_bits(a.bits().iter().zip(&extra).map(|(x, y)| *x || *y).collect());
        let cb = hierarchy_closure(&b, &nom);
        for j in c.indices() {
            prop_assert!(cb.get(j));
        }
    }

    #[test]
    fn inverse_weights_have_unit_mean(freqs in prop::collection::vec(0.0f64..=1.0, 1..30), size in 1usize..10_000) {
        let w = inverse_frequency_weights(&freqs, size).unwrap();
        let mean = w.as_slice().iter().sum::<f64>() / w.len() as f64;
        prop_assert!((mean - 1.0).abs() < 1e-9);
        prop_assert!(w.as_slice().iter().all(|v| v.is_finite() && *v > 0.0));
    }

    #[test]
    fn saturation_bounds_bracket_sorted_quantiles(
        values in prop::collection::vec(-40.0f32..10.0, 2..400),
        lower in 0.0f64..0.5,
        upper in 0.5f64..=1.0,
    ) {
        prop_assume!(lower < upper);
        let r = Raster::new(values.len(), 1, 1, Units::Decibel, values.clone()).unwrap();
        let b = compute_saturation_bounds(&[r], lower, upper).unwrap().get(0);
        let mut sorted: Vec<f64> = values.iter().map(|&v| v as f64).collect();
        sorted.sort_by(f64::total_cmp);
        let width = (sorted[sorted.len() - 1] - sorted[0]) / HISTOGRAM_BINS as f64;
        let slack = width + 1e-9;
        let (qlo, qhi) = (sorted_quantile(&sorted, lower), sorted_quantile(&sorted, upper));
        prop_assert!(b.0 <= qlo + 1e-9 && qlo - b.0 <= slack, "lower {} vs {}", b.0, qlo);
        if width > 0.0 {
            prop_assert!(b.1 >= qhi - 1e-9 && b.1 - qhi <= slack, "upper {} vs {}", b.1, qhi);
        }
    }

    #[test]
    fn normalized_values_in_unit_interval(values in prop::collection::vec(-60.0f32..20.0, 4..200), q in 0.0f64..0.2) {
        let r = Raster::new(values.len(), 1, 1, Units::Decibel, values).unwrap();
        let b = compute_saturation_bounds(std::slice::from_ref(&r), q, 1.0 - q).unwrap();
        let n = normalize_channel(&r, &b).unwrap();
        prop_assert!(n.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn ratio_channel_invariant_to_common_shift(
        pairs in prop::collection::vec((-30.0f32..0.0, -30.0f32..0.0), 1..100),
        shift in -10.0f32..10.0,
    ) {
        let w = pairs.len();
        let vv: Vec<f32> = pairs.iter().map(|p| p.0).collect();
        let vh: Vec<f32> = pairs.iter().map(|p| p.1).collect();
        let mk = |v: Vec<f32>| Raster::new(w, 1, 1, Units::Decibel, v).unwrap();
        let base = make_ratio_channel(&mk(vv.clone()), &mk(vh.clone())).unwrap();
        let shifted = make_ratio_channel(
            &mk(vv.iter().map(|v| v + shift).collect()),
            &mk(vh.iter().map(|v| v + shift).collect()),
        ).unwrap();
        for (a, b) in base.data().iter().zip(shifted.data()) {
            prop_assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn f_beta_monotone_in_precision_and_recall(p in 0.0f64..=1.0, r in 0.0f64..=1.0, dp in 0.0f64..0.5, beta in 0.1f64..4.0) {
        let p2 = (p + dp).min(1.0);
        let r2 = (r + dp).min(1.0);
        let base = f_beta(p, r, beta);
        prop_assert!(f_beta(p2, r, beta) >= base - 1e-12);
        prop_assert!(f_beta(p, r2, beta) >= base - 1e-12);
        prop_assert!((0.0..=1.0).contains(&base));
    }

    #[test]
    fn macro_and_micro_invariant_to_class_order((pred, gt) in label_matrix(40, 10), seed in any::<u64>(), beta in 0.25f64..3.0) {
        let n = gt[0].len();
        let mut perm: Vec<usize> = (0..n).collect();
        // Fisher-Yates driven by the seed
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(i, (s >> 33) as usize % (i + 1));
        }
        let score = |p: &[LabelSet], g: &[LabelSet], mode| {
            let c = count_stats(p, g).unwrap();
            aggregate(&per_class_f_beta(&c, beta), &c, beta, mode).unwrap()
        };
        let (pp, gp) = (permute_classes(&pred, &perm), permute_classes(&gt, &perm));
        for mode in [Averaging::Macro, Averaging::Micro] {
            prop_assert!((score(&pred, &gt, mode) - score(&pp, &gp, mode)).abs() < 1e-12);
        }
    }

    #[test]
    fn match_ratio_one_iff_hamming_zero((pred, gt) in label_matrix(20, 6), copy in any::<bool>()) {
        let pred = if copy { gt.clone() } else { pred };
        let mr = match_ratio(&pred, &gt).unwrap();
        let hd = hamming_distance(&pred, &gt).unwrap();
        prop_assert_eq!(mr == 1.0, hd == 0.0);
    }

    #[test]
    fn optimized_thresholds_never_lose_to_half(
        (probs, labels) in (1usize..40, 1usize..8).prop_flat_map(|(q, n)| (
            prop::collection::vec(prop::collection::vec(0.0f64..=1.0, n), q),
            prop::collection::vec(prop::collection::vec(any::<bool>(), n), q),
        )),
        beta in prop::sample::select(vec![1.0, 2.0]),
    ) {
        let n = labels[0].len();
        let probs: Vec<ProbVector> = probs.into_iter().map(|p| ProbVector::new(p).unwrap()).collect();
        let labels: Vec<LabelSet> = labels.into_iter().map(LabelSet::from_bits).collect();
        let macro_at = |t: &ThresholdVector| {
            let pred: Vec<LabelSet> = probs.iter().map(|p| apply_thresholds(p, t).unwrap()).collect();
            MetricReport::compute(&pred, &labels, beta).unwrap().macro_f
        };
        let opt = optimize_thresholds(&probs, &labels, beta, 0.05).unwrap();
        prop_assert!(macro_at(&opt) >= macro_at(&ThresholdVector::uniform(n, 0.5).unwrap()) - 1e-12);
    }

    #[test]
    fn generated_questions_round_trip(bits in prop::collection::vec(any::<bool>(), 61), seed in any::<u64>()) {
        let nom = rsvqa();
        let labels = LabelSet::from_bits(bits);
        for q in generate_questions("s", &labels, &nom, 10, &QuestionMix::default(), seed).unwrap() {
            let ast = parse_question(&q.question, &nom).unwrap();
            prop_assert_eq!(&render(&ast, &nom), &q.question);
            prop_assert_eq!(parse_question(&render(&ast, &nom), &nom).unwrap(), ast.clone());
            let a = answer(&ast, &labels, &nom);
            prop_assert_eq!(a.as_str(), q.answer.as_str());
        }
    }

    #[test]
    fn pure_or_questions_are_monotone(
        leaves in prop::collection::vec(0usize..19, 1..4),
        bits in prop::collection::vec(any::<bool>(), 19),
        extra in prop::collection::vec(any::<bool>(), 19),
    ) {
        let nom = Nomenclature::bundled(NomenclatureKind::Benmm19).unwrap();
        let expr = leaves[1..].iter().fold(Expr::Present(leaves[0]), |acc, &l| {
            Expr::Or(Box::new(acc), Box::new(Expr::Present(l)))
        });
        let ast = QuestionAst::YesNo(expr);
        let small = LabelSet::from_bits(bits.clone());
        let big = LabelSet::from_bits(bits.iter().zip(&extra).map(|(a, b)| *a || *b).collect());
        if answer(&ast, &small, &nom).as_str() == "yes" {
            let a = answer(&ast, &big, &nom);
            prop_assert_eq!(a.as_str(), "yes");
        }
    }
}

#[test]
fn question_mix_matches_configuration() {
    let nom = Nomenclature::bundled(NomenclatureKind::Benmm19).unwrap();
    let labels = LabelSet::from_indices(nom.len(), &[0, 3, 7]);
    let mix = QuestionMix::default();
    let mut yes_no = 0;
    let mut by_leaves = [0usize; 4];
    let total = 10_000;
    for s in 0..(total / 25) as u64 {
        for q in generate_questions("s", &labels, &nom, 25, &mix, s).unwrap() {
            if q.qtype == QuestionType::YesNo {
                yes_no += 1;
                if let QuestionAst::YesNo(e) = parse_question(&q.question, &nom).unwrap() {
                    by_leaves[e.leaves().len()] += 1;
                }
            }
        }
    }
    let frac = |k: usize, of: usize| k as f64 / of as f64;
    assert!((frac(yes_no, total) - mix.p_yes_no).abs() < 0.02, "yes/no share {}", frac(yes_no, total));
    assert!((frac(by_leaves[2], yes_no) - mix.p_conj1).abs() < 0.02, "one conjunction {}", frac(by_leaves[2], yes_no));
    assert!((frac(by_leaves[3], yes_no) - mix.p_conj2).abs() < 0.02, "two conjunctions {}", frac(by_leaves[3], yes_no));
}
