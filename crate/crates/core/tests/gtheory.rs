use benchmetry::gtheory::{
    gstudy_base, gstudy_slopes, scaling_metrics, variance_table, FacetCompositions, VarianceComponents,
};
use benchmetry::numeric::{mean, variance};
use benchmetry::sim::{gen_gstudy_scores, GStudyGenSpec};

fn share(rows: &[benchmetry::gtheory::VarianceRow], term: &str) -> f64 {
    rows.iter().find(|r| r.term == term).unwrap().share
}

#[test]
fn base_study_recovers_facet_ordering() {
    let spec = GStudyGenSpec::new(300, 8, [10, 40, 4], 51)
        .intercept("B", 8.0)
        .intercept("C", 2.0)
        .intercept("A", 0.6)
        .intercept("D", 0.05);
    let s = gen_gstudy_scores(&spec).unwrap();
    let fit = gstudy_base(&s.md, &FacetCompositions::default()).unwrap();
    let rows = variance_table(&VarianceComponents::from_fit(&fit));
    assert_eq!(rows.len(), 15);
    let (b, c, a, d) = (share(&rows, "B"), share(&rows, "C"), share(&rows, "A"), share(&rows, "D"));
    assert!(b > c && c > a && a > d, "B {b} C {c} A {a} D {d}");
    assert!((rows.iter().map(|r| r.share).sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn slope_study_attributes_slope_variance_to_benchmarks() {
    let mut spec = GStudyGenSpec::new(250, 8, [4, 10, 3], 52)
        .intercept("B", 1.0)
        .intercept("C", 0.3)
        .slope("B", 0.25)
        .slope("C", 0.02);
    spec.beta = 0.8;
    spec.x_mean = 1.0;
    spec.x_sd = 0.6;
    let s = gen_gstudy_scores(&spec).unwrap();
    let fit = gstudy_slopes(&s.md, &FacetCompositions::default()).unwrap();
    let x: Vec<f64> = s.md.models.iter().map(|m| m.x).collect();
    let m = scaling_metrics(&fit, variance(&x), mean(&x)).unwrap();
    let psi = |n: &str| m.psi.iter().find(|p| p.0 == n).unwrap().1;
    assert!(psi("B") > 0.5, "{:?}", m.psi);
    assert!((0.4..=1.2).contains(&m.beta), "beta {}", m.beta);
    assert!((0.0..=1.0).contains(&m.r_beta));
}
