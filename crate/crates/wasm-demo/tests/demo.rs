use esq_wasm_demo::{feasibility_value, gmc_slice_value, reduced_law_value};

#[test]
fn slice_has_the_requested_shape_and_is_reproducible() {
    let a = gmc_slice_value(6.0, 8, 3).unwrap();
    let b = gmc_slice_value(6.0, 8, 3).unwrap();
    assert_eq!(a, b);
    assert_eq!(a["log10_density"].as_array().unwrap().len(), 64);
    // oversize requests are clamped
    let c = gmc_slice_value(6.0, 1000, 3).unwrap();
    assert_eq!(c["points"], 16);
}

#[test]
fn feasibility_flips_at_alpha_max() {
    let v = feasibility_value(4.0 * std::f64::consts::PI, 50);
    assert_eq!(v["result"]["feasible"], true);
    let scan = v["scan"].as_array().unwrap();
    assert_eq!(scan.len(), 50);
    let am = v["alpha_max"].as_f64().unwrap();
    for s in scan {
        let a = s["alpha"].as_f64().unwrap();
        if a < 0.99 * am {
            assert_eq!(s["feasible"], true, "{a}");
        }
        if a > 1.01 * am {
            assert_eq!(s["feasible"], false, "{a}");
        }
    }
    assert_eq!(feasibility_value(14.0, 2)["result"]["feasible"], false);
}

#[test]
fn reduced_law_histograms_are_densities() {
    let v = reduced_law_value(200, 0.2, 1, 20).unwrap();
    let centers: Vec<f64> = v["centers"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    let width = centers[1] - centers[0];
    for key in ["raw", "weighted"] {
        let total: f64 = v[key].as_array().unwrap().iter().map(|x| x.as_f64().unwrap() * width).sum();
        assert!((total - 1.0).abs() < 1e-9, "{key}: {total}");
    }
    assert!(v["reference"].as_array().unwrap().iter().all(|x| x.as_f64().unwrap() > 0.0));
}
