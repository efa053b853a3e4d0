use jumpdr_web::{radius_curve_json, simulate_json, worst_case_json};

fn parse(s: &str) -> serde_json::Value {
    serde_json::from_str(s).unwrap()
}

#[test]
fn radius_curve_decreases() {
    let v = parse(&radius_curve_json(r#"{"divergence": "tv", "beta": 0.05, "m_max": 1000}"#).unwrap());
    let r: Vec<f64> = v["radius"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    assert_eq!(r.len(), v["m"].as_array().unwrap().len());
    assert!(r.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn worst_case_tv_moves_mass_up() {
    let v = parse(&worst_case_json(r#"{"divergence": "tv", "center": [0.5, 0.3, 0.2], "radius": 0.2, "xi": [0.0, 1.0, 2.0]}"#).unwrap());
    // 0.1 mass moves from the lowest to the highest outcome
    assert!((v["value"].as_f64().unwrap() - 0.9).abs() < 1e-6);
    assert!((v["nominal"].as_f64().unwrap() - 0.7).abs() < 1e-12);
    let avar = parse(
        &worst_case_json(r#"{"divergence": "kl", "center": [0.5, 0.3, 0.2], "radius": 0.05, "xi": [0.0, 1.0, 2.0], "alpha": 0.3}"#)
            .unwrap(),
    );
    assert!(avar["value"].as_f64().unwrap() >= avar["nominal"].as_f64().unwrap() - 1e-6);
    assert!(avar["p"].is_null());
}

#[test]
fn simulate_short_run() {
    let v = parse(&simulate_json(r#"{"variant": "robust", "horizon": 2, "steps": 3}"#).unwrap());
    assert_eq!(v["outcome"], "completed");
    assert_eq!(v["x"].as_array().unwrap().len(), 4);
    assert_eq!(v["u"].as_array().unwrap().len(), 3);
    assert_eq!(v["modes"][0], 1);
}

#[test]
fn bad_requests_are_errors() {
    assert!(radius_curve_json(r#"{"divergence": "chi2", "beta": 0.1}"#).is_err());
    assert!(worst_case_json("[]").is_err());
    assert!(simulate_json(r#"{"horizon": 9}"#).is_err());
}
