use soh_wasm::{conditions_value, cycle_value, fade_value, window_value};

#[test]
fn twelve_conditions() {
    assert_eq!(conditions_value().as_array().unwrap().len(), 12);
}

#[test]
fn cycle_has_every_step() {
    let v = cycle_value(3, 100, 42, 10).unwrap();
    for s in ["cc", "cv", "rest", "dis"] {
        assert!(!v["steps"][s]["t"].as_array().unwrap().is_empty(), "{s}");
    }
    let soh = v["soh"].as_f64().unwrap();
    assert!(soh > 0.8 && soh < 1.0);
    assert!(cycle_value(99, 0, 42, 10).is_err());
}

#[test]
fn fade_is_monotone() {
    let v = fade_value(1000, 100).unwrap();
    assert_eq!(v["k"].as_array().unwrap().len(), 11);
    for c in v["cells"].as_array().unwrap() {
        let soh: Vec<f64> = c["soh"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
        assert!(soh.windows(2).all(|w| w[1] <= w[0]));
    }
    assert!(fade_value(10, 0).is_err());
}

#[test]
fn window_spans_the_voltage_band() {
    let v = window_value(1, 0, 42, 3.4, 4.0, 50).unwrap();
    let volts: Vec<f64> = v["v"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    assert_eq!(volts.len(), 50);
    assert!((volts[0] - 3.4).abs() < 0.02 && (volts[49] - 4.0).abs() < 0.02);
    assert!(v["t_high"].as_f64().unwrap() > v["t_low"].as_f64().unwrap());
    assert!(window_value(1, 0, 42, 4.0, 3.4, 50).is_err());
}
