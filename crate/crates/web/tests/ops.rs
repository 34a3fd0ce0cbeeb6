use adhp_web::{chi_rate, density, particles, presets, solve_density_js};

#[test]
fn density_of_constant_rate_is_flat_at_the_boundary() {
    let v = density("constant", 2.0).unwrap();
    assert_eq!(v.t.len(), v.lambda_bar.len());
    assert!(v.lambda_bar.iter().all(|l| (l - 0.5).abs() < 1e-9));
    assert!(v.max_mass_error < 1e-9);
    assert_eq!(v.profiles.len(), 5);
    assert_eq!(v.profile_times[0], 0.0);
    assert!((v.profile_times[4] - 2.0).abs() < 1e-9);
    assert!(v.profiles.iter().all(|p| p.len() == v.s.len()));
}

#[test]
fn particles_track_the_limit() {
    let v = particles("tanh", 5000, 1.0, 3).unwrap();
    let worst = v.gamma_n.iter().zip(&v.gamma_bar).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(worst < 0.1, "{worst}");
    let width = v.bin_edges[1] - v.bin_edges[0];
    let total: f64 = v.empirical.iter().map(|d| d * width).sum();
    assert!((total - 1.0).abs() < 1e-12);
    assert!(v.raster.len() == 40 && v.events > 0);
    // same seed, same system
    assert_eq!(particles("tanh", 300, 1.0, 9).unwrap().gamma_n, particles("tanh", 300, 1.0, 9).unwrap().gamma_n);
}

#[test]
fn chi_decays_with_n() {
    let v = chi_rate("tanh", 1, 400, 1).unwrap();
    assert_eq!(v.n, vec![10, 32, 100, 316]);
    assert!(v.estimate.windows(2).all(|w| w[1] < w[0]));
    let slope = v.slope.unwrap();
    assert!((slope + 0.5).abs() < 0.2, "{slope}");
    assert_eq!(v.claimed, -0.5);
}

#[test]
fn bad_requests_are_errors() {
    assert!(density("nope", 1.0).is_err());
    assert!(density("tanh", 0.0).is_err());
    assert!(particles("tanh", 0, 1.0, 0).is_err());
    assert!(particles("tanh", 1_000_000, 1.0, 0).is_err());
    assert!(chi_rate("tanh", 4, 100, 0).is_err());
    assert!(chi_rate("tanh", 1, 10, 0).is_err());
    let names: Vec<String> = serde_json::from_str(&presets()).unwrap();
    assert!(names.contains(&"tanh".to_string()));
    let json: serde_json::Value = serde_json::from_str(&solve_density_js("tanh", 1.0).unwrap()).unwrap();
    assert!(json["lambda_bar"].as_array().unwrap().len() > 100);
}
