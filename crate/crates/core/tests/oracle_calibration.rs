use ktm::oracle::{self, StudyConfig};

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[test]
fn bridge_uncertainty_tracks_its_error() {
    for seed in [0, 1] {
        let config = StudyConfig {
            seed,
            samples: 5000,
            ..StudyConfig::default()
        };
        let result = oracle::run_study(&config).unwrap();
        for (i, &n) in config.grid.iter().enumerate() {
            let err = median(result.runs.iter().map(|r| r[i].bridge_err).collect());
            let sd = median(result.runs.iter().map(|r| r[i].bridge_sd).collect());
            assert!(
                (0.3 * err..=3.0 * err).contains(&sd),
                "seed {seed}, {n} observations: sd {sd}, median error {err}"
            );
        }
    }
}

#[test]
fn errors_shrink_with_data() {
    let config = StudyConfig {
        seed: 5,
        samples: 5000,
        ..StudyConfig::default()
    };
    let mean = oracle::run_study(&config).unwrap().mean;
    for w in mean.windows(2) {
        assert!(w[1].bridge_err < w[0].bridge_err, "{mean:?}");
        assert!(w[1].mcmc_err < w[0].mcmc_err, "{mean:?}");
        assert!(w[1].bridge_sd < w[0].bridge_sd);
    }
}
