use count_glasso::fit::{fit, RunConfig};
use count_glasso::model::{validate_positive_definite, Hyperparameters};
use count_glasso::persist::{read_fit, write_fit};
use count_glasso::synth::{generate_dataset, SynthConfig};
use proptest::prelude::*;

fn data(areas: usize, time_steps: usize, seed: u64) -> count_glasso::model::CountMatrix {
    generate_dataset(&SynthConfig::new(areas, time_steps, seed)).unwrap().y
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn trace_length_and_support(
        iterations in 2usize..80,
        burn_frac in 0.0f64..0.9,
        thin in 1usize..7,
        chains in 1usize..3,
        seed in 0u64..1000,
    ) {
        let burn_in = ((iterations as f64) * burn_frac) as usize;
        let y = data(4, 4, seed);
        let mut cfg = RunConfig::new(Hyperparameters::for_dimension(4));
        cfg.iterations = iterations;
        cfg.burn_in = burn_in;
        cfg.thin = thin;
        cfg.chains = chains;
        cfg.seed = seed;
        let traces = fit(&y, &cfg).unwrap();
        prop_assert_eq!(traces.len(), chains);
        for tr in &traces {
            prop_assert_eq!(tr.samples.len(), (iterations - burn_in) / thin);
            prop_assert_eq!(tr.samples.len(), cfg.retained_count());
            for s in &tr.samples {
                prop_assert!(s.lambda > 0.0);
                prop_assert!(validate_positive_definite(&s.precision.omega).unwrap());
                prop_assert!(s.log_post.is_finite());
            }
        }
    }
}

#[test]
fn acceptance_rates_are_strictly_inside_unit_interval() {
    let y = data(10, 30, 3);
    let mut cfg = RunConfig::new(Hyperparameters::for_dimension(10));
    cfg.iterations = 600;
    cfg.burn_in = 100;
    cfg.thin = 5;
    cfg.seed = 4;
    let tr = &fit(&y, &cfg).unwrap()[0];
    let mu = tr.accept.mu_rate();
    let z = tr.accept.z_rate();
    assert!(mu > 0.0 && mu < 1.0, "mu acceptance {mu}");
    assert!(z > 0.0 && z < 1.0, "z acceptance {z}");
    assert_eq!(tr.accept.mu_attempted, 600);
    assert_eq!(tr.accept.z_attempted.iter().sum::<u64>(), 600 * 30);
}

#[test]
fn multi_chain_fit_round_trips_through_disk() {
    let y = data(4, 6, 8);
    let mut cfg = RunConfig::new(Hyperparameters::for_dimension(4));
    cfg.iterations = 40;
    cfg.burn_in = 10;
    cfg.thin = 3;
    cfg.chains = 3;
    cfg.seed = 2;
    let traces = fit(&y, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_fit(&traces, dir.path()).unwrap();
    let back = read_fit(dir.path()).unwrap();
    assert_eq!(back.len(), 3);
    for (a, b) in traces.iter().zip(&back) {
        assert_eq!(a.chain, b.chain);
        assert_eq!(a.samples.len(), b.samples.len());
        for (s, t) in a.samples.iter().zip(&b.samples) {
            assert_eq!(s.risk, t.risk);
            assert_eq!(s.precision.omega, t.precision.omega);
            assert_eq!(s.lambda, t.lambda);
        }
    }
    // chains use distinct streams
    assert_ne!(traces[0].samples[0].lambda, traces[1].samples[0].lambda);
}
