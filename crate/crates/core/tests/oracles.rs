mod common;

use std::sync::Arc;

use common::mean_var;
use ivbart::bart::{BackfitSampler, LeafPrior, WeightedResiduals};
use ivbart::covariance::{update_sigma_iw, IWPrior, Sym2};
use ivbart::dpm::{new_cluster_marginal, sample_alpha, DPMHyper};
use ivbart::ivmodels::{fit, partial_dependence, McmcConfig, ModelSpec, PdRequest, Variant};
use ivbart::rng::stream;
use ivbart::simlab::{generate_dataset, simulate_genotypes, true_f2, GenotypeModel, SimScenario, Truth};
use ivbart::treekit::{BinnedDesign, CutpointGrid, TreePriorConfig};
use ivbart::tsls::{first_stage_f, fit_2sls};
use ivbart::Ensemble;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn corr(a: &[f64], b: &[f64]) -> f64 {
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let cov = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (a.len() - 1) as f64;
    cov / (va * vb).sqrt()
}

#[test]
fn new_cluster_marginal_matches_monte_carlo_over_the_base() {
    let base = IWPrior::new(6.0, Sym2::identity()).expect("base");
    let mut rng = stream(301, &[]);
    for e in [[0.0, 0.0], [0.8, -0.4]] {
        let draws = 1_000_000;
        let mc = (0..draws).map(|_| base.sample(&mut rng).log_normal_density(e).exp()).sum::<f64>() / draws as f64;
        let exact = new_cluster_marginal(e, &base);
        assert!((mc - exact).abs() / exact < 0.01, "e={e:?}: mc {mc} vs {exact}");
    }
}

#[test]
fn first_stage_f_matches_hand_computation() {
    let z = [0.0, 1.0, 2.0, 1.0, 0.0, 2.0, 1.0, 0.0, 2.0, 1.0];
    let t = [0.3, 1.1, 2.4, 0.7, -0.2, 1.9, 1.5, 0.1, 2.2, 0.8];
    let n = t.len() as f64;
    let (mz, mt) = (z.iter().sum::<f64>() / n, t.iter().sum::<f64>() / n);
    let szz: f64 = z.iter().map(|v| (v - mz).powi(2)).sum();
    let szt: f64 = z.iter().zip(&t).map(|(a, b)| (a - mz) * (b - mt)).sum();
    let stt: f64 = t.iter().map(|v| (v - mt).powi(2)).sum();
    let rss_full = stt - szt * szt / szz;
    let hand = (stt - rss_full) / (rss_full / (n - 2.0));
    let f = first_stage_f(&t, &[z.to_vec()], &[]).expect("f");
    assert!(!f.perfect_fit);
    assert!((f.value - hand).abs() < 1e-10 * hand, "{} vs {hand}", f.value);
}

#[test]
fn just_identified_2sls_is_the_covariance_ratio() {
    let mut rng = stream(302, &[]);
    let n = 500;
    let z: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let u: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let t: Vec<f64> = z.iter().zip(&u).map(|(zi, ui): (&f64, &f64)| 0.8 * zi + ui).collect();
    let y: Vec<f64> = t.iter().zip(&u).map(|(ti, ui)| 1.0 + 2.0 * ti + 0.7 * ui + rng.random_range(-0.5..0.5)).collect();
    let (mz, mt, my) = (z.iter().sum::<f64>() / n as f64, t.iter().sum::<f64>() / n as f64, y.iter().sum::<f64>() / n as f64);
    let szy: f64 = z.iter().zip(&y).map(|(a, b)| (a - mz) * (b - my)).sum();
    let szt: f64 = z.iter().zip(&t).map(|(a, b)| (a - mz) * (b - mt)).sum();
    let beta = szy / szt;
    let fit = fit_2sls(&y, &t, &[z], &[]).expect("2sls");
    assert!((fit.beta_hat - beta).abs() < 1e-10);
    assert!((fit.intercept - (my - beta * mt)).abs() < 1e-10);
    assert!(fit.se_beta > 0.0);
}

#[test]
fn genotypes_follow_hardy_weinberg() {
    let model = GenotypeModel { allele_freqs: vec![0.5, 0.5], latent_corr: vec![vec![1.0, 0.0], vec![0.0, 1.0]] };
    let n = 100_000;
    let g = simulate_genotypes(n, &model, &mut stream(303, &[])).expect("genotypes");
    for col in &g {
        for (value, expected) in [(0.0, 0.25), (1.0, 0.5), (2.0, 0.25)] {
            let freq = col.iter().filter(|&&v| v == value).count() as f64 / n as f64;
            assert!((freq - expected).abs() < 0.01, "genotype {value}: {freq}");
        }
    }
    assert!(corr(&g[0], &g[1]).abs() < 0.02);
}

#[test]
fn latent_correlation_carries_to_genotypes() {
    let model = GenotypeModel { allele_freqs: vec![0.3, 0.3], latent_corr: vec![vec![1.0, 0.99], vec![0.99, 1.0]] };
    let g = simulate_genotypes(100_000, &model, &mut stream(304, &[])).expect("genotypes");
    assert!(corr(&g[0], &g[1]) > 0.9);
}

#[test]
fn generator_errors_have_the_requested_correlation() {
    let sc = SimScenario { truth: Truth::NonlinearH, rho: 0.7, c: 0.0, n: 100_000, n_snps: 5, n_x: 1, ..SimScenario::default() };
    let data = generate_dataset(&sc, 0).expect("data");
    let ey: Vec<f64> = (0..sc.n).map(|i| data.y[i] - true_f2(sc.truth, data.t[i], data.x[0][i])).collect();
    let r = corr(&data.t, &ey);
    assert!((r - 0.7).abs() < 0.01, "{r}");
    let (_, vt) = mean_var(&data.t);
    assert!((vt - 1.0).abs() < 0.02);
}

#[test]
fn signal_scale_sets_first_stage_strength() {
    let sc = SimScenario { truth: Truth::LinearG, rho: 0.0, c: 1.0, n: 20_000, ..SimScenario::default() };
    let data = generate_dataset(&sc, 0).expect("data");
    let (_, vt) = mean_var(&data.t);
    assert!((vt - 2.0).abs() < 0.06, "{vt}");
}

#[test]
fn sigma_posterior_concentrates_on_the_truth() {
    let mut rng = stream(305, &[]);
    let residuals: Vec<[f64; 2]> = (0..10_000)
        .map(|_| {
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            [a, 0.7 * a + (1.0f64 - 0.49).sqrt() * b]
        })
        .collect();
    let prior = IWPrior::new(6.0, Sym2::diag(3.0, 3.0)).expect("prior");
    let rho: Vec<f64> = (0..2000).map(|_| update_sigma_iw(&residuals, &prior, &mut rng).rho()).collect();
    let (m, _) = mean_var(&rho);
    assert!((m - 0.7).abs() < 0.02, "{m}");
}

#[test]
fn alpha_posterior_grows_with_cluster_count() {
    let base = IWPrior::new(6.0, Sym2::identity()).expect("base");
    let hyper = DPMHyper::with_base(base);
    let mut rng = stream(306, &[]);
    let means: Vec<f64> = [1usize, 3, 8, 20]
        .iter()
        .map(|&k| {
            let mut alpha = 1.0;
            let draws: Vec<f64> = (0..10_000)
                .map(|_| {
                    alpha = sample_alpha(alpha, k, 400, &hyper, &mut rng);
                    alpha
                })
                .collect();
            mean_var(&draws).0
        })
        .collect();
    assert!(means.windows(2).all(|w| w[1] > w[0]), "{means:?}");
}

#[test]
fn ensemble_fits_a_step_function() {
    let mut rng = stream(307, &[]);
    let n = 500;
    let x: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    let truth: Vec<f64> = x.iter().map(|&v| if v < 0.5 { 0.0 } else { 1.0 }).collect();
    let sd = 0.1;
    let y: Vec<f64> = truth.iter().map(|m| m + sd * rng.random_range(-1.7..1.7)).collect();
    let grid = Arc::new(CutpointGrid::from_columns(std::slice::from_ref(&x), 100).expect("grid"));
    let design = BinnedDesign::new(std::slice::from_ref(&x), &grid).expect("design");
    let n_trees = 50;
    let scale = 1.0 / (2.0 * 2.0 * (n_trees as f64).sqrt());
    let mut ensemble = Ensemble::new(n_trees, LeafPrior::Constant { scale }, grid).expect("ensemble");
    let mut sampler = BackfitSampler::new(&ensemble, design).expect("sampler");
    let mut wr = WeightedResiduals::new(y.clone(), vec![sd * sd; n]).expect("residuals");
    let cfg = TreePriorConfig::default();
    let mut sum = vec![0.0; n];
    let (burn, keep) = (500, 500);
    for it in 0..burn + keep {
        sampler.backfit_sweep(&mut ensemble, &mut wr, None, &cfg, &mut rng).expect("sweep");
        if it >= burn {
            for (s, f) in sum.iter_mut().zip(sampler.fitted(&ensemble, None)) {
                *s += f;
            }
        }
    }
    let rmse = (sum.iter().zip(&truth).map(|(s, m)| (s / keep as f64 - m).powi(2)).sum::<f64>() / n as f64).sqrt();
    assert!(rmse < 0.1, "{rmse}");
}

#[test]
fn linear_exposure_model_agrees_with_2sls_and_beats_plain_bart() {
    let sc = SimScenario { truth: Truth::LinearG, rho: 0.7, c: 1.0, n: 1000, seed: 308, ..SimScenario::default() };
    let data = generate_dataset(&sc, 0).expect("data");
    let tsls = fit_2sls(&data.y, &data.t, &data.z, &data.x).expect("2sls");
    let mut spec = ModelSpec::with_variant(Variant::IvBartG);
    spec.trees_stage1 = 50;
    spec.trees_stage2 = 50;
    let mcmc = McmcConfig { burn_in: 500, draws: 1000, seed: 309, ..McmcConfig::default() };
    let draws = fit(&data, &spec, &mcmc, None).expect("ivbart-g");
    let betas: Vec<f64> = draws.draws.iter().map(|d| d.beta.expect("beta")).collect();
    let (beta, var) = mean_var(&betas);
    assert!((beta - tsls.beta_hat).abs() < 2.0 * (var.sqrt() + tsls.se_beta), "ivbart-g {beta} vs 2sls {}", tsls.beta_hat);

    let plain = ModelSpec { variant: Variant::PlainBart, ..spec };
    let request = PdRequest { t_grid: vec![-1.0, 1.0], fixed_x: vec![], x_profiles: vec![] };
    let pd = partial_dependence(&fit(&data, &plain, &mcmc, Some(&request)).expect("bart"));
    let slope = (pd[1].mean - pd[0].mean) / 2.0;
    assert!((beta - 1.0).abs() < (slope - 1.0).abs(), "ivbart-g {beta} vs bart slope {slope}");
}

#[test]
fn retained_draws_are_pooled_across_chains() {
    let data = generate_dataset(&SimScenario { n: 40, n_snps: 5, n_x: 1, ..SimScenario::default() }, 0).expect("data");
    let mut spec = ModelSpec::with_variant(Variant::IvBartG);
    spec.trees_stage1 = 3;
    spec.trees_stage2 = 3;
    let mcmc = McmcConfig { burn_in: 10, draws: 5000, chains: 3, seed: 310, ..McmcConfig::default() };
    let draws = fit(&data, &spec, &mcmc, None).expect("fit");
    assert_eq!(draws.draws.len(), 15_000);
    let thinned = fit(&data, &spec, &McmcConfig { draws: 100, thin: 4, chains: 1, ..mcmc }, None).expect("fit");
    assert_eq!(thinned.draws.len(), 25);
}
