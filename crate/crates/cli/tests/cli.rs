use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use ivbart::ivmodels::{write_draws, Draw, PdPoint, PosteriorDraws, RhoDraw, Variant};
use ivbart::simlab::{generate_dataset, SimScenario, Truth};
use ivbart_cli::config::FitConfig;
use ivbart_cli::data::{read_dataset, write_dataset, ColumnRoles};
use ivbart_cli::fit::{cmd_fit, PD_FILE, RHO_DRAWS_FILE, RHO_OBS_FILE, SUMMARY_FILE};
use ivbart_cli::summarize::cmd_summarize;

fn demo_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../demo")
}

fn ivbart() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ivbart"))
}

fn demo_config() -> FitConfig {
    FitConfig::load(&demo_dir().join("fit.toml")).unwrap()
}

fn csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path).unwrap().records().map(Result::unwrap).collect()
}

#[test]
fn demo_fit_matches_golden_outputs() {
    let out = tempfile::tempdir().unwrap();
    let status = ivbart()
        .args(["fit", "--config"])
        .arg(demo_dir().join("fit.toml"))
        .arg("--output")
        .arg(out.path())
        .status()
        .unwrap();
    assert!(status.success());
    for name in [PD_FILE, RHO_DRAWS_FILE, RHO_OBS_FILE, SUMMARY_FILE] {
        let got = fs::read(out.path().join(name)).unwrap();
        let want = fs::read(demo_dir().join("golden").join(name)).unwrap();
        assert!(got == want, "{name} differs from the golden copy");
    }
}

#[test]
fn rerun_reproduces_every_artifact() {
    let cfg = demo_config();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let files = cmd_fit(&cfg, &demo_dir(), a.path()).unwrap();
    cmd_fit(&cfg, &demo_dir(), b.path()).unwrap();
    for f in files {
        let name = f.file_name().unwrap();
        assert_eq!(fs::read(&f).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name:?}");
    }
}

#[test]
fn artifacts_carry_provenance() {
    let cfg = demo_config();
    let out = tempfile::tempdir().unwrap();
    let mut cfg0 = cfg.clone();
    cfg0.mcmc.draws = 2;
    cfg0.mcmc.burn_in = 2;
    let hash = cfg0.hash();
    for f in cmd_fit(&cfg0, &demo_dir(), out.path()).unwrap() {
        let text = fs::read_to_string(&f).unwrap();
        let head: String = text.lines().take(6).collect::<Vec<_>>().join("\n");
        assert!(head.contains(&hash), "{f:?} lacks the config hash");
        assert!(head.contains(&cfg0.seed.to_string()), "{f:?} lacks the seed");
        assert!(head.contains("schema"), "{f:?} lacks a schema tag");
    }
}

#[test]
fn zero_draw_fit_writes_empty_outputs() {
    let mut cfg = demo_config();
    cfg.mcmc.burn_in = 0;
    cfg.mcmc.draws = 0;
    let out = tempfile::tempdir().unwrap();
    let files = cmd_fit(&cfg, &demo_dir(), out.path()).unwrap();
    assert_eq!(files.len(), 8);
    assert!(csv_rows(&out.path().join(RHO_DRAWS_FILE)).is_empty());
    assert!(csv_rows(&out.path().join(RHO_OBS_FILE)).is_empty());
    let report = cmd_summarize(&out.path().join("draws.jsonl")).unwrap();
    assert_eq!(report.draws, 0);
    assert!(report.scalars.is_empty());
}

#[test]
fn chain_count_does_not_move_pd_means() {
    let mut one = demo_config();
    one.mcmc.burn_in = 500;
    one.mcmc.draws = 6000;
    one.mcmc.chains = 1;
    let mut three = one.clone();
    three.mcmc.draws = 2000;
    three.mcmc.chains = 3;
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    cmd_fit(&one, &demo_dir(), a.path()).unwrap();
    cmd_fit(&three, &demo_dir(), b.path()).unwrap();
    let mean_col = |p: &Path| -> Vec<f64> { csv_rows(p).iter().map(|r| r[2].parse().unwrap()).collect() };
    let (m1, m3) = (mean_col(&a.path().join(PD_FILE)), mean_col(&b.path().join(PD_FILE)));
    assert_eq!(m1.len(), m3.len());
    let worst = m1.iter().zip(&m3).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(worst < 0.05, "largest PD mean difference {worst}");
}

#[test]
fn summary_rho_matches_recomputation_from_draw_file() {
    let out = tempfile::tempdir().unwrap();
    let mut cfg = demo_config();
    cfg.mcmc.chains = 2;
    cmd_fit(&cfg, &demo_dir(), out.path()).unwrap();
    let text = fs::read_to_string(out.path().join("draws.jsonl")).unwrap();
    let mut rhos = Vec::new();
    for line in text.lines().skip(1) {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let r = &v["rho"];
        let value = match r.as_array() {
            Some(per_obs) => per_obs.iter().map(|x| x.as_f64().unwrap()).sum::<f64>() / per_obs.len() as f64,
            None => r.as_f64().unwrap(),
        };
        rhos.push(value);
    }
    let mean = rhos.iter().sum::<f64>() / rhos.len() as f64;
    let sd = (rhos.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (rhos.len() - 1) as f64).sqrt();
    let report = cmd_summarize(&out.path().join("draws.jsonl")).unwrap();
    let rho = report.scalars.iter().find(|s| s.name == "rho").unwrap();
    assert!((rho.pooled.mean - mean).abs() < 1e-12);
    assert!((rho.pooled.sd - sd).abs() < 1e-12);
    assert_eq!(rho.chains.len(), 2);
}

fn synthetic_draws(chains: usize, value: impl Fn(usize, usize) -> f64) -> PosteriorDraws {
    let mut draws = Vec::new();
    for c in 0..chains {
        for it in 0..40 {
            draws.push(Draw {
                chain: c,
                iteration: it,
                beta: Some(value(c, it)),
                rho: Some(RhoDraw::Scalar(value(c, it) / 10.0)),
                sigma: None,
                sigma_yy: Some(1.0),
                n_clusters: None,
                alpha: None,
                log_lik: -1.0,
                pd: vec![0.0],
            });
        }
    }
    PosteriorDraws {
        variant: Variant::IvBartG,
        n_obs: 5,
        chains,
        fixed_x: Vec::new(),
        points: vec![PdPoint { t: 0.0, x: Vec::new(), extrapolated: false }],
        draws,
        models: Vec::new(),
    }
}

fn write_synthetic(dir: &Path, draws: &PosteriorDraws) -> PathBuf {
    let path = dir.join("draws.jsonl");
    write_draws(fs::File::create(&path).unwrap(), draws, 3, "abc").unwrap();
    path
}

#[test]
fn constant_draws_summarize_to_zero_spread() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_synthetic(dir.path(), &synthetic_draws(2, |_, _| 1.5));
    let report = cmd_summarize(&path).unwrap();
    let beta = report.scalars.iter().find(|s| s.name == "beta").unwrap();
    let p = &beta.pooled;
    assert_eq!((p.mean, p.sd), (1.5, 0.0));
    assert_eq!((p.q025, p.median, p.q975), (1.5, 1.5, 1.5));
}

#[test]
fn disjoint_chains_flag_non_convergence() {
    let dir = tempfile::tempdir().unwrap();
    let draws = synthetic_draws(2, |c, it| 10.0 * c as f64 + 0.01 * (it % 3) as f64);
    let path = write_synthetic(dir.path(), &draws);
    let report = cmd_summarize(&path).unwrap();
    let beta = report.scalars.iter().find(|s| s.name == "beta").unwrap();
    assert!(beta.rhat.unwrap() > 10.0, "rhat {:?}", beta.rhat);
}

#[test]
fn summarize_rejects_other_schema_versions() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_synthetic(dir.path(), &synthetic_draws(1, |_, _| 1.0));
    let text = fs::read_to_string(&path).unwrap().replacen("ivbart.draws/1", "ivbart.draws/0", 1);
    fs::write(&path, text).unwrap();
    let err = format!("{:#}", cmd_summarize(&path).unwrap_err());
    assert!(err.contains("ivbart.draws/1") && err.contains("ivbart.draws/0"), "{err}");
    let out = ivbart().arg("summarize").arg(&path).output().unwrap();
    assert!(!out.status.success());
}

fn fit_with_data(csv_text: &str) -> (bool, String) {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("d.csv"), csv_text).unwrap();
    fs::write(
        dir.path().join("fit.toml"),
        "data = \"d.csv\"\n[columns]\ninstruments = [\"z1\"]\ncovariates = [\"x1\"]\n[mcmc]\nburn_in = 1\ndraws = 1\n",
    )
    .unwrap();
    let out = ivbart().arg("fit").arg("--config").arg(dir.path().join("fit.toml")).arg("--output").arg(dir.path().join("o")).output().unwrap();
    (out.status.success(), String::from_utf8_lossy(&out.stderr).into_owned())
}

#[test]
fn ingestion_errors_name_the_cell() {
    let (ok, err) = fit_with_data("y,t,z1\n1,2,3\n");
    assert!(!ok && err.contains("'x1' not found"), "{err}");
    let (ok, err) = fit_with_data("y,t,z1,x1\n1,2,3,4\n1,2,abc,4\n");
    assert!(!ok && err.contains("line 3") && err.contains("'z1'") && err.contains("abc"), "{err}");
    let (ok, err) = fit_with_data("y,t,z1,x1\n1,2,3,4\n1,NaN,3,4\n");
    assert!(!ok && err.contains("line 3") && err.contains("not finite"), "{err}");
    let (ok, err) = fit_with_data("y,t,z1,x1\n1,2,3,4\n1,,3,4\n");
    assert!(!ok && err.contains("missing"), "{err}");
}

#[test]
fn overlapping_roles_are_rejected() {
    let roles = ColumnRoles { outcome: "y".into(), exposure: "t".into(), instruments: vec!["z1".into()], covariates: vec!["z1".into()] };
    assert!(roles.validate().is_err());
}

#[test]
fn unknown_fit_keys_are_listed() {
    let err = FitConfig::from_toml_str("seeds = 3\n[model]\ntress = 5\n[grid]\nfixd = []\n").unwrap_err().to_string();
    assert!(err.contains("seeds") && err.contains("model.tress") && err.contains("grid.fixd"), "{err}");
}

#[test]
fn csv_round_trip_is_lossless() {
    let sc = SimScenario { n: 50, n_snps: 5, n_x: 2, ..SimScenario::default() };
    let data = generate_dataset(&sc, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    write_dataset(&path, &data).unwrap();
    let roles = ivbart_cli::data::default_roles(&data);
    assert_eq!(read_dataset(&path, &roles).unwrap(), data);
}

#[test]
fn demo_data_is_the_generator_output() {
    let sc = SimScenario { truth: Truth::NonlinearH, rho: 0.7, c: 1.0, n: 300, n_snps: 10, n_x: 3, replications: 1, seed: 2024, genotypes: None };
    let data = generate_dataset(&sc, 0).unwrap();
    let roles = ivbart_cli::data::default_roles(&data);
    assert_eq!(read_dataset(&demo_dir().join("demo.csv"), &roles).unwrap(), data);
}

fn write_study(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("study.toml");
    fs::write(&p, body).unwrap();
    p
}

#[test]
fn single_rep_tsls_study_is_fast() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_study(dir.path(), "replications = 1\nmethods = [\"2sls\"]\n[[scenario]]\nname = \"s\"\ntruth = \"linear-g\"\n");
    let start = Instant::now();
    let out = ivbart().arg("simulate").arg("--config").arg(&cfg).arg("--output").arg(dir.path().join("o")).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(start.elapsed().as_secs_f64() < 1.0);
    for f in ["bias_by_gridpoint.csv", "rmse_table.csv", "beta_table.csv", "manifest.json"] {
        assert!(dir.path().join("o").join(f).exists(), "{f}");
    }
}

#[test]
fn resumed_study_equals_uninterrupted_study() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = demo_dir().join("study.toml");
    let run = |out: &str, extra: &[&str]| {
        let o = ivbart().arg("simulate").arg("--config").arg(&cfg).arg("--output").arg(dir.path().join(out)).args(extra).output().unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        String::from_utf8_lossy(&o.stdout).into_owned()
    };
    run("full", &[]);
    let paused = run("resumed", &["--stop-after", "8"]);
    assert!(paused.contains("paused"), "{paused}");
    assert!(!dir.path().join("resumed/rmse_table.csv").exists());
    run("resumed", &["--resume", "--parallel", "2"]);
    for f in ["bias_by_gridpoint.csv", "rmse_table.csv", "beta_table.csv"] {
        let a = fs::read(dir.path().join("full").join(f)).unwrap();
        let b = fs::read(dir.path().join("resumed").join(f)).unwrap();
        assert!(a == b, "{f} differs after resume");
    }
}

#[test]
fn malformed_study_lists_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_study(dir.path(), "replication = 1\n[[scenario]]\nname = \"s\"\nrh = 0.5\n");
    let out = ivbart().arg("simulate").arg("--config").arg(&cfg).arg("--output").arg(dir.path().join("o")).output().unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("replication") && err.contains("scenario[0].rh"), "{err}");
}
