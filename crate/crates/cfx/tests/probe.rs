//! Scratch calibration probe (not part of the final suite).

use std::time::Instant;

use cfx::baselines::{sa_baseline, sample_baseline, DecodeOpts, SaSchedule};
use cfx::chem::Molecule;
use cfx::config::RunConfig;
use cfx::dataset;
use cfx::explain::{evaluate_pool, infer, InferOptions};
use cfx::gnn::{accuracy, train_classifier};
use cfx::ppo::{train_adapter, RolloutCtx};
use cfx::toydata;
use cfx::vae::{train_vae, DecodeOutcome, sample_latent};
use cfx::vocab::mine_vocab;
use cfx::Rng;

fn desk_config() -> RunConfig {
    let mut c = RunConfig::default();
    c.set("adapter-inputs-cap", "64").unwrap();
    for (k, v) in [
        ("elements", "C,N,O,S,F,Cl"),
        ("min-atom-count", "5"),
        ("gnn-hidden", "32"),
        ("gnn-epochs", "60"),
        ("enc-hidden", "48"),
        ("latent", "16"),
        ("enc-layers", "3"),
        ("dec-hidden", "96"),
        ("frag-embed", "32"),
        ("atom-hidden", "32"),
        ("atom-embed", "16"),
        ("edge-hidden", "32"),
        ("vocab-size", "30"),
        ("delta", "0.82"),
        ("vae-epochs", "120"),
        ("vae-free-bits", "0.5"),
        ("vae-batch", "16"),
        ("vae-lr", "2e-3"),
        ("adapter-hidden", "400"),
        ("adapter-lr", "7e-5"),
        ("updates", "45"),
        ("episodes-per-update", "8"),
        ("t-train", "4"),
        ("n-samples", "4"),
        ("beam", "10"),
        ("t-infer", "20"),
        ("k", "10"),
    ] {
        c.set(k, v).unwrap();
    }
    c
}

#[test]
#[ignore]
fn probe() {
    let t0 = Instant::now();
    let mut cfg = desk_config();
    if let Ok(lr) = std::env::var("CFX_PROBE_LR") {
        cfg.set("adapter-lr", &lr).unwrap();
    }
    let cfg = cfg;

    // Toy data.
    let rows = toydata::generate(500, 12345);
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("toy.csv");
    toydata::write_csv(&csv, &rows).unwrap();
    let bundle = dataset::prep(&csv, &cfg).unwrap();
    println!(
        "[{:?}] bundle {} / {} / {}",
        t0.elapsed(),
        bundle.train.len(),
        bundle.valid.len(),
        bundle.test.len()
    );
    let train = bundle.molecules("train").unwrap();
    let valid = bundle.molecules("valid").unwrap();
    let test = bundle.molecules("test").unwrap();
    let pos_frac = train.iter().filter(|(_, y)| *y == 1).count() as f32 / train.len() as f32;
    println!("positive fraction {pos_frac:.2}");

    // GNN.
    let mut rng = Rng::stream(cfg.seed, "gnn-train");
    let (gnn, logs) =
        train_classifier(&train, &valid, &cfg.gnn_cfg(), &cfg.gnn_train_cfg(), &mut rng).unwrap();
    println!(
        "[{:?}] gnn: train acc {:.3}, valid best {:.3}, test {:.3}",
        t0.elapsed(),
        accuracy(&gnn, &train).unwrap(),
        logs.iter().map(|l| l.valid_acc).fold(0.0f32, f32::max),
        accuracy(&gnn, &test).unwrap()
    );

    // Vocab + VAE.
    let corpus: Vec<Molecule> = train.iter().map(|(m, _)| m.clone()).collect();
    let vocab = mine_vocab(&corpus, cfg.vocab_size).unwrap();
    println!(
        "[{:?}] vocab {} entries, sizes {:?}",
        t0.elapsed(),
        vocab.len(),
        vocab.entries().iter().map(|e| e.pattern.atom_count()).collect::<Vec<_>>()
    );
    let mut rng = Rng::stream(cfg.seed, "vae-train");
    let (vae, vlogs) =
        train_vae(&corpus, &vocab, &cfg.vae_cfg(), &cfg.vae_train_cfg(), &mut rng).unwrap();
    println!(
        "[{:?}] vae: loss {:.2} -> {:.2}, frag acc {:.3}",
        t0.elapsed(),
        vlogs[0].loss,
        vlogs.last().unwrap().loss,
        vlogs.last().unwrap().frag_accuracy
    );

    // Posterior statistics: collapse check.
    let mut mu_norm = 0.0f64;
    let mut sig_mean = 0.0f64;
    for (m, _) in test.iter().take(20) {
        let enc = vae.encode(m).unwrap();
        mu_norm += enc.dist.mu.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
        sig_mean += enc.dist.log_sigma.iter().map(|&x| (x as f64).exp()).sum::<f64>()
            / enc.dist.log_sigma.len() as f64;
    }
    println!("posterior: |mu| {:.3}, mean sigma {:.3}", mu_norm / 20.0, sig_mean / 20.0);

    // Reconstruction similarity: decode from an input's own latent.
    let mut rng = Rng::stream(cfg.seed, "probe-recon");
    let mut sims = Vec::new();
    for (m, _) in test.iter().take(30) {
        let enc = vae.encode(m).unwrap();
        let z = sample_latent(&enc.dist, &mut rng);
        if let DecodeOutcome::Molecule(dm) = vae.decode(&z, &vocab, cfg.beam, 1.0, &mut rng).unwrap() {
            sims.push(1.0 - cfx::fp::distance(m, &dm.mol, &cfg.fp()).unwrap());
        }
    }
    sims.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if !sims.is_empty() {
        println!(
            "reconstruction similarity: median {:.3}, max {:.3} (n={})",
            sims[sims.len() / 2],
            sims[sims.len() - 1],
            sims.len()
        );
    }

    // Decode validity from encode neighborhoods.
    let mut rng = Rng::stream(cfg.seed, "probe-decode");
    let mut ok = 0;
    let mut cf = 0;
    let n_probe = 100;
    for i in 0..n_probe {
        let (m, _) = &test[i % test.len()];
        let enc = vae.encode(m).unwrap();
        let z = sample_latent(&enc.dist, &mut rng);
        if let DecodeOutcome::Molecule(dm) = vae.decode(&z, &vocab, cfg.beam, 1.0, &mut rng).unwrap() {
            ok += 1;
            if gnn.predict_label(&dm.mol).unwrap() == 1 {
                cf += 1;
            }
        }
    }
    println!(
        "[{:?}] decode validity {}/{n_probe}, counterfactual {}/{n_probe}",
        t0.elapsed(),
        ok,
        cf
    );

    // Distance saturation probe.
    let inputs: Vec<Molecule> = test
        .iter()
        .filter(|(m, _)| gnn.predict_label(m).unwrap() == 0)
        .map(|(m, _)| m.clone())
        .collect();
    println!("explained inputs: {}", inputs.len());
    let fpcfg = cfg.fp();
    let mut dists = Vec::new();
    for a in &inputs {
        for (b, _) in train.iter().take(60) {
            dists.push(cfx::fp::distance(a, b, &fpcfg).unwrap());
        }
    }
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    println!(
        "input-vs-corpus distance quantiles: 10% {:.3} 50% {:.3} 90% {:.3}",
        dists[dists.len() / 10],
        dists[dists.len() / 2],
        dists[dists.len() * 9 / 10]
    );

    // Multi-seed comparison.
    let params = cfg.score_params();
    let train_inputs: Vec<Molecule> = train
        .iter()
        .filter(|(m, _)| gnn.predict_label(m).unwrap() == 0)
        .take(cfg.adapter_inputs_cap)
        .map(|(m, _)| m.clone())
        .collect();
    let mut cov_rlhex = vec![];
    let mut cov_sa = vec![];
    let mut cov_sample = vec![];
    let mut cov_noad = vec![];
    let mut cov_nopre: Vec<f32> = vec![];
    for seed in 0..5u64 {
        let ctx = RolloutCtx {
            gnn: &gnn,
            vae: &vae,
            vocab: &vocab,
            inputs: &train_inputs,
            params: &params,
            beam: cfg.beam,
            temperature: cfg.temperature,
        };
        let mut rng = Rng::stream(seed, "adapter-train");
        let (adapter, alogs) =
            train_adapter(&ctx, &cfg.adapter_cfg(), &cfg.adapter_train_cfg(), &mut rng).unwrap();
        let first = alogs[0].mean_reward;
        let best = alogs.iter().map(|l| l.mean_reward).fold(f32::NEG_INFINITY, f32::max);

        let opts = InferOptions {
            t_steps: cfg.t_infer,
            k: cfg.k,
            beam: cfg.beam,
            temperature: cfg.temperature,
            final_only: false,
            mode: cfg.selection(),
            params: params.clone(),
        };
        let mut rng = Rng::stream(seed, "infer");
        let (report, _) = infer(&inputs, &gnn, &vae, &adapter, &vocab, &opts, &mut rng, "x".into(), seed).unwrap();
        cov_rlhex.push(report.coverage);

        // no-adapter-training ablation
        let mut arng = Rng::stream(seed, "adapter-init");
        let fresh = cfx::adapter::AdapterModel::init_random(&cfg.adapter_cfg(), &mut arng);
        let mut rng = Rng::stream(seed, "infer-noad");
        let (rep_noad, _) = infer(&inputs, &gnn, &vae, &fresh, &vocab, &opts, &mut rng, "x".into(), seed).unwrap();
        cov_noad.push(rep_noad.coverage);

        let dopts = DecodeOpts { beam: cfg.beam, temperature: cfg.temperature };
        let mut rng = Rng::stream(seed, "baseline-sample");
        let pool = sample_baseline(&inputs, &vae, &gnn, &vocab, 1, cfg.t_infer, &dopts, &mut rng).unwrap();
        let rep = evaluate_pool(&pool, &inputs, &gnn, &params, cfg.k, cfg.selection(), "sample", "x".into(), seed).unwrap();
        cov_sample.push(rep.coverage);

        let mut rng = Rng::stream(seed, "baseline-sa");
        let pool = sa_baseline(&inputs, &vae, &gnn, &vocab, &params, cfg.t_infer, &dopts, &SaSchedule::default(), false, &mut rng).unwrap();
        let rep = evaluate_pool(&pool, &inputs, &gnn, &params, cfg.k, cfg.selection(), "sa", "x".into(), seed).unwrap();
        cov_sa.push(rep.coverage);

        // no-pretrain ablation: random-init generator, adapter trained on it.
        let mut vrng = Rng::stream(seed, "vae-init");
        let raw_vae = cfx::vae::VaeModel::init(&cfg.vae_cfg(), vocab.len(), &mut vrng);
        let nctx = RolloutCtx {
            gnn: &gnn, vae: &raw_vae, vocab: &vocab, inputs: &train_inputs, params: &params,
            beam: cfg.beam, temperature: cfg.temperature,
        };
        let mut rng = Rng::stream(seed, "adapter-train-nopre");
        let (nadapter, _) = train_adapter(&nctx, &cfg.adapter_cfg(), &cfg.adapter_train_cfg(), &mut rng).unwrap();
        let mut rng = Rng::stream(seed, "infer-nopre");
        let (rep_nopre, _) = infer(&inputs, &gnn, &raw_vae, &nadapter, &vocab, &opts, &mut rng, "x".into(), seed).unwrap();
        cov_nopre.push(rep_nopre.coverage);
        println!(
            "[{:?}] seed {seed}: reward {first:.2}->{best:.2}, rlhex {:.3} noad {:.3} nopre {:.3} sa {:.3} sample {:.3}",
            t0.elapsed(),
            cov_rlhex.last().unwrap(),
            cov_noad.last().unwrap(),
            cov_nopre.last().unwrap(),
            cov_sa.last().unwrap(),
            cov_sample.last().unwrap()
        );
    }
    // Pool composition at the last seed: unique CF candidates and ceiling.
    let analyze = |pool: &[Molecule], name: &str| {
        let mut seen = std::collections::HashSet::new();
        let mut cf: Vec<Molecule> = vec![];
        for m in pool {
            if !m.is_valid() || gnn.predict_label(m).unwrap() != 1 {
                continue;
            }
            let key = cfx::chem::canonical_key(m).unwrap();
            if seen.insert(key) {
                cf.push(m.clone());
            }
        }
        let ceiling = if cf.is_empty() {
            0.0
        } else {
            cfx::explain::coverage(&cf, &inputs, params.delta, &params.fp).unwrap()
        };
        let mut dmins = vec![];
        for c in &cf {
            let mut dmin = f32::INFINITY;
            for g in &inputs {
                dmin = dmin.min(cfx::fp::distance(c, g, &params.fp).unwrap());
            }
            dmins.push(dmin);
        }
        dmins.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let med_d = if dmins.is_empty() { f32::NAN } else { dmins[dmins.len() / 2] };
        println!(
            "pool {name}: raw {}, unique-cf {}, ceiling coverage {:.3}, median min-dist {:.3}",
            pool.len(),
            cf.len(),
            ceiling,
            med_d
        );
    };
    {
        let seed = 2u64;
        let ctx = RolloutCtx {
            gnn: &gnn, vae: &vae, vocab: &vocab, inputs: &train_inputs, params: &params,
            beam: cfg.beam, temperature: cfg.temperature,
        };
        let mut rng = Rng::stream(seed, "adapter-train");
        let (adapter, _) = train_adapter(&ctx, &cfg.adapter_cfg(), &cfg.adapter_train_cfg(), &mut rng).unwrap();
        // Trained shift magnitude + std.
        let enc = vae.encode(&inputs[0]).unwrap();
        let dist = adapter.policy_dist(&enc.h_g).unwrap();
        let mnorm = dist.mean.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
        let mstd = dist.std.iter().sum::<f32>() / dist.std.len() as f32;
        println!("trained shift |mean| {:.3}, mean std {:.3}", mnorm, mstd);
        let opts = InferOptions {
            t_steps: cfg.t_infer, k: cfg.k, beam: cfg.beam, temperature: cfg.temperature,
            final_only: false, mode: cfg.selection(), params: params.clone(),
        };
        let mut rng = Rng::stream(seed, "infer");
        let (_, rpool) = infer(&inputs, &gnn, &vae, &adapter, &vocab, &opts, &mut rng, "x".into(), seed).unwrap();
        let rmols: Vec<Molecule> = rpool.molecules().unwrap();
        analyze(&rmols, "rlhex");
        let dopts = DecodeOpts { beam: cfg.beam, temperature: cfg.temperature };
        let mut rng = Rng::stream(seed, "baseline-sa");
        let spool = sa_baseline(&inputs, &vae, &gnn, &vocab, &params, cfg.t_infer, &dopts, &SaSchedule::default(), false, &mut rng).unwrap();
        analyze(&spool, "sa");
        let mut rng = Rng::stream(seed, "baseline-sample");
        let mpool = sample_baseline(&inputs, &vae, &gnn, &vocab, 1, cfg.t_infer, &dopts, &mut rng).unwrap();
        analyze(&mpool, "sample");
        let mut arng = Rng::stream(seed, "adapter-init");
        let fresh = cfx::adapter::AdapterModel::init_random(&cfg.adapter_cfg(), &mut arng);
        let mut rng = Rng::stream(seed, "infer-noad");
        let (_, npool) = infer(&inputs, &gnn, &vae, &fresh, &vocab, &opts, &mut rng, "x".into(), seed).unwrap();
        analyze(&npool.molecules().unwrap(), "noad");
    }
    let med = |v: &mut Vec<f32>| {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v[v.len() / 2]
    };
    println!(
        "medians: rlhex {:.3} noad {:.3} nopre {:.3} sa {:.3} sample {:.3}",
        med(&mut cov_rlhex),
        med(&mut cov_noad),
        med(&mut cov_nopre),
        med(&mut cov_sa),
        med(&mut cov_sample)
    );
    println!("total {:?}", t0.elapsed());
}
