use std::time::Instant;

use cfx::chem::Molecule;
use cfx::config::RunConfig;
use cfx::explain::score_candidate;
use cfx::toydata;
use cfx::vae::{sample_latent, train_vae, DecodeOutcome};
use cfx::vocab::mine_vocab;
use cfx::Rng;

#[test]
#[ignore]
fn timing() {
    let mut cfg = RunConfig::default();
    for (k, v) in [
        ("elements", "C,N,O,S,F,Cl"),
        ("min-atom-count", "5"),
        ("enc-hidden", "32"),
        ("dec-hidden", "96"),
        ("frag-embed", "32"),
        ("atom-hidden", "32"),
        ("atom-embed", "16"),
        ("edge-hidden", "32"),
        ("vocab-size", "30"),
        ("vae-epochs", "6"),
        ("vae-lr", "2e-3"),
    ] {
        cfg.set(k, v).unwrap();
    }
    let rows = toydata::generate(300, 12345);
    let corpus: Vec<Molecule> = rows.iter().map(|(m, _)| m.clone()).collect();
    let vocab = mine_vocab(&corpus, cfg.vocab_size).unwrap();
    let mut rng = Rng::from_seed(1);
    let (vae, _) = train_vae(&corpus, &vocab, &cfg.vae_cfg(), &cfg.vae_train_cfg(), &mut rng).unwrap();

    let t = Instant::now();
    for m in corpus.iter().take(200) {
        let _ = vae.encode(m).unwrap();
    }
    println!("encode: {:?} / call", t.elapsed() / 200);

    let enc = vae.encode(&corpus[0]).unwrap();
    let t = Instant::now();
    let mut sizes = vec![];
    let mut decoded = vec![];
    for _ in 0..100 {
        let z = sample_latent(&enc.dist, &mut rng);
        if let DecodeOutcome::Molecule(dm) = vae.decode(&z, &vocab, 10, 1.0, &mut rng).unwrap() {
            sizes.push(dm.mol.atom_count());
            decoded.push(dm.mol);
        }
    }
    println!(
        "decode beam10: {:?} / call, sizes max {:?} mean {:.1}",
        t.elapsed() / 100,
        sizes.iter().max(),
        sizes.iter().sum::<usize>() as f32 / sizes.len() as f32
    );

    let gnn = cfx::gnn::GnnModel::zeros(&cfg.gnn_cfg());
    let params = cfg.score_params();
    let inputs: Vec<Molecule> = corpus[..32].to_vec();
    let t = Instant::now();
    for m in decoded.iter().take(50) {
        let _ = score_candidate(m, &inputs, &gnn, &params).unwrap();
    }
    println!("score_candidate (32 inputs): {:?} / call", t.elapsed() / 50);
}
