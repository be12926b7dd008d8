use cfx::fp;
use cfx::toydata;

#[test]
fn dist_stats() {
    let rows = toydata::generate(200, 12345);
    let cfg = fp::FpConfig::default();
    let mut dists = Vec::new();
    for i in 0..rows.len() {
        for j in (i + 1)..rows.len().min(i + 40) {
            dists.push(fp::distance(&rows[i].0, &rows[j].0, &cfg).unwrap());
        }
    }
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q = |p: f64| dists[(dists.len() as f64 * p) as usize];
    println!(
        "pairwise distance quantiles: 5% {:.3} 10% {:.3} 25% {:.3} 50% {:.3} 75% {:.3} 90% {:.3}",
        q(0.05), q(0.10), q(0.25), q(0.50), q(0.75), q(0.90)
    );
    let below = dists.iter().filter(|&&d| d <= 0.87).count() as f64 / dists.len() as f64;
    println!("fraction of pairs within delta=0.87: {below:.3}");
    let sizes: Vec<usize> = rows.iter().map(|(m, _)| m.atom_count()).collect();
    println!("sizes min {} max {}", sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
}
