// Temporary CMIP diagnostic. Deleted before ship.
use cmbench_core::metrics::{cmip, knn_marginal_sample, CmipConfig, TripletRow, TripletSet};
use cmbench_core::rng::{stream_rng, Purpose};
use rand::Rng;
use rand_distr::{Distribution, Normal};

fn dependent_rows(n: usize, seed: u64) -> TripletSet {
    // r_l = r_true + N(0, 0.5), r_tilde identically equal to r_l
    let mut rng = stream_rng(seed, Purpose::Test, 0);
    let noise = Normal::new(0.0, 0.5f64.sqrt()).unwrap();
    let rows = (0..n)
        .map(|i| {
            let r_true = rng.random_range(0..5) as f64;
            let r_l = r_true + noise.sample(&mut rng);
            TripletRow {
                query_id: i as u64,
                doc_id: 0,
                r_tilde: r_l,
                r_l,
                r_true,
            }
        })
        .collect();
    TripletSet::from_rows(rows)
}

fn independent_rows(n: usize, seed: u64) -> TripletSet {
    let mut rng = stream_rng(seed, Purpose::Test, 1);
    let noise = Normal::new(0.0, 0.1).unwrap();
    let rows = (0..n)
        .map(|i| {
            let r_true = rng.random_range(0..5) as f64;
            TripletRow {
                query_id: i as u64,
                doc_id: 0,
                r_tilde: r_true + noise.sample(&mut rng),
                r_l: r_true + noise.sample(&mut rng),
                r_true,
            }
        })
        .collect();
    TripletSet::from_rows(rows)
}

/// DCTR-like: rank determined by grade + noise; r_tilde = R(g)/rank.
fn dctr_like_rows(n_queries: usize, k: usize, seed: u64) -> TripletSet {
    let mut rng = stream_rng(seed, Purpose::Test, 2);
    let noise = Normal::new(0.0, 0.5f64.sqrt()).unwrap();
    let mut rows = Vec::new();
    for q in 0..n_queries {
        let grades: Vec<u8> = (0..k).map(|_| rng.random_range(0..5) as u8).collect();
        let scores: Vec<f64> = grades
            .iter()
            .map(|&g| g as f64 + noise.sample(&mut rng))
            .collect();
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
        for (rank0, &d) in order.iter().enumerate() {
            let rel = 0.1 + 0.9 * ((1u32 << grades[d]) as f64 - 1.0) / 15.0;
            rows.push(TripletRow {
                query_id: q as u64,
                doc_id: d as u32,
                r_tilde: rel / (rank0 + 1) as f64,
                r_l: (rank0 + 1) as f64,
                r_true: grades[d] as f64,
            });
        }
    }
    TripletSet::from_rows(rows)
}

fn binned_cmi(t: &TripletSet, bins: usize) -> f64 {
    let n = t.rows.len();
    let col = |f: fn(&TripletRow) -> f64| -> Vec<usize> {
        let vals: Vec<f64> = t.rows.iter().map(f).collect();
        let mut sorted = vals.clone();
        sorted.sort_by(f64::total_cmp);
        vals.iter()
            .map(|v| {
                let r = sorted.partition_point(|s| s < v);
                (r * bins / n).min(bins - 1)
            })
            .collect()
    };
    let x = col(|r| r.r_tilde);
    let y = col(|r| r.r_l);
    let z: Vec<usize> = t.rows.iter().map(|r| r.r_true as usize).collect();
    let zmax = z.iter().max().unwrap() + 1;

    let mut pxyz = vec![0.0; bins * bins * zmax];
    let mut pxz = vec![0.0; bins * zmax];
    let mut pyz = vec![0.0; bins * zmax];
    let mut pz = vec![0.0; zmax];
    for i in 0..n {
        pxyz[(x[i] * bins + y[i]) * zmax + z[i]] += 1.0;
        pxz[x[i] * zmax + z[i]] += 1.0;
        pyz[y[i] * zmax + z[i]] += 1.0;
        pz[z[i]] += 1.0;
    }
    let nf = n as f64;
    let mut mi = 0.0;
    for xi in 0..bins {
        for yi in 0..bins {
            for zi in 0..zmax {
                let pj = pxyz[(xi * bins + yi) * zmax + zi] / nf;
                if pj > 0.0 {
                    let a = pxz[xi * zmax + zi] / nf;
                    let b = pyz[yi * zmax + zi] / nf;
                    let c = pz[zi] / nf;
                    mi += pj * (pj * c / (a * b)).ln();
                }
            }
        }
    }
    mi
}

#[test]
#[ignore]
fn probe() {
    for (name, t) in [
        ("independent 10k", independent_rows(10_000, 1)),
        ("dependent 10k", dependent_rows(10_000, 2)),
        ("dctr-like 500x10", dctr_like_rows(500, 10, 3)),
    ] {
        let est = cmip(&t, &CmipConfig::default()).unwrap();
        println!(
            "{name}: cmip mean {:.4} std {:.4} reps {:?} | binned CMI {:.4}",
            est.mean,
            est.std,
            est.per_rep
                .iter()
                .map(|v| (v * 1000.0).round() / 1000.0)
                .collect::<Vec<_>>(),
            binned_cmi(&t, 8),
        );
        // classifier sanity: accuracy on the p/q task with the default net
        let mut rng = stream_rng(9, Purpose::Test, 3);
        let (p, q) = knn_marginal_sample(&t, &mut rng).unwrap();
        let mut xs: Vec<Vec<f64>> = Vec::new();
        let mut ys = Vec::new();
        for r in p.standardized() {
            xs.push(r.to_vec());
            ys.push(1.0);
        }
        for r in q.standardized() {
            xs.push(r.to_vec());
            ys.push(0.0);
        }
        let mut clf = cmbench_core::metrics::MlpClassifier::new(3, &[32, 32], &mut rng);
        clf.train(&xs, &ys, 0.01, 200, 256, &mut rng).unwrap();
        let acc = xs
            .iter()
            .zip(ys.iter())
            .filter(|(x, &y)| (clf.predict(x) > 0.5) == (y == 1.0))
            .count() as f64
            / xs.len() as f64;
        println!("  train-set classifier accuracy: {acc:.4}");
    }
}
