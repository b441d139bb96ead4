use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vlg::features::synth::{SynthAttributes, SynthConfig, SynthGenerator};
use vlg::features::ObjectFeatures;

/// Nearest-centroid classifier: linear in the features, fit on the first
/// half of the rows and scored on the second.
fn probe(features: &[Vec<f64>], labels: &[usize], classes: usize) -> f64 {
    let half = features.len() / 2;
    let dim = features[0].len();
    let mut sums = vec![vec![0.0; dim]; classes];
    let mut counts = vec![0usize; classes];
    for (x, &y) in features[..half].iter().zip(labels) {
        sums[y].iter_mut().zip(x).for_each(|(s, v)| *s += v);
        counts[y] += 1;
    }
    let centroids: Vec<Option<Vec<f64>>> = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &n)| (n > 0).then(|| s.iter().map(|v| v / n as f64).collect()))
        .collect();
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>();
    let correct = features[half..]
        .iter()
        .zip(&labels[half..])
        .filter(|(x, &y)| {
            let best = centroids
                .iter()
                .enumerate()
                .filter_map(|(c, m)| m.as_ref().map(|m| (c, dist(x, m))))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(c, _)| c);
            best == Some(y)
        })
        .count();
    correct as f64 / (features.len() - half) as f64
}

fn view_features(o: &ObjectFeatures) -> Vec<f64> {
    let n = o.view_embeddings.len() as f64;
    let d = o.view_embeddings[0].len();
    (0..d)
        .map(|j| o.view_embeddings.iter().map(|v| f64::from(v[j])).sum::<f64>() / n)
        .collect()
}

fn factor_features(o: &ObjectFeatures) -> Vec<f64> {
    o.factors
        .factors()
        .iter()
        .flat_map(|f| f.x.iter().chain(&f.y).chain(&f.z).map(|&v| f64::from(v)))
        .collect()
}

fn objects(n: usize) -> (SynthConfig, Vec<(ObjectFeatures, SynthAttributes)>) {
    let config = SynthConfig {
        views: 4,
        d_view: 64,
        d_text: 16,
        ..SynthConfig::default()
    };
    let gen = SynthGenerator::new(config.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let out = (0..n)
        .map(|i| {
            let attrs = gen.random_attributes(&mut rng);
            gen.object(&format!("o{i}"), i as u64, attrs).unwrap()
        })
        .collect();
    (config, out)
}

#[test]
fn views_carry_colour_but_not_shape() {
    let (config, objs) = objects(400);
    let x: Vec<Vec<f64>> = objs.iter().map(|(o, _)| view_features(o)).collect();
    let colour: Vec<usize> = objs.iter().map(|(_, a)| a.color_id).collect();
    let shape: Vec<usize> = objs.iter().map(|(_, a)| a.shape_id).collect();
    let colour_acc = probe(&x, &colour, config.colors);
    let shape_acc = probe(&x, &shape, config.shapes);
    let chance = 1.0 / config.shapes as f64;
    assert!(colour_acc >= 0.9, "colour from views {colour_acc}");
    assert!(shape_acc <= chance + 0.1, "shape from views {shape_acc}");
}

#[test]
fn factors_carry_shape_but_not_colour() {
    let (config, objs) = objects(400);
    let x: Vec<Vec<f64>> = objs.iter().map(|(o, _)| factor_features(o)).collect();
    let colour: Vec<usize> = objs.iter().map(|(_, a)| a.color_id).collect();
    let shape: Vec<usize> = objs.iter().map(|(_, a)| a.shape_id).collect();
    let shape_acc = probe(&x, &shape, config.shapes);
    let colour_acc = probe(&x, &colour, config.colors);
    let chance = 1.0 / config.colors as f64;
    assert!(shape_acc >= 0.9, "shape from factors {shape_acc}");
    assert!(colour_acc <= chance + 0.1, "colour from factors {colour_acc}");
}
