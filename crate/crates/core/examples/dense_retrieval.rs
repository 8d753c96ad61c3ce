// Builds an index from precomputed vectors, saves and reloads it, and
// checks exact top-K against a full sort.
//
// `cargo run --example dense_retrieval`

use std::error::Error;

use evlink::retrieval::{dot_f32, retrieve, DenseIndex};
use evlink::vecfile::VectorCache;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn run_example() -> Result<bool, Box<dyn Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let dim = 16;
    let mut cache = VectorCache::new(dim);
    for id in 0..500u64 {
        // coarse values so some scores tie exactly
        let v: Vec<f32> = (0..dim).map(|_| rng.random_range(-2i8..=2) as f32).collect();
        cache.push(id * 3 + 1, &v)?;
    }
    let index = DenseIndex::from_cache(cache, "random")?;

    let dir = std::env::temp_dir().join(format!("evlink-dense-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("titles.evc");
    index.save(&path)?;
    let loaded = DenseIndex::load(&path)?;
    let same = loaded.matrix().to_bytes() == index.matrix().to_bytes() && loaded.ids() == index.ids();
    println!("reloaded {} rows of dim {}: bit-exact {same}", loaded.len(), loaded.dim());
    std::fs::remove_dir_all(&dir)?;

    let query: Vec<f32> = (0..dim).map(|_| rng.random_range(-2i8..=2) as f32).collect();
    let top = retrieve(&loaded, &query, 8)?;
    let mut all: Vec<(f64, u64)> = loaded.matrix().rows().map(|(id, v)| (dot_f32(v, &query), id)).collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let exact = top.iter().zip(&all).all(|(c, &(s, id))| c.id == id && c.score == s);
    for c in &top {
        println!("{:>5}  {:.1}", c.id, c.score);
    }
    println!("matches full sort: {exact}");
    Ok(same && exact)
}

fn main() -> Result<(), Box<dyn Error>> {
    run_example().map(|_| ())
}
