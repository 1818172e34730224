use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use embcap_core::baselines::rule_navigate;
use embcap_core::gridworld::NavSpace;
use embcap_core::metrics::cap::{cider_d, tokenize};
use embcap_core::oracle::{look_at_center, plan_trajectory};
use embcap_core::render::render;
use embcap_core::{generate_scene, CameraIntrinsics, Catalog, GridIndex};

fn bench_scenes(c: &mut Criterion) {
    let catalog = Catalog::builtin();
    let mut seed = 0u64;
    c.bench_function("generate_scene", |b| {
        b.iter(|| {
            seed += 1;
            generate_scene(black_box(seed), &catalog).unwrap()
        })
    });
    let scene = generate_scene(3, &catalog).unwrap();
    c.bench_function("navspace", |b| b.iter(|| NavSpace::new(black_box(&scene))));
}

fn bench_render(c: &mut Criterion) {
    let scene = generate_scene(3, &Catalog::builtin()).unwrap();
    let pose = look_at_center(GridIndex::new(2, 3, 5).unwrap(), scene.center, 0.0);
    for size in [64u32, 128] {
        let cam = CameraIntrinsics::new(size, size, 60f64.to_radians()).unwrap();
        c.bench_function(&format!("render_{size}"), |b| b.iter(|| render(&scene, black_box(&pose), &cam)));
    }
}

fn bench_planner(c: &mut Criterion) {
    let scene = generate_scene(3, &Catalog::builtin()).unwrap();
    let nav = NavSpace::new(&scene);
    let cells: Vec<GridIndex> = nav.navigable().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let pairs: Vec<(GridIndex, GridIndex)> = (0..64)
        .map(|_| {
            use rand::Rng;
            (cells[rng.gen_range(0..cells.len())], cells[rng.gen_range(0..cells.len())])
        })
        .collect();
    let mut k = 0;
    c.bench_function("plan_trajectory", |b| {
        b.iter(|| {
            k = (k + 1) % pairs.len();
            let (s, t) = pairs[k];
            plan_trajectory(&nav, black_box(s), black_box(t))
        })
    });
    let cam = CameraIntrinsics::new(64, 64, 60f64.to_radians()).unwrap();
    let start = look_at_center(cells[0], scene.center, 0.0);
    c.bench_function("rule_episode_64", |b| b.iter(|| rule_navigate(&scene, &nav, black_box(start), &cam, 12)));
}

fn bench_cider(c: &mut Criterion) {
    let words = ["a", "red", "chair", "is", "next", "to", "the", "wooden", "table", "on", "floor", "blue", "lamp"];
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut sentence = |n: usize| -> Vec<String> {
        use rand::Rng;
        (0..n).map(|_| words[rng.gen_range(0..words.len())].to_string()).collect()
    };
    let items: Vec<(Vec<String>, Vec<Vec<String>>)> =
        (0..200).map(|_| (sentence(12), (0..3).map(|_| sentence(14)).collect())).collect();
    c.bench_function("cider_d_200", |b| b.iter(|| cider_d(black_box(&items)).unwrap()));
    let text = "A red chair is next to the wooden table, and a blue lamp is on the floor.";
    c.bench_function("tokenize", |b| b.iter(|| tokenize(black_box(text))));
}

criterion_group!(benches, bench_scenes, bench_render, bench_planner, bench_cider);
criterion_main!(benches);
