use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

use mm_core::{ItemEdit, Offset, SceneKind, Story};

fn story(metaphorical: usize) -> Story {
    let mut story = Story::new("Bench").unwrap();
    for i in 0..metaphorical * 2 {
        let kind = if i % 2 == 0 { SceneKind::Metaphorical } else { SceneKind::Literal };
        story.add_scene(kind, i).unwrap();
    }
    story
}

fn layout(c: &mut Criterion) {
    let base = story(32);
    let order = base.metaphorical_order();
    let middle = order[order.len() / 2];

    c.bench_function("insert_scene_mid_story", |b| {
        b.iter_batched(
            || base.clone(),
            |mut s| s.add_scene(SceneKind::Metaphorical, 17).unwrap(),
            BatchSize::SmallInput,
        )
    });
    c.bench_function("move_item_within_neighbours", |b| {
        b.iter_batched(
            || base.clone(),
            |mut s| {
                let anchor = s.layout.items[&middle].anchor_x + 0.001;
                s.move_layout_item(middle, anchor, Offset { dx: 0.1, dy: 0.2 }).unwrap()
            },
            BatchSize::SmallInput,
        )
    });
    let edits: Vec<ItemEdit> = order
        .iter()
        .map(|id| ItemEdit { scene_id: *id, anchor_x: None, image_offset: None, scale: Some(1.5) })
        .collect();
    c.bench_function("batch_resize_all", |b| {
        b.iter_batched(
            || base.clone(),
            |mut s| s.edit_layout(black_box(&edits), None).unwrap(),
            BatchSize::SmallInput,
        )
    });
    c.bench_function("check_order", |b| b.iter(|| base.layout.check_order(black_box(&order)).unwrap()));
}

criterion_group!(benches, layout);
criterion_main!(benches);
