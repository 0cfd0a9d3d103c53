use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use touchboard::apps::merge_line;
use touchboard::net::codec::{encode, Decoder, Message, StepBody};
use touchboard::touch::{classify, pointer_stream, synthesize, Direction};
use touchboard::wrappers::rescale;
use touchboard::{Engine, EngineConfig, FrameBuffer, Gesture, GestureConfig, Point, RawAction, TaskRegistry};

fn engine_step(c: &mut Criterion) {
    for id in ["catch_default", "slide_2048_default"] {
        let mut e = Engine::virtual_engine(EngineConfig {
            max_steps_per_second: Some(10.0),
            ..Default::default()
        })
        .unwrap();
        e.load_task(TaskRegistry::shipped().get(id).unwrap().clone()).unwrap();
        e.reset().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        c.bench_function(&format!("engine_step/{id}"), |b| {
            b.iter(|| black_box(e.step(&[RawAction::touch(rng.gen(), rng.gen())]).unwrap()))
        });
    }
}

fn gestures(c: &mut Criterion) {
    let cfg = GestureConfig::default();
    let swipe = Gesture::Swipe {
        direction: Direction::Right,
        start: Point::new(0.2, 0.5),
        end: Point::new(0.8, 0.5),
    };
    let stream = pointer_stream(&synthesize(&swipe, &cfg, 16_667).unwrap());
    c.bench_function("classify/swipe", |b| b.iter(|| black_box(classify(black_box(&stream), &cfg).unwrap())));
}

fn merge(c: &mut Criterion) {
    c.bench_function("merge_line/all_6561", |b| {
        b.iter(|| {
            for n in 0..6561u32 {
                let line: [u8; 4] = std::array::from_fn(|k| (n / 9u32.pow(k as u32) % 9) as u8);
                black_box(merge_line(line));
            }
        })
    });
}

fn rescaling(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let data: Vec<u8> = (0..240 * 360 * 3).map(|_| rng.gen()).collect();
    let frame = FrameBuffer::from_raw(240, 360, data).unwrap();
    c.bench_function("rescale/240x360_to_80x120", |b| b.iter(|| black_box(rescale(&frame, 80, 120))));
}

fn codec(c: &mut Criterion) {
    let step = Message::Step(StepBody {
        actions: vec![RawAction::touch(0.25, 0.75)],
    });
    let bytes = encode(&step);
    c.bench_function("codec/encode_step", |b| b.iter(|| black_box(encode(black_box(&step)))));
    c.bench_function("codec/decode_step", |b| {
        b.iter(|| {
            let mut d = Decoder::new();
            d.feed(black_box(&bytes));
            black_box(d.next_message().unwrap())
        })
    });
}

criterion_group!(benches, engine_step, gestures, merge, rescaling, codec);
criterion_main!(benches);
