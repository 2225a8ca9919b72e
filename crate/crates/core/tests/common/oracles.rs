//! Library routines against straightforward re-implementations.

use colorsail::alpha::{evaluate_rig, AlphaMasks, RigFit, RigLoss};
use colorsail::raster::Raster;
use colorsail::rig::{build_mapping, remap_subdivision, SailRig, UNMAPPED};
use colorsail::sail::{decode, enumerate_grid, ColorSail, Rgb};
use colorsail::{reconstruct, tv_penalty};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const SIDE: usize = 16;

fn palette(sail: &ColorSail) -> Vec<Rgb> {
    decode(sail, true, true).colors
}

fn brute_nearest(c: Rgb, pal: &[Rgb]) -> usize {
    let d = |p: &Rgb| (c[0] - p[0]) * (c[0] - p[0]) + (c[1] - p[1]) * (c[1] - p[1]) + (c[2] - p[2]) * (c[2] - p[2]);
    let mut best = 0;
    for k in 1..pal.len() {
        if d(&pal[k]) < d(&pal[best]) {
            best = k;
        }
    }
    best
}

fn random_image(rng: &mut ChaCha8Rng) -> Raster {
    Raster::from_fn(SIDE, SIDE, |_, _| super::random_color(rng))
}

fn random_masks(rng: &mut ChaCha8Rng, count: usize) -> AlphaMasks {
    let mut values = Vec::with_capacity(SIDE * SIDE * count);
    for _ in 0..SIDE * SIDE {
        let raw: Vec<f64> = (0..count).map(|_| rng.random::<f64>() + 0.01).collect();
        let total: f64 = raw.iter().sum();
        values.extend(raw.iter().map(|r| r / total));
    }
    AlphaMasks::new(SIDE, SIDE, count, values).unwrap()
}

/// Masks with values in multiples of 1/16, so every sum of differences is
/// exact in any order.
fn dyadic_masks(rng: &mut ChaCha8Rng, count: usize) -> AlphaMasks {
    let mut values = Vec::with_capacity(SIDE * SIDE * count);
    for _ in 0..SIDE * SIDE {
        let mut left = 16u32;
        for i in 0..count {
            let take = if i + 1 == count { left } else { rng.random_range(0..=left) };
            left -= take;
            values.push(f64::from(take) / 16.0);
        }
    }
    AlphaMasks::new(SIDE, SIDE, count, values).unwrap()
}

fn random_sails(rng: &mut ChaCha8Rng, count: usize) -> Vec<ColorSail> {
    (0..count)
        .map(|_| {
            let s = rng.random_range(2..=7);
            super::random_sail(rng, s)
        })
        .collect()
}

pub fn reconstruct_matches_brute_force() {
    let mut rng = super::rng(21);
    for count in 1..=4 {
        for _ in 0..5 {
            let image = random_image(&mut rng);
            let masks = random_masks(&mut rng, count);
            let sails = random_sails(&mut rng, count);
            let fast = reconstruct(&image, &masks, &sails).unwrap();
            let pals: Vec<Vec<Rgb>> = sails.iter().map(palette).collect();
            for p in 0..SIDE * SIDE {
                let y = image.pixels()[p];
                let mut expect = [0.0; 3];
                for i in 0..count {
                    let near = pals[i][brute_nearest(y, &pals[i])];
                    for ch in 0..3 {
                        expect[ch] += masks.get(p, i) * near[ch];
                    }
                }
                assert_eq!(fast.pixels()[p], expect, "pixel {p}");
            }
        }
    }
}

pub fn tv_penalty_matches_brute_force() {
    let mut rng = super::rng(22);
    for count in 1..=4 {
        for _ in 0..5 {
            let masks = dyadic_masks(&mut rng, count);
            let mut sum = 0.0;
            for i in 0..count {
                let plane = masks.plane(i);
                let at = |x: usize, y: usize| plane[y * SIDE + x];
                for y in 0..SIDE {
                    for x in 0..SIDE - 1 {
                        sum += (at(x + 1, y) - at(x, y)).abs();
                    }
                }
                for y in 0..SIDE - 1 {
                    for x in 0..SIDE {
                        sum += (at(x, y + 1) - at(x, y)).abs();
                    }
                }
            }
            let expect = sum / (SIDE * SIDE * count) as f64;
            assert_eq!(tv_penalty(&masks), expect);
        }
    }
}

fn fit_from(image: &Raster, masks: AlphaMasks, sails: Vec<ColorSail>) -> RigFit {
    let reconstruction = reconstruct(image, &masks, &sails).unwrap();
    let loss: RigLoss = evaluate_rig(image, &masks, &sails, 1e-3).unwrap();
    RigFit { field: None, masks, sails, reconstruction, loss, epoch_objectives: vec![] }
}

fn quantize(c: f64) -> u8 {
    (c.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn build_mapping_matches_brute_force() {
    let mut rng = super::rng(23);
    for count in 1..=3 {
        for _ in 0..4 {
            let image = random_image(&mut rng);
            let masks = random_masks(&mut rng, count);
            let sails = random_sails(&mut rng, count);
            let rig = build_mapping(&image, &fit_from(&image, masks.clone(), sails.clone()), "test").unwrap();
            let pals: Vec<Vec<Rgb>> = sails.iter().map(palette).collect();
            let mut expect_recon = Vec::new();
            for p in 0..SIDE * SIDE {
                let y = image.pixels()[p];
                let mut c = [0.0; 3];
                for i in 0..count {
                    let layer = &rig.layers()[i];
                    let alpha = quantize(masks.get(p, i));
                    let index = brute_nearest(y, &pals[i]);
                    assert_eq!(layer.alpha[p], alpha);
                    assert_eq!(layer.indices[p] as usize, index);
                    for ch in 0..3 {
                        c[ch] += f64::from(alpha) / 255.0 * pals[i][index][ch];
                    }
                }
                expect_recon.extend(c.map(quantize));
            }
            assert_eq!(rig.stored_reconstruction().unwrap(), &expect_recon[..]);
            assert_eq!(rig.sails(), sails);
        }
    }
}

pub fn remap_subdivision_matches_brute_force() {
    let mut rng = super::rng(24);
    for _ in 0..10 {
        let image = random_image(&mut rng);
        let masks = random_masks(&mut rng, 2);
        let sails = random_sails(&mut rng, 2);
        let mut rig = build_mapping(&image, &fit_from(&image, masks, sails), "test").unwrap();
        let from = rig.layers()[1].sail.subdivision();
        let to = rng.random_range(2..=9);
        // mark a few pixels unmapped to check that the sentinel survives
        let mut layers = rig.layers().to_vec();
        layers[1].indices[0] = UNMAPPED;
        layers[1].indices[17] = UNMAPPED;
        rig = SailRig::from_layers(SIDE, SIDE, layers, Some(&image), "test").unwrap();

        let remapped = remap_subdivision(&rig, 1, to).unwrap();
        let old = enumerate_grid(from, true).unwrap();
        let new = enumerate_grid(to, true).unwrap();
        let snap = |k: usize| {
            let d = |n: &[f64; 3]| (0..3).map(|c| (old[k].bary[c] - n[c]).powi(2)).sum::<f64>();
            let mut best = 0;
            for j in 1..new.len() {
                if d(&new[j].bary) < d(&new[best].bary) {
                    best = j;
                }
            }
            best as u16
        };
        assert_eq!(remapped.layers()[0], rig.layers()[0]);
        assert_eq!(remapped.layers()[1].sail.subdivision(), to);
        assert_eq!(remapped.layers()[1].alpha, rig.layers()[1].alpha);
        for (a, b) in rig.layers()[1].indices.iter().zip(&remapped.layers()[1].indices) {
            let expect = if *a == UNMAPPED { UNMAPPED } else { snap(*a as usize) };
            assert_eq!(*b, expect);
        }
    }
}

pub fn remap_to_the_same_subdivision_is_identity() {
    let mut rng = super::rng(25);
    let image = random_image(&mut rng);
    let masks = random_masks(&mut rng, 1);
    let sails = random_sails(&mut rng, 1);
    let rig = build_mapping(&image, &fit_from(&image, masks, sails.clone()), "test").unwrap();
    let same = remap_subdivision(&rig, 0, sails[0].subdivision()).unwrap();
    assert_eq!(same.layers(), rig.layers());
}
